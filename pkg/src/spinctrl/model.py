"""Radical-pair model assembly: Hamiltonian pieces and triplet-born states.

Solver units: hbar = 1, time in microseconds, magnetic fields in millitesla
at the Hamiltonian level.  The electron gyromagnetic factor

    GYRO = mu_B * g / hbar = 176.0859 rad us^-1 mT^-1

converts field components to angular frequency.  Control-facing layers store
fields in microtesla; MT_PER_UT is the single conversion constant between
the two, applied where field samples meet the Zeeman generators and (with
the same constant) in the control-gradient prefactor, never twice.

The evolution generator for a field v (mT) is

    H(v) = sum_i v_i * Z_i + H_hfi - i K,        Z_i = GYRO * (S1_i + S2_i)
    H_hfi = GYRO * sum_j sum_i A[j,i] * I_ji S1_i      (A in mT)
    K = (k_S P_S + k_T P_T) / 2                        (k in us^-1)

and the costate generator is its recombination-flipped partner
H*(v) = sum_i v_i Z_i + H_hfi + i K.  With k_S = k_T, K is the scalar
(k/2) I and every state norm obeys |psi(t)|^2 = e^{-k t} |psi(0)|^2.

Initial conditions are the 3 * 2**p triplet-born product states: T+ and T-
are the stretched electron configurations against each nuclear basis state,
and T0 is the symmetric electron combination (e_j + e_{j + 2**p}) / sqrt(2)
for j = 2**p + 1 .. 2**(p+1) (1-based); the symmetric sign is what makes
every member an eigenvector of P_T.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .spin import SpinSystem, build_spin_system

GYRO_DEFAULT = 176.0859  # rad us^-1 mT^-1, mu_B g / hbar for g = 2.0023
MT_PER_UT = 1.0e-3  # the one microtesla -> millitesla conversion site

# Default isotropic-per-axis hyperfine table (mT): rows 1..3 are distinct,
# every further nucleus reuses the fourth row.
HYPERFINE_ROWS = (
    (-0.234, -0.234, 0.117),
    (-0.030, -0.022, 0.688),
    (0.238, 0.357, 0.117),
)
HYPERFINE_TAIL = (-0.218, -0.202, -0.054)


@dataclass(frozen=True)
class PhysicalConstants:
    """Unit-bearing scalars of the model.

    gyro: rad us^-1 mT^-1; k_singlet, k_triplet: us^-1; hbar fixed to 1
    in solver units (kept explicit so every equation states it).
    """

    gyro: float = GYRO_DEFAULT
    k_singlet: float = 10.0
    k_triplet: float = 10.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.gyro <= 0:
            raise ValueError("gyro must be positive")
        if self.k_singlet < 0 or self.k_triplet < 0:
            raise ValueError("recombination rates must be non-negative")
        if self.hbar <= 0:
            raise ValueError("hbar must be positive")


def default_hyperfine(p):
    """Default p-row hyperfine table in mT."""
    rows = [HYPERFINE_ROWS[j] if j < 3 else HYPERFINE_TAIL for j in range(p)]
    return np.array(rows, dtype=float)


def load_hyperfine(path):
    """Read a hyperfine table (array of 3-element rows, mT) from JSON."""
    with open(path) as fh:
        data = json.load(fh)
    table = np.asarray(data, dtype=float)
    if table.ndim != 2 or table.shape[1] != 3:
        raise ValueError(
            f"hyperfine JSON must be an array of 3-element rows, got shape {table.shape}"
        )
    return table


def build_hfi(system: SpinSystem, table, gyro):
    """Hyperfine Hamiltonian GYRO * sum_{j,i} A[j,i] I_ji S1_i (rad/us)."""
    table = np.asarray(table, dtype=float)
    if table.shape != (system.p, 3):
        raise ValueError(
            f"hyperfine table shape {table.shape} does not match p={system.p}"
        )
    h = np.zeros((system.dim, system.dim), dtype=complex)
    for j in range(system.p):
        for i in range(3):
            h += table[j, i] * (system.nuclei[j][i] @ system.s1[i])
    return gyro * h


def build_recombination(system: SpinSystem, k_singlet, k_triplet):
    """Recombination operator K = (k_S P_S + k_T P_T) / 2 (us^-1)."""
    return 0.5 * (
        k_singlet * system.projector_singlet
        + k_triplet * system.projector_triplet
    )


@dataclass(frozen=True)
class ModelAssembly:
    """Precomputed Hamiltonian pieces for one radical-pair model.

    zeeman: stacked (3, n, n) generators Z_i = gyro * (S1_i + S2_i) so that
    H_Z(v) = v . zeeman for v in mT.  h_hfi and k_op as in the module
    docstring.  Arrays are shared, not copied; treat as immutable.
    """

    system: SpinSystem
    constants: PhysicalConstants
    hyperfine: np.ndarray
    zeeman: np.ndarray
    h_hfi: np.ndarray
    k_op: np.ndarray

    @property
    def p(self):
        return self.system.p

    @property
    def dim(self):
        return self.system.dim

    @property
    def projector_singlet(self):
        return self.system.projector_singlet

    @property
    def projector_triplet(self):
        return self.system.projector_triplet

    def hamiltonian_at(self, v_mt, adjoint=False):
        """Evolution generator at field v (3-vector, mT).

        adjoint=False gives H(v) = H_Z + H_hfi - iK driving the state;
        adjoint=True flips the recombination sign for the costate.
        """
        v_mt = np.asarray(v_mt, dtype=float)
        if v_mt.shape != (3,):
            raise ValueError(f"field must be a 3-vector, got shape {v_mt.shape}")
        h = np.tensordot(v_mt, self.zeeman, axes=1) + self.h_hfi
        if adjoint:
            return h + 1j * self.k_op
        return h - 1j * self.k_op


def build_model(p=1, constants=None, hyperfine=None, max_protons=None):
    """Assemble spin operators and Hamiltonian pieces for p protons."""
    constants = constants if constants is not None else PhysicalConstants()
    if max_protons is None:
        system = build_spin_system(p)
    else:
        system = build_spin_system(p, max_protons=max_protons)
    table = (
        default_hyperfine(p)
        if hyperfine is None
        else np.asarray(hyperfine, dtype=float)
    )
    zeeman = np.stack(
        [constants.gyro * (system.s1[i] + system.s2[i]) for i in range(3)]
    )
    return ModelAssembly(
        system=system,
        constants=constants,
        hyperfine=table,
        zeeman=zeeman,
        h_hfi=build_hfi(system, table, constants.gyro),
        k_op=build_recombination(
            system, constants.k_singlet, constants.k_triplet
        ),
    )


@dataclass(frozen=True)
class TripletBasis:
    """The 3 * 2**p triplet-born initial states, columns of `states`."""

    p: int
    count: int
    states: np.ndarray  # (dim, count) complex, orthonormal columns


def triplet_states(p):
    """Triplet-born basis: block order T0, T+, T- (see module docstring)."""
    dim = 2 ** (p + 2)
    q = 2 ** p
    count = 3 * q
    states = np.zeros((dim, count), dtype=complex)
    half = 1.0 / np.sqrt(2.0)
    for offset in range(q):
        # T0: symmetric combination of the two mixed electron configurations
        j = q + offset  # 0-based index of e_{2**p + 1 + offset}
        states[j, offset] = half
        states[j + q, offset] = half
        # T+: both electrons in the first configuration
        states[offset, q + offset] = 1.0
        # T-: both electrons in the second configuration
        states[3 * q + offset, 2 * q + offset] = 1.0
    return TripletBasis(p=p, count=count, states=states)
