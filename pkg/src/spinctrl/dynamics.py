"""Time grid, control/field containers, the field filter, and RK4 integrators.

Controls are piecewise constant on a uniform grid of `steps` intervals over
[0, t_final] and take values in a box ("prism") [m, M] per component, in uT.
The physical field v seen by the spins is either the control itself
(no-filter mode) or the response of a first-order low-pass filter

    dv/dt + gamma v = gamma u,    v(0) = v0,

integrated exactly interval by interval: with u = u_k constant on
[t_k, t_{k+1}],

    v(t_k + s) = u_k + (v(t_k) - u_k) * exp(-gamma s).

States evolve under i hbar dpsi/dt = H(v) psi and costates under
i hbar dchi/dt = H*(v) chi - i (k_S/2) P_S psi, chi(T) = 0.  Both are
integrated with classical RK4; within a step the field enters through its
value at the left node, the interval midpoint (used twice), and the right
node.  In no-filter mode all three stage values equal the interval's
control value, so the generator is constant per step.  The costate source
needs psi between stored nodes; the midpoint is approximated by the average
of the bracketing nodes, which keeps the overall scheme second-order
consistent with the quadratures used downstream.

Field samples are stored in uT everywhere in this module; they are scaled
by MT_PER_UT exactly once, where stage values are handed to the Zeeman
generators.  A runaway integration (any amplitude beyond OVERFLOW_LIMIT)
raises IntegrationOverflow instead of returning garbage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import MT_PER_UT, ModelAssembly, TripletBasis

OVERFLOW_LIMIT = 1.0e6


class IntegrationOverflow(RuntimeError):
    """State amplitude exceeded OVERFLOW_LIMIT during integration."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid: `steps` intervals on [0, t_final] (us)."""

    t_final: float
    steps: int

    def __post_init__(self):
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")

    @property
    def h(self):
        return self.t_final / self.steps

    @property
    def nodes(self):
        return np.linspace(0.0, self.t_final, self.steps + 1)


@dataclass(frozen=True)
class Prism:
    """Per-component control box [lower, upper], uT."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "lower", np.asarray(self.lower, dtype=float).reshape(3)
        )
        object.__setattr__(
            self, "upper", np.asarray(self.upper, dtype=float).reshape(3)
        )
        if np.any(self.lower > self.upper):
            raise ValueError("prism lower bound exceeds upper bound")

    @property
    def width(self):
        return self.upper - self.lower

    def contains(self, values, tol=0.0):
        values = np.asarray(values, dtype=float)
        return bool(
            np.all(values >= self.lower - tol)
            and np.all(values <= self.upper + tol)
        )

    def clip(self, values):
        return np.clip(np.asarray(values, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control: values[k] on interval k, uT."""

    values: np.ndarray  # (steps, 3)
    bounds: Prism

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != 3:
            raise ValueError(
                f"control values must have shape (steps, 3), got {values.shape}"
            )
        object.__setattr__(self, "values", values)
        if not self.bounds.contains(values, tol=1.0e-12):
            raise ValueError("control values leave the prism")

    @property
    def steps(self):
        return self.values.shape[0]

    def refine(self, factor):
        """Same control on a grid with `factor` sub-intervals per interval."""
        if factor < 1 or int(factor) != factor:
            raise ValueError("refinement factor must be a positive integer")
        return ControlSignal(
            values=np.repeat(self.values, int(factor), axis=0),
            bounds=self.bounds,
        )


def constant_control(vector, grid, bounds):
    """Control equal to `vector` (uT) on every interval."""
    vector = np.asarray(vector, dtype=float).reshape(3)
    return ControlSignal(
        values=np.tile(vector, (grid.steps, 1)), bounds=bounds
    )


@dataclass(frozen=True)
class FilterConfig:
    """First-order filter: rate gamma (us^-1), initial field v0 (uT).

    enabled=False selects the no-filter model v = u; gamma and v0 are
    then ignored by the dynamics.
    """

    gamma: float = 1.0
    v0: np.ndarray = field(default_factory=lambda: np.array([3.0, 3.0, 3.0]))
    enabled: bool = True

    def __post_init__(self):
        if self.enabled and self.gamma <= 0:
            raise ValueError("filter rate gamma must be positive")
        object.__setattr__(
            self, "v0", np.asarray(self.v0, dtype=float).reshape(3)
        )


@dataclass(frozen=True)
class FieldTrajectory:
    """Field samples (uT) on nodes and interval midpoints.

    piecewise_constant marks the no-filter case, where the field on an
    interval is a single value (stored in midpoint_values) and node samples
    follow the left-interval convention.
    """

    node_values: np.ndarray  # (steps + 1, 3)
    midpoint_values: np.ndarray  # (steps, 3)
    piecewise_constant: bool = False

    @property
    def steps(self):
        return self.midpoint_values.shape[0]

    def stage_values(self):
        """Per-interval (left, mid, right) field samples for RK4 stages."""
        if self.piecewise_constant:
            mid = self.midpoint_values
            return mid, mid, mid
        return (
            self.node_values[:-1],
            self.midpoint_values,
            self.node_values[1:],
        )


def filter_field(control: ControlSignal, cfg: FilterConfig, grid: TimeGrid):
    """Exact filter response of a piecewise-constant control.

    Uses the per-interval closed form, so node and midpoint samples carry
    no quadrature error.  With cfg.enabled False, returns the control
    itself as a piecewise-constant trajectory.
    """
    u = control.values
    if u.shape[0] != grid.steps:
        raise ValueError(
            f"control has {u.shape[0]} intervals, grid expects {grid.steps}"
        )
    if not cfg.enabled:
        nodes = np.vstack([u, u[-1:]])
        return FieldTrajectory(
            node_values=nodes,
            midpoint_values=u.copy(),
            piecewise_constant=True,
        )
    h = grid.h
    decay_full = np.exp(-cfg.gamma * h)
    decay_half = np.exp(-cfg.gamma * h / 2.0)
    nodes = np.empty((grid.steps + 1, 3))
    mids = np.empty((grid.steps, 3))
    v = cfg.v0.astype(float).copy()
    nodes[0] = v
    for k in range(grid.steps):
        offset = v - u[k]
        mids[k] = u[k] + offset * decay_half
        v = u[k] + offset * decay_full
        nodes[k + 1] = v
    return FieldTrajectory(
        node_values=nodes, midpoint_values=mids, piecewise_constant=False
    )


def _check_amplitude(values, t):
    peak = np.max(np.abs(values))
    if not np.isfinite(peak) or peak > OVERFLOW_LIMIT:
        raise IntegrationOverflow(
            f"state amplitude {peak:.3e} exceeded {OVERFLOW_LIMIT:.1e} at t={t:.6f} us"
        )


@dataclass(frozen=True)
class StateEnsemble:
    """Node snapshots of an ensemble: states[k, :, l] = psi^l(t_k)."""

    count: int
    states: np.ndarray  # (steps + 1, dim, count) complex

    @property
    def node_count(self):
        return self.states.shape[0]


def integrate_forward(
    assembly: ModelAssembly,
    fields: FieldTrajectory,
    basis: TripletBasis,
    grid: TimeGrid,
):
    """Propagate every triplet-born state through H(v(t)) with RK4."""
    left, mid, right = (s * MT_PER_UT for s in fields.stage_values())
    h = grid.h
    coef = -1.0j / assembly.constants.hbar
    drift = assembly.h_hfi - 1.0j * assembly.k_op
    zee = assembly.zeeman
    psi = basis.states.astype(complex).copy()
    out = np.empty((grid.steps + 1,) + psi.shape, dtype=complex)
    out[0] = psi
    for k in range(grid.steps):
        h_left = drift + np.tensordot(left[k], zee, axes=1)
        h_mid = drift + np.tensordot(mid[k], zee, axes=1)
        h_right = drift + np.tensordot(right[k], zee, axes=1)
        k1 = coef * (h_left @ psi)
        k2 = coef * (h_mid @ (psi + (0.5 * h) * k1))
        k3 = coef * (h_mid @ (psi + (0.5 * h) * k2))
        k4 = coef * (h_right @ (psi + h * k3))
        psi = psi + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        _check_amplitude(psi, (k + 1) * h)
        out[k + 1] = psi
    return StateEnsemble(count=basis.count, states=out)


def integrate_adjoint(
    assembly: ModelAssembly,
    fields: FieldTrajectory,
    forward: StateEnsemble,
    grid: TimeGrid,
):
    """Integrate the costate backward from chi(T) = 0 with RK4.

    The singlet source -(k_S / 2 hbar) P_S psi(t) is evaluated at stored
    nodes and, at stage midpoints, from the average of the bracketing
    forward snapshots.
    """
    if forward.states.shape[0] != grid.steps + 1:
        raise ValueError("forward trajectory does not match the grid")
    left, mid, right = (s * MT_PER_UT for s in fields.stage_values())
    h = grid.h
    hbar = assembly.constants.hbar
    coef = -1.0j / hbar
    src_coef = -assembly.constants.k_singlet / (2.0 * hbar)
    drift = assembly.h_hfi + 1.0j * assembly.k_op
    zee = assembly.zeeman
    p_s = assembly.projector_singlet
    chi = np.zeros_like(forward.states[0])
    out = np.empty_like(forward.states)
    out[-1] = chi
    for k in range(grid.steps - 1, -1, -1):
        h_left = drift + np.tensordot(left[k], zee, axes=1)
        h_mid = drift + np.tensordot(mid[k], zee, axes=1)
        h_right = drift + np.tensordot(right[k], zee, axes=1)
        psi_l = forward.states[k]
        psi_r = forward.states[k + 1]
        src_r = src_coef * (p_s @ psi_r)
        src_m = src_coef * (p_s @ (0.5 * (psi_l + psi_r)))
        src_l = src_coef * (p_s @ psi_l)
        k1 = coef * (h_right @ chi) + src_r
        k2 = coef * (h_mid @ (chi - (0.5 * h) * k1)) + src_m
        k3 = coef * (h_mid @ (chi - (0.5 * h) * k2)) + src_m
        k4 = coef * (h_left @ (chi - h * k3)) + src_l
        chi = chi - (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        _check_amplitude(chi, k * h)
        out[k] = chi
    return StateEnsemble(count=forward.count, states=out)
