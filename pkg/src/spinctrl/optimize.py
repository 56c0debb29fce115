"""Bang-bang control search: projected gradient ascent and the iterative
maximum-principle fixed-point method.

Both methods maximize the singlet yield over piecewise-constant controls
confined to the prism.  The projected-gradient method (GPM) climbs along
the exact adjoint gradient with a Barzilai-Borwein step

    lambda_N = |<du, dg>| / ||dg||^2,   du = u^N - u^{N-1}, dg likewise,

projects back onto the prism after every update, and stops when the
relative cost change and the relative control change both fall under their
tolerances.  (A variant using the unsquared denominator ||dg|| is kept
behind a switch for comparison; it is not a unit-consistent step and is
off by default.)

The iterative maximum-principle method (IPMP) replaces the line search by
the pointwise optimality condition: each sweep computes the switching
signal phi and synthesizes the next control

    u_i = M_i where phi_i > 0,   u_i = m_i where phi_i < 0,

keeping the previous value on exact zeros; phi is sampled at each
interval's left node.  A fixed point (synthesis returns its input) is an
exact PMP point.  The map can also fall into a short cycle (typically
period two at weak filtering), which is detected by comparing against the
recent iterate window; the best-cost cycle member is reported.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    ControlSignal,
    FieldTrajectory,
    FilterConfig,
    Prism,
    StateEnsemble,
    TimeGrid,
    filter_field,
    integrate_adjoint,
    integrate_forward,
)
from .model import ModelAssembly, TripletBasis
from .objective import SwitchingSignal, singlet_yield, switching_function

logger = logging.getLogger(__name__)

STATUS_CONVERGED = "Converged"
STATUS_MAX_ITERS = "MaxIters"
STATUS_OSCILLATING = "Oscillating"


def control_inner(a, b, h):
    """L2 inner product of interval-wise control arrays, weight h."""
    return float(h * np.sum(np.asarray(a) * np.asarray(b)))


def control_norm(a, h):
    return float(np.sqrt(control_inner(a, a, h)))


def project_to_prism(values, prism: Prism):
    """Componentwise clamp onto the prism."""
    return prism.clip(values)


def bb_step(u_prev, u_cur, g_prev, g_cur, h, fallback, unsquared_denominator=False):
    """Barzilai-Borwein step from successive controls and gradients.

    Falls back to `fallback` when the gradient change underflows.  The
    unsquared_denominator variant divides by ||dg|| instead of ||dg||^2.
    """
    du = np.asarray(u_cur) - np.asarray(u_prev)
    dg = np.asarray(g_cur) - np.asarray(g_prev)
    dg_norm_sq = control_inner(dg, dg, h)
    if dg_norm_sq < 1.0e-30:
        return fallback
    numerator = abs(control_inner(du, dg, h))
    if unsquared_denominator:
        return numerator / np.sqrt(dg_norm_sq)
    return numerator / dg_norm_sq


def synthesize_bang_bang(
    phi: SwitchingSignal, bounds: Prism, previous: ControlSignal
):
    """Sign rule applied at each interval's left node.

    Upper bound where phi > 0, lower where phi < 0, previous value on an
    exact zero.
    """
    phi_left = phi.values[:-1]
    shape = phi_left.shape
    values = np.where(
        phi_left > 0.0,
        np.broadcast_to(bounds.upper, shape),
        np.where(
            phi_left < 0.0,
            np.broadcast_to(bounds.lower, shape),
            previous.values,
        ),
    )
    return ControlSignal(values=values, bounds=bounds)


@dataclass(frozen=True)
class ControlProblem:
    """Everything fixed during one optimization run."""

    assembly: ModelAssembly
    basis: TripletBasis
    grid: TimeGrid
    prism: Prism
    filter_cfg: FilterConfig

    def field(self, control: ControlSignal):
        return filter_field(control, self.filter_cfg, self.grid)

    def evaluate(self, control: ControlSignal):
        """(field, forward ensemble, cost) for one control."""
        fields = self.field(control)
        forward = integrate_forward(self.assembly, fields, self.basis, self.grid)
        cost = singlet_yield(forward, self.assembly, self.grid)
        return fields, forward, cost

    def gradient(self, fields: FieldTrajectory, forward: StateEnsemble):
        """(adjoint ensemble, switching signal) for an evaluated control."""
        adjoint = integrate_adjoint(self.assembly, fields, forward, self.grid)
        phi = switching_function(
            forward, adjoint, self.assembly, self.filter_cfg, self.grid
        )
        return adjoint, phi


@dataclass(frozen=True)
class GpmSettings:
    """Projected-gradient settings; lambda0=None scales the first step to
    move the control by 10% of the narrowest prism width."""

    eps_cost: float = 1.0e-5
    eps_ctrl: float = 1.0e-5
    max_iters: int = 200
    lambda0: float | None = None
    step_scale: float = 1.0
    bb_unsquared_denominator: bool = False

    def __post_init__(self):
        if self.eps_cost <= 0 or self.eps_ctrl <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.step_scale <= 0:
            raise ValueError("step_scale must be positive")
        if self.lambda0 is not None and self.lambda0 <= 0:
            raise ValueError("lambda0 must be positive when given")


@dataclass(frozen=True)
class IpmpSettings:
    max_iters: int = 50
    cycle_window: int = 8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.cycle_window < 2:
            raise ValueError("cycle_window must be at least 2")


@dataclass(frozen=True)
class OptimizerReport:
    """Outcome of one optimization run.

    cost_history[n] = J(u^n); its length is iterations + 1.  cycle_members
    holds the distinct controls of a detected cycle (oscillating runs only).
    """

    status: str
    iterations: int
    cost_history: np.ndarray
    final_control: ControlSignal
    final_field: FieldTrajectory
    final_cost: float
    final_switching: SwitchingSignal | None = None
    cycle_members: tuple | None = None


def _first_step_size(settings: GpmSettings, prism: Prism, gradient):
    if settings.lambda0 is not None:
        return settings.lambda0
    widths = prism.width[prism.width > 0]
    peak = np.max(np.abs(gradient))
    if widths.size == 0 or peak == 0.0:
        return 1.0
    return 0.1 * float(np.min(widths)) / float(peak)


def gpm_optimize(
    problem: ControlProblem, u0: ControlSignal, settings: GpmSettings = None
):
    """Projected gradient ascent with Barzilai-Borwein steps."""
    settings = settings if settings is not None else GpmSettings()
    h = problem.grid.h
    tiny = 1.0e-300
    u = u0
    u_prev = g_prev = None
    cost_prev = None
    lambda_first = None
    cost_history = []
    for n in range(settings.max_iters + 1):
        fields, forward, cost = problem.evaluate(u)
        cost_history.append(cost)
        if n >= 1:
            rel_cost = abs(cost - cost_prev) / max(abs(cost), tiny)
            rel_ctrl = control_norm(u.values - u_prev.values, h) / max(
                control_norm(u.values, h), tiny
            )
            logger.info(
                "gpm iter %d cost=%.10f rel_dcost=%.3e rel_dctrl=%.3e",
                n, cost, rel_cost, rel_ctrl,
            )
            if rel_cost < settings.eps_cost and rel_ctrl < settings.eps_ctrl:
                _, phi = problem.gradient(fields, forward)
                return OptimizerReport(
                    status=STATUS_CONVERGED,
                    iterations=n,
                    cost_history=np.array(cost_history),
                    final_control=u,
                    final_field=fields,
                    final_cost=cost,
                    final_switching=phi,
                )
        else:
            logger.info("gpm iter 0 cost=%.10f", cost)
        if n == settings.max_iters:
            _, phi = problem.gradient(fields, forward)
            return OptimizerReport(
                status=STATUS_MAX_ITERS,
                iterations=n,
                cost_history=np.array(cost_history),
                final_control=u,
                final_field=fields,
                final_cost=cost,
                final_switching=phi,
            )
        _, phi = problem.gradient(fields, forward)
        # left-node sampling: the ascent then shares its fixed points with
        # the bang-bang synthesis rule, which reads phi at the same nodes
        grad = phi.values[:-1]
        if n == 0:
            lambda_first = _first_step_size(settings, problem.prism, grad)
            step = lambda_first
        else:
            step = settings.step_scale * bb_step(
                u_prev.values,
                u.values,
                g_prev,
                grad,
                h,
                fallback=lambda_first,
                unsquared_denominator=settings.bb_unsquared_denominator,
            )
        updated = project_to_prism(u.values + step * grad, problem.prism)
        u_prev, g_prev, cost_prev = u, grad, cost
        u = ControlSignal(values=updated, bounds=problem.prism)
    raise AssertionError("unreachable")


def ipmp_optimize(
    problem: ControlProblem, u0: ControlSignal, settings: IpmpSettings = None
):
    """Fixed-point iteration on the maximum-principle sign rule."""
    settings = settings if settings is not None else IpmpSettings()
    iterates = [u0]
    costs = []
    for n in range(settings.max_iters):
        fields, forward, cost = problem.evaluate(iterates[n])
        costs.append(cost)
        _, phi = problem.gradient(fields, forward)
        candidate = synthesize_bang_bang(phi, problem.prism, iterates[n])
        logger.info(
            "ipmp iter %d cost=%.10f changed=%d",
            n + 1, cost,
            int(not np.array_equal(candidate.values, iterates[n].values)),
        )
        if np.array_equal(candidate.values, iterates[n].values):
            costs.append(cost)
            return OptimizerReport(
                status=STATUS_CONVERGED,
                iterations=n + 1,
                cost_history=np.array(costs),
                final_control=iterates[n],
                final_field=fields,
                final_cost=cost,
                final_switching=phi,
            )
        cycle_start = None
        oldest = max(0, n + 1 - settings.cycle_window)
        for j in range(n - 1, oldest - 1, -1):
            if np.array_equal(candidate.values, iterates[j].values):
                cycle_start = j
                break
        if cycle_start is not None:
            costs.append(costs[cycle_start])
            members = tuple(iterates[cycle_start : n + 1])
            member_costs = costs[cycle_start : n + 1]
            best = int(np.argmax(member_costs))
            final = members[best]
            final_fields, final_forward, final_cost = problem.evaluate(final)
            _, final_phi = problem.gradient(final_fields, final_forward)
            logger.info(
                "ipmp cycle of period %d detected; keeping member with cost %.10f",
                len(members), final_cost,
            )
            return OptimizerReport(
                status=STATUS_OSCILLATING,
                iterations=n + 1,
                cost_history=np.array(costs),
                final_control=final,
                final_field=final_fields,
                final_cost=final_cost,
                final_switching=final_phi,
                cycle_members=members,
            )
        iterates.append(candidate)
    final = iterates[settings.max_iters]
    final_fields, final_forward, final_cost = problem.evaluate(final)
    costs.append(final_cost)
    _, final_phi = problem.gradient(final_fields, final_forward)
    return OptimizerReport(
        status=STATUS_MAX_ITERS,
        iterations=settings.max_iters,
        cost_history=np.array(costs),
        final_control=final,
        final_field=final_fields,
        final_cost=final_cost,
        final_switching=final_phi,
    )
