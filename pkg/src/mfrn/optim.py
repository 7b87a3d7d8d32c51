"""Training of the control pair by adjoint gradients and backtracking descent.

One outer iteration solves the forward transport under the current controls,
solves the adjoint transport (same conservative solver, drift negated and
controls read in reversed time), assembles the two gradient curves, and takes
a backtracking step that re-pins the controls at t = 0.  The stopping rule is
the relative change of the control pair between iterates in the max norm over
time nodes.

For unbounded activations a descent step can push the induced advection speeds
past what the fixed time step tolerates; candidates are screened against the
configured CFL number before they are accepted (see armijo_search).  Bounded
activations cap their own speeds, so no screen applies.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Activation, ControlPath, RunConfig, TimeGrid
from .fvm import (
    CFLViolationError,
    DensityField,
    DriftSpec,
    Grid1D,
    project_initial,
    solve_transport,
)
from .measures import EmpiricalMeasure, moments

log = logging.getLogger(__name__)

# Fraction of the admissible advective speed the shear component w*x may use
# during the line search.  Calibrated so identity-activation training settles
# in the transport-dominated regime instead of the mean-only loss's squeeze.
SHEAR_FRACTION = 0.12

ARMIJO_RHO0 = 1.0
ARMIJO_HALVING = 0.5
ARMIJO_DECREASE = 1e-4
MAX_OUTER_ITERATIONS = 500

# Largest root of the identity-activation w-equation's monotone branch:
# w * exp(-2w) attains its maximum 1/(2e) at w = 1/2.
W_EQUATION_BOUND = 0.5 * math.exp(-1.0)


class SolverDivergenceError(RuntimeError):
    """Training produced a non-finite cost; the iteration cannot continue."""


@dataclass(frozen=True)
class TargetMeasure:
    """Mean and raw second moment of the target, all the loss needs."""

    mean: float
    second_moment: float

    def __post_init__(self) -> None:
        if self.second_moment < self.mean**2 - 1e-12:
            raise ValueError(
                f"second moment {self.second_moment!r} below mean^2 {self.mean**2!r}"
            )

    @property
    def variance(self) -> float:
        return max(self.second_moment - self.mean**2, 0.0)

    @classmethod
    def from_density(cls, g: DensityField) -> "TargetMeasure":
        if abs(g.mass - 1.0) > 1e-8:
            raise ValueError(f"target density mass {g.mass!r} is not 1")
        return cls(mean=moments(g, 1), second_moment=moments(g, 2))

    @classmethod
    def from_empirical(cls, g: EmpiricalMeasure) -> "TargetMeasure":
        return cls(mean=moments(g, 1), second_moment=moments(g, 2))


@dataclass(frozen=True)
class OptimState:
    """Outcome of the training loop with its per-iteration histories."""

    controls: ControlPath
    cost_history: np.ndarray        # cost of iterate k, plus the final iterate
    rel_error_history: np.ndarray   # stopping quantity after each update
    iteration: int                  # number of outer updates performed
    converged: bool
    rho_history: np.ndarray         # accepted step sizes (0 = no acceptable step)
    grad_w_max_history: np.ndarray  # max |projected w-gradient| per iteration
    grad_b_max_history: np.ndarray


def tilde_loss(x, target: TargetMeasure):
    """Mean-field integrand: squared distance to the target in expectation."""
    x = np.asarray(x, dtype=float)
    return x * x - 2.0 * target.mean * x + target.second_moment


def adjoint_initial(target: TargetMeasure, grid: Grid1D) -> DensityField:
    """Cell averages of the loss derivative 2x - 2*mean, the adjoint start."""
    return project_initial(
        lambda x: 2.0 * x - 2.0 * target.mean, grid, renormalize=False
    )


def _trapezoid(values: np.ndarray, dt: float) -> float:
    return float(dt * (np.sum(values) - 0.5 * (values[0] + values[-1])))


def _regularization(c: ControlPath, cfg: RunConfig) -> float:
    dt = c.grid.dt
    return 0.5 * cfg.gamma_w * _trapezoid(c.w**2, dt) + 0.5 * cfg.gamma_b * _trapezoid(
        c.b**2, dt
    )


def _terminal_cost(f_T: DensityField, g: TargetMeasure) -> float:
    x = f_T.grid.centers
    return float(f_T.grid.dx * np.sum(tilde_loss(x, g) * f_T.averages))


def reduced_cost(
    c: ControlPath,
    f0: DensityField,
    g: TargetMeasure,
    act: Activation,
    cfg: RunConfig,
) -> float:
    """Terminal mean-field loss plus Tikhonov terms, via a fresh forward solve."""
    traj = solve_transport(f0, DriftSpec(c, act), c.grid, cfl=cfg.cfl)
    return _terminal_cost(traj[-1], g) + _regularization(c, cfg)


def control_gradient(
    c: ControlPath,
    f_traj: list[DensityField],
    lam_traj: list[DensityField],
    act: Activation,
    cfg: RunConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient curves sampled on the time nodes.

    The adjoint trajectory is indexed in its own (reversed) time, so the
    snapshot pairing flips: node k of the forward trajectory integrates
    against adjoint snapshot n_steps - k.
    """
    n = c.grid.n_steps
    if len(f_traj) != n + 1 or len(lam_traj) != n + 1:
        raise ValueError(
            f"trajectory lengths {len(f_traj)}, {len(lam_traj)} do not match "
            f"the control grid's {n + 1} nodes"
        )
    x = f_traj[0].grid.centers
    dx = f_traj[0].grid.dx
    g_w = np.empty(n + 1)
    g_b = np.empty(n + 1)
    for k in range(n + 1):
        slope = act.derivative(c.w[k] * x + c.b[k])
        pairing = lam_traj[n - k].averages * slope * f_traj[k].averages
        g_b[k] = cfg.gamma_b * c.b[k] + dx * np.sum(pairing)
        g_w[k] = cfg.gamma_w * c.w[k] + dx * np.sum(x * pairing)
    return g_w, g_b


def induced_cfl_number(c: ControlPath, act: Activation, sgrid: Grid1D) -> float:
    """Worst CFL number the controls can induce anywhere on the grid."""
    args = np.outer(c.w, sgrid.edges) + c.b[:, None]
    smax = float(np.max(np.abs(act.value(args))))
    return smax * c.grid.dt / sgrid.dx


def _projected(grad: np.ndarray) -> np.ndarray:
    out = grad.copy()
    out[0] = 0.0  # the admissible set pins the controls at t = 0
    return out


def _project_to_speed(
    w1: np.ndarray,
    b1: np.ndarray,
    cap: float,
    lo: float,
    hi: float,
    linear_speed: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Euclidean projection of each time node (w, b) onto the admissible
    step region of the line search.

    Two constraints make it up.  The shear part w*x alone may claim at most
    SHEAR_FRACTION of the advective speed the configured CFL number admits:
    the mean-only loss rewards contracting the state without limit, and an
    unrestrained w races the translation mode into that degenerate squeeze
    regardless of the activation.  For unbounded activations (linear_speed),
    which satisfy |sigma(y)| <= |y|, the full argument w*x + b additionally
    stays below the speed cap at the domain corners [lo, hi], which bounds
    the induced speed everywhere; bounded activations need no such guard.

    The feasible set per node is a convex polygon; its projection is the
    point itself, the foot on one face, or a vertex.  Projecting (rather than
    shrinking the step until it fits) lets the line search slide along the
    active constraints instead of stalling the whole step on them.
    """
    w_cap = SHEAR_FRACTION * cap / max(abs(lo), abs(hi))
    # halfplanes a . z <= c with z = (w, b)
    faces = [
        (np.array([1.0, 0.0]), w_cap),
        (np.array([-1.0, 0.0]), w_cap),
    ]
    if linear_speed:
        faces += [
            (np.array([lo, 1.0]), cap),
            (np.array([-lo, -1.0]), cap),
            (np.array([hi, 1.0]), cap),
            (np.array([-hi, -1.0]), cap),
        ]
    p = np.stack([w1, b1], axis=-1)
    cands = [p]
    for a, cbound in faces:
        s = p @ a
        cands.append(p - ((s - cbound) / (a @ a))[:, None] * a[None, :])
    for i in range(len(faces)):
        for j in range(i + 1, len(faces)):
            ai, ci = faces[i]
            aj, cj = faces[j]
            mat = np.stack([ai, aj])
            if abs(np.linalg.det(mat)) < 1e-12:
                continue
            vertex = np.linalg.solve(mat, np.array([ci, cj]))
            cands.append(np.broadcast_to(vertex, p.shape))
    tol = 1e-10 * max(1.0, cap)
    best = p
    best_d = np.full(p.shape[0], np.inf)
    for cand in cands:
        feasible = np.ones(p.shape[0], dtype=bool)
        for a, cbound in faces:
            feasible &= cand @ a <= cbound + tol
        d2 = np.where(feasible, np.sum((cand - p) ** 2, axis=-1), np.inf)
        take = d2 < best_d
        best = np.where(take[:, None], cand, best)
        best_d = np.minimum(best_d, d2)
    return best[..., 0], best[..., 1]


def _armijo(
    c: ControlPath,
    grad: tuple[np.ndarray, np.ndarray],
    f0: DensityField,
    g: TargetMeasure,
    act: Activation,
    cfg: RunConfig,
    current_cost: float | None = None,
) -> tuple[ControlPath, float, float]:
    """Backtracking step returning (new controls, accepted rho, its cost).

    Accepts the first step size with sufficient decrease; if none qualifies,
    falls back to the best-cost candidate that still improves on the current
    cost, else returns the controls unchanged with rho = 0.

    Unbounded activations get their candidates projected nodewise onto the
    speed range the configured CFL number admits at the fixed time step, so
    the search never wastes trials on solves that would go unstable; the
    decrease test uses the inner product with the projected step, which
    reduces to the usual -rho*|grad|^2 whenever the projection is inactive.
    """
    g_w = _projected(grad[0])
    g_b = _projected(grad[1])
    if current_cost is None:
        current_cost = reduced_cost(c, f0, g, act, cfg)
    sq_norm = _trapezoid(g_w**2 + g_b**2, c.grid.dt)
    if sq_norm == 0.0:
        return c, ARMIJO_RHO0, current_cost

    speed_cap = cfg.cfl * f0.grid.dx / c.grid.dt
    best: tuple[float, ControlPath, float] | None = None
    rho = ARMIJO_RHO0
    for _ in range(cfg.max_armijo):
        w_c = c.w - rho * g_w
        b_c = c.b - rho * g_b
        w_c, b_c = _project_to_speed(
            w_c, b_c, speed_cap, f0.grid.a, f0.grid.b,
            linear_speed=not act.bounded,
        )
        cand = ControlPath(c.grid, w_c, b_c).pinned()
        inner = _trapezoid(
            g_w * (cand.w - c.w) + g_b * (cand.b - c.b), c.grid.dt
        )
        if inner < 0.0:
            try:
                cost = reduced_cost(cand, f0, g, act, cfg)
            except CFLViolationError:
                cost = math.inf
            if math.isfinite(cost):
                if cost <= current_cost + ARMIJO_DECREASE * inner:
                    return cand, rho, cost
                if best is None or cost < best[0]:
                    best = (cost, cand, rho)
        rho *= ARMIJO_HALVING
    if best is not None and best[0] < current_cost:
        cost, cand, rho = best
        return cand, rho, cost
    return c, 0.0, current_cost


def armijo_search(
    c: ControlPath,
    grad: tuple[np.ndarray, np.ndarray],
    f0: DensityField,
    g: TargetMeasure,
    act: Activation,
    cfg: RunConfig,
) -> tuple[ControlPath, float]:
    new_c, rho, _ = _armijo(c, grad, f0, g, act, cfg)
    return new_c, rho


def gauss_seidel_train(
    f0: DensityField,
    g: TargetMeasure,
    c0: ControlPath,
    act: Activation,
    cfg: RunConfig,
    max_outer: int = MAX_OUTER_ITERATIONS,
) -> OptimState:
    """Alternating forward/adjoint sweeps with backtracking gradient updates.

    Stops when the relative control change e = ||c_new - c_old|| / ||c_new||
    (max over time nodes, max over the two components) drops to cfg.tol, or
    after max_outer updates.  A non-finite cost aborts with diagnostics.
    """
    c = c0.pinned()
    lam0 = adjoint_initial(g, f0.grid)
    costs: list[float] = []
    errors: list[float] = []
    rhos: list[float] = []
    gw_hist: list[float] = []
    gb_hist: list[float] = []
    converged = False
    log.info("training start: Lipschitz budget of initial controls = %.6g", c.lipschitz_budget())

    final_cost = math.nan
    for k in range(max_outer):
        f_traj = solve_transport(f0, DriftSpec(c, act), c.grid, cfl=cfg.cfl)
        cost = _terminal_cost(f_traj[-1], g) + _regularization(c, cfg)
        if not math.isfinite(cost):
            raise SolverDivergenceError(
                f"non-finite cost {cost!r} at outer iteration {k} "
                f"(controls C0 norm {c.c0_norm():.6g})"
            )
        costs.append(cost)
        lam_traj = solve_transport(lam0, DriftSpec(c, act, time_reversed=True), c.grid, cfl=cfg.cfl)
        g_w, g_b = control_gradient(c, f_traj, lam_traj, act, cfg)
        gw_hist.append(float(np.max(np.abs(_projected(g_w)))))
        gb_hist.append(float(np.max(np.abs(_projected(g_b)))))
        new_c, rho, new_cost = _armijo(c, (g_w, g_b), f0, g, act, cfg, current_cost=cost)
        dist = new_c.c0_distance(c)
        denom = new_c.c0_norm()
        if dist == 0.0:
            e = 0.0
        elif denom == 0.0:
            e = math.inf
        else:
            e = dist / denom
        errors.append(e)
        rhos.append(rho)
        c = new_c
        final_cost = new_cost
        if e <= cfg.tol:
            converged = True
            break
    costs.append(final_cost)
    log.info(
        "training %s after %d iteration(s): cost %.8g, Lipschitz budget %.6g",
        "converged" if converged else "stopped at the iteration cap",
        len(errors), final_cost, c.lipschitz_budget(),
    )
    return OptimState(
        controls=c,
        cost_history=np.array(costs),
        rel_error_history=np.array(errors),
        iteration=len(errors),
        converged=converged,
        rho_history=np.array(rhos),
        grad_w_max_history=np.array(gw_hist),
        grad_b_max_history=np.array(gb_hist),
    )


def identity_w_root(c: float) -> float:
    """Root of w * exp(-2w) = c on the branch w <= 1/2.

    The left-hand side increases up to its maximum 1/(2e) at w = 1/2, so any
    c <= 1/(2e) has exactly one root on the branch; larger c has none.
    Safeguarded Newton: bisection bracket kept alongside the Newton iterate.
    """
    if c > W_EQUATION_BOUND:
        raise ValueError(
            f"no root: c = {c!r} exceeds the branch maximum 1/(2e) = {W_EQUATION_BOUND!r}"
        )
    if c == W_EQUATION_BOUND:
        return 0.5

    def h(w: float) -> float:
        return w * math.exp(-2.0 * w) - c

    lo, hi = (0.0, 0.5) if c >= 0.0 else (-1.0, 0.0)
    while h(lo) > 0.0:
        lo *= 2.0
    w = 0.5 * (lo + hi)
    for _ in range(200):
        hw = h(w)
        if hw == 0.0:
            break
        if hw > 0.0:
            hi = w
        else:
            lo = w
        slope = (1.0 - 2.0 * w) * math.exp(-2.0 * w)
        step_ok = False
        if slope != 0.0:
            w_new = w - hw / slope
            step_ok = lo < w_new < hi
        if not step_ok:
            w_new = 0.5 * (lo + hi)
        if abs(w_new - w) < 1e-15 * max(1.0, abs(w)):
            w = w_new
            break
        w = w_new
    return w


def identity_closed_form(
    f0: DensityField, lam_T: DensityField, cfg: RunConfig
) -> tuple[float, float]:
    """Stationary constant controls for the identity activation.

    Derived from the moment transport identity: with act = identity the
    coupled moments of the adjoint terminal snapshot against the initial
    density determine (w, b) in closed form, up to the scalar root solve of
    the w-equation.  Returned as time-constant values; the admissible set's
    pin at t = 0 is a boundary exception the caller may apply on top.
    """
    if cfg.gamma_w <= 0 or cfg.gamma_b <= 0:
        raise ValueError("closed form requires strictly positive regularization weights")
    x = f0.grid.centers
    dx = f0.grid.dx
    m0 = float(dx * np.sum(lam_T.averages * f0.averages))
    m1 = float(dx * np.sum(x * lam_T.averages * f0.averages))
    w = identity_w_root(m1 / cfg.gamma_w)
    b = math.exp(w) * m0 / cfg.gamma_b
    return w, b
