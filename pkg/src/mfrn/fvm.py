"""Conservative finite-volume transport solver on a uniform 1-d grid.

Third-order compact central WENO reconstruction (three-cell stencil), local
Lax-Friedrichs interface flux, and the three-stage strong-stability-preserving
Runge-Kutta time stepper.  Boundary handling is zero-inflow: ghost cell
averages are zero, so compactly supported densities see no boundary effect and
anything advected across the boundary leaves the domain.

The step size is fixed by the caller's time grid.  Each step measures the
largest interface speed: exceeding the configured CFL number is logged (the
scheme loses its nominal non-oscillatory guarantee but remains linearly
stable), while exceeding the hard stability margin raises, naming the speed.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import Activation, ControlPath, TimeGrid

log = logging.getLogger(__name__)

# Nonlinear weight parameters of the third-order central WENO reconstruction.
CWENO_EPS = 1e-6
CWENO_POWER = 2
# Ideal weights for (left linear, central parabola, right linear).
_D_LEFT, _D_CENTER, _D_RIGHT = 0.25, 0.5, 0.25

# Hard stability margin for the fixed-step integrator, in CFL units.  The
# three-stage Runge-Kutta stepper with third-order upwind-biased fluxes is
# linearly stable up to roughly 1.6; beyond _CFL_HARD the step refuses to run.
_CFL_HARD = 1.45

# 3-point Gauss-Legendre rule on [-1/2, 1/2] (nodes scaled by cell width).
_GAUSS_NODES = np.array([-np.sqrt(3.0 / 5.0) / 2.0, 0.0, np.sqrt(3.0 / 5.0) / 2.0])
_GAUSS_WEIGHTS = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])


# activation kinds already flagged as unbounded, to keep solver logs readable
_warned_unbounded: set[str] = set()


class CFLViolationError(RuntimeError):
    """Fixed time step exceeds the hard stability bound for the current speeds."""


@dataclass(frozen=True)
class Grid1D:
    a: float
    b: float
    n_cells: int

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise ValueError(f"need a < b, got [{self.a}, {self.b}]")
        if self.n_cells < 8:
            raise ValueError(f"n_cells must be >= 8, got {self.n_cells}")

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.a + (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def edges(self) -> np.ndarray:
        return self.a + np.arange(self.n_cells + 1) * self.dx


@dataclass(frozen=True)
class DensityField:
    """Cell averages of a scalar field at one instant.

    Forward solves carry probability densities (unit mass, near-nonnegative
    averages); adjoint solves reuse the same container for a signed field, so
    no sign or mass constraint is enforced here.
    """

    grid: Grid1D
    averages: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        avg = np.asarray(self.averages, dtype=float)
        object.__setattr__(self, "averages", avg)
        if avg.shape != (self.grid.n_cells,):
            raise ValueError(
                f"averages shape {avg.shape} does not match grid with {self.grid.n_cells} cells"
            )

    @property
    def mass(self) -> float:
        return float(self.grid.dx * np.sum(self.averages))


@dataclass(frozen=True)
class DriftSpec:
    """Advection speed act(w(t) x + b(t)), optionally time reversed.

    With time_reversed the speed is -act(w(T-t) x + b(T-t)): the sign flip and
    the control reversal together turn the solver into the one for the
    adjoint transport equation.
    """

    control: ControlPath
    activation: Activation
    time_reversed: bool = False

    def speed(self, x, t: float):
        if self.time_reversed:
            tau = self.control.grid.t_final - t
            w = float(self.control.eval_w(tau))
            b = float(self.control.eval_b(tau))
            return -self.activation.value(w * np.asarray(x, dtype=float) + b)
        w = float(self.control.eval_w(t))
        b = float(self.control.eval_b(t))
        return self.activation.value(w * np.asarray(x, dtype=float) + b)


def _cweno3_faces(a: np.ndarray, b: np.ndarray, c: np.ndarray, eps: float = CWENO_EPS):
    """Left and right face values of the CWENO3 reconstruction in the center
    cell of each stencil (a, b, c) of consecutive cell averages."""
    d_left = b - a
    d_right = c - b
    d2 = c - 2.0 * b + a

    is_left = d_left * d_left
    is_right = d_right * d_right
    is_center = (13.0 / 3.0) * d2 * d2 + 0.25 * (c - a) * (c - a)

    al = _D_LEFT / (eps + is_left) ** CWENO_POWER
    ac = _D_CENTER / (eps + is_center) ** CWENO_POWER
    ar = _D_RIGHT / (eps + is_right) ** CWENO_POWER
    s = al + ac + ar
    wl, wc, wr = al / s, ac / s, ar / s

    half_sum = 0.25 * (c - a)          # (c - a)/4, the parabola's odd face term
    pc_even = b + d2 / 6.0             # parabola face value without the odd term
    left = wl * (b - 0.5 * d_left) + wc * (pc_even - half_sum) + wr * (b - 0.5 * d_right)
    right = wl * (b + 0.5 * d_left) + wc * (pc_even + half_sum) + wr * (b + 0.5 * d_right)
    return left, right


def cweno3_reconstruct(averages, eps: float = CWENO_EPS) -> tuple[float, float]:
    """Face values (left, right) for one cell from its three-cell stencil.

    The solver itself passes eps = dx so that smooth extrema keep the ideal
    weights under refinement; the absolute default suits isolated stencils
    with no mesh attached.
    """
    arr = np.asarray(averages, dtype=float)
    if arr.shape != (3,):
        raise ValueError(f"expected the 3 stencil averages, got shape {arr.shape}")
    left, right = _cweno3_faces(arr[0:1], arr[1:2], arr[2:3], eps)
    return float(left[0]), float(right[0])


def llf_flux(u_minus, u_plus, speed):
    """Local Lax-Friedrichs flux for the linear-in-u flux speed * u."""
    u_minus = np.asarray(u_minus, dtype=float)
    u_plus = np.asarray(u_plus, dtype=float)
    speed = np.asarray(speed, dtype=float)
    return 0.5 * speed * (u_minus + u_plus) - 0.5 * np.abs(speed) * (u_plus - u_minus)


def semidiscrete_rhs(field: DensityField, drift: DriftSpec, t: float) -> np.ndarray:
    """d/dt of the cell averages under the conservative advection flux."""
    flux = _interface_fluxes(field.averages, field.grid, drift, t)
    return -(flux[1:] - flux[:-1]) / field.grid.dx


def _limited_faces(uc, uL, uR, sL, sR, lam):
    """Scale face values toward their cell average so every Euler substep
    keeps nonnegative averages: faces are floored at zero, and the outgoing
    mass lam * (outflow speeds . faces) is capped by the cell content.
    Scaling toward the average is conservative and leaves resolved smooth
    data untouched (theta stays 1 there)."""
    m = np.minimum(uL, uR)
    pos = uc > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t_floor = np.where(uc - m > 0.0, uc / (uc - m), 0.0)
    theta = np.where(m < 0.0, np.where(pos, np.minimum(1.0, t_floor), 0.0), 1.0)
    uL1 = uc + theta * (uL - uc)
    uR1 = uc + theta * (uR - uc)

    out_l = lam * np.maximum(-sL, 0.0)
    out_r = lam * np.maximum(sR, 0.0)
    drain = out_l * uL1 + out_r * uR1
    s_out = out_l + out_r
    # cap only where it is needed and a scaling can actually achieve it
    need = (drain > uc) & (uc >= 0.0) & (s_out < 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cap = (1.0 - s_out) * uc / (drain - s_out * uc)
    theta2 = np.clip(np.where(need, t_cap, 1.0), 0.0, 1.0)
    return uc + theta2 * (uL1 - uc), uc + theta2 * (uR1 - uc)


def _interface_fluxes(
    avg: np.ndarray,
    grid: Grid1D,
    drift: DriftSpec,
    t: float,
    positivity_dt: float | None = None,
) -> np.ndarray:
    n = grid.n_cells
    padded = np.concatenate([np.zeros(2), avg, np.zeros(2)])  # zero-inflow ghosts
    left_faces, right_faces = _cweno3_faces(
        padded[:-2], padded[1:-1], padded[2:], eps=grid.dx
    )
    speed = drift.speed(grid.edges, t)
    if positivity_dt is not None:
        # physical cell j owns faces index j + 1 and edge speeds j, j + 1
        lam = positivity_dt / grid.dx
        lf, rf = _limited_faces(
            avg, left_faces[1 : n + 1], right_faces[1 : n + 1],
            speed[:-1], speed[1:], lam,
        )
        left_faces = left_faces.copy()
        right_faces = right_faces.copy()
        left_faces[1 : n + 1] = lf
        right_faces[1 : n + 1] = rf
    # reconstruction k covers padded cell k+1; interface i has cell i-1 on its
    # left (faces index i) and cell i on its right (faces index i+1)
    u_minus = right_faces[0 : n + 1]
    u_plus = left_faces[1 : n + 2]
    return llf_flux(u_minus, u_plus, speed)


def _max_interface_speed(grid: Grid1D, drift: DriftSpec, times) -> float:
    edges = grid.edges
    return float(max(np.max(np.abs(drift.speed(edges, t))) for t in times))


def _ssp_rk3(u: np.ndarray, t: float, dt: float, rhs) -> np.ndarray:
    """Three-stage strong-stability-preserving Runge-Kutta combination."""
    u1 = u + dt * rhs(u, t)
    u2 = 0.75 * u + 0.25 * (u1 + dt * rhs(u1, t + dt))
    return (u + 2.0 * (u2 + dt * rhs(u2, t + 0.5 * dt))) / 3.0


def _advance(field: DensityField, drift: DriftSpec, dt: float, cfl: float,
             limit_positive: bool = False):
    """One SSP-RK3 step; returns (advanced field, step CFL number)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    t = field.time
    stage_times = (t, t + dt, t + 0.5 * dt)
    smax = _max_interface_speed(field.grid, drift, stage_times)
    nu = smax * dt / field.grid.dx
    if nu > _CFL_HARD:
        raise CFLViolationError(
            f"time step dt={dt:g} unstable: max interface speed {smax:.6g} gives "
            f"CFL number {nu:.4g} > hard bound {_CFL_HARD} (configured cfl={cfl:g})"
        )
    if nu > cfl:
        log.debug("step at t=%.6g exceeds configured cfl: %.4g > %.4g", t, nu, cfl)
    pos_dt = dt if limit_positive else None

    def rhs(u, tt):
        flux = _interface_fluxes(u, field.grid, drift, tt, positivity_dt=pos_dt)
        return -(flux[1:] - flux[:-1]) / field.grid.dx

    new = _ssp_rk3(field.averages, t, dt, rhs)
    return DensityField(field.grid, new, t + dt), nu


def ssprk3_step(field: DensityField, drift: DriftSpec, dt: float, cfl: float = 0.45,
                limit_positive: bool = False) -> DensityField:
    """Advance cell averages by one step of the SSP Runge-Kutta scheme."""
    new, _ = _advance(field, drift, dt, cfl, limit_positive)
    return new


def solve_transport(
    f0: DensityField,
    drift: DriftSpec,
    grid: TimeGrid,
    cfl: float = 0.45,
    check_density: bool = False,
    limit_positive: bool | None = None,
) -> list[DensityField]:
    """Snapshots of the field at every node of the time grid (n_steps + 1).

    check_density turns on the forward-solve diagnostics: mass drift beyond
    1e-10 or cell averages below -1e-8 are logged as warnings.  Adjoint solves
    leave it off; their field carries neither sign nor mass.

    limit_positive guards nonnegativity of the averages via face scaling; by
    default it is on exactly for non-reversed (density) solves, since the
    adjoint field is signed and must not be clipped.
    """
    if limit_positive is None:
        limit_positive = not drift.time_reversed
    if not drift.activation.bounded and drift.activation.kind not in _warned_unbounded:
        _warned_unbounded.add(drift.activation.kind)
        log.warning(
            "activation %r is unbounded; the mean-field limit assumes a bounded "
            "activation and compactly supported initial data",
            drift.activation.kind,
        )
    snapshots = [f0]
    field = f0
    worst_nu = 0.0
    for _ in range(grid.n_steps):
        field, nu = _advance(field, drift, grid.dt, cfl, limit_positive)
        worst_nu = max(worst_nu, nu)
        snapshots.append(field)
    # paths projected exactly onto the speed cap land at nu == cfl up to
    # roundoff; only a real excess is worth a warning
    if worst_nu > cfl * (1.0 + 1e-9):
        log.warning(
            "transport solve exceeded configured cfl=%.3g (worst step CFL number %.4g); "
            "still inside the hard stability margin %.3g",
            cfl, worst_nu, _CFL_HARD,
        )
    if check_density:
        drift_mass = abs(snapshots[-1].mass - f0.mass)
        if drift_mass > 1e-10:
            log.warning("forward solve mass drift %.3e exceeds 1e-10", drift_mass)
        worst_min = min(float(np.min(s.averages)) for s in snapshots)
        if worst_min < -1e-8:
            log.warning("forward solve produced cell average %.3e below -1e-8", worst_min)
    return snapshots


def project_initial(density, grid: Grid1D, renormalize: bool = True) -> DensityField:
    """Cell averages of a pointwise density by 3-point Gauss quadrature.

    With renormalize the averages are scaled to unit total mass, which is what
    forward solves start from; projection of signed data (adjoint initial
    condition) passes renormalize=False.
    """
    x = grid.centers[:, None] + _GAUSS_NODES[None, :] * grid.dx
    vals = np.asarray(density(x), dtype=float)
    if vals.shape != x.shape:
        vals = np.broadcast_to(vals, x.shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("density evaluated to a non-finite value during projection")
    avg = vals @ _GAUSS_WEIGHTS
    field = DensityField(grid, avg, 0.0)
    if renormalize:
        total = field.mass
        if total <= 0:
            raise ValueError(f"cannot normalize: projected mass is {total!r}")
        field = DensityField(grid, avg / total, 0.0)
    return field


def density_diagnostics(snapshots: list[DensityField]) -> dict:
    """Mass drift and worst cell average over a forward trajectory."""
    mass0 = snapshots[0].mass
    return {
        "mass_drift": max(abs(s.mass - mass0) for s in snapshots),
        "min_average": min(float(np.min(s.averages)) for s in snapshots),
    }
