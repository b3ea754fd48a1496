"""Coarse-graining of periodic fields by a compactly supported radial bump.

The mollifier at width delta is

    eta_delta(y) = C * exp(-1 / (1 - (|y|/delta)^2))   for |y| < delta,  else 0,

with C chosen so that the *grid* mass h^3 * sum_x eta_delta(x) equals 1
exactly.  Filtering acts in spectral space through the multiplier

    m(k) = h^3 * sum_x eta_delta(x) exp(-i k.x) = VOLUME * forward(eta_delta),

which is real (the sampled kernel is even under x -> -x mod 2pi), equals 1 at
k = 0 by construction, and satisfies |m(k)| <= 1 because eta >= 0.  Using the
grid-sampled kernel rather than the continuum one makes every discrete
identity below exact instead of "exact up to quadrature".

The filtered Reynolds stress is assembled in the dealiased spectral algebra,

    R_ij = filter(dealias(u_i u_j)) - ubar_i ubar_j,

so that the resolved-scale energy balance

    d/dt 1/2||ubar||^2 + nu ||grad ubar||^2 = <R, grad ubar>

holds to round-off for trajectories produced by the solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import (
    VOLUME,
    dealias,
    gradient,
    gradient_norm_sq,
    grid_inner_product,
    inner_product,
    laplacian,
    norm_sq,
    tensor_divergence,
)

MULTIPLIER_IMAG_TOL = 1e-12


class KernelError(ValueError):
    """The requested filter width cannot be represented on the grid."""


def wrapped_radius_sq(grid):
    """Squared distance to the nearest periodic image of the origin, shape (n, n, n)."""
    coords = grid.h * np.arange(grid.n)
    d = np.where(coords <= np.pi, coords, coords - 2.0 * np.pi)
    return (
        d[:, None, None] ** 2 + d[None, :, None] ** 2 + d[None, None, :] ** 2
    )


@dataclass(frozen=True)
class FilterKernel:
    """Grid-sampled mollifier of one width plus its spectral multiplier."""

    delta: float
    samples: np.ndarray = field(repr=False)  # (n, n, n), h^3 * sum == 1
    multiplier: np.ndarray = field(repr=False)  # (n, n, n//2+1), real
    norm_const: float  # the C above; shared with the pointwise-defect estimator
    min_multiplier: float

    def __call__(self, field_hat):
        """Apply the filter to a spectral field (any leading component axes)."""
        return self.multiplier * field_hat


def make_kernel(grid, delta):
    delta = float(delta)
    if delta > np.pi:
        raise KernelError(f"width {delta:.6g} exceeds pi; support does not embed in the box")
    if delta < 2.0 * grid.h - 1e-12:
        raise KernelError(f"width {delta:.6g} is below 2h = {2.0 * grid.h:.6g}; kernel unresolved")
    rho_sq = wrapped_radius_sq(grid) / delta**2
    inside = rho_sq < 1.0
    raw = np.zeros(grid.shape)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        raw[inside] = np.exp(-1.0 / (1.0 - rho_sq[inside]))
    mass = grid.h**3 * raw.sum()
    if mass <= 0.0:
        raise KernelError(f"width {delta:.6g} has no grid support")
    norm_const = 1.0 / mass
    samples = norm_const * raw
    mult_c = VOLUME * grid.forward(samples)
    imag_max = np.max(np.abs(mult_c.imag))
    if imag_max > MULTIPLIER_IMAG_TOL:
        raise KernelError(f"multiplier not real (max imag {imag_max:.3e})")
    mult = np.ascontiguousarray(mult_c.real)
    mult[0, 0, 0] = 1.0  # exact unit mass; the float value differs only by round-off
    if np.max(np.abs(mult)) > 1.0 + 1e-12:
        raise KernelError("multiplier magnitude exceeds 1")
    return FilterKernel(
        delta=delta,
        samples=samples,
        multiplier=mult,
        norm_const=norm_const,
        min_multiplier=float(mult.min()),
    )


def kernel_for(grid, delta):
    """make_kernel with per-grid caching (kernels are reused across snapshots)."""
    cache = getattr(grid, "_kernel_cache", None)
    if cache is None:
        cache = {}
        grid._kernel_cache = cache
    key = round(float(delta), 12)
    if key not in cache:
        cache[key] = make_kernel(grid, delta)
    return cache[key]


def width_schedule(grid, delta0, count):
    """Dyadic widths delta0 * 2^-j, j = 0..count-1, validated against the grid."""
    if count < 1:
        raise KernelError("schedule needs at least one width")
    widths = [float(delta0) * 2.0**-j for j in range(int(count))]
    for w in widths:
        if w > np.pi or w < 2.0 * grid.h - 1e-12:
            raise KernelError(
                f"schedule width {w:.6g} outside the representable band "
                f"[{2.0 * grid.h:.6g}, {np.pi:.6g}]"
            )
    return widths


def reynolds_stress_hat(grid, kernel, u_hat):
    """Spectral filtered Reynolds stress, shape (3, 3, n, n, n//2+1).

    R_ij = m * dealias((u_i u_j)^) - (ubar_i ubar_j)^ with ubar = m * u.
    """
    u = grid.inverse(dealias(grid, u_hat))
    prod = np.einsum("ixyz,jxyz->ijxyz", u, u)
    filtered = kernel.multiplier * dealias(grid, grid.forward(prod))
    ubar = grid.inverse(kernel.multiplier * u_hat)
    resolved = np.einsum("ixyz,jxyz->ijxyz", ubar, ubar)
    return filtered - grid.forward(resolved)


def reynolds_stress(grid, kernel, u_hat):
    """Real-space filtered Reynolds stress, shape (3, 3, n, n, n)."""
    return grid.inverse(reynolds_stress_hat(grid, kernel, u_hat))


def filtered_pressure_hat(grid, kernel, u_hat):
    """Zero-mean filtered pressure from -lap(pbar) = div div filter(u (x) u)."""
    u = grid.inverse(dealias(grid, u_hat))
    prod = np.einsum("ixyz,jxyz->ijxyz", u, u)
    t_hat = kernel.multiplier * dealias(grid, grid.forward(prod))
    kk = np.einsum("ixyz,jxyz,ijxyz->xyz", grid.k_vec, grid.k_vec, t_hat)
    return -kk * grid.inv_k_sq


@dataclass(frozen=True)
class FilteredState:
    """One snapshot seen at one filter width."""

    delta: float
    time: float
    ubar_hat: np.ndarray = field(repr=False)  # (3, n, n, n//2+1)
    pressure_hat: np.ndarray = field(repr=False)  # (n, n, n//2+1)
    stress: np.ndarray = field(repr=False)  # (3, 3, n, n, n) real


def make_filtered_state(grid, kernel, u_hat, time=0.0):
    return FilteredState(
        delta=kernel.delta,
        time=float(time),
        ubar_hat=kernel.multiplier * u_hat,
        pressure_hat=filtered_pressure_hat(grid, kernel, u_hat),
        stress=reynolds_stress(grid, kernel, u_hat),
    )


@dataclass(frozen=True)
class BalanceReport:
    """Resolved-scale energy budget of one trajectory at one width.

    residual = |Ebar(T) - Ebar(0) + nu * int ||grad ubar||^2 - int <R, grad ubar>|
    with both time integrals taken by the trapezoid rule on the snapshot grid.
    """

    delta: float
    energy_drop: float  # Ebar(T) - Ebar(0)
    viscous: float  # nu * int ||grad ubar||^2 dt
    stress_flux: float  # int <R, grad ubar> dt
    residual: float
    stress_norm: float  # ||R||_{L2(0,T;L2)}
    times: np.ndarray = field(repr=False)
    resolved_energy: np.ndarray = field(repr=False)
    grad_sq: np.ndarray = field(repr=False)
    flux: np.ndarray = field(repr=False)


def resolved_balance(trajectory, kernel):
    grid = trajectory.grid
    times = trajectory.times
    n_snap = len(trajectory)
    energy = np.empty(n_snap)
    grad_sq = np.empty(n_snap)
    flux = np.empty(n_snap)
    stress_sq = np.empty(n_snap)
    for i in range(n_snap):
        ub_hat = kernel.multiplier * trajectory.u_hats[i]
        energy[i] = 0.5 * norm_sq(grid, ub_hat)
        grad_sq[i] = gradient_norm_sq(grid, ub_hat)
        r_hat = reynolds_stress_hat(grid, kernel, trajectory.u_hats[i])
        flux[i] = inner_product(grid, r_hat, gradient(grid, ub_hat))
        stress_sq[i] = inner_product(grid, r_hat, r_hat)
    viscous = grid.nu * np.trapezoid(grad_sq, times)
    stress_flux = np.trapezoid(flux, times)
    drop = energy[-1] - energy[0]
    return BalanceReport(
        delta=kernel.delta,
        energy_drop=drop,
        viscous=viscous,
        stress_flux=stress_flux,
        residual=abs(drop + viscous - stress_flux),
        stress_norm=float(np.sqrt(max(np.trapezoid(stress_sq, times), 0.0))),
        times=times.copy(),
        resolved_energy=energy,
        grad_sq=grad_sq,
        flux=flux,
    )


def local_balance_test(trajectory, kernel, phi, window):
    """Space-time local energy budget against a separable test function.

    phi is a nonnegative real field (n, n, n); window supplies s(t) and
    s'(t).  With e = |ubar|^2 the tested identity is

        [ int e phi s ]_0^T = int int e (phi s' + nu lap(phi) s)
                            + int int (e + 2 pbar) (ubar . grad phi) s
                            - 2 nu int int |grad ubar|^2 phi s
                            - 2 int int ubar . (div R) phi s.

    With phi == 1 and a constant window every gradient term drops and the
    identity reduces to twice the resolved_balance budget.  Returns a dict of
    the individual terms plus the imbalance.
    """
    grid = trajectory.grid
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != grid.shape:
        raise ValueError(f"phi shape {phi.shape} != grid shape {grid.shape}")
    if phi.min() < -1e-12 * max(1.0, abs(phi.max())):
        raise ValueError("phi must be nonnegative for a local energy budget")
    phi_hat = grid.forward(phi)
    lap_phi = grid.inverse(laplacian(grid, phi_hat))
    grad_phi = grid.inverse(gradient(grid, phi_hat))

    times = trajectory.times
    n_snap = len(trajectory)
    s = window(times)
    s_dot = window.derivative(times)

    time_term = np.empty(n_snap)
    transport = np.empty(n_snap)
    viscous = np.empty(n_snap)
    transfer = np.empty(n_snap)
    boundary_density = np.empty(n_snap)
    for i in range(n_snap):
        u_hat = trajectory.u_hats[i]
        ub_hat = kernel.multiplier * u_hat
        ub = grid.inverse(ub_hat)
        e = np.einsum("ixyz,ixyz->xyz", ub, ub)
        pbar = grid.inverse(filtered_pressure_hat(grid, kernel, u_hat))
        grad_ub = grid.inverse(gradient(grid, ub_hat))
        div_r = grid.inverse(
            tensor_divergence(grid, reynolds_stress_hat(grid, kernel, u_hat))
        )
        boundary_density[i] = grid_inner_product(grid, e, phi)
        time_term[i] = grid_inner_product(grid, e, phi) * s_dot[i] + grid.nu * s[
            i
        ] * grid_inner_product(grid, e, lap_phi)
        adv = np.einsum("ixyz,ixyz->xyz", ub, grad_phi)
        transport[i] = s[i] * grid_inner_product(grid, e + 2.0 * pbar, adv)
        gg = np.einsum("ijxyz,ijxyz->xyz", grad_ub, grad_ub)
        viscous[i] = -2.0 * grid.nu * s[i] * grid_inner_product(grid, gg, phi)
        ur = np.einsum("ixyz,ixyz->xyz", ub, div_r)
        transfer[i] = -2.0 * s[i] * grid_inner_product(grid, ur, phi)

    boundary = boundary_density[-1] * s[-1] - boundary_density[0] * s[0]
    terms = {
        "boundary": boundary,
        "time": np.trapezoid(time_term, times),
        "transport": np.trapezoid(transport, times),
        "viscous": np.trapezoid(viscous, times),
        "transfer": np.trapezoid(transfer, times),
    }
    terms["imbalance"] = abs(
        terms["boundary"]
        - (terms["time"] + terms["transport"] + terms["viscous"] + terms["transfer"])
    )
    return terms
