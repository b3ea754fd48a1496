"""Tests for coarse-graining, the resolved energy budget and time windows.

Validates:
- kernel normalization and the spectral-multiplier/circular-convolution identity
- width validation (box embedding above, grid resolution below)
- Reynolds stress symmetry and its trace/energy identity
- filtered pressure against the operator-composed Poisson equation
- resolved and local energy budgets closing on solver trajectories
- window functions and their analytic derivatives
"""

import numpy as np
import pytest

from nslab.filtering import (
    KernelError,
    filtered_pressure_hat,
    kernel_for,
    local_balance_test,
    make_filtered_state,
    make_kernel,
    resolved_balance,
    reynolds_stress,
    reynolds_stress_hat,
    width_schedule,
    wrapped_radius_sq,
)
from nslab.solver import InitialCondition, make_initial, simulate
from nslab.spectral import (
    Grid,
    dealias,
    divergence,
    gradient_norm_sq,
    hermitian_defect,
    laplacian,
    norm_sq,
    tensor_divergence,
)
from nslab.windows import BumpWindow, ConstantWindow


@pytest.fixture(scope="module")
def grid():
    return Grid(n=16, nu=0.05, dt=2e-3, t_end=0.05, snapshot_stride=1)


@pytest.fixture(scope="module")
def u_hat(grid):
    ic = InitialCondition(
        kind="random_band", amplitude=0.8, seed=77, slope=-1.0, k_min=1, k_max=4
    )
    return make_initial(grid, ic)


@pytest.fixture(scope="module")
def trajectory(grid, u_hat):
    return simulate(grid, u_hat)


class TestKernel:
    """Mollifier normalization and multiplier properties."""

    def test_unit_mass(self, grid):
        kernel = make_kernel(grid, np.pi / 2.0)
        assert grid.h**3 * kernel.samples.sum() == pytest.approx(1.0, rel=1e-14)
        assert kernel.multiplier[0, 0, 0] == 1.0

    def test_multiplier_bounded_and_real(self, grid):
        kernel = make_kernel(grid, np.pi / 2.0)
        assert kernel.multiplier.dtype == np.float64
        assert np.abs(kernel.multiplier).max() <= 1.0 + 1e-12
        assert kernel.min_multiplier == kernel.multiplier.min()

    def test_multiplier_is_convolution(self, grid):
        """m(k) u_hat must equal the circular convolution h^3 sum eta(y) u(x-y)."""
        rng = np.random.default_rng(4)
        f = rng.standard_normal(grid.shape)
        kernel = make_kernel(grid, np.pi / 2.0)
        direct = np.zeros(grid.shape)
        for s0, s1, s2 in np.argwhere(kernel.samples > 0.0):
            direct += kernel.samples[s0, s1, s2] * np.roll(f, (s0, s1, s2), axis=(0, 1, 2))
        direct *= grid.h**3
        via_multiplier = grid.inverse(kernel.multiplier * grid.forward(f))
        assert np.abs(direct - via_multiplier).max() < 1e-12 * np.abs(f).max()

    def test_width_validation(self, grid):
        with pytest.raises(KernelError, match="exceeds pi"):
            make_kernel(grid, 3.5)
        with pytest.raises(KernelError, match="below 2h"):
            make_kernel(grid, 0.5 * grid.h)

    def test_kernel_cache(self, grid):
        a = kernel_for(grid, np.pi / 4.0)
        b = kernel_for(grid, np.pi / 4.0)
        assert a is b

    def test_wrapped_radius(self, grid):
        r_sq = wrapped_radius_sq(grid)
        assert r_sq[0, 0, 0] == 0.0
        assert r_sq[1, 0, 0] == pytest.approx(grid.h**2)
        assert r_sq[-1, 0, 0] == pytest.approx(grid.h**2)  # wraps across the box
        assert r_sq.max() == pytest.approx(3.0 * np.pi**2)


class TestWidthSchedule:
    def test_dyadic_values(self, grid):
        sched = width_schedule(grid, np.pi, 3)
        assert sched == [np.pi, np.pi / 2.0, np.pi / 4.0]

    def test_rejects_unresolvable(self, grid):
        with pytest.raises(KernelError, match="outside the representable"):
            width_schedule(grid, np.pi, 4)  # pi/8 < 2h at n=16
        with pytest.raises(KernelError, match="outside the representable"):
            width_schedule(grid, 4.0, 1)
        with pytest.raises(KernelError, match="at least one"):
            width_schedule(grid, np.pi, 0)


class TestReynoldsStress:
    def test_symmetry(self, grid, u_hat):
        kernel = kernel_for(grid, np.pi / 2.0)
        r = reynolds_stress(grid, kernel, u_hat)
        assert np.abs(r - np.swapaxes(r, 0, 1)).max() < 1e-14

    def test_trace_energy_identity(self, grid, u_hat):
        """integral tr(R) = ||u||^2 - ||ubar||^2 for dealiased u (Parseval)."""
        kernel = kernel_for(grid, np.pi / 2.0)
        r_hat = reynolds_stress_hat(grid, kernel, u_hat)
        trace = r_hat[0, 0] + r_hat[1, 1] + r_hat[2, 2]
        ud = dealias(grid, u_hat)
        expected = norm_sq(grid, ud) - norm_sq(grid, kernel.multiplier * ud)
        from nslab.spectral import VOLUME

        integral = VOLUME * float(trace[0, 0, 0].real)
        assert integral == pytest.approx(expected, rel=1e-12)

    def test_hermitian(self, grid, u_hat):
        kernel = kernel_for(grid, np.pi / 2.0)
        r_hat = reynolds_stress_hat(grid, kernel, u_hat)
        assert hermitian_defect(grid, r_hat) < 1e-12


class TestFilteredPressure:
    def test_poisson_equation(self, grid, u_hat):
        """-lap(pbar) = div div (filtered u x u), composed from tested operators."""
        kernel = kernel_for(grid, np.pi / 2.0)
        p_hat = filtered_pressure_hat(grid, kernel, u_hat)
        u = grid.inverse(dealias(grid, u_hat))
        prod = np.einsum("ixyz,jxyz->ijxyz", u, u)
        t_hat = kernel.multiplier * dealias(grid, grid.forward(prod))
        ddt = divergence(grid, tensor_divergence(grid, t_hat))
        lhs = -laplacian(grid, p_hat)
        scale = np.abs(ddt).max()
        assert np.abs(lhs - ddt).max() < 1e-12 * scale
        assert p_hat[0, 0, 0] == 0.0

    def test_filtered_state_bundle(self, grid, u_hat):
        kernel = kernel_for(grid, np.pi / 2.0)
        state = make_filtered_state(grid, kernel, u_hat, time=0.25)
        assert state.delta == kernel.delta
        assert state.time == 0.25
        assert state.stress.shape == (3, 3) + grid.shape
        assert np.abs(
            state.ubar_hat - kernel.multiplier * u_hat
        ).max() == 0.0


class TestResolvedBalance:
    """The budget Ebar(T) - Ebar(0) + nu int ||grad ubar||^2 = int <R, grad ubar>."""

    def test_budget_closes(self, grid, trajectory):
        for delta in (np.pi / 2.0, np.pi / 4.0):
            report = resolved_balance(trajectory, kernel_for(grid, delta))
            e0 = trajectory.initial_energy
            assert report.residual < 1e-6 * e0
            assert report.viscous > 0.0
            assert report.stress_norm > 0.0

    def test_identity_width_reduces_to_global_budget(self, grid, trajectory):
        """At m == 1 (no filtering) the stress flux vanishes and the budget is
        the global energy equality."""
        kernel = kernel_for(grid, np.pi / 2.0)
        identity = type(kernel)(
            delta=kernel.delta,
            samples=kernel.samples,
            multiplier=np.ones_like(kernel.multiplier),
            norm_const=kernel.norm_const,
            min_multiplier=1.0,
        )
        report = resolved_balance(trajectory, identity)
        assert abs(report.stress_flux) < 1e-9 * trajectory.initial_energy
        assert report.residual < 1e-6 * trajectory.initial_energy

    def test_smoothing_reduces_gradients(self, grid, trajectory):
        kernel = kernel_for(grid, np.pi / 2.0)
        ub = kernel.multiplier * trajectory.u_hats[0]
        assert gradient_norm_sq(grid, ub) < gradient_norm_sq(grid, trajectory.u_hats[0])


class TestLocalBalance:
    def test_constant_test_function(self, grid, trajectory):
        """phi == 1, s == 1: gradient terms drop and the budget is exactly
        twice the resolved_balance budget (same trapezoid-in-time error)."""
        kernel = kernel_for(grid, np.pi / 2.0)
        terms = local_balance_test(
            trajectory, kernel, np.ones(grid.shape), ConstantWindow()
        )
        assert terms["transport"] == pytest.approx(0.0, abs=1e-10)
        report = resolved_balance(trajectory, kernel)
        assert terms["boundary"] == pytest.approx(2.0 * report.energy_drop, rel=1e-10)
        assert terms["imbalance"] == pytest.approx(2.0 * report.residual, rel=1e-6)

    def test_localized_test_function(self, grid, u_hat):
        """A genuine space-time bump: all five terms participate.

        The identity is continuum-in-time, so the discrete check closes to
        the trapezoid quadrature error of the snapshot grid: the imbalance
        must be small AND shrink like dt^2 when the step is halved.
        """
        x1, x2, _ = grid.x
        phi = (1.0 + 0.5 * np.cos(x1)) * (1.0 + 0.3 * np.sin(x2))
        window = BumpWindow(t0=-0.2, t1=0.25)  # nonzero at both endpoints
        imbalances = []
        for dt in (2e-3, 1e-3):
            g = Grid(n=16, nu=0.05, dt=dt, t_end=0.05, snapshot_stride=1)
            traj = simulate(g, u_hat)
            terms = local_balance_test(traj, kernel_for(g, np.pi / 2.0), phi, window)
            assert abs(terms["transport"]) > 0.0
            assert abs(terms["time"]) > 0.0
            scale = max(abs(v) for k, v in terms.items() if k != "imbalance")
            assert terms["imbalance"] < 1e-4 * scale
            imbalances.append(terms["imbalance"])
        assert imbalances[1] < imbalances[0] / 3.0  # second-order quadrature

    def test_rejects_bad_phi(self, grid, trajectory):
        kernel = kernel_for(grid, np.pi / 2.0)
        with pytest.raises(ValueError, match="shape"):
            local_balance_test(trajectory, kernel, np.ones((4, 4, 4)), ConstantWindow())
        with pytest.raises(ValueError, match="nonnegative"):
            local_balance_test(
                trajectory, kernel, -np.ones(grid.shape), ConstantWindow()
            )


class TestWindows:
    def test_constant_window(self):
        w = ConstantWindow(value=2.0)
        t = np.linspace(0.0, 1.0, 5)
        assert np.all(w(t) == 2.0)
        assert np.all(w.derivative(t) == 0.0)

    def test_bump_window_support_and_derivative(self):
        w = BumpWindow(t0=0.0, t1=1.0)
        t = np.linspace(-0.5, 1.5, 201)
        s = w(t)
        assert np.all(s[t <= 0.0] == 0.0)
        assert np.all(s[t >= 1.0] == 0.0)
        assert s.max() == pytest.approx(np.exp(-1.0), rel=1e-12)
        # analytic derivative against a central difference
        eps = 1e-6
        mid = np.linspace(0.1, 0.9, 17)
        numeric = (w(mid + eps) - w(mid - eps)) / (2.0 * eps)
        assert np.abs(w.derivative(mid) - numeric).max() < 1e-7

    def test_bump_window_rejects_empty_interval(self):
        with pytest.raises(ValueError, match="empty window"):
            BumpWindow(t0=1.0, t1=1.0)
