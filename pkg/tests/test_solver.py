"""Tests for the time integrator and initial-condition factory.

Validates:
- initial-condition construction (energy normalization, spectra, errors)
- exact Beltrami decay u(t) = exp(-nu t) u(0) against the integrator
- the discrete energy ledger E(t) + nu int ||grad u||^2 = E(0)
- structural properties of the advection term (divergence-free, orthogonality)
- blow-up detection with partial-trajectory salvage
"""

import numpy as np
import pytest

from nslab.solver import (
    BlowUpError,
    InitialCondition,
    Trajectory,
    energy_spectrum,
    make_initial,
    nonlinear_term,
    simulate,
    step,
)
from nslab.spectral import (
    VOLUME,
    Grid,
    GridError,
    divergence_max,
    hermitian_defect,
    inner_product,
    norm_sq,
)


@pytest.fixture(scope="module")
def grid():
    return Grid(n=16, nu=0.05, dt=5e-3, t_end=0.1, snapshot_stride=5)


class TestInitialConditions:
    """Factory output normalization and validation."""

    def test_beltrami_energy(self, grid):
        """ABC(1,1,1): integral |u|^2 = 3 (2 pi)^3, so E = 1.5 VOLUME."""
        u_hat = make_initial(grid, InitialCondition(kind="beltrami_abc", amplitude=2.0))
        assert 0.5 * norm_sq(grid, u_hat) == pytest.approx(4.0 * 1.5 * VOLUME, rel=1e-12)
        assert divergence_max(grid, u_hat) < 1e-13

    def test_taylor_green_structure(self, grid):
        u_hat = make_initial(grid, InitialCondition(kind="taylor_green"))
        assert divergence_max(grid, u_hat) < 1e-13
        assert np.abs(u_hat[2]).max() < 1e-15  # no third component
        assert 0.5 * norm_sq(grid, u_hat) == pytest.approx(VOLUME / 8.0, rel=1e-12)

    def test_random_band_energy_and_spectrum(self, grid):
        ic = InitialCondition(
            kind="random_band", amplitude=0.3, seed=42, slope=-2.0, k_min=1, k_max=4
        )
        u_hat = make_initial(grid, ic)
        assert 0.5 * norm_sq(grid, u_hat) == pytest.approx(
            0.5 * 0.3**2 * VOLUME, rel=1e-12
        )
        shells, energies = energy_spectrum(grid, u_hat)
        live = energies[:4]
        # E(s) proportional to s^slope holds exactly by construction
        ratios = live / live[0]
        expected = (shells[:4].astype(float)) ** -2.0
        assert np.abs(ratios - expected).max() < 1e-12
        assert np.abs(energies[4:]).max() == 0.0

    def test_random_band_reproducible(self, grid):
        ic = InitialCondition(
            kind="random_band", amplitude=0.3, seed=9, slope=-1.0, k_min=1, k_max=3
        )
        a = make_initial(grid, ic)
        b = make_initial(grid, ic)
        assert np.array_equal(a, b)

    def test_all_kinds_are_clean(self, grid):
        for ic in (
            InitialCondition(kind="beltrami_abc", abc=(1.0, 0.5, 0.25)),
            InitialCondition(kind="taylor_green", amplitude=0.1),
            InitialCondition(kind="random_band", amplitude=1.0, seed=0, slope=0.0, k_min=2, k_max=3),
        ):
            u_hat = make_initial(grid, ic)
            assert divergence_max(grid, u_hat) < 1e-13
            assert hermitian_defect(grid, u_hat) < 1e-13
            assert np.abs(u_hat[..., 0, 0, 0]).max() == 0.0

    def test_unknown_kind_rejected(self, grid):
        with pytest.raises(GridError, match="unknown initial condition"):
            make_initial(grid, InitialCondition(kind="vortex_sheet"))

    def test_random_band_requires_parameters(self, grid):
        with pytest.raises(GridError, match="requires"):
            make_initial(grid, InitialCondition(kind="random_band", seed=1))

    def test_random_band_rejects_unresolved_shell(self, grid):
        ic = InitialCondition(
            kind="random_band", amplitude=1.0, seed=1, slope=0.0, k_min=1, k_max=99
        )
        with pytest.raises(GridError, match="outside the resolved"):
            make_initial(grid, ic)


class TestBeltramiDecay:
    """The integrator against its closed-form solution."""

    def test_exact_exponential_decay(self):
        """For curl eigenfields the advection term is a pure gradient, so the
        discrete flow must match exp(-nu t) u0 to round-off at every snapshot."""
        grid = Grid(n=16, nu=0.3, dt=5e-3, t_end=0.2, snapshot_stride=8)
        u0 = make_initial(grid, InitialCondition(kind="beltrami_abc"))
        traj = simulate(grid, u0)
        scale = np.abs(u0).max()
        for i, t in enumerate(traj.times):
            exact = np.exp(-grid.nu * t) * u0
            assert np.abs(traj.u_hats[i] - exact).max() / scale < 1e-13

    def test_advection_vanishes_for_beltrami(self, grid):
        u0 = make_initial(grid, InitialCondition(kind="beltrami_abc"))
        n = nonlinear_term(grid, u0)
        assert np.abs(n).max() / np.abs(u0).max() < 1e-13


class TestEnergyLedger:
    """Snapshot bookkeeping and the discrete energy equality."""

    def test_global_energy_residuals(self, grid):
        ic = InitialCondition(
            kind="random_band", amplitude=0.5, seed=21, slope=-1.0, k_min=1, k_max=4
        )
        traj = simulate(grid, make_initial(grid, ic))
        res = traj.global_energy_residuals()
        assert res[0] == 0.0
        # dominated by the O(dt^2) trapezoid quadrature of ||grad u||^2
        assert res.max() < 1e-6 * traj.initial_energy

    def test_snapshot_alignment(self, grid):
        ic = InitialCondition(kind="taylor_green", amplitude=0.2)
        traj = simulate(grid, make_initial(grid, ic))
        assert len(traj) == traj.times.size == traj.u_hats.shape[0]
        assert traj.times[0] == 0.0
        assert traj.times[-1] == pytest.approx(grid.t_end)
        # stride 5 over 20 steps: snapshots at steps 0, 5, 10, 15, 20
        assert len(traj) == 5
        assert traj.step_energies.size == grid.steps + 1
        for i, t in enumerate(traj.times):
            assert 0.5 * norm_sq(grid, traj.u_hats[i]) == pytest.approx(
                traj.energies[i], rel=1e-14
            )
        assert traj.energies[0] == pytest.approx(traj.initial_energy)

    def test_final_state_always_recorded(self):
        """23 steps with stride 5 still ends at t_end."""
        grid = Grid(n=16, nu=0.05, dt=5e-3, t_end=0.115, snapshot_stride=5)
        ic = InitialCondition(kind="taylor_green", amplitude=0.2)
        traj = simulate(grid, make_initial(grid, ic))
        assert traj.times[-1] == pytest.approx(0.115)
        assert np.all(np.diff(traj.times) > 0.0)

    def test_energy_monotone_decay(self, grid):
        ic = InitialCondition(kind="taylor_green", amplitude=0.4)
        traj = simulate(grid, make_initial(grid, ic))
        assert np.all(np.diff(traj.step_energies) < 0.0)


class TestAdvectionTerm:
    """Structural invariants of the projected nonlinear term."""

    def test_divergence_free_output(self, grid):
        rng = np.random.default_rng(31)
        u = make_initial(
            grid,
            InitialCondition(
                kind="random_band", amplitude=1.0, seed=5, slope=-1.0, k_min=1, k_max=4
            ),
        )
        n = nonlinear_term(grid, u)
        assert divergence_max(grid, n) < 1e-13
        assert np.abs(n[..., 0, 0, 0]).max() == 0.0

    def test_energy_neutral(self, grid):
        """<u, -P[(u.grad)u]> = 0: advection moves energy between modes only."""
        u = make_initial(
            grid,
            InitialCondition(
                kind="random_band", amplitude=1.3, seed=8, slope=0.0, k_min=1, k_max=3
            ),
        )
        n = nonlinear_term(grid, u)
        scale = np.sqrt(norm_sq(grid, u) * norm_sq(grid, n))
        assert abs(inner_product(grid, u, n)) / scale < 1e-13

    def test_step_is_deterministic(self, grid):
        u = make_initial(grid, InitialCondition(kind="taylor_green", amplitude=0.3))
        a = step(grid, u)
        b = step(grid, u)
        assert np.array_equal(a, b)


class TestBlowUp:
    """Failure detection and salvage."""

    def test_simulate_rejects_divergent_input(self, grid):
        rng = np.random.default_rng(1)
        bad = grid.forward(rng.standard_normal((3,) + grid.shape))
        with pytest.raises(GridError, match="divergence"):
            simulate(grid, bad)

    def test_blow_up_raises_with_partial(self):
        grid = Grid(n=16, nu=1e-8, dt=0.05, t_end=1.0, snapshot_stride=1)
        ic = InitialCondition(kind="taylor_green", amplitude=1e150)
        with pytest.raises(BlowUpError, match="blew up") as excinfo:
            simulate(grid, make_initial(grid, ic))
        err = excinfo.value
        assert isinstance(err.partial, Trajectory)
        assert err.step >= 1
        assert err.time == pytest.approx(err.step * grid.dt)
        assert len(err.partial) >= 1
        assert err.partial.times[0] == 0.0
