"""Built-in acceptance suite: twelve pass/fail criteria over shared runs.

Criteria, tolerances and runtime budgets:

 1  spectral substrate identities              <= 1e-11
 2  Beltrami decay vs exp(-2 nu t)             <= 1e-6 relative
 3  global energy equality                     <= 1e-6 relative
 4  resolved balance, every width              <= 1e-6 * E0
 5  dissipation-defect estimators              limits <= 1e-6 * total
    (tiny-amplitude random-band run)           dissipation, order >= 1.8,
                                               cross-gap <= 10%
 6  closed form vs descent oracle              <= 1e-8 on 10 manufactured
                                               fluxes, KKT <= 1e-10
 7  parallelogram identity                     <= 1e-12, 100 pairs
 8  Lagrange ratios (interior + active)        <= 1e-9
 9  Euler-Lagrange / Boussinesq residuals      <= 1e-10 / 1e-9
10  weak-convergence trends                    monotone, positive order,
                                               final <= 1e-4 normalized
11  pipeline determinism                       byte-identical reruns across
                                               thread counts
12  resolved energy drop via the minimizer     <= 1e-6 relative

The expensive artifacts (the 32^3 Beltrami run and its per-width solutions)
are computed once and shared.  Each criterion prints one line; run_all
returns True only if every criterion passes.
"""

from __future__ import annotations

import json
import os
import shutil
import subprocess
import sys
import tempfile
import time as time_mod
from dataclasses import dataclass

import numpy as np

from .basket import build_basket
from .dissipation import defect_cross_validate
from .filtering import kernel_for, resolved_balance, width_schedule
from .minimizer import (
    FluxField,
    boussinesq_residual,
    el_residual,
    enstrophy_integral,
    k_functional,
    kkt_report,
    lagrange_ratio,
    make_gradient_flux,
    oracle_mp,
    energy_drop_identity,
    solution_gap,
    solve_mp,
    weak_convergence_diag,
)
from .solver import InitialCondition, make_initial, simulate
from .spectral import (
    Grid,
    curl,
    dealias,
    divergence,
    gradient,
    grid_inner_product,
    inner_product,
    leray_project,
    norm_sq,
    random_divergence_free,
)

BELTRAMI = {"n": 32, "nu": 0.1, "dt": 1e-3, "t_end": 1.0, "snapshot_stride": 10}
BELTRAMI_DELTA0 = np.pi
BELTRAMI_COUNT = 4

# Criterion 5 runs on a tiny-amplitude single-shell random field so the
# subfilter transfer is nonzero (symmetric benchmark flows have exactly zero
# odd structure statistics) but concentrated at low wavenumbers, where the
# delta^2 scaling window of both estimators is actually reachable: with
# content in shells up to k the fitted order degrades once k*delta leaves the
# quadratic regime, and mixed-shell bands scramble the fit entirely.  The
# finer 64^3 grid exists solely to resolve the pi/16 width (kernels need
# delta >= 2h); the schedule [pi/4, pi/8, pi/16] then sits inside the
# asymptotic window for k = 1 content.
CASCADE = {"n": 64, "nu": 0.1, "dt": 2e-3, "t_end": 0.5, "snapshot_stride": 25}
CASCADE_INIT = {"amplitude": 1e-5, "seed": 1, "slope": -3.0, "k_min": 1, "k_max": 1}
CASCADE_DELTA0 = np.pi / 4.0
CASCADE_COUNT = 3


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float


class AcceptanceLab:
    """Caches the shared runs and per-width minimizer records."""

    def __init__(self):
        self._beltrami = None
        self._cascade = None
        self._basket = None
        self._records = None

    @property
    def beltrami(self):
        if self._beltrami is None:
            grid = Grid(**BELTRAMI)
            u0 = make_initial(grid, InitialCondition(kind="beltrami_abc"))
            self._beltrami = simulate(grid, u0)
        return self._beltrami

    @property
    def beltrami_schedule(self):
        return width_schedule(self.beltrami.grid, BELTRAMI_DELTA0, BELTRAMI_COUNT)

    @property
    def cascade(self):
        if self._cascade is None:
            grid = Grid(**CASCADE)
            u0 = make_initial(grid, InitialCondition(kind="random_band", **CASCADE_INIT))
            self._cascade = simulate(grid, u0)
        return self._cascade

    @property
    def basket(self):
        if self._basket is None:
            self._basket = build_basket(self.beltrami.grid, t_end=BELTRAMI["t_end"])
        return self._basket

    @property
    def width_records(self):
        """Per-width flux/solution audit of the Beltrami run (fluxes discarded)."""
        if self._records is None:
            from .minimizer import assemble_flux, default_radius_sq

            traj = self.beltrami
            grid = traj.grid
            radius_sq = default_radius_sq(traj)
            records = []
            for delta in self.beltrami_schedule:
                kernel = kernel_for(grid, delta)
                balance = resolved_balance(traj, kernel)
                flux = assemble_flux(traj, kernel)
                sol = solve_mp(flux, radius_sq)
                records.append(
                    {
                        "delta": delta,
                        "balance_residual": balance.residual,
                        "lambda": sol.lam,
                        "one_minus_two_lambda": sol.one_minus_two_lambda,
                        "constraint_active": sol.constraint_active,
                        "lagrange_max_deviation": lagrange_ratio(sol, flux, self.basket)[
                            "max_deviation"
                        ],
                        "el_max": el_residual(sol, flux, self.basket)["max"],
                        "boussinesq": boussinesq_residual(
                            traj, kernel, self.basket, flux=flux, solution=sol
                        ),
                        "energy_drop_residual": energy_drop_identity(
                            traj, kernel, flux=flux, solution=sol
                        )["residual"],
                    }
                )
            self._records = records
        return self._records


def _result(number, name, passed, detail, t0):
    return CriterionResult(number, name, bool(passed), detail, time_mod.time() - t0)


def criterion_1(lab):
    t0 = time_mod.time()
    grid = Grid(n=32, nu=0.1, dt=1e-3, t_end=1e-3, snapshot_stride=1)
    rng = np.random.default_rng(42)
    worst = 0.0

    f = rng.standard_normal(grid.shape)
    back = grid.inverse(grid.forward(f))
    worst = max(worst, float(np.max(np.abs(back - f)) / np.max(np.abs(f))))

    f_hat = grid.forward(f)
    worst = max(
        worst,
        abs(grid_inner_product(grid, f, f) - norm_sq(grid, f_hat))
        / grid_inner_product(grid, f, f),
    )

    v_hat = grid.forward(rng.standard_normal((3,) + grid.shape))
    g_hat = grid.forward(rng.standard_normal((3,) + grid.shape))
    pv = leray_project(grid, v_hat)
    worst = max(
        worst,
        float(np.max(np.abs(leray_project(grid, pv) - pv)) / np.max(np.abs(pv))),
    )
    sym_gap = abs(
        inner_product(grid, pv, g_hat) - inner_product(grid, v_hat, leray_project(grid, g_hat))
    )
    worst = max(worst, sym_gap / abs(inner_product(grid, pv, g_hat)))

    x1, x2 = grid.x[0], grid.x[1]
    s_hat = grid.forward(np.sin(x1) + np.cos(2 * x2))
    grad = grid.inverse(gradient(grid, s_hat))
    worst = max(worst, float(np.max(np.abs(grad[0] - np.cos(x1)))))
    worst = max(worst, float(np.max(np.abs(grad[1] + 2 * np.sin(2 * x2)))))
    w_hat = dealias(grid, grid.forward(rng.standard_normal((3,) + grid.shape)))
    dcurl = divergence(grid, curl(grid, w_hat))
    worst = max(worst, float(np.max(np.abs(dcurl)) / np.max(np.abs(w_hat))))

    return _result(
        1, "spectral substrate", worst <= 1e-11, f"max identity residual {worst:.2e} (tol 1e-11)", t0
    )


def criterion_2(lab):
    t0 = time_mod.time()
    traj = lab.beltrami
    e0 = traj.initial_energy
    steps = np.arange(len(traj.step_energies))
    expected = e0 * np.exp(-2.0 * traj.grid.nu * steps * traj.grid.dt)
    err = float(np.max(np.abs(traj.step_energies - expected)) / e0)
    return _result(
        2, "analytic-flow oracle", err <= 1e-6, f"max rel energy error {err:.2e} (tol 1e-6)", t0
    )


def criterion_3(lab):
    t0 = time_mod.time()
    traj = lab.beltrami
    res = float(np.max(traj.global_energy_residuals()) / traj.initial_energy)
    return _result(
        3, "global energy equality", res <= 1e-6, f"max rel residual {res:.2e} (tol 1e-6)", t0
    )


def criterion_4(lab):
    t0 = time_mod.time()
    e0 = lab.beltrami.initial_energy
    worst = max(rec["balance_residual"] for rec in lab.width_records) / e0
    return _result(
        4,
        "resolved balance per width",
        worst <= 1e-6,
        f"max residual {worst:.2e} * E0 over {len(lab.width_records)} widths (tol 1e-6)",
        t0,
    )


def criterion_5(lab):
    t0 = time_mod.time()
    traj = lab.cascade
    schedule = width_schedule(traj.grid, CASCADE_DELTA0, CASCADE_COUNT)
    report = defect_cross_validate(traj, schedule)
    scale = report.dissipation_scale
    lim_s = abs(report.structure_fit.limit) / scale
    lim_t = abs(report.stress_fit.limit) / scale
    ok = (
        lim_s <= 1e-6
        and lim_t <= 1e-6
        and report.structure_fit.order >= 1.8
        and report.stress_fit.order >= 1.8
        and report.gap_dissipation <= 0.10
    )
    detail = (
        f"limits {lim_s:.2e}/{lim_t:.2e} (tol 1e-6), "
        f"orders {report.structure_fit.order:.2f}/{report.stress_fit.order:.2f} (>=1.8), "
        f"gap {report.gap_dissipation:.2e} (<=0.1)"
    )
    return _result(5, "dissipation-defect estimators", ok, detail, t0)


def _manufactured_cases(n_cases=10):
    grid = Grid(n=16, nu=0.05, dt=0.1, t_end=1.0, snapshot_stride=1)
    times = np.linspace(0.0, 1.0, 5)
    basket = build_basket(grid, t_end=1.0, seed=515, size=8, max_mode=2)
    cases = []
    for case in range(n_cases):
        rng = np.random.default_rng(100 + case)
        profile = random_divergence_free(grid, rng, max_k_sq=9, amplitude=1.0)
        svals = 1.0 + 0.5 * np.sin(2.0 * np.pi * times + rng.uniform(0.0, 2.0 * np.pi))
        scale = rng.uniform(0.5, 2.0)
        flux = make_gradient_flux(grid, times, profile, svals, scale)
        w_exact = np.stack([scale * s * profile for s in svals])
        big_w = enstrophy_integral(grid, times, w_exact)
        interior = case % 2 == 0
        radius_sq = 2.0 * big_w if interior else 0.25 * big_w
        cases.append(
            {
                "grid": grid,
                "times": times,
                "flux": flux,
                "w_exact": w_exact,
                "big_w": big_w,
                "radius_sq": radius_sq,
                "interior": interior,
                "seed": 1000 + case,
            }
        )
    return grid, basket, cases


def criterion_6(lab):
    t0 = time_mod.time()
    grid, basket, cases = _manufactured_cases()
    worst_gap = 0.0
    worst_spread = 0.0
    worst_kkt = 0.0
    all_converged = True
    closed_ok = True
    lab.manufactured = {"basket": basket, "solutions": []}
    for case in cases:
        flux, radius_sq = case["flux"], case["radius_sq"]
        sol = solve_mp(flux, radius_sq)
        if case["interior"]:
            gap_exact = enstrophy_integral(grid, case["times"], sol.v_hats - case["w_exact"])
            closed_ok &= gap_exact <= 1e-20 * case["big_w"] and sol.lam == 0.0
        else:
            closed_ok &= abs(sol.enstrophy_used - radius_sq) <= 1e-12 * radius_sq
            s_exact = np.sqrt(case["big_w"] / radius_sq)
            closed_ok &= abs(sol.one_minus_two_lambda - s_exact) <= 1e-12 * s_exact
        osol = oracle_mp(flux, radius_sq, iters=30000, seed=case["seed"], starts=3)
        worst_gap = max(worst_gap, solution_gap(grid, case["times"], osol, sol))
        worst_spread = max(worst_spread, osol.start_spread)
        worst_kkt = max(worst_kkt, kkt_report(osol)["complementarity"] / radius_sq)
        worst_kkt = max(worst_kkt, kkt_report(sol)["complementarity"] / radius_sq)
        all_converged &= osol.converged
        all_converged &= osol.k_value >= sol.k_value - 1e-10 * max(1.0, abs(sol.k_value))
        lab.manufactured["solutions"].append((case, sol))
    ok = (
        closed_ok
        and all_converged
        and worst_gap <= 1e-8
        and worst_spread <= 1e-8
        and worst_kkt <= 1e-10
    )
    detail = (
        f"{len(cases)} fluxes: oracle gap {worst_gap:.2e} (<=1e-8), "
        f"spread {worst_spread:.2e} (<=1e-8), KKT {worst_kkt:.2e} (<=1e-10), "
        f"converged={all_converged}, closed-form exact={closed_ok}"
    )
    return _result(6, "minimizer vs oracle", ok, detail, t0)


def criterion_7(lab):
    t0 = time_mod.time()
    grid = Grid(n=16, nu=0.05, dt=0.1, t_end=1.0, snapshot_stride=1)
    times = np.array([0.0, 0.5, 1.0])
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        j_hats = np.stack(
            [grid.forward(rng.standard_normal((3, 3) + grid.shape)) for _ in times]
        )
        flux = FluxField(grid, times, j_hats, nu=0.0)
        v = np.stack(
            [random_divergence_free(grid, rng, max_k_sq=16, amplitude=1.0) for _ in times]
        )
        w = np.stack(
            [random_divergence_free(grid, rng, max_k_sq=16, amplitude=1.0) for _ in times]
        )
        lhs = 0.125 * enstrophy_integral(grid, times, v - w)
        kv, kw = k_functional(flux, v), k_functional(flux, w)
        rhs = 0.5 * kv + 0.5 * kw - k_functional(flux, 0.5 * (v + w))
        scale = max(1.0, abs(kv), abs(kw), lhs)
        worst = max(worst, abs(lhs - rhs) / scale)
    return _result(
        7,
        "parallelogram identity",
        worst <= 1e-12,
        f"max residual {worst:.2e} over 100 pairs (tol 1e-12)",
        t0,
    )


def criterion_8(lab):
    t0 = time_mod.time()
    interior_dev = max(rec["lagrange_max_deviation"] for rec in lab.width_records)
    interior_all = all(not rec["constraint_active"] for rec in lab.width_records)
    if not hasattr(lab, "manufactured"):
        criterion_6(lab)
    active_dev = 0.0
    saw_active = False
    for case, sol in lab.manufactured["solutions"]:
        if not case["interior"]:
            saw_active = True
            dev = lagrange_ratio(sol, case["flux"], lab.manufactured["basket"])["max_deviation"]
            active_dev = max(active_dev, dev)
    ok = interior_all and saw_active and interior_dev <= 1e-9 and active_dev <= 1e-9
    detail = (
        f"interior dev {interior_dev:.2e}, active dev {active_dev:.2e} (tol 1e-9, "
        f"interior widths={interior_all}, active cases={saw_active})"
    )
    return _result(8, "Lagrange ratio", ok, detail, t0)


def criterion_9(lab):
    t0 = time_mod.time()
    el_width = max(rec["el_max"] for rec in lab.width_records)
    bq_width = max(rec["boussinesq"].el_form_max for rec in lab.width_records)
    if not hasattr(lab, "manufactured"):
        criterion_6(lab)
    el_manu = 0.0
    for case, sol in lab.manufactured["solutions"]:
        el_manu = max(el_manu, el_residual(sol, case["flux"], lab.manufactured["basket"])["max"])
    ok = el_width <= 1e-10 and el_manu <= 1e-10 and bq_width <= 1e-9
    detail = (
        f"EL residual {max(el_width, el_manu):.2e} (<=1e-10), "
        f"divergence-tested Boussinesq {bq_width:.2e} (<=1e-9)"
    )
    return _result(9, "Euler-Lagrange residual", ok, detail, t0)


def criterion_10(lab):
    t0 = time_mod.time()
    report = weak_convergence_diag(lab.beltrami, lab.beltrami_schedule, lab.basket)
    # A series cancelled to machine precision has already reached its limit of
    # zero; demanding a strict decrease of its round-off residue is vacuous.
    trend_a = report.a_at_floor or (report.monotone_a and float(np.min(report.order_a)) > 0.0)
    trend_b = report.b_at_floor or (report.monotone_b and float(np.min(report.order_b)) > 0.0)
    ok = trend_a and trend_b and report.final_a_normalized <= 1e-4
    a_part = (
        "a at cancellation floor"
        if report.a_at_floor
        else f"a monotone {report.monotone_a}, order {np.min(report.order_a):.2f}"
    )
    b_part = (
        "b at cancellation floor"
        if report.b_at_floor
        else f"b monotone {report.monotone_b}, order {np.min(report.order_b):.2f}"
    )
    detail = f"{a_part}; {b_part}; final |a| {report.final_a_normalized:.2e} (<=1e-4)"
    return _result(10, "weak-convergence trends", ok, detail, t0)


def _determinism_config(out_dir):
    return {
        "grid": {"n": 16, "nu": 0.08, "dt": 5e-3, "t_end": 0.05, "snapshot_stride": 2},
        "init": {
            "kind": "random_band",
            "amplitude": 0.8,
            "seed": 21,
            "slope": -2.0,
            "k_min": 1,
            "k_max": 3,
        },
        "filters": {"delta0": float(np.pi), "count": 3},
        "minimizer": {"oracle": {"iters": 400, "starts": 2, "seed": 5}},
        "basket": {"seed": 77, "size": 6, "max_mode": 2},
        "output": {"dir": out_dir},
    }


def _run_pipeline_subprocess(cfg_path, threads, cwd, out_root):
    env = dict(os.environ)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        env[var] = str(threads)
    env["NSLAB_OUT"] = out_root
    out = subprocess.run(
        [sys.executable, "-m", "nslab", "simulate", "--config", cfg_path],
        check=True,
        capture_output=True,
        text=True,
        env=env,
        cwd=cwd,
    )
    run_dir = out.stdout.strip().splitlines()[-1]
    for stage in (["analyze", run_dir], ["minimize", run_dir, "--oracle"], ["report", run_dir]):
        subprocess.run(
            [sys.executable, "-m", "nslab", *stage],
            check=True,
            capture_output=True,
            text=True,
            env=env,
            cwd=cwd,
        )
    return run_dir if os.path.isabs(run_dir) else os.path.join(cwd, run_dir)


def _dir_fingerprint(root):
    files = {}
    for base, _, names in os.walk(root):
        for name in names:
            path = os.path.join(base, name)
            rel = os.path.relpath(path, root)
            with open(path, "rb") as fh:
                files[rel] = fh.read()
    return files


def criterion_11(lab, workdir=None):
    t0 = time_mod.time()
    tmp = workdir or tempfile.mkdtemp(prefix="nslab-verify-")
    made_tmp = workdir is None
    try:
        cfg_path = os.path.join(tmp, "cfg.json")
        with open(cfg_path, "w", encoding="utf-8") as fh:
            json.dump(_determinism_config("det"), fh, indent=2, sort_keys=True)
        results = []
        for tag, threads in (("a", 1), ("b", 4)):
            out_root = os.path.join(tmp, tag)
            os.makedirs(out_root, exist_ok=True)
            run_dir = _run_pipeline_subprocess(cfg_path, threads, tmp, out_root)
            results.append(_dir_fingerprint(run_dir))
        same_names = set(results[0]) == set(results[1])
        diffs = [k for k in results[0] if same_names and results[0][k] != results[1][k]]
        ok = same_names and not diffs
        detail = (
            f"{len(results[0])} artifacts byte-identical across thread counts"
            if ok
            else f"mismatch: names_equal={same_names}, differing={diffs[:4]}"
        )
    except subprocess.CalledProcessError as exc:
        ok = False
        tail = (exc.stderr or "").strip().splitlines()
        detail = f"pipeline subprocess failed: {tail[-1] if tail else exc}"
    finally:
        if made_tmp:
            shutil.rmtree(tmp, ignore_errors=True)
    return _result(11, "pipeline determinism", ok, detail, t0)


def criterion_12(lab):
    t0 = time_mod.time()
    e0 = lab.beltrami.initial_energy
    worst = max(rec["energy_drop_residual"] for rec in lab.width_records) / e0
    return _result(
        12,
        "energy drop via minimizer",
        worst <= 1e-6,
        f"max rel residual {worst:.2e} over widths (tol 1e-6)",
        t0,
    )


CRITERIA = (
    criterion_1,
    criterion_2,
    criterion_3,
    criterion_4,
    criterion_5,
    criterion_6,
    criterion_7,
    criterion_8,
    criterion_9,
    criterion_10,
    criterion_11,
    criterion_12,
)


def run_all(workdir=None, stream=None):
    stream = stream or sys.stdout
    lab = AcceptanceLab()
    all_ok = True
    for crit in CRITERIA:
        if crit is criterion_11:
            result = crit(lab, workdir=workdir)
        else:
            result = crit(lab)
        all_ok &= result.passed
        status = "PASS" if result.passed else "FAIL"
        print(
            f"criterion {result.number:>2} {status}  {result.name:<28} "
            f"[{result.seconds:7.1f}s]  {result.detail}",
            file=stream,
        )
    print("overall: " + ("PASS" if all_ok else "FAIL"), file=stream)
    return bool(all_ok)
