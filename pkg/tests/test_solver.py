import math

import numpy as np
import pytest

from parakon.errors import DomainError, UsageError
from parakon.geometry import ConvexPolygon, Interval, normal_ext, rasterize
from parakon.operators import (
    SourceTerm,
    laplacian,
    perturb,
    porous,
    pucci_minus,
    qlap,
)
from parakon.solver import (
    GridFunction,
    SchemeConfig,
    check_boundary_growth,
    check_time_monotonicity,
    default_growth_probes,
    rapid_initial_growth_check,
    scheme_residual,
    solve,
)

UNIT = Interval(0.0, 1.0)
SQUARE = ConvexPolygon([[0, 0], [1, 0], [1, 1], [0, 1]])


def torsion_exact(x):
    return x * (1.0 - x) / 2.0


def run_torsion(h=1 / 64, T=2.0, dt="auto", eps=0.0, stride=1):
    spec = laplacian(SourceTerm.constant(1.0))
    if eps:
        spec = perturb(spec, eps)
    cfg = SchemeConfig(h=h, dt=dt, T=T, store_stride=stride)
    return solve(spec, UNIT, cfg)


class TestSolveGroundTruth:
    def test_torsion_steady_state(self):
        u = run_torsion(h=1 / 64, T=2.0)
        xs = u.raster.axes()[0]
        err = np.abs(u.values[-1] - torsion_exact(xs)).max()
        assert err <= 1e-3
        assert u.meta["steady"]

    def test_zero_source_stays_zero(self):
        u = solve(laplacian(), UNIT, SchemeConfig(h=1 / 32, T=0.1))
        assert np.abs(u.values).max() == 0.0

    def test_heat_2d_mode_decay(self):
        h = 1 / 16
        raster = rasterize(SQUARE, h)
        gx, gy = np.meshgrid(*raster.axes(), indexing="ij")
        u0 = np.sin(np.pi * gx) * np.sin(np.pi * gy)
        T = 0.05
        u = solve(laplacian(), raster, SchemeConfig(h=h, T=T), u0=u0)
        exact = math.exp(-2 * math.pi**2 * u.t_final) * u0
        err = np.abs(u.values[-1] - np.where(raster.mask, exact, 0.0)).max()
        assert err <= 2e-2 * exact.max()

    def test_porous_basic_properties(self):
        spec = porous(2.0, SourceTerm.constant(1.0))
        u = solve(spec, UNIT, SchemeConfig(h=1 / 32, T=0.5))
        assert u.values.min() >= 0.0
        assert check_time_monotonicity(u) >= -1e-12
        # steady state solves lap(u^2) = -1, i.e. u = sqrt(torsion)
        xs = u.raster.axes()[0]
        err = np.abs(u.values[-1] - np.sqrt(torsion_exact(xs))).max()
        assert err <= 5e-2

    def test_porous_self_convergence_order(self):
        spec = porous(2.0, SourceTerm.constant(1.0))
        T = 1 / 16
        sols = {}
        for k, h in enumerate([1 / 16, 1 / 32, 1 / 64]):
            cfg = SchemeConfig(h=h, dt=h * h / 8.0, T=T)
            sols[k] = solve(spec, UNIT, cfg)
        e01 = _sup_diff_on_coarse(sols[0], sols[1])
        e12 = _sup_diff_on_coarse(sols[1], sols[2])
        order = math.log2(e01 / e12)
        assert order >= 1.0

    def test_laplacian_self_convergence_order(self):
        T = 1 / 16
        sols = {}
        for k, h in enumerate([1 / 32, 1 / 64, 1 / 128]):
            cfg = SchemeConfig(h=h, dt=h * h / 4.0, T=T)
            sols[k] = solve(laplacian(SourceTerm.constant(1.0)), UNIT, cfg)
        e01 = _sup_diff_on_coarse(sols[0], sols[1])
        e12 = _sup_diff_on_coarse(sols[1], sols[2])
        assert math.log2(e01 / e12) >= 1.7

    def test_cfl_violation_rejected(self):
        with pytest.raises(UsageError):
            solve(laplacian(), UNIT, SchemeConfig(h=1 / 32, dt=1.0, T=1.0))

    def test_too_coarse_rejected(self):
        with pytest.raises(UsageError):
            solve(laplacian(), UNIT, SchemeConfig(h=0.2, T=0.1))


def _sup_diff_on_coarse(coarse: GridFunction, fine: GridFunction) -> float:
    """Sup difference of the final slices on the coarse nodes."""
    xs = coarse.raster.axes()[0]
    fine_vals = fine.interp_many(xs[:, None], np.full(len(xs), coarse.t_final))
    return float(np.abs(coarse.values[-1] - fine_vals).max())


class TestSchemeMonotonicity:
    def test_comparison_of_ordered_data(self):
        spec = laplacian(SourceTerm.constant(1.0))
        cfg = SchemeConfig(h=1 / 32, T=0.25)
        raster = rasterize(UNIT, cfg.h)
        xs = raster.axes()[0]
        bump = 0.05 * np.sin(np.pi * xs)
        u = solve(spec, raster, cfg)
        v = solve(spec, raster, cfg, u0=bump)
        assert (v.values - u.values).min() >= -1e-12

    def test_nonnegativity(self):
        u = run_torsion(h=1 / 32, T=0.5)
        assert u.values.min() >= -1e-12

    def test_perturbation_grows_solution(self):
        runs = [run_torsion(h=1 / 32, T=0.5, eps=e) for e in (0.0, 0.01, 0.02)]
        assert (runs[1].values - runs[0].values).min() >= -1e-12
        assert (runs[2].values - runs[1].values).min() >= -1e-12
        assert runs[2].values.max() > runs[0].values.max()


class TestResidual:
    def test_solver_output_by_construction(self):
        u = run_torsion(h=1 / 32, T=0.1)
        rep = scheme_residual(u, laplacian(SourceTerm.constant(1.0)))
        assert rep.max_residual <= 1e-10

    def test_injected_steady_state_order(self):
        errs = []
        for h in (1 / 32, 1 / 64):
            raster = rasterize(UNIT, h)
            xs = raster.axes()[0]
            vals = np.where(raster.support, torsion_exact(xs), 0.0)
            gf = GridFunction(raster, 1e-3, np.stack([vals, vals]))
            rep = scheme_residual(gf, laplacian(SourceTerm.constant(1.0)))
            errs.append(rep.max_residual)
        # quadratic steady profile: central differences are exact up to roundoff
        assert errs[0] <= 1e-10 and errs[1] <= 1e-10

    def test_quartic_profile_second_order(self):
        errs = []
        for h in (1 / 32, 1 / 64):
            raster = rasterize(UNIT, h)
            xs = raster.axes()[0]
            prof = xs**2 * (1 - xs) ** 2
            vals = np.where(raster.support, prof, 0.0)
            gf = GridFunction(raster, 1e-3, np.stack([vals, vals]))
            src = SourceTerm(
                lambda x, t, r, xi: np.maximum(
                    -(2 - 12 * x[..., 0] + 12 * x[..., 0] ** 2), 0.0
                ) * 0.0,
                "zero-like",
            )
            rep = scheme_residual(gf, laplacian(src))
            # residual = |lap_h(prof)| vs exact second derivative error O(h^2)
            exact = np.abs(2 - 12 * xs + 12 * xs**2)[raster.mask].max()
            errs.append(abs(rep.max_residual - exact))
        assert errs[1] <= errs[0] / 3.0

    def test_corrupted_node_spikes(self):
        u = run_torsion(h=1 / 32, T=0.05)
        vals = u.values.copy()
        mid = vals.shape[1] // 2
        vals[vals.shape[0] // 2, mid] += 0.01
        bad = u.with_values(vals)
        rep_good = scheme_residual(u, laplacian(SourceTerm.constant(1.0)))
        rep_bad = scheme_residual(bad, laplacian(SourceTerm.constant(1.0)))
        assert rep_bad.max_residual > 1e3 * max(rep_good.max_residual, 1e-12)

    def test_qlap_1d_residual_no_singular_set(self):
        # in 1D the q-Laplacian entry is direction-free, so every node is
        # checked against the full operator
        spec = qlap(3.0, SourceTerm.constant(1.0))
        u = solve(spec, UNIT, SchemeConfig(h=1 / 32, T=0.1))
        rep = scheme_residual(u, spec)
        assert rep.max_residual <= 1e-10
        assert rep.max_singular_residual == 0.0

    def test_qlap_2d_singular_nodes_reported(self):
        spec = qlap(3.0, SourceTerm.constant(1.0))
        u = solve(spec, SQUARE, SchemeConfig(h=1 / 12, T=0.05))
        rep = scheme_residual(u, spec)
        assert rep.max_residual <= 1e-10
        # the symmetric flow has an exactly-critical center node, checked
        # against the envelope value instead
        assert rep.max_singular_residual < math.inf


class TestTimeMonotonicity:
    def test_torsion_flow(self):
        u = run_torsion(h=1 / 32, T=0.5)
        assert check_time_monotonicity(u) >= -1e-12

    def test_decaying_fixture_negative(self):
        raster = rasterize(UNIT, 1 / 16)
        xs = raster.axes()[0]
        shape = np.where(raster.mask, np.sin(np.pi * xs), 0.0)
        times = 0.1 * np.arange(4)
        vals = np.stack([math.exp(-t) * shape for t in times])
        gf = GridFunction(raster, 0.1, vals)
        assert check_time_monotonicity(gf) < 0.0

    def test_zero_field(self):
        raster = rasterize(UNIT, 1 / 16)
        gf = GridFunction(raster, 0.1, np.zeros((3,) + raster.mask.shape))
        assert check_time_monotonicity(gf) == 0.0


@pytest.fixture(scope="module")
def torsion_field():
    return run_torsion(h=1 / 64, T=2.0)


class TestBoundaryGrowth:

    def test_sqrt_ratios_increase(self, torsion_field):
        u = torsion_field
        rhos = [2.0**-j for j in range(3, 8)]
        probes = [(normal_ext(UNIT, [0.0]), u.t_final), (normal_ext(UNIT, [1.0]), u.t_final)]
        for probe in check_boundary_growth(u, 0.5, 0.5, probes, rhos):
            assert probe.strictly_increasing
            assert probe.divergence_indicator > 2.0

    def test_p_one_bounded(self, torsion_field):
        u = torsion_field
        rhos = [2.0**-j for j in range(3, 8)]
        probes = [(normal_ext(UNIT, [0.0]), u.t_final)]
        (probe,) = check_boundary_growth(u, 1.0, 0.5, probes, rhos)
        assert probe.divergence_indicator <= 1.2
        assert probe.ratios.max() <= 0.55  # slope of the exact profile is 1/2

    def test_interior_probe_trivially_diverges(self, torsion_field):
        u = torsion_field
        rhos = [2.0**-j for j in range(3, 8)]
        probes = [(normal_ext(UNIT, [0.5]), u.t_final)]
        (probe,) = check_boundary_growth(u, 0.5, 0.5, probes, rhos)
        assert probe.strictly_increasing
        assert np.allclose(probe.ratios * probe.rhos, probe.ratios[0] * probe.rhos[0])

    def test_default_probe_set(self, torsion_field):
        probes = default_growth_probes(UNIT, torsion_field)
        assert len(probes) == 3
        assert probes[-1][1] == 0.0

    def test_probe_outside_closure(self, torsion_field):
        u = torsion_field
        bp = normal_ext(UNIT, [0.0])
        with pytest.raises(DomainError):
            check_boundary_growth(u, 0.5, 0.5, [(bp, 10.0)], [0.1])


class TestRapidInitialGrowth:
    def test_perturbed_passes(self):
        spec = perturb(laplacian(), 0.05)
        ok, margin = rapid_initial_growth_check(
            spec, UNIT, beta=1.1, beta_prime=0.005, p=0.45, alpha=0.5
        )
        assert ok and margin <= 0.0

    def test_unperturbed_fails(self):
        ok, margin = rapid_initial_growth_check(
            laplacian(), UNIT, beta=1.1, beta_prime=0.005, p=0.45, alpha=0.5
        )
        assert not ok and margin > 0.0

    def test_parameter_gate_rejection(self):
        with pytest.raises(UsageError):
            rapid_initial_growth_check(
                laplacian(), UNIT, beta=1.5, beta_prime=0.25, p=0.45, alpha=0.5
            )


class TestOtherKinds:
    def test_qlap_inf_1d_matches_laplacian(self):
        # in 1D the normalized infinity-Laplacian is the second derivative
        spec = qlap(math.inf, SourceTerm.constant(1.0))
        u = solve(spec, UNIT, SchemeConfig(h=1 / 32, T=1.0))
        xs = u.raster.axes()[0]
        assert np.abs(u.values[-1] - torsion_exact(xs)).max() <= 1e-3

    def test_finsler_weighted_2d(self):
        from parakon.operators import finsler_weighted

        spec = finsler_weighted([1.0, 4.0], SourceTerm.constant(1.0))
        u = solve(spec, SQUARE, SchemeConfig(h=1 / 12, T=0.3))
        assert check_time_monotonicity(u) >= -1e-12
        assert u.values.min() >= -1e-12

    def test_qlap_below_two(self):
        spec = qlap(1.5, SourceTerm.constant(1.0))
        # effective diffusivity q - 1 = 0.5 halves the decay rate; run longer
        u = solve(spec, UNIT, SchemeConfig(h=1 / 32, T=3.0))
        xs = u.raster.axes()[0]
        # 1D: -(q-1) u'' = 1 at steady state
        exact = torsion_exact(xs) / (1.5 - 1.0)
        assert np.abs(u.values[-1] - exact).max() <= 2e-3

    def test_porous_sigma_three(self):
        spec = porous(3.0, SourceTerm.constant(1.0))
        u = solve(spec, UNIT, SchemeConfig(h=1 / 32, T=2.0))
        xs = u.raster.axes()[0]
        exact = torsion_exact(xs) ** (1.0 / 3.0)
        assert np.abs(u.values[-1] - exact).max() <= 5e-2
        assert check_time_monotonicity(u) >= -1e-12

    def test_residual_sample_nodes(self):
        u = run_torsion(h=1 / 32, T=0.05)
        nodes = [idx for idx in np.argwhere(u.raster.mask)[:5]]
        rep = scheme_residual(u, laplacian(SourceTerm.constant(1.0)), sample_nodes=nodes)
        assert rep.max_residual <= 1e-10
        assert rep.nodes_checked == 5 * (u.nt - 1)


class TestPucci2D:
    def test_unit_interval_coefficients(self):
        # a=b=1 collapses the extremal operator onto the Laplacian
        spec = pucci_minus(1.0, 1.0, SourceTerm.constant(1.0))
        base = laplacian(SourceTerm.constant(1.0))
        cfg = SchemeConfig(h=1 / 12, T=0.6)
        raster = rasterize(SQUARE, cfg.h)
        up = solve(spec, raster, cfg)
        ul = solve(base, raster, cfg)
        assert np.abs(up.values[-1] - ul.values[-1]).max() <= 5e-3

    def test_pucci_flow_monotone(self):
        spec = pucci_minus(1.0, 2.0, SourceTerm.constant(1.0))
        u = solve(spec, SQUARE, SchemeConfig(h=1 / 12, T=0.3))
        assert check_time_monotonicity(u) >= -1e-12
        assert u.values.min() >= -1e-12


class TestSerialization:
    def test_pkgf_roundtrip(self, tmp_path):
        u = run_torsion(h=1 / 16, T=0.05)
        path = tmp_path / "field.pkgf"
        u.save_pkgf(path)
        header = path.read_text().splitlines()[0].split()
        assert header[:3] == ["PKGF", "v1", "1"]
        back = GridFunction.load_pkgf(path, raster=u.raster)
        assert np.array_equal(back.values, u.values)
        assert back.dt == u.dt

    def test_pkgf_2d_header(self, tmp_path):
        raster = rasterize(SQUARE, 0.25)
        vals = np.zeros((2,) + raster.mask.shape)
        gf = GridFunction(raster, 0.5, vals)
        path = tmp_path / "f2.pkgf"
        gf.save_pkgf(path)
        parts = path.read_text().splitlines()[0].split()
        assert parts[2] == "2" and len(parts) == 8
        back = GridFunction.load_pkgf(path, raster=raster)
        assert np.array_equal(back.values, vals)

    def test_csv_export(self, tmp_path):
        u = run_torsion(h=1 / 16, T=0.05)
        path = tmp_path / "slices.csv"
        u.export_csv(path, times=[0.0, u.t_final])
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x,u"
        assert len(lines) == 1 + 2 * int(u.raster.support.sum())
