import numpy as np
import pytest

from parakon.errors import DomainError, SingularGradientError
from parakon.geometry import Interval, rasterize
from parakon.operators import SourceTerm, laplacian, perturb, porous
from parakon.solver import GridFunction, SchemeConfig, solve
from parakon.transform import (
    TransformedOperator,
    eval_G,
    eval_h_tilde,
    forward_transform,
    inverse_transform,
    laplacian_closed_form,
)

UNIT = Interval(0.0, 1.0)


def lap1(f=1.0):
    return laplacian(SourceTerm.constant(f))


class TestEvalG:
    def test_halfspace_example_zero_hessian(self):
        T = TransformedOperator(lap1(1.0), k=1.0, p=0.5, alpha=0.5)
        # -(1/p) r^2 * 0 - ((1-p)/p^2) r |xi|^2 - r^(3-1/p) * 1 = -2 - 1
        assert eval_G(T, [0.4], 0.3, 1.0, [1.0], [[0.0]]) == pytest.approx(-3.0)

    def test_halfspace_example_negative_hessian(self):
        T = TransformedOperator(lap1(1.0), k=1.0, p=0.5, alpha=0.5)
        assert eval_G(T, [0.4], 0.3, 1.0, [1.0], [[-1.0]]) == pytest.approx(-1.0)

    def test_log_branch(self):
        T = TransformedOperator(lap1(0.0), k=1.0, p=0.0, alpha=0.5)
        assert eval_G(T, [0.4], 0.3, 0.0, [1.0], [[0.0]]) == pytest.approx(-1.0)

    def test_zero_gradient_directs_to_envelope(self):
        T = TransformedOperator(lap1(), k=1.0, p=0.5, alpha=0.5)
        with pytest.raises(SingularGradientError):
            eval_G(T, [0.4], 0.3, 1.0, [0.0], [[0.0]])

    def test_nonpositive_r_rejected(self):
        T = TransformedOperator(lap1(), k=1.0, p=0.5, alpha=0.5)
        with pytest.raises(DomainError):
            eval_G(T, [0.4], 0.3, 0.0, [1.0], [[0.0]])

    def test_closed_form_agreement(self, rng):
        for p in (0.5, -1.0, 0.25):
            T = TransformedOperator(lap1(1.0), k=3.0 - 1.0 / p, p=p, alpha=0.5)
            for _ in range(50):
                n = int(rng.integers(1, 3))
                x = rng.uniform(0.0, 1.0, size=n)
                t, r = rng.uniform(0.1, 2.0, size=2)
                xi = rng.uniform(-2.0, 2.0, size=n)
                if float(xi @ xi) < 1e-4:
                    continue
                X = rng.uniform(-2.0, 2.0, size=(n, n))
                X = (X + X.T) / 2
                got = eval_G(T, x, t, r, xi, X)
                want = laplacian_closed_form(T, x, t, r, xi, X)
                assert got == pytest.approx(want, rel=1e-12, abs=1e-12)


class TestEvalHTilde:
    def test_scaled_envelope(self):
        T = TransformedOperator(lap1(1.0), k=1.0, p=0.5, alpha=0.5)
        assert eval_h_tilde(T, [0.4], 0.3, 4.0) == pytest.approx(-4.0)

    def test_zero_source_is_zero(self):
        T = TransformedOperator(lap1(0.0), k=1.0, p=0.5, alpha=0.5)
        for r in (0.5, 1.0, 2.0):
            assert eval_h_tilde(T, [0.4], 0.3, r) == 0.0

    def test_perturbation_at_k_zero(self):
        T = TransformedOperator(perturb(lap1(0.0), 0.01), k=0.0, p=0.5, alpha=0.5)
        assert eval_h_tilde(T, [0.4], 0.3, 1.7) == pytest.approx(-0.01)

    def test_limit_of_eval_G(self, rng):
        T = TransformedOperator(lap1(1.0), k=1.0, p=0.5, alpha=0.5)
        for _ in range(10):
            r, t = rng.uniform(0.3, 2.0, size=2)
            target = eval_h_tilde(T, [0.4], t, r)
            e = rng.normal(size=1)
            e /= np.abs(e)
            for j in (4, 5, 6):
                d = 10.0**-j
                val = eval_G(T, [0.4], t, r, d * e, d * np.eye(1))
                if j == 6:
                    assert val == pytest.approx(target, abs=1e-5)


def _profile_gridfunction(h=1 / 64, dt=1 / 64, T=0.8):
    raster = rasterize(UNIT, h)
    xs = raster.axes()[0]
    nt = int(round(T / dt)) + 1
    vals = np.stack([0.5 + 0.3 * (n * dt) + 0.2 * xs * (1 - xs) for n in range(nt)])
    return GridFunction(raster, dt, vals)


class TestGridTransforms:
    def test_constant_field_fixed_point(self):
        raster = rasterize(UNIT, 1 / 16)
        gf = GridFunction(raster, 0.1, np.ones((6,) + raster.mask.shape))
        v = forward_transform(gf, 0.5, 0.5)
        assert np.allclose(v.values, 1.0)

    def test_linear_time_profile(self):
        raster = rasterize(UNIT, 1 / 16)
        nt, dt = 65, 1 / 64
        vals = np.stack([np.full(raster.mask.shape, n * dt) for n in range(nt)])
        gf = GridFunction(raster, dt, vals)
        v = forward_transform(gf, 1.0, 0.5, n_tau=65)
        taus = v.times
        for j in (5, 20, 40, 64):
            assert v.values[j, 3] == pytest.approx(taus[j] ** 2, abs=2e-4)

    def test_round_trip(self):
        u = _profile_gridfunction()
        for p, alpha in [(0.5, 0.5), (1.0, 0.7), (-1.0, 0.5), (0.0, 0.5)]:
            v = forward_transform(u, p, alpha, n_tau=129)
            back = inverse_transform(v, p, alpha, n_t=u.nt)
            tol = 5.0 * (u.dt + v.dt)
            inner = u.raster.mask
            assert np.abs(back.values[1:, inner] - u.values[1:, inner]).max() <= tol

    def test_p_nonpositive_requires_positive_u(self):
        u = solve(lap1(1.0), UNIT, SchemeConfig(h=1 / 32, T=0.2))
        with pytest.raises(DomainError):
            # boundary-adjacent interior values are fine, but u(x, t) = 0 on
            # the whole first interior slice only for the zero field
            forward_transform(u.with_values(np.zeros_like(u.values)), -1.0, 0.5)

    def test_p_nonpositive_boundary_placeholders(self):
        u = _profile_gridfunction()
        v = forward_transform(u, -1.0, 0.5)
        assert v.meta["blowup_boundary"]
        flags = u.raster.flags
        assert np.all(v.values[:, flags] == 0.0)

    def test_solver_output_transforms(self):
        u = solve(lap1(1.0), UNIT, SchemeConfig(h=1 / 32, T=0.5))
        v = forward_transform(u, 0.5, 0.5)
        assert v.t_final == pytest.approx(u.t_final**0.5)
        back = inverse_transform(v, 0.5, 0.5, n_t=257)
        ts = back.times
        sel = ts > 0.05
        xs = u.raster.axes()[0]
        for j in np.flatnonzero(sel)[:: 50]:
            exact = u.interp_many(xs[:, None], np.full(len(xs), ts[j]))
            assert np.abs(back.values[j] - exact).max() <= 5e-3


class TestResidualConsistency:
    """The transformed-equation residual equals (p/alpha) u^{p k} times the
    original residual, up to the discretization error of the v-grid."""

    @pytest.mark.parametrize(
        "spec,p,alpha,k",
        [
            (lap1(1.0), 0.5, 0.5, 1.0),           # k = 3 - 1/p
            (porous(2.0, SourceTerm.constant(1.0)), 0.5, 0.5, -1.0),  # k = 3 - sigma/p
        ],
    )
    def test_factor(self, spec, p, alpha, k):
        h, dt = 1 / 128, 1 / 256
        u = _profile_gridfunction(h=h, dt=dt, T=0.8)
        T = TransformedOperator(spec, k=k, p=p, alpha=alpha)
        v = forward_transform(u, p, alpha, n_tau=257)
        xs = u.raster.axes()[0]
        dtau = v.dt

        def analytic_residual(x, t):
            uval = 0.5 + 0.3 * t + 0.2 * x * (1 - x)
            du = 0.2 * (1 - 2 * x)
            if spec.kind == "laplacian":
                F = -(-0.4) - 1.0
            else:
                F = -2.0 * uval * (-0.4) - 2.0 * du * du - 1.0
            return 0.3 + F

        checked = 0
        for j in range(40, 200, 40):
            for i in range(20, 100, 20):
                tau = j * dtau
                t = tau ** (1.0 / alpha)
                vv = v.values[j, i]
                dv_dtau = (v.values[j + 1, i] - v.values[j - 1, i]) / (2 * dtau)
                dv_dx = (v.values[j, i + 1] - v.values[j, i - 1]) / (2 * h)
                d2v = (v.values[j, i + 1] - 2 * vv + v.values[j, i - 1]) / (h * h)
                lhs = vv ** (1.0 / p - 1.0 + k) * tau ** (1.0 - 1.0 / alpha) * dv_dtau
                lhs += (p / alpha) * eval_G(T, [xs[i]], tau, vv, [dv_dx], [[d2v]])
                uval = 0.5 + 0.3 * t + 0.2 * xs[i] * (1 - xs[i])
                target = (p / alpha) * uval ** (p * k) * analytic_residual(xs[i], t)
                assert lhs == pytest.approx(target, abs=2e-3, rel=2e-3)
                checked += 1
        assert checked > 10
