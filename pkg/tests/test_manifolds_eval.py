import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose

from gse import errors
from gse.errors import GseError, InvalidConfig, RejectionFailure
from gse.evaluation import (
    EvalReport,
    PointRecord,
    evaluate,
    local_max_error,
    project_to_manifold,
    reconstruction_error,
    sample_ball,
    tangent_error,
)
from gse.geometry import projection_2norm_distance
from gse.manifolds import PointCloud, get_manifold

NAMES = ["swissroll", "spiral", "affineplane", "spherepatch"]


class LinearStub:
    """Model stand-in with affine embed/reconstruct maps, for checking composition."""

    def __init__(self, A, B, G):
        self.A, self.B, self.G = A, B, G

    def embed(self, x):
        return self.A @ x

    def reconstruct(self, y):
        return self.B @ y

    def jacobian_G(self, y):
        return self.G


class TestGenerators:
    @pytest.mark.parametrize("name", NAMES)
    def test_jacobian_matches_finite_differences(self, name):
        m = get_manifold(name)
        for b in m.sample_params(10, 3):
            J = m.J(b)
            fd = np.empty_like(J)
            for a in range(m.q):
                e = np.zeros(m.q)
                e[a] = 1e-6
                fd[:, a] = (m.f(b + e) - m.f(b - e)) / 2e-6
            assert np.max(np.abs(fd - J)) < 1e-6

    @pytest.mark.parametrize("name", NAMES)
    def test_sample_shapes_and_determinism(self, name):
        m = get_manifold(name)
        a, b = m.sample(30, 4), m.sample(30, 4)
        assert a.points.shape == (30, m.p) and a.tangents.shape == (30, m.p, m.q)
        assert np.array_equal(a.points, b.points)
        assert not np.array_equal(a.points, m.sample(30, 5).points)
        assert np.all((a.params >= m.low) & (a.params <= m.high))

    def test_swissroll_radius(self):
        c = get_manifold("swissroll").sample(100, 0)
        assert_allclose(c.points[:, 0] ** 2 + c.points[:, 2] ** 2, c.params[:, 0] ** 2, rtol=1e-12)

    def test_plane_lies_in_affine_subspace(self, plane):
        c = plane.sample(50, 0)
        B, off = plane.options["basis"], plane.options["offset"]
        resid = (c.points - off) - (c.points - off) @ B @ B.T
        assert np.max(np.abs(resid)) < 1e-12

    def test_sphere_patch_on_unit_sphere(self):
        c = get_manifold("spherepatch").sample(50, 0)
        assert_allclose(np.linalg.norm(c.points, axis=1), 1.0, atol=1e-14)

    def test_tangents_orthonormal(self):
        c = get_manifold("spherepatch").sample(20, 0)
        assert_allclose(np.einsum("npa,npb->nab", c.tangents, c.tangents),
                        np.broadcast_to(np.eye(2), (20, 2, 2)), atol=1e-12)

    def test_interior_margin(self):
        m = get_manifold("swissroll")
        mid = (m.low + m.high) / 2
        assert m.is_interior(mid)[0]
        assert not m.is_interior(m.low)[0]

    def test_empty_and_negative(self):
        m = get_manifold("spiral")
        assert m.sample(0, 0).points.shape == (0, 3)
        with pytest.raises(InvalidConfig):
            m.sample(-1, 0)

    @pytest.mark.parametrize("name,opts", [("torus", {}), ("swissroll", {"radius": 2})])
    def test_bad_names_and_options(self, name, opts):
        with pytest.raises(InvalidConfig):
            get_manifold(name, **opts)


class TestErrorMeasures:
    def test_compositional_delta(self, rng):
        A, B = rng.standard_normal((2, 3)), rng.standard_normal((3, 2))
        x = rng.standard_normal(3)
        stub = LinearStub(A, B, B)
        assert_allclose(reconstruction_error(x, stub), np.linalg.norm(x - B @ (A @ x)))

    def test_tangent_error_uses_span_only(self):
        T = np.eye(3)[:, :2]
        G = np.array([[2.0, 1.0], [0.0, 3.0], [0.0, 0.0]])
        A = np.zeros((2, 3))
        assert tangent_error(np.zeros(3), LinearStub(A, None, G), T * 5) < 1e-15
        Gt = np.array([[1.0], [0.0], [np.tan(0.3)]])
        stub = LinearStub(A[:1], None, Gt)
        assert_allclose(tangent_error(np.zeros(3), stub, np.eye(3)[:, :1]), np.sin(0.3))

    def test_evaluate_records_failures(self, plane_model):
        far = np.full((1, plane_model.p), 1e4)
        cloud = PointCloud(np.vstack([plane_model.X[:3], far]))
        rep = evaluate(plane_model, cloud)
        assert rep.n_failed == 1 and not rep.records[-1].ok
        assert hasattr(errors, rep.records[-1].error.split(":")[0])
        agg = rep.aggregates()
        assert agg["n_points"] == 4 and agg["max_delta"] < 1e-8
        assert np.isnan(agg["mean_tangent_error"])

    def test_empty_report(self):
        agg = EvalReport().aggregates()
        assert agg["n_points"] == 0 and np.isnan(agg["mean_delta"])

    def test_record_ok(self):
        assert PointRecord(0, np.zeros(2), None, None, 0.0, 0.0).ok


class TestLocalMaxError:
    def test_flat_bound_is_tight(self, plane_model, plane):
        x0 = plane.f(np.array([5.0, 5.0]))
        rec = local_max_error(x0, 1.0, plane_model, plane, plane.tangent(np.array([5.0, 5.0])),
                              m=100)
        assert rec.empirical < 1e-14 and rec.rhs < 1e-14 and rec.holds()

    def test_supremum_includes_center(self, plane_model, plane):
        x0 = plane.f(np.array([5.0, 5.0]))
        rec = local_max_error(x0, 1.0, plane_model, plane, np.eye(plane.p)[:, :2], m=10)
        assert rec.empirical >= rec.delta0**2

    def test_ball_samples_inside(self, swissroll):
        x0 = swissroll.f(np.array([3 * np.pi, 10.0]))
        pts = sample_ball(swissroll, x0, 2.0, 200, seed=0)
        assert pts.shape == (200, 3) and np.all(np.linalg.norm(pts - x0, axis=1) < 2.0)
        assert np.array_equal(pts, sample_ball(swissroll, x0, 2.0, 200, seed=0))

    def test_rejection_failure(self, swissroll):
        with pytest.raises(RejectionFailure):
            sample_ball(swissroll, np.array([100.0, 0.0, 0.0]), 0.1, 5, seed=0,
                        batch=1000, max_batches=3)

    def test_m_positive(self, plane_model, plane):
        with pytest.raises(ValueError):
            local_max_error(plane_model.X[0], 1.0, plane_model, plane, np.eye(5)[:, :2], m=0)


class TestProjection:
    def test_flat_plane_is_exact(self, plane_model, plane, rng):
        x0 = plane.f(np.array([4.0, 6.0]))
        B = plane.options["basis"]
        normal = rng.standard_normal(plane.p)
        normal -= B @ (B.T @ normal)
        pr = project_to_manifold(x0 + 0.3 * normal / np.linalg.norm(normal), plane_model)
        assert abs(pr.distance - 0.3) < 1e-8

    def test_point_on_estimated_manifold(self, roll450):
        x = roll450.reconstruct(roll450.Y[40] + np.array([0.1, -0.2]))
        pr = project_to_manifold(x, roll450)
        assert pr.distance < 1e-8

    def test_never_worse_than_embedding(self, roll450, roll_test):
        better = 0
        n = 0
        for x in roll_test.points[:20]:
            try:
                pr = project_to_manifold(x, roll450)
            except GseError:
                continue
            n += 1
            assert pr.distance <= pr.seed_distance + 1e-15
            better += pr.distance <= pr.seed_distance * (1 - 1e-6) or pr.seed_distance < 1e-10
        assert n >= 18 and better >= 0.9 * n

    def test_outside_domain_propagates(self, plane_model):
        with pytest.raises(GseError):
            project_to_manifold(np.full(plane_model.p, 1e4), plane_model)


class TestSwissRollQuality:
    def test_tangent_error_small(self, roll450, roll_test):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            rep = evaluate(roll450, roll_test)
        assert rep.n_failed <= 0.1 * roll_test.n
        assert np.median(rep.tangent_errors) < 0.2

    def test_tangent_matches_true_plane(self, roll450, swissroll):
        b = np.array([3 * np.pi, 10.0])
        x = swissroll.f(b)
        G = roll450.jacobian_G(roll450.embed(x))
        d = projection_2norm_distance(np.linalg.qr(G)[0], swissroll.tangent(b))
        assert d == pytest.approx(tangent_error(x, roll450, swissroll.J(b)), abs=1e-12)
        assert d < 0.3

    def test_far_query_raises(self, roll450):
        with pytest.raises(GseError):
            roll450.embed(np.array([500.0, 0.0, 0.0]))
