import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from handobj.geometry import RigidFrame
from handobj.metrics import (
    LossWeights,
    MetricsReport,
    chamfer_distance,
    contact_ratio,
    f_score,
    in_contact,
    nearest_neighbors,
    penetration_depth_cloud,
    penetration_depth_sdf,
    total_loss,
)
from handobj.nn import grad_check
from handobj.synth.primitives import PrimitiveSpec


def brute_sq(A, B):
    return ((A[:, None, :] - B[None, :, :]) ** 2).sum(-1)


def cd_oracle(A, B):
    d = brute_sq(A * 100, B * 100)
    return d.min(1).mean() + d.min(0).mean()


def fs_oracle(A, B, tau):
    d = np.sqrt(brute_sq(A, B))
    p = (d.min(1) <= tau).mean()
    r = (d.min(0) <= tau).mean()
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def random_pair(rng, n_max=512):
    na, nb = rng.integers(1, n_max + 1, size=2)
    scale = rng.uniform(0.01, 0.1)
    return rng.normal(size=(na, 3)) * scale, rng.normal(size=(nb, 3)) * scale + rng.normal(size=3) * 0.01


class TestChamfer:
    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            A, B = random_pair(rng)
            assert abs(float(chamfer_distance(A, B)) - cd_oracle(A, B)) <= 1e-9

    def test_self_zero(self, rng):
        A = rng.normal(size=(200, 3))
        assert float(chamfer_distance(A, A)) == 0.0

    def test_singleton_closed_form(self):
        d = 0.03
        cd = float(chamfer_distance(np.zeros((1, 3)), np.array([[0, 0, d]])))
        assert cd == 2 * (d * 100) ** 2

    def test_symmetric_bitwise(self, rng):
        A, B = random_pair(rng)
        assert float(chamfer_distance(A, B)) == float(chamfer_distance(B, A))

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            chamfer_distance(np.zeros((0, 3)), np.zeros((4, 3)))

    def test_batched(self, rng):
        A, B = rng.normal(size=(3, 40, 3)) * 0.05, rng.normal(size=(3, 60, 3)) * 0.05
        cd = chamfer_distance(A, B)
        assert cd.shape == (3,)
        for i in range(3):
            assert abs(float(cd[i]) - cd_oracle(A[i], B[i])) <= 1e-9

    def test_gradcheck(self, rng):
        A = torch.tensor(rng.normal(size=(30, 3)) * 0.05, dtype=torch.float64)
        B = torch.tensor(rng.normal(size=(25, 3)) * 0.05, dtype=torch.float64)
        assert grad_check(lambda: chamfer_distance(A, B), {"A": A, "B": B}) < 1e-4

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2**31))
    def test_nearest_matches_bruteforce_on_grid(self, na, nb, seed):
        # a dyadic lattice keeps every distance exact, so ties are genuine
        rng = np.random.default_rng(seed)
        A = rng.integers(-3, 4, size=(na, 3)).astype(np.float64) / 64
        B = rng.integers(-3, 4, size=(nb, 3)).astype(np.float64) / 64
        d2, idx = nearest_neighbors(torch.tensor(A), torch.tensor(B))
        ref = brute_sq(A, B)
        assert np.array_equal(idx.numpy(), ref.argmin(1))
        assert np.allclose(d2.numpy(), ref.min(1), rtol=0, atol=1e-15)


class TestFScore:
    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            A, B = random_pair(rng)
            for tau in (0.005, 0.01):
                assert abs(f_score(A, B, tau) - fs_oracle(A, B, tau)) <= 1e-9

    def test_identical(self, rng):
        A = rng.normal(size=(100, 3))
        assert f_score(A, A, 0.005) == 1.0

    def test_far_apart(self, rng):
        A = rng.normal(size=(50, 3)) * 0.01
        assert f_score(A, A + np.array([1.0, 0, 0]), 0.005) == 0.0

    def test_hand_enumerated(self):
        A = np.array([[0, 0, 0], [0.003, 0, 0], [0.020, 0, 0]])
        assert f_score(A, np.zeros((1, 3)), 0.005) == pytest.approx(0.8, abs=1e-15)

    @pytest.mark.parametrize("tau", [0.0, -0.01])
    def test_bad_tau(self, tau):
        with pytest.raises(ValueError):
            f_score(np.zeros((1, 3)), np.zeros((1, 3)), tau)

    def test_monotone_in_tau(self, rng):
        A, B = random_pair(rng, 200)
        taus = np.linspace(1e-4, 0.2, 60)
        vals = [f_score(A, B, t) for t in taus]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert all(0.0 <= v <= 1.0 for v in vals)


class TestContact:
    def test_coincident(self):
        h = np.array([[0.1, 0.2, 0.3], [0.0, 0.0, 0.0]])
        assert in_contact(h, np.array([[0.1, 0.2, 0.3]]))

    def test_far(self):
        assert not in_contact(np.zeros((1, 3)), np.array([[1.0, 0, 0]]))

    def test_closed_boundary(self):
        eps = 0.5  # exactly representable, as is its square
        assert in_contact(np.zeros((1, 3)), np.array([[eps, 0, 0]]), eps=eps)
        assert not in_contact(np.zeros((1, 3)), np.array([[0.5000001, 0, 0]]), eps=eps)

    def test_ratio(self):
        assert contact_ratio([True, False, True, True]) == 0.75
        with pytest.raises(ValueError):
            contact_ratio([])

    def test_empty(self):
        with pytest.raises(ValueError):
            in_contact(np.zeros((0, 3)), np.zeros((2, 3)))


def unit_sphere_sdf(p):
    return np.linalg.norm(p, axis=-1) - 1.0


class TestPenetration:
    def test_outside(self, rng):
        v = rng.normal(size=(50, 3))
        v = v / np.linalg.norm(v, axis=1, keepdims=True) * rng.uniform(1.0, 2.0, size=(50, 1))
        assert penetration_depth_sdf(v, unit_sphere_sdf) == 0.0

    def test_unit_sphere_ten_cm(self):
        v = np.array([[0.9, 0.0, 0.0], [2.0, 0.0, 0.0]])
        assert penetration_depth_sdf(v, unit_sphere_sdf) == pytest.approx(10.0, abs=1e-12)

    def test_too_few_cloud_points(self):
        with pytest.raises(ValueError, match="at least"):
            penetration_depth_cloud(np.zeros((1, 3)), np.ones((7, 3)))

    def test_cloud_matches_sdf(self):
        rng = np.random.default_rng(7)
        for i in range(20):
            r = rng.uniform(0.03, 0.08)
            sphere = PrimitiveSpec("sphere", (r,), RigidFrame(origin=rng.normal(size=3) * 0.05))
            cloud = sphere.sample_surface(4096, i)
            d = rng.normal(size=3)
            v = sphere.to_world((d / np.linalg.norm(d) * r * rng.uniform(0.5, 0.9))[None])
            exact = penetration_depth_sdf(v, sphere.sdf)
            assert penetration_depth_cloud(v, cloud) == pytest.approx(exact, rel=0.05)


class TestTotalLoss:
    def pred(self, rng, b=2):
        return {
            "t_o": torch.tensor(rng.normal(size=(b, 3)) * 0.05),
            "sparse": torch.tensor(rng.normal(size=(b, 16, 3)) * 0.05),
            "dense": torch.tensor(rng.normal(size=(b, 128, 3)) * 0.05),
        }

    def test_perfect(self, rng):
        p = self.pred(rng)
        loss, parts = total_loss(p, {k: v.clone() for k, v in p.items()})
        assert float(loss) == 0.0 and set(parts) == {"pose", "cd_sparse", "cd_dense"}

    def test_pose_offset(self, rng):
        p = self.pred(rng, 1)
        target = {k: v.clone() for k, v in p.items()}
        p["t_o"] = p["t_o"] + torch.tensor([[0.01, 0.0, 0.0]], dtype=torch.float64)
        loss, _ = total_loss(p, target, LossWeights(2.0, 2.0))
        assert float(loss) == pytest.approx(2.0, abs=1e-12)

    def test_shape_mismatch(self, rng):
        p = self.pred(rng)
        t = self.pred(rng, 3)
        with pytest.raises(ValueError, match="t_o"):
            total_loss(p, t)

    def test_weights_positive(self):
        with pytest.raises(ValueError):
            LossWeights(0.0, 2.0)

    def test_gradcheck(self, rng):
        p, t = self.pred(rng, 1), self.pred(rng, 1)
        assert grad_check(lambda: total_loss(p, t)[0], p) < 1e-4


class TestReport:
    def test_round_trip_and_means(self):
        rep = MetricsReport()
        rep.add(1, 0.5, 0.2, 0.4, True, 0.0, 0.0)
        rep.add(2, 1.5, 0.4, 0.6, False, 0.3, 0.0)
        m = rep.means()
        assert m["cd_cm2"] == 1.0 and m["contact_ratio"] == 0.5
        assert MetricsReport.from_dict(rep.to_dict()).to_dict() == rep.to_dict()

    def test_schema_version(self):
        with pytest.raises(ValueError, match="schema"):
            MetricsReport.from_dict({"schema_version": 99, "samples": []})
