import numpy as np
import pytest

from misavoidd import tensor as T
from misavoidd.gradcheck import finite_diff_check
from misavoidd.losses import (
    LossBreakdown,
    LossWeights,
    breakdown_residual,
    classification_loss,
    cmd,
    combined_loss,
    orthogonality_loss,
    reconstruction_loss,
)
from misavoidd.model import SubspaceReps
from misavoidd.tensor import Tensor


def cmd_oracle(X, Y, K):
    """Plain-python moment computation, one coordinate at a time."""
    X, Y = np.asarray(X, float), np.asarray(Y, float)
    total = 0.0
    sq = [0.0] * (K + 1)
    for j in range(X.shape[1]):
        xs, ys = list(X[:, j]), list(Y[:, j])
        w = max(max(xs + ys) - min(xs + ys), 1e-3)
        mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
        sq[1] += ((mx - my) / w) ** 2
        for k in range(2, K + 1):
            cx = sum((x - mx) ** k for x in xs) / len(xs)
            cy = sum((y - my) ** k for y in ys) / len(ys)
            sq[k] += ((cx - cy) / w**k) ** 2
    for k in range(1, K + 1):
        total += sq[k] ** 0.5
    return total


def reps_from(rng, B, d, with_g=True, with_h=True):
    u_a, u_v = rng.normal(size=(B, d)), rng.normal(size=(B, d))
    t = lambda: Tensor(rng.normal(size=(B, d)))  # noqa: E731
    return SubspaceReps(
        u_a=Tensor(u_a),
        u_v=Tensor(u_v),
        h_a=t() if with_h else None,
        h_v=t() if with_h else None,
        g_a=t() if with_g else None,
        g_v=t() if with_g else None,
        recon_a=t(),
        recon_v=t(),
    )


def leaves(reps):
    return [r for r in (reps.u_a, reps.u_v, reps.h_a, reps.h_v, reps.g_a, reps.g_v, reps.recon_a, reps.recon_v)
            if r is not None]


class TestCmd:
    def test_identical_sets_zero(self):
        X = np.random.default_rng(0).normal(size=(6, 4))
        assert cmd(Tensor(X), Tensor(X.copy()), 5).item() == 0.0

    def test_worked_example(self):
        X = np.array([[0.0], [0.5], [1.0]])
        Y = np.array([[0.25], [0.5], [0.75]])
        oracle = cmd_oracle(X, Y, 5)
        assert oracle == pytest.approx(0.16406, abs=1e-5)
        assert cmd(Tensor(X), Tensor(Y), 5).item() == pytest.approx(oracle, abs=1e-12)
        assert cmd(Tensor(X), Tensor(Y), 5).item() == pytest.approx(0.16406, abs=1e-5)

    @pytest.mark.parametrize("seed", range(100))
    def test_symmetric_nonnegative_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 6))
        X = rng.normal(size=(int(rng.integers(2, 8)), d))
        Y = rng.normal(loc=rng.normal(), size=(int(rng.integers(2, 8)), d))
        xy, yx = cmd(Tensor(X), Tensor(Y)).item(), cmd(Tensor(Y), Tensor(X)).item()
        assert xy >= 0.0
        assert xy == pytest.approx(yx, abs=1e-12)
        assert xy == pytest.approx(cmd_oracle(X, Y, 5), rel=1e-10)

    def test_constant_coordinate_uses_range_floor(self):
        X = np.zeros((3, 1))
        Y = np.full((3, 1), 1e-4)
        assert cmd(Tensor(X), Tensor(Y), 1).item() == pytest.approx(0.1)

    def test_bad_inputs(self):
        with pytest.raises(T.ShapeError):
            cmd(Tensor(np.ones((3, 2))), Tensor(np.ones((3, 3))))
        with pytest.raises(ValueError):
            cmd(Tensor(np.ones((1, 2))), Tensor(np.ones((3, 2))))


class TestOrthogonality:
    def _reps(self, h_a, h_v, g_a, g_v):
        z = Tensor(np.zeros((1, len(h_a))))
        return SubspaceReps(z, z, *(Tensor(np.array([r], float)) for r in (h_a, h_v, g_a, g_v)), z, z)

    def test_orthogonal_rows_zero(self):
        e = np.eye(4)
        reps = self._reps(e[0], e[1], e[2], e[3])
        assert abs(orthogonality_loss(reps, center=False).item()) < 1e-12

    def test_identical_rows_four(self):
        r = np.array([0.6, 0.8, 0.0])
        reps = self._reps(r, r, r, r)
        assert orthogonality_loss(reps, center=False).item() == pytest.approx(4.0, abs=1e-12)

    def test_single_row_batch_skips_centering(self):
        r = np.array([0.6, 0.8, 0.0])
        assert orthogonality_loss(self._reps(r, r, r, r)).item() == pytest.approx(4.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_scale_invariant(self, seed):
        reps = reps_from(np.random.default_rng(seed), 4, 6)
        base = orthogonality_loss(reps).item()
        doubled = SubspaceReps(reps.u_a, reps.u_v, *(T.scale(r, 2.0) for r in (reps.h_a, reps.h_v, reps.g_a, reps.g_v)),
                               reps.recon_a, reps.recon_v)
        assert orthogonality_loss(doubled).item() == pytest.approx(base, abs=1e-12)

    def test_specific_only_keeps_cross_terms(self):
        rng = np.random.default_rng(1)
        full = reps_from(rng, 3, 5)
        spec = SubspaceReps(full.u_a, full.u_v, full.h_a, full.h_v, None, None, full.recon_a, full.recon_v)
        h_a = T.sub(full.h_a, T.mean(full.h_a, axis=0, keepdims=True)).data
        h_v = T.sub(full.h_v, T.mean(full.h_v, axis=0, keepdims=True)).data
        h_a /= np.linalg.norm(h_a, axis=1, keepdims=True)
        h_v /= np.linalg.norm(h_v, axis=1, keepdims=True)
        expected = 2 * np.sum((h_a @ h_v.T) ** 2)
        assert orthogonality_loss(spec).item() == pytest.approx(expected, rel=1e-12)


class TestReconstruction:
    def test_worked_example(self):
        u = np.zeros((1, 128))
        u[0, 0] = 1.0
        z = Tensor(np.zeros((1, 128)))
        reps = SubspaceReps(Tensor(u), Tensor(u), None, None, None, None, z, z)
        assert reconstruction_loss(reps).item() == pytest.approx(0.0078125, abs=1e-15)

    def test_perfect_reconstruction(self):
        u = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        reps = SubspaceReps(u, u, None, None, None, None, u, u)
        assert reconstruction_loss(reps).item() == 0.0

    def test_modality_swap_symmetric(self):
        r = reps_from(np.random.default_rng(2), 3, 4)
        swapped = SubspaceReps(r.u_v, r.u_a, None, None, None, None, r.recon_v, r.recon_a)
        assert reconstruction_loss(swapped).item() == pytest.approx(reconstruction_loss(r).item(), abs=1e-15)

    def test_shape_mismatch(self):
        a = Tensor(np.zeros((2, 3)))
        with pytest.raises(T.ShapeError):
            reconstruction_loss(SubspaceReps(a, a, None, None, None, None, Tensor(np.zeros((2, 4))), a))


class TestClassification:
    def test_half(self):
        assert classification_loss(Tensor([0.5]), [1]).item() == pytest.approx(np.log(2), abs=1e-12)

    def test_two_sample_batch(self):
        assert classification_loss(Tensor([0.9, 0.1]), [1, 0]).item() == pytest.approx(0.10536, abs=1e-5)

    def test_clamped_at_extremes(self):
        assert classification_loss(Tensor([0.0]), [1]).item() == pytest.approx(-np.log(1e-7))

    def test_bad_label(self):
        with pytest.raises(ValueError):
            classification_loss(Tensor([0.5]), [2])


class TestCombined:
    def test_default_weight_arithmetic(self):
        b = LossBreakdown(0.1, 0.2, 0.3, 0.4, 0.88, Tensor(0.88))
        assert breakdown_residual(b, LossWeights()) < 1e-12

    def test_zero_weights_equal_classification(self):
        rng = np.random.default_rng(3)
        reps = reps_from(rng, 4, 5)
        y_hat, y = Tensor(rng.uniform(0.1, 0.9, 4)), np.array([0, 1, 1, 0.0])
        out = combined_loss(reps, y_hat, y, LossWeights(0.0, 0.0, 0.0))
        assert out.l_total == classification_loss(y_hat, y).item()
        assert (out.l_inv, out.l_orth, out.l_sim) == (0.0, 0.0, 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_breakdown_identity(self, seed):
        rng = np.random.default_rng(seed)
        reps = reps_from(rng, 4, 6)
        out = combined_loss(reps, Tensor(rng.uniform(0.1, 0.9, 4)), rng.integers(0, 2, 4))
        assert breakdown_residual(out, LossWeights()) < 1e-12
        assert out.total.item() == out.l_total

    def test_single_sequence_batch(self):
        reps = reps_from(np.random.default_rng(0), 1, 4)
        assert combined_loss(reps, Tensor([0.3]), [1]).l_inv == 0.0

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=-1.0).validate()


TERMS = {
    "cmd": lambda r, y_hat, y: cmd(r.g_a, r.g_v, 5),
    "orth": lambda r, y_hat, y: orthogonality_loss(r),
    "recon": lambda r, y_hat, y: reconstruction_loss(r),
    "cls": lambda r, y_hat, y: classification_loss(T.sigmoid(y_hat), y),
}


@pytest.mark.parametrize("term", sorted(TERMS))
@pytest.mark.parametrize("seed", range(20))
def test_term_gradients(term, seed):
    rng = np.random.default_rng(seed)
    B, d = int(rng.integers(2, 5)), int(rng.integers(2, 17))
    reps = reps_from(rng, B, d)
    logits = Tensor(rng.normal(size=B))
    y = rng.integers(0, 2, B)
    err = finite_diff_check(lambda: TERMS[term](reps, logits, y), leaves(reps) + [logits], max_coords=40, seed=seed)
    assert err < 1e-3
