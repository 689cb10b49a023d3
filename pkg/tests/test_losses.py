import math

import numpy as np
import pytest
import torch

from carl_dehaze.losses import (
    CarlConfig,
    LossWeights,
    carl_layer,
    carl_total,
    consistency_loss,
    rec_loss,
    total_loss,
)
from carl_dehaze.percep import ExtractorConfig, FeatureExtractor, FeaturePyramid


@pytest.fixture
def extractor():
    return FeatureExtractor(ExtractorConfig(kind="fixed-random", seed=0))


def softmax_oracle(d_pos, d_negs, tau):
    # direct -log softmax in python floats, no log-sum-exp trick
    num = math.exp(-d_pos / tau)
    den = num + sum(math.exp(-d / tau) for d in d_negs)
    return -math.log(num / den)


class TestConfigs:
    def test_carl_defaults(self):
        cfg = CarlConfig()
        assert cfg.tau == 0.5 and cfg.k == 5

    def test_carl_invalid(self):
        with pytest.raises(ValueError):
            CarlConfig(tau=0.0)
        with pytest.raises(ValueError):
            CarlConfig(k=0)

    def test_weights_defaults(self):
        w = LossWeights()
        assert w.lambda1 == 1.0 and w.lambda2 == 10.0

    def test_weights_invalid(self):
        with pytest.raises(ValueError):
            LossWeights(lambda1=-0.1)
        with pytest.raises(ValueError):
            LossWeights(lambda2=float("inf"))


class TestRecLoss:
    def test_zero_for_identical(self):
        x = torch.rand(2, 3, 8, 8)
        assert float(rec_loss(x, x)) == 0.0

    def test_matches_scalar_loop(self):
        g = torch.Generator().manual_seed(1)
        a = torch.rand(1, 3, 4, 4, generator=g)
        b = torch.rand(1, 3, 4, 4, generator=g)
        total = sum(
            abs(float(a.flatten()[i]) - float(b.flatten()[i]))
            for i in range(a.numel())
        )
        assert float(rec_loss(a, b)) == pytest.approx(total / a.numel(), rel=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rec_loss(torch.rand(1, 3, 4, 4), torch.rand(1, 3, 4, 5))


class TestCarlLayer:
    def test_equal_distances_closed_form(self):
        # all six logits equal -> loss = log(K + 1) = log 6
        val = carl_layer(1.3, [1.3] * 5, tau=0.5)
        assert float(val) == pytest.approx(math.log(6.0), abs=1e-12)

    def test_matches_naive_softmax_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            d_pos = float(rng.uniform(0, 4))
            d_negs = rng.uniform(0, 4, size=5).tolist()
            tau = float(rng.uniform(0.1, 2.0))
            expect = softmax_oracle(d_pos, d_negs, tau)
            assert float(carl_layer(d_pos, d_negs, tau)) == pytest.approx(
                expect, abs=1e-12
            )

    def test_stable_for_huge_distances(self):
        # naive softmax would overflow exp(2000)
        val = carl_layer(1000.0, [0.0] * 5, tau=0.5)
        assert math.isfinite(float(val))
        assert float(val) == pytest.approx(2000.0 + math.log(5.0), rel=1e-9)

    def test_decreases_as_positive_gets_closer(self):
        negs = [1.0] * 5
        vals = [float(carl_layer(d, negs, 0.5)) for d in (2.0, 1.0, 0.5, 0.1)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_increases_as_negatives_get_closer(self):
        vals = [
            float(carl_layer(1.0, [d] * 5, 0.5)) for d in (3.0, 2.0, 1.0, 0.5)
        ]
        assert all(a < b for a, b in zip(vals, vals[1:]))

    def test_positive(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            v = carl_layer(
                float(rng.uniform(0, 3)), rng.uniform(0, 3, size=5).tolist(), 0.5
            )
            assert float(v) > 0.0

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            carl_layer(1.0, [], 0.5)
        with pytest.raises(ValueError):
            carl_layer(1.0, [1.0], 0.0)


def pyramids(extractor, n_images, seed):
    g = torch.Generator().manual_seed(seed)
    return [
        extractor.extract(torch.rand(1, 3, 32, 32, generator=g))
        for _ in range(n_images)
    ]


class TestCarlTotal:
    def test_equal_per_layer_value_weighting(self, extractor):
        # same pyramid everywhere: every layer contributes log 6, so the
        # total is log 6 times the sum of layer weights (47/32)
        anchor = pyramids(extractor, 1, 0)[0]
        cfg = CarlConfig(tau=0.5, k=5)
        w = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)
        val = carl_total(anchor, anchor, [anchor] * 5, cfg, w)
        assert float(val) == pytest.approx(math.log(6.0) * 47 / 32, rel=1e-6)

    def test_matches_per_layer_recomputation(self, extractor):
        anchor, pos, *negs = pyramids(extractor, 7, 1)
        cfg = CarlConfig(tau=0.5, k=5)
        w = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)
        val = carl_total(anchor, pos, negs, cfg, w)
        expect = 0.0
        for m in range(5):
            d_pos = float((anchor.maps[m] - pos.maps[m]).abs().mean())
            d_negs = [float((anchor.maps[m] - n.maps[m]).abs().mean()) for n in negs]
            expect += w[m] * softmax_oracle(d_pos, d_negs, 0.5)
        assert float(val) == pytest.approx(expect, rel=1e-5)

    def test_gradient_only_through_anchor(self, extractor):
        x = torch.rand(1, 3, 32, 32, requires_grad=True)
        p = torch.rand(1, 3, 32, 32, requires_grad=True)
        n = torch.rand(1, 3, 32, 32, requires_grad=True)
        cfg = CarlConfig(tau=0.5, k=1)
        val = carl_total(
            extractor.extract(x),
            extractor.extract(p),
            [extractor.extract(n)],
            cfg,
            (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0),
        )
        val.backward()
        assert x.grad is not None and float(x.grad.abs().max()) > 0.0
        assert p.grad is None or float(p.grad.abs().max()) == 0.0
        assert n.grad is None or float(n.grad.abs().max()) == 0.0

    def test_gradient_matches_finite_differences(self, extractor):
        # central differences in float64 on a handful of input pixels
        torch.manual_seed(4)
        x0 = torch.rand(1, 3, 32, 32, dtype=torch.float64)
        pos = extractor.extract(torch.rand(1, 3, 32, 32, dtype=torch.float64))
        negs = [
            extractor.extract(torch.rand(1, 3, 32, 32, dtype=torch.float64))
            for _ in range(5)
        ]
        cfg = CarlConfig(tau=0.5, k=5)
        w = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1.0)

        def f(x):
            return carl_total(extractor.extract(x), pos, negs, cfg, w)

        x = x0.clone().requires_grad_(True)
        f(x).backward()
        h = 1e-5
        rng = np.random.default_rng(5)
        for _ in range(8):
            i = tuple(int(rng.integers(s)) for s in x0.shape)
            xp, xm = x0.clone(), x0.clone()
            xp[i] += h
            xm[i] -= h
            fd = (float(f(xp)) - float(f(xm))) / (2 * h)
            an = float(x.grad[i])
            denom = max(abs(fd), abs(an), 1e-8)
            assert abs(fd - an) / denom < 1e-4

    def test_wrong_negative_count(self, extractor):
        anchor, pos, n1 = pyramids(extractor, 3, 6)
        with pytest.raises(ValueError):
            carl_total(anchor, pos, [n1], CarlConfig(k=2), (1,) * 5)

    def test_wrong_weight_count(self, extractor):
        anchor, pos, n1 = pyramids(extractor, 3, 7)
        with pytest.raises(ValueError):
            carl_total(anchor, pos, [n1], CarlConfig(k=1), (1.0, 1.0))

    def test_depth_mismatch(self, extractor):
        anchor, pos, n1 = pyramids(extractor, 3, 8)
        shallow = FeaturePyramid(maps=n1.maps[:3])
        with pytest.raises(ValueError):
            carl_total(anchor, pos, [shallow], CarlConfig(k=1), (1,) * 5)


class TestConsistency:
    def test_zero_for_identical(self):
        x = torch.rand(2, 3, 8, 8)
        assert float(consistency_loss(x, x.clone())) == 0.0

    def test_teacher_detached(self):
        s = torch.rand(1, 3, 8, 8, requires_grad=True)
        t = torch.rand(1, 3, 8, 8, requires_grad=True)
        consistency_loss(s, t).backward()
        assert s.grad is not None
        assert t.grad is None

    def test_symmetric_value(self):
        a, b = torch.rand(1, 3, 8, 8), torch.rand(1, 3, 8, 8)
        assert float(consistency_loss(a, b)) == pytest.approx(
            float(consistency_loss(b, a)), rel=1e-6
        )


class TestTotalLoss:
    def test_breakdown_identity_exact(self):
        w = LossWeights(lambda1=1.0, lambda2=10.0)
        rng = np.random.default_rng(9)
        for _ in range(100):
            rec = torch.tensor(float(rng.uniform(0, 1)))
            cr = torch.tensor(float(rng.uniform(0, 1)))
            carl = torch.tensor(float(rng.uniform(0, 3)))
            _, br = total_loss(rec, cr, carl, w)
            assert br.total == br.rec + w.lambda1 * br.consistency + w.lambda2 * br.carl

    def test_tensor_total_grad(self):
        w = LossWeights(lambda1=2.0, lambda2=3.0)
        rec = torch.tensor(1.0, requires_grad=True)
        cr = torch.tensor(1.0, requires_grad=True)
        carl = torch.tensor(1.0, requires_grad=True)
        tot, _ = total_loss(rec, cr, carl, w)
        tot.backward()
        assert float(rec.grad) == 1.0
        assert float(cr.grad) == 2.0
        assert float(carl.grad) == 3.0

    def test_nonfinite_rejected(self):
        w = LossWeights()
        with pytest.raises(FloatingPointError):
            total_loss(torch.tensor(float("nan")), 0.0, 0.0, w)

    def test_zero_weights_drop_terms(self):
        w = LossWeights(lambda1=0.0, lambda2=0.0)
        tot, br = total_loss(0.25, 9.0, 9.0, w)
        assert br.total == 0.25

    def test_record_keys(self):
        _, br = total_loss(0.1, 0.2, 0.3, LossWeights())
        rec = br.to_record(step=7, lr=1e-4)
        assert set(rec) == {"step", "rec", "carl", "cr", "total", "lr"}
        assert rec["step"] == 7 and rec["lr"] == 1e-4
