import math

import numpy as np
import pytest

from poinhier.config import LossToggles, TrainConfig
from poinhier.errors import FormatError, InvalidInput, UnsupportedVersion
from poinhier.geometry import GeometryConfig, exp_map0, hyperbolic_distance
from poinhier.hierarchy import HslConfig, loss_hsl
from poinhier.model import (
    ModelParams,
    StepRandom,
    classifier_logit,
    forward_embed,
    load_model,
    loss_cls,
    model_from_bytes,
    model_to_bytes,
    save_model,
    total_loss,
)
from poinhier.prototypes import EmbeddingBatch, loss_ppl
from poinhier.whitening import loss_pfw


def small_cfg(**kw):
    base = dict(g=GeometryConfig(c=1.0, dim=4), K_b=2, K_s=2, K_top=3, B=8,
                hsl=HslConfig(K=1), k_b=0.1, k_s=0.05, init_scale=0.3)
    base.update(kw)
    return TrainConfig(**base)


def random_state(seed, cfg=None, n=8, d_in=5):
    cfg = cfg or small_cfg()
    rng = np.random.default_rng(seed)
    params = ModelParams.init(cfg, d_in, rng)
    params.cls_weight[:] = rng.normal(size=params.cls_weight.shape)
    params.cls_bias[...] = rng.normal()
    X = rng.normal(size=(n, d_in))
    Xa = X + 0.2 * rng.normal(size=X.shape)
    y = np.array([0, 1] * (n // 2))
    return cfg, params, X, Xa, y


def scratch_bce(X, y, params):
    protos, _ = params.bank.materialize()
    total = 0.0
    for x, label in zip(X, y):
        z = exp_map0(params.projector_weight @ x + params.projector_bias, params.g)
        logit = sum(w * hyperbolic_distance(z, p, params.g) for w, p in zip(params.cls_weight, protos))
        logit += float(params.cls_bias)
        prob = 1 / (1 + math.exp(-logit))
        total += -(label * math.log(prob) + (1 - label) * math.log(1 - prob))
    return total / len(y)


class TestForward:
    def test_zero_projector(self):
        cfg, params, X, _, _ = random_state(0)
        params.projector_weight[:] = 0
        assert np.array_equal(forward_embed(X, params), np.zeros((len(X), 4)))

    def test_identity_small_input(self):
        cfg = small_cfg()
        params = ModelParams.init(cfg, 4, np.random.default_rng(0))
        params.projector_weight[:] = np.eye(4)
        x = np.array([1e-4, -2e-4, 3e-4, 0.0])
        np.testing.assert_allclose(forward_embed(x, params)[0], x, rtol=1e-7)

    def test_composition(self):
        _, params, X, _, _ = random_state(1)
        expect = exp_map0(X @ params.projector_weight.T + params.projector_bias, params.g)
        assert np.array_equal(forward_embed(X, params), expect)

    def test_dimension_mismatch(self):
        _, params, _, _, _ = random_state(2)
        with pytest.raises(InvalidInput):
            forward_embed(np.zeros((2, 7)), params)


class TestClassifier:
    def test_zero_weights(self):
        _, params, X, _, _ = random_state(3)
        params.cls_weight[:] = 0
        params.cls_bias[...] = 0
        assert np.all(classifier_logit(forward_embed(X, params), params) == 0)

    def test_one_hot_at_prototype(self):
        _, params, _, _, _ = random_state(4)
        protos, _ = params.bank.materialize()
        params.cls_weight[:] = 0
        params.cls_weight[2] = 1
        params.cls_bias[...] = 0
        assert classifier_logit(protos[2], params)[0] == 0.0

    def test_matches_scratch(self):
        _, params, X, _, _ = random_state(5)
        z = forward_embed(X, params)
        protos, _ = params.bank.materialize()
        expect = [sum(w * hyperbolic_distance(zi, p, params.g) for w, p in zip(params.cls_weight, protos))
                  + float(params.cls_bias) for zi in z]
        np.testing.assert_allclose(classifier_logit(z, params), expect, rtol=1e-12)

    def test_weight_scaling(self):
        _, params, X, _, _ = random_state(6)
        z = forward_embed(X, params)
        base = classifier_logit(z, params) - float(params.cls_bias)
        params.cls_weight *= 3.0
        scaled = classifier_logit(z, params) - float(params.cls_bias)
        np.testing.assert_allclose(scaled, 3.0 * base, rtol=1e-13)


class TestClsLoss:
    def test_zero_logit(self):
        _, params, X, _, y = random_state(7)
        params.cls_weight[:] = 0
        params.cls_bias[...] = 0
        assert loss_cls(X, y, params)[0] == pytest.approx(math.log(2), rel=1e-14)

    def test_saturated(self):
        _, params, X, _, _ = random_state(8, n=2)
        params.cls_weight[:] = 0
        for label, bias in ((1, 20.0), (0, -20.0)):
            params.cls_bias[...] = bias
            assert loss_cls(X[:1], [label], params)[0] < 1e-8

    def test_matches_scratch(self):
        for seed in range(5):
            _, params, X, _, y = random_state(seed)
            assert loss_cls(X, y, params)[0] == pytest.approx(scratch_bce(X, y, params), rel=1e-11)

    def test_no_bias_flag(self):
        cfg, params, X, _, y = random_state(9, small_cfg(cls_bias=False))
        params.cls_bias[...] = 5.0
        value, grads = loss_cls(X, y, params)
        assert grads["cls_bias"] == 0.0
        params.cls_bias[...] = -3.0
        assert loss_cls(X, y, params)[0] == value


class TestTotalLoss:
    def test_cls_only(self):
        cfg, params, X, Xa, y = random_state(10, small_cfg(loss_toggles=LossToggles(False, False, False)))
        value, grads, _ = total_loss(X, Xa, y, params, cfg)
        ref, ref_grads = loss_cls(X, y, params)
        assert value == ref
        for name in ref_grads:
            np.testing.assert_allclose(grads[name], ref_grads[name], rtol=1e-13, atol=1e-16)

    def test_sum_of_terms(self):
        for seed in range(10):
            cfg, params, X, Xa, y = random_state(seed)
            value, _, parts = total_loss(X, Xa, y, params, cfg,
                                         StepRandom(np.random.default_rng(seed), np.random.default_rng(seed + 1)))
            z, za = forward_embed(X, params), forward_embed(Xa, params)
            batch = EmbeddingBatch(z, za, y)
            expect = (loss_cls(X, y, params)[0] + loss_ppl(batch, params.bank).value
                      + loss_hsl(parts["triplets"], params.bank, cfg.hsl).value
                      + loss_pfw(batch, params.g, cfg.k_b, cfg.k_s).value)
            assert value == pytest.approx(expect, rel=1e-12)
            assert value == pytest.approx(parts["cls"] + parts["ppl"] + parts["hsl"] + parts["pfw"], rel=1e-15)

    def test_gradient_is_sum_of_toggled_parts(self):
        cfg_all, params, X, Xa, y = random_state(11)
        rand = StepRandom(np.random.default_rng(0), np.random.default_rng(1))
        _, _, parts = total_loss(X, Xa, y, params, cfg_all, rand)
        trip = parts["triplets"]
        names = params.tensors().keys()
        _, g_all, _ = total_loss(X, Xa, y, params, cfg_all, triplets=trip)
        g_cls = total_loss(X, Xa, y, params, small_cfg(loss_toggles=LossToggles(False, False, False)))[1]
        summed = {n: -2 * g_cls[n] for n in names}
        for toggles in (LossToggles(True, False, False), LossToggles(False, True, False),
                        LossToggles(False, False, True)):
            gi = total_loss(X, Xa, y, params, small_cfg(loss_toggles=toggles), triplets=trip)[1]
            for n in names:
                summed[n] = summed[n] + gi[n]
        for n in names:
            np.testing.assert_allclose(g_all[n], summed[n], rtol=1e-10, atol=1e-12)

    def test_hsl_needs_randomness(self):
        cfg, params, X, Xa, y = random_state(12)
        with pytest.raises(InvalidInput):
            total_loss(X, Xa, y, params, cfg)


class TestSerialization:
    def test_round_trip_is_byte_exact(self, tmp_path):
        cfg, params, _, _, _ = random_state(13)
        path = tmp_path / "m.phnm"
        save_model(params, path, cfg)
        loaded, cfg2 = load_model(path)
        assert cfg2 == cfg
        assert model_to_bytes(loaded, cfg2) == path.read_bytes()
        for name, arr in params.tensors().items():
            assert arr.tobytes() == loaded.tensors()[name].tobytes()

    def test_without_config(self):
        _, params, _, _, _ = random_state(14)
        loaded, cfg = model_from_bytes(model_to_bytes(params))
        assert cfg is None and loaded.use_bias == params.use_bias

    def test_bad_magic(self):
        _, params, _, _, _ = random_state(15)
        data = bytearray(model_to_bytes(params))
        data[:4] = b"XXXX"
        with pytest.raises(FormatError):
            model_from_bytes(bytes(data))

    def test_version(self):
        _, params, _, _, _ = random_state(16)
        data = bytearray(model_to_bytes(params))
        data[4] = 9
        with pytest.raises(UnsupportedVersion):
            model_from_bytes(bytes(data))

    @pytest.mark.parametrize("cut", [3, 20, 200, -1])
    def test_truncated(self, cut):
        _, params, _, _, _ = random_state(17)
        data = model_to_bytes(params)
        with pytest.raises(FormatError):
            model_from_bytes(data[:cut])

    def test_corrupt_header(self):
        _, params, _, _, _ = random_state(18)
        data = bytearray(model_to_bytes(params))
        data[16] = ord("#")
        with pytest.raises(FormatError):
            model_from_bytes(bytes(data))
