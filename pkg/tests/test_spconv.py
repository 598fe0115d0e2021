import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitconv.errors import ConfigError, DimensionError, StateError, VariantError
from splitconv.spconv import (
    Fusion,
    RepMode,
    SPConvConfig,
    SPConvParams,
    init_params,
    redundant_branch,
    representative_branch,
    spconv_backward,
    spconv_forward,
    spconv_param_count,
)
from splitconv.tensor import ConvGeom, conv2d_backward, conv2d_naive, fusion_weights, gap

from conftest import central_difference, max_rel_error
from oracles import reference_spconv
from test_tensor import block_diagonal_dense

ALL_VARIANTS = [
    dict(rep_mode=RepMode.GWC_PLUS_PWC, redundant_enabled=True, fusion=Fusion.ATTENTION),
    dict(rep_mode=RepMode.GWC_THEN_PWC, redundant_enabled=True, fusion=Fusion.ATTENTION),
    dict(rep_mode=RepMode.VANILLA, redundant_enabled=True, fusion=Fusion.ATTENTION),
    dict(rep_mode=RepMode.GWC_PLUS_PWC, redundant_enabled=True, fusion=Fusion.SUM),
    dict(rep_mode=RepMode.GWC_PLUS_PWC, redundant_enabled=False, fusion=Fusion.SUM),
    dict(rep_mode=RepMode.GWC_THEN_PWC, redundant_enabled=True, fusion=Fusion.SUM),
    dict(rep_mode=RepMode.VANILLA, redundant_enabled=True, fusion=Fusion.SUM),
    dict(rep_mode=RepMode.VANILLA, redundant_enabled=False, fusion=Fusion.ATTENTION),
    dict(rep_mode=RepMode.GWC_THEN_PWC, redundant_enabled=False, fusion=Fusion.ATTENTION),
]


class TestConfig:
    def test_counts(self):
        c = SPConvConfig(64, 64, alpha=0.5, groups=2)
        assert (c.rep_count, c.red_count) == (32, 32)

    def test_rounding_then_floor_to_group_multiple(self):
        # round(0.3 * 10) = 3 -> floor to multiple of 2 -> 2
        c = SPConvConfig(10, 8, alpha=0.3, groups=2)
        assert c.rep_count == 2 and c.red_count == 8

    def test_too_few_representative(self):
        with pytest.raises(ConfigError):
            SPConvConfig(16, 16, alpha=1 / 16, groups=2)

    def test_no_redundant_left(self):
        with pytest.raises(ConfigError):
            SPConvConfig(16, 16, alpha=1.0, groups=2)

    def test_output_divisibility(self):
        with pytest.raises(ConfigError):
            SPConvConfig(16, 15, alpha=0.5, groups=2)

    def test_misaligned_padding(self):
        with pytest.raises(ConfigError):
            SPConvConfig(16, 16, padding=0)

    def test_alpha_range(self):
        with pytest.raises(ConfigError):
            SPConvConfig(16, 16, alpha=0)


class TestInit:
    def test_deterministic(self):
        c = SPConvConfig(16, 16)
        a, b = init_params(c, 3), init_params(c, 3)
        for k in a.blocks():
            assert a.blocks()[k].tobytes() == b.blocks()[k].tobytes()

    def test_scalar_count(self):
        c = SPConvConfig(64, 64, kernel=3, alpha=0.5, groups=2)
        p = init_params(c, 0)
        assert p.size == 9 * 16 * 64 + 32 * 64 + 32 * 64 == 13312
        assert spconv_param_count(c) == 13312

    def test_std(self):
        c = SPConvConfig(128, 128, alpha=0.5, groups=2)
        w = init_params(c, 11).w_gwc
        fan_in = 32 * 9
        assert w.size >= 1e4
        assert abs(w.std() / math.sqrt(2 / fan_in) - 1) < 0.1
        assert abs(w.mean()) < 0.1 * math.sqrt(2 / fan_in)

    def test_unused_blocks_absent(self):
        p = init_params(SPConvConfig(16, 16, rep_mode=RepMode.VANILLA, redundant_enabled=False, alpha=1.0), 0)
        assert set(p.blocks()) == {"w_dense"}


class TestBranches:
    def setup_method(self):
        self.rng = np.random.default_rng(5)
        self.cfg = SPConvConfig(8, 6, alpha=0.5, groups=2)
        self.p = init_params(self.cfg, 1)
        self.x = self.rng.standard_normal((2, 8, 6, 6))

    def test_zero_pwc(self):
        self.p.w_pwc_rep[:] = 0
        u3 = representative_branch(self.x[:, :4], self.p, self.cfg)
        ref = conv2d_naive(self.x[:, :4], self.p.w_gwc, ConvGeom(1, 1, 2))
        np.testing.assert_allclose(u3, ref, atol=1e-12)

    def test_zero_gwc(self):
        self.p.w_gwc[:] = 0
        u3 = representative_branch(self.x[:, :4], self.p, self.cfg)
        ref = conv2d_naive(self.x[:, :4], self.p.w_pwc_rep, ConvGeom())
        np.testing.assert_allclose(u3, ref, atol=1e-12)

    def test_composed_dense_oracle(self):
        u3 = representative_branch(self.x[:, :4], self.p, self.cfg)
        dense = block_diagonal_dense(self.p.w_gwc, 2)
        ref = conv2d_naive(self.x[:, :4], dense, ConvGeom(1, 1)) + conv2d_naive(
            self.x[:, :4], self.p.w_pwc_rep, ConvGeom()
        )
        np.testing.assert_allclose(u3, ref, atol=1e-9)

    def test_rep_channel_mismatch(self):
        with pytest.raises(DimensionError):
            representative_branch(self.x[:, :3], self.p, self.cfg)

    def test_redundant_identity(self):
        cfg = SPConvConfig(12, 6, alpha=0.5, groups=2)
        p = init_params(cfg, 0)
        p.w_pwc_red = np.eye(6)[:, :, None, None]
        x = self.rng.standard_normal((2, 6, 5, 5))
        np.testing.assert_array_equal(redundant_branch(x, p, cfg), x)

    def test_redundant_zero_and_oracle(self):
        x = self.rng.standard_normal((2, 4, 6, 6))
        ref = conv2d_naive(x, self.p.w_pwc_red, ConvGeom())
        np.testing.assert_allclose(redundant_branch(x, self.p, self.cfg), ref, atol=1e-9)
        self.p.w_pwc_red[:] = 0
        assert not redundant_branch(x, self.p, self.cfg).any()

    def test_redundant_disabled(self):
        cfg = SPConvConfig(8, 6, alpha=0.5, redundant_enabled=False)
        with pytest.raises(VariantError):
            redundant_branch(self.x[:, 4:], init_params(cfg, 0), cfg)

    def test_strided_branches_align(self):
        cfg = SPConvConfig(8, 6, alpha=0.5, stride=2)
        y, _ = spconv_forward(self.rng.standard_normal((1, 8, 7, 7)), init_params(cfg, 0), cfg)
        assert y.shape == (1, 6, 4, 4)


class TestForward:
    def test_degenerate_vanilla(self):
        rng = np.random.default_rng(2)
        cfg = SPConvConfig(6, 5, alpha=1.0, groups=1, rep_mode=RepMode.VANILLA, redundant_enabled=False)
        p = init_params(cfg, 0)
        x = rng.standard_normal((2, 6, 7, 7))
        y, _ = spconv_forward(x, p, cfg)
        np.testing.assert_allclose(y, conv2d_naive(x, p.w_dense, ConvGeom(1, 1)), atol=1e-9)

    def test_zero_redundant_weights(self):
        rng = np.random.default_rng(3)
        cfg = SPConvConfig(8, 8)
        p = init_params(cfg, 0)
        p.w_pwc_red[:] = 0
        x = rng.standard_normal((2, 8, 5, 5))
        y, _ = spconv_forward(x, p, cfg)
        u3 = representative_branch(x[:, :4], p, cfg)
        beta, _ = fusion_weights(gap(u3), np.zeros((2, 8)))
        np.testing.assert_allclose(y, beta[:, :, None, None] * u3, atol=1e-12)

    def test_composition_oracle(self):
        rng = np.random.default_rng(4)
        cfg = SPConvConfig(16, 16, alpha=0.5, groups=2)
        p = init_params(cfg, 9)
        x = rng.standard_normal((2, 16, 8, 8))
        y, _ = spconv_forward(x, p, cfg)
        np.testing.assert_allclose(y, reference_spconv(x, p, cfg), atol=1e-9)

    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    def test_output_channels(self, variant):
        cfg = SPConvConfig(8, 6, alpha=0.5, stride=2, **variant)
        y, _ = spconv_forward(np.ones((1, 8, 6, 6)), init_params(cfg, 0), cfg)
        assert y.shape == (1, 6, 3, 3)

    def test_wrong_input_channels(self):
        cfg = SPConvConfig(8, 6)
        with pytest.raises(DimensionError):
            spconv_forward(np.ones((1, 7, 5, 5)), init_params(cfg, 0), cfg)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31), stride=st.integers(1, 2))
    def test_attention_is_convex(self, seed, stride):
        r = np.random.default_rng(seed)
        cfg = SPConvConfig(8, 4, alpha=0.5, stride=stride)
        p = init_params(cfg, seed % 1000)
        x = r.standard_normal((2, 8, 5, 5))
        y, cache = spconv_forward(x, p, cfg)
        lo = np.minimum(cache.u3, cache.u1)
        hi = np.maximum(cache.u3, cache.u1)
        assert np.all(y >= lo - 1e-12) and np.all(y <= hi + 1e-12)

    def test_deterministic(self):
        cfg = SPConvConfig(8, 8)
        p = init_params(cfg, 0)
        x = np.random.default_rng(0).standard_normal((2, 8, 5, 5))
        y1, c1 = spconv_forward(x, p, cfg)
        y2, c2 = spconv_forward(x, p, cfg)
        assert y1.tobytes() == y2.tobytes()
        g = np.ones_like(y1)
        assert spconv_backward(c1, g, p, cfg)[0].tobytes() == spconv_backward(c2, g, p, cfg)[0].tobytes()


def gradient_errors(cfg, shape, seed=0):
    r = np.random.default_rng(seed)
    x = r.uniform(-1, 1, shape)
    p = init_params(cfg, seed)
    for w in p.blocks().values():
        w[:] = r.uniform(-1, 1, w.shape)
    y, cache = spconv_forward(x, p, cfg)
    probe = r.uniform(-1, 1, y.shape)

    def loss():
        return float(np.sum(spconv_forward(x, p, cfg)[0] * probe))

    gx, gp = spconv_backward(cache, probe, p, cfg)
    errs = {"x": max_rel_error(gx, central_difference(loss, x))}
    for name, w in p.blocks().items():
        errs[name] = max_rel_error(getattr(gp, name), central_difference(loss, w))
    return errs


class TestBackward:
    @pytest.mark.parametrize("variant", ALL_VARIANTS)
    @pytest.mark.parametrize("stride", [1, 2])
    def test_finite_differences(self, variant, stride):
        cfg = SPConvConfig(8, 4, alpha=0.5, stride=stride, **variant)
        errs = gradient_errors(cfg, (1, 8, 5, 5), seed=stride)
        assert max(errs.values()) < 1e-4, errs

    def test_sum_single_branch_passthrough(self):
        cfg = SPConvConfig(8, 4, rep_mode=RepMode.VANILLA, redundant_enabled=False)
        p = init_params(cfg, 0)
        x = np.random.default_rng(0).standard_normal((2, 8, 5, 5))
        y, cache = spconv_forward(x, p, cfg)
        g = np.random.default_rng(1).standard_normal(y.shape)
        gx, gp = spconv_backward(cache, g, p, cfg)
        ref_x, ref_w = conv2d_backward(x[:, :4], p.w_dense, ConvGeom(1, 1), g)
        np.testing.assert_array_equal(gx[:, :4], ref_x)
        assert not gx[:, 4:].any()
        np.testing.assert_array_equal(gp.w_dense, ref_w)

    def test_zero_grad(self):
        cfg = SPConvConfig(8, 4)
        p = init_params(cfg, 0)
        y, cache = spconv_forward(np.ones((1, 8, 4, 4)), p, cfg)
        gx, gp = spconv_backward(cache, np.zeros_like(y), p, cfg)
        assert not gx.any()
        assert all(not a.any() for a in gp.blocks().values())

    def test_config_mismatch(self):
        cfg = SPConvConfig(8, 4)
        p = init_params(cfg, 0)
        y, cache = spconv_forward(np.ones((1, 8, 4, 4)), p, cfg)
        with pytest.raises(StateError):
            spconv_backward(cache, y, p, SPConvConfig(8, 4, fusion=Fusion.SUM))


class TestParamCount:
    def test_ratio_claim(self):
        vanilla = 3 * 3 * 64 * 64
        sp = spconv_param_count(SPConvConfig(64, 64, alpha=0.5, groups=2))
        assert (vanilla, sp) == (36864, 13312)
        assert round(vanilla / sp, 1) == 2.8

    def test_degenerate(self):
        cfg = SPConvConfig(32, 48, alpha=1.0, groups=1, rep_mode=RepMode.VANILLA, redundant_enabled=False)
        assert spconv_param_count(cfg) == 9 * 32 * 48

    def test_matches_allocation(self):
        r = np.random.default_rng(0)
        checked = 0
        while checked < 20:
            kw = dict(
                in_channels=int(r.integers(2, 65)),
                out_channels=2 * int(r.integers(1, 33)),
                kernel=int(r.choice([1, 3, 5])),
                alpha=float(r.choice([1 / 8, 1 / 4, 1 / 2, 3 / 4])),
                groups=int(r.choice([1, 2])),
                **ALL_VARIANTS[int(r.integers(len(ALL_VARIANTS)))],
            )
            try:
                cfg = SPConvConfig(**kw)
            except ConfigError:
                continue
            assert spconv_param_count(cfg) == init_params(cfg, 0).size
            checked += 1

    def test_eq10_identity(self):
        for L, M, k, a, g in itertools.product([16, 32, 64], [16, 64], [3, 5], [1 / 2, 1 / 4], [1, 2, 4]):
            cfg = SPConvConfig(L, M, kernel=k, alpha=a, groups=g)
            assert spconv_param_count(cfg) == round((k * k * a / g + 1) * L * M)

    def test_monotone(self):
        L = M = 64
        alphas = [1 / 16, 1 / 8, 1 / 4, 1 / 2, 3 / 4]
        counts = [spconv_param_count(SPConvConfig(L, M, alpha=a, groups=2)) for a in alphas]
        assert counts == sorted(counts)
        by_g = [spconv_param_count(SPConvConfig(L, M, alpha=0.5, groups=g)) for g in [1, 2, 4, 8]]
        assert by_g == sorted(by_g, reverse=True)
