import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from cycleisp.errors import ArgumentError, DimensionError
from cycleisp.models import BranchConfig, ColorConfig, CycleConfig, CycleISP
from cycleisp.objectives import PSNR_CAP, loss_joint, loss_r2s, loss_s2r, psnr, ssim

from oracles import fd_gradient


def _s2r_oracle(a, b, eps):
    total_l1 = total_log = 0.0
    n = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        total_l1 += abs(x - y)
        total_log += abs(math.log(max(x, eps)) - math.log(max(y, eps)))
        n += 1
    return total_l1 / n + total_log / n


class TestLosses:
    def test_s2r_identity(self):
        x = torch.rand(2, 8, 8, dtype=torch.float64)
        assert loss_s2r(x, x).item() == 0.0

    def test_s2r_clamp_semantics(self):
        eps = 1e-4
        v = loss_s2r(torch.tensor([eps / 2], dtype=torch.float64), torch.tensor([eps], dtype=torch.float64), eps)
        assert v.components["log_l1"].item() == 0.0
        assert v.item() == pytest.approx(eps / 2, rel=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_s2r_elementwise_oracle(self, seed):
        g = torch.Generator().manual_seed(seed)
        a = torch.rand(3, 6, 6, dtype=torch.float64, generator=g) - 0.1
        b = torch.rand(3, 6, 6, dtype=torch.float64, generator=g)
        assert abs(loss_s2r(a, b, 1e-3).item() - _s2r_oracle(a.numpy(), b.numpy(), 1e-3)) < 1e-12

    def test_r2s_cases(self):
        x = torch.rand(1, 3, 5, 5, dtype=torch.float64)
        assert loss_r2s(x, x).item() == 0.0
        assert loss_r2s(x + 0.1, x).item() == pytest.approx(0.1, abs=1e-12)
        y = torch.rand(1, 3, 5, 5, dtype=torch.float64)
        oracle = sum(abs(p - q) for p, q in zip(x.ravel().tolist(), y.ravel().tolist())) / x.numel()
        assert abs(loss_r2s(x, y).item() - oracle) < 1e-12

    def test_s2r_nonnegative_and_zero_only_above_clamp(self):
        a = torch.tensor([1e-6, 0.5], dtype=torch.float64)
        b = torch.tensor([1e-7, 0.5], dtype=torch.float64)
        # differences below the clamp only reach the linear term
        v = loss_s2r(a, b, 1e-4)
        assert v.components["log_l1"].item() == 0.0 and v.item() > 0

    def test_shape_and_argument_errors(self):
        with pytest.raises(DimensionError):
            loss_r2s(torch.zeros(2, 2), torch.zeros(2, 3))
        with pytest.raises(ArgumentError):
            loss_s2r(torch.zeros(2), torch.zeros(2), 0.0)
        for beta in (0.0, 1.0, -0.5, 1.5):
            with pytest.raises(ArgumentError):
                loss_joint(torch.zeros(2), torch.zeros(2), torch.zeros(3), torch.zeros(3), beta)

    def test_joint_convex_combination(self):
        raw_hat = torch.full((4,), 0.3, dtype=torch.float64)
        raw_gt = torch.full((4,), 0.3, dtype=torch.float64)
        raw_gt[:2] = 0.5
        s2r = loss_s2r(raw_hat, raw_gt).item()
        rgb_gt = torch.zeros(4, dtype=torch.float64)
        rgb_hat = torch.full((4,), s2r, dtype=torch.float64)
        assert loss_joint(raw_hat, raw_gt, rgb_hat, rgb_gt, 0.5).item() == pytest.approx(s2r, abs=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 0.99), st.integers(0, 2 ** 16))
    def test_joint_matches_manual_composition(self, beta, seed):
        g = torch.Generator().manual_seed(seed)
        t = [torch.rand(2, 4, 4, dtype=torch.float64, generator=g) for _ in range(4)]
        v = loss_joint(*t, beta)
        manual = beta * loss_s2r(t[0], t[1]).item() + (1 - beta) * loss_r2s(t[2], t[3]).item()
        assert abs(v.item() - manual) < 1e-12
        assert set(v.components) == {"s2r", "r2s"}


class TestJointGradientFlow:
    @pytest.fixture
    def setup(self):
        torch.manual_seed(0)
        b = BranchConfig(2, 1, 8, 4)
        m = CycleISP(CycleConfig(b, b, ColorConfig(1, 1, 8, 4, 2.0))).double()
        rgb = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        raw_gt = torch.rand(1, 8, 8, dtype=torch.float64)
        return m, rgb, raw_gt

    def test_s2r_term_has_zero_raw2rgb_gradient(self, setup):
        m, rgb, raw_gt = setup
        raw_hat, _, rgb_hat = m(rgb)
        v = loss_joint(raw_hat, raw_gt, rgb_hat, rgb, 0.5)
        grads = torch.autograd.grad(0.5 * v.components["s2r"], list(m.raw2rgb.parameters()), allow_unused=True)
        assert all(g is None or torch.count_nonzero(g) == 0 for g in grads)
        # the r2s term does reach RAW2RGB
        grads = torch.autograd.grad(v.value, list(m.raw2rgb.parameters()), allow_unused=True)
        assert any(g is not None and torch.count_nonzero(g) > 0 for g in grads)

    def test_finite_difference_probe(self, setup):
        m, rgb, raw_gt = setup

        def s2r_part():
            raw_hat, _, rgb_hat = m(rgb)
            return 0.5 * loss_joint(raw_hat, raw_gt, rgb_hat, rgb, 0.5).components["s2r"]

        probes = [m.raw2rgb.head.weight, m.raw2rgb.tail.bias, m.raw2rgb.color.head.bias]
        for g in fd_gradient(s2r_part, probes):
            assert torch.count_nonzero(g) == 0


class TestMetrics:
    def test_psnr_cap(self):
        x = np.random.default_rng(0).random((3, 8, 8))
        assert psnr(x, x) == PSNR_CAP

    def test_psnr_analytic(self):
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0, abs=1e-9)
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.2), peak=2.0) == pytest.approx(20.0, abs=1e-9)

    def test_psnr_monotone_in_noise(self):
        rng = np.random.default_rng(1)
        x = rng.random((3, 64, 64))
        vals = [psnr(x + s * rng.standard_normal(x.shape), x) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_ssim_self(self):
        x = np.random.default_rng(2).random((3, 32, 32))
        assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(3))
    def test_ssim_matches_reference_implementation(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.random((3, 40, 48))
        y = np.clip(x + 0.1 * rng.standard_normal(x.shape), 0, 1)
        ref = np.mean([structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                             use_sample_covariance=False, data_range=1.0)
                       for a, b in zip(x, y)])
        assert ssim(x, y) == pytest.approx(ref, abs=1e-9)

    def test_ssim_range(self):
        rng = np.random.default_rng(3)
        x, y = rng.random((32, 32)), rng.random((32, 32))
        assert -1 <= ssim(x, y) <= 1
        assert ssim(x, 1 - x) < 0

    def test_metric_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((2, 2)), np.zeros((2, 3)))
