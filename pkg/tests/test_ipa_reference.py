import math

import numpy as np
import pytest

from flashipa.geometry import FrameSet, RigidTransform, apply, random_rototranslation
from flashipa.ipa_reference import (HeadDimensionError, IpaConfig, attention_logits, init_weights, project_inputs,
                                    reference_forward, softplus)
from flashipa.pair_features import dense_pair_from_factors
from flashipa.tensor_core import Rng, gaussian

from conftest import random_factors, random_frames

SMALL = IpaConfig(d_in=6, d_z=3, n_heads=2, c=4, n_query=2, n_value=3, rank=2)


def scalar_ipa(s, frames, z, w, cfg):
    """One IPA layer written with plain Python loops over i, j, h, p."""
    L, H, c = s.shape[0], cfg.n_heads, cfg.c
    R, t = frames.rotations, frames.translations

    def lin(x, W, b):
        return [sum(x[a] * W[a][o] for a in range(len(x))) + b[o] for o in range(len(b))]

    def to_global(i, p):
        return [sum(R[i][r][k] * p[k] for k in range(3)) + t[i][r] for r in range(3)]

    def to_local(i, p):
        return [sum(R[i][k][r] * (p[k] - t[i][k]) for k in range(3)) for r in range(3)]

    proj = []
    for i in range(L):
        x = list(s[i])
        proj.append({name: lin(x, getattr(w, "w_" + name), getattr(w, "b_" + name))
                     for name in ("q", "k", "v", "qp", "kp", "vp")})

    def head_vec(i, name, h, width):
        return proj[i][name][h * width:(h + 1) * width]

    def head_pts(i, name, h, n):
        flat = proj[i][name][h * n * 3:(h + 1) * n * 3]
        return [flat[3 * p:3 * p + 3] for p in range(n)]

    gamma = [math.log1p(math.exp(g)) for g in w.gamma_raw]
    rows = []
    for i in range(L):
        pair_f, scal_f, pts_f, norm_f = [], [], [], []
        for h in range(H):
            qi = head_vec(i, "q", h, c)
            gq = [to_global(i, p) for p in head_pts(i, "qp", h, cfg.n_query)]
            logits = []
            for j in range(L):
                kj = head_vec(j, "k", h, c)
                gk = [to_global(j, p) for p in head_pts(j, "kp", h, cfg.n_query)]
                dot = sum(a * b for a, b in zip(qi, kj)) / math.sqrt(c)
                bias = sum(w.pair_bias[h][d] * z[i][j][d] for d in range(cfg.d_z))
                dist = sum(sum((a - b) ** 2 for a, b in zip(gq[p], gk[p])) for p in range(cfg.n_query))
                logits.append(w.w_L * (dot + bias - gamma[h] * w.w_C / 2 * dist))
            top = max(logits)
            e = [math.exp(x - top) for x in logits]
            a = [x / sum(e) for x in e]
            pair_f.append([sum(a[j] * z[i][j][d] for j in range(L)) for d in range(cfg.d_z)])
            scal_f.append([sum(a[j] * head_vec(j, "v", h, c)[x] for j in range(L)) for x in range(c)])
            pts = []
            for p in range(cfg.n_value):
                agg = [sum(a[j] * to_global(j, head_pts(j, "vp", h, cfg.n_value)[p])[x] for j in range(L))
                       for x in range(3)]
                pts.append(to_local(i, agg))
            pts_f.append([x for p in pts for x in p])
            norm_f.append([math.sqrt(sum(x * x for x in p)) for p in pts])
        feats = [x for group in (pair_f, scal_f, pts_f, norm_f) for head in group for x in head]
        rows.append(lin(feats, w.w_out, w.b_out))
    return np.array(rows)


def setup(rng, L, cfg=SMALL):
    w = init_weights(cfg, rng)
    s = gaussian(rng, (L, cfg.d_in))
    return s, random_frames(rng, L), random_factors(rng, L, cfg.rank, cfg.d_z), w


class TestConfig:
    def test_dimensions(self):
        cfg = IpaConfig(c=16, n_query=4, n_value=8, rank=2, d_z=8)
        assert cfg.qk_dim == 16 + 20 + 16 and cfg.v_dim == 16 + 24 + 16

    def test_head_cap(self):
        with pytest.raises(HeadDimensionError):
            IpaConfig(c=200, n_query=12)
        assert IpaConfig(c=200, n_query=12, enforce_head_cap=False).qk_dim == 276

    def test_bad_precision(self):
        with pytest.raises(ValueError):
            IpaConfig(precision="f16")

    def test_init_constants(self, rng):
        w = init_weights(IpaConfig(n_query=4), rng)
        np.testing.assert_allclose(w.gamma, 1.0, rtol=1e-15)
        assert w.w_L == pytest.approx(math.sqrt(1 / 3)) and w.w_C == pytest.approx(math.sqrt(2 / 36))

    def test_softplus(self):
        assert softplus(0.0) == pytest.approx(math.log(2))
        assert softplus(1000.0) == 1000.0


class TestProjections:
    def test_zero_weights(self, rng):
        w = init_weights(SMALL, rng)
        for name in ("w_q", "w_k", "w_v", "w_qp", "w_kp", "w_vp"):
            getattr(w, name)[...] = 0
        proj = project_inputs(gaussian(rng, (5, SMALL.d_in)), w, SMALL)
        np.testing.assert_array_equal(proj.q[1, 3], w.b_q[SMALL.c:])
        assert proj.v_pts.shape == (2, 5, 3, 3)

    def test_head_layout(self, rng):
        w = init_weights(SMALL, rng)
        s = gaussian(rng, (5, SMALL.d_in))
        proj = project_inputs(s, w, SMALL)
        flat = s @ w.w_kp + w.b_kp
        np.testing.assert_allclose(proj.k_pts[1, 2, 1], flat[2, 3 * 2 + 3:3 * 2 + 6], atol=1e-15)

    def test_width_check(self, rng):
        with pytest.raises(ValueError):
            project_inputs(np.zeros((3, 5)), init_weights(SMALL, rng), SMALL)


class TestLogits:
    def test_zero_points_is_scaled_dot(self, rng):
        w = init_weights(SMALL, rng)
        q, k = gaussian(rng, (2, 5, 4)), gaussian(rng, (2, 5, 4))
        pts = np.zeros((2, 5, 2, 3))
        frames = FrameSet.identity(5)
        out = attention_logits(q, k, pts, pts, frames, np.zeros((2, 5, 5)), w)
        np.testing.assert_allclose(out, w.w_L * q @ np.swapaxes(k, 1, 2) / 2.0, atol=1e-14)

    def test_shared_points_vanish_on_diagonal(self, rng):
        w = init_weights(SMALL, rng)
        pts = gaussian(rng, (2, 5, 2, 3))
        zero = np.zeros((2, 5, 4))
        out = attention_logits(zero, zero, pts, pts, random_frames(rng, 5), np.zeros((2, 5, 5)), w)
        np.testing.assert_allclose(np.diagonal(out, axis1=1, axis2=2), 0, atol=1e-14)
        assert np.all(out <= 1e-14)

    def test_single_entry(self, rng):
        w = init_weights(SMALL, rng)
        frames = random_frames(rng, 3)
        q, k = gaussian(rng, (2, 3, 4)), gaussian(rng, (2, 3, 4))
        qp, kp = gaussian(rng, (2, 3, 2, 3)), gaussian(rng, (2, 3, 2, 3))
        bias = gaussian(rng, (2, 3, 3))
        out = attention_logits(q, k, qp, kp, frames, bias, w)
        h, i, j = 1, 0, 2
        Ti, Tj = frames.transforms[i], frames.transforms[j]
        dist = sum(float(np.sum((apply(Ti, qp[h, i, p]) - apply(Tj, kp[h, j, p])) ** 2)) for p in range(2))
        expected = w.w_L * (q[h, i] @ k[h, j] / 2 + bias[h, i, j] - w.gamma[h] * w.w_C / 2 * dist)
        assert out[h, i, j] == pytest.approx(expected, abs=1e-12)


class TestForward:
    @pytest.mark.parametrize("L", [1, 2, 5])
    def test_matches_scalar_loops(self, rng, L):
        s, frames, fp, w = setup(rng, L)
        z = dense_pair_from_factors(fp)
        np.testing.assert_allclose(reference_forward(s, frames, w, SMALL, factors=fp), scalar_ipa(s, frames, z, w, SMALL),
                                   rtol=0, atol=1e-10)

    def test_scalar_oracle_default_shape(self, rng):
        cfg = IpaConfig(d_in=8, d_z=3, n_heads=2, c=4, n_query=4, n_value=8, rank=1)
        s, frames, fp, w = setup(rng, 8, cfg)
        z = dense_pair_from_factors(fp)
        np.testing.assert_allclose(reference_forward(s, frames, w, cfg, pair=z), scalar_ipa(s, frames, z, w, cfg),
                                   rtol=0, atol=1e-10)

    def test_single_residue_attends_to_itself(self, rng):
        s, frames, fp, w = setup(rng, 1)
        _, a = reference_forward(s, frames, w, SMALL, factors=fp, return_attention=True)
        np.testing.assert_array_equal(a, 1.0)

    def test_uniform_attention_averages(self, rng):
        # no scalar, point or bias signal and a shared origin: every row attends uniformly
        s, frames, fp, w = setup(rng, 6)
        frames = FrameSet(RigidTransform(frames.rotations, np.zeros((6, 3))))
        for name in ("w_q", "w_k", "b_q", "b_k", "w_qp", "w_kp", "b_qp", "b_kp", "pair_bias"):
            getattr(w, name)[...] = 0
        _, a = reference_forward(s, frames, w, SMALL, factors=fp, return_attention=True)
        np.testing.assert_allclose(a, 1 / 6, atol=1e-15)

    def test_rows_are_distributions(self, rng):
        s, frames, fp, w = setup(rng, 12)
        _, a = reference_forward(s, frames, w, SMALL, factors=fp, return_attention=True)
        assert a.shape == (2, 12, 12) and np.all(a >= 0)
        np.testing.assert_allclose(a.sum(-1), 1, atol=1e-12)

    def test_mask_excludes_keys(self, rng):
        s, frames, fp, w = setup(rng, 7)
        mask = np.array([1, 1, 0, 1, 0, 1, 1], bool)
        _, a = reference_forward(s, FrameSet(frames.transforms, mask), w, SMALL, factors=fp, return_attention=True)
        np.testing.assert_array_equal(a[:, :, ~mask], 0)
        np.testing.assert_allclose(a.sum(-1), 1, atol=1e-12)

    def test_dense_and_factorized_agree(self, rng):
        s, frames, fp, w = setup(rng, 9)
        np.testing.assert_allclose(reference_forward(s, frames, w, SMALL, factors=fp),
                                   reference_forward(s, frames, w, SMALL, pair=dense_pair_from_factors(fp)), atol=1e-14)

    def test_needs_exactly_one_pair_form(self, rng):
        s, frames, fp, w = setup(rng, 3)
        with pytest.raises(TypeError):
            reference_forward(s, frames, w, SMALL)
        with pytest.raises(TypeError):
            reference_forward(s, frames, w, SMALL, pair=dense_pair_from_factors(fp), factors=fp)

    def test_pair_shape_check(self, rng):
        s, frames, _, w = setup(rng, 3)
        with pytest.raises(ValueError):
            reference_forward(s, frames, w, SMALL, pair=np.zeros((3, 3, 5)))

    def test_rigid_invariance(self):
        for seed in range(20):
            r = Rng(seed)
            s, frames, fp, w = setup(r, 10)
            g = random_rototranslation(r, 5.0)
            base = reference_forward(s, frames, w, SMALL, factors=fp)
            moved = reference_forward(s, frames.left_multiply(g), w, SMALL, factors=fp)
            assert np.max(np.abs(moved - base)) <= 1e-9

    def test_float32(self, rng):
        cfg = IpaConfig(**{**SMALL.to_dict(), "precision": "f32"})
        s, frames, fp, w = setup(rng, 6, cfg)
        out = reference_forward(s, frames, w, cfg, factors=fp)
        assert out.dtype == np.float32
        ref = reference_forward(s, frames, w.astype(np.float64), SMALL, factors=fp)
        np.testing.assert_allclose(out, ref, atol=1e-4)
