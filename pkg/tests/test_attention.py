import math

import numpy as np
import pytest

from floydnet import nn
from floydnet.attention import (
    AttentionParams,
    combine,
    init_attention_params,
    init_korder_attention_params,
    kernel_benchmark,
    korder_params_from_pairwise,
    korder_pivotal_attention,
    pivot_attention_core,
    pivotal_attention_naive,
    pivotal_attention_streamed,
    random_rotation,
    rotation_combine_maps,
    rotation_compose_check,
)
from floydnet.nn import Tensor, grad_check, tensor, tsum


def project(x, lp, heads):
    y = x.reshape(-1, x.shape[-1]) @ lp.weight.data
    if lp.bias is not None:
        y = y + lp.bias.data
    return y.reshape(x.shape[:-1] + (heads, x.shape[-1] // heads))


def scalar_pairwise_oracle(x, p: AttentionParams, kind):
    """Direct nested-loop evaluation of the pairwise pivot update."""
    n, _, d = x.shape
    h, dh = p.heads, p.head_dim
    q = project(x, p.q_proj, h)
    kl = project(x, p.k_proj_left, h)
    kr = project(x, p.k_proj_right, h)
    vl = project(x, p.v_proj_left, h)
    vr = project(x, p.v_proj_right, h)
    out = np.zeros((n, n, d))
    for i in range(n):
        for k in range(n):
            att = np.zeros((h, dh))
            for hh in range(h):
                logits, vals = [], []
                for j in range(n):
                    if kind == "additive":
                        kc = kl[i, j, hh] + kr[j, k, hh]
                        vc = vl[i, j, hh] + vr[j, k, hh]
                    else:
                        kc = kl[i, j, hh] * kr[j, k, hh]
                        vc = vl[i, j, hh] * vr[j, k, hh]
                    logits.append(float(q[i, k, hh] @ kc) / math.sqrt(dh))
                    vals.append(vc)
                m = max(logits)
                ws = [math.exp(l - m) for l in logits]
                s = sum(ws)
                for j in range(n):
                    att[hh] += (ws[j] / s) * vals[j]
            row = att.reshape(d) @ p.out_proj.weight.data + p.out_proj.bias.data
            out[i, k] = row
    return out


class TestCombine:
    def test_additive_identity(self):
        rng = np.random.default_rng(0)
        a = tensor(rng.standard_normal((3, 4)))
        b = tensor(np.zeros((3, 4)))
        assert np.array_equal(combine(a, b, "additive").data, a.data)

    def test_multiplicative_identity(self):
        rng = np.random.default_rng(1)
        a = tensor(rng.standard_normal((3, 4)))
        b = tensor(np.ones((3, 4)))
        assert np.array_equal(combine(a, b, "multiplicative").data, a.data)

    def test_commutative(self):
        rng = np.random.default_rng(2)
        a = tensor(rng.standard_normal((5,)))
        b = tensor(rng.standard_normal((5,)))
        for kind in ("additive", "multiplicative"):
            assert np.array_equal(combine(a, b, kind).data, combine(b, a, kind).data)

    def test_backward(self):
        rng = np.random.default_rng(3)
        a = tensor(rng.standard_normal((4,)))
        b = tensor(rng.standard_normal((4,)))
        for kind in ("additive", "multiplicative"):
            a.zero_grad()
            b.zero_grad()
            rep = grad_check(lambda: tsum(nn.mul(combine(a, b, kind), combine(a, b, kind))), [("a", a), ("b", b)], tol=1e-7)
            assert rep.passed

    def test_rotation_projection_route(self):
        # multiplicative combine with the fixed value maps composes rotations
        rng = np.random.default_rng(4)
        m_a, m_b, m_c = rotation_combine_maps()
        for _ in range(20):
            ta, tb = random_rotation(rng), random_rotation(rng)
            va = tensor(ta.reshape(-1) @ m_a)
            vb = tensor(tb.reshape(-1) @ m_b)
            got = (combine(va, vb, "multiplicative").data @ m_c).reshape(3, 3)
            assert np.abs(got - ta @ tb).max() < 1e-14

    def test_bad_kind(self):
        a = tensor(np.zeros(3))
        with pytest.raises(ValueError):
            combine(a, a, "concat")


class TestNaiveKernel:
    def test_single_node_single_pivot(self):
        rng = np.random.default_rng(5)
        p = init_attention_params(rng, 6, 2)
        x = tensor(rng.standard_normal((1, 1, 6)))
        got = pivotal_attention_naive(x, p, "additive").data
        # with one pivot the softmax weight is 1; output is the projected
        # combined value of the self-pivot
        kl = project(x.data, p.v_proj_left, 2)
        kr = project(x.data, p.v_proj_right, 2)
        vc = (kl + kr).reshape(1, 1, 6)
        expect = vc.reshape(-1, 6) @ p.out_proj.weight.data + p.out_proj.bias.data
        assert np.abs(got - expect.reshape(1, 1, 6)).max() < 1e-14

    def test_zero_keys_give_uniform_attention(self):
        rng = np.random.default_rng(6)
        n, d, h = 4, 8, 2
        p = init_attention_params(rng, d, h)
        p.k_proj_left.weight.data[...] = 0.0
        p.k_proj_left.bias.data[...] = 0.0
        p.k_proj_right.weight.data[...] = 0.0
        p.k_proj_right.bias.data[...] = 0.0
        x = tensor(rng.standard_normal((n, n, d)))
        got = pivotal_attention_naive(x, p, "additive").data
        vl = project(x.data, p.v_proj_left, h)
        vr = project(x.data, p.v_proj_right, h)
        out = np.zeros((n, n, d))
        for i in range(n):
            for k in range(n):
                mean = np.mean([vl[i, j] + vr[j, k] for j in range(n)], axis=0)
                out[i, k] = mean.reshape(d) @ p.out_proj.weight.data + p.out_proj.bias.data
        assert np.abs(got - out).max() < 1e-12

    @pytest.mark.parametrize("kind", ["additive", "multiplicative"])
    def test_matches_scalar_loop(self, kind):
        rng = np.random.default_rng(7)
        p = init_attention_params(rng, 8, 2)
        x = rng.standard_normal((3, 3, 8))
        got = pivotal_attention_naive(Tensor(x), p, kind).data
        assert np.abs(got - scalar_pairwise_oracle(x, p, kind)).max() < 1e-12

    def test_backward_zero_upstream(self):
        rng = np.random.default_rng(8)
        p = init_attention_params(rng, 4, 1)
        x = tensor(rng.standard_normal((3, 3, 4)))
        out = pivotal_attention_naive(x, p, "additive")
        out.backward(seed=np.zeros_like(out.data))
        for t in p.tensors():
            assert np.all(t.grad == 0.0)

    @pytest.mark.parametrize("kind", ["additive", "multiplicative"])
    def test_gradcheck(self, kind):
        rng = np.random.default_rng(9)
        p = init_attention_params(rng, 8, 2)
        x = tensor(rng.standard_normal((4, 4, 8)))
        named = [("x", x)] + list(p.named("attn"))
        rep = grad_check(
            lambda: tsum(nn.mul(pivotal_attention_naive(x, p, kind), pivotal_attention_naive(x, p, kind))),
            named,
            tol=1e-6,
            samples_per_param=6,
            rng=rng,
        )
        assert rep.passed, str(rep)


class TestStreamedKernel:
    @pytest.mark.parametrize("kind", ["additive", "multiplicative"])
    @pytest.mark.parametrize("tile", [2, 3, 32])
    def test_forward_matches_naive(self, kind, tile):
        rng = np.random.default_rng(10)
        p = init_attention_params(rng, 12, 3)
        x = rng.standard_normal((7, 7, 12))
        a = pivotal_attention_naive(Tensor(x), p, kind).data
        b = pivotal_attention_streamed(Tensor(x), p, kind, tile=tile).data
        assert np.abs(a - b).max() < 1e-12

    @pytest.mark.parametrize("kind", ["additive", "multiplicative"])
    def test_backward_matches_naive(self, kind):
        rng = np.random.default_rng(11)
        p = init_attention_params(rng, 8, 2)
        x = tensor(rng.standard_normal((6, 6, 8)))
        seed = rng.standard_normal((6, 6, 8))
        tensors = [x] + p.tensors()
        pivotal_attention_naive(x, p, kind).backward(seed=seed)
        ref = [t.grad.copy() for t in tensors]
        for t in tensors:
            t.zero_grad()
        pivotal_attention_streamed(x, p, kind, tile=4).backward(seed=seed)
        for r, t in zip(ref, tensors):
            assert np.abs(r - t.grad).max() < 1e-12

    def test_gradcheck_streamed(self):
        rng = np.random.default_rng(12)
        p = init_attention_params(rng, 6, 2)
        x = tensor(rng.standard_normal((5, 5, 6)))
        named = [("x", x)] + list(p.named("attn"))
        rep = grad_check(
            lambda: tsum(
                nn.mul(
                    pivotal_attention_streamed(x, p, "additive", tile=2),
                    pivotal_attention_streamed(x, p, "additive", tile=2),
                )
            ),
            named,
            tol=1e-6,
            samples_per_param=5,
            rng=rng,
        )
        assert rep.passed, str(rep)

    def test_memory_scaling(self):
        # auxiliary allocation grows ~4x per doubling for the streamed sweep
        # and ~8x for the N^3 reference
        a = kernel_benchmark("streamed", 32, 8, 1, seed=0)
        b = kernel_benchmark("streamed", 64, 8, 1, seed=0)
        assert 3.0 < b["peak_bytes"] / a["peak_bytes"] < 5.0
        c = kernel_benchmark("naive", 32, 8, 1, seed=0)
        d = kernel_benchmark("naive", 64, 8, 1, seed=0)
        assert 6.5 < d["peak_bytes"] / c["peak_bytes"] < 9.5


class TestProperties:
    def test_equivariance_both_kernels(self):
        rng = np.random.default_rng(13)
        p = init_attention_params(rng, 8, 2)
        x = rng.standard_normal((6, 6, 8))
        for kernel in (pivotal_attention_naive, pivotal_attention_streamed):
            for seed in range(5):
                perm = np.random.default_rng(seed).permutation(6)
                out = kernel(Tensor(x), p, "additive").data
                out_p = kernel(Tensor(x[np.ix_(perm, perm)]), p, "additive").data
                assert np.abs(out_p - out[np.ix_(perm, perm)]).max() < 1e-10

    def test_order_sensitivity(self):
        # swapping the left/right projection roles changes the output
        rng = np.random.default_rng(14)
        p = init_attention_params(rng, 8, 2)
        swapped = AttentionParams(
            q_proj=p.q_proj,
            k_proj_left=p.k_proj_right,
            k_proj_right=p.k_proj_left,
            v_proj_left=p.v_proj_right,
            v_proj_right=p.v_proj_left,
            out_proj=p.out_proj,
            heads=p.heads,
            head_dim=p.head_dim,
        )
        x = Tensor(rng.standard_normal((5, 5, 8)))
        a = pivotal_attention_naive(x, p, "additive").data
        b = pivotal_attention_naive(x, swapped, "additive").data
        assert np.abs(a - b).max() > 1e-3

    def test_pivot_relabeling_invariance(self):
        # shuffling the pivot axis of hand-assembled inputs leaves the
        # attention core unchanged
        rng = np.random.default_rng(15)
        n, h, dh = 6, 2, 4
        q = rng.standard_normal((n, n, h, dh))
        kc = rng.standard_normal((n, n, n, h, dh))
        vc = rng.standard_normal((n, n, n, h, dh))
        base = pivot_attention_core(q, kc, vc, pivot_axis=1)
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(n)
            shuffled = pivot_attention_core(q, kc[:, perm], vc[:, perm], pivot_axis=1)
            assert np.abs(shuffled - base).max() < 1e-12

    def test_logit_scaling_matches_oracle(self):
        # the scalar oracle hard-codes the 1/sqrt(head_dim) scaling, so
        # agreement pins the kernel's scaling too
        rng = np.random.default_rng(16)
        p = init_attention_params(rng, 16, 4)
        x = rng.standard_normal((3, 3, 16))
        got = pivotal_attention_naive(Tensor(x), p, "additive").data
        assert np.abs(got - scalar_pairwise_oracle(x, p, "additive")).max() < 1e-12


class TestKOrder:
    def test_k1_matches_plain_self_attention(self):
        rng = np.random.default_rng(17)
        n, d, h = 6, 8, 2
        dh = d // h
        p = init_korder_attention_params(rng, d, h, 1)
        x = rng.standard_normal((n, d))
        got = korder_pivotal_attention(Tensor(x), p, "additive").data

        q = project(x, p.q_proj, h)
        kk = project(x, p.key_projs[0], h)
        vv = project(x, p.value_projs[0], h)
        expect = np.zeros((n, d))
        for e in range(n):
            att = np.zeros((h, dh))
            for hh in range(h):
                logits = np.array([q[e, hh] @ kk[pp, hh] for pp in range(n)]) / math.sqrt(dh)
                w = np.exp(logits - logits.max())
                w /= w.sum()
                att[hh] = sum(w[pp] * vv[pp, hh] for pp in range(n))
            expect[e] = att.reshape(d) @ p.out_proj.weight.data + p.out_proj.bias.data
        assert np.abs(got - expect).max() < 1e-12

    @pytest.mark.parametrize("kind", ["additive", "multiplicative"])
    def test_k2_bitwise_equals_pairwise(self, kind):
        rng = np.random.default_rng(18)
        p = init_attention_params(rng, 8, 2)
        x = rng.standard_normal((5, 5, 8))
        a = pivotal_attention_naive(Tensor(x), p, kind).data
        b = korder_pivotal_attention(Tensor(x), korder_params_from_pairwise(p), kind).data
        assert a.tobytes() == b.tobytes()

    @pytest.mark.parametrize("kind", ["additive", "multiplicative"])
    def test_k3_matches_scalar_loop(self, kind):
        rng = np.random.default_rng(19)
        n, d, h = 4, 4, 2
        dh = d // h
        p = init_korder_attention_params(rng, d, h, 3)
        x = rng.standard_normal((n, n, n, d))
        got = korder_pivotal_attention(Tensor(x), p, kind).data

        def pj(lp, idx):
            return (x[idx] @ lp.weight.data + lp.bias.data).reshape(h, dh)

        expect = np.zeros_like(got)
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    att = np.zeros((h, dh))
                    qv = pj(p.q_proj, (a, b, c))
                    for hh in range(h):
                        logits, vals = [], []
                        for pp in range(n):
                            ks = [
                                pj(p.key_projs[0], (pp, b, c))[hh],
                                pj(p.key_projs[1], (a, pp, c))[hh],
                                pj(p.key_projs[2], (a, b, pp))[hh],
                            ]
                            vs = [
                                pj(p.value_projs[0], (pp, b, c))[hh],
                                pj(p.value_projs[1], (a, pp, c))[hh],
                                pj(p.value_projs[2], (a, b, pp))[hh],
                            ]
                            if kind == "additive":
                                kc, vc = ks[0] + ks[1] + ks[2], vs[0] + vs[1] + vs[2]
                            else:
                                kc, vc = ks[0] * ks[1] * ks[2], vs[0] * vs[1] * vs[2]
                            logits.append(float(qv[hh] @ kc) / math.sqrt(dh))
                            vals.append(vc)
                        m = max(logits)
                        ws = [math.exp(l - m) for l in logits]
                        s = sum(ws)
                        att[hh] = sum((w / s) * v for w, v in zip(ws, vals))
                    expect[a, b, c] = att.reshape(d) @ p.out_proj.weight.data + p.out_proj.bias.data
        assert np.abs(got - expect).max() < 1e-12

    @pytest.mark.parametrize("k", [1, 3])
    def test_korder_gradcheck(self, k):
        rng = np.random.default_rng(20 + k)
        d, h = 6, 2
        p = init_korder_attention_params(rng, d, h, k)
        shape = (3,) * k + (d,)
        x = tensor(rng.standard_normal(shape))
        named = [("x", x)] + list(p.named("a"))
        rep = grad_check(
            lambda: tsum(nn.mul(korder_pivotal_attention(x, p, "additive"), korder_pivotal_attention(x, p, "additive"))),
            named,
            tol=1e-6,
            samples_per_param=4,
            rng=rng,
        )
        assert rep.passed, str(rep)

    @pytest.mark.parametrize("k", [1, 3])
    def test_korder_equivariance(self, k):
        rng = np.random.default_rng(23)
        d, h, n = 8, 2, 4
        p = init_korder_attention_params(rng, d, h, k)
        x = rng.standard_normal((n,) * k + (d,))
        out = korder_pivotal_attention(Tensor(x), p, "additive").data
        for seed in range(3):
            perm = np.random.default_rng(seed).permutation(n)
            xp = x[np.ix_(*([perm] * k))] if k > 1 else x[perm]
            out_p = korder_pivotal_attention(Tensor(xp), p, "additive").data
            expect = out[np.ix_(*([perm] * k))] if k > 1 else out[perm]
            assert np.abs(out_p - expect).max() < 1e-10

    def test_k3_size_cap(self):
        rng = np.random.default_rng(24)
        p = init_korder_attention_params(rng, 2, 1, 3)
        x = Tensor(np.zeros((17, 17, 17, 2)))
        with pytest.raises(ValueError):
            korder_pivotal_attention(x, p, "additive")


class TestRotationComposition:
    def test_identity_composition(self):
        eye = np.eye(3)
        assert np.abs(rotation_compose_check(eye, eye) - eye).max() == 0.0

    def test_z_rotations(self):
        rz90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        got = rotation_compose_check(rz90, rz90)
        assert np.abs(got - np.diag([-1.0, -1.0, 1.0])).max() < 1e-15

    def test_thousand_random_pairs(self):
        rng = np.random.default_rng(25)
        worst = 0.0
        for _ in range(1000):
            a, b = random_rotation(rng), random_rotation(rng)
            worst = max(worst, np.abs(rotation_compose_check(a, b) - a @ b).max())
        assert worst < 1e-12

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            rotation_compose_check(np.eye(3) * 2.0, np.eye(3))
        with pytest.raises(ValueError):
            rotation_compose_check(np.diag([1.0, 1.0, -1.0]), np.eye(3))

    def test_printed_maps_shapes(self):
        m_a, m_b, m_c = rotation_combine_maps()
        assert m_a.shape == (9, 27) and m_b.shape == (9, 27) and m_c.shape == (27, 9)
        # every column of the value maps carries exactly one unit entry
        assert (m_a.sum(axis=0) == 1).all() and (m_b.sum(axis=0) == 1).all()
        assert (m_c.sum(axis=1) == 1).all()
