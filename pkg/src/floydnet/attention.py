"""Pivotal attention: refine pair state (i,k) by attending over pivots j.

For every target pair (i,k) the input state R_ik is projected to a query;
for each pivot j the segment states R_ij and R_jk are projected to keys and
values and merged elementwise by a combine operator (sum or product);
softmax over pivots (scaled by 1/sqrt(head_dim)) weights the merged values,
and a shared output projection mixes the heads back to d_r channels.

Two numerically equivalent kernels are provided:

* ``pivotal_attention_naive`` materializes the full N^3 merged key/value
  tensors (the readable reference),
* ``pivotal_attention_streamed`` sweeps pivots with an online softmax over
  (i,k) tiles and never allocates an N^3 buffer, keeping auxiliary memory
  at O(N^2 * d_r); its backward recomputes attention statistics instead of
  storing the N^3 weights.

``korder_pivotal_attention`` generalizes the mechanism to k-tuple states
for k in {1, 2, 3}; k=1 is ordinary self-attention over node states and
k=2 is exactly the pairwise kernel.
"""

from __future__ import annotations

import gc
import hashlib
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from .nn import LinearParams, Tensor, _accumulate, _ensure_finite, init_linear, stable_softmax

COMBINE_KINDS = ("additive", "multiplicative")


def _check_combine(kind):
    if kind not in COMBINE_KINDS:
        raise ValueError(f"combine must be one of {COMBINE_KINDS}, got {kind!r}")
    return kind


@dataclass
class AttentionParams:
    q_proj: LinearParams
    k_proj_left: LinearParams  # applied to the (i,j) segment
    k_proj_right: LinearParams  # applied to the (j,k) segment
    v_proj_left: LinearParams
    v_proj_right: LinearParams
    out_proj: LinearParams
    heads: int
    head_dim: int

    def __post_init__(self):
        if self.heads * self.head_dim != self.q_proj.d_out:
            raise ValueError("heads * head_dim must equal the projection width")

    def named(self, prefix):
        yield from self.q_proj.named(f"{prefix}.q")
        yield from self.k_proj_left.named(f"{prefix}.k_left")
        yield from self.k_proj_right.named(f"{prefix}.k_right")
        yield from self.v_proj_left.named(f"{prefix}.v_left")
        yield from self.v_proj_right.named(f"{prefix}.v_right")
        yield from self.out_proj.named(f"{prefix}.out")

    def tensors(self):
        return [t for _, t in self.named("a")]


@dataclass
class KOrderAttentionParams:
    order: int
    q_proj: LinearParams
    key_projs: list  # one per tuple position
    value_projs: list
    out_proj: LinearParams
    heads: int
    head_dim: int

    def __post_init__(self):
        if self.order not in (1, 2, 3):
            raise ValueError(f"order must be 1, 2 or 3, got {self.order}")
        if len(self.key_projs) != self.order or len(self.value_projs) != self.order:
            raise ValueError("need exactly `order` key and value projection sets")

    def named(self, prefix):
        yield from self.q_proj.named(f"{prefix}.q")
        for m, kp in enumerate(self.key_projs):
            yield from kp.named(f"{prefix}.k{m}")
        for m, vp in enumerate(self.value_projs):
            yield from vp.named(f"{prefix}.v{m}")
        yield from self.out_proj.named(f"{prefix}.out")

    def tensors(self):
        return [t for _, t in self.named("a")]


def init_attention_params(rng, d_r, heads, bias=True):
    if d_r % heads != 0:
        raise ValueError(f"d_r={d_r} not divisible by heads={heads}")
    mk = lambda: init_linear(rng, d_r, d_r, bias=bias)
    return AttentionParams(
        q_proj=mk(),
        k_proj_left=mk(),
        k_proj_right=mk(),
        v_proj_left=mk(),
        v_proj_right=mk(),
        out_proj=mk(),
        heads=heads,
        head_dim=d_r // heads,
    )


def init_korder_attention_params(rng, d_r, heads, order, bias=True):
    if d_r % heads != 0:
        raise ValueError(f"d_r={d_r} not divisible by heads={heads}")
    mk = lambda: init_linear(rng, d_r, d_r, bias=bias)
    return KOrderAttentionParams(
        order=order,
        q_proj=mk(),
        key_projs=[mk() for _ in range(order)],
        value_projs=[mk() for _ in range(order)],
        out_proj=mk(),
        heads=heads,
        head_dim=d_r // heads,
    )


def korder_params_from_pairwise(p: AttentionParams) -> KOrderAttentionParams:
    """Pairwise parameters expressed in tuple-position form.

    Substituting position 0 of (i,k) yields the (j,k) segment and position 1
    yields (i,j), so position 0 carries the right projections and position 1
    the left ones.
    """
    return KOrderAttentionParams(
        order=2,
        q_proj=p.q_proj,
        key_projs=[p.k_proj_right, p.k_proj_left],
        value_projs=[p.v_proj_right, p.v_proj_left],
        out_proj=p.out_proj,
        heads=p.heads,
        head_dim=p.head_dim,
    )


def pairwise_params_from_korder(p: KOrderAttentionParams) -> AttentionParams:
    if p.order != 2:
        raise ValueError("only order-2 parameters map to the pairwise form")
    return AttentionParams(
        q_proj=p.q_proj,
        k_proj_left=p.key_projs[1],
        k_proj_right=p.key_projs[0],
        v_proj_left=p.value_projs[1],
        v_proj_right=p.value_projs[0],
        out_proj=p.out_proj,
        heads=p.heads,
        head_dim=p.head_dim,
    )


# ---------------------------------------------------------------------------
# Combine operator
# ---------------------------------------------------------------------------


def combine_arrays(a, b, kind):
    _check_combine(kind)
    return a + b if kind == "additive" else a * b


def combine(a: Tensor, b: Tensor, kind) -> Tensor:
    """Elementwise merge of two equally shaped tensors (recorded primitive)."""
    _check_combine(kind)
    if a.shape != b.shape:
        raise ValueError(f"combine shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(_ensure_finite(combine_arrays(a.data, b.data, kind), "combine"), parents=(a, b))

    def backward(g):
        if kind == "additive":
            _accumulate(a, g)
            _accumulate(b, g)
        else:
            _accumulate(a, g * b.data)
            _accumulate(b, g * a.data)

    out.backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# Shared numpy core
# ---------------------------------------------------------------------------


def pivot_attention_core(q, k_comb, v_comb, pivot_axis):
    """Scaled softmax attention over one pivot axis.

    q has shape targets + (h, dh); k_comb/v_comb carry an extra pivot axis
    at ``pivot_axis``. Relabeling pivots (permuting k_comb/v_comb along that
    axis) leaves the output unchanged.
    """
    dh = q.shape[-1]
    q_exp = np.expand_dims(q, axis=pivot_axis)
    logits = (q_exp * k_comb).sum(axis=-1) / np.sqrt(dh)
    w = stable_softmax(logits, axis=pivot_axis)
    return (np.expand_dims(w, -1) * v_comb).sum(axis=pivot_axis)


def _apply_linear(x2, lp: LinearParams):
    y = x2 @ lp.weight.data
    if lp.bias is not None:
        y = y + lp.bias.data
    return y


def _linear_backward(x2, lp: LinearParams, g2, dx2):
    dx2 += g2 @ lp.weight.data.T
    _accumulate(lp.weight, x2.T @ g2)
    if lp.bias is not None:
        _accumulate(lp.bias, g2.sum(axis=0))


def _project_pairwise(x2, p: AttentionParams, n):
    h, dh = p.heads, p.head_dim
    shape = (n, n, h, dh)
    q = _apply_linear(x2, p.q_proj).reshape(shape)
    kl = _apply_linear(x2, p.k_proj_left).reshape(shape)
    kr = _apply_linear(x2, p.k_proj_right).reshape(shape)
    vl = _apply_linear(x2, p.v_proj_left).reshape(shape)
    vr = _apply_linear(x2, p.v_proj_right).reshape(shape)
    return q, kl, kr, vl, vr


def _check_pairwise_input(x, p):
    if x.ndim != 3 or x.shape[0] != x.shape[1]:
        raise ValueError(f"expected an (N, N, d_r) state, got {x.shape}")
    if x.shape[2] != p.heads * p.head_dim:
        raise ValueError(f"state width {x.shape[2]} != heads*head_dim {p.heads * p.head_dim}")


# ---------------------------------------------------------------------------
# Naive reference kernel (materializes N^3 intermediates)
# ---------------------------------------------------------------------------


def pivotal_attention_naive(x: Tensor, p: AttentionParams, combine_kind="additive") -> Tensor:
    _check_pairwise_input(x, p)
    _check_combine(combine_kind)
    n, _, d = x.shape
    h, dh = p.heads, p.head_dim
    x2 = x.data.reshape(n * n, d)
    q, kl, kr, vl, vr = _project_pairwise(x2, p, n)

    # merged segments, pivot j on axis 1: [i, j, k, h, dh]
    k_comb = combine_arrays(kl[:, :, None], kr[None, :, :], combine_kind)
    logits = np.einsum("ikhd,ijkhd->ijkh", q, k_comb) / np.sqrt(dh)
    w = stable_softmax(logits, axis=1)
    v_comb = combine_arrays(vl[:, :, None], vr[None, :, :], combine_kind)
    att = np.einsum("ijkh,ijkhd->ikhd", w, v_comb)
    a2 = att.reshape(n * n, d)
    y = _apply_linear(a2, p.out_proj).reshape(n, n, d)

    out = Tensor(_ensure_finite(y, "pivotal_attention_naive"), parents=(x,) + tuple(p.tensors()))

    def backward(g):
        g2 = g.reshape(n * n, d)
        da2 = np.zeros_like(a2)
        _linear_backward(a2, p.out_proj, g2, da2)
        ga = da2.reshape(n, n, h, dh)

        dv_comb = w[..., None] * ga[:, None]
        dw = np.einsum("ikhd,ijkhd->ijkh", ga, v_comb)
        dlog = w * (dw - (w * dw).sum(axis=1, keepdims=True)) / np.sqrt(dh)
        dq = np.einsum("ijkh,ijkhd->ikhd", dlog, k_comb)
        dk_comb = dlog[..., None] * q[:, None]

        if combine_kind == "additive":
            dkl = dk_comb.sum(axis=2)
            dkr = dk_comb.sum(axis=0)
            dvl = dv_comb.sum(axis=2)
            dvr = dv_comb.sum(axis=0)
        else:
            dkl = (dk_comb * kr[None, :, :]).sum(axis=2)
            dkr = (dk_comb * kl[:, :, None]).sum(axis=0)
            dvl = (dv_comb * vr[None, :, :]).sum(axis=2)
            dvr = (dv_comb * vl[:, :, None]).sum(axis=0)

        dx2 = np.zeros_like(x2)
        _linear_backward(x2, p.q_proj, dq.reshape(n * n, d), dx2)
        _linear_backward(x2, p.k_proj_left, dkl.reshape(n * n, d), dx2)
        _linear_backward(x2, p.k_proj_right, dkr.reshape(n * n, d), dx2)
        _linear_backward(x2, p.v_proj_left, dvl.reshape(n * n, d), dx2)
        _linear_backward(x2, p.v_proj_right, dvr.reshape(n * n, d), dx2)
        _accumulate(x, dx2.reshape(n, n, d))

    out.backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# Streamed kernel: online softmax over pivots, O(N^2 * d_r) auxiliary memory
# ---------------------------------------------------------------------------


def pivotal_attention_streamed(x: Tensor, p: AttentionParams, combine_kind="additive", tile=32) -> Tensor:
    _check_pairwise_input(x, p)
    _check_combine(combine_kind)
    n, _, d = x.shape
    h, dh = p.heads, p.head_dim
    scale = 1.0 / np.sqrt(dh)
    x2 = x.data.reshape(n * n, d)
    q, kl, kr, vl, vr = _project_pairwise(x2, p, n)

    att = np.empty((n, n, h, dh))
    m_stat = np.empty((n, n, h))
    s_stat = np.empty((n, n, h))
    for i0 in range(0, n, tile):
        isl = slice(i0, min(i0 + tile, n))
        for k0 in range(0, n, tile):
            ksl = slice(k0, min(k0 + tile, n))
            qt = q[isl, ksl]
            # pass 1: running max and normalizer per (i, k, head)
            m = np.full(qt.shape[:3], -np.inf)
            s = np.zeros(qt.shape[:3])
            for j in range(n):
                kc = combine_arrays(kl[isl, j][:, None], kr[j, ksl][None, :], combine_kind)
                logit = (qt * kc).sum(axis=-1) * scale
                m_new = np.maximum(m, logit)
                s = s * np.exp(m - m_new) + np.exp(logit - m_new)
                m = m_new
            # pass 2: weighted accumulation against the final statistics
            o = np.zeros_like(qt)
            for j in range(n):
                kc = combine_arrays(kl[isl, j][:, None], kr[j, ksl][None, :], combine_kind)
                logit = (qt * kc).sum(axis=-1) * scale
                w = np.exp(logit - m) / s
                vc = combine_arrays(vl[isl, j][:, None], vr[j, ksl][None, :], combine_kind)
                o += w[..., None] * vc
            att[isl, ksl] = o
            m_stat[isl, ksl] = m
            s_stat[isl, ksl] = s

    a2 = att.reshape(n * n, d)
    y = _apply_linear(a2, p.out_proj).reshape(n, n, d)
    out = Tensor(_ensure_finite(y, "pivotal_attention_streamed"), parents=(x,) + tuple(p.tensors()))

    def backward(g):
        # attention weights are recomputed from (x, params) and the stored
        # softmax statistics; no N^3 buffer is ever allocated
        q_, kl_, kr_, vl_, vr_ = _project_pairwise(x.data.reshape(n * n, d), p, n)
        g2 = g.reshape(n * n, d)
        da2 = np.zeros_like(a2)
        _linear_backward(a2, p.out_proj, g2, da2)
        ga = da2.reshape(n, n, h, dh)

        dq = np.zeros_like(q_)
        dkl = np.zeros_like(kl_)
        dkr = np.zeros_like(kr_)
        dvl = np.zeros_like(vl_)
        dvr = np.zeros_like(vr_)
        for i0 in range(0, n, tile):
            isl = slice(i0, min(i0 + tile, n))
            for k0 in range(0, n, tile):
                ksl = slice(k0, min(k0 + tile, n))
                qt = q_[isl, ksl]
                gat = ga[isl, ksl]
                m = m_stat[isl, ksl]
                s = s_stat[isl, ksl]
                # sweep 1: softmax dot term D = sum_j w_j * (ga . vc_j)
                dterm = np.zeros(qt.shape[:3])
                for j in range(n):
                    kc = combine_arrays(kl_[isl, j][:, None], kr_[j, ksl][None, :], combine_kind)
                    w = np.exp((qt * kc).sum(axis=-1) * scale - m) / s
                    vc = combine_arrays(vl_[isl, j][:, None], vr_[j, ksl][None, :], combine_kind)
                    dterm += w * (gat * vc).sum(axis=-1)
                # sweep 2: per-pivot gradients
                for j in range(n):
                    kc = combine_arrays(kl_[isl, j][:, None], kr_[j, ksl][None, :], combine_kind)
                    w = np.exp((qt * kc).sum(axis=-1) * scale - m) / s
                    vc = combine_arrays(vl_[isl, j][:, None], vr_[j, ksl][None, :], combine_kind)
                    dw = (gat * vc).sum(axis=-1)
                    dlog = w * (dw - dterm) * scale
                    dq[isl, ksl] += dlog[..., None] * kc
                    dkc = dlog[..., None] * qt
                    dvc = w[..., None] * gat
                    if combine_kind == "additive":
                        dkl[isl, j] += dkc.sum(axis=1)
                        dkr[j, ksl] += dkc.sum(axis=0)
                        dvl[isl, j] += dvc.sum(axis=1)
                        dvr[j, ksl] += dvc.sum(axis=0)
                    else:
                        dkl[isl, j] += (dkc * kr_[j, ksl][None, :]).sum(axis=1)
                        dkr[j, ksl] += (dkc * kl_[isl, j][:, None]).sum(axis=0)
                        dvl[isl, j] += (dvc * vr_[j, ksl][None, :]).sum(axis=1)
                        dvr[j, ksl] += (dvc * vl_[isl, j][:, None]).sum(axis=0)

        dx2 = np.zeros_like(x2)
        _linear_backward(x2, p.q_proj, dq.reshape(n * n, d), dx2)
        _linear_backward(x2, p.k_proj_left, dkl.reshape(n * n, d), dx2)
        _linear_backward(x2, p.k_proj_right, dkr.reshape(n * n, d), dx2)
        _linear_backward(x2, p.v_proj_left, dvl.reshape(n * n, d), dx2)
        _linear_backward(x2, p.v_proj_right, dvr.reshape(n * n, d), dx2)
        _accumulate(x, dx2.reshape(n, n, d))

    out.backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# k-order generalization (k = 1 is plain self-attention, k = 2 is pairwise)
# ---------------------------------------------------------------------------


def _subst_view(arr, pos, k):
    """View of a projected tuple tensor after substituting position ``pos``.

    arr has axes (a_0 .. a_{k-1}, h, dh); the result broadcasts over the
    replaced axis and carries the pivot on axis k, aligned to the layout
    (e_0 .. e_{k-1}, p, h, dh).
    """
    moved = np.moveaxis(arr, pos, k - 1)
    return np.expand_dims(moved, axis=pos)


def _combine_views(views, kind):
    if len(views) == 1:
        return np.ascontiguousarray(views[0])
    full = combine_arrays(views[0], views[1], kind)
    for v in views[2:]:
        full = combine_arrays(full, v, kind)
    return full


def korder_pivotal_attention(x: Tensor, p: KOrderAttentionParams, combine_kind="additive") -> Tensor:
    """Tuple-state pivotal attention for k in {1, 2, 3}.

    k = 2 runs the pairwise naive kernel on the position-mapped parameters
    and is bitwise identical to it.
    """
    _check_combine(combine_kind)
    k = p.order
    if x.ndim != k + 1 or len(set(x.shape[:-1])) != 1:
        raise ValueError(f"expected an (N,)*{k} + (d_r,) state, got {x.shape}")
    if k == 2:
        return pivotal_attention_naive(x, pairwise_params_from_korder(p), combine_kind)
    n = x.shape[0]
    if k == 3 and n > 16:
        raise ValueError(f"k=3 enumeration capped at N=16, got N={n}")
    d = x.shape[-1]
    h, dh = p.heads, p.head_dim
    if d != h * dh:
        raise ValueError(f"state width {d} != heads*head_dim {h * dh}")
    scale = 1.0 / np.sqrt(dh)

    xk = x.data.reshape(-1, d)
    tshape = x.shape[:-1] + (h, dh)
    q = _apply_linear(xk, p.q_proj).reshape(tshape)
    ks = [_apply_linear(xk, kp).reshape(tshape) for kp in p.key_projs]
    vs = [_apply_linear(xk, vp).reshape(tshape) for vp in p.value_projs]

    full = x.shape[:-1] + (n, h, dh)
    k_views = [np.broadcast_to(_subst_view(ks[m], m, k), full) for m in range(k)]
    v_views = [np.broadcast_to(_subst_view(vs[m], m, k), full) for m in range(k)]
    k_comb = _combine_views(k_views, combine_kind)
    v_comb = _combine_views(v_views, combine_kind)

    q_exp = np.expand_dims(q, axis=k)
    logits = (q_exp * k_comb).sum(axis=-1) * scale
    w = stable_softmax(logits, axis=k)
    att = (np.expand_dims(w, -1) * v_comb).sum(axis=k)
    y = _apply_linear(att.reshape(-1, d), p.out_proj).reshape(x.shape)
    out = Tensor(_ensure_finite(y, "korder_pivotal_attention"), parents=(x,) + tuple(p.tensors()))

    def backward(g):
        g2 = g.reshape(-1, d)
        a2 = att.reshape(-1, d)
        da2 = np.zeros_like(a2)
        _linear_backward(a2, p.out_proj, g2, da2)
        ga = da2.reshape(tshape)
        ga_exp = np.expand_dims(ga, axis=k)

        dv_comb = np.expand_dims(w, -1) * ga_exp
        dw = (ga_exp * v_comb).sum(axis=-1)
        dlog = w * (dw - (w * dw).sum(axis=k, keepdims=True)) * scale
        dq = (np.expand_dims(dlog, -1) * k_comb).sum(axis=k)
        dk_comb = np.expand_dims(dlog, -1) * q_exp

        dx2 = np.zeros_like(xk)
        _linear_backward(xk, p.q_proj, dq.reshape(-1, d), dx2)
        for m in range(k):
            if combine_kind == "additive":
                gk = dk_comb
                gv = dv_comb
            else:
                others_k = [k_views[mm] for mm in range(k) if mm != m]
                others_v = [v_views[mm] for mm in range(k) if mm != m]
                gk = dk_comb * np.prod(others_k, axis=0) if others_k else dk_comb
                gv = dv_comb * np.prod(others_v, axis=0) if others_v else dv_comb
            dk_m = np.moveaxis(gk.sum(axis=m), k - 1, m)
            dv_m = np.moveaxis(gv.sum(axis=m), k - 1, m)
            _linear_backward(xk, p.key_projs[m], dk_m.reshape(-1, d), dx2)
            _linear_backward(xk, p.value_projs[m], dv_m.reshape(-1, d), dx2)
        _accumulate(x, dx2.reshape(x.shape))

    out.backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# Multiplicative combine expresses rotation composition
# ---------------------------------------------------------------------------


def rotation_combine_maps():
    """The fixed value projections and output projection for 3x3 rotations.

    With row-major rotations embedded in the first 9 of 27 channels,
    V_A = R_A @ M_A and V_B = R_B @ M_B satisfy
    (V_A * V_B)[9a + 3b + c] = T_A[a, b] * T_B[b, c], so the output
    projection M_C sums each b-diagonal back to flatten(T_A @ T_B).
    """
    m_a = np.zeros((9, 27))
    m_b = np.zeros((9, 27))
    m_c = np.zeros((27, 9))
    for c in range(27):
        m_a[c // 3, c] = 1.0
        m_b[c % 9, c] = 1.0
    for r in range(9):
        for beta in range(3):
            m_c[9 * (r // 3) + 3 * beta + (r % 3), r] = 1.0
    return m_a, m_b, m_c


def _check_rotation(t, name):
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (3, 3):
        raise ValueError(f"{name} must be 3x3, got {t.shape}")
    if not np.allclose(t.T @ t, np.eye(3), atol=1e-9) or not np.isclose(np.linalg.det(t), 1.0, atol=1e-9):
        raise ValueError(f"{name} is not a rotation matrix")
    return t


def rotation_compose_check(t_a, t_b) -> np.ndarray:
    """Compose two rotations through the multiplicative value path.

    Embeds each rotation row-major (zero-padded to 27 channels), applies the
    fixed value projections, multiplies elementwise, projects out, and
    returns the 3x3 result, which equals t_a @ t_b exactly.
    """
    t_a = _check_rotation(t_a, "t_a")
    t_b = _check_rotation(t_b, "t_b")
    m_a, m_b, m_c = rotation_combine_maps()
    r_a = np.zeros(27)
    r_b = np.zeros(27)
    r_a[:9] = t_a.reshape(-1)
    r_b[:9] = t_b.reshape(-1)
    v_a = r_a[:9] @ m_a
    v_b = r_b[:9] @ m_b
    v_c = combine_arrays(v_a, v_b, "multiplicative")
    return (v_c @ m_c).reshape(3, 3)


def random_rotation(rng):
    """Uniform random rotation via the QR decomposition of a Gaussian."""
    m = rng.standard_normal((3, 3))
    qm, rm = np.linalg.qr(m)
    qm = qm * np.sign(np.diag(rm))
    if np.linalg.det(qm) < 0:
        qm[:, 0] = -qm[:, 0]
    return qm


# ---------------------------------------------------------------------------
# Kernel instrumentation
# ---------------------------------------------------------------------------


def kernel_benchmark(impl, n, d_r, heads, seed=0, combine_kind="additive", tile=32):
    """Time one forward pass and record its peak auxiliary allocation.

    Inputs and parameters are allocated before measurement starts, so the
    reported bytes cover only what the kernel itself allocates.
    """
    if impl not in ("naive", "streamed"):
        raise ValueError(f"impl must be 'naive' or 'streamed', got {impl!r}")
    rng = np.random.default_rng(seed)
    params = init_attention_params(rng, d_r, heads)
    x = Tensor(rng.standard_normal((n, n, d_r)))

    gc.collect()
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    base, _ = tracemalloc.get_traced_memory()
    tracemalloc.reset_peak()
    t0 = time.perf_counter()
    if impl == "naive":
        out = pivotal_attention_naive(x, params, combine_kind)
    else:
        out = pivotal_attention_streamed(x, params, combine_kind, tile=tile)
    wall_ms = (time.perf_counter() - t0) * 1e3
    _, peak = tracemalloc.get_traced_memory()
    if not was_tracing:
        tracemalloc.stop()
    checksum = hashlib.sha256(out.data.tobytes()).hexdigest()[:16]
    return {
        "impl": impl,
        "N": n,
        "d_r": d_r,
        "heads": heads,
        "wall_ms": wall_ms,
        "peak_bytes": int(peak - base),
        "checksum": checksum,
    }
