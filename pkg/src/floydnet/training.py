"""Losses, AdamW, plateau learning-rate schedule, and synthetic-task training.

Training is online: every step draws a fresh random graph, labels it with
the exact brute-force oracle, and regresses the edge-level readout onto the
normalized targets. Evaluation uses a frozen held-out set at a larger graph
size than anything seen in training.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass

import numpy as np

from .graphs import Graph, cycle_count_oracle, floyd_warshall_oracle, gen_random_graph
from .model import ModelConfig, ModelParams, init_model_params, model_forward, readout
from .nn import Tensor, _accumulate, _ensure_finite, reshape, save_params

LOSS_KINDS = ("mse", "mae", "bce")
TASKS = ("shortest_path", "cycle_count")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    betas: tuple = (0.9, 0.95)
    eps: float = 1e-8
    weight_decay: float = 0.01
    epochs: int = 10
    steps_per_epoch: int = 200
    batch_size: int = 1
    grad_accum: int = 8
    seed: int = 0
    warmup_steps: int = 100
    plateau_patience: int = 10
    plateau_factor: float = 0.5
    clip_norm: float = 1.0
    loss: str = "mse"
    train_n: tuple = (6, 10)
    eval_n: int = 12
    eval_graphs: int = 16
    edge_p: tuple = (0.3, 0.7)  # per-graph probability drawn uniformly from this range
    weight_range: tuple = (1, 10)
    target_mae: float = 0.0  # stop early once eval MAE drops below (0 = never)
    time_budget_s: float = 0.0  # wall-clock cap (0 = none)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")


@dataclass
class TrainRun:
    history: list  # one record per evaluation
    wall_s: float
    final_eval_mae: float
    checkpoint_path: str | None


# ---------------------------------------------------------------------------
# Losses (fused primitives: scalar out, mask-aware backward)
# ---------------------------------------------------------------------------


def loss(pred: Tensor, target, kind, mask) -> Tensor:
    """Masked scalar loss; masked-out entries contribute exactly zero gradient.

    mse/mae regress raw values; bce expects probabilities in (0, 1) and 0/1
    targets. The scalar is averaged over the mask support.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"loss must be one of {LOSS_KINDS}")
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    denom = mask.sum()
    if denom <= 0:
        raise ValueError("empty mask")

    if kind == "mse":
        resid = (pred.data - target) * mask
        value = (resid * (pred.data - target)).sum() / denom
        grad = 2.0 * resid / denom
    elif kind == "mae":
        resid = (pred.data - target) * mask
        value = np.abs(resid).sum() / denom
        grad = np.sign(resid) * mask / denom
    else:
        p = np.clip(pred.data, 1e-12, 1.0 - 1e-12)
        per = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
        value = (per * mask).sum() / denom
        grad = mask * (p - target) / (p * (1.0 - p)) / denom

    out = Tensor(np.array(value), parents=(pred,))
    _ensure_finite(out.data, f"{kind} loss")

    def backward(g):
        _accumulate(pred, float(g) * grad)

    out.backward_fn = backward
    return out


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


def adamw_state(params):
    """Fresh first/second-moment accumulators for (name, Tensor) pairs."""
    return {
        "step": 0,
        "m": {name: np.zeros_like(t.data) for name, t in params},
        "v": {name: np.zeros_like(t.data) for name, t in params},
    }


def adamw_step(params, grads, state, cfg: TrainConfig, lr=None):
    """Decoupled-weight-decay update with bias correction, in place."""
    if lr is None:
        lr = cfg.lr
    b1, b2 = cfg.betas
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for (name, p), g in zip(params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
        m = state["m"][name]
        v = state["v"][name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if cfg.weight_decay:
            p.data *= 1.0 - lr * cfg.weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return state


def clip_gradients(grads, max_norm):
    """Scale the full gradient set to a global norm cap; returns the norm."""
    total = 0.0
    for g in grads:
        if g is not None:
            total += float((g * g).sum())
    norm = np.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            if g is not None:
                g *= scale
    return norm


def lr_at(step, cfg: TrainConfig, plateau_scale):
    """Linear warmup to cfg.lr, then constant scaled by the plateau factor."""
    warm = min(1.0, (step + 1) / max(1, cfg.warmup_steps))
    return cfg.lr * warm * plateau_scale


@dataclass
class PlateauState:
    best: float = np.inf
    bad: int = 0
    scale: float = 1.0

    def update(self, metric, cfg: TrainConfig):
        if metric < self.best - 1e-12:
            self.best = metric
            self.bad = 0
        else:
            self.bad += 1
            if self.bad > cfg.plateau_patience:
                self.scale *= cfg.plateau_factor
                self.bad = 0
        return self.scale


# ---------------------------------------------------------------------------
# Synthetic tasks
# ---------------------------------------------------------------------------


def _weight_scale(cfg: TrainConfig):
    return float(max(cfg.weight_range[1], 1))


def _draw_edge_p(rng, train_cfg: TrainConfig):
    p = train_cfg.edge_p
    if np.isscalar(p):
        return float(p)
    lo, hi = p
    return float(rng.uniform(lo, hi))


def task_graph(task, n, rng, train_cfg: TrainConfig) -> Graph:
    seed = int(rng.integers(0, 2**63 - 1))
    p = _draw_edge_p(rng, train_cfg)
    if task == "shortest_path":
        g = gen_random_graph(n, p, train_cfg.weight_range, seed=seed)
        g.edge_feats = np.where(
            g.adjacency[..., None], g.weights[..., None] / _weight_scale(train_cfg), 0.0
        )
    elif task == "cycle_count":
        g = gen_random_graph(n, p, (1, 1), seed=seed)
    else:
        raise ValueError(f"unknown task {task!r}")
    return g


def task_labels(task, g: Graph):
    """Regression target, mask, and metric scale at the real-pair level.

    The model regresses the normalized target; the reported MAE is
    |pred - target| * scale, so the scale choice fixes the metric units.

    shortest_path: distances normalized by the graph diameter (the metric is
    on the normalized scale, scale=1); unreachable pairs are masked out so
    the +inf sentinel never reaches the loss.
    cycle_count: triangles through each edge divided by the pivot count
    n + 1 (attention aggregates per-pivot averages, which transfer across
    sizes); scale=n+1 puts the metric back on raw counts. Mask is the edge
    set.
    """
    if task == "shortest_path":
        d = floyd_warshall_oracle(g)
        finite = np.isfinite(d)
        diam = d[finite].max()
        target = np.where(finite, d, 0.0) / max(diam, 1.0)
        return target, finite.astype(np.float64), 1.0
    if task == "cycle_count":
        counts = cycle_count_oracle(g, 3, level="edge").astype(np.float64)
        pivots = g.n + 1
        return counts / pivots, g.adjacency.astype(np.float64), float(pivots)
    raise ValueError(f"unknown task {task!r}")


def task_model_config(task, train_cfg: TrainConfig, layers=8, rel_dim=64, heads=4, seed=0) -> ModelConfig:
    edge_dim = 1 if task == "shortest_path" else 0
    return ModelConfig(
        layers=layers,
        rel_dim=rel_dim,
        heads=heads,
        combine="additive",
        order=2,
        readout="edge",
        supernode=True,
        seed=seed,
        node_dim=0,
        edge_dim=edge_dim,
        graph_dim=0,
        kernel="naive",
        decoder_dim=1,
    )


def predict_pairs(g: Graph, cfg: ModelConfig, params: ModelParams) -> Tensor:
    r = model_forward(g, cfg, params)
    pred = readout(r, "edge", params.decoder, cfg)
    return reshape(pred, (g.n, g.n))


def evaluate(task, eval_set, cfg: ModelConfig, params: ModelParams) -> float:
    """MAE over the masked targets of a fixed set, in metric units."""
    errs = []
    for g, target, mask, scale in eval_set:
        pred = predict_pairs(g, cfg, params)
        err = np.abs(pred.data - target) * mask * scale
        errs.append(err.sum() / mask.sum())
    return float(np.mean(errs))


def draw_sample(task, n, rng, train_cfg: TrainConfig):
    """Draw a labeled graph, resampling the rare all-masked case."""
    for _ in range(64):
        g = task_graph(task, n, rng, train_cfg)
        target, mask, scale = task_labels(task, g)
        if mask.sum() > 0:
            return g, target, mask, scale
    raise RuntimeError(f"could not draw a usable {task} graph at n={n}")


def build_eval_set(task, train_cfg: TrainConfig):
    rng = np.random.default_rng(train_cfg.seed + 777_000)
    return [draw_sample(task, train_cfg.eval_n, rng, train_cfg) for _ in range(train_cfg.eval_graphs)]


def train_task(task, model_cfg: ModelConfig, train_cfg: TrainConfig, out_dir=None) -> TrainRun:
    """Online training loop with gradient accumulation and plateau schedule."""
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    rng = np.random.default_rng(train_cfg.seed)
    params = init_model_params(model_cfg)
    named = list(params.named())
    state = adamw_state(named)
    plateau = PlateauState()
    eval_set = build_eval_set(task, train_cfg)

    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_fh = open(f"{out_dir}/run_log.jsonl", "w")

    t0 = time.time()
    history = []
    step = 0
    stop = False
    eval_mae = evaluate(task, eval_set, model_cfg, params)

    def record(epoch, train_loss):
        rec = {
            "epoch": epoch,
            "step": step,
            "train_loss": train_loss,
            "eval_mae": eval_mae,
            "lr": lr_at(step, train_cfg, plateau.scale),
            "wall_s": time.time() - t0,
        }
        history.append(rec)
        if log_fh:
            log_fh.write(json.dumps(rec) + "\n")
            log_fh.flush()
        return rec

    record(0, float("nan"))
    for epoch in range(1, train_cfg.epochs + 1):
        if stop:
            break
        losses = []
        for _ in range(train_cfg.steps_per_epoch):
            params.zero_grads()
            accum_loss = 0.0
            for _ in range(train_cfg.grad_accum):
                n = int(rng.integers(train_cfg.train_n[0], train_cfg.train_n[1] + 1))
                g, target, mask, _ = draw_sample(task, n, rng, train_cfg)
                pred = predict_pairs(g, model_cfg, params)
                value = loss(pred, target, train_cfg.loss, mask)
                value.backward(seed=np.array(1.0 / train_cfg.grad_accum))
                accum_loss += value.item() / train_cfg.grad_accum
            grads = [t.grad for _, t in named]
            clip_gradients(grads, train_cfg.clip_norm)
            adamw_step(named, grads, state, train_cfg, lr=lr_at(step, train_cfg, plateau.scale))
            losses.append(accum_loss)
            step += 1
            if train_cfg.time_budget_s and time.time() - t0 > train_cfg.time_budget_s:
                stop = True
                break
        eval_mae = evaluate(task, eval_set, model_cfg, params)
        plateau.update(eval_mae, train_cfg)
        record(epoch, float(np.mean(losses)) if losses else float("nan"))
        if train_cfg.target_mae and eval_mae < train_cfg.target_mae:
            stop = True

    ckpt = None
    if out_dir is not None:
        ckpt = f"{out_dir}/model.ckpt"
        save_params(named, ckpt)
        model_cfg.to_file(f"{out_dir}/model.cfg")
        log_fh.close()
    return TrainRun(
        history=history,
        wall_s=time.time() - t0,
        final_eval_mae=eval_mae,
        checkpoint_path=ckpt,
    )
