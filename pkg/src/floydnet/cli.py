"""Command-line entry point for every verification and training workflow.

Every run prints a header with the resolved configuration and seed, writes
machine-readable artifacts (CSV / JSON-lines) under --out, and exits 0 on
pass, 1 on a failed check, 2 on usage errors. Outputs are reproducible for
a fixed seed, wall-clock fields excepted.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys


def _maybe_cap_threads(argv):
    # honored before numpy loads its threading backends
    if "--threads" in argv:
        idx = argv.index("--threads")
        if idx + 1 < len(argv):
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ.setdefault(var, argv[idx + 1])


def build_parser():
    parser = argparse.ArgumentParser(
        prog="floydnet",
        description="Pivotal-attention relational refinement: checks, benchmarks, training.",
    )
    parser.add_argument("--seed", type=int, default=0, help="base random seed")
    parser.add_argument("--out", default=None, help="output directory for artifacts")
    parser.add_argument("--threads", type=int, default=1, help="worker cap (1 = bitwise deterministic)")
    parser.add_argument("--config", default=None, help="key=value model config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks for primitives and the full model")
    p.add_argument("--tol", type=float, default=1e-6, help="primitive tolerance")
    p.add_argument("--model-tol", type=float, default=1e-5, help="end-to-end tolerance")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seeds", type=int, default=3, help="number of random repetitions")

    p = sub.add_parser("kernel-equiv", help="streamed vs naive agreement on random configurations")
    p.add_argument("--cases", type=int, default=25)
    p.add_argument("--max-n", type=int, default=24)
    p.add_argument("--forward-tol", type=float, default=1e-10)
    p.add_argument("--grad-tol", type=float, default=1e-9)

    p = sub.add_parser("kernel-bench", help="wall time and peak auxiliary memory per kernel")
    p.add_argument("--n", default="32,64,128", help="comma-separated sizes")
    p.add_argument("--dr", type=int, default=16)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--impl", default="both", choices=("naive", "streamed", "both"))

    p = sub.add_parser("expressivity", help="oracle and model verdicts on the curated pair suite")
    p.add_argument("--k", type=int, default=2, choices=(2, 3))
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--quantization", type=int, default=6)

    p = sub.add_parser("rotation-check", help="multiplicative combine composes rotations exactly")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-12)

    p = sub.add_parser("train", help="train a synthetic task online")
    p.add_argument("--task", required=True, choices=("shortest_path", "cycle_count"))
    p.add_argument("--layers", type=int, default=8)
    p.add_argument("--dr", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--grad-accum", type=int, default=2)
    p.add_argument("--target-mae", type=float, default=0.0)
    p.add_argument("--time-budget", type=float, default=0.0)

    p = sub.add_parser("eval", help="evaluate a checkpoint on freshly generated graphs")
    p.add_argument("--task", required=True, choices=("shortest_path", "cycle_count"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--model-config", required=True)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--graphs", type=int, default=16)

    p = sub.add_parser("oracle", help="run the label oracles on a graph file or generator")
    p.add_argument("--input", default=None, help="graph file path")
    p.add_argument("--format", default="edge-list", choices=("edge-list", "dense-matrix"))
    p.add_argument("--gen", default=None, help="generate instead: 'n,p' for a random graph")
    p.add_argument("--cycle-len", type=int, default=3)
    p.add_argument("--wl", type=int, default=0, choices=(0, 1, 2, 3), help="also run k-order refinement")

    return parser


def _header(args, extra=None):
    rec = {"command": args.command, "seed": args.seed, "threads": args.threads}
    if extra:
        rec.update(extra)
    print(json.dumps({"run_config": rec}, sort_keys=True))


def _out_path(args, name):
    if args.out is None:
        return None
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_jsonl(path, records):
    if path is None:
        return
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def cmd_gradcheck(args):
    import numpy as np

    from . import nn
    from .graphs import gen_random_graph
    from .model import ModelConfig, init_model_params, model_forward, readout
    from .nn import grad_check, tensor, tsum

    records = []
    failed = False
    for seed in range(args.seeds):
        rng = np.random.default_rng(args.seed + seed)
        x = tensor(rng.standard_normal((3, 5)))
        cases = {
            "linear": lambda x=x, p=nn.init_linear(rng, 5, 4): tsum(nn.mul(nn.linear(x, p), nn.linear(x, p))),
            "layer_norm": lambda x=x, p=nn.init_norm(5): tsum(nn.mul(nn.layer_norm(x, p), nn.layer_norm(x, p))),
            "rms_norm": lambda x=x, p=nn.init_norm(5): tsum(nn.mul(nn.rms_norm(x, p), nn.rms_norm(x, p))),
            "softmax": lambda x=x: tsum(nn.mul(nn.softmax(x, -1), nn.softmax(x, -1))),
            "gelu": lambda x=x: tsum(nn.mul(nn.gelu(x), nn.gelu(x))),
            "ffn": lambda x=x, p=nn.init_ffn(rng, 5, 9): tsum(nn.mul(nn.ffn(x, p), nn.ffn(x, p))),
        }
        for name, f in cases.items():
            rep = grad_check(f, [("x", x)], eps=args.eps, tol=args.tol)
            records.append({"seed": seed, "op": name, "max_rel_err": rep.worst, "passed": rep.passed})
            failed |= not rep.passed

        g = gen_random_graph(4, 0.6, (1, 5), seed=args.seed + seed)
        g.edge_feats = np.where(g.adjacency[..., None], g.weights[..., None] / 5.0, 0.0)
        cfg = ModelConfig(layers=2, rel_dim=16, heads=2, edge_dim=1, supernode=True, seed=args.seed + seed)
        params = init_model_params(cfg)

        def model_loss():
            pred = readout(model_forward(g, cfg, params), "edge", params.decoder, cfg)
            return tsum(nn.mul(pred, pred))

        rep = grad_check(model_loss, list(params.named()), eps=args.eps, tol=args.model_tol, samples_per_param=3, rng=rng)
        records.append({"seed": seed, "op": "full_model", "max_rel_err": rep.worst, "passed": rep.passed})
        failed |= not rep.passed

    for rec in records:
        print(json.dumps(rec, sort_keys=True))
    _write_jsonl(_out_path(args, "gradcheck.jsonl"), records)
    return 1 if failed else 0


def cmd_kernel_equiv(args):
    import numpy as np

    from .attention import init_attention_params, pivotal_attention_naive, pivotal_attention_streamed
    from .nn import tensor

    rng = np.random.default_rng(args.seed)
    worst_f = worst_g = 0.0
    for case in range(args.cases):
        n = int(rng.integers(1, args.max_n + 1))
        heads = int(rng.choice((1, 2, 4)))
        d_r = heads * int(rng.choice((2, 4, 8)))
        kind = "additive" if rng.random() < 0.5 else "multiplicative"
        p = init_attention_params(rng, d_r, heads)
        x = tensor(rng.standard_normal((n, n, d_r)))
        seed_grad = rng.standard_normal((n, n, d_r))

        names = [t for t in p.tensors()] + [x]
        out_n = pivotal_attention_naive(x, p, kind)
        out_n.backward(seed=seed_grad)
        grads_n = [t.grad.copy() for t in names]
        for t in names:
            t.zero_grad()
        out_s = pivotal_attention_streamed(x, p, kind, tile=8)
        out_s.backward(seed=seed_grad)
        worst_f = max(worst_f, float(np.abs(out_n.data - out_s.data).max()))
        worst_g = max(worst_g, max(float(np.abs(a - t.grad).max()) for a, t in zip(grads_n, names)))
        for t in names:
            t.zero_grad()
    passed = worst_f < args.forward_tol and worst_g < args.grad_tol
    rec = {
        "cases": args.cases,
        "max_forward_diff": worst_f,
        "max_grad_diff": worst_g,
        "passed": passed,
    }
    print(json.dumps(rec, sort_keys=True))
    _write_jsonl(_out_path(args, "kernel_equiv.jsonl"), [rec])
    return 0 if passed else 1


def cmd_kernel_bench(args):
    from .attention import kernel_benchmark

    sizes = [int(s) for s in args.n.split(",") if s]
    impls = ("naive", "streamed") if args.impl == "both" else (args.impl,)
    rows = []
    for impl in impls:
        for n in sizes:
            rows.append(kernel_benchmark(impl, n, args.dr, args.heads, seed=args.seed))
    fields = ["impl", "N", "d_r", "heads", "wall_ms", "peak_bytes", "checksum"]
    path = _out_path(args, "kernel_bench.csv")
    writer = csv.DictWriter(open(path, "w", newline="") if path else sys.stdout, fieldnames=fields)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    if path:
        for row in rows:
            print(json.dumps(row, sort_keys=True))
    return 0


def cmd_expressivity(args):
    from .wl import SCHEMES, pair_suite, run_suite_model, run_suite_oracle

    pairs = pair_suite()
    records = []
    mismatches = []
    oracle = run_suite_oracle(pairs)
    for pair in pairs:
        for scheme in SCHEMES:
            v = oracle[pair.pair_id][scheme]
            records.append(
                {
                    "pair_id": pair.pair_id,
                    "scheme": scheme,
                    "distinguished": v.distinguished,
                    "rounds": v.rounds_used,
                    "seed": -1,
                }
            )
            if v.distinguished != pair.expected[scheme]:
                mismatches.append((pair.pair_id, scheme))
    seeds = [args.seed + i for i in range(args.seeds)]
    model_records = run_suite_model(args.k, seeds, pairs, quantization=args.quantization)
    records.extend(model_records)

    scheme = f"{args.k}-FWL"
    by_pair = {}
    for rec in model_records:
        by_pair.setdefault(rec["pair_id"], []).append(rec["distinguished"])
    for pair in pairs:
        model_d = any(by_pair[pair.pair_id])
        if model_d != pair.expected[scheme]:
            mismatches.append((pair.pair_id, f"model-k{args.k}"))
        if pair.isomorphic and model_d:
            mismatches.append((pair.pair_id, "false-distinction"))

    for rec in records:
        print(json.dumps(rec, sort_keys=True))
    _write_jsonl(_out_path(args, "expressivity.jsonl"), records)
    if mismatches:
        print(json.dumps({"mismatches": mismatches}))
        return 1
    return 0


def cmd_rotation_check(args):
    import numpy as np

    from .attention import random_rotation, rotation_compose_check

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.trials):
        a, b = random_rotation(rng), random_rotation(rng)
        worst = max(worst, float(np.abs(rotation_compose_check(a, b) - a @ b).max()))
    rec = {"trials": args.trials, "max_abs_err": worst, "passed": worst < args.tol}
    print(json.dumps(rec, sort_keys=True))
    _write_jsonl(_out_path(args, "rotation_check.jsonl"), [rec])
    return 0 if rec["passed"] else 1


def cmd_train(args):
    from .training import TrainConfig, task_model_config, train_task

    tc = TrainConfig(
        lr=args.lr,
        epochs=args.epochs,
        steps_per_epoch=args.steps,
        grad_accum=args.grad_accum,
        seed=args.seed,
        target_mae=args.target_mae,
        time_budget_s=args.time_budget,
    )
    mc = task_model_config(args.task, tc, layers=args.layers, rel_dim=args.dr, heads=args.heads, seed=args.seed)
    run = train_task(args.task, mc, tc, out_dir=args.out)
    for rec in run.history:
        print(json.dumps(rec, sort_keys=True))
    print(json.dumps({"final_eval_mae": run.final_eval_mae, "wall_s": run.wall_s}, sort_keys=True))
    return 0


def cmd_eval(args):
    from .model import ModelConfig, init_model_params
    from .nn import load_params, restore_params
    from .training import TrainConfig, build_eval_set, evaluate

    cfg = ModelConfig.from_file(args.model_config)
    params = init_model_params(cfg)
    restore_params(list(params.named()), load_params(args.checkpoint))
    tc = TrainConfig(seed=args.seed, eval_n=args.n, eval_graphs=args.graphs)
    eval_set = build_eval_set(args.task, tc)
    mae = evaluate(args.task, eval_set, cfg, params)
    print(json.dumps({"task": args.task, "n": args.n, "graphs": args.graphs, "eval_mae": mae}, sort_keys=True))
    return 0


def cmd_oracle(args):
    import numpy as np

    from .graphs import cycle_count_oracle, floyd_warshall_oracle, gen_random_graph, load_graph
    from .wl import kfwl_refine, signature, wl1_refine

    if (args.input is None) == (args.gen is None):
        print("oracle: provide exactly one of --input or --gen", file=sys.stderr)
        return 2
    if args.input:
        g = load_graph(args.input, format=args.format)
    else:
        n_str, p_str = args.gen.split(",")
        g = gen_random_graph(int(n_str), float(p_str), seed=args.seed)

    d = floyd_warshall_oracle(g)
    rec = {
        "n": g.n,
        "edges": g.num_edges(),
        "finite_pairs": int(np.isfinite(d).sum()),
        "diameter": float(d[np.isfinite(d)].max()),
    }
    if g.n <= 16:
        rec["cycle_counts"] = {
            str(length): int(cycle_count_oracle(g, length)) for length in (3, 4, 5, 6)
        }
    if args.wl:
        part = wl1_refine(g) if args.wl == 1 else kfwl_refine(g, args.wl)
        rec["wl"] = {
            "order": args.wl,
            "colors": int(part.num_colors),
            "rounds": part.rounds,
            "signature": signature(part).digest,
        }
    print(json.dumps(rec, sort_keys=True))
    _write_jsonl(_out_path(args, "oracle.jsonl"), [rec])
    return 0


_COMMANDS = {
    "gradcheck": cmd_gradcheck,
    "kernel-equiv": cmd_kernel_equiv,
    "kernel-bench": cmd_kernel_bench,
    "expressivity": cmd_expressivity,
    "rotation-check": cmd_rotation_check,
    "train": cmd_train,
    "eval": cmd_eval,
    "oracle": cmd_oracle,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _maybe_cap_threads(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    _header(args)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
