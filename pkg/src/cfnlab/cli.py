"""Command-line laboratory: train, eval, dynamics, gradcheck.

Every run is a pure function of its flags: a `run-manifest.json` with
the full configuration and package version is written beside the
outputs, repeated runs produce byte-identical files, and `--threads 4`
matches `--threads 1` bit for bit (work is split into fixed blocks
whose arithmetic does not depend on the thread count). All randomness
flows from `--seed`.

Exit codes: 0 success, 1 domain or verification failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__, dynamics as dyn
from .cells import CfnParams, random_cfn_params
from .corpus import build_corpus, load_vocab, save_vocab
from .errors import CfnLabError, ValidationError
from .numkit import Rng
from .stack import init_stack, load_checkpoint, save_checkpoint
from .training import evaluate, gradcheck_stack, train

GRAD_TOL = 1e-6


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: str, header: list, rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _out_dir(args) -> str:
    out = args.out or os.environ.get("CFNLAB_OUT") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out: str, args, summary: dict) -> None:
    config = {}
    for key, value in vars(args).items():
        if key in ("func", "out"):
            continue
        if isinstance(value, tuple):
            value = list(value)
        config[key] = value
    doc = {"artifact": "cfnlab", "version": __version__,
           "config": config, "summary": summary}
    with open(os.path.join(out, "run-manifest.json"), "w",
              newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------- train

def cmd_train(args) -> int:
    out = _out_dir(args)
    paths = {"train": args.train, "valid": args.valid}
    if args.test:
        paths["test"] = args.test
    corpus = build_corpus(paths, args.max_vocab, lowercase=args.lowercase)
    rng = Rng(args.seed)
    stack = init_stack(args.cell, args.depth, args.hidden,
                       corpus.vocab.size, rng, scale=args.scale)

    def on_epoch(row):
        print(f"epoch {row.epoch} lr {_fmt(row.lr)} "
              f"train_nll {_fmt(row.train_nll)} "
              f"val_perp {_fmt(row.val_perp)}")

    rows = train(stack, corpus.splits["train"], corpus.splits["valid"],
                 epochs=args.epochs, lr0=args.lr0, schedule=args.schedule,
                 unroll=args.unroll, batch_size=args.batch_size,
                 between_rate=args.p, gate_rate=args.q,
                 rng=rng if (args.p or args.q) else None,
                 resample_masks=args.resample_masks, on_epoch=on_epoch)
    save_checkpoint(stack, os.path.join(out, "checkpoint.txt"))
    save_vocab(corpus.vocab, os.path.join(out, "vocab.tsv"))
    _write_csv(os.path.join(out, "train-log.csv"),
               ["epoch", "step", "lr", "train_nll", "val_perp"],
               [(r.epoch, r.step, r.lr, r.train_nll, r.val_perp)
                for r in rows])
    final = rows[-1].val_perp if rows else float("nan")
    _write_manifest(out, args, {"val_perplexity": final,
                                "params": stack.param_count(),
                                "vocab": corpus.vocab.size})
    print(f"val_perplexity {_fmt(final)}")
    return 0


# ----------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    out = _out_dir(args)
    stack = load_checkpoint(args.checkpoint)
    vocab = load_vocab(args.vocab)
    if vocab.size != stack.vocab:
        raise ValidationError(
            f"vocab size {vocab.size} != checkpoint vocab {stack.vocab}")
    corpus = build_corpus({"test": args.data}, vocab.size,
                          lowercase=args.lowercase, vocab=vocab)
    perp = evaluate(stack, corpus.splits["test"])
    nll = math.log(perp)
    _write_manifest(out, args, {"nll": nll, "perplexity": perp})
    print(f"nll {_fmt(nll)}")
    print(f"perplexity {_fmt(perp)}")
    return 0


# ------------------------------------------------------------- dynamics

_PAPER_MAPS = {
    "paper-lstm": lambda: dyn.induced_from_model(dyn.chaotic_lstm_params()),
    "paper-gru": lambda: dyn.induced_from_model(dyn.chaotic_gru_params()),
    "henon": lambda: dyn.henon_map(),
}


def _resolve_map(args) -> dyn.InducedMap:
    if args.map == "checkpoint":
        if not args.checkpoint:
            raise ValidationError("--map checkpoint needs --checkpoint")
        return dyn.induced_from_model(load_checkpoint(args.checkpoint))
    return _PAPER_MAPS[args.map]()


def _default_box(args, imap) -> list:
    if args.box is not None:
        lo, hi = args.box
        return [(lo, hi)] * imap.dim
    if imap.kind == "henon":
        return [(-0.1, 0.1)] * 2
    return [(0.0, 1.0)] * imap.dim


def _draw_u0(imap, box, rng: Rng) -> np.ndarray:
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return lo + rng.uniform(0.0, 1.0, imap.dim) * (hi - lo)


def _proj_names(imap) -> list:
    if imap.kind == "henon":
        return ["x", "y"]
    return [f"h{j}" for j in range(imap.h_indices.size)]


def _state_names(imap) -> list:
    """Column names for the full flattened state of an induced map."""
    if imap.kind == "henon":
        return ["x", "y"]
    names = [f"u{j}" for j in range(imap.dim)]
    for k, j in enumerate(imap.h_indices):
        names[j] = f"h{k}"
    cell = 0
    for j, name in enumerate(names):
        if name.startswith("u"):
            names[j] = f"c{cell}"
            cell += 1
    return names


def _cloud(args, imap, out: str, n_init: int) -> dict:
    box = _default_box(args, imap)
    points, skipped = dyn.attractor_sample(
        imap, n_init, box, args.burn_in, args.keep, Rng(args.seed),
        threads=args.threads)
    _write_csv(os.path.join(out, "cloud.csv"), _proj_names(imap), points)
    if points.shape[0]:
        lo, hi = points.min(axis=0), points.max(axis=0)
    else:
        lo = hi = np.full(imap.h_indices.size, float("nan"))
    print(f"points {points.shape[0]}")
    print(f"skipped {skipped}")
    print("bbox_min " + " ".join(_fmt(v) for v in lo))
    print("bbox_max " + " ".join(_fmt(v) for v in hi))
    return {"points": int(points.shape[0]), "skipped": skipped,
            "bbox_min": [float(v) for v in lo],
            "bbox_max": [float(v) for v in hi]}


def _dyn_attractor(args, out: str) -> tuple:
    imap = _resolve_map(args)
    if args.n_init is not None and args.n_init > 1:
        return 0, _cloud(args, imap, out, args.n_init)
    u0 = _draw_u0(imap, _default_box(args, imap), Rng(args.seed))
    orbit = dyn.iterate(imap, u0, args.steps, keep_from=args.keep_from,
                        stride=args.stride)
    ts = range(orbit.t_start, orbit.t_end + 1, orbit.stride)
    _write_csv(os.path.join(out, "orbit.csv"),
               ["t"] + _state_names(imap),
               [(t, *row) for t, row in zip(ts, orbit.states)])
    proj = orbit.states[:, imap.h_indices]
    _write_csv(os.path.join(out, "cloud.csv"), _proj_names(imap), proj)
    lo, hi = proj.min(axis=0), proj.max(axis=0)
    print(f"points {proj.shape[0]}")
    print("bbox_min " + " ".join(_fmt(v) for v in lo))
    print("bbox_max " + " ".join(_fmt(v) for v in hi))
    return 0, {"points": int(proj.shape[0]),
               "bbox_min": [float(v) for v in lo],
               "bbox_max": [float(v) for v in hi]}


def _dyn_diverge(args, out: str) -> tuple:
    imap = _resolve_map(args)
    rng = Rng(args.seed)
    u0 = _draw_u0(imap, _default_box(args, imap), rng)
    u0 = dyn.iterate(imap, u0, args.burn_in,
                     keep_from=args.burn_in).states[-1]
    traces = dyn.divergence_experiment(
        imap, u0, perturb=args.perturb, steps=args.steps,
        trials=args.trials, rng=rng.derive(24301), threads=args.threads)
    _write_csv(os.path.join(out, "diverge.csv"), ["t", "distance"],
               list(enumerate(traces[0].distances)))
    frac = float(np.mean([t.max_distance > 0.01 for t in traces]))
    worst = max(t.max_distance for t in traces)
    print(f"diverged_frac {_fmt(frac)}")
    print(f"max_distance {_fmt(worst)}")
    return 0, {"diverged_frac": frac, "max_distance": worst,
               "trials": args.trials}


def _impulse_cell(args) -> CfnParams:
    if args.checkpoint:
        stack = load_checkpoint(args.checkpoint)
        if stack.kind != "cfn":
            raise ValidationError("impulse needs a cfn checkpoint")
        if not 0 <= args.layer < stack.depth:
            raise ValidationError(f"no layer {args.layer}")
        return stack.layers[args.layer]
    # the one-unit sketch cell: resting gates sigmoid(+1), sigmoid(-1)
    return CfnParams(W=np.ones((1, 1)), U_theta=np.zeros((1, 1)),
                     V_theta=np.zeros((1, 1)), b_theta=np.array([1.0]),
                     U_eta=np.zeros((1, 1)), V_eta=np.zeros((1, 1)),
                     b_eta=np.array([-1.0]))


def _dyn_impulse(args, out: str) -> tuple:
    p = _impulse_cell(args)
    trace = dyn.impulse_response(p, args.unit, args.spike,
                                 amplitude=args.amplitude,
                                 horizon=args.horizon)
    _write_csv(os.path.join(out, "orbit.csv"),
               ["t"] + [f"h{j}" for j in range(p.hidden)],
               [(t, *row) for t, row in enumerate(trace.h)])
    certs = [dyn.verify_lemma1(trace.h[:, args.unit],
                               trace.theta[:, args.unit],
                               trace.eta[:, args.unit],
                               trace.drive[:, args.unit],
                               args.spike, span, unit=args.unit)
             for span in range(0, args.horizon - args.spike + 1)]
    _write_csv(os.path.join(out, "certificates.csv"),
               ["i", "T", "k", "Theta", "H", "bound", "observed",
                "satisfied"],
               [(c.unit, c.start, c.span, c.theta_max, c.eta_max,
                 c.bound, c.observed, c.satisfied) for c in certs])
    ok = all(c.satisfied for c in certs)
    print(f"h_at_spike {_fmt(trace.h[args.spike, args.unit])}")
    print(f"certificates {len(certs)} satisfied {_fmt(ok)}")
    return (0 if ok else 1), {"h_at_spike":
                              float(trace.h[args.spike, args.unit]),
                              "certificates": len(certs),
                              "all_satisfied": ok}


def _lemma1_example_rows(seed: int) -> list:
    """Full certificate grid of one random instance, through the
    reference single-certificate path (the suite itself uses the
    vectorized twin)."""
    r = Rng(seed).derive(0)
    dim = int(r.integers(1, 17, 1)[0])
    input_dim = int(r.integers(1, 9, 1)[0])
    p = random_cfn_params(dim, input_dim, r, lo=-2.0, hi=2.0)
    h0 = r.uniform(-1.0, 1.0, dim)
    xs = r.uniform(-2.0, 2.0, 58 * input_dim).reshape(58, input_dim)
    traces = dyn.run_cfn_traces(p, h0, xs)
    rows = []
    for start in (0, 4, 8):
        for span in range(0, 51):
            for unit in range(dim):
                c = traces.certificate(unit, start, span)
                rows.append((c.unit, c.start, c.span, c.theta_max,
                             c.eta_max, c.bound, c.observed, c.satisfied))
    return rows


def _dyn_lemma1(args, out: str) -> tuple:
    report = dyn.lemma1_suite(args.trials, Rng(args.seed),
                              threads=args.threads)
    _write_csv(os.path.join(out, "certificates.csv"),
               ["i", "T", "k", "Theta", "H", "bound", "observed",
                "satisfied"], _lemma1_example_rows(args.seed))
    status = "PASS" if report.all_satisfied else "FAIL"
    print(f"certificates {report.n_certificates} "
          f"failures {report.n_failures}")
    print(status)
    return (0 if report.all_satisfied else 1), {
        "certificates": report.n_certificates,
        "failures": report.n_failures, "pass": report.all_satisfied}


def _dyn_lemma2(args, out: str) -> tuple:
    all_pass = True
    worst = 0
    for m in range(args.maps):
        r = Rng(args.seed).derive(m)
        dim = args.dim or int(r.integers(1, 17, 1)[0])
        p = random_cfn_params(dim, args.input_dim, r)
        rep = dyn.verify_zero_attractor(
            p, args.trials, Rng(args.seed).derive(1_000_000 + m),
            tol=args.tol, threads=args.threads)
        all_pass &= rep.passed
        worst = max(worst, rep.worst_steps)
    status = "PASS" if all_pass else "FAIL"
    print(f"maps {args.maps} orbits_per_map {2 * args.trials} "
          f"worst_steps {worst}")
    print(status)
    return (0 if all_pass else 1), {"maps": args.maps,
                                    "worst_steps": worst,
                                    "pass": all_pass}


def _dyn_multilayer(args, out: str) -> tuple:
    if not args.checkpoint:
        raise ValidationError("multilayer needs --checkpoint")
    stack = load_checkpoint(args.checkpoint)
    vocab = load_vocab(args.vocab)
    if vocab.size != stack.vocab:
        raise ValidationError(
            f"vocab size {vocab.size} != checkpoint vocab {stack.vocab}")
    corpus = build_corpus({"test": args.data}, vocab.size,
                          lowercase=args.lowercase, vocab=vocab)
    warm = corpus.splits["test"][:args.warm]
    report = dyn.verify_multilayer_decay(stack, warm, args.horizon)
    rows = []
    for li, layer in enumerate(report.layers):
        for unit, _, _ in layer.slowest:
            for t in range(report.horizon + 1):
                rows.append((t, li, unit, layer.trace[t, unit]))
    _write_csv(os.path.join(out, "decay.csv"),
               ["t", "layer", "unit", "value"], rows)
    print("half_lives " + " ".join(str(h) for h in report.half_lives))
    print(f"ordered {_fmt(report.retention_ordered)}")
    return 0, {"half_lives": report.half_lives,
               "ordered": report.retention_ordered,
               "theta_fit": [l.theta_fit for l in report.layers]}


def _dyn_lyapunov(args, out: str) -> tuple:
    imap = _resolve_map(args)
    u0 = _draw_u0(imap, _default_box(args, imap), Rng(args.seed))
    lam = dyn.lyapunov_estimate(imap, u0, args.steps,
                                renorm_interval=args.renorm,
                                burn_in=args.burn_in)
    print(f"lyapunov {_fmt(lam)}")
    print(f"chaotic {_fmt(lam > 0)}")
    return 0, {"lyapunov": lam, "chaotic": bool(lam > 0)}


def _dyn_henon(args, out: str) -> tuple:
    args.map = "henon"
    imap = dyn.henon_map()
    return 0, _cloud(args, imap, out, args.n_init or 100)


_EXPERIMENTS = {
    "attractor": _dyn_attractor,
    "diverge": _dyn_diverge,
    "impulse": _dyn_impulse,
    "lemma1": _dyn_lemma1,
    "lemma2": _dyn_lemma2,
    "multilayer": _dyn_multilayer,
    "lyapunov": _dyn_lyapunov,
    "henon": _dyn_henon,
}


def cmd_dynamics(args) -> int:
    out = _out_dir(args)
    code, summary = _EXPERIMENTS[args.experiment](args, out)
    _write_manifest(out, args, summary)
    return code


# ------------------------------------------------------------ gradcheck

def cmd_gradcheck(args) -> int:
    out = _out_dir(args)
    cells = ["cfn", "lstm", "gru"] if args.cell == "all" else [args.cell]
    worst = 0.0
    worst_tensor = ""
    for kind in cells:
        cell_worst = 0.0
        for s in range(args.seeds):
            err, per_tensor = gradcheck_stack(
                kind, args.seed + s, between_rate=args.p,
                gate_rate=args.q, corrupt=args.corrupt)
            cell_worst = max(cell_worst, err)
            if err > worst:
                worst = err
                worst_tensor = max(per_tensor, key=per_tensor.get)
        print(f"cell {kind} seeds {args.seeds} "
              f"max_rel_err {_fmt(cell_worst)}")
    ok = worst < GRAD_TOL
    _write_manifest(out, args, {"max_rel_err": worst,
                                "worst_tensor": worst_tensor,
                                "pass": bool(ok)})
    print(f"max_rel_err {_fmt(worst)}")
    if ok:
        print("PASS")
        return 0
    print(f"FAIL worst_tensor {worst_tensor}")
    return 1


# ----------------------------------------------------------------- main

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None,
                   help="output directory (default: $CFNLAB_OUT or .)")
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cfnlab",
        description="Recurrent-network laboratory: training, evaluation, "
                    "and dynamical-systems experiments.")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    t = sub.add_parser("train", help="train a language model")
    t.add_argument("--train", required=True, help="training text file")
    t.add_argument("--valid", required=True, help="validation text file")
    t.add_argument("--test", default=None)
    t.add_argument("--max-vocab", type=int, default=10000)
    t.add_argument("--lowercase", action="store_true")
    t.add_argument("--cell", choices=["cfn", "lstm", "gru"], default="cfn")
    t.add_argument("--depth", type=int, default=2)
    t.add_argument("--hidden", type=int, default=64)
    t.add_argument("--unroll", type=int, default=35)
    t.add_argument("--batch-size", type=int, default=20)
    t.add_argument("--lr0", type=float, default=1.0)
    t.add_argument("--schedule", choices=["div3", "adaptive"],
                   default="div3")
    t.add_argument("--epochs", type=int, default=5)
    t.add_argument("--p", type=float, default=0.0,
                   help="dropout rate between layers")
    t.add_argument("--q", type=float, default=0.0,
                   help="dropout rate on gate inputs")
    t.add_argument("--resample-masks", action="store_true")
    t.add_argument("--scale", type=float, default=0.07)
    _add_common(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--vocab", required=True)
    e.add_argument("--data", required=True, help="text file to score")
    e.add_argument("--lowercase", action="store_true")
    _add_common(e)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dynamics", help="dynamical-systems experiments")
    d.add_argument("experiment", choices=sorted(_EXPERIMENTS))
    d.add_argument("--map",
                   choices=["paper-lstm", "paper-gru", "henon",
                            "checkpoint"],
                   default="paper-lstm")
    d.add_argument("--checkpoint", default=None)
    d.add_argument("--vocab", default=None)
    d.add_argument("--data", default=None)
    d.add_argument("--lowercase", action="store_true")
    d.add_argument("--steps", type=int, default=2000)
    d.add_argument("--keep-from", type=int, default=1000)
    d.add_argument("--stride", type=int, default=1)
    d.add_argument("--n-init", type=int, default=None,
                   help="initial states for cloud sampling (attractor "
                        "default: 1 = single orbit; henon default: 100)")
    d.add_argument("--burn-in", type=int, default=500)
    d.add_argument("--keep", type=int, default=50)
    d.add_argument("--box", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"))
    d.add_argument("--perturb", type=float, default=1e-7)
    d.add_argument("--trials", type=int, default=100)
    d.add_argument("--unit", type=int, default=0)
    d.add_argument("--spike", type=int, default=5)
    d.add_argument("--amplitude", type=float, default=10.0)
    d.add_argument("--horizon", type=int, default=100)
    d.add_argument("--layer", type=int, default=0)
    d.add_argument("--dim", type=int, default=0,
                   help="lemma2 state dimension (0: random per map)")
    d.add_argument("--input-dim", type=int, default=2)
    d.add_argument("--maps", type=int, default=1)
    d.add_argument("--tol", type=float, default=1e-8)
    d.add_argument("--warm", type=int, default=30)
    d.add_argument("--renorm", type=int, default=10)
    _add_common(d)
    d.set_defaults(func=cmd_dynamics)

    g = sub.add_parser("gradcheck", help="finite-difference gradient check")
    g.add_argument("--cell", choices=["cfn", "lstm", "gru", "all"],
                   default="all")
    g.add_argument("--seeds", type=int, default=20)
    g.add_argument("--p", type=float, default=0.0)
    g.add_argument("--q", type=float, default=0.0)
    g.add_argument("--corrupt", action="store_true",
                   help="negative control: perturb one analytic partial")
    _add_common(g)
    g.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CfnLabError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
