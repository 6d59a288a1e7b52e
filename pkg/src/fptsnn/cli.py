"""Command-line front end.

Exit codes: 0 success, 1 validation error (bad flags, bad values, failed
check), 2 internal error. Values come from flags, then a JSON ``--config``
file, then built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback

import numpy as np

from . import bench as bench_mod
from .backward import finite_difference_gradient, fpt_backward, relative_error
from .convergence import ALPHA, AXES, ITERATIONS, TIMESTEPS, contraction_report, convergence_sweep
from .data import IdxFormatError, generate_synthetic, load_idx
from .forward import (BERNOULLI, DETERMINISTIC, FixedPointConfig, SurrogateConfig,
                      fpt_forward)
from .lif import LifParams, sequential_lif

log = logging.getLogger("fptsnn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_values(text: str, kind=float) -> list:
    """``"1..6"`` (inclusive integer range) or a comma-separated list."""
    text = str(text).strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [kind(v) for v in text.split(",") if v.strip()]


def _single(values, name):
    if len(values) != 1:
        raise ValueError(f"--{name} takes a single value here, got {values}")
    return values[0]


def _schedule(alpha_text: str, k: int, ratio: float) -> SurrogateConfig:
    alphas = parse_values(alpha_text)
    if len(alphas) == 1:
        alphas = alphas * k
    return SurrogateConfig(tuple(alphas), ratio)


def _dump_json(obj, path):
    text = json.dumps(obj, indent=2, default=_json_default)
    if path:
        with open(path, "w") as f:
            f.write(text + "\n")
    print(text)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)}")


def _add_neuron_args(p, lam=0.25):
    p.add_argument("--lambda", dest="lam", type=float, default=lam, help="decay factor")
    p.add_argument("--vth", type=float, default=1.0, help="threshold potential")


def cmd_simulate(args):
    params = LifParams(args.lam, args.vth)
    cfg = FixedPointConfig(k_max=args.k, surrogate=_schedule(args.alpha, args.k, args.ratio),
                           firing_mode=args.firing, rng_seed=args.seed)
    c = np.random.default_rng(args.seed).standard_normal(args.t)
    ref = sequential_lif(c, params)
    trace = fpt_forward(c, params, cfg)
    if args.out:
        with open(args.out, "w") as f:
            f.write("t,c,u_seq,s_seq,u_fpt,s_fpt\n")
            for i in range(args.t):
                f.write(f"{i},{c[i]!r},{ref.u[i]!r},{int(ref.s[i])},"
                        f"{trace.u_star[i]!r},{int(trace.s_star[i])}\n")
    _dump_json({"t": args.t, "k": args.k, "firing": args.firing,
                "mean_abs_u_err": float(np.mean(np.abs(trace.u_star - ref.u))),
                "spike_err_rate": float(np.mean(trace.s_star != ref.s)),
                "residuals": trace.residuals}, None)
    return 0


def cmd_converge(args):
    params = LifParams(args.lam, args.vth)
    ks = parse_values(args.k, int)
    alphas = parse_values(args.alpha)
    ts = parse_values(args.t, int)
    if args.axis == ITERATIONS:
        values, t, k, alpha = ks, _single(ts, "t"), None, _single(alphas, "alpha")
    elif args.axis == ALPHA:
        values, t, k, alpha = alphas, _single(ts, "t"), _single(ks, "k"), None
    else:
        values, t, k, alpha = ts, None, _single(ks, "k"), _single(alphas, "alpha")
    curves = convergence_sweep(args.seed, params, t or 0, args.axis, values, args.trials,
                               k=k or 3, alpha=alpha or 12.0)
    curves.write_csv(args.out if args.out else sys.stdout)
    return 0


def cmd_gradcheck(args):
    params = LifParams(args.lam, args.vth)
    cfg = FixedPointConfig(k_max=args.k, surrogate=_schedule(args.alpha, args.k, args.ratio))
    rng = np.random.default_rng(args.seed)
    c = rng.standard_normal(args.t) + 0.5
    upstream = rng.standard_normal(args.t)
    grad = fpt_backward(fpt_forward(c, params, cfg), upstream, params, cfg).grad_c
    fd = finite_difference_gradient(c, params, cfg, upstream, args.h)
    err = relative_error(grad, fd)
    ok = err < args.tol
    _dump_json({"t": args.t, "k": args.k, "seed": args.seed, "max_rel_error": err,
                "tolerance": args.tol, "passed": ok}, args.out)
    return 0 if ok else 1


def cmd_bench(args):
    t_values = parse_values(args.t, int)
    params = LifParams(args.lam, args.vth)
    cfg = FixedPointConfig(k_max=args.k, surrogate=_schedule(args.alpha, args.k, 1 / 3))
    records = bench_mod.run_benchmark(t_values, args.batch, args.neurons, args.reps,
                                      args.threads, params, cfg, args.seed)
    bench_mod.write_bench_csv(records, args.out if args.out else sys.stdout)
    log.info("environment: %s", json.dumps(bench_mod.environment_tag(args.threads)))
    return 0


def _dataset(args, t):
    if args.dataset == "idx":
        if not (args.images and args.labels):
            raise ValueError("--dataset idx needs --images and --labels")
        return load_idx(args.images, args.labels, t)
    return generate_synthetic(args.classes, args.n_per_class, t, args.features,
                              args.data_seed, args.noise)


def _spec(args, n_features, n_classes):
    from .network import NetworkSpec
    hidden = parse_values(args.hidden, int) if str(args.hidden).strip() else []
    cfg = FixedPointConfig(k_max=args.k, surrogate=_schedule(args.alpha, args.k, args.ratio),
                           firing_mode=args.firing, rng_seed=args.seed)
    return NetworkSpec(layer_sizes=(n_features, *hidden, n_classes), neuron_engine=args.engine,
                       lif=LifParams(args.lam, args.vth), fpt=cfg, readout=args.readout)


def cmd_train(args):
    from .checkpoint import save_network
    from .network import TrainHyper, train
    data = _dataset(args, args.t)
    spec = _spec(args, data.features, max(data.classes, args.classes))
    model, report = train(spec, data, TrainHyper(lr=args.lr, epochs=args.epochs,
                                                 batch=args.batch, seed=args.seed))
    if args.checkpoint:
        save_network(args.checkpoint, model, seed=args.seed)
    _dump_json(report.to_dict(), args.out)
    return 0


def cmd_similarity(args):
    from .checkpoint import load_network
    from .network import SEQUENTIAL, TrainHyper, output_cosine_similarity, spike_trains, train
    if args.checkpoint:
        model = load_network(args.checkpoint)
    else:
        train_data = _dataset(args, args.train_t)
        spec = _spec(args, train_data.features, max(train_data.classes, args.classes))
        model, _ = train(spec, train_data, TrainHyper(lr=args.lr, epochs=args.epochs,
                                                      batch=args.batch, seed=args.seed))
    result = {"engine_a": args.engine_a, "engine_b": args.engine_b, "timesteps": {}}
    for t in parse_values(args.eval_t, int):
        data = _dataset(args, t)
        sim = output_cosine_similarity(model, args.engine_a, args.engine_b, data)
        sa = spike_trains(model, data, args.engine_a)
        sb = spike_trains(model, data, args.engine_b)
        mismatch = float(np.mean(np.concatenate([(a != b).ravel() for a, b in zip(sa, sb)])))
        result["timesteps"][str(t)] = {"cosine_similarity": sim, "spike_mismatch": mismatch}
    _dump_json(result, args.out)
    return 0


def cmd_analyze(args):
    rep = contraction_report(LifParams(args.lam, args.vth), args.alpha, args.t, args.lipschitz)
    _dump_json(rep.to_dict(), args.out)
    return 0


def _add_training_args(p):
    from .network import ENGINES, FPT, READOUTS, SPIKE_COUNT
    _add_neuron_args(p, lam=0.5)
    p.add_argument("--engine", choices=ENGINES, default=FPT)
    p.add_argument("--dataset", choices=("synthetic", "idx"), default="synthetic")
    p.add_argument("--images")
    p.add_argument("--labels")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--features", type=int, default=32)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--hidden", default="64", help="hidden layer sizes, comma separated")
    p.add_argument("--readout", choices=READOUTS, default=SPIKE_COUNT)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--alpha", default="3,12,12")
    p.add_argument("--ratio", type=float, default=1 / 3)
    p.add_argument("--firing", choices=(DETERMINISTIC, BERNOULLI), default=DETERMINISTIC)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fptsnn", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file of default values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn)
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--seed", type=int, default=0)
        return p

    p = add("simulate", cmd_simulate, "run one neuron sequentially and with the fixed-point solver")
    _add_neuron_args(p)
    p.add_argument("--t", type=int, default=64)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--alpha", default="3,12,12")
    p.add_argument("--ratio", type=float, default=1 / 3)
    p.add_argument("--firing", choices=(DETERMINISTIC, BERNOULLI), default=DETERMINISTIC)

    p = add("converge", cmd_converge, "error curves against the sequential oracle")
    _add_neuron_args(p)
    p.add_argument("--axis", choices=AXES, default=ITERATIONS)
    p.add_argument("--k", default="1..6")
    p.add_argument("--alpha", default="12")
    p.add_argument("--t", default="32")
    p.add_argument("--trials", type=int, default=5)

    p = add("gradcheck", cmd_gradcheck, "compare the backward pass with finite differences")
    _add_neuron_args(p)
    p.add_argument("--t", type=int, default=8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--alpha", default="12")
    p.add_argument("--ratio", type=float, default=1.0,
                   help="alpha_b / alpha_f; 1 makes the gradient exact")
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-4)

    p = add("bench", cmd_bench, "wall-clock timings across T")
    _add_neuron_args(p)
    p.add_argument("--t", default="8,64,512")
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--neurons", type=int, default=4)
    p.add_argument("--reps", type=int, default=7)
    p.add_argument("--threads", type=int, default=bench_mod.default_threads())
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--alpha", default="3,12,12")

    p = add("train", cmd_train, "train a dense spiking network")
    _add_training_args(p)
    p.add_argument("--t", type=int, default=16)
    p.add_argument("--checkpoint", help="write trained parameters here")

    p = add("similarity", cmd_similarity, "readout cosine similarity between two engines")
    _add_training_args(p)
    p.set_defaults(engine="sequential")
    p.add_argument("--checkpoint", help="trained model; otherwise one is trained first")
    p.add_argument("--train-t", type=int, default=8)
    p.add_argument("--eval-t", default="8,64")
    p.add_argument("--engine-a", default="sequential")
    p.add_argument("--engine-b", default="fpt")

    p = add("analyze", cmd_analyze, "contraction condition for the fixed-point map")
    _add_neuron_args(p)
    p.add_argument("--alpha", type=float, default=12.0)
    p.add_argument("--t", type=int, default=64)
    p.add_argument("--lipschitz", type=float, help="override the surrogate Lipschitz constant")
    return parser


def _load_config(path) -> dict:
    try:
        with open(path) as f:
            cfg = json.load(f)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    return cfg


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    cfg = _load_config(args.config)
    # flat keys apply everywhere, a section named after the subcommand overrides them
    defaults = {k.replace("-", "_"): v for k, v in cfg.items() if not isinstance(v, dict)}
    defaults.update({k.replace("-", "_"): v for k, v in cfg.get(args.command, {}).items()})
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    unknown = sorted(set(defaults) - known)
    if unknown:
        raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValueError, IdxFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
