"""``orthoact`` command-line interface.

Exit codes: 0 success, 1 numeric failure, 2 usage error. Every subcommand
writes ``<subcommand>.json`` into ``--out-dir`` and prints a table to stdout.
A ``--config`` JSON file may supply any flag by its long name (dashes or
underscores); flags given on the command line win.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import bench as bench_mod
from .activations import (
    ClassicalActivation,
    FourierActivation,
    HermiteActivation,
    TropicalActivation,
    TropicalRationalActivation,
)
from .data import NAMES as DATASETS
from .data import generate, save_csv
from .errors import OrthoactError, UnsupportedFamily
from .fitting import FitGrid, fit, fit_tropical_rational
from .gains import InputDist, analytic_gains, monte_carlo_gains, natural_distribution
from .nn import (
    MlpModel,
    TrainConfig,
    decision_grid,
    finetune,
    make_activation,
    polynomial_network,
    save_checkpoint,
    train,
    verify_polynomial_mapping,
)

LEARNABLE = ("hermite", "fourier", "tropical", "tropical_rational")
CLASSICAL = ("relu", "gelu", "silu")
DISPLAY = {"hermite": "Hermite", "fourier": "Fourier", "tropical": "Tropical",
           "tropical_rational": "TropicalRational", "relu": "ReLU", "gelu": "GELU", "silu": "SiLU"}

NUMERIC_ERRORS = (OrthoactError, ArithmeticError, FloatingPointError, np.linalg.LinAlgError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _int_at_least(lo):
    def parse(text):
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
        if value < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {value}")
        return value
    return parse


def _finite(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not math.isfinite(value):
        raise argparse.ArgumentTypeError(f"must be finite, got {text!r}")
    return value


def _int_list(text):
    try:
        return [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return [float(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _common(p):
    p.add_argument("--config", help="JSON file with flag values; command-line flags win")
    p.add_argument("--out-dir", default=".", help="directory for output files (default: .)")
    p.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="orthoact", description="Orthogonal-basis and tropical learnable activations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("eval", help="sample an activation and its derivative on a grid")
    _common(p)
    p.add_argument("--family", required=True, choices=LEARNABLE + CLASSICAL)
    p.add_argument("--degree", type=_int_at_least(0))
    p.add_argument("--init", default="theorem", help="theorem, unit or fit:<target>")
    p.add_argument("--coeffs", type=_float_list, help="explicit coefficients (hermite: a_0..a_d; "
                   "fourier: a0,a_1..a_d; tropical: a_0..a_d)")
    p.add_argument("--from", dest="lo", type=_finite, default=-4.0)
    p.add_argument("--to", dest="hi", type=_finite, default=4.0)
    p.add_argument("--points", type=_int_at_least(2), default=401)
    p.add_argument("--out", help="output text file (default: <out-dir>/eval_<family>.txt)")

    p = sub.add_parser("gain-check", help="Monte-Carlo vs closed-form gains")
    _common(p)
    p.add_argument("--family", required=True, choices=LEARNABLE[:3] + CLASSICAL)
    p.add_argument("--degree", type=_int_at_least(0))
    p.add_argument("--init", default="theorem", choices=("theorem", "unit"))
    p.add_argument("--dist", choices=[d.value for d in InputDist],
                   help="input law (default: the family's natural law, else normal)")
    p.add_argument("--samples", type=_int_at_least(10_000), default=1_000_000)
    p.add_argument("--workers", type=_int_at_least(1))

    p = sub.add_parser("fit", help="fit a learnable activation to a classical one")
    _common(p)
    p.add_argument("--target", default="gelu", choices=CLASSICAL)
    p.add_argument("--family", default="hermite", choices=LEARNABLE)
    p.add_argument("--degree", type=_int_at_least(0), default=3)
    p.add_argument("--den-degree", type=_int_at_least(0),
                   help="denominator degree for tropical_rational (default: --degree)")
    p.add_argument("--mode", default="hermite", choices=("lagrange", "hermite", "hermiteinterp"))
    p.add_argument("--grid", type=_float_list, default=[-4.0, 4.0, 401], help="lo,hi,points")
    p.add_argument("--lam", type=_finite, default=1.0, help="derivative residual weight")
    p.add_argument("--refine", action="store_true", help="refine Fourier frequencies and phases")
    p.add_argument("--out", help="output text file (default: <out-dir>/fit_<target>_<family>.txt)")

    p = sub.add_parser("train", help="train an MLP on a toy dataset")
    _common(p)
    p.add_argument("--dataset", required=True, choices=DATASETS)
    p.add_argument("--family", default="hermite", choices=LEARNABLE[:3] + CLASSICAL)
    p.add_argument("--degree", type=_int_at_least(0))
    p.add_argument("--init", default="theorem", help="theorem, unit or fit:<target>")
    p.add_argument("--epochs", type=_int_at_least(0), default=500)
    p.add_argument("--freeze", default="none", choices=("none", "weights"),
                   help="weights: frozen-backbone fine-tuning protocol")
    p.add_argument("--width", type=_int_at_least(1))
    p.add_argument("--layers", type=_int_at_least(1), default=1, help="hidden layers")
    p.add_argument("--batch-size", type=_int_at_least(1), default=64)
    p.add_argument("--lr", type=_finite, default=1e-2)
    p.add_argument("--weight-decay", type=_finite, default=1e-4)
    p.add_argument("--n", type=_int_at_least(4), default=1000)
    p.add_argument("--noise", type=_finite, default=0.2)
    p.add_argument("--pretrain-epochs", type=_int_at_least(0), default=100)
    p.add_argument("--resolution", type=_int_at_least(2), default=101)

    p = sub.add_parser("verify-polymap", help="check the polynomial degree of a Hermite network")
    _common(p)
    p.add_argument("--layers", type=_int_at_least(1), default=2)
    p.add_argument("--degree", type=_int_at_least(1), default=2)
    p.add_argument("--width", type=_int_at_least(1), default=4)
    p.add_argument("--tol", type=_finite, default=1e-6)

    p = sub.add_parser("bench", help="time activation evaluation")
    _common(p)
    p.add_argument("--family", default="hermite", help="comma-separated families")
    p.add_argument("--degrees", type=_int_list, default=[3, 6, 12, 24])
    p.add_argument("--path", default="recursive", choices=("recursive", "explicit", "both"))
    p.add_argument("--batch", type=_int_at_least(1), default=10_000)
    p.add_argument("--repetitions", type=_int_at_least(bench_mod.MIN_REPETITIONS), default=20)
    p.add_argument("--dtype", default="float64", choices=("float64", "float32"))
    p.add_argument("--workers", type=_int_at_least(1), default=1)
    p.add_argument("--out", help="CSV file (default: <out-dir>/bench.csv)")
    return parser


def _config_argv(parser, argv):
    """Prepend flags from ``--config`` so that explicit flags override them."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    try:
        with open(known.config) as fh:
            doc = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {known.config!r}: {exc}")
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    command = argv[0]
    extra = []
    for key, value in doc.items():
        flag = "--" + key.replace("_", "-")
        if key in ("command", "config"):
            continue
        if value is True:
            extra.append(flag)
        elif value is False or value is None:
            continue
        elif isinstance(value, list):
            extra.append(f"{flag}={','.join(str(v) for v in value)}")
        else:
            extra.append(f"{flag}={value}")
    return [command] + extra + list(argv[1:])


# --- helpers -----------------------------------------------------------------

def _need_degree(args):
    if args.family in LEARNABLE and args.degree is None:
        raise UsageError(f"--degree is required for {args.family}")
    if args.family in ("fourier", "tropical", "tropical_rational") and args.degree is not None \
            and args.degree < 1:
        raise UsageError(f"--degree must be >= 1 for {args.family}")


def _from_coeffs(family, degree, coeffs):
    try:
        if family == "hermite":
            return HermiteActivation(degree, coeffs)
        if family == "fourier":
            return FourierActivation(degree, coeffs[0], coeffs[1:])
        if family == "tropical":
            return TropicalActivation(degree, coeffs)
        if family == "tropical_rational":
            return TropicalRationalActivation(TropicalActivation(degree, coeffs[:degree + 1]),
                                              TropicalActivation(degree, coeffs[degree + 1:]))
    except (ValueError, IndexError) as exc:
        raise UsageError(f"bad --coeffs for {family} degree {degree}: {exc}")
    raise UsageError(f"--coeffs not supported for {family}")


def _activation(args):
    _need_degree(args)
    if getattr(args, "coeffs", None) is not None:
        return _from_coeffs(args.family, args.degree, args.coeffs)
    init = args.init
    if not (init in ("theorem", "unit") or init.startswith("fit:")):
        raise UsageError(f"--init must be theorem, unit or fit:<target>, got {init!r}")
    if init.startswith("fit:") and init[4:] not in CLASSICAL:
        raise UsageError(f"unknown fit target {init[4:]!r}")
    if args.family == "tropical_rational":
        if init.startswith("fit:"):
            target = ClassicalActivation(init[4:])
            return fit_tropical_rational(target, args.degree, args.degree, FitGrid()).activation
        return TropicalRationalActivation(TropicalActivation(args.degree, np.ones(args.degree + 1)),
                                          TropicalActivation(args.degree, np.zeros(args.degree + 1)))
    return make_activation(args.family, args.degree, init)


def _out_path(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _write_summary(args, payload):
    payload = {"command": args.command, **payload}
    with open(_out_path(args, f"{args.command}.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _table(header, rows):
    cells = [[str(h) for h in header]] + [[_fmt(c) for c in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _fmt(value):
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def _write_columns(path, header, columns):
    data = np.column_stack(columns)
    with open(path, "w") as fh:
        fh.write(" ".join(header) + "\n")
        for row in data:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


# --- subcommands -------------------------------------------------------------

def cmd_eval(args):
    if not args.hi > args.lo:
        raise UsageError("--to must be greater than --from")
    act = _activation(args)
    xs = np.linspace(args.lo, args.hi, args.points)
    values, derivs = np.asarray(act.eval(xs)), np.asarray(act.deriv(xs))
    name = DISPLAY[args.family]
    path = args.out or _out_path(args, f"eval_{args.family}.txt")
    _write_columns(path, ["x", name, f"{name}_deriv"], [xs, values, derivs])
    finite = bool(np.all(np.isfinite(values)) and np.all(np.isfinite(derivs)))
    _write_summary(args, {"family": args.family, "degree": args.degree, "init": args.init,
                          "points": args.points, "output": path, "activation": act.to_dict(),
                          "finite": finite, "min": float(np.min(values)), "max": float(np.max(values))})
    print(_table(["family", "degree", "points", "min F", "max F", "output"],
                 [[args.family, args.degree, args.points, float(np.min(values)),
                   float(np.max(values)), path]]))
    return 0 if finite else 1


def cmd_gain_check(args):
    if args.family in LEARNABLE:
        _need_degree(args)
    act = _activation(args)
    dist = args.dist
    if dist is None:
        try:
            dist = natural_distribution(act).value
        except OrthoactError:
            dist = InputDist.NORMAL.value
    report = monte_carlo_gains(act, dist, args.samples, args.seed, args.workers)
    try:
        a_f, a_b = analytic_gains(act, dist)
    except OrthoactError:
        a_f = a_b = None
    rel = None
    if report.rel_err_forward is not None:
        rel = max(report.rel_err_forward, report.rel_err_backward)
    _write_summary(args, {"report": report.to_dict()})
    print(_table(["family", "degree", "alpha_analytic", "alpha'_analytic", "alpha_mc",
                  "alpha'_mc", "rel_err"],
                 [[args.family, args.degree, a_f, a_b, report.mc_forward, report.mc_backward, rel]]))
    if report.note:
        print(f"note: {report.note}")
    ok = math.isfinite(report.mc_forward) and math.isfinite(report.mc_backward)
    return 0 if ok else 1


def cmd_fit(args):
    if len(args.grid) != 3 or not args.grid[1] > args.grid[0] or args.grid[2] != int(args.grid[2]):
        raise UsageError("--grid must be lo,hi,points with hi > lo and integer points")
    if args.grid[2] < 2:
        raise UsageError("--grid needs at least 2 points")
    grid = FitGrid(args.grid[0], args.grid[1], int(args.grid[2]))
    target = ClassicalActivation(args.target)
    if args.family in ("tropical", "tropical_rational"):
        if args.degree < 1:
            raise UsageError(f"--degree must be >= 1 for {args.family}")
        den = 0 if args.family == "tropical" else (
            args.degree if args.den_degree is None else args.den_degree)
        result = fit_tropical_rational(target, args.degree, den, grid, lam=args.lam)
    else:
        result = fit(target, args.family, args.degree, grid, mode=args.mode, lam=args.lam,
                     refine=args.refine)
    act = result.activation
    xs = grid.xs
    t_name, f_name = DISPLAY[args.target], DISPLAY[args.family]
    path = args.out or _out_path(args, f"fit_{args.target}_{args.family}.txt")
    _write_columns(path, ["x", t_name, f"{t_name}_deriv", f_name, f"{f_name}_deriv"],
                   [xs, target.eval(xs), target.deriv(xs), act.eval(xs), act.deriv(xs)])
    _write_summary(args, {"target": args.target, "family": args.family, "degree": act.degree,
                          "mode": result.mode, "value_rmse": result.value_rmse,
                          "deriv_rmse": result.deriv_rmse, "iterations": result.iterations,
                          "activation": act.to_dict(), "output": path})
    print(_table(["target", "family", "degree", "mode", "value_rmse", "deriv_rmse"],
                 [[args.target, args.family, act.degree, result.mode,
                   f"{result.value_rmse:.3e}", f"{result.deriv_rmse:.3e}"]]))
    return 0 if math.isfinite(result.value_rmse) else 1


def cmd_train(args):
    if args.family in LEARNABLE:
        _need_degree(args)
    data = generate(args.dataset, args.n, args.noise, args.seed)
    save_csv(data, _out_path(args, f"data_{args.dataset}.csv"))
    if args.freeze == "weights":
        if args.family not in ("hermite", "fourier", "tropical"):
            raise UsageError("--freeze weights needs a learnable --family")
        width = args.width or 8
        result = finetune(data, args.family, args.degree, width=width,
                          pretrain_epochs=args.pretrain_epochs, epochs=args.epochs,
                          seed=args.seed, learning_rate=args.lr)
        for tag, trace in (("baseline", result.baseline_trace), ("learnable", result.learnable_trace)):
            with open(_out_path(args, f"trace_{args.dataset}_{tag}.csv"), "w") as fh:
                fh.write(trace.to_csv())
        _write_summary(args, {"dataset": args.dataset, "family": args.family, "degree": args.degree,
                              "source": result.source, "width": width, "epochs": args.epochs,
                              "seed": args.seed, "baseline_accuracy": result.baseline_accuracy,
                              "learnable_accuracy": result.learnable_accuracy,
                              "improved": result.improved})
        print(_table(["dataset", "source", "baseline_acc", "learnable_acc", "improved"],
                     [[args.dataset, result.source, result.baseline_accuracy,
                       result.learnable_accuracy, result.improved]]))
        return 0

    act = _activation(args)
    width = args.width or 16
    model = MlpModel.build([2] + [width] * args.layers + [2], act, seed=args.seed)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                         weight_decay=args.weight_decay, seed=args.seed)
    trace = train(model, data, config)
    prefix = f"{args.dataset}_{args.family}"
    with open(_out_path(args, f"trace_{prefix}.csv"), "w") as fh:
        fh.write(trace.to_csv())
    with open(_out_path(args, f"boundary_{prefix}.csv"), "w") as fh:
        fh.write(decision_grid(model, data, args.resolution))
    save_checkpoint(model, _out_path(args, f"model_{prefix}.json"))
    _write_summary(args, {"dataset": args.dataset, "family": args.family, "degree": args.degree,
                          "init": args.init, "width": width, "layers": args.layers,
                          "epochs": args.epochs, "seed": args.seed,
                          "final_train_loss": trace.train_loss[-1],
                          "test_accuracy": trace.final_accuracy})
    print(_table(["dataset", "family", "degree", "epochs", "train_loss", "test_acc"],
                 [[args.dataset, args.family, args.degree, args.epochs, trace.train_loss[-1],
                   trace.final_accuracy]]))
    print(f"accuracy: {trace.final_accuracy:.4f}")
    return 0


def cmd_verify_polymap(args):
    model = polynomial_network(args.layers, args.degree, width=args.width, seed=args.seed)
    direction = np.random.default_rng(args.seed).standard_normal(2)
    bound = args.degree ** args.layers
    report = verify_polynomial_mapping(model, direction, bound, tol=args.tol, seed=args.seed)
    _write_summary(args, {"layers": args.layers, "degree": args.degree, "width": args.width,
                          "degree_bound": bound, "effective_degree": report.effective_degree,
                          "max_rel_error": report.max_rel_error, "passed": report.passed})
    print(_table(["layers", "degree", "bound", "effective_degree", "max_rel_error"],
                 [[args.layers, args.degree, bound, report.effective_degree,
                   f"{report.max_rel_error:.3e}"]]))
    print(report.summary())
    return 0 if report.passed else 1


def cmd_bench(args):
    families = [f.strip().lower() for f in args.family.split(",") if f.strip()]
    for f in families:
        if f not in LEARNABLE + CLASSICAL:
            raise UsageError(f"unknown family {f!r}")
    results = []
    for family in families:
        if family in CLASSICAL:
            results.append(bench_mod.run_bench(family, None, args.batch, args.repetitions,
                                               seed=args.seed, dtype=args.dtype,
                                               workers=args.workers))
            continue
        paths = ["recursive", "explicit"] if args.path == "both" else [args.path]
        for degree in args.degrees:
            if degree < (0 if family == "hermite" else 1):
                raise UsageError(f"degree {degree} invalid for {family}")
            for path in paths if family == "hermite" else [None]:
                results.append(bench_mod.run_bench(family, degree, args.batch, args.repetitions,
                                                   path=path, seed=args.seed, dtype=args.dtype,
                                                   workers=args.workers))
    text = bench_mod.to_csv(results)
    with open(args.out or _out_path(args, "bench.csv"), "w") as fh:
        fh.write(text)
    _write_summary(args, {"results": [r.to_dict() for r in results]})
    sys.stdout.write(text)
    return 0


COMMANDS = {"eval": cmd_eval, "gain-check": cmd_gain_check, "fit": cmd_fit, "train": cmd_train,
            "verify-polymap": cmd_verify_polymap, "bench": cmd_bench}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if argv and argv[0] in COMMANDS:
            argv = _config_argv(parser, argv)
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, UnsupportedFamily) as exc:
        print(f"orthoact: error: {exc}", file=sys.stderr)
        return 2
    except NUMERIC_ERRORS as exc:
        print(f"orthoact: numeric failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"orthoact: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
