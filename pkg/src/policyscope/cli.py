"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/schema/I-O error, 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import metrics, synth
from .data import DatasetError, load_dataset, save_dataset
from .interpret import build
from .tree import CLASSIFIER_CONFIG, SURROGATE_CONFIG, TreeConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("policyscope")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _add_tree_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("surrogate tree")
    g.add_argument("--tree-depth", type=_positive_int, default=SURROGATE_CONFIG.max_depth)
    g.add_argument("--tree-leaf", type=float, default=SURROGATE_CONFIG.min_leaf_fraction,
                   help="minimum fraction of rows per leaf")
    g.add_argument("--tree-ccp", type=float, default=SURROGATE_CONFIG.ccp_alpha,
                   help="cost-complexity pruning strength")
    g = p.add_argument_group("path classifier")
    g.add_argument("--cls-depth", type=_positive_int, default=CLASSIFIER_CONFIG.max_depth)
    g.add_argument("--cls-leaf", type=float, default=CLASSIFIER_CONFIG.min_leaf_fraction)
    g.add_argument("--cls-ccp", type=float, default=CLASSIFIER_CONFIG.ccp_alpha)
    p.add_argument("--input", "-i", required=True, help="dataset JSON file or CSV directory")
    p.add_argument("--input-format", choices=("json", "csv-dir"), default=None)
    p.add_argument("--neurons", default=None, help="comma-separated neuron ids (default: all)")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help="per-neuron worker threads (default: $POLICYSCOPE_THREADS or 1)")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="policyscope", description="Decision-tree interpretation of neural policy rollouts.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate pendulum rollouts with synthetic neurons")
    p.add_argument("--episodes", type=_positive_int, default=20)
    p.add_argument("--horizon", type=_positive_int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--controller", choices=synth.CONTROLLERS, default="energy_pd")
    p.add_argument("--neurons", default="quadrant,theta,theta_dot",
                   help="comma-separated neuron kinds, e.g. quadrant,theta,theta_dot~0.05")
    p.add_argument("--out", "-o", default="dataset.json")
    p.add_argument("--format", choices=("json", "csv-dir"), default="json")

    p = sub.add_parser("interpret", help="build interpreters and write the program table")
    _add_tree_flags(p)
    p.add_argument("--out-dir", "-o", default="interpretation")
    p.add_argument("--ascii", action="store_true", help="spell comparisons as <=")

    p = sub.add_parser("metrics", help="compute the interpretability metrics")
    _add_tree_flags(p)
    p.add_argument("--bins", type=_positive_int, default=metrics.DEFAULT_BINS)
    p.add_argument("--strategy", choices=("equal_width", "quantile"), default="equal_width")
    p.add_argument("--format", choices=("json", "markdown", "csv"), default="json")
    p.add_argument("--sweep", nargs="+", metavar="KEY=V1,V2",
                   help="grid over the surrogate tree, keys ccp= and leaf=")
    p.add_argument("--out", "-o", default=None, help="output file (default: stdout)")
    return parser


def _configs(args) -> tuple[TreeConfig, TreeConfig]:
    try:
        return (
            TreeConfig("friedman_mse", args.tree_depth, args.tree_leaf, args.tree_ccp),
            TreeConfig("gini", args.cls_depth, args.cls_leaf, args.cls_ccp),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _neurons(args, ds):
    if args.neurons is None:
        return None
    chosen = [t.strip() for t in args.neurons.split(",") if t.strip()]
    for n in chosen:
        try:
            ds.neuron_index(n)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
    return chosen


def _parse_sweep(tokens) -> tuple[list[float], list[float]]:
    grid = {"ccp": [SURROGATE_CONFIG.ccp_alpha], "leaf": [SURROGATE_CONFIG.min_leaf_fraction]}
    for tok in tokens:
        key, sep, vals = tok.partition("=")
        if not sep or key not in grid:
            raise UsageError(f"bad sweep entry {tok!r}; expected ccp=... or leaf=...")
        try:
            grid[key] = _float_list(vals)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(str(exc)) from None
        if not grid[key]:
            raise UsageError(f"empty sweep list for {key}")
    return grid["ccp"], grid["leaf"]


def cmd_synth(args) -> int:
    try:
        specs = [synth.parse_neuron(t) for t in args.neurons.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ds = synth.generate_pendulum(controller=args.controller, episodes=args.episodes,
                                 horizon=args.horizon, seed=args.seed)
    ds = synth.attach_neurons(ds, specs, seed=args.seed)
    save_dataset(ds, args.out, args.format)
    log.info("wrote %d rows x %d neurons to %s", ds.n_rows, ds.d_response, args.out)
    return EXIT_OK


def cmd_interpret(args) -> int:
    cfg_tree, cfg_cls = _configs(args)
    ds = load_dataset(args.input, args.input_format)
    pi = build(ds, _neurons(args, ds), cfg_tree, cfg_cls, workers=args.workers)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pi.save(out / "interpretation.json")
    (out / "programs.md").write_text(pi.program_table(ascii=args.ascii), encoding="utf-8")
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_metrics(args) -> int:
    cfg_tree, cfg_cls = _configs(args)
    ds = load_dataset(args.input, args.input_format)
    neurons = _neurons(args, ds)
    if args.sweep:
        ccps, leaves = _parse_sweep(args.sweep)
        try:
            for a in ccps:
                for f in leaves:
                    cfg_tree.replace(ccp_alpha=a, min_leaf_fraction=f)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        rows = metrics.hyperparameter_sweep(ds, ccps, leaves, neurons, cfg_tree, cfg_cls,
                                            args.bins, args.strategy, workers=args.workers)
        text = {"json": metrics.sweep_json, "csv": metrics.sweep_csv, "markdown": metrics.sweep_markdown}[
            args.format](rows)
    else:
        pi = build(ds, neurons, cfg_tree, cfg_cls, workers=args.workers)
        report = metrics.compute_metrics(ds, pi, args.bins, args.strategy)
        text = {"json": report.to_json, "csv": report.to_csv, "markdown": report.to_markdown}[args.format]()
        if args.format == "json":
            text += "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "interpret": cmd_interpret, "metrics": cmd_metrics}


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"policyscope {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, OSError, json.JSONDecodeError) as exc:
        print(f"policyscope {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"policyscope {args.command}: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
