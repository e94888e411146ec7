"""Command-line entry point.

Every run writes into ``<out>/<name>-<seed>/`` (``name`` is the subcommand,
``synthetic-<exp>`` for the synthetic suite): a ``manifest.json`` holding the
fully resolved configuration plus CSV outputs and checkpoints. ``replay``
re-executes a run from its manifest alone.

Exit codes: 0 success, 1 runtime failure (``error [category]: message`` on
stderr), 2 usage error.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import VALID_KEYS, build_config, flatten_config, read_config_file
from .errors import DivergedError, InvalidArgumentError, KRGNNError, ParseError
from .graph import generate_sbm, load_graph, save_graph, standardize_features
from .kernel import KernelConfig
from .nn import load_checkpoint, save_checkpoint
from .synthetic import SUITE_KERNEL, exp_100d, exp_1d, exp_mi
from .training import (build_decoder, build_encoder, downstream_eval, ensure_masks,
                       girl_train, kr_diagnostics, supervised_train)

METRIC_COLUMNS = ("epoch", "split", "metric", "value")
MANIFEST_NAME = "manifest.json"


def build_id():
    """Content hash of the package sources (stable for a given checkout)."""
    h = hashlib.sha1()
    root = Path(__file__).resolve().parent
    for path in sorted(root.glob("*.py")):
        data = path.read_bytes()
        h.update(f"blob {len(data)}\0{path.name}\0".encode())
        h.update(data)
    return h.hexdigest()[:12]


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    options: dict
    seed: int
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)
    version: str = __version__
    build_id: str = ""

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def write(self, run_dir):
        path = Path(run_dir) / MANIFEST_NAME
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path


def read_manifest(path):
    try:
        return RunManifest.from_json(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, TypeError) as exc:
        raise ParseError(f"not a run manifest: {exc}", str(path)) from None


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_metrics(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for epoch, split, metric, value in rows:
            writer.writerow([epoch, split, metric, repr(float(value))])


# --- subcommand bodies: (config, options, run_dir) -> output file names -----

def _run_synthetic(config, options, run_dir):
    kernel = KernelConfig(sigma=config["sigma"], p=config["p"], eps_rank=config["eps_rank"])
    common = dict(n=config["n"], repeats=config["repeats"], seed=config["seed"], kernel=kernel)
    exp = options["experiment"]
    if exp == "1d":
        result = exp_1d(**common)
    elif exp == "100d":
        result = exp_100d(alphas=tuple(config["alphas"]), **common)
    else:
        result = exp_mi(alphas=tuple(config["alphas"]), **common)
    result.write_csv(Path(run_dir) / "sweep.csv")
    with open(Path(run_dir) / "bandwidths.csv", "w", encoding="utf-8") as fh:
        fh.write("parameter,sigma\n")
        fh.writelines(f"{p},{s!r}\n" for p, s in zip(result.parameters, result.bandwidths))
    return ["sweep.csv", "bandwidths.csv"]


def _run_gen_sbm(config, options, run_dir):
    if config["n"] % config["blocks"]:
        raise InvalidArgumentError(f"--n {config['n']} is not divisible by --blocks {config['blocks']}")
    g = generate_sbm(config["blocks"], config["n"] // config["blocks"], config["p_in"],
                     config["p_out"], config["feat_dim"], config["feat_shift"], config["seed"],
                     topology=config["topology"])
    run_dir = Path(run_dir)
    save_graph(g, run_dir / "edges.txt", run_dir / "features.csv", run_dir / "labels.txt")
    return ["edges.txt", "features.csv", "labels.txt"]


def _load_dataset(options, cfg, need_labels):
    if not options.get("edges") or not options.get("features"):
        raise InvalidArgumentError("--edges and --features are required")
    if need_labels and not options.get("labels"):
        raise InvalidArgumentError("--labels is required for this subcommand")
    g = ensure_masks(load_graph(options["edges"], options["features"], options.get("labels")), cfg)
    if options.get("standardize", True):
        g = standardize_features(g)
    return g


def _eval_rows(epoch, accuracies, metric="accuracy"):
    return [(epoch, split, metric, acc) for split, acc in accuracies.items()]


def _run_girl(config, options, run_dir):
    cfg = build_config(config)
    g = _load_dataset(options, cfg, need_labels=False)
    encoder = build_encoder(g.features.shape[1], cfg)
    rows = []
    if g.labels is not None and options.get("baseline"):
        rows += _eval_rows(0, downstream_eval(g, encoder, cfg), "baseline_accuracy")
    encoder, reports = girl_train(g, encoder, cfg)
    for rep in reports:
        rows.append((rep.epoch, "train", "loss", rep.total))
        for layer, (s, z) in enumerate(zip(rep.self_terms, rep.neighbor_terms), start=1):
            rows.append((rep.epoch, "train", f"layer{layer}_self", s))
            rows.append((rep.epoch, "train", f"layer{layer}_neighbor", z))
    if g.labels is not None:
        rows += _eval_rows(cfg.epochs, downstream_eval(g, encoder, cfg))
    write_metrics(Path(run_dir) / "metrics.csv", rows)
    meta = {"subcommand": "girl", "config": config,
            "standardize": bool(options.get("standardize", True))}
    save_checkpoint(Path(run_dir) / "encoder.json", encoder, meta=meta)
    return ["metrics.csv", "encoder.json"]


def _run_supervised(config, options, run_dir):
    cfg = build_config(config)
    g = _load_dataset(options, cfg, need_labels=True)
    encoder = build_encoder(g.features.shape[1], cfg)
    decoder = build_decoder(cfg.hidden, g.num_classes, cfg)
    (encoder, decoder), trace = supervised_train(g, encoder, decoder, cfg)
    losses = [v for _, _, m, v in trace if m == "loss"]
    if not np.all(np.isfinite(losses)):
        raise DivergedError("training loss became non-finite")
    diag = kr_diagnostics(g, encoder, cfg)
    trace += [(cfg.epochs, "train", f"kr_exact_layer{i}", v) for i, v in enumerate(diag, start=1)]
    write_metrics(Path(run_dir) / "metrics.csv", trace)
    meta = {"subcommand": "supervised", "config": config,
            "standardize": bool(options.get("standardize", True))}
    save_checkpoint(Path(run_dir) / "model.json", encoder, decoder, meta)
    return ["metrics.csv", "model.json"]


def _run_eval(config, options, run_dir):
    cfg = build_config(config)
    g = _load_dataset(options, cfg, need_labels=True)
    encoder, _, _ = load_checkpoint(options["checkpoint"])
    if encoder.layers[0].in_dim != g.features.shape[1]:
        raise InvalidArgumentError(
            f"checkpoint expects {encoder.layers[0].in_dim} features, dataset has {g.features.shape[1]}")
    write_metrics(Path(run_dir) / "metrics.csv", _eval_rows(0, downstream_eval(g, encoder, cfg)))
    return ["metrics.csv"]


RUNNERS = {
    "synthetic": _run_synthetic,
    "gen-sbm": _run_gen_sbm,
    "girl": _run_girl,
    "supervised": _run_supervised,
    "eval": _run_eval,
}


def run_name(subcommand, options):
    return f"synthetic-{options['experiment']}" if subcommand == "synthetic" else subcommand


def execute(subcommand, config, options, out, argv=None):
    """Run one subcommand and write its manifest; returns ``(manifest, run_dir)``."""
    seed = int(config["seed"])
    run_dir = Path(out) / f"{run_name(subcommand, options)}-{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(subcommand, config, options, seed, started=_now(), build_id=build_id())
    manifest.outputs = RUNNERS[subcommand](config, options, run_dir)
    manifest.finished = _now()
    manifest.outputs = [*manifest.outputs, MANIFEST_NAME]
    if argv is not None:
        manifest.options = {**options, "argv": list(argv)}
    manifest.write(run_dir)
    return manifest, run_dir


# --- argument parsing -------------------------------------------------------

def _parse_sigma(text):
    if text in ("median", "median-dim"):
        return text
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected median, median-dim or a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"bandwidth must be positive, got {text}")
    return value


def _parse_floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_assignment(text):
    key, sep, value = text.partition("=")
    if not sep or key.strip() not in VALID_KEYS:
        raise argparse.ArgumentTypeError(
            f"expected KEY=VALUE with KEY in: {', '.join(VALID_KEYS)}; got {text!r}")
    return key.strip(), value


def _common(parser):
    parser.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    parser.add_argument("--out", default="runs", help="output root directory")


def _dataset(parser, labels_required=False):
    parser.add_argument("--edges", help="edge list file")
    parser.add_argument("--features", help="feature CSV file")
    parser.add_argument("--labels", required=labels_required, help="label file")
    parser.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True,
                        help="standardize features with train-split statistics (default on)")


def _training(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--layer", choices=("gcn", "sage"))
    parser.add_argument("--depth", type=int)
    parser.add_argument("--hidden", type=int)
    parser.add_argument("--lambda", dest="lambda_reg", type=float, help="supervised KR weight")
    parser.add_argument("--sigma", type=_parse_sigma, help="median, median-dim or a bandwidth")
    parser.add_argument("--p", type=float, help="norm order")
    parser.add_argument("--ridge", dest="lambda_ridge", type=float, help="ridge coefficient")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--detach-targets", action="store_true", default=None,
                        help="stop gradients into GIRL targets")
    parser.add_argument("--set", dest="assignments", action="append", type=_parse_assignment,
                        default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser():
    parser = argparse.ArgumentParser(prog="krgnn", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("synthetic", help="estimator checks against closed-form values")
    p.add_argument("experiment", choices=("1d", "100d", "mi"))
    _common(p)
    p.add_argument("--n", type=int, default=1000, help="samples per repeat")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--sigma", type=_parse_sigma, default=SUITE_KERNEL.sigma)
    p.add_argument("--p", type=float, default=SUITE_KERNEL.p)
    p.add_argument("--eps-rank", type=float, default=SUITE_KERNEL.eps_rank)
    p.add_argument("--alphas", type=_parse_floats, help="comma-separated grid")

    p = sub.add_parser("gen-sbm", help="write a stochastic block model dataset")
    _common(p)
    p.add_argument("--n", type=int, default=240, help="total node count")
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.1)
    p.add_argument("--p-out", type=float, default=0.01)
    p.add_argument("--feat-dim", type=int, default=64)
    p.add_argument("--feat-shift", type=float, default=2.0)
    p.add_argument("--topology", choices=("complete", "chain"), default="complete")

    p = sub.add_parser("girl", help="self-supervised GIRL training")
    _common(p)
    _dataset(p)
    _training(p)
    p.add_argument("--baseline", action="store_true",
                   help="also evaluate the randomly initialized encoder")

    p = sub.add_parser("supervised", help="cross-entropy plus KR regularization")
    _common(p)
    _dataset(p, labels_required=True)
    _training(p)

    p = sub.add_parser("eval", help="train a decoder on a frozen checkpointed encoder")
    _common(p)
    _dataset(p, labels_required=True)
    _training(p)
    p.add_argument("--checkpoint", required=True, help="encoder checkpoint written by girl/supervised")

    p = sub.add_parser("replay", help="re-run a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="output root (default: the manifest's)")
    return parser


def _training_config(args, base=None):
    """Precedence: defaults < checkpoint config (eval) < config file < flags."""
    flags = {k: getattr(args, k) for k in
             ("layer", "depth", "hidden", "lambda_reg", "lambda_ridge", "epochs", "lr",
              "detach_targets", "p", "sigma", "seed")}
    flags.update(dict(args.assignments))
    values = dict(base or {})
    if args.config:
        values.update(read_config_file(args.config))
    values.update({k: v for k, v in flags.items() if v is not None})
    return flatten_config(build_config(values))


def _resolve(args):
    """(config, options) for a parsed command line."""
    sub = args.subcommand
    seed = 0 if args.seed is None else args.seed
    if sub == "synthetic":
        alphas = args.alphas
        if alphas is None:
            alphas = [0.0, 0.25, 0.5, 1.0, 2.0] if args.experiment == "100d" else [0.0, 0.3, 0.6, 0.9]
        config = {"n": args.n, "repeats": args.repeats, "seed": seed, "sigma": args.sigma,
                  "p": args.p, "eps_rank": args.eps_rank}
        if args.experiment != "1d":
            config["alphas"] = alphas
        return config, {"experiment": args.experiment}
    if sub == "gen-sbm":
        config = {k: getattr(args, k) for k in
                  ("n", "blocks", "p_in", "p_out", "feat_dim", "feat_shift", "topology")}
        config["seed"] = seed
        return config, {}
    options = {k: (os.path.abspath(v) if v else v)
               for k, v in (("edges", args.edges), ("features", args.features),
                            ("labels", args.labels))}
    options["standardize"] = args.standardize
    if sub == "girl":
        options["baseline"] = args.baseline
    base = None
    if sub == "eval":
        options["checkpoint"] = os.path.abspath(args.checkpoint)
        _, _, meta = load_checkpoint(args.checkpoint)
        base = meta.get("config")
    return _training_config(args, base), options


def _replay(args):
    manifest = read_manifest(args.manifest)
    out = args.out if args.out is not None else str(Path(args.manifest).resolve().parent.parent)
    options = {k: v for k, v in manifest.options.items() if k != "argv"}
    return execute(manifest.subcommand, manifest.config, options, out)


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.subcommand == "replay":
            manifest, run_dir = _replay(args)
        else:
            config, options = _resolve(args)
            manifest, run_dir = execute(args.subcommand, config, options, args.out, argv)
    except KRGNNError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [io-error]: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {', '.join(manifest.outputs)} to {run_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
