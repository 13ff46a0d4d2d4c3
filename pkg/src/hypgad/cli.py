"""Command-line interface: ``hypgad inject | score | verify``.

Exit codes are 0 on success, 1 on a runtime or verification failure and 2
on a usage error. Options may also come from a JSON run-spec given with
``--config``; its keys are the long option names with dashes replaced by
underscores, and explicit flags take precedence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .graph import GraphFormatError, NormalizationMode, load_cora_content, load_tsv, normalize_features
from .injection import SETTINGS, InjectionError, InjectionSpec, default_spec, inject, save_injection
from .metrics import ScoreReport, aggregate_trials, config_fingerprint, write_report_csv, write_report_json

OUTPUT_ENV = "HYPGAD_OUTPUT_DIR"
KIND_ALIASES = {"contextual": "contextual", "structural": "structural", "path": "path",
                "dice": "dice_n", "dice_n": "dice_n"}

logger = logging.getLogger("hypgad")


class UsageError(Exception):
    """Bad command-line input detected after argparse (exit code 2)."""


def _add_data_args(p):
    g = p.add_argument_group("dataset")
    g.add_argument("--content", help="Cora-style content file (id, features, class per line)")
    g.add_argument("--cites", help="Cora-style citation pairs")
    g.add_argument("--features", help="TSV feature matrix, one row per node")
    g.add_argument("--edges", help="TSV edge list, 0-indexed 'i j' pairs")
    g.add_argument("--labels", help="class label per node")
    g.add_argument("--outliers", help="0/1 outlier label per node (already injected data)")
    g.add_argument("--normalize", choices=[m.value for m in NormalizationMode], default="l1_row",
                   help="row normalization applied before injection (default: l1_row)")


def _add_injection_args(p, required_o=False):
    g = p.add_argument_group("injection")
    g.add_argument("--o", type=int, required=required_o, help="number of outliers")
    g.add_argument("--q", type=int, help="reference sample size (default: s)")
    g.add_argument("--s", type=int, default=10, help="structural group size")
    g.add_argument("--p", type=float, default=0.2, help="in-group edge drop probability")
    g.add_argument("--r", type=float, default=0.5, help="DICE-n rewiring fraction")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hypgad", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON run-spec; flags given explicitly override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inject", help="inject outliers and write the perturbed graph")
    _add_data_args(p)
    _add_injection_args(p, required_o=True)
    p.add_argument("--kind", action="append", choices=sorted(KIND_ALIASES), required=True,
                   help="outlier kind; repeat to mix kinds (o is split evenly)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./hypgad-out)")
    p.add_argument("--prefix", default="injected")

    p = sub.add_parser("score", help="inject, train/score and evaluate over several trials")
    _add_data_args(p)
    _add_injection_args(p)
    p.add_argument("--setting", choices=list(SETTINGS), default="cntxt+strct",
                   help="outlier setting injected per trial (ignored with --outliers)")
    p.add_argument("--baseline", choices=["norm", "mlpae", "gcnae"],
                   help="score with a reference baseline instead of the autoencoder")
    p.add_argument("--geometry", choices=["poincare", "lorentz", "euclidean"], default="poincare")
    p.add_argument("--mp", action="store_true", help="enable message passing in the encoder")
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--weight-decay", type=float, default=1e-3)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.add_argument("--jobs", type=int, default=1, help="worker processes, one trial per worker")
    p.add_argument("--dump-distances", action="store_true",
                   help="write structural-embedding distances of connected and disconnected pairs")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./hypgad-out)")

    p = sub.add_parser("verify", help="run the self-check suites")
    p.add_argument("--only", action="append", choices=["lemma1", "lemma2", "geometry", "gradcheck", "metrics"])
    p.add_argument("--pairs", type=int, default=10000, help="random pairs for lemma2")
    p.add_argument("--cases", type=int, default=1000, help="random cases for metrics")
    p.add_argument("--geometry", action="append", choices=["euclidean", "lorentz", "poincare"])
    p.add_argument("--seed", type=int, default=0)
    return parser


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read --config: {exc}")
    if not isinstance(spec, dict):
        parser.error("--config must hold a JSON object")
    known = vars(args)
    unknown = sorted(k for k in spec if k not in known or k in ("command", "config"))
    if unknown:
        parser.error(f"unknown run-spec keys: {', '.join(unknown)}")
    # re-parse with the spec as defaults so explicit flags still win
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**spec)
    for action in sub._actions:
        if action.dest in spec and action.required:
            action.required = False
    return parser.parse_args(argv)


def _out_dir(args):
    out = args.out or os.environ.get(OUTPUT_ENV) or "hypgad-out"
    os.makedirs(out, exist_ok=True)
    return out


def _load_graph(args):
    if args.content or args.cites:
        if not (args.content and args.cites):
            raise UsageError("--content and --cites must be given together")
        g = load_cora_content(args.content, args.cites)
    elif args.features and args.edges:
        g = load_tsv(args.features, args.edges, args.labels, args.outliers)
    else:
        raise UsageError("give --content/--cites or --features/--edges")
    return normalize_features(g, args.normalize)


def cmd_inject(args) -> int:
    g = _load_graph(args)
    kinds = [KIND_ALIASES[k] for k in args.kind]
    if len(set(kinds)) != len(kinds):
        raise UsageError("each --kind may be given once")
    base, extra = divmod(args.o, len(kinds))
    counts = {k: base + (1 if i < extra else 0) for i, k in enumerate(kinds)}
    spec = InjectionSpec(counts, s=args.s, q=args.q, p=args.p, r=args.r, seed=args.seed)
    result = inject(g, spec)
    paths = save_injection(result, _out_dir(args), args.prefix)
    print(f"injected {len(result.outlier_ids)} outliers; wrote {', '.join(sorted(paths.values()))}")
    return 0


def _trial_config(args):
    keys = ["setting", "baseline", "geometry", "mp", "alpha", "hidden", "dropout", "lr", "weight_decay",
            "epochs", "batch_size", "o", "q", "s", "p", "r", "normalize"]
    return {k: getattr(args, k) for k in keys}


def _model_name(cfg):
    if cfg["baseline"]:
        return cfg["baseline"]
    return f"{cfg['geometry']}{'+mp' if cfg['mp'] else ''}"


def _run_trial(graph, cfg, seed, out_dir, dump_distances):
    """One trial: inject (unless labels are given), fit, score. Runs in a worker."""
    import torch

    from .detector import GCNAE, MLPAE, HyperbolicGAD, NormScoreDetector
    from .training import write_loss_curve

    torch.set_num_threads(1)
    if cfg["setting"] is not None:
        o = cfg["o"] if cfg["o"] is not None else max(cfg["s"], int(round(0.05 * graph.num_nodes / cfg["s"])) * cfg["s"])
        spec = default_spec(cfg["setting"], o=o, s=cfg["s"], p=cfg["p"], r=cfg["r"], q=cfg["q"], seed=seed)
        graph = inject(graph, spec).graph
    if cfg["baseline"] == "norm":
        det = NormScoreDetector(alpha=cfg["alpha"])
    elif cfg["baseline"] in ("mlpae", "gcnae"):
        cls = MLPAE if cfg["baseline"] == "mlpae" else GCNAE
        det = cls(hidden=cfg["hidden"], lr=cfg["lr"], epochs=cfg["epochs"], random_state=seed)
    else:
        det = HyperbolicGAD(geometry=cfg["geometry"], hidden=cfg["hidden"], message_passing=cfg["mp"],
                            dropout=cfg["dropout"], alpha=cfg["alpha"], lr=cfg["lr"],
                            weight_decay=cfg["weight_decay"], epochs=cfg["epochs"],
                            batch_size=cfg["batch_size"], random_state=seed)
    det.fit(graph)
    scores = det.decision_scores_
    labels = graph.outlier_labels
    tag = f"{_model_name(cfg)}_{cfg['setting'] or 'given'}_seed{seed}"
    np.savetxt(os.path.join(out_dir, f"scores_{tag}.tsv"),
               np.column_stack([np.arange(scores.size), scores, labels]),
               fmt=["%d", "%.17g", "%d"], delimiter="\t", header="node\tscore\toutlier", comments="")
    if hasattr(det, "loss_curve_"):
        write_loss_curve(det.loss_curve_, os.path.join(out_dir, f"loss_{tag}.csv"))
    if dump_distances and isinstance(det, HyperbolicGAD):
        _dump_distances(det, graph, os.path.join(out_dir, f"distances_{tag}.tsv"), seed)
    return scores, labels


def _dump_distances(det, graph, path, seed, max_pairs=20000):
    """Sample structural-embedding distances for connected and disconnected pairs."""
    H = det.transform(graph)
    m = det.model_.manifold
    rng = np.random.default_rng(seed)
    edges = graph.edge_array()
    if edges.shape[0] > max_pairs:
        edges = edges[rng.choice(edges.shape[0], max_pairs, replace=False)]
    n = graph.num_nodes
    cand = rng.integers(0, n, size=(2 * max_pairs, 2))
    cand = cand[cand[:, 0] != cand[:, 1]]
    disc = np.array([pq for pq in cand if not graph.has_edge(*pq)][:max(edges.shape[0], 1)], dtype=np.int64)
    rows = []
    for kind, pairs in (("connected", edges), ("disconnected", disc)):
        if pairs.size:
            d = np.asarray(m.dist(H[pairs[:, 0]], H[pairs[:, 1]]))
            rows += [(kind, int(i), int(j), float(v)) for (i, j), v in zip(pairs, d)]
    with open(path, "w") as fh:
        fh.write("pair\ti\tj\tdistance\n")
        for kind, i, j, v in rows:
            fh.write(f"{kind}\t{i}\t{j}\t{v!r}\n")


def cmd_score(args) -> int:
    if args.seeds is not None:
        if args.trials is not None and args.trials != len(args.seeds):
            raise UsageError(f"--trials {args.trials} does not match {len(args.seeds)} --seeds")
        seeds = list(args.seeds)
    else:
        seeds = list(range(args.trials if args.trials is not None else 3))
    if not seeds:
        raise UsageError("need at least one trial")
    graph = _load_graph(args)
    cfg = _trial_config(args)
    if args.outliers:
        cfg["setting"] = None
        if graph.outlier_labels.sum() == 0:
            raise UsageError("--outliers file marks no outlier")
    out_dir = _out_dir(args)
    if args.jobs > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_run_trial, graph, cfg, s, out_dir, args.dump_distances) for s in seeds]
            results = [f.result() for f in futures]
    else:
        results = [_run_trial(graph, cfg, s, out_dir, args.dump_distances) for s in seeds]

    fp = config_fingerprint(cfg)
    reports = [ScoreReport(s_, y_, seed=seed, fingerprint=fp) for seed, (s_, y_) in zip(seeds, results)]
    row = {"model": _model_name(cfg), "setting": cfg["setting"] or "given", **aggregate_trials(reports)}
    write_report_csv([row], os.path.join(out_dir, "metrics.csv"))
    write_report_json([row], os.path.join(out_dir, "metrics.json"), per_trial=reports)
    for r in reports:
        print(f"seed {r.seed}: roc_auc={100 * r.roc_auc:.2f} ap={100 * r.ap:.2f}")
    print(f"{row['model']} / {row['setting']}: roc_auc {100 * row['roc_auc_mean']:.1f} "
          f"+- {100 * row['roc_auc_std']:.1f} over {row['trials']} trials")
    return 0


def cmd_verify(args) -> int:
    from .verify import GEOMETRIES, run_suites

    results = run_suites(args.only, pairs=args.pairs, geometries=args.geometry or GEOMETRIES,
                         cases=args.cases, seed=args.seed)
    for r in results:
        print(r.line())
        for msg in r.failures[:10]:
            print(f"    {msg}")
    return 0 if all(r.passed for r in results) else 1


COMMANDS = {"inject": cmd_inject, "score": cmd_score, "verify": cmd_verify}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hypgad {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (GraphFormatError, InjectionError, ValueError, OSError, FloatingPointError) as exc:
        print(f"hypgad {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
