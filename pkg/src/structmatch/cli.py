"""Command-line front end.

Subcommands: ``rerank`` (batch retrieval), ``eval`` (accuracy metrics),
``explain`` (one-pair similarity decomposition), ``solve`` (direct
transport-solver access) and ``loss-eval`` (training-objective values on a
fixture bank).  Exit codes: 0 on success, 2 for bad arguments, 3 for
unreadable or malformed data.

Data goes to stdout unless ``--out`` is given; diagnostics go to stderr.
With ``--out``, a run manifest (effective parameters, input digests, stage
timings) is written next to the result as ``<out>.run.json``, the result
references it by name, and both files are written atomically so a crashed
run never leaves partial output behind.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .bank import BankError, manifest_path, read_feature_bank
from .core import pool_grid
from .losses import MarginParams, MSParams, ProxyBank, margin_loss, ms_loss, proxy_nca_loss
from .matching import explain_match
from .metrics import evaluate
from .ot import MarginalPair, SinkhornConfig, TransportPlan, sinkhorn
from .retrieval import COMBINE_MODES, MARGINAL_MODES, RetrievalConfig, batch_rerank

__all__ = ["main", "entry"]


# ---------------------------------------------------------------------------
# serialization helpers

def _format_json(value) -> str:
    """Compact JSON with floats at 17 significant digits.

    17 digits round-trip any 64-bit float exactly, so results can be
    re-read without drift and byte-compared across runs.
    """
    if value is None or value is True or value is False:
        return json.dumps(value)
    if isinstance(value, float):
        return format(value, ".17g")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, dict):
        return "{" + ",".join(
            f"{json.dumps(str(k))}:{_format_json(v)}" for k, v in value.items()
        ) + "}"
    if isinstance(value, (list, tuple)):
        return "[" + ",".join(_format_json(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def _write_atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _digest(path: Path) -> str:
    return hashlib.blake2b(path.read_bytes(), digest_size=8).hexdigest()


def _input_digests(paths) -> dict:
    out = {}
    for p in paths:
        p = Path(p)
        if p.exists():
            out[str(p)] = _digest(p)
    return out


def _emit(doc: dict, out: str | None, params: dict, inputs, timings: dict) -> None:
    """Write one JSON document, with a run-manifest sidecar in file mode."""
    if out is None:
        print(_format_json(doc))
        return
    out_path = Path(out)
    manifest_name = out_path.name + ".run.json"
    manifest = {
        "tool": "structmatch",
        "version": __version__,
        "parameters": params,
        "input_digests": _input_digests(inputs),
        "timings_s": timings,
    }
    doc = dict(doc)
    doc["manifest"] = manifest_name
    _write_atomic_text(out_path.with_name(manifest_name), _format_json(manifest))
    _write_atomic_text(out_path, _format_json(doc) + "\n")


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 3


def _bank_inputs(*bank_paths) -> list[Path]:
    files = []
    for p in bank_paths:
        if p is None:
            continue
        files.append(Path(p))
        files.append(manifest_path(p))
    return files


def _labels_from_manifests(*bank_paths) -> dict:
    labels: dict[str, int] = {}
    for p in bank_paths:
        if p is None:
            continue
        for entry in json.loads(manifest_path(p).read_text("utf-8")):
            item_id, label = entry["id"], int(entry["label"])
            if item_id in labels and labels[item_id] != label:
                raise ValueError(f"conflicting labels for id {item_id!r}")
            labels[item_id] = label
    return labels


# ---------------------------------------------------------------------------
# subcommands

def _sinkhorn_config(args, log_domain: bool = True) -> SinkhornConfig:
    return SinkhornConfig(
        reg=args.reg, max_iters=args.max_iters, tol=args.tol, log_domain=log_domain
    )


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda", dest="reg", type=float, default=0.05,
                   help="entropy weight of the transport solver (default 0.05)")
    p.add_argument("--max-iters", type=int, default=100,
                   help="maximum solver sweeps (default 100)")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="marginal-violation stopping tolerance (default 1e-6)")


def cmd_rerank(args) -> int:
    threads = args.threads
    if threads is None:
        env = os.environ.get("DIML_THREADS")
        if env is not None:
            try:
                threads = int(env)
            except ValueError:
                print(f"error: DIML_THREADS must be an integer, got {env!r}",
                      file=sys.stderr)
                return 2
    if threads is not None and threads < 1:
        print(f"error: threads must be >= 1, got {threads}", file=sys.stderr)
        return 2
    try:
        config = RetrievalConfig(
            top_k=args.k,
            grid=args.grid,
            sinkhorn=_sinkhorn_config(args),
            combine=args.combine,
            marginals=args.marginals,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        gallery = read_feature_bank(args.bank)
        queries = read_feature_bank(args.queries) if args.queries else None
    except (OSError, BankError) as exc:
        return _fail(str(exc))
    t_load = time.perf_counter() - t0
    try:
        rankings = batch_rerank(
            queries if queries is not None else gallery, gallery, config,
            threads=threads,
        )
    except ValueError as exc:
        return _fail(str(exc))
    t_rank = time.perf_counter() - t0 - t_load

    lines = [_format_json(r.to_json_dict()) for r in rankings]
    if args.out is None:
        for line in lines:
            print(line)
        return 0
    out_path = Path(args.out)
    manifest_name = out_path.name + ".run.json"
    params = {
        "command": "rerank",
        "bank": args.bank,
        "queries": args.queries,
        "k": args.k,
        "grid": args.grid,
        "lambda": args.reg,
        "max_iters": args.max_iters,
        "tol": args.tol,
        "combine": args.combine,
        "marginals": args.marginals,
        "threads": threads,
    }
    manifest = {
        "tool": "structmatch",
        "version": __version__,
        "parameters": params,
        "input_digests": _input_digests(_bank_inputs(args.bank, args.queries)),
        "timings_s": {"load": t_load, "rerank": t_rank},
    }
    header = _format_json({"manifest": manifest_name})
    try:
        _write_atomic_text(out_path.with_name(manifest_name), _format_json(manifest))
        _write_atomic_text(out_path, "\n".join([header] + lines) + "\n")
    except OSError as exc:
        return _fail(str(exc))
    return 0


def read_rankings(path: str | os.PathLike) -> list[dict]:
    """Parse a rerank output stream, skipping the manifest header if present."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if set(doc) == {"manifest"}:
                continue
            rows.append(doc)
    return rows


class _ParsedRanking:
    # duck-typed stand-in for retrieval.RankedList inside metrics.evaluate
    def __init__(self, doc: dict):
        self.query_id = doc["query"]
        self.entries = [_ParsedEntry(e) for e in doc["entries"]]


class _ParsedEntry:
    def __init__(self, doc: dict):
        self.gallery_id = doc["id"]


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    try:
        rows = read_rankings(args.rankings)
        labels = _labels_from_manifests(args.bank, args.queries)
        rankings = [_ParsedRanking(doc) for doc in rows]
        report = evaluate(rankings, labels)
    except (OSError, ValueError, KeyError, BankError) as exc:
        return _fail(str(exc))
    doc = report.to_json_dict()
    table = (
        f"queries scored : {report.queries}\n"
        f"P@1            : {100.0 * report.p_at_1:.2f}%\n"
        f"R-Precision    : {100.0 * report.rp:.2f}%\n"
        f"MAP@R          : {100.0 * report.map_at_r:.2f}%"
    )
    # keep stdout machine-readable: the table rides the other channel
    print(table, file=sys.stderr if args.out is None else sys.stdout)
    params = {"command": "eval", "rankings": args.rankings, "bank": args.bank,
              "queries": args.queries}
    inputs = [Path(args.rankings)] + _bank_inputs(args.bank, args.queries)
    try:
        _emit(doc, args.out, params, inputs, {"eval": time.perf_counter() - t0})
    except OSError as exc:
        return _fail(str(exc))
    return 0


def cmd_explain(args) -> int:
    t0 = time.perf_counter()
    try:
        gallery = read_feature_bank(args.bank)
        idx_a = gallery.index_of(args.id_a)
        idx_b = gallery.index_of(args.id_b)
    except KeyError as exc:
        return _fail(str(exc.args[0]))
    except (OSError, BankError) as exc:
        return _fail(str(exc))
    g = min(args.grid, gallery.grid_h, gallery.grid_w)
    try:
        result = explain_match(
            pool_grid(gallery.fmap(idx_a), g),
            pool_grid(gallery.fmap(idx_b), g),
            _sinkhorn_config(args),
            id_a=args.id_a,
            id_b=args.id_b,
            top_m=args.top_m,
        )
    except ValueError as exc:
        return _fail(str(exc))
    params = {"command": "explain", "bank": args.bank, "id_a": args.id_a,
              "id_b": args.id_b, "grid": args.grid, "lambda": args.reg,
              "max_iters": args.max_iters, "tol": args.tol, "top_m": args.top_m}
    try:
        _emit(result.to_json_dict(), args.out, params, _bank_inputs(args.bank),
              {"explain": time.perf_counter() - t0})
    except OSError as exc:
        return _fail(str(exc))
    return 0


def _plan_to_json(result: TransportPlan) -> dict:
    return {
        "plan": [[float(x) for x in row] for row in result.plan],
        "converged": result.converged,
        "iterations_used": result.iterations_used,
        "marginal_error": result.marginal_error,
        "diagnostic": result.diagnostic,
    }


def cmd_solve(args) -> int:
    t0 = time.perf_counter()
    try:
        problem = json.loads(Path(args.problem).read_text("utf-8"))
        cost = problem["cost"]
        marginals = MarginalPair(problem["mu_s"], problem["mu_t"])
        config = _sinkhorn_config(args, log_domain=not args.plain)
        result = sinkhorn(cost, marginals, config)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        return _fail(str(exc))
    params = {"command": "solve", "problem": args.problem, "lambda": args.reg,
              "max_iters": args.max_iters, "tol": args.tol, "plain": args.plain}
    try:
        _emit(_plan_to_json(result), args.out, params, [Path(args.problem)],
              {"solve": time.perf_counter() - t0})
    except OSError as exc:
        return _fail(str(exc))
    return 0


def cmd_loss_eval(args) -> int:
    if args.loss == "proxy_nca" and args.proxies is None:
        print("error: --proxies is required for proxy_nca", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        batch = read_feature_bank(args.bank)
    except (OSError, BankError) as exc:
        return _fail(str(exc))
    config = _sinkhorn_config(args)
    try:
        if args.loss == "margin":
            params = MarginParams(margin=args.margin, boundary=args.boundary)
            pairs = [
                margin_loss(batch.fmap(i), batch.fmap(j),
                            bool(batch.labels[i] == batch.labels[j]),
                            params, config, args.marginals)
                for i in range(len(batch)) for j in range(i + 1, len(batch))
            ]
            if not pairs:
                return _fail("margin loss needs a bank with at least two items")
            doc = {"loss": "margin", "value": float(sum(pairs) / len(pairs)),
                   "pairs": len(pairs)}
        elif args.loss == "ms":
            params = MSParams(pos_scale=args.pos_scale, neg_scale=args.neg_scale,
                              base=args.base, mining_margin=args.mining_margin)
            doc = {"loss": "ms",
                   "value": ms_loss(batch, params, config, args.marginals),
                   "items": len(batch)}
        else:
            proxy_bank = read_feature_bank(args.proxies)
            proxies = ProxyBank.from_items(
                [(int(proxy_bank.labels[i]), proxy_bank.fmap(i))
                 for i in range(len(proxy_bank))]
            )
            doc = {"loss": "proxy_nca",
                   "value": proxy_nca_loss(batch, proxies, config, args.marginals),
                   "items": len(batch)}
    except (OSError, BankError, ValueError) as exc:
        return _fail(str(exc))
    params_doc = {"command": "loss-eval", "bank": args.bank, "loss": args.loss,
                  "proxies": args.proxies, "marginals": args.marginals,
                  "lambda": args.reg, "max_iters": args.max_iters, "tol": args.tol}
    if args.loss == "margin":
        params_doc.update({"margin": args.margin, "boundary": args.boundary})
    elif args.loss == "ms":
        params_doc.update({"pos_scale": args.pos_scale, "neg_scale": args.neg_scale,
                           "base": args.base, "mining_margin": args.mining_margin})
    try:
        _emit(doc, args.out, params_doc, _bank_inputs(args.bank, args.proxies),
              {"loss_eval": time.perf_counter() - t0})
    except OSError as exc:
        return _fail(str(exc))
    return 0


# ---------------------------------------------------------------------------
# argument wiring

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structmatch",
        description="Structural image similarity: transport-based matching, "
        "retrieval re-ranking, and similarity decomposition.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rerank", help="rank a gallery bank for every query")
    p.add_argument("--bank", required=True, help="gallery feature-bank path")
    p.add_argument("--queries",
                   help="query feature-bank path (default: the gallery itself, "
                        "with each query excluded from its own candidates)")
    p.add_argument("--k", type=int, default=100,
                   help="how many head candidates to re-score structurally "
                        "(default 100; 0 keeps the cosine ranking)")
    p.add_argument("--grid", type=int, default=4,
                   help="pooled grid side for structural matching (default 4)")
    _add_solver_flags(p)
    p.add_argument("--combine", choices=COMBINE_MODES, default="sum",
                   help="how to fold cosine and structural scores (default sum)")
    p.add_argument("--marginals", choices=MARGINAL_MODES, default="cc",
                   help="cell-weight scheme for transport (default cc)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: DIML_THREADS or all cores)")
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="score a rankings file against labels")
    p.add_argument("--rankings", required=True, help="rerank output path")
    p.add_argument("--bank", required=True, help="bank providing gallery labels")
    p.add_argument("--queries", help="bank providing query labels, if separate")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="decompose the match of one item pair")
    p.add_argument("--bank", required=True, help="feature-bank path")
    p.add_argument("--id-a", required=True, help="source item id")
    p.add_argument("--id-b", required=True, help="target item id")
    p.add_argument("--grid", type=int, default=4,
                   help="pooled grid side (default 4, clamped to the map)")
    _add_solver_flags(p)
    p.add_argument("--top-m", type=int, default=5,
                   help="how many top cell pairs to list (default 5)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("solve", help="run the transport solver on one problem")
    p.add_argument("--problem", required=True,
                   help='JSON file with "cost", "mu_s" and "mu_t"')
    _add_solver_flags(p)
    p.add_argument("--plain", action="store_true",
                   help="use the plain-domain iteration instead of log-domain")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("loss-eval",
                       help="evaluate a training objective on a fixture bank")
    p.add_argument("--bank", required=True, help="batch feature-bank path")
    p.add_argument("--loss", required=True, choices=("margin", "ms", "proxy_nca"),
                   help="which objective to evaluate")
    p.add_argument("--proxies",
                   help="feature bank of per-class proxy maps (proxy_nca only; "
                        "labels are the class ids)")
    p.add_argument("--marginals", choices=MARGINAL_MODES, default="uniform",
                   help="cell-weight scheme for transport (default uniform, "
                        "the training-path convention)")
    _add_solver_flags(p)
    p.add_argument("--margin", type=float, default=0.1,
                   help="margin loss: hinge slack (default 0.1)")
    p.add_argument("--boundary", type=float, default=1.2,
                   help="margin loss: distance boundary (default 1.2)")
    p.add_argument("--pos-scale", type=float, default=2.0,
                   help="ms loss: positive-term temperature (default 2)")
    p.add_argument("--neg-scale", type=float, default=50.0,
                   help="ms loss: negative-term temperature (default 50)")
    p.add_argument("--base", type=float, default=1.0,
                   help="ms loss: similarity offset (default 1)")
    p.add_argument("--mining-margin", type=float, default=0.1,
                   help="ms loss: pair-keeping slack (default 0.1)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=cmd_loss_eval)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.func(args)


def entry() -> None:
    raise SystemExit(main())
