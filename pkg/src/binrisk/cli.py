"""Command line interface.

Subcommands mirror the pipeline stages one to one; ``report`` chains
them.  Every command reads an optional shared config file and accepts
flag overrides for the knobs it owns.  Exit codes: 0 success, 2 when
fingerprint alerts were raised (for CI gating), 1 on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig
from .errors import BinriskError, ConfigError
from .fingerprint import Fingerprint, save_fingerprint
from .graphormer import NodeEmbedding, load_embeddings
from .metrics import ConfusionCounts, classification_metrics
from .pipeline import (
    build_provider,
    dumps_json,
    run_pipeline,
    stage_build_kg,
    stage_export_dot,
    stage_forward,
    stage_ingest,
    stage_lift,
    stage_match,
    stage_score,
    stage_threshold,
    write_atomic,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_ALERTS = 2


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = PipelineConfig.from_file(args.config)
    else:
        cfg = PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _emit(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True))


# --- handlers ----------------------------------------------------------------

def _cmd_ingest(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    g = stage_ingest(args.cpg, args.out)
    _emit({"binary_id": g.binary_id, "nodes": len(g.nodes),
           "edges": len(g.edges), "functions": len(g.function_ids)})
    return EXIT_OK


def _cmd_lift(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if args.annotator:
        cfg.annotator_type = args.annotator
    if args.rules:
        cfg.rules_path = args.rules
    if args.replay:
        cfg.replay_path = args.replay
    if args.cmd:
        cfg.annotator_cmd = args.cmd
    corpus = stage_lift(args.cpg, cfg, args.out)
    _emit({"accepted": len(corpus.accepted), "rejected": corpus.rejected_count,
           "failed": corpus.failed_count,
           "rejection_rate": corpus.rejection_rate})
    return EXIT_OK


def _cmd_build_ssckg(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if args.cves:
        cfg.cves_path = args.cves
    kg = stage_build_kg(args.cpg, args.corpus, cfg, args.out)
    _emit({"entities": len(kg.entities), "relations": len(kg.relations)})
    return EXIT_OK


def _cmd_embed(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    provider = build_provider(cfg)
    doc = json.loads(Path(args.texts).read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ConfigError("--texts must be a JSON object of name -> text")
    out = {key: provider.embed(str(text)).values.tolist()
           for key, text in doc.items()}
    write_atomic(args.out, dumps_json(out))
    _emit({"embedded": len(out), "dimension": provider.dimension()})
    return EXIT_OK


def _cmd_forward(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if args.params:
        cfg.params_path = args.params
    embeddings = stage_forward(args.kg, cfg, args.out)
    _emit({"entities": len(embeddings),
           "dimension": int(embeddings[0].vector.shape[0]) if embeddings else 0})
    return EXIT_OK


def _cmd_score(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if args.cves:
        cfg.cves_path = args.cves
    if args.beta is not None:
        cfg.beta = args.beta
    doc = stage_score(args.kg, cfg, args.out)
    top = doc["ranking"][0] if doc["ranking"] else None
    _emit({"iterations": doc["iterations"], "residual": doc["residual"],
           "top": top})
    return EXIT_OK


def _cmd_fingerprint_extract(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    embeddings = load_embeddings(args.embeddings)
    by_id = {e.entity_id: e for e in embeddings}
    try:
        wanted = [int(tok) for tok in args.ids.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"--ids must be comma-separated integers, got {args.ids!r}")
    if not wanted:
        raise ConfigError("--ids selected no entities")
    missing = [i for i in wanted if i not in by_id]
    if missing:
        raise ConfigError(f"entity ids not in embeddings file: {missing}")
    nodes = tuple(
        NodeEmbedding(entity_id=i, vector=by_id[i].vector) for i in wanted)
    fp = Fingerprint(name=args.name, node_embeddings=nodes,
                     provenance=args.provenance or "")
    save_fingerprint(fp, args.out)
    _emit({"name": fp.name, "nodes": len(fp.node_embeddings)})
    return EXIT_OK


def _cmd_match(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    tau = cfg.tau if args.tau is None else args.tau
    doc = stage_match(args.kg_embeddings, args.repo, tau, args.out)
    _emit({"tau": doc["tau"], "alerts": doc["alerts"],
           "matches": len(doc["matches"])})
    return EXIT_ALERTS if doc["alerts"] else EXIT_OK


def _cmd_threshold(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    doc = stage_threshold(args.scores, cfg, args.out)
    _emit({k: doc[k] for k in
           ("tau", "j_statistic", "tpr", "fpr", "fpr_cap_satisfied")})
    return EXIT_OK


def _cmd_report(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    reports = run_pipeline(cfg, args.cpg, args.outdir,
                           workers=args.workers or 1)
    summary = [{"binary_id": r.binary_id, "alerts": list(r.alerts)}
               for r in reports]
    _emit(summary)
    return EXIT_ALERTS if any(r.has_alerts for r in reports) else EXIT_OK


def _cmd_export_dot(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    stage_export_dot(args.kg, args.risk, cfg, args.out)
    _emit({"written": str(args.out)})
    return EXIT_OK


def _cmd_metrics(cfg: PipelineConfig, args: argparse.Namespace) -> int:
    parts = args.confusion.split(",")
    if len(parts) != 4:
        raise ConfigError("--confusion expects tp,fp,tn,fn")
    try:
        tp, fp, tn, fn = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"--confusion expects integers, got {args.confusion!r}")
    m = classification_metrics(ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn))
    doc = {
        "precision": m.precision, "recall": m.recall, "f1": m.f1,
        "mcc": m.mcc, "fpr": m.fpr, "flagged": sorted(m.flagged),
    }
    if args.out:
        write_atomic(args.out, dumps_json(doc))
    _emit(doc)
    return EXIT_OK


# --- parser ----------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="pipeline config JSON file")
    sub.add_argument("--seed", type=int, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binrisk",
        description="Vulnerability analysis over binary code property graphs")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="validate a CPG and write canonical JSON")
    _add_common(p)
    p.add_argument("--cpg", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_ingest)

    p = subs.add_parser("lift", help="annotate functions and build the verified corpus")
    _add_common(p)
    p.add_argument("--cpg", required=True)
    p.add_argument("--annotator", choices=["rules", "replay", "cmd"])
    p.add_argument("--rules", help="rules JSON for the rules annotator")
    p.add_argument("--replay", help="recorded annotations for the replay annotator")
    p.add_argument("--cmd", help="external annotator command line")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_lift)

    p = subs.add_parser("build-ssckg", help="collapse the CPG into a knowledge graph")
    _add_common(p)
    p.add_argument("--cpg", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--cves", help="CVE corpus JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_build_ssckg)

    p = subs.add_parser("embed", help="embed a JSON object of name -> text")
    _add_common(p)
    p.add_argument("--texts", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_embed)

    p = subs.add_parser("forward", help="run the graph transformer over a knowledge graph")
    _add_common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--params", help="saved model parameters (.npz)")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_forward)

    p = subs.add_parser("score", help="compute and propagate entity risk")
    _add_common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--cves", help="CVE corpus JSON")
    p.add_argument("--beta", type=float, help="inherent-risk damping factor")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_score)

    p = subs.add_parser("fingerprint", help="fingerprint repository tools")
    fp_subs = p.add_subparsers(dest="fingerprint_command", required=True)
    pe = fp_subs.add_parser("extract", help="extract a fingerprint from entity embeddings")
    _add_common(pe)
    pe.add_argument("--embeddings", required=True)
    pe.add_argument("--ids", required=True,
                    help="comma-separated entity ids to include")
    pe.add_argument("--name", required=True)
    pe.add_argument("--provenance", default="")
    pe.add_argument("--out", required=True)
    pe.set_defaults(handler=_cmd_fingerprint_extract)

    p = subs.add_parser("match", help="match fingerprints against entity embeddings")
    _add_common(p)
    p.add_argument("--kg-embeddings", dest="kg_embeddings", required=True)
    p.add_argument("--repo", required=True, help="directory of fingerprint JSON files")
    p.add_argument("--tau", type=float, help="alert threshold")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_match)

    p = subs.add_parser("threshold", help="select an alert threshold from scored samples")
    _add_common(p)
    p.add_argument("--scores", required=True,
                   help="JSON list of {score, label} rows")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_threshold)

    p = subs.add_parser("report", help="run the full pipeline over one or more CPGs")
    _add_common(p)
    p.add_argument("--cpg", required=True, nargs="+")
    p.add_argument("--outdir", required=True)
    p.add_argument("--workers", type=int, help="parallel binaries (default 1)")
    p.set_defaults(handler=_cmd_report)

    p = subs.add_parser("export-dot", help="render a knowledge graph to DOT")
    _add_common(p)
    p.add_argument("--kg", required=True)
    p.add_argument("--risk", help="risk JSON for band coloring")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_export_dot)

    p = subs.add_parser("metrics", help="classification metrics from a confusion matrix")
    _add_common(p)
    p.add_argument("--confusion", required=True, help="tp,fp,tn,fn")
    p.add_argument("--out")
    p.set_defaults(handler=_cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        return args.handler(cfg, args)
    except BinriskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
