"""File-level pipeline stages and the end-to-end runner.

Each stage consumes and produces only the documented module formats,
so a full run is literally the chain of the individual subcommands:
running them by hand against the same config produces byte-identical
intermediate files.  All writes are atomic (temp file + rename) and
all serialization is canonical (sorted keys, no timestamps), so a
repeated run over the same inputs reproduces every byte.
"""

from __future__ import annotations

import json
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .config import PipelineConfig
from .cpg import CpgGraph, dumps_cpg, load_cpg
from .embedding import file_provider, hash_embedder
from .errors import ConfigError
from .fingerprint import (
    MatchResult,
    ThresholdReport,
    load_repository,
    match_and_alert,
    select_threshold,
)
from .graphormer import (
    ModelConfig,
    NodeEmbedding,
    dumps_embeddings,
    forward,
    init_params,
    load_embeddings,
    load_params,
)
from .lattice import Lattice
from .lifting import (
    VerifiedCorpus,
    build_corpus,
    command_annotator,
    dumps_corpus,
    load_corpus,
    replay_annotator,
    rule_annotator,
)
from .risk import PropagationConfig, RiskVector, inherent_risk, propagate
from .ssckg import (
    Granularity,
    RelationConfig,
    RelationType,
    SsckgGraph,
    construction_stats,
    dumps_ssckg,
    embed_entities,
    extract_relations,
    load_cves,
    load_ssckg,
    semantic_clustering,
    structural_collapse,
    to_dot,
)


def write_atomic(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# --- component builders -------------------------------------------------------

def build_lattice(cfg: PipelineConfig) -> Lattice:
    if cfg.lattice_path:
        return Lattice.from_file(cfg.lattice_path)
    return Lattice.default()


def build_provider(cfg: PipelineConfig):
    if cfg.embedding_type == "file":
        if not cfg.embedding_path:
            raise ConfigError("embedding_type 'file' needs embedding_path")
        return file_provider(cfg.embedding_path)
    return hash_embedder(dimension=cfg.embedding_dimension, seed=cfg.seed)


def build_annotator(cfg: PipelineConfig, lattice: Lattice):
    if cfg.annotator_type == "rules":
        if cfg.rules_path:
            return rule_annotator(cfg.rules_path, lattice)
        return rule_annotator([], lattice)
    if cfg.annotator_type == "replay":
        if not cfg.replay_path:
            raise ConfigError("annotator 'replay' needs replay_path")
        return replay_annotator(cfg.replay_path, lattice)
    if not cfg.annotator_cmd:
        raise ConfigError("annotator 'cmd' needs annotator_cmd")
    return command_annotator(cfg.annotator_cmd, lattice)


def build_relation_config(cfg: PipelineConfig) -> RelationConfig:
    rel_cfg = RelationConfig()
    if cfg.structural_edge_labels:
        rel_cfg.structural_edge_labels = {
            label: RelationType(value)
            for label, value in cfg.structural_edge_labels.items()}
    if cfg.read_actions:
        rel_cfg.read_actions = tuple(cfg.read_actions)
    if cfg.write_actions:
        rel_cfg.write_actions = tuple(cfg.write_actions)
    if cfg.taint_sources:
        rel_cfg.taint_sources = tuple(cfg.taint_sources)
    if cfg.taint_sinks:
        rel_cfg.taint_sinks = tuple(cfg.taint_sinks)
    if cfg.relation_weights:
        weights = dict(rel_cfg.weights)
        for name, value in cfg.relation_weights.items():
            weights[RelationType(name)] = float(value)
        rel_cfg.weights = weights
    return rel_cfg


def build_model_config(cfg: PipelineConfig, input_dim: int) -> ModelConfig:
    return ModelConfig(
        layers=cfg.model_layers, heads=cfg.model_heads,
        hidden_dim=cfg.model_hidden_dim, max_dist=cfg.model_max_dist,
        input_dim=input_dim, seed=cfg.seed)


def build_params(cfg: PipelineConfig, model_cfg: ModelConfig):
    if cfg.params_path:
        return load_params(cfg.params_path, expected=model_cfg)
    return init_params(model_cfg)


# --- stages ---------------------------------------------------------------------

def stage_ingest(cpg_path: str | Path, out_path: str | Path) -> CpgGraph:
    """Validate a graph file and write its canonical form."""
    g = load_cpg(cpg_path)
    write_atomic(out_path, dumps_cpg(g))
    return g


def stage_lift(cpg_path: str | Path, cfg: PipelineConfig,
               out_path: str | Path) -> VerifiedCorpus:
    """Annotate every function and keep the verifier-approved corpus."""
    g = load_cpg(cpg_path)
    lattice = build_lattice(cfg)
    annotator = build_annotator(cfg, lattice)
    corpus = build_corpus(g, g.function_ids, annotator)
    write_atomic(out_path, dumps_corpus(corpus))
    return corpus


def stage_build_kg(cpg_path: str | Path, corpus_path: str | Path,
                   cfg: PipelineConfig, out_path: str | Path) -> SsckgGraph:
    """Collapse the graph to entities, cluster, and extract relations."""
    g = load_cpg(cpg_path)
    lattice = build_lattice(cfg)
    provider = build_provider(cfg)
    corpus = load_corpus(corpus_path, lattice)
    granularity = Granularity(cfg.granularity)
    entities = structural_collapse(g, granularity, corpus)
    entities = embed_entities(entities, provider)
    eligible = sum(1 for e in entities if e.external)
    clustering = None
    if eligible:
        entities = semantic_clustering(entities, provider,
                                       eps=cfg.dbscan_eps,
                                       min_samples=cfg.dbscan_min_samples)
        noise = sum(1 for e in entities if e.cluster_id == -1)
        clusters = len({e.cluster_id for e in entities
                        if e.cluster_id is not None and e.cluster_id >= 0})
        clustering = {"points": eligible, "noise": noise, "clusters": clusters}
    cves = []
    if cfg.cves_path:
        cves = load_cves(cfg.cves_path, provider)
    relations = extract_relations(
        g, entities, cves, cve_match_threshold=cfg.cve_match_threshold,
        config=build_relation_config(cfg))
    kg = SsckgGraph(entities, relations, source_binary=g.binary_id,
                    clustering=clustering)
    write_atomic(out_path, dumps_ssckg(kg))
    return kg


def stage_forward(kg_path: str | Path, cfg: PipelineConfig,
                  out_path: str | Path) -> list[NodeEmbedding]:
    """Run the transformer and write one vector per entity."""
    kg = load_ssckg(kg_path)
    dims = {e.embedding.dimension for e in kg.entities if e.embedding is not None}
    input_dim = dims.pop() if len(dims) == 1 else cfg.embedding_dimension
    model_cfg = build_model_config(cfg, input_dim)
    params = build_params(cfg, model_cfg)
    embeddings = forward(kg, params)
    write_atomic(out_path, dumps_embeddings(embeddings))
    return embeddings


def _risk_document(kg: SsckgGraph, inherent: Mapping[int, float],
                   result: RiskVector, beta: float) -> dict:
    from .risk import normalize_weights

    connected = set(normalize_weights(kg))
    ranking = []
    for ent in kg.entities:
        score = result.scores[ent.id]
        inh = inherent[ent.id]
        # Split the converged score into its damped inherent part and
        # what arrived over relations; isolated entities are all inherent.
        if ent.id in connected:
            inherent_part = beta * inh
            propagated = score - inherent_part
        else:
            inherent_part = inh
            propagated = 0.0
        ranking.append({
            "entity_id": ent.id,
            "name": ent.name,
            "label": str(ent.label),
            "score": score,
            "inherent": inh,
            "inherent_contribution": inherent_part,
            "propagated_contribution": propagated,
        })
    ranking.sort(key=lambda row: (-row["score"], row["entity_id"]))
    return {
        "beta": beta,
        "iterations": result.iterations,
        "residual": result.residual,
        "ranking": ranking,
    }


def stage_score(kg_path: str | Path, cfg: PipelineConfig,
                out_path: str | Path) -> dict:
    """Inherent risk from CVE matching, then damped propagation."""
    kg = load_ssckg(kg_path)
    provider = build_provider(cfg)
    cves = load_cves(cfg.cves_path, provider) if cfg.cves_path else []
    inherent = {e.id: inherent_risk(e, cves) for e in kg.entities}
    result = propagate(kg, inherent, PropagationConfig(
        beta=cfg.beta, tolerance=cfg.tolerance,
        max_iterations=cfg.max_iterations))
    doc = _risk_document(kg, inherent, result, cfg.beta)
    write_atomic(out_path, dumps_json(doc))
    return doc


def _match_document(matches: Sequence[MatchResult], tau: float) -> dict:
    return {
        "tau": tau,
        "matches": [
            {
                "fingerprint": m.fingerprint,
                "similarity": m.similarity,
                "alert": m.alert,
                "pairs": [list(p) for p in m.pairs],
            }
            for m in matches
        ],
        "alerts": sorted(m.fingerprint for m in matches if m.alert),
    }


def stage_match(embeddings_path: str | Path, repo_dir: str | Path, tau: float,
                out_path: str | Path) -> dict:
    """Score the fingerprint repository against target embeddings."""
    target = load_embeddings(embeddings_path)
    repo = load_repository(repo_dir)
    matches = match_and_alert(target, repo, tau)
    doc = _match_document(matches, tau)
    write_atomic(out_path, dumps_json(doc))
    return doc


def threshold_document(report: ThresholdReport) -> dict:
    return {
        "tau": report.tau,
        "j_statistic": report.j_statistic,
        "tpr": report.tpr,
        "fpr": report.fpr,
        "fpr_cap": report.fpr_cap,
        "fpr_cap_satisfied": report.fpr_cap_satisfied,
        "grid": [
            {"tau": p.tau, "tpr": p.tpr, "fpr": p.fpr, "j": p.j}
            for p in report.grid
        ],
    }


def stage_threshold(scores_path: str | Path, cfg: PipelineConfig,
                    out_path: str | Path) -> dict:
    doc = json.loads(Path(scores_path).read_text(encoding="utf-8"))
    scores = [(float(row["score"]), str(row["label"])) for row in doc]
    report = select_threshold(scores, grid_lo=cfg.grid_lo, grid_hi=cfg.grid_hi,
                              grid_step=cfg.grid_step, fpr_cap=cfg.fpr_cap)
    out = threshold_document(report)
    write_atomic(out_path, dumps_json(out))
    return out


def stage_export_dot(kg_path: str | Path, risk_path: str | Path | None,
                     cfg: PipelineConfig, out_path: str | Path) -> str:
    kg = load_ssckg(kg_path)
    risk_scores = None
    if risk_path:
        doc = json.loads(Path(risk_path).read_text(encoding="utf-8"))
        risk_scores = {int(row["entity_id"]): float(row["score"])
                       for row in doc["ranking"]}
    text = to_dot(kg, risk=risk_scores, bands=cfg.risk_bands)
    write_atomic(out_path, text)
    return text


# --- end-to-end runner ------------------------------------------------------------

@dataclass(frozen=True)
class RiskReport:
    binary_id: str
    document: dict
    alerts: tuple[str, ...]

    @property
    def has_alerts(self) -> bool:
        return bool(self.alerts)


def run_one(cfg: PipelineConfig, cpg_path: str | Path, outdir: str | Path) -> RiskReport:
    """Run every stage for one binary, leaving all intermediates behind."""
    outdir = Path(outdir)
    g = load_cpg(cpg_path)
    bid = g.binary_id or Path(cpg_path).stem
    paths = {
        "cpg": outdir / f"{bid}.cpg.json",
        "corpus": outdir / f"{bid}.corpus.jsonl",
        "kg": outdir / f"{bid}.kg.json",
        "embeddings": outdir / f"{bid}.embeddings.json",
        "risk": outdir / f"{bid}.risk.json",
        "alerts": outdir / f"{bid}.alerts.json",
        "report": outdir / f"{bid}.report.json",
        "dot": outdir / f"{bid}.dot",
    }
    stage_ingest(cpg_path, paths["cpg"])
    corpus = stage_lift(paths["cpg"], cfg, paths["corpus"])
    kg = stage_build_kg(paths["cpg"], paths["corpus"], cfg, paths["kg"])
    stage_forward(paths["kg"], cfg, paths["embeddings"])
    risk_doc = stage_score(paths["kg"], cfg, paths["risk"])
    match_doc = None
    if cfg.fingerprints_dir:
        match_doc = stage_match(paths["embeddings"], cfg.fingerprints_dir,
                                cfg.tau, paths["alerts"])
    stage_export_dot(paths["kg"], paths["risk"], cfg, paths["dot"])

    g_norm = load_cpg(paths["cpg"])
    report = {
        "binary_id": bid,
        "version": __version__,
        "config": cfg.to_dict(),
        "corpus": {
            "accepted": len(corpus.accepted),
            "rejected": corpus.rejected_count,
            "failed": corpus.failed_count,
            "total": corpus.total,
            "rejection_rate": corpus.rejection_rate,
        },
        "stats": construction_stats(g_norm, kg),
        "risk": risk_doc,
        "fingerprints": match_doc,
    }
    write_atomic(paths["report"], dumps_json(report))
    alerts = tuple(match_doc["alerts"]) if match_doc else ()
    return RiskReport(binary_id=bid, document=report, alerts=alerts)


def run_pipeline(cfg: PipelineConfig, cpg_paths: Sequence[str | Path],
                 outdir: str | Path, workers: int = 1) -> list[RiskReport]:
    """Process binaries through the full chain, optionally in parallel.

    Results come back in input order regardless of worker count, and
    per-binary outputs are independent files, so parallelism never
    changes any produced byte.
    """
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    if workers == 1 or len(cpg_paths) <= 1:
        return [run_one(cfg, p, outdir) for p in cpg_paths]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: run_one(cfg, p, outdir), cpg_paths))
