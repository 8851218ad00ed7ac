"""Command-line entry point.

Subcommands wire the pipeline end to end:

    problemchild synth spec.json -o corpus/           generate labeled telemetry
    problemchild train corpus/events.jsonl -o m.pcmodel.json
    problemchild calibrate corpus/events.jsonl        LOO threshold sweep
    problemchild hunt corpus/events.jsonl -m m.pcmodel.json
    problemchild prevalence process svchost.exe --events corpus/events.jsonl

Exit codes: 0 clean, 2 findings (hunt flagged at least one community),
1 error. A JSON config file (PROBLEMCHILD_CONFIG env var) may set any
flag; explicit flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import List, Optional

from . import __version__
from .config import ENV_CONFIG, PipelineConfig, build_config, load_config_file
from .detector import (CalibrationResult, ScoredCommunity, calibrate_threshold,
                       run_hunt)
from .errors import ProblemChildError, TrainingError
from .gbt import (load_model_file, model_digest, save_model_file,
                  train_from_instances)
from .ingest import (SYSMON_SCHEMA_MAP, EventType, load_events,
                     pair_instances)
from .prevalence import PrevalenceTable, build_prevalence, query_pair, query_process
from .synth import ScenarioSpec, generate, write_corpus

EXIT_CLEAN = 0
EXIT_ERROR = 1
EXIT_FINDINGS = 2

REPORT_VERSION = 1


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; 2 means findings here, so remap."""

    def error(self, message):
        raise ProblemChildError(message)


@dataclass
class HuntReport:
    run: dict
    totals: dict
    communities: List[ScoredCommunity]
    generated_at: str

    def to_json_dict(self) -> dict:
        return {
            "report_version": REPORT_VERSION,
            "generated_at": self.generated_at,
            "run": self.run,
            "totals": self.totals,
            "communities": [c.to_json_dict() for c in self.communities],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2) + "\n"

    @classmethod
    def from_json_dict(cls, d: dict) -> "HuntReport":
        return cls(
            run=dict(d["run"]),
            totals=dict(d["totals"]),
            communities=[ScoredCommunity.from_json_dict(c)
                         for c in d["communities"]],
            generated_at=d["generated_at"],
        )

    def to_text(self) -> str:
        lines = [
            "hunt report",
            f"  corpus digest:  {self.run['corpus_digest'][:16]}",
            f"  model digest:   {self.run['model_digest'][:16]}",
            f"  events in:      {self.totals['events_in']} "
            f"({self.totals['skipped_lines']} skipped)",
            f"  instances:      {self.totals['instances']}",
            f"  graph:          {self.totals['graph_nodes']} nodes / "
            f"{self.totals['graph_edges']} edges",
            f"  communities:    {self.totals['communities_found']} found, "
            f"{self.totals['communities_flagged']} flagged at threshold "
            f"{self.run['threshold']}",
            "",
        ]
        for rank, com in enumerate(self.communities, start=1):
            lines.append(f"#{rank}  community {com.community_id}  "
                         f"score {com.score:.4f}  ({len(com.members)} processes)")
            lines.append("  chain:")
            for m in com.members:
                lines.append(f"    ({m.process_name!r}, {m.command_line!r})"
                             f"  {m.anomalous_score:.4f}")
            lines.append("")
        return "\n".join(lines)


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _resolve_schema(arg: Optional[str]) -> Optional[dict]:
    if arg is None or arg == "canonical":
        return None
    if arg == "sysmon":
        return SYSMON_SCHEMA_MAP
    with open(arg, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict) or not all(
            isinstance(v, str) for v in doc.values()):
        raise ProblemChildError(f"schema map {arg} must be a flat JSON object "
                                "of source-field -> canonical-field")
    return doc


_HP_FLAG_TO_KEY = {
    "rounds": "n_rounds",
    "max_depth": "max_depth",
    "learning_rate": "learning_rate",
    "min_leaf": "min_leaf",
    "subsample": "subsample",
    "reg_lambda": "reg_lambda",
}


def _add_hp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rounds", type=int, help="boosting rounds (default 100)")
    p.add_argument("--max-depth", type=int, help="tree depth limit (default 3)")
    p.add_argument("--learning-rate", type=float, help="shrinkage (default 0.1)")
    p.add_argument("--min-leaf", type=int, help="min samples per leaf (default 5)")
    p.add_argument("--subsample", type=float, help="row subsample per round")
    p.add_argument("--reg-lambda", type=float, help="L2 leaf regularization")
    p.add_argument("--k-tfidf", type=int, help="TF-IDF vocabulary size (default 200)")
    p.add_argument("--ngram-lo", type=int, help="smallest n-gram (default 1)")
    p.add_argument("--ngram-hi", type=int, help="largest n-gram (default 2)")
    p.add_argument("--delta-t-cap", type=float,
                   help="lifetime cap in seconds (default 86400)")


def _config_from_args(args) -> PipelineConfig:
    overrides = {}
    for flag, key in _HP_FLAG_TO_KEY.items():
        overrides[key] = getattr(args, flag, None)
    for key in ("k_tfidf", "ngram_lo", "ngram_hi", "delta_t_cap", "seed",
                "threshold", "target_fpr", "grid_step", "resolution"):
        overrides[key] = getattr(args, key, None)
    return build_config(overrides)


def _load_corpus(path, schema_arg, cap: float):
    parsed = load_events(path, _resolve_schema(schema_arg))
    paired = pair_instances(parsed.events, cap)
    return parsed, paired


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    parsed, paired = _load_corpus(args.events, args.schema, cfg.delta_t_cap)
    for event in parsed.events:
        if event.event_type is EventType.CREATE and event.label is None:
            raise TrainingError(
                f"unlabeled event at line {event.source_line} "
                f"({event.event_id}); training needs labeled data")
    model = train_from_instances(
        paired.instances, params=cfg.gbt, seed=cfg.seed, k_tfidf=cfg.k_tfidf,
        ngram_range=cfg.ngram_range, delta_t_cap=cfg.delta_t_cap)
    save_model_file(model, args.out)
    print(f"trained on {len(parsed.events)} events "
          f"({model.training_meta['n_pos']} malicious edges); "
          f"model {model_digest(model)[:16]} -> {args.out}")
    return EXIT_CLEAN


def cmd_hunt(args) -> int:
    cfg = _config_from_args(args)
    model = load_model_file(args.model)
    parsed, paired = _load_corpus(args.events, args.schema, cfg.delta_t_cap)

    table = None
    prevalence_source = args.prevalence or "in"
    if prevalence_source != "in":
        table = PrevalenceTable.load(prevalence_source)

    graph, partition, table, flagged = run_hunt(
        paired.instances, model, threshold=cfg.threshold,
        resolution=cfg.resolution, seed=cfg.seed, table=table)

    report = HuntReport(
        run={
            "config_digest": cfg.digest(),
            "model_digest": model_digest(model),
            "corpus_digest": _file_digest(args.events),
            "seed": cfg.seed,
            "threshold": cfg.threshold,
            "prevalence_source": prevalence_source,
        },
        totals={
            "events_in": len(parsed.events) + len(parsed.skipped),
            "skipped_lines": len(parsed.skipped),
            "instances": len(paired.instances),
            "graph_nodes": len(graph.nodes),
            "graph_edges": len(graph.edges),
            "communities_found": len(set(partition.assignment.values())),
            "communities_flagged": len(flagged),
        },
        communities=flagged,
        generated_at=datetime.now(timezone.utc).isoformat(
            timespec="milliseconds").replace("+00:00", "Z"),
    )

    if args.dump_graph:
        with open(args.dump_graph, "w", encoding="utf-8") as fh:
            json.dump(graph.to_json_dict(), fh)

    text = report.to_text() if args.format == "text" else report.to_json()
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_FINDINGS if flagged else EXIT_CLEAN


def cmd_calibrate(args) -> int:
    cfg = _config_from_args(args)
    parsed, _ = _load_corpus(args.events, args.schema, cfg.delta_t_cap)
    result: CalibrationResult = calibrate_threshold(
        parsed.events, params=cfg.gbt, target_fpr=cfg.target_fpr,
        grid_step=cfg.grid_step, seed=cfg.seed, resolution=cfg.resolution,
        k_tfidf=cfg.k_tfidf, ngram_range=cfg.ngram_range,
        delta_t_cap=cfg.delta_t_cap)
    csv_text = result.to_csv()
    if args.roc_out:
        with open(args.roc_out, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
    sys.stdout.write(csv_text)
    print(f"chosen_threshold={result.chosen_threshold:.2f}")
    return EXIT_CLEAN


def _prevalence_table(args) -> PrevalenceTable:
    if args.table:
        return PrevalenceTable.load(args.table)
    if not args.events:
        raise ProblemChildError("need --events or --table")
    cap = PipelineConfig().delta_t_cap
    _, paired = _load_corpus(args.events, args.schema, cap)
    return build_prevalence(paired.instances)


def cmd_prevalence(args) -> int:
    table = _prevalence_table(args)
    if args.save_table:
        table.save(args.save_table)
    if args.query == "process":
        stats = query_process(table, args.name)
        out = {"process": args.name, "count": stats.count,
               "percentile": stats.percentile, "fraction": stats.fraction}
    elif args.query == "pair":
        stats = query_pair(table, args.parent, args.child)
        out = {"parent": args.parent, "child": args.child,
               "cond_prob": stats.cond_prob, "percentile": stats.percentile,
               "fraction": stats.fraction}
    else:  # build: just persist the table
        out = {"processes": len(table.process_counts),
               "pairs": len(table.pair_counts)}
    print(json.dumps(out, indent=2))
    return EXIT_CLEAN


def cmd_synth(args) -> int:
    spec = ScenarioSpec.load(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    events, manifest = generate(spec)
    events_path, manifest_path = write_corpus(events, manifest, args.out)
    n_bad = sum(len(c["event_ids"]) for c in manifest["chains"].values())
    print(f"wrote {len(events)} events ({n_bad} malicious) -> {events_path}")
    print(f"manifest -> {manifest_path}")
    return EXIT_CLEAN


def make_parser() -> _Parser:
    parser = _Parser(prog="problemchild",
                     description="Rank anomalous parent-child process chains "
                                 "in process telemetry.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an edge-weight model",
                       description="Train the edge classifier on labeled "
                                   "JSONL telemetry.")
    p.add_argument("events", help="labeled events JSONL")
    p.add_argument("-o", "--out", required=True, help="output *.pcmodel.json")
    p.add_argument("--schema", help="canonical (default), sysmon, or a "
                                    "schema-map JSON path")
    p.add_argument("--seed", type=int)
    _add_hp_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("hunt", help="rank suspicious communities",
                       description="Run the full hunt pipeline over a corpus.")
    p.add_argument("events", help="events JSONL to hunt")
    p.add_argument("-m", "--model", required=True, help="*.pcmodel.json")
    p.add_argument("--threshold", type=float,
                   help="community score threshold (default 0.38)")
    p.add_argument("--prevalence", metavar="in|PATH",
                   help="'in' (default) builds prevalence from the hunted "
                        "corpus; a path loads a saved baseline")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("-o", "--out", help="write the report here instead of stdout")
    p.add_argument("--dump-graph", help="write the scored graph JSON here")
    p.add_argument("--schema")
    p.add_argument("--seed", type=int)
    p.add_argument("--resolution", type=float)
    p.set_defaults(func=cmd_hunt)

    p = sub.add_parser("calibrate", help="leave-one-group-out threshold sweep",
                       description="Sweep thresholds with LOO retraining; "
                                   "prints the ROC CSV and chosen threshold.")
    p.add_argument("events", help="labeled events JSONL")
    p.add_argument("--target-fpr", type=float, dest="target_fpr")
    p.add_argument("--grid-step", type=float, dest="grid_step")
    p.add_argument("--roc-out", help="also write the ROC CSV here")
    p.add_argument("--schema")
    p.add_argument("--seed", type=int)
    p.add_argument("--resolution", type=float)
    _add_hp_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("prevalence", help="query local prevalence",
                       description="Query process / pair prevalence from a "
                                   "corpus or a saved table.")
    psub = p.add_subparsers(dest="query", required=True)

    def _common(q):
        q.add_argument("--events", help="events JSONL to build the table from")
        q.add_argument("--table", help="saved *.prev.json table")
        q.add_argument("--save-table", help="persist the built table here")
        q.add_argument("--schema")
        q.set_defaults(func=cmd_prevalence)

    q = psub.add_parser("process", help="one process name")
    q.add_argument("name")
    _common(q)
    q = psub.add_parser("pair", help="a parent/child name pair")
    q.add_argument("parent")
    q.add_argument("child")
    _common(q)
    q = psub.add_parser("build", help="build and save a table")
    _common(q)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus",
                       description="Generate benign background plus injected "
                                   "attack chains from a scenario spec.")
    p.add_argument("spec", help="scenario spec JSON")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # --version / --help
        return int(exc.code or 0)
    except KeyboardInterrupt:
        return EXIT_ERROR
    except (ProblemChildError, OSError, ValueError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
