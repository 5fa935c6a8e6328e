"""Pipeline orchestration: one INI config, staged subcommands, cached outputs.

Every stage output is content-addressed by a digest of the config keys that
influence it, so rerunning with an unchanged config performs no work and
changing any relevant key writes to a fresh location. All randomness flows
from explicit seeds in the config; artifact files contain no timestamps or
absolute paths, which keeps reruns byte-identical.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 backend or
transport error.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass

from .discriminator import BackendError, RemoteConfig, make_backend
from .embeddings import EmbeddingTable, TrainConfig, TrainingDiverged, train
from .evaluation import EvalOptions, evaluate
from .instructions import BuildOptions, build_eval_set, build_finetune_set
from .kg import DataError, KnowledgeGraph, load_kg
from .ranking import ConfidenceParams

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Invalid configuration or command usage."""


_BOOLEAN = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def _to_bool(raw: str) -> bool:
    try:
        return _BOOLEAN[raw.strip().lower()]
    except KeyError:
        raise ConfigError(f"expected a boolean, got {raw!r}") from None


# section -> key -> (caster, default); None default means the key is required
_SCHEMA: dict[str, dict[str, tuple]] = {
    "pipeline": {
        "dataset_dir": (str, None),
        "workdir": (str, None),
        "threads": (int, 1),
    },
    "embedder": {
        "dim": (int, 100),
        "learning_rate": (float, 0.01),
        "margin": (float, 1.0),
        "epochs": (int, 1000),
        "batch_size": (int, 1024),
        "negatives": (int, 1),
        "norm": (str, "L2"),
        "seed": (int, 0),
    },
    "ranker": {
        "m": (int, 20),
        "alpha": (float, 1.0),
        "beta": (float, 0.05),
        "local_norm": (str, "minmax"),
    },
    "instruct": {
        "gamma": (int, 10),
        "max_description_chars": (int, 512),
        "drop_description": (_to_bool, False),
        "drop_neighbors": (_to_bool, False),
        "rc_sampling": (_to_bool, True),
        "shuffle_candidates": (_to_bool, False),
        "shuffle_seed": (int, 0),
        "neighbor_seed": (int, 0),
        "split_seed": (int, 0),
    },
    "backend": {
        "kind": (str, "oracle"),
        "endpoint": (str, ""),
        "model": (str, ""),
        "timeout": (float, 30.0),
        "retries": (int, 2),
        "backoff": (float, 0.5),
        "auth_token_env": (str, "KGRERANK_API_TOKEN"),
        "in_flight": (int, 4),
        "scripted_file": (str, ""),
    },
    "eval": {
        "limit_triples": (int, 0),
        "audit": (_to_bool, False),
    },
}

_BACKEND_KINDS = ("oracle", "first_candidate", "scripted", "remote")


@dataclass
class PipelineConfig:
    dataset_dir: str
    workdir: str
    threads: int
    values: dict  # typed {section: {key: value}}, the digest source
    train: TrainConfig
    params: ConfidenceParams
    build: BuildOptions
    split_seed: int
    backend_kind: str
    scripted_file: str
    remote: RemoteConfig
    limit_triples: int
    audit: bool


def load_config(path: str, overrides: list[str] | None = None) -> PipelineConfig:
    """Parse and validate the INI config; unknown sections or keys are errors."""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc

    raw: dict[str, dict[str, str]] = {s: {} for s in _SCHEMA}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            raw[section][key] = value

    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        raw[section][key] = value

    values: dict[str, dict] = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, (cast, default) in keys.items():
            if key in raw[section]:
                try:
                    values[section][key] = cast(raw[section][key])
                except ConfigError:
                    raise
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {section}.{key}: {exc}") from exc
            elif default is None:
                raise ConfigError(f"missing required config key {section}.{key}")
            else:
                values[section][key] = default

    emb = values["embedder"]
    rk = values["ranker"]
    ins = values["instruct"]
    be = values["backend"]
    ev = values["eval"]
    if rk["local_norm"] not in ("minmax", "raw"):
        raise ConfigError("ranker.local_norm must be 'minmax' or 'raw'")
    if be["kind"] not in _BACKEND_KINDS:
        raise ConfigError(f"backend.kind must be one of {_BACKEND_KINDS}")
    try:
        train_config = TrainConfig(
            dim=emb["dim"],
            learning_rate=emb["learning_rate"],
            margin=emb["margin"],
            epochs=emb["epochs"],
            negatives_per_positive=emb["negatives"],
            batch_size=emb["batch_size"],
            norm=emb["norm"],
            seed=emb["seed"],
        )
        params = ConfidenceParams(
            m=rk["m"],
            alpha=rk["alpha"],
            beta=rk["beta"],
            normalize_local=rk["local_norm"] == "minmax",
        )
        build = BuildOptions(
            gamma=ins["gamma"],
            max_description_chars=ins["max_description_chars"],
            drop_description=ins["drop_description"],
            drop_neighbors=ins["drop_neighbors"],
            rc_sampling=ins["rc_sampling"],
            shuffle_candidates=ins["shuffle_candidates"],
            shuffle_seed=ins["shuffle_seed"],
            neighbor_seed=ins["neighbor_seed"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return PipelineConfig(
        dataset_dir=values["pipeline"]["dataset_dir"],
        workdir=values["pipeline"]["workdir"],
        threads=values["pipeline"]["threads"],
        values=values,
        train=train_config,
        params=params,
        build=build,
        split_seed=ins["split_seed"],
        backend_kind=be["kind"],
        scripted_file=be["scripted_file"],
        remote=RemoteConfig(
            endpoint=be["endpoint"],
            model=be["model"],
            timeout=be["timeout"],
            retries=be["retries"],
            backoff=be["backoff"],
            auth_token_env=be["auth_token_env"],
            in_flight=be["in_flight"],
        ),
        limit_triples=ev["limit_triples"],
        audit=ev["audit"],
    )


def stage_digest(cfg: PipelineConfig, *sections: str) -> str:
    payload = {"dataset_dir": cfg.dataset_dir}
    for section in sections:
        payload[section] = cfg.values[section]
    blob = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_graph(cfg: PipelineConfig) -> KnowledgeGraph:
    if not os.path.isdir(cfg.dataset_dir):
        raise DataError(f"dataset directory not found: {cfg.dataset_dir}")
    return load_kg(cfg.dataset_dir)


def ensure_embeddings(cfg: PipelineConfig, kg: KnowledgeGraph | None = None) -> str:
    """Train the embedding checkpoint if its content address is absent."""
    os.makedirs(cfg.workdir, exist_ok=True)
    digest = stage_digest(cfg, "embedder")
    ckpt = os.path.join(cfg.workdir, f"embeddings-{digest}.ckpt")
    manifest = os.path.join(cfg.workdir, f"embeddings-{digest}.json")
    if os.path.isfile(ckpt) and os.path.isfile(manifest):
        logger.info("embeddings up to date: %s", ckpt)
        return ckpt
    kg = kg or _load_graph(cfg)
    logger.info(
        "training embeddings: %d entities, %d relations, %d train triples",
        kg.num_entities, kg.num_relations, len(kg.train),
    )
    table = train(kg, cfg.train)
    table.save(ckpt)
    _write_json(
        manifest,
        {
            "stage": "train-embeddings",
            "config_digest": digest,
            "seed": cfg.train.seed,
            "entities": kg.num_entities,
            "relations": kg.num_relations,
            "dim": cfg.train.dim,
            "norm": cfg.train.norm,
        },
    )
    return ckpt


def cmd_train(cfg: PipelineConfig) -> int:
    ckpt = ensure_embeddings(cfg)
    print(f"checkpoint: {ckpt}")
    return 0


def _check_m(cfg: PipelineConfig, kg: KnowledgeGraph) -> None:
    if cfg.params.m > kg.num_entities:
        raise ConfigError(
            f"ranker.m = {cfg.params.m} exceeds the {kg.num_entities} entities in the graph"
        )


def cmd_build(cfg: PipelineConfig, which: str) -> int:
    digest = stage_digest(cfg, "embedder", "ranker", "instruct")
    outdir = os.path.join(cfg.workdir, f"{which}-{digest}")
    summary_path = os.path.join(outdir, "summary.json")
    if os.path.isfile(summary_path):
        logger.info("%s set up to date: %s", which, outdir)
        print(f"output: {outdir}")
        return 0
    kg = _load_graph(cfg)
    _check_m(cfg, kg)
    table = EmbeddingTable.load(ensure_embeddings(cfg, kg))
    os.makedirs(outdir, exist_ok=True)
    if which == "finetune":
        summary = build_finetune_set(
            kg,
            table,
            cfg.params,
            cfg.build,
            cfg.split_seed,
            instructions_path=os.path.join(outdir, "instructions.jsonl"),
            sidecar_path=os.path.join(outdir, "instructions.sidecar"),
            holdout_instructions_path=os.path.join(outdir, "holdout.jsonl"),
            holdout_sidecar_path=os.path.join(outdir, "holdout.sidecar"),
        )
    else:
        summary = build_eval_set(
            kg,
            table,
            cfg.params,
            cfg.build,
            instructions_path=os.path.join(outdir, "instructions.jsonl"),
            sidecar_path=os.path.join(outdir, "instructions.sidecar"),
        )
    _write_json(summary_path, summary)
    logger.info("%s summary: %s", which, summary)
    print(f"output: {outdir}")
    return 0


def _make_backend(cfg: PipelineConfig):
    return make_backend(
        cfg.backend_kind,
        scripted_file=cfg.scripted_file or None,
        remote=cfg.remote,
    )


def cmd_evaluate(cfg: PipelineConfig) -> int:
    digest = stage_digest(cfg, "embedder", "ranker", "instruct", "backend", "eval")
    outdir = os.path.join(cfg.workdir, f"report-{digest}")
    report_json = os.path.join(outdir, "report.json")
    report_txt = os.path.join(outdir, "report.txt")
    if os.path.isfile(report_json) and os.path.isfile(report_txt):
        logger.info("report up to date: %s", outdir)
        with open(report_txt, encoding="utf-8") as f:
            print(f.read(), end="")
        return 0
    backend = _make_backend(cfg)
    kg = _load_graph(cfg)
    _check_m(cfg, kg)
    table = EmbeddingTable.load(ensure_embeddings(cfg, kg))
    os.makedirs(outdir, exist_ok=True)
    options = EvalOptions(
        limit_triples=cfg.limit_triples,
        audit_path=os.path.join(outdir, "audit.jsonl") if cfg.audit else None,
        threads=cfg.threads,
    )
    report = evaluate(kg, table, backend, cfg.params, options, cfg.build)
    _write_json(report_json, report.as_dict())
    table_text = report.format_table() + "\n"
    with open(report_txt, "w", encoding="utf-8") as f:
        f.write(table_text)
    print(table_text, end="")
    return 0


def cmd_inspect(path: str, sample_id: str | None, index: int | None) -> int:
    from .instructions import read_instruction_records

    if not os.path.isfile(path):
        raise DataError(f"instruction file not found: {path}")
    records = read_instruction_records(path)
    if sample_id is not None:
        matches = [r for r in records if r["id"] == sample_id]
        if not matches:
            raise DataError(f"no sample with id {sample_id!r} in {path}")
        record = matches[0]
    else:
        i = index or 0
        if not 0 <= i < len(records):
            raise DataError(f"index {i} out of range for {len(records)} samples")
        record = records[i]
    print(f"id: {record['id']}")
    print(f"direction: {record['direction']}")
    print(f"gold: {record['gold_name']} (id {record['gold_id']}, rank {record['gold_rank']})")
    print(f"candidates: {record['candidate_ids']}")
    print(f"knowledge refs: {record['knowledge_ref_offsets']}")
    print("prompt:")
    print(record["prompt"])
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems map to exit code 1, not argparse's 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="kgrerank", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_stage(name: str, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config key (repeatable)",
        )
        return p

    add_stage("train-embeddings", "train the embedding model and write a checkpoint")
    add_stage("build-finetune", "build truncated instruction data from the validation split")
    add_stage("build-eval", "build untruncated instruction data from the test split")
    add_stage("evaluate", "run the rerank evaluation with the configured backend")

    p = sub.add_parser("inspect", help="pretty-print one instruction sample")
    p.add_argument("--file", required=True, help="instruction JSONL file")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--id", help="sample id to show")
    group.add_argument("--index", type=int, help="0-based sample index to show")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(levelname)s %(name)s: %(message)s",
        )
        if args.command == "inspect":
            return cmd_inspect(args.file, args.id, args.index)
        cfg = load_config(args.config, args.overrides)
        if args.command == "train-embeddings":
            return cmd_train(cfg)
        if args.command == "build-finetune":
            return cmd_build(cfg, "finetune")
        if args.command == "build-eval":
            return cmd_build(cfg, "eval")
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, TrainingDiverged) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
