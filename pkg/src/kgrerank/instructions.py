"""Selection-prompt construction and instruction-dataset serialization.

A prompt concatenates four blocks: the query sentence (with one [QUERY]
placeholder after the missing slot), an optional entity description, an
optional block of neighbor facts, and the ordered candidate list where
every name is followed by an [ENTITY] placeholder. Neighbor facts are
chosen by relation co-occurrence with the query relation (or uniformly at
random when that is disabled), capped at ``gamma`` facts, and never include
the query's own gold fact.

The template below is versioned: any wording change must bump
``TEMPLATE_VERSION`` because golden tests and downstream parsers rely on
the exact byte layout.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .embeddings import TAIL, EmbeddingTable, VectorFileWriter
from .kg import KnowledgeGraph, Triple, neighbors
from .ranking import (
    ConfidenceParams,
    Query,
    RankedQuery,
    queries_for_triple,
    rank_query,
    sample_confidence,
)

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = 1
QUERY_PLACEHOLDER = "[QUERY]"
ENTITY_PLACEHOLDER = "[ENTITY]"
QUERY_TEXT_TAIL = "Query: the incomplete fact ({head}, {relation}, ?[QUERY]) is missing its tail entity."
QUERY_TEXT_HEAD = "Query: the incomplete fact (?[QUERY], {relation}, {tail}) is missing its head entity."
DESCRIPTION_PREFIX = "Description: "
NEIGHBORS_HEADER = "Known facts:"
CANDIDATES_HEADER = "Candidates:"
DIRECTIVE = "Select the answer to the query from the candidates above and reply with exactly one entity name."


@dataclass
class BuildOptions:
    gamma: int = 10
    max_description_chars: int = 512
    drop_description: bool = False
    drop_neighbors: bool = False
    rc_sampling: bool = True
    shuffle_candidates: bool = False
    shuffle_seed: int = 0
    neighbor_seed: int = 0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.max_description_chars < 0:
            raise ValueError("max_description_chars must be >= 0")


@dataclass
class InstructionSample:
    sample_id: str
    direction: str
    query_text: str
    description_text: str
    neighbor_texts: list[str]
    candidate_ids: list[int]
    candidate_names: list[str]
    gold_id: int
    gold_name: str
    gold_rank: int | None
    knowledge_refs: list[int] = field(default_factory=list)
    source_query: Query | None = None


def rc_sample_neighbors(
    kg: KnowledgeGraph, cooc, q: Query, gamma: int
) -> list[Triple]:
    """Neighbor facts of the known entity ranked by relation co-occurrence.

    Facts are sorted by descending co-occurrence of their relation with the
    query relation, ties broken by ascending relation id and then file
    order, truncated to at most ``gamma`` facts. The query's own gold fact
    is excluded.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    pool = _neighbor_pool(kg, q)
    pool.sort(key=lambda item: (-cooc.count(item[1].relation, q.relation), item[1].relation, item[0]))
    return [fact for _, fact in pool[:gamma]]


def _neighbor_pool(kg: KnowledgeGraph, q: Query) -> list[tuple[int, Triple]]:
    gold_fact = q.completed(q.gold) if q.gold is not None else None
    return [
        (pos, fact)
        for pos, fact in enumerate(neighbors(kg, q.known))
        if fact != gold_fact
    ]


def _uniform_sample_neighbors(
    kg: KnowledgeGraph, q: Query, gamma: int, rng: np.random.Generator
) -> list[Triple]:
    pool = _neighbor_pool(kg, q)
    k = min(gamma, len(pool))
    if k == 0:
        return []
    picks = rng.choice(len(pool), size=k, replace=False)
    return [pool[i][1] for i in picks]


def render_fact(kg: KnowledgeGraph, fact: Triple) -> str:
    return "({}, {}, {})".format(
        kg.entity_names[fact.head],
        kg.relation_names[fact.relation],
        kg.entity_names[fact.tail],
    )


def query_text_for(kg: KnowledgeGraph, q: Query) -> str:
    if q.direction == TAIL:
        return QUERY_TEXT_TAIL.format(
            head=kg.entity_names[q.known], relation=kg.relation_names[q.relation]
        )
    return QUERY_TEXT_HEAD.format(
        relation=kg.relation_names[q.relation], tail=kg.entity_names[q.known]
    )


def render_prompt(sample: InstructionSample) -> str:
    blocks = [sample.query_text]
    if sample.description_text:
        blocks.append(DESCRIPTION_PREFIX + sample.description_text)
    if sample.neighbor_texts:
        blocks.append(NEIGHBORS_HEADER + "\n" + "\n".join(sample.neighbor_texts))
    blocks.append(
        CANDIDATES_HEADER
        + "\n"
        + "\n".join(name + ENTITY_PLACEHOLDER for name in sample.candidate_names)
    )
    blocks.append(DIRECTIVE)
    return "\n\n".join(blocks)


def parse_candidate_names(prompt: str) -> list[str]:
    """Recover the ordered candidate names from a rendered prompt."""
    for block in prompt.split("\n\n"):
        lines = block.split("\n")
        if lines[0] != CANDIDATES_HEADER:
            continue
        names = []
        for line in lines[1:]:
            if not line.endswith(ENTITY_PLACEHOLDER):
                raise ValueError(f"malformed candidate line: {line!r}")
            names.append(line[: -len(ENTITY_PLACEHOLDER)])
        return names
    raise ValueError("prompt has no candidate block")


def build_sample(
    kg: KnowledgeGraph,
    table: EmbeddingTable,
    rq: RankedQuery,
    options: BuildOptions,
    sample_id: str,
    query_index: int,
) -> tuple[InstructionSample, np.ndarray]:
    """Assemble one sample plus its knowledge vectors (query row first).

    ``query_index`` seeds the per-query randomness (candidate shuffling and
    uniform neighbor sampling) so output is independent of processing order.
    """
    q = rq.query
    if q.gold is None:
        raise ValueError("instruction samples require a gold answer")

    description = ""
    if not options.drop_description:
        description = kg.entity_descriptions[q.known][: options.max_description_chars]

    neighbor_facts: list[Triple] = []
    if not options.drop_neighbors and options.gamma > 0:
        if options.rc_sampling:
            neighbor_facts = rc_sample_neighbors(kg, kg.cooc, q, options.gamma)
        else:
            rng = np.random.default_rng((options.neighbor_seed, query_index))
            neighbor_facts = _uniform_sample_neighbors(kg, q, options.gamma, rng)

    candidate_ids = list(rq.topm_ids)
    if options.shuffle_candidates:
        rng = np.random.default_rng((options.shuffle_seed, query_index))
        perm = rng.permutation(len(candidate_ids))
        candidate_ids = [candidate_ids[i] for i in perm]

    vectors = np.empty((len(candidate_ids) + 1, table.dim), dtype=np.float64)
    vectors[0] = table.query_vector(q.known, q.relation, q.direction)
    for row, ent in enumerate(candidate_ids, start=1):
        vectors[row] = table.entity_vector(ent)

    sample = InstructionSample(
        sample_id=sample_id,
        direction=q.direction,
        query_text=query_text_for(kg, q),
        description_text=description,
        neighbor_texts=[render_fact(kg, f) for f in neighbor_facts],
        candidate_ids=candidate_ids,
        candidate_names=[kg.entity_names[e] for e in candidate_ids],
        gold_id=q.gold,
        gold_name=kg.entity_names[q.gold],
        gold_rank=rq.gold_rank,
        knowledge_refs=list(range(len(candidate_ids) + 1)),
        source_query=q,
    )
    return sample, vectors


def iter_triple_samples(
    kg: KnowledgeGraph,
    table: EmbeddingTable,
    indexed_triples: Iterable[tuple[int, Triple]],
    params: ConfidenceParams,
    options: BuildOptions,
    id_prefix: str,
) -> Iterator[tuple[RankedQuery, InstructionSample, np.ndarray]]:
    """Rank and assemble both directions of each (original_index, triple)."""
    for i, triple in indexed_triples:
        for offset, q in enumerate(queries_for_triple(triple)):
            rq = rank_query(table, kg, q, params.m)
            sample_id = f"{id_prefix}-{i}-{q.direction}"
            sample, vectors = build_sample(
                kg, table, rq, options, sample_id, query_index=2 * i + offset
            )
            yield rq, sample, vectors


class InstructionWriter:
    """Writes the JSONL instruction file and its vector sidecar in lockstep."""

    def __init__(self, instructions_path: str, sidecar_path: str, dim: int, norm: str):
        self._f = open(instructions_path, "w", encoding="utf-8")
        self._sidecar = VectorFileWriter(sidecar_path, dim, norm)
        self.count = 0
        self.prompt_chars = 0

    def write(self, sample: InstructionSample, vectors: np.ndarray) -> None:
        base = self._sidecar.append(vectors)
        sample.knowledge_refs = list(range(base, base + vectors.shape[0]))
        prompt = render_prompt(sample)
        record = {
            "id": sample.sample_id,
            "direction": sample.direction,
            "prompt": prompt,
            "gold_name": sample.gold_name,
            "gold_id": sample.gold_id,
            "candidate_ids": sample.candidate_ids,
            "candidate_names": sample.candidate_names,
            "gold_rank": sample.gold_rank,
            "knowledge_ref_offsets": sample.knowledge_refs,
        }
        self._f.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")
        self.count += 1
        self.prompt_chars += len(prompt)

    def close(self) -> None:
        self._f.close()
        self._sidecar.close()

    def __enter__(self) -> "InstructionWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def read_instruction_records(path: str) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _options_summary(params: ConfidenceParams, options: BuildOptions) -> dict:
    return {
        "m": params.m,
        "alpha": params.alpha,
        "beta": params.beta,
        "gamma": options.gamma,
        "template_version": TEMPLATE_VERSION,
        "drop_description": options.drop_description,
        "drop_neighbors": options.drop_neighbors,
        "rc_sampling": options.rc_sampling,
        "shuffle_candidates": options.shuffle_candidates,
    }


def build_eval_set(
    kg: KnowledgeGraph,
    table: EmbeddingTable,
    params: ConfidenceParams,
    options: BuildOptions,
    instructions_path: str,
    sidecar_path: str,
    id_prefix: str = "test",
    triples: list[Triple] | None = None,
) -> dict:
    """One untruncated sample per direction for every test triple."""
    source = kg.test if triples is None else triples
    with InstructionWriter(instructions_path, sidecar_path, table.dim, table.norm) as w:
        for _, sample, vectors in iter_triple_samples(
            kg, table, enumerate(source), params, options, id_prefix
        ):
            w.write(sample, vectors)
        written = w.count
        chars = w.prompt_chars
    summary = _options_summary(params, options)
    summary.update(
        {
            "queries": written,
            "written": written,
            "mean_prompt_chars": (chars / written) if written else 0.0,
        }
    )
    return summary


def build_finetune_set(
    kg: KnowledgeGraph,
    table: EmbeddingTable,
    params: ConfidenceParams,
    options: BuildOptions,
    split_seed: int,
    instructions_path: str,
    sidecar_path: str,
    holdout_instructions_path: str,
    holdout_sidecar_path: str,
) -> dict:
    """Confidence-truncated samples from 90% of the validation split.

    The remaining 10% is written untruncated to the holdout files for
    hyperparameter selection. The train split is never used here.
    """
    if not kg.valid:
        raise ValueError("finetune building requires a non-empty validation split")
    rng = np.random.default_rng(split_seed)
    perm = rng.permutation(len(kg.valid))
    cut = (len(kg.valid) * 9) // 10
    part1 = sorted(int(i) for i in perm[:cut])
    part2 = sorted(int(i) for i in perm[cut:])

    kept = 0
    seen = 0
    chars = 0
    with InstructionWriter(instructions_path, sidecar_path, table.dim, table.norm) as w:
        for rq, sample, vectors in iter_triple_samples(
            kg, table, ((i, kg.valid[i]) for i in part1), params, options, "valid"
        ):
            seen += 1
            if sample_confidence(rq, params) > params.beta:
                w.write(sample, vectors)
        kept = w.count
        chars = w.prompt_chars
    if kept == 0:
        logger.warning("truncation at beta=%s kept no finetune samples", params.beta)

    with InstructionWriter(
        holdout_instructions_path, holdout_sidecar_path, table.dim, table.norm
    ) as w:
        for _, sample, vectors in iter_triple_samples(
            kg, table, ((i, kg.valid[i]) for i in part2), params, options, "valid"
        ):
            w.write(sample, vectors)
        holdout = w.count

    summary = _options_summary(params, options)
    summary.update(
        {
            "valid_triples": len(kg.valid),
            "queries": seen,
            "kept": kept,
            "dropped": seen - kept,
            "holdout_queries": holdout,
            "mean_prompt_chars": (chars / kept) if kept else 0.0,
            "split_seed": split_seed,
        }
    )
    return summary
