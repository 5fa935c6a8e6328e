"""Acceptance gate: one test per release criterion, each printing a verdict line.

Run with `pytest tests/test_acceptance.py -v -s`. Criteria that need a
locally provided benchmark dataset (or the KGRERANK_RUN_EXTENDED flag)
report SKIP instead of silently passing.
"""

import functools
import hashlib
import json
import os
import time

import numpy as np
import pytest

from helpers import brute_force_rank, build_kg, central_diff, rel_err
from kgrerank.adapter import AdapterParams, project, project_grad
from kgrerank.cli import main
from kgrerank.datasets import find_benchmark_dir
from kgrerank.discriminator import FirstCandidateBackend, OracleBackend
from kgrerank.embeddings import EmbeddingTable, TrainConfig, train
from kgrerank.evaluation import EvalOptions, base_model_metrics, evaluate
from kgrerank.instructions import (
    BuildOptions,
    build_eval_set,
    parse_candidate_names,
    read_instruction_records,
    rc_sample_neighbors,
    render_fact,
)
from kgrerank.kg import load_kg
from kgrerank.ranking import (
    ConfidenceParams,
    Query,
    RankedQuery,
    local_confidence,
    queries_for_triple,
    rank_query,
    sample_confidence,
    truncate_samples,
)


def criterion(label):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except pytest.skip.Exception as exc:
                print(f"[acceptance] SKIP {label}: {exc}")
                raise
            except BaseException:
                print(f"[acceptance] FAIL {label}")
                raise
            print(f"[acceptance] PASS {label}")

        return wrapper

    return decorate


def random_graph_and_table(rng):
    n_e = int(rng.integers(3, 51))
    n_r = int(rng.integers(1, 6))
    dim = int(rng.integers(2, 6))
    max_facts = n_e * (n_e - 1) // 2
    facts = set()
    wanted = int(rng.integers(1, min(60, max_facts) + 1))
    while len(facts) < wanted:
        h, t = rng.integers(0, n_e, size=2)
        if h != t:
            facts.add((int(h), int(rng.integers(0, n_r)), int(t)))
    facts = sorted(facts)
    cut1 = max(1, len(facts) // 2)
    cut2 = max(cut1, (3 * len(facts)) // 4)
    kg = build_kg(n_e, n_r, train=facts[:cut1], valid=facts[cut1:cut2], test=facts[cut2:])
    entity_vecs = rng.normal(size=(n_e, dim))
    if n_e >= 2 and rng.integers(0, 2):
        entity_vecs[1] = entity_vecs[0]  # force an exact tie
    table = EmbeddingTable(entity_vecs, rng.normal(size=(n_r, dim)), "L2")
    return kg, table, facts


@criterion("ranking matches the exhaustive oracle on 120 random graphs")
def test_ranking_oracle_equivalence():
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    for _ in range(120):
        kg, table, facts = random_graph_and_table(rng)
        for _ in range(4):
            fact = facts[int(rng.integers(0, len(facts)))]
            q = queries_for_triple(fact)[int(rng.integers(0, 2))]
            m = int(rng.integers(1, kg.num_entities + 1))
            rq = rank_query(table, kg, q, m)
            order, topm, gold_rank = brute_force_rank(table, kg, q, m)
            assert rq.ranking.tolist() == order
            assert rq.topm_ids == topm
            assert rq.gold_rank == gold_rank
    assert time.monotonic() - start < 60


def assert_identities(kg, table, params, tolerance=1e-12):
    first = evaluate(kg, table, FirstCandidateBackend(), params)
    base = base_model_metrics(kg, table, m=params.m)
    for got, expected in ((first.head, base["head"]), (first.tail, base["tail"]), (first.combined, base["combined"])):
        for attr in ("mrr", "hits1", "hits3", "hits10"):
            assert abs(getattr(got, attr) - getattr(expected, attr)) <= tolerance
    oracle = evaluate(kg, table, OracleBackend(), params)
    assert oracle.combined.hits1 == oracle.gold_in_topm / oracle.queries
    assert oracle.combined.hits10 >= first.combined.hits10


@criterion("first_candidate evaluation reproduces base metrics on the chain fixture")
def test_metric_identity_chain(chain_kg, chain_table):
    assert_identities(chain_kg, chain_table, ConfidenceParams(m=4, alpha=1.0, beta=0.05))


@criterion("oracle Hits@1 equals candidate recall on the toy fixture")
def test_oracle_identity_toy(toy_kg, toy_table):
    params = ConfidenceParams(m=5, alpha=1.0, beta=0.05)
    report = evaluate(toy_kg, toy_table, OracleBackend(), params)
    assert report.combined.hits1 == report.gold_in_topm / report.queries


@criterion("first_candidate and oracle identities hold on a 1000-query FB15K-237 subsample")
def test_metric_identity_fb15k237():
    dataset = find_benchmark_dir("FB15K-237")
    if dataset is None:
        pytest.skip("FB15K-237 dataset not available (set KGRERANK_DATA)")
    start = time.monotonic()
    kg = load_kg(dataset)
    table = train(kg, TrainConfig(dim=64, learning_rate=0.01, epochs=1, batch_size=2048, seed=0))
    params = ConfidenceParams(m=20, alpha=1.0, beta=0.05)
    first = evaluate(
        kg, table, FirstCandidateBackend(), params, EvalOptions(limit_triples=500)
    )
    base = base_model_metrics(kg, table, m=20, limit_triples=500)
    assert first.queries == 1000
    for attr in ("mrr", "hits1", "hits3", "hits10"):
        assert abs(getattr(first.combined, attr) - getattr(base["combined"], attr)) <= 1e-12
    oracle = evaluate(kg, table, OracleBackend(), params, EvalOptions(limit_triples=500))
    assert oracle.combined.hits1 == oracle.gold_in_topm / oracle.queries
    assert time.monotonic() - start < 300


@criterion("confidence truncation: monotone sweep, total recall at beta 0, strict boundary")
def test_truncated_sampling_behavior(toy_kg, toy_table):
    rqs = [
        rank_query(toy_table, toy_kg, q, m=5)
        for fact in toy_kg.valid
        for q in queries_for_triple(fact)
    ]
    counts = []
    for beta in (0.0, 0.05, 0.5, 1.0):
        params = ConfidenceParams(m=5, alpha=1.0, beta=beta)
        kept = truncate_samples(rqs, params)
        counts.append(len(kept))
        kept_set = {id(rq) for rq in kept}
        for rq in rqs:
            if beta > 0 and local_confidence(rq, params.m) == 0.0 and rq.gold_rank > 1 / beta:
                assert id(rq) not in kept_set
    assert counts[0] == len(rqs)
    assert counts == sorted(counts, reverse=True)

    # confidence landing exactly on beta is discarded (strict inequality)
    boundary = RankedQuery(
        query=Query(known=0, relation=0, direction="tail", gold=1),
        ranking=np.arange(30),
        topm_ids=[0, 1, 2],
        topm_scores=[-1.0, -2.0, -3.0],
        gold_rank=20,
        gold_score=-9.0,
    )
    params = ConfidenceParams(m=3, alpha=1.0, beta=0.05)
    assert sample_confidence(boundary, params) == params.beta
    assert truncate_samples([boundary], params) == []


@criterion("adapter gradients match finite differences at (3,4,2) and (16,32,64)")
def test_adapter_gradient_check():
    start = time.monotonic()
    for dims, draws in (((3, 4, 2), 100), ((16, 32, 64), 100)):
        d0, d1, d2 = dims
        for seed in range(draws):
            rng = np.random.default_rng((d0, d1, d2, seed))
            params = AdapterParams(
                w1=rng.normal(size=(2 * d1, d0)),
                b1=rng.normal(size=2 * d1),
                w2=rng.normal(size=(d2, d1)),
                b2=rng.normal(size=d2),
            )
            e = rng.normal(size=d0)
            upstream = rng.normal(size=d2)
            grads = project_grad(params, e, upstream)
            checks = [
                (grads.w1, params.w1, lambda x: AdapterParams(x, params.b1, params.w2, params.b2)),
                (grads.b1, params.b1, lambda x: AdapterParams(params.w1, x, params.w2, params.b2)),
                (grads.w2, params.w2, lambda x: AdapterParams(params.w1, params.b1, x, params.b2)),
                (grads.b2, params.b2, lambda x: AdapterParams(params.w1, params.b1, params.w2, x)),
            ]
            for analytic, array, rebuild in checks:
                fd = central_diff(lambda x: float(upstream @ project(rebuild(x), e)), array.copy())
                assert (np.abs(np.asarray(analytic) - fd)
                        <= 1e-5 * np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(fd)))).all()
            fd_e = central_diff(lambda x: float(upstream @ project(params, x)), e.copy())
            for a, b in zip(grads.e, fd_e):
                assert rel_err(a, b) < 1e-5
    assert time.monotonic() - start < 60


@criterion("adapter zero case: zero input and zero bias give exactly b2")
def test_adapter_zero_case():
    rng = np.random.default_rng(5)
    params = AdapterParams(
        w1=rng.normal(size=(8, 3)),
        b1=np.zeros(8),
        w2=rng.normal(size=(4, 4)),
        b2=rng.normal(size=4),
    )
    out = project(params, np.zeros(3))
    assert np.array_equal(out, params.b2)


@criterion("prompt shape: placeholder counts, parse round-trip, no gold leakage")
def test_prompt_shape(tmp_path, toy_kg, toy_table):
    params = ConfidenceParams(m=5, alpha=1.0, beta=0.05)
    paths = [str(tmp_path / n) for n in ("eval.jsonl", "eval.sidecar")]
    build_eval_set(toy_kg, toy_table, params, BuildOptions(gamma=4), *paths)
    records = read_instruction_records(paths[0])
    assert len(records) == 2 * len(toy_kg.test)
    for rec in records:
        assert rec["prompt"].count("[QUERY]") == 1
        assert rec["prompt"].count("[ENTITY]") == params.m
        assert parse_candidate_names(rec["prompt"]) == rec["candidate_names"]
    for fact in toy_kg.valid + toy_kg.test:
        for q in queries_for_triple(fact):
            facts = rc_sample_neighbors(toy_kg, toy_kg.cooc, q, gamma=10)
            assert q.completed(q.gold) not in facts
            gold_text = render_fact(toy_kg, q.completed(q.gold))
            assert gold_text not in [render_fact(toy_kg, f) for f in facts]


@criterion("two identically configured pipeline runs are byte-identical")
def test_pipeline_determinism(tmp_path, toy_dir):
    digests = []
    for run in ("one", "two"):
        workdir = tmp_path / run
        cfg_path = tmp_path / f"{run}.ini"
        cfg_path.write_text(
            f"[pipeline]\ndataset_dir = {toy_dir}\nworkdir = {workdir}\n"
            "[embedder]\ndim = 12\nlearning_rate = 0.1\nepochs = 40\nbatch_size = 16\n"
            "[ranker]\nm = 5\n",
            encoding="utf-8",
        )
        for command in ("train-embeddings", "build-finetune", "build-eval", "evaluate"):
            assert main([command, "--config", str(cfg_path)]) == 0
        blob = hashlib.sha256()
        for entry in sorted(os.listdir(workdir)):
            full = os.path.join(workdir, entry)
            if os.path.isdir(full):
                for name in sorted(os.listdir(full)):
                    if name.endswith((".jsonl", ".sidecar")) or name.startswith("report"):
                        blob.update(open(os.path.join(full, name), "rb").read())
        digests.append(blob.hexdigest())
    assert digests[0] == digests[1]


@criterion("end-to-end smoke on a 20-entity graph finishes under 30 seconds")
def test_end_to_end_smoke(tmp_path, toy_dir):
    start = time.monotonic()
    workdir = tmp_path / "w"
    cfg_path = tmp_path / "smoke.ini"
    cfg_path.write_text(
        f"[pipeline]\ndataset_dir = {toy_dir}\nworkdir = {workdir}\n"
        "[embedder]\ndim = 12\nlearning_rate = 0.1\nepochs = 40\nbatch_size = 16\n"
        "[ranker]\nm = 5\n",
        encoding="utf-8",
    )
    assert main(["train-embeddings", "--config", str(cfg_path)]) == 0
    assert main(["build-eval", "--config", str(cfg_path)]) == 0
    eval_dir = next(
        os.path.join(workdir, e) for e in sorted(os.listdir(workdir)) if e.startswith("eval-")
    )
    records = read_instruction_records(os.path.join(eval_dir, "instructions.jsonl"))
    fixture = tmp_path / "outputs.tsv"
    with open(fixture, "w", encoding="utf-8") as f:
        for i, rec in enumerate(records):
            answer = rec["gold_name"] if i % 3 == 0 else "no idea"
            f.write(f"{rec['id']}\t{answer}\n")
    assert (
        main(
            [
                "evaluate",
                "--config",
                str(cfg_path),
                "--set",
                "backend.kind=scripted",
                "--set",
                f"backend.scripted_file={fixture}",
            ]
        )
        == 0
    )
    report_dir = next(
        os.path.join(workdir, e) for e in sorted(os.listdir(workdir)) if e.startswith("report-")
    )
    report = json.load(open(os.path.join(report_dir, "report.json")))
    combined = report["combined"]
    assert combined["hits1"] <= combined["hits3"] <= combined["hits10"]
    assert time.monotonic() - start < 30


@pytest.mark.extended
@criterion("benchmark embedding quality on FB15K-237 (extended)")
def test_transe_fb15k237_benchmark():
    dataset = find_benchmark_dir("FB15K-237")
    if dataset is None:
        pytest.skip("FB15K-237 dataset not available (set KGRERANK_DATA)")
    if os.environ.get("KGRERANK_RUN_EXTENDED") != "1":
        pytest.skip("set KGRERANK_RUN_EXTENDED=1 to run the benchmark-scale test")
    kg = load_kg(dataset)
    table = train(kg, TrainConfig())  # library defaults: d=100, lr=0.01, 1000 epochs
    base = base_model_metrics(kg, table, m=20)
    combined = base["combined"]
    assert abs(combined.mrr - 0.312) <= 0.03
    assert abs(combined.hits10 - 0.510) <= 0.04
