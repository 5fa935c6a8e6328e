"""Translational embedding model: scoring, margin-loss training, checkpoint IO.

A triple (h, r, t) is scored as the negated L1 or L2 norm of the residual
e_h + e_r - e_t, so higher scores mean more plausible facts. Training
minimizes the margin ranking loss between observed facts and corrupted
negatives with plain SGD, renormalizing entity vectors to unit L2 norm
after every epoch.

Downstream code only relies on ``score``, ``score_candidates``,
``query_vector``, ``entity_vector``, and checkpoint IO, so an alternative
scorer can replace :class:`EmbeddingTable` without touching the ranking,
prompt-building, or evaluation modules.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .kg import DataError, KnowledgeGraph

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"KGE1"
_HEADER = struct.Struct("<4sIQQQB")
_NORM_CODES = {"L1": 1, "L2": 2}
_NORM_NAMES = {v: k for k, v in _NORM_CODES.items()}

HEAD = "head"  # predict the head: (?, r, t), known entity is t
TAIL = "tail"  # predict the tail: (h, r, ?), known entity is h


class TrainingDiverged(RuntimeError):
    """Raised when the training loss becomes non-finite."""


@dataclass
class TrainConfig:
    dim: int = 100
    learning_rate: float = 0.01
    margin: float = 1.0
    epochs: int = 1000
    negatives_per_positive: int = 1
    batch_size: int = 1024
    norm: str = "L2"
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.norm not in _NORM_CODES:
            raise ValueError(f"norm must be one of {sorted(_NORM_CODES)}")


@dataclass
class EmbeddingTable:
    entity_vecs: np.ndarray
    relation_vecs: np.ndarray
    norm: str

    @property
    def dim(self) -> int:
        return int(self.entity_vecs.shape[1])

    def score(self, h: int, r: int, t: int) -> float:
        """Negated residual norm of (h, r, t); higher is more plausible."""
        u = self.entity_vecs[h] + self.relation_vecs[r] - self.entity_vecs[t]
        return float(-_residual_norm(u, self.norm))

    def score_candidates(self, known: int, relation: int, direction: str) -> np.ndarray:
        """Scores of all entities substituted into the missing slot."""
        rel = self.relation_vecs[relation]
        # grouping matches score() so single and vectorized paths agree bitwise
        if direction == TAIL:
            u = (self.entity_vecs[known] + rel) - self.entity_vecs
        elif direction == HEAD:
            u = (self.entity_vecs + rel) - self.entity_vecs[known]
        else:
            raise ValueError(f"unknown direction {direction!r}")
        return -_residual_norm(u, self.norm)

    def query_vector(self, known: int, relation: int, direction: str) -> np.ndarray:
        """Translational composition of a completion query.

        Tail prediction composes e_known + e_rel (the point the missing tail
        should sit at); head prediction composes e_known - e_rel.
        """
        if direction == TAIL:
            return self.entity_vecs[known] + self.relation_vecs[relation]
        if direction == HEAD:
            return self.entity_vecs[known] - self.relation_vecs[relation]
        raise ValueError(f"unknown direction {direction!r}")

    def entity_vector(self, entity: int) -> np.ndarray:
        return self.entity_vecs[entity]

    def save(self, path: str) -> None:
        write_vector_file(path, self.entity_vecs, self.norm, relation_vecs=self.relation_vecs)

    @classmethod
    def load(cls, path: str) -> "EmbeddingTable":
        entity_vecs, relation_vecs, norm = read_vector_file(path)
        return cls(entity_vecs, relation_vecs, norm)


def _residual_norm(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "L1":
        return np.abs(u).sum(axis=-1)
    return np.sqrt((u * u).sum(axis=-1))


def _normalize_rows(m: np.ndarray) -> None:
    with np.errstate(over="ignore", invalid="ignore"):
        norms = np.sqrt((m * m).sum(axis=1, keepdims=True))
        np.divide(m, norms, out=m, where=norms > 0)


def init_embeddings(kg: KnowledgeGraph, config: TrainConfig) -> EmbeddingTable:
    """Seeded uniform init in [-6/sqrt(d), 6/sqrt(d)]; entity rows unit-normed."""
    rng = np.random.default_rng(config.seed)
    bound = 6.0 / np.sqrt(config.dim)
    entity_vecs = rng.uniform(-bound, bound, size=(kg.num_entities, config.dim))
    relation_vecs = rng.uniform(-bound, bound, size=(kg.num_relations, config.dim))
    _normalize_rows(entity_vecs)
    return EmbeddingTable(entity_vecs, relation_vecs, config.norm)


def _hinge_step(
    table: EmbeddingTable,
    pos: np.ndarray,
    neg: np.ndarray,
    margin: float,
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Hinge losses and raw gradient rows for aligned positive/negative pairs.

    Returns (loss_sum, entity_idx, entity_grads, relation_idx, relation_grads)
    where the gradient rows are d(loss)/d(vector), to be scattered into the
    tables by the caller. Pairs with inactive hinges contribute zero rows.
    """
    ev, rv = table.entity_vecs, table.relation_vecs
    with np.errstate(over="ignore", invalid="ignore"):
        u_pos = ev[pos[:, 0]] + rv[pos[:, 1]] - ev[pos[:, 2]]
        u_neg = ev[neg[:, 0]] + rv[neg[:, 1]] - ev[neg[:, 2]]
        d_pos = _residual_norm(u_pos, table.norm)
        d_neg = _residual_norm(u_neg, table.norm)
        viol = margin + d_pos - d_neg
    if not np.isfinite(viol).all():
        # overflowed scores must surface as divergence, not vanish in the mask
        loss_sum = float("nan")
    else:
        loss_sum = float(viol[viol > 0].sum())
    active = viol > 0

    with np.errstate(over="ignore", invalid="ignore"):
        if table.norm == "L1":
            g_pos = np.sign(u_pos)
            g_neg = np.sign(u_neg)
        else:
            g_pos = np.zeros_like(u_pos)
            g_neg = np.zeros_like(u_neg)
            np.divide(u_pos, d_pos[:, None], out=g_pos, where=d_pos[:, None] > 0)
            np.divide(u_neg, d_neg[:, None], out=g_neg, where=d_neg[:, None] > 0)
        g_pos = np.where(active[:, None], g_pos, 0.0)
        g_neg = np.where(active[:, None], g_neg, 0.0)

    entity_idx = np.concatenate([pos[:, 0], pos[:, 2], neg[:, 0], neg[:, 2]])
    entity_grads = np.concatenate([g_pos, -g_pos, -g_neg, g_neg])
    relation_idx = np.concatenate([pos[:, 1], neg[:, 1]])
    relation_grads = np.concatenate([g_pos, -g_neg])
    return loss_sum, entity_idx, entity_grads, relation_idx, relation_grads


def pair_loss_and_grads(
    table: EmbeddingTable,
    pos: tuple[int, int, int],
    neg: tuple[int, int, int],
    margin: float,
) -> tuple[float, dict[tuple[str, int], np.ndarray]]:
    """Loss and accumulated per-vector gradients for one (positive, negative) pair."""
    pos_arr = np.asarray([pos], dtype=np.int64)
    neg_arr = np.asarray([neg], dtype=np.int64)
    loss, e_idx, e_grads, r_idx, r_grads = _hinge_step(table, pos_arr, neg_arr, margin)
    grads: dict[tuple[str, int], np.ndarray] = {}
    for kind, idx, rows in (("entity", e_idx, e_grads), ("relation", r_idx, r_grads)):
        for i, row in zip(idx.tolist(), rows):
            key = (kind, i)
            grads[key] = grads.get(key, 0.0) + row
    return loss, grads


def _sample_negatives(
    positives: np.ndarray,
    num_entities: int,
    train_set: frozenset,
    k: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Corrupt head or tail uniformly; redraw corruptions that are training facts."""
    neg = np.repeat(positives, k, axis=0)
    n = neg.shape[0]
    corrupt_head = rng.integers(0, 2, size=n).astype(bool)
    neg[corrupt_head, 0] = rng.integers(0, num_entities, size=int(corrupt_head.sum()))
    neg[~corrupt_head, 2] = rng.integers(0, num_entities, size=int((~corrupt_head).sum()))
    # dense tiny graphs may have no clean corruption; give up after a bound
    for _ in range(50):
        clash = np.fromiter(
            (tuple(row) in train_set for row in neg.tolist()), dtype=bool, count=n
        )
        if not clash.any():
            break
        redraw = rng.integers(0, num_entities, size=int(clash.sum()))
        rows = np.where(clash)[0]
        heads = corrupt_head[rows]
        neg[rows[heads], 0] = redraw[heads]
        neg[rows[~heads], 2] = redraw[~heads]
    return neg


def train(
    kg: KnowledgeGraph,
    config: TrainConfig,
    *,
    epoch_losses: list[float] | None = None,
) -> EmbeddingTable:
    """Margin-ranking SGD over the train split; returns the final table.

    With ``epochs == 0`` the freshly initialized table is returned unchanged.
    Pass a list as ``epoch_losses`` to collect the mean per-pair loss of each
    epoch.
    """
    if not kg.train:
        raise DataError("cannot train on an empty train split")
    table = init_embeddings(kg, config)
    triples = np.asarray([t for t in kg.train], dtype=np.int64)
    rng = np.random.default_rng((config.seed, 1))
    k = config.negatives_per_positive
    lr = config.learning_rate

    for epoch in range(config.epochs):
        order = rng.permutation(len(triples))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            pos = triples[order[start : start + config.batch_size]]
            pos_rep = np.repeat(pos, k, axis=0)
            neg = _sample_negatives(pos, kg.num_entities, kg.train_set, k, rng)
            loss, e_idx, e_grads, r_idx, r_grads = _hinge_step(
                table, pos_rep, neg, config.margin
            )
            total += loss
            np.add.at(table.entity_vecs, e_idx, -lr * e_grads)
            np.add.at(table.relation_vecs, r_idx, -lr * r_grads)
        if not np.isfinite(total):
            raise TrainingDiverged(
                f"non-finite loss at epoch {epoch}: {total!r} "
                f"(learning_rate={lr}, margin={config.margin})"
            )
        _normalize_rows(table.entity_vecs)
        mean = total / (len(triples) * k)
        if epoch_losses is not None:
            epoch_losses.append(mean)
        if epoch % 100 == 0 or epoch == config.epochs - 1:
            logger.debug("epoch %d mean loss %.6f", epoch, mean)
    return table


def write_vector_file(
    path: str,
    entity_vecs: np.ndarray,
    norm: str,
    relation_vecs: np.ndarray | None = None,
) -> None:
    """Binary vector file: fixed header then row-major little-endian float64."""
    ev = np.ascontiguousarray(entity_vecs, dtype="<f8")
    rv = (
        np.ascontiguousarray(relation_vecs, dtype="<f8")
        if relation_vecs is not None
        else np.zeros((0, ev.shape[1]), dtype="<f8")
    )
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, 1, ev.shape[0], rv.shape[0], ev.shape[1], _NORM_CODES[norm]
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(ev.tobytes())
        f.write(rv.tobytes())


def read_vector_file(path: str) -> tuple[np.ndarray, np.ndarray, str]:
    with open(path, "rb") as f:
        header = f.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise DataError(f"{path}: truncated header")
        magic, version, n_ent, n_rel, dim, norm_code = _HEADER.unpack(header)
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}")
        if version != 1:
            raise DataError(f"{path}: unsupported version {version}")
        if norm_code not in _NORM_NAMES:
            raise DataError(f"{path}: unknown norm code {norm_code}")
        payload = f.read()
    expected = (n_ent + n_rel) * dim * 8
    if len(payload) != expected:
        raise DataError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    data = np.frombuffer(payload, dtype="<f8").copy()
    entity_vecs = data[: n_ent * dim].reshape(n_ent, dim)
    relation_vecs = data[n_ent * dim :].reshape(n_rel, dim)
    return entity_vecs, relation_vecs, _NORM_NAMES[norm_code]


class VectorFileWriter:
    """Streaming writer for the vector file format (count fixed on close)."""

    def __init__(self, path: str, dim: int, norm: str):
        self.path = path
        self.dim = dim
        self.norm = norm
        self.count = 0
        self._f = open(path, "wb")
        self._f.write(_HEADER.pack(CHECKPOINT_MAGIC, 1, 0, 0, dim, _NORM_CODES[norm]))

    def append(self, vectors: np.ndarray) -> int:
        """Write rows, returning the offset of the first one."""
        rows = np.ascontiguousarray(vectors, dtype="<f8")
        if rows.ndim == 1:
            rows = rows[None, :]
        if rows.shape[1] != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {rows.shape[1]}")
        first = self.count
        self._f.write(rows.tobytes())
        self.count += rows.shape[0]
        return first

    def close(self) -> None:
        self._f.seek(0)
        self._f.write(
            _HEADER.pack(CHECKPOINT_MAGIC, 1, self.count, 0, self.dim, _NORM_CODES[self.norm])
        )
        self._f.close()

    def __enter__(self) -> "VectorFileWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
