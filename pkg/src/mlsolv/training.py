"""Model assembly, MSE + L2 training with RMSprop, prediction, fold
construction (random and fingerprint-clustered) and cross-validation."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .embed import EmbeddingTable, embed_molecule
from .encoders import Encoder, EncoderConfig
from .interaction import SolvationPrediction, explain
from .molgraph import MolecularGraph, fingerprint, propagation_matrix
from .numcore import Parameter, RMSprop, Tensor, add, as_tensor, mul, row_sum, scale, spmm, square_norm, sub, total

log = logging.getLogger(__name__)

SPLIT_KINDS = ("random", "scaffold")


@dataclass(frozen=True)
class SolvationRecord:
    solvent_graph: MolecularGraph
    solute_graph: MolecularGraph
    dg_expt: float
    source_id: str = ""

    def __post_init__(self):
        if not math.isfinite(self.dg_expt):
            raise ValueError(f"non-finite solvation free energy in record {self.source_id!r}")


@dataclass
class TrainConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    l2_lambda: float = 1e-4
    batch_size: int = 32
    epochs: int = 100
    learning_rate: float = 1e-3
    rho: float = 0.9
    epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data["encoder"] = EncoderConfig(**data.get("encoder", {}))
        return cls(**data)


# ---------------------------------------------------------------------------
# batching


@dataclass
class _MolInput:
    X: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass
class GraphBatch:
    """Several molecules stacked row-wise; ``A_hat`` is block diagonal and
    ``segments`` (B x N) sums atom rows into per-molecule rows."""

    X: np.ndarray
    A_hat: sp.csr_matrix
    offsets: np.ndarray
    segments: sp.csr_matrix


def _stack(inputs: Sequence[_MolInput]) -> GraphBatch:
    sizes = np.array([m.n for m in inputs], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    N = int(offsets[-1])
    X = np.vstack([m.X for m in inputs])
    rows = np.concatenate([m.rows + o for m, o in zip(inputs, offsets)])
    cols = np.concatenate([m.cols + o for m, o in zip(inputs, offsets)])
    vals = np.concatenate([m.vals for m in inputs])
    A_hat = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
    segments = sp.csr_matrix((np.ones(N), np.arange(N), offsets), shape=(len(inputs), N))
    return GraphBatch(X, A_hat, offsets, segments)


# ---------------------------------------------------------------------------
# model


class Model:
    """Two architecturally identical, parameter-independent encoders over a
    frozen embedding table."""

    def __init__(self, table: EmbeddingTable, config: TrainConfig, rng: np.random.Generator | None = None):
        if table.dim != config.encoder.dim:
            raise ValueError(f"embedding dimension {table.dim} does not match encoder dimension {config.encoder.dim}")
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.table = table
        self.config = config
        self.solvent_encoder = Encoder(config.encoder, rng, "solvent")
        self.solute_encoder = Encoder(config.encoder, rng, "solute")
        self.loss_trace: list[float] = []
        self._cache: dict[MolecularGraph, _MolInput] = {}

    @property
    def parameters(self) -> list[Parameter]:
        return self.solvent_encoder.parameters + self.solute_encoder.parameters

    @property
    def weight_matrices(self) -> list[Parameter]:
        return self.solvent_encoder.weight_matrices + self.solute_encoder.weight_matrices

    def featurize(self, graph: MolecularGraph) -> _MolInput:
        mol = self._cache.get(graph)
        if mol is None:
            A_hat = propagation_matrix(graph)
            rows, cols = np.nonzero(A_hat)
            mol = _MolInput(embed_molecule(graph, self.table, self.config.encoder.dim),
                            rows.astype(np.int64), cols.astype(np.int64), A_hat[rows, cols])
            self._cache[graph] = mol
        return mol

    def encode(self, solvents: Sequence[MolecularGraph], solutes: Sequence[MolecularGraph]):
        """Feature tensors ``P`` (solvent atoms) and ``Q`` (solute atoms) plus batches."""
        sb = _stack([self.featurize(g) for g in solvents])
        qb = _stack([self.featurize(g) for g in solutes])
        P = self.solvent_encoder(sb.X, sb.A_hat, sb.offsets).P
        Q = self.solute_encoder(qb.X, qb.A_hat, qb.offsets).P
        return P, Q, sb, qb

    def forward(self, solvents, solutes) -> Tensor:
        """Predicted free energies (B,) as ``-(sum p) . (sum q)`` per pair."""
        P, Q, sb, qb = self.encode(solvents, solutes)
        u = spmm(sb.segments, P)
        v = spmm(qb.segments, Q)
        return scale(row_sum(mul(u, v)), -1.0)

    def predict_batch(self, records: Sequence[SolvationRecord], batch_size: int = 256) -> np.ndarray:
        out = []
        for start in range(0, len(records), batch_size):
            chunk = records[start:start + batch_size]
            out.append(self.forward([r.solvent_graph for r in chunk], [r.solute_graph for r in chunk]).value)
        return np.concatenate(out) if out else np.zeros(0)

    def molecular_vector(self, solute: MolecularGraph) -> np.ndarray:
        qb = _stack([self.featurize(solute)])
        return -self.solute_encoder(qb.X, qb.A_hat, qb.offsets).P.value.sum(axis=0)


def loss(predictions, targets, weights: Sequence = (), l2_lambda: float = 0.0) -> Tensor:
    """Mean squared error plus ``l2_lambda * sum ||W||^2`` over ``weights``."""
    predictions = as_tensor(predictions)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.shape != targets.shape:
        raise ValueError(f"predictions {predictions.shape} and targets {targets.shape} differ in shape")
    if targets.size == 0:
        raise ValueError("empty batch")
    err = sub(predictions, targets)
    out = scale(total(mul(err, err)), 1.0 / targets.size)
    if l2_lambda:
        for w in weights:
            out = add(out, scale(square_norm(w), l2_lambda))
    return out


def batch_loss(model: Model, records: Sequence[SolvationRecord]) -> Tensor:
    preds = model.forward([r.solvent_graph for r in records], [r.solute_graph for r in records])
    targets = np.array([r.dg_expt for r in records])
    return loss(preds, targets, model.weight_matrices, model.config.l2_lambda)


def fit(dataset: Sequence[SolvationRecord], config: TrainConfig, table: EmbeddingTable) -> Model:
    """Train a model with seeded mini-batch RMSprop.

    ``model.loss_trace[e]`` is the sample-weighted mean batch loss of epoch e.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("cannot fit on an empty dataset")
    rng = np.random.default_rng(config.seed)
    model = Model(table, config, rng)
    for r in dataset:  # fail before training on bad input
        model.featurize(r.solvent_graph)
        model.featurize(r.solute_graph)
    opt = RMSprop(model.parameters, config.learning_rate, config.rho, config.epsilon)
    n = len(dataset)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            batch = [dataset[i] for i in order[start:start + config.batch_size]]
            L = batch_loss(model, batch)
            L.backward()
            opt.step()
            running += float(L.value) * len(batch)
        model.loss_trace.append(running / n)
        if epoch % 50 == 0 or epoch == config.epochs - 1:
            log.debug("epoch %d loss %.5f", epoch, model.loss_trace[-1])
    return model


def predict(model: Model, solvent_graph: MolecularGraph, solute_graph: MolecularGraph) -> SolvationPrediction:
    P, Q, _, _ = model.encode([solvent_graph], [solute_graph])
    return explain(P.value, Q.value)


# ---------------------------------------------------------------------------
# metrics


def metrics(preds, targets) -> tuple[float, float, float]:
    """``(MUE, RMSE, R^2)``."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.size == 0:
        raise ValueError("predictions and targets must be non-empty and equally long")
    err = preds - targets
    mue = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    ss_tot = float(np.sum((targets - targets.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("R^2 is undefined for constant targets")
    r2 = 1.0 - float(np.sum(err * err)) / ss_tot
    return mue, rmse, r2


# ---------------------------------------------------------------------------
# splits


def random_kfold(n: int, k: int, seed: int = 0) -> list[np.ndarray]:
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"cannot split {n} items into {k} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns labels with every
    cluster non-empty (empty clusters are reseeded at the farthest point)."""
    X = np.asarray(points, dtype=np.float64)
    m = X.shape[0]
    if k > m:
        raise ValueError(f"cannot form {k} clusters from {m} points")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(m)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for c in range(1, k):
        s = d2.sum()
        idx = rng.choice(m, p=d2 / s) if s > 0 else rng.integers(m)
        centers[c] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[c]) ** 2, axis=1))

    def assign(C):
        dist = np.sum(X * X, axis=1)[:, None] - 2 * X @ C.T + np.sum(C * C, axis=1)[None, :]
        return np.argmin(dist, axis=1), np.maximum(dist, 0.0)

    for _ in range(max_iter):
        labels, dist = assign(centers)
        new = centers.copy()
        for c in range(k):
            members = labels == c
            if members.any():
                new[c] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(dist[np.arange(m), labels]))
                new[c] = X[far]
                labels[far] = c
        shift = np.max(np.sqrt(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        if shift < tol:
            break
    labels, dist = assign(centers)
    for c in range(k):
        if not np.any(labels == c):
            sizes = np.bincount(labels, minlength=k)
            own = dist[np.arange(m), labels].copy()
            own[sizes[labels] < 2] = -1.0
            far = int(np.argmax(own))
            labels[far] = c
    return labels


def scaffold_kfold(dataset: Sequence[SolvationRecord], k: int, seed: int = 0, nbits: int = 1024) -> list[np.ndarray]:
    """Folds from k-means clusters of solute fingerprints; records sharing a
    solute always land in the same fold."""
    if k < 2:
        raise ValueError("k must be at least 2")
    solutes: dict[MolecularGraph, int] = {}
    owner = np.empty(len(dataset), dtype=np.int64)
    for i, r in enumerate(dataset):
        owner[i] = solutes.setdefault(r.solute_graph, len(solutes))
    if len(solutes) < k:
        raise ValueError(f"only {len(solutes)} distinct solutes for {k} folds")
    fps = np.array([fingerprint(g, nbits).bits for g in solutes], dtype=np.float64)
    labels = kmeans(fps, k, seed)
    record_labels = labels[owner]
    return [np.flatnonzero(record_labels == c) for c in range(k)]


# ---------------------------------------------------------------------------
# cross-validation


@dataclass
class CvReport:
    split: str
    k: int
    repeats: int
    folds: list[dict] = field(default_factory=list)
    repeat_summary: list[dict] = field(default_factory=list)

    def grand(self) -> dict:
        out = {}
        for key in ("mue", "rmse", "r2", "baseline_mue"):
            vals = np.array([r[key] for r in self.repeat_summary if r[key] is not None], dtype=np.float64)
            out[f"{key}_mean"] = float(vals.mean()) if vals.size else None
            out[f"{key}_std"] = float(vals.std()) if vals.size else None
        return out

    def to_dict(self) -> dict:
        return {"split": self.split, "k": self.k, "repeats": self.repeats, "grand": self.grand(),
                "repeat_summary": self.repeat_summary, "folds": self.folds}


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _safe_metrics(preds, targets):
    err = np.asarray(preds) - np.asarray(targets)
    mue = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    try:
        r2 = metrics(preds, targets)[2]
    except ValueError:
        r2 = None
    return mue, rmse, r2


def cross_validate(dataset: Sequence[SolvationRecord], config: TrainConfig, table: EmbeddingTable,
                   split_kind: str = "random", k: int = 5, repeats: int | None = None) -> CvReport:
    """Repeated k-fold CV: train on k-1 folds, score the held-out fold.

    Repeat ``r`` splits with a seed derived from ``(config.seed, r)``; each
    fold trains with a seed derived from ``(config.seed, r, fold)``.
    """
    if split_kind not in SPLIT_KINDS:
        raise ValueError(f"split_kind must be one of {SPLIT_KINDS}")
    if repeats is None:
        repeats = 9 if split_kind == "random" else 1
    dataset = list(dataset)
    targets = np.array([r.dg_expt for r in dataset])
    report = CvReport(split_kind, k, repeats)
    for rep in range(repeats):
        split_seed = _derived_seed(config.seed, rep)
        if split_kind == "random":
            folds = random_kfold(len(dataset), k, split_seed)
        else:
            folds = scaffold_kfold(dataset, k, split_seed)
        pooled = np.empty(len(dataset))
        pooled_base = np.empty(len(dataset))
        for f, test_idx in enumerate(folds):
            train_idx = np.setdiff1d(np.arange(len(dataset)), test_idx)
            fold_config = TrainConfig(**{**config.__dict__, "seed": _derived_seed(config.seed, rep, f)})
            model = fit([dataset[i] for i in train_idx], fold_config, table)
            preds = model.predict_batch([dataset[i] for i in test_idx])
            base = np.full(len(test_idx), targets[train_idx].mean())
            pooled[test_idx] = preds
            pooled_base[test_idx] = base
            mue, rmse, r2 = _safe_metrics(preds, targets[test_idx])
            report.folds.append({
                "repeat": rep, "fold": f, "n_train": int(len(train_idx)), "n_test": int(len(test_idx)),
                "mue": mue, "rmse": rmse, "r2": r2,
                "baseline_mue": float(np.mean(np.abs(base - targets[test_idx]))),
                "final_train_loss": model.loss_trace[-1] if model.loss_trace else None,
                "test_indices": [int(i) for i in test_idx],
            })
            log.info("%s CV repeat %d fold %d: MUE %.3f (n_test=%d)", split_kind, rep, f, mue, len(test_idx))
        mue, rmse, r2 = _safe_metrics(pooled, targets)
        report.repeat_summary.append({"repeat": rep, "mue": mue, "rmse": rmse, "r2": r2,
                                      "baseline_mue": float(np.mean(np.abs(pooled_base - targets)))})
    return report


def sweep(dataset: Sequence[SolvationRecord], configs: Sequence[TrainConfig], table: EmbeddingTable,
          split_kind: str = "random", k: int = 5, repeats: int | None = None):
    """Cross-validate each config; best = lowest grand-mean MUE, then RMSE,
    then list order."""
    if not configs:
        raise ValueError("sweep needs at least one config")
    reports = [cross_validate(dataset, c, table, split_kind, k, repeats) for c in configs]
    best = min(range(len(configs)),
               key=lambda i: (reports[i].grand()["mue_mean"], reports[i].grand()["rmse_mean"], i))
    return configs[best], reports
