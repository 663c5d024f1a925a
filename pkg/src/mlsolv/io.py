"""Dataset ingestion, config files, and binary model / embedding files.

Model file layout (little-endian)::

    b"MLSA" | u8 version | u32 json_len | json metadata (UTF-8)
    repeated until EOF:
        u16 name_len | name (UTF-8) | u8 rank | u32 dims[rank] | f64 data[prod(dims)]

Standalone embedding file layout::

    b"MLSE" | u8 version | u32 json_len | json {version, d, vocab, counts, min_count}
    | f64 input[V*d] | f64 context[V*d]
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embed import EmbeddingTable, Vocabulary
from .encoders import EncoderConfig
from .molgraph import MolecularGraph, SmilesError, UnsupportedFeatureError, parse_smiles
from .training import Model, SolvationRecord, TrainConfig

log = logging.getLogger(__name__)

MODEL_MAGIC = b"MLSA"
EMBED_MAGIC = b"MLSE"
FORMAT_VERSION = 1
WATER = "O"


class DataError(ValueError):
    pass


class ModelFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# ingestion


@dataclass
class SkipReport:
    skipped_rows: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.skipped_rows)


def _read_rows(path, delimiter=None):
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise DataError(f"{path}: empty file")
    if delimiter is None:
        header = lines[0]
        counts = {d: header.count(d) for d in (",", ";", "\t")}
        delimiter = max(counts, key=counts.get)
    reader = csv.reader(lines, delimiter=delimiter, quotechar='"')
    header = [h.strip() for h in next(reader)]
    return header, list(reader)


def _column(header, name, path, case_insensitive=False):
    for i, h in enumerate(header):
        if h == name or (case_insensitive and h.lower() == name.lower()):
            return i
    raise DataError(f"{path}: missing column {name!r}")


def _parse_energy(value: str, row: int, path) -> float:
    try:
        dg = float(value)
    except ValueError:
        raise DataError(f"{path}: row {row}: non-numeric free energy {value!r}") from None
    if not math.isfinite(dg):
        raise DataError(f"{path}: row {row}: non-finite free energy {value!r}")
    return dg


def _parse_smiles_at(text: str, row: int, path, cache: dict) -> MolecularGraph:
    graph = cache.get(text)
    if graph is None:
        try:
            graph = parse_smiles(text)
        except SmilesError as exc:
            raise DataError(f"{path}: row {row}: {exc}") from exc
        cache[text] = graph
    return graph


def ingest_generic(path) -> list[SolvationRecord]:
    """Read ``solvent_smiles, solute_smiles, dg_kcal_per_mol`` CSV rows.

    Row numbers count the header as row 1; they become the record ids.
    """
    header, rows = _read_rows(path, ",")
    i_solv = _column(header, "solvent_smiles", path)
    i_solu = _column(header, "solute_smiles", path)
    i_dg = _column(header, "dg_kcal_per_mol", path)
    i_id = header.index("id") if "id" in header else None
    cache: dict[str, MolecularGraph] = {}
    records = []
    for offset, row in enumerate(rows):
        rownum = offset + 2
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) <= max(i_solv, i_solu, i_dg):
            raise DataError(f"{path}: row {rownum}: too few fields")
        solvent = _parse_smiles_at(row[i_solv].strip(), rownum, path, cache)
        solute = _parse_smiles_at(row[i_solu].strip(), rownum, path, cache)
        dg = _parse_energy(row[i_dg].strip(), rownum, path)
        rid = row[i_id].strip() if i_id is not None and row[i_id].strip() else str(rownum)
        records.append(SolvationRecord(solvent, solute, dg, rid))
    if not records:
        raise DataError(f"{path}: no data rows")
    return records


def ingest_freesolv(path, report: SkipReport | None = None) -> list[SolvationRecord]:
    """Read a FreeSolv-style table (``smiles`` and ``expt`` columns) as
    hydration records with water as solvent.

    Rows using stereochemistry are skipped, logged and listed in ``report``;
    any other bad row is an error.
    """
    header, rows = _read_rows(path)
    i_smiles = _column(header, "smiles", path, case_insensitive=True)
    i_expt = _column(header, "expt", path, case_insensitive=True)
    report = report if report is not None else SkipReport()
    water = parse_smiles(WATER)
    cache: dict[str, MolecularGraph] = {}
    records = []
    for offset, row in enumerate(rows):
        rownum = offset + 2
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) <= max(i_smiles, i_expt):
            raise DataError(f"{path}: row {rownum}: too few fields")
        smiles = row[i_smiles].strip()
        try:
            solute = parse_smiles(smiles) if smiles not in cache else cache[smiles]
        except UnsupportedFeatureError as exc:
            if any(ch in smiles for ch in "@/\\"):
                report.skipped_rows.append((rownum, smiles, str(exc)))
                continue
            raise DataError(f"{path}: row {rownum}: {exc}") from exc
        except SmilesError as exc:
            raise DataError(f"{path}: row {rownum}: {exc}") from exc
        cache[smiles] = solute
        records.append(SolvationRecord(water, solute, _parse_energy(row[i_expt].strip(), rownum, path), str(rownum)))
    if report.count:
        log.warning("%s: skipped %d stereo-annotated rows", path, report.count)
    if not records:
        raise DataError(f"{path}: no data rows")
    return records


def ingest(path, fmt: str = "auto", report: SkipReport | None = None) -> list[SolvationRecord]:
    if fmt == "auto":
        header, _ = _read_rows(path)
        lowered = {h.lower() for h in header}
        fmt = "generic" if "solvent_smiles" in header else "freesolv" if {"smiles", "expt"} <= lowered else None
        if fmt is None:
            raise DataError(f"{path}: cannot detect format; need solvent_smiles/solute_smiles/dg_kcal_per_mol "
                            "or smiles/expt columns")
    if fmt == "generic":
        return ingest_generic(path)
    if fmt == "freesolv":
        return ingest_freesolv(path, report)
    raise DataError(f"unknown data format {fmt!r}")


def read_corpus(path) -> tuple[list[MolecularGraph], int]:
    """Parse a one-SMILES-per-line corpus; returns (graphs, skipped count).

    Lines starting with ``#`` are comments; a second whitespace-separated
    field (a name) is ignored.
    """
    graphs, skipped = [], 0
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            graphs.append(parse_smiles(line.split()[0]))
        except SmilesError:
            skipped += 1
    if not graphs:
        raise DataError(f"{path}: corpus contains no usable SMILES")
    return graphs, skipped


# ---------------------------------------------------------------------------
# config


_CONFIG_KEYS = {
    "encoder": ("encoder", "kind", str),
    "cell": ("encoder", "cell", str),
    "layers": ("encoder", "layers", int),
    "dim": ("encoder", "dim", int),
    "lambda": (None, "l2_lambda", float),
    "epochs": (None, "epochs", int),
    "batch": (None, "batch_size", int),
    "lr": (None, "learning_rate", float),
    "rho": (None, "rho", float),
    "seed": (None, "seed", int),
}


def parse_config(text: str) -> TrainConfig:
    """Parse ``key=value`` lines (``#`` comments) into a :class:`TrainConfig`.

    ``MLSA_SEED`` in the environment overrides ``seed``.
    """
    top, enc = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_KEYS:
            raise DataError(f"config line {lineno}: unknown key {key!r}")
        section, name, conv = _CONFIG_KEYS[key]
        try:
            parsed = conv(value)
        except ValueError:
            raise DataError(f"config line {lineno}: bad value for {key}: {value!r}") from None
        (enc if section == "encoder" else top)[name] = parsed
    env_seed = os.environ.get("MLSA_SEED")
    if env_seed is not None:
        try:
            top["seed"] = int(env_seed)
        except ValueError:
            raise DataError(f"MLSA_SEED must be an integer, got {env_seed!r}") from None
    try:
        return TrainConfig(encoder=EncoderConfig(**enc), **top)
    except ValueError as exc:
        raise DataError(f"invalid config: {exc}") from exc


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# binary files


def _write_tensor(fh, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<B", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes())


def _read_exact(buf: memoryview, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(buf):
        raise ModelFileError("truncated file")
    return bytes(buf[pos:pos + n]), pos + n


def _read_header(data: bytes, magic: bytes):
    buf = memoryview(data)
    head, pos = _read_exact(buf, 0, 4)
    if head != magic:
        raise ModelFileError(f"bad magic bytes {head!r}, expected {magic!r}")
    (version,), pos = struct.unpack("<B", _read_exact(buf, pos, 1)[0]), pos + 1
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    (length,) = struct.unpack("<I", _read_exact(buf, pos, 4)[0])
    pos += 4
    raw, pos = _read_exact(buf, pos, length)
    return json.loads(raw.decode("utf-8")), buf, pos


def _vocab_meta(vocab: Vocabulary) -> dict:
    return {"vocab": [int(t) for t in vocab.tokens], "counts": [int(c) for c in vocab.counts],
            "min_count": vocab.min_count}


def save_model(model: Model, path) -> None:
    meta = {
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        **_vocab_meta(model.table.vocab),
        "d": model.table.dim,
        "training": {"seed": model.config.seed, "epochs": model.config.epochs,
                     "final_loss": model.loss_trace[-1] if model.loss_trace else None,
                     "loss_trace": model.loss_trace},
    }
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        _write_tensor(fh, "embedding.input", model.table.input)
        _write_tensor(fh, "embedding.context", model.table.context)
        for p in model.parameters:
            _write_tensor(fh, p.name, p.value)


def load_model(path) -> Model:
    meta, buf, pos = _read_header(Path(path).read_bytes(), MODEL_MAGIC)
    tensors = {}
    while pos < len(buf):
        (n,) = struct.unpack("<H", _read_exact(buf, pos, 2)[0])
        pos += 2
        name, pos = _read_exact(buf, pos, n)
        (rank,) = struct.unpack("<B", _read_exact(buf, pos, 1)[0])
        pos += 1
        dims = struct.unpack(f"<{rank}I", _read_exact(buf, pos, 4 * rank)[0])
        pos += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        raw, pos = _read_exact(buf, pos, 8 * count)
        tensors[name.decode("utf-8")] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    try:
        vocab = Vocabulary(meta["vocab"], meta["counts"], meta["min_count"])
        table = EmbeddingTable(vocab, tensors.pop("embedding.input"), tensors.pop("embedding.context"))
        config = TrainConfig.from_dict(meta["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"corrupt model metadata: {exc}") from exc
    model = Model(table, config)
    for p in model.parameters:
        if p.name not in tensors:
            raise ModelFileError(f"missing tensor {p.name!r}")
        value = tensors.pop(p.name)
        if value.shape != p.shape:
            raise ModelFileError(f"tensor {p.name!r} has shape {value.shape}, expected {p.shape}")
        p.value[...] = value
    if tensors:
        raise ModelFileError(f"unexpected tensors: {sorted(tensors)}")
    model.loss_trace = list(meta.get("training", {}).get("loss_trace") or [])
    return model


def save_embeddings(table: EmbeddingTable, path) -> None:
    meta = {"version": FORMAT_VERSION, "d": table.dim, **_vocab_meta(table.vocab)}
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<B", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(table.input, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.context, dtype="<f8").tobytes())


def load_embeddings(path) -> EmbeddingTable:
    meta, buf, pos = _read_header(Path(path).read_bytes(), EMBED_MAGIC)
    V, d = len(meta["vocab"]), int(meta["d"])
    need = 2 * V * d * 8
    if len(buf) - pos != need:
        raise ModelFileError(f"embedding payload is {len(buf) - pos} bytes, expected {need}")
    data = np.frombuffer(bytes(buf[pos:]), dtype="<f8").astype(np.float64)
    vocab = Vocabulary(meta["vocab"], meta["counts"], meta["min_count"])
    return EmbeddingTable(vocab, data[:V * d].reshape(V, d).copy(), data[V * d:].reshape(V, d).copy())
