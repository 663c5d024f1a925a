import struct

import numpy as np
import pytest

from mlsolv.encoders import EncoderConfig
from mlsolv.io import (DataError, ModelFileError, SkipReport, ingest, ingest_freesolv, ingest_generic,
                       load_embeddings, load_model, parse_config, read_corpus, save_embeddings, save_model)
from mlsolv.molgraph import parse_smiles
from mlsolv.training import Model, SolvationRecord, TrainConfig, fit

from conftest import DATA


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# --- generic CSV ---------------------------------------------------------------

def test_generic_single_row(tmp_path):
    p = write(tmp_path, "d.csv", "solvent_smiles,solute_smiles,dg_kcal_per_mol\nO,CCO,-5.0\n")
    (r,) = ingest_generic(p)
    assert r.dg_expt == -5.0 and r.source_id == "2" and r.solute_graph.n_atoms == 3


def test_generic_header_only(tmp_path):
    p = write(tmp_path, "d.csv", "solvent_smiles,solute_smiles,dg_kcal_per_mol\n")
    with pytest.raises(DataError, match="no data rows"):
        ingest_generic(p)


def test_generic_bad_smiles_cites_row(tmp_path):
    p = write(tmp_path, "d.csv", "solvent_smiles,solute_smiles,dg_kcal_per_mol\nO,C1C,-1\n")
    with pytest.raises(DataError, match="row 2"):
        ingest_generic(p)


def test_generic_missing_column_named(tmp_path):
    p = write(tmp_path, "d.csv", "solvent_smiles,solute,dg_kcal_per_mol\nO,C,-1\n")
    with pytest.raises(DataError, match="solute_smiles"):
        ingest_generic(p)


@pytest.mark.parametrize("value", ["abc", "nan", "inf", ""])
def test_generic_bad_energy_cites_row(tmp_path, value):
    p = write(tmp_path, "d.csv", f"solvent_smiles,solute_smiles,dg_kcal_per_mol\nO,C,1\nO,CC,{value}\n")
    with pytest.raises(DataError, match="row 3"):
        ingest_generic(p)


def test_generic_quotes_extra_columns_and_order(tmp_path):
    text = ('note,solvent_smiles,solute_smiles,dg_kcal_per_mol,id\n'
            '"a, quoted note",CCO,"c1ccccc1",-3.5,benz\n'
            'x,O,CC(=O)O,-6.7,\n')
    recs = ingest_generic(write(tmp_path, "d.csv", text))
    assert [r.source_id for r in recs] == ["benz", "3"]
    assert [r.dg_expt for r in recs] == [-3.5, -6.7]
    assert recs[0].solvent_graph == parse_smiles("CCO")


# --- FreeSolv ---------------------------------------------------------------------

def test_freesolv_real_file():
    report = SkipReport()
    recs = ingest_freesolv(DATA / "freesolv.csv", report)
    # 642 published rows; the 62 with stereo markers are skipped and reported
    assert len(recs) == 580 and report.count == 62
    assert len(recs) + report.count == 642
    assert all(r.solvent_graph == parse_smiles("O") for r in recs)
    assert all(any(ch in smi for ch in "@/\\") for _, smi, _ in report.skipped_rows)
    assert recs[0].dg_expt == -11.01


@pytest.mark.parametrize("sep", [",", ";", "\t"])
def test_freesolv_delimiters_and_case(tmp_path, sep):
    text = sep.join(["name", "SMILES", "Expt"]) + "\n" + sep.join(["ethanol", "CCO", "-5.0"]) + "\n" \
        + sep.join(["x", "C[C@H](O)CC", "-4.0"]) + "\n"
    report = SkipReport()
    recs = ingest_freesolv(write(tmp_path, "f.txt", text), report)
    assert len(recs) == 1 and recs[0].dg_expt == -5.0 and report.count == 1


def test_freesolv_missing_expt(tmp_path):
    with pytest.raises(DataError, match="expt"):
        ingest_freesolv(write(tmp_path, "f.csv", "smiles,calc\nCCO,-5\n"))


def test_freesolv_non_stereo_failure_is_an_error(tmp_path):
    with pytest.raises(DataError, match="row 2"):
        ingest_freesolv(write(tmp_path, "f.csv", "smiles,expt\nC(,-5\n"))


def test_ingest_autodetect(tmp_path):
    assert len(ingest(write(tmp_path, "a.csv", "smiles,expt\nCCO,-5\n"))) == 1
    with pytest.raises(DataError, match="cannot detect"):
        ingest(write(tmp_path, "b.csv", "a,b\n1,2\n"))


def test_read_corpus(tmp_path):
    p = write(tmp_path, "c.smi", "# comment\nCCO ethanol\n\nC[C@H](O)C\n[Na+]\nc1ccccc1\n")
    graphs, skipped = read_corpus(p)
    assert len(graphs) == 2 and skipped == 2
    with pytest.raises(DataError):
        read_corpus(write(tmp_path, "e.smi", "# nothing\n"))


# --- config -----------------------------------------------------------------------

def test_config_full(monkeypatch):
    monkeypatch.delenv("MLSA_SEED", raising=False)
    text = """
    # model
    encoder = bilm
    cell = lstm   # trailing comment
    layers = 3
    dim = 64
    lambda = 0.001
    epochs = 20
    batch = 16
    lr = 0.0005
    rho = 0.95
    seed = 11
    """
    c = parse_config(text)
    assert c.encoder == EncoderConfig("bilm", 3, 64, "lstm")
    assert (c.l2_lambda, c.epochs, c.batch_size, c.learning_rate, c.rho, c.seed) == (1e-3, 20, 16, 5e-4, 0.95, 11)


def test_config_defaults_and_env_seed(monkeypatch):
    monkeypatch.setenv("MLSA_SEED", "99")
    c = parse_config("seed=1\n")
    assert c.seed == 99 and c.encoder == EncoderConfig() and c.l2_lambda == 1e-4
    monkeypatch.setenv("MLSA_SEED", "x")
    with pytest.raises(DataError):
        parse_config("")


@pytest.mark.parametrize("text", ["epochs", "colour=red", "layers=two", "encoder=mlp", "batch=0"])
def test_config_errors(text, monkeypatch):
    monkeypatch.delenv("MLSA_SEED", raising=False)
    with pytest.raises(DataError):
        parse_config(text)


# --- model and embedding files ------------------------------------------------------

@pytest.fixture
def trained(small_table):
    water = parse_smiles("O")
    data = [SolvationRecord(water, parse_smiles(s), v) for s, v in [("CCO", -5.0), ("CCCCCC", 2.5), ("CC=O", -3.5)]]
    return fit(data, TrainConfig(encoder=EncoderConfig(dim=8), epochs=3), small_table)


def random_pairs(n, rng):
    pool = [parse_smiles(s) for s in ["O", "CCO", "c1ccccc1", "CC(=O)O", "ClCCl", "CCN", "c1ccncc1", "CS(C)=O"]]
    return [(pool[rng.integers(len(pool))], pool[rng.integers(len(pool))]) for _ in range(n)]


@pytest.mark.parametrize("kind, cell", [("gcn", "gru"), ("bilm", "gru"), ("bilm", "lstm")])
def test_model_round_trip_bitwise(kind, cell, small_table, tmp_path, rng):
    model = Model(small_table, TrainConfig(encoder=EncoderConfig(kind=kind, cell=cell, dim=8), seed=4))
    model.loss_trace = [3.0, 1.5]
    save_model(model, tmp_path / "m.mlsa")
    loaded = load_model(tmp_path / "m.mlsa")
    pairs = random_pairs(100, rng)
    recs = [SolvationRecord(a, b, 0.0) for a, b in pairs]
    assert np.array_equal(model.predict_batch(recs), loaded.predict_batch(recs))
    assert loaded.config == model.config and loaded.loss_trace == [3.0, 1.5]


def test_model_file_layout(trained, tmp_path):
    path = tmp_path / "m.mlsa"
    save_model(trained, path)
    raw = path.read_bytes()
    assert raw[:4] == b"MLSA" and raw[4] == 1
    (n,) = struct.unpack("<I", raw[5:9])
    import json
    meta = json.loads(raw[9:9 + n])
    assert meta["training"]["epochs"] == 3 and len(meta["vocab"]) == len(trained.table.vocab)


def test_model_version_mismatch(trained, tmp_path):
    path = tmp_path / "m.mlsa"
    save_model(trained, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 2
    path.write_bytes(bytes(raw))
    with pytest.raises(ModelFileError, match="version"):
        load_model(path)


def test_model_corruption(trained, tmp_path):
    path = tmp_path / "m.mlsa"
    save_model(trained, path)
    raw = path.read_bytes()
    (tmp_path / "t.mlsa").write_bytes(raw[:-5])
    with pytest.raises(ModelFileError, match="truncated"):
        load_model(tmp_path / "t.mlsa")
    (tmp_path / "b.mlsa").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ModelFileError, match="magic"):
        load_model(tmp_path / "b.mlsa")


def test_embedding_round_trip(small_table, tmp_path):
    save_embeddings(small_table, tmp_path / "e.mlse")
    t = load_embeddings(tmp_path / "e.mlse")
    assert t.vocab.tokens == small_table.vocab.tokens and t.vocab.counts == small_table.vocab.counts
    assert np.array_equal(t.input, small_table.input) and np.array_equal(t.context, small_table.context)
    with pytest.raises(ModelFileError):
        (tmp_path / "bad.mlse").write_bytes((tmp_path / "e.mlse").read_bytes()[:-8])
        load_embeddings(tmp_path / "bad.mlse")
