"""Acceptance criteria 1-10. Each test carries a ``criterion`` marker; the
terminal summary prints one PASS/FAIL line per criterion with the measured
numbers. Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import json
import time

import numpy as np
import pytest

from mlsolv.cli import main as cli_main
from mlsolv.embed import SkipGramConfig, embed_molecule, train_skipgram
from mlsolv.encoders import EncoderConfig
from mlsolv.interaction import explain
from mlsolv.io import load_model, save_embeddings, save_model
from mlsolv.molgraph import BondOrder, parse_smiles, propagation_matrix
from mlsolv.numcore import grad_check
from mlsolv.training import Model, SolvationRecord, TrainConfig, batch_loss, fit, predict

from conftest import DATA
from test_embed import cosine, synthetic_corpus

S, D, A = BondOrder.SINGLE, BondOrder.DOUBLE, BondOrder.AROMATIC
WATER = parse_smiles("O")


# 1 ---------------------------------------------------------------------------------

@pytest.mark.criterion(1, "readout identity sum(I) = u.v = marginal sums, 1000 pairs, rel err < 1e-9")
def test_readout_identity(measured):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        nv, nu = rng.integers(1, 19), rng.integers(1, 29)
        P, Q = rng.standard_normal((nv, 128)), rng.standard_normal((nu, 128))
        res = explain(P, Q)
        scale = max(abs(res.delta_g), 1e-300)
        for other in (res.u @ res.v, res.solute_contrib.sum(), res.solvent_contrib.sum()):
            worst = max(worst, abs(other - res.delta_g) / scale)
    measured(f"max relative error {worst:.2e}")
    assert worst < 1e-9


# 2 ---------------------------------------------------------------------------------

@pytest.mark.criterion(2, "full-loss central-difference gradient check, h=1e-4, all encoder/cell kinds, "
                          "2-record batch, max rel err < 1e-4")
@pytest.mark.parametrize("kind, cell", [("gcn", "gru"), ("bilm", "gru"), ("bilm", "lstm")])
def test_gradient_check(kind, cell, corpus_table, freesolv, measured):
    batch = [freesolv[0], SolvationRecord(parse_smiles("CCO"), freesolv[1].solute_graph, freesolv[1].dg_expt)]
    model = Model(corpus_table, TrainConfig(encoder=EncoderConfig(kind=kind, cell=cell)))
    t0 = time.perf_counter()
    rep = grad_check(lambda: batch_loss(model, batch), model.parameters, h=1e-4, tol=1e-4)
    measured(f"{kind}/{cell}: max rel err {rep.max_rel_error:.2e} over {rep.n_checked} coords "
             f"(per-coordinate max {rep.max_coord_rel_error:.2e}), {time.perf_counter() - t0:.1f}s")
    assert rep.passed, rep.worst


# 3 ---------------------------------------------------------------------------------

@pytest.mark.criterion(3, "GCN permutation equivariance on 100 molecules, 1e-9 absolute")
def test_gcn_permutation_equivariance(corpus_table, freesolv, measured):
    rng = np.random.default_rng(3)
    model = Model(corpus_table, TrainConfig(seed=3))
    picks = rng.choice(len(freesolv), 100, replace=False)
    worst_p = worst_g = 0.0
    for i in picks:
        g = freesolv[i].solute_graph
        perm = rng.permutation(g.n_atoms)
        gp = g.permute(perm)
        _, Q, _, _ = model.encode([WATER], [g])
        _, Qp, _, _ = model.encode([WATER], [gp])
        worst_p = max(worst_p, np.abs(Qp.value - Q.value[perm]).max())
        worst_g = max(worst_g, abs(predict(model, WATER, gp).delta_g - predict(model, WATER, g).delta_g))
    measured(f"max |P row error| {worst_p:.1e}, max |dG error| {worst_g:.1e}")
    assert worst_p <= 1e-9 and worst_g <= 1e-9


# 4 ---------------------------------------------------------------------------------

@pytest.mark.criterion(4, "benzene in water: six equal GCN solute contributions, relative spread < 1e-9")
def test_benzene_symmetry(corpus_table, freesolv, measured):
    benzene = parse_smiles("c1ccccc1")
    untrained = Model(corpus_table, TrainConfig())
    trained = fit(freesolv[:16], TrainConfig(epochs=5), corpus_table)
    for label, model in (("untrained", untrained), ("trained", trained)):
        c = predict(model, WATER, benzene).solute_contrib
        spread = np.ptp(c) / np.abs(c).max()
        measured(f"{label}: contributions {c[0]:.6f}, relative spread {spread:.1e}")
        assert len(c) == 6 and spread < 1e-9


# 5 ---------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def overfit_runs(corpus_table, freesolv):
    data = freesolv[:32]
    config = TrainConfig(epochs=500)
    t0 = time.perf_counter()
    first = fit(data, config, corpus_table)
    elapsed = time.perf_counter() - t0
    second = fit(data, config, corpus_table)
    return data, first, second, elapsed


@pytest.mark.criterion(5, "overfit: GCN, 32 FreeSolv records, 500 epochs, defaults: training MUE < 0.05 "
                          "and bitwise-deterministic")
def test_overfit_smoke(overfit_runs, measured):
    data, first, second, elapsed = overfit_runs
    targets = np.array([r.dg_expt for r in data])
    mue = float(np.mean(np.abs(first.predict_batch(data) - targets)))
    same = all(np.array_equal(a.value, b.value) for a, b in zip(first.parameters, second.parameters))
    measured(f"training MUE {mue:.4f} kcal/mol (target < 0.05); bitwise identical reruns: {same}; "
             f"{elapsed:.1f}s per run")
    assert same
    assert mue < 0.05


def test_overfit_training_progress(overfit_runs):
    _, model, _, _ = overfit_runs
    ratio = model.loss_trace[-1] / model.loss_trace[0]
    print(f"epoch-500 / epoch-0 loss = {ratio:.4f}")
    assert ratio < 0.01


def test_overfit_prediction_on_training_record(overfit_runs):
    data, model, _, _ = overfit_runs
    r = data[0]
    got = predict(model, r.solvent_graph, r.solute_graph).delta_g
    print(f"record {r.source_id}: predicted {got:.4f}, target {r.dg_expt:.4f}")
    assert abs(got - r.dg_expt) < 0.1


# 6, 7 ------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cv_reports(corpus_table, tmp_path_factory):
    """Run the CLI exactly as a user would: random 5x9 and scaffold 5x1 CV
    with the default GCN config on the ingested FreeSolv file."""
    work = tmp_path_factory.mktemp("cv")
    save_embeddings(corpus_table, work / "emb.mlse")
    (work / "default.cfg").write_text("# all defaults\nencoder = gcn\n")
    out = {}
    for split, repeats in (("random", 9), ("scaffold", 1)):
        t0 = time.perf_counter()
        code = cli_main([
            "cv", str(DATA / "freesolv.csv"), str(work / "default.cfg"), "--split", split, "--k", "5",
            "--repeats", str(repeats), "--out", str(work / f"{split}.json"), "--embeddings", str(work / "emb.mlse")])
        assert code == 0
        out[split] = (json.loads((work / f"{split}.json").read_text()), time.perf_counter() - t0)
    return out


@pytest.mark.criterion(6, "random 5-fold CV (x9) grand-mean MUE beats constant-mean baseline by >= 30%; "
                          "scaffold CV reported; within 1 hour")
def test_cv_beats_baseline(cv_reports, measured):
    rnd, t_rnd = cv_reports["random"]
    scf, t_scf = cv_reports["scaffold"]
    g, gs = rnd["grand"], scf["grand"]
    gain = 1.0 - g["mue_mean"] / g["baseline_mue_mean"]
    measured(f"random: MUE {g['mue_mean']:.3f} +/- {g['mue_std']:.3f} vs baseline {g['baseline_mue_mean']:.3f} "
             f"(improvement {100 * gain:.1f}%), RMSE {g['rmse_mean']:.3f}, R2 {g['r2_mean']:.3f}")
    measured(f"scaffold: MUE {gs['mue_mean']:.3f} vs baseline {gs['baseline_mue_mean']:.3f}, "
             f"RMSE {gs['rmse_mean']:.3f}; worse than random: {gs['mue_mean'] > g['mue_mean']}")
    measured(f"runtime {t_rnd / 60:.1f} min random + {t_scf / 60:.1f} min scaffold")
    assert gain >= 0.30
    assert t_rnd + t_scf <= 3600


@pytest.mark.criterion(7, "cv --k 5 --repeats 9 emits 45 disjoint covering folds; scaffold folds solute-disjoint")
def test_cv_protocol_structure(cv_reports, freesolv, measured):
    rnd, _ = cv_reports["random"]
    assert len(rnd["folds"]) == 45
    n = len(freesolv)
    for r in range(9):
        tests = [f["test_indices"] for f in rnd["folds"] if f["repeat"] == r]
        assert len(tests) == 5
        flat = [i for t in tests for i in t]
        assert len(flat) == len(set(flat)) == n
    scf, _ = cv_reports["scaffold"]
    home = {}
    for f in scf["folds"]:
        for i in f["test_indices"]:
            assert home.setdefault(freesolv[i].solute_graph, f["fold"]) == f["fold"]
    assert sorted(i for f in scf["folds"] for i in f["test_indices"]) == list(range(n))
    measured(f"45 random folds over {n} records; {len(scf['folds'])} scaffold folds, sizes "
             f"{[f['n_test'] for f in scf['folds']]}")


# 8 ---------------------------------------------------------------------------------

@pytest.mark.criterion(8, "skip-gram: cosine(A,B) - cosine(A,R) >= 0.1 on the synthetic corpus")
def test_skipgram_sanity(measured):
    table = train_skipgram(synthetic_corpus(1000), SkipGramConfig(seed=0))
    ab, ar = cosine(table.vector("A"), table.vector("B")), cosine(table.vector("A"), table.vector("R"))
    measured(f"cos(A,B) {ab:.3f}, cos(A,R) {ar:.3f}, margin {ab - ar:.3f}")
    assert ab - ar >= 0.1


# 9 ---------------------------------------------------------------------------------

@pytest.mark.criterion(9, "model save/load round trip reproduces 100 predictions bitwise")
def test_persistence(corpus_table, freesolv, tmp_path, measured):
    rng = np.random.default_rng(9)
    model = fit(freesolv[:40], TrainConfig(epochs=3), corpus_table)
    save_model(model, tmp_path / "m.mlsa")
    loaded = load_model(tmp_path / "m.mlsa")
    solvents = [WATER] + [parse_smiles(s) for s in ["CCO", "CCCCCCCCO", "ClC(Cl)Cl", "c1ccccc1", "CS(C)=O"]]
    pairs = [SolvationRecord(solvents[rng.integers(len(solvents))],
                             freesolv[rng.integers(len(freesolv))].solute_graph, 0.0) for _ in range(100)]
    before, after = model.predict_batch(pairs), loaded.predict_batch(pairs)
    measured(f"{int(np.sum(before == after))}/100 identical; file {(tmp_path / 'm.mlsa').stat().st_size} bytes")
    assert np.array_equal(before, after)


# 10 --------------------------------------------------------------------------------

SIX_ATOM = {
    "c1ccccc1": {(0, 1, A), (1, 2, A), (2, 3, A), (3, 4, A), (4, 5, A), (0, 5, A)},
    "CCCCCC": {(0, 1, S), (1, 2, S), (2, 3, S), (3, 4, S), (4, 5, S)},
    "CCCCCCl": {(0, 1, S), (1, 2, S), (2, 3, S), (3, 4, S), (4, 5, S)},
    "CCCCC=O": {(0, 1, S), (1, 2, S), (2, 3, S), (3, 4, S), (4, 5, D)},
    "CCCCCN": {(0, 1, S), (1, 2, S), (2, 3, S), (3, 4, S), (4, 5, S)},
}
ELEMENTS = {"c1ccccc1": "CCCCCC", "CCCCCC": "CCCCCC", "CCCCCCl": ["C"] * 5 + ["Cl"], "CCCCC=O": "CCCCCO",
            "CCCCCN": "CCCCCN"}


@pytest.mark.criterion(10, "parser corpus: five six-heavy-atom solutes with hand-checked bonds; water has one atom "
                           "and runs the degree-zero GCN path")
def test_parser_corpus(corpus_table, measured):
    for smiles, bonds in SIX_ATOM.items():
        g = parse_smiles(smiles)
        assert g.n_atoms == 6
        assert {(min(i, j), max(i, j), o) for i, j, o in g.bonds} == bonds
        assert [a.element for a in g.atoms] == list(ELEMENTS[smiles])
    g = parse_smiles("O")
    assert g.n_atoms == 1 and g.bonds == () and np.array_equal(propagation_matrix(g), [[0.0]])
    model = Model(corpus_table, TrainConfig())
    X = embed_molecule(g, corpus_table)
    enc = model.solvent_encoder
    H = X
    layers = []
    for p in enc.gcn_layers:
        H = np.tanh(H @ p.W2.value + p.b.value)
        layers.append(H)
    w = np.exp(enc.mix_logits.value) / np.exp(enc.mix_logits.value).sum()
    P, _, _, _ = model.encode([g], [g])
    assert np.any(X) and np.allclose(P.value, sum(wi * h for wi, h in zip(w, layers)), atol=1e-14)
    measured("benzene, n-hexane, 1-chloropentane, pentanal, 1-aminopentane: 6 atoms each; water: 1 atom, "
             "non-zero embedding, skip-only GCN output")
