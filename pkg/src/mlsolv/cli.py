"""``mlsolv`` command-line workflow."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .embed import SkipGramConfig, pretrain_on_graphs
from .molgraph import SmilesError, parse_smiles
from .pca import pca_project
from .training import SPLIT_KINDS, cross_validate, fit, predict

log = logging.getLogger("mlsolv")


class CliError(Exception):
    pass


def _parse(smiles: str, role: str):
    try:
        return parse_smiles(smiles)
    except SmilesError as exc:
        raise CliError(f"bad {role} SMILES {smiles!r}: {exc}") from exc


def _load_table(args, config):
    if args.embeddings:
        table = io.load_embeddings(args.embeddings)
    else:
        if not args.corpus:
            raise CliError("need --embeddings FILE or --corpus FILE to obtain atom embeddings")
        graphs, skipped = io.read_corpus(args.corpus)
        if skipped:
            log.warning("corpus: skipped %d unparseable lines", skipped)
        table = pretrain_on_graphs(graphs, SkipGramConfig(dim=config.encoder.dim, seed=config.seed))
    if table.dim != config.encoder.dim:
        raise CliError(f"embedding dimension {table.dim} does not match config dim={config.encoder.dim}")
    return table


def cmd_pretrain(args):
    graphs, skipped = io.read_corpus(args.corpus)
    print(f"parsed {len(graphs)} molecules, skipped {skipped} unparseable lines", file=sys.stderr)
    cfg = SkipGramConfig(dim=args.dim, window=args.window, negatives=args.negatives, epochs=args.epochs,
                         seed=args.seed)
    table = pretrain_on_graphs(graphs, cfg)
    io.save_embeddings(table, args.out)
    print(f"wrote {len(table.vocab)} token vectors (d={table.dim}) to {args.out}", file=sys.stderr)


def cmd_train(args):
    config = io.load_config(args.config)
    data = io.ingest(args.data, args.format)
    table = _load_table(args, config)
    model = fit(data, config, table)
    io.save_model(model, args.out)
    print(f"trained on {len(data)} records; final loss {model.loss_trace[-1] if model.loss_trace else float('nan'):.6f}",
          file=sys.stderr)


def cmd_cv(args):
    config = io.load_config(args.config)
    data = io.ingest(args.data, args.format)
    table = _load_table(args, config)
    report = cross_validate(data, config, table, args.split, args.k, args.repeats)
    Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
    g = report.grand()
    print(f"{args.split} {args.k}-fold x{report.repeats}: MUE {g['mue_mean']:.4f} +/- {g['mue_std']:.4f} "
          f"(baseline {g['baseline_mue_mean']:.4f})", file=sys.stderr)


def cmd_predict(args):
    model = io.load_model(args.model)
    result = predict(model, _parse(args.solvent, "solvent"), _parse(args.solute, "solute"))
    print(f"{result.delta_g:.4f}")


def cmd_explain(args):
    model = io.load_model(args.model)
    solvent, solute = _parse(args.solvent, "solvent"), _parse(args.solute, "solute")
    result = predict(model, solvent, solute)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["role", "atom_index", "element", "contribution_kcal_mol"])
        for role, graph, contrib in (("solute", solute, result.solute_contrib),
                                     ("solvent", solvent, result.solvent_contrib)):
            for i, (atom, c) in enumerate(zip(graph.atoms, contrib)):
                w.writerow([role, i, atom.element, repr(float(c))])
    print(f"{result.delta_g:.4f}")


def cmd_project(args):
    model = io.load_model(args.model)
    data = io.ingest(args.data, args.format)
    if len(data) < 2:
        raise CliError("project needs at least two records")
    vectors = np.array([model.molecular_vector(r.solute_graph) for r in data])
    coords = pca_project(vectors, 2)
    preds = model.predict_batch(data)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "pc1", "pc2", "dg_pred"])
        for r, (a, b), p in zip(data, coords, preds):
            w.writerow([r.source_id, repr(float(a)), repr(float(b)), repr(float(p))])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mlsolv", description="Solvation free energies from atomic interaction maps.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("pretrain", help="train skip-gram token embeddings on a SMILES corpus")
    s.add_argument("corpus")
    s.add_argument("out")
    s.add_argument("--dim", type=int, default=128)
    s.add_argument("--window", type=int, default=2)
    s.add_argument("--negatives", type=int, default=5)
    s.add_argument("--epochs", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_pretrain)

    def data_opts(s):
        s.add_argument("--format", choices=("auto", "generic", "freesolv"), default="auto")

    def table_opts(s):
        s.add_argument("--embeddings", help="embedding file from `mlsolv pretrain`")
        s.add_argument("--corpus", help="pretrain embeddings on this corpus instead")

    s = sub.add_parser("train", help="fit a model")
    s.add_argument("data")
    s.add_argument("config")
    s.add_argument("out")
    data_opts(s)
    table_opts(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("cv", help="cross-validate a config")
    s.add_argument("data")
    s.add_argument("config")
    s.add_argument("--split", choices=SPLIT_KINDS, default="random")
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--repeats", type=int, default=None)
    s.add_argument("--out", required=True)
    data_opts(s)
    table_opts(s)
    s.set_defaults(func=cmd_cv)

    s = sub.add_parser("predict", help="print the predicted free energy in kcal/mol")
    s.add_argument("model")
    s.add_argument("solvent")
    s.add_argument("solute")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("explain", help="write per-atom group contributions as CSV")
    s.add_argument("model")
    s.add_argument("solvent")
    s.add_argument("solute")
    s.add_argument("out")
    s.set_defaults(func=cmd_explain)

    s = sub.add_parser("project", help="write PCA coordinates of solute vectors as CSV")
    s.add_argument("model")
    s.add_argument("data")
    s.add_argument("out")
    data_opts(s)
    s.set_defaults(func=cmd_project)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        args.func(args)
    except (CliError, ValueError, OSError, FloatingPointError) as exc:
        msg = " ".join(str(exc).split()) or type(exc).__name__
        print(f"mlsolv {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
