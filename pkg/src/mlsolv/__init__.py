"""Solvation free energies as sums of pairwise atomic interactions between
learned solvent and solute atom features."""

from .embed import EmbeddingTable, SkipGramConfig, Vocabulary, embed_molecule, pretrain_on_graphs, train_skipgram
from .encoders import Encoder, EncoderConfig
from .interaction import InteractionMap, SolvationPrediction, explain, interaction_map
from .io import (DataError, ModelFileError, ingest_freesolv, ingest_generic, load_embeddings, load_model,
                 parse_config, save_embeddings, save_model)
from .molgraph import (Atom, BondOrder, MolecularGraph, MultiFragmentError, SmilesError, UnsupportedFeatureError,
                       fingerprint, parse_smiles, propagation_matrix)
from .pca import pca_project
from .training import (CvReport, Model, SolvationRecord, TrainConfig, cross_validate, fit, metrics, predict,
                       random_kfold, scaffold_kfold, sweep)

__version__ = "0.1.0"
