"""Pairwise atomic interaction map, solvation-energy readout and group
contributions.

Sign convention: ``I = -P Q^T`` and ``dG = sum(I)``. The molecular vectors are
``u = sum_a p_a`` and ``v = -sum_g q_g`` so that ``dG = u . v`` holds exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class InteractionMap:
    I: np.ndarray  # (n_solvent, n_solute), kcal/mol per atom pair

    @property
    def solvent_atom_count(self) -> int:
        return self.I.shape[0]

    @property
    def solute_atom_count(self) -> int:
        return self.I.shape[1]


@dataclass(frozen=True)
class SolvationPrediction:
    delta_g: float
    map: InteractionMap
    u: np.ndarray
    v: np.ndarray
    solute_contrib: np.ndarray
    solvent_contrib: np.ndarray


def interaction_map(P, Q) -> InteractionMap:
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if P.shape[1] != Q.shape[1]:
        raise ValueError(f"feature dimensions differ: solvent {P.shape} vs solute {Q.shape}")
    return InteractionMap(-(P @ Q.T))


def solvation_energy(imap: InteractionMap) -> float:
    return float(imap.I.sum())


def molecular_vectors(P, Q) -> tuple[np.ndarray, np.ndarray]:
    u = np.asarray(P, dtype=np.float64).sum(axis=0)
    v = -np.asarray(Q, dtype=np.float64).sum(axis=0)
    return u, v


def group_contributions(imap: InteractionMap) -> tuple[np.ndarray, np.ndarray]:
    """``(solute_contrib, solvent_contrib)``: column sums and row sums of the map."""
    return imap.I.sum(axis=0), imap.I.sum(axis=1)


def explain(P, Q) -> SolvationPrediction:
    imap = interaction_map(P, Q)
    u, v = molecular_vectors(P, Q)
    solute, solvent = group_contributions(imap)
    return SolvationPrediction(solvation_energy(imap), imap, u, v, solute, solvent)
