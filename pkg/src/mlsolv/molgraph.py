"""SMILES subset parser, heavy-atom molecular graphs, substructure tokens and
hashed circular fingerprints."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

ELEMENTS = ("H", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC_SYMBOLS = {"c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
ORGANIC_SUBSET = ("Cl", "Br", "C", "N", "O", "P", "S", "F", "I")

# smallest standard valence that accommodates the bond-order sum is used
VALENCES = {
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
    "H": (1,),
}

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1


class SmilesError(ValueError):
    """Malformed SMILES. ``offset`` is the 0-based character position."""

    def __init__(self, message: str, offset: int, smiles: str = ""):
        super().__init__(f"{message} at offset {offset}" + (f" in {smiles!r}" if smiles else ""))
        self.offset = offset
        self.smiles = smiles


class UnsupportedFeatureError(SmilesError):
    pass


class MultiFragmentError(SmilesError):
    pass


class BondOrder(IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence(self) -> float:
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


_BOND_SYMBOLS = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC}


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    implicit_h: int = 0

    def __post_init__(self):
        if self.element not in ELEMENTS:
            raise ValueError(f"unsupported element {self.element!r}")
        if self.implicit_h < 0:
            raise ValueError("implicit_h must be non-negative")


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[tuple[int, int, BondOrder], ...]
    smiles_source: str = ""

    def __post_init__(self):
        n = len(self.atoms)
        if n < 1:
            raise ValueError("a molecular graph needs at least one heavy atom")
        seen = set()
        for i, j, _ in self.bonds:
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"invalid bond ({i}, {j}) for {n} atoms")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate bond {key}")
            seen.add(key)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_atoms, self.n_atoms))
        for i, j, _ in self.bonds:
            A[i, j] = A[j, i] = 1.0
        return A

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def neighbors(self) -> list[list[tuple[int, BondOrder]]]:
        nbrs: list[list[tuple[int, BondOrder]]] = [[] for _ in self.atoms]
        for i, j, order in self.bonds:
            nbrs[i].append((j, order))
            nbrs[j].append((i, order))
        return nbrs

    def permute(self, perm) -> "MolecularGraph":
        """Relabel atoms so that new atom ``k`` is old atom ``perm[k]``."""
        perm = [int(p) for p in perm]
        if sorted(perm) != list(range(self.n_atoms)):
            raise ValueError("perm must be a permutation of atom indices")
        inverse = {old: new for new, old in enumerate(perm)}
        atoms = tuple(self.atoms[p] for p in perm)
        bonds = []
        for i, j, order in self.bonds:
            a, b = inverse[i], inverse[j]
            bonds.append((min(a, b), max(a, b), order))
        return MolecularGraph(atoms, tuple(sorted(bonds)), self.smiles_source)


# ---------------------------------------------------------------------------
# parsing


@dataclass
class _RawAtom:
    element: str
    aromatic: bool
    bracket: bool
    charge: int = 0
    hcount: int = 0


def _implicit_h(element: str, bond_sum: float) -> int:
    for valence in VALENCES[element]:
        if valence >= bond_sum - 1e-9:
            return max(0, math.floor(valence - bond_sum + 1e-9))
    return 0


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[_RawAtom] = []
        self.bonds: dict[tuple[int, int], BondOrder] = {}

    def error(self, cls, message, offset=None):
        return cls(message, self.pos if offset is None else offset, self.text)

    def parse(self):
        text = self.text
        prev: int | None = None
        pending_bond: BondOrder | None = None
        pending_bond_pos = 0
        branch_stack: list[tuple[int, int]] = []
        rings: dict[int, tuple[int, BondOrder | None, int]] = {}

        while self.pos < len(text):
            ch = text[self.pos]
            start = self.pos
            if ch == "(":
                if prev is None or pending_bond is not None or text[start - 1] == "(":
                    raise self.error(SmilesError, "branch must follow an atom")
                branch_stack.append((prev, start))
                self.pos += 1
            elif ch == ")":
                if not branch_stack:
                    raise self.error(SmilesError, "unbalanced ')'")
                if pending_bond is not None:
                    raise self.error(SmilesError, "bond symbol without following atom")
                if text[start - 1] == "(":
                    raise self.error(SmilesError, "empty branch")
                prev, _ = branch_stack.pop()
                self.pos += 1
            elif ch in _BOND_SYMBOLS:
                if prev is None or pending_bond is not None:
                    raise self.error(SmilesError, f"unexpected bond symbol {ch!r}")
                pending_bond = _BOND_SYMBOLS[ch]
                pending_bond_pos = start
                self.pos += 1
            elif ch in "/\\":
                raise self.error(UnsupportedFeatureError, f"stereo bond marker {ch!r} is not supported")
            elif ch == "$":
                raise self.error(UnsupportedFeatureError, "quadruple bonds are not supported")
            elif ch == ".":
                raise self.error(MultiFragmentError, "multi-fragment SMILES ('.') is not supported")
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.error(SmilesError, "ring closure must follow an atom")
                if ch == "%":
                    digits = text[self.pos + 1:self.pos + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        raise self.error(SmilesError, "'%' must be followed by two digits")
                    label = int(digits)
                    self.pos += 3
                else:
                    label = int(ch)
                    self.pos += 1
                if label in rings:
                    other, other_bond, _ = rings.pop(label)
                    if pending_bond is not None and other_bond is not None and pending_bond != other_bond:
                        raise self.error(SmilesError, "conflicting ring-closure bond symbols", start)
                    order = pending_bond or other_bond
                    self._add_bond(other, prev, order, start)
                else:
                    rings[label] = (prev, pending_bond, start)
                pending_bond = None
            else:
                idx = self._parse_atom()
                if prev is not None:
                    self._add_bond(prev, idx, pending_bond, start)
                elif pending_bond is not None:
                    raise self.error(SmilesError, "bond symbol without preceding atom", pending_bond_pos)
                pending_bond = None
                prev = idx

        if pending_bond is not None:
            raise self.error(SmilesError, "dangling bond symbol", pending_bond_pos)
        if branch_stack:
            raise self.error(SmilesError, "unbalanced '('", branch_stack[-1][1])
        if rings:
            label, (_, _, offset) = min(rings.items(), key=lambda kv: kv[1][2])
            raise self.error(SmilesError, f"unmatched ring-closure {label}", offset)
        if not self.atoms:
            raise self.error(SmilesError, "empty SMILES", 0)

    def _add_bond(self, i: int, j: int, order: BondOrder | None, offset: int):
        if i == j:
            raise self.error(SmilesError, "atom bonded to itself", offset)
        key = (min(i, j), max(i, j))
        if key in self.bonds:
            raise self.error(SmilesError, "duplicate bond", offset)
        if order is None:
            both_aromatic = self.atoms[i].aromatic and self.atoms[j].aromatic
            order = BondOrder.AROMATIC if both_aromatic else BondOrder.SINGLE
        self.bonds[key] = order

    def _parse_atom(self) -> int:
        text = self.text
        ch = text[self.pos]
        if ch == "[":
            return self._parse_bracket()
        if ch in "@":
            raise self.error(UnsupportedFeatureError, "chirality is not supported")
        for sym in ORGANIC_SUBSET:
            if text.startswith(sym, self.pos):
                self.pos += len(sym)
                self.atoms.append(_RawAtom(sym, False, False))
                return len(self.atoms) - 1
        if ch in AROMATIC_SYMBOLS:
            self.pos += 1
            self.atoms.append(_RawAtom(AROMATIC_SYMBOLS[ch], True, False))
            return len(self.atoms) - 1
        if ch.isalpha() or ch == "*":
            raise self.error(UnsupportedFeatureError, f"unsupported element {ch!r}")
        raise self.error(SmilesError, f"unexpected character {ch!r}")

    def _parse_bracket(self) -> int:
        text = self.text
        open_pos = self.pos
        close = text.find("]", open_pos)
        if close < 0:
            raise self.error(SmilesError, "unterminated bracket atom")
        self.pos += 1
        if text[self.pos:close][:1].isdigit():
            raise self.error(UnsupportedFeatureError, "isotope labels are not supported")
        # element symbol
        two = text[self.pos:self.pos + 2]
        one = text[self.pos:self.pos + 1]
        if two[:1].isupper() and two[1:].islower() and two not in ELEMENTS:
            raise self.error(UnsupportedFeatureError, f"unsupported element {two!r}")
        if two in ELEMENTS:
            element, aromatic = two, False
            self.pos += 2
        elif one in ELEMENTS:
            element, aromatic = one, False
            self.pos += 1
        elif one in AROMATIC_SYMBOLS:
            element, aromatic = AROMATIC_SYMBOLS[one], True
            self.pos += 1
        else:
            raise self.error(UnsupportedFeatureError, f"unsupported element in bracket atom {text[open_pos:close + 1]!r}")
        if self.pos < close and text[self.pos] == "@":
            raise self.error(UnsupportedFeatureError, "chirality is not supported")
        hcount = 0
        if self.pos < close and text[self.pos] == "H":
            self.pos += 1
            hcount = 1
            if self.pos < close and text[self.pos].isdigit():
                hcount = int(text[self.pos])
                self.pos += 1
        charge = 0
        if self.pos < close and text[self.pos] in "+-":
            sign = 1 if text[self.pos] == "+" else -1
            sym = text[self.pos]
            self.pos += 1
            if self.pos < close and text[self.pos].isdigit():
                magnitude = 0
                while self.pos < close and text[self.pos].isdigit():
                    magnitude = magnitude * 10 + int(text[self.pos])
                    self.pos += 1
            else:
                magnitude = 1
                while self.pos < close and text[self.pos] == sym:
                    magnitude += 1
                    self.pos += 1
            charge = sign * magnitude
        if self.pos < close and text[self.pos] == ":":
            raise self.error(UnsupportedFeatureError, "atom classes are not supported")
        if self.pos != close:
            raise self.error(SmilesError, f"unexpected character {text[self.pos]!r} in bracket atom")
        self.pos = close + 1
        self.atoms.append(_RawAtom(element, aromatic, True, charge, hcount))
        return len(self.atoms) - 1

    def build(self) -> MolecularGraph:
        raw = self.atoms
        bond_sum = [0.0] * len(raw)
        h_neighbors = [0] * len(raw)
        for (i, j), order in self.bonds.items():
            bond_sum[i] += order.valence
            bond_sum[j] += order.valence
            if raw[i].element == "H":
                h_neighbors[j] += 1
            if raw[j].element == "H":
                h_neighbors[i] += 1

        heavy = [k for k, a in enumerate(raw) if a.element != "H"]
        if not heavy:
            raise SmilesError("no heavy atoms", 0, self.text)
        for k, a in enumerate(raw):
            if a.element != "H":
                continue
            partners = [o for key in self.bonds if k in key for o in key if o != k]
            if len(partners) != 1 or a.charge or a.hcount:
                raise UnsupportedFeatureError("explicit hydrogen must carry one bond to a heavy atom", 0, self.text)
            if raw[partners[0]].element == "H":
                raise SmilesError("hydrogen bonded to hydrogen", 0, self.text)

        new_index = {old: new for new, old in enumerate(heavy)}
        atoms = []
        for k in heavy:
            a = raw[k]
            if a.bracket:
                implicit = a.hcount + h_neighbors[k]
            else:
                # bonds to explicit [H] already count in bond_sum
                implicit = _implicit_h(a.element, bond_sum[k]) + h_neighbors[k]
            atoms.append(Atom(a.element, a.charge, a.aromatic, implicit))
        bonds = []
        for (i, j), order in sorted(self.bonds.items()):
            if i in new_index and j in new_index:
                bonds.append((new_index[i], new_index[j], order))
        return MolecularGraph(tuple(atoms), tuple(bonds), self.text)


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a heavy-atom :class:`MolecularGraph`.

    Supported: organic-subset and aromatic lowercase atoms, bracket atoms with
    explicit H count and charge, bonds ``- = # :``, branches, ring closures
    ``1-9`` and ``%nn``. Explicit ``[H]`` atoms are folded into the implicit
    hydrogen count of their neighbor.

    Raises:
        SmilesError: malformed input; ``offset`` locates the problem.
        UnsupportedFeatureError: stereo markers, isotopes, other elements.
        MultiFragmentError: ``.``-separated fragments.
    """
    if not isinstance(text, str) or not text.strip():
        raise SmilesError("empty SMILES", 0, text if isinstance(text, str) else "")
    text = text.strip()
    parser = _Parser(text)
    parser.parse()
    return parser.build()


# ---------------------------------------------------------------------------
# derived matrices, tokens, fingerprints


def propagation_matrix(graph: MolecularGraph) -> np.ndarray:
    """Symmetrically normalized adjacency ``D^-1/2 A D^-1/2`` (no self loops).

    Isolated atoms get a zero row and column.
    """
    A = graph.adjacency()
    deg = A.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(deg[nz])
    return inv_sqrt[:, None] * A * inv_sqrt[None, :]


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


def atom_tokens(graph: MolecularGraph) -> list[tuple[int, int]]:
    """Per-atom ``(radius-0, radius-1)`` substructure identifiers.

    Radius 0 hashes ``(element, charge, aromatic, implicit_h, degree)``;
    radius 1 hashes the radius-0 id together with the sorted multiset of
    ``(bond order, neighbor radius-0 id)`` pairs.
    """
    nbrs = graph.neighbors()
    r0 = []
    for atom, nb in zip(graph.atoms, nbrs):
        key = f"r0|{atom.element}|{atom.formal_charge}|{int(atom.aromatic)}|{atom.implicit_h}|{len(nb)}"
        r0.append(fnv1a_64(key.encode("ascii")))
    tokens = []
    for k, nb in enumerate(nbrs):
        env = sorted((int(order), r0[j]) for j, order in nb)
        key = f"r1|{r0[k]:016x}|" + ",".join(f"{o}:{t:016x}" for o, t in env)
        tokens.append((r0[k], fnv1a_64(key.encode("ascii"))))
    return tokens


def molecule_sentence(graph: MolecularGraph) -> list[int]:
    """Token sentence for skip-gram training: r0 and r1 interleaved per atom."""
    return [t for pair in atom_tokens(graph) for t in pair]


@dataclass(frozen=True, eq=False)
class Fingerprint:
    bits: np.ndarray
    nbits: int

    def __eq__(self, other):
        return isinstance(other, Fingerprint) and self.nbits == other.nbits and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.nbits, self.bits.tobytes()))

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())


def fingerprint_from_tokens(tokens, nbits: int = 1024) -> Fingerprint:
    if nbits < 64:
        raise ValueError("nbits must be at least 64")
    bits = np.zeros(nbits, dtype=np.uint8)
    for r0, r1 in tokens:
        bits[r0 % nbits] = 1
        bits[r1 % nbits] = 1
    return Fingerprint(bits, nbits)


def fingerprint(graph: MolecularGraph, nbits: int = 1024) -> Fingerprint:
    """Hashed radius-0/1 circular fingerprint."""
    return fingerprint_from_tokens(atom_tokens(graph), nbits)
