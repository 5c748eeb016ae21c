"""Network-derived penalty weights.

Pathway membership turns into an adjacency count matrix A = M M^T (a_jk =
number of shared pathways), which turns into penalty weights w_jk = 1/a_jk.
Pairs with a_jk = 0 are excluded from the model entirely; smaller weights
mean more sharing and a lighter penalty. The diagonal holds the per-SNP
main-effect weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyData, IndexOutOfRange, UnknownId
from ._io import fmt


@dataclass
class WeightMatrix:
    """Symmetric penalty weights over p SNPs.

    Off-diagonal entries exist only for allowed pairs, kept canonically as
    j < k. ``diag[j]`` is the main-effect weight of SNP j.
    """

    p: int
    diag: np.ndarray                       # (p,)
    pair_weight: dict = field(default_factory=dict)   # (j, k) j<k -> w > 0

    def weight(self, j: int, k: int) -> float:
        """Off-diagonal weight; 0.0 when the pair is not allowed."""
        if j == k:
            raise IndexOutOfRange("diagonal requested via weight(); use diag")
        key = (j, k) if j < k else (k, j)
        return self.pair_weight.get(key, 0.0)

    def is_allowed(self, j: int, k: int) -> bool:
        key = (j, k) if j < k else (k, j)
        return key in self.pair_weight

    def pair_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Allowed pairs as arrays, lexicographically sorted.

        Returns (pairs (q, 2) int64, weights (q,)). Deterministic order for
        the solver and every serialization.
        """
        keys = sorted(self.pair_weight)
        if not keys:
            return np.empty((0, 2), dtype=np.int64), np.empty(0)
        pairs = np.array(keys, dtype=np.int64)
        w = np.array([self.pair_weight[k] for k in keys])
        return pairs, w


def allowed_pairs(w: WeightMatrix) -> list[tuple[int, int]]:
    """All finitely-weighted pairs, each once, canonical (j < k), sorted."""
    return sorted(w.pair_weight)


def build_adjacency(membership: np.ndarray) -> np.ndarray:
    """Shared-pathway counts A = M M^T from a 0/1 membership matrix.

    ``membership`` is (p, n_pathways); a_jk counts pathways containing both
    SNP j and SNP k (a_jj = number of pathways containing j).
    """
    m = np.asarray(membership, dtype=np.float64)
    if m.ndim != 2:
        raise EmptyData("membership must be a 2-d matrix")
    a = m @ m.T
    return np.asarray(np.rint(a), dtype=np.int64)


def build_weights(adjacency: np.ndarray, diag_mode: str = "ones",
                  binary_mode: bool = False) -> WeightMatrix:
    """Reciprocal-count weights from an adjacency count matrix.

    Off-diagonal: w_jk = 1/a_jk where a_jk > 0; pairs with a_jk = 0 are
    excluded. ``binary_mode`` maps every positive count to weight 1 instead.
    ``diag_mode`` is "ones" (w_jj = 1, default) or "reciprocal"
    (w_jj = 1/a_jj; a SNP in no pathway gets weight 1).
    """
    a = np.asarray(adjacency)
    p = a.shape[0]
    if a.shape != (p, p):
        raise EmptyData("adjacency must be square")
    if diag_mode not in ("ones", "reciprocal"):
        raise ValueError(f"unknown diag_mode {diag_mode!r}")

    if diag_mode == "ones":
        diag = np.ones(p)
    else:
        d = np.asarray(a.diagonal(), dtype=np.float64)
        diag = np.where(d > 0, 1.0 / np.maximum(d, 1), 1.0)

    pair_weight: dict[tuple[int, int], float] = {}
    for j in range(p):
        row = a[j]
        for k in range(j + 1, p):
            if row[k] > 0:
                pair_weight[(j, k)] = 1.0 if binary_mode else 1.0 / float(row[k])
    return WeightMatrix(p=p, diag=diag, pair_weight=pair_weight)


def from_pairs(pairs: Iterable[tuple[int, int]], p: int) -> WeightMatrix:
    """Unit-weight matrix from an explicit pair list (diag all ones).

    Pairs are canonicalized to j < k; duplicates collapse. Raises UnknownId
    for indices outside [0, p) and IndexOutOfRange for self-pairs.
    """
    pw: dict[tuple[int, int], float] = {}
    for j, k in pairs:
        j, k = int(j), int(k)
        if not (0 <= j < p and 0 <= k < p):
            raise UnknownId(f"pair ({j}, {k}) outside [0, {p})")
        if j == k:
            raise IndexOutOfRange(f"self-pair ({j}, {j}) is not allowed")
        pw[(min(j, k), max(j, k))] = 1.0
    return WeightMatrix(p=p, diag=np.ones(p), pair_weight=pw)


# --- pathway file handling ---------------------------------------------------

def load_gmt(path: str | Path) -> dict[str, list[str]]:
    """GMT file: one gene set per line, name <TAB> description <TAB> genes..."""
    sets: dict[str, list[str]] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 3:
                raise EmptyData(f"{path}: GMT line with fewer than 3 fields")
            sets[fields[0]] = [g for g in fields[2:] if g]
    if not sets:
        raise EmptyData(f"{path}: no gene sets")
    return sets


def load_snp_map(path: str | Path) -> dict[str, set[str]]:
    """SNP-to-gene TSV (snp_id, gene); a SNP may map to several genes."""
    mapping: dict[str, set[str]] = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 2:
                raise EmptyData(f"{path}: map line with fewer than 2 fields")
            mapping.setdefault(fields[0], set()).add(fields[1])
    if not mapping:
        raise EmptyData(f"{path}: empty SNP map")
    return mapping


def membership_from_gene_sets(snp_ids: Sequence[str],
                              gene_sets: dict[str, list[str]],
                              snp_map: dict[str, set[str]],
                              min_size: int | None = None,
                              max_size: int | None = None) -> np.ndarray:
    """0/1 membership matrix (p, n_sets) for SNPs via their mapped genes.

    A SNP belongs to a gene set when any of its genes does. Gene sets are
    taken in file order; the optional size filter (on the number of member
    SNPs) is off by default.
    """
    p = len(snp_ids)
    names = list(gene_sets)
    cols = []
    for name in names:
        genes = set(gene_sets[name])
        col = np.zeros(p)
        for i, snp in enumerate(snp_ids):
            if snp_map.get(snp) and snp_map[snp] & genes:
                col[i] = 1.0
        size = int(col.sum())
        if min_size is not None and size < min_size:
            continue
        if max_size is not None and size > max_size:
            continue
        cols.append(col)
    if not cols:
        raise EmptyData("no gene sets survive the size filter")
    return np.column_stack(cols)


def load_pair_list(path: str | Path, snp_ids: Sequence[str]) -> WeightMatrix:
    """Pair-list TSV (snp_id, snp_id) -> unit-weight matrix."""
    index = {s: i for i, s in enumerate(snp_ids)}
    pairs = []
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 2:
                raise EmptyData(f"{path}: pair line with fewer than 2 fields")
            for s in fields[:2]:
                if s not in index:
                    raise UnknownId(f"{path}: unknown SNP id {s!r}")
            pairs.append((index[fields[0]], index[fields[1]]))
    if not pairs:
        raise EmptyData(f"{path}: no pairs")
    return from_pairs(pairs, len(snp_ids))


def load_weight_tsv(path: str | Path, snp_ids: Sequence[str]) -> WeightMatrix:
    """Weight triplet TSV: rows j_id, k_id, weight; j_id == k_id is diagonal."""
    index = {s: i for i, s in enumerate(snp_ids)}
    p = len(snp_ids)
    diag = np.ones(p)
    pw: dict[tuple[int, int], float] = {}
    seen_any = False
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if fields[0] in ("j_id", "term"):
                continue
            if len(fields) != 3:
                raise EmptyData(f"{path}: weight line needs 3 fields")
            a, b, wtxt = fields
            for s in (a, b):
                if s not in index:
                    raise UnknownId(f"{path}: unknown SNP id {s!r}")
            w = float(wtxt)
            if w <= 0 or not np.isfinite(w):
                raise EmptyData(f"{path}: weights must be positive and finite")
            seen_any = True
            j, k = index[a], index[b]
            if j == k:
                diag[j] = w
            else:
                pw[(min(j, k), max(j, k))] = w
    if not seen_any:
        raise EmptyData(f"{path}: no weight rows")
    return WeightMatrix(p=p, diag=diag, pair_weight=pw)


def write_weight_tsv(w: WeightMatrix, snp_ids: Sequence[str],
                     path: str | Path) -> None:
    """Inverse of :func:`load_weight_tsv` (10 significant digits)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("j_id\tk_id\tweight\n")
        for j in range(w.p):
            fh.write(f"{snp_ids[j]}\t{snp_ids[j]}\t{fmt(w.diag[j])}\n")
        for (j, k) in sorted(w.pair_weight):
            fh.write(f"{snp_ids[j]}\t{snp_ids[k]}\t{fmt(w.pair_weight[(j, k)])}\n")
