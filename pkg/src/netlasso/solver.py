"""Coordinate-descent solver for the network-weighted interaction lasso.

The model regresses the standardized trait on standardized SNP columns and
on elementwise products of allowed SNP pairs. The penalty couples each SNP
with all of its allowed interactions through a group term (weight-scaled
Euclidean norm per SNP row) and additionally soft-thresholds every
interaction on its own:

    0.5 * ||y - X b||^2
      + lambda1 * sum_j sqrt( (w_jj b_j)^2 + sum_{k: (j,k) allowed} w_jk^2 ||X_jk||^2 b_jk^2 )
      + lambda2 * sum_{(j,k) allowed} w_jk ||X_jk|| |b_jk|

Every pair participates in both of its SNPs' group terms, which is what
makes an isolated interaction pay the group penalty twice and a "protected"
one (inside an already-active group) pay almost nothing: the hierarchy is
soft, not hard.

Each coordinate update is an exact minimization of the objective in that
coordinate. Main effects with an inactive group reduce to soft
thresholding; otherwise a strictly increasing scalar equation in the
shrinkage factor is solved by safeguarded Newton (see ``_kernels``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from . import _kernels as K
from ._io import fmt
from .data import StandardizedDesign, interaction_column
from .errors import ExcludedPair, IndexOutOfRange, NonFiniteInput, UnknownId
from .weights import WeightMatrix

logger = logging.getLogger(__name__)


# --- terms -------------------------------------------------------------------

@dataclass(frozen=True)
class Main:
    """Main-effect term for SNP j (0-based column index)."""
    j: int


@dataclass(frozen=True)
class Inter:
    """Interaction term for SNP pair (j, k), stored canonically j < k."""
    j: int
    k: int

    def __post_init__(self):
        if self.j == self.k:
            raise IndexOutOfRange(f"self-interaction ({self.j}, {self.j})")
        if self.j > self.k:
            j, k = self.k, self.j
            object.__setattr__(self, "j", j)
            object.__setattr__(self, "k", k)


Term = Union[Main, Inter]


def term_key(term: Term) -> tuple[int, int, int]:
    """Canonical sort key: all mains by index, then pairs lexicographically."""
    if isinstance(term, Main):
        return (0, term.j, term.j)
    return (1, term.j, term.k)


def term_str(term: Term, snp_ids: list[str]) -> str:
    if isinstance(term, Main):
        return snp_ids[term.j]
    return f"{snp_ids[term.j]}:{snp_ids[term.k]}"


def parse_term(text: str, snp_ids: list[str]) -> Term:
    index = {s: i for i, s in enumerate(snp_ids)}
    if ":" in text:
        a, b = text.split(":", 1)
        if a not in index or b not in index:
            raise UnknownId(f"unknown term {text!r}")
        return Inter(index[a], index[b])
    if text not in index:
        raise UnknownId(f"unknown term {text!r}")
    return Main(index[text])


class CoefficientState(dict):
    """Sparse map Term -> coefficient; absent terms are zero.

    Interaction keys must be pairs the weight matrix allows; ``validate``
    checks that when a matrix is at hand.
    """

    def value(self, term: Term) -> float:
        return self.get(term, 0.0)

    def validate(self, w: WeightMatrix) -> None:
        for term in self:
            if isinstance(term, Inter) and not w.is_allowed(term.j, term.k):
                raise ExcludedPair(term.j, term.k)

    def nonzero_mains(self) -> list[int]:
        return sorted(t.j for t, v in self.items()
                      if isinstance(t, Main) and v != 0.0)

    def nonzero_pairs(self) -> list[tuple[int, int]]:
        return sorted((t.j, t.k) for t, v in self.items()
                      if isinstance(t, Inter) and v != 0.0)


# --- configuration and results -------------------------------------------------

@dataclass
class SolverConfig:
    """Penalty levels and convergence controls.

    tol bounds the largest absolute coefficient change over a full cycle;
    nr_tol/nr_max_iter control the scalar root solves inside each update.
    """

    lambda1: float
    lambda2: float
    tol: float = 1e-6
    max_cycles: int = 1000
    nr_tol: float = 1e-10
    nr_max_iter: int = 50

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "tol", "nr_tol"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise NonFiniteInput(f"{name} must be finite, got {v!r}")
        if self.lambda1 <= 0:
            raise ValueError("lambda1 must be positive")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be non-negative")
        if self.tol <= 0 or self.nr_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_cycles < 1 or self.nr_max_iter < 1:
            raise ValueError("iteration caps must be at least 1")


@dataclass
class Solution:
    """Fit result: sparse coefficients plus bookkeeping."""

    coeffs: CoefficientState
    objective: float
    cycles_used: int
    converged: bool


# --- prepared problem arrays ---------------------------------------------------

@dataclass
class ProblemArrays:
    """Dense views of (sd, W) shared by fit, KKT scans, and tuning probes."""

    x: np.ndarray            # (n, p) F-ordered
    y: np.ndarray            # (n,)
    pairs: np.ndarray        # (q, 2) int64, lexicographic
    pair_w: np.ndarray       # (q,)
    s_pair: np.ndarray       # (q,) squared product-column norms
    row_ptr: np.ndarray      # (p + 1,) int64
    row_idx: np.ndarray      # (2q,) int64 pair indices per SNP row
    w_diag: np.ndarray       # (p,)
    pair_index: dict = field(default_factory=dict)   # (j, k) -> t

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.pairs.shape[0]


def prepare_problem(sd: StandardizedDesign, w: WeightMatrix) -> ProblemArrays:
    """Build the dense arrays the kernels need; memoizes pair norms."""
    if w.p != sd.n_snps:
        raise IndexOutOfRange(
            f"weight matrix is over {w.p} SNPs, design has {sd.n_snps}"
        )
    pairs, pair_w = w.pair_arrays()
    p = sd.n_snps
    counts = np.zeros(p + 1, dtype=np.int64)
    for j, k in pairs:
        counts[j + 1] += 1
        counts[k + 1] += 1
    row_ptr = np.cumsum(counts)
    row_idx = np.empty(2 * len(pairs), dtype=np.int64)
    cursor = row_ptr[:-1].copy()
    for t, (j, k) in enumerate(pairs):
        row_idx[cursor[j]] = t
        cursor[j] += 1
        row_idx[cursor[k]] = t
        cursor[k] += 1
    s_pair = (K._pair_sq_norms(sd.x, pairs) if len(pairs)
              else np.empty(0))
    return ProblemArrays(
        x=sd.x,
        y=sd.y,
        pairs=pairs if len(pairs) else np.empty((0, 2), dtype=np.int64),
        pair_w=pair_w,
        s_pair=s_pair,
        row_ptr=row_ptr,
        row_idx=row_idx,
        w_diag=np.asarray(w.diag, dtype=np.float64),
        pair_index={(int(j), int(k)): t for t, (j, k) in enumerate(pairs)},
    )


def _state_to_arrays(coeffs: Optional[CoefficientState],
                     prob: ProblemArrays) -> tuple[np.ndarray, np.ndarray]:
    beta_m = np.zeros(prob.p)
    beta_p = np.zeros(prob.q)
    if coeffs:
        for term, v in coeffs.items():
            if isinstance(term, Main):
                if not 0 <= term.j < prob.p:
                    raise IndexOutOfRange(f"main index {term.j}")
                beta_m[term.j] = v
            else:
                t = prob.pair_index.get((term.j, term.k))
                if t is None:
                    raise ExcludedPair(term.j, term.k)
                beta_p[t] = v
    return beta_m, beta_p


def _arrays_to_state(beta_m: np.ndarray, beta_p: np.ndarray,
                     prob: ProblemArrays) -> CoefficientState:
    out = CoefficientState()
    for j in np.nonzero(beta_m)[0]:
        out[Main(int(j))] = float(beta_m[j])
    for t in np.nonzero(beta_p)[0]:
        j, k = prob.pairs[t]
        out[Inter(int(j), int(k))] = float(beta_p[t])
    return out


# --- public reference operations ----------------------------------------------

def partial_residual(sd: StandardizedDesign, w: WeightMatrix,
                     coeffs: CoefficientState, term: Term) -> np.ndarray:
    """y minus every fitted contribution except the given term's."""
    r = sd.y.copy()
    for t, v in coeffs.items():
        if v == 0.0 or t == term:
            continue
        if isinstance(t, Main):
            r -= sd.x[:, t.j] * v
        else:
            r -= interaction_column(sd, t.j, t.k) * v
    return r


def objective(sd: StandardizedDesign, w: WeightMatrix, cfg: SolverConfig,
              coeffs: CoefficientState) -> float:
    """Objective value at the given coefficients (0.5 at all-zero)."""
    r = sd.y.copy()
    for t, v in coeffs.items():
        if v == 0.0:
            continue
        if isinstance(t, Main):
            r -= sd.x[:, t.j] * v
        else:
            r -= interaction_column(sd, t.j, t.k) * v
    obj = 0.5 * float(r @ r)

    lam1, lam2 = cfg.lambda1, cfg.lambda2
    pair_vals = {}
    for t, v in coeffs.items():
        if isinstance(t, Inter) and v != 0.0:
            s = float(np.sum(interaction_column(sd, t.j, t.k) ** 2))
            pair_vals[(t.j, t.k)] = (w.weight(t.j, t.k), s, v)
    for j in range(sd.n_snps):
        g = (w.diag[j] * coeffs.value(Main(j))) ** 2
        for (a, b), (wv, s, v) in pair_vals.items():
            if j in (a, b):
                g += wv * wv * s * v * v
        obj += lam1 * math.sqrt(g)
    for (a, b), (wv, s, v) in pair_vals.items():
        obj += lam2 * wv * math.sqrt(s) * abs(v)
    return obj


def shrink_main(sd: StandardizedDesign, w: WeightMatrix, cfg: SolverConfig,
                coeffs: CoefficientState, j: int) -> float:
    """Exact coordinate minimizer for main effect j given all other terms."""
    if not 0 <= j < sd.n_snps:
        raise IndexOutOfRange(f"main index {j}")
    r = partial_residual(sd, w, coeffs, Main(j))
    bhat = float(sd.x[:, j] @ r)
    if not math.isfinite(bhat):
        raise NonFiniteInput("non-finite inner product in shrink_main")
    cj = 0.0
    for t, v in coeffs.items():
        if isinstance(t, Inter) and v != 0.0 and j in (t.j, t.k):
            s = float(np.sum(interaction_column(sd, t.j, t.k) ** 2))
            wv = w.weight(t.j, t.k)
            cj += wv * wv * s * v * v
    return float(K._shrink_main_scalar(bhat, cfg.lambda1, float(w.diag[j]),
                                       cj, cfg.nr_tol, cfg.nr_max_iter))


def shrink_interaction(sd: StandardizedDesign, w: WeightMatrix,
                       cfg: SolverConfig, coeffs: CoefficientState,
                       j: int, k: int) -> float:
    """Exact coordinate minimizer for interaction (j, k) given the rest."""
    if not w.is_allowed(j, k):
        raise ExcludedPair(j, k)
    term = Inter(j, k)
    j, k = term.j, term.k
    col = interaction_column(sd, j, k)
    s = float(col @ col)
    r = partial_residual(sd, w, coeffs, term)
    bhat = float(col @ r) / s
    if not math.isfinite(bhat):
        raise NonFiniteInput("non-finite inner product in shrink_interaction")

    def row_remainder(node: int) -> float:
        c = (w.diag[node] * coeffs.value(Main(node))) ** 2
        for t, v in coeffs.items():
            if (isinstance(t, Inter) and v != 0.0 and t != term
                    and node in (t.j, t.k)):
                sc = float(np.sum(interaction_column(sd, t.j, t.k) ** 2))
                wv = w.weight(t.j, t.k)
                c += wv * wv * sc * v * v
        return c

    return float(K._shrink_inter_scalar(
        bhat, cfg.lambda1, cfg.lambda2, w.weight(j, k), s,
        row_remainder(j), row_remainder(k), cfg.nr_tol, cfg.nr_max_iter))


# --- the fit loop ---------------------------------------------------------------

def fit(sd: StandardizedDesign, w: WeightMatrix, cfg: SolverConfig,
        warm_start: Optional[CoefficientState] = None,
        shuffle_rng: Optional[np.random.Generator] = None,
        check_objective: bool = False,
        prob: Optional[ProblemArrays] = None) -> Solution:
    """Run cyclic coordinate descent to convergence.

    Mains are visited in index order, then pairs lexicographically;
    ``shuffle_rng`` randomizes both orders each cycle (used to check order
    invariance). ``check_objective`` asserts the objective never rises
    across any single update (slow; testing only). A prebuilt
    :class:`ProblemArrays` can be passed to amortize setup across many fits
    on the same design.

    Convergence is declared when the largest absolute coefficient change
    over a full pass is at most cfg.tol, or when a full pass lowers the
    objective by less than a 1e-10 relative margin (coefficients can keep
    drifting along an exactly flat ridge of collinear columns; any point on
    the ridge is a minimizer). Hitting max_cycles first yields
    ``converged=False`` on the returned solution (never an exception).
    Between full passes the solver iterates only the currently nonzero
    coordinates, which leaves the fixed point and the stopping rule intact
    while skipping most of the work on sparse solutions.
    """
    if prob is None:
        prob = prepare_problem(sd, w)
    beta_m, beta_p = _state_to_arrays(warm_start, prob)
    resid = np.empty_like(prob.y)
    K._recompute_resid(prob.x, prob.y, prob.pairs, beta_m, beta_p, resid)

    base_m = np.arange(prob.p, dtype=np.int64)
    base_p = np.arange(prob.q, dtype=np.int64)

    def run_cycle(order_m, order_p):
        return K._cd_cycle(
            prob.x, resid, prob.pairs, prob.pair_w, prob.s_pair,
            prob.row_ptr, prob.row_idx, prob.w_diag,
            cfg.lambda1, cfg.lambda2, beta_m, beta_p,
            order_m, order_p, cfg.nr_tol, cfg.nr_max_iter,
            check_objective)

    def current_objective():
        return float(K._objective_value(
            resid, prob.pair_w, prob.s_pair, prob.row_ptr, prob.row_idx,
            prob.w_diag, cfg.lambda1, cfg.lambda2, beta_m, beta_p))

    cycles = 0
    converged = False
    delta = np.inf
    obj_prev = current_objective()
    while cycles < cfg.max_cycles:
        if shuffle_rng is not None:
            order_m = shuffle_rng.permutation(prob.p).astype(np.int64)
            order_p = shuffle_rng.permutation(prob.q).astype(np.int64)
        else:
            order_m, order_p = base_m, base_p
        delta, rise = run_cycle(order_m, order_p)
        cycles += 1
        if check_objective and rise > 1e-12:
            raise AssertionError(
                f"objective rose by {rise:.3e} within a coordinate update"
            )
        if delta <= cfg.tol:
            converged = True
            break
        obj_now = current_objective()
        if obj_prev - obj_now <= 1e-10 * (1.0 + abs(obj_now)):
            converged = True
            break
        obj_prev = obj_now
        # Converge the active set before paying for another full pass.
        active_m = np.flatnonzero(beta_m != 0.0).astype(np.int64)
        active_p = np.flatnonzero(beta_p != 0.0).astype(np.int64)
        while cycles < cfg.max_cycles and (active_m.size or active_p.size):
            delta, rise = run_cycle(active_m, active_p)
            cycles += 1
            if check_objective and rise > 1e-12:
                raise AssertionError(
                    f"objective rose by {rise:.3e} within a coordinate update"
                )
            if delta <= cfg.tol:
                break
    if not converged:
        logger.warning("fit did not converge in %d cycles (last delta %.3g)",
                       cycles, delta)

    obj = float(K._objective_value(resid, prob.pair_w, prob.s_pair,
                                   prob.row_ptr, prob.row_idx, prob.w_diag,
                                   cfg.lambda1, cfg.lambda2, beta_m, beta_p))
    return Solution(
        coeffs=_arrays_to_state(beta_m, beta_p, prob),
        objective=obj,
        cycles_used=cycles,
        converged=converged,
    )


# --- serialization ---------------------------------------------------------------

def write_solution_tsv(sol: Solution, cfg: SolverConfig, snp_ids: list[str],
                       path: str | Path) -> None:
    """Solution TSV: metadata comment block, then term/coefficient rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    terms = sorted(sol.coeffs, key=term_key)
    with open(path, "w") as fh:
        fh.write(f"# lambda1={fmt(cfg.lambda1)}\n")
        fh.write(f"# lambda2={fmt(cfg.lambda2)}\n")
        fh.write(f"# cycles={sol.cycles_used}\n")
        fh.write(f"# objective={fmt(sol.objective)}\n")
        fh.write(f"# converged={int(sol.converged)}\n")
        fh.write("term\tcoefficient\n")
        for t in terms:
            fh.write(f"{term_str(t, snp_ids)}\t{fmt(sol.coeffs[t])}\n")


def read_solution_tsv(path: str | Path,
                      snp_ids: list[str]) -> tuple[CoefficientState, dict]:
    """Inverse of :func:`write_solution_tsv`; returns (coeffs, metadata)."""
    meta: dict[str, float] = {}
    coeffs = CoefficientState()
    with open(path) as fh:
        for raw in fh:
            line = raw.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line.lstrip("# ").partition("=")
                meta[key] = float(val)
                continue
            if line.startswith("term\t"):
                continue
            name, val = line.split("\t")
            coeffs[parse_term(name, snp_ids)] = float(val)
    return coeffs, meta
