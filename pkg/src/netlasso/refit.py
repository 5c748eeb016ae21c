"""Unpenalized OLS refits, term ranking, and split-half z-scores.

Selection (tuning + screening) says which terms matter; inference comes
from refitting those terms by plain least squares on raw-unit columns and,
for honest error control, doing the two on disjoint halves of the data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.linalg import qr as scipy_qr

from ._io import fmt, write_tsv
from .data import Dataset, residualize, standardize
from .errors import NonPositiveSE, RankDeficient, TooManyTerms
from .screening import ScreenPlan, swindle_fit
from .solver import Inter, Main, SolverConfig, Term, term_key, term_str
from .tuning import TuneSpec, c_from_r, lambda1_for_target
from .weights import WeightMatrix, allowed_pairs

logger = logging.getLogger(__name__)

# Half-p floor for p -> z conversions: below this the normal quantile
# overflows double precision, so |z| saturates at about 37.0.
P_HALF_FLOOR = 1e-300


def z_from_p(p_adj: float, sign_source: float) -> float:
    """Signed normal quantile for an adjusted two-sided p-value."""
    return math.copysign(
        stats.norm.isf(max(p_adj / 2.0, P_HALF_FLOOR)), sign_source)


@dataclass
class FitReport:
    """OLS refit of a selected term set, on raw genotype units."""

    terms: list[Term]
    beta: np.ndarray
    se: np.ndarray
    t: np.ndarray
    rank: np.ndarray          # 1-based, best |t| first
    df_resid: int = 0

    def to_tsv(self, snp_ids: list[str], path: str | Path) -> None:
        order = np.argsort(self.rank)
        write_tsv(path, ["term", "beta", "se", "t", "rank"], [
            (term_str(self.terms[i], snp_ids), float(self.beta[i]),
             float(self.se[i]), float(self.t[i]), int(self.rank[i]))
            for i in order
        ])


def rank_terms(t_values: np.ndarray, terms: Sequence[Term]) -> np.ndarray:
    """1-based ranks by descending |t|; ties broken by ascending term order."""
    keys = [( -abs(float(t_values[i])), term_key(terms[i]))
            for i in range(len(terms))]
    order = sorted(range(len(terms)), key=lambda i: keys[i])
    ranks = np.empty(len(terms), dtype=np.int64)
    for pos, i in enumerate(order):
        ranks[i] = pos + 1
    return ranks


def _raw_columns(ds: Dataset, terms: Sequence[Term]) -> np.ndarray:
    """Raw-unit design columns for the given terms (no intercept)."""
    cols = []
    for t in terms:
        if isinstance(t, Main):
            cols.append(ds.genotypes[:, t.j])
        else:
            cols.append(ds.genotypes[:, t.j] * ds.genotypes[:, t.k])
    return np.column_stack(cols) if cols else np.empty((ds.n_samples, 0))


def ols_refit(ds: Dataset, terms: Sequence[Term]) -> FitReport:
    """Least-squares refit of the terms plus an intercept, raw units.

    Coefficients and standard errors are per raw genotype unit (dosage or
    dosage product), so estimates are comparable across cohorts.
    Raises TooManyTerms when the residual degrees of freedom n - m - 1
    would drop below 1, and RankDeficient (naming a collinear subset of
    terms) when the design loses column rank.
    """
    terms = sorted(terms, key=term_key)
    m = len(terms)
    n = ds.n_samples
    if n - m - 1 < 1:
        raise TooManyTerms(f"{m} terms with {n} samples leaves no df")
    design = np.column_stack([np.ones(n), _raw_columns(ds, terms)])

    # Column-pivoted QR both detects rank loss and names the dependent set.
    _, rr, piv = scipy_qr(design, mode="economic", pivoting=True)
    diag = np.abs(np.diag(rr))
    tol = max(design.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int((diag > tol).sum())
    if rank < design.shape[1]:
        dependent = sorted(int(i) for i in piv[rank:])
        bad = [terms[i - 1] for i in dependent if i >= 1]
        raise RankDeficient(bad if bad else terms)

    qmat, rmat = np.linalg.qr(design, mode="reduced")
    coef = np.linalg.solve(rmat, qmat.T @ ds.y)
    resid = ds.y - design @ coef
    dof = n - m - 1
    sigma2 = float(resid @ resid) / dof
    rinv = np.linalg.inv(rmat)
    cov = rinv @ rinv.T * sigma2
    se = np.sqrt(np.diag(cov))
    if np.any(se[1:] <= 0):
        raise NonPositiveSE("zero standard error in refit")

    beta = coef[1:]
    se = se[1:]
    tvals = beta / se
    return FitReport(
        terms=list(terms),
        beta=beta,
        se=se,
        t=tvals,
        rank=rank_terms(tvals, terms),
        df_resid=dof,
    )


# --- split-half selection + inference -------------------------------------------

def term_universe(p: int, w: WeightMatrix) -> list[Term]:
    """All mains plus all allowed pairs, in canonical order."""
    terms: list[Term] = [Main(j) for j in range(p)]
    terms.extend(Inter(j, k) for j, k in allowed_pairs(w))
    return terms


@dataclass
class SplitZ:
    """Per-term z-scores from one selection/inference split."""

    terms: list[Term]          # the full term universe
    z: np.ndarray              # (len(terms),); 0 where unselected
    selected: list[Term]
    lambda1: float = 0.0       # penalty level the selection used


def _solve_for_target(ds: Dataset, w: WeightMatrix, spec: TuneSpec,
                      solver: Optional[dict],
                      hint: Optional[float]) -> tuple[float, "object"]:
    """Tuned fit with fallback to the closest achieved support.

    An avalanche of simultaneous entries (a whole pathway's mains unlock
    when its first interaction activates) can jump the support count over
    the target window; the closest endpoint the search saw is used then.
    """
    from .errors import TargetUnreachable

    sd = standardize(ds)
    try:
        return lambda1_for_target(sd, w, spec, solver=solver, hint=hint)
    except TargetUnreachable as exc:
        if exc.closest_solution is None:
            raise
        logger.warning("support target %d unreachable; using closest count %d",
                       spec.s_target, exc.closest_count)
        return exc.closest_lambda1, exc.closest_solution


def select_terms(ds: Dataset, w: WeightMatrix, spec: TuneSpec, *,
                 solver: Optional[dict] = None,
                 hint: Optional[float] = None) -> list[Term]:
    """Tuning + screened fit on a dataset; returns the nonzero terms."""
    _, sol = _solve_for_target(ds, w, spec, solver, hint)
    return sorted((t for t, v in sol.coeffs.items() if v != 0.0),
                  key=term_key)


def split_half_z(ds: Dataset, w: WeightMatrix, spec: TuneSpec,
                 seed: int, *, solver: Optional[dict] = None,
                 hint: Optional[float] = None) -> SplitZ:
    """Select on one random half, refit on the other, Bonferroni the t's.

    The permutation is drawn from ``seed``; the selection half takes
    ceil(n/2) samples. Selected terms get z = sign(t) * Phi^{-1}(1 - p_adj/2)
    with p from the exact t distribution (df = n2 - m - 1) and
    p_adj = min(1, p * m); unselected terms get z = 0. Covariates, when
    present, are regressed out of the trait before splitting. ``hint``
    seeds the penalty search (the level a neighboring split settled on).
    """
    if ds.covariates is not None:
        ds = residualize(ds)
    n = ds.n_samples
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n1 = (n + 1) // 2
    d_sel = ds.subset_samples(perm[:n1])
    d_inf = ds.subset_samples(perm[n1:])

    lam1, sol = _solve_for_target(d_sel, w, spec, solver, hint)
    selected = sorted((t for t, v in sol.coeffs.items() if v != 0.0),
                      key=term_key)
    universe = term_universe(ds.n_snps, w)
    z = np.zeros(len(universe))
    if not selected:
        return SplitZ(terms=universe, z=z, selected=[], lambda1=lam1)

    report = ols_refit(d_inf, selected)
    m = len(selected)
    pos = {t: i for i, t in enumerate(universe)}
    for i, term in enumerate(report.terms):
        tval = float(report.t[i])
        p_raw = 2.0 * stats.t.sf(abs(tval), report.df_resid)
        p_adj = min(1.0, p_raw * m)
        z[pos[term]] = z_from_p(p_adj, tval)
    return SplitZ(terms=universe, z=z, selected=selected, lambda1=lam1)
