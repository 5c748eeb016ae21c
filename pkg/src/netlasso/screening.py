"""Marginal prescreening and the expand-until-optimal fitting loop.

Large problems are fit on a small working set first: the top-scoring SNPs
by absolute marginal correlation, plus whatever allowed pairs fall inside
that set. A full-problem optimality scan then either certifies the
zero-padded solution or doubles the working set and refits warm-started,
worst case ending at the full problem.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from . import _kernels as K
from .data import StandardizedDesign
from .solver import (
    CoefficientState,
    Inter,
    Main,
    ProblemArrays,
    Solution,
    SolverConfig,
    Term,
    fit,
    prepare_problem,
)
from .weights import WeightMatrix

logger = logging.getLogger(__name__)


@dataclass
class ScreenPlan:
    """Working-set schedule: start at k = 10 s, double on violation, cap at p.

    ``s`` is the intended support size; ``k`` may be given explicitly.
    """

    s: int
    k: Optional[int] = None
    multiplier: int = 2

    def __post_init__(self):
        if self.s < 1:
            raise ValueError("s must be at least 1")
        if self.k is None:
            self.k = 10 * self.s
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.multiplier < 2:
            raise ValueError("multiplier must be at least 2")


class ScreenScores(NamedTuple):
    scores: np.ndarray   # (p,) |x_j . y|
    order: np.ndarray    # (p,) descending score, ties by ascending index


def prescreen_scores(sd: StandardizedDesign) -> ScreenScores:
    """Absolute marginal correlation of every SNP with the trait."""
    scores = K._prescreen_scores(sd.x, sd.y)
    order = np.lexsort((np.arange(sd.n_snps), -scores))
    return ScreenScores(scores=scores, order=order.astype(np.int64))


@dataclass
class KKTReport:
    ok: bool
    violations: list[Term]


def kkt_satisfied(sd: StandardizedDesign, w: WeightMatrix, cfg: SolverConfig,
                  coeffs: CoefficientState, slack: float = 1e-8,
                  prob: Optional[ProblemArrays] = None) -> KKTReport:
    """Full-problem optimality scan with gradients recomputed from scratch.

    Zero coordinates are held to their subgradient bounds plus ``slack``;
    nonzero coordinates must be fixed points of their own update within
    max(slack, 10 * cfg.tol), since a fit converged on coefficient changes
    of cfg.tol cannot pin gradients tighter than that.
    """
    if prob is None:
        prob = prepare_problem(sd, w)
    beta_m = np.zeros(prob.p)
    beta_p = np.zeros(prob.q)
    for term, v in coeffs.items():
        if isinstance(term, Main):
            beta_m[term.j] = v
        else:
            beta_p[prob.pair_index[(term.j, term.k)]] = v
    stat_slack = max(slack, 10.0 * cfg.tol)
    viol_m, viol_p = K._kkt_scan(
        prob.x, prob.y, prob.pairs, prob.pair_w, prob.s_pair,
        prob.row_ptr, prob.row_idx, prob.w_diag,
        cfg.lambda1, cfg.lambda2, beta_m, beta_p,
        slack, stat_slack, cfg.nr_tol, cfg.nr_max_iter)
    violations: list[Term] = [Main(int(j)) for j in np.nonzero(viol_m)[0]]
    for t in np.nonzero(viol_p)[0]:
        j, k = prob.pairs[t]
        violations.append(Inter(int(j), int(k)))
    return KKTReport(ok=not violations, violations=violations)


def _subset_problem(sd: StandardizedDesign, w: WeightMatrix,
                    working: np.ndarray) -> tuple[StandardizedDesign,
                                                  WeightMatrix, np.ndarray]:
    """Restrict the design and weights to the working-set columns."""
    sub_sd = StandardizedDesign(
        x=np.asfortranarray(sd.x[:, working]),
        y=sd.y,
        x_mean=sd.x_mean[working],
        x_norm=sd.x_norm[working],
        y_mean=sd.y_mean,
        y_norm=sd.y_norm,
        snp_ids=[sd.snp_ids[j] for j in working] if sd.snp_ids else [],
    )
    local = {int(g): i for i, g in enumerate(working)}
    pair_weight = {}
    for (j, k), wv in w.pair_weight.items():
        if j in local and k in local:
            a, b = local[j], local[k]
            pair_weight[(min(a, b), max(a, b))] = wv
    sub_w = WeightMatrix(p=len(working), diag=w.diag[working],
                         pair_weight=pair_weight)
    return sub_sd, sub_w, working


def swindle_fit(sd: StandardizedDesign, w: WeightMatrix, cfg: SolverConfig,
                plan: ScreenPlan,
                warm_start: Optional[CoefficientState] = None,
                prob: Optional[ProblemArrays] = None,
                kkt_slack: float = 1e-8) -> Solution:
    """Fit via screened working sets, certified against the full problem.

    With k >= p this is exactly :func:`solver.fit`. Otherwise the top-k
    SNPs by marginal score (ties broken by ascending index) and the allowed
    pairs inside them form the subproblem; the solution is zero-padded and
    scanned. Any violation doubles k (capped at p) and refits with the
    previous solution as warm start.
    """
    p = sd.n_snps
    if prob is None:
        prob = prepare_problem(sd, w)
    if plan.k >= p:
        return fit(sd, w, cfg, warm_start=warm_start, prob=prob)

    order = prescreen_scores(sd).order
    k = plan.k
    coeffs = warm_start
    while True:
        k = min(k, p)
        if k == p:
            sol = fit(sd, w, cfg, warm_start=coeffs, prob=prob)
            return sol
        working = np.sort(order[:k])
        sub_sd, sub_w, mapping = _subset_problem(sd, w, working)
        sub_warm = None
        if coeffs:
            local = {int(g): i for i, g in enumerate(mapping)}
            sub_warm = CoefficientState()
            for term, v in coeffs.items():
                if isinstance(term, Main) and term.j in local:
                    sub_warm[Main(local[term.j])] = v
                elif isinstance(term, Inter) and term.j in local \
                        and term.k in local:
                    sub_warm[Inter(local[term.j], local[term.k])] = v
        sub_sol = fit(sub_sd, sub_w, cfg, warm_start=sub_warm)

        coeffs = CoefficientState()
        for term, v in sub_sol.coeffs.items():
            if isinstance(term, Main):
                coeffs[Main(int(mapping[term.j]))] = v
            else:
                coeffs[Inter(int(mapping[term.j]), int(mapping[term.k]))] = v

        report = kkt_satisfied(sd, w, cfg, coeffs, slack=kkt_slack, prob=prob)
        if report.ok:
            return Solution(
                coeffs=coeffs,
                objective=sub_sol.objective,
                cycles_used=sub_sol.cycles_used,
                converged=sub_sol.converged,
            )
        logger.debug("screen set k=%d rejected (%d violations); doubling",
                     k, len(report.violations))
        k *= plan.multiplier
