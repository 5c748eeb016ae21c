"""Penalty selection: the lambda2/lambda1 ratio and the support-size search.

lambda2 is tied to lambda1 through a ratio c chosen either directly or by
targeting r, the prior odds of a main effect entering versus an isolated
interaction entering. lambda1 itself is found by bisection on the number of
selected main effects.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import StandardizedDesign, product_scale
from .errors import NoAllowedPairs, TargetUnreachable
from .screening import ScreenPlan, swindle_fit
from .solver import (
    Inter,
    Main,
    Solution,
    SolverConfig,
    Term,
    prepare_problem,
)
from .weights import WeightMatrix, allowed_pairs

logger = logging.getLogger(__name__)


@dataclass
class TuneSpec:
    """Target support size and the interaction-penalty ratio.

    Exactly one of ``r`` (entry-odds target, converted per data set via
    :func:`c_from_r`) and ``c`` (the ratio lambda2/lambda1 itself) must be
    given. The accepted main-effect count may differ from s_target by at
    most s_slack.
    """

    s_target: int
    s_slack: int = 1
    r: Optional[float] = None
    c: Optional[float] = None
    lambda1_bounds: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.s_target < 1:
            raise ValueError("s_target must be at least 1")
        if self.s_slack < 0:
            raise ValueError("s_slack must be non-negative")
        if (self.r is None) == (self.c is None):
            raise ValueError("exactly one of r and c must be given")
        for name in ("r", "c"):
            v = getattr(self, name)
            if v is not None and (not math.isfinite(v) or v <= 0):
                raise ValueError(f"{name} must be positive and finite")


def c_from_r(sd: StandardizedDesign, w: WeightMatrix, r: float,
             use_median: bool = False) -> float:
    """Convert an entry-odds target r into the penalty ratio c.

    For each allowed pair the main-versus-interaction entry thresholds
    differ by the diagonal weight, the off-diagonal weight, and the scale of
    the product column; c = mean over allowed pairs of
    (w_jj / w_jk) * sqrt(product_scale(j, k)) / r (median behind a flag).
    Raises NoAllowedPairs when the weight matrix admits no interactions.
    """
    pairs = allowed_pairs(w)
    if not pairs:
        raise NoAllowedPairs("weight matrix allows no pairs")
    vals = np.array([
        (w.diag[j] / w.pair_weight[(j, k)])
        * math.sqrt(product_scale(sd, j, k))
        for j, k in pairs
    ])
    agg = float(np.median(vals) if use_median else vals.mean())
    return agg / r


def entry_threshold(term: Term, w: WeightMatrix, lambda1: float,
                    lambda2: float, pattern: str,
                    product_norm: Optional[float] = None) -> float:
    """Smallest |least-squares coordinate| at which a zero term activates.

    ``pattern`` describes the current activity around the term: for a main
    effect, "group_empty" or "group_active" (an active group drops the
    threshold to zero); for an interaction, how many of its two SNP rows are
    fully zero: "both_rows_zero", "one_row_zero", "no_row_zero".
    Interactions need ``product_norm`` = ||X_jk|| of their product column.
    """
    if isinstance(term, Main):
        if pattern == "group_empty":
            return lambda1 * float(w.diag[term.j])
        if pattern == "group_active":
            return 0.0
        raise ValueError(f"bad main pattern {pattern!r}")
    if product_norm is None or product_norm <= 0:
        raise ValueError("interaction thresholds need product_norm > 0")
    wv = w.weight(term.j, term.k)
    if pattern == "both_rows_zero":
        lam = 2.0 * lambda1 + lambda2
    elif pattern == "one_row_zero":
        lam = lambda1 + lambda2
    elif pattern == "no_row_zero":
        lam = lambda2
    else:
        raise ValueError(f"bad interaction pattern {pattern!r}")
    return lam * wv / product_norm


def _count_mains(sol: Solution) -> int:
    return sum(1 for t, v in sol.coeffs.items()
               if isinstance(t, Main) and v != 0.0)


def lambda1_for_target(sd: StandardizedDesign, w: WeightMatrix,
                       spec: TuneSpec, *,
                       solver: Optional[dict] = None,
                       use_swindle: bool = True,
                       hint: Optional[float] = None) -> tuple[float, Solution]:
    """Bisect lambda1 until the main-effect count hits the target window.

    The ratio c (from spec.c or via c_from_r) fixes lambda2 = c * lambda1
    at every probe. The upper bracket max_j score_j / w_jj guarantees an
    empty main-effect support; the lower endpoint starts at 1e-4 of that,
    is never fitted unless the bisection walks down to it, and expands
    downward (up to 8 times) if the support is still too sparse there.
    Explicit spec.lambda1_bounds are hard endpoints with no expansion.
    Probes chain warm starts, and a ``hint`` (e.g. the value found on a
    sibling dataset) is probed first, which typically resolves repeated
    tunings in one or two fits. If the bracket collapses (relative width
    1e-6) without entering the window, raises TargetUnreachable carrying
    the closest count, both endpoints, and the closest solution.

    ``solver`` overrides SolverConfig fields (tol, max_cycles, ...).
    """
    c = spec.c if spec.c is not None else c_from_r(sd, w, spec.r)
    overrides = dict(solver or {})
    prob = prepare_problem(sd, w)
    scores = np.abs(sd.y @ sd.x)
    hi = float(np.max(scores / np.asarray(w.diag)))
    lo = hi * 1e-4
    expansions = 0 if spec.lambda1_bounds is not None else 8
    if spec.lambda1_bounds is not None:
        lo, hi = spec.lambda1_bounds
    if not (0.0 < lo < hi):
        raise ValueError(f"bad lambda1 bracket ({lo}, {hi})")
    plan = ScreenPlan(s=spec.s_target)

    warm = None

    def probe(lam1: float) -> tuple[int, Solution]:
        nonlocal warm
        cfg = SolverConfig(lambda1=lam1, lambda2=c * lam1, **overrides)
        if use_swindle:
            sol = swindle_fit(sd, w, cfg, plan, warm_start=warm, prob=prob)
        else:
            from .solver import fit
            sol = fit(sd, w, cfg, warm_start=warm, prob=prob)
        warm = sol.coeffs
        return _count_mains(sol), sol

    lo_window = spec.s_target - spec.s_slack
    hi_window = spec.s_target + spec.s_slack
    width_floor = 1e-6 * hi
    best = None
    # The upper endpoint empties the support by construction; the lower is
    # presumed dense until a probe at or below it proves otherwise.
    lo_certified = False
    first = hint if hint is not None and lo < hint < hi else None

    while True:
        lam = first if first is not None else 0.5 * (lo + hi)
        first = None
        n_lam, sol_lam = probe(lam)
        if lo_window <= n_lam <= hi_window:
            return lam, sol_lam
        if best is None or abs(n_lam - spec.s_target) < best[0]:
            best = (abs(n_lam - spec.s_target), lam, n_lam, sol_lam)
        if n_lam > hi_window:
            lo = lam
            lo_certified = True
        else:
            hi = lam
        if hi - lo <= width_floor:
            if not lo_certified and expansions > 0:
                # Everything probed so far was too sparse; open the bracket
                # further down instead of giving up.
                expansions -= 1
                lo *= 0.1
                continue
            _, lam_best, n_best, sol_best = best
            raise TargetUnreachable(spec.s_target, n_best, lam_best,
                                    lo, hi, sol_best)
