"""Exception types shared across the package.

Every error that user input can trigger derives from :class:`NetlassoError`
so the CLI can catch one base class and emit a machine-readable record.
"""

from __future__ import annotations


class NetlassoError(Exception):
    """Base class for all package errors."""

    code = "error"

    def record(self) -> dict:
        """Machine-readable form written by the CLI on failure."""
        return {"error": self.code, "message": str(self)}


class EmptyData(NetlassoError):
    code = "empty_data"


class ConstantColumn(NetlassoError):
    code = "constant_column"

    def __init__(self, column: str):
        self.column = column
        super().__init__(f"column {column!r} is constant after centering")


class IndexOutOfRange(NetlassoError):
    code = "index_out_of_range"


class SampleMismatch(NetlassoError):
    code = "sample_mismatch"


class InvalidDosage(NetlassoError):
    code = "invalid_dosage"


class RankDeficientCovariates(NetlassoError):
    code = "rank_deficient_covariates"


class UnknownId(NetlassoError):
    code = "unknown_id"


class NonFiniteInput(NetlassoError):
    code = "non_finite_input"


class ExcludedPair(NetlassoError):
    code = "excluded_pair"

    def __init__(self, j: int, k: int):
        self.pair = (j, k)
        super().__init__(f"pair ({j}, {k}) has zero weight / is not allowed")


class NoAllowedPairs(NetlassoError):
    code = "no_allowed_pairs"


class TargetUnreachable(NetlassoError):
    """Raised when lambda1 bisection cannot hit the requested support size.

    Carries enough state (closest count, bracket endpoints, and the closest
    solution) for harness code to degrade gracefully.
    """

    code = "target_unreachable"

    def __init__(self, target: int, closest_count: int, closest_lambda1: float,
                 lo: float, hi: float, closest_solution=None):
        self.target = target
        self.closest_count = closest_count
        self.closest_lambda1 = closest_lambda1
        self.bracket = (lo, hi)
        self.closest_solution = closest_solution
        super().__init__(
            f"no lambda1 yields {target} main effects; closest count "
            f"{closest_count} at lambda1={closest_lambda1:.6g}, "
            f"bracket [{lo:.6g}, {hi:.6g}]"
        )


class RankDeficient(NetlassoError):
    code = "rank_deficient"

    def __init__(self, collinear_terms):
        self.collinear_terms = list(collinear_terms)
        super().__init__(
            "refit design is rank deficient; collinear terms: "
            + ", ".join(str(t) for t in self.collinear_terms)
        )


class TooManyTerms(NetlassoError):
    code = "too_many_terms"


class NonPositiveSE(NetlassoError):
    code = "non_positive_se"


class InvalidPower(NetlassoError):
    code = "invalid_power"


class ModelTooLarge(NetlassoError):
    code = "model_too_large"


class ConfigError(NetlassoError):
    code = "config_error"
