"""Exception hierarchy with stable machine-readable error codes."""


class FedPpcaError(Exception):
    """Base error; ``code`` is a stable tag usable by callers and the CLI."""

    code = "error"

    def __init__(self, message="", **context):
        self.context = context
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({detail})" if message else detail
        super().__init__(f"{self.code}: {message}" if message else self.code)


# ---- model / client -------------------------------------------------------

class ViewParamsMissing(FedPpcaError):
    code = "view-params-missing"


class NoObservedView(FedPpcaError):
    code = "no-observed-view"


class SingularPosterior(FedPpcaError):
    code = "singular-posterior"


class InvalidData(FedPpcaError):
    code = "invalid-data"


class ShapeMismatch(FedPpcaError):
    code = "shape-mismatch"


class SingularUpdate(FedPpcaError):
    code = "singular-update"


class InvalidVariance(FedPpcaError):
    code = "invalid-variance"


# ---- master ----------------------------------------------------------------

class ViewUnrepresented(FedPpcaError):
    code = "view-unrepresented"


# ---- differential privacy --------------------------------------------------

class InvalidSensitivity(FedPpcaError):
    code = "invalid-sensitivity"


class DpDomainError(FedPpcaError):
    code = "dp-domain-error"


# ---- wire format -----------------------------------------------------------

class FormatVersionMismatch(FedPpcaError):
    code = "format-version-mismatch"


class TruncatedMessage(FedPpcaError):
    code = "truncated-message"


class ChecksumFailure(FedPpcaError):
    code = "checksum-failure"


# ---- data ------------------------------------------------------------------

class BadCenterCount(FedPpcaError):
    code = "bad-center-count"


class InsufficientGroupSamples(FedPpcaError):
    code = "insufficient-group-samples"


class HeaderMismatch(FedPpcaError):
    code = "header-mismatch"


class RaggedRow(FedPpcaError):
    code = "ragged-row"


class NonNumericCell(FedPpcaError):
    code = "non-numeric-cell"


# ---- evaluation ------------------------------------------------------------

class WaicDegenerate(FedPpcaError):
    code = "waic-degenerate"


class InvalidDenominator(FedPpcaError):
    code = "invalid-denominator"


class DegenerateLabels(FedPpcaError):
    code = "degenerate-labels"


class ViewNotMissing(FedPpcaError):
    code = "view-not-missing"
