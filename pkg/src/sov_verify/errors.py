"""Exception types shared across the package.

Numerical non-convergence is *not* an exception: integral estimators return
their best value with ``converged=False`` so that convergence studies can
inspect partial results.  Everything here signals a contract violation.
"""


class SovVerifyError(Exception):
    """Base class for all package errors."""


class NonIntegerDifference(SovVerifyError):
    """Holomorphic/antiholomorphic exponents do not differ by an integer."""


class OriginSingularity(SovVerifyError):
    """Propagator evaluated at zero separation."""


class NotAChain(SovVerifyError):
    """Vertex does not carry one incoming and one outgoing propagator."""


class DegenerateChain(SovVerifyError):
    """Chain integration would produce a contact term (exponent hits 0)."""


class UniquenessViolated(SovVerifyError):
    """Three-propagator vertex whose indices do not sum to 2."""


class NoPlaneWave(SovVerifyError):
    """Fourier step requested on a vertex without a plane-wave attachment."""


class IndexSumMismatch(SovVerifyError):
    """Requested exchange indices are not admissible for the matched pattern."""


class StuckDiagram(SovVerifyError):
    """No applicable rewrite; carries the offending diagram for inspection."""

    def __init__(self, message, diagram=None):
        super().__init__(message)
        self.diagram = diagram


class TooShort(SovVerifyError):
    """Vector too short for the requested contraction."""


class PoleEncountered(SovVerifyError):
    """A closed-form factor was evaluated on top of a non-cancelling pole."""


class ConvergenceDomainViolated(SovVerifyError):
    """Parameters lie outside the absolute-convergence domain of a pairing."""


class BranchCutHit(SovVerifyError):
    """A principal-branch power was requested too close to its cut."""


class PoleOnContour(SovVerifyError):
    """A Gamma pole sits within tolerance of a Mellin-Barnes contour."""


class ConfigError(SovVerifyError):
    """Malformed or inconsistent suite configuration."""


class BudgetExceeded(SovVerifyError):
    """Wall-time budget exhausted; partial report was emitted."""
