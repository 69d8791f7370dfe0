"""Exception types raised across the package."""


class CfkinError(Exception):
    """Base class for all package-specific errors."""


class KernelRangeError(CfkinError, IndexError):
    """A coefficient was requested outside a table-backed kernel's range."""


class DetailedBalanceError(CfkinError, ValueError):
    """The detailed-balance sequence cannot be built from the kernel.

    Raised when b(i, 1) vanishes (the one-step recursion is underdetermined)
    or when the full two-dimensional residual exceeds tolerance (the kernel
    is inconsistent with any detailed-balance sequence).
    """


class EstimationFailedError(CfkinError, ArithmeticError):
    """Extrapolation of the critical monomer concentration did not converge.

    Carries ``partial`` with the raw extrapolants so callers can inspect
    what was computed.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SupercriticalMassError(CfkinError, ValueError):
    """No equilibrium carries the requested mass (rho > rho_s)."""


class StiffnessError(CfkinError, RuntimeError):
    """Step size underflowed; the problem is too stiff for the explicit scheme.

    Carries ``state`` (last accepted state) and ``stats`` so the partial
    trajectory is not lost.
    """

    def __init__(self, message, state=None, stats=None):
        super().__init__(message)
        self.state = state
        self.stats = stats


class DomainError(CfkinError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class PreconditionError(CfkinError, ValueError):
    """A documented precondition of a probe or check was violated."""


class ConfigError(CfkinError, ValueError):
    """A run configuration file is missing, malformed, or inconsistent."""
