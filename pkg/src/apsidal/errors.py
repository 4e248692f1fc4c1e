"""Exception hierarchy.

Errors split into two families the CLI maps to exit codes: :class:`DomainError`
(inputs outside the admissible region, exit 2) and :class:`ConvergenceError`
(a numerical procedure failed to meet its tolerance, exit 3).
"""


class ApsidalError(Exception):
    pass


class DomainError(ApsidalError, ValueError):
    pass


class ConvergenceError(ApsidalError, ArithmeticError):
    pass


class NoBoundedOrbit(DomainError):
    pass


class StarViolation(DomainError):
    def __init__(self, failed, report=None):
        super().__init__("bounded-orbit hypothesis violated: " + ", ".join(failed))
        self.failed = list(failed)
        self.report = report


class StepOutsideDomain(DomainError):
    pass


class NoSignChange(DomainError):
    pass


class NotCoprime(DomainError):
    pass


class NoResonance(DomainError):
    pass


class NoSectionRoot(DomainError):
    pass


class DomainExit(DomainError):
    pass


class SingularMetric(DomainError):
    pass


class QuadratureNotConverged(ConvergenceError):
    pass


class BranchInversionFailed(ConvergenceError):
    pass


class StepFailure(ConvergenceError):
    pass


class NoReturn(ConvergenceError):
    pass


class NewtonStalled(ConvergenceError):
    pass


class VerificationFailed(ConvergenceError):
    def __init__(self, check, detail=""):
        super().__init__(f"verification failed: {check}" + (f" ({detail})" if detail else ""))
        self.check = check
