"""Exception hierarchy shared by all modules."""


class SemibanditError(Exception):
    """Base class for every error raised by this package."""


class FamilyError(SemibanditError, ValueError):
    pass


class ContainedArm(FamilyError):
    pass


class EmptyFamily(FamilyError):
    pass


class BadM(FamilyError):
    pass


class PriorError(SemibanditError, ValueError):
    pass


class NotBeta(PriorError):
    pass


class NonDiscretePrior(PriorError):
    pass


class DegeneratePrior(SemibanditError):
    """A constant the guarantee needs is zero or undefined for this prior."""


class DegenerateFamily(SemibanditError):
    pass


class DegenerateConstants(SemibanditError):
    pass


class NotFixedSize(FamilyError):
    pass


class BudgetExceeded(SemibanditError):
    """An enumeration or simulation would exceed its configured budget."""


class NotEncodable(SemibanditError):
    """Raised when the layered encoder exceeds the node bound.

    This is a sound rejection only: another construction may still encode the
    family within the bound.
    """

    proof_of_non_encodability = False


class ZeroQpun(SemibanditError):
    pass


class RejectionBudgetExceeded(SemibanditError):
    pass


class BootstrapUnderfilled(SemibanditError):
    pass


class ConfigError(SemibanditError, ValueError):
    pass
