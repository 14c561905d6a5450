"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class PlpfError(Exception):
    """Base class for all package errors."""


class LengthMismatch(PlpfError, ValueError):
    pass


class ShapeMismatch(PlpfError, ValueError):
    pass


class DimMismatch(PlpfError, ValueError):
    pass


# -- topology ---------------------------------------------------------------


class NonRadialError(PlpfError, ValueError):
    """The branch set does not form a tree rooted at the substation."""

    def __init__(self, message: str, bus=None, branch=None):
        super().__init__(message)
        self.bus = bus
        self.branch = branch


class CycleDetected(NonRadialError):
    pass


class DisconnectedBus(NonRadialError):
    pass


# -- case files -------------------------------------------------------------


class CaseFileError(PlpfError, ValueError):
    pass


class CaseSyntaxError(CaseFileError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class MissingSection(CaseFileError):
    def __init__(self, name: str):
        super().__init__(f"missing section {name!r}")
        self.name = name


class NonNumericField(CaseFileError):
    def __init__(self, row: int, col: int, token: str):
        super().__init__(f"non-numeric field {token!r} at row {row}, col {col}")
        self.row = row
        self.col = col


class UnknownCase(PlpfError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"unknown builtin case {self.name!r}"


# -- numerics ---------------------------------------------------------------


class NonConvergence(PlpfError, RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"power flow did not converge after {iterations} iterations "
            f"(residual {residual:.3e} p.u.)"
        )
        self.iterations = iterations
        self.residual = residual


class ZeroImpedanceBranch(PlpfError, ValueError):
    def __init__(self, branch: int):
        super().__init__(f"branch {branch} has r = x = 0")
        self.branch = branch


class SingularLambda(PlpfError, ZeroDivisionError):
    def __init__(self, branch: int):
        super().__init__(f"alpha = -1 on branch {branch}")
        self.branch = branch


class NegativeSquaredVoltage(PlpfError, ArithmeticError):
    def __init__(self, bus: int, value: float):
        super().__init__(f"squared voltage {value:.4g} <= 0 at bus {bus}")
        self.bus = bus
        self.value = value


class DegenerateTargets(PlpfError, ValueError):
    pass


class FactorizationFailure(PlpfError, ArithmeticError):
    pass


class FingerprintMismatch(PlpfError, ValueError):
    pass


class VersionMismatch(PlpfError, ValueError):
    pass


class UnreachedBusPhase(PlpfError, ValueError):
    def __init__(self, bus, phase: str):
        super().__init__(f"phase {phase} of bus {bus} is not fed by any line phase")
        self.bus = bus
        self.phase = phase
