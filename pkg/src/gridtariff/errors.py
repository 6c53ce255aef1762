"""Exception hierarchy. Every domain error carries a machine-readable code."""


class GridTariffError(Exception):
    code = "domain-error"

    def __init__(self, message, code=None):
        super().__init__(message)
        if code is not None:
            self.code = code


class CaseError(GridTariffError):
    code = "invalid-case"


class CaseSyntaxError(CaseError):
    code = "syntax"

    def __init__(self, message, line, column=1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class ConvergenceError(GridTariffError):
    code = "non-convergence"


class SingularJacobianError(GridTariffError):
    code = "singular-jacobian"


class ZeroInjectionError(GridTariffError):
    code = "zero-injection"


class InvalidActionError(GridTariffError):
    code = "invalid-action"
