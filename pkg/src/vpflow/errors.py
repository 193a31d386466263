"""Exception hierarchy shared by all vpflow modules."""


class VPFlowError(Exception):
    """Base class; ``code`` is the machine-readable error name."""

    exit_code = 3

    def __init__(self, message, **details):
        super().__init__(message)
        self.details = details

    @property
    def code(self):
        return type(self).__name__

    def to_dict(self):
        return {"error": self.code, "message": str(self), "details": _jsonable(self.details)}


class InvalidArgument(VPFlowError, ValueError):
    exit_code = 2


class DomainError(VPFlowError, ValueError):
    pass


class SingularMetric(VPFlowError, ArithmeticError):
    pass


class NumericalInstability(VPFlowError, ArithmeticError):
    pass


class NotSpacelike(VPFlowError, ArithmeticError):
    pass


class NotAdmissible(VPFlowError, ArithmeticError):
    pass


class NotSupported(VPFlowError):
    exit_code = 2


class DegenerateEigenframe(VPFlowError, ArithmeticError):
    pass


class DegenerateGlobalTerm(VPFlowError, ArithmeticError):
    pass


class TimeStepUnderflow(VPFlowError, ArithmeticError):
    pass


class NoConvergence(VPFlowError):
    exit_code = 4


class InsufficientData(VPFlowError, ValueError):
    pass


class EigenSolveFailure(VPFlowError, ArithmeticError):
    pass


class ParseError(VPFlowError, ValueError):
    exit_code = 2


class ValidationError(VPFlowError, ValueError):
    """Aggregated configuration errors; ``errors`` holds every message."""

    exit_code = 2

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors), errors=self.errors)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return repr(obj)
