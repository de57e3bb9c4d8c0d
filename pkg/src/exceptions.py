"""
Exception hierarchy shared by the library, the CLI and the HTTP service.
"""

import re


def _snake(name: str) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", name).lower()


class GediError(Exception):
    """Base class; `code` is the stable machine-readable identifier."""

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        cls.code = _snake(cls.__name__)

    code = "gedi_error"


# ----- core geometry -----

class EmptyCloud(GediError, ValueError):
    pass


class NonPositiveRadius(GediError, ValueError):
    pass


class NonUnitQuaternion(GediError, ValueError):
    pass


class NotRigid(GediError, ValueError):
    pass


# ----- lrf -----

class EmptyPatch(GediError, ValueError):
    pass


class PatchTooSmall(GediError, ValueError):
    pass


class DegenerateEigen(GediError):
    pass


class DegenerateLrf(GediError):
    pass


# ----- tensor engine / encoder -----

class ShapeMismatch(GediError, ValueError):
    pass


class EmptyAxis(GediError, ValueError):
    pass


class NoGradient(GediError):
    pass


class NonDeterministicGraph(GediError):
    pass


class TooFewPoints(GediError, ValueError):
    pass


class CheckpointError(GediError):
    pass


# ----- training -----

class NoOverlap(GediError):
    pass


class NonFiniteLoss(GediError):
    pass


# ----- registration -----

class DimensionMismatch(GediError, ValueError):
    pass


class DegenerateConfiguration(GediError):
    pass


class TooFewMatches(GediError, ValueError):
    pass


class AllSamplesDegenerate(GediError):
    pass


# ----- io / config -----

class ParseError(GediError, ValueError):
    def __init__(self, message: str, path: str | None = None,
                 line: int | None = None, offset: int | None = None):
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")
        self.path = path
        self.line = line
        self.offset = offset


class UnsupportedFormat(GediError, ValueError):
    pass


class OverlapUnreachable(GediError):
    pass


class ConfigError(GediError, ValueError):
    pass
