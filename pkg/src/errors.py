"""
Exception hierarchy shared by all flowcount packages
"""
from typing import Optional


class FlowCountError(Exception):
    """Base class for every error raised by this library"""


class ShapeError(FlowCountError, ValueError):
    """Arrays or grids whose shapes do not agree"""


class GridIndexError(FlowCountError, IndexError):
    """Cell index outside the grid"""


class AnnotationError(FlowCountError, ValueError):
    """Head annotations that cannot be rendered"""


class HorizonError(FlowCountError, ArithmeticError):
    """A point mapped onto (or behind) the homography's horizon line"""

    def __init__(self, message: str, point_index: Optional[int] = None):
        super().__init__(message)
        self.point_index = point_index


class AssumptionViolatedError(FlowCountError, ValueError):
    """Agent motion that breaks single-step reachability or boundary balance"""


class NumericError(FlowCountError, ArithmeticError):
    """Non-finite values reaching an optimizer or a loss"""

    def __init__(self, message: str, component: Optional[str] = None):
        super().__init__(message)
        self.component = component


class RegionError(FlowCountError, ValueError):
    """Patch or super-patch regions that do not fit the grid"""


class ConfigError(FlowCountError, ValueError):
    """Invalid configuration or empty inputs"""


class ExhaustedError(FlowCountError, RuntimeError):
    """No unlabeled keyframes left to select from"""


class ParseError(FlowCountError, ValueError):
    """Malformed file on disk"""

    def __init__(self, message: str, path: Optional[str] = None, offset: Optional[int] = None):
        location = ""
        if path is not None:
            location = f" ({path}" + (f" @ {offset}" if offset is not None else "") + ")"
        super().__init__(f"{message}{location}")
        self.path = path
        self.offset = offset
