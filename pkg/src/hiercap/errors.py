"""Exception hierarchy shared by every module."""


class HierCapError(Exception):
    """Base class; ``code`` is the short tag written to the CSV error column."""

    code = "error"


class InvalidParameter(HierCapError, ValueError):
    code = "invalid-parameter"


class InfeasibleDensity(HierCapError):
    code = "infeasible-density"


class PlacementParseError(HierCapError, ValueError):
    code = "parse-error"


class LevelOutOfRange(HierCapError, IndexError):
    code = "level-out-of-range"


class NoEligibleRelay(HierCapError):
    code = "no-eligible-relay"


class ScheduleViolation(HierCapError):
    code = "schedule-violation"


class BelowThreshold(HierCapError):
    code = "below-threshold-n"


class NotRegular(HierCapError):
    code = "not-regular"


class InsufficientDiversity(HierCapError):
    code = "insufficient-diversity"


class EmptySide(HierCapError):
    code = "empty-side"


class NoBalancedCut(HierCapError):
    code = "no-balanced-cut"


class WrongPlacementKind(HierCapError):
    code = "wrong-placement-kind"


class MissingScheme(HierCapError):
    code = "missing-scheme"
