"""Exception hierarchy shared across the package.

Every domain failure derives from :class:`LibraryError` so callers (CLI,
service) can map "domain error" vs "bug" onto exit codes and HTTP statuses
without enumerating concrete types.
"""

from __future__ import annotations


class LibraryError(Exception):
    """Base class for all expected domain failures."""

    code = "LibraryError"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class LayoutError(LibraryError):
    """A layout document violates a structural invariant."""

    code = "LayoutError"


class ScenarioInvalid(LibraryError):
    code = "ScenarioInvalid"


class SimTimeBudgetExceeded(LibraryError):
    """The simulation ran past its time budget (or stalled) with live tasks.

    Surfaced, never silently truncated: a liveness violation is a result.
    """

    code = "SimTimeBudgetExceeded"


class StateMachineViolation(LibraryError):
    """Internal consistency failure; indicates a simulator bug."""

    code = "StateMachineViolation"
