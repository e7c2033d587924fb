"""Exception types shared by the library and the command line front end.

Each exception carries the process exit code the CLI uses for it, so the
mapping lives in one place.
"""

from __future__ import annotations


class UArgminError(Exception):
    exit_code = 1


class ConfigError(UArgminError, ValueError):
    """Malformed input: bad parameters, unknown ids, unreadable files."""

    exit_code = 2


class EnumerationCapError(UArgminError):
    exit_code = 3


class NonCoerciveLossError(UArgminError, ValueError):
    exit_code = 4


class AnalysisError(UArgminError):
    """Population-side analysis could not be carried out (no sign change,
    divergent integrals, degenerate variance, bracket failures)."""

    exit_code = 5


class ReplicationError(UArgminError):
    exit_code = 6

    def __init__(self, message: str, index: int, seed_entropy: int, spawn_key: tuple):
        super().__init__(message)
        self.index = index
        self.seed_entropy = seed_entropy
        self.spawn_key = spawn_key
