"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FpevalError(Exception):
    exit_code = 2


class ConfigError(FpevalError):
    """Invalid parameters or run configuration (usage problem)."""

    exit_code = 1


class ParseError(FpevalError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(FpevalError):
    pass


class CompletenessError(FpevalError):
    def __init__(self, missing, message=None):
        self.missing = list(missing)
        if message is None:
            shown = ", ".join(f"({i},{j})" for i, j in self.missing)
            message = f"{len(self.missing)} missing (finger, impression) entries: {shown}"
        super().__init__(message)


class GenerationError(FpevalError):
    pass


class MatcherError(FpevalError):
    exit_code = 4

    def __init__(self, message, transcript=None, pair=None):
        self.transcript = transcript
        self.pair = pair
        super().__init__(message)


class ScoreLookupError(MatcherError):
    """A precomputed score matrix has no entry for the requested ordered pair."""


class ScoreImportError(FpevalError):
    pass


class SelectionError(FpevalError):
    exit_code = 3


class ConsistencyError(FpevalError):
    """Pair or score counts disagree with the closed-form protocol counts."""

    exit_code = 3


class UndefinedMetricError(FpevalError):
    exit_code = 3


class ComparisonMismatchError(FpevalError):
    exit_code = 5
