"""Exception types shared across the pipeline."""


class AffectRiskError(Exception):
    """Base class for all package errors."""


class UnknownEmotion(AffectRiskError, ValueError):
    def __init__(self, text, line_no=None):
        self.text = text
        self.line_no = line_no
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"unknown emotion label {text!r}{where}")


class AslOverrideRejected(AffectRiskError):
    pass


class CorpusError(AffectRiskError):
    """Raised for structurally invalid corpus input."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(where + message)


class MalformedLine(CorpusError):
    pass


class DuplicateCallId(CorpusError):
    def __init__(self, call_id, line_no=None):
        self.call_id = call_id
        super().__init__(f"duplicate call_id {call_id!r}", line_no)


class InvalidRole(CorpusError):
    pass


class InvalidSection(CorpusError):
    pass


class EmptySeries(AffectRiskError, ValueError):
    pass


class InvalidCombination(AffectRiskError, ValueError):
    pass


class UnknownFeatureName(AffectRiskError, KeyError):
    pass


class NoDualLabeledUtterances(AffectRiskError):
    pass


class SeriesTooShort(AffectRiskError, ValueError):
    pass


class TooFewFrames(AffectRiskError, ValueError):
    pass


class DegenerateDataset(AffectRiskError, ValueError):
    pass


class EmptyMatrix(AffectRiskError, ValueError):
    pass


class NonFiniteTarget(AffectRiskError, ValueError):
    pass


class SchemaMismatch(AffectRiskError, KeyError):
    pass


class DegenerateTarget(AffectRiskError, ZeroDivisionError):
    pass


class TooFewCalls(AffectRiskError, ValueError):
    pass


class MissingTargets(AffectRiskError):
    pass


class InvalidSpec(AffectRiskError, ValueError):
    pass


class TooFewReturns(AffectRiskError, ValueError):
    pass


class ConfigError(AffectRiskError):
    pass
