"""Exception types raised across the pipeline."""


class GazeInsightError(Exception):
    """Base class for all engine errors."""


class MalformedHeader(GazeInsightError):
    pass


class MalformedRow(GazeInsightError):
    """A single log row could not be used. Recorded in the parse ledger, not raised out of parse."""

    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class EmptySession(GazeInsightError):
    def __init__(self, message="session has no usable rows", ledger=None):
        super().__init__(message)
        self.ledger = ledger


class SaltTooShort(GazeInsightError):
    pass


class OutOfBounds(GazeInsightError):
    pass


class TooFewSamples(GazeInsightError):
    pass


class UnknownMetricInRule(GazeInsightError):
    pass


class OutOfOrderDelivery(GazeInsightError):
    """Streaming consumers received an item older than one already processed."""


class MissingArtifact(GazeInsightError):
    pass


class PrivacyRefusal(GazeInsightError):
    """Raised instead of ever writing an un-pseudonymized identity."""
