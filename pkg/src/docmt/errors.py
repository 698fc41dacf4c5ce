"""Exception types shared across the workbench."""


class DocmtError(Exception):
    """Base class for all workbench errors."""


class MalformedCorpus(DocmtError):
    """Corpus file violates the line/document format or parallel alignment."""


class UnknownOrigin(DocmtError):
    """Operation requires original-src/original-tgt tags but found others."""


class EmptyCorpus(DocmtError):
    """Operation needs a non-empty corpus."""


class EmptySentence(DocmtError):
    """Operation needs non-empty sentences."""


class LengthMismatch(DocmtError):
    """Two aligned collections differ in length."""


class VocabTooSmall(DocmtError):
    """Requested subword vocabulary cannot be built."""


class IdOutOfRange(DocmtError):
    """Token id exceeds the vocabulary size."""


class MalformedMarkup(DocmtError):
    """Marked sequence cannot be parsed back into sentences."""


class SequenceTooLong(DocmtError):
    """Input sequence exceeds the model's maximum length."""


class DivergedLoss(DocmtError):
    """Training loss became non-finite."""


class ConfigError(DocmtError):
    """Pipeline or model configuration is invalid."""


class StageFailure(DocmtError):
    """A pipeline stage failed; carries the stage name and captured log."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.log = message
