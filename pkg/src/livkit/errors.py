"""Exception types shared across the package."""


class LivkitError(Exception):
    """Base class for all domain errors raised by this package."""


class GenerationError(LivkitError):
    """Episode initialization exceeded its rejection-sampling budget."""


class UnknownTokenError(LivkitError):
    """A word is not in the fixed vocabulary."""


class DataFormatError(LivkitError):
    """A dataset directory is malformed or inconsistent."""


class ShapeError(LivkitError):
    """Tensor shapes do not chain or do not match declared shapes."""


class NumericError(LivkitError):
    """A loss or gradient evaluated to a non-finite value."""


class CheckpointError(LivkitError):
    """A checkpoint directory is missing, corrupt, or inconsistent."""


class DegenerateEmbeddingError(LivkitError):
    """An embedding had norm below the rejection floor."""


class EmptyAnnotationError(LivkitError):
    """The text encoder was given an empty token sequence."""


class NoAnnotatedVideosError(LivkitError):
    """A text-dependent objective was asked to sample from a dataset with no annotated videos."""


class VocabularyMismatchError(LivkitError):
    """Checkpoint and dataset disagree on the vocabulary."""


class TrainingAborted(LivkitError):
    """Training hit a numeric error; the last good checkpoint was retained."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class MissingTextError(LivkitError):
    """A text-dependent loss received a batch slot without an annotation."""
