"""Domain exceptions shared across the toolkit.

The CLI maps any EgoExoError to exit code 1 and prints the class name, so
keep these names stable.
"""


class EgoExoError(Exception):
    """Base class for all toolkit-domain failures."""


# data / manifests
class MissingFile(EgoExoError):
    pass


class SchemaError(EgoExoError):
    pass


class AlignmentError(EgoExoError):
    pass


# scene generation
class InvalidScript(EgoExoError):
    pass


class DegenerateCamera(EgoExoError):
    pass


# optical flow
class SizeMismatch(EgoExoError):
    pass


class NegativeSigma(EgoExoError):
    pass


# networks / training
class ShapeError(EgoExoError):
    pass


class NumericalError(EgoExoError):
    pass


class CheckpointIncompatible(EgoExoError):
    pass


class DataEmpty(EgoExoError):
    pass


class DimensionMismatch(EgoExoError):
    pass


class TruthMissing(EgoExoError):
    pass


# metrics
class EmptyInput(EgoExoError):
    pass


class DegenerateClassifier(EgoExoError):
    pass


class MixedGallerySizes(EgoExoError):
    pass


# probes
class UntrainedModel(EgoExoError):
    pass


class MissingLabels(EgoExoError):
    pass
