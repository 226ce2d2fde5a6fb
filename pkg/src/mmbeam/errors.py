"""Exception and warning types shared across the package."""


class MMBeamError(Exception):
    pass


class ShapeError(MMBeamError, ValueError):
    pass


class UndersampledCodebook(MMBeamError, ValueError):
    pass


class EmptyInput(MMBeamError, ValueError):
    pass


class AllMasked(MMBeamError, ValueError):
    pass


class RangeError(MMBeamError, ValueError):
    pass


class DegenerateRange(MMBeamError, ValueError):
    pass


class ChannelError(MMBeamError, ValueError):
    pass


class EmptyDataset(MMBeamError, ValueError):
    pass


class SchemaError(MMBeamError, ValueError):
    pass


class MissingArtifact(MMBeamError, FileNotFoundError):
    def __init__(self, row, column, path):
        self.row = row
        self.column = column
        self.path = path
        super().__init__(f"row {row}: {column} -> {path} does not exist")


class CheckpointError(MMBeamError, ValueError):
    pass


class CoverageWarning(UserWarning):
    pass


class NonMonotonicTime(UserWarning):
    pass


class ZeroGradWarning(UserWarning):
    pass


class ClampedProbability(UserWarning):
    pass


class UpscaleWarning(UserWarning):
    pass


class ConfigError(MMBeamError, ValueError):
    pass
