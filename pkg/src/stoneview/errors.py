"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
TrainingDivergedError -> 4.
"""


class StoneviewError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(StoneviewError):
    """Invalid configuration, flags, or referenced files."""


class DataError(StoneviewError):
    """Malformed or inconsistent input data."""


class ManifestError(DataError):
    """Bad manifest file or manifest line."""


class PatchError(DataError):
    """Patch extraction or patch record violation."""


class BalanceError(DataError):
    """A (class, view) group cannot be balanced."""


class SplitError(DataError):
    """Not enough source images to populate both split sides."""


class CheckpointCorruptError(DataError):
    """Checkpoint payload failed its integrity checksum."""


class CheckpointMismatchError(ConfigError):
    """Checkpoint does not match the requested architecture or mode."""


class TrainingDivergedError(StoneviewError):
    """A training run produced a non-finite loss."""

    def __init__(self, run_index: int, seed: int, epoch: int):
        self.run_index = run_index
        self.seed = seed
        self.epoch = epoch
        super().__init__(
            f"non-finite loss in run {run_index} (seed {seed}) at epoch {epoch}"
        )
