"""Exception types shared across the package."""


class WindFnoError(Exception):
    """Base class for all package errors."""


class ContractError(WindFnoError, ValueError):
    """An argument violates a documented precondition (shape, count, range)."""


class FormatError(WindFnoError):
    """A binary file is malformed (bad magic, truncated, inconsistent header)."""


class UnsupportedLayoutError(FormatError):
    """A well-formed file uses a layout this package does not read."""


class TilingError(ContractError):
    pass


class EmptyDatasetError(WindFnoError):
    pass


class SimulationDiverged(WindFnoError):
    def __init__(self, step, message="non-finite values in flow state"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class TrainingDiverged(WindFnoError):
    def __init__(self, epoch, batch):
        super().__init__(f"loss became non-finite at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class ConfigError(WindFnoError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
