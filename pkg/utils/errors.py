# Copyright (c) 2024-present, capguard contributors.
# All rights reserved.
#
# This source code is licensed under the license found in the
# LICENSE file in the root directory of this source tree.


class CapguardError(Exception):
    """Base class for data/validation failures; the CLI maps it to exit code 2."""

    exit_code = 2


class ConfigError(CapguardError, ValueError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"invalid configuration field {field!r}: {message}")


class DomainError(CapguardError, ValueError):
    pass


class ManeuverInfeasibleError(CapguardError):
    pass


class SimulationFaultError(CapguardError):
    def __init__(self, message, trace=None):
        self.trace = list(trace or [])
        super().__init__(message)


class DatasetGenerationError(CapguardError):
    pass


class SplitError(CapguardError, ValueError):
    pass


class RankDeficiencyError(CapguardError, ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {self.columns}")


class TrainingDivergedError(CapguardError):
    def __init__(self, epoch, loss):
        self.epoch = epoch
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")


class ModelLoadError(CapguardError):
    pass


class SchemaVersionError(ModelLoadError):
    def __init__(self, found, expected):
        self.found = found
        self.expected = expected
        super().__init__(f"model schema {found!r} does not match expected {expected!r}")


class CalibrationError(CapguardError):
    pass


class VehicleWiderThanLaneError(CapguardError, ValueError):
    pass


class MissingArtifactError(CapguardError):
    def __init__(self, path, command):
        self.path = path
        self.command = command
        super().__init__(f"missing artifact {path}; run `capguard.py {command}` first")
