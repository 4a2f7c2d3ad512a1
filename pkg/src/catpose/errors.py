# Copyright 2024 catpose contributors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

# errors.py


class CatPoseError(Exception):
    """Base class for every error raised by catpose."""


class NearPiRotation(CatPoseError):
    """Rotation angle too close to pi for a well-defined axis."""


class GimbalLock(CatPoseError):
    """Elevation too close to +-pi/2 for a well-defined azimuth."""


class InvalidRange(CatPoseError):
    pass


class ShapeMismatch(CatPoseError):
    pass


class BatchTooSmall(CatPoseError):
    pass


class IndexOutOfRange(CatPoseError):
    pass


class EmptyDataset(CatPoseError):
    pass


class BatchSmallerThanK(CatPoseError):
    pass


class InvalidConfig(CatPoseError):
    pass


class IoError(CatPoseError):
    pass


class ParseError(CatPoseError):
    def __init__(self, message, line=None, column=None):
        super().__init__(message)
        self.line = line
        self.column = column


class SchemaError(CatPoseError):
    pass


class EmptyCategory(CatPoseError):
    pass


class InvalidK(CatPoseError):
    pass


class CorruptCheckpoint(CatPoseError):
    pass


class VersionMismatch(CatPoseError):
    pass


class NaNLoss(CatPoseError):
    def __init__(self, phase, epoch):
        super().__init__(f"Non-finite loss in phase '{phase}' at epoch {epoch}")
        self.phase = phase
        self.epoch = epoch
