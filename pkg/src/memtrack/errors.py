"""Exception hierarchy for memtrack.

Value-level errors also subclass ``ValueError`` so that pydantic validators
raising them surface as ``ValidationError`` during model construction.
"""
from typing import Optional


class MemtrackError(Exception):
    """Base class for every error raised by memtrack."""


# --- frame validation ---

class FrameValidationError(MemtrackError, ValueError):
    """A frame violates a core type invariant."""


class DuplicateSlot(FrameValidationError):
    def __init__(self, slot: int):
        self.slot = slot
        super().__init__(f"DuplicateSlot({slot}): slot {slot} appears more than once in the frame")


class ScoreOutOfRange(FrameValidationError):
    def __init__(self, field: str, value: float, slot: Optional[int] = None):
        self.field = field
        self.value = value
        self.slot = slot
        where = f"slot {slot} " if slot is not None else ""
        super().__init__(f"ScoreOutOfRange: {where}{field}={value!r} is outside [0, 1]")


class NonUnitEmbedding(FrameValidationError):
    def __init__(self, slot: int, norm: float):
        self.slot = slot
        self.norm = norm
        super().__init__(f"NonUnitEmbedding: slot {slot} embedding has norm {norm!r}")


class DimensionMismatch(FrameValidationError):
    def __init__(self, slot: int, expected: int, found: int):
        self.slot = slot
        self.expected = expected
        self.found = found
        super().__init__(f"DimensionMismatch: slot {slot} embedding has dimension {found}, expected {expected}")


# --- policy ---

class EmptyGroup(MemtrackError, ValueError):
    def __init__(self):
        super().__init__("EmptyGroup: a selection decision needs at least one score")


class LengthMismatch(MemtrackError, ValueError):
    def __init__(self, **lengths: int):
        self.lengths = lengths
        detail = ", ".join(f"{name}={size}" for name, size in lengths.items())
        super().__init__(f"LengthMismatch: {detail}")


# --- tracker ---

class EmptyBank(MemtrackError, ValueError):
    def __init__(self):
        super().__init__("EmptyBank: readout needs at least one memory entry")


class NonMonotonicFrameIndex(MemtrackError, ValueError):
    def __init__(self, previous: int, current: int):
        self.previous = previous
        self.current = current
        super().__init__(f"NonMonotonicFrameIndex: frame {current} follows frame {previous}")


class FixedTargetSet(MemtrackError):
    def __init__(self, t: int):
        self.t = t
        super().__init__(f"FixedTargetSet: PVS runs cannot add targets after the first frame (t={t})")


# --- scenario ---

class InvalidWindow(MemtrackError, ValueError):
    def __init__(self, index: int, detail: str):
        self.index = index
        super().__init__(f"InvalidWindow: event {index}: {detail}")


class UnknownArchetype(MemtrackError, ValueError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"UnknownArchetype: {name!r}")


# --- metrics ---

class FrameRangeMismatch(MemtrackError, ValueError):
    def __init__(self, run_frames, truth_frames):
        super().__init__(
            f"FrameRangeMismatch: run covers {len(run_frames)} frames, ground truth covers {len(truth_frames)}"
        )


class InstanceTooLarge(MemtrackError, ValueError):
    def __init__(self, detail: str):
        super().__init__(f"InstanceTooLarge: {detail}")


class MissingPolicy(MemtrackError, ValueError):
    def __init__(self, density: int, policy: str):
        self.density = density
        self.policy = policy
        super().__init__(f"MissingPolicy: no {policy} reports for N={density}")


# --- configuration ---

class ConfigError(MemtrackError):
    """Configuration could not be turned into valid configs."""


class ParseError(ConfigError):
    def __init__(self, line: Optional[int], key: Optional[str], detail: str):
        self.line = line
        self.key = key
        super().__init__(f"ParseError(line={line}, key={key}): {detail}")


class UnknownKey(ConfigError):
    def __init__(self, key: str, line: Optional[int] = None):
        self.key = key
        self.line = line
        super().__init__(f"UnknownKey: {key!r} (line {line})")


class RangeViolation(ConfigError):
    def __init__(self, key: str, detail: str, line: Optional[int] = None):
        self.key = key
        self.line = line
        super().__init__(f"RangeViolation({key}): {detail} (line {line})")


# --- records ---

class RecordError(MemtrackError):
    """A persisted record could not be read or written."""


class RecordIOError(RecordError, OSError):
    def __init__(self, path, detail: str):
        self.path = str(path)
        super().__init__(f"IoError: {path}: {detail}")


class SchemaVersionMismatch(RecordError):
    def __init__(self, found):
        self.found = found
        super().__init__(f"SchemaVersionMismatch: unsupported schema version {found!r}")


class CorruptLine(RecordError):
    def __init__(self, line: int, detail: str):
        self.line = line
        super().__init__(f"CorruptLine({line}): {detail}")
