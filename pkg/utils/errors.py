from typing import Optional


class MidiNetError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(MidiNetError, ValueError):
    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join("x".join(str(d) for d in s) or "scalar" for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class ContractError(MidiNetError, ValueError):
    pass


class MidiFormatError(MidiNetError):
    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        where = f" at byte {offset}" if offset is not None else ""
        super().__init__(f"{message}{where}")


class EmptyBarError(MidiNetError):
    """Raised when a bar holds no notes at all; callers skip the bar's group."""


class UnsupportedChordError(MidiNetError, ValueError):
    pass


class DatasetFormatError(MidiNetError):
    pass


class CheckpointError(MidiNetError):
    pass


class NonFiniteLossError(MidiNetError):
    def __init__(self, step: int, what: str):
        self.step = step
        super().__init__(f"non-finite {what} at step {step}")


class ConfigError(MidiNetError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class ChordSpecError(MidiNetError, ValueError):
    def __init__(self, token: str):
        self.token = token
        super().__init__(f"cannot parse chord token '{token}'")


class SongRejectedError(MidiNetError):
    """A whole file is unusable for the dataset (meter, chords, no melody)."""
