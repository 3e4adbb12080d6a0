import io
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import mido
import numpy as np
from dotenv import load_dotenv

from utils.errors import ContractError, DimensionError, MidiFormatError
from utils.logger import log_event

load_dotenv()

MELODY_CHANNEL = int(os.getenv("MIDINET_MELODY_CHANNEL", "0"))
CHORD_CHANNEL = int(os.getenv("MIDINET_CHORD_CHANNEL", "1"))

PITCHES = 128
STEPS_PER_BAR = 16
STEPS_PER_QUARTER = 4
WRITE_PPQ = 480
DEFAULT_TEMPO = 500000  # microseconds per quarter, i.e. 120 BPM
CHORD_OCTAVE_BASE = 48


@dataclass(frozen=True)
class NoteEvent:
    pitch: int
    onset: int
    duration: int
    channel: int = 0
    velocity: int = 100

    def __post_init__(self):
        if not 0 <= self.pitch < PITCHES:
            raise ContractError(f"pitch {self.pitch} outside 0..127")
        if self.duration <= 0:
            raise ContractError(f"note duration must be positive, got {self.duration}")
        if self.onset < 0:
            raise ContractError(f"negative onset {self.onset}")

    @property
    def end(self) -> int:
        return self.onset + self.duration


@dataclass
class MidiSong:
    ppq: int
    tempo: int = DEFAULT_TEMPO
    tracks: Dict[int, List[NoteEvent]] = field(default_factory=dict)
    time_signature: Tuple[int, int] = (4, 4)

    def channel(self, channel: int) -> List[NoteEvent]:
        return self.tracks.get(channel, [])


######################################
# Reading
######################################

def _scan_chunks(data: bytes) -> Tuple[int, List[int]]:
    """Validate the chunk framing before mido sees the bytes; returns ppq and track offsets."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise MidiFormatError("missing MThd header", 0)
    header_len = int.from_bytes(data[4:8], "big")
    if header_len < 6 or 8 + header_len > len(data):
        raise MidiFormatError("truncated header chunk", 4)
    fmt = int.from_bytes(data[8:10], "big")
    n_tracks = int.from_bytes(data[10:12], "big")
    division = int.from_bytes(data[12:14], "big")
    if fmt == 2:
        raise MidiFormatError("SMF format 2 is not supported", 8)
    if fmt not in (0, 1):
        raise MidiFormatError(f"unknown SMF format {fmt}", 8)
    if division & 0x8000:
        raise MidiFormatError("SMPTE time division is not supported", 12)
    if division == 0:
        raise MidiFormatError("ticks per quarter must be positive", 12)

    offsets = []
    offset = 8 + header_len
    while len(offsets) < n_tracks:
        if offset + 8 > len(data):
            raise MidiFormatError(f"expected {n_tracks} tracks, found {len(offsets)}", offset)
        size = int.from_bytes(data[offset + 4:offset + 8], "big")
        if offset + 8 + size > len(data):
            raise MidiFormatError(f"chunk declares {size} bytes, only {len(data) - offset - 8} remain", offset)
        if data[offset:offset + 4] == b"MTrk":
            offsets.append(offset)
        offset += 8 + size
    return division, offsets


def parse_midi(data: bytes) -> MidiSong:
    ppq, offsets = _scan_chunks(data)
    try:
        midi = mido.MidiFile(file=io.BytesIO(data))
    except Exception as e:
        raise MidiFormatError(f"corrupt track data ({e})", offsets[0] if offsets else None) from e

    song = MidiSong(ppq=ppq)
    tempo: Optional[int] = None
    signature: Optional[Tuple[int, int]] = None
    notes: Dict[int, List[NoteEvent]] = {}

    for index, track in enumerate(midi.tracks):
        tick = 0
        # (channel, pitch) -> [onset, velocity, depth]; depth merges overlapping same-pitch notes
        sounding: Dict[Tuple[int, int], List[int]] = {}
        for msg in track:
            tick += msg.time
            if msg.type == "set_tempo" and tempo is None:
                tempo = msg.tempo
            elif msg.type == "time_signature" and signature is None:
                signature = (msg.numerator, msg.denominator)
            elif msg.type == "note_on" and msg.velocity > 0:
                key = (msg.channel, msg.note)
                if key in sounding:
                    sounding[key][2] += 1
                else:
                    sounding[key] = [tick, msg.velocity, 1]
            elif msg.type in ("note_off", "note_on"):
                key = (msg.channel, msg.note)
                entry = sounding.get(key)
                if entry is None:
                    continue
                entry[2] -= 1
                if entry[2] == 0:
                    del sounding[key]
                    if tick > entry[0]:
                        notes.setdefault(key[0], []).append(
                            NoteEvent(key[1], entry[0], tick - entry[0], key[0], entry[1]))
        for (channel, pitch), (onset, velocity, _) in sorted(sounding.items()):
            log_event("midi_io", "unmatched_note_on",
                      f"track={index}, channel={channel}, pitch={pitch}, onset={onset}, closed_at={tick}",
                      level="warning")
            if tick > onset:
                notes.setdefault(channel, []).append(NoteEvent(pitch, onset, tick - onset, channel, velocity))

    song.tempo = tempo if tempo is not None else DEFAULT_TEMPO
    song.time_signature = signature if signature is not None else (4, 4)
    song.tracks = {ch: sorted(evs, key=lambda e: (e.onset, e.pitch)) for ch, evs in sorted(notes.items())}
    return song


def read_midi_file(path: str) -> MidiSong:
    with open(path, "rb") as f:
        return parse_midi(f.read())


def quantize(events: Sequence[NoteEvent], ppq: int) -> List[NoteEvent]:
    """
    Snap events to the sixteenth-note grid (4 steps per quarter, 16 per 4/4 bar).

    Returned events count onset and duration in steps, so quantizing them again
    with ppq=STEPS_PER_QUARTER is the identity.
    """
    if ppq <= 0:
        raise ContractError("ppq must be positive")
    out = []
    for e in events:
        # exact rational rounding: steps = ticks * 4 / ppq, half rounds up
        if 2 * STEPS_PER_QUARTER * e.duration < ppq:
            log_event("midi_io", "short_note_dropped",
                      f"pitch={e.pitch}, onset={e.onset}, duration={e.duration}, ppq={ppq}", level="warning")
            continue
        onset = (2 * STEPS_PER_QUARTER * e.onset + ppq) // (2 * ppq)
        duration = max(1, (2 * STEPS_PER_QUARTER * e.duration + ppq) // (2 * ppq))
        out.append(NoteEvent(e.pitch, onset, duration, e.channel, e.velocity))
    return sorted(out, key=lambda e: (e.onset, e.pitch))


######################################
# Writing
######################################

def _melody_runs(roll: np.ndarray) -> List[Tuple[int, int, int]]:
    """(pitch, start step, length) for each run of an identical active pitch."""
    runs = []
    current, start = None, 0
    for step in range(roll.shape[1]):
        active = np.flatnonzero(roll[:, step])
        if active.size > 1:
            raise ContractError(f"column {step} is polyphonic ({active.size} active pitches)")
        pitch = int(active[0]) if active.size else None
        if pitch != current:
            if current is not None:
                runs.append((current, start, step - start))
            current, start = pitch, step
    if current is not None:
        runs.append((current, start, roll.shape[1] - start))
    return runs


def _to_track(timed: List[Tuple[int, int, mido.Message]], name: str, prefix=()) -> mido.MidiTrack:
    track = mido.MidiTrack()
    track.append(mido.MetaMessage("track_name", name=name, time=0))
    for meta in prefix:
        track.append(meta)
    last = 0
    for tick, _, msg in sorted(timed, key=lambda item: (item[0], item[1])):
        track.append(msg.copy(time=tick - last))
        last = tick
    return track


def write_midi(bars: Sequence[np.ndarray], chords: Optional[Sequence[np.ndarray]] = None,
               tempo_bpm: float = 120.0, ppq: int = WRITE_PPQ) -> bytes:
    # Local import: chord decoding lives with the dataset code.
    from utils.pianoroll import vec_to_chord

    if len(bars) == 0:
        raise ContractError("write_midi needs at least one bar")
    for bar in bars:
        if np.shape(bar) != (PITCHES, STEPS_PER_BAR):
            raise DimensionError("write_midi", np.shape(bar), (PITCHES, STEPS_PER_BAR))
    if chords is not None and len(chords) != len(bars):
        raise ContractError(f"{len(chords)} chords given for {len(bars)} bars")

    step = ppq // STEPS_PER_QUARTER
    roll = np.concatenate([np.asarray(b) for b in bars], axis=1)
    melody = []
    for pitch, start, length in _melody_runs(roll):
        melody.append((start * step, 1, mido.Message("note_on", channel=MELODY_CHANNEL, note=pitch, velocity=100)))
        melody.append(((start + length) * step, 0, mido.Message("note_off", channel=MELODY_CHANNEL, note=pitch, velocity=0)))

    midi = mido.MidiFile(type=1, ticks_per_beat=ppq)
    conductor = [
        mido.MetaMessage("set_tempo", tempo=mido.bpm2tempo(tempo_bpm), time=0),
        mido.MetaMessage("time_signature", numerator=4, denominator=4, time=0),
    ]
    midi.tracks.append(_to_track(melody, "melody", conductor))

    if chords is not None:
        harmony = []
        bar_ticks = STEPS_PER_BAR * step
        for k, vec in enumerate(chords):
            root, quality = vec_to_chord(vec)
            third = 3 if quality == "minor" else 4
            for pitch in (CHORD_OCTAVE_BASE + root, CHORD_OCTAVE_BASE + root + third, CHORD_OCTAVE_BASE + root + 7):
                harmony.append((k * bar_ticks, 1, mido.Message("note_on", channel=CHORD_CHANNEL, note=pitch, velocity=80)))
                harmony.append(((k + 1) * bar_ticks, 0, mido.Message("note_off", channel=CHORD_CHANNEL, note=pitch, velocity=0)))
        midi.tracks.append(_to_track(harmony, "chords"))

    buf = io.BytesIO()
    midi.save(file=buf)
    return buf.getvalue()
