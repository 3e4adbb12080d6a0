"""
Piano-roll bars, the 13-dimensional chord code, and the training-triple dataset.

A bar is a 128 x 16 binary matrix (pitch rows, sixteenth-note columns). After
preprocessing every column of a real bar holds exactly one active pitch in the
two-octave register C4..B5.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np

from utils.errors import (
    ContractError,
    DatasetFormatError,
    EmptyBarError,
    MidiFormatError,
    SongRejectedError,
    UnsupportedChordError,
)
from utils.logger import log_event
from utils.midi_io import (
    CHORD_CHANNEL,
    MELODY_CHANNEL,
    PITCHES,
    STEPS_PER_BAR,
    MidiSong,
    NoteEvent,
    quantize,
    read_midi_file,
)

REGISTER_LOW = 60
REGISTER_HIGH = 83
GROUP_BARS = 8
CHORD_DIMS = 13
N_KEYS = 12
EMPTY_STEP = 255

DATASET_MAGIC = b"MNDS"
DATASET_VERSION = 1
_FLAG_CHORDS = 0x01
_RECORD = np.dtype([("prev", "u1", STEPS_PER_BAR), ("cur", "u1", STEPS_PER_BAR), ("chord", "u1", CHORD_DIMS)])

Quality = Literal["major", "minor"]
QUALITIES = ("major", "minor")


######################################
# Rolls
######################################

def empty_bar() -> np.ndarray:
    return np.zeros((PITCHES, STEPS_PER_BAR), dtype=np.uint8)


def bar_pitches(roll: np.ndarray) -> np.ndarray:
    """Active pitch per column, EMPTY_STEP where the column is silent."""
    roll = np.asarray(roll)
    pitches = np.argmax(roll, axis=0)
    return np.where(roll.max(axis=0) > 0, pitches, EMPTY_STEP).astype(np.uint8)


def roll_from_pitches(pitches: Sequence[int]) -> np.ndarray:
    roll = empty_bar()
    for step, pitch in enumerate(pitches):
        if pitch != EMPTY_STEP:
            roll[int(pitch), step] = 1
    return roll


def fold_to_register(pitch: int) -> int:
    while pitch < REGISTER_LOW:
        pitch += 12
    while pitch > REGISTER_HIGH:
        pitch -= 12
    return pitch


def resolve_overlaps(events: Sequence[NoteEvent]) -> List[NoteEvent]:
    """Make a line monophonic: the later onset wins and truncates the earlier note."""
    by_onset = {}
    for e in sorted(events, key=lambda e: (e.onset, e.pitch)):
        # same onset: the highest pitch carries the melody
        by_onset[e.onset] = e
    ordered = [by_onset[k] for k in sorted(by_onset)]
    out = []
    for current, following in zip(ordered, ordered[1:] + [None]):
        if following is not None and current.end > following.onset:
            current = replace(current, duration=following.onset - current.onset)
        out.append(current)
    return out


def segment_into_bars(events: Sequence, group_bars: int = GROUP_BARS, n_bars: Optional[int] = None) -> List[List]:
    """
    Split step-grid events at barlines; onsets become bar-relative.

    Notes crossing a barline are cut into per-bar pieces and the song is trimmed
    to whole groups of `group_bars` bars.
    """
    if n_bars is None:
        if not events:
            return []
        n_bars = math.ceil(max(e.onset + e.duration for e in events) / STEPS_PER_BAR)
    kept = (n_bars // group_bars) * group_bars
    bars: List[List] = [[] for _ in range(kept)]
    for e in events:
        start, end = e.onset, e.onset + e.duration
        while start < end:
            k = start // STEPS_PER_BAR
            if k >= kept:
                break
            piece_end = min(end, (k + 1) * STEPS_PER_BAR)
            bars[k].append(replace(e, onset=start - k * STEPS_PER_BAR, duration=piece_end - start))
            start = piece_end
    return bars


def events_to_roll(events: Sequence[NoteEvent]) -> np.ndarray:
    """Plain rasterisation, silence left silent."""
    roll = empty_bar()
    for e in sorted(events, key=lambda e: e.onset):
        span = slice(e.onset, min(e.end, STEPS_PER_BAR))
        roll[:, span] = 0
        roll[e.pitch, span] = 1
    return roll


def bar_to_roll(events: Sequence[NoteEvent]) -> np.ndarray:
    """Rasterise one bar with pauses prolonged and leading silence filled by the first note."""
    if not events:
        raise EmptyBarError("bar has no notes")
    pitches: List[Optional[int]] = [None] * STEPS_PER_BAR
    for e in sorted(events, key=lambda e: e.onset):
        for step in range(e.onset, min(e.end, STEPS_PER_BAR)):
            pitches[step] = e.pitch
    first = next((p for p in pitches if p is not None), None)
    if first is None:
        raise EmptyBarError("bar has no notes inside its span")
    held = first
    for step in range(STEPS_PER_BAR):
        if pitches[step] is None:
            pitches[step] = held
        held = pitches[step]
    return roll_from_pitches(pitches)


######################################
# Chords
######################################

@dataclass(frozen=True)
class ChordEvent:
    root: int
    quality: Quality
    onset: int
    duration: int


def chord_to_vec(root: int, quality: Quality) -> np.ndarray:
    """
    13-dim chord code: one of the first 12 dims marks the key, the last the quality.

    Majors index from C, minors from A, so a minor chord shares the slot of its
    relative major (C major and A minor both light dim 0).
    """
    if quality not in QUALITIES:
        raise UnsupportedChordError(f"unsupported chord quality '{quality}'")
    if not 0 <= root < N_KEYS:
        raise UnsupportedChordError(f"chord root {root} outside 0..11")
    vec = np.zeros(CHORD_DIMS, dtype=np.uint8)
    if quality == "major":
        vec[root] = 1
    else:
        vec[(root - 9) % N_KEYS] = 1
        vec[N_KEYS] = 1
    return vec


def vec_to_chord(vec: Sequence) -> Tuple[int, Quality]:
    vec = np.asarray(vec)
    if vec.shape != (CHORD_DIMS,):
        raise ContractError(f"chord vector must have {CHORD_DIMS} dims, got shape {vec.shape}")
    keys = np.flatnonzero(vec[:N_KEYS] > 0.5)
    if keys.size != 1:
        raise ContractError(f"chord vector must mark exactly one key, marks {keys.size}")
    index = int(keys[0])
    if vec[N_KEYS] > 0.5:
        return (index + 9) % N_KEYS, "minor"
    return index, "major"


def recognize_chords(notes: Sequence[NoteEvent]) -> List[ChordEvent]:
    """Group simultaneous chord-channel notes into triads; anything else rejects the song."""
    groups = {}
    for n in notes:
        groups.setdefault(n.onset, []).append(n)
    chords = []
    for onset in sorted(groups):
        members = groups[onset]
        classes = {n.pitch % 12 for n in members}
        match = None
        for root in classes:
            if classes == {root, (root + 4) % 12, (root + 7) % 12}:
                match = (root, "major")
            elif classes == {root, (root + 3) % 12, (root + 7) % 12}:
                match = (root, "minor")
        if match is None:
            raise UnsupportedChordError(f"non-triad chord at step {onset}: pitch classes {sorted(classes)}")
        chords.append(ChordEvent(match[0], match[1], onset, max(n.duration for n in members)))
    return chords


def prune_chords(events: Sequence[ChordEvent]) -> Tuple[int, Quality]:
    """One chord per bar: longest total sounding time wins, ties go to the earliest."""
    if not events:
        raise ContractError("prune_chords needs at least one chord event")
    totals = {}
    first_seen = {}
    for e in sorted(events, key=lambda e: e.onset):
        key = (e.root, e.quality)
        totals[key] = totals.get(key, 0) + e.duration
        first_seen.setdefault(key, e.onset)
    return min(totals, key=lambda k: (-totals[k], first_seen[k]))


######################################
# Groups and augmentation
######################################

@dataclass
class MelodyGroup:
    bars: List[np.ndarray]
    chords: Optional[List[np.ndarray]] = None


def song_to_groups(song: MidiSong, melody_channel: int = MELODY_CHANNEL,
                   chord_channel: int = CHORD_CHANNEL) -> Tuple[List[MelodyGroup], List[str]]:
    """Run the full bar pipeline on one song; returns its groups and reasons for skipped groups."""
    if tuple(song.time_signature) != (4, 4):
        raise SongRejectedError(f"time signature {song.time_signature[0]}/{song.time_signature[1]} is not 4/4")
    melody = quantize(song.channel(melody_channel), song.ppq)
    if not melody:
        raise SongRejectedError(f"no melody notes on channel {melody_channel}")
    melody = [replace(e, pitch=fold_to_register(e.pitch)) for e in resolve_overlaps(melody)]
    try:
        chords = recognize_chords(quantize(song.channel(chord_channel), song.ppq))
    except UnsupportedChordError as e:
        raise SongRejectedError(str(e)) from e

    melody_bars = segment_into_bars(melody)
    chord_bars = segment_into_bars(chords, n_bars=len(melody_bars)) if chords else None

    groups, skipped = [], []
    for g in range(len(melody_bars) // GROUP_BARS):
        span = slice(g * GROUP_BARS, (g + 1) * GROUP_BARS)
        try:
            rolls = [bar_to_roll(evs) for evs in melody_bars[span]]
        except EmptyBarError:
            skipped.append(f"group {g}: bar without notes")
            continue
        vecs = None
        if chord_bars is not None:
            vecs, previous = [], None
            for evs in chord_bars[span]:
                if evs:
                    previous = chord_to_vec(*prune_chords(evs))
                if previous is None:
                    break
                vecs.append(previous)
            if len(vecs) < GROUP_BARS:
                skipped.append(f"group {g}: first bar has no chord")
                continue
        groups.append(MelodyGroup(rolls, vecs))
    return groups, skipped


def shift_roll(roll: np.ndarray, semitones: int) -> np.ndarray:
    pitches = [p if p == EMPTY_STEP else fold_to_register(int(p) + semitones) for p in bar_pitches(roll)]
    return roll_from_pitches(pitches)


def shift_chord(vec: np.ndarray, semitones: int) -> np.ndarray:
    root, quality = vec_to_chord(vec)
    return chord_to_vec((root + semitones) % N_KEYS, quality)


def transpose_augment(groups: Sequence[MelodyGroup], shifts: Sequence[int] = range(N_KEYS)) -> List[MelodyGroup]:
    out = []
    for group in groups:
        for s in shifts:
            bars = [shift_roll(b, s) for b in group.bars]
            chords = [shift_chord(c, s) for c in group.chords] if group.chords is not None else None
            out.append(MelodyGroup(bars, chords))
    return out


######################################
# Triples, dataset file, batches
######################################

@dataclass
class TrainingTriple:
    prev: np.ndarray
    cur: np.ndarray
    chord: Optional[np.ndarray] = None


def make_training_triples(group: MelodyGroup) -> List[TrainingTriple]:
    """One empty bar is prepended, so the first bar is conditioned on silence."""
    previous = [empty_bar()] + list(group.bars[:-1])
    chords = group.chords if group.chords is not None else [None] * len(group.bars)
    return [TrainingTriple(p, c, ch) for p, c, ch in zip(previous, group.bars, chords)]


@dataclass
class TripleDataset:
    triples: List[TrainingTriple]
    has_chords: bool

    def __len__(self):
        return len(self.triples)


def save_dataset(path: str, triples: Sequence[TrainingTriple], has_chords: bool):
    records = np.zeros(len(triples), dtype=_RECORD)
    for i, t in enumerate(triples):
        records[i]["prev"] = bar_pitches(t.prev)
        records[i]["cur"] = bar_pitches(t.cur)
        if has_chords:
            records[i]["chord"] = t.chord
    header = DATASET_MAGIC + bytes([DATASET_VERSION, _FLAG_CHORDS if has_chords else 0])
    header += len(triples).to_bytes(4, "little")
    with open(path, "wb") as f:
        f.write(header)
        f.write(records.tobytes())


def load_dataset(path: str) -> TripleDataset:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: not a triple dataset (bad magic)")
    if len(blob) < 10 or blob[4] != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported dataset version")
    has_chords = bool(blob[5] & _FLAG_CHORDS)
    count = int.from_bytes(blob[6:10], "little")
    if len(blob) != 10 + count * _RECORD.itemsize:
        raise DatasetFormatError(f"{path}: expected {count} records, file is truncated or padded")
    records = np.frombuffer(blob, dtype=_RECORD, offset=10, count=count)
    for field in ("prev", "cur"):
        steps = records[field]
        bad = np.argwhere((steps >= PITCHES) & (steps != EMPTY_STEP))
        if len(bad):
            record, step = (int(i) for i in bad[0])
            offset = 10 + record * _RECORD.itemsize + _RECORD.fields[field][1] + step
            raise DatasetFormatError(f"{path}: pitch byte {int(steps[record, step])} out of range at offset {offset}")
    triples = [
        TrainingTriple(
            roll_from_pitches(r["prev"]),
            roll_from_pitches(r["cur"]),
            r["chord"].copy() if has_chords else None,
        )
        for r in records
    ]
    return TripleDataset(triples, has_chords)


def is_dataset_file(path: str) -> bool:
    with open(path, "rb") as f:
        return f.read(4) == DATASET_MAGIC


@dataclass
class Batch:
    prev: np.ndarray  # B x 1 x 128 x 16
    cur: np.ndarray  # B x 1 x 128 x 16
    chord: Optional[np.ndarray]  # B x 13

    def __len__(self):
        return self.cur.shape[0]


def stack_batch(triples: Sequence[TrainingTriple]) -> Batch:
    prev = np.stack([t.prev for t in triples])[:, None].astype(np.float32)
    cur = np.stack([t.cur for t in triples])[:, None].astype(np.float32)
    chord = None
    if all(t.chord is not None for t in triples):
        chord = np.stack([t.chord for t in triples]).astype(np.float32)
    return Batch(prev, cur, chord)


def batch_iter(triples: Sequence[TrainingTriple], batch_size: int, seed: int, epoch: int = 0) -> Iterator[Batch]:
    """Seeded per-epoch shuffle; the trailing partial batch is dropped."""
    if not triples:
        raise ContractError("batch_iter needs a non-empty dataset")
    if batch_size < 1:
        raise ContractError("batch_size must be at least 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(triples))
    for start in range(0, (len(triples) // batch_size) * batch_size, batch_size):
        yield stack_batch([triples[i] for i in order[start:start + batch_size]])


######################################
# Corpus preprocessing
######################################

@dataclass
class FileReport:
    path: str
    accepted: bool
    groups: int = 0
    reason: str = ""
    notes: Tuple[str, ...] = ()


def _preprocess_one(path: str) -> Tuple[FileReport, List[MelodyGroup]]:
    try:
        groups, skipped = song_to_groups(read_midi_file(path))
    except (MidiFormatError, SongRejectedError, OSError) as e:
        return FileReport(path, False, reason=str(e)), []
    if not groups:
        return FileReport(path, False, reason="no complete 8-bar group", notes=tuple(skipped)), []
    return FileReport(path, True, groups=len(groups), notes=tuple(skipped)), groups


def preprocess_corpus(paths: Sequence[str], workers: int = 1) -> Tuple[List[MelodyGroup], List[FileReport]]:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_preprocess_one, paths))
    else:
        results = [_preprocess_one(p) for p in paths]
    groups, reports = [], []
    for report, found in results:
        reports.append(report)
        groups.extend(found)
        if report.accepted:
            log_event("pianoroll", "file_accepted", f"path={report.path}, groups={report.groups}")
        else:
            log_event("pianoroll", "file_rejected", f"path={report.path}, reason={report.reason}", level="warning")
    return groups, reports


def list_midi_files(directory: str) -> List[str]:
    found = []
    for root, _, names in os.walk(directory):
        for name in names:
            if name.lower().endswith((".mid", ".midi")):
                found.append(os.path.join(root, name))
    return sorted(found)


def song_to_rolls(song: MidiSong, channel: int = MELODY_CHANNEL, n_bars: Optional[int] = None) -> List[np.ndarray]:
    """Bars of one channel exactly as written (no pause prolongation, no folding)."""
    events = resolve_overlaps(quantize(song.channel(channel), song.ppq))
    return [events_to_roll(evs) for evs in segment_into_bars(events, group_bars=1, n_bars=n_bars)]


def primer_bar(song: MidiSong, channel: int = MELODY_CHANNEL) -> np.ndarray:
    """First bar of a song's melody, processed exactly like dataset bars."""
    melody = quantize(song.channel(channel), song.ppq)
    if not melody:
        raise EmptyBarError(f"no melody notes on channel {channel}")
    melody = [replace(e, pitch=fold_to_register(e.pitch)) for e in resolve_overlaps(melody)]
    return bar_to_roll(segment_into_bars(melody, group_bars=1)[0])
