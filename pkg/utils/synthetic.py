"""Seeded toy corpus: diatonic random walks over a I-IV-V-vi progression."""

import os
from typing import List

import numpy as np

from utils.midi_io import STEPS_PER_BAR, write_midi
from utils.pianoroll import GROUP_BARS, MelodyGroup, chord_to_vec, fold_to_register, roll_from_pitches

MAJOR_SCALE = (0, 2, 4, 5, 7, 9, 11)
PROGRESSION = ((0, "major"), (5, "major"), (7, "major"), (9, "minor"))
NOTE_LENGTHS = (1, 2, 2, 2, 4, 4, 8)
MOVES = (-2, -1, -1, 0, 1, 1, 2)


def synthetic_group(rng: np.random.Generator, n_bars: int = GROUP_BARS, with_chords: bool = True) -> MelodyGroup:
    key = int(rng.integers(12))
    degree = int(rng.integers(7))
    bars, chords = [], []
    for k in range(n_bars):
        pitches: List[int] = []
        while len(pitches) < STEPS_PER_BAR:
            degree = int(np.clip(degree + rng.choice(MOVES), 0, 13))
            pitch = fold_to_register(60 + key + 12 * (degree // 7) + MAJOR_SCALE[degree % 7])
            length = min(int(rng.choice(NOTE_LENGTHS)), STEPS_PER_BAR - len(pitches))
            pitches.extend([pitch] * length)
        bars.append(roll_from_pitches(pitches))
        root, quality = PROGRESSION[k % len(PROGRESSION)]
        chords.append(chord_to_vec((root + key) % 12, quality))
    return MelodyGroup(bars, chords if with_chords else None)


def synthetic_groups(n_groups: int, seed: int = 0, with_chords: bool = True) -> List[MelodyGroup]:
    rng = np.random.default_rng(seed)
    return [synthetic_group(rng, with_chords=with_chords) for _ in range(n_groups)]


def synthetic_song(rng: np.random.Generator, n_bars: int = 16, with_chords: bool = True) -> bytes:
    group = synthetic_group(rng, n_bars=n_bars, with_chords=with_chords)
    return write_midi(group.bars, group.chords)


def write_synthetic_corpus(directory: str, n_songs: int = 10, n_bars: int = 16,
                           seed: int = 0, with_chords: bool = True) -> List[str]:
    os.makedirs(directory, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n_songs):
        path = os.path.join(directory, f"song_{i:03d}.mid")
        with open(path, "wb") as f:
            f.write(synthetic_song(rng, n_bars=n_bars, with_chords=with_chords))
        paths.append(path)
    return paths
