from dataclasses import dataclass
from typing import Sequence

import numpy as np

from utils.errors import ContractError
from utils.midi_io import PITCHES, STEPS_PER_BAR
from utils.pianoroll import EMPTY_STEP, N_KEYS, REGISTER_HIGH, REGISTER_LOW, bar_pitches


@dataclass
class RollStats:
    bars: int
    active_cells: int
    pitch_histogram: np.ndarray  # 128, normalised over active cells
    pitch_class_histogram: np.ndarray  # 12
    out_of_register: float
    note_change_rate: float
    monophonic_fraction: float


def roll_statistics(rolls: Sequence[np.ndarray]) -> RollStats:
    """Pitch usage and melodic motion over a collection of 128 x 16 bars."""
    if len(rolls) == 0:
        raise ContractError("roll_statistics needs at least one bar")
    stack = np.stack([np.asarray(r) > 0 for r in rolls])
    if stack.shape[1:] != (PITCHES, STEPS_PER_BAR):
        raise ContractError(f"bars must be {PITCHES}x{STEPS_PER_BAR}, got {stack.shape[1:]}")

    counts = stack.sum(axis=(0, 2)).astype(np.float64)
    active = int(counts.sum())
    pitch_hist = counts / active if active else counts
    class_hist = np.zeros(N_KEYS)
    np.add.at(class_hist, np.arange(PITCHES) % N_KEYS, pitch_hist)
    outside = counts[:REGISTER_LOW].sum() + counts[REGISTER_HIGH + 1:].sum()

    per_column = stack.sum(axis=1)
    monophonic = float((per_column == 1).mean())

    changes = []
    for roll in rolls:
        pitches = bar_pitches(roll)
        moves = sum(1 for a, b in zip(pitches[:-1], pitches[1:]) if a != b and b != EMPTY_STEP)
        changes.append(moves / (STEPS_PER_BAR - 1))

    return RollStats(
        bars=len(rolls),
        active_cells=active,
        pitch_histogram=pitch_hist,
        pitch_class_histogram=class_hist,
        out_of_register=float(outside / active) if active else 0.0,
        note_change_rate=float(np.mean(changes)),
        monophonic_fraction=monophonic,
    )


PITCH_CLASS_NAMES = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")


def format_report(stats: RollStats, source: str) -> str:
    lines = [
        f"# roll statistics for {source}",
        f"bars\t{stats.bars}",
        f"active_cells\t{stats.active_cells}",
        f"out_of_register\t{stats.out_of_register:.4f}",
        f"note_change_rate\t{stats.note_change_rate:.4f}",
        f"monophonic_fraction\t{stats.monophonic_fraction:.4f}",
        "",
        "# pitch_class\tshare",
    ]
    lines += [f"{name}\t{share:.4f}" for name, share in zip(PITCH_CLASS_NAMES, stats.pitch_class_histogram)]
    lines += ["", "# pitch\tshare"]
    lines += [f"{p}\t{stats.pitch_histogram[p]:.4f}" for p in np.flatnonzero(stats.pitch_histogram)]
    return "\n".join(lines) + "\n"
