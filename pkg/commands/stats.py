import os

import click

from commands.common import EXIT_BAD_INPUT, emit, fail
from utils.errors import DatasetFormatError, MidiFormatError
from utils.pianoroll import is_dataset_file, list_midi_files, load_dataset, song_to_rolls
from utils.midi_io import read_midi_file
from utils.stats import format_report, roll_statistics


def collect_rolls(path: str):
    """Bars of a dataset file (its current bars), one MIDI file, or a directory of MIDI files."""
    if os.path.isdir(path):
        rolls = []
        for midi_path in list_midi_files(path):
            rolls.extend(song_to_rolls(read_midi_file(midi_path)))
        return rolls
    if is_dataset_file(path):
        return [t.cur for t in load_dataset(path).triples]
    return song_to_rolls(read_midi_file(path))


@click.command("stats")
@click.option("--in", "in_path", required=True, help="Dataset file, MIDI file or directory of MIDI files.")
@click.option("--out", "out_path", default=None, help="Report file; stdout when omitted.")
def command(in_path, out_path):
    """Report pitch usage and register statistics."""
    try:
        rolls = collect_rolls(in_path)
    except (OSError, DatasetFormatError, MidiFormatError) as e:
        fail(f"cannot read {in_path}: {e}", EXIT_BAD_INPUT)
    if not rolls:
        fail(f"no bars found in {in_path}", EXIT_BAD_INPUT)
    emit(format_report(roll_statistics(rolls), in_path), out_path)
