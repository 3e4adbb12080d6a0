import click

from commands.common import EXIT_BAD_CHORD, EXIT_BAD_INPUT, EXIT_MISMATCH, config_option, fail
from utils.checkpoint import load_checkpoint
from utils.config import merge_config, parse_chord_spec
from utils.errors import CheckpointError, ChordSpecError, ConfigError, ContractError, EmptyBarError, MidiFormatError
from utils.midi_io import read_midi_file, write_midi
from utils.pianoroll import primer_bar
from utils.sampler import GenerationRequest, Sampler


@click.command("generate")
@click.option("--ckpt", "ckpt_path", required=True)
@click.option("--bars", type=int, default=None)
@click.option("--primer", "primer_path", default=None, help="MIDI file whose first melody bar starts the piece.")
@click.option("--chords", default=None, help="Comma list of chord symbols, e.g. C,Am,F,G.")
@click.option("--seed", type=int, default=None)
@click.option("--tempo", type=float, default=None, help="Tempo of the written file in BPM.")
@click.option("--out", "out_path", required=True)
@config_option
def command(ckpt_path, bars, primer_path, chords, seed, tempo, out_path, config_path):
    """Generate a melody from a checkpoint and write it as MIDI."""
    try:
        cfg = merge_config(dict(bars=bars, chords=chords, seed=seed, tempo=tempo), config_path)
    except ConfigError as e:
        fail(str(e), EXIT_BAD_INPUT)
    if cfg.bars < 1:
        fail("--bars must be at least 1", EXIT_BAD_INPUT)

    chord_vecs = None
    if cfg.chords is not None:
        try:
            chord_vecs = parse_chord_spec(cfg.chords, cfg.bars)
        except ChordSpecError as e:
            fail(str(e), EXIT_BAD_CHORD)

    try:
        sampler = Sampler.from_checkpoint(load_checkpoint(ckpt_path))
    except CheckpointError as e:
        fail(str(e), EXIT_BAD_INPUT)

    primer = None
    if primer_path is not None:
        try:
            primer = primer_bar(read_midi_file(primer_path))
        except (OSError, MidiFormatError, EmptyBarError) as e:
            fail(f"unusable primer {primer_path}: {e}", EXIT_BAD_INPUT)

    try:
        rolls = sampler.generate_sequence(GenerationRequest(cfg.bars, cfg.seed, primer, chord_vecs))
    except ContractError as e:
        fail(str(e), EXIT_MISMATCH)

    with open(out_path, "wb") as f:
        f.write(write_midi(rolls, chord_vecs, tempo_bpm=cfg.tempo))
