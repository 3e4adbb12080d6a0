import os
from typing import List

import click

from commands.common import EXIT_BAD_INPUT, EXIT_NOTHING_ACCEPTED, config_option, emit, fail
from utils.config import merge_config
from utils.errors import ConfigError
from utils.logger import log_event
from utils.pianoroll import (
    FileReport,
    list_midi_files,
    make_training_triples,
    preprocess_corpus,
    save_dataset,
    transpose_augment,
)


def render_report(reports: List[FileReport], n_groups: int, n_triples: int, has_chords: bool, notes: List[str]) -> str:
    accepted = sum(r.accepted for r in reports)
    lines = [
        "# preprocess report",
        f"files\t{len(reports)}",
        f"accepted\t{accepted}",
        f"rejected\t{len(reports) - accepted}",
        f"groups\t{n_groups}",
        f"triples\t{n_triples}",
        f"chords\t{'yes' if has_chords else 'no'}",
    ]
    lines += [f"note\t{n}" for n in notes]
    lines.append("")
    for r in reports:
        if r.accepted:
            lines.append(f"ACCEPTED\t{r.path}\tgroups={r.groups}")
        else:
            lines.append(f"REJECTED\t{r.path}\t{r.reason}")
        lines += [f"SKIPPED\t{r.path}\t{n}" for n in r.notes]
    return "\n".join(lines) + "\n"


@click.command("preprocess")
@click.option("--in", "in_dir", required=True, help="Directory of MIDI files (searched recursively).")
@click.option("--out", "out_path", required=True, help="Dataset file to write.")
@click.option("--report", "report_path", default=None, help="Report file; stdout when omitted.")
@click.option("--workers", type=int, default=None)
@click.option("--no-augment", "no_augment", is_flag=True, default=False, help="Skip the 12-key transposition.")
@config_option
def command(in_dir, out_path, report_path, workers, no_augment, config_path):
    """Turn a MIDI corpus into a training-triple dataset."""
    try:
        cfg = merge_config({"workers": workers, "augment": False if no_augment else None}, config_path)
    except ConfigError as e:
        fail(str(e), EXIT_BAD_INPUT)
    if not os.path.isdir(in_dir) or not os.access(in_dir, os.R_OK):
        fail(f"cannot read directory {in_dir}", EXIT_BAD_INPUT)

    paths = list_midi_files(in_dir)
    groups, reports = preprocess_corpus(paths, workers=cfg.workers)
    notes = []
    if not paths:
        notes.append("no MIDI files found")

    has_chords = bool(groups) and all(g.chords is not None for g in groups)
    if groups and not has_chords and any(g.chords is not None for g in groups):
        notes.append("some songs have no chord track; chords dropped from the whole dataset")
        log_event("preprocess", "chords_dropped", f"in={in_dir}", level="warning")
        for g in groups:
            g.chords = None
    if cfg.augment:
        groups = transpose_augment(groups)
    triples = [t for g in groups for t in make_training_triples(g)]

    if not any(r.accepted for r in reports):
        notes.append("no accepted files; dataset not written")
        emit(render_report(reports, 0, 0, False, notes), report_path)
        log_event("preprocess", "nothing_accepted", f"in={in_dir}, files={len(paths)}", level="error")
        fail(f"no usable MIDI files in {in_dir}", EXIT_NOTHING_ACCEPTED)

    save_dataset(out_path, triples, has_chords)
    emit(render_report(reports, len(groups), len(triples), has_chords, notes), report_path)
    log_event("preprocess", "dataset_written", f"out={out_path}, triples={len(triples)}, chords={has_chords}")
