import numpy as np
import pytest
from click.testing import CliRunner

from main import cli
from tests.conftest import toy_variant
from utils.checkpoint import Checkpoint, save_checkpoint
from utils.midi_io import MELODY_CHANNEL, read_midi_file, write_midi
from utils.models import MidiNet
from utils.pianoroll import load_dataset, roll_from_pitches, song_to_rolls
from utils.synthetic import write_synthetic_corpus


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def corpus(tmp_path):
    directory = tmp_path / "corpus"
    write_synthetic_corpus(str(directory), n_songs=10, n_bars=16, seed=0)
    return directory


def toy_checkpoint(tmp_path, **overrides):
    path = tmp_path / "toy.ckpt"
    save_checkpoint(str(path), Checkpoint.from_net(MidiNet(toy_variant(**overrides), seed=0), {}, 0, 0, {}))
    return str(path)


def test_preprocess_synthetic_corpus(runner, corpus, tmp_path):
    out, report = tmp_path / "data.mnds", tmp_path / "report.txt"
    result = runner.invoke(cli, ["preprocess", "--in", str(corpus), "--out", str(out), "--report", str(report)])
    assert result.exit_code == 0, result.output
    dataset = load_dataset(str(out))
    assert len(dataset) == 10 * (16 // 8) * 8 * 12
    assert dataset.has_chords
    rows = dict(line.split("\t")[:2] for line in report.read_text().splitlines() if "\t" in line)
    assert rows["accepted"] == "10"


def test_preprocess_without_augmentation(runner, corpus, tmp_path):
    out = tmp_path / "data.mnds"
    result = runner.invoke(cli, ["preprocess", "--in", str(corpus), "--out", str(out), "--no-augment"])
    assert result.exit_code == 0
    assert len(load_dataset(str(out))) == 10 * 2 * 8
    assert "accepted\t10" in result.output


def test_preprocess_skips_corrupt_file(runner, corpus, tmp_path):
    (corpus / "zz_corrupt.mid").write_bytes(b"not a midi file at all")
    report = tmp_path / "report.txt"
    result = runner.invoke(cli, ["preprocess", "--in", str(corpus), "--out", str(tmp_path / "d.mnds"),
                                 "--report", str(report), "--no-augment"])
    assert result.exit_code == 0
    assert "REJECTED\t" + str(corpus / "zz_corrupt.mid") in report.read_text()


def test_preprocess_empty_directory(runner, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    report = tmp_path / "report.txt"
    result = runner.invoke(cli, ["preprocess", "--in", str(empty), "--out", str(tmp_path / "d.mnds"),
                                 "--report", str(report)])
    assert result.exit_code == 3
    assert "no MIDI files found" in report.read_text()
    assert not (tmp_path / "d.mnds").exists()


def test_preprocess_missing_directory(runner, tmp_path):
    result = runner.invoke(cli, ["preprocess", "--in", str(tmp_path / "nope"), "--out", str(tmp_path / "d.mnds")])
    assert result.exit_code == 2


def test_preprocess_bad_config_key(runner, corpus, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("workers = 1\nturbo = yes\n")
    result = runner.invoke(cli, ["preprocess", "--in", str(corpus), "--out", str(tmp_path / "d.mnds"),
                                 "--config", str(cfg)])
    assert result.exit_code == 2
    assert "line 2" in result.output


@pytest.fixture
def chordless_dataset(runner, tmp_path):
    directory = tmp_path / "plain"
    write_synthetic_corpus(str(directory), n_songs=2, n_bars=8, seed=1, with_chords=False)
    out = tmp_path / "plain.mnds"
    result = runner.invoke(cli, ["preprocess", "--in", str(directory), "--out", str(out), "--no-augment"])
    assert result.exit_code == 0
    return str(out)


def test_train_variant_2_needs_chords(runner, chordless_dataset, tmp_path):
    result = runner.invoke(cli, ["train", "--dataset", chordless_dataset, "--variant", "2",
                                 "--epochs", "1", "--out", str(tmp_path / "m.ckpt")])
    assert result.exit_code == 4


def test_train_unreadable_dataset(runner, tmp_path):
    bogus = tmp_path / "bogus.mnds"
    bogus.write_bytes(b"garbage")
    result = runner.invoke(cli, ["train", "--dataset", str(bogus), "--out", str(tmp_path / "m.ckpt")])
    assert result.exit_code == 2


def test_train_custom_variant_writes_checkpoint_and_metrics(runner, chordless_dataset, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    result = runner.invoke(cli, [
        "train", "--dataset", chordless_dataset, "--variant", "1", "--epochs", "1", "--seed", "0",
        "--out", str(ckpt), "--batch-size", "8", "--twod-layers", "", "--max-iterations", "1",
    ])
    assert result.exit_code == 0, result.output
    assert ckpt.exists()
    metrics = (tmp_path / "m.metrics.tsv").read_text().splitlines()
    assert len(metrics) == 1


def test_generate_is_deterministic(runner, tmp_path):
    ckpt = toy_checkpoint(tmp_path, use_chord=False)
    primer = tmp_path / "p.mid"
    primer.write_bytes(write_midi([roll_from_pitches([67] * 16)]))
    outputs = []
    for name in ("a.mid", "b.mid"):
        out = tmp_path / name
        result = runner.invoke(cli, ["generate", "--ckpt", ckpt, "--bars", "8", "--primer", str(primer),
                                     "--seed", "7", "--out", str(out)])
        assert result.exit_code == 0, result.output
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    rolls = song_to_rolls(read_midi_file(str(tmp_path / "a.mid")), MELODY_CHANNEL, n_bars=8)
    assert len(rolls) == 8
    np.testing.assert_array_equal(rolls[0], roll_from_pitches([67] * 16))


def test_generate_with_chords(runner, tmp_path):
    ckpt = toy_checkpoint(tmp_path)
    out = tmp_path / "c.mid"
    result = runner.invoke(cli, ["generate", "--ckpt", ckpt, "--bars", "4", "--chords", "C,Am,F,G",
                                 "--out", str(out), "--tempo", "100"])
    assert result.exit_code == 0, result.output
    song = read_midi_file(str(out))
    assert len(song_to_rolls(song, MELODY_CHANNEL, n_bars=4)) == 4
    assert len(song.channel(1)) == 12


def test_generate_bad_chord_token(runner, tmp_path):
    ckpt = toy_checkpoint(tmp_path)
    result = runner.invoke(cli, ["generate", "--ckpt", ckpt, "--bars", "4", "--chords", "H7",
                                 "--out", str(tmp_path / "x.mid")])
    assert result.exit_code == 5
    assert "H7" in result.output


def test_generate_chords_for_chordless_checkpoint(runner, tmp_path):
    ckpt = toy_checkpoint(tmp_path, use_chord=False)
    result = runner.invoke(cli, ["generate", "--ckpt", ckpt, "--bars", "2", "--chords", "C",
                                 "--out", str(tmp_path / "x.mid")])
    assert result.exit_code == 4


def test_generate_missing_checkpoint(runner, tmp_path):
    result = runner.invoke(cli, ["generate", "--ckpt", str(tmp_path / "none.ckpt"), "--out", str(tmp_path / "x.mid")])
    assert result.exit_code == 2


def test_stats_on_dataset_and_midi(runner, chordless_dataset, tmp_path):
    result = runner.invoke(cli, ["stats", "--in", chordless_dataset])
    assert result.exit_code == 0
    assert "out_of_register\t0.0000" in result.output

    c4 = tmp_path / "c4.mid"
    c4.write_bytes(write_midi([roll_from_pitches([60] * 16)] * 2))
    report = tmp_path / "stats.txt"
    result = runner.invoke(cli, ["stats", "--in", str(c4), "--out", str(report)])
    assert result.exit_code == 0
    assert "60\t1.0000" in report.read_text().splitlines()


def test_stats_unreadable_input(runner, tmp_path):
    result = runner.invoke(cli, ["stats", "--in", str(tmp_path / "missing.mnds")])
    assert result.exit_code == 2


def test_stats_unwritable_report(runner, chordless_dataset, tmp_path):
    result = runner.invoke(cli, ["stats", "--in", chordless_dataset, "--out", str(tmp_path / "missing" / "s.txt")])
    assert result.exit_code == 2
    assert "cannot write" in result.output
