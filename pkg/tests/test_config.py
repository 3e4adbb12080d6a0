import numpy as np
import pytest

from utils.config import build_variant, load_config_file, merge_config, parse_chord_spec, parse_chord_symbol
from utils.errors import ChordSpecError, ConfigError
from utils.pianoroll import chord_to_vec, vec_to_chord


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return str(path)


def test_config_file_parsing(tmp_path):
    path = write(tmp_path, "# training run\nepochs = 3\n\nbatch_size=16  # small\nlambda1 = 0.5\n")
    assert load_config_file(path) == {"epochs": "3", "batch_size": "16", "lambda1": "0.5"}


def test_unknown_key_names_its_line(tmp_path):
    path = write(tmp_path, "epochs = 3\nlearning_rate = 1\n")
    with pytest.raises(ConfigError) as info:
        load_config_file(path)
    assert info.value.line == 2
    assert "learning_rate" in str(info.value)


def test_line_without_assignment(tmp_path):
    with pytest.raises(ConfigError) as info:
        load_config_file(write(tmp_path, "epochs\n"))
    assert info.value.line == 1


def test_flag_beats_file_beats_default(tmp_path):
    path = write(tmp_path, "epochs = 3\nseed = 9\n")
    cfg = merge_config({"epochs": 5, "seed": None}, path)
    assert cfg.epochs == 5
    assert cfg.seed == 9
    assert cfg.batch_size == 64


def test_invalid_value_becomes_config_error(tmp_path):
    with pytest.raises(ConfigError):
        merge_config({}, write(tmp_path, "epochs = many\n"))


def test_build_variant_keeps_preset_ids_unless_overridden():
    assert build_variant(merge_config({"variant": 2})).id == 2
    custom = build_variant(merge_config({"variant": 1, "twod_layers": "1,2", "lambda2": 0.5}))
    assert custom.id == 0
    assert custom.twod_layers == (1, 2) and custom.lambda2 == 0.5
    assert build_variant(merge_config({"variant": 1, "lambda1": 0.1})).id == 1
    with pytest.raises(ConfigError):
        build_variant(merge_config({"variant": 1, "twod_layers": "7"}))


@pytest.mark.parametrize("token, root, quality", [
    ("C", 0, "major"),
    ("Am", 9, "minor"),
    ("F#", 6, "major"),
    ("Bb", 10, "major"),
    ("Db", 1, "major"),
    ("C#m", 1, "minor"),
    ("Cb", 11, "major"),
])
def test_chord_symbols(token, root, quality):
    assert vec_to_chord(parse_chord_symbol(token)) == (root, quality)


@pytest.mark.parametrize("token", ["H7", "Cmaj7", "c", "", "A#mm"])
def test_bad_chord_symbols(token):
    with pytest.raises(ChordSpecError):
        parse_chord_symbol(token)


def test_chord_spec_cycles_to_bar_count():
    vecs = parse_chord_spec("C,Am,F,G", n_bars=6)
    assert len(vecs) == 6
    np.testing.assert_array_equal(vecs[4], chord_to_vec(0, "major"))
    np.testing.assert_array_equal(vecs[5], chord_to_vec(9, "minor"))


def test_chord_spec_names_bad_token():
    with pytest.raises(ChordSpecError) as info:
        parse_chord_spec("C,H7,G")
    assert info.value.token == "H7"
