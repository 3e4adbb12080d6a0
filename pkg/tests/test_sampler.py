import numpy as np
import pytest

from tests.conftest import toy_variant
from utils.checkpoint import Checkpoint, save_checkpoint
from utils.errors import ContractError
from utils.models import MidiNet
from utils.pianoroll import chord_to_vec, empty_bar, roll_from_pitches
from utils.sampler import GenerationRequest, Sampler, from_scratch, generate_sequence


def sampler_for(variant, seed=0):
    return Sampler(MidiNet(variant, seed=seed))


def chords(n):
    return [chord_to_vec(k % 12, "major") for k in range(n)]


def test_bars_are_monophonic_and_sized(variant):
    bars = sampler_for(variant).generate_sequence(GenerationRequest(4, seed=1, chords=chords(4)))
    assert len(bars) == 4
    for bar in bars:
        assert bar.shape == (128, 16)
        assert np.all(bar.sum(axis=0) == 1)


def test_same_seed_same_output(variant):
    sampler = sampler_for(variant)
    a = sampler.generate_sequence(GenerationRequest(3, seed=7, chords=chords(3)))
    b = sampler.generate_sequence(GenerationRequest(3, seed=7, chords=chords(3)))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_each_bar_is_conditioned_on_the_previous_one(variant):
    trace = []
    bars = sampler_for(variant).generate_sequence(GenerationRequest(4, seed=2, chords=chords(4)), trace)
    np.testing.assert_array_equal(trace[0], empty_bar())
    for k in range(1, 4):
        np.testing.assert_array_equal(trace[k], bars[k - 1])


def test_primer_counts_as_first_bar(variant):
    primer = roll_from_pitches([64] * 16)
    trace = []
    bars = sampler_for(variant).generate_sequence(
        GenerationRequest(3, seed=0, primer=primer, chords=chords(3)), trace)
    assert len(bars) == 3
    np.testing.assert_array_equal(bars[0], primer)
    assert len(trace) == 2
    np.testing.assert_array_equal(trace[0], primer)


def test_generation_leaves_parameters_untouched(variant):
    sampler = sampler_for(variant)
    before = {name: p.data.copy() for name, p in sampler.net.params.items()}
    sampler.generate_sequence(GenerationRequest(2, chords=chords(2)))
    for name, p in sampler.net.params.items():
        np.testing.assert_array_equal(before[name], p.data)
        assert np.all(p.grad == 0)


def test_request_validation(variant):
    sampler = sampler_for(variant)
    with pytest.raises(ContractError):
        sampler.generate_sequence(GenerationRequest(2))
    with pytest.raises(ContractError):
        sampler.generate_sequence(GenerationRequest(3, chords=chords(2)))
    with pytest.raises(ContractError):
        sampler.generate_sequence(GenerationRequest(0, chords=[]))
    polyphonic = roll_from_pitches([60] * 16)
    polyphonic[72, 0] = 1
    with pytest.raises(ContractError):
        sampler.generate_sequence(GenerationRequest(2, primer=polyphonic, chords=chords(2)))
    chordless = sampler_for(toy_variant(use_chord=False))
    with pytest.raises(ContractError):
        chordless.generate_sequence(GenerationRequest(2, chords=chords(2)))


def test_module_level_helpers_load_checkpoints(tmp_path):
    variant = toy_variant(use_chord=False, twod_layers=(2,))
    net = MidiNet(variant, seed=4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(str(path), Checkpoint.from_net(net, {}, 0, 0, {}))
    a = from_scratch(str(path), 3, seed=5)
    b = generate_sequence(GenerationRequest(3, seed=5, checkpoint=str(path)))
    assert len(a) == 3
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ContractError):
        generate_sequence(GenerationRequest(3))
