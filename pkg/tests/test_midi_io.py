import io

import mido
import numpy as np
import pytest

from utils.errors import ContractError, DimensionError, MidiFormatError
from utils.midi_io import (
    CHORD_CHANNEL,
    MELODY_CHANNEL,
    MidiSong,
    NoteEvent,
    parse_midi,
    quantize,
    write_midi,
)
from utils.pianoroll import chord_to_vec, roll_from_pitches, song_to_rolls


def midi_bytes(messages, ppq=480, fmt=1, extra_tracks=()):
    midi = mido.MidiFile(type=fmt, ticks_per_beat=ppq)
    track = mido.MidiTrack()
    track.extend(messages)
    midi.tracks.append(track)
    for t in extra_tracks:
        midi.tracks.append(mido.MidiTrack(t))
    buf = io.BytesIO()
    midi.save(file=buf)
    return buf.getvalue()


def note(pitch, on, off_delta, channel=0, before=0):
    return [
        mido.Message("note_on", note=pitch, velocity=90, channel=channel, time=before),
        mido.Message("note_off", note=pitch, velocity=0, channel=channel, time=off_delta),
    ]


def test_parse_simple_notes():
    data = midi_bytes(note(60, 0, 480) + note(62, 0, 240, before=0))
    song = parse_midi(data)
    assert song.ppq == 480
    events = song.channel(0)
    assert [(e.pitch, e.onset, e.duration) for e in events] == [(60, 0, 480), (62, 480, 240)]


def test_parse_reads_tempo_and_meter():
    meta = [
        mido.MetaMessage("set_tempo", tempo=600000, time=0),
        mido.MetaMessage("time_signature", numerator=3, denominator=4, time=0),
    ]
    song = parse_midi(midi_bytes(meta + note(60, 0, 480)))
    assert song.tempo == 600000
    assert song.time_signature == (3, 4)


def test_note_on_with_zero_velocity_closes_note():
    msgs = [
        mido.Message("note_on", note=64, velocity=80, time=0),
        mido.Message("note_on", note=64, velocity=0, time=120),
    ]
    (event,) = parse_midi(midi_bytes(msgs)).channel(0)
    assert (event.pitch, event.onset, event.duration) == (64, 0, 120)


def test_overlapping_same_pitch_notes_merge():
    msgs = [
        mido.Message("note_on", note=60, velocity=80, time=0),
        mido.Message("note_on", note=60, velocity=80, time=100),
        mido.Message("note_off", note=60, velocity=0, time=100),
        mido.Message("note_off", note=60, velocity=0, time=100),
    ]
    (event,) = parse_midi(midi_bytes(msgs)).channel(0)
    assert (event.onset, event.duration) == (0, 300)


def test_unmatched_note_on_closed_at_track_end(event_log_dir):
    msgs = [
        mido.Message("note_on", note=67, velocity=80, time=0),
        mido.Message("note_on", note=60, velocity=80, time=0),
        mido.Message("note_off", note=60, velocity=0, time=480),
    ]
    events = parse_midi(midi_bytes(msgs)).channel(0)
    assert (67, 0, 480) in [(e.pitch, e.onset, e.duration) for e in events]
    log = (event_log_dir / "midinet_events.log").read_text()
    assert "unmatched_note_on" in log


def test_channels_are_kept_apart():
    data = midi_bytes(note(72, 0, 480, channel=MELODY_CHANNEL) + note(48, 0, 480, channel=CHORD_CHANNEL, before=0))
    song = parse_midi(data)
    assert [e.pitch for e in song.channel(MELODY_CHANNEL)] == [72]
    assert [e.pitch for e in song.channel(CHORD_CHANNEL)] == [48]


@pytest.mark.parametrize("mutate, fragment", [
    (lambda d: b"RIFF" + d[4:], "MThd"),
    (lambda d: d[:10], "MThd"),
    (lambda d: d[:8] + (2).to_bytes(2, "big") + d[10:], "format 2"),
    (lambda d: d[:12] + bytes([0xE7, 0x28]) + d[14:], "SMPTE"),
    (lambda d: d[:-3], "remain"),
])
def test_malformed_files_report_position(mutate, fragment):
    data = mutate(midi_bytes(note(60, 0, 480)))
    with pytest.raises(MidiFormatError) as info:
        parse_midi(data)
    assert fragment in str(info.value)
    assert info.value.offset is not None


def test_random_bytes_never_crash_unexpectedly(rng):
    for _ in range(1000):
        blob = rng.integers(0, 256, size=int(rng.integers(0, 64)), dtype=np.uint8).tobytes()
        if rng.random() < 0.5:
            blob = b"MThd" + blob
        try:
            parse_midi(blob)
        except MidiFormatError:
            pass


def test_quantize_rounds_to_sixteenths():
    events = [NoteEvent(60, 0, 480), NoteEvent(62, 470, 130), NoteEvent(64, 960, 61)]
    q = quantize(events, 480)
    assert [(e.pitch, e.onset, e.duration) for e in q] == [(60, 0, 4), (62, 4, 1), (64, 8, 1)]


def test_quantize_drops_notes_shorter_than_a_32nd(event_log_dir):
    q = quantize([NoteEvent(60, 0, 59), NoteEvent(62, 0, 60)], 480)
    assert [e.pitch for e in q] == [62]
    assert "short_note_dropped" in (event_log_dir / "midinet_events.log").read_text()


def test_quantize_is_idempotent_on_step_units():
    q = quantize([NoteEvent(60, 7, 333), NoteEvent(65, 1000, 250)], 480)
    assert quantize(q, 4) == q


def test_quantize_rejects_bad_ppq():
    with pytest.raises(ContractError):
        quantize([], 0)


def test_note_event_validation():
    with pytest.raises(ContractError):
        NoteEvent(128, 0, 1)
    with pytest.raises(ContractError):
        NoteEvent(60, 0, 0)


def random_melody_bar(rng):
    pitches = []
    while len(pitches) < 16:
        pitch = int(rng.integers(60, 84)) if rng.random() < 0.85 else 255
        pitches.extend([pitch] * int(rng.integers(1, 5)))
    return roll_from_pitches(pitches[:16])


def test_write_then_parse_reproduces_rolls(rng):
    for _ in range(500):
        bars = [random_melody_bar(rng) for _ in range(int(rng.integers(1, 4)))]
        song = parse_midi(write_midi(bars))
        rolls = song_to_rolls(song, MELODY_CHANNEL, n_bars=len(bars))
        for original, parsed in zip(bars, rolls):
            np.testing.assert_array_equal(original, parsed)


def test_write_includes_chord_track():
    bars = [roll_from_pitches([60] * 16), roll_from_pitches([65] * 16)]
    chords = [chord_to_vec(0, "major"), chord_to_vec(9, "minor")]
    song = parse_midi(write_midi(bars, chords, tempo_bpm=90))
    chord_notes = song.channel(CHORD_CHANNEL)
    assert sorted(e.pitch for e in chord_notes if e.onset == 0) == [48, 52, 55]
    assert sorted(e.pitch for e in chord_notes if e.onset > 0) == [57, 60, 64]
    assert song.tempo == mido.bpm2tempo(90)
    assert song.time_signature == (4, 4)


def test_write_rejects_polyphonic_or_misshapen_bars():
    bar = roll_from_pitches([60] * 16)
    bar[64, 3] = 1
    with pytest.raises(ContractError):
        write_midi([bar])
    with pytest.raises(DimensionError):
        write_midi([np.zeros((128, 8))])


def chunk_offsets(data):
    offsets, offset = [], 0
    while offset + 8 <= len(data):
        offsets.append(offset)
        offset += 8 + int.from_bytes(data[offset + 4:offset + 8], "big")
    return offsets


def parse_or_format_error(data):
    try:
        assert isinstance(parse_midi(data), MidiSong)
    except MidiFormatError:
        pass


def test_mutated_valid_files_parse_or_raise_format_error(rng):
    melody = [m for p in (60, 64, 67, 72) for m in note(p, 0, 240)]
    valid = midi_bytes(melody, extra_tracks=[note(48, 0, 960, channel=1)])
    offsets = chunk_offsets(valid)
    assert len(offsets) == 3

    for cut in range(len(valid)):
        parse_or_format_error(valid[:cut])

    for _ in range(300):
        blob = bytearray(valid)
        start = int(rng.choice(offsets)) + 4
        blob[start:start + 4] = int(rng.integers(0, 2 ** 32)).to_bytes(4, "big")
        parse_or_format_error(bytes(blob))

        blob = bytearray(valid)
        start = int(rng.choice(offsets)) + 4 + int(rng.integers(0, 4))
        blob[start] ^= 1 << int(rng.integers(0, 8))
        parse_or_format_error(bytes(blob))

        blob = bytearray(valid)
        for _ in range(int(rng.integers(1, 4))):
            blob[int(rng.integers(14, len(blob)))] = int(rng.integers(0, 256))
        parse_or_format_error(bytes(blob))
