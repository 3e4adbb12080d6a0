"""Bar-by-bar melody generation from a trained checkpoint."""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import numpy as np

from utils.checkpoint import Checkpoint, load_checkpoint
from utils.errors import ContractError, DimensionError
from utils.logger import log_event
from utils.midi_io import PITCHES, STEPS_PER_BAR
from utils.models import MidiNet, monophonize_roll
from utils.pianoroll import CHORD_DIMS, empty_bar
from utils.tensor import Tensor, no_grad


@dataclass
class GenerationRequest:
    n_bars: int
    seed: int = 0
    primer: Optional[np.ndarray] = None
    chords: Optional[Sequence[np.ndarray]] = None
    checkpoint: Union[str, Checkpoint, None] = None


class Sampler:
    def __init__(self, net: MidiNet):
        self.net = net
        self.variant = net.variant

    @classmethod
    def from_checkpoint(cls, ckpt: Union[str, Checkpoint]) -> "Sampler":
        if isinstance(ckpt, str):
            ckpt = load_checkpoint(ckpt)
        return cls(ckpt.build_net())

    def _validate(self, req: GenerationRequest):
        if req.n_bars < 1:
            raise ContractError("n_bars must be at least 1")
        if req.primer is not None:
            primer = np.asarray(req.primer)
            if primer.shape != (PITCHES, STEPS_PER_BAR):
                raise DimensionError("primer", primer.shape, (PITCHES, STEPS_PER_BAR))
            if (primer.sum(axis=0) > 1).any():
                raise ContractError("primer bar must be monophonic")
        if self.variant.use_chord:
            if req.chords is None:
                raise ContractError("this checkpoint needs one chord per bar")
            if len(req.chords) != req.n_bars:
                raise ContractError(f"{len(req.chords)} chords given for {req.n_bars} bars")
            for vec in req.chords:
                if np.shape(vec) != (CHORD_DIMS,):
                    raise DimensionError("chord", np.shape(vec), (CHORD_DIMS,))
        elif req.chords is not None:
            raise ContractError("this checkpoint was trained without chord conditions")

    def generate_sequence(self, req: GenerationRequest, trace: Optional[list] = None) -> List[np.ndarray]:
        """
        Generate `req.n_bars` bars; each bar is conditioned on the bar emitted before it.

        A primer counts as the first bar. Noise is drawn fresh per bar from a
        stream seeded by `req.seed`. When `trace` is a list, the previous-bar
        condition used for every generated bar is appended to it.
        """
        self._validate(req)
        rng = np.random.default_rng(req.seed)
        previous = empty_bar()
        bars: List[np.ndarray] = []
        with no_grad():
            for k in range(req.n_bars):
                if k == 0 and req.primer is not None:
                    bar = np.asarray(req.primer, dtype=np.uint8).copy()
                else:
                    if trace is not None:
                        trace.append(previous.copy())
                    z = Tensor(rng.standard_normal((1, self.variant.noise_dim)))
                    chord = Tensor(np.asarray(req.chords[k])[None]) if self.variant.use_chord else None
                    acts = self.net.generate(z, chord, Tensor(previous[None, None]))
                    bar = monophonize_roll(acts.data[0, 0])
                bars.append(bar)
                previous = bar
        log_event("sampler", "generated", f"bars={req.n_bars}, seed={req.seed}, primer={req.primer is not None}")
        return bars

    def from_scratch(self, n_bars: int, chords: Optional[Sequence[np.ndarray]] = None, seed: int = 0) -> List[np.ndarray]:
        return self.generate_sequence(GenerationRequest(n_bars, seed, None, chords))


def generate_sequence(req: GenerationRequest, trace: Optional[list] = None) -> List[np.ndarray]:
    if req.checkpoint is None:
        raise ContractError("generation request has no checkpoint")
    return Sampler.from_checkpoint(req.checkpoint).generate_sequence(req, trace)


def from_scratch(checkpoint: Union[str, Checkpoint], n_bars: int,
                 chords: Optional[Sequence[np.ndarray]] = None, seed: int = 0) -> List[np.ndarray]:
    return Sampler.from_checkpoint(checkpoint).from_scratch(n_bars, chords, seed)
