"""
Generator, discriminator and conditioner CNNs.

Shapes per sample (channels x height x width):

    G:  z(100) -> FC 1024 -> FC 512 -> 256x1x2
        -> deconv 1x2/2 -> 1x4 -> deconv 1x2/2 -> 1x8 -> deconv 1x2/2 -> 1x16
        -> deconv 128x1/1 -> 1x128x16 (sigmoid)
    C:  1x128x16 -> conv 128x1/1 -> cx1x16 -> conv 1x2/2 -> cx1x8 -> cx1x4 -> cx1x2
    D:  1x128x16 -> conv 128x2/2 -> 14x1x8 -> conv 1x4/2 -> 77x1x3 -> FC 1024 -> FC 1

The conditioner map of width w feeds the generator layer whose input has width w
(mirrored pairing: the deepest conditioner map enters the first deconvolution).
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from utils.errors import ContractError, DimensionError
from utils.midi_io import PITCHES, STEPS_PER_BAR
from utils.pianoroll import CHORD_DIMS
from utils.tensor import (
    Tensor,
    apply_op,
    concat_channels,
    conv2d,
    fully_connected,
    leaky_relu,
    relu,
    reshape,
    sigmoid,
    transposed_conv2d,
)

G_LAYERS = (1, 2, 3, 4)
INIT_STD = 0.02


class ModelVariant(BaseModel):
    """Network configuration; id 0 is a custom variant, ids 1-3 are the published ones."""

    model_config = ConfigDict(frozen=True)

    id: int = 0
    g_filters: int
    cond_filters: int
    twod_layers: Tuple[int, ...]
    use_chord: bool
    lambda1: float
    lambda2: float
    noise_dim: int = 100
    fc_units: Tuple[int, int] = (1024, 512)
    d_filters: Tuple[int, int] = (14, 77)
    d_kernel_widths: Tuple[int, int] = (2, 4)
    d_fc_units: int = 1024
    leaky_alpha: float = 0.2
    d_uses_prev: bool = False
    straight_through: bool = True

    @field_validator("twod_layers", mode="before")
    @classmethod
    def _normalize_layers(cls, value):
        if isinstance(value, str):
            value = [int(v) for v in value.replace(" ", "").split(",") if v]
        layers = tuple(sorted(set(int(v) for v in value)))
        if any(k not in G_LAYERS for k in layers):
            raise ValueError(f"twod_layers must be a subset of {G_LAYERS}, got {layers}")
        return layers

    @field_validator("lambda1", "lambda2")
    @classmethod
    def _non_negative(cls, value):
        if value < 0:
            raise ValueError("feature matching weights must be >= 0")
        return value

    @field_validator("fc_units")
    @classmethod
    def _reshapeable(cls, value):
        if value[1] % 2:
            raise ValueError("second FC layer must have an even width to reshape into 1x2")
        return value

    @model_validator(mode="after")
    def _preset_constants(self):
        if self.id not in (0, 1, 2, 3):
            raise ValueError(f"variant id must be 0 (custom) or 1-3, got {self.id}")
        if self.id:
            expected = PRESET_VARIANTS[self.id]
            for key, value in expected.items():
                if getattr(self, key) != value:
                    raise ValueError(f"variant {self.id} requires {key}={value}, got {getattr(self, key)}")
        return self

    @classmethod
    def preset(cls, variant_id: int, **extra) -> "ModelVariant":
        if variant_id not in PRESET_VARIANTS:
            raise ContractError(f"unknown variant id {variant_id}")
        return cls(id=variant_id, **PRESET_VARIANTS[variant_id], **extra)

    @property
    def reshape_channels(self) -> int:
        return self.fc_units[1] // 2


PRESET_VARIANTS: Dict[int, dict] = {
    1: dict(g_filters=256, cond_filters=256, twod_layers=(1, 2, 3, 4), use_chord=False, lambda1=0.1, lambda2=1.0),
    2: dict(g_filters=128, cond_filters=16, twod_layers=(4,), use_chord=True, lambda1=0.01, lambda2=0.1),
    3: dict(g_filters=128, cond_filters=16, twod_layers=(1, 2, 3, 4), use_chord=True, lambda1=0.01, lambda2=0.1),
}


######################################
# Parameter layouts
######################################

def _g_layer(variant: ModelVariant, k: int) -> Tuple[int, int, Tuple[int, int], Tuple[int, int]]:
    """(input channels, output channels, kernel, stride) of generator deconvolution k."""
    base = variant.reshape_channels if k == 1 else variant.g_filters
    in_ch = base + (CHORD_DIMS if variant.use_chord else 0) + (variant.cond_filters if k in variant.twod_layers else 0)
    if k < 4:
        return in_ch, variant.g_filters, (1, 2), (2, 2)
    return in_ch, 1, (PITCHES, 1), (1, 1)


def generator_shapes(variant: ModelVariant) -> Dict[str, Tuple[int, ...]]:
    f1, f2 = variant.fc_units
    shapes = {
        "g.fc1.w": (variant.noise_dim, f1), "g.fc1.b": (f1,),
        "g.fc2.w": (f1, f2), "g.fc2.b": (f2,),
    }
    for k in G_LAYERS:
        in_ch, out_ch, (kh, kw), _ = _g_layer(variant, k)
        shapes[f"g.deconv{k}.w"] = (in_ch, out_ch, kh, kw)
        shapes[f"g.deconv{k}.b"] = (out_ch,)
    return shapes


def conditioner_shapes(variant: ModelVariant) -> Dict[str, Tuple[int, ...]]:
    if not variant.twod_layers:
        return {}
    c = variant.cond_filters
    shapes = {"c.conv1.w": (c, 1, PITCHES, 1), "c.conv1.b": (c,)}
    for k in (2, 3, 4):
        shapes[f"c.conv{k}.w"] = (c, c, 1, 2)
        shapes[f"c.conv{k}.b"] = (c,)
    return shapes


def _d_geometry(variant: ModelVariant) -> Tuple[int, int, int]:
    in_ch = 1 + (CHORD_DIMS if variant.use_chord else 0) + (1 if variant.d_uses_prev else 0)
    w1 = (STEPS_PER_BAR - variant.d_kernel_widths[0]) // 2 + 1
    w2 = (w1 - variant.d_kernel_widths[1]) // 2 + 1
    return in_ch, w1, w2


def discriminator_shapes(variant: ModelVariant) -> Dict[str, Tuple[int, ...]]:
    f1, f2 = variant.d_filters
    kw1, kw2 = variant.d_kernel_widths
    in_ch, _, w2 = _d_geometry(variant)
    return {
        "d.conv1.w": (f1, in_ch, PITCHES, kw1), "d.conv1.b": (f1,),
        "d.conv2.w": (f2, f1, 1, kw2), "d.conv2.b": (f2,),
        "d.fc1.w": (f2 * w2, variant.d_fc_units), "d.fc1.b": (variant.d_fc_units,),
        "d.fc2.w": (variant.d_fc_units, 1), "d.fc2.b": (1,),
    }


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    values = rng.standard_normal(shape)
    outside = np.abs(values) > 2.0
    while outside.any():
        values[outside] = rng.standard_normal(int(outside.sum()))
        outside = np.abs(values) > 2.0
    return (values * std).astype(np.float32)


def init_params(shapes: Dict[str, Tuple[int, ...]], rng: np.random.Generator) -> Dict[str, Tensor]:
    params = {}
    for name, shape in shapes.items():
        data = np.zeros(shape, dtype=np.float32) if name.endswith(".b") else truncated_normal(rng, shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


######################################
# Conditioning helpers
######################################

def broadcast_condition(v, height: int, width: int) -> Tensor:
    """Tile a B x n condition (or a single n-vector) over a height x width grid: B x n x H x W."""
    values = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float32)
    if values.ndim == 1:
        values = values[None]
    if values.shape[1] < 1:
        raise ContractError("condition vector must have at least one value")
    tiled = np.broadcast_to(values[:, :, None, None], values.shape + (height, width))
    return Tensor(tiled)


def monophonize(activations: Tensor) -> Tensor:
    """
    Keep only the strongest pitch per time step (ties toward the lowest row).

    The backward pass routes each column's gradient to its retained cell only.
    """
    a = activations.data
    winners = np.argmax(a, axis=-2)
    mask = np.zeros_like(a)
    np.put_along_axis(mask, np.expand_dims(winners, axis=-2), 1.0, axis=-2)

    def grad_fn(g):
        return (g * mask,)

    return apply_op("monophonize", (activations,), mask, grad_fn)


def monophonize_roll(activations: np.ndarray) -> np.ndarray:
    a = np.asarray(activations)
    roll = np.zeros(a.shape, dtype=np.uint8)
    np.put_along_axis(roll, np.argmax(a, axis=0)[None], 1, axis=0)
    return roll


def _require_bar_shape(x: Tensor, what: str):
    if x.data.ndim != 4 or x.shape[1:] != (1, PITCHES, STEPS_PER_BAR):
        raise DimensionError(what, x.shape, (1, PITCHES, STEPS_PER_BAR))


######################################
# Networks
######################################

class Conditioner:
    def __init__(self, variant: ModelVariant, rng: np.random.Generator):
        self.variant = variant
        self.params = init_params(conditioner_shapes(variant), rng)

    def forward(self, prev: Tensor) -> List[Tensor]:
        """Returns the four maps m1..m4 (widths 16, 8, 4, 2)."""
        _require_bar_shape(prev, "conditioner input")
        p = self.params
        h = relu(conv2d(prev, p["c.conv1.w"], (1, 1), p["c.conv1.b"]))
        maps = [h]
        for k in (2, 3, 4):
            h = relu(conv2d(h, p[f"c.conv{k}.w"], (2, 2), p[f"c.conv{k}.b"]))
            maps.append(h)
        return maps


class Generator:
    def __init__(self, variant: ModelVariant, rng: np.random.Generator):
        self.variant = variant
        self.params = init_params(generator_shapes(variant), rng)
        self.trajectory: List[Tuple[int, ...]] = []

    def forward(self, z: Tensor, chord: Optional[Tensor] = None, prev_maps: Optional[List[Tensor]] = None) -> Tensor:
        v = self.variant
        if (prev_maps is not None) != bool(v.twod_layers):
            raise ContractError("previous-bar maps must be given exactly when the variant uses 2-D conditions")
        if (chord is not None) != v.use_chord:
            raise ContractError("a chord must be given exactly when the variant uses the chord condition")
        if z.data.ndim != 2 or z.shape[1] != v.noise_dim:
            raise DimensionError("generator noise", z.shape, (z.shape[0], v.noise_dim))
        p = self.params
        batch = z.shape[0]
        h = relu(fully_connected(z, p["g.fc1.w"], p["g.fc1.b"]))
        h = relu(fully_connected(h, p["g.fc2.w"], p["g.fc2.b"]))
        h = reshape(h, (batch, v.reshape_channels, 1, 2))
        self.trajectory = [h.shape[2:]]
        for k in G_LAYERS:
            if chord is not None:
                h = concat_channels(h, broadcast_condition(chord, h.shape[2], h.shape[3]))
            if k in v.twod_layers:
                h = concat_channels(h, prev_maps[4 - k])
            _, _, _, stride = _g_layer(v, k)
            h = transposed_conv2d(h, p[f"g.deconv{k}.w"], stride, p[f"g.deconv{k}.b"])
            h = relu(h) if k < 4 else sigmoid(h)
            self.trajectory.append(h.shape[2:])
        return h


@dataclass
class DiscriminatorOutput:
    prob: Tensor
    logit: Tensor
    features: Tensor


class Discriminator:
    def __init__(self, variant: ModelVariant, rng: np.random.Generator):
        self.variant = variant
        self.params = init_params(discriminator_shapes(variant), rng)

    @property
    def input_channels(self) -> int:
        return self.params["d.conv1.w"].shape[1]

    def forward(self, x: Tensor, chord: Optional[Tensor] = None, prev: Optional[Tensor] = None) -> DiscriminatorOutput:
        v = self.variant
        _require_bar_shape(x, "discriminator input")
        if (chord is not None) != v.use_chord:
            raise ContractError("a chord must be given exactly when the variant uses the chord condition")
        if (prev is not None) != v.d_uses_prev:
            raise ContractError("the previous bar must be given exactly when D is conditioned on it")
        p = self.params
        batch = x.shape[0]
        h = x
        if chord is not None:
            h = concat_channels(h, broadcast_condition(chord, PITCHES, STEPS_PER_BAR))
        if prev is not None:
            h = concat_channels(h, prev)
        features = leaky_relu(conv2d(h, p["d.conv1.w"], (2, 2), p["d.conv1.b"]), v.leaky_alpha)
        h = leaky_relu(conv2d(features, p["d.conv2.w"], (2, 2), p["d.conv2.b"]), v.leaky_alpha)
        h = reshape(h, (batch, -1))
        h = leaky_relu(fully_connected(h, p["d.fc1.w"], p["d.fc1.b"]), v.leaky_alpha)
        logit = reshape(fully_connected(h, p["d.fc2.w"], p["d.fc2.b"]), (batch,))
        return DiscriminatorOutput(sigmoid(logit), logit, features)


class MidiNet:
    """The generator/conditioner/discriminator triple for one variant."""

    def __init__(self, variant: ModelVariant, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.variant = variant
        self.generator = Generator(variant, rng)
        self.conditioner = Conditioner(variant, rng) if variant.twod_layers else None
        self.discriminator = Discriminator(variant, rng)

    @staticmethod
    def param_shapes(variant: ModelVariant) -> Dict[str, Tuple[int, ...]]:
        return {**generator_shapes(variant), **conditioner_shapes(variant), **discriminator_shapes(variant)}

    @property
    def g_params(self) -> Dict[str, Tensor]:
        """Generator and conditioner parameters; they are updated together."""
        params = dict(self.generator.params)
        if self.conditioner is not None:
            params.update(self.conditioner.params)
        return params

    @property
    def d_params(self) -> Dict[str, Tensor]:
        return dict(self.discriminator.params)

    @property
    def params(self) -> Dict[str, Tensor]:
        return {**self.g_params, **self.d_params}

    def generate(self, z: Tensor, chord: Optional[Tensor] = None, prev: Optional[Tensor] = None) -> Tensor:
        """Generator activations (B x 1 x 128 x 16), running the conditioner when needed."""
        maps = None
        if self.conditioner is not None:
            if prev is None:
                raise ContractError("this variant needs the previous bar")
            maps = self.conditioner.forward(prev)
        return self.generator.forward(z, chord, maps)

    def discriminate(self, x: Tensor, chord: Optional[Tensor] = None, prev: Optional[Tensor] = None) -> DiscriminatorOutput:
        return self.discriminator.forward(x, chord, prev if self.variant.d_uses_prev else None)
