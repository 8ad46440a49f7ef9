"""Layer descriptions and the model description file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import DimMismatch, UnsupportedOp

CONV = "conv"
FC = "fc"
POOL = "pool"
BN = "bn"
LAYER_KINDS = (CONV, FC, POOL, BN)


def _half(x: float) -> float:
    return float(np.float16(x))


@dataclass(frozen=True)
class NeuronConfig:
    """LIF parameters; all values are rounded to binary16 on construction."""

    alpha: float = 0.5
    th_f: float = 1.0
    th_l: float = 0.0
    th_r: float = 2.0

    def __post_init__(self):
        for name in ("alpha", "th_f", "th_l", "th_r"):
            object.__setattr__(self, name, _half(getattr(self, name)))
        if not (self.th_l <= self.th_f <= self.th_r):
            raise ValueError("surrogate window must satisfy th_l <= th_f <= th_r")
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")


@dataclass(frozen=True)
class LayerSpec:
    """One layer, dimensioned with C, M, H, W, R, S (E, F derived).

    FC layers are 1x1 convolutions on a 1x1 map whose C is the flattened
    size of the previous output.
    """

    kind: str
    C: int
    M: int
    H: int
    W: int
    R: int = 1
    S: int = 1
    stride: int = 1
    padding: int = 0
    neuron: NeuronConfig = field(default_factory=NeuronConfig)
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise UnsupportedOp(f"unknown layer kind {self.kind!r}")
        if self.kind in (POOL, BN):
            return
        if self.stride < 1 or self.padding < 0:
            raise DimMismatch("stride must be >= 1 and padding >= 0")
        for axis, (n, k) in {"E": (self.H, self.R), "F": (self.W, self.S)}.items():
            span = n + 2 * self.padding - k
            if span < 0 or span % self.stride:
                raise DimMismatch(
                    f"{self.name or self.kind}: {axis} = ({n} + 2*{self.padding} - {k})/{self.stride} + 1 is not integral"
                )

    @property
    def E(self) -> int:
        return (self.H + 2 * self.padding - self.R) // self.stride + 1

    @property
    def F(self) -> int:
        return (self.W + 2 * self.padding - self.S) // self.stride + 1

    @property
    def weight_shape(self) -> tuple:
        return (self.M, self.C, self.R, self.S)

    @property
    def in_shape(self) -> tuple:
        return (self.C, self.H, self.W)

    @property
    def out_shape(self) -> tuple:
        return (self.M, self.E, self.F)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["neuron"] = asdict(self.neuron)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        neuron = NeuronConfig(**d.pop("neuron", {}))
        d.pop("E", None)
        d.pop("F", None)
        return cls(neuron=neuron, **d)


@dataclass(frozen=True)
class Block:
    """A conv/fc layer with its fused BN and pooling (one FP/BP sub-graph pair)."""

    index: int
    conv: LayerSpec
    bn: bool = False
    pool: bool = False
    bn_eps: float = 1e-5

    @property
    def neuron(self) -> NeuronConfig:
        return self.conv.neuron

    @property
    def spike_shape(self) -> tuple:
        return self.conv.out_shape

    @property
    def out_shape(self) -> tuple:
        M, E, F = self.conv.out_shape
        if self.pool:
            return (M, (E + 1) // 2, (F + 1) // 2)
        return (M, E, F)


@dataclass
class InputSpec:
    """The input pseudo-layer: direct coding runs an LIF encoder on the image."""

    C: int
    H: int
    W: int
    encoding: str = "direct"
    neuron: NeuronConfig = field(default_factory=NeuronConfig)

    @property
    def shape(self) -> tuple:
        return (self.C, self.H, self.W)


@dataclass
class ModelGraph:
    """The layer chain plus the input description."""

    input: InputSpec
    layers: list
    timesteps: int = 4
    seed: int = 0
    num_classes: Optional[int] = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.layers:
            raise DimMismatch("model has no layers")
        shape = self.input.shape
        for layer in self.layers:
            if layer.kind in (CONV, FC):
                want = (layer.C, layer.H, layer.W)
                if layer.kind == FC and want != shape:
                    flat = (int(np.prod(shape)), 1, 1)
                    if want != flat:
                        raise DimMismatch(f"{layer.name}: expects {want}, gets {shape}")
                elif want != shape:
                    raise DimMismatch(f"{layer.name}: expects {want}, gets {shape}")
                shape = layer.out_shape
            elif layer.kind == POOL:
                C, H, W = shape
                shape = (C, (H + 1) // 2, (W + 1) // 2)
        if self.layers[0].kind not in (CONV, FC):
            raise UnsupportedOp("the first layer must be conv or fc")
        self.output_shape = shape

    def blocks(self) -> list:
        """Fuse BN and pooling into the preceding conv/fc layer."""
        out = []
        cur = None
        for layer in self.layers:
            if layer.kind in (CONV, FC):
                if cur is not None:
                    out.append(cur)
                cur = Block(index=len(out) + 1, conv=layer)
            elif layer.kind == BN:
                if cur is None or cur.bn or cur.pool:
                    raise UnsupportedOp("BN must directly follow a conv layer")
                cur = replace(cur, bn=True)
            elif layer.kind == POOL:
                if cur is None or cur.pool:
                    raise UnsupportedOp("pooling must follow a conv layer")
                cur = replace(cur, pool=True)
        out.append(cur)
        return out

    def to_dict(self) -> dict:
        return {
            "input": {
                "C": self.input.C,
                "H": self.input.H,
                "W": self.input.W,
                "encoding": self.input.encoding,
                "neuron": asdict(self.input.neuron),
            },
            "layers": [layer.to_dict() for layer in self.layers],
            "timesteps": self.timesteps,
            "seed": self.seed,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelGraph":
        inp = dict(d["input"])
        inp["neuron"] = NeuronConfig(**inp.get("neuron", {}))
        return cls(
            input=InputSpec(**inp),
            layers=[LayerSpec.from_dict(x) for x in d["layers"]],
            timesteps=int(d.get("timesteps", 4)),
            seed=int(d.get("seed", 0)),
            num_classes=d.get("num_classes"),
        )

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "ModelGraph":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def conv(C, M, H, W, k=3, stride=1, padding=None, neuron=None, name="") -> LayerSpec:
    if padding is None:
        padding = k // 2
    return LayerSpec(CONV, C, M, H, W, k, k, stride, padding, neuron or NeuronConfig(), name)


def fc(C, M, neuron=None, name="") -> LayerSpec:
    return LayerSpec(FC, C, M, 1, 1, 1, 1, 1, 0, neuron or NeuronConfig(), name)


def pool(name="") -> LayerSpec:
    return LayerSpec(POOL, 0, 0, 0, 0, name=name)


def bn(name="") -> LayerSpec:
    return LayerSpec(BN, 0, 0, 0, 0, name=name)


def mnist_convnet(timesteps=4, channels=(8, 16, 16), neuron=None, seed=0, population=4) -> ModelGraph:
    """Three spiking conv layers and a spiking readout for 28x28 digits.

    The readout has ``population`` neurons per class.
    """
    c1, c2, c3 = channels
    nc = neuron or NeuronConfig()
    layers = [
        conv(1, c1, 28, 28, neuron=nc, name="conv1"),
        pool("pool1"),
        conv(c1, c2, 14, 14, neuron=nc, name="conv2"),
        pool("pool2"),
        conv(c2, c3, 7, 7, neuron=nc, name="conv3"),
        fc(c3 * 49, 10 * population, neuron=nc, name="fc"),
    ]
    return ModelGraph(InputSpec(1, 28, 28, "direct", nc), layers, timesteps, seed, 10)
