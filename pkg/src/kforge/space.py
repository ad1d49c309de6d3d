"""Search space: kernel choices, the shared kernel bank and child ResNet-1D assembly."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, batchnorm1d, conv1d, conv_output_length, global_avg_pool, linear, relu

# token -> (kernel size, dilation)
CHOICES: tuple[tuple[int, int], ...] = ((3, 1), (3, 2), (3, 3), (5, 1), (5, 2), (5, 3))
NUM_CHOICES = len(CHOICES)

# uniform hand-designed comparators: M{i+1} uses token i at every layer
PRESETS = {f"M{i + 1}": i for i in range(NUM_CHOICES)}

Architecture = tuple[int, ...]


class ArchitectureError(ValueError):
    pass


def space_size(n: int, L: int) -> int:
    if n < 1 or L < 1:
        raise ValueError("space_size needs n >= 1 and L >= 1")
    return n ** L


def decode_choice(index: int) -> tuple[int, int]:
    if not 0 <= index < NUM_CHOICES:
        raise ArchitectureError(f"kernel choice {index} outside [0, {NUM_CHOICES})")
    return CHOICES[index]


def encode_choice(kernel_size: int, dilation: int) -> int:
    try:
        return CHOICES.index((kernel_size, dilation))
    except ValueError:
        raise ArchitectureError(f"no kernel choice with k={kernel_size}, d={dilation}") from None


def same_padding(index: int) -> int:
    k, d = decode_choice(index)
    return d * (k - 1) // 2


def parse_architecture(text: str, length: int | None = None) -> Architecture:
    """Parse "0 3 1 5 ..." or a preset name M1..M6 (needs ``length``)."""
    text = text.strip()
    if text.upper() in PRESETS:
        if length is None:
            raise ArchitectureError("preset architectures need an explicit length")
        return (PRESETS[text.upper()],) * length
    try:
        tokens = tuple(int(tok) for tok in text.split())
    except ValueError:
        raise ArchitectureError(f"architecture {text!r} is not whitespace-separated integers") from None
    validate_architecture(tokens, length)
    return tokens


def format_architecture(arch) -> str:
    return " ".join(str(int(t)) for t in arch)


def validate_architecture(arch, length: int | None = None) -> None:
    if length is not None and len(arch) != length:
        raise ArchitectureError(f"architecture has {len(arch)} tokens, expected {length}")
    for t in arch:
        if not 0 <= int(t) < NUM_CHOICES:
            raise ArchitectureError(f"token {t} outside [0, {NUM_CHOICES})")


@dataclass(frozen=True)
class StructureConfig:
    num_blocks: int = 4
    layers_per_block: int = 2
    base_channels: int = 8
    stem_kernel: int = 7
    stem_stride: int = 2
    down_kernel: int = 3
    down_stride: int = 2
    num_classes: int = 6
    input_length: int = 1000

    def __post_init__(self):
        for name in ("num_blocks", "layers_per_block", "base_channels", "stem_kernel",
                     "stem_stride", "down_kernel", "down_stride", "num_classes", "input_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def num_layers(self) -> int:
        return self.num_blocks * self.layers_per_block

    def block_channels(self, block: int) -> int:
        return self.base_channels * 2 ** block

    def position_channels(self, position: int) -> int:
        return self.block_channels(position // self.layers_per_block)

    @property
    def feature_channels(self) -> int:
        return self.block_channels(self.num_blocks)

    def temporal_lengths(self) -> list[int]:
        """Sequence length after the stem and after each downsample layer."""
        T = conv_output_length(self.input_length, self.stem_kernel, self.stem_stride,
                               1, self.stem_kernel // 2)
        out = [T]
        for _ in range(self.num_blocks):
            T = conv_output_length(T, self.down_kernel, self.down_stride, 1, self.down_kernel // 2)
            out.append(T)
        return out


@dataclass
class ConvUnit:
    """Convolution followed by batch normalization; owns its running statistics."""

    w: Tensor
    b: Tensor
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    stride: int = 1
    dilation: int = 1
    padding: int = 0

    @classmethod
    def init(cls, c_in: int, c_out: int, k: int, rng: np.random.Generator, *, stride=1,
             dilation=1, padding=0, name="") -> "ConvUnit":
        bound = np.sqrt(6.0 / (c_in * k))
        return cls(
            w=Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k)), True, f"{name}conv.w"),
            b=Tensor(np.zeros(c_out), True, f"{name}conv.b"),
            gamma=Tensor(np.ones(c_out), True, f"{name}norm.gamma"),
            beta=Tensor(np.zeros(c_out), True, f"{name}norm.beta"),
            running_mean=np.zeros(c_out),
            running_var=np.ones(c_out),
            stride=stride, dilation=dilation, padding=padding,
        )

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b, self.gamma, self.beta]

    def __call__(self, x: Tensor, mode: str) -> Tensor:
        y = conv1d(x, self.w, self.b, self.stride, self.dilation, self.padding)
        bn_mode = "eval" if mode == "eval" else "train"
        return batchnorm1d(y, self.gamma, self.beta, self.running_mean, self.running_var,
                           mode=bn_mode, update_stats=(mode == "train"))

    def arrays(self) -> dict[str, np.ndarray]:
        return {"conv.w": self.w.data, "conv.b": self.b.data, "norm.gamma": self.gamma.data,
                "norm.beta": self.beta.data, "norm.mean": self.running_mean,
                "norm.var": self.running_var}


@dataclass
class KernelBank:
    """Shared parameter store: one ConvUnit per (position, choice) plus fixed layers."""

    structure: StructureConfig
    units: dict[tuple[int, int], ConvUnit]
    stem: ConvUnit
    downsample: list[ConvUnit]
    head_w: Tensor
    head_b: Tensor
    n: int = NUM_CHOICES

    def unit(self, position: int, choice: int) -> ConvUnit:
        return self.units[(position, choice)]

    def fixed_parameters(self) -> list[Tensor]:
        params = self.stem.parameters()
        for d in self.downsample:
            params += d.parameters()
        return params + [self.head_w, self.head_b]

    def parameters(self) -> list[Tensor]:
        params = []
        for key in sorted(self.units):
            params += self.units[key].parameters()
        return params + self.fixed_parameters()

    def named_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for (p, c) in sorted(self.units):
            for k, v in self.units[(p, c)].arrays().items():
                out[f"pos{p}/choice{c}/{k}"] = v
        for k, v in self.stem.arrays().items():
            out[f"stem/{k}"] = v
        for i, d in enumerate(self.downsample):
            for k, v in d.arrays().items():
                out[f"down{i}/{k}"] = v
        out["head/w"] = self.head_w.data
        out["head/b"] = self.head_b.data
        return out

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.named_arrays().items()}

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        """Copy stored values into the existing storage (identity preserved)."""
        targets = self.named_arrays()
        missing = set(targets) - set(arrays)
        if missing:
            raise KeyError(f"missing arrays: {sorted(missing)[:5]}")
        for key, dst in targets.items():
            if arrays[key].shape != dst.shape:
                raise ValueError(f"{key}: stored shape {arrays[key].shape} != {dst.shape}")
            dst[...] = arrays[key]


def kernel_bank_init(structure: StructureConfig, rng: np.random.Generator,
                     n: int = NUM_CHOICES) -> KernelBank:
    """Fresh bank with He-uniform weights, unit gammas and zero biases/betas."""
    if n > NUM_CHOICES:
        raise ValueError(f"at most {NUM_CHOICES} kernel choices are defined")
    s = structure
    stem = ConvUnit.init(1, s.base_channels, s.stem_kernel, rng, stride=s.stem_stride,
                         padding=s.stem_kernel // 2, name="stem/")
    units = {}
    for p in range(s.num_layers):
        C = s.position_channels(p)
        for c in range(n):
            k, d = CHOICES[c]
            units[(p, c)] = ConvUnit.init(C, C, k, rng, dilation=d, padding=d * (k - 1) // 2,
                                          name=f"pos{p}/choice{c}/")
    downsample = []
    for b in range(s.num_blocks):
        C = s.block_channels(b)
        downsample.append(ConvUnit.init(C, 2 * C, s.down_kernel, rng, stride=s.down_stride,
                                        padding=s.down_kernel // 2, name=f"down{b}/"))
    F = s.feature_channels
    bound = np.sqrt(6.0 / F)
    head_w = Tensor(rng.uniform(-bound, bound, size=(s.num_classes, F)), True, "head/w")
    head_b = Tensor(np.zeros(s.num_classes), True, "head/b")
    return KernelBank(s, units, stem, downsample, head_w, head_b, n)


def residual_block(x: Tensor, first: ConvUnit, second: ConvUnit, mode: str) -> Tensor:
    """conv-norm-ReLU, conv-norm, identity skip, ReLU."""
    out = relu(first(x, mode))
    out = second(out, mode)
    return relu(add(out, x))


@dataclass
class ChildNetwork:
    arch: Architecture
    bank: KernelBank
    layers: list[ConvUnit] = field(repr=False)

    @property
    def structure(self) -> StructureConfig:
        return self.bank.structure

    def parameters(self) -> list[Tensor]:
        params = []
        for u in self.layers:
            params += u.parameters()
        return params + self.bank.fixed_parameters()

    def __call__(self, x: Tensor, mode: str = "eval") -> Tensor:
        return child_forward(self, x, mode)


def build_child(arch, bank: KernelBank, structure: StructureConfig | None = None) -> ChildNetwork:
    s = structure or bank.structure
    arch = tuple(int(t) for t in arch)
    validate_architecture(arch, s.num_layers)
    for t in arch:
        if t >= bank.n:
            raise ArchitectureError(f"token {t} outside the bank's {bank.n} choices")
    layers = [bank.unit(p, t) for p, t in enumerate(arch)]
    return ChildNetwork(arch, bank, layers)


def child_forward(net: ChildNetwork, x, mode: str = "eval") -> Tensor:
    """Logits [B, num_classes] for input [B, 1, T].

    mode: "train" (batch statistics, running stats updated), "batch" (batch
    statistics, running stats untouched) or "eval" (running statistics).
    """
    if mode not in ("train", "batch", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    s = net.structure
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.data.ndim != 3 or x.shape[1] != 1 or x.shape[2] != s.input_length:
        raise ValueError(f"input must be [B, 1, {s.input_length}], got {x.shape}")
    bank = net.bank
    h = relu(bank.stem(x, mode))
    lpb = s.layers_per_block
    for b in range(s.num_blocks):
        for j in range(0, lpb, 2):
            p = b * lpb + j
            if j + 1 < lpb:
                h = residual_block(h, net.layers[p], net.layers[p + 1], mode)
            else:
                h = relu(add(net.layers[p](h, mode), h))
        h = relu(bank.downsample[b](h, mode))
    return linear(global_avg_pool(h), bank.head_w, bank.head_b)
