"""Encoder and relation modules of the sequence-reasoning network.

The encoder is conv(+relu) x3 with max-pools after the second and third
conv layers, then a tanh MLP down to one latent unit. The default relation
module scores a pair of latents as ``(z_i - z_j + theta)**2``; the MLP
variant scores concatenated conv features instead.
"""
from __future__ import annotations

import enum
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import diffcore as dc
from .diffcore import OptState, ParamSet, Tensor

FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderArch:
    conv_channels: tuple[int, ...] = (4, 8, 8)
    conv_kernels: tuple[int, ...] = (2, 2, 3)
    conv_stride: int = 1
    conv_pad: int = 1
    pool_kernels: tuple[int, ...] = (4, 6)
    # pools follow these conv layers (0-based)
    pool_after: tuple[int, ...] = (1, 2)
    fc_widths: tuple[int, ...] = (200, 100, 50, 10, 1)
    input_resolution: int = 224

    def __post_init__(self):
        if len(self.conv_channels) != len(self.conv_kernels):
            raise ValueError("need one kernel size per conv layer")
        if len(self.pool_kernels) != len(self.pool_after):
            raise ValueError("need one pool kernel per pooled conv layer")
        if self.fc_widths and self.fc_widths[-1] != 1:
            raise ValueError("the encoder must end in a single latent unit")

    def conv_output_shape(self) -> tuple[int, int, int]:
        """(channels, height, width) of the last pooled conv block."""
        h = self.input_resolution
        pools = dict(zip(self.pool_after, self.pool_kernels))
        for i, k in enumerate(self.conv_kernels):
            h = dc.conv_out_size(h, k, self.conv_stride, self.conv_pad)
            if i in pools:
                h = dc.conv_out_size(h, pools[i])
            if h < 1:
                raise ValueError(f"resolution {self.input_resolution} too small for this architecture")
        return self.conv_channels[-1], h, h

    @property
    def conv_output_size(self) -> int:
        c, h, w = self.conv_output_shape()
        return c * h * w


class RelationKind(str, enum.Enum):
    LINEAR_OFFSET = "linear_offset"
    MLP = "mlp"


@dataclass(frozen=True)
class RelationConfig:
    kind: RelationKind = RelationKind.LINEAR_OFFSET
    mlp_widths: tuple[int, ...] = (200, 100, 50, 10, 1)


@dataclass(frozen=True)
class FreezeSpec:
    conv_frozen: bool = False
    fc_frozen: bool = False
    relation_frozen: bool = False
    conv_removed: bool = False

    @property
    def frozen_groups(self) -> set[str]:
        groups = set()
        if self.conv_frozen:
            groups.add("conv")
        if self.fc_frozen:
            groups.add("fc")
        if self.relation_frozen:
            groups.add("relation")
        return groups


@dataclass
class ModelState:
    arch: EncoderArch
    relation: RelationConfig
    freeze: FreezeSpec
    params: ParamSet
    opt: OptState = field(default_factory=OptState)

    @property
    def dtype(self):
        return next(iter(self.params.arrays().values())).dtype

    @property
    def n_conv(self) -> int:
        return 0 if self.freeze.conv_removed else len(self.arch.conv_channels)

    @property
    def n_fc(self) -> int:
        return len(self.arch.fc_widths)

    def apply_freeze(self, freeze: FreezeSpec) -> None:
        if freeze.conv_removed != self.freeze.conv_removed:
            raise ValueError("conv_removed is architectural and cannot change after init")
        self.freeze = freeze
        self.params.set_frozen(freeze.frozen_groups)

    def copy(self) -> ModelState:
        opt = OptState(self.opt.lr, self.opt.alpha, self.opt.eps,
                       {k: v.copy() for k, v in self.opt.square_avg.items()}, self.opt.steps)
        return ModelState(self.arch, self.relation, self.freeze, self.params.copy(), opt)

    def config_dict(self) -> dict:
        return {
            "arch": asdict(self.arch),
            "relation": {"kind": self.relation.kind.value, "mlp_widths": list(self.relation.mlp_widths)},
            "freeze": asdict(self.freeze),
        }


def _fc_input_size(arch: EncoderArch, freeze: FreezeSpec) -> int:
    return arch.input_resolution ** 2 if freeze.conv_removed else arch.conv_output_size


def _uniform(rng: np.random.Generator, bound: float, shape, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype, copy=False)


def init_model(arch: EncoderArch, rel: RelationConfig, rng: np.random.Generator,
               freeze: FreezeSpec = FreezeSpec(), dtype=np.float64) -> ModelState:
    """Fresh network; weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), theta = 0."""
    if rel.kind is RelationKind.MLP:
        if arch.fc_widths:
            raise ValueError("the MLP relation scores raw conv features; use fc_widths=()")
        if freeze.conv_removed:
            raise ValueError("the MLP relation needs the conv stack")
        if rel.mlp_widths[-1] != 1:
            raise ValueError("the relation MLP must end in a single unit")
    elif not arch.fc_widths:
        raise ValueError("the linear-offset relation needs a scalar encoder")
    params = ParamSet()
    params.frozen = freeze.frozen_groups
    c_in = 1
    if not freeze.conv_removed:
        for i, (c_out, k) in enumerate(zip(arch.conv_channels, arch.conv_kernels)):
            bound = 1.0 / np.sqrt(c_in * k * k)
            params.add(f"conv{i}.w", _uniform(rng, bound, (c_out, c_in, k, k), dtype), "conv")
            params.add(f"conv{i}.b", _uniform(rng, bound, (c_out,), dtype), "conv")
            c_in = c_out
    n_in = _fc_input_size(arch, freeze)
    for i, m in enumerate(arch.fc_widths):
        bound = 1.0 / np.sqrt(n_in)
        params.add(f"fc{i}.w", _uniform(rng, bound, (m, n_in), dtype), "fc")
        params.add(f"fc{i}.b", _uniform(rng, bound, (m,), dtype), "fc")
        n_in = m
    if rel.kind is RelationKind.LINEAR_OFFSET:
        params.add("theta", np.zeros((), dtype=dtype), "relation")
    else:
        n_in = 2 * arch.conv_output_size
        for i, m in enumerate(rel.mlp_widths):
            bound = 1.0 / np.sqrt(n_in)
            params.add(f"rel{i}.w", _uniform(rng, bound, (m, n_in), dtype), "relation")
            params.add(f"rel{i}.b", _uniform(rng, bound, (m,), dtype), "relation")
            n_in = m
    return ModelState(arch, rel, freeze, params)


def _mlp(x: Tensor, params: ParamSet, prefix: str, n_layers: int, acts: dict | None = None) -> Tensor:
    for i in range(n_layers):
        x = dc.affine(x, params[f"{prefix}{i}.w"], params[f"{prefix}{i}.b"])
        if i < n_layers - 1:
            x = dc.tanh(x)
        if acts is not None:
            acts[f"{prefix}{i}"] = x
    return x


def conv_features(model: ModelState, images, acts: dict | None = None) -> Tensor:
    """Flattened output of the conv stack (or raw pixels with conv removed)."""
    x = images if isinstance(images, Tensor) else Tensor(np.asarray(images, dtype=model.dtype))
    if x.data.ndim == 2:
        x = Tensor(x.data[None])
    n, h, w = x.shape
    res = model.arch.input_resolution
    if (h, w) != (res, res):
        raise ValueError(f"image resolution {h}x{w} does not match the encoder's {res}x{res}")
    x = x.reshape((n, 1, h, w))
    if not model.freeze.conv_removed:
        pools = dict(zip(model.arch.pool_after, model.arch.pool_kernels))
        p = model.params
        for i in range(len(model.arch.conv_channels)):
            x = dc.conv2d(x, p[f"conv{i}.w"], p[f"conv{i}.b"], stride=model.arch.conv_stride, pad=model.arch.conv_pad)
            x = dc.relu(x)
            if i in pools:
                x = dc.maxpool2d(x, pools[i])
    out = dc.flatten(x)
    if acts is not None:
        acts["conv_out"] = out
    return out


def encode(model: ModelState, images, acts: dict | None = None, conv_hook=None) -> Tensor:
    """Latents for a batch of images, shape (N, n).

    ``acts``, when given, is filled with every layer's activation tensor
    (``conv_out``, ``fc0`` .. ``fc4``). ``conv_hook`` may replace the conv
    output tensor before the FC stack (used to differentiate with respect
    to it).
    """
    feats = conv_features(model, images, acts)
    if conv_hook is not None:
        feats = conv_hook(feats)
        if acts is not None:
            acts["conv_out"] = feats
    if model.relation.kind is RelationKind.MLP:
        return feats
    return _mlp(feats, model.params, "fc", model.n_fc, acts)


def relation_score(model: ModelState, zi: Tensor, zj: Tensor) -> Tensor:
    """Non-negative score per row; lower means ``zj`` follows ``zi`` better."""
    if model.relation.kind is RelationKind.LINEAR_OFFSET:
        d = zi - zj + model.params["theta"]
        return d.square().reshape((-1,))
    h = _mlp(dc.concat([zi, zj], axis=1), model.params, "rel", len(model.relation.mlp_widths))
    return h.square().reshape((-1,))


def sequence_loss(model: ModelState, seq_images, acts: dict | None = None, conv_hook=None) -> Tensor:
    """Mean relation score over the four consecutive pairs of a 5-image sequence."""
    n = len(seq_images.data) if isinstance(seq_images, Tensor) else len(seq_images)
    if n != 5:
        raise ValueError(f"a sequence has 5 images, got {n}")
    z = encode(model, seq_images, acts, conv_hook)
    return relation_score(model, z[0:4], z[1:5]).mean()


# serialization -------------------------------------------------------------


def save_model(model: ModelState, path) -> None:
    meta = {"format_version": FORMAT_VERSION, **model.config_dict(),
            "groups": {n: model.params.group_of(n) for n in model.params},
            "opt": {"lr": model.opt.lr, "alpha": model.opt.alpha, "eps": model.opt.eps, "steps": model.opt.steps}}
    arrays = {f"p/{n}": t.data for n, t in model.params.items()}
    arrays.update({f"s/{n}": s for n, s in model.opt.square_avg.items()})
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_model(path) -> ModelState:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported model format {meta.get('format_version')}")
        a = meta["arch"]
        arch = EncoderArch(**{k: tuple(v) if isinstance(v, list) else v for k, v in a.items()})
        rel = RelationConfig(RelationKind(meta["relation"]["kind"]), tuple(meta["relation"]["mlp_widths"]))
        freeze = FreezeSpec(**meta["freeze"])
        params = ParamSet()
        params.frozen = freeze.frozen_groups
        for n, g in meta["groups"].items():
            params.add(n, np.array(z[f"p/{n}"]), g)
        o = meta["opt"]
        opt = OptState(o["lr"], o["alpha"], o["eps"],
                       {k[2:]: np.array(z[k]) for k in z.files if k.startswith("s/")}, o["steps"])
    return ModelState(arch, rel, freeze, params, opt)


def with_resolution(arch: EncoderArch, resolution: int, pools: tuple[int, ...] | None = None) -> EncoderArch:
    return replace(arch, input_resolution=resolution, pool_kernels=pools or arch.pool_kernels)
