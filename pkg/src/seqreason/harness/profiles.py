"""Named experiment profiles, scales, and per-problem seed derivation."""
from __future__ import annotations

import enum
import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ..model import EncoderArch, FreezeSpec, RelationConfig, RelationKind
from ..probgen import PREDICTIVE_FEATURES, Feature, Rule, RuleKind, TestCondition, enumerate_conditions
from ..raster import RenderConfig
from ..solver import OptimConfig

WORKERS_ENV = "SEQREASON_WORKERS"


class Scale(str, enum.Enum):
    DESK = "desk"
    FULL = "full"


# resolution, pool kernels, problems per condition
SCALES = {
    Scale.DESK: (56, (2, 3), 100),
    Scale.FULL: (224, (4, 6), 500),
}


@dataclass(frozen=True)
class ExperimentProfile:
    name: str
    arch: EncoderArch = EncoderArch()
    relation: RelationConfig = RelationConfig()
    freeze: FreezeSpec = FreezeSpec()
    rules: tuple[Rule, ...] = (Rule(),)
    predictive: tuple[Feature, ...] = PREDICTIVE_FEATURES
    problems_per_condition: int = 500
    scale: Scale = Scale.FULL
    base_seed: int = 0
    steps: int = 10
    lr: float = 1e-5
    dtype: str = "float64"
    render: RenderConfig = field(default_factory=RenderConfig)

    def __post_init__(self):
        if self.problems_per_condition < 1:
            raise ValueError("problems_per_condition must be >= 1")
        if self.arch.input_resolution != self.render.resolution:
            raise ValueError("encoder and renderer resolutions differ")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype}")

    @property
    def optim(self) -> OptimConfig:
        return OptimConfig(steps=self.steps, lr=self.lr, freeze=self.freeze)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def conditions(self) -> list[tuple[int, TestCondition]]:
        """(global index, condition) for every runnable condition, in a fixed order.

        The index depends only on (rule position, feature, condition position),
        so any subset of conditions keeps the seeds it has in the full suite.
        """
        out = []
        for ri, rule in enumerate(self.rules):
            for pf in self.predictive:
                if not rule_supported(rule, pf):
                    continue
                for ci, cond in enumerate(enumerate_conditions(pf, rule)):
                    out.append((condition_index(ri, pf, ci), cond))
        return out

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "arch": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.arch).items()},
            "relation": {"kind": self.relation.kind.value, "mlp_widths": list(self.relation.mlp_widths)},
            "freeze": asdict(self.freeze),
            "rules": [r.to_dict() for r in self.rules],
            "predictive": [f.value for f in self.predictive],
            "problems_per_condition": self.problems_per_condition,
            "scale": self.scale.value,
            "base_seed": self.base_seed,
            "steps": self.steps,
            "lr": self.lr,
            "dtype": self.dtype,
            "render": {
                "resolution": self.render.resolution,
                "background": self.render.background,
                "shade_grid": list(self.render.shade_grid),
                "size_fracs": list(self.render.size_fracs),
                "grid_dim": self.render.grid_dim,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentProfile:
        arch = EncoderArch(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["arch"].items()})
        r = d["render"]
        render = RenderConfig(r["resolution"], r["background"], tuple(r["shade_grid"]), tuple(r["size_fracs"]),
                              r["grid_dim"])
        return cls(
            name=d["name"],
            arch=arch,
            relation=RelationConfig(RelationKind(d["relation"]["kind"]), tuple(d["relation"]["mlp_widths"])),
            freeze=FreezeSpec(**d["freeze"]),
            rules=tuple(Rule.from_dict(x) for x in d["rules"]),
            predictive=tuple(Feature(f) for f in d["predictive"]),
            problems_per_condition=int(d["problems_per_condition"]),
            scale=Scale(d["scale"]),
            base_seed=int(d["base_seed"]),
            steps=int(d["steps"]),
            lr=float(d["lr"]),
            dtype=d["dtype"],
            render=render,
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:12]

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path


def load_profile(path) -> ExperimentProfile:
    try:
        return ExperimentProfile.from_dict(json.loads(Path(path).read_text()))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"{path}: invalid profile ({exc})") from exc


def rule_supported(rule: Rule, pf: Feature) -> bool:
    return not (pf is Feature.NUMBER and rule.kind in (RuleKind.EXPONENTIAL, RuleKind.SQRT))


_PF_INDEX = {f: i for i, f in enumerate(PREDICTIVE_FEATURES)}


def condition_index(rule_pos: int, pf: Feature, cond_pos: int) -> int:
    return (rule_pos * len(PREDICTIVE_FEATURES) + _PF_INDEX[pf]) * 16 + cond_pos


def derive_seed(base_seed: int, profile_name: str, condition_idx: int, problem_idx: int) -> int:
    """64-bit seed that depends only on the problem's position, never on scheduling."""
    ss = np.random.SeedSequence([base_seed, zlib.crc32(profile_name.encode()), condition_idx, problem_idx])
    hi, lo = ss.generate_state(2, np.uint32)
    return int(hi) << 32 | int(lo)


def problem_rng(seed: int) -> np.random.Generator:
    """Stream that draws the problem's features."""
    return np.random.default_rng([seed, 0])


def model_rng(seed: int) -> np.random.Generator:
    """Independent stream that initializes the problem's network."""
    return np.random.default_rng([seed, 1])


# named profiles ------------------------------------------------------------------


def _base(name: str, scale: Scale, seed: int, **kw) -> ExperimentProfile:
    res, pools, n = SCALES[scale]
    arch = kw.pop("arch", EncoderArch())
    arch = replace(arch, input_resolution=res, pool_kernels=pools)
    return ExperimentProfile(name=name, arch=arch, scale=scale, base_seed=seed, problems_per_condition=n,
                             render=RenderConfig(resolution=res), **kw)


def _vanilla(s, seed):
    return _base("vanilla", s, seed)


def _frozen_encoder(s, seed):
    return _base("frozen-encoder", s, seed, freeze=FreezeSpec(conv_frozen=True, fc_frozen=True))


def _frozen_relation(s, seed):
    return _base("frozen-relation", s, seed, freeze=FreezeSpec(relation_frozen=True))


def _no_conv(s, seed):
    return _base("no-conv", s, seed, freeze=FreezeSpec(conv_removed=True))


def _frozen_conv(s, seed):
    return _base("frozen-conv", s, seed, freeze=FreezeSpec(conv_frozen=True))


def _frozen_fc(s, seed):
    return _base("frozen-fc", s, seed, freeze=FreezeSpec(fc_frozen=True))


def _frozen_conv_relation(s, seed):
    return _base("frozen-conv+relation", s, seed, freeze=FreezeSpec(conv_frozen=True, relation_frozen=True))


def _complex_relation(s, seed):
    # only the relation MLP is optimized; it reads the (frozen) conv features directly
    return _base("complex-relation", s, seed, arch=EncoderArch(fc_widths=()),
                 relation=RelationConfig(RelationKind.MLP), freeze=FreezeSpec(conv_frozen=True))


def _exp_rule(s, seed):
    return _base("exp-rule", s, seed, rules=(Rule(RuleKind.EXPONENTIAL),), predictive=(Feature.COLOR, Feature.SIZE))


def _sqrt_rule(s, seed):
    return _base("sqrt-rule", s, seed, rules=(Rule(RuleKind.SQRT),), predictive=(Feature.COLOR, Feature.SIZE))


def _alternating_rule(s, seed):
    return _base("alternating-rule", s, seed, rules=(Rule(RuleKind.ALTERNATING),))


PROFILES = {
    "vanilla": _vanilla,
    "frozen-encoder": _frozen_encoder,
    "frozen-relation": _frozen_relation,
    "no-conv": _no_conv,
    "frozen-conv": _frozen_conv,
    "frozen-fc": _frozen_fc,
    "frozen-conv+relation": _frozen_conv_relation,
    "complex-relation": _complex_relation,
    "exp-rule": _exp_rule,
    "sqrt-rule": _sqrt_rule,
    "alternating-rule": _alternating_rule,
}


def make_profile(name: str, scale: Scale | str = Scale.DESK, seed: int = 0, **overrides) -> ExperimentProfile:
    if name not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    prof = PROFILES[name](Scale(scale), seed)
    return replace(prof, **overrides) if overrides else prof
