"""Correlations, order covariance vs gradient norms, binomial errors, logit regression."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .diffcore import Tensor, backward
from .model import ModelState, RelationKind, encode, sequence_loss
from .probgen import (
    COUNT_VALUES,
    N_CELLS,
    N_GRID_VALUES,
    Feature,
    FeatureVector,
    Rule,
    ShapeKind,
    rule_track,
)
from .raster import RenderConfig, render

Z95 = 1.96


# correlation ----------------------------------------------------------------------


def pearson_flagged(xs, ys) -> tuple[float, bool]:
    """Sample Pearson r, and whether either input had zero variance (then r = 0)."""
    x, y = np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValueError("pearson needs two equal-length 1-D inputs of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0, True
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r)), False


def pearson(xs, ys) -> float:
    return pearson_flagged(xs, ys)[0]


def column_pearson(acts: np.ndarray, ys) -> tuple[np.ndarray, int]:
    """Pearson r of every column of ``acts`` (N, K) with ``ys``; zero-variance columns give 0."""
    a = np.asarray(acts, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != len(y) or len(y) < 2:
        raise ValueError("need acts of shape (N, K) and N >= 2 targets")
    da, dy = a - a.mean(axis=0), y - y.mean()
    saa, syy = np.einsum("nk,nk->k", da, da), float(dy @ dy)
    dead = (saa == 0.0) | (syy == 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (dy @ da) / np.sqrt(saa * syy)
    r = np.where(dead, 0.0, np.clip(r, -1.0, 1.0))
    return r, int(dead.sum())


@dataclass
class CorrelationProfile:
    """Mean |r| per FC layer between neuron activations and a feature's value."""

    feature: Feature
    layer_means: dict[str, float]
    n_probes: int
    values: tuple[int, ...]
    n_degenerate: int = 0

    @property
    def output(self) -> float:
        return self.layer_means[max(self.layer_means)] if self.layer_means else float("nan")


def probe_set(feature: Feature, rng: np.random.Generator, per_value: int = 20,
              values: tuple[int, ...] | None = None) -> tuple[list[FeatureVector], np.ndarray]:
    """``per_value`` probes for each of 6 feature values; every other feature i.i.d."""
    if feature not in (Feature.COLOR, Feature.NUMBER, Feature.SIZE):
        raise ValueError(f"{feature.value} is not a probe feature")
    if values is None:
        values = tuple(rule_track(Rule(), feature, rng))
    if len(values) != N_GRID_VALUES:
        raise ValueError("a probe grid has 6 values")
    shapes = list(ShapeKind)
    vecs, ys = [], []
    for v in values:
        for _ in range(per_value):
            f = {
                "count": int(rng.choice(COUNT_VALUES)),
                "shade_idx": int(rng.integers(N_GRID_VALUES)),
                "shape_kind": shapes[int(rng.integers(len(shapes)))],
                "size_idx": int(rng.integers(N_GRID_VALUES)),
                "arrangement": tuple(int(i) for i in rng.permutation(N_CELLS)),
            }
            f[{Feature.COLOR: "shade_idx", Feature.NUMBER: "count", Feature.SIZE: "size_idx"}[feature]] = int(v)
            vecs.append(FeatureVector(**f))
            ys.append(v)
    return vecs, np.asarray(ys, dtype=np.float64)


def render_probes(vecs: list[FeatureVector], cfg: RenderConfig) -> np.ndarray:
    return np.stack([render(v, cfg) for v in vecs])


def correlation_profile_from(model: ModelState, images: np.ndarray, ys: np.ndarray, feature: Feature,
                             values: tuple[int, ...]) -> CorrelationProfile:
    acts: dict = {}
    encode(model, images, acts)
    layers = sorted(k for k in acts if k.startswith("fc"))
    means, degenerate = {}, 0
    for name in layers:
        r, dead = column_pearson(acts[name].data, ys)
        means[name] = float(np.mean(np.abs(r)))
        degenerate += dead
    return CorrelationProfile(feature, means, len(ys), tuple(values), degenerate)


def feature_correlation_profile(model: ModelState, feature: Feature, rng: np.random.Generator,
                                cfg: RenderConfig | None = None, per_value: int = 20,
                                values: tuple[int, ...] | None = None) -> CorrelationProfile:
    """Probe the encoder with 6 x ``per_value`` images and average |r| per FC layer.

    For Number the 6 values default to a random linear track, as in problems.
    """
    cfg = cfg or RenderConfig(resolution=model.arch.input_resolution)
    vecs, ys = probe_set(feature, rng, per_value, values)
    values = tuple(int(v) for v in dict.fromkeys(ys))
    return correlation_profile_from(model, render_probes(vecs, cfg), ys, feature, values)


# order covariance vs gradient norm ----------------------------------------------------


def order_covariance(acts: np.ndarray) -> np.ndarray:
    """Population covariance of each column of ``acts`` (J, K) with positions 1..J."""
    a = np.asarray(acts, dtype=np.float64)
    j = np.arange(1, len(a) + 1, dtype=np.float64)
    return (j - j.mean()) @ (a - a.mean(axis=0)) / len(a)


@dataclass
class OrderGradResult:
    covariance: np.ndarray
    # L2 norm over the 5 images of dloss/dactivation, per conv-output neuron
    grad_norm: np.ndarray
    # L2 norm of the gradient of each neuron's outgoing first-layer weights
    weight_grad_norm: np.ndarray
    correlation: float
    weight_correlation: float
    degenerate: bool = False
    extra: dict = field(default_factory=dict)


def order_covariance_and_gradnorm(model: ModelState, seq: np.ndarray) -> OrderGradResult:
    """Per conv-output neuron: covariance with sequence order, and loss-gradient norms.

    Evaluated at the model's current parameters; nothing is updated.
    """
    holder: dict[str, Tensor] = {}

    def hook(feats: Tensor) -> Tensor:
        leaf = Tensor(feats.data, requires_grad=True)
        holder["conv"] = leaf
        return leaf

    saved = {n: t.requires_grad for n, t in model.params.items()}
    first = "fc0.w" if "fc0.w" in model.params else "rel0.w"
    model.params[first].requires_grad = True
    try:
        model.params.zero_grad()
        loss = sequence_loss(model, seq, conv_hook=hook)
        backward(loss)
        leaf = holder["conv"]
        acts = leaf.data
        g = leaf.grad if leaf.grad is not None else np.zeros_like(acts)
        wg = model.params[first].grad
        if wg is None:
            wg = np.zeros(model.params[first].shape)
    finally:
        model.params.zero_grad()
        for n, t in model.params.items():
            t.requires_grad = saved[n]
    k = acts.shape[1]
    wnorm = np.sqrt(np.einsum("mk,mk->k", wg, wg))
    if model.relation.kind is RelationKind.MLP:
        # the first relation layer sees [conv_i, conv_j]; a neuron owns both halves
        wnorm = np.sqrt(wnorm[:k] ** 2 + wnorm[k:] ** 2)
    cov = order_covariance(acts)
    gnorm = np.sqrt(np.einsum("nk,nk->k", g, g))
    r, flag = pearson_flagged(np.abs(cov), gnorm)
    rw, flag_w = pearson_flagged(np.abs(cov), wnorm)
    return OrderGradResult(cov, gnorm, wnorm, r, rw, flag or flag_w)


# binomial statistics ---------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionResult:
    successes: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.successes <= self.n:
            raise ValueError("need 0 <= successes <= n")

    @property
    def p(self) -> float:
        return self.successes / self.n

    @property
    def se(self) -> float:
        p = self.p
        return math.sqrt(p * (1.0 - p) / self.n)

    @property
    def ci95(self) -> float:
        return Z95 * self.se


def binomial_ci(successes: int, n: int) -> ConditionResult:
    return ConditionResult(int(successes), int(n))


@dataclass(frozen=True)
class Aggregate:
    mean: float
    se: float
    k: int

    @property
    def ci95(self) -> float:
        return Z95 * self.se

    @property
    def p(self) -> float:
        return self.mean


def aggregate_propagate(results) -> Aggregate:
    """Mean of accuracies with se = sqrt(sum se_i^2) / K; accepts its own output too."""
    results = list(results)
    if not results:
        raise ValueError("nothing to aggregate")
    ps = [r.p for r in results]
    ses = [r.se for r in results]
    k = len(results)
    return Aggregate(math.fsum(ps) / k, math.sqrt(math.fsum(s * s for s in ses)) / k, k)


# logit regression ------------------------------------------------------------------------


@dataclass(frozen=True)
class Regression:
    slope: float
    intercept: float
    se_slope: float
    t: float
    p_value: float
    r2: float
    n: int
    clamped: int = 0


def clamp_accuracy(y: float, n: int) -> float:
    lo = 1.0 / (2 * n)
    return min(max(y, lo), 1.0 - lo)


def logit(y):
    y = np.asarray(y, dtype=np.float64)
    return np.log(y / (1.0 - y))


def logit_regression_wald(xs, ys, n_trials: int | None = None) -> Regression:
    """OLS of logit(y) on x with a two-sided Wald t-test on the slope (df = n - 2).

    Accuracies of exactly 0 or 1 are clamped to 1/(2n) from the boundary,
    which requires ``n_trials``.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 3:
        raise ValueError("need at least 3 paired points")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("accuracies must lie in [0, 1]")
    edge = (y == 0) | (y == 1)
    clamped = int(edge.sum())
    if clamped:
        if n_trials is None:
            raise ValueError("accuracies of 0 or 1 need n_trials for clamping")
        y = np.array([clamp_accuracy(v, n_trials) for v in y])
    ly = logit(y)
    n = len(x)
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ValueError("x values are constant; slope is undefined")
    slope = float(dx @ (ly - ly.mean())) / sxx
    intercept = float(ly.mean() - slope * x.mean())
    resid = ly - (intercept + slope * x)
    sse = float(resid @ resid)
    sst = float((ly - ly.mean()) @ (ly - ly.mean()))
    r2 = 1.0 - sse / sst if sst > 0 else 1.0
    df = n - 2
    se = math.sqrt(sse / df / sxx) if df > 0 else float("nan")
    if se == 0.0:
        t, pv = math.copysign(math.inf, slope) if slope else 0.0, 0.0 if slope else 1.0
    else:
        t = slope / se
        pv = float(2 * stats.t.sf(abs(t), df))
    return Regression(slope, intercept, se, t, pv, r2, n, clamped)


def two_proportion_greater(s1: int, n1: int, s2: int, n2: int) -> tuple[float, float]:
    """Pooled two-proportion z-test of p1 > p2; returns (z, one-sided p)."""
    if n1 < 1 or n2 < 1:
        raise ValueError("both samples need n >= 1")
    pooled = (s1 + s2) / (n1 + n2)
    se = math.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    diff = s1 / n1 - s2 / n2
    if se == 0.0:
        # all successes or all failures in both samples: no difference
        return 0.0, 0.5
    z = diff / se
    return z, float(stats.norm.sf(z))
