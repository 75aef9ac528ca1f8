"""Random matrix ensembles with prescribed means and the margin/mean builders
used by the experiments.

Entry distributions are parameterized by their mean: Poisson(mean),
Bernoulli(mean), Exponential(mean), Uniform on [0, 2*mean].  Sampling uses
counter-based per-trial streams (see :mod:`sinkbridge.rng`), so runs are
reproducible and shardable.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import BernoulliMeanOutOfRange, InfeasibleSpec, ConfigError
from .rng import derive_rng
from .scaling import MarginPair

__all__ = [
    "EntryKind",
    "EntryDistribution",
    "MarginSpec",
    "MeanSpec",
    "ExperimentConfig",
    "subexp_params",
    "sample_matrix",
    "sample_mean_matrix",
    "build_config_matrices",
]


class EntryKind(enum.Enum):
    POISSON = "poisson"
    BERNOULLI = "bernoulli"
    EXPONENTIAL = "exponential"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class EntryDistribution:
    """One of the four mean-parameterized entry laws."""

    kind: EntryKind
    mean: float

    def __post_init__(self):
        if self.mean <= 0:
            raise ValueError("mean must be positive")
        if self.kind is EntryKind.BERNOULLI and not (0.0 < self.mean < 1.0):
            raise BernoulliMeanOutOfRange(f"Bernoulli mean {self.mean!r} outside (0, 1)")

    def variance(self) -> float:
        return float(variance_of(self.kind, self.mean))


def variance_of(kind: EntryKind, mean) -> np.ndarray | float:
    """Entrywise variance of the given law at the given mean(s)."""
    mean = np.asarray(mean, dtype=float)
    if kind is EntryKind.POISSON:
        v = mean
    elif kind is EntryKind.BERNOULLI:
        v = mean * (1.0 - mean)
    elif kind is EntryKind.EXPONENTIAL:
        v = mean**2
    elif kind is EntryKind.UNIFORM:
        v = mean**2 / 3.0
    else:  # pragma: no cover
        raise ValueError(kind)
    return v if v.ndim else float(v)


def zero_probability(kind: EntryKind, mean) -> np.ndarray | float:
    """P(X = 0) per entry; drives the scalability probability bound."""
    mean = np.asarray(mean, dtype=float)
    if kind is EntryKind.POISSON:
        p = np.exp(-mean)
    elif kind is EntryKind.BERNOULLI:
        p = 1.0 - mean
    else:
        p = np.zeros_like(mean)
    return p if p.ndim else float(p)


def subexp_params(kind: EntryKind, lambda_max: float) -> tuple[float, float]:
    """Sub-exponential moment parameters (sigma, R) valid for all means <= lambda_max.

    They satisfy E|X - mean|^q <= (q!/2) sigma^2 R^(q-2) for q >= 2 (the
    moment-growth tests certify q up to 8).  Sufficient, not tight.  The
    Poisson scale needs R ~ sqrt(lambda) once lambda exceeds ~4, since the
    even central moments grow like lambda^(q/2).
    """
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    if kind is EntryKind.POISSON:
        return float(np.sqrt(lambda_max)), float(max(1.0, np.sqrt(lambda_max)))
    if kind is EntryKind.BERNOULLI:
        return 0.5, 1.0
    if kind is EntryKind.EXPONENTIAL:
        return float(np.sqrt(2.0) * lambda_max), float(2.0 * lambda_max)
    if kind is EntryKind.UNIFORM:
        return float(lambda_max / np.sqrt(3.0)), float(lambda_max)
    raise ValueError(kind)  # pragma: no cover


def sample_matrix(lam: np.ndarray, kind: EntryKind, rng_seed, trial: int | None = None) -> np.ndarray:
    """Independent draws with E[X_ij] = lam_ij.

    ``rng_seed`` may be an integer seed (optionally with a trial index for
    stream derivation) or an already-derived Generator.
    """
    lam = np.asarray(lam, dtype=float)
    if (lam <= 0).any():
        raise ValueError("mean matrix must be positive")
    if isinstance(rng_seed, np.random.Generator):
        rng = rng_seed
    elif trial is None:
        rng = derive_rng(rng_seed)
    else:
        rng = derive_rng(rng_seed, trial)
    if kind is EntryKind.POISSON:
        return rng.poisson(lam).astype(float)
    if kind is EntryKind.BERNOULLI:
        if (lam >= 1.0).any():
            raise BernoulliMeanOutOfRange("Bernoulli means must lie in (0, 1)")
        return (rng.random(lam.shape) < lam).astype(float)
    if kind is EntryKind.EXPONENTIAL:
        return rng.exponential(lam)
    if kind is EntryKind.UNIFORM:
        return rng.uniform(0.0, 2.0 * lam)
    raise ValueError(kind)  # pragma: no cover


def sample_mean_matrix(lam: np.ndarray, kind: EntryKind, M: int, rng,
                       checkpoints: tuple[int, ...] | None = None):
    """Empirical mean of M iid matrices, drawn in memory-bounded chunks.

    With ``checkpoints`` (sorted, ending at M) the running means at each
    checkpoint are returned, sharing the underlying draws; this gives
    common-random-number comparisons across sample sizes.
    """
    lam = np.asarray(lam, dtype=float)
    if checkpoints is None:
        checkpoints = (M,)
    if checkpoints[-1] != M or any(a >= b for a, b in zip(checkpoints, checkpoints[1:])):
        raise ValueError("checkpoints must be increasing and end at M")
    chunk = max(1, int(5_000_000 // max(1, lam.size)))
    acc = np.zeros_like(lam)
    out = []
    done = 0
    for cp in checkpoints:
        while done < cp:
            step = min(chunk, cp - done)
            draws = sample_matrix(np.broadcast_to(lam, (step,) + lam.shape), kind, rng)
            acc += draws.sum(axis=0)
            done += step
        out.append(acc / cp)
    return out[0] if len(out) == 1 else out


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarginSpec:
    """uniform: r_i = fraction*n, c_j = fraction*m.
    row_block: r_i in {lo*n, hi*n} split at ceil(split*m), c uniform to match."""

    kind: str
    fraction: float | None = None
    lo: float | None = None
    hi: float | None = None
    split: float | None = None


@dataclass(frozen=True)
class MeanSpec:
    """homogeneous: lam_ij = value.  row_block: lam_ij in {lo, hi} by row.
    uniform_random: lam_ij ~ U[lo, hi], drawn once from the config seed."""

    kind: str
    value: float | None = None
    lo: float | None = None
    hi: float | None = None
    split: float | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    m: int
    n: int
    margin_spec: MarginSpec
    mean_spec: MeanSpec
    dist: EntryKind
    seed: int = 0
    trials: int = 100

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", 1)
        if version != 1:
            raise ConfigError(f"unsupported schema_version {version!r}")
        allowed = {"m", "n", "margin_spec", "mean_spec", "dist", "seed", "trials"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            margin = _spec_from_dict(MarginSpec, d["margin_spec"],
                                     {"uniform": {"fraction"},
                                      "row_block": {"lo", "hi", "split"}})
            mean = _spec_from_dict(MeanSpec, d["mean_spec"],
                                   {"homogeneous": {"value"},
                                    "row_block": {"lo", "hi", "split"},
                                    "uniform_random": {"lo", "hi"}})
            dist = EntryKind(d["dist"])
            return ExperimentConfig(m=int(d["m"]), n=int(d["n"]), margin_spec=margin,
                                    mean_spec=mean, dist=dist,
                                    seed=int(d.get("seed", 0)),
                                    trials=int(d.get("trials", 100)))
        except KeyError as exc:
            raise ConfigError(f"missing config field: {exc}") from None


def _spec_from_dict(cls, d, field_map):
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError(f"{cls.__name__} must be an object with a 'kind' field")
    kind = d["kind"]
    if kind not in field_map:
        raise ConfigError(f"unknown {cls.__name__} kind {kind!r}")
    required = field_map[kind]
    unknown = set(d) - required - {"kind"}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"missing {cls.__name__} fields: {sorted(missing)}")
    return cls(**d)


def build_config_matrices(cfg: ExperimentConfig) -> tuple[np.ndarray, MarginPair]:
    """Materialize the mean matrix and margins described by a config."""
    m, n = cfg.m, cfg.n
    ms = cfg.margin_spec
    if ms.kind == "uniform":
        r = np.full(m, ms.fraction * n)
        c = np.full(n, ms.fraction * m)
    elif ms.kind == "row_block":
        cut = int(np.ceil(ms.split * m))
        r = np.where(np.arange(m) < cut, ms.lo * n, ms.hi * n).astype(float)
        c = np.full(n, r.sum() / n)
    else:  # pragma: no cover
        raise ConfigError(f"unknown margin kind {ms.kind!r}")
    if (r <= 0).any() or (c <= 0).any():
        raise InfeasibleSpec("margin spec produced non-positive margins")
    if abs(r.sum() - c.sum()) > 1e-9 * r.sum():
        raise InfeasibleSpec("margin totals inconsistent")

    es = cfg.mean_spec
    if es.kind == "homogeneous":
        lam = np.full((m, n), float(es.value))
    elif es.kind == "row_block":
        cut = int(np.ceil(es.split * m))
        rows = np.where(np.arange(m) < cut, es.lo, es.hi).astype(float)
        lam = np.repeat(rows[:, None], n, axis=1)
    elif es.kind == "uniform_random":
        # a dedicated sub-stream so trial streams stay untouched
        lam = derive_rng(cfg.seed, 999_983).uniform(es.lo, es.hi, (m, n))
    else:  # pragma: no cover
        raise ConfigError(f"unknown mean kind {es.kind!r}")
    if (lam <= 0).any():
        raise InfeasibleSpec("mean spec produced non-positive entries")
    return lam, MarginPair(r, c)
