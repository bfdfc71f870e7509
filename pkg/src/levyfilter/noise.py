"""Reproducible random streams and finite-activity jump-measure sampling.

Every driving noise of every simulated path gets its own stream, addressed by
an integer id.  Ids are allocated hierarchically: ``stream_for(root, source,
path)`` packs ``source * 2**64 + path``, and ``RngStream.child(key)`` shifts
the parent id up by another 64 bits, so distinct (parent, key) pairs can never
collide no matter how deep the derivation goes.  The bit stream behind a
``(root_seed, stream_id, counter)`` triple is a pure function of those three
integers; nothing here mutates global numpy state.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache

import numpy as np

from .errors import ModelViolationError, UnsupportedMeasureError

_KEY_BITS = 64
_KEY_SPACE = 1 << _KEY_BITS


class NoiseSource(IntEnum):
    """Codes for the independent noises driving one simulated path."""

    SLOW_BROWNIAN = 0      # V, drives the slow diffusion
    FAST_BROWNIAN = 1      # W, drives the fast diffusion
    OBS_BROWNIAN = 2       # B, observation noise
    SLOW_JUMPS = 3         # jump measure of the slow component
    FAST_JUMPS = 4         # accelerated jump measure of the fast component
    OBS_JUMPS_SMALL = 5    # observation jumps with marks in the small region
    OBS_JUMPS_LARGE = 6    # observation jumps with marks in the large region
    THINNING = 7           # acceptance uniforms for state-dependent thinning
    HOMOG_BROWNIAN = 8     # Brownian motion of the reduced slow model
    HOMOG_JUMPS = 9        # jump measure of the reduced slow model
    PARTICLES = 10         # per-particle propagation noise in the filter
    RESAMPLING = 11        # systematic-resampling offsets
    VALIDATION = 12        # state sampling in assumption checks
    AVERAGING = 13         # invariant-measure chains


@dataclass
class RngStream:
    """Counter-based handle on a reproducible random sequence.

    ``generator()`` is a pure function of ``(root_seed, stream_id, counter)``
    and does not advance anything: calling it twice reproduces identical
    draws.  A single owner that needs successive fresh batches calls
    ``bump()``; derived purposes get their own ``child()`` stream instead of
    sharing a counter.
    """

    root_seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        if not 0 <= int(self.root_seed) < _KEY_SPACE:
            raise ValueError(f"root_seed must be a 64-bit unsigned integer, got {self.root_seed}")
        if self.stream_id < 0:
            raise ValueError(f"stream_id must be non-negative, got {self.stream_id}")
        if self.counter < 0:
            raise ValueError(f"counter must be non-negative, got {self.counter}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.root_seed, spawn_key=(self.stream_id, self.counter))
        return np.random.Generator(np.random.PCG64(seq))

    def bump(self) -> np.random.Generator:
        """Generator for the current counter value; advances the counter."""
        gen = self.generator()
        self.counter += 1
        return gen

    def child(self, key: int) -> "RngStream":
        """Independent stream addressed below this one (collision-free)."""
        key = int(key)
        if not 0 <= key < _KEY_SPACE:
            raise ValueError(f"child key must lie in [0, 2**64), got {key}")
        return RngStream(self.root_seed, (self.stream_id << _KEY_BITS) | key, 0)


def stream_for(root_seed: int, source: int, path_index: int) -> RngStream:
    """Stream for one (noise source, path) pair: id = source * 2**64 + path."""
    path_index = int(path_index)
    if not 0 <= path_index < _KEY_SPACE:
        raise ValueError(f"path_index must lie in [0, 2**64), got {path_index}")
    return RngStream(int(root_seed), (int(source) << _KEY_BITS) | path_index)


# ---------------------------------------------------------------------------
# mark distributions and jump measures


_SAMPLER_RE = re.compile(r"^\s*([a-z_]+)\s*\(\s*([^()]*)\s*\)\s*$")
_QUAD_POINTS = 128

_REGIONS = ("U1", "U2", "U3", "U3_complement")


@dataclass(frozen=True)
class MarkSampler:
    """Named mark distribution on R^k with a quadrature rule for expectations.

    Supported families: ``uniform(a,b)``, ``gauss(mu,sigma)``, ``exp(rate)``
    (all scalar marks) and ``point(v1,...,vk)`` (a deterministic atom).
    """

    kind: str
    params: tuple

    @staticmethod
    def parse(spec: str) -> "MarkSampler":
        match = _SAMPLER_RE.match(spec)
        if match is None:
            raise ValueError(f"unparseable mark distribution {spec!r}")
        kind, arg_src = match.group(1), match.group(2)
        try:
            params = tuple(float(tok) for tok in arg_src.split(",") if tok.strip())
        except ValueError as exc:
            raise ValueError(f"bad numeric parameter in {spec!r}") from exc
        return MarkSampler(kind, params)

    def __post_init__(self):
        kind, params = self.kind, self.params
        if kind == "uniform":
            if len(params) != 2 or not params[0] < params[1]:
                raise ValueError(f"uniform marks need a < b, got {params}")
        elif kind == "gauss":
            if len(params) != 2 or not params[1] > 0:
                raise ValueError(f"gauss marks need (mu, sigma>0), got {params}")
        elif kind == "exp":
            if len(params) != 1 or not params[0] > 0:
                raise ValueError(f"exp marks need rate > 0, got {params}")
        elif kind == "point":
            if len(params) < 1:
                raise ValueError("point marks need at least one coordinate")
        else:
            raise ValueError(f"unknown mark distribution family {kind!r}")
        if not all(math.isfinite(p) for p in params):
            raise ValueError(f"mark distribution parameters must be finite, got {params}")

    @property
    def dim(self) -> int:
        return len(self.params) if self.kind == "point" else 1

    def spec_string(self) -> str:
        return f"{self.kind}({','.join(repr(float(p)) for p in self.params)})"

    def sample(self, gen: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` marks, shape (count, dim)."""
        if count < 0:
            raise ValueError("count must be non-negative")
        if self.kind == "uniform":
            a, b = self.params
            return gen.uniform(a, b, size=(count, 1))
        if self.kind == "gauss":
            mu, sig = self.params
            return gen.normal(mu, sig, size=(count, 1))
        if self.kind == "exp":
            return gen.exponential(1.0 / self.params[0], size=(count, 1))
        return np.tile(np.asarray(self.params, dtype=float), (count, 1))

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """Probability-weighted nodes: returns (nodes (Q, dim), weights (Q,))."""
        return _quadrature_rule(self.kind, self.params)

    def expectation(self, fn) -> np.ndarray | float:
        """E[fn(U)] where fn maps (Q, dim) mark arrays to (Q, ...) values."""
        nodes, weights = self.quadrature()
        vals = np.asarray(fn(nodes), dtype=float)
        return np.tensordot(weights, vals, axes=(0, 0))


@lru_cache(maxsize=64)
def _quadrature_rule(kind: str, params: tuple) -> tuple[np.ndarray, np.ndarray]:
    if kind == "uniform":
        a, b = params
        t, w = np.polynomial.legendre.leggauss(_QUAD_POINTS)
        nodes = 0.5 * (b - a) * t + 0.5 * (a + b)
        weights = 0.5 * w  # integrates the uniform density on [a, b]
    elif kind == "gauss":
        mu, sig = params
        t, w = np.polynomial.hermite.hermgauss(_QUAD_POINTS)
        nodes = mu + math.sqrt(2.0) * sig * t
        weights = w / math.sqrt(math.pi)
    elif kind == "exp":
        t, w = np.polynomial.laguerre.laggauss(_QUAD_POINTS)
        nodes = t / params[0]
        weights = w
    else:
        return np.asarray([params], dtype=float), np.ones(1)
    nodes = nodes.reshape(-1, 1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


@dataclass(frozen=True)
class LevyMeasureSpec:
    """Finite-activity jump measure: total mass plus a normalized mark law."""

    total_intensity: float
    mark_sampler: MarkSampler
    region_label: str

    def __post_init__(self):
        if not math.isfinite(self.total_intensity):
            raise UnsupportedMeasureError(
                f"jump measures must have finite total mass, got {self.total_intensity}"
            )
        if self.total_intensity < 0:
            raise ValueError(f"total_intensity must be >= 0, got {self.total_intensity}")
        if self.region_label not in _REGIONS:
            raise ValueError(f"region_label must be one of {_REGIONS}, got {self.region_label!r}")

    @property
    def mark_dim(self) -> int:
        return self.mark_sampler.dim

    def integrate(self, fn):
        """∫ fn(u) ν(du) over the region, via the mark quadrature."""
        return self.total_intensity * self.mark_sampler.expectation(fn)


def null_measure(region_label: str, dim: int = 1) -> LevyMeasureSpec:
    """A measure with zero mass (placeholder for absent jump terms)."""
    return LevyMeasureSpec(0.0, MarkSampler("point", (0.0,) * dim), region_label)


# ---------------------------------------------------------------------------
# path-level sampling


@dataclass(frozen=True)
class JumpEvent:
    time: float
    mark: np.ndarray
    accepted: bool = True


def brownian_increments(stream: RngStream, dim: int, dt: float, count: int) -> np.ndarray:
    """Increments of a standard Brownian motion on a regular grid, shape (count, dim).

    Pure in the stream state: the same (stream, dim, dt, count) always
    reproduces the same array.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    gen = stream.generator()
    return gen.normal(0.0, math.sqrt(dt), size=(count, dim))


def sample_poisson_jumps(
    stream: RngStream,
    spec: LevyMeasureSpec,
    horizon: float,
    rate_scale: float = 1.0,
) -> list[JumpEvent]:
    """Events of a Poisson random measure with intensity rate_scale * ν on (0, horizon].

    The count, the sorted event times and the marks are drawn from a single
    generator in a fixed order, so the result is reproducible from the stream.
    rate_scale carries the 1/epsilon acceleration of fast-component jumps.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    if not rate_scale > 0:
        raise ValueError(f"rate_scale must be > 0, got {rate_scale}")
    gen = stream.generator()
    mean_count = spec.total_intensity * rate_scale * horizon
    count = int(gen.poisson(mean_count)) if mean_count > 0 else 0
    if count == 0:
        return []
    # 1 - U(0,1) lands in (0, 1], keeping event times strictly positive
    times = np.sort(horizon * (1.0 - gen.uniform(size=count)))
    marks = spec.mark_sampler.sample(gen, count)
    return [JumpEvent(float(t), marks[i].copy()) for i, t in enumerate(times)]


def thin_jumps(events, lambda_fn, state_lookup, stream: RngStream) -> list[JumpEvent]:
    """Keep each event with probability lambda_fn(t, state_lookup(t), mark).

    Acceptance uniforms are drawn once, indexed by position in ``events``, so
    thinning commutes with any later re-examination of the same list.  A
    thinning intensity outside (0, 1] at an evaluated point is a model
    violation and names the offending point (1 is allowed: keep-always is the
    degenerate no-contamination edge, and log-likelihood terms stay finite).
    """
    gen = stream.generator()
    uniforms = gen.uniform(size=len(events))
    kept = []
    for event, u in zip(events, uniforms):
        x = state_lookup(event.time)
        lam = float(np.asarray(lambda_fn(event.time, x, event.mark)))
        if not 0.0 < lam <= 1.0:
            raise ModelViolationError(
                f"thinning intensity {lam} outside (0,1] at t={event.time}, mark={event.mark}"
            )
        if u < lam:
            kept.append(JumpEvent(event.time, event.mark, True))
    return kept
