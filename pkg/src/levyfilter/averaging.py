"""Invariant-measure estimation and coefficient averaging for the fast scale.

The reduced slow model replaces (b1, sigma1 sigma1^T, h) by their averages
against the invariant law of the frozen-x fast component.  Averages are Monte
Carlo unless the preset carries closed-form values.  Standard errors use
batch means, which stay honest for the correlated samples a single chain
produces.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import ExtrapolationError
from .exprs import vector_field
from .models import ModelPreset, ObservationModel, SlowFastModel
from .noise import LevyMeasureSpec, NoiseSource, RngStream
from .sde import simulate_frozen_fast

_MIN_SAMPLES = 1000
_BATCHES = 64


@dataclass
class EmpiricalMeasure:
    """Thinned samples of the frozen-x fast chain after burn-in."""

    samples: np.ndarray        # (S, m)
    frozen_x: np.ndarray       # (n,)
    burn_in: float
    stride: int
    dt: float
    mode: str                  # "exact_ou" | "euler"
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        if self.samples.shape[0] < _MIN_SAMPLES:
            raise ValueError(
                f"need at least {_MIN_SAMPLES} samples, got {self.samples.shape[0]}"
            )

    @property
    def spacing(self) -> float:
        return self.stride * self.dt

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def cov(self) -> np.ndarray:
        return np.cov(self.samples.T).reshape(self.samples.shape[1], self.samples.shape[1])


def _stationarity_warning(samples: np.ndarray) -> str | None:
    """Flag a drifting chain: first- and second-half means further apart than
    four combined batch-means standard errors."""
    S = samples.shape[0]
    half = S // 2
    a, b = samples[:half], samples[half: 2 * half]

    def batch_se(block):
        nb = min(_BATCHES, max(2, block.shape[0] // 16))
        usable = (block.shape[0] // nb) * nb
        means = block[:usable].reshape(nb, -1, block.shape[1]).mean(axis=1)
        return means.std(axis=0, ddof=1) / math.sqrt(nb)

    gap = np.abs(a.mean(axis=0) - b.mean(axis=0))
    se = np.sqrt(batch_se(a) ** 2 + batch_se(b) ** 2)
    worst = float(np.max(gap / np.maximum(se, 1e-300)))
    if worst > 4.0:
        return (
            f"half-chain means differ by {worst:.1f} combined standard errors; "
            "the chain may not have reached stationarity (increase burn_in)"
        )
    return None


def estimate_invariant_measure(
    model: SlowFastModel,
    x,
    burn_in: float = 10.0,
    n_samples: int = 100_000,
    stride: int = 50,
    dt: float = 0.01,
    stream: RngStream | None = None,
    fast_mode: str = "auto",
) -> EmpiricalMeasure:
    """Sample the invariant law of the fast component with the slow state frozen at x.

    ``fast_mode='exact_ou'`` uses the exact Gaussian transition of a declared
    OU fast part (no discretization bias); ``'euler'`` runs the frozen chain
    at its natural timescale and records every ``stride``-th state.  ``'auto'``
    picks the exact route when available.  Ergodicity of the frozen chain is
    an assumption; a stationarity diagnostic on the recorded samples appends a
    warning when the chain looks like it is still drifting.
    """
    if n_samples < _MIN_SAMPLES:
        raise ValueError(f"n_samples must be >= {_MIN_SAMPLES}, got {n_samples}")
    if stride < 1 or not burn_in >= 0 or not dt > 0:
        raise ValueError("need stride >= 1, burn_in >= 0, dt > 0")
    if fast_mode not in ("auto", "exact_ou", "euler"):
        raise ValueError(f"unknown fast_mode {fast_mode!r}")
    x = np.asarray(x, dtype=float).reshape(model.n)
    if stream is None:
        stream = RngStream(0, int(NoiseSource.AVERAGING))
    if fast_mode == "auto":
        fast_mode = "exact_ou" if model.ou_fast is not None else "euler"

    if fast_mode == "exact_ou":
        if model.ou_fast is None:
            raise ValueError("fast_mode='exact_ou' but the model declares no OU fast part")
        ou = model.ou_fast
        gen = stream.generator()
        z = float(model.z0[0])
        if burn_in > 0:
            z = ou.decay(burn_in) * z + ou.step_std(burn_in) * gen.standard_normal()
        spacing = stride * dt
        a = ou.decay(spacing)
        b = ou.step_std(spacing)
        noise = b * gen.standard_normal(n_samples)
        chain = lfilter([1.0], [1.0, -a], noise) + z * a ** np.arange(1, n_samples + 1)
        samples = chain.reshape(-1, 1)
    else:
        burn_steps = int(round(burn_in / dt))
        total_steps = burn_steps + n_samples * stride
        T = total_steps * dt
        _, Z = simulate_frozen_fast(model, x, model.z0, T, dt, stream)
        samples = Z[burn_steps + stride:: stride][:n_samples]

    warnings = []
    note = _stationarity_warning(samples)
    if note:
        warnings.append(note)
    return EmpiricalMeasure(
        samples=samples, frozen_x=x, burn_in=burn_in, stride=stride, dt=dt,
        mode=fast_mode, warnings=warnings,
    )


@dataclass
class AveragedPoint:
    """Averaged coefficients at one frozen slow state."""

    x: np.ndarray
    bbar1: np.ndarray       # (n,)
    abar: np.ndarray        # (n, n)
    hbar: np.ndarray        # (d,)
    se_bbar1: np.ndarray    # (n,) batch-means standard error
    se_hbar: np.ndarray     # (d,)
    n_samples: int


def _batch_means_se(values: np.ndarray) -> np.ndarray:
    """SE of the mean of a (possibly autocorrelated) sequence via batch means."""
    S = values.shape[0]
    nb = min(_BATCHES, max(2, S // 16))
    usable = (S // nb) * nb
    means = values[:usable].reshape(nb, -1, values.shape[1]).mean(axis=1)
    # center about the first batch mean so a constant sequence reports
    # exactly zero (std's internal mean-of-means rounds otherwise)
    centered = means - means[0]
    return centered.std(axis=0, ddof=1) / math.sqrt(nb)


def _pivot_mean(samples: np.ndarray) -> np.ndarray:
    """Mean over axis 0, summed about the first sample.

    Better conditioned than a raw mean when the samples cluster away from
    zero, and exact (bitwise the common value) when all samples are equal,
    which a raw pairwise mean is not: partial sums like 3v round.
    An integrand that does not depend on the fast variable therefore averages
    to exactly its pointwise value.
    """
    pivot = samples[0]
    return pivot + (samples - pivot).mean(axis=0)


def average_coefficients(
    model: SlowFastModel,
    obs: ObservationModel,
    x,
    measure: EmpiricalMeasure,
) -> AveragedPoint:
    """Average b1, sigma1 sigma1^T and h over an empirical invariant measure."""
    x = np.asarray(x, dtype=float).reshape(model.n)
    if not np.allclose(x, measure.frozen_x, rtol=0.0, atol=1e-12):
        raise ValueError(
            f"measure was built at x={measure.frozen_x}, queried at x={x}"
        )
    Z = measure.samples
    S = Z.shape[0]
    xb = x[None, :]
    b_samples = np.asarray(model.b1(xb, Z), dtype=float)          # (S, n)
    s1 = np.asarray(model.sigma1(xb, Z), dtype=float)              # (S, n, l1)
    a_samples = np.einsum("sil,sjl->sij", s1, s1)                  # (S, n, n)
    h_samples = np.asarray(obs.h(xb, Z), dtype=float)              # (S, d)
    abar = _pivot_mean(a_samples)
    return AveragedPoint(
        x=x,
        bbar1=_pivot_mean(b_samples),
        abar=0.5 * (abar + abar.T),
        hbar=_pivot_mean(h_samples),
        se_bbar1=_batch_means_se(b_samples),
        se_hbar=_batch_means_se(h_samples),
        n_samples=S,
    )


def factor_diffusion(abar, sym_tol: float = 1e-8) -> np.ndarray:
    """Lower-triangular factor L with L L^T equal to the (symmetrized) input.

    Rejects asymmetric or indefinite inputs; eigenvalues in [-1e-10, 0) are
    treated as roundoff and clipped to zero, which makes rank-deficient
    averaged diffusions (legitimately degenerate directions) factorizable.
    The recomposition L L^T is checked against the clipped input to 1e-12
    (relative to the largest entry).
    """
    a = np.asarray(abar, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a))))
    asym = float(np.max(np.abs(a - a.T)))
    if asym > sym_tol * scale:
        raise ValueError(f"matrix is not symmetric: max |a - a^T| = {asym:.3g}")
    a = 0.5 * (a + a.T)
    w, V = np.linalg.eigh(a)
    if w.min() < -1e-10 * scale:
        raise ValueError(f"matrix is not positive semidefinite: min eigenvalue {w.min():.3g}")
    a_psd = (V * np.clip(w, 0.0, None)) @ V.T
    a_psd = 0.5 * (a_psd + a_psd.T)

    n = a.shape[0]
    L = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1):
            s = a_psd[i, j] - L[i, :j] @ L[j, :j]
            if i == j:
                L[i, i] = math.sqrt(max(s, 0.0))
            else:
                L[i, j] = s / L[j, j] if L[j, j] > 1e-14 * math.sqrt(scale) else 0.0
    err = float(np.max(np.abs(L @ L.T - a_psd)))
    if err > 1e-12 * scale:
        raise ValueError(f"factorization failed: |L L^T - a| = {err:.3g}")
    return L


@dataclass
class HomogenizedModel:
    """Reduced slow model: averaged drift, diffusion factor, and sensor.

    The slow jump pair (f1, nu1) carries over unchanged from the full model.
    ``meta`` records how the averages were produced.
    """

    n: int
    d: int
    l_factor: int
    x0: np.ndarray
    bbar1: object           # (..., n)
    abar: object            # (..., n, n)
    sigmabar1: object       # (..., n, n)
    hbar: object            # (..., d)
    f1: object | None
    nu1: LevyMeasureSpec
    mode: str
    meta: dict = field(default_factory=dict)
    vectorized: bool = True


def _const_field(value: np.ndarray):
    value = np.asarray(value, dtype=float)

    def fn(x):
        batch = np.asarray(x).shape[:-1]
        return np.broadcast_to(value, batch + value.shape).copy()

    return fn


def build_homogenized(
    preset: ModelPreset,
    mode: str = "closed_form",
    x_grid=None,
    stream: RngStream | None = None,
    burn_in: float = 5.0,
    n_samples: int = 20_000,
    stride: int = 10,
    dt: float = 0.01,
) -> HomogenizedModel:
    """Assemble the reduced slow model from a preset.

    Modes: ``closed_form`` uses the preset's declared averages; ``lattice``
    estimates averages on a 1-D grid of slow states (each grid point gets its
    own stream, so points are independent and may be computed in any order)
    and interpolates linearly, raising on queries outside the covered range —
    the requested grid is widened by a 10% guard band on each side so paths
    that drift slightly past the endpoints stay covered; ``on_demand``
    estimates at each queried point (rounded to 1e-6) and caches the result.
    """
    model, obs = preset.model, preset.observation
    if stream is None:
        stream = RngStream(0, int(NoiseSource.AVERAGING))

    if mode == "closed_form":
        cf = preset.closed_form
        if cf is None:
            raise ValueError(f"preset {preset.name!r} declares no closed-form averages")
        L = factor_diffusion(cf.abar)
        return HomogenizedModel(
            n=model.n, d=obs.d, l_factor=model.n, x0=model.x0.copy(),
            bbar1=_const_field(cf.bbar1), abar=_const_field(cf.abar),
            sigmabar1=_const_field(L), hbar=cf.hbar(),
            f1=model.f1, nu1=model.nu1, mode=mode,
            meta={"source": "closed_form", "preset": preset.name},
        )

    if mode == "lattice":
        if model.n != 1:
            raise ValueError("lattice mode supports scalar slow components only; use on_demand")
        if x_grid is None or len(np.atleast_1d(x_grid)) < 2:
            raise ValueError("lattice mode needs an x_grid with at least two points")
        grid = np.sort(np.asarray(x_grid, dtype=float).reshape(-1))
        span = grid[-1] - grid[0]
        guard = 0.1 * span
        grid = np.concatenate([[grid[0] - guard], grid, [grid[-1] + guard]])
        points = []
        for i, xi in enumerate(grid):
            meas = estimate_invariant_measure(
                model, [xi], burn_in=burn_in, n_samples=n_samples, stride=stride,
                dt=dt, stream=stream.child(i),
            )
            points.append(average_coefficients(model, obs, [xi], meas))
        b_tab = np.asarray([p.bbar1[0] for p in points])
        a_tab = np.asarray([p.abar[0, 0] for p in points])
        h_tab = np.stack([p.hbar for p in points])   # (G, d)
        lo, hi = grid[0], grid[-1]

        def guard_query(x):
            xq = np.asarray(x, dtype=float)[..., 0]
            if np.any(xq < lo) or np.any(xq > hi):
                worst = float(xq.min() if np.any(xq < lo) else xq.max())
                raise ExtrapolationError(
                    f"query x={worst:.6g} outside the covered range [{lo:.6g}, {hi:.6g}]"
                )
            return xq

        def bbar1(x):
            return np.interp(guard_query(x), grid, b_tab)[..., None]

        def abar(x):
            return np.interp(guard_query(x), grid, a_tab)[..., None, None]

        def sigmabar1(x):
            return np.sqrt(np.clip(np.interp(guard_query(x), grid, a_tab), 0.0, None))[..., None, None]

        def hbar(x):
            xq = guard_query(x)
            cols = [np.interp(xq, grid, h_tab[:, j]) for j in range(h_tab.shape[1])]
            return np.stack(cols, axis=-1)

        return HomogenizedModel(
            n=1, d=obs.d, l_factor=1, x0=model.x0.copy(),
            bbar1=bbar1, abar=abar, sigmabar1=sigmabar1, hbar=hbar,
            f1=model.f1, nu1=model.nu1, mode=mode,
            meta={
                "source": "lattice", "grid": grid.tolist(), "n_samples": n_samples,
                "burn_in": burn_in, "stride": stride, "dt": dt, "guard_band": float(guard),
            },
        )

    if mode == "on_demand":
        cache: dict = {}
        lock = threading.Lock()

        def point_for(xi: np.ndarray) -> AveragedPoint:
            key = tuple(np.round(np.asarray(xi, dtype=float) / 1e-6).astype(np.int64).tolist())
            with lock:
                hit = cache.get(key)
            if hit is not None:
                return hit
            idx = abs(hash(key)) % (1 << 63)
            meas = estimate_invariant_measure(
                model, xi, burn_in=burn_in, n_samples=n_samples, stride=stride,
                dt=dt, stream=stream.child(idx),
            )
            pt = average_coefficients(model, obs, xi, meas)
            with lock:
                cache.setdefault(key, pt)
            return cache[key]

        def lift(extract):
            def fn(x):
                arr = np.asarray(x, dtype=float)
                flat = arr.reshape(-1, model.n)
                vals = np.stack([np.asarray(extract(point_for(row))) for row in flat])
                return vals.reshape(arr.shape[:-1] + vals.shape[1:])
            return fn

        return HomogenizedModel(
            n=model.n, d=obs.d, l_factor=model.n, x0=model.x0.copy(),
            bbar1=lift(lambda p: p.bbar1),
            abar=lift(lambda p: p.abar),
            sigmabar1=lift(lambda p: factor_diffusion(p.abar)),
            hbar=lift(lambda p: p.hbar),
            f1=model.f1, nu1=model.nu1, mode=mode,
            meta={"source": "on_demand", "n_samples": n_samples, "burn_in": burn_in,
                  "stride": stride, "dt": dt},
        )

    raise ValueError(f"unknown homogenization mode {mode!r}")
