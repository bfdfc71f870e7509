"""Numerical studies: homogenization of the signal law, likelihood-martingale
diagnostics, a linear-Gaussian oracle, and filter convergence as the
timescale separation vanishes.

Replicated studies parallelize over replications with a thread pool, but
every replication derives its own stream from (study seed, epsilon index,
replication index) and results are gathered by index, so the numbers are
byte-identical for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .averaging import HomogenizedModel, build_homogenized
from .filtering import FullDynamics, PsiSpec, psi_from_string, run_filter
from .models import ModelPreset, ObservationModel, make_linear_gaussian, with_epsilon
from .noise import RngStream
from .sde import (
    ObservationRecord,
    StepScheme,
    simulate_full,
    simulate_homogenized_ensemble,
    simulate_signal_ensemble,
)


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup_x |F_a(x) - F_b(x)|."""
    a = np.sort(np.asarray(a, dtype=float).ravel())
    b = np.sort(np.asarray(b, dtype=float).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_statistic needs non-empty samples")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def strictly_decreasing(values) -> bool:
    vals = list(values)
    return all(y < x for x, y in zip(vals, vals[1:]))


def default_scheme(model, dt_slow: float) -> StepScheme:
    """Exact OU transitions when declared, else Euler substeps at epsilon/10."""
    if model.ou_fast is not None:
        return StepScheme(dt_slow=dt_slow, fast_mode="exact_ou")
    substeps = max(1, math.ceil(dt_slow / (model.epsilon / 10.0)))
    return StepScheme(dt_slow=dt_slow, dt_fast=dt_slow / substeps, fast_mode="euler")


# ---------------------------------------------------------------------------
# signal-law homogenization


def signal_convergence_study(
    preset: ModelPreset,
    epsilons,
    n_paths: int,
    T: float,
    dt_slow: float = 0.01,
    seed: int = 0,
    hmodel: HomogenizedModel | None = None,
    homog_mode: str = "closed_form",
) -> list[dict]:
    """KS distance between terminal slow laws of the full and reduced models.

    Each epsilon gets independent ensembles of both laws; the reduced-model
    ensemble is resampled per epsilon so sampling noise does not correlate
    across rows.
    """
    if hmodel is None:
        hmodel = build_homogenized(preset, mode=homog_mode)
    root = RngStream(int(seed))
    rows = []
    for i, eps in enumerate(epsilons):
        meps = with_epsilon(preset, float(eps)).model
        scheme = default_scheme(meps, dt_slow)
        _, XT, _ = simulate_signal_ensemble(meps, T, scheme, n_paths, root.child(2 * i))
        _, X0 = simulate_homogenized_ensemble(hmodel, T, dt_slow, n_paths, root.child(2 * i + 1))
        ks = max(
            ks_statistic(XT[:, j], X0[:, j]) for j in range(XT.shape[1])
        )
        rows.append({"epsilon": float(eps), "ks": ks, "n_paths": int(n_paths), "T": float(T)})
    return rows


# ---------------------------------------------------------------------------
# likelihood martingale diagnostics


def _path_log_likelihood(
    obs: ObservationModel,
    record: ObservationRecord,
    h_series: np.ndarray,   # (K, d) sensor at right endpoints
    x_series: np.ndarray,   # (K, n) slow state at right endpoints
) -> float:
    """Discrete log-likelihood of one path against one observation record."""
    dt = record.dt
    dbar = record.bbar_increments
    out = float(np.sum(h_series * dbar)) - 0.5 * dt * float(np.sum(h_series ** 2))
    idx = record.small_step_index()
    thinning = obs.thinning
    for j, k in enumerate(idx):
        lam_arr = np.asarray(thinning(
            record.small_times[j], x_series[k], record.small_marks[j][None, :]
        ))
        lam = float(lam_arr.reshape(-1)[0])
        out += math.log(lam)
    intensity = obs.nu3_small.total_intensity
    if intensity > 0:
        if thinning.kind == "const":
            out += dt * intensity * (1.0 - thinning.params[0]) * len(h_series)
        else:
            for k in range(len(h_series)):
                comp = obs.nu3_small.integrate(
                    lambda u: 1.0 - thinning(record.times[k + 1], x_series[k], u)
                )
                out += dt * float(comp)
    return out


@dataclass
class MartingaleReport:
    epsilon: float
    n_runs: int
    mean_forward: float          # E[likelihood] under the reference law (full model)
    se_forward: float
    mean_forward_homog: float    # same, with the reduced model's averaged sensor
    se_forward_homog: float
    max_rho0_inverse: float      # max over runs of 1 / reduced-model likelihood
    inverse_runs: int = 0
    mean_inverse: float = math.nan   # E[1/likelihood] under the physical law
    se_inverse: float = math.nan


def martingale_check(
    preset: ModelPreset,
    epsilon: float,
    n_runs: int,
    T: float,
    dt: float = 0.01,
    seed: int = 0,
    hmodel: HomogenizedModel | None = None,
    homog_mode: str = "closed_form",
    inverse_runs: int | None = None,
) -> MartingaleReport:
    """Monte Carlo check that the likelihood has unit mean.

    Forward route: signal ensembles and synthetic reference-law observations
    (independent Brownian increments, unthinned jump events); the likelihood
    of each run should average to one.  Inverse route: paths simulated under
    the physical law carry E[1/likelihood] = 1.  Reported standard errors are
    plain ensemble SEs.
    """
    peps = with_epsilon(preset, float(epsilon))
    model, obs = peps.model, peps.observation
    if hmodel is None:
        hmodel = build_homogenized(peps, mode=homog_mode)
    root = RngStream(int(seed))
    scheme = default_scheme(model, dt)
    P = int(n_runs)

    times, HX, HZ = simulate_signal_ensemble(model, T, scheme, P, root.child(0), keep_history=True)
    K = len(times) - 1
    d = obs.d
    gen_obs = root.child(1).generator()
    dbar = gen_obs.standard_normal((K, P, d)) * math.sqrt(dt)
    hv = np.asarray(obs.h(HX[1:], HZ[1:]), dtype=float)            # (K, P, d)
    logl = np.einsum("kpd,kpd->p", hv, dbar) - 0.5 * dt * np.einsum("kpd,kpd->p", hv, hv)

    times0, HX0 = simulate_homogenized_ensemble(hmodel, T, dt, P, root.child(2), keep_history=True)
    hv0 = np.asarray(hmodel.hbar(HX0[1:]), dtype=float)
    logl0 = np.einsum("kpd,kpd->p", hv0, dbar) - 0.5 * dt * np.einsum("kpd,kpd->p", hv0, hv0)

    intensity = obs.nu3_small.total_intensity
    if intensity > 0:
        gen_ev = root.child(3).generator()
        counts = gen_ev.poisson(intensity * T, size=P)
        M = int(counts.sum())
        ev_times = gen_ev.uniform(0.0, T, size=M)
        ev_marks = obs.nu3_small.mark_sampler.sample(gen_ev, M)
        run_id = np.repeat(np.arange(P), counts)
        step = np.searchsorted(times[1:], ev_times, side="left")
        x_ev = HX[step + 1, run_id, :]                              # right-endpoint states
        lam = np.asarray(obs.thinning(ev_times, x_ev, ev_marks), dtype=float)
        np.add.at(logl, run_id, np.log(lam))
        x0_ev = HX0[step + 1, run_id, :]
        lam0 = np.asarray(obs.thinning(ev_times, x0_ev, ev_marks), dtype=float)
        np.add.at(logl0, run_id, np.log(lam0))
        if obs.thinning.kind == "const":
            comp = dt * intensity * (1.0 - obs.thinning.params[0]) * K
            logl += comp
            logl0 += comp
        else:
            nodes, weights = obs.nu3_small.mark_sampler.quadrature()
            for k in range(K):
                lamq = np.asarray(
                    obs.thinning(times[k + 1], HX[k + 1][:, None, :], nodes), dtype=float
                )
                logl += dt * intensity * ((1.0 - lamq) @ weights)
                lamq0 = np.asarray(
                    obs.thinning(times[k + 1], HX0[k + 1][:, None, :], nodes), dtype=float
                )
                logl0 += dt * intensity * ((1.0 - lamq0) @ weights)

    lik = np.exp(logl)
    lik0 = np.exp(logl0)
    mean_forward = float(lik.mean())
    se_forward = float(lik.std(ddof=1) / math.sqrt(P))
    mean_forward_homog = float(lik0.mean())
    se_forward_homog = float(lik0.std(ddof=1) / math.sqrt(P))
    max_rho0_inverse = float(np.exp(-logl0.min()))

    if inverse_runs is None:
        inverse_runs = 0
    inv_vals = np.empty(inverse_runs)
    for r in range(inverse_runs):
        path = simulate_full(model, obs, T, scheme, root.child(4).child(r))
        rec = path.observations()
        hser = np.asarray(obs.h(path.X[1:], path.Z[1:]), dtype=float)
        ll = _path_log_likelihood(obs, rec, hser, path.X[1:])
        inv_vals[r] = math.exp(-ll)
    mean_inverse = float(inv_vals.mean()) if inverse_runs else math.nan
    se_inverse = (
        float(inv_vals.std(ddof=1) / math.sqrt(inverse_runs)) if inverse_runs else math.nan
    )

    return MartingaleReport(
        epsilon=float(epsilon), n_runs=P,
        mean_forward=mean_forward, se_forward=se_forward,
        mean_forward_homog=mean_forward_homog, se_forward_homog=se_forward_homog,
        max_rho0_inverse=max_rho0_inverse,
        inverse_runs=inverse_runs, mean_inverse=mean_inverse, se_inverse=se_inverse,
    )


# ---------------------------------------------------------------------------
# linear-Gaussian oracle


@dataclass
class OracleResult:
    times: np.ndarray
    filter_mean: np.ndarray     # (K+1,)
    oracle_mean: np.ndarray     # (K+1,)
    oracle_var: np.ndarray      # (K+1,)
    rmse: float
    terminal_filter_var: float
    stationary_var: float


def kalman_bucy(times, dY, a: float, c: float, sigma: float, m0: float, P0: float):
    """Euler integration of the Kalman-Bucy mean/variance ODEs for
    dX = (c - aX)dt + sigma dV, dY = X dt + dB."""
    K = len(times) - 1
    m = np.empty(K + 1)
    P = np.empty(K + 1)
    m[0], P[0] = m0, P0
    for k in range(K):
        dt = times[k + 1] - times[k]
        m[k + 1] = m[k] + (c - a * m[k]) * dt + P[k] * (dY[k] - m[k] * dt)
        P[k + 1] = P[k] + (-2.0 * a * P[k] + sigma ** 2 - P[k] ** 2) * dt
    return m, P


def kalman_oracle(
    a: float = 1.0,
    c: float = 0.0,
    sigma: float = math.sqrt(3.0),
    x0: float = 0.0,
    T: float = 1.0,
    dt: float = 1e-3,
    n_particles: int = 10_000,
    ess_frac: float = 0.5,
    seed: int = 0,
) -> OracleResult:
    """Particle filter versus the Kalman-Bucy filter on the linear model.

    Both consume the same simulated observation increments, so the comparison
    isolates particle error.  The stationary Riccati variance is
    -a + sqrt(a^2 + sigma^2).
    """
    preset = make_linear_gaussian(a=a, c=c, sigma=sigma, x0=x0)
    root = RngStream(int(seed))
    scheme = StepScheme(dt_slow=dt, fast_mode="exact_ou")
    path = simulate_full(preset.model, preset.observation, T, scheme, root.child(0))
    rec = path.observations()
    psis = [psi_from_string("poly(0,1,0)"), psi_from_string("poly(0,0,1)")]
    out = run_filter(
        rec, mode="full", preset=preset, n_particles=n_particles, psis=psis,
        stream=root.child(1), scheme=scheme, ess_frac=ess_frac,
    )
    dY = rec.bbar_increments[:, 0]        # jump-free: the raw observation increments
    m, P = kalman_bucy(rec.times, dY, a, c, sigma, m0=x0, P0=0.0)
    filter_mean = out.pi[:, 0]
    rmse = float(np.sqrt(np.mean((filter_mean - m) ** 2)))
    terminal_var = float(out.pi[-1, 1] - out.pi[-1, 0] ** 2)
    return OracleResult(
        times=rec.times, filter_mean=filter_mean, oracle_mean=m, oracle_var=P,
        rmse=rmse, terminal_filter_var=terminal_var,
        stationary_var=-a + math.sqrt(a * a + sigma * sigma),
    )


# ---------------------------------------------------------------------------
# filter convergence in epsilon


@dataclass
class ConvergenceReport:
    epsilons: list
    psi_names: list
    rows: list                  # one dict per epsilon
    meta: dict = field(default_factory=dict)

    def column(self, key: str):
        return [row[key] for row in self.rows]


def filter_convergence_study(
    preset: ModelPreset,
    epsilons,
    replications: int,
    n_particles: int,
    psis,
    T: float,
    dt: float = 0.01,
    ess_frac: float = 0.5,
    seed: int = 0,
    threads: int = 1,
    hmodel: HomogenizedModel | None = None,
    homog_mode: str = "closed_form",
) -> ConvergenceReport:
    """Coupled comparison of the full filter and the reduced filter.

    Each replication simulates one truth-plus-observation path of the full
    model, then runs both filters on those observations with a shared
    propagation-noise stream (common random numbers: the reduced filter reads
    the same slow-Brownian columns the full filter uses), which strips most
    particle noise out of the terminal gap |pi_full(psi) - pi_homog(psi)|.
    Reported per epsilon: the mean coupled gap and its SE per functional, and
    the KS distance between the replication samples of the two terminal
    estimates (a coupling-free, distribution-level comparison).
    """
    psis = [p if isinstance(p, PsiSpec) else psi_from_string(p) for p in psis]
    if hmodel is None:
        hmodel = build_homogenized(preset, mode=homog_mode)
    root = RngStream(int(seed))
    R = int(replications)
    rows = []
    for ie, eps in enumerate(epsilons):
        peps = with_epsilon(preset, float(eps))
        scheme = default_scheme(peps.model, dt)
        width = FullDynamics(peps.model, scheme).noise_width

        def one_rep(r: int, peps=peps, scheme=scheme, width=width, ie=ie):
            rep_stream = root.child(ie).child(r)
            path = simulate_full(peps.model, peps.observation, T, scheme, rep_stream.child(0))
            rec = path.observations()
            out_full = run_filter(
                rec, mode="full", preset=peps, n_particles=n_particles, psis=psis,
                stream=rep_stream.child(1), scheme=scheme, ess_frac=ess_frac,
                noise_width=width,
            )
            out_homog = run_filter(
                rec, mode="homog", preset=peps, hmodel=hmodel, n_particles=n_particles,
                psis=psis, stream=rep_stream.child(1), ess_frac=ess_frac,
                noise_width=width,
            )
            return out_full.pi[-1], out_homog.pi[-1]

        full_T = np.empty((R, len(psis)))
        homog_T = np.empty((R, len(psis)))
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for r, (pf, ph) in enumerate(pool.map(one_rep, range(R))):
                    full_T[r], homog_T[r] = pf, ph
        else:
            for r in range(R):
                full_T[r], homog_T[r] = one_rep(r)

        gaps = np.abs(full_T - homog_T)
        rows.append({
            "epsilon": float(eps),
            "mean_gap": gaps.mean(axis=0),
            "se_gap": gaps.std(axis=0, ddof=1) / math.sqrt(R),
            "ks_pi": np.asarray([
                ks_statistic(full_T[:, i], homog_T[:, i]) for i in range(len(psis))
            ]),
        })
    return ConvergenceReport(
        epsilons=[float(e) for e in epsilons],
        psi_names=[p.name for p in psis],
        rows=rows,
        meta={
            "replications": R, "n_particles": int(n_particles), "T": float(T),
            "dt": float(dt), "ess_frac": float(ess_frac), "seed": int(seed),
        },
    )


def convergence_study(
    preset: ModelPreset,
    epsilons,
    replications: int,
    n_particles: int,
    psis,
    T: float,
    dt: float = 0.01,
    ess_frac: float = 0.5,
    seed: int = 0,
    threads: int = 1,
    signal_paths: int = 2000,
    martingale_runs: int = 2000,
    homog_mode: str = "closed_form",
) -> ConvergenceReport:
    """Filter convergence plus signal-law KS and martingale diagnostics per epsilon."""
    hmodel = build_homogenized(preset, mode=homog_mode)
    report = filter_convergence_study(
        preset, epsilons, replications, n_particles, psis, T, dt=dt,
        ess_frac=ess_frac, seed=seed, threads=threads, hmodel=hmodel,
    )
    signal_rows = signal_convergence_study(
        preset, epsilons, signal_paths, T, dt_slow=dt, seed=seed + 1, hmodel=hmodel,
    )
    for row, srow in zip(report.rows, signal_rows):
        row["ks_signal"] = srow["ks"]
    for row, eps in zip(report.rows, report.epsilons):
        mart = martingale_check(
            preset, eps, martingale_runs, T, dt=dt, seed=seed + 2, hmodel=hmodel,
        )
        row["martingale_mean"] = mart.mean_forward
        row["martingale_se"] = mart.se_forward
        row["max_rho0_inverse"] = mart.max_rho0_inverse
    report.meta.update({
        "signal_paths": int(signal_paths), "martingale_runs": int(martingale_runs),
    })
    return report
