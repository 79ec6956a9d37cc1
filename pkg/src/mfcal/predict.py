"""Posterior prediction of the field process.

Conditioning a chain sample's joint Gaussian on the observed responses
gives the predictive mean and covariance at new design points; drawing one
or more realizations per retained sample and pooling across the chain
propagates parameter uncertainty.  Summaries are reported on the original
response scale.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionError
from .inference import Chain, PriorConfig, fit
from .kernels import extend_for_prediction

logger = logging.getLogger(__name__)

PSD_TOL = 1e-10


def conditional_mvn(assembly, y, mu: float = 0.0):
    """Predictive mean and covariance of the appended rows given y.

    mean = mu + S21 S11^{-1} (y - mu), cov = S22 - S21 S11^{-1} S12,
    both computed with triangular solves against the stored Cholesky
    factor.  The covariance is symmetrized and any negative eigenvalues
    are clipped to zero (with a warning if they fall below -1e-10).
    """
    if assembly.n_new < 1:
        raise DimensionError("assembly has no prediction rows")
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != assembly.n_train:
        raise DimensionError(
            f"response length {y.shape[0]} does not match training block "
            f"{assembly.n_train}"
        )
    chol = assembly.chol
    a = scipy.linalg.solve_triangular(chol, y - mu, lower=True, check_finite=False)
    B = scipy.linalg.solve_triangular(chol, assembly.sigma_12, lower=True, check_finite=False)
    mean = mu + B.T @ a
    cov = assembly.sigma_22 - B.T @ B
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals.min() < -PSD_TOL:
        logger.warning(
            "predictive covariance has negative eigenvalue %.3e, clipping",
            eigvals.min(),
        )
    eigvals = np.maximum(eigvals, 0.0)
    cov = (eigvecs * eigvals) @ eigvecs.T
    return mean, cov


def _conditional_factor(assembly, y, mu: float = 0.0):
    """Like conditional_mvn but also returns a draw factor A with A A^T = cov."""
    mean, cov = conditional_mvn(assembly, y, mu)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    return mean, cov, eigvecs * np.sqrt(eigvals)


@dataclass(frozen=True)
class PredictiveSummary:
    """Pooled posterior-predictive summary at one design point."""

    x_new: tuple
    mean: float
    variance: float
    lower: float
    upper: float
    n_draws: int


def _chain_indices(chain: Chain, thin: int):
    if len(chain) < 1:
        raise DimensionError("chain is empty")
    if thin < 1:
        raise DimensionError(f"thin must be >= 1, got {thin}")
    return range(0, len(chain), thin)


def posterior_predictive(
    dataset,
    chain: Chain,
    x_new,
    include_noise: bool = True,
    draws_per_sample: int = 1,
    thin: int = 1,
    rng_seed: int = 0,
    interval: float = 0.95,
):
    """Pooled predictive draws over the chain, per design point.

    For every retained (thinned) sample the joint covariance is extended
    with the new points, conditioned on the data, and draws_per_sample
    realizations are drawn; the pooled draws are mapped back to the
    original response scale and summarized by mean, variance and the
    equal-tailed central interval.
    """
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    if x_new.shape[1] != dataset.p:
        raise DimensionError(f"x_new has {x_new.shape[1]} columns, expected {dataset.p}")
    if draws_per_sample < 1:
        raise DimensionError(f"draws_per_sample must be >= 1, got {draws_per_sample}")
    indices = _chain_indices(chain, thin)
    y = dataset.joint_response_vector()
    rng = np.random.default_rng(rng_seed)
    pools = []
    for idx in indices:
        state = chain.state(idx)
        assembly = extend_for_prediction(dataset, state, x_new, include_noise=include_noise)
        mean, _, A = _conditional_factor(assembly, y, mu=state.mu)
        z = rng.standard_normal((draws_per_sample, x_new.shape[0]))
        pools.append(mean[None, :] + z @ A.T)
    draws = dataset.transform.invert(np.vstack(pools))
    alpha = 0.5 * (1.0 - interval)
    lo, hi = np.quantile(draws, [alpha, 1.0 - alpha], axis=0)
    return [
        PredictiveSummary(
            x_new=tuple(float(v) for v in x_new[j]),
            mean=float(draws[:, j].mean()),
            variance=float(draws[:, j].var(ddof=1)),
            lower=float(lo[j]),
            upper=float(hi[j]),
            n_draws=draws.shape[0],
        )
        for j in range(x_new.shape[0])
    ]


def posterior_mean(dataset, chain: Chain, x_new, thin: int = 1) -> np.ndarray:
    """Posterior-mean prediction on the original scale (no noise draws).

    Averages the per-sample conditional means over the (thinned) chain;
    noise never shifts the conditional mean, so this matches the mean of
    pooled draws up to Monte Carlo error.
    """
    x_new = np.atleast_2d(np.asarray(x_new, dtype=float))
    indices = _chain_indices(chain, thin)
    y = dataset.joint_response_vector()
    chol_means = np.zeros(x_new.shape[0])
    count = 0
    for idx in indices:
        state = chain.state(idx)
        assembly = extend_for_prediction(dataset, state, x_new, include_noise=False)
        a = scipy.linalg.solve_triangular(
            assembly.chol, y - state.mu, lower=True, check_finite=False
        )
        B = scipy.linalg.solve_triangular(
            assembly.chol, assembly.sigma_12, lower=True, check_finite=False
        )
        chol_means += state.mu + B.T @ a
        count += 1
    return dataset.transform.invert(chol_means / count)


def rmspe(predictions, actuals) -> float:
    """Root mean squared prediction error."""
    predictions = np.asarray(predictions, dtype=float).ravel()
    actuals = np.asarray(actuals, dtype=float).ravel()
    if predictions.shape != actuals.shape or predictions.size < 1:
        raise DimensionError(
            f"predictions {predictions.shape} and actuals {actuals.shape} must match "
            "with at least one entry"
        )
    return float(np.sqrt(np.mean((predictions - actuals) ** 2)))


# ---- leave-one-out ------------------------------------------------------------


@dataclass(frozen=True)
class LooResult:
    """One held-out field point: its prediction and whether it was covered."""

    index: int
    x: np.ndarray
    actual: float            # original response scale
    summary: PredictiveSummary
    covered: bool


def _loo_fold(args):
    (dataset, config, index, steps, burn_in, pilot_steps, seed, thin, interval) = args
    reduced = dataset.drop_field(index)
    chain, _ = fit(
        reduced,
        config=config,
        steps=steps,
        burn_in=burn_in,
        seed=seed,
        pilot_steps=pilot_steps,
    )
    x_held = dataset.field.x[index : index + 1]
    summary = posterior_predictive(
        reduced,
        chain,
        x_held,
        include_noise=True,
        thin=thin,
        rng_seed=seed,
        interval=interval,
    )[0]
    actual = float(dataset.transform.invert(dataset.field.y[index]))
    covered = bool(summary.lower <= actual <= summary.upper)
    return LooResult(
        index=index, x=dataset.field.x[index].copy(), actual=actual,
        summary=summary, covered=covered,
    )


def loo(
    dataset,
    config: PriorConfig = PriorConfig(),
    steps: int = 10000,
    burn_in: int = 2000,
    pilot_steps: int = 200,
    seed: int = 0,
    thin: int = 1,
    interval: float = 0.95,
    workers: int = 1,
    progress=None,
):
    """Leave-one-out analysis: refit without each field point, predict it.

    Each fold is an independent refit (with noise in the predictive
    interval) using a seed spawned from the root seed, so folds can run
    concurrently without changing the result.
    """
    if dataset.n_field < 2:
        raise DimensionError("leave-one-out needs at least 2 field observations")
    fold_seeds = [
        int(s) for s in np.random.SeedSequence(seed).generate_state(dataset.n_field)
    ]
    jobs = [
        (dataset, config, i, steps, burn_in, pilot_steps, fold_seeds[i], thin, interval)
        for i in range(dataset.n_field)
    ]
    results = run_jobs(_loo_fold, jobs, workers, progress=progress)
    return results


def run_jobs(fn, jobs, workers: int, progress=None):
    """Map fn over jobs, in-process when workers <= 1, else a process pool."""
    if workers <= 1:
        out = []
        for i, job in enumerate(jobs):
            out.append(fn(job))
            if progress is not None:
                progress(i + 1, len(jobs))
        return out
    results = [None] * len(jobs)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        done = 0
        for i, res in zip(range(len(jobs)), pool.map(fn, jobs)):
            results[i] = res
            done += 1
            if progress is not None:
                progress(done, len(jobs))
    return results
