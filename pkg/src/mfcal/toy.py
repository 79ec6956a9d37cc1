"""Analytic two-fidelity test system and the D1/D2/D3 prediction study.

The synthetic system has two design variables and three calibration
parameters on the unit interval: one shared between the simulators, one
specific to the low-fidelity code and one specific to the high-fidelity
code.  Reality is the calibrated high-fidelity surface plus a known
discrepancy and iid noise, so every model assumption of the calibration
machinery holds by construction and predictive performance is measurable
against the truth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import MultiFidelityDataSet
from .design import lhs_points
from .errors import CalibrationError, DimensionError
from .inference import PriorConfig, fit
from .predict import posterior_mean, rmspe, run_jobs

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ToyTruth:
    """Generating values of the synthetic system; fixed, never fitted."""

    theta_shared: float = 0.2
    theta_high: float = 0.3
    theta_low: float = 0.1
    noise_sd: float = 0.5


TOY_TRUTH = ToyTruth()


def low_fidelity(x, t_shared, t_low):
    """Low-fidelity response surface on the unit square.

    The x2 damping factor takes its limit value 1 at x2 = 0.
    """
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    with np.errstate(divide="ignore"):
        damp = 1.0 - np.exp(-1.0 / (2.0 * x2))
    num = 1000.0 * np.asarray(t_shared) * x1**3 + 1900.0 * x1**2 + 2092.0 * x1 + 60.0
    den = 1000.0 * np.asarray(t_low) * x1**3 + 500.0 * x1**2 + 4.0 * x1 + 20.0
    out = damp * num / den
    return float(out) if out.ndim == 0 else out


def high_delta(x, t_shared, t_high):
    """Systematic difference between the fidelity levels (0**0 == 1)."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    t_shared = np.asarray(t_shared)
    t_high = np.asarray(t_high)
    out = 5.0 * np.exp(-t_shared) * x1**t_high / (100.0 * (x2 ** (2.0 + t_high) + 1.0))
    return float(out) if out.ndim == 0 else out


def high_fidelity(x, t_shared, t_high, truth: ToyTruth = TOY_TRUTH):
    """High-fidelity simulator: low surface at the true t_low plus its delta."""
    return low_fidelity(x, t_shared, truth.theta_low) + high_delta(x, t_shared, t_high)


def field_delta(x):
    """Discrepancy between the high-fidelity simulator and reality."""
    x = np.asarray(x, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    out = (10.0 * x1**2 + 4.0 * x2**2) / (50.0 * x1 * x2 + 10.0)
    return float(out) if out.ndim == 0 else out


def field_mean(x, truth: ToyTruth = TOY_TRUTH):
    """Noise-free mean of the physical process."""
    return (
        low_fidelity(x, truth.theta_shared, truth.theta_low)
        + high_delta(x, truth.theta_shared, truth.theta_high)
        + field_delta(x)
    )


def sample_field(x, rng, truth: ToyTruth = TOY_TRUTH):
    """Noisy field observation(s) at x."""
    mean = field_mean(x, truth)
    return mean + truth.noise_sd * rng.standard_normal(np.shape(mean))


@dataclass(frozen=True)
class ValidationSet:
    """Held-out field locations with both noisy draws and the true mean."""

    x: np.ndarray
    y: np.ndarray
    mean: np.ndarray

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class _RawToyTables:
    field_x: np.ndarray
    field_y: np.ndarray
    low: tuple
    high: tuple        # arrays with zero rows when n_high == 0
    validation: ValidationSet


def _raw_toy_tables(n_low, n_high, n_field, validation_n, seed, truth=TOY_TRUTH):
    if min(n_low, n_field) < 1 or n_high < 0 or validation_n < 0:
        raise DimensionError(
            f"invalid sizes n_low={n_low}, n_high={n_high}, n_field={n_field}, "
            f"validation_n={validation_n}"
        )
    seeds = np.random.SeedSequence(seed).spawn(5)
    rng_low, rng_high, rng_field, rng_noise, rng_val = (
        np.random.default_rng(s) for s in seeds
    )

    low_design = lhs_points(n_low, 4, rng_low)
    lx, ltf, ltl = low_design[:, :2], low_design[:, 2:3], low_design[:, 3:4]
    ly = low_fidelity(lx, ltf[:, 0], ltl[:, 0])

    if n_high > 0:
        high_design = lhs_points(n_high, 4, rng_high)
        hx, htf, hth = high_design[:, :2], high_design[:, 2:3], high_design[:, 3:4]
        hy = high_fidelity(hx, htf[:, 0], hth[:, 0], truth)
    else:
        hx = np.empty((0, 2))
        htf = np.empty((0, 1))
        hth = np.empty((0, 1))
        hy = np.empty(0)

    fx = lhs_points(n_field, 2, rng_field)
    fy = sample_field(fx, rng_noise, truth)

    if validation_n > 0:
        vx = lhs_points(validation_n, 2, rng_val)
        vmean = field_mean(vx, truth)
        vy = vmean + truth.noise_sd * rng_val.standard_normal(validation_n)
    else:
        vx = np.empty((0, 2))
        vmean = np.empty(0)
        vy = np.empty(0)

    return _RawToyTables(
        field_x=fx,
        field_y=fy,
        low=(lx, ltf, ltl, ly),
        high=(hx, htf, hth, hy),
        validation=ValidationSet(x=vx, y=vy, mean=vmean),
    )


def generate_toy_data(
    n_low: int = 40,
    n_high: int = 10,
    n_field: int = 3,
    validation_n: int = 25,
    seed: int = 0,
    truth: ToyTruth = TOY_TRUTH,
):
    """Training dataset plus validation set from Latin hypercube designs.

    All inputs live on the unit interval, responses come from the toy
    functions, and the field rows carry iid noise.  With n_high = 0 the
    result is the single-level dataset used by model D1.  Deterministic
    for a given seed.
    """
    raw = _raw_toy_tables(n_low, n_high, n_field, validation_n, seed, truth)
    levels = [raw.low]
    if n_high > 0:
        levels.append(raw.high)
    dataset = MultiFidelityDataSet.from_raw(raw.field_x, raw.field_y, levels)
    return dataset, raw.validation


# ---- simulation study ----------------------------------------------------------

STUDY_MODELS = ("D1", "D2", "D3")


@dataclass(frozen=True)
class StudyConfig:
    """Sizes, replication and MCMC settings of the prediction study."""

    n_low: int = 40
    n_high: int = 10
    n_field: int = 3
    replicates: int = 100
    validation_n: int = 25
    models: tuple = STUDY_MODELS
    seed: int = 0
    steps: int = 10000
    burn_in: int = 2000
    pilot_steps: int = 200
    tuning_rounds: int = 5
    predict_thin: int = 10
    workers: int = 1
    priors: PriorConfig = field(default_factory=PriorConfig)

    def __post_init__(self):
        bad = [m for m in self.models if m not in STUDY_MODELS]
        if bad or not self.models:
            raise DimensionError(f"models must be a non-empty subset of {STUDY_MODELS}")
        if self.replicates < 1:
            raise DimensionError("need at least one replicate")


@dataclass(frozen=True)
class StudyResult:
    """RMSPE per replicate and model, medians, and any recorded failures."""

    models: tuple
    table: np.ndarray            # (replicates, len(models)), NaN where a fit failed
    medians: dict
    failures: tuple              # (replicate, model, message)
    config: StudyConfig


def dataset_for_model(raw: _RawToyTables, model: str) -> MultiFidelityDataSet:
    """Training data actually visible to one of the study models.

    D1 uses the field data plus the low-fidelity runs as a single-level
    model; D2 does the same with the high-fidelity runs; D3 is the full
    two-level hierarchy.  Each dataset standardizes its own responses.
    """
    if model == "D1":
        return MultiFidelityDataSet.from_raw(raw.field_x, raw.field_y, [raw.low])
    if model == "D2":
        if raw.high[3].shape[0] < 1:
            raise DimensionError("model D2 needs at least one high-fidelity run")
        return MultiFidelityDataSet.from_raw(raw.field_x, raw.field_y, [raw.high])
    if model == "D3":
        return MultiFidelityDataSet.from_raw(raw.field_x, raw.field_y, [raw.low, raw.high])
    raise DimensionError(f"unknown model {model}")


def replicate_raw_tables(config: StudyConfig, replicate: int, rep_seed=None):
    """Raw training/validation tables and fit seeds of one study replicate.

    Reconstructs exactly what the replicate worker sees, so the generated
    datasets can be exported after (or without) running the study.
    """
    if rep_seed is None:
        rep_seed = int(
            np.random.SeedSequence(config.seed).generate_state(config.replicates)[replicate]
        )
    sub = np.random.SeedSequence(rep_seed).generate_state(1 + len(STUDY_MODELS))
    raw = _raw_toy_tables(
        config.n_low, config.n_high, config.n_field, config.validation_n, int(sub[0])
    )
    fit_seeds = {m: int(sub[1 + STUDY_MODELS.index(m)]) for m in STUDY_MODELS}
    return raw, fit_seeds


def _study_replicate(args):
    config, replicate, rep_seed = args
    raw, fit_seeds = replicate_raw_tables(config, replicate, rep_seed)
    out = {}
    for model in config.models:
        fit_seed = fit_seeds[model]
        try:
            dataset = dataset_for_model(raw, model)
            chain, _ = fit(
                dataset,
                config=config.priors,
                steps=config.steps,
                burn_in=config.burn_in,
                seed=fit_seed,
                pilot_steps=config.pilot_steps,
                tuning_rounds=config.tuning_rounds,
            )
            preds = posterior_mean(
                dataset, chain, raw.validation.x, thin=config.predict_thin
            )
            out[model] = float(rmspe(preds, raw.validation.y))
        except (CalibrationError, np.linalg.LinAlgError) as exc:
            out[model] = f"{type(exc).__name__}: {exc}"
    return replicate, out


def run_sim_study(config: StudyConfig, progress=None) -> StudyResult:
    """Fit every requested model on fresh data per replicate, score RMSPE.

    Replicates use independent seed streams derived from the root seed and
    may run in parallel; failed fits are excluded from the medians but kept
    in the failure list with their messages.
    """
    rep_seeds = np.random.SeedSequence(config.seed).generate_state(config.replicates)
    jobs = [(config, r, int(rep_seeds[r])) for r in range(config.replicates)]
    results = run_jobs(_study_replicate, jobs, config.workers, progress=progress)

    table = np.full((config.replicates, len(config.models)), np.nan)
    failures = []
    for replicate, scores in results:
        for j, model in enumerate(config.models):
            value = scores[model]
            if isinstance(value, str):
                failures.append((replicate, model, value))
                logger.warning("replicate %d model %s failed: %s", replicate, model, value)
            else:
                table[replicate, j] = value
    medians = {}
    for j, model in enumerate(config.models):
        col = table[:, j]
        ok = col[~np.isnan(col)]
        medians[model] = float(np.median(ok)) if ok.size else float("nan")
    return StudyResult(
        models=tuple(config.models),
        table=table,
        medians=medians,
        failures=tuple(failures),
        config=config,
    )
