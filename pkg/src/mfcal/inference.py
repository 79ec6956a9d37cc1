"""Posterior evaluation and MCMC for the hierarchical model.

The posterior over (theta, lambda, rho[, mu]) combines the Gaussian
likelihood of the joint response vector with independent priors.  Sampling
is single-site: every calibration and correlation parameter gets a
Metropolis update with a uniform proposal of tunable width, and every
precision gets a Hastings update whose uniform proposal is centered at the
current value with width proportional to it.  One chain step is a full
sweep over all sites in a fixed order, so runs are reproducible bit for
bit given a seed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import scipy.linalg

from .errors import DimensionError, InvalidInitError, NumericalSingularityError
from .kernels import (
    combine_blocks,
    correlation_matrix,
    emulator_inputs,
    factorize,
    field_delta_inputs,
    joint_covariance,
    level_delta_inputs,
)
from .params import (
    HASTINGS,
    METROPOLIS,
    CalibrationParams,
    CorrelationParams,
    ParameterLayout,
    ParameterState,
    PrecisionParams,
    PriorConfig,
)

logger = logging.getLogger(__name__)


# ---- posterior pieces ---------------------------------------------------------


def log_likelihood(y, assembly, mu: float = 0.0) -> float:
    """Gaussian log density of y under the assembled covariance.

    Uses the stored Cholesky factor; the 2*pi constant is dropped
    consistently, so the value is -(1/2) logdet - (1/2) quad form.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != assembly.n_train:
        raise DimensionError(
            f"response length {y.shape[0]} does not match covariance {assembly.n_train}"
        )
    chol = assembly.chol
    z = scipy.linalg.solve_triangular(chol, y - mu, lower=True, check_finite=False)
    return float(-np.log(np.diag(chol)).sum() - 0.5 * (z @ z))


def log_prior(state: ParameterState, config: PriorConfig = PriorConfig()) -> float:
    """Sum of the per-parameter log prior densities (up to constants)."""
    layout = layout_for_state(state)
    return layout.log_prior(state, config)


def layout_for_state(state: ParameterState) -> ParameterLayout:
    """Reconstruct the flat layout implied by a state's own shapes."""
    p = state.correlation.field_delta.shape[0]
    m_shared = state.theta.shared.shape[0]
    m_own = tuple(t.shape[0] for t in state.theta.per_level)
    shape = SimpleNamespace(
        p=p,
        m_shared=m_shared,
        n_levels=len(m_own),
        levels=[SimpleNamespace(m_own=m) for m in m_own],
    )
    # mu has a flat prior, so leaving it out never changes the total
    return ParameterLayout(shape, sample_mu=False)


def log_posterior(dataset, state: ParameterState, config: PriorConfig = PriorConfig()) -> float:
    """Log posterior density up to a constant; -inf outside the support.

    When the prior is -inf the covariance is never assembled; a covariance
    that stays singular through jitter escalation is logged and surfaces
    as -inf as well.
    """
    lp = log_prior(state, config)
    if lp == -math.inf:
        return -math.inf
    try:
        assembly = joint_covariance(dataset, state)
    except NumericalSingularityError as exc:
        logger.warning("covariance singular, treating state as zero density: %s", exc)
        return -math.inf
    return log_likelihood(dataset.joint_response_vector(), assembly, mu=state.mu) + lp


# ---- incremental evaluator -----------------------------------------------------


class _Evaluator:
    """Caches per-block correlation matrices for fast single-site updates.

    Maintains the augmented input buffers of each GP block so a calibration
    update rewrites a couple of column slices, recomputes only the touched
    correlation blocks, re-sums the joint covariance and refactorizes.
    Precision updates reuse every cached block.  Agrees with the pure
    log_posterior path to floating-point roundoff.
    """

    def __init__(self, dataset, config, layout, state, prior_only=False):
        self.ds = dataset
        self.config = config
        self.layout = layout
        self.prior_only = prior_only
        self.noise_cap_rejections = 0
        self.y = dataset.joint_response_vector()
        self.vec = layout.vector(state)
        self.mu = state.mu
        self.site_priors = np.array(
            [
                layout.log_prior_site(s, self.vec[i], config)
                for i, s in enumerate(layout.sites)
            ]
        )
        if np.isneginf(self.site_priors).any():
            bad = layout.names[int(np.isneginf(self.site_priors).argmax())]
            raise InvalidInitError(f"initial state has zero prior density at {bad}")

        K = dataset.n_levels
        self.rho = {
            "emulator": np.array(state.correlation.emulator),
            "field_delta": np.array(state.correlation.field_delta),
        }
        for k in range(2, K + 1):
            self.rho[f"delta{k}"] = np.array(state.correlation.deltas[k - 2])
        self.lam = SimpleNamespace(
            emulator=state.precision.emulator,
            deltas=list(state.precision.deltas),
            field_delta=state.precision.field_delta,
            noise=state.precision.noise,
        )

        if not prior_only:
            self._init_buffers(state)
            self.loglik = self._full_loglik()
        else:
            self.loglik = 0.0
        self.logpost = self.loglik + float(self.site_priors.sum())

    # -- buffers ------------------------------------------------------------

    def _init_buffers(self, state):
        ds = self.ds
        theta = state.theta
        self.U = {"emulator": emulator_inputs(ds, theta)}
        for k in range(2, ds.n_levels + 1):
            self.U[f"delta{k}"] = level_delta_inputs(ds, theta, k)
        self.U["field_delta"] = field_delta_inputs(ds)
        self.R = {name: correlation_matrix(U, self.rho[name]) for name, U in self.U.items() if name in self.rho}
        # per theta-site list of (block, row_slice, column) write targets
        self.theta_writes = {}
        p, nf = ds.p, ds.n_field
        n_level1 = ds.levels[0].n
        for i, site in enumerate(self.layout.sites):
            if site.group == "theta_shared":
                writes = [("emulator", slice(0, nf), p + site.index)]
                for k in range(2, ds.n_levels + 1):
                    writes.append((f"delta{k}", slice(0, nf), p + site.index))
                self.theta_writes[i] = writes
            elif site.group == "theta_level":
                col = p + ds.m_shared + site.index
                if site.level == 1:
                    rows = slice(0, ds.n_total - n_level1)
                    self.theta_writes[i] = [("emulator", rows, col)]
                else:
                    k = site.level
                    n_k = ds.levels[k - 1].n
                    rows = slice(0, ds.delta_rows(k) - n_k)
                    self.theta_writes[i] = [(f"delta{k}", rows, col)]

    def _sigma(self, overrides=None):
        R = self.R if not overrides else {**self.R, **overrides}
        K = self.ds.n_levels
        return combine_blocks(
            self.ds,
            R["emulator"],
            [R[f"delta{k}"] for k in range(2, K + 1)],
            R["field_delta"],
            self.lam,
        )

    def _loglik_of(self, sigma, mu) -> float:
        chol, _ = factorize(sigma)
        z = scipy.linalg.solve_triangular(chol, self.y - mu, lower=True, check_finite=False)
        return float(-np.log(np.diag(chol)).sum() - 0.5 * (z @ z))

    def _full_loglik(self) -> float:
        return self._loglik_of(self._sigma(), self.mu)

    def state(self) -> ParameterState:
        st = self.layout.state(self.vec)
        if self.layout.sample_mu:
            return st
        return ParameterState(
            theta=st.theta,
            precision=st.precision,
            correlation=st.correlation,
            mu=self.mu,
        )

    # -- single-site updates --------------------------------------------------

    def metropolis_update(self, i: int, width: float, rng) -> bool:
        site = self.layout.sites[i]
        v = self.vec[i]
        v_new = v + width * (rng.random() - 0.5)
        lp_new = self.layout.log_prior_site(site, v_new, self.config)
        if lp_new == -math.inf:
            return False
        if self.prior_only:
            log_alpha = lp_new - self.site_priors[i]
            if log_alpha >= 0 or rng.random() < math.exp(log_alpha):
                self.vec[i] = v_new
                self.site_priors[i] = lp_new
                self._sync_scalar(site, v_new)
                self.logpost = self.loglik + float(self.site_priors.sum())
                return True
            return False

        overrides, rollback = self._apply_trial(site, i, v_new)
        try:
            loglik_new = self._loglik_of(self._sigma(overrides), self._trial_mu(site, v_new))
        except NumericalSingularityError as exc:
            logger.warning("proposal rejected, covariance singular: %s", exc)
            rollback()
            return False
        log_alpha = (loglik_new + lp_new) - (self.loglik + self.site_priors[i])
        if log_alpha >= 0 or rng.random() < math.exp(log_alpha):
            self._commit(site, i, v_new, lp_new, loglik_new, overrides)
            return True
        rollback()
        return False

    def hastings_update(self, i: int, rel_width: float, rng) -> bool:
        site = self.layout.sites[i]
        v = self.vec[i]
        v_new = v * (1.0 + rel_width * (rng.random() - 0.5))
        if site.group == "lam_noise" and v_new > self.config.noise_cap:
            self.noise_cap_rejections += 1
            return False
        # detailed-balance guard: the reverse move must be possible
        if abs(v - v_new) >= 0.5 * rel_width * v_new:
            return False
        lp_new = self.layout.log_prior_site(site, v_new, self.config)
        if lp_new == -math.inf:
            return False
        hastings = math.log(v) - math.log(v_new)  # q(v|v')/q(v'|v)
        if self.prior_only:
            loglik_new = self.loglik
        else:
            old = self._set_lam(site, v_new)
            try:
                loglik_new = self._loglik_of(self._sigma(), self.mu)
            except NumericalSingularityError as exc:
                logger.warning("proposal rejected, covariance singular: %s", exc)
                self._set_lam(site, old)
                return False
        log_alpha = (loglik_new + lp_new) - (self.loglik + self.site_priors[i]) + hastings
        if log_alpha >= 0 or rng.random() < math.exp(log_alpha):
            self.vec[i] = v_new
            self.site_priors[i] = lp_new
            self.loglik = loglik_new
            self.logpost = self.loglik + float(self.site_priors.sum())
            return True
        if not self.prior_only:
            self._set_lam(site, old)
        return False

    # -- plumbing ---------------------------------------------------------------

    def _trial_mu(self, site, v_new):
        return v_new if site.group == "mu" else self.mu

    def _sync_scalar(self, site, value):
        g = site.group
        if g == "mu":
            self.mu = value
        elif g.startswith("rho"):
            self._rho_array(site)[site.index] = value

    def _rho_array(self, site):
        if site.group == "rho_emulator":
            return self.rho["emulator"]
        if site.group == "rho_field":
            return self.rho["field_delta"]
        return self.rho[f"delta{site.level}"]

    def _set_lam(self, site, value):
        g = site.group
        if g == "lam_emulator":
            old, self.lam.emulator = self.lam.emulator, value
        elif g == "lam_delta":
            old = self.lam.deltas[site.level - 2]
            self.lam.deltas[site.level - 2] = value
        elif g == "lam_field":
            old, self.lam.field_delta = self.lam.field_delta, value
        elif g == "lam_noise":
            old, self.lam.noise = self.lam.noise, value
        else:
            raise DimensionError(f"{site.name} is not a precision site")
        return old

    def _apply_trial(self, site, i, v_new):
        """Write a trial value into the buffers; return (R overrides, rollback)."""
        g = site.group
        if g == "mu":
            return {}, lambda: None
        if g.startswith("rho"):
            arr = self._rho_array(site)
            old = arr[site.index]
            arr[site.index] = v_new
            block = site.dirty[0]
            overrides = {block: correlation_matrix(self.U[block], self.rho[block])}

            def rollback():
                arr[site.index] = old

            return overrides, rollback
        # theta site: rewrite the substituted columns of the dirty blocks
        writes = self.theta_writes[i]
        olds = []
        overrides = {}
        for block, rows, col in writes:
            olds.append((block, rows, col, self.U[block][rows, col].copy()))
            self.U[block][rows, col] = v_new
        for block in site.dirty:
            overrides[block] = correlation_matrix(self.U[block], self.rho[block])

        def rollback():
            for block, rows, col, old in olds:
                self.U[block][rows, col] = old

        return overrides, rollback

    def _commit(self, site, i, v_new, lp_new, loglik_new, overrides):
        self.vec[i] = v_new
        self.site_priors[i] = lp_new
        self.loglik = loglik_new
        for block, R in overrides.items():
            self.R[block] = R
        if site.group == "mu":
            self.mu = v_new
        self.logpost = self.loglik + float(self.site_priors.sum())

    def sweep(self, widths, rng, accepted, proposed) -> None:
        """One full pass over every site, in layout order."""
        for i, site in enumerate(self.layout.sites):
            proposed[i] += 1
            if site.update == METROPOLIS:
                ok = self.metropolis_update(i, widths[i], rng)
            else:
                ok = self.hastings_update(i, widths[i], rng)
            if ok:
                accepted[i] += 1


# ---- spec-level single steps ----------------------------------------------------


def metropolis_step(dataset, config, state, param_id: str, width: float, rng):
    """One uniform-proposal Metropolis update of a single theta or rho site.

    Returns (new_state, accepted).  Proposals outside the parameter's
    support are rejected outright.
    """
    layout = ParameterLayout(dataset, sample_mu=param_id == "mu")
    site = layout.site(param_id)
    if site.update != METROPOLIS:
        raise DimensionError(f"{param_id} is not a Metropolis-updated parameter")
    ev = _Evaluator(dataset, config, layout, state)
    accepted = ev.metropolis_update(layout.position(param_id), width, rng)
    return ev.state(), accepted


def hastings_step_precision(dataset, config, state, param_id: str, rng, rel_width: float = 0.3):
    """One relative-width Hastings update of a single precision.

    The proposal is uniform on (1 +/- rel_width/2) times the current value;
    the acceptance ratio carries the proposal-density correction and moves
    whose reverse step is impossible are rejected for detailed balance.
    """
    layout = ParameterLayout(dataset)
    site = layout.site(param_id)
    if site.update != HASTINGS:
        raise DimensionError(f"{param_id} is not a Hastings-updated parameter")
    ev = _Evaluator(dataset, config, layout, state)
    accepted = ev.hastings_update(layout.position(param_id), rel_width, rng)
    return ev.state(), accepted


# ---- chains ------------------------------------------------------------------


@dataclass
class Chain:
    """Retained posterior samples plus acceptance bookkeeping."""

    names: list
    samples: np.ndarray          # (n_retained, n_sites)
    log_posteriors: np.ndarray
    widths: np.ndarray
    accept_counts: np.ndarray
    proposal_counts: np.ndarray
    seed: int
    steps: int
    burn_in: int
    noise_cap_rejections: int = 0
    layout: ParameterLayout | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def acceptance_rates(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return self.accept_counts / np.maximum(self.proposal_counts, 1)

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]

    def state(self, i: int) -> ParameterState:
        if self.layout is None:
            raise DimensionError("chain has no layout attached")
        return self.layout.state(self.samples[i])

    def summary(self) -> list:
        """Per-parameter (name, mean, sd, q2.5, q97.5)."""
        out = []
        for j, name in enumerate(self.names):
            col = self.samples[:, j]
            lo, hi = np.quantile(col, [0.025, 0.975])
            out.append((name, float(col.mean()), float(col.std(ddof=1)), float(lo), float(hi)))
        return out

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.names + ["log_posterior"])
            for row, lp in zip(self.samples, self.log_posteriors):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(lp))])

    @classmethod
    def from_csv(cls, path, layout: ParameterLayout) -> "Chain":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[:-1] != layout.names or header[-1] != "log_posterior":
                raise DimensionError(f"{path}: chain columns do not match the model layout")
            rows = [[float(v) for v in row] for row in reader]
        body = np.array(rows, dtype=float).reshape(len(rows), len(header))
        return cls(
            names=list(layout.names),
            samples=body[:, :-1],
            log_posteriors=body[:, -1],
            widths=np.full(len(layout), np.nan),
            accept_counts=np.zeros(len(layout)),
            proposal_counts=np.zeros(len(layout)),
            seed=-1,
            steps=len(rows),
            burn_in=0,
            layout=layout,
        )


def default_initial_state(dataset) -> ParameterState:
    """Chain start: thetas at 0.5, emulator precision 1, the rest 20, rho 0.1."""
    K = dataset.n_levels
    theta = CalibrationParams(
        shared=np.full(dataset.m_shared, 0.5),
        per_level=tuple(np.full(lvl.m_own, 0.5) for lvl in dataset.levels),
    )
    precision = PrecisionParams(
        emulator=1.0,
        deltas=(20.0,) * (K - 1),
        field_delta=20.0,
        noise=20.0,
    )
    p, m = dataset.p, dataset.m_shared
    correlation = CorrelationParams(
        emulator=np.full(p + m + dataset.levels[0].m_own, 0.1),
        deltas=tuple(
            np.full(p + m + dataset.levels[k - 1].m_own, 0.1) for k in range(2, K + 1)
        ),
        field_delta=np.full(p, 0.1),
    )
    return ParameterState(theta=theta, precision=precision, correlation=correlation)


def run_chain(
    dataset,
    config: PriorConfig = PriorConfig(),
    init: ParameterState | None = None,
    steps: int = 10000,
    burn_in: int = 2000,
    seed: int = 0,
    widths=None,
    sample_mu: bool = False,
    prior_only: bool = False,
    progress=None,
) -> Chain:
    """Run one MCMC chain and keep the post-burn-in samples.

    One step is a full single-site sweep.  Deterministic given the seed.
    Raises InvalidInitError when the initial state has zero posterior
    density.
    """
    if not steps > burn_in >= 0:
        raise DimensionError(f"need steps > burn_in >= 0, got {steps}, {burn_in}")
    layout = ParameterLayout(dataset, sample_mu=sample_mu)
    state = init if init is not None else default_initial_state(dataset)
    if widths is None:
        widths = layout.default_widths()
    widths = np.asarray(widths, dtype=float)
    if widths.shape != (len(layout),):
        raise DimensionError(f"widths length {widths.shape} != layout size {len(layout)}")

    ev = _Evaluator(dataset, config, layout, state, prior_only=prior_only)
    if not prior_only and not math.isfinite(ev.logpost):
        raise InvalidInitError(f"initial log posterior is {ev.logpost}")

    rng = np.random.default_rng(seed)
    n_keep = steps - burn_in
    samples = np.empty((n_keep, len(layout)))
    logposts = np.empty(n_keep)
    accepted = np.zeros(len(layout), dtype=np.int64)
    proposed = np.zeros(len(layout), dtype=np.int64)

    for step in range(steps):
        ev.sweep(widths, rng, accepted, proposed)
        if step >= burn_in:
            samples[step - burn_in] = ev.vec
            logposts[step - burn_in] = ev.logpost
        if progress is not None:
            progress(step + 1, steps)

    return Chain(
        names=list(layout.names),
        samples=samples,
        log_posteriors=logposts,
        widths=widths.copy(),
        accept_counts=accepted,
        proposal_counts=proposed,
        seed=int(seed),
        steps=steps,
        burn_in=burn_in,
        noise_cap_rejections=ev.noise_cap_rejections,
        layout=layout,
    )


# ---- width tuning -----------------------------------------------------------


@dataclass
class TuningResult:
    names: list
    widths: np.ndarray
    acceptance: np.ndarray
    warnings: list


def tune_widths(
    dataset,
    state0: ParameterState | None = None,
    config: PriorConfig = PriorConfig(),
    pilot_steps: int = 200,
    rounds: int = 5,
    seed: int = 0,
    sample_mu: bool = False,
    prior_only: bool = False,
    target: float = 0.44,
) -> TuningResult:
    """Choose proposal widths from short pilot runs.

    Each adjustment round restarts a pilot from the initial state (so the
    widths describe the region the burn-in has to traverse) and then
    rescales every width: x2 when its acceptance exceeded 0.6, x0.5 below
    0.2, otherwise a proportional nudge with fixed point at the target
    rate.  Unit-interval widths cap at 1; relative precision widths cap
    below 2 to keep proposals positive.  After the rounds, each parameter
    keeps the candidate width whose measured acceptance came closest to
    the target, and one last pilot measures the reported acceptance at the
    returned widths; parameters outside [0.25, 0.75] there get a warning.
    """
    if pilot_steps < 200:
        raise DimensionError(f"pilot_steps must be >= 200, got {pilot_steps}")
    layout = ParameterLayout(dataset, sample_mu=sample_mu)
    state = state0 if state0 is not None else default_initial_state(dataset)
    widths = layout.default_widths()
    caps = np.array([layout.width_cap(s) for s in layout.sites])

    rng = np.random.default_rng(seed)

    def pilot(current_widths):
        ev = _Evaluator(dataset, config, layout, state, prior_only=prior_only)
        return _pilot(ev, current_widths, pilot_steps, rng)

    history = []
    for _ in range(rounds):
        acceptance = pilot(widths)
        history.append((widths, acceptance))
        factors = np.where(
            acceptance > 0.6,
            2.0,
            np.where(acceptance < 0.2, 0.5, 0.5 + 0.5 * acceptance / target),
        )
        new_widths = np.minimum(widths * factors, caps)
        np.maximum(new_widths, 1e-6, out=new_widths)
        if np.array_equal(new_widths, widths):
            break
        widths = new_widths

    tried_widths = np.array([w for w, _ in history])
    tried_acc = np.array([a for _, a in history])
    best_round = np.abs(tried_acc - target).argmin(axis=0)
    widths = tried_widths[best_round, np.arange(len(layout))]
    acceptance = pilot(widths)

    warnings = []
    for i, site in enumerate(layout.sites):
        if not 0.25 <= acceptance[i] <= 0.75:
            at_cap = " (width at cap)" if widths[i] >= caps[i] else ""
            warnings.append(
                f"{site.name}: pilot acceptance {acceptance[i]:.2f} outside "
                f"[0.25, 0.75] at width {widths[i]:.4g}{at_cap}"
            )
    return TuningResult(
        names=list(layout.names), widths=widths, acceptance=acceptance, warnings=warnings
    )


def _pilot(ev, widths, pilot_steps, rng):
    accepted = np.zeros(len(ev.layout), dtype=np.int64)
    proposed = np.zeros(len(ev.layout), dtype=np.int64)
    for _ in range(pilot_steps):
        ev.sweep(widths, rng, accepted, proposed)
    return accepted / np.maximum(proposed, 1)


def fit(
    dataset,
    config: PriorConfig = PriorConfig(),
    steps: int = 10000,
    burn_in: int = 2000,
    seed: int = 0,
    pilot_steps: int = 200,
    tuning_rounds: int = 5,
    sample_mu: bool = False,
    progress=None,
):
    """Tune proposal widths, then run the main chain.

    Returns (chain, tuning).  Both stages draw from seeds spawned off the
    root seed, so the whole fit is reproducible.
    """
    tune_seed, run_seed = (int(s) for s in np.random.SeedSequence(seed).generate_state(2))
    tuning = tune_widths(
        dataset,
        config=config,
        pilot_steps=pilot_steps,
        rounds=tuning_rounds,
        seed=tune_seed,
        sample_mu=sample_mu,
    )
    chain = run_chain(
        dataset,
        config=config,
        steps=steps,
        burn_in=burn_in,
        seed=run_seed,
        widths=tuning.widths,
        sample_mu=sample_mu,
        progress=progress,
    )
    return chain, tuning
