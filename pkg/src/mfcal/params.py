"""Parameter containers and the flat layout used by the sampler.

Every sampled quantity lives in one :class:`ParameterState`: calibration
inputs on the unit cube, marginal precisions of the GP components, and
per-input correlation parameters.  :class:`ParameterLayout` flattens a state
into a named vector of scalars (one entry per MCMC update site) and back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

# Correlation parameters are kept strictly inside (0, 1); the Beta(1, 0.001)
# prior is singular at 1 and kernels lose positive definiteness there.
RHO_MIN = 1e-9
RHO_MAX = 1.0 - 1e-9


def clamp_rho(values):
    return np.clip(np.asarray(values, dtype=float), RHO_MIN, RHO_MAX)


@dataclass(frozen=True)
class CalibrationParams:
    """Calibration inputs: the shared vector plus one vector per level."""

    shared: np.ndarray                 # length m_shared
    per_level: tuple                   # per_level[k-1] has length m_k, low to high

    def __post_init__(self):
        object.__setattr__(self, "shared", np.asarray(self.shared, dtype=float))
        object.__setattr__(
            self, "per_level", tuple(np.asarray(t, dtype=float) for t in self.per_level)
        )
        for t in (self.shared, *self.per_level):
            if t.size and (t.min() < 0.0 or t.max() > 1.0):
                raise DimensionError("calibration parameters must lie in [0, 1]")


@dataclass(frozen=True)
class PrecisionParams:
    """Marginal precisions (inverse variances on the standardized scale)."""

    emulator: float                    # base low-fidelity emulator GP
    deltas: tuple                      # between-level discrepancy GPs, levels 2..K
    field_delta: float                 # highest-simulator-to-reality discrepancy GP
    noise: float                       # iid observation error

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(float(v) for v in self.deltas))
        for v in (self.emulator, *self.deltas, self.field_delta, self.noise):
            if not v > 0:
                raise DimensionError(f"precisions must be positive, got {v}")


@dataclass(frozen=True)
class CorrelationParams:
    """Per-input-dimension correlation parameters, one vector per GP."""

    emulator: np.ndarray               # length p + m_shared + m_1
    deltas: tuple                      # deltas[k-2] has length p + m_shared + m_k
    field_delta: np.ndarray            # length p

    def __post_init__(self):
        object.__setattr__(self, "emulator", clamp_rho(self.emulator))
        object.__setattr__(self, "deltas", tuple(clamp_rho(r) for r in self.deltas))
        object.__setattr__(self, "field_delta", clamp_rho(self.field_delta))


@dataclass(frozen=True)
class ParameterState:
    """One point in parameter space; the constant mean is fixed at 0 unless sampled."""

    theta: CalibrationParams
    precision: PrecisionParams
    correlation: CorrelationParams
    mu: float = 0.0


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the independent priors.

    Precisions get densities proportional to lambda^a * exp(-b * lambda)
    (the emulator precision uses a_emulator/b_emulator, everything else
    a_other/b_other unless the noise override is set).  Correlation
    parameters get Beta(beta_a, beta_b) densities on their clamped support;
    calibration parameters are uniform on [0, 1].
    """

    a_emulator: float = 5.0
    b_emulator: float = 5.0
    a_other: float = 1.0
    b_other: float = 0.001
    beta_a: float = 1.0
    beta_b: float = 0.001
    a_noise: float | None = None       # optional informative override for the
    b_noise: float | None = None       # observation-error precision
    noise_cap: float = 1e6             # hard cap on the noise precision

    def __post_init__(self):
        for name in ("a_emulator", "b_emulator", "a_other", "b_other", "beta_a", "beta_b"):
            if not getattr(self, name) > 0:
                raise DimensionError(f"prior hyperparameter {name} must be positive")
        if (self.a_noise is None) != (self.b_noise is None):
            raise DimensionError("a_noise and b_noise must be set together")

    def noise_shape_rate(self):
        if self.a_noise is not None:
            return self.a_noise, self.b_noise
        return self.a_other, self.b_other


# ---- flat layout -------------------------------------------------------------

# update kinds
METROPOLIS = "metropolis"
HASTINGS = "hastings"

# support kinds
UNIT = "unit"              # [0, 1]
RHO = "rho"                # [RHO_MIN, RHO_MAX]
POSITIVE = "positive"      # (0, inf), possibly capped
REAL = "real"


@dataclass(frozen=True)
class ParamSite:
    """One scalar update site in the sweep."""

    name: str
    group: str                 # theta_shared | theta_level | rho_* | lam_* | mu
    level: int                 # level number for per-level groups, else 0
    index: int                 # component index within its vector, else 0
    support: str
    update: str
    dirty: tuple               # covariance blocks whose correlations it touches


class ParameterLayout:
    """Order and bookkeeping of every scalar parameter for a dataset shape.

    The sweep order is: shared calibration parameters, per-level calibration
    parameters from the highest level down, emulator correlations, the
    between-level discrepancy correlations going up, field-discrepancy
    correlations, then the precisions (emulator, discrepancies going up,
    field discrepancy, noise) and finally the mean when it is sampled.
    """

    def __init__(self, dataset, sample_mu: bool = False):
        p = dataset.p
        m_shared = dataset.m_shared
        K = dataset.n_levels
        m_own = [lvl.m_own for lvl in dataset.levels]
        delta_blocks = tuple(f"delta{k}" for k in range(2, K + 1))

        sites = []
        for i in range(m_shared):
            sites.append(
                ParamSite(
                    name=f"theta_shared_{i}",
                    group="theta_shared",
                    level=0,
                    index=i,
                    support=UNIT,
                    update=METROPOLIS,
                    dirty=("emulator",) + delta_blocks,
                )
            )
        for k in range(K, 0, -1):
            # theta for level 1 is substituted into the emulator block; theta
            # for level k >= 2 only enters its own discrepancy block
            dirty = ("emulator",) if k == 1 else (f"delta{k}",)
            for i in range(m_own[k - 1]):
                sites.append(
                    ParamSite(
                        name=f"theta_level{k}_{i}",
                        group="theta_level",
                        level=k,
                        index=i,
                        support=UNIT,
                        update=METROPOLIS,
                        dirty=dirty,
                    )
                )
        for i in range(p + m_shared + m_own[0]):
            sites.append(
                ParamSite(
                    name=f"rho_emulator_{i}",
                    group="rho_emulator",
                    level=0,
                    index=i,
                    support=RHO,
                    update=METROPOLIS,
                    dirty=("emulator",),
                )
            )
        for k in range(2, K + 1):
            for i in range(p + m_shared + m_own[k - 1]):
                sites.append(
                    ParamSite(
                        name=f"rho_delta{k}_{i}",
                        group="rho_delta",
                        level=k,
                        index=i,
                        support=RHO,
                        update=METROPOLIS,
                        dirty=(f"delta{k}",),
                    )
                )
        for i in range(p):
            sites.append(
                ParamSite(
                    name=f"rho_field_{i}",
                    group="rho_field",
                    level=0,
                    index=i,
                    support=RHO,
                    update=METROPOLIS,
                    dirty=("field_delta",),
                )
            )
        sites.append(
            ParamSite("lam_emulator", "lam_emulator", 0, 0, POSITIVE, HASTINGS, ())
        )
        for k in range(2, K + 1):
            sites.append(
                ParamSite(f"lam_delta{k}", "lam_delta", k, 0, POSITIVE, HASTINGS, ())
            )
        sites.append(
            ParamSite("lam_field", "lam_field", 0, 0, POSITIVE, HASTINGS, ())
        )
        sites.append(ParamSite("lam_noise", "lam_noise", 0, 0, POSITIVE, HASTINGS, ()))
        if sample_mu:
            sites.append(ParamSite("mu", "mu", 0, 0, REAL, METROPOLIS, ()))

        self.sites = tuple(sites)
        self.names = [s.name for s in sites]
        self.sample_mu = sample_mu
        self.n_levels = K
        self._index = {s.name: i for i, s in enumerate(sites)}

    def __len__(self) -> int:
        return len(self.sites)

    def site(self, name: str) -> ParamSite:
        return self.sites[self._index[name]]

    def position(self, name: str) -> int:
        return self._index[name]

    # ---- state <-> vector ----------------------------------------------------

    def vector(self, state: ParameterState) -> np.ndarray:
        out = np.empty(len(self.sites))
        for i, s in enumerate(self.sites):
            out[i] = self.get(state, s)
        return out

    def state(self, vector) -> ParameterState:
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (len(self.sites),):
            raise DimensionError(
                f"vector length {vector.shape} does not match layout ({len(self.sites)})"
            )
        by = {s.name: vector[i] for i, s in enumerate(self.sites)}
        K = self.n_levels
        theta = CalibrationParams(
            shared=np.array(
                [by[f"theta_shared_{i}"] for i in range(self._count("theta_shared"))]
            ),
            per_level=tuple(
                np.array(
                    [
                        by[f"theta_level{k}_{i}"]
                        for i in range(self._count("theta_level", k))
                    ]
                )
                for k in range(1, K + 1)
            ),
        )
        precision = PrecisionParams(
            emulator=by["lam_emulator"],
            deltas=tuple(by[f"lam_delta{k}"] for k in range(2, K + 1)),
            field_delta=by["lam_field"],
            noise=by["lam_noise"],
        )
        correlation = CorrelationParams(
            emulator=np.array(
                [by[f"rho_emulator_{i}"] for i in range(self._count("rho_emulator"))]
            ),
            deltas=tuple(
                np.array(
                    [by[f"rho_delta{k}_{i}"] for i in range(self._count("rho_delta", k))]
                )
                for k in range(2, K + 1)
            ),
            field_delta=np.array(
                [by[f"rho_field_{i}"] for i in range(self._count("rho_field"))]
            ),
        )
        mu = by.get("mu", 0.0)
        return ParameterState(
            theta=theta, precision=precision, correlation=correlation, mu=float(mu)
        )

    def _count(self, group: str, level: int = 0) -> int:
        return sum(
            1 for s in self.sites if s.group == group and (level == 0 or s.level == level)
        )

    @staticmethod
    def get(state: ParameterState, site: ParamSite) -> float:
        g = site.group
        if g == "theta_shared":
            return float(state.theta.shared[site.index])
        if g == "theta_level":
            return float(state.theta.per_level[site.level - 1][site.index])
        if g == "rho_emulator":
            return float(state.correlation.emulator[site.index])
        if g == "rho_delta":
            return float(state.correlation.deltas[site.level - 2][site.index])
        if g == "rho_field":
            return float(state.correlation.field_delta[site.index])
        if g == "lam_emulator":
            return state.precision.emulator
        if g == "lam_delta":
            return state.precision.deltas[site.level - 2]
        if g == "lam_field":
            return state.precision.field_delta
        if g == "lam_noise":
            return state.precision.noise
        if g == "mu":
            return state.mu
        raise DimensionError(f"unknown parameter group {g}")

    # ---- priors ----------------------------------------------------------------

    def log_prior_site(self, site: ParamSite, value: float, config: PriorConfig) -> float:
        """Log prior density of one scalar, up to an additive constant."""
        g = site.group
        if g in ("theta_shared", "theta_level"):
            return 0.0 if 0.0 <= value <= 1.0 else -math.inf
        if g.startswith("rho"):
            if not RHO_MIN <= value <= RHO_MAX:
                return -math.inf
            return (config.beta_a - 1.0) * math.log(value) + (
                config.beta_b - 1.0
            ) * math.log1p(-value)
        if g == "lam_emulator":
            if value <= 0:
                return -math.inf
            return config.a_emulator * math.log(value) - config.b_emulator * value
        if g in ("lam_delta", "lam_field"):
            if value <= 0:
                return -math.inf
            return config.a_other * math.log(value) - config.b_other * value
        if g == "lam_noise":
            if not 0 < value <= config.noise_cap:
                return -math.inf
            a, b = config.noise_shape_rate()
            return a * math.log(value) - b * value
        if g == "mu":
            return 0.0
        raise DimensionError(f"unknown parameter group {g}")

    def log_prior(self, state: ParameterState, config: PriorConfig) -> float:
        total = 0.0
        for site in self.sites:
            total += self.log_prior_site(site, self.get(state, site), config)
            if total == -math.inf:
                return -math.inf
        return total

    # ---- proposal defaults -------------------------------------------------------

    def default_width(self, site: ParamSite) -> float:
        if site.update == HASTINGS:
            return 0.3           # relative width: proposals on (1 +/- w/2) * value
        if site.group == "mu":
            return 0.5
        return 0.25

    def width_cap(self, site: ParamSite) -> float:
        if site.update == HASTINGS:
            return 1.9           # keeps multiplicative proposals positive
        if site.group == "mu":
            return 10.0
        return 1.0               # unit-interval parameters

    def default_widths(self) -> np.ndarray:
        return np.array([self.default_width(s) for s in self.sites])
