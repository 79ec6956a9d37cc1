"""Covariance construction for the hierarchical multi-fidelity model.

Every GP component uses the product-form correlation
``prod_s rho_s ** (4 * (u_s - v_s)**2)`` over its own augmented inputs:

* the base emulator GP sees (x, t_shared, t_level1) for every row, with the
  current calibration values substituted where a row does not carry an input
  (field rows substitute both theta vectors, higher-level rows substitute
  the level-1 theta);
* each between-level discrepancy GP (one per level k >= 2) sees
  (x, t_shared, t_levelk) on the field rows and the rows of levels k and up;
* the field discrepancy GP sees the design variables only, on field rows;
* iid observation noise adds 1/lam_noise to the field diagonal.

The joint covariance is the sum of these blocks placed in the fixed row
order (field, level K, ..., level 1, prediction points).  Prediction points
are treated exactly like field rows, with noise on their diagonal only when
requested.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionError, NumericalSingularityError

JITTER_START = 1e-8
JITTER_MAX = 1e-4


def correlation(u, v, rho) -> float:
    """Product correlation between two augmented input vectors.

    Equals 1 exactly when u == v and decays in every coordinate distance;
    rho_s is the correlation between points half a unit apart in dimension s.
    """
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    rho = np.asarray(rho, dtype=float).ravel()
    if not (u.shape == v.shape == rho.shape):
        raise DimensionError(
            f"length mismatch: u {u.shape}, v {v.shape}, rho {rho.shape}"
        )
    return float(np.prod(rho ** (4.0 * (u - v) ** 2)))


def correlation_matrix(U, rho) -> np.ndarray:
    """All-pairs product correlation over the rows of U.

    Computed as exp(sum_s 4 log(rho_s) (u_is - u_js)^2) with one matrix
    product; the exponent is clipped at 0 so rounding never pushes a
    correlation above 1, and the diagonal is pinned to exactly 1.
    """
    U = np.asarray(U, dtype=float)
    rho = np.asarray(rho, dtype=float).ravel()
    if U.ndim != 2 or U.shape[1] != rho.shape[0]:
        raise DimensionError(f"inputs {U.shape} do not match rho length {rho.shape[0]}")
    w = 4.0 * np.log(rho)
    Uw = U * w
    a = np.einsum("ij,ij->i", Uw, U)
    M = a[:, None] + a[None, :]
    M -= 2.0 * (Uw @ U.T)
    np.minimum(M, 0.0, out=M)
    R = np.exp(M, out=M)
    np.fill_diagonal(R, 1.0)
    return R


def _tile(vec, n):
    vec = np.asarray(vec, dtype=float)
    return np.tile(vec, (n, 1)) if vec.size else np.empty((n, 0))


def emulator_inputs(dataset, theta, x_new=None) -> np.ndarray:
    """Augmented (x, t_shared, t_level1) inputs for every joint row.

    Field rows (and prediction rows) substitute the current shared and
    level-1 calibration values; rows from levels above the first substitute
    the level-1 values only; level-1 rows pass through unchanged.
    """
    th1 = theta.per_level[0]
    nf = dataset.n_field
    parts = [np.hstack([dataset.field.x, _tile(theta.shared, nf), _tile(th1, nf)])]
    for k, lvl in dataset.joint_levels():
        own = lvl.t_own if k == 1 else _tile(th1, lvl.n)
        parts.append(np.hstack([lvl.x, lvl.t_shared, own]))
    if x_new is not None and len(x_new):
        m = len(x_new)
        parts.append(np.hstack([x_new, _tile(theta.shared, m), _tile(th1, m)]))
    return np.vstack(parts)


def level_delta_inputs(dataset, theta, level: int, x_new=None) -> np.ndarray:
    """Augmented (x, t_shared, t_level) inputs for one discrepancy block.

    Covers the field rows, the rows of every simulator level at or above
    ``level``, and any prediction rows.  Rows that do not carry the level's
    own calibration inputs substitute the current theta for that level;
    field and prediction rows also substitute the shared theta.
    """
    if not 2 <= level <= dataset.n_levels:
        raise DimensionError(f"discrepancy level {level} outside 2..{dataset.n_levels}")
    thk = theta.per_level[level - 1]
    nf = dataset.n_field
    parts = [np.hstack([dataset.field.x, _tile(theta.shared, nf), _tile(thk, nf)])]
    for k, lvl in dataset.joint_levels():
        if k < level:
            break
        own = lvl.t_own if k == level else _tile(thk, lvl.n)
        parts.append(np.hstack([lvl.x, lvl.t_shared, own]))
    if x_new is not None and len(x_new):
        m = len(x_new)
        parts.append(np.hstack([x_new, _tile(theta.shared, m), _tile(thk, m)]))
    return np.vstack(parts)


def field_delta_inputs(dataset, x_new=None) -> np.ndarray:
    """Design-variable inputs of the field rows plus any prediction rows."""
    if x_new is not None and len(x_new):
        return np.vstack([dataset.field.x, x_new])
    return np.array(dataset.field.x)


def emulator_covariance(dataset, theta, rho, lam) -> np.ndarray:
    """Base-emulator covariance over all joint rows: correlation / lam."""
    return correlation_matrix(emulator_inputs(dataset, theta), rho) / lam


def level_delta_covariance(dataset, theta, rho, lam, level: int = 2) -> np.ndarray:
    """Between-level discrepancy covariance over field + levels >= level."""
    return correlation_matrix(level_delta_inputs(dataset, theta, level), rho) / lam


def field_delta_covariance(dataset, rho, lam) -> np.ndarray:
    """Simulator-to-reality discrepancy covariance over the field rows."""
    return correlation_matrix(field_delta_inputs(dataset), rho) / lam


def factorize(sigma_train, start_jitter=JITTER_START, context=""):
    """Cholesky with escalating diagonal jitter.

    Tries start_jitter, then x10 steps up to JITTER_MAX; raises
    NumericalSingularityError if even the largest jitter fails.
    Returns (lower_factor, jitter_used).
    """
    n = sigma_train.shape[0]
    jitter = start_jitter
    while True:
        try:
            chol = scipy.linalg.cholesky(
                sigma_train + jitter * np.eye(n), lower=True, check_finite=False
            )
            return chol, jitter
        except scipy.linalg.LinAlgError:
            if jitter >= JITTER_MAX:
                raise NumericalSingularityError(
                    f"covariance not positive definite at jitter {jitter}"
                    + (f" ({context})" if context else "")
                ) from None
            jitter *= 10.0


@dataclass(frozen=True)
class CovarianceAssembly:
    """Joint covariance plus its Cholesky factor and block index map.

    ``sigma`` is the raw assembled matrix (no jitter); ``chol`` is the lower
    Cholesky factor of the training block with ``jitter`` added to its
    diagonal.  With prediction rows appended, the training block is
    sigma_11 and the new rows provide sigma_12/21/22.
    """

    sigma: np.ndarray
    chol: np.ndarray
    jitter: float
    n_train: int
    n_new: int
    block_rows: dict

    @property
    def n(self) -> int:
        return self.sigma.shape[0]

    @property
    def sigma_11(self) -> np.ndarray:
        return self.sigma[: self.n_train, : self.n_train]

    @property
    def sigma_12(self) -> np.ndarray:
        return self.sigma[: self.n_train, self.n_train :]

    @property
    def sigma_21(self) -> np.ndarray:
        return self.sigma[self.n_train :, : self.n_train]

    @property
    def sigma_22(self) -> np.ndarray:
        return self.sigma[self.n_train :, self.n_train :]

    @classmethod
    def from_matrix(cls, sigma, n_new: int = 0, start_jitter=JITTER_START):
        """Wrap an explicit covariance matrix (mainly for tests and oracles)."""
        sigma = np.asarray(sigma, dtype=float)
        n_train = sigma.shape[0] - n_new
        chol, jitter = factorize(sigma[:n_train, :n_train], start_jitter)
        return cls(
            sigma=sigma,
            chol=chol,
            jitter=jitter,
            n_train=n_train,
            n_new=n_new,
            block_rows={},
        )


def combine_blocks(
    dataset,
    R_emulator,
    R_deltas,
    R_field,
    precision,
    n_new: int = 0,
    noise_on_new: bool = False,
) -> np.ndarray:
    """Sum correlation blocks into the joint covariance (no jitter).

    R_emulator spans all rows, R_deltas[k-2] spans the prefix reached by
    discrepancy level k plus the new rows, R_field spans field plus new
    rows.  Observation noise always sits on the field diagonal; it goes on
    the new-row diagonal only when noise_on_new is set.
    """
    n_train = dataset.n_total
    n = n_train + n_new
    nf = dataset.n_field
    sigma = R_emulator / precision.emulator
    if sigma.shape != (n, n):
        raise DimensionError(f"emulator block is {sigma.shape}, expected {(n, n)}")
    for k in range(2, dataset.n_levels + 1):
        Rk = R_deltas[k - 2]
        prefix = dataset.delta_rows(k)
        lam = precision.deltas[k - 2]
        if n_new:
            idx = np.concatenate([np.arange(prefix), np.arange(n_train, n)])
            sigma[np.ix_(idx, idx)] += Rk / lam
        else:
            sigma[:prefix, :prefix] += Rk / lam
    if n_new:
        fidx = np.concatenate([np.arange(nf), np.arange(n_train, n)])
        sigma[np.ix_(fidx, fidx)] += R_field / precision.field_delta
    else:
        sigma[:nf, :nf] += R_field / precision.field_delta
    fdiag = np.arange(nf)
    sigma[fdiag, fdiag] += 1.0 / precision.noise
    if noise_on_new and n_new:
        ndiag = np.arange(n_train, n)
        sigma[ndiag, ndiag] += 1.0 / precision.noise
    return sigma


def joint_covariance(
    dataset,
    state,
    x_new=None,
    include_noise: bool = True,
    start_jitter=JITTER_START,
) -> CovarianceAssembly:
    """Assemble and factorize the joint covariance for any number of levels.

    Without prediction points this is the training covariance of the
    hierarchical model; with ``x_new`` the matrix gains one field-like row
    and column per point, whose diagonal carries observation noise only if
    ``include_noise`` is set.
    """
    theta = state.theta
    corr = state.correlation
    if len(theta.per_level) != dataset.n_levels:
        raise DimensionError(
            f"state has {len(theta.per_level)} levels, dataset has {dataset.n_levels}"
        )
    x_new = None if x_new is None else np.atleast_2d(np.asarray(x_new, dtype=float))
    n_new = 0 if x_new is None else x_new.shape[0]
    if n_new and x_new.shape[1] != dataset.p:
        raise DimensionError(f"x_new has {x_new.shape[1]} columns, expected {dataset.p}")

    R_emulator = correlation_matrix(emulator_inputs(dataset, theta, x_new), corr.emulator)
    R_deltas = [
        correlation_matrix(level_delta_inputs(dataset, theta, k, x_new), corr.deltas[k - 2])
        for k in range(2, dataset.n_levels + 1)
    ]
    R_field = correlation_matrix(field_delta_inputs(dataset, x_new), corr.field_delta)
    sigma = combine_blocks(
        dataset,
        R_emulator,
        R_deltas,
        R_field,
        state.precision,
        n_new=n_new,
        noise_on_new=include_noise,
    )

    n_train = dataset.n_total
    chol, jitter = factorize(
        sigma[:n_train, :n_train], start_jitter, context=f"n={n_train}"
    )
    block_rows = {name: sl for name, sl in dataset.block_slices().items()}
    if n_new:
        block_rows["new"] = slice(n_train, n_train + n_new)
    return CovarianceAssembly(
        sigma=sigma,
        chol=chol,
        jitter=jitter,
        n_train=n_train,
        n_new=n_new,
        block_rows=block_rows,
    )


def extend_for_prediction(dataset, state, x_new, include_noise: bool = True):
    """Joint covariance extended with prediction rows (field-like)."""
    return joint_covariance(dataset, state, x_new=x_new, include_noise=include_noise)
