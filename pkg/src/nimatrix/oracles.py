"""Analytic x0-predictors and densities.

Two oracle families stand in for a trained network:

- :class:`Dataset`: a finite atom set.  At time ``t`` the state
  ``x = c0 * x0 + c1 * eps`` induces an exact posterior over the atoms —
  a softmax of negative squared distances to ``mu = x / c0`` with
  bandwidth ``sigma = c1 / c0`` — whose mean is the ideal predictor.
- :class:`GaussianMixture`: isotropic components with conjugate Gaussian
  posteriors, giving a smooth predictor, an analytic marginal density,
  and therefore an analytic score for cross-checks.

All exponentials run in the log domain with max subtraction: at small
``sigma`` the squared distances reach the thousands and would underflow
otherwise.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, ValidationError
from .schedule import Schedule, mixing_coeffs

DATASET_MAGIC = b"NIDS1"


@dataclass(frozen=True)
class Dataset:
    atoms: np.ndarray = field(repr=False)  # (n, d)
    labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim != 2 or atoms.shape[0] < 1:
            raise ValidationError("atoms must be a non-empty (n, d) matrix")
        if not np.all(np.isfinite(atoms)):
            raise ValidationError("non-finite atom entry")
        object.__setattr__(self, "atoms", atoms)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (atoms.shape[0],):
                raise ValidationError("labels length must match atom count")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def subset(self, label) -> "Dataset":
        if self.labels is None:
            raise ParameterError("dataset has no labels")
        mask = self.labels == label
        if not mask.any():
            raise ParameterError(f"no atoms with label {label}")
        return Dataset(atoms=self.atoms[mask], labels=self.labels[mask])


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)       # (k, d)
    variances: np.ndarray = field(repr=False)   # (k,), isotropic

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if mu.ndim != 2:
            raise ValidationError("means must be a (k, d) matrix")
        k = mu.shape[0]
        if w.shape != (k,) or v.shape != (k,):
            raise ValidationError("weights/variances must have one entry "
                                  "per component")
        if np.any(w <= 0.0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValidationError("weights must be positive and sum to 1")
        if np.any(v <= 0.0):
            raise ValidationError("variances must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", v)

    @property
    def d(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class PosteriorParams:
    """The state-induced Gaussian likelihood on x0: N(mu, sigma^2 I)."""

    mu: np.ndarray
    sigma: float


def posterior_params(s: Schedule, t, x) -> PosteriorParams:
    c0, c1 = mixing_coeffs(s, t)
    if c0 <= 0.0:
        raise ParameterError(f"posterior undefined at c0 = {c0}")
    return PosteriorParams(mu=np.asarray(x, dtype=np.float64) / c0,
                           sigma=c1 / c0)


def _logsumexp(a, axis=-1, keepdims=False):
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def _log_weights_dataset(ds: Dataset, s: Schedule, t, x):
    """Unnormalized log posterior weights; x is (d,) or (b, d).

    Returns ``(log_w, degenerate)`` where log_w is normalized and
    degenerate flags the c0 = 0 uniform limit.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    c0, c1 = mixing_coeffs(s, t)
    if c0 == 0.0:
        log_w = np.full((xb.shape[0], ds.n), -np.log(ds.n))
        return (log_w[0] if single else log_w), True
    mu = xb / c0
    sigma = c1 / c0
    if sigma == 0.0:
        # one-hot at the nearest atom (lowest index on ties)
        d2 = _sqdist(mu, ds.atoms)
        log_w = np.full_like(d2, -np.inf)
        idx = np.argmin(d2, axis=1)
        log_w[np.arange(d2.shape[0]), idx] = 0.0
        return (log_w[0] if single else log_w), False
    d2 = _sqdist(mu, ds.atoms)
    logits = -d2 / (2.0 * sigma * sigma)
    log_w = logits - _logsumexp(logits, axis=1, keepdims=True)
    return (log_w[0] if single else log_w), False


def _sqdist(a, b):
    """Pairwise squared Euclidean distances, (m, d) x (n, d) -> (m, n)."""
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def posterior_weights(ds: Dataset, s: Schedule, t, x,
                      return_status: bool = False):
    """Posterior probabilities over the atoms given the state x at t."""
    log_w, degenerate = _log_weights_dataset(ds, s, t, x)
    w = np.exp(log_w)
    if return_status:
        return w, degenerate
    return w


def posterior_mean_dataset(ds: Dataset, s: Schedule, t, x):
    """Exact posterior mean E[x0 | x_t] over the atom set."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    w = posterior_weights(ds, s, t, x if not single else x[None, :])
    out = w @ ds.atoms
    return out[0] if single else out


def posterior_mean_gmm(g: GaussianMixture, s: Schedule, t, x):
    """Posterior mean under an isotropic Gaussian mixture prior.

    Each component posterior mean is the conjugate-Gaussian update
    ``m_k + c0 v_k / (c0^2 v_k + c1^2) (x - c0 m_k)``; components
    combine via log-domain responsibilities under the state marginal
    ``N(c0 m_k, (c0^2 v_k + c1^2) I)``.  Well defined whenever the
    state has any variance; at ``c0 = 0`` it reduces to the prior mean.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    c0, c1 = mixing_coeffs(s, t)
    v = g.variances
    tot = c0 * c0 * v + c1 * c1  # per-component marginal variance
    if np.any(tot == 0.0):
        if c0 == 0.0:
            raise ParameterError("posterior undefined: state has no "
                                 "signal and no noise")
        # c1 = 0 and v = 0: the state pins x0 = x / c0 exactly
        out = xb / c0
        return out[0] if single else out
    d = g.d
    d2 = _sqdist(xb, c0 * g.means)  # (b, k)
    log_r = (np.log(g.weights)[None, :] - 0.5 * d * np.log(tot)[None, :]
             - d2 / (2.0 * tot)[None, :])
    log_r = log_r - _logsumexp(log_r, axis=1, keepdims=True)
    r = np.exp(log_r)  # (b, k)
    # per-component posterior means, (b, k, d)
    gain = (c0 * v / tot)[None, :, None]
    comp = (g.means[None, :, :]
            + gain * (xb[:, None, :] - c0 * g.means[None, :, :]))
    out = np.sum(r[:, :, None] * comp, axis=1)
    return out[0] if single else out


def gmm_marginal_logdensity(g: GaussianMixture, s: Schedule, t, x) -> float:
    """log p(x_t): each component marginal is N(c0 m_k, (c0^2 v_k + c1^2) I)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    c0, c1 = mixing_coeffs(s, t)
    var = c0 * c0 * g.variances + c1 * c1
    d = g.d
    d2 = _sqdist(xb, c0 * g.means)
    log_p = (np.log(g.weights)[None, :]
             - 0.5 * d * (np.log(2.0 * np.pi) + np.log(var))[None, :]
             - d2 / (2.0 * var)[None, :])
    out = _logsumexp(log_p, axis=1)
    return float(out[0]) if single else out


def score_from_x0hat(s: Schedule, t, x, x0_hat):
    """Score of the marginal at x_t from the posterior-mean prediction:
    ``score = c0/c1^2 * x0_hat - 1/c1^2 * x``."""
    c0, c1 = mixing_coeffs(s, t)
    if c1 <= 0.0 or c0 <= 0.0:
        raise ParameterError(f"score undefined at (c0, c1) = ({c0}, {c1})")
    v = c1 * c1
    return (c0 / v) * np.asarray(x0_hat) - np.asarray(x) / v


@dataclass(frozen=True)
class Predictor:
    """Callable f(t, x) returning the oracle posterior mean."""

    source: object
    schedule: Schedule
    label: object = None

    def __post_init__(self):
        if isinstance(self.source, Dataset) and self.label is not None:
            object.__setattr__(self, "source", self.source.subset(self.label))

    @property
    def d(self) -> int:
        return self.source.d

    def __call__(self, t, x):
        if isinstance(self.source, Dataset):
            return posterior_mean_dataset(self.source, self.schedule, t, x)
        return posterior_mean_gmm(self.source, self.schedule, t, x)


def make_predictor(source, s: Schedule, label=None) -> Predictor:
    if not isinstance(source, (Dataset, GaussianMixture)):
        raise ParameterError("source must be a Dataset or GaussianMixture")
    return Predictor(source=source, schedule=s, label=label)


# ---------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------

def save_dataset(ds: Dataset, path) -> None:
    """Binary layout: magic, u32 n, u32 d (little endian), n*d f64 row-major
    atom block, then optionally n u32 labels."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", ds.n, ds.d))
        fh.write(ds.atoms.astype("<f8").tobytes())
        if ds.labels is not None:
            fh.write(ds.labels.astype("<u4").tobytes())


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != DATASET_MAGIC:
        raise FormatError("not a dataset file (bad magic)")
    if len(blob) < 13:
        raise FormatError("truncated dataset header")
    n, d = struct.unpack("<II", blob[5:13])
    need = 13 + 8 * n * d
    if len(blob) < need:
        raise FormatError(f"truncated atom block (need {need} bytes)")
    atoms = np.frombuffer(blob[13:need], dtype="<f8").reshape(n, d).copy()
    labels = None
    rest = blob[need:]
    if rest:
        if len(rest) != 4 * n:
            raise FormatError("trailing bytes are not a label block")
        labels = np.frombuffer(rest, dtype="<u4").astype(np.int64)
    return Dataset(atoms=atoms, labels=labels)


def load_dataset_csv(path) -> Dataset:
    atoms = np.loadtxt(path, delimiter=",", ndmin=2)
    return Dataset(atoms=atoms)


def load_mixture(path) -> GaussianMixture:
    """Mixture spec: JSON with weights, means, variances."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid mixture file: {exc.msg}",
                              row=exc.lineno, column=exc.colno) from exc
    try:
        return GaussianMixture(weights=np.asarray(cfg["weights"]),
                               means=np.asarray(cfg["means"]),
                               variances=np.asarray(cfg["variances"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed mixture spec: {exc}") from exc
