"""Data containers, standardization, link functions, and Poisson log-likelihoods.

Two model families share the machinery here. The internally standardized
(IS) family models relative risk on the log scale against expected counts
computed from the pooled observed rate; the coherent generative (CG) family
models incidence directly through a choice of logit, complementary log-log,
or skewed-logit link. Both reduce to sums of independent Poisson log-pmfs,
kept with their normalizing constants so values are comparable across
families.
"""

from __future__ import annotations

from dataclasses import dataclass

import csv

import numpy as np
from scipy.special import expit, gammaln

__all__ = [
    "Dataset",
    "ModelSpec",
    "load_dataset",
    "internal_standardization",
    "apply_link",
    "log_likelihood_cg",
    "log_likelihood_is",
    "linear_predictor",
]

LINKS = ("logit", "cloglog", "skewed_logit")
FAMILIES = ("is", "cg")
TEMPORAL_MODES = ("static", "dynamic_ar1")

# probabilities are clamped away from {0,1} so Poisson means stay positive
PROB_EPS = 1e-12


@dataclass(frozen=True)
class Dataset:
    """Counts, populations, and covariates over regions (optionally x time).

    Static data carries 1-d ``y``/``n`` of length I and covariates ``x`` of
    shape (I, k). Panel data carries (I, T) counts/populations, covariates
    (I, T, k), and ordered time labels. Covariates always include an
    explicit intercept column (the loader prepends one).
    """

    region_ids: tuple
    y: np.ndarray
    n: np.ndarray
    x: np.ndarray
    times: tuple | None = None

    def __post_init__(self):
        ids = tuple(str(r) for r in self.region_ids)
        if len(set(ids)) != len(ids):
            raise ValueError("region ids must be unique")
        object.__setattr__(self, "region_ids", ids)
        y = np.asarray(self.y, dtype=np.int64)
        n = np.asarray(self.n, dtype=float)
        x = np.asarray(self.x, dtype=float)
        I = len(ids)
        if self.times is not None:
            T = len(self.times)
            object.__setattr__(self, "times", tuple(self.times))
            if y.shape != (I, T) or n.shape != (I, T):
                raise ValueError(
                    f"panel y/n must have shape ({I},{T}); got {y.shape}, {n.shape}"
                )
            if x.shape[:2] != (I, T) or x.ndim != 3:
                raise ValueError(f"panel covariates must be (I,T,k); got {x.shape}")
        else:
            if y.shape != (I,) or n.shape != (I,):
                raise ValueError(
                    f"y/n must have shape ({I},); got {y.shape}, {n.shape}"
                )
            if x.ndim != 2 or x.shape[0] != I:
                raise ValueError(f"covariates must be (I,k); got {x.shape}")
        if np.any(y < 0):
            raise ValueError("counts must be nonnegative")
        if np.any(n <= 0) or not np.all(np.isfinite(n)):
            raise ValueError("populations must be strictly positive and finite")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariates must be finite")
        for arr in (y, n, x):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "x", x)

    @property
    def n_regions(self) -> int:
        return len(self.region_ids)

    @property
    def n_times(self) -> int | None:
        return None if self.times is None else len(self.times)

    @property
    def is_dynamic(self) -> bool:
        return self.times is not None

    @property
    def n_covariates(self) -> int:
        return self.x.shape[-1]

    @property
    def intercept_column(self) -> int | None:
        """Index of the first all-ones covariate column, if any."""
        flat = self.x.reshape(-1, self.n_covariates)
        for j in range(self.n_covariates):
            if np.all(flat[:, j] == 1.0):
                return j
        return None

    def covariate_rank(self) -> int:
        return int(np.linalg.matrix_rank(self.x.reshape(-1, self.n_covariates)))

    def reindex(self, region_ids) -> "Dataset":
        """Reorder rows to match ``region_ids`` (must be the same set)."""
        ids = tuple(str(r) for r in region_ids)
        if set(ids) != set(self.region_ids):
            raise ValueError("region id sets differ; cannot reindex")
        if ids == self.region_ids:
            return self
        pos = {r: i for i, r in enumerate(self.region_ids)}
        order = [pos[r] for r in ids]
        return Dataset(ids, self.y[order], self.n[order], self.x[order], self.times)

    def time_slice(self, t: int) -> "Dataset":
        """Static dataset for panel slice ``t``."""
        if not self.is_dynamic:
            raise ValueError("time_slice requires a panel dataset")
        return Dataset(self.region_ids, self.y[:, t], self.n[:, t], self.x[:, t, :])

    def time_prefix(self, k: int) -> "Dataset":
        """Panel restricted to the first ``k`` time slices."""
        if not self.is_dynamic:
            raise ValueError("time_prefix requires a panel dataset")
        if not 2 <= k <= self.n_times:
            raise ValueError(f"prefix length must be in [2, {self.n_times}], got {k}")
        return Dataset(self.region_ids, self.y[:, :k], self.n[:, :k],
                       self.x[:, :k, :], self.times[:k])


@dataclass(frozen=True)
class ModelSpec:
    """Model family, link, temporal mode, and prior hyperparameters.

    The link applies only to the CG family; the IS family models log
    relative risk directly. ``tau_prior`` is the (shape, rate) of the Gamma
    prior on the CAR precision.
    """

    family: str
    link: str | None = None
    c0: float | None = None
    temporal: str = "static"
    tau_prior: tuple = (1.0, 1.0)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.temporal not in TEMPORAL_MODES:
            raise ValueError(
                f"temporal must be one of {TEMPORAL_MODES}, got {self.temporal!r}"
            )
        if self.family == "cg":
            link = self.link if self.link is not None else "logit"
            if link not in LINKS:
                raise ValueError(f"link must be one of {LINKS}, got {link!r}")
            object.__setattr__(self, "link", link)
            if link == "skewed_logit":
                if self.c0 is None or not self.c0 > 0:
                    raise ValueError("skewed_logit requires c0 > 0")
        else:
            if self.link is not None:
                raise ValueError("the IS family uses the log link; leave link unset")
        a, b = self.tau_prior
        if not (a > 0 and b > 0):
            raise ValueError(f"tau_prior must be positive, got {self.tau_prior}")
        object.__setattr__(self, "tau_prior", (float(a), float(b)))

    @property
    def is_dynamic(self) -> bool:
        return self.temporal == "dynamic_ar1"


def internal_standardization(dataset: Dataset) -> np.ndarray:
    """Expected counts from the pooled observed rate, per time slice.

    E_i = n_i * (sum_i Y_i / sum_i n_i); for panel data each time slice is
    standardized on its own. Within every slice sum(E) == sum(Y) exactly.
    """
    y, n = dataset.y, dataset.n
    if dataset.is_dynamic:
        totals = y.sum(axis=0).astype(float)
        if np.any(totals <= 0):
            t_bad = dataset.times[int(np.nonzero(totals <= 0)[0][0])]
            raise ValueError(
                f"all counts are zero at time {t_bad!r}; the pooled rate degenerates"
            )
        return n * (totals / n.sum(axis=0))
    total = float(y.sum())
    if total <= 0:
        raise ValueError("all counts are zero; the pooled rate degenerates")
    return n * (total / n.sum())


def apply_link(link: str, eta, c0: float | None = None) -> np.ndarray:
    """Map a linear predictor to an incidence probability in (0, 1).

    logit: 1/(1+e^-eta); cloglog: 1-exp(-e^eta);
    skewed_logit: c0*e^eta/(1+c0*e^eta). Results are clamped to
    [PROB_EPS, 1-PROB_EPS] so downstream logs stay finite.
    """
    eta = np.asarray(eta, dtype=float)
    if link == "logit":
        p = expit(eta)
    elif link == "cloglog":
        p = -np.expm1(-np.exp(np.minimum(eta, 700.0)))
    elif link == "skewed_logit":
        if c0 is None or not c0 > 0:
            raise ValueError("skewed_logit requires c0 > 0")
        p = expit(eta + np.log(c0))
    else:
        raise ValueError(f"unknown link {link!r}")
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _eta(dataset: Dataset, beta, phi, alpha=None) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if dataset.is_dynamic:
        eta = dataset.x @ beta + phi[:, None]
        if alpha is not None:
            eta = eta + np.asarray(alpha, dtype=float)[None, :]
        return eta
    eta = dataset.x @ beta + phi
    if alpha is not None:
        raise ValueError("alpha supplied for a static dataset")
    return eta


def log_likelihood_cg(
    dataset: Dataset, beta, phi, link: str, c0: float | None = None, alpha=None
) -> float:
    """Poisson log-likelihood of the generative incidence model.

    Y ~ Poisson(n * p) with link(p) = x'beta + phi (+ alpha_t in panels).
    Constants (log Y!) are retained.
    """
    p = apply_link(link, _eta(dataset, beta, phi, alpha), c0)
    mu = dataset.n * p
    return float(np.sum(dataset.y * np.log(mu) - mu - gammaln(dataset.y + 1.0)))


def log_likelihood_is(dataset: Dataset, E, beta, phi, alpha=None) -> float:
    """Poisson log-likelihood of the internally standardized model.

    Y ~ Poisson(E * r) with log(r) = x'beta + phi (+ alpha_t in panels);
    E is treated as fixed. Constants are retained.
    """
    E = np.asarray(E, dtype=float)
    if E.shape != dataset.y.shape:
        raise ValueError(f"E has shape {E.shape}, expected {dataset.y.shape}")
    if np.any(E <= 0):
        raise ValueError("expected counts must be strictly positive")
    eta = _eta(dataset, beta, phi, alpha)
    log_mu = np.log(E) + eta
    return float(
        np.sum(dataset.y * log_mu - np.exp(log_mu) - gammaln(dataset.y + 1.0))
    )


def linear_predictor(dataset: Dataset, beta, phi, alpha, i: int, t: int | None = None):
    """x_i'beta + phi_i (+ alpha_t for panel data)."""
    beta = np.asarray(beta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if dataset.is_dynamic:
        if t is None:
            raise ValueError("panel dataset requires a time index")
        out = float(dataset.x[i, t] @ beta + phi[i])
        if alpha is not None:
            out += float(np.asarray(alpha)[t])
        return out
    if alpha is not None:
        raise ValueError("alpha supplied for a static dataset")
    return float(dataset.x[i] @ beta + phi[i])


def _coerce_time(value: str):
    try:
        return int(value)
    except ValueError:
        try:
            return float(value)
        except ValueError:
            return value


def load_dataset(path) -> Dataset:
    """Load a dataset CSV with header ``region,year(optional),y,n,x1,...``.

    A missing ``year`` column gives a static dataset. Panel files must be
    complete (every region at every time, each pair exactly once). An
    intercept column is prepended to any covariates found.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [c.strip().lower() for c in next(reader)]
        rows = [row for row in reader if row and any(c.strip() for c in row)]

    has_year = "year" in header
    expected = ["region"] + (["year"] if has_year else []) + ["y", "n"]
    if header[: len(expected)] != expected:
        raise ValueError(
            f"{path}: header must start with {','.join(expected)}; got {header}"
        )
    x_names = header[len(expected) :]
    k = len(x_names)

    records = []
    for row in rows:
        row = [c.strip() for c in row]
        if len(row) != len(header):
            raise ValueError(f"{path}: row has {len(row)} fields, expected {len(header)}")
        region = row[0]
        off = 1
        year = _coerce_time(row[off]) if has_year else None
        off += int(has_year)
        y = int(row[off])
        n = float(row[off + 1])
        xs = [float(v) for v in row[off + 2 :]]
        records.append((region, year, y, n, xs))

    region_order: list[str] = []
    seen = set()
    for region, *_ in records:
        if region not in seen:
            seen.add(region)
            region_order.append(region)
    I = len(region_order)
    ridx = {r: i for i, r in enumerate(region_order)}

    if not has_year:
        if len(records) != I:
            raise ValueError(f"{path}: duplicate region rows in static dataset")
        y = np.zeros(I, dtype=np.int64)
        n = np.zeros(I)
        x = np.ones((I, 1 + k))
        for region, _, yi, ni, xs in records:
            i = ridx[region]
            y[i], n[i] = yi, ni
            x[i, 1:] = xs
        return Dataset(region_order, y, n, x)

    times = sorted({rec[1] for rec in records})
    T = len(times)
    tidx = {t: j for j, t in enumerate(times)}
    y = np.zeros((I, T), dtype=np.int64)
    n = np.zeros((I, T))
    x = np.ones((I, T, 1 + k))
    filled = np.zeros((I, T), dtype=bool)
    for region, year, yi, ni, xs in records:
        i, j = ridx[region], tidx[year]
        if filled[i, j]:
            raise ValueError(f"{path}: duplicate row for region {region!r}, year {year!r}")
        filled[i, j] = True
        y[i, j], n[i, j] = yi, ni
        x[i, j, 1:] = xs
    if not filled.all():
        i, j = np.argwhere(~filled)[0]
        raise ValueError(
            f"{path}: incomplete panel; missing region {region_order[i]!r} "
            f"at year {times[j]!r}"
        )
    return Dataset(region_order, y, n, x, times)
