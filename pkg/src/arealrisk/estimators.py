"""Relative-risk estimators extracted from posterior draws.

Three estimators are supported. ``r_is`` comes straight from an IS fit as
exp(x'beta + phi). From a CG fit, ``r_cg_tilde`` rescales the incidence
draws by the fixed internally standardized denominator (n_i p_i / E_i), and
``r_cg`` divides each draw's incidences by that draw's own population-
weighted mean, so the population-weighted mean of r_cg is exactly 1 within
every draw.

Summaries are equal-tailed quantile intervals on the natural scale, with
linear interpolation between order statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import json

import numpy as np

from .model import Dataset, apply_link
from .sampler import PosteriorSamples

__all__ = [
    "RiskSummary",
    "risk_is",
    "risk_cg_tilde",
    "risk_cg_true",
    "incidence_draws",
    "summarize",
    "shrinkage_data",
    "write_summary_csv",
    "write_geojson_properties",
]

MIN_DRAWS = 100


@dataclass(frozen=True)
class RiskSummary:
    """Per-region posterior summaries of one relative-risk estimator."""

    estimator: str
    region_ids: tuple
    mean: np.ndarray
    median: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    exceedance: np.ndarray  # P(r > 1 | data)
    time: object = None

    @property
    def length(self) -> np.ndarray:
        return self.upper - self.lower


def _eta_draws(samples: PosteriorSamples, dataset: Dataset, t: int | None):
    beta = samples.beta  # (D, k)
    if dataset.is_dynamic:
        if t is None:
            raise ValueError("panel dataset requires a time index")
        eta = beta @ dataset.x[:, t, :].T + samples.phi
        eta = eta + samples.alpha[:, t][:, None]
    else:
        eta = beta @ dataset.x.T + samples.phi
    return eta


def incidence_draws(samples: PosteriorSamples, dataset: Dataset,
                    t: int | None = None) -> np.ndarray:
    """Per-draw incidence probabilities p from a CG fit, (draws, regions)."""
    if samples.spec.family != "cg":
        raise TypeError("incidence draws require a CG-family fit")
    return apply_link(samples.spec.link, _eta_draws(samples, dataset, t),
                      samples.spec.c0)


def risk_is(samples: PosteriorSamples, dataset: Dataset,
            t: int | None = None) -> np.ndarray:
    """Relative-risk draws exp(x'beta + phi (+ alpha_t)) from an IS fit."""
    if samples.spec.family != "is":
        raise TypeError("risk_is requires an IS-family fit")
    return np.exp(_eta_draws(samples, dataset, t))


def risk_cg_tilde(samples: PosteriorSamples, dataset: Dataset, E,
                  t: int | None = None) -> np.ndarray:
    """Risk draws n_i p_i / E_i: a fixed positive rescaling of the p draws."""
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0):
        raise ValueError("expected counts must be strictly positive")
    p = incidence_draws(samples, dataset, t)
    if dataset.is_dynamic:
        n_t = dataset.n[:, t]
        E_t = E[:, t] if E.ndim == 2 else E
    else:
        n_t, E_t = dataset.n, E
    return p * (n_t / E_t)[None, :]


def risk_cg_true(samples: PosteriorSamples, dataset: Dataset,
                 t: int | None = None) -> np.ndarray:
    """Risk draws p_i / pbar with pbar recomputed within each draw.

    pbar = sum_i n_i p_i / sum_i n_i, so every draw satisfies
    sum_i n_i r_i = sum_i n_i exactly.
    """
    p = incidence_draws(samples, dataset, t)
    n_t = dataset.n[:, t] if dataset.is_dynamic else dataset.n
    pbar = (p @ n_t) / n_t.sum()
    return p / pbar[:, None]


def summarize(risk: np.ndarray, region_ids, estimator: str,
              level: float = 0.90, time=None) -> RiskSummary:
    """Equal-tailed posterior summaries of a (draws, regions) risk matrix."""
    risk = np.asarray(risk, dtype=float)
    if risk.ndim != 2:
        raise ValueError("risk matrix must be (draws, regions)")
    if risk.shape[0] < MIN_DRAWS:
        raise ValueError(
            f"need at least {MIN_DRAWS} draws to summarize, got {risk.shape[0]}"
        )
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must be in (0, 1), got {level}")
    tail = (1.0 - level) / 2.0
    lower, med, upper = np.quantile(risk, [tail, 0.5, 1.0 - tail], axis=0)
    return RiskSummary(
        estimator=estimator,
        region_ids=tuple(region_ids),
        mean=risk.mean(axis=0),
        median=med,
        lower=lower,
        upper=upper,
        level=level,
        exceedance=(risk > 1.0).mean(axis=0),
        time=time,
    )


def shrinkage_data(summary: RiskSummary, raw) -> np.ndarray:
    """Pairs (raw MLE risk, smoothed posterior mean) per region.

    Returns an (I, 2) array ordered like ``summary.region_ids`` for
    shrinkage plotting by external tools.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.shape != summary.mean.shape:
        raise ValueError("raw risks not conformable with the summary")
    return np.column_stack([raw, summary.mean])


# ---------------------------------------------------------------------------
# artifact writers


def _fmt(v) -> str:
    return repr(float(v))


def write_summary_csv(summaries, path) -> None:
    """Write risk summaries as CSV.

    Header is ``region,time,estimator,mean,median,lo90,hi90,length,exceedance``
    (the time column is omitted when all summaries are static). The interval
    columns are named for the conventional 90% level regardless of the
    summaries' actual level, which is recorded by the fit metadata.
    """
    summaries = list(summaries)
    with_time = any(s.time is not None for s in summaries)
    cols = ["region"] + (["time"] if with_time else []) + [
        "estimator", "mean", "median", "lo90", "hi90", "length", "exceedance",
    ]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for s in summaries:
            for i, region in enumerate(s.region_ids):
                row = [region]
                if with_time:
                    row.append("" if s.time is None else str(s.time))
                row += [
                    s.estimator,
                    _fmt(s.mean[i]),
                    _fmt(s.median[i]),
                    _fmt(s.lower[i]),
                    _fmt(s.upper[i]),
                    _fmt(s.upper[i] - s.lower[i]),
                    _fmt(s.exceedance[i]),
                ]
                fh.write(",".join(row) + "\n")


def write_geojson_properties(summaries, path) -> None:
    """Write a per-region properties map for joining onto region geometries.

    The file maps region id -> estimator (-> time, for panel fits) -> the
    same fields as the summary CSV; render with any external choropleth
    tool by joining on the region id.
    """
    out: dict = {}
    for s in summaries:
        for i, region in enumerate(s.region_ids):
            fields = {
                "mean": float(s.mean[i]),
                "median": float(s.median[i]),
                "lo90": float(s.lower[i]),
                "hi90": float(s.upper[i]),
                "length": float(s.upper[i] - s.lower[i]),
                "exceedance": float(s.exceedance[i]),
            }
            slot = out.setdefault(region, {})
            if s.time is None:
                slot[s.estimator] = fields
            else:
                slot.setdefault(s.estimator, {})[str(s.time)] = fields
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")
