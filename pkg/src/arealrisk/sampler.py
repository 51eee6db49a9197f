"""Metropolis-within-Gibbs sampling for the IS and CG families.

One sweep updates, in order: every spatial effect (univariate random-walk
Metropolis, grouped by graph coloring so non-adjacent regions move
together), the regression coefficients (componentwise random walk with a
flat prior), the CAR precision (exact conjugate Gamma draw), and, for
dynamic fits, each temporal effect, the AR(1) coefficient, and the
innovation variance (exact inverse-gamma draw). Spatial effects are
recentered to sum to zero after each sweep, with the mean folded into the
intercept so the likelihood is untouched.

Proposal scales adapt during burn-in toward a target acceptance band and
freeze afterwards, preserving detailed balance for the retained draws.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .graph import AdjacencyGraph, car_pairwise_sum
from .model import (
    Dataset,
    ModelSpec,
    apply_link,
    internal_standardization,
    log_likelihood_cg,
    log_likelihood_is,
)

__all__ = [
    "SamplerConfig",
    "ChainState",
    "PosteriorSamples",
    "run_chain",
    "joint_log_posterior",
    "phi_log_target",
    "beta_log_target",
    "alpha_log_target",
    "ar1_log_prior",
    "tau_posterior_params",
    "omega_posterior_params",
    "adapt_scales",
    "write_draws_csv",
    "write_metadata_json",
]

logger = logging.getLogger(__name__)

# out-of-band windowed acceptance multiplies the proposal scale by these
SHRINK_FACTOR = 0.8
GROW_FACTOR = 1.25

# linear predictors above this would overflow exp() in the IS mean
_ETA_MAX = 700.0


@dataclass(frozen=True)
class SamplerConfig:
    """Chain length, seeding, and adaptation settings.

    Defaults give 5,000 burn-in sweeps and 10,000 retained draws (20,000
    post-burn-in sweeps thinned by 2).
    """

    n_iterations: int = 25_000
    burn_in: int = 5_000
    thin: int = 2
    seed: int = 0
    adapt_window: int = 250
    target_acceptance: tuple = (0.15, 0.40)
    adapt_only_during_burn_in: bool = True

    def __post_init__(self):
        if self.n_iterations <= 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("chain lengths must be positive (thin >= 1)")
        if self.burn_in >= self.n_iterations:
            raise ValueError("burn_in must be smaller than n_iterations")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be positive")
        lo, hi = self.target_acceptance
        if not (0.0 <= lo < hi <= 1.0):
            raise ValueError("target_acceptance must satisfy 0 <= lo < hi <= 1")

    @property
    def n_draws(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thin


@dataclass
class ChainState:
    """Mutable MCMC state: parameters plus per-block proposal bookkeeping."""

    beta: np.ndarray
    phi: np.ndarray
    tau: float
    alpha: np.ndarray | None = None
    rho: float | None = None
    omega: float | None = None
    proposal_scales: dict = field(default_factory=dict)
    acceptance_counts: dict = field(default_factory=dict)
    proposal_counts: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PosteriorSamples:
    """Thinned post-burn-in draws with fit metadata.

    Arrays are indexed (draw, parameter). ``acceptance`` holds post-burn-in
    acceptance rates per Metropolis block; ``proposal_scales`` the frozen
    scales. ``E`` is the expected-count array used by IS fits (None for CG).
    """

    spec: ModelSpec
    config: SamplerConfig
    region_ids: tuple
    times: tuple | None
    beta: np.ndarray
    phi: np.ndarray
    tau: np.ndarray
    alpha: np.ndarray | None
    rho: np.ndarray | None
    omega: np.ndarray | None
    acceptance: dict
    proposal_scales: dict
    E: np.ndarray | None
    n_nonfinite_events: int

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def n_regions(self) -> int:
        return self.phi.shape[1]


# ---------------------------------------------------------------------------
# log-target pieces shared by the sweep code and the consistency checks


def _poisson_terms(y, n, eta, spec: ModelSpec, E=None):
    """Per-region Poisson log-likelihood terms without the log(Y!) constant."""
    if spec.family == "cg":
        p = apply_link(spec.link, eta, spec.c0)
        mu = n * p
        return y * np.log(mu) - mu
    log_mu = np.log(E) + eta
    return y * log_mu - np.exp(np.minimum(log_mu, _ETA_MAX))


class _FitContext:
    """Precomputed arrays for one (dataset, graph, spec) fit."""

    def __init__(self, dataset: Dataset, graph: AdjacencyGraph, spec: ModelSpec,
                 E=None):
        if dataset.region_ids != graph.region_ids:
            if set(dataset.region_ids) != set(graph.region_ids):
                raise ValueError("dataset regions do not match the adjacency graph")
            dataset = dataset.reindex(graph.region_ids)
        if spec.is_dynamic != dataset.is_dynamic:
            raise ValueError(
                "temporal mode mismatch: spec is "
                f"{spec.temporal!r} but dataset is "
                f"{'panel' if dataset.is_dynamic else 'static'}"
            )
        if spec.is_dynamic and dataset.n_times < 2:
            raise ValueError("dynamic fits need at least two time points")
        if spec.family == "is" and E is None:
            E = internal_standardization(dataset)
        self.dataset = dataset
        self.graph = graph
        self.spec = spec
        self.E = None if E is None else np.asarray(E, dtype=float)
        self.y = dataset.y
        self.n = dataset.n
        self.x = dataset.x
        self.colors = graph.coloring()
        self.color_rows = [graph.adjacency[idx] for idx in self.colors]
        self.deg = graph.degrees.astype(float)
        self.intercept = dataset.intercept_column

    def xb(self, beta):
        return self.x @ beta  # (I,) static, (I, T) dynamic

    def region_loglik(self, idx, phi_vals, xb, alpha=None):
        """Likelihood terms of regions ``idx`` with spatial effects ``phi_vals``."""
        E = None if self.E is None else self.E[idx]
        if self.dataset.is_dynamic:
            eta = xb[idx] + phi_vals[:, None] + alpha[None, :]
            return _poisson_terms(self.y[idx], self.n[idx], eta,
                                        self.spec, E).sum(axis=1)
        eta = xb[idx] + phi_vals
        return _poisson_terms(self.y[idx], self.n[idx], eta, self.spec, E)

    def slice_loglik(self, t, beta_xb, phi, alpha_t):
        """Likelihood of time slice ``t`` (dynamic only)."""
        eta = beta_xb[:, t] + phi + alpha_t
        E = None if self.E is None else self.E[:, t]
        return float(
            _poisson_terms(self.y[:, t], self.n[:, t], eta, self.spec, E).sum()
        )

    def total_loglik(self, beta, phi, alpha=None):
        xb = self.xb(beta)
        if self.dataset.is_dynamic:
            eta = xb + phi[:, None] + alpha[None, :]
        else:
            eta = xb + phi
        return float(_poisson_terms(self.y, self.n, eta, self.spec,
                                          self.E).sum())


def phi_log_target(dataset, graph, spec, beta, phi, tau, i, value,
                   alpha=None, E=None) -> float:
    """Log full-conditional of one spatial effect, up to a constant.

    CAR conditional term plus region ``i``'s likelihood contribution with
    phi_i set to ``value``; all other parameters held at the given state.
    """
    ctx = _FitContext(dataset, graph, spec, E)
    phi = np.asarray(phi, dtype=float)
    nbrs = graph.neighbors(i)
    nbr_mean = float(phi[nbrs].mean())
    prior = -0.5 * tau * ctx.deg[i] * (value - nbr_mean) ** 2
    idx = np.array([i])
    lik = ctx.region_loglik(idx, np.array([value]), ctx.xb(np.asarray(beta, float)),
                            None if alpha is None else np.asarray(alpha, float))
    return float(prior + lik[0])


def beta_log_target(dataset, spec, beta, phi, alpha=None, E=None) -> float:
    """Log full-conditional of the regression coefficients (flat prior)."""
    if spec.family == "is":
        if E is None:
            E = internal_standardization(dataset)
        return log_likelihood_is(dataset, E, beta, phi, alpha)
    return log_likelihood_cg(dataset, beta, phi, spec.link, spec.c0, alpha)


def ar1_log_prior(alpha, rho, omega) -> float:
    """Log density of the AR(1) temporal effects given (rho, omega).

    The first effect gets the stationary N(0, omega/(1-rho^2)) distribution;
    later effects follow alpha_t = rho * alpha_{t-1} + N(0, omega).
    """
    alpha = np.asarray(alpha, dtype=float)
    if not -1.0 < rho < 1.0:
        return -np.inf
    if omega <= 0:
        return -np.inf
    T = alpha.size
    resid = alpha[1:] - rho * alpha[:-1]
    out = -0.5 * np.log(2.0 * np.pi * omega / (1.0 - rho**2))
    out -= (1.0 - rho**2) * alpha[0] ** 2 / (2.0 * omega)
    out += -0.5 * (T - 1) * np.log(2.0 * np.pi * omega)
    out -= float(resid @ resid) / (2.0 * omega)
    return float(out)


def alpha_log_target(dataset, spec, beta, phi, alpha, rho, omega, t, value,
                     E=None) -> float:
    """Log full-conditional of one temporal effect, up to a constant.

    AR(1) terms involving alpha_t plus the likelihood of time slice t.
    """
    alpha = np.asarray(alpha, dtype=float)
    T = alpha.size
    prior = 0.0
    if t == 0:
        prior -= (1.0 - rho**2) * value**2 / (2.0 * omega)
        if T > 1:
            prior -= (alpha[1] - rho * value) ** 2 / (2.0 * omega)
    else:
        prior -= (value - rho * alpha[t - 1]) ** 2 / (2.0 * omega)
        if t + 1 < T:
            prior -= (alpha[t + 1] - rho * value) ** 2 / (2.0 * omega)
    if spec.family == "is" and E is None:
        E = internal_standardization(dataset)
    eta = dataset.x[:, t, :] @ np.asarray(beta, float) + np.asarray(phi, float) + value
    E_t = None if E is None else np.asarray(E, float)[:, t]
    lik = _poisson_terms(dataset.y[:, t], dataset.n[:, t], eta, spec, E_t).sum()
    return float(prior + lik)


def tau_posterior_params(graph: AdjacencyGraph, phi, a: float, b: float):
    """(shape, rate) of the exact Gamma full conditional of the CAR precision."""
    shape = a + 0.5 * graph.n_regions
    rate = b + 0.5 * car_pairwise_sum(graph, phi)
    return shape, rate


def omega_posterior_params(alpha, rho: float):
    """(shape, scale) of the inverse-gamma full conditional of omega.

    Derived from the stationary-start AR(1) density and the omega^{-1}
    prior: shape T/2 and scale half the stationary-weighted residual sum.
    """
    alpha = np.asarray(alpha, dtype=float)
    T = alpha.size
    resid = alpha[1:] - rho * alpha[:-1]
    q = (1.0 - rho**2) * alpha[0] ** 2 + float(resid @ resid)
    return 0.5 * T, 0.5 * q


def joint_log_posterior(dataset, graph, spec, beta, phi, tau,
                        alpha=None, rho=None, omega=None, E=None) -> float:
    """Log joint posterior density up to the normalizing constant.

    Likelihood (constants retained) + CAR kernel + Gamma(a, b) prior on tau
    + flat prior on beta; dynamic fits add the AR(1) density of alpha and
    the omega^{-1} prior with a flat prior on rho over (-1, 1).
    """
    from .graph import car_log_kernel

    a, b = spec.tau_prior
    if spec.family == "is":
        if E is None:
            E = internal_standardization(dataset)
        ll = log_likelihood_is(dataset, E, beta, phi, alpha)
    else:
        ll = log_likelihood_cg(dataset, beta, phi, spec.link, spec.c0, alpha)
    out = ll + car_log_kernel(graph, phi, tau)
    out += a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(tau) - b * tau
    if spec.is_dynamic:
        if alpha is None or rho is None or omega is None:
            raise ValueError("dynamic joint posterior needs alpha, rho, omega")
        out += ar1_log_prior(alpha, rho, omega)
        out += -np.log(omega)  # pi(rho, omega) = omega^{-1} on (-1,1) x (0,inf)
    return float(out)


def adapt_scales(scales, accepted, proposed, target=(0.15, 0.40)):
    """Rescale proposal standard deviations from windowed acceptance rates.

    Below the band multiplies by 0.8; above it by 1.25; inside leaves the
    scale alone. Returns the updated array (in place).
    """
    lo, hi = target
    with np.errstate(invalid="ignore"):
        rate = np.where(proposed > 0, accepted / np.maximum(proposed, 1), np.nan)
    scales[rate < lo] *= SHRINK_FACTOR
    scales[rate > hi] *= GROW_FACTOR
    return scales


# ---------------------------------------------------------------------------
# the chain runner


class _ChainRunner:
    def __init__(self, dataset, graph, spec, config, E=None):
        self.ctx = _FitContext(dataset, graph, spec, E)
        data = self.ctx.dataset
        k = data.n_covariates
        if data.covariate_rank() < k:
            raise ValueError(
                "covariate matrix is rank deficient; drop redundant columns"
            )
        self.config = config
        self.spec = spec
        self.rng = np.random.default_rng(config.seed)
        self.I = data.n_regions
        self.T = data.n_times
        self.dynamic = spec.is_dynamic

        st = ChainState(
            beta=np.zeros(k),
            phi=np.zeros(self.I),
            tau=1.0,
        )
        st.proposal_scales = {
            "phi": np.full(self.I, 0.1),
            "beta": np.full(k, 0.1),
        }
        if self.dynamic:
            st.alpha = np.zeros(self.T)
            st.rho = 0.5
            st.omega = 0.1
            st.proposal_scales["alpha"] = np.full(self.T, 0.1)
            st.proposal_scales["rho"] = np.full(1, 0.1)
        for name, arr in st.proposal_scales.items():
            st.acceptance_counts[name] = np.zeros_like(arr)
            st.proposal_counts[name] = np.zeros_like(arr)
        self.state = st
        self.post_acc = {k2: np.zeros_like(v) for k2, v in st.acceptance_counts.items()}
        self.post_tries = {k2: np.zeros_like(v) for k2, v in st.acceptance_counts.items()}
        self.n_nonfinite = 0

    # -- individual updates -------------------------------------------------

    def _finite_or_reject(self, delta, block):
        bad = ~(delta < np.inf)  # catches NaN and +inf in one comparison
        if np.any(bad):
            self.n_nonfinite += int(np.count_nonzero(bad))
            logger.warning(
                "non-finite Metropolis target in block %r; proposal(s) rejected",
                block,
            )
            delta = np.where(bad, -np.inf, delta)
        return delta

    def update_phi_block(self):
        st = self.state
        ctx = self.ctx
        xb = ctx.xb(st.beta)
        scales = st.proposal_scales["phi"]
        tau = st.tau
        for rows, idx in zip(ctx.color_rows, ctx.colors):
            cur = st.phi[idx]
            prop = cur + scales[idx] * self.rng.standard_normal(idx.size)
            nbr_mean = (rows @ st.phi) / ctx.deg[idx]
            d_prior = -0.5 * tau * ctx.deg[idx] * (
                (prop - nbr_mean) ** 2 - (cur - nbr_mean) ** 2
            )
            d_lik = ctx.region_loglik(idx, prop, xb, st.alpha) - ctx.region_loglik(
                idx, cur, xb, st.alpha
            )
            delta = self._finite_or_reject(d_prior + d_lik, "phi")
            accept = np.log(self.rng.random(idx.size)) < delta
            st.phi[idx[accept]] = prop[accept]
            st.acceptance_counts["phi"][idx[accept]] += 1
            st.proposal_counts["phi"][idx] += 1
        # recenter: fold the mean into the intercept (likelihood invariant)
        shift = st.phi.mean()
        st.phi -= shift
        if ctx.intercept is not None:
            st.beta[ctx.intercept] += shift

    def update_beta(self):
        st = self.state
        ctx = self.ctx
        cur_ll = ctx.total_loglik(st.beta, st.phi, st.alpha)
        for j in range(st.beta.size):
            prop = st.beta.copy()
            prop[j] += st.proposal_scales["beta"][j] * self.rng.standard_normal()
            prop_ll = ctx.total_loglik(prop, st.phi, st.alpha)
            delta = float(self._finite_or_reject(np.array([prop_ll - cur_ll]),
                                                 "beta")[0])
            if np.log(self.rng.random()) < delta:
                st.beta = prop
                cur_ll = prop_ll
                st.acceptance_counts["beta"][j] += 1
            st.proposal_counts["beta"][j] += 1

    def update_tau(self):
        st = self.state
        a, b = self.spec.tau_prior
        shape, rate = tau_posterior_params(self.ctx.graph, st.phi, a, b)
        st.tau = float(self.rng.gamma(shape, 1.0 / rate))

    def update_alpha(self):
        st = self.state
        ctx = self.ctx
        xb = ctx.xb(st.beta)
        rho, omega = st.rho, st.omega
        T = self.T
        for t in range(T):
            cur = st.alpha[t]
            prop = cur + st.proposal_scales["alpha"][t] * self.rng.standard_normal()

            def prior_terms(v):
                out = 0.0
                if t == 0:
                    out -= (1.0 - rho**2) * v**2 / (2.0 * omega)
                    if T > 1:
                        out -= (st.alpha[1] - rho * v) ** 2 / (2.0 * omega)
                else:
                    out -= (v - rho * st.alpha[t - 1]) ** 2 / (2.0 * omega)
                    if t + 1 < T:
                        out -= (st.alpha[t + 1] - rho * v) ** 2 / (2.0 * omega)
                return out

            d_lik = ctx.slice_loglik(t, xb, st.phi, prop) - ctx.slice_loglik(
                t, xb, st.phi, cur
            )
            delta = float(
                self._finite_or_reject(
                    np.array([prior_terms(prop) - prior_terms(cur) + d_lik]), "alpha"
                )[0]
            )
            if np.log(self.rng.random()) < delta:
                st.alpha[t] = prop
                st.acceptance_counts["alpha"][t] += 1
            st.proposal_counts["alpha"][t] += 1

    def update_rho(self):
        st = self.state
        prop = st.rho + st.proposal_scales["rho"][0] * self.rng.standard_normal()
        st.proposal_counts["rho"][0] += 1
        if not -1.0 < prop < 1.0:
            return  # proposals outside the stationarity region are rejected
        delta = ar1_log_prior(st.alpha, prop, st.omega) - ar1_log_prior(
            st.alpha, st.rho, st.omega
        )
        if np.log(self.rng.random()) < delta:
            st.rho = float(prop)
            st.acceptance_counts["rho"][0] += 1

    def update_omega(self):
        st = self.state
        shape, scale = omega_posterior_params(st.alpha, st.rho)
        if scale <= 0.0:
            return  # all temporal effects still exactly zero; keep omega
        g = self.rng.gamma(shape, 1.0 / scale)
        if g > 0:
            st.omega = float(1.0 / g)

    def sweep(self):
        self.update_phi_block()
        self.update_beta()
        self.update_tau()
        if self.dynamic:
            self.update_alpha()
            self.update_rho()
            self.update_omega()

    def _accumulate_post(self):
        for name in self.post_acc:
            self.post_acc[name] += self.state.acceptance_counts[name]
            self.post_tries[name] += self.state.proposal_counts[name]

    def _reset_window(self):
        for name in self.state.acceptance_counts:
            self.state.acceptance_counts[name][:] = 0
            self.state.proposal_counts[name][:] = 0

    def run(self) -> PosteriorSamples:
        cfg = self.config
        st = self.state
        n_draws = cfg.n_draws
        k = st.beta.size
        out_beta = np.empty((n_draws, k))
        out_phi = np.empty((n_draws, self.I))
        out_tau = np.empty(n_draws)
        out_alpha = np.empty((n_draws, self.T)) if self.dynamic else None
        out_rho = np.empty(n_draws) if self.dynamic else None
        out_omega = np.empty(n_draws) if self.dynamic else None

        d = 0
        for it in range(1, cfg.n_iterations + 1):
            self.sweep()
            in_burn_in = it <= cfg.burn_in
            if not in_burn_in:
                self._accumulate_post()
            can_adapt = in_burn_in or not cfg.adapt_only_during_burn_in
            if can_adapt and it % cfg.adapt_window == 0:
                for name, scales in st.proposal_scales.items():
                    adapt_scales(
                        scales,
                        st.acceptance_counts[name],
                        st.proposal_counts[name],
                        cfg.target_acceptance,
                    )
                self._reset_window()
            elif not in_burn_in:
                self._reset_window()
            if not in_burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                if not (
                    np.isfinite(st.phi).all()
                    and np.isfinite(st.beta).all()
                    and np.isfinite(st.tau)
                ):
                    raise RuntimeError(
                        f"non-finite chain state at iteration {it}; "
                        f"beta={st.beta!r} tau={st.tau!r}"
                    )
                out_beta[d] = st.beta
                out_phi[d] = st.phi
                out_tau[d] = st.tau
                if self.dynamic:
                    out_alpha[d] = st.alpha
                    out_rho[d] = st.rho
                    out_omega[d] = st.omega
                d += 1

        acceptance = {}
        for name in self.post_acc:
            with np.errstate(invalid="ignore"):
                acceptance[name] = np.where(
                    self.post_tries[name] > 0,
                    self.post_acc[name] / np.maximum(self.post_tries[name], 1),
                    np.nan,
                )
        return PosteriorSamples(
            spec=self.spec,
            config=cfg,
            region_ids=self.ctx.dataset.region_ids,
            times=self.ctx.dataset.times,
            beta=out_beta,
            phi=out_phi,
            tau=out_tau,
            alpha=out_alpha,
            rho=out_rho,
            omega=out_omega,
            acceptance=acceptance,
            proposal_scales={k2: v.copy() for k2, v in st.proposal_scales.items()},
            E=self.ctx.E,
            n_nonfinite_events=self.n_nonfinite,
        )


def run_chain(dataset: Dataset, graph: AdjacencyGraph, spec: ModelSpec,
              config: SamplerConfig, E=None) -> PosteriorSamples:
    """Fit one model by MCMC and return thinned post-burn-in draws.

    Deterministic given (dataset, graph, spec, config): identical inputs
    and seed produce identical draws. For the IS family the expected counts
    are computed by internal standardization unless ``E`` is supplied.
    """
    return _ChainRunner(dataset, graph, spec, config, E).run()


# ---------------------------------------------------------------------------
# artifact writers


def _fmt(v) -> str:
    return repr(float(v))


def parameter_names(samples: PosteriorSamples) -> list:
    names = [f"beta[{j}]" for j in range(samples.beta.shape[1])]
    names += [f"phi[{r}]" for r in samples.region_ids]
    names += ["tau"]
    if samples.alpha is not None:
        names += [f"alpha[{t}]" for t in samples.times]
        names += ["rho", "omega"]
    return names


def write_draws_csv(samples: PosteriorSamples, path) -> None:
    """Dump all retained draws as ``draw,parameter,value`` rows."""
    cols = [samples.beta, samples.phi, samples.tau[:, None]]
    if samples.alpha is not None:
        cols += [samples.alpha, samples.rho[:, None], samples.omega[:, None]]
    mat = np.hstack(cols)
    names = parameter_names(samples)
    with open(path, "w", newline="") as fh:
        fh.write("draw,parameter,value\n")
        for d in range(mat.shape[0]):
            for name, v in zip(names, mat[d]):
                fh.write(f"{d},{name},{_fmt(v)}\n")


def write_metadata_json(samples: PosteriorSamples, path) -> None:
    """Write acceptance rates, final proposal scales, and config as JSON."""
    meta = {
        "family": samples.spec.family,
        "link": samples.spec.link,
        "temporal": samples.spec.temporal,
        "tau_prior": list(samples.spec.tau_prior),
        "n_draws": samples.n_draws,
        "n_iterations": samples.config.n_iterations,
        "burn_in": samples.config.burn_in,
        "thin": samples.config.thin,
        "seed": samples.config.seed,
        "acceptance_rates": {
            k: [float(v) for v in arr] for k, arr in samples.acceptance.items()
        },
        "proposal_scales": {
            k: [float(v) for v in arr] for k, arr in samples.proposal_scales.items()
        },
        "n_nonfinite_events": samples.n_nonfinite_events,
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
