"""Hamiltonian Monte Carlo with dual-averaging step size, and convergence diagnostics."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .domain import Domain, EventSet, ModelKind
from .likelihood import TRIGGER_NAMES, Background, ParamState, Posterior, PriorSpec
from .simulate import stream

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    """The sampler could not make progress (e.g. every warmup transition diverged)."""


@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings.

    ``n_samples`` counts every iteration of a chain, warmup included, so the
    number of retained draws per chain is ``n_samples - n_warmup``.
    """

    n_chains: int = 3
    n_samples: int = 1500
    n_warmup: int = 500
    n_leapfrog: int = 32
    leapfrog_jitter: float = 0.2
    target_accept: float = 0.8
    seed: int = 0
    adapt_mass: bool = False
    init_jitter: float = 0.1
    step_size: float | None = None
    max_delta_h: float = 1000.0

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 <= self.n_warmup < self.n_samples:
            raise ValueError("need 0 <= n_warmup < n_samples")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if not 0.0 <= self.leapfrog_jitter < 1.0:
            raise ValueError("leapfrog_jitter must lie in [0, 1)")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_warmup == 0 and self.step_size is None:
            raise ValueError("without warmup a fixed step_size is required")

    @property
    def n_draws(self) -> int:
        return self.n_samples - self.n_warmup


@dataclass
class ChainResult:
    draws: np.ndarray
    logp: np.ndarray
    accept_rate: float
    step_size: float
    inv_mass: np.ndarray
    n_divergent: int
    n_divergent_warmup: int


@dataclass
class PosteriorSamples:
    """Post-warmup draws of every chain, in unconstrained coordinates.

    ``draws`` has shape ``(n_chains, n_draws, dim)``.
    """

    draws: np.ndarray
    names: list[str]
    kind: ModelKind
    chains: list[ChainResult] = field(default_factory=list)
    m_t: int = 0
    m_s: int = 0

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def n_divergent(self) -> int:
        return sum(c.n_divergent for c in self.chains)

    @property
    def accept_rate(self) -> float:
        return float(np.mean([c.accept_rate for c in self.chains])) if self.chains else float("nan")

    def param(self, name: str) -> np.ndarray:
        """Constrained-scale draws of one parameter, shape ``(n_chains, n_draws)``."""
        if name in TRIGGER_NAMES:
            return np.exp(self.draws[..., self.names.index(f"log_{name}")])
        return self.draws[..., self.names.index(name)]

    def scalar_names(self) -> list[str]:
        out = ["a0"]
        if self.kind.has_trigger:
            out += list(TRIGGER_NAMES)
        return out

    def block(self, which: str) -> np.ndarray:
        """GP coefficients ``z_t`` or ``z_s`` with chains combined: ``(n_total, m)``."""
        start = 1 + (4 if self.kind.has_trigger else 0)
        if which == "t":
            sl = slice(start, start + self.m_t)
        elif which == "s":
            sl = slice(start + self.m_t, start + self.m_t + self.m_s)
        else:
            raise ValueError("block must be 't' or 's'")
        return self.draws[..., sl].reshape(-1, sl.stop - sl.start)

    def combined(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def states(self) -> list[ParamState]:
        """Every retained draw as a :class:`ParamState`, chains concatenated."""
        from .domain import TriggerParams

        out = []
        start = 1 + (4 if self.kind.has_trigger else 0)
        for u in self.combined():
            trig = TriggerParams(*np.exp(u[1:5]).tolist()) if self.kind.has_trigger else None
            z_t = u[start:start + self.m_t] if self.kind.has_gp else None
            z_s = u[start + self.m_t:start + self.m_t + self.m_s] if self.kind.has_gp else None
            out.append(ParamState(float(u[0]), trig, z_t, z_s))
        return out


def _leapfrog(x, p, g, eps, inv_mass, n_steps, value_and_grad):
    p = p + 0.5 * eps * g
    for i in range(n_steps):
        x = x + eps * inv_mass * p
        lp, g = value_and_grad(x)
        if not np.isfinite(lp):
            return x, p, lp, g
        if i != n_steps - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    return x, p, lp, g


def _initial_step(x, lp, g, inv_mass, value_and_grad, rng):
    """Double or halve the step until one leapfrog step has acceptance near 1/2."""
    eps = 0.1
    p = rng.standard_normal(len(x)) / np.sqrt(inv_mass)
    h0 = lp - 0.5 * np.sum(inv_mass * p * p)

    def log_ratio(e):
        x1, p1, lp1, _ = _leapfrog(x, p, g, e, inv_mass, 1, value_and_grad)
        if not np.isfinite(lp1):
            return -np.inf
        return lp1 - 0.5 * np.sum(inv_mass * p1 * p1) - h0

    r = log_ratio(eps)
    direction = 1.0 if r > math.log(0.5) else -1.0
    for _ in range(100):
        if direction > 0 and not r > math.log(0.5):
            break
        if direction < 0 and not r < math.log(0.5):
            break
        eps *= 2.0**direction
        r = log_ratio(eps)
    return eps if direction < 0 else eps / 2.0


def _adaptation_windows(n_warmup):
    """Stan-style slow-window end points for diagonal metric adaptation."""
    if n_warmup < 20:
        return []
    init, term, base = 75, 50, 25
    if init + term + base > n_warmup:
        init = int(0.15 * n_warmup)
        term = int(0.1 * n_warmup)
        base = n_warmup - init - term
    ends = []
    start, size = init, base
    last = n_warmup - term
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append((start, end))
        start, size = end, 2 * size
    return ends


class _DualAveraging:
    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * eps0)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.hbar = 0.0
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.hbar = (1 - w) * self.hbar + w * (self.target - accept)
        log_eps = self.mu - math.sqrt(m) / self.gamma * self.hbar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def run_chain(value_and_grad, x0, cfg: McmcConfig, rng: np.random.Generator) -> ChainResult:
    x = np.array(x0, dtype=float)
    dim = len(x)
    lp, g = value_and_grad(x)
    if not np.isfinite(lp):
        raise SamplerError("log density is not finite at the initial point")
    inv_mass = np.ones(dim)
    if cfg.step_size is not None:
        eps = cfg.step_size
    else:
        eps = _initial_step(x, lp, g, inv_mass, value_and_grad, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    windows = _adaptation_windows(cfg.n_warmup) if cfg.adapt_mass else []
    window_ends = {end: start for start, end in windows}
    warm_hist = np.empty((cfg.n_warmup, dim))

    n_keep = cfg.n_draws
    draws = np.empty((n_keep, dim))
    lps = np.empty(n_keep)
    lo_l = max(1, int(round(cfg.n_leapfrog * (1 - cfg.leapfrog_jitter))))
    hi_l = max(lo_l, int(round(cfg.n_leapfrog * (1 + cfg.leapfrog_jitter))))
    n_acc = 0.0
    div = div_warm = 0
    for it in range(cfg.n_samples):
        warm = it < cfg.n_warmup
        n_steps = int(rng.integers(lo_l, hi_l + 1))
        p0 = rng.standard_normal(dim) / np.sqrt(inv_mass)
        h0 = -lp + 0.5 * np.sum(inv_mass * p0 * p0)
        with np.errstate(over="ignore", invalid="ignore"):
            x1, p1, lp1, g1 = _leapfrog(x, p0, g, eps, inv_mass, n_steps, value_and_grad)
            h1 = -lp1 + 0.5 * np.sum(inv_mass * p1 * p1) if np.isfinite(lp1) else np.inf
        dh = h1 - h0
        if not np.isfinite(dh) or abs(dh) > cfg.max_delta_h:
            accept_prob = 0.0
            if warm:
                div_warm += 1
            else:
                div += 1
        else:
            accept_prob = min(1.0, math.exp(-dh))
            if rng.random() < accept_prob:
                x, lp, g = x1, lp1, g1
        if warm:
            if cfg.step_size is None:
                eps = da.update(accept_prob)
            warm_hist[it] = x
            end = it + 1
            if end in window_ends:
                start = window_ends[end]
                w = warm_hist[start:end]
                n = len(w)
                var = w.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                if cfg.step_size is None:
                    eps = _initial_step(x, lp, g, inv_mass, value_and_grad, rng)
                    da = _DualAveraging(eps, cfg.target_accept)
            if it == cfg.n_warmup - 1:
                if div_warm == cfg.n_warmup:
                    raise SamplerError("every warmup transition diverged; check the model or initialization")
                if cfg.step_size is None:
                    eps = da.final
        else:
            k = it - cfg.n_warmup
            draws[k] = x
            lps[k] = lp
            n_acc += accept_prob
    return ChainResult(
        draws, lps, n_acc / max(n_keep, 1), eps, inv_mass, div, div_warm
    )


def hmc_sample(logp, grad, cfg: McmcConfig, init, names=None, kind=ModelKind.COX_HAWKES,
               m_t: int = 0, m_s: int = 0, threads: int = 1) -> PosteriorSamples:
    """Run ``cfg.n_chains`` independent HMC chains.

    ``logp`` and ``grad`` take an unconstrained vector.  ``init`` is either a
    starting vector (jittered per chain by ``cfg.init_jitter``) or a callable
    ``init(chain_index, rng)`` returning one.  With ``threads > 1`` chains run
    concurrently; each owns its random stream, so results do not depend on
    the thread count.
    """
    if grad is None:
        value_and_grad = logp
    else:
        def value_and_grad(x):
            return logp(x), grad(x)

    def one(c):
        rng = stream(cfg.seed, 7, c)
        if callable(init):
            x0 = np.asarray(init(c, rng), dtype=float)
        else:
            x0 = np.asarray(init, dtype=float)
            if cfg.init_jitter > 0:
                x0 = x0 + rng.uniform(-cfg.init_jitter, cfg.init_jitter, size=x0.shape)
        return run_chain(value_and_grad, x0, cfg, rng)

    if threads > 1 and cfg.n_chains > 1:
        with ThreadPoolExecutor(min(threads, cfg.n_chains)) as pool:
            results = list(pool.map(one, range(cfg.n_chains)))
    else:
        results = [one(c) for c in range(cfg.n_chains)]
    for c, r in enumerate(results):
        log.info("chain %d: accept %.3f, step %.4g, divergent %d", c, r.accept_rate, r.step_size, r.n_divergent)
    draws = np.stack([r.draws for r in results])
    dim = draws.shape[-1]
    return PosteriorSamples(draws, list(names) if names else [f"x{i}" for i in range(dim)],
                            ModelKind(kind), results, m_t, m_s)


def fit(events: EventSet, kind, priors: PriorSpec, background: Background | None,
        cfg: McmcConfig, domain: Domain, threads: int = 1) -> PosteriorSamples:
    """Sample the posterior of ``kind`` given ``events`` on ``domain``."""
    post = Posterior(events, domain, ModelKind(kind), priors, background)
    samples = hmc_sample(post.value_and_grad, None, cfg, post.initial_point(), post.names(),
                         post.kind, post.m_t, post.m_s, threads)
    return samples


# --- diagnostics -----------------------------------------------------------

def _as_chains(samples, param):
    if isinstance(samples, PosteriorSamples):
        return samples.param(param)
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    return arr


def r_hat(samples, param: str | None = None) -> float:
    """Split-chain potential scale reduction factor.

    ``samples`` is a :class:`PosteriorSamples` (with ``param``) or an array of
    shape ``(n_chains, n_draws)``.
    """
    x = _as_chains(samples, param)
    n_chains, n = x.shape
    if n_chains < 2:
        raise ValueError("R-hat needs at least 2 chains")
    if n < 50:
        raise ValueError("R-hat needs at least 50 draws per chain")
    half = n // 2
    split = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    m, n = split.shape
    means = split.mean(axis=1)
    W = split.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W == 0:
        return 1.0 if B == 0 else math.inf
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def _autocov(x):
    n = len(x)
    f = np.fft.rfft(x - x.mean(), n=2 * n)
    ac = np.fft.irfft(f * np.conj(f))[:n] / n
    return ac


def ess(samples, param: str | None = None) -> float:
    """Effective sample size across chains (Geyer initial monotone sequence)."""
    x = _as_chains(samples, param)
    m, n = x.shape
    if n < 4:
        return float(m * n)
    acov = np.stack([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    var_plus = W * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float(m * n)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum of consecutive pairs, truncated at first negative and forced monotone
    pairs = []
    prev = math.inf
    for t in range(0, n - 1, 2):
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        s = min(s, prev)
        pairs.append(s)
        prev = s
    tau = -1.0 + 2.0 * sum(pairs) if pairs else 1.0
    return float(m * n / max(tau, 1.0 / math.log10(max(m * n, 10))))


def posterior_field(samples, basis, grid=None, quantiles=(0.05, 0.95), block: str = "t"):
    """Per-cell posterior mean and quantile bands of a GP field.

    ``samples`` is a :class:`PosteriorSamples` (``block`` selects ``"t"`` or
    ``"s"``) or an array of coefficient draws with shape ``(n_draws, m)``.
    Returns a dict with ``mean`` and one array per requested quantile.
    """
    z = samples.block(block) if isinstance(samples, PosteriorSamples) else np.atleast_2d(samples)
    if len(z) == 0:
        raise ValueError("no posterior draws")
    B = basis.basis if hasattr(basis, "basis") else np.asarray(basis)
    fields = z @ B.T
    out = {"mean": fields.mean(axis=0)}
    for q in quantiles:
        out[q] = np.quantile(fields, q, axis=0)
    return out


def summarize(samples: PosteriorSamples, quantiles=(0.05, 0.5, 0.95)) -> dict:
    """Means, sds, quantiles, R-hat and ESS of the scalar parameters."""
    out = {}
    for name in samples.scalar_names():
        x = samples.param(name)
        flat = x.reshape(-1)
        entry = {
            "mean": float(flat.mean()),
            "sd": float(flat.std(ddof=1)) if flat.size > 1 else 0.0,
        }
        for q in quantiles:
            entry[f"q{int(round(q * 100)):02d}"] = float(np.quantile(flat, q))
        try:
            entry["r_hat"] = r_hat(x)
        except ValueError:
            entry["r_hat"] = None
        entry["ess"] = ess(x)
        out[name] = entry
    return out
