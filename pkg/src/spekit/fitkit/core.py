"""Weighted least-squares problems, fit results and Monte Carlo confidence intervals."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..constants import SCHEMA_VERSION
from ..errors import InsufficientSamples, UnstableBootstrap, ValidationError
from .lm import LMResult, levenberg_marquardt

MIN_MC_SAMPLES = 100
MAX_FAILED_FRACTION = 0.2


@dataclass
class FitProblem:
    """A model, its data and the noise model used both for weighting and resampling.

    ``noise``:
      * ``"poisson"``  y * count_scale are counts; weights 1/max(counts, 1)
      * ``"residual"`` bootstrap by resampling standardized residuals
      * ``"gaussian"`` known measurement sigma
    ``weight_mode`` (``"poisson"``, ``"relative"``, ``"uniform"``, ``"sigma"``)
    defaults to match ``noise``.

    With ``irls`` (default for Poisson weights) the data-based weights only
    seed the fit; it is then reweighted with ``1/model`` until the estimate
    stops moving. The fixed point solves the Poisson likelihood equations,
    which removes the low bias of ``1/counts`` weighting.
    """

    model: object
    x: np.ndarray
    y: np.ndarray
    noise: str = "poisson"
    count_scale: object = 1.0
    sigma: object = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    weight_mode: str | None = None
    max_iter: int = 200
    xtol: float = 1e-10
    canonicalize: object = None
    irls: bool | None = None
    max_irls: int = 30

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise ValidationError("x and y differ in shape")
        if self.noise not in ("poisson", "residual", "gaussian"):
            raise ValidationError(f"unknown noise model {self.noise!r}")
        if self.weight_mode is None:
            self.weight_mode = {"poisson": "poisson", "residual": "uniform",
                                "gaussian": "sigma"}[self.noise]
        if self.noise == "gaussian" and self.sigma is None:
            raise ValidationError("gaussian noise needs sigma")
        if self.irls is None:
            self.irls = self.weight_mode == "poisson"
        self.count_scale = np.broadcast_to(np.asarray(self.count_scale, dtype=float),
                                           self.y.shape)

    @property
    def n_params(self):
        return len(self.model.param_names)

    def weights(self, y):
        mode = self.weight_mode
        if mode == "poisson":
            counts = y * self.count_scale
            return self.count_scale**2 / np.maximum(counts, 1.0)
        if mode == "relative":
            return 1.0 / np.maximum(np.abs(y), 1e-300) ** 2
        if mode == "sigma":
            return np.broadcast_to(1.0 / np.asarray(self.sigma, dtype=float) ** 2, y.shape)
        return np.ones_like(y)

    def model_weights(self, p):
        mu = np.maximum(self.model(self.x, p) * self.count_scale, 1e-6)
        return self.count_scale**2 / mu

    def _lm(self, w, p0, y):
        sw = np.sqrt(w)
        model, x = self.model, self.x

        def fun(p):
            return sw * (model(x, p) - y)

        def jac(p):
            return sw[:, None] * model.jac(x, p)

        return levenberg_marquardt(fun, jac, p0, self.lower, self.upper,
                                   max_iter=self.max_iter, xtol=self.xtol)

    def solve(self, p0, y=None) -> LMResult:
        y = self.y if y is None else y
        lm = self._lm(self.weights(y), p0, y)
        if not self.irls:
            return lm
        for _ in range(self.max_irls):
            if not lm.converged:
                return lm
            w = self.model_weights(lm.x)
            start = float(np.sum(w * (self.model(self.x, lm.x) - y) ** 2))
            new = self._lm(w, lm.x, y)
            scale = np.maximum(np.abs(lm.x), 1e-12)
            moved = np.max(np.abs(new.x - lm.x) / scale)
            lm = new
            # Settled when the estimate stops moving or reweighting no longer
            # buys a meaningful cost decrease (flat directions).
            if moved <= 1e-9 or start - new.cost <= 1e-8 * start:
                return lm
        lm.converged = False
        lm.message = "reweighting did not settle"
        return lm

    def covariance(self, lm: LMResult, absolute_sigma=None):
        """Parameter covariance from the Jacobian at the optimum.

        Poisson and known-sigma weights are absolute; residual-noise fits are
        rescaled by the reduced chi-square.
        """
        if absolute_sigma is None:
            absolute_sigma = self.noise != "residual"
        J = lm.jac
        cov = np.linalg.pinv(J.T @ J)
        if not absolute_sigma:
            dof = max(self.y.size - self.n_params, 1)
            cov = cov * (lm.cost / dof)
        return cov

    def synthesize(self, p, rng, std_resid=None):
        """One synthetic dataset drawn from the fitted model under the noise model."""
        f = self.model(self.x, p)
        if self.noise == "poisson":
            mu = np.maximum(f * self.count_scale, 0.0)
            return rng.poisson(mu) / self.count_scale
        if self.noise == "gaussian":
            return f + rng.standard_normal(f.shape) * np.asarray(self.sigma, dtype=float)
        w = self.weights(self.y)
        e = rng.choice(std_resid, size=f.size, replace=True)
        return f + e / np.sqrt(w)

    def final_weights(self, p):
        return self.model_weights(p) if self.irls else self.weights(self.y)

    def standardized_residuals(self, p):
        w = self.final_weights(p)
        e = np.sqrt(w) * (self.y - self.model(self.x, p))
        n, k = e.size, self.n_params
        # Leverage-free inflation; keeps residual bootstraps from under-covering.
        if n > k:
            e = e * np.sqrt(n / (n - k))
        return e - e.mean()


@dataclass
class MCResult:
    ci95: dict
    samples: np.ndarray
    names: tuple
    n_samples: int
    n_failed: int


def mc_confidence(problem: FitProblem, point_estimate, n_samples=200, seed=0, derived=None,
                  ci_level=0.95) -> MCResult:
    """Parametric bootstrap: refit synthetic datasets drawn from the fitted model.

    Each replicate uses its own child of ``SeedSequence(seed)``, so results do
    not depend on evaluation order. Intervals are percentile intervals,
    widened where needed so that they always contain the point estimate.
    """
    n_samples = int(n_samples)
    if n_samples < MIN_MC_SAMPLES:
        raise InsufficientSamples(f"need at least {MIN_MC_SAMPLES} Monte Carlo samples")
    p_hat = np.asarray(point_estimate, dtype=float)
    derived = derived or {}
    names = tuple(problem.model.param_names) + tuple(derived)
    std_resid = problem.standardized_residuals(p_hat) if problem.noise == "residual" else None

    rows = []
    failed = 0
    for child in np.random.SeedSequence(seed).spawn(n_samples):
        rng = np.random.default_rng(child)
        y_star = problem.synthesize(p_hat, rng, std_resid)
        try:
            lm = problem.solve(p_hat, y=y_star)
        except (np.linalg.LinAlgError, FloatingPointError, ValueError):
            failed += 1
            continue
        if not lm.converged or not np.all(np.isfinite(lm.x)):
            failed += 1
            continue
        p = lm.x if problem.canonicalize is None else problem.canonicalize(lm.x)
        rows.append(np.concatenate((p, [fn(p) for fn in derived.values()])))
    if failed > MAX_FAILED_FRACTION * n_samples:
        raise UnstableBootstrap(f"{failed}/{n_samples} bootstrap refits failed")

    samples = np.array(rows)
    alpha = 100.0 * (1.0 - ci_level) / 2.0
    lo, hi = np.percentile(samples, [alpha, 100.0 - alpha], axis=0)
    est = np.concatenate((p_hat, [fn(p_hat) for fn in derived.values()]))
    lo = np.minimum(lo, est)
    hi = np.maximum(hi, est)
    ci = {n: (float(a), float(b)) for n, a, b in zip(names, lo, hi)}
    return MCResult(ci, samples, names, n_samples, failed)


@dataclass
class FitResult:
    model_id: str
    params: dict
    ci95: dict
    covariance: np.ndarray
    residual_norm: float
    n_points: int
    converged: bool
    n_mc_samples: int
    param_names: tuple = ()
    extras: dict = field(default_factory=dict)
    samples: np.ndarray | None = field(default=None, repr=False)

    def __getitem__(self, name):
        return self.params[name]

    def ci(self, name):
        return self.ci95.get(name, (float("nan"), float("nan")))

    def to_dict(self):
        def clean(v):
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: clean(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(x) for x in v]
            return v

        return {
            "schema_version": SCHEMA_VERSION,
            "model_id": self.model_id,
            "params": clean(self.params),
            "ci95": {k: [clean(a), clean(b)] for k, (a, b) in self.ci95.items()},
            "converged": bool(self.converged),
            "n_mc_samples": int(self.n_mc_samples),
            "covariance": clean(np.asarray(self.covariance)),
            "param_names": list(self.param_names),
            "residual_norm": float(self.residual_norm),
            "n_points": int(self.n_points),
            "extras": clean(self.extras),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), indent=kw.pop("indent", 2), sort_keys=True, **kw)

    @classmethod
    def from_dict(cls, d):
        return cls(d["model_id"], dict(d["params"]),
                   {k: tuple(v) for k, v in d["ci95"].items()},
                   np.asarray(d.get("covariance", [])), d.get("residual_norm", float("nan")),
                   d.get("n_points", 0), d["converged"], d["n_mc_samples"],
                   tuple(d.get("param_names", ())), dict(d.get("extras", {})))
