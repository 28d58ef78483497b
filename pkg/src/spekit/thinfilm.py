"""Planar multilayer optics at normal incidence and PSI optical-path-length curves.

For laterally uniform films a coupled-wave solver with a single Fourier
order reduces to the characteristic-matrix (transfer-matrix) method, which
is what ``reflect`` implements. Indices follow ``n + ik`` with ``k >= 0``.

OPL convention: reflection mode, double pass. A flake of thickness ``t``
on the bare stack is compared with the bare stack under ``t`` of ambient
medium, so both reflections refer to the same top plane and

    OPL(t) = lambda / (4 pi) * unwrap(arg r_flake(t) - arg r_bare(t))

which is 0 at ``t = 0`` and for a flake index equal to the ambient index.
The phase is unwrapped along a thickness grid no coarser than
``lambda / (20 n)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._io import text_out
from .constants import (EXCITATION_WAVELENGTH, HBN_INDEX_GREEN, SCHEMA_VERSION,
                        SI_INDEX_522, SIO2_CAP_THICKNESS, SIO2_INDEX_522)
from .errors import OutOfRange, RangeOrder, UncalibratableRegion, UnwrapStep, ValidationError
from .fitkit.core import FitProblem, mc_confidence
from .fitkit.models import Model


@dataclass(frozen=True)
class LayerStack:
    """Layers listed from the ambient side down to the substrate."""

    layers: tuple = ()  # ((index, thickness_m), ...)
    ambient: complex = 1.0
    substrate: complex = SI_INDEX_522
    wavelength: float = EXCITATION_WAVELENGTH

    def __post_init__(self):
        layers = tuple((complex(n), float(t)) for n, t in self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "ambient", complex(self.ambient))
        object.__setattr__(self, "substrate", complex(self.substrate))
        if not self.wavelength > 0:
            raise ValidationError("wavelength must be positive")
        for n, t in layers:
            if not t >= 0:
                raise ValidationError("layer thickness must be >= 0")
            if n.imag < 0:
                raise ValidationError("Im(n) must be >= 0 (passive media)")
            if n == 0:
                raise ValidationError("index must be nonzero")
        for n in (self.ambient, self.substrate):
            if n.imag < 0 or n == 0:
                raise ValidationError("ambient/substrate index must be nonzero with Im(n) >= 0")

    @property
    def lossless(self):
        return all(n.imag == 0 for n, _ in self.layers) and self.substrate.imag == 0 \
            and self.ambient.imag == 0

    def with_top_layer(self, index, thickness):
        return replace(self, layers=((index, thickness),) + self.layers)

    def to_dict(self):
        def c(z):
            return [z.real, z.imag]
        return {"schema_version": SCHEMA_VERSION,
                "layers": [{"index": c(n), "thickness_m": t} for n, t in self.layers],
                "ambient": c(self.ambient), "substrate": c(self.substrate),
                "wavelength_m": self.wavelength}

    @classmethod
    def from_dict(cls, d):
        def z(v):
            return complex(*v) if isinstance(v, (list, tuple)) else complex(v)
        return cls(tuple((z(l["index"]), l["thickness_m"]) for l in d.get("layers", [])),
                   z(d.get("ambient", 1.0)), z(d["substrate"]),
                   float(d.get("wavelength_m", EXCITATION_WAVELENGTH)))


def default_substrate_stack(wavelength=EXCITATION_WAVELENGTH, oxide_thickness=SIO2_CAP_THICKNESS):
    """Air / SiO2 cap / Si, the usual flake carrier."""
    return LayerStack(((SIO2_INDEX_522, oxide_thickness),), 1.0, SI_INDEX_522, wavelength)


def _char_matrix(stack: LayerStack):
    k0 = 2.0 * math.pi / stack.wavelength
    m = np.eye(2, dtype=complex)
    for n, t in stack.layers:
        d = k0 * n * t
        c, s = np.cos(d), np.sin(d)
        m = m @ np.array([[c, -1j * s / n], [-1j * n * s, c]])
    return m


def _bc(stack):
    m = _char_matrix(stack)
    b, c = m @ np.array([1.0, stack.substrate])
    return b, c


def reflect(stack: LayerStack) -> complex:
    """Complex amplitude reflectance, ambient side."""
    b, c = _bc(stack)
    n0 = stack.ambient
    return complex((n0 * b - c) / (n0 * b + c))


def transmit(stack: LayerStack) -> complex:
    b, c = _bc(stack)
    n0 = stack.ambient
    return complex(2.0 * n0 / (n0 * b + c))


def transmittance(stack: LayerStack) -> float:
    """Power transmittance into the substrate, ``Re(n_s)/Re(n_0) |t|^2``."""
    return float(stack.substrate.real / stack.ambient.real * abs(transmit(stack)) ** 2)


def reflectance(stack: LayerStack) -> float:
    return abs(reflect(stack)) ** 2


def reflect_linear_solve(stack: LayerStack) -> complex:
    """Reference solution from the interface conditions as one linear system.

    Unknowns: ``r``, forward/backward amplitudes in every layer (phase
    referenced to the layer top) and the transmitted amplitude. At each
    interface E and n(E+ - E-) are continuous.
    """
    k0 = 2.0 * math.pi / stack.wavelength
    nl = len(stack.layers)
    size = 2 * nl + 2
    a = np.zeros((size, size), dtype=complex)
    rhs = np.zeros(size, dtype=complex)
    media = [stack.ambient] + [n for n, _ in stack.layers] + [stack.substrate]

    # column index of forward/backward amplitude of medium j (ambient: only r)
    def fwd(j):
        return 2 * j - 1

    def bwd(j):
        return 2 * j

    row = 0
    for j in range(nl + 1):  # interface between medium j and j+1
        n_up, n_dn = media[j], media[j + 1]
        if j == 0:
            ef, eb = 1.0, 1.0
        else:
            d = k0 * n_up * stack.layers[j - 1][1]
            ef, eb = np.exp(1j * d), np.exp(-1j * d)
        # E continuity
        if j == 0:
            rhs[row] -= ef
            a[row, 0] += eb
        else:
            a[row, fwd(j)] += ef
            a[row, bwd(j)] += eb
        if j + 1 <= nl:
            a[row, fwd(j + 1)] -= 1.0
            a[row, bwd(j + 1)] -= 1.0
        else:
            a[row, size - 1] -= 1.0
        row += 1
        # H continuity
        if j == 0:
            rhs[row] -= n_up * ef
            a[row, 0] += -n_up * eb
        else:
            a[row, fwd(j)] += n_up * ef
            a[row, bwd(j)] += -n_up * eb
        if j + 1 <= nl:
            a[row, fwd(j + 1)] -= n_dn
            a[row, bwd(j + 1)] += n_dn
        else:
            a[row, size - 1] -= n_dn
        row += 1
    sol = np.linalg.solve(a, rhs)
    return complex(sol[0])


# ---------------------------------------------------------------------------
# vectorized sweeps over the top-layer thickness
# ---------------------------------------------------------------------------

def _reflect_top_sweep(bare: LayerStack, index, thicknesses):
    """r of ``bare`` with a top layer (index, t) for every t in ``thicknesses``."""
    t = np.asarray(thicknesses, dtype=float)
    b, c = _bc(bare)
    k0 = 2.0 * math.pi / bare.wavelength
    n = complex(index)
    d = k0 * n * t
    cs, sn = np.cos(d), np.sin(d)
    bb = cs * b - 1j * sn / n * c
    cc = -1j * n * sn * b + cs * c
    n0 = bare.ambient
    return (n0 * bb - cc) / (n0 * bb + cc)


def max_grid_step(index, wavelength):
    """Thickness step below which the OPL phase is resolved (``lambda/(20 n)``)."""
    return wavelength / (20.0 * max(abs(complex(index)), 1.0))


def _opl_on_grid(bare: LayerStack, index, grid, check=True):
    """Unwrapped OPL on an ascending grid starting at zero thickness."""
    phi_f = np.angle(_reflect_top_sweep(bare, index, grid))
    phi_b = np.angle(_reflect_top_sweep(bare, bare.ambient, grid))
    raw = phi_f - phi_b
    if check and grid.size > 1:
        wrapped = np.angle(np.exp(1j * np.diff(raw)))
        if np.max(np.abs(wrapped)) > 0.9 * math.pi:
            raise UnwrapStep("phase changes by more than 0.9 pi between grid points; "
                             "refine the thickness grid")
    phase = np.unwrap(raw)
    phase = phase - 2.0 * math.pi * np.round(phase[0] / (2.0 * math.pi))
    return bare.wavelength / (4.0 * math.pi) * phase


def opl_at(bare: LayerStack, index, thicknesses):
    """OPL (m) of a top layer ``index`` for each thickness, unwrapped from t = 0."""
    t = np.atleast_1d(np.asarray(thicknesses, dtype=float))
    if np.any(t < 0):
        raise ValidationError("thickness must be >= 0")
    tmax = float(t.max()) if t.size else 0.0
    step = max_grid_step(index, bare.wavelength)
    n_fine = int(math.ceil(tmax / step)) + 1
    fine = np.union1d(np.linspace(0.0, tmax, max(n_fine, 2)), t)
    opl = _opl_on_grid(bare, index, fine)
    return opl[np.searchsorted(fine, t)]


def psi_opl(flake_stack: LayerStack, bare_stack: LayerStack) -> float:
    """OPL (m) of the top layer of ``flake_stack`` relative to ``bare_stack``."""
    if not flake_stack.layers:
        raise ValidationError("flake stack has no top layer")
    if (flake_stack.layers[1:] != bare_stack.layers
            or flake_stack.substrate != bare_stack.substrate
            or flake_stack.ambient != bare_stack.ambient
            or flake_stack.wavelength != bare_stack.wavelength):
        raise ValidationError("flake stack must be the bare stack plus one top layer")
    n, t = flake_stack.layers[0]
    return float(opl_at(bare_stack, n, [t])[0])


# ---------------------------------------------------------------------------
# curves and inversion
# ---------------------------------------------------------------------------

@dataclass
class OplCurve:
    thickness_grid: np.ndarray
    opl_values: np.ndarray
    wavelength: float
    stack_id: str
    injectivity_limit: float
    index: complex = HBN_INDEX_GREEN
    stack: LayerStack | None = None

    @property
    def injectivity_opl(self):
        """OPL at the injectivity limit, where the curve first folds back."""
        return float(np.interp(self.injectivity_limit, self.thickness_grid, self.opl_values))

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "stack_id": self.stack_id,
                "wavelength_m": self.wavelength, "index": [self.index.real, self.index.imag],
                "injectivity_limit_m": self.injectivity_limit,
                "injectivity_opl_m": self.injectivity_opl,
                "thickness_m": self.thickness_grid.tolist(), "opl_m": self.opl_values.tolist(),
                "stack": self.stack.to_dict() if self.stack is not None else None}

    @classmethod
    def from_dict(cls, d):
        stack = LayerStack.from_dict(d["stack"]) if d.get("stack") else None
        return cls(np.asarray(d["thickness_m"], dtype=float), np.asarray(d["opl_m"], dtype=float),
                   float(d["wavelength_m"]), d.get("stack_id", ""),
                   float(d["injectivity_limit_m"]), complex(*d.get("index", [HBN_INDEX_GREEN, 0])),
                   stack)


def injectivity_limit(grid, values):
    """Largest grid thickness below which ``values`` are strictly monotone."""
    d = np.diff(values)
    if d.size == 0:
        return float(grid[-1])
    sign = np.sign(d[0])
    if sign == 0:
        return float(grid[0])
    bad = np.nonzero(np.sign(d) != sign)[0]
    return float(grid[bad[0]] if bad.size else grid[-1])


def _stack_id(stack: LayerStack, index):
    parts = [f"{complex(index).real:.4g}/flake"]
    parts += [f"{n.real:.4g}{'+%.3gi' % n.imag if n.imag else ''}@{t * 1e9:.4g}nm"
              for n, t in stack.layers]
    parts.append(f"{stack.substrate.real:.4g}"
                 + (f"+{stack.substrate.imag:.3g}i" if stack.substrate.imag else ""))
    return "|".join(parts) + f";{stack.wavelength * 1e9:.4g}nm"


def build_opl_curve(bare: LayerStack, thickness_range, index=HBN_INDEX_GREEN, step=None):
    """Tabulate OPL over ``thickness_range = (start, stop)`` in metres.

    The default step is the smaller of 0.1 nm and ``lambda/(20 n)``.
    """
    start, stop = map(float, thickness_range)
    if not stop > start:
        raise RangeOrder("thickness range must be ascending")
    if start < 0:
        raise ValidationError("thickness must be >= 0")
    limit_step = max_grid_step(index, bare.wavelength)
    step = min(0.1e-9, limit_step) if step is None else float(step)
    if not 0 < step <= limit_step:
        raise UnwrapStep(f"grid step must be in (0, {limit_step:.3g}] m")
    n = int(math.ceil((stop - start) / step)) + 1
    grid = np.linspace(start, stop, n)
    values = opl_at(bare, index, grid)
    return OplCurve(grid, values, bare.wavelength, _stack_id(bare, index),
                    injectivity_limit(grid, values), complex(index), bare)


@dataclass(frozen=True)
class Ambiguous:
    candidates: tuple

    def __len__(self):
        return len(self.candidates)


def invert_opl(curve: OplCurve, opl):
    """Thickness for a measured OPL, or :class:`Ambiguous` with every candidate."""
    opl = float(opl)
    v, g = curve.opl_values, curve.thickness_grid
    if opl < v.min() or opl > v.max():
        raise OutOfRange(f"OPL {opl:.4g} m outside the curve range "
                         f"[{v.min():.4g}, {v.max():.4g}] m")
    cands = []
    exact = np.nonzero(v == opl)[0]
    cands.extend(g[exact].tolist())
    lo, hi = v[:-1], v[1:]
    seg = np.nonzero(((lo < opl) & (opl < hi)) | ((hi < opl) & (opl < lo)))[0]
    for i in seg:
        f = (opl - lo[i]) / (hi[i] - lo[i])
        cands.append(float(g[i] + f * (g[i + 1] - g[i])))
    cands = sorted(cands)
    # Collapse duplicates from flat segments.
    step = float(np.min(np.diff(g))) if g.size > 1 else 0.0
    merged = []
    for c in cands:
        if not merged or c - merged[-1] > 0.5 * step:
            merged.append(c)
    if len(merged) == 1 and merged[0] <= curve.injectivity_limit:
        return merged[0]
    return Ambiguous(tuple(merged))


# ---------------------------------------------------------------------------
# refractive-index calibration
# ---------------------------------------------------------------------------

class _OplIndexModel(Model):
    model_id = "psi_opl_index"
    param_names = ("index",)

    def __init__(self, bare):
        self.bare = bare

    def __call__(self, x, p):
        return opl_at(self.bare, float(p[0]), x * 1e-9) * 1e9


@dataclass
class IndexCalibration:
    index: float
    ci95: tuple
    n_points: int
    n_used: int
    residual_norm: float
    opl_sigma: float
    unstable: bool
    n_mc_samples: int
    excluded: list = field(default_factory=list)

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "model_id": "psi_opl_index",
                "params": {"index": self.index}, "ci95": {"index": list(self.ci95)},
                "converged": True, "n_mc_samples": self.n_mc_samples,
                "n_points": self.n_points, "n_used": self.n_used,
                "residual_norm": self.residual_norm, "opl_sigma_m": self.opl_sigma,
                "unstable": self.unstable, "excluded_thickness_m": self.excluded}


DEFAULT_SINGLE_POINT_SIGMA = 2e-9


def fit_index(calibration, bare: LayerStack, *, index_bounds=(1.0, 3.0), opl_sigma=None,
              n_mc=200, seed=0) -> IndexCalibration:
    """Effective top-layer index from (AFM thickness, measured OPL) pairs, in metres.

    Coarse grid search then Levenberg-Marquardt on the 1-D least-squares
    problem; CI from the parametric bootstrap with Gaussian OPL noise of
    ``opl_sigma`` (estimated from the residuals when omitted). Points
    thicker than the injectivity limit at the fitted index are dropped.
    A single point is accepted but flagged ``unstable``.
    """
    cal = np.asarray(calibration, dtype=float).reshape(-1, 2)
    if cal.shape[0] == 0:
        raise ValidationError("no calibration points")
    if np.any(cal[:, 0] < 0):
        raise ValidationError("thickness must be >= 0")
    t_nm, y_nm = cal[:, 0] * 1e9, cal[:, 1] * 1e9
    lo_n, hi_n = map(float, index_bounds)
    model = _OplIndexModel(bare)

    def solve(mask):
        grid = np.linspace(lo_n, hi_n, 201)
        sse = [np.sum((model(t_nm[mask], [n]) - y_nm[mask]) ** 2) for n in grid]
        n0 = grid[int(np.argmin(sse))]
        prob = FitProblem(model, t_nm[mask], y_nm[mask], "gaussian", sigma=1.0,
                          lower=np.array([lo_n]), upper=np.array([hi_n]))
        return prob, prob.solve(np.array([n0]))

    mask = np.ones(len(t_nm), dtype=bool)
    prob, lm = solve(mask)
    tmax = float(t_nm.max()) * 1e-9
    for _ in range(3):
        limit = build_opl_curve(bare, (0.0, max(tmax, 1e-9)), lm.x[0],
                                step=min(0.5e-9, max_grid_step(lm.x[0], bare.wavelength))
                                ).injectivity_limit
        new_mask = t_nm * 1e-9 <= limit
        if not np.any(new_mask):
            raise UncalibratableRegion("every calibration point lies beyond the injectivity "
                                       "limit of the OPL curve")
        if np.array_equal(new_mask, mask):
            break
        mask = new_mask
        prob, lm = solve(mask)

    n_used = int(mask.sum())
    resid = prob.model(prob.x, lm.x) - prob.y
    unstable = n_used < 2
    if opl_sigma is not None:
        sigma_nm = float(opl_sigma) * 1e9
    elif n_used >= 3:
        sigma_nm = float(np.sqrt(np.sum(resid**2) / (n_used - 1)))
    else:
        sigma_nm = DEFAULT_SINGLE_POINT_SIGMA * 1e9
    sigma_nm = max(sigma_nm, 1e-9)
    boot = FitProblem(model, prob.x, prob.y, "gaussian", sigma=sigma_nm,
                      lower=np.array([lo_n]), upper=np.array([hi_n]))
    mc = mc_confidence(boot, lm.x, n_mc, seed)
    ci = mc.ci95["index"]
    # At a bound the interval is truncated and not trustworthy.
    if ci[0] <= lo_n + 1e-9 or ci[1] >= hi_n - 1e-9:
        unstable = True
    return IndexCalibration(float(lm.x[0]), ci, len(t_nm), n_used,
                            float(np.sqrt(np.sum(resid**2))) * 1e-9, sigma_nm * 1e-9,
                            bool(unstable), mc.n_samples,
                            (t_nm[~mask] * 1e-9).tolist())


# ---------------------------------------------------------------------------
# I/O
# ---------------------------------------------------------------------------

def write_curve_csv(curve: OplCurve, path):
    with text_out(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["thickness_nm", "opl_nm"])
        for t, o in zip(curve.thickness_grid * 1e9, curve.opl_values * 1e9):
            w.writerow([f"{t:.6f}", f"{o:.6f}"])


def write_curve_json(curve: OplCurve, path):
    with open(path, "w") as fh:
        json.dump(curve.to_dict(), fh, indent=2, sort_keys=True)


def read_curve_json(path) -> OplCurve:
    with open(path) as fh:
        return OplCurve.from_dict(json.load(fh))


def read_stack_json(path) -> LayerStack:
    with open(path) as fh:
        return LayerStack.from_dict(json.load(fh))
