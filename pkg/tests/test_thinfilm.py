import cmath
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spekit.errors import OutOfRange, RangeOrder, UncalibratableRegion, UnwrapStep, \
    ValidationError
from spekit.thinfilm import (Ambiguous, LayerStack, OplCurve, build_opl_curve,
                             default_substrate_stack, fit_index, injectivity_limit, invert_opl,
                             max_grid_step, opl_at, psi_opl, read_curve_json, read_stack_json,
                             reflect, reflect_linear_solve, reflectance, transmittance,
                             write_curve_csv, write_curve_json)

NM = 1e-9
LAM = 522 * NM
BARE = default_substrate_stack()


def rouard(stack: LayerStack) -> complex:
    """Independent oracle: recursive Airy summation from the substrate upwards."""
    media = [stack.ambient] + [n for n, _ in stack.layers] + [stack.substrate]
    k0 = 2 * math.pi / stack.wavelength
    r = (media[-2] - media[-1]) / (media[-2] + media[-1])
    for j in range(len(stack.layers), 0, -1):
        n, t = stack.layers[j - 1]
        ph = cmath.exp(2j * k0 * n * t)
        r_top = (media[j - 1] - n) / (media[j - 1] + n)
        r = (r_top + r * ph) / (1 + r_top * r * ph)
    return r


def random_stack(rng, lossless):
    layers = []
    for _ in range(rng.integers(0, 6)):
        n = complex(rng.uniform(1.0, 4.0), 0.0 if lossless else rng.uniform(0.0, 0.5))
        layers.append((n, rng.uniform(0, 400) * NM))
    sub = complex(rng.uniform(1.0, 4.5), 0.0 if lossless else rng.uniform(0.0, 0.5))
    amb = rng.uniform(1.0, 1.6)
    return LayerStack(tuple(layers), amb, sub, rng.uniform(300, 1000) * NM)


def test_fresnel_single_interface():
    s = LayerStack((), 1.0, 1.5, LAM)
    assert reflect(s) == pytest.approx((1 - 1.5) / (1 + 1.5), abs=1e-15)
    s = LayerStack((), 1.33, complex(4.21, 0.039), LAM)
    assert abs(reflect(s) - (1.33 - s.substrate) / (1.33 + s.substrate)) < 1e-15


@pytest.mark.parametrize("n,ns", [(1.38, 1.52), (2.0, 4.0), (1.849, 1.4613), (3.0, 1.2)])
def test_quarter_wave_closed_form(n, ns):
    s = LayerStack(((n, LAM / (4 * n)),), 1.0, ns, LAM)
    expected = (ns - n * n) / (ns + n * n)
    assert abs(reflect(s) - expected) < 1e-12
    if n * n == pytest.approx(ns):
        assert abs(reflect(s)) < 1e-12


def test_device_stack_matches_linear_solve_oracle():
    s = BARE.with_top_layer(1.849, 30 * NM)
    assert abs(reflect(s) - reflect_linear_solve(s)) < 1e-10
    assert abs(reflect(s) - rouard(s)) < 1e-10


def test_random_stacks_match_both_oracles():
    rng = np.random.default_rng(0)
    for i in range(100):
        s = random_stack(rng, lossless=i % 2 == 0)
        r = reflect(s)
        assert abs(r - reflect_linear_solve(s)) < 1e-10
        assert abs(r - rouard(s)) < 1e-10


def test_energy_conservation_on_lossless_stacks():
    rng = np.random.default_rng(1)
    for _ in range(100):
        s = random_stack(rng, lossless=True)
        assert s.lossless
        assert abs(reflectance(s) + transmittance(s) - 1.0) < 1e-10


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_passive_stacks_never_amplify(seed):
    s = random_stack(np.random.default_rng(seed), lossless=False)
    assert abs(reflect(s)) <= 1.0 + 1e-12
    assert reflectance(s) + transmittance(s) <= 1.0 + 1e-10


@settings(max_examples=100)
@given(st.floats(1.0, 3.5), st.floats(0.0, 0.3), st.floats(0, 300), st.floats(0, 300))
def test_split_layer_is_associative(n, k, t1, t2):
    idx = complex(n, k)
    one = BARE.with_top_layer(idx, (t1 + t2) * NM)
    two = BARE.with_top_layer(idx, t2 * NM).with_top_layer(idx, t1 * NM)
    assert abs(reflect(one) - reflect(two)) < 1e-12


def test_stack_validation_and_json(tmp_path):
    with pytest.raises(ValidationError):
        LayerStack(((1.5, -1e-9),))
    with pytest.raises(ValidationError):
        LayerStack(((complex(1.5, -0.1), 1e-9),))
    with pytest.raises(ValidationError):
        LayerStack((), wavelength=0.0)
    p = tmp_path / "stack.json"
    p.write_text(json.dumps(BARE.to_dict()))
    assert read_stack_json(p) == BARE


# ---------------------------------------------------------------------------
# OPL
# ---------------------------------------------------------------------------

def test_opl_zero_cases():
    assert psi_opl(BARE.with_top_layer(1.849, 0.0), BARE) == 0.0
    for t in (0.0, 7 * NM, 55 * NM, 300 * NM):
        assert abs(psi_opl(BARE.with_top_layer(1.0, t), BARE)) < 1e-20


def test_psi_opl_requires_matching_stacks():
    with pytest.raises(ValidationError):
        psi_opl(default_substrate_stack(oxide_thickness=275 * NM).with_top_layer(1.849, 1e-8),
                BARE)
    with pytest.raises(ValidationError):
        psi_opl(BARE, BARE)


def test_device_stack_monotone_below_40nm():
    curve = build_opl_curve(BARE, (0.0, 40 * NM))
    assert np.all(np.diff(curve.opl_values) > 0)
    assert curve.injectivity_limit == curve.thickness_grid[-1]


def test_device_stack_folds_back():
    curve = build_opl_curve(BARE, (0.0, 120 * NM))
    assert 40 * NM < curve.injectivity_limit < 120 * NM
    below = curve.thickness_grid <= curve.injectivity_limit
    assert np.all(np.diff(curve.opl_values[below]) > 0)
    after = curve.opl_values[~below]
    assert after.min() < curve.injectivity_opl


def test_continuity_on_fine_grid():
    step = max_grid_step(1.849, LAM)
    grid = np.arange(0, 300 * NM, step)
    opl = opl_at(BARE, 1.849, grid)
    # consecutive samples never jump by a wrapped phase (lambda/2 in OPL)
    assert np.max(np.abs(np.diff(opl))) < LAM / 8


def test_coarse_grid_rejected():
    with pytest.raises(UnwrapStep):
        build_opl_curve(BARE, (0.0, 100 * NM), step=50 * NM)


def test_opl_at_matches_psi_opl():
    ts = np.array([3, 17, 42, 90]) * NM
    direct = [psi_opl(BARE.with_top_layer(1.849, t), BARE) for t in ts]
    assert np.allclose(opl_at(BARE, 1.849, ts), direct, rtol=0, atol=1e-18)


def test_trivial_stack_gives_linear_curve():
    # A flake index-matched to the substrate reflects only at its own top
    # surface, which sits t above the reference plane: OPL = -t exactly.
    s = LayerStack((), 1.0, complex(1.5, 0.0), LAM)
    curve = build_opl_curve(s, (0.0, 200 * NM), index=1.5)
    assert np.allclose(curve.opl_values, -curve.thickness_grid, rtol=0, atol=1e-18)
    assert curve.injectivity_limit == curve.thickness_grid[-1]
    t = invert_opl(curve, -123.4 * NM)
    assert t == pytest.approx(123.4 * NM, abs=1e-15)


def test_range_order():
    with pytest.raises(RangeOrder):
        build_opl_curve(BARE, (50 * NM, 10 * NM))


def test_injectivity_limit_helper():
    g = np.arange(6.0)
    assert injectivity_limit(g, np.array([0, 1, 2, 3, 4, 5.0])) == 5.0
    assert injectivity_limit(g, np.array([0, 1, 2, 1, 0, 1.0])) == 2.0


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def device_curve():
    return build_opl_curve(BARE, (0.0, 120 * NM))


def test_round_trip_at_20nm(device_curve):
    opl = psi_opl(BARE.with_top_layer(1.849, 20 * NM), BARE)
    t = invert_opl(device_curve, opl)
    assert abs(t - 20 * NM) < 0.1 * NM


def test_zero_opl_inverts_to_zero(device_curve):
    assert invert_opl(device_curve, 0.0) == 0.0


def test_beyond_injectivity_is_ambiguous(device_curve):
    lim = device_curve.injectivity_limit
    i = np.searchsorted(device_curve.thickness_grid, lim)
    # an OPL just below the fold value is hit on both sides of the fold
    target = device_curve.injectivity_opl - 0.2 * NM
    res = invert_opl(device_curve, target)
    assert isinstance(res, Ambiguous) and len(res) >= 2
    assert min(res.candidates) < lim < max(res.candidates)
    assert i > 0


def test_out_of_range(device_curve):
    with pytest.raises(OutOfRange):
        invert_opl(device_curve, device_curve.opl_values.max() + 1 * NM)
    with pytest.raises(OutOfRange):
        invert_opl(device_curve, -1 * NM)


def test_curve_io_round_trip(tmp_path, device_curve):
    p = tmp_path / "c.json"
    write_curve_json(device_curve, p)
    back = read_curve_json(p)
    assert np.array_equal(back.opl_values, device_curve.opl_values)
    assert back.injectivity_limit == device_curve.injectivity_limit
    assert back.stack == BARE
    csvp = tmp_path / "c.csv"
    write_curve_csv(device_curve, csvp)
    lines = csvp.read_text().splitlines()
    assert lines[0] == "thickness_nm,opl_nm" and len(lines) == device_curve.opl_values.size + 1
    assert isinstance(OplCurve.from_dict(device_curve.to_dict()), OplCurve)


# ---------------------------------------------------------------------------
# index calibration
# ---------------------------------------------------------------------------

def _calibration(ts_nm, n=1.849, noise_nm=0.0, seed=0):
    ts = np.asarray(ts_nm) * NM
    opl = opl_at(BARE, n, ts)
    opl = opl + np.random.default_rng(seed).normal(0, noise_nm * NM, ts.size)
    return np.column_stack((ts, opl))


def test_zero_noise_index_recovery():
    res = fit_index(_calibration([5, 12, 20, 28, 35]), BARE, n_mc=100)
    assert abs(res.index - 1.849) < 1e-4
    assert not res.unstable


def test_noisy_index_recovery():
    res = fit_index(_calibration([5, 12, 20, 28, 35], noise_nm=2.0, seed=3), BARE,
                    opl_sigma=2 * NM)
    assert abs(res.index - 1.849) < 0.05
    assert res.ci95[0] <= 1.849 <= res.ci95[1]


def test_single_point_is_flagged_unstable():
    res = fit_index(_calibration([10]), BARE, n_mc=100)
    assert res.unstable and res.n_used == 1
    assert res.ci95[1] - res.ci95[0] > 0.05


def test_points_beyond_fold_are_dropped():
    res = fit_index(_calibration([8, 16, 24, 32, 80]), BARE, n_mc=100)
    assert res.n_used == 4 and res.excluded == [pytest.approx(80 * NM)]
    assert abs(res.index - 1.849) < 1e-4


def test_all_points_beyond_fold():
    with pytest.raises(UncalibratableRegion):
        fit_index(_calibration([70, 80, 90]), BARE, n_mc=100)
