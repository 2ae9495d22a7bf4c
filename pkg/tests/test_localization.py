import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaloc.localization import (
    DIFFERENTIABLE_KINDS,
    MEAN_KINDS,
    GroupMapping,
    LocalizationError,
    LocalizationSpec,
    build_rho,
    combine,
    combine_scaled_partials,
    drho_dupsilon,
    gauss_loc,
    gauss_loc_dr,
    localize_cov,
    prolong,
    radius_sensitivities,
)
from adaloc.models import Lorenz96, ModelSystem, QuasiGeostrophic, cyclic_distance
from oracles import MEANS, rho_loop

unit = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)
# the textbook formulas underflow for subnormal inputs, so compare on normal numbers only
normal_unit = st.one_of(st.just(0.0), st.floats(min_value=1e-100, max_value=1.0))


def test_gauss_values():
    assert gauss_loc(0.0) == 1.0
    assert gauss_loc(1.0) == pytest.approx(0.60653066, abs=1e-8)
    assert gauss_loc(2.0) == pytest.approx(np.exp(-2.0))
    assert gauss_loc(40.0) < 1e-300


def test_gauss_monotone():
    u = np.linspace(0, 10, 200)
    assert np.all(np.diff(gauss_loc(u)) < 0)


def test_gauss_rejects_negative():
    with pytest.raises(LocalizationError):
        gauss_loc(-0.1)


def test_gauss_radius_derivative_fd():
    d, r, h = 2.3, 1.7, 1e-6
    fd = (gauss_loc(d / (r + h)) - gauss_loc(d / (r - h))) / (2 * h)
    assert gauss_loc_dr(d, r) == pytest.approx(fd, rel=1e-8)


@pytest.mark.parametrize(
    "kind,expected",
    [("min", 0.2), ("max", 0.8), ("mean", 0.5), ("sqrt", 0.4), ("rms", np.sqrt(0.34)), ("harm", 0.32)],
)
def test_combine_examples(kind, expected):
    assert combine(kind, 0.2, 0.8) == pytest.approx(expected, rel=1e-14)


def test_harm_of_zeros_is_zero():
    assert combine("harm", 0.0, 0.0) == 0.0


def test_combine_rejects_unknown_and_negative():
    with pytest.raises(LocalizationError):
        combine("median", 0.2, 0.3)
    with pytest.raises(LocalizationError):
        combine("mean", -0.1, 0.3)


def test_combine_broadcasts():
    out = combine("mean", np.array([0.0, 1.0]), 0.5)
    np.testing.assert_array_equal(out, [0.25, 0.75])


@pytest.mark.parametrize("kind", MEAN_KINDS)
@given(a=unit, b=unit)
def test_mean_axioms(kind, a, b):
    m = combine(kind, a, b)
    assert m == combine(kind, b, a)
    assert combine(kind, a, a) == a
    assert min(a, b) * (1 - 1e-15) <= m <= max(a, b) * (1 + 1e-15)


@pytest.mark.parametrize("kind", MEAN_KINDS)
@given(a=normal_unit, b=normal_unit)
def test_combine_matches_reference(kind, a, b):
    assert combine(kind, a, b) == pytest.approx(MEANS[kind](a, b), rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("kind", DIFFERENTIABLE_KINDS)
@given(a=st.floats(0.05, 1.0), b=st.floats(0.05, 1.0))
@settings(max_examples=50)
def test_scaled_partials_fd(kind, a, b):
    h = 1e-6
    pa, pb = combine_scaled_partials(kind, a, b)
    fa = (MEANS[kind](a + h, b) - MEANS[kind](a - h, b)) / (2 * h)
    fb = (MEANS[kind](a, b + h) - MEANS[kind](a, b - h)) / (2 * h)
    assert float(pa) == pytest.approx(a * fa, rel=1e-6, abs=1e-10)
    assert float(pb) == pytest.approx(b * fb, rel=1e-6, abs=1e-10)


@pytest.mark.parametrize("kind", ["min", "max"])
def test_nondifferentiable_rejected(kind):
    with pytest.raises(LocalizationError, match="non-differentiable"):
        combine_scaled_partials(kind, 0.3, 0.4)


def test_scaled_partials_finite_at_zero():
    for kind in DIFFERENTIABLE_KINDS:
        pa, pb = combine_scaled_partials(kind, np.array([0.0, 0.0]), np.array([0.0, 0.5]))
        assert np.all(np.isfinite(pa)) and np.all(np.isfinite(pb))


# -- groups -------------------------------------------------------------------------

def test_prolong_modulo():
    m = GroupMapping.modulo(6, 2)
    np.testing.assert_array_equal(prolong(m, [1.0, 3.0]), [1, 3, 1, 3, 1, 3])
    np.testing.assert_array_equal(m.restrict(m.prolong([1.0, 3.0])), [1.0, 3.0])


def test_prolong_blocks_and_univariate():
    np.testing.assert_array_equal(GroupMapping.blocks(6, 3).assignment, [0, 0, 1, 1, 2, 2])
    np.testing.assert_array_equal(prolong(GroupMapping.univariate(4), 2.5), [2.5] * 4)


def test_group_mapping_validation():
    with pytest.raises(LocalizationError):
        GroupMapping([0, 2], 3)  # group 1 owns nothing
    with pytest.raises(LocalizationError):
        GroupMapping([0, 1], 1)
    with pytest.raises(LocalizationError):
        prolong(GroupMapping.modulo(4, 2), [1.0])


def test_group_mapping_immutable():
    m = GroupMapping.modulo(4, 2)
    with pytest.raises(ValueError):
        m.assignment[0] = 1


# -- taper matrix -------------------------------------------------------------------

class Ring3(ModelSystem):
    n = 3
    dt = 1.0

    def tendency(self, t, x):
        return np.zeros_like(x)

    def distances(self, rows=None, cols=None):
        rows = np.arange(3) if rows is None else np.asarray(rows)
        cols = np.arange(3) if cols is None else np.asarray(cols)
        return cyclic_distance(3, rows[:, None], cols[None, :])


def test_rho_ring_example():
    model = Ring3()
    rho = build_rho(model, [1.0, 1.0, 2.0], "mean")
    l1, l2 = np.exp(-0.5), np.exp(-0.125)
    expected = np.array([[1, l1, (l1 + l2) / 2], [l1, 1, (l1 + l2) / 2], [(l1 + l2) / 2, (l1 + l2) / 2, 1]])
    np.testing.assert_allclose(rho, expected, rtol=1e-15)


@pytest.mark.parametrize("kind", MEAN_KINDS)
def test_rho_matches_loop(rng, kind):
    model = Lorenz96(n=10)
    r = rng.uniform(0.5, 4, 10)
    np.testing.assert_allclose(build_rho(model, r, kind), rho_loop(model.distances(), r, kind), rtol=1e-13)


@pytest.mark.parametrize("kind", MEAN_KINDS)
def test_rho_symmetric_unit_diagonal(rng, kind):
    model = Lorenz96()
    rho = build_rho(model, rng.uniform(0.5, 6, 40), kind)
    assert np.array_equal(rho, rho.T)
    assert np.all(np.diag(rho) == 1.0)
    assert rho.min() >= 0 and rho.max() <= 1


def test_rho_equal_radii_collapse(rng):
    model = Lorenz96(n=12)
    ref = gauss_loc(model.distances() / 3.0)
    for kind in MEAN_KINDS:
        np.testing.assert_allclose(build_rho(model, 3.0, kind), ref, rtol=1e-14)


def test_rho_blocks_match_full_matrix(rng):
    model = QuasiGeostrophic(grid=9)
    spec = LocalizationSpec(GroupMapping.modulo(81, 3), "rms")
    ups = [1.5, 2.5, 4.0]
    obs = model.lattice_indices(3)
    full = build_rho(model, prolong(spec.mapping, ups), "rms")
    xo, oo = spec.blocks(model, ups, obs)
    np.testing.assert_allclose(xo, full[:, obs], rtol=1e-15)
    np.testing.assert_allclose(oo, full[np.ix_(obs, obs)], rtol=1e-15)


def test_rho_radius_validation():
    with pytest.raises(LocalizationError):
        build_rho(Lorenz96(n=5), [1, 1, 1, 1, 0])
    with pytest.raises(LocalizationError):
        build_rho(Lorenz96(n=5), [1, 1])
    with pytest.raises(LocalizationError):
        build_rho(Lorenz96(n=5), 1.0, loc="boxcar")


@pytest.mark.parametrize("kind", DIFFERENTIABLE_KINDS)
def test_drho_fd(rng, kind):
    model = Lorenz96(n=12)
    mapping = GroupMapping.modulo(12, 3)
    ups = rng.uniform(1.0, 4.0, 3)
    h = 1e-6
    for j in range(3):
        up, dn = ups.copy(), ups.copy()
        up[j] += h
        dn[j] -= h
        fd = (build_rho(model, prolong(mapping, up), kind) - build_rho(model, prolong(mapping, dn), kind)) / (2 * h)
        np.testing.assert_allclose(drho_dupsilon(model, mapping, ups, j, kind), fd, atol=1e-8)


def test_radius_sensitivities_are_transposes():
    model = Lorenz96(n=8)
    r = np.linspace(1, 3, 8)
    tr, tc = radius_sensitivities(model.distances(), r, r, "harm")
    np.testing.assert_allclose(tr, tc.T, rtol=1e-14)
    assert np.all(np.diag(tr) == 0)


def test_drho_rejects_bad_group():
    with pytest.raises(LocalizationError):
        drho_dupsilon(Lorenz96(n=4), GroupMapping.univariate(4), [1.0], 1)


def test_localize_cov():
    np.testing.assert_array_equal(localize_cov([[1, 0.5], [0.5, 1]], [[2, 2], [2, 2]]), [[2, 1], [1, 2]])
    with pytest.raises(LocalizationError):
        localize_cov(np.ones((2, 2)), np.ones((3, 3)))


# -- positive semidefiniteness -----------------------------------------------------

@pytest.mark.parametrize("kind", DIFFERENTIABLE_KINDS)
def test_localized_covariance_psd(rng, kind):
    worst = np.inf
    for _ in range(50):
        n = int(rng.integers(4, 11))
        model = Lorenz96(n=n)
        r = rng.uniform(0.5, 4.0, n)
        A = rng.standard_normal((n, n))
        P = A @ A.T
        L = localize_cov(build_rho(model, r, kind), P)
        ev = np.linalg.eigvalsh(L)
        worst = min(worst, ev.min() / np.trace(P))
    assert worst >= -1e-10


def test_equal_radii_taper_is_psd(rng):
    model = Lorenz96()
    rho = build_rho(model, 3.0)
    assert np.linalg.eigvalsh(rho).min() > -1e-10 * np.trace(rho)


def test_variable_radius_taper_can_be_indefinite():
    # Mixing very different radii through the max combiner breaks positive
    # semidefiniteness of the taper itself, so min and max are left out of the
    # PSD guarantee.
    model = Lorenz96(n=40)
    r = np.where(np.arange(40) % 2 == 0, 0.5, 12.0)
    ev = np.linalg.eigvalsh(build_rho(model, r, "max"))
    assert ev.min() < -1e-6
