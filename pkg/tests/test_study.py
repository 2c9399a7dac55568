import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipdgeig.materials import MaterialTable
from ipdgeig.mesh import generate_unit_square
from ipdgeig.study import (FitError, detect_spurious, extrapolate, fit_dof_rate, fit_rate,
                           robustness_sweep, stabilization_sweep, uniform_convergence)

# first ten frequencies of the bottom-clamped square, nu = 0.35
REFERENCE = [0.6808, 1.6993, 1.8222, 2.9477, 3.0181, 3.4433, 4.1418, 4.6312, 4.7616, 4.7887]
# first frequency at nu = 0.35 on N = 20, 30, 40, 50 (k = 1, a = 10)
SERIES_N = np.array([20, 30, 40, 50])
SERIES_F = np.array([0.6832, 0.6821, 0.6817, 0.6815])


def test_fit_rate_exact_power_law():
    h = 1 / np.array([4, 8, 16, 32])
    assert fit_rate(h, h ** 2) == pytest.approx(2.0, abs=1e-10)
    slope, intercept = np.polyfit(np.log(h), np.log(3 * h ** 1.25), 1)
    assert fit_rate(h, 3 * h ** 1.25) == pytest.approx(slope, abs=1e-12)


def test_fit_rate_with_noise():
    rng = np.random.default_rng(0)
    h = 1 / np.arange(10, 60, 5)
    errs = 2.0 * h ** 1.5 * (1 + 0.01 * rng.standard_normal(len(h)))
    assert 1.4 <= fit_rate(h, errs) <= 1.6


def test_fit_rate_reference_series():
    order = fit_rate(1 / SERIES_N, SERIES_F - 0.6809)
    assert order == pytest.approx(1.50, abs=0.1)


def test_fit_rate_rejects():
    h = np.array([0.5, 0.25, 0.125])
    with pytest.raises(ValueError, match="positive"):
        fit_rate(h, [1e-2, 0.0, 1e-3])
    with pytest.raises(ValueError, match="decreasing"):
        fit_rate(h[::-1], [1, 2, 3])
    with pytest.raises(ValueError):
        fit_rate(h[:2], [1, 2])


def test_fit_dof_rate():
    dofs = np.array([100, 400, 1600, 6400])
    assert fit_dof_rate(dofs, dofs ** -1.0) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        fit_dof_rate([1], [1])


def test_extrapolate_exact():
    h = 1 / np.array([4, 6, 8, 12, 16])
    ext = extrapolate(h, 5 + h ** 2)
    assert ext.value == pytest.approx(5.0, abs=1e-10)
    assert ext.order == pytest.approx(2.0, abs=1e-6)
    assert ext.constant == pytest.approx(1.0, rel=1e-6)


def test_extrapolate_constant_series():
    ext = extrapolate([0.5, 0.25, 0.125, 0.0625], [3.0] * 4)
    assert ext.value == 3.0 and ext.order is None and ext.constant == 0.0


def test_extrapolate_reference_series():
    ext = extrapolate(1 / SERIES_N, SERIES_F)
    assert ext.value == pytest.approx(0.6809, abs=5e-4)


def test_extrapolate_order_bound():
    h = 1 / np.array([4, 8, 16, 32])
    ext = extrapolate(h, 1 + h ** 6, max_order=4.0)
    assert ext.order <= 4.0
    with pytest.raises(ValueError):
        extrapolate(h[:3], [1, 2, 3])


def test_fit_error_is_runtime_error():
    assert issubclass(FitError, RuntimeError)


def test_detect_spurious_examples():
    assert not detect_spurious(REFERENCE, REFERENCE).any()
    computed = [0.6808, 1.0131, 1.6993, 1.8222]
    flags = detect_spurious(computed, REFERENCE, rel_tol=0.05)
    assert list(flags) == [False, True, False, False]
    with pytest.raises(ValueError):
        detect_spurious([1.0], [])


def test_detect_spurious_each_reference_used_once():
    flags = detect_spurious([1.0, 1.001, 2.0], [1.0, 2.0], rel_tol=0.02)
    assert flags.sum() == 1 and not flags[2]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=12),
       st.lists(st.floats(0.1, 10.0), min_size=1, max_size=12), st.randoms())
def test_detect_spurious_permutation_stable(computed, references, rnd):
    flags = detect_spurious(computed, references)
    perm = list(range(len(computed)))
    rnd.shuffle(perm)
    pflags = detect_spurious([computed[i] for i in perm], references)
    assert sorted(zip(computed, flags)) == sorted(zip([computed[i] for i in perm], pflags))
    # flags count depends only on the multiset of values
    assert flags.sum() == pflags.sum()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=1, max_size=10, unique=True),
       st.floats(0.0, 0.009))
def test_detect_spurious_subset_unflagged(references, jitter):
    sub = [r * (1 + jitter) for r in references[::2]]
    assert not detect_spurious(sub, references, rel_tol=0.01).any()


@pytest.fixture(scope="module")
def sweep_cells():
    mesh = generate_unit_square(8, "bottom")
    mats = MaterialTable.homogeneous(1.0, 0.35)
    cells = stabilization_sweep(mesh, mats, [1], [2.0], references=REFERENCE)
    cells += stabilization_sweep(mesh, mats, [2], [4.0], references=REFERENCE)
    cells += stabilization_sweep(mesh, mats, [3], [8.0], references=REFERENCE)
    return {(c.k, c.a): c for c in cells}


def test_sweep_k3_a8_matches_reference(sweep_cells):
    cell = sweep_cells[3, 8.0]
    assert cell.error is None
    assert np.allclose(cell.frequencies, REFERENCE, atol=1e-2)
    assert not cell.spurious.any()


def test_sweep_k2_a4_has_no_spurious(sweep_cells):
    assert not sweep_cells[2, 4.0].spurious.any()


def test_sweep_k1_a2_has_spurious(sweep_cells):
    assert sweep_cells[1, 2.0].spurious.sum() >= 1


def test_sweep_records_solver_failure():
    mesh = generate_unit_square(1, "bottom")
    cells = stabilization_sweep(mesh, MaterialTable.homogeneous(), [1], [10.0], m=40,
                                backend="dense")
    assert cells[0].frequencies is None and "eigenpairs" in cells[0].error


def test_uniform_convergence_series():
    mats = MaterialTable.homogeneous(1.0, 0.35)
    s = uniform_convergence(mats, [8, 4, 6, 10], k=1)
    assert np.all(np.diff(s.hs) < 0)
    assert s.extrapolation is not None
    assert s.order > 0.8
    ref = uniform_convergence(mats, [4, 6, 8], k=1, reference=0.6808)
    assert np.allclose(ref.errors, np.abs(ref.values - 0.6808))
    with pytest.raises(ValueError):
        uniform_convergence(mats, [4], quantity="energy")
    kh = uniform_convergence(mats, [4], quantity="kappa_hat")
    assert kh.values[0] == pytest.approx(s.values[s.hs == 0.25][0] ** 2)


def test_robustness_is_linear_in_E():
    rows = robustness_sweep([10.0, 100.0, 1e4], 0.35, ns=(3, 5, 9, 17),
                            reference_per_E=0.46355423498481496)
    ratios = np.array([r.extrapolated / r.E for r in rows])
    assert np.all(np.abs(ratios / ratios[0] - 1) <= 1e-6)
    effs = np.array([r.eff for r in rows])
    assert np.all(np.abs(effs / effs[0] - 1) <= 1e-6)
    assert [int(d) for d in rows[0].dofs] == [126, 350, 1134, 4046]
