import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fefkit.errors import DimensionError
from fefkit.markov import FaultChannel, MarkovSequence, fef_markov, ss_markov
from fefkit.realize import (FefRealization, build_hankel, ho_kalman,
                            realize_from_markov, realize_pipeline, suggest_order, truncated_svd)
from fefkit.sysmodel import spectral_radius

from conftest import random_instance

ACT = [FaultChannel("actuator", 0)]


def test_hankel_definition():
    W = MarkovSequence(np.arange(4.0).reshape(4, 1, 1))
    assert np.array_equal(build_hankel(W, 2, 2), [[1, 2], [2, 3]])


def test_hankel_too_short():
    with pytest.raises(DimensionError):
        build_hankel(MarkovSequence.zeros(5, 1, 1), 3, 3)


def test_hankel_vtol_size():
    W = MarkovSequence.zeros(90, 2, 12)
    assert build_hankel(W, 45, 45).shape == (90, 540)


def test_hankel_rank_one_from_scalar_R():
    R = MarkovSequence(np.array([[[1.0, 2.0]], [[3.0, -1.0]]] + [[[0.0, 0.0]]] * 10))
    H = build_hankel(R, 5, 5)
    assert np.linalg.matrix_rank(H) == 1
    fac = truncated_svd(H, 1)
    assert np.allclose(fac.reduced, H, atol=1e-14) and fac.discarded < 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_hankel_entry_property(seed):
    rng = np.random.default_rng(seed)
    l, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    W = MarkovSequence(rng.standard_normal((l + m, 2, 3)))
    H = build_hankel(W, l, m)
    i, j = int(rng.integers(0, l)), int(rng.integers(0, m))
    assert np.array_equal(H[2 * i:2 * i + 2, 3 * j:3 * j + 3], W[i + j + 1])


def test_full_rank_truncation_exact():
    H = np.random.default_rng(0).standard_normal((6, 5))
    assert np.allclose(truncated_svd(H, 5).reduced, H, atol=1e-12)
    with pytest.raises(ValueError):
        truncated_svd(H, 6)


def test_three_state_hankel():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((3, 3))
    A *= 0.8 / spectral_radius(A)
    W = ss_markov(A, rng.standard_normal((3, 2)), rng.standard_normal((2, 3)), np.zeros((2, 2)), 21)
    H = build_hankel(W, 10, 10)
    fac = truncated_svd(H, 3)
    assert np.abs(fac.reduced - H).max() <= 1e-9
    assert fac.s[3] <= 1e-10
    assert fac.Ctrb.shape == (3, 20)
    assert np.allclose(fac.Obsv @ fac.Ctrb, fac.reduced)


def test_suggest_order_gap():
    s = suggest_order([10, 9, 1e-8, 1e-9, 5e-10])
    assert s.order == 2 and s.confident


def test_suggest_order_flat():
    s = suggest_order(np.linspace(1.0, 0.9, 12) + 0.001 * np.random.default_rng(0).random(12))
    assert not s.confident


def test_suggest_order_needs_two():
    with pytest.raises(ValueError):
        suggest_order([1.0])


def test_suggest_order_vtol_exact():
    from fefkit.bench import SCENARIO_FAULTS, build_vtol
    from fefkit.sysmodel import to_predictor
    m, _ = build_vtol()
    Hu, Hy, _ = to_predictor(m).markov(100)
    fm = fef_markov(Hu, Hy, list(SCENARIO_FAULTS["actuator"]), 90)
    s = suggest_order(np.linalg.svd(build_hankel(fm.R, 45, 45), compute_uv=False), window=(1, 20))
    assert s.order == 8 and s.confident


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_random(seed):
    pred, faults, model = random_instance(seed, stable_inverse=True)
    L, l, m = 40, 20, 20
    Hu, Hy, _ = pred.markov(L + 5)
    fm = fef_markov(Hu, Hy, faults, L)
    sv = np.linalg.svd(build_hankel(fm.R, l, m), compute_uv=False)
    n = int(np.sum(sv > 1e-9 * sv[0]))
    real = realize_from_markov(fm, l, m, n, pred.nu, pred.ny)
    R, Q, J = real.markov(l + m - 1)
    assert np.abs(R.blocks[1:] - fm.R.blocks[1:l + m - 1]).max() <= 1e-8
    assert np.abs(Q.blocks[1:] - fm.Q.blocks[1:l + m - 1]).max() <= 1e-6
    assert np.abs(J.blocks[1:] - fm.J.blocks[1:l + m - 1]).max() <= 1e-6
    a, b = real.pi_residuals()
    assert a <= 1e-8 and b <= 1e-10
    assert np.array_equal(real.D2, fm.J[0])


def test_model_based_matches_markov():
    pred, faults, model = random_instance(11)
    Hu, Hy, _ = pred.markov(40)
    fm = fef_markov(Hu, Hy, faults, 30)
    R, Q, J = model.markov(30)
    assert np.allclose(R.blocks, fm.R.blocks, atol=1e-8)
    assert np.allclose(Q.blocks, fm.Q.blocks, atol=1e-8)
    assert np.allclose(J.blocks, fm.J.blocks, atol=1e-8)


def test_scalar_zero_residual_hankels(scalar_pred):
    Hu, Hy, _ = scalar_pred.markov(30)
    fm = fef_markov(Hu, Hy, ACT, 20)
    for n in (1, 2, 3):
        real = realize_from_markov(fm, 10, 10, n, 1, 1)
        assert np.all(real.C2 == 0) and np.all(real.D2 == 0) and np.all(real.B1 == 0)


def test_basis_consistency_Q():
    pred, faults, _ = random_instance(3, stable_inverse=True)
    Hu, Hy, _ = pred.markov(45)
    fm = fef_markov(Hu, Hy, faults, 40)
    sv = np.linalg.svd(build_hankel(fm.R, 20, 20), compute_uv=False)
    n = int(np.sum(sv > 1e-9 * sv[0]))
    real = realize_from_markov(fm, 20, 20, n, pred.nu, pred.ny)
    Hq = build_hankel(fm.Q, 20, 20)
    fac = truncated_svd(build_hankel(fm.R, 20, 20), n)
    from fefkit.markov import extended_observability
    Oq = extended_observability(real.Phi1, -real.C2, 20)
    assert np.abs(Oq @ fac.Ctrb - Hq).max() <= 1e-6 * max(1.0, np.abs(Hq).max())


def test_permutation_invariant_eigs():
    pred, faults, _ = random_instance(4, stable_inverse=True)
    Hu, Hy, _ = pred.markov(45)
    fm = fef_markov(Hu, Hy, faults, 40)
    sv = np.linalg.svd(build_hankel(fm.R, 20, 20), compute_uv=False)
    n = int(np.sum(sv > 1e-9 * sv[0]))
    a = realize_from_markov(fm, 20, 20, n, pred.nu, pred.ny)
    perm = np.random.default_rng(0).permutation(fm.R.cols)
    R2 = MarkovSequence(fm.R.blocks[:, :, perm])
    Q2 = MarkovSequence(fm.Q.blocks[:, :, perm])
    b = realize_pipeline(R2, Q2, fm.J, 20, 20, n, fm.tau, fm.Pi, fm.signature.Htauf,
                         pred.nu, pred.ny)
    ea = np.sort_complex(np.linalg.eigvals(a.Phi1))
    eb = np.sort_complex(np.linalg.eigvals(b.Phi1))
    assert np.allclose(ea, eb, atol=1e-8)


def test_dimension_checks(scalar_pred):
    Hu, Hy, _ = scalar_pred.markov(30)
    fm = fef_markov(Hu, Hy, ACT, 20)
    with pytest.raises(DimensionError):
        realize_pipeline(fm.R, fm.Q, fm.J, 10, 10, 1, 0, fm.Pi, fm.signature.Htauf, 1, 1)
    with pytest.raises(ValueError):
        realize_from_markov(fm, 10, 10, 100, 1, 1)


def test_json_roundtrip():
    pred, faults, real = random_instance(6)
    back = FefRealization.from_dict(real.to_dict())
    for k in FefRealization._MATS:
        assert np.array_equal(getattr(back, k), getattr(real, k))
    assert back.tau == real.tau


def test_ho_kalman_recovers_predictor():
    pred, _, _ = random_instance(7)
    Hu, Hy, _ = pred.markov(40)
    est = ho_kalman(Hu, Hy, pred.n, 15, 15, SigmaE=pred.SigmaE)
    Hu2, Hy2, _ = est.markov(30)
    assert np.allclose(Hu2, Hu[:30], atol=1e-8)
    assert np.allclose(Hy2, Hy[:30], atol=1e-8)
    assert np.allclose(np.sort(np.abs(np.linalg.eigvals(est.Phi))),
                       np.sort(np.abs(np.linalg.eigvals(pred.Phi))), atol=1e-6)
