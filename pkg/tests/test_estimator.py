import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from pasa import CurvatureBudgetScheduler, PiecewiseSparseAttention
from pasa.budget import synth_three_phase
from pasa.synth import generate_instance


def test_attention_estimator_round_trip():
    inst = generate_instance(128, 8, 8, 0.5, 0)
    est = PiecewiseSparseAttention(block_size=8, group_size=4, density=0.25, seed=3)
    out = est.fit(inst.K, inst.V).transform(inst.Q)
    assert out.shape == (128, 8) and est.k_ == 4
    assert est.plan_.k_used == 4
    np.testing.assert_array_equal(out, est.transform(inst.Q))
    err = np.linalg.norm(out - est.dense(inst.Q)) / np.linalg.norm(est.dense(inst.Q))
    assert err < 0.5


def test_attention_estimator_full_selection_is_dense():
    inst = generate_instance(64, 8, 8, 0.5, 1)
    est = PiecewiseSparseAttention(block_size=8, top_k=8, mode="ZerothOrder").fit(inst.K, inst.V)
    np.testing.assert_allclose(est.transform(inst.Q), est.dense(inst.Q), atol=1e-10)


def test_attention_estimator_params_and_errors():
    est = PiecewiseSparseAttention(block_size=16, mode="FirstOrderGlobal")
    assert est.get_params()["mode"] == "FirstOrderGlobal"
    assert clone(est).set_params(bias_beta=0.0).bias_beta == 0.0
    with pytest.raises(NotFittedError):
        est.transform(np.zeros((16, 4)))
    with pytest.raises(ValueError):
        PiecewiseSparseAttention(block_size=16).fit(np.zeros((20, 4)), np.zeros((20, 4)))
    with pytest.raises(ValueError):
        PiecewiseSparseAttention(block_size=4, mode="nope").fit(np.zeros((8, 2)), np.zeros((8, 2)))


def test_scheduler_estimator():
    trajs = [synth_three_phase(50, s) for s in range(3)]
    sch = CurvatureBudgetScheduler(rho=0.15).fit(trajs)
    assert sch.schedule_.dense_prefix == 10
    ks = sch.predict(32)
    assert ks.shape == (50,) and np.all(ks[:10] == 32)
    assert np.all((ks >= 1) & (ks <= 32))
    assert sch.schedule_.densities.sum() == pytest.approx(0.15 * 40, abs=1e-12)
