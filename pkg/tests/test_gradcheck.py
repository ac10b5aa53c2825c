"""The finite-difference checker itself: correct analytic gradients must
pass, corrupted ones must fail, and the relative-error metric behaves."""

import numpy as np
import pytest

from detrend import tensor as T
from detrend.gradcheck import _rel_err, cell_gradcheck, gradcheck
from detrend.tensor import Tensor


def quadratic_setup():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal(2), requires_grad=True)

    def loss():
        return T.tsum(T.mul(T.sigmoid(T.add(a, b)), T.tanh(a)))

    return loss, {"a": a, "b": b}


def test_correct_gradient_passes():
    loss, params = quadratic_setup()
    report = gradcheck(loss, params)
    assert report.passed
    assert report.max_rel_err < 1e-6


def test_corrupted_gradient_fails():
    loss, params = quadratic_setup()
    report = gradcheck(loss, params, corrupt_param="a")
    assert not report.passed
    worst = report.worst()
    assert worst is not None and worst.param == "a"


def test_unknown_corrupt_param_raises():
    loss, params = quadratic_setup()
    with pytest.raises(KeyError):
        gradcheck(loss, params, corrupt_param="nope")


def test_float32_params_rejected():
    a = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    with pytest.raises(ValueError):
        gradcheck(lambda: T.tsum(a), {"a": a})


def test_params_restored_after_check():
    loss, params = quadratic_setup()
    before = {k: p.data.copy() for k, p in params.items()}
    gradcheck(loss, params)
    for k, p in params.items():
        np.testing.assert_array_equal(p.data, before[k])
        assert p.grad is None  # left clean for the caller


def test_rel_err_metric():
    assert _rel_err(1.0, 1.0) == 0.0
    assert _rel_err(2.0, 1.0) == pytest.approx(0.5)
    assert _rel_err(0.0, 0.0) == 0.0  # guarded denominator
    # near-zero gradients are compared absolutely against the noise floor
    assert _rel_err(1e-7, 0.0) == pytest.approx(1e-4, rel=1e-6)
    # a genuinely wrong small gradient still trips the tolerance
    assert _rel_err(1e-4, 2e-4) > 1e-2


def test_report_csv_roundtrip(tmp_path):
    loss, params = quadratic_setup()
    report = gradcheck(loss, params, record_all=True)
    path = tmp_path / "report.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "parameter,index,analytic,numeric,rel_err"
    assert len(lines) == 1 + sum(p.data.size for p in params.values())


def test_cell_gradcheck_small_and_passing():
    report = cell_gradcheck(cell="gru", norm="ad", placement="hidden", t_len=3)
    assert report.passed


def test_cell_gradcheck_negative_control():
    report = cell_gradcheck(cell="gru", norm="none", t_len=2, corrupt_param="W_h")
    assert not report.passed


def test_cell_gradcheck_convgru_runs():
    report = cell_gradcheck(cell="convgru", norm="bn_ad", placement="all", t_len=2)
    assert report.passed


def test_cell_instances_stay_small():
    # the acceptance budget assumes miniature cells (< 200 parameters)
    from detrend.cells import CellConfig, GruParams, NormState
    from detrend.tensor import ConvSpec, Prng

    for conv in (False, True):
        cfg = CellConfig(
            kind="convgru" if conv else "gru", norm="bn_ad", placement="all",
            forward_spec=ConvSpec((3, 3, 1, 1), (1, 1), (1, 1)) if conv else None,
            recurrent_spec=ConvSpec((3, 3, 1, 1), (1, 1), (1, 1)) if conv else None,
        )
        p = GruParams(Prng(0), cfg, in_dim=1 if conv else 2, hidden=1 if conv else 3,
                      sigma=0.3, dtype=np.float64)
        ns = NormState(cfg, 1 if conv else 3, dtype=np.float64)
        n = sum(t.data.size for t in dict(p.params(), **ns.params()).values())
        assert n < 200
