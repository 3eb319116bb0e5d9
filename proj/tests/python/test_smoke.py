import math

import pytest

import rsvcausal as rc


def test_generate_and_estimate():
    data, info = rc.generate(dgp="calibrated", n=2000, tau=0.3, seed=7)
    assert len(data) == 2000
    res = rc.estimate(data, bootstrap=50, seed=1)
    assert res["estimand"] == "ate_incomplete"
    assert res["ci_low"] <= res["theta_hat"] <= res["ci_high"]
    assert abs(res["theta_hat"] - info["truth"]) < 0.2


def test_same_seed_is_deterministic():
    data, _ = rc.generate(n=1000, seed=3)
    a = rc.estimate(data, bootstrap=20, seed=5)
    b = rc.estimate(data, bootstrap=20, seed=5)
    assert a["theta_hat"] == b["theta_hat"]
    assert a["se"] == b["se"]


def test_iv_and_did_modes():
    iv, info = rc.generate(dgp="iv", n=3000, seed=2)
    assert iv.mode == "iv"
    res = rc.estimate(iv, bootstrap=20)
    assert math.isfinite(res["late"])
    did, _ = rc.generate(dgp="did", n=3000, seed=2)
    res = rc.estimate(did, bootstrap=20)
    assert math.isfinite(res["att"])


def test_from_columns_and_errors():
    sample = ["e", "eo", "o"] * 50
    treatment = [i % 2 if s != "o" else None for i, s in enumerate(sample)]
    outcome = [None if s == "e" else (i // 3) % 2 for i, s in enumerate(sample)]
    rsv = [[1.0] for _ in sample]
    data = rc.from_columns(sample, treatment, outcome, rsv)
    assert data.k_outcomes == 2
    with pytest.raises(rc.RsvError, match="IrrelevantRSV"):
        rc.estimate(data, representation="pred_y", bootstrap=0)
    with pytest.raises(rc.RsvError, match="InvalidArgument"):
        rc.estimate(data, not_a_key=1)


def test_adversarial_oracle():
    out = rc.adversarial_oracle(0.6, 0.2)
    assert out["theta"] == pytest.approx(-0.4)
    assert out["bias"] == pytest.approx(0.25)
