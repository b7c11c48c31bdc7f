"""Smoke test for the mte_lab extension: build with `maturin develop` first."""

import math
import tempfile

import mte_lab


def main():
    assert "figure1" in mte_lab.bundled_names()

    cfg = mte_lab.ScenarioConfig.bundled("trivial")
    assert cfg.treatments == 3 and cfg.baseline == 1
    q = cfg.thresholds([0.0, 0.0])
    assert math.isnan(q[cfg.baseline]) and len(q) == 3

    rep = cfg.verify_representation(20_000, 1)
    assert rep["mismatches"] == []

    mte = cfg.mte_identified(qstar=0.3)
    assert abs(mte["recovered"] - (2 * 0.3 - 1)) < 1e-3, mte

    fig = mte_lab.ScenarioConfig.bundled("figure1")
    cloud = fig.support_cloud(10_000, 2)
    assert cloud["max_residual"] < 1e-9

    sample = cfg.simulate(5_000, 3)
    assert len(sample) == 5_000
    assert abs(sum(sample.shares()) - 1.0) < 1e-12
    assert sample.to_csv() == cfg.simulate(5_000, 3).to_csv()

    try:
        mte_lab.ScenarioConfig.bundled("missing")
    except mte_lab.MteLabError:
        pass
    else:
        raise AssertionError("unknown scenario accepted")

    with tempfile.TemporaryDirectory() as out:
        manifest = mte_lab.run("verify", config="bundled:figure1", out=out)
        assert manifest["status"] == "ok", manifest

    print("smoke test passed")


if __name__ == "__main__":
    main()
