"""Smoke test for the picard_mpe_py extension module.

Build the module first, e.g.

    cargo build --release -p picard-mpe-py --features extension-module
    cp target/release/libpicard_mpe_py.so python/picard_mpe_py.so
    python3 python/smoke_test.py
"""

import math

import picard_mpe_py as pm


def main():
    assert set(pm.presets()) == {"kuramoto1", "kuramoto2", "cyber"}

    model = pm.Model.preset("kuramoto1", n=20)
    assert (model.d, model.n, model.horizon) == (2, 20, 1.0)
    assert model.num_states == 2 * 21
    assert model.rank(model.counts(5)) == 5

    sol = pm.picard(model, intervals=100)
    assert sol.converged, sol.residuals
    assert sol.residuals[-1] <= 1e-8
    assert 0.0 < sol.gamma < 1.0

    times = sol.times()
    values = sol.values()
    assert len(times) == 101 and len(values) == 101
    assert len(values[0]) == model.num_states
    assert all(math.isfinite(v) for row in values for v in row)

    slice_ = sol.slice()
    assert len(slice_) == 21
    assert slice_[0][1] < 0.0 < slice_[-1][1]

    eps, t, x, counts = sol.exploitability()
    assert 0.0 <= eps <= 1e-5, eps
    assert sum(counts) == model.n

    mean, stderr = sol.simulate_cost(trajectories=2000, seed=1)
    print(f"MC cost {mean:.4f} +- {stderr:.4f}, epsilon {eps:.2e}, {sol.iterations} solves")

    try:
        pm.picard(model, rho=1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("rho = 1 accepted")

    try:
        pm.Model.preset("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    print("ok")


if __name__ == "__main__":
    main()
