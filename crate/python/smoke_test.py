"""Smoke test for the `tvbo` extension module.

    pip install --no-build-isolation ./crates/python
    python python/smoke_test.py
"""

import json
import math
import pathlib
import sys

import numpy as np

import tvbo

ROOT = pathlib.Path(__file__).resolve().parent.parent
GOLDEN = ROOT / "crates" / "core" / "tests" / "golden"


def matern32(x, y, ls, amp):
    r = math.sqrt(3.0) * abs(x - y) / ls
    return amp * (1.0 + r) * math.exp(-r)


def check_kernel():
    for x, y in [(0.0, 0.0), (0.1, 0.4), (0.9, 0.2)]:
        got = tvbo.kernel([x], [y], "matern32", 0.3, 1.7)
        assert abs(got - matern32(x, y, 0.3, 1.7)) < 1e-14, (x, y, got)
    se = tvbo.kernel([0.0], [0.5], "squared-exponential", 0.25, 1.0)
    assert abs(se - math.exp(-2.0)) < 1e-14
    g = np.array(tvbo.gram([[0.0], [0.5], [0.5]], [1, 1, 5], epsilon=0.1))
    assert np.allclose(g, g.T)
    assert abs(g[1, 2] - 0.9**2) < 1e-14
    assert np.all(np.linalg.eigvalsh(g) > -1e-12)


def check_posterior():
    rng = np.random.default_rng(4)
    xs = rng.uniform(size=6)
    rounds = [1, 2, 4, 5, 9, 10]
    ys = np.sin(6 * xs)
    grid = np.linspace(0, 1, 21)
    eps, noise, ls, now = 0.05, 0.02, 0.2, 12

    def k(a, ta, b, tb):
        return matern32(a, b, ls, 1.0) * (1 - eps) ** (abs(ta - tb) / 2)

    K = np.array([[k(a, ta, b, tb) for b, tb in zip(xs, rounds)] for a, ta in zip(xs, rounds)])
    K += noise * np.eye(len(xs))
    Ks = np.array([[k(a, ta, g, now + 1) for g in grid] for a, ta in zip(xs, rounds)])
    mean = Ks.T @ np.linalg.solve(K, ys)
    var = 1.0 - np.einsum("ij,ij->j", Ks, np.linalg.solve(K, Ks))

    m, s = tvbo.posterior(
        [[x] for x in xs], list(ys), rounds, [[g] for g in grid], now,
        lengthscale=ls, epsilon=eps, noise_variance=noise,
    )
    assert np.allclose(m, mean, atol=1e-10)
    assert np.allclose(np.square(s), var, atol=1e-10)


def check_superiority():
    p = tvbo.superiority(1.0, 0.5, 0.2, 0.3)
    expected = 0.5 * math.erfc(-(0.8 / math.sqrt(0.8)) / math.sqrt(2))
    assert abs(p - expected) < 1e-14
    assert abs(p + tvbo.superiority(0.2, 0.3, 1.0, 0.5) - 1) < 1e-14


def check_session():
    init = json.loads((ROOT / "configs" / "tuner_stn_init.json").read_text())["config"]
    s = tvbo.TunerSession(json.dumps(init))
    assert s.candidates == [[0.0], [1.0]]
    for _ in range(30):
        g = s.suggest()
        if g["wants_feedback"]:
            s.observe(g["round"], 1.0 if g["index"] == 1 else 0.0)
    snap = s.snapshot()
    assert snap["round"] == 30 and snap["cost"] == s.cost < 30
    best = max(snap["candidates"], key=lambda c: c["mean"])
    assert best["index"] == 1
    try:
        s.observe(30, 0.0)
    except ValueError as e:
        assert "feedback-not-requested" in str(e) or "stale-round" in str(e)
    else:
        raise AssertionError("observing an unrequested round must fail")


def check_golden():
    import jsonschema

    schema = json.loads((ROOT / "docs" / "tuner_protocol.schema.json").read_text())
    validator = jsonschema.Draft202012Validator(schema)
    for name in ["stn", "grid", "errors"]:
        server = tvbo.TunerServer()
        inputs = (GOLDEN / f"{name}.in.ndjson").read_text().splitlines()
        outputs = (GOLDEN / f"{name}.out.ndjson").read_text().splitlines()
        for line, want in zip(inputs, outputs):
            assert server.handle_line(line) == want, (name, line)
            validator.validate(json.loads(want))


def check_benchmark():
    cfg = """
horizon = 40
grid_size = 50
epsilons = [0.05]
[[policies]]
kind = "full"
[[policies]]
kind = "confidence"
kappas = [0.9]
"""
    report = tvbo.run_synth_bo(cfg, trials=2)
    rows = {(r["policy"], r["param"]): r for r in report["rows"]}
    assert rows[("TV-GP-UCB", None)]["mean_cost"] == 40
    assert rows[("CE-GP-UCB", 0.9)]["mean_cost"] <= 40
    assert report == tvbo.run_synth_bo(cfg, trials=2)


def main():
    checks = [check_kernel, check_posterior, check_superiority, check_session, check_golden, check_benchmark]
    for check in checks:
        check()
        print(f"ok  {check.__name__}")
    print(f"{len(checks)} checks passed")


if __name__ == "__main__":
    sys.exit(main())
