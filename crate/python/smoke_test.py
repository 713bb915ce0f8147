"""Smoke test for the pybregaccel extension.

Build the module and put it on the path first, e.g.

    cargo build --release -p bregaccel-python
    cp target/release/libpybregaccel.so python/pybregaccel.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pybregaccel as bx


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    assert bx.soft_threshold(3.0, 1.0) == 2.0
    assert bx.soft_threshold(-0.5, 1.0) == 0.0

    # u1 + u2 = 1 with C = I: optimum (0.5, 0.5), value 0.5
    p = bx.Problem(c=[[1.0, 0.0], [0.0, 1.0]], a=[[1.0, 1.0]], b=[1.0], tau1=0.0, tau2=0.0)
    u, obj = bx.enumerate_solve(p)
    assert close(obj, 0.5, 1e-12), obj
    for solver in ("sbsa", "sbsa-lsa", "sb", "admm"):
        r = bx.solve(p, solver)
        assert r.converged, r
        assert close(r.objective, 0.5, 1e-3), (solver, r.objective)
        assert abs(sum(r.u) - 1.0) <= 1e-4

    xi, u_naive = bx.naive_wealth([[0.1, 0.3]], xi_ini=1.0)
    assert close(xi, 1.2, 1e-12) and u_naive == [0.5, 0.5]

    problem, naive = bx.synth(seed=3, n_assets=4, periods=3)
    assert (problem.n, problem.q, problem.m) == (12, 8, 4)
    report = bx.solve(problem, "sbsa")
    print(report)
    assert report.termination in ("converged", "max_outer", "numerical_error")
    assert math.isfinite(report.objective)
    data = json.loads(report.to_json())
    assert data["outer_iters"] == report.outer_iters

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "p.json")
        problem.save(path)
        again = bx.Problem.load(path)
        assert again.c == problem.c and again.b == problem.b

    try:
        bx.Problem(c=[[1.0]], a=[[1.0, 2.0]], b=[1.0], tau1=0.1, tau2=0.1)
    except ValueError as e:
        print("rejected mismatched input:", e)
    else:
        raise AssertionError("dimension mismatch not detected")

    try:
        bx.solve(p, "newton")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown solver accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
