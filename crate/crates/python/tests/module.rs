use pybregaccel::pybregaccel;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn run(code: &std::ffi::CStr) {
    pyo3::append_to_inittab!(pybregaccel);
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn module_round_trip() {
    run(c"
import pybregaccel as m
assert m.soft_threshold(3.0, 1.0) == 2.0
assert m.soft_threshold(-0.5, 1.0) == 0.0

p = m.Problem([[1.0, 0.2], [0.2, 0.5]], [[1.0, 1.0]], [1.0], 0.05, 0.1, d=[[-1.0, 1.0]])
assert (p.n, p.q, p.m) == (2, 1, 1)
u_star, f_star = m.enumerate_solve(p)
assert abs(sum(u_star) - 1.0) < 1e-10
assert abs(p.objective(u_star) - f_star) < 1e-14

for name in ['sbsa', 'sbsa-lsa', 'sb', 'admm']:
    r = m.solve(p, name, tol_b=1e-9, tol_f=1e-11, fista_max_iters=100000)
    assert r.converged, (name, r.termination)
    assert abs(r.objective - f_star) <= 1e-6 * abs(f_star), (name, r.objective, f_star)
    assert len(r.x) == 3 and len(r.u) == 2 and len(r.multiplier) == 2

capped = m.solve(p, max_outer=1, tol_b=1e-14)
assert capped.termination == 'max_outer' and not capped.converged

prob, naive = m.synth(seed=3, n_assets=3, periods=2)
assert prob.n == 6 and len(naive) == 6

try:
    m.solve(p, 'newton')
    raise AssertionError('unknown solver accepted')
except ValueError:
    pass
try:
    m.Problem([[1.0]], [[1.0, 2.0]], [1.0], 0.1, 0.1)
    raise AssertionError('shape mismatch accepted')
except ValueError:
    pass
try:
    m.Problem.load('/nonexistent/p.json')
    raise AssertionError('missing file accepted')
except OSError:
    pass
");
}
