use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn with_module(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let m = PyModule::new(py, "medtest").unwrap();
        medtest::register(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("medtest", m).unwrap();
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.print(py);
            panic!("python check failed");
        }
    });
}

#[test]
fn test_returns_a_result_dict() {
    with_module(
        cr#"
import random
rng = random.Random(4)
n, p = 50, 15
a = [float(rng.random() < 0.5) for _ in range(n)]
m = [[a[i] * (j < 2) + rng.gauss(0, 1) for j in range(p)] for i in range(n)]
y = [0.5 * a[i] + m[i][0] + rng.gauss(0, 1) for i in range(n)]
r = medtest.test(y, a, m)
assert 0.0 <= r["p_value"] <= 1.0
assert r["reject"] == (r["p_value"] < 0.05)
assert r["diagnostics"]["lambdas_used"]
b = medtest.test(y, a, m, tau=0.0)["p_value"]
c = medtest.test(y, a, m, tau=0.0, method="chisq")["p_value"]
assert abs(b - c) <= 1e-12
"#,
    );
}

#[test]
fn bad_inputs_raise_value_error() {
    with_module(
        cr#"
for kwargs in ({"alpha": 0.0}, {"method": "t"}, {"variant": "x"}):
    try:
        medtest.test([1.0, 2.0, 3.0], [0.0, 1.0, 0.0], [[1.0], [2.0], [0.5]], **kwargs)
    except ValueError:
        pass
    else:
        raise AssertionError(kwargs)
try:
    medtest.test([1.0, 2.0], [0.0, 1.0], [[1.0, 2.0], [3.0]])
except ValueError as e:
    assert "row 2" in str(e)
else:
    raise AssertionError("ragged rows accepted")
"#,
    );
}

#[test]
fn simulate_matches_across_threads() {
    with_module(
        cr#"
plan = '''
methods = ["bonf-1"]
[[scenario]]
n = 30
theta_m = "zero"
beta_a = "zero"
'''
one = medtest.simulate(plan, reps=3, seed=2, threads=1)
two = medtest.simulate(plan, reps=3, seed=2, threads=3)
assert one == two and one.count("\n") == 2
assert "reps" in medtest.simulate(plan, reps=1, format="text")
"#,
    );
}
