use pyo3::prelude::*;
use pyo3::types::PyDict;

use dpcs_py::{fit, mixture_pmf, simulate_small, PyChain, PyDataset};

#[test]
fn simulate_fit_and_summarise_through_the_bindings() {
    Python::initialize();
    Python::attach(|py| {
        let (data, truth) = simulate_small(30, 5, 1.0, 2).unwrap();
        assert_eq!(truth.len(), 30);
        assert!(truth.iter().flatten().all(|&j| (1..=4).contains(&j)));
        let data = Bound::new(py, data).unwrap();
        let chain: PyChain = fit(py, &data.borrow(), Some("mnl_c"), Some(60), Some(10), None, Some(4), None).unwrap();
        assert_eq!(chain.inner.len(), 50);
        assert!(chain.inner.draws.iter().all(|d| d.beta.len() == 1));
        let bad = fit(py, &data.borrow(), Some("probit"), Some(5), None, None, None, None);
        assert!(bad.err().unwrap().is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}

#[test]
fn module_level_api_is_reachable_from_python() {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "dpcs_py").unwrap();
        m.add_class::<PyDataset>().unwrap();
        m.add_class::<PyChain>().unwrap();
        m.add_function(wrap_pyfunction!(fit, &m).unwrap()).unwrap();
        m.add_function(wrap_pyfunction!(mixture_pmf, &m).unwrap()).unwrap();
        let locals = PyDict::new(py);
        locals.set_item("m", &m).unwrap();
        py.run(
            c"
d = m.Dataset(3, 1, [(7, [1, 3], [0.1, 0.2, 0.3, 0.0, -0.1, 0.4], [])])
assert d.n == 1 and d.j == 3 and d.subject_ids == [7]
assert d.responses(0) == [1, 3]
assert d.validate() == []
ch = m.fit(d, variant='mnl_c', iters=20, burnin=0, seed=1)
assert len(ch) == 20
incl = ch.inclusion_probs()
assert incl[0][0] == 1.0 and incl[0][2] == 1.0
assert all(1 in s and 3 in s for s in ch.cs_point())
pmf = m.mixture_pmf([1.0], [[0.5, 0.5, 0.5]])
assert abs(sum(pmf) - 1.0) < 1e-12 and len(pmf) == 8
try:
    m.Dataset(3, 1, [(1, [0], [0.0, 0.0, 0.0], [])])
    raise AssertionError('zero label accepted')
except ValueError:
    pass
",
            None,
            Some(&locals),
        )
        .unwrap();
    });
}
