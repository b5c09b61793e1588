use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;

/// Runs python/smoke_test.py against the module compiled into this test.
#[test]
fn python_smoke_script_passes() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../python/smoke_test.py");
    let code = CString::new(std::fs::read_to_string(path).unwrap()).unwrap();
    Python::initialize();
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(nsamc_py::nsamc_py)(py);
        let modules = py.import("sys").unwrap().getattr("modules").unwrap();
        modules.set_item("nsamc_py", module).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("__name__", "__main__").unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("smoke script failed");
        }
    });
}
