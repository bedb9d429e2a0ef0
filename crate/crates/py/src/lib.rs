//! Python bindings: disassembly, control-flow graphs, and the built-in
//! detector pipeline, returned as plain Python data structures.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use evmscan::cfg::build_cfg;
use evmscan::detectors::{default_registry, run_all};
use evmscan::disasm::{decode_hex, disassemble};
use evmscan::model::{Contract, ContractOrigin};
use evmscan::pragma::{extract_pragmas, parse_constraint, parse_version};

type PyObject = Py<PyAny>;

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<PyObject> {
    match value {
        serde_json::Value::Null => Ok(py.None()),
        serde_json::Value::Bool(b) => b.into_py_any(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)
            }
        }
        serde_json::Value::String(s) => s.into_py_any(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py_any(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let json = serde_json::to_value(value)
        .map_err(|e| PyValueError::new_err(format!("serialization failed: {e}")))?;
    json_to_py(py, &json)
}

fn bytecode_from(hex_text: &str) -> PyResult<Vec<u8>> {
    decode_hex(hex_text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Total decoding of a hex bytecode string into instruction dicts.
#[pyfunction]
fn disassemble_hex(py: Python<'_>, bytecode_hex: &str) -> PyResult<PyObject> {
    let instructions = disassemble(&bytecode_from(bytecode_hex)?);
    serialize_to_py(py, &instructions)
}

/// Basic blocks and edges of the bytecode's control-flow graph.
#[pyfunction]
fn control_flow_graph(py: Python<'_>, bytecode_hex: &str) -> PyResult<PyObject> {
    let cfg = build_cfg(disassemble(&bytecode_from(bytecode_hex)?));
    serialize_to_py(py, &cfg)
}

/// Runs every enabled built-in detector over bytecode and optional Solidity
/// source; returns finding dicts.
#[pyfunction]
#[pyo3(signature = (bytecode_hex, source=None))]
fn scan(py: Python<'_>, bytecode_hex: &str, source: Option<String>) -> PyResult<PyObject> {
    let bytecode = bytecode_from(bytecode_hex)?;
    let contract = Contract::new(None, bytecode, source, ContractOrigin::LocalFile)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let cfg = build_cfg(disassemble(&contract.bytecode));
    let findings = run_all(&contract, &cfg, &default_registry());
    serialize_to_py(py, &findings)
}

/// Ids of the built-in detectors, in execution order.
#[pyfunction]
fn detector_ids() -> Vec<String> {
    default_registry().ids().map(str::to_string).collect()
}

/// `pragma solidity` constraint strings found in Solidity source.
#[pyfunction]
fn solidity_pragmas(source: &str) -> Vec<String> {
    extract_pragmas(source)
}

/// True when `constraint` admits some compiler version >= `floor`.
#[pyfunction]
fn pragma_admits_at_or_above(constraint: &str, floor: &str) -> PyResult<bool> {
    let floor = parse_version(floor).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let parsed = parse_constraint(constraint).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(parsed.admits_at_or_above(floor))
}

#[pymodule]
fn evmscan_py(module: &Bound<'_, PyModule>) -> PyResult<()> {
    module.add_function(wrap_pyfunction!(disassemble_hex, module)?)?;
    module.add_function(wrap_pyfunction!(control_flow_graph, module)?)?;
    module.add_function(wrap_pyfunction!(scan, module)?)?;
    module.add_function(wrap_pyfunction!(detector_ids, module)?)?;
    module.add_function(wrap_pyfunction!(solidity_pragmas, module)?)?;
    module.add_function(wrap_pyfunction!(pragma_admits_at_or_above, module)?)?;
    Ok(())
}
