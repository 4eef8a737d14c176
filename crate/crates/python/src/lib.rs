//! Python bindings. Structured results cross the boundary as JSON and come
//! out as plain dicts and lists.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::Serialize;

use rplsim::attacks::{AdversaryType, AttackBehavior};
use rplsim::messages::{decode, encode, ControlMessage, Frame};
use rplsim::scenarios::{self, Experiment, Overrides, ScenarioConfig};
use rplsim::security::{Key, SecurityContext, SecurityMode};
use rplsim::simnet::run_round;
use rplsim::trace::{read_jsonl, write_jsonl, TraceEvent};
use rplsim::types::{NodeId, SimTime};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (s,))
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let s: String = py
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&s).map_err(value_err)
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(value_err)
}

/// A resolved scenario: topology, security mode, adversary and run length.
#[pyclass(module = "rplsim")]
struct Scenario {
    cfg: ScenarioConfig,
}

#[pymethods]
impl Scenario {
    /// One of the 16 cells on the canonical deployment, e.g.
    /// `Scenario.canonical("psm-i", "neighbor")`.
    #[staticmethod]
    fn canonical(experiment: &str, attack: &str) -> PyResult<Self> {
        let e: Experiment = parse(experiment)?;
        let a: AttackBehavior = parse(attack)?;
        Ok(Self {
            cfg: ScenarioConfig::canonical(e, a),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, seed=None, rounds=None, duration_s=None, mode=None, attack=None, adversary=None))]
    fn load(
        path: PathBuf,
        seed: Option<u64>,
        rounds: Option<u32>,
        duration_s: Option<u64>,
        mode: Option<&str>,
        attack: Option<&str>,
        adversary: Option<&str>,
    ) -> PyResult<Self> {
        let overrides = Overrides {
            seed,
            rounds,
            duration_s,
            mode: mode.map(parse::<SecurityMode>).transpose()?,
            attack: attack.map(parse::<AttackBehavior>).transpose()?,
            adversary_type: adversary.map(parse::<AdversaryType>).transpose()?,
        };
        scenarios::load_scenario(&path, &overrides)
            .map(|cfg| Self { cfg })
            .map_err(value_err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.cfg.name
    }

    #[getter]
    fn mode(&self) -> String {
        format!("{:?}", self.cfg.sim.mode).to_lowercase()
    }

    #[getter]
    fn attack(&self) -> &'static str {
        self.cfg
            .sim
            .adversary
            .as_ref()
            .map_or("none", |a| a.behavior.slug())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.cfg.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.cfg.seed = seed;
    }

    #[getter]
    fn rounds(&self) -> u32 {
        self.cfg.rounds
    }

    #[setter]
    fn set_rounds(&mut self, rounds: u32) {
        self.cfg.rounds = rounds;
    }

    #[getter]
    fn duration_s(&self) -> f64 {
        self.cfg.sim.duration.as_secs_f64()
    }

    #[setter]
    fn set_duration_s(&mut self, secs: u64) {
        self.cfg.sim.duration = SimTime::from_secs(secs);
    }

    /// Runs every round and returns `{name, seed, rounds, summary, modal_dodag}`.
    fn run<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let cfg = self.cfg.clone();
        let res = py
            .detach(move || scenarios::run_experiment(&cfg))
            .map_err(runtime_err)?;
        to_py(py, &res)
    }

    /// Runs a single round and returns its trace.
    fn run_round(&self, py: Python<'_>, round: u32) -> PyResult<Trace> {
        let sim = self.cfg.sim.clone();
        let seed = scenarios::round_seed(self.cfg.seed, round);
        py.detach(move || run_round(sim, seed))
            .map(|events| Trace { events })
            .map_err(runtime_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, mode={}, attack={}, rounds={}, seed={})",
            self.cfg.name,
            self.mode(),
            self.attack(),
            self.cfg.rounds,
            self.cfg.seed
        )
    }
}

/// Event trace of one simulated round.
#[pyclass(module = "rplsim")]
struct Trace {
    events: Vec<TraceEvent>,
}

#[pymethods]
impl Trace {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        read_jsonl(text.as_bytes())
            .map(|events| Self { events })
            .map_err(value_err)
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_jsonl(&self.events, &mut buf).map_err(runtime_err)?;
        String::from_utf8(buf).map_err(runtime_err)
    }

    fn __len__(&self) -> usize {
        self.events.len()
    }

    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.events)
    }

    /// Per-round metrics: PDR, latency, control counts, energy.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let m = rplsim::metrics::round_metrics(&self.events).map_err(runtime_err)?;
        to_py(py, &m)
    }

    /// Invariant violations; empty for a healthy trace.
    fn check<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &rplsim::check::check_trace(&self.events))
    }
}

/// Mean and Student-t 95% half-width, or `None` for an empty list.
#[pyfunction]
fn ci95<'py>(py: Python<'py>, values: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &rplsim::stats::ci95(&values))
}

/// Base wire encoding of a control message given as a dict with a `kind` key.
#[pyfunction]
fn encode_message<'py>(py: Python<'py>, msg: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyBytes>> {
    let m: ControlMessage = from_py(py, msg)?;
    Ok(PyBytes::new(py, &encode(&m)))
}

#[pyfunction]
fn decode_message<'py>(py: Python<'py>, data: &[u8]) -> PyResult<Bound<'py, PyAny>> {
    let m = decode(data).map_err(value_err)?;
    to_py(py, &m)
}

/// Secure-wraps `msg` under a hex key as the sender's first frame.
#[pyfunction]
fn seal<'py>(
    py: Python<'py>,
    key_hex: &str,
    msg: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyBytes>> {
    let m: ControlMessage = from_py(py, msg)?;
    let key = Key::from_hex(key_hex).map_err(value_err)?;
    let mut ctx = SecurityContext::new(m.sender(), SecurityMode::Psm, Some(key), 0);
    let env = ctx.secure_wrap(&m).map_err(runtime_err)?;
    Ok(PyBytes::new(py, &env.to_bytes()))
}

/// Verifies and decrypts a secure frame; raises `ValueError` on any failure.
#[pyfunction]
fn open<'py>(
    py: Python<'py>,
    key_hex: &str,
    frame: &[u8],
    claimed_sender: u16,
) -> PyResult<Bound<'py, PyAny>> {
    let key = Key::from_hex(key_hex).map_err(value_err)?;
    let env = match Frame::parse(frame).map_err(value_err)? {
        Frame::Secure(env) => env,
        Frame::Base(_) => return Err(value_err("not a secure frame")),
    };
    let mut ctx = SecurityContext::new(NodeId(0), SecurityMode::Psm, Some(key), 0);
    let m = ctx.open(&env, NodeId(claimed_sender)).map_err(value_err)?;
    to_py(py, &m)
}

/// `(experiment, attack)` slugs for the 16 matrix cells, scenario-major.
#[pyfunction]
fn matrix_cells() -> Vec<(&'static str, &'static str)> {
    scenarios::matrix_cells()
        .into_iter()
        .map(|(e, a)| (e.slug(), a.slug()))
        .collect()
}

#[pyfunction]
fn canonical_scenario_toml(experiment: &str, attack: &str) -> PyResult<String> {
    Ok(scenarios::canonical_scenario_toml(
        parse(experiment)?,
        parse(attack)?,
    ))
}

#[pymodule]
#[pyo3(name = "rplsim")]
fn rplsim_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Scenario>()?;
    m.add_class::<Trace>()?;
    m.add_function(wrap_pyfunction!(ci95, m)?)?;
    m.add_function(wrap_pyfunction!(encode_message, m)?)?;
    m.add_function(wrap_pyfunction!(decode_message, m)?)?;
    m.add_function(wrap_pyfunction!(seal, m)?)?;
    m.add_function(wrap_pyfunction!(open, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_cells, m)?)?;
    m.add_function(wrap_pyfunction!(canonical_scenario_toml, m)?)?;
    Ok(())
}
