//! Python bindings for the `access_csfq` simulator.

use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use access_csfq::csfq::{Admission, Amendment, CsfqConfig};
use access_csfq::experiment::{self, ExperimentError, ExperimentOptions};
use access_csfq::metrics::{self, MetricsError, Tally};
use access_csfq::scenario::parse_scenario;
use access_csfq::{
    Conformance, FifoQueue, FlowId, Packet, PacketKind, RunRecord, ScenarioSpec, Scheme, SimRng, SimTime,
};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_scheme(name: &str) -> PyResult<Scheme> {
    name.parse().map_err(value_err)
}

fn secs(s: f64) -> PyResult<SimTime> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(PyValueError::new_err(format!("time must be finite and non-negative, got {s}")));
    }
    Ok(SimTime::from_secs_f64(s))
}

fn metrics_err(e: MetricsError) -> PyErr {
    value_err(e)
}

/// A scenario: topology, scheme, estimator constants and subscribers.
#[pyclass(name = "Scenario", module = "access_csfq", skip_from_py_object)]
struct PyScenario {
    inner: ScenarioSpec,
}

#[pymethods]
impl PyScenario {
    /// The built-in 16-subscriber scenario.
    #[staticmethod]
    #[pyo3(signature = (scheme = "csfq1-tbm"))]
    fn reference(scheme: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ScenarioSpec::reference(parse_scheme(scheme)?),
        })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        parse_scenario(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn get_scheme(&self) -> &'static str {
        self.inner.scheme.name()
    }

    #[setter]
    fn set_scheme(&mut self, name: &str) -> PyResult<()> {
        self.inner.scheme = parse_scheme(name)?;
        Ok(())
    }

    #[getter]
    fn get_seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn get_repetitions(&self) -> u32 {
        self.inner.repetitions
    }

    #[setter]
    fn set_repetitions(&mut self, n: u32) {
        self.inner.repetitions = n;
    }

    #[getter]
    fn get_horizon(&self) -> f64 {
        self.inner.horizon.as_secs_f64()
    }

    #[setter]
    fn set_horizon(&mut self, s: f64) -> PyResult<()> {
        self.inner.horizon = secs(s)?;
        Ok(())
    }

    #[getter]
    fn subscribers(&self) -> usize {
        self.inner.subscribers.len()
    }

    /// Per-subscriber weights (token rate in Mb/s).
    fn weights(&self) -> Vec<f64> {
        self.inner.weights()
    }

    fn digest(&self) -> String {
        self.inner.digest()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(value_err)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(scheme={:?}, subscribers={}, horizon={}s, seed={})",
            self.inner.scheme.name(),
            self.inner.subscribers.len(),
            self.inner.horizon.as_secs_f64(),
            self.inner.seed
        )
    }
}

/// Outcome of one simulation run.
#[pyclass(name = "RunResult", module = "access_csfq", frozen)]
struct PyRunResult {
    inner: RunRecord,
}

fn tally_dict<'py>(py: Python<'py>, t: &Tally) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("packets", t.packets)?;
    d.set_item("bytes", t.bytes)?;
    Ok(d)
}

impl PyRunResult {
    fn check_flow(&self, flow: usize) -> PyResult<()> {
        if flow >= self.inner.flows.len() {
            return Err(PyIndexError::new_err(format!("no flow {flow}")));
        }
        Ok(())
    }
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn scheme(&self) -> &'static str {
        self.inner.scheme.name()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn digest(&self) -> &str {
        &self.inner.digest
    }

    #[getter]
    fn events(&self) -> u64 {
        self.inner.events
    }

    #[getter]
    fn flows(&self) -> usize {
        self.inner.flows.len()
    }

    fn group(&self, flow: usize) -> PyResult<String> {
        self.check_flow(flow)?;
        Ok(self.inner.flows[flow].group.clone())
    }

    /// Mean delivered rate of `flow` over `[start, end)` seconds, in bits/s.
    fn window_throughput(&self, flow: usize, start: f64, end: f64) -> PyResult<f64> {
        self.check_flow(flow)?;
        self.inner
            .window_throughput(flow, secs(start)?, secs(end)?)
            .map_err(metrics_err)
    }

    fn feeder_throughput(&self, start: f64, end: f64) -> PyResult<f64> {
        self.inner.feeder_throughput(secs(start)?, secs(end)?).map_err(metrics_err)
    }

    /// Per-flow throughput series in bits/s, one list per flow.
    #[pyo3(signature = (bin_width = 1.0))]
    fn throughput(&self, bin_width: f64) -> PyResult<Vec<Vec<f64>>> {
        metrics::bin_throughput(&self.inner, secs(bin_width)?).map_err(metrics_err)
    }

    /// Seconds after `after` until `flow` first averages `threshold_bps`
    /// over `window` seconds, or `None`.
    #[pyo3(signature = (flow, after, window = 5.0, threshold_bps = 9e6))]
    fn convergence_time(&self, flow: usize, after: f64, window: f64, threshold_bps: f64) -> PyResult<Option<f64>> {
        self.check_flow(flow)?;
        Ok(self
            .inner
            .convergence_time(flow, secs(after)?, secs(window)?, threshold_bps)
            .map_err(metrics_err)?
            .map(SimTime::as_secs_f64))
    }

    fn total_inversions(&self) -> u64 {
        self.inner.total_inversions()
    }

    /// Packet and byte counters of one flow.
    fn counters<'py>(&self, py: Python<'py>, flow: usize) -> PyResult<Bound<'py, PyDict>> {
        self.check_flow(flow)?;
        let c = &self.inner.flows[flow].counters;
        let d = PyDict::new(py);
        d.set_item("sent", tally_dict(py, &c.sent)?)?;
        d.set_item("marked_conformant", tally_dict(py, &c.marked_conformant)?)?;
        d.set_item("marked_nonconformant", tally_dict(py, &c.marked_nonconformant)?)?;
        d.set_item("delivered", tally_dict(py, &c.delivered())?)?;
        d.set_item("dropped_prob", tally_dict(py, &c.dropped_prob)?)?;
        d.set_item("dropped_overflow_conformant", tally_dict(py, &c.dropped_overflow_conformant)?)?;
        d.set_item(
            "dropped_overflow_nonconformant",
            tally_dict(py, &c.dropped_overflow_nonconformant)?,
        )?;
        d.set_item("in_flight", tally_dict(py, &c.in_flight)?)?;
        d.set_item("inversions", c.inversions)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(scheme={:?}, seed={}, flows={}, events={})",
            self.inner.scheme.name(),
            self.inner.seed,
            self.inner.flows.len(),
            self.inner.events
        )
    }
}

/// Runs one repetition of `scenario` with its current seed.
#[pyfunction]
fn run(py: Python<'_>, scenario: &PyScenario) -> PyResult<PyRunResult> {
    let spec = scenario.inner.clone();
    let record = py.detach(|| access_csfq::run(&spec)).map_err(value_err)?;
    Ok(PyRunResult { inner: record })
}

/// Runs all repetitions and writes the CSV outputs; returns the file paths.
#[pyfunction]
#[pyo3(signature = (scenario, out_dir, bin_width = 1.0, windows = None))]
fn run_experiment(
    py: Python<'_>,
    scenario: &PyScenario,
    out_dir: PathBuf,
    bin_width: f64,
    windows: Option<Vec<(f64, f64)>>,
) -> PyResult<Vec<PathBuf>> {
    let spec = scenario.inner.clone();
    let windows = match windows {
        Some(w) => w
            .into_iter()
            .map(|(a, b)| Ok((secs(a)?, secs(b)?)))
            .collect::<PyResult<Vec<_>>>()?,
        None => experiment::default_windows(spec.horizon),
    };
    let opts = ExperimentOptions {
        out_dir,
        bin_width: secs(bin_width)?,
        windows,
    };
    match py.detach(|| experiment::run_experiment(&spec, &opts)) {
        Ok(out) => Ok(out.files),
        Err(ExperimentError::Io { path, source }) => Err(PyOSError::new_err(format!("{}: {source}", path.display()))),
        Err(e) => Err(value_err(e)),
    }
}

/// Normalized weighted fair rate for the given excess bandwidth.
#[pyfunction]
fn solve_fair_rate(excess: f64, weights: Vec<f64>, rates: Vec<f64>) -> PyResult<f64> {
    access_csfq::solve_fair_rate(excess, &weights, &rates).map_err(value_err)
}

fn conformance_name(c: Conformance) -> &'static str {
    match c {
        Conformance::Unmetered => "unmetered",
        Conformance::Conformant => "conformant",
        Conformance::NonConformant => "nonconformant",
    }
}

/// Single-rate token bucket meter; starts full.
#[pyclass(name = "TokenBucketMeter", module = "access_csfq")]
struct PyMeter {
    inner: access_csfq::TokenBucketMeter,
    seq: u64,
}

#[pymethods]
impl PyMeter {
    #[new]
    fn new(rate_bps: f64, bucket_bytes: u64) -> PyResult<Self> {
        if !(rate_bps.is_finite() && rate_bps > 0.0) || bucket_bytes == 0 {
            return Err(PyValueError::new_err("rate and bucket size must be positive"));
        }
        Ok(Self {
            inner: access_csfq::TokenBucketMeter::new(rate_bps, bucket_bytes, SimTime::ZERO),
            seq: 0,
        })
    }

    /// Marks a packet of `length` bytes arriving at `now` seconds.
    fn meter(&mut self, length: u32, now: f64) -> PyResult<&'static str> {
        if length == 0 {
            return Err(PyValueError::new_err("length must be positive"));
        }
        let mut p = Packet::new(FlowId(0), length, self.seq, PacketKind::UdpData, SimTime::ZERO);
        self.seq += 1;
        Ok(conformance_name(self.inner.meter(&mut p, secs(now)?)))
    }

    #[getter]
    fn tokens(&self) -> f64 {
        self.inner.tokens()
    }
}

/// Exponential-average rate estimator.
#[pyclass(name = "RateEstimator", module = "access_csfq")]
struct PyEstimator {
    inner: access_csfq::ExpAvgEstimator,
}

#[pymethods]
impl PyEstimator {
    #[new]
    fn new(k: f64) -> PyResult<Self> {
        let k = secs(k)?;
        if k == SimTime::ZERO {
            return Err(PyValueError::new_err("averaging constant must be positive"));
        }
        Ok(Self {
            inner: access_csfq::ExpAvgEstimator::new(k),
        })
    }

    /// Feeds one arrival and returns the new estimate in bits/s.
    fn update(&mut self, now: f64, length: u32) -> PyResult<f64> {
        Ok(self.inner.update(secs(now)?, length))
    }

    #[getter]
    fn rate(&self) -> f64 {
        self.inner.rate()
    }
}

/// CSFQ admission in front of a FIFO, driven packet by packet.
#[pyclass(name = "CsfqController", module = "access_csfq")]
struct PyCsfq {
    ctl: access_csfq::CsfqController,
    fifo: FifoQueue,
    rng: SimRng,
    seq: u64,
}

#[pymethods]
impl PyCsfq {
    #[new]
    #[pyo3(signature = (capacity_bps, weights, amendment = false, fifo_bytes = 16_000_000, k = 0.1, k_alpha = 0.2, seed = 1))]
    fn new(
        capacity_bps: f64,
        weights: Vec<f64>,
        amendment: bool,
        fifo_bytes: u64,
        k: f64,
        k_alpha: f64,
        seed: u64,
    ) -> PyResult<Self> {
        if !(capacity_bps.is_finite() && capacity_bps > 0.0) {
            return Err(PyValueError::new_err("capacity must be positive"));
        }
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(PyValueError::new_err("weights must be positive"));
        }
        let config = CsfqConfig {
            capacity_bps,
            k: secs(k)?,
            k_alpha: secs(k_alpha)?,
            amendment: amendment.then(Amendment::default),
        };
        Ok(Self {
            ctl: access_csfq::CsfqController::new(config, weights),
            fifo: FifoQueue::new(fifo_bytes),
            rng: SimRng::new(seed),
            seq: 0,
        })
    }

    /// Offers a metered packet; returns `enqueued`, `dropped_prob` or
    /// `dropped_overflow`.
    fn offer(&mut self, flow: usize, length: u32, conformant: bool, now: f64) -> PyResult<&'static str> {
        if flow >= self.ctl.weights().len() {
            return Err(PyIndexError::new_err(format!("no flow {flow}")));
        }
        if length == 0 {
            return Err(PyValueError::new_err("length must be positive"));
        }
        let mut p = Packet::new(FlowId(flow as u16), length, self.seq, PacketKind::UdpData, SimTime::ZERO);
        self.seq += 1;
        p.conformance = if conformant {
            Conformance::Conformant
        } else {
            Conformance::NonConformant
        };
        Ok(match self.ctl.on_packet(&mut self.fifo, p, secs(now)?, &mut self.rng) {
            Admission::Enqueued => "enqueued",
            Admission::DroppedProb => "dropped_prob",
            Admission::DroppedOverflow => "dropped_overflow",
        })
    }

    /// Removes the head of the FIFO; returns `(flow, length)` or `None`.
    fn dequeue(&mut self) -> Option<(u16, u32)> {
        self.fifo.pop().map(|p| (p.flow.0, p.length))
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.ctl.alpha()
    }

    #[getter]
    fn excess(&self) -> f64 {
        self.ctl.excess()
    }

    #[getter]
    fn congested(&self) -> bool {
        self.ctl.is_congested()
    }

    #[getter]
    fn occupancy(&self) -> u64 {
        self.fifo.occupancy()
    }
}

#[pymodule(name = "access_csfq")]
pub fn access_csfq_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("SCHEMES", Scheme::ALL.iter().map(|s| s.name()).collect::<Vec<_>>())?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyMeter>()?;
    m.add_class::<PyEstimator>()?;
    m.add_class::<PyCsfq>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(solve_fair_rate, m)?)?;
    Ok(())
}
