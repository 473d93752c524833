//! Python bindings for the reduced optimal power flow toolkit.
//!
//! The module mirrors the Rust surface: `Network`, `Dataset`, `Model`, and
//! `Solution` classes plus `solve`, `generate`, `train`, `predict`,
//! `expand_graph`, and `benchmark` functions. Containers cross the boundary
//! as plain dicts and lists so results drop straight into numpy or pandas.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use ropf_core::bench::{run_benchmark, BenchConfig, Screening};
use ropf_core::datagen::{generate as generate_dataset, read_dataset, write_dataset, GenConfig};
use ropf_core::gnn::{
    classify, predict_lines, predict_max_gens, train as train_model, Stage, TrainConfig,
    TrainHistory,
};
use ropf_core::graph::{build_features, expand, normalize_adjacency};
use ropf_core::grid::{parse_case, serialize_case, validate};
use ropf_core::opf::{
    solve_opf, solve_with_fallback, verify_solution, LoadVector, Method, RopfSpec,
};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_stage(stage: &str) -> PyResult<Stage> {
    match stage {
        "line" => Ok(Stage::Line),
        "gen" => Ok(Stage::Gen),
        other => Err(PyValueError::new_err(format!(
            "unknown stage {other:?}; expected \"line\" or \"gen\""
        ))),
    }
}

fn parse_method(method: &str) -> PyResult<Method> {
    match method {
        "fopf" => Ok(Method::Fopf),
        "ropfl" => Ok(Method::Ropfl),
        "ropfg" => Ok(Method::Ropfg),
        "ropflg" => Ok(Method::Ropflg),
        other => Err(PyValueError::new_err(format!(
            "unknown method {other:?}; expected fopf, ropfl, ropfg, or ropflg"
        ))),
    }
}

/// A grid case: buses, generators, and lines.
#[pyclass(name = "Network", module = "ropf_py")]
struct PyNetwork {
    inner: ropf_core::grid::Network,
}

#[pymethods]
impl PyNetwork {
    /// Parse a case from its JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyNetwork { inner: parse_case(text).map_err(value_err)? })
    }

    /// Read and parse a case file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(value_err)?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        serialize_case(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.to_json()).map_err(value_err)
    }

    /// Structural violations as human-readable strings; empty means valid.
    fn validate(&self) -> Vec<String> {
        validate(&self.inner).violations.iter().map(|v| v.to_string()).collect()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn base_mva(&self) -> f64 {
        self.inner.base_mva
    }

    #[getter]
    fn n_buses(&self) -> usize {
        self.inner.buses.len()
    }

    #[getter]
    fn n_generators(&self) -> usize {
        self.inner.generators.len()
    }

    #[getter]
    fn n_lines(&self) -> usize {
        self.inner.lines.len()
    }

    #[getter]
    fn reference_bus(&self) -> Option<u32> {
        self.inner.reference_bus()
    }

    /// Bus id -> base-case load in MW.
    fn base_loads(&self) -> BTreeMap<u32, f64> {
        self.inner.base_loads()
    }

    fn line_ids(&self) -> Vec<u32> {
        self.inner.line_ids().into_iter().collect()
    }

    fn generator_ids(&self) -> Vec<u32> {
        self.inner.generators.iter().map(|g| g.id).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Network(name={:?}, buses={}, generators={}, lines={})",
            self.inner.name,
            self.inner.buses.len(),
            self.inner.generators.len(),
            self.inner.lines.len()
        )
    }
}

/// One solved dispatch problem.
#[pyclass(name = "Solution", module = "ropf_py")]
struct PySolution {
    inner: ropf_core::opf::OpfSolution,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter]
    fn status(&self) -> &'static str {
        match self.inner.status {
            ropf_core::lp::LpStatus::Optimal => "optimal",
            ropf_core::lp::LpStatus::Infeasible => "infeasible",
            ropf_core::lp::LpStatus::Unbounded => "unbounded",
        }
    }

    #[getter]
    fn objective_cost(&self) -> f64 {
        self.inner.objective_cost
    }

    /// Generator id -> dispatched MW.
    #[getter]
    fn pg_mw(&self) -> BTreeMap<u32, f64> {
        self.inner.pg_mw.clone()
    }

    /// Bus id -> voltage angle in radians.
    #[getter]
    fn theta_rad(&self) -> BTreeMap<u32, f64> {
        self.inner.theta_rad.clone()
    }

    /// Line id -> signed flow in MW (from -> to positive).
    #[getter]
    fn flow_mw(&self) -> BTreeMap<u32, f64> {
        self.inner.flow_mw.clone()
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.inner.iterations
    }

    #[getter]
    fn solve_time_s(&self) -> f64 {
        self.inner.solve_time_s
    }

    #[getter]
    fn fell_back(&self) -> bool {
        self.inner.fell_back
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(method={:?}, status={:?}, cost={}, fell_back={})",
            self.method(),
            self.status(),
            self.inner.objective_cost,
            self.inner.fell_back
        )
    }
}

/// Feasibility of a solution against the full constraint set.
#[pyclass(name = "Verification", module = "ropf_py")]
struct PyVerification {
    inner: ropf_core::opf::VerificationReport,
}

#[pymethods]
impl PyVerification {
    #[getter]
    fn feasible(&self) -> bool {
        self.inner.feasible
    }

    /// (generator id, excess MW) pairs.
    #[getter]
    fn gen_bound_violations(&self) -> Vec<(u32, f64)> {
        self.inner.gen_bound_violations.clone()
    }

    /// (line id, excess MW) pairs.
    #[getter]
    fn line_limit_violations(&self) -> Vec<(u32, f64)> {
        self.inner.line_limit_violations.clone()
    }

    /// (bus id, imbalance MW) pairs.
    #[getter]
    fn balance_violations(&self) -> Vec<(u32, f64)> {
        self.inner.balance_violations.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "Verification(feasible={}, violations={})",
            self.inner.feasible,
            self.inner.gen_bound_violations.len()
                + self.inner.line_limit_violations.len()
                + self.inner.balance_violations.len()
        )
    }
}

/// A labeled dataset of perturbed load profiles and their solved dispatches.
#[pyclass(name = "Dataset", module = "ropf_py")]
struct PyDataset {
    inner: ropf_core::datagen::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset { inner: read_dataset(&path).map_err(value_err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(&self.inner, &path).map_err(value_err)
    }

    fn __len__(&self) -> usize {
        self.inner.samples.len()
    }

    #[getter]
    fn case_name(&self) -> String {
        self.inner.header.case_name.clone()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.header.seed
    }

    #[getter]
    fn perturb(&self) -> f64 {
        self.inner.header.perturb
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.header.tau
    }

    /// Infeasible perturbations redrawn during generation.
    #[getter]
    fn redraws(&self) -> u64 {
        self.inner.header.redraws
    }

    /// The network the samples were generated from.
    fn network(&self) -> PyNetwork {
        PyNetwork { inner: self.inner.header.network.clone() }
    }

    /// One sample as a dict: sample_id, split, loads_mw, line_labels,
    /// gen_labels, fopf_cost.
    fn sample<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let sample = self
            .inner
            .samples
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("sample index {index} out of range")))?;
        let d = PyDict::new(py);
        d.set_item("sample_id", sample.sample_id)?;
        d.set_item(
            "split",
            match sample.split {
                ropf_core::datagen::Split::Train => "train",
                ropf_core::datagen::Split::Val => "val",
            },
        )?;
        d.set_item("loads_mw", sample.loads_mw.clone())?;
        d.set_item("line_labels", sample.line_labels.clone())?;
        d.set_item("gen_labels", sample.gen_labels.clone())?;
        d.set_item("fopf_cost", sample.fopf_cost)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(case={:?}, samples={}, seed={})",
            self.inner.header.case_name,
            self.inner.samples.len(),
            self.inner.header.seed
        )
    }
}

/// A trained screening model for one stage.
#[pyclass(name = "Model", module = "ropf_py")]
struct PyModel {
    inner: ropf_core::gnn::GnnModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: ropf_core::gnn::GnnModel::from_json(text).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(value_err)?;
        Self::from_json(&text)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.to_json()).map_err(value_err)
    }

    #[getter]
    fn stage(&self) -> &'static str {
        self.inner.stage.as_str()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.hidden_dim
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn decision_threshold(&self) -> f64 {
        self.inner.decision_threshold
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(stage={:?}, hidden_dim={}, n_layers={}, seed={})",
            self.inner.stage.as_str(),
            self.inner.hidden_dim,
            self.inner.n_layers,
            self.inner.seed
        )
    }
}

/// Solve one dispatch problem.
///
/// `monitored_lines=None` monitors every line; `fixed_max_gens` pins those
/// generators to their maximum output. With `fallback=True` (the default) a
/// reduced solution that fails full verification is replaced by the full
/// problem's solution, so the answer is always feasible.
#[pyfunction]
#[pyo3(signature = (net, loads=None, monitored_lines=None, fixed_max_gens=None, fallback=true))]
fn solve(
    net: &PyNetwork,
    loads: Option<BTreeMap<u32, f64>>,
    monitored_lines: Option<Vec<u32>>,
    fixed_max_gens: Option<Vec<u32>>,
    fallback: bool,
) -> PyResult<(PySolution, PyVerification)> {
    let loads: LoadVector = loads.unwrap_or_else(|| net.inner.base_loads());
    let spec = RopfSpec::new(
        monitored_lines
            .map(|v| v.into_iter().collect::<BTreeSet<u32>>())
            .unwrap_or_else(|| net.inner.line_ids()),
        fixed_max_gens.map(|v| v.into_iter().collect()).unwrap_or_default(),
    );
    let (solution, verification) = if fallback {
        solve_with_fallback(&net.inner, &loads, &spec).map_err(value_err)?
    } else {
        let solution = solve_opf(&net.inner, &loads, &spec).map_err(value_err)?;
        let verification = verify_solution(&net.inner, &loads, &solution);
        (solution, verification)
    };
    Ok((PySolution { inner: solution }, PyVerification { inner: verification }))
}

/// Sample perturbed load profiles, solve each full problem, and label the
/// congested lines and at-maximum generators.
#[pyfunction]
#[pyo3(signature = (net, n_samples, seed=0, perturb=0.10, tau=0.7, eps_gen=1e-6,
                    split=(0.9, 0.1), global_scale=false, record_timing=false))]
#[allow(clippy::too_many_arguments)]
fn generate(
    net: &PyNetwork,
    n_samples: u64,
    seed: u64,
    perturb: f64,
    tau: f64,
    eps_gen: f64,
    split: (f64, f64),
    global_scale: bool,
    record_timing: bool,
) -> PyResult<PyDataset> {
    let config = GenConfig {
        n_samples,
        perturb,
        tau,
        eps_gen,
        seed,
        split_fractions: split,
        global_scale,
        record_timing,
    };
    Ok(PyDataset { inner: generate_dataset(&net.inner, &config).map_err(value_err)? })
}

fn history_dict<'py>(py: Python<'py>, history: &TrainHistory) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("pos_weight", history.pos_weight)?;
    d.set_item("n_train", history.n_train)?;
    d.set_item("n_val", history.n_val)?;
    let epochs = PyList::empty(py);
    for e in &history.epochs {
        let row = PyDict::new(py);
        row.set_item("train_loss", e.train_loss)?;
        row.set_item("val_loss", e.val_loss)?;
        row.set_item("train_accuracy", e.train_accuracy)?;
        row.set_item("val_accuracy", e.val_accuracy)?;
        epochs.append(row)?;
    }
    d.set_item("epochs", epochs)?;
    Ok(d)
}

/// Train a screening model on a generated dataset. Returns the model and a
/// history dict with per-epoch loss/accuracy curves. `stage` is `"line"` or
/// `"gen"`; the gen stage needs the trained line model, whose predicted
/// congestion probabilities feed its input features.
#[pyfunction]
#[pyo3(signature = (dataset, stage, seed=0, epochs=100, hidden_dim=64, n_layers=3,
                    learning_rate=1e-3, pos_weight_cap=50.0, line_model=None))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    stage: &str,
    seed: u64,
    epochs: usize,
    hidden_dim: usize,
    n_layers: usize,
    learning_rate: f64,
    pos_weight_cap: f64,
    line_model: Option<&PyModel>,
) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let mut config = TrainConfig::new(parse_stage(stage)?, seed);
    config.epochs = epochs;
    config.hidden_dim = hidden_dim;
    config.n_layers = n_layers;
    config.learning_rate = learning_rate;
    config.pos_weight_cap = pos_weight_cap;
    let (model, history) =
        train_model(&config, &dataset.inner, line_model.map(|m| &m.inner)).map_err(value_err)?;
    Ok((PyModel { inner: model }, history_dict(py, &history)?))
}

/// Predict congested lines (and, with a gen model, at-maximum generators)
/// for one load profile. Returns a dict with `line_probs`, `line_labels`,
/// and optionally `gen_probs` / `gen_labels`, all keyed by id.
#[pyfunction]
#[pyo3(signature = (net, loads, line_model, gen_model=None))]
fn predict<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    loads: BTreeMap<u32, f64>,
    line_model: &PyModel,
    gen_model: Option<&PyModel>,
) -> PyResult<Bound<'py, PyDict>> {
    let graph = expand(&net.inner);
    let a_hat = normalize_adjacency(&graph);
    let x1 = build_features(&graph, &net.inner, &loads, None).map_err(value_err)?;
    let line_probs =
        predict_lines(&line_model.inner, &graph, &a_hat, &x1, &net.inner).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("line_labels", classify(&line_probs, line_model.inner.decision_threshold))?;
    if let Some(gen) = gen_model {
        let x2 =
            build_features(&graph, &net.inner, &loads, Some(&line_probs)).map_err(value_err)?;
        let gen_probs = predict_max_gens(&gen.inner, &graph, &a_hat, &x2, &net.inner, false)
            .map_err(value_err)?;
        d.set_item("gen_labels", classify(&gen_probs, gen.inner.decision_threshold))?;
        d.set_item("gen_probs", gen_probs)?;
    }
    d.set_item("line_probs", line_probs)?;
    Ok(d)
}

/// The node-split graph the models run on: every bus becomes a real node
/// and every generator a virtual node tied to its bus. Returns a dict with
/// `n_nodes`, `real_node_of_bus`, `virtual_node_of_gen`, and `edges`.
#[pyfunction]
fn expand_graph<'py>(py: Python<'py>, net: &PyNetwork) -> PyResult<Bound<'py, PyDict>> {
    let graph = expand(&net.inner);
    let d = PyDict::new(py);
    d.set_item("n_nodes", graph.n_nodes)?;
    d.set_item("real_node_of_bus", graph.real_node_of_bus.clone())?;
    d.set_item("virtual_node_of_gen", graph.virtual_node_of_gen.clone())?;
    d.set_item("edges", graph.edges.clone())?;
    Ok(d)
}

/// Benchmark the four methods on a dataset's samples. Screening uses the
/// two trained models, or the stored ground-truth labels when
/// `oracle_labels=True`. Returns a dict with per-method `rows`,
/// screening-`errors`, the per-sample `log`, and ready-to-write CSV texts.
#[pyfunction]
#[pyo3(signature = (net, dataset, line_model=None, gen_model=None, methods=None,
                    record_timing=false, oracle_labels=false, seed=0))]
#[allow(clippy::too_many_arguments)]
fn benchmark<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    dataset: &PyDataset,
    line_model: Option<&PyModel>,
    gen_model: Option<&PyModel>,
    methods: Option<Vec<String>>,
    record_timing: bool,
    oracle_labels: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let methods = match methods {
        Some(names) => names
            .iter()
            .map(|name| parse_method(name))
            .collect::<PyResult<Vec<Method>>>()?,
        None => Method::ALL.to_vec(),
    };
    let screening = if oracle_labels {
        Screening::OracleLabels
    } else {
        match (line_model, gen_model) {
            (Some(line), Some(gen)) => Screening::Models { line: &line.inner, gen: &gen.inner },
            _ => {
                return Err(PyValueError::new_err(
                    "benchmark needs line_model and gen_model unless oracle_labels=True",
                ))
            }
        }
    };
    let config = BenchConfig { methods, seed, record_timing };
    let output =
        run_benchmark(&net.inner, &dataset.inner.samples, screening, &config).map_err(value_err)?;

    let rows = PyList::empty(py);
    for row in &output.rows {
        let r = PyDict::new(py);
        r.set_item("method", row.method.as_str())?;
        r.set_item("n_samples", row.n_samples)?;
        r.set_item("mean_cost", row.mean_cost)?;
        r.set_item("mean_cost_pct", row.mean_cost_pct)?;
        r.set_item("total_solve_time_s", row.total_solve_time_s)?;
        r.set_item("time_saving_pct", row.time_saving_pct)?;
        r.set_item("mean_inference_time_s", row.mean_inference_time_s)?;
        r.set_item("fallback_count", row.fallback_count)?;
        r.set_item("violation_count", row.violation_count)?;
        rows.append(r)?;
    }
    let errors = PyDict::new(py);
    for (family, e) in
        [("lines", &output.errors.lines), ("generators", &output.errors.generators)]
    {
        let f = PyDict::new(py);
        f.set_item("false_positive_pct", e.false_positive_pct)?;
        f.set_item("false_negative_pct", e.false_negative_pct)?;
        f.set_item("total_error_pct", e.total_error_pct)?;
        errors.set_item(family, f)?;
    }
    let log = PyList::empty(py);
    for entry in &output.log {
        let l = PyDict::new(py);
        l.set_item("sample_id", entry.sample_id)?;
        l.set_item("method", entry.method.as_str())?;
        l.set_item("cost", entry.cost)?;
        l.set_item("solve_time_s", entry.solve_time_s)?;
        l.set_item("fell_back", entry.fell_back)?;
        l.set_item("n_monitored", entry.n_monitored)?;
        l.set_item("n_fixed", entry.n_fixed)?;
        log.append(l)?;
    }
    let d = PyDict::new(py);
    d.set_item("rows", rows)?;
    d.set_item("errors", errors)?;
    d.set_item("log", log)?;
    d.set_item("report_csv", ropf_core::bench::report_csv(&output.rows))?;
    d.set_item("errors_csv", ropf_core::bench::errors_csv(&output.errors))?;
    Ok(d)
}

#[pymodule]
fn ropf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyVerification>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(predict, m)?)?;
    m.add_function(wrap_pyfunction!(expand_graph, m)?)?;
    m.add_function(wrap_pyfunction!(benchmark, m)?)?;
    Ok(())
}
