//! Grid data model, case-file parsing/serialization, and validation.
//!
//! The case format is a strict, versioned JSON document (version 1). Unknown
//! fields are rejected, numbers round-trip at full precision, and
//! serialization is byte-stable so case files can be diffed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A bus (node) of the transmission network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    /// Nodal load in MW.
    pub load_mw: f64,
    /// Exactly one bus per network is the angle reference.
    pub is_reference: bool,
}

/// A generating unit attached to a bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub id: u32,
    pub bus: u32,
    pub pmin_mw: f64,
    pub pmax_mw: f64,
    pub cost_per_mwh: f64,
    /// Ramping capability. Used as a learning feature only; the
    /// single-interval dispatch model does not constrain it.
    pub ramp_mw_per_min: f64,
}

/// A transmission line between two buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: u32,
    #[serde(rename = "from")]
    pub from_bus: u32,
    #[serde(rename = "to")]
    pub to_bus: u32,
    /// Series reactance, per-unit on the system base.
    pub x_pu: f64,
    /// Thermal rating in MW.
    pub rate_a_mw: f64,
}

/// Static description of a grid: buses, generators, lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub lines: Vec<Line>,
}

/// Default system base power in MVA.
pub const DEFAULT_BASE_MVA: f64 = 100.0;

impl Network {
    /// Empty network with the default 100 MVA base.
    pub fn new(name: impl Into<String>) -> Self {
        Network {
            name: name.into(),
            base_mva: DEFAULT_BASE_MVA,
            buses: Vec::new(),
            generators: Vec::new(),
            lines: Vec::new(),
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn generator(&self, id: u32) -> Option<&Generator> {
        self.generators.iter().find(|g| g.id == id)
    }

    pub fn line(&self, id: u32) -> Option<&Line> {
        self.lines.iter().find(|l| l.id == id)
    }

    /// The reference bus id. Only meaningful on a validated network.
    pub fn reference_bus(&self) -> Option<u32> {
        self.buses.iter().find(|b| b.is_reference).map(|b| b.id)
    }

    /// Base load profile as a bus id -> MW map.
    pub fn base_loads(&self) -> BTreeMap<u32, f64> {
        self.buses.iter().map(|b| (b.id, b.load_mw)).collect()
    }

    pub fn line_ids(&self) -> BTreeSet<u32> {
        self.lines.iter().map(|l| l.id).collect()
    }

    pub fn generator_ids(&self) -> BTreeSet<u32> {
        self.generators.iter().map(|g| g.id).collect()
    }

    /// Generators attached to a given bus, in declaration order.
    pub fn generators_at(&self, bus: u32) -> impl Iterator<Item = &Generator> {
        self.generators.iter().filter(move |g| g.bus == bus)
    }
}

/// Errors raised while reading a case document.
#[derive(Debug, Error)]
pub enum CaseError {
    /// Malformed document; the message carries line/column position.
    #[error("case syntax error: {0}")]
    Syntax(String),
    #[error("unsupported case version {found} (this tool reads version {expected})")]
    VersionMismatch { found: i64, expected: i64 },
    /// Structurally valid document that does not match the schema.
    #[error("case schema error: {0}")]
    Schema(String),
    /// Parsed cleanly but failed validation.
    #[error("invalid case: {0}")]
    Invalid(ValidationReport),
}

const CASE_VERSION: i64 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDoc {
    version: i64,
    name: String,
    base_mva: f64,
    buses: Vec<Bus>,
    generators: Vec<Generator>,
    lines: Vec<Line>,
}

/// Parse and validate a version-1 case document.
pub fn parse_case(text: &str) -> Result<Network, CaseError> {
    parse_case_with(text, &ValidateOptions::default())
}

/// [`parse_case`] with explicit validation options.
pub fn parse_case_with(text: &str, options: &ValidateOptions) -> Result<Network, CaseError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CaseError::Syntax(e.to_string()))?;
    match value.get("version") {
        Some(v) => {
            let found = v.as_i64().unwrap_or(-1);
            if found != CASE_VERSION {
                return Err(CaseError::VersionMismatch {
                    found,
                    expected: CASE_VERSION,
                });
            }
        }
        None => return Err(CaseError::Schema("missing `version` field".into())),
    }
    let doc: CaseDoc =
        serde_json::from_value(value).map_err(|e| CaseError::Schema(e.to_string()))?;
    let net = Network {
        name: doc.name,
        base_mva: doc.base_mva,
        buses: doc.buses,
        generators: doc.generators,
        lines: doc.lines,
    };
    let report = validate_with(&net, options);
    if report.is_valid() {
        Ok(net)
    } else {
        Err(CaseError::Invalid(report))
    }
}

/// Serialize a network to the canonical version-1 case document.
///
/// Output is byte-stable: `parse_case(serialize_case(n))` equals `n` and
/// serializing twice yields identical bytes.
pub fn serialize_case(net: &Network) -> String {
    let doc = CaseDoc {
        version: CASE_VERSION,
        name: net.name.clone(),
        base_mva: net.base_mva,
        buses: net.buses.clone(),
        generators: net.generators.clone(),
        lines: net.lines.clone(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("case serialization cannot fail");
    out.push('\n');
    out
}

/// One violated invariant, naming the offending record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Record kind: "bus", "generator", "line", or "network".
    pub record: String,
    /// Offending record ids (empty for whole-network violations).
    pub ids: Vec<u32>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.record, self.message)
    }
}

/// Result of validating a network; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, record: &str, ids: Vec<u32>, message: String) {
        self.violations.push(Violation {
            record: record.into(),
            ids,
            message,
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", lines.join("; "))
    }
}

/// Validation knobs.
#[derive(Debug, Clone)]
pub struct ValidateOptions {
    /// Negative loads are rejected by default; set to accept them
    /// (e.g. for cases with behind-the-meter injection).
    pub allow_negative_loads: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        ValidateOptions {
            allow_negative_loads: false,
        }
    }
}

/// Validate every type invariant plus bus-graph connectivity.
pub fn validate(net: &Network) -> ValidationReport {
    validate_with(net, &ValidateOptions::default())
}

/// [`validate`] with explicit options.
pub fn validate_with(net: &Network, options: &ValidateOptions) -> ValidationReport {
    let mut report = ValidationReport::default();

    // Bus invariants.
    let mut ids_ok = true;
    let mut seen = BTreeMap::new();
    for bus in &net.buses {
        *seen.entry(bus.id).or_insert(0u32) += 1;
    }
    for (id, count) in &seen {
        if *count > 1 {
            ids_ok = false;
            report.push("bus", vec![*id], format!("duplicate bus id {id}"));
        }
    }
    let refs: Vec<u32> = net
        .buses
        .iter()
        .filter(|b| b.is_reference)
        .map(|b| b.id)
        .collect();
    if refs.is_empty() {
        report.push("network", vec![], "no reference bus".into());
    } else if refs.len() > 1 {
        report.push(
            "network",
            refs.clone(),
            format!(
                "multiple reference buses: {}",
                refs.iter()
                    .map(|id| id.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        );
    }
    if !options.allow_negative_loads {
        for bus in &net.buses {
            if bus.load_mw < 0.0 {
                report.push(
                    "bus",
                    vec![bus.id],
                    format!("bus {} has negative load {} MW", bus.id, bus.load_mw),
                );
            }
        }
    }

    let bus_ids: BTreeSet<u32> = net.buses.iter().map(|b| b.id).collect();

    // Generator invariants.
    let mut gen_seen = BTreeMap::new();
    for gen in &net.generators {
        *gen_seen.entry(gen.id).or_insert(0u32) += 1;
    }
    for (id, count) in &gen_seen {
        if *count > 1 {
            report.push("generator", vec![*id], format!("duplicate generator id {id}"));
        }
    }
    let mut refs_ok = true;
    for gen in &net.generators {
        if !(0.0 <= gen.pmin_mw && gen.pmin_mw <= gen.pmax_mw) {
            report.push(
                "generator",
                vec![gen.id],
                format!(
                    "generator {} limits violate 0 <= pmin <= pmax ({} / {})",
                    gen.id, gen.pmin_mw, gen.pmax_mw
                ),
            );
        }
        if gen.cost_per_mwh < 0.0 {
            report.push(
                "generator",
                vec![gen.id],
                format!("generator {} has negative cost {}", gen.id, gen.cost_per_mwh),
            );
        }
        if gen.ramp_mw_per_min < 0.0 {
            report.push(
                "generator",
                vec![gen.id],
                format!(
                    "generator {} has negative ramp rate {}",
                    gen.id, gen.ramp_mw_per_min
                ),
            );
        }
        if !bus_ids.contains(&gen.bus) {
            refs_ok = false;
            report.push(
                "generator",
                vec![gen.id],
                format!("generator {} references unknown bus {}", gen.id, gen.bus),
            );
        }
    }

    // Line invariants.
    let mut line_seen = BTreeMap::new();
    for line in &net.lines {
        *line_seen.entry(line.id).or_insert(0u32) += 1;
    }
    for (id, count) in &line_seen {
        if *count > 1 {
            report.push("line", vec![*id], format!("duplicate line id {id}"));
        }
    }
    for line in &net.lines {
        if !(line.x_pu > 0.0) {
            report.push(
                "line",
                vec![line.id],
                format!("line {} has non-positive reactance {}", line.id, line.x_pu),
            );
        }
        if !(line.rate_a_mw > 0.0) {
            report.push(
                "line",
                vec![line.id],
                format!("line {} has non-positive rating {}", line.id, line.rate_a_mw),
            );
        }
        if line.from_bus == line.to_bus {
            report.push(
                "line",
                vec![line.id],
                format!("line {} connects bus {} to itself", line.id, line.from_bus),
            );
        }
        for endpoint in [line.from_bus, line.to_bus] {
            if !bus_ids.contains(&endpoint) {
                refs_ok = false;
                report.push(
                    "line",
                    vec![line.id],
                    format!("line {} references unknown bus {}", line.id, endpoint),
                );
            }
        }
    }

    if !(net.base_mva > 0.0) {
        report.push(
            "network",
            vec![],
            format!("base_mva must be positive, got {}", net.base_mva),
        );
    }

    // Connectivity is only meaningful once bus ids are unique and every
    // cross-reference resolves.
    if ids_ok && refs_ok && net.buses.len() > 1 {
        let islands = islands(net);
        if islands.len() > 1 {
            let listing = islands
                .iter()
                .map(|island| {
                    format!(
                        "[{}]",
                        island
                            .iter()
                            .map(|id| id.to_string())
                            .collect::<Vec<_>>()
                            .join(", ")
                    )
                })
                .collect::<Vec<_>>()
                .join(" ");
            report.push(
                "network",
                islands.iter().flatten().copied().collect(),
                format!("bus graph is disconnected into {} islands: {listing}", islands.len()),
            );
        }
    }

    report
}

/// Connected components of the bus graph, each sorted by bus id.
fn islands(net: &Network) -> Vec<Vec<u32>> {
    let ids: Vec<u32> = net.buses.iter().map(|b| b.id).collect();
    let index: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();

    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for line in &net.lines {
        let (a, b) = (index[&line.from_bus], index[&line.to_bus]);
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }

    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        groups.entry(find(&mut parent, i)).or_default().push(*id);
    }
    let mut result: Vec<Vec<u32>> = groups.into_values().collect();
    for island in &mut result {
        island.sort_unstable();
    }
    result.sort();
    result
}
