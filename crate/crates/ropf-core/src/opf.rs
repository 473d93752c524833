//! DC optimal power flow and its reduced variants.
//!
//! The full problem (FOPF) minimizes total generation cost subject to
//! generator limits, nodal balance, and thermal limits on every line, with
//! flows tied to bus angle differences. A [`RopfSpec`] shrinks the problem
//! two ways:
//!
//! * Unmonitored lines lose both their flow variable and their thermal
//!   limit; their angle-difference expression is substituted directly into
//!   the nodal balance rows. Dropping limits relaxes the problem.
//! * Generators in the fixed set are pinned at maximum output and move to
//!   the right-hand side as constants. Pinning variables restricts the
//!   problem.
//!
//! So cost(monitored-only) <= cost(full) <= cost(fixed-gens) whenever all
//! three are feasible, which the tests exercise. A reduced solution is
//! accepted only after verification against the full constraint set;
//! otherwise the full problem is re-solved ([`solve_with_fallback`]).

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Network;
use crate::lp::{solve_lp, LpProblem, LpStatus};

/// Nodal loads in MW, keyed by bus id. Must cover exactly the network's
/// buses.
pub type LoadVector = BTreeMap<u32, f64>;

/// The four dispatch methods benchmarked against each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Full problem: every line monitored, no generator pinned.
    Fopf,
    /// Only predicted-congested lines keep their limits.
    Ropfl,
    /// Predicted max-output generators are pinned at their maximum.
    Ropfg,
    /// Both reductions at once.
    Ropflg,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Fopf, Method::Ropfl, Method::Ropfg, Method::Ropflg];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fopf => "fopf",
            Method::Ropfl => "ropfl",
            Method::Ropfg => "ropfg",
            Method::Ropflg => "ropflg",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fopf" => Ok(Method::Fopf),
            "ropfl" => Ok(Method::Ropfl),
            "ropfg" => Ok(Method::Ropfg),
            "ropflg" => Ok(Method::Ropflg),
            other => Err(format!("unknown method `{other}` (expected fopf|ropfl|ropfg|ropflg)")),
        }
    }
}

/// Which lines keep their limits and which generators are pinned at
/// maximum output. The full problem is `(all lines, no generators)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RopfSpec {
    /// Lines whose flow variable and thermal limit are kept.
    pub monitored_lines: BTreeSet<u32>,
    /// Generators pinned at maximum output (their variable is eliminated).
    pub fixed_max_gens: BTreeSet<u32>,
}

impl RopfSpec {
    pub fn new(monitored_lines: BTreeSet<u32>, fixed_max_gens: BTreeSet<u32>) -> Self {
        RopfSpec {
            monitored_lines,
            fixed_max_gens,
        }
    }

    /// The full problem: everything monitored, nothing pinned.
    pub fn full(net: &Network) -> Self {
        RopfSpec {
            monitored_lines: net.line_ids(),
            fixed_max_gens: BTreeSet::new(),
        }
    }

    /// True when this spec is the full problem for `net`.
    pub fn is_full(&self, net: &Network) -> bool {
        self.fixed_max_gens.is_empty() && self.monitored_lines == net.line_ids()
    }

    /// Which of the four named methods this reduction shape corresponds to.
    pub fn method(&self, net: &Network) -> Method {
        let all_lines = self.monitored_lines == net.line_ids();
        match (all_lines, self.fixed_max_gens.is_empty()) {
            (true, true) => Method::Fopf,
            (false, true) => Method::Ropfl,
            (true, false) => Method::Ropfg,
            (false, false) => Method::Ropflg,
        }
    }
}

/// Inputs that reference records missing from the network.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum OpfError {
    #[error("loads reference unknown bus {0}")]
    UnknownBusInLoads(u32),
    #[error("no load entry for bus {0}")]
    MissingLoad(u32),
    #[error("spec monitors unknown line {0}")]
    UnknownLine(u32),
    #[error("spec pins unknown generator {0}")]
    UnknownGenerator(u32),
}

/// A dispatch solution. Maps are empty and the objective is zero unless
/// `status` is optimal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpfSolution {
    /// Shape of the reduction that produced this solution.
    pub method: Method,
    pub status: LpStatus,
    /// Total generation cost in currency per hour, pinned generators
    /// included.
    pub objective_cost: f64,
    /// Output of every generator in MW (pinned ones at their maximum).
    pub pg_mw: BTreeMap<u32, f64>,
    /// Bus voltage angles in radians, zero at the reference bus.
    pub theta_rad: BTreeMap<u32, f64>,
    /// Flow on every line in MW, recovered from the angles, so values exist
    /// even for unmonitored lines.
    pub flow_mw: BTreeMap<u32, f64>,
    pub iterations: usize,
    /// Wall-clock seconds inside the linear solver. Summed over both
    /// attempts when a fallback re-solve happened.
    pub solve_time_s: f64,
    /// Wall-clock seconds assembling the problem.
    pub build_time_s: f64,
    /// Wall-clock seconds recovering flows and packaging the solution.
    pub recover_time_s: f64,
    /// True when the reduced problem was rejected and the full problem was
    /// solved instead; the fields above then describe the full solution.
    pub fell_back: bool,
}

/// Where each quantity lives in the LP variable vector: free generators,
/// then non-reference bus angles, then monitored-line flows, each block in
/// ascending id order. The reference angle is eliminated (identically 0),
/// pinned generators and unmonitored flows have no column at all.
#[derive(Debug, Clone)]
pub struct OpfVars {
    pub gen_col: BTreeMap<u32, usize>,
    pub theta_col: BTreeMap<u32, usize>,
    pub flow_col: BTreeMap<u32, usize>,
    pub n_vars: usize,
}

fn check_inputs(net: &Network, loads: &LoadVector, spec: &RopfSpec) -> Result<(), OpfError> {
    let bus_ids: BTreeSet<u32> = net.buses.iter().map(|b| b.id).collect();
    for id in loads.keys() {
        if !bus_ids.contains(id) {
            return Err(OpfError::UnknownBusInLoads(*id));
        }
    }
    for id in &bus_ids {
        if !loads.contains_key(id) {
            return Err(OpfError::MissingLoad(*id));
        }
    }
    let line_ids = net.line_ids();
    for id in &spec.monitored_lines {
        if !line_ids.contains(id) {
            return Err(OpfError::UnknownLine(*id));
        }
    }
    let gen_ids = net.generator_ids();
    for id in &spec.fixed_max_gens {
        if !gen_ids.contains(id) {
            return Err(OpfError::UnknownGenerator(*id));
        }
    }
    Ok(())
}

/// Assemble the reduced LP and its variable map. Flows and dispatch are in
/// MW, angles in radians; a line's MW flow is
/// `base_mva * (theta_from - theta_to) / x`.
pub fn build_opf(
    net: &Network,
    loads: &LoadVector,
    spec: &RopfSpec,
) -> Result<(LpProblem, OpfVars), OpfError> {
    check_inputs(net, loads, spec)?;
    let reference = net.reference_bus().expect("validated network has a reference bus");

    let free_gens: Vec<u32> = net
        .generators
        .iter()
        .map(|g| g.id)
        .filter(|id| !spec.fixed_max_gens.contains(id))
        .collect();
    let mut free_gens = free_gens;
    free_gens.sort_unstable();
    let mut theta_buses: Vec<u32> =
        net.buses.iter().map(|b| b.id).filter(|&b| b != reference).collect();
    theta_buses.sort_unstable();
    let monitored: Vec<u32> = spec.monitored_lines.iter().copied().collect();

    let gen_col: BTreeMap<u32, usize> =
        free_gens.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let ng = free_gens.len();
    let theta_col: BTreeMap<u32, usize> =
        theta_buses.iter().enumerate().map(|(i, &b)| (b, ng + i)).collect();
    let nt = theta_buses.len();
    let flow_col: BTreeMap<u32, usize> =
        monitored.iter().enumerate().map(|(i, &l)| (l, ng + nt + i)).collect();
    let n = ng + nt + monitored.len();

    let mut c = vec![0.0; n];
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    for &g in &free_gens {
        let gen = net.generator(g).expect("checked");
        let j = gen_col[&g];
        c[j] = gen.cost_per_mwh;
        lower[j] = gen.pmin_mw;
        upper[j] = gen.pmax_mw;
    }
    for &l in &monitored {
        let line = net.line(l).expect("checked");
        let j = flow_col[&l];
        lower[j] = -line.rate_a_mw;
        upper[j] = line.rate_a_mw;
    }

    let mut problem = LpProblem::new(c, lower, upper);

    // Flow definition rows for monitored lines:
    //   F_k - (base/x)(theta_from - theta_to) = 0
    // with the reference angle (identically zero) contributing no term.
    for &l in &monitored {
        let line = net.line(l).expect("checked");
        let susceptance = net.base_mva / line.x_pu;
        let mut row = vec![(flow_col[&l], 1.0)];
        if let Some(&j) = theta_col.get(&line.from_bus) {
            row.push((j, -susceptance));
        }
        if let Some(&j) = theta_col.get(&line.to_bus) {
            row.push((j, susceptance));
        }
        problem.add_row(&row, 0.0);
    }

    // Nodal balance rows: generation minus net outflow equals load. Pinned
    // generators contribute constants; unmonitored lines contribute their
    // angle expression in place of a flow variable.
    let mut bus_ids: Vec<u32> = net.buses.iter().map(|b| b.id).collect();
    bus_ids.sort_unstable();
    for &b in &bus_ids {
        let mut row: Vec<(usize, f64)> = Vec::new();
        let mut rhs = loads[&b];
        for gen in net.generators_at(b) {
            if let Some(&j) = gen_col.get(&gen.id) {
                row.push((j, 1.0));
            } else {
                rhs -= gen.pmax_mw;
            }
        }
        for line in &net.lines {
            let outgoing = if line.from_bus == b {
                1.0
            } else if line.to_bus == b {
                -1.0
            } else {
                continue;
            };
            if let Some(&j) = flow_col.get(&line.id) {
                row.push((j, -outgoing));
            } else {
                // -outgoing * (base/x)(theta_from - theta_to)
                let susceptance = net.base_mva / line.x_pu;
                if let Some(&j) = theta_col.get(&line.from_bus) {
                    row.push((j, -outgoing * susceptance));
                }
                if let Some(&j) = theta_col.get(&line.to_bus) {
                    row.push((j, outgoing * susceptance));
                }
            }
        }
        problem.add_row(&row, rhs);
    }

    Ok((
        problem,
        OpfVars {
            gen_col,
            theta_col,
            flow_col,
            n_vars: n,
        },
    ))
}

/// Flows in MW on every line implied by a full set of bus angles.
pub fn recover_flows(net: &Network, theta_rad: &BTreeMap<u32, f64>) -> BTreeMap<u32, f64> {
    net.lines
        .iter()
        .map(|line| {
            let flow =
                net.base_mva * (theta_rad[&line.from_bus] - theta_rad[&line.to_bus]) / line.x_pu;
            (line.id, normalize_zero(flow))
        })
        .collect()
}

/// Maps -0.0 to 0.0 so serialized solutions are stable.
fn normalize_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Solve the (possibly reduced) dispatch problem.
pub fn solve_opf(
    net: &Network,
    loads: &LoadVector,
    spec: &RopfSpec,
) -> Result<OpfSolution, OpfError> {
    let built = Instant::now();
    let (problem, vars) = build_opf(net, loads, spec)?;
    let build_time_s = built.elapsed().as_secs_f64();
    let method = spec.method(net);

    let started = Instant::now();
    let outcome = solve_lp(&problem);
    let solve_time_s = started.elapsed().as_secs_f64();

    if outcome.status != LpStatus::Optimal {
        return Ok(OpfSolution {
            method,
            status: outcome.status,
            objective_cost: 0.0,
            pg_mw: BTreeMap::new(),
            theta_rad: BTreeMap::new(),
            flow_mw: BTreeMap::new(),
            iterations: outcome.iterations,
            solve_time_s,
            build_time_s,
            recover_time_s: 0.0,
            fell_back: false,
        });
    }

    let recovering = Instant::now();
    let mut pg_mw = BTreeMap::new();
    let mut pinned_cost = 0.0;
    for gen in &net.generators {
        if let Some(&j) = vars.gen_col.get(&gen.id) {
            pg_mw.insert(gen.id, normalize_zero(outcome.x[j]));
        } else {
            pg_mw.insert(gen.id, gen.pmax_mw);
            pinned_cost += gen.cost_per_mwh * gen.pmax_mw;
        }
    }
    let reference = net.reference_bus().expect("validated network has a reference bus");
    let theta_rad: BTreeMap<u32, f64> = net
        .buses
        .iter()
        .map(|bus| {
            let angle = match vars.theta_col.get(&bus.id) {
                Some(&j) => normalize_zero(outcome.x[j]),
                None => 0.0,
            };
            (bus.id, angle)
        })
        .collect();
    debug_assert_eq!(theta_rad[&reference], 0.0);
    let flow_mw = recover_flows(net, &theta_rad);
    let recover_time_s = recovering.elapsed().as_secs_f64();

    Ok(OpfSolution {
        method,
        status: LpStatus::Optimal,
        objective_cost: outcome.objective + pinned_cost,
        pg_mw,
        theta_rad,
        flow_mw,
        iterations: outcome.iterations,
        solve_time_s,
        build_time_s,
        recover_time_s,
        fell_back: false,
    })
}

/// Verification slack in MW: balance residuals, bound overshoots, and line
/// overloads up to this magnitude are numerical noise, not violations.
pub const VERIFY_TOL_MW: f64 = 1e-4;

/// Result of checking a solution against the full constraint set. Each
/// list holds `(id, overshoot in MW)` pairs. For an Optimal solution,
/// `feasible` is exactly "all three lists empty"; non-Optimal solutions
/// verify as infeasible with empty lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub feasible: bool,
    pub gen_bound_violations: Vec<(u32, f64)>,
    pub line_limit_violations: Vec<(u32, f64)>,
    pub balance_violations: Vec<(u32, f64)>,
}

/// Check a solution against every physical constraint of the full problem,
/// regardless of which reduced problem produced it. Line flows are
/// recomputed from the angles so unmonitored lines are covered too.
pub fn verify_solution(
    net: &Network,
    loads: &LoadVector,
    solution: &OpfSolution,
) -> VerificationReport {
    if solution.status != LpStatus::Optimal {
        return VerificationReport {
            feasible: false,
            gen_bound_violations: Vec::new(),
            line_limit_violations: Vec::new(),
            balance_violations: Vec::new(),
        };
    }

    let implied = recover_flows(net, &solution.theta_rad);

    let mut gen_bound_violations = Vec::new();
    for gen in &net.generators {
        let p = solution.pg_mw.get(&gen.id).copied().unwrap_or(0.0);
        let overshoot = (gen.pmin_mw - p).max(p - gen.pmax_mw);
        if overshoot > VERIFY_TOL_MW {
            gen_bound_violations.push((gen.id, overshoot));
        }
    }

    let mut line_limit_violations = Vec::new();
    for line in &net.lines {
        let overshoot = implied[&line.id].abs() - line.rate_a_mw;
        if overshoot > VERIFY_TOL_MW {
            line_limit_violations.push((line.id, overshoot));
        }
    }

    let mut balance_violations = Vec::new();
    for bus in &net.buses {
        let generation: f64 = net
            .generators_at(bus.id)
            .map(|g| solution.pg_mw.get(&g.id).copied().unwrap_or(0.0))
            .sum();
        let mut outflow = 0.0;
        for line in &net.lines {
            if line.from_bus == bus.id {
                outflow += implied[&line.id];
            } else if line.to_bus == bus.id {
                outflow -= implied[&line.id];
            }
        }
        let residual = (generation - loads[&bus.id] - outflow).abs();
        if residual > VERIFY_TOL_MW {
            balance_violations.push((bus.id, residual));
        }
    }

    let feasible = gen_bound_violations.is_empty()
        && line_limit_violations.is_empty()
        && balance_violations.is_empty();
    VerificationReport {
        feasible,
        gen_bound_violations,
        line_limit_violations,
        balance_violations,
    }
}

/// Solve the reduced problem and verify the result against the full
/// constraint set; on solver failure or any verification violation,
/// re-solve the full problem. The report always describes the returned
/// solution. Solve time and iterations accumulate across both attempts.
/// A full spec never falls back, even when infeasible: there is nothing
/// larger to retry.
pub fn solve_with_fallback(
    net: &Network,
    loads: &LoadVector,
    spec: &RopfSpec,
) -> Result<(OpfSolution, VerificationReport), OpfError> {
    let first = solve_opf(net, loads, spec)?;
    if spec.is_full(net) {
        let report = verify_solution(net, loads, &first);
        return Ok((first, report));
    }
    let first_report = verify_solution(net, loads, &first);
    if first.status == LpStatus::Optimal && first_report.feasible {
        return Ok((first, first_report));
    }
    let mut full = solve_opf(net, loads, &RopfSpec::full(net))?;
    full.solve_time_s += first.solve_time_s;
    full.build_time_s += first.build_time_s;
    full.recover_time_s += first.recover_time_s;
    full.iterations += first.iterations;
    full.fell_back = true;
    let report = verify_solution(net, loads, &full);
    Ok((full, report))
}
