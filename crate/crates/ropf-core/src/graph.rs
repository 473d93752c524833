//! Virtual node-splitting expansion of a grid into a homogeneous graph.
//!
//! Generators do not live on buses here: each generator is split out into
//! its own virtual node, attached to its bus by one edge. Every node then
//! carries the same feature layout, which lets one message-passing network
//! treat buses and generators uniformly. Real nodes come first in bus-id
//! order, virtual nodes follow in generator-id order, so node indices are
//! reproducible across runs.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use thiserror::Error;

use crate::grid::Network;
use crate::opf::LoadVector;

/// Number of feature columns per node.
pub const N_FEATURES: usize = 8;

/// Feature column indices, in storage order.
pub const FEAT_LOAD_PU: usize = 0;
pub const FEAT_IS_REAL: usize = 1;
pub const FEAT_PMAX_PU: usize = 2;
pub const FEAT_PMIN_PU: usize = 3;
pub const FEAT_COST_NORM: usize = 4;
pub const FEAT_RAMP_NORM: usize = 5;
pub const FEAT_CONG_MEAN: usize = 6;
pub const FEAT_CONG_MAX: usize = 7;

/// The expanded graph: one node per bus, one virtual node per generator,
/// one edge per line plus one edge tying each virtual node to its bus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpandedGraph {
    pub n_nodes: usize,
    /// Bus id to node index; indices 0..n_buses in ascending bus-id order.
    pub real_node_of_bus: BTreeMap<u32, usize>,
    /// Generator id to node index; indices n_buses.. in ascending id order.
    pub virtual_node_of_gen: BTreeMap<u32, usize>,
    /// Line edges first (ascending line id), then generator attachment
    /// edges (ascending generator id).
    pub edges: Vec<(usize, usize)>,
    /// Which line each of the leading edges came from; generator
    /// attachment edges have no entry.
    pub line_of_edge: BTreeMap<usize, u32>,
}

/// Split every generator into a virtual node and list the edges.
pub fn expand(net: &Network) -> ExpandedGraph {
    let mut bus_ids: Vec<u32> = net.buses.iter().map(|b| b.id).collect();
    bus_ids.sort_unstable();
    let real_node_of_bus: BTreeMap<u32, usize> =
        bus_ids.iter().enumerate().map(|(i, &b)| (b, i)).collect();
    let nb = bus_ids.len();

    let mut gen_ids: Vec<u32> = net.generators.iter().map(|g| g.id).collect();
    gen_ids.sort_unstable();
    let virtual_node_of_gen: BTreeMap<u32, usize> =
        gen_ids.iter().enumerate().map(|(i, &g)| (g, nb + i)).collect();

    let mut edges = Vec::with_capacity(net.lines.len() + gen_ids.len());
    let mut line_of_edge = BTreeMap::new();
    let mut lines: Vec<_> = net.lines.iter().collect();
    lines.sort_unstable_by_key(|l| l.id);
    for line in lines {
        line_of_edge.insert(edges.len(), line.id);
        edges.push((real_node_of_bus[&line.from_bus], real_node_of_bus[&line.to_bus]));
    }
    for &g in &gen_ids {
        let gen = net.generator(g).expect("listed id");
        edges.push((real_node_of_bus[&gen.bus], virtual_node_of_gen[&g]));
    }

    ExpandedGraph {
        n_nodes: nb + gen_ids.len(),
        real_node_of_bus,
        virtual_node_of_gen,
        edges,
        line_of_edge,
    }
}

/// Symmetric normalized adjacency with self-loops,
/// `D^(-1/2) (A + I) D^(-1/2)`, where `A` is the 0/1 adjacency (parallel
/// lines count once) and `D` holds the row sums of `A + I`. Its spectral
/// radius is 1, so stacked message-passing layers cannot blow activations
/// up.
pub fn normalize_adjacency(graph: &ExpandedGraph) -> Array2<f64> {
    let n = graph.n_nodes;
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for &(u, v) in &graph.edges {
        if u != v {
            pairs.insert((u.min(v), u.max(v)));
        }
    }
    let mut a = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        a[(i, i)] = 1.0;
    }
    for &(u, v) in &pairs {
        a[(u, v)] = 1.0;
        a[(v, u)] = 1.0;
    }
    let degree: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                a[(i, j)] /= (degree[i] * degree[j]).sqrt();
            }
        }
    }
    a
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("loads reference unknown bus {0}")]
    UnknownBusInLoads(u32),
    #[error("no load entry for bus {0}")]
    MissingLoad(u32),
    #[error("no congestion probability for line {0}")]
    MissingLineProb(u32),
    #[error("congestion probability for line {0} is {1}, outside [0, 1]")]
    ProbOutOfRange(u32, f64),
}

/// Per-node raw feature matrix, one row per expanded node:
/// `[load_pu, is_real, pmax_pu, pmin_pu, cost_norm, ramp_norm, cong_mean,
/// cong_max]`. Real nodes carry the load and (when `line_probs` is given)
/// the mean and max congestion probability over their incident lines;
/// virtual nodes carry the generator's limits, relative cost, and relative
/// ramp rate, and inherit the congestion summary of their bus. Without
/// `line_probs` the congestion columns are zero, keeping one layout for
/// both prediction stages. Standardization is the model's job, not done
/// here.
pub fn build_features(
    graph: &ExpandedGraph,
    net: &Network,
    loads: &LoadVector,
    line_probs: Option<&BTreeMap<u32, f64>>,
) -> Result<Array2<f64>, FeatureError> {
    for id in loads.keys() {
        if !graph.real_node_of_bus.contains_key(id) {
            return Err(FeatureError::UnknownBusInLoads(*id));
        }
    }
    for id in graph.real_node_of_bus.keys() {
        if !loads.contains_key(id) {
            return Err(FeatureError::MissingLoad(*id));
        }
    }
    if let Some(probs) = line_probs {
        for line in &net.lines {
            match probs.get(&line.id) {
                None => return Err(FeatureError::MissingLineProb(line.id)),
                Some(&p) if !(0.0..=1.0).contains(&p) => {
                    return Err(FeatureError::ProbOutOfRange(line.id, p))
                }
                Some(_) => {}
            }
        }
    }

    let mut x = Array2::<f64>::zeros((graph.n_nodes, N_FEATURES));

    // Congestion summary per bus from the incident lines.
    let mut cong = BTreeMap::new();
    if let Some(probs) = line_probs {
        for (&bus, &node) in &graph.real_node_of_bus {
            let incident: Vec<f64> = net
                .lines
                .iter()
                .filter(|l| l.from_bus == bus || l.to_bus == bus)
                .map(|l| probs[&l.id])
                .collect();
            if !incident.is_empty() {
                let mean = incident.iter().sum::<f64>() / incident.len() as f64;
                let max = incident.iter().cloned().fold(f64::MIN, f64::max);
                cong.insert(bus, (mean, max));
            }
            let _ = node;
        }
    }

    for (&bus, &node) in &graph.real_node_of_bus {
        x[(node, FEAT_LOAD_PU)] = loads[&bus] / net.base_mva;
        x[(node, FEAT_IS_REAL)] = 1.0;
        if let Some(&(mean, max)) = cong.get(&bus) {
            x[(node, FEAT_CONG_MEAN)] = mean;
            x[(node, FEAT_CONG_MAX)] = max;
        }
    }

    let max_cost = net
        .generators
        .iter()
        .map(|g| g.cost_per_mwh)
        .fold(0.0_f64, f64::max);
    let cost_div = if max_cost > 0.0 { max_cost } else { 1.0 };
    let max_ramp = net
        .generators
        .iter()
        .map(|g| g.ramp_mw_per_min)
        .fold(0.0_f64, f64::max);
    let ramp_div = if max_ramp > 0.0 { max_ramp } else { 1.0 };

    for (&g, &node) in &graph.virtual_node_of_gen {
        let gen = net.generator(g).expect("expanded from this network");
        x[(node, FEAT_PMAX_PU)] = gen.pmax_mw / net.base_mva;
        x[(node, FEAT_PMIN_PU)] = gen.pmin_mw / net.base_mva;
        x[(node, FEAT_COST_NORM)] = gen.cost_per_mwh / cost_div;
        x[(node, FEAT_RAMP_NORM)] = gen.ramp_mw_per_min / ramp_div;
        if let Some(&(mean, max)) = cong.get(&gen.bus) {
            x[(node, FEAT_CONG_MEAN)] = mean;
            x[(node, FEAT_CONG_MAX)] = max;
        }
    }

    Ok(x)
}
