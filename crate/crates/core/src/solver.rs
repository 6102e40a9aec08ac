//! Exhaustive minimal-flow search at desk scale: enumerate tree topologies
//! over the terminals, derive edge masses by conservation, optimize branch
//! positions (a convex problem), and keep the global best.
//!
//! Enumeration covers every full Steiner topology (internal degree exactly 3,
//! `(2n-5)!!` of them) and, when requested, the trees containing degree-4
//! internal nodes obtained by contracting internal edges. Position
//! optimization runs a smoothed-length gradient descent with an
//! ε-continuation ladder, then polishes with cyclic per-node weighted-Fermat
//! sweeps.

use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::cost::CostError;
use crate::flow::{self, Flow, FlowEdge, Instance, InstanceError, Vertex, VertexKind};
use crate::geometry::{self, add_raw, norm, scale, sub_raw, Point};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("terminal count {n} outside the supported range 2..=7")]
    CapExceeded { n: usize },
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("topology does not match the instance: {0}")]
    Mismatch(String),
}

/// Maximum terminal count; full-topology count grows as `(2n-5)!!`.
pub const MAX_TERMINALS: usize = 7;

/// A node of an abstract tree topology: a labelled terminal leaf or an
/// unlabelled internal (Steiner) node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TopoNode {
    Terminal(usize),
    Steiner(usize),
}

impl TopoNode {
    pub fn label(&self) -> String {
        match self {
            TopoNode::Terminal(i) => format!("t{i}"),
            TopoNode::Steiner(i) => format!("s{i}"),
        }
    }
}

/// An abstract tree over the terminals; combinatorial structure only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    id: String,
    n_terminals: usize,
    n_steiner: usize,
    edges: Vec<(TopoNode, TopoNode)>,
}

impl Topology {
    /// Builds a topology from an edge list, normalizing edge orientation and
    /// computing the canonical id. The edge list must form a tree whose
    /// leaves are exactly the terminals `0..n_terminals`.
    fn new(n_terminals: usize, raw_edges: &[(TopoNode, TopoNode)]) -> Self {
        let mut edges: Vec<(TopoNode, TopoNode)> = raw_edges
            .iter()
            .map(|&(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        let n_steiner = edges
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .filter_map(|n| match n {
                TopoNode::Steiner(i) => Some(i + 1),
                TopoNode::Terminal(_) => None,
            })
            .max()
            .unwrap_or(0);
        let id = canonical_id(n_terminals, n_steiner, &edges);
        Topology {
            id,
            n_terminals,
            n_steiner,
            edges,
        }
    }

    /// Canonical identifier; equal ids mean equal topologies (with terminal
    /// labels fixed and Steiner nodes interchangeable).
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn n_terminals(&self) -> usize {
        self.n_terminals
    }

    pub fn n_steiner(&self) -> usize {
        self.n_steiner
    }

    pub fn edges(&self) -> &[(TopoNode, TopoNode)] {
        &self.edges
    }

    fn neighbors(&self, node: TopoNode) -> Vec<TopoNode> {
        let mut out = Vec::new();
        for &(a, b) in &self.edges {
            if a == node {
                out.push(b);
            } else if b == node {
                out.push(a);
            }
        }
        out
    }

    pub fn degree(&self, node: TopoNode) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == node || b == node)
            .count()
    }
}

/// Builds a topology from an explicit edge list after checking that it is a
/// tree whose leaves are exactly the terminals `0..n_terminals` and whose
/// internal nodes have degree 3 or 4.
pub fn topology_from_edges(
    n_terminals: usize,
    edges: &[(TopoNode, TopoNode)],
) -> Result<Topology, SolverError> {
    let topo = Topology::new(n_terminals, edges);
    let mut nodes: BTreeSet<TopoNode> = BTreeSet::new();
    for &(a, b) in topo.edges() {
        nodes.insert(a);
        nodes.insert(b);
    }
    let expected_terminals: BTreeSet<TopoNode> = (0..n_terminals).map(TopoNode::Terminal).collect();
    let actual_terminals: BTreeSet<TopoNode> = nodes
        .iter()
        .copied()
        .filter(|n| matches!(n, TopoNode::Terminal(_)))
        .collect();
    if actual_terminals != expected_terminals {
        return Err(SolverError::Mismatch(format!(
            "edge list must reference exactly the terminals 0..{n_terminals}"
        )));
    }
    let steiner_indices: BTreeSet<usize> = nodes
        .iter()
        .filter_map(|n| match n {
            TopoNode::Steiner(i) => Some(*i),
            TopoNode::Terminal(_) => None,
        })
        .collect();
    if steiner_indices != (0..topo.n_steiner()).collect::<BTreeSet<usize>>() {
        return Err(SolverError::Mismatch(
            "internal node indices must be contiguous from 0".into(),
        ));
    }
    if topo.edges().len() + 1 != nodes.len() {
        return Err(SolverError::Mismatch("edge list is not a tree".into()));
    }
    if !nodes.is_empty() {
        let start = *nodes.iter().next().expect("nonempty");
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        seen.insert(start);
        while let Some(n) = stack.pop() {
            for m in topo.neighbors(n) {
                if seen.insert(m) {
                    stack.push(m);
                }
            }
        }
        if seen.len() != nodes.len() {
            return Err(SolverError::Mismatch("edge list is not connected".into()));
        }
    }
    for &n in &nodes {
        let deg = topo.degree(n);
        match n {
            TopoNode::Terminal(_) if deg != 1 => {
                return Err(SolverError::Mismatch(format!(
                    "terminal {} must be a leaf, has degree {deg}",
                    n.label()
                )));
            }
            TopoNode::Steiner(_) if !(3..=4).contains(&deg) => {
                return Err(SolverError::Mismatch(format!(
                    "internal node {} must have degree 3 or 4, has degree {deg}",
                    n.label()
                )));
            }
            _ => {}
        }
    }
    Ok(topo)
}

/// Canonical AHU-style encoding: encode the tree rooted at every internal
/// node (terminals are leaves), sorting children encodings, and take the
/// lexicographic minimum. Terminal labels are part of the encoding, so two
/// topologies get the same id exactly when they are isomorphic with terminal
/// labels fixed.
fn canonical_id(n_terminals: usize, n_steiner: usize, edges: &[(TopoNode, TopoNode)]) -> String {
    if n_steiner == 0 {
        debug_assert_eq!(n_terminals, 2);
        return "(t0,t1)".to_string();
    }
    fn encode(node: TopoNode, parent: Option<TopoNode>, edges: &[(TopoNode, TopoNode)]) -> String {
        match node {
            TopoNode::Terminal(i) => format!("t{i}"),
            TopoNode::Steiner(_) => {
                let mut parts: Vec<String> = edges
                    .iter()
                    .filter_map(|&(a, b)| {
                        if a == node {
                            Some(b)
                        } else if b == node {
                            Some(a)
                        } else {
                            None
                        }
                    })
                    .filter(|&o| Some(o) != parent)
                    .map(|o| encode(o, Some(node), edges))
                    .collect();
                parts.sort_unstable();
                format!("({})", parts.join(","))
            }
        }
    }
    (0..n_steiner)
        .map(|s| encode(TopoNode::Steiner(s), None, edges))
        .min()
        .expect("at least one internal node")
}

/// Enumerates every full Steiner topology over `n_terminals` labelled leaves
/// (internal degree 3), and with `allow_degree4` additionally the trees
/// containing internal nodes of degree 4. Sorted by canonical id.
pub fn enumerate_topologies(
    n_terminals: usize,
    allow_degree4: bool,
) -> Result<Vec<Topology>, SolverError> {
    if !(2..=MAX_TERMINALS).contains(&n_terminals) {
        return Err(SolverError::CapExceeded { n: n_terminals });
    }
    if n_terminals == 2 {
        return Ok(vec![Topology::new(
            2,
            &[(TopoNode::Terminal(0), TopoNode::Terminal(1))],
        )]);
    }

    // Grow full topologies by splitting an edge with a fresh Steiner node and
    // hanging the next terminal off it; every full topology arises exactly
    // once this way.
    let mut full: Vec<Vec<(TopoNode, TopoNode)>> = vec![vec![
        (TopoNode::Terminal(0), TopoNode::Steiner(0)),
        (TopoNode::Terminal(1), TopoNode::Steiner(0)),
        (TopoNode::Terminal(2), TopoNode::Steiner(0)),
    ]];
    for t in 3..n_terminals {
        let fresh = TopoNode::Steiner(t - 2);
        let mut next = Vec::with_capacity(full.len() * (2 * t - 3));
        for edges in &full {
            for split in 0..edges.len() {
                let mut grown = Vec::with_capacity(edges.len() + 2);
                for (i, &(a, b)) in edges.iter().enumerate() {
                    if i == split {
                        grown.push((a, fresh));
                        grown.push((b, fresh));
                    } else {
                        grown.push((a, b));
                    }
                }
                grown.push((TopoNode::Terminal(t), fresh));
                next.push(grown);
            }
        }
        full = next;
    }

    let mut unique: BTreeMap<String, Topology> = BTreeMap::new();
    for edges in &full {
        let topo = Topology::new(n_terminals, edges);
        unique.insert(topo.id.clone(), topo);
    }
    debug_assert_eq!(
        unique.len(),
        double_factorial(2 * n_terminals as i64 - 5) as usize
    );

    if allow_degree4 {
        for edges in &full {
            let internal: Vec<usize> = edges
                .iter()
                .enumerate()
                .filter(|(_, (a, b))| {
                    matches!(a, TopoNode::Steiner(_)) && matches!(b, TopoNode::Steiner(_))
                })
                .map(|(i, _)| i)
                .collect();
            for matching in non_adjacent_subsets(edges, &internal) {
                let contracted = contract(edges, &matching);
                let topo = Topology::new(n_terminals, &contracted);
                unique.entry(topo.id.clone()).or_insert(topo);
            }
        }
    }
    Ok(unique.into_values().collect())
}

fn double_factorial(k: i64) -> i64 {
    if k <= 1 {
        1
    } else {
        k * double_factorial(k - 2)
    }
}

/// Nonempty subsets of the given internal edges that form a matching
/// (pairwise disjoint endpoints); contracting a matching turns each chosen
/// degree-3–degree-3 edge into one degree-4 node.
fn non_adjacent_subsets(edges: &[(TopoNode, TopoNode)], internal: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut chosen = Vec::new();
    let mut used: BTreeSet<TopoNode> = BTreeSet::new();
    fn recur(
        edges: &[(TopoNode, TopoNode)],
        internal: &[usize],
        pos: usize,
        chosen: &mut Vec<usize>,
        used: &mut BTreeSet<TopoNode>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if pos == internal.len() {
            if !chosen.is_empty() {
                out.push(chosen.clone());
            }
            return;
        }
        recur(edges, internal, pos + 1, chosen, used, out);
        let (a, b) = edges[internal[pos]];
        if !used.contains(&a) && !used.contains(&b) {
            used.insert(a);
            used.insert(b);
            chosen.push(internal[pos]);
            recur(edges, internal, pos + 1, chosen, used, out);
            chosen.pop();
            used.remove(&a);
            used.remove(&b);
        }
    }
    recur(edges, internal, 0, &mut chosen, &mut used, &mut out);
    out
}

fn contract(edges: &[(TopoNode, TopoNode)], matching: &[usize]) -> Vec<(TopoNode, TopoNode)> {
    let mut rename: BTreeMap<TopoNode, TopoNode> = BTreeMap::new();
    for &i in matching {
        let (a, b) = edges[i];
        let (keep, drop) = if a <= b { (a, b) } else { (b, a) };
        rename.insert(drop, keep);
    }
    let resolve = |mut n: TopoNode| {
        while let Some(&r) = rename.get(&n) {
            n = r;
        }
        n
    };
    let mut out = Vec::new();
    for (i, &(a, b)) in edges.iter().enumerate() {
        if matching.contains(&i) {
            continue;
        }
        out.push((resolve(a), resolve(b)));
    }
    // Renumber Steiner nodes compactly.
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    for &(a, b) in &out {
        for n in [a, b] {
            if let TopoNode::Steiner(i) = n {
                let next = seen.len();
                seen.entry(i).or_insert(next);
            }
        }
    }
    out.into_iter()
        .map(|(a, b)| {
            let f = |n: TopoNode| match n {
                TopoNode::Steiner(i) => TopoNode::Steiner(seen[&i]),
                t => t,
            };
            (f(a), f(b))
        })
        .collect()
}

/// Unique edge masses determined by conservation: removing an edge splits the
/// tree; the stored mass is `m(a, b) = -(terminal mass sum on a's side)`,
/// summed in terminal index order so the value is reproducible bit for bit.
pub fn edge_masses(topology: &Topology, instance: &Instance) -> Result<Vec<f64>, SolverError> {
    if topology.n_terminals != instance.terminals.len() {
        return Err(SolverError::Mismatch(format!(
            "topology has {} terminals, instance has {}",
            topology.n_terminals,
            instance.terminals.len()
        )));
    }
    let mut masses = Vec::with_capacity(topology.edges.len());
    for &(a, b) in &topology.edges {
        let side = component_terminals(topology, a, (a, b));
        let sum: f64 = side.iter().map(|&i| instance.terminals[i].mass).sum();
        masses.push(-sum);
    }
    Ok(masses)
}

/// Terminal indices reachable from `start` without crossing `blocked`,
/// sorted ascending.
fn component_terminals(
    topology: &Topology,
    start: TopoNode,
    blocked: (TopoNode, TopoNode),
) -> Vec<usize> {
    let mut stack = vec![start];
    let mut seen = BTreeSet::new();
    seen.insert(start);
    let mut terminals = Vec::new();
    while let Some(node) = stack.pop() {
        if let TopoNode::Terminal(i) = node {
            terminals.push(i);
        }
        for &(a, b) in &topology.edges {
            if (a, b) == blocked {
                continue;
            }
            let next = if a == node {
                b
            } else if b == node {
                a
            } else {
                continue;
            };
            if seen.insert(next) {
                stack.push(next);
            }
        }
    }
    terminals.sort_unstable();
    terminals
}

/// Identifier prefix for generated branch vertices, extended with
/// underscores until it cannot collide with any terminal id.
pub fn branch_id_prefix(instance: &Instance) -> String {
    let mut prefix = "b".to_string();
    loop {
        let collides = instance
            .terminals
            .iter()
            .any(|t| t.id.starts_with(&prefix) && t.id[prefix.len()..].parse::<usize>().is_ok());
        if !collides {
            return prefix;
        }
        prefix.push('_');
    }
}

/// Knobs for position optimization; the defaults implement the documented
/// procedure.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Branch-merge tolerance for normalization; `None` means
    /// `1e-7 × instance diameter`.
    pub merge_tol: Option<f64>,
    /// Functional ties within this are broken by topology id.
    pub tie_tol: f64,
    /// Smoothing ladder, relative to the instance diameter.
    pub eps_ladder: Vec<f64>,
    pub max_grad_iters_per_stage: usize,
    pub max_sweeps: usize,
    /// Sweep phase stops when a full sweep improves the functional by less
    /// than this, relative.
    pub sweep_rel_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            merge_tol: None,
            tie_tol: 1e-10,
            eps_ladder: vec![1e-2, 1e-4, 1e-6, 1e-8],
            max_grad_iters_per_stage: 400,
            max_sweeps: 20_000,
            sweep_rel_tol: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn resolve_merge_tol(&self, instance: &Instance) -> f64 {
        self.merge_tol.unwrap_or(1e-7 * instance.diameter())
    }
}

/// A candidate minimal flow for one topology.
#[derive(Debug, Clone)]
pub struct Solution {
    pub flow: Flow,
    pub topology: Topology,
    pub converged: bool,
    pub iterations: usize,
    /// Best functional minus the runner-up topology's functional; `None`
    /// until populated by [`solve`], or when there is no competitor.
    pub competitor_gap: Option<f64>,
}

impl Solution {
    pub fn value(&self) -> f64 {
        self.flow.functional
    }
}

/// Optimizes branch positions for a fixed topology with the default
/// deterministic initialization.
pub fn optimize_positions(
    topology: &Topology,
    instance: &Instance,
) -> Result<Solution, SolverError> {
    instance.validate()?;
    let config = SolverConfig::default();
    let init = default_init(topology, instance);
    Ok(optimize_from(topology, instance, &config, &init))
}

/// As [`optimize_positions`] with explicit configuration and initial Steiner
/// positions (one per Steiner node).
pub fn optimize_positions_from(
    topology: &Topology,
    instance: &Instance,
    config: &SolverConfig,
    init: &[Point],
) -> Result<Solution, SolverError> {
    instance.validate()?;
    if init.len() != topology.n_steiner {
        return Err(SolverError::Mismatch(format!(
            "expected {} initial positions, got {}",
            topology.n_steiner,
            init.len()
        )));
    }
    Ok(optimize_from(topology, instance, config, init))
}

/// Default initialization: each Steiner node at the mean of its terminal
/// neighbors, or the overall terminal centroid when it has none, staggered
/// slightly by index so no two start coincident.
fn default_init(topology: &Topology, instance: &Instance) -> Vec<Point> {
    let dim = instance.dimension;
    let centroid = {
        let mut acc = [0.0; 3];
        for t in &instance.terminals {
            acc = add_raw(acc, t.position.raw());
        }
        scale(acc, 1.0 / instance.terminals.len() as f64)
    };
    let diameter = instance.diameter();
    (0..topology.n_steiner)
        .map(|s| {
            let neighbors = topology.neighbors(TopoNode::Steiner(s));
            let terminal_neighbors: Vec<usize> = neighbors
                .iter()
                .filter_map(|n| match n {
                    TopoNode::Terminal(i) => Some(*i),
                    TopoNode::Steiner(_) => None,
                })
                .collect();
            let mut base = if terminal_neighbors.is_empty() {
                centroid
            } else {
                let mut acc = [0.0; 3];
                for &i in &terminal_neighbors {
                    acc = add_raw(acc, instance.terminals[i].position.raw());
                }
                scale(acc, 1.0 / terminal_neighbors.len() as f64)
            };
            base[0] += diameter * 1e-4 * (s as f64 + 1.0);
            base[1] += diameter * 0.7e-4 * (s as f64 + 1.0);
            Point::from_raw(base, dim)
        })
        .collect()
}

struct Workspace<'a> {
    topology: &'a Topology,
    instance: &'a Instance,
    weights: Vec<f64>,
    terminal_pos: Vec<[f64; 3]>,
}

impl Workspace<'_> {
    fn node_pos(&self, node: TopoNode, steiner: &[[f64; 3]]) -> [f64; 3] {
        match node {
            TopoNode::Terminal(i) => self.terminal_pos[i],
            TopoNode::Steiner(i) => steiner[i],
        }
    }

    /// Exact objective: `Σ w_e · length(e)`.
    fn functional(&self, steiner: &[[f64; 3]]) -> f64 {
        self.topology
            .edges()
            .iter()
            .zip(&self.weights)
            .map(|(&(a, b), w)| {
                w * norm(sub_raw(
                    self.node_pos(a, steiner),
                    self.node_pos(b, steiner),
                ))
            })
            .sum()
    }

    /// Smoothed objective `Σ w_e · √(len² + ε²)` and its gradient w.r.t. the
    /// Steiner coordinates.
    fn smoothed(&self, steiner: &[[f64; 3]], eps: f64) -> (f64, Vec<[f64; 3]>) {
        let mut value = 0.0;
        let mut grad = vec![[0.0; 3]; steiner.len()];
        for (&(a, b), w) in self.topology.edges().iter().zip(&self.weights) {
            let d = sub_raw(self.node_pos(a, steiner), self.node_pos(b, steiner));
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2] + eps * eps).sqrt();
            value += w * len;
            let coef = w / len;
            if let TopoNode::Steiner(i) = a {
                grad[i] = add_raw(grad[i], scale(d, coef));
            }
            if let TopoNode::Steiner(i) = b {
                grad[i] = add_raw(grad[i], scale(d, -coef));
            }
        }
        (value, grad)
    }
}

fn optimize_from(
    topology: &Topology,
    instance: &Instance,
    config: &SolverConfig,
    init: &[Point],
) -> Solution {
    let dim = instance.dimension;
    let masses = edge_masses(topology, instance).expect("validated topology");
    let weights: Vec<f64> = masses.iter().map(|m| instance.cost.eval(m.abs())).collect();
    let ws = Workspace {
        topology,
        instance,
        weights,
        terminal_pos: instance
            .terminals
            .iter()
            .map(|t| t.position.raw())
            .collect(),
    };
    let diameter = instance.diameter();
    let mut steiner: Vec<[f64; 3]> = init.iter().map(|p| p.raw()).collect();
    let mut iterations = 0usize;
    let mut converged = true;

    if !steiner.is_empty() {
        // Phase 1: smoothed gradient descent over the ε-continuation ladder.
        for &eps_rel in &config.eps_ladder {
            let eps = eps_rel * diameter;
            let mut step = 0.1 * diameter;
            let (mut value, mut grad) = ws.smoothed(&steiner, eps);
            for _ in 0..config.max_grad_iters_per_stage {
                iterations += 1;
                let grad_norm_sq: f64 = grad.iter().map(|g| dot3(*g, *g)).sum();
                let grad_norm = grad_norm_sq.sqrt();
                if grad_norm * diameter <= 1e-12 * value.max(1.0) {
                    break;
                }
                // Backtracking line search on the smoothed objective.
                step = (step * 2.0).min(diameter);
                let mut accepted = false;
                while step > 1e-16 * diameter {
                    let trial: Vec<[f64; 3]> = steiner
                        .iter()
                        .zip(&grad)
                        .map(|(x, g)| sub3(*x, scale(*g, step / grad_norm)))
                        .collect();
                    let (trial_value, trial_grad) = ws.smoothed(&trial, eps);
                    if trial_value <= value - 1e-4 * step * grad_norm {
                        steiner = trial;
                        value = trial_value;
                        grad = trial_grad;
                        accepted = true;
                        break;
                    }
                    step *= 0.5;
                }
                if !accepted {
                    break;
                }
            }
        }

        // Phase 2: cyclic per-node weighted-Fermat sweeps on the exact
        // objective, with pair-collapse moves so coalescing branch points
        // jump to their merged optimum instead of crawling toward it. A
        // sweep step never degrades a node (the candidate is kept only when
        // it improves the node-local objective), so the functional decreases
        // monotonically.
        let mut value = ws.functional(&steiner);
        let mut sweeps = 0usize;
        let mut sweep_converged = false;
        while sweeps < config.max_sweeps {
            sweeps += 1;
            iterations += 1;
            for s in 0..steiner.len() {
                sweep_node(&ws, &mut steiner, s, dim);
            }
            let mut next_value = ws.functional(&steiner);
            if let Some((collapsed, collapsed_value)) =
                best_pair_collapse(&ws, &steiner, next_value, dim)
            {
                steiner = collapsed;
                next_value = collapsed_value;
            }
            if let Some((merged, merged_value)) =
                best_cluster_merge(&ws, &steiner, next_value, dim, diameter)
            {
                steiner = merged;
                next_value = merged_value;
            }
            if let Some((split, split_value)) =
                best_cluster_split(&ws, &steiner, next_value, diameter)
            {
                steiner = split;
                next_value = split_value;
            }
            debug_assert!(
                next_value <= value * (1.0 + 1e-12) + 1e-300,
                "sweep increased the functional: {value} -> {next_value}"
            );
            let decrease = value - next_value;
            value = next_value;
            if decrease < config.sweep_rel_tol * value.max(1.0) {
                sweep_converged = true;
                break;
            }
        }

        // Phase 3: damped Newton on the free (non-parked) branch
        // coordinates; the sweeps converge linearly, which near shallow
        // optima leaves position errors large enough to fail angle audits.
        // Newton finishes the smooth part quadratically; a final sweep
        // re-locks anchor-parked nodes.
        for _ in 0..12 {
            let moved = newton_polish(&ws, &mut steiner, dim, diameter);
            for s in 0..steiner.len() {
                sweep_node(&ws, &mut steiner, s, dim);
            }
            let mut next_value = ws.functional(&steiner);
            if let Some((collapsed, collapsed_value)) =
                best_pair_collapse(&ws, &steiner, next_value, dim)
            {
                steiner = collapsed;
                next_value = collapsed_value;
            }
            if let Some((merged, merged_value)) =
                best_cluster_merge(&ws, &steiner, next_value, dim, diameter)
            {
                steiner = merged;
                next_value = merged_value;
            }
            if let Some((split, split_value)) =
                best_cluster_split(&ws, &steiner, next_value, diameter)
            {
                steiner = split;
                next_value = split_value;
            }
            debug_assert!(next_value <= value * (1.0 + 1e-12) + 1e-300);
            let decrease = value - next_value;
            value = next_value;
            iterations += 1;
            if !moved && decrease <= 1e-15 * value.max(1.0) {
                break;
            }
        }
        converged = sweep_converged && steiner_residuals_ok(&ws, &steiner, dim);
    }

    // Materialize the flow and normalize.
    let prefix = branch_id_prefix(instance);
    let mut vertices: Vec<Vertex> = instance
        .terminals
        .iter()
        .map(|t| Vertex {
            id: t.id.clone(),
            position: t.position,
            kind: VertexKind::Terminal,
        })
        .collect();
    for (i, pos) in steiner.iter().enumerate() {
        vertices.push(Vertex {
            id: format!("{prefix}{i}"),
            position: Point::from_raw(*pos, dim),
            kind: VertexKind::Branching,
        });
    }
    let label = |node: TopoNode| -> String {
        match node {
            TopoNode::Terminal(i) => instance.terminals[i].id.clone(),
            TopoNode::Steiner(i) => format!("{prefix}{i}"),
        }
    };
    let edges: Vec<FlowEdge> = topology
        .edges()
        .iter()
        .zip(&masses)
        .map(|(&(a, b), &m)| {
            let (u, v) = (label(a), label(b));
            if u < v {
                FlowEdge { u, v, mass: m }
            } else {
                FlowEdge {
                    u: v,
                    v: u,
                    mass: -m,
                }
            }
        })
        .collect();
    let mut raw = Flow {
        vertices,
        edges,
        functional: 0.0,
    };
    raw.functional = flow::gilbert_functional(&raw, &instance.cost).expect("validated cost");
    let merge_tol = config.resolve_merge_tol(instance);
    let normalized = flow::normalize_flow(&raw, &instance.cost, merge_tol).expect("validated cost");

    Solution {
        flow: normalized,
        topology: topology.clone(),
        converged,
        iterations,
        competitor_gap: None,
    }
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Tries, for every Steiner–Steiner edge, to place both endpoints at the
/// weighted-Fermat point of their combined outside anchors (the merged
/// degree-4 star); returns the best strictly-no-worse candidate.
fn best_pair_collapse(
    ws: &Workspace,
    steiner: &[[f64; 3]],
    current: f64,
    dim: usize,
) -> Option<(Vec<[f64; 3]>, f64)> {
    let mut best: Option<(Vec<[f64; 3]>, f64)> = None;
    for &(a, b) in ws.topology.edges() {
        let (TopoNode::Steiner(i), TopoNode::Steiner(j)) = (a, b) else {
            continue;
        };
        let mut anchors = Vec::new();
        let mut weights = Vec::new();
        for (&(p, q), w) in ws.topology.edges().iter().zip(&ws.weights) {
            if (p, q) == (a, b) {
                continue;
            }
            let outside = if p == a || p == b {
                q
            } else if q == a || q == b {
                p
            } else {
                continue;
            };
            anchors.push(Point::from_raw(ws.node_pos(outside, steiner), dim));
            weights.push(*w);
        }
        if !(3..=4).contains(&anchors.len()) || weights.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        if anchors
            .iter()
            .enumerate()
            .any(|(x, p)| anchors.iter().skip(x + 1).any(|q| p.distance(q) == 0.0))
        {
            continue;
        }
        let merged = match geometry::weighted_fermat(&anchors, &weights) {
            Ok(r) => r.minimizer.raw(),
            Err(geometry::GeometryError::Convergence { best }) => best.minimizer.raw(),
            Err(_) => continue,
        };
        let mut trial = steiner.to_vec();
        trial[i] = merged;
        trial[j] = merged;
        let trial_value = ws.functional(&trial);
        let incumbent = best.as_ref().map(|(_, v)| *v).unwrap_or(current);
        if trial_value <= incumbent {
            best = Some((trial, trial_value));
        }
    }
    best
}

/// Coincidence clusters among branch nodes: connected groups of indices
/// whose positions agree within `tol`. Only clusters of size >= 2 are
/// returned.
fn coincidence_clusters(steiner: &[[f64; 3]], tol: f64) -> Vec<Vec<usize>> {
    let k = steiner.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..k {
        for j in i + 1..k {
            if norm(sub_raw(steiner[i], steiner[j])) <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..k {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().filter(|g| g.len() >= 2).collect()
}

/// Re-centers every coincidence cluster at the weighted geometric median of
/// its outside anchors. A cluster of coalesced branch nodes behaves as one
/// high-degree node; per-node sweeps lock its members onto each other
/// without ever moving the shared point, so the joint re-centering is what
/// actually optimizes it. Returns a no-worse configuration when one exists.
fn best_cluster_merge(
    ws: &Workspace,
    steiner: &[[f64; 3]],
    current: f64,
    dim: usize,
    diameter: f64,
) -> Option<(Vec<[f64; 3]>, f64)> {
    let coincide_tol = 1e-9 * diameter;
    let mut best: Option<(Vec<[f64; 3]>, f64)> = None;
    for cluster in coincidence_clusters(steiner, coincide_tol) {
        let inside = |node: TopoNode| matches!(node, TopoNode::Steiner(s) if cluster.contains(&s));
        let mut anchors = Vec::new();
        let mut weights = Vec::new();
        for (&(p, q), &w) in ws.topology.edges().iter().zip(&ws.weights) {
            let outside = match (inside(p), inside(q)) {
                (true, false) => q,
                (false, true) => p,
                _ => continue,
            };
            anchors.push(Point::from_raw(ws.node_pos(outside, steiner), dim));
            weights.push(w);
        }
        if anchors.len() < 2 || weights.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        if anchors
            .iter()
            .enumerate()
            .any(|(x, p)| anchors.iter().skip(x + 1).any(|q| p.distance(q) == 0.0))
        {
            continue;
        }
        let merged = match geometry::fermat_core(&anchors, &weights) {
            Ok(r) => r.minimizer.raw(),
            Err(geometry::GeometryError::Convergence { best }) => best.minimizer.raw(),
            Err(_) => continue,
        };
        let mut trial = steiner.to_vec();
        for &s in &cluster {
            trial[s] = merged;
        }
        let trial_value = ws.functional(&trial);
        let incumbent = best.as_ref().map(|(_, v)| *v).unwrap_or(current);
        if trial_value <= incumbent {
            best = Some((trial, trial_value));
        }
    }
    best
}

/// Tries to pull a cluster of coincident branch nodes apart. Where two or
/// more branch nodes share a position the objective is nonsmooth and
/// per-node moves can jam even though a coordinated displacement descends.
/// For every internal edge (i, j) of a coincident cluster, the cluster
/// splits into the two components left by removing that edge; moving the
/// sides by ±t·d gains `‖g_i − g_j‖ − 2·w_bridge − (zero-length penalties)`
/// per unit step, where `g` sums each side's gradients toward its distinct
/// outside anchors. Returns a strictly better configuration when one exists.
fn best_cluster_split(
    ws: &Workspace,
    steiner: &[[f64; 3]],
    current: f64,
    diameter: f64,
) -> Option<(Vec<[f64; 3]>, f64)> {
    let coincide_tol = 1e-9 * diameter;
    let mut best: Option<(Vec<[f64; 3]>, f64)> = None;
    let k = steiner.len();
    let coincident_edge = |a: TopoNode, b: TopoNode| -> Option<(usize, usize)> {
        let (TopoNode::Steiner(i), TopoNode::Steiner(j)) = (a, b) else {
            return None;
        };
        (norm(sub_raw(steiner[i], steiner[j])) <= coincide_tol).then_some((i, j))
    };

    for (&(a, b), &w_bridge) in ws.topology.edges().iter().zip(&ws.weights) {
        let Some((i, j)) = coincident_edge(a, b) else {
            continue;
        };
        // Flood each side of the cluster over coincident internal edges,
        // excluding the split edge itself.
        let side_of = |start: usize, exclude: (TopoNode, TopoNode)| -> Vec<usize> {
            let mut seen = vec![false; k];
            seen[start] = true;
            let mut stack = vec![start];
            while let Some(s) = stack.pop() {
                for &(p, q) in ws.topology.edges() {
                    if (p, q) == exclude {
                        continue;
                    }
                    if let Some((x, y)) = coincident_edge(p, q) {
                        let next = if x == s {
                            y
                        } else if y == s {
                            x
                        } else {
                            continue;
                        };
                        if !seen[next] {
                            seen[next] = true;
                            stack.push(next);
                        }
                    }
                }
            }
            (0..k).filter(|&s| seen[s]).collect()
        };
        let side_i = side_of(i, (a, b));
        let side_j = side_of(j, (a, b));

        // Gradient of each side's edges toward distinct outside anchors;
        // edges to anchors sitting on the cluster point cannot contribute a
        // direction and instead penalize any movement by their weight.
        let mut grads = [[0.0f64; 3]; 2];
        let mut penalty = 2.0 * w_bridge;
        for (slot, side) in [(0usize, &side_i), (1usize, &side_j)] {
            for (&(p, q), &w) in ws.topology.edges().iter().zip(&ws.weights) {
                if (p, q) == (a, b) {
                    continue;
                }
                let (inside, outside) = match (p, q) {
                    (TopoNode::Steiner(x), other) if side.contains(&x) => (x, other),
                    (other, TopoNode::Steiner(x)) if side.contains(&x) => (x, other),
                    _ => continue,
                };
                if let TopoNode::Steiner(y) = outside {
                    if side.contains(&y) {
                        continue; // internal to this side; moves rigidly
                    }
                }
                let d = sub_raw(steiner[inside], ws.node_pos(outside, steiner));
                let len = norm(d);
                if len <= coincide_tol {
                    // A terminal (or foreign branch node) sits on the cluster
                    // point; moving the side pays full cost along any
                    // direction.
                    penalty += w;
                    continue;
                }
                grads[slot] = add_raw(grads[slot], scale(d, w / len));
            }
        }
        let diff = sub_raw(grads[0], grads[1]);
        let diff_norm = norm(diff);
        if diff_norm <= penalty * (1.0 + 1e-12) + 1e-15 {
            continue;
        }
        let dir = scale(diff, -1.0 / diff_norm);
        let mut t = 0.05 * diameter;
        while t > 1e-14 * diameter {
            let mut trial = steiner.to_vec();
            for &s in &side_i {
                trial[s] = add_raw(trial[s], scale(dir, t));
            }
            for &s in &side_j {
                trial[s] = sub_raw(trial[s], scale(dir, t));
            }
            let trial_value = ws.functional(&trial);
            let incumbent = best.as_ref().map(|(_, v)| *v).unwrap_or(current);
            if trial_value < incumbent {
                best = Some((trial, trial_value));
                break;
            }
            t *= 0.5;
        }
    }
    best
}

/// One weighted-Fermat update of Steiner node `s`. The candidate replaces
/// the current position only when it does not worsen the node-local
/// objective, so interleaving sweeps with other moves stays monotone.
fn sweep_node(ws: &Workspace, steiner: &mut [[f64; 3]], s: usize, dim: usize) {
    let Some((anchors, weights)) = node_star(ws, steiner, s, dim) else {
        return;
    };
    let candidate = match geometry::weighted_fermat(&anchors, &weights) {
        Ok(r) => r.minimizer.raw(),
        Err(geometry::GeometryError::Convergence { best }) => best.minimizer.raw(),
        Err(_) => return,
    };
    let current = geometry::objective_at(steiner[s], &anchors, &weights);
    let proposed = geometry::objective_at(candidate, &anchors, &weights);
    if proposed <= current {
        steiner[s] = candidate;
    }
}

/// Damped Newton step(s) on the stacked coordinates of the "free" branch
/// nodes, i.e. those not parked on an anchor or on another branch node. The
/// objective is smooth there; Newton converges quadratically where the
/// cyclic sweeps crawl. Returns whether any node moved.
fn newton_polish(ws: &Workspace, steiner: &mut [[f64; 3]], dim: usize, diameter: f64) -> bool {
    use nalgebra::{DMatrix, DVector};

    let park_tol = 1e-7 * diameter;
    let k = steiner.len();
    let free: Vec<usize> = (0..k)
        .filter(|&s| {
            let pos = steiner[s];
            let near_terminal = ws
                .terminal_pos
                .iter()
                .any(|t| norm(sub_raw(*t, pos)) < park_tol);
            let near_peer = (0..k).any(|o| o != s && norm(sub_raw(steiner[o], pos)) < park_tol);
            !near_terminal && !near_peer
        })
        .collect();
    if free.is_empty() {
        return false;
    }
    let col: BTreeMap<usize, usize> = free.iter().enumerate().map(|(c, &s)| (s, c)).collect();
    let vars = free.len() * dim;
    let w_scale: f64 = ws.weights.iter().sum::<f64>().max(1.0);

    let mut moved_any = false;
    for _ in 0..30 {
        let mut grad = DVector::zeros(vars);
        let mut hess = DMatrix::zeros(vars, vars);
        for (&(a, b), &w) in ws.topology.edges().iter().zip(&ws.weights) {
            let ia = match a {
                TopoNode::Steiner(s) => col.get(&s).copied(),
                TopoNode::Terminal(_) => None,
            };
            let ib = match b {
                TopoNode::Steiner(s) => col.get(&s).copied(),
                TopoNode::Terminal(_) => None,
            };
            if ia.is_none() && ib.is_none() {
                // Both endpoints fixed (terminal or parked); no contribution
                // to the free coordinates.
                continue;
            }
            let pa = ws.node_pos(a, steiner);
            let pb = ws.node_pos(b, steiner);
            let d = sub_raw(pa, pb);
            let len = norm(d);
            if len < 1e-12 * diameter {
                return moved_any; // nonsmooth edge at a free node; leave it to the sweeps
            }
            let u = scale(d, 1.0 / len);
            // Gradient of w·|pa − pb| w.r.t. pa is w·u, w.r.t. pb is −w·u.
            // Hessian block: (w/len)(I − uuᵀ) with the usual ± pattern.
            for r in 0..dim {
                if let Some(ca) = ia {
                    grad[ca * dim + r] += w * u[r];
                }
                if let Some(cb) = ib {
                    grad[cb * dim + r] -= w * u[r];
                }
                for c in 0..dim {
                    let block = (w / len) * (if r == c { 1.0 } else { 0.0 } - u[r] * u[c]);
                    if let Some(ca) = ia {
                        hess[(ca * dim + r, ca * dim + c)] += block;
                    }
                    if let Some(cb) = ib {
                        hess[(cb * dim + r, cb * dim + c)] += block;
                    }
                    if let (Some(ca), Some(cb)) = (ia, ib) {
                        hess[(ca * dim + r, cb * dim + c)] -= block;
                        hess[(cb * dim + r, ca * dim + c)] -= block;
                    }
                }
            }
        }
        let grad_inf = grad.amax();
        if grad_inf <= 1e-13 * w_scale {
            return moved_any;
        }
        // Small ridge keeps the factorization stable near flat directions.
        let trace: f64 = hess.trace();
        let ridge = 1e-12 * (trace / vars as f64).max(1e-300);
        for i in 0..vars {
            hess[(i, i)] += ridge;
        }
        let Some(delta) = hess.lu().solve(&(-&grad)) else {
            return moved_any;
        };
        let descent: f64 = grad.dot(&delta);
        if descent >= 0.0 {
            return moved_any;
        }
        let base_value = ws.functional(steiner);
        let mut t = 1.0f64;
        let mut accepted = false;
        while t > 1e-8 {
            let mut trial = steiner.to_vec();
            for (c, &s) in free.iter().enumerate() {
                for r in 0..dim {
                    trial[s][r] += t * delta[c * dim + r];
                }
            }
            let trial_value = ws.functional(&trial);
            if trial_value <= base_value + 1e-4 * t * descent {
                steiner.copy_from_slice(&trial);
                moved_any = true;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return moved_any;
        }
    }
    moved_any
}

fn node_star(
    ws: &Workspace,
    steiner: &[[f64; 3]],
    s: usize,
    dim: usize,
) -> Option<(Vec<Point>, Vec<f64>)> {
    let node = TopoNode::Steiner(s);
    let mut anchors = Vec::new();
    let mut weights = Vec::new();
    for (&(a, b), w) in ws.topology.edges().iter().zip(&ws.weights) {
        let other = if a == node {
            b
        } else if b == node {
            a
        } else {
            continue;
        };
        anchors.push(Point::from_raw(ws.node_pos(other, steiner), dim));
        weights.push(*w);
    }
    if anchors.len() < 3 || weights.iter().sum::<f64>() <= 0.0 {
        return None;
    }
    for i in 0..anchors.len() {
        for j in i + 1..anchors.len() {
            if anchors[i].distance(&anchors[j]) == 0.0 {
                return None;
            }
        }
    }
    Some((anchors, weights))
}

/// Final per-node optimality, measured at the node's current position: a
/// Steiner node resting on an anchor must pass the vertex test there
/// (`‖Σ_{i≠j} w_i ē_i‖ ≤ w_j`), and an interior node must have a
/// first-order residual `‖Σ w_i ē_i‖` below `1e-6 · max(1, Σ w)`.
fn steiner_residuals_ok(ws: &Workspace, steiner: &[[f64; 3]], dim: usize) -> bool {
    let snap = 1e-12 * ws.instance.diameter().max(f64::MIN_POSITIVE);
    for s in 0..steiner.len() {
        let Some((anchors, weights)) = node_star(ws, steiner, s, dim) else {
            continue;
        };
        let scale_w: f64 = weights.iter().sum::<f64>().max(1.0);
        let pos = steiner[s];
        let parked = anchors
            .iter()
            .position(|a| norm(sub_raw(a.raw(), pos)) <= snap);
        match parked {
            Some(j) => {
                let mut pull = [0.0f64; 3];
                for (i, a) in anchors.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let d = sub_raw(a.raw(), anchors[j].raw());
                    let len = norm(d);
                    if len == 0.0 {
                        return false;
                    }
                    pull = add_raw(pull, scale(d, weights[i] / len));
                }
                if norm(pull) > weights[j] * (1.0 + 1e-9) + 1e-9 * scale_w {
                    return false;
                }
            }
            None => {
                let mut g = [0.0f64; 3];
                for (a, w) in anchors.iter().zip(&weights) {
                    let d = sub_raw(a.raw(), pos);
                    let len = norm(d);
                    if len == 0.0 {
                        return false;
                    }
                    g = add_raw(g, scale(d, w / len));
                }
                if norm(g) > 1e-6 * scale_w {
                    return false;
                }
            }
        }
    }
    true
}

/// Solves the instance: enumerates topologies, optimizes each in parallel,
/// and returns the best solution with the competitor gap populated. Ties
/// within `tie_tol` (default `1e-10`) resolve to the lexicographically
/// smallest topology id.
pub fn solve(instance: &Instance, allow_degree4: bool) -> Result<Solution, SolverError> {
    solve_with(instance, allow_degree4, &SolverConfig::default())
}

pub fn solve_with(
    instance: &Instance,
    allow_degree4: bool,
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    instance.validate()?;
    let topologies = enumerate_topologies(instance.terminals.len(), allow_degree4)?;
    let solutions: Vec<Solution> = topologies
        .par_iter()
        .map(|topology| {
            let init = default_init(topology, instance);
            optimize_from(topology, instance, config, &init)
        })
        .collect();

    let min_value = solutions
        .iter()
        .map(Solution::value)
        .fold(f64::INFINITY, f64::min);
    let winner_idx = solutions
        .iter()
        .enumerate()
        .filter(|(_, s)| s.value() <= min_value + config.tie_tol)
        .min_by(|(_, a), (_, b)| a.topology.id().cmp(b.topology.id()))
        .map(|(i, _)| i)
        .expect("at least one topology");
    let runner_up = solutions
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != winner_idx)
        .map(|(_, s)| s.value())
        .fold(f64::INFINITY, f64::min);

    let mut winner = solutions
        .into_iter()
        .nth(winner_idx)
        .expect("winner index in range");
    debug_assert!(winner.value() <= min_value + config.tie_tol);
    winner.competitor_gap = runner_up.is_finite().then(|| winner.value() - runner_up);
    Ok(winner)
}
