//! Brute-force resistive network oracle.
//!
//! A network is a set of nodes joined by conductances, with some nodes held
//! at fixed voltages. [`solve_network`] performs grounded nodal analysis.
//! Infinite conductances are legal and mean an ideal short; the shorted
//! nodes are merged before the solve and the currents through the shorts
//! are recovered from Kirchhoff's current law afterwards.

mod crossbar;
mod solver;

pub use crossbar::*;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on the normwise backward error of a successful solve.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

pub type NodeId = usize;
pub type BranchId = usize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("branch {a}-{b}: conductance must be positive, got {g}")]
    BadConductance { a: NodeId, b: NodeId, g: f64 },
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("fixed voltage {v} V at node {node} is not finite")]
    BadVoltage { node: NodeId, v: f64 },
    #[error("sources at {v1} V and {v2} V are shorted together (nodes {a}, {b})")]
    ShortedSources { a: NodeId, b: NodeId, v1: f64, v2: f64 },
    #[error("network has no fixed-voltage node")]
    NoSource,
    #[error("singular system: {} node(s) not connected to any source, e.g. {:?}", .nodes.len(), &.nodes[..nodes.len().min(8)])]
    SingularSystem { nodes: Vec<NodeId> },
    #[error("solver did not converge: backward error {0:e}")]
    NotConverged(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{0}")]
    Topology(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineKind {
    Wlt,
    Wlb,
    Bl,
}

impl fmt::Display for LineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LineKind::Wlt => "wlt",
            LineKind::Wlb => "wlb",
            LineKind::Bl => "bl",
        })
    }
}

/// Human-readable node identity, used in netlist dumps and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    /// Supply rail at a fixed voltage
    Rail(u32),
    /// Line end where the driver, ground switch or link attaches
    LineEnd { sub: u16, line: LineKind, index: u32 },
    /// Word-line tap above or below cell row `row`
    WordTap { sub: u16, line: LineKind, row: u32, col: u32 },
    /// Bit-line node `k` of row `row` (0..=n_column)
    BitTap { sub: u16, row: u32, k: u32 },
    /// Internal node between a PCM element and its selector
    Selector { sub: u16, top: bool, row: u32, col: u32 },
    Aux(u32),
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NodeLabel::Rail(i) => write!(f, "rail{i}"),
            NodeLabel::LineEnd { sub, line, index } => write!(f, "s{sub}.{line}{index}.end"),
            NodeLabel::WordTap { sub, line, row, col } => write!(f, "s{sub}.{line}{col}.r{row}"),
            NodeLabel::BitTap { sub, row, k } => write!(f, "s{sub}.bl{row}.k{k}"),
            NodeLabel::Selector { sub, top, row, col } => {
                write!(f, "s{sub}.{}{row}_{col}.ots", if top { "top" } else { "bot" })
            }
            NodeLabel::Aux(i) => write!(f, "aux{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BranchTag {
    Driver { sub: u16, line: LineKind, index: u32 },
    Wire { sub: u16, line: LineKind, index: u32, seg: u32 },
    TopCell { sub: u16, row: u32, col: u32 },
    BottomCell { sub: u16, row: u32, col: u32 },
    Selector { sub: u16, top: bool, row: u32, col: u32 },
    Link { index: u32 },
    Other(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub a: NodeId,
    pub b: NodeId,
    /// Conductance [S]; `f64::INFINITY` is an ideal short
    pub g: f64,
    pub tag: BranchTag,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ResistiveNetwork {
    labels: Vec<NodeLabel>,
    fixed: Vec<Option<f64>>,
    /// Nodes deliberately left without a reference (pruned islands)
    floating: Vec<bool>,
    branches: Vec<Branch>,
}

impl ResistiveNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, label: NodeLabel) -> NodeId {
        self.labels.push(label);
        self.fixed.push(None);
        self.floating.push(false);
        self.labels.len() - 1
    }

    pub fn add_branch(
        &mut self,
        a: NodeId,
        b: NodeId,
        g: f64,
        tag: BranchTag,
    ) -> Result<BranchId, NetworkError> {
        let n = self.labels.len();
        if a >= n {
            return Err(NetworkError::UnknownNode(a));
        }
        if b >= n {
            return Err(NetworkError::UnknownNode(b));
        }
        if !(g > 0.0) {
            return Err(NetworkError::BadConductance { a, b, g });
        }
        self.branches.push(Branch { a, b, g, tag });
        Ok(self.branches.len() - 1)
    }

    /// Holds `node` at `v` volts (a ground is a 0 V source).
    pub fn fix_voltage(&mut self, node: NodeId, v: f64) -> Result<(), NetworkError> {
        if node >= self.labels.len() {
            return Err(NetworkError::UnknownNode(node));
        }
        if !v.is_finite() {
            return Err(NetworkError::BadVoltage { node, v });
        }
        self.fixed[node] = Some(v);
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch_mut(&mut self, id: BranchId) -> &mut Branch {
        &mut self.branches[id]
    }

    pub fn label(&self, node: NodeId) -> NodeLabel {
        self.labels[node]
    }

    pub fn fixed_voltage(&self, node: NodeId) -> Option<f64> {
        self.fixed[node]
    }

    pub fn is_floating(&self, node: NodeId) -> bool {
        self.floating[node]
    }

    /// Marks every connected component that holds no fixed-voltage node as
    /// floating, so the solver leaves it out. Returns the number of nodes
    /// marked.
    pub fn prune_floating(&mut self) -> usize {
        let comps = self.components();
        let mut has_src = vec![false; self.node_count()];
        for (i, &c) in comps.iter().enumerate() {
            if self.fixed[i].is_some() {
                has_src[c] = true;
            }
        }
        let mut count = 0;
        for i in 0..self.node_count() {
            let f = !has_src[comps[i]];
            self.floating[i] = f;
            count += f as usize;
        }
        count
    }

    /// Component root of every node (all branches count as connections).
    fn components(&self) -> Vec<usize> {
        let mut uf = UnionFind::new(self.node_count());
        for br in &self.branches {
            uf.union(br.a, br.b);
        }
        (0..self.node_count()).map(|i| uf.find(i)).collect()
    }

    /// Plain-text netlist: one `node_a node_b conductance` line per branch,
    /// preceded by `# source node voltage` lines.
    pub fn write_netlist<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# nodes {} branches {}", self.node_count(), self.branches.len())?;
        for (i, v) in self.fixed.iter().enumerate() {
            if let Some(v) = v {
                writeln!(w, "# source {} {:.12e}", self.labels[i], v)?;
            }
        }
        for br in &self.branches {
            writeln!(w, "{} {} {:.12e}", self.labels[br.a], self.labels[br.b], br.g)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    /// Node voltages [V]; NaN for floating nodes
    pub node_voltages: Vec<f64>,
    /// Current from `a` to `b` for every branch [A]
    pub branch_currents: Vec<f64>,
    /// Current delivered into the network by each fixed node [A]
    pub source_currents: Vec<(NodeId, f64)>,
    /// Normwise backward error of the nodal solve
    pub residual_norm: f64,
    /// Worst KCL imbalance at a non-source node, relative to the largest
    /// branch current
    pub kcl_residual: f64,
}

impl SolveResult {
    pub fn voltage(&self, node: NodeId) -> f64 {
        self.node_voltages[node]
    }

    pub fn current(&self, branch: BranchId) -> f64 {
        self.branch_currents[branch]
    }

    /// Total power delivered by the sources [W].
    pub fn source_power(&self) -> f64 {
        self.source_currents.iter().map(|&(n, i)| self.node_voltages[n] * i).sum()
    }
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root for determinism
            if ra < rb {
                self.parent[rb] = ra;
            } else {
                self.parent[ra] = rb;
            }
        }
    }
}

/// Solves the network by grounded nodal analysis.
pub fn solve_network(net: &ResistiveNetwork) -> Result<SolveResult, NetworkError> {
    let n = net.node_count();
    if !net.fixed.iter().any(|f| f.is_some()) {
        return Err(NetworkError::NoSource);
    }

    // merge ideal shorts
    let mut shorts = UnionFind::new(n);
    for br in &net.branches {
        if br.g.is_infinite() {
            shorts.union(br.a, br.b);
        }
    }
    let class: Vec<usize> = (0..n).map(|i| shorts.find(i)).collect();
    let mut class_v: Vec<Option<(f64, NodeId)>> = vec![None; n];
    for i in 0..n {
        if let Some(v) = net.fixed[i] {
            match class_v[class[i]] {
                None => class_v[class[i]] = Some((v, i)),
                Some((v0, j)) if v0 != v => {
                    return Err(NetworkError::ShortedSources { a: j, b: i, v1: v0, v2: v })
                }
                _ => {}
            }
        }
    }

    // every component must reach a source unless it was pruned
    let comps = net.components();
    let mut comp_src = vec![false; n];
    for i in 0..n {
        if net.fixed[i].is_some() {
            comp_src[comps[i]] = true;
        }
    }
    let orphans: Vec<NodeId> =
        (0..n).filter(|&i| !comp_src[comps[i]] && !net.floating[i]).collect();
    if !orphans.is_empty() {
        return Err(NetworkError::SingularSystem { nodes: orphans });
    }

    // unknown numbering over classes
    let mut unknown = vec![usize::MAX; n];
    let mut m = 0;
    for i in 0..n {
        let c = class[i];
        if i == c && class_v[c].is_none() && comp_src[comps[i]] {
            unknown[c] = m;
            m += 1;
        }
    }

    let mut excess = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for br in &net.branches {
        if br.g.is_infinite() {
            continue;
        }
        let (ca, cb) = (class[br.a], class[br.b]);
        if ca == cb || !comp_src[comps[br.a]] {
            continue;
        }
        match (unknown[ca], unknown[cb]) {
            (ua, ub) if ua != usize::MAX && ub != usize::MAX => {
                edges.push((ua.min(ub), ua.max(ub), br.g));
            }
            (ua, usize::MAX) if ua != usize::MAX => {
                excess[ua] += br.g;
                rhs[ua] += br.g * class_v[cb].map(|x| x.0).unwrap_or(0.0);
            }
            (usize::MAX, ub) if ub != usize::MAX => {
                excess[ub] += br.g;
                rhs[ub] += br.g * class_v[ca].map(|x| x.0).unwrap_or(0.0);
            }
            _ => {}
        }
    }
    let system = solver::LaplacianSystem::new(m, edges, excess, rhs);
    let (x, residual_norm) = system.solve()?;
    if !(residual_norm <= SOLVE_TOLERANCE) {
        return Err(NetworkError::NotConverged(residual_norm));
    }

    let mut node_voltages = vec![f64::NAN; n];
    for i in 0..n {
        if !comp_src[comps[i]] {
            continue;
        }
        let c = class[i];
        node_voltages[i] = match class_v[c] {
            Some((v, _)) => v,
            None => x[unknown[c]],
        };
    }

    let mut branch_currents = vec![0.0; net.branches.len()];
    // net current leaving each node through finite branches
    let mut leaving = vec![0.0; n];
    for (k, br) in net.branches.iter().enumerate() {
        if br.g.is_infinite() || !comp_src[comps[br.a]] {
            continue;
        }
        let i = br.g * (node_voltages[br.a] - node_voltages[br.b]);
        branch_currents[k] = i;
        leaving[br.a] += i;
        leaving[br.b] -= i;
    }
    short_currents(net, &class, &mut branch_currents, &mut leaving);

    let mut source_currents = Vec::new();
    let mut kcl: f64 = 0.0;
    let scale = branch_currents.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    for i in 0..n {
        if net.fixed[i].is_some() {
            source_currents.push((i, leaving[i]));
        } else if comp_src[comps[i]] {
            kcl = kcl.max(leaving[i].abs());
        }
    }
    let kcl_residual = if scale > 0.0 { kcl / scale } else { 0.0 };

    Ok(SolveResult { node_voltages, branch_currents, source_currents, residual_norm, kcl_residual })
}

/// Recovers currents through ideal shorts by peeling a spanning forest of
/// each merged class from the leaves inward. Shorts closing a loop carry no
/// determinable current and are reported as zero.
fn short_currents(
    net: &ResistiveNetwork,
    class: &[usize],
    currents: &mut [f64],
    leaving: &mut [f64],
) {
    let n = net.node_count();
    let mut adj: Vec<Vec<(usize, BranchId)>> = vec![Vec::new(); n];
    let mut any = false;
    for (k, br) in net.branches.iter().enumerate() {
        if br.g.is_infinite() && br.a != br.b {
            adj[br.a].push((br.b, k));
            adj[br.b].push((br.a, k));
            any = true;
        }
    }
    if !any {
        return;
    }
    let mut seen = vec![false; n];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        if !adj[i].is_empty() {
            members[class[i]].push(i);
        }
    }
    for group in members.iter().filter(|g| !g.is_empty()) {
        // root at a source node if the class has one
        let root = group.iter().copied().find(|&i| net.fixed[i].is_some()).unwrap_or(group[0]);
        let mut order = vec![root];
        seen[root] = true;
        let mut parent_of = std::collections::HashMap::new();
        let mut head = 0;
        while head < order.len() {
            let u = order[head];
            head += 1;
            for &(v, k) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    order.push(v);
                    parent_of.insert(v, (u, k));
                }
            }
        }
        for &u in order.iter().skip(1).rev() {
            let (p, k) = parent_of[&u];
            // current that must leave u through the short toward p
            let out = if net.fixed[u].is_some() { 0.0 } else { -leaving[u] };
            let br = &net.branches[k];
            currents[k] = if br.a == u { out } else { -out };
            leaving[u] += out;
            leaving[p] -= out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn aux(net: &mut ResistiveNetwork, i: u32) -> NodeId {
        net.add_node(NodeLabel::Aux(i))
    }

    #[test]
    fn divider() {
        let mut net = ResistiveNetwork::new();
        let (s, m, g) = (aux(&mut net, 0), aux(&mut net, 1), aux(&mut net, 2));
        net.fix_voltage(s, 1.0).unwrap();
        net.fix_voltage(g, 0.0).unwrap();
        net.add_branch(s, m, 1e-3, BranchTag::Other(0)).unwrap();
        net.add_branch(m, g, 1e-3, BranchTag::Other(1)).unwrap();
        let r = solve_network(&net).unwrap();
        assert_relative_eq!(r.voltage(m), 0.5, max_relative = 1e-14);
        assert_relative_eq!(r.current(0), 0.5e-3, max_relative = 1e-14);
        assert_relative_eq!(r.source_power(), 0.5e-3, max_relative = 1e-14);
    }

    #[test]
    fn shorts_merge_and_carry_current() {
        let mut net = ResistiveNetwork::new();
        let ids: Vec<_> = (0..4).map(|i| aux(&mut net, i)).collect();
        net.fix_voltage(ids[0], 2.0).unwrap();
        net.fix_voltage(ids[3], 0.0).unwrap();
        net.add_branch(ids[0], ids[1], f64::INFINITY, BranchTag::Other(0)).unwrap();
        net.add_branch(ids[1], ids[2], 1.0, BranchTag::Other(1)).unwrap();
        net.add_branch(ids[2], ids[3], f64::INFINITY, BranchTag::Other(2)).unwrap();
        let r = solve_network(&net).unwrap();
        assert_eq!(r.voltage(ids[1]), 2.0);
        assert_eq!(r.voltage(ids[2]), 0.0);
        assert_relative_eq!(r.current(0), 2.0);
        assert_relative_eq!(r.current(2), 2.0);
    }

    #[test]
    fn shorted_sources_rejected() {
        let mut net = ResistiveNetwork::new();
        let (a, b) = (aux(&mut net, 0), aux(&mut net, 1));
        net.fix_voltage(a, 1.0).unwrap();
        net.fix_voltage(b, 0.0).unwrap();
        net.add_branch(a, b, f64::INFINITY, BranchTag::Other(0)).unwrap();
        assert!(matches!(solve_network(&net), Err(NetworkError::ShortedSources { .. })));
    }

    #[test]
    fn island_reported_then_pruned() {
        let mut net = ResistiveNetwork::new();
        let ids: Vec<_> = (0..4).map(|i| aux(&mut net, i)).collect();
        net.fix_voltage(ids[0], 1.0).unwrap();
        net.add_branch(ids[0], ids[1], 1.0, BranchTag::Other(0)).unwrap();
        net.add_branch(ids[2], ids[3], 1.0, BranchTag::Other(1)).unwrap();
        match solve_network(&net) {
            Err(NetworkError::SingularSystem { nodes }) => assert_eq!(nodes, vec![2, 3]),
            other => panic!("expected singular system, got {other:?}"),
        }
        assert_eq!(net.prune_floating(), 2);
        let r = solve_network(&net).unwrap();
        assert_eq!(r.voltage(ids[1]), 1.0);
        assert!(r.voltage(ids[2]).is_nan());
    }

    #[test]
    fn rejects_bad_branches() {
        let mut net = ResistiveNetwork::new();
        let a = aux(&mut net, 0);
        assert!(net.add_branch(a, 5, 1.0, BranchTag::Other(0)).is_err());
        assert!(net.add_branch(a, a, 0.0, BranchTag::Other(0)).is_err());
        assert!(net.add_branch(a, a, f64::NAN, BranchTag::Other(0)).is_err());
        assert!(matches!(solve_network(&net), Err(NetworkError::NoSource)));
    }

    #[test]
    fn netlist_format() {
        let mut net = ResistiveNetwork::new();
        let a = net.add_node(NodeLabel::Rail(0));
        let b = net.add_node(NodeLabel::BitTap { sub: 0, row: 1, k: 2 });
        net.fix_voltage(a, 0.5).unwrap();
        net.add_branch(a, b, 2.0, BranchTag::Other(0)).unwrap();
        let mut buf = Vec::new();
        net.write_netlist(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("# source rail0 5.000000000000e-1"));
        assert!(s.contains("rail0 s0.bl1.k2 2.000000000000e0"));
    }
}
