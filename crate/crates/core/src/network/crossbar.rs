//! Crosspoint subarray netlists.
//!
//! Topology of one subarray (row 0 nearest the drivers):
//!
//! * WLT_c and WLB_c run across the rows. Each starts at a line-end node
//!   where its driver, ground switch or link attaches, followed by one
//!   `g_y` segment per row up to the tap of that row.
//! * BL_r has nodes k = 0..=n_column joined by `g_x` segments; its end node
//!   is k = n_column.
//! * Top cell (r, c) joins WLT_c's row-r tap to BL node c; bottom cell
//!   (r, c) joins BL node c + 1 to WLB_c's row-r tap. Every cell footprint
//!   therefore owns exactly one BL segment.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{
    solve_network, BranchId, BranchTag, LineKind, NetworkError, NodeId, NodeLabel,
    ResistiveNetwork, SolveResult,
};
use crate::design::Design;
use crate::device::{cell_conductance, ots_conductance, CellMatrix, CellState, OtsParams};
use crate::drive::{BlDrive, DrivePattern, WlbDrive, WltDrive};
use crate::error::XbarError;
use crate::interconnect::SegmentConductances;
use crate::thevenin::TheveninEquivalent;

/// How a line takes part in one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineUse {
    /// Disconnected: the line and every cell on it are left out
    Float,
    /// Connected to its cells, end left open
    Open,
    /// End held at a voltage through the driver resistance [V]
    Driven(f64),
    /// End tied to ground through the driver resistance
    Grounded,
    /// End tied to a node elsewhere in the network through a switch [S]
    Linked { node: NodeId, g: f64 },
}

/// Selector handling in oracle solves.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum OtsTreatment {
    /// Selectors omitted (ideal ON switch in series with each cell)
    #[default]
    Ideal,
    /// Two-state selector in series with each cell, state fixed from a
    /// first all-ON solve
    TwoState,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleOptions {
    pub ots: OtsTreatment,
    /// Keep cells and wires of floated lines (sneak-path diagnostics)
    pub sneak_paths: bool,
}

/// One subarray's contribution to a network.
///
/// Cell conductances are row-major; 0 leaves the cell out and infinity
/// shorts it.
#[derive(Debug, Clone)]
pub struct SubarrayLayout<'a> {
    pub sub: u16,
    pub n_row: usize,
    pub n_column: usize,
    pub seg: SegmentConductances,
    /// Driver / ground-switch resistance [Ω]
    pub r_driver: f64,
    pub top_g: &'a [f64],
    pub bottom_g: &'a [f64],
    /// Per-cell selector state (true = ON) when selectors are modelled
    pub selectors: Option<Selectors<'a>>,
    pub wlt: &'a [LineUse],
    pub wlb: &'a [LineUse],
    pub bl: &'a [LineUse],
    pub sneak_paths: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct Selectors<'a> {
    pub params: OtsParams,
    pub top_on: &'a [bool],
    pub bottom_on: &'a [bool],
}

/// Node and branch indices of a subarray inside a larger network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubarrayHandle {
    pub sub: u16,
    pub n_row: usize,
    pub n_column: usize,
    pub wlt_end: Vec<Option<NodeId>>,
    pub wlb_end: Vec<Option<NodeId>>,
    pub bl_end: Vec<Option<NodeId>>,
    /// PCM branch of each top cell
    pub top_cell: Vec<Option<BranchId>>,
    pub bottom_cell: Vec<Option<BranchId>>,
    /// (word-line tap, bit-line node) across each top cell stack
    pub top_terminals: Vec<Option<(NodeId, NodeId)>>,
    pub bottom_terminals: Vec<Option<(NodeId, NodeId)>>,
    /// First segment of each bit line
    pub bl_first_segment: Vec<Option<BranchId>>,
}

impl SubarrayHandle {
    pub fn top_current(&self, res: &SolveResult, r: usize, c: usize) -> f64 {
        self.top_cell[r * self.n_column + c].map_or(0.0, |b| res.current(b))
    }

    /// Current through bottom cell (r, c), positive from bit line to WLB.
    pub fn bottom_current(&self, res: &SolveResult, r: usize, c: usize) -> f64 {
        self.bottom_cell[r * self.n_column + c].map_or(0.0, |b| res.current(b))
    }
}

/// Shared supply rails, one node per distinct voltage.
#[derive(Debug, Default)]
pub struct Rails {
    nodes: HashMap<u64, NodeId>,
}

impl Rails {
    pub fn node(&mut self, net: &mut ResistiveNetwork, v: f64) -> Result<NodeId, NetworkError> {
        let key = if v == 0.0 { 0 } else { v.to_bits() };
        if let Some(&n) = self.nodes.get(&key) {
            return Ok(n);
        }
        let n = net.add_node(NodeLabel::Rail(self.nodes.len() as u32));
        net.fix_voltage(n, v)?;
        self.nodes.insert(key, n);
        Ok(n)
    }
}

fn conductance_of(r: f64) -> f64 {
    if r == 0.0 {
        f64::INFINITY
    } else {
        1.0 / r
    }
}

fn terminate(
    net: &mut ResistiveNetwork,
    rails: &mut Rails,
    end: NodeId,
    usage: LineUse,
    r_driver: f64,
    tag: BranchTag,
) -> Result<(), NetworkError> {
    match usage {
        LineUse::Driven(v) => {
            let rail = rails.node(net, v)?;
            net.add_branch(rail, end, conductance_of(r_driver), tag)?;
        }
        LineUse::Grounded => {
            let rail = rails.node(net, 0.0)?;
            net.add_branch(end, rail, conductance_of(r_driver), tag)?;
        }
        LineUse::Linked { node, g } => {
            net.add_branch(node, end, g, BranchTag::Link { index: end as u32 })?;
        }
        LineUse::Open | LineUse::Float => {}
    }
    Ok(())
}

/// Adds one subarray to `net`.
pub fn add_subarray(
    net: &mut ResistiveNetwork,
    rails: &mut Rails,
    lay: &SubarrayLayout,
) -> Result<SubarrayHandle, NetworkError> {
    let (nr, nc, sub) = (lay.n_row, lay.n_column, lay.sub);
    let cells = nr * nc;
    if lay.top_g.len() != cells
        || lay.bottom_g.len() != cells
        || lay.wlt.len() != nc
        || lay.wlb.len() != nc
        || lay.bl.len() != nr
    {
        return Err(NetworkError::Dimension(format!(
            "subarray {sub}: layout does not match {nr}x{nc}"
        )));
    }
    if let Some(s) = &lay.selectors {
        if s.top_on.len() != cells || s.bottom_on.len() != cells {
            return Err(NetworkError::Dimension("selector state size".into()));
        }
    }
    let used = |u: LineUse| lay.sneak_paths || u != LineUse::Float;

    let mut h = SubarrayHandle {
        sub,
        n_row: nr,
        n_column: nc,
        wlt_end: vec![None; nc],
        wlb_end: vec![None; nc],
        bl_end: vec![None; nr],
        top_cell: vec![None; cells],
        bottom_cell: vec![None; cells],
        top_terminals: vec![None; cells],
        bottom_terminals: vec![None; cells],
        bl_first_segment: vec![None; nr],
    };

    // word lines: taps[c][r]
    let word = |net: &mut ResistiveNetwork,
                    rails: &mut Rails,
                    line: LineKind,
                    uses: &[LineUse],
                    ends: &mut Vec<Option<NodeId>>|
     -> Result<Vec<Option<Vec<NodeId>>>, NetworkError> {
        let mut taps = Vec::with_capacity(nc);
        for c in 0..nc {
            if !used(uses[c]) {
                taps.push(None);
                continue;
            }
            let end = net.add_node(NodeLabel::LineEnd { sub, line, index: c as u32 });
            ends[c] = Some(end);
            terminate(net, rails, end, uses[c], lay.r_driver, BranchTag::Driver {
                sub,
                line,
                index: c as u32,
            })?;
            let mut prev = end;
            let mut col = Vec::with_capacity(nr);
            for r in 0..nr {
                let t = net.add_node(NodeLabel::WordTap { sub, line, row: r as u32, col: c as u32 });
                net.add_branch(prev, t, lay.seg.g_y, BranchTag::Wire {
                    sub,
                    line,
                    index: c as u32,
                    seg: r as u32,
                })?;
                col.push(t);
                prev = t;
            }
            taps.push(Some(col));
        }
        Ok(taps)
    };
    let wlt_taps = word(net, rails, LineKind::Wlt, lay.wlt, &mut h.wlt_end)?;
    let wlb_taps = word(net, rails, LineKind::Wlb, lay.wlb, &mut h.wlb_end)?;

    for r in 0..nr {
        if !used(lay.bl[r]) {
            continue;
        }
        let xs: Vec<NodeId> = (0..=nc)
            .map(|k| net.add_node(NodeLabel::BitTap { sub, row: r as u32, k: k as u32 }))
            .collect();
        for k in 0..nc {
            let b = net.add_branch(xs[k], xs[k + 1], lay.seg.g_x, BranchTag::Wire {
                sub,
                line: LineKind::Bl,
                index: r as u32,
                seg: k as u32,
            })?;
            if k == 0 {
                h.bl_first_segment[r] = Some(b);
            }
        }
        h.bl_end[r] = Some(xs[nc]);
        terminate(net, rails, xs[nc], lay.bl[r], lay.r_driver, BranchTag::Driver {
            sub,
            line: LineKind::Bl,
            index: r as u32,
        })?;

        for c in 0..nc {
            let i = r * nc + c;
            if let Some(taps) = &wlt_taps[c] {
                let g = lay.top_g[i];
                if g > 0.0 {
                    let on = lay.selectors.map(|s| (s.params, s.top_on[i]));
                    let b = add_cell(net, taps[r], xs[c], g, on, true, sub, r, c)?;
                    h.top_cell[i] = Some(b);
                    h.top_terminals[i] = Some((taps[r], xs[c]));
                }
            }
            if let Some(taps) = &wlb_taps[c] {
                let g = lay.bottom_g[i];
                if g > 0.0 {
                    let on = lay.selectors.map(|s| (s.params, s.bottom_on[i]));
                    let b = add_cell(net, xs[c + 1], taps[r], g, on, false, sub, r, c)?;
                    h.bottom_cell[i] = Some(b);
                    h.bottom_terminals[i] = Some((taps[r], xs[c + 1]));
                }
            }
        }
    }
    Ok(h)
}

/// PCM element, optionally followed by its selector; returns the PCM branch.
#[allow(clippy::too_many_arguments)]
fn add_cell(
    net: &mut ResistiveNetwork,
    from: NodeId,
    to: NodeId,
    g: f64,
    selector: Option<(OtsParams, bool)>,
    top: bool,
    sub: u16,
    r: usize,
    c: usize,
) -> Result<BranchId, NetworkError> {
    let (row, col) = (r as u32, c as u32);
    let tag = if top {
        BranchTag::TopCell { sub, row, col }
    } else {
        BranchTag::BottomCell { sub, row, col }
    };
    match selector {
        None => net.add_branch(from, to, g, tag),
        Some((p, on)) => {
            let mid = net.add_node(NodeLabel::Selector { sub, top, row, col });
            let b = net.add_branch(from, mid, g, tag)?;
            let gs = if on { p.g_on } else { p.g_off };
            net.add_branch(mid, to, gs, BranchTag::Selector { sub, top, row, col })?;
            Ok(b)
        }
    }
}

/// Maps a drive pattern onto line usages.
pub fn drive_lines(drive: &DrivePattern) -> (Vec<LineUse>, Vec<LineUse>, Vec<LineUse>) {
    let wlt = drive
        .wlt
        .iter()
        .map(|d| match d {
            WltDrive::Driven(s) => LineUse::Driven(s * drive.v_dd),
            WltDrive::Float => LineUse::Float,
        })
        .collect();
    let wlb = drive
        .wlb
        .iter()
        .map(|d| match d {
            WlbDrive::Ground => LineUse::Grounded,
            WlbDrive::Float => LineUse::Float,
        })
        .collect();
    let bl = drive
        .bl
        .iter()
        .map(|d| match d {
            BlDrive::Active => LineUse::Open,
            BlDrive::Float => LineUse::Float,
            BlDrive::Ground => LineUse::Grounded,
        })
        .collect();
    (wlt, wlb, bl)
}

/// A built single-subarray network.
#[derive(Debug, Clone)]
pub struct CrossbarNetwork {
    pub net: ResistiveNetwork,
    pub handle: SubarrayHandle,
}

/// Cell conductances for a state matrix, with optional per-column override
/// of the bottom level (used to hold output cells at G_C).
pub fn state_conductances(
    design: &Design,
    states: &CellMatrix,
    override_col: Option<(usize, f64)>,
) -> Vec<f64> {
    let (nr, nc) = (states.rows(), states.cols());
    let mut g = Vec::with_capacity(nr * nc);
    for r in 0..nr {
        for c in 0..nc {
            g.push(match override_col {
                Some((oc, v)) if oc == c => v,
                _ => cell_conductance(states.get(r, c), &design.cell),
            });
        }
    }
    g
}

/// Builds the network of one subarray under a drive pattern.
pub fn build_crossbar_network(
    design: &Design,
    top_g: &[f64],
    bottom_g: &[f64],
    drive: &DrivePattern,
    opts: &OracleOptions,
    selectors: Option<(&[bool], &[bool])>,
) -> Result<CrossbarNetwork, XbarError> {
    let geom = &design.geometry;
    drive.check_dims(geom.n_row, geom.n_column)?;
    let any_source = drive.wlt.iter().any(|d| matches!(d, WltDrive::Driven(_)))
        || drive.wlb.contains(&WlbDrive::Ground)
        || drive.bl.contains(&BlDrive::Ground);
    if !any_source {
        return Err(NetworkError::NoSource.into());
    }
    let seg = design.parasitics()?;
    let (wlt, wlb, bl) = drive_lines(drive);
    let mut net = ResistiveNetwork::new();
    let mut rails = Rails::default();
    let lay = SubarrayLayout {
        sub: 0,
        n_row: geom.n_row,
        n_column: geom.n_column,
        seg,
        r_driver: geom.r_driver,
        top_g,
        bottom_g,
        selectors: selectors.map(|(t, b)| Selectors { params: design.ots, top_on: t, bottom_on: b }),
        wlt: &wlt,
        wlb: &wlb,
        bl: &bl,
        sneak_paths: opts.sneak_paths,
    };
    let handle = add_subarray(&mut net, &mut rails, &lay)?;
    net.prune_floating();
    Ok(CrossbarNetwork { net, handle })
}

/// Solved crossbar, with the selector states used and any cells whose
/// selector state disagrees with the final solution.
#[derive(Debug, Clone)]
pub struct CrossbarSolution {
    pub network: CrossbarNetwork,
    pub result: SolveResult,
    /// (top level?, row, column) of cells whose selector flipped between passes
    pub ots_divergence: Vec<(bool, usize, usize)>,
}

impl CrossbarSolution {
    pub fn top_current(&self, r: usize, c: usize) -> f64 {
        self.network.handle.top_current(&self.result, r, c)
    }

    pub fn bottom_current(&self, r: usize, c: usize) -> f64 {
        self.network.handle.bottom_current(&self.result, r, c)
    }
}

fn selector_states(
    h: &SubarrayHandle,
    res: &SolveResult,
    ots: &OtsParams,
) -> (Vec<bool>, Vec<bool>) {
    let judge = |t: &Option<(NodeId, NodeId)>| match t {
        Some((a, b)) => {
            let v = res.voltage(*a) - res.voltage(*b);
            ots_conductance(v, ots) == ots.g_on
        }
        None => true,
    };
    (
        h.top_terminals.iter().map(judge).collect(),
        h.bottom_terminals.iter().map(judge).collect(),
    )
}

/// Builds and solves a subarray, handling selectors per `opts`.
pub fn solve_crossbar(
    design: &Design,
    top_g: &[f64],
    bottom_g: &[f64],
    drive: &DrivePattern,
    opts: &OracleOptions,
) -> Result<CrossbarSolution, XbarError> {
    match opts.ots {
        OtsTreatment::Ideal => {
            let network = build_crossbar_network(design, top_g, bottom_g, drive, opts, None)?;
            let result = solve_network(&network.net)?;
            Ok(CrossbarSolution { network, result, ots_divergence: Vec::new() })
        }
        OtsTreatment::TwoState => {
            let cells = top_g.len();
            let all_on = vec![true; cells];
            let first = build_crossbar_network(
                design,
                top_g,
                bottom_g,
                drive,
                opts,
                Some((&all_on, &all_on)),
            )?;
            let r1 = solve_network(&first.net)?;
            let (t_on, b_on) = selector_states(&first.handle, &r1, &design.ots);
            let network =
                build_crossbar_network(design, top_g, bottom_g, drive, opts, Some((&t_on, &b_on)))?;
            let result = solve_network(&network.net)?;
            let (t2, b2) = selector_states(&network.handle, &result, &design.ots);
            let nc = design.geometry.n_column;
            let mut ots_divergence = Vec::new();
            for i in 0..cells {
                if network.handle.top_cell[i].is_some() && t2[i] != t_on[i] {
                    ots_divergence.push((true, i / nc, i % nc));
                }
                if network.handle.bottom_cell[i].is_some() && b2[i] != b_on[i] {
                    ots_divergence.push((false, i / nc, i % nc));
                }
            }
            Ok(CrossbarSolution { network, result, ots_divergence })
        }
    }
}

/// Corner-case cell conductances: every row's input (column 0, top) and
/// output (last column, bottom) cell crystalline, other cells amorphous.
fn corner_cells(design: &Design) -> (Vec<f64>, Vec<f64>) {
    let (nr, nc) = (design.geometry.n_row, design.geometry.n_column);
    let ga = design.cell.g_amorphous;
    let gc = design.cell.g_crystalline;
    let mut top = vec![ga; nr * nc];
    let mut bottom = vec![ga; nr * nc];
    for r in 0..nr {
        top[r * nc] = gc;
        bottom[r * nc + nc - 1] = gc;
    }
    (top, bottom)
}

/// Current through the last row's output cell in the corner case, with the
/// last row's input cell in `input` state and its output held at `g_out`.
pub fn last_row_current(
    design: &Design,
    v_dd: f64,
    input: CellState,
    g_out: f64,
) -> Result<f64, XbarError> {
    let (nr, nc) = (design.geometry.n_row, design.geometry.n_column);
    let (mut top, mut bottom) = corner_cells(design);
    top[(nr - 1) * nc] = cell_conductance(input, &design.cell);
    bottom[(nr - 1) * nc + nc - 1] = g_out;
    let drive = DrivePattern::corner(nr, nc, v_dd, design.cell.t_set);
    let sol = solve_crossbar(design, &top, &bottom, &drive, &OracleOptions::default())?;
    Ok(sol.bottom_current(nr - 1, nc - 1))
}

/// Port-level Thevenin extraction at the last row of the corner case:
/// open-circuit voltage with both last-row cells removed, short-circuit
/// current with both replaced by ideal shorts.
pub fn oracle_thevenin(design: &Design, v_dd: f64) -> Result<TheveninEquivalent, XbarError> {
    let (nr, nc) = (design.geometry.n_row, design.geometry.n_column);
    let last_in = (nr - 1) * nc;
    let last_out = (nr - 1) * nc + nc - 1;
    let drive = DrivePattern::corner(nr, nc, v_dd, design.cell.t_set);
    let opts = OracleOptions::default();

    let (mut top, mut bottom) = corner_cells(design);
    top[last_in] = 0.0;
    bottom[last_out] = 0.0;
    let open = build_crossbar_network(design, &top, &bottom, &drive, &opts, None)?;
    let r_open = solve_network(&open.net)?;
    let wlt_tap = find_word_tap(&open.net, LineKind::Wlt, nr - 1, 0)?;
    let wlb_tap = find_word_tap(&open.net, LineKind::Wlb, nr - 1, nc - 1)?;
    let v_oc = r_open.voltage(wlt_tap) - r_open.voltage(wlb_tap);

    top[last_in] = f64::INFINITY;
    bottom[last_out] = f64::INFINITY;
    let short = build_crossbar_network(design, &top, &bottom, &drive, &opts, None)?;
    let r_th = match solve_network(&short.net) {
        Ok(res) => {
            let seg = short.handle.bl_first_segment[nr - 1]
                .ok_or_else(|| NetworkError::Topology("last bit line missing".into()))?;
            v_oc / res.current(seg)
        }
        // every element between source and ground is ideal
        Err(NetworkError::ShortedSources { .. }) => 0.0,
        Err(e) => return Err(e.into()),
    };
    Ok(TheveninEquivalent { r_th, v_th: v_oc, alpha_th: v_oc / v_dd })
}

fn find_word_tap(
    net: &ResistiveNetwork,
    line: LineKind,
    row: usize,
    col: usize,
) -> Result<NodeId, NetworkError> {
    let want = NodeLabel::WordTap { sub: 0, line, row: row as u32, col: col as u32 };
    (0..net.node_count())
        .find(|&i| net.label(i) == want)
        .ok_or_else(|| NetworkError::Topology(format!("node {want} missing")))
}
