//! Chained subarrays and two-layer network scheduling.
//!
//! A link closes one switch per bit line of the source subarray. In
//! BL-to-BL mode source BL_r meets sink BL_r and results land in the sink's
//! bottom level; in BL-to-WLT mode source BL_r drives sink WLT_r and results
//! land in the sink's top level, one sink row (grounded BL) per step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compute::{
    judge_cell, tmvm_execute_with, AnalyticModel, DisturbReport, ExecMode, ExecutionTrace, Level,
    RowPath, SubarrayState,
};
use crate::design::Design;
use crate::device::{cell_conductance, pulse_outcome, CellState, PulseEvent};
use crate::drive::{DrivePattern, WltDrive};
use crate::error::XbarError;
use crate::network::{
    add_subarray, solve_network, state_conductances, LineKind, LineUse, OracleOptions, Rails,
    ResistiveNetwork, SubarrayLayout,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("link {source_idx}->{sink}: sink has {have} {what}, source needs {need}")]
    Incompatible { source_idx: usize, sink: usize, what: &'static str, have: usize, need: usize },
    #[error("plan needs at least one subarray")]
    Empty,
    #[error("layer {layer} weights are {rows}x{cols}, subarray fits {max_rows}x{max_cols}")]
    WeightShape { layer: usize, rows: usize, cols: usize, max_rows: usize, max_cols: usize },
    #[error("need at least one image")]
    NoImages,
    #[error("step {step} disturbed {cells} cell(s)")]
    Disturb { step: usize, cells: usize },
    #[error("plan/schedule mismatch: {0}")]
    Mismatch(String),
    #[error("no supply realizes threshold {k} for layer {layer}")]
    NoVoltage { layer: usize, k: usize },
    #[error("line status of {line:?} in subarray {sub} is {found:?}, table requires {want:?}")]
    LineStatus { line: LineKind, sub: usize, found: LineStatus, want: LineStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkMode {
    BlToBl,
    BlToWlt,
}

/// Line status vocabulary of the chaining table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LineStatus {
    /// Input voltages applied
    Applied,
    AllActive,
    AllFloat,
    /// All floating except the single output line, which is grounded
    FloatExceptOutputGrounded,
}

/// Required status of each (line kind, subarray 1|2) pair in a link mode.
pub fn line_status_table(mode: LinkMode) -> [(LineKind, usize, LineStatus); 6] {
    use LineStatus::*;
    match mode {
        LinkMode::BlToBl => [
            (LineKind::Wlt, 1, Applied),
            (LineKind::Wlt, 2, AllFloat),
            (LineKind::Bl, 1, AllActive),
            (LineKind::Bl, 2, AllActive),
            (LineKind::Wlb, 1, AllFloat),
            (LineKind::Wlb, 2, FloatExceptOutputGrounded),
        ],
        LinkMode::BlToWlt => [
            (LineKind::Wlt, 1, Applied),
            (LineKind::Wlt, 2, AllActive),
            (LineKind::Bl, 1, AllActive),
            (LineKind::Bl, 2, FloatExceptOutputGrounded),
            (LineKind::Wlb, 1, AllFloat),
            (LineKind::Wlb, 2, AllFloat),
        ],
    }
}

/// Classifies a set of line usages into the table vocabulary.
pub fn classify_lines(uses: &[LineUse]) -> Option<LineStatus> {
    let grounded = uses.iter().filter(|u| **u == LineUse::Grounded).count();
    let floating = uses.iter().filter(|u| **u == LineUse::Float).count();
    let active = uses.iter().filter(|u| matches!(u, LineUse::Open | LineUse::Linked { .. })).count();
    let applied = uses.iter().filter(|u| matches!(u, LineUse::Driven(_))).count();
    let n = uses.len();
    if floating == n {
        Some(LineStatus::AllFloat)
    } else if grounded == 1 && floating == n - 1 {
        Some(LineStatus::FloatExceptOutputGrounded)
    } else if active == n {
        Some(LineStatus::AllActive)
    } else if applied + floating == n {
        Some(LineStatus::Applied)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub source: usize,
    pub sink: usize,
    pub mode: LinkMode,
    /// Closed state of the switch on each source bit line
    pub switches: Vec<bool>,
    /// Closed-switch resistance [Ω]; 0 is an ideal switch
    pub switch_resistance: f64,
}

impl Link {
    fn switch_conductance(&self) -> f64 {
        if self.switch_resistance == 0.0 {
            f64::INFINITY
        } else {
            1.0 / self.switch_resistance
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricPlan {
    pub designs: Vec<Design>,
    pub subarrays: Vec<SubarrayState>,
    pub links: Vec<Link>,
}

/// Chains consecutive subarrays with links of one mode.
pub fn chain(subarrays: Vec<(Design, SubarrayState)>, mode: LinkMode) -> Result<FabricPlan, FabricError> {
    if subarrays.is_empty() {
        return Err(FabricError::Empty);
    }
    let mut links = Vec::new();
    for i in 1..subarrays.len() {
        let src = &subarrays[i - 1].0.geometry;
        let dst = &subarrays[i].0.geometry;
        let (what, have) = match mode {
            LinkMode::BlToBl => ("bit lines", dst.n_row),
            LinkMode::BlToWlt => ("top word lines", dst.n_column),
        };
        if have < src.n_row {
            return Err(FabricError::Incompatible { source_idx: i - 1, sink: i, what, have, need: src.n_row });
        }
        links.push(Link {
            source: i - 1,
            sink: i,
            mode,
            switches: vec![true; src.n_row],
            switch_resistance: 0.0,
        });
    }
    let (designs, subarrays) = subarrays.into_iter().unzip();
    Ok(FabricPlan { designs, subarrays, links })
}

/// Result of one step across a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedOutcome {
    /// Result bit per source row (None when its switch is open)
    pub bits: Vec<Option<bool>>,
    /// Output-cell current per source row [A]
    pub currents: Vec<f64>,
    pub disturb: DisturbReport,
    pub trace: ExecutionTrace,
}

/// Line usages of both subarrays for a linked step.
fn linked_usage(
    plan: &FabricPlan,
    link: &Link,
    inputs: &[WltDrive],
    target: usize,
    v_dd: f64,
) -> [Vec<LineUse>; 6] {
    let g1 = &plan.designs[link.source].geometry;
    let g2 = &plan.designs[link.sink].geometry;
    let wlt1 = inputs
        .iter()
        .map(|d| match d {
            WltDrive::Driven(s) => LineUse::Driven(s * v_dd),
            WltDrive::Float => LineUse::Float,
        })
        .collect();
    let wlb1 = vec![LineUse::Float; g1.n_column];
    let bl1 = vec![LineUse::Open; g1.n_row];
    // placeholder links; node ids are filled in once subarray 1 exists
    let linked = LineUse::Linked { node: 0, g: link.switch_conductance() };
    let (wlt2, bl2, wlb2) = match link.mode {
        LinkMode::BlToBl => (
            vec![LineUse::Float; g2.n_column],
            (0..g2.n_row).map(|r| if r < g1.n_row { linked } else { LineUse::Float }).collect(),
            (0..g2.n_column)
                .map(|c| if c == target { LineUse::Grounded } else { LineUse::Float })
                .collect(),
        ),
        LinkMode::BlToWlt => (
            (0..g2.n_column).map(|c| if c < g1.n_row { linked } else { LineUse::Float }).collect(),
            (0..g2.n_row).map(|r| if r == target { LineUse::Grounded } else { LineUse::Float }).collect(),
            vec![LineUse::Float; g2.n_column],
        ),
    };
    [wlt1, wlb1, bl1, wlt2, bl2, wlb2]
}

/// Checks a linked step's line usage against the status table.
pub fn check_line_status(mode: LinkMode, usage: &[Vec<LineUse>; 6]) -> Result<(), FabricError> {
    let [wlt1, wlb1, bl1, wlt2, bl2, wlb2] = usage;
    let lookup = |line: LineKind, sub: usize| -> &Vec<LineUse> {
        match (line, sub) {
            (LineKind::Wlt, 1) => wlt1,
            (LineKind::Wlb, 1) => wlb1,
            (LineKind::Bl, 1) => bl1,
            (LineKind::Wlt, _) => wlt2,
            (LineKind::Bl, _) => bl2,
            (LineKind::Wlb, _) => wlb2,
        }
    };
    for (line, sub, want) in line_status_table(mode) {
        let uses = lookup(line, sub);
        let found = classify_lines(uses);
        // an all-floating input set is a legal (all-zero) application
        let ok = found == Some(want)
            || (want == LineStatus::Applied && found == Some(LineStatus::AllFloat))
            // unlinked sink lines beyond the source's bit-line count float
            || (want == LineStatus::AllActive
                && sub == 2
                && uses.iter().all(|u| !matches!(u, LineUse::Driven(_) | LineUse::Grounded | LineUse::Open)));
        if !ok {
            return Err(FabricError::LineStatus {
                line,
                sub,
                found: found.unwrap_or(LineStatus::Applied),
                want,
            });
        }
    }
    Ok(())
}

/// Sink cell receiving source row `r`'s result.
fn sink_cell(mode: LinkMode, r: usize, target: usize) -> (Level, usize, usize) {
    match mode {
        LinkMode::BlToBl => (Level::Bottom, r, target),
        LinkMode::BlToWlt => (Level::Top, target, r),
    }
}

/// One step across link `link_idx`: `inputs` drive the source WLTs and
/// `target` selects the sink output line (WLB column for BL-to-BL, grounded
/// BL row for BL-to-WLT). Writes results into the sink state.
pub fn execute_linked(
    plan: &mut FabricPlan,
    link_idx: usize,
    inputs: &[WltDrive],
    target: usize,
    v_dd: f64,
    duration: f64,
    mode: ExecMode,
) -> Result<LinkedOutcome, XbarError> {
    let link = plan
        .links
        .get(link_idx)
        .cloned()
        .ok_or_else(|| FabricError::Mismatch(format!("no link {link_idx}")))?;
    let (d1, d2) = (plan.designs[link.source].clone(), plan.designs[link.sink].clone());
    let (g1, g2) = (&d1.geometry, &d2.geometry);
    let limit = match link.mode {
        LinkMode::BlToBl => g2.n_column,
        LinkMode::BlToWlt => g2.n_row,
    };
    if inputs.len() != g1.n_column || target >= limit {
        return Err(FabricError::Mismatch(format!(
            "{} inputs for {} columns, target {target} of {limit}",
            inputs.len(),
            g1.n_column
        ))
        .into());
    }
    let usage = linked_usage(plan, &link, inputs, target, v_dd);
    check_line_status(link.mode, &usage)?;

    let p = d1.cell;
    let n_src = g1.n_row;
    let active: Vec<bool> = (0..n_src).map(|r| link.switches[r]).collect();
    {
        let sink = &mut plan.subarrays[link.sink];
        for r in (0..n_src).filter(|&r| active[r]) {
            let (lvl, rr, cc) = sink_cell(link.mode, r, target);
            match lvl {
                Level::Top => sink.top.set(rr, cc, CellState::Amorphous),
                Level::Bottom => sink.bottom.set(rr, cc, CellState::Amorphous),
            }
        }
    }
    let src = plan.subarrays[link.source].clone();
    let mut disturb = DisturbReport::default();
    let mut trace = ExecutionTrace {
        v_dd,
        duration,
        row_currents: vec![0.0; n_src],
        sources: Vec::new(),
    };
    let driven: Vec<(usize, f64)> = inputs
        .iter()
        .enumerate()
        .filter_map(|(c, d)| match d {
            WltDrive::Driven(s) => Some((c, *s)),
            WltDrive::Float => None,
        })
        .collect();

    match mode {
        ExecMode::Analytic => {
            let m1 = AnalyticModel::new(&d1)?;
            let m2 = AnalyticModel::new(&d2)?;
            let r_sw = link.switch_resistance;
            let mut per_source = vec![0.0; g1.n_column];
            for r in (0..n_src).filter(|&r| active[r]) {
                let (mut s, mut sv) = (0.0, 0.0);
                for &(c, scale) in &driven {
                    let g = cell_conductance(src.top.get(r, c), &p);
                    s += g;
                    sv += g * scale * v_dd;
                }
                if s == 0.0 {
                    continue;
                }
                let sink_row = match link.mode {
                    LinkMode::BlToBl => r,
                    LinkMode::BlToWlt => target,
                };
                let path = m1
                    .path(r)
                    .then(RowPath { alpha: 1.0, r_series: r_sw })
                    .then(m2.path(sink_row));
                let v_eq = sv / s;
                let i_out = path.current(s, v_eq, p.g_crystalline);
                trace.row_currents[r] = i_out;
                let v_node = path.alpha * v_eq - i_out / s;
                for &(c, scale) in &driven {
                    let g = cell_conductance(src.top.get(r, c), &p);
                    let i = g * (path.alpha * scale * v_dd - v_node);
                    per_source[c] += i;
                    judge_cell(Level::Top, r, c, src.top.get(r, c), i, duration, &p, &mut disturb)?;
                }
            }
            for &(c, scale) in &driven {
                trace.sources.push((scale * v_dd, per_source[c]));
            }
        }
        ExecMode::Oracle => {
            if !driven.is_empty() {
                let [wlt1, wlb1, bl1, mut wlt2, mut bl2, wlb2] = usage;
                let mut net = ResistiveNetwork::new();
                let mut rails = Rails::default();
                let top1 = state_conductances(&d1, &src.top, None);
                let bottom1 = state_conductances(&d1, &src.bottom, None);
                let h1 = add_subarray(&mut net, &mut rails, &SubarrayLayout {
                    sub: 0,
                    n_row: g1.n_row,
                    n_column: g1.n_column,
                    seg: d1.parasitics()?,
                    r_driver: g1.r_driver,
                    top_g: &top1,
                    bottom_g: &bottom1,
                    selectors: None,
                    wlt: &wlt1,
                    wlb: &wlb1,
                    bl: &bl1,
                    sneak_paths: false,
                })?;
                let sink_lines = match link.mode {
                    LinkMode::BlToBl => &mut bl2,
                    LinkMode::BlToWlt => &mut wlt2,
                };
                for (i, u) in sink_lines.iter_mut().enumerate() {
                    if let LineUse::Linked { g, .. } = *u {
                        *u = if active[i] {
                            LineUse::Linked { node: h1.bl_end[i].expect("source bit line present"), g }
                        } else {
                            LineUse::Float
                        };
                    }
                }
                let dst = &plan.subarrays[link.sink];
                let gc = p.g_crystalline;
                let mut top2 = state_conductances(&d2, &dst.top, None);
                let mut bottom2 = state_conductances(&d2, &dst.bottom, None);
                for r in (0..n_src).filter(|&r| active[r]) {
                    let (lvl, rr, cc) = sink_cell(link.mode, r, target);
                    match lvl {
                        Level::Top => top2[rr * g2.n_column + cc] = gc,
                        Level::Bottom => bottom2[rr * g2.n_column + cc] = gc,
                    }
                }
                let h2 = add_subarray(&mut net, &mut rails, &SubarrayLayout {
                    sub: 1,
                    n_row: g2.n_row,
                    n_column: g2.n_column,
                    seg: d2.parasitics()?,
                    r_driver: g2.r_driver,
                    top_g: &top2,
                    bottom_g: &bottom2,
                    selectors: None,
                    wlt: &wlt2,
                    wlb: &wlb2,
                    bl: &bl2,
                    sneak_paths: false,
                })?;
                net.prune_floating();
                let res = solve_network(&net)?;
                let mut outputs = vec![None; g2.n_row * g2.n_column];
                for r in (0..n_src).filter(|&r| active[r]) {
                    let (lvl, rr, cc) = sink_cell(link.mode, r, target);
                    let i = match lvl {
                        Level::Top => h2.top_current(&res, rr, cc),
                        Level::Bottom => h2.bottom_current(&res, rr, cc),
                    };
                    trace.row_currents[r] = i;
                    outputs[rr * g2.n_column + cc] = Some(lvl);
                }
                for r in 0..g1.n_row {
                    for c in 0..g1.n_column {
                        if h1.top_cell[r * g1.n_column + c].is_some() {
                            let i = h1.top_current(&res, r, c);
                            judge_cell(Level::Top, r, c, src.top.get(r, c), i, duration, &p, &mut disturb)?;
                        }
                    }
                }
                for r in 0..g2.n_row {
                    for c in 0..g2.n_column {
                        let k = r * g2.n_column + c;
                        if h2.top_cell[k].is_some() && outputs[k] != Some(Level::Top) {
                            let i = h2.top_current(&res, r, c);
                            judge_cell(Level::Top, r, c, dst.top.get(r, c), i, duration, &p, &mut disturb)?;
                        }
                        if h2.bottom_cell[k].is_some() && outputs[k] != Some(Level::Bottom) {
                            let i = h2.bottom_current(&res, r, c);
                            judge_cell(Level::Bottom, r, c, dst.bottom.get(r, c), i, duration, &p, &mut disturb)?;
                        }
                    }
                }
                for &(node, i) in &res.source_currents {
                    let v = res.voltage(node);
                    if v != 0.0 {
                        trace.sources.push((v, i));
                    }
                }
            }
        }
    }

    let mut bits = vec![None; n_src];
    let sink = &mut plan.subarrays[link.sink];
    for r in (0..n_src).filter(|&r| active[r]) {
        let i = trace.row_currents[r];
        let (next, event) = pulse_outcome(CellState::Amorphous, i.abs(), duration, &p)?;
        let (lvl, rr, cc) = sink_cell(link.mode, r, target);
        if event == PulseEvent::ResetEvent {
            disturb.entries.push(crate::compute::Disturb { level: lvl, row: rr, col: cc, current: i, event });
        }
        match lvl {
            Level::Top => sink.top.set(rr, cc, next),
            Level::Bottom => sink.bottom.set(rr, cc, next),
        }
        bits[r] = Some(next.bit());
    }
    let currents = trace.row_currents.clone();
    Ok(LinkedOutcome { bits, currents, disturb, trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StepKind {
    /// Hidden values of one image into sink row `slot`
    Hidden { image: usize, slot: usize },
    /// Second-layer weights of output `column` applied to the sink WLTs
    Output { column: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnStep {
    pub batch: usize,
    /// Subarray whose WLTs carry the step's inputs
    pub subarray: usize,
    pub kind: StepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnSchedule {
    pub steps: Vec<NnStep>,
    /// Images per batch M
    pub images_per_batch: usize,
    pub n_images: usize,
    /// Second-layer weights, one row per output
    pub weights2: Vec<Vec<bool>>,
}

impl NnSchedule {
    pub fn hidden_steps(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s.kind, StepKind::Hidden { .. })).count()
    }

    pub fn output_steps(&self) -> usize {
        self.steps.len() - self.hidden_steps()
    }
}

fn check_shape(layer: usize, w: &[Vec<bool>], max_rows: usize, max_cols: usize) -> Result<(), FabricError> {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    if rows == 0 || rows > max_rows || cols > max_cols || w.iter().any(|r| r.len() != cols) {
        return Err(FabricError::WeightShape { layer, rows, cols, max_rows, max_cols });
    }
    Ok(())
}

/// Loads first-layer weights into subarray 1 of a BL-to-WLT plan; weights
/// are one row per hidden neuron.
pub fn load_first_layer(plan: &mut FabricPlan, weights1: &[Vec<bool>]) -> Result<(), FabricError> {
    let g = &plan.designs[0].geometry;
    check_shape(1, weights1, g.n_row, g.n_column)?;
    let st = &mut plan.subarrays[0];
    for r in 0..g.n_row {
        for c in 0..g.n_column {
            let bit = weights1.get(r).and_then(|w| w.get(c)).copied().unwrap_or(false);
            st.top.set(r, c, CellState::from_bit(bit));
        }
    }
    Ok(())
}

/// Step schedule of a two-layer network on two BL-to-WLT chained
/// subarrays: per batch of M = min(n_row, remaining) images, M hidden steps
/// then one output step per second-layer output.
pub fn schedule_multilayer_nn(
    weights1: &[Vec<bool>],
    weights2: &[Vec<bool>],
    n_images: usize,
    sub1: &crate::interconnect::SubarrayGeometry,
    sub2: &crate::interconnect::SubarrayGeometry,
) -> Result<NnSchedule, FabricError> {
    if n_images == 0 {
        return Err(FabricError::NoImages);
    }
    check_shape(1, weights1, sub1.n_row, sub1.n_column)?;
    // hidden values occupy sink columns, outputs the sink bottom columns
    check_shape(2, weights2, sub2.n_column, sub2.n_column)?;
    let hidden = weights1.len();
    if weights2[0].len() != hidden || hidden > sub2.n_column {
        return Err(FabricError::Mismatch(format!(
            "second layer fan-in {} vs {} hidden neurons",
            weights2[0].len(),
            hidden
        )));
    }
    let m = sub2.n_row.min(n_images);
    let mut steps = Vec::new();
    let mut done = 0;
    let mut batch = 0;
    while done < n_images {
        let here = m.min(n_images - done);
        for slot in 0..here {
            steps.push(NnStep { batch, subarray: 0, kind: StepKind::Hidden { image: done + slot, slot } });
        }
        for column in 0..weights2.len() {
            steps.push(NnStep { batch, subarray: 1, kind: StepKind::Output { column } });
        }
        done += here;
        batch += 1;
    }
    Ok(NnSchedule { steps, images_per_batch: m, n_images, weights2: weights2.to_vec() })
}

/// Per-layer thresholds and pulse settings for a plan run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnDrive {
    /// Active-input thresholds of the two layers
    pub thresholds: [usize; 2],
    /// Explicit supplies; chosen from the threshold windows when None [V]
    pub v_dd: Option<[f64; 2]>,
    /// [s]
    pub duration: f64,
    pub mode: ExecMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FabricOutcome {
    /// Hidden bits per image
    pub hidden: Vec<Vec<bool>>,
    /// Output bits per image
    pub outputs: Vec<Vec<bool>>,
    pub steps_run: usize,
    /// Supplies used for the two layers [V]
    pub v_dd: [f64; 2],
    /// [J]
    pub energy: f64,
}

/// Supplies realizing the two layer thresholds under the analytic model.
pub fn layer_supplies(plan: &FabricPlan, schedule: &NnSchedule, thresholds: [usize; 2]) -> Result<[f64; 2], XbarError> {
    let (d1, d2) = (&plan.designs[0], &plan.designs[1]);
    let m1 = AnalyticModel::new(d1)?;
    let m2 = AnalyticModel::new(d2)?;
    let n_hidden = schedule.weights2[0].len();
    let inputs = d1.geometry.n_column;
    let mut hidden_paths = Vec::new();
    for r in 0..n_hidden.min(d1.geometry.n_row) {
        for m in 0..schedule.images_per_batch {
            hidden_paths.push(m1.path(r).then(m2.path(m)));
        }
    }
    let fan1: Vec<usize> = (thresholds[0].max(1)..=inputs).collect();
    let w1 = crate::compute::threshold_window(&hidden_paths, thresholds[0], &fan1, &d1.cell);
    let fan2: Vec<usize> = schedule.weights2.iter().map(|w| w.iter().filter(|b| **b).count()).filter(|&n| n > 0).collect();
    let out_paths: Vec<RowPath> = m2.paths().into_iter().take(schedule.images_per_batch).collect();
    let w2 = crate::compute::threshold_window(&out_paths, thresholds[1], &fan2, &d2.cell);
    if w1.empty {
        return Err(FabricError::NoVoltage { layer: 1, k: thresholds[0] }.into());
    }
    if w2.empty {
        return Err(FabricError::NoVoltage { layer: 2, k: thresholds[1] }.into());
    }
    Ok([w1.mid(), w2.mid()])
}

/// Runs a two-layer schedule over `images` (one input bit vector each).
pub fn execute_plan(
    plan: &mut FabricPlan,
    schedule: &NnSchedule,
    images: &[Vec<bool>],
    drive: &NnDrive,
) -> Result<FabricOutcome, XbarError> {
    if plan.subarrays.len() != 2 || plan.links.len() != 1 || plan.links[0].mode != LinkMode::BlToWlt {
        return Err(FabricError::Mismatch("two subarrays with one BL-to-WLT link required".into()).into());
    }
    if images.len() != schedule.n_images {
        return Err(FabricError::Mismatch(format!(
            "{} images for a schedule of {}",
            images.len(),
            schedule.n_images
        ))
        .into());
    }
    let v = match drive.v_dd {
        Some(v) => v,
        None => layer_supplies(plan, schedule, drive.thresholds)?,
    };
    let n_hidden = schedule.weights2[0].len();
    let (g1, g2) = (plan.designs[0].geometry, plan.designs[1].geometry);
    let mut hidden = vec![Vec::new(); images.len()];
    let mut outputs = vec![vec![false; schedule.weights2.len()]; images.len()];
    let mut energy = 0.0;
    let mut batch_images: Vec<usize> = Vec::new();
    let mut current_batch = usize::MAX;

    for (idx, step) in schedule.steps.iter().enumerate() {
        if step.batch != current_batch {
            current_batch = step.batch;
            batch_images.clear();
            let sink = &mut plan.subarrays[1];
            *sink = SubarrayState::new(g2.n_row, g2.n_column);
        }
        match step.kind {
            StepKind::Hidden { image, slot } => {
                let x = &images[image];
                let inputs: Vec<WltDrive> = (0..g1.n_column)
                    .map(|c| if x.get(c).copied().unwrap_or(false) { WltDrive::Driven(1.0) } else { WltDrive::Float })
                    .collect();
                let out = execute_linked(plan, 0, &inputs, slot, v[0], drive.duration, drive.mode)?;
                if !out.disturb.is_empty() {
                    return Err(FabricError::Disturb { step: idx, cells: out.disturb.entries.len() }.into());
                }
                energy += crate::compute::estimate_energy(&out.trace);
                hidden[image] = out.bits[..n_hidden].iter().map(|b| b.unwrap_or(false)).collect();
                batch_images.push(image);
            }
            StepKind::Output { column } => {
                let w = &schedule.weights2[column];
                let mut d = DrivePattern::binary(
                    &(0..g2.n_column).map(|c| w.get(c).copied().unwrap_or(false)).collect::<Vec<_>>(),
                    column,
                    g2.n_row,
                    v[1],
                    drive.duration,
                );
                for r in 0..g2.n_row {
                    if r >= batch_images.len() {
                        d.bl[r] = crate::drive::BlDrive::Float;
                    }
                }
                let design = plan.designs[1].clone();
                let out = tmvm_execute_with(&design, &mut plan.subarrays[1], &d, drive.mode, &OracleOptions::default())?;
                if !out.disturb.is_empty() {
                    return Err(FabricError::Disturb { step: idx, cells: out.disturb.entries.len() }.into());
                }
                energy += crate::compute::estimate_energy(&out.trace);
                for (slot, &image) in batch_images.iter().enumerate() {
                    outputs[image][column] = out.bits[slot].unwrap_or(false);
                }
            }
        }
    }
    Ok(FabricOutcome { hidden, outputs, steps_run: schedule.steps.len(), v_dd: v, energy })
}

/// Two-layer thresholded reference.
pub fn reference_two_layer(
    weights1: &[Vec<bool>],
    weights2: &[Vec<bool>],
    thresholds: [usize; 2],
    x: &[bool],
) -> (Vec<bool>, Vec<bool>) {
    let layer = |w: &[Vec<bool>], x: &[bool], k: usize| -> Vec<bool> {
        w.iter().map(|row| crate::compute::reference_bit(row, x, k)).collect()
    };
    let h = layer(weights1, x, thresholds[0]);
    let y = layer(weights2, &h, thresholds[1]);
    (h, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(n1: (usize, usize), n2: (usize, usize), mode: LinkMode) -> FabricPlan {
        let d1 = Design::with_config(3, n1.0, n1.1).unwrap();
        let d2 = Design::with_config(3, n2.0, n2.1).unwrap();
        chain(
            vec![(d1, SubarrayState::new(n1.0, n1.1)), (d2, SubarrayState::new(n2.0, n2.1))],
            mode,
        )
        .unwrap()
    }

    #[test]
    fn chain_checks_compatibility() {
        let d1 = Design::with_config(3, 8, 4).unwrap();
        let d2 = Design::with_config(3, 4, 4).unwrap();
        let e = chain(
            vec![(d1.clone(), SubarrayState::new(8, 4)), (d2.clone(), SubarrayState::new(4, 4))],
            LinkMode::BlToWlt,
        );
        assert!(matches!(e, Err(FabricError::Incompatible { .. })));
        let single = chain(vec![(d1, SubarrayState::new(8, 4))], LinkMode::BlToBl).unwrap();
        assert!(single.links.is_empty());
    }

    #[test]
    fn status_table_rows() {
        let t = line_status_table(LinkMode::BlToBl);
        assert!(t.contains(&(LineKind::Wlb, 1, LineStatus::AllFloat)));
        assert!(t.contains(&(LineKind::Wlb, 2, LineStatus::FloatExceptOutputGrounded)));
        let t = line_status_table(LinkMode::BlToWlt);
        assert!(t.contains(&(LineKind::Wlt, 2, LineStatus::AllActive)));
        assert!(t.contains(&(LineKind::Wlb, 2, LineStatus::AllFloat)));
        assert!(t.contains(&(LineKind::Bl, 2, LineStatus::FloatExceptOutputGrounded)));
    }

    #[test]
    fn linked_usage_conforms() {
        for mode in [LinkMode::BlToBl, LinkMode::BlToWlt] {
            let plan = pair((4, 6), (4, 6), mode);
            let inputs = vec![WltDrive::Driven(1.0), WltDrive::Float, WltDrive::Driven(1.0), WltDrive::Float, WltDrive::Float, WltDrive::Float];
            let u = linked_usage(&plan, &plan.links[0], &inputs, 1, 0.7);
            check_line_status(mode, &u).unwrap();
        }
    }

    #[test]
    fn schedule_step_counts() {
        let g1 = crate::interconnect::SubarrayGeometry { n_row: 4, n_column: 8, w_cell: 36.0, l_cell: 144.0, r_driver: 0.0 };
        let g2 = crate::interconnect::SubarrayGeometry { n_row: 5, n_column: 8, w_cell: 36.0, l_cell: 144.0, r_driver: 0.0 };
        let w1 = vec![vec![true; 8]; 4];
        let w2 = vec![vec![true; 4]];
        let s = schedule_multilayer_nn(&w1, &w2, 5, &g1, &g2).unwrap();
        assert_eq!((s.hidden_steps(), s.output_steps()), (5, 1));
        let s = schedule_multilayer_nn(&w1, &w2, 1, &g1, &g2).unwrap();
        assert_eq!((s.hidden_steps(), s.output_steps()), (1, 1));
        let s = schedule_multilayer_nn(&w1, &w2, 12, &g1, &g2).unwrap();
        assert_eq!((s.hidden_steps(), s.output_steps()), (12, 3));
        assert!(schedule_multilayer_nn(&w1, &w2, 0, &g1, &g2).is_err());
        let big = vec![vec![true; 9]; 4];
        assert!(schedule_multilayer_nn(&big, &w2, 3, &g1, &g2).is_err());
    }

    #[test]
    fn analytic_and_oracle_linked_agree() {
        for mode in [LinkMode::BlToBl, LinkMode::BlToWlt] {
            let mut plan = pair((3, 4), (4, 4), mode);
            let w = [true, false, true, true, false, false, false, true, true, true, true, false];
            plan.subarrays[0] = SubarrayState::with_weights(3, 4, &w).unwrap();
            let inputs = vec![WltDrive::Driven(1.0), WltDrive::Float, WltDrive::Driven(1.0), WltDrive::Driven(1.0)];
            let mut p2 = plan.clone();
            let a = execute_linked(&mut plan, 0, &inputs, 2, 0.8, 80e-9, ExecMode::Analytic).unwrap();
            let o = execute_linked(&mut p2, 0, &inputs, 2, 0.8, 80e-9, ExecMode::Oracle).unwrap();
            assert_eq!(a.bits, o.bits);
            for (x, y) in a.currents.iter().zip(&o.currents) {
                assert!((x - y).abs() <= 0.02 * y.abs().max(1e-6), "{x} vs {y}");
            }
            assert_eq!(plan.subarrays[1], p2.subarrays[1]);
        }
    }
}
