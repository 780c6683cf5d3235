//! Thresholded matrix-vector multiplication on one subarray.
//!
//! Layout: the weight matrix lives in the top cells (row r holds the weights
//! of output r), inputs drive the WLTs, and the outputs are written into one
//! bottom-level column whose WLB is grounded. Each active row therefore
//! computes one thresholded dot product per step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::Design;
use crate::device::{cell_conductance, pulse_outcome, CellMatrix, CellState, PcmCellParams, PulseEvent};
pub use crate::drive::{BlDrive, DrivePattern, WlbDrive, WltDrive};
use crate::error::XbarError;
use crate::interconnect::SubarrayGeometry;
use crate::margin::{noise_margin_for, VoltageWindow};
use crate::network::{solve_crossbar, state_conductances, OracleOptions};
use crate::thevenin::Ladder;

/// Highest driver voltage the periphery can apply [V].
pub const MAX_DRIVER_VOLTAGE: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComputeError {
    #[error("state is {0}x{1} but the design is {2}x{3}")]
    StateMismatch(usize, usize, usize, usize),
    #[error("drive must ground exactly one WLB, found {0}")]
    OutputColumns(usize),
    #[error("bit line {0} cannot be grounded in a single-subarray step")]
    GroundedBitLine(usize),
    #[error("no driven word lines")]
    NoDrivenLines,
    #[error("row {0} out of range")]
    RowOutOfRange(usize),
    #[error("at least one driven input required")]
    NoInputs,
    #[error("multi-bit width must be at least 1")]
    ZeroBits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecMode {
    /// Thresholded current law with per-row Thevenin derating
    Analytic,
    /// Full network solve
    Oracle,
}

/// Weights (top level) and outputs (bottom level) of one subarray.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubarrayState {
    pub top: CellMatrix,
    pub bottom: CellMatrix,
}

impl SubarrayState {
    pub fn new(n_row: usize, n_column: usize) -> Self {
        Self {
            top: CellMatrix::filled(n_row, n_column, CellState::Amorphous),
            bottom: CellMatrix::filled(n_row, n_column, CellState::Amorphous),
        }
    }

    /// Top cells from a row-major bit matrix.
    pub fn with_weights(n_row: usize, n_column: usize, weights: &[bool]) -> Option<Self> {
        Some(Self {
            top: CellMatrix::from_bits(n_row, n_column, weights)?,
            bottom: CellMatrix::filled(n_row, n_column, CellState::Amorphous),
        })
    }

    fn check(&self, g: &SubarrayGeometry) -> Result<(), ComputeError> {
        for m in [&self.top, &self.bottom] {
            if m.rows() != g.n_row || m.cols() != g.n_column {
                return Err(ComputeError::StateMismatch(m.rows(), m.cols(), g.n_row, g.n_column));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    Top,
    Bottom,
}

/// A cell whose state a step would corrupt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturb {
    pub level: Level,
    pub row: usize,
    pub col: usize,
    /// [A]
    pub current: f64,
    pub event: PulseEvent,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisturbReport {
    pub entries: Vec<Disturb>,
}

impl DisturbReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn reset_events(&self) -> usize {
        self.entries.iter().filter(|d| d.event == PulseEvent::ResetEvent).count()
    }
}

/// Electrical record of one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    /// [V]
    pub v_dd: f64,
    /// [s]
    pub duration: f64,
    /// Output-cell current per row, 0 for inactive rows [A]
    pub row_currents: Vec<f64>,
    /// (source voltage [V], delivered current [A]) per driven source
    pub sources: Vec<(f64, f64)>,
}

/// Energy drawn from the sources over the pulse: Σ V·I·t [J].
pub fn estimate_energy(trace: &ExecutionTrace) -> f64 {
    trace.sources.iter().map(|(v, i)| v * i).sum::<f64>() * trace.duration
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmvmOutcome {
    /// Output bit per row; None where the bit line was floated
    pub bits: Vec<Option<bool>>,
    pub output_column: usize,
    pub disturb: DisturbReport,
    pub trace: ExecutionTrace,
    /// Set when V_DD lies outside the execution window
    pub window_warning: Option<String>,
    /// Cells whose selector state changed between oracle passes
    pub ots_divergence: usize,
}

/// Derated source path feeding one row: the driver voltage is scaled by
/// `alpha` and seen through `r_series`, to which the input cells and the
/// output cell are added.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowPath {
    pub alpha: f64,
    /// [Ω]
    pub r_series: f64,
}

impl RowPath {
    pub const IDEAL: RowPath = RowPath { alpha: 1.0, r_series: 0.0 };

    /// Output current for inputs with conductance sum `s` and
    /// conductance-weighted mean drive `v_eq`, output held at `g_out` [A].
    pub fn current(&self, s: f64, v_eq: f64, g_out: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        self.alpha * v_eq / (self.r_series + 1.0 / s + 1.0 / g_out)
    }

    /// Two paths in cascade (e.g. across a subarray link).
    pub fn then(self, next: RowPath) -> RowPath {
        RowPath { alpha: self.alpha * next.alpha, r_series: self.r_series + next.r_series }
    }
}

/// Per-row derating of a design: the corner-case Thevenin pair of each row
/// plus the full bit-line resistance.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel {
    pub cell: PcmCellParams,
    /// (α_r, R_r) per row
    pub pairs: Vec<(f64, f64)>,
    /// n_column / g_x [Ω]
    pub r_bitline: f64,
}

impl AnalyticModel {
    pub fn new(design: &Design) -> Result<Self, XbarError> {
        let ladder = Ladder::corner(design)?;
        Ok(Self { cell: design.cell, pairs: ladder.row_pairs(), r_bitline: ladder.bitline_resistance() })
    }

    /// Parasitic-free model with `n_row` rows.
    pub fn ideal(cell: PcmCellParams, n_row: usize) -> Self {
        Self { cell, pairs: vec![(1.0, 0.0); n_row], r_bitline: 0.0 }
    }

    pub fn path(&self, row: usize) -> RowPath {
        let (alpha, r) = self.pairs[row];
        RowPath { alpha, r_series: r + self.r_bitline }
    }

    pub fn paths(&self) -> Vec<RowPath> {
        (0..self.pairs.len()).map(|r| self.path(r)).collect()
    }

    /// Output current of row `row`; see [`RowPath::current`].
    pub fn row_current(&self, row: usize, s: f64, v_eq: f64, g_out: f64) -> f64 {
        self.path(row).current(s, v_eq, g_out)
    }

    /// Output current with `k` crystalline and `n − k` amorphous inputs, all
    /// driven at `v_dd`, output at G_C [A].
    pub fn count_current(&self, row: usize, k: usize, n: usize, v_dd: f64) -> f64 {
        count_current(&self.path(row), &self.cell, k, n, v_dd)
    }

    /// Smallest active-input count that SETs the output; n + 1 if none does.
    pub fn threshold(&self, row: usize, n_driven: usize, v_dd: f64) -> usize {
        path_threshold(&self.path(row), &self.cell, n_driven, v_dd)
    }
}

fn input_sum(p: &PcmCellParams, k: usize, n: usize) -> f64 {
    k as f64 * p.g_crystalline + (n - k) as f64 * p.g_amorphous
}

/// Output current of `path` with `k` of `n` driven inputs crystalline [A].
pub fn count_current(path: &RowPath, p: &PcmCellParams, k: usize, n: usize, v_dd: f64) -> f64 {
    path.current(input_sum(p, k, n), v_dd, p.g_crystalline)
}

/// Smallest active-input count that SETs the output of `path`; n + 1 if
/// none does.
pub fn path_threshold(path: &RowPath, p: &PcmCellParams, n_driven: usize, v_dd: f64) -> usize {
    (0..=n_driven)
        .find(|&k| p.reaches_set(count_current(path, p, k, n_driven, v_dd)))
        .unwrap_or(n_driven + 1)
}

/// Supply range over which every path realizes threshold exactly `k` for
/// every fan-in in `fan_in` without reaching I_RESET. The upper bound is
/// exclusive; the result is empty when no such supply exists.
pub fn threshold_window(paths: &[RowPath], k: usize, fan_in: &[usize], p: &PcmCellParams) -> VoltageWindow {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let v_at = |path: &RowPath, s: f64, i: f64| i * (path.r_series + 1.0 / s + 1.0 / p.g_crystalline) / path.alpha;
    for path in paths {
        for &n in fan_in {
            if k > n {
                return VoltageWindow::new(1.0, 0.0);
            }
            lo = lo.max(v_at(path, input_sum(p, k, n), p.i_set));
            if k > 0 {
                hi = hi.min(v_at(path, input_sum(p, k - 1, n), p.i_set));
            }
            hi = hi.min(v_at(path, input_sum(p, n, n), p.i_reset));
        }
    }
    VoltageWindow::new(lo, hi)
}

/// Output current of row `row` by the parasitic-free current law:
/// I_T = G_O·Σ V_i G_i / (Σ G_i + G_O), sums over driven lines only.
pub fn ideal_dot_current(
    row: usize,
    state: &SubarrayState,
    drive: &DrivePattern,
    g_out: f64,
    p: &PcmCellParams,
) -> Result<f64, ComputeError> {
    if row >= state.top.rows() {
        return Err(ComputeError::RowOutOfRange(row));
    }
    let (mut s, mut sv) = (0.0, 0.0);
    let mut any = false;
    for (c, scale) in drive.driven_columns() {
        let g = cell_conductance(state.top.get(row, c), p);
        s += g;
        sv += g * scale * drive.v_dd;
        any = true;
    }
    if !any {
        return Err(ComputeError::NoDrivenLines);
    }
    Ok(g_out * sv / (s + g_out))
}

/// Smallest number of active inputs (of `n_driven`, the rest amorphous) that
/// SETs the output of `row` at `v_dd`, under the design's analytic model.
pub fn effective_threshold(
    v_dd: f64,
    n_driven: usize,
    design: &Design,
    row: usize,
) -> Result<usize, XbarError> {
    if n_driven == 0 {
        return Err(ComputeError::NoInputs.into());
    }
    if row >= design.geometry.n_row {
        return Err(ComputeError::RowOutOfRange(row).into());
    }
    Ok(AnalyticModel::new(design)?.threshold(row, n_driven, v_dd))
}

/// Threshold of the parasitic-free current law.
pub fn ideal_threshold(v_dd: f64, n_driven: usize, p: &PcmCellParams) -> usize {
    AnalyticModel::ideal(*p, 1).threshold(0, n_driven, v_dd)
}

/// Pure thresholded binary MVM: bit = [Σ v_i·w_i ≥ k].
pub fn reference_bit(weights: &[bool], inputs: &[bool], k: usize) -> bool {
    weights.iter().zip(inputs).filter(|(w, x)| **w && **x).count() >= k
}

/// Execution window for `n_driven` binary inputs.
pub fn execution_window(design: &Design, n_driven: usize) -> Result<VoltageWindow, XbarError> {
    Ok(noise_margin_for(design, n_driven.max(1))?.combined)
}

fn check_drive(design: &Design, state: &SubarrayState, drive: &DrivePattern) -> Result<usize, XbarError> {
    let g = &design.geometry;
    state.check(g)?;
    drive.check_dims(g.n_row, g.n_column)?;
    let out = drive.grounded_columns();
    if out.len() != 1 {
        return Err(ComputeError::OutputColumns(out.len()).into());
    }
    if let Some(r) = drive.bl.iter().position(|b| *b == BlDrive::Ground) {
        return Err(ComputeError::GroundedBitLine(r).into());
    }
    Ok(out[0])
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn judge_cell(
    level: Level,
    row: usize,
    col: usize,
    state: CellState,
    current: f64,
    duration: f64,
    p: &PcmCellParams,
    report: &mut DisturbReport,
) -> Result<(), XbarError> {
    let (next, event) = pulse_outcome(state, current.abs(), duration, p)?;
    if next != state || event == PulseEvent::ResetEvent {
        report.entries.push(Disturb { level, row, col, current: current.abs(), event });
    }
    Ok(())
}

/// Runs one TMVM step. Output cells of active rows in the target column are
/// preset amorphous, then SET where the delivered current reaches I_SET for
/// the pulse duration. Other cells are never modified; any cell the pulse
/// would corrupt is listed in the disturb report.
pub fn tmvm_execute(
    design: &Design,
    state: &mut SubarrayState,
    drive: &DrivePattern,
    mode: ExecMode,
) -> Result<TmvmOutcome, XbarError> {
    tmvm_execute_with(design, state, drive, mode, &OracleOptions::default())
}

pub fn tmvm_execute_with(
    design: &Design,
    state: &mut SubarrayState,
    drive: &DrivePattern,
    mode: ExecMode,
    oracle: &OracleOptions,
) -> Result<TmvmOutcome, XbarError> {
    let out_col = check_drive(design, state, drive)?;
    let (nr, nc) = (design.geometry.n_row, design.geometry.n_column);
    let p = design.cell;
    let dur = drive.duration;
    let n_driven = drive.driven_count();

    let window_warning = if n_driven > 0 {
        let w = execution_window(design, n_driven)?;
        let v_max = drive.driven_columns().map(|(_, s)| s).fold(0.0, f64::max) * drive.v_dd;
        (!w.contains(v_max)).then(|| {
            format!(
                "V_DD {:.4} V outside the execution window [{:.4}, {:.4}] V for {} driven input(s)",
                v_max, w.v_lo, w.v_hi, n_driven
            )
        })
    } else {
        None
    };

    let active: Vec<bool> = drive.bl.iter().map(|b| *b == BlDrive::Active).collect();
    for r in 0..nr {
        if active[r] {
            state.bottom.set(r, out_col, CellState::Amorphous);
        }
    }

    let mut disturb = DisturbReport::default();
    let mut trace = ExecutionTrace {
        v_dd: drive.v_dd,
        duration: dur,
        row_currents: vec![0.0; nr],
        sources: Vec::new(),
    };
    let mut ots_divergence = 0;

    match mode {
        ExecMode::Analytic => {
            let model = AnalyticModel::new(design)?;
            let mut per_source = vec![0.0; nc];
            for r in (0..nr).filter(|&r| active[r]) {
                let (mut s, mut sv) = (0.0, 0.0);
                for (c, scale) in drive.driven_columns() {
                    let g = cell_conductance(state.top.get(r, c), &p);
                    s += g;
                    sv += g * scale * drive.v_dd;
                }
                if s == 0.0 {
                    continue;
                }
                let v_eq = sv / s;
                let i_out = model.row_current(r, s, v_eq, p.g_crystalline);
                trace.row_currents[r] = i_out;
                // inputs share the derated source; their common node sits
                // I_out/S below it
                let a = model.pairs[r].0;
                let v_node = a * v_eq - i_out / s;
                for (c, scale) in drive.driven_columns() {
                    let g = cell_conductance(state.top.get(r, c), &p);
                    let i = g * (a * scale * drive.v_dd - v_node);
                    per_source[c] += i;
                    judge_cell(Level::Top, r, c, state.top.get(r, c), i, dur, &p, &mut disturb)?;
                }
            }
            for (c, scale) in drive.driven_columns() {
                trace.sources.push((scale * drive.v_dd, per_source[c]));
            }
        }
        ExecMode::Oracle => {
            if n_driven > 0 {
                let top_g = state_conductances(design, &state.top, None);
                let bottom_g =
                    state_conductances(design, &state.bottom, Some((out_col, p.g_crystalline)));
                let sol = solve_crossbar(design, &top_g, &bottom_g, drive, oracle)?;
                ots_divergence = sol.ots_divergence.len();
                for r in 0..nr {
                    if active[r] {
                        trace.row_currents[r] = sol.bottom_current(r, out_col);
                    }
                    for c in 0..nc {
                        if sol.network.handle.top_cell[r * nc + c].is_some() {
                            let i = sol.top_current(r, c);
                            judge_cell(Level::Top, r, c, state.top.get(r, c), i, dur, &p, &mut disturb)?;
                        }
                        if c != out_col && sol.network.handle.bottom_cell[r * nc + c].is_some() {
                            let i = sol.bottom_current(r, c);
                            judge_cell(Level::Bottom, r, c, state.bottom.get(r, c), i, dur, &p, &mut disturb)?;
                        }
                    }
                }
                for &(node, i) in &sol.result.source_currents {
                    let v = sol.result.voltage(node);
                    if v != 0.0 {
                        trace.sources.push((v, i));
                    }
                }
            }
        }
    }

    let mut bits = vec![None; nr];
    for r in 0..nr {
        if !active[r] {
            continue;
        }
        let i = trace.row_currents[r];
        let (next, event) = pulse_outcome(CellState::Amorphous, i.abs(), dur, &p)?;
        if event == PulseEvent::ResetEvent {
            disturb.entries.push(Disturb { level: Level::Bottom, row: r, col: out_col, current: i, event });
        }
        state.bottom.set(r, out_col, next);
        bits[r] = Some(next.bit());
    }

    Ok(TmvmOutcome { bits, output_column: out_col, disturb, trace, window_warning, ots_divergence })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MultiBitScheme {
    /// b cells per element, bit k driven at 2^k·V
    AreaEfficient,
    /// 2^b − 1 cells per element at one voltage, bit k replicated 2^k times
    LowPower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiBitLayout {
    pub scheme: MultiBitScheme,
    pub bits: u32,
    pub cells_per_element: usize,
    /// Bit index stored in each cell of an element
    pub cell_bit: Vec<u32>,
    /// Drive multiplier of each cell's WLT (× base voltage)
    pub voltage_levels: Vec<f64>,
}

impl MultiBitLayout {
    /// Highest WLT voltage for a base drive of `base` volts [V].
    pub fn max_voltage(&self, base: f64) -> f64 {
        self.voltage_levels.iter().fold(0.0f64, |a, &b| a.max(b)) * base
    }

    pub fn feasible(&self, base: f64) -> bool {
        self.max_voltage(base) <= MAX_DRIVER_VOLTAGE
    }
}

pub fn multibit_layout(bits: u32, scheme: MultiBitScheme) -> Result<MultiBitLayout, ComputeError> {
    if bits == 0 {
        return Err(ComputeError::ZeroBits);
    }
    let (cell_bit, voltage_levels): (Vec<u32>, Vec<f64>) = match scheme {
        MultiBitScheme::AreaEfficient => (0..bits).map(|k| (k, (1u64 << k) as f64)).unzip(),
        MultiBitScheme::LowPower => (0..bits)
            .flat_map(|k| std::iter::repeat_n((k, 1.0), 1usize << k))
            .unzip(),
    };
    Ok(MultiBitLayout { scheme, bits, cells_per_element: cell_bit.len(), cell_bit, voltage_levels })
}

/// Footprint of one multi-bit element [nm²].
pub fn estimate_area(geom: &SubarrayGeometry, layout: &MultiBitLayout) -> f64 {
    layout.cells_per_element as f64 * geom.w_cell * geom.l_cell
}

/// Energy of one element with every bit set and its input active, driving a
/// crystalline output at `base` volts, without parasitics [J].
pub fn multibit_energy(layout: &MultiBitLayout, base: f64, p: &PcmCellParams, duration: f64) -> f64 {
    let g = p.g_crystalline;
    let s = layout.cells_per_element as f64 * g;
    let v_eq = layout.voltage_levels.iter().map(|m| m * base * g).sum::<f64>() / s;
    let i_out = g * v_eq * s / (s + g);
    let v_node = v_eq - i_out / s;
    let power: f64 = layout
        .voltage_levels
        .iter()
        .map(|m| {
            let v = m * base;
            v * g * (v - v_node)
        })
        .sum();
    power * duration
}
