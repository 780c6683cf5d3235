//! Supply-voltage windows, noise margin and design sweeps.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::device::PcmCellParams;
use crate::error::XbarError;
use crate::thevenin::{Ladder, TheveninEquivalent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageWindow {
    /// Lower bound [V]
    pub v_lo: f64,
    /// Upper bound [V]
    pub v_hi: f64,
    pub empty: bool,
}

impl VoltageWindow {
    pub fn new(v_lo: f64, v_hi: f64) -> Self {
        Self { v_lo, v_hi, empty: !(v_lo <= v_hi) }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.v_lo + self.v_hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        !self.empty && v >= self.v_lo && v <= self.v_hi
    }

    pub fn intersect(&self, other: &VoltageWindow) -> VoltageWindow {
        VoltageWindow::new(self.v_lo.max(other.v_lo), self.v_hi.min(other.v_hi))
    }

    /// (v_hi − v_lo) / v_mid; negative when the window is empty.
    pub fn relative_width(&self) -> f64 {
        (self.v_hi - self.v_lo) / self.mid()
    }
}

/// The two ranges behind the ideal window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdealWindowParts {
    /// Range keeping the all-active output between I_SET and I_RESET [V]
    pub r1: (f64, f64),
    /// Upper bound keeping the output below I_SET when every driven input
    /// is amorphous [V]
    pub r2_hi: f64,
    pub window: VoltageWindow,
}

/// Window for n_x + 1 driven inputs without parasitics.
pub fn ideal_window_parts(n_x: usize, p: &PcmCellParams) -> IdealWindowParts {
    let n1 = n_x as f64 + 1.0;
    let f = (n1 + 1.0) / n1;
    let r1 = (f * p.i_set / p.g_crystalline, f * p.i_reset / p.g_crystalline);
    let r2_hi = (n1 * p.g_amorphous + p.g_crystalline) / (n1 * p.g_amorphous * p.g_crystalline)
        * p.i_set;
    IdealWindowParts { r1, r2_hi, window: VoltageWindow::new(r1.0, r1.1.min(r2_hi)) }
}

pub fn ideal_window(n_x: usize, p: &PcmCellParams) -> VoltageWindow {
    ideal_window_parts(n_x, p).window
}

/// Window for the last row of the corner case, seen through its Thevenin
/// equivalent with input and output cells crystalline.
pub fn last_row_window(th: &TheveninEquivalent, p: &PcmCellParams) -> VoltageWindow {
    if !(th.alpha_th > 0.0) {
        return VoltageWindow { v_lo: f64::INFINITY, v_hi: 0.0, empty: true };
    }
    let a = th.alpha_th;
    let series = th.r_th + 2.0 / p.g_crystalline;
    let lo = p.i_set * series / a;
    let reset = p.i_reset * series / a;
    let false_set = p.i_set * (th.r_th + 1.0 / p.g_amorphous + 1.0 / p.g_crystalline) / a;
    VoltageWindow::new(lo, reset.min(false_set))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Acceptable,
    Unacceptable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMarginReport {
    pub window_first_row: VoltageWindow,
    pub window_last_row: VoltageWindow,
    pub combined: VoltageWindow,
    /// (v_hi − v_lo)/v_mid of the combined window; negative if infeasible
    pub nm: f64,
    /// [V]
    pub v_mid: f64,
    pub alpha_th: f64,
    /// [Ω]
    pub r_th: f64,
    /// Driven inputs assumed for the first-row window
    pub driven_inputs: usize,
}

impl NoiseMarginReport {
    pub fn feasible(&self) -> bool {
        self.nm >= 0.0
    }

    pub fn region(&self) -> Region {
        if self.feasible() {
            Region::Acceptable
        } else {
            Region::Unacceptable
        }
    }
}

fn combine(
    first: VoltageWindow,
    last: VoltageWindow,
    th: &TheveninEquivalent,
    driven_inputs: usize,
) -> NoiseMarginReport {
    let v_lo = first.v_lo.max(last.v_lo);
    let v_hi = first.v_hi.min(last.v_hi);
    let combined = VoltageWindow::new(v_lo, v_hi);
    let v_mid = combined.mid();
    let nm = if v_lo.is_finite() { combined.relative_width() } else { -2.0 };
    NoiseMarginReport {
        window_first_row: first,
        window_last_row: last,
        combined,
        nm,
        v_mid,
        alpha_th: th.alpha_th,
        r_th: th.r_th,
        driven_inputs,
    }
}

/// Noise margin of the worst-case single-input drive.
pub fn noise_margin(design: &Design) -> Result<NoiseMarginReport, XbarError> {
    noise_margin_for(design, 1)
}

/// Noise margin with `driven_inputs` WLTs driven in the first row.
pub fn noise_margin_for(design: &Design, driven_inputs: usize) -> Result<NoiseMarginReport, XbarError> {
    let th = Ladder::corner(design)?.thevenin(1.0);
    Ok(noise_margin_from(&th, &design.cell, driven_inputs))
}

/// Noise margin from a precomputed Thevenin equivalent.
pub fn noise_margin_from(
    th: &TheveninEquivalent,
    p: &PcmCellParams,
    driven_inputs: usize,
) -> NoiseMarginReport {
    let first = ideal_window(driven_inputs.max(1) - 1, p);
    combine(first, last_row_window(th, p), th, driven_inputs.max(1))
}

/// Acceptable iff the window implied by (α_th, R_th) has NM ≥ 0.
pub fn classify_region(alpha_th: f64, r_th: f64, p: &PcmCellParams, n_x: usize) -> Region {
    let th = TheveninEquivalent { r_th, v_th: alpha_th, alpha_th };
    noise_margin_from(&th, p, n_x + 1).region()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    NRow,
    NColumn,
    /// Cell length as a multiple of the configuration minimum
    LCell,
    /// Cell width as a multiple of the configuration minimum
    WCell,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NRow => "n_row",
            SweepAxis::NColumn => "n_column",
            SweepAxis::LCell => "l_cell",
            SweepAxis::WCell => "w_cell",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "n_row" | "rows" => Some(SweepAxis::NRow),
            "n_column" | "cols" | "columns" => Some(SweepAxis::NColumn),
            "l_cell" | "length" => Some(SweepAxis::LCell),
            "w_cell" | "width" => Some(SweepAxis::WCell),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub config: String,
    pub axis: SweepAxis,
    pub value: f64,
    pub n_row: usize,
    pub n_column: usize,
    /// [nm]
    pub w_cell: f64,
    /// [nm]
    pub l_cell: f64,
    pub report: Option<NoiseMarginReport>,
    pub warning: Option<String>,
}

#[derive(Debug, thiserror::Error)]
#[error("sweep grid is empty")]
pub struct EmptyGrid;

/// Applies one axis value to a design.
pub fn apply_axis(base: &Design, axis: SweepAxis, value: f64) -> Result<Design, XbarError> {
    let mut d = base.clone();
    match axis {
        SweepAxis::NRow => d.geometry.n_row = value as usize,
        SweepAxis::NColumn => d.geometry.n_column = value as usize,
        SweepAxis::LCell => d.geometry.l_cell = value * d.min_pitch()?.1,
        SweepAxis::WCell => d.geometry.w_cell = value * d.min_pitch()?.0,
    }
    Ok(d)
}

/// One noise-margin report per grid value, in grid order. Infeasible
/// geometries yield a record with a warning instead of a report.
pub fn sweep(axis: SweepAxis, values: &[f64], base: &Design) -> Result<Vec<SweepRecord>, EmptyGrid> {
    if values.is_empty() {
        return Err(EmptyGrid);
    }
    Ok(values
        .par_iter()
        .map(|&value| {
            let mut rec = SweepRecord {
                config: base.lines.name.clone(),
                axis,
                value,
                n_row: base.geometry.n_row,
                n_column: base.geometry.n_column,
                w_cell: base.geometry.w_cell,
                l_cell: base.geometry.l_cell,
                report: None,
                warning: None,
            };
            let bad_count = matches!(axis, SweepAxis::NRow | SweepAxis::NColumn)
                && (value < 1.0 || value.fract() != 0.0);
            if bad_count || !value.is_finite() || value <= 0.0 {
                rec.warning = Some(format!("skipped {}={value}: not a valid value", axis.name()));
                return rec;
            }
            match apply_axis(base, axis, value).and_then(|d| {
                rec.n_row = d.geometry.n_row;
                rec.n_column = d.geometry.n_column;
                rec.w_cell = d.geometry.w_cell;
                rec.l_cell = d.geometry.l_cell;
                noise_margin(&d)
            }) {
                Ok(r) => rec.report = Some(r),
                Err(e) => rec.warning = Some(format!("skipped {}={value}: {e}", axis.name())),
            }
            rec
        })
        .collect())
}

pub const SWEEP_CSV_HEADER: [&str; 14] = [
    "config", "axis", "value", "n_row", "n_column", "w_cell_nm", "l_cell_nm", "v_min_prime",
    "v_max", "nm", "alpha_th", "r_th", "feasible", "warning",
];

/// Writes sweep records as CSV with a fixed header.
pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], w: W) -> Result<(), XbarError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SWEEP_CSV_HEADER)?;
    for r in records {
        let num = |x: Option<f64>| x.map(|v| format!("{v:.9e}")).unwrap_or_default();
        let rep = r.report.as_ref();
        out.write_record([
            r.config.clone(),
            r.axis.name().to_string(),
            format!("{}", r.value),
            r.n_row.to_string(),
            r.n_column.to_string(),
            format!("{}", r.w_cell),
            format!("{}", r.l_cell),
            num(rep.map(|x| x.combined.v_lo)),
            num(rep.map(|x| x.combined.v_hi)),
            num(rep.map(|x| x.nm)),
            num(rep.map(|x| x.alpha_th)),
            num(rep.map(|x| x.r_th)),
            rep.map(|x| x.feasible().to_string()).unwrap_or_default(),
            r.warning.clone().unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_json<W: Write>(records: &[SweepRecord], w: W) -> Result<(), XbarError> {
    serde_json::to_writer_pretty(w, records)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ideal_window_examples() {
        let p = PcmCellParams::default();
        let w = ideal_window_parts(0, &p);
        assert_relative_eq!(w.r1.0, 0.625, max_relative = 1e-12);
        assert_relative_eq!(w.r1.1, 1.25, max_relative = 1e-12);
        let w = ideal_window_parts(127, &p);
        assert!((w.window.v_lo - 0.3149).abs() < 1e-4);
        assert!((w.window.v_hi - 0.6299).abs() < 1e-4);
        assert!((w.r2_hi - 0.904).abs() < 1e-3);
        let w = ideal_window(1_000_000, &p);
        assert!((w.v_lo - 0.3125).abs() < 1e-6);
    }

    #[test]
    fn nm_substitution() {
        let w = VoltageWindow::new(0.40, 0.63);
        assert!((w.relative_width() - 0.4466).abs() < 1e-3);
        let w = VoltageWindow::new(0.5, 0.5);
        assert_eq!(w.relative_width(), 0.0);
        assert!(!w.empty);
    }

    #[test]
    fn parasitic_free_limit() {
        let p = PcmCellParams::default();
        let th = TheveninEquivalent { r_th: 0.0, v_th: 1.0, alpha_th: 1.0 };
        let w = last_row_window(&th, &p);
        let i = ideal_window(0, &p);
        assert_relative_eq!(w.v_lo, i.v_lo, max_relative = 1e-12);
        assert_relative_eq!(w.v_hi, i.v_hi, max_relative = 1e-12);
    }

    #[test]
    fn classify_examples() {
        let p = PcmCellParams::default();
        assert_eq!(classify_region(1.0, 1e-3, &p, 0), Region::Acceptable);
        assert_eq!(classify_region(0.0, 10.0, &p, 0), Region::Unacceptable);
        let mut prev = Region::Acceptable;
        for k in 0..200 {
            let r = classify_region(0.95, k as f64 * 100.0, &p, 0);
            assert!(!(prev == Region::Unacceptable && r == Region::Acceptable));
            prev = r;
        }
        assert_eq!(prev, Region::Unacceptable);
    }

    #[test]
    fn empty_grid() {
        let d = Design::with_config(1, 8, 8).unwrap();
        assert!(sweep(SweepAxis::NRow, &[], &d).is_err());
        let recs = sweep(SweepAxis::NRow, &[0.0, 4.0], &d).unwrap();
        assert!(recs[0].warning.is_some());
        assert!(recs[1].report.is_some());
        let recs = sweep(SweepAxis::LCell, &[0.5], &d).unwrap();
        assert!(recs[0].warning.is_some());
    }
}
