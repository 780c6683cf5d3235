//! Recursive Thevenin reduction of the corner-case ladder.
//!
//! In the corner case a single WLT is driven and the output sits in the
//! last column, so every row is one rung of a ladder: the rung resistance
//! is the input cell, n_column bit-line segments and the output cell, and
//! consecutive rungs are separated by one WLT and one WLB segment. The
//! driver and the ground switch add R_D each at the foot of the ladder.

use serde::{Deserialize, Serialize};

use crate::design::Design;
use crate::error::XbarError;
use crate::network::NetworkError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheveninEquivalent {
    /// Thevenin resistance seen from the last-row port [Ω]
    pub r_th: f64,
    /// Open-circuit port voltage [V]
    pub v_th: f64,
    /// v_th / V_DD
    pub alpha_th: f64,
}

/// Resistance of two resistors in parallel, exact for zero and infinity.
pub fn parallel(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else if a.is_infinite() {
        b
    } else if b.is_infinite() {
        a
    } else {
        a * b / (a + b)
    }
}

/// The corner-case ladder of one subarray.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub n_row: usize,
    pub n_column: usize,
    /// Bit-line segment conductance [S]
    pub g_x: f64,
    /// Word-line segment conductance [S]
    pub g_y: f64,
    /// Driver resistance [Ω]
    pub r_driver: f64,
    /// Input cell conductance of every rung [S]
    pub g_input: f64,
    /// Output cell conductance per row [S]
    pub g_out: Vec<f64>,
}

impl Ladder {
    /// Window-analysis ladder: every input and output cell crystalline.
    pub fn corner(design: &Design) -> Result<Self, XbarError> {
        let seg = design.parasitics()?;
        let g = &design.geometry;
        Ok(Self {
            n_row: g.n_row,
            n_column: g.n_column,
            g_x: seg.g_x,
            g_y: seg.g_y,
            r_driver: g.r_driver,
            g_input: design.cell.g_crystalline,
            g_out: vec![design.cell.g_crystalline; g.n_row],
        })
    }

    /// Series resistance of the bit line across the full row [Ω].
    pub fn bitline_resistance(&self) -> f64 {
        self.n_column as f64 / self.g_x
    }

    /// Resistance of one word-line segment pair (WLT + WLB) [Ω].
    fn pair_segment(&self) -> f64 {
        2.0 / self.g_y
    }

    /// Rung resistance of row `i`: input cell, bit line and output cell [Ω].
    pub fn row_resistance(&self, i: usize) -> Result<f64, NetworkError> {
        if i >= self.n_row {
            return Err(NetworkError::Dimension(format!(
                "row {i} out of range for {} rows",
                self.n_row
            )));
        }
        Ok(self.bitline_resistance() + 1.0 / self.g_input + 1.0 / self.g_out[i])
    }

    fn rung(&self, i: usize) -> f64 {
        self.bitline_resistance() + 1.0 / self.g_input + 1.0 / self.g_out[i]
    }

    /// R_th by the forward recursion R_i = R_row ∥ (R_{i−1} + 2/g_y),
    /// R_0 = 2 R_D.
    pub fn thevenin_resistance(&self) -> f64 {
        let mut r = 2.0 * self.r_driver;
        for i in 1..self.n_row {
            r = parallel(self.rung(i - 1), r + self.pair_segment());
        }
        self.pair_segment() + self.bitline_resistance() + r
    }

    /// (V_th, α_th) by the backward pass over R'_j followed by the forward
    /// voltage ladder.
    pub fn thevenin_voltage(&self, v_dd: f64) -> (f64, f64) {
        let n = self.n_row;
        if n == 1 {
            return (v_dd, 1.0);
        }
        // rp[j] for j = 1..n-1: resistance below tap pair j-1 looking away
        // from the driver, with the last rung removed (open port)
        let mut rp = vec![0.0; n];
        rp[n - 1] = self.rung(n - 2);
        for j in (2..n).rev() {
            rp[j - 1] = parallel(self.rung(j - 2), rp[j] + self.pair_segment());
        }
        let mut v = rp[1] / (rp[1] + self.pair_segment() + 2.0 * self.r_driver) * v_dd;
        for j in 2..n {
            v *= rp[j] / (self.pair_segment() + rp[j]);
        }
        if !v.is_finite() {
            // ideal wires with zero driver resistance: no drop anywhere
            v = v_dd;
        }
        (v, if v_dd == 0.0 { 1.0 } else { v / v_dd })
    }

    pub fn thevenin(&self, v_dd: f64) -> TheveninEquivalent {
        let (v_th, alpha_th) = self.thevenin_voltage(v_dd);
        TheveninEquivalent { r_th: self.thevenin_resistance(), v_th, alpha_th }
    }

    /// Per-row Thevenin pairs (α_r, R_r) seen at each row's word-line taps
    /// with that row's rung removed and every other rung in place. R_r
    /// excludes the row's own bit line; for the last row
    /// R_r + n_column/g_x equals R_th.
    pub fn row_pairs(&self) -> Vec<(f64, f64)> {
        let n = self.n_row;
        let seg = self.pair_segment();
        // load of everything beyond row p, seen at row p's taps
        let mut below = vec![f64::INFINITY; n];
        for p in (0..n.saturating_sub(1)).rev() {
            below[p] = seg + parallel(self.rung(p + 1), below[p + 1]);
        }
        let mut out = Vec::with_capacity(n);
        // upstream source at the current tap pair
        let (mut a_u, mut r_u) = (1.0, 2.0 * self.r_driver + seg);
        for p in 0..n {
            let (a, r) = if below[p].is_infinite() {
                (a_u, r_u)
            } else if r_u == 0.0 {
                (a_u, 0.0)
            } else {
                (a_u * below[p] / (below[p] + r_u), parallel(r_u, below[p]))
            };
            out.push((a, r));
            // absorb rung p, then step to the next tap pair
            let rung = self.rung(p);
            a_u = if r_u == 0.0 { a_u } else { a_u * rung / (rung + r_u) };
            r_u = parallel(r_u, rung) + seg;
        }
        out
    }
}

/// Closed-form cumulative word-line drop n(n+1)·I_row/(2·g_y) when every
/// row draws I_row [V].
pub fn voltage_drop_estimate(n_row: usize, i_row: f64, g_y: f64) -> f64 {
    let n = n_row as f64;
    n * (n + 1.0) * i_row / (2.0 * g_y)
}

/// Corner-case Thevenin equivalent of a design.
pub fn thevenin(design: &Design, v_dd: f64) -> Result<TheveninEquivalent, XbarError> {
    Ok(Ladder::corner(design)?.thevenin(v_dd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ladder(n_row: usize, n_column: usize, g: f64, rd: f64) -> Ladder {
        Ladder {
            n_row,
            n_column,
            g_x: g,
            g_y: g,
            r_driver: rd,
            g_input: 160e-6,
            g_out: vec![160e-6; n_row],
        }
    }

    #[test]
    fn row_resistance_examples() {
        let l = ladder(2, 1, f64::INFINITY, 0.0);
        assert_relative_eq!(l.row_resistance(0).unwrap(), 12_500.0, max_relative = 1e-12);
        let l = ladder(2, 128, 1.0 / 2.4, 0.0);
        assert_relative_eq!(l.row_resistance(1).unwrap(), 12_807.2, max_relative = 1e-9);
        let mut l = ladder(1, 1, f64::INFINITY, 0.0);
        l.g_out[0] = 660e-9;
        assert!((l.row_resistance(0).unwrap() - 1.0 / 660e-9).abs() / 1.515e6 < 0.01);
        assert!(l.row_resistance(1).is_err());
    }

    #[test]
    fn single_row() {
        let l = ladder(1, 7, 0.5, 3.0);
        assert_relative_eq!(l.thevenin_resistance(), 2.0 / 0.5 + 7.0 / 0.5 + 6.0);
        assert_eq!(l.thevenin_voltage(0.7), (0.7, 1.0));
    }

    #[test]
    fn ideal_wires_have_no_drop() {
        let l = ladder(16, 16, f64::INFINITY, 0.0);
        let t = l.thevenin(1.0);
        assert_eq!(t.alpha_th, 1.0);
        assert_eq!(t.r_th, 0.0);
    }

    #[test]
    fn alpha_independent_of_vdd() {
        let l = ladder(32, 8, 0.4, 1.0);
        assert_relative_eq!(l.thevenin_voltage(0.3).1, l.thevenin_voltage(1.1).1, max_relative = 1e-14);
    }

    #[test]
    fn row_pairs_match_last_row() {
        for &(n, rd) in &[(1, 0.0), (2, 0.0), (5, 2.0), (40, 0.5)] {
            let l = ladder(n, 12, 0.3, rd);
            let t = l.thevenin(1.0);
            let (a, r) = *l.row_pairs().last().unwrap();
            assert_relative_eq!(a, t.alpha_th, max_relative = 1e-13);
            assert_relative_eq!(r + l.bitline_resistance(), t.r_th, max_relative = 1e-13);
        }
    }

    #[test]
    fn row_pairs_degrade_with_distance() {
        let l = ladder(32, 8, 0.4, 1.0);
        let p = l.row_pairs();
        for w in p.windows(2) {
            assert!(w[1].0 < w[0].0);
        }
    }

    #[test]
    fn drop_estimate() {
        assert_relative_eq!(voltage_drop_estimate(2, 1e-3, 1.0), 3e-3);
        let v = voltage_drop_estimate(128, 50e-6, 0.4167);
        assert!((v - 0.99).abs() < 0.005, "{v}");
        let r = voltage_drop_estimate(20_000, 1.0, 1.0) / voltage_drop_estimate(10_000, 1.0, 1.0);
        assert!((r - 4.0).abs() < 1e-3);
    }
}
