//! Line drive patterns for one computational step.

use serde::{Deserialize, Serialize};

use crate::network::NetworkError;

/// Top word-line drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WltDrive {
    /// Driven at `scale × v_dd` (scale 1 for a binary logic-1 input)
    Driven(f64),
    /// Logic-0 input: line left floating
    Float,
}

/// Bottom word-line drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WlbDrive {
    Ground,
    Float,
}

/// Bit-line drive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlDrive {
    /// Connected to its cells, end open
    Active,
    Float,
    /// End grounded (used by chained subarrays)
    Ground,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivePattern {
    /// One entry per column
    pub wlt: Vec<WltDrive>,
    /// One entry per column
    pub wlb: Vec<WlbDrive>,
    /// One entry per row
    pub bl: Vec<BlDrive>,
    /// Supply voltage [V]
    pub v_dd: f64,
    /// Pulse duration [s]
    pub duration: f64,
}

impl DrivePattern {
    /// Binary inputs on the WLTs, one grounded output column, all BLs active.
    pub fn binary(inputs: &[bool], output_col: usize, n_row: usize, v_dd: f64, duration: f64) -> Self {
        let n_col = inputs.len();
        Self {
            wlt: inputs
                .iter()
                .map(|&b| if b { WltDrive::Driven(1.0) } else { WltDrive::Float })
                .collect(),
            wlb: (0..n_col)
                .map(|c| if c == output_col { WlbDrive::Ground } else { WlbDrive::Float })
                .collect(),
            bl: vec![BlDrive::Active; n_row],
            v_dd,
            duration,
        }
    }

    /// Worst-case drive: only the first WLT driven, output in the last column.
    pub fn corner(n_row: usize, n_column: usize, v_dd: f64, duration: f64) -> Self {
        let mut inputs = vec![false; n_column];
        inputs[0] = true;
        Self::binary(&inputs, n_column - 1, n_row, v_dd, duration)
    }

    pub fn check_dims(&self, n_row: usize, n_column: usize) -> Result<(), NetworkError> {
        if self.wlt.len() != n_column || self.wlb.len() != n_column || self.bl.len() != n_row {
            return Err(NetworkError::Dimension(format!(
                "drive has {} WLT / {} WLB / {} BL entries for a {}x{} array",
                self.wlt.len(),
                self.wlb.len(),
                self.bl.len(),
                n_row,
                n_column
            )));
        }
        if !(self.v_dd.is_finite() && self.v_dd >= 0.0) {
            return Err(NetworkError::BadVoltage { node: 0, v: self.v_dd });
        }
        Ok(())
    }

    pub fn driven_columns(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.wlt.iter().enumerate().filter_map(|(c, d)| match d {
            WltDrive::Driven(s) => Some((c, *s)),
            WltDrive::Float => None,
        })
    }

    pub fn driven_count(&self) -> usize {
        self.driven_columns().count()
    }

    pub fn grounded_columns(&self) -> Vec<usize> {
        (0..self.wlb.len()).filter(|&c| self.wlb[c] == WlbDrive::Ground).collect()
    }
}
