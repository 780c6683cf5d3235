//! PCM storage cell and OTS selector models.
//!
//! The cell is reduced to two static conductances and a threshold-current
//! switching rule: a pulse changes the phase only if its current and its
//! duration both reach the corresponding threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative slack used when comparing a current against I_SET / I_RESET.
///
/// Window boundaries are computed in closed form and land exactly on a
/// threshold; without the slack, rounding in the last ulp would decide the
/// outcome.
pub const CURRENT_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid PCM parameters: {0}")]
    InvalidParams(&'static str),
    #[error("invalid OTS parameters: {0}")]
    InvalidOts(&'static str),
    #[error("pulse current must be non-negative, got {0} A")]
    NegativeCurrent(f64),
    #[error("pulse duration must be positive, got {0} s")]
    NonPositiveDuration(f64),
}

/// Electrical parameters of a two-state PCM cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcmCellParams {
    /// Amorphous (logic 0) conductance [S]
    pub g_amorphous: f64,
    /// Crystalline (logic 1) conductance [S]
    pub g_crystalline: f64,
    /// SET threshold current [A]
    pub i_set: f64,
    /// RESET threshold current [A]
    pub i_reset: f64,
    /// Minimum SET pulse width [s]
    pub t_set: f64,
    /// Minimum RESET pulse width [s]
    pub t_reset: f64,
}

impl Default for PcmCellParams {
    fn default() -> Self {
        Self {
            g_amorphous: 660e-9,
            g_crystalline: 160e-6,
            i_set: 50e-6,
            i_reset: 100e-6,
            t_set: 80e-9,
            t_reset: 15e-9,
        }
    }
}

impl PcmCellParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        let finite = [
            self.g_amorphous,
            self.g_crystalline,
            self.i_set,
            self.i_reset,
            self.t_set,
            self.t_reset,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(DeviceError::InvalidParams("all values must be finite"));
        }
        if !(self.g_amorphous > 0.0 && self.g_amorphous < self.g_crystalline) {
            return Err(DeviceError::InvalidParams("need 0 < g_amorphous < g_crystalline"));
        }
        if !(self.i_set > 0.0 && self.i_set < self.i_reset) {
            return Err(DeviceError::InvalidParams("need 0 < i_set < i_reset"));
        }
        if !(self.t_reset > 0.0 && self.t_set > self.t_reset) {
            return Err(DeviceError::InvalidParams("need t_set > t_reset > 0"));
        }
        Ok(())
    }

    /// `current ≥ i_set`, with the rounding slack applied.
    pub fn reaches_set(&self, current: f64) -> bool {
        current >= self.i_set * (1.0 - CURRENT_RTOL)
    }

    /// `current ≥ i_reset`, with the rounding slack applied.
    pub fn reaches_reset(&self, current: f64) -> bool {
        current >= self.i_reset * (1.0 - CURRENT_RTOL)
    }
}

/// OTS selector: a voltage-controlled two-state switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtsParams {
    /// Switching threshold on |V| across the selector [V]
    pub v_threshold: f64,
    /// ON conductance [S]
    pub g_on: f64,
    /// OFF conductance [S]
    pub g_off: f64,
}

impl Default for OtsParams {
    fn default() -> Self {
        Self { v_threshold: 0.3, g_on: 10.0, g_off: 100e-9 }
    }
}

impl OtsParams {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.v_threshold > 0.0 && self.v_threshold.is_finite()) {
            return Err(DeviceError::InvalidOts("v_threshold must be positive"));
        }
        if !(self.g_off > 0.0 && self.g_off < self.g_on && self.g_on.is_finite()) {
            return Err(DeviceError::InvalidOts("need 0 < g_off < g_on"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellState {
    /// Logic 0
    Amorphous,
    /// Logic 1
    Crystalline,
}

impl CellState {
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            CellState::Crystalline
        } else {
            CellState::Amorphous
        }
    }

    pub fn bit(self) -> bool {
        matches!(self, CellState::Crystalline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PulseEvent {
    NoEvent,
    SetEvent,
    ResetEvent,
}

pub fn cell_conductance(state: CellState, params: &PcmCellParams) -> f64 {
    match state {
        CellState::Amorphous => params.g_amorphous,
        CellState::Crystalline => params.g_crystalline,
    }
}

/// Applies one current pulse to a cell.
///
/// RESET wins over SET when both thresholds are met: a pulse strong enough to
/// melt the cell leaves it amorphous regardless of how long it lasts.
pub fn pulse_outcome(
    state: CellState,
    current: f64,
    duration: f64,
    params: &PcmCellParams,
) -> Result<(CellState, PulseEvent), DeviceError> {
    if !(current >= 0.0) {
        return Err(DeviceError::NegativeCurrent(current));
    }
    if !(duration > 0.0) {
        return Err(DeviceError::NonPositiveDuration(duration));
    }
    if params.reaches_reset(current) && duration >= params.t_reset {
        Ok((CellState::Amorphous, PulseEvent::ResetEvent))
    } else if params.reaches_set(current) && duration >= params.t_set {
        Ok((CellState::Crystalline, PulseEvent::SetEvent))
    } else {
        Ok((state, PulseEvent::NoEvent))
    }
}

/// Selector conductance; the threshold comparison is strict.
pub fn ots_conductance(v_across: f64, params: &OtsParams) -> f64 {
    if v_across.abs() > params.v_threshold {
        params.g_on
    } else {
        params.g_off
    }
}

/// Row-major matrix of cell states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellMatrix {
    rows: usize,
    cols: usize,
    data: Vec<CellState>,
}

impl CellMatrix {
    pub fn filled(rows: usize, cols: usize, state: CellState) -> Self {
        Self { rows, cols, data: vec![state; rows * cols] }
    }

    pub fn from_bits(rows: usize, cols: usize, bits: &[bool]) -> Option<Self> {
        (bits.len() == rows * cols).then(|| Self {
            rows,
            cols,
            data: bits.iter().map(|&b| CellState::from_bit(b)).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> CellState {
        assert!(r < self.rows && c < self.cols, "cell ({r},{c}) out of range");
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, state: CellState) {
        assert!(r < self.rows && c < self.cols, "cell ({r},{c}) out of range");
        self.data[r * self.cols + c] = state;
    }

    pub fn bit(&self, r: usize, c: usize) -> bool {
        self.get(r, c).bit()
    }
}
