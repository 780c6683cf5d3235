//! A complete subarray design point: geometry, metal allocation, wire model
//! and device parameters.

use serde::{Deserialize, Serialize};

use crate::device::{OtsParams, PcmCellParams};
use crate::error::XbarError;
use crate::interconnect::{
    line_config_conductances, min_cell_pitch, LineConfiguration, MetalStack, SegmentConductances,
    SubarrayGeometry, WireModel,
};

/// Driver output resistance used when none is given [Ω].
///
/// The driver-to-first-row connection is treated as negligible next to the
/// cell resistances; sensitivity to this value is reported by the analyses.
pub const DEFAULT_DRIVER_RESISTANCE: f64 = 0.0;

/// Default cell length as a multiple of the configuration's minimum.
pub const DEFAULT_LENGTH_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub geometry: SubarrayGeometry,
    pub lines: LineConfiguration,
    #[serde(default)]
    pub stack: MetalStack,
    #[serde(default)]
    pub wire: WireModel,
    #[serde(default)]
    pub cell: PcmCellParams,
    #[serde(default)]
    pub ots: OtsParams,
}

impl Design {
    pub fn new(geometry: SubarrayGeometry, lines: LineConfiguration) -> Self {
        Self {
            geometry,
            lines,
            stack: MetalStack::asap7(),
            wire: WireModel::default(),
            cell: PcmCellParams::default(),
            ots: OtsParams::default(),
        }
    }

    /// Built-in configuration at `w_cell = w_min`, `l_cell = 4·l_min`.
    pub fn with_config(config_id: u8, n_row: usize, n_column: usize) -> Result<Self, XbarError> {
        let lines = LineConfiguration::builtin(config_id)?;
        let stack = MetalStack::asap7();
        let (w_min, l_min) = min_cell_pitch(&lines, &stack)?;
        let geometry = SubarrayGeometry {
            n_row,
            n_column,
            w_cell: w_min,
            l_cell: DEFAULT_LENGTH_FACTOR * l_min,
            r_driver: DEFAULT_DRIVER_RESISTANCE,
        };
        Ok(Self::new(geometry, lines))
    }

    /// (w_min, l_min) of this design's configuration [nm].
    pub fn min_pitch(&self) -> Result<(f64, f64), XbarError> {
        Ok(min_cell_pitch(&self.lines, &self.stack)?)
    }

    pub fn parasitics(&self) -> Result<SegmentConductances, XbarError> {
        Ok(line_config_conductances(&self.lines, &self.geometry, &self.stack, &self.wire)?)
    }

    pub fn validate(&self) -> Result<(), XbarError> {
        self.cell.validate()?;
        self.ots.validate()?;
        self.stack.validate()?;
        self.parasitics()?;
        Ok(())
    }

    pub fn with_geometry(mut self, f: impl FnOnce(&mut SubarrayGeometry)) -> Self {
        f(&mut self.geometry);
        self
    }
}
