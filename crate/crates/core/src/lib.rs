//! TMVM simulation and design-space analysis for two-level PCM crosspoint
//! subarrays: device and wire models, a resistive-network oracle, Thevenin
//! reduction, voltage windows and noise margins, functional execution,
//! subarray chaining and MNIST inference.

pub mod compute;
pub mod design;
pub mod device;
pub mod drive;
pub mod error;
pub mod fabric;
pub mod interconnect;
pub mod margin;
pub mod network;
pub mod thevenin;
pub mod workload;

pub use compute::{tmvm_execute, ExecMode, SubarrayState};
pub use design::Design;
pub use device::{CellState, OtsParams, PcmCellParams};
pub use drive::DrivePattern;
pub use error::XbarError;
pub use interconnect::{LineConfiguration, SubarrayGeometry, WireModel};
pub use margin::{noise_margin, NoiseMarginReport, VoltageWindow};
pub use thevenin::{thevenin, TheveninEquivalent};
