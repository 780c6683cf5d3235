use thiserror::Error;

use crate::compute::ComputeError;
use crate::device::DeviceError;
use crate::fabric::FabricError;
use crate::interconnect::InterconnectError;
use crate::network::NetworkError;
use crate::workload::WorkloadError;

/// Crate-level error; each module also exposes its own.
#[derive(Debug, Error)]
pub enum XbarError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Interconnect(#[from] InterconnectError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
