//! Sparsity-regularised reconstruction for electrical impedance tomography.

pub mod conductivity;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod par;
pub mod pgm;
pub mod phantom;
pub mod plot;
pub mod protocol;
pub mod prox;
pub mod table;

pub use conductivity::{Bounds, ConductivityField};
pub use error::{EitError, Result};
pub use forward::{ForwardContext, ForwardModel, JacobianMatrix, PotentialOrder};
pub use mesh::{DiskMeshSpec, Mesh};
pub use oracle::OracleMask;
pub use par::Execution;
pub use pgm::{SolveReport, SolverConfig, Variant};
pub use protocol::{Protocol, ProtocolKind};
pub use prox::{Penalty, RegularizerConfig};
