//! Mixture-of-Dirichlet-Multinomials (MDM) models of federated client
//! histograms.
//!
//! The crate covers the whole pipeline: numerically stable special
//! functions and pmfs, seeded sampling of synthetic federations, a simulated
//! federated generalized-EM protocol whose server only sees summed client
//! statistics, selection of the number of components on held-out clients,
//! recovery metrics, record ingestion and binning, and partitioning of a
//! central dataset into simulated clients.

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod error;
pub mod federation;
pub mod inference;
pub mod ingest;
pub mod json;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod presets;
pub mod sampling;
pub mod selection;
pub mod special;

pub use error::{Error, Result};
pub use federation::{AggregateReport, ClientPopulation, ClientStatsPacket, Execution};
pub use inference::{fit, DegeneratePolicy, InferenceConfig, InferenceTrace};
pub use ingest::{BinningSpec, CentralPool, RecordTable};
pub use metrics::{align_and_score, AlignedNmseReport};
pub use model::{ClientRecord, MdmParams, SampleCountDist};
pub use partition::{Generator, PartitionPlan, SimulatedClient};
pub use sampling::RngHandle;
pub use selection::{KSelectionReport, SelectionConfig};
