//! Single-process federated learning simulator.
//!
//! The crate trains small classifiers over simulated clients and compares
//! four aggregation protocols:
//!
//! * **FedAvg**: clients train locally, the server averages their parameters.
//! * **RingFed**: clients pass parameters around a ring between local
//!   training periods, mixing each incoming vector with factor `γ`, and only
//!   the last period's result is uploaded.
//! * **FedProx**: FedAvg with a proximal term pulling local weights toward
//!   the round's global model.
//! * **SCAFFOLD**: FedAvg with server/client control variates correcting
//!   local gradient drift.
//!
//! Everything is deterministic given the master seed, including under
//! parallel client execution, and communication is accounted in units of
//! whole parameter-vector transmissions.

pub mod algos;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod seed;

pub use algos::{
    fedavg_aggregate, local_train, ring_exchange, scaffold_server_update, weighted_aggregate,
    ClientUpdate, ExchangeConfig, ExchangeSemantics, LocalObjective, LocalSchedule,
    ScaffoldState,
};
pub use data::{
    gaussian_blobs, load_idx, load_idx_limited, partition_dirichlet, partition_iid, partition_pathological,
    ClientShard, Dataset, PartitionScheme, PartitionSpec,
};
pub use error::{Error, Result};
pub use metrics::{
    cc_ratio, rounds_to_target, tail_stats, MetricsLog, MetricsRecord, ReportFormat,
    SummaryStats,
};
pub use nn::{sgd_step, Batch, Model, OptimizerConfig, OptimizerState, ParamVector};
pub use orchestrator::{
    run_experiment, select_clients, Algorithm, CommLedger, ModelKind, RingOrder, RoundOutcome,
    RunConfig, Simulator,
};
