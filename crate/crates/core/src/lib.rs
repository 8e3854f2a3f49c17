//! Uplink compression for federated averaging.
//!
//! Clients send either *structured* updates, trained directly in a
//! low-parameter space (low rank or random mask) and described by a seed
//! plus the free parameters, or *sketched* updates, trained freely and then
//! compressed with a randomized Hadamard rotation, random subsampling and
//! stochastic quantization. The simulator runs synchronous federated
//! averaging over simulated clients and accounts every uploaded byte.

pub mod codec;
pub mod data;
pub mod error;
pub mod model;
pub mod rng;
pub mod sim;
pub mod sketch;
pub mod structured;
pub mod tensor;
pub mod train;
pub mod wire;

pub use codec::{payload_bits, CompressionConfig, EncodedUpdate, Scheme};
pub use data::{ClientDataset, Dataset, SyntheticSpec};
pub use error::{Error, Result};
pub use model::ModelSpec;
pub use rng::{rng_stream, SeededRng};
pub use sim::{
    run_experiment, run_experiment_with, server_aggregate, DatasetSpec, ExperimentConfig, ExperimentResult,
    PartitionSpec, RoundRecord,
};
pub use sketch::{SketchConfig, SketchEncoded};
pub use tensor::{Matrix, ModelParams};
pub use train::{RoundConfig, Weighting};
pub use wire::{payload_compression_factor, ByteLedger, MessageSize};
