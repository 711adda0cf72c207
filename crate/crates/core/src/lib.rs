//! Federated multi-view mood classification.
//!
//! Three keystroke views (alphanumeric timing, special-key events,
//! accelerometer) are each encoded by a GRU; the end-of-sequence vectors are
//! fused by one of three late-fusion heads (fully connected, factorization
//! machine, multi-view machine). Models are trained under several
//! collaboration protocols: isolated local training, centralized data sharing,
//! federated averaging/SGD and (cyclic) institutional incremental learning.
//!
//! Every stochastic choice draws from a [`RngStream`] keyed by a single run
//! seed, so runs are bit-reproducible.

pub mod data;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod federated;
pub mod gradcheck;
pub mod heads;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod train;

pub use data::{
    filter_sessions, generate_synthetic, label_for_hdrs, load_dataset, partition_iid,
    partition_noniid, save_dataset, split_train_val, DatasetSplit, GeneratorConfig, Group, Label,
    PartyDataset, SessionSample, UserProfile,
};
pub use encoder::{gru_backward, gru_forward, GruCache, GruParams, ViewKind, ViewSequence};
pub use error::{Error, Result};
pub use experiment::{
    prepare_split, run_experiment, run_on_split, sweep_configs, ExperimentConfig, ExperimentOutcome,
    MetricsRow, SweepGrid,
};
pub use federated::{
    aggregate, aggregation_weights, run_cds, run_ciil, run_fedavg, run_fedsgd, run_iil, run_local, FederatedConfig,
    LocalOutcomes, Participation, Protocol, ProtocolOutcome, RoundLog,
};
pub use gradcheck::{run_gradcheck, GradcheckReport};
pub use heads::{head_backward, mvm_bruteforce, HeadKind, HeadParams};
pub use math::{affine, softmax_cross_entropy, Activation, DenseMatrix};
pub use metrics::{accuracy, evaluate_model, f_score, Evaluation, Prediction};
pub use model::{compute_gradient, finite_diff_gradient, Mode, ModelConfig, ModelParams};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use rng::RngStream;
pub use train::{local_training, LocalOutcome, TrainConfig};

/// Number of views per session.
pub const NUM_VIEWS: usize = 3;
