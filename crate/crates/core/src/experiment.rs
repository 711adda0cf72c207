//! Experiment configuration, execution and reporting.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{filter_sessions, partition_iid, partition_noniid, split_train_val, DatasetSplit, PartyDataset, SessionSample};
use crate::error::{Error, Result};
use crate::federated::{
    run_cds, run_ciil, run_fedavg, run_fedsgd, run_iil, run_local, FederatedConfig, Participation, RoundLog,
};
use crate::heads::HeadKind;
use crate::model::{ModelConfig, ModelParams};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::rng::{streams, RngStream};
use crate::train::TrainConfig;

pub use crate::federated::Protocol;

/// Party count of the hospital-style non-IID split.
pub const NONIID_PARTIES: usize = 4;

/// Rounds and local epochs used when the configuration leaves them unset.
pub fn default_schedule(kind: HeadKind) -> (usize, usize) {
    match kind {
        HeadKind::Dnn => (400, 15),
        HeadKind::Dfm => (300, 20),
        HeadKind::Dmvm => (400, 15),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: HeadKind,
    pub protocol: Protocol,
    /// Defaults to the model's schedule.
    pub rounds: Option<usize>,
    /// Defaults to the model's schedule.
    pub local_epochs: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub parties: usize,
    pub per_party: usize,
    /// Use the user-level hospital split instead of IID parties.
    pub noniid: bool,
    pub participation: Participation,
    pub seed: u64,
    pub hidden_dim: usize,
    /// Defaults to the model kind's head width.
    pub head_units: Option<usize>,
    pub eval_every: usize,
    /// Write measured per-round seconds to the CSV. Off by default so that
    /// repeated runs produce identical files.
    pub record_time: bool,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: HeadKind::Dmvm,
            protocol: Protocol::FedAvg,
            rounds: None,
            local_epochs: None,
            batch_size: 256,
            learning_rate: 0.001,
            dropout: 0.1,
            optimizer: OptimizerKind::RmsProp,
            parties: 8,
            per_party: 1500,
            noniid: false,
            participation: Participation::Full,
            seed: 0,
            hidden_dim: 8,
            head_units: None,
            eval_every: 10,
            record_time: false,
            dataset: None,
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn rounds(&self) -> usize {
        self.rounds.unwrap_or(default_schedule(self.model).0)
    }

    pub fn local_epochs(&self) -> usize {
        self.local_epochs.unwrap_or(default_schedule(self.model).1)
    }

    /// Copy with every defaulted field made explicit.
    pub fn resolved(&self) -> Self {
        let model = self.model_config();
        ExperimentConfig {
            rounds: Some(self.rounds()),
            local_epochs: Some(self.local_epochs()),
            head_units: Some(model.head_units),
            ..self.clone()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let base = ModelConfig::new(self.model);
        ModelConfig {
            hidden_dim: self.hidden_dim,
            head_units: self.head_units.unwrap_or(base.head_units),
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let optimizer = match self.optimizer {
            OptimizerKind::RmsProp => OptimizerConfig::rmsprop(self.learning_rate),
            OptimizerKind::Sgd => OptimizerConfig::sgd(self.learning_rate),
        };
        TrainConfig {
            local_epochs: self.local_epochs(),
            batch_size: self.batch_size,
            dropout: self.dropout,
            optimizer,
        }
    }

    pub fn federated_config(&self) -> FederatedConfig {
        FederatedConfig {
            rounds: self.rounds(),
            participation: self.participation.clone(),
            train: self.train_config(),
            eval_every: self.eval_every,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parties == 0 {
            return Err(Error::Config("parties must be at least 1".into()));
        }
        if self.noniid && self.parties != NONIID_PARTIES {
            return Err(Error::Config(format!(
                "the non-IID split assigns whole users to {NONIID_PARTIES} hospitals; \
                 got parties = {}. Drop --noniid or set --parties {NONIID_PARTIES}",
                self.parties
            )));
        }
        if !self.noniid && self.per_party == 0 {
            return Err(Error::Config("per_party must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.model_config().validate()?;
        self.federated_config().validate()
    }

    /// Label written to the `per_party` CSV column.
    pub fn per_party_label(&self) -> String {
        if self.noniid {
            "noniid".to_string()
        } else {
            self.per_party.to_string()
        }
    }
}

/// One CSV row; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub protocol: Protocol,
    pub model: HeadKind,
    pub parties: usize,
    pub per_party: String,
    pub seed: u64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_fscore: f64,
    pub seconds: f64,
}

pub const CSV_HEADER: &str = "round,protocol,model,parties,per_party,seed,train_loss,val_accuracy,val_fscore,seconds";

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub rows: Vec<MetricsRow>,
    pub final_accuracy: f64,
    pub final_fscore: f64,
    pub final_train_loss: f64,
    /// Party sizes in party-id order.
    pub party_sizes: Vec<usize>,
    /// Local protocol only: `(party_id, final accuracy)`.
    pub party_accuracies: Vec<(usize, f64)>,
    pub wall_seconds: f64,
    #[serde(skip)]
    pub models: Vec<ModelParams>,
}

/// Filters the corpus and splits it per user into train and validation.
pub fn prepare_split(corpus: Vec<SessionSample>) -> Result<DatasetSplit> {
    let filtered = filter_sessions(corpus);
    if filtered.is_empty() {
        return Err(Error::Empty("corpus after keypress filter"));
    }
    split_train_val(filtered)
}

pub fn build_parties(config: &ExperimentConfig, split: &DatasetSplit) -> Result<Vec<PartyDataset>> {
    if config.noniid {
        partition_noniid(&split.train, config.parties)
    } else {
        partition_iid(&split.train, config.parties, config.per_party, config.seed)
    }
}

pub fn initial_model(config: &ExperimentConfig) -> Result<ModelParams> {
    ModelParams::init(&config.model_config(), &mut RngStream::new(config.seed, streams::INIT))
}

fn rows_from_logs(config: &ExperimentConfig, logs: &[RoundLog]) -> Vec<MetricsRow> {
    logs.iter()
        .filter_map(|l| {
            Some(MetricsRow {
                round: l.round,
                protocol: l.protocol,
                model: config.model,
                parties: config.parties,
                per_party: config.per_party_label(),
                seed: config.seed,
                train_loss: l.train_loss,
                val_accuracy: l.val_accuracy?,
                val_fscore: l.val_fscore?,
                seconds: if config.record_time { l.seconds } else { 0.0 },
            })
        })
        .collect()
}

/// Runs the configured protocol on an already split corpus.
pub fn run_on_split(config: &ExperimentConfig, split: &DatasetSplit) -> Result<ExperimentOutcome> {
    config.validate()?;
    if split.validation.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let started = Instant::now();
    let parties = build_parties(config, split)?;
    let init = initial_model(config)?;
    let fed = config.federated_config();
    let eval = &split.validation;

    let (logs, models, party_accuracies) = match config.protocol {
        Protocol::Local => {
            let out = run_local(&parties, &fed, &init, eval)?;
            let accs = out
                .per_party
                .iter()
                .filter_map(|(id, o)| o.final_accuracy().map(|a| (*id, a)))
                .collect();
            let models = out.per_party.into_iter().map(|(_, o)| o.model).collect();
            (out.summary, models, accs)
        }
        protocol => {
            let run = match protocol {
                Protocol::Cds => run_cds,
                Protocol::FedAvg => run_fedavg,
                Protocol::FedSgd => run_fedsgd,
                Protocol::Iil => run_iil,
                Protocol::Ciil => run_ciil,
                Protocol::Local => unreachable!(),
            };
            let out = run(&parties, &fed, &init, eval)?;
            (out.logs, vec![out.model], Vec::new())
        }
    };
    let rows = rows_from_logs(config, &logs);
    let last = rows.last().ok_or(Error::Empty("evaluated rounds"))?;
    Ok(ExperimentOutcome {
        config: config.resolved(),
        final_accuracy: last.val_accuracy,
        final_fscore: last.val_fscore,
        final_train_loss: last.train_loss,
        rows,
        party_sizes: parties.iter().map(PartyDataset::len).collect(),
        party_accuracies,
        wall_seconds: started.elapsed().as_secs_f64(),
        models,
    })
}

pub fn run_experiment(config: &ExperimentConfig, corpus: Vec<SessionSample>) -> Result<ExperimentOutcome> {
    config.validate()?;
    run_on_split(config, &prepare_split(corpus)?)
}

/// Writes the header and rows as CSV.
pub fn write_metrics_csv<W: Write>(writer: W, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER.split(','))
        .and_then(|_| rows.iter().try_for_each(|r| w.serialize(r)))
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| Error::Data(format!("writing metrics CSV: {e}")))
}

pub fn read_metrics_csv<R: std::io::Read>(reader: R) -> Result<Vec<MetricsRow>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Report JSON: the resolved config plus final metrics.
pub fn report_json(outcome: &ExperimentOutcome) -> Result<String> {
    serde_json::to_string_pretty(outcome).map_err(|e| Error::Data(format!("serializing report: {e}")))
}

/// The two experiment grids of the evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepGrid {
    /// Party counts at 1500 samples per party.
    Parties,
    /// Samples per party with 8 parties.
    Data,
}

impl SweepGrid {
    pub fn points(self) -> Vec<(usize, usize)> {
        match self {
            SweepGrid::Parties => [4, 8, 12, 16, 24].iter().map(|&k| (k, 1500)).collect(),
            SweepGrid::Data => [100, 500, 1000, 1500, 2000, 3000].iter().map(|&n| (8, n)).collect(),
        }
    }
}

impl fmt::Display for SweepGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepGrid::Parties => "parties",
            SweepGrid::Data => "data",
        })
    }
}

impl FromStr for SweepGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parties" => Ok(SweepGrid::Parties),
            "data" => Ok(SweepGrid::Data),
            other => Err(Error::Config(format!("unknown grid `{other}` (expected parties or data)"))),
        }
    }
}

/// One config per grid point and protocol, grid-major.
pub fn sweep_configs(base: &ExperimentConfig, grid: SweepGrid, protocols: &[Protocol]) -> Vec<ExperimentConfig> {
    grid.points()
        .into_iter()
        .flat_map(|(parties, per_party)| {
            protocols.iter().map(move |&protocol| ExperimentConfig {
                parties,
                per_party,
                protocol,
                noniid: false,
                ..base.clone()
            })
        })
        .collect()
}
