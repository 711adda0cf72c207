//! Collaboration protocols.
//!
//! Every protocol is organized in rounds of `local_epochs` epochs so the
//! training budget is comparable: FedAvg trains each selected party for one
//! `local_training` call per round and averages; Local and CDS run `rounds`
//! consecutive `local_training` calls on a party's own data or on the pooled
//! data; CIIL hands the model through all parties once per round (IIL is a
//! single such pass); FedSGD takes one server gradient step per round.
//!
//! Parties are processed in ascending `party_id` order. Party `k` draws from
//! the stream `streams::party(k)` of the run seed; server-side sampling uses
//! `streams::SERVER`. Communication is an in-process parameter handoff.

use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{PartyDataset, SessionSample};
use crate::error::{check_dim, Error, Result};
use crate::metrics::evaluate_model;
use crate::model::{compute_gradient, Mode, ModelParams};
use crate::rng::{streams, RngStream};
use crate::train::{local_training, LocalOutcome, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Local,
    Cds,
    FedAvg,
    FedSgd,
    Iil,
    Ciil,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::Local,
        Protocol::Cds,
        Protocol::FedAvg,
        Protocol::FedSgd,
        Protocol::Iil,
        Protocol::Ciil,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Local => "local",
            Protocol::Cds => "cds",
            Protocol::FedAvg => "fedavg",
            Protocol::FedSgd => "fedsgd",
            Protocol::Iil => "iil",
            Protocol::Ciil => "ciil",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown protocol `{s}` (expected local, cds, fedavg, fedsgd, iil or ciil)"
                ))
            })
    }
}

/// Which parties train in a round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Participation {
    #[default]
    Full,
    /// The listed party ids, every round.
    FixedSubset(Vec<usize>),
    /// Per round, draw `t` uniformly from `1..=K`, then a uniformly random set
    /// of `t` parties, from the server stream.
    RandomSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig {
    pub rounds: usize,
    pub participation: Participation,
    pub train: TrainConfig,
    /// Evaluate on the validation set every this many rounds (and always
    /// after the final round).
    pub eval_every: usize,
    pub seed: u64,
}

impl FederatedConfig {
    pub fn new(rounds: usize, train: TrainConfig, seed: u64) -> Self {
        FederatedConfig {
            rounds,
            participation: Participation::Full,
            train,
            eval_every: rounds.max(1),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        self.train.validate()
    }

    fn should_eval(&self, round: usize) -> bool {
        round % self.eval_every == 0 || round == self.rounds
    }
}

/// Metrics for one communication round (1-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundLog {
    pub round: usize,
    pub protocol: Protocol,
    /// `(party_id, mean training loss of its final local epoch)`.
    pub party_losses: Vec<(usize, f64)>,
    /// Sample-weighted mean of `party_losses`.
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_fscore: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ProtocolOutcome {
    pub model: ModelParams,
    pub logs: Vec<RoundLog>,
}

impl ProtocolOutcome {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.logs.iter().rev().find_map(|l| l.val_accuracy)
    }

    pub fn final_fscore(&self) -> Option<f64> {
        self.logs.iter().rev().find_map(|l| l.val_fscore)
    }
}

/// `n_k / n` over the given sizes.
pub fn aggregation_weights(sizes: &[usize]) -> Result<Vec<f64>> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return Err(Error::Empty("aggregation sizes"));
    }
    Ok(sizes.iter().map(|&k| k as f64 / n as f64).collect())
}

/// Sample-weighted average `Σ n_k/n · ω_k`.
///
/// Evaluated as `ω_0 + Σ_{k≥1} (n_k/n)(ω_k − ω_0)`, which equals the weighted
/// mean because the weights sum to one and returns `ω_0` bit-exactly when
/// all models coincide.
pub fn aggregate<M: Borrow<ModelParams>>(models: &[M], sizes: &[usize]) -> Result<ModelParams> {
    if models.is_empty() {
        return Err(Error::Empty("models to aggregate"));
    }
    check_dim("aggregate sizes", models.len(), sizes.len())?;
    let weights = aggregation_weights(sizes)?;
    let anchor = models[0].borrow();
    let mut out = anchor.clone();
    for (m, &w) in models.iter().zip(&weights).skip(1) {
        let m = m.borrow();
        if m.kind() != anchor.kind() {
            return Err(Error::Config("cannot aggregate models of different kinds".into()));
        }
        let a = anchor.slices();
        let b = m.slices();
        check_dim("aggregate block count", a.len(), b.len())?;
        for ((dst, base), src) in out.slices_mut().into_iter().zip(a).zip(b) {
            check_dim("aggregate block size", base.len(), src.len())?;
            for ((d, x0), x) in dst.iter_mut().zip(base).zip(src) {
                *d += w * (x - x0);
            }
        }
    }
    Ok(out)
}

fn sorted_parties(parties: &[PartyDataset]) -> Result<Vec<&PartyDataset>> {
    let mut sorted: Vec<&PartyDataset> = parties
        .iter()
        .filter(|p| {
            if p.is_empty() {
                warn!("party {} has no samples; skipped", p.party_id);
            }
            !p.is_empty()
        })
        .collect();
    sorted.sort_by_key(|p| p.party_id);
    if sorted.windows(2).any(|w| w[0].party_id == w[1].party_id) {
        return Err(Error::Config("duplicate party ids".into()));
    }
    if sorted.is_empty() {
        return Err(Error::Empty("parties"));
    }
    Ok(sorted)
}

fn party_streams(parties: &[&PartyDataset], seed: u64) -> Vec<RngStream> {
    parties
        .iter()
        .map(|p| RngStream::new(seed, streams::party(p.party_id)))
        .collect()
}

/// Positions (into the sorted party list) that train this round.
fn select_parties(
    participation: &Participation,
    parties: &[&PartyDataset],
    server: &mut RngStream,
) -> Vec<usize> {
    match participation {
        Participation::Full => (0..parties.len()).collect(),
        Participation::FixedSubset(ids) => parties
            .iter()
            .enumerate()
            .filter(|(_, p)| ids.contains(&p.party_id))
            .map(|(i, _)| i)
            .collect(),
        Participation::RandomSubset => {
            let k = parties.len();
            let t = 1 + server.index(k);
            let mut all: Vec<usize> = (0..k).collect();
            server.shuffle(&mut all);
            let mut chosen = all[..t].to_vec();
            chosen.sort_unstable();
            chosen
        }
    }
}

fn evaluate<S: Borrow<SessionSample> + Sync>(
    model: &ModelParams,
    eval_set: &[S],
) -> Result<(Option<f64>, Option<f64>)> {
    if eval_set.is_empty() {
        return Ok((None, None));
    }
    let e = evaluate_model(model, eval_set)?;
    Ok((Some(e.accuracy), Some(e.f_score)))
}

fn weighted_loss(losses: &[(usize, f64)], sizes: &[usize]) -> f64 {
    let n: usize = sizes.iter().sum();
    losses
        .iter()
        .zip(sizes)
        .map(|((_, l), &k)| l * k as f64)
        .sum::<f64>()
        / n.max(1) as f64
}

/// Federated averaging: per round, broadcast the global model, run
/// `local_training` on every selected party and replace the global model by
/// the `n_k/n`-weighted average over the selected parties.
pub fn run_fedavg<S: Borrow<SessionSample> + Sync>(
    parties: &[PartyDataset],
    cfg: &FederatedConfig,
    init: &ModelParams,
    eval_set: &[S],
) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    let parties = sorted_parties(parties)?;
    let mut rngs = party_streams(&parties, cfg.seed);
    let mut server = RngStream::new(cfg.seed, streams::SERVER);
    let mut global = init.clone();
    let mut logs = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let selected = select_parties(&cfg.participation, &parties, &mut server);
        if selected.is_empty() {
            warn!("round {round}: no parties selected; round skipped");
            continue;
        }
        let outcomes: Vec<(usize, Result<LocalOutcome>)> = rngs
            .par_iter_mut()
            .enumerate()
            .filter(|(i, _)| selected.contains(i))
            .map(|(i, rng)| (i, local_training(&parties[i].samples, &global, &cfg.train, rng)))
            .collect();
        let mut models = Vec::with_capacity(outcomes.len());
        let mut sizes = Vec::with_capacity(outcomes.len());
        let mut losses = Vec::with_capacity(outcomes.len());
        for (i, outcome) in outcomes {
            let outcome = outcome?;
            sizes.push(parties[i].len());
            losses.push((parties[i].party_id, outcome.train_loss));
            models.push(outcome.params);
        }
        global = aggregate(&models, &sizes)?;
        let (acc, f1) = if cfg.should_eval(round) {
            evaluate(&global, eval_set)?
        } else {
            (None, None)
        };
        debug!("fedavg round {round}: accuracy {acc:?}");
        logs.push(RoundLog {
            round,
            protocol: Protocol::FedAvg,
            train_loss: weighted_loss(&losses, &sizes),
            party_losses: losses,
            val_accuracy: acc,
            val_fscore: f1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ProtocolOutcome { model: global, logs })
}

/// Federated SGD: per round every selected party reports its full-batch mean
/// gradient at the current global model and the server applies
/// `ω ← ω − η Σ (n_k/n) g_k`.
pub fn run_fedsgd<S: Borrow<SessionSample> + Sync>(
    parties: &[PartyDataset],
    cfg: &FederatedConfig,
    init: &ModelParams,
    eval_set: &[S],
) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    let parties = sorted_parties(parties)?;
    let mut rngs = party_streams(&parties, cfg.seed);
    let mut server = RngStream::new(cfg.seed, streams::SERVER);
    let mut global = init.clone();
    let lr = cfg.train.optimizer.learning_rate;
    let dropout = cfg.train.dropout;
    let mut logs = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let selected = select_parties(&cfg.participation, &parties, &mut server);
        if selected.is_empty() {
            warn!("round {round}: no parties selected; round skipped");
            continue;
        }
        let grads: Vec<(usize, Result<(ModelParams, f64)>)> = rngs
            .par_iter_mut()
            .enumerate()
            .filter(|(i, _)| selected.contains(i))
            .map(|(i, rng)| {
                let mode = if dropout > 0.0 {
                    Mode::Train { dropout, rng }
                } else {
                    Mode::Eval
                };
                (i, compute_gradient(&global, &parties[i].samples, mode))
            })
            .collect();
        let sizes: Vec<usize> = grads.iter().map(|(i, _)| parties[*i].len()).collect();
        let weights = aggregation_weights(&sizes)?;
        let mut losses = Vec::with_capacity(grads.len());
        let mut update = global.zeros_like();
        for ((i, g), w) in grads.into_iter().zip(&weights) {
            let (g, loss) = g?;
            update.add_scaled(&g, *w)?;
            losses.push((parties[i].party_id, loss));
        }
        global.add_scaled(&update, -lr)?;
        let (acc, f1) = if cfg.should_eval(round) {
            evaluate(&global, eval_set)?
        } else {
            (None, None)
        };
        logs.push(RoundLog {
            round,
            protocol: Protocol::FedSgd,
            train_loss: weighted_loss(&losses, &sizes),
            party_losses: losses,
            val_accuracy: acc,
            val_fscore: f1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ProtocolOutcome { model: global, logs })
}

/// `rounds` consecutive `local_training` calls on one dataset.
fn train_alone<S: Borrow<SessionSample> + Sync>(
    party_id: usize,
    samples: &[Arc<SessionSample>],
    cfg: &FederatedConfig,
    init: &ModelParams,
    eval_set: &[S],
    protocol: Protocol,
) -> Result<ProtocolOutcome> {
    let mut rng = RngStream::new(cfg.seed, streams::party(party_id));
    let mut model = init.clone();
    let mut logs = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let outcome = local_training(samples, &model, &cfg.train, &mut rng)?;
        model = outcome.params;
        let (acc, f1) = if cfg.should_eval(round) {
            evaluate(&model, eval_set)?
        } else {
            (None, None)
        };
        logs.push(RoundLog {
            round,
            protocol,
            party_losses: vec![(party_id, outcome.train_loss)],
            train_loss: outcome.train_loss,
            val_accuracy: acc,
            val_fscore: f1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ProtocolOutcome { model, logs })
}

/// Collaborative data sharing: all party data pooled (in party-id order) and
/// trained centrally. The pool uses the random stream of the lowest party id,
/// so a single-party CDS run is exactly that party's Local run.
pub fn run_cds<S: Borrow<SessionSample> + Sync>(
    parties: &[PartyDataset],
    cfg: &FederatedConfig,
    init: &ModelParams,
    eval_set: &[S],
) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    let parties = sorted_parties(parties)?;
    let pool: Vec<Arc<SessionSample>> = parties
        .iter()
        .flat_map(|p| p.samples.iter().cloned())
        .collect();
    train_alone(parties[0].party_id, &pool, cfg, init, eval_set, Protocol::Cds)
}

/// Per-party outcomes of isolated training plus the cross-party summary.
#[derive(Debug, Clone)]
pub struct LocalOutcomes {
    pub per_party: Vec<(usize, ProtocolOutcome)>,
    /// Per round: mean party loss and unweighted mean of per-party metrics.
    pub summary: Vec<RoundLog>,
}

impl LocalOutcomes {
    pub fn mean_final_accuracy(&self) -> Option<f64> {
        self.summary.iter().rev().find_map(|l| l.val_accuracy)
    }
}

/// Every party trains on its own data only, for the full budget, starting
/// from `init`.
pub fn run_local<S: Borrow<SessionSample> + Sync>(
    parties: &[PartyDataset],
    cfg: &FederatedConfig,
    init: &ModelParams,
    eval_set: &[S],
) -> Result<LocalOutcomes> {
    cfg.validate()?;
    let parties = sorted_parties(parties)?;
    let per_party = parties
        .par_iter()
        .map(|p| {
            train_alone(p.party_id, &p.samples, cfg, init, eval_set, Protocol::Local)
                .map(|o| (p.party_id, o))
        })
        .collect::<Result<Vec<_>>>()?;

    let sizes: Vec<usize> = parties.iter().map(|p| p.len()).collect();
    let summary = (0..cfg.rounds)
        .map(|r| {
            let logs: Vec<&RoundLog> = per_party.iter().map(|(_, o)| &o.logs[r]).collect();
            let losses: Vec<(usize, f64)> = logs.iter().flat_map(|l| l.party_losses.clone()).collect();
            let mean = |f: fn(&RoundLog) -> Option<f64>| -> Option<f64> {
                let vals: Option<Vec<f64>> = logs.iter().map(|l| f(l)).collect();
                vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
            };
            RoundLog {
                round: r + 1,
                protocol: Protocol::Local,
                train_loss: weighted_loss(&losses, &sizes),
                val_accuracy: mean(|l| l.val_accuracy),
                val_fscore: mean(|l| l.val_fscore),
                seconds: logs.iter().map(|l| l.seconds).sum(),
                party_losses: losses,
            }
        })
        .collect();
    Ok(LocalOutcomes { per_party, summary })
}

fn run_incremental<S: Borrow<SessionSample> + Sync>(
    parties: &[PartyDataset],
    cfg: &FederatedConfig,
    init: &ModelParams,
    eval_set: &[S],
    cycles: usize,
    protocol: Protocol,
) -> Result<ProtocolOutcome> {
    cfg.validate()?;
    let parties = sorted_parties(parties)?;
    let mut rngs = party_streams(&parties, cfg.seed);
    let mut model = init.clone();
    let mut logs = Vec::with_capacity(cycles);
    let sizes: Vec<usize> = parties.iter().map(|p| p.len()).collect();
    for cycle in 1..=cycles {
        let started = Instant::now();
        let mut losses = Vec::with_capacity(parties.len());
        for (party, rng) in parties.iter().zip(rngs.iter_mut()) {
            let outcome = local_training(&party.samples, &model, &cfg.train, rng)?;
            model = outcome.params;
            losses.push((party.party_id, outcome.train_loss));
        }
        let (acc, f1) = if cycle % cfg.eval_every == 0 || cycle == cycles {
            evaluate(&model, eval_set)?
        } else {
            (None, None)
        };
        logs.push(RoundLog {
            round: cycle,
            protocol,
            train_loss: weighted_loss(&losses, &sizes),
            party_losses: losses,
            val_accuracy: acc,
            val_fscore: f1,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ProtocolOutcome { model, logs })
}

/// Institutional incremental learning: one pass handing the model from party
/// to party, each training `local_epochs` epochs on it.
pub fn run_iil<S: Borrow<SessionSample> + Sync>(
    parties: &[PartyDataset],
    cfg: &FederatedConfig,
    init: &ModelParams,
    eval_set: &[S],
) -> Result<ProtocolOutcome> {
    run_incremental(parties, cfg, init, eval_set, 1, Protocol::Iil)
}

/// Cyclic institutional incremental learning: `rounds` IIL passes.
pub fn run_ciil<S: Borrow<SessionSample> + Sync>(
    parties: &[PartyDataset],
    cfg: &FederatedConfig,
    init: &ModelParams,
    eval_set: &[S],
) -> Result<ProtocolOutcome> {
    run_incremental(parties, cfg, init, eval_set, cfg.rounds, Protocol::Ciil)
}
