//! Round loop: client selection, local training, peer exchange, server
//! aggregation and communication accounting.

use std::fmt;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algos::{
    check_gamma, fedavg_aggregate, local_train, ring_exchange, scaffold_server_update,
    weighted_aggregate, ClientUpdate, ExchangeSemantics, LocalObjective, LocalSchedule,
    ScaffoldState,
};
use crate::data::{ClientShard, Dataset, PartitionScheme, PartitionSpec};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, MetricsRecord};
use crate::nn::{Model, OptimizerConfig, OptimizerState, ParamVector};
use crate::seed::{self, tag};

const EVAL_CHUNK: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedAvg,
    RingFed,
    FedProx,
    Scaffold,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::FedAvg,
        Algorithm::RingFed,
        Algorithm::FedProx,
        Algorithm::Scaffold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::RingFed => "ringfed",
            Algorithm::FedProx => "fedprox",
            Algorithm::Scaffold => "scaffold",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == lower)
            .ok_or_else(|| Error::config(format!("unknown algorithm '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelKind {
    Logistic,
    Mlp { hidden_dim: usize },
}

impl ModelKind {
    pub fn build(self, input_dim: usize, num_classes: usize) -> Result<Model> {
        match self {
            ModelKind::Logistic => Model::logistic(input_dim, num_classes),
            ModelKind::Mlp { hidden_dim } => Model::mlp(input_dim, hidden_dim, num_classes),
        }
    }
}

/// Order of the selected clients around the ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RingOrder {
    /// Ascending client id.
    #[default]
    Ascending,
    /// A fresh seeded permutation every round.
    Shuffled,
}

impl FromStr for RingOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ascending" => Ok(RingOrder::Ascending),
            "shuffled" => Ok(RingOrder::Shuffled),
            other => Err(Error::config(format!("unknown ring order '{other}'"))),
        }
    }
}

/// Everything that determines a run, besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub model: ModelKind,
    pub total_clients: usize,
    /// Fraction of clients selected per round, in (0, 1].
    pub select_frac: f64,
    pub rounds: usize,
    /// Local epochs per period.
    pub epochs: usize,
    /// RingFed periods per round; ignored by the other algorithms.
    pub periods: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub partition: PartitionScheme,
    pub seed: u64,
    pub exchange_semantics: ExchangeSemantics,
    /// Also exchange after the last period, right before the upload.
    pub exchange_after_final_period: bool,
    pub ring_order: RingOrder,
    /// Weight the server average by client example counts.
    pub weighted_average: bool,
    pub prox_mu: f64,
    pub server_lr: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            algorithm: Algorithm::RingFed,
            model: ModelKind::Mlp { hidden_dim: 64 },
            total_clients: 100,
            select_frac: 0.3,
            rounds: 100,
            epochs: 5,
            periods: 6,
            gamma: 0.8,
            batch_size: 10,
            optimizer: OptimizerConfig {
                lr: 0.005,
                momentum: 0.9,
                lr_decay: 1.0,
            },
            partition: PartitionScheme::Pathological {
                shards_per_client: 2,
            },
            seed: 0,
            exchange_semantics: ExchangeSemantics::Snapshot,
            exchange_after_final_period: false,
            ring_order: RingOrder::Ascending,
            weighted_average: false,
            prox_mu: 0.01,
            server_lr: 1.0,
        }
    }
}

impl RunConfig {
    /// `K = round(total_clients · select_frac)`.
    pub fn selected_count(&self) -> usize {
        (self.total_clients as f64 * self.select_frac).round() as usize
    }

    /// Periods actually run per round: `periods` for RingFed, else 1.
    pub fn effective_periods(&self) -> usize {
        match self.algorithm {
            Algorithm::RingFed => self.periods,
            _ => 1,
        }
    }

    /// Ring exchanges per round.
    pub fn exchanges_per_round(&self) -> usize {
        match self.algorithm {
            Algorithm::RingFed if self.exchange_after_final_period => self.periods,
            Algorithm::RingFed => self.periods - 1,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_clients == 0 {
            return Err(Error::config("number of clients must be positive"));
        }
        if !(self.select_frac > 0.0 && self.select_frac <= 1.0) {
            return Err(Error::config(format!(
                "selection fraction must lie in (0, 1], got {}",
                self.select_frac
            )));
        }
        if self.selected_count() == 0 {
            return Err(Error::config(format!(
                "selecting {} of {} clients rounds to zero",
                self.select_frac, self.total_clients
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("local epochs must be at least 1"));
        }
        if self.periods == 0 {
            return Err(Error::config("periods must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        check_gamma(self.gamma)?;
        self.optimizer.validate()?;
        if !(self.prox_mu >= 0.0 && self.prox_mu.is_finite()) {
            return Err(Error::config(format!("prox mu must be >= 0, got {}", self.prox_mu)));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            return Err(Error::config(format!(
                "server lr must be positive, got {}",
                self.server_lr
            )));
        }
        match self.partition {
            PartitionScheme::Pathological { shards_per_client: 0 } => {
                Err(Error::config("shards per client must be at least 1"))
            }
            PartitionScheme::Dirichlet { alpha } if !(alpha > 0.0 && alpha.is_finite()) => {
                Err(Error::config(format!("dirichlet alpha must be positive, got {alpha}")))
            }
            _ => Ok(()),
        }
    }
}

/// Cumulative transmissions, in whole parameter vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub uplink_units: u64,
    pub downlink_units: u64,
    pub peer_units: u64,
    /// SCAFFOLD control-variate vectors, both directions.
    pub control_units: u64,
}

impl CommLedger {
    pub fn add(&mut self, delta: &CommLedger) {
        self.uplink_units += delta.uplink_units;
        self.downlink_units += delta.downlink_units;
        self.peer_units += delta.peer_units;
        self.control_units += delta.control_units;
    }
}

/// Uniform draw of `round(total · frac)` distinct ids, returned ascending.
pub fn select_clients(total: usize, frac: f64, round_seed: u64) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::config(format!(
            "selection fraction must lie in (0, 1], got {frac}"
        )));
    }
    let k = (total as f64 * frac).round() as usize;
    if k == 0 {
        return Err(Error::config(format!(
            "selecting {frac} of {total} clients rounds to zero"
        )));
    }
    if k >= total {
        return Ok((0..total).collect());
    }
    let mut rng = seed::rng_from(round_seed);
    let mut ids = rand::seq::index::sample(&mut rng, total, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Result of one communication round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub params: ParamVector,
    pub selected: Vec<usize>,
    /// Transmissions made during this round only.
    pub comm: CommLedger,
    /// Evaluation after the round, with cumulative counters.
    pub record: MetricsRecord,
}

/// Runs one experiment over fixed train/test data.
pub struct Simulator<'a> {
    cfg: RunConfig,
    model: Model,
    train: &'a Dataset,
    test: &'a Dataset,
    shards: Vec<ClientShard>,
    scaffold: ScaffoldState,
    ledger: CommLedger,
}

impl<'a> Simulator<'a> {
    /// Partitions `train` across clients according to the config.
    pub fn new(cfg: RunConfig, train: &'a Dataset, test: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let spec = PartitionSpec {
            scheme: cfg.partition,
            num_clients: cfg.total_clients,
            seed: seed::derive_seed(cfg.seed, &[tag::PARTITION]),
        };
        let shards = spec.apply(train)?;
        Self::with_shards(cfg, train, test, shards)
    }

    /// Uses a caller-supplied partition; shard `i` must belong to client `i`.
    pub fn with_shards(
        cfg: RunConfig,
        train: &'a Dataset,
        test: &'a Dataset,
        shards: Vec<ClientShard>,
    ) -> Result<Self> {
        cfg.validate()?;
        if shards.len() != cfg.total_clients {
            return Err(Error::config(format!(
                "{} shards for {} clients",
                shards.len(),
                cfg.total_clients
            )));
        }
        if let Some((i, s)) = shards.iter().enumerate().find(|(i, s)| s.client_id() != *i) {
            return Err(Error::config(format!(
                "shard {i} belongs to client {}",
                s.client_id()
            )));
        }
        if let Some(&bad) = shards.iter().flat_map(|s| s.indices()).find(|&&i| i >= train.len()) {
            return Err(Error::config(format!(
                "shard index {bad} outside a training set of {}",
                train.len()
            )));
        }
        if test.dim() != train.dim() {
            return Err(Error::config(format!(
                "test features have dimension {}, training features {}",
                test.dim(),
                train.dim()
            )));
        }
        let classes = train.num_classes().max(test.num_classes());
        let model = cfg.model.build(train.dim(), classes)?;
        if cfg.algorithm == Algorithm::RingFed && cfg.selected_count() < 2 {
            info!("a single selected client makes the ring exchange a no-op");
        }
        let scaffold = ScaffoldState::new(model.param_count());
        Ok(Simulator {
            cfg,
            model,
            train,
            test,
            shards,
            scaffold,
            ledger: CommLedger::default(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn shards(&self) -> &[ClientShard] {
        &self.shards
    }

    /// Cumulative communication so far.
    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn scaffold_state(&self) -> &ScaffoldState {
        &self.scaffold
    }

    pub fn initial_params(&self) -> ParamVector {
        self.model
            .init_params(seed::derive_seed(self.cfg.seed, &[tag::INIT]))
    }

    pub fn select(&self, round: usize) -> Result<Vec<usize>> {
        select_clients(
            self.cfg.total_clients,
            self.cfg.select_frac,
            seed::derive_seed(self.cfg.seed, &[tag::SELECT, round as u64]),
        )
    }

    /// Accuracy and mean loss over the full test set.
    pub fn evaluate(&self, params: &ParamVector) -> Result<(f64, f64)> {
        evaluate(&self.model, self.test, params)
    }

    /// One round of the configured algorithm; `round` is 0-based.
    pub fn run_round(&mut self, global: &ParamVector, round: usize) -> Result<RoundOutcome> {
        match self.cfg.algorithm {
            Algorithm::FedAvg => self.run_round_fedavg(global, round),
            Algorithm::RingFed => self.run_round_ringfed(global, round),
            Algorithm::FedProx => self.run_round_fedprox(global, round),
            Algorithm::Scaffold => self.run_round_scaffold(global, round),
        }
    }

    pub fn run_round_fedavg(&mut self, global: &ParamVector, round: usize) -> Result<RoundOutcome> {
        let selected = self.select(round)?;
        let updates = self.train_from_global(global, &selected, round, |_| LocalObjective::Plain)?;
        let params = self.server_average(&updates)?;
        self.finish_round(params, selected, round, 0, 0)
    }

    pub fn run_round_fedprox(&mut self, global: &ParamVector, round: usize) -> Result<RoundOutcome> {
        let selected = self.select(round)?;
        let mu = self.cfg.prox_mu;
        let updates = self.train_from_global(global, &selected, round, |_| LocalObjective::Prox {
            mu,
            anchor: global,
        })?;
        let params = self.server_average(&updates)?;
        self.finish_round(params, selected, round, 0, 0)
    }

    pub fn run_round_scaffold(&mut self, global: &ParamVector, round: usize) -> Result<RoundOutcome> {
        let selected = self.select(round)?;
        let controls: Vec<ParamVector> = selected
            .iter()
            .map(|&c| self.scaffold.client_control(c).into_owned())
            .collect();
        let server_control = self.scaffold.server_control().clone();
        let updates = self.train_from_global(global, &selected, round, |i| {
            LocalObjective::Scaffold {
                server_control: &server_control,
                client_control: &controls[i],
            }
        })?;
        let (params, state) = scaffold_server_update(
            global,
            &self.scaffold,
            &updates,
            self.cfg.server_lr,
            self.cfg.total_clients,
        )?;
        self.scaffold = state;
        let control = (selected.len() + self.cfg.total_clients) as u64;
        self.finish_round(params, selected, round, 0, control)
    }

    /// Broadcast, then `P` periods of `E` local epochs with a ring exchange
    /// between consecutive periods, then upload and average.
    ///
    /// Each client's optimizer state persists across the periods of a round
    /// and epochs are numbered round-locally, so with `γ = 0` the round is
    /// indistinguishable from a FedAvg round of `P·E` epochs.
    pub fn run_round_ringfed(&mut self, global: &ParamVector, round: usize) -> Result<RoundOutcome> {
        let selected = self.select(round)?;
        let ring = self.ring_positions(&selected, round);
        let periods = self.cfg.periods;
        let mut clients = selected
            .iter()
            .map(|&c| {
                Ok(ClientRun {
                    client: c,
                    params: global.clone(),
                    opt: OptimizerState::for_round(self.cfg.optimizer, global.len(), round)?,
                    last: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut exchanges = 0;
        for p in 0..periods {
            let schedule = LocalSchedule {
                round,
                first_epoch: p * self.cfg.epochs,
                epochs: self.cfg.epochs,
                batch_size: self.cfg.batch_size,
            };
            let this = &*self;
            clients.par_iter_mut().try_for_each(|c| {
                let start = std::mem::take(&mut c.params);
                let update = local_train(
                    &this.model,
                    this.train,
                    &this.shards[c.client],
                    start,
                    &mut c.opt,
                    LocalObjective::Plain,
                    &schedule,
                )
                .map_err(|e| client_error(round, c.client, e))?;
                c.params = update.params.clone();
                c.last = Some(update);
                Ok::<_, Error>(())
            })?;

            if p + 1 < periods || self.cfg.exchange_after_final_period {
                let ordered: Vec<ParamVector> =
                    ring.iter().map(|&i| clients[i].params.clone()).collect();
                let mixed = ring_exchange(&ordered, self.cfg.gamma, self.cfg.exchange_semantics)?;
                for (&i, w) in ring.iter().zip(mixed) {
                    clients[i].params = w;
                }
                exchanges += 1;
            }
        }

        let updates: Vec<ClientUpdate> = clients
            .into_iter()
            .map(|c| {
                let mut u = c.last.ok_or_else(|| Error::internal("client never trained"))?;
                u.params = c.params;
                Ok(u)
            })
            .collect::<Result<_>>()?;
        let params = self.server_average(&updates)?;
        let peer = (selected.len() * exchanges) as u64;
        self.finish_round(params, selected, round, peer, 0)
    }

    /// Evaluates the initial model, then runs every round.
    pub fn run(&mut self) -> Result<MetricsLog> {
        let mut global = self.initial_params();
        let mut log = MetricsLog::new();
        let (acc, loss) = self.evaluate(&global)?;
        log.push(MetricsRecord {
            round: 0,
            test_accuracy: acc,
            test_loss: loss,
            uplink_units: self.ledger.uplink_units,
            downlink_units: self.ledger.downlink_units,
            peer_units: self.ledger.peer_units,
        })?;
        for t in 0..self.cfg.rounds {
            let outcome = self.run_round(&global, t)?;
            info!(
                "{} round {}/{}: accuracy {:.4}, loss {:.4}",
                self.cfg.algorithm,
                t + 1,
                self.cfg.rounds,
                outcome.record.test_accuracy,
                outcome.record.test_loss
            );
            global = outcome.params;
            log.push(outcome.record)?;
        }
        Ok(log)
    }

    /// Positions into `selected` in ring order.
    fn ring_positions(&self, selected: &[usize], round: usize) -> Vec<usize> {
        let mut ring: Vec<usize> = (0..selected.len()).collect();
        if self.cfg.ring_order == RingOrder::Shuffled {
            let mut rng =
                seed::rng_from(seed::derive_seed(self.cfg.seed, &[tag::RING, round as u64]));
            ring.shuffle(&mut rng);
        }
        ring
    }

    fn train_from_global<'o, F>(
        &self,
        global: &ParamVector,
        selected: &[usize],
        round: usize,
        objective: F,
    ) -> Result<Vec<ClientUpdate>>
    where
        F: Fn(usize) -> LocalObjective<'o> + Sync,
    {
        let schedule = LocalSchedule {
            round,
            first_epoch: 0,
            epochs: self.cfg.epochs,
            batch_size: self.cfg.batch_size,
        };
        selected
            .par_iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut opt = OptimizerState::for_round(self.cfg.optimizer, global.len(), round)?;
                local_train(
                    &self.model,
                    self.train,
                    &self.shards[c],
                    global.clone(),
                    &mut opt,
                    objective(i),
                    &schedule,
                )
                .map_err(|e| client_error(round, c, e))
            })
            .collect()
    }

    fn server_average(&self, updates: &[ClientUpdate]) -> Result<ParamVector> {
        if self.cfg.weighted_average && updates.iter().any(|u| u.num_examples > 0) {
            weighted_aggregate(updates)
        } else {
            fedavg_aggregate(updates)
        }
    }

    fn finish_round(
        &mut self,
        params: ParamVector,
        selected: Vec<usize>,
        round: usize,
        peer_units: u64,
        control_units: u64,
    ) -> Result<RoundOutcome> {
        let comm = CommLedger {
            uplink_units: selected.len() as u64,
            downlink_units: self.cfg.total_clients as u64,
            peer_units,
            control_units,
        };
        self.ledger.add(&comm);
        let (acc, loss) = self.evaluate(&params)?;
        debug!("round {round}: selected {selected:?}");
        Ok(RoundOutcome {
            params,
            selected,
            comm,
            record: MetricsRecord {
                round: round + 1,
                test_accuracy: acc,
                test_loss: loss,
                uplink_units: self.ledger.uplink_units,
                downlink_units: self.ledger.downlink_units,
                peer_units: self.ledger.peer_units,
            },
        })
    }
}

struct ClientRun {
    client: usize,
    params: ParamVector,
    opt: OptimizerState,
    last: Option<ClientUpdate>,
}

fn client_error(round: usize, client: usize, source: Error) -> Error {
    Error::Client {
        round,
        client,
        source: Box::new(source),
    }
}

/// Accuracy and mean cross-entropy of `params` on `data`.
///
/// Chunk sums are reduced serially in chunk order, so the result does not
/// depend on the thread count.
pub fn evaluate(model: &Model, data: &Dataset, params: &ParamVector) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::config("cannot evaluate on an empty test set"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let parts = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let batch = data.batch(chunk)?;
            let (loss, correct) = model.forward_loss(params, &batch)?;
            Ok((loss * chunk.len() as f64, correct))
        })
        .collect::<Result<Vec<_>>>()?;
    let (loss_sum, correct) = parts
        .into_iter()
        .fold((0.0, 0), |(l, c), (pl, pc)| (l + pl, c + pc));
    let n = data.len() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

/// Partitions, trains for `cfg.rounds` rounds and returns the metrics log.
pub fn run_experiment(cfg: &RunConfig, train: &Dataset, test: &Dataset) -> Result<MetricsLog> {
    Simulator::new(cfg.clone(), train, test)?.run()
}
