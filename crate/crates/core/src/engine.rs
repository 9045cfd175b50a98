//! The asynchronous round loop: local phases with a random number of steps
//! per client, random pairwise model exchange, persistent dropout injection
//! at a configured round, mitigation strategy dispatch, early stopping, and
//! per-round metric capture.

use crate::datahub::{DataError, Dataset, FoldPlan, PartitionScheme, Silo};
use crate::diffmath::{DiffMathError, Matrix, ParamVec};
use crate::fedalgos::{
    dfedavgm_local_step, dfedavgm_mix, djam_local_step, draw_probes, exchange, fsr_local_step,
    AlgoKind, ClientState, CommGraph, FedError,
};
use crate::models::{correct_count, init_model, param_l2_distance, Model, ModelSpec};
use crate::recon::{
    make_virtual_client, model_inversion, pseudo_gradient, random_data, run_gradient_inversion,
    DistanceChoice, ReconConfig, ReconError, SyntheticSilo,
};
use crate::seeds;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("state error: {0}")]
    State(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("reconstruction unavailable: {0}")]
    ReconstructionUnavailable(String),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    Math(#[from] DiffMathError),
}

/// Dropout mitigation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// No dropout is injected at all.
    Reference,
    /// Keep the frozen last copy; exchanges with the dead client are no-ops.
    NoAction,
    /// Forget the client: prune the graph and delete cached copies.
    Drop,
    /// Virtual client on uniformly random data.
    Random,
    /// Virtual client on gradient-inversion reconstructions.
    GradientInversion,
    /// Virtual client on model-inversion reconstructions.
    ModelInversion,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Reference,
        StrategyKind::NoAction,
        StrategyKind::Drop,
        StrategyKind::Random,
        StrategyKind::GradientInversion,
        StrategyKind::ModelInversion,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Reference => "reference",
            StrategyKind::NoAction => "no-action",
            StrategyKind::Drop => "drop",
            StrategyKind::Random => "random",
            StrategyKind::GradientInversion => "gradient-inversion",
            StrategyKind::ModelInversion => "model-inversion",
        }
    }

    pub fn parse(name: &str) -> Option<StrategyKind> {
        StrategyKind::ALL.iter().copied().find(|s| s.name() == name)
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(
            self,
            StrategyKind::Random | StrategyKind::GradientInversion | StrategyKind::ModelInversion
        )
    }
}

/// Which client dies at the dropout round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DropoutClient {
    /// Seeded uniform pick, shared across strategies of one cell.
    Random,
    Fixed(usize),
}

/// Federation shape and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: usize,
    /// k: pairs exchanged per round.
    pub pairs_per_round: usize,
    pub local_steps_min: usize,
    pub local_steps_max: usize,
    /// When set, local step counts are drawn from this explicit set instead
    /// of the inclusive min..=max range.
    pub local_steps_set: Option<Vec<usize>>,
    pub dropout_round: usize,
    pub dropout_client: DropoutClient,
    /// None: full-silo batches. Some(b): per-step mini-batches of size b.
    pub batch_size: Option<usize>,
    /// Rounds to ignore before the early-stop window may fire. Consensus-
    /// heavy algorithms (DJAM, FSR) pass through an all-clients-equal
    /// accuracy transient early in training that would otherwise trigger a
    /// spurious stop; 0 applies the stopping rule from round 10 on.
    pub early_stop_warmup: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            clients: 3,
            rounds: 200,
            pairs_per_round: 2,
            local_steps_min: 5,
            local_steps_max: 10,
            local_steps_set: None,
            dropout_round: 5,
            dropout_client: DropoutClient::Random,
            batch_size: None,
            early_stop_warmup: 0,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.clients < 2 {
            return Err(EngineError::State("need at least two clients".into()));
        }
        if self.pairs_per_round < 1 {
            return Err(EngineError::State("pairs_per_round must be >= 1".into()));
        }
        if self.dropout_round >= self.rounds {
            return Err(EngineError::State(format!(
                "dropout round {} must precede the round cap {}",
                self.dropout_round, self.rounds
            )));
        }
        if self.local_steps_min < 1 || self.local_steps_min > self.local_steps_max {
            return Err(EngineError::State("invalid local step range".into()));
        }
        if let Some(set) = &self.local_steps_set {
            if set.is_empty() {
                return Err(EngineError::State("empty local step set".into()));
            }
        }
        if let DropoutClient::Fixed(id) = self.dropout_client {
            if id >= self.clients {
                return Err(EngineError::State(format!(
                    "fixed dropout client {id} out of range"
                )));
            }
        }
        Ok(())
    }
}

/// One executed round's record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Client ids in the accuracy tracking set for this round.
    pub tracked: Vec<usize>,
    /// Correct predictions per tracked client on the shared test fold.
    pub correct_counts: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Pairwise parameter L2 distances over tracked clients.
    pub pair_distances: Vec<(usize, usize, f64)>,
    pub mean_pair_distance: f64,
    pub selected_pairs: Vec<(usize, usize)>,
    /// Selected pairs that were no-ops because they touched a dead client.
    pub skipped_pairs: Vec<(usize, usize)>,
    pub local_steps: Vec<(usize, usize)>,
    pub active_clients: usize,
    /// Client id if dropout was injected this round.
    pub dropout: Option<usize>,
}

/// The two most recent parameter vectors a client broadcast, used as the
/// attack's snapshot pair. The engine saves this at dropout time so the
/// attack can be replayed offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotPair {
    pub model: ModelSpec,
    pub snap_prev: Vec<f64>,
    pub snap_last: Vec<f64>,
    pub nominal_lr: f64,
    pub grid_shape: Option<(usize, usize)>,
    pub dead_client: usize,
    pub dropout_round: usize,
}

impl SnapshotPair {
    pub fn prev_params(&self) -> ParamVec {
        ParamVec::new(self.snap_prev.clone(), self.model.layer_shapes())
    }

    pub fn last_params(&self) -> ParamVec {
        ParamVec::new(self.snap_last.clone(), self.model.layer_shapes())
    }
}

/// Everything one experiment run needs besides the data.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub fed: FederationConfig,
    pub algo: AlgoKind,
    pub strategy: StrategyKind,
    pub recon: ReconConfig,
    pub model: ModelSpec,
    pub scheme: PartitionScheme,
    pub master_seed: u64,
}

/// Result of one (cell, fold) experiment.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub logs: Vec<RoundLog>,
    pub recon_silo: Option<SyntheticSilo>,
    pub snapshot_pair: Option<SnapshotPair>,
    pub early_stopped_at: Option<usize>,
    /// Non-fatal warnings raised during the run (e.g. a degenerate
    /// pseudo-gradient target).
    pub notes: Vec<String>,
}

/// Broadcast snapshot history: the last two *distinct* parameter vectors a
/// client sent out. Consecutive duplicate broadcasts (a client selected for
/// two pairs in one round) carry no new information and are not recorded.
#[derive(Debug, Clone, Default)]
struct SnapshotHistory {
    prev: Option<ParamVec>,
    last: Option<ParamVec>,
}

impl SnapshotHistory {
    fn record(&mut self, params: &ParamVec) {
        if self.last.as_ref() == Some(params) {
            return;
        }
        self.prev = self.last.take();
        self.last = Some(params.clone());
    }
}

/// A running federation: graph, clients, RNG streams, strategy, event log.
pub struct FederationRun {
    pub fed: FederationConfig,
    pub algo: AlgoKind,
    pub strategy: StrategyKind,
    pub recon_cfg: ReconConfig,
    pub graph: CommGraph,
    pub clients: Vec<ClientState>,
    pub round: usize,
    pub logs: Vec<RoundLog>,
    pub dropout: Option<(usize, usize)>,
    pub recon_silo: Option<SyntheticSilo>,
    pub snapshot_pair: Option<SnapshotPair>,
    pub notes: Vec<String>,
    test_x: Matrix,
    test_y: Vec<usize>,
    grid_shape: Option<(usize, usize)>,
    rounds_rng: ChaCha8Rng,
    recon_rng: ChaCha8Rng,
    dropout_pick: usize,
    snapshots: Vec<SnapshotHistory>,
}

impl FederationRun {
    /// Builds the initial federation: seeded per-client models, the fully
    /// connected graph, and the round-0 full broadcast that populates every
    /// neighbor cache.
    pub fn new(
        spec: &RunSpec,
        fold: u64,
        silos: Vec<Silo>,
        test_x: Matrix,
        test_y: Vec<usize>,
        grid_shape: Option<(usize, usize)>,
    ) -> Result<FederationRun, EngineError> {
        spec.fed.validate()?;
        spec.algo.validate()?;
        let m = spec.fed.clients;
        if silos.len() != m {
            return Err(EngineError::State(format!(
                "{} silos for {m} clients",
                silos.len()
            )));
        }
        let graph = CommGraph::fully_connected(m);
        let mut clients: Vec<ClientState> = silos
            .into_iter()
            .enumerate()
            .map(|(i, silo)| {
                let model = init_model(
                    &spec.model,
                    seeds::derive_seed(spec.master_seed, fold, "init", i as u64),
                );
                ClientState::new(i, model, silo, &spec.algo)
            })
            .collect();

        // Round-0 full broadcast.
        let mut snapshots = vec![SnapshotHistory::default(); m];
        for i in 0..m {
            let params = clients[i].model.params.clone();
            snapshots[i].record(&params);
            for j in graph.neighbors(i).collect::<Vec<_>>() {
                clients[j].neighbor_cache.insert(i, params.clone());
            }
        }

        let dropout_pick = match spec.fed.dropout_client {
            DropoutClient::Fixed(id) => id,
            DropoutClient::Random => {
                let mut rng = seeds::stream(spec.master_seed, fold, "dropout");
                rng.random_range(0..m)
            }
        };

        Ok(FederationRun {
            fed: spec.fed.clone(),
            algo: spec.algo.clone(),
            strategy: spec.strategy,
            recon_cfg: spec.recon.clone(),
            graph,
            clients,
            round: 0,
            logs: Vec::new(),
            dropout: None,
            recon_silo: None,
            snapshot_pair: None,
            notes: Vec::new(),
            test_x,
            test_y,
            grid_shape,
            rounds_rng: seeds::stream(spec.master_seed, fold, "rounds"),
            recon_rng: seeds::stream(spec.master_seed, fold, "recon"),
            dropout_pick,
            snapshots,
        })
    }

    /// Clients whose models enter the round metrics: the drop strategy
    /// tracks only survivors, everything else tracks every slot (the frozen
    /// model under no-action, the virtual client for adaptive strategies).
    pub fn tracked_clients(&self) -> Vec<usize> {
        match (self.strategy, self.dropout) {
            (StrategyKind::Drop, Some((dead, _))) => {
                (0..self.fed.clients).filter(|&i| i != dead).collect()
            }
            _ => (0..self.fed.clients).collect(),
        }
    }

    fn sample_local_steps(&mut self) -> usize {
        match &self.fed.local_steps_set {
            Some(set) => set[self.rounds_rng.random_range(0..set.len())],
            None => self
                .rounds_rng
                .random_range(self.fed.local_steps_min..=self.fed.local_steps_max),
        }
    }

    /// Draws one training batch for a client. Full silo when no batch size
    /// is configured (or the silo is smaller), otherwise a uniform subset
    /// without replacement.
    fn draw_batch(&mut self, id: usize) -> Result<(Matrix, Vec<usize>), EngineError> {
        let train = &self.clients[id].silo()?.train;
        let n = train.len();
        match self.fed.batch_size {
            Some(b) if b < n => {
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..b {
                    let j = self.rounds_rng.random_range(i..n);
                    idx.swap(i, j);
                }
                idx.truncate(b);
                let x = train.x.select_rows(&idx);
                let y = idx.iter().map(|&i| train.y[i]).collect();
                Ok((x, y))
            }
            _ => Ok((train.x.clone(), train.y.clone())),
        }
    }

    fn local_phase(&mut self, id: usize) -> Result<usize, EngineError> {
        let steps = self.sample_local_steps();
        self.clients[id].begin_local_phase();
        let graph_row = self.graph.row(id).to_vec();
        match self.algo.clone() {
            AlgoKind::DFedAvgM { .. } => {
                dfedavgm_mix(&mut self.clients[id], &graph_row);
                for _ in 0..steps {
                    let (x, y) = self.draw_batch(id)?;
                    dfedavgm_local_step(&mut self.clients[id], &x, &y)?;
                }
            }
            AlgoKind::Djam { .. } => {
                for _ in 0..steps {
                    let (x, y) = self.draw_batch(id)?;
                    djam_local_step(&mut self.clients[id], &graph_row, &x, &y)?;
                }
            }
            AlgoKind::Fsr {
                omega,
                lambda,
                probes,
                discrepancy,
                ..
            } => {
                let dim = self.clients[id].model.spec.input_dim;
                for _ in 0..steps {
                    let (x, y) = self.draw_batch(id)?;
                    let probe_points = draw_probes(&mut self.rounds_rng, probes, dim);
                    fsr_local_step(
                        &mut self.clients[id],
                        &graph_row,
                        &x,
                        &y,
                        &probe_points,
                        omega,
                        lambda,
                        discrepancy,
                    )?;
                }
            }
        }
        Ok(steps)
    }

    /// Selects `k` distinct edges uniformly from the eligible set.
    fn select_pairs(&mut self) -> Result<Vec<(usize, usize)>, EngineError> {
        let mut eligible = self.graph.edges();
        if eligible.is_empty() {
            return Err(EngineError::Protocol(
                "no eligible edges for model exchange".into(),
            ));
        }
        let k = self.fed.pairs_per_round.min(eligible.len());
        for i in 0..k {
            let j = self.rounds_rng.random_range(i..eligible.len());
            eligible.swap(i, j);
        }
        eligible.truncate(k);
        Ok(eligible)
    }

    /// Marks the configured client dead at the dropout boundary: the silo is
    /// revoked (its data is gone for every subsequent operation) and the
    /// mitigation strategy handler runs.
    pub fn inject_dropout(&mut self) -> Result<usize, EngineError> {
        if self.strategy == StrategyKind::Reference {
            return Err(EngineError::State(
                "reference runs never inject dropout".into(),
            ));
        }
        if self.dropout.is_some() {
            return Err(EngineError::State("dropout already injected".into()));
        }
        let dead = self.dropout_pick;
        self.clients[dead].alive = false;
        self.clients[dead].revoke_silo();
        self.dropout = Some((dead, self.round));
        self.apply_strategy(dead)?;
        Ok(dead)
    }

    /// Strategy dispatch right after injection.
    pub fn apply_strategy(&mut self, dead: usize) -> Result<(), EngineError> {
        match self.strategy {
            StrategyKind::Reference => unreachable!("reference never injects"),
            StrategyKind::NoAction => {
                // Survivors keep their frozen cached copy; the graph keeps the
                // dead client's edges, and selected pairs touching it no-op.
            }
            StrategyKind::Drop => {
                self.graph.remove_client(dead);
                for c in self.clients.iter_mut() {
                    c.neighbor_cache.remove(&dead);
                }
            }
            StrategyKind::Random
            | StrategyKind::GradientInversion
            | StrategyKind::ModelInversion => {
                let silo = self.reconstruct(dead)?;
                let theta_last = self.snapshots[dead]
                    .last
                    .clone()
                    .ok_or_else(|| EngineError::State("dead client never broadcast".into()))?;
                let mut virtual_client = make_virtual_client(
                    dead,
                    theta_last,
                    &self.clients[dead].model.spec.clone(),
                    &silo,
                    &self.algo,
                    self.fed.batch_size,
                    &mut self.recon_rng,
                )?;
                // Welcome broadcast: the new client starts from the
                // survivors' current models, like any joining client.
                for j in self.graph.neighbors(dead).collect::<Vec<_>>() {
                    virtual_client
                        .neighbor_cache
                        .insert(j, self.clients[j].model.params.clone());
                }
                self.recon_silo = Some(silo);
                self.clients[dead] = virtual_client;
            }
        }
        Ok(())
    }

    /// Runs the configured reconstruction attack from the dead client's
    /// broadcast snapshots only.
    fn reconstruct(&mut self, dead: usize) -> Result<SyntheticSilo, EngineError> {
        debug_assert!(!self.clients[dead].has_silo(), "attack with live silo");
        let spec = self.clients[dead].model.spec.clone();
        let d = spec.input_dim;
        let c = spec.num_classes;
        match self.strategy {
            StrategyKind::Random => Ok(random_data(
                d,
                c,
                self.recon_cfg.n_points,
                self.grid_shape,
                &mut self.recon_rng,
            )),
            StrategyKind::ModelInversion => {
                let theta_last = self.snapshots[dead]
                    .last
                    .clone()
                    .ok_or_else(|| EngineError::State("dead client never broadcast".into()))?;
                self.save_snapshot_pair(dead, &spec);
                let model = Model {
                    spec,
                    params: theta_last,
                };
                Ok(model_inversion(
                    &model,
                    &self.recon_cfg,
                    self.grid_shape,
                    &mut self.recon_rng,
                )?)
            }
            StrategyKind::GradientInversion => {
                let (prev, last) = match (&self.snapshots[dead].prev, &self.snapshots[dead].last) {
                    (Some(p), Some(l)) => (p.clone(), l.clone()),
                    _ => {
                        return Err(EngineError::ReconstructionUnavailable(format!(
                            "client {dead} has fewer than two recorded snapshots"
                        )))
                    }
                };
                self.save_snapshot_pair(dead, &spec);
                let lr = self
                    .recon_cfg
                    .pseudo_grad_lr
                    .unwrap_or_else(|| self.algo.nominal_lr());
                let pg = pseudo_gradient(&prev, &last, lr)?;
                // The synthetic gradient is matched at the earlier snapshot,
                // where the observed update direction originated; a zero
                // update forces the L2 variant (cosine is undefined).
                let model = Model { spec, params: prev };
                let cfg = if pg.degenerate && self.recon_cfg.gi.distance != DistanceChoice::L2 {
                    self.notes.push(format!(
                        "client {dead}: identical snapshots give a zero gradient target; forcing the L2 variant"
                    ));
                    let mut cfg = self.recon_cfg.clone();
                    cfg.gi.distance = DistanceChoice::L2;
                    cfg
                } else {
                    if pg.degenerate {
                        self.notes.push(format!(
                            "client {dead}: identical snapshots give a zero gradient target"
                        ));
                    }
                    self.recon_cfg.clone()
                };
                Ok(run_gradient_inversion(
                    &model,
                    &pg.grad,
                    &cfg,
                    self.grid_shape,
                    &mut self.recon_rng,
                )?)
            }
            _ => Err(EngineError::State(
                "reconstruct called for a non-adaptive strategy".into(),
            )),
        }
    }

    fn save_snapshot_pair(&mut self, dead: usize, spec: &ModelSpec) {
        if let (Some(prev), Some(last)) = (&self.snapshots[dead].prev, &self.snapshots[dead].last) {
            self.snapshot_pair = Some(SnapshotPair {
                model: spec.clone(),
                snap_prev: prev.as_slice().to_vec(),
                snap_last: last.as_slice().to_vec(),
                nominal_lr: self
                    .recon_cfg
                    .pseudo_grad_lr
                    .unwrap_or_else(|| self.algo.nominal_lr()),
                grid_shape: self.grid_shape,
                dead_client: dead,
                dropout_round: self.fed.dropout_round,
            });
        }
    }

    /// Executes one communication round: dropout boundary check, local
    /// phases for every alive client, pair selection, exchanges, logging.
    pub fn run_round(&mut self) -> Result<(), EngineError> {
        if self.round >= self.fed.rounds {
            return Err(EngineError::State("run already finished".into()));
        }
        self.round += 1;

        let mut dropped_now = None;
        if self.strategy != StrategyKind::Reference
            && self.dropout.is_none()
            && self.round == self.fed.dropout_round
        {
            dropped_now = Some(self.inject_dropout()?);
        }

        let mut local_steps = Vec::new();
        for id in 0..self.fed.clients {
            if self.clients[id].alive {
                let steps = self.local_phase(id)?;
                local_steps.push((id, steps));
            }
        }

        let selected = self.select_pairs()?;
        let mut skipped = Vec::new();
        for &(a, b) in &selected {
            if !self.clients[a].alive || !self.clients[b].alive {
                // "no model exchange occurs" for rounds involving the dead
                // client under no-action.
                skipped.push((a, b));
                continue;
            }
            let (low, high) = self.clients.split_at_mut(b);
            exchange(&mut low[a], &mut high[0], &self.graph)?;
            let pa = self.clients[a].model.params.clone();
            self.snapshots[a].record(&pa);
            let pb = self.clients[b].model.params.clone();
            self.snapshots[b].record(&pb);
        }

        self.append_log(selected, skipped, local_steps, dropped_now)?;
        Ok(())
    }

    fn append_log(
        &mut self,
        selected_pairs: Vec<(usize, usize)>,
        skipped_pairs: Vec<(usize, usize)>,
        local_steps: Vec<(usize, usize)>,
        dropout: Option<usize>,
    ) -> Result<(), EngineError> {
        let tracked = self.tracked_clients();
        let mut correct_counts = Vec::with_capacity(tracked.len());
        let mut accuracies = Vec::with_capacity(tracked.len());
        for &id in &tracked {
            let correct = correct_count(&self.clients[id].model, &self.test_x, &self.test_y)?;
            correct_counts.push(correct);
            accuracies.push(correct as f64 / self.test_y.len() as f64);
        }
        let mean_accuracy = accuracies.iter().sum::<f64>() / accuracies.len() as f64;

        let mut pair_distances = Vec::new();
        for i in 0..tracked.len() {
            for j in (i + 1)..tracked.len() {
                let d = param_l2_distance(
                    &self.clients[tracked[i]].model.params,
                    &self.clients[tracked[j]].model.params,
                )?;
                pair_distances.push((tracked[i], tracked[j], d));
            }
        }
        let mean_pair_distance = if pair_distances.is_empty() {
            0.0
        } else {
            pair_distances.iter().map(|(_, _, d)| d).sum::<f64>() / pair_distances.len() as f64
        };

        let active_clients = self.clients.iter().filter(|c| c.alive).count();
        self.logs.push(RoundLog {
            round: self.round,
            tracked,
            correct_counts,
            accuracies,
            mean_accuracy,
            pair_distances,
            mean_pair_distance,
            selected_pairs,
            skipped_pairs,
            local_steps,
            active_clients,
            dropout,
        });
        Ok(())
    }

    /// Early stopping: all tracked clients report the exact same
    /// correct-count on the shared test fold for each of the last 10 rounds.
    pub fn early_stop(&self) -> bool {
        const WINDOW: usize = 10;
        if self.logs.len() < WINDOW {
            return false;
        }
        let window = &self.logs[self.logs.len() - WINDOW..];
        if window[0].round <= self.fed.early_stop_warmup {
            return false;
        }
        window
            .iter()
            .all(|log| log.correct_counts.windows(2).all(|w| w[0] == w[1]))
    }
}

/// Runs one full experiment: silos from the 9 training folds, rounds until
/// the cap or early stop, complete log returned.
pub fn run_experiment(
    ds: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    spec: &RunSpec,
) -> Result<ExperimentResult, EngineError> {
    let test_idx = plan.test_indices(fold);
    let train_idx = plan.train_indices(fold);
    if test_idx.is_empty() || train_idx.is_empty() {
        return Err(EngineError::State(format!("fold {fold} is degenerate")));
    }
    let train_ds = ds.subset(&train_idx);
    let test_ds = ds.subset(&test_idx);

    let silos = crate::datahub::partition(
        &train_ds,
        spec.scheme,
        spec.fed.clients,
        seeds::derive_seed(spec.master_seed, fold as u64, "partition", 0),
    )?;

    let mut run = FederationRun::new(
        spec,
        fold as u64,
        silos,
        test_ds.x,
        test_ds.y,
        ds.grid_shape,
    )?;

    let mut early_stopped_at = None;
    for _ in 0..spec.fed.rounds {
        run.run_round()?;
        if run.early_stop() {
            early_stopped_at = Some(run.round);
            break;
        }
    }

    Ok(ExperimentResult {
        logs: run.logs,
        recon_silo: run.recon_silo,
        snapshot_pair: run.snapshot_pair,
        early_stopped_at,
        notes: run.notes,
    })
}
