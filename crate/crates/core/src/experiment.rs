//! Experiment orchestration: configuration, initialization, the outer round
//! loop, scheduled evaluation, and the metrics series.
//!
//! An experiment is a pure function of `(train set, test set, SimConfig)`:
//! all clients start from one shared seeded initialization, every stream is
//! derived from the configured seed, and re-running produces bit-identical
//! metrics. `SimState` exposes all mutable state so the companion crate can
//! checkpoint after any round and resume exactly.

use alloc::vec::Vec;

use crate::baselines::{fedavg_round, local_only_round, AblationFlags, BaselineConfig, ClassifierClient};
use crate::data::{partition, subsample, LabeledDataset, PartitionPlan, PartitionScheme, Shard};
use crate::error::{Error, Result};
use crate::eval::{evaluate, evaluate_subset, summarize, Summary};
use crate::gan::{init_triplet, DistillConfig, OptimizerConfig, TripletSpecs, TripletState};
use crate::net::Activation;
use crate::optim::OptimizerState;
use crate::protocol::{
    map_clients, run_round, CommLedger, KindCounts, LeaveOneOut, ProtocolConfig, RoundRecord,
    ServerState,
};
use crate::rng::{self, Stage};

/// Which training protocol drives the rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// The co-distillation protocol; `AblationFlags::default()` is the full
    /// method.
    FedDtg(AblationFlags),
    FedAvg,
    FedProx,
    LocalOnly,
}

impl Algorithm {
    fn uses_triplets(&self) -> bool {
        matches!(self, Algorithm::FedDtg(_))
    }
}

/// Full experiment configuration. The companion crate validates user input
/// exhaustively; this type re-checks the essentials.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub algorithm: Algorithm,
    pub clients: usize,
    pub frac: f64,
    pub rounds: u64,
    pub batch_size: usize,
    pub z_dim: usize,
    pub hidden_g: Vec<usize>,
    pub hidden_d: Vec<usize>,
    pub hidden_c: Vec<usize>,
    pub hidden_activation: Activation,
    pub optimizer: OptimizerConfig,
    pub local_epochs: usize,
    pub distill: DistillConfig,
    pub distill_passes: usize,
    pub leave_one_out: LeaveOneOut,
    pub fedprox_mu: f64,
    pub partition: PartitionScheme,
    /// Stratified subsampling ratio applied to the training set.
    pub ratio: f64,
    pub seed: u64,
    /// Evaluate after every `eval_every` rounds (round 0 always).
    pub eval_every: u64,
    /// Also evaluate each client on its own test shard, partitioned with the
    /// same plan as training.
    pub eval_local: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::invalid("sim config", "clients must be >= 1"));
        }
        if !(self.frac > 0.0 && self.frac <= 1.0) {
            return Err(Error::invalid("sim config", "frac must be in (0, 1]"));
        }
        if self.batch_size == 0 || self.local_epochs == 0 || self.distill_passes == 0 {
            return Err(Error::invalid(
                "sim config",
                "batch_size, local_epochs, distill_passes must be >= 1",
            ));
        }
        if self.z_dim == 0 {
            return Err(Error::invalid("sim config", "z_dim must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("sim config", "eval_every must be >= 1"));
        }
        if !(self.fedprox_mu >= 0.0) {
            return Err(Error::invalid("sim config", "fedprox_mu must be >= 0"));
        }
        self.distill.validate()?;
        self.partition_plan().validate()
    }

    pub fn partition_plan(&self) -> PartitionPlan {
        PartitionPlan {
            scheme: self.partition,
            clients: self.clients,
            ratio: self.ratio,
            seed: self.seed,
        }
    }

    fn protocol_config(&self, flags: AblationFlags) -> ProtocolConfig {
        ProtocolConfig {
            frac: self.frac,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
            distill: self.distill,
            distill_passes: self.distill_passes,
            leave_one_out: self.leave_one_out,
            flags,
        }
    }

    fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            fedprox_mu: self.fedprox_mu,
        }
    }
}

/// Algorithm-specific mutable state.
#[derive(Debug, Clone, PartialEq)]
pub enum AlgoState {
    Triplets {
        server: ServerState,
        clients: Vec<TripletState>,
    },
    Classifiers {
        global: crate::net::ParamVector,
        clients: Vec<ClassifierClient>,
    },
}

/// One evaluation point of the metrics series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub round: u64,
    pub per_client_acc: Vec<f64>,
    pub summary: Summary,
    /// Per-client accuracy on that client's own test shard.
    pub local_acc: Option<Vec<f64>>,
    /// Accuracy of the server-side global classifier (FedAvg/FedProx only).
    pub global_acc: Option<f64>,
    pub mean_d_loss: Option<f64>,
    pub mean_g_loss: Option<f64>,
    pub mean_c_loss: Option<f64>,
    pub mean_distill_loss: Option<f64>,
    pub cum_uplink: KindCounts,
    pub cum_downlink: KindCounts,
}

/// All mutable simulation state plus the immutable per-run derived data.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub round: u64,
    pub algo: AlgoState,
    pub ledger: CommLedger,
    pub specs: TripletSpecs,
    /// The subsampled working training set.
    pub train: LabeledDataset,
    pub shards: Vec<Shard>,
    /// Test-set shards for per-client local evaluation.
    pub test_shards: Option<Vec<Shard>>,
    pub metrics: Vec<MetricsRecord>,
    pub rounds_log: Vec<RoundRecord>,
}

impl SimState {
    /// Partitions data and initializes all clients from one shared seeded
    /// draw, so round-0 aggregation is meaningful and the classifier start
    /// point is identical across algorithms under the same seed.
    pub fn init(
        train_full: &LabeledDataset,
        test: &LabeledDataset,
        cfg: &SimConfig,
    ) -> Result<SimState> {
        cfg.validate()?;
        if test.sample_dim() != train_full.sample_dim() {
            return Err(Error::ShapeMismatch {
                context: "experiment: test sample width",
                expected: alloc::vec![train_full.sample_dim()],
                found: alloc::vec![test.sample_dim()],
            });
        }
        let n_classes = train_full.n_classes().max(test.n_classes());
        let specs = TripletSpecs::with_hidden_activation(
            train_full.sample_dim(),
            n_classes,
            cfg.z_dim,
            &cfg.hidden_g,
            &cfg.hidden_d,
            &cfg.hidden_c,
            cfg.hidden_activation,
        )?;

        let train = subsample(train_full, cfg.ratio, cfg.seed)?;
        let shards = partition(&train, &cfg.partition_plan())?;
        let test_shards = if cfg.eval_local {
            let mut plan = cfg.partition_plan();
            plan.ratio = 1.0;
            Some(partition(test, &plan)?)
        } else {
            None
        };

        let mut init_stream = rng::setup_stream(cfg.seed, Stage::Init);
        let template = init_triplet(&specs, 0, &cfg.optimizer, &mut init_stream)?;

        let algo = if cfg.algorithm.uses_triplets() {
            let clients: Vec<TripletState> = (0..cfg.clients)
                .map(|client_id| {
                    let mut c = template.clone();
                    c.client_id = client_id;
                    c
                })
                .collect();
            AlgoState::Triplets {
                server: ServerState {
                    round: 0,
                    theta_g: template.generator.clone(),
                    theta_d: template.discriminator.clone(),
                    seed: cfg.seed,
                },
                clients,
            }
        } else {
            let clients: Vec<ClassifierClient> = (0..cfg.clients)
                .map(|client_id| {
                    Ok(ClassifierClient {
                        client_id,
                        classifier: template.classifier.clone(),
                        opt: OptimizerState::new(
                            cfg.optimizer.rule,
                            cfg.optimizer.lr_c,
                            specs.classifier.param_count(),
                        )?,
                    })
                })
                .collect::<Result<_>>()?;
            AlgoState::Classifiers {
                global: template.classifier.clone(),
                clients,
            }
        };

        Ok(SimState {
            round: 0,
            algo,
            ledger: CommLedger::new(cfg.clients),
            specs,
            train,
            shards,
            test_shards,
            metrics: Vec::new(),
            rounds_log: Vec::new(),
        })
    }

    /// Runs the next round and appends its record.
    pub fn step_round(&mut self, cfg: &SimConfig) -> Result<&RoundRecord> {
        let next = self.round + 1;
        let record = match (&mut self.algo, cfg.algorithm) {
            (AlgoState::Triplets { server, clients }, Algorithm::FedDtg(flags)) => {
                debug_assert_eq!(server.round, self.round);
                run_round(
                    &self.specs,
                    server,
                    clients,
                    &self.shards,
                    &self.train,
                    &cfg.protocol_config(flags),
                    &mut self.ledger,
                )?
            }
            (AlgoState::Classifiers { global, clients }, Algorithm::FedAvg) => fedavg_round(
                &self.specs.classifier,
                global,
                clients,
                &self.shards,
                &self.train,
                &cfg.baseline_config(),
                cfg.frac,
                0.0,
                cfg.seed,
                next,
                &mut self.ledger,
            )?,
            (AlgoState::Classifiers { global, clients }, Algorithm::FedProx) => fedavg_round(
                &self.specs.classifier,
                global,
                clients,
                &self.shards,
                &self.train,
                &cfg.baseline_config(),
                cfg.frac,
                cfg.fedprox_mu,
                cfg.seed,
                next,
                &mut self.ledger,
            )?,
            (AlgoState::Classifiers { clients, .. }, Algorithm::LocalOnly) => local_only_round(
                &self.specs.classifier,
                clients,
                &self.shards,
                &self.train,
                &cfg.baseline_config(),
                cfg.seed,
                next,
            )?,
            _ => {
                return Err(Error::protocol(
                    "experiment",
                    "state does not match the configured algorithm",
                ))
            }
        };
        self.round = next;
        self.rounds_log.push(record);
        Ok(self.rounds_log.last().expect("just pushed"))
    }

    fn client_classifiers(&self) -> Vec<(usize, &crate::net::ParamVector)> {
        match &self.algo {
            AlgoState::Triplets { clients, .. } => clients
                .iter()
                .map(|c| (c.client_id, &c.classifier))
                .collect(),
            AlgoState::Classifiers { clients, .. } => clients
                .iter()
                .map(|c| (c.client_id, &c.classifier))
                .collect(),
        }
    }

    /// Evaluates every client on the full test set (and optionally on its
    /// local shard) and appends a metrics record.
    pub fn evaluate_now(&mut self, test: &LabeledDataset, cfg: &SimConfig) -> Result<&MetricsRecord> {
        let spec = &self.specs.classifier;
        let classifiers = self.client_classifiers();
        let accs: Vec<Result<f64>> =
            map_clients(classifiers.clone(), |(_, params)| evaluate(spec, params, test));
        let mut per_client_acc = Vec::with_capacity(accs.len());
        for a in accs {
            per_client_acc.push(a?);
        }

        let local_acc = match (&self.test_shards, cfg.eval_local) {
            (Some(shards), true) => {
                let jobs: Vec<((usize, &crate::net::ParamVector), &Shard)> =
                    classifiers.iter().cloned().zip(shards.iter()).collect();
                let accs: Vec<Result<Option<f64>>> = map_clients(jobs, |((_, params), shard)| {
                    if shard.is_empty() {
                        Ok(None)
                    } else {
                        evaluate_subset(spec, params, test, &shard.indices).map(Some)
                    }
                });
                let mut out = Vec::with_capacity(accs.len());
                for a in accs {
                    // Clients without any local test data report chance level.
                    out.push(a?.unwrap_or(1.0 / self.specs.n_classes as f64));
                }
                Some(out)
            }
            _ => None,
        };

        let global_acc = match (&self.algo, cfg.algorithm) {
            (AlgoState::Classifiers { global, .. }, Algorithm::FedAvg | Algorithm::FedProx) => {
                Some(evaluate(spec, global, test)?)
            }
            _ => None,
        };

        let last = self.rounds_log.last();
        let record = MetricsRecord {
            round: self.round,
            summary: summarize(&per_client_acc),
            per_client_acc,
            local_acc,
            global_acc,
            mean_d_loss: last.and_then(|r| r.mean_d_loss),
            mean_g_loss: last.and_then(|r| r.mean_g_loss),
            mean_c_loss: last.and_then(|r| r.mean_c_loss),
            mean_distill_loss: last.and_then(|r| r.mean_distill_loss),
            cum_uplink: self.ledger.uplink_total(),
            cum_downlink: self.ledger.downlink_total(),
        };
        self.metrics.push(record);
        Ok(self.metrics.last().expect("just pushed"))
    }
}

/// Runs rounds `state.round + 1 ..= cfg.rounds`, evaluating on schedule and
/// invoking `on_round` after every round (for progress and checkpoints).
pub fn continue_experiment<F>(
    state: &mut SimState,
    test: &LabeledDataset,
    cfg: &SimConfig,
    mut on_round: F,
) -> Result<()>
where
    F: FnMut(&SimState),
{
    while state.round < cfg.rounds {
        state.step_round(cfg)?;
        if state.round % cfg.eval_every == 0 {
            state.evaluate_now(test, cfg)?;
        }
        on_round(state);
    }
    Ok(())
}

/// Initializes, records the round-0 evaluation, and runs all rounds.
pub fn run_experiment<F>(
    train: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &SimConfig,
    on_round: F,
) -> Result<SimState>
where
    F: FnMut(&SimState),
{
    let mut state = SimState::init(train, test, cfg)?;
    state.evaluate_now(test, cfg)?;
    continue_experiment(&mut state, test, cfg, on_round)?;
    Ok(state)
}

/// A small, well-separated default config for the 2-D mixture benchmark.
/// Tests and examples start from this and override what they need.
pub fn toy_mixture_config(algorithm: Algorithm, seed: u64) -> SimConfig {
    SimConfig {
        algorithm,
        clients: 4,
        frac: 1.0,
        rounds: 30,
        batch_size: 32,
        z_dim: 4,
        hidden_g: alloc::vec![32],
        hidden_d: alloc::vec![32],
        hidden_c: alloc::vec![32],
        hidden_activation: Activation::Relu,
        optimizer: OptimizerConfig::default(),
        local_epochs: 1,
        distill: DistillConfig {
            alpha_kd: 0.9,
            sample_count: 512,
            temperature: 1.0,
        },
        distill_passes: 1,
        leave_one_out: LeaveOneOut::CountMinusOne,
        fedprox_mu: 0.01,
        partition: PartitionScheme::OneClassPerClient,
        ratio: 1.0,
        seed,
        eval_every: 5,
        eval_local: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_gaussian_mixture, MixtureSpec};

    fn mixture(seed: u64) -> (LabeledDataset, LabeledDataset) {
        let train = synth_gaussian_mixture(&MixtureSpec::default_2d(120), seed).unwrap();
        let test = synth_gaussian_mixture(&MixtureSpec::default_2d(40), seed + 1).unwrap();
        (train, test)
    }

    #[test]
    fn zero_rounds_yields_only_initial_evaluation() {
        let (train, test) = mixture(1);
        let mut cfg = toy_mixture_config(Algorithm::FedDtg(AblationFlags::default()), 1);
        cfg.rounds = 0;
        let state = run_experiment(&train, &test, &cfg, |_| {}).unwrap();
        assert_eq!(state.metrics.len(), 1);
        assert_eq!(state.metrics[0].round, 0);
        assert!(state.rounds_log.is_empty());
    }

    #[test]
    fn rerun_is_bit_identical() {
        let (train, test) = mixture(2);
        let mut cfg = toy_mixture_config(Algorithm::FedDtg(AblationFlags::default()), 5);
        cfg.rounds = 3;
        cfg.eval_every = 1;
        let a = run_experiment(&train, &test, &cfg, |_| {}).unwrap();
        let b = run_experiment(&train, &test, &cfg, |_| {}).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.rounds_log, b.rounds_log);
        assert_eq!(a.algo, b.algo);
    }

    #[test]
    fn fedavg_and_fedprox_zero_mu_share_trajectories() {
        let (train, test) = mixture(3);
        let mut cfg = toy_mixture_config(Algorithm::FedAvg, 9);
        cfg.rounds = 4;
        cfg.frac = 0.5;
        let avg = run_experiment(&train, &test, &cfg, |_| {}).unwrap();

        let mut prox_cfg = cfg.clone();
        prox_cfg.algorithm = Algorithm::FedProx;
        prox_cfg.fedprox_mu = 0.0;
        let prox = run_experiment(&train, &test, &prox_cfg, |_| {}).unwrap();
        assert_eq!(avg.algo, prox.algo);
        assert_eq!(avg.metrics, prox.metrics);
    }

    #[test]
    fn local_only_has_zero_communication() {
        let (train, test) = mixture(4);
        let mut cfg = toy_mixture_config(Algorithm::LocalOnly, 2);
        cfg.rounds = 2;
        let state = run_experiment(&train, &test, &cfg, |_| {}).unwrap();
        assert_eq!(state.ledger.uplink_total().total(), 0);
        assert_eq!(state.ledger.downlink_total().total(), 0);
    }

    #[test]
    fn resume_from_midpoint_matches_straight_run() {
        let (train, test) = mixture(5);
        let mut cfg = toy_mixture_config(Algorithm::FedDtg(AblationFlags::default()), 21);
        cfg.rounds = 4;
        cfg.eval_every = 2;
        let full = run_experiment(&train, &test, &cfg, |_| {}).unwrap();

        // Stop at round 2, clone the state (a checkpoint in spirit), resume.
        let mut half_cfg = cfg.clone();
        half_cfg.rounds = 2;
        let mut state = run_experiment(&train, &test, &half_cfg, |_| {}).unwrap();
        continue_experiment(&mut state, &test, &cfg, |_| {}).unwrap();
        assert_eq!(full.metrics, state.metrics);
        assert_eq!(full.rounds_log, state.rounds_log);
        assert_eq!(full.algo, state.algo);
    }

    #[test]
    fn mismatched_algorithm_and_state_is_an_error() {
        let (train, test) = mixture(6);
        let cfg = toy_mixture_config(Algorithm::FedAvg, 3);
        let mut state = SimState::init(&train, &test, &cfg).unwrap();
        let wrong = toy_mixture_config(Algorithm::FedDtg(AblationFlags::default()), 3);
        assert!(state.step_round(&wrong).is_err());
    }
}
