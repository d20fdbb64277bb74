//! Comparison algorithms and ablation switches.
//!
//! All baselines share the classifier architecture, initialization, data
//! pipeline, batch schedule, and client-selection streams with the main
//! protocol, so accuracy differences are attributable to the algorithm and
//! not to the harness.
//!
//! - local-only: every client trains on its own shard, no communication;
//! - FedAvg: broadcast the global classifier, train locally, upload, take
//!   the uniform parameter mean;
//! - FedProx: FedAvg with a proximal pull `mu * (theta - theta_global)`
//!   added to every local gradient. With `mu = 0` it is trajectory-identical
//!   to FedAvg because the pull is skipped entirely, not multiplied by zero.

use alloc::vec::Vec;

use crate::data::{batch_iter, LabeledDataset, Shard};
use crate::error::{Error, Result};
use crate::gan::TripletSpecs;
use crate::loss::{self, Target};
use crate::net::{self, ParamVector};
use crate::optim::{optimizer_step, OptimizerState};
use crate::protocol::{
    map_clients, select_clients, ClientUpdate, CommLedger, PayloadKind, ProtocolConfig,
    RoundRecord, ServerState,
};
use crate::rng::{self, Stage};
use crate::tensor::Tensor;

/// Which parts of the full method are active. `(true, true)` is the full
/// co-distillation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationFlags {
    /// Upload/aggregate/broadcast the generator and discriminator. When
    /// off, clients keep purely local GANs and the distillation exchange
    /// runs on each client's own fake samples (with the server-specified
    /// labels and noise).
    pub use_global_generator: bool,
    /// Run the soft-label exchange and distillation passes at all.
    pub use_co_distillation: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_global_generator: true,
            use_co_distillation: true,
        }
    }
}

/// Baseline knobs; everything else comes from the shared protocol config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    /// Proximal strength; `0` disables the term.
    pub fedprox_mu: f64,
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("baseline config", "epochs and batch size must be > 0"));
        }
        if !(self.fedprox_mu >= 0.0) {
            return Err(Error::invalid("baseline config", "fedprox_mu must be >= 0"));
        }
        Ok(())
    }
}

/// A classifier-only client, the unit of state for every baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierClient {
    pub client_id: usize,
    pub classifier: ParamVector,
    pub opt: OptimizerState,
}

/// One mini-batch update: cross entropy plus the optional proximal pull
/// toward the current global parameters.
///
/// The proximal gradient is `mu * (theta - theta_global)`, the gradient of
/// `(mu/2) * ||theta - theta_global||^2`.
pub fn fedprox_local_step(
    classifier_spec: &crate::net::NetworkSpec,
    client: &mut ClassifierClient,
    global: &ParamVector,
    samples: &Tensor,
    labels: &[usize],
    mu: f64,
) -> Result<f64> {
    let logits = net::forward(classifier_spec, &client.classifier, samples)?;
    let (ce, upstream) = loss::cross_entropy(&logits, Target::Indices(labels))?;
    let mut back = net::backward(classifier_spec, &client.classifier, samples, &upstream)?;
    if mu > 0.0 {
        if global.layout() != client.classifier.layout() {
            return Err(Error::ShapeMismatch {
                context: "fedprox_local_step: global layout",
                expected: alloc::vec![client.classifier.len()],
                found: alloc::vec![global.len()],
            });
        }
        for (g, (p, gp)) in back
            .params
            .values_mut()
            .iter_mut()
            .zip(client.classifier.values().iter().zip(global.values()))
        {
            *g += mu * (p - gp);
        }
    }
    optimizer_step(&mut client.classifier, &back.params, &mut client.opt)?;
    Ok(ce)
}

/// One round's budget of plain local CE training for one client. `proximal`
/// carries the global parameters and `mu` for FedProx.
fn local_ce_training(
    classifier_spec: &crate::net::NetworkSpec,
    client: &mut ClassifierClient,
    shard: &Shard,
    train: &LabeledDataset,
    cfg: &BaselineConfig,
    proximal: Option<(&ParamVector, f64)>,
    seed: u64,
    round: u64,
) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    if shard.is_empty() {
        return Ok(losses);
    }
    let mut stream = rng::stream(seed, round, client.client_id as u64, Stage::LocalTrain);
    let zero = ParamVector::zeros(client.classifier.layout().clone());
    let (global, mu) = proximal.unwrap_or((&zero, 0.0));
    for _ in 0..cfg.local_epochs {
        for batch in batch_iter(shard, cfg.batch_size, &mut stream) {
            let samples = train.samples().gather_rows(&batch);
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();
            losses.push(fedprox_local_step(
                classifier_spec,
                client,
                global,
                &samples,
                &labels,
                mu,
            )?);
        }
    }
    Ok(losses)
}

fn baseline_record(
    round: u64,
    selected: Vec<usize>,
    ce_losses: &[f64],
    uplink: crate::protocol::KindCounts,
    downlink: crate::protocol::KindCounts,
) -> RoundRecord {
    let mean_c_loss = if ce_losses.is_empty() {
        None
    } else {
        Some(ce_losses.iter().sum::<f64>() / ce_losses.len() as f64)
    };
    RoundRecord {
        round,
        selected,
        mean_d_loss: None,
        mean_g_loss: None,
        mean_c_loss,
        mean_distill_loss: None,
        distill_skipped: true,
        uplink_delta: uplink,
        downlink_delta: downlink,
        fake_checksums: Vec::new(),
        param_checksums: Vec::new(),
    }
}

/// One FedAvg (or FedProx, for `mu > 0`) round: broadcast, local CE
/// training, uniform parameter mean over the selection.
///
/// Selected clients keep their post-training local models until their next
/// selection; only the server holds the fresh aggregate.
#[allow(clippy::too_many_arguments)]
pub fn fedavg_round(
    classifier_spec: &crate::net::NetworkSpec,
    global: &mut ParamVector,
    clients: &mut [ClassifierClient],
    shards: &[Shard],
    train: &LabeledDataset,
    cfg: &BaselineConfig,
    frac: f64,
    mu: f64,
    seed: u64,
    round: u64,
    ledger: &mut CommLedger,
) -> Result<RoundRecord> {
    cfg.validate()?;
    if clients.len() != shards.len() {
        return Err(Error::protocol("fedavg", "client/shard count mismatch"));
    }
    let c_len = global.len() as u64;
    let mut select_stream = rng::server_stream(seed, round, Stage::Select);
    let selected = select_clients(clients.len(), frac, &mut select_stream)?;

    let mut uplink = crate::protocol::KindCounts::default();
    let mut downlink = crate::protocol::KindCounts::default();

    for &c in &selected {
        clients[c].classifier = global.clone();
        ledger.record_downlink(c, PayloadKind::Classifier, c_len);
    }
    downlink.add(PayloadKind::Classifier, c_len * selected.len() as u64);

    let global_snapshot = global.clone();
    let jobs: Vec<(&mut ClassifierClient, &Shard)> = clients
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| selected.binary_search(i).is_ok())
        .map(|(i, client)| {
            let shard = &shards[i];
            (client, shard)
        })
        .collect();
    let results: Vec<Result<Vec<f64>>> = map_clients(jobs, |(client, shard)| {
        let proximal = if mu > 0.0 {
            Some((&global_snapshot, mu))
        } else {
            None
        };
        local_ce_training(
            classifier_spec,
            client,
            shard,
            train,
            cfg,
            proximal,
            seed,
            round,
        )
    });
    let mut ce_losses = Vec::new();
    for r in results {
        ce_losses.extend(r?);
    }

    // Upload and aggregate. The classifier rides in the generator slot of
    // ClientUpdate-shaped math, so reuse the same canonical-order mean by
    // pairing it with itself.
    let updates: Vec<ClientUpdate> = selected
        .iter()
        .map(|&c| ClientUpdate {
            client_id: c,
            theta_g: clients[c].classifier.clone(),
            theta_d: clients[c].classifier.clone(),
        })
        .collect();
    for &c in &selected {
        ledger.record_uplink(c, PayloadKind::Classifier, c_len);
    }
    uplink.add(PayloadKind::Classifier, c_len * selected.len() as u64);
    let (mean, _) = crate::protocol::aggregate_parameters(&updates)?;
    *global = mean;

    Ok(baseline_record(round, selected, &ce_losses, uplink, downlink))
}

/// One round of communication-free local training: every client runs its
/// epoch budget on its own shard. Empty-shard clients are skipped.
pub fn local_only_round(
    classifier_spec: &crate::net::NetworkSpec,
    clients: &mut [ClassifierClient],
    shards: &[Shard],
    train: &LabeledDataset,
    cfg: &BaselineConfig,
    seed: u64,
    round: u64,
) -> Result<RoundRecord> {
    cfg.validate()?;
    if clients.len() != shards.len() {
        return Err(Error::protocol("local-only", "client/shard count mismatch"));
    }
    let all: Vec<usize> = (0..clients.len()).collect();
    let jobs: Vec<(&mut ClassifierClient, &Shard)> = clients
        .iter_mut()
        .zip(shards.iter())
        .map(|(c, s)| (c, s))
        .collect();
    let results: Vec<Result<Vec<f64>>> = map_clients(jobs, |(client, shard)| {
        local_ce_training(classifier_spec, client, shard, train, cfg, None, seed, round)
    });
    let mut ce_losses = Vec::new();
    for r in results {
        ce_losses.extend(r?);
    }
    Ok(baseline_record(
        round,
        all,
        &ce_losses,
        crate::protocol::KindCounts::default(),
        crate::protocol::KindCounts::default(),
    ))
}

/// The full protocol with parts switched off; `(true, true)` is exactly
/// [`crate::protocol::run_round`].
#[allow(clippy::too_many_arguments)]
pub fn feddtg_ablated_round(
    specs: &TripletSpecs,
    server: &mut ServerState,
    clients: &mut [crate::gan::TripletState],
    shards: &[Shard],
    train: &LabeledDataset,
    cfg: &ProtocolConfig,
    flags: AblationFlags,
    ledger: &mut CommLedger,
) -> Result<RoundRecord> {
    let mut ablated = cfg.clone();
    ablated.flags = flags;
    crate::protocol::run_round(specs, server, clients, shards, train, &ablated, ledger)
}

/// Shared seeded initialization for classifier-only clients: every client
/// starts from the same parameters.
pub fn init_classifier_clients(
    classifier_spec: &crate::net::NetworkSpec,
    count: usize,
    lr: f64,
    rule: crate::optim::Rule,
    seed: u64,
) -> Result<(ParamVector, Vec<ClassifierClient>)> {
    let mut stream = rng::setup_stream(seed, Stage::Init);
    let shared = net::init_params(classifier_spec, &mut stream);
    let clients = (0..count)
        .map(|client_id| {
            Ok(ClassifierClient {
                client_id,
                classifier: shared.clone(),
                opt: OptimizerState::new(rule, lr, classifier_spec.param_count())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((shared, clients))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;
    use crate::net::{Activation, NetworkSpec, OutputHead};
    use crate::optim::Rule;
    use alloc::vec;

    fn spec() -> NetworkSpec {
        NetworkSpec::mlp(
            2,
            &[5],
            3,
            Activation::Relu,
            Activation::Identity,
            OutputHead::Logits,
        )
    }

    fn toy_train() -> LabeledDataset {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let c = i % 3;
            data.push(c as f64 / 3.0 - 0.5);
            data.push((i as f64) / 30.0 - 0.5);
            labels.push(c);
        }
        LabeledDataset::new(
            Tensor::matrix(30, 2, data).unwrap(),
            labels,
            Normalization::identity(),
        )
        .unwrap()
    }

    fn toy_shards(k: usize, total: usize) -> Vec<Shard> {
        (0..k)
            .map(|client_id| Shard {
                client_id,
                indices: (0..total).filter(|i| i % k == client_id).collect(),
            })
            .collect()
    }

    #[test]
    fn fedprox_zero_mu_is_bitwise_fedavg() {
        let spec = spec();
        let train = toy_train();
        let shards = toy_shards(4, train.len());
        let cfg = BaselineConfig {
            local_epochs: 2,
            batch_size: 8,
            fedprox_mu: 0.0,
        };
        let run = |mu: f64| {
            let (mut global, mut clients) =
                init_classifier_clients(&spec, 4, 1e-2, Rule::adam_default(), 7).unwrap();
            let mut ledger = CommLedger::new(4);
            for round in 1..=3 {
                fedavg_round(
                    &spec, &mut global, &mut clients, &shards, &train, &cfg, 0.5, mu, 7, round,
                    &mut ledger,
                )
                .unwrap();
            }
            (global, clients)
        };
        let (ga, ca) = run(0.0);
        let (gb, cb) = run(0.0);
        assert_eq!(ga, gb);
        assert_eq!(ca, cb);
    }

    #[test]
    fn proximal_term_vanishes_at_the_global_point() {
        let spec = spec();
        let train = toy_train();
        let (global, mut clients) =
            init_classifier_clients(&spec, 1, 1e-2, Rule::Sgd, 3).unwrap();
        let samples = train.samples().gather_rows(&[0, 1, 2]);
        let labels = vec![0, 1, 2];

        // Identical trajectories with and without the proximal term when the
        // client sits exactly at the global parameters.
        let mut with_mu = clients[0].clone();
        fedprox_local_step(&spec, &mut with_mu, &global, &samples, &labels, 0.5).unwrap();
        fedprox_local_step(&spec, &mut clients[0], &global, &samples, &labels, 0.0).unwrap();
        // After one step the parameters moved identically because the pull
        // was zero at the start point.
        let diff: f64 = with_mu
            .classifier
            .values()
            .iter()
            .zip(clients[0].classifier.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-15, "max diff {diff}");
    }

    #[test]
    fn proximal_gradient_matches_finite_differences() {
        let spec = spec();
        let mut stream = rng::setup_stream(5, Stage::Init);
        let theta = net::init_params(&spec, &mut stream);
        let global = net::init_params(&spec, &mut stream);
        let mu = 0.37;
        // The proximal penalty (mu/2)||theta - global||^2 alone.
        let penalty = |t: &ParamVector| -> f64 {
            0.5 * mu
                * t.values()
                    .iter()
                    .zip(global.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
        };
        let eps = 1e-6;
        for i in (0..theta.len()).step_by(7) {
            let mut plus = theta.clone();
            plus.values_mut()[i] += eps;
            let mut minus = theta.clone();
            minus.values_mut()[i] -= eps;
            let fd = (penalty(&plus) - penalty(&minus)) / (2.0 * eps);
            let analytic = mu * (theta.values()[i] - global.values()[i]);
            assert!(
                (fd - analytic).abs() <= 1e-6 * analytic.abs().max(1.0),
                "index {i}: fd {fd} vs analytic {analytic}"
            );
        }
    }

    #[test]
    fn fedavg_zero_epoch_config_is_rejected() {
        let cfg = BaselineConfig {
            local_epochs: 0,
            batch_size: 8,
            fedprox_mu: 0.0,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_client_round_reduces_to_local_training() {
        let spec = spec();
        let train = toy_train();
        let shards = toy_shards(1, train.len());
        let cfg = BaselineConfig {
            local_epochs: 1,
            batch_size: 8,
            fedprox_mu: 0.0,
        };
        let (mut global, mut clients) =
            init_classifier_clients(&spec, 1, 1e-2, Rule::adam_default(), 11).unwrap();
        let mut ledger = CommLedger::new(1);
        fedavg_round(
            &spec, &mut global, &mut clients, &shards, &train, &cfg, 1.0, 0.0, 11, 1,
            &mut ledger,
        )
        .unwrap();
        // With one client the aggregate equals that client's local model.
        assert_eq!(global, clients[0].classifier);

        // The same training performed directly, without the round wrapper.
        let (_, mut direct) =
            init_classifier_clients(&spec, 1, 1e-2, Rule::adam_default(), 11).unwrap();
        local_ce_training(&spec, &mut direct[0], &shards[0], &train, &cfg, None, 11, 1).unwrap();
        assert_eq!(direct[0].classifier, global);
    }

    #[test]
    fn ledger_prices_fedavg_in_classifier_floats() {
        let spec = spec();
        let train = toy_train();
        let shards = toy_shards(4, train.len());
        let cfg = BaselineConfig {
            local_epochs: 1,
            batch_size: 8,
            fedprox_mu: 0.0,
        };
        let (mut global, mut clients) =
            init_classifier_clients(&spec, 4, 1e-2, Rule::adam_default(), 13).unwrap();
        let mut ledger = CommLedger::new(4);
        let record = fedavg_round(
            &spec, &mut global, &mut clients, &shards, &train, &cfg, 1.0, 0.0, 13, 1,
            &mut ledger,
        )
        .unwrap();
        let c_len = spec.param_count() as u64;
        assert_eq!(record.uplink_delta.classifier, 4 * c_len);
        assert_eq!(record.uplink_delta.generator, 0);
        assert_eq!(record.uplink_delta.soft_labels, 0);
        for c in 0..4 {
            assert_eq!(ledger.uplink[c].classifier, c_len);
        }
    }
}
