//! The federated round loop: selection, upload, uniform aggregation,
//! broadcast, the synchronized-noise distillation exchange, and
//! communication accounting.
//!
//! One round executes, in order:
//! 1. the server selects `max(1, floor(frac*K))` clients;
//! 2. the global generator/discriminator are broadcast to the selection;
//! 3. each selected client runs local adversarial training on its shard;
//! 4. clients upload their generator and discriminator;
//! 5. the server aggregates by uniform parameter mean and re-broadcasts;
//! 6. the server issues a shared noise stream for the round;
//! 7. every selected client generates the same fake set (balanced labels),
//!    computes soft labels on it, and uploads them;
//! 8. the server forms each client's leave-one-out mean target;
//! 9. each client runs distillation passes on its classifier.
//!
//! Classifier parameters never travel in this protocol; the ledger's
//! classifier row exists so baselines are priced with the same instrument
//! and so tests can assert the row stays zero here.
//!
//! Client-side stages (3, 7, 9) are independent across clients and may run
//! in parallel; every cross-client read happens at a server barrier, and
//! per-client RNG streams are derived from `(seed, round, client, stage)`,
//! so results do not depend on execution order.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::baselines::AblationFlags;
use crate::data::{batch_iter, LabeledDataset, Shard};
use crate::error::{Error, Result};
use crate::gan::{
    balanced_labels, distillation_step, generate, local_adversarial_step, sample_noise,
    soft_label_output, DistillConfig, FakeBatch, LabelBatch, StepLosses, TripletSpecs,
    TripletState,
};
use crate::net::ParamVector;
use crate::rng::{self, checksum, Stage};
use crate::tensor::Tensor;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Order-preserving map over per-client work items.
///
/// With the `parallel` feature this fans out across threads; the collected
/// order (and therefore every downstream result) is identical either way.
pub(crate) fn map_clients<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.into_iter().map(f).collect()
    }
}

/// Server-side state between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub round: u64,
    pub theta_g: ParamVector,
    pub theta_d: ParamVector,
    pub seed: u64,
}

/// Per-round instructions issued by the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundPlan {
    pub round: u64,
    pub selected: Vec<usize>,
    /// All clients derive the round's generation noise from this.
    pub noise_seed: u64,
    pub distill_count: usize,
    pub batch_size: usize,
}

/// A client's post-training upload.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub theta_g: ParamVector,
    pub theta_d: ParamVector,
}

/// Per-client soft-label outputs on the shared fake set, in selection order.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMatrix {
    pub clients: Vec<usize>,
    pub outputs: Vec<Tensor>,
}

/// Normalization of the leave-one-out target mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeaveOneOut {
    /// Divide the `M-1`-term sum by `M-1`: rows are probability vectors.
    CountMinusOne,
    /// The printed variant: divide by `M`, then renormalize each row.
    PrintedOverCount,
}

/// What travels over the simulated wire, priced in `f64` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Generator,
    Discriminator,
    SoftLabels,
    Classifier,
}

/// Float counts by payload kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct KindCounts {
    pub generator: u64,
    pub discriminator: u64,
    pub soft_labels: u64,
    pub classifier: u64,
}

impl KindCounts {
    pub fn add(&mut self, kind: PayloadKind, floats: u64) {
        match kind {
            PayloadKind::Generator => self.generator += floats,
            PayloadKind::Discriminator => self.discriminator += floats,
            PayloadKind::SoftLabels => self.soft_labels += floats,
            PayloadKind::Classifier => self.classifier += floats,
        }
    }

    pub fn merge(&mut self, other: &KindCounts) {
        self.generator += other.generator;
        self.discriminator += other.discriminator;
        self.soft_labels += other.soft_labels;
        self.classifier += other.classifier;
    }

    pub fn total(&self) -> u64 {
        self.generator + self.discriminator + self.soft_labels + self.classifier
    }
}

/// Cumulative per-client uplink/downlink accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommLedger {
    pub uplink: Vec<KindCounts>,
    pub downlink: Vec<KindCounts>,
}

impl CommLedger {
    pub fn new(clients: usize) -> Self {
        CommLedger {
            uplink: vec![KindCounts::default(); clients],
            downlink: vec![KindCounts::default(); clients],
        }
    }

    pub fn record_uplink(&mut self, client: usize, kind: PayloadKind, floats: u64) {
        self.uplink[client].add(kind, floats);
    }

    pub fn record_downlink(&mut self, client: usize, kind: PayloadKind, floats: u64) {
        self.downlink[client].add(kind, floats);
    }

    pub fn uplink_total(&self) -> KindCounts {
        let mut total = KindCounts::default();
        for c in &self.uplink {
            total.merge(c);
        }
        total
    }

    pub fn downlink_total(&self) -> KindCounts {
        let mut total = KindCounts::default();
        for c in &self.downlink {
            total.merge(c);
        }
        total
    }

    /// Classifier floats ever uploaded; stays zero under the co-distillation
    /// protocol.
    pub fn classifier_uplink_total(&self) -> u64 {
        self.uplink.iter().map(|c| c.classifier).sum()
    }
}

// ---------------------------------------------------------------------------
// Server-side primitives
// ---------------------------------------------------------------------------

/// Uniform sample of `max(1, floor(frac*K))` distinct clients, returned in
/// ascending order.
pub fn select_clients<R: Rng>(clients: usize, frac: f64, stream: &mut R) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::invalid("select_clients", "frac must be in (0, 1]"));
    }
    if clients == 0 {
        return Err(Error::invalid("select_clients", "no clients to select from"));
    }
    let count = (libm::floor(frac * clients as f64) as usize).clamp(1, clients);
    let mut selected = rand::seq::index::sample(stream, clients, count).into_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// Unweighted elementwise mean of the uploaded generator and discriminator
/// parameters.
///
/// Updates are summed in ascending client order regardless of list order, so
/// aggregation is exactly permutation-invariant; a set of bit-identical
/// updates short-circuits to that update, making idempotence exact as well.
pub fn aggregate_parameters(updates: &[ClientUpdate]) -> Result<(ParamVector, ParamVector)> {
    if updates.is_empty() {
        return Err(Error::protocol("aggregate", "empty update list"));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);

    let first = &updates[order[0]];
    for &i in &order {
        let u = &updates[i];
        if u.theta_g.layout() != first.theta_g.layout()
            || u.theta_d.layout() != first.theta_d.layout()
        {
            return Err(Error::protocol("aggregate", "parameter layout mismatch"));
        }
        if !u.theta_g.values().iter().all(|v| v.is_finite())
            || !u.theta_d.values().iter().all(|v| v.is_finite())
        {
            return Err(Error::protocol("aggregate", "non-finite client update"));
        }
    }

    let mean = |pick: fn(&ClientUpdate) -> &ParamVector| -> ParamVector {
        let base = pick(first);
        if order
            .iter()
            .all(|&i| pick(&updates[i]).values() == base.values())
        {
            return base.clone();
        }
        let mut acc = pick(&updates[order[0]]).clone();
        for &i in &order[1..] {
            for (a, v) in acc.values_mut().iter_mut().zip(pick(&updates[i]).values()) {
                *a += v;
            }
        }
        let inv = 1.0 / updates.len() as f64;
        for a in acc.values_mut() {
            *a *= inv;
        }
        acc
    };

    Ok((mean(|u| &u.theta_g), mean(|u| &u.theta_d)))
}

/// Leave-one-out consensus targets: client `k` receives the mean of every
/// other client's soft labels.
///
/// Returns `None` when fewer than two clients participated (the round skips
/// distillation rather than failing). Each target is summed directly over
/// the other clients in matrix order.
pub fn distillation_targets(
    matrix: &SoftLabelMatrix,
    mode: LeaveOneOut,
) -> Result<Option<Vec<Tensor>>> {
    let m = matrix.clients.len();
    if m != matrix.outputs.len() {
        return Err(Error::protocol("distill-targets", "matrix shape mismatch"));
    }
    if m < 2 {
        return Ok(None);
    }
    let rows = matrix.outputs[0].rows();
    let cols = matrix.outputs[0].cols();
    for (client, out) in matrix.clients.iter().zip(&matrix.outputs) {
        if out.rows() != rows || out.cols() != cols {
            return Err(Error::protocol(
                "distill-targets",
                alloc::format!("client {client} soft labels have a different shape"),
            ));
        }
        crate::loss::check_probability_rows(out, "distillation_targets")?;
    }

    let mut targets = Vec::with_capacity(m);
    for k in 0..m {
        let mut sum = Tensor::zeros(vec![rows, cols]);
        for (i, out) in matrix.outputs.iter().enumerate() {
            if i == k {
                continue;
            }
            for (dst, v) in sum.data_mut().iter_mut().zip(out.data()) {
                *dst += v;
            }
        }
        match mode {
            LeaveOneOut::CountMinusOne => {
                let inv = 1.0 / (m - 1) as f64;
                for v in sum.data_mut() {
                    *v *= inv;
                }
            }
            LeaveOneOut::PrintedOverCount => {
                let inv = 1.0 / m as f64;
                for v in sum.data_mut() {
                    *v *= inv;
                }
                // The printed factor leaves rows summing to (M-1)/M;
                // renormalize so KL's precondition holds.
                for r in 0..rows {
                    let row_sum: f64 = sum.row(r).iter().sum();
                    for v in sum.row_mut(r) {
                        *v /= row_sum;
                    }
                }
            }
        }
        targets.push(sum);
    }
    Ok(Some(targets))
}

// ---------------------------------------------------------------------------
// The round loop
// ---------------------------------------------------------------------------

/// Per-round protocol knobs (the experiment layer owns the full config).
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub frac: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub distill: DistillConfig,
    /// Full optimizer passes over the distillation set per round.
    pub distill_passes: usize,
    pub leave_one_out: LeaveOneOut,
    pub flags: AblationFlags,
}

/// Everything observable about one executed round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: u64,
    pub selected: Vec<usize>,
    /// Mean per-step losses over clients that ran local training.
    pub mean_d_loss: Option<f64>,
    pub mean_g_loss: Option<f64>,
    pub mean_c_loss: Option<f64>,
    pub mean_distill_loss: Option<f64>,
    pub distill_skipped: bool,
    /// This round's traffic, summed over clients.
    pub uplink_delta: KindCounts,
    pub downlink_delta: KindCounts,
    /// Fingerprint of each selected client's generated distillation set.
    pub fake_checksums: Vec<(usize, u64)>,
    /// Fingerprints of each selected client's (generator, discriminator)
    /// right after the post-aggregation broadcast.
    pub param_checksums: Vec<(usize, u64, u64)>,
}

fn gather_batch(train: &LabeledDataset, indices: &[usize]) -> (Tensor, Vec<usize>) {
    let samples = train.samples().gather_rows(indices);
    let labels = indices.iter().map(|&i| train.labels()[i]).collect();
    (samples, labels)
}

/// One round's budget of local adversarial training for a single client.
/// Returns the per-step losses (empty for an empty shard).
pub fn run_local_training(
    specs: &TripletSpecs,
    state: &mut TripletState,
    shard: &Shard,
    train: &LabeledDataset,
    cfg: &ProtocolConfig,
    seed: u64,
    round: u64,
) -> Result<Vec<StepLosses>> {
    let mut losses = Vec::new();
    if shard.is_empty() {
        return Ok(losses);
    }
    let mut stream = rng::stream(seed, round, state.client_id as u64, Stage::LocalTrain);
    for _ in 0..cfg.local_epochs {
        for batch in batch_iter(shard, cfg.batch_size, &mut stream) {
            let (samples, labels) = gather_batch(train, &batch);
            losses.push(local_adversarial_step(
                specs,
                state,
                &samples,
                &labels,
                &mut stream,
            )?);
        }
    }
    Ok(losses)
}

/// The shared fake set for a round: noise from the server-issued stream,
/// balanced labels, run through the given generator parameters.
pub fn generate_distill_set(
    specs: &TripletSpecs,
    generator: &ParamVector,
    seed: u64,
    round: u64,
    count: usize,
) -> Result<FakeBatch> {
    let mut noise_stream = rng::server_stream(seed, round, Stage::DistillNoise);
    let z = sample_noise(&mut noise_stream, count, specs.z_dim);
    let labels = balanced_labels(count, specs.n_classes);
    generate(specs, generator, &z, &labels)
}

/// Distillation passes over a client's fake set in mini-batches.
fn run_distillation(
    specs: &TripletSpecs,
    state: &mut TripletState,
    fake: &FakeBatch,
    y_dis: &Tensor,
    cfg: &ProtocolConfig,
) -> Result<f64> {
    let total = fake.samples.rows();
    let width = fake.samples.cols();
    let classes = y_dis.cols();
    let mut loss_sum = 0.0;
    let mut steps = 0u64;
    for _ in 0..cfg.distill_passes {
        let mut start = 0;
        while start < total {
            let end = (start + cfg.batch_size).min(total);
            let samples = Tensor::matrix(
                end - start,
                width,
                fake.samples.data()[start * width..end * width].to_vec(),
            )?;
            let labels = LabelBatch {
                labels: fake.labels.labels[start..end].to_vec(),
                n_classes: fake.labels.n_classes,
            };
            let chunk = FakeBatch { samples, labels };
            let targets = Tensor::matrix(
                end - start,
                classes,
                y_dis.data()[start * classes..end * classes].to_vec(),
            )?;
            loss_sum += distillation_step(specs, state, &chunk, &targets, &cfg.distill)?;
            steps += 1;
            start = end;
        }
    }
    Ok(loss_sum / steps as f64)
}

/// Executes one full round against the given clients and shards.
pub fn run_round(
    specs: &TripletSpecs,
    server: &mut ServerState,
    clients: &mut [TripletState],
    shards: &[Shard],
    train: &LabeledDataset,
    cfg: &ProtocolConfig,
    ledger: &mut CommLedger,
) -> Result<RoundRecord> {
    if clients.len() != shards.len() {
        return Err(Error::protocol("round", "client/shard count mismatch"));
    }
    let k = clients.len();
    let seed = server.seed;
    let round = server.round + 1;
    let g_len = server.theta_g.len() as u64;
    let d_len = server.theta_d.len() as u64;

    // Stage 1: selection.
    let mut select_stream = rng::server_stream(seed, round, Stage::Select);
    let selected = select_clients(k, cfg.frac, &mut select_stream)?;

    let mut uplink_delta = KindCounts::default();
    let mut downlink_delta = KindCounts::default();

    // Stage 2: broadcast the global generator/discriminator.
    if cfg.flags.use_global_generator {
        for &c in &selected {
            clients[c].generator = server.theta_g.clone();
            clients[c].discriminator = server.theta_d.clone();
            ledger.record_downlink(c, PayloadKind::Generator, g_len);
            ledger.record_downlink(c, PayloadKind::Discriminator, d_len);
        }
        downlink_delta.add(PayloadKind::Generator, g_len * selected.len() as u64);
        downlink_delta.add(PayloadKind::Discriminator, d_len * selected.len() as u64);
    }

    // Stage 3: local adversarial training, independent per client.
    let jobs: Vec<(&mut TripletState, &Shard)> = clients
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| selected.binary_search(i).is_ok())
        .map(|(i, state)| {
            let shard = &shards[i];
            (state, shard)
        })
        .collect();
    let results: Vec<Result<Vec<StepLosses>>> = map_clients(jobs, |(state, shard)| {
        run_local_training(specs, state, shard, train, cfg, seed, round)
    });
    let mut all_losses: Vec<StepLosses> = Vec::new();
    for r in results {
        all_losses.extend(r?);
    }
    let mean_of = |f: fn(&StepLosses) -> f64| -> Option<f64> {
        if all_losses.is_empty() {
            None
        } else {
            Some(all_losses.iter().map(f).sum::<f64>() / all_losses.len() as f64)
        }
    };
    let mean_d_loss = mean_of(|l| l.discriminator);
    let mean_g_loss = mean_of(|l| l.generator);
    let mean_c_loss = mean_of(|l| l.classifier);

    // Stages 4 and 5: upload, aggregate, re-broadcast.
    if cfg.flags.use_global_generator {
        let updates: Vec<ClientUpdate> = selected
            .iter()
            .map(|&c| ClientUpdate {
                client_id: c,
                theta_g: clients[c].generator.clone(),
                theta_d: clients[c].discriminator.clone(),
            })
            .collect();
        for &c in &selected {
            ledger.record_uplink(c, PayloadKind::Generator, g_len);
            ledger.record_uplink(c, PayloadKind::Discriminator, d_len);
        }
        uplink_delta.add(PayloadKind::Generator, g_len * selected.len() as u64);
        uplink_delta.add(PayloadKind::Discriminator, d_len * selected.len() as u64);

        let (theta_g, theta_d) = aggregate_parameters(&updates)?;
        server.theta_g = theta_g;
        server.theta_d = theta_d;
        for &c in &selected {
            clients[c].generator = server.theta_g.clone();
            clients[c].discriminator = server.theta_d.clone();
            ledger.record_downlink(c, PayloadKind::Generator, g_len);
            ledger.record_downlink(c, PayloadKind::Discriminator, d_len);
        }
        downlink_delta.add(PayloadKind::Generator, g_len * selected.len() as u64);
        downlink_delta.add(PayloadKind::Discriminator, d_len * selected.len() as u64);
    }

    let param_checksums: Vec<(usize, u64, u64)> = selected
        .iter()
        .map(|&c| {
            (
                c,
                checksum(clients[c].generator.values()),
                checksum(clients[c].discriminator.values()),
            )
        })
        .collect();

    // Stages 6-9: the synchronized distillation exchange.
    let mut mean_distill_loss = None;
    let mut distill_skipped = true;
    let mut fake_checksums = Vec::new();
    if cfg.flags.use_co_distillation && selected.len() >= 2 {
        distill_skipped = false;
        let count = cfg.distill.sample_count;
        let soft_floats = (count * specs.n_classes) as u64;

        // Stages 6 and 7: shared noise, per-client fake set and soft labels.
        let jobs: Vec<&TripletState> = selected.iter().map(|&c| &clients[c]).collect();
        let outputs: Vec<Result<(FakeBatch, Tensor)>> = map_clients(jobs, |state| {
            let fake = generate_distill_set(specs, &state.generator, seed, round, count)?;
            let soft =
                soft_label_output(specs, &state.classifier, &fake, cfg.distill.temperature)?;
            Ok((fake, soft))
        });
        let mut fakes = Vec::with_capacity(selected.len());
        let mut matrix = SoftLabelMatrix {
            clients: selected.clone(),
            outputs: Vec::with_capacity(selected.len()),
        };
        for (c, out) in selected.iter().zip(outputs) {
            let (fake, soft) = out?;
            fake_checksums.push((*c, checksum(fake.samples.data())));
            fakes.push(fake);
            matrix.outputs.push(soft);
            ledger.record_uplink(*c, PayloadKind::SoftLabels, soft_floats);
        }
        uplink_delta.add(PayloadKind::SoftLabels, soft_floats * selected.len() as u64);

        // Stage 8: leave-one-out targets.
        let targets = distillation_targets(&matrix, cfg.leave_one_out)?
            .expect("at least two clients participated");
        for &c in &selected {
            ledger.record_downlink(c, PayloadKind::SoftLabels, soft_floats);
        }
        downlink_delta.add(PayloadKind::SoftLabels, soft_floats * selected.len() as u64);

        // Stage 9: per-client distillation passes.
        let jobs: Vec<(&mut TripletState, FakeBatch, Tensor)> = {
            let mut picked: Vec<(&mut TripletState, FakeBatch, Tensor)> = Vec::new();
            let mut fakes = fakes.into_iter();
            let mut targets = targets.into_iter();
            for (i, state) in clients.iter_mut().enumerate() {
                if selected.binary_search(&i).is_ok() {
                    picked.push((
                        state,
                        fakes.next().expect("one fake set per selected client"),
                        targets.next().expect("one target per selected client"),
                    ));
                }
            }
            picked
        };
        let distill_losses: Vec<Result<f64>> = map_clients(jobs, |(state, fake, y_dis)| {
            run_distillation(specs, state, &fake, &y_dis, cfg)
        });
        let mut sum = 0.0;
        for l in &distill_losses {
            sum += *l.as_ref().map_err(Error::clone)?;
        }
        mean_distill_loss = Some(sum / distill_losses.len() as f64);
    }

    server.round = round;
    Ok(RoundRecord {
        round,
        selected,
        mean_d_loss,
        mean_g_loss,
        mean_c_loss,
        mean_distill_loss,
        distill_skipped,
        uplink_delta,
        downlink_delta,
        fake_checksums,
        param_checksums,
    })
}
