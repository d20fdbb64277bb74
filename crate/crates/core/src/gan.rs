//! One client's three-player GAN: generator, discriminator, classifier.
//!
//! The three losses form the local adversarial game:
//! - the discriminator minimizes the negated two-sided log loss over real
//!   and generated samples;
//! - the generator minimizes `-log D(G(z, y))` plus the classifier's cross
//!   entropy on its own samples, receiving gradients *through* the frozen
//!   discriminator and classifier;
//! - the classifier minimizes cross entropy on real pairs plus generated
//!   pairs.
//!
//! The printed generator objective carries a `1 - log D(...)` term; the
//! constant offset is gradient-inert and dropped here, so reported generator
//! losses are lower by exactly 1 per averaged sample.
//!
//! Distillation (the client side of the federated exchange) softens the
//! classifier's outputs at a temperature and pulls them toward the peer
//! consensus with a KL term, blended with plain cross entropy by
//! `alpha_kd`. The student distribution goes through the exact same softmax
//! path as [`soft_label_output`], so a client distilling toward its own soft
//! labels sees a bit-exact zero gradient.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::loss::{self, Target};
use crate::net::{self, Activation, Gradients, NetworkSpec, OutputHead, ParamVector};
use crate::optim::{optimizer_step, OptimizerState, Rule};
use crate::tensor::Tensor;

/// Architectures shared by every client in an experiment; parameter
/// averaging is only well-defined because these are identical across
/// clients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletSpecs {
    pub generator: NetworkSpec,
    pub discriminator: NetworkSpec,
    pub classifier: NetworkSpec,
    pub z_dim: usize,
    pub n_classes: usize,
    pub sample_dim: usize,
}

impl TripletSpecs {
    /// Builds the three MLPs with ReLU hidden layers. The generator takes
    /// `z` concatenated with a one-hot label and emits a tanh-bounded
    /// sample; the discriminator is a scalar-probability head; the
    /// classifier emits logits.
    pub fn new(
        sample_dim: usize,
        n_classes: usize,
        z_dim: usize,
        hidden_g: &[usize],
        hidden_d: &[usize],
        hidden_c: &[usize],
    ) -> Result<Self> {
        TripletSpecs::with_hidden_activation(
            sample_dim,
            n_classes,
            z_dim,
            hidden_g,
            hidden_d,
            hidden_c,
            Activation::Relu,
        )
    }

    /// [`TripletSpecs::new`] with a chosen hidden activation for all three
    /// networks.
    #[allow(clippy::too_many_arguments)]
    pub fn with_hidden_activation(
        sample_dim: usize,
        n_classes: usize,
        z_dim: usize,
        hidden_g: &[usize],
        hidden_d: &[usize],
        hidden_c: &[usize],
        hidden_activation: Activation,
    ) -> Result<Self> {
        if sample_dim == 0 || n_classes == 0 || z_dim == 0 {
            return Err(Error::invalid(
                "triplet specs",
                "sample_dim, n_classes, z_dim must be > 0",
            ));
        }
        let generator = NetworkSpec::mlp(
            z_dim + n_classes,
            hidden_g,
            sample_dim,
            hidden_activation,
            Activation::Tanh,
            OutputHead::Logits,
        );
        let discriminator = NetworkSpec::mlp(
            sample_dim,
            hidden_d,
            1,
            hidden_activation,
            Activation::Sigmoid,
            OutputHead::ScalarProb,
        );
        let classifier = NetworkSpec::mlp(
            sample_dim,
            hidden_c,
            n_classes,
            hidden_activation,
            Activation::Identity,
            OutputHead::Logits,
        );
        generator.validate()?;
        discriminator.validate()?;
        classifier.validate()?;
        Ok(TripletSpecs {
            generator,
            discriminator,
            classifier,
            z_dim,
            n_classes,
            sample_dim,
        })
    }

    /// Desk-scale defaults: G `[128, 256]`, D `[256, 128]`, C `[256, 128]`.
    pub fn default_for(sample_dim: usize, n_classes: usize, z_dim: usize) -> Result<Self> {
        TripletSpecs::new(
            sample_dim,
            n_classes,
            z_dim,
            &[128, 256],
            &[256, 128],
            &[256, 128],
        )
    }
}

/// Learning rates and update rule for the three players.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub rule: Rule,
    pub lr_g: f64,
    pub lr_d: f64,
    pub lr_c: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            rule: Rule::adam_default(),
            lr_g: 2e-4,
            lr_d: 2e-4,
            lr_c: 1e-3,
        }
    }
}

/// One client's generator/discriminator/classifier parameters and the
/// optimizer state owned alongside each of them.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletState {
    pub client_id: usize,
    pub generator: ParamVector,
    pub discriminator: ParamVector,
    pub classifier: ParamVector,
    pub opt_g: OptimizerState,
    pub opt_d: OptimizerState,
    pub opt_c: OptimizerState,
}

impl TripletState {
    pub fn new(
        client_id: usize,
        specs: &TripletSpecs,
        generator: ParamVector,
        discriminator: ParamVector,
        classifier: ParamVector,
        opt: &OptimizerConfig,
    ) -> Result<Self> {
        let opt_g = OptimizerState::new(opt.rule, opt.lr_g, specs.generator.param_count())?;
        let opt_d = OptimizerState::new(opt.rule, opt.lr_d, specs.discriminator.param_count())?;
        let opt_c = OptimizerState::new(opt.rule, opt.lr_c, specs.classifier.param_count())?;
        Ok(TripletState {
            client_id,
            generator,
            discriminator,
            classifier,
            opt_g,
            opt_d,
            opt_c,
        })
    }
}

/// A batch of standard-normal noise rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch(pub Tensor);

/// Conditioning labels for the generator, one-hot encoded at its input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelBatch {
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

/// Generated samples together with the labels that conditioned them.
#[derive(Debug, Clone, PartialEq)]
pub struct FakeBatch {
    pub samples: Tensor,
    pub labels: LabelBatch,
}

/// Distillation stage configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    /// Weight of the KL term; `0` is pure cross entropy, `1` pure KL.
    pub alpha_kd: f64,
    pub sample_count: usize,
    pub temperature: f64,
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_kd) {
            return Err(Error::invalid(
                "distill config",
                "alpha_kd must be in [0, 1]",
            ));
        }
        if self.sample_count == 0 {
            return Err(Error::invalid("distill config", "sample count must be > 0"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("distill config", "temperature must be > 0"));
        }
        Ok(())
    }
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha_kd: 0.9,
            sample_count: 10_000,
            temperature: 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Draws `batch` rows of i.i.d. standard-normal noise.
pub fn sample_noise<R: Rng>(stream: &mut R, batch: usize, z_dim: usize) -> NoiseBatch {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data: Vec<f64> = (0..batch * z_dim).map(|_| normal.sample(stream)).collect();
    NoiseBatch(Tensor::matrix(batch, z_dim, data).expect("shape matches data"))
}

/// Draws `batch` labels uniformly over `n` classes.
pub fn sample_labels_uniform<R: Rng>(stream: &mut R, batch: usize, n: usize) -> LabelBatch {
    assert!(n >= 1, "need at least one class");
    LabelBatch {
        labels: (0..batch).map(|_| stream.gen_range(0..n)).collect(),
        n_classes: n,
    }
}

/// Deterministic cyclic labels `0, 1, ..., n-1, 0, 1, ...`; class counts
/// differ by at most one when `n` does not divide `batch`.
pub fn balanced_labels(batch: usize, n: usize) -> LabelBatch {
    assert!(n >= 1, "need at least one class");
    LabelBatch {
        labels: (0..batch).map(|i| i % n).collect(),
        n_classes: n,
    }
}

/// Concatenates noise rows with one-hot label rows: the generator input.
fn generator_input(specs: &TripletSpecs, z: &NoiseBatch, labels: &LabelBatch) -> Result<Tensor> {
    let batch = z.0.rows();
    if labels.labels.len() != batch {
        return Err(Error::ShapeMismatch {
            context: "generator input: label count",
            expected: vec![batch],
            found: vec![labels.labels.len()],
        });
    }
    if z.0.cols() != specs.z_dim || labels.n_classes != specs.n_classes {
        return Err(Error::ShapeMismatch {
            context: "generator input: widths",
            expected: vec![specs.z_dim, specs.n_classes],
            found: vec![z.0.cols(), labels.n_classes],
        });
    }
    if let Some(&bad) = labels.labels.iter().find(|&&l| l >= specs.n_classes) {
        return Err(Error::invalid(
            "generator input",
            alloc::format!("label {bad} out of range"),
        ));
    }
    let width = specs.z_dim + specs.n_classes;
    let mut data = vec![0.0; batch * width];
    for r in 0..batch {
        let row = &mut data[r * width..(r + 1) * width];
        row[..specs.z_dim].copy_from_slice(z.0.row(r));
        row[specs.z_dim + labels.labels[r]] = 1.0;
    }
    Tensor::matrix(batch, width, data)
}

/// Runs the generator: a pure function of `(params, z, labels)`.
pub fn generate(
    specs: &TripletSpecs,
    generator: &ParamVector,
    z: &NoiseBatch,
    labels: &LabelBatch,
) -> Result<FakeBatch> {
    let input = generator_input(specs, z, labels)?;
    let samples = net::forward(&specs.generator, generator, &input)?;
    Ok(FakeBatch {
        samples,
        labels: labels.clone(),
    })
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Per-step loss record for one local adversarial update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub discriminator: f64,
    pub generator: f64,
    pub classifier: f64,
}

/// Discriminator objective in minimization form:
/// `-[mean log D(x) + mean log(1 - D(x_g))]`.
///
/// The fake samples are constants here; gradients flow only into the
/// discriminator.
pub fn discriminator_loss(
    specs: &TripletSpecs,
    discriminator: &ParamVector,
    real: &Tensor,
    fake: &FakeBatch,
) -> Result<(f64, Gradients)> {
    if real.rows() == 0 {
        return Err(Error::invalid("discriminator_loss", "empty real batch"));
    }
    if real.cols() != specs.sample_dim || fake.samples.cols() != specs.sample_dim {
        return Err(Error::ShapeMismatch {
            context: "discriminator_loss: sample width",
            expected: vec![specs.sample_dim],
            found: vec![real.cols(), fake.samples.cols()],
        });
    }
    let n_real = real.rows();
    let n_fake = fake.samples.rows();
    let mut stacked = Vec::with_capacity((n_real + n_fake) * specs.sample_dim);
    stacked.extend_from_slice(real.data());
    stacked.extend_from_slice(fake.samples.data());
    let input = Tensor::matrix(n_real + n_fake, specs.sample_dim, stacked)?;
    let mut is_real = vec![true; n_real];
    is_real.extend(core::iter::repeat(false).take(n_fake));

    let probs = net::forward(&specs.discriminator, discriminator, &input)?;
    let (loss, upstream) = loss::binary_log_loss(&probs, &is_real)?;
    let back = net::backward(&specs.discriminator, discriminator, &input, &upstream)?;
    Ok((loss, back.params))
}

/// Generator objective: `mean[-log D(G(z,y))] + mean[CE(C(G(z,y)), y)]`,
/// differentiated only with respect to the generator; the discriminator and
/// classifier are frozen inputs.
pub fn generator_loss(
    specs: &TripletSpecs,
    generator: &ParamVector,
    discriminator: &ParamVector,
    classifier: &ParamVector,
    z: &NoiseBatch,
    labels: &LabelBatch,
) -> Result<(f64, Gradients)> {
    if z.0.rows() == 0 {
        return Err(Error::invalid("generator_loss", "empty noise batch"));
    }
    let input = generator_input(specs, z, labels)?;
    let samples = net::forward(&specs.generator, generator, &input)?;

    // Realism branch: through the frozen discriminator.
    let probs = net::forward(&specs.discriminator, discriminator, &samples)?;
    let (loss_d, up_d) = loss::negative_log_prob(&probs)?;
    let through_d = net::backward(&specs.discriminator, discriminator, &samples, &up_d)?;

    // Label-consistency branch: through the frozen classifier.
    let logits = net::forward(&specs.classifier, classifier, &samples)?;
    let (loss_c, up_c) = loss::cross_entropy(&logits, Target::Indices(&labels.labels))?;
    let through_c = net::backward(&specs.classifier, classifier, &samples, &up_c)?;

    let mut sample_grad = through_d.input;
    for (g, add) in sample_grad
        .data_mut()
        .iter_mut()
        .zip(through_c.input.data())
    {
        *g += add;
    }
    let back = net::backward(&specs.generator, generator, &input, &sample_grad)?;
    Ok((loss_d + loss_c, back.params))
}

/// Classifier objective: mean CE on real pairs plus mean CE on generated
/// pairs; gradients flow only into the classifier.
pub fn classifier_loss(
    specs: &TripletSpecs,
    classifier: &ParamVector,
    real: &Tensor,
    real_labels: &[usize],
    fake: &FakeBatch,
) -> Result<(f64, Gradients)> {
    if real.rows() == 0 || fake.samples.rows() == 0 {
        return Err(Error::invalid("classifier_loss", "empty batch"));
    }
    let real_logits = net::forward(&specs.classifier, classifier, real)?;
    let (loss_real, up_real) = loss::cross_entropy(&real_logits, Target::Indices(real_labels))?;
    let back_real = net::backward(&specs.classifier, classifier, real, &up_real)?;

    let fake_logits = net::forward(&specs.classifier, classifier, &fake.samples)?;
    let (loss_fake, up_fake) =
        loss::cross_entropy(&fake_logits, Target::Indices(&fake.labels.labels))?;
    let back_fake = net::backward(&specs.classifier, classifier, &fake.samples, &up_fake)?;

    let mut grads = back_real.params;
    grads.add_scaled(&back_fake.params, 1.0);
    Ok((loss_real + loss_fake, grads))
}

/// One local adversarial step: discriminator, then generator, then
/// classifier, each against a fresh fake batch the size of the real batch.
pub fn local_adversarial_step<R: Rng>(
    specs: &TripletSpecs,
    state: &mut TripletState,
    real: &Tensor,
    real_labels: &[usize],
    stream: &mut R,
) -> Result<StepLosses> {
    let batch = real.rows();
    if batch == 0 {
        return Err(Error::invalid("local_adversarial_step", "empty real batch"));
    }

    // Discriminator update; its fake batch is a constant input.
    let z = sample_noise(stream, batch, specs.z_dim);
    let labels = sample_labels_uniform(stream, batch, specs.n_classes);
    let fake = generate(specs, &state.generator, &z, &labels)?;
    let (loss_d, grad_d) = discriminator_loss(specs, &state.discriminator, real, &fake)?;
    optimizer_step(&mut state.discriminator, &grad_d, &mut state.opt_d)?;

    // Generator update against the freshly updated discriminator.
    let z = sample_noise(stream, batch, specs.z_dim);
    let labels = sample_labels_uniform(stream, batch, specs.n_classes);
    let (loss_g, grad_g) = generator_loss(
        specs,
        &state.generator,
        &state.discriminator,
        &state.classifier,
        &z,
        &labels,
    )?;
    optimizer_step(&mut state.generator, &grad_g, &mut state.opt_g)?;

    // Classifier update with samples from the updated generator.
    let z = sample_noise(stream, batch, specs.z_dim);
    let labels = sample_labels_uniform(stream, batch, specs.n_classes);
    let fake = generate(specs, &state.generator, &z, &labels)?;
    let (loss_c, grad_c) = classifier_loss(specs, &state.classifier, real, real_labels, &fake)?;
    optimizer_step(&mut state.classifier, &grad_c, &mut state.opt_c)?;

    Ok(StepLosses {
        discriminator: loss_d,
        generator: loss_g,
        classifier: loss_c,
    })
}

/// Softened class probabilities `softmax(C(x_g) / T)`.
pub fn soft_label_output(
    specs: &TripletSpecs,
    classifier: &ParamVector,
    fake: &FakeBatch,
    temperature: f64,
) -> Result<Tensor> {
    let logits = net::forward(&specs.classifier, classifier, &fake.samples)?;
    loss::softmax(&logits, temperature)
}

/// One distillation update on the classifier:
/// `(1 - alpha_kd) * CE(C(x_g), y) + alpha_kd * KL(student ‖ y_dis)`.
///
/// `y_dis` rows must be probability vectors over the classifier's classes.
/// Only the classifier moves; the generator that produced `fake` is not
/// touched.
pub fn distillation_step(
    specs: &TripletSpecs,
    state: &mut TripletState,
    fake: &FakeBatch,
    y_dis: &Tensor,
    cfg: &DistillConfig,
) -> Result<f64> {
    cfg.validate()?;
    let batch = fake.samples.rows();
    if batch == 0 {
        return Err(Error::invalid("distillation_step", "empty fake batch"));
    }
    if y_dis.rows() != batch || y_dis.cols() != specs.n_classes {
        return Err(Error::ShapeMismatch {
            context: "distillation_step: target shape",
            expected: vec![batch, specs.n_classes],
            found: vec![y_dis.rows(), y_dis.cols()],
        });
    }
    loss::check_probability_rows(y_dis, "distillation_step")?;

    let logits = net::forward(&specs.classifier, &state.classifier, &fake.samples)?;
    let (ce, ce_grad) = loss::cross_entropy(&logits, Target::Indices(&fake.labels.labels))?;

    let student = loss::softmax(&logits, cfg.temperature)?;
    let kl = loss::kl_probs(&student, y_dis)?;
    // d KL / d logits = (student - teacher) / (batch * T).
    let scale = 1.0 / (batch as f64 * cfg.temperature);

    let alpha = cfg.alpha_kd;
    let mut upstream = Tensor::zeros(vec![batch, specs.n_classes]);
    for ((u, (s, t)), ce_g) in upstream
        .data_mut()
        .iter_mut()
        .zip(student.data().iter().zip(y_dis.data()))
        .zip(ce_grad.data())
    {
        *u = alpha * ((s - t) * scale) + (1.0 - alpha) * ce_g;
    }

    let back = net::backward(
        &specs.classifier,
        &state.classifier,
        &fake.samples,
        &upstream,
    )?;
    optimizer_step(&mut state.classifier, &back.params, &mut state.opt_c)?;
    Ok((1.0 - alpha) * ce + alpha * kl)
}

/// Seeded construction of one client's freshly initialized triplet.
pub fn init_triplet<R: Rng>(
    specs: &TripletSpecs,
    client_id: usize,
    opt: &OptimizerConfig,
    stream: &mut R,
) -> Result<TripletState> {
    let generator = net::init_params(&specs.generator, stream);
    let discriminator = net::init_params(&specs.discriminator, stream);
    let classifier = net::init_params(&specs.classifier, stream);
    TripletState::new(client_id, specs, generator, discriminator, classifier, opt)
}
