//! Accuracy evaluation and per-client distribution summaries.

use alloc::vec::Vec;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::loss::argmax;
use crate::math;
use crate::net::{forward, NetworkSpec, ParamVector};

/// Forward batches are capped at this many rows to bound temporaries.
const EVAL_CHUNK: usize = 256;

/// Fraction of argmax-correct predictions on the test set; argmax ties break
/// toward the lowest class index.
pub fn evaluate(
    classifier_spec: &NetworkSpec,
    classifier: &ParamVector,
    test: &LabeledDataset,
) -> Result<f64> {
    let all: Vec<usize> = (0..test.len()).collect();
    evaluate_subset(classifier_spec, classifier, test, &all)
}

/// [`evaluate`] restricted to the given sample indices.
pub fn evaluate_subset(
    classifier_spec: &NetworkSpec,
    classifier: &ParamVector,
    test: &LabeledDataset,
    indices: &[usize],
) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::invalid("evaluate", "empty test set"));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let samples = test.samples().gather_rows(chunk);
        let logits = forward(classifier_spec, classifier, &samples)?;
        for (r, &i) in chunk.iter().enumerate() {
            if argmax(logits.row(r)) == test.labels()[i] {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Distribution summary over per-client accuracies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation (divide by the client count).
    pub std: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    assert!(!values.is_empty(), "nothing to summarize");
    if values.windows(2).all(|w| w[0] == w[1]) {
        let v = values[0];
        return Summary {
            mean: v,
            min: v,
            max: v,
            std: 0.0,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut min = values[0];
    let mut max = values[0];
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    Summary {
        mean,
        min,
        max,
        std: math::sqrt(var),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Normalization;
    use crate::net::{Activation, OutputHead};
    use crate::rng::{self, Stage};
    use crate::tensor::Tensor;
    use alloc::vec;
    use rand::Rng;

    fn two_feature_testset(n: usize, seed: u64) -> LabeledDataset {
        let mut stream = rng::setup_stream(seed, Stage::Mixture);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let x: f64 = stream.gen_range(-1.0..1.0);
            let y: f64 = stream.gen_range(-1.0..1.0);
            data.push(x);
            data.push(y);
            labels.push(usize::from(x > 0.0));
        }
        LabeledDataset::new(
            Tensor::matrix(n, 2, data).unwrap(),
            labels,
            Normalization::identity(),
        )
        .unwrap()
    }

    /// A classifier wired to copy the deciding feature to the right logit is
    /// a perfect predictor.
    #[test]
    fn perfect_predictor_scores_one() {
        let spec = NetworkSpec::mlp(
            2,
            &[],
            2,
            Activation::Identity,
            Activation::Identity,
            OutputHead::Logits,
        );
        let mut params = ParamVector::zeros(spec.layout());
        // logit_1 = x, logit_0 = -x; label is 1 iff x > 0.
        params.values_mut()[0] = -1.0;
        params.values_mut()[2] = 1.0;
        let test = two_feature_testset(500, 1);
        let acc = evaluate(&spec, &params, &test).unwrap();
        assert_eq!(acc, 1.0);
    }

    /// A constant predictor lands at the prevalence of its favored class.
    #[test]
    fn constant_predictor_scores_prevalence() {
        let spec = NetworkSpec::mlp(
            2,
            &[],
            2,
            Activation::Identity,
            Activation::Identity,
            OutputHead::Logits,
        );
        let params = ParamVector::zeros(spec.layout());
        let test = two_feature_testset(2000, 2);
        // Zero logits everywhere: argmax ties to class 0.
        let prevalence =
            test.labels().iter().filter(|&&l| l == 0).count() as f64 / test.len() as f64;
        let acc = evaluate(&spec, &params, &test).unwrap();
        assert_eq!(acc, prevalence);
    }

    /// Brute-force per-sample comparison oracle on random classifiers.
    #[test]
    fn matches_brute_force_oracle() {
        let spec = NetworkSpec::mlp(
            2,
            &[4],
            3,
            Activation::Tanh,
            Activation::Identity,
            OutputHead::Logits,
        );
        for seed in 0..20 {
            let mut stream = rng::setup_stream(seed, Stage::Init);
            let params = crate::net::init_params(&spec, &mut stream);
            let test = two_feature_testset(50, seed + 100);
            let acc = evaluate(&spec, &params, &test).unwrap();
            let mut correct = 0;
            for i in 0..test.len() {
                let row = test.samples().gather_rows(&[i]);
                let logits = forward(&spec, &params, &row).unwrap();
                if argmax(logits.row(0)) == test.labels()[i] {
                    correct += 1;
                }
            }
            assert_eq!(acc, correct as f64 / test.len() as f64, "seed {seed}");
        }
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let spec = NetworkSpec::mlp(
            2,
            &[4],
            3,
            Activation::Tanh,
            Activation::Identity,
            OutputHead::Logits,
        );
        let mut stream = rng::setup_stream(9, Stage::Init);
        let params = crate::net::init_params(&spec, &mut stream);
        let test = two_feature_testset(300, 4);
        let mut perm: Vec<usize> = (0..test.len()).collect();
        perm.reverse();
        perm.swap(10, 200);
        let shuffled = test.subset(&perm);
        assert_eq!(
            evaluate(&spec, &params, &test).unwrap(),
            evaluate(&spec, &params, &shuffled).unwrap()
        );
    }

    #[test]
    fn empty_test_set_is_rejected() {
        let spec = NetworkSpec::mlp(
            2,
            &[],
            2,
            Activation::Identity,
            Activation::Identity,
            OutputHead::Logits,
        );
        let params = ParamVector::zeros(spec.layout());
        let empty = LabeledDataset::new(
            Tensor::zeros(vec![0, 2]),
            Vec::new(),
            Normalization::identity(),
        )
        .unwrap();
        assert!(evaluate(&spec, &params, &empty).is_err());
    }

    #[test]
    fn summary_degenerate_and_two_point() {
        let s = summarize(&[0.7, 0.7, 0.7]);
        assert_eq!((s.mean, s.min, s.max, s.std), (0.7, 0.7, 0.7, 0.0));

        let s = summarize(&[0.9, 1.0]);
        assert!((s.mean - 0.95).abs() < 1e-15);
        assert_eq!(s.min, 0.9);
        assert_eq!(s.max, 1.0);
        assert!((s.std - 0.05).abs() < 1e-12);
    }

    #[test]
    fn summary_mean_matches_per_client_mean() {
        let values: Vec<f64> = (0..17).map(|i| (i as f64) / 17.0).collect();
        let s = summarize(&values);
        let direct = values.iter().sum::<f64>() / 17.0;
        assert!((s.mean - direct).abs() < 1e-12);
    }
}
