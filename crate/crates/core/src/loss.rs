//! Losses and probability transforms, each returning the scalar value plus
//! the upstream gradient to feed into [`crate::net::backward`].
//!
//! Conventions shared by every loss here:
//! - values are means over the batch, so gradients carry a `1/batch` factor;
//! - probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before any
//!   logarithm, which perturbs losses only in the extreme tails;
//! - all reductions run in a fixed sequential order, so identical inputs
//!   produce bit-identical outputs.

use alloc::vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Probability clamp applied before logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// Tolerance when checking that a supplied probability row sums to one.
pub const ROW_SUM_TOL: f64 = 1e-6;

/// `ln` with its argument floored at [`PROB_EPS`], so perfect predictions
/// still reach a loss of exactly the true `-ln p` instead of being clamped
/// from above.
#[inline]
fn safe_ln(p: f64) -> f64 {
    math::ln(p.max(PROB_EPS))
}

/// Row-wise softmax with temperature, computed with max-subtraction.
pub fn softmax(logits: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(
            "softmax",
            "temperature must be strictly positive",
        ));
    }
    let (rows, cols) = (logits.rows(), logits.cols());
    let mut out = Tensor::zeros(vec![rows, cols]);
    for r in 0..rows {
        let src = logits.row(r);
        let dst = out.row_mut(r);
        let max = src.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let mut sum = 0.0;
        for (d, s) in dst.iter_mut().zip(src) {
            *d = math::exp((s - max) / temperature);
            sum += *d;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Ok(out)
}

/// Classification target: either hard class indices or probability rows.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    Indices(&'a [usize]),
    Probabilities(&'a Tensor),
}

/// Mean cross-entropy `-log softmax(logits)[target]` and its gradient with
/// respect to the logits, `(softmax - target) / batch`.
pub fn cross_entropy(logits: &Tensor, target: Target<'_>) -> Result<(f64, Tensor)> {
    let (rows, cols) = (logits.rows(), logits.cols());
    if rows == 0 {
        return Err(Error::invalid("cross_entropy", "empty batch"));
    }
    match target {
        Target::Indices(idx) => {
            if idx.len() != rows {
                return Err(Error::ShapeMismatch {
                    context: "cross_entropy: target count",
                    expected: vec![rows],
                    found: vec![idx.len()],
                });
            }
            if let Some(bad) = idx.iter().find(|&&c| c >= cols) {
                return Err(Error::invalid(
                    "cross_entropy",
                    alloc::format!("class index {bad} out of range for {cols} classes"),
                ));
            }
        }
        Target::Probabilities(p) => {
            if p.rows() != rows || p.cols() != cols {
                return Err(Error::ShapeMismatch {
                    context: "cross_entropy: target rows",
                    expected: vec![rows, cols],
                    found: vec![p.rows(), p.cols()],
                });
            }
        }
    }

    let probs = softmax(logits, 1.0)?;
    let inv_batch = 1.0 / rows as f64;
    let mut loss = 0.0;
    let mut grad = probs.clone();
    match target {
        Target::Indices(idx) => {
            for (r, &c) in idx.iter().enumerate() {
                loss -= safe_ln(probs.row(r)[c]);
                grad.row_mut(r)[c] -= 1.0;
            }
        }
        Target::Probabilities(p) => {
            for r in 0..rows {
                let (pr, sr) = (p.row(r), probs.row(r));
                for (t, s) in pr.iter().zip(sr) {
                    if *t != 0.0 {
                        loss -= t * safe_ln(*s);
                    }
                }
                for (g, t) in grad.row_mut(r).iter_mut().zip(pr) {
                    *g -= t;
                }
            }
        }
    }
    for g in grad.data_mut() {
        *g *= inv_batch;
    }
    Ok((loss * inv_batch, grad))
}

/// Validates that every row of `t` is a probability vector: non-negative
/// entries summing to one within [`ROW_SUM_TOL`].
pub fn check_probability_rows(t: &Tensor, context: &'static str) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row(r);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(
                context,
                alloc::format!("probability row {r} sums to {sum}, not 1"),
            ));
        }
        if row.iter().any(|p| *p < 0.0) {
            return Err(Error::invalid(
                context,
                alloc::format!("probability row {r} has a negative entry"),
            ));
        }
    }
    Ok(())
}

/// Mean KL divergence between explicit distributions, `0·ln 0 = 0`.
pub fn kl_probs(student_probs: &Tensor, teacher_probs: &Tensor) -> Result<f64> {
    let rows = student_probs.rows();
    if teacher_probs.rows() != rows || teacher_probs.cols() != student_probs.cols() {
        return Err(Error::ShapeMismatch {
            context: "kl_probs",
            expected: vec![rows, student_probs.cols()],
            found: vec![teacher_probs.rows(), teacher_probs.cols()],
        });
    }
    let mut loss = 0.0;
    for r in 0..rows {
        for (t, s) in teacher_probs.row(r).iter().zip(student_probs.row(r)) {
            if *t > 0.0 {
                loss += t * (math::ln(*t) - safe_ln(*s));
            }
        }
    }
    Ok(loss / rows as f64)
}

/// Mean KL divergence `KL(teacher ‖ softmax(student_logits))` with the
/// convention `0·ln 0 = 0`, plus its gradient with respect to the logits.
///
/// Teacher rows must already be probability vectors; rows that do not sum to
/// one within [`ROW_SUM_TOL`] are rejected.
pub fn kl_divergence(student_logits: &Tensor, teacher_probs: &Tensor) -> Result<(f64, Tensor)> {
    let (rows, cols) = (student_logits.rows(), student_logits.cols());
    if teacher_probs.rows() != rows || teacher_probs.cols() != cols {
        return Err(Error::ShapeMismatch {
            context: "kl_divergence",
            expected: vec![rows, cols],
            found: vec![teacher_probs.rows(), teacher_probs.cols()],
        });
    }
    if rows == 0 {
        return Err(Error::invalid("kl_divergence", "empty batch"));
    }
    check_probability_rows(teacher_probs, "kl_divergence")?;

    let student = softmax(student_logits, 1.0)?;
    let loss = kl_probs(&student, teacher_probs)?;
    // d/dz mean_b Σ_j t_j (ln t_j - ln s_j) = (s - t) / batch.
    let inv_batch = 1.0 / rows as f64;
    let mut grad = student;
    for (g, t) in grad.data_mut().iter_mut().zip(teacher_probs.data()) {
        *g = (*g - t) * inv_batch;
    }
    Ok((loss, grad))
}

/// Binary log loss over a batch of scalar probabilities.
///
/// Returns `-(mean over real samples of ln p) - (mean over fake samples of
/// ln(1-p))`; a group that is absent contributes zero. Minimizing this is the
/// discriminator's side of the adversarial game, the negation of the usual
/// maximization target. The gradient is with respect to the probabilities.
pub fn binary_log_loss(probs: &Tensor, is_real: &[bool]) -> Result<(f64, Tensor)> {
    if probs.rows() != is_real.len() || probs.cols() != 1 {
        return Err(Error::ShapeMismatch {
            context: "binary_log_loss",
            expected: vec![is_real.len(), 1],
            found: vec![probs.rows(), probs.cols()],
        });
    }
    let n_real = is_real.iter().filter(|r| **r).count();
    let n_fake = is_real.len() - n_real;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![probs.rows(), 1]);
    for (i, (&real, p)) in is_real.iter().zip(probs.data()).enumerate() {
        if real {
            let p = p.max(PROB_EPS);
            loss -= math::ln(p) / n_real as f64;
            grad.data_mut()[i] = -1.0 / (p * n_real as f64);
        } else {
            let q = (1.0 - p).max(PROB_EPS);
            loss -= math::ln(q) / n_fake as f64;
            grad.data_mut()[i] = 1.0 / (q * n_fake as f64);
        }
    }
    Ok((loss, grad))
}

/// Mean of `-ln p` over a batch of scalar probabilities (the generator's
/// non-saturating realism term), with gradient with respect to `p`.
pub fn negative_log_prob(probs: &Tensor) -> Result<(f64, Tensor)> {
    if probs.cols() != 1 || probs.rows() == 0 {
        return Err(Error::ShapeMismatch {
            context: "negative_log_prob",
            expected: vec![1, 1],
            found: vec![probs.rows(), probs.cols()],
        });
    }
    let inv_batch = 1.0 / probs.rows() as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(vec![probs.rows(), 1]);
    for (g, p) in grad.data_mut().iter_mut().zip(probs.data()) {
        let p = p.max(PROB_EPS);
        loss -= math::ln(p) * inv_batch;
        *g = -inv_batch / p;
    }
    Ok((loss, grad))
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One-hot encodes `labels` into rows of width `n_classes`.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![labels.len(), n_classes]);
    for (r, &c) in labels.iter().enumerate() {
        t.row_mut(r)[c] = 1.0;
    }
    t
}
