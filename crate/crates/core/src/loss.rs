//! The training objectives: InfoNCE over in-batch negatives, the negated
//! ELBO (reconstruction + KL to a standard-normal prior), and their
//! weighted combination.
//!
//! InfoNCE uses cosine similarity on projection-head outputs. For a batch
//! of B paired views, each of the 2B embeddings serves as an anchor; its
//! positive is its partner in the other view and the remaining 2B-2
//! embeddings are negatives. The positive stays in the denominator, the
//! anchor itself is excluded, and the two view directions are averaged.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, ValueId};

/// Mask added to self-similarities before the softmax denominator; exp of
/// it underflows to exactly zero, so an anchor never competes with itself.
const SELF_MASK: f64 = -1e9;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("contrastive batch needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("non-finite loss value")]
    NonFiniteLoss,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// λ1 (contrastive), λ2 (variational) and the softmax temperature τ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda1: 1.0, lambda2: 1.0, tau: 0.5 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(LossError::InvalidTemperature(self.tau));
        }
        let finite = self.lambda1.is_finite() && self.lambda2.is_finite();
        if !finite || self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(LossError::InvalidWeights(format!(
                "lambda1={}, lambda2={} must be finite and >= 0",
                self.lambda1, self.lambda2
            )));
        }
        if self.lambda1 + self.lambda2 <= 0.0 {
            return Err(LossError::InvalidWeights(
                "lambda1 + lambda2 must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Scalar components of one objective evaluation.
/// `total == lambda1 * nce + lambda2 * (recon_nll + kl)` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nce: f64,
    pub recon_nll: f64,
    pub kl: f64,
    pub total: f64,
}

/// Cosine similarity with both norms floored at 1e-12, so zero vectors
/// yield a similarity of (approximately) zero rather than NaN.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_similarity needs equal lengths");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}

/// Symmetrized in-batch InfoNCE over cosine similarities at temperature
/// `tau`. `view1` and `view2` are `[B, d]` with matching rows; the result
/// is a scalar node on the tape.
pub fn info_nce(
    tape: &mut Tape,
    view1: ValueId,
    view2: ValueId,
    tau: f64,
) -> Result<ValueId, LossError> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(LossError::InvalidTemperature(tau));
    }
    let s1 = tape.shape(view1).to_vec();
    let s2 = tape.shape(view2).to_vec();
    if s1.len() != 2 || s1 != s2 {
        return Err(LossError::Autodiff(AutodiffError::ShapeMismatch(format!(
            "info_nce expects matching [B, d] views, got {:?} and {:?}",
            s1, s2
        ))));
    }
    let batch = s1[0];
    if batch < 2 {
        return Err(LossError::BatchTooSmall(batch));
    }

    let n1 = tape.normalize_rows(view1)?;
    let n2 = tape.normalize_rows(view2)?;
    let stacked = tape.concat_rows(n1, n2)?; // [2B, d]
    let sims = tape.matmul_nt(stacked, stacked)?; // [2B, 2B]
    let tau_node = tape.constant_scalar(tau)?;
    let sims_t = tape.div(sims, tau_node)?;

    let m = 2 * batch;
    let mut mask = vec![0.0; m * m];
    for i in 0..m {
        mask[i * m + i] = SELF_MASK;
    }
    let mask = tape.constant(&[m, m], mask)?;
    let masked = tape.add(sims_t, mask)?;
    let denom = tape.log_sum_exp(masked, 1)?; // [2B]

    // Positive similarity per pair: the row-wise dot of the normalized views.
    let prod = tape.mul(n1, n2)?;
    let pos = tape.sum_axis(prod, 1)?; // [B]
    let pos_both = tape.concat_rows(pos, pos)?; // [2B], same pairing both directions
    let pos_t = tape.div(pos_both, tau_node)?;

    let per_anchor = tape.sub(denom, pos_t)?;
    Ok(tape.mean_all(per_anchor)?)
}

/// Ensure a loss input is `[B, D]`; rank-1 inputs count as one row.
fn as_batch(tape: &mut Tape, x: ValueId) -> Result<ValueId, AutodiffError> {
    match tape.shape(x).len() {
        1 => {
            let n = tape.shape(x)[0];
            tape.reshape(x, &[1, n])
        }
        2 => Ok(x),
        _ => Err(AutodiffError::ShapeMismatch(format!(
            "expected a vector or matrix, got shape {:?}",
            tape.shape(x)
        ))),
    }
}

/// KL divergence of the diagonal posterior `N(mu, exp(logvar))` from the
/// standard normal prior: batch mean of
/// `0.5 * Σ_dims (mu² + exp(logvar) − 1 − logvar)`.
pub fn gaussian_kl(tape: &mut Tape, mu: ValueId, logvar: ValueId) -> Result<ValueId, LossError> {
    if tape.shape(mu) != tape.shape(logvar) {
        return Err(LossError::Autodiff(AutodiffError::ShapeMismatch(format!(
            "gaussian_kl shapes differ: {:?} vs {:?}",
            tape.shape(mu),
            tape.shape(logvar)
        ))));
    }
    let mu = as_batch(tape, mu)?;
    let logvar = as_batch(tape, logvar)?;
    let mu_sq = tape.mul(mu, mu)?;
    let var = tape.exp(logvar)?;
    let sum = tape.add(mu_sq, var)?;
    let sum = tape.sub_scalar(sum, 1.0)?;
    let sum = tape.sub(sum, logvar)?;
    let per_row = tape.sum_axis(sum, 1)?;
    let mean = tape.mean_all(per_row)?;
    Ok(tape.mul_scalar(mean, 0.5)?)
}

/// Gaussian reconstruction negative log-likelihood with unit variance and
/// constants dropped: batch mean of `0.5 * ||x − x_hat||²`.
pub fn recon_nll(tape: &mut Tape, x: ValueId, x_hat: ValueId) -> Result<ValueId, LossError> {
    if tape.shape(x) != tape.shape(x_hat) {
        return Err(LossError::Autodiff(AutodiffError::ShapeMismatch(format!(
            "recon_nll shapes differ: {:?} vs {:?}",
            tape.shape(x),
            tape.shape(x_hat)
        ))));
    }
    let x = as_batch(tape, x)?;
    let x_hat = as_batch(tape, x_hat)?;
    let diff = tape.sub(x, x_hat)?;
    let sq = tape.mul(diff, diff)?;
    let per_row = tape.sum_axis(sq, 1)?;
    let mean = tape.mean_all(per_row)?;
    Ok(tape.mul_scalar(mean, 0.5)?)
}

/// Negated ELBO as a minimization target: `recon_nll + gaussian_kl`.
pub fn elbo_loss(
    tape: &mut Tape,
    x: ValueId,
    x_hat: ValueId,
    mu: ValueId,
    logvar: ValueId,
) -> Result<ValueId, LossError> {
    let recon = recon_nll(tape, x, x_hat)?;
    let kl = gaussian_kl(tape, mu, logvar)?;
    Ok(tape.add(recon, kl)?)
}

/// Weighted total on the tape: `λ1·nce + λ2·elbo`, skipping absent branches.
pub fn combine_objective(
    tape: &mut Tape,
    nce: Option<ValueId>,
    elbo: Option<ValueId>,
    weights: &LossWeights,
) -> Result<ValueId, LossError> {
    weights.validate()?;
    match (nce, elbo) {
        (Some(n), Some(e)) => {
            let wn = tape.mul_scalar(n, weights.lambda1)?;
            let we = tape.mul_scalar(e, weights.lambda2)?;
            Ok(tape.add(wn, we)?)
        }
        (Some(n), None) => Ok(tape.mul_scalar(n, weights.lambda1)?),
        (None, Some(e)) => Ok(tape.mul_scalar(e, weights.lambda2)?),
        (None, None) => Err(LossError::InvalidWeights(
            "objective needs at least one branch".into(),
        )),
    }
}

/// Assemble the scalar breakdown for logging.
/// `total = λ1·nce + λ2·(recon_nll + kl)`, exactly as the tape computes it.
pub fn total_loss(
    nce: f64,
    recon_nll: f64,
    kl: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    weights.validate()?;
    if !(nce.is_finite() && recon_nll.is_finite() && kl.is_finite()) {
        return Err(LossError::NonFiniteLoss);
    }
    let total = weights.lambda1 * nce + weights.lambda2 * (recon_nll + kl);
    if !total.is_finite() {
        return Err(LossError::NonFiniteLoss);
    }
    Ok(LossBreakdown { nce, recon_nll, kl, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn leaf(tape: &mut Tape, shape: &[usize], values: &[f64]) -> ValueId {
        let t = Tensor::new(shape, values.to_vec()).unwrap();
        tape.leaf(&t)
    }

    #[test]
    fn cosine_similarity_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]), 1.0);
        // dot = 4, norms sqrt(5)*sqrt(5) = 5
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 1.0]) - 0.8).abs() < 1e-15);
        // zero vector floors to ~0 instead of NaN
        assert!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).abs() < 1e-9);
    }

    #[test]
    fn info_nce_uniform_embeddings_give_log_candidates() {
        // B = 2, all four embeddings identical: every anchor sees three
        // candidates with equal similarity, so the loss is log 3.
        let mut tape = Tape::new();
        let v = vec![0.3, 0.4, 0.5, 0.3, 0.4, 0.5];
        let v1 = leaf(&mut tape, &[2, 3], &v);
        let v2 = leaf(&mut tape, &[2, 3], &v);
        let loss = info_nce(&mut tape, v1, v2, 0.5).unwrap();
        let got = tape.scalar_value(loss).unwrap();
        assert!((got - 3.0_f64.ln()).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn info_nce_orthogonal_negatives_hand_value() {
        // B = 2, d = 4: positives identical (sim 1), all other pairs
        // orthogonal (sim 0), tau = 1:
        // per-anchor loss = -log(e / (e + 2)).
        let mut tape = Tape::new();
        let v1 = leaf(&mut tape, &[2, 4], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let v2 = leaf(&mut tape, &[2, 4], &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let loss = info_nce(&mut tape, v1, v2, 1.0).unwrap();
        let got = tape.scalar_value(loss).unwrap();
        let expected = -(1.0_f64.exp() / (1.0_f64.exp() + 2.0)).ln();
        assert!((got - expected).abs() < 1e-12, "got {got}, want {expected}");
        assert!((got - 0.55144).abs() < 1e-5);
    }

    #[test]
    fn info_nce_rejects_small_batch_and_bad_tau() {
        let mut tape = Tape::new();
        let v1 = leaf(&mut tape, &[1, 2], &[1.0, 0.0]);
        let v2 = leaf(&mut tape, &[1, 2], &[1.0, 0.0]);
        assert!(matches!(info_nce(&mut tape, v1, v2, 0.5), Err(LossError::BatchTooSmall(1))));
        let v1 = leaf(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let v2 = leaf(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(info_nce(&mut tape, v1, v2, 0.0), Err(LossError::InvalidTemperature(_))));
        assert!(matches!(info_nce(&mut tape, v1, v2, -1.0), Err(LossError::InvalidTemperature(_))));
    }

    #[test]
    fn gaussian_kl_closed_form_cases() {
        let mut tape = Tape::new();
        let mu = leaf(&mut tape, &[1, 1], &[0.0]);
        let lv = leaf(&mut tape, &[1, 1], &[0.0]);
        let kl = gaussian_kl(&mut tape, mu, lv).unwrap();
        assert_eq!(tape.scalar_value(kl).unwrap(), 0.0);

        let mu = leaf(&mut tape, &[1], &[1.0]);
        let lv = leaf(&mut tape, &[1], &[0.0]);
        let kl = gaussian_kl(&mut tape, mu, lv).unwrap();
        assert!((tape.scalar_value(kl).unwrap() - 0.5).abs() < 1e-15);

        // mu = 0, var = 4: 0.5 * (4 - 1 - ln 4) ≈ 0.806853
        let mu = leaf(&mut tape, &[1], &[0.0]);
        let lv = leaf(&mut tape, &[1], &[4.0_f64.ln()]);
        let kl = gaussian_kl(&mut tape, mu, lv).unwrap();
        let expected = 0.5 * (4.0 - 1.0 - 4.0_f64.ln());
        assert!((tape.scalar_value(kl).unwrap() - expected).abs() < 1e-12);
        assert!((tape.scalar_value(kl).unwrap() - 0.806853).abs() < 1e-6);
    }

    #[test]
    fn gaussian_kl_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let mu = leaf(&mut tape, &[2], &[0.0, 0.0]);
        let lv = leaf(&mut tape, &[3], &[0.0, 0.0, 0.0]);
        assert!(gaussian_kl(&mut tape, mu, lv).is_err());
    }

    #[test]
    fn recon_nll_cases() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[1.0, 0.0]);
        let same = leaf(&mut tape, &[2], &[1.0, 0.0]);
        let r = recon_nll(&mut tape, x, same).unwrap();
        assert_eq!(tape.scalar_value(r).unwrap(), 0.0);

        let zero = leaf(&mut tape, &[2], &[0.0, 0.0]);
        let r = recon_nll(&mut tape, x, zero).unwrap();
        assert!((tape.scalar_value(r).unwrap() - 0.5).abs() < 1e-15);

        let x2 = leaf(&mut tape, &[2], &[2.0, 2.0]);
        let r = recon_nll(&mut tape, x2, zero).unwrap();
        assert!((tape.scalar_value(r).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn elbo_is_recon_plus_kl() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[1, 2], &[1.0, 0.0]);
        let xh = leaf(&mut tape, &[1, 2], &[0.0, 0.0]);
        let mu = leaf(&mut tape, &[1, 1], &[1.0]);
        let lv = leaf(&mut tape, &[1, 1], &[0.0]);
        let e = elbo_loss(&mut tape, x, xh, mu, lv).unwrap();
        assert!((tape.scalar_value(e).unwrap() - 1.0).abs() < 1e-15);

        // definitional: elbo == recon + kl on the same inputs
        let r = recon_nll(&mut tape, x, xh).unwrap();
        let k = gaussian_kl(&mut tape, mu, lv).unwrap();
        let sum = tape.scalar_value(r).unwrap() + tape.scalar_value(k).unwrap();
        assert_eq!(tape.scalar_value(e).unwrap(), sum);
    }

    #[test]
    fn total_loss_weight_annihilation_and_hand_value() {
        let w = LossWeights { lambda1: 1.0, lambda2: 0.0, tau: 0.5 };
        let b = total_loss(0.7, 2.0, 3.0, &w).unwrap();
        assert_eq!(b.total, 0.7);

        let w = LossWeights { lambda1: 0.0, lambda2: 1.0, tau: 0.5 };
        let b = total_loss(0.7, 2.0, 3.0, &w).unwrap();
        assert_eq!(b.total, 5.0);

        let w = LossWeights { lambda1: 1.0, lambda2: 0.5, tau: 0.5 };
        let b = total_loss(0.5, 2.0, 0.0, &w).unwrap();
        assert_eq!(b.total, 1.5);
        assert_eq!(b.nce, 0.5);
        assert_eq!(b.recon_nll, 2.0);
        assert_eq!(b.kl, 0.0);
    }

    #[test]
    fn total_loss_rejects_non_finite_and_bad_weights() {
        let w = LossWeights::default();
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0, &w), Err(LossError::NonFiniteLoss)));
        let zero = LossWeights { lambda1: 0.0, lambda2: 0.0, tau: 0.5 };
        assert!(matches!(total_loss(1.0, 1.0, 1.0, &zero), Err(LossError::InvalidWeights(_))));
        let neg = LossWeights { lambda1: -1.0, lambda2: 1.0, tau: 0.5 };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn combine_objective_matches_total_loss_value() {
        let w = LossWeights { lambda1: 0.7, lambda2: 1.3, tau: 0.5 };
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 2], &[0.4, -0.2, 1.0, 0.3]);
        let xh = leaf(&mut tape, &[2, 2], &[0.1, 0.1, 0.5, 0.2]);
        let mu = leaf(&mut tape, &[2, 2], &[0.3, -0.8, 0.2, 0.0]);
        let lv = leaf(&mut tape, &[2, 2], &[0.5, -0.5, 0.1, 0.2]);
        let v1 = leaf(&mut tape, &[2, 2], &[1.0, 0.2, -0.3, 0.8]);
        let v2 = leaf(&mut tape, &[2, 2], &[0.9, 0.3, -0.2, 0.7]);

        let nce = info_nce(&mut tape, v1, v2, w.tau).unwrap();
        let recon = recon_nll(&mut tape, x, xh).unwrap();
        let kl = gaussian_kl(&mut tape, mu, lv).unwrap();
        let elbo = tape.add(recon, kl).unwrap();
        let tot = combine_objective(&mut tape, Some(nce), Some(elbo), &w).unwrap();

        let breakdown = total_loss(
            tape.scalar_value(nce).unwrap(),
            tape.scalar_value(recon).unwrap(),
            tape.scalar_value(kl).unwrap(),
            &w,
        )
        .unwrap();
        assert_eq!(tape.scalar_value(tot).unwrap(), breakdown.total);
    }
}
