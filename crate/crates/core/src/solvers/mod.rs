//! Doubly stochastic update rules and the fit driver.
//!
//! Every step evaluates the current functions on a data mini-batch,
//! multiplies all existing coefficients by a `k x k` correction and writes
//! one feature block of new coefficients, either appended or added into a
//! revisited block.

mod fit;
mod source;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::FeatureBlock;
use crate::linalg;
use crate::model::{CoefficientModel, PairedModel};

pub use fit::{fit, FitOutput, Fitted, PairedSubspaceProbe, PotentialProbe, SubspaceProbe, Task};
pub use source::{Batch, BatchSource, DatasetSampler, GaussianSource};

/// `eta_i = theta0 / (1 + theta1 * i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub theta0: f64,
    pub theta1: f64,
}

impl StepSchedule {
    pub fn new(theta0: f64, theta1: f64) -> Result<Self> {
        if !(theta0.is_finite() && theta0 > 0.0) {
            return Err(Error::InvalidArgument(format!("theta0 must be positive, got {theta0}")));
        }
        if !(theta1.is_finite() && theta1 >= 0.0) {
            return Err(Error::InvalidArgument(format!("theta1 must be non-negative, got {theta1}")));
        }
        Ok(Self { theta0, theta1 })
    }

    /// Step size at iteration `i >= 1`.
    pub fn step_size(&self, i: u64) -> Result<f64> {
        if i == 0 {
            return Err(Error::InvalidArgument("step sizes are indexed from 1".into()));
        }
        Ok(self.theta0 / (1.0 + self.theta1 * i as f64))
    }
}

/// What happens once the feature budget is spent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Revisit {
    /// Re-select training blocks in ascending cyclic order.
    Cycle,
    /// Stop at the budget; the run must fit inside it.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    WithReplacement,
    EpochShuffle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub k: usize,
    pub iterations: u64,
    pub data_batch: usize,
    pub feature_batch: usize,
    pub total_features: usize,
    pub schedule: StepSchedule,
    pub seed: u64,
    pub revisit: Revisit,
    pub sampling: Sampling,
    pub trace_stride: u64,
    pub store_frequencies: bool,
    /// Ridge on the within-view second moments of the CCA rule.
    pub kcca_ridge: f64,
    /// Record wall-clock seconds in the trace (otherwise 0, keeping traces
    /// byte-reproducible).
    pub record_time: bool,
}

impl TrainConfig {
    pub fn new(k: usize, iterations: u64, schedule: StepSchedule, seed: u64) -> Self {
        Self {
            k,
            iterations,
            data_batch: 1,
            feature_batch: 1,
            total_features: 1,
            schedule,
            seed,
            revisit: Revisit::Cycle,
            sampling: Sampling::EpochShuffle,
            trace_stride: 100,
            store_frequencies: false,
            kcca_ridge: 0.0,
            record_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.data_batch == 0 || self.feature_batch == 0 {
            return bad("batch sizes must be at least 1".into());
        }
        if self.total_features < self.feature_batch {
            return bad(format!(
                "total_features {} is smaller than the feature batch {}",
                self.total_features, self.feature_batch
            ));
        }
        if self.revisit == Revisit::None
            && self.iterations.saturating_mul(self.feature_batch as u64) > self.total_features as u64
        {
            return bad("without revisiting, iterations x feature_batch must fit in total_features".into());
        }
        if self.trace_stride == 0 {
            return bad("trace stride must be at least 1".into());
        }
        if !(self.kcca_ridge >= 0.0 && self.kcca_ridge.is_finite()) {
            return bad(format!("ridge must be non-negative, got {}", self.kcca_ridge));
        }
        Ok(())
    }

    /// Number of distinct training blocks drawn over the whole run.
    pub fn training_blocks(&self) -> usize {
        let budget = (self.iterations.saturating_mul(self.feature_batch as u64))
            .min(self.total_features as u64) as usize;
        budget.div_ceil(self.feature_batch)
    }
}

/// Where the new coefficients of a step go.
#[derive(Debug, Clone)]
pub enum FeatureTarget {
    /// A fresh block appended at the end of the model.
    Append(FeatureBlock),
    /// An existing block at position `pos` whose coefficients are adjusted.
    Revisit { pos: usize, block: FeatureBlock },
}

impl FeatureTarget {
    pub fn block(&self) -> &FeatureBlock {
        match self {
            FeatureTarget::Append(b) | FeatureTarget::Revisit { block: b, .. } => b,
        }
    }

    /// Revisit target for the block at `pos` of `model`.
    pub fn revisit(model: &CoefficientModel, pos: usize) -> Result<Self> {
        Ok(FeatureTarget::Revisit { pos, block: model.feature_block(pos)?.into_owned() })
    }

    fn apply(&self, model: &mut CoefficientModel, alpha: DMatrix<f64>) -> Result<()> {
        match self {
            FeatureTarget::Append(b) => model.append_block(b, alpha),
            FeatureTarget::Revisit { pos, .. } => model.add_to_block(*pos, &alpha),
        }
    }
}

/// Per-step magnitudes reported to the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub max_abs_h: f64,
    /// Largest column root-mean-square of the batch evaluations.
    pub h_norm_max: f64,
}

fn evaluate_checked(model: &CoefficientModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match model.evaluate(x) {
        Ok(h) => Ok(h),
        Err(Error::NonFiniteBlock { .. }) => {
            Err(Error::Divergence { iteration: 0, max_abs_h: f64::INFINITY })
        }
        Err(e) => Err(e),
    }
}

fn stats(h: &DMatrix<f64>) -> StepStats {
    let rows = h.nrows().max(1) as f64;
    let h_norm_max = h
        .column_iter()
        .map(|c| (c.iter().map(|v| v * v).sum::<f64>() / rows).sqrt())
        .fold(0.0, f64::max);
    StepStats { max_abs_h: h.amax(), h_norm_max }
}

fn identity_minus(eta: f64, c: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::identity(c.nrows(), c.ncols()) - c * eta
}

fn oja_step(
    model: &mut CoefficientModel,
    x: &DMatrix<f64>,
    target: &FeatureTarget,
    eta: f64,
    triangular: bool,
) -> Result<StepStats> {
    let h = evaluate_checked(model, x)?;
    let st = stats(&h);
    if eta == 0.0 {
        return Ok(st);
    }
    let b = x.nrows() as f64;
    let mut c = linalg::tr_mul(&h, &h) / b;
    if triangular {
        c = linalg::upper_triangular(&c);
    }
    let phi = target.block().feature_matrix(x)?;
    let alpha_new = linalg::tr_mul(&phi, &h) * (eta / b);
    model.scale_all(&identity_minus(eta, &c))?;
    target.apply(model, alpha_new)?;
    Ok(st)
}

/// Doubly stochastic kernel PCA step:
/// `H <- H (I - eta H^T H / B) + eta phi(.) phi(X)^T H / B`.
pub fn kpca_step(
    model: &mut CoefficientModel,
    x: &DMatrix<f64>,
    target: &FeatureTarget,
    eta: f64,
) -> Result<StepStats> {
    oja_step(model, x, target, eta, false)
}

/// Generalized Hebbian step: as [`kpca_step`] with the correction matrix's
/// strictly lower triangle zeroed, which separates individual
/// eigenfunctions in column order.
pub fn gha_step(
    model: &mut CoefficientModel,
    x: &DMatrix<f64>,
    target: &FeatureTarget,
    eta: f64,
) -> Result<StepStats> {
    oja_step(model, x, target, eta, true)
}

fn paired_eval(pair: &PairedModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    if x.nrows() != y.nrows() {
        return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.nrows() });
    }
    let u = evaluate_checked(&pair.left, x)?;
    let v = evaluate_checked(&pair.right, y)?;
    let m = linalg::tr_mul(&u, &v);
    let w = (&m + m.transpose()) / x.nrows() as f64;
    Ok((u, v, w))
}

fn paired_stats(u: &DMatrix<f64>, v: &DMatrix<f64>) -> StepStats {
    let (a, b) = (stats(u), stats(v));
    StepStats { max_abs_h: a.max_abs_h.max(b.max_abs_h), h_norm_max: a.h_norm_max.max(b.h_norm_max) }
}

/// Kernel SVD step on paired samples: each side receives the other side's
/// evaluations as new coefficients and both shrink by `I - eta W`.
pub fn ksvd_step(
    pair: &mut PairedModel,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    target_x: &FeatureTarget,
    target_y: &FeatureTarget,
    eta: f64,
) -> Result<StepStats> {
    let (u, v, w) = paired_eval(pair, x, y)?;
    let st = paired_stats(&u, &v);
    if eta == 0.0 {
        return Ok(st);
    }
    let b = x.nrows() as f64;
    let phi_x = target_x.block().feature_matrix(x)?;
    let phi_y = target_y.block().feature_matrix(y)?;
    let alpha_x = linalg::tr_mul(&phi_x, &v) * (eta / b);
    let alpha_y = linalg::tr_mul(&phi_y, &u) * (eta / b);
    let shrink = identity_minus(eta, &w);
    pair.left.scale_all(&shrink)?;
    pair.right.scale_all(&shrink)?;
    target_x.apply(&mut pair.left, alpha_x)?;
    target_y.apply(&mut pair.right, alpha_y)?;
    Ok(st)
}

/// Kernel CCA step: the whole correction lives in the new coefficients,
/// `eta phi_x(X)^T (V - U W) / B` on the left and symmetrically on the
/// right; old coefficients are left alone. A positive `ridge` adds
/// `ridge (U^T U + V^T V) / B` to `W`.
pub fn kcca_step(
    pair: &mut PairedModel,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    target_x: &FeatureTarget,
    target_y: &FeatureTarget,
    eta: f64,
    ridge: f64,
) -> Result<StepStats> {
    let (u, v, mut w) = paired_eval(pair, x, y)?;
    let st = paired_stats(&u, &v);
    if eta == 0.0 {
        return Ok(st);
    }
    let b = x.nrows() as f64;
    if ridge > 0.0 {
        w += (linalg::tr_mul(&u, &u) + linalg::tr_mul(&v, &v)) * (ridge / b);
    }
    let phi_x = target_x.block().feature_matrix(x)?;
    let phi_y = target_y.block().feature_matrix(y)?;
    let resid_x = &v - linalg::mul(&u, &w);
    let resid_y = &u - linalg::mul(&v, &w);
    let alpha_x = linalg::tr_mul(&phi_x, &resid_x) * (eta / b);
    let alpha_y = linalg::tr_mul(&phi_y, &resid_y) * (eta / b);
    target_x.apply(&mut pair.left, alpha_x)?;
    target_y.apply(&mut pair.right, alpha_y)?;
    Ok(st)
}
