//! The outer training loop.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{gha_step, kcca_step, kpca_step, ksvd_step, BatchSource, FeatureTarget, StepStats, TrainConfig};
use crate::diagnostics::{sin2_subspace_empirical, DiagnosticsTrace};
use crate::error::{Error, Result};
use crate::kernel::{FeatureForm, KernelSpec};
use crate::linalg;
use crate::model::{CoefficientModel, PairedModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Kpca,
    Gha,
    Ksvd,
    Kcca,
}

impl Task {
    pub fn is_paired(self) -> bool {
        matches!(self, Task::Ksvd | Task::Kcca)
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Kpca => "kpca",
            Task::Gha => "gha",
            Task::Ksvd => "ksvd",
            Task::Kcca => "kcca",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kpca" => Ok(Task::Kpca),
            "gha" => Ok(Task::Gha),
            "ksvd" => Ok(Task::Ksvd),
            "kcca" => Ok(Task::Kcca),
            other => Err(Error::InvalidArgument(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Fitted {
    Single(CoefficientModel),
    Paired(PairedModel),
}

impl Fitted {
    pub fn single(&self) -> Option<&CoefficientModel> {
        match self {
            Fitted::Single(m) => Some(m),
            Fitted::Paired(_) => None,
        }
    }

    pub fn paired(&self) -> Option<&PairedModel> {
        match self {
            Fitted::Paired(p) => Some(p),
            Fitted::Single(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: Fitted,
    pub trace: DiagnosticsTrace,
}

/// Potential `1 - cos^2` of the current estimate against a reference.
pub trait PotentialProbe {
    fn single(&self, model: &CoefficientModel) -> Result<f64>;

    fn paired(&self, pair: &PairedModel) -> Result<f64>;
}

/// Reference evaluations on a fixed probe set; the potential is the
/// empirical `sin^2` of the largest principal angle.
#[derive(Debug, Clone)]
pub struct SubspaceProbe {
    pub points: DMatrix<f64>,
    pub reference: DMatrix<f64>,
}

impl SubspaceProbe {
    pub fn new(points: DMatrix<f64>, reference: DMatrix<f64>) -> Result<Self> {
        if points.nrows() != reference.nrows() {
            return Err(Error::DimensionMismatch { expected: points.nrows(), got: reference.nrows() });
        }
        Ok(Self { points, reference })
    }
}

impl PotentialProbe for SubspaceProbe {
    fn single(&self, model: &CoefficientModel) -> Result<f64> {
        sin2_subspace_empirical(&self.reference, &model.evaluate(&self.points)?)
    }

    /// Left side only.
    fn paired(&self, pair: &PairedModel) -> Result<f64> {
        self.single(&pair.left)
    }
}

/// Worse of the two sides of a paired model.
#[derive(Debug, Clone)]
pub struct PairedSubspaceProbe {
    pub left: SubspaceProbe,
    pub right: SubspaceProbe,
}

impl PotentialProbe for PairedSubspaceProbe {
    fn single(&self, model: &CoefficientModel) -> Result<f64> {
        self.left.single(model)
    }

    fn paired(&self, pair: &PairedModel) -> Result<f64> {
        Ok(self.left.single(&pair.left)?.max(self.right.single(&pair.right)?))
    }
}

enum State {
    Single(CoefficientModel),
    Paired(PairedModel),
}

/// Features in the initial block: one dimension's worth for the linear
/// kernel, otherwise one feature batch (at least `k`, even for paired
/// sin/cos features).
fn init_count(spec: &KernelSpec, config: &TrainConfig) -> usize {
    if !spec.family.is_fourier() {
        return spec.dim;
    }
    let n = config.feature_batch.max(config.k);
    if spec.feature_form == FeatureForm::SinCosPairs {
        n + n % 2
    } else {
        n
    }
}

fn check_spec(spec: &KernelSpec, config: &TrainConfig) -> Result<()> {
    if !spec.family.is_fourier() && config.k > spec.dim {
        return Err(Error::InvalidArgument(format!("k={} exceeds dim={}", config.k, spec.dim)));
    }
    Ok(())
}

/// Size of the `j`-th training block (0-based). Linear-kernel blocks are
/// always the identity on the input space.
fn block_count(spec: &KernelSpec, config: &TrainConfig, j: usize) -> usize {
    if !spec.family.is_fourier() {
        return spec.dim;
    }
    config.feature_batch.min(config.total_features - j * config.feature_batch)
}

fn with_iteration(e: Error, t: u64, stats: Option<StepStats>) -> Error {
    let max_abs_h = stats.map_or(f64::INFINITY, |s| s.max_abs_h);
    match e {
        Error::Divergence { max_abs_h, .. } => Error::Divergence { iteration: t, max_abs_h },
        Error::NonFinite(_) | Error::NonFiniteBlock { .. } => Error::Divergence { iteration: t, max_abs_h },
        other => other,
    }
}

/// Rotates the right model's coefficients by the orthogonal polar factor of
/// the cross moment `U^T V` on the first batch, so the pair starts with a
/// positive semidefinite `W`. The paired rules run away when `W` starts
/// strongly negative; a rotation keeps the seeded start otherwise intact.
fn orient_right(pair: &mut PairedModel, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    let u = pair.left.evaluate(x)?;
    let v = pair.right.evaluate(y)?;
    let svd = linalg::tr_mul(&u, &v).svd(true, true);
    let (p, rt) = match (svd.u, svd.v_t) {
        (Some(p), Some(rt)) => (p, rt),
        _ => return Err(Error::RankDeficient("cross moment of the first batch".into())),
    };
    pair.right.scale_all(&(rt.transpose() * p.transpose()))
}

/// Runs `config.iterations` steps of `task` on batches drawn from `source`.
///
/// Fresh feature blocks are appended until `total_features` is spent
/// (for the linear kernel each block is the identity on the input space and
/// the budget counts `total_features / feature_batch` blocks); after
/// that, with [`Revisit::Cycle`], the training blocks (every block but the
/// initial one) are revisited in ascending cyclic order. A trace point is
/// recorded every `trace_stride` steps and after the final step.
pub fn fit(
    task: Task,
    left_spec: &KernelSpec,
    right_spec: Option<&KernelSpec>,
    source: &mut dyn BatchSource,
    config: &TrainConfig,
    probe: Option<&dyn PotentialProbe>,
) -> Result<FitOutput> {
    config.validate()?;
    check_spec(left_spec, config)?;
    let (dx, dy) = source.dims();
    if dx != left_spec.dim {
        return Err(Error::DimensionMismatch { expected: left_spec.dim, got: dx });
    }
    let mut state = if task.is_paired() {
        let right_spec = right_spec
            .ok_or_else(|| Error::InvalidArgument(format!("{task} needs a right-view kernel")))?;
        check_spec(right_spec, config)?;
        let dy = dy.ok_or_else(|| Error::InvalidArgument(format!("{task} needs paired data")))?;
        if dy != right_spec.dim {
            return Err(Error::DimensionMismatch { expected: right_spec.dim, got: dy });
        }
        let mut pair = PairedModel::init(
            left_spec,
            right_spec,
            config.k,
            init_count(left_spec, config),
            init_count(right_spec, config),
            config.seed,
        )?;
        pair.left.set_store_frequencies(config.store_frequencies)?;
        pair.right.set_store_frequencies(config.store_frequencies)?;
        State::Paired(pair)
    } else {
        let mut m = CoefficientModel::init_with_stream(
            left_spec,
            config.k,
            init_count(left_spec, config),
            config.seed,
            0,
        )?;
        m.set_store_frequencies(config.store_frequencies)?;
        State::Single(m)
    };

    let fresh_blocks = config.training_blocks();
    let mut appended = 0usize;
    let mut revisits = 0usize;
    let mut trace = DiagnosticsTrace::default();
    let mut window_norm = 0.0f64;
    let start = Instant::now();

    let mut pending = None;
    if let (State::Paired(p), true) = (&mut state, config.iterations > 0) {
        let batch = source.next_batch(config.data_batch)?;
        let y = batch.y.as_ref().ok_or_else(|| Error::InvalidArgument("source produced no right view".into()))?;
        orient_right(p, &batch.x, y)?;
        pending = Some(batch);
    }

    for t in 1..=config.iterations {
        let eta = config.schedule.step_size(t)?;
        let batch = match pending.take() {
            Some(b) => b,
            None => source.next_batch(config.data_batch)?,
        };
        let fresh = appended < fresh_blocks;
        let target_for = |m: &CoefficientModel| -> Result<FeatureTarget> {
            if fresh {
                Ok(FeatureTarget::Append(m.next_block(block_count(m.spec(), config, appended))?))
            } else {
                FeatureTarget::revisit(m, 1 + revisits % fresh_blocks)
            }
        };
        let stats = match &mut state {
            State::Single(m) => {
                let target = target_for(m)?;
                let r = match task {
                    Task::Gha => gha_step(m, &batch.x, &target, eta),
                    _ => kpca_step(m, &batch.x, &target, eta),
                };
                r.map_err(|e| with_iteration(e, t, None))?
            }
            State::Paired(p) => {
                let y = batch.y.as_ref().ok_or_else(|| Error::InvalidArgument("source produced no right view".into()))?;
                let tx = target_for(&p.left)?;
                let ty = target_for(&p.right)?;
                let r = match task {
                    Task::Ksvd => ksvd_step(p, &batch.x, y, &tx, &ty, eta),
                    _ => kcca_step(p, &batch.x, y, &tx, &ty, eta, config.kcca_ridge),
                };
                r.map_err(|e| with_iteration(e, t, None))?
            }
        };
        if !stats.max_abs_h.is_finite() {
            return Err(Error::Divergence { iteration: t, max_abs_h: stats.max_abs_h });
        }
        if fresh {
            appended += 1;
        } else {
            revisits += 1;
        }
        window_norm = window_norm.max(stats.h_norm_max);

        if t % config.trace_stride == 0 || t == config.iterations {
            let potential = match (probe, &state) {
                (None, _) => Ok(f64::NAN),
                (Some(p), State::Single(m)) => p.single(m),
                (Some(p), State::Paired(pair)) => p.paired(pair),
            }
            .or_else(|e| match e {
                Error::RankDeficient(msg) => {
                    log::warn!("iteration {t}: potential undefined ({msg})");
                    Ok(f64::NAN)
                }
                other => Err(with_iteration(other, t, Some(stats))),
            })?;
            let seconds = if config.record_time { start.elapsed().as_secs_f64() } else { 0.0 };
            trace.push(t, potential, window_norm, seconds);
            window_norm = 0.0;
        }
    }

    let model = match state {
        State::Single(m) => Fitted::Single(m),
        State::Paired(p) => Fitted::Paired(p),
    };
    Ok(FitOutput { model, trace })
}
