//! Unlearning methods for the frozen-extractor classifier head.
//!
//! All iterative methods move only the head parameters with full-batch steps
//! over the forget set (an optional mini-batch mode splits each epoch into
//! seeded chunks). Per-sample step coefficients are what distinguish them:
//!
//! * `imu`     — ascent weighted by normalized influence scores, optional L1
//! * `ga`      — plain ascent on the mean forget loss
//! * `rl`      — descent toward random incorrect labels
//! * `npo`     — ascent weighted by `W = 2 π^β / (π^β + π_ref^β)` per sample
//! * `simnpo`  — reference-free variant, `W = 2 π^β / (1 + π^β)`
//! * `newton`  — one closed-form removal step
//! * `retrain` — from-scratch training on the retain set (the gold standard)
//!
//! Each run evaluates after every epoch and returns the full trajectory.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{HessianOracle, InfluenceReport};
use crate::metrics::{evaluate, EvalContext, EvalReport};
use crate::model::{
    grad_matrix, mean_grad, per_sample_losses, train_classifier, ClassifierState, TrainConfig,
    TrainSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Imu,
    Ga,
    Rl,
    Npo,
    Simnpo,
    Newton,
    Retrain,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Imu,
        Method::Ga,
        Method::Rl,
        Method::Npo,
        Method::Simnpo,
        Method::Newton,
        Method::Retrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Imu => "imu",
            Method::Ga => "ga",
            Method::Rl => "rl",
            Method::Npo => "npo",
            Method::Simnpo => "simnpo",
            Method::Newton => "newton",
            Method::Retrain => "retrain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::parameter(format!("unknown method '{s}'")))
    }
}

/// How the influence-weighted method assigns its per-sample weights.
/// `Uniform` bypasses influence entirely (1/m on every sample) — the
/// diagnostic mode in which one weighted-ascent step must match plain
/// gradient ascent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Influence,
    Uniform,
}

fn default_top_ratio() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    1.0
}
fn default_percentile() -> f64 {
    95.0
}
fn default_damping() -> f64 {
    1e-3
}
fn default_weighting() -> Weighting {
    Weighting::Influence
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub method: Method,
    /// Step size η.
    pub eta: f64,
    /// Epoch count T.
    pub epochs: usize,
    /// Influence refresh period ν: 0 scores once at the first epoch,
    /// k >= 1 rescores every k epochs.
    #[serde(default)]
    pub refresh_every: usize,
    /// Keep only the ⌈r·k⌉ most influential selected samples, r in (0, 1].
    #[serde(default = "default_top_ratio")]
    pub top_ratio: f64,
    /// Preference sharpness β for npo/simnpo.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// L1 coefficient α on the head parameters (imu only).
    #[serde(default)]
    pub l1: f64,
    /// Truncation percentile q for the influence weights.
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    /// Hessian damping λ for imu/newton.
    #[serde(default = "default_damping")]
    pub damping: f64,
    /// Seed for random labels and mini-batch order.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    /// None = full batch; Some(b) splits each epoch into seeded chunks with
    /// step coefficients still scaled as in the full-batch objective.
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl UnlearnConfig {
    pub fn new(method: Method, eta: f64, epochs: usize) -> Self {
        UnlearnConfig {
            method,
            eta,
            epochs,
            refresh_every: 0,
            top_ratio: default_top_ratio(),
            beta: default_beta(),
            l1: 0.0,
            percentile: default_percentile(),
            damping: default_damping(),
            seed: 0,
            weighting: default_weighting(),
            batch_size: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::parameter("eta must be finite and non-negative"));
        }
        if self.epochs == 0 {
            return Err(Error::parameter("epochs must be positive"));
        }
        if !(self.top_ratio > 0.0 && self.top_ratio <= 1.0) {
            return Err(Error::parameter(format!(
                "top_ratio must lie in (0, 1], got {}",
                self.top_ratio
            )));
        }
        if matches!(self.method, Method::Npo | Method::Simnpo) && !(self.beta > 0.0) {
            return Err(Error::parameter("beta must be positive for npo/simnpo"));
        }
        if !(self.l1 >= 0.0) {
            return Err(Error::parameter("l1 must be nonnegative"));
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return Err(Error::parameter("percentile must lie in [0, 100]"));
        }
        if matches!(self.method, Method::Imu | Method::Newton) && !(self.damping > 0.0) {
            return Err(Error::parameter("damping must be positive for imu/newton"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::parameter("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Trajectory and outcome of one unlearning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnlearnRun {
    pub method: Method,
    pub initial: EvalReport,
    pub final_report: EvalReport,
    /// One report per epoch (newton and retrain produce exactly one).
    pub per_epoch: Vec<EvalReport>,
    /// Influence refreshes, stamped with the epoch they occurred at.
    pub weight_history: Vec<(usize, InfluenceReport)>,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
    #[serde(skip)]
    pub model: Option<ClassifierState>,
}

impl UnlearnRun {
    /// The unlearned head; present on every run the library constructs.
    pub fn model(&self) -> &ClassifierState {
        self.model.as_ref().expect("run carries its model")
    }
}

/// ν = 0 refreshes only at the first epoch; ν = k at epochs 0, k, 2k, ...
fn refresh_due(epoch: usize, nu: usize) -> bool {
    epoch == 0 || (nu >= 1 && epoch % nu == 0)
}

/// Epoch chunking: one full-batch chunk, or seeded shuffled mini-batches.
fn epoch_chunks(m: usize, batch_size: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    match batch_size {
        None => vec![(0..m).collect()],
        Some(b) => {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(rng);
            order.chunks(b).map(|c| c.to_vec()).collect()
        }
    }
}

/// θ += η Σ_{i in chunk} coeff_i g_i − η·l1·sign(θ), gradients at current θ.
fn apply_weighted_step(
    cls: &mut ClassifierState,
    fz: &Array2<f64>,
    labels: &[usize],
    chunk: &[usize],
    coeffs: &[f64],
    eta: f64,
    l1: f64,
) -> Result<()> {
    let mut zc = Array2::zeros((chunk.len(), fz.ncols()));
    let mut yc = Vec::with_capacity(chunk.len());
    for (row, &i) in chunk.iter().enumerate() {
        zc.row_mut(row).assign(&fz.row(i));
        yc.push(labels[i]);
    }
    let g = grad_matrix(cls, &zc, &yc)?;
    let w = Array1::from_iter(chunk.iter().map(|&i| coeffs[i]));
    let step = g.t().dot(&w);
    let mut theta = cls.flatten();
    theta.scaled_add(eta, &step);
    if l1 > 0.0 {
        theta.zip_mut_with(&cls.flatten(), |t, &old| {
            *t -= eta * l1 * old.signum() * if old == 0.0 { 0.0 } else { 1.0 };
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("unlearning step produced non-finite parameters"));
    }
    cls.assign_flat(theta.view());
    Ok(())
}

/// Influence-weighted ascent: maximizes the influence-weighted forget loss
/// (optionally L1-regularized), refreshing scores on the configured schedule.
pub fn run_imu(
    model: &ClassifierState,
    ctx: &EvalContext,
    forget_indices: Option<&[usize]>,
    cfg: &UnlearnConfig,
) -> Result<UnlearnRun> {
    cfg.validate()?;
    let (fz, fy) = ctx.forget;
    let m = fz.nrows();
    let default_idx: Vec<usize> = (0..m).collect();
    let indices = forget_indices.unwrap_or(&default_idx);
    if indices.len() != m {
        return Err(Error::parameter("forget_indices length mismatch"));
    }
    let started = Instant::now();
    let initial = evaluate(model, ctx, 0.0)?;
    let mut cls = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    let mut weight_history = Vec::new();
    let mut warnings = Vec::new();
    let mut weights: Vec<f64> = vec![1.0 / m as f64; m];
    for t in 0..cfg.epochs {
        if cfg.weighting == Weighting::Influence && refresh_due(t, cfg.refresh_every) {
            let report = InfluenceReport::compute(
                &cls,
                fz,
                fy,
                indices,
                cfg.damping,
                cfg.top_ratio,
                cfg.percentile,
            )?;
            if report.uniform_fallback {
                warnings.push(format!(
                    "epoch {t}: no negative influence scores; fell back to uniform weights"
                ));
            }
            weights = report.weights.clone();
            weight_history.push((t, report));
        }
        for chunk in epoch_chunks(m, cfg.batch_size, &mut rng) {
            apply_weighted_step(&mut cls, fz, fy, &chunk, &weights, cfg.eta, cfg.l1)?;
        }
        per_epoch.push(evaluate(&cls, ctx, started.elapsed().as_secs_f64())?);
    }
    finish(Method::Imu, initial, per_epoch, weight_history, warnings, started, cls)
}

/// Plain gradient ascent on the mean forget loss.
pub fn run_ga(model: &ClassifierState, ctx: &EvalContext, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    cfg.validate()?;
    let (fz, fy) = ctx.forget;
    let m = fz.nrows();
    let started = Instant::now();
    let initial = evaluate(model, ctx, 0.0)?;
    let mut cls = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for chunk in epoch_chunks(m, cfg.batch_size, &mut rng) {
            let (zc, yc) = take_rows(fz, fy, &chunk);
            let g = mean_grad(&cls, &zc, &yc)?;
            let scale = cfg.eta * chunk.len() as f64 / m as f64;
            let mut theta = cls.flatten();
            theta.scaled_add(scale, &g);
            guard_finite(&theta)?;
            cls.assign_flat(theta.view());
        }
        per_epoch.push(evaluate(&cls, ctx, started.elapsed().as_secs_f64())?);
    }
    finish(Method::Ga, initial, per_epoch, vec![], vec![], started, cls)
}

/// Random-label descent: each forget sample gets a fixed random incorrect
/// label (seeded once up front), then ordinary cross-entropy descent.
pub fn run_rl(model: &ClassifierState, ctx: &EvalContext, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    cfg.validate()?;
    let (fz, fy) = ctx.forget;
    let m = fz.nrows();
    let c_n = model.class_count();
    if c_n < 2 {
        return Err(Error::parameter("random labeling needs at least two classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let relabeled: Vec<usize> = fy
        .iter()
        .map(|&y| {
            let draw = rng.random_range(0..c_n - 1);
            if draw >= y {
                draw + 1
            } else {
                draw
            }
        })
        .collect();
    let started = Instant::now();
    let initial = evaluate(model, ctx, 0.0)?;
    let mut cls = model.clone();
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for chunk in epoch_chunks(m, cfg.batch_size, &mut rng) {
            let (zc, yc) = take_rows(fz, &relabeled, &chunk);
            let g = mean_grad(&cls, &zc, &yc)?;
            let scale = -cfg.eta * chunk.len() as f64 / m as f64; // descent
            let mut theta = cls.flatten();
            theta.scaled_add(scale, &g);
            guard_finite(&theta)?;
            cls.assign_flat(theta.view());
        }
        per_epoch.push(evaluate(&cls, ctx, started.elapsed().as_secs_f64())?);
    }
    finish(Method::Rl, initial, per_epoch, vec![], vec![], started, cls)
}

/// Adaptive preference weights against a frozen reference:
/// `W_i = 2 σ(β (ℓ_ref,i − ℓ_i)) = 2 π_i^β / (π_i^β + π_ref,i^β)`,
/// computed in log space so saturated heads cannot overflow. W lies in
/// (0, 2); at π = π_ref it is exactly 1 and one step reduces to ascent.
fn npo_coeffs(beta: f64, ref_losses: &[f64], losses: &[f64], m: usize) -> Vec<f64> {
    losses
        .iter()
        .zip(ref_losses)
        .map(|(&l, &lr)| {
            let w = 2.0 / (1.0 + (-beta * (lr - l)).exp());
            w / m as f64
        })
        .collect()
}

/// Preference-style ascent with the reference frozen at the initial model.
pub fn run_npo(model: &ClassifierState, ctx: &EvalContext, cfg: &UnlearnConfig) -> Result<UnlearnRun> {
    cfg.validate()?;
    let (fz, fy) = ctx.forget;
    let m = fz.nrows();
    // ℓ_ref = −log π_ref under the pre-unlearning model; the probability
    // floor keeps the frozen reference finite even if it saturated.
    let ref_losses: Vec<f64> = per_sample_losses(model, fz, fy)?
        .into_iter()
        .map(|l| l.min(-(crate::metrics::KL_PROB_FLOOR.ln())))
        .collect();
    let started = Instant::now();
    let initial = evaluate(model, ctx, 0.0)?;
    let mut cls = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for chunk in epoch_chunks(m, cfg.batch_size, &mut rng) {
            let losses = per_sample_losses(&cls, fz, fy)?;
            let coeffs = npo_coeffs(cfg.beta, &ref_losses, &losses, m);
            apply_weighted_step(&mut cls, fz, fy, &chunk, &coeffs, cfg.eta, 0.0)?;
        }
        per_epoch.push(evaluate(&cls, ctx, started.elapsed().as_secs_f64())?);
    }
    finish(Method::Npo, initial, per_epoch, vec![], vec![], started, cls)
}

/// Reference-free preference weights `W_i = 2 σ(−β ℓ_i) = 2 π_i^β / (1 + π_i^β)`:
/// fades each sample out as it becomes forgotten (π → 0 ⇒ W → 0).
fn simnpo_coeffs(beta: f64, losses: &[f64], m: usize) -> Vec<f64> {
    losses
        .iter()
        .map(|&l| 2.0 / (1.0 + (beta * l).exp()) / m as f64)
        .collect()
}

pub fn run_simnpo(
    model: &ClassifierState,
    ctx: &EvalContext,
    cfg: &UnlearnConfig,
) -> Result<UnlearnRun> {
    cfg.validate()?;
    let (fz, fy) = ctx.forget;
    let m = fz.nrows();
    let started = Instant::now();
    let initial = evaluate(model, ctx, 0.0)?;
    let mut cls = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_epoch = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        for chunk in epoch_chunks(m, cfg.batch_size, &mut rng) {
            let losses = per_sample_losses(&cls, fz, fy)?;
            let coeffs = simnpo_coeffs(cfg.beta, &losses, m);
            apply_weighted_step(&mut cls, fz, fy, &chunk, &coeffs, cfg.eta, 0.0)?;
        }
        per_epoch.push(evaluate(&cls, ctx, started.elapsed().as_secs_f64())?);
    }
    finish(Method::Simnpo, initial, per_epoch, vec![], vec![], started, cls)
}

/// The closed-form removal displacement `(m / n_retained) H⁻¹ ḡ_f`.
/// Exactly linear in the mean forget gradient for a fixed factorization.
pub fn newton_delta(
    oracle: &HessianOracle,
    mean_forget_grad: &Array1<f64>,
    m: usize,
    n_retained: usize,
) -> Result<Array1<f64>> {
    if n_retained == 0 {
        return Err(Error::parameter("newton removal needs a non-empty retain set"));
    }
    let mut delta = oracle.solve(mean_forget_grad)?;
    delta *= m as f64 / n_retained as f64;
    Ok(delta)
}

/// One-step Newton removal: θ ← θ + (m/n_retained) H⁻¹ ḡ_f, with H estimated
/// retain-free from the forget features themselves (damped). An empty forget
/// set returns the head unchanged.
pub fn newton_removal(
    model: &ClassifierState,
    forget_z: &Array2<f64>,
    forget_y: &[usize],
    n_retained: usize,
    damping: f64,
) -> Result<ClassifierState> {
    if forget_z.nrows() == 0 {
        return Ok(model.clone());
    }
    let oracle = HessianOracle::new(model, forget_z, damping)?;
    let gbar = mean_grad(model, forget_z, forget_y)?;
    let delta = newton_delta(&oracle, &gbar, forget_z.nrows(), n_retained)?;
    let mut theta = model.flatten();
    theta += &delta;
    guard_finite(&theta)?;
    let mut cls = model.clone();
    cls.assign_flat(theta.view());
    Ok(cls)
}

/// From-scratch training on the retain set: the reference every approximate
/// method is judged against.
pub fn retrain_oracle(
    model: &ClassifierState,
    ctx: &EvalContext,
    train_cfg: &TrainConfig,
) -> Result<(ClassifierState, TrainSummary)> {
    let (rz, ry) = ctx.retain;
    train_classifier(
        rz,
        ry,
        model.class_count(),
        model.extractor.clone(),
        train_cfg,
    )
}

/// Dispatch on `cfg.method`. `train_cfg` is consulted by `retrain` (full
/// optimization) and `newton` (nothing beyond the damping in `cfg`).
pub fn run_unlearning(
    model: &ClassifierState,
    ctx: &EvalContext,
    forget_indices: Option<&[usize]>,
    cfg: &UnlearnConfig,
    train_cfg: &TrainConfig,
) -> Result<UnlearnRun> {
    match cfg.method {
        Method::Imu => run_imu(model, ctx, forget_indices, cfg),
        Method::Ga => run_ga(model, ctx, cfg),
        Method::Rl => run_rl(model, ctx, cfg),
        Method::Npo => run_npo(model, ctx, cfg),
        Method::Simnpo => run_simnpo(model, ctx, cfg),
        Method::Newton => {
            cfg.validate()?;
            let started = Instant::now();
            let initial = evaluate(model, ctx, 0.0)?;
            let cls = newton_removal(
                model,
                ctx.forget.0,
                ctx.forget.1,
                ctx.retain.1.len(),
                cfg.damping,
            )?;
            let report = evaluate(&cls, ctx, started.elapsed().as_secs_f64())?;
            finish(Method::Newton, initial, vec![report], vec![], vec![], started, cls)
        }
        Method::Retrain => {
            cfg.validate()?;
            let started = Instant::now();
            let initial = evaluate(model, ctx, 0.0)?;
            let (cls, summary) = retrain_oracle(model, ctx, train_cfg)?;
            let mut warnings = Vec::new();
            if !summary.converged {
                warnings.push(format!(
                    "retrain stopped at grad norm {:e} > tol {:e}",
                    summary.final_grad_norm, train_cfg.tol
                ));
            }
            let report = evaluate(&cls, ctx, started.elapsed().as_secs_f64())?;
            finish(Method::Retrain, initial, vec![report], vec![], warnings, started, cls)
        }
    }
}

fn finish(
    method: Method,
    initial: EvalReport,
    per_epoch: Vec<EvalReport>,
    weight_history: Vec<(usize, InfluenceReport)>,
    warnings: Vec<String>,
    started: Instant,
    model: ClassifierState,
) -> Result<UnlearnRun> {
    let final_report = *per_epoch
        .last()
        .ok_or_else(|| Error::parameter("run produced no epochs"))?;
    Ok(UnlearnRun {
        method,
        initial,
        final_report,
        per_epoch,
        weight_history,
        warnings,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        model: Some(model),
    })
}

fn take_rows(z: &Array2<f64>, y: &[usize], rows: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut zc = Array2::zeros((rows.len(), z.ncols()));
    let mut yc = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        zc.row_mut(r).assign(&z.row(i));
        yc.push(y[i]);
    }
    (zc, yc)
}

fn guard_finite(theta: &Array1<f64>) -> Result<()> {
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("unlearning produced non-finite parameters"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EvalContext;
    use crate::model::{extract_features, safe_learning_rate, ExtractorSpec};
    use crate::synth::{gen_gaussian_classes, make_split, take_subset, SplitMode};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    struct Desk {
        model: ClassifierState,
        fz: Array2<f64>,
        fy: Vec<usize>,
        rz: Array2<f64>,
        ry: Vec<usize>,
        tz: Array2<f64>,
        ty: Vec<usize>,
        train_cfg: TrainConfig,
    }

    impl Desk {
        fn ctx(&self) -> EvalContext<'_> {
            EvalContext {
                forget: (&self.fz, &self.fy),
                retain: (&self.rz, &self.ry),
                test: (&self.tz, &self.ty),
                reference: None,
                kl_probe: None,
            }
        }
    }

    /// Small class-wise forgetting problem: 3 Gaussians, class 2 forgotten.
    fn desk(seed: u64) -> Desk {
        let ds = gen_gaussian_classes(3, 8, 30, 0.4, seed).unwrap();
        let spec = ExtractorSpec::random_relu(8, 12, seed ^ 1);
        let z = extract_features(&spec, &ds.features).unwrap();
        let split = make_split(&ds, SplitMode::ClassWise { target: 2 }).unwrap();
        let train: Vec<usize> = split.forget.iter().chain(&split.retain).copied().collect();
        let (tz_raw, ty) = take_subset(&ds, &train);
        let tz_feat = extract_features(&spec, &tz_raw).unwrap();
        let train_cfg = TrainConfig {
            learning_rate: safe_learning_rate(&z, 1e-3),
            max_epochs: 60_000,
            tol: 1e-6,
            l2: 1e-3,
        };
        let (model, s) = train_classifier(&tz_feat, &ty, 3, spec.clone(), &train_cfg).unwrap();
        assert!(s.converged);
        let gather = |idx: &[usize]| {
            let (raw, y) = take_subset(&ds, idx);
            (extract_features(&spec, &raw).unwrap(), y)
        };
        let (fz, fy) = gather(&split.forget);
        let (rz, ry) = gather(&split.retain);
        // Utility on unseen data is judged on retained classes only.
        let test_keep: Vec<usize> = split
            .test
            .iter()
            .copied()
            .filter(|&i| ds.labels[i] != 2)
            .collect();
        let (tz, ty) = gather(&test_keep);
        Desk {
            model,
            fz,
            fy,
            rz,
            ry,
            tz,
            ty,
            train_cfg,
        }
    }

    #[test]
    fn uniform_weighted_ascent_equals_plain_ascent() {
        let d = desk(3);
        let ctx = d.ctx();
        let mut cfg = UnlearnConfig::new(Method::Imu, 0.05, 5);
        cfg.weighting = Weighting::Uniform;
        let imu = run_imu(&d.model, &ctx, None, &cfg).unwrap();
        let ga = run_ga(&d.model, &ctx, &UnlearnConfig::new(Method::Ga, 0.05, 5)).unwrap();
        let dist = (&imu.model().flatten() - &ga.model().flatten())
            .mapv(|v| v * v)
            .sum()
            .sqrt();
        assert!(dist <= 1e-10, "trajectories diverged by {dist:e}");
    }

    #[test]
    fn every_method_raises_forget_loss() {
        let d = desk(7);
        let ctx = d.ctx();
        for method in Method::ALL {
            let mut cfg = UnlearnConfig::new(method, 0.4, 30);
            cfg.beta = 0.5;
            let run = run_unlearning(&d.model, &ctx, None, &cfg, &d.train_cfg).unwrap();
            assert!(
                run.final_report.loss_forget >= run.initial.loss_forget,
                "{}: forget loss fell from {} to {}",
                method.name(),
                run.initial.loss_forget,
                run.final_report.loss_forget
            );
        }
    }

    #[test]
    fn trajectory_has_one_report_per_epoch() {
        let d = desk(5);
        let ctx = d.ctx();
        let cfg = UnlearnConfig::new(Method::Ga, 0.1, 7);
        let run = run_ga(&d.model, &ctx, &cfg).unwrap();
        assert_eq!(run.per_epoch.len(), 7);
        let newton = run_unlearning(
            &d.model,
            &ctx,
            None,
            &UnlearnConfig::new(Method::Newton, 1.0, 1),
            &d.train_cfg,
        )
        .unwrap();
        assert_eq!(newton.per_epoch.len(), 1);
    }

    #[test]
    fn npo_weight_is_one_at_the_reference() {
        // π = π_ref ⇒ W = 2σ(0) = 1 exactly.
        let coeffs = npo_coeffs(0.7, &[0.42], &[0.42], 1);
        assert!((coeffs[0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn npo_weight_matches_hand_arithmetic() {
        // β=1, π=0.8, π_ref=0.4: W = 2π/(π+π_ref) = 4/3.
        let coeffs = npo_coeffs(1.0, &[-(0.4f64.ln())], &[-(0.8f64.ln())], 1);
        assert_abs_diff_eq!(coeffs[0], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn npo_first_step_approaches_ascent_as_beta_vanishes() {
        let d = desk(11);
        let ctx = d.ctx();
        let mut cfg = UnlearnConfig::new(Method::Npo, 0.05, 1);
        cfg.beta = 1e-4;
        let npo = run_npo(&d.model, &ctx, &cfg).unwrap();
        let ga = run_ga(&d.model, &ctx, &UnlearnConfig::new(Method::Ga, 0.05, 1)).unwrap();
        let base = d.model.flatten();
        let step_npo = &npo.model().flatten() - &base;
        let step_ga = &ga.model().flatten() - &base;
        let cos = step_npo.dot(&step_ga)
            / (step_npo.dot(&step_npo).sqrt() * step_ga.dot(&step_ga).sqrt());
        assert!(cos >= 0.999, "cosine {cos}");
    }

    #[test]
    fn npo_gradient_routes_agree() {
        // Route A: numerically safe weights W = 2σ(β(ℓ_ref − ℓ)).
        // Route B: direct chain rule through π and ∇π = −π g, no log tricks.
        let mut cls = ClassifierState::zeros(3, ExtractorSpec::identity(2));
        cls.weights = array![[0.4, -0.1], [0.2, 0.3], [-0.5, 0.6]];
        cls.bias = array![0.05, -0.2, 0.1];
        let fz = array![[0.8, -0.3], [0.1, 0.9], [-0.7, 0.2], [0.5, 0.5]];
        let fy = [0usize, 2, 1, 1];
        let beta = 0.8;
        let mut reference = cls.clone();
        reference.bias = array![0.0, 0.1, -0.1];
        let ref_losses = per_sample_losses(&reference, &fz, &fy).unwrap();
        let losses = per_sample_losses(&cls, &fz, &fy).unwrap();
        let m = fz.nrows();
        let coeffs = npo_coeffs(beta, &ref_losses, &losses, m);
        let g = grad_matrix(&cls, &fz, &fy).unwrap();
        let route_a = g.t().dot(&Array1::from_vec(coeffs.clone())); // Σ (W_i/m) g_i
        // Route B: dL/dθ = (2/β)(1/m) Σ d/dθ log(1 + r^β) with r = π/π_ref,
        // d r^β/dθ = β r^(β−1) ∇π / π_ref and ∇π = −π g. Ascent direction is
        // −dL/dθ, which must equal route A.
        let probs_now: Vec<f64> = losses.iter().map(|l| (-l).exp()).collect();
        let probs_ref: Vec<f64> = ref_losses.iter().map(|l| (-l).exp()).collect();
        let mut route_b = Array1::<f64>::zeros(route_a.len());
        for i in 0..m {
            let r = probs_now[i] / probs_ref[i];
            let dl_dpi = (2.0 / beta) * (beta * r.powf(beta - 1.0) / probs_ref[i])
                / (1.0 + r.powf(beta));
            let gi = g.row(i);
            // ∇π_i = −π_i g_i, so −dL/dθ contribution is +dl_dpi·π_i·g_i/m.
            for q in 0..route_b.len() {
                route_b[q] += dl_dpi * probs_now[i] * gi[q] / m as f64;
            }
        }
        for q in 0..route_a.len() {
            assert_abs_diff_eq!(route_a[q], route_b[q], epsilon = 1e-8);
        }
    }

    #[test]
    fn simnpo_weights_fade_with_forgetting() {
        // π ≈ 1 (loss ~ 0) ⇒ W ≈ 1; π → 0 (huge loss) ⇒ W → 0.
        let c = simnpo_coeffs(1.0, &[1e-9, 30.0], 1);
        assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-6);
        assert!(c[1] < 1e-10);
    }

    #[test]
    fn rl_labels_are_wrong_and_seeded() {
        let d = desk(13);
        let ctx = d.ctx();
        let cfg = UnlearnConfig::new(Method::Rl, 0.3, 10);
        let a = run_rl(&d.model, &ctx, &cfg).unwrap();
        let b = run_rl(&d.model, &ctx, &cfg).unwrap();
        assert_eq!(a.model().weights, b.model().weights);
        // Forget accuracy must collapse away from the true (single) class.
        assert!(a.final_report.acc_forget < a.initial.acc_forget);
        let mut cfg2 = cfg.clone();
        cfg2.seed = 99;
        let c = run_rl(&d.model, &ctx, &cfg2).unwrap();
        assert_ne!(a.model().weights, c.model().weights);
    }

    #[test]
    fn newton_delta_is_linear_in_the_forget_gradient() {
        let d = desk(17);
        let oracle = HessianOracle::new(&d.model, &d.fz, 1e-3).unwrap();
        let g = mean_grad(&d.model, &d.fz, &d.fy).unwrap();
        let one = newton_delta(&oracle, &g, d.fz.nrows(), d.ry.len()).unwrap();
        let double = newton_delta(&oracle, &(&g * 2.0), d.fz.nrows(), d.ry.len()).unwrap();
        // Doubling is exact in binary floating point for a fixed factor.
        for q in 0..one.len() {
            assert_eq!(double[q], 2.0 * one[q]);
        }
    }

    #[test]
    fn newton_with_empty_forget_set_is_identity() {
        let d = desk(19);
        let empty_z = Array2::<f64>::zeros((0, d.fz.ncols()));
        let out = newton_removal(&d.model, &empty_z, &[], d.ry.len(), 1e-3).unwrap();
        assert_eq!(out.weights, d.model.weights);
        assert_eq!(out.bias, d.model.bias);
    }

    #[test]
    fn newton_moves_toward_the_retrained_optimum() {
        // Random-fraction forgetting, so the forget features still cover all
        // classes and the retain-free Hessian estimate is representative.
        let ds = gen_gaussian_classes(3, 8, 40, 0.45, 23).unwrap();
        let spec = ExtractorSpec::identity(8);
        let z = extract_features(&spec, &ds.features).unwrap();
        let split = make_split(
            &ds,
            SplitMode::SampleRandom {
                fraction: 0.15,
                seed: 4,
            },
        )
        .unwrap();
        let train: Vec<usize> = split.forget.iter().chain(&split.retain).copied().collect();
        let (traw, ty) = take_subset(&ds, &train);
        let tz = extract_features(&spec, &traw).unwrap();
        let cfg = TrainConfig {
            learning_rate: safe_learning_rate(&z, 1e-2),
            max_epochs: 100_000,
            tol: 1e-8,
            l2: 1e-2,
        };
        let (base, _) = train_classifier(&tz, &ty, 3, spec.clone(), &cfg).unwrap();
        let (fraw, fy) = take_subset(&ds, &split.forget);
        let fz = extract_features(&spec, &fraw).unwrap();
        let (rraw, ry) = take_subset(&ds, &split.retain);
        let rz = extract_features(&spec, &rraw).unwrap();
        let (oracle_model, s) = train_classifier(&rz, &ry, 3, spec, &cfg).unwrap();
        assert!(s.converged);
        // Damping plays the role of the objective's own ridge term here.
        let newton = newton_removal(&base, &fz, &fy, ry.len(), cfg.l2).unwrap();
        let dist = |a: &ClassifierState, b: &ClassifierState| {
            (&a.flatten() - &b.flatten()).mapv(|v| v * v).sum().sqrt()
        };
        let before = dist(&base, &oracle_model);
        let after = dist(&newton, &oracle_model);
        assert!(
            after < before,
            "newton step moved away from the retrained optimum ({after:e} vs {before:e})"
        );
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_untouched() {
        let d = desk(41);
        let ctx = d.ctx();
        let run = run_ga(&d.model, &ctx, &UnlearnConfig::new(Method::Ga, 0.0, 3)).unwrap();
        assert_eq!(run.model().weights, d.model.weights);
        assert_eq!(run.model().bias, d.model.bias);
    }

    #[test]
    fn retraining_with_nothing_removed_recovers_the_original() {
        let d = desk(43);
        // Full training set as the retain side, in a different sample order:
        // full-batch descent from zeros must land at the same optimum.
        let n_f = d.fz.nrows();
        let n_r = d.rz.nrows();
        let mut all_z = Array2::zeros((n_f + n_r, d.fz.ncols()));
        let mut all_y = Vec::with_capacity(n_f + n_r);
        for i in 0..n_r {
            all_z.row_mut(i).assign(&d.rz.row(i));
            all_y.push(d.ry[i]);
        }
        for i in 0..n_f {
            all_z.row_mut(n_r + i).assign(&d.fz.row(i));
            all_y.push(d.fy[i]);
        }
        let empty_z = Array2::<f64>::zeros((0, d.fz.ncols()));
        let empty_y: Vec<usize> = vec![];
        let ctx = EvalContext {
            forget: (&empty_z, &empty_y),
            retain: (&all_z, &all_y),
            test: (&d.tz, &d.ty),
            reference: None,
            kl_probe: None,
        };
        let (again, s) = retrain_oracle(&d.model, &ctx, &d.train_cfg).unwrap();
        assert!(s.converged);
        let dist = (&again.flatten() - &d.model.flatten())
            .mapv(|v| v * v)
            .sum()
            .sqrt();
        assert!(
            dist <= 10.0 * d.train_cfg.tol,
            "refit drifted {dist:e} from the original"
        );
    }

    #[test]
    fn retrain_oracle_restores_membership_ambiguity() {
        let d = desk(29);
        let ctx = d.ctx();
        let run = run_unlearning(
            &d.model,
            &ctx,
            None,
            &UnlearnConfig::new(Method::Retrain, 1.0, 1),
            &d.train_cfg,
        )
        .unwrap();
        // Retrained-from-scratch never saw the forget class.
        assert_eq!(run.final_report.acc_forget, 0.0);
        assert!(run.final_report.mia >= 0.95, "mia {}", run.final_report.mia);
        assert!(run.final_report.acc_retain >= 0.95);
    }

    #[test]
    fn refresh_schedule_nu_zero_scores_once() {
        let d = desk(31);
        let ctx = d.ctx();
        let mut cfg = UnlearnConfig::new(Method::Imu, 0.05, 6);
        cfg.refresh_every = 0;
        let run = run_imu(&d.model, &ctx, None, &cfg).unwrap();
        assert_eq!(run.weight_history.len(), 1);
        assert_eq!(run.weight_history[0].0, 0);
        cfg.refresh_every = 2;
        let run = run_imu(&d.model, &ctx, None, &cfg).unwrap();
        let epochs: Vec<usize> = run.weight_history.iter().map(|(t, _)| *t).collect();
        assert_eq!(epochs, vec![0, 2, 4]);
    }

    #[test]
    fn minibatch_mode_is_seeded_and_complete() {
        let d = desk(37);
        let ctx = d.ctx();
        let mut cfg = UnlearnConfig::new(Method::Ga, 0.05, 4);
        cfg.batch_size = Some(5);
        let a = run_ga(&d.model, &ctx, &cfg).unwrap();
        let b = run_ga(&d.model, &ctx, &cfg).unwrap();
        assert_eq!(a.model().weights, b.model().weights);
        // A different batch seed walks a different path to a similar place.
        cfg.seed = 5;
        let c = run_ga(&d.model, &ctx, &cfg).unwrap();
        assert_ne!(a.model().weights, c.model().weights);
        // Full coverage each epoch: forget loss still rises.
        assert!(c.final_report.loss_forget > c.initial.loss_forget);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let base = UnlearnConfig::new(Method::Imu, 0.1, 5);
        let cases = [
            UnlearnConfig { eta: -1.0, ..base.clone() },
            UnlearnConfig { eta: f64::NAN, ..base.clone() },
            UnlearnConfig { epochs: 0, ..base.clone() },
            UnlearnConfig { top_ratio: 0.0, ..base.clone() },
            UnlearnConfig { top_ratio: 1.5, ..base.clone() },
            UnlearnConfig { percentile: 101.0, ..base.clone() },
            UnlearnConfig { damping: 0.0, ..base.clone() },
            UnlearnConfig { l1: -0.1, ..base.clone() },
            UnlearnConfig { batch_size: Some(0), ..base.clone() },
            UnlearnConfig {
                method: Method::Npo,
                beta: 0.0,
                ..base.clone()
            },
        ];
        for bad in cases {
            assert!(bad.validate().is_err(), "{bad:?} should be rejected");
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("finetune").is_err());
    }
}
