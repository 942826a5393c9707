//! Frozen feature extractor + convex softmax classifier head.
//!
//! The trainable object is always the head: weights `W` (C x d) and bias `b`
//! (C). Derivative code flattens `(W, b)` class-by-class with the bias as an
//! extra feature coordinate fixed at 1, i.e. parameter index `c*(d+1)+j`
//! holds `W[c,j]` for `j < d` and `b[c]` at `j = d`. With the augmented
//! feature `a = [z; 1]`:
//!
//! * per-sample gradient: `g = (p - onehot(y)) ⊗ a`
//! * per-sample Hessian:  `(diag(p) - p pᵀ) ⊗ (a aᵀ)`
//!
//! Losses use log-sum-exp so confidently wrong predictions report large
//! finite losses instead of overflowing through `exp`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ── feature extraction ───────────────────────────────────────────────────

/// Frozen map from raw inputs to the features the classifier sees. Never
/// trained; random variants are reproducible from their seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtractorSpec {
    /// Features are the raw inputs.
    Identity { dim: usize },
    /// `relu(P x)` with a fixed Gaussian projection `P` (d_feat x d_in),
    /// entries N(0, 1/d_in) so feature magnitudes stay O(1).
    RandomRelu { d_in: usize, d_feat: usize, seed: u64 },
}

impl ExtractorSpec {
    pub fn identity(dim: usize) -> Self {
        ExtractorSpec::Identity { dim }
    }

    pub fn random_relu(d_in: usize, d_feat: usize, seed: u64) -> Self {
        ExtractorSpec::RandomRelu { d_in, d_feat, seed }
    }

    pub fn d_in(&self) -> usize {
        match *self {
            ExtractorSpec::Identity { dim } => dim,
            ExtractorSpec::RandomRelu { d_in, .. } => d_in,
        }
    }

    pub fn d_feat(&self) -> usize {
        match *self {
            ExtractorSpec::Identity { dim } => dim,
            ExtractorSpec::RandomRelu { d_feat, .. } => d_feat,
        }
    }

    fn projection(&self) -> Option<Array2<f64>> {
        match *self {
            ExtractorSpec::Identity { .. } => None,
            ExtractorSpec::RandomRelu { d_in, d_feat, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let scale = 1.0 / (d_in as f64).sqrt();
                Some(Array2::from_shape_fn((d_feat, d_in), |_| {
                    scale * rng.sample::<f64, _>(StandardNormal)
                }))
            }
        }
    }
}

/// Maps a batch of raw inputs (n x d_in) to features (n x d_feat).
pub fn extract_features(spec: &ExtractorSpec, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != spec.d_in() {
        return Err(Error::parameter(format!(
            "extractor expects {} input columns, got {}",
            spec.d_in(),
            x.ncols()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("extractor input contains non-finite values"));
    }
    Ok(match spec.projection() {
        None => x.clone(),
        Some(p) => {
            let mut z = x.dot(&p.t());
            z.mapv_inplace(|v| v.max(0.0));
            z
        }
    })
}

// ── classifier state ─────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierState {
    /// C x d_feat.
    pub weights: Array2<f64>,
    /// C.
    pub bias: Array1<f64>,
    /// The frozen extractor this head was trained on top of.
    pub extractor: ExtractorSpec,
    /// When false, the bias stays pinned at zero: gradients and curvature
    /// exclude it. Used where an intercept is statistically redundant (one-hot
    /// inputs already span a constant per context) and would otherwise couple
    /// otherwise-independent contexts through a shared parameter.
    pub fit_intercept: bool,
}

impl ClassifierState {
    pub fn zeros(class_count: usize, extractor: ExtractorSpec) -> Self {
        let d = extractor.d_feat();
        ClassifierState {
            weights: Array2::zeros((class_count, d)),
            bias: Array1::zeros(class_count),
            extractor,
            fit_intercept: true,
        }
    }

    pub fn without_intercept(mut self) -> Self {
        self.fit_intercept = false;
        self.bias.fill(0.0);
        self
    }

    pub fn class_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn d_feat(&self) -> usize {
        self.weights.ncols()
    }

    /// Flattened parameter count C*(d_feat+1).
    pub fn param_count(&self) -> usize {
        self.class_count() * (self.d_feat() + 1)
    }

    /// Class-major flattening; see the module header for the layout.
    pub fn flatten(&self) -> Array1<f64> {
        let (c_n, d) = self.weights.dim();
        let mut out = Array1::zeros(c_n * (d + 1));
        for c in 0..c_n {
            for j in 0..d {
                out[c * (d + 1) + j] = self.weights[[c, j]];
            }
            out[c * (d + 1) + d] = self.bias[c];
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, theta: ArrayView1<f64>) {
        let (c_n, d) = self.weights.dim();
        debug_assert_eq!(theta.len(), c_n * (d + 1));
        for c in 0..c_n {
            for j in 0..d {
                self.weights[[c, j]] = theta[c * (d + 1) + j];
            }
            self.bias[c] = theta[c * (d + 1) + d];
        }
    }

    fn check_features(&self, z: &Array2<f64>) -> Result<()> {
        if z.ncols() != self.d_feat() {
            return Err(Error::parameter(format!(
                "classifier expects {} feature columns, got {}",
                self.d_feat(),
                z.ncols()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("features contain non-finite values"));
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize], n: usize) -> Result<()> {
        if labels.len() != n {
            return Err(Error::parameter(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.class_count()) {
            return Err(Error::parameter(format!(
                "label {bad} outside 0..{}",
                self.class_count()
            )));
        }
        Ok(())
    }

    /// Raw logits W z + b for a feature batch (n x C).
    pub fn logits(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_features(z)?;
        let mut u = z.dot(&self.weights.t());
        u += &self.bias;
        Ok(u)
    }
}

/// Row-wise softmax probabilities (n x C); each row sums to 1.
pub fn forward_probs(cls: &ClassifierState, z: &Array2<f64>) -> Result<Array2<f64>> {
    let mut u = cls.logits(z)?;
    for mut row in u.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    Ok(u)
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Per-sample cross-entropy losses `lse(u) - u_y`, always finite.
pub fn per_sample_losses(
    cls: &ClassifierState,
    z: &Array2<f64>,
    labels: &[usize],
) -> Result<Vec<f64>> {
    let u = cls.logits(z)?;
    cls.check_labels(labels, z.nrows())?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| log_sum_exp(u.row(i)) - u[[i, y]])
        .collect())
}

/// Mean cross-entropy over a batch.
pub fn ce_loss(cls: &ClassifierState, z: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if z.nrows() == 0 {
        return Err(Error::parameter("ce_loss over an empty batch"));
    }
    let losses = per_sample_losses(cls, z, labels)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Flattened gradient of one sample's cross-entropy: `(p - onehot(y)) ⊗ [z;1]`.
pub fn grad_classifier(cls: &ClassifierState, z: ArrayView1<f64>, y: usize) -> Result<Array1<f64>> {
    let zm = z.insert_axis(Axis(0)).to_owned();
    let p = forward_probs(cls, &zm)?;
    cls.check_labels(&[y], 1)?;
    let d = cls.d_feat();
    let mut g = Array1::zeros(cls.param_count());
    for c in 0..cls.class_count() {
        let r = p[[0, c]] - if c == y { 1.0 } else { 0.0 };
        for j in 0..d {
            g[c * (d + 1) + j] = r * z[j];
        }
        if cls.fit_intercept {
            g[c * (d + 1) + d] = r;
        }
    }
    Ok(g)
}

/// Per-sample flattened gradients stacked into an m x P matrix.
pub fn grad_matrix(cls: &ClassifierState, z: &Array2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    let p = forward_probs(cls, z)?;
    cls.check_labels(labels, z.nrows())?;
    let d = cls.d_feat();
    let mut g = Array2::zeros((z.nrows(), cls.param_count()));
    for i in 0..z.nrows() {
        for c in 0..cls.class_count() {
            let r = p[[i, c]] - if c == labels[i] { 1.0 } else { 0.0 };
            for j in 0..d {
                g[[i, c * (d + 1) + j]] = r * z[[i, j]];
            }
            if cls.fit_intercept {
                g[[i, c * (d + 1) + d]] = r;
            }
        }
    }
    Ok(g)
}

/// Mean flattened cross-entropy gradient over a batch (no regularizer).
pub fn mean_grad(cls: &ClassifierState, z: &Array2<f64>, labels: &[usize]) -> Result<Array1<f64>> {
    if z.nrows() == 0 {
        return Err(Error::parameter("gradient over an empty batch"));
    }
    let p = forward_probs(cls, z)?;
    cls.check_labels(labels, z.nrows())?;
    let n = z.nrows() as f64;
    let c_n = cls.class_count();
    let d = cls.d_feat();
    // Residual matrix R = (p - onehot(y)); weight block = Rᵀ Z / n.
    let mut r = p;
    for (i, &y) in labels.iter().enumerate() {
        r[[i, y]] -= 1.0;
    }
    let wg = r.t().dot(z) / n;
    let bg = r.sum_axis(Axis(0)) / n;
    let mut g = Array1::zeros(c_n * (d + 1));
    for c in 0..c_n {
        for j in 0..d {
            g[c * (d + 1) + j] = wg[[c, j]];
        }
        if cls.fit_intercept {
            g[c * (d + 1) + d] = bg[c];
        }
    }
    Ok(g)
}

/// Batch cross-entropy Hessian with ridge damping:
/// `(1/m) Σ (diag(p_i) - p_i p_iᵀ) ⊗ (a_i a_iᵀ) + damping I`.
/// Labels never enter. Eigenvalues are bounded below by `damping`.
pub fn hessian_classifier(
    cls: &ClassifierState,
    z: &Array2<f64>,
    damping: f64,
) -> Result<Array2<f64>> {
    if z.nrows() == 0 {
        return Err(Error::parameter("hessian over an empty batch"));
    }
    if !(damping >= 0.0) || !damping.is_finite() {
        return Err(Error::parameter(format!("damping must be >= 0, got {damping}")));
    }
    let p = forward_probs(cls, z)?;
    let m = z.nrows();
    let c_n = cls.class_count();
    let d = cls.d_feat();
    let pp = c_n * (d + 1);
    let mut h = Array2::<f64>::zeros((pp, pp));
    let mut aouter = Array2::<f64>::zeros((d + 1, d + 1));
    // Without an intercept the bias coordinates drop out of the curvature and
    // keep only their damping diagonal, so solves never mix them in.
    let d_hi = if cls.fit_intercept { d } else { d.saturating_sub(1) };
    for i in 0..m {
        for j in 0..=d_hi {
            let aj = if j < d { z[[i, j]] } else { 1.0 };
            for k in 0..=d_hi {
                let ak = if k < d { z[[i, k]] } else { 1.0 };
                aouter[[j, k]] = aj * ak;
            }
        }
        for c in 0..c_n {
            for c2 in 0..c_n {
                let s = p[[i, c]] * ((c == c2) as usize as f64 - p[[i, c2]]) / m as f64;
                if s == 0.0 {
                    continue;
                }
                for j in 0..=d_hi {
                    for k in 0..=d_hi {
                        h[[c * (d + 1) + j, c2 * (d + 1) + k]] += s * aouter[[j, k]];
                    }
                }
            }
        }
    }
    for q in 0..pp {
        h[[q, q]] += damping;
    }
    Ok(h)
}

/// Diagonal of the empirical Fisher `(1/m) Σ g_i g_iᵀ` — a cheap curvature
/// stand-in for ranking comparisons, not an inverse-Hessian replacement.
pub fn fisher_diag(cls: &ClassifierState, z: &Array2<f64>, labels: &[usize]) -> Result<Array1<f64>> {
    if z.nrows() == 0 {
        return Err(Error::parameter("fisher over an empty batch"));
    }
    let g = grad_matrix(cls, z, labels)?;
    let m = z.nrows() as f64;
    Ok(g.map_axis(Axis(0), |col| col.dot(&col) / m))
}

// ── training ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop once the full objective gradient norm falls to this level.
    pub tol: f64,
    /// Ridge coefficient on all head parameters; any positive value makes the
    /// objective strictly convex with a unique optimum.
    pub l2: f64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::parameter("learning_rate must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::parameter("max_epochs must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::parameter("tol must be positive"));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return Err(Error::parameter("l2 must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub final_grad_norm: f64,
    pub final_loss: f64,
    /// False when max_epochs ran out before the gradient tolerance was met.
    pub converged: bool,
}

/// A step size guaranteed to descend: the objective Hessian is bounded by
/// `max_i ||a_i||^2 / 2 + l2` (softmax logit curvature is at most 1/2).
pub fn safe_learning_rate(z: &Array2<f64>, l2: f64) -> f64 {
    let max_sq = z
        .axis_iter(Axis(0))
        .map(|row| row.dot(&row) + 1.0)
        .fold(1.0_f64, f64::max);
    1.0 / (0.5 * max_sq + l2)
}

/// Deterministic full-batch gradient descent from zero initialization on
/// mean cross-entropy plus `l2/2 ||θ||²`. Stops at the gradient tolerance or
/// after `max_epochs`, whichever comes first.
pub fn train_classifier(
    z: &Array2<f64>,
    labels: &[usize],
    class_count: usize,
    extractor: ExtractorSpec,
    cfg: &TrainConfig,
) -> Result<(ClassifierState, TrainSummary)> {
    let init = ClassifierState::zeros(class_count, extractor);
    train_classifier_from(init, z, labels, cfg)
}

/// Same descent, warm-started from an existing head. The problem is convex,
/// so the start point only affects how long the descent takes.
pub fn train_classifier_from(
    mut cls: ClassifierState,
    z: &Array2<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(ClassifierState, TrainSummary)> {
    cfg.validate()?;
    if z.nrows() == 0 {
        return Err(Error::parameter("cannot train on an empty batch"));
    }
    cls.check_features(z)?;
    cls.check_labels(labels, z.nrows())?;
    let mut theta = cls.flatten();
    let mut grad_norm = f64::INFINITY;
    let mut epochs = 0;
    for _ in 0..cfg.max_epochs {
        cls.assign_flat(theta.view());
        let mut g = mean_grad(&cls, z, labels)?;
        if cfg.l2 > 0.0 {
            g.scaled_add(cfg.l2, &theta);
        }
        grad_norm = g.dot(&g).sqrt();
        if !grad_norm.is_finite() {
            return Err(Error::Training(format!(
                "gradient became non-finite after {epochs} epochs (lr={})",
                cfg.learning_rate
            )));
        }
        if grad_norm <= cfg.tol {
            break;
        }
        theta.scaled_add(-cfg.learning_rate, &g);
        epochs += 1;
    }
    cls.assign_flat(theta.view());
    let final_loss = {
        let ce = ce_loss(&cls, z, labels)?;
        ce + 0.5 * cfg.l2 * theta.dot(&theta)
    };
    if !final_loss.is_finite() {
        return Err(Error::Training(format!(
            "loss became non-finite after {epochs} epochs (lr={})",
            cfg.learning_rate
        )));
    }
    // Recompute in case we exited on max_epochs with a stale norm.
    if grad_norm > cfg.tol {
        let mut g = mean_grad(&cls, z, labels)?;
        if cfg.l2 > 0.0 {
            g.scaled_add(cfg.l2, &theta);
        }
        grad_norm = g.dot(&g).sqrt();
    }
    let summary = TrainSummary {
        epochs,
        final_grad_norm: grad_norm,
        final_loss,
        converged: grad_norm <= cfg.tol,
    };
    Ok((cls, summary))
}

// ── persistence ──────────────────────────────────────────────────────────

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    extractor: ExtractorSpec,
    class_count: usize,
    d_feat: usize,
    /// Row-major C x d_feat.
    weights: Vec<f64>,
    bias: Vec<f64>,
    #[serde(default = "default_true")]
    fit_intercept: bool,
}

pub fn save_model(cls: &ClassifierState, path: impl AsRef<Path>) -> Result<()> {
    let file = ModelFile {
        extractor: cls.extractor.clone(),
        class_count: cls.class_count(),
        d_feat: cls.d_feat(),
        weights: cls.weights.iter().copied().collect(),
        bias: cls.bias.to_vec(),
        fit_intercept: cls.fit_intercept,
    };
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierState> {
    let text = std::fs::read_to_string(path)?;
    let file: ModelFile =
        serde_json::from_str(&text).map_err(|e| Error::format(format!("bad model file: {e}")))?;
    if file.weights.len() != file.class_count * file.d_feat {
        return Err(Error::format(format!(
            "weight list has {} entries, expected {}",
            file.weights.len(),
            file.class_count * file.d_feat
        )));
    }
    if file.bias.len() != file.class_count {
        return Err(Error::format("bias length does not match class count"));
    }
    if file.d_feat != file.extractor.d_feat() {
        return Err(Error::format("d_feat does not match the extractor"));
    }
    let weights = Array2::from_shape_vec((file.class_count, file.d_feat), file.weights)
        .map_err(|e| Error::format(e.to_string()))?;
    Ok(ClassifierState {
        weights,
        bias: Array1::from_vec(file.bias),
        extractor: file.extractor,
        fit_intercept: file.fit_intercept,
    })
}
