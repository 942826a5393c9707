//! Influence scores for forget-set samples and the leave-one-out retraining
//! oracle that validates them.
//!
//! For a sample `x` and the forget set `D_f`, the score is
//!
//! ```text
//! I(x, D_f) = -∇ℓ(D_f)ᵀ H⁻¹ ∇ℓ(x)
//! ```
//!
//! with `∇ℓ(D_f)` the mean forget gradient and `H` the damped cross-entropy
//! Hessian assembled over `D_f`. A negative score marks a sample whose
//! presence props up forget-set performance. Under the ε-upweighting
//! expansion, removing sample `i` from an n-sample training set shifts the
//! forget loss by about `-I(x_i, D_f) / n`, which is what the oracle measures
//! by actually retraining.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::{
    ce_loss, grad_matrix, hessian_classifier, mean_grad, train_classifier_from, ClassifierState,
    TrainConfig,
};
use crate::stats::percentile;
use crate::synth::SplitSpec;

/// Damped forget-set Hessian, factored once and reused for every solve.
pub struct HessianOracle {
    chol: Cholesky,
    pub damping: f64,
}

impl HessianOracle {
    /// Assembles `H = CE-Hessian(z) + damping I` and factors it. `damping`
    /// must be positive: the raw softmax Hessian is singular along logit
    /// shifts, so an undamped factorization is either ill-posed or fails.
    pub fn new(cls: &ClassifierState, z: &Array2<f64>, damping: f64) -> Result<Self> {
        if !(damping > 0.0) {
            return Err(Error::parameter(format!(
                "hessian damping must be positive, got {damping}"
            )));
        }
        let h = hessian_classifier(cls, z, damping)?;
        Ok(HessianOracle {
            chol: Cholesky::new(&h)?,
            damping,
        })
    }

    /// `H⁻¹ v`.
    pub fn solve(&self, v: &Array1<f64>) -> Result<Array1<f64>> {
        self.chol.solve(v)
    }
}

/// Self-influence direction `-H⁻¹ ∇ℓ(x, y)`: the first-order parameter
/// response to upweighting this sample.
pub fn influence_self(
    oracle: &HessianOracle,
    cls: &ClassifierState,
    z: ndarray::ArrayView1<f64>,
    y: usize,
) -> Result<Array1<f64>> {
    let g = crate::model::grad_classifier(cls, z, y)?;
    Ok(-oracle.solve(&g)?)
}

/// Influence of every forget sample on the forget-set loss:
/// `raw_i = -∇ℓ(D_f)ᵀ H⁻¹ ∇ℓ(x_i)`, H assembled over `D_f` with `damping`.
/// One factorization and one solve serve all m samples.
pub fn influence_on_forget(
    cls: &ClassifierState,
    forget_z: &Array2<f64>,
    forget_y: &[usize],
    damping: f64,
) -> Result<Vec<f64>> {
    let oracle = HessianOracle::new(cls, forget_z, damping)?;
    let gbar = mean_grad(cls, forget_z, forget_y)?;
    let s = oracle.solve(&gbar)?;
    let grads = grad_matrix(cls, forget_z, forget_y)?;
    Ok(grads.rows().into_iter().map(|g| -s.dot(&g)).collect())
}

/// First-order prediction of the leave-one-out loss change on `D_f` when a
/// training sample is removed (ε = -1/n upweighting): `-raw / n_train`.
pub fn predicted_loo_deltas(raw: &[f64], n_train: usize) -> Vec<f64> {
    raw.iter().map(|r| -r / n_train as f64).collect()
}

/// Strictly negative scores only; zero does not count.
pub fn select_negative(raw: &[f64]) -> Vec<bool> {
    raw.iter().map(|&r| r < 0.0).collect()
}

/// Keeps the ⌈r·k⌉ selected entries with the largest |raw|, ties resolved
/// toward the lower index. `r` must lie in (0, 1].
pub fn select_top_r(raw: &[f64], selected: &[bool], r: f64) -> Result<Vec<bool>> {
    if raw.len() != selected.len() {
        return Err(Error::parameter("raw/selected length mismatch"));
    }
    if !(r > 0.0 && r <= 1.0) {
        return Err(Error::parameter(format!("top ratio must lie in (0, 1], got {r}")));
    }
    let mut picked: Vec<usize> = (0..raw.len()).filter(|&i| selected[i]).collect();
    let k = picked.len();
    if k == 0 {
        return Ok(vec![false; raw.len()]);
    }
    let keep = ((r * k as f64).ceil() as usize).min(k);
    // Sort by descending magnitude; equal magnitudes stay in index order.
    picked.sort_by(|&a, &b| {
        raw[b]
            .abs()
            .partial_cmp(&raw[a].abs())
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    let mut out = vec![false; raw.len()];
    for &i in &picked[..keep] {
        out[i] = true;
    }
    Ok(out)
}

/// Square-root-smoothed, percentile-truncated, sum-normalized weights over
/// the selected entries: `s_i = sqrt(|raw_i|)` capped at the q-th percentile
/// of the selected magnitudes, then divided by the capped sum. Unselected
/// entries get weight 0. Capping at q < 100 tames outliers without touching
/// the relative weights of the uncapped entries.
pub fn normalize_weights(raw: &[f64], selected: &[bool], q: f64) -> Result<Vec<f64>> {
    if raw.len() != selected.len() {
        return Err(Error::parameter("raw/selected length mismatch"));
    }
    let idx: Vec<usize> = (0..raw.len()).filter(|&i| selected[i]).collect();
    if idx.is_empty() {
        return Err(Error::parameter("cannot normalize an empty selection"));
    }
    let mags: Vec<f64> = idx.iter().map(|&i| raw[i].abs().sqrt()).collect();
    let cap = percentile(&mags, q)?;
    let capped: Vec<f64> = mags.iter().map(|&s| s.min(cap)).collect();
    let total: f64 = capped.iter().sum();
    let mut weights = vec![0.0; raw.len()];
    if total == 0.0 {
        // All selected scores are exactly zero; fall back to uniform.
        for &i in &idx {
            weights[i] = 1.0 / idx.len() as f64;
        }
    } else {
        for (pos, &i) in idx.iter().enumerate() {
            weights[i] = capped[pos] / total;
        }
    }
    Ok(weights)
}

/// Full scoring pipeline for one influence refresh: raw scores, negative
/// selection, top-ratio filter, normalized weights. When no score is
/// negative the report falls back to uniform weights over all of `D_f` and
/// says so, rather than producing an empty update.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InfluenceReport {
    /// Dataset indices of the forget samples, aligned with the vectors below.
    pub indices: Vec<usize>,
    pub raw: Vec<f64>,
    pub selected: Vec<bool>,
    /// Zero for unselected entries; sums to 1 over the selected ones.
    pub weights: Vec<f64>,
    pub damping: f64,
    pub percentile: f64,
    pub top_ratio: f64,
    /// True when negative selection came up empty and uniform weights over
    /// the whole forget set were substituted.
    pub uniform_fallback: bool,
}

impl InfluenceReport {
    pub fn compute(
        cls: &ClassifierState,
        forget_z: &Array2<f64>,
        forget_y: &[usize],
        indices: &[usize],
        damping: f64,
        top_ratio: f64,
        q: f64,
    ) -> Result<Self> {
        if indices.len() != forget_z.nrows() {
            return Err(Error::parameter("index list does not match forget set size"));
        }
        let raw = influence_on_forget(cls, forget_z, forget_y, damping)?;
        let negatives = select_negative(&raw);
        let (selected, weights, uniform_fallback) = if negatives.iter().any(|&s| s) {
            let selected = select_top_r(&raw, &negatives, top_ratio)?;
            let weights = normalize_weights(&raw, &selected, q)?;
            (selected, weights, false)
        } else {
            let all = vec![true; raw.len()];
            let w = 1.0 / raw.len() as f64;
            (all, vec![w; raw.len()], true)
        };
        Ok(InfluenceReport {
            indices: indices.to_vec(),
            raw,
            selected,
            weights,
            damping,
            percentile: q,
            top_ratio,
            uniform_fallback,
        })
    }

    /// CSV with one row per forget sample: `index,raw,selected,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,raw,selected,weight\n");
        for i in 0..self.raw.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.indices[i],
                self.raw[i],
                if self.selected[i] { 1 } else { 0 },
                self.weights[i]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

// ── leave-one-out oracle ─────────────────────────────────────────────────

/// One probed sample: the measured change in mean forget loss after
/// retraining without it (loss after minus loss before).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LooRecord {
    pub index: usize,
    pub delta_loss: f64,
    /// Descent epochs the retrain took (warm starts keep this small).
    pub epochs: usize,
}

/// Retrains on the training set minus `skip` (if any), warm-starting from
/// `base`. Convexity (l2 > 0) makes the optimum unique, so the warm start
/// only buys speed.
fn retrain_without(
    base: &ClassifierState,
    z: &Array2<f64>,
    labels: &[usize],
    train: &[usize],
    skip: Option<usize>,
    cfg: &TrainConfig,
) -> Result<(ClassifierState, usize)> {
    let keep: Vec<usize> = train.iter().copied().filter(|&i| Some(i) != skip).collect();
    if keep.is_empty() {
        return Err(Error::parameter("leave-one-out removal emptied the train set"));
    }
    let mut zk = Array2::zeros((keep.len(), z.ncols()));
    let mut yk = Vec::with_capacity(keep.len());
    for (row, &i) in keep.iter().enumerate() {
        zk.row_mut(row).assign(&z.row(i));
        yk.push(labels[i]);
    }
    let (cls, summary) = train_classifier_from(base.clone(), &zk, &yk, cfg)?;
    if !summary.converged {
        return Err(Error::Training(format!(
            "leave-one-out retrain (skip {skip:?}) stopped at grad norm {:e} > tol {:e}; raise max_epochs",
            summary.final_grad_norm, cfg.tol
        )));
    }
    Ok((cls, summary.epochs))
}

/// Ground-truth removal effects by brute force: for each probed training
/// index, retrain without that sample to tolerance and record the change in
/// mean forget loss. Requires l2 > 0 — without strict convexity "the"
/// retrained optimum is not well defined and deltas would be noise.
///
/// `base` must be the model trained to `cfg.tol` on the full training split
/// (it anchors both the warm starts and the before-loss).
pub fn loo_oracle(
    base: &ClassifierState,
    z: &Array2<f64>,
    labels: &[usize],
    split: &SplitSpec,
    cfg: &TrainConfig,
    probes: &[usize],
) -> Result<Vec<LooRecord>> {
    if cfg.l2 <= 0.0 {
        return Err(Error::parameter("loo_oracle requires l2 > 0 for a unique optimum"));
    }
    if probes.is_empty() {
        return Err(Error::parameter("no probe indices supplied"));
    }
    let mut train: Vec<usize> = split.forget.iter().chain(&split.retain).copied().collect();
    train.sort_unstable();
    for &p in probes {
        if !train.contains(&p) {
            return Err(Error::parameter(format!("probe {p} is not a training index")));
        }
    }
    // Guard against a stale base: its full-train gradient must be at tol.
    {
        let mut zt = Array2::zeros((train.len(), z.ncols()));
        let mut yt = Vec::with_capacity(train.len());
        for (row, &i) in train.iter().enumerate() {
            zt.row_mut(row).assign(&z.row(i));
            yt.push(labels[i]);
        }
        let mut g = mean_grad(base, &zt, &yt)?;
        g.scaled_add(cfg.l2, &base.flatten());
        let gn = g.dot(&g).sqrt();
        if gn > 10.0 * cfg.tol {
            return Err(Error::parameter(format!(
                "base model is not at the training optimum (grad norm {gn:e} > 10*tol)"
            )));
        }
    }
    let (forget_z, forget_y) = gather(z, labels, &split.forget);
    let before = ce_loss(base, &forget_z, &forget_y)?;
    let mut records = Vec::with_capacity(probes.len());
    for &p in probes {
        let (retrained, epochs) = retrain_without(base, z, labels, &train, Some(p), cfg)?;
        let after = ce_loss(&retrained, &forget_z, &forget_y)?;
        records.push(LooRecord {
            index: p,
            delta_loss: after - before,
            epochs,
        });
    }
    Ok(records)
}

fn gather(z: &Array2<f64>, labels: &[usize], idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut zi = Array2::zeros((idx.len(), z.ncols()));
    let mut yi = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        zi.row_mut(row).assign(&z.row(i));
        yi.push(labels[i]);
    }
    (zi, yi)
}
