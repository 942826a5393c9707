//! Evaluation: accuracy, loss-threshold membership inference, output-
//! distribution distance, and KL against analytic references.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_probs, per_sample_losses, ClassifierState};

/// Fraction of samples whose argmax matches the label. Ties resolve to the
/// lowest class index, so a uniform head "predicts" class 0.
pub fn accuracy(cls: &ClassifierState, z: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if z.nrows() == 0 {
        return Err(Error::parameter("accuracy over an empty batch"));
    }
    let p = forward_probs(cls, z)?;
    if labels.len() != z.nrows() {
        return Err(Error::parameter(format!(
            "{} rows but {} labels",
            z.nrows(),
            labels.len()
        )));
    }
    let mut hits = 0usize;
    for (i, &y) in labels.iter().enumerate() {
        let row = p.row(i);
        let mut best = 0usize;
        for c in 1..row.len() {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

// ── membership inference ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MiaResult {
    /// Fraction of forget samples the attack judges NON-members;
    /// 1.0 means fully forgotten, ~0 means still memorized.
    pub score: f64,
    /// Loss threshold picked by the attack (member iff loss <= threshold).
    pub threshold: f64,
    /// Member/non-member accuracy of the fitted attack on its own fit sets.
    pub fit_accuracy: f64,
    /// True when the fit losses could not be separated (score forced to 0.5).
    pub degenerate: bool,
}

/// Threshold attack on per-sample losses. The attacker sees retain losses as
/// members and test losses as non-members, picks the threshold with the best
/// fit accuracy, then judges the forget samples.
///
/// Only loss *order* matters: every comparison is against an observed fit
/// loss, so any strictly monotone transform of all losses leaves the score
/// unchanged.
pub fn mia_from_losses(forget: &[f64], retain: &[f64], test: &[f64]) -> Result<MiaResult> {
    if forget.is_empty() || retain.is_empty() || test.is_empty() {
        return Err(Error::parameter("mia needs non-empty forget/retain/test sets"));
    }
    if forget
        .iter()
        .chain(retain)
        .chain(test)
        .any(|v| !v.is_finite())
    {
        return Err(Error::numeric("mia losses contain non-finite values"));
    }
    let mut fit: Vec<f64> = retain.iter().chain(test).copied().collect();
    fit.sort_by(|a, b| a.partial_cmp(b).expect("finite losses"));
    let lo = fit[0];
    let hi = *fit.last().expect("non-empty");
    if lo == hi {
        return Ok(MiaResult {
            score: 0.5,
            threshold: lo,
            fit_accuracy: 0.5,
            degenerate: true,
        });
    }
    // Candidate k: member iff loss <= fit[k-1]; k = 0 declares everyone a
    // non-member. First maximum wins, which is deterministic under ties.
    let total = (retain.len() + test.len()) as f64;
    let mut best_k = 0usize;
    let mut best_acc = f64::NEG_INFINITY;
    for k in 0..=fit.len() {
        let tau = if k == 0 { f64::NEG_INFINITY } else { fit[k - 1] };
        let members_right = retain.iter().filter(|&&l| l <= tau).count();
        let nonmembers_right = test.iter().filter(|&&l| l > tau).count();
        let acc = (members_right + nonmembers_right) as f64 / total;
        if acc > best_acc {
            best_acc = acc;
            best_k = k;
        }
    }
    let tau = if best_k == 0 {
        f64::NEG_INFINITY
    } else {
        fit[best_k - 1]
    };
    let judged_out = forget.iter().filter(|&&l| l > tau).count();
    Ok(MiaResult {
        score: judged_out as f64 / forget.len() as f64,
        threshold: tau,
        fit_accuracy: best_acc,
        degenerate: false,
    })
}

/// [`mia_from_losses`] on a model's cross-entropy losses.
pub fn mia_score(
    cls: &ClassifierState,
    forget: (&Array2<f64>, &[usize]),
    retain: (&Array2<f64>, &[usize]),
    test: (&Array2<f64>, &[usize]),
) -> Result<MiaResult> {
    let lf = per_sample_losses(cls, forget.0, forget.1)?;
    let lr = per_sample_losses(cls, retain.0, retain.1)?;
    let lt = per_sample_losses(cls, test.0, test.1)?;
    mia_from_losses(&lf, &lr, &lt)
}

// ── distribution distances ───────────────────────────────────────────────

/// Mean 1-Wasserstein distance between the two models' output distributions
/// under the discrete ground metric, which reduces to total variation:
/// `(1/n) Σ_i 1/2 ||p_a(x_i) - p_b(x_i)||_1`. Lies in [0, 1].
pub fn w1_output_distance(
    a: &ClassifierState,
    b: &ClassifierState,
    z: &Array2<f64>,
) -> Result<f64> {
    if z.nrows() == 0 {
        return Err(Error::parameter("w1 distance over an empty batch"));
    }
    if a.class_count() != b.class_count() {
        return Err(Error::parameter(format!(
            "class counts differ: {} vs {}",
            a.class_count(),
            b.class_count()
        )));
    }
    let pa = forward_probs(a, z)?;
    let pb = forward_probs(b, z)?;
    let mut total = 0.0;
    for i in 0..z.nrows() {
        let l1: f64 = pa
            .row(i)
            .iter()
            .zip(pb.row(i).iter())
            .map(|(x, y)| (x - y).abs())
            .sum();
        total += 0.5 * l1;
    }
    Ok(total / z.nrows() as f64)
}

/// Model probabilities are clamped to this floor inside KL so a fully
/// saturated head yields a large finite divergence instead of infinity.
pub const KL_PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct KlResult {
    /// Mean over contexts of KL(reference || model), in nats.
    pub mean_nats: f64,
    /// True when any model probability hit [`KL_PROB_FLOOR`].
    pub clamped: bool,
}

/// Mean KL(reference || model) over a batch of contexts. `refs` rows must be
/// probability distributions; the sum runs over the reference support.
pub fn kl_to_reference(
    cls: &ClassifierState,
    contexts: &Array2<f64>,
    refs: &Array2<f64>,
) -> Result<KlResult> {
    if contexts.nrows() == 0 {
        return Err(Error::parameter("kl over an empty context batch"));
    }
    if refs.nrows() != contexts.nrows() || refs.ncols() != cls.class_count() {
        return Err(Error::parameter(format!(
            "reference shape {:?} does not match {} contexts x {} classes",
            refs.dim(),
            contexts.nrows(),
            cls.class_count()
        )));
    }
    for (i, row) in refs.axis_iter(Axis(0)).enumerate() {
        if row.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::parameter(format!("reference row {i} has invalid entries")));
        }
        if (row.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::parameter(format!(
                "reference row {i} sums to {}, not 1",
                row.sum()
            )));
        }
    }
    let p = forward_probs(cls, contexts)?;
    let mut total = 0.0;
    let mut clamped = false;
    for i in 0..contexts.nrows() {
        let mut kl = 0.0;
        for c in 0..refs.ncols() {
            let r = refs[[i, c]];
            if r == 0.0 {
                continue;
            }
            let q = p[[i, c]];
            let q = if q < KL_PROB_FLOOR {
                clamped = true;
                KL_PROB_FLOOR
            } else {
                q
            };
            kl += r * (r / q).ln();
        }
        total += kl;
    }
    Ok(KlResult {
        mean_nats: total / contexts.nrows() as f64,
        clamped,
    })
}

// ── evaluation bundles ───────────────────────────────────────────────────

/// Analytic reference distributions for KL probes (used by the sequence lab).
#[derive(Debug, Clone)]
pub struct KlProbe {
    pub retain_contexts: Array2<f64>,
    pub retain_refs: Array2<f64>,
    pub forget_contexts: Array2<f64>,
    pub forget_refs: Array2<f64>,
}

/// Everything needed to score a classifier during and after unlearning.
/// Feature matrices are already extracted.
pub struct EvalContext<'a> {
    pub forget: (&'a Array2<f64>, &'a [usize]),
    pub retain: (&'a Array2<f64>, &'a [usize]),
    pub test: (&'a Array2<f64>, &'a [usize]),
    /// Retrained-from-scratch reference; enables the output-distance column.
    pub reference: Option<&'a ClassifierState>,
    pub kl_probe: Option<&'a KlProbe>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc_forget: f64,
    pub acc_retain: f64,
    pub acc_test: f64,
    pub mia: f64,
    /// Mean output distance to the retrained reference on retain samples;
    /// absent when no reference model was supplied.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_dist: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_retain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_forget: Option<f64>,
    pub loss_forget: f64,
    pub loss_retain: f64,
    pub runtime_seconds: f64,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "epoch,forget_acc,retain_acc,test_acc,mia,w_dist,kl_retain,kl_forget,forget_loss,retain_loss";

    /// One trajectory row; optional columns render as empty fields.
    pub fn csv_row(&self, epoch: usize) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{epoch},{},{},{},{},{},{},{},{},{}",
            self.acc_forget,
            self.acc_retain,
            self.acc_test,
            self.mia,
            opt(self.w_dist),
            opt(self.kl_retain),
            opt(self.kl_forget),
            self.loss_forget,
            self.loss_retain,
        )
    }
}

/// Scores a model against an [`EvalContext`]. `runtime_seconds` is
/// caller-supplied (time since the run began).
pub fn evaluate(
    cls: &ClassifierState,
    ctx: &EvalContext,
    runtime_seconds: f64,
) -> Result<EvalReport> {
    let acc_forget = accuracy(cls, ctx.forget.0, ctx.forget.1)?;
    let acc_retain = accuracy(cls, ctx.retain.0, ctx.retain.1)?;
    let acc_test = accuracy(cls, ctx.test.0, ctx.test.1)?;
    let mia = mia_score(cls, ctx.forget, ctx.retain, ctx.test)?.score;
    let w_dist = match ctx.reference {
        Some(reference) => Some(w1_output_distance(cls, reference, ctx.retain.0)?),
        None => None,
    };
    let (kl_retain, kl_forget) = match ctx.kl_probe {
        Some(probe) => (
            Some(kl_to_reference(cls, &probe.retain_contexts, &probe.retain_refs)?.mean_nats),
            Some(kl_to_reference(cls, &probe.forget_contexts, &probe.forget_refs)?.mean_nats),
        ),
        None => (None, None),
    };
    let loss_forget = crate::model::ce_loss(cls, ctx.forget.0, ctx.forget.1)?;
    let loss_retain = crate::model::ce_loss(cls, ctx.retain.0, ctx.retain.1)?;
    Ok(EvalReport {
        acc_forget,
        acc_retain,
        acc_test,
        mia,
        w_dist,
        kl_retain,
        kl_forget,
        loss_forget,
        loss_retain,
        runtime_seconds,
    })
}
