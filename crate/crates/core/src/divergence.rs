//! Single-neuron divergence laboratory.
//!
//! One logistic unit `f_θ(x) = σ((2y−1)(θᵀx + b))` with a fixed offset `b`
//! is driven by single-sample replay steps
//!
//! ```text
//! θ ← θ + η · w · (2y−1)(1−f(x)) · x
//! ```
//!
//! (the negative gradient of −log f, scaled by a method weight w: 1 for
//! plain ascent bookkeeping, the preference weight W for npo, the
//! normalized influence weight Î for imu).
//!
//! Freezing both w and the residual 1−f at θ₀ makes the trajectory exactly
//! linear in the visit counts γ: `θ_t − θ₀ = Xᵀ(D a)` with the
//! method-agnostic coefficients `a_i = η γ_i (2y_i−1)(1−f₀(x_i))` and
//! `D = diag(w)`. The feature-space displacement norm then has two
//! interchangeable forms,
//!
//! ```text
//! ‖X(θ_t − θ₀)‖² = (Da)ᵀ G (Da),   G = (XXᵀ)²,
//! ```
//!
//! sandwiched by `λ_min(G)‖Da‖² ≤ (Da)ᵀG(Da) ≤ λ_max(G)‖Da‖²`. Bounded
//! method weights shrink the coefficients elementwise, which is how weight
//! truncation limits how far a replay can drift.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{normalize_weights, select_negative, select_top_r};
use crate::linalg::{is_symmetric, sym_eigen_extremes, Cholesky};

/// σ((2y−1)(θᵀx + b)) — the model's probability of the observed label.
pub fn logistic_prob(theta: &Array1<f64>, b: f64, x: &Array1<f64>, y: usize) -> Result<f64> {
    if x.len() != theta.len() {
        return Err(Error::parameter("feature/parameter dimension mismatch"));
    }
    if y > 1 {
        return Err(Error::parameter("logistic labels must be 0 or 1"));
    }
    let sign = 2.0 * y as f64 - 1.0;
    let u = sign * (theta.dot(x) + b);
    Ok(1.0 / (1.0 + (-u).exp()))
}

/// ℓ = −log f.
pub fn logistic_loss(theta: &Array1<f64>, b: f64, x: &Array1<f64>, y: usize) -> Result<f64> {
    Ok(-logistic_prob(theta, b, x, y)?.ln())
}

/// ∇_θ ℓ = −(2y−1)(1−f) x.
pub fn logistic_grad(
    theta: &Array1<f64>,
    b: f64,
    x: &Array1<f64>,
    y: usize,
) -> Result<Array1<f64>> {
    let f = logistic_prob(theta, b, x, y)?;
    let sign = 2.0 * y as f64 - 1.0;
    Ok(x * (-sign * (1.0 - f)))
}

/// One weighted replay step: θ' = θ + η·w·(2y−1)(1−f_θ(x))·x.
pub fn logistic_step(
    theta: &Array1<f64>,
    b: f64,
    x: &Array1<f64>,
    y: usize,
    eta: f64,
    w: f64,
) -> Result<Array1<f64>> {
    let f = logistic_prob(theta, b, x, y)?;
    let sign = 2.0 * y as f64 - 1.0;
    let mut out = theta.clone();
    out.scaled_add(eta * w * sign * (1.0 - f), x);
    Ok(out)
}

/// Replay data: n samples with binary labels and one shared fixed offset.
#[derive(Debug, Clone)]
pub struct ReplayProblem {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub offset: f64,
}

impl ReplayProblem {
    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() == 0 {
            return Err(Error::parameter("replay needs at least one sample"));
        }
        if self.features.nrows() != self.labels.len() {
            return Err(Error::parameter("feature/label count mismatch"));
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(Error::parameter("logistic labels must be 0 or 1"));
        }
        if self.features.iter().any(|v| !v.is_finite()) || !self.offset.is_finite() {
            return Err(Error::parameter("replay inputs must be finite"));
        }
        Ok(())
    }

    fn row(&self, i: usize) -> Array1<f64> {
        self.features.row(i).to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReplayMode {
    /// Residuals 1−f frozen at θ₀: the trajectory is exactly Xᵀ(Da).
    Frozen,
    /// Residuals recomputed at the current θ each step; weights stay
    /// frozen. The linear decomposition becomes an approximation whose gap
    /// the lab reports.
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayConfig {
    pub eta: f64,
    pub steps: usize,
    pub seed: u64,
    pub mode: ReplayMode,
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub theta: Array1<f64>,
    /// Visit count γ_i per sample; Σγ equals the step count.
    pub counts: Vec<usize>,
}

/// Run the seeded one-sample-per-step replay.
pub fn replay(
    problem: &ReplayProblem,
    theta0: &Array1<f64>,
    weights: &[f64],
    cfg: &ReplayConfig,
) -> Result<ReplayOutcome> {
    problem.validate()?;
    let n = problem.features.nrows();
    if weights.len() != n {
        return Err(Error::parameter("one weight per sample required"));
    }
    if !(cfg.eta > 0.0) {
        return Err(Error::parameter("eta must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut theta = theta0.clone();
    let mut counts = vec![0usize; n];
    let frozen: Vec<f64> = (0..n)
        .map(|i| logistic_prob(theta0, problem.offset, &problem.row(i), problem.labels[i]))
        .collect::<Result<_>>()?;
    for _ in 0..cfg.steps {
        let i = rng.random_range(0..n);
        counts[i] += 1;
        let x = problem.row(i);
        match cfg.mode {
            ReplayMode::Frozen => {
                let sign = 2.0 * problem.labels[i] as f64 - 1.0;
                theta.scaled_add(cfg.eta * weights[i] * sign * (1.0 - frozen[i]), &x);
            }
            ReplayMode::Live => {
                theta = logistic_step(
                    &theta,
                    problem.offset,
                    &x,
                    problem.labels[i],
                    cfg.eta,
                    weights[i],
                )?;
            }
        }
    }
    Ok(ReplayOutcome { theta, counts })
}

/// Method-agnostic replay coefficients a_i = η γ_i (2y_i−1)(1−f₀(x_i)).
/// Method weights enter separately as the diagonal D, so that the frozen
/// trajectory is exactly θ_t − θ₀ = Xᵀ(D a).
pub fn replay_coefficients(
    problem: &ReplayProblem,
    theta0: &Array1<f64>,
    counts: &[usize],
    eta: f64,
) -> Result<Array1<f64>> {
    problem.validate()?;
    let n = problem.features.nrows();
    if counts.len() != n {
        return Err(Error::parameter("one count per sample required"));
    }
    let mut a = Array1::zeros(n);
    for i in 0..n {
        let f = logistic_prob(theta0, problem.offset, &problem.row(i), problem.labels[i])?;
        let sign = 2.0 * problem.labels[i] as f64 - 1.0;
        a[i] = eta * counts[i] as f64 * sign * (1.0 - f);
    }
    Ok(a)
}

/// G = (XXᵀ)²: G_ij = x_iᵀ (XᵀX) x_j, the kernel of the displacement norm.
pub fn gram_squared(features: &Array2<f64>) -> Array2<f64> {
    let k = features.dot(&features.t());
    k.dot(&k)
}

/// ‖X(θ_t − θ₀)‖², straight from the parameter displacement.
pub fn weighted_norm_direct(
    features: &Array2<f64>,
    theta_t: &Array1<f64>,
    theta0: &Array1<f64>,
) -> Result<f64> {
    if theta_t.len() != theta0.len() || features.ncols() != theta0.len() {
        return Err(Error::parameter("displacement dimension mismatch"));
    }
    let v = features.dot(&(theta_t - theta0));
    Ok(v.dot(&v))
}

fn check_kernel(a: &Array1<f64>, gram: &Array2<f64>, weights: &[f64]) -> Result<()> {
    if gram.nrows() != gram.ncols() || gram.nrows() != a.len() || weights.len() != a.len() {
        return Err(Error::parameter(
            "kernel shape must match the coefficient count",
        ));
    }
    if !is_symmetric(gram) {
        return Err(Error::parameter("displacement kernel must be symmetric"));
    }
    Ok(())
}

/// (Da)ᵀ G (Da) with D = diag(weights): identity weights for plain replay,
/// preference or influence weights otherwise.
pub fn weighted_norm_quadratic(
    a: &Array1<f64>,
    gram: &Array2<f64>,
    weights: &[f64],
) -> Result<f64> {
    check_kernel(a, gram, weights)?;
    let da = Array1::from_iter(a.iter().zip(weights).map(|(&ai, &wi)| wi * ai));
    Ok(da.dot(&gram.dot(&da)))
}

/// The Rayleigh sandwich (λ_min(G)‖Da‖², (Da)ᵀG(Da), λ_max(G)‖Da‖²).
/// Violation of lower ≤ value ≤ upper beyond 1e-9 relative slack is a
/// numeric error — it would mean the eigensolver or the form is broken.
pub fn eigen_bounds_check(
    a: &Array1<f64>,
    gram: &Array2<f64>,
    weights: &[f64],
) -> Result<(f64, f64, f64)> {
    check_kernel(a, gram, weights)?;
    let value = weighted_norm_quadratic(a, gram, weights)?;
    let (lo, hi) = sym_eigen_extremes(gram)?;
    let da_norm2: f64 = a
        .iter()
        .zip(weights)
        .map(|(&ai, &wi)| (wi * ai) * (wi * ai))
        .sum();
    let lower = lo * da_norm2;
    let upper = hi * da_norm2;
    let slack = 1e-9 * upper.abs().max(value.abs()).max(1e-300);
    if value < lower - slack || value > upper + slack {
        return Err(Error::numeric(format!(
            "Rayleigh sandwich violated: {lower} <= {value} <= {upper} fails"
        )));
    }
    Ok((lower, value, upper))
}

/// Plain-replay weights: every sample counts fully.
pub fn ga_weights(n: usize) -> Vec<f64> {
    vec![1.0; n]
}

/// Preference weights frozen at θ₀ against a reference parameter vector:
/// W_i = 2σ(β(ℓ_ref,i − ℓ₀,i)).
pub fn npo_weights(
    problem: &ReplayProblem,
    theta0: &Array1<f64>,
    theta_ref: &Array1<f64>,
    beta: f64,
) -> Result<Vec<f64>> {
    problem.validate()?;
    if !(beta > 0.0) {
        return Err(Error::parameter("beta must be positive"));
    }
    (0..problem.features.nrows())
        .map(|i| {
            let x = problem.row(i);
            let l0 = logistic_loss(theta0, problem.offset, &x, problem.labels[i])?;
            let lr = logistic_loss(theta_ref, problem.offset, &x, problem.labels[i])?;
            Ok(2.0 / (1.0 + (-beta * (lr - l0)).exp()))
        })
        .collect()
}

/// Influence weights for the logistic unit, frozen at θ₀. The Hessian over
/// the replay set is H = (1/n) Σ f_i(1−f_i) x_i x_iᵀ + λI (the offset is a
/// constant, so the parameters are just θ), raw scores are −ḡᵀH⁻¹g_i, and
/// the same select/truncate/normalize pipeline as the classifier head
/// applies.
pub fn imu_weights(
    problem: &ReplayProblem,
    theta0: &Array1<f64>,
    damping: f64,
    top_ratio: f64,
    percentile: f64,
) -> Result<Vec<f64>> {
    problem.validate()?;
    if !(damping > 0.0) {
        return Err(Error::parameter("damping must be positive"));
    }
    let n = problem.features.nrows();
    let d = problem.features.ncols();
    let mut h = Array2::<f64>::eye(d) * damping;
    let mut grads = Vec::with_capacity(n);
    let mut gbar = Array1::<f64>::zeros(d);
    for i in 0..n {
        let x = problem.row(i);
        let f = logistic_prob(theta0, problem.offset, &x, problem.labels[i])?;
        let scale = f * (1.0 - f) / n as f64;
        for p in 0..d {
            for q in 0..d {
                h[[p, q]] += scale * x[p] * x[q];
            }
        }
        let g = logistic_grad(theta0, problem.offset, &x, problem.labels[i])?;
        gbar += &g;
        grads.push(g);
    }
    gbar /= n as f64;
    let chol = Cholesky::new(&h)?;
    let s = chol.solve(&gbar)?;
    let raw: Vec<f64> = grads.iter().map(|g| -s.dot(g)).collect();
    let negatives = select_negative(&raw);
    if negatives.iter().any(|&b| b) {
        let kept = select_top_r(&raw, &negatives, top_ratio)?;
        normalize_weights(&raw, &kept, percentile)
    } else {
        Ok(vec![1.0 / n as f64; n])
    }
}

/// One emitted trajectory record for the divergence study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DivergenceRow {
    pub seed: u64,
    pub method: String,
    pub step: usize,
    pub direct_norm: f64,
    pub quadratic_norm: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

pub const DIVERGENCE_CSV_HEADER: &str =
    "seed,method,step,direct_norm,quadratic_norm,lower_bound,upper_bound";

impl DivergenceRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.seed,
            self.method,
            self.step,
            self.direct_norm,
            self.quadratic_norm,
            self.lower_bound,
            self.upper_bound
        )
    }
}

/// Seeded Gaussian replay problem: labels alternate, features N(0, I).
pub fn gen_replay_problem(n: usize, d: usize, offset: f64, seed: u64) -> Result<ReplayProblem> {
    if n == 0 || d == 0 {
        return Err(Error::parameter("replay problem needs n >= 1 and d >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::StandardNormal;
    let features = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(normal));
    let labels = (0..n).map(|i| i % 2).collect();
    let problem = ReplayProblem {
        features,
        labels,
        offset,
    };
    problem.validate()?;
    Ok(problem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn rel_diff(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-30)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let theta = array![0.3, -0.8, 0.5];
        let x = array![1.2, 0.4, -0.9];
        for y in [0usize, 1] {
            let g = logistic_grad(&theta, 0.2, &x, y).unwrap();
            let eps = 1e-7;
            for q in 0..3 {
                let mut tp = theta.clone();
                tp[q] += eps;
                let mut tm = theta.clone();
                tm[q] -= eps;
                let fd = (logistic_loss(&tp, 0.2, &x, y).unwrap()
                    - logistic_loss(&tm, 0.2, &x, y).unwrap())
                    / (2.0 * eps);
                assert_abs_diff_eq!(g[q], fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn step_is_the_weighted_negative_loss_gradient() {
        let theta = array![0.4, -0.2];
        let x = array![0.9, 1.1];
        let (eta, w) = (0.3, 0.7);
        for y in [0usize, 1] {
            let stepped = logistic_step(&theta, -0.1, &x, y, eta, w).unwrap();
            let g = logistic_grad(&theta, -0.1, &x, y).unwrap();
            for q in 0..2 {
                assert_abs_diff_eq!(stepped[q], theta[q] - eta * w * g[q], epsilon = 1e-14);
            }
            // Moving against the loss gradient raises f for this sample.
            let before = logistic_prob(&theta, -0.1, &x, y).unwrap();
            let after = logistic_prob(&stepped, -0.1, &x, y).unwrap();
            assert!(after > before);
        }
    }

    #[test]
    fn saturated_sample_does_not_move() {
        // Drive f to 1 within machine precision: (1-f) = 0 exactly.
        let theta = array![60.0];
        let x = array![1.0];
        let stepped = logistic_step(&theta, 0.0, &x, 1, 0.5, 1.0).unwrap();
        assert_eq!(stepped, theta);
    }

    #[test]
    fn step_at_the_origin_is_half_the_feature() {
        // y=1, θ=0, b=0: f = 1/2, step = η·w·x/2.
        let theta = Array1::zeros(3);
        let x = array![2.0, -4.0, 6.0];
        let stepped = logistic_step(&theta, 0.0, &x, 1, 1.0, 1.0).unwrap();
        assert_eq!(stepped, array![1.0, -2.0, 3.0]);
    }

    #[test]
    fn frozen_replay_is_exactly_linear_in_counts() {
        for seed in 0..20u64 {
            let problem = gen_replay_problem(15, 5, -0.3, seed).unwrap();
            let theta0 = Array1::from_shape_fn(5, |q| (q as f64 - 2.0) * 0.1);
            let weights = ga_weights(15);
            let cfg = ReplayConfig {
                eta: 0.2,
                steps: 120,
                seed: seed ^ 0xabcd,
                mode: ReplayMode::Frozen,
            };
            let out = replay(&problem, &theta0, &weights, &cfg).unwrap();
            assert_eq!(out.counts.iter().sum::<usize>(), cfg.steps);
            let a = replay_coefficients(&problem, &theta0, &out.counts, cfg.eta).unwrap();
            let closed = &theta0 + &problem.features.t().dot(&a);
            let num = (&out.theta - &closed).mapv(|v| v * v).sum().sqrt();
            let den = (&out.theta - &theta0).mapv(|v| v * v).sum().sqrt();
            assert!(num / den.max(1e-30) <= 1e-9, "seed {seed}: {num:e}/{den:e}");
        }
    }

    #[test]
    fn direct_and_quadratic_norms_agree_in_frozen_mode() {
        let problem = gen_replay_problem(12, 4, 0.0, 11).unwrap();
        let theta0 = Array1::from_shape_fn(4, |q| 0.05 * q as f64);
        let weights = npo_weights(&problem, &theta0, &(&theta0 + 0.3), 0.9).unwrap();
        let cfg = ReplayConfig {
            eta: 0.15,
            steps: 80,
            seed: 2,
            mode: ReplayMode::Frozen,
        };
        let out = replay(&problem, &theta0, &weights, &cfg).unwrap();
        let a = replay_coefficients(&problem, &theta0, &out.counts, cfg.eta).unwrap();
        let gram = gram_squared(&problem.features);
        let direct = weighted_norm_direct(&problem.features, &out.theta, &theta0).unwrap();
        let quad = weighted_norm_quadratic(&a, &gram, &weights).unwrap();
        assert!(rel_diff(direct, quad) <= 1e-9, "{direct} vs {quad}");
        let (lower, value, upper) = eigen_bounds_check(&a, &gram, &weights).unwrap();
        assert!(lower <= value && value <= upper);
    }

    #[test]
    fn zero_displacement_has_zero_norm() {
        let problem = gen_replay_problem(5, 3, 0.0, 1).unwrap();
        let theta = array![0.4, -0.1, 0.2];
        assert_eq!(
            weighted_norm_direct(&problem.features, &theta, &theta).unwrap(),
            0.0
        );
    }

    #[test]
    fn identity_features_give_squared_distance() {
        let features = Array2::eye(3);
        let t0 = array![1.0, 2.0, 3.0];
        let t1 = array![2.0, 0.0, 3.5];
        let direct = weighted_norm_direct(&features, &t1, &t0).unwrap();
        assert_abs_diff_eq!(direct, 1.0 + 4.0 + 0.25, epsilon = 1e-12);
    }

    #[test]
    fn scalar_quadratic_form_squares_the_coefficient() {
        let a = array![3.0];
        let gram = array![[1.0]];
        assert_abs_diff_eq!(
            weighted_norm_quadratic(&a, &gram, &[1.0]).unwrap(),
            9.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn identity_weights_reproduce_the_plain_value() {
        let problem = gen_replay_problem(7, 3, 0.1, 13).unwrap();
        let a = Array1::from_shape_fn(7, |i| 0.1 * (i as f64 + 1.0));
        let gram = gram_squared(&problem.features);
        let plain = a.dot(&gram.dot(&a));
        let viaw = weighted_norm_quadratic(&a, &gram, &ga_weights(7)).unwrap();
        assert_abs_diff_eq!(plain, viaw, epsilon = 1e-12);
    }

    #[test]
    fn live_mode_departs_from_the_linear_decomposition() {
        let problem = gen_replay_problem(10, 4, 0.0, 17).unwrap();
        let theta0 = Array1::zeros(4);
        let weights = ga_weights(10);
        let cfg = ReplayConfig {
            eta: 0.8,
            steps: 200,
            seed: 5,
            mode: ReplayMode::Live,
        };
        let out = replay(&problem, &theta0, &weights, &cfg).unwrap();
        let a = replay_coefficients(&problem, &theta0, &out.counts, cfg.eta).unwrap();
        let closed = &theta0 + &problem.features.t().dot(&a);
        let num = (&out.theta - &closed).mapv(|v| v * v).sum().sqrt();
        assert!(num > 1e-3, "live replay unexpectedly matched the frozen sum");
    }

    #[test]
    fn asymmetric_kernel_is_rejected() {
        let a = array![1.0, 2.0];
        let mut g = array![[2.0, 0.5], [0.5, 3.0]];
        assert!(weighted_norm_quadratic(&a, &g, &[1.0, 1.0]).is_ok());
        g[[0, 1]] = 0.7;
        assert!(matches!(
            weighted_norm_quadratic(&a, &g, &[1.0, 1.0]),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            eigen_bounds_check(&a, &g, &[1.0, 1.0]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn spherical_kernel_collapses_the_sandwich() {
        let gram = Array2::eye(4) * 2.5;
        let a = array![1.0, -2.0, 0.5, 1.5];
        let w = [0.5, 1.0, 0.25, 0.75];
        let (lower, value, upper) = eigen_bounds_check(&a, &gram, &w).unwrap();
        assert_abs_diff_eq!(lower, value, epsilon = 1e-9);
        assert_abs_diff_eq!(value, upper, epsilon = 1e-9);
    }

    #[test]
    fn zero_weights_zero_everything() {
        let problem = gen_replay_problem(6, 3, 0.0, 19).unwrap();
        let gram = gram_squared(&problem.features);
        let a = Array1::from_elem(6, 0.4);
        let (lower, value, upper) = eigen_bounds_check(&a, &gram, &[0.0; 6]).unwrap();
        assert_eq!((lower, value, upper), (0.0, 0.0, 0.0));
    }

    #[test]
    fn sandwich_holds_on_a_hundred_random_instances() {
        for seed in 0..100u64 {
            let problem = gen_replay_problem(9, 4, 0.05, seed).unwrap();
            let gram = gram_squared(&problem.features);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf00d);
            let a = Array1::from_shape_fn(9, |_| rng.random_range(-1.0..1.0));
            let w: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.5)).collect();
            eigen_bounds_check(&a, &gram, &w).expect("sandwich must hold");
        }
    }

    #[test]
    fn gram_squared_matches_elementwise_definition() {
        let problem = gen_replay_problem(6, 3, 0.0, 21).unwrap();
        let x = &problem.features;
        let xtx = x.t().dot(x);
        let g = gram_squared(x);
        for i in 0..6 {
            for j in 0..6 {
                let direct = x.row(i).dot(&xtx.dot(&x.row(j).to_owned()));
                assert_abs_diff_eq!(g[[i, j]], direct, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn bounded_weights_never_exceed_plain_replay_on_a_diagonal_kernel() {
        // Orthogonal samples make G diagonal, where the elementwise shrink
        // a_i → w_i a_i with w_i ≤ 1 provably shrinks (Da)ᵀG(Da).
        let n = 5;
        let features = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                1.0 + i as f64 * 0.3
            } else {
                0.0
            }
        });
        let problem = ReplayProblem {
            features,
            labels: (0..n).map(|i| i % 2).collect(),
            offset: 0.05,
        };
        let theta0 = Array1::from_elem(n, 0.2);
        let gram = gram_squared(&problem.features);
        let counts = vec![3usize, 1, 4, 0, 2];
        let a = replay_coefficients(&problem, &theta0, &counts, 0.3).unwrap();
        let bounded = [0.9, 0.1, 1.0, 0.7, 0.4];
        let v_plain = weighted_norm_quadratic(&a, &gram, &ga_weights(n)).unwrap();
        let v_bounded = weighted_norm_quadratic(&a, &gram, &bounded).unwrap();
        assert!(v_bounded <= v_plain * (1.0 + 1e-12));
    }

    #[test]
    fn influence_weights_form_a_capped_distribution() {
        let problem = gen_replay_problem(20, 6, 0.1, 31).unwrap();
        // A few live warmup steps move θ₀ off zero so scores are non-trivial.
        let warm = replay(
            &problem,
            &Array1::zeros(6),
            &ga_weights(20),
            &ReplayConfig {
                eta: 0.1,
                steps: 30,
                seed: 7,
                mode: ReplayMode::Live,
            },
        )
        .unwrap();
        let w = imu_weights(&problem, &warm.theta, 1e-3, 1.0, 95.0).unwrap();
        let sum: f64 = w.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn npo_weights_stay_in_the_open_interval() {
        let problem = gen_replay_problem(25, 5, -0.2, 41).unwrap();
        let theta0 = Array1::from_elem(5, 0.3);
        let theta_ref = Array1::from_elem(5, -0.4);
        let w = npo_weights(&problem, &theta0, &theta_ref, 1.3).unwrap();
        assert!(w.iter().all(|&v| v > 0.0 && v < 2.0));
        // Identical reference ⇒ weight exactly 1.
        let w1 = npo_weights(&problem, &theta0, &theta0, 1.3).unwrap();
        assert!(w1.iter().all(|&v| (v - 1.0).abs() <= 1e-12));
    }

    proptest! {
        #[test]
        fn shrinking_every_weight_by_s_scales_the_norm_by_s_squared(
            s in 0.05f64..1.0,
            seed in 0u64..400,
        ) {
            let problem = gen_replay_problem(8, 3, 0.0, seed).unwrap();
            let theta0 = Array1::zeros(3);
            let counts = vec![2usize, 0, 1, 3, 1, 0, 2, 1];
            let a = replay_coefficients(&problem, &theta0, &counts, 0.2).unwrap();
            let gram = gram_squared(&problem.features);
            let v0 = weighted_norm_quadratic(&a, &gram, &ga_weights(8)).unwrap();
            let shrunk: Vec<f64> = vec![s; 8];
            let vs = weighted_norm_quadratic(&a, &gram, &shrunk).unwrap();
            prop_assert!(rel_diff(vs, s * s * v0) <= 1e-9);
        }
    }
}
