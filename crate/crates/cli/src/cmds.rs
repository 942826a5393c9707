//! The eight subcommands. Each one resolves the experiment config, runs one
//! experiment, writes its artifacts under `--out`, and prints a one-line
//! summary; every output directory gets the resolved `config.json`.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use unlearn_lab::divergence::{
    eigen_bounds_check, ga_weights, gen_replay_problem, gram_squared, imu_weights, npo_weights,
    replay, replay_coefficients, weighted_norm_direct, DivergenceRow, ReplayConfig, ReplayMode,
    DIVERGENCE_CSV_HEADER,
};
use unlearn_lab::influence::{influence_on_forget, loo_oracle, predicted_loo_deltas};
use unlearn_lab::markov::{forget_state_mass, run_case_study, CASE_STUDY_CSV_HEADER};
use unlearn_lab::metrics::{evaluate, EvalContext, EvalReport};
use unlearn_lab::model::{
    extract_features, load_model, save_model, train_classifier, ClassifierState, TrainConfig,
    TrainSummary,
};
use unlearn_lab::stats::spearman;
use unlearn_lab::synth::{
    gen_gaussian_classes, gen_markov_sequences, load_dataset, make_split, save_corpus,
    save_dataset, LabeledDataset, SplitSpec,
};
use unlearn_lab::unlearn::{retrain_oracle, run_unlearning, UnlearnRun};
use unlearn_lab::{Error, Result};

use crate::config::ExperimentConfig;
use crate::Cmd;

pub fn run(cmd: Cmd, overrides: &[(String, String)]) -> Result<()> {
    match cmd {
        Cmd::Gen {
            preset,
            config,
            out,
        } => cmd_gen(&preset, config.as_deref(), overrides, &out),
        Cmd::Train { config, data, out } => {
            cmd_train(config.as_deref(), data.as_deref(), overrides, &out)
        }
        Cmd::Unlearn {
            config,
            data,
            model,
            reference,
            method,
            nu,
            r,
            out,
        } => {
            let mut all = overrides.to_vec();
            if let Some(m) = method {
                all.push(("unlearn.method".into(), m));
            }
            if let Some(n) = nu {
                all.push(("unlearn.refresh_every".into(), n.to_string()));
            }
            if let Some(r) = r {
                all.push(("unlearn.top_ratio".into(), r.to_string()));
            }
            cmd_unlearn(
                config.as_deref(),
                data.as_deref(),
                model.as_deref(),
                reference.as_deref(),
                &all,
                &out,
            )
        }
        Cmd::Eval {
            config,
            data,
            model,
            reference,
            label,
            out,
        } => cmd_eval(
            config.as_deref(),
            data.as_deref(),
            model.as_deref(),
            reference.as_deref(),
            &label,
            overrides,
            &out,
        ),
        Cmd::Oracle {
            config,
            data,
            probes,
            out,
        } => {
            let mut all = overrides.to_vec();
            if let Some(p) = probes {
                all.push(("oracle.probes".into(), p.to_string()));
            }
            cmd_oracle(config.as_deref(), data.as_deref(), &all, &out)
        }
        Cmd::Divergence { config, out } => cmd_divergence(config.as_deref(), overrides, &out),
        Cmd::Markov { config, out } => cmd_markov(config.as_deref(), overrides, &out),
        Cmd::Report { runs, out } => cmd_report(&runs, &out),
    }
}

// ── shared plumbing ──────────────────────────────────────────────────────

fn prepare_out(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    cfg.write(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// The desk problem in feature space: dataset, split, extracted features,
/// and the three evaluation blocks. Test samples of fully forgotten classes
/// are excluded, so test accuracy measures what the model should still know.
struct Problem {
    ds: LabeledDataset,
    split: SplitSpec,
    z: Array2<f64>,
    train_z: Array2<f64>,
    train_y: Vec<usize>,
    fz: Array2<f64>,
    fy: Vec<usize>,
    rz: Array2<f64>,
    ry: Vec<usize>,
    tz: Array2<f64>,
    ty: Vec<usize>,
    train_cfg: TrainConfig,
}

impl Problem {
    fn ctx<'a>(&'a self, reference: Option<&'a ClassifierState>) -> EvalContext<'a> {
        EvalContext {
            forget: (&self.fz, &self.fy),
            retain: (&self.rz, &self.ry),
            test: (&self.tz, &self.ty),
            reference,
            kl_probe: None,
        }
    }
}

fn gather_rows(z: &Array2<f64>, labels: &[usize], idx: &[usize]) -> (Array2<f64>, Vec<usize>) {
    let mut out = Array2::zeros((idx.len(), z.ncols()));
    let mut y = Vec::with_capacity(idx.len());
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).assign(&z.row(i));
        y.push(labels[i]);
    }
    (out, y)
}

fn build_problem(cfg: &ExperimentConfig, data: Option<&Path>) -> Result<Problem> {
    let (ds, stored_split) = match data {
        Some(p) => load_dataset(p)?,
        None => (
            gen_gaussian_classes(
                cfg.dataset.class_count,
                cfg.dataset.d_in,
                cfg.dataset.n_per_class,
                cfg.dataset.spread,
                cfg.dataset.seed,
            )?,
            None,
        ),
    };
    let split = match stored_split {
        Some(s) => s,
        None => make_split(&ds, cfg.split.to_mode()?)?,
    };
    let spec = cfg.model.spec(ds.d_in(), ds.seed ^ 1)?;
    let z = extract_features(&spec, &ds.features)?;
    let train_indices: Vec<usize> = split.forget.iter().chain(&split.retain).copied().collect();
    let (train_z, train_y) = gather_rows(&z, &ds.labels, &train_indices);
    let (fz, fy) = gather_rows(&z, &ds.labels, &split.forget);
    let (rz, ry) = gather_rows(&z, &ds.labels, &split.retain);
    let kept_labels: HashSet<usize> = ry.iter().copied().collect();
    let test_kept: Vec<usize> = split
        .test
        .iter()
        .copied()
        .filter(|&i| kept_labels.contains(&ds.labels[i]))
        .collect();
    let (tz, ty) = gather_rows(&z, &ds.labels, &test_kept);
    let train_cfg = cfg.train.to_train_config(&z);
    Ok(Problem {
        ds,
        split,
        z,
        train_z,
        train_y,
        fz,
        fy,
        rz,
        ry,
        tz,
        ty,
        train_cfg,
    })
}

fn obtain_model(
    cfg: &ExperimentConfig,
    problem: &Problem,
    path: Option<&Path>,
) -> Result<(ClassifierState, Option<TrainSummary>)> {
    match path {
        Some(p) => Ok((load_model(p)?, None)),
        None => {
            let spec = cfg.model.spec(problem.ds.d_in(), problem.ds.seed ^ 1)?;
            let (cls, summary) = train_classifier(
                &problem.train_z,
                &problem.train_y,
                problem.ds.class_count,
                spec,
                &problem.train_cfg,
            )?;
            Ok((cls, Some(summary)))
        }
    }
}

fn obtain_reference(
    problem: &Problem,
    model: &ClassifierState,
    path: Option<&Path>,
) -> Result<ClassifierState> {
    match path {
        Some(p) => load_model(p),
        None => {
            let ctx = problem.ctx(None);
            let (reference, _) = retrain_oracle(model, &ctx, &problem.train_cfg)?;
            Ok(reference)
        }
    }
}

// ── gen ──────────────────────────────────────────────────────────────────

fn cmd_gen(
    preset: &str,
    config: Option<&Path>,
    overrides: &[(String, String)],
    out: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::resolve(config, overrides)?;
    prepare_out(out, &cfg)?;
    match preset {
        "gaussian3" => {
            let ds = gen_gaussian_classes(
                cfg.dataset.class_count,
                cfg.dataset.d_in,
                cfg.dataset.n_per_class,
                cfg.dataset.spread,
                cfg.dataset.seed,
            )?;
            let split = make_split(&ds, cfg.split.to_mode()?)?;
            let path = out.join("dataset.csv");
            save_dataset(&ds, Some(&split), &path)?;
            write_json(
                &out.join("manifest.json"),
                &serde_json::json!({
                    "kind": "gaussian",
                    "n": ds.len(),
                    "d_in": ds.d_in(),
                    "class_count": ds.class_count,
                    "seed": ds.seed,
                    "forget": split.forget.len(),
                    "retain": split.retain.len(),
                    "test": split.test.len(),
                }),
            )?;
            println!(
                "wrote {} ({} samples, forget {}, retain {}, test {})",
                path.display(),
                ds.len(),
                split.forget.len(),
                split.retain.len(),
                split.test.len()
            );
        }
        "markov" => {
            let corpus = gen_markov_sequences(
                cfg.markov.walks_per_source,
                cfg.markov.walk_len,
                cfg.markov.seed,
            )?;
            let path = out.join("corpus.csv");
            save_corpus(&corpus, &path)?;
            write_json(
                &out.join("manifest.json"),
                &serde_json::json!({
                    "kind": "markov",
                    "sequences": corpus.len(),
                    "walk_len": cfg.markov.walk_len,
                    "seed": cfg.markov.seed,
                }),
            )?;
            println!("wrote {} ({} walks)", path.display(), corpus.len());
        }
        other => {
            return Err(Error::parameter(format!(
                "unknown preset '{other}' (expected 'gaussian3' or 'markov')"
            )))
        }
    }
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────────

fn cmd_train(
    config: Option<&Path>,
    data: Option<&Path>,
    overrides: &[(String, String)],
    out: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::resolve(config, overrides)?;
    prepare_out(out, &cfg)?;
    let problem = build_problem(&cfg, data)?;
    let started = Instant::now();
    let (model, summary) = obtain_model(&cfg, &problem, None)?;
    let summary = summary.expect("training path always returns a summary");
    let wall = started.elapsed().as_secs_f64();
    save_model(&model, out.join("model.json"))?;
    write_json(
        &out.join("train_report.json"),
        &serde_json::json!({
            "epochs": summary.epochs,
            "final_grad_norm": summary.final_grad_norm,
            "final_loss": summary.final_loss,
            "converged": summary.converged,
            "learning_rate": problem.train_cfg.learning_rate,
            "tol": problem.train_cfg.tol,
            "l2": problem.train_cfg.l2,
            "train_samples": problem.train_y.len(),
            "wall_clock_seconds": wall,
        }),
    )?;
    println!(
        "trained on {} samples: epochs {}, grad norm {:.3e}, loss {:.6} -> {}",
        problem.train_y.len(),
        summary.epochs,
        summary.final_grad_norm,
        summary.final_loss,
        out.join("model.json").display()
    );
    Ok(())
}

// ── unlearn ──────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct RunFile<'a> {
    config: &'a ExperimentConfig,
    run: &'a UnlearnRun,
}

fn write_trajectory(path: &Path, initial: &EvalReport, per_epoch: &[EvalReport]) -> Result<()> {
    let mut text = String::from(EvalReport::CSV_HEADER);
    text.push('\n');
    text.push_str(&initial.csv_row(0));
    text.push('\n');
    for (i, report) in per_epoch.iter().enumerate() {
        text.push_str(&report.csv_row(i + 1));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn cmd_unlearn(
    config: Option<&Path>,
    data: Option<&Path>,
    model_path: Option<&Path>,
    reference_path: Option<&Path>,
    overrides: &[(String, String)],
    out: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::resolve(config, overrides)?;
    prepare_out(out, &cfg)?;
    let problem = build_problem(&cfg, data)?;
    let (model, _) = obtain_model(&cfg, &problem, model_path)?;
    let reference = obtain_reference(&problem, &model, reference_path)?;
    let ctx = problem.ctx(Some(&reference));
    let run = run_unlearning(&model, &ctx, Some(&problem.split.forget), &cfg.unlearn, &problem.train_cfg)?;

    write_json(&out.join("run.json"), &RunFile { config: &cfg, run: &run })?;
    write_trajectory(&out.join("trajectory.csv"), &run.initial, &run.per_epoch)?;
    if let Some((_, influence)) = run.weight_history.last() {
        influence.write_csv(out.join("influence.csv"))?;
    }
    save_model(run.model(), out.join("model.json"))?;
    for warning in &run.warnings {
        eprintln!("warning: {warning}");
    }
    let f = &run.final_report;
    println!(
        "{}: forget acc {:.4} -> {:.4}, retain acc {:.4} -> {:.4}, w_dist {} ({} epochs, {:.2}s)",
        cfg.unlearn.method.name(),
        run.initial.acc_forget,
        f.acc_forget,
        run.initial.acc_retain,
        f.acc_retain,
        f.w_dist.map(|w| format!("{w:.4}")).unwrap_or_else(|| "-".into()),
        run.per_epoch.len(),
        run.wall_clock_seconds,
    );
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────────

/// runs.csv shares the trajectory column order with the leading epoch column
/// replaced by the caller's label.
fn ledger_row(label: &str, report: &EvalReport) -> String {
    let row = report.csv_row(0);
    let metrics = row.split_once(',').map(|(_, rest)| rest).unwrap_or(&row);
    format!("{},{}", label.replace(',', ";"), metrics)
}

fn cmd_eval(
    config: Option<&Path>,
    data: Option<&Path>,
    model_path: Option<&Path>,
    reference_path: Option<&Path>,
    label: &str,
    overrides: &[(String, String)],
    out: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::resolve(config, overrides)?;
    prepare_out(out, &cfg)?;
    let problem = build_problem(&cfg, data)?;
    let (model, _) = obtain_model(&cfg, &problem, model_path)?;
    let reference = obtain_reference(&problem, &model, reference_path)?;
    let ctx = problem.ctx(Some(&reference));
    let report = evaluate(&model, &ctx, 0.0)?;

    let ledger = out.join("runs.csv");
    let mut text = if ledger.exists() {
        std::fs::read_to_string(&ledger)?
    } else {
        let header = EvalReport::CSV_HEADER.replacen("epoch", "label", 1);
        format!("{header}\n")
    };
    text.push_str(&ledger_row(label, &report));
    text.push('\n');
    std::fs::write(&ledger, text)?;

    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::format(e.to_string()))?;
    println!("{json}");
    Ok(())
}

// ── oracle ───────────────────────────────────────────────────────────────

fn cmd_oracle(
    config: Option<&Path>,
    data: Option<&Path>,
    overrides: &[(String, String)],
    out: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::resolve(config, overrides)?;
    if cfg.train.l2 <= 0.0 && cfg.unlearn.damping <= 0.0 {
        return Err(Error::parameter(
            "leave-one-out oracle needs a unique optimum: set train.l2 > 0 (and unlearn.damping > 0 for the influence side)",
        ));
    }
    prepare_out(out, &cfg)?;
    let problem = build_problem(&cfg, data)?;
    let (model, _) = obtain_model(&cfg, &problem, None)?;

    let probes = cfg.oracle.probes;
    if probes == 0 || probes > problem.split.forget.len() {
        return Err(Error::parameter(format!(
            "oracle.probes must lie in 1..={}, got {probes}",
            problem.split.forget.len()
        )));
    }
    let probe_indices: Vec<usize> = problem.split.forget[..probes].to_vec();

    let raw = influence_on_forget(&model, &problem.fz, &problem.fy, cfg.unlearn.damping)?;
    let predicted_all = predicted_loo_deltas(&raw, problem.train_y.len());
    let started = Instant::now();
    let records = loo_oracle(
        &model,
        &problem.z,
        &problem.ds.labels,
        &problem.split,
        &problem.train_cfg,
        &probe_indices,
    )?;
    let wall = started.elapsed().as_secs_f64();

    let mut measured = Vec::with_capacity(records.len());
    let mut predicted = Vec::with_capacity(records.len());
    let mut text = String::from("index,measured_delta,predicted_delta,epochs\n");
    for record in &records {
        let pos = problem
            .split
            .forget
            .iter()
            .position(|&i| i == record.index)
            .expect("probe indices come from the forget split");
        measured.push(record.delta_loss);
        predicted.push(predicted_all[pos]);
        text.push_str(&format!(
            "{},{},{},{}\n",
            record.index, record.delta_loss, predicted_all[pos], record.epochs
        ));
    }
    std::fs::write(out.join("loo.csv"), text)?;

    let rho = spearman(&measured, &predicted)?;
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "spearman": rho,
            "probes": records.len(),
            "forget_size": problem.split.forget.len(),
            "damping": cfg.unlearn.damping,
            "l2": cfg.train.l2,
            "wall_clock_seconds": wall,
        }),
    )?;
    println!(
        "leave-one-out oracle: {} probes, Spearman {:.4} ({:.2}s)",
        records.len(),
        rho,
        wall
    );
    Ok(())
}

// ── divergence ───────────────────────────────────────────────────────────

fn cmd_divergence(
    config: Option<&Path>,
    overrides: &[(String, String)],
    out: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::resolve(config, overrides)?;
    prepare_out(out, &cfg)?;
    let dv = &cfg.divergence;
    if dv.stride == 0 || dv.stride > dv.steps {
        return Err(Error::parameter(format!(
            "divergence.stride must lie in 1..={}, got {}",
            dv.steps, dv.stride
        )));
    }
    let modes: Vec<ReplayMode> = match dv.mode.as_str() {
        "frozen" => vec![ReplayMode::Frozen],
        "live" => vec![ReplayMode::Live],
        "both" => vec![ReplayMode::Frozen, ReplayMode::Live],
        other => {
            return Err(Error::parameter(format!(
                "unknown divergence mode '{other}' (expected 'frozen', 'live', or 'both')"
            )))
        }
    };

    let mut rows: Vec<DivergenceRow> = Vec::new();
    let mut frozen_max_gap = 0.0f64;
    let mut live_max_gap = 0.0f64;
    // quadratic_norm of the plain-replay row, keyed for the bounded-weights
    // comparison below.
    let mut plain: BTreeMap<(u64, usize, bool), f64> = BTreeMap::new();
    let mut bounded: BTreeMap<String, (usize, usize)> = BTreeMap::new();

    for trial in 0..dv.seeds {
        let seed = dv.seed + trial;
        let problem = gen_replay_problem(dv.n, dv.d, dv.offset, seed)?;
        let origin = Array1::<f64>::zeros(dv.d);
        let warm = replay(
            &problem,
            &origin,
            &ga_weights(dv.n),
            &ReplayConfig {
                eta: dv.eta,
                steps: dv.warmup,
                seed: seed ^ 0x5eed,
                mode: ReplayMode::Live,
            },
        )?;
        let theta0 = warm.theta;
        let gram2 = gram_squared(&problem.features);
        // The original (pre-warm-up) parameters play the preference
        // reference, so the weights sit mid-run rather than exactly at 1.
        let method_weights: Vec<(&str, Vec<f64>)> = vec![
            ("ga", ga_weights(dv.n)),
            ("npo", npo_weights(&problem, &theta0, &origin, dv.beta)?),
            (
                "imu",
                imu_weights(&problem, &theta0, dv.damping, dv.top_ratio, dv.percentile)?,
            ),
        ];
        for mode in &modes {
            let live = matches!(mode, ReplayMode::Live);
            for (name, weights) in &method_weights {
                for step in (dv.stride..=dv.steps).step_by(dv.stride) {
                    let outcome = replay(
                        &problem,
                        &theta0,
                        weights,
                        &ReplayConfig {
                            eta: dv.eta,
                            steps: step,
                            seed,
                            mode: *mode,
                        },
                    )?;
                    let a = replay_coefficients(&problem, &theta0, &outcome.counts, dv.eta)?;
                    let direct = weighted_norm_direct(&problem.features, &outcome.theta, &theta0)?;
                    let (lower, quad, upper) = eigen_bounds_check(&a, &gram2, weights)?;
                    let gap = (direct - quad).abs() / quad.abs().max(1e-300);
                    if live {
                        live_max_gap = live_max_gap.max(gap);
                    } else {
                        frozen_max_gap = frozen_max_gap.max(gap);
                    }
                    let label = if live {
                        format!("{name}-live")
                    } else {
                        (*name).to_string()
                    };
                    if *name == "ga" {
                        plain.insert((seed, step, live), quad);
                    } else if let Some(&plain_value) = plain.get(&(seed, step, live)) {
                        let entry = bounded.entry(label.clone()).or_insert((0, 0));
                        entry.1 += 1;
                        if quad <= plain_value {
                            entry.0 += 1;
                        }
                    }
                    rows.push(DivergenceRow {
                        seed,
                        method: label,
                        step,
                        direct_norm: direct,
                        quadratic_norm: quad,
                        lower_bound: lower,
                        upper_bound: upper,
                    });
                }
            }
        }
    }

    let mut text = String::from(DIVERGENCE_CSV_HEADER);
    text.push('\n');
    for row in &rows {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    std::fs::write(out.join("divergence.csv"), text)?;

    let below_plain: BTreeMap<String, f64> = bounded
        .iter()
        .map(|(k, (hits, total))| (k.clone(), *hits as f64 / (*total).max(1) as f64))
        .collect();
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "rows": rows.len(),
            "trials": dv.seeds,
            "frozen_max_rel_gap": frozen_max_gap,
            "live_max_rel_gap": live_max_gap,
            "fraction_below_plain_replay": below_plain,
        }),
    )?;
    println!(
        "divergence: {} rows over {} trials; frozen identity gap {:.2e}, live gap {:.2e}",
        rows.len(),
        dv.seeds,
        frozen_max_gap,
        live_max_gap
    );
    for (method, fraction) in &below_plain {
        println!("  {method}: quadratic norm <= plain replay in {:.0}% of rows", 100.0 * fraction);
    }
    Ok(())
}

// ── markov ───────────────────────────────────────────────────────────────

fn cmd_markov(config: Option<&Path>, overrides: &[(String, String)], out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::resolve(config, overrides)?;
    prepare_out(out, &cfg)?;
    let study = cfg.markov.to_case_study();
    let grid = cfg.markov.method_grid();
    let outcome = run_case_study(&study, &grid)?;

    let mut text = String::from(CASE_STUDY_CSV_HEADER);
    text.push('\n');
    text.push_str(&outcome.original.csv_row());
    text.push('\n');
    for row in &outcome.rows {
        text.push_str(&row.csv_row());
        text.push('\n');
    }
    std::fs::write(out.join("case_study.csv"), text)?;

    let mass_before = forget_state_mass(&outcome.model)?;
    let mut masses = serde_json::Map::new();
    masses.insert("original".into(), serde_json::json!(mass_before));
    println!(
        "original: loss_retain {:.4} (ln 3 = {:.4}), kl_retain {:.6}, forget-block mass {:.4}",
        outcome.original.loss_retain,
        (3.0f64).ln(),
        outcome.original.kl_retain,
        mass_before
    );
    for (row, run) in outcome.rows.iter().zip(&outcome.runs) {
        let mass = forget_state_mass(run.model())?;
        masses.insert(row.method.clone(), serde_json::json!(mass));
        println!(
            "{:>8}: loss_retain {:.4}, loss_forget {:.4}, kl_retain {:.6}, kl_forget {:.4}, mass {:.4} (drop {:+.4})",
            row.method,
            row.loss_retain,
            row.loss_forget,
            row.kl_retain,
            row.kl_forget,
            mass,
            mass_before - mass
        );
    }
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "train_epochs": outcome.train_summary.epochs,
            "train_grad_norm": outcome.train_summary.final_grad_norm,
            "retain_entropy_reference": (3.0f64).ln(),
            "forget_block_mass": masses,
        }),
    )?;
    println!("wrote {}", out.join("case_study.csv").display());
    Ok(())
}

// ── report ───────────────────────────────────────────────────────────────

#[derive(Deserialize)]
struct RunFilePart {
    run: RunPart,
}

#[derive(Deserialize)]
struct RunPart {
    method: String,
    final_report: EvalReport,
    wall_clock_seconds: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cmd_report(runs: &[PathBuf], out: &Path) -> Result<()> {
    let mut by_method: BTreeMap<String, Vec<RunPart>> = BTreeMap::new();
    for dir in runs {
        let path = dir.join("run.json");
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::parameter(format!("cannot read {}: {e}", path.display()))
        })?;
        let file: RunFilePart = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("bad run file {}: {e}", path.display())))?;
        by_method.entry(file.run.method.clone()).or_default().push(file.run);
    }

    let metrics: [(&str, fn(&RunPart) -> Option<f64>); 6] = [
        ("forget_acc", |r| Some(r.final_report.acc_forget)),
        ("retain_acc", |r| Some(r.final_report.acc_retain)),
        ("test_acc", |r| Some(r.final_report.acc_test)),
        ("mia", |r| Some(r.final_report.mia)),
        ("w_dist", |r| r.final_report.w_dist),
        ("seconds", |r| Some(r.wall_clock_seconds)),
    ];

    let mut csv = String::from("method,runs");
    for (name, _) in &metrics {
        csv.push_str(&format!(",{name}_mean,{name}_std"));
    }
    csv.push('\n');
    let mut md = String::from("| method | runs |");
    for (name, _) in &metrics {
        md.push_str(&format!(" {name} |"));
    }
    md.push_str("\n|---|---|");
    md.push_str(&"---|".repeat(metrics.len()));
    md.push('\n');

    for (method, parts) in &by_method {
        csv.push_str(&format!("{method},{}", parts.len()));
        md.push_str(&format!("| {method} | {} |", parts.len()));
        for (_, get) in &metrics {
            let values: Vec<f64> = parts.iter().filter_map(get).collect();
            if values.is_empty() {
                csv.push_str(",,");
                md.push_str(" - |");
            } else {
                let (mean, std) = mean_std(&values);
                csv.push_str(&format!(",{mean},{std}"));
                md.push_str(&format!(" {mean:.4} ± {std:.4} |"));
            }
        }
        csv.push('\n');
        md.push('\n');
    }

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("report.csv"), csv)?;
    std::fs::write(out.join("report.md"), &md)?;
    print!("{md}");
    println!("wrote {}", out.join("report.csv").display());
    Ok(())
}
