//! The `epk` subcommands.
//!
//! Every command resolves its config, does its work through the library,
//! writes artifacts plus a `manifest.json` into the output directory, and
//! prints a short human-readable summary. Artifacts are deterministic:
//! rerunning a command with the same config and inputs reproduces every
//! CSV/JSON/SVG byte for byte (the manifest's wall time is the one
//! exception).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use epk_core::config::{DataConfig, FlatConfig};
use epk_core::csvio;
use epk_core::dataset::{read_modadd_csv, write_modadd_csv, Sample, SplitData};
use epk_core::epk::{fidelity, sweep, SweepOptions, UpdateCheckVisitor};
use epk_core::experiments::{
    grokking_report, layer_swap, pipeline_reinit_train, prune, PruneResult, PruneStrategy,
};
use epk_core::influence::{
    component_vectors, kernel_slice, param_scores, similarity_from_vectors, step_importance,
    SliceOrdering,
};
use epk_core::lasso::frequency_lasso;
use epk_core::params::ComponentRegistry;
use epk_core::svg::{heatmap, HeatmapOptions};
use epk_core::train::{replay_check_file, train};
use epk_core::trajectory::FileSink;
use serde::Serialize;

use crate::context::*;

/// Test samples the kernel analyses iterate over, honoring `test_limit`.
fn targets<'a>(data: &'a SplitData, flat: &FlatConfig) -> &'a [Sample] {
    let n = flat
        .test_limit
        .unwrap_or(data.test.len())
        .min(data.test.len());
    &data.test[..n]
}

fn window_of(flat: &FlatConfig, steps: usize) -> CmdResult<(usize, usize)> {
    flat.window(steps).map_err(validation)
}

/// One component name for the commands that analyze a single component:
/// `--component` wins, else the config's `components` list must name
/// exactly one.
fn single_component(
    flag: Option<&str>,
    flat: &FlatConfig,
    registry: &ComponentRegistry,
) -> CmdResult<String> {
    let name = match flag {
        Some(n) => n.to_string(),
        None => match flat.components.as_slice() {
            [one] => one.clone(),
            [] => {
                return Err(validation(anyhow!(
                    "pick a component with --component (available: {})",
                    registry.names().join(", ")
                )))
            }
            many => {
                return Err(validation(anyhow!(
                    "config lists {} components; pick one with --component",
                    many.len()
                )))
            }
        },
    };
    if !registry.contains(&name) {
        return Err(validation(anyhow!(
            "unknown component '{name}' (available: {})",
            registry.names().join(", ")
        )));
    }
    Ok(name)
}

fn print_out_dir(out: &Path) {
    println!("artifacts: {}", out.display());
}

// ---------------------------------------------------------------------------
// train

pub fn cmd_train(
    common: &Common,
    overrides: &[(String, String)],
    data_csv: Option<&Path>,
) -> CmdResult<()> {
    let base = base_config(common.config.as_deref(), common.preset.as_deref())?;
    let mut flat = apply_overrides(&base, overrides)?;
    apply_mapped_flags(&mut flat, common);
    let cfg = flat.to_run_config().map_err(validation)?;
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "train")?;
    let mut manifest = ManifestBuilder::new("train");

    let data = match data_csv {
        Some(path) => {
            if !path.exists() {
                return Err(missing(anyhow!("dataset {} does not exist", path.display())));
            }
            let p = match &cfg.data {
                DataConfig::ModAdd(spec) => spec.modulus,
                _ => {
                    return Err(validation(anyhow!(
                        "--data only applies to modular-addition configs"
                    )))
                }
            };
            let file = fs::File::open(path).map_err(missing)?;
            let split = read_modadd_csv(std::io::BufReader::new(file), p)
                .map_err(|e| missing(anyhow!("{}: {e}", path.display())))?;
            manifest.input(path);
            split
        }
        None => cfg.data.generate().map_err(validation)?,
    };

    let traj_path = out.join("trajectory.bin");
    let mut sink = FileSink::create(&traj_path).map_err(validation)?;
    let result = train(&cfg, &data, &mut sink).map_err(validation)?;

    let curves_path = out.join("curves.csv");
    csvio::write_curves_csv(&curves_path, &result.curves).map_err(validation)?;
    manifest.artifact(&traj_path).artifact(&curves_path);

    if matches!(cfg.data, DataConfig::ModAdd(_)) {
        let data_path = out.join("dataset.csv");
        let mut w = std::io::BufWriter::new(fs::File::create(&data_path).map_err(validation)?);
        write_modadd_csv(&mut w, &data).map_err(validation)?;
        use std::io::Write;
        w.flush().map_err(validation)?;
        manifest.artifact(&data_path);
    }

    let config_path = out.join("config.json");
    write_json(&config_path, &flat)?;
    manifest.artifact(&config_path);

    let last = result.curves.last().expect("at least one eval point");
    let phases = grokking_report(&result.curves, None);
    println!(
        "trained {} steps ({} params, {} train / {} test samples)",
        cfg.steps,
        cfg.model.d(),
        data.train.len(),
        data.test.len()
    );
    println!(
        "final: train_acc={:.3} test_acc={:.3} train_loss={:.4} test_loss={:.4}",
        last.train_acc, last.test_acc, last.train_loss, last.test_loss
    );
    match (phases.memorization_step, phases.grok_step) {
        (Some(m), Some(g)) => println!("memorized at step {m}, generalized at step {g}"),
        (Some(m), None) => println!("memorized at step {m}, never generalized"),
        _ => {}
    }
    let traj_bytes = fs::metadata(&traj_path).map(|m| m.len()).unwrap_or(0);
    println!("trajectory: {} ({traj_bytes} bytes)", traj_path.display());
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// epk-verify

#[derive(Serialize)]
struct UpdateCheckOutput {
    max_rel_err: f64,
    steps_checked: usize,
}

#[derive(Serialize)]
struct VerifyOutput {
    replay: epk_core::train::ReplayReport,
    update_check: UpdateCheckOutput,
    fidelity: Vec<epk_core::epk::FidelityReport>,
}

/// Quadrature orders to report: the nested refinements of T that land on
/// its grid, so every order comes out of one sweep.
fn t_chain(t: usize) -> Vec<usize> {
    let mut ts: Vec<usize> = [1, 10, 100]
        .into_iter()
        .filter(|&d| d < t && t % d == 0)
        .collect();
    ts.push(t);
    ts
}

pub fn cmd_epk_verify(common: &Common, overrides: &[(String, String)]) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "epk-verify")?;
    let mut manifest = ManifestBuilder::new("epk-verify");
    manifest.inputs(&rd.inputs);

    let replay = replay_check_file(&rd.trajectory_path()).map_err(validation)?;
    println!(
        "replay: {} ({} records, max |diff| {:.3e})",
        if replay.identical { "identical" } else { "DIVERGED" },
        replay.steps_checked,
        replay.max_abs_diff
    );

    let steps = rd.log.steps();
    let mut check = UpdateCheckVisitor::default();
    let opts = SweepOptions::single(1, steps);
    let xs = targets(&rd.data, &flat);
    sweep(&rd.log, &rd.data, xs, &opts, &mut [&mut check]).map_err(validation)?;
    println!(
        "update identity: max rel err {:.3e} over {} steps",
        check.max_rel_err, check.steps_seen
    );

    let ts = t_chain(flat.integration_steps);
    let reports = fidelity(&rd.log, &rd.data, xs, &ts).map_err(validation)?;
    for r in &reports {
        println!(
            "T={:<4} agreement={:.4} mean_kl={:.6e} max_kl={:.6e} max_abs_diff={:.3e}",
            r.t, r.agreement, r.mean_kl, r.max_kl, r.max_abs_diff
        );
    }

    let output = VerifyOutput {
        replay,
        update_check: UpdateCheckOutput {
            max_rel_err: check.max_rel_err,
            steps_checked: check.steps_seen,
        },
        fidelity: reports,
    };
    let fid_path = out.join("fidelity.json");
    write_json(&fid_path, &output)?;
    manifest.artifact(&fid_path);
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// scores

pub fn cmd_scores(common: &Common, overrides: &[(String, String)]) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "scores")?;
    let mut manifest = ManifestBuilder::new("scores");
    manifest.inputs(&rd.inputs);

    let window = window_of(&flat, rd.log.steps())?;
    let xs = targets(&rd.data, &flat);
    let scores = param_scores(&rd.log, &rd.data, xs, window, flat.integration_steps)
        .map_err(validation)?;

    let registry = rd.log.meta.config.model.registry();
    let path = out.join("scores.csv");
    csvio::write_scores_csv(&path, &registry, &scores).map_err(validation)?;
    manifest.artifact(&path);

    let mut ranked: Vec<usize> = (0..scores.len()).collect();
    ranked.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    println!(
        "scores over steps {}..={} at T={} ({} targets):",
        window.0,
        window.1,
        flat.integration_steps,
        xs.len()
    );
    for &j in ranked.iter().take(10) {
        let comp = registry
            .components()
            .iter()
            .find(|c| c.range().contains(&j))
            .map(|c| c.name.as_str())
            .unwrap_or("?");
        println!("  param {j:>6} [{comp}] {:.6e}", scores[j]);
    }
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// kernel-matrix

fn parse_ordering(name: &str) -> CmdResult<SliceOrdering> {
    match name {
        "by_sum" => Ok(SliceOrdering::BySum),
        "by_label" => Ok(SliceOrdering::ByLabel),
        "by_index" => Ok(SliceOrdering::ByIndex),
        other => Err(validation(anyhow!(
            "unknown ordering '{other}' (expected by_sum, by_label, or by_index)"
        ))),
    }
}

pub fn cmd_kernel_matrix(
    common: &Common,
    overrides: &[(String, String)],
    component: Option<&str>,
    ordering: Option<&str>,
) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "kernel-matrix")?;
    let mut manifest = ManifestBuilder::new("kernel-matrix");
    manifest.inputs(&rd.inputs);

    let registry = rd.log.meta.config.model.registry();
    let comp = single_component(component, &flat, &registry)?;
    let is_modadd = matches!(rd.log.meta.config.data, DataConfig::ModAdd(_));
    let ordering = match ordering {
        Some(name) => parse_ordering(name)?,
        None if is_modadd => SliceOrdering::BySum,
        None => SliceOrdering::ByIndex,
    };
    let window = window_of(&flat, rd.log.steps())?;
    let xs = targets(&rd.data, &flat);

    let slice = kernel_slice(
        &rd.log,
        &rd.data,
        xs,
        &comp,
        window,
        flat.integration_steps,
        ordering,
    )
    .map_err(validation)?;

    let csv_path = out.join(format!("kernel_{comp}.csv"));
    csvio::write_kernel_slice_csv(&csv_path, &slice).map_err(validation)?;
    manifest.artifact(&csv_path);

    let abs: Vec<f64> = slice.values.iter().map(|v| v.abs()).collect();
    let label_cap = 64;
    let opts = HeatmapOptions {
        title: format!(
            "|kernel| {comp}, steps {}..={}, {:?} order",
            window.0, window.1, ordering
        ),
        log_scale: true,
        row_labels: (slice.n_test <= label_cap)
            .then(|| slice.test_keys.iter().map(|k| k.to_string()).collect()),
        col_labels: (slice.n_train <= label_cap)
            .then(|| slice.train_keys.iter().map(|k| k.to_string()).collect()),
        ..HeatmapOptions::default()
    };
    let svg_path = out.join(format!("kernel_{comp}.svg"));
    let svg = heatmap(&abs, slice.n_test, slice.n_train, &opts).map_err(validation)?;
    fs::write(&svg_path, svg).map_err(validation)?;
    manifest.artifact(&svg_path);

    println!(
        "kernel slice {comp}: {} test x {} train, steps {}..={}, T={}",
        slice.n_test, slice.n_train, window.0, window.1, flat.integration_steps
    );
    if is_modadd {
        let test_labels: Vec<usize> = slice.test_perm.iter().map(|&i| xs[i].label).collect();
        let train_labels: Vec<usize> = slice
            .train_perm
            .iter()
            .map(|&k| rd.data.train[k].label)
            .collect();
        let (eq, ne) =
            epk_core::influence::residue_contrast(&abs, slice.n_train, &test_labels, &train_labels);
        println!(
            "mean |kernel|: equal residue {eq:.6e}, off-structure {ne:.6e} (ratio {:.2})",
            eq / ne
        );
    }
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// similarity

/// Human label for a test sample: "a+b" prompts keep their arithmetic.
fn sample_labels(xs: &[Sample]) -> Vec<String> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| match x.modadd_pair() {
            Some((a, b)) => format!("{a}+{b}"),
            None => format!("test_{i}"),
        })
        .collect()
}

pub fn cmd_similarity(
    common: &Common,
    overrides: &[(String, String)],
    component: Option<&str>,
) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "similarity")?;
    let mut manifest = ManifestBuilder::new("similarity");
    manifest.inputs(&rd.inputs);

    let registry = rd.log.meta.config.model.registry();
    let comp = single_component(component, &flat, &registry)?;
    let window = window_of(&flat, rd.log.steps())?;
    let xs = targets(&rd.data, &flat);

    let vectors = component_vectors(
        &rd.log,
        &rd.data,
        xs,
        &comp,
        window,
        flat.integration_steps,
        flat.per_output,
    )
    .map_err(validation)?;
    let sim = similarity_from_vectors(&vectors.rows);

    let labels = sample_labels(xs);
    let csv_path = out.join(format!("similarity_{comp}.csv"));
    csvio::write_similarity_csv(&csv_path, &sim, &labels).map_err(validation)?;
    manifest.artifact(&csv_path);

    let painted: Vec<f64> = (0..sim.n * sim.n)
        .map(|i| if sim.missing[i] { f64::NAN } else { sim.values[i] })
        .collect();
    let opts = HeatmapOptions {
        title: format!("test-map similarity {comp}, steps {}..={}", window.0, window.1),
        row_labels: (sim.n <= 64).then(|| labels.clone()),
        col_labels: (sim.n <= 64).then(|| labels.clone()),
        ..HeatmapOptions::default()
    };
    let svg_path = out.join(format!("similarity_{comp}.svg"));
    let svg = heatmap(&painted, sim.n, sim.n, &opts).map_err(validation)?;
    fs::write(&svg_path, svg).map_err(validation)?;
    manifest.artifact(&svg_path);

    println!("similarity {comp}: {} x {} test samples", sim.n, sim.n);
    if matches!(rd.log.meta.config.data, DataConfig::ModAdd(_)) {
        let mut eq = (0.0, 0usize);
        let mut ne = (0.0, 0usize);
        for i in 0..sim.n {
            for j in 0..sim.n {
                if i == j {
                    continue;
                }
                if let Some(v) = sim.get(i, j) {
                    if xs[i].label == xs[j].label {
                        eq = (eq.0 + v, eq.1 + 1);
                    } else {
                        ne = (ne.0 + v, ne.1 + 1);
                    }
                }
            }
        }
        if eq.1 > 0 && ne.1 > 0 {
            println!(
                "mean similarity: equal residue {:.4}, off-structure {:.4}",
                eq.0 / eq.1 as f64,
                ne.0 / ne.1 as f64
            );
        }
    }
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// step-importance

pub fn cmd_step_importance(common: &Common, overrides: &[(String, String)]) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "step-importance")?;
    let mut manifest = ManifestBuilder::new("step-importance");
    manifest.inputs(&rd.inputs);

    let window = window_of(&flat, rd.log.steps())?;
    let xs = targets(&rd.data, &flat);
    let series = step_importance(&rd.log, &rd.data, xs, window, flat.integration_steps)
        .map_err(validation)?;

    let path = out.join("step_importance.csv");
    csvio::write_step_importance_csv(&path, &series).map_err(validation)?;
    manifest.artifact(&path);

    println!(
        "step importance over steps {}..={} ({} targets):",
        window.0,
        window.1,
        xs.len()
    );
    for (ci, name) in series.components.iter().enumerate() {
        let (peak_si, peak) = series
            .psi
            .iter()
            .enumerate()
            .map(|(si, row)| (si, row[ci]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("window is non-empty");
        println!(
            "  {name}: peak psi {peak:.6e} at step {}",
            series.steps[peak_si]
        );
    }
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// prune

fn parse_strategy(name: &str) -> CmdResult<PruneStrategy> {
    match name {
        "epk_score" => Ok(PruneStrategy::EpkScore),
        "magnitude" => Ok(PruneStrategy::Magnitude),
        "random" => Ok(PruneStrategy::Random),
        other => Err(validation(anyhow!(
            "unknown prune strategy '{other}' (expected epk_score, magnitude, or random)"
        ))),
    }
}

pub fn cmd_prune(
    common: &Common,
    overrides: &[(String, String)],
    strategy: Option<&str>,
) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "prune")?;
    let mut manifest = ManifestBuilder::new("prune");
    manifest.inputs(&rd.inputs);

    let strategy = parse_strategy(strategy.unwrap_or(&flat.prune_strategy))?;
    let model = &rd.log.meta.config.model;
    let theta = &rd.log.record(rd.log.steps()).map_err(validation)?.theta;

    let scores = if matches!(strategy, PruneStrategy::EpkScore) {
        let window = window_of(&flat, rd.log.steps())?;
        let xs = targets(&rd.data, &flat);
        Some(
            param_scores(&rd.log, &rd.data, xs, window, flat.integration_steps)
                .map_err(validation)?,
        )
    } else {
        None
    };

    let mut results: Vec<PruneResult> = Vec::with_capacity(flat.prune_fractions.len());
    println!("pruning with {strategy:?} (keep fraction -> accuracy, KL vs dense):");
    for &c in &flat.prune_fractions {
        let r = prune(
            model,
            theta,
            scores.as_deref(),
            strategy,
            c,
            flat.prune_seed,
            &rd.data.test,
        )
        .map_err(validation)?;
        println!(
            "  c={:<5} kept {:>6}/{:<6} acc={:.4} kl={:.6e}",
            c, r.kept, r.prunable, r.accuracy, r.kl_vs_original
        );
        results.push(r);
    }

    let path = out.join("prune.json");
    write_json(&path, &results)?;
    manifest.artifact(&path);
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// swap

pub fn cmd_swap(
    common: &Common,
    overrides: &[(String, String)],
    source_step: Option<usize>,
    target_step: Option<usize>,
) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "swap")?;
    let mut manifest = ManifestBuilder::new("swap");
    manifest.inputs(&rd.inputs);

    let registry = rd.log.meta.config.model.registry();
    if flat.components.is_empty() {
        return Err(validation(anyhow!(
            "swap needs a components list in the config (available: {})",
            registry.names().join(", ")
        )));
    }
    let steps = rd.log.steps();
    let source = source_step.or(flat.swap_step).unwrap_or(steps);
    let target = target_step.unwrap_or(steps);

    let donor = rd.log.record(source).map_err(validation)?.theta.clone();
    let checkpoint = &rd.log.record(target).map_err(validation)?.theta;
    let result = layer_swap(
        &rd.log.meta.config.model,
        checkpoint,
        &donor,
        &flat.components,
        source,
        target,
        &rd.data.test,
    )
    .map_err(validation)?;

    println!(
        "swapped [{}] from step {source} into step {target}: accuracy {:.4} -> {:.4}",
        flat.components.join(", "),
        result.pre_accuracy,
        result.post_accuracy
    );
    let json_path = out.join("swap.json");
    write_json(&json_path, &result)?;
    manifest.artifact(&json_path);
    let conf_path = out.join("confusion.csv");
    csvio::write_confusion_csv(&conf_path, &result.confusion, result.n_classes)
        .map_err(validation)?;
    manifest.artifact(&conf_path);
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// reinit-train

pub fn cmd_reinit_train(
    common: &Common,
    overrides: &[(String, String)],
    source_step: Option<usize>,
) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "reinit-train")?;
    let mut manifest = ManifestBuilder::new("reinit-train");
    manifest.inputs(&rd.inputs);

    let cfg = flat.to_run_config().map_err(validation)?;
    let steps = rd.log.steps();
    let source = source_step.or(flat.swap_step).unwrap_or(steps);
    let donor = rd.log.record(source).map_err(validation)?.theta.clone();

    let run = pipeline_reinit_train(
        &cfg,
        &rd.data,
        &donor,
        &flat.components,
        source,
        &flat.reinit_seeds,
    )
    .map_err(validation)?;

    println!(
        "retrained {} seeds with [{}] grafted from step {source}:",
        flat.reinit_seeds.len(),
        flat.components.join(", ")
    );
    if let (Some(first), Some(last)) = (run.summary.first(), run.summary.last()) {
        println!(
            "  step {:>5}: train {:.4}±{:.4} test {:.4}±{:.4}",
            first.step,
            first.mean_train_acc,
            first.std_train_acc,
            first.mean_test_acc,
            first.std_test_acc
        );
        println!(
            "  step {:>5}: train {:.4}±{:.4} test {:.4}±{:.4}",
            last.step, last.mean_train_acc, last.std_train_acc, last.mean_test_acc, last.std_test_acc
        );
    }

    let json_path = out.join("reinit.json");
    write_json(&json_path, &run)?;
    manifest.artifact(&json_path);
    let csv_path = out.join("reinit.csv");
    csvio::write_reinit_csv(&csv_path, &run).map_err(validation)?;
    manifest.artifact(&csv_path);
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// lasso

pub fn cmd_lasso(
    common: &Common,
    overrides: &[(String, String)],
    component: Option<&str>,
) -> CmdResult<()> {
    let rd = load_run_dir(common.run.as_deref(), common.config.as_deref(), overrides)?;
    let mut flat = rd.flat.clone();
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "lasso")?;
    let mut manifest = ManifestBuilder::new("lasso");
    manifest.inputs(&rd.inputs);

    let registry = rd.log.meta.config.model.registry();
    let comp = single_component(component, &flat, &registry)?;
    let window = window_of(&flat, rd.log.steps())?;
    let xs = targets(&rd.data, &flat);
    let sums: Vec<i64> = xs
        .iter()
        .map(|x| x.modadd_sum().map(|s| s as i64))
        .collect::<Option<Vec<i64>>>()
        .ok_or_else(|| validation(anyhow!("frequency regression needs modular-addition data")))?;

    let vectors = component_vectors(
        &rd.log,
        &rd.data,
        xs,
        &comp,
        window,
        flat.integration_steps,
        flat.per_output,
    )
    .map_err(validation)?;
    let sim = similarity_from_vectors(&vectors.rows);

    let p = flat.modulus;
    let freq_range = (flat.freq_min, flat.freq_max.unwrap_or(p));
    let lambda = flat.lasso_penalty.unwrap_or(0.02);
    let fit = frequency_lasso(&sim, &sums, freq_range, lambda, flat.lasso_max_sweeps)
        .map_err(validation)?;

    println!(
        "lasso on similarity of {comp} (periods {}..={}, lambda={lambda}):",
        freq_range.0, freq_range.1
    );
    match &fit.dominant {
        Some((name, coef)) => println!("  dominant: {name} = {coef:.6}"),
        None => println!("  all coefficients zero"),
    }
    let mut ranked: Vec<(&String, &f64)> = fit
        .fit
        .names
        .iter()
        .zip(fit.fit.coefficients.iter())
        .filter(|(_, c)| **c != 0.0)
        .collect();
    ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    for (name, coef) in ranked.iter().take(5) {
        println!("  {name} = {coef:.6}");
    }
    println!(
        "  converged={} sweeps={} objective={:.6e}",
        fit.fit.converged,
        fit.fit.sweeps,
        fit.fit.objective.last().copied().unwrap_or(f64::NAN)
    );

    let path = out.join("lasso.json");
    write_json(&path, &fit)?;
    manifest.artifact(&path);
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}

// ---------------------------------------------------------------------------
// report

pub fn cmd_report(common: &Common, overrides: &[(String, String)]) -> CmdResult<()> {
    let dir: PathBuf = common
        .run
        .clone()
        .ok_or_else(|| validation(anyhow!("needs --run <dir> from a previous train")))?;
    if !dir.is_dir() {
        return Err(missing(anyhow!("run directory {} does not exist", dir.display())));
    }
    let curves_path = dir.join("curves.csv");
    if !curves_path.exists() {
        return Err(missing(anyhow!("{} has no curves.csv", dir.display())));
    }
    let cfg_path = dir.join("config.json");
    if !cfg_path.exists() {
        return Err(missing(anyhow!("{} has no config.json", dir.display())));
    }
    let base = read_config_file(&cfg_path)?;
    let mut flat = apply_overrides(&base, overrides)?;
    apply_mapped_flags(&mut flat, common);
    let out = resolve_out(common.out.as_deref(), flat.out_dir.as_deref(), "report")?;
    let mut manifest = ManifestBuilder::new("report");
    manifest.input(&curves_path).input(&cfg_path);

    let curves = csvio::read_curves_csv(&curves_path).map_err(validation)?;
    let imp_path = dir.join("step_importance.csv");
    let importance = if imp_path.exists() {
        let series = csvio::read_step_importance_csv(&imp_path).map_err(validation)?;
        manifest.input(&imp_path);
        Some(series)
    } else {
        None
    };

    let report = grokking_report(&curves, importance.as_ref());
    match report.memorization_step {
        Some(m) => println!("memorization (train accuracy 1.0) at step {m}"),
        None => println!("never memorized the train set"),
    }
    match report.grok_step {
        Some(g) => println!("generalization (test accuracy >= 0.99) at step {g}"),
        None => println!("never reached 0.99 test accuracy"),
    }
    if let Some(gap) = report.gap {
        println!("gap between the two: {gap} steps");
    }
    println!(
        "final: train_acc={:.3} test_acc={:.3}",
        report.final_train_acc, report.final_test_acc
    );
    for (comp, step, psi) in &report.importance_peaks {
        println!("  {comp}: peak step importance {psi:.6e} at step {step}");
    }

    let path = out.join("report.json");
    write_json(&path, &report)?;
    manifest.artifact(&path);
    manifest.write(&out, &flat)?;
    print_out_dir(&out);
    Ok(())
}
