//! Downstream studies built on the influence machinery: score-based
//! pruning, parameter surgery between checkpoints, training from donated
//! components, and grokking phase reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::{Sample, SplitData};
use crate::epk::{kl_divergence, log_softmax_vec};
use crate::error::{Error, Result};
use crate::influence::StepImportanceSeries;
use crate::model::{argmax, ModelSpec};
use crate::params::ComponentRegistry;
use crate::rng::Rng;
use crate::train::{train_from, CurvePoint, TrainResult};
use crate::trajectory::NullSink;

/// Model outputs for a sample list, evaluated independently per sample (so
/// the result is identical for any worker count).
pub fn evaluate_outputs(
    model: &ModelSpec,
    theta: &[f64],
    samples: &[Sample],
) -> Result<Vec<Vec<f64>>> {
    samples
        .par_iter()
        .map(|s| model.forward_outputs(theta, s))
        .collect()
}

/// Fraction of argmax-correct predictions plus the true × predicted count
/// matrix over `n_classes`.
pub fn accuracy_and_confusion(
    outputs: &[Vec<f64>],
    samples: &[Sample],
    n_classes: usize,
) -> (f64, Vec<usize>) {
    let mut confusion = vec![0usize; n_classes * n_classes];
    let mut correct = 0usize;
    for (out, sample) in outputs.iter().zip(samples) {
        let pred = argmax(out);
        confusion[sample.label * n_classes + pred] += 1;
        correct += usize::from(pred == sample.label);
    }
    (correct as f64 / samples.len().max(1) as f64, confusion)
}

/// Mean softmax-KL between two output sets, `KL(reference ‖ candidate)`.
pub fn mean_output_kl(reference: &[Vec<f64>], candidate: &[Vec<f64>]) -> f64 {
    let n = reference.len().max(1) as f64;
    reference
        .iter()
        .zip(candidate)
        .map(|(a, b)| kl_divergence(&log_softmax_vec(a), &log_softmax_vec(b)))
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStrategy {
    /// Rank by accumulated absolute influence scores.
    EpkScore,
    /// One-shot rank by parameter magnitude.
    Magnitude,
    /// Random ranking from a seeded generator.
    Random,
}

#[derive(Debug, Clone, Serialize)]
pub struct PruneResult {
    pub strategy: PruneStrategy,
    /// Fraction of the prunable set that was kept.
    pub c: f64,
    pub kept: usize,
    pub prunable: usize,
    /// Full-length keep mask (output layer always true).
    pub mask: Vec<bool>,
    pub accuracy: f64,
    /// Mean softmax-KL of the pruned model against the unpruned one.
    pub kl_vs_original: f64,
}

/// Keep the top `⌈c·|prunable|⌉` prunable indices by `|score|` (ties broken
/// by index), never touching the output layer. `scores` covers all `d`
/// parameters; entries outside the prunable set are ignored.
pub fn prune_mask(
    registry: &ComponentRegistry,
    scores: &[f64],
    c: f64,
) -> Result<Vec<bool>> {
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Config(format!(
            "keep fraction must be in (0, 1], got {c}"
        )));
    }
    let d = registry.d();
    if scores.len() != d {
        return Err(Error::Config(format!(
            "{} scores for {d} parameters",
            scores.len()
        )));
    }
    let output = registry.range_of("decoder")?;
    let mut prunable: Vec<usize> = (0..d).filter(|j| !output.contains(j)).collect();
    let keep = (c * prunable.len() as f64).ceil() as usize;
    prunable.sort_by(|&a, &b| {
        scores[b]
            .abs()
            .total_cmp(&scores[a].abs())
            .then(a.cmp(&b))
    });

    let mut mask = vec![false; d];
    for j in output {
        mask[j] = true;
    }
    for &j in prunable.iter().take(keep) {
        mask[j] = true;
    }
    Ok(mask)
}

/// Rank, mask, zero, and evaluate. `epk_scores` is required for
/// [`PruneStrategy::EpkScore`] and ignored otherwise; `seed` only feeds the
/// random strategy.
#[allow(clippy::too_many_arguments)]
pub fn prune(
    model: &ModelSpec,
    theta: &[f64],
    epk_scores: Option<&[f64]>,
    strategy: PruneStrategy,
    c: f64,
    seed: u64,
    eval: &[Sample],
) -> Result<PruneResult> {
    let registry = model.registry();
    let scores: Vec<f64> = match strategy {
        PruneStrategy::EpkScore => epk_scores
            .ok_or_else(|| Error::Config("score-based pruning needs influence scores".into()))?
            .to_vec(),
        PruneStrategy::Magnitude => theta.iter().map(|t| t.abs()).collect(),
        PruneStrategy::Random => {
            let mut rng = Rng::new(seed).derive(0x7072756e); // "prun"
            (0..theta.len()).map(|_| rng.next_f64()).collect()
        }
    };
    let mask = prune_mask(&registry, &scores, c)?;
    let pruned: Vec<f64> = theta
        .iter()
        .zip(&mask)
        .map(|(&t, &keep)| if keep { t } else { 0.0 })
        .collect();

    let original_outputs = evaluate_outputs(model, theta, eval)?;
    let pruned_outputs = evaluate_outputs(model, &pruned, eval)?;
    let (accuracy, _) = accuracy_and_confusion(&pruned_outputs, eval, model.output_dim());
    let kl = mean_output_kl(&original_outputs, &pruned_outputs);

    let output = registry.range_of("decoder")?;
    let prunable = theta.len() - output.len();
    let kept = mask.iter().filter(|&&m| m).count() - output.len();
    Ok(PruneResult {
        strategy,
        c,
        kept,
        prunable,
        mask,
        accuracy,
        kl_vs_original: kl,
    })
}

/// Replace the named components of `base` with `donor`'s values; all other
/// indices are returned bit-identical to `base`.
pub fn swap_params(
    registry: &ComponentRegistry,
    base: &[f64],
    donor: &[f64],
    components: &[String],
) -> Result<Vec<f64>> {
    let d = registry.d();
    if base.len() != d || donor.len() != d {
        return Err(Error::Config(format!(
            "parameter vectors ({}, {}) do not match the registry ({d})",
            base.len(),
            donor.len()
        )));
    }
    let ranges = registry.ranges_of(components)?;
    let mut out = base.to_vec();
    for (_, r) in ranges {
        out[r.clone()].copy_from_slice(&donor[r]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SwapResult {
    /// Step the donor parameters came from.
    pub source_step: usize,
    /// Step of the checkpoint receiving them.
    pub target_step: usize,
    pub components: Vec<String>,
    /// Checkpoint accuracy before surgery.
    pub pre_accuracy: f64,
    /// Accuracy after the donor components are swapped in.
    pub post_accuracy: f64,
    /// True × predicted counts for the swapped model.
    pub confusion: Vec<usize>,
    pub n_classes: usize,
}

/// Swap `components` from a donor parameter vector into a checkpoint and
/// evaluate both.
#[allow(clippy::too_many_arguments)]
pub fn layer_swap(
    model: &ModelSpec,
    checkpoint: &[f64],
    donor: &[f64],
    components: &[String],
    source_step: usize,
    target_step: usize,
    eval: &[Sample],
) -> Result<SwapResult> {
    let registry = model.registry();
    let swapped = swap_params(&registry, checkpoint, donor, components)?;
    let n_classes = model.output_dim();

    let pre_outputs = evaluate_outputs(model, checkpoint, eval)?;
    let (pre_accuracy, _) = accuracy_and_confusion(&pre_outputs, eval, n_classes);
    let post_outputs = evaluate_outputs(model, &swapped, eval)?;
    let (post_accuracy, confusion) = accuracy_and_confusion(&post_outputs, eval, n_classes);

    Ok(SwapResult {
        source_step,
        target_step,
        components: components.to_vec(),
        pre_accuracy,
        post_accuracy,
        confusion,
        n_classes,
    })
}

/// Aggregated curves for training runs that start from donated components.
#[derive(Debug, Clone, Serialize)]
pub struct ReinitRun {
    pub components: Vec<String>,
    pub source_step: usize,
    pub seeds: Vec<u64>,
    /// Raw per-seed curves.
    pub curves: Vec<Vec<CurvePoint>>,
    /// Per eval step: (step, mean/std train acc, mean/std test acc) across
    /// seeds.
    pub summary: Vec<ReinitPoint>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReinitPoint {
    pub step: usize,
    pub mean_train_acc: f64,
    pub std_train_acc: f64,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// For each seed, initialize the model randomly, copy the donor components
/// in, and train normally (donated parameters stay trainable). Per-seed
/// batch sampling varies with the seed so the aggregate is a real spread.
pub fn pipeline_reinit_train(
    cfg: &RunConfig,
    data: &SplitData,
    donor: &[f64],
    components: &[String],
    source_step: usize,
    seeds: &[u64],
) -> Result<ReinitRun> {
    if seeds.is_empty() {
        return Err(Error::Config("reinit experiment needs at least one seed".into()));
    }
    let registry = cfg.model.registry();
    let mut curves = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.init_seed = seed;
        run_cfg.batch_seed = seed.wrapping_add(1000);
        let base = run_cfg.model.init_params(seed).data;
        let init = swap_params(&registry, &base, donor, components)?;
        let TrainResult { curves: c, .. } =
            train_from(&run_cfg, data, init, &mut NullSink)?;
        curves.push(c);
    }

    let n_points = curves[0].len();
    for c in &curves {
        if c.len() != n_points {
            return Err(Error::Data("seed runs produced unequal curve lengths".into()));
        }
    }
    let mut summary = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let train_accs: Vec<f64> = curves.iter().map(|c| c[i].train_acc).collect();
        let test_accs: Vec<f64> = curves.iter().map(|c| c[i].test_acc).collect();
        let (mean_train_acc, std_train_acc) = mean_std(&train_accs);
        let (mean_test_acc, std_test_acc) = mean_std(&test_accs);
        summary.push(ReinitPoint {
            step: curves[0][i].step,
            mean_train_acc,
            std_train_acc,
            mean_test_acc,
            std_test_acc,
        });
    }
    Ok(ReinitRun {
        components: components.to_vec(),
        source_step,
        seeds: seeds.to_vec(),
        curves,
        summary,
    })
}

/// Phase summary of a training run in the usual grokking vocabulary.
#[derive(Debug, Clone, Serialize)]
pub struct GrokkingReport {
    /// First step with train accuracy 1.0.
    pub memorization_step: Option<usize>,
    /// First step with test accuracy ≥ 0.99.
    pub grok_step: Option<usize>,
    /// Steps between memorization and generalization.
    pub gap: Option<usize>,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    /// Per component: (name, step of peak kernel importance, peak value).
    pub importance_peaks: Vec<(String, usize, f64)>,
}

pub fn grokking_report(
    curves: &[CurvePoint],
    importance: Option<&StepImportanceSeries>,
) -> GrokkingReport {
    let memorization_step = curves
        .iter()
        .find(|p| p.train_acc >= 1.0)
        .map(|p| p.step);
    let grok_step = curves
        .iter()
        .find(|p| p.test_acc >= 0.99)
        .map(|p| p.step);
    let gap = match (memorization_step, grok_step) {
        (Some(m), Some(g)) if g >= m => Some(g - m),
        _ => None,
    };
    let importance_peaks = importance
        .map(|series| {
            series
                .components
                .iter()
                .enumerate()
                .map(|(ci, name)| {
                    let (si, peak) = series
                        .psi
                        .iter()
                        .map(|row| row[ci])
                        .enumerate()
                        .max_by(|(_, a), (_, b)| a.total_cmp(b))
                        .unwrap_or((0, 0.0));
                    (name.clone(), series.steps.get(si).copied().unwrap_or(0), peak)
                })
                .collect()
        })
        .unwrap_or_default();
    GrokkingReport {
        memorization_step,
        grok_step,
        gap,
        final_train_acc: curves.last().map(|p| p.train_acc).unwrap_or(0.0),
        final_test_acc: curves.last().map(|p| p.test_acc).unwrap_or(0.0),
        importance_peaks,
    }
}
