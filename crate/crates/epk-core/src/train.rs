//! Instrumented training and bit-exact replay verification.
//!
//! The training loop records every step into a [`TrajectorySink`] — θ, the
//! optimizer moments, the step size, and the batch mask — and is careful to
//! be bitwise deterministic: batch gradients accumulate per-sample
//! contributions in fixed 64-sample chunks whose partial sums are folded in
//! chunk order, so the result is identical for any rayon worker count.
//!
//! [`replay_check`] re-executes a recorded run from `θ_0` using the
//! *recorded* batch masks and step sizes (not the RNG) and demands
//! bit-identical parameters and moments at every step. It shares
//! [`batch_gradient`] with the training loop, so the two sides perform the
//! same floating-point operations in the same order by construction.

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{Sample, SplitData};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::{argmax, Loss, ModelSpec};
use crate::params::ParamVector;
use crate::rng::Rng;
use crate::trajectory::{
    BatchMask, StepRecord, TrajectoryFile, TrajectoryLog, TrajectoryMeta, TrajectorySink,
};

/// Fixed accumulation chunk: parallel workers produce per-chunk partial sums
/// that are folded sequentially in chunk order. The constant must never
/// depend on the worker count, or determinism across `--workers` breaks.
const CHUNK: usize = 64;

/// Train/test metrics at one step.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: ParamVector,
    pub curves: Vec<CurvePoint>,
}

/// Build the per-sample computation graphs once; topology is reused across
/// every step and quadrature node.
pub fn build_graphs(model: &ModelSpec, samples: &[Sample]) -> Result<Vec<(Graph, NodeId)>> {
    samples.iter().map(|s| model.graph_for(s)).collect()
}

/// Mean gradient and mean loss over `indices` (ascending batch member
/// indices into `samples`). `grad_out` is overwritten.
pub fn batch_gradient(
    graphs: &[(Graph, NodeId)],
    samples: &[Sample],
    indices: &[usize],
    theta: &[f64],
    loss: Loss,
    grad_out: &mut [f64],
) -> Result<f64> {
    assert!(!indices.is_empty(), "batch must be nonempty");
    let d = grad_out.len();
    let partials: Vec<Result<(Vec<f64>, f64)>> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; d];
            let mut loss_sum = 0.0;
            for &k in chunk {
                let (graph, out) = &graphs[k];
                let vals = graph.forward(theta)?;
                let outputs = graph.value(&vals, theta, *out);
                loss_sum += loss.value(outputs, samples[k].label);
                let seed = loss.output_grad(outputs, samples[k].label);
                graph.backward_into(&vals, theta, *out, &seed, &mut g)?;
            }
            Ok((g, loss_sum))
        })
        .collect();

    grad_out.fill(0.0);
    let mut loss_sum = 0.0;
    for p in partials {
        let (g, l) = p?;
        for (acc, x) in grad_out.iter_mut().zip(&g) {
            *acc += x;
        }
        loss_sum += l;
    }
    let inv = 1.0 / indices.len() as f64;
    for x in grad_out.iter_mut() {
        *x *= inv;
    }
    Ok(loss_sum * inv)
}

/// Mean loss and accuracy over a sample set.
pub fn evaluate(
    graphs: &[(Graph, NodeId)],
    samples: &[Sample],
    theta: &[f64],
    loss: Loss,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let partials: Vec<Result<(f64, usize)>> = (0..samples.len())
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for &k in chunk {
                let (graph, out) = &graphs[k];
                let vals = graph.forward(theta)?;
                let outputs = graph.value(&vals, theta, *out);
                loss_sum += loss.value(outputs, samples[k].label);
                if argmax(outputs) == samples[k].label {
                    correct += 1;
                }
            }
            Ok((loss_sum, correct))
        })
        .collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for p in partials {
        let (l, c) = p?;
        loss_sum += l;
        correct += c;
    }
    let n = samples.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Run the configured training loop, streaming every record into `sink`.
///
/// On a non-finite update the run aborts with [`Error::NonFinite`]; records
/// for all completed steps have already reached the sink and are retained
/// for inspection.
pub fn train(
    cfg: &RunConfig,
    data: &SplitData,
    sink: &mut dyn TrajectorySink,
) -> Result<TrainResult> {
    let init = cfg.model.init_params(cfg.init_seed).data;
    train_from(cfg, data, init, sink)
}

/// [`train`] with an explicit starting point instead of the seed-derived
/// initialization — used by surgery experiments that train from donated
/// parameters. Note that [`replay_check`] assumes seed-derived starts, so
/// trajectories recorded from custom starts will not replay.
pub fn train_from(
    cfg: &RunConfig,
    data: &SplitData,
    init: Vec<f64>,
    sink: &mut dyn TrajectorySink,
) -> Result<TrainResult> {
    cfg.validate()?;
    let m_count = data.train.len();
    if m_count == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    if let Some(b) = cfg.batch_size {
        if b > m_count {
            return Err(Error::Config(format!(
                "batch_size {b} exceeds training set size {m_count}"
            )));
        }
    }

    let d = cfg.model.d();
    if init.len() != d {
        return Err(Error::Config(format!(
            "initial parameters have length {}, model needs {d}",
            init.len()
        )));
    }
    let meta = TrajectoryMeta {
        config: cfg.clone(),
        d,
        train_size: m_count,
        steps: cfg.steps,
    };
    sink.begin(&meta)?;

    let train_graphs = build_graphs(&cfg.model, &data.train)?;
    let test_graphs = build_graphs(&cfg.model, &data.test)?;

    let mut theta = init;
    let mut state = cfg.optimizer.init_state(d);
    sink.record(&StepRecord {
        theta: theta.clone(),
        m: state.m.clone(),
        v: state.v.clone(),
        alpha: 0.0,
        batch: BatchMask::empty(m_count),
    })?;

    let mut curves = Vec::new();
    let push_eval = |step: usize, theta: &[f64], curves: &mut Vec<CurvePoint>| -> Result<()> {
        let (train_loss, train_acc) = evaluate(&train_graphs, &data.train, theta, cfg.loss)?;
        let (test_loss, test_acc) = evaluate(&test_graphs, &data.test, theta, cfg.loss)?;
        curves.push(CurvePoint {
            step,
            train_loss,
            train_acc,
            test_loss,
            test_acc,
        });
        Ok(())
    };
    push_eval(0, &theta, &mut curves)?;

    let mut batch_rng = Rng::new(cfg.batch_seed);
    let mut grad = vec![0.0; d];
    for s in 1..=cfg.steps {
        let indices: Vec<usize> = match cfg.batch_size {
            Some(b) if b < m_count => batch_rng.sample_indices(m_count, b),
            _ => (0..m_count).collect(),
        };
        batch_gradient(
            &train_graphs,
            &data.train,
            &indices,
            &theta,
            cfg.loss,
            &mut grad,
        )?;
        let alpha = cfg.schedule.alpha(s);
        cfg.optimizer.apply_step(&mut theta, &mut state, &grad, alpha)?;
        sink.record(&StepRecord {
            theta: theta.clone(),
            m: state.m.clone(),
            v: state.v.clone(),
            alpha,
            batch: BatchMask::from_indices(m_count, &indices),
        })?;
        if s % cfg.eval_every == 0 || s == cfg.steps {
            push_eval(s, &theta, &mut curves)?;
        }
    }
    sink.finish()?;

    Ok(TrainResult {
        params: ParamVector::new(theta, cfg.model.registry())?,
        curves,
    })
}

/// Outcome of a replay verification.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReplayReport {
    /// True iff every record matched bit for bit.
    pub identical: bool,
    /// First step whose recomputed state differed (0 = the init record).
    pub first_divergence: Option<usize>,
    /// Largest `|recomputed − recorded|` over all compared values.
    pub max_abs_diff: f64,
    pub steps_checked: usize,
}

/// Re-execute a recorded run from `θ_0` using the recorded batch masks and
/// step sizes, comparing every recomputed record bit for bit.
pub fn replay_check(log: &TrajectoryLog) -> Result<ReplayReport> {
    let records = log.records.iter().map(|r| Ok(r.clone()));
    replay_records(&log.meta, records)
}

/// Streaming variant of [`replay_check`]: reads records straight from disk,
/// so logs larger than RAM can be verified.
pub fn replay_check_file(path: &std::path::Path) -> Result<ReplayReport> {
    let mut f = TrajectoryFile::open(path)?;
    let meta = f.meta().clone();
    let records = (0..=meta.steps).map(move |s| f.read_record(s));
    replay_records(&meta, records)
}

fn replay_records(
    meta: &TrajectoryMeta,
    records: impl Iterator<Item = Result<StepRecord>>,
) -> Result<ReplayReport> {
    let cfg = &meta.config;
    cfg.validate()?;
    let data = cfg.data.generate()?;
    if data.train.len() != meta.train_size {
        return Err(Error::Data(format!(
            "regenerated training set has {} samples, log records {}",
            data.train.len(),
            meta.train_size
        )));
    }
    let graphs = build_graphs(&cfg.model, &data.train)?;

    let mut theta = cfg.model.init_params(cfg.init_seed).data;
    let mut state = cfg.optimizer.init_state(theta.len());
    let mut grad = vec![0.0; theta.len()];

    let mut first_divergence: Option<usize> = None;
    let mut max_abs_diff = 0.0f64;
    let mut steps_checked = 0usize;
    let compare = |s: usize,
                       ours: &[f64],
                       recorded: &[f64],
                       diverged: &mut Option<usize>,
                       max_diff: &mut f64| {
        for (a, b) in ours.iter().zip(recorded) {
            if a.to_bits() != b.to_bits() {
                diverged.get_or_insert(s);
                let diff = (a - b).abs();
                if diff > *max_diff || max_diff.is_nan() {
                    *max_diff = diff;
                }
            }
        }
    };

    for (s, rec) in records.enumerate() {
        let rec = rec?;
        if s > 0 {
            let indices: Vec<usize> = rec.batch.ones().collect();
            if indices.is_empty() {
                return Err(Error::Data(format!("step {s} has an empty batch mask")));
            }
            batch_gradient(&graphs, &data.train, &indices, &theta, cfg.loss, &mut grad)?;
            cfg.optimizer
                .apply_step(&mut theta, &mut state, &grad, rec.alpha)?;
        }
        compare(s, &theta, &rec.theta, &mut first_divergence, &mut max_abs_diff);
        compare(s, &state.m, &rec.m, &mut first_divergence, &mut max_abs_diff);
        compare(s, &state.v, &rec.v, &mut first_divergence, &mut max_abs_diff);
        steps_checked = s;
    }

    if steps_checked != meta.steps {
        return Err(Error::MissingStep {
            step: meta.steps,
            last: steps_checked,
        });
    }
    Ok(ReplayReport {
        identical: first_divergence.is_none(),
        first_divergence,
        max_abs_diff,
        steps_checked,
    })
}
