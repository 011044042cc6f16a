//! Exact reconstruction of trained-model predictions from a recorded
//! trajectory.
//!
//! For a run `θ_0 → θ_N`, any prediction of the final model decomposes as
//!
//! ```text
//! f_N(x) = f_0(x) − Σ_s ⟨φ_s(x), κ_s⟩ − λ Σ_s ⟨φ_s(x), r_s⟩
//! ```
//!
//! where, per step `s`:
//!
//! * `φ_s(x)` is the **test-side map**: the path integral
//!   `∫_0^1 ∇_θ f(x; θ_{s−1} + t(θ_s − θ_{s−1})) dt`, one row per model
//!   output, approximated by `T`-interval trapezoidal quadrature (the module
//!   computes several `T` values in one pass using nested nodes). This is
//!   the only approximation anywhere; everything below is exact.
//! * `κ_s = Σ_k Φ_s[·,k]` is the **train-side map** summed over training
//!   samples. Column `k` carries sample `x_k`'s momentum-accumulated loss
//!   gradient: with `u_{k,i} = ∇_θ L_k(θ_{i−1})`,
//!   `Φ_s[·,k] = scale_s ⊙ w_s[·,k]` where
//!   `w_s[·,k] = β₁ w_{s−1}[·,k] + (1−β₁)/|B_s| · u_{k,s} · 1[k ∈ B_s]`
//!   (SGD-momentum drops the `(1−β₁)` factor) and `scale_s` is the
//!   optimizer's per-parameter update factor
//!   ([`OptimizerKind::update_scale`]) built from the *recorded* `v_s` and
//!   `α_s`. Summed over `k`, `w_s` telescopes to the recorded first moment,
//!   so `κ_s + λ r_s` reproduces the recorded update `θ_{s−1} − θ_s`
//!   exactly; the per-sample split merely distributes it over training
//!   points. The recurrence keeps memory at `O(M·D)` instead of the naive
//!   `O(N·M·D)`.
//! * `r_s` is the decay term routed around the moments: `α_s θ_{s−1}` for
//!   AdamW (decoupled decay); for SGD-momentum the decay rides inside the
//!   velocity, giving `r_s = α_s β ρ_s` with `ρ_s = β ρ_{s−1} + θ_{s−1}`.
//!
//! A sweep walks steps once, maintains the train-side state, and hands each
//! [`SweepVisitor`] the per-step context plus (inside the requested window)
//! the integrated test maps per target sample. Reconstruction, influence
//! tables, kernel slices, and step-importance series are all visitors over
//! the same pass.
//!
//! Determinism: visitors are invoked in fixed (step, target) order and all
//! parallel reductions fold fixed-size chunks sequentially, so every output
//! is bitwise identical for any worker count.

use rayon::prelude::*;

use crate::dataset::{Sample, SplitData};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::ModelSpec;
use crate::optim::OptimizerKind;
use crate::tensor::axpy;
use crate::train::build_graphs;
use crate::trajectory::TrajectoryLog;

/// Integrated test-side map for one target sample at one quadrature order.
#[derive(Debug, Clone)]
pub struct TestMap {
    /// Row-major `O × D`: row `o` is `∫ ∇_θ f_o dt` along the step segment.
    pub rows: Vec<f64>,
    pub out_dim: usize,
    /// Rows summed over outputs: `t[j] = Σ_o rows[o][j]`.
    pub summed: Vec<f64>,
}

impl TestMap {
    fn new(out_dim: usize, d: usize) -> TestMap {
        TestMap {
            rows: vec![0.0; out_dim * d],
            out_dim,
            summed: vec![0.0; d],
        }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        let d = self.summed.len();
        &self.rows[o * d..(o + 1) * d]
    }

    fn finalize_summed(&mut self) {
        let d = self.summed.len();
        self.summed.fill(0.0);
        for o in 0..self.out_dim {
            for j in 0..d {
                self.summed[j] += self.rows[o * d + j];
            }
        }
    }
}

/// Per-sample momentum columns `w_s` (see module docs). Column `k` times the
/// step scale is the train-side feature `Φ_s[·,k]`.
#[derive(Debug)]
pub struct SampleColumns {
    cols: Vec<Vec<f64>>,
}

impl SampleColumns {
    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    /// Raw momentum column for training sample `k`.
    pub fn col(&self, k: usize) -> &[f64] {
        &self.cols[k]
    }

    /// `Φ_s[·,k] = scale ⊙ w_s[·,k]`, written into `out`.
    pub fn phi_into(&self, k: usize, scale: &[f64], out: &mut [f64]) {
        for (i, (w, s)) in self.cols[k].iter().zip(scale).enumerate() {
            out[i] = w * s;
        }
    }
}

/// Everything visitors may read at one trajectory step.
pub struct StepContext<'a> {
    /// 1-based step index.
    pub s: usize,
    pub theta_prev: &'a [f64],
    pub theta_cur: &'a [f64],
    pub alpha: f64,
    /// Weight-decay coefficient λ of the recorded optimizer.
    pub lambda: f64,
    /// Per-parameter update scale at this step.
    pub scale: &'a [f64],
    /// Train-side kernel vector `κ_s = Σ_k Φ_s[·,k]`.
    pub kappa: &'a [f64],
    /// Regularization vector `r_s` (includes `α_s`; multiply by λ).
    pub reg: &'a [f64],
    /// Per-sample momentum columns.
    pub w: &'a SampleColumns,
}

/// Consumer of a sweep. `on_step` fires for every step in `1..=N`;
/// `on_test_maps` fires for each (step in window, target) pair in fixed
/// order, with one map per requested quadrature order.
pub trait SweepVisitor {
    /// Return false if the visitor never reads test maps; a sweep whose
    /// visitors all decline skips the expensive path integrals entirely.
    fn wants_test_maps(&self) -> bool {
        true
    }

    fn on_step(&mut self, _ctx: &StepContext) -> Result<()> {
        Ok(())
    }

    /// `target` is the index into the sweep's target slice; `maps` is
    /// aligned with [`SweepOptions::t_values`].
    fn on_test_maps(
        &mut self,
        _ctx: &StepContext,
        _target: usize,
        _maps: &[TestMap],
    ) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// Trapezoidal interval counts, all of which must divide the largest;
    /// each produces its own [`TestMap`] from one shared set of node
    /// evaluations.
    pub t_values: Vec<usize>,
    /// Inclusive 1-based step window for test-map evaluation. Train-side
    /// recurrences always run from step 1 (momentum carries history into
    /// the window).
    pub window: (usize, usize),
}

impl SweepOptions {
    pub fn single(t: usize, steps: usize) -> SweepOptions {
        SweepOptions {
            t_values: vec![t],
            window: (1, steps),
        }
    }

    fn validate(&self, steps: usize) -> Result<usize> {
        if self.t_values.is_empty() {
            return Err(Error::Config("at least one quadrature order required".into()));
        }
        let &t_max = self.t_values.iter().max().expect("nonempty");
        for &t in &self.t_values {
            if t == 0 {
                return Err(Error::Config("quadrature order must be >= 1".into()));
            }
            if t_max % t != 0 {
                return Err(Error::Config(format!(
                    "quadrature orders must share nodes: {t} does not divide {t_max}"
                )));
            }
        }
        let (lo, hi) = self.window;
        if lo == 0 || lo > hi || hi > steps {
            return Err(Error::Config(format!(
                "window {lo}..={hi} invalid for a {steps}-step trajectory"
            )));
        }
        Ok(t_max)
    }
}

/// Walk the trajectory once, feeding every visitor. `targets` are the
/// samples whose test-side maps are computed (typically the test set).
pub fn sweep(
    log: &TrajectoryLog,
    data: &SplitData,
    targets: &[Sample],
    opts: &SweepOptions,
    visitors: &mut [&mut dyn SweepVisitor],
) -> Result<()> {
    let cfg = &log.meta.config;
    cfg.validate()?;
    let steps = log.steps();
    if steps == 0 {
        return Err(Error::Config("trajectory has no steps".into()));
    }
    let t_max = opts.validate(steps)?;
    let d = log.meta.d;
    let m_count = data.train.len();
    if m_count != log.meta.train_size {
        return Err(Error::Data(format!(
            "training set has {m_count} samples, log records {}",
            log.meta.train_size
        )));
    }

    let want_maps = visitors.iter().any(|v| v.wants_test_maps()) && !targets.is_empty();
    let train_graphs = build_graphs(&cfg.model, data.train.as_slice())?;
    let target_graphs = if want_maps {
        build_graphs(&cfg.model, targets)?
    } else {
        Vec::new()
    };
    let out_dim = cfg.model.output_dim();

    // Quadrature weights per (t index, node): node i of the t_max grid is
    // node i/stride of the coarser grid when stride divides i.
    let node_weights: Vec<Vec<f64>> = opts
        .t_values
        .iter()
        .map(|&t| {
            let stride = t_max / t;
            (0..=t_max)
                .map(|i| {
                    if i % stride != 0 {
                        0.0
                    } else {
                        let m = i / stride;
                        let end = m == 0 || m == t;
                        if end {
                            0.5 / t as f64
                        } else {
                            1.0 / t as f64
                        }
                    }
                })
                .collect()
        })
        .collect();

    let (beta1_like, is_adamw) = match cfg.optimizer {
        OptimizerKind::AdamW { beta1, .. } => (beta1, true),
        OptimizerKind::SgdMomentum { beta, .. } => (beta, false),
    };
    let lambda = cfg.optimizer.weight_decay();

    let mut w = SampleColumns {
        cols: vec![vec![0.0; d]; m_count],
    };
    let mut rho = vec![0.0; d]; // SGD-momentum decay accumulator
    let mut scale = vec![0.0; d];
    let mut kappa = vec![0.0; d];
    let mut reg = vec![0.0; d];

    // Group width for parallel target-map evaluation: scheduling only, never
    // affects values or visitor order.
    let group = (rayon::current_num_threads().max(1) * 2).max(2);

    for s in 1..=steps {
        let prev = &log.records[s - 1];
        let rec = &log.records[s];
        let theta_prev = &prev.theta;
        let theta_cur = &rec.theta;

        // --- train side ---
        let members: Vec<usize> = rec.batch.ones().collect();
        if members.is_empty() {
            return Err(Error::Data(format!("step {s} has an empty batch mask")));
        }
        let inv_b = 1.0 / members.len() as f64;
        let grads: Vec<Result<(usize, Vec<f64>)>> = members
            .par_iter()
            .map(|&k| {
                let (graph, out) = &train_graphs[k];
                let vals = graph.forward(theta_prev)?;
                let outputs = graph.value(&vals, theta_prev, *out);
                let seed = cfg.loss.output_grad(outputs, data.train[k].label);
                let g = graph.backward(&vals, theta_prev, *out, &seed)?;
                Ok((k, g))
            })
            .collect();

        let coeff = if is_adamw {
            (1.0 - beta1_like) * inv_b
        } else {
            inv_b
        };
        for col in w.cols.iter_mut() {
            for x in col.iter_mut() {
                *x *= beta1_like;
            }
        }
        for g in grads {
            let (k, u) = g?;
            axpy(coeff, &u, &mut w.cols[k]);
        }

        cfg.optimizer.update_scale(&rec.v, s, rec.alpha, &mut scale);

        kappa.fill(0.0);
        for col in &w.cols {
            for (acc, x) in kappa.iter_mut().zip(col) {
                *acc += x;
            }
        }
        for (kj, sj) in kappa.iter_mut().zip(&scale) {
            *kj *= sj;
        }

        if is_adamw {
            for (r, &t) in reg.iter_mut().zip(theta_prev.iter()) {
                *r = rec.alpha * t;
            }
        } else {
            for (rh, &t) in rho.iter_mut().zip(theta_prev.iter()) {
                *rh = beta1_like * (*rh) + beta1_like * t;
            }
            // ρ here already carries one leading β (ρ_s = Σ β^{s−i+1} θ_{i−1})
            for (r, &rh) in reg.iter_mut().zip(rho.iter()) {
                *r = rec.alpha * rh;
            }
        }

        let ctx = StepContext {
            s,
            theta_prev,
            theta_cur,
            alpha: rec.alpha,
            lambda,
            scale: &scale,
            kappa: &kappa,
            reg: &reg,
            w: &w,
        };
        for v in visitors.iter_mut() {
            v.on_step(&ctx)?;
        }

        // --- test side ---
        if !want_maps || s < opts.window.0 || s > opts.window.1 {
            continue;
        }
        let mut idx = 0usize;
        while idx < targets.len() {
            let hi = (idx + group).min(targets.len());
            let batch: Vec<Result<Vec<TestMap>>> = (idx..hi)
                .into_par_iter()
                .map(|x| {
                    integrate_test_maps(
                        &target_graphs[x],
                        theta_prev,
                        theta_cur,
                        t_max,
                        &node_weights,
                        out_dim,
                        d,
                    )
                })
                .collect();
            for (x, maps) in (idx..hi).zip(batch) {
                let maps = maps?;
                for v in visitors.iter_mut() {
                    if v.wants_test_maps() {
                        v.on_test_maps(&ctx, x, &maps)?;
                    }
                }
            }
            idx = hi;
        }
    }
    Ok(())
}

/// Trapezoidal path integration of one sample's output Jacobian along a
/// parameter segment, for every requested quadrature order at once.
///
/// Each VJP is seeded with the node's quadrature weight so it accumulates
/// straight into the result rows; nodes shared by several orders go through
/// a scratch row once and are scattered with [`axpy`].
fn integrate_test_maps(
    (graph, out): &(Graph, NodeId),
    theta_prev: &[f64],
    theta_cur: &[f64],
    t_max: usize,
    node_weights: &[Vec<f64>],
    out_dim: usize,
    d: usize,
) -> Result<Vec<TestMap>> {
    let mut maps: Vec<TestMap> = node_weights.iter().map(|_| TestMap::new(out_dim, d)).collect();
    let mut theta_t = vec![0.0; d];
    let mut seed = vec![0.0; out_dim];
    let mut scratch = vec![0.0; d];

    for i in 0..=t_max {
        let users: Vec<(usize, f64)> = node_weights
            .iter()
            .enumerate()
            .filter_map(|(ti, ws)| (ws[i] != 0.0).then_some((ti, ws[i])))
            .collect();
        if users.is_empty() {
            continue;
        }
        let t = i as f64 / t_max as f64;
        for j in 0..d {
            theta_t[j] = theta_prev[j] + t * (theta_cur[j] - theta_prev[j]);
        }
        let vals = graph.forward(&theta_t)?;
        for o in 0..out_dim {
            if let [(ti, wgt)] = users.as_slice() {
                seed[o] = *wgt;
                let row = &mut maps[*ti].rows[o * d..(o + 1) * d];
                graph.backward_into(&vals, &theta_t, *out, &seed, row)?;
                seed[o] = 0.0;
            } else {
                scratch.fill(0.0);
                seed[o] = 1.0;
                graph.backward_into(&vals, &theta_t, *out, &seed, &mut scratch)?;
                seed[o] = 0.0;
                for &(ti, wgt) in &users {
                    let row = &mut maps[ti].rows[o * d..(o + 1) * d];
                    axpy(wgt, &scratch, row);
                }
            }
        }
    }
    for m in maps.iter_mut() {
        m.finalize_summed();
    }
    Ok(maps)
}

/// Decomposition of one reconstructed prediction.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    /// `f_{θ_0}(x)`.
    pub base: Vec<f64>,
    /// `Σ_s ⟨φ_s, κ_s⟩` per output.
    pub kernel_total: Vec<f64>,
    /// `Σ_s ⟨φ_s, r_s⟩` per output (λ not yet applied).
    pub reg_total: Vec<f64>,
    /// `base − kernel_total − λ·reg_total`.
    pub outputs: Vec<f64>,
    /// Per-step `(kernel_s, reg_s)` contributions, if recording was on.
    pub per_step: Option<Vec<(Vec<f64>, Vec<f64>)>>,
}

/// Visitor accumulating reconstructions for every (quadrature order,
/// target) pair.
pub struct ReconstructionVisitor {
    bases: Vec<Vec<f64>>,
    kernel: Vec<Vec<Vec<f64>>>, // [ti][target][o]
    reg: Vec<Vec<Vec<f64>>>,
    per_step: Option<Vec<Vec<Vec<(Vec<f64>, Vec<f64>)>>>>,
    lambda: f64,
}

impl ReconstructionVisitor {
    /// `theta0` must be the trajectory's record-0 parameters.
    pub fn new(
        model: &ModelSpec,
        theta0: &[f64],
        targets: &[Sample],
        t_count: usize,
        record_steps: bool,
    ) -> Result<ReconstructionVisitor> {
        let bases = targets
            .iter()
            .map(|x| model.forward_outputs(theta0, x))
            .collect::<Result<Vec<_>>>()?;
        let o = model.output_dim();
        let zeros = || vec![vec![vec![0.0; o]; targets.len()]; t_count];
        Ok(ReconstructionVisitor {
            bases,
            kernel: zeros(),
            reg: zeros(),
            per_step: record_steps.then(|| vec![vec![Vec::new(); targets.len()]; t_count]),
            lambda: 0.0,
        })
    }

    /// Finish into `[t index][target]` reconstructions.
    pub fn into_reconstructions(self) -> Vec<Vec<Reconstruction>> {
        let lambda = self.lambda;
        let mut out = Vec::with_capacity(self.kernel.len());
        for (ti, (kernels, regs)) in self.kernel.into_iter().zip(self.reg).enumerate() {
            let mut row = Vec::with_capacity(kernels.len());
            for (x, (kernel_total, reg_total)) in kernels.into_iter().zip(regs).enumerate() {
                let base = self.bases[x].clone();
                let outputs: Vec<f64> = base
                    .iter()
                    .zip(&kernel_total)
                    .zip(&reg_total)
                    .map(|((&b, &k), &r)| b - k - lambda * r)
                    .collect();
                row.push(Reconstruction {
                    base,
                    kernel_total,
                    reg_total,
                    outputs,
                    per_step: self
                        .per_step
                        .as_ref()
                        .map(|ps| ps[ti][x].clone()),
                });
            }
            out.push(row);
        }
        out
    }
}

impl SweepVisitor for ReconstructionVisitor {
    fn on_step(&mut self, ctx: &StepContext) -> Result<()> {
        self.lambda = ctx.lambda;
        Ok(())
    }

    fn on_test_maps(&mut self, ctx: &StepContext, target: usize, maps: &[TestMap]) -> Result<()> {
        for (ti, map) in maps.iter().enumerate() {
            let d = ctx.kappa.len();
            let mut kernel_s = vec![0.0; map.out_dim];
            let mut reg_s = vec![0.0; map.out_dim];
            for o in 0..map.out_dim {
                let row = &map.rows[o * d..(o + 1) * d];
                kernel_s[o] = crate::tensor::dot(row, ctx.kappa);
                reg_s[o] = crate::tensor::dot(row, ctx.reg);
            }
            for (acc, &x) in self.kernel[ti][target].iter_mut().zip(&kernel_s) {
                *acc += x;
            }
            for (acc, &x) in self.reg[ti][target].iter_mut().zip(&reg_s) {
                *acc += x;
            }
            if let Some(ps) = &mut self.per_step {
                ps[ti][target].push((kernel_s, reg_s));
            }
        }
        Ok(())
    }
}

/// Checks that `κ_s + λ r_s` reproduces the recorded update at every step —
/// the exactness anchor of the whole decomposition (no quadrature involved).
#[derive(Debug, Default)]
pub struct UpdateCheckVisitor {
    /// Largest relative error seen across all steps and parameters.
    pub max_rel_err: f64,
    pub steps_seen: usize,
}

impl SweepVisitor for UpdateCheckVisitor {
    fn wants_test_maps(&self) -> bool {
        false
    }

    fn on_step(&mut self, ctx: &StepContext) -> Result<()> {
        for j in 0..ctx.kappa.len() {
            let lhs = ctx.theta_prev[j] - ctx.theta_cur[j];
            let rhs = ctx.kappa[j] + ctx.lambda * ctx.reg[j];
            let denom = lhs.abs().max(rhs.abs()).max(1e-12);
            let rel = (lhs - rhs).abs() / denom;
            if rel > self.max_rel_err {
                self.max_rel_err = rel;
            }
        }
        self.steps_seen += 1;
        Ok(())
    }
}

/// Reconstruction quality against the live model, per quadrature order.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FidelityReport {
    pub t: usize,
    /// Fraction of targets whose argmax matches the model's.
    pub agreement: f64,
    pub mean_kl: f64,
    pub max_kl: f64,
    /// Largest `|reconstructed − model|` over all outputs and targets.
    pub max_abs_diff: f64,
    pub per_target: Vec<TargetFidelity>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TargetFidelity {
    pub target: usize,
    pub agree: bool,
    pub kl: f64,
    pub max_abs_diff: f64,
}

/// Normalize a raw score vector into log-probabilities.
pub fn log_softmax_vec(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    xs.iter().map(|&x| x - lse).collect()
}

/// `KL(p ‖ q)` for log-probability vectors.
pub fn kl_divergence(logp: &[f64], logq: &[f64]) -> f64 {
    logp.iter()
        .zip(logq)
        .map(|(&lp, &lq)| {
            let p = lp.exp();
            if p == 0.0 {
                0.0
            } else {
                p * (lp - lq)
            }
        })
        .sum()
}

/// Reconstruct every target at each quadrature order and score against the
/// final model. One sweep total; `t_values` share node evaluations.
pub fn fidelity(
    log: &TrajectoryLog,
    data: &SplitData,
    targets: &[Sample],
    t_values: &[usize],
) -> Result<Vec<FidelityReport>> {
    let model = &log.meta.config.model;
    let theta0 = &log.record(0)?.theta;
    let theta_n = &log.record(log.steps())?.theta;

    let mut recon =
        ReconstructionVisitor::new(model, theta0, targets, t_values.len(), false)?;
    let opts = SweepOptions {
        t_values: t_values.to_vec(),
        window: (1, log.steps()),
    };
    sweep(log, data, targets, &opts, &mut [&mut recon])?;
    let recons = recon.into_reconstructions();

    let model_outs: Vec<Vec<f64>> = targets
        .iter()
        .map(|x| model.forward_outputs(theta_n, x))
        .collect::<Result<Vec<_>>>()?;

    let mut reports = Vec::with_capacity(t_values.len());
    for (ti, &t) in t_values.iter().enumerate() {
        let mut per_target = Vec::with_capacity(targets.len());
        let mut agree_count = 0usize;
        let mut kl_sum = 0.0;
        let mut max_kl = 0.0f64;
        let mut max_abs = 0.0f64;
        for (x, rec) in recons[ti].iter().enumerate() {
            let model_out = &model_outs[x];
            let agree =
                crate::model::argmax(model_out) == crate::model::argmax(&rec.outputs);
            let kl = kl_divergence(&log_softmax_vec(model_out), &log_softmax_vec(&rec.outputs));
            let mut diff = 0.0f64;
            for (a, b) in model_out.iter().zip(&rec.outputs) {
                diff = diff.max((a - b).abs());
            }
            agree_count += usize::from(agree);
            kl_sum += kl;
            max_kl = max_kl.max(kl);
            max_abs = max_abs.max(diff);
            per_target.push(TargetFidelity {
                target: x,
                agree,
                kl,
                max_abs_diff: diff,
            });
        }
        reports.push(FidelityReport {
            t,
            agreement: agree_count as f64 / targets.len().max(1) as f64,
            mean_kl: kl_sum / targets.len().max(1) as f64,
            max_kl,
            max_abs_diff: max_abs,
            per_target,
        });
    }
    Ok(reports)
}
