//! Influence-score algebra on top of the kernel decomposition.
//!
//! Every score here is a partial sum of the same quantity: with
//! `t_{s,x}[j] = Σ_o φ_s(x)[o,j]` (the test-side map summed over outputs)
//! and `Φ_s[j,k]` the per-sample train-side column, the atomic kernel score
//! is
//!
//! ```text
//! ψ_s(θ_j, x, x_k) = t_{s,x}[j] · Φ_s[j,k]
//! ```
//!
//! and the regularization analog is `ψ_s^reg(θ_j, x) = t_{s,x}[j] · r_s[j]`.
//! Accumulating over any subset of parameters / training samples / steps is
//! plain summation, so every coarser table is an exact partition sum of any
//! finer one — additivity is the module's defining invariant and is what
//! the tests pin down. Summed over everything, kernel plus λ·reg reproduces
//! `Σ_o (f_{θ_0}(x)[o] − reconstruction(x)[o])` for each test sample.
//!
//! Parameter-level tables are only materialized for explicitly requested
//! components; the default granularity is component × test × train over a
//! step window, which keeps memory far below the full
//! steps × params × samples tensor.

use std::ops::Range;

use serde::Serialize;

use crate::dataset::{Sample, SplitData};
use crate::epk::{sweep, StepContext, SweepOptions, SweepVisitor, TestMap};
use crate::error::{Error, Result};
use crate::params::ComponentRegistry;
use crate::trajectory::TrajectoryLog;

/// Component × test × train kernel scores plus component × test
/// regularization scores, accumulated over a step window.
#[derive(Debug, Clone, Serialize)]
pub struct InfluenceTable {
    pub components: Vec<String>,
    /// Inclusive 1-based step window the values accumulate over.
    pub window: (usize, usize),
    /// Quadrature order used for the test-side maps.
    pub t: usize,
    /// `kernel[c][x][k] = Σ_{s∈window} Σ_{j∈c} t_{s,x}[j] · Φ_s[j,k]`.
    pub kernel: Vec<Vec<Vec<f64>>>,
    /// `reg[c][x] = Σ_{s∈window} Σ_{j∈c} t_{s,x}[j] · r_s[j]` (λ not applied).
    pub reg: Vec<Vec<f64>>,
}

impl InfluenceTable {
    /// Kernel scores summed over training samples:
    /// `Ψ(c, x, X_train)`.
    pub fn train_summed(&self, c: usize, x: usize) -> f64 {
        self.kernel[c][x].iter().sum()
    }
}

/// Sweep visitor building an [`InfluenceTable`].
pub struct TableVisitor {
    ranges: Vec<(String, Range<usize>)>,
    kernel: Vec<Vec<Vec<f64>>>,
    reg: Vec<Vec<f64>>,
    window: (usize, usize),
    t: usize,
}

impl TableVisitor {
    pub fn new(
        registry: &ComponentRegistry,
        components: &[String],
        n_targets: usize,
        n_train: usize,
        window: (usize, usize),
        t: usize,
    ) -> Result<TableVisitor> {
        let ranges = registry.ranges_of(components)?;
        Ok(TableVisitor {
            kernel: vec![vec![vec![0.0; n_train]; n_targets]; ranges.len()],
            reg: vec![vec![0.0; n_targets]; ranges.len()],
            ranges,
            window,
            t,
        })
    }

    pub fn into_table(self) -> InfluenceTable {
        InfluenceTable {
            components: self.ranges.into_iter().map(|(n, _)| n).collect(),
            window: self.window,
            t: self.t,
            kernel: self.kernel,
            reg: self.reg,
        }
    }
}

impl SweepVisitor for TableVisitor {
    fn on_test_maps(&mut self, ctx: &StepContext, target: usize, maps: &[TestMap]) -> Result<()> {
        let t_vec = &maps[0].summed;
        for (ci, (_, range)) in self.ranges.iter().enumerate() {
            let r = range.clone();
            // q[j] = t[j]·scale[j] restricted to the component, so each
            // train column is a short dot product.
            let q: Vec<f64> = r
                .clone()
                .map(|j| t_vec[j] * ctx.scale[j])
                .collect();
            for k in 0..ctx.w.len() {
                let col = &ctx.w.col(k)[r.clone()];
                let mut acc = 0.0;
                for (a, b) in q.iter().zip(col) {
                    acc += a * b;
                }
                self.kernel[ci][target][k] += acc;
            }
            let mut reg_acc = 0.0;
            for j in r {
                reg_acc += t_vec[j] * ctx.reg[j];
            }
            self.reg[ci][target] += reg_acc;
        }
        Ok(())
    }
}

/// Build an influence table with its own sweep.
pub fn influence_table(
    log: &TrajectoryLog,
    data: &SplitData,
    targets: &[Sample],
    components: &[String],
    window: (usize, usize),
    t: usize,
) -> Result<InfluenceTable> {
    let registry = log.meta.config.model.registry();
    let mut v = TableVisitor::new(
        &registry,
        components,
        targets.len(),
        data.train.len(),
        window,
        t,
    )?;
    let opts = SweepOptions {
        t_values: vec![t],
        window,
    };
    sweep(log, data, targets, &opts, &mut [&mut v])?;
    Ok(v.into_table())
}

/// Per-parameter accumulated scores for one component:
/// `p_Θ(x)[j] = Σ_{s∈window} t_{s,x}[j] · κ_s[j]` for `j ∈ Θ`
/// (train-summed). With `per_output` on, rows keep one block per model
/// output instead of summing over outputs, giving `O·|Θ|`-length vectors.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentVectors {
    pub component: String,
    pub window: (usize, usize),
    pub per_output: bool,
    /// One vector per target.
    pub rows: Vec<Vec<f64>>,
}

pub struct ComponentVectorVisitor {
    component: String,
    range: Range<usize>,
    per_output: bool,
    rows: Vec<Vec<f64>>,
    window: (usize, usize),
}

impl ComponentVectorVisitor {
    pub fn new(
        registry: &ComponentRegistry,
        component: &str,
        n_targets: usize,
        out_dim: usize,
        per_output: bool,
        window: (usize, usize),
    ) -> Result<ComponentVectorVisitor> {
        let range = registry.range_of(component)?;
        let width = if per_output {
            out_dim * range.len()
        } else {
            range.len()
        };
        Ok(ComponentVectorVisitor {
            component: component.to_string(),
            range,
            per_output,
            rows: vec![vec![0.0; width]; n_targets],
            window,
        })
    }

    pub fn into_vectors(self) -> ComponentVectors {
        ComponentVectors {
            component: self.component,
            window: self.window,
            per_output: self.per_output,
            rows: self.rows,
        }
    }
}

impl SweepVisitor for ComponentVectorVisitor {
    fn on_test_maps(&mut self, ctx: &StepContext, target: usize, maps: &[TestMap]) -> Result<()> {
        let map = &maps[0];
        let row = &mut self.rows[target];
        let width = self.range.len();
        if self.per_output {
            for o in 0..map.out_dim {
                let jac = map.row(o);
                for (i, j) in self.range.clone().enumerate() {
                    row[o * width + i] += jac[j] * ctx.kappa[j];
                }
            }
        } else {
            for (i, j) in self.range.clone().enumerate() {
                row[i] += map.summed[j] * ctx.kappa[j];
            }
        }
        Ok(())
    }
}

pub fn component_vectors(
    log: &TrajectoryLog,
    data: &SplitData,
    targets: &[Sample],
    component: &str,
    window: (usize, usize),
    t: usize,
    per_output: bool,
) -> Result<ComponentVectors> {
    let model = &log.meta.config.model;
    let mut v = ComponentVectorVisitor::new(
        &model.registry(),
        component,
        targets.len(),
        model.output_dim(),
        per_output,
        window,
    )?;
    let opts = SweepOptions {
        t_values: vec![t],
        window,
    };
    sweep(log, data, targets, &opts, &mut [&mut v])?;
    Ok(v.into_vectors())
}

/// Cosine similarities between component vectors. Entries where either
/// vector is identically zero are flagged `missing` (and stored as 0.0)
/// rather than poisoning the matrix with NaN.
#[derive(Debug, Clone, Serialize)]
pub struct SimilarityMatrix {
    pub n: usize,
    /// Row-major `n × n`.
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
}

impl SimilarityMatrix {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if self.missing[i * self.n + j] {
            None
        } else {
            Some(self.values[i * self.n + j])
        }
    }
}

pub fn similarity_from_vectors(rows: &[Vec<f64>]) -> SimilarityMatrix {
    let n = rows.len();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut values = vec![0.0; n * n];
    let mut missing = vec![false; n * n];
    for i in 0..n {
        for j in i..n {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                missing[i * n + j] = true;
                missing[j * n + i] = true;
                continue;
            }
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let v = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    SimilarityMatrix { n, values, missing }
}

/// Per-step importance series for every registry component.
///
/// For each step `s` in the window and component `Θ`:
/// * `psi[s][Θ]  = Σ_x |Σ_{j∈Θ} t_{s,x}[j]·κ_s[j]|` — kernel importance,
/// * `reg[s][Θ]  = Σ_x |Σ_{j∈Θ} t_{s,x}[j]·r_s[j]|` — decay importance,
/// * `d[s][Θ]    = Σ_{j∈Θ} Σ_x (|t[j]·κ[j]| − |t[j]·r[j]|)` — the
///   per-parameter net series (absolute values taken *before* the parameter
///   sum, so it is additive over parameter partitions).
#[derive(Debug, Clone, Serialize)]
pub struct StepImportanceSeries {
    pub components: Vec<String>,
    pub steps: Vec<usize>,
    pub psi: Vec<Vec<f64>>,
    pub reg: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

pub struct StepImportanceVisitor {
    components: Vec<(String, Range<usize>)>,
    steps: Vec<usize>,
    psi: Vec<Vec<f64>>,
    reg: Vec<Vec<f64>>,
    d: Vec<Vec<f64>>,
    window: (usize, usize),
}

impl StepImportanceVisitor {
    pub fn new(registry: &ComponentRegistry, window: (usize, usize)) -> StepImportanceVisitor {
        let components: Vec<(String, Range<usize>)> = registry
            .components()
            .iter()
            .map(|c| (c.name.clone(), c.range()))
            .collect();
        let n_steps = window.1 - window.0 + 1;
        let n_comp = components.len();
        let zeros = || vec![vec![0.0; n_comp]; n_steps];
        StepImportanceVisitor {
            components,
            steps: (window.0..=window.1).collect(),
            psi: zeros(),
            reg: zeros(),
            d: zeros(),
            window,
        }
    }

    pub fn into_series(self) -> StepImportanceSeries {
        StepImportanceSeries {
            components: self.components.into_iter().map(|(n, _)| n).collect(),
            steps: self.steps,
            psi: self.psi,
            reg: self.reg,
            d: self.d,
        }
    }
}

impl SweepVisitor for StepImportanceVisitor {
    fn on_test_maps(&mut self, ctx: &StepContext, _target: usize, maps: &[TestMap]) -> Result<()> {
        let si = ctx.s - self.window.0;
        let t_vec = &maps[0].summed;
        for (ci, (_, range)) in self.components.iter().enumerate() {
            let mut k_sum = 0.0;
            let mut r_sum = 0.0;
            let mut d_sum = 0.0;
            for j in range.clone() {
                let k = t_vec[j] * ctx.kappa[j];
                let r = t_vec[j] * ctx.reg[j];
                k_sum += k;
                r_sum += r;
                d_sum += k.abs() - r.abs();
            }
            self.psi[si][ci] += k_sum.abs();
            self.reg[si][ci] += r_sum.abs();
            self.d[si][ci] += d_sum;
        }
        Ok(())
    }
}

pub fn step_importance(
    log: &TrajectoryLog,
    data: &SplitData,
    targets: &[Sample],
    window: (usize, usize),
    t: usize,
) -> Result<StepImportanceSeries> {
    let registry = log.meta.config.model.registry();
    let mut v = StepImportanceVisitor::new(&registry, window);
    let opts = SweepOptions {
        t_values: vec![t],
        window,
    };
    sweep(log, data, targets, &opts, &mut [&mut v])?;
    Ok(v.into_series())
}

/// Accumulated absolute per-parameter influence,
/// `score[j] = Σ_{s∈window} Σ_x |t_{s,x}[j] · κ_s[j]|` — the pruning
/// ranking signal. Absolute values are taken at the finest granularity so
/// parameters whose influence flips sign across training still rank as
/// influential.
pub struct ParamScoreVisitor {
    pub scores: Vec<f64>,
}

impl ParamScoreVisitor {
    pub fn new(d: usize) -> ParamScoreVisitor {
        ParamScoreVisitor {
            scores: vec![0.0; d],
        }
    }
}

impl SweepVisitor for ParamScoreVisitor {
    fn on_test_maps(&mut self, ctx: &StepContext, _target: usize, maps: &[TestMap]) -> Result<()> {
        for (sc, (t, k)) in self
            .scores
            .iter_mut()
            .zip(maps[0].summed.iter().zip(ctx.kappa))
        {
            *sc += (t * k).abs();
        }
        Ok(())
    }
}

pub fn param_scores(
    log: &TrajectoryLog,
    data: &SplitData,
    targets: &[Sample],
    window: (usize, usize),
    t: usize,
) -> Result<Vec<f64>> {
    let mut v = ParamScoreVisitor::new(log.meta.d);
    let opts = SweepOptions {
        t_values: vec![t],
        window,
    };
    sweep(log, data, targets, &opts, &mut [&mut v])?;
    Ok(v.scores)
}

/// Per-parameter ψ for one (step, test sample, train sample) triple,
/// restricted to a component — the finest-grained probe, mostly for
/// debugging and tests.
pub fn psi_step(
    log: &TrajectoryLog,
    data: &SplitData,
    target: &Sample,
    s: usize,
    component: &str,
    k: usize,
    t: usize,
) -> Result<Vec<f64>> {
    if k >= data.train.len() {
        return Err(Error::Data(format!(
            "train sample {k} out of range ({} samples)",
            data.train.len()
        )));
    }
    let registry = log.meta.config.model.registry();
    let range = registry.range_of(component)?;

    struct Probe {
        s: usize,
        k: usize,
        range: Range<usize>,
        out: Vec<f64>,
    }
    impl SweepVisitor for Probe {
        fn on_test_maps(
            &mut self,
            ctx: &StepContext,
            _target: usize,
            maps: &[TestMap],
        ) -> Result<()> {
            if ctx.s != self.s {
                return Ok(());
            }
            let t_vec = &maps[0].summed;
            let col = ctx.w.col(self.k);
            self.out = self
                .range
                .clone()
                .map(|j| t_vec[j] * col[j] * ctx.scale[j])
                .collect();
            Ok(())
        }
    }

    let mut probe = Probe {
        s,
        k,
        range,
        out: Vec::new(),
    };
    let opts = SweepOptions {
        t_values: vec![t],
        window: (s, s),
    };
    sweep(
        log,
        data,
        std::slice::from_ref(target),
        &opts,
        &mut [&mut probe],
    )?;
    Ok(probe.out)
}

/// How test×train rows/columns of a kernel slice are ordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceOrdering {
    /// Dataset order, keys are sample indices.
    ByIndex,
    /// Modular-addition pairs sorted by `a + b` (the unreduced sum).
    BySum,
    /// Sorted by label.
    ByLabel,
}

/// A test × train kernel matrix for one component over a step window, with
/// rows/columns sorted by the requested key.
#[derive(Debug, Clone, Serialize)]
pub struct KernelSlice {
    pub component: String,
    pub window: (usize, usize),
    pub ordering: SliceOrdering,
    pub n_test: usize,
    pub n_train: usize,
    /// Row-major `n_test × n_train`, already permuted into key order.
    pub values: Vec<f64>,
    /// Sort key per row/column (sample index, a+b, or label).
    pub test_keys: Vec<i64>,
    pub train_keys: Vec<i64>,
    /// Original sample indices in display order.
    pub test_perm: Vec<usize>,
    pub train_perm: Vec<usize>,
}

fn ordering_keys(samples: &[Sample], ordering: SliceOrdering) -> Result<Vec<i64>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| match ordering {
            SliceOrdering::ByIndex => Ok(i as i64),
            SliceOrdering::BySum => {
                let (a, b) = s.modadd_pair().ok_or_else(|| {
                    Error::Data("sum ordering requires token-pair samples".into())
                })?;
                Ok((a + b) as i64)
            }
            SliceOrdering::ByLabel => Ok(s.label as i64),
        })
        .collect()
}

fn sorted_perm(keys: &[i64]) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..keys.len()).collect();
    perm.sort_by_key(|&i| (keys[i], i));
    perm
}

pub fn kernel_slice(
    log: &TrajectoryLog,
    data: &SplitData,
    targets: &[Sample],
    component: &str,
    window: (usize, usize),
    t: usize,
    ordering: SliceOrdering,
) -> Result<KernelSlice> {
    let table = influence_table(
        log,
        data,
        targets,
        &[component.to_string()],
        window,
        t,
    )?;
    let raw = &table.kernel[0];

    let test_keys_raw = ordering_keys(targets, ordering)?;
    let train_keys_raw = ordering_keys(&data.train, ordering)?;
    let test_perm = sorted_perm(&test_keys_raw);
    let train_perm = sorted_perm(&train_keys_raw);

    let n_test = targets.len();
    let n_train = data.train.len();
    let mut values = vec![0.0; n_test * n_train];
    for (ri, &x) in test_perm.iter().enumerate() {
        for (ci, &k) in train_perm.iter().enumerate() {
            values[ri * n_train + ci] = raw[x][k];
        }
    }
    Ok(KernelSlice {
        component: component.to_string(),
        window,
        ordering,
        n_test,
        n_train,
        values,
        test_keys: test_perm.iter().map(|&i| test_keys_raw[i]).collect(),
        train_keys: train_perm.iter().map(|&i| train_keys_raw[i]).collect(),
        test_perm,
        train_perm,
    })
}

/// Mean |value| over cells whose test/train labels match versus the rest —
/// the modular-structure contrast a grokked model's kernel shows.
pub fn residue_contrast(
    values: &[f64],
    n_train: usize,
    test_labels: &[usize],
    train_labels: &[usize],
) -> (f64, f64) {
    let mut eq_sum = 0.0;
    let mut eq_n = 0usize;
    let mut ne_sum = 0.0;
    let mut ne_n = 0usize;
    for (x, &tl) in test_labels.iter().enumerate() {
        for (k, &kl) in train_labels.iter().enumerate() {
            let v = values[x * n_train + k].abs();
            if tl == kl {
                eq_sum += v;
                eq_n += 1;
            } else {
                ne_sum += v;
                ne_n += 1;
            }
        }
    }
    (
        eq_sum / eq_n.max(1) as f64,
        ne_sum / ne_n.max(1) as f64,
    )
}
