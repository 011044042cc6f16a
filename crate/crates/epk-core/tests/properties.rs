//! Randomized invariants. Each test states a law the library promises for
//! *every* input in the strategy's range, not just the seeds the unit
//! tests pin down.

use std::ops::Range;
use std::sync::OnceLock;

use proptest::prelude::*;

use epk_core::config::{DataConfig, RunConfig};
use epk_core::dataset::{BlobsSpec, Sample, SampleInput, SplitData};
use epk_core::influence::{influence_table, InfluenceTable};
use epk_core::model::{Loss, ModelSpec};
use epk_core::optim::{OptimizerKind, Schedule};
use epk_core::rng::Rng;
use epk_core::train::train;
use epk_core::trajectory::{BatchMask, MemorySink, TrajectoryLog};

// --- gradients vs finite differences over random shapes ------------------

fn arb_mlp() -> impl Strategy<Value = ModelSpec> {
    (
        2usize..6,
        prop::collection::vec(3usize..10, 1..3),
        2usize..5,
    )
        .prop_map(|(input_dim, hidden, output_dim)| ModelSpec::Mlp {
            input_dim,
            hidden,
            output_dim,
        })
}

fn arb_linear() -> impl Strategy<Value = ModelSpec> {
    (2usize..7, 2usize..5).prop_map(|(input_dim, output_dim)| ModelSpec::Linear {
        input_dim,
        output_dim,
    })
}

fn arb_transformer() -> impl Strategy<Value = ModelSpec> {
    (3usize..8, prop::sample::select(vec![(2usize, 3usize), (2, 4), (1, 6)]))
        .prop_map(|(modulus, (heads, head_dim))| ModelSpec::ModAddTransformer {
            modulus,
            model_dim: heads * head_dim,
            heads,
            head_dim,
            mlp_hidden: 10,
        })
}

fn random_sample_for(spec: &ModelSpec, rng: &mut Rng) -> Sample {
    match spec {
        ModelSpec::ModAddTransformer { modulus: p, .. } => {
            let a = (rng.next_u64() % *p as u64) as usize;
            let b = (rng.next_u64() % *p as u64) as usize;
            Sample {
                input: SampleInput::Tokens(epk_core::dataset::modadd_tokens(a, b, *p)),
                label: (a + b) % p,
            }
        }
        ModelSpec::Mlp { input_dim, .. } | ModelSpec::Linear { input_dim, .. } => Sample {
            input: SampleInput::Features((0..*input_dim).map(|_| rng.next_normal()).collect()),
            label: (rng.next_u64() % spec.output_dim() as u64) as usize,
        },
    }
}

fn check_gradient(spec: ModelSpec, loss: Loss, seed: u64) -> Result<(), TestCaseError> {
    let mut rng = Rng::new(seed);
    let d = spec.d();
    let theta: Vec<f64> = (0..d).map(|_| 0.4 * rng.next_normal()).collect();
    let sample = random_sample_for(&spec, &mut rng);

    let (graph, out) = spec.graph_for(&sample).unwrap();
    let vals = graph.forward(&theta).unwrap();
    let seed_vec = loss.output_grad(graph.value(&vals, &theta, out), sample.label);
    let grad = graph.backward(&vals, &theta, out, &seed_vec).unwrap();
    let ginf = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs())).max(1e-8);

    let h = 1e-4;
    let j = (rng.next_u64() % d as u64) as usize;
    let loss_at = |tj: f64| {
        let mut t = theta.clone();
        t[j] = tj;
        let v = graph.forward(&t).unwrap();
        loss.value(graph.value(&v, &t, out), sample.label)
    };
    let fd = (loss_at(theta[j] + h) - loss_at(theta[j] - h)) / (2.0 * h);
    let denom = grad[j].abs().max(fd.abs()).max(1e-2 * ginf);
    prop_assert!(
        ((grad[j] - fd).abs() / denom) <= 1e-4,
        "param {j}: grad {} vs fd {fd}",
        grad[j]
    );
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mlp_gradients_match_finite_differences(spec in arb_mlp(), seed in any::<u64>()) {
        check_gradient(spec, Loss::Nll, seed)?;
    }

    #[test]
    fn linear_gradients_match_finite_differences(spec in arb_linear(), seed in any::<u64>()) {
        check_gradient(spec, Loss::Mse, seed)?;
    }

    #[test]
    fn transformer_gradients_match_finite_differences(
        spec in arb_transformer(),
        seed in any::<u64>(),
    ) {
        check_gradient(spec, Loss::Nll, seed)?;
    }
}

// --- optimizer closed forms on random streams -----------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adamw_first_moment_is_a_geometric_sum(
        seed in any::<u64>(),
        d in 1usize..8,
        steps in 1usize..30,
        beta1 in 0.05f64..0.999,
        wd in 0.0f64..2.0,
    ) {
        let mut rng = Rng::new(seed);
        let opt = OptimizerKind::AdamW { beta1, beta2: 0.97, epsilon: 1e-8, weight_decay: wd };
        let mut theta: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        let mut state = opt.init_state(d);
        let mut grads = Vec::new();
        for s in 1..=steps {
            let g: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
            opt.apply_step(&mut theta, &mut state, &g, 0.01).unwrap();
            grads.push(g);
            for j in 0..d {
                let closed: f64 = (1..=s)
                    .map(|i| (1.0 - beta1) * beta1.powi((s - i) as i32) * grads[i - 1][j])
                    .sum();
                let rel = (state.m[j] - closed).abs()
                    / state.m[j].abs().max(closed.abs()).max(1e-12);
                prop_assert!(rel <= 1e-10, "step {s} param {j}: rel {rel:.3e}");
            }
        }
    }

    #[test]
    fn momentum_iterates_match_the_unrolled_expansion(
        seed in any::<u64>(),
        d in 1usize..8,
        steps in 1usize..25,
        beta in 0.05f64..0.999,
        wd in 0.0f64..1.0,
    ) {
        let mut rng = Rng::new(seed);
        let opt = OptimizerKind::SgdMomentum { beta, weight_decay: wd };
        let theta0: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
        let mut theta = theta0.clone();
        let mut state = opt.init_state(d);
        let mut grads = Vec::new();
        let mut alphas = Vec::new();
        let mut iterates = vec![theta0.clone()];
        for _ in 1..=steps {
            let g: Vec<f64> = (0..d).map(|_| rng.next_normal()).collect();
            let a = 0.002 + 0.02 * rng.next_f64();
            opt.apply_step(&mut theta, &mut state, &g, a).unwrap();
            grads.push(g);
            alphas.push(a);
            iterates.push(theta.clone());
        }
        for j in 0..d {
            let mut expansion = theta0[j];
            for sp in 1..=steps {
                let b: f64 = (1..=sp)
                    .map(|i| beta.powi((sp - i) as i32) * (grads[i - 1][j] + wd * iterates[i - 1][j]))
                    .sum();
                expansion -= alphas[sp - 1] * beta * b;
            }
            let rel = (theta[j] - expansion).abs()
                / theta[j].abs().max(expansion.abs()).max(1e-12);
            prop_assert!(rel <= 1e-10, "param {j}: rel {rel:.3e}");
        }
    }
}

// --- influence additivity under arbitrary partitions ----------------------

struct SharedRun {
    data: SplitData,
    log: TrajectoryLog,
    targets: Vec<Sample>,
    names: Vec<String>,
    whole: InfluenceTable,
}

fn shared_run() -> &'static SharedRun {
    static RUN: OnceLock<SharedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = RunConfig {
            model: ModelSpec::Mlp {
                input_dim: 4,
                hidden: vec![8],
                output_dim: 3,
            },
            optimizer: OptimizerKind::AdamW {
                beta1: 0.9,
                beta2: 0.98,
                epsilon: 1e-8,
                weight_decay: 0.4,
            },
            schedule: Schedule::Constant { value: 0.02 },
            loss: Loss::Nll,
            data: DataConfig::XorBlobs(BlobsSpec {
                input_dim: 4,
                n_train: 24,
                n_test: 8,
                noise: 0.3,
                seed: 11,
            }),
            steps: 12,
            batch_size: Some(8),
            init_seed: 1,
            batch_seed: 2,
            eval_every: 12,
        };
        let data = cfg.data.generate().unwrap();
        let mut sink = MemorySink::new();
        train(&cfg, &data, &mut sink).unwrap();
        let log = sink.into_log().unwrap();
        let targets = data.test.clone();
        let names: Vec<String> = cfg
            .model
            .registry()
            .names()
            .iter()
            .map(|s| s.to_string())
            .collect();
        let whole = influence_table(&log, &data, &targets, &names, (1, 12), 2).unwrap();
        SharedRun {
            data,
            log,
            targets,
            names,
            whole,
        }
    })
}

fn rel_gap(parts: f64, total: f64, mass: f64) -> f64 {
    (parts - total).abs() / total.abs().max(mass).max(1e-12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Any split point of the step window yields two tables that re-add to
    /// the whole, cell by cell.
    #[test]
    fn step_windows_readd_at_any_split(split in 1usize..12) {
        let run = shared_run();
        let left = influence_table(&run.log, &run.data, &run.targets, &run.names, (1, split), 2)
            .unwrap();
        let right = influence_table(
            &run.log, &run.data, &run.targets, &run.names, (split + 1, 12), 2,
        )
        .unwrap();
        for c in 0..run.names.len() {
            for x in 0..run.targets.len() {
                for k in 0..run.data.train.len() {
                    let (a, b, w) = (
                        left.kernel[c][x][k],
                        right.kernel[c][x][k],
                        run.whole.kernel[c][x][k],
                    );
                    prop_assert!(rel_gap(a + b, w, a.abs() + b.abs()) <= 1e-12);
                }
                let (a, b, w) = (left.reg[c][x], right.reg[c][x], run.whole.reg[c][x]);
                prop_assert!(rel_gap(a + b, w, a.abs() + b.abs()) <= 1e-12);
            }
        }
    }

    /// Any bipartition of components or train samples re-adds to the
    /// parent totals.
    #[test]
    fn component_and_sample_subsets_readd(mask_seed in any::<u64>()) {
        let run = shared_run();
        let mut rng = Rng::new(mask_seed);
        let comp_in: Vec<bool> = run.names.iter().map(|_| rng.next_f64() < 0.5).collect();
        let samp_in: Vec<bool> = run.data.train.iter().map(|_| rng.next_f64() < 0.5).collect();
        for x in 0..run.targets.len() {
            for k in 0..run.data.train.len() {
                let total: f64 = (0..run.names.len()).map(|c| run.whole.kernel[c][x][k]).sum();
                let part: f64 = (0..run.names.len())
                    .filter(|&c| comp_in[c])
                    .map(|c| run.whole.kernel[c][x][k])
                    .sum();
                let rest: f64 = (0..run.names.len())
                    .filter(|&c| !comp_in[c])
                    .map(|c| run.whole.kernel[c][x][k])
                    .sum();
                let mass: f64 = (0..run.names.len())
                    .map(|c| run.whole.kernel[c][x][k].abs())
                    .sum();
                prop_assert!(rel_gap(part + rest, total, mass) <= 1e-12);
            }
            for c in 0..run.names.len() {
                let row = &run.whole.kernel[c][x];
                let total: f64 = row.iter().sum();
                let part: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| samp_in[*k])
                    .map(|(_, v)| v)
                    .sum();
                let rest: f64 = row
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !samp_in[*k])
                    .map(|(_, v)| v)
                    .sum();
                let mass: f64 = row.iter().map(|v| v.abs()).sum();
                prop_assert!(rel_gap(part + rest, total, mass) <= 1e-12);
            }
        }
    }
}

// --- structural round trips ------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_masks_round_trip_through_bytes(
        n in 1usize..200,
        picks in prop::collection::vec(any::<u64>(), 0..32),
    ) {
        let indices: Vec<usize> = picks.iter().map(|p| (*p % n as u64) as usize).collect();
        let mask = BatchMask::from_indices(n, &indices);
        let bytes = mask.to_bytes();
        let back = BatchMask::from_bytes(n, &bytes).unwrap();
        prop_assert_eq!(mask.ones().collect::<Vec<_>>(), back.ones().collect::<Vec<_>>());
        prop_assert_eq!(mask.count(), indices.iter().collect::<std::collections::HashSet<_>>().len());
        for &i in &indices {
            prop_assert!(mask.contains(i));
        }
    }

    /// Component registries tile [0, d) exactly: contiguous, ordered,
    /// non-overlapping, fully covering.
    #[test]
    fn registries_tile_the_parameter_space(
        spec in prop_oneof![arb_mlp(), arb_linear(), arb_transformer()],
    ) {
        let registry = spec.registry();
        let mut cursor = 0usize;
        for component in registry.components() {
            let Range { start, end } = component.range();
            prop_assert_eq!(start, cursor, "gap or overlap at {}", component.name);
            prop_assert!(end > start);
            cursor = end;
        }
        prop_assert_eq!(cursor, registry.d());
        prop_assert_eq!(registry.d(), spec.d());
    }
}
