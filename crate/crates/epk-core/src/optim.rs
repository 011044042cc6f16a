//! Optimizers and learning-rate schedules.
//!
//! Both optimizers are written so that a recorded trajectory can be
//! decomposed exactly: every quantity the per-step reconstruction needs
//! (bias corrections, the `√v̂ + ε` denominator, the decoupled decay term)
//! is defined here once and reused by the reconstruction code, so the two
//! sides cannot drift apart.
//!
//! AdamW, per step `s` (1-based) with gradient `g_s`:
//!
//! ```text
//! m_s = β₁ m_{s−1} + (1−β₁) g_s
//! v_s = β₂ v_{s−1} + (1−β₂) g_s²
//! m̂_s = m_s / (1−β₁^s),   v̂_s = v_s / (1−β₂^s)
//! θ_s = θ_{s−1} − α_s λ θ_{s−1} − α_s · m̂_s / (√v̂_s + ε)
//! ```
//!
//! Weight decay is decoupled (applied to `θ_{s−1}` directly, never entering
//! `m`/`v`), and ε sits outside the square root, added to `√v̂`.
//!
//! SGD with momentum, per step `s` with `b_0 = 0`:
//!
//! ```text
//! b_s = β b_{s−1} + g_s + λ θ_{s−1}
//! θ_s = θ_{s−1} − α_s β b_s
//! ```
//!
//! The leading `β` on the update is part of the recursion this crate
//! reconstructs (equivalently, `b_s` enters the parameters one momentum
//! factor early); with `β = 0` the parameters do not move. Unrolled:
//! `θ_{s−1} − θ_s = Σ_{i≤s} α_s β^{s−i+1} (g_i + λ θ_{i−1})`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    #[serde(rename = "adamw")]
    AdamW {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        weight_decay: f64,
    },
    SgdMomentum { beta: f64, weight_decay: f64 },
}

impl OptimizerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerKind::AdamW {
                beta1,
                beta2,
                epsilon,
                weight_decay,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(Error::Config(format!(
                        "adamw betas must be in [0, 1): got {beta1}, {beta2}"
                    )));
                }
                if epsilon <= 0.0 {
                    return Err(Error::Config(format!("epsilon must be positive: {epsilon}")));
                }
                if weight_decay < 0.0 {
                    return Err(Error::Config(format!("negative weight_decay {weight_decay}")));
                }
                Ok(())
            }
            OptimizerKind::SgdMomentum { beta, weight_decay } => {
                if !(0.0..1.0).contains(&beta) {
                    return Err(Error::Config(format!("momentum beta must be in [0, 1): {beta}")));
                }
                if weight_decay < 0.0 {
                    return Err(Error::Config(format!("negative weight_decay {weight_decay}")));
                }
                Ok(())
            }
        }
    }

    pub fn weight_decay(&self) -> f64 {
        match *self {
            OptimizerKind::AdamW { weight_decay, .. } => weight_decay,
            OptimizerKind::SgdMomentum { weight_decay, .. } => weight_decay,
        }
    }

    pub fn init_state(&self, d: usize) -> OptimizerState {
        OptimizerState {
            m: vec![0.0; d],
            v: vec![0.0; d],
            step: 0,
        }
    }

    /// Advance one step in place. `alpha` is the step-size α_s for the step
    /// being taken (state.step moves from s−1 to s). Fails with
    /// [`Error::NonFinite`] if any parameter or state entry leaves ℝ.
    pub fn apply_step(
        &self,
        theta: &mut [f64],
        state: &mut OptimizerState,
        grad: &[f64],
        alpha: f64,
    ) -> Result<()> {
        assert_eq!(theta.len(), grad.len());
        assert_eq!(theta.len(), state.m.len());
        let s = state.step + 1;
        match *self {
            OptimizerKind::AdamW {
                beta1,
                beta2,
                epsilon,
                weight_decay,
            } => {
                let c1 = 1.0 - beta1.powi(s as i32);
                let c2 = 1.0 - beta2.powi(s as i32);
                for j in 0..theta.len() {
                    let g = grad[j];
                    state.m[j] = beta1 * state.m[j] + (1.0 - beta1) * g;
                    state.v[j] = beta2 * state.v[j] + (1.0 - beta2) * g * g;
                    let mhat = state.m[j] / c1;
                    let denom = (state.v[j] / c2).sqrt() + epsilon;
                    theta[j] = theta[j] - alpha * weight_decay * theta[j] - alpha * mhat / denom;
                }
            }
            OptimizerKind::SgdMomentum { beta, weight_decay } => {
                for j in 0..theta.len() {
                    state.m[j] = beta * state.m[j] + grad[j] + weight_decay * theta[j];
                    theta[j] -= alpha * beta * state.m[j];
                }
            }
        }
        state.step = s;
        for j in 0..theta.len() {
            if !theta[j].is_finite() || !state.m[j].is_finite() || !state.v[j].is_finite() {
                return Err(Error::NonFinite { step: s });
            }
        }
        Ok(())
    }

    /// The per-parameter factor that converts the bias-corrected first
    /// moment into the parameter update at step `s`:
    /// `scale_s[j] = α_s / ((1−β₁^s)(√(v_s[j]/(1−β₂^s)) + ε))` for AdamW,
    /// the uniform `α_s β` for SGD-momentum.
    ///
    /// Reconstruction multiplies per-sample momentum columns by exactly this
    /// factor, so the expression must match [`OptimizerKind::apply_step`]
    /// term for term.
    pub fn update_scale(&self, v_s: &[f64], s: usize, alpha: f64, out: &mut [f64]) {
        match *self {
            OptimizerKind::AdamW {
                beta1,
                beta2,
                epsilon,
                ..
            } => {
                let c1 = 1.0 - beta1.powi(s as i32);
                let c2 = 1.0 - beta2.powi(s as i32);
                for j in 0..out.len() {
                    out[j] = alpha / (c1 * ((v_s[j] / c2).sqrt() + epsilon));
                }
            }
            OptimizerKind::SgdMomentum { beta, .. } => {
                for x in out.iter_mut() {
                    *x = alpha * beta;
                }
            }
        }
    }
}

/// Optimizer state mirrored into every trajectory record. For SGD-momentum,
/// `m` holds the velocity `b_s` and `v` stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
}

/// Step-size schedule; `alpha(s)` is queried at `s = 1..=steps` and must be
/// positive everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    Constant { value: f64 },
    /// Linear ramp from `peak/warmup_steps` up to `peak` at `warmup_steps`,
    /// then linear decay toward (but never reaching) zero at
    /// `total_steps + 1`.
    WarmupDecay {
        peak: f64,
        warmup_steps: usize,
        total_steps: usize,
    },
}

impl Schedule {
    pub fn validate(&self, steps: usize) -> Result<()> {
        match *self {
            Schedule::Constant { value } => {
                if value <= 0.0 {
                    return Err(Error::Config(format!("step size {value} must be positive")));
                }
                Ok(())
            }
            Schedule::WarmupDecay {
                peak,
                warmup_steps,
                total_steps,
            } => {
                if peak <= 0.0 {
                    return Err(Error::Config(format!("peak {peak} must be positive")));
                }
                if warmup_steps == 0 || warmup_steps > total_steps {
                    return Err(Error::Config(format!(
                        "warmup_steps {warmup_steps} outside 1..={total_steps}"
                    )));
                }
                if total_steps < steps {
                    return Err(Error::Config(format!(
                        "schedule covers {total_steps} steps but run has {steps}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn alpha(&self, s: usize) -> f64 {
        debug_assert!(s >= 1, "steps are 1-based");
        match *self {
            Schedule::Constant { value } => value,
            Schedule::WarmupDecay {
                peak,
                warmup_steps,
                total_steps,
            } => {
                if s <= warmup_steps {
                    peak * s as f64 / warmup_steps as f64
                } else {
                    peak * (total_steps + 1 - s) as f64 / (total_steps + 1 - warmup_steps) as f64
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.next_normal()).collect()
    }

    /// Independent closed forms: m_s = Σ (1−β₁)β₁^{s−i} g_i and
    /// v_s = Σ (1−β₂)β₂^{s−i} g_i², evaluated from the stored gradient
    /// history rather than recursively.
    #[test]
    fn adamw_moments_match_geometric_sums() {
        let opt = OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.995,
            epsilon: 1e-8,
            weight_decay: 0.1,
        };
        let d = 7;
        let mut rng = Rng::new(21);
        let mut theta = random_vec(&mut rng, d);
        let mut state = opt.init_state(d);
        let mut history: Vec<Vec<f64>> = Vec::new();
        for s in 1..=50 {
            let g = random_vec(&mut rng, d);
            history.push(g.clone());
            opt.apply_step(&mut theta, &mut state, &g, 0.01).unwrap();

            for j in 0..d {
                let mut m = 0.0;
                let mut v = 0.0;
                for (i, gi) in history.iter().enumerate() {
                    let age = (s - (i + 1)) as i32;
                    m += (1.0 - 0.9) * 0.9f64.powi(age) * gi[j];
                    v += (1.0 - 0.995) * 0.995f64.powi(age) * gi[j] * gi[j];
                }
                assert!(
                    (state.m[j] - m).abs() <= 1e-10 * m.abs().max(1.0),
                    "step {s} m[{j}]: {} vs {m}",
                    state.m[j]
                );
                assert!(
                    (state.v[j] - v).abs() <= 1e-10 * v.abs().max(1.0),
                    "step {s} v[{j}]: {} vs {v}",
                    state.v[j]
                );
            }
        }
    }

    /// On a constant gradient the bias-corrected first moment is exactly the
    /// gradient: m̂_s = m_s/(1−β₁^s) = g.
    #[test]
    fn bias_correction_is_exact_on_constant_gradient() {
        let beta1 = 0.98;
        let opt = OptimizerKind::AdamW {
            beta1,
            beta2: 0.99,
            epsilon: 1e-8,
            weight_decay: 0.0,
        };
        let g = vec![0.37, -1.5, 0.0, 4.25];
        let mut theta = vec![0.0; 4];
        let mut state = opt.init_state(4);
        for s in 1..=20 {
            opt.apply_step(&mut theta, &mut state, &g, 1e-3).unwrap();
            let c1 = 1.0 - beta1.powi(s);
            for j in 0..4 {
                let mhat = state.m[j] / c1;
                assert!(
                    (mhat - g[j]).abs() <= 1e-12 * g[j].abs().max(1.0),
                    "step {s}: mhat {mhat} vs g {}",
                    g[j]
                );
            }
        }
    }

    /// With β₁ = β₂ = 0 the moments collapse to the current gradient and the
    /// update becomes θ − αλθ − α g/(|g| + ε).
    #[test]
    fn zero_beta_adamw_collapses_to_sign_update() {
        let eps = 1e-8;
        let opt = OptimizerKind::AdamW {
            beta1: 0.0,
            beta2: 0.0,
            epsilon: eps,
            weight_decay: 0.05,
        };
        let theta0 = vec![1.0, -2.0, 0.5];
        let g = vec![0.3, -0.7, 2.0];
        let alpha = 0.01;
        let mut theta = theta0.clone();
        let mut state = opt.init_state(3);
        opt.apply_step(&mut theta, &mut state, &g, alpha).unwrap();
        for j in 0..3 {
            let want = theta0[j] - alpha * 0.05 * theta0[j] - alpha * g[j] / (g[j].abs() + eps);
            assert!((theta[j] - want).abs() < 1e-15, "{} vs {want}", theta[j]);
        }
    }

    /// Weight decay is decoupled: it shifts the update by exactly −αλθ_{s−1}
    /// and leaves m and v untouched.
    #[test]
    fn adamw_decay_is_decoupled() {
        let mk = |wd: f64| OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            weight_decay: wd,
        };
        let mut rng = Rng::new(33);
        let theta0 = random_vec(&mut rng, 5);
        let g = random_vec(&mut rng, 5);

        let mut plain = theta0.clone();
        let mut s_plain = mk(0.0).init_state(5);
        mk(0.0).apply_step(&mut plain, &mut s_plain, &g, 0.02).unwrap();

        let mut decayed = theta0.clone();
        let mut s_dec = mk(4.0).init_state(5);
        mk(4.0).apply_step(&mut decayed, &mut s_dec, &g, 0.02).unwrap();

        assert_eq!(s_plain.m, s_dec.m);
        assert_eq!(s_plain.v, s_dec.v);
        for j in 0..5 {
            let want = plain[j] - 0.02 * 4.0 * theta0[j];
            assert!((decayed[j] - want).abs() < 1e-15);
        }
    }

    /// Velocity matches the expansion b_s = Σ_{i≤s} β^{s−i}(g_i + λθ_{i−1})
    /// computed from the recorded history, and the parameter update carries
    /// the extra leading β.
    #[test]
    fn sgd_momentum_matches_velocity_expansion()  {
        let (beta, lambda, alpha) = (0.9, 0.01, 0.05);
        let opt = OptimizerKind::SgdMomentum {
            beta,
            weight_decay: lambda,
        };
        let d = 6;
        let mut rng = Rng::new(55);
        let mut theta = random_vec(&mut rng, d);
        let mut state = opt.init_state(d);
        let mut grads: Vec<Vec<f64>> = Vec::new();
        let mut thetas: Vec<Vec<f64>> = vec![theta.clone()];
        for s in 1..=50 {
            let g = random_vec(&mut rng, d);
            grads.push(g.clone());
            let prev = theta.clone();
            opt.apply_step(&mut theta, &mut state, &g, alpha).unwrap();
            thetas.push(theta.clone());

            for j in 0..d {
                let mut b = 0.0;
                for i in 1..=s {
                    b += beta.powi((s - i) as i32) * (grads[i - 1][j] + lambda * thetas[i - 1][j]);
                }
                assert!(
                    (state.m[j] - b).abs() <= 1e-10 * b.abs().max(1.0),
                    "step {s} b[{j}]: {} vs {b}",
                    state.m[j]
                );
                let want = prev[j] - alpha * beta * b;
                assert!(
                    (theta[j] - want).abs() <= 1e-10 * want.abs().max(1.0),
                    "step {s} theta[{j}]"
                );
            }
        }
    }

    /// β = 0 zeroes the whole update (the recursion multiplies the velocity
    /// by the leading β).
    #[test]
    fn sgd_momentum_beta_zero_freezes_parameters() {
        let opt = OptimizerKind::SgdMomentum {
            beta: 0.0,
            weight_decay: 0.0,
        };
        let mut theta = vec![1.0, 2.0];
        let mut state = opt.init_state(2);
        opt.apply_step(&mut theta, &mut state, &[5.0, -3.0], 0.1).unwrap();
        assert_eq!(theta, vec![1.0, 2.0]);
        assert_eq!(state.m, vec![5.0, -3.0]); // velocity still tracks g + λθ
    }

    #[test]
    fn update_scale_reproduces_adamw_update() {
        let opt = OptimizerKind::AdamW {
            beta1: 0.95,
            beta2: 0.98,
            epsilon: 1e-8,
            weight_decay: 0.0,
        };
        let d = 4;
        let mut rng = Rng::new(77);
        let mut theta = random_vec(&mut rng, d);
        let mut state = opt.init_state(d);
        for s in 1..=10 {
            let g = random_vec(&mut rng, d);
            let before = theta.clone();
            opt.apply_step(&mut theta, &mut state, &g, 0.003).unwrap();
            // scale · m_s must equal the parameter decrement exactly
            let mut scale = vec![0.0; d];
            opt.update_scale(&state.v, s, 0.003, &mut scale);
            for j in 0..d {
                let want = before[j] - scale[j] * state.m[j];
                assert!(
                    (theta[j] - want).abs() <= 1e-15 * want.abs().max(1.0),
                    "step {s} param {j}"
                );
            }
        }
    }

    #[test]
    fn nan_gradient_reports_nonfinite_step() {
        let opt = OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            weight_decay: 0.0,
        };
        let mut theta = vec![0.0];
        let mut state = opt.init_state(1);
        opt.apply_step(&mut theta, &mut state, &[1.0], 0.1).unwrap();
        let err = opt
            .apply_step(&mut theta, &mut state, &[f64::NAN], 0.1)
            .unwrap_err();
        match err {
            Error::NonFinite { step } => assert_eq!(step, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn schedules_stay_positive_over_their_domain() {
        let warm = Schedule::WarmupDecay {
            peak: 0.1,
            warmup_steps: 10,
            total_steps: 100,
        };
        warm.validate(100).unwrap();
        for s in 1..=100 {
            assert!(warm.alpha(s) > 0.0, "alpha({s}) not positive");
            assert!(warm.alpha(s) <= 0.1 + 1e-15);
        }
        assert_eq!(warm.alpha(10), 0.1); // peak hit exactly at warmup end
        assert!(warm.alpha(11) < 0.1);

        let flat = Schedule::Constant { value: 1e-3 };
        flat.validate(10).unwrap();
        assert_eq!(flat.alpha(1), 1e-3);
        assert_eq!(flat.alpha(10), 1e-3);

        assert!(Schedule::Constant { value: 0.0 }.validate(1).is_err());
        assert!(Schedule::WarmupDecay {
            peak: 0.1,
            warmup_steps: 0,
            total_steps: 10
        }
        .validate(10)
        .is_err());
    }
}
