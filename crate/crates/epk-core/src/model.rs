//! Model definitions: architecture specs, parameter layout/init, and graph
//! construction.
//!
//! Three architectures share the flat-parameter convention:
//!
//! * [`ModelSpec::ModAddTransformer`] — a one-layer attention model for
//!   modular addition: token embedding (no positional encoding — the prompt
//!   grammar `[a, PLUS, b, MODEQ]` makes positions recoverable from token
//!   identity), H parallel attention heads whose outputs are projected back
//!   to `model_dim` and summed, a two-layer ReLU MLP, and a linear decoder
//!   to vocab logits followed by log-softmax. No residual connections and no
//!   layer norm. Only the final-position readout feeds the loss, so the
//!   graph computes the query/MLP/decoder at the last position only — this
//!   is exactly equivalent (no op mixes positions after attention) and much
//!   cheaper.
//! * [`ModelSpec::Mlp`] — plain ReLU MLP over dense features with a
//!   log-softmax head.
//! * [`ModelSpec::Linear`] — a raw affine map. Its Jacobian is constant in
//!   the parameters, which makes one-node quadrature of path integrals exact;
//!   reconstruction tests use it as a ground-truth case.

use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, SampleInput};
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{ComponentRegistry, LayoutBuilder, ParamVector};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    ModAddTransformer {
        modulus: usize,
        model_dim: usize,
        heads: usize,
        head_dim: usize,
        mlp_hidden: usize,
    },
    Mlp {
        input_dim: usize,
        hidden: Vec<usize>,
        output_dim: usize,
    },
    Linear {
        input_dim: usize,
        output_dim: usize,
    },
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::ModAddTransformer {
                modulus,
                model_dim,
                heads,
                head_dim,
                mlp_hidden,
            } => {
                if *modulus < 2 {
                    return Err(Error::Config(format!("modulus {modulus} < 2")));
                }
                if *heads == 0 || *head_dim == 0 || *model_dim == 0 || *mlp_hidden == 0 {
                    return Err(Error::Config("transformer dims must be positive".into()));
                }
                if heads * head_dim != *model_dim {
                    return Err(Error::Config(format!(
                        "heads ({heads}) × head_dim ({head_dim}) must equal model_dim ({model_dim})"
                    )));
                }
                Ok(())
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                output_dim,
            } => {
                if *input_dim == 0 || *output_dim == 0 {
                    return Err(Error::Config("mlp dims must be positive".into()));
                }
                if hidden.is_empty() || hidden.iter().any(|&h| h == 0) {
                    return Err(Error::Config(
                        "mlp needs at least one nonempty hidden layer".into(),
                    ));
                }
                Ok(())
            }
            ModelSpec::Linear {
                input_dim,
                output_dim,
            } => {
                if *input_dim == 0 || *output_dim == 0 {
                    return Err(Error::Config("linear dims must be positive".into()));
                }
                Ok(())
            }
        }
    }

    /// Vocabulary size for token models: p residue tokens plus PLUS and
    /// MODEQ.
    pub fn vocab(&self) -> Option<usize> {
        match self {
            ModelSpec::ModAddTransformer { modulus, .. } => Some(modulus + 2),
            _ => None,
        }
    }

    /// Dimension of the model output vector `f(x)`.
    pub fn output_dim(&self) -> usize {
        match self {
            ModelSpec::ModAddTransformer { modulus, .. } => modulus + 2,
            ModelSpec::Mlp { output_dim, .. } => *output_dim,
            ModelSpec::Linear { output_dim, .. } => *output_dim,
        }
    }

    /// Total parameter count.
    pub fn d(&self) -> usize {
        self.layout().1.d()
    }

    /// Offsets of every weight block plus the component registry.
    fn layout(&self) -> (Layout, ComponentRegistry) {
        let mut lb = LayoutBuilder::new();
        let layout = match self {
            ModelSpec::ModAddTransformer {
                modulus,
                model_dim,
                heads,
                head_dim,
                mlp_hidden,
            } => {
                let vocab = modulus + 2;
                let embedding = lb.block("embedding", vocab * model_dim);
                let mut wq = Vec::new();
                let mut wk = Vec::new();
                let mut wv = Vec::new();
                for _ in 0..*heads {
                    wq.push(lb.block("att_encoders", model_dim * head_dim));
                    wk.push(lb.block("att_encoders", model_dim * head_dim));
                    wv.push(lb.block("att_encoders", model_dim * head_dim));
                }
                let mut wo = Vec::new();
                for _ in 0..*heads {
                    wo.push(lb.block("att_decoders", head_dim * model_dim));
                }
                let w1 = lb.block("linear1", model_dim * mlp_hidden);
                let b1 = lb.block("linear1", *mlp_hidden);
                let w2 = lb.block("linear2", mlp_hidden * model_dim);
                let b2 = lb.block("linear2", *model_dim);
                let wdec = lb.block("decoder", model_dim * vocab);
                let bdec = lb.block("decoder", vocab);
                Layout::Transformer {
                    embedding,
                    wq,
                    wk,
                    wv,
                    wo,
                    w1,
                    b1,
                    w2,
                    b2,
                    wdec,
                    bdec,
                }
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                output_dim,
            } => {
                let mut dims = vec![*input_dim];
                dims.extend_from_slice(hidden);
                let mut layers = Vec::new();
                for (i, w) in hidden.iter().enumerate() {
                    let name = format!("linear{}", i + 1);
                    let wo = lb.block(&name, dims[i] * w);
                    let bo = lb.block(&name, *w);
                    layers.push((wo, bo));
                }
                let wdec = lb.block("decoder", hidden[hidden.len() - 1] * output_dim);
                let bdec = lb.block("decoder", *output_dim);
                Layout::Mlp { layers, wdec, bdec }
            }
            ModelSpec::Linear {
                input_dim,
                output_dim,
            } => {
                let w = lb.block("decoder", input_dim * output_dim);
                let b = lb.block("decoder", *output_dim);
                Layout::Linear { w, b }
            }
        };
        let registry = lb
            .registry()
            .expect("layout builder always produces a valid partition");
        (layout, registry)
    }

    pub fn registry(&self) -> ComponentRegistry {
        self.layout().1
    }

    /// Initialize parameters: each weight matrix entry ~ N(0, 1/fan_in)
    /// where fan_in is the contracted dimension (the embedding uses
    /// model_dim), biases zero. Deterministic in `seed`: values are drawn in
    /// layout order from one SplitMix64 stream.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        self.validate().expect("init_params on invalid spec");
        let (_, registry) = self.layout();
        let mut data = vec![0.0; registry.d()];
        let mut rng = Rng::new(seed);
        let fill = |range: std::ops::Range<usize>, std: f64, rng: &mut Rng, data: &mut [f64]| {
            for x in &mut data[range] {
                *x = std * rng.next_normal();
            }
        };
        match self {
            ModelSpec::ModAddTransformer {
                modulus,
                model_dim,
                heads,
                head_dim,
                mlp_hidden,
            } => {
                let vocab = modulus + 2;
                let (layout, _) = self.layout();
                let Layout::Transformer {
                    embedding,
                    wq,
                    wk,
                    wv,
                    wo,
                    w1,
                    w2,
                    wdec,
                    ..
                } = layout
                else {
                    unreachable!()
                };
                let dim_std = 1.0 / (*model_dim as f64).sqrt();
                fill(embedding..embedding + vocab * model_dim, dim_std, &mut rng, &mut data);
                for h in 0..*heads {
                    for &o in [&wq[h], &wk[h], &wv[h]] {
                        fill(o..o + model_dim * head_dim, dim_std, &mut rng, &mut data);
                    }
                }
                let hd_std = 1.0 / (*head_dim as f64).sqrt();
                for h in 0..*heads {
                    fill(wo[h]..wo[h] + head_dim * model_dim, hd_std, &mut rng, &mut data);
                }
                fill(w1..w1 + model_dim * mlp_hidden, dim_std, &mut rng, &mut data);
                let hidden_std = 1.0 / (*mlp_hidden as f64).sqrt();
                fill(w2..w2 + mlp_hidden * model_dim, hidden_std, &mut rng, &mut data);
                fill(wdec..wdec + model_dim * vocab, dim_std, &mut rng, &mut data);
                // biases stay zero
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                output_dim,
            } => {
                let (layout, _) = self.layout();
                let Layout::Mlp { layers, wdec, .. } = layout else {
                    unreachable!()
                };
                let mut dims = vec![*input_dim];
                dims.extend_from_slice(hidden);
                for (i, (wo, _)) in layers.iter().enumerate() {
                    let std = 1.0 / (dims[i] as f64).sqrt();
                    fill(*wo..*wo + dims[i] * hidden[i], std, &mut rng, &mut data);
                }
                let std = 1.0 / (hidden[hidden.len() - 1] as f64).sqrt();
                fill(
                    wdec..wdec + hidden[hidden.len() - 1] * output_dim,
                    std,
                    &mut rng,
                    &mut data,
                );
            }
            ModelSpec::Linear {
                input_dim,
                output_dim,
            } => {
                let (layout, _) = self.layout();
                let Layout::Linear { w, .. } = layout else { unreachable!() };
                let std = 1.0 / (*input_dim as f64).sqrt();
                fill(w..w + input_dim * output_dim, std, &mut rng, &mut data);
            }
        }
        ParamVector::new(data, registry).expect("registry matches layout by construction")
    }

    /// Build the computation graph for one sample. The returned node is the
    /// model output `f(x)`: a log-probability vector for token/feature
    /// classifiers, raw affine outputs for [`ModelSpec::Linear`].
    ///
    /// The graph only fixes topology; evaluate it at any parameter vector
    /// with [`Graph::forward`].
    pub fn graph_for(&self, sample: &Sample) -> Result<(Graph, NodeId)> {
        self.validate()?;
        match self {
            ModelSpec::ModAddTransformer {
                modulus,
                model_dim,
                heads,
                head_dim,
                mlp_hidden,
            } => {
                let tokens = match &sample.input {
                    SampleInput::Tokens(t) if !t.is_empty() => t,
                    SampleInput::Tokens(_) => {
                        return Err(Error::Data("empty token sequence".into()))
                    }
                    _ => return Err(Error::Data("transformer expects token input".into())),
                };
                let vocab = modulus + 2;
                let (layout, registry) = self.layout();
                let Layout::Transformer {
                    embedding,
                    wq,
                    wk,
                    wv,
                    wo,
                    w1,
                    b1,
                    w2,
                    b2,
                    wdec,
                    bdec,
                } = layout
                else {
                    unreachable!()
                };
                let n = tokens.len();
                let mut g = Graph::new(registry.d());
                let table = g.param(embedding, &[vocab, *model_dim])?;
                let e = g.embed(table, tokens)?;
                let last = g.slice_rows(e, n - 1, n)?;
                let mut attn_out: Option<NodeId> = None;
                for h in 0..*heads {
                    let pwq = g.param(wq[h], &[*model_dim, *head_dim])?;
                    let pwk = g.param(wk[h], &[*model_dim, *head_dim])?;
                    let pwv = g.param(wv[h], &[*model_dim, *head_dim])?;
                    let q = g.matmul(last, pwq)?;
                    let k = g.matmul(e, pwk)?;
                    let v = g.matmul(e, pwv)?;
                    let att = g.attention(q, k, v)?;
                    let pwo = g.param(wo[h], &[*head_dim, *model_dim])?;
                    let proj = g.matmul(att, pwo)?;
                    attn_out = Some(match attn_out {
                        Some(acc) => g.add(acc, proj)?,
                        None => proj,
                    });
                }
                let x = attn_out.expect("heads >= 1 checked by validate");
                let pw1 = g.param(w1, &[*model_dim, *mlp_hidden])?;
                let pb1 = g.param(b1, &[*mlp_hidden])?;
                let h1 = g.matmul(x, pw1)?;
                let h1 = g.add(h1, pb1)?;
                let h1 = g.relu(h1)?;
                let pw2 = g.param(w2, &[*mlp_hidden, *model_dim])?;
                let pb2 = g.param(b2, &[*model_dim])?;
                let h2 = g.matmul(h1, pw2)?;
                let h2 = g.add(h2, pb2)?;
                let pwd = g.param(wdec, &[*model_dim, vocab])?;
                let pbd = g.param(bdec, &[vocab])?;
                let logits = g.matmul(h2, pwd)?;
                let logits = g.add(logits, pbd)?;
                let ls = g.log_softmax(logits)?;
                let out = g.reshape(ls, &[vocab])?;
                Ok((g, out))
            }
            ModelSpec::Mlp {
                input_dim,
                hidden,
                output_dim,
            } => {
                let features = match &sample.input {
                    SampleInput::Features(f) => f,
                    _ => return Err(Error::Data("mlp expects feature input".into())),
                };
                if features.len() != *input_dim {
                    return Err(Error::Data(format!(
                        "expected {input_dim} features, got {}",
                        features.len()
                    )));
                }
                let (layout, registry) = self.layout();
                let Layout::Mlp { layers, wdec, bdec } = layout else {
                    unreachable!()
                };
                let mut dims = vec![*input_dim];
                dims.extend_from_slice(hidden);
                let mut g = Graph::new(registry.d());
                let mut x = g.input(&[1, *input_dim], features.clone())?;
                for (i, (wo, bo)) in layers.iter().enumerate() {
                    let w = g.param(*wo, &[dims[i], hidden[i]])?;
                    let b = g.param(*bo, &[hidden[i]])?;
                    x = g.matmul(x, w)?;
                    x = g.add(x, b)?;
                    x = g.relu(x)?;
                }
                let w = g.param(wdec, &[hidden[hidden.len() - 1], *output_dim])?;
                let b = g.param(bdec, &[*output_dim])?;
                x = g.matmul(x, w)?;
                x = g.add(x, b)?;
                let ls = g.log_softmax(x)?;
                let out = g.reshape(ls, &[*output_dim])?;
                Ok((g, out))
            }
            ModelSpec::Linear {
                input_dim,
                output_dim,
            } => {
                let features = match &sample.input {
                    SampleInput::Features(f) => f,
                    _ => return Err(Error::Data("linear model expects feature input".into())),
                };
                if features.len() != *input_dim {
                    return Err(Error::Data(format!(
                        "expected {input_dim} features, got {}",
                        features.len()
                    )));
                }
                let (layout, registry) = self.layout();
                let Layout::Linear { w, b } = layout else { unreachable!() };
                let mut g = Graph::new(registry.d());
                let x = g.input(&[1, *input_dim], features.clone())?;
                let pw = g.param(w, &[*input_dim, *output_dim])?;
                let pb = g.param(b, &[*output_dim])?;
                let y = g.matmul(x, pw)?;
                let y = g.add(y, pb)?;
                let out = g.reshape(y, &[*output_dim])?;
                Ok((g, out))
            }
        }
    }

    /// Evaluate `f(x)` at `theta` and return the output vector.
    pub fn forward_outputs(&self, theta: &[f64], sample: &Sample) -> Result<Vec<f64>> {
        let (g, out) = self.graph_for(sample)?;
        let vals = g.forward(theta)?;
        Ok(g.value(&vals, theta, out).to_vec())
    }
}

/// Weight-block offsets per architecture (internal; the registry is the
/// public layout surface).
enum Layout {
    Transformer {
        embedding: usize,
        wq: Vec<usize>,
        wk: Vec<usize>,
        wv: Vec<usize>,
        wo: Vec<usize>,
        w1: usize,
        b1: usize,
        w2: usize,
        b2: usize,
        wdec: usize,
        bdec: usize,
    },
    Mlp {
        layers: Vec<(usize, usize)>, // (W offset, b offset) per hidden layer
        wdec: usize,
        bdec: usize,
    },
    Linear {
        w: usize,
        b: usize,
    },
}

/// Training loss. The reconstruction machinery only needs the gradient of
/// the loss in the model outputs, so each variant defines value + output
/// gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Negative log-likelihood over log-probability outputs: `−f[label]`.
    /// Its output gradient is the constant one-hot `−e_label`.
    Nll,
    /// Half squared error against a one-hot target: `½‖f − e_label‖²`.
    Mse,
}

impl Loss {
    pub fn value(&self, outputs: &[f64], label: usize) -> f64 {
        assert!(label < outputs.len(), "label {label} out of range");
        match self {
            Loss::Nll => -outputs[label],
            Loss::Mse => {
                let mut acc = 0.0;
                for (i, &f) in outputs.iter().enumerate() {
                    let y = if i == label { 1.0 } else { 0.0 };
                    acc += (f - y) * (f - y);
                }
                0.5 * acc
            }
        }
    }

    /// `∂loss/∂outputs` — the backward seed for one sample.
    pub fn output_grad(&self, outputs: &[f64], label: usize) -> Vec<f64> {
        assert!(label < outputs.len(), "label {label} out of range");
        match self {
            Loss::Nll => {
                let mut g = vec![0.0; outputs.len()];
                g[label] = -1.0;
                g
            }
            Loss::Mse => {
                let mut g = outputs.to_vec();
                g[label] -= 1.0;
                g
            }
        }
    }
}

/// Index of the largest output (first index wins ties), i.e. the predicted
/// class.
pub fn argmax(outputs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in outputs.iter().enumerate() {
        if x > outputs[best] {
            best = i;
        }
    }
    let _ = outputs[best];
    best
}
