//! Datasets: modular-addition pair enumeration and synthetic MLP blobs.
//!
//! Modular addition over `Z_p` enumerates unordered pairs `(a, b)` with
//! `a ≥ b` (one representative per unordered pair; the task is symmetric),
//! optionally excluding `a == b`. The pair is encoded for the transformer as
//! the token sequence `[a, PLUS, b, MODEQ]` where `PLUS = p` and
//! `MODEQ = p + 1`; the label is `(a + b) mod p`.
//!
//! The MLP task is a four-blob XOR arrangement: the first two feature
//! dimensions carry class structure (opposite quadrants share a class, so
//! the problem is not linearly separable), remaining dimensions are pure
//! noise.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SampleInput {
    /// Token ids for the transformer.
    Tokens(Vec<usize>),
    /// Dense features for the MLP.
    Features(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: SampleInput,
    pub label: usize,
}

impl Sample {
    /// The `(a, b)` operands of a modular-addition sample.
    pub fn modadd_pair(&self) -> Option<(usize, usize)> {
        match &self.input {
            SampleInput::Tokens(t) if t.len() == 4 => Some((t[0], t[2])),
            _ => None,
        }
    }

    /// `a + b` (not reduced mod p) — the quantity residue structure lives on.
    pub fn modadd_sum(&self) -> Option<usize> {
        self.modadd_pair().map(|(a, b)| a + b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Token sequence for one modular-addition prompt.
pub fn modadd_tokens(a: usize, b: usize, p: usize) -> Vec<usize> {
    vec![a, p, b, p + 1]
}

/// Generation parameters for the modular-addition dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModAddSpec {
    pub modulus: usize,
    /// Fraction of the enumerated pairs that goes to train (used when
    /// explicit counts are absent; the remainder is the test set).
    pub train_fraction: f64,
    /// Keep `a == b` pairs. With them there are p(p+1)/2 pairs, without
    /// p(p−1)/2.
    pub include_diagonal: bool,
    /// Explicit split sizes; both must be set together and may leave part of
    /// the enumeration unused.
    pub train_count: Option<usize>,
    pub test_count: Option<usize>,
    pub seed: u64,
}

pub fn generate_modadd(spec: &ModAddSpec) -> Result<SplitData> {
    let p = spec.modulus;
    if p < 2 {
        return Err(Error::Config(format!("modulus {p} < 2")));
    }
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for a in 0..p {
        for b in 0..=a {
            if a == b && !spec.include_diagonal {
                continue;
            }
            pairs.push((a, b));
        }
    }
    let total = pairs.len();
    let (n_train, n_test) = match (spec.train_count, spec.test_count) {
        (Some(tr), Some(te)) => {
            if tr + te > total {
                return Err(Error::Config(format!(
                    "train_count {tr} + test_count {te} exceeds {total} pairs"
                )));
            }
            (tr, te)
        }
        (None, None) => {
            if !(0.0..=1.0).contains(&spec.train_fraction) {
                return Err(Error::Config(format!(
                    "train_fraction {} outside [0, 1]",
                    spec.train_fraction
                )));
            }
            let tr = (spec.train_fraction * total as f64).round() as usize;
            (tr, total - tr)
        }
        _ => {
            return Err(Error::Config(
                "train_count and test_count must be given together".into(),
            ))
        }
    };

    let mut rng = Rng::new(spec.seed);
    rng.shuffle(&mut pairs);

    let to_samples = |slice: &[(usize, usize)]| {
        slice
            .iter()
            .map(|&(a, b)| Sample {
                input: SampleInput::Tokens(modadd_tokens(a, b, p)),
                label: (a + b) % p,
            })
            .collect::<Vec<_>>()
    };
    Ok(SplitData {
        train: to_samples(&pairs[..n_train]),
        test: to_samples(&pairs[n_train..n_train + n_test]),
    })
}

/// Generation parameters for the XOR-blobs dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsSpec {
    pub input_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Noise standard deviation around the ±1 blob centers.
    pub noise: f64,
    pub seed: u64,
}

pub fn generate_xor_blobs(spec: &BlobsSpec) -> Result<SplitData> {
    if spec.input_dim < 2 {
        return Err(Error::Config(format!(
            "xor blobs need input_dim >= 2, got {}",
            spec.input_dim
        )));
    }
    let mut rng = Rng::new(spec.seed);
    let mut draw = |n: usize| -> Vec<Sample> {
        (0..n)
            .map(|_| {
                let qx = rng.next_below(2) as i64;
                let qy = rng.next_below(2) as i64;
                let mut f = Vec::with_capacity(spec.input_dim);
                f.push((2 * qx - 1) as f64 + spec.noise * rng.next_normal());
                f.push((2 * qy - 1) as f64 + spec.noise * rng.next_normal());
                for _ in 2..spec.input_dim {
                    f.push(rng.next_normal());
                }
                Sample {
                    input: SampleInput::Features(f),
                    label: (qx ^ qy) as usize,
                }
            })
            .collect()
    };
    let train = draw(spec.n_train);
    let test = draw(spec.n_test);
    Ok(SplitData { train, test })
}

/// Write a modular-addition split as CSV with columns `a,b,label,split`.
pub fn write_modadd_csv<W: Write>(w: &mut W, data: &SplitData) -> Result<()> {
    writeln!(w, "a,b,label,split")?;
    for (split, samples) in [("train", &data.train), ("test", &data.test)] {
        for s in samples {
            let (a, b) = s
                .modadd_pair()
                .ok_or_else(|| Error::Data("sample is not a modular-addition prompt".into()))?;
            writeln!(w, "{a},{b},{},{split}", s.label)?;
        }
    }
    Ok(())
}

/// Read a modular-addition CSV produced by [`write_modadd_csv`], validating
/// every row against the given modulus.
pub fn read_modadd_csv<R: BufRead>(r: R, p: usize) -> Result<SplitData> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Data("empty dataset file".into()))?;
    if header.trim() != "a,b,label,split" {
        return Err(Error::Format {
            expected: "a,b,label,split".into(),
            found: header,
        });
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "line {}: expected 4 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse = |s: &str, what: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Data(format!("line {}: bad {what} '{s}'", lineno + 2)))
        };
        let a = parse(fields[0], "a")?;
        let b = parse(fields[1], "b")?;
        let label = parse(fields[2], "label")?;
        if a >= p || b >= p {
            return Err(Error::Data(format!(
                "line {}: operand out of range for modulus {p}",
                lineno + 2
            )));
        }
        if label != (a + b) % p {
            return Err(Error::Data(format!(
                "line {}: label {label} != ({a}+{b}) mod {p}",
                lineno + 2
            )));
        }
        let sample = Sample {
            input: SampleInput::Tokens(modadd_tokens(a, b, p)),
            label,
        };
        match fields[3].trim() {
            "train" => train.push(sample),
            "test" => test.push(sample),
            other => {
                return Err(Error::Data(format!(
                    "line {}: unknown split '{other}'",
                    lineno + 2
                )))
            }
        }
    }
    Ok(SplitData { train, test })
}
