//! Trajectory capture: per-step optimizer records and their binary format.
//!
//! A trajectory holds record 0 (the initialization: `θ_0`, zero moments,
//! `α = 0`, empty batch mask) followed by one record per optimizer step
//! `s = 1..=N` with the post-update parameters `θ_s`, the moment vectors
//! `m_s`/`v_s`, the step size `α_s`, and the bitmask of training samples in
//! batch `B_s`. That is exactly the information the reconstruction needs:
//! nothing about a prediction of `θ_N` is lost once the trajectory is on
//! disk.
//!
//! On-disk layout (`*.traj`): one line of JSON (format name, version,
//! endianness, dimensions, and the full [`RunConfig`]), then fixed-size
//! binary records — `θ`, `m`, `v` as little-endian `f64`, `α` as one `f64`,
//! and the batch mask as `ceil(M/8)` bytes, least-significant bit first.
//! Round-tripping preserves every `f64` bit pattern, including signed
//! zeros.
//!
//! Writers stream ([`FileSink`] never holds more than one record), so
//! recording a run whose log exceeds RAM is fine; readers can either load
//! everything ([`TrajectoryLog::load`]) or seek per record
//! ([`TrajectoryFile`]).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Membership bitmask over the training set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchMask {
    words: Vec<u64>,
    len: usize,
}

impl BatchMask {
    pub fn empty(len: usize) -> BatchMask {
        BatchMask {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn full(len: usize) -> BatchMask {
        let mut m = BatchMask::empty(len);
        for i in 0..len {
            m.set(i);
        }
        m
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> BatchMask {
        let mut m = BatchMask::empty(len);
        for &i in indices {
            assert!(i < len, "index {i} out of mask range {len}");
            m.set(i);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.len && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    /// Number of set bits, i.e. `|B_s|`.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Ascending indices of set bits.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.contains(i))
    }

    /// Serialize as `ceil(len/8)` bytes, bit `i` stored at byte `i/8`, bit
    /// position `i%8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.ones() {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<BatchMask> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Format {
                expected: format!("{} mask bytes", len.div_ceil(8)),
                found: format!("{}", bytes.len()),
            });
        }
        let mut m = BatchMask::empty(len);
        for i in 0..len {
            if bytes[i / 8] & (1 << (i % 8)) != 0 {
                m.set(i);
            }
        }
        // Bits beyond `len` must be zero (they would be silently dropped).
        for (byte_idx, &b) in bytes.iter().enumerate() {
            for bit in 0..8 {
                if b & (1 << bit) != 0 && byte_idx * 8 + bit >= len {
                    return Err(Error::Format {
                        expected: format!("mask bits only below {len}"),
                        found: format!("bit {}", byte_idx * 8 + bit),
                    });
                }
            }
        }
        Ok(m)
    }
}

/// One trajectory entry. See module docs for the semantics of record 0
/// versus records `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub theta: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub alpha: f64,
    pub batch: BatchMask,
}

/// Run description stored in the trajectory header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub config: RunConfig,
    pub d: usize,
    pub train_size: usize,
    pub steps: usize,
}

impl TrajectoryMeta {
    fn record_bytes(&self) -> usize {
        3 * self.d * 8 + 8 + self.train_size.div_ceil(8)
    }
}

/// A fully in-memory trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub meta: TrajectoryMeta,
    pub records: Vec<StepRecord>,
}

impl TrajectoryLog {
    /// Number of optimizer steps (records minus the init record).
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Record for step `s` (0 = initialization).
    pub fn record(&self, s: usize) -> Result<&StepRecord> {
        self.records.get(s).ok_or(Error::MissingStep {
            step: s,
            last: self.steps(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut sink = FileSink::create(path)?;
        sink.begin(&self.meta)?;
        for rec in &self.records {
            sink.record(rec)?;
        }
        sink.finish()
    }

    pub fn load(path: &Path) -> Result<TrajectoryLog> {
        let mut f = TrajectoryFile::open(path)?;
        let meta = f.meta().clone();
        let mut records = Vec::with_capacity(meta.steps + 1);
        for s in 0..=meta.steps {
            records.push(f.read_record(s)?);
        }
        Ok(TrajectoryLog { meta, records })
    }
}

/// Receives trajectory records in order during training.
pub trait TrajectorySink {
    fn begin(&mut self, meta: &TrajectoryMeta) -> Result<()>;
    fn record(&mut self, rec: &StepRecord) -> Result<()>;
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Keeps the whole log in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    meta: Option<TrajectoryMeta>,
    records: Vec<StepRecord>,
}

impl MemorySink {
    pub fn new() -> MemorySink {
        MemorySink::default()
    }

    pub fn into_log(self) -> Result<TrajectoryLog> {
        let meta = self
            .meta
            .ok_or_else(|| Error::Data("sink never received a header".into()))?;
        Ok(TrajectoryLog {
            meta,
            records: self.records,
        })
    }

    /// Records received so far (useful after an aborted run).
    pub fn records_len(&self) -> usize {
        self.records.len()
    }
}

impl TrajectorySink for MemorySink {
    fn begin(&mut self, meta: &TrajectoryMeta) -> Result<()> {
        self.meta = Some(meta.clone());
        Ok(())
    }

    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        self.records.push(rec.clone());
        Ok(())
    }
}

/// Discards everything (for runs where only the curves matter).
#[derive(Debug, Default)]
pub struct NullSink;

impl TrajectorySink for NullSink {
    fn begin(&mut self, _meta: &TrajectoryMeta) -> Result<()> {
        Ok(())
    }

    fn record(&mut self, _rec: &StepRecord) -> Result<()> {
        Ok(())
    }
}

const FORMAT_NAME: &str = "epk-trajectory";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    endianness: String,
    d: usize,
    train_size: usize,
    steps: usize,
    config: RunConfig,
}

/// Streams records to disk as they arrive.
pub struct FileSink {
    writer: BufWriter<File>,
    meta: Option<TrajectoryMeta>,
    buf: Vec<u8>,
    written: usize,
}

impl FileSink {
    pub fn create(path: &Path) -> Result<FileSink> {
        Ok(FileSink {
            writer: BufWriter::new(File::create(path)?),
            meta: None,
            buf: Vec::new(),
            written: 0,
        })
    }
}

impl TrajectorySink for FileSink {
    fn begin(&mut self, meta: &TrajectoryMeta) -> Result<()> {
        let header = Header {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            endianness: "little".into(),
            d: meta.d,
            train_size: meta.train_size,
            steps: meta.steps,
            config: meta.config.clone(),
        };
        let line = serde_json::to_string(&header)?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.meta = Some(meta.clone());
        Ok(())
    }

    fn record(&mut self, rec: &StepRecord) -> Result<()> {
        let meta = self
            .meta
            .as_ref()
            .ok_or_else(|| Error::Data("record before header".into()))?;
        if rec.theta.len() != meta.d || rec.batch.len() != meta.train_size {
            return Err(Error::Format {
                expected: format!("record with d={} train_size={}", meta.d, meta.train_size),
                found: format!("d={} mask={}", rec.theta.len(), rec.batch.len()),
            });
        }
        self.buf.clear();
        for slice in [&rec.theta, &rec.m, &rec.v] {
            for &x in slice.iter() {
                self.buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        self.buf.extend_from_slice(&rec.alpha.to_le_bytes());
        self.buf.extend_from_slice(&rec.batch.to_bytes());
        self.writer.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        if let Some(meta) = &self.meta {
            if self.written != meta.steps + 1 {
                return Err(Error::Format {
                    expected: format!("{} records", meta.steps + 1),
                    found: format!("{}", self.written),
                });
            }
        }
        self.writer.flush()?;
        Ok(())
    }
}

/// Random-access reader over a trajectory file; records are decoded on
/// demand so arbitrarily large logs can be scanned in O(record) memory.
pub struct TrajectoryFile {
    reader: BufReader<File>,
    meta: TrajectoryMeta,
    data_start: u64,
}

impl TrajectoryFile {
    pub fn open(path: &Path) -> Result<TrajectoryFile> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            let n = reader.read(&mut byte)?;
            if n == 0 {
                return Err(Error::Format {
                    expected: "header line".into(),
                    found: "end of file".into(),
                });
            }
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
            if line.len() > 1 << 20 {
                return Err(Error::Format {
                    expected: "header line under 1 MiB".into(),
                    found: "unterminated header".into(),
                });
            }
        }
        let header: Header = serde_json::from_slice(&line)?;
        if header.format != FORMAT_NAME {
            return Err(Error::Format {
                expected: FORMAT_NAME.into(),
                found: header.format,
            });
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Format {
                expected: format!("version {FORMAT_VERSION}"),
                found: format!("version {}", header.version),
            });
        }
        if header.endianness != "little" {
            return Err(Error::Format {
                expected: "little".into(),
                found: header.endianness,
            });
        }
        if header.d != header.config.model.d() {
            return Err(Error::Format {
                expected: format!("d = {} per model spec", header.config.model.d()),
                found: format!("d = {}", header.d),
            });
        }
        let meta = TrajectoryMeta {
            config: header.config,
            d: header.d,
            train_size: header.train_size,
            steps: header.steps,
        };
        let data_start = (line.len() + 1) as u64;

        // The byte length must match the declared record count exactly:
        // truncation and trailing garbage are both corruption.
        let file_len = reader.get_ref().metadata()?.len();
        let expected = data_start + ((meta.steps + 1) * meta.record_bytes()) as u64;
        if file_len != expected {
            return Err(Error::Format {
                expected: format!("{expected} bytes ({} records)", meta.steps + 1),
                found: format!("{file_len} bytes"),
            });
        }
        Ok(TrajectoryFile {
            reader,
            meta,
            data_start,
        })
    }

    pub fn meta(&self) -> &TrajectoryMeta {
        &self.meta
    }

    pub fn steps(&self) -> usize {
        self.meta.steps
    }

    pub fn read_record(&mut self, s: usize) -> Result<StepRecord> {
        if s > self.meta.steps {
            return Err(Error::MissingStep {
                step: s,
                last: self.meta.steps,
            });
        }
        let rec_len = self.meta.record_bytes();
        self.reader
            .seek(SeekFrom::Start(self.data_start + (s * rec_len) as u64))?;
        let mut buf = vec![0u8; rec_len];
        self.reader.read_exact(&mut buf)?;

        let d = self.meta.d;
        let take_f64s = |bytes: &[u8]| -> Vec<f64> {
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect()
        };
        let theta = take_f64s(&buf[0..d * 8]);
        let m = take_f64s(&buf[d * 8..2 * d * 8]);
        let v = take_f64s(&buf[2 * d * 8..3 * d * 8]);
        let alpha = f64::from_le_bytes(buf[3 * d * 8..3 * d * 8 + 8].try_into().expect("8 bytes"));
        let batch = BatchMask::from_bytes(self.meta.train_size, &buf[3 * d * 8 + 8..])?;
        Ok(StepRecord {
            theta,
            m,
            v,
            alpha,
            batch,
        })
    }
}
