//! CSV emission (and a few readers) for matrices, series, and scores.
//!
//! Floats are written in scientific notation with 17 significant digits
//! (`{:.16e}`), which is enough for every `f64` to parse back to the exact
//! same bits; rerunning a command therefore produces byte-identical files.
//! Fields are RFC-4180 quoted when they contain commas, quotes, or
//! newlines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::ReinitRun;
use crate::influence::{InfluenceTable, KernelSlice, SimilarityMatrix, StepImportanceSeries};
use crate::params::ComponentRegistry;
use crate::train::CurvePoint;

/// Lossless `f64` formatting: 17 significant digits, scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Write one CSV file: a header row then data rows, all fields escaped.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{}",
        header.iter().map(|h| escape(h)).collect::<Vec<_>>().join(",")
    )?;
    for row in rows {
        writeln!(
            w,
            "{}",
            row.iter().map(|f| escape(f)).collect::<Vec<_>>().join(",")
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Split one CSV record into fields, honoring RFC-4180 quoting.
fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut quoted = false;
    while let Some(c) = chars.next() {
        if quoted {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    cur.push('"');
                }
                '"' => quoted = false,
                _ => cur.push(c),
            }
        } else {
            match c {
                '"' if cur.is_empty() => quoted = true,
                ',' => fields.push(std::mem::take(&mut cur)),
                _ => cur.push(c),
            }
        }
    }
    fields.push(cur);
    fields
}

fn parse_f64(field: &str, path: &Path) -> Result<f64> {
    field.parse::<f64>().map_err(|_| {
        Error::Data(format!("{}: bad float '{field}'", path.display()))
    })
}

fn parse_usize(field: &str, path: &Path) -> Result<usize> {
    field.parse::<usize>().map_err(|_| {
        Error::Data(format!("{}: bad integer '{field}'", path.display()))
    })
}

fn read_rows(path: &Path, expected_header: Option<&[&str]>) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l?,
        None => {
            return Err(Error::Format {
                expected: "csv header row".into(),
                found: format!("empty file {}", path.display()),
            })
        }
    };
    let header = split_csv_line(&header_line);
    if let Some(want) = expected_header {
        if header != want {
            return Err(Error::Format {
                expected: want.join(","),
                found: header.join(","),
            });
        }
    }
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields = split_csv_line(&line);
        if fields.len() != header.len() {
            return Err(Error::Format {
                expected: format!("{} fields", header.len()),
                found: format!("{} in {}", fields.len(), path.display()),
            });
        }
        rows.push(fields);
    }
    Ok((header, rows))
}

pub fn write_curves_csv(path: &Path, curves: &[CurvePoint]) -> Result<()> {
    write_csv(
        path,
        &["step", "train_loss", "train_acc", "test_loss", "test_acc"],
        curves.iter().map(|p| {
            vec![
                p.step.to_string(),
                fmt_f64(p.train_loss),
                fmt_f64(p.train_acc),
                fmt_f64(p.test_loss),
                fmt_f64(p.test_acc),
            ]
        }),
    )
}

/// Inverse of [`write_curves_csv`]; round-trips bit-exactly.
pub fn read_curves_csv(path: &Path) -> Result<Vec<CurvePoint>> {
    let (_, rows) = read_rows(
        path,
        Some(&["step", "train_loss", "train_acc", "test_loss", "test_acc"]),
    )?;
    rows.iter()
        .map(|r| {
            Ok(CurvePoint {
                step: parse_usize(&r[0], path)?,
                train_loss: parse_f64(&r[1], path)?,
                train_acc: parse_f64(&r[2], path)?,
                test_loss: parse_f64(&r[3], path)?,
                test_acc: parse_f64(&r[4], path)?,
            })
        })
        .collect()
}

/// Generic labeled matrix: first column holds row labels, remaining columns
/// are the (labeled) matrix entries.
pub fn write_matrix_csv(
    path: &Path,
    values: &[f64],
    n_cols: usize,
    row_labels: &[String],
    col_labels: &[String],
) -> Result<()> {
    let mut header: Vec<&str> = vec![""];
    header.extend(col_labels.iter().map(|s| s.as_str()));
    write_csv(
        path,
        &header,
        values.chunks(n_cols).zip(row_labels).map(|(row, label)| {
            let mut out = Vec::with_capacity(n_cols + 1);
            out.push(label.clone());
            out.extend(row.iter().map(|&v| fmt_f64(v)));
            out
        }),
    )
}

pub fn write_kernel_slice_csv(path: &Path, slice: &KernelSlice) -> Result<()> {
    let row_labels: Vec<String> = slice
        .test_perm
        .iter()
        .zip(&slice.test_keys)
        .map(|(i, k)| format!("test_{i}_key_{k}"))
        .collect();
    let col_labels: Vec<String> = slice
        .train_perm
        .iter()
        .zip(&slice.train_keys)
        .map(|(i, k)| format!("train_{i}_key_{k}"))
        .collect();
    write_matrix_csv(path, &slice.values, slice.n_train, &row_labels, &col_labels)
}

/// Similarity matrices keep the missing flag visible: flagged cells are
/// written as the literal `missing`.
pub fn write_similarity_csv(
    path: &Path,
    sim: &SimilarityMatrix,
    labels: &[String],
) -> Result<()> {
    let mut header: Vec<&str> = vec![""];
    header.extend(labels.iter().map(|s| s.as_str()));
    write_csv(
        path,
        &header,
        (0..sim.n).map(|i| {
            let mut row = Vec::with_capacity(sim.n + 1);
            row.push(labels[i].clone());
            for j in 0..sim.n {
                row.push(match sim.get(i, j) {
                    Some(v) => fmt_f64(v),
                    None => "missing".to_string(),
                });
            }
            row
        }),
    )
}

pub fn write_step_importance_csv(path: &Path, series: &StepImportanceSeries) -> Result<()> {
    let mut header_owned = vec!["step".to_string()];
    for name in &series.components {
        header_owned.push(format!("psi_{name}"));
        header_owned.push(format!("reg_{name}"));
        header_owned.push(format!("d_{name}"));
    }
    let header: Vec<&str> = header_owned.iter().map(|s| s.as_str()).collect();
    write_csv(
        path,
        &header,
        series.steps.iter().enumerate().map(|(si, &s)| {
            let mut row = vec![s.to_string()];
            for ci in 0..series.components.len() {
                row.push(fmt_f64(series.psi[si][ci]));
                row.push(fmt_f64(series.reg[si][ci]));
                row.push(fmt_f64(series.d[si][ci]));
            }
            row
        }),
    )
}

/// Inverse of [`write_step_importance_csv`]; component names are recovered
/// from the `psi_*` column headers.
pub fn read_step_importance_csv(path: &Path) -> Result<StepImportanceSeries> {
    let (header, rows) = read_rows(path, None)?;
    if header.first().map(String::as_str) != Some("step") || (header.len() - 1) % 3 != 0 {
        return Err(Error::Format {
            expected: "step followed by psi_/reg_/d_ column triples".into(),
            found: header.join(","),
        });
    }
    let mut components = Vec::new();
    for chunk in header[1..].chunks(3) {
        let name = chunk[0].strip_prefix("psi_").ok_or_else(|| Error::Format {
            expected: "psi_<component> column".into(),
            found: chunk[0].clone(),
        })?;
        if chunk[1] != format!("reg_{name}") || chunk[2] != format!("d_{name}") {
            return Err(Error::Format {
                expected: format!("reg_{name},d_{name}"),
                found: format!("{},{}", chunk[1], chunk[2]),
            });
        }
        components.push(name.to_string());
    }
    let n_comp = components.len();
    let mut series = StepImportanceSeries {
        components,
        steps: Vec::with_capacity(rows.len()),
        psi: Vec::with_capacity(rows.len()),
        reg: Vec::with_capacity(rows.len()),
        d: Vec::with_capacity(rows.len()),
    };
    for row in &rows {
        series.steps.push(parse_usize(&row[0], path)?);
        let mut psi = Vec::with_capacity(n_comp);
        let mut reg = Vec::with_capacity(n_comp);
        let mut d = Vec::with_capacity(n_comp);
        for ci in 0..n_comp {
            psi.push(parse_f64(&row[1 + 3 * ci], path)?);
            reg.push(parse_f64(&row[2 + 3 * ci], path)?);
            d.push(parse_f64(&row[3 + 3 * ci], path)?);
        }
        series.psi.push(psi);
        series.reg.push(reg);
        series.d.push(d);
    }
    Ok(series)
}

/// Flattened influence table: one row per (component, test, train) kernel
/// entry, with the component's (test-wise) regularization score repeated
/// alongside for context.
pub fn write_influence_csv(path: &Path, table: &InfluenceTable) -> Result<()> {
    let mut rows = Vec::new();
    for (c, name) in table.components.iter().enumerate() {
        for (x, kernels) in table.kernel[c].iter().enumerate() {
            for (k, &v) in kernels.iter().enumerate() {
                rows.push(vec![
                    name.clone(),
                    x.to_string(),
                    k.to_string(),
                    fmt_f64(v),
                    fmt_f64(table.reg[c][x]),
                ]);
            }
        }
    }
    write_csv(
        path,
        &["component", "test_index", "train_index", "kernel", "component_reg"],
        rows,
    )
}

/// Per-parameter scores, one row per parameter with its component name.
pub fn write_scores_csv(
    path: &Path,
    registry: &ComponentRegistry,
    scores: &[f64],
) -> Result<()> {
    let mut rows = Vec::with_capacity(scores.len());
    for comp in registry.components() {
        for j in comp.range() {
            rows.push(vec![j.to_string(), comp.name.clone(), fmt_f64(scores[j])]);
        }
    }
    write_csv(path, &["parameter", "component", "score"], rows)
}

pub fn write_reinit_csv(path: &Path, run: &ReinitRun) -> Result<()> {
    write_csv(
        path,
        &[
            "step",
            "mean_train_acc",
            "std_train_acc",
            "mean_test_acc",
            "std_test_acc",
        ],
        run.summary.iter().map(|p| {
            vec![
                p.step.to_string(),
                fmt_f64(p.mean_train_acc),
                fmt_f64(p.std_train_acc),
                fmt_f64(p.mean_test_acc),
                fmt_f64(p.std_test_acc),
            ]
        }),
    )
}

pub fn write_confusion_csv(path: &Path, confusion: &[usize], n_classes: usize) -> Result<()> {
    let labels: Vec<String> = (0..n_classes).map(|i| i.to_string()).collect();
    let mut header: Vec<&str> = vec!["true\\pred"];
    header.extend(labels.iter().map(|s| s.as_str()));
    write_csv(
        path,
        &header,
        confusion.chunks(n_classes).enumerate().map(|(i, row)| {
            let mut out = vec![i.to_string()];
            out.extend(row.iter().map(|v| v.to_string()));
            out
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn float_format_round_trips_every_bit_pattern() {
        let cases = [
            0.0,
            -0.0,
            1.0,
            -1.0,
            std::f64::consts::PI,
            1e-300,
            -1e300,
            f64::MIN_POSITIVE,
            f64::MIN_POSITIVE / 8.0, // subnormal
            0.1 + 0.2,
            f64::MAX,
        ];
        for &x in &cases {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{x} -> {s} -> {back}");
        }
    }

    #[test]
    fn fields_are_rfc4180_escaped() {
        assert_eq!(escape("plain"), "plain");
        assert_eq!(escape("a,b"), "\"a,b\"");
        assert_eq!(escape("say \"hi\""), "\"say \"\"hi\"\"\"");
        assert_eq!(escape("line\nbreak"), "\"line\nbreak\"");
    }

    #[test]
    fn curves_csv_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let curves = vec![
            CurvePoint {
                step: 0,
                train_loss: 2.5624,
                train_acc: 0.125,
                test_loss: 2.7,
                test_acc: 0.1 + 0.2,
            },
            CurvePoint {
                step: 10,
                train_loss: 0.001,
                train_acc: 1.0,
                test_loss: 0.2,
                test_acc: 0.75,
            },
        ];
        write_curves_csv(&path, &curves).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,train_loss,train_acc,test_loss,test_acc"
        );
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[0], "0");
        let parsed: f64 = row[4].parse().unwrap();
        assert_eq!(parsed.to_bits(), (0.1f64 + 0.2).to_bits());

        // writing again is byte-identical
        let again = dir.path().join("curves2.csv");
        write_curves_csv(&again, &curves).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());

        // and reading recovers the exact values
        let back = read_curves_csv(&path).unwrap();
        assert_eq!(back, curves);
    }

    #[test]
    fn quoted_fields_parse_back() {
        assert_eq!(
            split_csv_line("a,\"b,c\",\"say \"\"hi\"\"\",d"),
            vec!["a", "b,c", "say \"hi\"", "d"]
        );
        assert_eq!(split_csv_line("plain"), vec!["plain"]);
        assert_eq!(split_csv_line(",x,"), vec!["", "x", ""]);
    }

    #[test]
    fn step_importance_csv_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("imp.csv");
        let series = StepImportanceSeries {
            components: vec!["decoder".into(), "linear1".into()],
            steps: vec![3, 4],
            psi: vec![vec![0.5, 0.25], vec![0.1 + 0.2, 0.0]],
            reg: vec![vec![0.125, 1e-17], vec![0.0, 2.5]],
            d: vec![vec![0.375, 0.25], vec![0.3, -2.5]],
        };
        write_step_importance_csv(&path, &series).unwrap();
        let back = read_step_importance_csv(&path).unwrap();
        assert_eq!(back.components, series.components);
        assert_eq!(back.steps, series.steps);
        for si in 0..2 {
            for ci in 0..2 {
                assert_eq!(back.psi[si][ci].to_bits(), series.psi[si][ci].to_bits());
                assert_eq!(back.reg[si][ci].to_bits(), series.reg[si][ci].to_bits());
                assert_eq!(back.d[si][ci].to_bits(), series.d[si][ci].to_bits());
            }
        }

        // a mangled header is refused rather than misread
        std::fs::write(&path, "step,psi_a,reg_b,d_a\n1,0,0,0\n").unwrap();
        assert!(read_step_importance_csv(&path).is_err());
    }

    #[test]
    fn similarity_csv_marks_missing_cells() {
        use crate::influence::SimilarityMatrix;
        let sim = SimilarityMatrix {
            n: 2,
            values: vec![1.0, 0.0, 0.0, 1.0],
            missing: vec![false, true, true, false],
        };
        let dir = tempdir().unwrap();
        let path = dir.path().join("sim.csv");
        write_similarity_csv(&path, &sim, &["x0".into(), "x1".into()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("missing"));
        assert!(text.lines().count() == 3);
    }

    #[test]
    fn matrix_csv_shape_and_labels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_matrix_csv(
            &path,
            &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            3,
            &["r0".into(), "r1".into()],
            &["a".into(), "b,c".into(), "d".into()],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with(",a,\"b,c\",d"));
        assert!(lines[1].starts_with("r0,"));
        assert_eq!(lines[2].split(',').count(), 4);
    }
}
