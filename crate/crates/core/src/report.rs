//! Criterion reports, attribution dumps and atomic file output.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::fmt_real;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointValue {
    pub input_id: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub input_id: usize,
    pub reason: String,
}

/// Scored output of one criterion over a set of inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: String,
    pub explainer: String,
    pub count: usize,
    /// Absent when every point was skipped.
    pub mean: Option<f64>,
    /// Population standard deviation.
    pub std: Option<f64>,
    pub skipped: usize,
    pub skipped_points: Vec<SkippedPoint>,
    pub per_point: Vec<PointValue>,
    pub config: Value,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl CriterionReport {
    pub fn new(
        criterion: impl Into<String>,
        explainer: impl Into<String>,
        outcome: BatchOutcome,
        config: Value,
    ) -> Self {
        let (mean, std) = mean_std(outcome.values.iter().map(|p| p.value));
        Self {
            criterion: criterion.into(),
            explainer: explainer.into(),
            count: outcome.values.len(),
            mean,
            std,
            skipped: outcome.skipped.len(),
            skipped_points: outcome.skipped,
            per_point: outcome.values,
            config,
            details: Value::Null,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Mean and population standard deviation; `None` for an empty sample.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> (Option<f64>, Option<f64>) {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

/// Per-point values and the points that had no defined value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchOutcome {
    pub values: Vec<PointValue>,
    pub skipped: Vec<SkippedPoint>,
}

impl BatchOutcome {
    pub fn mean(&self) -> Option<f64> {
        mean_std(self.values.iter().map(|p| p.value)).0
    }
}

/// Errors that leave a criterion undefined at one point rather than failing
/// the whole run.
pub fn is_skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::EmptyNeighborhood
            | Error::ZeroVariance
            | Error::ZeroAttribution
            | Error::NonPositiveSelfInformation(_)
            | Error::DegenerateDensity(_)
    )
}

/// Evaluates `f` on every `(input_id, row)` in parallel; results are kept in
/// input order. Skippable errors are recorded, others abort the batch.
pub fn evaluate_points<'a, T, F>(points: &[(usize, &'a [T])], f: F) -> Result<BatchOutcome>
where
    T: Scalar,
    F: Fn(usize, &'a [T]) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = points.par_iter().map(|&(id, x)| f(id, x)).collect();
    let mut out = BatchOutcome::default();
    for (&(input_id, _), r) in points.iter().zip(results) {
        match r {
            Ok(v) => out.values.push(PointValue {
                input_id,
                value: v.f64(),
            }),
            Err(e) if is_skippable(&e) => out.skipped.push(SkippedPoint {
                input_id,
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Writes `contents` to a sibling temp file and renames it over `path`.
pub fn atomic_write(path: impl AsRef<Path>, contents: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// One row of an attribution dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpRow {
    pub input_id: usize,
    pub explainer: String,
    pub seed: u64,
    pub values: Vec<f64>,
}

/// Attribution dump: CSV with columns `input_id,explainer,seed,phi_0..`,
/// preceded by `# provenance:` comment lines carrying JSON blocks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributionDump {
    pub provenance: Vec<Value>,
    pub rows: Vec<DumpRow>,
}

impl AttributionDump {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.values.len())
    }

    pub fn to_text(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for p in &self.provenance {
            out.push_str("# provenance: ");
            out.push_str(&serde_json::to_string(p).expect("provenance serializes"));
            out.push('\n');
        }
        out.push_str("input_id,explainer,seed");
        for i in 0..d {
            out.push_str(&format!(",phi_{i}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{}",
                r.input_id,
                quote(&r.explainer),
                r.seed
            ));
            for v in &r.values {
                out.push(',');
                out.push_str(&fmt_real(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path, self.to_text().as_bytes())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut dump = AttributionDump::default();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# provenance: ") {
                dump.provenance.push(
                    serde_json::from_str(rest)
                        .map_err(|e| Error::Io(format!("bad provenance line: {e}")))?,
                );
            } else if !line.starts_with('#') {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        for (row, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row,
                column: String::new(),
                reason: e.to_string(),
            })?;
            let field = |c: usize| -> Result<&str> {
                rec.get(c).ok_or_else(|| Error::Parse {
                    row,
                    column: column_name(c),
                    reason: "missing field".into(),
                })
            };
            let parse_err = |c: usize, e: &dyn std::fmt::Display| Error::Parse {
                row,
                column: column_name(c),
                reason: e.to_string(),
            };
            let input_id = field(0)?.parse().map_err(|e| parse_err(0, &e))?;
            let explainer = field(1)?.to_string();
            let seed = field(2)?.parse().map_err(|e| parse_err(2, &e))?;
            let values = (3..rec.len())
                .map(|c| field(c)?.parse::<f64>().map_err(|e| parse_err(c, &e)))
                .collect::<Result<Vec<_>>>()?;
            dump.rows.push(DumpRow {
                input_id,
                explainer,
                seed,
                values,
            });
        }
        Ok(dump)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Rows grouped by input id, in ascending id order.
    pub fn by_input(&self) -> BTreeMap<usize, Vec<&DumpRow>> {
        let mut m: BTreeMap<usize, Vec<&DumpRow>> = BTreeMap::new();
        for r in &self.rows {
            m.entry(r.input_id).or_default().push(r);
        }
        m
    }
}

fn column_name(c: usize) -> String {
    match c {
        0 => "input_id".into(),
        1 => "explainer".into(),
        2 => "seed".into(),
        c => format!("phi_{}", c - 3),
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let dump = AttributionDump {
            provenance: vec![serde_json::json!({"members": ["grad", "ig:steps=8"]})],
            rows: vec![
                DumpRow {
                    input_id: 3,
                    explainer: "agg:mean".into(),
                    seed: 7,
                    values: vec![0.1, -1.0 / 3.0],
                },
                DumpRow {
                    input_id: 4,
                    explainer: "x,y".into(),
                    seed: 7,
                    values: vec![1e-300, 2.5],
                },
            ],
        };
        let text = dump.to_text();
        assert_eq!(AttributionDump::from_text(&text).unwrap(), dump);
    }

    #[test]
    fn report_stats() {
        let outcome = BatchOutcome {
            values: vec![
                PointValue {
                    input_id: 0,
                    value: 1.0,
                },
                PointValue {
                    input_id: 1,
                    value: 3.0,
                },
            ],
            skipped: vec![SkippedPoint {
                input_id: 2,
                reason: "empty".into(),
            }],
        };
        let r = CriterionReport::new("c", "e", outcome, Value::Null);
        assert_eq!(
            (r.mean, r.std, r.count, r.skipped),
            (Some(2.0), Some(1.0), 2, 1)
        );
        let back: CriterionReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
