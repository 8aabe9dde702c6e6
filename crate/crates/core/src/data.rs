//! Labelled tabular data, baselines and the two spatial queries used by the
//! criteria: radius neighborhoods and k-nearest neighbors.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{fmt_real, Model};
use crate::rng::rng_from;
use crate::scalar::{all_finite, Scalar};

/// Smallest distance reported by spatial queries.
pub const DISTANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Row-major feature matrix with integer class labels.
///
/// `ids` carries each row's index in the file it was loaded from, so subsets
/// keep stable input identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    labels: Vec<usize>,
    ids: Vec<usize>,
    feature_names: Vec<String>,
    dim: usize,
    num_classes: usize,
    normalization: Option<Vec<ColumnStats>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn from_rows(rows: Vec<Vec<T>>, labels: Vec<usize>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        let names = (0..dim).map(|j| format!("x{j}")).collect();
        let mut features = Vec::with_capacity(rows.len() * dim);
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            features.extend_from_slice(r);
        }
        Self::from_flat(features, dim, labels, names)
    }

    pub fn from_flat(
        features: Vec<T>,
        dim: usize,
        labels: Vec<usize>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 || features.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        if feature_names.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: feature_names.len(),
            });
        }
        if !all_finite(&features) {
            return Err(Error::NonFiniteInput);
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            ids: (0..labels.len()).collect(),
            features,
            labels,
            feature_names,
            dim,
            num_classes,
            normalization: None,
        })
    }

    /// Widens the class count (e.g. to match a model trained on more classes).
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if let Some((row, &label)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= num_classes)
        {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                num_classes,
            });
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn normalization(&self) -> Option<&[ColumnStats]> {
        self.normalization.as_deref()
    }

    /// Rows selected by position, ids and metadata preserved.
    pub fn subset(&self, positions: &[usize]) -> Self {
        let mut features = Vec::with_capacity(positions.len() * self.dim);
        for &p in positions {
            features.extend_from_slice(self.row(p));
        }
        Self {
            features,
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            ids: positions.iter().map(|&p| self.ids[p]).collect(),
            feature_names: self.feature_names.clone(),
            dim: self.dim,
            num_classes: self.num_classes,
            normalization: self.normalization.clone(),
        }
    }

    /// Same labels and ids with every row passed through `f`.
    pub fn map_rows(&self, mut f: impl FnMut(usize, &[T]) -> Vec<T>) -> Result<Self> {
        let mut features = Vec::with_capacity(self.features.len());
        for (i, row) in self.rows().enumerate() {
            let new = f(i, row);
            if new.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: new.len(),
                });
            }
            features.extend(new);
        }
        if !all_finite(&features) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// Seeded shuffle split; returns `(train, test)` positions.
    pub fn split_positions(&self, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut rng_from(seed, &[0x73706c6974]));
        let n_test = ((self.len() as f64) * test_fraction).round() as usize;
        let n_test = n_test.min(self.len().saturating_sub(1));
        let mut test = order[..n_test].to_vec();
        let mut train = order[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        (train, test)
    }

    pub fn train_test_split(&self, test_fraction: f64, seed: u64) -> (Self, Self) {
        let (train, test) = self.split_positions(test_fraction, seed);
        (self.subset(&train), self.subset(&test))
    }

    /// Z-scores every column (sample std, `n - 1`); constant columns keep
    /// std 1 so they map to 0.
    pub fn normalized(&self) -> Self {
        let n = self.len() as f64;
        let stats: Vec<ColumnStats> = (0..self.dim)
            .map(|j| {
                let col = || self.rows().map(move |r| r[j].f64());
                let mean = col().sum::<f64>() / n;
                let var = if self.len() > 1 {
                    col().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                let std = var.sqrt();
                ColumnStats {
                    mean,
                    std: if std > 0.0 { std } else { 1.0 },
                }
            })
            .collect();
        self.apply_stats(stats)
    }

    /// Z-scores with column statistics taken from another dataset.
    pub fn normalized_with(&self, stats: &[ColumnStats]) -> Result<Self> {
        if stats.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: stats.len(),
            });
        }
        Ok(self.apply_stats(stats.to_vec()))
    }

    fn apply_stats(&self, stats: Vec<ColumnStats>) -> Self {
        let mut out = self.clone();
        for row in out.features.chunks_exact_mut(self.dim) {
            for (v, s) in row.iter_mut().zip(&stats) {
                *v = T::of((v.f64() - s.mean) / s.std);
            }
        }
        out.normalization = Some(stats);
        out
    }

    /// Reads a headed CSV; `label_column` names the integer class column.
    pub fn load_csv(path: impl AsRef<Path>, label_column: &str, normalize: bool) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, label_column, normalize)
    }

    pub fn read_csv(
        reader: impl std::io::Read,
        label_column: &str,
        normalize: bool,
    ) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Io(e.to_string()))?
            .iter()
            .map(str::to_owned)
            .collect();
        let label_idx = header
            .iter()
            .position(|h| h == label_column)
            .ok_or_else(|| Error::MissingLabelColumn(label_column.to_owned()))?;
        let names: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != label_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse {
                row,
                column: String::new(),
                reason: e.to_string(),
            })?;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    row,
                    column: String::new(),
                    reason: format!("{} fields, header has {}", rec.len(), header.len()),
                });
            }
            for (j, cell) in rec.iter().enumerate() {
                let parse_err = |reason: String| Error::Parse {
                    row,
                    column: header[j].clone(),
                    reason,
                };
                let v: f64 = cell
                    .parse()
                    .map_err(|_| parse_err(format!("`{cell}` is not a decimal real")))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("`{cell}` is not finite")));
                }
                if j == label_idx {
                    if v < 0.0 || v.fract() != 0.0 {
                        return Err(parse_err(format!("`{cell}` is not a class index")));
                    }
                    labels.push(v as usize);
                } else {
                    features.push(T::of(v));
                }
            }
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let ds = Self::from_flat(features, names.len(), labels, names)?;
        Ok(if normalize { ds.normalized() } else { ds })
    }

    /// Writes features (17 significant digits) followed by a `label` column.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.feature_names.clone();
        header.push("label".into());
        w.write_record(&header)
            .map_err(|e| Error::Io(e.to_string()))?;
        for (row, label) in self.rows().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| fmt_real(v.f64())).collect();
            rec.push(label.to_string());
            w.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        crate::report::atomic_write(path, &bytes)
    }

    pub fn column_means(&self) -> Result<Vec<T>> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = T::of_usize(self.len());
        let mut means = vec![T::zero(); self.dim];
        for row in self.rows() {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        Ok(means.into_iter().map(|m| m / n).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "values")]
pub enum BaselineKind<T> {
    Zero,
    TrainingMean,
    Explicit(Vec<T>),
}

/// Materialized reference input used to "remove" features.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline<T> {
    pub kind: &'static str,
    pub values: Vec<T>,
}

impl<T: Scalar> Baseline<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            kind: "zero",
            values: vec![T::zero(); d],
        }
    }

    pub fn explicit(values: Vec<T>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            kind: "explicit",
            values,
        })
    }
}

pub fn baseline<T: Scalar>(data: &Dataset<T>, kind: &BaselineKind<T>) -> Result<Baseline<T>> {
    match kind {
        BaselineKind::Zero => Ok(Baseline::zeros(data.dim())),
        BaselineKind::TrainingMean => Ok(Baseline {
            kind: "training_mean",
            values: data.column_means()?,
        }),
        BaselineKind::Explicit(v) => {
            if v.len() != data.dim() {
                return Err(Error::DimensionMismatch {
                    expected: data.dim(),
                    got: v.len(),
                });
            }
            Baseline::explicit(v.clone())
        }
    }
}

/// Distance between inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMetric {
    #[default]
    #[serde(rename = "linf")]
    LInf,
    L2,
    L1,
}

impl InputMetric {
    pub fn distance<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        let diffs = a.iter().zip(b).map(|(&x, &y)| (x - y).abs());
        match self {
            InputMetric::LInf => diffs.fold(T::zero(), T::max),
            InputMetric::L2 => diffs.map(|v| v * v).sum::<T>().sqrt(),
            InputMetric::L1 => diffs.sum(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            InputMetric::LInf => "linf",
            InputMetric::L2 => "l2",
            InputMetric::L1 => "l1",
        }
    }
}

impl std::str::FromStr for InputMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linf" | "l_inf" => Ok(Self::LInf),
            "l2" => Ok(Self::L2),
            "l1" => Ok(Self::L1),
            other => Err(Error::InvalidConfig(format!(
                "unknown input metric `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    pub radius: f64,
    pub metric: InputMetric,
    pub require_same_prediction: bool,
}

impl Default for NeighborhoodSpec {
    fn default() -> Self {
        Self {
            radius: 0.3,
            metric: InputMetric::LInf,
            require_same_prediction: true,
        }
    }
}

impl NeighborhoodSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig("radius must be positive".into()));
        }
        Ok(())
    }
}

/// A dataset row found by a spatial query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    /// Position of the row in the queried dataset.
    pub index: usize,
    pub distance: T,
}

fn sort_neighbors<T: Scalar>(v: &mut [Neighbor<T>]) {
    v.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .expect("finite distances")
            .then(a.index.cmp(&b.index))
    });
}

/// Radius queries against a fixed dataset with the model's predictions for
/// every row computed once.
pub struct NeighborFinder<'a, T> {
    data: &'a Dataset<T>,
    classes: Option<Vec<usize>>,
}

impl<'a, T: Scalar> NeighborFinder<'a, T> {
    pub fn new(data: &'a Dataset<T>, model: Option<&Model<T>>) -> Result<Self> {
        let classes = match model {
            Some(m) => Some(
                data.rows()
                    .map(|r| m.predicted_class(r))
                    .collect::<Result<_>>()?,
            ),
            None => None,
        };
        Ok(Self { data, classes })
    }

    pub fn data(&self) -> &'a Dataset<T> {
        self.data
    }

    /// Rows `z` with `rho(x, z) <= r` (and the same predicted class as `x`
    /// when required), exact copies of `x` excluded, nearest first.
    pub fn query(
        &self,
        x: &[T],
        x_class: Option<usize>,
        spec: &NeighborhoodSpec,
    ) -> Result<Vec<Neighbor<T>>> {
        spec.validate()?;
        if x.len() != self.data.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data.dim(),
                got: x.len(),
            });
        }
        let filter = if spec.require_same_prediction {
            match (&self.classes, x_class) {
                (Some(c), Some(xc)) => Some((c, xc)),
                _ => {
                    return Err(Error::InvalidConfig(
                        "same-prediction neighborhoods need a model".into(),
                    ))
                }
            }
        } else {
            None
        };
        let r = T::of(spec.radius);
        let floor = T::of(DISTANCE_FLOOR);
        let mut out: Vec<Neighbor<T>> = self
            .data
            .rows()
            .enumerate()
            .filter(|(i, z)| *z != x && filter.is_none_or(|(c, xc)| c[*i] == xc))
            .filter_map(|(index, z)| {
                let distance = spec.metric.distance(x, z);
                (distance <= r).then_some(Neighbor {
                    index,
                    distance: distance.max(floor),
                })
            })
            .collect();
        sort_neighbors(&mut out);
        Ok(out)
    }
}

pub fn neighborhood<T: Scalar>(
    data: &Dataset<T>,
    model: Option<&Model<T>>,
    x: &[T],
    spec: &NeighborhoodSpec,
) -> Result<Vec<Neighbor<T>>> {
    let x_class = match model {
        Some(m) if spec.require_same_prediction => Some(m.predicted_class(x)?),
        _ => None,
    };
    NeighborFinder::new(data, model.filter(|_| spec.require_same_prediction))?
        .query(x, x_class, spec)
}

/// The `k` rows closest to `x`, exact copies of `x` excluded. Distances are
/// floored at [`DISTANCE_FLOOR`].
pub fn knn<T: Scalar>(
    data: &Dataset<T>,
    x: &[T],
    k: usize,
    metric: InputMetric,
) -> Result<Vec<Neighbor<T>>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if x.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            got: x.len(),
        });
    }
    let floor = T::of(DISTANCE_FLOOR);
    let mut all: Vec<Neighbor<T>> = data
        .rows()
        .enumerate()
        .filter(|(_, z)| *z != x)
        .map(|(index, z)| Neighbor {
            index,
            distance: metric.distance(x, z).max(floor),
        })
        .collect();
    if k > all.len() {
        return Err(Error::KTooLarge {
            k,
            available: all.len(),
        });
    }
    sort_neighbors(&mut all);
    all.truncate(k);
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_headed_csv() {
        let text = "a,b,label\n1,2,0\n3,4,1\n5,6,0\n";
        let ds = Dataset::<f64>::read_csv(text.as_bytes(), "label", false).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.feature_names(), ["a", "b"]);
        assert_eq!(ds.row(1), [3.0, 4.0]);
        assert_eq!(ds.labels(), [0, 1, 0]);
    }

    #[test]
    fn csv_errors() {
        let bad = "a,b,label\n1,abc,0\n";
        match Dataset::<f64>::read_csv(bad.as_bytes(), "label", false) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 0);
                assert_eq!(column, "b");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            Dataset::<f64>::read_csv("a,b\n1,2\n".as_bytes(), "label", false),
            Err(Error::MissingLabelColumn("label".into()))
        );
    }

    #[test]
    fn normalization_stats() {
        let text = "a,b,c,label\n1,10,5,0\n2,30,5,1\n4,20,5,0\n9,0,5,1\n";
        let ds = Dataset::<f64>::read_csv(text.as_bytes(), "label", true).unwrap();
        for j in 0..3 {
            let col: Vec<f64> = ds.rows().map(|r| r[j]).collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-9);
            if j < 2 {
                assert!((var.sqrt() - 1.0).abs() < 1e-9);
            } else {
                assert!(col.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn baselines() {
        let ds = Dataset::from_rows(vec![vec![1.0, 3.0], vec![3.0, 5.0]], vec![0, 1]).unwrap();
        assert_eq!(
            baseline(&ds, &BaselineKind::Zero).unwrap().values,
            vec![0.0, 0.0]
        );
        assert_eq!(
            baseline(&ds, &BaselineKind::TrainingMean).unwrap().values,
            vec![2.0, 4.0]
        );
        assert!(matches!(
            baseline(&ds, &BaselineKind::Explicit(vec![1.0, 2.0, 3.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        let d4 = Dataset::from_rows(vec![vec![1.0; 4]], vec![0]).unwrap();
        assert_eq!(
            baseline(&d4, &BaselineKind::Zero).unwrap().values,
            vec![0.0; 4]
        );
    }

    #[test]
    fn neighborhood_excludes_query_and_far_rows() {
        let ds = Dataset::from_rows(
            vec![vec![0.0, 0.0], vec![0.0, 0.5], vec![0.0, 2.0]],
            vec![0, 0, 0],
        )
        .unwrap();
        let spec = NeighborhoodSpec {
            radius: 1.0,
            metric: InputMetric::LInf,
            require_same_prediction: false,
        };
        let n = neighborhood(&ds, None, &[0.0, 0.0], &spec).unwrap();
        assert_eq!(
            n,
            vec![Neighbor {
                index: 1,
                distance: 0.5
            }]
        );
        let tiny = NeighborhoodSpec {
            radius: 0.1,
            ..spec
        };
        assert!(neighborhood(&ds, None, &[0.0, 0.0], &tiny)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn knn_basic() {
        let ds = Dataset::from_rows(vec![vec![0.0], vec![10.0]], vec![0, 1]).unwrap();
        let n = knn(&ds, &[1.0], 1, InputMetric::LInf).unwrap();
        assert_eq!(
            n,
            vec![Neighbor {
                index: 0,
                distance: 1.0
            }]
        );
        let all = knn(&ds, &[1.0], 2, InputMetric::LInf).unwrap();
        assert_eq!(all.iter().map(|n| n.index).collect::<Vec<_>>(), [0, 1]);
        assert_eq!(
            knn(&ds, &[0.0], 2, InputMetric::LInf),
            Err(Error::KTooLarge { k: 2, available: 1 })
        );
    }

    #[test]
    fn metrics() {
        let a = [0.0, 0.0];
        let b = [3.0, -4.0];
        assert_eq!(InputMetric::LInf.distance(&a, &b), 4.0);
        assert_eq!(InputMetric::L2.distance(&a, &b), 5.0);
        assert_eq!(InputMetric::L1.distance(&a, &b), 7.0);
    }
}
