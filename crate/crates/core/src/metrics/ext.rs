//! Identity, separability, conviction, compatibility, deletion, addition,
//! ROAR and KAR.

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Baseline, Dataset};
use crate::error::{Error, Result};
use crate::explain::{Call, Explainer};
use crate::model::{train, Model, Target, TrainConfig};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;

/// Two coordinates closer than this count as identical.
pub const L0_TOLERANCE: f64 = 1e-12;
/// Probabilities are clamped to `[P, 1 - P]` before taking log-odds.
pub const PROBABILITY_CLAMP: f64 = 1e-7;
pub const MAX_SEPARABILITY_PAIRS: usize = 10_000;
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Relative spread below which a support dimension counts as constant.
const SPREAD_TOLERANCE: f64 = 1e-12;

fn l0_diff<T: Scalar>(a: &[T], b: &[T]) -> usize {
    let tol = T::of(L0_TOLERANCE);
    a.iter()
        .zip(b)
        .filter(|(&x, &y)| (x - y).abs() > tol)
        .count()
}

fn explain_all<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    data: &Dataset<T>,
) -> Result<Vec<Vec<T>>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| explainer.explain(model, data.row(i), Call::id(data.ids()[i])))
        .collect()
}

/// Number of coordinates that differ between draws 0 and 1 on one input.
pub fn identity_at<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    x: &[T],
    input_id: Option<usize>,
) -> Result<usize> {
    let a = explainer.explain(model, x, Call { input_id, draw: 0 })?;
    let b = explainer.explain(model, x, Call { input_id, draw: 1 })?;
    Ok(l0_diff(&a, &b))
}

/// Mean number of coordinates that differ between two calls on the same
/// input with different sampling draws.
pub fn identity_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    data: &Dataset<T>,
) -> Result<T> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let counts = (0..data.len())
        .into_par_iter()
        .map(|i| identity_at(model, explainer, data.row(i), Some(data.ids()[i])))
        .collect::<Result<Vec<usize>>>()?;
    Ok(T::of_usize(counts.iter().sum()) / T::of_usize(counts.len()))
}

/// Unordered index pairs `(i, j)`, `i < j`, at most [`MAX_SEPARABILITY_PAIRS`]
/// of them, drawn without replacement when there are more.
fn pair_indices(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    let decode = |mut p: usize| {
        let mut i = 0;
        while p >= n - 1 - i {
            p -= n - 1 - i;
            i += 1;
        }
        (i, i + 1 + p)
    };
    if total <= MAX_SEPARABILITY_PAIRS {
        return (0..total).map(decode).collect();
    }
    let mut rng = rng_from(seed, &[0x7365_7061]);
    let mut picks = sample(&mut rng, total, MAX_SEPARABILITY_PAIRS).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(decode).collect()
}

/// Mean number of differing coordinates between explanations of distinct
/// inputs.
pub fn separability_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    data: &Dataset<T>,
    seed: u64,
) -> Result<T> {
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewPoints(n));
    }
    let phis = explain_all(model, explainer, data)?;
    let mut sum = 0usize;
    let mut count = 0usize;
    for (i, j) in pair_indices(n, seed) {
        if data.row(i) == data.row(j) {
            continue;
        }
        sum += l0_diff(&phis[i], &phis[j]);
        count += 1;
    }
    if count == 0 {
        return Err(Error::TooFewPoints(1));
    }
    Ok(T::of_usize(sum) / T::of_usize(count))
}

/// Product-kernel Gaussian density over attribution vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimator<T> {
    support: Vec<Vec<T>>,
    bandwidth: Vec<T>,
    class_filter: Option<usize>,
    mean_support_information: T,
}

impl<T: Scalar> DensityEstimator<T> {
    /// Per-dimension bandwidth `sigma_j * (4 / ((d + 2) n))^(1 / (d + 4))`.
    /// A dimension with no spread uses `sigma_j = 1`.
    pub fn fit(support: Vec<Vec<T>>) -> Result<Self> {
        let n = support.len();
        if n < 2 {
            return Err(Error::DegenerateDensity(format!("{n} support point(s)")));
        }
        let d = support[0].len();
        let factor = (4.0 / ((d + 2) as f64 * n as f64)).powf(1.0 / (d as f64 + 4.0));
        let bandwidth = (0..d)
            .map(|j| {
                let mean = support.iter().map(|s| s[j].f64()).sum::<f64>() / n as f64;
                let var = support
                    .iter()
                    .map(|s| (s[j].f64() - mean).powi(2))
                    .sum::<f64>()
                    / (n - 1) as f64;
                let sigma = var.sqrt();
                let sigma = if sigma > SPREAD_TOLERANCE * mean.abs().max(1.0) {
                    sigma
                } else {
                    1.0
                };
                T::of(sigma * factor)
            })
            .collect();
        Self::with_bandwidth(support, bandwidth)
    }

    pub fn with_bandwidth(support: Vec<Vec<T>>, bandwidth: Vec<T>) -> Result<Self> {
        if support.len() < 2 {
            return Err(Error::DegenerateDensity(format!(
                "{} support point(s)",
                support.len()
            )));
        }
        let d = bandwidth.len();
        if let Some(bad) = support.iter().find(|s| s.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        if bandwidth.iter().any(|&h| !(h > T::zero() && h.is_finite())) {
            return Err(Error::DegenerateDensity(
                "bandwidth must be positive".into(),
            ));
        }
        let mut est = Self {
            support,
            bandwidth,
            class_filter: None,
            mean_support_information: T::zero(),
        };
        let total: T = est.support.iter().map(|s| est.self_information(s)).sum();
        est.mean_support_information = total / T::of_usize(est.support.len());
        Ok(est)
    }

    /// Fits on the explanations of `data`, restricted to rows whose
    /// predicted class equals `class` when given.
    pub fn fit_explanations<E: Explainer<T> + ?Sized>(
        model: &Model<T>,
        explainer: &E,
        data: &Dataset<T>,
        class: Option<usize>,
    ) -> Result<Self> {
        let keep: Vec<usize> = match class {
            Some(c) => (0..data.len())
                .filter_map(|i| match model.predicted_class(data.row(i)) {
                    Ok(p) if p == c => Some(Ok(i)),
                    Ok(_) => None,
                    Err(e) => Some(Err(e)),
                })
                .collect::<Result<_>>()?,
            None => (0..data.len()).collect(),
        };
        let support = explain_all(model, explainer, &data.subset(&keep))?;
        let mut est = Self::fit(support)?;
        est.class_filter = class;
        Ok(est)
    }

    pub fn support(&self) -> &[Vec<T>] {
        &self.support
    }

    pub fn bandwidth(&self) -> &[T] {
        &self.bandwidth
    }

    pub fn class_filter(&self) -> Option<usize> {
        self.class_filter
    }

    pub fn mean_support_information(&self) -> T {
        self.mean_support_information
    }

    /// Density at `q`, floored at [`DENSITY_FLOOR`].
    pub fn density(&self, q: &[T]) -> T {
        T::of(self.density_f64(q))
    }

    fn density_f64(&self, q: &[T]) -> f64 {
        let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let log_norm: f64 = self
            .bandwidth
            .iter()
            .map(|h| h.f64().ln() + half_log_2pi)
            .sum();
        let logs: Vec<f64> = self
            .support
            .iter()
            .map(|s| {
                let quad: f64 = q
                    .iter()
                    .zip(s)
                    .zip(&self.bandwidth)
                    .map(|((&a, &b), &h)| ((a - b) / h).f64().powi(2))
                    .sum();
                -0.5 * quad - log_norm
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        let p = (lse - (self.support.len() as f64).ln()).exp();
        p.max(DENSITY_FLOOR)
    }

    pub fn self_information(&self, q: &[T]) -> T {
        T::of(-self.density_f64(q).ln())
    }

    /// Mean self-information of the support divided by that of `phi`.
    pub fn conviction(&self, phi: &[T]) -> Result<T> {
        if phi.len() != self.bandwidth.len() {
            return Err(Error::DimensionMismatch {
                expected: self.bandwidth.len(),
                got: phi.len(),
            });
        }
        let info = self.self_information(phi);
        if info <= T::zero() {
            return Err(Error::NonPositiveSelfInformation(info.f64()));
        }
        Ok(self.mean_support_information / info)
    }
}

pub fn conviction_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    x: &[T],
    call: Call,
    density: &DensityEstimator<T>,
) -> Result<T> {
    density.conviction(&explainer.explain(model, x, call)?)
}

/// Conviction against a density fitted only on explanations of training
/// rows that share the predicted class of `x`.
pub fn conditional_conviction_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    x: &[T],
    call: Call,
    training: &Dataset<T>,
) -> Result<T> {
    let class = model.predicted_class(x)?;
    let density = DensityEstimator::fit_explanations(model, explainer, training, Some(class))?;
    conviction_score(model, explainer, x, call, &density)
}

/// `|sum(phi) - f(x)|` at one input, `f(x)` the `target` value of the
/// predicted class.
pub fn compatibility_at<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    x: &[T],
    call: Call,
    target: Target,
) -> Result<T> {
    let phi = explainer.explain(model, x, call)?;
    let f = model.target_value(x, target, model.predicted_class(x)?)?;
    Ok((phi.iter().copied().sum::<T>() - f).abs())
}

/// Mean of [`compatibility_at`] over `data`.
pub fn compatibility_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    data: &Dataset<T>,
    target: Target,
) -> Result<T> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let residuals = (0..data.len())
        .into_par_iter()
        .map(|i| {
            compatibility_at(
                model,
                explainer,
                data.row(i),
                Call::id(data.ids()[i]),
                target,
            )
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(residuals.iter().copied().sum::<T>() / T::of_usize(residuals.len()))
}

/// `ln p - ln(1 - p)` with `p` clamped to `[1e-7, 1 - 1e-7]`.
pub fn log_odds<T: Scalar>(p: T) -> T {
    let lo = T::of(PROBABILITY_CLAMP);
    let p = p.max(lo).min(T::one() - lo);
    p.ln() - (T::one() - p).ln()
}

/// Log-odds of class `y` at `x`.
pub fn class_log_odds<T: Scalar>(model: &Model<T>, x: &[T], y: usize) -> Result<T> {
    Ok(log_odds(model.predict_proba(x)?[y]))
}

/// Indices of the `k` largest `|phi_i|`, most important first; ties go to
/// the lower index.
pub fn top_k_features<T: Scalar>(phi: &[T], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..phi.len()).collect();
    idx.sort_by(|&a, &b| {
        phi[b]
            .abs()
            .partial_cmp(&phi[a].abs())
            .expect("finite attribution")
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// `x` with the coordinates in `subset` replaced by baseline values.
pub fn replace_features<T: Scalar>(x: &[T], subset: &[usize], baseline: &[T]) -> Vec<T> {
    let mut out = x.to_vec();
    for &i in subset {
        out[i] = baseline[i];
    }
    out
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(Error::InvalidConfig(format!("k = {k} outside 1..={d}")));
    }
    Ok(())
}

/// `s(y|x) - s(y|x with x_S -> baseline_S)`, `y` the predicted class at `x`.
pub fn deletion_for_subset<T: Scalar>(
    model: &Model<T>,
    x: &[T],
    subset: &[usize],
    baseline: &Baseline<T>,
) -> Result<T> {
    let y = model.predicted_class(x)?;
    let removed = replace_features(x, subset, &baseline.values);
    Ok(class_log_odds(model, x, y)? - class_log_odds(model, &removed, y)?)
}

/// `s(y|x with x_S -> baseline_S) - s(y|baseline)`, `y` the predicted class
/// at `x`.
///
/// The accompanying description speaks of adding the subset to the
/// baseline, which would be `s(y|baseline with baseline_S -> x_S)`; this
/// follows the formula as written.
pub fn addition_for_subset<T: Scalar>(
    model: &Model<T>,
    x: &[T],
    subset: &[usize],
    baseline: &Baseline<T>,
) -> Result<T> {
    let y = model.predicted_class(x)?;
    let removed = replace_features(x, subset, &baseline.values);
    Ok(class_log_odds(model, &removed, y)? - class_log_odds(model, &baseline.values, y)?)
}

pub fn deletion_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    x: &[T],
    call: Call,
    k: usize,
    baseline: &Baseline<T>,
) -> Result<T> {
    check_k(k, x.len())?;
    let phi = explainer.explain(model, x, call)?;
    deletion_for_subset(model, x, &top_k_features(&phi, k), baseline)
}

pub fn addition_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    x: &[T],
    call: Call,
    k: usize,
    baseline: &Baseline<T>,
) -> Result<T> {
    check_k(k, x.len())?;
    let phi = explainer.explain(model, x, call)?;
    addition_for_subset(model, x, &top_k_features(&phi, k), baseline)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub eval_fraction: f64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            seeds: (0..5).collect(),
            eval_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub original_accuracy: f64,
    pub retrained_accuracy: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub mode: String,
    pub k: usize,
    /// Mean of the per-seed scores.
    pub score: f64,
    pub per_seed: Vec<SeedResult>,
}

/// Which features are replaced for each point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainMode {
    /// Remove the `k` most important features.
    Roar,
    /// Keep the `k` most important features, remove the rest.
    Kar,
}

impl RetrainMode {
    fn name(self) -> &'static str {
        match self {
            RetrainMode::Roar => "roar",
            RetrainMode::Kar => "kar",
        }
    }
}

pub fn roar_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    data: &Dataset<T>,
    k: usize,
    baseline: &Baseline<T>,
    retrain: &RetrainConfig,
) -> Result<RetrainReport> {
    remove_and_retrain(
        model,
        explainer,
        data,
        k,
        baseline,
        retrain,
        RetrainMode::Roar,
    )
}

pub fn kar_score<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    data: &Dataset<T>,
    k: usize,
    baseline: &Baseline<T>,
    retrain: &RetrainConfig,
) -> Result<RetrainReport> {
    remove_and_retrain(
        model,
        explainer,
        data,
        k,
        baseline,
        retrain,
        RetrainMode::Kar,
    )
}

/// Replaces features on every row according to `mode`, retrains once per
/// seed on a seeded train split and reports the eval-split accuracy drop
/// `mean(1[f(x) = y]) - mean(1[f_r(x_mod) = y])`.
pub fn remove_and_retrain<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    data: &Dataset<T>,
    k: usize,
    baseline: &Baseline<T>,
    retrain: &RetrainConfig,
    mode: RetrainMode,
) -> Result<RetrainReport> {
    let d = data.dim();
    match mode {
        RetrainMode::Roar if k == 0 || k >= d => {
            return Err(Error::InvalidConfig(format!(
                "roar needs 1 <= k < d, got k = {k}, d = {d}"
            )))
        }
        RetrainMode::Kar if k > d => {
            return Err(Error::InvalidConfig(format!(
                "kar needs k <= d, got k = {k}, d = {d}"
            )))
        }
        _ => {}
    }
    if baseline.values.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: baseline.values.len(),
        });
    }
    if retrain.seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one retrain seed is required".into(),
        ));
    }
    if !(retrain.eval_fraction > 0.0 && retrain.eval_fraction < 1.0) {
        return Err(Error::InvalidConfig(
            "eval_fraction must lie in (0, 1)".into(),
        ));
    }
    let phis = explain_all(model, explainer, data)?;
    let removed: Vec<Vec<usize>> = phis
        .iter()
        .map(|phi| match mode {
            RetrainMode::Roar => top_k_features(phi, k),
            RetrainMode::Kar => {
                let keep = top_k_features(phi, k);
                (0..d).filter(|i| !keep.contains(i)).collect()
            }
        })
        .collect();
    let modified = data.map_rows(|i, x| replace_features(x, &removed[i], &baseline.values))?;

    let per_seed = retrain
        .seeds
        .par_iter()
        .map(|&seed| {
            let (train_pos, eval_pos) = data.split_positions(retrain.eval_fraction, seed);
            if train_pos.is_empty() || eval_pos.is_empty() {
                return Err(Error::TooFewPoints(data.len()));
            }
            let config = TrainConfig {
                seed: derive_seed(retrain.train.seed, &[seed]),
                ..retrain.train.clone()
            };
            let retrained = train(&modified.subset(&train_pos), &config)?.model;
            let mut original_hits = 0usize;
            let mut retrained_hits = 0usize;
            for &i in &eval_pos {
                let y = data.labels()[i];
                original_hits += usize::from(model.predicted_class(data.row(i))? == y);
                retrained_hits += usize::from(retrained.predicted_class(modified.row(i))? == y);
            }
            let n = eval_pos.len() as f64;
            let (original_accuracy, retrained_accuracy) =
                (original_hits as f64 / n, retrained_hits as f64 / n);
            Ok(SeedResult {
                seed,
                original_accuracy,
                retrained_accuracy,
                score: original_accuracy - retrained_accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let score = per_seed.iter().map(|s| s.score).sum::<f64>() / per_seed.len() as f64;
    Ok(RetrainReport {
        mode: mode.name().into(),
        k,
        score,
        per_seed,
    })
}
