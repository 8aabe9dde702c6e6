//! Sensitivity, faithfulness and complexity.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::{Baseline, Dataset, NeighborFinder, NeighborhoodSpec};
use crate::error::{Error, Result};
use crate::explain::{unit_normalize, Call, Explainer};
use crate::model::{Model, Target};
use crate::rng::rng_from;
use crate::scalar::{dot, l2_norm, Scalar};

/// Distance `D` between two explanations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExplanationMetric {
    #[default]
    L2,
    L1,
    #[serde(rename = "cos")]
    CosineDistance,
}

impl ExplanationMetric {
    pub fn distance<T: Scalar>(&self, a: &[T], b: &[T]) -> Result<T> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        let diffs = a.iter().zip(b).map(|(&x, &y)| x - y);
        Ok(match self {
            ExplanationMetric::L2 => diffs.map(|v| v * v).sum::<T>().sqrt(),
            ExplanationMetric::L1 => diffs.map(|v| v.abs()).sum(),
            ExplanationMetric::CosineDistance => {
                let (na, nb) = (l2_norm(a), l2_norm(b));
                if na == T::zero() || nb == T::zero() {
                    return Err(Error::ZeroAttribution);
                }
                T::one() - dot(a, b) / (na * nb)
            }
        })
    }
}

impl std::str::FromStr for ExplanationMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "l1" => Ok(Self::L1),
            "cos" | "cosine" | "cosine_distance" => Ok(Self::CosineDistance),
            other => Err(Error::InvalidConfig(format!(
                "unknown explanation metric `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessConfig {
    /// `None` means `max(1, round(d / 4))`.
    pub subset_size: Option<usize>,
    pub num_subsets: usize,
    pub target: Target,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        Self {
            subset_size: None,
            num_subsets: 100,
            target: Target::Logit,
        }
    }
}

impl FaithfulnessConfig {
    pub fn resolved_subset_size(&self, d: usize) -> usize {
        self.subset_size
            .unwrap_or_else(|| ((d as f64 / 4.0).round() as usize).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionConfig {
    pub metric: ExplanationMetric,
    pub neighborhood: NeighborhoodSpec,
    pub faithfulness: FaithfulnessConfig,
    /// Unit-normalize explanations before measuring sensitivity.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        Self {
            metric: ExplanationMetric::L2,
            neighborhood: NeighborhoodSpec::default(),
            faithfulness: FaithfulnessConfig::default(),
            normalize: true,
            seed: 0,
        }
    }
}

impl CriterionConfig {
    pub fn raw(mut self) -> Self {
        self.normalize = false;
        self
    }
}

/// Max and average sensitivity at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity<T> {
    pub max: T,
    pub avg: T,
    pub neighbors: usize,
}

/// Sensitivity evaluation against a fixed reference set. Explanations of
/// reference rows are computed once and reused across query points.
pub struct SensitivityEvaluator<'a, T: Scalar, E: ?Sized> {
    model: &'a Model<T>,
    explainer: &'a E,
    finder: NeighborFinder<'a, T>,
    config: &'a CriterionConfig,
    cache: Mutex<HashMap<usize, Vec<T>>>,
}

impl<'a, T: Scalar, E: Explainer<T> + ?Sized> SensitivityEvaluator<'a, T, E> {
    pub fn new(
        model: &'a Model<T>,
        explainer: &'a E,
        reference: &'a Dataset<T>,
        config: &'a CriterionConfig,
    ) -> Result<Self> {
        config.neighborhood.validate()?;
        let finder = NeighborFinder::new(
            reference,
            config.neighborhood.require_same_prediction.then_some(model),
        )?;
        Ok(Self {
            model,
            explainer,
            finder,
            config,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn prepare(&self, phi: Vec<T>) -> Result<Vec<T>> {
        if self.config.normalize {
            unit_normalize(&phi)
        } else {
            Ok(phi)
        }
    }

    fn reference_explanation(&self, index: usize) -> Result<Vec<T>> {
        if let Some(v) = self.cache.lock().expect("cache lock").get(&index) {
            return Ok(v.clone());
        }
        let data = self.finder.data();
        let raw =
            self.explainer
                .explain(self.model, data.row(index), Call::id(data.ids()[index]))?;
        let v = self.prepare(raw)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(index, v.clone());
        Ok(v)
    }

    /// `(distance in explanation space, distance in input space)` for every
    /// neighbor of `x`.
    pub fn neighbor_terms(&self, x: &[T], call: Call) -> Result<Vec<(T, T)>> {
        let x_class = if self.config.neighborhood.require_same_prediction {
            Some(self.model.predicted_class(x)?)
        } else {
            None
        };
        let neighbors = self.finder.query(x, x_class, &self.config.neighborhood)?;
        if neighbors.is_empty() {
            return Err(Error::EmptyNeighborhood);
        }
        let gx = self.prepare(self.explainer.explain(self.model, x, call)?)?;
        neighbors
            .iter()
            .map(|n| {
                let gz = self.reference_explanation(n.index)?;
                Ok((self.config.metric.distance(&gx, &gz)?, n.distance))
            })
            .collect()
    }

    pub fn evaluate(&self, x: &[T], call: Call) -> Result<Sensitivity<T>> {
        let terms = self.neighbor_terms(x, call)?;
        let max = terms.iter().map(|t| t.0).fold(T::zero(), T::max);
        let avg = terms.iter().map(|&(dg, rho)| dg / rho).sum::<T>() / T::of_usize(terms.len());
        Ok(Sensitivity {
            max,
            avg,
            neighbors: terms.len(),
        })
    }
}

/// Largest explanation distance over the radius neighborhood of `x`.
pub fn max_sensitivity<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    reference: &Dataset<T>,
    x: &[T],
    call: Call,
    config: &CriterionConfig,
) -> Result<T> {
    Ok(
        SensitivityEvaluator::new(model, explainer, reference, config)?
            .evaluate(x, call)?
            .max,
    )
}

/// Mean of `D(g(x), g(z)) / rho(x, z)` over the radius neighborhood of `x`.
pub fn avg_sensitivity<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    reference: &Dataset<T>,
    x: &[T],
    call: Call,
    config: &CriterionConfig,
) -> Result<T> {
    Ok(
        SensitivityEvaluator::new(model, explainer, reference, config)?
            .evaluate(x, call)?
            .avg,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Faithfulness<T> {
    pub value: T,
    pub subsets: Vec<Vec<usize>>,
}

/// Pearson correlation between summed attributions over random feature
/// subsets and the output drop when those features take baseline values.
pub fn faithfulness<T: Scalar, E: Explainer<T> + ?Sized>(
    model: &Model<T>,
    explainer: &E,
    x: &[T],
    call: Call,
    baseline: &Baseline<T>,
    config: &CriterionConfig,
) -> Result<Faithfulness<T>> {
    let phi = explainer.explain(model, x, call)?;
    faithfulness_of(model, &phi, x, call, baseline, config)
}

/// Faithfulness of a precomputed attribution vector.
pub fn faithfulness_of<T: Scalar>(
    model: &Model<T>,
    phi: &[T],
    x: &[T],
    call: Call,
    baseline: &Baseline<T>,
    config: &CriterionConfig,
) -> Result<Faithfulness<T>> {
    let d = x.len();
    let fc = &config.faithfulness;
    let size = fc.resolved_subset_size(d);
    if size == 0 || size > d {
        return Err(Error::InvalidConfig(format!(
            "subset size {size} outside 1..={d}"
        )));
    }
    if fc.num_subsets < 2 {
        return Err(Error::InvalidConfig(
            "faithfulness needs num_subsets >= 2".into(),
        ));
    }
    if phi.len() != d || baseline.values.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if phi.len() != d {
                phi.len()
            } else {
                baseline.values.len()
            },
        });
    }
    let class = model.predicted_class(x)?;
    let full = model.target_value(x, fc.target, class)?;
    let mut rng = rng_from(
        config.seed,
        &[0x6661697468, call.input_id.map_or(u64::MAX, |i| i as u64)],
    );
    let mut sums = Vec::with_capacity(fc.num_subsets);
    let mut drops = Vec::with_capacity(fc.num_subsets);
    let mut subsets = Vec::with_capacity(fc.num_subsets);
    for _ in 0..fc.num_subsets {
        let mut s = sample(&mut rng, d, size).into_vec();
        s.sort_unstable();
        let mut masked = x.to_vec();
        for &i in &s {
            masked[i] = baseline.values[i];
        }
        sums.push(s.iter().map(|&i| phi[i]).sum::<T>());
        drops.push(full - model.target_value(&masked, fc.target, class)?);
        subsets.push(s);
    }
    Ok(Faithfulness {
        value: pearson(&sums, &drops)?,
        subsets,
    })
}

/// Pearson correlation; `ZeroVariance` when either sample is constant.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::ZeroVariance);
    }
    let n = T::of_usize(a.len());
    let ma = a.iter().copied().sum::<T>() / n;
    let mb = b.iter().copied().sum::<T>() / n;
    let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let degenerate = |ss: T, vals: &[T]| {
        let scale = vals.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let floor = T::epsilon() * scale * T::of(16.0);
        ss.sqrt() <= floor * n.sqrt()
    };
    if degenerate(saa, a) || degenerate(sbb, b) {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt()))
        .max(-T::one())
        .min(T::one()))
}

/// Share of total absolute attribution carried by each feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalContribution<T> {
    pub probs: Vec<T>,
}

pub fn fractional_contribution<T: Scalar>(phi: &[T]) -> Result<FractionalContribution<T>> {
    let total: T = phi.iter().map(|v| v.abs()).sum();
    if !total.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    if total == T::zero() {
        return Err(Error::ZeroAttribution);
    }
    Ok(FractionalContribution {
        probs: phi.iter().map(|v| v.abs() / total).collect(),
    })
}

/// Shannon entropy (natural log) of the fractional contribution
/// distribution.
pub fn complexity<T: Scalar>(phi: &[T]) -> Result<T> {
    let p = fractional_contribution(phi)?;
    Ok(entropy(&p.probs))
}

pub(crate) fn entropy<T: Scalar>(probs: &[T]) -> T {
    let h = probs
        .iter()
        .filter(|&&p| p > T::zero())
        .map(|&p| -p * p.ln())
        .sum::<T>();
    h.max(T::zero())
}

/// Partial derivative of [`complexity`] with respect to coordinate `k`.
///
/// With `a_j = |phi_j|`, `A = sum_j a_j` and `p_j = a_j / A`:
/// `dH/da_k = [-(1 + ln p_k)(A - a_k) + sum_{l != k} (1 + ln p_l) a_l] / A^2`,
/// multiplied by `sign(phi_k)`. Undefined (returns `None`) at `phi_k = 0`,
/// where the one-sided derivatives are `-inf` and `+inf`.
pub fn complexity_partial<T: Scalar>(phi: &[T], k: usize) -> Result<Option<T>> {
    let FractionalContribution { probs } = fractional_contribution(phi)?;
    if phi[k] == T::zero() {
        return Ok(None);
    }
    let total: T = phi.iter().map(|v| v.abs()).sum();
    let ak = phi[k].abs();
    let one = T::one();
    let mut acc = -(one + probs[k].ln()) * (total - ak);
    for (l, (&p, v)) in probs.iter().zip(phi).enumerate() {
        if l != k && p > T::zero() {
            acc += (one + p.ln()) * v.abs();
        }
    }
    Ok(Some(phi[k].signum() * acc / (total * total)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complexity_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((complexity(&[-0.5, 0.5]).unwrap() - ln2).abs() < 1e-12);
        assert_eq!(complexity(&[0.0, 0.0, 3.0, 0.0]).unwrap(), 0.0);
        assert!((complexity(&[1.0, -1.0, 1.0, 1.0]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(complexity::<f64>(&[0.0, 0.0]), Err(Error::ZeroAttribution));
    }

    #[test]
    fn fractional_contribution_examples() {
        assert_eq!(
            fractional_contribution(&[1.0, -1.0]).unwrap().probs,
            vec![0.5, 0.5]
        );
        assert_eq!(
            fractional_contribution(&[0.0, 0.0, 7.0]).unwrap().probs,
            vec![0.0, 0.0, 1.0]
        );
        assert_eq!(
            fractional_contribution::<f64>(&[0.0, 0.0]),
            Err(Error::ZeroAttribution)
        );
    }

    #[test]
    fn partial_derivative_matches_finite_differences() {
        let phi = [0.3f64, -1.2, 0.05, 0.8, -0.4];
        for k in 0..phi.len() {
            let h = 1e-6;
            let mut p = phi;
            let mut m = phi;
            p[k] += h;
            m[k] -= h;
            let fd = (complexity(&p).unwrap() - complexity(&m).unwrap()) / (2.0 * h);
            let an = complexity_partial(&phi, k).unwrap().unwrap();
            assert!((fd - an).abs() < 1e-6, "k={k}: {fd} vs {an}");
        }
        assert_eq!(complexity_partial(&[0.0, 1.0], 0).unwrap(), None);
    }

    #[test]
    fn pearson_cases() {
        assert!((pearson(&[1.0f64, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0f64, 2.0, 3.0], &[-2.0, -4.0, -6.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(
            pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(Error::ZeroVariance)
        );
    }

    #[test]
    fn explanation_metrics() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert!((ExplanationMetric::L2.distance(&a, &b).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(ExplanationMetric::L1.distance(&a, &b).unwrap(), 2.0);
        assert_eq!(
            ExplanationMetric::CosineDistance.distance(&a, &b).unwrap(),
            1.0
        );
    }
}
