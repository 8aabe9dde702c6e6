//! Aggregate valuation of antecedents: a test point is explained by the
//! inverse-distance-weighted Shapley explanations of its nearest training
//! neighbors.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{knn, Dataset, InputMetric};
use crate::error::{Error, Result};
use crate::explain::{exact_shapley, Call, Explainer, ExplainerConfig, Game, WeightedSumGame};
use crate::model::Model;
use crate::scalar::Scalar;

/// Largest player count accepted by [`verify_shapley_linearity`].
pub const LINEARITY_MAX_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AvaConfig<T> {
    pub k: usize,
    pub metric: InputMetric,
    /// Must be one of the Shapley kinds.
    pub backend: ExplainerConfig<T>,
    /// Divide the inverse-distance weights by their sum.
    pub normalize_weights: bool,
    /// Reuse neighbor explanations across queries.
    pub cache: bool,
}

impl<T: Scalar> AvaConfig<T> {
    pub fn new(k: usize, backend: ExplainerConfig<T>) -> Self {
        Self {
            k,
            metric: InputMetric::LInf,
            backend,
            normalize_weights: true,
            cache: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !self.backend.kind.is_shapley() {
            return Err(Error::InvalidConfig(format!(
                "AVA needs a Shapley backend, got `{}`",
                self.backend.kind_label()
            )));
        }
        self.backend.kind.validate()
    }

    fn backend_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.backend.kind_label().hash(&mut h);
        self.backend.target.name().hash(&mut h);
        self.backend.seed.hash(&mut h);
        for v in &self.backend.baseline.values {
            v.f64().to_bits().hash(&mut h);
        }
        h.finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvaNeighbor {
    /// Row position in the reference dataset.
    pub index: usize,
    pub input_id: usize,
    pub distance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvaExplanation<T> {
    pub values: Vec<T>,
    pub neighbors: Vec<AvaNeighbor>,
}

fn model_hash<T: Scalar>(model: &Model<T>) -> u64 {
    let mut h = DefaultHasher::new();
    model.activation().name().hash(&mut h);
    for layer in model.layers() {
        (layer.rows, layer.cols).hash(&mut h);
        for v in layer.weights.iter().chain(&layer.bias) {
            v.f64().to_bits().hash(&mut h);
        }
    }
    h.finish()
}

/// AVA explainer over a fixed reference (training) dataset.
pub struct Ava<'a, T> {
    data: &'a Dataset<T>,
    config: AvaConfig<T>,
    backend_hash: u64,
    cache: Mutex<HashMap<(u64, usize, u64), Vec<T>>>,
}

impl<'a, T: Scalar> Ava<'a, T> {
    pub fn new(data: &'a Dataset<T>, config: AvaConfig<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            data,
            backend_hash: config.backend_hash(),
            config,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &AvaConfig<T> {
        &self.config
    }

    fn neighbor_explanation(
        &self,
        model: &Model<T>,
        model_key: u64,
        index: usize,
    ) -> Result<Vec<T>> {
        let key = (model_key, index, self.backend_hash);
        if self.config.cache {
            if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
                return Ok(v.clone());
            }
        }
        let phi = self.config.backend.explain(
            model,
            self.data.row(index),
            Call::id(self.data.ids()[index]),
        )?;
        if self.config.cache {
            self.cache
                .lock()
                .expect("cache lock")
                .insert(key, phi.clone());
        }
        Ok(phi)
    }

    /// AVA explanation of `x` with the neighbors and weights used.
    pub fn explain_detailed(&self, model: &Model<T>, x: &[T]) -> Result<AvaExplanation<T>> {
        let neighbors = knn(self.data, x, self.config.k, self.config.metric)?;
        let model_key = model_hash(model);
        let phis: Vec<Vec<T>> = neighbors
            .par_iter()
            .map(|n| self.neighbor_explanation(model, model_key, n.index))
            .collect::<Result<_>>()?;
        let inverse: Vec<T> = neighbors.iter().map(|n| T::one() / n.distance).collect();
        let total: T = inverse.iter().copied().sum();
        let weights: Vec<T> = if self.config.normalize_weights {
            inverse.iter().map(|&w| w / total).collect()
        } else {
            inverse
        };
        let mut values = vec![T::zero(); x.len()];
        for (phi, &w) in phis.iter().zip(&weights) {
            for (v, &p) in values.iter_mut().zip(phi) {
                *v += w * p;
            }
        }
        Ok(AvaExplanation {
            values,
            neighbors: neighbors
                .iter()
                .zip(&weights)
                .map(|(n, w)| AvaNeighbor {
                    index: n.index,
                    input_id: self.data.ids()[n.index],
                    distance: n.distance.f64(),
                    weight: w.f64(),
                })
                .collect(),
        })
    }
}

impl<T: Scalar> Explainer<T> for Ava<'_, T> {
    fn name(&self) -> String {
        format!("ava:k={}", self.config.k)
    }

    fn explain(&self, model: &Model<T>, x: &[T], _call: Call) -> Result<Vec<T>> {
        Ok(self.explain_detailed(model, x)?.values)
    }
}

/// One-shot AVA explanation without a shared cache.
pub fn explain_ava<T: Scalar>(
    model: &Model<T>,
    data: &Dataset<T>,
    x: &[T],
    config: &AvaConfig<T>,
) -> Result<AvaExplanation<T>> {
    Ava::new(data, config.clone())?.explain_detailed(model, x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearityCheck<T> {
    /// Shapley values of the weighted-sum game.
    pub combined: Vec<T>,
    /// Weighted sum of the per-game Shapley values.
    pub sum_of_scaled: Vec<T>,
    pub max_abs_diff: T,
}

/// Compares the Shapley values of `sum_i w_i v_i` with `sum_i w_i phi(v_i)`.
pub fn verify_shapley_linearity<T: Scalar>(
    games: &[&dyn Game<T>],
    weights: &[T],
) -> Result<LinearityCheck<T>> {
    if games.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: games.len(),
            got: weights.len(),
        });
    }
    let Some(first) = games.first() else {
        return Err(Error::InvalidConfig("at least one game is required".into()));
    };
    let d = first.players();
    if d > LINEARITY_MAX_DIM {
        return Err(Error::DimensionTooLarge {
            d,
            limit: LINEARITY_MAX_DIM,
        });
    }
    let parts: Vec<(T, &dyn Game<T>)> =
        weights.iter().copied().zip(games.iter().copied()).collect();
    let combined = exact_shapley(&WeightedSumGame::new(parts)?)?;
    let mut sum_of_scaled = vec![T::zero(); d];
    for (g, &w) in games.iter().zip(weights) {
        for (s, p) in sum_of_scaled.iter_mut().zip(exact_shapley(*g)?) {
            *s += w * p;
        }
    }
    let max_abs_diff = combined
        .iter()
        .zip(&sum_of_scaled)
        .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()));
    Ok(LinearityCheck {
        combined,
        sum_of_scaled,
        max_abs_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Baseline;
    use crate::explain::{ExplainerKind, TableGame};

    fn backend() -> ExplainerConfig<f64> {
        ExplainerConfig::new(ExplainerKind::ExactShapley, Baseline::zeros(2))
    }

    #[test]
    fn rejects_gradient_backend() {
        let cfg = AvaConfig::new(
            1,
            ExplainerConfig::new(ExplainerKind::Grad, Baseline::<f64>::zeros(2)),
        );
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        assert!(matches!(
            AvaConfig::new(0, backend()).validate(),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn weight_arithmetic() {
        // linear model with zero baseline: exact Shapley of row z is w * z
        let model = Model::linear(1, 2, vec![1.0, 1.0], vec![0.0]).unwrap();
        let data = Dataset::from_rows(vec![vec![4.0, 2.0]], vec![0]).unwrap();
        let x = [6.0, 2.0];
        let mut cfg = AvaConfig::new(1, backend().with_target(crate::model::Target::Logit));
        assert_eq!(
            explain_ava(&model, &data, &x, &cfg).unwrap().values,
            vec![4.0, 2.0]
        );
        cfg.normalize_weights = false;
        assert_eq!(
            explain_ava(&model, &data, &x, &cfg).unwrap().values,
            vec![2.0, 1.0]
        );
    }

    #[test]
    fn linearity_single_game() {
        let g = TableGame::new(2, vec![0.0, 1.0, 2.0, 5.0]).unwrap();
        let r = verify_shapley_linearity(&[&g as &dyn Game<f64>], &[1.0]).unwrap();
        assert_eq!(r.max_abs_diff, 0.0);
    }

    #[test]
    fn cache_is_reused() {
        let model = Model::linear(1, 2, vec![1.0, -1.0], vec![0.0]).unwrap();
        let data = Dataset::from_rows(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0]],
            vec![0, 0, 0],
        )
        .unwrap();
        let ava = Ava::new(&data, AvaConfig::new(2, backend())).unwrap();
        let a = ava.explain(&model, &[0.5, 0.5], Call::default()).unwrap();
        assert_eq!(ava.cache.lock().unwrap().len(), 2);
        let b = ava.explain(&model, &[0.5, 0.5], Call::default()).unwrap();
        assert_eq!(a, b);
    }
}
