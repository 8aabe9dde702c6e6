//! Explanation functions mapping `(model, input)` to a per-feature
//! attribution vector.

mod game;
mod gradient;
mod shapley;

pub use game::{CharacteristicGame, Game, TableGame, WeightedSumGame};
pub use gradient::{grad, grad_times_input, integrated_gradients, IntegratedGradients};
pub use shapley::{
    exact_shapley, shapley_sampling, shapley_wls, CoalitionBudget, EXACT_SHAPLEY_MAX_DIM,
    FULL_ENUMERATION_MAX_DIM,
};

use serde::Serialize;

use crate::data::Baseline;
use crate::error::{Error, Result};
use crate::model::{Model, Target};
use crate::rng::rng_from;
use crate::scalar::{all_finite, l2_norm, Scalar};

/// Attribution scores for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionVector<T> {
    pub values: Vec<T>,
    pub input_id: Option<usize>,
    pub explainer_name: String,
    pub normalized: bool,
}

impl<T: Scalar> AttributionVector<T> {
    pub fn new(
        values: Vec<T>,
        explainer_name: impl Into<String>,
        input_id: Option<usize>,
    ) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            values,
            input_id,
            explainer_name: explainer_name.into(),
            normalized: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn unit_normalize(self) -> Result<Self> {
        Ok(Self {
            values: unit_normalize(&self.values)?,
            normalized: true,
            ..self
        })
    }
}

/// `phi / ||phi||_2`.
pub fn unit_normalize<T: Scalar>(phi: &[T]) -> Result<Vec<T>> {
    if !all_finite(phi) {
        return Err(Error::NonFiniteInput);
    }
    let norm = l2_norm(phi);
    if norm == T::zero() {
        return Err(Error::ZeroAttribution);
    }
    Ok(phi.iter().map(|&v| v / norm).collect())
}

/// Identifies one explainer invocation. Stochastic explainers derive their
/// RNG stream from `(seed, input_id, draw)`; deterministic ones ignore it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Call {
    pub input_id: Option<usize>,
    pub draw: u64,
}

impl Call {
    pub fn id(input_id: usize) -> Self {
        Self {
            input_id: Some(input_id),
            draw: 0,
        }
    }
}

/// An explanation function `g`.
pub trait Explainer<T: Scalar>: Send + Sync {
    fn name(&self) -> String;

    fn explain(&self, model: &Model<T>, x: &[T], call: Call) -> Result<Vec<T>>;

    fn attribute(&self, model: &Model<T>, x: &[T], call: Call) -> Result<AttributionVector<T>> {
        AttributionVector::new(self.explain(model, x, call)?, self.name(), call.input_id)
    }
}

impl<T: Scalar, E: Explainer<T> + ?Sized> Explainer<T> for &E {
    fn name(&self) -> String {
        (**self).name()
    }
    fn explain(&self, model: &Model<T>, x: &[T], call: Call) -> Result<Vec<T>> {
        (**self).explain(model, x, call)
    }
}

impl<T: Scalar, E: Explainer<T> + ?Sized> Explainer<T> for Box<E> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn explain(&self, model: &Model<T>, x: &[T], call: Call) -> Result<Vec<T>> {
        (**self).explain(model, x, call)
    }
}

/// Wraps a closure as an explainer.
pub struct FnExplainer<F> {
    name: String,
    f: F,
}

impl<F> FnExplainer<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            name: name.into(),
            f,
        }
    }
}

impl<T, F> Explainer<T> for FnExplainer<F>
where
    T: Scalar,
    F: Fn(&Model<T>, &[T], Call) -> Result<Vec<T>> + Send + Sync,
{
    fn name(&self) -> String {
        self.name.clone()
    }
    fn explain(&self, model: &Model<T>, x: &[T], call: Call) -> Result<Vec<T>> {
        (self.f)(model, x, call)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ExplainerKind {
    Grad,
    GradTimesInput,
    IntegratedGradients { steps: usize },
    ShapleySampling { permutations: usize },
    ShapleyWls { budget: CoalitionBudget },
    ExactShapley,
}

impl ExplainerKind {
    pub fn is_shapley(&self) -> bool {
        matches!(
            self,
            ExplainerKind::ShapleySampling { .. }
                | ExplainerKind::ShapleyWls { .. }
                | ExplainerKind::ExactShapley
        )
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ExplainerKind::IntegratedGradients { steps } if steps < 2 => Err(Error::InvalidConfig(
                "integrated gradients needs steps >= 2".into(),
            )),
            ExplainerKind::ShapleySampling { permutations: 0 } => Err(Error::InvalidConfig(
                "shapley sampling needs permutations >= 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// A configured built-in explainer. Attributions are taken for the model's
/// predicted class at the explained input.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainerConfig<T> {
    pub kind: ExplainerKind,
    pub baseline: Baseline<T>,
    pub target: Target,
    pub seed: u64,
}

impl<T: Scalar> ExplainerConfig<T> {
    pub fn new(kind: ExplainerKind, baseline: Baseline<T>) -> Self {
        Self {
            kind,
            baseline,
            target: Target::default(),
            seed: 0,
        }
    }

    pub fn with_target(mut self, target: Target) -> Self {
        self.target = target;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Stable string identifying the kind and its parameters.
    pub fn kind_label(&self) -> String {
        match self.kind {
            ExplainerKind::Grad => "grad".into(),
            ExplainerKind::GradTimesInput => "gxi".into(),
            ExplainerKind::IntegratedGradients { steps } => format!("ig:steps={steps}"),
            ExplainerKind::ShapleySampling { permutations } => {
                format!("ss:permutations={permutations}")
            }
            ExplainerKind::ShapleyWls { budget } => format!("shap:budget={budget}"),
            ExplainerKind::ExactShapley => "exact".into(),
        }
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if self.baseline.values.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: self.baseline.values.len(),
            });
        }
        Ok(())
    }
}

impl<T: Scalar> Explainer<T> for ExplainerConfig<T> {
    fn name(&self) -> String {
        self.kind_label()
    }

    fn explain(&self, model: &Model<T>, x: &[T], call: Call) -> Result<Vec<T>> {
        self.kind.validate()?;
        self.check_dim(x)?;
        let baseline = &self.baseline.values;
        match self.kind {
            ExplainerKind::Grad => grad(model, x, self.target),
            ExplainerKind::GradTimesInput => grad_times_input(model, x, self.target),
            ExplainerKind::IntegratedGradients { steps } => {
                Ok(integrated_gradients(model, x, baseline, steps, self.target)?.attribution)
            }
            kind => {
                let game = CharacteristicGame::new(model, x, baseline, self.target)?;
                let labels = [call.input_id.map_or(u64::MAX, |i| i as u64), call.draw];
                let mut rng = rng_from(self.seed, &labels);
                match kind {
                    ExplainerKind::ShapleySampling { permutations } => {
                        shapley_sampling(&game, permutations, &mut rng)
                    }
                    ExplainerKind::ShapleyWls { budget } => shapley_wls(&game, budget, &mut rng),
                    ExplainerKind::ExactShapley => exact_shapley(&game),
                    _ => unreachable!("gradient kinds handled above"),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_normalize_cases() {
        assert_eq!(unit_normalize(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        let u = unit_normalize(&[0.6f64, 0.8]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-12 && (u[1] - 0.8).abs() < 1e-12);
        assert_eq!(unit_normalize(&[0.0, 0.0]), Err(Error::ZeroAttribution));
        let av = AttributionVector::new(vec![3.0, 4.0], "x", None)
            .unwrap()
            .unit_normalize()
            .unwrap();
        assert!(av.normalized);
    }

    #[test]
    fn config_validation() {
        let cfg = ExplainerConfig::new(
            ExplainerKind::IntegratedGradients { steps: 1 },
            Baseline::<f64>::zeros(2),
        );
        let m = Model::linear(1, 2, vec![1.0, 1.0], vec![0.0]).unwrap();
        assert!(matches!(
            cfg.explain(&m, &[1.0, 1.0], Call::default()),
            Err(Error::InvalidConfig(_))
        ));
    }
}
