use crate::error::{Error, Result};
use crate::model::{Model, Target};
use crate::scalar::Scalar;

/// Gradient saliency for the predicted class.
pub fn grad<T: Scalar>(model: &Model<T>, x: &[T], target: Target) -> Result<Vec<T>> {
    let class = model.predicted_class(x)?;
    model.input_gradient(x, target, class)
}

/// Elementwise `x * grad`.
pub fn grad_times_input<T: Scalar>(model: &Model<T>, x: &[T], target: Target) -> Result<Vec<T>> {
    Ok(grad(model, x, target)?
        .into_iter()
        .zip(x)
        .map(|(g, &xi)| g * xi)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedGradients<T> {
    pub attribution: Vec<T>,
    /// `|sum(phi) - (target(x) - target(baseline))|`
    pub completeness_residual: T,
}

/// Integrated gradients along the straight path from `baseline` to `x`,
/// midpoint rule with `steps` gradient evaluations.
pub fn integrated_gradients<T: Scalar>(
    model: &Model<T>,
    x: &[T],
    baseline: &[T],
    steps: usize,
    target: Target,
) -> Result<IntegratedGradients<T>> {
    if steps < 2 {
        return Err(Error::InvalidConfig(
            "integrated gradients needs steps >= 2".into(),
        ));
    }
    if baseline.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: baseline.len(),
        });
    }
    let class = model.predicted_class(x)?;
    let delta: Vec<T> = x.iter().zip(baseline).map(|(&a, &b)| a - b).collect();
    let mut avg = vec![T::zero(); x.len()];
    let n = T::of_usize(steps);
    for k in 0..steps {
        let alpha = (T::of_usize(k) + T::of(0.5)) / n;
        let point: Vec<T> = baseline
            .iter()
            .zip(&delta)
            .map(|(&b, &dv)| b + alpha * dv)
            .collect();
        for (a, g) in avg
            .iter_mut()
            .zip(model.input_gradient(&point, target, class)?)
        {
            *a += g;
        }
    }
    let attribution: Vec<T> = avg.iter().zip(&delta).map(|(&a, &dv)| a / n * dv).collect();
    let total: T = attribution.iter().copied().sum();
    let gap =
        model.target_value(x, target, class)? - model.target_value(baseline, target, class)?;
    Ok(IntegratedGradients {
        completeness_residual: (total - gap).abs(),
        attribution,
    })
}
