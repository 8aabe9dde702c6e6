//! Explainer specs of the form `name:key=val,...`.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use explagg::data::Baseline;
use explagg::explain::{Call, CoalitionBudget, Explainer, ExplainerConfig, ExplainerKind};
use explagg::model::{Model, Target};
use explagg::rng::rng_from;
use rand::Rng as _;

/// Explainer built from a spec string.
pub enum CliExplainer {
    Builtin {
        config: ExplainerConfig<f64>,
        name: String,
    },
    /// Same vector everywhere.
    Constant { value: f64, name: String },
    /// Uniform noise in `[-1, 1)`, seeded per input.
    Random { seed: u64, name: String },
}

impl CliExplainer {
    pub fn builtin(&self) -> Option<&ExplainerConfig<f64>> {
        match self {
            CliExplainer::Builtin { config, .. } => Some(config),
            _ => None,
        }
    }

    /// Target whose value the attributions are meant to sum to.
    pub fn target(&self, default: Target) -> Target {
        self.builtin().map_or(default, |c| c.target)
    }
}

impl Explainer<f64> for CliExplainer {
    fn name(&self) -> String {
        match self {
            CliExplainer::Builtin { name, .. }
            | CliExplainer::Constant { name, .. }
            | CliExplainer::Random { name, .. } => name.clone(),
        }
    }

    fn explain(&self, model: &Model<f64>, x: &[f64], call: Call) -> explagg::Result<Vec<f64>> {
        match self {
            CliExplainer::Builtin { config, .. } => config.explain(model, x, call),
            CliExplainer::Constant { value, .. } => Ok(vec![*value; x.len()]),
            CliExplainer::Random { seed, .. } => {
                let id = call.input_id.map_or(u64::MAX, |i| i as u64);
                let mut rng = rng_from(*seed, &[id, call.draw]);
                Ok((0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            }
        }
    }
}

/// Parses one spec. `seed`, `target` and `baseline` are the run defaults;
/// `seed=` and `target=` keys override them per explainer.
pub fn parse_spec(
    spec: &str,
    baseline: &Baseline<f64>,
    default_target: Target,
    seed: u64,
) -> Result<CliExplainer> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut params = BTreeMap::new();
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("explainer `{spec}`: expected key=value, got `{kv}`"))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    let mut take = |key: &str| params.remove(key);
    let seed = match take("seed") {
        Some(s) => s
            .parse()
            .with_context(|| format!("explainer `{spec}`: bad seed"))?,
        None => seed,
    };
    let target_given = take("target");
    let target = match target_given.as_deref() {
        None => default_target,
        Some("logit") => Target::Logit,
        Some("proba") => Target::Proba,
        Some("log_proba") => Target::LogProba,
        Some(t) => bail!("explainer `{spec}`: unknown target `{t}`"),
    };
    let parse_count = |v: Option<String>, key: &str, default: usize| -> Result<usize> {
        match v {
            Some(s) => s
                .parse()
                .with_context(|| format!("explainer `{spec}`: bad {key}")),
            None => Ok(default),
        }
    };
    let kind = match name {
        "grad" => Some(ExplainerKind::Grad),
        "gxi" | "grad_times_input" => Some(ExplainerKind::GradTimesInput),
        "ig" | "integrated_gradients" => Some(ExplainerKind::IntegratedGradients {
            steps: parse_count(take("steps"), "steps", 128)?,
        }),
        "ss" | "shapley_sampling" => Some(ExplainerKind::ShapleySampling {
            permutations: parse_count(take("permutations"), "permutations", 100)?,
        }),
        "shap" | "shapley_wls" => Some(ExplainerKind::ShapleyWls {
            budget: match take("budget") {
                Some(b) => b.parse::<CoalitionBudget>()?,
                None => CoalitionBudget::Auto,
            },
        }),
        "exact" | "exact_shapley" => Some(ExplainerKind::ExactShapley),
        "const" | "random" => None,
        other => bail!("unknown explainer `{other}`"),
    };
    let explainer = match kind {
        Some(kind) => {
            kind.validate()?;
            let config = ExplainerConfig::new(kind, baseline.clone())
                .with_target(target)
                .with_seed(seed);
            let mut label = config.kind_label();
            if target != Target::default() {
                label.push_str(if label.contains(':') { "," } else { ":" });
                label.push_str("target=");
                label.push_str(target.name());
            }
            CliExplainer::Builtin {
                config,
                name: label,
            }
        }
        None if name == "const" => {
            let value = match take("value") {
                Some(v) => v
                    .parse()
                    .with_context(|| format!("explainer `{spec}`: bad value"))?,
                None => 1.0,
            };
            CliExplainer::Constant {
                value,
                name: format!("const:value={value}"),
            }
        }
        None => CliExplainer::Random {
            seed,
            name: format!("random:seed={seed}"),
        },
    };
    if let Some(k) = params.keys().next() {
        bail!("explainer `{spec}`: unknown key `{k}`");
    }
    Ok(explainer)
}

pub fn parse_all(
    specs: &[String],
    baseline: &Baseline<f64>,
    target: Target,
    seed: u64,
) -> Result<Vec<CliExplainer>> {
    let list = specs
        .iter()
        .map(|s| parse_spec(s, baseline, target, seed))
        .collect::<Result<Vec<_>>>()?;
    for (i, a) in list.iter().enumerate() {
        if list[..i].iter().any(|b| b.name() == a.name()) {
            bail!("explainer `{}` requested twice", a.name());
        }
    }
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_parameters() {
        let b = Baseline::zeros(3);
        let e = parse_spec("ig:steps=32", &b, Target::Proba, 0).unwrap();
        assert_eq!(e.name(), "ig:steps=32");
        let e = parse_spec("shap:budget=full,target=logit", &b, Target::Proba, 0).unwrap();
        assert_eq!(e.name(), "shap:budget=full,target=logit");
        assert_eq!(e.builtin().unwrap().target, Target::Logit);
        let e = parse_spec("grad:target=logit", &b, Target::Proba, 0).unwrap();
        assert_eq!(e.name(), "grad:target=logit");
        assert_eq!(
            parse_spec("exact", &b, Target::Proba, 4)
                .unwrap()
                .builtin()
                .unwrap()
                .seed,
            4
        );
    }

    #[test]
    fn rejects_bad_specs() {
        let b = Baseline::zeros(3);
        assert!(parse_spec("nope", &b, Target::Proba, 0).is_err());
        assert!(parse_spec("ig:steps", &b, Target::Proba, 0).is_err());
        assert!(parse_spec("ig:bogus=1", &b, Target::Proba, 0).is_err());
        assert!(parse_spec("ss:permutations=0", &b, Target::Proba, 0).is_err());
        let specs = ["grad".to_string(), "grad".to_string()];
        assert!(parse_all(&specs, &b, Target::Proba, 0).is_err());
    }

    #[test]
    fn random_is_seeded_per_input() {
        let e = parse_spec("random:seed=3", &Baseline::zeros(2), Target::Proba, 0).unwrap();
        let m = Model::linear(1, 2, vec![1.0, 1.0], vec![0.0]).unwrap();
        let a = e.explain(&m, &[0.0, 0.0], Call::id(1)).unwrap();
        assert_eq!(a, e.explain(&m, &[0.0, 0.0], Call::id(1)).unwrap());
        assert_ne!(a, e.explain(&m, &[0.0, 0.0], Call::id(2)).unwrap());
    }
}
