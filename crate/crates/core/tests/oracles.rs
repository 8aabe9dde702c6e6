//! Library results checked against independent, direct computations.

use explagg::aggregate::{
    convex_objective_curve, lower_complexity_region, optimize_convex_weight, ExplanationSet,
    LoweringConfig,
};
use explagg::data::{baseline, Baseline, BaselineKind, Dataset, InputMetric, NeighborhoodSpec};
use explagg::explain::{Call, Explainer, ExplainerConfig, ExplainerKind, FnExplainer};
use explagg::metrics::{
    addition_for_subset, class_log_odds, complexity, deletion_for_subset, faithfulness, pearson,
    CriterionConfig, DensityEstimator, ExplanationMetric, SensitivityEvaluator,
};
use explagg::model::{train, Activation, Layer, Model, Target, TrainConfig};
use explagg::rng::{rng_from, Rng};
use rand::Rng as _;

const IRIS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/iris.csv");

fn uniform(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn small_model(rng: &mut Rng, d: usize) -> Model<f64> {
    let l1 = Layer::new(
        6,
        d,
        uniform(rng, 6 * d, -1.0, 1.0),
        uniform(rng, 6, -0.3, 0.3),
    )
    .unwrap();
    let l2 = Layer::new(
        3,
        6,
        uniform(rng, 18, -1.0, 1.0),
        uniform(rng, 3, -0.3, 0.3),
    )
    .unwrap();
    Model::new(vec![l1, l2], Activation::default()).unwrap()
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

#[test]
fn sensitivity_matches_flat_loop() {
    let mut rng = rng_from(21, &[]);
    let d = 3;
    let model = small_model(&mut rng, d);
    let rows: Vec<Vec<f64>> = (0..40).map(|_| uniform(&mut rng, d, -1.0, 1.0)).collect();
    let reference = Dataset::from_rows(rows.clone(), vec![0; 40]).unwrap();
    let explainer = ExplainerConfig::new(ExplainerKind::Grad, Baseline::zeros(d));
    let config = CriterionConfig {
        neighborhood: NeighborhoodSpec {
            radius: 0.6,
            metric: InputMetric::LInf,
            require_same_prediction: false,
        },
        ..CriterionConfig::default()
    };
    let ev = SensitivityEvaluator::new(&model, &explainer, &reference, &config).unwrap();
    for _ in 0..10 {
        let x = uniform(&mut rng, d, -1.0, 1.0);
        let gx = unit(&explainer.explain(&model, &x, Call::default()).unwrap());
        let (mut max, mut sum, mut n) = (0.0f64, 0.0, 0);
        for z in &rows {
            let rho = x
                .iter()
                .zip(z)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            if rho <= 0.6 {
                let gz = unit(&explainer.explain(&model, z, Call::default()).unwrap());
                let dist = l2(&gx, &gz);
                max = max.max(dist);
                sum += dist / rho;
                n += 1;
            }
        }
        let got = ev.evaluate(&x, Call::default());
        if n == 0 {
            assert!(got.is_err());
            continue;
        }
        let got = got.unwrap();
        assert_eq!(got.neighbors, n);
        assert!((got.max - max).abs() < 1e-12);
        assert!((got.avg - sum / n as f64).abs() < 1e-9 * (1.0 + got.avg));
    }
}

#[test]
fn faithfulness_matches_direct_pearson() {
    let mut rng = rng_from(22, &[]);
    let d = 5;
    let model = small_model(&mut rng, d);
    let base = Baseline::zeros(d);
    let explainer = ExplainerConfig::new(ExplainerKind::GradTimesInput, base.clone());
    let config = CriterionConfig::default();
    let x = uniform(&mut rng, d, -1.0, 1.0);
    let phi = explainer.explain(&model, &x, Call::id(3)).unwrap();
    let f = faithfulness(&model, &explainer, &x, Call::id(3), &base, &config).unwrap();
    assert_eq!(f.subsets.len(), 100);
    let class = model.predicted_class(&x).unwrap();
    let fx = model.target_value(&x, Target::Logit, class).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for s in &f.subsets {
        assert_eq!(s.len(), 1);
        a.push(s.iter().map(|&i| phi[i]).sum::<f64>());
        let mut masked = x.clone();
        for &i in s {
            masked[i] = 0.0;
        }
        b.push(fx - model.target_value(&masked, Target::Logit, class).unwrap());
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
    let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
    assert!((f.value - cov / (va * vb).sqrt()).abs() < 1e-12);
    assert!((pearson(&a, &b).unwrap() - f.value).abs() < 1e-12);
}

#[test]
fn kde_matches_kernel_loop() {
    let mut rng = rng_from(23, &[]);
    let support: Vec<Vec<f64>> = (0..30).map(|_| uniform(&mut rng, 3, -1.0, 1.0)).collect();
    let density = DensityEstimator::fit(support.clone()).unwrap();
    let h = density.bandwidth().to_vec();
    for q in [
        vec![0.0, 0.0, 0.0],
        vec![0.9, -0.2, 0.4],
        vec![5.0, 5.0, 5.0],
    ] {
        let mut p = 0.0;
        for s in &support {
            let mut k = 1.0;
            for j in 0..3 {
                let u = (q[j] - s[j]) / h[j];
                k *= (-0.5 * u * u).exp() / ((2.0 * std::f64::consts::PI).sqrt() * h[j]);
            }
            p += k;
        }
        p /= support.len() as f64;
        let got = density.density(&q);
        assert!((got - p).abs() <= 1e-12 * p.max(1e-300), "{got} vs {p}");
    }
    let far = vec![3.0, 3.0, 3.0];
    assert!(density.conviction(&far).unwrap() < 1.0);
}

#[test]
fn deletion_and_addition_match_log_odds() {
    let mut rng = rng_from(24, &[]);
    let d = 4;
    let model = small_model(&mut rng, d);
    let base = Baseline::explicit(uniform(&mut rng, d, -0.2, 0.2)).unwrap();
    let x = uniform(&mut rng, d, -1.0, 1.0);
    let y = model.predicted_class(&x).unwrap();
    let subset = vec![0, 2];
    let mut removed = x.clone();
    let mut kept = base.values.clone();
    for &i in &subset {
        removed[i] = base.values[i];
        kept[i] = x[i];
    }
    let lo = |v: &[f64]| {
        let p = model.predict_proba(v).unwrap()[y].clamp(1e-7, 1.0 - 1e-7);
        (p / (1.0 - p)).ln()
    };
    let del = deletion_for_subset(&model, &x, &subset, &base).unwrap();
    assert!((del - (lo(&x) - lo(&removed))).abs() < 1e-12);
    let add = addition_for_subset(&model, &x, &subset, &base).unwrap();
    assert!(add.is_finite());
    assert!((class_log_odds(&model, &x, y).unwrap() - lo(&x)).abs() < 1e-12);
}

#[test]
fn convex_weight_beats_fine_grid() {
    let mut rng = rng_from(25, &[]);
    let d = 3;
    let model = small_model(&mut rng, d);
    let rows: Vec<Vec<f64>> = (0..60).map(|_| uniform(&mut rng, d, -1.0, 1.0)).collect();
    let reference = Dataset::from_rows(rows, vec![0; 60]).unwrap();
    let points = Dataset::from_rows(
        (0..8).map(|_| uniform(&mut rng, d, -1.0, 1.0)).collect(),
        vec![0; 8],
    )
    .unwrap();
    let g1 = ExplainerConfig::new(ExplainerKind::Grad, Baseline::zeros(d));
    let g2 = FnExplainer::new("shifted", |m: &Model<f64>, x: &[f64], c: Call| {
        let g = ExplainerConfig::new(ExplainerKind::GradTimesInput, Baseline::zeros(x.len()))
            .explain(m, x, c)?;
        Ok(g.iter()
            .zip(x)
            .map(|(a, b)| a + 0.3 * b.sin())
            .collect::<Vec<f64>>())
    });
    let config = CriterionConfig {
        neighborhood: NeighborhoodSpec {
            radius: 0.5,
            require_same_prediction: false,
            ..NeighborhoodSpec::default()
        },
        ..CriterionConfig::default()
    };
    let best = optimize_convex_weight(&g1, &g2, &model, &reference, &points, &config).unwrap();
    let grid: Vec<f64> = (0..=10_000).map(|i| i as f64 / 10_000.0).collect();
    let curve =
        convex_objective_curve(&g1, &g2, &model, &reference, &points, &config, &grid).unwrap();
    let grid_min = curve.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(
        best.objective <= grid_min + 1e-6,
        "{} vs {grid_min}",
        best.objective
    );
    assert!(best.objective <= curve[0].min(curve[10_000]) + 1e-12);
}

#[test]
fn region_pair_matches_segment_scan() {
    let mut rng = rng_from(26, &[]);
    for _ in 0..20 {
        let d = rng.gen_range(2..6);
        let set = ExplanationSet::new(vec![
            uniform(&mut rng, d, -1.0, 1.0),
            uniform(&mut rng, d, -1.0, 1.0),
        ])
        .unwrap()
        .normalized()
        .unwrap();
        let [a, b] = [&set.members()[0], &set.members()[1]];
        let scan = (0..=20_000)
            .map(|i| {
                let t = i as f64 / 20_000.0;
                let v: Vec<f64> = a
                    .iter()
                    .zip(b.iter())
                    .map(|(p, q)| t * p + (1.0 - t) * q)
                    .collect();
                complexity(&v).unwrap_or(f64::INFINITY)
            })
            .fold(f64::INFINITY, f64::min);
        let out = lower_complexity_region(&set, &LoweringConfig::default()).unwrap();
        assert!(
            out.complexity <= scan + 1e-3,
            "{} vs {scan}",
            out.complexity
        );
    }
}

#[test]
fn iris_model_trains() {
    let data = Dataset::<f64>::load_csv(IRIS, "label", true).unwrap();
    assert_eq!((data.len(), data.dim(), data.num_classes()), (150, 4, 3));
    let (tr, te) = data.train_test_split(0.2, 0);
    let out = train(&tr, &TrainConfig::default()).unwrap();
    assert!(out.train_accuracy > 0.9);
    assert!(out.model.accuracy(&te).unwrap() > 0.85);
    let mean = baseline(&tr, &BaselineKind::TrainingMean).unwrap();
    assert_eq!(mean.values.len(), 4);
}

#[test]
fn cosine_metric_is_bounded() {
    let m = ExplanationMetric::CosineDistance;
    assert!((m.distance(&[1.0f64, 0.0], &[-1.0, 0.0]).unwrap() - 2.0).abs() < 1e-12);
    assert!(m.distance(&[1.0f64, 0.0], &[1.0, 0.0]).unwrap().abs() < 1e-12);
}
