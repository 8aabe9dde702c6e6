//! Combining several explanations of the same input into one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NeighborFinder};
use crate::error::{Error, Result};
use crate::explain::{unit_normalize, AttributionVector, Call, Explainer};
use crate::metrics::{avg_sensitivity, complexity_partial, CriterionConfig, ExplanationMetric};
use crate::model::Model;
use crate::scalar::{all_finite, l2_norm, Scalar};

/// `m` attribution vectors for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationSet<T> {
    members: Vec<Vec<T>>,
    normalized: bool,
}

impl<T: Scalar> ExplanationSet<T> {
    pub fn new(members: Vec<Vec<T>>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::InvalidConfig(
                "an explanation set needs at least one member".into(),
            ));
        };
        let d = first.len();
        for m in &members {
            if m.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: m.len(),
                });
            }
            if !all_finite(m) {
                return Err(Error::NonFiniteInput);
            }
        }
        Ok(Self {
            members,
            normalized: false,
        })
    }

    pub fn from_attributions(members: &[AttributionVector<T>]) -> Result<Self> {
        let mut set = Self::new(members.iter().map(|a| a.values.clone()).collect())?;
        set.normalized = members.iter().all(|a| a.normalized);
        Ok(set)
    }

    /// Unit-normalizes every member.
    pub fn normalized(self) -> Result<Self> {
        let members = self
            .members
            .iter()
            .map(|m| unit_normalize(m))
            .collect::<Result<_>>()?;
        Ok(Self {
            members,
            normalized: true,
        })
    }

    pub fn members(&self) -> &[Vec<T>] {
        &self.members
    }

    pub fn m(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members[0].len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Feature-wise mean.
pub fn aggregate_mean<T: Scalar>(set: &ExplanationSet<T>) -> AttributionVector<T> {
    let m = T::of_usize(set.m());
    let values = (0..set.dim())
        .map(|j| set.members.iter().map(|g| g[j]).sum::<T>() / m)
        .collect();
    agg_vector(values, "agg:mean")
}

/// Feature-wise median; for even `m` the midpoint of the two central values.
pub fn aggregate_median<T: Scalar>(set: &ExplanationSet<T>) -> AttributionVector<T> {
    let m = set.m();
    let values = (0..set.dim())
        .map(|j| {
            let mut col: Vec<T> = set.members.iter().map(|g| g[j]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite members"));
            if m % 2 == 1 {
                col[m / 2]
            } else {
                (col[m / 2 - 1] + col[m / 2]) / T::of(2.0)
            }
        })
        .collect();
    agg_vector(values, "agg:median")
}

fn agg_vector<T>(values: Vec<T>, name: &str) -> AttributionVector<T> {
    AttributionVector {
        values,
        input_id: None,
        explainer_name: name.into(),
        normalized: false,
    }
}

/// `w * g1 + (1 - w) * g2`, optionally unit-normalizing each member first.
/// A zero member is left as is when normalizing.
pub struct ConvexCombination<A, B> {
    pub g1: A,
    pub g2: B,
    pub weight: f64,
    pub normalize_members: bool,
}

fn normalize_or_raw<T: Scalar>(v: Vec<T>) -> Result<Vec<T>> {
    match unit_normalize(&v) {
        Err(Error::ZeroAttribution) => Ok(v),
        other => other,
    }
}

fn combine<T: Scalar>(w: T, a: &[T], b: &[T]) -> Vec<T> {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| w * x + (T::one() - w) * y)
        .collect()
}

impl<T: Scalar, A: Explainer<T>, B: Explainer<T>> Explainer<T> for ConvexCombination<A, B> {
    fn name(&self) -> String {
        format!("agg:convex:w={}", self.weight)
    }

    fn explain(&self, model: &Model<T>, x: &[T], call: Call) -> Result<Vec<T>> {
        let mut a = self.g1.explain(model, x, call)?;
        let mut b = self.g2.explain(model, x, call)?;
        if self.normalize_members {
            a = normalize_or_raw(a)?;
            b = normalize_or_raw(b)?;
        }
        Ok(combine(T::of(self.weight), &a, &b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvexWeightOutcome<T> {
    pub weight: f64,
    pub objective: f64,
    /// Objective at `w = 0` and `w = 1`.
    pub endpoint_objectives: (f64, f64),
    pub is_vertex: bool,
    pub evaluated_points: usize,
    pub skipped_points: usize,
    /// `(input_id, aggregated explanation)` for every evaluated point.
    #[serde(skip)]
    pub explanations: Vec<(usize, Vec<T>)>,
}

/// Member explanations at one point and at each of its neighbors.
struct PointTerms<T> {
    input_id: usize,
    x: (Vec<T>, Vec<T>),
    neighbors: Vec<(Vec<T>, Vec<T>, T)>,
}

const CONVEX_GRID: usize = 101;

/// Searches `w` in `[0, 1]` minimizing the mean average sensitivity over
/// `points` of `w * g1 + (1 - w) * g2`, neighborhoods drawn from
/// `reference`. Grid of 101 weights, then golden-section refinement around
/// the best; ties go to the smaller weight.
pub fn optimize_convex_weight<T, A, B>(
    g1: &A,
    g2: &B,
    model: &Model<T>,
    reference: &Dataset<T>,
    points: &Dataset<T>,
    config: &CriterionConfig,
) -> Result<ConvexWeightOutcome<T>>
where
    T: Scalar,
    A: Explainer<T> + ?Sized,
    B: Explainer<T> + ?Sized,
{
    let terms = convex_terms(g1, g2, model, reference, points, config)?;
    let total = points.len();
    let evaluated = terms.len();
    let objective = |w: f64| convex_objective(&terms, T::of(w), config);

    let mut best_w = 0.0;
    let mut best = f64::INFINITY;
    let mut grid_values = Vec::with_capacity(CONVEX_GRID);
    for i in 0..CONVEX_GRID {
        let w = i as f64 / (CONVEX_GRID - 1) as f64;
        let v = objective(w)?;
        grid_values.push(v);
        if v < best {
            best = v;
            best_w = w;
        }
    }
    let cell = 1.0 / (CONVEX_GRID - 1) as f64;
    let (lo, hi) = ((best_w - cell).max(0.0), (best_w + cell).min(1.0));
    let mut failure = None;
    let (w_ref, v_ref) = golden_section_min(
        |w| {
            objective(w).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::INFINITY
            })
        },
        lo,
        hi,
        1e-10,
        200,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    if v_ref < best {
        best = v_ref;
        best_w = w_ref;
    }
    let explanations = terms
        .iter()
        .map(|t| (t.input_id, combine(T::of(best_w), &t.x.0, &t.x.1)))
        .collect();
    Ok(ConvexWeightOutcome {
        weight: best_w,
        objective: best,
        endpoint_objectives: (grid_values[0], grid_values[CONVEX_GRID - 1]),
        is_vertex: best_w == 0.0 || best_w == 1.0,
        evaluated_points: evaluated,
        skipped_points: total - evaluated,
        explanations,
    })
}

/// Mean average sensitivity of the combination at weight `w`, evaluated on
/// the same points as [`optimize_convex_weight`]. Exposed for grid oracles.
pub fn convex_objective_curve<T, A, B>(
    g1: &A,
    g2: &B,
    model: &Model<T>,
    reference: &Dataset<T>,
    points: &Dataset<T>,
    config: &CriterionConfig,
    weights: &[f64],
) -> Result<Vec<f64>>
where
    T: Scalar,
    A: Explainer<T> + ?Sized,
    B: Explainer<T> + ?Sized,
{
    let terms = convex_terms(g1, g2, model, reference, points, config)?;
    weights
        .iter()
        .map(|&w| convex_objective(&terms, T::of(w), config))
        .collect()
}

fn convex_terms<T, A, B>(
    g1: &A,
    g2: &B,
    model: &Model<T>,
    reference: &Dataset<T>,
    points: &Dataset<T>,
    config: &CriterionConfig,
) -> Result<Vec<PointTerms<T>>>
where
    T: Scalar,
    A: Explainer<T> + ?Sized,
    B: Explainer<T> + ?Sized,
{
    config.neighborhood.validate()?;
    let same = config.neighborhood.require_same_prediction;
    let finder = NeighborFinder::new(reference, same.then_some(model))?;
    let members = |x: &[T], call: Call| -> Result<(Vec<T>, Vec<T>)> {
        let mut a = g1.explain(model, x, call)?;
        let mut b = g2.explain(model, x, call)?;
        if config.normalize {
            a = normalize_or_raw(a)?;
            b = normalize_or_raw(b)?;
        }
        Ok((a, b))
    };
    let reference_members: Vec<(Vec<T>, Vec<T>)> = (0..reference.len())
        .into_par_iter()
        .map(|i| members(reference.row(i), Call::id(reference.ids()[i])))
        .collect::<Result<_>>()?;
    let per_point: Vec<Option<PointTerms<T>>> = (0..points.len())
        .into_par_iter()
        .map(|p| {
            let x = points.row(p);
            let class = if same {
                Some(model.predicted_class(x)?)
            } else {
                None
            };
            let nbrs = finder.query(x, class, &config.neighborhood)?;
            if nbrs.is_empty() {
                return Ok(None);
            }
            let input_id = points.ids()[p];
            Ok(Some(PointTerms {
                input_id,
                x: members(x, Call::id(input_id))?,
                neighbors: nbrs
                    .iter()
                    .map(|n| {
                        let (a, b) = reference_members[n.index].clone();
                        (a, b, n.distance)
                    })
                    .collect(),
            }))
        })
        .collect::<Result<_>>()?;
    let terms: Vec<PointTerms<T>> = per_point.into_iter().flatten().collect();
    if terms.is_empty() {
        return Err(Error::EmptyNeighborhoodEverywhere);
    }
    Ok(terms)
}

fn convex_objective<T: Scalar>(
    terms: &[PointTerms<T>],
    w: T,
    config: &CriterionConfig,
) -> Result<f64> {
    let prep = |v: Vec<T>| {
        if config.normalize {
            normalize_or_raw(v)
        } else {
            Ok(v)
        }
    };
    let mut total = 0.0;
    for t in terms {
        let gx = prep(combine(w, &t.x.0, &t.x.1))?;
        let mut acc = T::zero();
        for (a, b, rho) in &t.neighbors {
            let gz = prep(combine(w, a, b))?;
            acc += sensitivity_distance(config.metric, &gx, &gz)? / *rho;
        }
        total += (acc / T::of_usize(t.neighbors.len())).f64();
    }
    Ok(total / terms.len() as f64)
}

/// Explanation distance where a cosine distance involving a zero vector is
/// taken as 1 (orthogonal) instead of failing.
fn sensitivity_distance<T: Scalar>(metric: ExplanationMetric, a: &[T], b: &[T]) -> Result<T> {
    match metric.distance(a, b) {
        Err(Error::ZeroAttribution) => Ok(T::one()),
        other => other,
    }
}

/// Minimizes `f` on `[lo, hi]` by golden-section search. Returns the best
/// point evaluated.
pub fn golden_section_min(
    mut f: impl FnMut(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
            if fc < best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
            if fd < best.1 {
                best = (d, fd);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvexityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Both sides of `mu_A(w g1 + (1 - w) g2) <= w mu_A(g1) + (1 - w) mu_A(g2)`
/// at `x`, evaluated on raw (un-normalized) explanations with `D = l2`.
#[allow(clippy::too_many_arguments)]
pub fn check_convexity_bound<T, A, B>(
    g1: &A,
    g2: &B,
    w: f64,
    model: &Model<T>,
    reference: &Dataset<T>,
    x: &[T],
    call: Call,
    config: &CriterionConfig,
) -> Result<ConvexityCheck>
where
    T: Scalar,
    A: Explainer<T>,
    B: Explainer<T>,
{
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidConfig(format!("weight {w} outside [0, 1]")));
    }
    if config.metric != ExplanationMetric::L2 {
        return Err(Error::InvalidConfig(
            "the convexity bound is stated for D = l2".into(),
        ));
    }
    let raw = config.clone().raw();
    let combined = ConvexCombination {
        g1,
        g2,
        weight: w,
        normalize_members: false,
    };
    let lhs = avg_sensitivity(model, &combined, reference, x, call, &raw)?.f64();
    let s1 = avg_sensitivity(model, g1, reference, x, call, &raw)?.f64();
    let s2 = avg_sensitivity(model, g2, reference, x, call, &raw)?.f64();
    let rhs = w * s1 + (1.0 - w) * s2;
    Ok(ConvexityCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + BOUND_TOLERANCE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorBound {
    pub eps_agg: f64,
    pub mean_individual_error: f64,
    pub holds: bool,
}

/// Compares the mean-aggregate error against the average member error,
/// both measured in `l2` against a known ground truth per input.
pub fn check_error_bound<T: Scalar>(
    sets: &[ExplanationSet<T>],
    g_star: &[Vec<T>],
) -> Result<ErrorBound> {
    if sets.len() != g_star.len() {
        return Err(Error::DimensionMismatch {
            expected: sets.len(),
            got: g_star.len(),
        });
    }
    if sets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dist = |a: &[T], b: &[T]| -> f64 {
        let diff: Vec<T> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
        l2_norm(&diff).f64()
    };
    let mut agg = 0.0;
    let mut individual = 0.0;
    for (set, truth) in sets.iter().zip(g_star) {
        if truth.len() != set.dim() {
            return Err(Error::DimensionMismatch {
                expected: set.dim(),
                got: truth.len(),
            });
        }
        agg += dist(truth, &aggregate_mean(set).values);
        individual += set.members.iter().map(|g| dist(truth, g)).sum::<f64>() / set.m() as f64;
    }
    let n = sets.len() as f64;
    let (eps_agg, mean_individual_error) = (agg / n, individual / n);
    Ok(ErrorBound {
        eps_agg,
        mean_individual_error,
        holds: eps_agg <= mean_individual_error + BOUND_TOLERANCE,
    })
}

/// Parameters of the two complexity-lowering procedures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoweringConfig {
    pub step_size: f64,
    pub improvement_tolerance: f64,
    /// Per walk.
    pub max_steps: usize,
    pub region_iterations: usize,
    /// Points kept per region iteration; `None` keeps `m`.
    pub kept_points: Option<usize>,
    pub line_grid: usize,
}

impl Default for LoweringConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            improvement_tolerance: 1e-9,
            max_steps: 10_000,
            region_iterations: 10,
            kept_points: None,
            line_grid: 1001,
        }
    }
}

impl LoweringConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.step_size) || !positive(self.improvement_tolerance) {
            return Err(Error::InvalidConfig(
                "step_size and improvement_tolerance must be positive".into(),
            ));
        }
        if self.max_steps == 0 || self.region_iterations == 0 || self.kept_points == Some(0) {
            return Err(Error::InvalidConfig(
                "lowering counts must be positive".into(),
            ));
        }
        if self.line_grid < 2 {
            return Err(Error::InvalidConfig("line_grid must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoweringOutcome<T> {
    pub result: AttributionVector<T>,
    pub complexity: T,
    /// Lowest member complexity, for comparison.
    pub start_complexity: T,
    /// Some walk stopped on the step budget.
    pub budget_exhausted: bool,
    /// Region shrinking: minimum complexity after each iteration.
    pub iteration_minima: Vec<T>,
    /// Region shrinking: segments that pass through the zero vector.
    pub degenerate_pairs: usize,
}

/// Entropy of the fractional contributions; `None` for the zero vector.
fn entropy_of<T: Scalar>(v: &[T]) -> Option<T> {
    let total: T = v.iter().map(|x| x.abs()).sum();
    if total == T::zero() {
        return None;
    }
    let h = v
        .iter()
        .filter(|x| **x != T::zero())
        .map(|x| {
            let p = x.abs() / total;
            -p * p.ln()
        })
        .sum::<T>();
    Some(h.max(T::zero()))
}

fn require_nonzero<T: Scalar>(set: &ExplanationSet<T>) -> Result<Vec<T>> {
    set.members
        .iter()
        .map(|m| entropy_of(m).ok_or(Error::ZeroAttribution))
        .collect()
}

struct Walk<T> {
    point: Vec<T>,
    entropy: Option<T>,
    exhausted: bool,
}

/// Coordinate-wise walk from `start` toward `dest`. Each sweep visits
/// coordinates in ascending order and moves one of them by at most `alpha`
/// toward the destination, stopping exactly at zero when the step would
/// cross it. A move is taken only if the complexity drops by more than the
/// tolerance; moves whose partial derivative predicts an increase are not
/// tried. Stops when a full sweep makes no move.
fn walk<T: Scalar>(start: &[T], dest: &[T], config: &LoweringConfig) -> Walk<T> {
    let alpha = T::of(config.step_size);
    let tol = T::of(config.improvement_tolerance);
    let mut cur = start.to_vec();
    let mut h = entropy_of(&cur);
    let mut steps = 0usize;
    loop {
        let mut moved = false;
        for j in 0..cur.len() {
            let remaining = dest[j] - cur[j];
            if remaining == T::zero() {
                continue;
            }
            if steps >= config.max_steps {
                return Walk {
                    point: cur,
                    entropy: h,
                    exhausted: true,
                };
            }
            let mut next = cur[j] + remaining.signum() * remaining.abs().min(alpha);
            if cur[j] != T::zero() && next != T::zero() && next.signum() != cur[j].signum() {
                next = T::zero();
            }
            if h.is_some() {
                if let Ok(Some(dh)) = complexity_partial(&cur, j) {
                    if dh * (next - cur[j]) >= T::zero() {
                        continue;
                    }
                }
            }
            steps += 1;
            let old = cur[j];
            cur[j] = next;
            match entropy_of(&cur) {
                Some(hn) if h.is_none_or(|h0| hn < h0 - tol) => {
                    h = Some(hn);
                    moved = true;
                }
                _ => cur[j] = old,
            }
        }
        if !moved {
            return Walk {
                point: cur,
                entropy: h,
                exhausted: false,
            };
        }
    }
}

/// Greedy coordinate walks between every member and the mean, in both
/// directions; returns the lowest-complexity point reached. The result never
/// has higher complexity than the best member, and a walk end point replaces
/// the best member only when it improves on it by more than the tolerance.
pub fn lower_complexity_descent<T: Scalar>(
    set: &ExplanationSet<T>,
    config: &LoweringConfig,
) -> Result<LoweringOutcome<T>> {
    config.validate()?;
    let member_h = require_nonzero(set)?;
    let avg = aggregate_mean(set).values;
    let jobs: Vec<(&[T], &[T])> = set
        .members
        .iter()
        .flat_map(|g| {
            [
                (g.as_slice(), avg.as_slice()),
                (avg.as_slice(), g.as_slice()),
            ]
        })
        .collect();
    let walks: Vec<Walk<T>> = jobs.par_iter().map(|(s, d)| walk(s, d, config)).collect();

    let mut best: (Vec<T>, T) = member_h
        .iter()
        .zip(&set.members)
        .fold(None, |acc: Option<(Vec<T>, T)>, (&h, g)| match acc {
            Some((_, bh)) if bh <= h => acc,
            _ => Some((g.clone(), h)),
        })
        .expect("non-empty set");
    let start_complexity = best.1;
    let tol = T::of(config.improvement_tolerance);
    let mut exhausted = false;
    for w in walks {
        exhausted |= w.exhausted;
        if let Some(h) = w.entropy {
            if h < best.1 - tol {
                best = (w.point, h);
            }
        }
    }
    Ok(LoweringOutcome {
        result: agg_vector(best.0, "agg:descent"),
        complexity: best.1,
        start_complexity,
        budget_exhausted: exhausted,
        iteration_minima: Vec::new(),
        degenerate_pairs: 0,
    })
}

/// Lowest-complexity point on the segment `w a + (1 - w) b`, `w` in
/// `[0, 1]`. The lower endpoint is the incumbent; an interior point replaces
/// it only when lower by more than `tol`. `None` if every sampled point is
/// the zero vector.
/// Candidate point with its complexity.
type Scored<T> = (Vec<T>, T);

fn segment_min<T: Scalar>(a: &[T], b: &[T], grid: usize, tol: T) -> Option<Scored<T>> {
    let at = |w: f64| combine(T::of(w), a, b);
    let mut best: Option<(usize, T)> = None;
    for (i, margin) in [(0, T::zero()), (grid - 1, T::zero())]
        .into_iter()
        .chain((1..grid - 1).map(|i| (i, tol)))
    {
        let p = if i == 0 {
            b.to_vec()
        } else if i == grid - 1 {
            a.to_vec()
        } else {
            at(i as f64 / (grid - 1) as f64)
        };
        if let Some(h) = entropy_of(&p) {
            if best.is_none_or(|(_, bh)| h < bh - margin) {
                best = Some((i, h));
            }
        }
    }
    let (i, h) = best?;
    let cell = 1.0 / (grid - 1) as f64;
    let w_best = i as f64 / (grid - 1) as f64;
    let (lo, hi) = ((w_best - cell).max(0.0), (w_best + cell).min(1.0));
    let (w_ref, h_ref) = golden_section_min(
        |w| entropy_of(&at(w)).map_or(f64::INFINITY, T::f64),
        lo,
        hi,
        1e-12,
        200,
    );
    if h_ref < (h - tol).f64() {
        let p = at(w_ref);
        let hp = entropy_of(&p).expect("finite entropy is non-zero");
        Some((p, hp))
    } else if i == 0 {
        Some((b.to_vec(), h))
    } else if i == grid - 1 {
        Some((a.to_vec(), h))
    } else {
        Some((at(w_best), h))
    }
}

/// True when the segment between `a` and `b` contains the origin.
fn passes_through_zero<T: Scalar>(a: &[T], b: &[T]) -> bool {
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == T::zero() || nb == T::zero() {
        return true;
    }
    let cos = crate::scalar::dot(a, b) / (na * nb);
    cos <= -T::one() + T::of(1e-12)
}

/// Repeatedly replaces the working set by the minimum-complexity points on
/// the segments between every pair of its members, keeping the best
/// `kept_points` each round.
pub fn lower_complexity_region<T: Scalar>(
    set: &ExplanationSet<T>,
    config: &LoweringConfig,
) -> Result<LoweringOutcome<T>> {
    config.validate()?;
    if set.m() < 2 {
        return Err(Error::InvalidConfig(
            "region shrinking needs at least two members".into(),
        ));
    }
    let member_h = require_nonzero(set)?;
    let keep = config.kept_points.unwrap_or(set.m());
    let mut current: Vec<(Vec<T>, T)> = set.members.iter().cloned().zip(member_h).collect();
    let min_of = |s: &[(Vec<T>, T)]| -> usize {
        let mut bi = 0;
        for (i, p) in s.iter().enumerate() {
            if p.1 < s[bi].1 {
                bi = i;
            }
        }
        bi
    };
    let mut best = current[min_of(&current)].clone();
    let start_complexity = best.1;
    let mut minima = Vec::with_capacity(config.region_iterations);
    let mut degenerate = 0usize;
    let tol = T::of(config.improvement_tolerance);
    for _ in 0..config.region_iterations {
        if current.len() >= 2 {
            let pairs: Vec<(usize, usize)> = (0..current.len())
                .flat_map(|i| (i + 1..current.len()).map(move |j| (i, j)))
                .collect();
            let found: Vec<(bool, Option<Scored<T>>)> = pairs
                .par_iter()
                .map(|&(i, j)| {
                    let (a, b) = (&current[i].0, &current[j].0);
                    (
                        passes_through_zero(a, b),
                        segment_min(a, b, config.line_grid, tol),
                    )
                })
                .collect();
            degenerate += found.iter().filter(|f| f.0).count();
            let mut next: Vec<(Vec<T>, T)> = found.into_iter().filter_map(|f| f.1).collect();
            if !next.is_empty() {
                next.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("finite entropy"));
                next.truncate(keep);
                current = next;
            }
        }
        let bi = min_of(&current);
        minima.push(current[bi].1);
        if current[bi].1 < best.1 - tol {
            best = current[bi].clone();
        }
    }
    Ok(LoweringOutcome {
        result: agg_vector(best.0, "agg:region"),
        complexity: best.1,
        start_complexity,
        budget_exhausted: false,
        iteration_minima: minima,
        degenerate_pairs: degenerate,
    })
}
