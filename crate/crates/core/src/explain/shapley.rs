//! Shapley values: exact enumeration, Monte-Carlo permutation sampling and
//! the kernel-weighted least-squares estimator.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Serialize, Serializer};

use super::game::Game;
use crate::error::{Error, Result};
use crate::linalg::solve;
use crate::rng::Rng;
use crate::scalar::Scalar;

pub const EXACT_SHAPLEY_MAX_DIM: usize = 12;
pub const FULL_ENUMERATION_MAX_DIM: usize = 20;
const AUTO_SAMPLED_BUDGET: usize = 2048;
const TIKHONOV: f64 = 1e-10;

/// Number of coalitions (anchors `{}` and `[d]` included) the least-squares
/// estimator may evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoalitionBudget {
    /// Full enumeration for `d <= 12`, 2048 sampled coalitions otherwise.
    #[default]
    Auto,
    Full,
    Coalitions(usize),
}

impl fmt::Display for CoalitionBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoalitionBudget::Auto => f.write_str("auto"),
            CoalitionBudget::Full => f.write_str("full"),
            CoalitionBudget::Coalitions(n) => write!(f, "{n}"),
        }
    }
}

impl std::str::FromStr for CoalitionBudget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "full" => Ok(Self::Full),
            n => n
                .parse()
                .map(Self::Coalitions)
                .map_err(|_| Error::InvalidConfig(format!("bad coalition budget `{n}`"))),
        }
    }
}

impl Serialize for CoalitionBudget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact Shapley values by enumerating all `2^d` coalitions.
pub fn exact_shapley<T: Scalar>(game: &dyn Game<T>) -> Result<Vec<T>> {
    let d = game.players();
    if d > EXACT_SHAPLEY_MAX_DIM {
        return Err(Error::DimensionTooLarge {
            d,
            limit: EXACT_SHAPLEY_MAX_DIM,
        });
    }
    let values: Vec<T> = (0..1u64 << d)
        .map(|m| game.value_mask(m))
        .collect::<Result<_>>()?;
    // |S|! (d - |S| - 1)! / d!  ==  1 / (d * C(d-1, |S|))
    let weights: Vec<T> = (0..d)
        .map(|s| T::of(1.0 / (d as f64 * binomial(d - 1, s))))
        .collect();
    let mut phi = vec![T::zero(); d];
    for mask in 0..1u64 << d {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                let with = mask | 1 << i;
                *p += weights[size] * (values[with as usize] - values[mask as usize]);
            }
        }
    }
    Ok(phi)
}

/// Mean marginal contribution over `permutations` uniformly drawn orderings.
pub fn shapley_sampling<T: Scalar>(
    game: &dyn Game<T>,
    permutations: usize,
    rng: &mut Rng,
) -> Result<Vec<T>> {
    if permutations == 0 {
        return Err(Error::InvalidConfig(
            "shapley sampling needs permutations >= 1".into(),
        ));
    }
    let d = game.players();
    let empty = game.value(&vec![false; d])?;
    let mut order: Vec<usize> = (0..d).collect();
    let mut phi = vec![T::zero(); d];
    let mut coalition = vec![false; d];
    for _ in 0..permutations {
        order.shuffle(rng);
        coalition.iter_mut().for_each(|c| *c = false);
        let mut prev = empty;
        for &i in &order {
            coalition[i] = true;
            let next = game.value(&coalition)?;
            phi[i] += next - prev;
            prev = next;
        }
    }
    let n = T::of_usize(permutations);
    Ok(phi.into_iter().map(|p| p / n).collect())
}

/// Shapley-kernel weight of a single coalition of size `s` out of `d`.
fn kernel_weight(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64)
}

/// Kernel-weighted least squares with the efficiency constraint built in.
///
/// The intercept is pinned to `v({})` and `sum(phi) = v([d]) - v({})` is
/// enforced by eliminating the last coordinate. With full enumeration the
/// solution is the exact Shapley vector.
pub fn shapley_wls<T: Scalar>(
    game: &dyn Game<T>,
    budget: CoalitionBudget,
    rng: &mut Rng,
) -> Result<Vec<T>> {
    let d = game.players();
    let full_count = if d < 63 { 1usize << d } else { usize::MAX };
    let full = match budget {
        CoalitionBudget::Full => {
            if d > FULL_ENUMERATION_MAX_DIM {
                return Err(Error::DimensionTooLarge {
                    d,
                    limit: FULL_ENUMERATION_MAX_DIM,
                });
            }
            true
        }
        CoalitionBudget::Auto => d <= EXACT_SHAPLEY_MAX_DIM,
        CoalitionBudget::Coalitions(b) => {
            if b < d + 2 {
                return Err(Error::SingularSystem(format!(
                    "budget {b} is below d + 2 = {}",
                    d + 2
                )));
            }
            b >= full_count
        }
    };
    let budget = match budget {
        CoalitionBudget::Coalitions(b) => b,
        _ => AUTO_SAMPLED_BUDGET.max(2 * d + 2),
    };

    let empty = game.value(&vec![false; d])?;
    let grand = game.value(&vec![true; d])?;
    let total = grand - empty;
    if d == 1 {
        return Ok(vec![total]);
    }

    let mut rows: Vec<(Vec<bool>, f64)> = Vec::new();
    if full {
        for mask in 1..(1u64 << d) - 1 {
            let members: Vec<bool> = (0..d).map(|i| mask >> i & 1 == 1).collect();
            let s = mask.count_ones() as usize;
            rows.push((members, kernel_weight(d, s)));
        }
    } else {
        let mut remaining = budget - 2;
        // all singletons, then all (d-1)-sets, then kernel-proportional draws
        for size in [1, d - 1] {
            if size == d - 1 && d == 2 {
                break;
            }
            for i in 0..d {
                if remaining == 0 {
                    break;
                }
                let members: Vec<bool> = (0..d).map(|j| (j == i) == (size == 1)).collect();
                rows.push((members, kernel_weight(d, size)));
                remaining -= 1;
            }
        }
        let sizes: Vec<usize> = (2..d.saturating_sub(1)).collect();
        if remaining > 0 && !sizes.is_empty() {
            let mass: Vec<f64> = sizes
                .iter()
                .map(|&s| (d - 1) as f64 / (s * (d - s)) as f64)
                .collect();
            let total_mass: f64 = mass.iter().sum();
            let per_sample = total_mass / remaining as f64;
            let mut players: Vec<usize> = (0..d).collect();
            for _ in 0..remaining {
                let mut u = rng.gen::<f64>() * total_mass;
                let mut size = *sizes.last().expect("non-empty");
                for (&s, &m) in sizes.iter().zip(&mass) {
                    if u < m {
                        size = s;
                        break;
                    }
                    u -= m;
                }
                let (chosen, _) = players.partial_shuffle(rng, size);
                let mut members = vec![false; d];
                for &c in chosen.iter() {
                    members[c] = true;
                }
                rows.push((members, per_sample));
            }
        }
    }

    // Unknowns phi_0..phi_{d-2}; phi_{d-1} = total - sum(others).
    let p = d - 1;
    let mut ata = vec![T::zero(); p * p];
    let mut atb = vec![T::zero(); p];
    for (members, w) in &rows {
        let w = T::of(*w);
        let last = if members[p] { T::one() } else { T::zero() };
        let y = game.value(members)? - empty - last * total;
        let a: Vec<T> = (0..p)
            .map(|j| if members[j] { T::one() } else { T::zero() } - last)
            .collect();
        for r in 0..p {
            if a[r] == T::zero() {
                continue;
            }
            let war = w * a[r];
            atb[r] += war * y;
            for c in 0..p {
                ata[r * p + c] += war * a[c];
            }
        }
    }
    let damping = T::of(TIKHONOV);
    for r in 0..p {
        ata[r * p + r] += damping;
    }
    let head = solve(ata, atb)
        .ok_or_else(|| Error::SingularSystem("normal equations are singular".into()))?;
    let rest = total - head.iter().copied().sum::<T>();
    let mut phi = head;
    phi.push(rest);
    Ok(phi)
}

#[cfg(test)]
mod tests {
    use super::super::game::TableGame;
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn symmetric_two_player_game() {
        let g = TableGame::new(2, vec![0.0, 1.0, 1.0, 4.0]).unwrap();
        assert_eq!(exact_shapley(&g).unwrap(), vec![2.0, 2.0]);
    }

    #[test]
    fn dummy_player_gets_zero() {
        // player 2 never changes the worth
        let base = [0.0, 1.0, 2.5, 4.0];
        let values: Vec<f64> = (0..8).map(|m| base[m & 3]).collect();
        let g = TableGame::new(3, values).unwrap();
        let phi = exact_shapley(&g).unwrap();
        assert!(phi[2].abs() < 1e-15);
    }

    #[test]
    fn single_player_sampling_is_exact() {
        let g = TableGame::new(1, vec![0.25, 1.75]).unwrap();
        let phi = shapley_sampling(&g, 3, &mut rng_from(1, &[])).unwrap();
        assert_eq!(phi, vec![1.5]);
    }

    #[test]
    fn wls_rejects_small_budget() {
        let g = TableGame::new(3, (0..8).map(f64::from).collect()).unwrap();
        assert!(matches!(
            shapley_wls(&g, CoalitionBudget::Coalitions(4), &mut rng_from(0, &[])),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn too_many_players_for_exact() {
        let g = TableGame::new(13, vec![0.0; 1 << 13]).unwrap();
        assert!(matches!(
            exact_shapley(&g),
            Err(Error::DimensionTooLarge { .. })
        ));
    }
}
