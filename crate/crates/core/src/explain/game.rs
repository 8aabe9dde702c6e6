use crate::error::{Error, Result};
use crate::model::{target_of_logits, Model, Target};
use crate::scalar::Scalar;

/// A cooperative game over `players()` features.
pub trait Game<T: Scalar>: Sync {
    fn players(&self) -> usize;

    /// Worth of the coalition whose members are flagged `true`.
    fn value(&self, coalition: &[bool]) -> Result<T>;

    /// Worth of the coalition encoded as a bit mask (bit `i` = player `i`).
    fn value_mask(&self, mask: u64) -> Result<T> {
        let members: Vec<bool> = (0..self.players()).map(|i| mask >> i & 1 == 1).collect();
        self.value(&members)
    }
}

/// Baseline-substitution game: features outside the coalition take their
/// baseline value and the worth is the model's target for the class it
/// predicts at `x`.
pub struct CharacteristicGame<'a, T> {
    model: &'a Model<T>,
    x: Vec<T>,
    baseline: Vec<T>,
    value_kind: Target,
    class: usize,
}

impl<'a, T: Scalar> CharacteristicGame<'a, T> {
    pub fn new(model: &'a Model<T>, x: &[T], baseline: &[T], value_kind: Target) -> Result<Self> {
        if baseline.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: baseline.len(),
            });
        }
        let class = model.predicted_class(x)?;
        model.predicted_class(baseline)?;
        Ok(Self {
            model,
            x: x.to_vec(),
            baseline: baseline.to_vec(),
            value_kind,
            class,
        })
    }

    pub fn class(&self) -> usize {
        self.class
    }

    /// `x` with every feature outside the coalition replaced by the baseline.
    pub fn masked_input(&self, coalition: &[bool]) -> Vec<T> {
        self.x
            .iter()
            .zip(&self.baseline)
            .zip(coalition)
            .map(|((&xi, &bi), &keep)| if keep { xi } else { bi })
            .collect()
    }
}

impl<T: Scalar> Game<T> for CharacteristicGame<'_, T> {
    fn players(&self) -> usize {
        self.x.len()
    }

    fn value(&self, coalition: &[bool]) -> Result<T> {
        if coalition.len() != self.x.len() {
            return Err(Error::DimensionMismatch {
                expected: self.x.len(),
                got: coalition.len(),
            });
        }
        let logits = self.model.forward(&self.masked_input(coalition))?;
        Ok(target_of_logits(&logits, self.value_kind, self.class))
    }
}

/// A game given by its full table of `2^d` worths, indexed by bit mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGame<T> {
    players: usize,
    values: Vec<T>,
}

impl<T: Scalar> TableGame<T> {
    pub fn new(players: usize, values: Vec<T>) -> Result<Self> {
        if players >= 63 || values.len() != 1usize << players {
            return Err(Error::DimensionMismatch {
                expected: 1usize << players.min(62),
                got: values.len(),
            });
        }
        Ok(Self { players, values })
    }

    /// Tabulates any game by full enumeration.
    pub fn tabulate(game: &dyn Game<T>) -> Result<Self> {
        let d = game.players();
        let values = (0..1u64 << d)
            .map(|m| game.value_mask(m))
            .collect::<Result<_>>()?;
        Self::new(d, values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

impl<T: Scalar> Game<T> for TableGame<T> {
    fn players(&self) -> usize {
        self.players
    }

    fn value(&self, coalition: &[bool]) -> Result<T> {
        let mask = coalition
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, &b)| m | (u64::from(b) << i));
        self.value_mask(mask)
    }

    fn value_mask(&self, mask: u64) -> Result<T> {
        Ok(self.values[mask as usize])
    }
}

/// `v(S) = sum_k w_k v_k(S)`.
pub struct WeightedSumGame<'a, T> {
    parts: Vec<(T, &'a dyn Game<T>)>,
}

impl<'a, T: Scalar> WeightedSumGame<'a, T> {
    pub fn new(parts: Vec<(T, &'a dyn Game<T>)>) -> Result<Self> {
        let d = parts
            .first()
            .map(|(_, g)| g.players())
            .ok_or(Error::EmptyDataset)?;
        if let Some((_, g)) = parts.iter().find(|(_, g)| g.players() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: g.players(),
            });
        }
        Ok(Self { parts })
    }
}

impl<T: Scalar> Game<T> for WeightedSumGame<'_, T> {
    fn players(&self) -> usize {
        self.parts[0].1.players()
    }

    fn value(&self, coalition: &[bool]) -> Result<T> {
        self.parts
            .iter()
            .map(|(w, g)| Ok(*w * g.value(coalition)?))
            .sum()
    }

    fn value_mask(&self, mask: u64) -> Result<T> {
        self.parts
            .iter()
            .map(|(w, g)| Ok(*w * g.value_mask(mask)?))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_and_empty_coalitions() {
        let m = Model::linear(1, 3, vec![0.5, -2.0, 1.5], vec![0.25]).unwrap();
        let x = [2.0, 1.0, -1.0];
        let zero = [0.0; 3];
        let g = CharacteristicGame::new(&m, &x, &zero, Target::Logit).unwrap();
        assert_eq!(g.value(&[true; 3]).unwrap(), m.forward(&x).unwrap()[0]);
        assert_eq!(g.value(&[false; 3]).unwrap(), m.forward(&zero).unwrap()[0]);
        // bias-free contribution of feature 0
        let single = g.value(&[true, false, false]).unwrap() - 0.25;
        assert_eq!(single, 0.5 * 2.0);
    }

    #[test]
    fn weighted_sum_of_tables() {
        let a = TableGame::new(1, vec![0.0, 1.0]).unwrap();
        let b = TableGame::new(1, vec![1.0, 3.0]).unwrap();
        let s = WeightedSumGame::new(vec![(2.0, &a as &dyn Game<f64>), (0.5, &b)]).unwrap();
        assert_eq!(s.value(&[true]).unwrap(), 2.0 + 1.5);
        assert_eq!(s.value_mask(0).unwrap(), 0.5);
    }
}
