//! Tunable-complexity rate partitions.
//!
//! The pre-copy rounds `1 ..= I_MAX` are split into `Q` contiguous blocks.
//! Only the first rate of each block is optimised; the rest of the block
//! repeats it. Together with `R0` and the stop-and-copy rate this leaves
//! `Q + 2` decision variables.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::RateSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePartition {
    i_max: usize,
    q: usize,
    blocks: Vec<RangeInclusive<usize>>,
    updated: Vec<usize>,
    /// Reduced-variable index for every round `0 ..= I_MAX + 1`.
    var_of_round: Vec<usize>,
}

impl RatePartition {
    /// Split `1 ..= i_max` into `q` blocks.
    ///
    /// When `q` does not divide `i_max`, the first `i_max % q` blocks get one
    /// extra round. `(0, 0)` is accepted as the partition with no pre-copy
    /// rounds (only `R0` and the stop-and-copy rate).
    pub fn new(i_max: usize, q: usize) -> Result<Self> {
        if i_max == 0 && q == 0 {
            return Ok(RatePartition {
                i_max: 0,
                q: 0,
                blocks: Vec::new(),
                updated: vec![0, 1],
                var_of_round: vec![0, 1],
            });
        }
        if q == 0 || q > i_max {
            return Err(Error::InvalidPartition(format!(
                "Q must satisfy 1 <= Q <= I_MAX = {i_max}, got {q}"
            )));
        }

        let base = i_max / q;
        let extra = i_max % q;
        let mut blocks = Vec::with_capacity(q);
        let mut start = 1;
        for j in 0..q {
            let size = base + usize::from(j < extra);
            blocks.push(start..=start + size - 1);
            start += size;
        }

        let mut updated = Vec::with_capacity(q + 2);
        updated.push(0);
        updated.extend(blocks.iter().map(|b| *b.start()));
        updated.push(i_max + 1);

        let mut var_of_round = vec![0; i_max + 2];
        for (j, b) in blocks.iter().enumerate() {
            for i in b.clone() {
                var_of_round[i] = j + 1;
            }
        }
        var_of_round[i_max + 1] = q + 1;

        Ok(RatePartition {
            i_max,
            q,
            blocks,
            updated,
            var_of_round,
        })
    }

    /// Every round shares one rate (the constant-rate baseline).
    pub fn constant(i_max: usize) -> Self {
        RatePartition {
            i_max,
            q: 0,
            blocks: if i_max > 0 { vec![1..=i_max] } else { Vec::new() },
            updated: vec![0],
            var_of_round: vec![0; i_max + 2],
        }
    }

    pub fn i_max(&self) -> usize {
        self.i_max
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Nominal block size `I_MAX / Q`.
    pub fn nominal_block_size(&self) -> f64 {
        if self.q == 0 {
            self.i_max as f64
        } else {
            self.i_max as f64 / self.q as f64
        }
    }

    pub fn blocks(&self) -> &[RangeInclusive<usize>] {
        &self.blocks
    }

    /// Rounds whose rates are decision variables, in round order.
    pub fn updated_indices(&self) -> &[usize] {
        &self.updated
    }

    pub fn num_vars(&self) -> usize {
        self.updated.len()
    }

    pub fn num_rounds(&self) -> usize {
        self.i_max + 2
    }

    pub fn var_of_round(&self, round: usize) -> usize {
        self.var_of_round[round]
    }

    pub fn round_vars(&self) -> &[usize] {
        &self.var_of_round
    }

    /// Leader (first index of its block) for a pre-copy round.
    pub fn block_of(&self, round: usize) -> Option<usize> {
        if round == 0 || round > self.i_max {
            return None;
        }
        Some(self.updated[self.var_of_round[round]])
    }

    /// True when the variable is constrained by the speed-up floor: `R0` and
    /// the block leaders, never the stop-and-copy rate.
    pub fn is_speedup_constrained(&self, var: usize) -> bool {
        self.updated[var] <= self.i_max
    }

    /// True when `var` is the stop-and-copy rate alone.
    pub fn is_stop_copy_var(&self, var: usize) -> bool {
        self.updated.len() > 1 && var == self.updated.len() - 1
    }

    pub fn expand(&self, reduced: &[f64]) -> Result<RateSchedule> {
        if reduced.len() != self.num_vars() {
            return Err(Error::LengthMismatch {
                expected: self.num_vars(),
                got: reduced.len(),
            });
        }
        RateSchedule::new(self.var_of_round.iter().map(|&v| reduced[v]).collect())
    }

    /// The decision-variable values carried by a full schedule.
    pub fn reduce(&self, schedule: &RateSchedule) -> Result<Vec<f64>> {
        if schedule.len() != self.num_rounds() {
            return Err(Error::LengthMismatch {
                expected: self.num_rounds(),
                got: schedule.len(),
            });
        }
        Ok(self.updated.iter().map(|&i| schedule.rates()[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_rounds_three_blocks() {
        let p = RatePartition::new(6, 3).unwrap();
        assert_eq!(p.updated_indices(), &[0, 1, 3, 5, 7]);
        assert_eq!(p.block_of(2), Some(1));
        assert_eq!(p.block_of(4), Some(3));
        assert_eq!(p.block_of(6), Some(5));
        assert_eq!(p.nominal_block_size(), 2.0);
    }

    #[test]
    fn single_block() {
        let p = RatePartition::new(4, 1).unwrap();
        assert_eq!(p.updated_indices(), &[0, 1, 5]);
        for i in 2..=4 {
            assert_eq!(p.block_of(i), Some(1));
        }
    }

    #[test]
    fn non_divisible_blocks() {
        let p = RatePartition::new(5, 2).unwrap();
        assert_eq!(p.blocks(), &[1..=3, 4..=5]);
        assert_eq!(p.updated_indices(), &[0, 1, 4, 6]);
        let covered: Vec<usize> = p.blocks().iter().flat_map(|b| b.clone()).collect();
        assert_eq!(covered, vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn out_of_range_q() {
        assert!(RatePartition::new(3, 0).is_err());
        assert!(RatePartition::new(3, 4).is_err());
        assert!(RatePartition::new(0, 1).is_err());
        assert!(RatePartition::new(0, 0).is_ok());
    }

    #[test]
    fn expand_held_rates() {
        let p = RatePartition::new(6, 3).unwrap();
        let s = p.expand(&[10.0, 11.0, 13.0, 15.0, 17.0]).unwrap();
        assert_eq!(s.rates(), &[10.0, 11.0, 11.0, 13.0, 13.0, 15.0, 15.0, 17.0]);

        let p = RatePartition::new(4, 1).unwrap();
        let s = p.expand(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.rates(), &[1.0, 2.0, 2.0, 2.0, 2.0, 3.0]);
    }

    #[test]
    fn full_partition_is_identity() {
        let p = RatePartition::new(4, 4).unwrap();
        let r = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(p.expand(&r).unwrap().rates(), &r);
    }

    #[test]
    fn expand_length_mismatch() {
        let p = RatePartition::new(4, 2).unwrap();
        assert_eq!(
            p.expand(&[1.0, 2.0]),
            Err(Error::LengthMismatch { expected: 4, got: 2 })
        );
    }

    #[test]
    fn constant_partition() {
        let p = RatePartition::constant(3);
        assert_eq!(p.num_vars(), 1);
        assert_eq!(p.expand(&[2.5]).unwrap().rates(), &[2.5; 5]);
        assert!(p.is_speedup_constrained(0));
    }

    #[test]
    fn speedup_constrained_vars() {
        let p = RatePartition::new(6, 3).unwrap();
        let flags: Vec<bool> = (0..p.num_vars()).map(|v| p.is_speedup_constrained(v)).collect();
        assert_eq!(flags, vec![true, true, true, true, false]);
        let p0 = RatePartition::new(0, 0).unwrap();
        assert!(p0.is_speedup_constrained(0));
        assert!(!p0.is_speedup_constrained(1));
    }

    #[test]
    fn reduce_inverts_expand() {
        let p = RatePartition::new(7, 3).unwrap();
        let red = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(p.reduce(&p.expand(&red).unwrap()).unwrap(), red);
    }
}
