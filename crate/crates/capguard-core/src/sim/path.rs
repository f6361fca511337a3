//! Bandwidth-weighted three-hop path selection.
//!
//! Relays are drawn proportionally to their consensus weight within each
//! position's eligible set: exits need the exit flag, guards the guard flag,
//! and the middle position takes any relay. The three hops are distinct.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use super::Consensus;

/// Cumulative-weight tables for fast repeated selection.
pub struct PathTables {
    guards: CumulativeTable,
    exits: CumulativeTable,
    all: CumulativeTable,
}

struct CumulativeTable {
    cumulative: Vec<f64>,
    indexes: Vec<usize>,
    total: f64,
}

impl CumulativeTable {
    fn build<'a>(relays: impl Iterator<Item = (usize, &'a super::RelayModel)>) -> Self {
        let mut cumulative = Vec::new();
        let mut indexes = Vec::new();
        let mut total = 0.0;
        for (index, relay) in relays {
            total += relay.weight.max(0.0);
            cumulative.push(total);
            indexes.push(index);
        }
        CumulativeTable {
            cumulative,
            indexes,
            total,
        }
    }

    fn len(&self) -> usize {
        self.indexes.len()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let target = rng.gen::<f64>() * self.total;
        let position = self.cumulative.partition_point(|&c| c <= target);
        self.indexes[position.min(self.indexes.len() - 1)]
    }
}

impl PathTables {
    pub fn build(consensus: &Consensus) -> Result<Self, PathError> {
        let guards = CumulativeTable::build(
            consensus.relays.iter().enumerate().filter(|(_, r)| r.guard),
        );
        let exits = CumulativeTable::build(
            consensus.relays.iter().enumerate().filter(|(_, r)| r.exit),
        );
        let all = CumulativeTable::build(consensus.relays.iter().enumerate());
        if consensus.relays.len() < 3 {
            return Err(PathError::InsufficientRelays { position: "any" });
        }
        if guards.len() == 0 || guards.total <= 0.0 {
            return Err(PathError::InsufficientRelays { position: "guard" });
        }
        if exits.len() == 0 || exits.total <= 0.0 {
            return Err(PathError::InsufficientRelays { position: "exit" });
        }
        Ok(PathTables { guards, exits, all })
    }

    /// Draws (guard, middle, exit) relay indexes, distinct.
    pub fn select<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<[usize; 3], PathError> {
        let exit = self.exits.draw(rng);
        let guard = self.draw_distinct(&self.guards, &[exit], "guard", rng)?;
        let middle = self.draw_distinct(&self.all, &[exit, guard], "middle", rng)?;
        Ok([guard, middle, exit])
    }

    fn draw_distinct<R: Rng + ?Sized>(
        &self,
        table: &CumulativeTable,
        taken: &[usize],
        position: &'static str,
        rng: &mut R,
    ) -> Result<usize, PathError> {
        // Rejection sampling; falls back to a scan when the eligible set is
        // nearly exhausted.
        for _ in 0..64 {
            let candidate = table.draw(rng);
            if !taken.contains(&candidate) {
                return Ok(candidate);
            }
        }
        table
            .indexes
            .iter()
            .copied()
            .find(|i| !taken.contains(i))
            .ok_or(PathError::InsufficientRelays { position })
    }
}

/// One-off convenience wrapper; runners keep a [`PathTables`] instead.
pub fn select_path<R: Rng + ?Sized>(
    consensus: &Consensus,
    rng: &mut R,
) -> Result<[usize; 3], PathError> {
    PathTables::build(consensus)?.select(rng)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PathError {
    InsufficientRelays { position: &'static str },
}

impl fmt::Display for PathError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathError::InsufficientRelays { position } => {
                write!(f, "not enough eligible relays for the {position} position")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for PathError {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::RelayModel;
    use crate::testutil::rng;
    use crate::token::Fingerprint;

    fn relay(label: &[u8], weight: f64, guard: bool, exit: bool) -> RelayModel {
        RelayModel {
            fingerprint: Fingerprint::derive(label),
            weight,
            capacity_per_s: 100.0,
            queue_bound: 10,
            guard,
            exit,
        }
    }

    #[test]
    fn guard_selection_tracks_weights() {
        let consensus = Consensus {
            relays: alloc::vec![
                relay(b"g1", 2.0, true, false),
                relay(b"g2", 1.0, true, false),
                relay(b"e", 1.0, false, true),
                relay(b"m", 1.0, false, false),
            ],
        };
        let tables = PathTables::build(&consensus).unwrap();
        let mut rng = rng(90);
        let draws = 100_000;
        let mut g1 = 0u64;
        for _ in 0..draws {
            let [guard, _, _] = tables.select(&mut rng).unwrap();
            if guard == 0 {
                g1 += 1;
            }
        }
        let share = g1 as f64 / draws as f64;
        // Expect 2/3 within 3 sigma of the binomial.
        let sigma = (2.0f64 / 3.0 * (1.0 / 3.0) / draws as f64).sqrt();
        assert!(
            (share - 2.0 / 3.0).abs() < 3.0 * sigma,
            "share {share}, sigma {sigma}"
        );
    }

    #[test]
    fn exit_slot_requires_exit_flag() {
        let consensus = Consensus {
            relays: alloc::vec![
                relay(b"g", 5.0, true, false),
                relay(b"e", 0.1, false, true),
                relay(b"m1", 5.0, false, false),
                relay(b"m2", 5.0, false, false),
            ],
        };
        let tables = PathTables::build(&consensus).unwrap();
        let mut rng = rng(91);
        for _ in 0..2_000 {
            let [guard, middle, exit] = tables.select(&mut rng).unwrap();
            assert_eq!(exit, 1);
            assert_ne!(guard, exit);
            assert_ne!(middle, exit);
            assert_ne!(guard, middle);
        }
    }

    #[test]
    fn single_candidate_per_position_is_deterministic() {
        let consensus = Consensus {
            relays: alloc::vec![
                relay(b"g", 1.0, true, false),
                relay(b"e", 1.0, false, true),
                relay(b"m", 1.0, false, false),
            ],
        };
        let tables = PathTables::build(&consensus).unwrap();
        let mut rng = rng(92);
        for _ in 0..50 {
            assert_eq!(tables.select(&mut rng).unwrap(), [0, 2, 1]);
        }
    }

    #[test]
    fn missing_flags_are_an_error() {
        let consensus = Consensus {
            relays: alloc::vec![
                relay(b"a", 1.0, true, false),
                relay(b"b", 1.0, true, false),
                relay(b"c", 1.0, true, false),
            ],
        };
        assert_eq!(
            PathTables::build(&consensus).err(),
            Some(PathError::InsufficientRelays { position: "exit" })
        );
    }
}
