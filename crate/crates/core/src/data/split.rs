//! Train/val/test partitioning by seed arithmetic.
//!
//! Seeds are grouped in blocks of 20 relative to a base seed: offsets 0..14
//! train, 14..17 validation, 17..20 test, which yields a 70/15/15 split.

use std::fmt;
use std::str::FromStr;

use super::Task;
use crate::error::{Error, Result};

const BLOCK: u64 = 20;
const TRAIN_END: u64 = 14;
const VAL_END: u64 = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Partition {
    Train,
    Val,
    Test,
}

impl Partition {
    fn range(self) -> (u64, u64) {
        match self {
            Partition::Train => (0, TRAIN_END),
            Partition::Val => (TRAIN_END, VAL_END),
            Partition::Test => (VAL_END, BLOCK),
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partition::Train => "train",
            Partition::Val => "val",
            Partition::Test => "test",
        })
    }
}

impl FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Partition::Train),
            "val" => Ok(Partition::Val),
            "test" => Ok(Partition::Test),
            _ => Err(Error::config(format!(
                "unknown split `{s}` (expected train, val or test)"
            ))),
        }
    }
}

/// Partition of `seed` in the split rooted at `base_seed`; arithmetic wraps.
pub fn partition_of(seed: u64, base_seed: u64) -> Partition {
    let r = seed.wrapping_sub(base_seed) % BLOCK;
    if r < TRAIN_END {
        Partition::Train
    } else if r < VAL_END {
        Partition::Val
    } else {
        Partition::Test
    }
}

/// The `index`-th seed (0-based) of `partition`; unbounded, for streaming sampling.
pub fn seed_in_partition(base_seed: u64, partition: Partition, index: u64) -> u64 {
    let (lo, hi) = partition.range();
    let per_block = hi - lo;
    base_seed
        .wrapping_add(BLOCK.wrapping_mul(index / per_block))
        .wrapping_add(lo + index % per_block)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClipDescriptor {
    pub task: Task,
    pub seed: u64,
    pub partition: Partition,
}

/// Seeds `base_seed..base_seed + n_clips`, each tagged with its partition.
pub fn make_split(task: Task, n_clips: usize, base_seed: u64) -> Result<Vec<ClipDescriptor>> {
    if n_clips == 0 {
        return Err(Error::config("a split needs at least one clip"));
    }
    Ok((0..n_clips as u64)
        .map(|i| {
            let seed = base_seed + i;
            ClipDescriptor {
                task,
                seed,
                partition: partition_of(seed, base_seed),
            }
        })
        .collect())
}
