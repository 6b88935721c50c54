//! Stratified train/validation assignment.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::category::{CategoryLabel, NUM_CATEGORIES};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            _ => None,
        }
    }
}

/// Marks exactly `per_class_val` clips of every category present as
/// validation, chosen uniformly by a seeded shuffle; everything else trains.
///
/// Categories that never occur are ignored; a category with fewer clips than
/// `per_class_val` is a coverage error.
pub fn stratified_split(
    labels: &[CategoryLabel],
    per_class_val: usize,
    seed: u64,
) -> Result<Vec<Split>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CATEGORIES];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.id()].push(i);
    }
    let mut out = vec![Split::Train; labels.len()];
    for (id, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() || per_class_val == 0 {
            continue;
        }
        if members.len() < per_class_val {
            return Err(Error::Coverage(alloc::format!(
                "category {id} has {} clips, fewer than the {per_class_val} needed for validation",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        members.shuffle(&mut rng);
        for &i in &members[..per_class_val] {
            out[i] = Split::Val;
        }
    }
    Ok(out)
}
