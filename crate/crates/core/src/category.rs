use core::fmt;

use crate::error::{Error, Result};

pub const NUM_CATEGORIES: usize = 7;

pub const CATEGORY_NAMES: [&str; NUM_CATEGORIES] = [
    "DogBark",
    "Footstep",
    "GunShot",
    "Keyboard",
    "MovingMotorVehicle",
    "Rain",
    "Sneeze/Cough",
];

/// One of the seven foley classes, by id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CategoryLabel(u8);

impl CategoryLabel {
    pub fn new(id: usize) -> Result<Self> {
        if id >= NUM_CATEGORIES {
            return Err(Error::contract(alloc::format!(
                "category id {id} outside 0..{NUM_CATEGORIES}"
            )));
        }
        Ok(CategoryLabel(id as u8))
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        CATEGORY_NAMES[self.id()]
    }

    pub fn from_name(name: &str) -> Option<Self> {
        CATEGORY_NAMES
            .iter()
            .position(|&n| n == name)
            .map(|i| CategoryLabel(i as u8))
    }

    pub fn all() -> impl Iterator<Item = CategoryLabel> {
        (0..NUM_CATEGORIES as u8).map(CategoryLabel)
    }
}

impl fmt::Display for CategoryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
