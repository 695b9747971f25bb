use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crop {
    Corn,
    Soybean,
}

impl Crop {
    pub const ALL: [Crop; 2] = [Crop::Corn, Crop::Soybean];

    /// Code used in the binary mask and cube formats.
    pub fn code(self) -> u32 {
        match self {
            Crop::Corn => 0,
            Crop::Soybean => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Crop> {
        match code {
            0 => Some(Crop::Corn),
            1 => Some(Crop::Soybean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Crop::Corn => "corn",
            Crop::Soybean => "soybean",
        }
    }

    pub fn other(self) -> Crop {
        match self {
            Crop::Corn => Crop::Soybean,
            Crop::Soybean => Crop::Corn,
        }
    }
}

impl fmt::Display for Crop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Crop {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corn" => Ok(Crop::Corn),
            "soy" | "soybean" => Ok(Crop::Soybean),
            other => Err(format!("unknown crop '{other}'")),
        }
    }
}

/// One value per crop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerCrop<T> {
    pub corn: T,
    pub soybean: T,
}

impl<T> PerCrop<T> {
    pub fn new(corn: T, soybean: T) -> Self {
        Self { corn, soybean }
    }

    pub fn from_fn(mut f: impl FnMut(Crop) -> T) -> Self {
        Self {
            corn: f(Crop::Corn),
            soybean: f(Crop::Soybean),
        }
    }

    pub fn get(&self, crop: Crop) -> &T {
        match crop {
            Crop::Corn => &self.corn,
            Crop::Soybean => &self.soybean,
        }
    }

    pub fn get_mut(&mut self, crop: Crop) -> &mut T {
        match crop {
            Crop::Corn => &mut self.corn,
            Crop::Soybean => &mut self.soybean,
        }
    }

    pub fn map<U>(self, mut f: impl FnMut(Crop, T) -> U) -> PerCrop<U> {
        PerCrop {
            corn: f(Crop::Corn, self.corn),
            soybean: f(Crop::Soybean, self.soybean),
        }
    }
}
