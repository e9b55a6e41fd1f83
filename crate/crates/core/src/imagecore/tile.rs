use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::FloatPlane;

/// Class of a cell tile. `Infected` is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Healthy,
    Infected,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Healthy, Label::Infected];

    pub fn class_index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Infected => 1,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Healthy),
            1 => Some(Label::Infected),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Healthy => "healthy",
            Label::Infected => "infected",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(Label::Healthy),
            "infected" => Ok(Label::Infected),
            _ => Err(Error::Format(format!("unknown label {s:?}"))),
        }
    }
}

/// A square crop of a source plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub origin: (usize, usize),
    pub plane: FloatPlane,
    pub label: Option<Label>,
}

impl Tile {
    pub fn new(origin: (usize, usize), plane: FloatPlane, label: Option<Label>) -> Result<Self> {
        if plane.width() != plane.height() {
            return Err(Error::Shape(format!(
                "tile plane must be square, got {}x{}",
                plane.width(),
                plane.height()
            )));
        }
        Ok(Tile {
            origin,
            plane,
            label,
        })
    }

    pub fn size(&self) -> usize {
        self.plane.width()
    }
}

/// Cuts `p` into `size`x`size` tiles at origins that are multiples of
/// `stride`, row-major. Tiles that would cross the border are discarded.
pub fn tile_grid(p: &FloatPlane, size: usize, stride: usize) -> Result<Vec<Tile>> {
    if size == 0 || stride == 0 {
        return Err(Error::invalid("tile size and stride must be >= 1"));
    }
    if size > p.width() || size > p.height() {
        return Err(Error::invalid(format!(
            "tile size {size} larger than {}x{} plane",
            p.width(),
            p.height()
        )));
    }
    let mut tiles = Vec::new();
    for y in (0..=p.height() - size).step_by(stride) {
        for x in (0..=p.width() - size).step_by(stride) {
            tiles.push(Tile::new((x, y), p.crop(x, y, size, size)?, None)?);
        }
    }
    Ok(tiles)
}
