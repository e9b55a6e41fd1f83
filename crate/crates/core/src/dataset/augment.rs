use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imagecore::{FloatPlane, Tile};

use super::{class_counts, label_of_class, LabeledTile};

/// An element of the symmetry group of the square.
///
/// Id `v` is a rotation by `v % 4` quarter turns followed, for `v >= 4`, by
/// a horizontal flip. Id 0 is the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dihedral(u8);

type Mat = [[i32; 2]; 2];

const ROT: Mat = [[0, 1], [-1, 0]];
const FLIP: Mat = [[-1, 0], [0, 1]];
const IDENT: Mat = [[1, 0], [0, 1]];

fn mul(a: Mat, b: Mat) -> Mat {
    let mut c = [[0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(id: u8) -> Option<Self> {
        (id < 8).then_some(Dihedral(id))
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    fn matrix(self) -> Mat {
        let mut m = IDENT;
        for _ in 0..self.0 % 4 {
            m = mul(ROT, m);
        }
        if self.0 >= 4 {
            m = mul(FLIP, m);
        }
        m
    }

    fn from_matrix(m: Mat) -> Dihedral {
        Dihedral::all()
            .find(|d| d.matrix() == m)
            .expect("dihedral group is closed")
    }

    /// The element equivalent to applying `self` and then `then`.
    pub fn then(self, then: Dihedral) -> Dihedral {
        Dihedral::from_matrix(mul(then.matrix(), self.matrix()))
    }

    /// Applies the transform to a square plane: the pixel at `p` (in
    /// centred coordinates) moves to `M p`.
    pub fn apply(self, plane: &FloatPlane) -> Result<FloatPlane> {
        let n = plane.width();
        if plane.height() != n {
            return Err(Error::Shape(format!(
                "dihedral transforms need a square tile, got {}x{}",
                n,
                plane.height()
            )));
        }
        let m = self.matrix();
        let last = n as i32 - 1;
        let mut out = FloatPlane::filled(n, n, 0.0);
        for y in 0..n {
            for x in 0..n {
                let (u, v) = (2 * x as i32 - last, 2 * y as i32 - last);
                let (tu, tv) = (m[0][0] * u + m[0][1] * v, m[1][0] * u + m[1][1] * v);
                let (tx, ty) = (((tu + last) / 2) as usize, ((tv + last) / 2) as usize);
                out.set(tx, ty, plane.get(x, y));
            }
        }
        Ok(out)
    }
}

/// The eight dihedral images of `t`, in group-id order. Each output's
/// `variant` is its transform relative to the original source tile.
pub fn dihedral_variants(t: &LabeledTile) -> Result<Vec<LabeledTile>> {
    let base = Dihedral::new(t.variant)
        .ok_or_else(|| Error::invalid(format!("variant id {} out of range", t.variant)))?;
    let source = t.source_id();
    Dihedral::all()
        .map(|g| {
            let plane = g.apply(&t.tile.plane)?;
            let variant = base.then(g).id();
            Ok(LabeledTile {
                id: source,
                tile: Tile::new(t.tile.origin, plane, Some(t.label))?,
                label: t.label,
                augmented_from: (variant != 0).then_some(source),
                variant,
            })
        })
        .collect()
}

/// Result of [`balance_by_augmentation`].
#[derive(Debug, Clone)]
pub struct Balanced {
    pub tiles: Vec<LabeledTile>,
    /// Majority minus minority count after augmentation; nonzero only when
    /// every minority tile's variants are used up.
    pub residual: usize,
}

/// Adds dihedral variants of minority-class originals until the classes are
/// the same size or all eight variants of every minority tile are present.
/// Originals are kept, in input order, followed by the new variants.
///
/// Variants are spread evenly: every minority tile gets its n-th extra
/// variant before any gets its (n+1)-th. Which tile and which variant are
/// picked is a deterministic function of `seed`.
pub fn balance_by_augmentation(tiles: &[LabeledTile], seed: u64) -> Result<Balanced> {
    let counts = class_counts(tiles);
    if counts.contains(&0) {
        return Err(Error::invalid(format!(
            "both classes must be present to balance (healthy {}, infected {})",
            counts[0], counts[1]
        )));
    }
    let minority = if counts[0] < counts[1] { 0 } else { 1 };
    let mut deficit = counts[1 - minority].saturating_sub(counts[minority]);
    if deficit == 0 {
        return Ok(Balanced {
            tiles: tiles.to_vec(),
            residual: 0,
        });
    }
    let label = label_of_class(minority);
    let existing: std::collections::HashSet<(usize, u8)> = tiles.iter().map(|t| t.key()).collect();
    let mut sources: Vec<&LabeledTile> = tiles
        .iter()
        .filter(|t| t.label == label && t.is_original())
        .collect();
    sources.sort_by_key(|t| t.id);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // per source, the not-yet-present variants in random order
    let mut queues: Vec<Vec<u8>> = sources
        .iter()
        .map(|s| {
            let mut v: Vec<u8> = (1..8).filter(|&g| !existing.contains(&(s.id, g))).collect();
            v.shuffle(&mut rng);
            v
        })
        .collect();

    let mut out = tiles.to_vec();
    let mut order: Vec<usize> = (0..sources.len()).collect();
    while deficit > 0 && queues.iter().any(|q| !q.is_empty()) {
        order.shuffle(&mut rng);
        for &i in &order {
            if deficit == 0 {
                break;
            }
            if let Some(g) = queues[i].pop() {
                let src = sources[i];
                let plane = Dihedral(g).apply(&src.tile.plane)?;
                out.push(LabeledTile {
                    id: src.id,
                    tile: Tile::new(src.tile.origin, plane, Some(label))?,
                    label,
                    augmented_from: Some(src.id),
                    variant: g,
                });
                deficit -= 1;
            }
        }
    }
    Ok(Balanced {
        tiles: out,
        residual: deficit,
    })
}
