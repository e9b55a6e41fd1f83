use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagecore::{load_raster, Label, Tile};

/// A tile with its class.
///
/// Originals have `variant == 0` and no `augmented_from`. An augmented tile
/// shares its source's `id`, records it in `augmented_from`, and carries a
/// non-identity dihedral `variant`; `(id, variant)` is unique.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTile {
    pub id: usize,
    pub tile: Tile,
    pub label: Label,
    pub augmented_from: Option<usize>,
    pub variant: u8,
}

impl LabeledTile {
    pub fn original(id: usize, mut tile: Tile, label: Label) -> Self {
        tile.label = Some(label);
        LabeledTile {
            id,
            tile,
            label,
            augmented_from: None,
            variant: 0,
        }
    }

    pub fn is_original(&self) -> bool {
        self.variant == 0
    }

    /// Id of the original this tile derives from (itself for originals).
    pub fn source_id(&self) -> usize {
        self.augmented_from.unwrap_or(self.id)
    }

    pub fn key(&self) -> (usize, u8) {
        (self.source_id(), self.variant)
    }
}

/// `<stem>_x<ox>_y<oy>.pgm`
pub fn tile_file_name(stem: &str, origin: (usize, usize)) -> String {
    format!("{stem}_x{}_y{}.pgm", origin.0, origin.1)
}

/// Recovers the origin encoded by [`tile_file_name`].
pub fn parse_tile_origin(name: &str) -> Option<(usize, usize)> {
    let base = name.rsplit_once('.').map_or(name, |(b, _)| b);
    let (rest, y) = base.rsplit_once("_y")?;
    let (_, x) = rest.rsplit_once("_x")?;
    Some((x.parse().ok()?, y.parse().ok()?))
}

/// Loads `tile_file,label` rows, resolving files against `tile_dir`. Every
/// tile must be `tile_size` square. Ids are row indices.
pub fn load_annotations(
    tile_dir: impl AsRef<Path>,
    labels_csv: impl AsRef<Path>,
    tile_size: usize,
) -> Result<Vec<LabeledTile>> {
    let (tile_dir, labels_csv) = (tile_dir.as_ref(), labels_csv.as_ref());
    let mut rdr = csv::Reader::from_path(labels_csv)?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| {
            Error::Format(format!("{}: missing column `{name}`", labels_csv.display()))
        })
    };
    let (ifile, ilabel) = (col("tile_file")?, col("label")?);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = row + 1;
        let file = rec.get(ifile).unwrap_or_default().trim();
        let raw_label = rec.get(ilabel).unwrap_or_default();
        let label: Label = raw_label.parse().map_err(|_| {
            Error::Format(format!(
                "{}: row {row_no} ({file}): unknown label {raw_label:?}",
                labels_csv.display()
            ))
        })?;
        let raster = load_raster(tile_dir.join(file))?;
        if raster.width() != tile_size || raster.height() != tile_size {
            return Err(Error::Format(format!(
                "{}: row {row_no}: tile {file} is {}x{}, expected {tile_size}x{tile_size}",
                labels_csv.display(),
                raster.width(),
                raster.height()
            )));
        }
        let origin = parse_tile_origin(file).unwrap_or((0, 0));
        let tile = Tile::new(origin, raster.to_float(), Some(label))?;
        out.push(LabeledTile::original(row, tile, label));
    }
    Ok(out)
}

pub fn write_labels_csv(path: impl AsRef<Path>, rows: &[(String, Label)]) -> Result<()> {
    let path = path.as_ref();
    let mut body = String::from("tile_file,label\n");
    for (file, label) in rows {
        body.push_str(&format!("{file},{label}\n"));
    }
    File::create(path)
        .and_then(|mut f| f.write_all(body.as_bytes()))
        .map_err(|e| Error::io(path, e))
}
