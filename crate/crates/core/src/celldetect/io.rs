//! CSV files for detections (`cx,cy,r,votes`) and ground truth
//! (`cx,cy,r` with an optional `label` column).

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagecore::Label;

use super::CircleHit;

/// A ground-truth cell, optionally labelled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthCircle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub label: Option<Label>,
}

impl TruthCircle {
    pub fn as_hit(&self) -> CircleHit {
        CircleHit {
            cx: self.cx,
            cy: self.cy,
            r: self.r,
            votes: 1.0,
        }
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_hits_csv(path: impl AsRef<Path>, hits: &[CircleHit]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = String::from("cx,cy,r,votes\n");
    for h in hits {
        body.push_str(&format!("{},{},{},{}\n", h.cx, h.cy, h.r, h.votes));
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Writes `cx,cy,r` or, with `with_labels`, `cx,cy,r,label`.
pub fn write_circles_csv(path: impl AsRef<Path>, circles: &[TruthCircle], with_labels: bool) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut body = String::from(if with_labels { "cx,cy,r,label\n" } else { "cx,cy,r\n" });
    for c in circles {
        if with_labels {
            let label = c
                .label
                .ok_or_else(|| Error::invalid("unlabelled circle in a labelled truth file"))?;
            body.push_str(&format!("{},{},{},{}\n", c.cx, c.cy, c.r, label));
        } else {
            body.push_str(&format!("{},{},{}\n", c.cx, c.cy, c.r));
        }
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Format(format!("{}: missing column `{name}`", path.display())))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, row: usize, path: &Path) -> Result<T> {
    rec.get(idx)
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("{}: bad value on row {row}", path.display())))
}

/// Reads a truth file. The `label` column is optional.
pub fn read_circles_csv(path: impl AsRef<Path>) -> Result<Vec<TruthCircle>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let (ix, iy, ir) = (
        column(&headers, "cx", path)?,
        column(&headers, "cy", path)?,
        column(&headers, "r", path)?,
    );
    let il = headers.iter().position(|h| h.trim() == "label");
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let label = match il {
            Some(i) => Some(
                rec.get(i)
                    .unwrap_or_default()
                    .parse::<Label>()
                    .map_err(|e| Error::Format(format!("{}: row {}: {e}", path.display(), row + 1)))?,
            ),
            None => None,
        };
        out.push(TruthCircle {
            cx: field(&rec, ix, row + 1, path)?,
            cy: field(&rec, iy, row + 1, path)?,
            r: field(&rec, ir, row + 1, path)?,
            label,
        });
    }
    Ok(out)
}

pub fn read_hits_csv(path: impl AsRef<Path>) -> Result<Vec<CircleHit>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols = [
        column(&headers, "cx", path)?,
        column(&headers, "cy", path)?,
        column(&headers, "r", path)?,
        column(&headers, "votes", path)?,
    ];
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        out.push(CircleHit {
            cx: field(&rec, cols[0], row + 1, path)?,
            cy: field(&rec, cols[1], row + 1, path)?,
            r: field(&rec, cols[2], row + 1, path)?,
            votes: field(&rec, cols[3], row + 1, path)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let circles = vec![
            TruthCircle { cx: 1.5, cy: 2.25, r: 13.0, label: Some(Label::Infected) },
            TruthCircle { cx: 100.0, cy: 0.1, r: 29.75, label: Some(Label::Healthy) },
        ];
        write_circles_csv(&p, &circles, true).unwrap();
        assert_eq!(read_circles_csv(&p).unwrap(), circles);
        write_circles_csv(&p, &circles, false).unwrap();
        let plain = read_circles_csv(&p).unwrap();
        assert!(plain.iter().all(|c| c.label.is_none()));
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().next(), Some("cx,cy,r"));
    }

    #[test]
    fn hits_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let hits = vec![CircleHit { cx: 0.1 + 0.2, cy: 7.0, r: 12.5, votes: 0.875 }];
        write_hits_csv(&p, &hits).unwrap();
        assert_eq!(read_hits_csv(&p).unwrap(), hits);
    }

    #[test]
    fn bad_label_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        std::fs::write(&p, "cx,cy,r,label\n1,2,3,healthy\n4,5,6,Parasite\n").unwrap();
        let err = read_circles_csv(&p).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("Parasite"), "{err}");
    }
}
