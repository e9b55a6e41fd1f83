use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::EpochStats;

const HEADER: [&str; 6] = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc", "seconds"];

/// Writes `epoch,train_loss,train_acc,val_loss,val_acc,seconds` with nine
/// decimals.
pub fn export_curves(stats: &[EpochStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if stats.is_empty() {
        return Err(Error::invalid("no epochs to export"));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(HEADER).map_err(|e| csv_io(path, e))?;
    for s in stats {
        let f = |v: f64| format!("{v:.9}");
        w.write_record([
            s.epoch.to_string(),
            f(s.train_loss),
            f(s.train_accuracy),
            f(s.val_loss),
            f(s.val_accuracy),
            f(s.wall_time),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

pub fn read_curves(path: impl AsRef<Path>) -> Result<Vec<EpochStats>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || Error::Format(format!("{}: row {} is malformed", path.display(), i + 1));
        if rec.len() != HEADER.len() {
            return Err(bad());
        }
        let num = |j: usize| rec[j].parse::<f64>().map_err(|_| bad());
        out.push(EpochStats {
            epoch: rec[0].parse().map_err(|_| bad())?,
            train_loss: num(1)?,
            train_accuracy: num(2)?,
            val_loss: num(3)?,
            val_accuracy: num(4)?,
            wall_time: num(5)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(n: usize) -> Vec<EpochStats> {
        (1..=n)
            .map(|e| EpochStats {
                epoch: e,
                train_loss: 1.0 / e as f64,
                train_accuracy: 1.0 - 0.3 / e as f64,
                val_loss: 0.7 / (e as f64).sqrt(),
                val_accuracy: 0.5 + 0.004 * e as f64,
                wall_time: 1.234_567_891_2 * e as f64,
            })
            .collect()
    }

    #[test]
    fn hundred_epochs_hundred_and_one_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        export_curves(&curve(100), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 101);
        assert_eq!(text.lines().next().unwrap(), "epoch,train_loss,train_acc,val_loss,val_acc,seconds");
    }

    #[test]
    fn values_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("curve.csv");
        let c = curve(7);
        export_curves(&c, &p).unwrap();
        let back = read_curves(&p).unwrap();
        for (a, b) in c.iter().zip(&back) {
            assert_eq!(a.epoch, b.epoch);
            for (x, y) in [
                (a.train_loss, b.train_loss),
                (a.train_accuracy, b.train_accuracy),
                (a.val_loss, b.val_loss),
                (a.val_accuracy, b.val_accuracy),
                (a.wall_time, b.wall_time),
            ] {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(export_curves(&[], dir.path().join("x.csv")).is_err());
        let e = export_curves(&curve(1), dir.path().join("missing/x.csv")).unwrap_err();
        assert!(matches!(e, Error::Io { .. }));
    }
}
