//! Checkpoint files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! b"SMNN" | version: u16 | header_len: u32 | header: UTF-8 architecture text
//! | mean: f64 | parameter blocks: f64 * n, in layer order, weights then bias
//! | sha256 of everything before it: 32 bytes
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::NormalizationStats;
use crate::error::{Error, Result};

use super::spec::ArchitectureSpec;
use super::Network;

const MAGIC: &[u8; 4] = b"SMNN";
pub const CHECKPOINT_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;
const TRAINED_PREFIX: &str = "# trained: ";

pub fn save_checkpoint(net: &Network, stats: &NormalizationStats, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(net, stats)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Network, NormalizationStats)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub(crate) fn encode(net: &Network, stats: &NormalizationStats) -> Vec<u8> {
    let mut header = net.spec().to_text();
    if let Some(note) = &net.trained_with {
        header.push_str(TRAINED_PREFIX);
        header.push_str(note);
        header.push('\n');
    }
    let mut out = Vec::with_capacity(64 + header.len() + 8 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&stats.mean.to_le_bytes());
    for block in net.params() {
        for v in block {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<(Network, NormalizationStats)> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic bytes)".into()));
    }
    if bytes.len() < 6 + DIGEST_LEN {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("digest mismatch (file corrupt or truncated)".into()));
    }
    let mut r = Reader { bytes: body, pos: 6 };
    let len = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header = std::str::from_utf8(r.take(len, "header")?)
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
    let spec = ArchitectureSpec::from_text(header)?;
    let trained_with = header
        .lines()
        .find_map(|l| l.strip_prefix(TRAINED_PREFIX))
        .map(str::to_string);
    let mean = r.f64("mean")?;
    if !mean.is_finite() {
        return Err(Error::Checkpoint(format!("normalisation mean is {mean}")));
    }
    let mut net = Network::build(spec, 0)?;
    net.trained_with = trained_with;
    for block in net.params_mut() {
        for v in block.iter_mut() {
            *v = r.f64("parameters")?;
        }
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected bytes after the parameters",
            body.len() - r.pos
        )));
    }
    Ok((net, NormalizationStats { mean }))
}
