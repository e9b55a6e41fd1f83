//! The resolved run configuration.
//!
//! Every tunable is a `section.key` entry in [`FIELDS`]. A value comes from
//! a command-line flag if one was given, else from the `--config` file, else
//! from the registry default. The manifest written for each run lists every
//! key with its value and source, and can itself be passed back as a config
//! file.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::celldetect::{DetectParams, HoughParams};
use crate::dataset::SynthParams;
use crate::error::{Error, Result};
use crate::eval::{Protocol, DEFAULT_VAL_FRACTION};
use crate::nn::{ArchitectureSpec, TrainConfig, PRESETS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DefaultValue {
    UInt(u64),
    Float(f64),
    Bool(bool),
    Str(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    UInt(u64),
    Float(f64),
    Bool(bool),
    Str(String),
}

impl Value {
    fn kind(&self) -> &'static str {
        match self {
            Value::UInt(_) => "non-negative integer",
            Value::Float(_) => "number",
            Value::Bool(_) => "boolean",
            Value::Str(_) => "string",
        }
    }

    fn to_toml(&self) -> toml::Value {
        match self {
            Value::UInt(v) => toml::Value::Integer(*v as i64),
            Value::Float(v) => toml::Value::Float(*v),
            Value::Bool(v) => toml::Value::Boolean(*v),
            Value::Str(v) => toml::Value::String(v.clone()),
        }
    }
}

impl From<DefaultValue> for Value {
    fn from(d: DefaultValue) -> Self {
        match d {
            DefaultValue::UInt(v) => Value::UInt(v),
            DefaultValue::Float(v) => Value::Float(v),
            DefaultValue::Bool(v) => Value::Bool(v),
            DefaultValue::Str(v) => Value::Str(v.to_string()),
        }
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::UInt(v)
    }
}

impl From<usize> for Value {
    fn from(v: usize) -> Self {
        Value::UInt(v as u64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<PathBuf> for Value {
    fn from(v: PathBuf) -> Self {
        Value::Str(v.to_string_lossy().into_owned())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_toml())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        }
    }
}

pub struct Field {
    /// `section.key`
    pub key: &'static str,
    /// The command-line flag that sets it.
    pub flag: &'static str,
    pub default: DefaultValue,
    pub help: &'static str,
}

const fn field(key: &'static str, flag: &'static str, default: DefaultValue, help: &'static str) -> Field {
    Field { key, flag, default, help }
}

use DefaultValue::{Bool, Float, Str, UInt};

pub const FIELDS: &[Field] = &[
    field("run.out", "--out", Str("out"), "directory for all artifacts"),
    field("run.seed", "--seed", UInt(0), "master seed"),
    field("input.image", "IMAGE", Str(""), "input smear image (detect, tile)"),
    field("input.truth", "--truth", Str(""), "ground-truth circles CSV (detect)"),
    field("input.tiles", "--tiles", Str(""), "tile directory (train, cv, eval, compare)"),
    field("input.labels", "--labels", Str(""), "tile_file,label CSV (train, cv, eval, compare)"),
    field("input.model", "--model", Str(""), "checkpoint (eval, inspect)"),
    field("input.tile", "--tile", Str(""), "single tile image (inspect)"),
    field("synth.images", "--images", UInt(1), "number of smears"),
    field("synth.cells", "--cells", UInt(40), "cells per smear"),
    field("synth.infected_fraction", "--infected-fraction", Float(0.4), "share of infected cells"),
    field("synth.width", "--width", UInt(512), "smear width"),
    field("synth.height", "--height", UInt(512), "smear height"),
    field("synth.r_min", "--cell-rmin", Float(12.0), "smallest cell radius"),
    field("synth.r_max", "--cell-rmax", Float(30.0), "largest cell radius"),
    field("synth.noise", "--noise", Float(0.03), "additive noise standard deviation"),
    field("detect.sigma", "--sigma", Float(2.0), "blur sigma before gradients"),
    field("detect.r_min", "--rmin", UInt(12), "smallest Hough radius"),
    field("detect.r_max", "--rmax", UInt(30), "largest Hough radius"),
    field("detect.vote_threshold", "--vote-threshold", Float(0.45), "minimum normalised votes"),
    field("detect.nms_radius", "--nms", Float(20.0), "suppression radius"),
    field("detect.margin", "--margin", UInt(3), "clearance between cell rim and tile border"),
    field("detect.match_tol", "--match-tol", Float(5.0), "center and radius tolerance against truth"),
    field("detect.write_tiles", "--write-tiles", Bool(false), "also write complete-cell tiles"),
    field("tile.size", "--tile-size", UInt(71), "tile side in pixels"),
    field("tile.stride", "--stride", UInt(71), "grid tiling stride"),
    field("dataset.protocol", "--protocol", Str("kfold"), "kfold or holdout"),
    field("dataset.k", "--k", UInt(5), "number of folds"),
    field("dataset.val_fraction", "--val-fraction", Float(DEFAULT_VAL_FRACTION), "validation share of a training side"),
    field("dataset.holdout_train", "--holdout-train", Float(632.0 / 1056.0), "holdout training share"),
    field("dataset.holdout_val", "--holdout-val", Float(104.0 / 1056.0), "holdout validation share"),
    field("dataset.balance", "--balance", Bool(true), "balance classes with dihedral variants"),
    field("train.arch", "--arch", Str("vgg-s"), "architecture preset"),
    field("train.epochs", "--epochs", UInt(100), "maximum epochs"),
    field("train.learning_rate", "--lr", Float(1e-4), "SGD learning rate"),
    field("train.momentum", "--momentum", Float(0.9), "SGD momentum"),
    field("train.batch_size", "--batch-size", UInt(128), "minibatch size"),
    field("train.dropout_rate", "--dropout", Float(0.5), "dropout rate"),
    field("train.early_stop", "--early-stop", Bool(false), "stop when validation accuracy stalls"),
    field("train.patience", "--patience", UInt(10), "epochs without improvement before stopping"),
    field("compare.archs", "--archs", Str("alexnet-s,vgg-s"), "comma-separated presets to compare"),
    field("inspect.layer", "--layer", UInt(0), "conv layer index to visualise"),
    field("gradcheck.epsilon", "--epsilon", Float(1e-5), "central-difference step"),
    field("gradcheck.samples", "--samples", UInt(24), "parameters checked per block, 0 for all"),
    field("gradcheck.batch", "--batch", UInt(2), "random tiles per check"),
    field("gradcheck.tolerance", "--tolerance", Float(1e-4), "pass threshold on max relative error"),
];

fn index_of(key: &str) -> Option<usize> {
    FIELDS.iter().position(|f| f.key == key)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    entries: Vec<(Value, Source)>,
}

impl PipelineConfig {
    /// Resolves every field. `file` is the text of a config file; `flags`
    /// are `(key, value)` pairs from the command line.
    pub fn resolve(file: Option<&str>, flags: &[(&str, Value)]) -> Result<Self> {
        let mut entries: Vec<(Value, Source)> = FIELDS.iter().map(|f| (f.default.into(), Source::Default)).collect();
        if let Some(text) = file {
            for (i, v) in parse_file(text)? {
                entries[i] = (v, Source::File);
            }
        }
        for (key, v) in flags {
            let i = index_of(key).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            let v = coerce_value(i, v.clone())?;
            entries[i] = (v, Source::Flag);
        }
        Ok(PipelineConfig { entries })
    }

    pub fn load(file: Option<&Path>, flags: &[(&str, Value)]) -> Result<Self> {
        let text = file
            .map(|p| std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display()))))
            .transpose()?;
        Self::resolve(text.as_deref(), flags).map_err(|e| match (file, e) {
            (Some(p), Error::Config(msg)) => Error::Config(format!("{}: {msg}", p.display())),
            (_, e) => e,
        })
    }

    fn entry(&self, key: &str) -> &(Value, Source) {
        let i = index_of(key).unwrap_or_else(|| panic!("no config field `{key}`"));
        &self.entries[i]
    }

    pub fn value(&self, key: &str) -> &Value {
        &self.entry(key).0
    }

    pub fn source(&self, key: &str) -> Source {
        self.entry(key).1
    }

    pub fn u64(&self, key: &str) -> u64 {
        match self.value(key) {
            Value::UInt(v) => *v,
            other => panic!("`{key}` is a {}", other.kind()),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn f64(&self, key: &str) -> f64 {
        match self.value(key) {
            Value::Float(v) => *v,
            other => panic!("`{key}` is a {}", other.kind()),
        }
    }

    pub fn bool(&self, key: &str) -> bool {
        match self.value(key) {
            Value::Bool(v) => *v,
            other => panic!("`{key}` is a {}", other.kind()),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        match self.value(key) {
            Value::Str(v) => v,
            other => panic!("`{key}` is a {}", other.kind()),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str("run.out"))
    }

    pub fn seed(&self) -> u64 {
        self.u64("run.seed")
    }

    /// A path-valued key; empty means unset.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let s = self.str(key);
        (!s.is_empty()).then(|| PathBuf::from(s))
    }

    /// Like [`path`](Self::path) but the file must be given and exist.
    pub fn input(&self, key: &str) -> Result<PathBuf> {
        let field = &FIELDS[index_of(key).expect("known key")];
        let p = self
            .path(key)
            .ok_or_else(|| Error::Config(format!("missing {} (`{key}`)", field.flag)))?;
        if !p.exists() {
            return Err(Error::Config(format!("{}: no such file or directory", p.display())));
        }
        Ok(p)
    }

    pub fn synth_params(&self) -> SynthParams {
        SynthParams {
            n_cells: self.usize("synth.cells"),
            infected_fraction: self.f64("synth.infected_fraction"),
            width: self.usize("synth.width"),
            height: self.usize("synth.height"),
            r_min: self.f64("synth.r_min"),
            r_max: self.f64("synth.r_max"),
            noise: self.f64("synth.noise"),
            ..SynthParams::default()
        }
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            sigma: self.f64("detect.sigma"),
            hough: HoughParams {
                r_min: self.usize("detect.r_min"),
                r_max: self.usize("detect.r_max"),
                vote_threshold: self.f64("detect.vote_threshold"),
                nms_radius: self.f64("detect.nms_radius"),
            },
            margin: self.usize("detect.margin"),
            match_tol: self.f64("detect.match_tol"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.usize("train.epochs"),
            learning_rate: self.f64("train.learning_rate"),
            dropout_rate: self.f64("train.dropout_rate"),
            batch_size: self.usize("train.batch_size"),
            momentum: self.f64("train.momentum"),
            seed: self.seed(),
            early_stop: self.bool("train.early_stop"),
            patience: self.usize("train.patience"),
        }
    }

    /// The preset named by `train.arch`, sized for `tile.size` tiles.
    pub fn arch(&self) -> Result<ArchitectureSpec> {
        self.arch_named(self.str("train.arch"))
    }

    pub fn arch_named(&self, name: &str) -> Result<ArchitectureSpec> {
        let mut spec = ArchitectureSpec::preset(name, self.f64("train.dropout_rate")).map_err(|_| {
            Error::Config(format!("unknown architecture `{name}` (expected one of {})", PRESETS.join(", ")))
        })?;
        let size = self.usize("tile.size");
        spec.input = [1, size, size];
        spec.shapes()?;
        Ok(spec)
    }

    pub fn compare_archs(&self) -> Vec<String> {
        self.str("compare.archs")
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    pub fn protocol(&self) -> Result<Protocol> {
        match self.str("dataset.protocol") {
            "kfold" => Ok(Protocol::KFold {
                k: self.usize("dataset.k"),
                val_fraction: self.f64("dataset.val_fraction"),
            }),
            "holdout" => Ok(Protocol::Holdout {
                train: self.f64("dataset.holdout_train"),
                val: self.f64("dataset.holdout_val"),
            }),
            other => Err(Error::Config(format!("dataset.protocol must be kfold or holdout, got `{other}`"))),
        }
    }

    /// Checks the preconditions of every stage in `sections`.
    pub fn validate(&self, sections: &[&str]) -> Result<()> {
        for (f, (v, _)) in FIELDS.iter().zip(&self.entries) {
            if let Value::Float(x) = v {
                if !x.is_finite() {
                    return Err(Error::Config(format!("`{}` must be finite", f.key)));
                }
            }
        }
        let bad = |msg: String| Err(Error::Config(msg));
        for &section in sections {
            match section {
                "synth" => {
                    self.synth_params().validate()?;
                    if self.usize("synth.images") == 0 {
                        return bad("synth.images must be >= 1".into());
                    }
                }
                "detect" => {
                    let d = self.detect_params();
                    let h = &d.hough;
                    if !(d.sigma > 0.0) {
                        return bad(format!("detect.sigma must be positive, got {}", d.sigma));
                    }
                    if h.r_min == 0 || h.r_min > h.r_max {
                        return bad(format!("empty radius range [{}, {}]", h.r_min, h.r_max));
                    }
                    if !(h.vote_threshold > 0.0 && h.vote_threshold <= 1.0) {
                        return bad(format!("detect.vote_threshold must lie in (0, 1], got {}", h.vote_threshold));
                    }
                    if h.nms_radius < 0.0 || d.match_tol < 0.0 {
                        return bad("detect.nms_radius and detect.match_tol must be >= 0".into());
                    }
                }
                "tile" => {
                    let (size, stride) = (self.usize("tile.size"), self.usize("tile.stride"));
                    if size == 0 || stride == 0 {
                        return bad("tile.size and tile.stride must be >= 1".into());
                    }
                }
                "cells" => {
                    let d = self.detect_params();
                    let need = 2 * (d.hough.r_max + d.margin);
                    if self.usize("tile.size") < need {
                        return bad(format!(
                            "tile.size {} cannot hold a cell of radius {} with margin {} (needs {need})",
                            self.usize("tile.size"),
                            d.hough.r_max,
                            d.margin
                        ));
                    }
                }
                "dataset" => {
                    self.protocol()?;
                    let v = self.f64("dataset.val_fraction");
                    if !(v > 0.0 && v < 1.0) {
                        return bad(format!("dataset.val_fraction must lie in (0, 1), got {v}"));
                    }
                    let (a, b) = (self.f64("dataset.holdout_train"), self.f64("dataset.holdout_val"));
                    if !(a > 0.0 && b > 0.0 && a + b < 1.0) {
                        return bad(format!("holdout shares {a} + {b} must be positive and leave a test side"));
                    }
                    if self.usize("dataset.k") < 2 {
                        return bad("dataset.k must be >= 2".into());
                    }
                }
                "train" => {
                    self.train_config().validate()?;
                    self.arch()?;
                }
                "compare" => {
                    let archs = self.compare_archs();
                    if archs.is_empty() {
                        return bad("compare.archs names no architecture".into());
                    }
                    for a in &archs {
                        self.arch_named(a)?;
                    }
                }
                "gradcheck" => {
                    if !(self.f64("gradcheck.epsilon") > 0.0) {
                        return bad("gradcheck.epsilon must be positive".into());
                    }
                    if self.usize("gradcheck.batch") == 0 {
                        return bad("gradcheck.batch must be >= 1".into());
                    }
                    if !(self.f64("gradcheck.tolerance") > 0.0) {
                        return bad("gradcheck.tolerance must be positive".into());
                    }
                    self.arch()?;
                }
                other => unreachable!("no validation for section `{other}`"),
            }
        }
        Ok(())
    }

    /// The manifest: every key with its value and source, grouped by
    /// section. Loadable as a config file.
    pub fn manifest(&self, command: &str) -> String {
        let mut out = format!(
            "# smearnet {} `{command}`\n# value and source (default, file or flag) of every setting\n",
            env!("CARGO_PKG_VERSION")
        );
        let mut section = "";
        for (f, (v, src)) in FIELDS.iter().zip(&self.entries) {
            let (sec, key) = f.key.split_once('.').expect("section.key");
            if sec != section {
                out.push_str(&format!("\n[{sec}]\n"));
                section = sec;
            }
            out.push_str(&format!("{key} = {{ value = {v}, source = \"{}\" }}\n", src.as_str()));
        }
        out
    }
}

fn coerce_value(i: usize, v: Value) -> Result<Value> {
    let f = &FIELDS[i];
    let want = Value::from(f.default);
    match (&want, v) {
        (Value::Float(_), Value::UInt(x)) => Ok(Value::Float(x as f64)),
        (Value::UInt(_), Value::UInt(x)) if x > i64::MAX as u64 => {
            Err(Error::Config(format!("`{}` = {x} is out of range", f.key)))
        }
        (w, v) if std::mem::discriminant(w) == std::mem::discriminant(&v) => Ok(v),
        (w, v) => Err(Error::Config(format!("`{}` expects a {}, got a {}", f.key, w.kind(), v.kind()))),
    }
}

fn from_toml(key: &str, raw: &toml::Value) -> Result<Value> {
    Ok(match raw {
        toml::Value::Integer(x) if *x >= 0 => Value::UInt(*x as u64),
        toml::Value::Integer(x) => Value::Float(*x as f64),
        toml::Value::Float(x) => Value::Float(*x),
        toml::Value::Boolean(b) => Value::Bool(*b),
        toml::Value::String(s) => Value::Str(s.clone()),
        other => return Err(Error::Config(format!("`{key}`: unsupported value {other}"))),
    })
}

fn parse_file(text: &str) -> Result<Vec<(usize, Value)>> {
    let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
    let mut out = Vec::new();
    for (section, body) in &table {
        let toml::Value::Table(body) = body else {
            return Err(Error::Config(format!("`{section}` must be a [section] of settings")));
        };
        for (k, raw) in body {
            let key = format!("{section}.{k}");
            let i = index_of(&key).ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
            // manifests store { value = ..., source = ... }
            let raw = match raw {
                toml::Value::Table(t) => {
                    if let Some(extra) = t.keys().find(|k| *k != "value" && *k != "source") {
                        return Err(Error::Config(format!("`{key}`: unknown field `{extra}`")));
                    }
                    t.get("value")
                        .ok_or_else(|| Error::Config(format!("`{key}`: missing `value`")))?
                }
                v => v,
            };
            let v = from_toml(&key, raw)?;
            out.push((i, coerce_value(i, v)?));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_keys_are_unique_and_grouped() {
        let mut seen = std::collections::BTreeSet::new();
        let mut sections = Vec::new();
        for f in FIELDS {
            assert!(seen.insert(f.key), "duplicate {}", f.key);
            let sec = f.key.split_once('.').unwrap().0;
            if sections.last() != Some(&sec) {
                assert!(!sections.contains(&sec), "{sec} split");
                sections.push(sec);
            }
        }
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = "[detect]\nsigma = 3.0\nr_min = 10\n[train]\narch = \"alexnet-s\"\n";
        let c = PipelineConfig::resolve(Some(file), &[("detect.sigma", Value::Float(1.5))]).unwrap();
        assert_eq!(c.f64("detect.sigma"), 1.5);
        assert_eq!(c.source("detect.sigma"), Source::Flag);
        assert_eq!(c.usize("detect.r_min"), 10);
        assert_eq!(c.source("detect.r_min"), Source::File);
        assert_eq!(c.usize("detect.r_max"), 30);
        assert_eq!(c.source("detect.r_max"), Source::Default);
        assert_eq!(c.str("train.arch"), "alexnet-s");
    }

    #[test]
    fn unknown_and_mistyped_keys_rejected() {
        for bad in [
            "[detect]\nsigmaa = 2.0\n",
            "[nope]\nx = 1\n",
            "seed = 3\n",
            "[detect]\nr_min = 1.5\n",
            "[train]\narch = 3\n",
            "[run]\nseed = -1\n",
            "[detect]\nsigma = { value = 1.0, origin = \"x\" }\n",
        ] {
            let e = PipelineConfig::resolve(Some(bad), &[]).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{bad}: {e}");
        }
    }

    #[test]
    fn integers_widen_to_floats() {
        let c = PipelineConfig::resolve(Some("[detect]\nsigma = 3\n"), &[]).unwrap();
        assert_eq!(c.f64("detect.sigma"), 3.0);
    }

    #[test]
    fn manifest_round_trips() {
        let c = PipelineConfig::resolve(
            Some("[train]\nlearning_rate = 0.001\n"),
            &[("run.seed", Value::UInt(7)), ("run.out", Value::Str("a \"b\"".into()))],
        )
        .unwrap();
        let m = c.manifest("cv");
        let back = PipelineConfig::resolve(Some(&m), &[]).unwrap();
        for f in FIELDS {
            assert_eq!(back.value(f.key), c.value(f.key), "{}", f.key);
            assert_eq!(back.source(f.key), Source::File);
        }
        let t: toml::Table = m.parse().unwrap();
        assert_eq!(t["run"]["seed"]["source"].as_str(), Some("flag"));
        assert_eq!(t["train"]["learning_rate"]["source"].as_str(), Some("file"));
        assert_eq!(t["detect"]["sigma"]["source"].as_str(), Some("default"));
    }

    #[test]
    fn defaults_validate() {
        let c = PipelineConfig::resolve(None, &[]).unwrap();
        c.validate(&["synth", "detect", "tile", "cells", "dataset", "train", "compare", "gradcheck"])
            .unwrap();
    }

    #[test]
    fn stage_preconditions() {
        let check = |flags: &[(&str, Value)], sec: &str| {
            PipelineConfig::resolve(None, flags).unwrap().validate(&[sec])
        };
        assert!(check(&[("detect.r_min", Value::UInt(40))], "detect").is_err());
        assert!(check(&[("detect.vote_threshold", Value::Float(1.5))], "detect").is_err());
        assert!(check(&[("tile.size", Value::UInt(60))], "cells").is_err());
        assert!(check(&[("train.arch", Value::Str("resnet".into()))], "train").is_err());
        assert!(check(&[("dataset.protocol", Value::Str("loo".into()))], "dataset").is_err());
        assert!(check(&[("dataset.holdout_train", Value::Float(0.95))], "dataset").is_err());
        assert!(check(&[("train.batch_size", Value::UInt(0))], "train").is_err());
    }
}
