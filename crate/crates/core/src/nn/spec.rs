//! Architecture descriptions, the two presets and their text form.

use std::fmt;

use crate::error::{Error, Result};

use super::layers::{pool_out, ConvGeom};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    /// Flattens its input.
    Dense {
        out_features: usize,
    },
    Dropout {
        rate: f64,
    },
    /// Marks the logits as class scores; the loss applies the softmax.
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Conv { out_channels, kernel, stride, .. } => {
                out_channels > 0 && kernel > 0 && stride > 0
            }
            LayerSpec::MaxPool { window, stride } => window > 0 && stride > 0,
            LayerSpec::Dense { out_features } => out_features > 0,
            LayerSpec::Dropout { rate } => (0.0..1.0).contains(&rate),
            LayerSpec::Relu | LayerSpec::Softmax => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("invalid layer parameters: {self}")))
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out_channels, kernel, stride, padding } => write!(
                f,
                "conv out={out_channels} kernel={kernel} stride={stride} padding={padding}"
            ),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool { window, stride } => {
                write!(f, "maxpool window={window} stride={stride}")
            }
            LayerSpec::Dense { out_features } => write!(f, "dense out={out_features}"),
            // `{:?}` prints the shortest string that parses back exactly
            LayerSpec::Dropout { rate } => write!(f, "dropout rate={rate:?}"),
            LayerSpec::Softmax => f.write_str("softmax"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureSpec {
    pub name: String,
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
    pub class_count: usize,
}

pub const PRESETS: [&str; 2] = ["alexnet-s", "vgg-s"];

fn conv(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> [LayerSpec; 2] {
    [
        LayerSpec::Conv { out_channels, kernel, stride, padding },
        LayerSpec::Relu,
    ]
}

const POOL: LayerSpec = LayerSpec::MaxPool { window: 2, stride: 2 };

impl ArchitectureSpec {
    /// `alexnet-s` or `vgg-s`, for 71x71 single-channel tiles and two
    /// classes.
    pub fn preset(name: &str, dropout_rate: f64) -> Result<Self> {
        let mut layers = Vec::new();
        match name {
            "alexnet-s" => {
                layers.extend(conv(16, 9, 2, 0));
                layers.push(POOL);
                layers.extend(conv(32, 5, 1, 2));
                layers.push(POOL);
                layers.extend(conv(48, 3, 1, 1));
                layers.extend(conv(48, 3, 1, 1));
                layers.extend(conv(32, 3, 1, 1));
                layers.push(POOL);
                layers.extend([
                    LayerSpec::Dense { out_features: 128 },
                    LayerSpec::Relu,
                    LayerSpec::Dropout { rate: dropout_rate },
                    LayerSpec::Dense { out_features: 64 },
                    LayerSpec::Relu,
                    LayerSpec::Dropout { rate: dropout_rate },
                ]);
            }
            "vgg-s" => {
                for (reps, ch) in [(2, 8), (2, 16), (3, 32), (3, 64), (3, 64)] {
                    for _ in 0..reps {
                        layers.extend(conv(ch, 3, 1, 1));
                    }
                    layers.push(POOL);
                }
                layers.extend([
                    LayerSpec::Dense { out_features: 128 },
                    LayerSpec::Relu,
                    LayerSpec::Dropout { rate: dropout_rate },
                ]);
            }
            other => {
                return Err(Error::invalid(format!(
                    "unknown architecture {other:?}; presets are {}",
                    PRESETS.join(", ")
                )))
            }
        }
        layers.extend([LayerSpec::Dense { out_features: 2 }, LayerSpec::Softmax]);
        let spec = ArchitectureSpec {
            name: name.to_string(),
            input: [1, 71, 71],
            layers,
            class_count: 2,
        };
        spec.shapes()?;
        Ok(spec)
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count()
    }

    /// Output shape of every layer (without the batch axis). Fails naming
    /// the first layer whose input it cannot accept, or if the network does
    /// not end in `[class_count]`.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let fail = |i: usize, l: &LayerSpec, why: String| {
            Err(Error::Shape(format!("layer {i} ({l}): {why}")))
        };
        if self.input.iter().any(|&d| d == 0) || self.class_count == 0 {
            return Err(Error::Shape(format!(
                "input {:?} and class count {} must be nonzero",
                self.input, self.class_count
            )));
        }
        let mut shape = self.input.to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            l.validate()?;
            shape = match *l {
                LayerSpec::Conv { out_channels, kernel, stride, padding } => {
                    let [c, h, w] = shape[..] else {
                        return fail(i, l, format!("needs a [c, h, w] input, got {shape:?}"));
                    };
                    let geom = ConvGeom {
                        in_c: c,
                        in_h: h,
                        in_w: w,
                        out_c: out_channels,
                        kernel,
                        stride,
                        padding,
                    };
                    if let Err(e) = geom.validate() {
                        return fail(i, l, e.to_string());
                    }
                    vec![out_channels, geom.out_h(), geom.out_w()]
                }
                LayerSpec::MaxPool { window, stride } => {
                    let [c, h, w] = shape[..] else {
                        return fail(i, l, format!("needs a [c, h, w] input, got {shape:?}"));
                    };
                    if window > h || window > w {
                        return fail(i, l, format!("window larger than {h}x{w}"));
                    }
                    vec![c, pool_out(h, window, stride), pool_out(w, window, stride)]
                }
                LayerSpec::Dense { out_features } => vec![out_features],
                LayerSpec::Softmax => {
                    if i + 1 != self.layers.len() || shape.len() != 1 {
                        return fail(i, l, "softmax must be the last layer, after a dense".into());
                    }
                    shape
                }
                LayerSpec::Relu | LayerSpec::Dropout { .. } => shape,
            };
            out.push(shape.clone());
        }
        if shape != [self.class_count] {
            return Err(Error::Shape(format!(
                "network ends in {shape:?}, expected [{}]",
                self.class_count
            )));
        }
        Ok(out)
    }

    /// Line-oriented text form, parsed back by [`from_text`](Self::from_text).
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "name {}\ninput {} {} {}\nclasses {}\n",
            self.name, self.input[0], self.input[1], self.input[2], self.class_count
        );
        for l in &self.layers {
            s.push_str(&l.to_string());
            s.push('\n');
        }
        s
    }

    /// Parses the text form. Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut name = None;
        let mut input = None;
        let mut classes = None;
        let mut layers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Format(format!("architecture line {}: {msg}", n + 1));
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            let num = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| err(format!("expected an integer, got {s:?}")))
            };
            let kv = |key: &str| -> Result<&str> {
                rest.iter()
                    .find_map(|w| w.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                    .ok_or_else(|| err(format!("{head}: missing {key}=")))
            };
            match head {
                "name" => name = Some(rest.join(" ")),
                "input" => {
                    if rest.len() != 3 {
                        return Err(err("input needs channels height width".into()));
                    }
                    input = Some([num(rest[0])?, num(rest[1])?, num(rest[2])?]);
                }
                "classes" => classes = Some(num(rest.first().copied().unwrap_or(""))?),
                "conv" => layers.push(LayerSpec::Conv {
                    out_channels: num(kv("out")?)?,
                    kernel: num(kv("kernel")?)?,
                    stride: num(kv("stride")?)?,
                    padding: num(kv("padding")?)?,
                }),
                "relu" => layers.push(LayerSpec::Relu),
                "maxpool" => layers.push(LayerSpec::MaxPool {
                    window: num(kv("window")?)?,
                    stride: num(kv("stride")?)?,
                }),
                "dense" => layers.push(LayerSpec::Dense { out_features: num(kv("out")?)? }),
                "dropout" => {
                    let r = kv("rate")?;
                    let rate = r.parse().map_err(|_| err(format!("bad rate {r:?}")))?;
                    layers.push(LayerSpec::Dropout { rate });
                }
                "softmax" => layers.push(LayerSpec::Softmax),
                other => return Err(err(format!("unknown layer kind {other:?}"))),
            }
        }
        let spec = ArchitectureSpec {
            name: name.ok_or_else(|| Error::Format("architecture: missing name".into()))?,
            input: input.ok_or_else(|| Error::Format("architecture: missing input".into()))?,
            layers,
            class_count: classes
                .ok_or_else(|| Error::Format("architecture: missing classes".into()))?,
        };
        spec.shapes()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernels(spec: &ArchitectureSpec) -> Vec<usize> {
        spec.layers
            .iter()
            .filter_map(|l| match l {
                LayerSpec::Conv { kernel, .. } => Some(*kernel),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn vgg_s_chain() {
        let s = ArchitectureSpec::preset("vgg-s", 0.5).unwrap();
        assert_eq!(s.conv_count(), 13);
        assert!(kernels(&s).iter().all(|&k| k == 3));
        let pooled: Vec<usize> = s
            .layers
            .iter()
            .zip(s.shapes().unwrap())
            .filter(|(l, _)| matches!(l, LayerSpec::MaxPool { .. }))
            .map(|(_, sh)| sh[1])
            .collect();
        assert_eq!(pooled, [35, 17, 8, 4, 2]);
        assert_eq!(s.shapes().unwrap().last().unwrap(), &[2]);
    }

    #[test]
    fn alexnet_s_chain() {
        let s = ArchitectureSpec::preset("alexnet-s", 0.5).unwrap();
        assert_eq!(s.conv_count(), 5);
        assert_eq!(kernels(&s), [9, 5, 3, 3, 3]);
        let shapes = s.shapes().unwrap();
        assert_eq!(shapes[0], [16, 32, 32]);
        let flat = s.layers.iter().position(|l| matches!(l, LayerSpec::Dense { .. })).unwrap();
        assert_eq!(shapes[flat - 1], [32, 4, 4]);
    }

    #[test]
    fn unknown_preset() {
        assert!(ArchitectureSpec::preset("resnet", 0.5).is_err());
    }

    #[test]
    fn text_round_trip() {
        for name in PRESETS {
            let s = ArchitectureSpec::preset(name, 0.3).unwrap();
            assert_eq!(ArchitectureSpec::from_text(&s.to_text()).unwrap(), s);
        }
    }

    #[test]
    fn bad_shapes_name_the_layer() {
        let mut s = ArchitectureSpec::preset("vgg-s", 0.5).unwrap();
        s.layers.insert(0, LayerSpec::Conv { out_channels: 4, kernel: 80, stride: 1, padding: 0 });
        let e = s.shapes().unwrap_err().to_string();
        assert!(e.contains("layer 0"), "{e}");
        let mut t = ArchitectureSpec::preset("vgg-s", 0.5).unwrap();
        t.class_count = 3;
        assert!(t.shapes().is_err());
        let mut d = ArchitectureSpec::preset("vgg-s", 0.5).unwrap();
        d.layers.push(LayerSpec::Relu);
        assert!(d.shapes().is_err());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = ArchitectureSpec::from_text("name x\ninput 1 8 8\nclasses 2\npool 2\n")
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 4"), "{e}");
        let ok = "name tiny\ninput 1 8 8\nclasses 2\n# comment\nconv out=2 kernel=3 stride=1 padding=1\nrelu\ndense out=2\nsoftmax\n";
        assert_eq!(ArchitectureSpec::from_text(ok).unwrap().conv_count(), 1);
    }
}
