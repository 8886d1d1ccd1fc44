//! Plain-text network checkpoints.
//!
//! ```text
//! dpn-checkpoint v1
//! layers <n>
//! layer <in> <out> <activation>        (n lines)
//! vector <name> <len>                  (zero or more, each followed by one value line)
//! <values>
//! params
//! <weight rows of layer 0, one line per input unit>
//! <bias of layer 0>
//! ...
//! ```
//!
//! Values are written in shortest round-trip exponent form, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::network::{Activation, Layer, Network};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "dpn-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    /// Named auxiliary vectors stored next to the parameters, e.g. input
    /// standardization statistics.
    pub vectors: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(network: Network) -> Self {
        Self {
            network,
            vectors: Vec::new(),
        }
    }

    pub fn vector(&self, name: &str) -> Option<&[f64]> {
        self.vectors.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "layers {}", self.network.layers().len());
        for l in self.network.layers() {
            let _ = writeln!(out, "layer {} {} {}", l.in_width(), l.out_width(), l.activation);
        }
        for (name, values) in &self.vectors {
            let _ = writeln!(out, "vector {name} {}", values.len());
            push_values(&mut out, values);
        }
        out.push_str("params\n");
        for l in self.network.layers() {
            for row in l.weight.row_iter() {
                push_values(&mut out, row);
            }
            push_values(&mut out, l.bias.data());
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };

        let (ln, magic) = next("header")?;
        if magic != MAGIC {
            return Err(err(ln, format!("bad header `{magic}`")));
        }
        let (ln, count_line) = next("layer count")?;
        let n_layers: usize = count_line
            .strip_prefix("layers ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(ln, format!("expected `layers <n>`, got `{count_line}`")))?;

        let mut shapes = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let (ln, l) = next("layer line")?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            match parts.as_slice() {
                ["layer", i, o, act] => {
                    let i: usize = i.parse().map_err(|_| err(ln, "bad input width".into()))?;
                    let o: usize = o.parse().map_err(|_| err(ln, "bad output width".into()))?;
                    let act: Activation = act.parse().map_err(|e: Error| err(ln, e.to_string()))?;
                    shapes.push((i, o, act));
                }
                _ => return Err(err(ln, format!("expected layer line, got `{l}`"))),
            }
        }

        let mut vectors = Vec::new();
        loop {
            let (ln, l) = next("`params` or `vector`")?;
            if l == "params" {
                break;
            }
            let parts: Vec<&str> = l.split_whitespace().collect();
            let ["vector", name, len] = parts.as_slice() else {
                return Err(err(ln, format!("unexpected line `{l}`")));
            };
            let len: usize = len.parse().map_err(|_| err(ln, "bad vector length".into()))?;
            let (ln, vals) = next("vector values")?;
            let values = parse_values(vals, len).map_err(|m| err(ln, m))?;
            vectors.push((name.to_string(), values));
        }

        let mut layers = Vec::with_capacity(n_layers);
        for (i, o, act) in shapes {
            let mut w = Vec::with_capacity(i * o);
            for _ in 0..i {
                let (ln, l) = next("weight row")?;
                w.extend(parse_values(l, o).map_err(|m| err(ln, m))?);
            }
            let (ln, l) = next("bias row")?;
            let b = parse_values(l, o).map_err(|m| err(ln, m))?;
            layers.push(Layer::new(Tensor::matrix(i, o, w)?, Tensor::matrix(1, o, b)?, act)?);
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(err(ln, format!("trailing content `{extra}`")));
        }
        Ok(Self {
            network: Network::new(layers)?,
            vectors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }
}

fn push_values(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{v:e}");
    }
    out.push('\n');
}

fn parse_values(line: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let values = line
        .split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|_| format!("bad number `{tok}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(format!("expected {expected} values, got {}", values.len()));
    }
    Ok(values)
}
