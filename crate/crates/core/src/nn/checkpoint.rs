//! Plain-text network checkpoints.
//!
//! ```text
//! densenet 1
//! dims 4 64 64 1
//! activations tanh sigmoid
//! w0 <out*in values, row-major>
//! b0 <out values>
//! w1 ...
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use super::{Activation, DenseNet};
use crate::{Error, Result};

const MAGIC: &str = "densenet 1";

fn parse_floats(tokens: &[&str]) -> Result<Vec<f64>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad float `{t}`: {e}")))
        })
        .collect()
}

impl DenseNet {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC}").unwrap();
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        writeln!(out, "dims {}", dims.join(" ")).unwrap();
        writeln!(out, "activations {} {}", self.hidden.tag(), self.output.tag()).unwrap();
        for (k, span) in self.spans().iter().enumerate() {
            let w = &self.params[span.weights..span.bias];
            let b = &self.params[span.bias..span.bias + span.outputs];
            let fmt = |xs: &[f64]| xs.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(" ");
            writeln!(out, "w{k} {}", fmt(w)).unwrap();
            writeln!(out, "b{k} {}", fmt(b)).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(Error::Parse("missing densenet header".into()));
        }
        let dims_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing dims line".into()))?;
        let dims_tokens: Vec<&str> = dims_line.split_whitespace().collect();
        if dims_tokens.first() != Some(&"dims") {
            return Err(Error::Parse("expected `dims`".into()));
        }
        let dims = dims_tokens[1..]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("bad dim `{t}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let act_line = lines
            .next()
            .ok_or_else(|| Error::Parse("missing activations line".into()))?;
        let act: Vec<&str> = act_line.split_whitespace().collect();
        if act.len() != 3 || act[0] != "activations" {
            return Err(Error::Parse("expected `activations <hidden> <output>`".into()));
        }
        let mut net = DenseNet::zeros(&dims, Activation::from_tag(act[1])?, Activation::from_tag(act[2])?)?;
        for (k, span) in net.spans().iter().enumerate() {
            for (prefix, start, len) in [
                ("w", span.weights, span.inputs * span.outputs),
                ("b", span.bias, span.outputs),
            ] {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::Parse(format!("missing {prefix}{k}")))?;
                let tokens: Vec<&str> = line.split_whitespace().collect();
                if tokens.first().copied() != Some(format!("{prefix}{k}").as_str()) {
                    return Err(Error::Parse(format!("expected {prefix}{k}")));
                }
                let values = parse_floats(&tokens[1..])?;
                if values.len() != len {
                    return Err(Error::dims("DenseNet::from_text", len, values.len()));
                }
                net.params[start..start + len].copy_from_slice(&values);
            }
        }
        if !net.all_finite() {
            return Err(Error::NonFinite {
                model: "checkpoint".into(),
            });
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
