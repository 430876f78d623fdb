//! Versioned plain-text checkpoints.
//!
//! ```text
//! pgnkit-checkpoint v1
//! kind agent
//! meta env minipong
//! network q 3
//! layer 144 128 relu
//! w <input_dim * output_dim values, row-major>
//! b <output_dim values>
//! ...
//! end
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! `parse(to_text(c)) == c` exactly.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::network::{Activation, DenseNetwork, Layer};
use crate::error::{Error, Result};

pub const MAGIC: &str = "pgnkit-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: Vec<(String, String)>,
    pub networks: Vec<(String, DenseNetwork)>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            meta: Vec::new(),
            networks: Vec::new(),
        }
    }

    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.meta.push((key.into(), value.to_string()));
    }

    pub fn push_network(&mut self, name: impl Into<String>, net: DenseNetwork) {
        self.networks.push((name.into(), net));
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn meta_parse<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .meta(key)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing `{key}`")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("checkpoint field `{key}` has bad value `{raw}`")))
    }

    pub fn network(&self, name: &str) -> Option<&DenseNetwork> {
        self.networks.iter().find(|(n, _)| n == name).map(|(_, net)| net)
    }

    pub fn require_network(&self, name: &str) -> Result<&DenseNetwork> {
        self.network(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing network `{name}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )))
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC} v{VERSION}").unwrap();
        writeln!(out, "kind {}", self.kind).unwrap();
        for (k, v) in &self.meta {
            writeln!(out, "meta {k} {v}").unwrap();
        }
        for (name, net) in &self.networks {
            writeln!(out, "network {name} {}", net.layers().len()).unwrap();
            for layer in net.layers() {
                writeln!(
                    out,
                    "layer {} {} {}",
                    layer.input_dim(),
                    layer.output_dim(),
                    layer.activation()
                )
                .unwrap();
                write_values(&mut out, "w", layer.weights());
                write_values(&mut out, "b", layer.bias());
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Format("empty checkpoint".into()))?;
        let expected_header = format!("{MAGIC} v{VERSION}");
        if header.trim() != expected_header {
            return Err(Error::Format(format!(
                "unsupported header `{header}` (expected `{expected_header}`)"
            )));
        }
        let kind = lines
            .next()
            .and_then(|l| l.strip_prefix("kind "))
            .ok_or_else(|| Error::Format("missing `kind` line".into()))?
            .trim()
            .to_string();
        let mut ckpt = Checkpoint::new(kind);
        let mut ended = false;
        while let Some(line) = lines.next() {
            if line == "end" {
                ended = true;
                break;
            } else if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ckpt.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("network ") {
                let mut parts = rest.split_whitespace();
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Format("network without name".into()))?;
                let count: usize = parse_token(parts.next(), "layer count")?;
                let mut layers = Vec::with_capacity(count);
                for _ in 0..count {
                    layers.push(parse_layer(&mut lines)?);
                }
                ckpt.networks.push((name.to_string(), DenseNetwork::new(layers)?));
            } else {
                return Err(Error::Format(format!("unexpected line `{line}`")));
            }
        }
        if !ended {
            return Err(Error::Format("truncated checkpoint (no `end`)".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Saves a bare network.
pub fn save_network(net: &DenseNetwork, path: impl AsRef<Path>) -> Result<()> {
    let mut c = Checkpoint::new("network");
    c.push_network("net", net.clone());
    c.save(path)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<DenseNetwork> {
    let c = Checkpoint::load(path)?;
    c.expect_kind("network")?;
    Ok(c.require_network("net")?.clone())
}

fn write_values(out: &mut String, tag: &str, values: &[f64]) {
    out.push_str(tag);
    for v in values {
        write!(out, " {v:?}").unwrap();
    }
    out.push('\n');
}

fn parse_token<T: FromStr>(tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Format(format!("missing {what}")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad {what}")))
}

fn parse_values(line: Option<&str>, tag: &str) -> Result<Vec<f64>> {
    let line = line.ok_or_else(|| Error::Format(format!("missing `{tag}` row")))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::Format(format!("expected `{tag}` row, got `{line}`")));
    }
    parts
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number `{t}`")))
        })
        .collect()
}

fn parse_layer<'a>(lines: &mut impl Iterator<Item = &'a str>) -> Result<Layer> {
    let head = lines
        .next()
        .ok_or_else(|| Error::Format("missing layer header".into()))?;
    let mut parts = head.split_whitespace();
    if parts.next() != Some("layer") {
        return Err(Error::Format(format!("expected layer header, got `{head}`")));
    }
    let input_dim: usize = parse_token(parts.next(), "layer input dim")?;
    let output_dim: usize = parse_token(parts.next(), "layer output dim")?;
    let activation = Activation::from_str(
        parts
            .next()
            .ok_or_else(|| Error::Format("missing activation".into()))?,
    )?;
    let weights = parse_values(lines.next(), "w")?;
    let bias = parse_values(lines.next(), "b")?;
    Layer::new(input_dim, output_dim, weights, bias, activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_value_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net =
            DenseNetwork::xavier(&[6, 5, 3], Activation::Relu, Activation::Identity, &mut rng)
                .unwrap();
        let mut c = Checkpoint::new("agent");
        c.push_meta("env", "minipong");
        c.push_meta("note", "two words");
        c.push_network("q", net.clone());
        let back = Checkpoint::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.meta("note"), Some("two words"));
        assert_eq!(back.network("q").unwrap(), &net);
    }

    #[test]
    fn rejects_bad_header_and_truncation() {
        assert!(Checkpoint::parse("pgnkit-checkpoint v9\nkind x\nend\n").is_err());
        let mut c = Checkpoint::new("network");
        c.push_network("net", DenseNetwork::zeros(&[2, 2], Activation::Relu, Activation::Tanh).unwrap());
        let text = c.to_text();
        assert!(Checkpoint::parse(text.trim_end_matches("end\n")).is_err());
        assert!(Checkpoint::parse(&text.replace("tanh", "swish")).is_err());
    }

    #[test]
    fn bare_network_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = DenseNetwork::zeros(&[3, 1], Activation::Relu, Activation::Sigmoid).unwrap();
        save_network(&net, &path).unwrap();
        assert_eq!(load_network(&path).unwrap(), net);
    }
}
