//! Versioned plain-text model format.
//!
//! ```text
//! dataview-model
//! version 1
//! class 2                  <- optional header fields (`key value`)
//! noise_size 8
//! layers 2
//! dense 3 4 relu
//! weights <12 numbers, row-major>
//! bias <4 numbers>
//! dense 4 2 softmax
//! weights <8 numbers>
//! bias <2 numbers>
//! ```
//!
//! Numbers are printed in scientific notation with 17 significant digits,
//! which round-trips every `f64` exactly. Tokens on a line are separated by
//! single spaces and every line ends with `\n`.

use std::fmt::Write as _;

use thiserror::Error;

use super::{Activation, DenseLayer, Mlp, NetError};

pub const BLOB_VERSION: u32 = 1;
const MAGIC: &str = "dataview-model";

#[derive(Debug, Error, PartialEq)]
pub enum BlobError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unexpected end of model blob at byte {offset} (expected {expected})")]
    Truncated { offset: usize, expected: String },
    #[error("unsupported model blob version {0} (this build reads version {BLOB_VERSION})")]
    UnsupportedVersion(String),
    #[error("model blob describes an invalid network: {0}")]
    Invalid(#[from] NetError),
}

/// A decoded blob: the network plus any extra header fields in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBlob {
    pub net: Mlp,
    pub header: Vec<(String, String)>,
}

impl ModelBlob {
    pub fn header_value(&self, key: &str) -> Option<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn push_numbers(out: &mut String, label: &str, values: &[f64]) {
    out.push_str(label);
    for v in values {
        let _ = write!(out, " {v:.16e}");
    }
    out.push('\n');
}

/// Serializes a network with no extra header fields.
pub fn serialize(net: &Mlp) -> String {
    serialize_with_header(net, &[])
}

pub fn serialize_with_header(net: &Mlp, header: &[(&str, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "version {BLOB_VERSION}");
    for (k, v) in header {
        let _ = writeln!(out, "{k} {v}");
    }
    let _ = writeln!(out, "layers {}", net.layers().len());
    for l in net.layers() {
        let _ = writeln!(out, "dense {} {} {}", l.in_dim, l.out_dim, l.activation.name());
        push_numbers(&mut out, "weights", &l.weights);
        push_numbers(&mut out, "bias", &l.bias);
    }
    out
}

struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

struct Line<'a> {
    offset: usize,
    content: &'a str,
}

impl<'a> Line<'a> {
    fn err(&self, message: impl Into<String>) -> BlobError {
        BlobError::Parse {
            offset: self.offset,
            message: message.into(),
        }
    }

    /// Splits into keyword and remaining tokens, each tagged with its byte
    /// offset.
    fn tokens(&self) -> Vec<(usize, &'a str)> {
        let mut toks = Vec::new();
        let mut start = None;
        for (i, ch) in self.content.char_indices() {
            if ch == ' ' {
                if let Some(s) = start.take() {
                    toks.push((self.offset + s, &self.content[s..i]));
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            toks.push((self.offset + s, &self.content[s..]));
        }
        toks
    }

    fn keyword(&self, expected: &str) -> Result<Vec<(usize, &'a str)>, BlobError> {
        let toks = self.tokens();
        match toks.first() {
            Some((_, k)) if *k == expected => Ok(toks[1..].to_vec()),
            Some((off, k)) => Err(BlobError::Parse {
                offset: *off,
                message: format!("expected `{expected}`, found `{k}`"),
            }),
            None => Err(self.err(format!("expected `{expected}`, found an empty line"))),
        }
    }
}

impl<'a> Lines<'a> {
    fn next(&mut self, expected: &str) -> Result<Line<'a>, BlobError> {
        if self.pos >= self.text.len() {
            return Err(BlobError::Truncated {
                offset: self.pos,
                expected: expected.into(),
            });
        }
        let rest = &self.text[self.pos..];
        let Some(end) = rest.find('\n') else {
            // every line, including the last, must be terminated
            return Err(BlobError::Truncated {
                offset: self.text.len(),
                expected: format!("line terminator after {expected}"),
            });
        };
        let line = Line {
            offset: self.pos,
            content: &rest[..end],
        };
        self.pos += end + 1;
        Ok(line)
    }
}

fn parse_usize(tok: (usize, &str)) -> Result<usize, BlobError> {
    tok.1.parse().map_err(|_| BlobError::Parse {
        offset: tok.0,
        message: format!("`{}` is not a non-negative integer", tok.1),
    })
}

fn parse_numbers(toks: &[(usize, &str)], expected: usize, line: &Line) -> Result<Vec<f64>, BlobError> {
    if toks.len() != expected {
        return Err(line.err(format!("expected {expected} numbers, found {}", toks.len())));
    }
    toks.iter()
        .map(|&(off, t)| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| BlobError::Parse {
                    offset: off,
                    message: format!("`{t}` is not a finite number"),
                })
        })
        .collect()
}

/// Parses a blob. Either the whole network is returned or an error; no
/// partially-built network ever escapes.
pub fn deserialize(text: &str) -> Result<ModelBlob, BlobError> {
    let mut lines = Lines { text, pos: 0 };

    let magic = lines.next("magic line")?;
    if magic.content != MAGIC {
        return Err(magic.err(format!("expected `{MAGIC}` header")));
    }
    let version_line = lines.next("version")?;
    let v = version_line.keyword("version")?;
    let [(voff, version)] = v[..] else {
        return Err(version_line.err("expected `version <n>`"));
    };
    if version != BLOB_VERSION.to_string() {
        if version.parse::<u32>().is_err() {
            return Err(BlobError::Parse {
                offset: voff,
                message: format!("`{version}` is not a version number"),
            });
        }
        return Err(BlobError::UnsupportedVersion(version.to_string()));
    }

    let mut header = Vec::new();
    let layer_count = loop {
        let line = lines.next("`layers`")?;
        let toks = line.tokens();
        match toks[..] {
            [(_, "layers"), n] => break parse_usize(n)?,
            [(_, key), (_, value)] => header.push((key.to_string(), value.to_string())),
            _ => return Err(line.err("expected `key value` header field or `layers <n>`")),
        }
    };

    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let line = lines.next("`dense`")?;
        let toks = line.keyword("dense")?;
        let [i, o, (aoff, act)] = toks[..] else {
            return Err(line.err("expected `dense <in> <out> <activation>`"));
        };
        let in_dim = parse_usize(i)?;
        let out_dim = parse_usize(o)?;
        let activation = Activation::from_name(act).ok_or_else(|| BlobError::Parse {
            offset: aoff,
            message: format!("unknown activation `{act}`"),
        })?;
        let wline = lines.next("`weights`")?;
        let weights = parse_numbers(&wline.keyword("weights")?, in_dim * out_dim, &wline)?;
        let bline = lines.next("`bias`")?;
        let bias = parse_numbers(&bline.keyword("bias")?, out_dim, &bline)?;
        layers.push(DenseLayer {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        });
    }
    if lines.pos != text.len() {
        return Err(BlobError::Parse {
            offset: lines.pos,
            message: "trailing content after last layer".into(),
        });
    }
    Ok(ModelBlob {
        net: Mlp::from_layers(layers)?,
        header,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        Mlp::random(&[3, 4, 2], Activation::Relu, Activation::Softmax, &mut rng).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let n = net();
        let back = deserialize(&serialize(&n)).unwrap();
        assert_eq!(back.net, n);
        assert!(back.header.is_empty());
    }

    #[test]
    fn header_fields_survive() {
        let blob = serialize_with_header(&net(), &[("class", "1".into()), ("noise_size", "3".into())]);
        let back = deserialize(&blob).unwrap();
        assert_eq!(back.header_value("class"), Some("1"));
        assert_eq!(back.header_value("noise_size"), Some("3"));
    }

    #[test]
    fn truncation_is_an_error() {
        let blob = serialize(&net());
        for cut in [0, 10, blob.len() / 2, blob.len() - 1] {
            let err = deserialize(&blob[..cut]).unwrap_err();
            assert!(
                matches!(err, BlobError::Truncated { .. } | BlobError::Parse { .. }),
                "cut {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn unknown_version() {
        let blob = serialize(&net()).replacen("version 1", "version 7", 1);
        assert_eq!(
            deserialize(&blob).unwrap_err(),
            BlobError::UnsupportedVersion("7".into())
        );
    }

    #[test]
    fn bad_number_reports_offset() {
        let blob = serialize(&net());
        let at = blob.find("bias ").unwrap() + 5;
        let mut broken = blob.clone();
        broken.replace_range(at..at + 1, "x");
        match deserialize(&broken).unwrap_err() {
            BlobError::Parse { offset, .. } => assert_eq!(offset, at),
            e => panic!("{e:?}"),
        }
    }
}
