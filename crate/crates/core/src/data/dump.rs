//! Activation dump files.
//!
//! Binary layout (all integers little-endian):
//!
//! | bytes            | content                                         |
//! |------------------|-------------------------------------------------|
//! | 8                | magic `HNACTDMP`                                |
//! | 4                | `u32` format version, currently 1               |
//! | 8                | `u64` header length `H` in bytes                |
//! | H                | UTF-8 JSON header                               |
//! | L × S × d × 4    | one row-major `f32` blob per layer              |
//!
//! The header carries `model_name`, `num_layers`, `hidden_dim`,
//! `num_samples`, `pooling`, `labels` (0/1) and `sample_ids`, plus an
//! optional `metadata` object.
//!
//! A text variant for small hand-written fixtures is a single JSON object
//! with `"magic": "HNACTDMP"`, `"version": 1`, the same header fields and a
//! `layers` array whose entries are either `S` rows of `d` decimal numbers or
//! a base64 string of the little-endian `f32` blob. [`read_dump`] tells the
//! two apart by the leading bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{ActivationSet, Label, Pooling};
use crate::error::{Error, Result};

pub const DUMP_MAGIC: &[u8; 8] = b"HNACTDMP";
pub const DUMP_VERSION: u32 = 1;

const PREAMBLE_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model_name: String,
    num_layers: usize,
    hidden_dim: usize,
    num_samples: usize,
    pooling: Pooling,
    labels: Vec<u8>,
    sample_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    metadata: serde_json::Map<String, serde_json::Value>,
}

impl Header {
    fn of(set: &ActivationSet) -> Self {
        Header {
            model_name: set.model_name().to_owned(),
            num_layers: set.num_layers(),
            hidden_dim: set.hidden_dim(),
            num_samples: set.num_samples(),
            pooling: set.pooling(),
            labels: set.labels().iter().map(|l| l.bit()).collect(),
            sample_ids: set.sample_ids().to_vec(),
            metadata: set.metadata().clone(),
        }
    }

    fn validate(&self) -> Result<Vec<Label>> {
        if self.labels.len() != self.num_samples {
            return Err(Error::DimensionMismatch(format!(
                "header declares {} samples but lists {} labels",
                self.num_samples,
                self.labels.len()
            )));
        }
        if self.sample_ids.len() != self.num_samples {
            return Err(Error::DimensionMismatch(format!(
                "header declares {} samples but lists {} sample ids",
                self.num_samples,
                self.sample_ids.len()
            )));
        }
        self.labels.iter().map(|&b| Label::from_bit(b)).collect()
    }

    fn layer_len(&self) -> usize {
        self.num_samples * self.hidden_dim
    }

    fn into_set(self, layers: Vec<Vec<f32>>) -> Result<ActivationSet> {
        let labels = self.validate()?;
        let set = ActivationSet::new(
            self.model_name,
            self.pooling,
            self.hidden_dim,
            labels,
            self.sample_ids,
            layers,
        )?;
        Ok(set.with_metadata(self.metadata))
    }
}

/// Writes `set` in the binary dump format.
pub fn write_dump(set: &ActivationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header =
        serde_json::to_vec(&Header::of(set)).map_err(|e| Error::Header(e.to_string()))?;
    let payload_len = set.num_layers() * set.num_samples() * set.hidden_dim() * 4;
    let mut buf = Vec::with_capacity(PREAMBLE_LEN + header.len() + payload_len);
    buf.extend_from_slice(DUMP_MAGIC);
    buf.extend_from_slice(&DUMP_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for layer in set.layers() {
        for v in layer {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a binary or text dump, detected from the leading bytes.
pub fn read_dump(path: impl AsRef<Path>) -> Result<ActivationSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dump(&bytes)
}

/// Parses either dump variant from memory.
pub fn parse_dump(bytes: &[u8]) -> Result<ActivationSet> {
    if bytes.starts_with(DUMP_MAGIC) {
        return parse_binary(bytes);
    }
    match bytes.iter().find(|b| !b.is_ascii_whitespace()) {
        Some(b'{') => parse_text(bytes),
        _ if !bytes.is_empty() && DUMP_MAGIC.starts_with(bytes) => Err(Error::TruncatedPayload {
            expected: PREAMBLE_LEN as u64,
            found: bytes.len() as u64,
        }),
        _ => Err(Error::BadMagic),
    }
}

fn parse_binary(bytes: &[u8]) -> Result<ActivationSet> {
    let truncated = |expected: usize| Error::TruncatedPayload {
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < PREAMBLE_LEN {
        return Err(truncated(PREAMBLE_LEN));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != DUMP_VERSION {
        return Err(Error::VersionMismatch {
            expected: DUMP_VERSION,
            found: version,
        });
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(PREAMBLE_LEN))
        .ok_or_else(|| Error::Header(format!("header length {header_len} is not addressable")))?;
    if bytes.len() < header_end {
        return Err(truncated(header_end));
    }
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE_LEN..header_end])
        .map_err(|e| Error::Header(e.to_string()))?;
    header.validate()?;

    let layer_bytes = header
        .layer_len()
        .checked_mul(4)
        .ok_or_else(|| Error::DimensionMismatch("payload size overflows".into()))?;
    let expected = header_end + header.num_layers * layer_bytes;
    let payload = &bytes[header_end..];
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    if bytes.len() > expected {
        return Err(Error::DimensionMismatch(format!(
            "payload holds {} bytes beyond the {} declared by the header",
            bytes.len() - expected,
            expected - header_end
        )));
    }
    let layers = (0..header.num_layers)
        .map(|l| decode_f32_le(&payload[l * layer_bytes..(l + 1) * layer_bytes]))
        .collect();
    header.into_set(layers)
}

fn decode_f32_le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

/// One layer of a text dump.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TextLayer {
    Rows(Vec<Vec<f32>>),
    Base64(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct TextDump {
    magic: String,
    version: u32,
    #[serde(flatten)]
    header: Header,
    layers: Vec<TextLayer>,
}

fn parse_text(bytes: &[u8]) -> Result<ActivationSet> {
    let doc: TextDump = serde_json::from_slice(bytes).map_err(|e| Error::Header(e.to_string()))?;
    if doc.magic.as_bytes() != DUMP_MAGIC {
        return Err(Error::BadMagic);
    }
    if doc.version != DUMP_VERSION {
        return Err(Error::VersionMismatch {
            expected: DUMP_VERSION,
            found: doc.version,
        });
    }
    let header = doc.header;
    header.validate()?;
    if doc.layers.len() != header.num_layers {
        return Err(Error::DimensionMismatch(format!(
            "header declares {} layers, text holds {}",
            header.num_layers,
            doc.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (l, layer) in doc.layers.into_iter().enumerate() {
        let values = match layer {
            TextLayer::Rows(rows) => {
                if rows.len() != header.num_samples
                    || rows.iter().any(|r| r.len() != header.hidden_dim)
                {
                    return Err(Error::DimensionMismatch(format!(
                        "layer {l} is not {}x{}",
                        header.num_samples, header.hidden_dim
                    )));
                }
                rows.into_iter().flatten().collect::<Vec<f32>>()
            }
            TextLayer::Base64(text) => {
                let raw = base64::engine::general_purpose::STANDARD
                    .decode(text.trim())
                    .map_err(|e| Error::Header(format!("layer {l}: {e}")))?;
                let expected = header.layer_len() * 4;
                if raw.len() < expected {
                    return Err(Error::TruncatedPayload {
                        expected: expected as u64,
                        found: raw.len() as u64,
                    });
                }
                if raw.len() > expected {
                    return Err(Error::DimensionMismatch(format!(
                        "layer {l} holds {} bytes, expected {expected}",
                        raw.len()
                    )));
                }
                decode_f32_le(&raw)
            }
        };
        layers.push(values);
    }
    header.into_set(layers)
}

/// Writes the text variant, with layers as base64 blobs (bit-exact) or as
/// decimal rows.
pub fn write_text_dump(set: &ActivationSet, path: impl AsRef<Path>, base64: bool) -> Result<()> {
    let path = path.as_ref();
    let d = set.hidden_dim();
    let layers = set
        .layers()
        .iter()
        .map(|layer| {
            if base64 {
                let raw: Vec<u8> = layer.iter().flat_map(|v| v.to_le_bytes()).collect();
                TextLayer::Base64(base64::engine::general_purpose::STANDARD.encode(raw))
            } else {
                TextLayer::Rows(layer.chunks(d).map(<[f32]>::to_vec).collect())
            }
        })
        .collect();
    let doc = TextDump {
        magic: String::from_utf8_lossy(DUMP_MAGIC).into_owned(),
        version: DUMP_VERSION,
        header: Header::of(set),
        layers,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Header(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
