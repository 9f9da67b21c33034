//! Binary checkpoints of a trained [`ModelBundle`].
//!
//! Layout: the magic line `gpvae-checkpoint v1`, a line holding the byte
//! length of a JSON header, the header itself, then every tensor listed in the
//! header as little-endian `f64` in row-major order. Tensors are the network
//! parameters followed by the Adam first and second moments.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Module, Tensor};
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::train::ModelBundle;

pub const MAGIC: &str = "gpvae-checkpoint v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    feature_dim: usize,
    attribute_dim: usize,
    latent_dim: usize,
    config: TrainConfig,
    adam_t: u64,
    adam_beta1: f64,
    adam_beta2: f64,
    adam_eps: f64,
    tensors: Vec<TensorEntry>,
}

fn tensors_of(bundle: &ModelBundle) -> Vec<(String, &Tensor)> {
    let names = bundle.parameter_names();
    let params = bundle.parameters();
    let mut out: Vec<(String, &Tensor)> = names.iter().cloned().zip(params.iter().map(|p| &p.value)).collect();
    out.extend(names.iter().map(|n| format!("adam.m.{n}")).zip(&bundle.adam.first_moment));
    out.extend(names.iter().map(|n| format!("adam.v.{n}")).zip(&bundle.adam.second_moment));
    out
}

/// Serializes a bundle and the configuration it was trained with.
pub fn checkpoint_bytes(bundle: &ModelBundle, config: &TrainConfig) -> Vec<u8> {
    let tensors = tensors_of(bundle);
    let header = Header {
        feature_dim: bundle.feature_dim(),
        attribute_dim: bundle.attribute_dim(),
        latent_dim: bundle.latent_dim(),
        config: config.clone(),
        adam_t: bundle.adam.t,
        adam_beta1: bundle.adam.beta1,
        adam_beta2: bundle.adam.beta2,
        adam_eps: bundle.adam.eps,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_string(&header).expect("header serializes");
    let mut out = format!("{MAGIC}\n{}\n{json}", json.len()).into_bytes();
    for (_, t) in &tensors {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(bundle: &ModelBundle, config: &TrainConfig, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(bundle, config)).map_err(|e| Error::io(path, e))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("malformed header"))?;
    *pos += end + 1;
    std::str::from_utf8(&rest[..end]).map_err(|_| bad("malformed header"))
}

/// Parses checkpoint bytes back into a bundle and its configuration.
pub fn parse_checkpoint(bytes: &[u8]) -> Result<(ModelBundle, TrainConfig)> {
    let mut pos = 0;
    if next_line(bytes, &mut pos)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic line)"));
    }
    let len: usize = next_line(bytes, &mut pos)?
        .parse()
        .map_err(|_| bad("malformed header length"))?;
    let json = bytes
        .get(pos..pos + len)
        .ok_or_else(|| bad("truncated header"))?;
    pos += len;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| bad(format!("malformed header: {e}")))?;
    header
        .config
        .validate()
        .map_err(|e| bad(format!("invalid stored config: {e}")))?;
    if header.latent_dim != header.config.latent_dim {
        return Err(bad(format!(
            "latent_dim {} does not match the stored config ({})",
            header.latent_dim, header.config.latent_dim
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut bundle = ModelBundle::new(header.feature_dim, header.attribute_dim, &header.config, &mut rng);
    let expected: Vec<(String, Vec<usize>)> = tensors_of(&bundle)
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != header.tensors.len() {
        return Err(bad(format!(
            "expected {} tensors, header lists {}",
            expected.len(),
            header.tensors.len()
        )));
    }
    for ((name, shape), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name {
            return Err(bad(format!("expected tensor {name}, found {}", entry.name)));
        }
        if *shape != entry.shape {
            return Err(Error::ShapeMismatch {
                context: "checkpoint tensor",
                left: entry.shape.clone(),
                right: shape.clone(),
            });
        }
    }
    let total: usize = expected.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let payload = &bytes[pos..];
    if payload.len() != total * 8 {
        return Err(Error::Truncated {
            file: "checkpoint",
            expected: total * 8,
            found: payload.len(),
        });
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut fill = |t: &mut Tensor| {
        for v in t.values_mut() {
            *v = values.next().expect("length checked");
        }
    };
    for p in bundle.parameters_mut() {
        fill(&mut p.value);
    }
    for m in &mut bundle.adam.first_moment {
        fill(m);
    }
    for v in &mut bundle.adam.second_moment {
        fill(v);
    }
    bundle.adam.t = header.adam_t;
    bundle.adam.beta1 = header.adam_beta1;
    bundle.adam.beta2 = header.adam_beta2;
    bundle.adam.eps = header.adam_eps;
    bundle.validate()?;
    Ok((bundle, header.config))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelBundle, TrainConfig)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> (ModelBundle, TrainConfig) {
        let cfg = TrainConfig {
            latent_dim: 3,
            image_encoder_hidden: 5,
            image_decoder_hidden: 4,
            attribute_encoder_hidden: 6,
            attribute_decoder_hidden: 2,
            seed: 4,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut b = ModelBundle::new(7, 2, &cfg, &mut rng);
        for m in b.adam.first_moment.iter_mut().chain(b.adam.second_moment.iter_mut()) {
            for v in m.values_mut() {
                *v = rng.random::<f64>();
            }
        }
        b.adam.t = 17;
        (b, cfg)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (b, cfg) = tiny();
        let bytes = checkpoint_bytes(&b, &cfg);
        let (b2, cfg2) = parse_checkpoint(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        for (p, q) in b.parameters().iter().zip(b2.parameters()) {
            let pb: Vec<u64> = p.value.values().iter().map(|v| v.to_bits()).collect();
            let qb: Vec<u64> = q.value.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(pb, qb);
        }
        assert_eq!(b2, b);
        assert_eq!(checkpoint_bytes(&b2, &cfg2), bytes);
    }

    #[test]
    fn mismatched_latent_dim_is_rejected() {
        let (b, cfg) = tiny();
        let text = String::from_utf8_lossy(&checkpoint_bytes(&b, &cfg)).into_owned();
        let bytes = checkpoint_bytes(&b, &cfg);
        let header_start = MAGIC.len() + 1 + text[MAGIC.len() + 1..].find('\n').unwrap() + 1;
        let mut edited = bytes.clone();
        let needle = b"\"latent_dim\":3,";
        let at = edited[header_start..]
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap()
            + header_start;
        edited[at + needle.len() - 2] = b'4';
        assert!(matches!(parse_checkpoint(&edited), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncation_and_garbage_are_rejected() {
        let (b, cfg) = tiny();
        let bytes = checkpoint_bytes(&b, &cfg);
        assert!(matches!(
            parse_checkpoint(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { .. })
        ));
        assert!(parse_checkpoint(b"hello\n").is_err());
        assert!(parse_checkpoint(&bytes[..30]).is_err());
    }
}
