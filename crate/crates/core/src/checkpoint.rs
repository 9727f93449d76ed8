//! Binary checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, a JSON
//! header (config, aspects, vocabulary, parameter manifest), then every
//! parameter as little-endian `f64` values in manifest order. All integers
//! are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Vocab;
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::{ParamGroup, Tensor};

pub const MAGIC: [u8; 8] = *b"EDUATTN\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub config: RunConfig,
    pub aspects: Vec<String>,
    pub vocab: Vec<String>,
    pub vocab_hash: String,
    pub params: Vec<ManifestEntry>,
}

/// A loaded model with the run configuration it was saved under.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model,
    pub config: RunConfig,
}

impl Checkpoint {
    /// Fails unless the checkpoint vocabulary hashes to `expected`.
    pub fn check_vocab(&self, expected: &str) -> Result<()> {
        let actual = self.model.vocab.hash();
        if actual != expected {
            return Err(Error::Compatibility(format!(
                "checkpoint vocabulary hash {actual} does not match {expected}"
            )));
        }
        Ok(())
    }
}

fn manifest(p: &ModelParams) -> Vec<ManifestEntry> {
    p.store
        .iter()
        .map(|p| ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            group: p.group,
        })
        .collect()
}

/// Writes `model` to `path`. The file is written next to its destination and
/// renamed into place, so readers never see a half-written checkpoint.
pub fn save_checkpoint(path: &Path, model: &Model, config: &RunConfig) -> Result<()> {
    let mut config = config.clone();
    config.model = model.config().clone();
    let header = Header {
        version: FORMAT_VERSION,
        config,
        aspects: model.aspects.clone(),
        vocab: model.vocab.tokens().to_vec(),
        vocab_hash: model.vocab.hash(),
        params: manifest(&model.params),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(20 + header.len() + 8 * model.store().num_values());
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in model.store().iter() {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Data(format!("checkpoint truncated while reading {what}")));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        Error::Compatibility(m) => Error::Compatibility(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Data("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Compatibility(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Data("header length overflows".into()))?;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::Data(format!("bad checkpoint header: {e}")))?;
    if header.version != version {
        return Err(Error::Compatibility(format!(
            "header says version {}, preamble says {version}",
            header.version
        )));
    }
    let vocab = Vocab::from_tokens(header.vocab)?;
    if vocab.hash() != header.vocab_hash {
        return Err(Error::Compatibility(format!(
            "stored vocabulary hashes to {}, header records {}",
            vocab.hash(),
            header.vocab_hash
        )));
    }
    let mut params = ModelParams::init(
        &header.config.model,
        vocab.len(),
        header.aspects.len(),
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let expected = manifest(&params);
    if expected != header.params {
        return Err(Error::Compatibility(
            "parameter manifest does not match the model the config describes".into(),
        ));
    }
    let mut values = Vec::with_capacity(expected.len());
    for entry in &expected {
        let n: usize = entry.shape.iter().product();
        let raw = r.take(8 * n, &entry.name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        values.push(Tensor::new(entry.shape.clone(), data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Data(format!("{} trailing bytes after the last array", bytes.len() - r.pos)));
    }
    params.store.restore(&values)?;
    Ok(Checkpoint {
        model: Model {
            params,
            aspects: header.aspects,
            vocab,
        },
        config: header.config,
    })
}
