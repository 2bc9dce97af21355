use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::Vocabulary;
use crate::error::{Error, Result};
use crate::structuralizer::FieldSchema;
use crate::tensor::{decode_checkpoint, encode_checkpoint};

use super::config::ModelConfig;
use super::network::Network;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SCHEMA_FILE: &str = "schema.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Sidecar pinning the artifacts a checkpoint was trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub model: ModelConfig,
    pub schema_sha256: String,
    pub vocab_sha256: String,
    pub checkpoint_sha256: String,
}

/// A trained network together with the vocabulary and schema it expects.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub network: Network,
    pub vocab: Vocabulary,
    pub schema: FieldSchema,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

impl ModelBundle {
    pub fn new(network: Network, vocab: Vocabulary, schema: FieldSchema) -> Result<Self> {
        let cfg = network.config();
        if cfg.fields != schema.len() {
            return Err(Error::contract(format!("model expects {} fields, schema has {}", cfg.fields, schema.len())));
        }
        if cfg.vocab_size != vocab.len() {
            return Err(Error::contract(format!("model expects {} tokens, vocabulary has {}", cfg.vocab_size, vocab.len())));
        }
        Ok(Self { network, vocab, schema })
    }

    pub fn manifest(&self) -> BundleManifest {
        let ckpt = self.checkpoint_bytes();
        BundleManifest {
            model: self.network.config().clone(),
            schema_sha256: self.schema.fingerprint(),
            vocab_sha256: self.vocab.fingerprint(),
            checkpoint_sha256: sha256_hex(&ckpt),
        }
    }

    fn checkpoint_bytes(&self) -> Vec<u8> {
        let config = serde_json::to_value(self.network.config()).expect("config serializes");
        encode_checkpoint(&config, self.network.store())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ckpt = self.checkpoint_bytes();
        write(&dir.join(CHECKPOINT_FILE), &ckpt)?;
        write(&dir.join(VOCAB_FILE), self.vocab.to_lines().as_bytes())?;
        write(&dir.join(SCHEMA_FILE), self.schema.to_toml_string().as_bytes())?;
        let manifest = BundleManifest {
            model: self.network.config().clone(),
            schema_sha256: self.schema.fingerprint(),
            vocab_sha256: self.vocab.fingerprint(),
            checkpoint_sha256: sha256_hex(&ckpt),
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        write(&dir.join(MANIFEST_FILE), json.as_bytes())
    }

    /// Loads a bundle, refusing any file whose hash disagrees with the manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: BundleManifest = serde_json::from_slice(&read(&manifest_path)?)
            .map_err(|e| Error::parse(manifest_path.display().to_string(), e))?;
        let schema = FieldSchema::from_toml_str(
            &String::from_utf8(read(&dir.join(SCHEMA_FILE))?).map_err(|e| Error::parse(SCHEMA_FILE, e))?,
        )?;
        if schema.fingerprint() != manifest.schema_sha256 {
            return Err(Error::contract("schema file does not match the model manifest"));
        }
        let vocab = Vocabulary::from_lines(
            &String::from_utf8(read(&dir.join(VOCAB_FILE))?).map_err(|e| Error::parse(VOCAB_FILE, e))?,
        )?;
        if vocab.fingerprint() != manifest.vocab_sha256 {
            return Err(Error::contract("vocabulary file does not match the model manifest"));
        }
        let bytes = read(&dir.join(CHECKPOINT_FILE))?;
        if sha256_hex(&bytes) != manifest.checkpoint_sha256 {
            return Err(Error::contract("checkpoint does not match the model manifest"));
        }
        let ckpt = decode_checkpoint(&bytes)?;
        let stored: ModelConfig = serde_json::from_value(ckpt.config).map_err(|e| Error::parse(CHECKPOINT_FILE, e))?;
        if stored != manifest.model {
            return Err(Error::contract("checkpoint configuration differs from the manifest"));
        }
        let network = Network::from_store(manifest.model, ckpt.store)?;
        Self::new(network, vocab, schema)
    }

    /// Refuses to run against a schema or vocabulary other than the one the
    /// model was trained with.
    pub fn check_compatible(&self, schema: &FieldSchema) -> Result<()> {
        if schema.fingerprint() != self.schema.fingerprint() {
            return Err(Error::contract(format!(
                "schema mismatch: model trained on fields {:?}, got {:?}",
                self.schema.names(),
                schema.names()
            )));
        }
        Ok(())
    }
}
