//! Caption embeddings: the on-disk file exchanged with the embedding
//! exporter, an HTTP client for a live embedding service, and the lookup
//! order used everywhere a prompt must become a vector.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EMBED_DIM;

pub const EMBEDDINGS_FORMAT_VERSION: u32 = 1;
pub const BRIDGE_ENV: &str = "FIVEDOLLAR_BRIDGE_URL";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub text: String,
    pub embedding: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileRepr {
    format_version: u32,
    model: String,
    dim: usize,
    records: Vec<EmbeddingRecord>,
}

/// Text to 384-vector table. Texts are unique; insertion order is kept.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingsFile {
    model: String,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl EmbeddingsFile {
    pub fn new(model: impl Into<String>) -> Self {
        EmbeddingsFile {
            model: model.into(),
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Adds or replaces the vector for `text`.
    pub fn insert(&mut self, text: &str, embedding: Vec<f32>) -> Result<()> {
        if embedding.len() != EMBED_DIM {
            return Err(Error::Validation(format!(
                "embedding for {text:?} has {} values, expected {EMBED_DIM}",
                embedding.len()
            )));
        }
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("embedding for {text:?} is not finite")));
        }
        match self.index.get(text) {
            Some(&i) => self.records[i].embedding = embedding,
            None => {
                self.index.insert(text.to_owned(), self.records.len());
                self.records.push(EmbeddingRecord {
                    text: text.to_owned(),
                    embedding,
                });
            }
        }
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<&[f32]> {
        self.index.get(text).map(|&i| self.records[i].embedding.as_slice())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: FileRepr = serde_json::from_str(text)?;
        if repr.format_version != EMBEDDINGS_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported embeddings format_version {}",
                repr.format_version
            )));
        }
        if repr.dim != EMBED_DIM {
            return Err(Error::Validation(format!("embeddings dim is {}, expected {EMBED_DIM}", repr.dim)));
        }
        let mut file = EmbeddingsFile::new(repr.model);
        for r in repr.records {
            if file.index.contains_key(&r.text) {
                return Err(Error::Validation(format!("duplicate embedding text {:?}", r.text)));
            }
            file.insert(&r.text, r.embedding)?;
        }
        Ok(file)
    }

    pub fn to_json(&self) -> Result<String> {
        let repr = FileRepr {
            format_version: EMBEDDINGS_FORMAT_VERSION,
            model: self.model.clone(),
            dim: EMBED_DIM,
            records: self.records.clone(),
        };
        Ok(serde_json::to_string(&repr)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'t> {
    texts: &'t [&'t str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

/// Client for a running embedding service: `POST {base}/embed` with
/// `{"texts": [...]}` answering `{"model", "dim", "embeddings"}`.
#[derive(Clone, Debug)]
pub struct BridgeClient {
    base: String,
    agent: ureq::Agent,
}

impl BridgeClient {
    pub fn new(base: impl Into<String>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(30)).build();
        BridgeClient {
            base: base.into().trim_end_matches('/').to_owned(),
            agent,
        }
    }

    /// Client for the address in `FIVEDOLLAR_BRIDGE_URL`, if set and non-empty.
    pub fn from_env() -> Option<Self> {
        std::env::var(BRIDGE_ENV).ok().filter(|s| !s.trim().is_empty()).map(Self::new)
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let url = format!("{}/embed", self.base);
        let resp = self
            .agent
            .post(&url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| Error::Bridge(format!("{url}: {e}")))?;
        let body: EmbedResponse = resp
            .into_json()
            .map_err(|e| Error::Bridge(format!("{url}: unreadable response: {e}")))?;
        if body.dim != EMBED_DIM || body.embeddings.len() != texts.len() {
            return Err(Error::Bridge(format!(
                "{url}: expected {} vectors of {EMBED_DIM}, got {} with dim {}",
                texts.len(),
                body.embeddings.len(),
                body.dim
            )));
        }
        if let Some(bad) = body.embeddings.iter().find(|e| e.len() != EMBED_DIM) {
            return Err(Error::Bridge(format!("{url}: vector of length {}", bad.len())));
        }
        Ok(body.embeddings)
    }
}

/// Turns prompts into vectors: exact match in the file first, then the
/// bridge if one is configured, otherwise an error naming both options.
#[derive(Clone, Debug, Default)]
pub struct Resolver {
    pub file: Option<EmbeddingsFile>,
    pub bridge: Option<BridgeClient>,
}

impl Resolver {
    pub fn new(file: Option<EmbeddingsFile>, bridge: Option<BridgeClient>) -> Self {
        Resolver { file, bridge }
    }

    pub fn resolve(&self, text: &str) -> Result<Vec<f32>> {
        Ok(self.resolve_all(&[text])?.remove(0))
    }

    /// Resolves every text; unresolved ones are reported together.
    pub fn resolve_all(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>> {
        let mut out: Vec<Option<Vec<f32>>> = texts
            .iter()
            .map(|t| self.file.as_ref().and_then(|f| f.get(t)).map(<[f32]>::to_vec))
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if missing.is_empty() {
            return Ok(out.into_iter().map(Option::unwrap).collect());
        }
        let Some(bridge) = &self.bridge else {
            return Err(Error::UnresolvedPrompt {
                prompts: missing.iter().map(|&i| texts[i].to_owned()).collect(),
            });
        };
        let asked: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
        for (i, v) in missing.into_iter().zip(bridge.embed(&asked)?) {
            out[i] = Some(v);
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }
}
