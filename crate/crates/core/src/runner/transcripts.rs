//! Content-addressed transcripts that double as a query cache.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::client::{ClientError, CompletionBackend, CompletionRequest};
use crate::prompts::{ExperimentKind, PromptTranscript};

/// What is stored under `transcripts/<hash>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptFile {
    pub cell: String,
    pub request: CompletionRequest,
    pub transcript: PromptTranscript,
}

/// Hash naming the transcript of a query.
pub fn transcript_hash(cell: &str, request: &CompletionRequest) -> String {
    let mut h = Sha256::new();
    h.update(cell.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_vec(request).expect("request serializes"));
    hex::encode(h.finalize())
}

pub fn transcript_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.json"))
}

pub fn read_transcript(dir: &Path, hash: &str) -> Option<TranscriptFile> {
    let text = fs::read_to_string(transcript_path(dir, hash)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Wraps the subject: names every query after its cell, answers repeated
/// queries from disk and stores new ones.
pub struct Recorder<'a> {
    backend: Box<dyn CompletionBackend>,
    dir: Option<&'a Path>,
    kind: ExperimentKind,
    cell: String,
    calls_in_cell: usize,
    pub queries: usize,
    pub cache_hits: usize,
}

impl<'a> Recorder<'a> {
    pub fn new(backend: Box<dyn CompletionBackend>, dir: Option<&'a Path>) -> Self {
        Self {
            backend,
            dir,
            kind: ExperimentKind::Function,
            cell: String::new(),
            calls_in_cell: 0,
            queries: 0,
            cache_hits: 0,
        }
    }

    pub fn enter(&mut self, cell: String, kind: ExperimentKind) {
        self.cell = cell;
        self.kind = kind;
        self.calls_in_cell = 0;
    }

    /// Send a request; returns the completion and the transcript hash.
    pub fn query(
        &mut self,
        request: &CompletionRequest,
        parse: impl Fn(&str) -> Option<f64>,
    ) -> Result<(String, String), ClientError> {
        let cell = format!("{}#{}", self.cell, self.calls_in_cell);
        self.calls_in_cell += 1;
        let hash = transcript_hash(&cell, request);
        if let Some(dir) = self.dir {
            if let Some(cached) = read_transcript(dir, &hash) {
                if cached.request == *request {
                    self.cache_hits += 1;
                    return Ok((cached.transcript.completion_text, hash));
                }
            }
        }
        let completion = self.backend.complete(request)?;
        self.queries += 1;
        if let Some(dir) = self.dir {
            let file = TranscriptFile {
                cell,
                request: request.clone(),
                transcript: PromptTranscript {
                    experiment: self.kind,
                    prompt_text: request.prompt.clone(),
                    completion_text: completion.clone(),
                    parsed: parse(&completion),
                    timestamp: Utc::now(),
                },
            };
            write_atomic(&transcript_path(dir, &hash), &serde_json::to_vec_pretty(&file).expect("serializable"))
                .map_err(|e| ClientError::Protocol(format!("cannot store transcript: {e}")))?;
        }
        Ok((completion, hash))
    }
}

impl CompletionBackend for Recorder<'_> {
    fn complete(&mut self, request: &CompletionRequest) -> Result<String, ClientError> {
        self.query(request, |c| crate::prompts::parse_numeric_completion(c).ok()).map(|(c, _)| c)
    }
}

/// Write through a temporary file and rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
