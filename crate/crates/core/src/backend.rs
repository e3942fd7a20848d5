//! Model completions from a local chat-completions endpoint and from a
//! deterministic scripted mock, with full provenance recording.

use crate::util::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use thiserror::Error;

pub mod stub;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned status {0}")]
    Status(u16),
    #[error("malformed reply: {0}")]
    MalformedReply(String),
    #[error("prompt exceeds context_length ({estimated} > {limit} tokens)")]
    ContextOverflow { estimated: u64, limit: u64 },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub endpoint_url: String,
    #[serde(default)]
    pub weights_path: String,
    #[serde(default)]
    pub weights_sha256: String,
    pub sampling: SamplingParams,
    #[serde(default)]
    pub chat_template_id: String,
    pub context_length: u64,
    #[serde(default)]
    pub quantization: String,
    #[serde(default)]
    pub revision: String,
}

impl ModelSpec {
    /// Invariant checks: weights hash shape, finite sampling values.
    pub fn validate(&self) -> Result<(), String> {
        if !self.weights_path.is_empty() {
            if self.weights_sha256.len() != 64
                || !self.weights_sha256.chars().all(|c| c.is_ascii_hexdigit())
            {
                return Err("weights_sha256 must be 64 hex chars when weights_path set".into());
            }
        }
        let s = &self.sampling;
        if !s.temperature.is_finite() || !s.top_p.is_finite() {
            return Err("sampling values must be finite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Fallback token estimate when the endpoint omits usage: chars / 4.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64) / 4
}

/// One chat-completions request. The seed is forwarded for endpoints that
/// support it; usage is recorded even when it has to be estimated.
pub fn complete(
    spec: &ModelSpec,
    messages: &[ChatMessage],
    seed: u64,
) -> Result<(String, Usage), BackendError> {
    let prompt_chars: usize = messages.iter().map(|m| m.content.chars().count()).sum();
    let estimated = (prompt_chars as u64) / 4;
    if estimated > spec.context_length {
        return Err(BackendError::ContextOverflow {
            estimated,
            limit: spec.context_length,
        });
    }
    let body = json!({
        "model": spec.name,
        "messages": messages,
        "temperature": spec.sampling.temperature,
        "top_p": spec.sampling.top_p,
        "max_tokens": spec.sampling.max_tokens,
        "seed": seed,
    });
    let client = reqwest::blocking::Client::new();
    let resp = client
        .post(&spec.endpoint_url)
        .json(&body)
        .send()
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status();
    if !status.is_success() {
        return Err(BackendError::Status(status.as_u16()));
    }
    let value: serde_json::Value = resp
        .json()
        .map_err(|e| BackendError::MalformedReply(e.to_string()))?;
    let content = value["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| BackendError::MalformedReply("missing choices[0].message.content".into()))?
        .to_string();
    let usage = Usage {
        prompt_tokens: value["usage"]["prompt_tokens"]
            .as_u64()
            .unwrap_or(estimated),
        completion_tokens: value["usage"]["completion_tokens"]
            .as_u64()
            .unwrap_or_else(|| estimate_tokens(&content)),
    };
    Ok((content, usage))
}

/// Deterministic scripted replies for artifact validation runs.
///
/// Scripts are keyed by task id; the runner may also install more specific
/// keys (`task#condition`, `task#seed`, `task#condition#seed`) that it probes
/// before falling back to the plain task id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockPolicy {
    pub scripts: BTreeMap<String, Vec<String>>,
    pub default_reply: String,
}

impl MockPolicy {
    pub fn load(path: &std::path::Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}

/// Pure position-deterministic lookup: script[call_index] if present, else
/// the default reply.
pub fn mock_complete(policy: &MockPolicy, key: &str, call_index: usize) -> String {
    policy
        .scripts
        .get(key)
        .and_then(|script| script.get(call_index))
        .cloned()
        .unwrap_or_else(|| policy.default_reply.clone())
}

/// SHA-256 hex digest of the exact byte sequence.
pub fn hash_text(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_text_vectors() {
        assert_eq!(
            hash_text(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash_text("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn mock_script_and_default() {
        let mut policy = MockPolicy {
            default_reply: "D".to_string(),
            ..Default::default()
        };
        policy
            .scripts
            .insert("t".to_string(), vec!["A".to_string(), "B".to_string()]);
        assert_eq!(mock_complete(&policy, "t", 1), "B");
        assert_eq!(mock_complete(&policy, "t", 5), "D");
        assert_eq!(mock_complete(&policy, "missing", 0), "D");
        // purity
        assert_eq!(mock_complete(&policy, "t", 0), mock_complete(&policy, "t", 0));
    }

    #[test]
    fn model_spec_validation() {
        let mut spec = ModelSpec {
            name: "m".into(),
            endpoint_url: "http://127.0.0.1:1/v1/chat/completions".into(),
            weights_path: "w.gguf".into(),
            weights_sha256: "zz".into(),
            sampling: SamplingParams {
                temperature: 0.2,
                top_p: 0.95,
                max_tokens: 512,
            },
            chat_template_id: String::new(),
            context_length: 8192,
            quantization: String::new(),
            revision: String::new(),
        };
        assert!(spec.validate().is_err());
        spec.weights_sha256 = "a".repeat(64);
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        let spec = ModelSpec {
            name: "m".into(),
            endpoint_url: "http://127.0.0.1:9/v1/chat/completions".into(),
            weights_path: String::new(),
            weights_sha256: String::new(),
            sampling: SamplingParams::default(),
            chat_template_id: String::new(),
            context_length: 8192,
            quantization: String::new(),
            revision: String::new(),
        };
        let err = complete(&spec, &[ChatMessage::new("user", "hi")], 0).unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)));
    }

    #[test]
    fn context_overflow_before_any_request() {
        let spec = ModelSpec {
            name: "m".into(),
            endpoint_url: "http://127.0.0.1:9/v1/chat/completions".into(),
            weights_path: String::new(),
            weights_sha256: String::new(),
            sampling: SamplingParams::default(),
            chat_template_id: String::new(),
            context_length: 2,
            quantization: String::new(),
            revision: String::new(),
        };
        let big = "x".repeat(1000);
        let err = complete(&spec, &[ChatMessage::new("user", big)], 0).unwrap_err();
        assert!(matches!(err, BackendError::ContextOverflow { .. }));
    }
}
