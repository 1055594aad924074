//! HTTP client for a remote scoring server.
//!
//! The server owns the model and its tokenizer. Requests are batch-first: one
//! POST carries many (example, prefix) items. The message under judgement is sent
//! as the final context block with role [`wire::MESSAGE_ROLE`].

use std::time::Duration;

use super::{Scorer, TokenDistribution};
use crate::data::{Example, TokenId};
use crate::error::{Error, Result};

/// Request and response bodies of the scoring protocol.
pub mod wire {
    use serde::{Deserialize, Serialize};

    use crate::data::{ContextBlock, Example, TokenId};

    pub const NEXT_TOKEN_PATH: &str = "/v1/next_token_logprobs";
    pub const SEQUENCE_PATH: &str = "/v1/sequence_logprob";
    pub const TOKENIZE_PATH: &str = "/v1/tokenize";
    pub const DETOKENIZE_PATH: &str = "/v1/detokenize";
    pub const MESSAGE_ROLE: &str = "message";

    /// Context blocks of `ex` followed by its message.
    pub fn context_of(ex: &Example) -> Vec<ContextBlock> {
        let mut ctx = ex.context.clone();
        ctx.push(ContextBlock::new(MESSAGE_ROLE, ex.message.clone()));
        ctx
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct NextTokenItem {
        pub context: Vec<ContextBlock>,
        pub prefix_tokens: Vec<TokenId>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct NextTokenRequest {
        pub items: Vec<NextTokenItem>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct NextTokenResult {
        pub tokens: Vec<TokenId>,
        pub logprobs: Vec<f64>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct NextTokenResponse {
        pub items: Vec<NextTokenResult>,
        pub version: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SequenceItem {
        pub context: Vec<ContextBlock>,
        pub tokens: Vec<TokenId>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SequenceRequest {
        pub items: Vec<SequenceItem>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SequenceResult {
        pub logprob: f64,
        pub per_token: Vec<f64>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SequenceResponse {
        pub items: Vec<SequenceResult>,
        pub version: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TokenizeResponse {
        pub tokens: Vec<TokenId>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct DetokenizeResponse {
        pub text: String,
    }

    /// `tokens` query parameter of the detokenize endpoint: comma-separated ids.
    pub fn encode_token_list(tokens: &[TokenId]) -> String {
        tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
    }

    pub fn decode_token_list(s: &str) -> Option<Vec<TokenId>> {
        if s.is_empty() {
            return Some(Vec::new());
        }
        s.split(',').map(|t| t.trim().parse().ok()).collect()
    }
}

pub struct RemoteScorer {
    base_url: String,
    agent: ureq::Agent,
    version: String,
    vocab_size: usize,
    eos: Option<TokenId>,
    batch_size: usize,
}

impl RemoteScorer {
    /// Connects and records the server's version tag. `vocab_size` and `eos` are
    /// properties of the served model that the protocol does not carry.
    pub fn connect(base_url: &str, vocab_size: usize, eos: Option<TokenId>) -> Result<Self> {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .build();
        let mut scorer = Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: config.into(),
            version: String::new(),
            vocab_size,
            eos,
            batch_size: 256,
        };
        let probe: wire::NextTokenResponse =
            scorer.post(wire::NEXT_TOKEN_PATH, &wire::NextTokenRequest { items: Vec::new() })?;
        scorer.version = probe.version;
        Ok(scorer)
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    fn post<Req: serde::Serialize, Resp: serde::de::DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp> {
        let url = format!("{}{path}", self.base_url);
        let mut response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| Error::Transport(format!("POST {url}: {e}")))?;
        response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Protocol(format!("POST {url}: {e}")))
    }

    fn get<Resp: serde::de::DeserializeOwned>(&self, path: &str, key: &str, value: &str) -> Result<Resp> {
        let url = format!("{}{path}", self.base_url);
        let mut response = self
            .agent
            .get(&url)
            .query(key, value)
            .call()
            .map_err(|e| Error::Transport(format!("GET {url}: {e}")))?;
        response
            .body_mut()
            .read_json()
            .map_err(|e| Error::Protocol(format!("GET {url}: {e}")))
    }

    fn check_version(&self, version: &str) -> Result<()> {
        if version != self.version {
            return Err(Error::Protocol(format!(
                "server version changed from {:?} to {version:?}",
                self.version
            )));
        }
        Ok(())
    }
}

impl Scorer for RemoteScorer {
    fn version(&self) -> String {
        format!("remote:{}", self.version)
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos_token(&self) -> Option<TokenId> {
        self.eos
    }

    fn next_token_logprobs(&self, ex: &Example, prefix: &[TokenId]) -> Result<TokenDistribution> {
        Ok(self
            .next_token_logprobs_batch(&[(ex, prefix)])?
            .pop()
            .expect("one item"))
    }

    fn next_token_logprobs_batch(&self, items: &[(&Example, &[TokenId])]) -> Result<Vec<TokenDistribution>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.batch_size) {
            let request = wire::NextTokenRequest {
                items: chunk
                    .iter()
                    .map(|(ex, prefix)| wire::NextTokenItem {
                        context: wire::context_of(ex),
                        prefix_tokens: prefix.to_vec(),
                    })
                    .collect(),
            };
            let response: wire::NextTokenResponse = self.post(wire::NEXT_TOKEN_PATH, &request)?;
            self.check_version(&response.version)?;
            if response.items.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "expected {} items, got {}",
                    chunk.len(),
                    response.items.len()
                )));
            }
            for item in response.items {
                if item.tokens.len() != item.logprobs.len() {
                    return Err(Error::Protocol("tokens and logprobs differ in length".into()));
                }
                let dist = TokenDistribution::from_logprobs(item.tokens.into_iter().zip(item.logprobs))
                    .map_err(|e| Error::Protocol(e.to_string()))?;
                out.push(dist);
            }
        }
        Ok(out)
    }

    fn sequence_logprob(&self, ex: &Example, tokens: &[TokenId]) -> Result<f64> {
        Ok(self.sequence_logprob_batch(&[(ex, tokens)])?[0])
    }

    fn sequence_logprob_batch(&self, items: &[(&Example, &[TokenId])]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.batch_size) {
            let request = wire::SequenceRequest {
                items: chunk
                    .iter()
                    .map(|(ex, tokens)| wire::SequenceItem {
                        context: wire::context_of(ex),
                        tokens: tokens.to_vec(),
                    })
                    .collect(),
            };
            let response: wire::SequenceResponse = self.post(wire::SEQUENCE_PATH, &request)?;
            self.check_version(&response.version)?;
            if response.items.len() != chunk.len() {
                return Err(Error::Protocol(format!(
                    "expected {} items, got {}",
                    chunk.len(),
                    response.items.len()
                )));
            }
            out.extend(response.items.into_iter().map(|r| r.logprob));
        }
        Ok(out)
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>> {
        let r: wire::TokenizeResponse = self.get(wire::TOKENIZE_PATH, "text", text)?;
        Ok(r.tokens)
    }

    fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        let r: wire::DetokenizeResponse =
            self.get(wire::DETOKENIZE_PATH, "tokens", &wire::encode_token_list(tokens))?;
        Ok(r.text)
    }
}
