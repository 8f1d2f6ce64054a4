//! Chat-completion client that answers reasoner requests over HTTP.

use std::collections::BTreeMap;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use pact_core::protocols::{Reasoner, ReasonerError, ReasonerRequest, ReasonerResponse, RequestKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SYSTEM_TEMPLATE: &str = include_str!("../templates/system.txt");
const USER_TEMPLATE: &str = include_str!("../templates/user.txt");
const EXEMPLAR_TEMPLATE: &str = include_str!("../templates/exemplar.txt");
const INSTRUCTIONS: &str = include_str!("../templates/instructions.txt");

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("invalid bridge config: {0}")]
    Config(String),
    #[error("request timed out after {0} ms")]
    Timeout(u64),
    #[error("endpoint answered with status {0}")]
    Status(u16),
    #[error("unparseable completion: {0}")]
    Parse(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

impl From<BridgeError> for ReasonerError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Timeout(_) => ReasonerError::Timeout,
            BridgeError::Status(code) => ReasonerError::Status(code),
            BridgeError::Parse(m) => ReasonerError::Parse(m),
            BridgeError::Config(m) | BridgeError::Transport(m) => ReasonerError::Transport(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    pub base_url: String,
    pub model_name: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub temperature: f64,
    pub api_key_env_var: String,
    /// First retry waits this long; each later one doubles it.
    pub backoff_base_ms: u64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model_name: "local-model".into(),
            timeout_ms: 30_000,
            max_retries: 2,
            temperature: 0.0,
            api_key_env_var: "PACT_SIM_API_KEY".into(),
            backoff_base_ms: 500,
        }
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), BridgeError> {
        if self.timeout_ms == 0 {
            return Err(BridgeError::Config("timeout_ms must be > 0".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BridgeError::Config("temperature must be finite and >= 0".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(BridgeError::Config(format!("base_url {:?} is not http(s)", self.base_url)));
        }
        Ok(())
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatReply {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChatMessage,
}

fn instruction(kind: RequestKind) -> &'static str {
    INSTRUCTIONS
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .find(|(k, _)| *k == kind.as_str())
        .map(|(_, v)| v)
        .expect("every request kind has an instruction line")
}

/// Single-pass `{slot}` substitution, so slot values are never rescanned.
pub fn fill(template: &str, slots: &BTreeMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').map(|close| (&after[..close], close)) {
            Some((name, close)) if slots.contains_key(name) => {
                out.push_str(&slots[name]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn render_messages(request: &ReasonerRequest) -> Vec<ChatMessage> {
    let exemplars: String = request
        .exemplars
        .iter()
        .map(|e| {
            fill(
                EXEMPLAR_TEMPLATE,
                &BTreeMap::from([("context", e.context.clone()), ("answer", e.answer.clone())]),
            )
        })
        .collect();
    let trace = if request.trace.is_empty() {
        "(none)".to_owned()
    } else {
        request
            .trace
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{}. {}", i + 1, t))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let slots = BTreeMap::from([
        ("exemplars", exemplars),
        ("context", request.context_digest.clone()),
        ("trace", trace),
        ("turn", request.turn.to_string()),
        ("branch", request.branch.to_string()),
        ("instruction", instruction(request.kind).to_owned()),
    ]);
    vec![
        ChatMessage {
            role: "system".into(),
            content: SYSTEM_TEMPLATE.trim_end().to_owned(),
        },
        ChatMessage {
            role: "user".into(),
            content: fill(USER_TEMPLATE, &slots).trim_end().to_owned(),
        },
    ]
}

/// The exact bytes posted for a request.
pub fn render_body(config: &BridgeConfig, request: &ReasonerRequest) -> Vec<u8> {
    serde_json::to_vec(&ChatBody {
        model: &config.model_name,
        messages: render_messages(request),
        temperature: config.temperature,
    })
    .expect("chat body serializes")
}

pub fn parse_completion(kind: RequestKind, body: &[u8]) -> Result<ReasonerResponse, BridgeError> {
    let reply: ChatReply =
        serde_json::from_slice(body).map_err(|e| BridgeError::Parse(e.to_string()))?;
    let first = reply
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BridgeError::Parse("no choices".into()))?;
    Ok(ReasonerResponse::from_text(kind, first.message.content))
}

pub struct BridgeClient {
    config: BridgeConfig,
    http: reqwest::blocking::Client,
}

impl BridgeClient {
    pub fn new(config: BridgeConfig) -> Result<Self, BridgeError> {
        config.validate()?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BridgeError::Transport(e.to_string()))?;
        Ok(Self { config, http })
    }

    pub fn config(&self) -> &BridgeConfig {
        &self.config
    }

    fn attempt(&self, kind: RequestKind, body: &[u8]) -> Result<ReasonerResponse, BridgeError> {
        let mut req = self
            .http
            .post(self.config.endpoint())
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec());
        if let Ok(key) = std::env::var(&self.config.api_key_env_var) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| self.classify(e))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(BridgeError::Status(status.as_u16()));
        }
        let bytes = resp.bytes().map_err(|e| self.classify(e))?;
        parse_completion(kind, &bytes)
    }

    fn classify(&self, e: reqwest::Error) -> BridgeError {
        if e.is_timeout() {
            BridgeError::Timeout(self.config.timeout_ms)
        } else {
            BridgeError::Transport(e.to_string())
        }
    }

    /// Posts one request, retrying transport failures, timeouts and 5xx/429
    /// replies with exponential backoff.
    pub fn complete(&self, request: &ReasonerRequest) -> Result<ReasonerResponse, BridgeError> {
        let body = render_body(&self.config, request);
        let mut attempt = 0;
        loop {
            match self.attempt(request.kind, &body) {
                Ok(r) => return Ok(r),
                Err(e) if attempt < self.config.max_retries && retryable(&e) => {
                    let wait = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(16));
                    warn!("{} attempt {} failed ({e}); retrying in {wait} ms", request.kind.as_str(), attempt + 1);
                    thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                Err(e) => {
                    debug!("{} gave up after {} attempts", request.kind.as_str(), attempt + 1);
                    return Err(e);
                }
            }
        }
    }
}

fn retryable(e: &BridgeError) -> bool {
    match e {
        BridgeError::Timeout(_) | BridgeError::Transport(_) => true,
        BridgeError::Status(code) => *code == 429 || *code >= 500,
        BridgeError::Parse(_) | BridgeError::Config(_) => false,
    }
}

impl Reasoner for BridgeClient {
    fn respond(&mut self, request: &ReasonerRequest) -> Result<ReasonerResponse, ReasonerError> {
        self.complete(request).map_err(Into::into)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_kind_has_an_instruction() {
        use RequestKind::*;
        for k in [
            SingleDecision, SubQuestionSelect, SubQuestionSolve, Summarize, BranchExpand,
            BranchAnalyze, BranchScore, StepGenerate, StepSimulate, StepEstimate, StepExecute,
            StepUpdate, Resolve,
        ] {
            assert!(!instruction(k).is_empty());
        }
    }

    #[test]
    fn fill_leaves_unknown_braces_and_does_not_rescan() {
        let slots = BTreeMap::from([("a", "{b}".to_owned()), ("b", "x".to_owned())]);
        assert_eq!(fill("{a} {b} {c} {", &slots), "{b} x {c} {");
    }

    #[test]
    fn config_validation() {
        assert!(BridgeConfig::default().validate().is_ok());
        let bad = BridgeConfig {
            timeout_ms: 0,
            ..BridgeConfig::default()
        };
        assert!(matches!(bad.validate(), Err(BridgeError::Config(_))));
        let bad = BridgeConfig {
            base_url: "ftp://x".into(),
            ..BridgeConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn endpoint_joins_without_double_slash() {
        let c = BridgeConfig {
            base_url: "http://h:1/v1/".into(),
            ..BridgeConfig::default()
        };
        assert_eq!(c.endpoint(), "http://h:1/v1/chat/completions");
    }

    #[test]
    fn parse_picks_first_choice() {
        let body = br#"{"choices":[{"message":{"role":"assistant","content":"NoAsk"}},{"message":{"role":"assistant","content":"Ask: x"}}]}"#;
        let r = parse_completion(RequestKind::SingleDecision, body).unwrap();
        assert_eq!(r.parsed_decision, Some(pact_core::protocols::AskChoice::NoAsk));
        assert!(matches!(
            parse_completion(RequestKind::SingleDecision, br#"{"choices":[]}"#),
            Err(BridgeError::Parse(_))
        ));
        assert!(parse_completion(RequestKind::SingleDecision, b"<html>").is_err());
    }
}
