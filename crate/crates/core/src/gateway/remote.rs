//! Chat-completion backend: one system prompt per agent role, JSON replies
//! parsed into the declared object, re-asked on parse failure.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::limiter::Limiter;
use super::transport::Transport;
use super::{prompts, AgentConfig, Backend, Valence, ValenceJudgment};
use crate::error::{Error, Result};
use crate::measurement::{Responder, Subject};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteRoles {
    pub parser: AgentConfig,
    pub generator: AgentConfig,
    pub evaluator: AgentConfig,
    pub embedder: AgentConfig,
}

struct RoleClient {
    name: &'static str,
    config: AgentConfig,
    limiter: Limiter,
}

impl RoleClient {
    fn new(name: &'static str, config: AgentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            name,
            limiter: Limiter::new(config.max_concurrency),
            config,
        })
    }
}

/// Shared request plumbing: bounded concurrency, transport retries, transcript.
struct Channel {
    transport: Arc<dyn Transport>,
    transcript: Option<Mutex<File>>,
    next_id: AtomicU64,
}

impl Channel {
    fn post(&self, role: &RoleClient, body: &Value) -> Result<Value> {
        let url = role
            .config
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{} agent has no endpoint", role.name)))?;
        let request_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut failures = 0u32;
        loop {
            let outcome = {
                let _permit = role.limiter.acquire();
                self.transport.post_json(url, body, role.config.timeout())
            };
            match outcome {
                Ok(resp) => {
                    self.log(request_id, role.name, body, Some(&resp), None);
                    return Ok(resp);
                }
                Err(e) => {
                    self.log(request_id, role.name, body, None, Some(&e.0));
                    failures += 1;
                    if failures > role.config.max_retries {
                        return Err(Error::Retriable {
                            attempts: failures,
                            message: e.0,
                        });
                    }
                    let backoff = role
                        .config
                        .retry_backoff_ms
                        .saturating_mul(1 << (failures - 1).min(6))
                        .min(10_000);
                    if backoff > 0 {
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
    }

    fn log(&self, id: u64, role: &str, req: &Value, resp: Option<&Value>, err: Option<&str>) {
        let Some(file) = &self.transcript else {
            return;
        };
        let line = json!({
            "request_id": id,
            "role": role,
            "prompt_version": prompts::PROMPT_VERSION,
            "request": req,
            "response": resp,
            "error": err,
        });
        let mut f = file.lock().unwrap();
        if let Err(e) = writeln!(f, "{line}") {
            log::warn!("transcript write failed: {e}");
        }
    }

    /// Sends a chat exchange and parses the reply, re-asking with the parse
    /// error appended until `max_retries` re-asks are used up.
    fn chat_structured<T>(
        &self,
        role: &RoleClient,
        system: &str,
        user: &str,
        parse: impl Fn(&Value) -> std::result::Result<T, String>,
    ) -> Result<T> {
        let mut messages = vec![
            json!({"role": "system", "content": system}),
            json!({"role": "user", "content": user}),
        ];
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            let body = chat_body(&role.config, &role.config.model_name, &messages);
            let resp = self.post(role, &body)?;
            let content = reply_content(&resp);
            let parsed = content
                .as_deref()
                .ok_or_else(|| "reply has no message content".to_string())
                .and_then(extract_json)
                .and_then(|v| parse(&v));
            match parsed {
                Ok(t) => return Ok(t),
                Err(msg) => {
                    let raw = content.unwrap_or_else(|| resp.to_string());
                    if attempts > role.config.max_retries {
                        return Err(Error::Content {
                            attempts,
                            message: msg,
                            raw,
                        });
                    }
                    messages.push(json!({"role": "assistant", "content": raw}));
                    messages.push(json!({
                        "role": "user",
                        "content": format!(
                            "Your reply could not be parsed: {msg}. Reply again with only the JSON object."
                        ),
                    }));
                }
            }
        }
    }
}

fn chat_body(config: &AgentConfig, model: &str, messages: &[Value]) -> Value {
    let mut body = json!({"model": model, "messages": messages});
    if let Some(t) = config.temperature {
        body["temperature"] = json!(t);
    }
    if let Some(p) = config.top_p {
        body["top_p"] = json!(p);
    }
    body
}

fn reply_content(resp: &Value) -> Option<String> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
}

/// Pulls the outermost JSON object out of a reply, tolerating code fences or
/// chatter around it.
fn extract_json(content: &str) -> std::result::Result<Value, String> {
    let start = content.find('{').ok_or("no JSON object in reply")?;
    let end = content.rfind('}').ok_or("no JSON object in reply")?;
    if end < start {
        return Err("no JSON object in reply".into());
    }
    serde_json::from_str(&content[start..=end]).map_err(|e| e.to_string())
}

fn string_list(v: &Value, field: &str) -> std::result::Result<Vec<String>, String> {
    let arr = v
        .get(field)
        .and_then(Value::as_array)
        .ok_or_else(|| format!("missing array field `{field}`"))?;
    arr.iter()
        .map(|x| {
            x.as_str()
                .map(str::to_string)
                .ok_or_else(|| format!("`{field}` must contain only strings"))
        })
        .collect()
}

fn parse_judgment(v: &Value) -> std::result::Result<ValenceJudgment, String> {
    let relevant = v
        .get("relevant")
        .and_then(Value::as_bool)
        .ok_or("missing boolean field `relevant`")?;
    let confidence = match v.get("confidence") {
        None | Some(Value::Null) => 1.0,
        Some(c) => c.as_f64().ok_or("`confidence` must be a number")?,
    };
    if !(0.0..=1.0).contains(&confidence) {
        return Err("`confidence` must lie in [0, 1]".into());
    }
    if !relevant {
        return Ok(ValenceJudgment::irrelevant(confidence));
    }
    let valence = match v.get("valence").and_then(Value::as_str) {
        Some("supports") => Valence::Supports,
        Some("opposes") => Valence::Opposes,
        _ => return Err("relevant judgments need `valence` of \"supports\" or \"opposes\"".into()),
    };
    Ok(ValenceJudgment::relevant(valence, confidence))
}

pub struct RemoteBackend {
    channel: Channel,
    parser: RoleClient,
    generator: RoleClient,
    evaluator: RoleClient,
    embedder: RoleClient,
}

impl RemoteBackend {
    pub fn new(roles: RemoteRoles, transport: Arc<dyn Transport>) -> Result<Self> {
        Ok(Self {
            channel: Channel {
                transport,
                transcript: None,
                next_id: AtomicU64::new(0),
            },
            parser: RoleClient::new("parser", roles.parser)?,
            generator: RoleClient::new("generator", roles.generator)?,
            evaluator: RoleClient::new("evaluator", roles.evaluator)?,
            embedder: RoleClient::new("embedder", roles.embedder)?,
        })
    }

    /// Appends every request/response pair to a JSONL audit file.
    pub fn with_transcript(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.channel.transcript = Some(Mutex::new(f));
        Ok(self)
    }
}

impl Backend for RemoteBackend {
    fn parse_perceptions(&self, text: &str) -> Result<Vec<String>> {
        self.channel
            .chat_structured(&self.parser, prompts::PERCEPTION_PARSER, text, |v| {
                string_list(v, "perceptions")
            })
    }

    fn generate_values(&self, perception: &str) -> Result<Vec<String>> {
        self.channel
            .chat_structured(&self.generator, prompts::VALUE_GENERATOR, perception, |v| {
                string_list(v, "values")
            })
    }

    fn evaluate_valence(&self, perception: &str, value: &str) -> Result<ValenceJudgment> {
        let user = json!({"perception": perception, "value": value}).to_string();
        self.channel
            .chat_structured(&self.evaluator, prompts::VALUE_EVALUATOR, &user, parse_judgment)
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let body = json!({"model": self.embedder.config.model_name, "input": text});
        let resp = self.channel.post(&self.embedder, &body)?;
        let arr = resp
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Content {
                attempts: 1,
                message: "missing data[0].embedding".into(),
                raw: resp.to_string(),
            })?;
        arr.iter()
            .map(|x| {
                x.as_f64().ok_or_else(|| Error::Content {
                    attempts: 1,
                    message: "non-numeric embedding entry".into(),
                    raw: resp.to_string(),
                })
            })
            .collect()
    }

    fn generate_eliciting_prompt(&self, value: &str) -> Result<String> {
        self.channel
            .chat_structured(&self.generator, prompts::ITEM_GENERATOR, value, |v| {
                v.get("value")
                    .and_then(Value::as_str)
                    .ok_or("missing string field `value`")?;
                let q = v
                    .get("question")
                    .and_then(Value::as_str)
                    .ok_or("missing string field `question`")?;
                if q.trim().is_empty() {
                    return Err("empty `question`".to_string());
                }
                Ok(q.trim().to_string())
            })
    }
}

/// Answers value-eliciting prompts as a measurement subject: the subject's
/// model name goes into the request and its profiling prompt becomes the
/// system message.
pub struct ChatResponder {
    channel: Channel,
    role: RoleClient,
    profiles: BTreeMap<String, String>,
}

impl ChatResponder {
    pub fn new(
        config: AgentConfig,
        profiles: BTreeMap<String, String>,
        transport: Arc<dyn Transport>,
    ) -> Result<Self> {
        Ok(Self {
            channel: Channel {
                transport,
                transcript: None,
                next_id: AtomicU64::new(0),
            },
            role: RoleClient::new("subject", config)?,
            profiles,
        })
    }
}

impl Responder for ChatResponder {
    fn respond(&self, subject: &Subject, prompt: &str) -> Result<String> {
        let profile = self.profiles.get(&subject.profile_prompt_id).ok_or_else(|| {
            Error::Config(format!(
                "no profiling prompt with id `{}`",
                subject.profile_prompt_id
            ))
        })?;
        let messages = [
            json!({"role": "system", "content": profile}),
            json!({"role": "user", "content": prompt}),
        ];
        let body = chat_body(&self.role.config, &subject.model_name, &messages);
        let resp = self.channel.post(&self.role, &body)?;
        reply_content(&resp).ok_or_else(|| Error::Content {
            attempts: 1,
            message: "reply has no message content".into(),
            raw: resp.to_string(),
        })
    }
}
