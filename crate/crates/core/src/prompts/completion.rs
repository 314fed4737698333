//! Few-shot descriptions from a text-completion service.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ontology::Ontology;
use crate::types::EventStructure;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    /// Event and argument lines of the input, used by the mock as lookup key.
    pub key: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

pub trait CompletionClient: Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

/// One worked example shown to the service before the input event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub event: String,
    pub arguments: String,
    pub description: String,
}

impl Exemplar {
    pub fn from_event(ev: &EventStructure, ont: &Ontology, description: &str) -> Self {
        let (event, arguments) = event_lines(ev, ont);
        Exemplar {
            event,
            arguments,
            description: description.to_string(),
        }
    }

    /// A JSON list of exemplars.
    pub fn load_all(path: impl AsRef<Path>) -> Result<Vec<Self>> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

/// Event label and `role: mention; ...` argument line.
pub fn event_lines(ev: &EventStructure, ont: &Ontology) -> (String, String) {
    let mut sorted = ev.clone();
    sorted.sort_arguments(ont);
    let args: Vec<String> = sorted
        .arguments
        .iter()
        .map(|a| format!("{}: {}", ont.role_phrase(&a.role), a.entity.text))
        .collect();
    (ont.event_label(&ev.event_type).to_string(), args.join("; "))
}

pub fn request_key(ev: &EventStructure, ont: &Ontology) -> String {
    let (e, a) = event_lines(ev, ont);
    format!("{e} | {a}")
}

/// Exemplar blocks followed by the input event with an open description.
pub fn build_prompt(exemplars: &[Exemplar], ev: &EventStructure, ont: &Ontology) -> Result<String> {
    if exemplars.is_empty() {
        return Err(Error::Precondition(
            "completion prompt needs at least one exemplar".into(),
        ));
    }
    let mut out = String::new();
    for ex in exemplars {
        out.push_str(&format!(
            "Event: {}\nArguments: {}\nDescription: {}\n\n",
            ex.event, ex.arguments, ex.description
        ));
    }
    let (e, a) = event_lines(ev, ont);
    out.push_str(&format!("Event: {e}\nArguments: {a}\nDescription:"));
    Ok(out)
}

pub fn make_request(
    exemplars: &[Exemplar],
    ev: &EventStructure,
    ont: &Ontology,
    max_tokens: u32,
) -> Result<CompletionRequest> {
    Ok(CompletionRequest {
        key: request_key(ev, ont),
        prompt: build_prompt(exemplars, ev, ont)?,
        max_tokens,
        temperature: 0.0,
    })
}

/// Trimmed first non-empty line of a raw completion.
pub fn first_line(completion: &str) -> String {
    completion
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("")
        .to_string()
}

/// Replays completions from a key → completion map.
#[derive(Debug, Clone, Default)]
pub struct MockCompletion {
    responses: HashMap<String, String>,
}

impl MockCompletion {
    pub fn new(responses: HashMap<String, String>) -> Self {
        MockCompletion { responses }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let responses = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(MockCompletion { responses })
    }
}

impl CompletionClient for MockCompletion {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        Ok(self
            .responses
            .get(&request.key)
            .cloned()
            .unwrap_or_default())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: usize,
    /// Delay before the second attempt; doubles after each failure.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Client for an HTTP completion endpoint. POSTs
/// `{"prompt", "max_tokens", "temperature", "key"}` and reads
/// `choices[0].text` from the reply.
pub struct HttpCompletion {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    bearer: Option<String>,
}

#[derive(Deserialize)]
struct Reply {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    text: String,
}

enum Failure {
    Retriable(String),
    Fatal(String),
}

impl HttpCompletion {
    pub fn new(url: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        HttpCompletion {
            url: url.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            retry,
            bearer: None,
        }
    }

    pub fn with_bearer_token(mut self, token: impl Into<String>) -> Self {
        self.bearer = Some(token.into());
        self
    }

    fn attempt(&self, request: &CompletionRequest) -> std::result::Result<String, Failure> {
        let mut call = self.agent.post(&self.url);
        if let Some(token) = &self.bearer {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        match call.send_json(request) {
            Ok(resp) => {
                let reply: Reply = resp
                    .into_json()
                    .map_err(|e| Failure::Fatal(format!("unreadable reply: {e}")))?;
                reply
                    .choices
                    .into_iter()
                    .next()
                    .map(|c| c.text)
                    .ok_or_else(|| Failure::Fatal("reply has no choices".into()))
            }
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                Err(Failure::Retriable(format!("status {code}")))
            }
            Err(ureq::Error::Status(code, _)) => Err(Failure::Fatal(format!("status {code}"))),
            Err(ureq::Error::Transport(t)) => Err(Failure::Retriable(t.to_string())),
        }
    }
}

impl CompletionClient for HttpCompletion {
    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let mut delay = self.retry.base_delay;
        let attempts = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(Failure::Fatal(msg)) => {
                    return Err(Error::Completion(format!("{}: {msg}", self.url)))
                }
                Err(Failure::Retriable(msg)) => {
                    log::warn!("completion attempt {attempt}/{attempts} failed: {msg}");
                    last = msg;
                    if attempt < attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Completion(format!(
            "{}: gave up after {attempts} attempts: {last}",
            self.url
        )))
    }
}

/// Send every request with at most `max_in_flight` outstanding at once.
/// Results come back in request order.
pub fn complete_all(
    client: &dyn CompletionClient,
    requests: &[CompletionRequest],
    max_in_flight: usize,
) -> Vec<Result<String>> {
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.max(1).min(requests.len().max(1));
    let mut results: Vec<Option<Result<String>>> = (0..requests.len()).map(|_| None).collect();
    let done = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut got = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i >= requests.len() {
                            break;
                        }
                        got.push((i, client.complete(&requests[i])));
                    }
                    got
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("completion worker panicked"))
            .collect::<Vec<_>>()
    });
    for (i, r) in done {
        results[i] = Some(r);
    }
    results
        .into_iter()
        .map(|r| r.expect("every request answered"))
        .collect()
}
