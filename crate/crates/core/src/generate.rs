//! Grounded answer generation: prompt assembly, model access and parsing of
//! the structured `{"response", "used_PMIDs"}` answer.
//!
//! The prompt has three parts: a fixed system instruction, the question, and
//! the retrieved documents as a JSON object keyed `doc1..docN` in rank order.
//! Its bytes depend only on the question and the documents.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;
use thiserror::Error;

use crate::corpus::{tokenize, Document, TokenizerConfig};
use crate::http::JsonClient;
use crate::scored::ScoredDoc;
use crate::timing::Timings;

pub const SYSTEM_PROMPT: &str = "You are a scientific medical assistant designed to synthesize responses from specific medical documents. Only use the information provided in the documents to answer questions. The first documents should be the most relevant. Do not use any other information except for the documents provided. When answering questions, always format your response as a JSON object with fields for 'response', 'used_PMIDs'. Cite all PMIDs your response is based on in the 'used_PMIDs' field. Please think step-by-step before answering questions and provide the most accurate response possible. Provide your answer to the question in the 'response' field.";

pub const USER_PREFIX: &str = "Answer the following question: ";
pub const CONTEXT_PREFIX: &str = "Here are the documents:\n";

/// Temperature used for every evaluation call.
pub const EVAL_TEMPERATURE: f64 = 0.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    #[error("malformed generation: {0}")]
    Malformed(String),
    #[error("generator backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub context_text: String,
}

impl PromptBundle {
    /// The three parts joined by blank lines; the form stored in golden
    /// files.
    pub fn render(&self) -> String {
        format!("{}\n\n{}\n\n{}", self.system_text, self.user_text, self.context_text)
    }
}

#[derive(Serialize)]
struct ContextEntry<'a> {
    #[serde(rename = "PMID")]
    pmid: &'a str,
    title: &'a str,
    content: &'a str,
    relevance_score: Box<RawValue>,
}

/// Formats a float the way Python's `repr` does (`1e-05`, `100.0`,
/// `1e+16`), so context JSON matches prompts rendered by Python clients.
/// Non-finite values become `null`.
pub fn py_float_repr(x: f64) -> String {
    if !x.is_finite() {
        return "null".to_owned();
    }
    // Shortest round-trip digit count, then the correctly rounded string of
    // that length; ties between equally short candidates go to the closest.
    let shortest = format!("{x:e}");
    let n_digits = shortest.split('e').next().unwrap_or("").bytes().filter(u8::is_ascii_digit).count();
    let sci = format!("{x:.*e}", n_digits.saturating_sub(1));
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp output has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mantissa) = mantissa.strip_prefix('-').map_or(("", mantissa), |m| ("-", m));
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    if (-4..16).contains(&exp) {
        let point = exp + 1;
        if point <= 0 {
            format!("{sign}0.{}{digits}", "0".repeat((-point) as usize))
        } else if point as usize >= digits.len() {
            format!("{sign}{digits}{}.0", "0".repeat(point as usize - digits.len()))
        } else {
            let (int, frac) = digits.split_at(point as usize);
            format!("{sign}{int}.{frac}")
        }
    } else {
        let (first, rest) = digits.split_at(1);
        let mant = if rest.is_empty() { first.to_owned() } else { format!("{first}.{rest}") };
        let esign = if exp < 0 { '-' } else { '+' };
        format!("{sign}{mant}e{esign}{:02}", exp.abs())
    }
}

struct ContextDocs<'a>(&'a [(ScoredDoc, &'a Document)]);

impl Serialize for ContextDocs<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (i, (scored, doc)) in self.0.iter().enumerate() {
            map.serialize_entry(
                &format!("doc{}", i + 1),
                &ContextEntry {
                    pmid: &doc.pmid,
                    title: &doc.title,
                    content: &doc.content,
                    relevance_score: RawValue::from_string(py_float_repr(scored.score))
                        .expect("float repr is valid JSON"),
                },
            )?;
        }
        map.end()
    }
}

/// Assembles the prompt for `docs`, which must already be in rank order.
/// Each entry's `relevance_score` is the score of the stage that produced
/// it.
pub fn build_prompt(question: &str, docs: &[(ScoredDoc, &Document)]) -> PromptBundle {
    let mut json = Vec::new();
    let formatter = serde_json::ser::PrettyFormatter::with_indent(b"    ");
    let mut ser = serde_json::Serializer::with_formatter(&mut json, formatter);
    ContextDocs(docs)
        .serialize(&mut ser)
        .expect("in-memory JSON serialization cannot fail");
    PromptBundle {
        system_text: SYSTEM_PROMPT.to_owned(),
        user_text: format!("{USER_PREFIX}{question}"),
        context_text: format!("{CONTEXT_PREFIX}{}", String::from_utf8(json).expect("JSON is UTF-8")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    NoContext,
    CitationViolation,
    ParseRepaired,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flag::NoContext => "no_context",
            Flag::CitationViolation => "citation_violation",
            Flag::ParseRepaired => "parse_repaired",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedAnswer {
    pub response: String,
    pub used_pmids: Vec<String>,
    pub flags: BTreeSet<Flag>,
}

/// Final result of one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAResult {
    pub response: String,
    pub used_pmids: Vec<String>,
    pub documents: Vec<ScoredDoc>,
    pub timings: Timings,
    pub flags: BTreeSet<Flag>,
}

fn answer_fields(value: &Value) -> Option<(String, Vec<String>)> {
    let obj = value.as_object()?;
    let response = obj.get("response")?.as_str()?.to_owned();
    let used = obj
        .get("used_PMIDs")?
        .as_array()?
        .iter()
        .map(|v| match v {
            Value::String(s) => Some(s.trim().to_owned()),
            Value::Number(n) => n.as_u64().map(|n| n.to_string()),
            _ => None,
        })
        .collect::<Option<Vec<_>>>()?;
    Some((response, used))
}

/// The first balanced `{...}` block in `raw`, honoring JSON string escapes.
fn first_object(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in raw[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&raw[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Parses a model answer. If `raw` is not itself the answer object, one
/// repair pass extracts the first `{...}` block. Citations outside
/// `context_pmids` are kept but flagged.
pub fn parse_answer(raw: &str, context_pmids: &HashSet<String>) -> Result<ParsedAnswer, GenerateError> {
    let mut flags = BTreeSet::new();
    let direct = serde_json::from_str::<Value>(raw.trim()).ok().and_then(|v| answer_fields(&v));
    let (response, used_pmids) = match direct {
        Some(fields) => fields,
        None => {
            let repaired = first_object(raw)
                .and_then(|block| serde_json::from_str::<Value>(block).ok())
                .and_then(|v| answer_fields(&v))
                .ok_or_else(|| GenerateError::Malformed(truncate(raw, 200)))?;
            flags.insert(Flag::ParseRepaired);
            repaired
        }
    };
    if used_pmids.iter().any(|p| !context_pmids.contains(p)) {
        flags.insert(Flag::CitationViolation);
    }
    Ok(ParsedAnswer {
        response,
        used_pmids,
        flags,
    })
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

impl YesNo {
    pub fn flip(self) -> Self {
        match self {
            YesNo::Yes => YesNo::No,
            YesNo::No => YesNo::Yes,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            YesNo::Yes => "yes",
            YesNo::No => "no",
        }
    }
}

/// Predicted class of a free-text answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
    Invalid,
}

impl From<YesNo> for Label {
    fn from(a: YesNo) -> Self {
        match a {
            YesNo::Yes => Label::Yes,
            YesNo::No => Label::No,
        }
    }
}

/// Maps a response to yes/no: the first `yes` or `no` token anywhere in
/// the lowercased text wins; otherwise the answer is invalid.
pub fn normalize_label(response: &str) -> Label {
    tokenize(response, &TokenizerConfig::default())
        .into_iter()
        .find_map(|t| match t.as_str() {
            "yes" => Some(Label::Yes),
            "no" => Some(Label::No),
            _ => None,
        })
        .unwrap_or(Label::Invalid)
}

/// Text-generation backend.
pub trait Generator: Send + Sync {
    fn complete(&self, system: &str, user: &str, context: &str, temperature: f64) -> Result<String, GenerateError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAnswer {
    pub answer: YesNo,
    pub pmids: HashSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubPolicy {
    /// Answer `a` and cite every context document.
    FixedAnswer(String),
    /// Keyed by question text. Emit the gold label when any gold document
    /// is in context (citing those), otherwise the opposite label.
    GoldEcho(HashMap<String, GoldAnswer>),
}

#[derive(Serialize)]
struct RawAnswer<'a> {
    response: &'a str,
    #[serde(rename = "used_PMIDs")]
    used_pmids: Vec<&'a str>,
}

pub fn stub_generate(question: &str, context_pmids: &[String], policy: &StubPolicy) -> String {
    let answer = match policy {
        StubPolicy::FixedAnswer(a) => RawAnswer {
            response: a,
            used_pmids: context_pmids.iter().map(String::as_str).collect(),
        },
        StubPolicy::GoldEcho(gold) => match gold.get(question) {
            Some(g) => {
                let cited: Vec<&str> = context_pmids
                    .iter()
                    .filter(|p| g.pmids.contains(*p))
                    .map(String::as_str)
                    .collect();
                let label = if cited.is_empty() { g.answer.flip() } else { g.answer };
                RawAnswer {
                    response: label.as_str(),
                    used_pmids: cited,
                }
            }
            None => RawAnswer {
                response: "unknown question",
                used_pmids: Vec::new(),
            },
        },
    };
    serde_json::to_string(&answer).expect("in-memory JSON serialization cannot fail")
}

/// Recovers `(question, pmids in rank order)` from the user and context
/// prompt parts.
pub fn read_prompt(user: &str, context: &str) -> Result<(String, Vec<String>), GenerateError> {
    let question = user
        .strip_prefix(USER_PREFIX)
        .ok_or_else(|| GenerateError::Backend("unexpected user prompt".into()))?;
    let body = context
        .strip_prefix(CONTEXT_PREFIX)
        .ok_or_else(|| GenerateError::Backend("unexpected context prompt".into()))?;
    let docs: serde_json::Map<String, Value> =
        serde_json::from_str(body).map_err(|e| GenerateError::Backend(format!("context is not JSON: {e}")))?;
    let mut entries: Vec<(usize, String)> = docs
        .iter()
        .map(|(k, v)| {
            let n = k.strip_prefix("doc").and_then(|n| n.parse().ok());
            let pmid = v.get("PMID").and_then(Value::as_str);
            match (n, pmid) {
                (Some(n), Some(p)) => Ok((n, p.to_owned())),
                _ => Err(GenerateError::Backend(format!("bad context entry {k}"))),
            }
        })
        .collect::<Result<_, _>>()?;
    entries.sort_unstable();
    Ok((question.to_owned(), entries.into_iter().map(|(_, p)| p).collect()))
}

/// Offline generator that answers from the prompt alone.
#[derive(Debug, Clone)]
pub struct StubGenerator {
    policy: StubPolicy,
}

impl StubGenerator {
    pub fn new(policy: StubPolicy) -> Self {
        Self { policy }
    }
}

impl Generator for StubGenerator {
    fn complete(&self, _system: &str, user: &str, context: &str, _temperature: f64) -> Result<String, GenerateError> {
        let (question, pmids) = read_prompt(user, context)?;
        Ok(stub_generate(&question, &pmids, &self.policy))
    }
}

/// Counting semaphore bounding concurrent backend calls.
#[derive(Debug)]
struct InFlight {
    cap: usize,
    used: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn new(cap: usize) -> Self {
        Self {
            cap: cap.max(1),
            used: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightGuard<'_> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= self.cap {
            used = self.freed.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct ChatConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

/// Client for a chat-completions compatible endpoint. The system prompt is
/// sent as the system message; question and documents form one user
/// message.
#[derive(Debug)]
pub struct ChatCompletionsGenerator {
    config: ChatConfig,
    client: JsonClient,
    in_flight: InFlight,
}

impl ChatCompletionsGenerator {
    pub fn new(config: ChatConfig) -> Self {
        Self {
            client: JsonClient::new(config.timeout),
            in_flight: InFlight::new(config.max_in_flight),
            config,
        }
    }
}

impl Generator for ChatCompletionsGenerator {
    fn complete(&self, system: &str, user: &str, context: &str, temperature: f64) -> Result<String, GenerateError> {
        let content = format!("{user}\n\n{context}");
        let body = ChatRequest {
            model: &self.config.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: system,
                },
                ChatMessage {
                    role: "user",
                    content: &content,
                },
            ],
            temperature,
        };
        let _slot = self.in_flight.acquire();
        let resp: ChatResponse = self
            .client
            .post(&self.config.endpoint, self.config.api_key.as_deref(), &body)
            .map_err(GenerateError::Backend)?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GenerateError::Backend("response has no message content".into()))
    }
}
