use std::fmt;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CorpusError;

/// One query with its long context and gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRecord {
    #[serde(rename = "id")]
    pub query_id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    pub context: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_choice_index: Option<usize>,
}

impl QueryRecord {
    pub fn is_multiple_choice(&self) -> bool {
        self.choices.is_some()
    }

    pub fn has_gold(&self) -> bool {
        self.choices.is_some() || !self.gold_answers.is_empty()
    }
}

/// Why a dataset line was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RecordFault {
    InvalidJson(String),
    NotAnObject,
    MissingField,
    WrongType(&'static str),
    OutOfRange(String),
}

impl fmt::Display for RecordFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordFault::InvalidJson(msg) => write!(f, "invalid JSON: {msg}"),
            RecordFault::NotAnObject => f.write_str("line is not a JSON object"),
            RecordFault::MissingField => f.write_str("missing required field"),
            RecordFault::WrongType(expected) => write!(f, "expected {expected}"),
            RecordFault::OutOfRange(msg) => f.write_str(msg),
        }
    }
}

fn malformed(line: usize, field: &str, fault: RecordFault) -> CorpusError {
    CorpusError::MalformedRecord {
        line,
        field: field.to_owned(),
        fault,
    }
}

fn required_str(obj: &Map<String, Value>, line: usize, field: &str) -> Result<String, CorpusError> {
    match obj.get(field) {
        None => Err(malformed(line, field, RecordFault::MissingField)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(malformed(line, field, RecordFault::WrongType("a string"))),
    }
}

fn str_list(value: &Value, line: usize, field: &str) -> Result<Vec<String>, CorpusError> {
    let items = value
        .as_array()
        .ok_or_else(|| malformed(line, field, RecordFault::WrongType("an array of strings")))?;
    items
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_owned)
                .ok_or_else(|| malformed(line, field, RecordFault::WrongType("an array of strings")))
        })
        .collect()
}

/// Parses one dataset line. `line` is 1-based and only used for errors.
pub fn parse_record(raw: &str, line: usize) -> Result<QueryRecord, CorpusError> {
    let value: Value =
        serde_json::from_str(raw).map_err(|e| malformed(line, "", RecordFault::InvalidJson(e.to_string())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(line, "", RecordFault::NotAnObject))?;

    let query_id = required_str(obj, line, "id")?;
    let query_text = required_str(obj, line, "query")?;
    let context = required_str(obj, line, "context")?;
    let gold_answers = match obj.get("answers") {
        None => return Err(malformed(line, "answers", RecordFault::MissingField)),
        Some(v) => str_list(v, line, "answers")?,
    };
    let choices = match obj.get("choices") {
        None | Some(Value::Null) => None,
        Some(v) => Some(str_list(v, line, "choices")?),
    };
    let gold_choice_index = match obj.get("gold_choice_index") {
        None | Some(Value::Null) => None,
        Some(v) => Some(v.as_u64().ok_or_else(|| {
            malformed(
                line,
                "gold_choice_index",
                RecordFault::WrongType("a non-negative integer"),
            )
        })? as usize),
    };

    match (&choices, gold_choice_index) {
        (Some(c), Some(g)) if g >= c.len() => {
            return Err(malformed(
                line,
                "gold_choice_index",
                RecordFault::OutOfRange(format!("index {g} with {} choices", c.len())),
            ))
        }
        (Some(_), None) => return Err(malformed(line, "gold_choice_index", RecordFault::MissingField)),
        (None, Some(_)) => {
            return Err(malformed(
                line,
                "gold_choice_index",
                RecordFault::OutOfRange("gold_choice_index without choices".into()),
            ))
        }
        _ => {}
    }

    Ok(QueryRecord {
        query_id,
        query_text,
        context,
        gold_answers,
        choices,
        gold_choice_index,
    })
}

/// Reads a JSONL dataset, one record per non-blank line, in file order.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<QueryRecord>, CorpusError> {
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Read(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(parse_record(&line, idx + 1)?);
    }
    Ok(records)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QueryRecord>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_dataset(std::io::BufReader::new(file))
}
