//! Exact-match scoring and per-strategy tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::QueryRecord;
use crate::ordering::Strategy;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("query {query_id} has neither choices nor gold answers")]
    NoGold { query_id: String },
    #[error("writing report: {0}")]
    Write(String),
}

/// Lowercase, drop punctuation, collapse whitespace, strip leading articles.
pub fn normalize_answer(text: &str) -> String {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words: &[&str] = &cleaned.split_whitespace().collect::<Vec<_>>();
    while let [first, rest @ ..] = words {
        if matches!(*first, "a" | "an" | "the") {
            words = rest;
        } else {
            break;
        }
    }
    words.join(" ")
}

/// Letter answers: `B`, `(B)`, `B.` or `B)`, optionally followed by text.
pub fn parse_choice_letter(answer: &str, num_choices: usize) -> Option<usize> {
    let s = answer.trim();
    // a bare letter must stand alone; after a delimiter, text may follow
    let (letter, rest) = match s.strip_prefix('(') {
        Some(inner) => {
            let mut it = inner.chars();
            let l = it.next()?;
            (l, it.as_str().strip_prefix(')')?)
        }
        None => {
            let mut it = s.chars();
            let l = it.next()?;
            let rest = it.as_str();
            match rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
                Some(after) => (l, after),
                None if rest.is_empty() => (l, rest),
                None => return None,
            }
        }
    };
    if !letter.is_ascii_uppercase() || !(rest.is_empty() || rest.starts_with(char::is_whitespace)) {
        return None;
    }
    let idx = (letter as u8 - b'A') as usize;
    (idx < num_choices).then_some(idx)
}

/// The choice an answer names, by letter or by normalized text.
pub fn matched_choice(answer: &str, choices: &[String]) -> Option<usize> {
    parse_choice_letter(answer, choices.len()).or_else(|| {
        let norm = normalize_answer(answer);
        choices.iter().position(|c| normalize_answer(c) == norm)
    })
}

/// 1 if the answer is correct, 0 otherwise.
pub fn exact_match(answer: &str, record: &QueryRecord) -> Result<u8, EvalError> {
    if let Some(choices) = &record.choices {
        let matched = matched_choice(answer, choices);
        return Ok(u8::from(matched.is_some() && matched == record.gold_choice_index));
    }
    if record.gold_answers.is_empty() {
        return Err(EvalError::NoGold {
            query_id: record.query_id.clone(),
        });
    }
    let norm = normalize_answer(answer);
    Ok(u8::from(
        record.gold_answers.iter().any(|g| normalize_answer(g) == norm),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub strategy: Strategy,
    pub answer: String,
    /// `None` when the query carries no gold label.
    pub em: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_choice_index: Option<usize>,
}

pub fn score(record: &QueryRecord, strategy: Strategy, answer: &str) -> EvalRecord {
    EvalRecord {
        query_id: record.query_id.clone(),
        strategy,
        answer: answer.to_owned(),
        em: exact_match(answer, record).ok(),
        matched_choice_index: record.choices.as_deref().and_then(|c| matched_choice(answer, c)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub n: usize,
    pub scored: usize,
    /// Percentage over scored rows; `None` if nothing was scored.
    pub em_accuracy: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<EvalRecord>,
}

/// One report per strategy present, in the fixed strategy order.
pub fn aggregate(records: &[EvalRecord]) -> Vec<StrategyReport> {
    let mut groups: BTreeMap<Strategy, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.strategy).or_default().push(r.clone());
    }
    Strategy::ALL
        .into_iter()
        .filter_map(|s| groups.remove(&s).map(|rows| (s, rows)))
        .map(|(strategy, rows)| {
            let ems: Vec<u8> = rows.iter().filter_map(|r| r.em).collect();
            let em_accuracy =
                (!ems.is_empty()).then(|| 100.0 * ems.iter().map(|&e| e as f64).sum::<f64>() / ems.len() as f64);
            StrategyReport {
                strategy,
                n: rows.len(),
                scored: ems.len(),
                em_accuracy,
                rows,
            }
        })
        .collect()
}

/// Query ids where `a` scored 1 and `b` scored 0.
pub fn strict_wins(records: &[EvalRecord], a: Strategy, b: Strategy) -> Vec<String> {
    let of = |s: Strategy| -> BTreeMap<&str, u8> {
        records
            .iter()
            .filter(|r| r.strategy == s)
            .filter_map(|r| r.em.map(|e| (r.query_id.as_str(), e)))
            .collect()
    };
    let (ea, eb) = (of(a), of(b));
    ea.iter()
        .filter(|(q, &e)| e == 1 && eb.get(*q) == Some(&0))
        .map(|(q, _)| q.to_string())
        .collect()
}

#[derive(Serialize)]
struct ResultLine<'a> {
    query_id: &'a str,
    strategy: Strategy,
    answer: &'a str,
    em: Option<u8>,
}

/// `{"query_id","strategy","answer","em"}` per line.
pub fn write_results_jsonl<W: Write>(mut out: W, records: &[EvalRecord]) -> std::io::Result<()> {
    for r in records {
        let line = ResultLine {
            query_id: &r.query_id,
            strategy: r.strategy,
            answer: &r.answer,
            em: r.em,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Serialize)]
struct JudgeLine<'a> {
    query_id: &'a str,
    strategy: Strategy,
    question: &'a str,
    answer: &'a str,
    gold_answers: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    choices: Option<&'a [String]>,
}

/// Question, answer and gold side by side, for grading outside this tool.
pub fn write_judge_jsonl<W: Write>(mut out: W, records: &[EvalRecord], queries: &[QueryRecord]) -> std::io::Result<()> {
    let by_id: BTreeMap<&str, &QueryRecord> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    for r in records {
        let Some(q) = by_id.get(r.query_id.as_str()) else {
            continue;
        };
        let line = JudgeLine {
            query_id: &r.query_id,
            strategy: r.strategy,
            question: &q.query_text,
            answer: &r.answer,
            gold_answers: &q.gold_answers,
            choices: q.choices.as_deref(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn accuracy_cell(r: &StrategyReport) -> String {
    r.em_accuracy.map_or_else(|| "-".to_owned(), |a| format!("{a:.2}"))
}

/// Aligned text table: strategy, n, scored, EM.
pub fn render_table(reports: &[StrategyReport]) -> String {
    let header = ["strategy", "n", "scored", "em"];
    let rows: Vec<[String; 4]> = reports
        .iter()
        .map(|r| {
            [
                r.strategy.to_string(),
                r.n.to_string(),
                r.scored.to_string(),
                accuracy_cell(r),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut line = |cells: [&str; 4]| {
        let mut s = format!("{:<w$}", cells[0], w = widths[0]);
        for (cell, w) in cells.iter().zip(widths).skip(1) {
            s.push_str(&format!("  {cell:>w$}"));
        }
        out.push_str(s.trim_end());
        out.push('\n');
    };
    line(header);
    for row in &rows {
        line([&row[0], &row[1], &row[2], &row[3]].map(String::as_str));
    }
    out
}

pub fn write_csv<W: Write>(out: W, reports: &[StrategyReport]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| EvalError::Write(e.to_string());
    w.write_record(["strategy", "n", "scored", "em_accuracy"])
        .map_err(err)?;
    for r in reports {
        let acc = r.em_accuracy.map(|a| format!("{a}")).unwrap_or_default();
        w.write_record([r.strategy.as_str(), &r.n.to_string(), &r.scored.to_string(), &acc])
            .map_err(err)?;
    }
    w.flush().map_err(|e| EvalError::Write(e.to_string()))
}
