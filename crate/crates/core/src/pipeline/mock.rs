//! Deterministic extractive stand-in for a language model.
//!
//! Worker prompts: collect `key: value` lines from the previous summary and
//! the current chunk, keep at most `capacity` of them and emit those lines
//! as the new summary. Facts whose key shares a word with the question rank
//! first, then facts reachable from them by value-to-key links, then the
//! rest; within a rank newer facts win.
//!
//! Manager prompts: start from the fact whose key best matches the question
//! and follow value-to-key links to the end, answering with the last value.

use std::collections::HashSet;

use super::backend::{BackendLimits, GenerationBackend, GenerationFailure, GenerationParams};
use crate::similarity::terms;

const WORKER_SUMMARY: &str = "\nHere is the summary of the previous source text: ";
const WORKER_QUESTION: &str = "\nQuestion: ";
const WORKER_TAIL: &str = "\nYou need to read current source text";
const MANAGER_SUMMARY: &str = "You need to answer based on the summary:\n";
const MANAGER_QUESTION: &str = "\n\nQuestion: ";
const MANAGER_TAIL: &str = "\nAnswer:";

pub const UNKNOWN_ANSWER: &str = "unknown";

const STOPWORDS: &[&str] = &[
    "about", "and", "are", "but", "can", "did", "does", "for", "from", "had", "has", "have", "her", "his", "how",
    "into", "its", "not", "of", "one", "that", "the", "their", "them", "then", "there", "these", "they", "this",
    "those", "was", "were", "what", "when", "where", "which", "who", "whom", "whose", "why", "will", "with", "you",
];

#[derive(Debug, Clone)]
pub struct MockBackend {
    capacity: usize,
    name: String,
}

impl MockBackend {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "mock capacity must be at least 1");
        Self {
            capacity,
            name: format!("mock-{capacity}"),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}

impl Default for MockBackend {
    fn default() -> Self {
        Self::new(8)
    }
}

/// A `key: value` line; keys are lowercased and trimmed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub key: String,
    pub value: String,
}

impl Fact {
    fn line(&self) -> String {
        format!("{}: {}", self.key, self.value)
    }
}

pub fn parse_facts(text: &str) -> Vec<Fact> {
    text.lines()
        .filter_map(|line| {
            let (k, v) = line.split_once(':')?;
            let (key, value) = (k.trim().to_lowercase(), v.trim());
            (!key.is_empty() && !value.is_empty()).then(|| Fact {
                key,
                value: value.to_owned(),
            })
        })
        .collect()
}

fn query_terms(query: &str) -> HashSet<String> {
    terms(query)
        .into_iter()
        .filter(|t| t.chars().count() >= 3 && !STOPWORDS.contains(&t.as_str()))
        .collect()
}

fn overlap(key: &str, query: &HashSet<String>) -> usize {
    terms(key)
        .into_iter()
        .collect::<HashSet<_>>()
        .intersection(query)
        .count()
}

enum Parsed<'a> {
    Worker {
        chunk: &'a str,
        summary: &'a str,
        query: &'a str,
    },
    Manager {
        summary: &'a str,
        query: &'a str,
    },
}

fn parse_prompt(prompt: &str) -> Option<Parsed<'_>> {
    if let (Some(s), Some(t)) = (prompt.find(WORKER_SUMMARY), prompt.rfind(WORKER_TAIL)) {
        let q = prompt[..t].rfind(WORKER_QUESTION)?;
        let start = s + WORKER_SUMMARY.len();
        if q < start {
            return None;
        }
        return Some(Parsed::Worker {
            chunk: &prompt[..s],
            summary: &prompt[start..q],
            query: &prompt[q + WORKER_QUESTION.len()..t],
        });
    }
    let s = prompt.find(MANAGER_SUMMARY)? + MANAGER_SUMMARY.len();
    let q = prompt.rfind(MANAGER_QUESTION)?;
    let t = prompt.rfind(MANAGER_TAIL)?;
    if q < s || t < q {
        return None;
    }
    Some(Parsed::Manager {
        summary: &prompt[s..q],
        query: &prompt[q + MANAGER_QUESTION.len()..t],
    })
}

impl MockBackend {
    fn work(&self, chunk: &str, summary: &str, query: &str) -> String {
        let q = query_terms(query);
        let mut seen = HashSet::new();
        let candidates: Vec<Fact> = parse_facts(summary)
            .into_iter()
            .chain(parse_facts(chunk))
            .filter(|f| seen.insert(f.key.clone()))
            .collect();

        let mut class: Vec<u8> = candidates
            .iter()
            .map(|f| if overlap(&f.key, &q) > 0 { 0 } else { 2 })
            .collect();
        loop {
            let linked: HashSet<String> = candidates
                .iter()
                .zip(&class)
                .filter(|(_, &c)| c <= 1)
                .map(|(f, _)| f.value.to_lowercase())
                .collect();
            let mut changed = false;
            for (f, c) in candidates.iter().zip(class.iter_mut()) {
                if *c == 2 && linked.contains(&f.key) {
                    *c = 1;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        let mut ranked: Vec<usize> = (0..candidates.len()).collect();
        ranked.sort_by(|&a, &b| class[a].cmp(&class[b]).then(b.cmp(&a)));
        ranked.truncate(self.capacity);
        ranked.sort_unstable();
        ranked
            .into_iter()
            .map(|i| candidates[i].line())
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn answer(&self, summary: &str, query: &str) -> String {
        let q = query_terms(query);
        let facts = parse_facts(summary);
        let mut best: Option<(usize, usize)> = None;
        for (i, f) in facts.iter().enumerate() {
            let o = overlap(&f.key, &q);
            if o > 0 && best.is_none_or(|(_, b)| o > b) {
                best = Some((i, o));
            }
        }
        let Some((mut at, _)) = best else {
            return UNKNOWN_ANSWER.to_owned();
        };
        let mut visited = HashSet::from([at]);
        loop {
            let next_key = facts[at].value.to_lowercase();
            match facts.iter().position(|f| f.key == next_key) {
                Some(n) if visited.insert(n) => at = n,
                _ => return facts[at].value.clone(),
            }
        }
    }
}

impl GenerationBackend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn limits(&self) -> BackendLimits {
        BackendLimits {
            max_context_tokens: usize::MAX,
            max_output_tokens: usize::MAX,
        }
    }

    fn generate(&self, prompt: &str, _params: &GenerationParams) -> Result<String, GenerationFailure> {
        Ok(match parse_prompt(prompt) {
            Some(Parsed::Worker { chunk, summary, query }) => self.work(chunk, summary, query),
            Some(Parsed::Manager { summary, query }) => self.answer(summary, query),
            None => UNKNOWN_ANSWER.to_owned(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::prompts::{render_manager_prompt, render_worker_prompt};

    fn gen(m: &MockBackend, p: &str) -> String {
        m.generate(p, &GenerationParams::default()).unwrap()
    }

    #[test]
    fn facts_parse() {
        let f = parse_facts("filler words\n Harbor Keeper : Oswin \nbad:\n:bad\nx: a: b");
        assert_eq!(
            f,
            vec![
                Fact {
                    key: "harbor keeper".into(),
                    value: "Oswin".into()
                },
                Fact {
                    key: "x".into(),
                    value: "a: b".into()
                },
            ]
        );
    }

    #[test]
    fn worker_keeps_query_facts_and_links() {
        let m = MockBackend::new(2);
        let q = "Who keeps the harbor light?";
        let s1 = gen(&m, &render_worker_prompt("a: 1\nharbor keeper: oswin\nb: 2", "", q));
        assert_eq!(s1, "harbor keeper: oswin\nb: 2");
        let s2 = gen(&m, &render_worker_prompt("c: 3\noswin: crimson\nd: 4", &s1, q));
        assert_eq!(s2, "harbor keeper: oswin\noswin: crimson");
        let answer = gen(&m, &render_manager_prompt(&s2, q, None));
        assert_eq!(answer, "crimson");
    }

    #[test]
    fn link_before_anchor_is_lost() {
        let m = MockBackend::new(2);
        let q = "Who keeps the harbor light?";
        let s1 = gen(&m, &render_worker_prompt("oswin: crimson", "", q));
        let s2 = gen(&m, &render_worker_prompt("p: 1\nr: 2", &s1, q));
        assert_eq!(s2, "p: 1\nr: 2");
        let s3 = gen(&m, &render_worker_prompt("harbor keeper: oswin", &s2, q));
        assert_eq!(gen(&m, &render_manager_prompt(&s3, q, None)), "oswin");
    }

    #[test]
    fn manager_without_match_is_unknown() {
        let m = MockBackend::default();
        assert_eq!(
            gen(&m, &render_manager_prompt("", "anything here", None)),
            UNKNOWN_ANSWER
        );
        assert_eq!(gen(&m, &render_manager_prompt("a: b", "zzz", None)), UNKNOWN_ANSWER);
        assert_eq!(gen(&m, "free text"), UNKNOWN_ANSWER);
    }

    #[test]
    fn link_cycles_terminate() {
        let m = MockBackend::default();
        let p = render_manager_prompt("lamp colour: x\nx: y\ny: x", "lamp colour?", None);
        assert_eq!(gen(&m, &p), "x");
    }

    #[test]
    fn query_stopwords_ignored() {
        let q = query_terms("What is the Harbor of an ox?");
        assert_eq!(q, HashSet::from(["harbor".to_owned()]));
    }

    #[test]
    fn deterministic() {
        let m = MockBackend::new(3);
        let p = render_worker_prompt("k1: v1\nk2: v2\nk3: v3\nk4: v4", "k0: v0", "k2 please");
        assert_eq!(gen(&m, &p), gen(&m, &p));
    }
}
