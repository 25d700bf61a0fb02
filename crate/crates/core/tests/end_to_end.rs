mod common;

use clorder::eval::{aggregate, strict_wins};
use clorder::ordering::Strategy;
use clorder::pipeline::{MockBackend, Timing};
use clorder::similarity::{Bm25Params, Symmetrization};
use clorder::workflow::{run_queries, QueryOutcome, RunSettings, SimilaritySource};

use common::*;

fn em_by_query(outcomes: &[QueryOutcome], strategy: Strategy, records: &[clorder::corpus::QueryRecord]) -> Vec<u8> {
    outcomes
        .iter()
        .filter(|o| o.strategy == strategy)
        .map(|o| {
            let rec = records.iter().find(|r| r.query_id == o.query_id).unwrap();
            o.eval(rec).unwrap().em.unwrap()
        })
        .collect()
}

#[test]
fn document_order_fails_exactly_where_the_link_comes_first() {
    let records = load("mc10.jsonl");
    let out = mock_run(&records, &[Strategy::Default, Strategy::ClOrder], MC_MOCK_CAPACITY);
    assert_eq!(em_by_query(&out, Strategy::Default, &records), [1, 1, 1, 1, 1, 0, 0, 0, 0, 0]);
    assert_eq!(em_by_query(&out, Strategy::ClOrder, &records), [1; 10]);
}

#[test]
fn roomy_memory_makes_order_irrelevant() {
    let records = load("mc10.jsonl");
    let out = mock_run(&records, &Strategy::ALL, 64);
    for s in Strategy::ALL {
        assert_eq!(em_by_query(&out, s, &records), [1; 10], "{s}");
    }
}

#[test]
fn lexical_similarity_also_roots_at_the_anchor() {
    let records = load("mc10.jsonl");
    let chain = mock_chain();
    let settings = RunSettings {
        strategies: &[Strategy::Default, Strategy::ClOrder],
        chain: &chain,
        seed: 0,
        parallel: 2,
    };
    let source = SimilaritySource::Bm25 {
        params: Bm25Params::default(),
        mode: Symmetrization::ScoreMean,
    };
    let out = run_queries(&records, &source, &MockBackend::new(MC_MOCK_CAPACITY), &settings).unwrap();
    let evals: Vec<_> = out
        .iter()
        .map(|o| o.eval(records.iter().find(|r| r.query_id == o.query_id).unwrap()).unwrap())
        .collect();
    let reports = aggregate(&evals);
    assert_eq!(reports[0].strategy, Strategy::Default);
    assert_eq!(reports[0].em_accuracy, Some(50.0));
    assert_eq!(reports[1].em_accuracy, Some(100.0));
    assert_eq!(strict_wins(&evals, Strategy::ClOrder, Strategy::Default).len(), 5);
}

#[test]
fn traces_end_with_the_answer_and_respect_the_budget() {
    let records = load("qa5.jsonl");
    let mut chain = mock_chain();
    chain.summary_token_limit = 5;
    chain.timing = Timing::Frozen;
    let embedder = local_embedder();
    let settings = RunSettings {
        strategies: &[Strategy::ClOrder],
        chain: &chain,
        seed: 0,
        parallel: 1,
    };
    let out = run_queries(&records, &SimilaritySource::Dense(&embedder), &MockBackend::new(8), &settings).unwrap();
    for o in &out {
        let r = o.result.as_ref().unwrap();
        assert_eq!(r.trace.len(), 7);
        assert!(r.trace.iter().all(|s| s.token_count <= 5));
        assert_eq!(r.trace[0].summary_text, "");
    }
    let bytes = String::from_utf8(trace_bytes(&out)).unwrap();
    let last = bytes.lines().last().unwrap();
    assert!(last.starts_with("{\"query_id\":\"qa04\",\"answer\":"), "{last}");
}
