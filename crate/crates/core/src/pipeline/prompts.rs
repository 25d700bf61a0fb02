//! Worker and manager prompt templates.
//!
//! Rendering is a single left-to-right pass over the template, so
//! placeholder-like text inside substituted values is never expanded.

pub const WORKER_TEMPLATE: &str = "{chunk}\nHere is the summary of the previous source text: {summary_till}\nQuestion: {query}\nYou need to read current source text and summary of previous source text (if any) and generate a summary to include them both. Later, this summary will be used for other agents to answer the Query, if any. So please write the summary that can include the evidence for answering the Query.";

pub const MANAGER_TEMPLATE: &str = "{task_specific_inst}\nThe following are given passages. However, the source text is too long and has been summarized. You need to answer based on the summary:\n{summary}\n\nQuestion: {query}\nAnswer:";

pub const DEFAULT_TASK_INSTRUCTION: &str = "Answer the question based on the context provided. Provide a concise and direct answer to the question. Avoid unnecessary details, explanations, or context. Just the answer is enough.\n\nFor example, if the query were \"What is the capital of France?\", you should answer with \"Paris\" and not something like \"Paris is the capital of France\".";

/// Substitutes `{name}` slots in one pass. Unknown `{...}` text is copied.
pub fn render_template(template: &str, slots: &[(&str, &str)]) -> String {
    let extra: usize = slots.iter().map(|(_, v)| v.len()).sum();
    let mut out = String::with_capacity(template.len() + extra);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let hit = slots
            .iter()
            .find(|(name, _)| tail.strip_prefix(name).is_some_and(|after| after.starts_with('}')));
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

/// An empty memory renders as an empty summary slot.
pub fn render_worker_prompt(chunk: &str, memory: &str, query: &str) -> String {
    render_template(
        WORKER_TEMPLATE,
        &[("chunk", chunk), ("summary_till", memory), ("query", query)],
    )
}

pub fn render_manager_prompt(memory: &str, query: &str, task_instruction: Option<&str>) -> String {
    render_template(
        MANAGER_TEMPLATE,
        &[
            (
                "task_specific_inst",
                task_instruction.unwrap_or(DEFAULT_TASK_INSTRUCTION),
            ),
            ("summary", memory),
            ("query", query),
        ],
    )
}
