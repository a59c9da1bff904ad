//! Self-supervised verdicts and memory extraction.
//!
//! The judge labels a finished trajectory Success or Failure from the query,
//! the trajectory, the final environment state, and the answer — no ground
//! truth. The extractor then distills the trajectory into at most three
//! memory items, routed through outcome-specialized templates: successes are
//! analyzed for what worked, failures for lessons and guardrails.

use crate::agent::Trajectory;
use crate::gateway::{build_prompt, Backend, GatewayError, TemplateStore, Temperatures};
use crate::memory::MemoryItem;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictLabel {
    Success,
    Failure,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Success => "Success",
            VerdictLabel::Failure => "Failure",
        }
    }
}

/// Binary judgment over a trajectory plus the judge's raw output for audit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: VerdictLabel,
    pub raw: String,
}

/// Parse a verdict token from judge output. Only a standalone line reading
/// exactly `Success` or `Failure` counts (the last such line wins); anything
/// else is a parse failure, never a coerced verdict.
pub fn parse_verdict(output: &str) -> Option<VerdictLabel> {
    let mut found = None;
    for line in output.lines() {
        match line.trim() {
            "Success" => found = Some(VerdictLabel::Success),
            "Failure" => found = Some(VerdictLabel::Failure),
            _ => {}
        }
    }
    found
}

/// Render a trajectory for judge/extraction/selection prompts. Recorded
/// thoughts stand in for raw observations to keep prompts within budget.
pub fn render_trajectory(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    for (i, step) in trajectory.steps.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("Step {}:\nThought: {}\nAction: {}\n", i + 1, step.thought, step.action));
    }
    if trajectory.steps.is_empty() {
        out.push_str("(no steps)\n");
    }
    out.push_str(&format!("Termination: {}", termination_str(trajectory)));
    out
}

fn termination_str(trajectory: &Trajectory) -> &'static str {
    match trajectory.termination {
        crate::agent::Termination::Stopped => "stopped",
        crate::agent::Termination::StepLimit => "step_limit",
        crate::agent::Termination::EnvTerminal => "env_terminal",
        crate::agent::Termination::Error => "error",
    }
}

/// Judge a completed trajectory. On an unparseable verdict the request is
/// retried once; a second failure defaults to `Failure` (the conservative
/// label) and the event is logged.
pub fn judge(
    query: &str,
    trajectory: &Trajectory,
    final_state: &str,
    answer: &str,
    backend: &dyn Backend,
    templates: &TemplateStore,
    temps: &Temperatures,
) -> Result<Verdict, GatewayError> {
    let rendered = render_trajectory(trajectory);
    let slots = [
        ("query", query),
        ("trajectory", rendered.as_str()),
        ("final_state", final_state),
        ("answer", answer),
    ];
    let request = build_prompt(templates, "judge", &slots, temps)?;
    for attempt in 0..2 {
        let raw = backend.complete(&request)?;
        match parse_verdict(&raw) {
            Some(label) => return Ok(Verdict { label, raw }),
            None if attempt == 0 => {
                log::warn!("unparseable judge output, retrying once: {raw:?}");
            }
            None => {
                log::warn!("judge output unparseable after retry, defaulting to Failure: {raw:?}");
                return Ok(Verdict { label: VerdictLabel::Failure, raw });
            }
        }
    }
    unreachable!("loop returns on every path")
}

/// Extract memory items from a judged trajectory. The template is a pure
/// function of the verdict label; output is parsed as structured Markdown and
/// truncated to three items. An empty parse returns an empty list (logged) —
/// the caller then skips consolidation.
pub fn extract_memories(
    query: &str,
    trajectory: &Trajectory,
    verdict: &Verdict,
    backend: &dyn Backend,
    templates: &TemplateStore,
    temps: &Temperatures,
) -> Result<Vec<MemoryItem>, GatewayError> {
    extract_memories_with_notes(query, trajectory, &[], verdict, backend, templates, temps)
}

/// Extraction variant for sequential scaling: refinement notes are appended
/// to the rendered trajectory. With no notes the prompt is byte-identical to
/// plain extraction.
pub fn extract_memories_with_notes(
    query: &str,
    trajectory: &Trajectory,
    notes: &[String],
    verdict: &Verdict,
    backend: &dyn Backend,
    templates: &TemplateStore,
    temps: &Temperatures,
) -> Result<Vec<MemoryItem>, GatewayError> {
    let template_id = match verdict.label {
        VerdictLabel::Success => "extract_success",
        VerdictLabel::Failure => "extract_failure",
    };
    let mut rendered = render_trajectory(trajectory);
    if let Some(answer) = &trajectory.final_answer {
        rendered.push_str(&format!("\nFinal answer: {answer}"));
    }
    if !notes.is_empty() {
        rendered.push_str("\n\nRefinement notes:");
        for (i, note) in notes.iter().enumerate() {
            rendered.push_str(&format!("\nNote {}: {note}", i + 1));
        }
    }
    let slots = [("query", query), ("trajectory", rendered.as_str())];
    let request = build_prompt(templates, template_id, &slots, temps)?;
    let raw = backend.complete(&request)?;
    let mut items = parse_memory_markdown(&raw);
    if items.is_empty() {
        log::warn!("extraction produced no parseable items for query {query:?}");
    }
    items.truncate(crate::memory::MAX_ITEMS_PER_RECORD);
    Ok(items)
}

/// Parse memory items from structured Markdown. Total function: returns
/// whatever well-formed blocks it finds, zero or more, and never panics.
///
/// Block grammar (fixed here, tolerant of surrounding prose):
///
/// ```text
/// ## <title>
/// Description: <one sentence>
/// Content:
/// <body until the next heading or end of input>
/// ```
///
/// The `Description`/`Content` keys may be bolded (`**Description**:`) and are
/// matched case-insensitively. Blocks missing a field are dropped.
pub fn parse_memory_markdown(text: &str) -> Vec<MemoryItem> {
    let lines: Vec<&str> = text.lines().collect();
    let mut headings: Vec<(usize, &str)> = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if let Some(title) = line.strip_prefix("## ") {
            headings.push((i, title.trim()));
        }
    }
    let mut items = Vec::new();
    for (h, &(start, title)) in headings.iter().enumerate() {
        let end = headings.get(h + 1).map(|&(next, _)| next).unwrap_or(lines.len());
        let block = &lines[start + 1..end];

        let mut description = None;
        let mut content_start = None;
        for (i, line) in block.iter().enumerate() {
            if description.is_none() {
                if let Some(value) = strip_key(line, "description") {
                    description = Some(value.trim().to_string());
                    continue;
                }
            }
            if let Some(value) = strip_key(line, "content") {
                let mut body = String::new();
                if !value.trim().is_empty() {
                    body.push_str(value.trim());
                }
                content_start = Some((i + 1, body));
                break;
            }
        }
        let Some(description) = description else { continue };
        let Some((body_from, mut body)) = content_start else { continue };
        for line in &block[body_from..] {
            if !body.is_empty() {
                body.push('\n');
            }
            body.push_str(line);
        }
        let body = body.trim().to_string();
        if let Ok(item) = MemoryItem::new(title, description, body) {
            items.push(item);
        }
    }
    items
}

/// Match `Key:` / `**Key**:` prefixes case-insensitively; returns the value
/// after the colon.
fn strip_key<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let trimmed = line.trim_start();
    let stripped = trimmed.strip_prefix("**").unwrap_or(trimmed);
    if stripped.len() < key.len() || !stripped[..key.len()].eq_ignore_ascii_case(key) {
        return None;
    }
    let rest = stripped[key.len()..].trim_start_matches("**");
    rest.strip_prefix(':')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Termination, TrajectoryStep};
    use crate::gateway::{PromptTag, RecordingBackend, ScriptedBackend, ScriptedResponse, ScriptedRule};

    fn templates() -> TemplateStore {
        TemplateStore::from_pairs([
            (
                "judge",
                "Judge the outcome.\nQuery: {{query}}\nTrajectory:\n{{trajectory}}\nFinal state: {{final_state}}\nAnswer: {{answer}}\nOutput Success or Failure.",
            ),
            ("extract_success", "SUCCESS-ANALYSIS\nQuery: {{query}}\n{{trajectory}}"),
            ("extract_failure", "FAILURE-REFLECTION\nQuery: {{query}}\n{{trajectory}}"),
        ])
    }

    fn trajectory() -> Trajectory {
        Trajectory {
            steps: vec![
                TrajectoryStep {
                    observation: "[page: home]\nWelcome".into(),
                    thought: "go to products".into(),
                    action: "goto(products)".into(),
                },
                TrajectoryStep {
                    observation: "[page: products]\nList".into(),
                    thought: "answer now".into(),
                    action: "answer(42)".into(),
                },
            ],
            final_answer: Some("42".into()),
            termination: Termination::EnvTerminal,
        }
    }

    const THREE_BLOCKS: &str = "Some preamble prose.\n\n\
## Prefer filters over browsing\nDescription: Use category filters to narrow listings.\nContent:\nOpen the listing page and apply the most specific filter first.\n\n\
## Re-verify identifiers\nDescription: Double-check ids before acting.\nContent:\nRead the id twice.\n\n\
## Search before paging\nDescription: Search beats pagination.\nContent:\nUse the search box with a distinctive term.\n\nTrailing prose.";

    #[test]
    fn parse_three_canonical_blocks() {
        let items = parse_memory_markdown(THREE_BLOCKS);
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].title(), "Prefer filters over browsing");
        assert_eq!(items[0].description(), "Use category filters to narrow listings.");
        assert!(items[0].content().starts_with("Open the listing page"));
        assert_eq!(items[2].title(), "Search before paging");
        // Trailing prose stays inside the last block's content; headings bound blocks.
        assert!(items[2].content().contains("Trailing prose."));
    }

    #[test]
    fn parse_empty_and_prose_only() {
        assert!(parse_memory_markdown("").is_empty());
        assert!(parse_memory_markdown("no structure here at all").is_empty());
        assert!(parse_memory_markdown("## Title only, no fields\ntext").is_empty());
    }

    #[test]
    fn parse_tolerates_bold_keys_and_inline_content() {
        let doc = "## T\n**Description**: D.\n**Content**: inline body";
        let items = parse_memory_markdown(doc);
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].description(), "D.");
        assert_eq!(items[0].content(), "inline body");
    }

    #[test]
    fn verdict_parsing_is_exact_token_match() {
        assert_eq!(parse_verdict("Success"), Some(VerdictLabel::Success));
        assert_eq!(parse_verdict("  Failure  "), Some(VerdictLabel::Failure));
        assert_eq!(parse_verdict("Reasoning...\nSuccess"), Some(VerdictLabel::Success));
        assert_eq!(parse_verdict("I think it worked"), None);
        assert_eq!(parse_verdict("Successful"), None);
        assert_eq!(parse_verdict("The verdict is Success"), None);
        // Last standalone token wins.
        assert_eq!(parse_verdict("Success\nFailure"), Some(VerdictLabel::Failure));
    }

    #[test]
    fn judge_parses_scripted_verdict() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::on_tag(PromptTag::Judge, "Success")]);
        let t = templates();
        let temps = Temperatures::default();
        let verdict =
            judge("q", &trajectory(), "page: x", "42", &backend, &t, &temps).unwrap();
        assert_eq!(verdict.label, VerdictLabel::Success);
        assert_eq!(verdict.raw, "Success");
    }

    #[test]
    fn judge_retries_once_then_defaults_to_failure() {
        let backend = RecordingBackend::new(ScriptedBackend::new(vec![ScriptedRule::on_tag(
            PromptTag::Judge,
            "I think it worked",
        )]));
        let t = templates();
        let temps = Temperatures::default();
        let verdict = judge("q", &trajectory(), "s", "42", &backend, &t, &temps).unwrap();
        assert_eq!(verdict.label, VerdictLabel::Failure);
        assert_eq!(verdict.raw, "I think it worked");
        assert_eq!(backend.requests().len(), 2);
    }

    #[test]
    fn judge_recovers_on_retry() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(
            |req| req.tag == PromptTag::Judge,
            ScriptedResponse::Sequence(vec!["hmm".into(), "Success".into()]),
        )]);
        let t = templates();
        let temps = Temperatures::default();
        let verdict = judge("q", &trajectory(), "s", "42", &backend, &t, &temps).unwrap();
        assert_eq!(verdict.label, VerdictLabel::Success);
    }

    #[test]
    fn judge_requests_use_temperature_zero_and_thought_rendering() {
        let backend = RecordingBackend::new(ScriptedBackend::new(vec![ScriptedRule::on_tag(
            PromptTag::Judge,
            "Success",
        )]));
        let t = templates();
        let temps = Temperatures::default();
        judge("q", &trajectory(), "s", "42", &backend, &t, &temps).unwrap();
        let reqs = backend.requests();
        assert_eq!(reqs[0].temperature, 0.0);
        let text = reqs[0].full_text();
        assert!(text.contains("Thought: go to products"));
        // Raw observations are not shown to the judge.
        assert!(!text.contains("[page: home]"));
    }

    #[test]
    fn extraction_routes_on_verdict_label() {
        let backend = RecordingBackend::new(ScriptedBackend::new(vec![ScriptedRule::on_tag(
            PromptTag::Extract,
            "## A\nDescription: d.\nContent: c.",
        )]));
        let t = templates();
        let temps = Temperatures::default();
        let success = Verdict { label: VerdictLabel::Success, raw: "Success".into() };
        let failure = Verdict { label: VerdictLabel::Failure, raw: "Failure".into() };

        extract_memories("q", &trajectory(), &success, &backend, &t, &temps).unwrap();
        extract_memories("q", &trajectory(), &failure, &backend, &t, &temps).unwrap();

        let reqs = backend.requests();
        assert!(reqs[0].system_instruction.starts_with("SUCCESS-ANALYSIS"));
        assert!(!reqs[0].system_instruction.contains("FAILURE-REFLECTION"));
        assert!(reqs[1].system_instruction.starts_with("FAILURE-REFLECTION"));
        assert_eq!(reqs[0].temperature, 1.0);
    }

    #[test]
    fn extraction_truncates_overproduction_to_three() {
        let five: String = (1..=5)
            .map(|i| format!("## Item {i}\nDescription: d{i}.\nContent:\nbody {i}\n\n"))
            .collect();
        let backend = ScriptedBackend::new(vec![ScriptedRule::on_tag(PromptTag::Extract, five)]);
        let t = templates();
        let temps = Temperatures::default();
        let verdict = Verdict { label: VerdictLabel::Success, raw: "Success".into() };
        let items = extract_memories("q", &trajectory(), &verdict, &backend, &t, &temps).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[0].title(), "Item 1");
        assert_eq!(items[2].title(), "Item 3");
    }

    #[test]
    fn extraction_with_unstructured_output_returns_empty() {
        let backend =
            ScriptedBackend::new(vec![ScriptedRule::on_tag(PromptTag::Extract, "just prose")]);
        let t = templates();
        let temps = Temperatures::default();
        let verdict = Verdict { label: VerdictLabel::Success, raw: "Success".into() };
        let items = extract_memories("q", &trajectory(), &verdict, &backend, &t, &temps).unwrap();
        assert!(items.is_empty());
    }

    #[test]
    fn notes_append_to_extraction_prompt_only_when_present() {
        let backend = RecordingBackend::new(ScriptedBackend::new(vec![ScriptedRule::on_tag(
            PromptTag::Extract,
            "## A\nDescription: d.\nContent: c.",
        )]));
        let t = templates();
        let temps = Temperatures::default();
        let verdict = Verdict { label: VerdictLabel::Success, raw: "Success".into() };

        extract_memories_with_notes("q", &trajectory(), &[], &verdict, &backend, &t, &temps)
            .unwrap();
        let notes = vec!["re-checked the filter".to_string()];
        extract_memories_with_notes("q", &trajectory(), &notes, &verdict, &backend, &t, &temps)
            .unwrap();

        let reqs = backend.requests();
        assert!(!reqs[0].full_text().contains("Refinement notes:"));
        assert!(reqs[1].full_text().contains("Refinement notes:\nNote 1: re-checked the filter"));
        // No-notes prompt is byte-identical to plain extraction.
        let plain = {
            let b2 = RecordingBackend::new(ScriptedBackend::new(vec![ScriptedRule::on_tag(
                PromptTag::Extract,
                "## A\nDescription: d.\nContent: c.",
            )]));
            extract_memories("q", &trajectory(), &verdict, &b2, &t, &temps).unwrap();
            b2.requests()[0].full_text()
        };
        assert_eq!(reqs[0].full_text(), plain);
    }
}
