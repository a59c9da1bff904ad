//! Prompt templates loaded from external files.
//!
//! Templates live on disk (one file per id, `<id>.txt`) so the exact prompt
//! text can be diffed and versioned independently of the code. Slots use
//! `{{name}}` markers; substitution is verbatim and single-pass, so slot
//! values are never re-expanded. A slot required by the template but absent
//! from the call is an error, never silently blank.

use super::{GatewayError, GenerationRequest, PromptTag, Temperatures};
use std::collections::BTreeMap;
use std::path::Path;

/// Template ids shipped with the pipeline, with their routing tags.
pub const TEMPLATE_TAGS: &[(&str, PromptTag)] = &[
    ("act", PromptTag::Act),
    ("extract_success", PromptTag::Extract),
    ("extract_failure", PromptTag::Extract),
    ("judge", PromptTag::Judge),
    ("contrast", PromptTag::Contrast),
    ("refine", PromptTag::Refine),
    ("select", PromptTag::Select),
];

/// In-memory template set keyed by id.
#[derive(Debug, Clone)]
pub struct TemplateStore {
    templates: BTreeMap<String, String>,
}

impl TemplateStore {
    /// Load every known template id from `dir`. Each id must exist as
    /// `<id>.txt`.
    pub fn load(dir: &Path) -> Result<Self, GatewayError> {
        let mut templates = BTreeMap::new();
        for (id, _) in TEMPLATE_TAGS {
            let path = dir.join(format!("{id}.txt"));
            let text = std::fs::read_to_string(&path).map_err(|e| {
                GatewayError::TemplateIo(std::io::Error::new(
                    e.kind(),
                    format!("{}: {e}", path.display()),
                ))
            })?;
            templates.insert((*id).to_string(), text);
        }
        Ok(TemplateStore { templates })
    }

    /// Construct from in-memory pairs; tests use this to avoid disk setup.
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        TemplateStore {
            templates: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn raw(&self, id: &str) -> Result<&str, GatewayError> {
        self.templates
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))
    }

    /// Substitute `slots` into the template. Every `{{name}}` marker must be
    /// covered.
    pub fn fill(&self, id: &str, slots: &[(&str, &str)]) -> Result<String, GatewayError> {
        let template = self.raw(id)?;
        let map: BTreeMap<&str, &str> = slots.iter().copied().collect();
        let mut out = String::with_capacity(template.len());
        let mut rest = template;
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let Some(close) = after.find("}}") else {
                // Unterminated marker: keep literally.
                out.push_str(&rest[open..]);
                rest = "";
                break;
            };
            let name = &after[..close];
            match map.get(name) {
                Some(value) => out.push_str(value),
                None => {
                    return Err(GatewayError::MissingSlot {
                        template: id.to_string(),
                        slot: name.to_string(),
                    })
                }
            }
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Tag a template id routes to.
pub fn tag_for_template(id: &str) -> Result<PromptTag, GatewayError> {
    TEMPLATE_TAGS
        .iter()
        .find(|(tid, _)| *tid == id)
        .map(|(_, tag)| *tag)
        .ok_or_else(|| GatewayError::UnknownTemplate(id.to_string()))
}

/// Fill a template and wrap it as a single-shot request with the tag and
/// temperature the id routes to.
pub fn build_prompt(
    store: &TemplateStore,
    id: &str,
    slots: &[(&str, &str)],
    temps: &Temperatures,
) -> Result<GenerationRequest, GatewayError> {
    let tag = tag_for_template(id)?;
    let system = store.fill(id, slots)?;
    Ok(GenerationRequest::single_shot(tag, system, temps))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> TemplateStore {
        TemplateStore::from_pairs([
            ("judge", "Query:\n{{query}}\n\nTrajectory:\n{{trajectory}}\n\nVerdict?"),
            ("act", "You are an agent."),
        ])
    }

    #[test]
    fn fill_substitutes_verbatim() {
        let s = store();
        let filled = s
            .fill("judge", &[("query", "find x"), ("trajectory", "Step 1: {{query}}")])
            .unwrap();
        // The slot value containing a marker is not re-expanded.
        assert_eq!(filled, "Query:\nfind x\n\nTrajectory:\nStep 1: {{query}}\n\nVerdict?");
    }

    #[test]
    fn missing_slot_names_the_slot() {
        let s = store();
        let err = s.fill("judge", &[("query", "find x")]).unwrap_err();
        match err {
            GatewayError::MissingSlot { template, slot } => {
                assert_eq!(template, "judge");
                assert_eq!(slot, "trajectory");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn unknown_template_errors() {
        let s = store();
        assert!(matches!(s.fill("nope", &[]), Err(GatewayError::UnknownTemplate(_))));
        assert!(matches!(tag_for_template("nope"), Err(GatewayError::UnknownTemplate(_))));
    }

    #[test]
    fn build_prompt_routes_tag_and_temperature() {
        let s = store();
        let temps = Temperatures::default();
        let req = build_prompt(&s, "judge", &[("query", "q"), ("trajectory", "t")], &temps).unwrap();
        assert_eq!(req.tag, PromptTag::Judge);
        assert_eq!(req.temperature, 0.0);
        assert!(req.system_instruction.starts_with("Query:\nq"));
    }

    #[test]
    fn filled_prompt_byte_contains_template_segments() {
        let s = store();
        let filled = s.fill("judge", &[("query", "Q"), ("trajectory", "T")]).unwrap();
        for segment in ["Query:\n", "\n\nTrajectory:\n", "\n\nVerdict?"] {
            assert!(filled.contains(segment), "missing segment {segment:?}");
        }
    }

    #[test]
    fn load_reads_all_ids_from_dir() {
        let dir = tempfile::tempdir().unwrap();
        for (id, _) in TEMPLATE_TAGS {
            std::fs::write(dir.path().join(format!("{id}.txt")), format!("template {id}")).unwrap();
        }
        let s = TemplateStore::load(dir.path()).unwrap();
        assert_eq!(s.raw("judge").unwrap(), "template judge");

        std::fs::remove_file(dir.path().join("judge.txt")).unwrap();
        assert!(TemplateStore::load(dir.path()).is_err());
    }
}
