//! ReAct-style episode runner over an abstract environment.
//!
//! The runner alternates act-tagged model requests with environment steps
//! until the model emits `stop`, the environment reports terminal, or the
//! step limit is hit. Model and environment faults never panic the episode:
//! the partial trajectory is preserved with `Termination::Error`.

mod world;

pub use world::{
    evaluate_goal, GoalPredicate, PageDef, ScriptedEnv, TaskDef, WorldDef, WorldError, WorldSuite,
};

use crate::gateway::{Backend, GenerationRequest, Message, PromptTag, TemplateStore, Temperatures};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The model issued the `stop` action.
    Stopped,
    /// The configured step limit was reached.
    StepLimit,
    /// The environment reported a terminal state.
    EnvTerminal,
    /// Environment or backend fault; the trajectory up to the fault is kept.
    Error,
}

/// One recorded step: the observation the agent saw, what it thought, and the
/// action it chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub observation: String,
    pub thought: String,
    pub action: String,
}

/// Ordered record of one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub final_answer: Option<String>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step after terminal state")]
    AfterTerminal,
    #[error("environment fault: {0}")]
    Fault(String),
}

/// Result of one environment step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: String,
    pub terminal: bool,
    /// Set when this step submitted an answer.
    pub answer: Option<String>,
}

/// Abstract task environment. One instance serves one rollout; instances are
/// never shared across concurrent rollouts.
pub trait Environment {
    /// (Re)initialize for the bound task and return the initial observation.
    fn reset(&mut self) -> Result<String, EnvError>;
    fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError>;
    /// Human-readable snapshot of the current state, for judging.
    fn final_state(&self) -> String;
}

/// Action emitted when model output carries no parseable action marker.
pub const NOOP_ACTION: &str = "noop";

/// Model output split into free-form thought and the action to execute.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAction {
    pub thought: String,
    pub action: String,
}

/// Split a fenced action from free-form thought.
///
/// The first `ACTION:` marker wins; the action runs to the end of that line,
/// cut before any second marker on the same line. Output without a usable
/// marker downgrades to a recorded no-op with the raw text kept as thought.
pub fn parse_action(model_output: &str) -> ParsedAction {
    const MARKER: &str = "ACTION:";
    let Some(pos) = model_output.find(MARKER) else {
        return ParsedAction { thought: model_output.to_string(), action: NOOP_ACTION.into() };
    };
    let after = &model_output[pos + MARKER.len()..];
    let line = after.split('\n').next().unwrap_or("");
    let line = match line.find(MARKER) {
        Some(second) => &line[..second],
        None => line,
    };
    let action = line.trim();
    if action.is_empty() {
        return ParsedAction { thought: model_output.to_string(), action: NOOP_ACTION.into() };
    }
    ParsedAction {
        thought: model_output[..pos].trim().to_string(),
        action: action.to_string(),
    }
}

/// Episode-level knobs shared by every rollout of a run.
pub struct EpisodeConfig<'a> {
    pub templates: &'a TemplateStore,
    pub temperatures: &'a Temperatures,
    pub max_steps: usize,
}

/// Default per-episode step limit.
pub const DEFAULT_MAX_STEPS: usize = 30;

fn act_system(templates: &TemplateStore, memory_text: &str) -> Result<String, crate::gateway::GatewayError> {
    // The act template takes no slots; filling with none also rejects a
    // template that unexpectedly declares some.
    let mut system = templates.fill("act", &[])?;
    if !memory_text.is_empty() {
        system.push_str("\n\n");
        system.push_str(memory_text);
    }
    Ok(system)
}

/// Run one episode. Memory text (possibly empty) is concatenated into the
/// system instruction exactly once; an empty memory text yields prompts
/// byte-identical to a run never offered memory.
pub fn run_episode(
    query: &str,
    memory_text: &str,
    env: &mut dyn Environment,
    backend: &dyn Backend,
    cfg: &EpisodeConfig,
) -> Trajectory {
    let mut trajectory =
        Trajectory { steps: Vec::new(), final_answer: None, termination: Termination::StepLimit };

    let system = match act_system(cfg.templates, memory_text) {
        Ok(s) => s,
        Err(err) => {
            log::error!("act template error: {err}");
            trajectory.termination = Termination::Error;
            return trajectory;
        }
    };

    let mut observation = match env.reset() {
        Ok(obs) => obs,
        Err(err) => {
            log::error!("environment reset fault: {err}");
            trajectory.termination = Termination::Error;
            return trajectory;
        }
    };

    let mut messages =
        vec![Message::user(format!("Task: {query}\n\nObservation:\n{observation}"))];

    while trajectory.steps.len() < cfg.max_steps {
        let request = GenerationRequest {
            system_instruction: system.clone(),
            messages: messages.clone(),
            temperature: cfg.temperatures.for_tag(PromptTag::Act),
            max_output: crate::gateway::DEFAULT_MAX_OUTPUT,
            tag: PromptTag::Act,
        };
        let output = match backend.complete(&request) {
            Ok(text) => text,
            Err(err) => {
                log::warn!("backend fault mid-episode: {err}");
                trajectory.termination = Termination::Error;
                return trajectory;
            }
        };
        let parsed = parse_action(&output);
        trajectory.steps.push(TrajectoryStep {
            observation: observation.clone(),
            thought: parsed.thought.clone(),
            action: parsed.action.clone(),
        });
        messages.push(Message::assistant(output));

        if parsed.action == "stop" {
            trajectory.termination = Termination::Stopped;
            return trajectory;
        }

        let outcome = match env.step(&parsed.action) {
            Ok(outcome) => outcome,
            Err(err) => {
                log::warn!("environment fault mid-episode: {err}");
                trajectory.termination = Termination::Error;
                return trajectory;
            }
        };
        if let Some(answer) = outcome.answer {
            trajectory.final_answer = Some(answer);
        }
        if outcome.terminal {
            trajectory.termination = Termination::EnvTerminal;
            return trajectory;
        }
        observation = outcome.observation;
        messages.push(Message::user(format!("Observation:\n{observation}")));
    }

    trajectory.termination = Termination::StepLimit;
    trajectory
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptedBackend, ScriptedResponse, ScriptedRule};

    fn templates() -> TemplateStore {
        TemplateStore::from_pairs([("act", "You are an agent. Emit ACTION: lines.")])
    }

    #[test]
    fn parse_action_basic() {
        let parsed = parse_action("I should click. ACTION: click(3)");
        assert_eq!(parsed.thought, "I should click.");
        assert_eq!(parsed.action, "click(3)");
    }

    #[test]
    fn parse_action_no_marker_is_noop_with_raw_text() {
        let parsed = parse_action("just rambling, no marker here");
        assert_eq!(parsed.action, NOOP_ACTION);
        assert_eq!(parsed.thought, "just rambling, no marker here");
    }

    #[test]
    fn parse_action_first_marker_wins() {
        let parsed = parse_action("x ACTION: goto(a)\nACTION: goto(b)");
        assert_eq!(parsed.action, "goto(a)");

        let parsed = parse_action("x ACTION: goto(a) ACTION: goto(b)");
        assert_eq!(parsed.action, "goto(a)");
    }

    #[test]
    fn parse_action_empty_action_downgrades_to_noop() {
        let parsed = parse_action("thinking hard ACTION:   ");
        assert_eq!(parsed.action, NOOP_ACTION);
        assert_eq!(parsed.thought, "thinking hard ACTION:   ");
    }

    #[test]
    fn parse_action_multiline_keeps_action_line_only() {
        let parsed = parse_action("plan\nmore plan\nACTION: search(shoes)\ntrailing");
        assert_eq!(parsed.thought, "plan\nmore plan");
        assert_eq!(parsed.action, "search(shoes)");
    }

    struct EchoEnv {
        steps: usize,
    }

    impl Environment for EchoEnv {
        fn reset(&mut self) -> Result<String, EnvError> {
            self.steps = 0;
            Ok("start".into())
        }
        fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
            self.steps += 1;
            if let Some(answer) = action.strip_prefix("answer(").and_then(|s| s.strip_suffix(')')) {
                return Ok(StepOutcome {
                    observation: "Answer submitted.".into(),
                    terminal: true,
                    answer: Some(answer.to_string()),
                });
            }
            Ok(StepOutcome { observation: format!("after {action}"), terminal: false, answer: None })
        }
        fn final_state(&self) -> String {
            format!("{} steps taken", self.steps)
        }
    }

    #[test]
    fn episode_ends_on_answer_terminal() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(
            |req| req.tag == PromptTag::Act,
            ScriptedResponse::Sequence(vec![
                "go ACTION: goto(shop)".into(),
                "done ACTION: answer(42)".into(),
            ]),
        )]);
        let t = templates();
        let temps = Temperatures::default();
        let cfg = EpisodeConfig { templates: &t, temperatures: &temps, max_steps: 30 };
        let mut env = EchoEnv { steps: 0 };
        let traj = run_episode("find it", "", &mut env, &backend, &cfg);
        assert_eq!(traj.termination, Termination::EnvTerminal);
        assert_eq!(traj.step_count(), 2);
        assert_eq!(traj.final_answer.as_deref(), Some("42"));
        assert_eq!(traj.steps[0].observation, "start");
        assert_eq!(traj.steps[1].observation, "after goto(shop)");
    }

    #[test]
    fn episode_hits_step_limit() {
        let backend =
            ScriptedBackend::new(vec![ScriptedRule::on_tag(PromptTag::Act, "ACTION: click(1)")]);
        let t = templates();
        let temps = Temperatures::default();
        let cfg = EpisodeConfig { templates: &t, temperatures: &temps, max_steps: 30 };
        let mut env = EchoEnv { steps: 0 };
        let traj = run_episode("loop forever", "", &mut env, &backend, &cfg);
        assert_eq!(traj.termination, Termination::StepLimit);
        assert_eq!(traj.step_count(), 30);
    }

    #[test]
    fn stop_action_ends_episode_without_env_step() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::on_tag(
            PromptTag::Act,
            "nothing to do ACTION: stop",
        )]);
        let t = templates();
        let temps = Temperatures::default();
        let cfg = EpisodeConfig { templates: &t, temperatures: &temps, max_steps: 30 };
        let mut env = EchoEnv { steps: 0 };
        let traj = run_episode("q", "", &mut env, &backend, &cfg);
        assert_eq!(traj.termination, Termination::Stopped);
        assert_eq!(traj.step_count(), 1);
        assert_eq!(env.steps, 0);
        assert_eq!(traj.final_answer, None);
    }

    #[test]
    fn backend_fault_preserves_partial_trajectory() {
        let backend = ScriptedBackend::new(vec![ScriptedRule::new(
            {
                let mut hits = 0;
                let lock = std::sync::Mutex::new(move || {
                    hits += 1;
                    hits <= 2
                });
                move |req: &GenerationRequest| req.tag == PromptTag::Act && (lock.lock().unwrap())()
            },
            ScriptedResponse::Fixed("ok ACTION: click(1)".into()),
        )]);
        let t = templates();
        let temps = Temperatures::default();
        let cfg = EpisodeConfig { templates: &t, temperatures: &temps, max_steps: 30 };
        let mut env = EchoEnv { steps: 0 };
        let traj = run_episode("q", "", &mut env, &backend, &cfg);
        assert_eq!(traj.termination, Termination::Error);
        assert_eq!(traj.step_count(), 2);
    }

    #[test]
    fn memory_text_appears_verbatim_exactly_once_in_first_act_request() {
        let backend = crate::gateway::RecordingBackend::new(ScriptedBackend::new(vec![
            ScriptedRule::on_tag(PromptTag::Act, "ACTION: stop"),
        ]));
        let t = templates();
        let temps = Temperatures::default();
        let cfg = EpisodeConfig { templates: &t, temperatures: &temps, max_steps: 5 };
        let memory = "## Distinctive strategy\nuse the rare path marker xq9";
        let mut env = EchoEnv { steps: 0 };
        run_episode("q", memory, &mut env, &backend, &cfg);
        let reqs = backend.requests();
        assert!(!reqs.is_empty());
        let sys = &reqs[0].system_instruction;
        assert_eq!(sys.matches(memory).count(), 1);
    }

    #[test]
    fn empty_memory_prompts_match_no_memory_prompts() {
        let mk = || {
            crate::gateway::RecordingBackend::new(ScriptedBackend::new(vec![
                ScriptedRule::on_tag(PromptTag::Act, "ACTION: stop"),
            ]))
        };
        let t = templates();
        let temps = Temperatures::default();
        let cfg = EpisodeConfig { templates: &t, temperatures: &temps, max_steps: 5 };

        let with_empty = mk();
        let mut env = EchoEnv { steps: 0 };
        run_episode("q", "", &mut env, &with_empty, &cfg);

        let never_offered = mk();
        let mut env = EchoEnv { steps: 0 };
        run_episode("q", "", &mut env, &never_offered, &cfg);

        let a: Vec<String> = with_empty.requests().iter().map(|r| r.full_text()).collect();
        let b: Vec<String> = never_offered.requests().iter().map(|r| r.full_text()).collect();
        assert_eq!(a, b);
    }
}
