//! Memory-aware test-time scaling.
//!
//! Parallel mode runs k independent rollouts of one task under the same
//! injected memory, judges each, selects the best via a single best-of-N
//! request, and (when aggregation is on) extracts memory once by
//! self-contrast over all rollouts. With aggregation off each rollout is
//! extracted independently. Sequential mode refines a single trajectory over
//! k-1 check rounds, capturing each round's note; notes join the final
//! trajectory as extraction input. Both modes at k=1 degenerate to the
//! unscaled pipeline, prompt for prompt.

use crate::agent::{run_episode, Environment, EpisodeConfig, Termination, Trajectory, TrajectoryStep};
use crate::gateway::{build_prompt, Backend, GatewayError, TemplateStore, Temperatures};
use crate::judgment::{
    extract_memories, extract_memories_with_notes, judge, render_trajectory, Verdict, VerdictLabel,
};
use crate::memory::MemoryItem;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalingMode {
    None,
    Parallel,
    Sequential,
}

/// Scaling knobs. `k` counts rollouts in parallel mode and refinement rounds
/// in sequential mode; `aggregate = false` reproduces vanilla test-time
/// scaling where each rollout feeds memory independently.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub mode: ScalingMode,
    pub k: usize,
    pub aggregate: bool,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig { mode: ScalingMode::None, k: 1, aggregate: true }
    }
}

impl ScalingConfig {
    /// `mode = none` forces `k = 1`; any other combination is a config error.
    pub fn validate(&self) -> Result<(), String> {
        if self.k == 0 {
            return Err("scaling k must be at least 1".into());
        }
        if self.mode == ScalingMode::None && self.k != 1 {
            return Err(format!("scaling mode 'none' forces k = 1, got k = {}", self.k));
        }
        Ok(())
    }
}

/// Shared handles for everything that talks to the model during one task.
pub struct RunContext<'a> {
    pub backend: &'a dyn Backend,
    pub templates: &'a TemplateStore,
    pub temperatures: &'a Temperatures,
    pub max_steps: usize,
}

impl<'a> RunContext<'a> {
    fn episode(&self) -> EpisodeConfig<'a> {
        EpisodeConfig {
            templates: self.templates,
            temperatures: self.temperatures,
            max_steps: self.max_steps,
        }
    }
}

/// One judged rollout.
#[derive(Debug, Clone)]
pub struct JudgedRollout {
    pub trajectory: Trajectory,
    pub final_state: String,
    pub verdict: Verdict,
}

fn answer_text(trajectory: &Trajectory) -> &str {
    trajectory.final_answer.as_deref().unwrap_or("(none)")
}

/// Run one episode and judge it. An episode that died on an environment or
/// backend fault is labeled `Failure` directly, without a judge call; judge
/// faults propagate.
pub fn run_and_judge(
    query: &str,
    memory_text: &str,
    env: &mut dyn Environment,
    ctx: &RunContext,
) -> Result<JudgedRollout, GatewayError> {
    let trajectory = run_episode(query, memory_text, env, ctx.backend, &ctx.episode());
    let final_state = env.final_state();
    let verdict = if trajectory.termination == Termination::Error {
        Verdict { label: VerdictLabel::Failure, raw: "(rollout fault)".into() }
    } else {
        judge(
            query,
            &trajectory,
            &final_state,
            answer_text(&trajectory),
            ctx.backend,
            ctx.templates,
            ctx.temperatures,
        )?
    };
    Ok(JudgedRollout { trajectory, final_state, verdict })
}

/// Outcome of parallel scaling over one task.
#[derive(Debug, Clone)]
pub struct ParallelOutcome {
    /// Rollouts by rollout index, independent of completion order.
    pub rollouts: Vec<Trajectory>,
    pub verdicts: Vec<Verdict>,
    /// Best-of-N selection over the rollouts.
    pub best_index: usize,
    pub extraction: ParallelExtraction,
}

/// What parallel extraction produced: one aggregated item list (self-contrast)
/// or one list per rollout (vanilla scaling). `Skipped` is the memory-off
/// baseline, where rollouts and selection still run but nothing feeds the
/// bank.
#[derive(Debug, Clone)]
pub enum ParallelExtraction {
    Aggregated(Vec<MemoryItem>),
    PerRollout(Vec<Vec<MemoryItem>>),
    Skipped,
}

/// Knobs for one parallel-scaled task.
#[derive(Debug, Clone, Copy)]
pub struct ParallelOptions {
    pub k: usize,
    /// Self-contrast over all rollouts (one record) vs per-rollout
    /// extraction (k records).
    pub aggregate: bool,
    /// When false, skip extraction entirely (memory-off baseline).
    pub extract: bool,
    /// Concurrency bound; 1 is strictly serial, which is also the
    /// deterministic choice for counter-based scripted backends.
    pub width: usize,
}

impl Default for ParallelOptions {
    fn default() -> Self {
        ParallelOptions { k: 1, aggregate: true, extract: true, width: 1 }
    }
}

/// Run k independent rollouts of one task. Every rollout sees the same
/// `memory_text`; environments come fresh from `env_factory` per rollout and
/// are never shared. A rollout whose environment or backend faults is marked
/// `Failure` without aborting the others.
pub fn parallel_scale<F>(
    query: &str,
    memory_text: &str,
    env_factory: F,
    ctx: &RunContext,
    opts: &ParallelOptions,
) -> Result<ParallelOutcome, GatewayError>
where
    F: Fn(usize) -> Box<dyn Environment + Send> + Sync,
{
    let ParallelOptions { k, aggregate, extract, width } = *opts;
    assert!(k >= 1, "parallel scaling requires k >= 1");
    let run_one = |index: usize| -> JudgedRollout {
        let mut env = env_factory(index);
        match run_and_judge(query, memory_text, env.as_mut(), ctx) {
            Ok(rollout) => rollout,
            Err(err) => {
                log::warn!("rollout {index} fault: {err}");
                JudgedRollout {
                    trajectory: Trajectory {
                        steps: Vec::new(),
                        final_answer: None,
                        termination: Termination::Error,
                    },
                    final_state: String::new(),
                    verdict: Verdict {
                        label: VerdictLabel::Failure,
                        raw: format!("(rollout fault: {err})"),
                    },
                }
            }
        }
    };

    let mut judged: Vec<JudgedRollout> = Vec::with_capacity(k);
    if width <= 1 {
        for index in 0..k {
            judged.push(run_one(index));
        }
    } else {
        // Waves of at most `width` scoped threads; results land by index.
        let mut slots: Vec<Option<JudgedRollout>> = (0..k).map(|_| None).collect();
        let run_one = &run_one;
        for wave in (0..k).collect::<Vec<_>>().chunks(width) {
            std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|&index| (index, scope.spawn(move || run_one(index))))
                    .collect();
                for (index, handle) in handles {
                    slots[index] = Some(handle.join().expect("rollout thread panicked"));
                }
            });
        }
        judged.extend(slots.into_iter().map(|s| s.expect("all rollouts filled")));
    }

    let rollouts: Vec<Trajectory> = judged.iter().map(|j| j.trajectory.clone()).collect();
    let verdicts: Vec<Verdict> = judged.iter().map(|j| j.verdict.clone()).collect();

    let best_index = select_best_of_n(query, &rollouts, ctx.backend, ctx.templates, ctx.temperatures)?;

    let extraction = if !extract {
        ParallelExtraction::Skipped
    } else if aggregate {
        let items = self_contrast_extract(
            query,
            &rollouts,
            &verdicts,
            ctx.backend,
            ctx.templates,
            ctx.temperatures,
        )?;
        ParallelExtraction::Aggregated(items)
    } else {
        let mut per_rollout = Vec::with_capacity(k);
        for (trajectory, verdict) in rollouts.iter().zip(&verdicts) {
            per_rollout.push(extract_memories(
                query,
                trajectory,
                verdict,
                ctx.backend,
                ctx.templates,
                ctx.temperatures,
            )?);
        }
        ParallelExtraction::PerRollout(per_rollout)
    };

    Ok(ParallelOutcome { rollouts, verdicts, best_index, extraction })
}

fn render_labeled_rollouts(rollouts: &[Trajectory], verdicts: Option<&[Verdict]>) -> String {
    let mut out = String::new();
    for (i, trajectory) in rollouts.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        match verdicts {
            Some(verdicts) => out.push_str(&format!(
                "Trajectory {} [{}]:\n",
                i + 1,
                verdicts[i].label.as_str()
            )),
            None => out.push_str(&format!("Trajectory {}:\n", i + 1)),
        }
        out.push_str(&render_trajectory(trajectory));
        out.push_str(&format!("\nFinal answer: {}", answer_text(trajectory)));
    }
    out
}

/// Extract memory by contrasting all rollouts of one query, labeled with
/// their verdicts. A single rollout falls back to ordinary extraction.
pub fn self_contrast_extract(
    query: &str,
    rollouts: &[Trajectory],
    verdicts: &[Verdict],
    backend: &dyn Backend,
    templates: &TemplateStore,
    temps: &Temperatures,
) -> Result<Vec<MemoryItem>, GatewayError> {
    assert_eq!(rollouts.len(), verdicts.len(), "one verdict per rollout");
    if rollouts.len() < 2 {
        return extract_memories(query, &rollouts[0], &verdicts[0], backend, templates, temps);
    }
    let rendered = render_labeled_rollouts(rollouts, Some(verdicts));
    let slots = [("query", query), ("trajectories", rendered.as_str())];
    let request = build_prompt(templates, "contrast", &slots, temps)?;
    let raw = backend.complete(&request)?;
    let mut items = crate::judgment::parse_memory_markdown(&raw);
    if items.is_empty() {
        log::warn!("self-contrast extraction produced no parseable items for query {query:?}");
    }
    items.truncate(crate::memory::MAX_ITEMS_PER_RECORD);
    Ok(items)
}

/// Parse the selector's chosen index from its output: the first integer,
/// which must fall in `1..=n`.
fn parse_select_index(output: &str, n: usize) -> Option<usize> {
    let digits: String =
        output.chars().skip_while(|c| !c.is_ascii_digit()).take_while(|c| c.is_ascii_digit()).collect();
    let value: usize = digits.parse().ok()?;
    if (1..=n).contains(&value) {
        Some(value - 1)
    } else {
        None
    }
}

/// Best-of-N selection: one select-tagged request presenting all rollouts
/// (raw trajectories only, no verdicts), asking for the best answer's number.
/// The prompt numbers rollouts from 1; the return value is 0-based. A single
/// rollout returns 0 without a model call; an unparseable selection logs and
/// falls back to 0.
pub fn select_best_of_n(
    query: &str,
    rollouts: &[Trajectory],
    backend: &dyn Backend,
    templates: &TemplateStore,
    temps: &Temperatures,
) -> Result<usize, GatewayError> {
    assert!(!rollouts.is_empty(), "selection requires at least one rollout");
    if rollouts.len() == 1 {
        return Ok(0);
    }
    let rendered = render_labeled_rollouts(rollouts, None);
    let n = rollouts.len().to_string();
    let slots = [("query", query), ("trajectories", rendered.as_str()), ("n", n.as_str())];
    let request = build_prompt(templates, "select", &slots, temps)?;
    let raw = backend.complete(&request)?;
    match parse_select_index(&raw, rollouts.len()) {
        Some(index) => Ok(index),
        None => {
            log::warn!("unparseable best-of-N selection {raw:?}, defaulting to rollout 0");
            Ok(0)
        }
    }
}

/// Outcome of sequential scaling over one task.
#[derive(Debug, Clone)]
pub struct SequentialOutcome {
    pub trajectory: Trajectory,
    /// One note per completed refinement round, k-1 on the fault-free path.
    pub notes: Vec<String>,
    pub verdict: Verdict,
    pub items: Vec<MemoryItem>,
}

const REVISED_ANSWER_MARKER: &str = "REVISED ANSWER:";
const ACTION_MARKER: &str = "ACTION:";

/// Run one episode, then k-1 refinement rounds over the same environment.
///
/// Each round presents the current trajectory with the check instruction and
/// captures the model's note. A note may amend the final answer with a
/// `REVISED ANSWER:` line, and — while the environment is not terminal and
/// step budget remains from the original limit — take corrective steps via
/// `ACTION:` lines. Environment or backend faults end refinement early; notes
/// gathered so far are kept. With `extract = false` (memory-off baseline) the
/// item list stays empty.
pub fn sequential_scale(
    query: &str,
    memory_text: &str,
    env: &mut dyn Environment,
    ctx: &RunContext,
    k: usize,
    extract: bool,
) -> Result<SequentialOutcome, GatewayError> {
    assert!(k >= 1, "sequential scaling requires k >= 1");
    let mut trajectory = run_episode(query, memory_text, env, ctx.backend, &ctx.episode());
    let mut notes: Vec<String> = Vec::new();

    if trajectory.termination != Termination::Error {
        'rounds: for round in 1..k {
            let mut rendered = render_trajectory(&trajectory);
            rendered.push_str(&format!("\nFinal answer: {}", answer_text(&trajectory)));
            let answer = answer_text(&trajectory).to_string();
            let slots =
                [("query", query), ("trajectory", rendered.as_str()), ("answer", answer.as_str())];
            let request = build_prompt(ctx.templates, "refine", &slots, ctx.temperatures)?;
            let note = match ctx.backend.complete(&request) {
                Ok(note) => note,
                Err(err) => {
                    log::warn!("refinement round {round} backend fault: {err}");
                    break 'rounds;
                }
            };
            notes.push(note.clone());

            // Corrective steps, only while the environment is still open and
            // the original step budget has room.
            if trajectory.termination != Termination::EnvTerminal {
                let mut observation = format!("(refinement round {round})");
                for line in note.lines() {
                    let Some(action) = line.trim_start().strip_prefix(ACTION_MARKER) else {
                        continue;
                    };
                    let action = action.trim();
                    if action.is_empty() || trajectory.steps.len() >= ctx.max_steps {
                        break;
                    }
                    trajectory.steps.push(TrajectoryStep {
                        observation: observation.clone(),
                        thought: format!("(refinement round {round})"),
                        action: action.to_string(),
                    });
                    match env.step(action) {
                        Ok(outcome) => {
                            if let Some(answer) = outcome.answer {
                                trajectory.final_answer = Some(answer);
                            }
                            observation = outcome.observation;
                            if outcome.terminal {
                                trajectory.termination = Termination::EnvTerminal;
                                break;
                            }
                        }
                        Err(err) => {
                            log::warn!("refinement round {round} environment fault: {err}");
                            break 'rounds;
                        }
                    }
                }
            }

            // A textual revision overrides whatever the corrective steps left.
            if let Some(line) = note.lines().find(|l| l.contains(REVISED_ANSWER_MARKER)) {
                let revised = line
                    .split_once(REVISED_ANSWER_MARKER)
                    .map(|(_, rest)| rest.trim())
                    .unwrap_or("");
                if !revised.is_empty() {
                    trajectory.final_answer = Some(revised.to_string());
                }
            }
        }
    }

    let final_state = env.final_state();
    let verdict = if trajectory.termination == Termination::Error {
        Verdict { label: VerdictLabel::Failure, raw: "(rollout fault)".into() }
    } else {
        judge(
            query,
            &trajectory,
            &final_state,
            answer_text(&trajectory),
            ctx.backend,
            ctx.templates,
            ctx.temperatures,
        )?
    };
    let items = if extract {
        extract_memories_with_notes(
            query,
            &trajectory,
            &notes,
            &verdict,
            ctx.backend,
            ctx.templates,
            ctx.temperatures,
        )?
    } else {
        Vec::new()
    };

    Ok(SequentialOutcome { trajectory, notes, verdict, items })
}
