//! Deterministic scripted worlds for desk-scale experiments.
//!
//! A world is a finite graph of pages connected by labeled affordances
//! (links, searches, filters). Tasks bind a start page to a goal predicate,
//! a gold answer for the test oracle, and the known shortest solution. Gold
//! data is used only by oracle checks and reporting, never shown to the agent
//! or the judge.
//!
//! Action grammar accepted by [`ScriptedEnv::step`]:
//! `goto(<page>)`, `click(<id>)`, `search(<term>)`, `filter(<key>,<value>)`,
//! `answer(<text>)`, `noop`. Submitting an answer is terminal. Anything else
//! produces an "Invalid action" observation and leaves the state unchanged.

use super::{EnvError, Environment, StepOutcome, Trajectory};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

fn default_true() -> bool {
    true
}

/// One page of a scripted world.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageDef {
    pub id: String,
    /// Body text shown in the observation; authored to describe affordances.
    pub text: String,
    /// Numbered links: click id -> destination page.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub links: BTreeMap<String, String>,
    /// Search terms resolvable from this page: term -> destination page.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub search: BTreeMap<String, String>,
    /// Filters applicable on this page: "key=value" -> destination page.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub filters: BTreeMap<String, String>,
    /// Whether `goto` can reach this page directly. Private pages are only
    /// reachable through links, searches, or filters.
    #[serde(default = "default_true")]
    pub public: bool,
}

/// Goal predicate evaluated by the test oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalPredicate {
    AnswerEquals(String),
    AnswerContains(String),
    ReachedPage(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskDef {
    pub task_id: String,
    pub query: String,
    pub start_page: String,
    pub goal: GoalPredicate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    /// Known-optimal action sequence; validated to reach the goal on load.
    pub shortest_solution: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldDef {
    pub world_id: String,
    pub pages: Vec<PageDef>,
    pub tasks: Vec<TaskDef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSuite {
    pub worlds: Vec<WorldDef>,
}

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("cannot read worlds file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse worlds file {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("world {world}: {detail}")]
    Invalid { world: String, detail: String },
    #[error("unknown world reference: {0}")]
    UnknownRef(String),
}

impl WorldDef {
    pub fn page(&self, id: &str) -> Option<&PageDef> {
        self.pages.iter().find(|p| p.id == id)
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskDef> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    fn invalid(&self, detail: impl Into<String>) -> WorldError {
        WorldError::Invalid { world: self.world_id.clone(), detail: detail.into() }
    }

    /// Structural checks plus goal reachability: every referenced page must
    /// exist and every task's stored shortest solution must satisfy its goal
    /// when replayed.
    pub fn validate(&self) -> Result<(), WorldError> {
        for page in &self.pages {
            for dest in page.links.values().chain(page.search.values()).chain(page.filters.values())
            {
                if self.page(dest).is_none() {
                    return Err(
                        self.invalid(format!("page {} references missing page {dest}", page.id))
                    );
                }
            }
        }
        for task in &self.tasks {
            if self.page(&task.start_page).is_none() {
                return Err(self.invalid(format!(
                    "task {} starts on missing page {}",
                    task.task_id, task.start_page
                )));
            }
            if task.shortest_solution.is_empty() {
                return Err(self.invalid(format!("task {} has no stored solution", task.task_id)));
            }
            let replay = replay_actions(self, task, task.shortest_solution.iter().map(String::as_str));
            if !task.goal.evaluate(replay.answer.as_deref(), &replay.visited) {
                return Err(self.invalid(format!(
                    "task {}: stored solution does not reach the goal",
                    task.task_id
                )));
            }
        }
        Ok(())
    }
}

impl WorldSuite {
    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorldError::Io { path: path.display().to_string(), source: e })?;
        let suite: WorldSuite = serde_json::from_str(&text)
            .map_err(|e| WorldError::Parse { path: path.display().to_string(), source: e })?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        for world in &self.worlds {
            world.validate()?;
        }
        Ok(())
    }

    pub fn world(&self, world_id: &str) -> Option<&WorldDef> {
        self.worlds.iter().find(|w| w.world_id == world_id)
    }

    /// Resolve a `<world_id>/<task_id>` reference from a task stream.
    pub fn resolve(&self, world_ref: &str) -> Result<(&WorldDef, &TaskDef), WorldError> {
        let (world_id, task_id) = world_ref
            .split_once('/')
            .ok_or_else(|| WorldError::UnknownRef(world_ref.to_string()))?;
        let world =
            self.world(world_id).ok_or_else(|| WorldError::UnknownRef(world_ref.to_string()))?;
        let task =
            world.task(task_id).ok_or_else(|| WorldError::UnknownRef(world_ref.to_string()))?;
        Ok((world, task))
    }
}

/// Parsed form of a grammar action.
enum Action<'a> {
    Goto(&'a str),
    Click(&'a str),
    Search(&'a str),
    Filter(&'a str, &'a str),
    Answer(&'a str),
    Noop,
    Invalid,
}

fn parse_world_action(raw: &str) -> Action<'_> {
    let raw = raw.trim();
    if raw == "noop" {
        return Action::Noop;
    }
    let Some((name, rest)) = raw.split_once('(') else {
        return Action::Invalid;
    };
    let Some(arg) = rest.strip_suffix(')') else {
        return Action::Invalid;
    };
    match name.trim() {
        "goto" => Action::Goto(arg.trim()),
        "click" => Action::Click(arg.trim()),
        "search" => Action::Search(arg.trim()),
        "answer" => Action::Answer(arg.trim()),
        "filter" => match arg.split_once(',') {
            Some((key, value)) => Action::Filter(key.trim(), value.trim()),
            None => Action::Invalid,
        },
        _ => Action::Invalid,
    }
}

/// Environment over one (world, task) pair.
pub struct ScriptedEnv {
    world: Arc<WorldDef>,
    task_id: String,
    current_page: String,
    submitted_answer: Option<String>,
    terminal: bool,
}

impl ScriptedEnv {
    pub fn new(world: Arc<WorldDef>, task_id: &str) -> Result<Self, WorldError> {
        let task = world
            .task(task_id)
            .ok_or_else(|| WorldError::UnknownRef(format!("{}/{task_id}", world.world_id)))?;
        let start = task.start_page.clone();
        Ok(ScriptedEnv {
            world,
            task_id: task_id.to_string(),
            current_page: start,
            submitted_answer: None,
            terminal: false,
        })
    }

    fn task(&self) -> &TaskDef {
        self.world.task(&self.task_id).expect("task checked at construction")
    }

    fn observe(&self) -> String {
        let page = self.world.page(&self.current_page).expect("current page exists");
        format!("[page: {}]\n{}", page.id, page.text)
    }

    fn apply(&mut self, action: &str) -> StepOutcome {
        let page_id = self.current_page.clone();
        let page = self.world.page(&page_id).expect("current page exists").clone();
        let mut answer = None;
        let observation = match parse_world_action(action) {
            Action::Noop => self.observe(),
            Action::Goto(dest) => match self.world.page(dest) {
                Some(p) if p.public => {
                    self.current_page = dest.to_string();
                    self.observe()
                }
                _ => format!("No page '{dest}'."),
            },
            Action::Click(id) => match page.links.get(id) {
                Some(dest) => {
                    self.current_page = dest.clone();
                    self.observe()
                }
                None => format!("No link {id} on this page."),
            },
            Action::Search(term) => match page.search.get(term) {
                Some(dest) => {
                    self.current_page = dest.clone();
                    self.observe()
                }
                None => format!("No results for '{term}'."),
            },
            Action::Filter(key, value) => match page.filters.get(&format!("{key}={value}")) {
                Some(dest) => {
                    self.current_page = dest.clone();
                    self.observe()
                }
                None => format!("No filter {key}={value} on this page."),
            },
            Action::Answer(text) => {
                self.submitted_answer = Some(text.to_string());
                self.terminal = true;
                answer = Some(text.to_string());
                "Answer submitted.".to_string()
            }
            Action::Invalid => format!("Invalid action: {action}"),
        };
        StepOutcome { observation, terminal: self.terminal, answer }
    }
}

impl Environment for ScriptedEnv {
    fn reset(&mut self) -> Result<String, EnvError> {
        self.current_page = self.task().start_page.clone();
        self.submitted_answer = None;
        self.terminal = false;
        Ok(self.observe())
    }

    fn step(&mut self, action: &str) -> Result<StepOutcome, EnvError> {
        if self.terminal {
            return Err(EnvError::AfterTerminal);
        }
        Ok(self.apply(action))
    }

    fn final_state(&self) -> String {
        let answer = self.submitted_answer.as_deref().unwrap_or("(none)");
        format!("page: {}; submitted answer: {answer}", self.current_page)
    }
}

impl GoalPredicate {
    pub fn evaluate(&self, answer: Option<&str>, visited: &[String]) -> bool {
        match self {
            GoalPredicate::AnswerEquals(gold) => answer.map(str::trim) == Some(gold.trim()),
            GoalPredicate::AnswerContains(part) => {
                answer.map(|a| a.contains(part.as_str())).unwrap_or(false)
            }
            GoalPredicate::ReachedPage(page) => visited.iter().any(|p| p == page),
        }
    }
}

struct Replay {
    visited: Vec<String>,
    answer: Option<String>,
}

fn replay_actions<'a>(
    world: &WorldDef,
    task: &TaskDef,
    actions: impl Iterator<Item = &'a str>,
) -> Replay {
    let mut env = ScriptedEnv::new(Arc::new(world.clone()), &task.task_id)
        .expect("task exists in its own world");
    let _ = env.reset();
    let mut visited = vec![env.current_page.clone()];
    for action in actions {
        if env.terminal {
            break;
        }
        let _ = env.apply(action);
        if visited.last() != Some(&env.current_page) {
            visited.push(env.current_page.clone());
        }
    }
    Replay { visited, answer: env.submitted_answer }
}

/// Oracle correctness of a finished trajectory, by deterministic replay.
///
/// Actions are re-simulated from the task's start page to recover the visited
/// pages; the answer checked is the trajectory's `final_answer`, which may
/// have been amended after the environment interaction ended.
pub fn evaluate_goal(world: &WorldDef, task: &TaskDef, trajectory: &Trajectory) -> bool {
    let replay = replay_actions(world, task, trajectory.steps.iter().map(|s| s.action.as_str()));
    task.goal.evaluate(trajectory.final_answer.as_deref(), &replay.visited)
}
