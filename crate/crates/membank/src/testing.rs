//! Deterministic desk-scale suites: scripted worlds, task streams, and the
//! content-keyed backend scripts that drive them.
//!
//! Every builder returns a fully declarative [`ScriptedSuite`] — the same
//! structures the CLI loads from files — so a suite can run in-process in
//! tests or be serialized and driven from the command line. All script rules
//! match on request content only (never on call counters), which keeps runs
//! reproducible across resumes and repeated executions.

use crate::agent::{GoalPredicate, PageDef, TaskDef, WorldDef, WorldSuite};
use crate::gateway::{
    PromptTag, ScriptFile, ScriptResponseDef, ScriptRuleDef, TemplateStore,
};
use crate::harness::{StreamEntry, TaskStream};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// A world suite, a task stream over it, and the backend script that solves
/// (or deliberately fails) it.
#[derive(Debug, Clone)]
pub struct ScriptedSuite {
    pub worlds: WorldSuite,
    pub stream: TaskStream,
    pub script: ScriptFile,
}

impl ScriptedSuite {
    pub fn backend(&self) -> crate::gateway::ScriptedBackend {
        self.script.clone().into_backend()
    }
}

/// Templates shipped at the workspace root, for tests and demos.
pub fn workspace_templates() -> TemplateStore {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../templates");
    TemplateStore::load(&dir).expect("workspace templates load")
}

fn rule(tag: PromptTag, contains: &[&str], response: &str) -> ScriptRuleDef {
    ScriptRuleDef {
        tag: Some(tag),
        contains: contains.iter().map(|s| s.to_string()).collect(),
        not_contains: Vec::new(),
        response: ScriptResponseDef::Fixed(response.to_string()),
    }
}

fn item_md(title: &str, description: &str, content: &str) -> String {
    format!("## {title}\nDescription: {description}\nContent:\n{content}")
}

fn links(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Hint token that only ever appears inside extracted memory items; the
/// transfer script keys its trick rule on it.
pub const STAFF_FILTER_MEMO: &str = "MEMO-STAFF-FILTER";

/// Hint token carried by efficiency-suite memory items.
pub const SEARCH_FIRST_MEMO: &str = "MEMO-SEARCH-FIRST";

/// Token carried by failure-derived items in the failure suite.
pub const FAILURE_LESSON_MEMO: &str = "MEMO-FAILURE-LESSON";

const TRANSFER_PRODUCTS: [&str; 10] = [
    "Zephyr Couch",
    "Quantum Kettle",
    "Maple Bureau",
    "Ivory Sextant",
    "Cobalt Jukebox",
    "Willow Hamper",
    "Onyx Gramophone",
    "Saffron Easel",
    "Pewter Dirigible",
    "Juniper Abacus",
];

fn storage_code(i: usize) -> String {
    format!("SC-{}", 7400 + 13 * i)
}

fn stock_count(i: usize) -> String {
    format!("{}", 140 + 9 * i)
}

/// Closed-loop transfer suite: 20 tasks over one shop world.
///
/// Tasks `learn-0..=learn-9` ask for a product's storage code; the inventory
/// sheet that holds the code also carries a staff note describing the
/// `filter(view,staff)` trick. Tasks `eval-0..=eval-9` ask for the special
/// stock count, which is only reachable through that trick — and the script's
/// act rules take the trick route only when a retrieved memory item (marked
/// [`STAFF_FILTER_MEMO`]) is present in the prompt. With memory off the eval
/// tasks burn their step budget and fail.
pub fn transfer_suite() -> ScriptedSuite {
    let mut pages = vec![PageDef {
        id: "home".into(),
        text: "Storefront directory. Product pages prod-0 through prod-9 are public; \
               use goto(<page>) to open one."
            .into(),
        links: BTreeMap::new(),
        search: BTreeMap::new(),
        filters: BTreeMap::new(),
        public: true,
    }];
    let mut tasks = Vec::new();
    let mut entries = Vec::new();
    let mut rules = Vec::new();

    for (i, name) in TRANSFER_PRODUCTS.iter().enumerate() {
        let code = storage_code(i);
        let count = stock_count(i);
        let prod = format!("prod-{i}");
        let inv = format!("prod-{i}-inv");
        let staff = format!("prod-{i}-staff");

        pages.push(PageDef {
            id: prod.clone(),
            text: format!("Product page: {name}.\n[7] inventory"),
            links: links(&[("7", &inv)]),
            search: BTreeMap::new(),
            filters: links(&[("view=staff", &staff)]),
            public: true,
        });
        pages.push(PageDef {
            id: inv.clone(),
            text: format!(
                "Inventory sheet: {name}.\nStorage code: {code}.\nStaff note: apply \
                 filter(view,staff) on the product page to reveal the staff view."
            ),
            links: BTreeMap::new(),
            search: BTreeMap::new(),
            filters: BTreeMap::new(),
            public: false,
        });
        pages.push(PageDef {
            id: staff.clone(),
            text: format!("Staff view: {name}.\nSpecial stock count: {count}."),
            links: BTreeMap::new(),
            search: BTreeMap::new(),
            filters: BTreeMap::new(),
            public: false,
        });

        let learn_id = format!("learn-{i}");
        let eval_id = format!("eval-{i}");
        tasks.push(TaskDef {
            task_id: learn_id.clone(),
            query: format!("What is the storage code for the {name}?"),
            start_page: "home".into(),
            goal: GoalPredicate::AnswerEquals(code.clone()),
            gold_answer: Some(code.clone()),
            shortest_solution: vec![
                format!("goto({prod})"),
                "click(7)".into(),
                format!("answer({code})"),
            ],
        });
        tasks.push(TaskDef {
            task_id: eval_id.clone(),
            query: format!("What is the special stock count for the {name}?"),
            start_page: "home".into(),
            goal: GoalPredicate::AnswerEquals(count.clone()),
            gold_answer: Some(count.clone()),
            shortest_solution: vec![
                format!("goto({prod})"),
                "filter(view,staff)".into(),
                format!("answer({count})"),
            ],
        });

        // Learn-route act rules, most specific page first.
        let prod_marker = format!("[page: {prod}]");
        let inv_marker = format!("[page: {inv}]");
        let staff_marker = format!("[page: {staff}]");
        rules.push(rule(
            PromptTag::Act,
            &[name, "storage code", &inv_marker],
            &format!(
                "The inventory sheet lists the storage code, and a staff note explains the \
                 staff view filter. ACTION: answer({code})"
            ),
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "storage code", &prod_marker],
            "The storage code should be on the inventory sheet. ACTION: click(7)",
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "storage code"],
            &format!("Opening the product page. ACTION: goto({prod})"),
        ));

        // Eval-route act rules: the trick fires only on the memory token.
        rules.push(rule(
            PromptTag::Act,
            &[name, "special stock count", &staff_marker],
            &format!("The staff view shows the special stock count. ACTION: answer({count})"),
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "special stock count", STAFF_FILTER_MEMO, &prod_marker],
            "A memory item says the staff view filter reveals staff data. \
             ACTION: filter(view,staff)",
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "special stock count", &prod_marker],
            "The product page does not show stock data; the inventory link covers storage \
             only. ACTION: click(44)",
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "special stock count"],
            &format!("Opening the product page. ACTION: goto({prod})"),
        ));

        // Judges keyed on the gold value reaching the answer slot.
        rules.push(rule(PromptTag::Judge, &[name, &code], "Success"));
        rules.push(rule(PromptTag::Judge, &[name, &count], "Success"));

        entries.push(StreamEntry {
            task_id: learn_id.clone(),
            query: format!("What is the storage code for the {name}?"),
            world_ref: format!("shop/{learn_id}"),
        });
    }
    for (i, name) in TRANSFER_PRODUCTS.iter().enumerate() {
        let eval_id = format!("eval-{i}");
        entries.push(StreamEntry {
            task_id: eval_id.clone(),
            query: format!("What is the special stock count for the {name}?"),
            world_ref: format!("shop/{eval_id}"),
        });
    }

    rules.push(rule(PromptTag::Judge, &[], "Failure"));
    rules.push(rule(
        PromptTag::Extract,
        &["staff note explains the staff view filter"],
        &item_md(
            "Staff view filter",
            "Product pages hide a staff view behind a filter.",
            &format!(
                "On a product page, apply filter(view,staff) to open the staff view with \
                 staff-only data. {STAFF_FILTER_MEMO}"
            ),
        ),
    ));
    rules.push(rule(
        PromptTag::Extract,
        &["staff view shows the special stock count"],
        &item_md(
            "Staff view route",
            "The staff view holds per-product staff-only data.",
            &format!(
                "Apply filter(view,staff) on the product page to open the staff view. \
                 {STAFF_FILTER_MEMO}"
            ),
        ),
    ));
    rules.push(rule(
        PromptTag::Extract,
        &[],
        &item_md(
            "Do not loop on one page",
            "Repeating a failing action wastes the step budget.",
            "If a page lacks the target data, change approach instead of retrying the same \
             action.",
        ),
    ));

    ScriptedSuite {
        worlds: WorldSuite {
            worlds: vec![WorldDef { world_id: "shop".into(), pages, tasks }],
        },
        stream: TaskStream { entries },
        script: ScriptFile { seed: 0, rules },
    }
}

const EFFICIENCY_PRODUCTS: [&str; 8] = [
    "Aurora Lamp",
    "Basalt Bookend",
    "Cedar Trellis",
    "Damson Carafe",
    "Ember Lantern",
    "Fjord Paddle",
    "Garnet Mirror",
    "Halcyon Clock",
];

fn price(i: usize) -> String {
    format!("{}", 113 + 17 * i)
}

/// Steps the catalog-paging route takes in the efficiency suite:
/// goto(catalog), click, click, click(item), answer.
pub const EFFICIENCY_LONG_ROUTE_STEPS: usize = 5;

/// Efficiency suite: 8 price-lookup tasks over one store world.
///
/// Every task is solvable two ways: paging through the catalog
/// ([`EFFICIENCY_LONG_ROUTE_STEPS`] steps) or searching the storefront
/// directly (the stored 2-step shortest solution). The script takes the
/// search route only when a memory item marked [`SEARCH_FIRST_MEMO`] is
/// injected, so a memory-enabled run completes every task after the first in
/// exactly the stored shortest-solution step count, while a memory-disabled
/// run always pages. Both runs succeed on every task.
pub fn efficiency_suite() -> ScriptedSuite {
    let mut home_search = BTreeMap::new();
    let mut cat3_links = BTreeMap::new();
    for (i, name) in EFFICIENCY_PRODUCTS.iter().enumerate() {
        home_search.insert(name.to_string(), format!("item-{i}"));
        cat3_links.insert(format!("1{i}"), format!("item-{i}"));
    }
    let mut pages = vec![
        PageDef {
            id: "home".into(),
            text: "Storefront. A search box is available. [1] catalog".into(),
            links: links(&[("1", "catalog")]),
            search: home_search,
            filters: BTreeMap::new(),
            public: true,
        },
        PageDef {
            id: "catalog".into(),
            text: "Catalog page 1 of 3. [1] next".into(),
            links: links(&[("1", "cat-2")]),
            search: BTreeMap::new(),
            filters: BTreeMap::new(),
            public: true,
        },
        PageDef {
            id: "cat-2".into(),
            text: "Catalog page 2 of 3. [1] next".into(),
            links: links(&[("1", "cat-3")]),
            search: BTreeMap::new(),
            filters: BTreeMap::new(),
            public: false,
        },
        PageDef {
            id: "cat-3".into(),
            text: "Catalog page 3 of 3. Items are linked as [10] through [17].".into(),
            links: cat3_links,
            search: BTreeMap::new(),
            filters: BTreeMap::new(),
            public: false,
        },
    ];
    let mut tasks = Vec::new();
    let mut entries = Vec::new();
    let mut rules = Vec::new();

    for (i, name) in EFFICIENCY_PRODUCTS.iter().enumerate() {
        let price = price(i);
        let item = format!("item-{i}");
        pages.push(PageDef {
            id: item.clone(),
            text: format!("Item: {name}. Price: {price}."),
            links: BTreeMap::new(),
            search: BTreeMap::new(),
            filters: BTreeMap::new(),
            public: false,
        });
        let task_id = format!("price-{i}");
        let query = format!("What is the price of the {name}?");
        tasks.push(TaskDef {
            task_id: task_id.clone(),
            query: query.clone(),
            start_page: "home".into(),
            goal: GoalPredicate::AnswerEquals(price.clone()),
            gold_answer: Some(price.clone()),
            shortest_solution: vec![format!("search({name})"), format!("answer({price})")],
        });
        entries.push(StreamEntry { task_id: task_id.clone(), query, world_ref: format!("store/{task_id}") });

        let item_marker = format!("[page: {item}]");
        rules.push(rule(
            PromptTag::Act,
            &[name, &item_marker],
            &format!("The listing shows the price. ACTION: answer({price})"),
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, SEARCH_FIRST_MEMO],
            &format!(
                "A memory item says to search the storefront directly. ACTION: search({name})"
            ),
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "[page: cat-3]"],
            &format!("The item link is on this catalog page. ACTION: click(1{i})"),
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "[page: cat-2]"],
            "Paging through the catalog one page at a time. ACTION: click(1)",
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "[page: catalog]"],
            "Paging through the catalog one page at a time. ACTION: click(1)",
        ));
        rules.push(rule(
            PromptTag::Act,
            &[name, "price of"],
            "No guidance available; I will browse the catalog pages. ACTION: goto(catalog)",
        ));
        rules.push(rule(PromptTag::Judge, &[name, &price], "Success"));
    }

    rules.push(rule(PromptTag::Judge, &[], "Failure"));
    rules.push(rule(
        PromptTag::Extract,
        &["Paging through the catalog"],
        &item_md(
            "Search the storefront first",
            "Direct search reaches items without catalog paging.",
            &format!(
                "From the storefront, search for the item name directly instead of paging \
                 through the catalog. {SEARCH_FIRST_MEMO}"
            ),
        ),
    ));
    rules.push(rule(
        PromptTag::Extract,
        &["search the storefront directly"],
        &item_md(
            "Keep searching first",
            "Direct search keeps solution paths short.",
            &format!("Search the storefront for the item name directly. {SEARCH_FIRST_MEMO}"),
        ),
    ));
    rules.push(rule(
        PromptTag::Extract,
        &[],
        &item_md(
            "Confirm the listing",
            "Answers come from the listing line.",
            "Answer with the exact value shown on the item listing.",
        ),
    ));

    ScriptedSuite {
        worlds: WorldSuite {
            worlds: vec![WorldDef { world_id: "store".into(), pages, tasks }],
        },
        stream: TaskStream { entries },
        script: ScriptFile { seed: 0, rules },
    }
}

/// Minimal n-task suite where every task is solved in one `answer` step.
/// Used for arity counts, k=1 degeneracy, and determinism checks: it scripts
/// every tag (act, judge, extract, contrast, refine, select) with
/// content-keyed rules.
pub fn counting_suite(n: usize) -> ScriptedSuite {
    let pages = vec![PageDef {
        id: "room".into(),
        text: "A plain room. The board shows the task value.".into(),
        links: BTreeMap::new(),
        search: BTreeMap::new(),
        filters: BTreeMap::new(),
        public: true,
    }];
    let mut tasks = Vec::new();
    let mut entries = Vec::new();
    let mut rules = Vec::new();

    for i in 0..n {
        let value = format!("{}", 900 + i);
        let task_id = format!("count-{i}");
        let query = format!("Counting task {i}: read the board value.");
        tasks.push(TaskDef {
            task_id: task_id.clone(),
            query: query.clone(),
            start_page: "room".into(),
            goal: GoalPredicate::AnswerEquals(value.clone()),
            gold_answer: Some(value.clone()),
            shortest_solution: vec![format!("answer({value})")],
        });
        entries.push(StreamEntry {
            task_id: task_id.clone(),
            query,
            world_ref: format!("count/{task_id}"),
        });
        rules.push(rule(
            PromptTag::Act,
            &[&format!("Counting task {i}:")],
            &format!("The board shows the value. ACTION: answer({value})"),
        ));
        rules.push(rule(PromptTag::Judge, &[&value], "Success"));
    }

    rules.push(rule(PromptTag::Judge, &[], "Failure"));
    rules.push(rule(
        PromptTag::Extract,
        &[],
        &item_md(
            "Read the board",
            "The board value is the answer.",
            "Answer with the value displayed on the board.",
        ),
    ));
    rules.push(rule(
        PromptTag::Contrast,
        &[],
        &item_md(
            "Consistent board reads",
            "All rollouts agreed on the board value.",
            "When independent attempts agree, answer with the shared value.",
        ),
    ));
    rules.push(rule(PromptTag::Select, &[], "1"));
    rules.push(rule(PromptTag::Refine, &[], "Re-checked the board; no changes."));

    ScriptedSuite {
        worlds: WorldSuite {
            worlds: vec![WorldDef { world_id: "count".into(), pages, tasks }],
        },
        stream: TaskStream { entries },
        script: ScriptFile { seed: 0, rules },
    }
}

/// n-task suite where every task fails: the scripted agent stops without an
/// answer, the judge has no success rule, and extraction routes through the
/// failure template, producing items marked [`FAILURE_LESSON_MEMO`].
pub fn failure_suite(n: usize) -> ScriptedSuite {
    let pages = vec![PageDef {
        id: "pit".into(),
        text: "A trap room with no exit information.".into(),
        links: BTreeMap::new(),
        search: BTreeMap::new(),
        filters: BTreeMap::new(),
        public: true,
    }];
    let mut tasks = Vec::new();
    let mut entries = Vec::new();
    let mut rules = Vec::new();

    for i in 0..n {
        let task_id = format!("trap-{i}");
        let query = format!("Escape room {i} safely.");
        let gold = format!("escaped-{i}");
        tasks.push(TaskDef {
            task_id: task_id.clone(),
            query: query.clone(),
            start_page: "pit".into(),
            goal: GoalPredicate::AnswerEquals(gold.clone()),
            gold_answer: Some(gold.clone()),
            shortest_solution: vec![format!("answer({gold})")],
        });
        entries.push(StreamEntry {
            task_id: task_id.clone(),
            query,
            world_ref: format!("trap/{task_id}"),
        });
        rules.push(rule(
            PromptTag::Act,
            &[&format!("Escape room {i} ")],
            "There is no safe route visible. ACTION: stop",
        ));
    }

    rules.push(rule(PromptTag::Judge, &[], "Failure"));
    rules.push(rule(
        PromptTag::Extract,
        &[],
        &item_md(
            "Scout before moving",
            "Entering blind caused the failure.",
            &format!("Map the exits before committing to a route. {FAILURE_LESSON_MEMO}"),
        ),
    ));

    ScriptedSuite {
        worlds: WorldSuite {
            worlds: vec![WorldDef { world_id: "trap".into(), pages, tasks }],
        },
        stream: TaskStream { entries },
        script: ScriptFile { seed: 0, rules },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_validate_and_resolve() {
        for suite in [transfer_suite(), efficiency_suite(), counting_suite(5), failure_suite(3)] {
            suite.worlds.validate().unwrap();
            for entry in &suite.stream.entries {
                suite.worlds.resolve(&entry.world_ref).unwrap();
            }
            assert!(!suite.script.rules.is_empty());
        }
    }

    #[test]
    fn transfer_suite_shapes() {
        let suite = transfer_suite();
        assert_eq!(suite.stream.entries.len(), 20);
        assert!(suite.stream.entries[..10].iter().all(|e| e.task_id.starts_with("learn-")));
        assert!(suite.stream.entries[10..].iter().all(|e| e.task_id.starts_with("eval-")));
        // The trick token never appears in any world page, only in script
        // extraction outputs.
        let world = &suite.worlds.worlds[0];
        assert!(world.pages.iter().all(|p| !p.text.contains(STAFF_FILTER_MEMO)));
    }

    #[test]
    fn efficiency_suite_solutions_are_two_steps() {
        let suite = efficiency_suite();
        for task in &suite.worlds.worlds[0].tasks {
            assert_eq!(task.shortest_solution.len(), 2, "task {}", task.task_id);
        }
    }
}
