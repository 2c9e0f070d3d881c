//! Run configuration: a plain-text sectioned `key = value` format that is
//! also the manifest format, so a finished run's manifest feeds straight
//! back into `--config` for an exact rerun.
//!
//! ```text
//! [train]
//! method = dsdr
//! steps = 500
//!
//! [task]
//! start = 1
//! target = 4
//! modulus = 7
//! max_len = 2
//! ops = +3 *4
//! ```
//!
//! `#` and `;` start comments, `[manifest]` sections are ignored on read
//! (they carry provenance, not configuration), unknown keys and sections
//! are hard errors naming the offender, and every task must use the same
//! `ops` list because the vocabulary is shared by the policy table.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use dsdr_core::env::{OpEffect, TaskSpec, Vocab};
use dsdr_core::trainer::{Method, TrainConfig};

use crate::errors::{fail, AppResult};

/// One `[task]` section before validation against the environment rules.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDef {
    pub start: u64,
    pub target: u64,
    pub modulus: u64,
    pub max_len: usize,
    pub ops: Vec<OpEffect>,
}

impl TaskDef {
    pub fn demo() -> Self {
        TaskDef {
            start: 1,
            target: 4,
            modulus: 7,
            max_len: 2,
            ops: vec![OpEffect::Add(3), OpEffect::Mul(4)],
        }
    }
}

/// Everything a run needs: trainer hyperparameters plus the task list.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub train: TrainConfig,
    pub tasks: Vec<TaskDef>,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec { train: TrainConfig::default(), tasks: vec![TaskDef::demo()] }
    }
}

impl RunSpec {
    /// Converts to the core types, enforcing the shared-vocabulary rule.
    pub fn to_core(&self) -> AppResult<(Vec<TaskSpec>, Vocab)> {
        if self.tasks.is_empty() {
            return fail("config", "at least one [task] section is required");
        }
        let first_ops = &self.tasks[0].ops;
        for (i, task) in self.tasks.iter().enumerate() {
            if &task.ops != first_ops {
                return fail(
                    "config",
                    format!(
                        "task {i} uses ops '{}' but task 0 uses '{}'; all tasks share one vocabulary",
                        render_ops(&task.ops),
                        render_ops(first_ops)
                    ),
                );
            }
        }
        let vocab = match Vocab::from_ops(first_ops.clone()) {
            Ok(v) => v,
            Err(e) => return fail("config", e),
        };
        let mut tasks = Vec::with_capacity(self.tasks.len());
        for (i, t) in self.tasks.iter().enumerate() {
            match TaskSpec::new(t.start, t.target, t.modulus, t.max_len) {
                Ok(spec) => tasks.push(spec),
                Err(e) => return fail("config", format!("task {i}: {e}")),
            }
        }
        Ok((tasks, vocab))
    }
}

pub fn render_ops(ops: &[OpEffect]) -> String {
    let parts: Vec<String> = ops.iter().map(|op| op.to_string()).collect();
    parts.join(" ")
}

fn parse_op(token: &str) -> Option<OpEffect> {
    let rest = token.get(1..)?;
    let value = rest.parse::<u64>().ok()?;
    match token.as_bytes().first()? {
        b'+' => Some(OpEffect::Add(value)),
        b'*' => Some(OpEffect::Mul(value)),
        _ => None,
    }
}

fn parse_ops(value: &str, place: &str) -> AppResult<Vec<OpEffect>> {
    let mut ops = Vec::new();
    for token in value.split_whitespace() {
        match parse_op(token) {
            Some(op) => ops.push(op),
            None => {
                return fail(
                    "config",
                    format!("{place}: bad op '{token}', expected +<n> or *<n>"),
                )
            }
        }
    }
    if ops.is_empty() {
        return fail("config", format!("{place}: ops must list at least one op"));
    }
    Ok(ops)
}

fn parse_num<T: FromStr>(value: &str, place: &str) -> AppResult<T>
where
    T::Err: std::fmt::Display,
{
    match value.parse::<T>() {
        Ok(v) => Ok(v),
        Err(e) => fail("config", format!("{place}: bad value '{value}': {e}")),
    }
}

/// Applies one `[train]` key. Shared by file parsing and `--set`.
fn apply_train_key(train: &mut TrainConfig, key: &str, value: &str, place: &str) -> AppResult<()> {
    match key {
        "method" => match Method::from_str(value) {
            Ok(m) => train.method = m,
            Err(e) => return fail("config", format!("{place}: {e}")),
        },
        "group_size" => train.group_size = parse_num(value, place)?,
        "steps" => train.steps = parse_num(value, place)?,
        "seed" => train.seed = parse_num(value, place)?,
        "learning_rate" => train.learning_rate = parse_num(value, place)?,
        "lambda_d" => train.lambda_d = parse_num(value, place)?,
        "sigma_d" => train.sigma_d = parse_num(value, place)?,
        "lambda_local" => train.lambda_local = parse_num(value, place)?,
        "tau" => train.tau = parse_num(value, place)?,
        "beta" => train.beta = parse_num(value, place)?,
        "eps_clip_low" => train.eps_clip_low = parse_num(value, place)?,
        "eps_clip_high" => train.eps_clip_high = parse_num(value, place)?,
        "eps_std" => train.eps_std = parse_num(value, place)?,
        "context_window" => train.context_window = parse_num(value, place)?,
        "inner_epochs" => train.inner_epochs = parse_num(value, place)?,
        "embed_dim" => train.embed_dim = parse_num(value, place)?,
        "hash_seed" => train.hash_seed = parse_num(value, place)?,
        "ratio_stop_grad" => train.ratio_stop_grad = parse_num(value, place)?,
        other => return fail("config", format!("{place}: unknown key '{other}'")),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Train,
    Task,
    Manifest,
}

/// Partially built `[task]` section; every field is mandatory once the
/// section opens.
#[derive(Debug, Default)]
struct TaskDraft {
    start: Option<u64>,
    target: Option<u64>,
    modulus: Option<u64>,
    max_len: Option<usize>,
    ops: Option<Vec<OpEffect>>,
    opened_at: usize,
}

impl TaskDraft {
    fn finish(self, index: usize) -> AppResult<TaskDef> {
        let missing = |field: &str, line: usize| {
            fail(
                "config",
                format!("[task] section {index} (line {line}) is missing '{field}'"),
            )
        };
        let Some(start) = self.start else { return missing("start", self.opened_at) };
        let Some(target) = self.target else { return missing("target", self.opened_at) };
        let Some(modulus) = self.modulus else { return missing("modulus", self.opened_at) };
        let Some(max_len) = self.max_len else { return missing("max_len", self.opened_at) };
        let Some(ops) = self.ops else { return missing("ops", self.opened_at) };
        Ok(TaskDef { start, target, modulus, max_len, ops })
    }
}

/// Parses config text. Defaults apply to everything left unset; a file
/// without `[task]` sections runs the built-in demo task.
pub fn parse_config(text: &str) -> AppResult<RunSpec> {
    let mut train = TrainConfig::default();
    let mut tasks: Vec<TaskDef> = Vec::new();
    let mut section: Option<Section> = None;
    let mut draft: Option<TaskDraft> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find(['#', ';']) {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if let Some(open) = draft.take() {
                tasks.push(open.finish(tasks.len())?);
            }
            section = Some(match name.trim() {
                "train" => Section::Train,
                "task" => {
                    draft = Some(TaskDraft { opened_at: line_no, ..TaskDraft::default() });
                    Section::Task
                }
                "manifest" => Section::Manifest,
                other => {
                    return fail(
                        "config",
                        format!("line {line_no}: unknown section '[{other}]'"),
                    )
                }
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return fail("config", format!("line {line_no}: expected 'key = value', got '{line}'"));
        };
        let key = key.trim();
        let value = value.trim();
        let place = format!("line {line_no}");
        match section {
            None => {
                return fail(
                    "config",
                    format!("line {line_no}: '{key}' appears before any [section] header"),
                )
            }
            Some(Section::Manifest) => {}
            Some(Section::Train) => apply_train_key(&mut train, key, value, &place)?,
            Some(Section::Task) => {
                let d = draft.as_mut().expect("task section keeps an open draft");
                match key {
                    "start" => d.start = Some(parse_num(value, &place)?),
                    "target" => d.target = Some(parse_num(value, &place)?),
                    "modulus" => d.modulus = Some(parse_num(value, &place)?),
                    "max_len" => d.max_len = Some(parse_num(value, &place)?),
                    "ops" => d.ops = Some(parse_ops(value, &place)?),
                    other => {
                        return fail(
                            "config",
                            format!("line {line_no}: unknown [task] key '{other}'"),
                        )
                    }
                }
            }
        }
    }
    if let Some(open) = draft.take() {
        tasks.push(open.finish(tasks.len())?);
    }
    if tasks.is_empty() {
        tasks.push(TaskDef::demo());
    }
    Ok(RunSpec { train, tasks })
}

pub fn load_config(path: &Path) -> AppResult<RunSpec> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail("config", format!("cannot read '{}': {e}", path.display())),
    };
    parse_config(&text)
}

/// Applies repeatable `--set key=value` overrides to the `[train]` section.
pub fn apply_overrides(spec: &mut RunSpec, sets: &[String]) -> AppResult<()> {
    for (i, pair) in sets.iter().enumerate() {
        let Some((key, value)) = pair.split_once('=') else {
            return fail(
                "config",
                format!("--set argument {} ('{pair}') is not of the form key=value", i + 1),
            );
        };
        apply_train_key(&mut spec.train, key.trim(), value.trim(), &format!("--set '{pair}'"))?;
    }
    Ok(())
}

/// Renders the resolved spec back into config syntax; `parse_config` of the
/// result reproduces the spec exactly.
pub fn render_config(spec: &RunSpec) -> String {
    let t = &spec.train;
    let mut out = String::new();
    out.push_str("[train]\n");
    let _ = writeln!(out, "method = {}", t.method.as_str());
    let _ = writeln!(out, "group_size = {}", t.group_size);
    let _ = writeln!(out, "steps = {}", t.steps);
    let _ = writeln!(out, "seed = {}", t.seed);
    let _ = writeln!(out, "learning_rate = {}", t.learning_rate);
    let _ = writeln!(out, "lambda_d = {}", t.lambda_d);
    let _ = writeln!(out, "sigma_d = {}", t.sigma_d);
    let _ = writeln!(out, "lambda_local = {}", t.lambda_local);
    let _ = writeln!(out, "tau = {}", t.tau);
    let _ = writeln!(out, "beta = {}", t.beta);
    let _ = writeln!(out, "eps_clip_low = {}", t.eps_clip_low);
    let _ = writeln!(out, "eps_clip_high = {}", t.eps_clip_high);
    let _ = writeln!(out, "eps_std = {}", t.eps_std);
    let _ = writeln!(out, "context_window = {}", t.context_window);
    let _ = writeln!(out, "inner_epochs = {}", t.inner_epochs);
    let _ = writeln!(out, "embed_dim = {}", t.embed_dim);
    let _ = writeln!(out, "hash_seed = {}", t.hash_seed);
    let _ = writeln!(out, "ratio_stop_grad = {}", t.ratio_stop_grad);
    for task in &spec.tasks {
        out.push_str("\n[task]\n");
        let _ = writeln!(out, "start = {}", task.start);
        let _ = writeln!(out, "target = {}", task.target);
        let _ = writeln!(out, "modulus = {}", task.modulus);
        let _ = writeln!(out, "max_len = {}", task.max_len);
        let _ = writeln!(out, "ops = {}", render_ops(&task.ops));
    }
    out
}
