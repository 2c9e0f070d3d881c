//! Plain-text policy checkpoint.
//!
//! ```text
//! dsdr-policy v1
//! context_window = 2
//! vocab = +3 *4 eos
//! task 0 = start 1 target 4 modulus 7 max_len 2
//! row 0 - = 0.125 -0.5 0
//! row 0 0,1 = ...
//! ```
//!
//! One `row` line per policy context: task index, the window as
//! comma-joined token ids (`-` when empty), then one logit per vocabulary
//! entry. Floats print in Rust's shortest round-trip form, so reading a
//! checkpoint back reproduces the parameters bit for bit; the reader
//! rebuilds the shape from the header and refuses rows that do not match
//! it.

use std::fmt::Write as _;

use dsdr_core::env::{OpEffect, TaskSpec, Vocab};
use dsdr_core::policy::{Context, PolicyParams, PolicyShape};

use crate::config::render_ops;
use crate::errors::{fail, AppResult};

const HEADER: &str = "dsdr-policy v1";

fn render_window(window: &[usize]) -> String {
    if window.is_empty() {
        return String::from("-");
    }
    let parts: Vec<String> = window.iter().map(|id| id.to_string()).collect();
    parts.join(",")
}

pub fn render_checkpoint(params: &PolicyParams) -> String {
    let shape = params.shape();
    let vocab = shape.vocab();
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let _ = writeln!(out, "context_window = {}", shape.context_window());
    let ops: Vec<OpEffect> = shape
        .vocab()
        .op_ids()
        .iter()
        .map(|&id| vocab.get(id).expect("op ids come from the vocab"))
        .collect();
    let _ = writeln!(out, "vocab = {} eos", render_ops(&ops));
    for (i, task) in shape.tasks().iter().enumerate() {
        let _ = writeln!(
            out,
            "task {i} = start {} target {} modulus {} max_len {}",
            task.start, task.target, task.modulus, task.max_len
        );
    }
    for (row, ctx) in shape.contexts().iter().enumerate() {
        let logits: Vec<String> =
            params.logits_row(row).iter().map(|x| x.to_string()).collect();
        let _ = writeln!(out, "row {} {} = {}", ctx.task, render_window(&ctx.window), logits.join(" "));
    }
    out
}

fn parse_window(text: &str) -> AppResult<Vec<usize>> {
    if text == "-" {
        return Ok(Vec::new());
    }
    let mut window = Vec::new();
    for part in text.split(',') {
        match part.parse::<usize>() {
            Ok(id) => window.push(id),
            Err(e) => return fail("input", format!("bad window token id '{part}': {e}")),
        }
    }
    Ok(window)
}

pub fn parse_checkpoint(text: &str) -> AppResult<PolicyParams> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, line)) if line == HEADER => {}
        other => {
            return fail(
                "input",
                format!("expected checkpoint header '{HEADER}', got '{}'", other.map(|(_, l)| l).unwrap_or("")),
            )
        }
    }

    let mut context_window: Option<usize> = None;
    let mut vocab: Option<Vocab> = None;
    let mut tasks: Vec<TaskSpec> = Vec::new();
    let mut rows: Vec<(Context, Vec<f64>)> = Vec::new();

    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| fail("input", format!("checkpoint line {line_no}: {what}"));
        if let Some(rest) = line.strip_prefix("context_window =") {
            match rest.trim().parse::<usize>() {
                Ok(v) => context_window = Some(v),
                Err(e) => return bad(&format!("bad context_window: {e}")),
            }
        } else if let Some(rest) = line.strip_prefix("vocab =") {
            let mut ops = Vec::new();
            let mut saw_eos = false;
            for token in rest.split_whitespace() {
                if token == "eos" {
                    saw_eos = true;
                } else if let Some(value) = token.strip_prefix('+') {
                    match value.parse() {
                        Ok(v) => ops.push(OpEffect::Add(v)),
                        Err(e) => return bad(&format!("bad op '{token}': {e}")),
                    }
                } else if let Some(value) = token.strip_prefix('*') {
                    match value.parse() {
                        Ok(v) => ops.push(OpEffect::Mul(v)),
                        Err(e) => return bad(&format!("bad op '{token}': {e}")),
                    }
                } else {
                    return bad(&format!("unknown vocab token '{token}'"));
                }
            }
            if !saw_eos {
                return bad("vocab line must end with eos");
            }
            match Vocab::from_ops(ops) {
                Ok(v) => vocab = Some(v),
                Err(e) => return bad(&e.to_string()),
            }
        } else if let Some(rest) = line.strip_prefix("task ") {
            let Some((_, spec)) = rest.split_once('=') else {
                return bad("task line needs '='");
            };
            let fields: Vec<&str> = spec.split_whitespace().collect();
            if fields.len() != 8
                || fields[0] != "start"
                || fields[2] != "target"
                || fields[4] != "modulus"
                || fields[6] != "max_len"
            {
                return bad("task line must read 'start S target T modulus M max_len L'");
            }
            let num = |s: &str| s.parse::<u64>();
            match (num(fields[1]), num(fields[3]), num(fields[5]), fields[7].parse::<usize>()) {
                (Ok(s), Ok(t), Ok(m), Ok(l)) => match TaskSpec::new(s, t, m, l) {
                    Ok(task) => tasks.push(task),
                    Err(e) => return bad(&e.to_string()),
                },
                _ => return bad("task line has a non-numeric field"),
            }
        } else if let Some(rest) = line.strip_prefix("row ") {
            let Some((head, values)) = rest.split_once('=') else {
                return bad("row line needs '='");
            };
            let head: Vec<&str> = head.split_whitespace().collect();
            if head.len() != 2 {
                return bad("row line must read 'row TASK WINDOW = logits...'");
            }
            let task = match head[0].parse::<usize>() {
                Ok(t) => t,
                Err(e) => return bad(&format!("bad task index: {e}")),
            };
            let window = parse_window(head[1])?;
            let mut logits = Vec::new();
            for value in values.split_whitespace() {
                match value.parse::<f64>() {
                    Ok(x) => logits.push(x),
                    Err(e) => return bad(&format!("bad logit '{value}': {e}")),
                }
            }
            rows.push((Context { task, window }, logits));
        } else {
            return bad(&format!("unrecognized line '{line}'"));
        }
    }

    let Some(context_window) = context_window else {
        return fail("input", "checkpoint is missing context_window");
    };
    let Some(vocab) = vocab else {
        return fail("input", "checkpoint is missing the vocab line");
    };
    if tasks.is_empty() {
        return fail("input", "checkpoint lists no tasks");
    }
    let shape = match PolicyShape::build(tasks, vocab, context_window) {
        Ok(s) => s,
        Err(e) => return fail("input", format!("checkpoint shape is invalid: {e}")),
    };
    if rows.len() != shape.n_contexts() {
        return fail(
            "input",
            format!("checkpoint has {} rows but the shape requires {}", rows.len(), shape.n_contexts()),
        );
    }
    let mut params = PolicyParams::uniform(shape.clone());
    for (ctx, logits) in rows {
        let row = match shape.row_of(&ctx) {
            Ok(r) => r,
            Err(e) => return fail("input", format!("checkpoint row does not fit the shape: {e}")),
        };
        if logits.len() != shape.vocab().len() {
            return fail(
                "input",
                format!(
                    "row for task {} window {} has {} logits, vocab needs {}",
                    ctx.task,
                    render_window(&ctx.window),
                    logits.len(),
                    shape.vocab().len()
                ),
            );
        }
        params.set_row(row, &logits);
    }
    Ok(params)
}
