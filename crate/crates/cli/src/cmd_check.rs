//! The `check` subcommand: run the analytical checks and report one JSON
//! line per check. Exit status is zero only if every selected check
//! passes. The deliberate-perturbation flag miscomputes the coupling
//! softmax normalizer inside the first check, which must then fail; it
//! exists so the suite can prove it detects a real defect.

use std::time::Instant;

use dsdr_core::theory::{run_all, CheckOptions, CHECK_NAMES};
use serde::Serialize;

use crate::errors::{emit_line, fail, AppResult, Emit};

pub struct CheckArgs {
    pub filter: Option<String>,
    pub seed: u64,
    pub perturb_softmax_normalizer: bool,
}

#[derive(Serialize)]
struct CheckLine<'a> {
    name: &'a str,
    pass: bool,
    max_deviation: f64,
    runtime: f64,
    detail: &'a str,
}

pub fn run(args: CheckArgs) -> AppResult<()> {
    let selected: Vec<&'static str> = CHECK_NAMES
        .iter()
        .copied()
        .filter(|name| match &args.filter {
            Some(f) => name.contains(f.as_str()),
            None => true,
        })
        .collect();
    if selected.is_empty() {
        return fail(
            "check",
            format!("filter '{}' matches no check", args.filter.as_deref().unwrap_or("")),
        );
    }

    let mut failures = 0usize;
    let mut total = 0usize;
    let mut stdout = std::io::stdout().lock();
    // Every selected check runs even if the reader hangs up early, so the
    // exit status always reflects the whole selection.
    let mut pipe_open = true;
    for name in selected {
        let options = CheckOptions {
            seed: args.seed,
            filter: Some(String::from(name)),
            perturb_softmax_normalizer: args.perturb_softmax_normalizer,
        };
        let started = Instant::now();
        let reports = run_all(&options);
        let runtime = started.elapsed().as_secs_f64();
        for report in &reports {
            total += 1;
            let line = CheckLine {
                name: report.name,
                pass: report.pass,
                max_deviation: report.max_deviation,
                runtime,
                detail: &report.detail,
            };
            let json = match serde_json::to_string(&line) {
                Ok(json) => json,
                Err(e) => return fail("io", format!("serializing check report: {e}")),
            };
            if pipe_open {
                if let Emit::PipeClosed = emit_line(&mut stdout, &json)? {
                    pipe_open = false;
                }
            }
            if !report.pass {
                failures += 1;
            }
        }
    }
    if failures > 0 {
        return fail("check", format!("{failures} of {total} check(s) failed"));
    }
    Ok(())
}
