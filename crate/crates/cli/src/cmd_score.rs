//! The `score` subcommand: treat a line-delimited file of
//! `{"text": ..., "reward": 0 or 1}` records as one rollout group and emit
//! the full shaping pipeline per record: diversity scores, augmented
//! reward, advantage, and coupling weight.

use std::path::PathBuf;

use dsdr_core::{diversity, shaping};
use serde::{Deserialize, Serialize};

use crate::config::{apply_overrides, load_config, RunSpec};
use crate::errors::{emit_line, fail, AppResult, Emit};

pub struct ScoreArgs {
    pub input: PathBuf,
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
}

#[derive(Deserialize)]
struct ScoreInput {
    text: String,
    reward: f64,
}

#[derive(Serialize)]
struct ScoreOutput {
    d_emb: f64,
    d_eq: f64,
    d: f64,
    d_bar: f64,
    r_tilde: f64,
    a_tilde: f64,
    w: f64,
}

pub fn run(args: ScoreArgs) -> AppResult<()> {
    let mut spec = match &args.config {
        Some(path) => load_config(path)?,
        None => RunSpec::default(),
    };
    apply_overrides(&mut spec, &args.sets)?;

    let raw = match std::fs::read_to_string(&args.input) {
        Ok(t) => t,
        Err(e) => return fail("io", format!("cannot read '{}': {e}", args.input.display())),
    };

    let mut texts = Vec::new();
    let mut rewards = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreInput = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return fail("input", format!("line {line_no}: {e}")),
        };
        if record.reward != 0.0 && record.reward != 1.0 {
            return fail(
                "input",
                format!("line {line_no}: reward must be 0 or 1, got {}", record.reward),
            );
        }
        texts.push(record.text);
        rewards.push(record.reward);
    }
    if texts.len() < 2 {
        return fail(
            "input",
            format!("a group needs at least 2 records, got {}", texts.len()),
        );
    }

    let embedder = diversity::Embedder::new(spec.train.embed_dim, spec.train.hash_seed);
    let views: Vec<&str> = texts.iter().map(String::as_str).collect();
    let scores = match diversity::score_group(&views, &embedder, spec.train.sigma_d) {
        Ok(s) => s,
        Err(e) => return fail("input", e),
    };
    let d_bars: Vec<f64> = scores.iter().map(|s| s.d_bar).collect();
    let shaped = shaping::shape_group(
        &rewards,
        &d_bars,
        spec.train.lambda_d,
        spec.train.eps_std,
        spec.train.tau,
    );

    let mut stdout = std::io::stdout().lock();
    for (i, score) in scores.iter().enumerate() {
        let out = ScoreOutput {
            d_emb: score.d_emb,
            d_eq: score.d_eq,
            d: score.d,
            d_bar: score.d_bar,
            r_tilde: shaped.r_tilde[i],
            a_tilde: shaped.advantages[i],
            w: shaped.weights[i],
        };
        let json = match serde_json::to_string(&out) {
            Ok(json) => json,
            Err(e) => return fail("io", format!("serializing score record: {e}")),
        };
        if let Emit::PipeClosed = emit_line(&mut stdout, &json)? {
            return Ok(());
        }
    }
    Ok(())
}
