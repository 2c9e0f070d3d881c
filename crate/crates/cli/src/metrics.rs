//! Line-delimited JSON view of the trainer's per-step metrics. Field order
//! matches the struct declaration so the stream is diffable, and every line
//! is written and flushed individually so an interrupted run still leaves a
//! valid prefix.

use std::io::Write;

use dsdr_core::trainer::StepMetrics;
use serde::Serialize;

use crate::errors::{io_err, AppError};

#[derive(Debug, Serialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_r_tilde: f64,
    pub advantage_variance: f64,
    pub mean_token_entropy: f64,
    pub mean_table_entropy: f64,
    pub mean_d_emb: f64,
    pub mean_d_eq: f64,
    pub mode_coverage: f64,
    pub frac_zero_advantage_groups: f64,
    pub kl_to_ref: f64,
}

impl From<&StepMetrics> for MetricsRecord {
    fn from(m: &StepMetrics) -> Self {
        MetricsRecord {
            step: m.step,
            mean_reward: m.mean_reward,
            mean_r_tilde: m.mean_r_tilde,
            advantage_variance: m.advantage_variance,
            mean_token_entropy: m.mean_token_entropy,
            mean_table_entropy: m.mean_table_entropy,
            mean_d_emb: m.mean_d_emb,
            mean_d_eq: m.mean_d_eq,
            mode_coverage: m.mode_coverage,
            frac_zero_advantage_groups: m.frac_zero_advantage_groups,
            kl_to_ref: m.kl_to_ref,
        }
    }
}

pub fn write_record(out: &mut impl Write, metrics: &StepMetrics) -> Result<(), AppError> {
    let record = MetricsRecord::from(metrics);
    let line = serde_json::to_string(&record)
        .map_err(|e| AppError { class: "io", message: format!("serializing metrics: {e}") })?;
    out.write_all(line.as_bytes())
        .and_then(|()| out.write_all(b"\n"))
        .and_then(|()| out.flush())
        .map_err(|e| io_err("writing metrics", e))
}
