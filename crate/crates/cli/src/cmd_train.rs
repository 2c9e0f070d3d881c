//! The `train` subcommand: resolve configuration, run the trainer, leave a
//! reproducible artifact directory behind.
//!
//! Write order is part of the contract: the manifest goes down first (with
//! checksum placeholders), metrics stream line by line during training, the
//! checkpoint lands last, and the manifest is then rewritten with the final
//! sha256 checksums. Interrupting a run therefore leaves a readable
//! manifest and a valid metrics prefix. Nothing in the directory contains
//! timestamps or absolute paths, so reruns with the same seed produce
//! byte-identical artifacts.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::checkpoint::{parse_checkpoint, render_checkpoint};
use crate::config::{apply_overrides, load_config, render_config, RunSpec};
use crate::errors::{emit_line, fail, io_err, AppResult, Emit};
use crate::metrics::write_record;

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "policy.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn manifest_text(spec: &RunSpec, metrics_sha: &str, checkpoint_sha: &str) -> String {
    let mut out = render_config(spec);
    out.push_str("\n[manifest]\n");
    out.push_str(concat!("tool = dsdr ", env!("CARGO_PKG_VERSION"), "\n"));
    out.push_str("runtime = single-threaded, deterministic chacha8 rng, f64 arithmetic\n");
    out.push_str(&format!("metrics = {METRICS_FILE}\n"));
    out.push_str(&format!("checkpoint = {CHECKPOINT_FILE}\n"));
    out.push_str(&format!("sha256_metrics = {metrics_sha}\n"));
    out.push_str(&format!("sha256_checkpoint = {checkpoint_sha}\n"));
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

/// Output directory: `DSDR_OUT` when set, else `--out`, else `dsdr-out`.
fn resolve_out_dir(arg: Option<PathBuf>) -> PathBuf {
    std::env::var_os("DSDR_OUT")
        .map(PathBuf::from)
        .or(arg)
        .unwrap_or_else(|| PathBuf::from("dsdr-out"))
}

fn write_file(path: &Path, contents: &str) -> AppResult<()> {
    fs::write(path, contents)
        .map_err(|e| io_err(&format!("writing '{}'", path.display()), e))
}

pub fn run(args: TrainArgs) -> AppResult<()> {
    let mut spec = match &args.config {
        Some(path) => load_config(path)?,
        None => RunSpec::default(),
    };
    apply_overrides(&mut spec, &args.sets)?;
    if let Some(seed) = args.seed {
        spec.train.seed = seed;
    }
    if let Err(e) = spec.train.validate() {
        return fail("config", e);
    }
    let (tasks, vocab) = spec.to_core()?;

    let out_dir = resolve_out_dir(args.out);
    fs::create_dir_all(&out_dir)
        .map_err(|e| io_err(&format!("creating '{}'", out_dir.display()), e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let metrics_path = out_dir.join(METRICS_FILE);
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);

    write_file(&manifest_path, &manifest_text(&spec, "pending", "pending"))?;

    let mut metrics_file = fs::File::create(&metrics_path)
        .map_err(|e| io_err(&format!("creating '{}'", metrics_path.display()), e))?;
    let mut write_error = None;
    let run = dsdr_core::trainer::train(spec.train.clone(), tasks, vocab, |m| {
        if write_error.is_none() {
            if let Err(e) = write_record(&mut metrics_file, m) {
                write_error = Some(e);
            }
        }
    });
    if let Some(e) = write_error {
        return Err(e);
    }
    let run = match run {
        Ok(r) => r,
        Err(e) => return fail("train", e),
    };
    metrics_file.flush().map_err(|e| io_err("flushing metrics", e))?;
    drop(metrics_file);

    let checkpoint = render_checkpoint(&run.params);
    if parse_checkpoint(&checkpoint)?.params() != run.params.params() {
        return fail("io", "checkpoint did not round-trip bit-exactly; refusing to write it");
    }
    write_file(&checkpoint_path, &checkpoint)?;

    let metrics_bytes = fs::read(&metrics_path)
        .map_err(|e| io_err(&format!("re-reading '{}'", metrics_path.display()), e))?;
    let manifest = manifest_text(
        &spec,
        &sha256_hex(&metrics_bytes),
        &sha256_hex(checkpoint.as_bytes()),
    );
    write_file(&manifest_path, &manifest)?;

    let mut stdout = std::io::stdout().lock();
    let summary = format!(
        "trained {} step(s), method {}, seed {}; artifacts in {}",
        run.metrics.len(),
        spec.train.method.as_str(),
        spec.train.seed,
        out_dir.display()
    );
    if let Emit::PipeClosed = emit_line(&mut stdout, &summary)? {
        return Ok(());
    }
    if let Some(metric) = run.metrics.last() {
        emit_line(&mut stdout, &format!("final mean reward {}", metric.mean_reward))?;
    }
    Ok(())
}
