//! Single-line, machine-parsable error contract shared by every
//! subcommand: `error: <class>: <message>` on stderr and a nonzero exit.
//! Classes: `config` (bad file or key), `io` (filesystem), `input`
//! (malformed score records), `check` (analytical check failure), `train`
//! (trainer abort).

use std::fmt;
use std::io::{self, Write};

#[derive(Debug, thiserror::Error)]
#[error("error: {class}: {message}")]
pub struct AppError {
    pub class: &'static str,
    pub message: String,
}

pub type AppResult<T> = Result<T, AppError>;

pub fn fail<T>(class: &'static str, message: impl fmt::Display) -> AppResult<T> {
    Err(AppError { class, message: message.to_string() })
}

pub fn io_err(context: &str, err: std::io::Error) -> AppError {
    AppError { class: "io", message: format!("{context}: {err}") }
}

/// Whether a line made it to stdout or the reader hung up.
pub enum Emit {
    Written,
    PipeClosed,
}

/// Writes one line to stdout. A closed pipe (`dsdr ... | head`) is not an
/// error; the caller decides whether to keep computing or stop.
pub fn emit_line(out: &mut impl Write, line: &str) -> AppResult<Emit> {
    match writeln!(out, "{line}") {
        Ok(()) => Ok(Emit::Written),
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(Emit::PipeClosed),
        Err(e) => Err(io_err("writing to stdout", e)),
    }
}
