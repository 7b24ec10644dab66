//! Line-oriented text format shared by the learner checkpoints.
//!
//! ```text
//! ridepool-checkpoint v1 <kind>
//! <key> <value...>
//! ...
//! entries <n>
//! <entry line> x n
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! checkpoint read back reproduces every value bit for bit.

use std::io::{BufRead, Write};

use thiserror::Error;

pub const MAGIC: &str = "ridepool-checkpoint";
pub const VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint line {line}: {msg}")]
    Format { line: usize, msg: String },
}

pub(crate) struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    pub fn new(mut out: W, kind: &str) -> Result<Self, CheckpointError> {
        writeln!(out, "{MAGIC} {VERSION} {kind}")?;
        Ok(Writer { out })
    }

    pub fn field(&mut self, key: &str, value: impl std::fmt::Display) -> Result<(), CheckpointError> {
        writeln!(self.out, "{key} {value}")?;
        Ok(())
    }

    pub fn line(&mut self, line: &str) -> Result<(), CheckpointError> {
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CheckpointError> {
        self.out.flush()?;
        Ok(())
    }
}

pub(crate) struct Reader<R: BufRead> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Reader<R> {
    pub fn new(input: R, kind: &str) -> Result<Self, CheckpointError> {
        let mut r = Reader { lines: input.lines(), line: 0 };
        let header = r.next_line()?;
        let expected = format!("{MAGIC} {VERSION} {kind}");
        if header.trim() != expected {
            return Err(r.error(format!("expected header {expected:?}, found {header:?}")));
        }
        Ok(r)
    }

    pub fn error(&self, msg: String) -> CheckpointError {
        CheckpointError::Format { line: self.line, msg }
    }

    pub fn next_line(&mut self) -> Result<String, CheckpointError> {
        self.line += 1;
        match self.lines.next() {
            Some(l) => Ok(l?),
            None => Err(self.error("unexpected end of checkpoint".into())),
        }
    }

    /// Reads `<key> <rest>` and returns `rest`.
    pub fn field(&mut self, key: &str) -> Result<String, CheckpointError> {
        let l = self.next_line()?;
        match l.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest.trim().to_string()),
            _ => Err(self.error(format!("expected field {key:?}, found {l:?}"))),
        }
    }

    pub fn parse_field<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, CheckpointError> {
        let raw = self.field(key)?;
        raw.parse().map_err(|_| self.error(format!("invalid value {raw:?} for {key}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, raw: &str, what: &str) -> Result<T, CheckpointError> {
        raw.parse().map_err(|_| self.error(format!("invalid {what} {raw:?}")))
    }
}

/// Comma-joins a list of displayable values; `-` for an empty list.
pub(crate) fn join<T: std::fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        "-".to_string()
    } else {
        items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

pub(crate) fn split<T: std::str::FromStr>(raw: &str) -> Option<Vec<T>> {
    if raw == "-" {
        return Some(Vec::new());
    }
    raw.split(',').map(|x| x.parse().ok()).collect()
}
