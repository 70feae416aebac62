//! Output assembly: every table starts with a '#'-prefixed metadata header naming
//! the tool versions, the command, the seed, and the full resolved config between
//! config-begin/config-end markers, so the file doubles as a rerunnable config.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;

use crate::config::RunConfig;

/// Version banner of the two crates involved.
pub fn version_line() -> String {
    format!("dbd {} (dbd-core {})", env!("CARGO_PKG_VERSION"), dbd_core::VERSION)
}

/// A table under construction, header first.
pub struct Report {
    buffer: String,
}

impl Report {
    /// Starts a report with the standard metadata header. `notes` are extra
    /// header lines (resolved scan windows and similar), one per entry.
    pub fn new(command: &str, config: &RunConfig, notes: &[String], columns: &str) -> Self {
        let mut buffer = String::new();
        let _ = writeln!(buffer, "# {}", version_line());
        let _ = writeln!(buffer, "# command: {command}");
        let _ = writeln!(buffer, "# seed: {}", config.seed);
        let _ = writeln!(buffer, "# config-begin");
        for line in config.to_toml().lines() {
            let _ = writeln!(buffer, "# {line}");
        }
        let _ = writeln!(buffer, "# config-end");
        for note in notes {
            let _ = writeln!(buffer, "# {note}");
        }
        let _ = writeln!(buffer, "# columns: {columns}");
        Self { buffer }
    }

    /// Appends one data row, already formatted.
    pub fn row(&mut self, line: &str) {
        self.buffer.push_str(line);
        self.buffer.push('\n');
    }

    /// Writes the finished table to the configured output file, or stdout.
    pub fn emit(self, output: Option<&str>) -> anyhow::Result<()> {
        match output {
            Some(path) => std::fs::write(Path::new(path), self.buffer.as_bytes())
                .with_context(|| format!("cannot write output {path}")),
            None => {
                print!("{}", self.buffer);
                Ok(())
            }
        }
    }

    /// The assembled text, for tests.
    #[cfg(test)]
    pub fn text(&self) -> &str {
        &self.buffer
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_embeds_a_recoverable_config() {
        let mut config = RunConfig::default();
        config.strategy = "cd-dbd".to_string();
        let report = Report::new("efficiency", &config, &["note: x".to_string()], "a b");
        let text = report.text();
        assert!(text.starts_with(&format!("# {}\n# command: efficiency\n", version_line())));
        assert!(text.contains("# config-begin\n"));
        assert!(text.contains("# strategy = \"cd-dbd\"\n"));
        assert!(text.contains("# config-end\n"));
        assert!(text.contains("# note: x\n"));
        assert!(text.ends_with("# columns: a b\n"));
    }
}
