pub mod bench;
pub mod collect;
pub mod fly;
pub mod gradcheck;
pub mod latency;
pub mod scene;
pub mod train;

use std::path::Path;

use crate::error::{write_file, CliError};

/// Writes to `path`, or to stdout when it is absent.
pub(crate) fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            use std::io::Write;
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| {
                    if text.ends_with('\n') {
                        Ok(())
                    } else {
                        out.write_all(b"\n")
                    }
                })
                .or_else(|e| match e.kind() {
                    // A closed pipe (`| head`) is not a failure of the command.
                    std::io::ErrorKind::BrokenPipe => Ok(()),
                    _ => Err(CliError::io("<stdout>", e)),
                })
        }
    }
}
