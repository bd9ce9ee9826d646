//! CSV output with a trailing provenance comment.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Identifies the run in every output file.
#[derive(Clone, Debug)]
pub struct RunStamp {
    pub config_sha256: String,
    pub seed: u64,
}

pub struct CsvFile {
    path: PathBuf,
    out: BufWriter<File>,
    stamp: RunStamp,
}

impl CsvFile {
    pub fn create(dir: &Path, name: &str, header: &str, stamp: &RunStamp) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut csv = Self {
            path,
            out: BufWriter::new(file),
            stamp: stamp.clone(),
        };
        csv.line(header)?;
        Ok(csv)
    }

    pub fn line(&mut self, row: &str) -> Result<(), CliError> {
        writeln!(self.out, "{row}").map_err(|e| CliError::Io(format!("{}: {e}", self.path.display())))
    }

    pub fn finish(mut self) -> Result<PathBuf, CliError> {
        let meta = format!("# config_sha256={},seed={}", self.stamp.config_sha256, self.stamp.seed);
        self.line(&meta)?;
        self.out
            .flush()
            .map_err(|e| CliError::Io(format!("{}: {e}", self.path.display())))?;
        Ok(self.path)
    }
}
