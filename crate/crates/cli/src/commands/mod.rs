pub mod benchmark;
pub mod gradcheck;
pub mod predict;
pub mod train;

use std::fs;
use std::path::Path;

use crate::error::{CliError, CliResult};

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}
