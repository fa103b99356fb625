//! Versioned JSON files holding a complete [`TaskSuite`].

use std::path::Path;

use fedsim_core::model::ModelSpec;
use fedsim_core::tasks::TaskSuite;
use serde::{Deserialize, Serialize};

use crate::error::{file_err, IoError, IoResult};

pub const SUITE_MAGIC: &str = "fedsim-task-suite";
pub const SUITE_VERSION: u32 = 1;

#[derive(Serialize)]
struct SuiteFileRef<'a> {
    magic: &'a str,
    version: u32,
    n_clients: usize,
    n_server_partitions: usize,
    suite: &'a TaskSuite,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    magic: String,
    version: u32,
    n_clients: usize,
    n_server_partitions: usize,
    suite: TaskSuite,
}

pub fn suite_to_json(suite: &TaskSuite) -> IoResult<String> {
    let file = SuiteFileRef {
        magic: SUITE_MAGIC,
        version: SUITE_VERSION,
        n_clients: suite.clients.len(),
        n_server_partitions: suite.server.partitions.len(),
        suite,
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn suite_from_json(text: &str) -> IoResult<TaskSuite> {
    let file: SuiteFile = serde_json::from_str(text)?;
    if file.magic != SUITE_MAGIC {
        return Err(IoError::Format(format!("not a task-suite file (magic {:?})", file.magic)));
    }
    if file.version != SUITE_VERSION {
        return Err(IoError::Format(format!("unsupported task-suite version {}", file.version)));
    }
    let mut suite = file.suite;
    if suite.clients.len() != file.n_clients || suite.server.partitions.len() != file.n_server_partitions {
        return Err(IoError::Format("task-suite counts do not match its contents".into()));
    }
    let spec = &suite.model_spec;
    suite.model_spec = ModelSpec::new(spec.layer_sizes().to_vec(), spec.activation(), spec.loss())?;
    suite.validate()?;
    Ok(suite)
}

pub fn export_suite(path: &Path, suite: &TaskSuite) -> IoResult<()> {
    std::fs::write(path, suite_to_json(suite)?).map_err(file_err(path))?;
    Ok(())
}

pub fn import_suite(path: &Path) -> IoResult<TaskSuite> {
    suite_from_json(&std::fs::read_to_string(path).map_err(file_err(path))?)
}
