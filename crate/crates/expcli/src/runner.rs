//! Resumable execution of cells on a bounded worker pool.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::{CellOutcome, CellSpec};
use crate::error::{CliError, Result};

#[derive(Serialize, Deserialize)]
struct StoredCell {
    spec: CellSpec,
    outcome: CellOutcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunStats {
    pub computed: usize,
    pub reused: usize,
}

pub struct Runner {
    out: PathBuf,
    threads: usize,
    pub verbose: bool,
}

impl Runner {
    /// `threads = 0` uses one worker per available core.
    pub fn new(out: impl Into<PathBuf>, threads: usize) -> Self {
        Self {
            out: out.into(),
            threads,
            verbose: false,
        }
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn cell_dir(&self) -> PathBuf {
        self.out.join("cells")
    }

    fn cell_path(&self, spec: &CellSpec) -> PathBuf {
        self.cell_dir().join(format!("{}.json", spec.key()))
    }

    fn load(&self, spec: &CellSpec) -> Option<CellOutcome> {
        let text = std::fs::read_to_string(self.cell_path(spec)).ok()?;
        let stored: StoredCell = serde_json::from_str(&text).ok()?;
        (stored.spec == *spec).then_some(stored.outcome)
    }

    fn store(&self, spec: &CellSpec, outcome: &CellOutcome) -> Result<()> {
        let stored = StoredCell {
            spec: spec.clone(),
            outcome: outcome.clone(),
        };
        write_atomic(&self.cell_path(spec), serde_json::to_string(&stored)?.as_bytes())
    }

    /// Outcomes in the order of `specs`. Cells with a stored result for the
    /// identical spec are not recomputed.
    pub fn run(&self, specs: &[CellSpec]) -> Result<(Vec<CellOutcome>, RunStats)> {
        let dir = self.cell_dir();
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| CliError::Pool(e.to_string()))?;
        let reused = AtomicUsize::new(0);
        let done = AtomicUsize::new(0);
        let total = specs.len();
        let outcomes = pool.install(|| {
            specs
                .par_iter()
                .map(|spec| {
                    let outcome = match self.load(spec) {
                        Some(o) => {
                            reused.fetch_add(1, Ordering::Relaxed);
                            o
                        }
                        None => {
                            let start = std::time::Instant::now();
                            let o = spec.run()?;
                            self.store(spec, &o)?;
                            if self.verbose {
                                let k = done.load(Ordering::Relaxed) + 1;
                                eprintln!("[{k}/{total}] {} ({:.1}s)", spec.label(), start.elapsed().as_secs_f64());
                            }
                            o
                        }
                    };
                    done.fetch_add(1, Ordering::Relaxed);
                    Ok(outcome)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let reused = reused.into_inner();
        Ok((
            outcomes,
            RunStats {
                computed: total - reused,
                reused,
            },
        ))
    }
}

/// Writes to a temporary file in the target directory, then renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}
