//! The `run` verb: enumerate (cell, realization) tasks, execute them on a
//! work-stealing pool, aggregate in key order, and persist CSV, NDJSON,
//! summary, and manifest files. Completed cells are written atomically to
//! `cells/`, so an interrupted run resumes from what finished.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use loclab::rng::realization_seed;

use crate::kinds::{run_task, summarize};
use crate::rows::{sort_rows, to_csv, to_ndjson, from_ndjson, summary_csv, ResultRow};
use crate::spec::ExperimentSpec;
use crate::{sha256_hex, CliError, OUTPUT_ROOT_ENV};

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub budget: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub cells: usize,
    pub resumed_cells: usize,
    pub computed_cells: usize,
    pub failed_cells: usize,
    pub rows: usize,
}

impl RunOutcome {
    pub fn render(&self) -> String {
        format!(
            "{}: {} cells ({} resumed, {} computed, {} failed), {} rows",
            self.out_dir.display(),
            self.cells,
            self.resumed_cells,
            self.computed_cells,
            self.failed_cells,
            self.rows
        )
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    id: &'a str,
    kind: &'a str,
    code_version: &'a str,
    spec_sha256: &'a str,
    master_seed: u64,
    realizations: u64,
    cells: u128,
    tasks: u128,
    grid: &'a BTreeMap<String, Vec<f64>>,
    constants: &'a BTreeMap<String, f64>,
    rows: usize,
    outputs: BTreeMap<String, String>,
}

/// Output directory: explicit flag, else the spec's path under the root,
/// else the experiment id under the root. The root is `$LOCLAB_OUT` or
/// `results`.
pub fn resolve_out_dir(spec: &ExperimentSpec, overrides: &RunOverrides) -> PathBuf {
    if let Some(out) = &overrides.out {
        return out.clone();
    }
    let root = std::env::var(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("results"));
    let leaf = spec.output.clone().unwrap_or_else(|| spec.id.clone());
    let leaf_path = PathBuf::from(leaf);
    if leaf_path.is_absolute() {
        leaf_path
    } else {
        root.join(leaf_path)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)
        .map_err(|e| CliError::Exec(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path)
        .map_err(|e| CliError::Exec(format!("cannot finalize {}: {e}", path.display())))
}

fn cell_file(dir: &Path, idx: usize) -> PathBuf {
    dir.join(format!("cell_{idx:05}.ndjson"))
}

pub fn run(spec_path: &Path, overrides: &RunOverrides) -> Result<RunOutcome, CliError> {
    let (mut spec, spec_bytes) = ExperimentSpec::load(spec_path)?;
    if let Some(seed) = overrides.seed {
        spec.master_seed = seed;
    }
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(CliError::Spec(problems.join("; ")));
    }
    let budget = overrides.budget.unwrap_or(spec.budget);
    if !spec.within_budget(budget) {
        return Err(CliError::Budget(format!(
            "{} cells x {} realizations = {} tasks exceeds budget {budget}",
            spec.cells(),
            spec.realizations,
            spec.tasks()
        )));
    }

    let out_dir = resolve_out_dir(&spec, overrides);
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Exec(format!("cannot create {}: {e}", out_dir.display())))?;
    let spec_hash = sha256_hex(&spec_bytes);

    let cells = spec.enumerate_cells();
    if cells.is_empty() {
        let manifest = render_manifest(&spec, &spec_hash, 0, &BTreeMap::new());
        write_atomic(&out_dir.join("manifest.json"), manifest.as_bytes())?;
        return Ok(RunOutcome {
            out_dir,
            cells: 0,
            resumed_cells: 0,
            computed_cells: 0,
            failed_cells: 0,
            rows: 0,
        });
    }

    let cells_dir = out_dir.join("cells");
    fs::create_dir_all(&cells_dir)
        .map_err(|e| CliError::Exec(format!("cannot create {}: {e}", cells_dir.display())))?;

    // Resume: a cell file is only ever written after every realization of
    // that cell succeeded, so its presence means the cell is complete.
    let mut resumed: Vec<Option<Vec<ResultRow>>> = Vec::with_capacity(cells.len());
    for idx in 0..cells.len() {
        let path = cell_file(&cells_dir, idx);
        let entry = match fs::read_to_string(&path) {
            Ok(text) => from_ndjson(&text).ok(),
            Err(_) => None,
        };
        resumed.push(entry);
    }
    let resumed_cells = resumed.iter().filter(|r| r.is_some()).count();

    // One task per (cell, realization); seeds depend only on the task
    // index, never on scheduling.
    let mut tasks: Vec<(usize, u64)> = Vec::new();
    for (idx, slot) in resumed.iter().enumerate() {
        if slot.is_none() {
            for r in 0..spec.realizations {
                tasks.push((idx, r));
            }
        }
    }

    let execute = |&(cell_idx, r): &(usize, u64)| -> (usize, u64, Result<Vec<ResultRow>, String>) {
        let cell = &cells[cell_idx];
        let resolved = spec.resolve(cell);
        let task_index = cell_idx as u64 * spec.realizations + r;
        let seed = realization_seed(spec.master_seed, task_index);
        (
            cell_idx,
            r,
            run_task(spec.kind, &spec.id, cell, &resolved, r, seed),
        )
    };
    let results: Vec<(usize, u64, Result<Vec<ResultRow>, String>)> = match overrides.workers {
        Some(n) if n > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Exec(format!("cannot build worker pool: {e}")))?;
            pool.install(|| {
                use rayon::prelude::*;
                tasks.par_iter().map(execute).collect()
            })
        }
        _ => {
            use rayon::prelude::*;
            tasks.par_iter().map(execute).collect()
        }
    };

    // Group per cell in order; a cell persists only if every task of it
    // succeeded, so failures never poison the resume state.
    let mut per_cell: Vec<Vec<ResultRow>> = vec![Vec::new(); cells.len()];
    let mut errors: Vec<String> = Vec::new();
    let mut failed = vec![false; cells.len()];
    for (cell_idx, r, outcome) in results {
        match outcome {
            Ok(rows) => per_cell[cell_idx].extend(rows),
            Err(e) => {
                errors.push(format!("cell={cell_idx} realization={r}: {e}"));
                failed[cell_idx] = true;
            }
        }
    }

    let mut all_rows: Vec<ResultRow> = Vec::new();
    let mut computed_cells = 0usize;
    for (idx, slot) in resumed.into_iter().enumerate() {
        if let Some(rows) = slot {
            all_rows.extend(rows);
        } else if !failed[idx] {
            let mut rows = std::mem::take(&mut per_cell[idx]);
            sort_rows(&mut rows);
            write_atomic(&cell_file(&cells_dir, idx), to_ndjson(&rows).as_bytes())?;
            computed_cells += 1;
            all_rows.extend(rows);
        }
    }
    let failed_cells = failed.iter().filter(|&&b| b).count();

    sort_rows(&mut all_rows);
    let grid_names: Vec<String> = spec.grid.keys().cloned().collect();
    let csv = to_csv(&all_rows, &grid_names);
    let ndjson = to_ndjson(&all_rows);
    let completed: Vec<BTreeMap<String, f64>> = cells
        .iter()
        .enumerate()
        .filter(|(i, _)| !failed[*i])
        .map(|(_, c)| c.clone())
        .collect();
    let summary = summary_csv(&summarize(&spec, &completed, &all_rows));

    write_atomic(&out_dir.join("results.csv"), csv.as_bytes())?;
    write_atomic(&out_dir.join("rows.ndjson"), ndjson.as_bytes())?;
    write_atomic(&out_dir.join("summary.csv"), summary.as_bytes())?;
    if !errors.is_empty() {
        write_atomic(
            &out_dir.join("errors.log"),
            (errors.join("\n") + "\n").as_bytes(),
        )?;
    }

    let mut outputs = BTreeMap::new();
    outputs.insert("results.csv".to_string(), sha256_hex(csv.as_bytes()));
    outputs.insert("rows.ndjson".to_string(), sha256_hex(ndjson.as_bytes()));
    outputs.insert("summary.csv".to_string(), sha256_hex(summary.as_bytes()));
    let manifest = render_manifest(&spec, &spec_hash, all_rows.len(), &outputs);
    write_atomic(&out_dir.join("manifest.json"), manifest.as_bytes())?;

    let outcome = RunOutcome {
        out_dir,
        cells: cells.len(),
        resumed_cells,
        computed_cells,
        failed_cells,
        rows: all_rows.len(),
    };
    if failed_cells > 0 {
        return Err(CliError::Exec(format!(
            "{failed_cells} cell(s) failed; see {}",
            outcome.out_dir.join("errors.log").display()
        )));
    }
    Ok(outcome)
}

fn render_manifest(
    spec: &ExperimentSpec,
    spec_hash: &str,
    rows: usize,
    outputs: &BTreeMap<String, String>,
) -> String {
    let manifest = Manifest {
        id: &spec.id,
        kind: spec.kind.name(),
        code_version: env!("CARGO_PKG_VERSION"),
        spec_sha256: spec_hash,
        master_seed: spec.master_seed,
        realizations: spec.realizations,
        cells: spec.cells(),
        tasks: spec.tasks(),
        grid: &spec.grid,
        constants: &spec.constants,
        rows,
        outputs: outputs.clone(),
    };
    serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"
}
