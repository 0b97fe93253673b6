//! Files written by a run: legacy ASCII VTK fields, the per-iteration CSV
//! log and a plain-text summary.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::driver::{IterationRecord, Optimizer, RunObserver, RunTotals};
use crate::error::{Error, Result};
use crate::grid::StructuredGrid;

pub const CSV_HEADER: &str =
    "iter,objective,constraint,w_fwd,w_adj,kind_fwd,kind_adj,cg_fwd,cg_adj,matvecs,basis_fwd,basis_adj,walltime_s";

/// Writes cell fields as `STRUCTURED_POINTS` with 17 significant digits.
pub fn write_fields(path: &Path, grid: &StructuredGrid, fields: &[(&str, &[f64])]) -> Result<()> {
    let text = render_vtk(grid, fields)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_field(path: &Path, grid: &StructuredGrid, name: &str, values: &[f64]) -> Result<()> {
    write_fields(path, grid, &[(name, values)])
}

pub fn render_vtk(grid: &StructuredGrid, fields: &[(&str, &[f64])]) -> Result<String> {
    let n = grid.num_cells();
    let mut dims = [1usize; 3];
    let mut spacing = [1.0f64; 3];
    for a in 0..grid.ndim() {
        dims[a] = grid.dims()[a];
        spacing[a] = grid.spacing()[a];
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("tomor cell data\nASCII\nDATASET STRUCTURED_POINTS\n");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", dims[0] + 1, dims[1] + 1, dims[2] + 1);
    s.push_str("ORIGIN 0 0 0\n");
    let _ = writeln!(s, "SPACING {:.16e} {:.16e} {:.16e}", spacing[0], spacing[1], spacing[2]);
    let _ = writeln!(s, "CELL_DATA {n}");
    for (name, values) in fields {
        if values.len() != n {
            return Err(Error::Usage(format!(
                "field '{name}' has {} values for {n} cells",
                values.len()
            )));
        }
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Usage(format!("field name '{name}' must be a non-empty word")));
        }
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in *values {
            let _ = writeln!(s, "{v:.16e}");
        }
    }
    Ok(s)
}

/// Cell fields of a file written by [`write_fields`], in file order.
pub fn read_vtk_fields(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vtk_fields(&text)
}

pub fn parse_vtk_fields(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let bad = |m: &str| Error::Usage(format!("malformed VTK: {m}"));
    let mut lines = text.lines();
    let mut n = None;
    for line in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("CELL_DATA ") {
            n = Some(rest.trim().parse::<usize>().map_err(|_| bad("CELL_DATA count"))?);
            break;
        }
    }
    let n = n.ok_or_else(|| bad("no CELL_DATA section"))?;
    let mut out = Vec::new();
    while let Some(line) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        if words.next() != Some("SCALARS") {
            return Err(bad(&format!("unexpected line '{line}'")));
        }
        let name = words.next().ok_or_else(|| bad("SCALARS without name"))?.to_string();
        if lines.next().map(str::trim) != Some("LOOKUP_TABLE default") {
            return Err(bad("missing LOOKUP_TABLE"));
        }
        let values = lines
            .by_ref()
            .take(n)
            .map(|l| l.trim().parse::<f64>().map_err(|_| bad(&format!("value '{l}'"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != n {
            return Err(bad(&format!("field '{name}' is truncated")));
        }
        out.push((name, values));
    }
    Ok(out)
}

/// Appends one CSV row per iteration, writing the header on creation.
pub struct CsvLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvLog {
    /// Truncates any existing file.
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = Self {
            out: BufWriter::new(file),
            path,
        };
        log.write_line(CSV_HEADER)?;
        Ok(log)
    }

    /// Continues an existing log; writes the header only if the file is new
    /// or empty.
    pub fn append_to(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let empty = file.metadata().map_err(|e| Error::io(&path, e))?.len() == 0;
        let mut log = Self {
            out: BufWriter::new(file),
            path,
        };
        if empty {
            log.write_line(CSV_HEADER)?;
        }
        Ok(log)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, rec: &IterationRecord) -> Result<()> {
        let line = csv_row(rec);
        self.write_line(&line)
    }

    fn write_line(&mut self, line: &str) -> Result<()> {
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn csv_row(rec: &IterationRecord) -> String {
    let (f, a) = (&rec.forward, &rec.adjoint);
    format!(
        "{},{:.16e},{:.16e},{:.6e},{:.6e},{},{},{},{},{},{},{},{:.6}",
        rec.iteration,
        rec.objective,
        rec.constraint,
        f.measure,
        a.measure,
        f.kind,
        a.kind,
        f.cg_iterations,
        a.cg_iterations,
        rec.matvecs(),
        f.basis_size,
        a.basis_size,
        rec.walltime.as_secs_f64()
    )
}

/// Plain-text run summary.
pub fn summary_text(label: &str, history: &[IterationRecord], final_volume: f64) -> String {
    let t = RunTotals::from_history(history);
    let mut s = String::new();
    let _ = writeln!(s, "strategy            {label}");
    let _ = writeln!(s, "iterations          {}", t.iterations);
    if let Some(last) = history.last() {
        let _ = writeln!(s, "final objective     {:.10e}", last.objective);
        let _ = writeln!(s, "final constraint    {:.6e}", last.constraint);
    }
    let _ = writeln!(s, "final volume        {final_volume:.6}");
    let _ = writeln!(s, "solver walltime (s) {:.3}", t.walltime.as_secs_f64());
    let _ = writeln!(s, "  fom_full          {:.3}", t.time_fom_full.as_secs_f64());
    let _ = writeln!(s, "  fom_oneshot       {:.3}", t.time_fom_oneshot.as_secs_f64());
    let _ = writeln!(s, "  mor               {:.3}", t.time_mor.as_secs_f64());
    let _ = writeln!(s, "cg iterations       {}", t.cg_iterations);
    let _ = writeln!(s, "matvecs             {}", t.matvecs);
    let _ = writeln!(s, "forward reductions  {}", t.forward_reductions);
    let _ = writeln!(s, "adjoint reductions  {}", t.adjoint_reductions);
    s
}

/// Writes the CSV log and periodic checkpoints into a directory.
pub struct RunFiles {
    dir: PathBuf,
    log: CsvLog,
    checkpoint_interval: usize,
}

impl RunFiles {
    pub fn create(dir: impl Into<PathBuf>, checkpoint_interval: usize) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let log = CsvLog::create(dir.join("history.csv"))?;
        Ok(Self {
            dir,
            log,
            checkpoint_interval,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl RunObserver for RunFiles {
    fn on_iteration(&mut self, record: &IterationRecord, opt: &Optimizer) -> Result<()> {
        self.log.append(record)?;
        if self.checkpoint_interval > 0 && record.iteration % self.checkpoint_interval == 0 {
            if let Some(state) = opt.last_state() {
                let path = self.dir.join(format!("checkpoint_{:05}.vtk", record.iteration));
                write_fields(
                    &path,
                    &opt.problem().grid,
                    &[
                        ("density", &state.rho_filtered),
                        ("temperature", &state.temperature),
                    ],
                )?;
            }
        }
        Ok(())
    }
}
