//! Report writers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use weaknull::diagnostics::DiagnosticsSeries;
use weaknull::geometry::RadialChart;
use weaknull::grid::GridField;

use crate::config::{Format, OutputSpec};

pub struct Writer {
    pub dir: PathBuf,
    pub json: bool,
    pub csv: bool,
}

impl Writer {
    pub fn new(spec: &OutputSpec, override_dir: Option<&Path>) -> Result<Self> {
        let dir = override_dir.map(Path::to_path_buf).unwrap_or_else(|| spec.directory.clone());
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, json: spec.formats.contains(&Format::Json), csv: spec.formats.contains(&Format::Csv) })
    }

    /// Writes `name` as pretty JSON; the report is always written, whatever `formats` says,
    /// because it carries the verdicts.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn csv_file(&self, rel: &str) -> Result<csv::Writer<fs::File>> {
        let path = self.dir.join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))
    }

    pub fn series(&self, series: &DiagnosticsSeries) -> Result<()> {
        if !self.csv {
            return Ok(());
        }
        let mut w = self.csv_file("diagnostics.csv")?;
        for r in &series.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One CSV per snapshot (`rho`, then `V{c}_{K}`) and a JSON manifest.
    pub fn snapshots(&self, history: &[GridField], chart: &RadialChart) -> Result<()> {
        #[derive(Serialize)]
        struct Entry {
            index: usize,
            t: f64,
            file: String,
        }
        let mut manifest = Vec::with_capacity(history.len());
        for (i, g) in history.iter().enumerate() {
            let file = format!("snapshots/snapshot_{i:05}.csv");
            if self.csv {
                let mut w = self.csv_file(&file)?;
                let mut header = vec!["rho".to_string()];
                for k in 0..g.n_fields {
                    for c in 0..5 {
                        header.push(format!("V{c}_{k}"));
                    }
                }
                w.write_record(&header)?;
                for j in 0..g.n_rho {
                    let mut row = vec![chart.node(g.n_rho, j).to_string()];
                    for k in 0..g.n_fields {
                        for c in 0..5 {
                            row.push(g.get(j, k, c).to_string());
                        }
                    }
                    w.write_record(&row)?;
                }
                w.flush()?;
            }
            manifest.push(Entry { index: i, t: g.t, file });
        }
        if self.json || self.csv {
            self.json("snapshots.json", &manifest)?;
        }
        Ok(())
    }
}
