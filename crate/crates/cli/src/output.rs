//! Result files written by the subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mcad::eval::{ci95, AucSummary, BenchmarkReport, CellFailure, RunRow};
use mcad::multiclass::{Algorithm, DetectorLog};
use mcad::Error;
use serde::Serialize;

pub fn join_ids(ids: &[usize]) -> String {
    ids.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Format {
        path: path.to_path_buf(),
        field: "csv".into(),
        detail: e.to_string(),
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// `results.csv`, flushed after every row so partial runs leave complete rows behind.
pub struct ResultsCsv {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl ResultsCsv {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
        writer
            .write_record(["algorithm", "normal_classes", "seed", "auc", "runtime_s"])
            .map_err(csv_err(path))?;
        writer.flush().map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, row: &RunRow) -> Result<(), Error> {
        let path = &self.path;
        self.writer
            .write_record([
                row.algorithm.name().to_string(),
                join_ids(&row.combination),
                row.seed.to_string(),
                row.auc.to_string(),
                format!("{:.6}", row.runtime_s),
            ])
            .map_err(csv_err(path))?;
        self.writer.flush().map_err(io_err(path))
    }
}

#[derive(Serialize)]
struct Stats {
    per_run: Vec<f64>,
    mean: f64,
    ci95: f64,
}

#[derive(Serialize)]
struct CombinationGroup {
    index: usize,
    normal_classes: Vec<usize>,
    algorithms: BTreeMap<&'static str, Stats>,
}

#[derive(Serialize)]
struct Extreme {
    normal_classes: Vec<usize>,
    mean: f64,
    ci95: f64,
}

impl From<&AucSummary> for Extreme {
    fn from(s: &AucSummary) -> Self {
        Self {
            normal_classes: s.combination.clone(),
            mean: s.mean,
            ci95: s.ci95,
        }
    }
}

#[derive(Serialize)]
struct Range {
    min: Extreme,
    max: Extreme,
}

#[derive(Serialize)]
struct ResultsDocument<'a> {
    combinations: Vec<CombinationGroup>,
    /// Lowest- and highest-mean combination per algorithm.
    ranges: BTreeMap<&'static str, Range>,
    failed_cells: &'a [CellFailure],
}

/// AUCs per algorithm for one combination, keyed by combination index.
type Groups = BTreeMap<usize, (Vec<usize>, BTreeMap<Algorithm, Vec<f64>>)>;

pub fn write_results_json(path: &Path, report: &BenchmarkReport) -> Result<(), Error> {
    let mut groups: Groups = BTreeMap::new();
    for r in &report.rows {
        groups
            .entry(r.combination_index)
            .or_insert_with(|| (r.combination.clone(), BTreeMap::new()))
            .1
            .entry(r.algorithm)
            .or_default()
            .push(r.auc);
    }
    let mut combinations = Vec::with_capacity(groups.len());
    for (index, (normal_classes, per_alg)) in groups {
        let mut algorithms = BTreeMap::new();
        for (alg, per_run) in per_alg {
            let (mean, ci95) = ci95(&per_run)?;
            algorithms.insert(alg.name(), Stats { per_run, mean, ci95 });
        }
        combinations.push(CombinationGroup {
            index,
            normal_classes,
            algorithms,
        });
    }
    let ranges = report
        .ranges()
        .iter()
        .map(|r| {
            (
                r.algorithm.name(),
                Range {
                    min: (&r.min).into(),
                    max: (&r.max).into(),
                },
            )
        })
        .collect();
    let doc = ResultsDocument {
        combinations,
        ranges,
        failed_cells: &report.failures,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

/// Whitespace-separated `combination_index auc algorithm` lines.
pub fn write_scatter(path: &Path, report: &BenchmarkReport) -> Result<(), Error> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# combination_index auc algorithm").map_err(io_err(path))?;
    for r in &report.rows {
        writeln!(w, "{} {} {}", r.combination_index, r.auc, r.algorithm).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// `training_log.csv`: one row per detector, phase and epoch.
pub struct TrainingLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl TrainingLog {
    pub fn create(path: &Path) -> Result<Self, Error> {
        let mut writer = csv::Writer::from_path(path).map_err(csv_err(path))?;
        writer
            .write_record(["algorithm", "detector", "phase", "epoch", "loss"])
            .map_err(csv_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, algorithm: Algorithm, logs: &[DetectorLog]) -> Result<(), Error> {
        let path = &self.path;
        for log in logs {
            for (phase, losses) in [("pretrain", &log.pretrain), ("finetune", &log.finetune)] {
                for (epoch, loss) in losses.iter().enumerate() {
                    self.writer
                        .write_record([
                            algorithm.name().to_string(),
                            log.modeled.to_string(),
                            phase.to_string(),
                            (epoch + 1).to_string(),
                            loss.to_string(),
                        ])
                        .map_err(csv_err(path))?;
                }
            }
        }
        self.writer.flush().map_err(io_err(path))
    }
}
