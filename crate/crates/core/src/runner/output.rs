use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::train::{train_run, EpochRecord, Observer, RunInfo, RunRecord, StepRecord};
use crate::error::{Error, Result};

pub const STEPS_HEADER: &str = "config_hash,seed,step,loss,mi_estimate,anneal_percent";
pub const SUMMARY_HEADER: &str = "config_hash,seed,final_mi,knn_acc,logistic_acc,wall_seconds";
pub const EPOCHS_HEADER: &str = "config_hash,seed,epoch,knn_acc,logistic_acc";
pub const VARIANTS_HEADER: &str = "config_hash,experiment,variant,true_mi,overrides";
pub const REPR_HEADER_PREFIX: &str = "split,index,label";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn step_row(hash: &str, seed: u64, s: &StepRecord) -> String {
    format!("{hash},{seed},{},{},{},{}\n", s.step, s.loss, s.mi_estimate, s.anneal_percent)
}

pub fn summary_row(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        r.config_hash,
        r.seed,
        r.final_mi,
        opt(r.knn_accuracy),
        opt(r.logistic_accuracy),
        r.wall_seconds
    )
}

pub fn epoch_row(hash: &str, seed: u64, e: &EpochRecord) -> String {
    format!("{hash},{seed},{},{},{}\n", e.epoch, opt(e.knn_accuracy), opt(e.logistic_accuracy))
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Append-only CSV file that writes every row straight to disk.
pub struct CsvFile {
    path: PathBuf,
    file: File,
}

impl CsvFile {
    /// Creates (truncating) `path` and writes `header`.
    pub fn create(path: &Path, header: &str) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(format!("{header}\n").as_bytes()).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Opens `path` for appending, writing `header` only if the file is new or empty.
    pub fn append(path: &Path, header: &str) -> Result<Self> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if fresh {
            file.write_all(format!("{header}\n").as_bytes()).map_err(|e| Error::io(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn write_row(&mut self, row: &str) -> Result<()> {
        self.file.write_all(row.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Streams step and epoch records of a running experiment to disk.
pub struct CsvSink {
    steps: CsvFile,
    epochs: CsvFile,
    summary: CsvFile,
}

impl CsvSink {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            steps: CsvFile::create(&dir.join("steps.csv"), STEPS_HEADER)?,
            epochs: CsvFile::create(&dir.join("epochs.csv"), EPOCHS_HEADER)?,
            summary: CsvFile::create(&dir.join("summary.csv"), SUMMARY_HEADER)?,
        })
    }

    pub fn finish_run(&mut self, record: &RunRecord) -> Result<()> {
        self.summary.write_row(&summary_row(record))
    }
}

impl Observer for CsvSink {
    fn step(&mut self, run: &RunInfo, record: &StepRecord) -> Result<()> {
        self.steps.write_row(&step_row(&run.config_hash, run.seed, record))
    }

    fn epoch(&mut self, run: &RunInfo, record: &EpochRecord) -> Result<()> {
        self.epochs.write_row(&epoch_row(&run.config_hash, run.seed, record))
    }
}

/// Writes `steps.csv` and `summary.csv` for already-finished records.
pub fn emit_metrics(records: &[RunRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut steps = CsvFile::create(&dir.join("steps.csv"), STEPS_HEADER)?;
    let mut summary = CsvFile::create(&dir.join("summary.csv"), SUMMARY_HEADER)?;
    for r in records {
        for s in &r.steps {
            steps.write_row(&step_row(&r.config_hash, r.seed, s))?;
        }
        summary.write_row(&summary_row(r))?;
    }
    Ok(())
}

/// Writes the frozen train and test embeddings of one run.
pub fn write_representations(record: &RunRecord, path: &Path) -> Result<()> {
    let Some(reps) = &record.representations else {
        return Ok(());
    };
    let dim = reps.train.cols();
    let header = std::iter::once(REPR_HEADER_PREFIX.to_string())
        .chain((0..dim).map(|c| format!("z{c}")))
        .collect::<Vec<_>>()
        .join(",");
    let mut f = CsvFile::create(path, &header)?;
    for (split, t, labels) in [("train", &reps.train, &reps.train_labels), ("test", &reps.test, &reps.test_labels)] {
        for i in 0..t.rows() {
            let coords = t.row(i).iter().map(f64::to_string).collect::<Vec<_>>().join(",");
            f.write_row(&format!("{split},{i},{},{coords}\n", labels[i]))?;
        }
    }
    Ok(())
}

/// Runs every variant and seed of `config`, streaming CSV output into `dir` when given.
///
/// `progress` receives one line per finished run.
pub fn run_experiment(
    config: &ExperimentConfig,
    dir: Option<&Path>,
    progress: &mut dyn FnMut(&RunRecord),
) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let runs = config.expand()?;
    let mut sink = match dir {
        Some(d) => {
            let sink = CsvSink::create(d)?;
            fs::write(d.join("config.txt"), config.to_text()).map_err(|e| Error::io(d.join("config.txt"), e))?;
            let mut variants = CsvFile::create(&d.join("variants.csv"), VARIANTS_HEADER)?;
            for (label, eff) in &runs {
                let overrides = config
                    .variants
                    .iter()
                    .find(|v| &v.label == label)
                    .map(|v| v.describe())
                    .unwrap_or_default();
                let true_mi = match eff.dataset.kind {
                    super::config::DatasetKind::Gaussian => crate::data::analytic_gaussian_mi(&eff.dataset.gaussian)?.to_string(),
                    _ => String::new(),
                };
                variants.write_row(&format!(
                    "{},{},{},{},{}\n",
                    eff.config_hash(),
                    quote(&eff.name),
                    quote(label),
                    true_mi,
                    quote(&overrides)
                ))?;
            }
            Some(sink)
        }
        None => None,
    };
    let mut records = Vec::new();
    for (label, eff) in &runs {
        for &seed in &config.seeds {
            let record = match sink.as_mut() {
                Some(s) => train_run(eff, label, seed, s)?,
                None => train_run(eff, label, seed, &mut super::train::NullObserver)?,
            };
            if let (Some(s), Some(d)) = (sink.as_mut(), dir) {
                s.finish_run(&record)?;
                if eff.output.representations {
                    write_representations(&record, &d.join(format!("repr_{}_s{}.csv", record.config_hash, seed)))?;
                }
            }
            progress(&record);
            records.push(record);
        }
    }
    Ok(records)
}
