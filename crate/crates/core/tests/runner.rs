//! Configuration, presets, seeded runs and CSV output.

use std::fs;
use std::path::Path;

use vince_core::runner::{
    emit_metrics, load, preset, run_experiment, train_run, CsvSink, EpochRecord, ExperimentConfig, NullObserver,
    Observer, RunInfo, RunRecord, StepRecord, PRESETS, STEPS_HEADER, SUMMARY_HEADER,
};
use vince_core::{Error, OptimizerKind, Result, WitnessKind};

fn tiny() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    for kv in [
        "experiment=tiny",
        "dataset.n=200",
        "dataset.test_n=100",
        "view=uniform-noise:0.4",
        "encoder.layers=2",
        "encoder.hidden=16",
        "train.negatives=32",
        "train.batch_size=32",
        "train.steps=10",
        "eval.logistic_epochs=200",
        "seeds=0,1",
        "output.wall_clock=false",
    ] {
        c.apply_override(kv).unwrap();
    }
    c.validate().unwrap();
    c
}

fn read(path: &Path) -> csv::Reader<fs::File> {
    csv::Reader::from_path(path).unwrap()
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn parse_opt(s: &str) -> Option<f64> {
    (!s.is_empty()).then(|| s.parse().unwrap())
}

#[test]
fn empty_records_give_header_only_files() {
    let dir = tempfile::tempdir().unwrap();
    emit_metrics(&[], dir.path()).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("steps.csv")).unwrap(), format!("{STEPS_HEADER}\n"));
    assert_eq!(fs::read_to_string(dir.path().join("summary.csv")).unwrap(), format!("{SUMMARY_HEADER}\n"));
}

#[test]
fn emitted_csv_round_trips() {
    let cfg = tiny();
    let records = run_experiment(&cfg, None, &mut |_| {}).unwrap();
    assert_eq!(records.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    emit_metrics(&records, dir.path()).unwrap();

    let steps = dir.path().join("steps.csv");
    assert_eq!(header(&steps), STEPS_HEADER);
    let rows: Vec<csv::StringRecord> = read(&steps).records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 20);
    let mut i = 0;
    for r in &records {
        assert_eq!(r.steps.len(), 10);
        for s in &r.steps {
            let row = &rows[i];
            assert_eq!(&row[0], r.config_hash);
            assert_eq!(row[1].parse::<u64>().unwrap(), r.seed);
            assert_eq!(row[2].parse::<usize>().unwrap(), s.step);
            assert!((row[3].parse::<f64>().unwrap() - s.loss).abs() <= 1e-9);
            assert!((row[4].parse::<f64>().unwrap() - s.mi_estimate).abs() <= 1e-9);
            assert!((row[5].parse::<f64>().unwrap() - s.anneal_percent).abs() <= 1e-9);
            i += 1;
        }
    }

    let summary = dir.path().join("summary.csv");
    assert_eq!(header(&summary), SUMMARY_HEADER);
    let rows: Vec<csv::StringRecord> = read(&summary).records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let mut mean_csv = 0.0;
    for (row, r) in rows.iter().zip(&records) {
        let mi: f64 = row[2].parse().unwrap();
        assert!((mi - r.final_mi).abs() <= 1e-9);
        assert_eq!(parse_opt(&row[3]), r.knn_accuracy);
        assert_eq!(parse_opt(&row[4]), r.logistic_accuracy);
        mean_csv += mi / 2.0;
    }
    let mean_mem = records.iter().map(|r| r.final_mi).sum::<f64>() / 2.0;
    assert!((mean_csv - mean_mem).abs() <= 1e-9);

    // LF endings, '.' decimals, no carriage returns.
    let text = fs::read_to_string(&summary).unwrap();
    assert!(!text.contains('\r'));
}

#[test]
fn replay_is_byte_identical() {
    let cfg = tiny();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Some(a.path()), &mut |_| {}).unwrap();
    run_experiment(&cfg, Some(b.path()), &mut |_| {}).unwrap();
    for f in ["summary.csv", "steps.csv", "epochs.csv", "variants.csv", "config.txt"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let hash = cfg.config_hash();
    let repr = a.path().join(format!("repr_{hash}_s0.csv"));
    assert_eq!(fs::read(&repr).unwrap(), fs::read(b.path().join(format!("repr_{hash}_s0.csv"))).unwrap());
    assert!(header(&repr).starts_with("split,index,label,z0,z1"));
}

#[test]
fn seeds_give_different_runs_and_steps_are_monotone() {
    let records = run_experiment(&tiny(), None, &mut |_| {}).unwrap();
    assert_ne!(records[0].final_mi, records[1].final_mi);
    for r in &records {
        assert!(r.steps.windows(2).all(|w| w[1].step > w[0].step));
    }
}

#[test]
fn zero_steps_leave_an_empty_loss_log() {
    let mut cfg = tiny();
    cfg.apply_override("train.steps=0").unwrap();
    cfg.apply_override("train.epochs=0").unwrap();
    cfg.apply_override("seeds=0").unwrap();
    let r = train_run(&cfg, "base", 0, &mut NullObserver).unwrap();
    assert!(r.steps.is_empty());
    let knn = r.knn_accuracy.unwrap();
    assert!((0.0..=1.0).contains(&knn));
}

struct FailAfter {
    sink: CsvSink,
    left: usize,
}

impl Observer for FailAfter {
    fn step(&mut self, run: &RunInfo, record: &StepRecord) -> Result<()> {
        if self.left == 0 {
            return Err(Error::State("interrupted".into()));
        }
        self.left -= 1;
        self.sink.step(run, record)
    }

    fn epoch(&mut self, run: &RunInfo, record: &EpochRecord) -> Result<()> {
        self.sink.epoch(run, record)
    }
}

#[test]
fn interrupted_run_leaves_parseable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut obs = FailAfter {
        sink: CsvSink::create(dir.path()).unwrap(),
        left: 4,
    };
    assert!(train_run(&tiny(), "base", 0, &mut obs).is_err());
    drop(obs);
    let rows: Vec<csv::StringRecord> = read(&dir.path().join("steps.csv")).records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let summary: Vec<csv::StringRecord> =
        read(&dir.path().join("summary.csv")).records().map(|r| r.unwrap()).collect();
    assert!(summary.is_empty());
}

#[test]
fn config_text_round_trips_for_every_preset() {
    for (name, _) in PRESETS {
        let c = preset(name).unwrap();
        let text = c.to_text();
        let back = ExperimentConfig::from_text(&text).unwrap();
        assert_eq!(back, c, "{name}");
        assert_eq!(back.to_text(), text, "{name}");
        c.validate().unwrap();
        for (label, eff) in c.expand().unwrap() {
            eff.validate().unwrap_or_else(|e| panic!("{name}/{label}: {e}"));
        }
    }
}

#[test]
fn config_errors_are_config_errors() {
    let is_config = |r: Result<ExperimentConfig>| matches!(r, Err(Error::Config(_)));
    assert!(is_config(ExperimentConfig::from_text("no.such.key = 1")));
    assert!(is_config(ExperimentConfig::from_text("dataset.n = many")));
    assert!(is_config(ExperimentConfig::from_text("dataset.n = 5\ndataset.n = 6")));
    assert!(is_config(ExperimentConfig::from_text("just words")));
    assert!(is_config(preset("nope")));
    let mut c = ExperimentConfig::default();
    c.apply_override("objective.omega=-1").ok();
    assert!(c.validate().is_err());
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let c = ExperimentConfig::from_text("# header\n\ndataset.n = 300  # trailing\n").unwrap();
    assert_eq!(c.dataset.n, 300);
}

#[test]
fn hash_ignores_seeds_and_output() {
    let a = tiny();
    let mut b = a.clone();
    b.apply_override("seeds=5,6,7").unwrap();
    b.apply_override("output.dir=elsewhere").unwrap();
    assert_eq!(a.config_hash(), b.config_hash());
    b.apply_override("train.negatives=31").unwrap();
    assert_ne!(a.config_hash(), b.config_hash());
}

#[test]
fn overriding_one_field_keeps_the_rest() {
    let base = preset("spiral-sweep").unwrap();
    let mut c = base.clone();
    c.apply_override("train.negatives=512").unwrap();
    assert_eq!(c.train.negatives, 512);
    c.train.negatives = base.train.negatives;
    assert_eq!(c, base);
}

#[test]
fn config_file_can_start_from_a_preset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.txt");
    fs::write(&path, "preset = gaussian-mi\ntrain.epochs = 3\n").unwrap();
    let c = load(path.to_str().unwrap()).unwrap();
    let mut expected = preset("gaussian-mi").unwrap();
    expected.train.epochs = 3;
    assert_eq!(c, expected);
}

/// Every preset default against its quoted training-detail value.
#[test]
fn preset_fidelity_table() {
    let g = preset("gaussian-mi").unwrap();
    let table: &[(&str, f64, f64)] = &[
        ("encoder layers (5-layer MLPs)", g.encoder.layers as f64, 5.0),
        ("encoder hidden (10 hidden dimensions)", g.encoder.hidden as f64, 10.0),
        ("learning rate (0.03)", g.optimizer.learning_rate, 0.03),
        ("batch size (128)", g.train.batch_size as f64, 128.0),
        ("weight decay (no weight decay)", g.optimizer.weight_decay, 0.0),
        ("epochs (100 epochs)", g.train.epochs as f64, 100.0),
        ("points (2000 points)", g.dataset.n as f64, 2000.0),
        ("negatives (100 negatives)", g.train.negatives as f64, 100.0),
        ("seeds (5 different random seeds)", g.seeds.len() as f64, 5.0),
        ("Σ_Z off-diagonal (−0.5)", g.dataset.gaussian.sigma_z[0][1], -0.5),
        ("Σ_ε off-diagonal (0.9)", g.dataset.gaussian.sigma_eps[0][1], 0.9),
    ];
    for (what, got, want) in table {
        assert_eq!(got, want, "gaussian-mi {what}");
    }
    assert_eq!(g.optimizer.kind, OptimizerKind::Adam);
    let labels: Vec<&str> = g.variants.iter().map(|v| v.label.as_str()).collect();
    assert_eq!(labels, ["infonce", "vince-90", "vince-75", "vince-50", "vince-25", "vince-10", "vince-5"]);

    for name in ["spiral-sweep", "alpha-sweep", "stability-compare"] {
        let s = preset(name).unwrap();
        let table: &[(&str, f64, f64)] = &[
            ("points (10k points)", s.dataset.n as f64, 10000.0),
            ("layers (5-layer MLP)", s.encoder.layers as f64, 5.0),
            ("hidden (128 hidden units)", s.encoder.hidden as f64, 128.0),
            ("output (2-D)", s.encoder.output as f64, 2.0),
            ("negatives (4096 negative samples)", s.train.negatives as f64, 4096.0),
            ("momentum (0.9)", s.optimizer.momentum, 0.9),
            ("weight decay (1e-5)", s.optimizer.weight_decay, 1e-5),
            ("batch size (128)", s.train.batch_size as f64, 128.0),
            ("learning rate (0.03)", s.optimizer.learning_rate, 0.03),
            ("iterations (10k)", s.train.steps as f64, 10000.0),
            ("bank α (0.5)", s.bank_alpha, 0.5),
            ("temperature (0.07)", s.objective.omega, 0.07),
        ];
        for (what, got, want) in table {
            assert_eq!(got, want, "{name} {what}");
        }
        assert_eq!(s.optimizer.kind, OptimizerKind::SgdMomentum);
        assert!(s.encoder.normalize);
        assert_eq!(s.witness, WitnessKind::ScaledDot);
    }
    let etas: Vec<String> = preset("spiral-sweep").unwrap().expand().unwrap().iter().map(|(_, c)| c.view.to_string()).collect();
    assert_eq!(
        etas,
        ["0", "0.1", "0.2", "0.4", "1", "2", "5"].map(|e| format!("uniform-noise:{e}"))
    );
    let alphas: Vec<f64> = preset("alpha-sweep").unwrap().expand().unwrap().iter().map(|(_, c)| c.bank_alpha).collect();
    assert_eq!(alphas, [0.0, 0.25, 0.5, 0.9, 0.99]);
    let stab: Vec<String> = preset("stability-compare")
        .unwrap()
        .expand()
        .unwrap()
        .iter()
        .map(|(_, c)| c.objective.family.to_string())
        .collect();
    assert_eq!(stab, ["ir-softmax", "ir-nce"]);
}

#[test]
fn records_carry_true_mi_on_gaussian_runs() {
    let mut c = preset("gaussian-mi").unwrap();
    for kv in ["dataset.n=256", "dataset.test_n=256", "train.epochs=1", "seeds=0"] {
        c.apply_override(kv).unwrap();
    }
    c.variants.truncate(1);
    let records: Vec<RunRecord> = run_experiment(&c, None, &mut |_| {}).unwrap();
    let r = &records[0];
    assert!((r.true_mi.unwrap() - 0.020411).abs() < 1e-6);
    assert!(r.knn_accuracy.is_none());
    assert!(r.final_mi <= (c.train.negatives as f64 + 1.0).ln());
}
