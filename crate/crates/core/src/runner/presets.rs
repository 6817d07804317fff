use super::config::{DatasetKind, ExperimentConfig, Granularity, Variant};
use crate::error::{Error, Result};
use crate::estimators::WitnessKind;
use crate::ndmath::OptimizerConfig;

pub const PRESETS: [(&str, &str); 6] = [
    ("gaussian-mi", "InfoNCE vs VINCE at shrinking ball restrictions on correlated Gaussians"),
    ("spiral-sweep", "two-spiral transfer accuracy across view-noise levels"),
    ("alpha-sweep", "two-spiral kNN accuracy across memory-bank momentum"),
    ("stability-compare", "sampled-softmax IR against IR with a true logsumexp"),
    ("witness-ablation", "witness families and temperatures on the two-spiral task"),
    ("cifar-style-toy", "the objective catalog on labeled blobs"),
];

/// Ball restrictions swept by the Gaussian preset; 100 is plain InfoNCE.
pub const GAUSSIAN_PERCENTS: [u32; 7] = [100, 90, 75, 50, 25, 10, 5];

pub const SPIRAL_ETAS: [&str; 7] = ["0", "0.1", "0.2", "0.4", "1", "2", "5"];

pub const ALPHAS: [&str; 5] = ["0", "0.25", "0.5", "0.9", "0.99"];

fn gaussian_mi() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        name: "gaussian-mi".into(),
        ..ExperimentConfig::default()
    };
    c.dataset.kind = DatasetKind::Gaussian;
    c.dataset.n = 2000;
    // Fresh pairs for the reported estimate; 2000 leave a standard error near 0.005.
    c.dataset.test_n = 20000;
    c.encoder.layers = 5;
    c.encoder.hidden = 10;
    c.encoder.output = 10;
    c.encoder.normalize = true;
    c.witness = WitnessKind::ScaledDot;
    c.objective.omega = 0.07;
    c.optimizer = OptimizerConfig::adam(0.03);
    c.train.negatives = 100;
    c.train.batch_size = 128;
    c.train.epochs = 100;
    c.seeds = (0..5).collect();
    c.output.representations = false;
    c.variants.push(Variant::new("infonce", &[]));
    for p in &GAUSSIAN_PERCENTS[1..] {
        let p = p.to_string();
        c.variants.push(Variant::new(
            &format!("vince-{p}"),
            &[("eval.restrict_percent", &p)],
        ));
    }
    c
}

/// Shared two-spiral setup: 5-layer MLP, 128 hidden units, 2-D normalized output,
/// 4096 marginal negatives, SGD with momentum, 10k iterations, α = 0.5, ω = 0.07.
fn spirals(name: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        name: name.into(),
        ..ExperimentConfig::default()
    };
    c.dataset.kind = DatasetKind::Spirals;
    c.dataset.n = 10000;
    c.dataset.test_n = 2000;
    c.encoder.layers = 5;
    c.encoder.hidden = 128;
    c.encoder.output = 2;
    c.encoder.normalize = true;
    c.witness = WitnessKind::ScaledDot;
    c.objective.omega = 0.07;
    c.bank_alpha = 0.5;
    c.optimizer = OptimizerConfig::sgd(0.03, 0.9, 1e-5);
    c.train.negatives = 4096;
    c.train.batch_size = 128;
    c.train.steps = 10000;
    c.seeds = vec![0, 1, 2];
    c.view = "uniform-noise:0.4".parse().expect("valid view");
    c
}

fn spiral_sweep() -> ExperimentConfig {
    let mut c = spirals("spiral-sweep");
    for eta in SPIRAL_ETAS {
        let view = format!("uniform-noise:{eta}");
        c.variants.push(Variant::new(&format!("eta-{eta}"), &[("view", &view)]));
    }
    c
}

fn alpha_sweep() -> ExperimentConfig {
    let mut c = spirals("alpha-sweep");
    for a in ALPHAS {
        c.variants.push(Variant::new(&format!("alpha-{a}"), &[("bank.alpha", a)]));
    }
    c
}

fn stability_compare() -> ExperimentConfig {
    let mut c = spirals("stability-compare");
    c.variants.push(Variant::new(
        "ir-softmax",
        &[("objective.family", "ir-softmax"), ("objective.legacy", "true")],
    ));
    c.variants.push(Variant::new("ir-nce", &[]));
    c
}

fn witness_ablation() -> ExperimentConfig {
    let mut c = spirals("witness-ablation");
    // Learned witnesses score every (anchor, candidate) pair, so this runs at a smaller scale.
    c.dataset.n = 2000;
    c.dataset.test_n = 1000;
    c.train.negatives = 256;
    c.train.steps = 2000;
    c.output.representations = false;
    for kind in ["dot", "scaled-dot", "bilinear", "concat-linear", "concat-mlp-1", "concat-mlp-2"] {
        c.variants.push(Variant::new(kind, &[("witness.kind", kind)]));
    }
    for omega in ["0.01", "0.2", "0.5"] {
        c.variants.push(Variant::new(&format!("omega-{omega}"), &[("objective.omega", omega)]));
    }
    c
}

fn cifar_style_toy() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        name: "cifar-style-toy".into(),
        ..ExperimentConfig::default()
    };
    c.dataset.kind = DatasetKind::Blobs;
    c.dataset.n = 2000;
    c.dataset.test_n = 1000;
    c.dataset.blob_centers = 10;
    c.dataset.blob_dim = 8;
    c.dataset.blob_spread = 1.0;
    c.dataset.blob_half_width = 2.0;
    c.view = "uniform-noise:0.5".parse().expect("valid view");
    c.encoder.layers = 3;
    c.encoder.hidden = 64;
    c.encoder.output = 8;
    c.witness = WitnessKind::ScaledDot;
    c.objective.omega = 0.07;
    c.bank_alpha = 0.5;
    c.optimizer = OptimizerConfig::sgd(0.03, 0.9, 1e-4);
    c.train.negatives = 256;
    c.train.batch_size = 128;
    c.train.epochs = 40;
    c.train.anneal_granularity = Granularity::Epoch;
    c.seeds = vec![0];
    c.output.representations = false;
    let v = |label: &str, kv: &[(&str, &str)]| Variant::new(label, kv);
    c.variants = vec![
        v("ir-softmax", &[("objective.family", "ir-softmax"), ("objective.legacy", "true")]),
        v("ir-nce", &[]),
        v("ball", &[("objective.family", "t-disc"), ("negatives.kind", "ball"), ("negatives.outer_percent", "10")]),
        v(
            "ball-anneal",
            &[
                ("objective.family", "t-disc"),
                ("negatives.kind", "ball"),
                ("negatives.anneal", "100->10@0..20"),
            ],
        ),
        v(
            "ring",
            &[
                ("objective.family", "t-disc"),
                ("negatives.kind", "ring"),
                ("negatives.inner_percent", "1"),
                ("negatives.outer_percent", "10"),
            ],
        ),
        v(
            "ring-s-neigh-anneal",
            &[
                ("objective.family", "t-disc"),
                ("negatives.kind", "ring"),
                ("negatives.inner_percent", "1"),
                ("negatives.outer_percent", "10"),
                ("neighbors.kind", "s-neigh"),
                ("neighbors.count", "5"),
                ("neighbors.anneal", "0->1@2..20"),
            ],
        ),
        v(
            "cave",
            &[
                ("objective.family", "t-disc"),
                ("negatives.kind", "cave"),
                ("negatives.outer_percent", "10"),
                ("negatives.kmeans_k", "10"),
                ("negatives.kmeans_restarts", "3"),
            ],
        ),
        v(
            "la-original",
            &[
                ("objective.family", "la-original"),
                ("objective.legacy", "true"),
                ("negatives.kind", "ball"),
                ("negatives.outer_percent", "10"),
                ("neighbors.kind", "k-neigh"),
                ("neighbors.kmeans_k", "10"),
                ("neighbors.kmeans_restarts", "3"),
                ("neighbors.count", "5"),
            ],
        ),
        v(
            "la-nce",
            &[
                ("objective.family", "la-nce"),
                ("negatives.kind", "ball"),
                ("negatives.outer_percent", "10"),
                ("neighbors.kind", "k-neigh"),
                ("neighbors.kmeans_k", "10"),
                ("neighbors.kmeans_restarts", "3"),
                ("neighbors.count", "5"),
            ],
        ),
        v("cmc", &[("objective.channel_split", "0/1/2/3|4/5/6/7")]),
        v("simclr", &[("objective.use_memory_bank", "false")]),
    ];
    c
}

/// The named experiment configuration.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    Ok(match name {
        "gaussian-mi" => gaussian_mi(),
        "spiral-sweep" => spiral_sweep(),
        "alpha-sweep" => alpha_sweep(),
        "stability-compare" => stability_compare(),
        "witness-ablation" => witness_ablation(),
        "cifar-style-toy" => cifar_style_toy(),
        _ => {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
            return Err(Error::Config(format!("unknown preset `{name}` (known: {})", names.join(", "))));
        }
    })
}

/// Loads a preset by name, or a config file. A file may start from a preset with a
/// `preset = <name>` line; its other keys then override that preset.
pub fn load(source: &str) -> Result<ExperimentConfig> {
    let path = std::path::Path::new(source);
    if !path.is_file() {
        return preset(source);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut base = ExperimentConfig::default();
    let mut rest = String::new();
    for line in text.lines() {
        let content = line.split('#').next().unwrap_or("").trim();
        match content.split_once('=') {
            Some((k, v)) if k.trim() == "preset" => base = preset(v.trim())?,
            _ => {
                rest.push_str(line);
                rest.push('\n');
            }
        }
    }
    ExperimentConfig::from_text_over(base, &rest)
}
