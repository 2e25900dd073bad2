use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;
use skeleton_refine::drnn::{Network, TrainedModel};
use skeleton_refine::experiment::{
    evaluate_variants, files, load_models, train_kalman_velocity_stage, train_position_stage,
    train_velocity_stage, write_reports,
};
use skeleton_refine::fusion::{run_pipeline, FusionModels, NoiseCovariances, Variant};
use skeleton_refine::metrics::evaluate;
use skeleton_refine::seqio::{load_sequence, save_sequence, write_sequence};
use skeleton_refine::skeleton::KinematicTree;
use skeleton_refine::synth::{load_corpus, write_corpus, MANIFEST_FILE};

use crate::config::PipelineConfig;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Stage {
    Pdrnn,
    Vdrnn,
    VdrnnPlus,
}

impl Stage {
    fn name(self) -> &'static str {
        match self {
            Stage::Pdrnn => "pdrnn",
            Stage::Vdrnn => "vdrnn",
            Stage::VdrnnPlus => "vdrnn_plus",
        }
    }
}

pub fn synth(mut cfg: PipelineConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    if let Some(s) = seed {
        cfg.corpus.seed = s;
    }
    let dir = out.unwrap_or(cfg.corpus_dir);
    let corpus = cfg.corpus.build()?;
    let manifest = write_corpus(&dir, &corpus, Some(&cfg.corpus))?;
    info!(
        "wrote {} sequence pairs to {}",
        manifest.entries().count(),
        dir.display()
    );
    println!("{}", dir.join(MANIFEST_FILE).display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    stage: &'a str,
    iterations: usize,
    selected_iteration: usize,
    initial_train_loss: f64,
    initial_validation_loss: f64,
    final_train_loss: f64,
    best_validation_loss: f64,
}

impl<'a> TrainSummary<'a> {
    fn new(stage: &'a str, m: &TrainedModel) -> Self {
        let last = m.history.last();
        Self {
            stage,
            iterations: m.history.len(),
            selected_iteration: m.selected_iteration,
            initial_train_loss: m.initial_train_loss,
            initial_validation_loss: m.initial_validation_loss,
            final_train_loss: last.map_or(m.initial_train_loss, |r| r.train_loss),
            best_validation_loss: m
                .history
                .iter()
                .map(|r| r.validation_loss)
                .fold(m.initial_validation_loss, f64::min),
        }
    }

    fn print(&self) -> Result<(), CliError> {
        println!("{}", serde_json::to_string_pretty(self)?);
        Ok(())
    }
}

fn require(dir: &Path, file: &str, stage: &'static str) -> Result<PathBuf, CliError> {
    let path = dir.join(file);
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Dependency { stage, missing: path })
    }
}

pub fn train(mut cfg: PipelineConfig, which: Stage, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    let dir = out.unwrap_or_else(|| cfg.models_dir.clone());
    // Prerequisites are checked before any data is touched.
    let pdrnn_path = match which {
        Stage::Pdrnn => None,
        _ => Some(require(&dir, files::PDRNN, "pdrnn")?),
    };
    let (vdrnn_path, kalman_path) = match which {
        Stage::VdrnnPlus => (
            Some(require(&dir, files::VDRNN, "vdrnn")?),
            Some(require(&dir, files::KALMAN, "vdrnn")?),
        ),
        _ => (None, None),
    };
    if let Some(s) = seed {
        match which {
            Stage::Pdrnn => cfg.experiment.pdrnn.seed = s,
            Stage::Vdrnn => cfg.experiment.vdrnn.seed = s,
            Stage::VdrnnPlus => cfg.experiment.vdrnn_plus.seed = s,
        }
    }
    cfg.experiment.validate()?;
    let corpus = load_corpus(&cfg.corpus_dir)?;
    fs::create_dir_all(&dir)?;
    let exp = &cfg.experiment;
    match which {
        Stage::Pdrnn => {
            let stage = train_position_stage(exp, &corpus)?;
            stage.save(&dir)?;
            TrainSummary::new(which.name(), &stage.training).print()
        }
        Stage::Vdrnn => {
            let pdrnn = Network::load(pdrnn_path.expect("checked above"))?;
            let stage = train_velocity_stage(exp, &corpus, &pdrnn)?;
            stage.save(&dir)?;
            TrainSummary::new(which.name(), &stage.training).print()
        }
        Stage::VdrnnPlus => {
            let pdrnn = Network::load(pdrnn_path.expect("checked above"))?;
            let vdrnn = Network::load(vdrnn_path.expect("checked above"))?;
            let kalman = NoiseCovariances::load(kalman_path.expect("checked above"))?;
            let stage = train_kalman_velocity_stage(exp, &corpus, &pdrnn, &vdrnn, &kalman)?;
            stage.save(&dir)?;
            TrainSummary::new(which.name(), &stage.training).print()
        }
    }
}

pub fn refine(cfg: PipelineConfig, variant: &str, input: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let variant: Variant = variant
        .parse()
        .map_err(|_| CliError::Usage(format!("unknown variant {variant:?}; expected one of {}", variant_list())))?;
    let models = if variant == Variant::Raw {
        FusionModels::default()
    } else {
        load_models(&cfg.models_dir, cfg.experiment.fusion.k)?
    };
    let seq = load_sequence(input)?;
    let refined = run_pipeline(variant, &seq, &models, &KinematicTree::kinect())?;
    match out {
        Some(path) => save_sequence(path, &refined)?,
        None => write_sequence(BufWriter::new(io::stdout().lock()), &refined)?,
    }
    Ok(())
}

fn variant_list() -> String {
    Variant::ALL.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
}

pub fn eval(pred: &Path, truth: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let report = evaluate(&load_sequence(pred)?, &load_sequence(truth)?)?;
    println!("{}", report.to_json()?);
    if let Some(path) = out {
        report.write_histogram_csv(BufWriter::new(File::create(path)?))?;
    }
    Ok(())
}

/// Trains every stage, then evaluates the configured variants on the test
/// split, writing `reports.json` and the refined test sequences.
pub fn run(mut cfg: PipelineConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), CliError> {
    if let Some(s) = seed {
        cfg.experiment.pdrnn.seed = s;
        cfg.experiment.vdrnn.seed = s.wrapping_add(1);
        cfg.experiment.vdrnn_plus.seed = s.wrapping_add(2);
    }
    let out_dir = out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::Usage("run needs --out or output_dir in the config".into()))?;
    let corpus = load_corpus(&cfg.corpus_dir)?;
    let exp = &cfg.experiment;
    exp.validate()?;
    fs::create_dir_all(&cfg.models_dir)?;
    fs::create_dir_all(&out_dir)?;

    let pos = train_position_stage(exp, &corpus)?;
    pos.save(&cfg.models_dir)?;
    let vel = train_velocity_stage(exp, &corpus, &pos.pdrnn)?;
    vel.save(&cfg.models_dir)?;
    let plus = train_kalman_velocity_stage(exp, &corpus, &pos.pdrnn, &vel.vdrnn, &vel.kalman)?;
    plus.save(&cfg.models_dir)?;

    let models = FusionModels {
        pdrnn: Some(pos.pdrnn),
        vdrnn: Some(vel.vdrnn),
        vdrnn_plus: Some(plus.vdrnn_plus),
        store: Some(pos.store),
        store_plus: Some(plus.store_plus),
        store_raw: Some(pos.store_raw),
        gate: Some(vel.gate),
        gate_plus: Some(plus.gate_plus),
        gate_unrefined: Some(vel.gate_unrefined),
        gate_raw: Some(vel.gate_raw),
        kalman: Some(vel.kalman),
        kalman_raw: Some(vel.kalman_raw),
    };
    let eval = evaluate_variants(&models, &corpus.test, &exp.variants)?;
    for (variant, outs) in &eval.outputs {
        let vdir = out_dir.join(variant.name());
        fs::create_dir_all(&vdir)?;
        for (i, seq) in outs.iter().enumerate() {
            save_sequence(vdir.join(format!("{i:03}.jsonl")), seq)?;
        }
    }
    let report_path = out_dir.join("reports.json");
    write_reports(&report_path, &eval.reports)?;
    let mut stdout = io::stdout().lock();
    for (v, r) in &eval.reports {
        writeln!(stdout, "{:<18} APE {:.5}  AJE {:.5}", v.name(), r.ape, r.aje)?;
    }
    Ok(())
}
