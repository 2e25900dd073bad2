//! Trains the full pipeline on the default synthetic corpus and prints
//! per-variant APE / AJE.
//!
//! Usage: `desk_scale [hidden] [iterations] [k] [position-only: 0|1] [residual: 0|1]`

use std::time::Instant;

use skeleton_refine::drnn::OptimizerSpec;
use skeleton_refine::experiment::{
    evaluate_variants, train_pipeline, train_position_stage, ExperimentConfig,
};
use skeleton_refine::fusion::{FusionModels, Variant};
use skeleton_refine::synth::CorpusConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let hidden = arg(1, 64);
    let iterations = arg(2, 200);

    let mut cfg = ExperimentConfig::default();
    for net in [&mut cfg.pdrnn, &mut cfg.vdrnn, &mut cfg.vdrnn_plus] {
        net.hidden_sizes = vec![hidden; 3];
        net.residual = arg(5, 0) == 1;
    }
    cfg.optimizer = OptimizerSpec::lbfgs(iterations);
    cfg.fusion.k = arg(3, cfg.fusion.k);

    let start = Instant::now();
    let mut corpus_cfg = CorpusConfig::default();
    let env = |k: &str| std::env::var(k).ok().and_then(|v| v.parse::<f64>().ok());
    if let Some(v) = env("DISP") {
        corpus_cfg.corruption.displacement_sigma = v;
    }
    if let (Some(a), Some(b)) = (env("DUR_LO"), env("DUR_HI")) {
        corpus_cfg.corruption.occlusion_duration_frames = [a as usize, b as usize];
    }
    if let Some(v) = env("BW") {
        corpus_cfg.motion.motion_bandwidth_hz = v;
    }
    if let Some(v) = env("AMP") {
        corpus_cfg.motion.joint_amplitude_rad = v;
    }
    let corpus = corpus_cfg.build()?;
    let (models, variants) = if arg(4, 0) == 1 {
        let stage = train_position_stage(&cfg, &corpus)?;
        let models = FusionModels {
            pdrnn: Some(stage.pdrnn),
            ..FusionModels::default()
        };
        (models, vec![Variant::Raw, Variant::Pdrnn])
    } else {
        (train_pipeline(&cfg, &corpus)?.models, cfg.variants.clone())
    };
    println!("trained in {:.1?}", start.elapsed());
    let eval = evaluate_variants(&models, &corpus.test, &variants)?;
    for (v, r) in &eval.reports {
        println!("{v:>18}  APE {:.5}  AJE {:.5}", r.ape, r.aje);
    }
    if let Some(outs) = eval.outputs.get(&Variant::Pdrnn) {
        use skeleton_refine::skeleton::JointId;
        for joint in JointId::ALL {
            let mut e = [0.0; 2];
            let mut n = 0.0;
            for (pair, out) in corpus.test.iter().zip(outs) {
                for ((c, r), p) in pair.clean.frames().iter().zip(pair.noisy.frames()).zip(out.frames()) {
                    let d = |a: [f64; 3], b: [f64; 3]| {
                        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                    };
                    e[0] += d(r.joint(joint), c.joint(joint));
                    e[1] += d(p.joint(joint), c.joint(joint));
                    n += 1.0;
                }
            }
            println!("{joint:>14} raw {:.4} pdrnn {:.4}", e[0] / n, e[1] / n);
        }
    }
    println!("total {:.1?}", start.elapsed());
    Ok(())
}
