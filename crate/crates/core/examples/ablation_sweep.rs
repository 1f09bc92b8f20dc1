//! Trains every ablation on the default synthetic dataset for a few seeds
//! and prints test AP per run and the median per ablation.
//!
//! Usage: `cargo run --release --example ablation_sweep -- [seeds] [epochs] [literal|standard]`

use std::time::Instant;

use dsrl::dsi::{CsaVariant, DsiConfig};
use dsrl::data::{assign_splits, synth_generate, Split, SynthSpec};
use dsrl::pipeline::{evaluate, train, Ablation, Model, ModelConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).map_or(Ok(5), |s| s.parse())?;
    let epochs: usize = args.get(2).map_or(Ok(30), |s| s.parse())?;
    let variant = match args.get(3).map(String::as_str) {
        None | Some("literal") => CsaVariant::Literal,
        Some("standard") => CsaVariant::Standard,
        Some(other) => return Err(format!("unknown attention variant {other}").into()),
    };
    let ablations = [
        Ablation::EuclideanOnly,
        Ablation::NoDsi,
        Ablation::None,
        Ablation::FixedThreshold,
        Ablation::CosineDsi,
    ];
    let mut results = vec![Vec::new(); ablations.len()];
    for seed in 0..seeds {
        let spec = SynthSpec { seed, ..SynthSpec::default() };
        let data = synth_generate(&spec)?;
        let splits = assign_splits(data.len());
        let pick = |s: Split| -> Vec<_> {
            data.iter().zip(&splits).filter(|(_, &x)| x == s).map(|(f, _)| f.clone()).collect()
        };
        let (tr, va, te) = (pick(Split::Train), pick(Split::Val), pick(Split::Test));
        for (i, &ablation) in ablations.iter().enumerate() {
            let start = Instant::now();
            let cfg = ModelConfig {
                seed,
                epochs,
                ablation,
                dsi: DsiConfig { variant, ..DsiConfig::default() },
                ..ModelConfig::default()
            };
            let (model, mut store) = Model::new(cfg, spec.visual_dim, spec.audio_dim)?;
            let log = train(&model, &mut store, &tr, &va, |_| {})?;
            let report = evaluate(&model, &store, &te)?;
            println!(
                "seed {seed} {:<16} test AP {:.4} AUC {:.4} final loss {:.4} ({:.1}s)",
                ablation.name(),
                report.ap,
                report.auc,
                log.epochs.last().map_or(f64::NAN, |e| e.loss),
                start.elapsed().as_secs_f64()
            );
            results[i].push(report.ap);
        }
    }
    for (a, r) in ablations.iter().zip(results) {
        println!("median {:<16} {:.4}", a.name(), median(r));
    }
    Ok(())
}
