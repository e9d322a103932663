//! Histograms of q and MSP split by whether the small network is right, with
//! the AUROC of each score for telling the two groups apart.

use appeal::data::{generate, SynthSpec};
use appeal::models::{insert_predictor_head, ArchSpec, BigModel};
use appeal::sim::{score_histogram, separation_auroc, Outcomes, ScoreSource};
use appeal::trainer::{joint_train, pretrain_approximator, Mode, TrainConfig};

fn main() -> appeal::Result<()> {
    let seed = 2;
    let (train, test) = generate(&SynthSpec::std_synth(seed))?;
    let arch = ArchSpec::classifier(8, vec![16], vec![16, 4]);
    let (pre, _) = pretrain_approximator(&arch, &train, &TrainConfig::pretrain_default(seed))?;
    let cfg = TrainConfig::joint_default(seed, Mode::BlackBox);
    let (net, _) = joint_train(insert_predictor_head(pre, seed), &BigModel::Oracle, &train, None, &cfg)?;
    let outcomes = Outcomes::classify(&net, &BigModel::Oracle, &test)?;

    for src in [ScoreSource::PredictorQ, ScoreSource::Msp] {
        let h = score_histogram(&outcomes, src, 10)?;
        println!("{} (AUROC {:.4})", src.name(), separation_auroc(&outcomes, src)?);
        for i in 0..h.bin_left.len() {
            println!(
                "  {:.1} {:<40}|{}",
                h.bin_left[i],
                "#".repeat(h.correct[i] / 5),
                "x".repeat(h.incorrect[i].div_ceil(2))
            );
        }
    }
    println!("# = 5 correct inputs, x = 2 incorrect inputs");
    Ok(())
}
