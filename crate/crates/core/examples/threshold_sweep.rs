//! Sweeps the routing threshold for every score source and finds, per source,
//! the cheapest threshold meeting an accuracy-degradation target.

use appeal::data::{generate, SynthSpec};
use appeal::models::{insert_predictor_head, ArchSpec, BigModel};
use appeal::sim::{
    budget_fraction, find_delta_for_target, linspace, sweep_thresholds, AccuracyTarget, CostModel, DeltaGrid,
    Outcomes, ScoreSource,
};
use appeal::trainer::{joint_train, pretrain_approximator, Mode, TrainConfig};

fn main() -> appeal::Result<()> {
    let seed = 1;
    let (train, test) = generate(&SynthSpec::std_synth(seed))?;
    let arch = ArchSpec::classifier(8, vec![16], vec![16, 4]);
    let (pre, _) = pretrain_approximator(&arch, &train, &TrainConfig::pretrain_default(seed))?;
    let cfg = TrainConfig::joint_default(seed, Mode::BlackBox);
    let (net, _) = joint_train(insert_predictor_head(pre, seed), &BigModel::Oracle, &train, None, &cfg)?;

    // a big model 30x the small one, plus a transfer surcharge
    let cost = CostModel::from_flops(&arch, 30.0 * appeal::models::count_flops(&arch, false) as f64, 500.0)?;
    println!("c1 {} c0 {} budget {} -> edge must keep >= {:.3}", cost.c1, cost.c0, cost.budget, budget_fraction(&cost)?);

    let outcomes = Outcomes::classify(&net, &BigModel::Oracle, &test)?;
    println!("\nq sweep:\n delta    SR   accuracy   cost");
    for r in sweep_thresholds(&outcomes, ScoreSource::PredictorQ, &cost, &linspace(0.0, 1.1, 12))? {
        println!("{:>6.2} {:>5.3} {:>10.4} {:>6.0}", r.delta, r.sr, r.overall_accuracy, r.overall_cost);
    }

    println!("\nlowest appeal rate with AD <= 1%:");
    for src in ScoreSource::ALL {
        let (delta, r) = find_delta_for_target(&outcomes, src, AccuracyTarget::MaxAd(0.01), DeltaGrid::Distinct, &cost)?;
        println!("{:>8}: delta {delta:>8.4} AR {:.3} AD {:.4}", src.name(), r.ar, r.ad);
    }
    Ok(())
}
