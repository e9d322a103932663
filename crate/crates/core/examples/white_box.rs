//! White-box collaboration: the cloud runs a trained big network instead of
//! the oracle, and joint training uses its probabilities.

use appeal::data::{generate, SynthSpec};
use appeal::models::{count_flops, insert_predictor_head, ArchSpec, BigModel};
use appeal::sim::{find_delta_for_target, AccuracyTarget, CostModel, DeltaGrid, Outcomes, ScoreSource};
use appeal::trainer::{joint_train, pretrain_approximator, Mode, TrainConfig};

fn main() -> appeal::Result<()> {
    let seed = 3;
    let (train, test) = generate(&SynthSpec::std_synth(seed))?;
    let small = ArchSpec::classifier(8, vec![2], vec![4]);
    let big_arch = ArchSpec::classifier(8, vec![64, 64], vec![64, 4]);

    let (big_net, _) = pretrain_approximator(&big_arch, &train, &TrainConfig::pretrain_default(seed))?;
    let (pre, _) = pretrain_approximator(&small, &train, &TrainConfig::pretrain_default(seed))?;
    println!("big test accuracy {:.3}, small {:.3}", big_net.accuracy(&test)?, pre.accuracy(&test)?);
    let big = BigModel::WhiteBox(big_net);

    let cfg = TrainConfig::joint_default(seed, Mode::WhiteBox);
    let (net, _) = joint_train(insert_predictor_head(pre, seed), &big, &train, None, &cfg)?;

    let cost = CostModel::from_flops(&small, count_flops(&big_arch, false) as f64, 0.0)?;
    let outcomes = Outcomes::classify(&net, &big, &test)?;
    for target in [AccuracyTarget::MinAccI(0.9), AccuracyTarget::MaxAd(0.0)] {
        let (delta, r) = find_delta_for_target(&outcomes, ScoreSource::PredictorQ, target, DeltaGrid::Distinct, &cost)?;
        println!(
            "{target:?}: delta {delta:.4} SR {:.3} accuracy {:.4} AccI {:?} cost {:.0} of {:.0}",
            r.sr, r.overall_accuracy, r.acc_i, r.overall_cost, cost.c0
        );
    }
    Ok(())
}
