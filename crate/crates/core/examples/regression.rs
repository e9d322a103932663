//! Two-head training on the heteroscedastic regression surface. A prediction
//! counts as correct when its RMSE is below a threshold; the oracle always is.

use appeal::data::{generate, SynthSpec};
use appeal::models::{insert_predictor_head, ArchSpec, BigModel};
use appeal::sim::{find_delta_for_target, AccuracyTarget, CostModel, DeltaGrid, Outcomes, ScoreSource};
use appeal::trainer::{joint_train, pretrain_approximator, TrainConfig};

fn main() -> appeal::Result<()> {
    let seed = 0;
    let spec = SynthSpec::std_regression(seed);
    let (train, test) = generate(&spec)?;
    let arch = ArchSpec::regressor(4, vec![32], vec![32, 2]);
    let (pre, _) = pretrain_approximator(&arch, &train, &TrainConfig::pretrain_regression_default(seed))?;
    let cfg = TrainConfig::joint_regression_default(seed);
    let (net, _) = joint_train(insert_predictor_head(pre, seed), &BigModel::Oracle, &train, None, &cfg)?;

    let outcomes = Outcomes::regress(&net, &test, 0.5)?;
    // q should track the noise level, which rises with the first input
    let (_, q) = net.predict(&test.feature_tensor())?;
    for lo in [-1.0, -0.5, 0.0, 0.5] {
        let idx: Vec<usize> = (0..test.len())
            .filter(|&i| (lo..lo + 0.5).contains(&test.feature_row(i)[0]))
            .collect();
        let mean_q = idx.iter().map(|&i| q[i]).sum::<f64>() / idx.len() as f64;
        let x = vec![lo + 0.25, 0.0, 0.0, 0.0];
        println!("x0 in [{lo:+.1}, {:+.1}): noise std {:.3}, mean q {mean_q:.3}", lo + 0.5, spec.regression_noise(&x));
    }

    let cost = CostModel::new(1.0, 20.0, 10.0)?;
    for ad in [0.0, 0.01, 0.05] {
        let (delta, r) = find_delta_for_target(&outcomes, ScoreSource::PredictorQ, AccuracyTarget::MaxAd(ad), DeltaGrid::Distinct, &cost)?;
        println!("AD <= {ad:.2}: delta {delta:.4} SR {:.3} cost {:.2}", r.sr, r.overall_cost);
    }
    Ok(())
}
