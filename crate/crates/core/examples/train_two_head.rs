//! Pretrains the approximator on the standard synthetic task, inserts the
//! predictor head and trains both heads jointly against the oracle with the
//! dynamic multiplier.

use appeal::data::{generate, SynthSpec};
use appeal::models::{insert_predictor_head, ArchSpec, BigModel};
use appeal::trainer::{joint_train, pretrain_approximator, Mode, TrainConfig};

fn main() -> appeal::Result<()> {
    let seed = 0;
    let (train, test) = generate(&SynthSpec::std_synth(seed))?;
    let arch = ArchSpec::classifier(8, vec![16], vec![16, 4]);

    let (pre, _) = pretrain_approximator(&arch, &train, &TrainConfig::pretrain_default(seed))?;
    println!("pretrained test accuracy {:.3}", pre.accuracy(&test)?);

    let net = insert_predictor_head(pre, seed);
    let cfg = TrainConfig::joint_default(seed, Mode::BlackBox);
    let (net, log) = joint_train(net, &BigModel::Oracle, &train, Some(&test), &cfg)?;

    println!("epoch  mean_lp  mean_lq    beta  acc_test  mean_q");
    for r in log.epochs.iter().step_by(10).chain(log.epochs.last()) {
        println!(
            "{:>5} {:>8.4} {:>8.4} {:>7.4} {:>9.3} {:>7.3}",
            r.epoch,
            r.mean_lp,
            r.mean_lq.unwrap(),
            r.beta.unwrap(),
            r.acc_test.unwrap(),
            r.mean_q.unwrap()
        );
    }
    println!("mean l_q over the last 10% of steps: {:.4}", log.tail_mean_lq(0.1).unwrap());
    println!("final approximator test accuracy {:.3}", net.approximator().accuracy(&test)?);
    Ok(())
}
