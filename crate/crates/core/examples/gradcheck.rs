//! Checks the joint-loss gradients of a random two-head network against
//! central differences, for both the white-box and black-box objectives.

use appeal::autodiff::{grad_check, Tensor};
use appeal::losses::{joint_objective, BigTerm};
use appeal::models::{insert_predictor_head, Approximator, ArchSpec};

fn main() -> appeal::Result<()> {
    let arch = ArchSpec::classifier(3, vec![8, 6], vec![4]);
    let net = insert_predictor_head(Approximator::new(arch, 7)?, 8);
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.3, -0.7], vec![-0.2, 0.9, 0.1]])?;
    let labels = [2, 0, 3];
    let p0 = Tensor::from_rows(&[
        vec![0.1, 0.1, 0.7, 0.1],
        vec![0.6, 0.2, 0.1, 0.1],
        vec![0.25, 0.25, 0.25, 0.25],
    ])?;

    for (name, white_box) in [("white-box", true), ("black-box", false)] {
        let mut store = net.params().clone();
        let err = grad_check(&mut store, 1e-5, |g, s| {
            let xv = g.input(x.clone());
            let vars = net.forward_with(g, s, xv)?;
            let big = if white_box { BigTerm::WhiteBox(&p0) } else { BigTerm::BlackBox };
            Ok(joint_objective(g, vars.out, vars.q, &labels, big, 0.3)?.total)
        })?;
        println!("{name}: max relative error {err:.3e} over {} parameters", store.numel());
    }
    Ok(())
}
