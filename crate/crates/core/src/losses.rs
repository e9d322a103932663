//! Joint objective, predictor loss, regression variant, softmax-derived
//! confidence baselines and the closed-form diagnostics of the predictor.
//!
//! All logarithms are natural. Every probability fed to a log is clamped to
//! `[PROB_FLOOR, 1]`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{contract, Error, Result};

pub const PROB_FLOOR: f64 = 1e-7;

fn clamped_nll(p: f64) -> f64 {
    -p.clamp(PROB_FLOOR, 1.0).ln()
}

/// `-ln p[y]` with `p[y]` clamped to `[ε, 1]`.
pub fn cross_entropy(p: &[f64], y: usize) -> Result<f64> {
    p.get(y)
        .map(|&v| clamped_nll(v))
        .ok_or(Error::Index { index: y, len: p.len() })
}

/// `q·ℓ(p1, y) + (1 − q)·ℓ(p0, y)` with cross-entropy `ℓ`.
pub fn loss_p_whitebox(p1: &[f64], p0: &[f64], y: usize, q: f64) -> Result<f64> {
    if p0.len() != p1.len() {
        return Err(Error::Dimension {
            op: "loss_p_whitebox",
            left: vec![p1.len()],
            right: vec![p0.len()],
        });
    }
    Ok(q * cross_entropy(p1, y)? + (1.0 - q) * cross_entropy(p0, y)?)
}

/// Black-box form: the oracle's term vanishes, leaving `q·ℓ(p1, y)`.
pub fn loss_p_blackbox(p1: &[f64], y: usize, q: f64) -> Result<f64> {
    Ok(q * cross_entropy(p1, y)?)
}

/// Predictor loss `-ln q`, with `q` clamped to `[ε, 1]`.
pub fn loss_q(q: f64) -> f64 {
    clamped_nll(q)
}

/// Per-example terms and the batch objective `mean(l_p) + β·mean(l_q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_p: Vec<f64>,
    pub l_q: Vec<f64>,
    pub total: f64,
    pub beta: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn total_loss(l_p: Vec<f64>, l_q: Vec<f64>, beta: f64) -> Result<LossBreakdown> {
    if !(beta > 0.0) {
        return contract(format!("beta must be positive, got {beta}"));
    }
    if l_p.is_empty() || l_p.len() != l_q.len() {
        return Err(Error::Dimension {
            op: "total_loss",
            left: vec![l_p.len()],
            right: vec![l_q.len()],
        });
    }
    let total = mean(&l_p) + beta * mean(&l_q);
    Ok(LossBreakdown {
        l_p,
        l_q,
        total,
        beta,
    })
}

/// Single-example regression objective with an oracle big model:
/// `l_p = q·‖pred − target‖²`, `l_q = −ln q`.
pub fn loss_regression(pred: &[f64], target: &[f64], q: f64, beta: f64) -> Result<LossBreakdown> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            op: "loss_regression",
            left: vec![pred.len()],
            right: vec![target.len()],
        });
    }
    let sq: f64 = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    total_loss(vec![q * sq], vec![loss_q(q)], beta)
}

/// Softmax-derived confidence scores; higher means more confident for all three.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceScores {
    /// Maximum softmax probability.
    pub msp: f64,
    /// Score margin: largest minus second-largest probability.
    pub sm: f64,
    /// `Σ p ln p` (negative entropy), with `0·ln 0 = 0`.
    pub entropy_score: f64,
}

pub fn baseline_scores(p: &[f64]) -> ConfidenceScores {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    let entropy_score = p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum();
    ConfidenceScores {
        msp: first,
        sm: first - second,
        entropy_score,
    }
}

/// Minimizer of `z·ℓ − β·ln z` on `(0, 1]`: the critical point `β/ℓ`,
/// clamped to 1.
pub fn optimal_q(ell: f64, beta: f64) -> Result<f64> {
    if !(ell > 0.0 && beta > 0.0) {
        return contract(format!("optimal_q needs ell > 0 and beta > 0, got {ell}, {beta}"));
    }
    Ok((beta / ell).min(1.0))
}

/// Variance implied by a predictor output under the Gaussian reading of the
/// regression objective: `σ² = β / q`.
pub fn variance_estimate(q: f64, beta: f64) -> Result<f64> {
    if !(q > 0.0 && q <= 1.0) {
        return contract(format!("variance_estimate needs q in (0, 1], got {q}"));
    }
    if !(beta > 0.0) {
        return contract(format!("beta must be positive, got {beta}"));
    }
    Ok(beta / q)
}

/// How the big network enters the approximator loss.
#[derive(Debug, Clone, Copy)]
pub enum BigTerm<'a> {
    /// Frozen white-box probabilities, `M × K`.
    WhiteBox(&'a Tensor),
    /// Oracle: `ℓ(f₀(x), y) = 0`.
    BlackBox,
}

/// Graph nodes of the joint objective.
#[derive(Debug, Clone, Copy)]
pub struct JointVars {
    pub total: Var,
    /// Per-example `l_p`, length `M`.
    pub l_p: Var,
    /// Per-example `l_q`, length `M`.
    pub l_q: Var,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        contract(format!("beta must be positive and finite, got {beta}"))
    }
}

fn finish(g: &mut Graph, l_p: Var, q: Var, beta: f64) -> Result<JointVars> {
    let l_q_log = g.log_clamped(q, PROB_FLOOR)?;
    let l_q = g.scale(l_q_log, -1.0)?;
    let mean_p = g.mean(l_p)?;
    let mean_q = g.mean(l_q)?;
    let weighted = g.scale(mean_q, beta)?;
    let total = g.add(mean_p, weighted)?;
    Ok(JointVars { total, l_p, l_q })
}

/// Records `mean(q·ℓ₁ + (1−q)·ℓ₀) + β·mean(−ln q)` for a classification batch.
/// `probs` is `M × K`, `q` has length `M`.
pub fn joint_objective(
    g: &mut Graph,
    probs: Var,
    q: Var,
    labels: &[usize],
    big: BigTerm<'_>,
    beta: f64,
) -> Result<JointVars> {
    check_beta(beta)?;
    let picked = g.gather(probs, labels)?;
    let log_p1 = g.log_clamped(picked, PROB_FLOOR)?;
    let ce1 = g.scale(log_p1, -1.0)?;
    let mut l_p = g.mul(q, ce1)?;
    if let BigTerm::WhiteBox(p0) = big {
        if p0.shape() != g.value(probs).shape() {
            return Err(Error::Dimension {
                op: "white-box probabilities",
                left: g.value(probs).shape().to_vec(),
                right: p0.shape().to_vec(),
            });
        }
        let ce0: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| cross_entropy(p0.row(r), y))
            .collect::<Result<_>>()?;
        let ce0 = g.input(Tensor::vector(ce0));
        let rest = g.one_minus(q)?;
        let big_part = g.mul(rest, ce0)?;
        l_p = g.add(l_p, big_part)?;
    }
    finish(g, l_p, q, beta)
}

/// Records `mean(q·‖pred − target‖²) + β·mean(−ln q)` (oracle big model).
pub fn joint_objective_regression(g: &mut Graph, pred: Var, q: Var, targets: &Tensor, beta: f64) -> Result<JointVars> {
    check_beta(beta)?;
    let t = g.input(targets.clone());
    let diff = g.sub(pred, t)?;
    let sq = g.square(diff)?;
    let err = g.row_sum(sq)?;
    let l_p = g.mul(q, err)?;
    finish(g, l_p, q, beta)
}

/// Mean cross-entropy of `M × K` probabilities against labels.
pub fn cross_entropy_graph(g: &mut Graph, probs: Var, labels: &[usize]) -> Result<Var> {
    let picked = g.gather(probs, labels)?;
    let logp = g.log_clamped(picked, PROB_FLOOR)?;
    let nll = g.scale(logp, -1.0)?;
    g.mean(nll)
}

/// Mean over the batch of `‖pred − target‖²`.
pub fn squared_error_graph(g: &mut Graph, pred: Var, targets: &Tensor) -> Result<Var> {
    let t = g.input(targets.clone());
    let diff = g.sub(pred, t)?;
    let sq = g.square(diff)?;
    let err = g.row_sum(sq)?;
    g.mean(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn probs_with_nll(nll: f64, k: usize, y: usize) -> Vec<f64> {
        let py = (-nll).exp();
        let rest = (1.0 - py) / (k - 1) as f64;
        (0..k).map(|j| if j == y { py } else { rest }).collect()
    }

    #[test]
    fn whitebox_extremes_and_hand_value() {
        let p1 = [0.2, 0.5, 0.3];
        let p0 = [0.1, 0.8, 0.1];
        assert_eq!(loss_p_whitebox(&p1, &p0, 1, 1.0).unwrap(), -(0.5f64).ln());
        assert_eq!(loss_p_whitebox(&p1, &p0, 1, 0.0).unwrap(), -(0.8f64).ln());
        let p1 = probs_with_nll(1.0, 3, 0);
        let p0 = probs_with_nll(0.2, 3, 0);
        assert!(close(loss_p_whitebox(&p1, &p0, 0, 0.5).unwrap(), 0.6, 1e-12));
        assert!(matches!(loss_p_whitebox(&p1, &p0, 3, 0.5), Err(Error::Index { .. })));
    }

    #[test]
    fn blackbox_hand_values() {
        let p1 = probs_with_nll(2.0, 4, 2);
        assert_eq!(loss_p_blackbox(&p1, 2, 0.0).unwrap(), 0.0);
        assert!(close(loss_p_blackbox(&p1, 2, 0.5).unwrap(), 1.0, 1e-12));
        assert!(loss_p_blackbox(&p1, 4, 0.5).is_err());
    }

    #[test]
    fn predictor_loss_values() {
        assert_eq!(loss_q(1.0), 0.0);
        assert!(close(loss_q((-1.0f64).exp()), 1.0, 1e-15));
        assert!(close(loss_q(0.5), std::f64::consts::LN_2, 1e-15));
        assert!(close(loss_q(0.0), -(PROB_FLOOR.ln()), 1e-12));
    }

    #[test]
    fn total_loss_hand_value_and_contracts() {
        let lp = loss_p_whitebox(&probs_with_nll(1.0, 2, 0), &probs_with_nll(0.2, 2, 0), 0, 0.5).unwrap();
        let b = total_loss(vec![lp], vec![loss_q(0.5)], 0.1).unwrap();
        assert!(close(b.total, 0.6 + 0.1 * std::f64::consts::LN_2, 1e-12));
        assert!(close(b.total, 0.66931, 1e-5));
        assert!(total_loss(vec![1.0], vec![1.0], 0.0).is_err());
        assert!(total_loss(vec![1.0], vec![1.0], -1.0).is_err());

        let tiny = total_loss(vec![0.7; 4], vec![0.3; 4], 1e-12).unwrap();
        assert!(close(tiny.total, 0.7, 1e-11));
        let single = total_loss(vec![0.7], vec![0.3], 0.4).unwrap();
        let many = total_loss(vec![0.7; 9], vec![0.3; 9], 0.4).unwrap();
        assert!(close(single.total, many.total, 1e-15));
    }

    #[test]
    fn regression_loss_values() {
        let b = loss_regression(&[1.0, 2.0], &[1.0, 2.0], 0.3, 0.1).unwrap();
        assert_eq!(b.l_p, vec![0.0]);
        let b = loss_regression(&[3.0, 4.0], &[0.0, 0.0], 1.0, 0.1).unwrap();
        assert_eq!(b.l_p, vec![25.0]);
        let b = loss_regression(&[1.0, 1.0], &[0.0, 0.0], 0.5, 0.2).unwrap();
        assert!(close(b.total, 1.0 + 0.2 * std::f64::consts::LN_2, 1e-12));
        assert!(matches!(loss_regression(&[1.0], &[1.0, 2.0], 0.5, 0.2), Err(Error::Dimension { .. })));
    }

    #[test]
    fn baseline_score_values() {
        let s = baseline_scores(&[0.7, 0.2, 0.1]);
        assert_eq!(s.msp, 0.7);
        assert!(close(s.sm, 0.5, 1e-15));
        // hand summation: 0.7 ln 0.7 + 0.2 ln 0.2 + 0.1 ln 0.1
        let oracle = 0.7 * (0.7f64).ln() + 0.2 * (0.2f64).ln() + 0.1 * (0.1f64).ln();
        assert!(close(s.entropy_score, oracle, 1e-15));
        assert!(close(s.entropy_score, -0.8018, 1e-4));

        let u = baseline_scores(&[0.25; 4]);
        assert_eq!(u.sm, 0.0);
        assert!(close(u.entropy_score, -(4.0f64).ln(), 1e-15));

        let z = baseline_scores(&[1.0, 0.0]);
        assert_eq!(z.entropy_score, 0.0);
        assert_eq!(z.sm, 1.0);
    }

    fn grid_argmin(ell: f64, beta: f64, n: usize) -> f64 {
        (1..=n)
            .map(|i| i as f64 / n as f64)
            .map(|z| (z, z * ell - beta * z.ln()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0
    }

    #[test]
    fn optimal_q_values() {
        assert!(close(optimal_q(0.4, 0.1).unwrap(), 0.25, 1e-15));
        assert!(close(grid_argmin(0.4, 0.1, 100_000), 0.25, 1e-5));
        assert_eq!(optimal_q(0.3, 0.3).unwrap(), 1.0);
        assert_eq!(optimal_q(2.0, 1.0).unwrap(), 0.5);
        assert!(close(grid_argmin(2.0, 1.0, 100_000), 0.5, 1e-5));
        assert!(optimal_q(0.0, 1.0).is_err());
        assert!(optimal_q(1.0, -1.0).is_err());
    }

    #[test]
    fn variance_values() {
        assert_eq!(variance_estimate(1.0, 0.5).unwrap(), 0.5);
        assert!(close(variance_estimate(0.25, 0.1).unwrap(), 0.4, 1e-15));
        assert!(variance_estimate(0.6, 0.1).unwrap() < variance_estimate(0.5, 0.1).unwrap());
        assert!(variance_estimate(0.0, 0.1).is_err());
    }

    fn graph_terms(probs: &[Vec<f64>], qs: &[f64], labels: &[usize], p0: Option<&Tensor>, beta: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let p = g.input(Tensor::from_rows(probs).unwrap());
        let q = g.input(Tensor::vector(qs.to_vec()));
        let big = p0.map_or(BigTerm::BlackBox, BigTerm::WhiteBox);
        let v = joint_objective(&mut g, p, q, labels, big, beta).unwrap();
        (
            g.value(v.total).item().unwrap(),
            g.value(v.l_p).values().to_vec(),
            g.value(v.l_q).values().to_vec(),
        )
    }

    fn normalize(raw: Vec<f64>) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    proptest! {
        #[test]
        fn blackbox_equals_whitebox_with_one_hot(
            raw in prop::collection::vec(0.01f64..1.0, 2..6),
            q in 0.0f64..1.0,
            ysel in 0usize..100,
        ) {
            let p1 = normalize(raw);
            let y = ysel % p1.len();
            let p0 = crate::data::one_hot(y, p1.len()).unwrap();
            prop_assert_eq!(loss_p_blackbox(&p1, y, q).unwrap(), loss_p_whitebox(&p1, &p0, y, q).unwrap());
        }

        #[test]
        fn scores_are_permutation_invariant(
            raw in prop::collection::vec(0.01f64..1.0, 2..7),
            shift in 0usize..7,
        ) {
            let p = normalize(raw);
            let mut rotated = p.clone();
            rotated.rotate_left(shift % p.len());
            let mut reversed = p.clone();
            reversed.reverse();
            let a = baseline_scores(&p);
            for other in [baseline_scores(&rotated), baseline_scores(&reversed)] {
                prop_assert_eq!(a.msp, other.msp);
                prop_assert_eq!(a.sm, other.sm);
                prop_assert!((a.entropy_score - other.entropy_score).abs() < 1e-14);
            }
        }

        #[test]
        fn graph_objective_matches_scalar_oracle(
            rows in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 3), 0.01f64..0.99, 0usize..3), 1..12),
            rows0 in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 3), 12),
            beta in 0.001f64..5.0,
        ) {
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| normalize(r.0.clone())).collect();
            let qs: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let p0rows: Vec<Vec<f64>> = rows0[..rows.len()].iter().map(|r| normalize(r.clone())).collect();
            let p0 = Tensor::from_rows(&p0rows).unwrap();

            // independent scalar oracle
            let m = rows.len() as f64;
            let mut lp_w = 0.0; let mut lp_b = 0.0; let mut lq = 0.0;
            for i in 0..rows.len() {
                let y = labels[i];
                lp_w += qs[i] * -probs[i][y].ln() + (1.0 - qs[i]) * -p0rows[i][y].ln();
                lp_b += qs[i] * -probs[i][y].ln();
                lq += -qs[i].ln();
            }
            let (tw, _, _) = graph_terms(&probs, &qs, &labels, Some(&p0), beta);
            let (tb, lpb, _) = graph_terms(&probs, &qs, &labels, None, beta);
            prop_assert!((tw - (lp_w / m + beta * lq / m)).abs() < 1e-12);
            prop_assert!((tb - (lp_b / m + beta * lq / m)).abs() < 1e-12);

            // the scalar API agrees term by term
            let lq_terms: Vec<f64> = qs.iter().map(|&q| loss_q(q)).collect();
            let scalar = total_loss(lpb.clone(), lq_terms, beta).unwrap();
            prop_assert!((scalar.total - tb).abs() < 1e-12);
        }

        #[test]
        fn q_gradient_signs_in_blackbox_batches(
            rows in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 4), 0.01f64..0.99, 0usize..4), 1..10),
            beta in 0.01f64..3.0,
        ) {
            let probs: Vec<Vec<f64>> = rows.iter().map(|r| normalize(r.0.clone())).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.2).collect();
            let m = rows.len();
            let mut store = ParamStore::new();
            let qid = store.add(Tensor::vector(rows.iter().map(|r| r.1).collect()));
            let ptensor = Tensor::from_rows(&probs).unwrap();

            // l_p part alone: ∂ sum(l_p) / ∂q_i = ℓ₁ − ℓ₀ = ℓ₁ ≥ 0 for the oracle
            let mut g = Graph::new();
            let p = g.input(ptensor.clone());
            let q = g.param(&store, qid);
            let v = joint_objective(&mut g, p, q, &labels, BigTerm::BlackBox, beta).unwrap();
            let s = g.sum(v.l_p).unwrap();
            g.backward(s, &mut store).unwrap();
            for (i, gq) in store.get(qid).grad().iter().enumerate() {
                let ell1 = -probs[i][labels[i]].ln();
                prop_assert!(*gq >= 0.0);
                prop_assert!((gq - ell1).abs() < 1e-12);
            }

            // β·l_q part alone: ∂/∂q_i = −β/q_i < 0
            store.zero_grad();
            let mut g = Graph::new();
            let p = g.input(ptensor);
            let q = g.param(&store, qid);
            let v = joint_objective(&mut g, p, q, &labels, BigTerm::BlackBox, beta).unwrap();
            let s = g.sum(v.l_q).unwrap();
            let s = g.scale(s, beta).unwrap();
            g.backward(s, &mut store).unwrap();
            for (i, gq) in store.get(qid).grad().iter().enumerate() {
                let qi = rows[i].1;
                prop_assert!(*gq < 0.0);
                prop_assert!((gq + beta / qi).abs() < 1e-9 * (beta / qi).max(1.0));
            }
            let _ = m;
        }
    }

    #[test]
    fn optimal_q_matches_grid_for_random_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        for _ in 0..20 {
            let ell = rng.gen_range(0.05..5.0);
            let beta = rng.gen_range(0.01..2.0);
            let z = optimal_q(ell, beta).unwrap();
            assert!((z - grid_argmin(ell, beta, n)).abs() <= 1.0 / n as f64 + 1e-12);
        }
    }
}
