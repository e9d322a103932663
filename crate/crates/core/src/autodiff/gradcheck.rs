use super::{Graph, ParamStore, Var};
use crate::error::{Error, Result};

/// Compares the analytic gradient of `build` against central differences.
///
/// `build` must record a scalar loss from the parameters in `store`. Returns
/// the max over all parameter entries of
/// `|analytic - numeric| / max(1, |numeric|)`. Parameter values are restored
/// and gradients are left zeroed.
pub fn grad_check<F>(store: &mut ParamStore, epsilon: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Contract(format!(
            "grad_check epsilon must lie in [1e-7, 1e-3], got {epsilon}"
        )));
    }
    store.zero_grad();
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store.iter().map(|t| t.grad().to_vec()).collect();
    store.zero_grad();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = build(&mut g, store)?;
        g.value(loss).item()
    };

    let mut worst = 0.0f64;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for j in 0..store.get(id).len() {
            let orig = store.get(id).values()[j];
            let (hi, lo) = (orig + epsilon, orig - epsilon);
            store.get_mut(id).values_mut()[j] = hi;
            let plus = eval(store);
            store.get_mut(id).values_mut()[j] = lo;
            let minus = eval(store);
            store.get_mut(id).values_mut()[j] = orig;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(Error::NonFinite(_)), _) | (_, Err(Error::NonFinite(_))) => {
                    return Err(Error::NonFinite(format!(
                        "parameter {} entry {j} during finite differences",
                        id.index()
                    )))
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            let numeric = (plus - minus) / (hi - lo);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!(
                    "parameter {} entry {j} during finite differences",
                    id.index()
                )));
            }
            let err = (analytic[id.index()][j] - numeric).abs() / numeric.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
