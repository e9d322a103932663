use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Dense { input: Var, weight: Var, bias: Var },
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Log { arg: Var, floor: f64 },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Gather { arg: Var, index: Vec<usize> },
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of executed primitives. Nodes are appended in execution order and
/// [`Graph::backward`] walks them in exact reverse.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn ensure_finite(t: &Tensor, op: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(op.to_string()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to this node.
    pub fn grad(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.grad()
    }

    /// Records a constant (no gradient flows into a [`ParamStore`]).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut t = store.get(id).clone();
        t.zero_grad();
        self.push(t, Op::Param(id))
    }

    /// `out[b, j] = Σᵢ input[b, i] · weight[i, j] + bias[j]`
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        if x.shape().len() != 2 || w.shape().len() != 2 || x.shape()[1] != w.shape()[0] {
            return Err(Error::Dimension {
                op: "dense",
                left: x.shape().to_vec(),
                right: w.shape().to_vec(),
            });
        }
        let (batch, fan_in, fan_out) = (x.shape()[0], w.shape()[0], w.shape()[1]);
        if b.len() != fan_out {
            return Err(Error::Dimension {
                op: "dense bias",
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let (xv, wv, bv) = (x.values(), w.values(), b.values());
        let mut out = vec![0.0; batch * fan_out];
        for r in 0..batch {
            let row = &mut out[r * fan_out..(r + 1) * fan_out];
            row.copy_from_slice(bv);
            for i in 0..fan_in {
                let xi = xv[r * fan_in + i];
                if xi == 0.0 {
                    continue;
                }
                let wrow = &wv[i * fan_out..(i + 1) * fan_out];
                for (o, wij) in row.iter_mut().zip(wrow) {
                    *o += xi * wij;
                }
            }
        }
        let t = Tensor::new(vec![batch, fan_out], out)?;
        ensure_finite(&t, "dense")?;
        Ok(self.push(
            t,
            Op::Dense {
                input,
                weight,
                bias,
            },
        ))
    }

    fn map(&mut self, a: Var, name: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let x = self.value(a);
        ensure_finite(x, name)?;
        let vals = x.values().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(x.shape().to_vec(), vals)?;
        Ok(self.push(t, op))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, "relu", |v| v.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax over the last dimension, computed after subtracting
    /// each row's maximum.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        ensure_finite(x, "softmax")?;
        let k = x.cols();
        if k < 2 {
            return Err(Error::Contract(format!(
                "softmax needs at least 2 columns, got shape {:?}",
                x.shape()
            )));
        }
        let mut vals = Vec::with_capacity(x.len());
        for row in x.values().chunks(k) {
            vals.extend(stable_softmax(row));
        }
        let t = Tensor::new(x.shape().to_vec(), vals)?;
        Ok(self.push(t, Op::Softmax(a)))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.map(a, "log", |v| v.max(floor).ln(), Op::Log { arg: a, floor })
    }

    fn zip(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Dimension {
                op: name,
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let vals = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(&u, &v)| f(u, v))
            .collect();
        let t = Tensor::new(x.shape().to_vec(), vals)?;
        ensure_finite(&t, name)?;
        Ok(self.push(t, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "add", |u, v| u + v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "sub", |u, v| u - v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, "mul", |u, v| u * v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, "scale", |v| v * c, Op::Scale(a, c))
    }

    /// Adds a constant to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, "offset", |v| v + c, Op::Offset(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let neg = self.scale(a, -1.0)?;
        self.offset(neg, 1.0)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, "square", |v| v * v, Op::Square(a))
    }

    /// Picks `a[b, index[b]]` from a `batch × k` matrix.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if x.shape().len() != 2 || x.rows() != index.len() {
            return Err(Error::Dimension {
                op: "gather",
                left: x.shape().to_vec(),
                right: vec![index.len()],
            });
        }
        let k = x.cols();
        let mut vals = Vec::with_capacity(index.len());
        for (r, &j) in index.iter().enumerate() {
            if j >= k {
                return Err(Error::Index { index: j, len: k });
            }
            vals.push(x.values()[r * k + j]);
        }
        let t = Tensor::vector(vals);
        Ok(self.push(
            t,
            Op::Gather {
                arg: a,
                index: index.to_vec(),
            },
        ))
    }

    /// Sums each row of a `batch × k` matrix into a length-`batch` vector.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.shape().len() != 2 {
            return Err(Error::Dimension {
                op: "row_sum",
                left: x.shape().to_vec(),
                right: vec![2],
            });
        }
        let vals = x.values().chunks(x.cols()).map(|r| r.iter().sum()).collect();
        Ok(self.push(Tensor::vector(vals), Op::RowSum(a)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).values().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let m = x.values().iter().sum::<f64>() / x.len() as f64;
        Ok(self.push(Tensor::scalar(m), Op::Mean(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = Tensor::new(shape, self.value(a).values().to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to the
    /// matching tensors in `store` (they accumulate until zeroed).
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        self.nodes[loss.0].value.grad_mut()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let g = node.value.grad();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let y = node.value.values();
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let fan_out = node.value.cols();
                    let batch = node.value.rows();
                    let fan_in = before[input.0].value.cols();
                    let xv = before[input.0].value.values().to_vec();
                    let wv = before[weight.0].value.values().to_vec();
                    {
                        let gb = before[bias.0].value.grad_mut();
                        for r in 0..batch {
                            for j in 0..fan_out {
                                gb[j] += g[r * fan_out + j];
                            }
                        }
                    }
                    {
                        let gw = before[weight.0].value.grad_mut();
                        for r in 0..batch {
                            let grow = &g[r * fan_out..(r + 1) * fan_out];
                            for i in 0..fan_in {
                                let xi = xv[r * fan_in + i];
                                if xi == 0.0 {
                                    continue;
                                }
                                let gwrow = &mut gw[i * fan_out..(i + 1) * fan_out];
                                for (gwij, gj) in gwrow.iter_mut().zip(grow) {
                                    *gwij += xi * gj;
                                }
                            }
                        }
                    }
                    let gx = before[input.0].value.grad_mut();
                    for r in 0..batch {
                        let grow = &g[r * fan_out..(r + 1) * fan_out];
                        for i in 0..fan_in {
                            let wrow = &wv[i * fan_out..(i + 1) * fan_out];
                            let dot: f64 = wrow.iter().zip(grow).map(|(w, g)| w * g).sum();
                            gx[r * fan_in + i] += dot;
                        }
                    }
                }
                Op::Relu(a) => {
                    let x = before[a.0].value.values().to_vec();
                    let ga = before[a.0].value.grad_mut();
                    for ((gi, xi), gy) in ga.iter_mut().zip(&x).zip(g) {
                        if *xi > 0.0 {
                            *gi += gy;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = before[a.0].value.grad_mut();
                    for ((gi, yi), gy) in ga.iter_mut().zip(y).zip(g) {
                        *gi += gy * yi * (1.0 - yi);
                    }
                }
                Op::Softmax(a) => {
                    let k = node.value.cols();
                    let ga = before[a.0].value.grad_mut();
                    for ((gin, yrow), grow) in ga.chunks_mut(k).zip(y.chunks(k)).zip(g.chunks(k)) {
                        let dot: f64 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                        for j in 0..k {
                            gin[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
                Op::Log { arg, floor } => {
                    let x = before[arg.0].value.values().to_vec();
                    let ga = before[arg.0].value.grad_mut();
                    for ((gi, xi), gy) in ga.iter_mut().zip(&x).zip(g) {
                        if *xi > *floor {
                            *gi += gy / xi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(before[a.0].value.grad_mut(), g, 1.0);
                    accumulate(before[b.0].value.grad_mut(), g, 1.0);
                }
                Op::Sub(a, b) => {
                    accumulate(before[a.0].value.grad_mut(), g, 1.0);
                    accumulate(before[b.0].value.grad_mut(), g, -1.0);
                }
                Op::Mul(a, b) => {
                    let av = before[a.0].value.values().to_vec();
                    let bv = before[b.0].value.values().to_vec();
                    for (gi, (gy, bi)) in before[a.0].value.grad_mut().iter_mut().zip(g.iter().zip(&bv)) {
                        *gi += gy * bi;
                    }
                    for (gi, (gy, ai)) in before[b.0].value.grad_mut().iter_mut().zip(g.iter().zip(&av)) {
                        *gi += gy * ai;
                    }
                }
                Op::Scale(a, c) => accumulate(before[a.0].value.grad_mut(), g, *c),
                Op::Offset(a) | Op::Reshape(a) => accumulate(before[a.0].value.grad_mut(), g, 1.0),
                Op::Square(a) => {
                    let x = before[a.0].value.values().to_vec();
                    let ga = before[a.0].value.grad_mut();
                    for ((gi, xi), gy) in ga.iter_mut().zip(&x).zip(g) {
                        *gi += 2.0 * xi * gy;
                    }
                }
                Op::Gather { arg, index } => {
                    let k = before[arg.0].value.cols();
                    let ga = before[arg.0].value.grad_mut();
                    for (r, (&j, gy)) in index.iter().zip(g).enumerate() {
                        ga[r * k + j] += gy;
                    }
                }
                Op::RowSum(a) => {
                    let k = before[a.0].value.cols();
                    let ga = before[a.0].value.grad_mut();
                    for (grow, gy) in ga.chunks_mut(k).zip(g) {
                        grow.iter_mut().for_each(|v| *v += gy);
                    }
                }
                Op::Sum(a) => {
                    let gy = g[0];
                    before[a.0].value.grad_mut().iter_mut().for_each(|v| *v += gy);
                }
                Op::Mean(a) => {
                    let n = before[a.0].value.len() as f64;
                    let gy = g[0] / n;
                    before[a.0].value.grad_mut().iter_mut().for_each(|v| *v += gy);
                }
            }
        }

        for node in &self.nodes[..=loss.0] {
            if let Op::Param(id) = node.op {
                let g = node.value.grad();
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of parameter {}", id.0)));
                }
                accumulate(store.get_mut(id).grad_mut(), g, 1.0);
            }
        }
        Ok(())
    }
}

fn accumulate(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += c * s;
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Softmax of one row with max subtraction.
pub fn stable_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
