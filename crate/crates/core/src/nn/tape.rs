//! Reverse-mode autodiff on an explicit tape.
//!
//! A `Tape` records one forward expression as a flat list of nodes; `grad`
//! walks the list backwards once and accumulates adjoints. The op set is
//! deliberately small and fused at the granularity this crate needs (affine
//! layers, row softmax with temperature, cross-entropy), which keeps both
//! the forward pass and the backward rules easy to audit.
//!
//! Constants (data batches, teacher probabilities, clip scales, noise) are
//! embedded inside ops rather than taped as leaves, so gradients flow only
//! to genuine parameters.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a `Tape`. Only meaningful for the tape that made it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

enum Op {
    Leaf,
    /// `y = x w^T + b` with `x: B x I`, `w: O x I`, `b: [O]`.
    Affine { x: usize, w: usize, b: usize },
    Relu { x: usize },
    /// Logistic sigmoid, output clamped at construction time.
    Sigmoid { x: usize },
    /// `ln(max(x, floor))` elementwise.
    LogFloored { x: usize, floor: f64 },
    /// Row-wise `softmax(x / temperature)`.
    SoftmaxRows { x: usize, temperature: f64 },
    MulConst { x: usize, c: Tensor },
    AddConst { x: usize },
    /// `c - x` elementwise.
    SubFromConst { x: usize },
    /// `scale * x + shift` elementwise; only the scale matters backwards.
    ScaleShift { x: usize, scale: f64 },
    /// Matrix `B x M` down to a `[B]` vector of row sums.
    RowSum { x: usize },
    SumAll { x: usize },
    MeanAll { x: usize },
    /// `sum_i x_i * w_i` against a constant, down to a scalar.
    DotConst { x: usize, w: Tensor },
    /// Appends constant columns: `x: B x A`, `c: B x C` giving `B x (A + C)`.
    ConcatColsConst { x: usize },
    /// Mean negative log-likelihood of `labels` under row softmax of logits.
    CrossEntropy { logits: usize, labels: Vec<usize> },
    /// `ca * a + cb * b` for two scalars.
    Combine { a: usize, b: usize, ca: f64, cb: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by `Tape::grad`, indexed by `Var`.
pub struct Grads {
    table: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient of the loss with respect to `v`, or `None` when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.table.get(v.id).and_then(|g| g.as_ref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var {
            id: self.nodes.len() - 1,
        }
    }

    /// Registers a differentiable input (parameter or data matrix).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 {
            return Err(Error::config(format!(
                "affine wants matrix, matrix, vector; got {:?}, {:?}, {:?}",
                xs, ws, bs
            )));
        }
        let (batch, fan_in) = (xs[0], xs[1]);
        let (fan_out, w_in) = (ws[0], ws[1]);
        if w_in != fan_in || bs[0] != fan_out {
            return Err(Error::config(format!(
                "affine shape mismatch: input {:?} against weights {:?} and bias {:?}",
                xs, ws, bs
            )));
        }
        let mut out = Tensor::zeros(vec![batch, fan_out]);
        {
            let xv = self.value(x);
            let wv = self.value(w);
            let bv = self.value(b);
            for r in 0..batch {
                let xrow = xv.row(r);
                let orow = out.row_mut(r);
                for o in 0..fan_out {
                    let wrow = wv.row(o);
                    let mut acc = bv.data()[o];
                    for i in 0..fan_in {
                        acc += xrow[i] * wrow[i];
                    }
                    orow[o] = acc;
                }
            }
        }
        Ok(self.push(
            out,
            Op::Affine {
                x: x.id,
                w: w.id,
                b: b.id,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.push(out, Op::Relu { x: x.id })
    }

    pub fn sigmoid(&mut self, x: Var, clamp: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = clamped_sigmoid(*v, clamp);
        }
        self.push(out, Op::Sigmoid { x: x.id })
    }

    pub fn log_floored(&mut self, x: Var, floor: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = v.max(floor).ln();
        }
        self.push(out, Op::LogFloored { x: x.id, floor })
    }

    pub fn softmax_rows(&mut self, x: Var, temperature: f64) -> Result<Var> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::config(format!(
                "softmax temperature must be positive and finite, got {temperature}"
            )));
        }
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(Error::config(format!(
                "softmax_rows wants a matrix, got shape {:?}",
                xv.shape()
            )));
        }
        let mut out = Tensor::zeros(xv.shape().to_vec());
        for r in 0..xv.rows() {
            softmax_row(out.row_mut(r), xv.row(r), temperature);
        }
        Ok(self.push(
            out,
            Op::SoftmaxRows {
                x: x.id,
                temperature,
            },
        ))
    }

    pub fn mul_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        self.check_same_shape("mul_const", x, &c)?;
        let mut out = self.value(x).clone();
        for (v, k) in out.data_mut().iter_mut().zip(c.data()) {
            *v *= k;
        }
        Ok(self.push(out, Op::MulConst { x: x.id, c }))
    }

    pub fn add_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        self.check_same_shape("add_const", x, &c)?;
        let mut out = self.value(x).clone();
        for (v, k) in out.data_mut().iter_mut().zip(c.data()) {
            *v += k;
        }
        Ok(self.push(out, Op::AddConst { x: x.id }))
    }

    pub fn sub_from_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        self.check_same_shape("sub_from_const", x, &c)?;
        let mut out = c.clone();
        for (v, k) in out.data_mut().iter_mut().zip(self.value(x).data()) {
            *v -= k;
        }
        Ok(self.push(out, Op::SubFromConst { x: x.id }))
    }

    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = scale * *v + shift;
        }
        self.push(out, Op::ScaleShift { x: x.id, scale })
    }

    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(Error::config(format!(
                "row_sum wants a matrix, got shape {:?}",
                xv.shape()
            )));
        }
        let mut out = Tensor::zeros(vec![xv.rows()]);
        for r in 0..xv.rows() {
            out.data_mut()[r] = xv.row(r).iter().sum();
        }
        Ok(self.push(out, Op::RowSum { x: x.id }))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x: x.id })
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::config("mean_all over an empty tensor".to_string()));
        }
        let s: f64 = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(s / n as f64), Op::MeanAll { x: x.id }))
    }

    pub fn dot_const(&mut self, x: Var, w: Tensor) -> Result<Var> {
        self.check_same_shape("dot_const", x, &w)?;
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(w.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::DotConst { x: x.id, w }))
    }

    pub fn concat_cols_const(&mut self, x: Var, c: Tensor) -> Result<Var> {
        let xv = self.value(x);
        if !xv.is_matrix() || !c.is_matrix() || xv.rows() != c.rows() {
            return Err(Error::config(format!(
                "concat_cols_const wants matrices with equal rows, got {:?} and {:?}",
                xv.shape(),
                c.shape()
            )));
        }
        let (rows, a, b) = (xv.rows(), xv.cols(), c.cols());
        let mut out = Tensor::zeros(vec![rows, a + b]);
        for r in 0..rows {
            out.row_mut(r)[..a].copy_from_slice(xv.row(r));
            out.row_mut(r)[a..].copy_from_slice(c.row(r));
        }
        Ok(self.push(out, Op::ConcatColsConst { x: x.id }))
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let zv = self.value(logits);
        if !zv.is_matrix() {
            return Err(Error::config(format!(
                "cross_entropy wants a logit matrix, got shape {:?}",
                zv.shape()
            )));
        }
        if zv.rows() != labels.len() || labels.is_empty() {
            return Err(Error::config(format!(
                "cross_entropy got {} logit rows and {} labels",
                zv.rows(),
                labels.len()
            )));
        }
        let classes = zv.cols();
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::config(format!(
                    "label {y} out of range for {classes} classes"
                )));
            }
            let row = zv.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Tensor::scalar(total / labels.len() as f64);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits: logits.id,
                labels: labels.to_vec(),
            },
        ))
    }

    pub fn combine(&mut self, a: Var, b: Var, ca: f64, cb: f64) -> Result<Var> {
        let av = self.value(a).as_scalar()?;
        let bv = self.value(b).as_scalar()?;
        Ok(self.push(
            Tensor::scalar(ca * av + cb * bv),
            Op::Combine {
                a: a.id,
                b: b.id,
                ca,
                cb,
            },
        ))
    }

    fn check_same_shape(&self, op: &str, x: Var, c: &Tensor) -> Result<()> {
        if self.value(x).same_shape(c) {
            Ok(())
        } else {
            Err(Error::config(format!(
                "{op} shape mismatch: {:?} against constant {:?}",
                self.value(x).shape(),
                c.shape()
            )))
        }
    }

    /// Backpropagates from a scalar `loss` through every recorded op.
    pub fn grad(&self, loss: Var) -> Result<Grads> {
        if !self.value(loss).is_scalar() {
            return Err(Error::config(format!(
                "grad wants a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut table: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        table[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let g = match &table[id] {
                Some(g) => g.clone(),
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Affine { x, w, b } => {
                    let (batch, fan_out) = {
                        let s = self.nodes[id].value.shape();
                        (s[0], s[1])
                    };
                    let fan_in = self.nodes[*x].value.cols();
                    let mut dx = Tensor::zeros(vec![batch, fan_in]);
                    let mut dw = Tensor::zeros(vec![fan_out, fan_in]);
                    let mut db = Tensor::zeros(vec![fan_out]);
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    for r in 0..batch {
                        let grow = g.row(r);
                        let xrow = xv.row(r);
                        let dxrow = dx.row_mut(r);
                        for o in 0..fan_out {
                            let go = grow[o];
                            if go == 0.0 {
                                continue;
                            }
                            db.data_mut()[o] += go;
                            let wrow = wv.row(o);
                            let dwrow = dw.row_mut(o);
                            for i in 0..fan_in {
                                dxrow[i] += go * wrow[i];
                                dwrow[i] += go * xrow[i];
                            }
                        }
                    }
                    accumulate(&mut table[*x], dx);
                    accumulate(&mut table[*w], dw);
                    accumulate(&mut table[*b], db);
                }
                Op::Relu { x } => {
                    let mut dx = g.clone();
                    for (d, &xv) in dx.data_mut().iter_mut().zip(self.nodes[*x].value.data()) {
                        if xv <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::Sigmoid { x } => {
                    let mut dx = g.clone();
                    for (d, &y) in dx.data_mut().iter_mut().zip(self.nodes[id].value.data()) {
                        *d *= y * (1.0 - y);
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::LogFloored { x, floor } => {
                    let mut dx = g.clone();
                    for (d, &xv) in dx.data_mut().iter_mut().zip(self.nodes[*x].value.data()) {
                        *d /= xv.max(*floor);
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::SoftmaxRows { x, temperature } => {
                    let p = &self.nodes[id].value;
                    let mut dx = Tensor::zeros(p.shape().to_vec());
                    for r in 0..p.rows() {
                        let prow = p.row(r);
                        let grow = g.row(r);
                        let dot: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        let drow = dx.row_mut(r);
                        for j in 0..prow.len() {
                            drow[j] = prow[j] * (grow[j] - dot) / temperature;
                        }
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::MulConst { x, c } => {
                    let mut dx = g.clone();
                    for (d, &k) in dx.data_mut().iter_mut().zip(c.data()) {
                        *d *= k;
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::AddConst { x } => {
                    accumulate(&mut table[*x], g.clone());
                }
                Op::SubFromConst { x } => {
                    let mut dx = g.clone();
                    for d in dx.data_mut() {
                        *d = -*d;
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::ScaleShift { x, scale } => {
                    let mut dx = g.clone();
                    for d in dx.data_mut() {
                        *d *= scale;
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::RowSum { x } => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    for r in 0..xv.rows() {
                        let gr = g.data()[r];
                        for d in dx.row_mut(r) {
                            *d = gr;
                        }
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::SumAll { x } => {
                    let g0 = g.data()[0];
                    let xv = &self.nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    for d in dx.data_mut() {
                        *d = g0;
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::MeanAll { x } => {
                    let xv = &self.nodes[*x].value;
                    let g0 = g.data()[0] / xv.len() as f64;
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    for d in dx.data_mut() {
                        *d = g0;
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::DotConst { x, w } => {
                    let g0 = g.data()[0];
                    let mut dx = w.clone();
                    for d in dx.data_mut() {
                        *d *= g0;
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::ConcatColsConst { x } => {
                    let xv = &self.nodes[*x].value;
                    let a = xv.cols();
                    let mut dx = Tensor::zeros(xv.shape().to_vec());
                    for r in 0..xv.rows() {
                        dx.row_mut(r).copy_from_slice(&g.row(r)[..a]);
                    }
                    accumulate(&mut table[*x], dx);
                }
                Op::CrossEntropy { logits, labels } => {
                    let g0 = g.data()[0];
                    let zv = &self.nodes[*logits].value;
                    let mut dz = Tensor::zeros(zv.shape().to_vec());
                    let inv_b = 1.0 / labels.len() as f64;
                    for (r, &y) in labels.iter().enumerate() {
                        softmax_row(dz.row_mut(r), zv.row(r), 1.0);
                        let drow = dz.row_mut(r);
                        drow[y] -= 1.0;
                        for d in drow {
                            *d *= g0 * inv_b;
                        }
                    }
                    accumulate(&mut table[*logits], dz);
                }
                Op::Combine { a, b, ca, cb } => {
                    let g0 = g.data()[0];
                    accumulate(&mut table[*a], Tensor::scalar(ca * g0));
                    accumulate(&mut table[*b], Tensor::scalar(cb * g0));
                }
            }
        }
        Ok(Grads { table })
    }
}

/// Numerically stable `softmax(z / temperature)` into `dst`.
pub(crate) fn softmax_row(dst: &mut [f64], z: &[f64], temperature: f64) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &zi) in dst.iter_mut().zip(z) {
        let e = ((zi - m) / temperature).exp();
        *d = e;
        total += e;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

pub(crate) fn clamped_sigmoid(x: f64, clamp: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(clamp, 1.0 - clamp)
}

fn accumulate(slot: &mut Option<Tensor>, add: Tensor) {
    match slot {
        None => *slot = Some(add),
        Some(t) => {
            for (a, b) in t.data_mut().iter_mut().zip(add.data()) {
                *a += b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::check::{finite_difference, max_rel_error};
    use crate::rng::{seeded, uniform_in};
    use crate::tensor::Tensor;

    fn random_tensor(shape: Vec<usize>, rng: &mut crate::rng::Rng) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| uniform_in(rng, -1.5, 1.5)).collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn affine_forward_matches_hand_computation() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let w = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 0.0, -1.0, 3.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2], vec![0.5, -0.5]).unwrap());
        let y = tape.affine(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.5, 4.5]);
    }

    #[test]
    fn affine_rejects_shape_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap());
        let w = tape.leaf(Tensor::matrix(2, 2, vec![0.0; 4]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2], vec![0.0; 2]).unwrap());
        assert!(tape.affine(x, w, b).is_err());
    }

    #[test]
    fn cross_entropy_matches_log_probabilities() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(2, 3, vec![0.2, -0.4, 1.0, 2.0, 0.0, -1.0]).unwrap());
        let loss = tape.cross_entropy(z, &[2, 0]).unwrap();

        let mut expected = 0.0;
        for (row, y) in [([0.2, -0.4, 1.0], 2usize), ([2.0, 0.0, -1.0], 0)] {
            let mut p = [0.0; 3];
            softmax_row(&mut p, &row, 1.0);
            expected -= p[y].ln();
        }
        expected /= 2.0;
        assert!((tape.value(loss).as_scalar().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn grad_requires_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 2]));
        assert!(tape.grad(x).is_err());
    }

    #[test]
    fn disconnected_leaf_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let unused = tape.leaf(Tensor::zeros(vec![3]));
        let s = tape.sum_all(x);
        let grads = tape.grad(s).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn mean_all_spreads_gradient_evenly() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let m = tape.mean_all(x).unwrap();
        let grads = tape.grad(m).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.3 - 2.0).collect()).unwrap());
        let p = tape.softmax_rows(z, 2.0).unwrap();
        for r in 0..3 {
            let s: f64 = tape.value(p).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    /// Finite differences against backprop for a network stack ending in
    /// cross-entropy, exercising affine, relu, and the fused loss.
    #[test]
    fn gradcheck_cross_entropy_network() {
        let mut rng = seeded(101);
        for _ in 0..5 {
            let x = random_tensor(vec![3, 4], &mut rng);
            let w1 = random_tensor(vec![5, 4], &mut rng);
            let b1 = random_tensor(vec![5], &mut rng);
            let w2 = random_tensor(vec![3, 5], &mut rng);
            let b2 = random_tensor(vec![3], &mut rng);
            let labels = [0usize, 2, 1];

            let eval = |params: &[Tensor]| -> crate::error::Result<f64> {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone());
                let w1v = tape.leaf(params[0].clone());
                let b1v = tape.leaf(params[1].clone());
                let w2v = tape.leaf(params[2].clone());
                let b2v = tape.leaf(params[3].clone());
                let h = tape.affine(xv, w1v, b1v)?;
                let h = tape.relu(h);
                let z = tape.affine(h, w2v, b2v)?;
                let loss = tape.cross_entropy(z, &labels)?;
                tape.value(loss).as_scalar()
            };

            let params = [w1.clone(), b1.clone(), w2.clone(), b2.clone()];
            let numeric = finite_difference(&params, &eval, 1e-5).unwrap();

            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let w1v = tape.leaf(w1);
            let b1v = tape.leaf(b1);
            let w2v = tape.leaf(w2);
            let b2v = tape.leaf(b2);
            let h = tape.affine(xv, w1v, b1v).unwrap();
            let h = tape.relu(h);
            let z = tape.affine(h, w2v, b2v).unwrap();
            let loss = tape.cross_entropy(z, &labels).unwrap();
            let grads = tape.grad(loss).unwrap();
            let analytic: Vec<Tensor> = [w1v, b1v, w2v, b2v]
                .iter()
                .map(|v| grads.get(*v).unwrap().clone())
                .collect();

            let err = max_rel_error(&analytic, &numeric, 1e-6);
            assert!(err < 1e-4, "relative error {err}");
        }
    }

    /// One composite expression touching softmax, log, mul/add/sub consts,
    /// row sums, dot against a constant, scale and combine.
    #[test]
    fn gradcheck_composite_expression() {
        let mut rng = seeded(202);
        let z0 = random_tensor(vec![4, 3], &mut rng);
        let c_mul = random_tensor(vec![4, 3], &mut rng);
        let c_add = random_tensor(vec![4, 3], &mut rng);
        let c_dot = random_tensor(vec![4], &mut rng);

        let build = |tape: &mut Tape, z: Var| -> Var {
            let p = tape.softmax_rows(z, 1.7).unwrap();
            let lp = tape.log_floored(p, 1e-12);
            let m = tape.mul_const(lp, c_mul.clone()).unwrap();
            let m = tape.add_const(m, c_add.clone()).unwrap();
            let m = tape.sub_from_const(m, c_add.clone()).unwrap();
            let rows = tape.row_sum(m).unwrap();
            let d = tape.dot_const(rows, c_dot.clone()).unwrap();
            let s = tape.sum_all(m);
            let s = tape.scale_shift(s, 0.31, 0.9);
            tape.combine(d, s, 0.6, 0.4).unwrap()
        };

        let eval = |params: &[Tensor]| -> crate::error::Result<f64> {
            let mut tape = Tape::new();
            let z = tape.leaf(params[0].clone());
            let loss = build(&mut tape, z);
            tape.value(loss).as_scalar()
        };
        let numeric = finite_difference(std::slice::from_ref(&z0), &eval, 1e-5).unwrap();

        let mut tape = Tape::new();
        let z = tape.leaf(z0);
        let loss = build(&mut tape, z);
        let grads = tape.grad(loss).unwrap();
        let analytic = vec![grads.get(z).unwrap().clone()];

        let err = max_rel_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "relative error {err}");
    }

    /// Sigmoid, concat-with-constant, and mean reductions.
    #[test]
    fn gradcheck_sigmoid_concat_path() {
        let mut rng = seeded(303);
        let x0 = random_tensor(vec![3, 2], &mut rng);
        let cols = random_tensor(vec![3, 2], &mut rng);
        let w = random_tensor(vec![1, 4], &mut rng);
        let b = random_tensor(vec![1], &mut rng);

        let eval = |params: &[Tensor]| -> crate::error::Result<f64> {
            let mut tape = Tape::new();
            let x = tape.leaf(params[0].clone());
            let wv = tape.leaf(params[1].clone());
            let bv = tape.leaf(params[2].clone());
            let wide = tape.concat_cols_const(x, cols.clone())?;
            let z = tape.affine(wide, wv, bv)?;
            let p = tape.sigmoid(z, 1e-7);
            let lp = tape.log_floored(p, 1e-12);
            let m = tape.mean_all(lp)?;
            tape.value(m).as_scalar()
        };

        let params = [x0.clone(), w.clone(), b.clone()];
        let numeric = finite_difference(&params, &eval, 1e-5).unwrap();

        let mut tape = Tape::new();
        let x = tape.leaf(x0);
        let wv = tape.leaf(w);
        let bv = tape.leaf(b);
        let wide = tape.concat_cols_const(x, cols).unwrap();
        let z = tape.affine(wide, wv, bv).unwrap();
        let p = tape.sigmoid(z, 1e-7);
        let lp = tape.log_floored(p, 1e-12);
        let m = tape.mean_all(lp).unwrap();
        let grads = tape.grad(m).unwrap();
        let analytic: Vec<Tensor> = [x, wv, bv]
            .iter()
            .map(|v| grads.get(*v).unwrap().clone())
            .collect();

        let err = max_rel_error(&analytic, &numeric, 1e-6);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn gradient_accumulates_when_value_is_reused() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 2, vec![0.3, -0.2]).unwrap());
        let a = tape.scale_shift(x, 2.0, 0.0);
        let sa = tape.sum_all(a);
        let sb = tape.sum_all(x);
        let loss = tape.combine(sa, sb, 1.0, 1.0).unwrap();
        let grads = tape.grad(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.0, 3.0]);
    }
}
