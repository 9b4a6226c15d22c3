//! Reverse-mode automatic differentiation on a tape.
//!
//! A [`Graph`] records every operation in creation order, which is already a
//! topological order, so backward is a single reverse sweep.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Binary(BinOp, NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    /// Saves 1/σ per row.
    LayerNormRows(NodeId, Vec<f64>),
    /// Saves the scaled keep mask.
    Dropout(NodeId, Vec<f64>),
    Transpose(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    MeanRows(NodeId),
    SumAll(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

fn broadcast_shape(a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| match (x, y) {
        _ if x == y => Ok(x),
        (1, y) => Ok(y),
        (x, 1) => Ok(x),
        _ => Err(NnError::Shape(format!("cannot broadcast {}x{} with {}x{}", a[0], a[1], b[0], b[1]))),
    };
    Ok([dim(a[0], b[0])?, dim(a[1], b[1])?])
}

/// Reads `t` at output position (i, j) under broadcasting.
#[inline]
fn bget(t: &Tensor, i: usize, j: usize) -> f64 {
    let [r, c] = t.shape();
    t.get(if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j })
}

/// Sums a full-shape gradient down to `shape`.
fn reduce_to(g: &Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    let [r, c] = g.shape();
    let d = out.data_mut();
    for i in 0..r {
        for j in 0..c {
            let oi = if shape[0] == 1 { 0 } else { i };
            let oj = if shape[1] == 1 { 0 } else { j };
            d[oi * shape[1] + oj] += g.get(i, j);
        }
    }
    out
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A constant leaf.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Constant copy that blocks gradient flow.
    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).clone();
        self.input(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    fn binary(&mut self, op: BinOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [r, c] = broadcast_shape(ta.shape(), tb.shape())?;
        let f = match op {
            BinOp::Add => |x: f64, y: f64| x + y,
            BinOp::Sub => |x: f64, y: f64| x - y,
            BinOp::Mul => |x: f64, y: f64| x * y,
            BinOp::Div => |x: f64, y: f64| x / y,
        };
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(f(bget(ta, i, j), bget(tb, i, j)));
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(r, c, data)?, Op::Binary(op, a, b), rg))
    }

    /// Elementwise sum; either side may be a broadcast row, column or scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinOp::Div, a, b)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| c * x);
        let rg = self.rg(&[a]);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        });
        let rg = self.rg(&[a]);
        self.push(v, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.cols() == 0 {
            return Err(NnError::EmptyRow);
        }
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            let row = t.row(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|&x| (x - m).exp()));
            let s: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|x| *x /= s);
        }
        let v = Tensor::new(t.rows(), t.cols(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SoftmaxRows(a), rg))
    }

    /// Normalizes each row to zero mean and unit variance, without affine.
    pub fn layer_norm_rows(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        let t = self.value(a);
        let n = t.cols();
        if n == 0 {
            return Err(NnError::EmptyRow);
        }
        let mut data = Vec::with_capacity(t.len());
        let mut inv_std = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            data.extend(row.iter().map(|x| (x - mean) * is));
        }
        let v = Tensor::new(t.rows(), n, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::LayerNormRows(a, inv_std), rg))
    }

    /// Inverted dropout. Identity when `train` is false or `rate` is 0.
    pub fn dropout(&mut self, a: NodeId, rate: f64, train: bool, seed: u64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let mut rng = cellfree_core::rng::rng_from(seed);
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> =
            (0..self.value(a).len()).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
        let t = self.value(a);
        let v = Tensor::new(t.rows(), t.cols(), t.data().iter().zip(&mask).map(|(x, m)| x * m).collect())?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::Dropout(a, mask), rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(v, Op::Transpose(a), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts.first().ok_or_else(|| NnError::Shape("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(NnError::Shape("concat with unequal row counts".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(NnError::Shape(format!("column slice {start}..{end} of {} columns", t.cols())));
        }
        let data = (0..t.rows()).flat_map(|r| t.row(r)[start..end].to_vec()).collect();
        let v = Tensor::new(t.rows(), end - start, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::SliceCols(a, start), rg))
    }

    /// Column means as a 1×n row.
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        if t.rows() == 0 {
            return Err(NnError::Shape("mean over zero rows".into()));
        }
        let mut data = vec![0.0; t.cols()];
        for r in 0..t.rows() {
            for (d, x) in data.iter_mut().zip(t.row(r)) {
                *d += x;
            }
        }
        let m = t.rows() as f64;
        data.iter_mut().for_each(|d| *d /= m);
        let v = Tensor::new(1, t.cols(), data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(v, Op::MeanRows(a), rg))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(v, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Accumulates d`loss`/d`x` into every trainable node. Repeated calls add.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let [r, c] = self.value(loss).shape();
        if (r, c) != (1, 1) {
            return Err(NnError::NotScalar(r, c));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(NnError::Detached);
        }
        // Upstream gradients for this sweep, kept apart from the accumulated ones.
        let mut up: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        up[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = up[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (pid, pg) in self.local_grads(i, &g)? {
                if !self.nodes[pid.0].requires_grad {
                    continue;
                }
                match &mut up[pid.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                vec![(*a, g.matmul(&tb.transpose())?), (*b, ta.transpose().matmul(g)?)]
            }
            Op::Binary(op, a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let [r, c] = g.shape();
                let mut ga = Vec::with_capacity(r * c);
                let mut gb = Vec::with_capacity(r * c);
                for ii in 0..r {
                    for jj in 0..c {
                        let (x, z, gg) = (bget(ta, ii, jj), bget(tb, ii, jj), g.get(ii, jj));
                        let (da, db) = match op {
                            BinOp::Add => (gg, gg),
                            BinOp::Sub => (gg, -gg),
                            BinOp::Mul => (gg * z, gg * x),
                            BinOp::Div => (gg / z, -gg * x / (z * z)),
                        };
                        ga.push(da);
                        gb.push(db);
                    }
                }
                vec![
                    (*a, reduce_to(&Tensor::new(r, c, ga)?, ta.shape())),
                    (*b, reduce_to(&Tensor::new(r, c, gb)?, tb.shape())),
                ]
            }
            Op::Scale(a, s) => vec![(*a, g.map(|x| s * x))],
            Op::Relu(a) => vec![(*a, g.zip_map(self.value(*a), |gg, x| if x > 0.0 { gg } else { 0.0 }))],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(y, |gg, s| gg * s * (1.0 - s)))],
            Op::SoftmaxRows(a) => {
                let mut out = Vec::with_capacity(g.len());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    out.extend(gr.iter().zip(yr).map(|(gg, s)| s * (gg - dot)));
                }
                vec![(*a, Tensor::new(g.rows(), g.cols(), out)?)]
            }
            Op::LayerNormRows(a, inv_std) => {
                let n = g.cols() as f64;
                let mut out = Vec::with_capacity(g.len());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let mg = gr.iter().sum::<f64>() / n;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    out.extend(gr.iter().zip(yr).map(|(gg, yy)| inv_std[r] * (gg - mg - yy * mgy)));
                }
                vec![(*a, Tensor::new(g.rows(), g.cols(), out)?)]
            }
            Op::Dropout(a, mask) => {
                vec![(*a, Tensor::new(g.rows(), g.cols(), g.data().iter().zip(mask).map(|(x, m)| x * m).collect())?)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::ConcatCols(parts) => {
                let mut start = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = self.value(p).cols();
                    let data = (0..g.rows()).flat_map(|r| g.row(r)[start..start + w].to_vec()).collect();
                    out.push((p, Tensor::new(g.rows(), w, data)?));
                    start += w;
                }
                out
            }
            Op::SliceCols(a, start) => {
                let t = self.value(*a);
                let mut ga = Tensor::zeros(t.rows(), t.cols());
                let w = g.cols();
                let cols = t.cols();
                for r in 0..g.rows() {
                    ga.data_mut()[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                vec![(*a, ga)]
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let m = t.rows() as f64;
                let row: Vec<f64> = g.row(0).iter().map(|x| x / m).collect();
                vec![(*a, Tensor::new(t.rows(), t.cols(), row.repeat(t.rows()))?)]
            }
            Op::SumAll(a) => {
                let t = self.value(*a);
                vec![(*a, Tensor::full(t.rows(), t.cols(), g.get(0, 0)))]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.input(t(&[&[0.0, 3f64.ln()], &[1000.0, 1000.0]]));
        let y = g.softmax_rows(x).unwrap();
        let v = g.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
        assert_eq!(&v[2..], &[0.5, 0.5]);
        let e = g.input(Tensor::zeros(2, 0));
        assert!(matches!(g.softmax_rows(e), Err(NnError::EmptyRow)));
    }

    #[test]
    fn activation_examples() {
        let mut g = Graph::new();
        let x = g.input(t(&[&[-2.0, 3.0, 0.0]]));
        let r = g.relu(x);
        let s = g.sigmoid(x);
        assert_eq!(g.value(r).data(), &[0.0, 3.0, 0.0]);
        assert_eq!(g.value(s).data()[2], 0.5);
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::new();
        let x = g.param(t(&[&[1.0, -2.0], &[0.5, 3.0]]));
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0; 4]);

        let mut g = Graph::new();
        let x = g.param(t(&[&[1.0, -2.0], &[0.5, 3.0]]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0, 6.0]);
        // A second sweep accumulates.
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[4.0, -8.0, 2.0, 12.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(2, 2));
        assert!(matches!(g.backward(x), Err(NnError::NotScalar(2, 2))));
        let d = g.detach(x);
        let s = g.sum_all(d);
        assert!(matches!(g.backward(s), Err(NnError::Detached)));
    }

    #[test]
    fn broadcasting_shapes() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(3, 4));
        for (r, c) in [(1, 4), (3, 1), (1, 1), (3, 4)] {
            let b = g.input(Tensor::full(r, c, 1.0));
            let y = g.add(a, b).unwrap();
            assert_eq!(g.value(y).shape(), [3, 4]);
        }
        let b = g.input(Tensor::zeros(2, 4));
        assert!(g.add(a, b).is_err());
    }

    #[test]
    fn layer_norm_moments() {
        let mut g = Graph::new();
        let x = g.input(t(&[&[1.0, 2.0, 4.0, -7.0], &[0.3, 0.1, 0.2, 0.9]]));
        let y = g.layer_norm_rows(x, 0.0).unwrap();
        for r in 0..2 {
            let row = g.value(y).row(r);
            let m = row.iter().sum::<f64>() / 4.0;
            let v = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut g = Graph::new();
        let x = g.input(Tensor::full(100, 100, 1.0));
        assert_eq!(g.dropout(x, 0.1, false, 1).unwrap(), x);
        let y = g.dropout(x, 0.1, true, 1).unwrap();
        let v = g.value(y).data();
        let zeros = v.iter().filter(|&&z| z == 0.0).count() as f64;
        // Binomial(10⁴, 0.1) has standard deviation 30.
        assert!((zeros - 1000.0).abs() < 5.0 * 30.0);
        assert!(v.iter().all(|&z| z == 0.0 || (z - 1.0 / 0.9).abs() < 1e-15));
        let y2 = g.dropout(x, 0.1, true, 1).unwrap();
        assert_eq!(g.value(y).data(), g.value(y2).data());
        assert!(g.dropout(x, 1.0, true, 1).is_err());
    }
}
