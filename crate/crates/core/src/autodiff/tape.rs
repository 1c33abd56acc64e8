use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Transpose(Var),
    /// Adds a length-`c` bias to every row of an `n x c` matrix.
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Abs(Var),
    Square(Var),
    Sum(Var),
    SoftmaxRows(Var),
    /// Mean cross-entropy of row-wise logits against class indices.
    XentMean(Var, Rc<[usize]>),
    /// Subtracts from each row the mean of the rows sharing its group label.
    CenterByGroup(Var, Rc<[usize]>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf | Constant => vec![],
            MatMul(a, b) | MatMulT(a, b) | AddBias(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) => {
                vec![*a, *b]
            }
            Transpose(a) | Scale(a, _) | Relu(a) | Abs(a) | Square(a) | Sum(a)
            | SoftmaxRows(a) | XentMean(a, _) | CenterByGroup(a, _) => vec![*a],
        }
    }

    pub fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            Constant => "constant",
            MatMul(..) => "matmul",
            MatMulT(..) => "matmul_t",
            Transpose(..) => "transpose",
            AddBias(..) => "add_bias",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            Relu(..) => "relu",
            Abs(..) => "abs",
            Square(..) => "square",
            Sum(..) => "sum",
            SoftmaxRows(..) => "softmax_rows",
            XentMean(..) => "xent_mean",
            CenterByGroup(..) => "center_by_group",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Define-by-run record of a computation. Nodes are appended in evaluation
/// order, so every entry's inputs precede it.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zero when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input (parameter or data that gradients are wanted for).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    /// Copies the value of `v` as a constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.value(a).dims();
        let b = self.value(bias);
        if b.len() != c {
            return Err(Error::shape(
                "add_bias",
                format!("bias of length {} for {} columns", b.len(), c),
            ));
        }
        let mut out = self.value(a).clone();
        let bv = b.values().to_vec();
        for i in 0..n {
            for (o, bb) in out.values_mut()[i * c..(i + 1) * c].iter_mut().zip(&bv) {
                *o += bb;
            }
        }
        Ok(self.push(out, Op::AddBias(a, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, c) = x.dims();
        let mut out = x.clone();
        for i in 0..n {
            softmax_in_place(&mut out.values_mut()[i * c..(i + 1) * c]);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn xent_mean(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        let (n, c) = x.dims();
        if labels.len() != n || n == 0 {
            return Err(Error::shape(
                "xent_mean",
                format!("{} logit rows vs {} labels", n, labels.len()),
            ));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::InvalidArgument(format!(
                    "class index {} out of range for {} classes",
                    y, c
                )));
            }
            total += xent_row(x.row(i), y);
        }
        let out = Tensor::scalar(total / n as f64);
        Ok(self.push(out, Op::XentMean(logits, labels.into())))
    }

    pub fn center_by_group(&mut self, a: Var, groups: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if groups.len() != x.rows() {
            return Err(Error::shape(
                "center_by_group",
                format!("{} rows vs {} group labels", x.rows(), groups.len()),
            ));
        }
        let out = center_rows(x, groups);
        Ok(self.push(out, Op::CenterByGroup(a, groups.into())))
    }

    /// Reverse sweep from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_val = self.value(output);
        if out_val.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be scalar, got shape {:?}", out_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::filled(out_val.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for (input, contrib) in self.local_grads(&node.op, &node.value, &g)? {
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }

        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn local_grads(&self, op: &Op, out: &Tensor, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        use Op::*;
        let v = |x: &Var| self.value(*x);
        Ok(match op {
            Leaf | Constant => vec![],
            MatMul(a, b) => vec![
                (*a, g.matmul_t(v(b))?.reshaped(v(a).shape().to_vec())?),
                (*b, v(a).t_matmul(g)?.reshaped(v(b).shape().to_vec())?),
            ],
            MatMulT(a, b) => vec![
                (*a, g.matmul(v(b))?.reshaped(v(a).shape().to_vec())?),
                (*b, g.t_matmul(v(a))?.reshaped(v(b).shape().to_vec())?),
            ],
            Transpose(a) => vec![(*a, g.transpose().reshaped(v(a).shape().to_vec())?)],
            AddBias(a, bias) => {
                let (n, c) = g.dims();
                let mut gb = vec![0.0; c];
                for i in 0..n {
                    for (acc, x) in gb.iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
                vec![
                    (*a, g.clone()),
                    (*bias, Tensor::new(v(bias).shape().to_vec(), gb)?),
                ]
            }
            Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Mul(a, b) => vec![
                (*a, g.zip_map(v(b), "mul", |x, y| x * y)?),
                (*b, g.zip_map(v(a), "mul", |x, y| x * y)?),
            ],
            Scale(a, c) => vec![(*a, g.scale(*c))],
            Relu(a) => vec![(
                *a,
                g.zip_map(v(a), "relu", |gx, x| if x > 0.0 { gx } else { 0.0 })?,
            )],
            Abs(a) => vec![(*a, g.zip_map(v(a), "abs", |gx, x| gx * sign(x))?)],
            Square(a) => vec![(*a, g.zip_map(v(a), "square", |gx, x| 2.0 * gx * x)?)],
            Sum(a) => vec![(*a, Tensor::filled(v(a).shape(), g.item()))],
            SoftmaxRows(a) => {
                let (n, c) = out.dims();
                let mut dx = vec![0.0; n * c];
                for i in 0..n {
                    let s = out.row(i);
                    let gr = g.row(i);
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = s[j] * (gr[j] - dot);
                    }
                }
                vec![(*a, Tensor::new(v(a).shape().to_vec(), dx)?)]
            }
            XentMean(a, labels) => {
                let x = v(a);
                let (n, c) = x.dims();
                let scale = g.item() / n as f64;
                let mut dx = x.clone();
                for (i, &y) in labels.iter().enumerate() {
                    let row = &mut dx.values_mut()[i * c..(i + 1) * c];
                    softmax_in_place(row);
                    row[y] -= 1.0;
                    for r in row.iter_mut() {
                        *r *= scale;
                    }
                }
                vec![(*a, dx)]
            }
            CenterByGroup(a, groups) => vec![(*a, center_rows(g, groups))],
        })
    }

    /// Ids of the inputs of `v` (in recorded order).
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }
}

/// `sign` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for r in row.iter_mut() {
        *r = (*r - m).exp();
        z += *r;
    }
    for r in row.iter_mut() {
        *r /= z;
    }
}

/// `-log softmax(row)[y]`, stabilised by max subtraction.
pub(crate) fn xent_row(row: &[f64], y: usize) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    (lse - row[y]).max(0.0)
}

pub(crate) fn center_rows(x: &Tensor, groups: &[usize]) -> Tensor {
    let (n, c) = x.dims();
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let mut sums = vec![0.0; n_groups * c];
    let mut counts = vec![0usize; n_groups];
    for (i, &gid) in groups.iter().enumerate() {
        counts[gid] += 1;
        for (s, v) in sums[gid * c..(gid + 1) * c].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    let mut out = x.clone();
    for (i, &gid) in groups.iter().enumerate().take(n) {
        let cnt = counts[gid] as f64;
        for j in 0..c {
            out.values_mut()[i * c + j] -= sums[gid * c + j] / cnt;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_map_gradient_is_the_coefficient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![0.3, -1.2, 4.0]));
        let c = tape.constant(Tensor::vector(vec![2.0, -3.0, 0.5]));
        let p = tape.mul(w, c).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(w).values(), &[2.0, -3.0, 0.5]);
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).values(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let unused = tape.leaf(Tensor::matrix(2, 2, vec![1.0; 4]).unwrap());
        let s = tape.sum(a);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn backward_requires_scalar_output() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn tape_is_topologically_ordered() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
        let b = tape.relu(a);
        let c = tape.add(a, b).unwrap();
        let d = tape.sum(c);
        for i in 0..tape.len() {
            let v = Var(i);
            assert!(tape.inputs_of(v).iter().all(|inp| inp.index() < i));
        }
        assert_eq!(d.index(), tape.len() - 1);
    }

    #[test]
    fn center_by_group_removes_group_means() {
        let x = Tensor::matrix(3, 1, vec![2.0, 4.0, 1.0]).unwrap();
        let c = center_rows(&x, &[0, 0, 1]);
        assert_eq!(c.values(), &[-1.0, 1.0, 0.0]);
    }

    #[test]
    fn xent_out_of_range_label_fails() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        assert!(tape.xent_mean(z, &[2]).is_err());
    }
}
