//! Dynamic reverse-mode tape.
//!
//! Every op evaluates eagerly and appends a node, so node ids are already in
//! topological order and `backward` is a single reverse sweep.

use crate::tensor::{self, log_sum_exp, Elementwise, Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Scale(Var, f64),
    Sum(Var),
    SelectRow { src: Var, row: usize },
    CrossEntropy { logits: Var, target: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softmax(_) => "softmax",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::SelectRow { .. } => "select_row",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradient accumulators from one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros of its shape if the root does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(TensorError::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::elementwise(Elementwise::Add, self.value(a), Some(self.value(b)))?;
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::elementwise(Elementwise::Mul, self.value(a), Some(self.value(b)))?;
        self.push(v, Op::Mul(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = tensor::elementwise(Elementwise::Tanh, self.value(a), None)?;
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = tensor::elementwise(Elementwise::Sigmoid, self.value(a), None)?;
        self.push(v, Op::Sigmoid(a))
    }

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (op, b) {
            (Elementwise::Add, Some(b)) => self.add(a, b),
            (Elementwise::Mul, Some(b)) => self.mul(a, b),
            (Elementwise::Tanh, _) => self.tanh(a),
            (Elementwise::Sigmoid, _) => self.sigmoid(a),
            (op, None) => Err(TensorError::Dimension(format!(
                "{op:?} needs a second operand"
            ))),
        }
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let v = tensor::softmax(self.value(a))?;
        self.push(v, Op::Softmax(a))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Row `row` of a matrix as a `[1, cols]` vector (embedding lookup).
    pub fn select_row(&mut self, src: Var, row: usize) -> Result<Var> {
        let t = self.value(src);
        if t.shape().len() != 2 || row >= t.rows() {
            return Err(TensorError::Dimension(format!(
                "row {row} out of range for shape {:?}",
                t.shape()
            )));
        }
        let v = Tensor::row(t.row_slice(row).to_vec());
        self.push(v, Op::SelectRow { src, row })
    }

    /// `-log softmax(logits)[target]` for a single row of logits.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let l = self.value(logits);
        if l.rows() != 1 || target >= l.cols() {
            return Err(TensorError::Dimension(format!(
                "target {target} invalid for logits {:?}",
                l.shape()
            )));
        }
        let v = Tensor::scalar(log_sum_exp(l.data()) - l.data()[target]);
        self.push(v, Op::CrossEntropy { logits, target })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(TensorError::Dimension(format!(
                "backward root must be scalar, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let av = self.value(a);
                    let bv = self.value(b);
                    let ga = tensor::matmul(&g, &bv.transpose()?)?.reshape(av.shape().to_vec())?;
                    let a2 = av.reshape(vec![av.rows(), av.cols()])?;
                    let gb = tensor::matmul(&a2.transpose()?, &g)?;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = tensor::elementwise(Elementwise::Mul, &g, Some(self.value(b)))?;
                    let gb = tensor::elementwise(Elementwise::Mul, &g, Some(self.value(a)))?;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for (d, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                        *d *= 1.0 - yv * yv;
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for (d, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                        *d *= yv * (1.0 - yv);
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let n = y.cols();
                    let mut ga = g.clone();
                    for (grow, yrow) in ga.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                        let dot: f64 = grow.iter().zip(yrow).map(|(d, y)| d * y).sum();
                        for (d, &yv) in grow.iter_mut().zip(yrow) {
                            *d = yv * (*d - dot);
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Scale(a, f) => accumulate(&mut grads, a, g.map(|x| x * f)),
                Op::Sum(a) => {
                    let s = g.data()[0];
                    accumulate(&mut grads, a, Tensor::filled(self.value(a).shape(), s));
                }
                Op::SelectRow { src, row } => {
                    let sv = self.value(src);
                    let mut gs = Tensor::zeros(sv.shape());
                    let c = sv.cols();
                    gs.data_mut()[row * c..(row + 1) * c].copy_from_slice(g.data());
                    accumulate(&mut grads, src, gs);
                }
                Op::CrossEntropy { logits, target } => {
                    let s = g.data()[0];
                    let mut gl = tensor::softmax(self.value(logits))?;
                    gl.data_mut()[target] -= 1.0;
                    accumulate(&mut grads, logits, gl.map(|x| x * s));
                }
            }
            // Leaves keep their accumulated gradient.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }

        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_sum_gradient_is_row_sums_of_b() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = g.leaf(Tensor::from_rows(&[vec![1.0, -1.0, 2.0], vec![0.5, 0.0, 3.0]]).unwrap());
        let c = g.matmul(a, b).unwrap();
        let s = g.sum(c).unwrap();
        let grads = g.backward(s).unwrap();
        let ga = grads.wrt(a);
        // d(Σ AB)/dA_ij = Σ_n B_jn
        assert_eq!(ga.data(), &[2.0, 3.5, 2.0, 3.5]);
        let gb = grads.wrt(b);
        assert_eq!(gb.data(), &[4.0, 4.0, 4.0, 6.0, 6.0, 6.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient_of_same_shape() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::ones(&[2, 3]));
        let b = g.leaf(Tensor::ones(&[1, 4]));
        let s = g.sum(a).unwrap();
        let grads = g.backward(s).unwrap();
        assert!(grads.get(b).is_none());
        assert_eq!(grads.wrt(b), Tensor::zeros(&[1, 4]));
    }

    #[test]
    fn non_finite_reports_node() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::row(vec![1e308]));
        let err = g.scale(a, 10.0).unwrap_err();
        assert_eq!(
            err,
            TensorError::NonFinite {
                node: 1,
                op: "scale"
            }
        );
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_v() {
        let mut g = Graph::new();
        let l = g.leaf(Tensor::zeros(&[1, 12]));
        let ce = g.cross_entropy(l, 3).unwrap();
        assert!((g.value(ce).data()[0] - 12f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::ones(&[1, 2]));
        assert!(g.backward(a).is_err());
    }
}
