use super::special::{digamma, ln_gamma, sigmoid, softplus};
use super::{NumericsError, Result, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Square(Var),
    Abs(Var),
    Relu(Var),
    Softplus(Var, f64),
    LnGamma(Var),
    ClampMin(Var, f64),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    SliceCols(Var, usize),
    Concat(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Tape of recorded operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is always a
/// topological order of an acyclic graph. Gradients are kept for leaves only
/// and accumulate across [`Graph::backward`] calls until [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Accumulated gradient of a tracked leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), name, f)?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, op, tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| -x);
        self.unary(a, v, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.unary(a, v, Op::Exp(a))
    }

    /// Natural log; non-positive input is a domain error.
    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.check_domain(a, "ln", |x| x > 0.0)?;
        let v = self.value(a).map(f64::ln);
        Ok(self.unary(a, v, Op::Ln(a)))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.check_domain(a, "sqrt", |x| x >= 0.0)?;
        let v = self.value(a).map(f64::sqrt);
        Ok(self.unary(a, v, Op::Sqrt(a)))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.unary(a, v, Op::Square(a))
    }

    /// |x| with subgradient 0 at exactly 0.
    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::abs);
        self.unary(a, v, Op::Abs(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    /// `(1/beta)·ln(1 + exp(beta·x))`; adjoint is the logistic of `beta·x`.
    pub fn softplus(&mut self, a: Var, beta: f64) -> Result<Var> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(NumericsError::Parameter {
                op: "softplus",
                message: format!("beta must be positive, got {beta}"),
            });
        }
        let v = self.value(a).map(|x| softplus(x, beta));
        Ok(self.unary(a, v, Op::Softplus(a, beta)))
    }

    /// ln Γ(x) for x > 0; adjoint is the digamma function.
    pub fn ln_gamma(&mut self, a: Var) -> Result<Var> {
        self.check_domain(a, "ln_gamma", |x| x > 0.0)?;
        let v = self.value(a).map(ln_gamma);
        Ok(self.unary(a, v, Op::LnGamma(a)))
    }

    /// `max(x, floor)`; gradient passes where `x >= floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        let v = self.value(a).map(|x| x.max(floor));
        self.unary(a, v, Op::ClampMin(a, floor))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.unary(a, v, Op::Scale(a, c))
    }

    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.unary(a, v, Op::Shift(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.unary(a, v, Op::Mean(a))
    }

    /// Row sums of a 2-D node, shape `[rows, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum_cols()?;
        Ok(self.unary(a, v, Op::SumCols(a)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(a).slice_cols(start, len)?;
        Ok(self.unary(a, v, Op::SliceCols(a, start)))
    }

    /// Column-wise concatenation of 2-D nodes.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let tracked = parts.iter().any(|&p| self.tracked(p));
        Ok(self.push(value, Op::Concat(parts.to_vec()), tracked))
    }

    fn check_domain(&self, a: Var, op: &'static str, ok: impl Fn(f64) -> bool) -> Result<()> {
        match self.value(a).data().iter().find(|&&x| !ok(x)) {
            Some(&value) => Err(NumericsError::Domain { op, value }),
            None => Ok(()),
        }
    }

    /// Propagates d(root)/d(node) to every tracked leaf reachable from `root`,
    /// adding into any gradient already stored.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let root_value = self.value(root);
        if root_value.len() != 1 {
            return Err(NumericsError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::full(root_value.shape(), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf = node.op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            for (parent, contribution) in self.local_adjoints(i, &g) {
                if !self.nodes[parent.0].tracked {
                    continue;
                }
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&contribution),
                    slot => *slot = Some(contribution),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for upstream adjoint `g`.
    fn local_adjoints(&self, i: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let elementwise = |a: Var, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let x = val(a);
            Tensor::new(
                x.shape().to_vec(),
                x.data()
                    .iter()
                    .zip(g.data())
                    .map(|(&x, &g)| f(x, g))
                    .collect(),
            )
            .expect("same shape")
        };
        // g ⊙ h(a, b) broadcast to the output shape, then reduced to `target`.
        let zip_reduce = |target: Var, other: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            g.zip_map(other, "adjoint", f)
                .expect("broadcast validated in forward pass")
                .reduce_to(val(target).shape())
        };
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (*a, g.reduce_to(val(*a).shape())),
                (*b, g.reduce_to(val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, g.reduce_to(val(*a).shape())),
                (*b, g.map(|x| -x).reduce_to(val(*b).shape())),
            ],
            Op::Mul(a, b) => vec![
                (*a, zip_reduce(*a, val(*b), &|g, y| g * y)),
                (*b, zip_reduce(*b, val(*a), &|g, x| g * x)),
            ],
            Op::Div(a, b) => {
                let ga = zip_reduce(*a, val(*b), &|g, y| g / y);
                // d(a/b)/db = −out/b
                let q = out.zip_map(val(*b), "div", |o, y| -o / y).expect("shape");
                let gb = g
                    .zip_map(&q, "div", |g, q| g * q)
                    .expect("shape")
                    .reduce_to(val(*b).shape());
                vec![(*a, ga), (*b, gb)]
            }
            Op::Neg(a) => vec![(*a, g.map(|x| -x))],
            Op::Exp(a) => vec![(*a, g.zip_map(out, "exp", |g, o| g * o).expect("shape"))],
            Op::Ln(a) => vec![(*a, elementwise(*a, &|x, g| g / x))],
            Op::Sqrt(a) => vec![(
                *a,
                g.zip_map(out, "sqrt", |g, o| if o > 0.0 { 0.5 * g / o } else { 0.0 })
                    .expect("shape"),
            )],
            Op::Square(a) => vec![(*a, elementwise(*a, &|x, g| 2.0 * x * g))],
            Op::Abs(a) => vec![(*a, elementwise(*a, &|x, g| g * sign(x)))],
            Op::Relu(a) => vec![(*a, elementwise(*a, &|x, g| if x > 0.0 { g } else { 0.0 }))],
            Op::Softplus(a, beta) => {
                let beta = *beta;
                vec![(*a, elementwise(*a, &|x, g| g * sigmoid(beta * x)))]
            }
            Op::LnGamma(a) => vec![(*a, elementwise(*a, &|x, g| g * digamma(x)))],
            Op::ClampMin(a, floor) => {
                let floor = *floor;
                vec![(
                    *a,
                    elementwise(*a, &|x, g| if x >= floor { g } else { 0.0 }),
                )]
            }
            Op::Scale(a, c) => {
                let c = *c;
                vec![(*a, g.map(|x| x * c))]
            }
            Op::Shift(a) => vec![(*a, g.clone())],
            Op::MatMul(a, b) => vec![(*a, g.matmul_nt(val(*b))), (*b, val(*a).matmul_tn(g))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                vec![(*a, Tensor::full(val(*a).shape(), g.item() / n))]
            }
            Op::SumCols(a) => {
                let x = val(*a);
                let cols = x.cols();
                let data = (0..x.len()).map(|k| g.data()[k / cols]).collect();
                vec![(*a, Tensor::new(x.shape().to_vec(), data).expect("shape"))]
            }
            Op::SliceCols(a, start) => {
                let x = val(*a);
                let (cols, len) = (x.cols(), out.cols());
                let mut ga = Tensor::zeros_like(x);
                let data = ga.data_mut();
                for r in 0..x.rows() {
                    data[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                vec![(*a, ga)]
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let w = val(p).cols();
                        let piece = g.slice_cols(offset, w).expect("shape");
                        offset += w;
                        (p, piece)
                    })
                    .collect()
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
