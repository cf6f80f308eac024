use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{concatenate, Array2, Axis, Ix2};

use super::linalg;
use super::DiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Const,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddConst(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    LeakyRelu(Var, f64),
    MatMul(Var, Var),
    Transpose(Var),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    Reshape(Var),
    Cholesky(Var),
    TriSolve(Var, Var),
    SqDist(Var, Var),
    DiagPart(Var),
    TrilExpDiag(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    QuadForms(Var, Rc<Vec<Array2<f64>>>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Sum(..) => "sum",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::Reshape(..) => "reshape",
            Op::Cholesky(..) => "cholesky",
            Op::TriSolve(..) => "tri_solve",
            Op::SqDist(..) => "sq_dist",
            Op::DiagPart(..) => "diag_part",
            Op::TrilExpDiag(..) => "tril_exp_diag",
            Op::GatherRows(..) => "gather_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::QuadForms(..) => "quad_forms",
        }
    }
}

struct Node {
    op: Op,
    value: Array2<f64>,
    needs_grad: bool,
}

/// Eagerly evaluated expression tape over dense `f64` matrices. Scalars are
/// 1×1 matrices. Nodes are appended in evaluation order, so every node's
/// inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    evaluated: Option<usize>,
}

/// Adjoints produced by [`Tape::gradient`]; one slot per node, `None` for
/// nodes that do not influence the output (their gradient is exactly zero).
pub struct Gradients {
    adjoints: Vec<Option<Array2<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.adjoints[v.0].as_ref()
    }

    /// Gradient with respect to `v`, materialized as zeros when `v` is unused.
    pub fn wrt(&self, v: Var) -> Array2<f64> {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.shapes[v.0]),
        }
    }
}

/// Named leaves created by [`Tape::bind`].
#[derive(Default, Clone, Debug)]
pub struct Bindings {
    vars: HashMap<String, Var>,
    order: Vec<String>,
}

impl Bindings {
    pub fn get(&self, name: &str) -> Result<Var, DiffError> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::UnboundParameter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    /// Gradients of every bound parameter, keyed by name.
    pub fn collect(&self, grads: &Gradients) -> NamedGradients {
        let mut map = HashMap::with_capacity(self.order.len());
        for name in &self.order {
            map.insert(name.clone(), grads.wrt(self.vars[name]));
        }
        NamedGradients(map)
    }
}

#[derive(Clone, Debug, Default)]
pub struct NamedGradients(pub HashMap<String, Array2<f64>>);

impl NamedGradients {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.0.get(name)
    }
}

/// Anything that owns named trainable matrices.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Array2<f64>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>));
}

fn bcast_shape(a: (usize, usize), b: (usize, usize), op: &str) -> (usize, usize) {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            x
        } else if x == 1 {
            y
        } else {
            panic!("{op}: incompatible shapes {a:?} and {b:?}")
        }
    };
    (dim(a.0, b.0), dim(a.1, b.1))
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: Array2<f64>, shape: (usize, usize)) -> Array2<f64> {
    let mut g = g;
    if shape.0 == 1 && g.nrows() != 1 {
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && g.ncols() != 1 {
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn shape_of(a: &Array2<f64>) -> (usize, usize) {
    (a.nrows(), a.ncols())
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        self.evaluated = None;
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        assert_eq!(shape_of(a), (1, 1), "scalar() on non-scalar node");
        a[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        shape_of(self.value(v))
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn leaf_scalar(&mut self, x: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), x))
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Const, value, false)
    }

    pub fn constant_scalar(&mut self, x: f64) -> Var {
        self.constant(Array2::from_elem((1, 1), x))
    }

    /// Binds every parameter of `p` as a named leaf.
    pub fn bind(&mut self, p: &dyn Parameterized) -> Bindings {
        self.bind_with(p, |_| true)
    }

    /// Binds every parameter of `p`; names for which `trainable` is false
    /// become constants.
    pub fn bind_with(
        &mut self,
        p: &dyn Parameterized,
        trainable: impl Fn(&str) -> bool,
    ) -> Bindings {
        let mut b = Bindings::default();
        p.visit_params(&mut |name, value| {
            let v = if trainable(name) {
                self.leaf(value.clone())
            } else {
                self.constant(value.clone())
            };
            b.vars.insert(name.to_string(), v);
            b.order.push(name.to_string());
        });
        b
    }

    fn binary(&mut self, a: Var, b: Var, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        bcast_shape(shape_of(va), shape_of(vb), op.name());
        let value = match op {
            Op::Add(..) => va + vb,
            Op::Sub(..) => va - vb,
            Op::Mul(..) => va * vb,
            Op::Div(..) => va / vb,
            _ => unreachable!(),
        };
        let value = value.into_dimensionality::<Ix2>().expect("2-d broadcast");
        let ng = self.ng(a) || self.ng(b);
        self.push(op, value, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b))
    }

    /// Elementwise product with broadcasting over unit dimensions.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a, b))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).mapv(f);
        let ng = self.ng(a);
        self.push(op, value, ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddConst(a), |x| x + c)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), f64::sqrt)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })
    }

    /// `ln(1 + eˣ)`.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.ncols(),
            vb.nrows(),
            "matmul: {:?} x {:?}",
            va.dim(),
            vb.dim()
        );
        let value = va.dot(vb);
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::MatMul(a, b), value, ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.ng(a);
        self.push(Op::Transpose(a), value, ng)
    }

    /// Sum of all entries (1×1).
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let ng = self.ng(a);
        self.push(Op::Sum(a), Array2::from_elem((1, 1), s), ng)
    }

    /// Column sums, giving a 1×n row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let ng = self.ng(a);
        self.push(Op::SumRows(a), value, ng)
    }

    /// Row sums, giving an m×1 column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(Op::SumCols(a), value, ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, shape: (usize, usize)) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), shape.0 * shape.1, "reshape: size mismatch");
        let flat: Vec<f64> = src.iter().copied().collect();
        let value = Array2::from_shape_vec(shape, flat).expect("reshape");
        let ng = self.ng(a);
        self.push(Op::Reshape(a), value, ng)
    }

    /// Lower Cholesky factor of a symmetric matrix, with diagonal jitter
    /// escalated from 1e-6 (doubling) up to 1e-2 until the factorization
    /// succeeds.
    pub fn cholesky(&mut self, a: Var) -> Result<Var, DiffError> {
        let va = self.value(a);
        assert_eq!(va.nrows(), va.ncols(), "cholesky: non-square input");
        let (l, _jitter) = linalg::cholesky_jittered(va.view())
            .ok_or(DiffError::Cholesky { size: va.nrows() })?;
        let ng = self.ng(a);
        Ok(self.push(Op::Cholesky(a), l, ng))
    }

    /// `L⁻¹ B` for lower-triangular `L`.
    pub fn tri_solve(&mut self, l: Var, b: Var) -> Var {
        let value = linalg::solve_lower(self.value(l).view(), self.value(b).view());
        let ng = self.ng(l) || self.ng(b);
        self.push(Op::TriSolve(l, b), value, ng)
    }

    /// Pairwise squared Euclidean distances between rows of `a` (n×p) and
    /// rows of `b` (m×p), giving n×m.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.ncols(), "sq_dist: dimension mismatch");
        let na = va.map_axis(Axis(1), |r| r.dot(&r));
        let nb = vb.map_axis(Axis(1), |r| r.dot(&r));
        let mut d = va.dot(&vb.t());
        for ((i, j), x) in d.indexed_iter_mut() {
            *x = (na[i] + nb[j] - 2.0 * *x).max(0.0);
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(Op::SqDist(a, b), d, ng)
    }

    /// Diagonal of a square matrix as an n×1 column.
    pub fn diag_part(&mut self, a: Var) -> Var {
        let value = self.value(a).diag().to_owned().insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(Op::DiagPart(a), value, ng)
    }

    /// Lower-triangular matrix whose diagonal is `exp` of the input
    /// diagonal; the strict upper triangle is discarded.
    pub fn tril_exp_diag(&mut self, a: Var) -> Var {
        let mut value = linalg::tril(self.value(a).clone());
        for i in 0..value.nrows().min(value.ncols()) {
            value[[i, i]] = value[[i, i]].exp();
        }
        let ng = self.ng(a);
        self.push(Op::TrilExpDiag(a), value, ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).select(Axis(0), idx);
        let ng = self.ng(a);
        self.push(Op::GatherRows(a, idx.to_vec()), value, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatCols(parts.to_vec()), value, ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Op::ConcatRows(parts.to_vec()), value, ng)
    }

    /// Row-wise quadratic forms `x_iᵀ A_i x_i` of the rows of `x` (n×m)
    /// with constant m×m matrices, giving an n×1 column.
    pub fn quad_forms(&mut self, x: Var, mats: Rc<Vec<Array2<f64>>>) -> Var {
        let vx = self.value(x);
        assert_eq!(vx.nrows(), mats.len(), "quad_forms: one matrix per row");
        let value = Array2::from_shape_fn((vx.nrows(), 1), |(i, _)| {
            let r = vx.row(i);
            r.dot(&mats[i].dot(&r))
        });
        let ng = self.ng(x);
        self.push(Op::QuadForms(x, mats), value, ng)
    }

    /// Forward value of a scalar output. Fails if the output is not 1×1 or
    /// if any recorded intermediate is non-finite.
    pub fn evaluate(&mut self, out: Var) -> Result<f64, DiffError> {
        let shape = self.shape(out);
        if shape != (1, 1) {
            return Err(DiffError::NotScalar(shape));
        }
        for (i, node) in self.nodes[..=out.0].iter().enumerate() {
            if node.value.iter().any(|x| !x.is_finite()) {
                return Err(DiffError::NonFinite {
                    node: i,
                    op: node.op.name(),
                });
            }
        }
        self.evaluated = Some(out.0);
        Ok(self.scalar(out))
    }

    /// Reverse sweep from the scalar `out`; [`Tape::evaluate`] must have been
    /// called on the same output first.
    pub fn gradient(&self, out: Var) -> Result<Gradients, DiffError> {
        if self.evaluated != Some(out.0) {
            return Err(DiffError::BackwardBeforeForward);
        }
        let n = out.0 + 1;
        let mut adj: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(Array2::from_elem((1, 1), 1.0));
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        // constants never get gradients
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.needs_grad {
                adj[i] = None;
            }
        }
        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| shape_of(&n.value)).collect(),
        })
    }

    fn send(&self, adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if self.ng(v) {
            accumulate(&mut adj[v.0], g);
        }
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, adj: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Const => {}
            &Op::Add(a, b) => {
                self.send(adj, a, reduce_to(g.clone(), self.shape(a)));
                self.send(adj, b, reduce_to(g.clone(), self.shape(b)));
            }
            &Op::Sub(a, b) => {
                self.send(adj, a, reduce_to(g.clone(), self.shape(a)));
                self.send(adj, b, reduce_to(-g, self.shape(b)));
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if self.ng(a) {
                    let ga = (g * vb).into_dimensionality::<Ix2>().unwrap();
                    self.send(adj, a, reduce_to(ga, shape_of(va)));
                }
                if self.ng(b) {
                    let gb = (g * va).into_dimensionality::<Ix2>().unwrap();
                    self.send(adj, b, reduce_to(gb, shape_of(vb)));
                }
            }
            &Op::Div(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if self.ng(a) {
                    let ga = (g / vb).into_dimensionality::<Ix2>().unwrap();
                    self.send(adj, a, reduce_to(ga, shape_of(va)));
                }
                if self.ng(b) {
                    // d(a/b)/db = -y / b
                    let gb = (-(g * y) / vb).into_dimensionality::<Ix2>().unwrap();
                    self.send(adj, b, reduce_to(gb, shape_of(vb)));
                }
            }
            &Op::Neg(a) => self.send(adj, a, -g),
            &Op::Scale(a, c) => self.send(adj, a, g * c),
            &Op::AddConst(a) => self.send(adj, a, g.clone()),
            &Op::Exp(a) => self.send(adj, a, g * y),
            &Op::Log(a) => self.send(adj, a, g / self.value(a)),
            &Op::Sqrt(a) => self.send(adj, a, g * &y.mapv(|s| 0.5 / s)),
            &Op::Square(a) => self.send(adj, a, g * &self.value(a).mapv(|x| 2.0 * x)),
            &Op::Tanh(a) => self.send(adj, a, g * &y.mapv(|t| 1.0 - t * t)),
            &Op::Sigmoid(a) => self.send(adj, a, g * &y.mapv(|s| s * (1.0 - s))),
            &Op::Softplus(a) => {
                let d = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
                self.send(adj, a, g * &d)
            }
            &Op::LeakyRelu(a, slope) => {
                let d = self.value(a).mapv(|x| if x > 0.0 { 1.0 } else { slope });
                self.send(adj, a, g * &d)
            }
            &Op::MatMul(a, b) => {
                if self.ng(a) {
                    self.send(adj, a, g.dot(&self.value(b).t()));
                }
                if self.ng(b) {
                    self.send(adj, b, self.value(a).t().dot(g));
                }
            }
            &Op::Transpose(a) => self.send(adj, a, g.t().to_owned()),
            &Op::Sum(a) => self.send(adj, a, Array2::from_elem(self.shape(a), g[[0, 0]])),
            &Op::SumRows(a) => {
                let ga = g
                    .broadcast(self.shape(a))
                    .expect("sum_rows broadcast")
                    .to_owned();
                self.send(adj, a, ga)
            }
            &Op::SumCols(a) => {
                let ga = g
                    .broadcast(self.shape(a))
                    .expect("sum_cols broadcast")
                    .to_owned();
                self.send(adj, a, ga)
            }
            &Op::Reshape(a) => {
                let flat: Vec<f64> = g.iter().copied().collect();
                self.send(adj, a, Array2::from_shape_vec(self.shape(a), flat).unwrap())
            }
            &Op::Cholesky(a) => {
                // S = L^{-T} Φ(Lᵀ Ḹ) L^{-1}, symmetrized.
                let l = y;
                let p = linalg::phi(l.t().dot(&linalg::tril(g.clone())));
                let tmp = linalg::solve_lower_transpose(l.view(), p.view());
                let s = linalg::solve_lower_transpose(l.view(), tmp.t()).t().to_owned();
                let ga = (&s + &s.t()) * 0.5;
                self.send(adj, a, ga)
            }
            &Op::TriSolve(l, b) => {
                let vl = self.value(l);
                let gb = linalg::solve_lower_transpose(vl.view(), g.view());
                if self.ng(l) {
                    let gl = -linalg::tril(gb.dot(&y.t()));
                    self.send(adj, l, gl);
                }
                self.send(adj, b, gb);
            }
            &Op::SqDist(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if self.ng(a) {
                    let rs = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = (va * &rs - g.dot(vb)) * 2.0;
                    self.send(adj, a, ga);
                }
                if self.ng(b) {
                    let cs = g.sum_axis(Axis(0)).insert_axis(Axis(1));
                    let gb = (vb * &cs - g.t().dot(va)) * 2.0;
                    self.send(adj, b, gb);
                }
            }
            &Op::DiagPart(a) => {
                let n = self.shape(a).0;
                let mut ga = Array2::zeros((n, n));
                for k in 0..n {
                    ga[[k, k]] = g[[k, 0]];
                }
                self.send(adj, a, ga)
            }
            &Op::TrilExpDiag(a) => {
                let mut ga = linalg::tril(g.clone());
                for k in 0..ga.nrows().min(ga.ncols()) {
                    ga[[k, k]] *= y[[k, k]];
                }
                self.send(adj, a, ga)
            }
            Op::GatherRows(a, idx) => {
                let a = *a;
                if self.ng(a) {
                    let mut ga = Array2::zeros(self.shape(a));
                    for (k, &r) in idx.iter().enumerate() {
                        let mut row = ga.row_mut(r);
                        row += &g.row(k);
                    }
                    self.send(adj, a, ga);
                }
            }
            Op::QuadForms(x, mats) => {
                let x = *x;
                if self.ng(x) {
                    let vx = self.value(x);
                    let mut gx = Array2::zeros(vx.raw_dim());
                    for (i, a) in mats.iter().enumerate() {
                        let r = vx.row(i);
                        let v = a.dot(&r) + a.t().dot(&r);
                        gx.row_mut(i).assign(&(v * g[[i, 0]]));
                    }
                    self.send(adj, x, gx);
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.ng(p) {
                        let gp = g.slice(ndarray::s![.., off..off + w]).to_owned();
                        self.send(adj, p, gp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.ng(p) {
                        let gp = g.slice(ndarray::s![off..off + h, ..]).to_owned();
                        self.send(adj, p, gp);
                    }
                    off += h;
                }
            }
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
