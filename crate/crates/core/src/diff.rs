//! Tape-based reverse-mode differentiation over scalar nodes.
//!
//! A [`Tape`] records a computation eagerly as it is built; [`Var`] is a copyable
//! handle to one recorded scalar. One reverse sweep accumulates adjoints for
//! every node, so the gradient of a scalar output with respect to thousands of
//! parameters costs one backward pass over the recorded graph.
//!
//! Besides elementary arithmetic and the transcendental functions, the tape
//! supports n-ary sums and fused [`CustomOp`] nodes. The fused nodes are what
//! keep long particle rollouts affordable: a Gaussian-process posterior draw
//! or a full RBF-network evaluation becomes a single node with a hand-written
//! backward rule instead of tens of thousands of scalar nodes.
//!
//! Tapes are single-threaded; independent tapes may live on independent
//! threads.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::fmt;

use crate::fmath;
use crate::linalg::{pairwise_sum, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UnOp {
    Neg,
    Abs,
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tanh,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf,
    Bin {
        op: BinOp,
        a: u32,
        b: u32,
    },
    Un {
        op: UnOp,
        a: u32,
    },
    AddConst {
        a: u32,
    },
    MulConst {
        a: u32,
        c: f64,
    },
    PowfConst {
        a: u32,
        p: f64,
    },
    Powi {
        a: u32,
        n: i32,
    },
    Sum {
        off: u32,
        len: u32,
    },
    Custom {
        op: u16,
        off: u32,
        len: u32,
        cache_off: u32,
        payload: f64,
    },
}

/// A fused multi-input scalar operation with a hand-written backward rule.
///
/// `forward` may stash intermediates in `cache` (length [`CustomOp::cache_len`])
/// for `backward` to reuse. `backward` must *accumulate* `d(value)/d(parent_i)
/// * out_adj` into `parent_adj[i]`.
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn arity(&self) -> usize;
    fn cache_len(&self) -> usize {
        0
    }
    fn forward(&self, payload: f64, parents: &[f64], cache: &mut [f64]) -> f64;
    fn backward(
        &self,
        payload: f64,
        parents: &[f64],
        value: f64,
        out_adj: f64,
        cache: &[f64],
        parent_adj: &mut [f64],
    );
}

/// Identifier of a registered [`CustomOp`] on a particular tape.
#[derive(Debug, Clone, Copy)]
pub struct OpId(u16);

/// First non-finite value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    pub op: &'static str,
    pub node: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiffError {
    /// A primitive produced NaN or infinity; names the offending primitive.
    NonFinite { op: &'static str, node: u32 },
}

impl fmt::Display for DiffError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffError::NonFinite { op, node } => {
                write!(f, "non-finite value produced by `{op}` at node {node}")
            }
        }
    }
}

#[derive(Default)]
struct TapeInner {
    nodes: Vec<Node>,
    vals: Vec<f64>,
    parents: Vec<u32>,
    aux: Vec<f64>,
    fault: Option<Fault>,
}

/// Recording tape. See the module docs.
pub struct Tape {
    inner: RefCell<TapeInner>,
    ops: RefCell<Vec<Rc<dyn CustomOp>>>,
}

/// Handle to one scalar on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(TapeInner::default()),
            ops: RefCell::new(Vec::new()),
        }
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let t = Tape::new();
        {
            let mut inner = t.inner.borrow_mut();
            inner.nodes.reserve(nodes);
            inner.vals.reserve(nodes);
        }
        t
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every recorded node (and registered op) but keeps the allocated
    /// buffers. Requires `&mut self`, so no stale [`Var`] can survive.
    pub fn clear(&mut self) {
        let inner = self.inner.get_mut();
        inner.nodes.clear();
        inner.vals.clear();
        inner.parents.clear();
        inner.aux.clear();
        inner.fault = None;
        self.ops.get_mut().clear();
    }

    /// First non-finite value recorded so far, if any.
    pub fn fault(&self) -> Option<Fault> {
        self.inner.borrow().fault
    }

    fn push(&self, node: Node, value: f64, op_name: &'static str) -> u32 {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len() as u32;
        if !value.is_finite() && inner.fault.is_none() {
            inner.fault = Some(Fault { op: op_name, node: idx });
        }
        inner.nodes.push(node);
        inner.vals.push(value);
        idx
    }

    /// Records a tracked leaf (an input the reverse sweep reports a gradient
    /// for).
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node::Leaf, value, "leaf");
        Var { tape: self, idx }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Records a constant. Mechanically identical to a leaf; the distinction
    /// is only who asks for its adjoint.
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.var(value)
    }

    /// n-ary sum, evaluated by pairwise summation.
    pub fn sum<'t>(&'t self, xs: &[Var<'t>]) -> Var<'t> {
        let (off, value) = {
            let mut inner = self.inner.borrow_mut();
            let off = inner.parents.len() as u32;
            let idxs: Vec<u32> = xs.iter().map(|v| v.idx).collect();
            inner.parents.extend_from_slice(&idxs);
            let vals: Vec<f64> = xs.iter().map(|v| inner.vals[v.idx as usize]).collect();
            (off, pairwise_sum(&vals))
        };
        let idx = self.push(
            Node::Sum {
                off,
                len: xs.len() as u32,
            },
            value,
            "sum",
        );
        Var { tape: self, idx }
    }

    /// Registers a fused operation for use with [`Tape::custom`].
    pub fn register_op(&self, op: Rc<dyn CustomOp>) -> OpId {
        let mut ops = self.ops.borrow_mut();
        let id = ops.len() as u16;
        ops.push(op);
        OpId(id)
    }

    /// Records one application of a registered fused operation.
    pub fn custom<'t>(&'t self, op: OpId, parents: &[Var<'t>], payload: f64) -> Var<'t> {
        let ops = self.ops.borrow();
        let fused = &ops[op.0 as usize];
        debug_assert_eq!(parents.len(), fused.arity(), "{} arity", fused.name());
        let name = fused.name();
        let (node, value) = {
            let mut inner = self.inner.borrow_mut();
            let off = inner.parents.len() as u32;
            let idxs: Vec<u32> = parents.iter().map(|v| v.idx).collect();
            inner.parents.extend_from_slice(&idxs);
            let pv: Vec<f64> = parents.iter().map(|v| inner.vals[v.idx as usize]).collect();
            let cache_off = inner.aux.len() as u32;
            let cache_len = fused.cache_len();
            inner.aux.resize(cache_off as usize + cache_len, 0.0);
            let aux_range = cache_off as usize..cache_off as usize + cache_len;
            let value = fused.forward(payload, &pv, &mut inner.aux[aux_range]);
            (
                Node::Custom {
                    op: op.0,
                    off,
                    len: parents.len() as u32,
                    cache_off,
                    payload,
                },
                value,
            )
        };
        drop(ops);
        let idx = self.push(node, value, name);
        Var { tape: self, idx }
    }

    pub fn value(&self, v: Var<'_>) -> f64 {
        self.inner.borrow().vals[v.idx as usize]
    }

    /// Reverse sweep from `output`; returns the adjoint of every node.
    pub fn reverse(&self, output: Var<'_>) -> Gradients {
        let inner = self.inner.borrow();
        let ops = self.ops.borrow();
        let n = inner.nodes.len();
        let mut adj = vec![0.0f64; n];
        adj[output.idx as usize] = 1.0;
        let mut scratch_vals: Vec<f64> = Vec::new();
        let mut scratch_adj: Vec<f64> = Vec::new();

        for i in (0..=output.idx as usize).rev() {
            let g = adj[i];
            if g == 0.0 {
                continue;
            }
            match inner.nodes[i] {
                Node::Leaf => {}
                Node::Bin { op, a, b } => {
                    let (a, b) = (a as usize, b as usize);
                    match op {
                        BinOp::Add => {
                            adj[a] += g;
                            adj[b] += g;
                        }
                        BinOp::Sub => {
                            adj[a] += g;
                            adj[b] -= g;
                        }
                        BinOp::Mul => {
                            adj[a] += g * inner.vals[b];
                            adj[b] += g * inner.vals[a];
                        }
                        BinOp::Div => {
                            let bv = inner.vals[b];
                            adj[a] += g / bv;
                            adj[b] -= g * inner.vals[i] / bv;
                        }
                    }
                }
                Node::Un { op, a } => {
                    let a = a as usize;
                    let x = inner.vals[a];
                    let y = inner.vals[i];
                    let d = match op {
                        UnOp::Neg => -1.0,
                        // subgradient 0 at the kink
                        UnOp::Abs => {
                            if x > 0.0 {
                                1.0
                            } else if x < 0.0 {
                                -1.0
                            } else {
                                0.0
                            }
                        }
                        UnOp::Exp => y,
                        UnOp::Ln => 1.0 / x,
                        UnOp::Sqrt => 0.5 / y,
                        UnOp::Sin => fmath::cos(x),
                        UnOp::Cos => -fmath::sin(x),
                        UnOp::Tanh => 1.0 - y * y,
                    };
                    adj[a] += g * d;
                }
                Node::AddConst { a } => adj[a as usize] += g,
                Node::MulConst { a, c } => adj[a as usize] += g * c,
                Node::PowfConst { a, p } => {
                    let x = inner.vals[a as usize];
                    adj[a as usize] += g * p * fmath::powf(x, p - 1.0);
                }
                Node::Powi { a, n } => {
                    let x = inner.vals[a as usize];
                    adj[a as usize] += g * n as f64 * fmath::powi(x, n - 1);
                }
                Node::Sum { off, len } => {
                    for k in off as usize..(off + len) as usize {
                        adj[inner.parents[k] as usize] += g;
                    }
                }
                Node::Custom {
                    op,
                    off,
                    len,
                    cache_off,
                    payload,
                } => {
                    let fused = &ops[op as usize];
                    let pr = off as usize..(off + len) as usize;
                    scratch_vals.clear();
                    scratch_vals
                        .extend(inner.parents[pr.clone()].iter().map(|&p| inner.vals[p as usize]));
                    scratch_adj.clear();
                    scratch_adj.resize(len as usize, 0.0);
                    let cache =
                        &inner.aux[cache_off as usize..cache_off as usize + fused.cache_len()];
                    fused.backward(
                        payload,
                        &scratch_vals,
                        inner.vals[i],
                        g,
                        cache,
                        &mut scratch_adj,
                    );
                    for (k, &p) in inner.parents[pr].iter().enumerate() {
                        adj[p as usize] += scratch_adj[k];
                    }
                }
            }
        }
        Gradients { adj }
    }
}

/// Adjoints produced by one reverse sweep.
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adj[v.idx as usize]
    }

    pub fn wrt_all(&self, vs: &[Var<'_>]) -> Vec<f64> {
        vs.iter().map(|v| self.wrt(*v)).collect()
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.tape.value(self)
    }

    fn un(self, op: UnOp, f: fn(f64) -> f64, name: &'static str) -> Var<'t> {
        let v = f(self.value());
        let idx = self.tape.push(Node::Un { op, a: self.idx }, v, name);
        Var {
            tape: self.tape,
            idx,
        }
    }

    pub fn exp(self) -> Var<'t> {
        self.un(UnOp::Exp, fmath::exp, "exp")
    }

    pub fn ln(self) -> Var<'t> {
        self.un(UnOp::Ln, fmath::ln, "ln")
    }

    pub fn sqrt(self) -> Var<'t> {
        self.un(UnOp::Sqrt, fmath::sqrt, "sqrt")
    }

    pub fn sin(self) -> Var<'t> {
        self.un(UnOp::Sin, fmath::sin, "sin")
    }

    pub fn cos(self) -> Var<'t> {
        self.un(UnOp::Cos, fmath::cos, "cos")
    }

    pub fn tanh(self) -> Var<'t> {
        self.un(UnOp::Tanh, fmath::tanh, "tanh")
    }

    pub fn abs(self) -> Var<'t> {
        self.un(UnOp::Abs, fmath::abs, "abs")
    }

    pub fn powi(self, n: i32) -> Var<'t> {
        let v = fmath::powi(self.value(), n);
        let idx = self.tape.push(Node::Powi { a: self.idx, n }, v, "powi");
        Var {
            tape: self.tape,
            idx,
        }
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        let v = fmath::powf(self.value(), p);
        let idx = self
            .tape
            .push(Node::PowfConst { a: self.idx, p }, v, "powf");
        Var {
            tape: self.tape,
            idx,
        }
    }

    fn bin(self, rhs: Var<'t>, op: BinOp, name: &'static str) -> Var<'t> {
        debug_assert!(core::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        let (x, y) = (self.value(), rhs.value());
        let v = match op {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
        };
        let idx = self.tape.push(
            Node::Bin {
                op,
                a: self.idx,
                b: rhs.idx,
            },
            v,
            name,
        );
        Var {
            tape: self.tape,
            idx,
        }
    }
}

impl<'t> core::ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.bin(rhs, BinOp::Add, "add")
    }
}

impl<'t> core::ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.bin(rhs, BinOp::Sub, "sub")
    }
}

impl<'t> core::ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.bin(rhs, BinOp::Mul, "mul")
    }
}

impl<'t> core::ops::Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.bin(rhs, BinOp::Div, "div")
    }
}

impl<'t> core::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.un(UnOp::Neg, |x| -x, "neg")
    }
}

impl<'t> core::ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        let v = self.value() + c;
        let idx = self.tape.push(Node::AddConst { a: self.idx }, v, "add_const");
        Var {
            tape: self.tape,
            idx,
        }
    }
}

impl<'t> core::ops::Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> core::ops::Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self + (-c)
    }
}

impl<'t> core::ops::Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        -v + self
    }
}

impl<'t> core::ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        let v = self.value() * c;
        let idx = self
            .tape
            .push(Node::MulConst { a: self.idx, c }, v, "mul_const");
        Var {
            tape: self.tape,
            idx,
        }
    }
}

impl<'t> core::ops::Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> core::ops::Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        self * (1.0 / c)
    }
}

impl<'t> core::ops::Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        let c = v.tape.constant(self);
        c / v
    }
}

/// Evaluates `f` at `at` and returns its value together with the reverse-mode
/// gradient with respect to every entry of `at`.
///
/// Errors if any primitive produced a non-finite intermediate.
pub fn differentiate<F>(at: &[f64], f: F) -> Result<(f64, Vec<f64>), DiffError>
where
    F: for<'t> FnOnce(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let xs = tape.vars(at);
    let y = f(&tape, &xs);
    if let Some(fault) = tape.fault() {
        return Err(DiffError::NonFinite {
            op: fault.op,
            node: fault.node,
        });
    }
    let grads = tape.reverse(y);
    Ok((y.value(), grads.wrt_all(&xs)))
}

/// Central finite-difference gradient, the independent oracle the reverse
/// sweep is checked against throughout the test suites.
pub fn central_difference<F>(mut f: F, at: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = at.to_vec();
    let mut g = vec![0.0; at.len()];
    for i in 0..at.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// `||a - b|| / max(||b||, floor)`, the relative-error metric used by the
/// gradient checks.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>();
    fmath::sqrt(diff) / fmath::sqrt(norm).max(1e-12)
}

/// Matrix-vector product of a constant matrix with a tape vector, built from
/// scalar primitives.
pub fn matvec_const<'t>(tape: &'t Tape, m: &Mat, x: &[Var<'t>]) -> Vec<Var<'t>> {
    assert_eq!(m.cols(), x.len());
    (0..m.rows())
        .map(|i| {
            let terms: Vec<Var<'t>> = m
                .row(i)
                .iter()
                .zip(x)
                .map(|(&c, &v)| v * c)
                .collect();
            tape.sum(&terms)
        })
        .collect()
}

/// Solves `L y = b` for a constant lower-triangular factor and tape-valued
/// right-hand side. The factor is treated as constant under differentiation.
pub fn solve_lower_const<'t>(tape: &'t Tape, l: &Mat, b: &[Var<'t>]) -> Vec<Var<'t>> {
    let n = l.rows();
    assert_eq!(b.len(), n);
    let mut y: Vec<Var<'t>> = Vec::with_capacity(n);
    for i in 0..n {
        let mut terms: Vec<Var<'t>> = vec![b[i]];
        for (k, yk) in y.iter().enumerate().take(i) {
            terms.push(*yk * (-l.at(i, k)));
        }
        let s = tape.sum(&terms);
        y.push(s * (1.0 / l.at(i, i)));
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_in_place;

    #[test]
    fn square_gradient() {
        let (v, g) = differentiate(&[3.0], |_, x| x[0] * x[0]).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let (v, g) = differentiate(&[0.0], |_, x| x[0].tanh()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![1.0]);
    }

    fn composite<'t>(tape: &'t Tape, x: &[Var<'t>]) -> Var<'t> {
        let a = (x[0] * x[1]).sin() + x[2].exp() / (x[0] + 2.0);
        let b = (x[1] * x[1] + 1.0).sqrt().tanh();
        let c = x[2].abs() * x[0].powi(3);
        tape.sum(&[a, b, c])
    }

    #[test]
    fn composite_matches_finite_differences() {
        let at = [0.7, -1.3, 0.4];
        let (_, g) = differentiate(&at, |tape, x| composite(tape, x)).unwrap();
        let fd = central_difference(
            |p| {
                let tape = Tape::new();
                let xs = tape.vars(p);
                composite(&tape, &xs).value()
            },
            &at,
            1e-6,
        );
        assert!(relative_error(&g, &fd) < 1e-7, "{g:?} vs {fd:?}");
    }

    #[test]
    fn value_matches_plain_arithmetic() {
        let tape = Tape::new();
        let x = tape.var(1.37);
        let y = ((x * 2.0 + 0.5).exp() - x / 3.0).tanh();
        let plain = f64::tanh(f64::exp(1.37 * 2.0 + 0.5) - 1.37 / 3.0);
        assert!((y.value() - plain).abs() < 1e-15);
    }

    #[test]
    fn sum_is_pairwise_and_differentiable() {
        let tape = Tape::new();
        let xs = tape.vars(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = tape.sum(&xs);
        assert_eq!(s.value(), 15.0);
        let g = tape.reverse(s);
        for x in &xs {
            assert_eq!(g.wrt(*x), 1.0);
        }
    }

    #[test]
    fn abs_subgradient_zero_at_kink() {
        let (_, g) = differentiate(&[0.0], |_, x| x[0].abs()).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn non_finite_reports_primitive() {
        let err = differentiate(&[-1.0], |_, x| x[0].ln()).unwrap_err();
        match err {
            DiffError::NonFinite { op, .. } => assert_eq!(op, "ln"),
        }
    }

    #[test]
    fn division_rule() {
        let (_, g) = differentiate(&[2.0, 4.0], |_, x| x[0] / x[1]).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-15);
        assert!((g[1] + 2.0 / 16.0).abs() < 1e-15);
    }

    fn solve_energy<'t>(tape: &'t Tape, m: &Mat, l: &Mat, x: &[Var<'t>]) -> Var<'t> {
        let mx = matvec_const(tape, m, x);
        let y = solve_lower_const(tape, l, &mx);
        let sq: Vec<_> = y.iter().map(|v| *v * *v).collect();
        tape.sum(&sq)
    }

    #[test]
    fn matvec_const_and_triangular_solve_match_fd() {
        let mut spd = Mat::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ]);
        let m = spd.clone();
        cholesky_in_place(&mut spd).unwrap();
        let l = spd;

        let at = [0.3, -1.1, 0.8];
        let (_, g) = differentiate(&at, |tape, x| solve_energy(tape, &m, &l, x)).unwrap();
        let fd = central_difference(
            |p| {
                let tape = Tape::new();
                let xs = tape.vars(p);
                solve_energy(&tape, &m, &l, &xs).value()
            },
            &at,
            1e-6,
        );
        assert!(relative_error(&g, &fd) < 1e-7);
    }

    #[test]
    fn clear_retains_capacity_and_resets() {
        let mut tape = Tape::new();
        {
            let x = tape.var(1.0);
            let _y = x.exp() + x;
        }
        assert!(tape.len() > 0);
        tape.clear();
        assert!(tape.is_empty());
        assert!(tape.fault().is_none());
    }

    struct ScaledDot {
        weights: Vec<f64>,
    }

    impl CustomOp for ScaledDot {
        fn name(&self) -> &'static str {
            "scaled_dot"
        }
        fn arity(&self) -> usize {
            self.weights.len()
        }
        fn forward(&self, payload: f64, parents: &[f64], _cache: &mut [f64]) -> f64 {
            payload
                * parents
                    .iter()
                    .zip(&self.weights)
                    .map(|(p, w)| p * w)
                    .sum::<f64>()
        }
        fn backward(
            &self,
            payload: f64,
            _parents: &[f64],
            _value: f64,
            out_adj: f64,
            _cache: &[f64],
            parent_adj: &mut [f64],
        ) {
            for (pa, w) in parent_adj.iter_mut().zip(&self.weights) {
                *pa += out_adj * payload * w;
            }
        }
    }

    #[test]
    fn custom_op_roundtrip() {
        let tape = Tape::new();
        let op = tape.register_op(Rc::new(ScaledDot {
            weights: vec![1.0, 2.0, 3.0],
        }));
        let xs = tape.vars(&[4.0, 5.0, 6.0]);
        let y = tape.custom(op, &xs, 0.5);
        assert!((y.value() - 0.5 * 32.0).abs() < 1e-15);
        let g = tape.reverse(y);
        assert_eq!(g.wrt(xs[0]), 0.5);
        assert_eq!(g.wrt(xs[1]), 1.0);
        assert_eq!(g.wrt(xs[2]), 1.5);
    }
}
