//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Every value on a [`Tape`] is a 2-D array. [`Tape::grad`] records the
//! backward pass as ordinary tape nodes, so the returned gradients can be
//! differentiated again (needed by the R1 and gradient-penalty regularizers).

use std::cell::RefCell;
use std::rc::Rc;

use ndarray::{Array2, Axis};

use crate::conjugate::log1p_exp;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Copy, Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, ta: bool, tb: bool },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a (n×m) + b (1×m)` broadcast over rows.
    AddRow(usize, usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    Fill(usize),
    SumRows(usize),
    SumCols(usize),
    Sum(usize),
    Scale(usize, T),
    AddScalar(usize),
    Sigmoid(usize),
    Exp(usize),
    Softplus(usize),
    Sqrt(usize),
    /// `0.5 / s`, zero where `s == 0`.
    HalfRecip(usize),
}

impl<T> Op<T> {
    fn inputs(&self) -> [Option<usize>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul { a, b, .. } => [Some(a), Some(b)],
            Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => [Some(a), Some(b)],
            BroadcastRows(a)
            | BroadcastCols(a)
            | Fill(a)
            | SumRows(a)
            | SumCols(a)
            | Sum(a)
            | Scale(a, _)
            | AddScalar(a)
            | Sigmoid(a)
            | Exp(a)
            | Softplus(a)
            | Sqrt(a)
            | HalfRecip(a) => [Some(a), None],
        }
    }
}

struct Node<T> {
    value: Rc<Array2<T>>,
    op: Op<T>,
}

/// Append-only computation graph.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Array2<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Records an input. Any leaf can be a differentiation target.
    pub fn leaf(&self, value: Array2<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    /// Gradients of the 1×1 `output` with respect to each of `wrt`.
    ///
    /// The backward pass is itself recorded, so the results are
    /// differentiable.
    pub fn grad<'t>(&'t self, output: Var<'t, T>, wrt: &[Var<'t, T>]) -> Vec<Var<'t, T>> {
        assert_eq!(output.shape(), (1, 1), "grad needs a scalar output");
        let len = output.id + 1;
        let ops: Vec<Op<T>> = self.nodes.borrow()[..len].iter().map(|n| n.op).collect();

        // Nodes through which some `wrt` variable influences `output`.
        let mut relevant = vec![false; len];
        for w in wrt {
            if w.id < len {
                relevant[w.id] = true;
            }
        }
        for id in 0..len {
            if !relevant[id] {
                relevant[id] = ops[id].inputs().iter().flatten().any(|&i| relevant[i]);
            }
        }

        let mut grads: Vec<Option<Var<'t, T>>> = vec![None; len];
        grads[output.id] = Some(self.scalar(T::one()));
        for id in (0..len).rev() {
            if !relevant[id] {
                continue;
            }
            let Some(g) = grads[id] else { continue };
            let this = Var { tape: self, id };
            let mut send = |input: usize, contrib: Var<'t, T>| {
                grads[input] = Some(match grads[input] {
                    Some(prev) => prev + contrib,
                    None => contrib,
                });
            };
            let var = |i: usize| Var { tape: self, id: i };
            match ops[id] {
                Op::Leaf => {}
                Op::MatMul { a, b, ta, tb } => {
                    let (va, vb) = (var(a), var(b));
                    if relevant[a] {
                        let da = if ta {
                            vb.matmul_t(g, tb, true)
                        } else {
                            g.matmul_t(vb, false, !tb)
                        };
                        send(a, da);
                    }
                    if relevant[b] {
                        let db = if tb {
                            g.matmul_t(va, true, ta)
                        } else {
                            va.matmul_t(g, !ta, false)
                        };
                        send(b, db);
                    }
                }
                Op::Add(a, b) => {
                    if relevant[a] {
                        send(a, g);
                    }
                    if relevant[b] {
                        send(b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if relevant[a] {
                        send(a, g);
                    }
                    if relevant[b] {
                        send(b, -g);
                    }
                }
                Op::Mul(a, b) => {
                    if relevant[a] {
                        send(a, g * var(b));
                    }
                    if relevant[b] {
                        send(b, g * var(a));
                    }
                }
                Op::AddRow(a, b) => {
                    if relevant[a] {
                        send(a, g);
                    }
                    if relevant[b] {
                        send(b, g.sum_rows());
                    }
                }
                Op::BroadcastRows(a) => send(a, g.sum_rows()),
                Op::BroadcastCols(a) => send(a, g.sum_cols()),
                Op::Fill(a) => send(a, g.sum()),
                Op::SumRows(a) => {
                    let n = var(a).shape().0;
                    send(a, g.broadcast_rows(n));
                }
                Op::SumCols(a) => {
                    let m = var(a).shape().1;
                    send(a, g.broadcast_cols(m));
                }
                Op::Sum(a) => {
                    let (r, c) = var(a).shape();
                    send(a, g.fill(r, c));
                }
                Op::Scale(a, k) => send(a, g.scale(k)),
                Op::AddScalar(a) => send(a, g),
                Op::Sigmoid(a) => {
                    let one_minus = this.scale(-T::one()).add_scalar(T::one());
                    send(a, g * this * one_minus);
                }
                Op::Exp(a) => send(a, g * this),
                Op::Softplus(a) => send(a, g * var(a).sigmoid()),
                Op::Sqrt(a) => send(a, g * this.half_recip()),
                Op::HalfRecip(a) => {
                    // d(0.5/s) = −0.5/s² = −2·(0.5/s)²
                    send(a, g * (this * this).scale(lit(-2.0)));
                }
            }
        }

        wrt.iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = w.shape();
                    self.leaf(Array2::zeros((r, c)))
                }
            })
            .collect()
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Array2<T>> {
        self.tape.value_of(self.id)
    }

    /// Value of a 1×1 variable.
    pub fn item(&self) -> T {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on a non-scalar variable");
        v[[0, 0]]
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.dim()
    }

    fn unary(self, op: Op<T>, f: impl Fn(&Array2<T>) -> Array2<T>) -> Self {
        let v = self.value();
        self.tape.push(f(&v), op)
    }

    fn binary(self, other: Self, op: Op<T>, f: impl Fn(&Array2<T>, &Array2<T>) -> Array2<T>) -> Self {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let (a, b) = (self.value(), other.value());
        self.tape.push(f(&a, &b), op)
    }

    /// `op(self) · op(other)` where `op` optionally transposes.
    pub fn matmul_t(self, other: Self, ta: bool, tb: bool) -> Self {
        self.binary(
            other,
            Op::MatMul {
                a: self.id,
                b: other.id,
                ta,
                tb,
            },
            |a, b| {
                let av = if ta { a.t() } else { a.view() };
                let bv = if tb { b.t() } else { b.view() };
                av.dot(&bv)
            },
        )
    }

    pub fn matmul(self, other: Self) -> Self {
        self.matmul_t(other, false, false)
    }

    /// Adds a 1×m row to every row of `self`.
    pub fn add_row(self, row: Self) -> Self {
        self.binary(row, Op::AddRow(self.id, row.id), |a, b| a + b)
    }

    pub fn broadcast_rows(self, n: usize) -> Self {
        self.unary(Op::BroadcastRows(self.id), |a| {
            let m = a.ncols();
            a.broadcast((n, m)).expect("broadcast 1×m").to_owned()
        })
    }

    pub fn broadcast_cols(self, m: usize) -> Self {
        self.unary(Op::BroadcastCols(self.id), |a| {
            let n = a.nrows();
            a.broadcast((n, m)).expect("broadcast n×1").to_owned()
        })
    }

    pub fn fill(self, rows: usize, cols: usize) -> Self {
        self.unary(Op::Fill(self.id), |a| Array2::from_elem((rows, cols), a[[0, 0]]))
    }

    /// Column sums as a 1×m row.
    pub fn sum_rows(self) -> Self {
        self.unary(Op::SumRows(self.id), |a| a.sum_axis(Axis(0)).insert_axis(Axis(0)))
    }

    /// Per-row sums as an n×1 column.
    pub fn sum_cols(self) -> Self {
        self.unary(Op::SumCols(self.id), |a| a.sum_axis(Axis(1)).insert_axis(Axis(1)))
    }

    pub fn sum(self) -> Self {
        self.unary(Op::Sum(self.id), |a| Array2::from_elem((1, 1), a.sum()))
    }

    pub fn mean(self) -> Self {
        let (r, c) = self.shape();
        self.sum().scale(T::one() / lit::<T>((r * c) as f64))
    }

    pub fn scale(self, k: T) -> Self {
        self.unary(Op::Scale(self.id, k), |a| a * k)
    }

    pub fn add_scalar(self, k: T) -> Self {
        self.unary(Op::AddScalar(self.id), |a| a + k)
    }

    pub fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid(self.id), |a| {
            let mut out = a.as_standard_layout().into_owned();
            T::sigmoid_slice(out.as_slice_mut().expect("standard layout"));
            out
        })
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp(self.id), |a| a.mapv(T::exp))
    }

    /// Stable `log(1 + eˣ)`.
    pub fn softplus(self) -> Self {
        self.unary(Op::Softplus(self.id), |a| a.mapv(log1p_exp))
    }

    /// Square root with a zero subgradient at 0.
    pub fn sqrt(self) -> Self {
        self.unary(Op::Sqrt(self.id), |a| a.mapv(T::sqrt))
    }

    fn half_recip(self) -> Self {
        self.unary(Op::HalfRecip(self.id), |a| {
            a.mapv(|s| if s > T::zero() { lit::<T>(0.5) / s } else { T::zero() })
        })
    }

    pub fn square(self) -> Self {
        self * self
    }

    /// `x·σ(x)`.
    pub fn silu(self) -> Self {
        self * self.sigmoid()
    }
}

impl<'t, T: Scalar> std::ops::Add for Var<'t, T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Add(self.id, rhs.id), |a, b| a + b)
    }
}

impl<'t, T: Scalar> std::ops::Sub for Var<'t, T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Sub(self.id, rhs.id), |a, b| a - b)
    }
}

impl<'t, T: Scalar> std::ops::Mul for Var<'t, T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Mul(self.id, rhs.id), |a, b| a * b)
    }
}

impl<'t, T: Scalar> std::ops::Neg for Var<'t, T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-T::one())
    }
}
