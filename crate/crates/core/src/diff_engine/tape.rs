//! The operation tape and reverse-mode sweep.

use std::cell::RefCell;

use super::tensor::{self, Tensor};
use super::DiffError;

/// Handle to a node on a [`Tape`]. Cheap to copy; only valid on the tape
/// that created it.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    id: usize,
    tape: &'t Tape,
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].value.clone()
    }

    /// Accumulated gradient of this node from all `backward` calls since the
    /// last `zero_grad`.
    pub fn grad(&self) -> Tensor {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.inner.borrow().nodes[self.id].value.shape()
    }
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool },
    Add { a: usize, b: usize },
    AddRowBroadcast { a: usize, bias: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Log { a: usize },
    Mean { a: usize },
    ConcatRows { parts: Vec<usize> },
    ConcatCols { parts: Vec<usize> },
    SliceRows { a: usize, start: usize },
    SliceCols { a: usize, start: usize },
}

/// Records forward operations and replays them in reverse for gradients.
///
/// Construction and backward are single-threaded; independent tapes may run
/// on separate threads. Node values are immutable once written. Gradients
/// accumulate across repeated `backward` calls until `zero_grad`.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.borrow().nodes.is_empty()
    }

    /// Enters an input tensor as a leaf node. The values must be finite;
    /// leaves feed every downstream op, so a bad input is caught here.
    pub fn leaf(&self, value: Tensor) -> Result<Var<'_>, DiffError> {
        self.push("leaf", value, Op::Leaf)
    }

    /// `a * b` for [r, k] x [k, c].
    pub fn matmul<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.check_owned(a)?;
        self.check_owned(b)?;
        let (value, op) = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.nodes[a.id].value, &inner.nodes[b.id].value);
            if ta.cols() != tb.rows() {
                return Err(DiffError::ShapeMismatch { op: "matmul", lhs: ta.shape(), rhs: tb.shape() });
            }
            (tensor::matmul(ta, tb), Op::MatMul { a: a.id, b: b.id, trans_b: false })
        };
        self.push("matmul", value, op)
    }

    /// `a * b^T` for [r, k] x [c, k]. Lets parameter matrices keep their
    /// natural storage shape when they multiply from the right.
    pub fn matmul_nt<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.check_owned(a)?;
        self.check_owned(b)?;
        let (value, op) = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.nodes[a.id].value, &inner.nodes[b.id].value);
            if ta.cols() != tb.cols() {
                return Err(DiffError::ShapeMismatch {
                    op: "matmul_nt",
                    lhs: ta.shape(),
                    rhs: tb.shape(),
                });
            }
            (tensor::matmul_nt(ta, tb), Op::MatMul { a: a.id, b: b.id, trans_b: true })
        };
        self.push("matmul_nt", value, op)
    }

    pub fn add<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, DiffError> {
        let value = self.binary_same_shape("add", a, b, |x, y| x + y)?;
        self.push("add", value, Op::Add { a: a.id, b: b.id })
    }

    /// `a + bias` with `bias` a [1, c] row added to every row of `a`.
    /// The only broadcast in the engine.
    pub fn add_row_broadcast<'t>(&'t self, a: Var<'t>, bias: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.check_owned(a)?;
        self.check_owned(bias)?;
        let value = {
            let inner = self.inner.borrow();
            let (ta, tb) = (&inner.nodes[a.id].value, &inner.nodes[bias.id].value);
            if tb.rows() != 1 || tb.cols() != ta.cols() {
                return Err(DiffError::ShapeMismatch {
                    op: "add_row_broadcast",
                    lhs: ta.shape(),
                    rhs: tb.shape(),
                });
            }
            let mut out = ta.clone();
            for r in 0..out.rows() {
                for c in 0..out.cols() {
                    out.set(r, c, out.get(r, c) + tb.get(0, c));
                }
            }
            out
        };
        self.push("add_row_broadcast", value, Op::AddRowBroadcast { a: a.id, bias: bias.id })
    }

    pub fn sub<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, DiffError> {
        let value = self.binary_same_shape("sub", a, b, |x, y| x - y)?;
        self.push("sub", value, Op::Sub { a: a.id, b: b.id })
    }

    /// Elementwise product.
    pub fn mul<'t>(&'t self, a: Var<'t>, b: Var<'t>) -> Result<Var<'t>, DiffError> {
        let value = self.binary_same_shape("mul", a, b, |x, y| x * y)?;
        self.push("mul", value, Op::Mul { a: a.id, b: b.id })
    }

    pub fn sigmoid<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>, DiffError> {
        let value = self.unary_value(a, stable_sigmoid)?;
        self.push("sigmoid", value, Op::Sigmoid { a: a.id })
    }

    pub fn tanh<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>, DiffError> {
        let value = self.unary_value(a, f64::tanh)?;
        self.push("tanh", value, Op::Tanh { a: a.id })
    }

    /// Natural logarithm. Arguments at or below zero produce a non-finite
    /// output and therefore a numeric error.
    pub fn log<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>, DiffError> {
        let value = self.unary_value(a, f64::ln)?;
        self.push("log", value, Op::Log { a: a.id })
    }

    /// Mean over all entries, producing a scalar.
    pub fn mean<'t>(&'t self, a: Var<'t>) -> Result<Var<'t>, DiffError> {
        self.check_owned(a)?;
        let value = {
            let inner = self.inner.borrow();
            let t = &inner.nodes[a.id].value;
            Tensor::scalar(t.data().iter().sum::<f64>() / t.len() as f64)
        };
        self.push("mean", value, Op::Mean { a: a.id })
    }

    /// Stacks parts vertically; all must share the column count.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, DiffError> {
        if parts.is_empty() {
            return Err(DiffError::EmptyConcat);
        }
        for p in parts {
            self.check_owned(*p)?;
        }
        let value = {
            let inner = self.inner.borrow();
            let cols = inner.nodes[parts[0].id].value.cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = &inner.nodes[p.id].value;
                if t.cols() != cols {
                    return Err(DiffError::ShapeMismatch {
                        op: "concat_rows",
                        lhs: (rows, cols),
                        rhs: t.shape(),
                    });
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::from_vec(rows, cols, data)?
        };
        self.push("concat_rows", value, Op::ConcatRows { parts: parts.iter().map(|p| p.id).collect() })
    }

    /// Stacks parts side by side; all must share the row count.
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>, DiffError> {
        if parts.is_empty() {
            return Err(DiffError::EmptyConcat);
        }
        for p in parts {
            self.check_owned(*p)?;
        }
        let value = {
            let inner = self.inner.borrow();
            let rows = inner.nodes[parts[0].id].value.rows();
            let mut total_cols = 0;
            for p in parts {
                let t = &inner.nodes[p.id].value;
                if t.rows() != rows {
                    return Err(DiffError::ShapeMismatch {
                        op: "concat_cols",
                        lhs: (rows, total_cols),
                        rhs: t.shape(),
                    });
                }
                total_cols += t.cols();
            }
            let mut out = Tensor::zeros(rows, total_cols);
            let mut offset = 0;
            for p in parts {
                let t = &inner.nodes[p.id].value;
                for r in 0..rows {
                    for c in 0..t.cols() {
                        out.set(r, offset + c, t.get(r, c));
                    }
                }
                offset += t.cols();
            }
            out
        };
        self.push("concat_cols", value, Op::ConcatCols { parts: parts.iter().map(|p| p.id).collect() })
    }

    /// Rows `start..start + len` as a new node.
    pub fn slice_rows<'t>(&'t self, a: Var<'t>, start: usize, len: usize) -> Result<Var<'t>, DiffError> {
        self.check_owned(a)?;
        let value = {
            let inner = self.inner.borrow();
            let t = &inner.nodes[a.id].value;
            if len == 0 || start + len > t.rows() {
                return Err(DiffError::BadSlice { op: "slice_rows", start, len, extent: t.rows() });
            }
            let mut data = Vec::with_capacity(len * t.cols());
            for r in start..start + len {
                data.extend_from_slice(t.row_slice(r));
            }
            Tensor::from_vec(len, t.cols(), data)?
        };
        self.push("slice_rows", value, Op::SliceRows { a: a.id, start })
    }

    /// Columns `start..start + len` as a new node.
    pub fn slice_cols<'t>(&'t self, a: Var<'t>, start: usize, len: usize) -> Result<Var<'t>, DiffError> {
        self.check_owned(a)?;
        let value = {
            let inner = self.inner.borrow();
            let t = &inner.nodes[a.id].value;
            if len == 0 || start + len > t.cols() {
                return Err(DiffError::BadSlice { op: "slice_cols", start, len, extent: t.cols() });
            }
            let mut out = Tensor::zeros(t.rows(), len);
            for r in 0..t.rows() {
                for c in 0..len {
                    out.set(r, c, t.get(r, start + c));
                }
            }
            out
        };
        self.push("slice_cols", value, Op::SliceCols { a: a.id, start })
    }

    /// Reverse sweep from a scalar root. Every node reachable from the root
    /// receives `d root / d node` added into its stored gradient; repeated
    /// calls accumulate. Unreachable nodes keep their gradient untouched.
    pub fn backward(&self, root: Var<'_>) -> Result<(), DiffError> {
        self.check_owned(root)?;
        let mut inner = self.inner.borrow_mut();
        let (r, c) = inner.nodes[root.id].value.shape();
        if (r, c) != (1, 1) {
            return Err(DiffError::NotScalar { rows: r, cols: c });
        }

        // Per-call adjoints, flushed into stored grads at each node's visit.
        let mut adjoint: Vec<Option<Tensor>> = (0..=root.id).map(|_| None).collect();
        adjoint[root.id] = Some(Tensor::scalar(1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = adjoint[id].take() else { continue };
            let op = inner.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b, trans_b } => {
                    let (da, db) = {
                        let (ta, tb) = (&inner.nodes[a].value, &inner.nodes[b].value);
                        if trans_b {
                            // C = A B^T: dA = G B, dB = G^T A.
                            (tensor::matmul(&g, tb), tensor::matmul_tn(&g, ta))
                        } else {
                            // C = A B: dA = G B^T, dB = A^T G.
                            (tensor::matmul_nt(&g, tb), tensor::matmul_tn(ta, &g))
                        }
                    };
                    accumulate(&mut adjoint, a, da);
                    accumulate(&mut adjoint, b, db);
                }
                Op::Add { a, b } => {
                    accumulate(&mut adjoint, a, g.clone());
                    accumulate(&mut adjoint, b, g.clone());
                }
                Op::AddRowBroadcast { a, bias } => {
                    let mut db = Tensor::zeros(1, g.cols());
                    for row in 0..g.rows() {
                        for col in 0..g.cols() {
                            db.set(0, col, db.get(0, col) + g.get(row, col));
                        }
                    }
                    accumulate(&mut adjoint, a, g.clone());
                    accumulate(&mut adjoint, bias, db);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adjoint, a, g.clone());
                    accumulate(&mut adjoint, b, g.map(|v| -v));
                }
                Op::Mul { a, b } => {
                    let (da, db) = {
                        let (ta, tb) = (&inner.nodes[a].value, &inner.nodes[b].value);
                        (tensor::zip_map(&g, tb, |gv, bv| gv * bv), tensor::zip_map(&g, ta, |gv, av| gv * av))
                    };
                    accumulate(&mut adjoint, a, da);
                    accumulate(&mut adjoint, b, db);
                }
                Op::Sigmoid { a } => {
                    let da = tensor::zip_map(&g, &inner.nodes[id].value, |gv, s| gv * s * (1.0 - s));
                    accumulate(&mut adjoint, a, da);
                }
                Op::Tanh { a } => {
                    let da = tensor::zip_map(&g, &inner.nodes[id].value, |gv, t| gv * (1.0 - t * t));
                    accumulate(&mut adjoint, a, da);
                }
                Op::Log { a } => {
                    let da = tensor::zip_map(&g, &inner.nodes[a].value, |gv, x| gv / x);
                    accumulate(&mut adjoint, a, da);
                }
                Op::Mean { a } => {
                    let t = &inner.nodes[a].value;
                    let scale = g.get(0, 0) / t.len() as f64;
                    accumulate(&mut adjoint, a, Tensor::filled(t.rows(), t.cols(), scale));
                }
                Op::ConcatRows { parts } => {
                    let mut row = 0;
                    for p in parts {
                        let pr = inner.nodes[p].value.rows();
                        let mut dp = Tensor::zeros(pr, g.cols());
                        for r in 0..pr {
                            for c in 0..g.cols() {
                                dp.set(r, c, g.get(row + r, c));
                            }
                        }
                        row += pr;
                        accumulate(&mut adjoint, p, dp);
                    }
                }
                Op::ConcatCols { parts } => {
                    let mut col = 0;
                    for p in parts {
                        let pc = inner.nodes[p].value.cols();
                        let mut dp = Tensor::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            for c in 0..pc {
                                dp.set(r, c, g.get(r, col + c));
                            }
                        }
                        col += pc;
                        accumulate(&mut adjoint, p, dp);
                    }
                }
                Op::SliceRows { a, start } => {
                    let t = &inner.nodes[a].value;
                    let mut dp = Tensor::zeros(t.rows(), t.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dp.set(start + r, c, g.get(r, c));
                        }
                    }
                    accumulate(&mut adjoint, a, dp);
                }
                Op::SliceCols { a, start } => {
                    let t = &inner.nodes[a].value;
                    let mut dp = Tensor::zeros(t.rows(), t.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            dp.set(r, start + c, g.get(r, c));
                        }
                    }
                    accumulate(&mut adjoint, a, dp);
                }
            }
            inner.nodes[id].grad.add_assign(&g);
        }
        Ok(())
    }

    /// Clears all stored gradients.
    pub fn zero_grad(&self) {
        let mut inner = self.inner.borrow_mut();
        for node in &mut inner.nodes {
            let (r, c) = node.value.shape();
            node.grad = Tensor::zeros(r, c);
        }
    }

    fn binary_same_shape<'t>(
        &'t self,
        op: &'static str,
        a: Var<'t>,
        b: Var<'t>,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, DiffError> {
        self.check_owned(a)?;
        self.check_owned(b)?;
        let inner = self.inner.borrow();
        let (ta, tb) = (&inner.nodes[a.id].value, &inner.nodes[b.id].value);
        if ta.shape() != tb.shape() {
            return Err(DiffError::ShapeMismatch { op, lhs: ta.shape(), rhs: tb.shape() });
        }
        Ok(tensor::zip_map(ta, tb, f))
    }

    fn unary_value<'t>(&'t self, a: Var<'t>, f: impl Fn(f64) -> f64) -> Result<Tensor, DiffError> {
        self.check_owned(a)?;
        let inner = self.inner.borrow();
        Ok(inner.nodes[a.id].value.map(f))
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>, DiffError> {
        if !value.all_finite() {
            return Err(DiffError::NonFinite { op: name });
        }
        let mut inner = self.inner.borrow_mut();
        let (r, c) = value.shape();
        let id = inner.nodes.len();
        inner.nodes.push(Node { value, grad: Tensor::zeros(r, c), op });
        Ok(Var { id, tape: self })
    }

    fn check_owned(&self, var: Var<'_>) -> Result<(), DiffError> {
        if std::ptr::eq(var.tape, self) {
            Ok(())
        } else {
            Err(DiffError::ForeignVariable)
        }
    }
}

fn accumulate(adjoint: &mut [Option<Tensor>], id: usize, contribution: Tensor) {
    match &mut adjoint[id] {
        Some(t) => t.add_assign(&contribution),
        slot @ None => *slot = Some(contribution),
    }
}

/// `1 / (1 + e^(-x))` evaluated without overflowing for very negative `x`.
fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::super::grad_check;
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn sigmoid_closed_forms() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0)).unwrap();
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(s.value().get(0, 0), 0.5);
        tape.backward(s).unwrap();
        assert_eq!(x.grad().get(0, 0), 0.25);
    }

    #[test]
    fn sigmoid_is_stable_for_large_negative_inputs() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(-745.0)).unwrap();
        let s = tape.sigmoid(x).unwrap();
        // The naive form 1/(1 + e^745) overflows the denominator and returns
        // exactly 0; the stable branch keeps a subnormal positive value.
        assert!(s.value().get(0, 0) > 0.0);
        let y = tape.leaf(Tensor::scalar(745.0)).unwrap();
        let sy = tape.sigmoid(y).unwrap();
        assert_eq!(sy.value().get(0, 0), 1.0);
    }

    #[test]
    fn matmul_identity_passthrough() {
        let tape = Tape::new();
        let eye = Tensor::from_vec(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let i = tape.leaf(eye).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xt = random_tensor(&mut rng, 3, 4, -2.0, 2.0);
        let x = tape.leaf(xt.clone()).unwrap();
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(y.value(), xt);
    }

    #[test]
    fn mean_backward_is_uniform() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
        let m = tape.mean(x).unwrap();
        assert_relative_eq!(m.value().get(0, 0), 3.5, epsilon = 1e-15);
        tape.backward(m).unwrap();
        for &g in x.grad().data() {
            assert_relative_eq!(g, 1.0 / 6.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ta = random_tensor(&mut rng, 2, 3, -1.0, 1.0);
        let tb = random_tensor(&mut rng, 1, 3, -1.0, 1.0);
        let a = tape.leaf(ta.clone()).unwrap();
        let b = tape.leaf(tb.clone()).unwrap();
        let cat = tape.concat_rows(&[a, b]).unwrap();
        assert_eq!(cat.shape(), (3, 3));
        let back_a = tape.slice_rows(cat, 0, 2).unwrap();
        let back_b = tape.slice_rows(cat, 2, 1).unwrap();
        assert_eq!(back_a.value(), ta);
        assert_eq!(back_b.value(), tb);

        let wide = tape.concat_cols(&[a, a]).unwrap();
        assert_eq!(wide.shape(), (2, 6));
        assert_eq!(tape.slice_cols(wide, 3, 3).unwrap().value(), ta);
    }

    #[test]
    fn unreachable_variable_keeps_zero_grad() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0)).unwrap();
        let y = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let out = tape.mul(x, x).unwrap();
        tape.backward(out).unwrap();
        assert_eq!(x.grad().get(0, 0), 4.0);
        assert_eq!(y.grad().get(0, 0), 0.0);
    }

    #[test]
    fn repeated_backward_accumulates_linearly() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0)).unwrap();
        let out = tape.mul(x, x).unwrap();
        tape.backward(out).unwrap();
        tape.backward(out).unwrap();
        assert_eq!(x.grad().get(0, 0), 12.0);
        tape.zero_grad();
        tape.backward(out).unwrap();
        assert_eq!(x.grad().get(0, 0), 6.0);
    }

    #[test]
    fn diamond_reuse_sums_both_paths() {
        // out = mean(x*x + x*x): d out/dx = 4x elementwise / len.
        let tape = Tape::new();
        let x = tape.leaf(Tensor::row(&[1.0, 2.0])).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let sum = tape.add(sq, sq).unwrap();
        let out = tape.mean(sum).unwrap();
        tape.backward(out).unwrap();
        assert_relative_eq!(x.grad().get(0, 0), 4.0 * 1.0 / 2.0, epsilon = 1e-15);
        assert_relative_eq!(x.grad().get(0, 1), 4.0 * 2.0 / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2)).unwrap();
        assert!(matches!(tape.backward(x), Err(DiffError::NotScalar { rows: 2, cols: 2 })));
    }

    #[test]
    fn cross_tape_variables_are_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.leaf(Tensor::scalar(1.0)).unwrap();
        let b = t2.leaf(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(t1.add(a, b), Err(DiffError::ForeignVariable)));
    }

    #[test]
    fn shape_and_domain_errors() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3)).unwrap();
        let b = tape.leaf(Tensor::zeros(2, 2)).unwrap();
        assert!(matches!(tape.add(a, b), Err(DiffError::ShapeMismatch { op: "add", .. })));
        assert!(matches!(tape.matmul(a, a), Err(DiffError::ShapeMismatch { op: "matmul", .. })));
        assert!(matches!(
            tape.slice_rows(a, 1, 3),
            Err(DiffError::BadSlice { op: "slice_rows", start: 1, len: 3, extent: 2 })
        ));
        assert!(matches!(tape.slice_cols(a, 0, 0), Err(DiffError::BadSlice { .. })));
        assert!(matches!(tape.concat_rows(&[]), Err(DiffError::EmptyConcat)));

        let neg = tape.leaf(Tensor::scalar(-1.0)).unwrap();
        assert!(matches!(tape.log(neg), Err(DiffError::NonFinite { op: "log" })));
        let zero = tape.leaf(Tensor::scalar(0.0)).unwrap();
        assert!(matches!(tape.log(zero), Err(DiffError::NonFinite { op: "log" })));
        assert!(matches!(
            tape.leaf(Tensor::scalar(f64::NAN)),
            Err(DiffError::NonFinite { op: "leaf" })
        ));
    }

    #[test]
    fn backward_linearity() {
        // grad(a f + b g) = a grad(f) + b grad(g) exactly at shared inputs.
        let point = Tensor::row(&[0.3, -0.7, 1.1]);
        let (a, b) = (1.7, -0.4);

        let grads = |with_combined: bool| -> Vec<f64> {
            let tape = Tape::new();
            let x = tape.leaf(point.clone()).unwrap();
            let f = tape.mean(tape.sigmoid(x).unwrap()).unwrap();
            let g = tape.mean(tape.mul(x, x).unwrap()).unwrap();
            if with_combined {
                let af = tape.mul(tape.leaf(Tensor::scalar(a)).unwrap(), f).unwrap();
                let bg = tape.mul(tape.leaf(Tensor::scalar(b)).unwrap(), g).unwrap();
                let out = tape.add(af, bg).unwrap();
                tape.backward(out).unwrap();
                x.grad().data().to_vec()
            } else {
                tape.backward(f).unwrap();
                let gf = x.grad().data().to_vec();
                tape.zero_grad();
                tape.backward(g).unwrap();
                let gg = x.grad().data().to_vec();
                gf.iter().zip(&gg).map(|(p, q)| a * p + b * q).collect()
            }
        };

        let combined = grads(true);
        let separate = grads(false);
        for (c, s) in combined.iter().zip(&separate) {
            assert!((c - s).abs() < 1e-12, "{c} vs {s}");
        }
    }

    #[test]
    fn gradients_are_bitwise_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let tape = Tape::new();
            let x = tape.leaf(random_tensor(&mut rng, 3, 3, -2.0, 2.0)).unwrap();
            let w = tape.leaf(random_tensor(&mut rng, 3, 3, -1.0, 1.0)).unwrap();
            let h = tape.tanh(tape.matmul(x, w).unwrap()).unwrap();
            let out = tape.mean(tape.mul(h, h).unwrap()).unwrap();
            tape.backward(out).unwrap();
            (x.grad().data().to_vec(), w.grad().data().to_vec())
        };
        let (x1, w1) = run();
        let (x2, w2) = run();
        assert_eq!(x1, x2);
        assert_eq!(w1, w2);
    }

    /// Reduces `v` to a scalar with fixed random weights so every entry of
    /// the op output influences the root unequally.
    fn weighted_scalar<'t>(tape: &'t Tape, v: Var<'t>, seed: u64) -> Var<'t> {
        let (r, c) = v.shape();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.leaf(random_tensor(&mut rng, r, c, 0.5, 1.5)).unwrap();
        tape.mean(tape.mul(v, w).unwrap()).unwrap()
    }

    #[test]
    fn every_op_matches_finite_differences() {
        // 6 trials per op-argument role, >= 100 total checks, h = 1e-5,
        // inputs in [-2, 2] (log inputs shifted positive).
        let h = 1e-5;
        let tol = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        for trial in 0..6u64 {
            let r = rng.gen_range(1..=4usize);
            let c = rng.gen_range(1..=4usize);
            let k = rng.gen_range(1..=4usize);
            let fixed_rc = random_tensor(&mut rng, r, c, -2.0, 2.0);
            let fixed_kc = random_tensor(&mut rng, k, c, -2.0, 2.0);
            let fixed_rk = random_tensor(&mut rng, r, k, -2.0, 2.0);
            let fixed_ck = random_tensor(&mut rng, c, k, -2.0, 2.0);
            let fixed_bias = random_tensor(&mut rng, 1, c, -2.0, 2.0);
            let point_rc = random_tensor(&mut rng, r, c, -2.0, 2.0);
            let point_rk = random_tensor(&mut rng, r, k, -2.0, 2.0);
            let point_pos = random_tensor(&mut rng, r, c, 0.2, 2.2);

            let mut cases: Vec<(&str, f64)> = Vec::new();

            let fkc = fixed_kc.clone();
            cases.push((
                "matmul lhs",
                grad_check(
                    |t, x| {
                        let b = t.leaf(fkc.clone())?;
                        Ok(weighted_scalar(t, t.matmul(x, b)?, trial))
                    },
                    &point_rk,
                    h,
                )
                .unwrap(),
            ));
            let frk = fixed_rk.clone();
            cases.push((
                "matmul rhs",
                grad_check(
                    |t, x| {
                        let a = t.leaf(frk.clone())?;
                        Ok(weighted_scalar(t, t.matmul(a, x)?, trial))
                    },
                    &fixed_kc,
                    h,
                )
                .unwrap(),
            ));
            let fck = fixed_ck.clone();
            cases.push((
                "matmul_nt lhs",
                grad_check(
                    |t, x| {
                        let b = t.leaf(fck.clone())?;
                        Ok(weighted_scalar(t, t.matmul_nt(x, b)?, trial))
                    },
                    &point_rk,
                    h,
                )
                .unwrap(),
            ));
            let frk2 = fixed_rk.clone();
            cases.push((
                "matmul_nt rhs",
                grad_check(
                    |t, x| {
                        let a = t.leaf(frk2.clone())?;
                        Ok(weighted_scalar(t, t.matmul_nt(a, x)?, trial))
                    },
                    &fixed_ck,
                    h,
                )
                .unwrap(),
            ));
            for (name, swap) in [("add lhs", false), ("add rhs", true)] {
                let other = fixed_rc.clone();
                cases.push((
                    name,
                    grad_check(
                        move |t, x| {
                            let o = t.leaf(other.clone())?;
                            let s = if swap { t.add(o, x)? } else { t.add(x, o)? };
                            Ok(weighted_scalar(t, s, trial))
                        },
                        &point_rc,
                        h,
                    )
                    .unwrap(),
                ));
            }
            for (name, swap) in [("sub lhs", false), ("sub rhs", true)] {
                let other = fixed_rc.clone();
                cases.push((
                    name,
                    grad_check(
                        move |t, x| {
                            let o = t.leaf(other.clone())?;
                            let s = if swap { t.sub(o, x)? } else { t.sub(x, o)? };
                            Ok(weighted_scalar(t, s, trial))
                        },
                        &point_rc,
                        h,
                    )
                    .unwrap(),
                ));
            }
            for (name, swap) in [("mul lhs", false), ("mul rhs", true)] {
                let other = fixed_rc.clone();
                cases.push((
                    name,
                    grad_check(
                        move |t, x| {
                            let o = t.leaf(other.clone())?;
                            let s = if swap { t.mul(o, x)? } else { t.mul(x, o)? };
                            Ok(weighted_scalar(t, s, trial))
                        },
                        &point_rc,
                        h,
                    )
                    .unwrap(),
                ));
            }
            let fb = fixed_bias.clone();
            cases.push((
                "add_row_broadcast matrix",
                grad_check(
                    |t, x| {
                        let bias = t.leaf(fb.clone())?;
                        Ok(weighted_scalar(t, t.add_row_broadcast(x, bias)?, trial))
                    },
                    &point_rc,
                    h,
                )
                .unwrap(),
            ));
            let frc = fixed_rc.clone();
            cases.push((
                "add_row_broadcast bias",
                grad_check(
                    |t, x| {
                        let a = t.leaf(frc.clone())?;
                        Ok(weighted_scalar(t, t.add_row_broadcast(a, x)?, trial))
                    },
                    &fixed_bias,
                    h,
                )
                .unwrap(),
            ));
            cases.push((
                "sigmoid",
                grad_check(|t, x| Ok(weighted_scalar(t, t.sigmoid(x)?, trial)), &point_rc, h).unwrap(),
            ));
            cases.push((
                "tanh",
                grad_check(|t, x| Ok(weighted_scalar(t, t.tanh(x)?, trial)), &point_rc, h).unwrap(),
            ));
            cases.push((
                "log",
                grad_check(|t, x| Ok(weighted_scalar(t, t.log(x)?, trial)), &point_pos, h).unwrap(),
            ));
            cases.push(("mean", grad_check(|t, x| t.mean(x), &point_rc, h).unwrap()));
            let frc2 = fixed_rc.clone();
            cases.push((
                "concat_rows part",
                grad_check(
                    |t, x| {
                        let o = t.leaf(frc2.clone())?;
                        Ok(weighted_scalar(t, t.concat_rows(&[o, x])?, trial))
                    },
                    &point_rc,
                    h,
                )
                .unwrap(),
            ));
            let frc3 = fixed_rc.clone();
            cases.push((
                "concat_cols part",
                grad_check(
                    |t, x| {
                        let o = t.leaf(frc3.clone())?;
                        Ok(weighted_scalar(t, t.concat_cols(&[x, o])?, trial))
                    },
                    &point_rc,
                    h,
                )
                .unwrap(),
            ));
            cases.push((
                "slice_rows",
                grad_check(
                    |t, x| Ok(weighted_scalar(t, t.slice_rows(x, 0, 1)?, trial)),
                    &point_rc,
                    h,
                )
                .unwrap(),
            ));
            cases.push((
                "slice_cols",
                grad_check(
                    |t, x| Ok(weighted_scalar(t, t.slice_cols(x, c - 1, 1)?, trial)),
                    &point_rc,
                    h,
                )
                .unwrap(),
            ));

            for (name, err) in cases {
                assert!(err < tol, "{name} rel err {err} at trial {trial}");
            }
        }
    }
}
