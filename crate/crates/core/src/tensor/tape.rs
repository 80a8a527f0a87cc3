use std::cell::{Ref, RefCell};
use std::fmt;

use super::kernels::{col2im3, gemm, im2col3, permute, split_axis};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `x[.., n] + bias[n]`
    AddRow(usize, usize),
    Scale(usize, T),
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_b: bool,
    },
    Permute {
        x: usize,
        axes: Vec<usize>,
    },
    Reshape(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gelu(usize),
    Abs(usize),
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        cols: Vec<T>,
        batch: usize,
        len: usize,
        cin: usize,
        cout: usize,
    },
    Sum(usize),
    IndexSelect {
        x: usize,
        axis: usize,
        index: Vec<usize>,
    },
    Concat {
        xs: Vec<usize>,
        axis: usize,
    },
    QuatMul(usize, usize),
    QuatRotate(usize, usize),
    NormalizeLast(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation. A tape is built and
/// consumed on a single thread; build a fresh one per forward pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients from one backward pass, indexed by tape node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visited: usize,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; `None` if `v` does not influence the loss or does
    /// not require gradients.
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(v.id).and_then(Option::take)
    }

    /// Number of tape nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Ref<'_, Tensor<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Back-propagates from a one-element `loss`, visiting every node that
    /// depends on a trainable leaf exactly once, in reverse creation order.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));
        let mut visited = 0;
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            backward_op(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }
}

fn acc<'g, T: Real>(grads: &'g mut [Option<Tensor<T>>], nodes: &[Node<T>], id: usize) -> Option<&'g mut [T]> {
    if !nodes[id].requires_grad {
        return None;
    }
    let shape = nodes[id].value.shape();
    Some(grads[id].get_or_insert_with(|| Tensor::zeros(shape)).data_mut())
}

fn backward_op<T: Real>(nodes: &[Node<T>], id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let gd = g.data();
    let val = |i: usize| nodes[i].value.data();
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &i in [a, b] {
                if let Some(d) = acc(grads, nodes, i) {
                    d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = acc(grads, nodes, *a) {
                d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = acc(grads, nodes, *b) {
                d.iter_mut().zip(gd).for_each(|(d, &g)| *d -= g);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if let Some(d) = acc(grads, nodes, *a) {
                for i in 0..d.len() {
                    d[i] += gd[i] * vb[i];
                }
            }
            if let Some(d) = acc(grads, nodes, *b) {
                for i in 0..d.len() {
                    d[i] += gd[i] * va[i];
                }
            }
        }
        Op::AddRow(x, b) => {
            if let Some(d) = acc(grads, nodes, *x) {
                d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = acc(grads, nodes, *b) {
                let n = d.len();
                for row in gd.chunks_exact(n) {
                    d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(d) = acc(grads, nodes, *x) {
                d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g * *c);
            }
        }
        &Op::MatMul { a, b, batch, m, k, n, shared_b } => {
            let (va, vb) = (val(a), val(b));
            if let Some(d) = acc(grads, nodes, a) {
                if shared_b {
                    gemm(batch * m, n, k, gd, false, vb, true, d, true);
                } else {
                    for i in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &gd[i * m * n..],
                            false,
                            &vb[i * k * n..],
                            true,
                            &mut d[i * m * k..(i + 1) * m * k],
                            true,
                        );
                    }
                }
            }
            if let Some(d) = acc(grads, nodes, b) {
                if shared_b {
                    gemm(k, batch * m, n, va, true, gd, false, d, true);
                } else {
                    for i in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &va[i * m * k..],
                            true,
                            &gd[i * m * n..],
                            false,
                            &mut d[i * k * n..(i + 1) * k * n],
                            true,
                        );
                    }
                }
            }
        }
        Op::Permute { x, axes } => {
            if let Some(d) = acc(grads, nodes, *x) {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (back, _) = permute(gd, g.shape(), &inverse);
                d.iter_mut().zip(back).for_each(|(d, g)| *d += g);
            }
        }
        Op::Reshape(x) => {
            if let Some(d) = acc(grads, nodes, *x) {
                d.iter_mut().zip(gd).for_each(|(d, &g)| *d += g);
            }
        }
        &Op::Softmax { x, axis } => {
            if let Some(d) = acc(grads, nodes, x) {
                let y = nodes[id].value.data();
                let (outer, len, inner) = split_axis(g.shape(), axis);
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| o * len * inner + k * inner + i;
                        let dot: T = (0..len).map(|k| gd[at(k)] * y[at(k)]).sum();
                        for k in 0..len {
                            d[at(k)] += y[at(k)] * (gd[at(k)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let gam = val(*gamma);
            let f = gam.len();
            if let Some(d) = acc(grads, nodes, *x) {
                let inv_f = T::one() / T::lit(f as f64);
                for (r, ((grow, xrow), drow)) in
                    gd.chunks_exact(f).zip(xhat.chunks_exact(f)).zip(d.chunks_exact_mut(f)).enumerate()
                {
                    let mut mean_dx = T::zero();
                    let mut mean_dx_x = T::zero();
                    for i in 0..f {
                        let dxh = grow[i] * gam[i];
                        mean_dx += dxh;
                        mean_dx_x += dxh * xrow[i];
                    }
                    mean_dx *= inv_f;
                    mean_dx_x *= inv_f;
                    for i in 0..f {
                        let dxh = grow[i] * gam[i];
                        drow[i] += rstd[r] * (dxh - mean_dx - xrow[i] * mean_dx_x);
                    }
                }
            }
            if let Some(d) = acc(grads, nodes, *gamma) {
                for (grow, xrow) in gd.chunks_exact(f).zip(xhat.chunks_exact(f)) {
                    for i in 0..f {
                        d[i] += grow[i] * xrow[i];
                    }
                }
            }
            if let Some(d) = acc(grads, nodes, *beta) {
                for grow in gd.chunks_exact(f) {
                    d.iter_mut().zip(grow).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Gelu(x) => {
            let vx = val(*x);
            if let Some(d) = acc(grads, nodes, *x) {
                let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
                let inv_sqrt2pi = T::lit(0.398_942_280_401_432_7);
                let half = T::lit(0.5);
                for i in 0..d.len() {
                    let v = vx[i];
                    let cdf = half * (T::one() + (v * inv_sqrt2).erf());
                    let pdf = inv_sqrt2pi * (-half * v * v).exp();
                    d[i] += gd[i] * (cdf + v * pdf);
                }
            }
        }
        Op::Abs(x) => {
            let vx = val(*x);
            if let Some(d) = acc(grads, nodes, *x) {
                for i in 0..d.len() {
                    let s = if vx[i] > T::zero() {
                        T::one()
                    } else if vx[i] < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    d[i] += gd[i] * s;
                }
            }
        }
        &Op::Conv1d { x, w, b, ref cols, batch, len, cin, cout } => {
            let rows = batch * len;
            let kdim = cin * 3;
            if let Some(d) = acc(grads, nodes, w) {
                // dW[cout, cin*3] += dY^T [cout, rows] * cols [rows, cin*3]
                gemm(cout, rows, kdim, gd, true, cols, false, d, true);
            }
            if let Some(d) = acc(grads, nodes, b) {
                for row in gd.chunks_exact(cout) {
                    d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
            if nodes[x].requires_grad {
                let mut dcols = vec![T::zero(); rows * kdim];
                gemm(rows, cout, kdim, gd, false, val(w), false, &mut dcols, false);
                let d = acc(grads, nodes, x).expect("requires grad");
                col2im3(&dcols, d, batch, len, cin);
            }
        }
        Op::Sum(x) => {
            if let Some(d) = acc(grads, nodes, *x) {
                let g0 = gd[0];
                d.iter_mut().for_each(|d| *d += g0);
            }
        }
        Op::IndexSelect { x, axis, index } => {
            if let Some(d) = acc(grads, nodes, *x) {
                let (outer, len, inner) = split_axis(nodes[*x].value.shape(), *axis);
                let sel = index.len();
                for o in 0..outer {
                    for (s, &src) in index.iter().enumerate() {
                        let from = &gd[(o * sel + s) * inner..(o * sel + s + 1) * inner];
                        let to = &mut d[(o * len + src) * inner..(o * len + src + 1) * inner];
                        to.iter_mut().zip(from).for_each(|(d, &g)| *d += g);
                    }
                }
            }
        }
        Op::Concat { xs, axis } => {
            let (outer, total, inner) = split_axis(g.shape(), *axis);
            let mut start = 0;
            for &x in xs {
                let len = nodes[x].value.shape()[*axis];
                if let Some(d) = acc(grads, nodes, x) {
                    for o in 0..outer {
                        let from = &gd[(o * total + start) * inner..(o * total + start + len) * inner];
                        let to = &mut d[o * len * inner..(o + 1) * len * inner];
                        to.iter_mut().zip(from).for_each(|(d, &g)| *d += g);
                    }
                }
                start += len;
            }
        }
        Op::QuatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            // c = a b  =>  da = g conj(b), db = conj(a) g
            if let Some(d) = acc(grads, nodes, *a) {
                for ((d, g), q) in d.chunks_exact_mut(4).zip(gd.chunks_exact(4)).zip(vb.chunks_exact(4)) {
                    let r = hamilton(g, &[-q[0], -q[1], -q[2], q[3]]);
                    d.iter_mut().zip(r).for_each(|(d, r)| *d += r);
                }
            }
            if let Some(d) = acc(grads, nodes, *b) {
                for ((d, g), p) in d.chunks_exact_mut(4).zip(gd.chunks_exact(4)).zip(va.chunks_exact(4)) {
                    let r = hamilton(&[-p[0], -p[1], -p[2], p[3]], g);
                    d.iter_mut().zip(r).for_each(|(d, r)| *d += r);
                }
            }
        }
        Op::QuatRotate(q, v) => {
            let (vq, vv) = (val(*q), val(*v));
            let two = T::lit(2.0);
            let mut dq = vec![T::zero(); vq.len()];
            let mut dv = vec![T::zero(); vv.len()];
            for r in 0..gd.len() / 3 {
                let qq = &vq[r * 4..r * 4 + 4];
                let u = [qq[0], qq[1], qq[2]];
                let w = qq[3];
                let vin = [vv[r * 3], vv[r * 3 + 1], vv[r * 3 + 2]];
                let gg = [gd[r * 3], gd[r * 3 + 1], gd[r * 3 + 2]];
                // out = v + w t + u x t, with t = 2 (u x v)
                let t = cross(u, vin).map(|c| c * two);
                let gxu = cross(gg, u);
                let gt = [0, 1, 2].map(|i| w * gg[i] + gxu[i]);
                let gw = gg[0] * t[0] + gg[1] * t[1] + gg[2] * t[2];
                let txg = cross(t, gg);
                let vxgt = cross(vin, gt);
                let gtxu = cross(gt, u);
                for i in 0..3 {
                    dq[r * 4 + i] = txg[i] + two * vxgt[i];
                    dv[r * 3 + i] = gg[i] + two * gtxu[i];
                }
                dq[r * 4 + 3] = gw;
            }
            if let Some(d) = acc(grads, nodes, *q) {
                d.iter_mut().zip(dq).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = acc(grads, nodes, *v) {
                d.iter_mut().zip(dv).for_each(|(d, g)| *d += g);
            }
        }
        Op::NormalizeLast(x) => {
            let vx = val(*x);
            let y = nodes[id].value.data();
            let f = *nodes[*x].value.shape().last().expect("rank >= 1");
            if let Some(d) = acc(grads, nodes, *x) {
                for r in 0..vx.len() / f {
                    let xs = &vx[r * f..(r + 1) * f];
                    let ys = &y[r * f..(r + 1) * f];
                    let gs = &gd[r * f..(r + 1) * f];
                    let norm = xs.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let dot: T = gs.iter().zip(ys).map(|(&g, &y)| g * y).sum();
                    for i in 0..f {
                        d[r * f + i] += (gs[i] - ys[i] * dot) / norm;
                    }
                }
            }
        }
    }
}

fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Hamilton product on `(x, y, z, w)` slices.
fn hamilton<T: Real>(a: &[T], b: &[T]) -> [T; 4] {
    [
        a[3] * b[0] + a[0] * b[3] + a[1] * b[2] - a[2] * b[1],
        a[3] * b[1] - a[0] * b[2] + a[1] * b[3] + a[2] * b[0],
        a[3] * b[2] + a[0] * b[1] - a[1] * b[0] + a[2] * b[3],
        a[3] * b[3] - a[0] * b[0] - a[1] * b[1] - a[2] * b[2],
    ]
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.value(self.id).shape().to_vec()
    }

    pub fn value(self) -> Tensor<T> {
        self.tape.value(self.id).clone()
    }

    pub fn item(self) -> T {
        self.tape.value(self.id).item()
    }

    pub fn requires_grad(self) -> bool {
        self.tape.requires(&[self.id])
    }

    fn new_node(self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var<'t, T> {
        let rg = self.tape.requires(inputs);
        self.tape.push(value, op, rg)
    }

    fn zip_same(self, other: Var<'t, T>, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let a = self.tape.value(self.id);
        let b = self.tape.value(other.id);
        if a.shape() != b.shape() {
            return Err(shape_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_same(other, "add", |a, b| a + b)?;
        Ok(self.new_node(v, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_same(other, "sub", |a, b| a - b)?;
        Ok(self.new_node(v, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_same(other, "mul", |a, b| a * b)?;
        Ok(self.new_node(v, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    /// Adds a vector along the last axis of every row.
    pub fn add_row(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = {
            let x = self.tape.value(self.id);
            let b = self.tape.value(bias.id);
            let n = b.len();
            if b.rank() != 1 || x.shape().last() != Some(&n) {
                return Err(shape_err(format!("add_row: {:?} + {:?}", x.shape(), b.shape())));
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_exact_mut(n) {
                row.iter_mut().zip(b.data()).for_each(|(d, &b)| *d += b);
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self.new_node(v, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let v = self.tape.value(self.id).map(|x| x * c);
        self.new_node(v, Op::Scale(self.id, c), &[self.id])
    }

    /// `[.., m, k] x [k, n]` (shared right operand) or `[.., m, k] x [.., k, n]`
    /// with identical leading dimensions.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (v, op) = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() < 2 || sb.len() < 2 {
                return Err(shape_err(format!("matmul needs rank >= 2: {sa:?} x {sb:?}")));
            }
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
            let shared_b = sb.len() == 2;
            if k != k2 || (!shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
                return Err(shape_err(format!("matmul: {sa:?} x {sb:?}")));
            }
            let batch: usize = sa[..sa.len() - 2].iter().product();
            let mut out = vec![T::zero(); batch * m * n];
            if shared_b {
                gemm(batch * m, k, n, a.data(), false, b.data(), false, &mut out, false);
            } else {
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &a.data()[i * m * k..],
                        false,
                        &b.data()[i * k * n..],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
            }
            let mut shape = sa[..sa.len() - 2].to_vec();
            shape.extend([m, n]);
            (Tensor::new(shape, out)?, Op::MatMul { a: self.id, b: other.id, batch, m, k, n, shared_b })
        };
        Ok(self.new_node(v, op, &[self.id, other.id]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(self, axes: &[usize]) -> Result<Var<'t, T>> {
        let v = {
            let x = self.tape.value(self.id);
            let mut seen = vec![false; x.rank()];
            if axes.len() != x.rank() || axes.iter().any(|&a| a >= x.rank() || std::mem::replace(&mut seen[a], true)) {
                return Err(shape_err(format!("permute {axes:?} of {:?}", x.shape())));
            }
            let (data, shape) = permute(x.data(), x.shape(), axes);
            Tensor::new(shape, data)?
        };
        Ok(self.new_node(v, Op::Permute { x: self.id, axes: axes.to_vec() }, &[self.id]))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let r = self.tape.value(self.id).rank();
        if r < 2 {
            return Err(shape_err("transpose needs rank >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.tape.value(self.id).clone().reshape(shape)?;
        Ok(self.new_node(v, Op::Reshape(self.id), &[self.id]))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let v = {
            let x = self.tape.value(self.id);
            if axis >= x.rank() {
                return Err(shape_err(format!("softmax axis {axis} of {:?}", x.shape())));
            }
            let (outer, len, inner) = split_axis(x.shape(), axis);
            let xd = x.data();
            let mut out = vec![T::zero(); xd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| o * len * inner + k * inner + i;
                    let max = (0..len).map(|k| xd[at(k)]).fold(T::neg_infinity(), T::max);
                    let mut total = T::zero();
                    for k in 0..len {
                        let e = (xd[at(k)] - max).exp();
                        out[at(k)] = e;
                        total += e;
                    }
                    for k in 0..len {
                        out[at(k)] /= total;
                    }
                }
            }
            Tensor::new(x.shape().to_vec(), out)?
        };
        Ok(self.new_node(v, Op::Softmax { x: self.id, axis }, &[self.id]))
    }

    /// Normalizes over the last axis with the population variance, then
    /// applies `gamma * xhat + beta`.
    pub fn layer_norm(self, gamma: Var<'t, T>, beta: Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let (v, xhat, rstd) = {
            let x = self.tape.value(self.id);
            let g = self.tape.value(gamma.id);
            let b = self.tape.value(beta.id);
            let f = g.len();
            if f == 0 || x.shape().last() != Some(&f) || b.len() != f || g.rank() != 1 || b.rank() != 1 {
                return Err(shape_err(format!("layer_norm: {:?} with gamma {:?}", x.shape(), g.shape())));
            }
            let inv_f = T::one() / T::lit(f as f64);
            let rows = x.len() / f;
            let mut out = vec![T::zero(); x.len()];
            let mut xhat = vec![T::zero(); x.len()];
            let mut rstd = Vec::with_capacity(rows);
            for (r, row) in x.data().chunks_exact(f).enumerate() {
                let mean = row.iter().copied().sum::<T>() * inv_f;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_f;
                let rs = T::one() / (var + eps).sqrt();
                rstd.push(rs);
                for i in 0..f {
                    let h = (row[i] - mean) * rs;
                    xhat[r * f + i] = h;
                    out[r * f + i] = h * g.data()[i] + b.data()[i];
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, xhat, rstd)
        };
        let op = Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, rstd };
        Ok(self.new_node(v, op, &[self.id, gamma.id, beta.id]))
    }

    /// `x * Phi(x)` with the exact normal CDF.
    pub fn gelu(self) -> Var<'t, T> {
        let half = T::lit(0.5);
        let inv_sqrt2 = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        let v = self.tape.value(self.id).map(|x| x * half * (T::one() + (x * inv_sqrt2).erf()));
        self.new_node(v, Op::Gelu(self.id), &[self.id])
    }

    pub fn abs(self) -> Var<'t, T> {
        let v = self.tape.value(self.id).map(T::abs);
        self.new_node(v, Op::Abs(self.id), &[self.id])
    }

    /// Temporal convolution, kernel 3, stride 1, zero padding 1.
    /// `self`: `[.., len, cin]`, `weight`: `[cout, cin, 3]`, `bias`: `[cout]`.
    pub fn conv1d(self, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (v, op) = {
            let x = self.tape.value(self.id);
            let w = self.tape.value(weight.id);
            let b = self.tape.value(bias.id);
            let sx = x.shape();
            let sw = w.shape();
            if sx.len() < 2 || sw.len() != 3 || sw[2] != 3 || sw[1] != sx[sx.len() - 1] || b.shape() != [sw[0]] {
                return Err(shape_err(format!("conv1d: x {sx:?}, w {sw:?}, b {:?}", b.shape())));
            }
            let (len, cin, cout) = (sx[sx.len() - 2], sx[sx.len() - 1], sw[0]);
            let batch: usize = sx[..sx.len() - 2].iter().product();
            let cols = im2col3(x.data(), batch, len, cin);
            let mut out = vec![T::zero(); batch * len * cout];
            for row in out.chunks_exact_mut(cout) {
                row.copy_from_slice(b.data());
            }
            gemm(batch * len, cin * 3, cout, &cols, false, w.data(), true, &mut out, true);
            let mut shape = sx[..sx.len() - 1].to_vec();
            shape.push(cout);
            let op = Op::Conv1d { x: self.id, w: weight.id, b: bias.id, cols, batch, len, cin, cout };
            (Tensor::new(shape, out)?, op)
        };
        Ok(self.new_node(v, op, &[self.id, weight.id, bias.id]))
    }

    pub fn sum(self) -> Var<'t, T> {
        let s = self.tape.value(self.id).data().iter().copied().sum();
        self.new_node(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = self.tape.value(self.id).len().max(1);
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    /// Selects entries `index` along `axis` (indices may repeat).
    pub fn index_select(self, axis: usize, index: &[usize]) -> Result<Var<'t, T>> {
        let v = {
            let x = self.tape.value(self.id);
            if axis >= x.rank() || index.iter().any(|&i| i >= x.shape()[axis]) {
                return Err(shape_err(format!("index_select axis {axis} of {:?} with {index:?}", x.shape())));
            }
            let (outer, len, inner) = split_axis(x.shape(), axis);
            let mut out = Vec::with_capacity(outer * index.len() * inner);
            for o in 0..outer {
                for &src in index {
                    out.extend_from_slice(&x.data()[(o * len + src) * inner..(o * len + src + 1) * inner]);
                }
            }
            let mut shape = x.shape().to_vec();
            shape[axis] = index.len();
            Tensor::new(shape, out)?
        };
        Ok(self.new_node(v, Op::IndexSelect { x: self.id, axis, index: index.to_vec() }, &[self.id]))
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t, T>> {
        let index: Vec<usize> = (start..start + len).collect();
        self.index_select(axis, &index)
    }

    /// Hamilton product over the last axis (size 4, `(x, y, z, w)`).
    pub fn quat_mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = {
            let a = self.tape.value(self.id);
            let b = self.tape.value(other.id);
            if a.shape() != b.shape() || a.shape().last() != Some(&4) {
                return Err(shape_err(format!("quat_mul: {:?} x {:?}", a.shape(), b.shape())));
            }
            let data =
                a.data().chunks_exact(4).zip(b.data().chunks_exact(4)).flat_map(|(p, q)| hamilton(p, q)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.new_node(v, Op::QuatMul(self.id, other.id), &[self.id, other.id]))
    }

    /// Rotates 3-vectors `v` (`[.., 3]`) by quaternions `self` (`[.., 4]`)
    /// using `v + 2w (u x v) + 2 u x (u x v)`; exact for unit quaternions.
    pub fn quat_rotate(self, v: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = {
            let q = self.tape.value(self.id);
            let x = self.tape.value(v.id);
            let (sq, sx) = (q.shape(), x.shape());
            if sq.last() != Some(&4) || sx.last() != Some(&3) || sq[..sq.len() - 1] != sx[..sx.len() - 1] {
                return Err(shape_err(format!("quat_rotate: {sq:?} on {sx:?}")));
            }
            let two = T::lit(2.0);
            let data = q
                .data()
                .chunks_exact(4)
                .zip(x.data().chunks_exact(3))
                .flat_map(|(q, v)| {
                    let u = [q[0], q[1], q[2]];
                    let v = [v[0], v[1], v[2]];
                    let t = cross(u, v).map(|c| c * two);
                    let ut = cross(u, t);
                    [0, 1, 2].map(|i| v[i] + q[3] * t[i] + ut[i])
                })
                .collect();
            Tensor::new(sx.to_vec(), data)?
        };
        Ok(self.new_node(out, Op::QuatRotate(self.id, v.id), &[self.id, v.id]))
    }

    /// Scales each vector along the last axis to unit Euclidean length.
    pub fn normalize_last(self) -> Result<Var<'t, T>> {
        let v = {
            let x = self.tape.value(self.id);
            let f = *x.shape().last().ok_or_else(|| shape_err("normalize_last on a scalar"))?;
            let mut data = x.data().to_vec();
            for row in data.chunks_exact_mut(f) {
                let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
                row.iter_mut().for_each(|v| *v /= n);
            }
            Tensor::new(x.shape().to_vec(), data)?
        };
        Ok(self.new_node(v, Op::NormalizeLast(self.id), &[self.id]))
    }
}

/// Concatenates along `axis`; all other dimensions must agree.
pub fn concat<'t, T: Real>(xs: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = xs.first().ok_or_else(|| shape_err("concat of nothing"))?;
    let tape = first.tape;
    let v = {
        let vals: Vec<_> = xs.iter().map(|x| tape.value(x.id)).collect();
        let s0 = vals[0].shape().to_vec();
        if axis >= s0.len() {
            return Err(shape_err(format!("concat axis {axis} of {s0:?}")));
        }
        let mut total = 0;
        for v in &vals {
            let s = v.shape();
            if s.len() != s0.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != s0[i]) {
                return Err(shape_err(format!("concat: {s0:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let len = v.shape()[axis];
                out.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        Tensor::new(shape, out)?
    };
    let ids: Vec<usize> = xs.iter().map(|x| x.id).collect();
    Ok(first.new_node(v, Op::Concat { xs: ids.clone(), axis }, &ids))
}
