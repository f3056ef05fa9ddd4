use std::rc::Rc;

use super::{strides, Tensor, Var};
use crate::error::{dim_err, Result};

/// SeLU scale.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
/// SeLU negative-branch coefficient.
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// `c[m×n] = a[m×k] · b[k×n] + beta·c` with arbitrary row/column strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        (rows - 1) * rs + (cols - 1) * cs
    };
    if k > 0 {
        assert!(last(m, k, a_strides) < a.len(), "gemm: lhs out of bounds");
        assert!(last(k, n, b_strides) < b.len(), "gemm: rhs out of bounds");
    }
    assert!(last(m, n, c_strides) < c.len(), "gemm: output out of bounds");
    // SAFETY: every index touched by dgemm lies within the slices, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return dim_err(op, format!("rank mismatch {a:?} vs {b:?}"));
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Ok(x),
            (1, _) => Ok(y),
            (_, 1) => Ok(x),
            _ => dim_err(op, format!("cannot broadcast {a:?} with {b:?}")),
        })
        .collect()
}

/// For each flat index of `out`, the flat index of the broadcast operand.
fn broadcast_map(out: &[usize], src: &[usize]) -> Option<Vec<usize>> {
    if out == src {
        return None;
    }
    let src_strides = strides(src);
    let eff: Vec<usize> = src
        .iter()
        .zip(&src_strides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let n: usize = out.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; out.len()];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for ax in (0..out.len()).rev() {
            idx[ax] += 1;
            off += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    Some(map)
}

fn reduce_to(local: Vec<f64>, map: &Option<Vec<usize>>, len: usize) -> Vec<f64> {
    match map {
        None => local,
        Some(m) => {
            let mut out = vec![0.0; len];
            for (gi, &mi) in local.iter().zip(m) {
                out[mi] += gi;
            }
            out
        }
    }
}

fn at(map: &Option<Vec<usize>>, i: usize) -> usize {
    map.as_ref().map_or(i, |m| m[i])
}

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    fn binary(
        &self,
        other: &Var<'t>,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        needs_values: bool,
        grad_a: fn(f64, f64, f64) -> f64,
        grad_b: fn(f64, f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        let out_shape = broadcast_shape(op, sa, sb)?;
        let ma = broadcast_map(&out_shape, sa);
        let mb = broadcast_map(&out_shape, sb);
        let (x, y) = (self.data(), other.data());
        let data: Vec<f64> = if ma.is_none() && mb.is_none() {
            x.iter().zip(y).map(|(&u, &v)| f(u, v)).collect()
        } else {
            let n = out_shape.iter().product();
            (0..n).map(|i| f(x[at(&ma, i)], y[at(&mb, i)])).collect()
        };
        let (la, lb) = (self.value.numel(), other.value.numel());
        let a = needs_values.then(|| Rc::clone(&self.value));
        let b = needs_values.then(|| Rc::clone(&other.value));
        self.tape.push(
            op,
            Tensor::new(&out_shape, data)?,
            &[self, other],
            move |g, need| {
                let val = |v: &Option<Rc<Tensor>>, m: &Option<Vec<usize>>, i: usize| {
                    v.as_ref().map_or(0.0, |t| t.data()[at(m, i)])
                };
                let local = |rule: fn(f64, f64, f64) -> f64| -> Vec<f64> {
                    g.iter()
                        .enumerate()
                        .map(|(i, &gi)| rule(gi, val(&a, &ma, i), val(&b, &mb, i)))
                        .collect()
                };
                let ga = need[0].then(|| reduce_to(local(grad_a), &ma, la));
                let gb = need[1].then(|| reduce_to(local(grad_b), &mb, lb));
                vec![ga, gb]
            },
        )
    }

    /// Elementwise sum with broadcasting over unit extents (equal ranks).
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, false, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, false, |g, _, _| g, |g, _, _| -g)
    }

    /// Elementwise product with broadcasting over unit extents (equal ranks).
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            "mul",
            |a, b| a * b,
            true,
            |g, _, b| g * b,
            |g, a, _| g * a,
        )
    }

    /// Elementwise map. `df(x, y)` is the local derivative; `keep_y` says
    /// whether it reads the output, otherwise only the input is retained.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: fn(f64, f64) -> f64,
        keep_y: bool,
    ) -> Result<Var<'t>> {
        let x = Rc::clone(&self.value);
        let y: Vec<f64> = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape(), y)?;
        let y_keep = if keep_y { out.data().to_vec() } else { Vec::new() };
        self.tape.push(op, out, &[self], move |g, _| {
            let gx = if keep_y {
                g.iter().zip(&y_keep).map(|(&gi, &yi)| gi * df(0.0, yi)).collect()
            } else {
                g.iter().zip(x.data()).map(|(&gi, &xi)| gi * df(xi, 0.0)).collect()
            };
            vec![Some(gx)]
        })
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let x = Rc::clone(&self.value);
        let y = x.data().iter().map(|v| v * c).collect();
        self.tape
            .push("scale", Tensor::new(x.shape(), y)?, &[self], move |g, _| {
                vec![Some(g.iter().map(|v| v * c).collect())]
            })
    }

    pub fn selu(&self) -> Result<Var<'t>> {
        self.unary("selu", selu, |x, _| selu_grad(x), false)
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary("sigmoid", sigmoid, |_, y| y * (1.0 - y), true)
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        self.unary("abs", f64::abs, |x, _| if x < 0.0 { -1.0 } else { 1.0 }, false)
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary("exp", f64::exp, |_, y| y, true)
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let n = self.value.numel();
        let s = self.data().iter().sum();
        self.tape
            .push("sum", Tensor::scalar(s), &[self], move |g, _| {
                vec![Some(vec![g[0]; n])]
            })
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let n = self.value.numel();
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let out = (*self.value).clone().reshape(shape)?;
        self.tape
            .push("reshape", out, &[self], |g, _| vec![Some(g.to_vec())])
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last2(&self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() < 2 {
            return dim_err("transpose", format!("rank {} < 2", s.len()));
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = self.value.numel() / (m * n);
        let mut shape = s.to_vec();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let data = transpose_blocks(self.data(), batch, m, n);
        self.tape
            .push("transpose", Tensor::new(&shape, data)?, &[self], move |g, _| {
                vec![Some(transpose_blocks(g, batch, n, m))]
            })
    }

    /// Maximum along `axis`, removing it. Gradient goes to the first argmax.
    pub fn max_axis(&self, axis: usize) -> Result<Var<'t>> {
        let s = self.shape();
        if axis >= s.len() {
            return dim_err("max_axis", format!("axis {axis} for shape {s:?}"));
        }
        let outer: usize = s[..axis].iter().product();
        let len = s[axis];
        let inner: usize = s[axis + 1..].iter().product();
        let x = self.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    let v = x[base + i];
                    let slot = o * inner + i;
                    if v > out[slot] {
                        out[slot] = v;
                        arg[slot] = base + i;
                    }
                }
            }
        }
        let mut shape: Vec<usize> = s.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let n_in = self.value.numel();
        self.tape
            .push("max_axis", Tensor::new(&shape, out)?, &[self], move |g, _| {
                let mut gx = vec![0.0; n_in];
                for (&a, &gi) in arg.iter().zip(g) {
                    gx[a] += gi;
                }
                vec![Some(gx)]
            })
    }

    /// Affine map along the trailing axis: `x · weight + bias` with
    /// `weight` of shape `[d, d']` and `bias` of shape `[d']`.
    pub fn dense(&self, weight: &Var<'t>, bias: Option<&Var<'t>>) -> Result<Var<'t>> {
        let s = self.shape();
        let ws = weight.shape();
        let d = *s.last().unwrap();
        if ws.len() != 2 || ws[0] != d {
            return dim_err("dense", format!("input {s:?} with weight {ws:?}"));
        }
        let dout = ws[1];
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return dim_err("dense", format!("bias {:?} for width {dout}", b.shape()));
            }
        }
        let rows = self.value.numel() / d;
        let mut y = vec![0.0; rows * dout];
        if let Some(b) = bias {
            for r in 0..rows {
                y[r * dout..(r + 1) * dout].copy_from_slice(b.data());
            }
        }
        gemm(rows, d, dout, self.data(), (d, 1), weight.data(), (dout, 1), 1.0, &mut y, (dout, 1));
        let mut shape = s.to_vec();
        *shape.last_mut().unwrap() = dout;
        let x = Rc::clone(&self.value);
        let w = Rc::clone(&weight.value);
        let mut parents = vec![self, weight];
        if let Some(b) = bias {
            parents.push(b);
        }
        self.tape
            .push("dense", Tensor::new(&shape, y)?, &parents, move |g, need| {
                let gx = need[0].then(|| {
                    let mut gx = vec![0.0; rows * d];
                    gemm(rows, dout, d, g, (dout, 1), w.data(), (1, dout), 0.0, &mut gx, (d, 1));
                    gx
                });
                let gw = need[1].then(|| {
                    let mut gw = vec![0.0; d * dout];
                    gemm(d, rows, dout, x.data(), (1, d), g, (dout, 1), 0.0, &mut gw, (dout, 1));
                    gw
                });
                let mut out = vec![gx, gw];
                if need.len() == 3 {
                    out.push(need[2].then(|| {
                        let mut gb = vec![0.0; dout];
                        for row in g.chunks_exact(dout) {
                            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        gb
                    }));
                }
                out
            })
    }

    /// Batched matrix product `[B, M, K] · [B, K, N] → [B, M, N]`.
    pub fn bmm(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return dim_err("bmm", format!("{sa:?} · {sb:?}"));
        }
        let (bsz, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut y = vec![0.0; bsz * m * n];
        for b in 0..bsz {
            gemm(
                m,
                k,
                n,
                &self.data()[b * m * k..],
                (k, 1),
                &other.data()[b * k * n..],
                (n, 1),
                0.0,
                &mut y[b * m * n..],
                (n, 1),
            );
        }
        let a = Rc::clone(&self.value);
        let bb = Rc::clone(&other.value);
        self.tape.push(
            "bmm",
            Tensor::new(&[bsz, m, n], y)?,
            &[self, other],
            move |g, need| {
                let ga = need[0].then(|| {
                    let mut ga = vec![0.0; bsz * m * k];
                    for b in 0..bsz {
                        gemm(m, n, k, &g[b * m * n..], (n, 1), &bb.data()[b * k * n..], (1, n), 0.0, &mut ga[b * m * k..], (k, 1));
                    }
                    ga
                });
                let gb = need[1].then(|| {
                    let mut gb = vec![0.0; bsz * k * n];
                    for b in 0..bsz {
                        gemm(k, m, n, &a.data()[b * m * k..], (1, k), &g[b * m * n..], (n, 1), 0.0, &mut gb[b * k * n..], (n, 1));
                    }
                    gb
                });
                vec![ga, gb]
            },
        )
    }

    /// Softmax over the trailing axis, computed with max subtraction.
    pub fn softmax_last(&self) -> Result<Var<'t>> {
        let n = *self.shape().last().unwrap();
        let mut y = self.data().to_vec();
        for row in y.chunks_exact_mut(n) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        let out = Tensor::new(self.shape(), y)?;
        let yk = out.data().to_vec();
        self.tape.push("softmax", out, &[self], move |g, _| {
            let mut gx = vec![0.0; g.len()];
            for ((gr, yr), xr) in g.chunks_exact(n).zip(yk.chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((x, &gi), &yi) in xr.iter_mut().zip(gr).zip(yr) {
                    *x = yi * (gi - dot);
                }
            }
            vec![Some(gx)]
        })
    }

    /// Selects rows along axis 1 of a `[B, N, d]` tensor, one index list per
    /// batch item. Indices are treated as constants.
    pub fn gather_rows(&self, indices: &[Vec<usize>]) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 3 || indices.len() != s[0] {
            return dim_err("gather_rows", format!("{s:?} with {} index lists", indices.len()));
        }
        let (bsz, n, d) = (s[0], s[1], s[2]);
        let k = indices[0].len();
        if k == 0 || indices.iter().any(|ix| ix.len() != k || ix.iter().any(|&i| i >= n)) {
            return dim_err("gather_rows", "ragged or out-of-range indices");
        }
        let mut y = Vec::with_capacity(bsz * k * d);
        for (b, ix) in indices.iter().enumerate() {
            for &i in ix {
                y.extend_from_slice(&self.data()[(b * n + i) * d..(b * n + i + 1) * d]);
            }
        }
        let idx = indices.to_vec();
        self.tape
            .push("gather_rows", Tensor::new(&[bsz, k, d], y)?, &[self], move |g, _| {
                let mut gx = vec![0.0; bsz * n * d];
                for (b, ix) in idx.iter().enumerate() {
                    for (r, &i) in ix.iter().enumerate() {
                        let src = &g[(b * k + r) * d..(b * k + r + 1) * d];
                        let dst = &mut gx[(b * n + i) * d..(b * n + i + 1) * d];
                        dst.iter_mut().zip(src).for_each(|(a, v)| *a += v);
                    }
                }
                vec![Some(gx)]
            })
    }

    /// Concatenates along the trailing axis (`self` first).
    pub fn concat_last(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return dim_err("concat", format!("{sa:?} ++ {sb:?}"));
        }
        let (da, db) = (*sa.last().unwrap(), *sb.last().unwrap());
        let rows = self.value.numel() / da;
        let mut y = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            y.extend_from_slice(&self.data()[r * da..(r + 1) * da]);
            y.extend_from_slice(&other.data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = da + db;
        self.tape
            .push("concat", Tensor::new(&shape, y)?, &[self, other], move |g, need| {
                let split = |off: usize, w: usize| {
                    g.chunks_exact(da + db)
                        .flat_map(|row| row[off..off + w].iter().copied())
                        .collect::<Vec<f64>>()
                };
                vec![need[0].then(|| split(0, da)), need[1].then(|| split(da, db))]
            })
    }
}

fn transpose_blocks(x: &[f64], batch: usize, m: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for b in 0..batch {
        let (src, dst) = (&x[b * m * n..(b + 1) * m * n], &mut y[b * m * n..(b + 1) * m * n]);
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn dense_hand_values() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2], &[3.0, 4.0]));
        let w = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let b = tape.constant(t(&[1], &[0.0]));
        assert_eq!(x.dense(&w, Some(&b)).unwrap().data(), &[7.0]);

        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let z = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert_eq!(x.dense(&eye, Some(&z)).unwrap().data(), x.data());
    }

    #[test]
    fn selu_closed_form() {
        assert_eq!(selu(0.0), 0.0);
        assert!((selu(1e6) - SELU_LAMBDA * 1e6).abs() < 1e-6);
        let expected = SELU_LAMBDA * SELU_ALPHA * ((-1.0f64).exp() - 1.0);
        assert!((selu(-1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn product_rule_and_sum_grad() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0).with_grad());
        let y = tape.leaf(Tensor::scalar(4.0).with_grad());
        let loss = x.mul(&y).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[4.0]);
        assert_eq!(g.wrt(&y).unwrap(), &[3.0]);

        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0).with_grad());
        let g = tape.backward(&x.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn reused_leaf_accumulates() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0).with_grad());
        let loss = x.mul(&x).unwrap().add(&x).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[5.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2]).with_grad());
        assert!(tape.backward(&x).is_err());
    }

    #[test]
    fn broadcast_mul_reduces_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64).with_grad());
        let w = tape.leaf(t(&[1, 3], &[1.0, 2.0, 3.0]).with_grad());
        let y = x.mul(&w).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 6.0, 3.0, 8.0, 15.0]);
        let g = tape.backward(&y.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(&w).unwrap(), &[3.0, 5.0, 7.0]);
        assert_eq!(g.wrt(&x).unwrap(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn max_axis_routes_to_first_argmax() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, 5.0, 5.0, -1.0, 0.0, -3.0]).with_grad());
        let m = x.max_axis(1).unwrap();
        assert_eq!(m.data(), &[5.0, 0.0]);
        let g = tape.backward(&m.sum().unwrap()).unwrap();
        assert_eq!(g.wrt(&x).unwrap(), &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(800.0));
        assert!(x.exp().is_err());
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::no_grad();
        let x = tape.leaf(Tensor::scalar(1.0).with_grad());
        assert!(!x.is_tracked());
        let y = x.scale(2.0).unwrap();
        assert!(!y.is_tracked());
    }
}
