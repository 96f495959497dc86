//! Tape operations: values are computed eagerly, backward closures are
//! recorded on the tape.

use std::rc::Rc;

use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, Ix2, Slice, Zip};

use super::{accumulate, Scalar, Tape, Var};

/// NumPy-style broadcast shape of two operand shapes.
fn broadcast_shape(sa: &[usize], sb: &[usize]) -> Vec<usize> {
    let n = sa.len().max(sb.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let a = if i < n - sa.len() { 1 } else { sa[i - (n - sa.len())] };
        let b = if i < n - sb.len() { 1 } else { sb[i - (n - sb.len())] };
        assert!(
            a == b || a == 1 || b == 1,
            "incompatible broadcast shapes {:?} vs {:?}",
            sa,
            sb
        );
        out[i] = a.max(b);
    }
    out
}

fn bcast_apply<F: Scalar>(
    a: &ArrayD<F>,
    b: &ArrayD<F>,
    f: impl Fn(F, F) -> F,
) -> ArrayD<F> {
    // same-shape fast path over contiguous slices
    if a.shape() == b.shape() {
        if let (Some(sa), Some(sb)) = (a.as_slice(), b.as_slice()) {
            let data: Vec<F> = sa.iter().zip(sb).map(|(&x, &y)| f(x, y)).collect();
            return ArrayD::from_shape_vec(a.shape(), data).unwrap();
        }
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let mut out = ArrayD::zeros(shape.as_slice());
    Zip::from(&mut out)
        .and_broadcast(a)
        .and_broadcast(b)
        .for_each(|o, &x, &y| *o = f(x, y));
    out
}

/// Sum a broadcast gradient back down to `target` shape.
pub(crate) fn reduce_to_shape<F: Scalar>(grad: &ArrayD<F>, target: &[usize]) -> ArrayD<F> {
    let mut g = grad.clone();
    while g.ndim() > target.len() {
        g = g.sum_axis(Axis(0));
    }
    for ax in 0..target.len() {
        if target[ax] == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    debug_assert_eq!(g.shape(), target);
    g
}

fn to_standard<F: Scalar>(a: &ArrayD<F>) -> ArrayD<F> {
    a.as_standard_layout().to_owned()
}

/// Matrix product over the last two axes. `b` may be a plain matrix
/// (applied to every batch element) or carry the same leading dimensions
/// as `a`.
pub(crate) fn nd_matmul<F: Scalar>(a: &ArrayD<F>, b: &ArrayD<F>) -> ArrayD<F> {
    let an = a.ndim();
    assert!(an >= 2 && b.ndim() >= 2, "matmul operands need >= 2 dims");
    let (m, k) = (a.shape()[an - 2], a.shape()[an - 1]);
    if b.ndim() == 2 {
        assert_eq!(k, b.shape()[0], "matmul inner dim mismatch");
        let n = b.shape()[1];
        let lead: usize = a.shape()[..an - 2].iter().product();
        let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
        // flatten the lhs without copying when it is already contiguous
        let a_std;
        let a_flat = match a.as_slice() {
            Some(sa) => ndarray::ArrayView2::from_shape((lead * m, k), sa).unwrap(),
            None => {
                a_std = to_standard(a);
                ndarray::ArrayView2::from_shape((lead * m, k), a_std.as_slice().unwrap())
                    .unwrap()
            }
        };
        let out = a_flat.dot(&b2);
        // thin products (k = 1) can come back with outer-product strides
        let out = if out.is_standard_layout() {
            out
        } else {
            out.as_standard_layout().to_owned()
        };
        let mut shape: Vec<usize> = a.shape()[..an - 2].to_vec();
        shape.push(m);
        shape.push(n);
        out.into_shape_with_order(shape.as_slice())
            .expect("matmul output reshape")
            .into_dyn()
    } else {
        assert_eq!(an, b.ndim(), "batched matmul rank mismatch");
        assert_eq!(
            &a.shape()[..an - 2],
            &b.shape()[..an - 2],
            "batched matmul leading dims mismatch"
        );
        assert_eq!(k, b.shape()[an - 2], "matmul inner dim mismatch");
        let n = b.shape()[an - 1];
        let lead: usize = a.shape()[..an - 2].iter().product();
        let a_own;
        let av = match a.as_slice() {
            Some(sa) => sa,
            None => {
                a_own = to_standard(a);
                a_own.as_slice().unwrap()
            }
        };
        let b_own;
        let bv = match b.as_slice() {
            Some(sb) => sb,
            None => {
                b_own = to_standard(b);
                b_own.as_slice().unwrap()
            }
        };
        // the per-batch matrices here are tiny (set sizes and head dims);
        // a hand-rolled ikj kernel beats one gemm call per batch element
        let mut out = vec![F::zero(); lead * m * n];
        for l in 0..lead {
            let ab = &av[l * m * k..(l + 1) * m * k];
            let bb = &bv[l * k * n..(l + 1) * k * n];
            let ob = &mut out[l * m * n..(l + 1) * m * n];
            for i in 0..m {
                let arow = &ab[i * k..(i + 1) * k];
                let orow = &mut ob[i * n..(i + 1) * n];
                for (p, &aval) in arow.iter().enumerate() {
                    let brow = &bb[p * n..(p + 1) * n];
                    for (o, &bval) in orow.iter_mut().zip(brow) {
                        *o = *o + aval * bval;
                    }
                }
            }
        }
        let mut shape: Vec<usize> = a.shape()[..an - 2].to_vec();
        shape.push(m);
        shape.push(n);
        ArrayD::from_shape_vec(shape, out).expect("batched output shape")
    }
}

/// Transpose of the last two axes (contiguous copy).
pub(crate) fn transpose_last2_value<F: Scalar>(a: &ArrayD<F>) -> ArrayD<F> {
    let nd = a.ndim();
    let mut perm: Vec<usize> = (0..nd).collect();
    perm.swap(nd - 2, nd - 1);
    a.view().permuted_axes(perm.as_slice()).to_owned()
}

impl<F: Scalar> Tape<F> {
    pub fn add(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = bcast_apply(&va, &vb, |x, y| x + y);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        self.op(
            out,
            &[a, b],
            Box::new(move |g, slots| {
                accumulate(&mut slots[a.0], reduce_to_shape(g, &sa));
                accumulate(&mut slots[b.0], reduce_to_shape(g, &sb));
            }),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = bcast_apply(&va, &vb, |x, y| x - y);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        self.op(
            out,
            &[a, b],
            Box::new(move |g, slots| {
                accumulate(&mut slots[a.0], reduce_to_shape(g, &sa));
                accumulate(&mut slots[b.0], reduce_to_shape(&g.mapv(|x| -x), &sb));
            }),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = bcast_apply(&va, &vb, |x, y| x * y);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        self.op(
            out,
            &[a, b],
            Box::new(move |g, slots| {
                accumulate(&mut slots[a.0], reduce_to_shape(&bcast_apply(g, &vb, |x, y| x * y), &sa));
                accumulate(&mut slots[b.0], reduce_to_shape(&bcast_apply(g, &va, |x, y| x * y), &sb));
            }),
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let out = bcast_apply(&va, &vb, |x, y| x / y);
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        let out_saved = out.clone();
        self.op(
            out,
            &[a, b],
            Box::new(move |g, slots| {
                accumulate(&mut slots[a.0], reduce_to_shape(&bcast_apply(g, &vb, |x, y| x / y), &sa));
                // d/db (a/b) = -(a/b)/b
                let gb = bcast_apply(&bcast_apply(g, &out_saved, |x, y| x * y), &vb, |x, y| -(x / y));
                accumulate(&mut slots[b.0], reduce_to_shape(&gb, &sb));
            }),
        )
    }

    pub fn neg(&self, a: Var) -> Var {
        let va = self.value(a);
        self.op(
            va.mapv(|x| -x),
            &[a],
            Box::new(move |g, slots| accumulate(&mut slots[a.0], g.mapv(|x| -x))),
        )
    }

    pub fn scale(&self, a: Var, c: F) -> Var {
        let va = self.value(a);
        self.op(
            va.mapv(|x| x * c),
            &[a],
            Box::new(move |g, slots| accumulate(&mut slots[a.0], g.mapv(|x| x * c))),
        )
    }

    pub fn add_scalar(&self, a: Var, c: F) -> Var {
        let va = self.value(a);
        self.op(
            va.mapv(|x| x + c),
            &[a],
            Box::new(move |g, slots| accumulate(&mut slots[a.0], g.clone())),
        )
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        // Promote a 1-D lhs to a single-row matrix and squeeze the result.
        if self.shape(a).len() == 1 {
            let k = self.shape(a)[0];
            let a2 = self.reshape(a, &[1, k]);
            let y = self.matmul(a2, b);
            let n = self.shape(y)[1];
            return self.reshape(y, &[n]);
        }
        let (va, vb) = (self.value(a), self.value(b));
        let out = nd_matmul(&va, &vb);
        let b_is_mat = vb.ndim() == 2;
        self.op(
            out,
            &[a, b],
            Box::new(move |g, slots| {
                // da = g @ b^T
                let bt = transpose_last2_value(&vb);
                accumulate(&mut slots[a.0], nd_matmul(g, &bt));
                // db = a^T @ g, summed over batch when b is a plain matrix
                if b_is_mat {
                    let an = va.ndim();
                    let (m, k) = (va.shape()[an - 2], va.shape()[an - 1]);
                    let lead: usize = va.shape()[..an - 2].iter().product();
                    let n = g.shape()[g.ndim() - 1];
                    let va_own;
                    let a2 = match va.as_slice() {
                        Some(sa) => {
                            ndarray::ArrayView2::from_shape((lead * m, k), sa).unwrap()
                        }
                        None => {
                            va_own = to_standard(&va);
                            ndarray::ArrayView2::from_shape(
                                (lead * m, k),
                                va_own.as_slice().unwrap(),
                            )
                            .unwrap()
                        }
                    };
                    let g_own;
                    let g2 = match g.as_slice() {
                        Some(sg) => {
                            ndarray::ArrayView2::from_shape((lead * m, n), sg).unwrap()
                        }
                        None => {
                            g_own = to_standard(g);
                            ndarray::ArrayView2::from_shape(
                                (lead * m, n),
                                g_own.as_slice().unwrap(),
                            )
                            .unwrap()
                        }
                    };
                    accumulate(&mut slots[b.0], a2.t().dot(&g2).into_dyn());
                } else {
                    let at = transpose_last2_value(&va);
                    accumulate(&mut slots[b.0], nd_matmul(&at, g));
                }
            }),
        )
    }

    pub fn transpose_last2(&self, a: Var) -> Var {
        let va = self.value(a);
        self.op(
            transpose_last2_value(&va),
            &[a],
            Box::new(move |g, slots| accumulate(&mut slots[a.0], transpose_last2_value(g))),
        )
    }

    pub fn permute(&self, a: Var, axes: &[usize]) -> Var {
        let va = self.value(a);
        let perm = axes.to_vec();
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let out = va.view().permuted_axes(perm.as_slice()).to_owned();
        self.op(
            out,
            &[a],
            Box::new(move |g, slots| {
                accumulate(&mut slots[a.0], g.view().permuted_axes(inv.as_slice()).to_owned())
            }),
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let va = self.value(a);
        let old_shape = va.shape().to_vec();
        let out = match va.as_slice() {
            Some(sa) => ArrayD::from_shape_vec(shape, sa.to_vec())
                .expect("reshape with matching element count"),
            None => to_standard(&va)
                .into_shape_with_order(shape)
                .expect("reshape with matching element count"),
        };
        self.op(
            out,
            &[a],
            Box::new(move |g, slots| {
                let back = match g.as_slice() {
                    Some(sg) => {
                        ArrayD::from_shape_vec(old_shape.as_slice(), sg.to_vec()).unwrap()
                    }
                    None => to_standard(g)
                        .into_shape_with_order(old_shape.as_slice())
                        .expect("reshape gradient"),
                };
                accumulate(&mut slots[a.0], back);
            }),
        )
    }

    /// Slice `start..end` along `axis`.
    pub fn slice_ax(&self, a: Var, axis: usize, start: usize, end: usize) -> Var {
        let va = self.value(a);
        let full = va.shape().to_vec();
        let out = va
            .slice_axis(Axis(axis), Slice::from(start..end))
            .to_owned();
        self.op(
            out,
            &[a],
            Box::new(move |g, slots| {
                let mut z = ArrayD::<F>::zeros(full.as_slice());
                z.slice_axis_mut(Axis(axis), Slice::from(start..end))
                    .assign(g);
                accumulate(&mut slots[a.0], z);
            }),
        )
    }

    pub fn concat(&self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<_> = parts.iter().map(|p| self.value(*p)).collect();
        let views: Vec<ArrayViewD<F>> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(Axis(axis), &views).expect("concat shapes");
        let parents: Vec<Var> = parts.to_vec();
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        self.op(
            out,
            &parents.clone(),
            Box::new(move |g, slots| {
                let mut off = 0;
                for (p, &sz) in parents.iter().zip(&sizes) {
                    let part = g
                        .slice_axis(Axis(axis), Slice::from(off..off + sz))
                        .to_owned();
                    accumulate(&mut slots[p.0], part);
                    off += sz;
                }
            }),
        )
    }

    /// Stack along a new axis inserted at `axis`.
    pub fn stack(&self, axis: usize, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let values: Vec<_> = parts.iter().map(|p| self.value(*p)).collect();
        let views: Vec<ArrayViewD<F>> = values.iter().map(|v| v.view()).collect();
        let out = ndarray::stack(Axis(axis), &views).expect("stack shapes");
        let parents: Vec<Var> = parts.to_vec();
        self.op(
            out,
            &parents.clone(),
            Box::new(move |g, slots| {
                for (i, p) in parents.iter().enumerate() {
                    let part = g.index_axis(Axis(axis), i).to_owned();
                    accumulate(&mut slots[p.0], part);
                }
            }),
        )
    }

    pub fn sum_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let last = va.ndim() - 1;
        let k = va.shape()[last];
        let out = va.sum_axis(Axis(last));
        self.op(
            out,
            &[a],
            Box::new(move |g, slots| {
                let expanded = g.clone().insert_axis(Axis(g.ndim()));
                let mut shape = g.shape().to_vec();
                shape.push(k);
                let back = expanded
                    .broadcast(shape.as_slice())
                    .expect("sum_last gradient broadcast")
                    .to_owned();
                accumulate(&mut slots[a.0], back);
            }),
        )
    }

    pub fn mean_last(&self, a: Var) -> Var {
        let k = self.shape(a)[self.shape(a).len() - 1];
        let s = self.sum_last(a);
        self.scale(s, F::one() / F::cast(k as f64))
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let va = self.value(a);
        let shape = va.shape().to_vec();
        let total = va.sum();
        self.op(
            ArrayD::from_elem(vec![1usize].as_slice(), total),
            &[a],
            Box::new(move |g, slots| {
                let gv = g[[0]];
                accumulate(&mut slots[a.0], ArrayD::from_elem(shape.as_slice(), gv));
            }),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let n: usize = self.shape(a).iter().product();
        let s = self.sum_all(a);
        self.scale(s, F::one() / F::cast(n as f64))
    }

    /// Minimum over the last axis; the gradient is routed to the first
    /// argmin on ties.
    pub fn min_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let last = va.ndim() - 1;
        let k = va.shape()[last];
        let lead: usize = va.shape()[..last].iter().product();
        let flat = to_standard(&va).into_shape_with_order((lead, k)).unwrap();
        let mut out = Vec::with_capacity(lead);
        let mut idx = Vec::with_capacity(lead);
        for row in flat.rows() {
            let mut best = 0usize;
            for (j, v) in row.iter().enumerate() {
                if *v < row[best] {
                    best = j;
                }
            }
            idx.push(best);
            out.push(row[best]);
        }
        let out_shape: Vec<usize> = va.shape()[..last].to_vec();
        let out = ArrayD::from_shape_vec(out_shape.as_slice(), out).unwrap();
        let in_shape = va.shape().to_vec();
        self.op(
            out,
            &[a],
            Box::new(move |g, slots| {
                let gflat = to_standard(g).into_shape_with_order(lead).unwrap();
                let mut z = ndarray::Array2::<F>::zeros((lead, k));
                for i in 0..lead {
                    z[[i, idx[i]]] = gflat[i];
                }
                let back = z.into_shape_with_order(in_shape.as_slice()).unwrap().into_dyn();
                accumulate(&mut slots[a.0], back);
            }),
        )
    }

    fn unary(
        &self,
        a: Var,
        f: impl Fn(F) -> F,
        dfdy: impl Fn(F, F) -> F + 'static,
    ) -> Var {
        let va = self.value(a);
        let out = va.mapv(&f);
        let saved = Rc::new(out.clone());
        self.op(
            out,
            &[a],
            Box::new(move |g, slots| {
                let mut back = saved.as_ref().clone();
                Zip::from(&mut back).and(&**saved).and(&*va).for_each(|b, &y, &x| {
                    *b = dfdy(x, y);
                });
                back *= g;
                // `back` now holds df/dx * g elementwise.
                accumulate(&mut slots[a.0], back);
            }),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| F::one() / (F::one() + (-x).exp()),
            |_, y| y * (F::one() - y),
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, |x| x.tanh(), |_, y| F::one() - y * y)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(
            a,
            |x| if x > F::zero() { x } else { F::zero() },
            |x, _| if x > F::zero() { F::one() } else { F::zero() },
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), |_, y| y)
    }

    /// `ln(max(x, floor))`; zero gradient where the floor clips.
    pub fn ln_clamped(&self, a: Var, floor: F) -> Var {
        self.unary(
            a,
            move |x| x.max(floor).ln(),
            move |x, _| if x > floor { F::one() / x } else { F::zero() },
        )
    }

    /// `sqrt(max(x, floor))`; zero gradient where the floor clips.
    pub fn sqrt_clamped(&self, a: Var, floor: F) -> Var {
        self.unary(
            a,
            move |x| x.max(floor).sqrt(),
            move |x, y| {
                if x > floor {
                    F::cast(0.5) / y
                } else {
                    F::zero()
                }
            },
        )
    }

    /// Clamp to `[lo, hi]`; the gradient passes through inside the
    /// bounds and is zero where the value was clipped.
    pub fn clamp(&self, a: Var, lo: F, hi: F) -> Var {
        self.unary(
            a,
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x > lo && x < hi {
                    F::one()
                } else {
                    F::zero()
                }
            },
        )
    }

    /// `acos` with the argument clamped to `[-1 + delta, 1 - delta]`.
    /// The derivative is evaluated at the clamped argument and its pole is
    /// capped at 1e3, which keeps backpropagation through long recurrences
    /// finite for near-collinear velocity pairs.
    pub fn acos_clamped(&self, a: Var, delta: F) -> Var {
        let lo = -F::one() + delta;
        let hi = F::one() - delta;
        let guard = F::cast(1e-6);
        self.unary(
            a,
            move |x| x.max(lo).min(hi).acos(),
            move |x, _| {
                let c = x.max(lo).min(hi);
                -F::one() / (F::one() - c * c).max(guard).sqrt()
            },
        )
    }

    pub fn softmax_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let last = va.ndim() - 1;
        let mut out = va.as_ref().clone();
        for mut lane in out.lanes_mut(Axis(last)) {
            let max = lane.iter().cloned().fold(F::neg_infinity(), F::max);
            lane.mapv_inplace(|x| (x - max).exp());
            let sum = lane.sum();
            lane.mapv_inplace(|x| x / sum);
        }
        let y = Rc::new(out.clone());
        self.op(
            out,
            &[a],
            Box::new(move |g, slots| {
                // dx = y * (g - sum_last(g * y))
                let gy = g.to_owned() * y.as_ref();
                let s = gy.sum_axis(Axis(gy.ndim() - 1)).insert_axis(Axis(gy.ndim() - 1));
                let mut back = g.clone();
                Zip::from(&mut back)
                    .and_broadcast(&s)
                    .for_each(|b, &sv| *b = *b - sv);
                back = back * y.as_ref();
                accumulate(&mut slots[a.0], back);
            }),
        )
    }

    pub fn log_softmax_last(&self, a: Var) -> Var {
        let va = self.value(a);
        let last = va.ndim() - 1;
        let mut out = va.as_ref().clone();
        for mut lane in out.lanes_mut(Axis(last)) {
            let max = lane.iter().cloned().fold(F::neg_infinity(), F::max);
            let lse = lane.iter().map(|&x| (x - max).exp()).sum::<F>().ln() + max;
            lane.mapv_inplace(|x| x - lse);
        }
        let y = Rc::new(out.clone());
        self.op(
            out,
            &[a],
            Box::new(move |g, slots| {
                // dx = g - softmax(x) * sum_last(g)
                let s = g.sum_axis(Axis(g.ndim() - 1)).insert_axis(Axis(g.ndim() - 1));
                let mut back = y.mapv(|v| v.exp());
                Zip::from(&mut back)
                    .and_broadcast(&s)
                    .for_each(|b, &sv| *b = -*b * sv);
                back += g;
                accumulate(&mut slots[a.0], back);
            }),
        )
    }

    /// Layer normalization over the last axis with learned scale and shift.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: F) -> Var {
        let vx = self.value(x);
        let vgamma = self.value(gamma);
        let vbeta = self.value(beta);
        let last = vx.ndim() - 1;
        let d = vx.shape()[last];
        let df = F::cast(d as f64);

        let mut xhat = vx.as_ref().clone();
        let mut inv = Vec::with_capacity(vx.len() / d);
        for mut lane in xhat.lanes_mut(Axis(last)) {
            let mu = lane.sum() / df;
            let var = lane.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / df;
            let iv = F::one() / (var + eps).sqrt();
            inv.push(iv);
            lane.mapv_inplace(|v| (v - mu) * iv);
        }
        let mut out = xhat.clone();
        Zip::from(&mut out)
            .and_broadcast(&*vgamma)
            .and_broadcast(&*vbeta)
            .for_each(|o, &gm, &bt| *o = *o * gm + bt);

        let xhat = Rc::new(xhat);
        let inv = Rc::new(inv);
        self.op(
            out,
            &[x, gamma, beta],
            Box::new(move |g, slots| {
                let nd = g.ndim();
                // dgamma / dbeta: reduce over all axes except the last.
                let lead: usize = g.shape()[..nd - 1].iter().product();
                let g2 = to_standard(g).into_shape_with_order((lead, d)).unwrap();
                let xh2 = to_standard(&xhat).into_shape_with_order((lead, d)).unwrap();
                let dgamma = (&g2 * &xh2).sum_axis(Axis(0));
                let dbeta = g2.sum_axis(Axis(0));
                accumulate(&mut slots[gamma.0], dgamma.into_dyn());
                accumulate(&mut slots[beta.0], dbeta.into_dyn());

                // dx = inv * (gy - mean(gy) - xhat * mean(gy * xhat))
                let gamma1 = vgamma.view().into_dimensionality::<ndarray::Ix1>().unwrap();
                let mut dx = ndarray::Array2::<F>::zeros((lead, d));
                for i in 0..lead {
                    let gy: Vec<F> = (0..d).map(|j| g2[[i, j]] * gamma1[j]).collect();
                    let mean_gy = gy.iter().cloned().sum::<F>() / df;
                    let mean_gy_xhat = gy
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| v * xh2[[i, j]])
                        .sum::<F>()
                        / df;
                    for j in 0..d {
                        dx[[i, j]] = inv[i] * (gy[j] - mean_gy - xh2[[i, j]] * mean_gy_xhat);
                    }
                }
                let back = dx
                    .into_shape_with_order(g.shape())
                    .unwrap()
                    .into_dyn();
                accumulate(&mut slots[x.0], back);
            }),
        )
    }

    /// One LSTM step, fused. Inputs: `x [B, D]`, `h_prev`/`c_prev` `[B, H]`,
    /// `wx [D, 4H]`, `wh [H, 4H]`, `b [4H]` with gate order (input, forget,
    /// cell, output). Returns `(h, c)`.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &self,
        x: Var,
        h_prev: Var,
        c_prev: Var,
        wx: Var,
        wh: Var,
        b: Var,
    ) -> (Var, Var) {
        let vx = self.value(x);
        let vh = self.value(h_prev);
        let vc = self.value(c_prev);
        let vwx = self.value(wx);
        let vwh = self.value(wh);
        let vb = self.value(b);

        let hidden = vh.shape()[1];
        let z = {
            let mut z = nd_matmul(&vx, &vwx);
            z += &nd_matmul(&vh, &vwh);
            Zip::from(&mut z).and_broadcast(&*vb).for_each(|a, &bv| *a += bv);
            z.into_dimensionality::<Ix2>().unwrap()
        };
        let gate = |off: usize| z.slice(ndarray::s![.., off * hidden..(off + 1) * hidden]);
        let i_g = gate(0).mapv(|v| F::one() / (F::one() + (-v).exp()));
        let f_g = gate(1).mapv(|v| F::one() / (F::one() + (-v).exp()));
        let g_g = gate(2).mapv(|v| v.tanh());
        let o_g = gate(3).mapv(|v| F::one() / (F::one() + (-v).exp()));
        let c_new = &f_g * &vc.view().into_dimensionality::<Ix2>().unwrap() + &i_g * &g_g;
        let tanh_c = c_new.mapv(|v| v.tanh());
        let h_new = &o_g * &tanh_c;

        struct Saved<F> {
            i_g: ndarray::Array2<F>,
            f_g: ndarray::Array2<F>,
            g_g: ndarray::Array2<F>,
            o_g: ndarray::Array2<F>,
            tanh_c: ndarray::Array2<F>,
        }
        let saved = Rc::new(Saved {
            i_g,
            f_g,
            g_g,
            o_g,
            tanh_c,
        });

        let sv = Rc::clone(&saved);
        let (vx_c, vh_c, vc_c, vwx_c, vwh_c) = (
            Rc::clone(&vx),
            Rc::clone(&vh),
            Rc::clone(&vc),
            Rc::clone(&vwx),
            Rc::clone(&vwh),
        );
        let c_var = self.op(
            c_new.clone().into_dyn(),
            &[x, h_prev, c_prev, wx, wh, b],
            Box::new(move |dc, slots| {
                let dc2 = dc.view().into_dimensionality::<Ix2>().unwrap();
                let vc2 = vc_c.view().into_dimensionality::<Ix2>().unwrap();
                let di = &dc2 * &sv.g_g;
                let df = &dc2 * &vc2;
                let dg = &dc2 * &sv.i_g;
                let dzi = &di * &sv.i_g * &sv.i_g.mapv(|v| F::one() - v);
                let dzf = &df * &sv.f_g * &sv.f_g.mapv(|v| F::one() - v);
                let dzg = &dg * &sv.g_g.mapv(|v| F::one() - v * v);
                let dz = concatenate(
                    Axis(1),
                    &[dzi.view(), dzf.view(), dzg.view()],
                )
                .unwrap();
                // Only the first 3H columns of the weights see these grads.
                let wx3 = vwx_c
                    .slice_axis(Axis(1), Slice::from(0..3 * hidden))
                    .to_owned()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let wh3 = vwh_c
                    .slice_axis(Axis(1), Slice::from(0..3 * hidden))
                    .to_owned()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                accumulate(&mut slots[x.0], dz.dot(&wx3.t()).into_dyn());
                accumulate(&mut slots[h_prev.0], dz.dot(&wh3.t()).into_dyn());
                accumulate(
                    &mut slots[c_prev.0],
                    (&dc2 * &sv.f_g).into_dyn(),
                );
                let vx2 = vx_c.view().into_dimensionality::<Ix2>().unwrap();
                let vh2 = vh_c.view().into_dimensionality::<Ix2>().unwrap();
                let mut dwx = ndarray::Array2::<F>::zeros(vwx_c.view().into_dimensionality::<Ix2>().unwrap().raw_dim());
                dwx.slice_mut(ndarray::s![.., 0..3 * hidden])
                    .assign(&vx2.t().dot(&dz));
                accumulate(&mut slots[wx.0], dwx.into_dyn());
                let mut dwh = ndarray::Array2::<F>::zeros(vwh_c.view().into_dimensionality::<Ix2>().unwrap().raw_dim());
                dwh.slice_mut(ndarray::s![.., 0..3 * hidden])
                    .assign(&vh2.t().dot(&dz));
                accumulate(&mut slots[wh.0], dwh.into_dyn());
                let mut db = ndarray::Array1::<F>::zeros(4 * hidden);
                db.slice_mut(ndarray::s![0..3 * hidden])
                    .assign(&dz.sum_axis(Axis(0)));
                accumulate(&mut slots[b.0], db.into_dyn());
            }),
        );

        let sv = saved;
        let (vx_h, vh_h, vwx_h, vwh_h) = (vx, vh, vwx, vwh);
        let h_var = self.op(
            h_new.into_dyn(),
            &[c_var, x, h_prev, wx, wh, b],
            Box::new(move |dh, slots| {
                let dh2 = dh.view().into_dimensionality::<Ix2>().unwrap();
                // Route the cell-state part of the gradient through c_var.
                let dc = &dh2 * &sv.o_g * &sv.tanh_c.mapv(|v| F::one() - v * v);
                accumulate(&mut slots[c_var.0], dc.into_dyn());
                let do_ = &dh2 * &sv.tanh_c;
                let dzo = &do_ * &sv.o_g * &sv.o_g.mapv(|v| F::one() - v);
                let wxo = vwx_h
                    .slice_axis(Axis(1), Slice::from(3 * hidden..4 * hidden))
                    .to_owned()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let who = vwh_h
                    .slice_axis(Axis(1), Slice::from(3 * hidden..4 * hidden))
                    .to_owned()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                accumulate(&mut slots[x.0], dzo.dot(&wxo.t()).into_dyn());
                accumulate(&mut slots[h_prev.0], dzo.dot(&who.t()).into_dyn());
                let vx2 = vx_h.view().into_dimensionality::<Ix2>().unwrap();
                let vh2 = vh_h.view().into_dimensionality::<Ix2>().unwrap();
                let mut dwx = ndarray::Array2::<F>::zeros(vwx_h.view().into_dimensionality::<Ix2>().unwrap().raw_dim());
                dwx.slice_mut(ndarray::s![.., 3 * hidden..4 * hidden])
                    .assign(&vx2.t().dot(&dzo));
                accumulate(&mut slots[wx.0], dwx.into_dyn());
                let mut dwh = ndarray::Array2::<F>::zeros(vwh_h.view().into_dimensionality::<Ix2>().unwrap().raw_dim());
                dwh.slice_mut(ndarray::s![.., 3 * hidden..4 * hidden])
                    .assign(&vh2.t().dot(&dzo));
                accumulate(&mut slots[wh.0], dwh.into_dyn());
                let mut db = ndarray::Array1::<F>::zeros(4 * hidden);
                db.slice_mut(ndarray::s![3 * hidden..4 * hidden])
                    .assign(&dzo.sum_axis(Axis(0)));
                accumulate(&mut slots[b.0], db.into_dyn());
            }),
        );
        (h_var, c_var)
    }
}

#[cfg(test)]
mod tests {
    use super::super::gradcheck::max_rel_error_inputs;
    use super::super::{Scalar, Tape, Var};
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
    }

    /// Reduce an op output to a scalar with fixed pseudo-random weights so
    /// every output coordinate affects the objective.
    fn weighted_sum(tape: &Tape<f64>, v: Var, seed: u64) -> Var {
        let shape = tape.shape(v);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = tape.constant(randn(&mut rng, &shape));
        tape.sum_all(tape.mul(v, w))
    }

    fn check(build: impl Fn(&Tape<f64>, &[Var]) -> Var, inputs: &[ArrayD<f64>]) {
        let err = max_rel_error_inputs(build, inputs, 1e-5);
        assert!(err < 1e-6, "finite-difference mismatch: {err}");
    }

    #[test]
    fn binary_broadcast_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(&mut rng, &[2, 3, 4]);
        let b = randn(&mut rng, &[4]);
        let c = randn(&mut rng, &[2, 1, 4]);
        check(|t, v| weighted_sum(t, t.add(v[0], v[1]), 11), &[a.clone(), b.clone()]);
        check(|t, v| weighted_sum(t, t.sub(v[0], v[1]), 12), &[a.clone(), c.clone()]);
        check(|t, v| weighted_sum(t, t.mul(v[0], v[1]), 13), &[a.clone(), b.clone()]);
        let b_off = b.mapv(|x| x + 3.0);
        check(|t, v| weighted_sum(t, t.div(v[0], v[1]), 14), &[a, b_off]);
    }

    #[test]
    fn matmul_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a2 = randn(&mut rng, &[3, 4]);
        let b2 = randn(&mut rng, &[4, 5]);
        check(|t, v| weighted_sum(t, t.matmul(v[0], v[1]), 21), &[a2, b2.clone()]);
        let a4 = randn(&mut rng, &[2, 3, 3, 4]);
        check(|t, v| weighted_sum(t, t.matmul(v[0], v[1]), 22), &[a4.clone(), b2]);
        let b4 = randn(&mut rng, &[2, 3, 4, 5]);
        check(|t, v| weighted_sum(t, t.matmul(v[0], v[1]), 23), &[a4, b4]);
    }

    #[test]
    fn shape_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = randn(&mut rng, &[2, 3, 4]);
        check(|t, v| weighted_sum(t, t.transpose_last2(v[0]), 31), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.permute(v[0], &[2, 0, 1]), 32), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.reshape(v[0], &[6, 4]), 33), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.slice_ax(v[0], 1, 1, 3), 34), &[a.clone()]);
        let b = randn(&mut rng, &[2, 2, 4]);
        check(
            |t, v| weighted_sum(t, t.concat(1, &[v[0], v[1]]), 35),
            &[a.clone(), b.clone()],
        );
        check(
            |t, v| weighted_sum(t, t.stack(1, &[v[0], v[1]]), 36),
            &[b.clone(), b],
        );
    }

    #[test]
    fn reduction_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = randn(&mut rng, &[3, 5]);
        check(|t, v| weighted_sum(t, t.sum_last(v[0]), 41), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.mean_last(v[0]), 42), &[a.clone()]);
        check(|t, v| t.mean_all(v[0]), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.min_last(v[0]), 43), &[a]);
    }

    #[test]
    fn unary_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = randn(&mut rng, &[2, 6]);
        check(|t, v| weighted_sum(t, t.sigmoid(v[0]), 51), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.tanh(v[0]), 52), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.exp(v[0]), 53), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.neg(v[0]), 54), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.scale(v[0], 2.5), 55), &[a.clone()]);
        // keep away from the relu kink and the clamp floors
        let pos = a.mapv(|x| x.abs() + 0.5);
        check(|t, v| weighted_sum(t, t.relu(v[0]), 56), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.ln_clamped(v[0], 1e-12), 57), &[pos.clone()]);
        check(|t, v| weighted_sum(t, t.sqrt_clamped(v[0], 1e-12), 58), &[pos]);
        let inner = a.mapv(|x| 0.9 * x.tanh());
        check(|t, v| weighted_sum(t, t.acos_clamped(v[0], 1e-9), 59), &[inner]);
    }

    #[test]
    fn softmax_and_norm_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = randn(&mut rng, &[2, 3, 5]);
        check(|t, v| weighted_sum(t, t.softmax_last(v[0]), 61), &[a.clone()]);
        check(|t, v| weighted_sum(t, t.log_softmax_last(v[0]), 62), &[a.clone()]);
        let gamma = randn(&mut rng, &[5]).mapv(|x| x + 2.0);
        let beta = randn(&mut rng, &[5]);
        check(
            |t, v| weighted_sum(t, t.layer_norm(v[0], v[1], v[2], 1e-5), 63),
            &[a, gamma, beta],
        );
    }

    #[test]
    fn lstm_cell_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (batch, din, hidden) = (3, 4, 5);
        let x = randn(&mut rng, &[batch, din]);
        let h = randn(&mut rng, &[batch, hidden]);
        let c = randn(&mut rng, &[batch, hidden]);
        let wx = randn(&mut rng, &[din, 4 * hidden]);
        let wh = randn(&mut rng, &[hidden, 4 * hidden]);
        let b = randn(&mut rng, &[4 * hidden]);
        // objective mixes both outputs so every backward path is exercised
        let build = |t: &Tape<f64>, v: &[Var]| {
            let (nh, nc) = t.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5]);
            let s1 = weighted_sum(t, nh, 71);
            let s2 = weighted_sum(t, nc, 72);
            t.add(s1, s2)
        };
        check(build, &[x, h, c, wx, wh, b]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tape = Tape::<f64>::new();
        let a = tape.constant(randn(&mut rng, &[4, 7]));
        let y = tape.softmax_last(a);
        let v = tape.value(y);
        for row in v.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn param_binding_deduplicates_and_accumulates() {
        use super::super::{init_uniform, ParamStore};
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::<f64>::new();
        store.insert("w", init_uniform(&mut rng, &[3, 3], 3));
        let tape = Tape::<f64>::new();
        let x = tape.constant(randn(&mut rng, &[2, 3]));
        let w1 = tape.param(&store, "w");
        let w2 = tape.param(&store, "w");
        assert_eq!(w1, w2);
        // apply the same parameter twice; grads must accumulate on one slot
        let y = tape.matmul(tape.matmul(x, w1), w2);
        let loss = tape.mean_all(y);
        let grads = tape.backward(loss);
        let named = tape.param_grads(&grads);
        assert_eq!(named.len(), 1);
        assert!(named[0].1.iter().any(|v| v.abs() > 0.0));
    }
}
