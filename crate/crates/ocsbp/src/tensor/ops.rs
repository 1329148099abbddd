//! Elementwise, reduction, and structural ops with their backward rules.

use super::array::{broadcast_shape, broadcast_strides, reduce_to_shape, strides_of, zip_broadcast};
use super::{accumulate, Array, El, Tensor};

fn materialize<T: El>(a: &Array<T>, out_shape: &[usize]) -> Array<T> {
    if a.shape() == out_shape {
        return a.clone();
    }
    let n: usize = out_shape.iter().product();
    let st = broadcast_strides(a.shape(), out_shape);
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    let ad = a.data();
    for _ in 0..n {
        data.push(ad[off]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            off += st[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= st[d] * out_shape[d];
        }
    }
    Array::new(out_shape.to_vec(), data)
}

impl<T: El> Tensor<T> {
    fn binary(
        &self,
        other: &Tensor<T>,
        op: &str,
        fwd: fn(T, T) -> T,
        dfa: fn(T, T) -> T,
        dfb: fn(T, T) -> T,
    ) -> Tensor<T> {
        self.same_graph(other);
        let (value, out_shape, req) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.values[self.idx];
            let b = &inner.values[other.idx];
            let out_shape = broadcast_shape(op, a.shape(), b.shape())
                .unwrap_or_else(|e| panic!("{e}"));
            let value = zip_broadcast(&out_shape, a, b, fwd);
            let req = inner.meta[self.idx].requires_grad || inner.meta[other.idx].requires_grad;
            (value, out_shape, req)
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let a = &values[parents[0]];
                let b = &values[parents[1]];
                let ab = materialize(a, &out_shape);
                let bb = materialize(b, &out_shape);
                let mut ga = Array::zeros(&out_shape);
                for i in 0..ga.numel() {
                    ga.data_mut()[i] = gout.data()[i] * dfa(ab.data()[i], bb.data()[i]);
                }
                let mut gb = Array::zeros(&out_shape);
                for i in 0..gb.numel() {
                    gb.data_mut()[i] = gout.data()[i] * dfb(ab.data()[i], bb.data()[i]);
                }
                accumulate(grads, parents[0], reduce_to_shape(&ga, a.shape()));
                accumulate(grads, parents[1], reduce_to_shape(&gb, b.shape()));
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx, other.idx], req, back)
    }

    /// Unary op; backward multiplies the upstream gradient by `df(x, y)`
    /// where `x` is the input value and `y` the output value.
    fn unary(&self, fwd: fn(T) -> T, df: fn(T, T) -> T) -> Tensor<T> {
        let (value, req) = {
            let inner = self.graph.inner.borrow();
            (
                inner.values[self.idx].map(fwd),
                inner.meta[self.idx].requires_grad,
            )
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let x = &values[parents[0]];
                let y = &values[out];
                let mut g = Array::zeros(x.shape());
                for i in 0..g.numel() {
                    g.data_mut()[i] = gout.data()[i] * df(x.data()[i], y.data()[i]);
                }
                accumulate(grads, parents[0], g);
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx], req, back)
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, "add", |a, b| a + b, |_, _| T::one(), |_, _| T::one())
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, "sub", |a, b| a - b, |_, _| T::one(), |_, _| -T::one())
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |_, b| T::one() / b,
            |a, b| -a / (b * b),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.affine(-1.0, 0.0)
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn log(&self) -> Tensor<T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(
            |x| {
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            },
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// Square root with subgradient 0 at the origin.
    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(
            |x| x.max(T::zero()).sqrt(),
            |x, y| {
                if x > T::zero() {
                    T::from_f64(0.5) / y
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|x| x * x, |x, _| T::from_f64(2.0) * x)
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(&self, e: f64) -> Tensor<T> {
        let (value, req) = {
            let inner = self.graph.inner.borrow();
            let ee = T::from_f64(e);
            (
                inner.values[self.idx].map(|x| x.powf(ee)),
                inner.meta[self.idx].requires_grad,
            )
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let x = &values[parents[0]];
                let ee = T::from_f64(e);
                let em1 = T::from_f64(e - 1.0);
                let mut g = Array::zeros(x.shape());
                for i in 0..g.numel() {
                    g.data_mut()[i] = gout.data()[i] * ee * x.data()[i].powf(em1);
                }
                accumulate(grads, parents[0], g);
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx], req, back)
    }

    /// y = mul * x + add with constant coefficients.
    pub fn affine(&self, mul: f64, add: f64) -> Tensor<T> {
        let (value, req) = {
            let inner = self.graph.inner.borrow();
            let m = T::from_f64(mul);
            let a = T::from_f64(add);
            (
                inner.values[self.idx].map(|x| m * x + a),
                inner.meta[self.idx].requires_grad,
            )
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |_values, grads, parents, out| {
                let mut gout = grads[out].clone().expect("gout");
                gout.scale(T::from_f64(mul));
                accumulate(grads, parents[0], gout);
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx], req, back)
    }

    pub fn mul_scalar(&self, s: f64) -> Tensor<T> {
        self.affine(s, 0.0)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        self.affine(1.0, s)
    }

    /// Clamp to [lo, hi]; gradient is zero outside the open interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (value, req) = {
            let inner = self.graph.inner.borrow();
            let l = T::from_f64(lo);
            let h = T::from_f64(hi);
            (
                inner.values[self.idx].map(|x| x.max(l).min(h)),
                inner.meta[self.idx].requires_grad,
            )
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let x = &values[parents[0]];
                let l = T::from_f64(lo);
                let h = T::from_f64(hi);
                let mut g = Array::zeros(x.shape());
                for i in 0..g.numel() {
                    let xi = x.data()[i];
                    g.data_mut()[i] = if xi > l && xi < h {
                        gout.data()[i]
                    } else {
                        T::zero()
                    };
                }
                accumulate(grads, parents[0], g);
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx], req, back)
    }

    /// Lower clamp only; subgradient 0 in the clamped region and at the boundary.
    pub fn clamp_min(&self, lo: f64) -> Tensor<T> {
        self.clamp(lo, f64::INFINITY)
    }

    /// Cut the tensor out of the gradient flow.
    pub fn detach(&self) -> Tensor<T> {
        let value = self.value();
        self.graph.constant(value)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        let (value, req) = {
            let inner = self.graph.inner.borrow();
            (
                inner.values[self.idx].clone().reshaped(shape.to_vec()),
                inner.meta[self.idx].requires_grad,
            )
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let in_shape = values[parents[0]].shape().to_vec();
                accumulate(grads, parents[0], gout.reshaped(in_shape));
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx], req, back)
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor<T> {
        let (value, req) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.values[self.idx];
            broadcast_shape("broadcast_to", a.shape(), shape).unwrap_or_else(|e| panic!("{e}"));
            (materialize(a, shape), inner.meta[self.idx].requires_grad)
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let tgt = values[parents[0]].shape().to_vec();
                accumulate(grads, parents[0], reduce_to_shape(&gout, &tgt));
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx], req, back)
    }

    /// Sum over the given axes.
    pub fn sum_axes(&self, axes: &[usize], keepdims: bool) -> Tensor<T> {
        let axes = axes.to_vec();
        let (value, req, in_shape) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.values[self.idx];
            let in_shape = a.shape().to_vec();
            let out_shape = reduced_shape(&in_shape, &axes, keepdims);
            let mut out = Array::zeros(&out_shape);
            scatter_reduce(a, &axes, out.data_mut(), |acc, v| acc + v);
            (out, inner.meta[self.idx].requires_grad, in_shape)
        };
        let back: Option<super::BackFn<T>> = if req {
            let axes2 = axes.clone();
            let in_shape2 = in_shape.clone();
            Some(Box::new(move |_values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let mut g = Array::zeros(&in_shape2);
                broadcast_reduced(&gout, &in_shape2, &axes2, g.data_mut());
                accumulate(grads, parents[0], g);
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx], req, back)
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let rank = self.shape().len();
        let axes: Vec<usize> = (0..rank).collect();
        let s = self.sum_axes(&axes, false);
        if rank == 0 {
            s
        } else {
            s.reshape(&[])
        }
    }

    pub fn mean_axes(&self, axes: &[usize], keepdims: bool) -> Tensor<T> {
        let shape = self.shape();
        let count: usize = axes.iter().map(|&a| shape[a]).product();
        self.sum_axes(axes, keepdims).mul_scalar(1.0 / count as f64)
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum_all().mul_scalar(1.0 / n as f64)
    }

    /// Max over one axis (removed); also returns the winning indices along
    /// that axis. Ties break toward the lowest index.
    pub fn max_axis(&self, axis: usize) -> (Tensor<T>, Vec<usize>) {
        let (value, arg, req, in_shape) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.values[self.idx];
            let in_shape = a.shape().to_vec();
            let out_shape = reduced_shape(&in_shape, &[axis], false);
            let outer: usize = in_shape[..axis].iter().product();
            let axis_n = in_shape[axis];
            let inner_n: usize = in_shape[axis + 1..].iter().product();
            let mut vals = Vec::with_capacity(outer * inner_n);
            let mut args = Vec::with_capacity(outer * inner_n);
            for o in 0..outer {
                for i in 0..inner_n {
                    let mut best = a.data()[o * axis_n * inner_n + i];
                    let mut best_k = 0usize;
                    for k in 1..axis_n {
                        let v = a.data()[(o * axis_n + k) * inner_n + i];
                        if v > best {
                            best = v;
                            best_k = k;
                        }
                    }
                    vals.push(best);
                    args.push(best_k);
                }
            }
            (
                Array::new(out_shape, vals),
                args,
                inner.meta[self.idx].requires_grad,
                in_shape,
            )
        };
        let back: Option<super::BackFn<T>> = if req {
            let args = arg.clone();
            let in_shape2 = in_shape.clone();
            Some(Box::new(move |_values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let outer: usize = in_shape2[..axis].iter().product();
                let axis_n = in_shape2[axis];
                let inner_n: usize = in_shape2[axis + 1..].iter().product();
                let mut g = Array::zeros(&in_shape2);
                for o in 0..outer {
                    for i in 0..inner_n {
                        let k = args[o * inner_n + i];
                        g.data_mut()[(o * axis_n + k) * inner_n + i] =
                            gout.data()[o * inner_n + i];
                    }
                }
                accumulate(grads, parents[0], g);
            }))
        } else {
            None
        };
        let t = self.graph.push(value, vec![self.idx], req, back);
        (t, arg)
    }

    /// Contiguous slice along one axis.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor<T> {
        let (value, req, in_shape) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.values[self.idx];
            let in_shape = a.shape().to_vec();
            assert!(
                start + len <= in_shape[axis],
                "narrow: [{start}, {}) out of axis {axis} extent {}",
                start + len,
                in_shape[axis]
            );
            let mut out_shape = in_shape.clone();
            out_shape[axis] = len;
            let outer: usize = in_shape[..axis].iter().product();
            let axis_n = in_shape[axis];
            let inner_n: usize = in_shape[axis + 1..].iter().product();
            let mut data = Vec::with_capacity(outer * len * inner_n);
            for o in 0..outer {
                let base = (o * axis_n + start) * inner_n;
                data.extend_from_slice(&a.data()[base..base + len * inner_n]);
            }
            (
                Array::new(out_shape, data),
                inner.meta[self.idx].requires_grad,
                in_shape,
            )
        };
        let back: Option<super::BackFn<T>> = if req {
            let in_shape2 = in_shape.clone();
            Some(Box::new(move |_values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let outer: usize = in_shape2[..axis].iter().product();
                let axis_n = in_shape2[axis];
                let inner_n: usize = in_shape2[axis + 1..].iter().product();
                let mut g = Array::zeros(&in_shape2);
                for o in 0..outer {
                    let src = o * len * inner_n;
                    let dst = (o * axis_n + start) * inner_n;
                    g.data_mut()[dst..dst + len * inner_n]
                        .copy_from_slice(&gout.data()[src..src + len * inner_n]);
                }
                accumulate(grads, parents[0], g);
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx], req, back)
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.same_graph(other);
        let (value, req, m, k, n) = {
            let inner = self.graph.inner.borrow();
            let a = &inner.values[self.idx];
            let b = &inner.values[other.idx];
            assert_eq!(a.shape().len(), 2, "matmul lhs must be 2-D");
            assert_eq!(b.shape().len(), 2, "matmul rhs must be 2-D");
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (k2, n) = (b.shape()[0], b.shape()[1]);
            assert_eq!(
                k, k2,
                "matmul: inner extents differ ({:?} x {:?})",
                a.shape(),
                b.shape()
            );
            let mut out = Array::zeros(&[m, n]);
            T::gemm(m, k, n, T::one(), a.data(), b.data(), T::zero(), out.data_mut());
            let req = inner.meta[self.idx].requires_grad || inner.meta[other.idx].requires_grad;
            (out, req, m, k, n)
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let a = &values[parents[0]];
                let b = &values[parents[1]];
                // dA = gout @ B^T
                let bt = transpose2(b);
                let mut ga = Array::zeros(&[m, k]);
                T::gemm(m, n, k, T::one(), gout.data(), bt.data(), T::zero(), ga.data_mut());
                // dB = A^T @ gout
                let at = transpose2(a);
                let mut gb = Array::zeros(&[k, n]);
                T::gemm(k, m, n, T::one(), at.data(), gout.data(), T::zero(), gb.data_mut());
                accumulate(grads, parents[0], ga);
                accumulate(grads, parents[1], gb);
            }))
        } else {
            None
        };
        self.graph.push(value, vec![self.idx, other.idx], req, back)
    }

    /// Numerically stable softmax over one axis.
    pub fn softmax(&self, axis: usize) -> Tensor<T> {
        let m = self.max_axis_const_keepdim(axis);
        let e = self.sub(&m).exp();
        let s = e.sum_axes(&[axis], true);
        e.div(&s)
    }

    /// log(sum(exp(x))) over one axis via the shifted identity.
    pub fn logsumexp(&self, axis: usize, keepdims: bool) -> Tensor<T> {
        let m = self.max_axis_const_keepdim(axis);
        let s = self.sub(&m).exp().sum_axes(&[axis], true).log().add(&m);
        if keepdims {
            s
        } else {
            let shape = reduced_shape(&self.shape(), &[axis], false);
            s.reshape(&shape)
        }
    }

    pub fn log_softmax(&self, axis: usize) -> Tensor<T> {
        self.sub(&self.logsumexp(axis, true))
    }

    /// Max over an axis as a constant (used as the stabilising shift).
    fn max_axis_const_keepdim(&self, axis: usize) -> Tensor<T> {
        let inner = self.graph.inner.borrow();
        let a = &inner.values[self.idx];
        let in_shape = a.shape().to_vec();
        let mut out_shape = in_shape.clone();
        out_shape[axis] = 1;
        let outer: usize = in_shape[..axis].iter().product();
        let axis_n = in_shape[axis];
        let inner_n: usize = in_shape[axis + 1..].iter().product();
        let mut vals = Vec::with_capacity(outer * inner_n);
        for o in 0..outer {
            for i in 0..inner_n {
                let mut best = a.data()[o * axis_n * inner_n + i];
                for kk in 1..axis_n {
                    let v = a.data()[(o * axis_n + kk) * inner_n + i];
                    if v > best {
                        best = v;
                    }
                }
                vals.push(best);
            }
        }
        drop(inner);
        self.graph.constant(Array::new(out_shape, vals))
    }
}

/// Concatenate along an axis.
pub fn concat<T: El>(tensors: &[Tensor<T>], axis: usize) -> Tensor<T> {
    assert!(!tensors.is_empty(), "concat of zero tensors");
    let graph = tensors[0].graph.clone();
    let shapes: Vec<Vec<usize>> = tensors.iter().map(|t| t.shape()).collect();
    for s in &shapes {
        assert_eq!(s.len(), shapes[0].len(), "concat rank mismatch");
        for d in 0..s.len() {
            if d != axis {
                assert_eq!(s[d], shapes[0][d], "concat extent mismatch on dim {d}");
            }
        }
    }
    let mut out_shape = shapes[0].clone();
    out_shape[axis] = shapes.iter().map(|s| s[axis]).sum();
    let outer: usize = out_shape[..axis].iter().product();
    let inner_n: usize = out_shape[axis + 1..].iter().product();
    let mut data = vec![T::zero(); out_shape.iter().product()];
    let mut req = false;
    {
        let inner = graph.inner.borrow();
        let mut off = 0usize;
        for (t, s) in tensors.iter().zip(&shapes) {
            let a = &inner.values[t.idx];
            req |= inner.meta[t.idx].requires_grad;
            let len = s[axis];
            for o in 0..outer {
                let src = o * len * inner_n;
                let dst = (o * out_shape[axis] + off) * inner_n;
                data[dst..dst + len * inner_n]
                    .copy_from_slice(&a.data()[src..src + len * inner_n]);
            }
            off += len;
        }
    }
    let parents: Vec<usize> = tensors.iter().map(|t| t.idx).collect();
    let axis_lens: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
    let total = out_shape[axis];
    let back: Option<super::BackFn<T>> = if req {
        Some(Box::new(move |values, grads, parents, out| {
            let gout = grads[out].clone().expect("gout");
            let mut off = 0usize;
            for (pi, &p) in parents.iter().enumerate() {
                let len = axis_lens[pi];
                let mut g = Array::zeros(values[p].shape());
                for o in 0..outer {
                    let dst = o * len * inner_n;
                    let src = (o * total + off) * inner_n;
                    g.data_mut()[dst..dst + len * inner_n]
                        .copy_from_slice(&gout.data()[src..src + len * inner_n]);
                }
                accumulate(grads, p, g);
                off += len;
            }
        }))
    } else {
        None
    };
    graph.push(Array::new(out_shape, data), parents, req, back)
}

fn transpose2<T: El>(a: &Array<T>) -> Array<T> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = Array::zeros(&[n, m]);
    for i in 0..m {
        for j in 0..n {
            out.data_mut()[j * m + i] = a.data()[i * n + j];
        }
    }
    out
}

fn reduced_shape(shape: &[usize], axes: &[usize], keepdims: bool) -> Vec<usize> {
    let mut out = Vec::new();
    for (d, &s) in shape.iter().enumerate() {
        if axes.contains(&d) {
            if keepdims {
                out.push(1);
            }
        } else {
            out.push(s);
        }
    }
    out
}

fn scatter_reduce<T: El>(a: &Array<T>, axes: &[usize], out: &mut [T], f: impl Fn(T, T) -> T) {
    let shape = a.shape();
    // Strides into the reduced output: 0 on reduced axes.
    let mut kept_shape = shape.to_vec();
    for &ax in axes {
        kept_shape[ax] = 1;
    }
    let kept_strides_own = strides_of(&kept_shape);
    let mut st = vec![0usize; shape.len()];
    for d in 0..shape.len() {
        if !axes.contains(&d) {
            st[d] = kept_strides_own[d];
        }
    }
    let mut idx = vec![0usize; shape.len()];
    let mut off = 0usize;
    for &v in a.data() {
        out[off] = f(out[off], v);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            off += st[d];
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
            off -= st[d] * shape[d];
        }
    }
}

fn broadcast_reduced<T: El>(gout: &Array<T>, in_shape: &[usize], axes: &[usize], g: &mut [T]) {
    let mut kept_shape = in_shape.to_vec();
    for &ax in axes {
        kept_shape[ax] = 1;
    }
    let kept_strides_own = strides_of(&kept_shape);
    let mut st = vec![0usize; in_shape.len()];
    for d in 0..in_shape.len() {
        if !axes.contains(&d) {
            st[d] = kept_strides_own[d];
        }
    }
    let mut idx = vec![0usize; in_shape.len()];
    let mut off = 0usize;
    for gi in g.iter_mut() {
        *gi = gout.data()[off];
        for d in (0..in_shape.len()).rev() {
            idx[d] += 1;
            off += st[d];
            if idx[d] < in_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= st[d] * in_shape[d];
        }
    }
}
