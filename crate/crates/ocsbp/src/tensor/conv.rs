//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Layout conventions: feature maps are `[C, H, W]`, conv weights are
//! `[C_out, C_in, k, k]`, transposed-conv weights are `[C_in, C_out, k, k]`.

use super::{accumulate, Array, El, Tensor};

/// Output extent of a convolution along one axis.
fn conv_out(extent: usize, k: usize, stride: usize, pad: usize) -> usize {
    (extent + 2 * pad - k) / stride + 1
}

/// col[(ci*k*k + u*k + v), (oy*wo + ox)] = x[ci, oy*s+u-p, ox*s+v-p]
fn im2col<T: El>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Array<T>, usize, usize) {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let mut col = Array::zeros(&[c * k * k, ho * wo]);
    let cd = col.data_mut();
    for ci in 0..c {
        for u in 0..k {
            for v in 0..k {
                let row = ((ci * k + u) * k + v) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + u) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + v) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cd[row + oy * wo + ox] = x[src_row + ix as usize];
                    }
                }
            }
        }
    }
    (col, ho, wo)
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `[c, h, w]` image.
fn col2im<T: El>(
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array<T> {
    let ho = conv_out(h, k, stride, pad);
    let wo = conv_out(w, k, stride, pad);
    let mut img = Array::zeros(&[c, h, w]);
    let id = img.data_mut();
    for ci in 0..c {
        for u in 0..k {
            for v in 0..k {
                let row = ((ci * k + u) * k + v) * ho * wo;
                for oy in 0..ho {
                    let iy = (oy * stride + u) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = (ci * h + iy as usize) * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + v) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = dst_row + ix as usize;
                        id[dst] = id[dst] + col[row + oy * wo + ox];
                    }
                }
            }
        }
    }
    img
}

/// c[m,n] = a[m,k_] @ b[n,k_]^T
fn gemm_a_bt<T: El>(m: usize, k_: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let mut bt = vec![T::zero(); k_ * n];
    for i in 0..n {
        for j in 0..k_ {
            bt[j * n + i] = b[i * k_ + j];
        }
    }
    T::gemm(m, k_, n, T::one(), a, &bt, T::zero(), c);
}

/// c[m,n] = a[k_,m]^T @ b[k_,n]
fn gemm_at_b<T: El>(m: usize, k_: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    let mut at = vec![T::zero(); m * k_];
    for i in 0..k_ {
        for j in 0..m {
            at[j * k_ + i] = a[i * m + j];
        }
    }
    T::gemm(m, k_, n, T::one(), &at, b, T::zero(), c);
}

impl<T: El> Tensor<T> {
    /// Zero-padded 2-D convolution. `self`: `[C_in, H, W]`,
    /// `weight`: `[C_out, C_in, k, k]`, `bias`: `[C_out]`.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Tensor<T> {
        self.same_graph(weight);
        self.same_graph(bias);
        let (value, req, col, ci, h, w, co, k, ho, wo) = {
            let inner = self.graph.inner.borrow();
            let x = &inner.values[self.idx];
            let wt = &inner.values[weight.idx];
            let b = &inner.values[bias.idx];
            assert_eq!(
                x.shape().len(),
                3,
                "conv2d input must be [C,H,W], got {:?}",
                x.shape()
            );
            assert_eq!(wt.shape().len(), 4, "conv2d weight must be [Co,Ci,k,k]");
            assert_eq!(wt.shape()[2], wt.shape()[3], "conv2d kernel must be square");
            let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (co, ci2, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
            assert_eq!(
                ci, ci2,
                "conv2d: input channels {ci} do not match weight channels {ci2}"
            );
            assert_eq!(b.shape(), &[co], "conv2d bias shape");
            let (col, ho, wo) = im2col(x.data(), ci, h, w, k, stride, pad);
            let mut out = Array::zeros(&[co, ho * wo]);
            T::gemm(
                co,
                ci * k * k,
                ho * wo,
                T::one(),
                wt.data(),
                col.data(),
                T::zero(),
                out.data_mut(),
            );
            for oc in 0..co {
                let bv = b.data()[oc];
                for p in &mut out.data_mut()[oc * ho * wo..(oc + 1) * ho * wo] {
                    *p = *p + bv;
                }
            }
            let req = inner.meta[self.idx].requires_grad
                || inner.meta[weight.idx].requires_grad
                || inner.meta[bias.idx].requires_grad;
            (out.reshaped(vec![co, ho, wo]), req, col, ci, h, w, co, k, ho, wo)
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let mut gw = Array::zeros(&[co, ci, k, k]);
                gemm_a_bt(co, ho * wo, ci * k * k, gout.data(), col.data(), gw.data_mut());
                let mut gb = Array::zeros(&[co]);
                for oc in 0..co {
                    let mut s = T::zero();
                    for &v in &gout.data()[oc * ho * wo..(oc + 1) * ho * wo] {
                        s = s + v;
                    }
                    gb.data_mut()[oc] = s;
                }
                let wt = &values[parents[1]];
                let mut dcol = vec![T::zero(); ci * k * k * ho * wo];
                gemm_at_b(ci * k * k, co, ho * wo, wt.data(), gout.data(), &mut dcol);
                let gx = col2im(&dcol, ci, h, w, k, stride, pad);
                accumulate(grads, parents[0], gx);
                accumulate(grads, parents[1], gw);
                accumulate(grads, parents[2], gb);
            }))
        } else {
            None
        };
        self.graph
            .push(value, vec![self.idx, weight.idx, bias.idx], req, back)
    }

    /// Transposed convolution. `self`: `[C_in, H, W]`,
    /// `weight`: `[C_in, C_out, k, k]`, `bias`: `[C_out]`.
    /// Output extent: `(H-1)*stride - 2*pad + k + out_pad`.
    pub fn conv_transpose2d(
        &self,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Tensor<T> {
        self.same_graph(weight);
        self.same_graph(bias);
        let (value, req, ci, h, w, co, k, hout, wout) = {
            let inner = self.graph.inner.borrow();
            let x = &inner.values[self.idx];
            let wt = &inner.values[weight.idx];
            let b = &inner.values[bias.idx];
            assert_eq!(x.shape().len(), 3, "conv_transpose2d input must be [C,H,W]");
            assert_eq!(wt.shape().len(), 4, "conv_transpose2d weight must be [Ci,Co,k,k]");
            assert_eq!(wt.shape()[2], wt.shape()[3]);
            let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (ci2, co, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
            assert_eq!(
                ci, ci2,
                "conv_transpose2d: input channels {ci} do not match weight channels {ci2}"
            );
            assert_eq!(b.shape(), &[co], "conv_transpose2d bias shape");
            let hout = (h - 1) * stride + k + out_pad - 2 * pad;
            let wout = (w - 1) * stride + k + out_pad - 2 * pad;
            assert_eq!(conv_out(hout, k, stride, pad), h, "conv_transpose2d geometry");
            // col = W^T @ x_mat, then scatter into the output image
            let mut col = vec![T::zero(); co * k * k * h * w];
            gemm_at_b(co * k * k, ci, h * w, wt.data(), x.data(), &mut col);
            let mut out = col2im(&col, co, hout, wout, k, stride, pad);
            for oc in 0..co {
                let bv = b.data()[oc];
                for p in &mut out.data_mut()[oc * hout * wout..(oc + 1) * hout * wout] {
                    *p = *p + bv;
                }
            }
            let req = inner.meta[self.idx].requires_grad
                || inner.meta[weight.idx].requires_grad
                || inner.meta[bias.idx].requires_grad;
            (out, req, ci, h, w, co, k, hout, wout)
        };
        let back: Option<super::BackFn<T>> = if req {
            Some(Box::new(move |values, grads, parents, out| {
                let gout = grads[out].clone().expect("gout");
                let (dcol, _, _) = im2col(gout.data(), co, hout, wout, k, stride, pad);
                // dX = W @ dcol
                let x = &values[parents[0]];
                let wt = &values[parents[1]];
                let mut gx = Array::zeros(&[ci, h, w]);
                T::gemm(
                    ci,
                    co * k * k,
                    h * w,
                    T::one(),
                    wt.data(),
                    dcol.data(),
                    T::zero(),
                    gx.data_mut(),
                );
                // dW = x_mat @ dcol^T
                let mut gw = Array::zeros(&[ci, co, k, k]);
                gemm_a_bt(ci, h * w, co * k * k, x.data(), dcol.data(), gw.data_mut());
                let mut gb = Array::zeros(&[co]);
                for oc in 0..co {
                    let mut s = T::zero();
                    for &v in &gout.data()[oc * hout * wout..(oc + 1) * hout * wout] {
                        s = s + v;
                    }
                    gb.data_mut()[oc] = s;
                }
                accumulate(grads, parents[0], gx);
                accumulate(grads, parents[1], gw);
                accumulate(grads, parents[2], gb);
            }))
        } else {
            None
        };
        self.graph
            .push(value, vec![self.idx, weight.idx, bias.idx], req, back)
    }
}
