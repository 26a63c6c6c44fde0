//! Forward and backward kernels on batch-first tensors.
//!
//! Feature maps are `[N, C, H, W]`, flat features `[N, C]`.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(batch, channels, elements per channel)` of a batch-first tensor.
pub(crate) fn dims<T: Scalar>(x: &Tensor<T>) -> (usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2..].iter().product())
}

pub(crate) fn linear_fwd<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    let (xd, wd) = (x.data(), w.data());
    let mut y = vec![T::zero(); n * fout];
    for s in 0..n {
        let xr = &xd[s * fin..(s + 1) * fin];
        for o in 0..fout {
            let wr = &wd[o * fin..(o + 1) * fin];
            let mut acc = b.map_or(T::zero(), |b| b[o]);
            for i in 0..fin {
                acc += wr[i] * xr[i];
            }
            y[s * fout + o] = acc;
        }
    }
    Tensor::from_parts(vec![n, fout], y)
}

/// Returns `(dx, dw, db)`.
pub(crate) fn linear_bwd<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, fin) = (x.shape()[0], x.shape()[1]);
    let fout = w.shape()[0];
    let (xd, wd, gd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![T::zero(); n * fin];
    let mut dw = vec![T::zero(); fout * fin];
    let mut db = vec![T::zero(); fout];
    for s in 0..n {
        for o in 0..fout {
            let g = gd[s * fout + o];
            if g == T::zero() {
                continue;
            }
            db[o] += g;
            for i in 0..fin {
                dx[s * fin + i] += g * wd[o * fin + i];
                dw[o * fin + i] += g * xd[s * fin + i];
            }
        }
    }
    (
        Tensor::from_parts(vec![n, fin], dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::from_parts(vec![fout], db),
    )
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    fn out_dim(&self, d: usize) -> usize {
        (d + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Input coordinate for output coordinate `o` and kernel offset `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let p = (o * self.stride + k) as isize - self.padding as isize;
        (p >= 0 && (p as usize) < limit).then_some(p as usize)
    }
}

pub(crate) fn conv2d_fwd<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: ConvGeom) -> Tensor<T> {
    let [n, cin, h, wd] = x.shape()[..] else { unreachable!("conv input is 4-d") };
    let cout = w.shape()[0];
    let (cin_g, cout_g) = (cin / g.groups, cout / g.groups);
    let k = g.kernel;
    let (ho, wo) = (g.out_dim(h), g.out_dim(wd));
    let (xd, wt) = (x.data(), w.data());
    let mut y = vec![T::zero(); n * cout * ho * wo];
    for s in 0..n {
        for oc in 0..cout {
            let grp = oc / cout_g;
            let out = &mut y[(s * cout + oc) * ho * wo..(s * cout + oc + 1) * ho * wo];
            if let Some(b) = b {
                out.iter_mut().for_each(|v| *v = b[oc]);
            }
            for icl in 0..cin_g {
                let ic = grp * cin_g + icl;
                let xin = &xd[(s * cin + ic) * h * wd..(s * cin + ic + 1) * h * wd];
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = wt[((oc * cin_g + icl) * k + kh) * k + kw];
                        for oh in 0..ho {
                            let Some(ih) = g.src(oh, kh, h) else { continue };
                            for ow in 0..wo {
                                if let Some(iw) = g.src(ow, kw, wd) {
                                    out[oh * wo + ow] += wv * xin[ih * wd + iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![n, cout, ho, wo], y)
}

/// Returns `(dx, dw, db)`.
pub(crate) fn conv2d_bwd<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    g: ConvGeom,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let [n, cin, h, wd] = x.shape()[..] else { unreachable!("conv input is 4-d") };
    let cout = w.shape()[0];
    let (cin_g, cout_g) = (cin / g.groups, cout / g.groups);
    let k = g.kernel;
    let (ho, wo) = (dy.shape()[2], dy.shape()[3]);
    let (xd, wt, gd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![T::zero(); xd.len()];
    let mut dw = vec![T::zero(); wt.len()];
    let mut db = vec![T::zero(); cout];
    for s in 0..n {
        for oc in 0..cout {
            let grp = oc / cout_g;
            let go = &gd[(s * cout + oc) * ho * wo..(s * cout + oc + 1) * ho * wo];
            db[oc] += go.iter().copied().sum::<T>();
            for icl in 0..cin_g {
                let ic = grp * cin_g + icl;
                let base = (s * cin + ic) * h * wd;
                for kh in 0..k {
                    for kw in 0..k {
                        let wi = ((oc * cin_g + icl) * k + kh) * k + kw;
                        let wv = wt[wi];
                        let mut acc = T::zero();
                        for oh in 0..ho {
                            let Some(ih) = g.src(oh, kh, h) else { continue };
                            for ow in 0..wo {
                                if let Some(iw) = g.src(ow, kw, wd) {
                                    let gv = go[oh * wo + ow];
                                    acc += gv * xd[base + ih * wd + iw];
                                    dx[base + ih * wd + iw] += gv * wv;
                                }
                            }
                        }
                        dw[wi] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::from_parts(vec![cout], db),
    )
}

/// Per-channel mean and biased variance over batch and spatial positions.
pub(crate) fn channel_stats<T: Scalar>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let (n, c, inner) = dims(x);
    let m = T::of_usize(n * inner);
    let d = x.data();
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for s in 0..n {
            acc += d[(s * c + ch) * inner..(s * c + ch + 1) * inner].iter().copied().sum::<T>();
        }
        let mu = acc / m;
        let mut sq = T::zero();
        for s in 0..n {
            for &v in &d[(s * c + ch) * inner..(s * c + ch + 1) * inner] {
                sq += (v - mu) * (v - mu);
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    (mean, var)
}

/// Normalises with the given statistics; returns `(y, x_hat, inv_std)`.
pub(crate) fn batch_norm_fwd<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let (n, c, inner) = dims(x);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let d = x.data();
    let mut xhat = vec![T::zero(); d.len()];
    let mut y = vec![T::zero(); d.len()];
    for s in 0..n {
        for ch in 0..c {
            for i in (s * c + ch) * inner..(s * c + ch + 1) * inner {
                let h = (d[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (Tensor::from_parts(x.shape().to_vec(), y), Tensor::from_parts(x.shape().to_vec(), xhat), inv_std)
}

/// Backward through batch statistics; returns `(dx, dgamma, dbeta)`.
pub(crate) fn batch_norm_bwd<T: Scalar>(
    xhat: &Tensor<T>,
    inv_std: &[T],
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
    batch_stats: bool,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (n, c, inner) = dims(dy);
    let m = T::of_usize(n * inner);
    let (hd, gd) = (xhat.data(), dy.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            for i in (s * c + ch) * inner..(s * c + ch + 1) * inner {
                dgamma[ch] += gd[i] * hd[i];
                dbeta[ch] += gd[i];
            }
        }
    }
    let mut dx = vec![T::zero(); gd.len()];
    for s in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] * inv_std[ch];
            for i in (s * c + ch) * inner..(s * c + ch + 1) * inner {
                dx[i] = if batch_stats {
                    scale * (gd[i] - dbeta[ch] / m - hd[i] * dgamma[ch] / m)
                } else {
                    scale * gd[i]
                };
            }
        }
    }
    (
        Tensor::from_parts(dy.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    )
}

pub(crate) fn relu_fwd<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub(crate) fn relu_bwd<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = x.data().iter().zip(dy.data()).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect();
    Tensor::from_parts(x.shape().to_vec(), data)
}

pub(crate) fn avg_pool_fwd<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape()[..] else { unreachable!("pool input is 4-d") };
    let (ho, wo) = (h / k, w / k);
    let scale = T::one() / T::of_usize(k * k);
    let d = x.data();
    let mut y = vec![T::zero(); n * c * ho * wo];
    for p in 0..n * c {
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = T::zero();
                for i in 0..k {
                    for j in 0..k {
                        acc += d[p * h * w + (oh * k + i) * w + ow * k + j];
                    }
                }
                y[p * ho * wo + oh * wo + ow] = acc * scale;
            }
        }
    }
    Tensor::from_parts(vec![n, c, ho, wo], y)
}

pub(crate) fn avg_pool_bwd<T: Scalar>(x_shape: &[usize], dy: &Tensor<T>, k: usize) -> Tensor<T> {
    let [n, c, h, w] = x_shape[..] else { unreachable!("pool input is 4-d") };
    let (ho, wo) = (h / k, w / k);
    let scale = T::one() / T::of_usize(k * k);
    let g = dy.data();
    let mut dx = vec![T::zero(); n * c * h * w];
    for p in 0..n * c {
        for oh in 0..ho {
            for ow in 0..wo {
                let v = g[p * ho * wo + oh * wo + ow] * scale;
                for i in 0..k {
                    for j in 0..k {
                        dx[p * h * w + (oh * k + i) * w + ow * k + j] = v;
                    }
                }
            }
        }
    }
    Tensor::from_parts(x_shape.to_vec(), dx)
}

/// Channels `range` of a batch-first tensor.
pub(crate) fn slice_channels<T: Scalar>(x: &Tensor<T>, range: std::ops::Range<usize>) -> Tensor<T> {
    let (n, c, inner) = dims(x);
    if range == (0..c) {
        return x.clone();
    }
    let mut data = Vec::with_capacity(n * range.len() * inner);
    for s in 0..n {
        data.extend_from_slice(&x.data()[(s * c + range.start) * inner..(s * c + range.end) * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[1] = range.len();
    Tensor::from_parts(shape, data)
}

/// Adds `part` into channels `[offset, offset + part_channels)` of `into`.
pub(crate) fn add_into_channels<T: Scalar>(into: &mut Tensor<T>, part: &Tensor<T>, offset: usize) {
    let (n, c, inner) = dims(into);
    let pc = part.shape()[1];
    let pd = part.data();
    let d = into.data_mut();
    for s in 0..n {
        let dst = &mut d[(s * c + offset) * inner..(s * c + offset + pc) * inner];
        for (a, b) in dst.iter_mut().zip(&pd[s * pc * inner..(s + 1) * pc * inner]) {
            *a += *b;
        }
    }
}

pub(crate) fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let (n, _, inner) = dims(parts[0]);
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut shape = parts[0].shape().to_vec();
    shape[1] = total;
    let mut out = Tensor::zeros(&shape);
    let mut offset = 0;
    for p in parts {
        add_into_channels(&mut out, p, offset);
        offset += p.shape()[1];
    }
    debug_assert_eq!(out.len(), n * total * inner);
    out
}
