//! Raw numeric kernels: matmul, conv2d, maxpool2d and their gradients.
//!
//! These are plain functions over flat `f64` slices, shared by the tape ops
//! (recorded forward + backward) and by the tape-free prediction path, so the
//! two routes compute identical arithmetic.

use crate::error::{Error, Result};

// ── Matmul ──────────────────────────────────────────────────────────────

/// C[m,n] = A[m,k] · B[k,n]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// dA[m,k] = dC[m,n] · Bᵀ (B is [k,n])
pub(crate) fn matmul_grad_a(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dcrow = &dc[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += dcrow[j] * brow[j];
            }
            da[i * k + p] = acc;
        }
    }
    da
}

/// dB[k,n] = Aᵀ · dC (A is [m,k], dC is [m,n])
pub(crate) fn matmul_grad_b(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let dcrow = &dc[i * n..(i + 1) * n];
            let dbrow = &mut db[p * n..(p + 1) * n];
            for j in 0..n {
                dbrow[j] += av * dcrow[j];
            }
        }
    }
    db
}

// ── Conv2d ──────────────────────────────────────────────────────────────

/// Zero-padding mode for conv2d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding; output shrinks by the kernel extent.
    Valid,
    /// Output spatial size = ceil(input / stride); asymmetric remainder pads
    /// toward the bottom/right.
    Same,
}

/// Fully resolved conv2d geometry.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvDims {
    pub fn resolve(x_shape: &[usize], w_shape: &[usize], stride: usize, padding: Padding) -> Result<Self> {
        if x_shape.len() != 4 {
            return Err(Error::shape("conv2d", "NCHW input (4 axes)", x_shape));
        }
        if w_shape.len() != 4 {
            return Err(Error::shape("conv2d", "OIHW weight (4 axes)", w_shape));
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::InvalidParameter {
                name: "stride",
                reason: format!("conv2d supports stride 1 or 2, got {stride}"),
            });
        }
        let (n, cin, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (cout, wcin, kh, kw) = (w_shape[0], w_shape[1], w_shape[2], w_shape[3]);
        if cin != wcin {
            return Err(Error::shape("conv2d", format!("weight in-channels {cin}"), wcin));
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Valid => {
                if h < kh || w < kw {
                    return Err(Error::shape("conv2d", format!("input >= {kh}x{kw} kernel"), (h, w)));
                }
                ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0)
            }
            Padding::Same => {
                let oh = h.div_ceil(stride);
                let ow = w.div_ceil(stride);
                let pad_h = ((oh - 1) * stride + kh).saturating_sub(h);
                let pad_w = ((ow - 1) * stride + kw).saturating_sub(w);
                (oh, ow, pad_h / 2, pad_w / 2)
            }
        };
        Ok(ConvDims { n, cin, h, w, cout, kh, kw, stride, pad_top, pad_left, oh, ow })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.oh, self.ow]
    }
}

pub(crate) fn conv2d(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.n * d.cout * d.oh * d.ow];
    for b in 0..d.n {
        for co in 0..d.cout {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let mut acc = 0.0;
                    for ci in 0..d.cin {
                        let xbase = ((b * d.cin + ci) * d.h) * d.w;
                        let wbase = ((co * d.cin + ci) * d.kh) * d.kw;
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.pad_top as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.pad_left as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                acc += x[xbase + iy as usize * d.w + ix as usize]
                                    * w[wbase + ky * d.kw + kx];
                            }
                        }
                    }
                    out[((b * d.cout + co) * d.oh + oy) * d.ow + ox] = acc;
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_grad_x(dout: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut dx = vec![0.0; d.n * d.cin * d.h * d.w];
    for b in 0..d.n {
        for co in 0..d.cout {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let g = dout[((b * d.cout + co) * d.oh + oy) * d.ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..d.cin {
                        let xbase = ((b * d.cin + ci) * d.h) * d.w;
                        let wbase = ((co * d.cin + ci) * d.kh) * d.kw;
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.pad_top as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.pad_left as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                dx[xbase + iy as usize * d.w + ix as usize] +=
                                    g * w[wbase + ky * d.kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

pub(crate) fn conv2d_grad_w(x: &[f64], dout: &[f64], d: &ConvDims) -> Vec<f64> {
    let mut dw = vec![0.0; d.cout * d.cin * d.kh * d.kw];
    for b in 0..d.n {
        for co in 0..d.cout {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let g = dout[((b * d.cout + co) * d.oh + oy) * d.ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ci in 0..d.cin {
                        let xbase = ((b * d.cin + ci) * d.h) * d.w;
                        let wbase = ((co * d.cin + ci) * d.kh) * d.kw;
                        for ky in 0..d.kh {
                            let iy = (oy * d.stride + ky) as isize - d.pad_top as isize;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            for kx in 0..d.kw {
                                let ix = (ox * d.stride + kx) as isize - d.pad_left as isize;
                                if ix < 0 || ix >= d.w as isize {
                                    continue;
                                }
                                dw[wbase + ky * d.kw + kx] +=
                                    g * x[xbase + iy as usize * d.w + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    dw
}

// ── Maxpool2d ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolDims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolDims {
    pub fn resolve(x_shape: &[usize], window: usize, stride: usize) -> Result<Self> {
        if x_shape.len() != 4 {
            return Err(Error::shape("maxpool2d", "NCHW input (4 axes)", x_shape));
        }
        if window == 0 || stride == 0 {
            return Err(Error::InvalidParameter {
                name: "maxpool window/stride",
                reason: "must be positive".into(),
            });
        }
        let (n, c, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        if h < window || w < window {
            return Err(Error::shape("maxpool2d", format!("input >= {window}x{window} window"), (h, w)));
        }
        Ok(PoolDims {
            n,
            c,
            h,
            w,
            window,
            stride,
            oh: (h - window) / stride + 1,
            ow: (w - window) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.c, self.oh, self.ow]
    }
}

/// Returns pooled values and, per output element, the flat input index of the
/// selected maximum. Ties pick the first maximum in row-major scan order, so
/// backward routing is deterministic.
pub(crate) fn maxpool2d(x: &[f64], d: &PoolDims) -> (Vec<f64>, Vec<usize>) {
    let out_len = d.n * d.c * d.oh * d.ow;
    let mut out = vec![0.0; out_len];
    let mut argmax = vec![0usize; out_len];
    for b in 0..d.n {
        for ch in 0..d.c {
            let base = ((b * d.c + ch) * d.h) * d.w;
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for ky in 0..d.window {
                        for kx in 0..d.window {
                            let idx = base + (oy * d.stride + ky) * d.w + (ox * d.stride + kx);
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((b * d.c + ch) * d.oh + oy) * d.ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    (out, argmax)
}

pub(crate) fn maxpool2d_grad(dout: &[f64], argmax: &[usize], x_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; x_len];
    for (g, &idx) in dout.iter().zip(argmax) {
        dx[idx] += g;
    }
    dx
}
