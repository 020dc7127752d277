//! Dense 5-D tensors `[N, C, H, D, W]` and the forward/backward kernels of
//! every differentiable op used by the network.

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 5],
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Shape {
                op: "Tensor::from_vec",
                axis: "elements",
                expected: n,
                found: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: [1; 5],
            data: vec![v],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, o: &Tensor) {
        debug_assert_eq!(self.shape, o.shape);
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }
}

const AXES: [&str; 5] = ["batch", "channels", "H", "D", "W"];

fn expect_axis(op: &'static str, axis: usize, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Shape {
            op,
            axis: AXES[axis],
            expected,
            found,
        });
    }
    Ok(())
}

fn expect_same(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    for k in 0..5 {
        expect_axis(op, k, a.shape[k], b.shape[k])?;
    }
    Ok(())
}

/// Checks a conv kernel `[Co, Ci, k, k, k]` (odd cubic) against input and bias.
fn check_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<usize> {
    expect_axis("conv3d", 1, w.shape[1], x.channels())?;
    let k = w.shape[2];
    if k % 2 == 0 || w.shape[3] != k || w.shape[4] != k {
        return Err(Error::Shape {
            op: "conv3d",
            axis: "kernel",
            expected: k | 1,
            found: if k % 2 == 0 { k } else { w.shape[3].max(w.shape[4]) },
        });
    }
    expect_axis("conv3d", 0, w.shape[0], b.len())?;
    Ok(k)
}

/// Offsets for a same-padded kernel tap: output index `o` reads input `o + off`.
#[inline]
fn valid_range(n: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// Same-padded 3-D cross-correlation. `w` is `[Co, Ci, k, k, k]`, `b` has `Co` entries.
pub fn conv3d(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let k = check_conv(x, w, b)?;
    let [n, ci] = [x.shape[0], x.shape[1]];
    let co = w.shape[0];
    let [sh, sd, sw] = x.spatial();
    let plane = sd * sw;
    let vol = sh * plane;
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros([n, co, sh, sd, sw]);
    out.data.par_chunks_mut(vol).enumerate().for_each(|(idx, o)| {
        let (bn, oc) = (idx / co, idx % co);
        o.fill(b.data[oc]);
        for ic in 0..ci {
            let xin = &x.data[(bn * ci + ic) * vol..][..vol];
            let wk = &w.data[(oc * ci + ic) * k * k * k..][..k * k * k];
            for a in 0..k {
                let dh = a as isize - p;
                let (h0, h1) = valid_range(sh, dh);
                for bb in 0..k {
                    let dd = bb as isize - p;
                    let (d0, d1) = valid_range(sd, dd);
                    for c in 0..k {
                        let dw = c as isize - p;
                        let (w0, w1) = valid_range(sw, dw);
                        let wv = wk[(a * k + bb) * k + c];
                        if w0 >= w1 {
                            continue;
                        }
                        for h in h0..h1 {
                            let ih = (h as isize + dh) as usize;
                            for d in d0..d1 {
                                let id = (d as isize + dd) as usize;
                                let orow = &mut o[h * plane + d * sw + w0..h * plane + d * sw + w1];
                                let base = ih * plane + id * sw;
                                let irow = &xin[(base as isize + w0 as isize + dw) as usize..][..w1 - w0];
                                for (ov, iv) in orow.iter_mut().zip(irow) {
                                    *ov += wv * iv;
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of [`conv3d`] with respect to input, kernel and bias.
pub fn conv3d_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    need_x: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let k = w.shape[2];
    let [n, ci] = [x.shape[0], x.shape[1]];
    let co = w.shape[0];
    let [sh, sd, sw] = x.spatial();
    let plane = sd * sw;
    let vol = sh * plane;
    let p = (k / 2) as isize;
    let k3 = k * k * k;

    let gx = need_x.then(|| {
        let mut gx = Tensor::zeros(x.shape);
        gx.data.par_chunks_mut(vol).enumerate().for_each(|(idx, gxc)| {
            let (bn, ic) = (idx / ci, idx % ci);
            for oc in 0..co {
                let gout = &g.data[(bn * co + oc) * vol..][..vol];
                let wk = &w.data[(oc * ci + ic) * k3..][..k3];
                for a in 0..k {
                    let dh = a as isize - p;
                    let (h0, h1) = valid_range(sh, dh);
                    for bb in 0..k {
                        let dd = bb as isize - p;
                        let (d0, d1) = valid_range(sd, dd);
                        for c in 0..k {
                            let dw = c as isize - p;
                            let (w0, w1) = valid_range(sw, dw);
                            if w0 >= w1 {
                                continue;
                            }
                            let wv = wk[(a * k + bb) * k + c];
                            for h in h0..h1 {
                                let ih = (h as isize + dh) as usize;
                                for d in d0..d1 {
                                    let id = (d as isize + dd) as usize;
                                    let grow = &gout[h * plane + d * sw + w0..h * plane + d * sw + w1];
                                    let start = (ih * plane + id * sw) as isize + w0 as isize + dw;
                                    let xrow = &mut gxc[start as usize..][..w1 - w0];
                                    for (xv, gv) in xrow.iter_mut().zip(grow) {
                                        *xv += wv * gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
        gx
    });

    let mut gw = Tensor::zeros(w.shape);
    gw.data.par_chunks_mut(ci * k3).enumerate().for_each(|(oc, gwo)| {
        for bn in 0..n {
            let gout = &g.data[(bn * co + oc) * vol..][..vol];
            for ic in 0..ci {
                let xin = &x.data[(bn * ci + ic) * vol..][..vol];
                for a in 0..k {
                    let dh = a as isize - p;
                    let (h0, h1) = valid_range(sh, dh);
                    for bb in 0..k {
                        let dd = bb as isize - p;
                        let (d0, d1) = valid_range(sd, dd);
                        for c in 0..k {
                            let dw = c as isize - p;
                            let (w0, w1) = valid_range(sw, dw);
                            if w0 >= w1 {
                                continue;
                            }
                            let mut s = 0.0;
                            for h in h0..h1 {
                                let ih = (h as isize + dh) as usize;
                                for d in d0..d1 {
                                    let id = (d as isize + dd) as usize;
                                    let grow = &gout[h * plane + d * sw + w0..h * plane + d * sw + w1];
                                    let start = (ih * plane + id * sw) as isize + w0 as isize + dw;
                                    let xrow = &xin[start as usize..][..w1 - w0];
                                    s += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                            gwo[ic * k3 + (a * k + bb) * k + c] += s;
                        }
                    }
                }
            }
        }
    });

    let mut gb = Tensor::zeros([co, 1, 1, 1, 1]);
    for bn in 0..n {
        for oc in 0..co {
            gb.data[oc] += g.data[(bn * co + oc) * vol..][..vol].iter().sum::<f64>();
        }
    }
    (gx, gw, gb)
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

pub fn relu_backward(x: &Tensor, g: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape,
        data: x
            .data
            .iter()
            .zip(&g.data)
            .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
            .collect(),
    }
}

fn check_even(op: &'static str, x: &Tensor) -> Result<()> {
    for axis in 2..5 {
        if x.shape[axis] % 2 != 0 {
            return Err(Error::Shape {
                op,
                axis: AXES[axis],
                expected: x.shape[axis] + 1,
                found: x.shape[axis],
            });
        }
    }
    Ok(())
}

/// 2x2x2 max pooling with stride 2. Also returns the flat input index of
/// each maximum (first one on ties).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    check_even("maxpool3d", x)?;
    let [n, c, sh, sd, sw] = x.shape;
    let (oh, od, ow) = (sh / 2, sd / 2, sw / 2);
    let mut out = Tensor::zeros([n, c, oh, od, ow]);
    let mut arg = vec![0usize; out.len()];
    let ovol = oh * od * ow;
    let ivol = sh * sd * sw;
    out.data
        .par_chunks_mut(ovol)
        .zip(arg.par_chunks_mut(ovol))
        .enumerate()
        .for_each(|(nc, (o, a))| {
            let base = nc * ivol;
            for h in 0..oh {
                for d in 0..od {
                    for w in 0..ow {
                        let mut bi = base + ((2 * h) * sd + 2 * d) * sw + 2 * w;
                        let mut best = x.data[bi];
                        for dh in 0..2 {
                            for dd in 0..2 {
                                for dw in 0..2 {
                                    let i = base + ((2 * h + dh) * sd + 2 * d + dd) * sw + 2 * w + dw;
                                    if x.data[i] > best {
                                        best = x.data[i];
                                        bi = i;
                                    }
                                }
                            }
                        }
                        let oi = (h * od + d) * ow + w;
                        o[oi] = best;
                        a[oi] = bi;
                    }
                }
            }
        });
    Ok((out, arg))
}

pub fn maxpool2_backward(input_shape: [usize; 5], arg: &[usize], g: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    for (gv, &i) in g.data.iter().zip(arg) {
        gx.data[i] += gv;
    }
    gx
}

/// Transposed convolution with a 2x2x2 kernel and stride 2. `w` is
/// `[Ci, Co, 2, 2, 2]`; each spatial dim doubles.
pub fn upconv2(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_axis("upconv3d", 1, w.shape[0], x.channels())?;
    for axis in 2..5 {
        expect_axis("upconv3d", axis, 2, w.shape[axis])?;
    }
    expect_axis("upconv3d", 1, w.shape[1], b.len())?;
    let [n, ci, sh, sd, sw] = x.shape;
    let co = w.shape[1];
    let (oh, od, ow) = (2 * sh, 2 * sd, 2 * sw);
    let ivol = sh * sd * sw;
    let ovol = oh * od * ow;
    let mut out = Tensor::zeros([n, co, oh, od, ow]);
    out.data.par_chunks_mut(ovol).enumerate().for_each(|(idx, o)| {
        let (bn, oc) = (idx / co, idx % co);
        o.fill(b.data[oc]);
        for ic in 0..ci {
            let xin = &x.data[(bn * ci + ic) * ivol..][..ivol];
            let wk = &w.data[(ic * co + oc) * 8..][..8];
            for h in 0..sh {
                for d in 0..sd {
                    for wi in 0..sw {
                        let v = xin[(h * sd + d) * sw + wi];
                        for a in 0..2 {
                            for bb in 0..2 {
                                let row = ((2 * h + a) * od + 2 * d + bb) * ow + 2 * wi;
                                o[row] += v * wk[(a * 2 + bb) * 2];
                                o[row + 1] += v * wk[(a * 2 + bb) * 2 + 1];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

pub fn upconv2_backward(x: &Tensor, w: &Tensor, g: &Tensor, need_x: bool) -> (Option<Tensor>, Tensor, Tensor) {
    let [n, ci, sh, sd, sw] = x.shape;
    let co = w.shape[1];
    let (od, ow) = (2 * sd, 2 * sw);
    let ivol = sh * sd * sw;
    let ovol = 8 * ivol;
    let tap = |gout: &[f64], h: usize, d: usize, wi: usize, a: usize, bb: usize, c: usize| {
        gout[((2 * h + a) * od + 2 * d + bb) * ow + 2 * wi + c]
    };
    let gx = need_x.then(|| {
        let mut gx = Tensor::zeros(x.shape);
        gx.data.par_chunks_mut(ivol).enumerate().for_each(|(idx, gxc)| {
            let (bn, ic) = (idx / ci, idx % ci);
            for oc in 0..co {
                let gout = &g.data[(bn * co + oc) * ovol..][..ovol];
                let wk = &w.data[(ic * co + oc) * 8..][..8];
                for h in 0..sh {
                    for d in 0..sd {
                        for wi in 0..sw {
                            let mut s = 0.0;
                            for a in 0..2 {
                                for bb in 0..2 {
                                    for c in 0..2 {
                                        s += wk[(a * 2 + bb) * 2 + c] * tap(gout, h, d, wi, a, bb, c);
                                    }
                                }
                            }
                            gxc[(h * sd + d) * sw + wi] += s;
                        }
                    }
                }
            }
        });
        gx
    });
    let mut gw = Tensor::zeros(w.shape);
    gw.data.par_chunks_mut(co * 8).enumerate().for_each(|(ic, gwi)| {
        for bn in 0..n {
            let xin = &x.data[(bn * ci + ic) * ivol..][..ivol];
            for oc in 0..co {
                let gout = &g.data[(bn * co + oc) * ovol..][..ovol];
                for a in 0..2 {
                    for bb in 0..2 {
                        for c in 0..2 {
                            let mut s = 0.0;
                            for h in 0..sh {
                                for d in 0..sd {
                                    for wi in 0..sw {
                                        s += xin[(h * sd + d) * sw + wi] * tap(gout, h, d, wi, a, bb, c);
                                    }
                                }
                            }
                            gwi[oc * 8 + (a * 2 + bb) * 2 + c] += s;
                        }
                    }
                }
            }
        }
    });
    let mut gb = Tensor::zeros([co, 1, 1, 1, 1]);
    for bn in 0..n {
        for oc in 0..co {
            gb.data[oc] += g.data[(bn * co + oc) * ovol..][..ovol].iter().sum::<f64>();
        }
    }
    (gx, gw, gb)
}

/// Channel concatenation `[a, b]`.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_axis("concat_channels", 0, a.shape[0], b.shape[0])?;
    for axis in 2..5 {
        expect_axis("concat_channels", axis, a.shape[axis], b.shape[axis])?;
    }
    let n = a.shape[0];
    let (ca, cb) = (a.channels(), b.channels());
    let vol = a.spatial_len();
    let mut out = Vec::with_capacity(a.len() + b.len());
    for bn in 0..n {
        out.extend_from_slice(&a.data[bn * ca * vol..(bn + 1) * ca * vol]);
        out.extend_from_slice(&b.data[bn * cb * vol..(bn + 1) * cb * vol]);
    }
    let mut shape = a.shape;
    shape[1] = ca + cb;
    Tensor::from_vec(shape, out)
}

pub fn concat_backward(a_shape: [usize; 5], b_shape: [usize; 5], g: &Tensor) -> (Tensor, Tensor) {
    let n = a_shape[0];
    let vol: usize = a_shape[2..].iter().product();
    let (ca, cb) = (a_shape[1], b_shape[1]);
    let mut ga = Vec::with_capacity(n * ca * vol);
    let mut gb = Vec::with_capacity(n * cb * vol);
    for bn in 0..n {
        let base = bn * (ca + cb) * vol;
        ga.extend_from_slice(&g.data[base..base + ca * vol]);
        gb.extend_from_slice(&g.data[base + ca * vol..base + (ca + cb) * vol]);
    }
    (
        Tensor { shape: a_shape, data: ga },
        Tensor { shape: b_shape, data: gb },
    )
}

/// Per-voxel softmax over channels with max subtraction.
pub fn softmax_channels(x: &Tensor) -> Result<Tensor> {
    let c = x.channels();
    if c == 0 {
        return Err(Error::Shape {
            op: "softmax_channels",
            axis: "channels",
            expected: 1,
            found: 0,
        });
    }
    let vol = x.spatial_len();
    let mut out = Tensor::zeros(x.shape);
    for bn in 0..x.batch() {
        let base = bn * c * vol;
        for v in 0..vol {
            let m = (0..c).map(|k| x.data[base + k * vol + v]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..c {
                let e = (x.data[base + k * vol + v] - m).exp();
                out.data[base + k * vol + v] = e;
                s += e;
            }
            for k in 0..c {
                out.data[base + k * vol + v] /= s;
            }
        }
    }
    Ok(out)
}

pub fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let c = y.channels();
    let vol = y.spatial_len();
    let mut gx = Tensor::zeros(y.shape);
    for bn in 0..y.batch() {
        let base = bn * c * vol;
        for v in 0..vol {
            let dot: f64 = (0..c).map(|k| g.data[base + k * vol + v] * y.data[base + k * vol + v]).sum();
            for k in 0..c {
                let i = base + k * vol + v;
                gx.data[i] = y.data[i] * (g.data[i] - dot);
            }
        }
    }
    gx
}

/// Per-class sums `(sum p t, sum p, sum t)` over batch and voxels.
fn dice_terms(p: &Tensor, t: &Tensor) -> Vec<(f64, f64, f64)> {
    let c = p.channels();
    let vol = p.spatial_len();
    let mut terms = vec![(0.0, 0.0, 0.0); c];
    for bn in 0..p.batch() {
        for (k, term) in terms.iter_mut().enumerate() {
            let o = (bn * c + k) * vol;
            for (pv, tv) in p.data[o..o + vol].iter().zip(&t.data[o..o + vol]) {
                term.0 += pv * tv;
                term.1 += pv;
                term.2 += tv;
            }
        }
    }
    terms
}

/// Per-class soft Dice `(2 sum pt + s) / (sum p + sum t + s)`.
pub fn dice_per_class(p: &Tensor, t: &Tensor, smooth: f64) -> Result<Vec<f64>> {
    expect_same("dice_loss", p, t)?;
    Ok(dice_terms(p, t)
        .into_iter()
        .map(|(i, sp, st)| (2.0 * i + smooth) / (sp + st + smooth))
        .collect())
}

/// `1 - mean_c Dice_c`.
pub fn dice_loss(p: &Tensor, t: &Tensor, smooth: f64) -> Result<f64> {
    let d = dice_per_class(p, t, smooth)?;
    Ok(1.0 - d.iter().sum::<f64>() / d.len() as f64)
}

pub fn dice_loss_backward(p: &Tensor, t: &Tensor, smooth: f64, g: f64) -> Tensor {
    let c = p.channels();
    let vol = p.spatial_len();
    let terms = dice_terms(p, t);
    let mut gp = Tensor::zeros(p.shape);
    for bn in 0..p.batch() {
        for (k, &(i, sp, st)) in terms.iter().enumerate() {
            let den = sp + st + smooth;
            let num = 2.0 * i + smooth;
            let o = (bn * c + k) * vol;
            for v in o..o + vol {
                let dd = (2.0 * t.data[v] * den - num) / (den * den);
                gp.data[v] = -g * dd / c as f64;
            }
        }
    }
    gp
}

/// One-hot `[N, classes, H, D, W]` from integer labels `[N, H, D, W]`.
pub fn one_hot(labels: &[u8], n: usize, spatial: [usize; 3], classes: usize) -> Result<Tensor> {
    let vol = spatial[0] * spatial[1] * spatial[2];
    if labels.len() != n * vol {
        return Err(Error::Shape {
            op: "one_hot",
            axis: "voxels",
            expected: n * vol,
            found: labels.len(),
        });
    }
    let mut t = Tensor::zeros([n, classes, spatial[0], spatial[1], spatial[2]]);
    for bn in 0..n {
        for v in 0..vol {
            let l = labels[bn * vol + v] as usize;
            if l >= classes {
                return Err(Error::Format(format!("label {l} outside {classes} classes")));
            }
            t.data[(bn * classes + l) * vol + v] = 1.0;
        }
    }
    Ok(t)
}

/// Per-voxel argmax over channels (first maximum on ties).
pub fn argmax_channels(p: &Tensor) -> Vec<u8> {
    let c = p.channels();
    let vol = p.spatial_len();
    let mut out = Vec::with_capacity(p.batch() * vol);
    for bn in 0..p.batch() {
        for v in 0..vol {
            let mut best = 0;
            for k in 1..c {
                if p.data[(bn * c + k) * vol + v] > p.data[(bn * c + best) * vol + v] {
                    best = k;
                }
            }
            out.push(best as u8);
        }
    }
    out
}
