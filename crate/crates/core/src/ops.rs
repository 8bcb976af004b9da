//! Forward and backward kernels for the layer types the network uses.
//!
//! Every function here is pure: it reads its inputs and returns fresh tensors.
//! [`crate::autograd`] records which kernel produced each value and calls the
//! matching `*_backward` during reverse-mode differentiation.
//!
//! Convolutions use zero "same" padding and stride 1, so spatial dimensions
//! never change. All reductions accumulate in `f64`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Clamp applied to predictions before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

fn check_kernel(weight: Shape, bias: Shape) -> Result<()> {
    if weight.height.is_multiple_of(2) || weight.width.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!(
            "convolution kernel must have odd size, got {}x{}",
            weight.height, weight.width
        )));
    }
    if bias.len() != weight.batch {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "bias length",
            expected: weight.batch,
            actual: bias.len(),
        });
    }
    Ok(())
}

/// Copies of one input plane shifted horizontally by every kernel column
/// offset, zero-filled where the shift leaves the image. Row-wrapped reads
/// become impossible, so a whole band of rows can be processed as one slice.
fn column_shifts<S: Scalar>(plane: &[S], height: usize, width: usize, kw: usize, sign: isize) -> Vec<Vec<f64>> {
    let pw = (kw / 2) as isize;
    (0..kw)
        .map(|kx| {
            let dx = sign * (kx as isize - pw);
            let mut out = vec![0.0f64; height * width];
            for y in 0..height {
                let row = &plane[y * width..(y + 1) * width];
                let dst = &mut out[y * width..(y + 1) * width];
                for (x, d) in dst.iter_mut().enumerate() {
                    let sx = x as isize + dx;
                    if sx >= 0 && (sx as usize) < width {
                        *d = row[sx as usize].widen();
                    }
                }
            }
            out
        })
        .collect()
}

/// Output rows `y` for which `y + dy` is a valid row.
#[inline]
fn valid_rows(height: usize, dy: isize) -> (usize, usize) {
    let lo = (-dy).max(0) as usize;
    let hi = (height as isize - dy.max(0)).max(0) as usize;
    (lo, hi.max(lo))
}

/// Cross-correlation with zero same-padding and stride 1.
///
/// `weight` is laid out as (out_channels, in_channels, kh, kw) and `bias` holds
/// `out_channels` values.
pub fn conv2d<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let ws = weight.shape();
    check_kernel(ws, bias.shape())?;
    let is = input.shape();
    if is.channels != ws.channels {
        return Err(Error::DimMismatch {
            op: "conv2d",
            dim: "input channels",
            expected: ws.channels,
            actual: is.channels,
        });
    }
    let (h, w) = (is.height, is.width);
    let plane = h * w;
    let (kh, kw) = (ws.height, ws.width);
    let ph = (kh / 2) as isize;
    let out_ch = ws.batch;
    let mut out = Tensor::zeros(is.with_channels(out_ch));
    let mut acc = vec![0.0f64; out_ch * plane];

    for b in 0..is.batch {
        for (o, chunk) in acc.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[o].widen());
        }
        for i in 0..is.channels {
            let shifts = column_shifts(input.plane(b, i), h, w, kw, 1);
            for o in 0..out_ch {
                let dst = &mut acc[o * plane..(o + 1) * plane];
                for ky in 0..kh {
                    let dy = ky as isize - ph;
                    let (y0, y1) = valid_rows(h, dy);
                    if y0 >= y1 {
                        continue;
                    }
                    let src_start = ((y0 as isize + dy) as usize) * w;
                    let n = (y1 - y0) * w;
                    for (kx, shifted) in shifts.iter().enumerate() {
                        let wv = weight.at(o, i, ky, kx).widen();
                        let src = &shifted[src_start..src_start + n];
                        for (d, &s) in dst[y0 * w..y0 * w + n].iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
        for o in 0..out_ch {
            for (d, &a) in out.plane_mut(b, o).iter_mut().zip(&acc[o * plane..(o + 1) * plane]) {
                *d = S::narrow(a);
            }
        }
    }
    Ok(out)
}

pub struct ConvGrads<S> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    grad_out: &Tensor<S>,
) -> ConvGrads<S> {
    let is = input.shape();
    let ws = weight.shape();
    let (h, w) = (is.height, is.width);
    let plane = h * w;
    let (kh, kw) = (ws.height, ws.width);
    let ph = (kh / 2) as isize;
    let (in_ch, out_ch) = (ws.channels, ws.batch);

    let mut grad_w = vec![0.0f64; ws.len()];
    let mut grad_b = vec![0.0f64; out_ch];
    let mut grad_in = Tensor::zeros(is);
    let mut acc = vec![0.0f64; in_ch * plane];

    for b in 0..is.batch {
        // input gradient: correlate grad_out with the flipped kernel
        acc.fill(0.0);
        for o in 0..out_ch {
            let g = grad_out.plane(b, o);
            grad_b[o] += g.iter().map(|v| v.widen()).sum::<f64>();
            let shifts = column_shifts(g, h, w, kw, -1);
            for i in 0..in_ch {
                let dst = &mut acc[i * plane..(i + 1) * plane];
                for ky in 0..kh {
                    let dy = -(ky as isize - ph);
                    let (y0, y1) = valid_rows(h, dy);
                    if y0 >= y1 {
                        continue;
                    }
                    let src_start = ((y0 as isize + dy) as usize) * w;
                    let n = (y1 - y0) * w;
                    for (kx, shifted) in shifts.iter().enumerate() {
                        let wv = weight.at(o, i, ky, kx).widen();
                        let src = &shifted[src_start..src_start + n];
                        for (d, &s) in dst[y0 * w..y0 * w + n].iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
        for i in 0..in_ch {
            for (d, &a) in grad_in.plane_mut(b, i).iter_mut().zip(&acc[i * plane..(i + 1) * plane]) {
                *d = S::narrow(a);
            }
        }

        // weight gradient: correlate input with grad_out
        for i in 0..in_ch {
            let shifts = column_shifts(input.plane(b, i), h, w, kw, 1);
            for o in 0..out_ch {
                let g = grad_out.plane(b, o);
                for ky in 0..kh {
                    let dy = ky as isize - ph;
                    let (y0, y1) = valid_rows(h, dy);
                    if y0 >= y1 {
                        continue;
                    }
                    let src_start = ((y0 as isize + dy) as usize) * w;
                    let n = (y1 - y0) * w;
                    let gs = &g[y0 * w..y0 * w + n];
                    for (kx, shifted) in shifts.iter().enumerate() {
                        let src = &shifted[src_start..src_start + n];
                        let dot: f64 = gs.iter().zip(src).map(|(a, &s)| a.widen() * s).sum();
                        grad_w[((o * in_ch + i) * kh + ky) * kw + kx] += dot;
                    }
                }
            }
        }
    }

    ConvGrads {
        input: grad_in,
        weight: Tensor::from_vec(ws, grad_w.into_iter().map(S::narrow).collect()).expect("weight grad shape"),
        bias: Tensor::from_vec(
            Shape::new(1, out_ch, 1, 1),
            grad_b.into_iter().map(S::narrow).collect(),
        )
        .expect("bias grad shape"),
    }
}

/// 2x2 max pooling with stride 2.
///
/// Returns the pooled tensor and, for each output element, the flat in-plane
/// index of the input that won. Ties go to the first element in row-major
/// window order.
pub fn maxpool2<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, Vec<u32>)> {
    let s = input.shape();
    if !s.height.is_multiple_of(2) || !s.width.is_multiple_of(2) {
        return Err(Error::OddSpatial { op: "maxpool2", shape: s });
    }
    let (oh, ow) = (s.height / 2, s.width / 2);
    let os = Shape::new(s.batch, s.channels, oh, ow);
    let mut out = Tensor::zeros(os);
    let mut argmax = Vec::with_capacity(os.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..oh {
                for x in 0..ow {
                    let base = 2 * y * s.width + 2 * x;
                    let mut best = base;
                    for idx in [base + 1, base + s.width, base + s.width + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[y * ow + x] = src[best];
                    argmax.push(best as u32);
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to the input position recorded in `argmax`.
pub fn pool_backward<S: Scalar>(input_shape: Shape, argmax: &[u32], grad_out: &Tensor<S>) -> Tensor<S> {
    let mut grad_in = Tensor::zeros(input_shape);
    let op = grad_out.shape().plane();
    for b in 0..input_shape.batch {
        for c in 0..input_shape.channels {
            let g = grad_out.plane(b, c);
            let base = (b * input_shape.channels + c) * op;
            let dst = grad_in.plane_mut(b, c);
            for (k, &gv) in g.iter().enumerate() {
                dst[argmax[base + k] as usize] += gv;
            }
        }
    }
    grad_in
}

/// 3x3 max pooling at stride 1; the window is clipped at the borders.
pub fn maxpool3_same<S: Scalar>(input: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let s = input.shape();
    let (h, w) = (s.height, s.width);
    let mut out = Tensor::zeros(s);
    let mut argmax = Vec::with_capacity(s.len());
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..h {
                let ys = y.saturating_sub(1)..(y + 2).min(h);
                for x in 0..w {
                    let xs = x.saturating_sub(1)..(x + 2).min(w);
                    let mut best = ys.start * w + xs.start;
                    for yy in ys.clone() {
                        for xx in xs.clone() {
                            let idx = yy * w + xx;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    dst[y * w + x] = src[best];
                    argmax.push(best as u32);
                }
            }
        }
    }
    (out, argmax)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let s = input.shape();
    let (w2, h2) = (s.width * 2, s.height * 2);
    let mut out = Tensor::zeros(Shape::new(s.batch, s.channels, h2, w2));
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = input.plane(b, c);
            let dst = out.plane_mut(b, c);
            for y in 0..h2 {
                let row = &src[(y / 2) * s.width..(y / 2 + 1) * s.width];
                for (x, d) in dst[y * w2..(y + 1) * w2].iter_mut().enumerate() {
                    *d = row[x / 2];
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<S: Scalar>(grad_out: &Tensor<S>) -> Tensor<S> {
    let s = grad_out.shape();
    let (oh, ow) = (s.height / 2, s.width / 2);
    let mut grad_in = Tensor::zeros(Shape::new(s.batch, s.channels, oh, ow));
    for b in 0..s.batch {
        for c in 0..s.channels {
            let g = grad_out.plane(b, c);
            let dst = grad_in.plane_mut(b, c);
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * s.width + 2 * x;
                    let sum = g[i].widen() + g[i + 1].widen() + g[i + s.width].widen() + g[i + s.width + 1].widen();
                    dst[y * ow + x] = S::narrow(sum);
                }
            }
        }
    }
    grad_in
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::ZERO { v } else { S::ZERO })
}

/// Gradient passes where the input was strictly positive; the subgradient at
/// zero is zero.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > S::ZERO { g } else { S::ZERO })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("relu grad shape")
}

/// Largest representable value below one for the element type.
fn below_one<S: Scalar>() -> f64 {
    if std::mem::size_of::<S>() == 4 {
        1.0 - f64::from(f32::EPSILON) / 2.0
    } else {
        1.0 - f64::EPSILON / 2.0
    }
}

fn smallest_positive<S: Scalar>() -> f64 {
    if std::mem::size_of::<S>() == 4 {
        f64::from(f32::MIN_POSITIVE)
    } else {
        f64::MIN_POSITIVE
    }
}

/// Logistic function. Outputs are kept strictly inside (0, 1) even where the
/// element type would otherwise round to an endpoint.
pub fn sigmoid<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let hi = below_one::<S>();
    let lo = smallest_positive::<S>();
    input.map(|v| {
        let x = v.widen();
        let s = if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        };
        S::narrow(s.clamp(lo, hi))
    })
}

pub fn sigmoid_backward<S: Scalar>(output: &Tensor<S>, grad_out: &Tensor<S>) -> Tensor<S> {
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&s, &g)| {
            let s = s.widen();
            S::narrow(g.widen() * s * (1.0 - s))
        })
        .collect();
    Tensor::from_vec(output.shape(), data).expect("sigmoid grad shape")
}

/// Concatenates along the channel dimension, preserving input order.
pub fn concat_channels<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::InvalidParam("concat of zero tensors".into()))?
        .shape();
    let mut channels = 0;
    for t in inputs {
        let s = t.shape();
        for (dim, a, e) in [
            ("batch", s.batch, first.batch),
            ("height", s.height, first.height),
            ("width", s.width, first.width),
        ] {
            if a != e {
                return Err(Error::DimMismatch {
                    op: "concat_channels",
                    dim,
                    expected: e,
                    actual: a,
                });
            }
        }
        channels += s.channels;
    }
    let mut out = Tensor::zeros(first.with_channels(channels));
    for b in 0..first.batch {
        let mut c_out = 0;
        for t in inputs {
            for c in 0..t.shape().channels {
                out.plane_mut(b, c_out).copy_from_slice(t.plane(b, c));
                c_out += 1;
            }
        }
    }
    Ok(out)
}

/// Splits a gradient over concatenated channels back into per-input pieces.
pub fn concat_backward<S: Scalar>(shapes: &[Shape], grad_out: &Tensor<S>) -> Vec<Tensor<S>> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&s| {
            let mut g = Tensor::zeros(s);
            for b in 0..s.batch {
                for c in 0..s.channels {
                    g.plane_mut(b, c).copy_from_slice(grad_out.plane(b, offset + c));
                }
            }
            offset += s.channels;
            g
        })
        .collect()
}

/// Inverted-dropout multipliers: each element is 0 with probability `rate`
/// and `1 / (1 - rate)` otherwise.
pub fn dropout_mask<S: Scalar, R: Rng + ?Sized>(shape: Shape, rate: f64, rng: &mut R) -> Result<Tensor<S>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::DropoutRate(rate));
    }
    let keep = S::narrow(1.0 / (1.0 - rate));
    let data = (0..shape.len())
        .map(|_| if rng.gen::<f64>() < rate { S::ZERO } else { keep })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Elementwise product of two same-shaped tensors.
pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op: "mul",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_vec(a.shape(), data)
}

fn check_binary<S: Scalar>(target: &Tensor<S>) -> Result<()> {
    match target.data().iter().find(|&&t| t != S::ZERO && t != S::ONE) {
        Some(&bad) => Err(Error::NonBinaryTarget(bad.widen())),
        None => Ok(()),
    }
}

#[inline]
fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON)
}

/// Binary cross-entropy summed over every element.
pub fn bce_loss<S: Scalar>(prediction: &Tensor<S>, target: &Tensor<S>) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            lhs: prediction.shape(),
            rhs: target.shape(),
        });
    }
    check_binary(target)?;
    Ok(prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p.widen());
            if t == S::ONE {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum())
}

/// `(p - t) / (p (1 - p))` per element, evaluated at the clamped prediction.
pub fn bce_backward<S: Scalar>(prediction: &Tensor<S>, target: &Tensor<S>, grad_out: f64) -> Tensor<S> {
    let data = prediction
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let p = clamp_prob(p.widen());
            S::narrow(grad_out * (p - t.widen()) / (p * (1.0 - p)))
        })
        .collect();
    Tensor::from_vec(prediction.shape(), data).expect("bce grad shape")
}
