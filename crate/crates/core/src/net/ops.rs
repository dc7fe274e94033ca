//! Layer primitives with exact backward passes.

use crate::error::{Error, Result};
use crate::net::tensor::Tensor4;
use crate::scalar::Scalar;

/// Saved forward state needed by [`conv2d_backward`].
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    kernel: usize,
    stride: usize,
    /// Unfolded input, one `(cin·k·k) × (oh·ow)` block per batch item.
    cols: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor4<T>,
    pub weight: Tensor4<T>,
    pub bias: Tensor4<T>,
}

fn conv_geometry(input: [usize; 4], weight: [usize; 4], bias: [usize; 4], stride: usize) -> Result<(usize, usize)> {
    let [_, cin, h, w] = input;
    let [cout, wcin, kh, kw] = weight;
    if cin != wcin {
        return Err(Error::Shape(format!("conv expects {wcin} input channels, got {cin}")));
    }
    if kh != kw || !(kh == 1 || kh == 3) {
        return Err(Error::Shape(format!("unsupported kernel {kh}x{kw}")));
    }
    if !(stride == 1 || stride == 2) {
        return Err(Error::Shape(format!("unsupported stride {stride}")));
    }
    if bias != [cout, 1, 1, 1] {
        return Err(Error::Shape(format!("bias shape {bias:?} for {cout} output channels")));
    }
    let pad = kh / 2;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    Ok((oh, ow))
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(x: &[T], cin: usize, h: usize, w: usize, k: usize, stride: usize, oh: usize, ow: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let ohw = oh * ow;
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * ohw..][..ohw];
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(cols: &[T], cin: usize, h: usize, w: usize, k: usize, stride: usize, oh: usize, ow: usize, dx: &mut [T]) {
    let pad = (k / 2) as isize;
    let ohw = oh * ow;
    for c in 0..cin {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * ohw..][..ohw];
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &g) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * stride) as isize + kx as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding (`k / 2`), 1×1 or 3×3 kernels,
/// stride 1 or 2. `weight` is `(cout, cin, k, k)`, `bias` is `(cout, 1, 1, 1)`.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, weight: &Tensor4<T>, bias: &Tensor4<T>, stride: usize) -> Result<(Tensor4<T>, ConvCache<T>)> {
    let (oh, ow) = conv_geometry(input.shape(), weight.shape(), bias.shape(), stride)?;
    let [n, cin, h, w] = input.shape();
    let [cout, _, k, _] = weight.shape();
    let ckk = cin * k * k;
    let ohw = oh * ow;
    let mut cols = vec![T::zero(); n * ckk * ohw];
    let mut out = Tensor4::zeros([n, cout, oh, ow]);
    for b in 0..n {
        let col = &mut cols[b * ckk * ohw..(b + 1) * ckk * ohw];
        if k == 1 && stride == 1 {
            col.copy_from_slice(input.item(b));
        } else {
            im2col(input.item(b), cin, h, w, k, stride, oh, ow, col);
        }
        let o = out.item_mut(b);
        for (co, chunk) in o.chunks_mut(ohw).enumerate() {
            chunk.iter_mut().for_each(|v| *v = bias.data()[co]);
        }
        T::gemm(cout, ckk, ohw, weight.data(), false, col, false, T::one(), o);
    }
    Ok((
        out,
        ConvCache {
            input_shape: input.shape(),
            out_hw: (oh, ow),
            kernel: k,
            stride,
            cols,
        },
    ))
}

pub fn conv2d_backward<T: Scalar>(cache: &ConvCache<T>, weight: &Tensor4<T>, grad_out: &Tensor4<T>) -> ConvGrads<T> {
    let [n, cin, h, w] = cache.input_shape;
    let [cout, ..] = weight.shape();
    let k = cache.kernel;
    let (oh, ow) = cache.out_hw;
    let (ckk, ohw) = (cin * k * k, oh * ow);
    let mut dw = Tensor4::zeros(weight.shape());
    let mut db = Tensor4::zeros([cout, 1, 1, 1]);
    let mut dx = Tensor4::zeros(cache.input_shape);
    let mut dcol = vec![T::zero(); ckk * ohw];
    for b in 0..n {
        let g = grad_out.item(b);
        let col = &cache.cols[b * ckk * ohw..(b + 1) * ckk * ohw];
        for (co, chunk) in g.chunks(ohw).enumerate() {
            db.data_mut()[co] += chunk.iter().copied().sum::<T>();
        }
        // dW += dOut · colsᵀ
        T::gemm(cout, ohw, ckk, g, false, col, true, T::one(), dw.data_mut());
        // dCols = Wᵀ · dOut
        T::gemm(ckk, cout, ohw, weight.data(), true, g, false, T::zero(), &mut dcol);
        if k == 1 && cache.stride == 1 {
            dx.item_mut(b).copy_from_slice(&dcol);
        } else {
            col2im(&dcol, cin, h, w, k, cache.stride, oh, ow, dx.item_mut(b));
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Source taps for one output coordinate of ×2 bilinear upsampling
/// (half-pixel centers, edge-clamped).
fn taps<T: Scalar>(len: usize) -> Vec<(usize, usize, T)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(len - 1);
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, T::c(src - i0 as f64))
        })
        .collect()
}

/// ×2 bilinear upsampling with half-pixel alignment.
pub fn upsample_bilinear_x2<T: Scalar>(input: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = input.shape();
    let (ty, tx) = (taps::<T>(h), taps::<T>(w));
    let mut out = Tensor4::zeros([n, c, 2 * h, 2 * w]);
    let one = T::one();
    for (src, dst) in input.data().chunks(h * w).zip(out.data_mut().chunks_mut(4 * h * w)) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (one - lx) + src[y0 * w + x1] * lx;
                let bot = src[y1 * w + x0] * (one - lx) + src[y1 * w + x1] * lx;
                dst[oy * 2 * w + ox] = top * (one - ly) + bot * ly;
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear_x2`].
pub fn upsample_bilinear_x2_backward<T: Scalar>(grad_out: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, oh, ow] = grad_out.shape();
    let (h, w) = (oh / 2, ow / 2);
    let (ty, tx) = (taps::<T>(h), taps::<T>(w));
    let mut dx = Tensor4::zeros([n, c, h, w]);
    let one = T::one();
    for (g, d) in grad_out.data().chunks(oh * ow).zip(dx.data_mut().chunks_mut(h * w)) {
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                d[y0 * w + x0] += v * (one - ly) * (one - lx);
                d[y0 * w + x1] += v * (one - ly) * lx;
                d[y1 * w + x0] += v * ly * (one - lx);
                d[y1 * w + x1] += v * ly * lx;
            }
        }
    }
    dx
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        let n = shape.iter().product();
        Tensor4::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Direct six-loop convolution.
    fn conv_reference(x: &Tensor4<f64>, w: &Tensor4<f64>, b: &Tensor4<f64>, stride: usize) -> Tensor4<f64> {
        let [n, cin, h, wd] = x.shape();
        let [cout, _, k, _] = w.shape();
        let pad = (k / 2) as isize;
        let oh = (h + 2 * (k / 2) - k) / stride + 1;
        let ow = (wd + 2 * (k / 2) - k) / stride + 1;
        let mut out = Tensor4::zeros([n, cout, oh, ow]);
        for bi in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride) as isize + ky as isize - pad;
                                    let ix = (ox * stride) as isize + kx as isize - pad;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                            * x.data()[((bi * cin + ci) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_1x1() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([2, 3, 4, 5], &mut rng);
        let mut w = Tensor4::zeros([3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let (y, _) = conv2d(&x, &w, &Tensor4::zeros([3, 1, 1, 1]), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random([1, 2, 4, 4], &mut rng);
        let b = Tensor4::new([3, 1, 1, 1], vec![0.5, -1.0, 2.0]).unwrap();
        let (y, _) = conv2d(&x, &Tensor4::zeros([3, 2, 3, 3]), &b, 2).unwrap();
        assert_eq!(y.shape(), [1, 3, 2, 2]);
        for (c, chunk) in y.data().chunks(4).enumerate() {
            assert!(chunk.iter().all(|&v| v == b.data()[c]));
        }
    }

    #[test]
    fn matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, stride) in [(3, 1), (3, 2), (1, 1), (1, 2)] {
            let x = random([2, 3, 6, 6], &mut rng);
            let w = random([4, 3, k, k], &mut rng);
            let b = random([4, 1, 1, 1], &mut rng);
            let (y, _) = conv2d(&x, &w, &b, stride).unwrap();
            let want = conv_reference(&x, &w, &b, stride);
            assert_eq!(y.shape(), want.shape());
            for (a, b) in y.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = Tensor4::<f64>::zeros([1, 2, 4, 4]);
        let b = Tensor4::zeros([1, 1, 1, 1]);
        assert!(conv2d(&x, &Tensor4::zeros([1, 3, 3, 3]), &b, 1).is_err());
        assert!(conv2d(&x, &Tensor4::zeros([1, 2, 5, 5]), &b, 1).is_err());
        assert!(conv2d(&x, &Tensor4::zeros([1, 2, 3, 3]), &b, 3).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = 1e-6;
        for stride in [1, 2] {
            let x = random([1, 2, 5, 5], &mut rng);
            let w = random([3, 2, 3, 3], &mut rng);
            let b = random([3, 1, 1, 1], &mut rng);
            let (y, cache) = conv2d(&x, &w, &b, stride).unwrap();
            // Scalar objective L = <y, r> for a fixed random r.
            let r = random(y.shape(), &mut rng);
            let grads = conv2d_backward(&cache, &w, &r);
            let objective = |x: &Tensor4<f64>, w: &Tensor4<f64>, b: &Tensor4<f64>| dot(&conv2d(x, w, b, stride).unwrap().0, &r);

            for i in 0..x.len() {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp.data_mut()[i] += h;
                xm.data_mut()[i] -= h;
                let fd = (objective(&xp, &w, &b) - objective(&xm, &w, &b)) / (2.0 * h);
                assert!(rel(fd, grads.input.data()[i]) < 1e-5, "dx[{i}]");
            }
            for i in 0..w.len() {
                let (mut wp, mut wm) = (w.clone(), w.clone());
                wp.data_mut()[i] += h;
                wm.data_mut()[i] -= h;
                let fd = (objective(&x, &wp, &b) - objective(&x, &wm, &b)) / (2.0 * h);
                assert!(rel(fd, grads.weight.data()[i]) < 1e-5, "dw[{i}]");
            }
            for i in 0..b.len() {
                let (mut bp, mut bm) = (b.clone(), b.clone());
                bp.data_mut()[i] += h;
                bm.data_mut()[i] -= h;
                let fd = (objective(&x, &w, &bp) - objective(&x, &w, &bm)) / (2.0 * h);
                assert!(rel(fd, grads.bias.data()[i]) < 1e-5, "db[{i}]");
            }
        }
    }

    #[test]
    fn upsample_constant_and_single_pixel() {
        let x = Tensor4::new([1, 2, 3, 2], vec![0.7; 12]).unwrap();
        assert!(upsample_bilinear_x2(&x).data().iter().all(|&v| (v - 0.7f64).abs() < 1e-15));
        let one = Tensor4::new([1, 1, 1, 1], vec![0.3]).unwrap();
        let up = upsample_bilinear_x2(&one);
        assert_eq!(up.shape(), [1, 1, 2, 2]);
        assert!(up.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn upsample_interpolates_with_quarter_weights() {
        let x = Tensor4::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let up = upsample_bilinear_x2(&x);
        assert_eq!(&up.data()[..4], &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn upsample_backward_is_adjoint_and_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([2, 2, 3, 4], &mut rng);
        let y = upsample_bilinear_x2(&x);
        let r = random(y.shape(), &mut rng);
        let dx = upsample_bilinear_x2_backward(&r);
        // <Ux, r> = <x, Uᵀr>
        assert!((dot(&y, &r) - dot(&x, &dx)).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[i] += h;
            xm.data_mut()[i] -= h;
            let fd = (dot(&upsample_bilinear_x2(&xp), &r) - dot(&upsample_bilinear_x2(&xm), &r)) / (2.0 * h);
            assert!(rel(fd, dx.data()[i]) < 1e-5);
        }
    }
}
