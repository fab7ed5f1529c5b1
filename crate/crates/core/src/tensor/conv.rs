use super::{linalg::gemm, transpose, Tensor};
use crate::error::{Error, Result};

/// Output extent of a convolution along one axis, or an error when it would
/// not be positive.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel {kernel} and stride {stride} must be positive"
        )));
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {kernel} does not fit input {input} with padding {padding}"),
        ));
    }
    Ok((padded - kernel) / stride + 1)
}

struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: &Tensor, k: usize, stride: usize, pad: usize, op: &'static str) -> Result<Self> {
        let (cin, h, w) = x.chw(op)?;
        let oh = conv_output_size(h, k, stride, pad)?;
        let ow = conv_output_size(w, k, stride, pad)?;
        Ok(Geometry { cin, h, w, k, stride, pad, oh, ow })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Input coordinate for an output coordinate and a kernel tap, if in bounds.
    #[inline]
    fn source(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

fn im2col_geom(x: &[f64], g: &Geometry) -> Vec<f64> {
    let (k, plane) = (g.k, g.oh * g.ow);
    let mut cols = vec![0.0; g.cin * k * k * plane];
    for ci in 0..g.cin {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ki, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.source(ox, kj, g.w) {
                            dst[oy * g.ow + ox] = src[iy * g.w + ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_geom(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let (k, plane) = (g.k, g.oh * g.ow);
    let mut x = vec![0.0; g.cin * g.h * g.w];
    for ci in 0..g.cin {
        let dst = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ci * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ki, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.source(ox, kj, g.w) {
                            dst[iy * g.w + ix] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Unfolds every k×k receptive field of a C×H×W input into a column:
/// the result is (C·k·k) × (H'·W').
pub fn im2col(x: &Tensor, k: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let g = Geometry::new(x, k, stride, padding, "im2col")?;
    Tensor::from_vec(&[g.cin * k * k, g.oh * g.ow], im2col_geom(x.data(), &g))
}

/// Adjoint of [`im2col`]: scatters columns back onto a C×H×W image, summing overlaps.
pub fn col2im(cols: &Tensor, input_dims: (usize, usize, usize), k: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let (c, h, w) = input_dims;
    let probe = Tensor::zeros(&[c, h, w])?;
    let g = Geometry::new(&probe, k, stride, padding, "col2im")?;
    if cols.dims() != [c * k * k, g.oh * g.ow] {
        return Err(Error::shape("col2im", format!("columns {:?} for input {:?}", cols.dims(), [c, h, w])));
    }
    Tensor::from_vec(&[c, h, w], col2im_geom(cols.data(), &g))
}

fn check_kernel(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<(usize, usize)> {
    let (cin, _, _) = x.chw("conv2d")?;
    match *w.dims() {
        [cout, wc, kh, kw] if wc == cin && kh == kw => {
            if let Some(b) = bias {
                if b.dims() != [cout] {
                    return Err(Error::shape("conv2d", format!("bias {:?} for {cout} output channels", b.dims())));
                }
            }
            Ok((cout, kh))
        }
        _ => Err(Error::shape(
            "conv2d",
            format!("kernel {:?} incompatible with input {:?}", w.dims(), x.dims()),
        )),
    }
}

/// Cross-correlation of a Cin×H×W input with a Cout×Cin×k×k kernel, zero
/// padding, plus a per-output-channel bias.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let (cout, k) = check_kernel(x, w, bias)?;
    let g = Geometry::new(x, k, stride, padding, "conv2d")?;
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; cout * plane];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(plane).enumerate() {
            chunk.fill(b.data()[co]);
        }
    }
    let kk = g.cin * k * k;
    if g.is_pointwise() {
        gemm(w.data(), x.data(), &mut out, cout, kk, plane);
    } else {
        let cols = im2col_geom(x.data(), &g);
        gemm(w.data(), &cols, &mut out, cout, kk, plane);
    }
    Tensor::from_vec(&[cout, g.oh, g.ow], out)
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (cout, k) = check_kernel(x, w, None)?;
    let g = Geometry::new(x, k, stride, padding, "conv2d_backward")?;
    let plane = g.oh * g.ow;
    if grad_out.dims() != [cout, g.oh, g.ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("gradient {:?}, expected {:?}", grad_out.dims(), [cout, g.oh, g.ow]),
        ));
    }
    let kk = g.cin * k * k;
    let gy = grad_out.data();

    let db: Vec<f64> = gy.chunks(plane).map(|c| c.iter().sum()).collect();

    let cols = if g.is_pointwise() {
        x.data().to_vec()
    } else {
        im2col_geom(x.data(), &g)
    };
    let cols_t = transpose(&Tensor::from_vec(&[kk, plane], cols)?)?;
    let mut dw = vec![0.0; cout * kk];
    gemm(gy, cols_t.data(), &mut dw, cout, plane, kk);

    let w_t = transpose(&w.reshape(&[cout, kk])?)?;
    let mut dcols = vec![0.0; kk * plane];
    gemm(w_t.data(), gy, &mut dcols, kk, cout, plane);
    let dx = if g.is_pointwise() { dcols } else { col2im_geom(&dcols, &g) };

    Ok((
        Tensor::from_vec(x.dims(), dx)?,
        Tensor::from_vec(w.dims(), dw)?,
        Tensor::from_vec(&[cout], db)?,
    ))
}

fn check_depthwise(x: &Tensor, w: &Tensor, bias: Option<&Tensor>) -> Result<usize> {
    let (c, _, _) = x.chw("depthwise_conv2d")?;
    match *w.dims() {
        [wc, kh, kw] if wc == c && kh == kw => {
            if let Some(b) = bias {
                if b.dims() != [c] {
                    return Err(Error::shape("depthwise_conv2d", format!("bias {:?} for {c} channels", b.dims())));
                }
            }
            Ok(kh)
        }
        _ => Err(Error::shape(
            "depthwise_conv2d",
            format!("kernel {:?} incompatible with input {:?}", w.dims(), x.dims()),
        )),
    }
}

/// Per-channel convolution: output channel `c` sees only input channel `c`.
/// The kernel is C×k×k.
pub fn depthwise_conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let k = check_depthwise(x, w, bias)?;
    let g = Geometry::new(x, k, stride, padding, "depthwise_conv2d")?;
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.cin * plane];
    for c in 0..g.cin {
        let src = &x.data()[c * g.h * g.w..(c + 1) * g.h * g.w];
        let ker = &w.data()[c * k * k..(c + 1) * k * k];
        let dst = &mut out[c * plane..(c + 1) * plane];
        if let Some(b) = bias {
            dst.fill(b.data()[c]);
        }
        for ki in 0..k {
            for kj in 0..k {
                let wv = ker[ki * k + kj];
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ki, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.source(ox, kj, g.w) {
                            dst[oy * g.ow + ox] += wv * src[iy * g.w + ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[g.cin, g.oh, g.ow], out)
}

pub fn depthwise_conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let k = check_depthwise(x, w, None)?;
    let g = Geometry::new(x, k, stride, padding, "depthwise_conv2d_backward")?;
    let plane = g.oh * g.ow;
    if grad_out.dims() != [g.cin, g.oh, g.ow] {
        return Err(Error::shape(
            "depthwise_conv2d_backward",
            format!("gradient {:?}, expected {:?}", grad_out.dims(), [g.cin, g.oh, g.ow]),
        ));
    }
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    let mut db = vec![0.0; g.cin];
    for c in 0..g.cin {
        let src = &x.data()[c * g.h * g.w..(c + 1) * g.h * g.w];
        let gy = &grad_out.data()[c * plane..(c + 1) * plane];
        let dsrc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        db[c] = gy.iter().sum();
        for ki in 0..k {
            for kj in 0..k {
                let wv = w.data()[(c * k + ki) * k + kj];
                let mut acc = 0.0;
                for oy in 0..g.oh {
                    let Some(iy) = g.source(oy, ki, g.h) else { continue };
                    for ox in 0..g.ow {
                        if let Some(ix) = g.source(ox, kj, g.w) {
                            let go = gy[oy * g.ow + ox];
                            acc += go * src[iy * g.w + ix];
                            dsrc[iy * g.w + ix] += wv * go;
                        }
                    }
                }
                dw[(c * k + ki) * k + kj] = acc;
            }
        }
    }
    Ok((
        Tensor::from_vec(x.dims(), dx)?,
        Tensor::from_vec(w.dims(), dw)?,
        Tensor::from_vec(&[g.cin], db)?,
    ))
}

/// Nearest-neighbour 2× upsampling: `out[c, i, j] = x[c, i/2, j/2]`.
pub fn nearest_upsample2x(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw("nearest_upsample2x")?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for i in 0..oh {
            for j in 0..ow {
                dst[i * ow + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], out)
}

/// Adjoint of [`nearest_upsample2x`]: sums each 2×2 block.
pub fn upsample2x_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (c, oh, ow) = grad_out.chw("upsample2x_backward")?;
    if oh % 2 != 0 || ow % 2 != 0 {
        return Err(Error::shape("upsample2x_backward", format!("odd extent {:?}", grad_out.dims())));
    }
    let (h, w) = (oh / 2, ow / 2);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = &grad_out.data()[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                dst[(i / 2) * w + j / 2] += src[i * ow + j];
            }
        }
    }
    Tensor::from_vec(&[c, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn pointwise_identity() {
        let mut rng = Rng::new(0);
        let x = rng.normal_tensor(&[1, 5, 4], 1.0);
        let w = Tensor::ones(&[1, 1, 1, 1]).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert_eq!(conv2d(&x, &w, Some(&b), 1, 0).unwrap(), x);
    }

    #[test]
    fn box_filter_counts_neighbours() {
        let x = Tensor::ones(&[1, 4, 4]).unwrap();
        let w = Tensor::ones(&[1, 1, 3, 3]).unwrap();
        let y = conv2d(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.get(&[0, 1, 1]), 9.0);
        assert_eq!(y.get(&[0, 2, 2]), 9.0);
        assert_eq!(y.get(&[0, 0, 0]), 4.0);
        assert_eq!(y.get(&[0, 3, 3]), 4.0);
        assert_eq!(y.get(&[0, 0, 1]), 6.0);
    }

    #[test]
    fn stride_two_halves_extent() {
        let x = Tensor::zeros(&[3, 256, 256]).unwrap();
        let w = Tensor::zeros(&[4, 3, 3, 3]).unwrap();
        assert_eq!(conv2d(&x, &w, None, 2, 1).unwrap().dims(), &[4, 128, 128]);
    }

    #[test]
    fn non_positive_output_errors() {
        let x = Tensor::zeros(&[1, 2, 2]).unwrap();
        let w = Tensor::zeros(&[1, 1, 5, 5]).unwrap();
        assert!(conv2d(&x, &w, None, 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]).unwrap(), None, 1, 1).is_err());
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = Rng::new(4);
        let x = rng.normal_tensor(&[2, 7, 6], 1.0);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (4, 2, 1), (7, 1, 3)] {
            let cols = im2col(&x, k, s, p).unwrap();
            let y = rng.normal_tensor(cols.dims(), 1.0);
            let lhs: f64 = cols.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let back = col2im(&y, (2, 7, 6), k, s, p).unwrap();
            let rhs: f64 = x.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "k={k} s={s} p={p}");
        }
    }

    #[test]
    fn depthwise_identity_and_shape() {
        let mut rng = Rng::new(5);
        let x = rng.normal_tensor(&[2, 5, 5], 1.0);
        let mut w = Tensor::zeros(&[2, 3, 3]).unwrap();
        w.set(&[0, 1, 1], 1.0);
        w.set(&[1, 1, 1], 1.0);
        assert_eq!(depthwise_conv2d(&x, &w, None, 1, 1).unwrap(), x);

        let x = Tensor::zeros(&[8, 16, 16]).unwrap();
        let w = Tensor::zeros(&[8, 3, 3]).unwrap();
        assert_eq!(depthwise_conv2d(&x, &w, None, 1, 1).unwrap().dims(), &[8, 16, 16]);
    }

    #[test]
    fn depthwise_equals_block_diagonal_full_conv() {
        let mut rng = Rng::new(6);
        let x = rng.normal_tensor(&[2, 6, 6], 1.0);
        let w = rng.normal_tensor(&[2, 3, 3], 1.0);
        let b = rng.normal_tensor(&[2], 1.0);
        let mut full = Tensor::zeros(&[2, 2, 3, 3]).unwrap();
        for c in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    full.set(&[c, c, i, j], w.get(&[c, i, j]));
                }
            }
        }
        for &(s, p) in &[(1, 1), (2, 1), (1, 0)] {
            let a = depthwise_conv2d(&x, &w, Some(&b), s, p).unwrap();
            let f = conv2d(&x, &full, Some(&b), s, p).unwrap();
            assert!(a.max_abs_diff(&f).unwrap() < 1e-12);
        }
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = nearest_upsample2x(&x).unwrap();
        assert_eq!(
            y.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let c = Tensor::full(&[2, 3, 3], 0.7).unwrap();
        assert_eq!(nearest_upsample2x(&c).unwrap(), Tensor::full(&[2, 6, 6], 0.7).unwrap());
        // top-left stride-2 sampling undoes the upsample
        let mut rng = Rng::new(7);
        let r = rng.normal_tensor(&[2, 3, 4], 1.0);
        let up = nearest_upsample2x(&r).unwrap();
        let mut sel = Tensor::zeros(&[1, 1, 1, 1]).unwrap();
        sel.set(&[0, 0, 0, 0], 1.0);
        let down: Vec<Tensor> = (0..2)
            .map(|c| conv2d(&up.slice_channels(c, c + 1).unwrap(), &sel, None, 2, 0).unwrap())
            .collect();
        assert_eq!(down[0].concat_channels(&down[1]).unwrap(), r);
    }
}
