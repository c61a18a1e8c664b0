//! Forward-pass kernels. Tensors are channel-last (`[H, W, C]`), convolution
//! kernels are `[k, k, C_in, C_out]` and dense weights `[in, out]`.
//! Reductions accumulate in f64.

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn spatial(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::invalid(format!("{what} must be [H, W, C], got {:?}", t.dims()))),
    }
}

fn kernel_dims(k: &Tensor, cin: usize) -> Result<(usize, usize)> {
    match *k.dims() {
        [kh, kw, ci, co] if kh == kw && ci == cin => Ok((kh, co)),
        _ => Err(Error::invalid(format!(
            "kernel {:?} incompatible with {cin} input channels",
            k.dims()
        ))),
    }
}

fn bias_values(bias: Option<&Tensor>, cout: usize) -> Result<Vec<f64>> {
    match bias {
        None => Ok(vec![0.0; cout]),
        Some(b) if b.dims() == [cout] => Ok(b.data().iter().map(|&v| v as f64).collect()),
        Some(b) => Err(Error::invalid(format!("bias {:?}, expected [{cout}]", b.dims()))),
    }
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

pub fn conv_transpose_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    ((input - 1) * stride + kernel).checked_sub(2 * padding).filter(|&n| n > 0)
}

/// 2-D cross-correlation.
pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>, stride: usize, padding: usize) -> Result<Tensor> {
    let (h, w, cin) = spatial(input, "conv2d input")?;
    let (k, cout) = kernel_dims(kernel, cin)?;
    let bias = bias_values(bias, cout)?;
    let (Some(oh), Some(ow)) = (
        conv_output_size(h, k, stride, padding),
        conv_output_size(w, k, stride, padding),
    ) else {
        return Err(Error::invalid(format!(
            "kernel {k} stride {stride} padding {padding} does not fit {h}x{w}"
        )));
    };
    let x = input.data();
    let wt = kernel.data();
    let mut out = vec![0f32; oh * ow * cout];
    let mut acc = vec![0f64; cout];
    for oy in 0..oh {
        for ox in 0..ow {
            acc.copy_from_slice(&bias);
            for ky in 0..k {
                let Some(iy) = (oy * stride + ky).checked_sub(padding).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox * stride + kx).checked_sub(padding).filter(|&v| v < w) else {
                        continue;
                    };
                    let px = &x[(iy * w + ix) * cin..][..cin];
                    let wbase = (ky * k + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let v = v as f64;
                        let row = &wt[wbase + ci * cout..][..cout];
                        for (a, &wv) in acc.iter_mut().zip(row) {
                            *a += v * wv as f64;
                        }
                    }
                }
            }
            let dst = &mut out[(oy * ow + ox) * cout..][..cout];
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d = a as f32;
            }
        }
    }
    Tensor::new(vec![oh, ow, cout], out)
}

/// Transposed convolution; inverts the spatial shape of the matching [`conv2d`].
pub fn conv2d_transpose(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (h, w, cin) = spatial(input, "conv2d_transpose input")?;
    let (k, cout) = kernel_dims(kernel, cin)?;
    let bias = bias_values(bias, cout)?;
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let (Some(oh), Some(ow)) = (
        conv_transpose_output_size(h, k, stride, padding),
        conv_transpose_output_size(w, k, stride, padding),
    ) else {
        return Err(Error::invalid("transposed convolution output would be empty"));
    };
    let x = input.data();
    let wt = kernel.data();
    let mut acc = vec![0f64; oh * ow * cout];
    for chunk in acc.chunks_mut(cout) {
        chunk.copy_from_slice(&bias);
    }
    for iy in 0..h {
        for ix in 0..w {
            let px = &x[(iy * w + ix) * cin..][..cin];
            for ky in 0..k {
                let Some(oy) = (iy * stride + ky).checked_sub(padding).filter(|&v| v < oh) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ox) = (ix * stride + kx).checked_sub(padding).filter(|&v| v < ow) else {
                        continue;
                    };
                    let dst = &mut acc[(oy * ow + ox) * cout..][..cout];
                    let wbase = (ky * k + kx) * cin * cout;
                    for (ci, &v) in px.iter().enumerate() {
                        if v == 0.0 {
                            continue;
                        }
                        let row = &wt[wbase + ci * cout..][..cout];
                        for (d, &wv) in dst.iter_mut().zip(row) {
                            *d += v as f64 * wv as f64;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, cout], acc.into_iter().map(|v| v as f32).collect())
}

/// `x · W + b` over the last axis.
pub fn dense(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [fin, fout] = *weight.dims() else {
        return Err(Error::invalid(format!("dense weight must be 2-D, got {:?}", weight.dims())));
    };
    let last = *x.dims().last().unwrap_or(&0);
    if last != fin || bias.dims() != [fout] {
        return Err(Error::invalid(format!(
            "dense {fin}->{fout} (bias {:?}) cannot take input {:?}",
            bias.dims(),
            x.dims()
        )));
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(x.len() / fin * fout);
    let mut acc = vec![0f64; fout];
    for row in x.data().chunks(fin) {
        for (a, &b) in acc.iter_mut().zip(bias.data()) {
            *a = b as f64;
        }
        for (i, &v) in row.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (a, &wv) in acc.iter_mut().zip(&w[i * fout..(i + 1) * fout]) {
                *a += v as f64 * wv as f64;
            }
        }
        out.extend(acc.iter().map(|&a| a as f32));
    }
    let mut dims = x.dims().to_vec();
    *dims.last_mut().expect("non-empty dims") = fout;
    Tensor::new(dims, out)
}

/// Normalize each last-axis vector to zero mean and unit variance, then scale and shift.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let n = *x.dims().last().unwrap_or(&0);
    if n == 0 || gamma.dims() != [n] || beta.dims() != [n] {
        return Err(Error::invalid(format!(
            "layer_norm over {n} features with gamma {:?} beta {:?}",
            gamma.dims(),
            beta.dims()
        )));
    }
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(n) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for ((&v, &g), &b) in row.iter().zip(gamma.data()).zip(beta.data()) {
            out.push(((v as f64 - mean) * inv * g as f64 + b as f64) as f32);
        }
    }
    Tensor::new(x.dims().to_vec(), out)
}

pub fn relu(x: &Tensor) -> Tensor {
    leaky_relu(x, 0.0)
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| if v >= 0.0 { v } else { v * slope })
        .collect();
    Tensor::new(x.dims().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn t(dims: &[usize], data: Vec<f32>) -> Tensor {
        Tensor::new(dims.to_vec(), data).unwrap()
    }

    fn identity_kernel(c: usize) -> Tensor {
        let mut k = vec![0.0; c * c];
        for i in 0..c {
            k[i * c + i] = 1.0;
        }
        t(&[1, 1, c, c], k)
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = t(&[5, 4, 3], (0..60).map(|_| rng.random_range(-1.0..1.0)).collect());
        assert_eq!(conv2d(&x, &identity_kernel(3), None, 1, 0).unwrap(), x);
        assert_eq!(conv2d_transpose(&x, &identity_kernel(3), None, 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_sum_to_nine() {
        let x = t(&[3, 3, 1], vec![1.0; 9]);
        let k = t(&[3, 3, 1, 1], vec![1.0; 9]);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.dims(), [1, 1, 1]);
        assert_eq!(y.data(), [9.0]);
    }

    #[test]
    fn stride_two_shapes_invert() {
        let x = Tensor::zeros(vec![224, 224, 1]);
        let k = Tensor::zeros(vec![4, 4, 1, 2]);
        let y = conv2d(&x, &k, None, 2, 1).unwrap();
        assert_eq!(y.dims(), [112, 112, 2]);
        let kt = Tensor::zeros(vec![4, 4, 2, 1]);
        let z = conv2d_transpose(&y, &kt, None, 2, 1).unwrap();
        assert_eq!(z.dims(), [224, 224, 1]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = Tensor::zeros(vec![8, 8, 2]);
        assert!(conv2d(&x, &Tensor::zeros(vec![3, 3, 3, 1]), None, 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(vec![9, 9, 2, 1]), None, 1, 0).is_err());
        assert!(dense(&Tensor::zeros(vec![3]), &Tensor::zeros(vec![4, 2]), &Tensor::zeros(vec![2])).is_err());
    }

    #[test]
    fn layer_norm_example() {
        let y = layer_norm(&t(&[3], vec![1.0, 2.0, 3.0]), &t(&[3], vec![1.0; 3]), &t(&[3], vec![0.0; 3]), 1e-5).unwrap();
        let want = [-1.2247, 0.0, 1.2247];
        for (a, b) in y.data().iter().zip(want) {
            assert!((*a as f64 - b).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_moments() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let x = t(&[256], (0..256).map(|_| rng.random_range(-5.0..5.0)).collect());
            let y = layer_norm(&x, &t(&[256], vec![1.0; 256]), &t(&[256], vec![0.0; 256]), 1e-5).unwrap();
            let m = y.data().iter().map(|&v| v as f64).sum::<f64>() / 256.0;
            let v = y.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 256.0;
            assert!(m.abs() <= 1e-6, "mean {m}");
            assert!((v - 1.0).abs() <= 1e-4, "var {v}");
        }
    }

    #[test]
    fn activations() {
        let x = t(&[2], vec![-1.0, 2.0]);
        assert_eq!(leaky_relu(&x, 0.2).data(), [-0.2, 2.0]);
        assert_eq!(relu(&x).data(), [0.0, 2.0]);
    }

    #[test]
    fn dense_identity() {
        let mut w = vec![0.0; 16];
        for i in 0..4 {
            w[i * 4 + i] = 1.0;
        }
        let x = t(&[4], vec![0.5, -1.0, 2.0, 0.0]);
        assert_eq!(dense(&x, &t(&[4, 4], w), &Tensor::zeros(vec![4])).unwrap(), x);
    }
}
