//! Lossless space-to-depth latent codec: `[N,3,H,W] ↔ [N,3f²,H/f,W/f]`,
//! channel `c·f² + dy·f + dx` holding pixel `(f·i + dy, f·j + dx)` of colour `c`.

use crate::autodiff::space_to_depth_perm;
use crate::error::{dim_err, Result};
use crate::{Scalar, Tensor};

fn as_nchw(shape: &[usize]) -> Result<(Vec<usize>, bool)> {
    match shape.len() {
        3 => Ok((vec![1, shape[0], shape[1], shape[2]], true)),
        4 => Ok((shape.to_vec(), false)),
        _ => Err(dim_err!("codec expects [C,H,W] or [N,C,H,W], got {shape:?}")),
    }
}

pub fn latent_encode<T: Scalar>(x: &Tensor<T>, f: usize) -> Result<Tensor<T>> {
    let (shape, squeeze) = as_nchw(x.shape())?;
    let (perm, out) = space_to_depth_perm(&shape, f)?;
    let data = perm.iter().map(|&i| x.data()[i]).collect();
    let out = if squeeze { out[1..].to_vec() } else { out.to_vec() };
    Tensor::new(out, data)
}

pub fn latent_decode<T: Scalar>(z: &Tensor<T>, f: usize) -> Result<Tensor<T>> {
    let (shape, squeeze) = as_nchw(z.shape())?;
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if f == 0 || c % (f * f) != 0 {
        return Err(dim_err!("{c} latent channels do not decode with factor {f}"));
    }
    let image_shape = [n, c / (f * f), h * f, w * f];
    let (perm, _) = space_to_depth_perm(&image_shape, f)?;
    let mut data = vec![T::zero(); z.numel()];
    for (src, &dst) in perm.iter().enumerate() {
        data[dst] = z.data()[src];
    }
    let out = if squeeze { image_shape[1..].to_vec() } else { image_shape.to_vec() };
    Tensor::new(out, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_lands_in_one_channel_vector() {
        let x = Tensor::<f64>::from_f64(vec![1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let z = latent_encode(&x, 2).unwrap();
        assert_eq!(z.shape(), [4, 1, 1]);
        assert_eq!(z.data(), [1.0, 2.0, 3.0, 4.0]);
        assert_eq!(latent_decode(&z, 2).unwrap(), x);
    }

    #[test]
    fn indivisible_rejected() {
        let x = Tensor::<f32>::zeros(vec![3, 6, 8]);
        assert!(latent_encode(&x, 4).is_err());
    }
}
