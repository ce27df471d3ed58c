//! Signed power-law normalization for context vectors and rootSIFT for local
//! descriptors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::DESC_DIM;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrnConfig<T> {
    /// Exponent applied to component magnitudes, in `[0, 1]`.
    pub alpha: T,
}

impl<T: Scalar> SrnConfig<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidConfig(format!("alpha must be in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

impl<T: Scalar> Default for SrnConfig<T> {
    fn default() -> Self {
        Self { alpha: T::lit(0.5) }
    }
}

/// Maps every component to `sign(x) * |x|^alpha`, then l2-normalizes.
///
/// Zero components stay zero for every alpha (including `alpha = 0`).
pub fn srn<T: Scalar>(v: &[T], cfg: &SrnConfig<T>) -> Result<Vec<T>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateVector);
    }
    let mut out: Vec<T> =
        v.iter().map(|&x| if x == T::zero() { T::zero() } else { x.signum() * x.abs().powf(cfg.alpha) }).collect();
    l2_normalize(&mut out)?;
    Ok(out)
}

/// Signed-root normalization of `f32` data computed in `f64`.
pub fn srn_f32(v: &[f32], cfg: &SrnConfig<f64>) -> Result<Vec<f32>> {
    let wide: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    Ok(srn(&wide, cfg)?.into_iter().map(|x| x as f32).collect())
}

/// rootSIFT: l1-normalize, then take component-wise square roots.
pub fn root_sift<T: Scalar>(d: &[u8; DESC_DIM]) -> Result<Vec<T>> {
    let l1: u32 = d.iter().map(|&b| b as u32).sum();
    if l1 == 0 {
        return Err(Error::DegenerateVector);
    }
    let l1 = T::lit(l1 as f64);
    Ok(d.iter().map(|&b| (T::lit(b as f64) / l1).sqrt()).collect())
}

/// rootSIFT computed in `f64` and stored as `f32`.
pub fn root_sift_f32(d: &[u8; DESC_DIM]) -> Result<[f32; DESC_DIM]> {
    let wide = root_sift::<f64>(d)?;
    let mut out = [0.0f32; DESC_DIM];
    for (o, w) in out.iter_mut().zip(wide) {
        *o = w as f32;
    }
    Ok(out)
}

pub fn l2_normalize<T: Scalar>(v: &mut [T]) -> Result<()> {
    let norm = v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::DegenerateVector);
    }
    v.iter_mut().for_each(|x| *x = *x / norm);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn srn_hand_example() {
        let out = srn(&[4.0, -9.0, 0.0], &SrnConfig::default()).unwrap();
        let s = 13f64.sqrt();
        assert_abs_diff_eq!(out[0], 2.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], -3.0 / s, epsilon = 1e-12);
        assert_eq!(out[2], 0.0);
    }

    #[test]
    fn srn_alpha_one_is_plain_l2() {
        let v = [3.0, -4.0, 12.0];
        let out = srn(&v, &SrnConfig { alpha: 1.0 }).unwrap();
        for (o, x) in out.iter().zip(v) {
            assert_abs_diff_eq!(*o, x / 13.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn srn_rejects_zero_and_nan() {
        assert!(matches!(srn(&[0.0f64; 3], &SrnConfig::default()), Err(Error::DegenerateVector)));
        assert!(srn(&[1.0, f64::NAN], &SrnConfig::default()).is_err());
        assert!(SrnConfig::new(1.5).is_err());
    }

    #[test]
    fn srn_in_f32() {
        let out = srn(&[4.0f32, -9.0, 0.0], &SrnConfig::default()).unwrap();
        assert_abs_diff_eq!(out[1], -3.0 / 13f32.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn root_sift_examples() {
        let ones = [1u8; DESC_DIM];
        let out = root_sift::<f64>(&ones).unwrap();
        assert!(out.iter().all(|&x| (x - 1.0 / 128f64.sqrt()).abs() < 1e-12));

        let mut single = [0u8; DESC_DIM];
        single[0] = 2;
        let out = root_sift::<f64>(&single).unwrap();
        assert_eq!(out[0], 1.0);
        assert!(out[1..].iter().all(|&x| x == 0.0));

        let mut two = [0u8; DESC_DIM];
        two[0] = 3;
        two[1] = 1;
        let out = root_sift::<f64>(&two).unwrap();
        assert_abs_diff_eq!(out[0], 0.75f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 0.25f64.sqrt(), epsilon = 1e-12);

        assert!(root_sift::<f64>(&[0u8; DESC_DIM]).is_err());
    }

    proptest! {
        #[test]
        fn srn_unit_norm_and_sign(v in prop::collection::vec(-1e3f64..1e3, 1..64), alpha in 0.0f64..=1.0) {
            prop_assume!(v.iter().any(|&x| x != 0.0));
            let out = srn(&v, &SrnConfig { alpha }).unwrap();
            prop_assert!((norm(&out) - 1.0).abs() < 1e-6);
            for (o, x) in out.iter().zip(&v) {
                prop_assert_eq!(o.signum() * (*o != 0.0) as i32 as f64, x.signum() * (*x != 0.0) as i32 as f64);
            }
        }

        #[test]
        fn srn_odd_and_scale_equivariant(v in prop::collection::vec(-1e3f64..1e3, 1..64), c in 1e-3f64..1e3) {
            prop_assume!(v.iter().any(|&x| x != 0.0));
            let cfg = SrnConfig::default();
            let base = srn(&v, &cfg).unwrap();
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let scaled: Vec<f64> = v.iter().map(|x| c * x).collect();
            for ((b, n), s) in base.iter().zip(srn(&neg, &cfg).unwrap()).zip(srn(&scaled, &cfg).unwrap()) {
                prop_assert_eq!(*b, -n);
                prop_assert!((b - s).abs() < 1e-9);
            }
        }

        #[test]
        fn root_sift_unit_norm(d in prop::collection::vec(any::<u8>(), DESC_DIM)) {
            let mut arr = [0u8; DESC_DIM];
            arr.copy_from_slice(&d);
            prop_assume!(arr.iter().any(|&b| b != 0));
            let out = root_sift::<f64>(&arr).unwrap();
            prop_assert!((norm(&out) - 1.0).abs() < 1e-6);
        }
    }
}
