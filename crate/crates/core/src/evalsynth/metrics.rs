use crate::error::{shape_err, Error, Result};
use crate::evalsynth::dataset::denormalize_degrees;
use crate::image::Image8;

/// Summaries replace an infinite PSNR (identical images) with this value.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio in dB; `+inf` when the images are identical.
pub fn psnr(orig: &Image8, recon: &Image8, max_value: f64) -> Result<f64> {
    if (orig.channels(), orig.height(), orig.width()) != (recon.channels(), recon.height(), recon.width()) {
        return shape_err("psnr: image shapes differ");
    }
    if !(max_value > 0.0) {
        return Err(Error::InvalidValue(format!("psnr max value {max_value} must be positive")));
    }
    let se: f64 = orig.data().iter().zip(recon.data()).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
    Ok(psnr_from_mse(se / orig.data().len() as f64, max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

pub fn capped(db: f64) -> f64 {
    db.min(PSNR_CAP_DB)
}

/// Mean squared joint error in degrees² over normalized joint values.
pub fn joint_mse(pred: &[f32], truth: &[f32]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return shape_err(format!("joint_mse over {} and {} values", pred.len(), truth.len()));
    }
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| (denormalize_degrees(p) - denormalize_degrees(t)).powi(2))
        .sum();
    Ok(s / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat(v: u8) -> Image8 {
        Image8::new(3, 4, 4, vec![v; 48]).unwrap()
    }

    #[test]
    fn analytic_values() {
        assert_eq!(psnr(&flat(9), &flat(9), 255.0).unwrap(), f64::INFINITY);
        assert_eq!(capped(f64::INFINITY), 99.0);
        assert!(psnr_from_mse(255.0 * 255.0, 255.0).abs() < 1e-12);
        assert!((psnr_from_mse(650.25, 255.0) - 20.0).abs() < 1e-12);
        assert!(psnr(&flat(0), &Image8::new(3, 4, 3, vec![0; 36]).unwrap(), 255.0).is_err());
        assert!(psnr(&flat(0), &flat(0), 0.0).is_err());
    }

    #[test]
    fn joint_error_in_degrees() {
        assert_eq!(joint_mse(&[0.1, 0.2], &[0.1, 0.2]).unwrap(), 0.0);
        let one = 1.0 / 180.0;
        let t = [0.1f32, -0.3, 0.5];
        let p: Vec<f32> = t.iter().map(|v| v + one).collect();
        assert!((joint_mse(&p, &t).unwrap() - 1.0).abs() < 1e-4);
        assert!(joint_mse(&[0.0], &[]).is_err());
    }

    proptest! {
        #[test]
        fn psnr_symmetric_and_monotone(a in proptest::collection::vec(any::<u8>(), 48), b in proptest::collection::vec(any::<u8>(), 48)) {
            let (ia, ib) = (Image8::new(3, 4, 4, a).unwrap(), Image8::new(3, 4, 4, b).unwrap());
            prop_assert_eq!(psnr(&ia, &ib, 255.0).unwrap(), psnr(&ib, &ia, 255.0).unwrap());
            prop_assert_eq!(capped(psnr(&ia, &ia, 255.0).unwrap()), PSNR_CAP_DB);
        }

        #[test]
        fn psnr_decreases_with_mse(m in 0.01f64..1e5, k in 1.001f64..10.0) {
            prop_assert!(psnr_from_mse(m * k, 255.0) < psnr_from_mse(m, 255.0));
        }

        #[test]
        fn degree_space_equals_scaled_normalized(v in proptest::collection::vec((-1.0f32..1.0, -1.0f32..1.0), 1..40)) {
            let (p, t): (Vec<f32>, Vec<f32>) = v.into_iter().unzip();
            let naive: f64 = p.iter().zip(&t).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum::<f64>() / p.len() as f64;
            let deg = joint_mse(&p, &t).unwrap();
            prop_assert!((deg - naive * 180.0 * 180.0).abs() <= 1e-9 * deg.max(1.0));
        }
    }
}
