use crate::error::{shape_err, Result};
use crate::{Real, Tensor};

/// Stand-in for an infinite PSNR wherever a finite number is aggregated.
pub const PSNR_INFINITE_SENTINEL_DB: f64 = 99.0;

fn check<T: Real>(x: &Tensor<T>, y: &Tensor<T>, what: &str) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(shape_err!("{what}: shapes differ, {:?} vs {:?}", x.shape(), y.shape()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for peak 1.0; `+inf` for identical
/// inputs.
pub fn psnr<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    check(x, y, "psnr")?;
    let mse = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum::<f64>()
        / x.numel() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * libm::log10(mse) })
}

/// [`psnr`] with the infinite case replaced by the sentinel.
pub fn psnr_for_aggregation(db: f64) -> f64 {
    if db.is_finite() {
        db
    } else {
        PSNR_INFINITE_SENTINEL_DB
    }
}

/// Mean absolute error.
pub fn mae<T: Real>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    check(x, y, "mae")?;
    Ok(x.data().iter().zip(y.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).abs()).sum::<f64>()
        / x.numel() as f64)
}
