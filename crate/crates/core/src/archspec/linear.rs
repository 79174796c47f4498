use serde::{Deserialize, Serialize};

use crate::archspec::ArchError;
use crate::costmodel::MIN_CHANNELS;
use crate::scalar::Real;

/// `c_i = round(a·i + b)` for block indices `i = 1..=d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearParam {
    pub slope_a: f64,
    pub intercept_b: f64,
    pub depth_d: usize,
}

impl LinearParam {
    pub fn new(slope_a: f64, intercept_b: f64, depth_d: usize) -> Result<Self, ArchError> {
        let p = Self {
            slope_a,
            intercept_b,
            depth_d,
        };
        p.channels()?;
        Ok(p)
    }

    pub fn channels(&self) -> Result<Vec<usize>, ArchError> {
        channels_from_linear(self)
    }
}

/// Evaluates the line, rounding half away from zero and clamping each width
/// to at least its predecessor.
pub fn channels_from_linear(p: &LinearParam) -> Result<Vec<usize>, ArchError> {
    if !(p.slope_a.is_finite() && p.slope_a >= 0.0) {
        return Err(ArchError::InvalidParam(format!("slope must be finite and >= 0, got {}", p.slope_a)));
    }
    if !p.intercept_b.is_finite() {
        return Err(ArchError::InvalidParam(format!("intercept must be finite, got {}", p.intercept_b)));
    }
    if p.depth_d == 0 {
        return Err(ArchError::InvalidParam("depth must be positive".into()));
    }
    let mut out: Vec<usize> = Vec::with_capacity(p.depth_d);
    for i in 1..=p.depth_d {
        let c = (p.slope_a * i as f64 + p.intercept_b).round();
        if c < MIN_CHANNELS as f64 {
            return Err(ArchError::InvalidParam(format!(
                "block {i} width {c} is below the minimum {MIN_CHANNELS}"
            )));
        }
        let c = c as usize;
        out.push(out.last().map_or(c, |&prev| prev.max(c)));
    }
    Ok(out)
}

/// Ordinary least-squares line through `(i, c_i)`, `i = 1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Root mean square of the residuals (divided by n).
    pub rms_residual: T,
}

/// [`fit_linear`] in a chosen precision.
pub fn fit_linear_in<T: Real>(channels: &[f64]) -> Result<LinearFit<T>, ArchError> {
    let n = channels.len();
    if n < 2 {
        return Err(ArchError::InvalidParam(format!("need at least 2 values to fit, got {n}")));
    }
    if channels.iter().any(|c| !c.is_finite()) {
        return Err(ArchError::InvalidParam("values must be finite".into()));
    }
    let nf = T::of_usize(n);
    let xs: Vec<T> = (1..=n).map(T::of_usize).collect();
    let ys: Vec<T> = channels.iter().map(|&c| T::of(c)).collect();
    let x_mean = xs.iter().copied().sum::<T>() / nf;
    let y_mean = ys.iter().copied().sum::<T>() / nf;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (&x, &y) in xs.iter().zip(&ys) {
        sxy = sxy + (x - x_mean) * (y - y_mean);
        sxx = sxx + (x - x_mean) * (x - x_mean);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum::<T>();
    Ok(LinearFit {
        slope,
        intercept,
        rms_residual: (ss / nf).sqrt(),
    })
}

pub fn fit_linear(channels: &[usize]) -> Result<LinearFit<f64>, ArchError> {
    let values: Vec<f64> = channels.iter().map(|&c| c as f64).collect();
    fit_linear_in(&values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_block_line() {
        let p = LinearParam::new(8.75, 15.25, 9).unwrap();
        assert_eq!(p.channels().unwrap(), vec![24, 33, 42, 50, 59, 68, 77, 85, 94]);
    }

    #[test]
    fn constant_line() {
        let p = LinearParam::new(0.0, 36.0, 5).unwrap();
        assert_eq!(p.channels().unwrap(), vec![36; 5]);
    }

    #[test]
    fn half_rounds_away_from_zero() {
        // 15.5, 26.0, 36.5
        let p = LinearParam::new(10.5, 5.0, 3).unwrap();
        assert_eq!(p.channels().unwrap(), vec![16, 26, 37]);
    }

    #[test]
    fn rejects_narrow_and_bad_params() {
        assert!(LinearParam::new(1.0, 5.0, 4).is_err());
        assert!(LinearParam::new(-1.0, 20.0, 4).is_err());
        assert!(LinearParam::new(1.0, f64::NAN, 4).is_err());
        assert!(LinearParam::new(1.0, 20.0, 0).is_err());
    }

    #[test]
    fn fit_examples() {
        let f = fit_linear(&[24, 33, 42, 50, 59, 68, 77, 85, 94]).unwrap();
        assert!((f.slope - 8.733_333_333).abs() < 1e-6);
        assert!((f.intercept - 15.444_444_444).abs() < 1e-6);
        assert!(f.rms_residual < 0.6);

        let f = fit_linear(&[36, 36, 36, 36]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.rms_residual, 0.0);

        let f = fit_linear(&[10, 20, 30]).unwrap();
        assert!((f.slope - 10.0).abs() < 1e-12);
        assert!(f.intercept.abs() < 1e-12);
        assert!(f.rms_residual < 1e-12);

        assert!(fit_linear(&[10]).is_err());
    }

    #[test]
    fn fit_in_f32() {
        let f = fit_linear_in::<f32>(&[10.0, 20.0, 30.0]).unwrap();
        assert!((f.slope - 10.0).abs() < 1e-5);
    }
}
