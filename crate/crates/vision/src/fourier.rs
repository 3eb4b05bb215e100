//! 2-D discrete Fourier transform in polar (amplitude, phase) form and the
//! amplitude-scaling background intervention.
//!
//! The forward transform is unnormalised,
//! `F[u, v] = sum_{r, c} x[r, c] * exp(-2 pi i (u r / H + v c / W))`,
//! and the inverse carries the `1 / (H W)` factor.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Result, VisionError};
use crate::image::DepthImage;

/// Polar decomposition of a 2-D spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    /// `|F|`, never negative.
    pub amplitude: Vec<f64>,
    /// `arg F` in `(-pi, pi]`.
    pub phase: Vec<f64>,
}

impl Spectrum {
    fn from_complex(height: usize, width: usize, bins: &[Complex<f64>]) -> Self {
        Spectrum {
            height,
            width,
            amplitude: bins.iter().map(|c| c.norm()).collect(),
            phase: bins.iter().map(|c| wrap_phase(c.arg())).collect(),
        }
    }

    fn to_complex(&self) -> Vec<Complex<f64>> {
        self.amplitude
            .iter()
            .zip(&self.phase)
            .map(|(&a, &p)| Complex::from_polar(a, p))
            .collect()
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn wrap_phase(p: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = p % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
    if !height.is_power_of_two() || !width.is_power_of_two() {
        return Err(VisionError::Config(format!(
            "FFT needs power-of-two dimensions, got {height}x{width}"
        )));
    }
    if len != height * width {
        return Err(VisionError::Config(format!(
            "{len} samples for a {height}x{width} grid"
        )));
    }
    Ok(())
}

fn transform(height: usize, width: usize, bins: &mut [Complex<f64>], inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in bins.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = bins[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            bins[r * width + c] = column[r];
        }
    }
    if inverse {
        let norm = 1.0 / (height * width) as f64;
        bins.iter_mut().for_each(|b| *b *= norm);
    }
}

/// Forward transform of a raw real grid.
pub fn fft2_grid(height: usize, width: usize, data: &[f64]) -> Result<Spectrum> {
    check_dims(height, width, data.len())?;
    let mut bins: Vec<Complex<f64>> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform(height, width, &mut bins, false);
    Ok(Spectrum::from_complex(height, width, &bins))
}

pub fn fft2(image: &DepthImage) -> Result<Spectrum> {
    fft2_grid(image.height(), image.width(), image.data())
}

/// Inverse transform. Returns the real part and the largest absolute
/// imaginary component left over.
pub fn ifft2(spectrum: &Spectrum) -> Result<(Vec<f64>, f64)> {
    check_dims(spectrum.height, spectrum.width, spectrum.amplitude.len())?;
    let mut bins = spectrum.to_complex();
    transform(spectrum.height, spectrum.width, &mut bins, true);
    let residue = bins.iter().map(|b| b.im.abs()).fold(0.0, f64::max);
    Ok((bins.iter().map(|b| b.re).collect(), residue))
}

/// Result of scaling the amplitude spectrum, before range clamping.
#[derive(Debug, Clone)]
pub struct AmplitudePerturbation {
    pub height: usize,
    pub width: usize,
    /// Real part of the inverse transform, not yet clamped to the sensor range.
    pub raw: Vec<f64>,
    /// Largest absolute imaginary part of the inverse transform.
    pub imag_residue: f64,
}

/// Scales every amplitude bin by `lambda`, keeps the phase, and inverts.
pub fn amplitude_perturb_raw(
    height: usize,
    width: usize,
    data: &[f64],
    lambda: f64,
) -> Result<AmplitudePerturbation> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(VisionError::Parameter(format!("lambda {lambda} must be positive")));
    }
    let mut spectrum = fft2_grid(height, width, data)?;
    spectrum.amplitude.iter_mut().for_each(|a| *a *= lambda);
    let (raw, imag_residue) = ifft2(&spectrum)?;
    Ok(AmplitudePerturbation {
        height,
        width,
        raw,
        imag_residue,
    })
}

/// Amplitude intervention on a depth image, clamped back into sensor range.
pub fn amplitude_perturb(image: &DepthImage, lambda: f64) -> Result<DepthImage> {
    let p = amplitude_perturb_raw(image.height(), image.width(), image.data(), lambda)?;
    DepthImage::from_clamped(image.height(), image.width(), image.max_range(), &p.raw)
}

/// Largest wrapped phase difference over bins whose amplitude in `before`
/// exceeds `amplitude_floor`.
pub fn max_phase_drift(before: &Spectrum, after: &Spectrum, amplitude_floor: f64) -> f64 {
    before
        .amplitude
        .iter()
        .zip(before.phase.iter().zip(&after.phase))
        .filter(|(a, _)| **a > amplitude_floor)
        .map(|(_, (p, q))| wrap_phase(p - q).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_dc_only() {
        let img = DepthImage::filled(4, 8, 10.0, 3.0).unwrap();
        let s = fft2(&img).unwrap();
        assert!((s.amplitude[0] - 3.0 * 32.0).abs() < 1e-9);
        assert!(s.amplitude[1..].iter().all(|a| *a < 1e-9));
        assert!(s.phase[0].abs() < 1e-12);
    }

    #[test]
    fn impulse_has_flat_amplitude() {
        let mut data = vec![0.0; 16];
        data[0] = 2.0;
        let s = fft2_grid(4, 4, &data).unwrap();
        assert!(s.amplitude.iter().all(|a| (a - 2.0).abs() < 1e-12));
    }

    #[test]
    fn non_power_of_two_is_config_error() {
        assert!(matches!(fft2_grid(3, 4, &[0.0; 12]), Err(VisionError::Config(_))));
    }

    #[test]
    fn lambda_must_be_positive() {
        let img = DepthImage::filled(2, 2, 1.0, 0.5).unwrap();
        assert!(matches!(amplitude_perturb(&img, 0.0), Err(VisionError::Parameter(_))));
        assert!(amplitude_perturb(&img, -1.0).is_err());
    }

    #[test]
    fn constant_image_scales_with_lambda() {
        let img = DepthImage::filled(8, 8, 20.0, 6.0).unwrap();
        let out = amplitude_perturb(&img, 0.5).unwrap();
        assert!(out.data().iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn wrap_phase_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(0.5) - 0.5).abs() < 1e-15);
    }
}
