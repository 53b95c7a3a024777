//! Fourier-domain window descriptors: magnitude-spectrum statistics plus
//! audio-style spectral features (centroid, bandwidth, flatness, roll-off)
//! of the radially averaged profile.

use std::cell::RefCell;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::imagecore::GrayImage;
use crate::texfeat::stats::StatsSummary;
use crate::Real;

pub const ROLLOFF_FRACTION: f64 = 0.85;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_1d(data: &mut [Complex<f64>]) {
    PLANNER.with(|p| {
        let fft = p.borrow_mut().plan_fft_forward(data.len());
        fft.process(data);
    });
}

/// Unnormalized 2-D DFT of the mean-subtracted window; returns the
/// magnitude spectrum in row-major layout.
pub fn magnitude_spectrum<F: Real>(img: &GrayImage<F>) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let mean = img.mean().to_f64_lossy();
    let mut grid: Vec<Complex<f64>> = img
        .pixels()
        .iter()
        .map(|&p| Complex::new(p.to_f64_lossy() - mean, 0.0))
        .collect();
    // rows
    for row in grid.chunks_exact_mut(w) {
        fft_1d(row);
    }
    // columns
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = grid[y * w + x];
        }
        fft_1d(&mut col);
        for y in 0..h {
            grid[y * w + x] = col[y];
        }
    }
    grid.into_iter().map(|c| c.norm()).collect()
}

/// Reduces a centered magnitude spectrum to a 1-D profile by averaging
/// over integer-radius annuli around the zero-frequency bin.
pub fn radial_profile(spectrum: &[f64], w: usize, h: usize) -> Vec<f64> {
    let cx = (w / 2) as f64;
    let cy = (h / 2) as f64;
    // fftshift: the zero-frequency bin moves to (w/2, h/2)
    let shifted = |x: usize, y: usize| -> f64 {
        let sx = (x + w - w / 2) % w;
        let sy = (y + h - h / 2) % h;
        spectrum[sy * w + sx]
    };
    let max_r = ((cx * cx + cy * cy).sqrt().ceil() as usize) + 1;
    let mut sums = vec![0.0f64; max_r];
    let mut counts = vec![0usize; max_r];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let r = (dx * dx + dy * dy).sqrt().round() as usize;
            sums[r] += shifted(x, y);
            counts[r] += 1;
        }
    }
    sums.iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&s, &c)| s / c as f64)
        .collect()
}

/// Centroid, bandwidth, flatness, and roll-off of a radial profile.
/// An all-zero profile defines every descriptor as 0.
pub fn spectral_descriptors(profile: &[f64]) -> [f64; 4] {
    let total: f64 = profile.iter().sum();
    if total <= 0.0 {
        return [0.0; 4];
    }
    let centroid: f64 = profile
        .iter()
        .enumerate()
        .map(|(r, &p)| r as f64 * p)
        .sum::<f64>()
        / total;
    let bandwidth = (profile
        .iter()
        .enumerate()
        .map(|(r, &p)| (r as f64 - centroid).powi(2) * p)
        .sum::<f64>()
        / total)
        .sqrt();
    let n = profile.len() as f64;
    let arith = total / n;
    let flatness = if profile.iter().any(|&p| p <= 0.0) {
        0.0
    } else {
        let log_mean: f64 = profile.iter().map(|p| p.ln()).sum::<f64>() / n;
        log_mean.exp() / arith
    };
    let mut cum = 0.0;
    let mut rolloff = (profile.len() - 1) as f64;
    for (r, &p) in profile.iter().enumerate() {
        cum += p;
        if cum >= ROLLOFF_FRACTION * total {
            rolloff = r as f64;
            break;
        }
    }
    [centroid, bandwidth, flatness, rolloff]
}

/// Full Fourier feature block: the six-number summary of the magnitude
/// spectrum followed by the four spectral descriptors of the radial
/// profile. A constant window yields all zeros.
pub fn fourier_features<F: Real>(img: &GrayImage<F>) -> Vec<F> {
    let spectrum = magnitude_spectrum(img);
    let peak = spectrum.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 1e-9 {
        return vec![F::zero(); 10];
    }
    let spectrum_f: Vec<F> = spectrum.iter().map(|&v| F::from_f64_lossy(v)).collect();
    let stats = StatsSummary::of(&spectrum_f);
    let profile = radial_profile(&spectrum, img.width(), img.height());
    let desc = spectral_descriptors(&profile);
    let mut out = Vec::with_capacity(10);
    out.extend(stats.values());
    out.extend(desc.iter().map(|&v| F::from_f64_lossy(v)));
    out
}

pub fn fourier_feature_names() -> Vec<String> {
    let mut names: Vec<String> = StatsSummary::<f64>::NAMES
        .iter()
        .map(|s| format!("fft_{}", s))
        .collect();
    for d in ["centroid", "bandwidth", "flatness", "rolloff"] {
        names.push(format!("fft_{}", d));
    }
    names
}
