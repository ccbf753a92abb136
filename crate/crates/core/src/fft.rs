//! Multi-dimensional complex FFT over row-major cubic arrays.

use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut p = planner().lock().unwrap_or_else(|e| e.into_inner());
    if inverse {
        p.plan_fft_inverse(len)
    } else {
        p.plan_fft_forward(len)
    }
}

/// In-place unnormalized transform of a `points^dim` array along every axis.
pub fn transform(data: &mut [Complex64], dim: usize, points: usize, inverse: bool) {
    debug_assert_eq!(data.len(), points.pow(dim as u32));
    let fft = plan(points, inverse);
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    // Last axis is contiguous.
    fft.process_with_scratch(data, &mut scratch);
    let mut lane = vec![Complex64::new(0.0, 0.0); points];
    for axis in 0..dim.saturating_sub(1) {
        let stride = points.pow((dim - 1 - axis) as u32);
        let block = stride * points;
        for base in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                let start = base + offset;
                for (j, slot) in lane.iter_mut().enumerate() {
                    *slot = data[start + j * stride];
                }
                fft.process_with_scratch(&mut lane, &mut scratch);
                for (j, v) in lane.iter().enumerate() {
                    data[start + j * stride] = *v;
                }
            }
        }
    }
}

pub fn forward_real(values: &[f64], dim: usize, points: usize) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform(&mut data, dim, points, false);
    data
}

/// Inverse transform, normalized, keeping the real part.
pub fn inverse_real(spectrum: &[Complex64], dim: usize, points: usize) -> Vec<f64> {
    let mut data = spectrum.to_vec();
    transform(&mut data, dim, points, true);
    let scale = 1.0 / data.len() as f64;
    data.iter().map(|c| c.re * scale).collect()
}
