use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use super::CsiDims;
use crate::error::{shape, Result};

/// Unitary DFT along the receive-antenna, transmit-antenna and subcarrier
/// axes, mapping the spatial-frequency channel into the angular-delay
/// domain. Layout is unchanged: `(r, n·N_t + t)`.
pub fn dft_angular(h: &[Complex64], dims: CsiDims) -> Result<Vec<Complex64>> {
    transform(h, dims, FftDirection::Forward)
}

pub fn idft_angular(h: &[Complex64], dims: CsiDims) -> Result<Vec<Complex64>> {
    transform(h, dims, FftDirection::Inverse)
}

fn transform(h: &[Complex64], dims: CsiDims, dir: FftDirection) -> Result<Vec<Complex64>> {
    if h.len() != dims.complex_len() {
        return shape(format!(
            "channel has {} entries, dims {:?} need {}",
            h.len(),
            dims,
            dims.complex_len()
        ));
    }
    let CsiDims { n_rx, n_tx, n_sc } = dims;
    let width = dims.width();
    let mut out = h.to_vec();
    let mut planner = FftPlanner::<f64>::new();
    let idx = |r: usize, n: usize, t: usize| r * width + n * n_tx + t;

    // receive antennas
    axis_pass(&mut out, &mut planner, dir, n_rx, n_sc * n_tx, |line, k| {
        let (n, t) = (line / n_tx, line % n_tx);
        idx(k, n, t)
    });
    // transmit antennas
    axis_pass(&mut out, &mut planner, dir, n_tx, n_rx * n_sc, |line, k| {
        let (r, n) = (line / n_sc, line % n_sc);
        idx(r, n, k)
    });
    // subcarriers
    axis_pass(&mut out, &mut planner, dir, n_sc, n_rx * n_tx, |line, k| {
        let (r, t) = (line / n_tx, line % n_tx);
        idx(r, k, t)
    });
    Ok(out)
}

fn axis_pass(
    data: &mut [Complex64],
    planner: &mut FftPlanner<f64>,
    dir: FftDirection,
    len: usize,
    lines: usize,
    at: impl Fn(usize, usize) -> usize,
) {
    let fft = planner.plan_fft(len, dir);
    let scale = 1.0 / (len as f64).sqrt();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for line in 0..lines {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = data[at(line, k)];
        }
        fft.process(&mut buf);
        for (k, b) in buf.iter().enumerate() {
            data[at(line, k)] = *b * scale;
        }
    }
}
