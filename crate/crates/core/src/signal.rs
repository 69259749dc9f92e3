//! Orthonormal DCT-II / DCT-III pair and low-pass smoothing.
//!
//! The transform is evaluated directly in O(N^2). Trajectories are at most a
//! few thousand samples long, so a fast transform buys nothing here. All
//! cosines for a given length come from one table of `4N` entries, since
//! `cos(pi (2n+1) k / 2N)` only depends on `(2n+1) k mod 4N`.

use std::f64::consts::PI;

use thiserror::Error;

/// Default number of retained low-frequency coefficients.
pub const DEFAULT_CUTOFF: usize = 15;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SignalError {
    #[error("signal is empty")]
    EmptySignal,
    #[error("cutoff must be at least 1")]
    ZeroCutoff,
}

/// DCT coefficients of a signal; index 0 is the DC term.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coefficients: Vec<f64>,
}

impl Spectrum {
    pub fn new(coefficients: Vec<f64>) -> Result<Self, SignalError> {
        if coefficients.is_empty() {
            return Err(SignalError::EmptySignal);
        }
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Zeroes every coefficient with index `>= cutoff`.
    pub fn truncate(&mut self, cutoff: usize) {
        for c in self.coefficients.iter_mut().skip(cutoff) {
            *c = 0.0;
        }
    }

    pub fn energy(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum()
    }
}

struct CosTable {
    n: usize,
    table: Vec<f64>,
}

impl CosTable {
    fn new(n: usize) -> Self {
        let m = 4 * n;
        let table = (0..m).map(|j| (PI * j as f64 / (2 * n) as f64).cos()).collect();
        Self { n, table }
    }

    /// cos(pi (2i+1) k / 2N)
    #[inline]
    fn get(&self, i: usize, k: usize) -> f64 {
        self.table[((2 * i + 1) * k) % (4 * self.n)]
    }
}

fn scale(n: usize, k: usize) -> f64 {
    if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    }
}

/// Orthonormal DCT-II.
pub fn dct_forward(signal: &[f64]) -> Result<Spectrum, SignalError> {
    let n = signal.len();
    if n == 0 {
        return Err(SignalError::EmptySignal);
    }
    let cos = CosTable::new(n);
    let coefficients = (0..n)
        .map(|k| {
            let s: f64 = signal.iter().enumerate().map(|(i, x)| x * cos.get(i, k)).sum();
            scale(n, k) * s
        })
        .collect();
    Ok(Spectrum { coefficients })
}

/// Orthonormal DCT-III, the inverse of [`dct_forward`].
pub fn dct_inverse(spectrum: &Spectrum) -> Result<Vec<f64>, SignalError> {
    let coeffs = spectrum.coefficients();
    let n = coeffs.len();
    if n == 0 {
        return Err(SignalError::EmptySignal);
    }
    let cos = CosTable::new(n);
    let scaled: Vec<f64> = coeffs.iter().enumerate().map(|(k, c)| c * scale(n, k)).collect();
    Ok((0..n)
        .map(|i| scaled.iter().enumerate().map(|(k, c)| c * cos.get(i, k)).sum())
        .collect())
}

/// Keeps the `cutoff` lowest-frequency coefficients (indices `0..cutoff`)
/// and reconstructs. A cutoff at or beyond the signal length returns the
/// input unchanged.
pub fn smooth_lowpass(signal: &[f64], cutoff: usize) -> Result<Vec<f64>, SignalError> {
    if signal.is_empty() {
        return Err(SignalError::EmptySignal);
    }
    if cutoff == 0 {
        return Err(SignalError::ZeroCutoff);
    }
    if cutoff >= signal.len() {
        return Ok(signal.to_vec());
    }
    let mut spectrum = dct_forward(signal)?;
    spectrum.truncate(cutoff);
    dct_inverse(&spectrum)
}
