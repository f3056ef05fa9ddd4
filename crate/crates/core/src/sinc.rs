//! Frozen mel-spaced sinc band-pass filterbank and the waveform front-end.
//!
//! Each filter is the difference of two windowed ideal low-pass responses,
//! giving a linear-phase band-pass between its cut-in and cut-off
//! frequencies. Band edges come from `num_filters + 2` points spaced
//! uniformly on the mel scale between 0 Hz and Nyquist; filter `k` spans
//! points `k + 1` and `k + 2`, so every cut-in is strictly positive and the
//! last cut-off is Nyquist. Kernels are Hamming-windowed and scaled to unit
//! peak magnitude response. They never receive gradients.
//!
//! The front-end treats the filter axis as image height: after the 1D
//! convolution the `(filters, time)` map gains a channel axis and is reduced
//! by a 3×3 max-pool over both filters and time, then batch-normalised and
//! passed through SeLU.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::params::{BatchNorm, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub const SAMPLE_RATE: u32 = 16_000;
pub const NUM_FILTERS: usize = 70;
pub const KERNEL_LENGTH: usize = 129;
/// Max-pool window applied to the `(filters, time)` map.
pub const FRONTEND_POOL: (usize, usize) = (3, 3);

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Bank of fixed band-pass impulse responses, shape `[filters, 1, length]`.
#[derive(Clone, Debug)]
pub struct SincFilterbank {
    sample_rate: u32,
    band_edges: Vec<(f64, f64)>,
    impulse_responses: Tensor,
}

impl SincFilterbank {
    /// Mel-spaced bank over `(0, Nyquist]`.
    pub fn build(num_filters: usize, kernel_length: usize, sample_rate: u32) -> Result<Self> {
        if num_filters == 0 {
            return Err(Error::Contract("filterbank needs at least one filter".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
        let points: Vec<f64> = (0..num_filters + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (num_filters + 1) as f64))
            .collect();
        let mut bands: Vec<(f64, f64)> = points.windows(2).skip(1).map(|p| (p[0], p[1])).collect();
        // guard against rounding past Nyquist in the mel round trip
        if let Some(last) = bands.last_mut() {
            last.1 = nyquist;
        }
        Self::from_bands(&bands, kernel_length, sample_rate)
    }

    /// Bank with explicit `(cut-in, cut-off)` pairs in Hz.
    pub fn from_bands(bands: &[(f64, f64)], kernel_length: usize, sample_rate: u32) -> Result<Self> {
        if kernel_length.is_multiple_of(2) || kernel_length == 0 {
            return Err(Error::Contract(format!("sinc kernel length must be odd, got {kernel_length}")));
        }
        if bands.is_empty() {
            return Err(Error::Contract("filterbank needs at least one filter".into()));
        }
        let fs = sample_rate as f64;
        for &(f1, f2) in bands {
            if !(0.0 < f1 && f1 < f2 && f2 <= fs / 2.0) {
                return Err(Error::Contract(format!("invalid band ({f1}, {f2}) Hz at {sample_rate} Hz")));
            }
        }
        let half = (kernel_length / 2) as isize;
        let window: Vec<f64> = (0..kernel_length)
            .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (kernel_length - 1).max(1) as f64).cos())
            .collect();
        let mut data = Vec::with_capacity(bands.len() * kernel_length);
        for &(f1, f2) in bands {
            let (n1, n2) = (f1 / fs, f2 / fs);
            let mut h: Vec<f64> = (-half..=half)
                .zip(&window)
                .map(|(n, w)| {
                    let n = n as f64;
                    let lowpass = |fc: f64| 2.0 * fc * sinc(2.0 * PI * fc * n);
                    (lowpass(n2) - lowpass(n1)) * w
                })
                .collect();
            let peak = peak_response(&h, fs, (f1 + f2) / 2.0);
            h.iter_mut().for_each(|v| *v /= peak);
            data.extend(h);
        }
        let impulse_responses = Tensor::new(&[bands.len(), 1, kernel_length], data)?;
        Ok(Self {
            sample_rate,
            band_edges: bands.to_vec(),
            impulse_responses,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.band_edges.len()
    }

    pub fn kernel_length(&self) -> usize {
        self.impulse_responses.shape()[2]
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn band_edges(&self) -> &[(f64, f64)] {
        &self.band_edges
    }

    /// Arithmetic band centres in Hz.
    pub fn centers(&self) -> Vec<f64> {
        self.band_edges.iter().map(|(a, b)| (a + b) / 2.0).collect()
    }

    /// Frozen kernels, `[filters, 1, length]`.
    pub fn impulse_responses(&self) -> &Tensor {
        &self.impulse_responses
    }

    pub fn kernel(&self, k: usize) -> &[f64] {
        let len = self.kernel_length();
        &self.impulse_responses.data()[k * len..(k + 1) * len]
    }

    /// Magnitude of filter `k`'s discrete-time Fourier transform at `hz`.
    pub fn magnitude(&self, k: usize, hz: f64) -> f64 {
        dtft_magnitude(self.kernel(k), self.sample_rate as f64, hz)
    }
}

fn dtft_magnitude(h: &[f64], fs: f64, hz: f64) -> f64 {
    let w = 2.0 * PI * hz / fs;
    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, &v)| {
        let a = w * i as f64;
        (re + v * a.cos(), im - v * a.sin())
    });
    re.hypot(im)
}

fn peak_response(h: &[f64], fs: f64, center: f64) -> f64 {
    const GRID: usize = 2048;
    (0..=GRID)
        .map(|i| fs / 2.0 * i as f64 / GRID as f64)
        .chain(std::iter::once(center))
        .map(|f| dtft_magnitude(h, fs, f))
        .fold(0.0, f64::max)
}

/// Sinc convolution, max-pool, batch norm and SeLU.
#[derive(Clone, Debug)]
pub struct Frontend {
    bank: SincFilterbank,
    segment_length: usize,
    bn: BatchNorm,
}

impl Frontend {
    pub fn new(bank: SincFilterbank, segment_length: usize, store: &mut ParamStore) -> Result<Self> {
        if segment_length < bank.kernel_length() {
            return Err(Error::Config(format!(
                "segment length {segment_length} shorter than the sinc kernel ({})",
                bank.kernel_length()
            )));
        }
        let bn = BatchNorm::new(store, "frontend.bn", 1, 1);
        Ok(Self {
            bank,
            segment_length,
            bn,
        })
    }

    pub fn bank(&self) -> &SincFilterbank {
        &self.bank
    }

    pub fn segment_length(&self) -> usize {
        self.segment_length
    }

    /// Shape `[filters, time]` of the raw filterbank output.
    pub fn filtered_shape(&self) -> [usize; 2] {
        [self.bank.num_filters(), self.segment_length - self.bank.kernel_length() + 1]
    }

    /// Shape `[1, freq, time]` after pooling.
    pub fn pooled_shape(&self) -> [usize; 3] {
        let [f, t] = self.filtered_shape();
        [1, f / FRONTEND_POOL.0, t / FRONTEND_POOL.1]
    }

    /// Frozen part of the front-end for a batch of waveforms: sinc filtering
    /// and max-pooling, returning `[B, 1, freq, time]`.
    ///
    /// Its output depends only on the input, so callers may cache it.
    pub fn filter_and_pool(&self, waves: &[&[f64]]) -> Result<Tensor> {
        self.filter_and_pool_traced(waves, |_, _| {})
    }

    pub(crate) fn filter_and_pool_traced(
        &self,
        waves: &[&[f64]],
        mut trace: impl FnMut(&'static str, &[usize]),
    ) -> Result<Tensor> {
        if waves.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        for w in waves {
            if w.len() != self.segment_length {
                return Err(Error::Contract(format!(
                    "front-end expects {} samples, got {}",
                    self.segment_length,
                    w.len()
                )));
            }
        }
        let tape = Tape::no_grad();
        let b = waves.len();
        let data: Vec<f64> = waves.iter().flat_map(|w| w.iter().copied()).collect();
        let x = tape.constant(Tensor::new(&[b, 1, self.segment_length], data)?);
        let k = tape.constant(self.bank.impulse_responses().clone());
        let y = x.conv1d(&k, 1)?;
        trace("sinc", &y.shape()[1..]);
        let [f, t] = self.filtered_shape();
        let y = y.reshape(&[b, 1, f, t])?;
        trace("add_channel", &y.shape()[1..]);
        let y = y.maxpool2d(FRONTEND_POOL)?;
        trace("maxpool", &y.shape()[1..]);
        Ok(y.to_tensor())
    }

    /// Trainable tail: batch norm and SeLU over pooled features.
    pub fn normalize<'t>(&self, store: &mut ParamStore, pooled: &Var<'t>, training: bool) -> Result<Var<'t>> {
        self.bn.forward(store, pooled, training)?.selu()
    }

    /// Full front-end for a batch of waveforms.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &mut ParamStore, waves: &[&[f64]], training: bool) -> Result<Var<'t>> {
        let pooled = tape.constant(self.filter_and_pool(waves)?);
        self.normalize(store, &pooled, training)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_round_trip() {
        for hz in [0.0, 100.0, 1000.0, 8000.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
    }

    #[test]
    fn even_kernel_rejected() {
        assert!(SincFilterbank::build(10, 128, SAMPLE_RATE).is_err());
        assert!(SincFilterbank::build(0, 129, SAMPLE_RATE).is_err());
    }

    #[test]
    fn bank_invariants() {
        let bank = SincFilterbank::build(NUM_FILTERS, KERNEL_LENGTH, SAMPLE_RATE).unwrap();
        assert_eq!(bank.impulse_responses().shape(), &[70, 1, 129]);
        assert!(!bank.impulse_responses().requires_grad());
        let edges = bank.band_edges();
        for (k, &(f1, f2)) in edges.iter().enumerate() {
            assert!(0.0 < f1 && f1 < f2 && f2 <= 8000.0, "band {k}");
            if k > 0 {
                assert!(f1 >= edges[k - 1].0 && f2 >= edges[k - 1].1);
            }
            let h = bank.kernel(k);
            for i in 0..h.len() / 2 {
                assert!((h[i] - h[h.len() - 1 - i]).abs() < 1e-12, "filter {k} not symmetric");
            }
        }
        let c = bank.centers();
        assert!(c.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(edges[69].1, 8000.0);
    }

    #[test]
    fn unit_peak_response() {
        let bank = SincFilterbank::build(8, 129, SAMPLE_RATE).unwrap();
        for k in 0..8 {
            let peak = (0..=400).map(|i| bank.magnitude(k, 20.0 * i as f64)).fold(0.0, f64::max);
            assert!((peak - 1.0).abs() < 0.01, "filter {k} peak {peak}");
        }
    }
}
