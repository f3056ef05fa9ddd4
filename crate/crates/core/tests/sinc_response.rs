use std::f64::consts::PI;

use rawgat_core::sinc::{SincFilterbank, KERNEL_LENGTH, NUM_FILTERS, SAMPLE_RATE};

fn response(h: &[f64], hz: f64) -> f64 {
    let w = 2.0 * PI * hz / SAMPLE_RATE as f64;
    let re: f64 = h.iter().enumerate().map(|(i, v)| v * (w * i as f64).cos()).sum();
    let im: f64 = h.iter().enumerate().map(|(i, v)| v * (w * i as f64).sin()).sum();
    re.hypot(im)
}

fn margins_db(bank: &SincFilterbank, k: usize) -> (f64, f64) {
    let h = bank.kernel(k);
    let centre = response(h, bank.centers()[k]);
    let db = |edge: f64| 20.0 * (centre / response(h, edge).max(1e-300)).log10();
    (db(0.0), db(SAMPLE_RATE as f64 / 2.0))
}

#[test]
fn interior_filters_reject_dc_and_nyquist_by_20_db() {
    let bank = SincFilterbank::build(NUM_FILTERS, KERNEL_LENGTH, SAMPLE_RATE).unwrap();
    let mut short = Vec::new();
    for k in 0..NUM_FILTERS {
        let (dc, nyq) = margins_db(&bank, k);
        if dc < 20.0 || nyq < 20.0 {
            short.push(k);
        }
    }
    // the lowest bands are narrower than the 129-tap main lobe, and the top
    // band touches Nyquist
    assert_eq!(short, vec![0, 1, 2, 3, 4, 5, 69]);
}

#[test]
fn kernels_are_symmetric() {
    let bank = SincFilterbank::build(NUM_FILTERS, KERNEL_LENGTH, SAMPLE_RATE).unwrap();
    for k in 0..NUM_FILTERS {
        let h = bank.kernel(k);
        for i in 0..KERNEL_LENGTH / 2 {
            assert!((h[i] - h[KERNEL_LENGTH - 1 - i]).abs() < 1e-12, "filter {k}");
        }
    }
}

#[test]
fn band_edges_are_mel_spaced() {
    let bank = SincFilterbank::build(NUM_FILTERS, KERNEL_LENGTH, SAMPLE_RATE).unwrap();
    let mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let step = mel(SAMPLE_RATE as f64 / 2.0) / (NUM_FILTERS + 1) as f64;
    for (k, &(lo, hi)) in bank.band_edges().iter().enumerate() {
        assert!((mel(lo) - step * (k + 1) as f64).abs() < 1e-6);
        assert!((mel(hi) - step * (k + 2) as f64).abs() < 1e-6);
    }
}
