use std::f64::consts::PI;

use dttnet::spectral::{istft, pack, stft, stft_frames, unpack, SpectralConfig, Waveform};
use ndarray::{Array2, Array3};
use proptest::prelude::*;
use rand::Rng as _;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn small() -> SpectralConfig {
    SpectralConfig {
        window_size: 64,
        hop_length: 16,
        crop_bins: 17,
        ..Default::default()
    }
}

/// Direct O(N²) DFT.
fn dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(i, &v)| Complex64::from_polar(v, -2.0 * PI * ((k * i) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn noise(channels: usize, len: usize, seed: u64) -> Waveform {
    let mut rng = dttnet::seed::rng(seed, &[]);
    Waveform::new(Array2::from_shape_fn((channels, len), |_| rng.random_range(-0.5..0.5)), 44_100).unwrap()
}

#[test]
fn six_second_stereo_frame_count() {
    let cfg = SpectralConfig::default();
    let len = 264_600;
    // Enumerate frame centres t·hop that fall inside the signal.
    let enumerated = (0..).take_while(|t| t * cfg.hop_length <= len - 1).count();
    assert_eq!(enumerated, 259);
    let s = stft(&Waveform::zeros(2, len, 44_100).unwrap(), &cfg).unwrap();
    assert_eq!(s.data().dim(), (4, 2048, 259));
    assert_eq!(s.source_length(), len);
    assert_eq!(s.full_bins(), 3073);
}

#[test]
fn zero_input_gives_zero_spectrogram() {
    let s = stft(&Waveform::zeros(2, 1000, 44_100).unwrap(), &small()).unwrap();
    assert!(s.data().iter().all(|&v| v == 0.0));
}

#[test]
fn bin_centred_sinusoid_concentrates_energy() {
    let cfg = SpectralConfig::default();
    let n = cfg.window_size;
    let bin = 100;
    let len = 4 * n;
    let x: Vec<f64> = (0..len).map(|i| (2.0 * PI * (bin * i) as f64 / n as f64).cos()).collect();
    let frames = stft_frames(&x, &cfg).unwrap();
    // An interior frame, cross-checked against a direct DFT of the windowed slice.
    let t = 8;
    let start = t * cfg.hop_length - n / 2;
    let win = cfg.window_values();
    let slice: Vec<f64> = (0..n).map(|i| x[start + i] * win[i]).collect();
    let oracle = dft(&slice);
    let col = frames.column(t);
    for k in 0..cfg.full_bins() {
        assert!((col[k] - oracle[k]).norm() < 1e-6, "bin {k}");
    }
    let energy = |k: usize| oracle[k].norm_sqr();
    let total: f64 = (0..cfg.full_bins()).map(energy).sum();
    // Periodic Hann spreads a bin-centred tone over exactly bins k-1, k, k+1.
    let lobe = energy(bin - 1) + energy(bin) + energy(bin + 1);
    assert!(lobe / total >= 0.99, "{}", lobe / total);
    assert!(energy(bin) / total >= 0.66);
}

#[test]
fn linearity() {
    let cfg = small();
    let x = noise(2, 700, 1);
    let y = noise(2, 700, 2);
    let (a, b) = (0.7, -1.3);
    let combo = Waveform::new(&x.samples() * a + &y.samples() * b, 44_100).unwrap();
    let lhs = stft(&combo, &cfg).unwrap().into_data();
    let rhs = stft(&x, &cfg).unwrap().into_data() * a + stft(&y, &cfg).unwrap().into_data() * b;
    let err = lhs.iter().zip(&rhs).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    assert!(err < 1e-6, "{err}");
}

#[test]
fn window_sum_is_bounded_away_from_zero() {
    let cfg = SpectralConfig::default();
    let frames = cfg.frame_count(264_600);
    let sum = cfg.window_sum(frames);
    let pad = cfg.window_size / 2;
    let min = sum[pad..pad + 264_600].iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(min > 0.5, "{min}");
}

/// Periodic noise generated from random DFT coefficients below `max_bin`
/// (in units of the analysis window's bin spacing).
fn band_limited(len: usize, window: usize, max_bin: usize, seed: u64) -> Vec<f64> {
    let mut rng = dttnet::seed::rng(seed, &[]);
    let top = max_bin * len / window;
    let mut buf = vec![Complex64::default(); len];
    for k in 1..top {
        let v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        buf[k] = v;
        buf[len - k] = v.conj();
    }
    FftPlanner::new().plan_fft_inverse(len).process(&mut buf);
    let peak = buf.iter().fold(0.0f64, |m, c| m.max(c.re.abs()));
    buf.iter().map(|c| 0.5 * c.re / peak).collect()
}

#[test]
fn band_limited_round_trip_away_from_edges() {
    let cfg = SpectralConfig::default();
    let len = 6 * 44_100;
    let w = Waveform::from_channels(
        &[band_limited(len, cfg.window_size, 864, 1), band_limited(len, cfg.window_size, 864, 2)],
        44_100,
    )
    .unwrap();
    let y = istft(&stft(&w, &cfg).unwrap(), &cfg).unwrap();
    assert_eq!(y.len(), len);
    // Frames that reach into the reflected padding carry out-of-band content
    // that the crop removes; everywhere else the round trip is exact.
    let edge = cfg.window_size / 2;
    let d = &y.samples() - &w.samples();
    let interior = d.slice(ndarray::s![.., edge..len - edge]).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(interior <= 1e-4, "{interior}");
}

/// DFT bins `0..bins` of `x` by direct summation against a twiddle table.
fn dft_low(x: &[f64], bins: usize) -> Vec<Complex64> {
    let n = x.len();
    let tw: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(1.0, -2.0 * PI * i as f64 / n as f64)).collect();
    (0..bins)
        .map(|k| x.iter().enumerate().map(|(i, &v)| tw[(k * i) % n] * v).sum())
        .collect()
}

#[test]
fn full_band_residual_lives_above_the_crop() {
    let cfg = SpectralConfig::default();
    let len = 8 * cfg.window_size;
    let x = noise(1, len, 3);
    let y = istft(&stft(&x, &cfg).unwrap(), &cfg).unwrap();
    let r: Vec<f64> = (0..len).map(|i| y.channel(0)[i] - x.channel(0)[i]).collect();
    // Residual spectrum over the frames that do not touch the padding,
    // through a smooth taper.
    let (a, b) = (cfg.window_size / 2, len - cfg.window_size / 2);
    let m = b - a;
    let taper: Vec<f64> = (0..m).map(|i| (PI * i as f64 / m as f64).sin().powi(4)).collect();
    let seg = |s: &[f64]| -> Vec<f64> { (0..m).map(|i| s[a + i] * taper[i]).collect() };
    // Everything below the crop, less a transition band of eight analysis
    // bins where the window's sidelobes straddle it.
    let per_bin = m / cfg.window_size;
    let low_bins = (cfg.crop_bins - 8) * per_bin;
    let rs = dft_low(&seg(&r), low_bins);
    let xs = dft_low(&seg(x.channel(0)), low_bins);
    let low = rs[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
    let scale = xs[1..].iter().map(|c| c.norm()).fold(0.0, f64::max);
    assert!(low / scale <= 1e-4, "{}", low / scale);
}

proptest! {
    #[test]
    fn pack_unpack_is_exact(ch in 1usize..3, f in 1usize..6, t in 1usize..6, seed in any::<u64>()) {
        let mut rng = dttnet::seed::rng(seed, &[]);
        let z = Array3::from_shape_fn((ch, f, t), |_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() * 1e6));
        let back = unpack(pack(z.view()).view()).unwrap();
        prop_assert_eq!(back, z);
    }

    #[test]
    fn round_trip_preserves_length(len in 16usize..600) {
        let cfg = small();
        let x = noise(2, len, len as u64);
        let y = istft(&stft(&x, &cfg).unwrap(), &cfg).unwrap();
        prop_assert_eq!((y.channels(), y.len()), (2, len));
        let full = SpectralConfig { crop_bins: cfg.full_bins(), ..cfg };
        let exact = istft(&stft(&x, &full).unwrap(), &full).unwrap();
        prop_assert!(max_abs_diff(&exact.samples().to_owned(), &x.samples().to_owned()) < 1e-12);
    }
}
