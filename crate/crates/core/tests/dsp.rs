use std::f64::consts::PI;

use aad_core::dsp::{
    average_reference, design_bandpass, erb, filt_zero_phase, filt_zero_phase_1d,
    gammatone_envelope, preprocess_eeg, resample_1d, zscore, zscore_1d, GammatoneBank,
    PreprocessConfig, Resampler,
};
use aad_core::AadError;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sine(freq: f64, fs: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| (2.0 * PI * freq * i as f64 / fs + phase).sin())
        .collect()
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random::<f64>() - 0.5).collect()
}

/// Amplitude and phase of the `freq` component by direct projection.
fn tone_fit(x: &[f64], freq: f64, fs: f64) -> (f64, f64) {
    let (mut c, mut s) = (0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let w = 2.0 * PI * freq * i as f64 / fs;
        c += v * w.cos();
        s += v * w.sin();
    }
    let n = x.len() as f64;
    let (a, b) = (2.0 * s / n, 2.0 * c / n);
    (a.hypot(b), b.atan2(a))
}

// ── filter design ─────────────────────────────────────────────────

#[test]
fn bandpass_taps_are_odd_and_symmetric() {
    let f = design_bandpass(0.5, 32.0, 64.0, 0.5).unwrap();
    assert_eq!(f.len() % 2, 1);
    let n = f.len();
    for i in 0..n {
        assert_eq!(f.taps[i], f.taps[n - 1 - i]);
    }
    assert_eq!(f.delay(), ((n - 1) / 2) as f64);
}

#[test]
fn bandpass_dc_and_midband_response() {
    let f = design_bandpass(0.5, 32.0, 64.0, 0.5).unwrap();
    assert!(f.gain_db(0.0) <= -50.0, "DC {}", f.gain_db(0.0));
    let mid = (0.5f64 * 32.0).sqrt();
    assert!(f.gain_db(mid).abs() <= 0.5, "mid {}", f.gain_db(mid));
}

#[test]
fn bandpass_stopbands_reach_50_db() {
    for (lo, hi, fs, tr) in [(0.5, 32.0, 128.0, 0.5), (1.0, 8.0, 64.0, 1.0), (2.0, 30.0, 100.0, 2.0)] {
        let f = design_bandpass(lo, hi, fs, tr).unwrap();
        for stop in [lo - tr, hi + tr] {
            assert!(f.gain_db(stop) <= -50.0, "{lo}-{hi}@{fs}: {stop} Hz at {}", f.gain_db(stop));
        }
        // deep stopband too, not just the edge
        for k in 0..50 {
            let hz = hi + tr + k as f64 * (fs / 2.0 - hi - tr) / 50.0;
            assert!(f.gain_db(hz) <= -50.0);
        }
        for hz in [lo, (lo * hi).sqrt(), hi] {
            assert!(f.gain_db(hz).abs() <= 0.1, "passband {hz}: {}", f.gain_db(hz));
        }
    }
}

#[test]
fn bandpass_rejects_infeasible_bands() {
    for (lo, hi, fs) in [(0.0, 10.0, 64.0), (10.0, 5.0, 64.0), (1.0, 40.0, 64.0), (-1.0, 4.0, 64.0)] {
        assert!(matches!(design_bandpass(lo, hi, fs, 0.5), Err(AadError::Config(_))));
    }
    // transition pushing the lower cutoff below zero
    assert!(design_bandpass(0.5, 10.0, 64.0, 2.0).is_err());
}

// ── zero-phase filtering ──────────────────────────────────────────

#[test]
fn zero_phase_rejects_dc_and_zero() {
    let f = design_bandpass(0.5, 32.0, 64.0, 0.5).unwrap();
    let n = 3 * f.len() + 100;
    let y = filt_zero_phase_1d(&vec![3.0; n], &f).unwrap();
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak <= 1e-3 * 3.0, "peak {peak}");
    let z = filt_zero_phase_1d(&vec![0.0; n], &f).unwrap();
    assert!(z.iter().all(|&v| v == 0.0));
}

#[test]
fn zero_phase_ten_hz_sinusoid() {
    let f = design_bandpass(0.5, 32.0, 64.0, 0.5).unwrap();
    let n = 4 * f.len();
    let x = sine(10.0, 64.0, n, 0.3);
    let y = filt_zero_phase_1d(&x, &f).unwrap();
    let mid = n / 4..3 * n / 4;
    let (amp, ph) = tone_fit(&y[mid.clone()], 10.0, 64.0);
    let (_, ph0) = tone_fit(&x[mid], 10.0, 64.0);
    assert!((amp - 1.0).abs() <= 0.02, "amp {amp}");
    assert!((ph - ph0).abs() <= 0.01, "phase {ph} vs {ph0}");
    assert_eq!(y.len(), x.len());
}

#[test]
fn zero_phase_has_zero_lag_across_passband() {
    let f = design_bandpass(0.5, 32.0, 128.0, 0.5).unwrap();
    let n = 4 * f.len();
    for freq in [1.0, 4.0, 10.0, 25.0] {
        let x = sine(freq, 128.0, n, 0.0);
        let y = filt_zero_phase_1d(&x, &f).unwrap();
        let core = n / 4..3 * n / 4;
        let xcorr = |lag: isize| -> f64 {
            core.clone()
                .map(|i| x[i] * y[(i as isize + lag) as usize])
                .sum()
        };
        let best = (-20..=20).max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b))).unwrap();
        assert_eq!(best, 0, "{freq} Hz lag {best}");
    }
}

#[test]
fn zero_phase_needs_three_filter_lengths() {
    let f = design_bandpass(0.5, 32.0, 64.0, 0.5).unwrap();
    let x = vec![1.0; 3 * f.len()];
    assert!(matches!(filt_zero_phase_1d(&x, &f), Err(AadError::Contract(_))));
}

#[test]
fn zero_phase_filters_channels_independently() {
    let f = design_bandpass(1.0, 8.0, 64.0, 1.0).unwrap();
    let n = 4 * f.len();
    let (a, b) = (noise(1, n), noise(2, n));
    let mut m = DMatrix::zeros(n, 2);
    m.column_mut(0).copy_from_slice(&a);
    m.column_mut(1).copy_from_slice(&b);
    let y = filt_zero_phase(&m, &f).unwrap();
    let ya = filt_zero_phase_1d(&a, &f).unwrap();
    for i in 0..n {
        assert_eq!(y[(i, 0)], ya[i]);
    }
}

#[test]
fn fft_and_direct_convolution_agree() {
    // short filters take the direct path; long ones the FFT path
    let x = noise(3, 500);
    let taps: Vec<f64> = (0..201).map(|i| ((i as f64 - 100.0) / 30.0).exp().recip().min(1.0)).collect();
    let fast = aad_core::dsp::Convolver::new(&taps, x.len()).apply(&x);
    let m = 100isize;
    for t in 0..x.len() {
        let mut acc = 0.0;
        for (k, h) in taps.iter().enumerate() {
            let j = t as isize + m - k as isize;
            if (0..x.len() as isize).contains(&j) {
                acc += h * x[j as usize];
            }
        }
        assert!((fast[t] - acc).abs() <= 1e-10);
    }
}

// ── resampling ────────────────────────────────────────────────────

#[test]
fn resample_sinusoid_keeps_amplitude() {
    let x = sine(8.0, 512.0, 512 * 20, 0.0);
    let y = resample_1d(&x, 512.0, 64.0).unwrap();
    assert_eq!(y.len(), 64 * 20);
    let core = &y[128..y.len() - 128];
    let (amp, _) = tone_fit(core, 8.0, 64.0);
    assert!((amp - 1.0).abs() <= 0.02, "amp {amp}");
    // sample-by-sample against the analytic tone at the new rate
    let ideal = sine(8.0, 64.0, y.len(), 0.0);
    for i in 128..y.len() - 128 {
        assert!((y[i] - ideal[i]).abs() <= 0.02);
    }
}

#[test]
fn resample_constant_is_constant() {
    for (fs_in, fs_out) in [(512.0, 64.0), (128.0, 64.0), (8000.0, 64.0), (300.0, 200.0)] {
        let x = vec![2.5; (fs_in as usize) * 10];
        let y = resample_1d(&x, fs_in, fs_out).unwrap();
        assert_eq!(y.len(), (fs_out as usize) * 10);
        assert!(y.iter().all(|v| (v - 2.5).abs() <= 1e-6), "{fs_in}->{fs_out}");
    }
}

#[test]
fn resample_attenuates_above_output_nyquist() {
    let r = Resampler::new(512.0, 64.0).unwrap();
    // prototype response over the whole aliasing region
    let proto = aad_core::dsp::FirFilter {
        taps: r.taps().to_vec(),
        fs: 512.0,
        band: (0.0, 28.8),
    };
    for k in 0..=224 {
        let hz = 32.0 + k as f64;
        assert!(proto.gain_db(hz) <= -40.0, "{hz} Hz: {}", proto.gain_db(hz));
    }
    // white noise: energy above 32 Hz must not fold back into the output
    let x = noise(5, 512 * 60);
    let y = resample_1d(&x, 512.0, 64.0).unwrap();
    let lowpassed_power: f64 = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let in_power: f64 = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    // passband holds 0.45·64/256 of the white spectrum
    let expected = in_power * 0.45 * 64.0 / 256.0;
    assert!((lowpassed_power / expected - 1.0).abs() < 0.1, "{lowpassed_power} vs {expected}");
    // tones above the new Nyquist are suppressed by ≥ 40 dB
    for hz in [40.0, 70.0, 100.0, 200.0] {
        let t = sine(hz, 512.0, 512 * 10, 0.0);
        let y = resample_1d(&t, 512.0, 64.0).unwrap();
        let rms = (y[64..y.len() - 64].iter().map(|v| v * v).sum::<f64>() / (y.len() - 128) as f64).sqrt();
        assert!(rms <= 0.01 / 2f64.sqrt(), "{hz} Hz rms {rms}");
    }
}

#[test]
fn resample_rejects_bad_ratios() {
    assert!(matches!(Resampler::new(64.5, 64.0), Err(AadError::Config(_))));
    assert!(matches!(Resampler::new(64.0, 128.0), Err(AadError::Config(_))));
    assert!(Resampler::new(44100.0, 64.0).is_ok());
}

// ── z-score ───────────────────────────────────────────────────────

#[test]
fn zscore_hand_example() {
    let y = zscore_1d(&[1.0, 2.0, 3.0]).unwrap();
    let s = (2.0f64 / 3.0).sqrt();
    assert!((y[0] + 1.0 / s).abs() < 1e-12 && y[1].abs() < 1e-15 && (y[2] - 1.0 / s).abs() < 1e-12);
    assert!((y[2] - 1.22474).abs() < 1e-5);
}

#[test]
fn zscore_is_exact_and_affine_invariant() {
    let x = DMatrix::from_fn(300, 5, |i, j| ((i * 7 + j * 13) % 17) as f64 + 0.1 * j as f64);
    let z = zscore(&x).unwrap();
    let n = z.len() as f64;
    let mean = z.sum() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() <= 1e-12);
    assert!((sd - 1.0).abs() <= 1e-12);
    let z2 = zscore(&x.map(|v| 3.7 * v - 11.0)).unwrap();
    for (a, b) in z.iter().zip(z2.iter()) {
        assert!((a - b).abs() <= 1e-12);
    }
    assert!(matches!(zscore(&DMatrix::from_element(4, 2, 1.0)), Err(AadError::Degenerate(_))));
}

#[test]
fn average_reference_zeroes_row_means() {
    let x = DMatrix::from_fn(10, 4, |i, j| (i * j) as f64 + 1.0);
    let r = average_reference(&x);
    for row in r.row_iter() {
        assert!(row.sum().abs() < 1e-12);
    }
}

#[test]
fn eeg_pipeline_is_gain_invariant() {
    let t = 128 * 26;
    let x = DMatrix::from_fn(t, 3, |i, j| ((i as f64) * 0.01 * (j + 1) as f64).sin() + 0.3 * ((i * (j + 3)) % 7) as f64);
    let cfg = PreprocessConfig::default();
    let a = preprocess_eeg(&x, 128.0, &cfg).unwrap();
    let b = preprocess_eeg(&(&x * 41.0), 128.0, &cfg).unwrap();
    assert_eq!(a.nrows(), t / 2);
    for (u, v) in a.iter().zip(b.iter()) {
        assert!((u - v).abs() <= 1e-9);
    }
    assert!(a.mean().abs() <= 1e-10);
}

// ── gammatone ─────────────────────────────────────────────────────

#[test]
fn erb_bank_has_23_bands_in_range() {
    let bank = GammatoneBank::erb_spaced(8000.0).unwrap();
    assert_eq!(bank.n_bands(), 23);
    assert!((bank.center_frequencies[0] - 150.0).abs() < 1e-9);
    assert!(*bank.center_frequencies.last().unwrap() <= 4000.0);
    assert!(bank.center_frequencies.windows(2).all(|w| w[1] > w[0]));
    assert!((erb(1000.0) - 24.7 * 5.37).abs() < 1e-12);
    assert!(matches!(GammatoneBank::erb_spaced(6000.0), Err(AadError::Config(_))));
}

#[test]
fn gammatone_band_has_unit_gain_at_center() {
    let bank = GammatoneBank::erb_spaced(16000.0).unwrap();
    let band = 10;
    let fc = bank.center_frequencies[band];
    let x = sine(fc, 16000.0, 16000, 0.0);
    let y = bank.filter_band(&x, band);
    let (amp, _) = tone_fit(&y[8000..], fc, 16000.0);
    assert!((amp - 1.0).abs() < 0.01, "amp {amp}");
    // an octave away the response is well down
    let far = bank.filter_band(&sine(2.0 * fc, 16000.0, 16000, 0.0), band);
    let (amp_far, _) = tone_fit(&far[8000..], 2.0 * fc, 16000.0);
    assert!(amp_far < 0.1, "{amp_far}");
}

#[test]
fn envelope_of_silence_is_zero_and_nonnegative_otherwise() {
    let bank = GammatoneBank::erb_spaced(8000.0).unwrap();
    let env = gammatone_envelope(&vec![0.0; 4000], &bank).unwrap();
    assert!(env.iter().all(|&v| v == 0.0));
    let env = gammatone_envelope(&noise(9, 8000), &bank).unwrap();
    assert!(env.iter().all(|&v| v >= 0.0));
}

#[test]
fn envelope_of_pure_tone_is_flat() {
    let bank = GammatoneBank::erb_spaced(8000.0).unwrap();
    let env = gammatone_envelope(&sine(1000.0, 8000.0, 16000, 0.0), &bank).unwrap();
    let steady = &env[4000..];
    let n = steady.len() as f64;
    let mean = steady.iter().sum::<f64>() / n;
    let sd = (steady.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(sd / mean <= 0.05, "cv {}", sd / mean);
}

#[test]
fn envelope_of_am_tone_peaks_at_modulator() {
    let fs = 8000.0;
    let n = 8000 * 8;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            (1.0 + 0.8 * (2.0 * PI * 4.0 * t).sin()) * (2.0 * PI * 1000.0 * t).sin()
        })
        .collect();
    let bank = GammatoneBank::erb_spaced(fs).unwrap();
    let env = gammatone_envelope(&x, &bank).unwrap();
    let env64 = resample_1d(&env, fs, 64.0).unwrap();
    let tail = &env64[64..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let centered: Vec<f64> = tail.iter().map(|v| v - mean).collect();
    let power = |hz: f64| tone_fit(&centered, hz, 64.0).0;
    let peak = (1..=60)
        .map(|k| k as f64 * 0.25)
        .max_by(|a, b| power(*a).total_cmp(&power(*b)))
        .unwrap();
    assert_eq!(peak, 4.0);
}
