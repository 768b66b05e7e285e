use awe_qbe::features::{fbank, pad_or_clip, read_wav, write_wav, FbankConfig, FeatureSequence, Waveform};
use proptest::prelude::*;

const SR: u32 = 16_000;

fn tone(freq: f64, n: usize, amp: f64) -> Waveform {
    let s = (0..n)
        .map(|i| (amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SR as f64).sin()) as f32)
        .collect();
    Waveform::new(s, SR).unwrap()
}

fn mean_frame(f: &FeatureSequence) -> Vec<f64> {
    let mut m = vec![0.0; f.dim()];
    for row in f.frames() {
        for (a, &v) in m.iter_mut().zip(row) {
            *a += v as f64 / f.num_frames() as f64;
        }
    }
    m
}

/// Filters whose triangle covers at least two FFT bins can resolve a tone
/// at their center; the lowest filters are narrower than one bin.
fn resolvable(cfg: &FbankConfig) -> Vec<usize> {
    cfg.mel_filterbank(SR)
        .iter()
        .enumerate()
        .filter(|(_, f)| f.iter().filter(|&&w| w > 0.0).count() >= 2)
        .map(|(m, _)| m)
        .collect()
}

#[test]
fn tone_at_filter_center_peaks_in_that_filter() {
    let cfg = FbankConfig::default();
    let centers = cfg.mel_centers(SR);
    let ok = resolvable(&cfg);
    assert!(ok.len() > 40);
    for m in ok {
        let f = fbank(&tone(centers[m], 4000, 0.5), &cfg).unwrap();
        let mean = mean_frame(&f);
        let arg = (0..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
        assert_eq!(arg, m, "center {} Hz", centers[m]);
    }
}

#[test]
fn scaling_shifts_log_energies() {
    let cfg = FbankConfig::default();
    let base: Vec<f32> = (0..3200)
        .map(|i| ((i * 7919 % 1000) as f32 / 1000.0 - 0.5) * 0.4)
        .collect();
    let a = fbank(&Waveform::new(base.clone(), SR).unwrap(), &cfg).unwrap();
    for c in [0.25f32, 2.0] {
        let b = fbank(&Waveform::new(base.iter().map(|v| v * c).collect(), SR).unwrap(), &cfg).unwrap();
        let shift = 2.0 * (c as f64).ln();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!(*x as f64 > cfg.log_floor.ln() + 1.0);
            assert!(((*y - *x) as f64 - shift).abs() < 1e-4, "{x} {y}");
        }
    }
}

#[test]
fn wav_round_trip_through_fbank() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("silence.wav");
    write_wav(&p, &Waveform::new(vec![0.0; 16_000], SR).unwrap()).unwrap();
    let w = read_wav(&p).unwrap();
    assert_eq!(w.samples.len(), 16_000);
    assert!(w.samples.iter().all(|&s| s == 0.0));
    let f = fbank(&w, &FbankConfig::default()).unwrap();
    assert_eq!((f.num_frames(), f.dim()), (98, 64));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trailing_samples_below_hop_change_nothing(frames in 1usize..6, extra in 0usize..160, seed in 0u32..1000) {
        let cfg = FbankConfig::default();
        let n = 400 + (frames - 1) * 160;
        let s: Vec<f32> = (0..n + extra).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) % 2000) as f32 / 2000.0 - 0.5).collect();
        let a = fbank(&Waveform::new(s[..n].to_vec(), SR).unwrap(), &cfg).unwrap();
        let b = fbank(&Waveform::new(s, SR).unwrap(), &cfg).unwrap();
        prop_assert_eq!(a.num_frames(), frames);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fbank_is_finite(n in 400usize..2000, amp in 0.0f32..1.0) {
        let s: Vec<f32> = (0..n).map(|i| amp * ((i as f32) * 0.37).sin()).collect();
        let f = fbank(&Waveform::new(s, SR).unwrap(), &FbankConfig::default()).unwrap();
        prop_assert!(f.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pad_or_clip_is_idempotent(t in 1usize..30, target in 1usize..30) {
        let rows: Vec<Vec<f32>> = (0..t).map(|r| vec![r as f32, 1.0 + r as f32]).collect();
        let x = FeatureSequence::from_rows(&rows).unwrap();
        let once = pad_or_clip(&x, target).unwrap();
        prop_assert_eq!(once.num_frames(), target);
        prop_assert_eq!(pad_or_clip(&once, target).unwrap(), once);
    }
}
