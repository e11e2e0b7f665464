use avns_core::data::{fit_noise_length, mix_at_snr, normalize_rms};
use avns_core::fusion::upsample_indices;
use avns_core::losses::{bce_multilabel, bce_multilabel_grad, si_sdr};
use avns_core::nn::MultiHeadAttention;
use avns_core::rng::stream;
use avns_core::signal::{Stft, StftConfig, Waveform};
use avns_core::train::batch_indices;
use proptest::prelude::*;
use rand::Rng;

fn signal(len: usize, seed: u64) -> Vec<f64> {
    let mut r = stream(seed, "prop-signal");
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stft_round_trip(len in 1usize..4000, seed in any::<u64>(), hop_div in prop::sample::select(vec![2usize, 4])) {
        let stft = Stft::new(StftConfig { hop: 320 / hop_div, ..StftConfig::default() }).unwrap();
        let w = Waveform::new(signal(len, seed)).unwrap();
        let back = stft.istft(&stft.stft(&w).unwrap(), len).unwrap();
        prop_assert_eq!(back.len(), len);
        let err = w.samples().iter().zip(back.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9 * w.peak().max(1e-300), "err {}", err);
    }

    #[test]
    fn si_sdr_ignores_estimate_scale(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let r = signal(512, seed);
        let e: Vec<f64> = r.iter().zip(signal(512, seed ^ 1)).map(|(a, b)| a + 0.3 * b).collect();
        let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
        let d = si_sdr(&r, &e, 1e-8).unwrap() - si_sdr(&r, &scaled, 1e-8).unwrap();
        prop_assert!(d.abs() <= 1e-6, "drift {}", d);
    }

    #[test]
    fn upsample_map_is_floor_and_monotone(t_v in 1usize..200, t_a in 1usize..2000) {
        let idx = upsample_indices(t_v, t_a).unwrap();
        prop_assert_eq!(idx.len(), t_a);
        for (t, &i) in idx.iter().enumerate() {
            prop_assert_eq!(i, t * t_v / t_a);
            prop_assert!(i < t_v);
        }
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn mixing_hits_requested_snr(seed in any::<u64>(), snr in -30.0f64..30.0, len in 100usize..3000) {
        let clean = Waveform::new(signal(len, seed)).unwrap();
        let noise = Waveform::new(signal(len, seed.wrapping_add(7))).unwrap();
        let m = mix_at_snr(&clean, &noise, snr).unwrap();
        let e = |w: &Waveform| w.samples().iter().map(|v| v * v).sum::<f64>();
        let achieved = 10.0 * (e(&m.clean) / e(&m.noise)).log10();
        prop_assert!((achieved - snr).abs() < 0.01);
        for ((n, c), s) in m.noisy.samples().iter().zip(m.clean.samples()).zip(m.noise.samples()) {
            prop_assert!((n - c - s).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_rms_matches_target(seed in any::<u64>(), dbfs in -60.0f64..0.0) {
        let w = Waveform::new(signal(800, seed)).unwrap();
        let n = normalize_rms(&w, dbfs).unwrap();
        prop_assert!((20.0 * n.rms().log10() - dbfs).abs() < 1e-9);
    }

    #[test]
    fn fitted_noise_has_requested_length(n in 1usize..2000, len in 1usize..5000, seed in any::<u64>()) {
        let noise = Waveform::new(signal(n, seed)).unwrap();
        let out = fit_noise_length(&noise, len, &mut stream(seed, "fit")).unwrap();
        prop_assert_eq!(out.len(), len);
    }

    #[test]
    fn bce_gradient_matches_differences(seed in any::<u64>(), k in 1usize..8) {
        let mut r = stream(seed, "bce");
        let z: Vec<f64> = (0..k).map(|_| r.random_range(-6.0..6.0)).collect();
        let y: Vec<f64> = (0..k).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        prop_assert!(bce_multilabel(&z, &y).unwrap() >= 0.0);
        let g = bce_multilabel_grad(&z, &y).unwrap();
        for i in 0..k {
            let (mut a, mut b) = (z.clone(), z.clone());
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (bce_multilabel(&a, &y).unwrap() - bce_multilabel(&b, &y).unwrap()) / 2e-6;
            prop_assert!((fd - g[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_rows_are_distributions(seed in any::<u64>(), t_q in 1usize..12, t_kv in 1usize..12, heads in 1usize..4) {
        let mut r = stream(seed, "attn");
        let mut a = MultiHeadAttention::<f64>::new(5, 3, 4 * heads, heads).unwrap();
        for l in [&mut a.query, &mut a.key, &mut a.value, &mut a.out] {
            l.weight.value.iter_mut().chain(l.bias.value.iter_mut()).for_each(|v| *v = r.random_range(-2.0..2.0));
        }
        let q: Vec<f64> = (0..2 * t_q * 5).map(|_| r.random_range(-3.0..3.0)).collect();
        let kv: Vec<f64> = (0..2 * t_kv * 3).map(|_| r.random_range(-3.0..3.0)).collect();
        a.forward(&q, &kv, 2, t_q, t_kv).unwrap();
        for row in a.weights().chunks(t_kv) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }

    #[test]
    fn each_epoch_visits_every_example_once(n in 1usize..40, bs in 1usize..16, seed in any::<u64>(), epoch in 0u64..100) {
        let per_epoch = n.div_ceil(bs) as u64;
        let mut seen = Vec::new();
        for step in epoch * per_epoch..(epoch + 1) * per_epoch {
            let idx = batch_indices(n, bs, seed, step);
            prop_assert!(!idx.is_empty() && idx.len() <= bs);
            prop_assert_eq!(&idx, &batch_indices(n, bs, seed, step));
            seen.extend(idx);
        }
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }
}
