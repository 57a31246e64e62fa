use asd_core::autodiff::{
    conv2d, maxpool2x2, mse_loss, softmax, softmax_cce_loss, upsample2x, Mode, Tensor,
};
use asd_core::dsp::{
    build_gammatone_bank, frame_count, Analyzer, FrontendConfig, Waveform, SAMPLE_RATE,
};
use asd_core::model::{build, AeConfig, LossWeights, ModelFamily};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tensor(shape: &[usize], seed: u64) -> Tensor {
    Tensor::randn(shape, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Zero-padded 3x3 convolution written as seven nested loops.
fn reference_conv(x: &Tensor, k: &Tensor, b: &Tensor) -> Vec<f64> {
    let (n, ci, h, w) = x.dims4().unwrap();
    let co = k.shape()[0];
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; n * co * h * w];
    for s in 0..n {
        for o in 0..co {
            for y in 0..h {
                for z in 0..w {
                    let mut acc = b.data()[o];
                    for c in 0..ci {
                        for dy in 0..3 {
                            for dz in 0..3 {
                                let (yy, zz) = (y as isize + dy - 1, z as isize + dz - 1);
                                if yy < 0 || zz < 0 || yy >= h as isize || zz >= w as isize {
                                    continue;
                                }
                                acc += xd[((s * ci + c) * h + yy as usize) * w + zz as usize]
                                    * kd[((o * ci + c) * 3 + dy as usize) * 3 + dz as usize];
                            }
                        }
                    }
                    out[((s * co + o) * h + y) * w + z] = acc;
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_count_matches_enumeration(n in 640usize..1_000_000, w in 1usize..2000, hop in 1usize..1000) {
        prop_assume!(w <= n);
        let mut starts = 0;
        let mut s = 0;
        while s + w <= n {
            starts += 1;
            s += hop;
        }
        prop_assert_eq!(frame_count(n, w, hop).unwrap(), starts);
    }

    #[test]
    fn band_energies_are_nonnegative(seed in 0u64..10_000, len in 1024usize..4000, scale in 0.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = Tensor::randn(&[len], &mut rng).data().iter().map(|v| (v * scale).clamp(-1.0, 1.0)).collect();
        let wave = Waveform::new(x, SAMPLE_RATE).unwrap();
        for cfg in [FrontendConfig::gammatone(), FrontendConfig::mel()] {
            let (e, _) = Analyzer::new(&cfg, SAMPLE_RATE).unwrap().band_energies(&wave).unwrap();
            prop_assert!(e.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn gammatone_centers_increase_within_range(n in 2usize..128, lo in 20.0f64..500.0, span in 500.0f64..7000.0) {
        let bank = build_gammatone_bank(n, lo, lo + span, 1024, SAMPLE_RATE as f64).unwrap();
        let c = &bank.center_freqs;
        prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(c[0] >= lo - 1e-9 && *c.last().unwrap() <= lo + span + 1e-9);
    }

    #[test]
    fn conv_matches_reference(seed in 0u64..10_000, n in 1usize..3, ci in 1usize..5, co in 1usize..5, h in 1usize..17, w in 1usize..17) {
        let x = tensor(&[n, ci, h, w], seed);
        let k = tensor(&[co, ci, 3, 3], seed + 1);
        let b = tensor(&[co], seed + 2);
        let fast = conv2d(&x, &k, &b).unwrap();
        for (a, e) in fast.data().iter().zip(reference_conv(&x, &k, &b)) {
            prop_assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn pool_upsample_identities(seed in 0u64..10_000, c in 1usize..4, h in 1usize..9, w in 1usize..9) {
        let x = tensor(&[2, c, h, w], seed);
        let up = upsample2x(&x).unwrap();
        let pooled = maxpool2x2(&up).unwrap().0;
        prop_assert_eq!(pooled.data(), x.data());
        let back = upsample2x(&pooled).unwrap();
        prop_assert_eq!(back.data(), up.data());
    }

    #[test]
    fn softmax_and_cce_laws(seed in 0u64..10_000, b in 1usize..6, k in 2usize..8, scale in 0.1f64..50.0) {
        let mut logits = tensor(&[b, k], seed);
        logits.data_mut().iter_mut().for_each(|v| *v *= scale);
        let s = softmax(&logits).unwrap();
        for row in s.data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let labels: Vec<usize> = (0..b).map(|i| (i * 7 + seed as usize) % k).collect();
        prop_assert!(softmax_cce_loss(&logits, &labels).unwrap().0 >= 0.0);
    }

    #[test]
    fn ops_are_deterministic(seed in 0u64..10_000) {
        let x = tensor(&[2, 3, 6, 6], seed);
        let k = tensor(&[4, 3, 3, 3], seed + 9);
        let b = tensor(&[4], seed + 3);
        prop_assert_eq!(conv2d(&x, &k, &b).unwrap(), conv2d(&x, &k, &b).unwrap());
        let (l1, g1) = mse_loss(&x, &tensor(&[2, 3, 6, 6], seed + 4)).unwrap();
        let (l2, g2) = mse_loss(&x, &tensor(&[2, 3, 6, 6], seed + 4)).unwrap();
        prop_assert_eq!(l1.to_bits(), l2.to_bits());
        prop_assert_eq!(g1, g2);
    }

    #[test]
    fn reconstruction_keeps_input_shape(
        seed in 0u64..1000,
        hb in 1usize..4,
        wb in 1usize..4,
        f in prop::collection::vec(1usize..5, 3),
        bottleneck in 1usize..6,
        family in prop::sample::select(vec![ModelFamily::Unsupervised, ModelFamily::SemiSupervised]),
    ) {
        let cfg = AeConfig {
            family,
            input_bins: 8 * hb,
            frames_per_segment: 8 * wb,
            hop_frames: 4,
            encoder_filters: f,
            bottleneck_dim: bottleneck,
            n_classes: (family == ModelFamily::SemiSupervised).then_some(3),
            loss_weights: if family == ModelFamily::SemiSupervised {
                LossWeights::new(0.5, 0.5).unwrap()
            } else {
                LossWeights::UNSUPERVISED
            },
            ..AeConfig::default()
        };
        let mut m = build(&cfg, seed).unwrap();
        let x = tensor(&[2, 1, cfg.input_bins, cfg.frames_per_segment], seed);
        let fwd = m.forward(&x, Mode::Train).unwrap();
        prop_assert_eq!(fwd.reconstruction.shape(), x.shape());
        let mut enc: Vec<usize> = cfg.encoder_filters.clone();
        enc.reverse();
        let dec: Vec<usize> = m
            .decoder
            .layers
            .iter()
            .filter_map(|l| match l {
                asd_core::autodiff::Layer::Conv2d(c) => Some(c.out_channels()),
                _ => None,
            })
            .take(6)
            .step_by(2)
            .collect();
        prop_assert_eq!(dec, enc);
    }
}
