use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{sample_truth, synthesize_volume, NoiseSpec, ParamRanges, THzVolume};
use crate::model::PixelParams;

fn tiny_arch() -> Architecture {
    Architecture {
        n_z: 4,
        branch_width: 2,
        trunk_widths: vec![3, 2],
        leaky_slope: 0.01,
        bn_momentum: 0.1,
        bn_eps: 1e-5,
        align: false,
    }
}

/// Weights defined by closed-form expressions shared with the numpy reference.
fn formula_weights() -> EncoderWeights<f64> {
    let mut w =
        EncoderWeights::<f64>::init(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    for (t, tensor) in w.learnable_mut().into_iter().enumerate() {
        for (k, v) in tensor.iter_mut().enumerate() {
            *v = 0.5 * (1.3 * t as f64 + 0.7 * k as f64 + 0.1).sin();
        }
    }
    let n_stats = 2 * (2 + w.trunk.len());
    for (s, tensor) in w.buffers_mut().into_iter().take(n_stats).enumerate() {
        let var = s % 2 == 1;
        for (k, v) in tensor.iter_mut().enumerate() {
            let a = 0.9 * s as f64 + 0.3 * k as f64;
            *v = if var {
                0.5 + 0.25 * (1.0 + a.sin())
            } else {
                0.1 * a.cos()
            };
        }
    }
    w
}

fn formula_signals(n: usize, n_z: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|p| {
            (0..n_z)
                .flat_map(|j| {
                    let (p, j) = (p as f64, j as f64);
                    [(0.5 * p + 0.8 * j).cos(), 0.7 * (0.3 * p - 0.6 * j).sin()]
                })
                .collect()
        })
        .collect()
}

fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|s| s.as_slice()).collect()
}

#[test]
fn matches_reference_outputs() {
    let text = include_str!("../../tests/data/encoder_golden.csv");
    let w = formula_weights();
    let signals = formula_signals(3, 4);
    let batch = refs(&signals);
    let train = w.forward(&batch, Mode::Train).unwrap().0;
    let infer = w.forward(&batch, Mode::Infer).unwrap().0;
    let mut rows = 0;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let out = if f[0] == "train" { &train } else { &infer };
        let i: usize = f[1].parse().unwrap();
        for k in 0..4 {
            let expected: f64 = f[2 + k].parse().unwrap();
            assert!(
                (out[[i, k]] - expected).abs() < 1e-12,
                "{line}: {}",
                out[[i, k]]
            );
        }
        rows += 1;
    }
    assert_eq!(rows, 6);
}

#[test]
fn zero_weights_give_zero_amplitude() {
    let w = EncoderWeights::<f32>::init(Architecture::new(91), &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap()
        .zeros_like();
    let signals = formula_signals(5, 91);
    for mode in [Mode::Train, Mode::Infer] {
        let out = w.forward(&refs(&signals), mode).unwrap().0;
        assert!(out.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn identical_pixels_give_identical_outputs() {
    let w = EncoderWeights::<f32>::init(Architecture::new(91), &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap();
    let s = formula_signals(4, 91).swap_remove(3);
    let batch = vec![s.as_slice(); 6];
    let out = w.forward(&batch, Mode::Infer).unwrap().0;
    for i in 1..6 {
        assert_eq!(out.row(0), out.row(i));
    }
}

#[test]
fn amplitude_output_is_nonnegative_and_sign_symmetric() {
    let mut w =
        EncoderWeights::<f64>::init(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let signals = formula_signals(8, 4);
    let a = w.forward(&refs(&signals), Mode::Train).unwrap().0;
    w.head.w.column_mut(0).mapv_inplace(|v| -v);
    w.head.b[0] = -w.head.b[0];
    let b = w.forward(&refs(&signals), Mode::Train).unwrap().0;
    assert!(a.column(0).iter().all(|&v| v >= 0.0));
    assert_eq!(a, b);
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = AcquisitionConfig::uniform(4, 2.0).unwrap();
    let mut w =
        EncoderWeights::<f64>::init(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    // keep the decoded pulse centered in the short window
    w.head.b[1] = 0.4;
    w.head.b[2] = 1.5;
    let signals = formula_signals(5, 4);
    let batch = refs(&signals);
    let (_, grads, _) = ae_loss_and_grad(&w, &batch, &cfg).unwrap();
    let loss_at = |w: &EncoderWeights<f64>| {
        let out = w.forward(&batch, Mode::Train).unwrap().0;
        decoder_loss(&out, &batch, &cfg)
    };
    let analytic: Vec<Vec<f64>> = grads.learnable().iter().map(|t| t.to_vec()).collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (t, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let mut wp = w.clone();
            wp.learnable_mut()[t][k] += h;
            let mut wm = w.clone();
            wm.learnable_mut()[t][k] -= h;
            let fd = (loss_at(&wp) - loss_at(&wm)) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    assert!(worst < 1e-6, "worst relative gradient error {worst:e}");
}

#[test]
fn f32_agrees_with_f64() {
    let w64 = formula_weights();
    let w32: EncoderWeights<f32> = w64.cast();
    let signals = formula_signals(7, 4);
    for mode in [Mode::Train, Mode::Infer] {
        let a = w64.forward(&refs(&signals), mode).unwrap().0;
        let b = w32.forward(&refs(&signals), mode).unwrap().0;
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - *y as f64).abs() < 1e-4);
        }
    }
}

#[test]
fn adam_zero_gradient_is_a_no_op_and_first_step_has_size_lr() {
    let w0 = EncoderWeights::<f64>::init(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let mut w = w0.clone();
    let zero = w.zeros_like();
    let mut state = AdamState::new(&w, 0.9, 0.999, 1e-8);
    adam_step(&mut w, &zero, &mut state, 0.01);
    assert_eq!(w, w0);

    let mut grads = w.zeros_like();
    grads.head.b[2] = 3.0;
    grads.head.b[3] = -0.02;
    let mut state = AdamState::new(&w, 0.9, 0.999, 1e-8);
    adam_step(&mut w, &grads, &mut state, 0.01);
    assert!((w.head.b[2] - (w0.head.b[2] - 0.01)).abs() < 1e-9);
    assert!((w.head.b[3] - (w0.head.b[3] + 0.01)).abs() < 1e-8);
    assert_eq!(w.head.b[0], w0.head.b[0]);
}

#[test]
fn learning_rate_schedule() {
    let tc = TrainConfig::default();
    assert_eq!(learning_rate(&tc, 0), 0.005);
    assert_eq!(learning_rate(&tc, 19), 0.005);
    assert!((learning_rate(&tc, 40) - 0.0049005).abs() < 1e-15);
}

#[test]
fn running_stats_use_unbiased_variance() {
    let mut w =
        EncoderWeights::<f64>::init(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let signals = formula_signals(4, 4);
    let (_, _, stats) = w.forward(&refs(&signals), Mode::Train).unwrap();
    let (mean, var) = stats.stats[0].clone();
    w.update_running_stats(&stats);
    for k in 0..2 {
        assert!((w.branch_re.bn.running_mean[k] - 0.1 * mean[k]).abs() < 1e-15);
        assert!((w.branch_re.bn.running_var[k] - (0.9 + 0.1 * var[k] * 4.0 / 3.0)).abs() < 1e-15);
    }
}

fn small_volume(nx: usize, ny: usize, seed: u64) -> THzVolume {
    let cfg = AcquisitionConfig::default();
    let truth = sample_truth(seed, &ParamRanges::synthetic_default(), nx, ny);
    synthesize_volume(&truth, &cfg, &NoiseSpec { sigma: 0.05, seed }).unwrap()
}

#[test]
fn inference_is_independent_of_batch_size_and_order() {
    let v = small_volume(8, 8, 7);
    let w = EncoderWeights::<f32>::init(Architecture::new(91), &mut ChaCha8Rng::seed_from_u64(7))
        .unwrap();
    let a = train::infer_volume_with_batch(&w, &v, 1).unwrap().map;
    let b = train::infer_volume_with_batch(&w, &v, 4096).unwrap().map;
    let c = train::infer_volume_with_batch(&w, &v, 5).unwrap().map;
    assert_eq!(a.values(), b.values());
    assert_eq!(a.values(), c.values());

    let mut order: Vec<usize> = (0..v.n_pixels()).rev().collect();
    order.rotate_left(17);
    let batch: Vec<&[f64]> = order.iter().map(|&i| v.pixel(i)).collect();
    let theta = w.encode(&batch, v.cfg(), Mode::Infer).unwrap().theta;
    for (row, &i) in order.iter().enumerate() {
        let p = encoder_outputs_to_params([0, 1, 2, 3].map(|k| theta[[row, k]]), v.cfg());
        assert_eq!(p, a.get(i));
    }
}

#[test]
fn outputs_are_canonicalized() {
    let cfg = AcquisitionConfig::default();
    let p = encoder_outputs_to_params([2.0, -0.3, 200.0, 4.0], &cfg);
    assert_eq!(p.width, 0.3);
    assert_eq!(p.depth, 90.0);
    assert!((p.phase - (4.0 - 2.0 * std::f64::consts::PI)).abs() < 1e-15);
    let raw = [2.0, -0.3, 40.0, 0.5];
    let canon = encoder_outputs_to_params(raw, &cfg);
    let g = model::forward(&PixelParams::new(1.0, 0.25, 42.0, 0.1).unwrap(), &cfg);
    assert_eq!(
        model::loss_raw(&raw, &g, &cfg),
        model::loss_raw(&canon.to_array(), &g, &cfg)
    );
}

#[test]
fn width_mismatch_is_reported() {
    let w = EncoderWeights::<f32>::init(Architecture::new(91), &mut ChaCha8Rng::seed_from_u64(8))
        .unwrap();
    let short = vec![0.0; 2 * 90];
    let err = w.forward(&[short.as_slice()], Mode::Infer).unwrap_err();
    assert!(matches!(
        err,
        Error::WidthMismatch {
            expected: 91,
            found: 90
        }
    ));
}

#[test]
fn non_finite_input_names_a_layer() {
    let w = EncoderWeights::<f32>::init(Architecture::new(91), &mut ChaCha8Rng::seed_from_u64(9))
        .unwrap();
    let mut s = vec![0.1; 182];
    s[10] = f64::NAN;
    let err = w
        .forward(&[s.as_slice(), s.as_slice()], Mode::Infer)
        .unwrap_err();
    assert!(matches!(err, Error::NonFinite { layer: 0 }));
}

#[test]
fn weights_round_trip_bitwise() {
    let mut w =
        EncoderWeights::<f32>::init(Architecture::new(91), &mut ChaCha8Rng::seed_from_u64(10))
            .unwrap();
    w.trunk[1].bn.running_var[3] = 0.125;
    let bytes = write_weights(&w);
    let back = read_weights(&bytes).unwrap();
    assert_eq!(back, w);
    assert_eq!(write_weights(&back), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("enc.bin");
    save_weights(&path, &w).unwrap();
    assert_eq!(load_weights(&path).unwrap(), w);
}

#[test]
fn corrupt_weight_files_are_rejected() {
    let w = EncoderWeights::<f32>::init(tiny_arch(), &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let bytes = write_weights(&w);

    let mut tampered = bytes.clone();
    tampered[12] ^= 1;
    assert!(matches!(
        read_weights(&tampered),
        Err(Error::ArchitectureMismatch)
    ));

    // a changed width no longer matches the stored hash
    let mut widened = bytes.clone();
    widened[28] = 3;
    assert!(matches!(
        read_weights(&widened),
        Err(Error::ArchitectureMismatch)
    ));

    assert!(matches!(
        read_weights(&bytes[..bytes.len() - 1]),
        Err(Error::Truncated { .. })
    ));
    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(read_weights(&long), Err(Error::ShapeMismatch(_))));
    assert!(matches!(
        read_weights(b"NOTAFILE...."),
        Err(Error::BadMagic)
    ));
}

#[test]
fn training_reduces_loss_and_is_reproducible() {
    let v = small_volume(6, 6, 12);
    let tc = TrainConfig {
        epochs: 15,
        batch_size: 8,
        seed: 3,
        ..TrainConfig::default()
    };
    let (w1, h1) = train(&v, &tc).unwrap();
    let (w2, h2) = train(&v, &tc).unwrap();
    assert_eq!(w1, w2);
    assert_eq!(h1, h2);
    assert_eq!(h1.train_loss.len(), 15);
    assert!(h1.train_loss.last().unwrap() < &h1.train_loss[0]);
    assert!(h1.val_loss.iter().all(|v| v.is_finite()));
}

#[test]
fn history_csv_has_one_row_per_epoch() {
    let h = TrainHistory {
        train_loss: vec![3.0, 2.0],
        val_loss: vec![3.5, 2.5],
        lr: vec![0.005, 0.005],
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    write_history_csv(&path, &h).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text,
        "epoch,train_loss,val_loss,lr\n0,3,3.5,0.005\n1,2,2.5,0.005\n"
    );
}

#[test]
fn head_rows_match_array_layout() {
    // `Dense::w` is `in × out`, so the head maps trunk features to four outputs
    let w = EncoderWeights::<f32>::init(Architecture::new(91), &mut ChaCha8Rng::seed_from_u64(13))
        .unwrap();
    assert_eq!(w.head.w.dim(), (64, 4));
    assert_eq!(w.branch_re.dense.w.dim(), (91, 64));
    let n: usize = w.learnable().iter().map(|t| t.len()).sum();
    assert_eq!(n, w.arch.n_learnable());
    let _: Array2<f32> = w.trunk[0].dense.w.clone();
}

#[test]
fn alignment_removes_shift_phase_and_scale() {
    let cfg = AcquisitionConfig::default();
    let a = model::forward(&PixelParams::new(1.0, 0.3, 40.2, 0.4).unwrap(), &cfg);
    let b = model::forward(&PixelParams::new(3.5, 0.3, 52.2, -2.0).unwrap(), &cfg);
    let (ha, al_a) = Alignment::of(&a, &cfg);
    let (hb, al_b) = Alignment::of(&b, &cfg);
    assert_eq!((ha[90], ha[91]), (1.0, 0.0));
    // profiles agree where neither needed zero padding
    for j in 12..80 {
        assert!((ha[j] - hb[j]).abs() < 1e-12, "{j}");
    }
    assert_eq!(al_a.depth, 40.0);
    assert_eq!(al_b.depth, 52.0);

    // the sampled peak gives the exact phase and a residual depth of 0.2
    let p = al_a.to_params([1.0 / model::sinc(0.3 * 0.2), 0.3, 0.2, 0.0]);
    assert!((p[0] - 1.0).abs() < 1e-12);
    assert!((p[2] - 40.2).abs() < 1e-12);
    assert!((model::wrap_phase(p[3]) - 0.4).abs() < 1e-12);
}

#[test]
fn zero_profile_aligns_to_identity() {
    let cfg = AcquisitionConfig::default();
    let (h, al) = Alignment::of(&vec![0.0; 182], &cfg);
    assert!(h.iter().all(|&v| v == 0.0));
    assert_eq!((al.scale, al.depth, al.phase), (1.0, 45.0, 0.0));
}

#[test]
fn aligned_gradient_matches_finite_differences() {
    let cfg = AcquisitionConfig::uniform(9, 2.0).unwrap();
    let arch = Architecture {
        n_z: 9,
        align: true,
        ..tiny_arch()
    };
    let mut w = EncoderWeights::<f64>::init(arch, &mut ChaCha8Rng::seed_from_u64(14)).unwrap();
    w.out_offset[0] = 1.0;
    w.out_offset[1] = 0.4;
    w.out_scale.fill(0.3);
    let signals: Vec<Vec<f64>> = (0..6)
        .map(|i| {
            let p = PixelParams::new(
                0.5 + 0.3 * i as f64,
                0.35,
                3.0 + 0.45 * i as f64,
                0.5 * i as f64 - 1.0,
            )
            .unwrap();
            let mut g = model::forward(&p, &cfg).into_inner();
            g[3] += 0.05 * i as f64;
            g
        })
        .collect();
    let batch = refs(&signals);
    let (_, grads, _) = ae_loss_and_grad(&w, &batch, &cfg).unwrap();
    let loss_at = |w: &EncoderWeights<f64>| {
        let enc = w.encode(&batch, &cfg, Mode::Train).unwrap();
        decoder_loss(&enc.theta, &batch, &cfg)
    };
    let analytic: Vec<Vec<f64>> = grads.learnable().iter().map(|t| t.to_vec()).collect();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (t, g) in analytic.iter().enumerate() {
        for k in 0..g.len() {
            let mut wp = w.clone();
            wp.learnable_mut()[t][k] += h;
            let mut wm = w.clone();
            wm.learnable_mut()[t][k] -= h;
            let fd = (loss_at(&wp) - loss_at(&wm)) / (2.0 * h);
            worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
    }
    assert!(worst < 1e-6, "worst relative gradient error {worst:e}");
}

#[test]
fn trained_encoder_starts_at_the_sequential_estimate() {
    let v = small_volume(5, 5, 15);
    let tc = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (w, h) = train(&v, &tc).unwrap();
    assert!(h.train_loss.is_empty());
    let map = infer_volume(&w, &v).unwrap().map;
    for i in 0..v.n_pixels() {
        let est = crate::tra::init_heuristic(v.pixel(i), v.cfg());
        let got = map.get(i);
        assert!((got.amplitude - est.amplitude).abs() < 1e-5 * est.amplitude.max(1.0));
        assert!((got.depth - est.depth).abs() < 1e-5);
    }
}
