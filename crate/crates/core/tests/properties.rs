use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatial_pretrain::arch::ArchitectureSpec;
use spatial_pretrain::cost::{multiplications, reduction_bounds, LayerCostQuery, KERNEL_TABLE};
use spatial_pretrain::data::{format_g, parse_log, Checkpoint, Phase, RngState, TrainLogRecord, CSV_HEADER};
use spatial_pretrain::engine::{conv2d_forward, conv2d_forward_naive, init_uniform, ConvLayerParams};
use spatial_pretrain::network::{InitRule, Network};
use spatial_pretrain::resample::resample_maps;
use spatial_pretrain::schedule::TrainingSchedule;
use spatial_pretrain::surgery::*;
use spatial_pretrain::tensor::Tensor;

fn random(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// A random valid target: 1-3 conv layers, optional pooling, two FC layers.
fn arch_text() -> impl Strategy<Value = String> {
    let conv = (1usize..5, prop::sample::select(vec![1usize, 3, 5, 7]), 0usize..3, any::<bool>(), any::<bool>());
    (1usize..4, 14usize..40, prop::collection::vec(conv, 1..4), 2usize..12, 2usize..6).prop_map(
        |(c, side, convs, hidden, classes)| {
            let mut text = format!("name rnd\ninput {c} {side} {side}\n");
            let mut h = side;
            for (c_out, k, pad, relu, pool) in convs {
                let pad = pad.min(k / 2);
                if h + 2 * pad < k + 2 {
                    break;
                }
                text += &format!("conv {c_out} {k} 1 {pad}\n");
                h = h + 2 * pad - k + 1;
                if relu {
                    text += "relu\n";
                }
                if pool && h >= 6 {
                    text += "maxpool 2 2\n";
                    h = (h - 2) / 2 + 1;
                }
            }
            text + &format!("flatten\nfc {hidden}\nrelu\nfc {classes}\nsoftmax\n")
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn naive_count_equals_closed_form(c_in in 1usize..5, c_out in 1usize..5, k in 1usize..6, extra in 0usize..10, seed: u64) {
        let h = k + extra;
        let x = random(seed, &[1, c_in, h, h]);
        let params = ConvLayerParams::new(random(seed ^ 1, &[c_out, c_in, k, k]), Tensor::zeros(&[c_out]), 1, 0).unwrap();
        let (_, counted) = conv2d_forward_naive(&x, &params).unwrap();
        let formula = multiplications(&LayerCostQuery { c_in, c_out, k, h, s: 1.0 }).unwrap();
        prop_assert_eq!(counted as f64, formula);
    }

    #[test]
    fn fast_conv_matches_naive(c_in in 1usize..4, c_out in 1usize..4, k in 1usize..5, extra in 0usize..6, stride in 1usize..3, pad in 0usize..2, seed: u64) {
        let h = k + extra;
        let x = random(seed, &[2, c_in, h, h + 1]);
        let params = ConvLayerParams::new(random(seed ^ 1, &[c_out, c_in, k, k]), random(seed ^ 2, &[c_out]), stride, pad).unwrap();
        let fast = conv2d_forward(&x, &params).unwrap();
        let (naive, _) = conv2d_forward_naive(&x, &params).unwrap();
        prop_assert_eq!(fast.shape(), naive.shape());
        for (a, b) in fast.data().iter().zip(naive.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed: u64) {
        let params = ConvLayerParams::new(random(seed, &[3, 2, 3, 3]), Tensor::zeros(&[3]), 1, 1).unwrap();
        let (x1, x2) = (random(seed ^ 1, &[1, 2, 6, 6]), random(seed ^ 2, &[1, 2, 6, 6]));
        let mix = Tensor::new(x1.shape().to_vec(), x1.data().iter().zip(x2.data()).map(|(p, q)| a * p + b * q).collect()).unwrap();
        let lhs = conv2d_forward(&mix, &params).unwrap();
        let (y1, y2) = (conv2d_forward(&x1, &params).unwrap(), conv2d_forward(&x2, &params).unwrap());
        for ((l, p), q) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            prop_assert!((l - (a * p + b * q)).abs() < 1e-10);
        }
    }

    #[test]
    fn init_is_deterministic(seed: u64, d0 in 1usize..6, d1 in 1usize..6) {
        let a = init_uniform::<f32>(&[d0, d1], seed);
        let b = init_uniform::<f32>(&[d0, d1], seed);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scaled_cost_within_bounds(row in 1usize..KERNEL_TABLE.len(), c_in in 1usize..64, c_out in 1usize..64, extra in 0usize..500) {
        let (k, k_pre) = KERNEL_TABLE[row];
        let q = LayerCostQuery { c_in, c_out, k, h: (k + extra).min(512), s: k as f64 / k_pre as f64 };
        let m = multiplications(&q).unwrap();
        let (lo, hi) = reduction_bounds(&q).unwrap();
        prop_assert!(lo <= m * (1.0 + 1e-12) && m <= hi * (1.0 + 1e-12), "{} not in [{}, {}]", m, lo, hi);
    }

    #[test]
    fn resized_networks_run_under_target(text in arch_text(), seed: u64, preserve: bool) {
        let target = ArchitectureSpec::parse(&text).unwrap();
        let derived = derive_pretrain_architecture(&target);
        prop_assume!(derived.is_ok());
        let (pre, mut plan) = derived.unwrap();
        if preserve {
            plan.amplitude = Amplitude::Preserve;
        }
        let net = Network::<f32>::init_with(&pre, seed, InitRule::FanIn).unwrap();
        let ckpt = Checkpoint::fresh(net, seed, 0);
        let bytes = resize_checkpoint(&ckpt, &target, &plan).unwrap().to_bytes();
        let resized = Checkpoint::from_bytes(&bytes, "mem".as_ref()).unwrap();
        prop_assert_eq!(resized.network.arch(), &target);
        let x = Tensor::<f32>::filled(&[2, target.input.channels, target.input.height, target.input.width], 0.5);
        let logits = resized.network.logits(&x).unwrap();
        prop_assert_eq!(logits.shape(), &[2, target.classes().unwrap()]);
    }

    #[test]
    fn identity_plan_is_bitwise_identity(text in arch_text(), seed: u64) {
        let target = ArchitectureSpec::parse(&text).unwrap();
        let plan = ScalePlan::identity(&target).unwrap();
        let mut ckpt = Checkpoint::fresh(Network::<f32>::init(&target, seed).unwrap(), seed, 7);
        for (i, v) in ckpt.velocity.iter_mut().enumerate() {
            *v = Tensor::filled(v.shape(), i as f32 + 0.25);
        }
        let out = resize_checkpoint(&ckpt, &target, &plan).unwrap();
        prop_assert_eq!(out.to_bytes(), ckpt.to_bytes());
    }

    #[test]
    fn constant_kernel_scales_exactly(v in -10.0f64..10.0, k_pre in 1usize..6, up in 0usize..5) {
        let k = k_pre + up;
        let out = upscale_kernel(&Tensor::filled(&[k_pre, k_pre], v), k).unwrap();
        let s = k as f64 / k_pre as f64;
        for &x in out.data() {
            prop_assert_eq!(x, (s * s) * v);
        }
    }

    #[test]
    fn fc_interface_commutes_with_flatten(c in 1usize..4, h_pre in 1usize..5, w_pre in 1usize..5, dh in 0usize..4, dw in 0usize..4, seed: u64) {
        let (h, w) = (h_pre + dh, w_pre + dw);
        let maps = random(seed, &[c, h_pre, w_pre]);
        let spec = FcInterfaceSpec { c, h, w, h_pre, w_pre, n_out: 1 };
        let column = Tensor::new(vec![c * h_pre * w_pre, 1], maps.data().to_vec()).unwrap();
        let via_fc = upscale_fc_interface(&column, &spec).unwrap();
        let gain = (h as f64 / h_pre as f64) * (w as f64 / w_pre as f64);
        let via_maps = resample_maps(&maps, (h, w), gain).unwrap();
        prop_assert_eq!(via_fc.data(), via_maps.data());
    }

    #[test]
    fn checkpoint_round_trip(text in arch_text(), seed: u64, epoch in 0usize..100, words in 0u64..1000) {
        let target = ArchitectureSpec::parse(&text).unwrap();
        let net = Network::<f32>::init_with(&target, seed, InitRule::FanIn).unwrap();
        let mut ckpt = Checkpoint::fresh(net, seed, seed.rotate_left(7));
        let mut rng = ckpt.rng.restore();
        for _ in 0..words {
            rng.random::<u32>();
        }
        ckpt.rng = RngState::capture(&rng);
        ckpt.epoch = epoch;
        ckpt.wall_s = epoch as f64 * 1.5;
        for (i, v) in ckpt.velocity.iter_mut().enumerate() {
            *v = Tensor::from_fn(v.shape(), |j| (i * 31 + j) as f32 * 1e-3 - 0.5);
        }
        let back = Checkpoint::from_bytes(&ckpt.to_bytes(), "mem".as_ref()).unwrap();
        prop_assert_eq!(back.to_bytes(), ckpt.to_bytes());
        prop_assert_eq!(back, ckpt);
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((0usize..500, 0usize..4, 0.0f64..1e6, 0.0f64..100.0, 0.0f64..100.0, 1e-6f64..1.0, 0.0f64..1e-2), 0..20)) {
        let phases = [Phase::Pretrain, Phase::Target, Phase::ResizedContinue, Phase::Extra];
        // Values already at the written precision survive exactly.
        let g = |v: f64| format_g(v).parse::<f64>().unwrap();
        let records: Vec<TrainLogRecord> = rows
            .into_iter()
            .map(|(epoch, p, wall, tr, te, lr, wd)| TrainLogRecord {
                epoch,
                phase: phases[p],
                wall_s: g(wall),
                train_acc: g(tr),
                test_acc: g(te),
                lr: g(lr),
                wd: g(wd),
            })
            .collect();
        let mut text = format!("{CSV_HEADER}\n");
        for r in &records {
            text += &r.to_csv_line();
            text.push('\n');
        }
        prop_assert_eq!(parse_log(&text).unwrap(), records);
    }

    #[test]
    fn lr_is_nonincreasing(steps in prop::collection::vec((1usize..10, 0.1f64..0.9), 0..6), total in 1usize..60) {
        let mut milestones = vec![(1usize, 0.1f64)];
        for (gap, factor) in steps {
            let &(e, r) = milestones.last().unwrap();
            milestones.push((e + gap, r * factor));
        }
        let s = TrainingSchedule { milestones, total_epochs: total, ..TrainingSchedule::overfeat() };
        s.validate().unwrap();
        let rates: Vec<f64> = (1..=total).map(|e| s.lr_at(e).unwrap().0).collect();
        prop_assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    }
}
