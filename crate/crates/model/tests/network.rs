use ipdnet_autodiff::{check::gradient_check, Graph, Tensor};
use ipdnet_model::net::{decode_output, output_index};
use ipdnet_model::{IpdNet, Mode, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_fixed(mics: usize, mode: Mode) -> ModelConfig {
    ModelConfig {
        bins: 6,
        blocks: 1,
        ..ModelConfig::fixed(mics, 8, mode)
    }
}

fn small_variable(mode: Mode) -> ModelConfig {
    ModelConfig {
        bins: 6,
        blocks: 1,
        ..ModelConfig::variable(8, mode)
    }
}

fn random_input(shape: &[usize], seed: u64, scale: f64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

fn run<T: ipdnet_autodiff::Scalar>(net: &IpdNet<T>, x: Tensor<T>) -> Tensor<T> {
    let mut g = Graph::new();
    let v = g.constant(x);
    let y = net.forward(&mut g, v).unwrap();
    g.value(y).clone()
}

#[test]
fn fixed_output_shape_and_grouping() {
    let net = IpdNet::<f32>::new(small_fixed(2, Mode::Online), 1).unwrap();
    for (n, groups) in [(48, 4), (50, 5), (12, 1), (1, 1)] {
        let y = run(&net, random_input(&[1, n, 6, 4], 2, 1.0));
        assert_eq!(y.shape(), &[1, groups, 6, 4], "N = {n}");
    }
    let net = IpdNet::<f32>::new(small_fixed(4, Mode::Offline), 1).unwrap();
    let y = run(&net, random_input(&[3, 24, 6, 8], 2, 1.0));
    assert_eq!(y.shape(), &[3, 2, 6, 2 * 3 * 2]);
}

#[test]
fn outputs_lie_strictly_inside_unit_interval() {
    let net = IpdNet::<f32>::new(small_fixed(2, Mode::Offline), 4).unwrap();
    for scale in [1e-3, 1.0, 1e3] {
        let y = run(&net, random_input(&[1, 36, 6, 4], 5, scale));
        assert!(y.data().iter().all(|v| v.is_finite() && v.abs() <= 1.0));
        assert!(y.data().iter().any(|v| v.abs() > 0.0));
    }
}

#[test]
fn online_model_ignores_future_frames() {
    for config in [small_fixed(2, Mode::Online), small_variable(Mode::Online)] {
        let net = IpdNet::<f32>::new(config.clone(), 7).unwrap();
        let b = if config.variant == Variant::Fixed { 1 } else { 3 };
        let x = random_input(&[b, 60, 6, config.raw_width()], 8, 1.0);
        let mut late = x.clone();
        // Disturb every frame from 24 onwards: output groups 0 and 1 must not move.
        let per_frame = 6 * config.raw_width();
        for bi in 0..b {
            for t in 24..60 {
                for i in 0..per_frame {
                    late.data_mut()[(bi * 60 + t) * per_frame + i] += 5.0;
                }
            }
        }
        let (y0, y1) = (run(&net, x), run(&net, late));
        let per_group = 6 * config.out_channels();
        for bi in 0..b {
            for g in 0..5 {
                let s = (bi * 5 + g) * per_group;
                let same = y0.data()[s..s + per_group] == y1.data()[s..s + per_group];
                assert_eq!(same, g < 2, "batch {bi} group {g}");
            }
        }
    }
}

#[test]
fn offline_model_sees_future_frames() {
    let net = IpdNet::<f32>::new(small_fixed(2, Mode::Offline), 7).unwrap();
    let x = random_input(&[1, 36, 6, 4], 8, 1.0);
    let mut late = x.clone();
    let n = late.numel();
    late.data_mut()[n - 1] += 5.0;
    let (y0, y1) = (run(&net, x), run(&net, late));
    let per_group = 6 * 4;
    assert_ne!(y0.data()[..per_group], y1.data()[..per_group]);
}

#[test]
fn online_prefix_matches_full_run() {
    let net = IpdNet::<f32>::new(small_fixed(2, Mode::Online), 9).unwrap();
    let x = random_input(&[1, 48, 6, 4], 10, 1.0);
    let prefix = Tensor::new(&[1, 24, 6, 4], x.data()[..24 * 24].to_vec()).unwrap();
    let (full, part) = (run(&net, x), run(&net, prefix));
    assert_eq!(part.data(), &full.data()[..part.numel()]);
}

#[test]
fn variable_model_is_pair_permutation_equivariant() {
    let config = ModelConfig {
        hidden: 8,
        ..small_variable(Mode::Offline)
    };
    let net = IpdNet::<f32>::new(config, 11).unwrap();
    // Seven pairs: an eight-microphone array.
    let pairs = 7;
    let x = random_input(&[pairs, 24, 6, 4], 12, 1.0);
    let per = x.numel() / pairs;
    let order = [3, 0, 6, 2, 5, 1, 4];
    let mut shuffled = Vec::with_capacity(x.numel());
    for &p in &order {
        shuffled.extend_from_slice(&x.data()[p * per..(p + 1) * per]);
    }
    let y = run(&net, x);
    let ys = run(&net, Tensor::new(&[pairs, 24, 6, 4], shuffled).unwrap());
    let out_per = y.numel() / pairs;
    for (i, &p) in order.iter().enumerate() {
        let a = &y.data()[p * out_per..(p + 1) * out_per];
        let b = &ys.data()[i * out_per..(i + 1) * out_per];
        assert_eq!(a, b, "pair {p}");
    }
}

#[test]
fn single_pair_communication_is_identity() {
    let on = IpdNet::<f32>::new(small_variable(Mode::Online), 13).unwrap();
    let mut off = on.clone();
    off.config.communication = false;
    let x = random_input(&[1, 24, 6, 4], 14, 1.0);
    assert_eq!(run(&on, x.clone()).data(), run(&off, x).data());
}

#[test]
fn communication_changes_multi_pair_output() {
    let on = IpdNet::<f32>::new(small_variable(Mode::Online), 13).unwrap();
    let mut off = on.clone();
    off.config.communication = false;
    let x = random_input(&[3, 24, 6, 4], 14, 1.0);
    assert_ne!(run(&on, x.clone()).data(), run(&off, x).data());
}

#[test]
fn variable_model_handles_any_microphone_count() {
    let net = IpdNet::<f32>::new(small_variable(Mode::Online), 15).unwrap();
    for pairs in [1, 2, 5, 7] {
        let y = run(&net, random_input(&[pairs, 30, 6, 4], 16, 1.0));
        assert_eq!(y.shape(), &[pairs, 3, 6, 4]);
    }
}

#[test]
fn fixed_model_rejects_wrong_channel_count() {
    let net = IpdNet::<f32>::new(small_fixed(4, Mode::Online), 1).unwrap();
    let mut g = Graph::new();
    let x = g.constant(random_input(&[1, 12, 6, 6], 2, 1.0));
    assert!(matches!(
        net.forward(&mut g, x),
        Err(ipdnet_model::ModelError::Channels { got: 3, want: 4 })
    ));
}

fn expected_weights(c: &ModelConfig) -> usize {
    let d = c.hidden;
    let raw = c.raw_width();
    let lstm = |input: usize, h: usize| input * 4 * h + h * 4 * h + 4 * h;
    let proj_in = if c.variant == Variant::Fixed { d } else { 2 * d };
    let proj = proj_in * d + d;
    let mut total = 0;
    let mut first = true;
    for _ in 0..c.blocks {
        if c.fullband {
            let input = if first { raw } else { d + raw };
            first = false;
            total += 2 * lstm(input, d / 2) + proj;
        }
        let input = if first { raw } else { d + raw };
        first = false;
        total += match c.mode {
            Mode::Online => lstm(input, d),
            Mode::Offline => 2 * lstm(input, d / 2),
        } + proj;
    }
    let k = c.kernel[0] * c.kernel[1];
    let widths = [d, d / 2, d / 4, c.out_channels()];
    total + (0..3).map(|l| k * widths[l] * widths[l + 1] + widths[l + 1]).sum::<usize>()
}

#[test]
fn parameter_counts_are_stable() {
    let offline = small_fixed(2, Mode::Offline);
    assert_eq!(IpdNet::<f32>::new(offline.clone(), 0).unwrap().num_weights(), 1418);
    for c in [
        offline,
        small_fixed(2, Mode::Online),
        ModelConfig::fixed(6, 128, Mode::Online),
        ModelConfig::fixed(6, 128, Mode::Offline),
        ModelConfig::variable(128, Mode::Online),
        ModelConfig {
            fullband: false,
            ..ModelConfig::fixed(2, 32, Mode::Online)
        },
    ] {
        let net = IpdNet::<f32>::new(c.clone(), 0).unwrap();
        assert_eq!(net.num_weights(), expected_weights(&c), "{c:?}");
    }
}

#[test]
fn online_and_offline_differ_only_in_narrowband_direction() {
    let on = IpdNet::<f32>::new(small_fixed(2, Mode::Online), 0).unwrap();
    let off = IpdNet::<f32>::new(small_fixed(2, Mode::Offline), 0).unwrap();
    let names = |n: &IpdNet<f32>| n.params.iter().map(|p| p.name.clone()).collect::<Vec<_>>();
    let (a, b) = (names(&on), names(&off));
    assert!(!a.iter().any(|n| n.contains("narrowband/bwd")));
    assert!(b.iter().any(|n| n.contains("narrowband/bwd")));
    assert!(a.iter().any(|n| n.contains("fullband/bwd")));
    let diff: Vec<_> = b.iter().filter(|n| !a.contains(n)).collect();
    assert!(diff.iter().all(|n| n.contains("narrowband/bwd")));
}

#[test]
fn initialization_sets_forget_bias_and_is_seeded() {
    let a = IpdNet::<f32>::new(small_fixed(2, Mode::Online), 21).unwrap();
    let b = IpdNet::<f32>::new(small_fixed(2, Mode::Online), 21).unwrap();
    let c = IpdNet::<f32>::new(small_fixed(2, Mode::Online), 22).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
    let bias = a.params.by_name("block0/narrowband/fwd/bias").unwrap().value.data().to_vec();
    let h = 8;
    for (i, v) in bias.iter().enumerate() {
        assert_eq!(*v, if (h..2 * h).contains(&i) { 1.0 } else { 0.0 });
    }
}

fn check_model_gradients(config: ModelConfig, batch: usize, frames: usize) {
    let net = IpdNet::<f64>::new(config.clone(), 31).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let shape = [batch, frames, config.bins, config.raw_width()];
    let n: usize = shape.iter().product();
    let x = Tensor::from_f64(&shape, &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap();
    let y = run(&net, x.clone());
    let target_data: Vec<f64> = (0..y.numel()).map(|_| rng.gen_range(-0.9..0.9)).collect();
    let target = Tensor::from_f64(y.shape(), &target_data).unwrap();
    let mut store = net.params.clone();
    let report = gradient_check(&mut store, &[x], 1e-6, |g, s, v| {
        let mut local = net.clone();
        local.params = s.clone();
        let out = local.forward(g, v[0]).map_err(|e| match e {
            ipdnet_model::ModelError::Autodiff(a) => a,
            other => panic!("{other}"),
        })?;
        g.mse_const(out, target.clone())
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{config:?}: {} at {}", report.max_rel_error, report.worst);
}

#[test]
fn fixed_model_gradients_match_finite_differences() {
    let config = ModelConfig {
        bins: 3,
        hidden: 4,
        blocks: 2,
        ..ModelConfig::fixed(2, 4, Mode::Offline)
    };
    check_model_gradients(config, 1, 12);
}

#[test]
fn variable_model_gradients_match_finite_differences() {
    let config = ModelConfig {
        bins: 3,
        hidden: 4,
        blocks: 1,
        ..ModelConfig::variable(4, Mode::Online)
    };
    check_model_gradients(config, 3, 13);
}

#[test]
fn decode_output_follows_index_map() {
    let config = small_fixed(3, Mode::Online);
    let shape = [2, 2, 6, config.out_channels()];
    let out: Vec<f64> = (0..shape.iter().product::<usize>()).map(|i| i as f64).collect();
    let est = decode_output(&config, &shape, &out, 2).unwrap();
    assert_eq!(est.len(), 2);
    for u in 0..2 {
        for g in 0..2 {
            for k in 0..2 {
                for p in 0..2 {
                    for c in 0..12 {
                        let want = output_index(&config, &shape, u, g, k, p, c) as f64;
                        assert_eq!(est[u].track(g, k)[p * 12 + c], want);
                    }
                }
            }
        }
    }
    // Every output channel is read exactly once.
    let mut seen = vec![false; out.len()];
    for e in &est {
        for v in &e.values {
            assert!(!seen[*v as usize]);
            seen[*v as usize] = true;
        }
    }
    assert!(seen.into_iter().all(|s| s));
}
