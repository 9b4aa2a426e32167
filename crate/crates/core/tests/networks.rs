use fpm_core::autodiff::{Adam, Graph, ParamSet, Tensor};
use fpm_core::field::ComplexGrid;
use fpm_core::forward::IntensityStack;
use fpm_core::nn::*;
use fpm_core::{IlluminationPattern, LedIndex, OpticalConfig};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_cfg() -> OpticalConfig {
    OpticalConfig::usaf_system().with_hr_size(16)
}

fn random_stack(n_img: usize, seed: u64) -> IntensityStack<f64> {
    let cfg = toy_cfg();
    let m = cfg.lr_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..n_img)
        .map(|_| fpm_core::field::RealGrid::from_fn(m, m, |_, _| rng.random::<f64>()))
        .collect();
    let patterns = (0..n_img).map(|_| IlluminationPattern::single(LedIndex::CENTER)).collect();
    IntensityStack::new(images, patterns, cfg).unwrap()
}

fn random_field(n: usize, seed: u64) -> ComplexGrid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ComplexGrid::from_fn(n, n, |_, _| Complex::from_polar(rng.random_range(0.2..1.0), rng.random_range(-2.0..2.0)))
}

#[test]
fn e2e_output_matches_hr_size_for_spec_matrix() {
    for (depth, up, base) in [(1, 1, 2), (2, 1, 4), (3, 1, 2), (2, 2, 2)] {
        let spec = E2ENetSpec {
            in_images: 3,
            base_channels: base,
            depth,
            upsample_stages: up,
            out_channels: 2,
        };
        let net = E2ENet::<f64>::new(spec, 1).unwrap();
        let lr = 8;
        let m = spec.output_size(lr);
        assert_eq!(m, lr << up);
        let mut g = Graph::new();
        let p = net.params().bind(&mut g);
        let x = g.constant(Tensor::filled(&[3, lr, lr], 0.5));
        let y = net.forward_graph(&mut g, &p, x).unwrap();
        assert_eq!(g.shape(y), &[2, m, m]);
    }
}

#[test]
fn e2e_zero_weights_give_constant_field() {
    let spec = E2ENetSpec {
        in_images: 4,
        ..E2ENetSpec::default()
    };
    let mut net = E2ENet::<f64>::new(spec, 3).unwrap();
    for (_, t) in net.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let z = net.forward(&random_stack(4, 9)).unwrap();
    let amp = std::f64::consts::LN_2;
    for v in z.data() {
        assert!((v.norm() - amp).abs() < 1e-15);
        assert_eq!(v.im, 0.0);
    }
}

#[test]
fn e2e_rejects_wrong_stack_depth() {
    let net = E2ENet::<f64>::new(E2ENetSpec::default(), 0).unwrap();
    assert!(net.forward(&random_stack(3, 1)).is_err());
}

#[test]
fn e2e_first_kernel_gradient_matches_differences() {
    let spec = E2ENetSpec {
        in_images: 2,
        base_channels: 2,
        depth: 2,
        upsample_stages: 1,
        out_channels: 2,
    };
    let net = E2ENet::<f64>::new(spec, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::new(vec![2, 8, 8], (0..128).map(|_| rng.random::<f64>()).collect()).unwrap();
    let y = Tensor::new(vec![2, 16, 16], (0..512).map(|_| rng.random::<f64>()).collect()).unwrap();
    let loss_of = |params: &ParamSet<f64>| {
        let n = E2ENet::from_params(spec, params.clone()).unwrap();
        let mut g = Graph::new();
        let p = n.params().bind(&mut g);
        let xi = g.constant(x.clone());
        let yi = g.constant(y.clone());
        let out = n.forward_graph(&mut g, &p, xi).unwrap();
        let l = g.l1_loss(out, yi).unwrap();
        (g, p, l)
    };
    let (mut g, p, l) = loss_of(net.params());
    let grads = p.gradients(&g.backward(l).unwrap());
    let analytic = grads.get("head.0.w").unwrap().clone();
    let h = 1e-6;
    for k in 0..analytic.numel() {
        let mut plus = net.params().clone();
        plus.get_mut("head.0.w").unwrap().data_mut()[k] += h;
        let mut minus = net.params().clone();
        minus.get_mut("head.0.w").unwrap().data_mut()[k] -= h;
        let (gp, _, lp) = loss_of(&plus);
        let (gm, _, lm) = loss_of(&minus);
        let fd = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h);
        let a = analytic.data()[k];
        assert!((a - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "k={k}: {a} vs {fd}");
    }
}

#[test]
fn fusion_zero_output_layer_is_pm_identity() {
    let net = FusionNet::<f64>::new(FusionNetSpec::default(), 11).unwrap();
    for seed in 0..5 {
        let dl = random_field(12, seed);
        let pm = random_field(12, seed + 100);
        let planes = net.forward_planes(&dl, &pm).unwrap();
        let want = encode_planes(&pm);
        assert_eq!(planes.data(), want.data());
    }
}

#[test]
fn fusion_accepts_duplicated_inputs() {
    let net = FusionNet::<f64>::new(FusionNetSpec::default(), 1).unwrap();
    let x = random_field(8, 4);
    let out = net.forward(&x, &x).unwrap();
    assert_eq!(out.dims(), (8, 8));
    assert!(net.forward(&x, &random_field(6, 1)).is_err());
}

fn toy_samples(n: usize) -> (E2ENet<f64>, Vec<TrainSample<f64>>) {
    let spec = E2ENetSpec {
        in_images: 3,
        base_channels: 4,
        depth: 2,
        upsample_stages: 1,
        out_channels: 2,
    };
    let net = E2ENet::new(spec, 7).unwrap();
    let samples = (0..n)
        .map(|i| {
            let stack = random_stack(3, i as u64);
            TrainSample {
                input: net.input(&stack).unwrap(),
                target: encode_planes(&random_field(16, 50 + i as u64).map(|z| Complex::new(z.norm(), 0.0))),
                simple: i % 2 == 0,
            }
        })
        .collect();
    (net, samples)
}

#[test]
fn single_sample_overfit() {
    let (mut net, samples) = toy_samples(1);
    let cfg = TrainConfig {
        epochs: 300,
        adam: Adam::with_lr(1e-2),
        seed: 0,
        curriculum: Curriculum::None,
    };
    let h = train(&mut net, &samples, &cfg).unwrap();
    let (first, last) = (h.epoch_loss[0], *h.epoch_loss.last().unwrap());
    assert!(last < 0.1 * first, "{first} -> {last}");
}

#[test]
fn training_is_deterministic_and_records_phases() {
    let (net, samples) = toy_samples(4);
    let cfg = TrainConfig {
        epochs: 3,
        adam: Adam::with_lr(1e-3),
        seed: 42,
        curriculum: Curriculum::SimpleThenComplex,
    };
    let (mut a, mut b) = (net.clone(), net);
    let ha = train(&mut a, &samples, &cfg).unwrap();
    let hb = train(&mut b, &samples, &cfg).unwrap();
    assert_eq!(ha.epoch_loss, hb.epoch_loss);
    assert_eq!(a.params(), b.params());
    assert_eq!(ha.phases.len(), 2);
    assert_eq!(ha.phases[0].phase, Phase::Simple);
    assert_eq!(ha.phases[1].start_epoch, 3);
    assert_eq!(ha.phase_params.len(), 2);
    assert!(ha.to_csv().starts_with("epoch,phase,loss\n0,simple,"));
}

#[test]
fn training_errors() {
    let (mut net, samples) = toy_samples(2);
    assert!(train(&mut net, &[], &TrainConfig::default()).is_err());
    let only_simple: Vec<_> = samples.into_iter().filter(|s| s.simple).collect();
    let cfg = TrainConfig {
        epochs: 1,
        curriculum: Curriculum::SimpleThenComplex,
        ..TrainConfig::default()
    };
    assert!(train(&mut net, &only_simple, &cfg).is_err());
}

#[test]
fn save_load_round_trip_and_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let spec = E2ENetSpec {
        in_images: 3,
        base_channels: 2,
        ..E2ENetSpec::default()
    };
    let net = E2ENet::<f64>::new(spec, 8).unwrap();
    let path = dir.path().join("e2e.fpmw");
    save_params(&net, spec.to_tensor(), &path).unwrap();
    let back = load_e2e(&path).unwrap();
    let stack = random_stack(3, 3);
    assert_eq!(net.forward_planes(&stack).unwrap(), back.forward_planes(&stack).unwrap());
    assert!(load_fusion(&path).is_err());

    let fnet = FusionNet::<f64>::new(FusionNetSpec::default(), 2).unwrap();
    let fpath = dir.path().join("fusion.fpmw");
    save_params(&fnet, FusionNetSpec::default().to_tensor(), &fpath).unwrap();
    assert_eq!(load_fusion(&fpath).unwrap().params(), fnet.params());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    let bad = dir.path().join("bad.fpmw");
    std::fs::write(&bad, &bytes).unwrap();
    assert!(load_params(&bad).is_err());

    let mut renamed = net.params().clone();
    let t = renamed.remove("out.w").unwrap();
    renamed.insert("outt.w", t);
    renamed.insert(SPEC_TENSOR, spec.to_tensor());
    let rpath = dir.path().join("renamed.fpmw");
    fpm_core::io::write_params(&rpath, &renamed).unwrap();
    let err = load_params(&rpath).err().expect("name mismatch must fail").to_string();
    assert!(err.contains("out.w"), "{err}");
}

#[test]
fn fusion_gradients_match_differences() {
    let spec = FusionNetSpec {
        hidden: 3,
        layers: 3,
        ..FusionNetSpec::default()
    };
    let mut net = FusionNet::<f64>::new(spec, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (_, t) in net.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let x = FusionNet::input(&random_field(6, 1), &random_field(6, 2)).unwrap();
    let y = encode_planes(&random_field(6, 3));
    let loss_of = |params: &ParamSet<f64>| {
        let n = FusionNet::from_params(spec, params.clone()).unwrap();
        let mut g = Graph::new();
        let p = n.params().bind(&mut g);
        let xi = g.constant(x.clone());
        let yi = g.constant(y.clone());
        let out = n.forward_graph(&mut g, &p, xi).unwrap();
        let l = g.l1_loss(out, yi).unwrap();
        (g, p, l)
    };
    let (mut g, p, l) = loss_of(net.params());
    let grads = p.gradients(&g.backward(l).unwrap());
    let h = 1e-6;
    for name in ["conv.0.w", "conv.1.b", "out.w"] {
        let analytic = grads.get(name).unwrap().clone();
        for k in (0..analytic.numel()).step_by(5) {
            let mut plus = net.params().clone();
            plus.get_mut(name).unwrap().data_mut()[k] += h;
            let mut minus = net.params().clone();
            minus.get_mut(name).unwrap().data_mut()[k] -= h;
            let (gp, _, lp) = loss_of(&plus);
            let (gm, _, lm) = loss_of(&minus);
            let fd = (gp.value(lp).item() - gm.value(lm).item()) / (2.0 * h);
            let a = analytic.data()[k];
            assert!((a - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{name}[{k}]: {a} vs {fd}");
        }
    }
}
