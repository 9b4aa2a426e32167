use fpm_core::autodiff::{pixel_unshuffle, Graph, Tensor, Var};
use fpm_core::PixelShift;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Compares reverse-mode gradients of `f` against central differences.
fn check(inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        (g, vars, out)
    };
    let (mut g, vars, out) = eval(&inputs);
    let grads = g.backward(out).unwrap();
    let h = 1e-6;
    for (idx, t) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[idx]);
        for k in 0..t.numel() {
            let mut plus = inputs.clone();
            plus[idx].data_mut()[k] += h;
            let mut minus = inputs.clone();
            minus[idx].data_mut()[k] -= h;
            let (gp, _, op) = eval(&plus);
            let (gm, _, om) = eval(&minus);
            let numeric = (gp.value(op).item() - gm.value(om).item()) / (2.0 * h);
            let a = analytic.data()[k];
            assert!(
                (a - numeric).abs() <= 1e-5 * (1.0 + numeric.abs()),
                "input {idx} element {k}: analytic {a} vs numeric {numeric}"
            );
        }
    }
}

/// Weighted sum so every output element carries a distinct cotangent.
fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let w = g.constant(random(g.shape(v), seed));
    let p = g.mul(v, w).unwrap();
    g.sum(p)
}

#[test]
fn elementwise_ops() {
    check(vec![random(&[2, 3, 3], 1), random(&[2, 3, 3], 2)], |g, v| {
        let s = g.add(v[0], v[1]).unwrap();
        let d = g.sub(s, v[1]).unwrap();
        let m = g.mul(d, v[1]).unwrap();
        let c = g.scale(m, 1.7);
        let l = g.leaky_relu(c, 0.2);
        let t = g.tanh(l);
        let sg = g.sigmoid(t);
        let sp = g.softplus(sg);
        project(g, sp, 9)
    });
}

#[test]
fn sqrt_eps() {
    let x = random(&[3, 3], 4).map(|v| v * v + 0.1);
    check(vec![x], |g, v| {
        let r = g.sqrt_eps(v[0], 1e-3);
        project(g, r, 5)
    });
}

#[test]
fn conv2d_with_bias_stride_and_padding() {
    for (stride, padding, k) in [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 2, 5), (1, 0, 3)] {
        check(
            vec![random(&[2, 6, 6], 10), random(&[3, 2, k, k], 11), random(&[3], 12)],
            |g, v| {
                let c = g.conv2d(v[0], v[1], stride, padding).unwrap();
                let b = g.add_bias(c, v[2]).unwrap();
                project(g, b, 13)
            },
        );
    }
}

#[test]
fn conv2d_matches_direct_sum() {
    let x = random(&[2, 5, 5], 20);
    let k = random(&[1, 2, 3, 3], 21);
    let mut g = Graph::new();
    let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
    let y = g.conv2d(xv, kv, 2, 1).unwrap();
    assert_eq!(g.shape(y), &[1, 3, 3]);
    for oy in 0..3 {
        for ox in 0..3 {
            let mut acc = 0.0;
            for c in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        let ix = (ox * 2 + kx) as isize - 1;
                        if (0..5).contains(&iy) && (0..5).contains(&ix) {
                            acc += x.data()[(c * 5 + iy as usize) * 5 + ix as usize]
                                * k.data()[(c * 3 + ky) * 3 + kx];
                        }
                    }
                }
            }
            assert!((g.value(y).data()[oy * 3 + ox] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn shuffle_concat_narrow() {
    check(vec![random(&[8, 2, 3], 30), random(&[2, 4, 6], 31)], |g, v| {
        let s = g.pixel_shuffle(v[0], 2).unwrap();
        let c = g.concat(&[s, v[1]], 0).unwrap();
        let n = g.narrow(c, 0, 1, 2).unwrap();
        let n2 = g.narrow(n, 2, 1, 4).unwrap();
        project(g, n2, 32)
    });
}

#[test]
fn pixel_shuffle_round_trips_with_unshuffle() {
    let x = random(&[8, 3, 2], 33);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let s = g.pixel_shuffle(v, 2).unwrap();
    assert_eq!(g.shape(s), &[2, 6, 4]);
    // Channel c·r² + i·r + j lands at row y·r + i, column x·r + j.
    let val = g.value(s).data();
    assert_eq!(val[(1 * 6 + 2 * 2 + 1) * 4 + 1 * 2], x.data()[((4 + 2) * 3 + 2) * 2 + 1]);
    assert_eq!(pixel_unshuffle(g.value(s), 2).unwrap(), x);
}

#[test]
fn l1_loss_gradient_and_tie() {
    check(vec![random(&[4, 4], 40), random(&[4, 4], 41)], |g, v| g.l1_loss(v[0], v[1]).unwrap());
    let mut g = Graph::new();
    let a = g.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
    let l = g.l1_loss(a, b).unwrap();
    assert_eq!(g.value(l).item(), 1.0);
    let gr = g.backward(l).unwrap().get(a).unwrap();
    assert_eq!(gr.data(), &[0.0, 0.5]);
}

#[test]
fn complex_pipeline() {
    // |IFFT(crop(FFT(a ⊙ b)))|² with an embed round trip, the shape of the
    // physics model.
    check(
        vec![random(&[4, 4], 50), random(&[4, 4], 51), random(&[2, 8, 8], 52), random(&[2, 4, 4], 53)],
        |g, v| {
            let z = g.complex_from_parts(v[0], v[1]).unwrap();
            let shift = PixelShift { x: 1, y: -1 };
            let e = g.embed(z, 8, shift).unwrap();
            let m = g.complex_mul(e, v[2]).unwrap();
            let f = g.fft(m).unwrap();
            let c = g.crop(f, 4, PixelShift { x: -2, y: 1 }).unwrap();
            let p = g.complex_mul(c, v[3]).unwrap();
            let i = g.ifft(p).unwrap();
            let ms = g.modsq(i).unwrap();
            project(g, ms, 54)
        },
    );
}

#[test]
fn gradients_skip_constants_and_unused_params() {
    let mut g = Graph::new();
    let a = g.param(random(&[3], 60));
    let unused = g.param(random(&[3], 61));
    let c = g.constant(random(&[3], 62));
    let p = g.mul(a, c).unwrap();
    let s = g.sum(p);
    let gr = g.backward(s).unwrap();
    assert_eq!(gr.get(a).unwrap().data(), g.value(c).data());
    assert!(gr.get(unused).is_none());
    assert!(gr.get(c).is_none());
    assert_eq!(gr.get_or_zeros(unused).data(), &[0.0; 3]);
}

#[test]
fn shape_errors() {
    let mut g = Graph::new();
    let a = g.param(random(&[2, 3], 70));
    let b = g.param(random(&[3, 2], 71));
    assert!(g.add(a, b).is_err());
    assert!(g.fft(a).is_err());
    assert!(g.backward(a).is_err());
    let c = g.param(random(&[2, 4, 4], 72));
    assert!(g.crop(c, 4, PixelShift { x: 1, y: 0 }).is_err());
}

#[test]
fn f32_graph_runs() {
    let mut g = Graph::<f32>::new();
    let x = g.param(Tensor::new(vec![2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.5, 0.0, -1.0, 2.0]).unwrap());
    let f = g.fft(x).unwrap();
    let m = g.modsq(f).unwrap();
    let s = g.sum(m);
    let gr = g.backward(s).unwrap().get(x).unwrap();
    // Parseval: sum |F x|² = HW · sum |x|², gradient 2·HW·x.
    for (gv, xv) in gr.data().iter().zip(g.value(x).data()) {
        assert!((gv - 8.0 * xv).abs() < 1e-4);
    }
}
