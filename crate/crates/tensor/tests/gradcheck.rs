use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniisp_tensor::gradcheck::{grad_check, grad_check_with, GradCheckOptions};
use uniisp_tensor::kernels::elementwise::Unary;
use uniisp_tensor::{ConvSpec, Graph, Init, ParamStore, PadMode, Result, Tensor, Var};

const TOL: f64 = 1e-4;
const SEEDS: [u64; 3] = [0, 1, 2];

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// `mean(y ⊙ r)` for a fixed pseudo-random `r`, so every output entry matters.
fn project(g: &mut Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(shape.iter().product::<usize>() as u64);
    let r = g.constant(rand_tensor(&shape, -1.0, 1.0, &mut rng));
    let p = g.mul(y, r)?;
    Ok(g.mean(p))
}

fn shape4(seed: u64) -> [usize; 4] {
    [[1, 2, 4, 4], [2, 3, 6, 6], [2, 4, 8, 6]][seed as usize]
}

fn run<F>(label: &str, params: &ParamStore<f64>, inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Result<Var>,
{
    let report = grad_check(&f, params, inputs, &GradCheckOptions::default()).unwrap();
    assert!(report.checked > 0, "{label}: nothing checked");
    assert!(report.passes(TOL), "{label}: rel err {} at {}", report.max_rel_err, report.worst);
}

fn unary_case(u: Unary, lo: f64, hi: f64) {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&shape4(seed), lo, hi, &mut rng);
        run(&format!("{u:?}/{seed}"), &ParamStore::new(), &[x], |g, _, v| {
            let y = g.unary(v[0], u);
            project(g, y)
        });
    }
}

#[test]
fn conv2d_zero_reflect_and_strided() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [n, c, h, w] = shape4(seed);
        let x = rand_tensor(&[n, c, h, w], -1.0, 1.0, &mut rng);
        let mut p = ParamStore::new();
        p.register("w", &[3, c, 3, 3], Init::FanInUniform, &mut rng).unwrap();
        p.register("b", &[3], Init::Uniform(0.5), &mut rng).unwrap();
        for spec in [ConvSpec::same(3), ConvSpec::reflect(3), ConvSpec { stride: 2, padding: 1, mode: PadMode::Zero }] {
            run(&format!("conv {spec:?}/{seed}"), &p, std::slice::from_ref(&x), |g, p, v| {
                let w = g.param(p, "w")?;
                let b = g.param(p, "b")?;
                let y = g.conv2d(v[0], w, Some(b), spec)?;
                project(g, y)
            });
        }
    }
}

#[test]
fn broadcast_binary_ops() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = shape4(seed);
        let a = rand_tensor(&s, -1.0, 1.0, &mut rng);
        let b = rand_tensor(&[1, s[1], 1, 1], -1.0, 1.0, &mut rng);
        let full = rand_tensor(&s, -1.0, 1.0, &mut rng);
        for op in 0..3 {
            run(&format!("binary{op}/{seed}"), &ParamStore::new(), &[a.clone(), b.clone(), full.clone()], |g, _, v| {
                let y = match op {
                    0 => g.add(v[0], v[1])?,
                    1 => g.sub(v[1], v[0])?,
                    _ => {
                        let t = g.mul(v[0], v[1])?;
                        g.mul(t, v[2])?
                    }
                };
                project(g, y)
            });
        }
    }
}

#[test]
fn unary_ops() {
    unary_case(Unary::LeakyRelu(0.2), -1.0, 1.0);
    unary_case(Unary::Sigmoid, -3.0, 3.0);
    unary_case(Unary::Softplus(100.0), -0.05, 0.05);
    unary_case(Unary::Softplus(1.0), -2.0, 2.0);
    unary_case(Unary::Scale(-1.7), -1.0, 1.0);
    unary_case(Unary::GuidedClamp(0.0, 1.0), 0.01, 0.99);
    unary_case(Unary::SrgbEncode, 0.01, 0.99);
    unary_case(Unary::SrgbDecode, 0.05, 0.99);
}

#[test]
fn pooling_and_resampling() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&shape4(seed), -1.0, 1.0, &mut rng);
        for op in 0..4 {
            run(&format!("pool{op}/{seed}"), &ParamStore::new(), std::slice::from_ref(&x), |g, _, v| {
                let y = match op {
                    0 => g.maxpool2(v[0])?,
                    1 => g.upsample2(v[0])?,
                    2 => g.global_avg_pool(v[0])?,
                    _ => g.channel_mean_max(v[0])?,
                };
                project(g, y)
            });
        }
    }
}

#[test]
fn half_instance_norm() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [n, _, h, w] = shape4(seed);
        let c = 2 * (seed as usize + 1);
        let x = rand_tensor(&[n, c, h, w], -1.0, 1.0, &mut rng);
        let mut p = ParamStore::new();
        p.register("gamma", &[c / 2], Init::Uniform(1.0), &mut rng).unwrap();
        p.register("beta", &[c / 2], Init::Uniform(1.0), &mut rng).unwrap();
        run(&format!("hin/{seed}"), &p, &[x], |g, p, v| {
            let ga = g.param(p, "gamma")?;
            let be = g.param(p, "beta")?;
            let y = g.half_instance_norm(v[0], ga, be)?;
            project(g, y)
        });
    }
}

#[test]
fn batched_matmul_and_softmax() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (bt, m, k, n) = (1 + seed as usize, 3, 4 + seed as usize, 2);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let a_shape = if ta { [bt, k, m] } else { [bt, m, k] };
            let b_shape = if tb { [1, n, k] } else { [1, k, n] };
            let a = rand_tensor(&a_shape, -1.0, 1.0, &mut rng);
            let b = rand_tensor(&b_shape, -1.0, 1.0, &mut rng);
            run(&format!("bmm {ta} {tb}/{seed}"), &ParamStore::new(), &[a, b], |g, _, v| {
                let y = g.bmm(v[0], v[1], ta, tb)?;
                let s = g.softmax(y);
                project(g, s)
            });
        }
    }
}

#[test]
fn reshape_slice_stack_blur() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = shape4(seed);
        let x = rand_tensor(&s, -1.0, 1.0, &mut rng);
        let y = rand_tensor(&s, -1.0, 1.0, &mut rng);
        run(&format!("shape ops/{seed}"), &ParamStore::new(), &[x, y], |g, _, v| {
            let r = g.reshape(v[0], &[s[0], s[1] * s[2], s[3]])?;
            let r = g.reshape(r, &s)?;
            let sl = g.slice_channels(r, 1, s[1])?;
            let sl2 = g.slice_channels(v[1], 0, s[1] - 1)?;
            let flat = [s[0], (s[1] - 1) * s[2], s[3]];
            let sl = g.reshape(sl, &flat)?;
            let sl2 = g.reshape(sl2, &flat)?;
            let st = g.stack(&[sl, sl2])?;
            let b = g.blur(st, &[0.25, 0.5, 0.25]);
            project(g, b)
        });
    }
}

#[test]
fn reductions() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = shape4(seed);
        let x = rand_tensor(&s, -1.0, 1.0, &mut rng);
        let mask = Tensor::from_vec(&[s[0], 1, s[2], s[3]], (0..s[0] * s[2] * s[3]).map(|i| (i % 3 != 0) as u8 as f64).collect()).unwrap();
        for op in 0..3 {
            run(&format!("reduce{op}/{seed}"), &ParamStore::new(), std::slice::from_ref(&x), |g, _, v| match op {
                0 => Ok(g.mean(v[0])),
                1 => Ok(g.mean_abs(v[0])),
                _ => g.masked_mean_abs(v[0], &mask),
            });
        }
    }
}

#[test]
fn focal_frequency_with_uniform_weights() {
    // With alpha = 0 the spectral weights are constant, so the analytic
    // gradient is the true gradient.
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = shape4(seed);
        let p = rand_tensor(&s, 0.0, 1.0, &mut rng);
        let t = rand_tensor(&s, 0.0, 1.0, &mut rng);
        run(&format!("focal/{seed}"), &ParamStore::new(), &[p, t], |g, _, v| g.focal_frequency(v[0], v[1], 0.0));
    }
}

#[test]
fn small_conv_net_end_to_end() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&[1, 3, 8, 8], 0.0, 1.0, &mut rng);
        let mut p = ParamStore::new();
        p.register("c1", &[4, 3, 3, 3], Init::FanInUniform, &mut rng).unwrap();
        p.register("c2", &[3, 4, 3, 3], Init::FanInUniform, &mut rng).unwrap();
        run(&format!("net/{seed}"), &p, &[x], |g, p, v| {
            let w1 = g.param(p, "c1")?;
            let w2 = g.param(p, "c2")?;
            let h = g.conv2d(v[0], w1, None, ConvSpec::same(3))?;
            let h = g.leaky_relu(h, 0.2);
            let h = g.maxpool2(h)?;
            let h = g.upsample2(h)?;
            let y = g.conv2d(h, w2, None, ConvSpec::reflect(3))?;
            let y = g.softplus(y, 100.0);
            let d = g.sub(y, v[0])?;
            Ok(g.mean_abs(d))
        });
    }
}

#[test]
fn negative_control_detects_wrong_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_tensor(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
    let mut p = ParamStore::new();
    p.register("w", &[2, 2, 3, 3], Init::FanInUniform, &mut rng).unwrap();
    let f = |g: &mut Graph<f64>, p: &ParamStore<f64>, v: &[Var]| {
        let w = g.param(p, "w")?;
        let y = g.conv2d(v[0], w, None, ConvSpec::same(3))?;
        project(g, y)
    };
    let report = grad_check_with(&f, &p, &[x], &GradCheckOptions::default(), |name, t| {
        if name == "w" {
            t.data_mut()[0] *= 1.01;
        }
    })
    .unwrap();
    assert!(!report.passes(TOL), "a 1% perturbation went unnoticed");
    assert!(report.worst.starts_with("w["));
}

#[test]
fn pool_and_upsample_shapes() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[2, 3, 8, 6]));
    let p = g.maxpool2(x).unwrap();
    assert_eq!(g.value(p).shape(), &[2, 3, 4, 3]);
    let u = g.upsample2(p).unwrap();
    assert_eq!(g.value(u).shape(), &[2, 3, 8, 6]);
    let odd = g.constant(Tensor::zeros(&[1, 1, 5, 4]));
    assert!(g.maxpool2(odd).is_err());
}
