use proptest::prelude::*;
use uniisp_core::synth::generate_scene;
use uniisp_core::train::{erode_mask, fbc_loss, l1, loss_forward, loss_inverse, warped_l1_loss, FbcSettings};
use uniisp_core::{Raster, SrgbImage, XyzImage};
use uniisp_tensor::kernels::spatial::{gaussian_kernel1d, separable_blur};
use uniisp_tensor::{Graph, Tensor};

fn xyz(r: Raster) -> XyzImage {
    XyzImage::new(r).unwrap()
}

fn texture(seed: u64, size: usize) -> Tensor<f64> {
    let s = generate_scene(seed, size, size).unwrap();
    let srgb = uniisp_core::color::xyz_to_srgb(&s).unwrap();
    srgb.raster().to_tensor::<f64>()
}

/// Magnitudes of the naive unitary 2-D DFT of one plane.
fn dft_magnitudes(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ph = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                    re += ph.cos() * plane[y * w + x];
                    im += ph.sin() * plane[y * w + x];
                }
            }
            out[u * w + v] = re.hypot(im) / ((h * w) as f64).sqrt();
        }
    }
    out
}

#[test]
fn l1_examples() {
    let a = Raster::from_fn(8, 8, 3, |y, x, c| ((y + x + c) % 5) as f32 / 5.0);
    assert_eq!(loss_inverse(&xyz(a.clone()), &xyz(a.clone())).unwrap(), 0.0);
    let off = a.map(|v| v + 0.1);
    assert!((loss_inverse(&xyz(off), &xyz(a.clone())).unwrap() - 0.1).abs() < 1e-6);
    let s = SrgbImage::new(a.map(|v| v * 0.5)).unwrap();
    let t = SrgbImage::new(a.map(|v| v * 0.5 + 0.1)).unwrap();
    assert!((loss_forward(&s, &t).unwrap() - 0.1).abs() < 1e-6);
    assert_eq!(loss_forward(&s, &s).unwrap(), 0.0);
    assert!(loss_inverse(&xyz(Raster::zeros(4, 4, 3)), &xyz(Raster::zeros(4, 5, 3))).is_err());
}

#[test]
fn l1_gradient_is_sign_over_n() {
    let p = Tensor::from_vec(&[1, 1, 2, 3], vec![0.3, -0.2, 0.5, 0.1, 0.9, -0.4]).unwrap();
    let t = Tensor::from_vec(&[1, 1, 2, 3], vec![0.1, 0.2, 0.5 + 1e-3, 0.0, 1.0, -0.5]).unwrap();
    let mut g = Graph::<f64>::new();
    let pv = g.leaf(p.clone());
    let tv = g.constant(t.clone());
    let loss = l1(&mut g, pv, tv).unwrap();
    let grads = g.backward(loss).unwrap();
    let gp = grads.get(pv).unwrap();
    let n = p.len() as f64;
    for i in 0..p.len() {
        let expected = (p.data()[i] - t.data()[i]).signum() / n;
        assert!((gp.data()[i] - expected).abs() < 1e-12);
        // central difference oracle
        let eps = 1e-7;
        let f = |d: f64| {
            let mut q = p.data().to_vec();
            q[i] += d;
            q.iter().zip(t.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n
        };
        assert!(((f(eps) - f(-eps)) / (2.0 * eps) - gp.data()[i]).abs() < 1e-6);
    }
}

#[test]
fn focal_loss_concentrates_on_a_pure_tone() {
    let (h, w) = (16, 16);
    let gt = texture(3, h);
    let (u, v) = (3.0, 5.0);
    let mut pred = gt.clone();
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let ph = 2.0 * std::f64::consts::PI * (u * y as f64 / h as f64 + v * x as f64 / w as f64);
                pred.data_mut()[(c * h + y) * w + x] += 0.05 * ph.cos();
            }
        }
    }
    let mut g = Graph::<f64>::new();
    let pv = g.constant(pred.clone());
    let tv = g.constant(gt.clone());
    let loss = g.focal_frequency(pv, tv, 1.0).unwrap();
    let value = g.value(loss).data()[0];

    // Oracle: weighted error per bin from a naive DFT.
    let mut total = 0.0;
    let mut at_tone = 0.0;
    for c in 0..3 {
        let diff: Vec<f64> = (0..h * w).map(|i| pred.data()[c * h * w + i] - gt.data()[c * h * w + i]).collect();
        let spec = dft_magnitudes(&diff, h, w);
        let wmax = spec.iter().copied().fold(0.0, f64::max);
        for uu in 0..h {
            for vv in 0..w {
                let m = spec[uu * w + vv];
                let e = (m / wmax) * m * m;
                total += e;
                if (uu, vv) == (3, 5) || (uu, vv) == (h - 3, w - 5) {
                    at_tone += e;
                }
            }
        }
    }
    assert!((value - total / (3 * h * w) as f64).abs() < 1e-9 * total.max(1.0), "{value} vs {}", total / (3 * h * w) as f64);
    assert!(at_tone / total > 0.99, "tone share {}", at_tone / total);
}

#[test]
fn focal_loss_identical_inputs_is_zero() {
    let a = texture(1, 16);
    let mut g = Graph::<f64>::new();
    let p = g.constant(a.clone());
    let t = g.constant(a);
    let l = g.focal_frequency(p, t, 1.0).unwrap();
    assert_eq!(g.value(l).data()[0], 0.0);
}

fn circular_shift(t: &Tensor<f64>, dy: usize, dx: usize) -> Tensor<f64> {
    let [n, c, h, w] = t.dims4();
    let mut out = t.clone();
    for p in 0..n * c {
        for y in 0..h {
            for x in 0..w {
                out.data_mut()[(p * h + (y + dy) % h) * w + (x + dx) % w] = t.data()[(p * h + y) * w + x];
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn focal_loss_is_translation_invariant(seed in 0u64..1000, dy in 0usize..16, dx in 0usize..16) {
        let a = texture(seed, 16);
        let b = texture(seed + 1, 16);
        let eval = |p: &Tensor<f64>, t: &Tensor<f64>| {
            let mut g = Graph::<f64>::new();
            let pv = g.constant(p.clone());
            let tv = g.constant(t.clone());
            let l = g.focal_frequency(pv, tv, 1.0).unwrap();
            g.value(l).data()[0]
        };
        let base = eval(&a, &b);
        let shifted = eval(&circular_shift(&a, dy, dx), &circular_shift(&b, dy, dx));
        prop_assert!((base - shifted).abs() <= 1e-9 * base.max(1e-12));
    }

    #[test]
    fn eroded_mask_is_a_subset(bits in proptest::collection::vec(any::<bool>(), 64), r in 0usize..3) {
        let m = Tensor::from_vec(&[1, 1, 8, 8], bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let e = erode_mask(&m, r);
        for (a, b) in e.data().iter().zip(m.data()) {
            prop_assert!(*a <= *b);
        }
        if r == 0 {
            prop_assert_eq!(e, m);
        }
    }
}

#[test]
fn fbc_identical_inputs_is_zero() {
    let a = texture(2, 16);
    let mask = Tensor::full(&[1, 1, 16, 16], 1.0);
    let mut g = Graph::<f64>::new();
    let p = g.constant(a.clone());
    let t = fbc_loss(&mut g, p, &a, &a, &mask, &FbcSettings::default()).unwrap();
    assert_eq!(g.value(t.total).data()[0], 0.0);
    assert!(t.freq.is_some());
}

#[test]
fn fbc_low_pass_term_forgives_blur() {
    let s = FbcSettings::default();
    assert_eq!(s.kernel, 5);
    let pristine = texture(4, 32);
    let taps = gaussian_kernel1d(s.kernel, s.sigma).unwrap();
    let warped = separable_blur(&pristine, &taps);
    let mask = Tensor::full(&[1, 1, 32, 32], 1.0);
    let mut g = Graph::<f64>::new();
    let p = g.constant(pristine.clone());
    let terms = fbc_loss(&mut g, p, &warped, &pristine, &mask, &s).unwrap();
    let low = g.value(terms.low).data()[0];
    let plain_var = warped_l1_loss(&mut g, p, &warped, &mask).unwrap();
    let plain = g.value(plain_var).data()[0];
    assert!(low < 0.5 * plain, "low {low} vs plain {plain}");
    assert_eq!(g.value(terms.freq.unwrap()).data()[0], 0.0);
}

#[test]
fn gaussian_taps_match_the_five_tap_definition() {
    let taps = gaussian_kernel1d(5, 1.0).unwrap();
    let raw: Vec<f64> = (-2..=2).map(|i: i32| (-(i * i) as f64 / 2.0).exp()).collect();
    let sum: f64 = raw.iter().sum();
    for (t, r) in taps.iter().zip(&raw) {
        assert!((t - r / sum).abs() < 1e-12);
    }
}

#[test]
fn occluded_pixels_get_no_low_pass_gradient() {
    let pristine = texture(5, 16);
    let mut mask = Tensor::full(&[1, 1, 16, 16], 1.0);
    for y in 4..9 {
        for x in 6..12 {
            mask.data_mut()[y * 16 + x] = 0.0;
        }
    }
    let pred = texture(6, 16);
    let mut g = Graph::<f64>::new();
    let p = g.leaf(pred);
    let terms = fbc_loss(&mut g, p, &pristine, &pristine, &mask, &FbcSettings::default()).unwrap();
    let grads = g.backward(terms.low).unwrap();
    let gp = grads.get(p).unwrap();
    for c in 0..3 {
        for i in 0..256 {
            if mask.data()[i] == 0.0 {
                assert_eq!(gp.data()[c * 256 + i], 0.0);
            }
        }
    }
    assert!(gp.data().iter().any(|&v| v != 0.0));
}

#[test]
fn heavy_occlusion_skips_frequency_term_and_all_masked_errors() {
    let a = texture(7, 16);
    let mut mask = Tensor::full(&[1, 1, 16, 16], 1.0);
    for v in &mut mask.data_mut()[..80] {
        *v = 0.0;
    }
    let mut g = Graph::<f64>::new();
    let p = g.constant(a.clone());
    let t = fbc_loss(&mut g, p, &a, &a, &mask, &FbcSettings::default()).unwrap();
    assert!(t.freq.is_none());
    let none = Tensor::zeros(&[1, 1, 16, 16]);
    assert!(fbc_loss(&mut g, p, &a, &a, &none, &FbcSettings::default()).is_err());
    let nonbinary = Tensor::full(&[1, 1, 16, 16], 0.5);
    assert!(fbc_loss(&mut g, p, &a, &a, &nonbinary, &FbcSettings::default()).is_err());
}
