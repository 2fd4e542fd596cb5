use proptest::prelude::*;
use uniisp_core::color::{compute_quality, xyz_to_srgb};
use uniisp_core::synth::*;
use uniisp_core::{Raster, SrgbImage, XyzImage};

/// Naive 2-D DFT power spectrum of one channel (independent of the FFT used
/// by the library).
fn power_spectrum(img: &Raster, c: usize) -> Vec<f64> {
    let (h, w, _) = img.dims();
    let mut out = vec![0.0; h * w];
    let tau = std::f64::consts::TAU;
    for u in 0..h {
        for v in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -tau * (u as f64 * y as f64 / h as f64 + v as f64 * x as f64 / w as f64);
                    let val = img.get(y, x, c) as f64;
                    re += val * ang.cos();
                    im += val * ang.sin();
                }
            }
            out[u * w + v] = re * re + im * im;
        }
    }
    out
}

fn radial(u: usize, n: usize) -> f64 {
    let f = if u <= n / 2 { u as f64 } else { u as f64 - n as f64 };
    f / n as f64
}

/// Energy in the top quartile of radial frequencies (|f| > 0.75·max radius).
fn high_band_energy(img: &Raster) -> f64 {
    let (h, w, _) = img.dims();
    let rmax = (0.5f64 * 0.5 + 0.5 * 0.5).sqrt();
    let mut e = 0.0;
    for c in 0..img.channels() {
        let p = power_spectrum(img, c);
        for u in 0..h {
            for v in 0..w {
                let r = (radial(u, h).powi(2) + radial(v, w).powi(2)).sqrt();
                if r > 0.75 * rmax {
                    e += p[u * w + v];
                }
            }
        }
    }
    e
}

/// Energy above half the Nyquist frequency on either axis.
fn above_half_nyquist(img: &Raster) -> f64 {
    let (h, w, _) = img.dims();
    let p = power_spectrum(img, 1);
    let mut e = 0.0;
    for u in 0..h {
        for v in 0..w {
            if radial(u, h).abs() > 0.25 || radial(v, w).abs() > 0.25 {
                e += p[u * w + v];
            }
        }
    }
    e
}

#[test]
fn profile_determinism_spacing_and_monotone_curve() {
    assert_eq!(make_camera_profile(0, 0), make_camera_profile(0, 0));
    assert!((make_camera_profile(0, 0).tone_curve.gamma - make_camera_profile(0, 1).tone_curve.gamma).abs() >= 0.15);
    for seed in 0..10 {
        for idx in 0..6 {
            let p = make_camera_profile(seed, idx);
            let c = p.tone_curve;
            assert_eq!(c.eval(0.0), 0.0);
            assert!((c.eval(1.0) - 1.0).abs() < 1e-12);
            let mut prev = -1.0;
            for i in 0..1024 {
                let v = c.eval(i as f64 / 1023.0);
                assert!(v > prev, "curve not increasing at {i}");
                prev = v;
            }
        }
    }
}

#[test]
fn scenes_in_range_and_textured() {
    for seed in 0..100 {
        let s = generate_scene(seed, 16, 16).unwrap();
        let r = s.raster();
        for c in 0..3 {
            let ch = r.channel(c);
            assert!(ch.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
    let s = generate_scene(7, 32, 32).unwrap();
    assert!(above_half_nyquist(s.raster()) > 1e-3);
}

#[test]
fn neutral_render_matches_standard_conversion() {
    for seed in 0..5 {
        let xyz = generate_scene(seed, 32, 32).unwrap();
        let a = render_profile(&xyz, &CameraProfile::neutral(), &ExifParams::unity()).unwrap();
        let b = xyz_to_srgb(&xyz).unwrap();
        assert!(a.raster().max_abs_diff(b.raster()) <= 1e-5);
    }
}

#[test]
fn vignette_corner_darker_than_center() {
    let mut p = make_camera_profile(1, 2);
    p.vignette_strength = 0.2;
    p.local_contrast = 0.0;
    let xyz = XyzImage::new(Raster::filled(16, 16, 3, 0.3)).unwrap();
    let out = render_profile(&xyz, &p, &ExifParams::unity()).unwrap();
    let lum = |y, x| out.raster().pixel(y, x).iter().map(|&v| v as f64).sum::<f64>();
    assert!(lum(0, 0) < lum(7, 7));
}

#[test]
fn doubling_exposure_time_doubles_linear_stage() {
    let xyz = Raster::from_fn(4, 4, 3, |y, x, c| 0.05 + 0.02 * (y * 4 + x) as f32 + 0.01 * c as f32);
    let p = make_camera_profile(3, 1);
    let e1 = ExifParams { exposure_time: 1.0 / 250.0, iso: 200.0, f_number: 2.2 };
    let e2 = ExifParams { exposure_time: 2.0 / 250.0, ..e1 };
    let a = render_linear_stage(&xyz, &p, e1.exposure_scale()).unwrap();
    let b = render_linear_stage(&xyz, &p, e2.exposure_scale()).unwrap();
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((2.0 * *x as f64 - *y as f64).abs() < 1e-6);
    }
}

#[test]
fn warp_reduces_high_band_energy() {
    let mut ratios = Vec::new();
    for seed in 0..4 {
        let xyz = generate_scene(seed, 32, 32).unwrap();
        let img = render_profile(&xyz, &make_camera_profile(0, 0), &ExifParams::unity()).unwrap();
        let w = warp_with_bias(&img, seed + 100, 3.0).unwrap();
        ratios.push(high_band_energy(w.image.raster()) / high_band_energy(img.raster()));
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(mean < 0.95, "high-band ratio {mean} ({ratios:?})");
}

#[test]
fn warped_pairs_stay_aligned() {
    let cfg = DatasetConfig { cameras: 3, scenes: 4, ..Default::default() };
    let src = SyntheticSource::new(cfg).unwrap();
    for s in 0..4 {
        let data = src.scene(s).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a == b {
                    continue;
                }
                let w = src.pair(s, a, b).unwrap();
                let masked = |r: &Raster| Raster::from_fn(64, 64, 3, |y, x, c| r.get(y, x, c) * w.mask.get(y, x, 0));
                let q = compute_quality(&masked(w.image.raster()), &masked(data.srgb[b].raster()), 1.0).unwrap();
                assert!(q.psnr_db >= 25.0, "scene {s} pair {a}->{b}: {} dB", q.psnr_db);
            }
        }
    }
}

#[test]
fn mask_marks_every_in_frame_source_valid() {
    let img = SrgbImage::new(Raster::from_fn(24, 24, 3, |y, x, _| ((x + y) % 5) as f32 / 5.0)).unwrap();
    let w = warp_with_bias(&img, 3, 3.0).unwrap();
    for y in 0..24 {
        for x in 0..24 {
            let sy = y as f64 - w.flow.get(y, x, 1) as f64;
            let sx = x as f64 - w.flow.get(y, x, 0) as f64;
            let inside = (0.0..=23.0).contains(&sy) && (0.0..=23.0).contains(&sx);
            if inside {
                assert_eq!(w.mask.get(y, x, 0), 1.0);
            }
        }
    }
}

#[test]
fn cameras_render_differently() {
    let cfg = DatasetConfig { scenes: 6, ..Default::default() };
    let src = SyntheticSource::new(cfg).unwrap();
    for a in 0..5 {
        for b in a + 1..5 {
            let mut total = 0.0;
            for s in 0..6 {
                let d = src.scene_ref(s);
                let ra = d.srgb[a].raster().data();
                let rb = d.srgb[b].raster().data();
                total += ra.iter().zip(rb).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / ra.len() as f64;
            }
            assert!(total / 6.0 > 0.01, "cameras {a},{b} too similar");
        }
    }
}

#[test]
fn build_dataset_layout_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig { cameras: 5, scenes: 10, height: 16, width: 16, seed: 11, ..Default::default() };
    let m1 = build_dataset(&cfg, dir.path(), false).unwrap();
    let scenes = dir.path().join("scenes");
    let mut xyz = 0;
    let mut srgb = 0;
    let mut warped = 0;
    for entry in std::fs::read_dir(&scenes).unwrap() {
        for f in std::fs::read_dir(entry.unwrap().path()).unwrap() {
            let name = f.unwrap().file_name().into_string().unwrap();
            if name == "xyz.imgf" {
                xyz += 1;
            } else if name.starts_with("warp_") && !name.ends_with("_mask.imgf") && !name.ends_with("_flow.imgf") {
                warped += 1;
            } else if name.starts_with("cam") && name.ends_with(".imgf") {
                srgb += 1;
            }
        }
    }
    assert_eq!((xyz, srgb, warped), (10, 50, 200));

    assert!(matches!(build_dataset(&cfg, dir.path(), false), Err(uniisp_core::Error::AlreadyExists { .. })));
    let dir2 = tempfile::tempdir().unwrap();
    let m2 = build_dataset(&cfg, dir2.path(), false).unwrap();
    assert_eq!(m1.checksum, m2.checksum);
    let m3 = build_dataset(&cfg, dir.path(), true).unwrap();
    assert_eq!(m1, m3);

    let s = &m1.splits;
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());

    let ds = Dataset::open(dir.path()).unwrap();
    assert_eq!(ds.reads(), 0);
    let mem = SyntheticSource::new(cfg).unwrap();
    assert_eq!(ds.scene(3).unwrap(), mem.scene(3).unwrap());
    assert_eq!(ds.pair(3, 1, 4).unwrap(), mem.pair(3, 1, 4).unwrap());
    assert!(ds.reads() > 0);
}

#[test]
fn unwritable_output_dir_fails() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, b"x").unwrap();
    let cfg = DatasetConfig { cameras: 2, scenes: 1, height: 16, width: 16, ..Default::default() };
    assert!(build_dataset(&cfg, &file.join("sub"), false).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn render_is_monotone_in_exposure(seed in 0u64..1000, k in 0.2f64..0.6) {
        let xyz = generate_scene(seed, 16, 16).unwrap();
        let mut p = make_camera_profile(seed, (seed % 5) as usize);
        p.local_contrast = 0.0;
        p.saturation = 1.0;
        let lo = render_with_exposure(xyz.raster(), &p, k).unwrap();
        let hi = render_with_exposure(xyz.raster(), &p, k * 1.5).unwrap();
        let lin = render_linear_stage(xyz.raster(), &p, k).unwrap();
        for (i, (a, b)) in lo.raster().data().iter().zip(hi.raster().data()).enumerate() {
            let l = lin.data()[i];
            if l > 0.0 && l * 1.5 < 1.0 {
                prop_assert!(b >= a);
            }
        }
    }

    #[test]
    fn render_is_deterministic_and_bounded(seed in 0u64..1000, cam in 0usize..6) {
        let xyz = generate_scene(seed, 16, 16).unwrap();
        let p = make_camera_profile(seed, cam);
        let e = exif_for(seed, 0, cam);
        let a = render_profile(&xyz, &p, &e).unwrap();
        prop_assert_eq!(&a, &render_profile(&xyz, &p, &e).unwrap());
        prop_assert!(a.raster().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn warp_flow_bounded(seed in 0u64..1000, d in 0.0f64..4.0) {
        let img = SrgbImage::new(Raster::from_fn(16, 16, 3, |y, x, c| ((y * 3 + x + c) % 7) as f32 / 7.0)).unwrap();
        let w = warp_with_bias(&img, seed, d).unwrap();
        prop_assert!(w.flow.pixels().all(|p| (p[0] as f64).hypot(p[1] as f64) <= d));
        prop_assert!(w.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}
