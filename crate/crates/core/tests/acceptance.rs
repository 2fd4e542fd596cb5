//! Desk-scale acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Trained models are cached under `target/acceptance/`; set
//! `UNIISP_RETRAIN=1` to retrain from scratch.

use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uniisp_core::apps::{
    cluster_separation, detect_splice, export_internal_features, hdr_from_xyz, hdr_render, identify_source_camera, interpolate,
    transfer, FeatureInput, DEFAULT_HDR_GAINS, DEFAULT_SPLICE_TAU,
};
use uniisp_core::color::{early_isp, psnr, srgb_pixel_to_xyz, srgb_to_xyz, xyz_pixel_to_srgb, xyz_to_srgb, BayerImage, CfaPattern};
use uniisp_core::eval::{auroc, high_band_ratio, make_splice, train_cached};
use uniisp_core::model::{embedding_name, exif_tensor, net, Direction, ModelConfig, UniIspModel};
use uniisp_core::synth::{
    exif_for, make_camera_profile, render_profile, CameraProfile, DatasetConfig, ExifParams, SampleSource, Split, SyntheticSource,
};
use uniisp_core::train::{evaluate, extend_few_shot, CrossLoss, FewShotSample, TrainConfig};
use uniisp_core::{Raster, SrgbImage};
use uniisp_tensor::gradcheck::{grad_check, GradCheckOptions};
use uniisp_tensor::kernels::elementwise::Unary;
use uniisp_tensor::{ConvSpec, Graph, Init, ParamStore, Tensor, Var};

// Criterion 1
const OP_GRAD_TOL: f64 = 1e-4;
const MODEL_GRAD_TOL: f64 = 1e-3;
const GRAD_SEEDS: u64 = 3;
const GRAD_BUDGET_SECS: f64 = 120.0;
// Criterion 2
const COLOR_ROUND_TRIP_TOL: f64 = 1e-6;
// Criterion 3
const INVERSE_PSNR_MIN: f64 = 35.0;
const FORWARD_PSNR_MIN: f64 = 30.0;
const MAX_STEPS: usize = 20_000;
// Criterion 4
const NRR_MARGIN_DB: f64 = 2.0;
// Criterion 5
const FBC_PSNR_GAIN_DB: f64 = 0.5;
const FBC_BAND_GAIN: f64 = 0.10;
const FBC_SEEDS: u64 = 3;
// Criterion 7
const ID_ACCURACY_MIN: f64 = 0.9;
const ID_IMAGES: usize = 100;
// Criterion 8
const SPLICES: usize = 50;
const SPLICE_SSIM_GAP: f64 = 0.05;
const SPLICE_AUROC_MIN: f64 = 0.8;
// Criterion 9
const HDR_PSNR_MIN: f64 = 28.0;
// Criterion 10
const FEW_SHOT_PARAMS: usize = 256;
const FEW_SHOT_SAMPLES: usize = 10;
const FEW_SHOT_EVAL_SCENES: usize = 20;
const FEW_SHOT_GAIN_DB: f64 = 3.0;
// Criterion 11
const CLUSTER_RATIO_MIN: f64 = 2.0;

// Desk preset.
const STEPS: usize = 2000;
const FINE_TUNE_STEPS: usize = 400;
const SPLICE_PATCH: usize = 24;
const FEW_SHOT_STEPS: usize = 300;

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        println!("criterion {n:>2}: {} {detail}", if pass { "PASS" } else { "FAIL" });
        self.lines.push((n, pass, detail));
    }
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance")
}

fn force() -> bool {
    std::env::var("UNIISP_RETRAIN").is_ok_and(|v| v == "1")
}

fn desk_model() -> ModelConfig {
    ModelConfig { base_channels: 8, blocks_per_scale: 1, ..ModelConfig::default() }
}

fn desk_train(cameras: Vec<String>, seed: u64) -> TrainConfig {
    let single = cameras.len() == 1;
    TrainConfig {
        synthetic: DatasetConfig::default(),
        cameras,
        patch_size: 64,
        batch_size: 4,
        steps: STEPS,
        lr_max: 1e-3,
        lr_min: 1e-4,
        mix_self: if single { 1.0 } else { 2.0 / 3.0 },
        mix_cross: if single { 0.0 } else { 1.0 / 3.0 },
        seed,
        val_interval: 250,
        val_scenes: 10,
        model: desk_model(),
        ..TrainConfig::default()
    }
}

fn rand_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn project(g: &mut Graph<f64>, y: Var) -> uniisp_tensor::Result<Var> {
    let shape = g.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(shape.iter().product::<usize>() as u64 + 17);
    let r = g.constant(rand_tensor(&shape, -1.0, 1.0, &mut rng));
    let p = g.mul(y, r)?;
    Ok(g.mean(p))
}

type OpCase = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> uniisp_tensor::Result<Var>>;

fn op_cases(seed: u64) -> Vec<(&'static str, ParamStore<f64>, Vec<Tensor<f64>>, OpCase)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, h, w) = (1 + seed as usize % 2, 2, 4 + 2 * seed as usize, 6);
    let x = rand_tensor(&[n, c, h, w], -1.0, 1.0, &mut rng);
    let pos = rand_tensor(&[n, c, h, w], 0.05, 0.95, &mut rng);
    let mut conv = ParamStore::new();
    conv.register("w", &[3, c, 3, 3], Init::FanInUniform, &mut rng).unwrap();
    conv.register("b", &[3], Init::Uniform(0.5), &mut rng).unwrap();
    let mut hin = ParamStore::new();
    hin.register("g", &[c / 2], Init::Uniform(1.0), &mut rng).unwrap();
    hin.register("b", &[c / 2], Init::Uniform(1.0), &mut rng).unwrap();
    let bias = rand_tensor(&[1, c, 1, 1], -1.0, 1.0, &mut rng);
    let a3 = rand_tensor(&[n, 3, 4], -1.0, 1.0, &mut rng);
    let b3 = rand_tensor(&[1, 5, 4], -1.0, 1.0, &mut rng);
    let mask = Tensor::from_vec(&[n, 1, h, w], (0..n * h * w).map(|i| (i % 3 != 0) as u8 as f64).collect()).unwrap();
    let none = ParamStore::new;
    let mut cases: Vec<(&'static str, ParamStore<f64>, Vec<Tensor<f64>>, OpCase)> = vec![
        ("conv2d", conv.clone(), vec![x.clone()], Box::new(|g, p, v| {
            let (w, b) = (g.param(p, "w")?, g.param(p, "b")?);
            let y = g.conv2d(v[0], w, Some(b), ConvSpec::same(3))?;
            project(g, y)
        })),
        ("conv2d-reflect", conv, vec![x.clone()], Box::new(|g, p, v| {
            let w = g.param(p, "w")?;
            let y = g.conv2d(v[0], w, None, ConvSpec::reflect(3))?;
            project(g, y)
        })),
        ("broadcast add/sub/mul", none(), vec![x.clone(), bias], Box::new(|g, _, v| {
            let a = g.add(v[0], v[1])?;
            let s = g.sub(a, v[1])?;
            let m = g.mul(s, v[1])?;
            project(g, m)
        })),
        ("half-instance-norm", hin, vec![x.clone()], Box::new(|g, p, v| {
            let (ga, be) = (g.param(p, "g")?, g.param(p, "b")?);
            let y = g.half_instance_norm(v[0], ga, be)?;
            project(g, y)
        })),
        ("maxpool/upsample", none(), vec![x.clone()], Box::new(|g, _, v| {
            let y = g.maxpool2(v[0])?;
            let y = g.upsample2(y)?;
            project(g, y)
        })),
        ("global-pool/channel-stats", none(), vec![x.clone()], Box::new(|g, _, v| {
            let a = g.global_avg_pool(v[0])?;
            let b = g.channel_mean_max(v[0])?;
            let (pa, pb) = (project(g, a)?, project(g, b)?);
            g.add(pa, pb)
        })),
        ("bmm/softmax", none(), vec![a3, b3], Box::new(|g, _, v| {
            let y = g.bmm(v[0], v[1], false, true)?;
            let s = g.softmax(y);
            let z = g.bmm(s, v[1], false, false)?;
            project(g, z)
        })),
        ("reshape/slice/stack/blur", none(), vec![x.clone()], Box::new(move |g, _, v| {
            let a = g.slice_channels(v[0], 0, 1)?;
            let b = g.slice_channels(v[0], 1, 2)?;
            let a = g.reshape(a, &[n, h, w])?;
            let b = g.reshape(b, &[n, h, w])?;
            let s = g.stack(&[a, b])?;
            let r = g.reshape(s, &[2 * n, 1, h, w])?;
            let y = g.blur(r, &[0.25, 0.5, 0.25]);
            project(g, y)
        })),
        ("mean/mean-abs/masked", none(), vec![x.clone()], Box::new(move |g, _, v| {
            let a = g.mean(v[0]);
            let b = g.mean_abs(v[0]);
            let c = g.masked_mean_abs(v[0], &mask)?;
            let s = g.add(a, b)?;
            g.add(s, c)
        })),
        ("focal-frequency", none(), vec![pos.clone(), x.clone()], Box::new(|g, _, v| g.focal_frequency(v[0], v[1], 0.0))),
    ];
    for (name, u, t) in [
        ("leaky-relu", Unary::LeakyRelu(0.2), &x),
        ("sigmoid", Unary::Sigmoid, &x),
        ("softplus", Unary::Softplus(100.0), &x),
        ("scale", Unary::Scale(1.3), &x),
        ("guided-clamp", Unary::GuidedClamp(0.0, 1.0), &pos),
        ("srgb-encode", Unary::SrgbEncode, &pos),
        ("srgb-decode", Unary::SrgbDecode, &pos),
    ] {
        let input = if matches!(u, Unary::Softplus(_)) { t.clone().reshape(t.shape()).unwrap() } else { t.clone() };
        let input = if matches!(u, Unary::Softplus(_)) {
            Tensor::from_vec(input.shape(), input.data().iter().map(|v| v * 0.05).collect()).unwrap()
        } else {
            input
        };
        cases.push((name, none(), vec![input], Box::new(move |g, _, v| {
            let y = g.unary(v[0], u);
            project(g, y)
        })));
    }
    cases
}

fn model_grad_check(seed: u64) -> (f64, String) {
    let cfg = ModelConfig { scales: 2, base_channels: 4, blocks_per_scale: 1, embed_dim: 16, context_tokens: 4, attn_dim: 4, gfmb_hidden: 4, ..Default::default() };
    let mut m = UniIspModel::new(cfg.clone(), seed).unwrap();
    m.register_camera("a").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for (name, p) in m.params.iter_mut() {
        if !name.starts_with("emb.") {
            p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.02..0.02));
        }
    }
    let params = m.params.cast::<f64>();
    let srgb = Raster::from_fn(16, 16, 3, |y, x, c| 0.2 + 0.6 * (((y * 5 + x * 3 + c * 7 + seed as usize) % 17) as f32 / 17.0));
    let srgb = SrgbImage::new(srgb).unwrap();
    let xyz = srgb_to_xyz(&srgb).unwrap();
    let e = exif_tensor(&[ExifParams::unity()]).cast::<f64>();
    let mut worst = (0.0, String::new());
    for dir in [Direction::Inverse, Direction::Forward] {
        let (input, target) = match dir {
            Direction::Inverse => (srgb.raster().to_tensor::<f64>(), xyz.raster().map(|v| v * 0.9).to_tensor::<f64>()),
            Direction::Forward => (xyz.raster().to_tensor::<f64>(), srgb.raster().map(|v| v * 0.9 + 0.05).to_tensor::<f64>()),
        };
        let cfg = cfg.clone();
        let f = move |g: &mut Graph<f64>, p: &ParamStore<f64>, v: &[Var]| {
            let ctx = net::context(g, p, &cfg, &[Some("a")]).map_err(tensor_err)?;
            let out = net::run_module(g, p, &cfg, dir, v[0], v[1], ctx).map_err(tensor_err)?;
            let t = g.constant(target.clone());
            let d = g.sub(out.output, t)?;
            let sq = g.mul(d, d)?;
            Ok(g.mean(sq))
        };
        let opts = GradCheckOptions { max_entries: Some(3), seed, ..Default::default() };
        let r = grad_check(&f, &params, &[input, e.clone()], &opts).unwrap();
        if r.max_rel_err >= worst.0 {
            worst = (r.max_rel_err, format!("{dir:?} {}", r.worst));
        }
    }
    worst
}

fn tensor_err(e: uniisp_core::Error) -> uniisp_tensor::TensorError {
    match e {
        uniisp_core::Error::Tensor(t) => t,
        other => panic!("{other}"),
    }
}

fn criterion_1(rep: &mut Report) {
    let t0 = Instant::now();
    let mut op_worst = (0.0f64, String::new());
    for seed in 0..GRAD_SEEDS {
        for (name, params, inputs, f) in op_cases(seed) {
            match grad_check(&f, &params, &inputs, &GradCheckOptions::default()) {
                Ok(r) if r.max_rel_err < op_worst.0 => {}
                Ok(r) => op_worst = (r.max_rel_err, format!("{name} {}", r.worst)),
                Err(e) => op_worst = (f64::INFINITY, format!("{name}: {e}")),
            }
        }
    }
    let mut model_worst = (0.0f64, String::new());
    for seed in 0..GRAD_SEEDS {
        let w = model_grad_check(seed);
        if !(w.0 < model_worst.0) {
            model_worst = w;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = op_worst.0 < OP_GRAD_TOL && model_worst.0 < MODEL_GRAD_TOL && secs < GRAD_BUDGET_SECS;
    rep.record(
        1,
        pass,
        format!(
            "gradient checks: op max rel err {:.2e} (< {OP_GRAD_TOL:.0e}, {}), model {:.2e} (< {MODEL_GRAD_TOL:.0e}, {}), {secs:.1}s (< {GRAD_BUDGET_SECS}s)",
            op_worst.0, op_worst.1, model_worst.0, model_worst.1
        ),
    );
}

/// Reference bilinear demosaic: average of the nearest same-colour sites.
fn reference_demosaic(raw: &BayerImage) -> Raster {
    let (h, w, _) = raw.data.dims();
    let refl = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let i = if i < 0 { -i } else { i };
        (if i >= n { 2 * (n - 1) - i } else { i }) as usize
    };
    let mut rgb = Raster::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let here = raw.pattern.channel_at(y, x);
                let v = if here == ch {
                    raw.data.get(y, x, 0) as f64 * raw.wb_gains[ch]
                } else {
                    let mut sum = 0.0;
                    let mut count = 0.0;
                    let neighbours: &[(isize, isize)] = if ch == 1 {
                        &[(-1, 0), (1, 0), (0, -1), (0, 1)]
                    } else {
                        let horizontal = raw.pattern.channel_at(y, refl(x as isize + 1, w)) == ch;
                        let vertical = raw.pattern.channel_at(refl(y as isize + 1, h), x) == ch;
                        match (horizontal, vertical) {
                            (true, _) => &[(0, -1), (0, 1)],
                            (_, true) => &[(-1, 0), (1, 0)],
                            _ => &[(-1, -1), (-1, 1), (1, -1), (1, 1)],
                        }
                    };
                    for (dy, dx) in neighbours {
                        let (sy, sx) = (refl(y as isize + dy, h), refl(x as isize + dx, w));
                        sum += raw.data.get(sy, sx, 0) as f64 * raw.wb_gains[ch];
                        count += 1.0;
                    }
                    sum / count
                };
                rgb.set(y, x, ch, v as f32);
            }
        }
    }
    rgb
}

fn criterion_2(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100_000 {
        let rgb = [rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)];
        let back = xyz_pixel_to_srgb(srgb_pixel_to_xyz(rgb));
        worst = (0..3).fold(worst, |w, c| w.max((back[c] - rgb[c]).abs()));
    }
    // Image-level error includes the f32 storage of the intermediate XYZ.
    let img = SrgbImage::new(Raster::new(64, 64, 3, (0..64 * 64 * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()).unwrap();
    let stored = xyz_to_srgb(&srgb_to_xyz(&img).unwrap()).unwrap().raster().max_abs_diff(img.raster());
    let identity = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut exact = true;
    for (i, pattern) in [CfaPattern::Rggb, CfaPattern::Bggr, CfaPattern::Grbg, CfaPattern::Gbrg].into_iter().enumerate() {
        let data = Raster::new(8, 8, 1, (0..64).map(|_| rng.gen_range(0..=255) as f32 / 256.0).collect()).unwrap();
        let raw = BayerImage { data, pattern, wb_gains: [2.0, 1.0, [1.5, 1.25, 1.75, 2.5][i]], cam_to_xyz: identity };
        exact &= early_isp(&raw).unwrap().raster() == &reference_demosaic(&raw);
    }
    let pass = worst <= COLOR_ROUND_TRIP_TOL && exact;
    rep.record(
        2,
        pass,
        format!("sRGB↔XYZ round trip max err {worst:.2e} (≤ {COLOR_ROUND_TRIP_TOL:.0e}; {stored:.2e} through f32 images); early_isp matches reference demosaicer exactly: {exact}"),
    );
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Ctx {
    src: SyntheticSource,
    test: Vec<usize>,
    cams: Vec<(usize, String)>,
    unified: UniIspModel,
}

fn criterion_3(rep: &mut Report, ctx: &Ctx) -> (f64, f64) {
    let t0 = Instant::now();
    let mut base_inv = Vec::new();
    let mut base_for = Vec::new();
    for (i, id) in &ctx.cams {
        let m = train_cached(&desk_train(vec![id.clone()], 0), &ctx.src, None, &cache_dir(), force()).unwrap();
        let r = evaluate(&m, &ctx.src, &ctx.test, &[(*i, id.clone())]).unwrap();
        base_inv.push(r.psnr_inv);
        base_for.push(r.psnr_for);
    }
    let r = evaluate(&ctx.unified, &ctx.src, &ctx.test, &ctx.cams).unwrap();
    let (bi, bf) = (mean(&base_inv), mean(&base_for));
    let thresholds = r.psnr_inv >= INVERSE_PSNR_MIN && r.psnr_for >= FORWARD_PSNR_MIN;
    let synergy = r.psnr_inv >= bi && r.psnr_for >= bf;
    rep.record(
        3,
        thresholds && synergy && STEPS <= MAX_STEPS,
        format!(
            "unified held-out PSNR inverse {:.2} dB (≥ {INVERSE_PSNR_MIN}), forward {:.2} dB (≥ {FORWARD_PSNR_MIN}); single-camera average inverse {bi:.2}, forward {bf:.2}; {STEPS} steps ({:.0}s incl. cached training)",
            r.psnr_inv,
            r.psnr_for,
            t0.elapsed().as_secs_f64()
        ),
    );
    (r.psnr_inv, r.psnr_for)
}

fn criterion_4(rep: &mut Report, ctx: &Ctx, levels: (f64, f64)) {
    let neutral = CameraProfile::neutral();
    let mut inv = Vec::new();
    let mut fwd = Vec::new();
    for &s in &ctx.test {
        let xyz = &ctx.src.scene_ref(s).xyz;
        let exif = ExifParams::unity();
        let img = render_profile(xyz, &neutral, &exif).unwrap();
        let l = ctx.unified.inverse_isp(&img, None, &exif).unwrap();
        inv.push(psnr(l.raster(), xyz.raster(), 1.0).unwrap());
        let i = ctx.unified.forward_isp(xyz, None, &exif).unwrap();
        fwd.push(psnr(i.raster(), img.raster(), 1.0).unwrap());
    }
    let (pi, pf) = (mean(&inv), mean(&fwd));
    let pass = pi >= levels.0 - NRR_MARGIN_DB && pf >= levels.1 - NRR_MARGIN_DB;
    rep.record(
        4,
        pass,
        format!("neutral g(·,∅) {pi:.2} dB vs inverse level {:.2}, h(·,∅) {pf:.2} dB vs forward level {:.2} (within {NRR_MARGIN_DB} dB)", levels.0, levels.1),
    );
}

fn cross_metrics(m: &UniIspModel, ctx: &Ctx) -> (f64, f64) {
    let mut ps = Vec::new();
    let mut bands = Vec::new();
    for &s in &ctx.test {
        let d = ctx.src.scene_ref(s);
        for (a, ida) in &ctx.cams {
            let (b, idb) = &ctx.cams[(a + 1) % ctx.cams.len()];
            let l = m.inverse_isp(&d.srgb[*a], Some(ida), &d.exif[*a]).unwrap();
            let out = m.forward_isp(&l, Some(idb), &d.exif[*b]).unwrap();
            ps.push(psnr(out.raster(), d.srgb[*b].raster(), 1.0).unwrap());
            bands.push(high_band_ratio(out.raster(), d.srgb[*b].raster()).unwrap());
        }
    }
    (mean(&ps), mean(&bands))
}

fn criterion_5(rep: &mut Report, ctx: &Ctx) {
    let mut fbc = Vec::new();
    let mut l1 = Vec::new();
    for seed in 0..FBC_SEEDS {
        for (loss, out) in [(CrossLoss::Fbc, &mut fbc), (CrossLoss::WarpedL1, &mut l1)] {
            let cfg = TrainConfig {
                steps: FINE_TUNE_STEPS,
                mix_self: 0.0,
                mix_cross: 1.0,
                cross_loss: loss,
                lr_max: 3e-4,
                lr_min: 3e-5,
                val_interval: FINE_TUNE_STEPS,
                ..desk_train(Vec::new(), 100 + seed)
            };
            let m = train_cached(&cfg, &ctx.src, Some(&ctx.unified), &cache_dir(), force()).unwrap();
            out.push(cross_metrics(&m, ctx));
        }
    }
    let f_psnr = mean(&fbc.iter().map(|v| v.0).collect::<Vec<_>>());
    let l_psnr = mean(&l1.iter().map(|v| v.0).collect::<Vec<_>>());
    let f_band = mean(&fbc.iter().map(|v| v.1).collect::<Vec<_>>());
    let l_band = mean(&l1.iter().map(|v| v.1).collect::<Vec<_>>());
    let gap = (1.0 - l_band).abs() - (1.0 - f_band).abs();
    let pass = f_psnr - l_psnr >= FBC_PSNR_GAIN_DB && gap >= FBC_BAND_GAIN;
    rep.record(
        5,
        pass,
        format!(
            "FBC vs warped-L1 over {FBC_SEEDS} seeds: PSNR {f_psnr:.2} vs {l_psnr:.2} dB (gain ≥ {FBC_PSNR_GAIN_DB}), high-band ratio {f_band:.3} vs {l_band:.3} (closer to 1 by {:.1} pp, ≥ {:.0})",
            100.0 * gap,
            100.0 * FBC_BAND_GAIN
        ),
    );
}

fn criterion_6(rep: &mut Report, ctx: &Ctx) {
    let mut exact = 0;
    let mut total = 0;
    for &s in &ctx.test {
        let d = ctx.src.scene_ref(s);
        for (a, ida) in &ctx.cams {
            let idb = &ctx.cams[(a + 2) % ctx.cams.len()].1;
            let img = &d.srgb[*a];
            let e = &d.exif[*a];
            let i0 = interpolate(&ctx.unified, img, ida, idb, 0.0, e).unwrap();
            let i1 = interpolate(&ctx.unified, img, ida, idb, 1.0, e).unwrap();
            exact += (i0 == transfer(&ctx.unified, img, ida, ida, e).unwrap()) as usize;
            exact += (i1 == transfer(&ctx.unified, img, ida, idb, e).unwrap()) as usize;
            total += 2;
        }
    }
    rep.record(6, exact == total, format!("interpolation endpoints bit-equal to transfer: {exact}/{total}"));
}

fn criterion_7(rep: &mut Report, ctx: &Ctx) {
    let ids: Vec<&str> = ctx.cams.iter().map(|c| c.1.as_str()).collect();
    let mut correct = 0;
    let mut n = 0;
    'outer: for &s in &ctx.test {
        let d = ctx.src.scene_ref(s);
        for (a, ida) in &ctx.cams {
            if n == ID_IMAGES {
                break 'outer;
            }
            let r = identify_source_camera(&ctx.unified, &d.srgb[*a], &ids, &d.exif[*a]).unwrap();
            correct += (r.predicted == *ida) as usize;
            n += 1;
        }
    }
    let acc = correct as f64 / n as f64;
    rep.record(7, n == ID_IMAGES && acc >= ID_ACCURACY_MIN, format!("source identification accuracy {acc:.3} on {n} held-out images (≥ {ID_ACCURACY_MIN})"));
}

fn criterion_8(rep: &mut Report, ctx: &Ctx) {
    let k = ctx.cams.len();
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for i in 0..SPLICES {
        let s = ctx.test[i % ctx.test.len()];
        let d = ctx.src.scene_ref(s);
        let a = i % k;
        let b = (a + 1 + (i / k) % (k - 1)) % k;
        let (img, mask) = make_splice(&d.srgb[a], &d.srgb[b], i as u64, SPLICE_PATCH).unwrap();
        let map = detect_splice(&ctx.unified, &img, &ctx.cams[a].1, &d.exif[a], DEFAULT_SPLICE_TAU).unwrap();
        let (mut si, mut ni, mut so, mut no) = (0.0, 0, 0.0, 0);
        for (v, m) in map.ssim_map.data().iter().zip(mask.data()) {
            let v = *v as f64;
            if *m == 1.0 {
                si += v;
                ni += 1;
            } else {
                so += v;
                no += 1;
            }
            scores.push(-v);
            labels.push(*m == 1.0);
        }
        inside.push(si / ni as f64);
        outside.push(so / no as f64);
    }
    let (mi, mo) = (mean(&inside), mean(&outside));
    let auc = auroc(&scores, &labels).unwrap();
    let pass = mo - mi >= SPLICE_SSIM_GAP && auc >= SPLICE_AUROC_MIN;
    rep.record(8, pass, format!("{SPLICES} splices: SSIM in-patch {mi:.3} vs outside {mo:.3} (gap ≥ {SPLICE_SSIM_GAP}), pixel AUROC {auc:.3} (≥ {SPLICE_AUROC_MIN})"));
}

fn criterion_9(rep: &mut Report, ctx: &Ctx) {
    let mut ps = Vec::new();
    for (j, &s) in ctx.test.iter().enumerate() {
        let d = ctx.src.scene_ref(s);
        let (a, ida) = &ctx.cams[j % ctx.cams.len()];
        let got = hdr_render(&ctx.unified, &d.srgb[*a], ida, &d.exif[*a], &DEFAULT_HDR_GAINS).unwrap();
        let oracle = hdr_from_xyz(&d.xyz, &DEFAULT_HDR_GAINS).unwrap();
        ps.push(psnr(got.fused.raster(), oracle.fused.raster(), 1.0).unwrap());
    }
    let p = mean(&ps);
    rep.record(9, p >= HDR_PSNR_MIN, format!("HDR fused PSNR vs oracle pipeline {p:.2} dB (≥ {HDR_PSNR_MIN}) with gains {DEFAULT_HDR_GAINS:?}"));
}

fn criterion_10(rep: &mut Report, ctx: &Ctx) {
    let seed = ctx.src.config.seed;
    let new_index = ctx.cams.len();
    let profile = make_camera_profile(seed, new_index);
    let render = |s: usize| {
        let exif = exif_for(seed, s, new_index);
        let xyz = ctx.src.scene_ref(s).xyz.clone();
        (render_profile(&xyz, &profile, &exif).unwrap(), xyz, exif)
    };
    let train_scenes = ctx.src.splits().get(Split::Train);
    let samples: Vec<FewShotSample> = train_scenes[..FEW_SHOT_SAMPLES]
        .iter()
        .map(|&s| {
            let (srgb, xyz, exif) = render(s);
            FewShotSample { srgb, xyz, exif }
        })
        .collect();
    let ext = extend_few_shot(&ctx.unified, "cam_new", &samples, FEW_SHOT_STEPS, 1e-2, 4, 0).unwrap();
    let trained: usize = ext
        .params
        .iter()
        .filter(|(name, p)| ctx.unified.params.get(name).is_none_or(|q| q.value != p.value))
        .map(|(_, p)| p.value.len())
        .sum();
    let emb_len = ext.params.value(&embedding_name("cam_new")).unwrap().len();
    let mut eval: Vec<usize> = ctx.test.clone();
    eval.extend(ctx.src.splits().get(Split::Val));
    eval.truncate(FEW_SHOT_EVAL_SCENES);
    let (mut gain, mut base) = (Vec::new(), Vec::new());
    for &s in &eval {
        let (srgb, xyz, exif) = render(s);
        gain.push(psnr(ext.forward_isp(&xyz, Some("cam_new"), &exif).unwrap().raster(), srgb.raster(), 1.0).unwrap());
        base.push(psnr(ext.forward_isp(&xyz, None, &exif).unwrap().raster(), srgb.raster(), 1.0).unwrap());
    }
    let (g, b) = (mean(&gain), mean(&base));
    let pass = trained == FEW_SHOT_PARAMS && emb_len == FEW_SHOT_PARAMS && eval.len() == FEW_SHOT_EVAL_SCENES && g >= b + FEW_SHOT_GAIN_DB;
    rep.record(
        10,
        pass,
        format!("few-shot: {trained} trained values (= {FEW_SHOT_PARAMS}); forward PSNR {g:.2} dB vs neutral baseline {b:.2} dB on {} unseen scenes (gain ≥ {FEW_SHOT_GAIN_DB})", eval.len()),
    );
}

fn criterion_11(rep: &mut Report, ctx: &Ctx) {
    let inputs: Vec<FeatureInput> = ctx
        .test
        .iter()
        .map(|&s| FeatureInput { scene_id: format!("s{s}"), xyz: ctx.src.scene_ref(s).xyz.clone(), exif: ExifParams::unity(), source_camera: None })
        .collect();
    let ids: Vec<&str> = ctx.cams.iter().map(|c| c.1.as_str()).collect();
    let rows = export_internal_features(&ctx.unified, &inputs, &ids).unwrap();
    let (inter, intra) = cluster_separation(&rows).unwrap();
    rep.record(
        11,
        rows.len() == inputs.len() * (1 + ids.len()) && inter > CLUSTER_RATIO_MIN * intra,
        format!("feature clusters: inter-camera centroid distance {inter:.4} vs intra spread {intra:.4} (ratio {:.2}, > {CLUSTER_RATIO_MIN})", inter / intra),
    );
}

#[test]
fn acceptance() {
    let mut rep = Report { lines: Vec::new() };
    criterion_1(&mut rep);
    criterion_2(&mut rep);

    let src = SyntheticSource::new(DatasetConfig::default()).unwrap();
    let test = src.splits().get(Split::Test).to_vec();
    let cams: Vec<(usize, String)> = src.camera_ids().iter().cloned().enumerate().collect();
    let unified = train_cached(&desk_train(Vec::new(), 0), &src, None, &cache_dir(), force()).unwrap();
    let ctx = Ctx { src, test, cams, unified };
    let levels = criterion_3(&mut rep, &ctx);
    criterion_4(&mut rep, &ctx, levels);
    criterion_5(&mut rep, &ctx);
    criterion_6(&mut rep, &ctx);
    criterion_7(&mut rep, &ctx);
    criterion_8(&mut rep, &ctx);
    criterion_9(&mut rep, &ctx);
    criterion_10(&mut rep, &ctx);
    criterion_11(&mut rep, &ctx);

    let failed: Vec<usize> = rep.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    println!("acceptance: {}/{} criteria passed", rep.lines.len() - failed.len(), rep.lines.len());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
