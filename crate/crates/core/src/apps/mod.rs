mod fusion;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use uniisp_tensor::Tensor;

pub use fusion::{exposure_fusion, fusion_weights, FUSION_LEVELS};

use crate::color::{compute_quality, xyz_to_srgb};
use crate::error::{Error, IoContext, Result};
use crate::model::{Direction, UniIspModel};
use crate::raster::{Raster, SrgbImage, XyzImage};
use crate::synth::ExifParams;

pub const MAX_ALPHA: f64 = 4.0;
pub const DEFAULT_SPLICE_TAU: f64 = 0.7;
pub const SPLICE_MEDIAN: usize = 9;
pub const DEFAULT_HDR_GAINS: [f64; 3] = [1.0, 2.6, 4.2];

/// `h(g(I_a, E_a), E_b)`, with the source EXIF reused for the target.
pub fn transfer(model: &UniIspModel, img: &SrgbImage, source: &str, target: &str, exif: &ExifParams) -> Result<SrgbImage> {
    for c in [source, target] {
        if !model.has_camera(c) {
            return Err(Error::UnknownCamera(c.to_string()));
        }
    }
    let xyz = model.inverse_isp(img, Some(source), exif)?;
    model.forward_isp(&xyz, Some(target), exif)
}

/// `h_decoder((1−α)·F_a + α·F_b)` on the XYZ predicted from `img`.
pub fn interpolate(model: &UniIspModel, img: &SrgbImage, source: &str, target: &str, alpha: f64, exif: &ExifParams) -> Result<SrgbImage> {
    if !(alpha.is_finite() && alpha.abs() <= MAX_ALPHA) {
        return Err(Error::InvalidArgument(format!("|alpha| must be at most {MAX_ALPHA}, got {alpha}")));
    }
    for c in [source, target] {
        if !model.has_camera(c) {
            return Err(Error::UnknownCamera(c.to_string()));
        }
    }
    let xyz = model.inverse_isp(img, Some(source), exif)?;
    let enc = model.h_encode(&xyz, exif)?;
    let fa = model.interact(Direction::Forward, &enc.bottleneck, Some(source))?;
    let fb = model.interact(Direction::Forward, &enc.bottleneck, Some(target))?;
    let (wa, wb) = ((1.0 - alpha) as f32, alpha as f32);
    let mixed: Vec<f32> = fa.data().iter().zip(fb.data()).map(|(&a, &b)| wa * a + wb * b).collect();
    let f = Tensor::from_vec(fa.shape(), mixed)?;
    model.h_decode(&f, &enc)
}

/// Inference with the neutral embedding: `g(I, ∅)` or `h(L, ∅)`.
pub fn neutral_render(model: &UniIspModel, input: &Raster, dir: Direction, exif: &ExifParams) -> Result<Raster> {
    Ok(model.run_batch(dir, &[input], &[None], std::slice::from_ref(exif))?.remove(0))
}

/// Round-trip similarity per candidate; the best is the predicted source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForensicsReport {
    /// `(camera, mean SSIM(I, h(g(I, E_x), E_x)))` in candidate order.
    pub scores: Vec<(String, f64)>,
    pub predicted: String,
    /// Best minus runner-up SSIM; zero with a single candidate.
    pub margin: f64,
}

/// Round-trip reconstruction `h(g(I, E_x), E_x)`.
pub fn round_trip(model: &UniIspModel, img: &SrgbImage, camera: &str, exif: &ExifParams) -> Result<SrgbImage> {
    transfer(model, img, camera, camera, exif)
}

/// Zero-shot source identification by maximal round-trip SSIM (minimal edit
/// distance). Ties go to the earliest candidate.
pub fn identify_source_camera(model: &UniIspModel, img: &SrgbImage, candidates: &[&str], exif: &ExifParams) -> Result<ForensicsReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidate cameras".into()));
    }
    let mut scores = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let r = round_trip(model, img, c, exif)?;
        let q = compute_quality(r.raster(), img.raster(), 1.0)?;
        scores.push((c.to_string(), q.ssim_mean));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 > scores[best].1 {
            best = i;
        }
    }
    let runner_up = scores.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, s)| s.1).fold(f64::NEG_INFINITY, f64::max);
    let margin = if runner_up.is_finite() { scores[best].1 - runner_up } else { 0.0 };
    Ok(ForensicsReport { predicted: scores[best].0.clone(), scores, margin })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpliceMap {
    /// Per-pixel round-trip SSIM in `[-1, 1]`.
    pub ssim_map: Raster,
    /// `ssim_map < τ`.
    pub raw_mask: Raster,
    /// `raw_mask` after a 9×9 median filter.
    pub mask: Raster,
    pub tau: f64,
}

impl SpliceMap {
    pub fn suspicious_fraction(&self) -> f64 {
        self.mask.mean()
    }
}

/// Binary median filter with a square window (replicated borders).
pub fn median_filter_binary(mask: &Raster, size: usize) -> Raster {
    let (h, w, _) = mask.dims();
    let r = (size / 2) as isize;
    Raster::from_fn(h, w, 1, |y, x, _| {
        let mut ones = 0usize;
        let mut total = 0usize;
        for dy in -r..=r {
            for dx in -r..=r {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                ones += (mask.get(sy, sx, 0) > 0.5) as usize;
                total += 1;
            }
        }
        if 2 * ones > total {
            1.0
        } else {
            0.0
        }
    })
}

/// Local round-trip SSIM under the claimed camera; low values flag edits.
pub fn detect_splice(model: &UniIspModel, img: &SrgbImage, camera: &str, exif: &ExifParams, tau: f64) -> Result<SpliceMap> {
    if !tau.is_finite() {
        return Err(Error::InvalidArgument("tau must be finite".into()));
    }
    let r = round_trip(model, img, camera, exif)?;
    let q = compute_quality(r.raster(), img.raster(), 1.0)?;
    let raw_mask = q.ssim_map.map(|v| if (v as f64) < tau { 1.0 } else { 0.0 });
    let mask = median_filter_binary(&raw_mask, SPLICE_MEDIAN);
    Ok(SpliceMap { ssim_map: q.ssim_map, raw_mask, mask, tau })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HdrStack {
    pub gains: Vec<f64>,
    pub frames: Vec<SrgbImage>,
    pub fused: SrgbImage,
}

fn check_gains(gains: &[f64]) -> Result<()> {
    if gains.is_empty() || gains.iter().any(|g| !(g.is_finite() && *g > 0.0)) || gains.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("gains must be positive and ascending, got {gains:?}")));
    }
    Ok(())
}

/// Renders digitally gained copies of `xyz` through the standard pipeline and
/// fuses them.
pub fn hdr_from_xyz(xyz: &XyzImage, gains: &[f64]) -> Result<HdrStack> {
    check_gains(gains)?;
    let frames = gains
        .iter()
        .map(|&g| xyz_to_srgb(&XyzImage::new(xyz.raster().map(|v| (v as f64 * g) as f32))?))
        .collect::<Result<Vec<_>>>()?;
    let fused = exposure_fusion(&frames)?;
    Ok(HdrStack { gains: gains.to_vec(), frames, fused })
}

/// `L̂ = g(I, E_a)`, gained frames, exposure fusion.
pub fn hdr_render(model: &UniIspModel, img: &SrgbImage, camera: &str, exif: &ExifParams, gains: &[f64]) -> Result<HdrStack> {
    check_gains(gains)?;
    let xyz = model.inverse_isp(img, Some(camera), exif)?;
    hdr_from_xyz(&xyz, gains)
}

/// Input to feature export: an image, its capture metadata and the camera
/// that rendered it (`None` for oracle XYZ input).
#[derive(Clone, Debug)]
pub struct FeatureInput {
    pub scene_id: String,
    pub xyz: XyzImage,
    pub exif: ExifParams,
    pub source_camera: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub scene_id: String,
    /// `self` when the target equals the source camera (or the input is oracle XYZ), else `cross`.
    pub task: String,
    /// Empty for `B` rows.
    pub target_camera: String,
    /// `B` or `F`.
    pub kind: String,
    pub values: Vec<f32>,
}

fn pooled(t: &Tensor<f32>) -> Vec<f32> {
    let [_, c, h, w] = t.dims4();
    (0..c).map(|ch| t.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f32>() / (h * w) as f32).collect()
}

/// Spatially pooled forward-module features: one `B` row per input and one
/// `F_x` row per camera.
pub fn export_internal_features(model: &UniIspModel, inputs: &[FeatureInput], cameras: &[&str]) -> Result<Vec<FeatureRow>> {
    for c in cameras {
        if !model.has_camera(c) {
            return Err(Error::UnknownCamera(c.to_string()));
        }
    }
    let mut rows = Vec::with_capacity(inputs.len() * (1 + cameras.len()));
    for inp in inputs {
        let enc = model.h_encode(&inp.xyz, &inp.exif)?;
        let task_for = |t: &str| match &inp.source_camera {
            Some(s) if s != t => "cross",
            _ => "self",
        };
        rows.push(FeatureRow {
            scene_id: inp.scene_id.clone(),
            task: "self".into(),
            target_camera: String::new(),
            kind: "B".into(),
            values: pooled(&enc.bottleneck),
        });
        for &c in cameras {
            let f = model.interact(Direction::Forward, &enc.bottleneck, Some(c))?;
            rows.push(FeatureRow {
                scene_id: inp.scene_id.clone(),
                task: task_for(c).to_string(),
                target_camera: c.to_string(),
                kind: "F".into(),
                values: pooled(&f),
            });
        }
    }
    Ok(rows)
}

pub fn write_feature_csv(rows: &[FeatureRow], path: &Path) -> Result<()> {
    let d = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("scene_id,task,target_camera,kind");
    for i in 0..d {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{},{},{}", r.scene_id, r.task, r.target_camera, r.kind));
        for v in &r.values {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).at(path)?;
    f.write_all(out.as_bytes()).at(path)
}

/// Mean pairwise distance between per-camera centroids of `F` rows, and the
/// mean distance of rows to their own camera centroid.
pub fn cluster_separation(rows: &[FeatureRow]) -> Result<(f64, f64)> {
    let mut groups: Vec<(String, Vec<&[f32]>)> = Vec::new();
    for r in rows.iter().filter(|r| r.kind == "F") {
        match groups.iter_mut().find(|(c, _)| *c == r.target_camera) {
            Some((_, v)) => v.push(&r.values),
            None => groups.push((r.target_camera.clone(), vec![&r.values])),
        }
    }
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("need feature rows for at least two cameras".into()));
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let centroids: Vec<Vec<f64>> = groups
        .iter()
        .map(|(_, v)| {
            let d = v[0].len();
            (0..d).map(|i| v.iter().map(|r| r[i] as f64).sum::<f64>() / v.len() as f64).collect()
        })
        .collect();
    let mut inter = 0.0;
    let mut pairs = 0;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            inter += dist(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }
    let mut intra = 0.0;
    let mut n = 0;
    for ((_, v), c) in groups.iter().zip(&centroids) {
        for r in v {
            let r64: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            intra += dist(&r64, c);
            n += 1;
        }
    }
    Ok((inter / pairs as f64, intra / n as f64))
}
