use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uniisp_tensor::optim::{cosine_lr, Adam};
use uniisp_tensor::{Graph, Tensor, Var};

use super::config::{CrossLoss, TrainConfig};
use super::losses::{fbc_loss, loss_forward, loss_inverse, warped_l1_loss};
use crate::color::{compute_quality, srgb_to_xyz, xyz_to_srgb};
use crate::error::{Error, IoContext, Result};
use crate::model::{exif_tensor, load_checkpoint, net, save_checkpoint, Checkpoint, Direction, UniIspModel};
use crate::raster::{Raster, SrgbImage, XyzImage};
use crate::synth::{ExifParams, SampleSource, Split};

/// Per-step loss values; `total = l_inv + l_for + l_fbc + λ·l_nrr`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_inv: f64,
    pub l_for: f64,
    pub l_fbc: f64,
    pub l_nrr: f64,
    pub total: f64,
}

/// One self-camera training sample.
#[derive(Clone, Debug)]
pub struct SelfSample {
    pub srgb: Raster,
    pub xyz: Raster,
    pub exif: ExifParams,
    pub camera: String,
}

/// One cross-camera training sample (`a → b`).
#[derive(Clone, Debug)]
pub struct CrossSample {
    pub srgb_a: Raster,
    pub exif_a: ExifParams,
    pub camera_a: String,
    pub warped_b: Raster,
    pub pristine_b: Raster,
    pub mask: Raster,
    pub exif_b: ExifParams,
    pub camera_b: String,
}

/// Wiring facts recorded by the last cross step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CrossInstrumentation {
    /// The forward module consumed the inverse module's output, not oracle XYZ.
    pub used_predicted_xyz: bool,
    pub freq_term_applied: bool,
}

fn mask_tensor(masks: &[&Raster]) -> Result<Tensor<f32>> {
    Raster::batch_to_tensor(masks)
}

fn finite(step: usize, lb: &LossBreakdown, what: &str) -> Result<()> {
    if [lb.l_inv, lb.l_for, lb.l_fbc, lb.l_nrr, lb.total].iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { step, detail: format!("{what}: {lb:?}") })
    }
}

/// Builds the self-camera objective `L_Inv + L_For + λ·L_NRR` on `g`.
/// The neutral-embedding passes share the batch with the camera passes.
fn self_objective(g: &mut Graph<f32>, model: &UniIspModel, batch: &[SelfSample], lambda: f64) -> Result<(Var, LossBreakdown)> {
    let n = batch.len();
    let cfg = &model.config;
    let srgb: Vec<&Raster> = batch.iter().map(|s| &s.srgb).collect();
    let xyz: Vec<&Raster> = batch.iter().map(|s| &s.xyz).collect();
    let exif: Vec<ExifParams> = batch.iter().map(|s| s.exif).collect();
    let with_nrr = lambda > 0.0;
    let reps = if with_nrr { 2 } else { 1 };

    let tile = |rs: &[&Raster]| -> Result<Tensor<f32>> {
        let all: Vec<&Raster> = (0..reps).flat_map(|_| rs.iter().copied()).collect();
        Raster::batch_to_tensor(&all)
    };
    let mut cams: Vec<Option<&str>> = batch.iter().map(|s| Some(s.camera.as_str())).collect();
    if with_nrr {
        cams.extend(std::iter::repeat_n(None, n));
    }
    let exif_all: Vec<ExifParams> = (0..reps).flat_map(|_| exif.iter().copied()).collect();

    // Targets: oracle for the camera half, standard conversions for the neutral half.
    let mut inv_target: Vec<Raster> = xyz.iter().map(|r| (*r).clone()).collect();
    let mut for_target: Vec<Raster> = srgb.iter().map(|r| (*r).clone()).collect();
    if with_nrr {
        for s in batch {
            inv_target.push(srgb_to_xyz(&SrgbImage::new(s.srgb.clone())?)?.into_raster());
            for_target.push(xyz_to_srgb(&XyzImage::new(s.xyz.clone())?)?.into_raster());
        }
    }
    let inv_target: Vec<&Raster> = inv_target.iter().collect();
    let for_target: Vec<&Raster> = for_target.iter().collect();

    let x_in = g.constant(tile(&srgb)?);
    let l_in = g.constant(tile(&xyz)?);
    let e = g.constant(exif_tensor(&exif_all));
    let ctx = net::context(g, &model.params, cfg, &cams)?;
    let lhat = net::run_module(g, &model.params, cfg, Direction::Inverse, x_in, e, ctx)?.output;
    let ihat = net::run_module(g, &model.params, cfg, Direction::Forward, l_in, e, ctx)?.output;
    let t_inv = g.constant(Raster::batch_to_tensor(&inv_target)?);
    let t_for = g.constant(Raster::batch_to_tensor(&for_target)?);
    let d_inv = g.sub(lhat, t_inv)?;
    let d_for = g.sub(ihat, t_for)?;

    let [_, c, h, w] = g.value(d_inv).dims4();
    let half = |first: bool| {
        let mut m = Tensor::<f32>::zeros(&[reps * n, c, h, w]);
        let per = n * c * h * w;
        let range = if first { 0..per } else { per..2 * per };
        for v in &mut m.data_mut()[range] {
            *v = 1.0;
        }
        m
    };
    let cam_mask = half(true);
    let l_inv = g.masked_mean_abs(d_inv, &cam_mask)?;
    let l_for = g.masked_mean_abs(d_for, &cam_mask)?;
    let mut total = g.add(l_inv, l_for)?;
    let mut l_nrr_v = 0.0;
    if with_nrr {
        let neutral = half(false);
        let ni = g.masked_mean_abs(d_inv, &neutral)?;
        let nf = g.masked_mean_abs(d_for, &neutral)?;
        let nrr = g.add(ni, nf)?;
        l_nrr_v = g.value(nrr).data()[0] as f64;
        let weighted = g.scale(nrr, lambda);
        total = g.add(total, weighted)?;
    }
    let lb = LossBreakdown {
        l_inv: g.value(l_inv).data()[0] as f64,
        l_for: g.value(l_for).data()[0] as f64,
        l_fbc: 0.0,
        l_nrr: l_nrr_v,
        total: g.value(total).data()[0] as f64,
    };
    Ok((total, lb))
}

/// `‖s(I) − g(I, ∅)‖₁ + ‖s⁻¹(L) − h(L, ∅)‖₁` for one image pair.
pub fn nrr_loss(model: &UniIspModel, srgb: &SrgbImage, xyz: &XyzImage, exif: &ExifParams) -> Result<f64> {
    let lhat = model.inverse_isp(srgb, None, exif)?;
    let ihat = model.forward_isp(xyz, None, exif)?;
    Ok(loss_inverse(&lhat, &srgb_to_xyz(srgb)?)? + loss_forward(&ihat, &xyz_to_srgb(xyz)?)?)
}

fn cross_objective(
    g: &mut Graph<f32>,
    model: &UniIspModel,
    batch: &[CrossSample],
    cfg: &TrainConfig,
) -> Result<(Var, LossBreakdown, CrossInstrumentation)> {
    for s in batch {
        if s.camera_a == s.camera_b {
            return Err(Error::InvalidArgument(format!("cross sample needs two cameras, got `{}` twice", s.camera_a)));
        }
    }
    let mc = &model.config;
    let srgb: Vec<&Raster> = batch.iter().map(|s| &s.srgb_a).collect();
    let ea: Vec<ExifParams> = batch.iter().map(|s| s.exif_a).collect();
    let eb: Vec<ExifParams> = batch.iter().map(|s| s.exif_b).collect();
    let ca: Vec<Option<&str>> = batch.iter().map(|s| Some(s.camera_a.as_str())).collect();
    let cb: Vec<Option<&str>> = batch.iter().map(|s| Some(s.camera_b.as_str())).collect();

    let x = g.constant(Raster::batch_to_tensor(&srgb)?);
    let ea = g.constant(exif_tensor(&ea));
    let eb = g.constant(exif_tensor(&eb));
    let ctx_a = net::context(g, &model.params, mc, &ca)?;
    let ctx_b = net::context(g, &model.params, mc, &cb)?;
    let lhat = net::run_module(g, &model.params, mc, Direction::Inverse, x, ea, ctx_a)?.output;
    let ihat = net::run_module(g, &model.params, mc, Direction::Forward, lhat, eb, ctx_b)?.output;
    let used_predicted_xyz = g.requires_grad(lhat);

    let warped = Raster::batch_to_tensor(&batch.iter().map(|s| &s.warped_b).collect::<Vec<_>>())?;
    let pristine = Raster::batch_to_tensor(&batch.iter().map(|s| &s.pristine_b).collect::<Vec<_>>())?;
    let mask = mask_tensor(&batch.iter().map(|s| &s.mask).collect::<Vec<_>>())?;
    let (loss, freq) = match cfg.cross_loss {
        CrossLoss::Fbc => {
            let t = fbc_loss(g, ihat, &warped, &pristine, &mask, &cfg.fbc())?;
            (t.total, t.freq.is_some())
        }
        CrossLoss::WarpedL1 => (warped_l1_loss(g, ihat, &warped, &mask)?, false),
    };
    let v = g.value(loss).data()[0] as f64;
    let lb = LossBreakdown { l_fbc: v, total: v, ..Default::default() };
    Ok((loss, lb, CrossInstrumentation { used_predicted_xyz, freq_term_applied: freq }))
}

/// Optimizer state plus the model being trained.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: UniIspModel,
    pub adam: Adam<f32>,
    pub step: usize,
    rng: ChaCha8Rng,
    pub last_cross: CrossInstrumentation,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    step: usize,
    rng_word_pos: String,
    adam_step: u64,
    best_score: Option<f64>,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: UniIspModel) -> Result<Self> {
        cfg.validate()?;
        let adam = Adam::new(cfg.beta1, cfg.beta2, cfg.adam_eps, Some(cfg.clip_norm));
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd1b5_4a32_d192_ed03);
        Ok(Trainer { cfg, model, adam, step: 0, rng, last_cross: CrossInstrumentation::default() })
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.step, self.cfg.steps, self.cfg.lr_max, self.cfg.lr_min)
    }

    fn apply(&mut self, g: &Graph<f32>, loss: Var, lb: &LossBreakdown) -> Result<()> {
        finite(self.step, lb, "loss")?;
        let grads = g.backward(loss)?;
        let lr = self.lr();
        let norm = self.adam.step(&mut self.model.params, &grads, lr);
        if !norm.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step, detail: format!("gradient norm {norm}") });
        }
        self.step += 1;
        Ok(())
    }

    /// Self-camera step: `L_Inv + L_For + λ·L_NRR`, then one optimizer update.
    pub fn train_step_self(&mut self, batch: &[SelfSample]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut g = Graph::new();
        let (loss, lb) = self_objective(&mut g, &self.model, batch, self.cfg.lambda_nrr)?;
        self.apply(&g, loss, &lb)?;
        Ok(lb)
    }

    /// Cross-camera step through `h(g(I_a, E_a), E_b)` with the configured loss.
    pub fn train_step_cross(&mut self, batch: &[CrossSample]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut g = Graph::new();
        let (loss, lb, inst) = cross_objective(&mut g, &self.model, batch, &self.cfg)?;
        self.last_cross = inst;
        self.apply(&g, loss, &lb)?;
        Ok(lb)
    }

    fn augment(&mut self, rs: &mut [&mut Raster]) -> Result<()> {
        let p = self.cfg.patch_size;
        let (h, w) = (rs[0].height(), rs[0].width());
        if p > h || p > w {
            return Err(Error::Config(format!("patch size {p} exceeds frame {h}×{w}")));
        }
        let (y0, x0) = (self.rng.gen_range(0..=h - p), self.rng.gen_range(0..=w - p));
        let (fh, fv) = if self.cfg.flips { (self.rng.gen_bool(0.5), self.rng.gen_bool(0.5)) } else { (false, false) };
        for r in rs.iter_mut() {
            let mut out = if p < h || p < w { r.crop(y0, x0, p, p)? } else { (**r).clone() };
            if fh {
                out = out.flip_horizontal();
            }
            if fv {
                out = out.flip_vertical();
            }
            **r = out;
        }
        Ok(())
    }

    fn camera_pool(&self, source: &dyn SampleSource) -> Result<Vec<(usize, String)>> {
        let ids = source.camera_ids();
        let chosen: Vec<String> = if self.cfg.cameras.is_empty() { ids.to_vec() } else { self.cfg.cameras.clone() };
        chosen.into_iter().map(|c| source.camera_index(&c).map(|i| (i, c))).collect()
    }

    pub fn sample_self(&mut self, source: &dyn SampleSource) -> Result<Vec<SelfSample>> {
        let pool = self.camera_pool(source)?;
        let scenes = source.splits().get(Split::Train).to_vec();
        if scenes.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let scene = scenes[self.rng.gen_range(0..scenes.len())];
            let (ci, id) = pool[self.rng.gen_range(0..pool.len())].clone();
            let data = source.scene(scene)?;
            let mut srgb = data.srgb[ci].raster().clone();
            let mut xyz = data.xyz.raster().clone();
            self.augment(&mut [&mut srgb, &mut xyz])?;
            out.push(SelfSample { srgb, xyz, exif: data.exif[ci], camera: id });
        }
        Ok(out)
    }

    pub fn sample_cross(&mut self, source: &dyn SampleSource) -> Result<Vec<CrossSample>> {
        let pool = self.camera_pool(source)?;
        if pool.len() < 2 {
            return Err(Error::Config("cross-camera steps need at least two cameras".into()));
        }
        let scenes = source.splits().get(Split::Train).to_vec();
        let mut out = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let scene = scenes[self.rng.gen_range(0..scenes.len())];
            let a = self.rng.gen_range(0..pool.len());
            let mut b = self.rng.gen_range(0..pool.len() - 1);
            if b >= a {
                b += 1;
            }
            let ((ia, ida), (ib, idb)) = (pool[a].clone(), pool[b].clone());
            let data = source.scene(scene)?;
            let pair = source.pair(scene, ia, ib)?;
            let mut srgb_a = data.srgb[ia].raster().clone();
            let mut warped_b = pair.image.into_raster();
            let mut pristine_b = data.srgb[ib].raster().clone();
            let mut mask = pair.mask;
            self.augment(&mut [&mut srgb_a, &mut warped_b, &mut pristine_b, &mut mask])?;
            out.push(CrossSample {
                srgb_a,
                exif_a: data.exif[ia],
                camera_a: ida,
                warped_b,
                pristine_b,
                mask,
                exif_b: data.exif[ib],
                camera_b: idb,
            });
        }
        Ok(out)
    }

    /// Draws a batch for the current step and trains on it.
    pub fn step_auto(&mut self, source: &dyn SampleSource) -> Result<LossBreakdown> {
        if self.cfg.is_cross_step(self.step) {
            let b = self.sample_cross(source)?;
            self.train_step_cross(&b)
        } else {
            let b = self.sample_self(source)?;
            self.train_step_self(&b)
        }
    }

    fn state(&self, best: Option<f64>) -> Result<Checkpoint> {
        let (adam_step, moments) = self.adam.export_state();
        let mut extra = Vec::with_capacity(moments.len() * 2);
        for (name, m, v) in moments {
            extra.push((format!("adam.m.{name}"), m));
            extra.push((format!("adam.v.{name}"), v));
        }
        let st = TrainerState {
            step: self.step,
            rng_word_pos: self.rng.get_word_pos().to_string(),
            adam_step,
            best_score: best,
            config: self.cfg.clone(),
        };
        Ok(Checkpoint { model: self.model.clone(), state: Some(serde_json::to_value(st)?), extra })
    }

    /// Restores a trainer from a checkpoint written by [`train`].
    pub fn from_checkpoint(ck: Checkpoint) -> Result<(Self, Option<f64>)> {
        let st: TrainerState = serde_json::from_value(ck.state.ok_or_else(|| Error::Config("checkpoint has no trainer state".into()))?)?;
        let mut t = Trainer::new(st.config, ck.model)?;
        t.step = st.step;
        let pos: u128 = st.rng_word_pos.parse().map_err(|_| Error::Config("bad RNG position".into()))?;
        t.rng.set_word_pos(pos);
        let mut moments: Vec<(String, Tensor<f32>, Tensor<f32>)> = Vec::new();
        let mut pending: Option<(String, Tensor<f32>)> = None;
        for (name, tensor) in ck.extra {
            if let Some(p) = name.strip_prefix("adam.m.") {
                pending = Some((p.to_string(), tensor));
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                match pending.take() {
                    Some((pm, m)) if pm == p => moments.push((pm, m, tensor)),
                    _ => return Err(Error::Config(format!("unpaired optimizer moment `{name}`"))),
                }
            }
        }
        t.adam.import_state(st.adam_step, moments);
        Ok((t, st.best_score))
    }
}

/// Per-camera validation quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraEval {
    pub camera: String,
    pub psnr_inv: f64,
    pub psnr_for: f64,
    pub ssim_inv: f64,
    pub ssim_for: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cameras: Vec<CameraEval>,
    pub psnr_inv: f64,
    pub psnr_for: f64,
    pub ssim_inv: f64,
    pub ssim_for: f64,
}

impl EvalReport {
    pub fn score(&self) -> f64 {
        0.5 * (self.psnr_inv + self.psnr_for)
    }
}

const EVAL_BATCH: usize = 8;

/// Inverse/forward quality of `model` on `scenes`, per camera. Cameras are
/// `(source index, model camera id)`; PSNR is averaged in dB over images.
pub fn evaluate(model: &UniIspModel, source: &dyn SampleSource, scenes: &[usize], cameras: &[(usize, String)]) -> Result<EvalReport> {
    if scenes.is_empty() || cameras.is_empty() {
        return Err(Error::InvalidArgument("evaluation needs scenes and cameras".into()));
    }
    let data: Vec<_> = scenes.iter().map(|&s| source.scene(s)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (ci, id) in cameras {
        let (mut pi, mut pf, mut si, mut sf) = (0.0, 0.0, 0.0, 0.0);
        for chunk in data.chunks(EVAL_BATCH) {
            let srgb: Vec<&Raster> = chunk.iter().map(|d| d.srgb[*ci].raster()).collect();
            let xyz: Vec<&Raster> = chunk.iter().map(|d| d.xyz.raster()).collect();
            let exif: Vec<ExifParams> = chunk.iter().map(|d| d.exif[*ci]).collect();
            let cams = vec![Some(id.as_str()); chunk.len()];
            let inv = model.run_batch(Direction::Inverse, &srgb, &cams, &exif)?;
            let fwd = model.run_batch(Direction::Forward, &xyz, &cams, &exif)?;
            for k in 0..chunk.len() {
                let qi = compute_quality(&inv[k], xyz[k], 1.0)?;
                let qf = compute_quality(&fwd[k], srgb[k], 1.0)?;
                pi += qi.psnr_db.min(100.0);
                pf += qf.psnr_db.min(100.0);
                si += qi.ssim_mean;
                sf += qf.ssim_mean;
            }
        }
        let n = data.len() as f64;
        out.push(CameraEval { camera: id.clone(), psnr_inv: pi / n, psnr_for: pf / n, ssim_inv: si / n, ssim_for: sf / n });
    }
    let m = out.len() as f64;
    Ok(EvalReport {
        psnr_inv: out.iter().map(|c| c.psnr_inv).sum::<f64>() / m,
        psnr_for: out.iter().map(|c| c.psnr_for).sum::<f64>() / m,
        ssim_inv: out.iter().map(|c| c.ssim_inv).sum::<f64>() / m,
        ssim_for: out.iter().map(|c| c.ssim_for).sum::<f64>() / m,
        cameras: out,
    })
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub losses: LossBreakdown,
    pub val: EvalReport,
}

pub const METRICS_HEADER: &str = "step,l_inv,l_for,l_fbc,l_nrr,total,val_psnr_inv,val_psnr_for,val_ssim_inv,val_ssim_for";

impl MetricsRow {
    pub fn csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.4},{:.4},{:.5},{:.5}",
            self.step, l.l_inv, l.l_for, l.l_fbc, l.l_nrr, l.total, self.val.psnr_inv, self.val.psnr_for, self.val.ssim_inv, self.val.ssim_for
        )
    }
}

pub const BEST_CHECKPOINT: &str = "best.uisp";
pub const LAST_CHECKPOINT: &str = "last.uisp";
pub const LAST_GOOD_CHECKPOINT: &str = "last_good.uisp";
pub const METRICS_FILE: &str = "metrics.csv";

/// Where a run writes its artifacts; `None` keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    /// Continue from `out_dir/last.uisp` if present.
    pub resume: bool,
    /// Start from this model instead of a fresh initialization (fine-tuning).
    pub init: Option<UniIspModel>,
}

pub struct TrainOutcome {
    pub model: UniIspModel,
    pub best: Option<UniIspModel>,
    pub history: Vec<MetricsRow>,
}

fn validation_scenes(cfg: &TrainConfig, source: &dyn SampleSource) -> Vec<usize> {
    let mut v = source.splits().get(Split::Val).to_vec();
    if v.is_empty() {
        v = source.splits().get(Split::Test).to_vec();
    }
    if cfg.val_scenes > 0 {
        v.truncate(cfg.val_scenes);
    }
    v
}

/// Full training loop: interleaved self/cross steps, validation every
/// `val_interval` steps, best/last checkpoints and an append-only CSV log.
pub fn train(cfg: &TrainConfig, source: &dyn SampleSource, opts: &RunOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let last_path = opts.out_dir.as_ref().map(|d| d.join(LAST_CHECKPOINT));
    let (mut trainer, mut best_score) = match &last_path {
        Some(p) if opts.resume && p.exists() => {
            let (t, b) = Trainer::from_checkpoint(load_checkpoint(p)?)?;
            if t.cfg != *cfg {
                return Err(Error::Config("resume checkpoint was trained with a different config".into()));
            }
            log::info!("resuming from {} at step {}", p.display(), t.step);
            (t, b)
        }
        _ => {
            let ids = source.camera_ids().to_vec();
            let chosen = if cfg.cameras.is_empty() { ids } else { cfg.cameras.clone() };
            let model = match &opts.init {
                Some(m) => {
                    if m.config != cfg.model {
                        return Err(Error::Config("initial model does not match the configured architecture".into()));
                    }
                    for c in &chosen {
                        source.camera_index(c)?;
                        if !m.has_camera(c) {
                            return Err(Error::UnknownCamera(c.clone()));
                        }
                    }
                    m.clone()
                }
                None => {
                    let mut m = UniIspModel::new(cfg.model.clone(), cfg.seed)?;
                    for c in &chosen {
                        source.camera_index(c)?;
                        m.register_camera(c)?;
                    }
                    m
                }
            };
            (Trainer::new(cfg.clone(), model)?, None)
        }
    };
    if let Some(d) = &opts.out_dir {
        fs::create_dir_all(d).at(d)?;
        let mp = d.join(METRICS_FILE);
        if !(opts.resume && mp.exists()) || trainer.step == 0 {
            fs::write(&mp, format!("{METRICS_HEADER}\n")).at(&mp)?;
        }
    }
    let cams = trainer.camera_pool(source)?;
    let val = validation_scenes(cfg, source);
    let mut history = Vec::new();
    let mut best_model = None;
    let mut acc = LossBreakdown::default();
    let mut acc_n = 0usize;
    let mut last_good = trainer.model.clone();
    while trainer.step < cfg.steps {
        let step = trainer.step;
        let lb = match trainer.step_auto(source) {
            Ok(lb) => lb,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                if let Some(d) = &opts.out_dir {
                    save_checkpoint(&Checkpoint::model_only(last_good), &d.join(LAST_GOOD_CHECKPOINT))?;
                }
                log::error!("aborting at step {step}: {e}");
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        acc.l_inv += lb.l_inv;
        acc.l_for += lb.l_for;
        acc.l_fbc += lb.l_fbc;
        acc.l_nrr += lb.l_nrr;
        acc.total += lb.total;
        acc_n += 1;
        if trainer.step % cfg.val_interval == 0 {
            last_good = trainer.model.clone();
            let k = acc_n.max(1) as f64;
            let losses = LossBreakdown { l_inv: acc.l_inv / k, l_for: acc.l_for / k, l_fbc: acc.l_fbc / k, l_nrr: acc.l_nrr / k, total: acc.total / k };
            acc = LossBreakdown::default();
            acc_n = 0;
            let report = evaluate(&trainer.model, source, &val, &cams)?;
            let row = MetricsRow { step: trainer.step, losses, val: report };
            log::info!("step {}: {}", row.step, row.csv());
            let improved = best_score.is_none_or(|b| row.val.score() > b);
            if improved {
                best_score = Some(row.val.score());
                best_model = Some(trainer.model.clone());
            }
            if let Some(d) = &opts.out_dir {
                let mp = d.join(METRICS_FILE);
                let mut f = OpenOptions::new().append(true).open(&mp).at(&mp)?;
                writeln!(f, "{}", row.csv()).at(&mp)?;
                if improved {
                    save_checkpoint(&Checkpoint::model_only(trainer.model.clone()), &d.join(BEST_CHECKPOINT))?;
                }
                save_checkpoint(&trainer.state(best_score)?, &d.join(LAST_CHECKPOINT))?;
            }
            history.push(row);
        }
    }
    if let Some(d) = &opts.out_dir {
        save_checkpoint(&trainer.state(best_score)?, &d.join(LAST_CHECKPOINT))?;
    }
    Ok(TrainOutcome { model: trainer.model, best: best_model, history })
}

/// Reads the metrics CSV written by [`train`] (data rows only).
pub fn read_metrics(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).at(path)?;
    Ok(text.lines().skip(1).filter(|l| !l.is_empty()).map(str::to_string).collect())
}
