//! Model operations on arbitrary image sizes: inputs are reflect-padded to the
//! model's spatial multiple and outputs cropped back.

use std::path::Path;

use anyhow::Result;
use uniisp_core::apps::{self, ForensicsReport, HdrStack, SpliceMap};
use uniisp_core::eval::model_key;
use uniisp_core::model::{load_checkpoint, UniIspModel};
use uniisp_core::synth::ExifParams;
use uniisp_core::{Raster, SrgbImage, XyzImage};

use crate::io::{crop_to, pad_to_multiple};

pub struct Engine {
    pub model: UniIspModel,
    pub checkpoint_id: String,
}

fn pad_srgb(img: &SrgbImage, m: usize) -> Result<SrgbImage> {
    Ok(SrgbImage::new(pad_to_multiple(img.raster(), m))?)
}

fn crop_srgb(img: SrgbImage, h: usize, w: usize) -> Result<SrgbImage> {
    Ok(SrgbImage::new(crop_to(img.into_raster(), h, w)?)?)
}

impl Engine {
    pub fn new(model: UniIspModel) -> Self {
        let checkpoint_id = model_key(&model)[..16].to_string();
        Engine { model, checkpoint_id }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Engine::new(load_checkpoint(path)?.model))
    }

    fn multiple(&self) -> usize {
        self.model.config.multiple()
    }

    pub fn check_camera(&self, id: &str) -> Result<(), uniisp_core::Error> {
        if self.model.has_camera(id) {
            Ok(())
        } else {
            Err(uniisp_core::Error::UnknownCamera(id.to_string()))
        }
    }

    pub fn invert(&self, img: &SrgbImage, camera: Option<&str>, exif: &ExifParams) -> Result<XyzImage> {
        let (h, w) = (img.height(), img.width());
        let out = self.model.inverse_isp(&pad_srgb(img, self.multiple())?, camera, exif)?;
        Ok(XyzImage::new(crop_to(out.into_raster(), h, w)?)?)
    }

    pub fn render(&self, xyz: &XyzImage, camera: Option<&str>, exif: &ExifParams) -> Result<SrgbImage> {
        let (h, w) = (xyz.height(), xyz.width());
        let padded = XyzImage::new(pad_to_multiple(xyz.raster(), self.multiple()))?;
        crop_srgb(self.model.forward_isp(&padded, camera, exif)?, h, w)
    }

    pub fn transfer(&self, img: &SrgbImage, source: &str, target: &str, exif: &ExifParams) -> Result<SrgbImage> {
        let out = apps::transfer(&self.model, &pad_srgb(img, self.multiple())?, source, target, exif)?;
        crop_srgb(out, img.height(), img.width())
    }

    pub fn interpolate(&self, img: &SrgbImage, source: &str, target: &str, alpha: f64, exif: &ExifParams) -> Result<SrgbImage> {
        let out = apps::interpolate(&self.model, &pad_srgb(img, self.multiple())?, source, target, alpha, exif)?;
        crop_srgb(out, img.height(), img.width())
    }

    pub fn identify(&self, img: &SrgbImage, candidates: &[&str], exif: &ExifParams) -> Result<ForensicsReport> {
        Ok(apps::identify_source_camera(&self.model, &pad_srgb(img, self.multiple())?, candidates, exif)?)
    }

    pub fn splice(&self, img: &SrgbImage, camera: &str, exif: &ExifParams, tau: f64) -> Result<SpliceMap> {
        let (h, w) = (img.height(), img.width());
        let m = apps::detect_splice(&self.model, &pad_srgb(img, self.multiple())?, camera, exif, tau)?;
        let crop = |r: Raster| crop_to(r, h, w);
        Ok(SpliceMap { ssim_map: crop(m.ssim_map)?, raw_mask: crop(m.raw_mask)?, mask: crop(m.mask)?, tau: m.tau })
    }

    pub fn hdr(&self, img: &SrgbImage, camera: &str, exif: &ExifParams, gains: &[f64]) -> Result<HdrStack> {
        self.check_camera(camera)?;
        let xyz = self.invert(img, Some(camera), exif)?;
        Ok(apps::hdr_from_xyz(&xyz, gains)?)
    }
}
