mod checkpoint;
mod config;
pub mod net;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use uniisp_tensor::{Graph, Init, ParamStore, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use net::{embedding_name, Direction};

use crate::error::{Error, Result};
use crate::raster::{Raster, SrgbImage, XyzImage};
use crate::synth::ExifParams;

/// Initial embedding entries are uniform in `±EMBEDDING_INIT`.
pub const EMBEDDING_INIT: f64 = 0.5;

/// `N×3×1×1` tensor of normalized EXIF values.
pub fn exif_tensor(exif: &[ExifParams]) -> Tensor<f32> {
    let data = exif.iter().flat_map(|e| e.normalized()).collect();
    Tensor::from_vec(&[exif.len(), 3, 1, 1], data).expect("exif shape")
}

/// Encoder state of one image, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedFeatures {
    pub input: Tensor<f32>,
    pub exif: Tensor<f32>,
    pub skips: Vec<Tensor<f32>>,
    /// `B`, the features entering the embedding interaction.
    pub bottleneck: Tensor<f32>,
}

/// Inverse module `g`, forward module `h` and the device embedding table.
#[derive(Clone, Debug, PartialEq)]
pub struct UniIspModel {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    cameras: Vec<String>,
    seed: u64,
}

fn camera_seed(seed: u64, id: &str) -> u64 {
    id.bytes().fold(seed ^ 0x1405_7b7e_f767_814f, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

impl UniIspModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        net::register_module(&mut params, &config, Direction::Inverse, &mut rng)?;
        net::register_module(&mut params, &config, Direction::Forward, &mut rng)?;
        Ok(UniIspModel { config, params, cameras: Vec::new(), seed })
    }

    pub(crate) fn from_parts(config: ModelConfig, params: ParamStore<f32>, cameras: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        for spec in net::module_specs(&config, Direction::Inverse).into_iter().chain(net::module_specs(&config, Direction::Forward)) {
            let p = params.get(&spec.name).ok_or_else(|| Error::Config(format!("missing parameter `{}`", spec.name)))?;
            if p.value.shape() != spec.shape.as_slice() {
                return Err(Error::Shape(format!("parameter `{}` has shape {:?}, expected {:?}", spec.name, p.value.shape(), spec.shape)));
            }
        }
        for c in &cameras {
            let e = params.get(&embedding_name(c)).ok_or_else(|| Error::Config(format!("missing embedding for `{c}`")))?;
            if e.value.len() != config.embed_dim {
                return Err(Error::Shape(format!("embedding `{c}` has length {}", e.value.len())));
            }
        }
        Ok(UniIspModel { config, params, cameras, seed })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn cameras(&self) -> &[String] {
        &self.cameras
    }

    pub fn has_camera(&self, id: &str) -> bool {
        self.cameras.iter().any(|c| c == id)
    }

    /// Adds a camera with a freshly initialized embedding.
    pub fn register_camera(&mut self, id: &str) -> Result<()> {
        if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(Error::InvalidArgument(format!("invalid camera id {id:?}")));
        }
        if self.has_camera(id) {
            return Err(Error::CameraExists(id.to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(camera_seed(self.seed, id));
        self.params.register(&embedding_name(id), &[self.config.embed_dim], Init::Uniform(EMBEDDING_INIT), &mut rng)?;
        self.cameras.push(id.to_string());
        Ok(())
    }

    pub fn embedding(&self, id: &str) -> Option<&Tensor<f32>> {
        self.params.get(&embedding_name(id)).map(|p| &p.value)
    }

    /// Total parameter count of one module.
    pub fn module_param_count(&self, dir: Direction) -> usize {
        net::module_specs(&self.config, dir).iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    fn check_camera(&self, cam: Option<&str>) -> Result<()> {
        match cam {
            Some(id) if !self.has_camera(id) => Err(Error::UnknownCamera(id.to_string())),
            _ => Ok(()),
        }
    }

    fn check_image(&self, r: &Raster) -> Result<()> {
        let m = self.config.multiple();
        if r.channels() != 3 || !r.height().is_multiple_of(m) || !r.width().is_multiple_of(m) || r.height() == 0 || r.width() == 0 {
            return Err(Error::InvalidImage(format!(
                "model input must be 3-channel with sides divisible by {m}, got {:?}",
                r.dims()
            )));
        }
        Ok(())
    }

    /// Runs one module on a batch; returns outputs in batch order.
    pub fn run_batch(&self, dir: Direction, inputs: &[&Raster], cams: &[Option<&str>], exif: &[ExifParams]) -> Result<Vec<Raster>> {
        if inputs.is_empty() || inputs.len() != cams.len() || inputs.len() != exif.len() {
            return Err(Error::InvalidArgument("batch inputs, cameras and EXIF must have equal non-zero length".into()));
        }
        for (r, c) in inputs.iter().zip(cams) {
            self.check_image(r)?;
            self.check_camera(*c)?;
        }
        let mut g = Graph::new();
        let x = g.constant(Raster::batch_to_tensor(inputs)?);
        let e = g.constant(exif_tensor(exif));
        let ctx = net::context(&mut g, &self.params, &self.config, cams)?;
        let out = net::run_module(&mut g, &self.params, &self.config, dir, x, e, ctx)?;
        let t = g.value(out.output);
        (0..inputs.len()).map(|i| Raster::from_tensor(t, i)).collect()
    }

    fn run_one(&self, dir: Direction, input: &Raster, cam: Option<&str>, exif: &ExifParams) -> Result<Raster> {
        Ok(self.run_batch(dir, &[input], &[cam], std::slice::from_ref(exif))?.remove(0))
    }

    /// `g(I, E)`; `None` selects the neutral embedding.
    pub fn inverse_isp(&self, img: &SrgbImage, cam: Option<&str>, exif: &ExifParams) -> Result<XyzImage> {
        XyzImage::from_clamped(self.run_one(Direction::Inverse, img.raster(), cam, exif)?)
    }

    /// `h(L, E)`; `None` selects the neutral embedding.
    pub fn forward_isp(&self, xyz: &XyzImage, cam: Option<&str>, exif: &ExifParams) -> Result<SrgbImage> {
        SrgbImage::new(self.run_one(Direction::Forward, xyz.raster(), cam, exif)?)
    }

    /// Encoder half of a module.
    pub fn encode(&self, dir: Direction, input: &Raster, exif: &ExifParams) -> Result<EncodedFeatures> {
        self.check_image(input)?;
        let mut g = Graph::new();
        let x = g.constant(input.to_tensor());
        let e = g.constant(exif_tensor(std::slice::from_ref(exif)));
        let enc = net::encode(&mut g, &self.params, &self.config, dir, x, e)?;
        Ok(EncodedFeatures {
            input: g.take_value(x),
            exif: g.take_value(e),
            skips: enc.skips.iter().map(|&s| g.take_value(s)).collect(),
            bottleneck: g.take_value(enc.bottleneck),
        })
    }

    /// Embedding interaction `F = DEIM(B, E)`.
    pub fn interact(&self, dir: Direction, bottleneck: &Tensor<f32>, cam: Option<&str>) -> Result<Tensor<f32>> {
        self.check_camera(cam)?;
        let mut g = Graph::new();
        let b = g.constant(bottleneck.clone());
        let n = bottleneck.shape().first().copied().unwrap_or(0);
        if bottleneck.shape().len() != 4 || n != 1 {
            return Err(Error::Shape(format!("bottleneck must be 1×C×H×W, got {:?}", bottleneck.shape())));
        }
        let ctx = net::context(&mut g, &self.params, &self.config, &[cam])?;
        let f = net::deim(&mut g, &self.params, &self.config, dir, b, ctx)?;
        Ok(g.take_value(f))
    }

    /// Decoder half of a module applied to features shaped like the bottleneck.
    pub fn decode(&self, dir: Direction, features: &Tensor<f32>, enc: &EncodedFeatures) -> Result<Raster> {
        let mut g = Graph::new();
        let f = g.constant(features.clone());
        let encoded = net::Encoded {
            input: g.constant(enc.input.clone()),
            exif: g.constant(enc.exif.clone()),
            skips: enc.skips.iter().map(|s| g.constant(s.clone())).collect(),
            bottleneck: g.constant(enc.bottleneck.clone()),
        };
        if encoded.skips.len() != self.config.scales {
            return Err(Error::Shape(format!("{} skips for {} scales", encoded.skips.len(), self.config.scales)));
        }
        let out = net::decode(&mut g, &self.params, &self.config, dir, f, &encoded)?;
        Raster::from_tensor(g.value(out), 0)
    }

    /// `h_encode`: forward-module encoder on an XYZ image.
    pub fn h_encode(&self, xyz: &XyzImage, exif: &ExifParams) -> Result<EncodedFeatures> {
        self.encode(Direction::Forward, xyz.raster(), exif)
    }

    /// `h_decode`: forward-module decoder on (possibly mixed) features.
    pub fn h_decode(&self, features: &Tensor<f32>, enc: &EncodedFeatures) -> Result<SrgbImage> {
        SrgbImage::new(self.decode(Direction::Forward, features, enc)?)
    }
}
