use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::exif::ExifParams;
use super::profile::{make_camera_profile, CameraProfile};
use super::render::render_profile;
use super::scene::generate_scene;
use super::warp::{warp_with_bias, Warped};
use crate::error::{Error, IoContext, Result};
use crate::imgf;
use crate::raster::{SrgbImage, XyzImage};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub cameras: usize,
    pub scenes: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub max_disp: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { cameras: 5, scenes: 200, height: 64, width: 64, seed: 0, val_fraction: 0.1, test_fraction: 0.1, max_disp: 3.0 }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cameras < 2 {
            return Err(Error::Config("at least two cameras are required".into()));
        }
        if self.scenes == 0 {
            return Err(Error::Config("scene count must be positive".into()));
        }
        let fr = self.val_fraction + self.test_fraction;
        if !(0.0..1.0).contains(&self.val_fraction) || !(0.0..1.0).contains(&self.test_fraction) || fr >= 1.0 {
            return Err(Error::Config("val/test fractions must be in [0, 1) and leave a training split".into()));
        }
        if !(self.max_disp >= 0.0 && self.max_disp.is_finite()) {
            return Err(Error::Config("max_disp must be non-negative".into()));
        }
        Ok(())
    }

    pub fn profiles(&self) -> Vec<CameraProfile> {
        (0..self.cameras).map(|i| make_camera_profile(self.seed, i)).collect()
    }

    pub fn splits(&self) -> Splits {
        let mut idx: Vec<usize> = (0..self.scenes).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x3c6e_f372_fe94_f82b));
        let n_test = (self.scenes as f64 * self.test_fraction).round() as usize;
        let n_val = (self.scenes as f64 * self.val_fraction).round() as usize;
        let mut test = idx[..n_test].to_vec();
        let mut val = idx[n_test..n_test + n_val].to_vec();
        let mut train = idx[n_test + n_val..].to_vec();
        test.sort_unstable();
        val.sort_unstable();
        train.sort_unstable();
        Splits { train, val, test }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Scene indices per split; disjoint and covering every scene.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: DatasetConfig,
    pub camera_ids: Vec<String>,
    pub scene_count: usize,
    pub splits: Splits,
    pub profiles: Vec<CameraProfile>,
    /// SHA-256 over every data file (relative path and bytes, in path order).
    pub checksum: String,
}

pub fn scene_id(index: usize) -> String {
    format!("s{index:04}")
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for &p in parts {
        h = (h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15)).wrapping_mul(0x0000_0100_0000_01b3);
        h ^= h >> 29;
    }
    h
}

pub fn scene_seed(seed: u64, scene: usize) -> u64 {
    mix(seed, &[1, scene as u64])
}

pub fn exif_for(seed: u64, scene: usize, camera: usize) -> ExifParams {
    ExifParams::sample_seeded(mix(seed, &[2, scene as u64, camera as u64]))
}

pub fn warp_seed(seed: u64, scene: usize, a: usize, b: usize) -> u64 {
    mix(seed, &[3, scene as u64, a as u64, b as u64])
}

/// One scene: shared radiance plus every camera's rendering and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneData {
    pub xyz: XyzImage,
    pub srgb: Vec<SrgbImage>,
    pub exif: Vec<ExifParams>,
}

pub fn generate_scene_data(config: &DatasetConfig, profiles: &[CameraProfile], scene: usize) -> Result<SceneData> {
    let xyz = generate_scene(scene_seed(config.seed, scene), config.height, config.width)?;
    let mut srgb = Vec::with_capacity(profiles.len());
    let mut exif = Vec::with_capacity(profiles.len());
    for (c, p) in profiles.iter().enumerate() {
        let e = exif_for(config.seed, scene, c);
        srgb.push(render_profile(&xyz, p, &e)?);
        exif.push(e);
    }
    Ok(SceneData { xyz, srgb, exif })
}

/// Warped target for the ordered pair `(a, b)`: camera `b`'s rendering
/// aligned to camera `a`'s frame.
pub fn generate_pair(config: &DatasetConfig, data: &SceneData, scene: usize, a: usize, b: usize) -> Result<Warped> {
    warp_with_bias(&data.srgb[b], warp_seed(config.seed, scene, a, b), config.max_disp)
}

/// Read-only access to multi-camera training data.
pub trait SampleSource: Sync {
    fn camera_ids(&self) -> &[String];
    fn splits(&self) -> &Splits;
    fn scene(&self, scene: usize) -> Result<SceneData>;
    fn pair(&self, scene: usize, a: usize, b: usize) -> Result<Warped>;

    fn camera_index(&self, id: &str) -> Result<usize> {
        self.camera_ids().iter().position(|c| c == id).ok_or_else(|| Error::UnknownCamera(id.into()))
    }
}

/// Scenes rendered into memory; warped pairs are recomputed on demand.
pub struct SyntheticSource {
    pub config: DatasetConfig,
    pub profiles: Vec<CameraProfile>,
    camera_ids: Vec<String>,
    splits: Splits,
    scenes: Vec<SceneData>,
}

impl SyntheticSource {
    pub fn new(config: DatasetConfig) -> Result<Self> {
        config.validate()?;
        let profiles = config.profiles();
        Self::with_profiles(config, profiles)
    }

    pub fn with_profiles(config: DatasetConfig, profiles: Vec<CameraProfile>) -> Result<Self> {
        config.validate()?;
        let scenes = (0..config.scenes).map(|s| generate_scene_data(&config, &profiles, s)).collect::<Result<Vec<_>>>()?;
        Ok(SyntheticSource {
            camera_ids: profiles.iter().map(|p| p.camera_id.clone()).collect(),
            splits: config.splits(),
            config,
            profiles,
            scenes,
        })
    }

    pub fn scene_ref(&self, scene: usize) -> &SceneData {
        &self.scenes[scene]
    }
}

impl SampleSource for SyntheticSource {
    fn camera_ids(&self) -> &[String] {
        &self.camera_ids
    }

    fn splits(&self) -> &Splits {
        &self.splits
    }

    fn scene(&self, scene: usize) -> Result<SceneData> {
        self.scenes.get(scene).cloned().ok_or_else(|| Error::InvalidArgument(format!("no scene {scene}")))
    }

    fn pair(&self, scene: usize, a: usize, b: usize) -> Result<Warped> {
        let data = self.scenes.get(scene).ok_or_else(|| Error::InvalidArgument(format!("no scene {scene}")))?;
        generate_pair(&self.config, data, scene, a, b)
    }
}

fn scene_dir(root: &Path, scene: usize) -> PathBuf {
    root.join("scenes").join(scene_id(scene))
}

fn pair_stem(a: &str, b: &str) -> String {
    format!("warp_{a}_to_{b}")
}

/// Generates the dataset under `dir`. Refuses to overwrite an existing
/// manifest unless `force` is set.
pub fn build_dataset(config: &DatasetConfig, dir: &Path, force: bool) -> Result<DatasetManifest> {
    config.validate()?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !force {
        return Err(Error::AlreadyExists { path: manifest_path });
    }
    fs::create_dir_all(dir).at(dir)?;
    let profiles = config.profiles();
    let ids: Vec<String> = profiles.iter().map(|p| p.camera_id.clone()).collect();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for s in 0..config.scenes {
        let data = generate_scene_data(config, &profiles, s)?;
        let sd = scene_dir(dir, s);
        fs::create_dir_all(&sd).at(&sd)?;
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            let path = sd.join(&name);
            fs::write(&path, &bytes).at(&path)?;
            files.push((format!("scenes/{}/{name}", scene_id(s)), bytes));
            Ok(())
        };
        put("xyz.imgf".into(), imgf::encode(data.xyz.raster()))?;
        for (c, id) in ids.iter().enumerate() {
            put(format!("{id}.imgf"), imgf::encode(data.srgb[c].raster()))?;
            put(format!("{id}.exif.json"), serde_json::to_vec_pretty(&data.exif[c])?)?;
        }
        for a in 0..ids.len() {
            for b in 0..ids.len() {
                if a == b {
                    continue;
                }
                let w = generate_pair(config, &data, s, a, b)?;
                let stem = pair_stem(&ids[a], &ids[b]);
                put(format!("{stem}.imgf"), imgf::encode(w.image.raster()))?;
                put(format!("{stem}_mask.imgf"), imgf::encode(&w.mask))?;
                put(format!("{stem}_flow.imgf"), imgf::encode(&w.flow))?;
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    let mut hasher = Sha256::new();
    for (name, bytes) in &files {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        config: config.clone(),
        camera_ids: ids,
        scene_count: config.scenes,
        splits: config.splits(),
        profiles,
        checksum: hex::encode(hasher.finalize()),
    };
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?).at(&tmp)?;
    fs::rename(&tmp, &manifest_path).at(&manifest_path)?;
    log::info!("wrote {} files for {} scenes to {}", files.len(), config.scenes, dir.display());
    Ok(manifest)
}

/// On-disk dataset. Files are read lazily on every access; `reads` counts
/// them and `pair_reads` counts the cross-camera pair files among them.
pub struct Dataset {
    root: PathBuf,
    pub manifest: DatasetManifest,
    reads: AtomicUsize,
    pair_reads: AtomicUsize,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).at(&path)?;
        let manifest: DatasetManifest = serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt { path: path.clone(), reason: e.to_string() })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::Version { found: manifest.version, expected: MANIFEST_VERSION });
        }
        Ok(Dataset { root: dir.to_path_buf(), manifest, reads: AtomicUsize::new(0), pair_reads: AtomicUsize::new(0) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn reads(&self) -> usize {
        self.reads.load(Ordering::Relaxed)
    }

    pub fn pair_reads(&self) -> usize {
        self.pair_reads.load(Ordering::Relaxed)
    }

    fn read_raster(&self, path: &Path) -> Result<crate::raster::Raster> {
        self.reads.fetch_add(1, Ordering::Relaxed);
        imgf::read(path)
    }

    fn check_scene(&self, scene: usize) -> Result<PathBuf> {
        if scene >= self.manifest.scene_count {
            return Err(Error::InvalidArgument(format!("no scene {scene}")));
        }
        Ok(scene_dir(&self.root, scene))
    }

    pub fn xyz(&self, scene: usize) -> Result<XyzImage> {
        let sd = self.check_scene(scene)?;
        XyzImage::new(self.read_raster(&sd.join("xyz.imgf"))?)
    }

    pub fn srgb(&self, scene: usize, camera: usize) -> Result<SrgbImage> {
        let sd = self.check_scene(scene)?;
        let id = self.id(camera)?;
        SrgbImage::new(self.read_raster(&sd.join(format!("{id}.imgf")))?)
    }

    pub fn exif(&self, scene: usize, camera: usize) -> Result<ExifParams> {
        let sd = self.check_scene(scene)?;
        let path = sd.join(format!("{}.exif.json", self.id(camera)?));
        self.reads.fetch_add(1, Ordering::Relaxed);
        let bytes = fs::read(&path).at(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt { path, reason: e.to_string() })
    }

    fn id(&self, camera: usize) -> Result<&str> {
        self.manifest.camera_ids.get(camera).map(String::as_str).ok_or_else(|| Error::UnknownCamera(format!("#{camera}")))
    }
}

impl SampleSource for Dataset {
    fn camera_ids(&self) -> &[String] {
        &self.manifest.camera_ids
    }

    fn splits(&self) -> &Splits {
        &self.manifest.splits
    }

    fn scene(&self, scene: usize) -> Result<SceneData> {
        let n = self.manifest.camera_ids.len();
        Ok(SceneData {
            xyz: self.xyz(scene)?,
            srgb: (0..n).map(|c| self.srgb(scene, c)).collect::<Result<_>>()?,
            exif: (0..n).map(|c| self.exif(scene, c)).collect::<Result<_>>()?,
        })
    }

    fn pair(&self, scene: usize, a: usize, b: usize) -> Result<Warped> {
        let sd = self.check_scene(scene)?;
        let stem = pair_stem(self.id(a)?, self.id(b)?);
        self.pair_reads.fetch_add(3, Ordering::Relaxed);
        Ok(Warped {
            image: SrgbImage::new(self.read_raster(&sd.join(format!("{stem}.imgf")))?)?,
            mask: self.read_raster(&sd.join(format!("{stem}_mask.imgf")))?,
            flow: self.read_raster(&sd.join(format!("{stem}_flow.imgf")))?,
        })
    }
}
