use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::{srgb_encode, xyz_to_srgb_matrix};
use crate::error::{Error, Result};

pub const GAMMA_RANGE: (f64, f64) = (1.8, 2.6);
pub const SCURVE_RANGE: (f64, f64) = (0.0, 0.6);
pub const SATURATION_RANGE: (f64, f64) = (0.7, 1.4);
pub const VIGNETTE_RANGE: (f64, f64) = (0.0, 0.3);
pub const LOCAL_CONTRAST_RANGE: (f64, f64) = (0.0, 0.4);
pub const BLACK_LIFT_RANGE: (f64, f64) = (0.0, 0.05);
pub const ROW_SUM_RANGE: (f64, f64) = (0.8, 1.2);

/// Number of evenly spaced gamma slots; profiles with distinct indices below
/// this count are at least `MIN_GAMMA_SPACING` apart.
pub const GAMMA_SLOTS: usize = 6;
pub const MIN_GAMMA_SPACING: f64 = 0.15;
const SLOT_STEP: f64 = 0.16;
const SLOT_JITTER: f64 = 0.004;

/// Gamma of the sRGB encoding; a tone curve with this gamma and no s-curve is
/// exactly the sRGB transfer function.
pub const SRGB_GAMMA: f64 = 2.4;

/// `x ↦ scurve(srgb_encode(x)^(2.4/γ))` with
/// `scurve(v) = (1-σ)·v + σ·smoothstep(v)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneCurve {
    pub gamma: f64,
    pub s_curve: f64,
}

impl ToneCurve {
    pub fn eval(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        let mut v = srgb_encode(x);
        if self.gamma != SRGB_GAMMA {
            v = v.powf(SRGB_GAMMA / self.gamma);
        }
        if self.s_curve != 0.0 {
            let smooth = v * v * (3.0 - 2.0 * v);
            v = (1.0 - self.s_curve) * v + self.s_curve * smooth;
        }
        v
    }
}

/// Parametric ground-truth ISP of a synthetic camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraProfile {
    pub camera_id: String,
    /// XYZ → camera RGB.
    pub color_matrix: [[f64; 3]; 3],
    pub tone_curve: ToneCurve,
    pub saturation: f64,
    pub vignette_strength: f64,
    pub local_contrast: f64,
    pub black_lift: f64,
}

fn in_range(v: f64, (lo, hi): (f64, f64)) -> bool {
    v.is_finite() && v >= lo - 1e-12 && v <= hi + 1e-12
}

impl CameraProfile {
    /// The standard sRGB rendering: under unity exposure it reproduces `s⁻¹`.
    /// Its matrix is the standard one, whose first row sums to about 1.205, so
    /// it is exempt from the row-sum check in [`CameraProfile::validate`].
    pub fn neutral() -> Self {
        CameraProfile {
            camera_id: "neutral".into(),
            color_matrix: xyz_to_srgb_matrix(),
            tone_curve: ToneCurve { gamma: SRGB_GAMMA, s_curve: 0.0 },
            saturation: 1.0,
            vignette_strength: 0.0,
            local_contrast: 0.0,
            black_lift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("camera `{}`: {what} out of range", self.camera_id)));
        if !in_range(self.tone_curve.gamma, GAMMA_RANGE) {
            return bad("gamma");
        }
        if !in_range(self.tone_curve.s_curve, SCURVE_RANGE) {
            return bad("s-curve strength");
        }
        if !in_range(self.saturation, SATURATION_RANGE) {
            return bad("saturation");
        }
        if !in_range(self.vignette_strength, VIGNETTE_RANGE) {
            return bad("vignette strength");
        }
        if !in_range(self.local_contrast, LOCAL_CONTRAST_RANGE) {
            return bad("local contrast");
        }
        if !in_range(self.black_lift, BLACK_LIFT_RANGE) {
            return bad("black lift");
        }
        if self.color_matrix.iter().flatten().any(|v| !v.is_finite()) {
            return bad("color matrix");
        }
        if *self != Self::neutral() {
            for row in &self.color_matrix {
                if !in_range(row.iter().sum(), ROW_SUM_RANGE) {
                    return bad("color matrix row sum");
                }
            }
        }
        Ok(())
    }
}

/// Gamma assigned to `camera_index` under `seed`. Slots are a seeded
/// permutation of `1.8 + 0.16·i`; indices wrap after [`GAMMA_SLOTS`].
pub fn gamma_slot(seed: u64, camera_index: usize) -> f64 {
    let mut slots: Vec<usize> = (0..GAMMA_SLOTS).collect();
    slots.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x9a3f_11c5_7e2b_d401));
    GAMMA_RANGE.0 + SLOT_STEP * slots[camera_index % GAMMA_SLOTS] as f64
}

/// Deterministic synthetic camera for `(seed, camera_index)`.
pub fn make_camera_profile(seed: u64, camera_index: usize) -> CameraProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x5851_f42d_4c95_7f2d).wrapping_add(camera_index as u64 + 1));
    let base = gamma_slot(seed, camera_index);
    let lo = if base <= GAMMA_RANGE.0 { 0.0 } else { -SLOT_JITTER };
    let hi = if base + SLOT_STEP > GAMMA_RANGE.1 { 0.0 } else { SLOT_JITTER };
    let gamma = (base + rng.gen_range(lo..=hi)).clamp(GAMMA_RANGE.0, GAMMA_RANGE.1);

    let std = xyz_to_srgb_matrix();
    let mut color_matrix = [[0.0; 3]; 3];
    for (r, row) in color_matrix.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let mix: f64 = rng.gen_range(-0.12..0.12);
            *v = std[r][c] + mix * if r == c { 1.0 } else { 0.5 };
        }
        let sum: f64 = row.iter().sum();
        let target = rng.gen_range(0.85..1.15);
        if !(ROW_SUM_RANGE.0..=ROW_SUM_RANGE.1).contains(&sum) || rng.gen_bool(0.5) {
            for v in row.iter_mut() {
                *v *= target / sum;
            }
        }
    }

    CameraProfile {
        camera_id: format!("cam{camera_index}"),
        color_matrix,
        tone_curve: ToneCurve { gamma, s_curve: rng.gen_range(0.0..=SCURVE_RANGE.1) },
        saturation: rng.gen_range(SATURATION_RANGE.0..=SATURATION_RANGE.1),
        vignette_strength: rng.gen_range(VIGNETTE_RANGE.0..=VIGNETTE_RANGE.1),
        local_contrast: rng.gen_range(LOCAL_CONTRAST_RANGE.0..=LOCAL_CONTRAST_RANGE.1),
        black_lift: rng.gen_range(BLACK_LIFT_RANGE.0..=BLACK_LIFT_RANGE.1),
    }
}
