use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EXPOSURE_TIME_RANGE: (f64, f64) = (1.0 / 500.0, 1.0 / 30.0);
pub const ISO_RANGE: (f64, f64) = (50.0, 1600.0);
pub const F_NUMBERS: [f64; 3] = [1.8, 2.2, 2.8];

/// Reference value of `t·iso/f²`. The sampler draws the relative exposure
/// log-uniformly in `[1/√2, √2]`, so its median is exactly one.
pub const K_REF: f64 = 0.33;

/// Capture metadata used to condition the model and set the exposure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExifParams {
    pub exposure_time: f64,
    pub iso: f64,
    pub f_number: f64,
}

fn log_norm(v: f64, (lo, hi): (f64, f64)) -> f64 {
    (2.0 * (v.ln() - lo.ln()) / (hi.ln() - lo.ln()) - 1.0).clamp(-1.0, 1.0)
}

impl ExifParams {
    /// Settings whose relative exposure is exactly one.
    pub fn unity() -> Self {
        ExifParams { exposure_time: K_REF * 4.0 / 100.0, iso: 100.0, f_number: 2.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("exposure_time", self.exposure_time), ("iso", self.iso), ("f_number", self.f_number)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("EXIF {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Relative exposure `k = t·iso / f² / K_REF`.
    pub fn exposure_scale(&self) -> f64 {
        self.exposure_time * self.iso / (self.f_number * self.f_number) / K_REF
    }

    /// Log-normalized `[t, iso, f]`, each mapped onto `[-1, 1]` over its
    /// sampling range and clamped.
    pub fn normalized(&self) -> [f32; 3] {
        [
            log_norm(self.exposure_time, EXPOSURE_TIME_RANGE) as f32,
            log_norm(self.iso, ISO_RANGE) as f32,
            log_norm(self.f_number, (F_NUMBERS[0], F_NUMBERS[2])) as f32,
        ]
    }

    /// Auto-exposure style sampler: draw the target exposure, an aperture and an
    /// ISO, then solve for the shutter time; resample the ISO until the shutter
    /// lands in range.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let k = (rng.gen_range(-0.5f64..=0.5) * std::f64::consts::LN_2).exp();
        let f_number = F_NUMBERS[rng.gen_range(0..F_NUMBERS.len())];
        loop {
            let iso = (rng.gen_range(ISO_RANGE.0.ln()..=ISO_RANGE.1.ln())).exp();
            let t = k * K_REF * f_number * f_number / iso;
            if (EXPOSURE_TIME_RANGE.0..=EXPOSURE_TIME_RANGE.1).contains(&t) {
                return ExifParams { exposure_time: t, iso, f_number };
            }
        }
    }

    pub fn sample_seeded(seed: u64) -> Self {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}
