//! Channel-last float rasters and the typed images built on them.

use uniisp_tensor::Tensor;

use crate::error::{Error, Result};

/// `H×W×C` float raster, row-major, channels interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}×{width}×{channels} raster needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f32) -> Self {
        Self { height, width, channels, data: vec![v; height * width * channels] }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.channels)
    }

    pub fn pixels_mut(&mut self) -> impl Iterator<Item = &mut [f32]> {
        self.data.chunks_mut(self.channels)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.dims() == other.dims()
    }

    /// Largest absolute elementwise difference; infinite on shape mismatch.
    pub fn max_abs_diff(&self, other: &Raster) -> f64 {
        if !self.same_shape(other) {
            return f64::INFINITY;
        }
        self.data.iter().zip(&other.data).map(|(&a, &b)| (a as f64 - b as f64).abs()).fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One channel as its own single-channel raster.
    pub fn channel(&self, c: usize) -> Raster {
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// Per-channel mean.
    pub fn channel_means(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.channels];
        for px in self.pixels() {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v as f64;
            }
        }
        let n = (self.height * self.width).max(1) as f64;
        acc.into_iter().map(|a| a / n).collect()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Crop `h×w` at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Raster> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(Error::Shape(format!("crop {h}×{w}@({y0},{x0}) outside {}×{}", self.height, self.width)));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * self.channels;
            data.extend_from_slice(&self.data[start..start + w * self.channels]);
        }
        Raster::new(h, w, self.channels, data)
    }

    pub fn flip_horizontal(&self) -> Raster {
        Raster::from_fn(self.height, self.width, self.channels, |y, x, c| self.get(y, self.width - 1 - x, c))
    }

    pub fn flip_vertical(&self) -> Raster {
        Raster::from_fn(self.height, self.width, self.channels, |y, x, c| self.get(self.height - 1 - y, x, c))
    }

    /// `1×C×H×W` tensor.
    pub fn to_tensor<T: uniisp_tensor::Float>(&self) -> Tensor<T> {
        let (h, w, c) = self.dims();
        let mut out = Vec::with_capacity(self.data.len());
        for ch in 0..c {
            for i in 0..h * w {
                out.push(T::lit(self.data[i * c + ch] as f64));
            }
        }
        Tensor::from_vec(&[1, c, h, w], out).expect("raster dims")
    }

    /// Stacks equally sized rasters into an `N×C×H×W` tensor.
    pub fn batch_to_tensor<T: uniisp_tensor::Float>(rasters: &[&Raster]) -> Result<Tensor<T>> {
        let Some(first) = rasters.first() else {
            return Err(Error::InvalidArgument("empty batch".into()));
        };
        let (h, w, c) = first.dims();
        let mut out = Vec::with_capacity(rasters.len() * first.data.len());
        for r in rasters {
            if r.dims() != (h, w, c) {
                return Err(Error::Shape("batch rasters differ in size".into()));
            }
            for ch in 0..c {
                for i in 0..h * w {
                    out.push(T::lit(r.data[i * c + ch] as f64));
                }
            }
        }
        Ok(Tensor::from_vec(&[rasters.len(), c, h, w], out)?)
    }

    /// Sample `n` of an `N×C×H×W` tensor.
    pub fn from_tensor<T: uniisp_tensor::Float>(t: &Tensor<T>, n: usize) -> Result<Raster> {
        if t.shape().len() != 4 || n >= t.shape()[0] {
            return Err(Error::Shape(format!("cannot take sample {n} of {:?}", t.shape())));
        }
        let [_, c, h, w] = t.dims4();
        let src = &t.data()[n * c * h * w..(n + 1) * c * h * w];
        let mut data = vec![0.0f32; h * w * c];
        for ch in 0..c {
            for i in 0..h * w {
                data[i * c + ch] = src[ch * h * w + i].to_f64_lossy() as f32;
            }
        }
        Raster::new(h, w, c, data)
    }
}

macro_rules! typed_image {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Raster);

        impl $name {
            pub fn raster(&self) -> &Raster {
                &self.0
            }

            pub fn into_raster(self) -> Raster {
                self.0
            }

            pub fn height(&self) -> usize {
                self.0.height()
            }

            pub fn width(&self) -> usize {
                self.0.width()
            }
        }

        impl AsRef<Raster> for $name {
            fn as_ref(&self) -> &Raster {
                &self.0
            }
        }
    };
}

typed_image!(
    /// Display-referred, gamma-encoded sRGB image with values in `[0, 1]`.
    SrgbImage
);

typed_image!(
    /// Scene-linear CIE XYZ image. Non-negative; values above one are
    /// allowed (digital gains, the D65 white's Z).
    XyzImage
);

impl SrgbImage {
    /// Validates a three-channel raster; finite values are clamped into `[0, 1]`.
    pub fn new(raster: Raster) -> Result<Self> {
        check_rgb(&raster, "sRGB")?;
        Ok(Self(raster.map(|v| v.clamp(0.0, 1.0))))
    }
}

impl XyzImage {
    /// Validates a three-channel raster; negative values are rejected.
    pub fn new(raster: Raster) -> Result<Self> {
        check_rgb(&raster, "XYZ")?;
        if raster.data().iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidImage("XYZ image has negative values".into()));
        }
        Ok(Self(raster))
    }

    /// Clamps negatives to zero instead of rejecting them.
    pub fn from_clamped(raster: Raster) -> Result<Self> {
        check_rgb(&raster, "XYZ")?;
        Ok(Self(raster.map(|v| v.max(0.0))))
    }
}

fn check_rgb(r: &Raster, what: &str) -> Result<()> {
    if r.channels() != 3 {
        return Err(Error::InvalidImage(format!("{what} image needs 3 channels, got {}", r.channels())));
    }
    if !r.all_finite() {
        return Err(Error::InvalidImage(format!("{what} image has non-finite values")));
    }
    Ok(())
}
