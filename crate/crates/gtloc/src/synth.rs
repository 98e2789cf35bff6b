//! Seeded synthetic ground textures and view rendering.
//!
//! The bench harness works on procedurally generated floor textures instead
//! of recorded imagery: multi-octave value noise rasterized once, then
//! sampled bilinearly under a camera pose to produce reference and query
//! views. Everything is integer-hash seeded, so a config reproduces the same
//! world bit-for-bit.

use thiserror::Error;

use crate::geometry::Pose2D;
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SynthError {
    #[error("view footprint leaves the texture bounds")]
    OutOfBounds,
}

/// Contrast regime of a generated texture.
///
/// `Rich` approximates strongly textured floors (asphalt, carpet);
/// `Smooth` emulates low-repeatability floors such as polished wood, with
/// weaker high-frequency content and compressed contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureProfile {
    Rich,
    Smooth,
}

/// A rasterized value-noise texture.
#[derive(Debug, Clone)]
pub struct SyntheticTexture {
    seed: u64,
    width: u32,
    height: u32,
    octaves: u32,
    persistence: f64,
    profile: TextureProfile,
    grid: Vec<u8>,
}

fn hash2(seed: u64, x: i64, y: i64) -> u64 {
    let mut h = seed
        ^ (x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (y as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^= h >> 31;
    h
}

fn lattice(seed: u64, x: i64, y: i64) -> f64 {
    (hash2(seed, x, y) >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let xi = x.floor() as i64;
    let yi = y.floor() as i64;
    let fx = fade(x - xi as f64);
    let fy = fade(y - yi as f64);
    let v00 = lattice(seed, xi, yi);
    let v10 = lattice(seed, xi + 1, yi);
    let v01 = lattice(seed, xi, yi + 1);
    let v11 = lattice(seed, xi + 1, yi + 1);
    let top = v00 + (v10 - v00) * fx;
    let bot = v01 + (v11 - v01) * fx;
    top + (bot - top) * fy
}

/// Coarsest lattice wavelength in pixels; each octave halves it.
const BASE_WAVELENGTH: f64 = 64.0;

impl SyntheticTexture {
    pub fn generate(
        seed: u64,
        width: u32,
        height: u32,
        octaves: u32,
        persistence: f64,
        profile: TextureProfile,
    ) -> Self {
        assert!(width > 0 && height > 0 && octaves > 0);
        assert!(persistence > 0.0 && persistence < 1.0);

        let mut amp_sum = 0.0;
        let mut amp = 1.0;
        for _ in 0..octaves {
            amp_sum += amp;
            amp *= persistence;
        }

        // Rich floors get the full contrast-stretched fBm. Smooth floors
        // suppress the distinctive large-scale structure and instead carry a
        // dense self-similar grain near the detection scale: plenty of
        // near-identical interest points whose descriptors drift under
        // resampling, emulating the low repeatability of wood.
        let (gain, bias, grain_amp) = match profile {
            TextureProfile::Rich => (2.6, 0.5, 0.0),
            TextureProfile::Smooth => (0.4, 0.5, 0.55),
        };
        const GRAIN_WAVELENGTH: f64 = 5.0;

        let mut grid = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                let mut sum = 0.0;
                let mut amp = 1.0;
                let mut wavelength = BASE_WAVELENGTH;
                for o in 0..octaves {
                    let oct_seed = seed.wrapping_add(0x51ed_270b * (o as u64 + 1));
                    sum += amp * value_noise(oct_seed, x as f64 / wavelength, y as f64 / wavelength);
                    amp *= persistence;
                    wavelength *= 0.5;
                }
                let v = sum / amp_sum;
                let grain = (value_noise(
                    seed ^ 0x5bd1_e995,
                    x as f64 / GRAIN_WAVELENGTH,
                    y as f64 / GRAIN_WAVELENGTH,
                ) - 0.5)
                    * grain_amp;
                let stretched = ((v - 0.5) * gain + bias + grain).clamp(0.0, 1.0);
                grid.push((stretched * 255.0).round() as u8);
            }
        }

        Self {
            seed,
            width,
            height,
            octaves,
            persistence,
            profile,
            grid,
        }
    }

    /// Strongly textured floor at the given size.
    pub fn rich(seed: u64, width: u32, height: u32) -> Self {
        Self::generate(seed, width, height, 6, 0.55, TextureProfile::Rich)
    }

    /// Weakly textured, low-contrast floor at the given size.
    pub fn smooth(seed: u64, width: u32, height: u32) -> Self {
        Self::generate(seed, width, height, 4, 0.42, TextureProfile::Smooth)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn octaves(&self) -> u32 {
        self.octaves
    }

    pub fn persistence(&self) -> f64 {
        self.persistence
    }

    pub fn profile(&self) -> TextureProfile {
        self.profile
    }

    pub fn as_image(&self) -> Image {
        Image::new(self.width, self.height, self.grid.clone()).expect("grid matches dimensions")
    }

    /// Renders the `w x h` view whose upper-left corner sits at `pose` in
    /// texture coordinates, bilinearly sampling the raster.
    pub fn render_view<S: Scalar>(
        &self,
        pose: &Pose2D<S>,
        w: u32,
        h: u32,
    ) -> Result<Image, SynthError> {
        assert!(w > 0 && h > 0);
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let corners = [
            (S::zero(), S::zero()),
            (S::from_u32(w - 1).unwrap(), S::zero()),
            (S::zero(), S::from_u32(h - 1).unwrap()),
            (S::from_u32(w - 1).unwrap(), S::from_u32(h - 1).unwrap()),
        ];
        for c in corners {
            let (gx, gy) = pose.apply(c);
            let (gx, gy) = (gx.to_f64().unwrap(), gy.to_f64().unwrap());
            if gx < 0.0 || gy < 0.0 || gx > max_x || gy > max_y {
                return Err(SynthError::OutOfBounds);
            }
        }

        let raster = Image::new(self.width, self.height, self.grid.clone()).unwrap();
        Ok(Image::from_fn(w, h, |x, y| {
            let p = pose.apply((S::from_u32(x).unwrap(), S::from_u32(y).unwrap()));
            let v: S = raster
                .sample_bilinear(p.0, p.1)
                .expect("footprint checked against texture bounds");
            v.to_f64().unwrap().round().clamp(0.0, 255.0) as u8
        }))
    }
}
