//! Multi-scale difference-of-Gaussians keypoint detection with gradient
//! orientation assignment.

use crate::image::Image;
use crate::scalar::{num, Scalar};

use super::{DetectorConfig, Keypoint};

/// Dense scalar-valued raster used for pyramid levels and smoothed images.
#[derive(Clone)]
pub(crate) struct GrayF<S> {
    pub w: usize,
    pub h: usize,
    pub px: Vec<S>,
}

impl<S: Scalar> GrayF<S> {
    /// Intensities scaled to `[0, 1]`.
    pub fn unit_scale(img: &Image) -> Self {
        let inv = num::<S>(1.0 / 255.0);
        Self {
            w: img.width() as usize,
            h: img.height() as usize,
            px: img.data().iter().map(|&v| num::<S>(v as f64) * inv).collect(),
        }
    }

    /// Raw 8-bit intensities promoted to the scalar type.
    pub fn raw_scale(img: &Image) -> Self {
        Self {
            w: img.width() as usize,
            h: img.height() as usize,
            px: img.data().iter().map(|&v| num::<S>(v as f64)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> S {
        self.px[y * self.w + x]
    }

    /// Bilinear sample; `None` outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: S, y: S) -> Option<S> {
        if x < S::zero() || y < S::zero() {
            return None;
        }
        if x > num::<S>((self.w - 1) as f64) || y > num::<S>((self.h - 1) as f64) {
            return None;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let xi = x0.to_usize().unwrap().min(self.w - 1);
        let yi = y0.to_usize().unwrap().min(self.h - 1);
        let x1 = (xi + 1).min(self.w - 1);
        let y1 = (yi + 1).min(self.h - 1);
        let top = self.at(xi, yi) * (S::one() - fx) + self.at(x1, yi) * fx;
        let bot = self.at(xi, y1) * (S::one() - fx) + self.at(x1, y1) * fx;
        Some(top * (S::one() - fy) + bot * fy)
    }

    /// Separable Gaussian blur with replicated borders.
    pub fn gaussian_blur(&self, sigma: f64) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (sigma * 3.0).ceil() as usize;
        let radius = radius.max(1);
        let mut kernel: Vec<S> = Vec::with_capacity(2 * radius + 1);
        let denom = 2.0 * sigma * sigma;
        let mut sum = 0.0;
        for i in -(radius as i64)..=(radius as i64) {
            let v = (-(i * i) as f64 / denom).exp();
            sum += v;
            kernel.push(num(v));
        }
        let norm = num::<S>(1.0 / sum);
        for k in &mut kernel {
            *k = *k * norm;
        }

        let (w, h) = (self.w, self.h);
        let mut tmp = vec![S::zero(); w * h];
        for y in 0..h {
            let row = &self.px[y * w..(y + 1) * w];
            for x in 0..w {
                let mut acc = S::zero();
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = (x as i64 + ki as i64 - radius as i64).clamp(0, w as i64 - 1) as usize;
                    acc += *kv * row[sx];
                }
                tmp[y * w + x] = acc;
            }
        }
        let mut out = vec![S::zero(); w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = S::zero();
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = (y as i64 + ki as i64 - radius as i64).clamp(0, h as i64 - 1) as usize;
                    acc += *kv * tmp[sy * w + x];
                }
                out[y * w + x] = acc;
            }
        }
        Self { w, h, px: out }
    }

    /// Downsample by two, keeping every even-indexed pixel.
    pub fn half(&self) -> Self {
        let w = (self.w / 2).max(1);
        let h = (self.h / 2).max(1);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                px.push(self.at(x * 2, y * 2));
            }
        }
        Self { w, h, px }
    }

    fn diff(a: &Self, b: &Self) -> Self {
        Self {
            w: a.w,
            h: a.h,
            px: a.px.iter().zip(&b.px).map(|(&x, &y)| x - y).collect(),
        }
    }
}

/// Dominant gradient direction around `(x, y)` on a Gaussian layer.
fn orientation<S: Scalar>(g: &GrayF<S>, x: usize, y: usize, sigma: f64) -> S {
    const BINS: usize = 36;
    let radius = ((4.5 * sigma).round() as i64).max(1);
    let denom = num::<S>(2.0 * (1.5 * sigma) * (1.5 * sigma));
    let mut hist = [S::zero(); BINS];
    let pi = std::f64::consts::PI;

    for j in -radius..=radius {
        let yy = y as i64 + j;
        if yy < 1 || yy >= g.h as i64 - 1 {
            continue;
        }
        for i in -radius..=radius {
            let xx = x as i64 + i;
            if xx < 1 || xx >= g.w as i64 - 1 {
                continue;
            }
            let (xx, yy) = (xx as usize, yy as usize);
            let dx = g.at(xx + 1, yy) - g.at(xx - 1, yy);
            let dy = g.at(xx, yy + 1) - g.at(xx, yy - 1);
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == S::zero() {
                continue;
            }
            let weight = (-(num::<S>((i * i + j * j) as f64)) / denom).exp();
            let ang = dy.atan2(dx).to_f64().unwrap();
            let bin = (((ang + pi) / (2.0 * pi) * BINS as f64).floor() as usize) % BINS;
            hist[bin] += weight * mag;
        }
    }

    // Two circular box-smoothing passes steady the peak.
    for _ in 0..2 {
        let snapshot = hist;
        let third = num::<S>(1.0 / 3.0);
        for b in 0..BINS {
            hist[b] = (snapshot[(b + BINS - 1) % BINS] + snapshot[b] + snapshot[(b + 1) % BINS])
                * third;
        }
    }

    let mut peak = 0;
    for b in 1..BINS {
        if hist[b] > hist[peak] {
            peak = b;
        }
    }
    if hist[peak] == S::zero() {
        return S::zero();
    }

    let l = hist[(peak + BINS - 1) % BINS].to_f64().unwrap();
    let c = hist[peak].to_f64().unwrap();
    let r = hist[(peak + 1) % BINS].to_f64().unwrap();
    let den = l - 2.0 * c + r;
    let offset = if den.abs() > 1e-12 {
        (0.5 * (l - r) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let angle = -pi + (peak as f64 + 0.5 + offset) * (2.0 * pi / BINS as f64);
    crate::geometry::wrap_angle(num(angle))
}

/// All difference-of-Gaussians extrema passing the contrast and edge tests,
/// sorted by response descending. No truncation.
pub(crate) fn detect_all<S: Scalar>(img: &Image, cfg: &DetectorConfig<S>) -> Vec<Keypoint<S>> {
    if img.width() < 16 || img.height() < 16 {
        return Vec::new();
    }
    let layers = cfg.layers_per_octave.max(1);
    let sigma0 = cfg.base_sigma.to_f64().unwrap();
    let k = 2f64.powf(1.0 / layers as f64);
    let edge = cfg.edge_threshold.to_f64().unwrap();
    let edge_bound = num::<S>((edge + 1.0) * (edge + 1.0) / edge);
    let contrast_floor = cfg.contrast_threshold / num::<S>(layers as f64);

    let mut octaves = 0usize;
    let mut size = img.width().min(img.height()) as usize;
    while size >= 24 && octaves < 3 {
        octaves += 1;
        size /= 2;
    }
    let octaves = octaves.max(1);

    // The source image is assumed to carry sigma = 0.5 of blur already.
    let base = GrayF::unit_scale(img);
    let mut seed = base.gaussian_blur((sigma0 * sigma0 - 0.25).max(1e-6).sqrt());

    let mut keypoints = Vec::new();
    for octave in 0..octaves {
        let mut gauss: Vec<GrayF<S>> = Vec::with_capacity(layers + 3);
        gauss.push(seed.clone());
        for i in 0..layers + 2 {
            let s_prev = sigma0 * k.powi(i as i32);
            let s_next = sigma0 * k.powi(i as i32 + 1);
            let delta = (s_next * s_next - s_prev * s_prev).sqrt();
            gauss.push(gauss.last().unwrap().gaussian_blur(delta));
        }
        let dogs: Vec<GrayF<S>> = (0..layers + 2)
            .map(|i| GrayF::diff(&gauss[i + 1], &gauss[i]))
            .collect();

        let (w, h) = (dogs[0].w, dogs[0].h);
        let step = 1u32 << octave;
        for l in 1..=layers {
            let sigma_rel = sigma0 * k.powi(l as i32);
            let (below, here, above) = (&dogs[l - 1], &dogs[l], &dogs[l + 1]);
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let v = here.at(x, y);
                    if v.abs() < contrast_floor {
                        continue;
                    }
                    if !is_extremum(below, here, above, x, y, v) {
                        continue;
                    }
                    // Hessian ratio test rejects edge-like responses.
                    let dxx = here.at(x + 1, y) - here.at(x, y) - here.at(x, y) + here.at(x - 1, y);
                    let dyy = here.at(x, y + 1) - here.at(x, y) - here.at(x, y) + here.at(x, y - 1);
                    let dxy = (here.at(x + 1, y + 1) - here.at(x - 1, y + 1)
                        - here.at(x + 1, y - 1)
                        + here.at(x - 1, y - 1))
                        * num::<S>(0.25);
                    let tr = dxx + dyy;
                    let det = dxx * dyy - dxy * dxy;
                    if det <= S::zero() || tr * tr >= edge_bound * det {
                        continue;
                    }

                    let ori = orientation(&gauss[l], x, y, sigma_rel);
                    keypoints.push(Keypoint {
                        x: num::<S>((x as u32 * step) as f64),
                        y: num::<S>((y as u32 * step) as f64),
                        orientation: ori,
                        response: v.abs(),
                        scale: num::<S>(sigma_rel * step as f64),
                    });
                }
            }
        }

        if octave + 1 < octaves {
            seed = gauss[layers].half();
        }
    }

    // Response descending; ties broken spatially so the order is total.
    keypoints.sort_unstable_by(|a, b| {
        b.response
            .partial_cmp(&a.response)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.y.partial_cmp(&b.y).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.x.partial_cmp(&b.x).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.scale.partial_cmp(&b.scale).unwrap_or(std::cmp::Ordering::Equal))
    });
    keypoints
}

#[inline]
fn is_extremum<S: Scalar>(
    below: &GrayF<S>,
    here: &GrayF<S>,
    above: &GrayF<S>,
    x: usize,
    y: usize,
    v: S,
) -> bool {
    let mut max = true;
    let mut min = true;
    for layer in [below, here, above] {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if std::ptr::eq(layer, here) && dx == 0 && dy == 0 {
                    continue;
                }
                let n = layer.at((x as i64 + dx) as usize, (y as i64 + dy) as usize);
                if v <= n {
                    max = false;
                }
                if v >= n {
                    min = false;
                }
                if !max && !min {
                    return false;
                }
            }
        }
    }
    max || min
}
