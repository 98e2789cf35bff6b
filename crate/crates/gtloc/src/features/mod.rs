//! Keypoint detection and compact binary description.
//!
//! Detection finds local extrema of a difference-of-Gaussians pyramid with
//! contrast and edge tests and assigns each keypoint the dominant gradient
//! direction. Description compares patch triplets inside a window rotated to
//! the keypoint orientation: bit `i` is 1 iff the anchor patch at the
//! keypoint is closer (lower SSD) to the triplet's first patch than to its
//! second.

mod detector;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub(crate) use detector::GrayF;

use crate::image::Image;
use crate::scalar::{num, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FeatureError {
    /// The rotated descriptor window leaves the image.
    #[error("keypoint window exits the image")]
    OutOfBounds,
    /// Descriptor width exceeds what the target type can hold.
    #[error("layout has {len} triplets, maximum here is {max}")]
    TooManyTriplets { len: usize, max: usize },
    #[error("descriptor value {bits:#x} does not fit in {n} bits")]
    BitsExceedWidth { bits: u64, n: u8 },
}

/// A detected interest point in image-frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint<S = f64> {
    pub x: S,
    pub y: S,
    /// Dominant gradient direction, radians in `(-pi, pi]`.
    pub orientation: S,
    pub response: S,
    pub scale: S,
}

/// An `n`-bit binary descriptor, `n <= 16`. Bit `i` is triplet `i`'s outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CompactDescriptor {
    bits: u16,
    n: u8,
}

impl CompactDescriptor {
    pub fn new(bits: u16, n: u8) -> Result<Self, FeatureError> {
        if n == 0 || n > 16 {
            return Err(FeatureError::TooManyTriplets {
                len: n as usize,
                max: 16,
            });
        }
        if n < 16 && bits >= 1 << n {
            return Err(FeatureError::BitsExceedWidth {
                bits: bits as u64,
                n,
            });
        }
        Ok(Self { bits, n })
    }

    pub fn bits(&self) -> u16 {
        self.bits
    }

    pub fn n(&self) -> u8 {
        self.n
    }
}

/// A 64-bit descriptor from an extended triplet layout, used by the
/// nearest-neighbor baseline matchers where Hamming distances over a wider
/// code are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WideDescriptor {
    bits: u64,
    n: u8,
}

impl WideDescriptor {
    pub fn new(bits: u64, n: u8) -> Result<Self, FeatureError> {
        if n == 0 || n > 64 {
            return Err(FeatureError::TooManyTriplets {
                len: n as usize,
                max: 64,
            });
        }
        if n < 64 && bits >= 1 << n {
            return Err(FeatureError::BitsExceedWidth { bits, n });
        }
        Ok(Self { bits, n })
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn n(&self) -> u8 {
        self.n
    }
}

/// Hamming-comparable binary descriptor.
pub trait BinaryDescriptor: Copy + Eq {
    fn hamming(&self, other: &Self) -> u32;
    fn width(&self) -> u8;
}

impl BinaryDescriptor for CompactDescriptor {
    fn hamming(&self, other: &Self) -> u32 {
        (self.bits ^ other.bits).count_ones()
    }

    fn width(&self) -> u8 {
        self.n
    }
}

impl BinaryDescriptor for WideDescriptor {
    fn hamming(&self, other: &Self) -> u32 {
        (self.bits ^ other.bits).count_ones()
    }

    fn width(&self) -> u8 {
        self.n
    }
}

/// One comparison triplet: the anchor patch sits at the keypoint, `p1` and
/// `p2` are patch-center offsets in keypoint-relative pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet<S = f64> {
    pub p1: (S, S),
    pub p2: (S, S),
}

/// Offsets are sampled inside this radius around the keypoint.
pub const LAYOUT_OFFSET_RADIUS: i64 = 24;

/// The ordered triplet arrangement shared by mapping and localization.
///
/// The layout is persisted in the map file header so descriptors computed at
/// localization time always agree with the mapped ones.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletLayout<S = f64> {
    triplets: Vec<Triplet<S>>,
    half_size: u32,
    sigma: S,
}

impl<S: Scalar> TripletLayout<S> {
    pub fn new(triplets: Vec<Triplet<S>>, half_size: u32, sigma: S) -> Self {
        Self {
            triplets,
            half_size,
            sigma,
        }
    }

    pub fn triplets(&self) -> &[Triplet<S>] {
        &self.triplets
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn half_size(&self) -> u32 {
        self.half_size
    }

    pub fn sigma(&self) -> S {
        self.sigma
    }

    /// Conservative half-width of the square window that contains every
    /// sample for any keypoint orientation (plus bilinear reach).
    pub fn window_radius(&self) -> S {
        let mut max_norm = S::zero();
        for t in &self.triplets {
            for p in [t.p1, t.p2] {
                max_norm = max_norm.max((p.0 * p.0 + p.1 * p.1).sqrt());
            }
        }
        let patch_reach = num::<S>(self.half_size as f64) * num::<S>(std::f64::consts::SQRT_2);
        max_norm + patch_reach + num::<S>(2.0)
    }

    /// Deterministic pseudo-random layout: `n` distinct triplets with integer
    /// offsets inside [`LAYOUT_OFFSET_RADIUS`], reproducible across platforms.
    pub fn seeded(n: usize, seed: u64, half_size: u32, sigma: S) -> Self {
        assert!(n >= 1 && n <= 64, "layout supports 1..=64 triplets");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = LAYOUT_OFFSET_RADIUS;
        let span = (2 * r + 1) as u64;
        let draw_offset = |rng: &mut ChaCha8Rng| -> (i64, i64) {
            loop {
                let x = ((rng.next_u64() % span) as i64) - r;
                let y = ((rng.next_u64() % span) as i64) - r;
                if x * x + y * y <= r * r && (x, y) != (0, 0) {
                    return (x, y);
                }
            }
        };
        let mut used: Vec<((i64, i64), (i64, i64))> = Vec::with_capacity(n);
        let mut triplets = Vec::with_capacity(n);
        while triplets.len() < n {
            let p1 = draw_offset(&mut rng);
            let p2 = draw_offset(&mut rng);
            if p1 == p2 || used.contains(&(p1, p2)) {
                continue;
            }
            used.push((p1, p2));
            triplets.push(Triplet {
                p1: (num(p1.0 as f64), num(p1.1 as f64)),
                p2: (num(p2.0 as f64), num(p2.1 as f64)),
            });
        }
        Self {
            triplets,
            half_size,
            sigma,
        }
    }
}

/// Builds the default descriptor layout: `n <= 16` triplets for the compact
/// identity-matching pipeline.
pub fn make_triplet_layout<S: Scalar>(
    n: usize,
    seed: u64,
    half_size: u32,
    sigma: S,
) -> TripletLayout<S> {
    assert!(n >= 1 && n <= 16, "compact layouts hold at most 16 triplets");
    TripletLayout::seeded(n, seed, half_size, sigma)
}

/// Detector parameters. Defaults: 11 layers per octave, contrast 0.005,
/// edge ratio 13, base sigma 8.5, and at most 850 keypoints kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig<S = f64> {
    pub layers_per_octave: usize,
    pub contrast_threshold: S,
    pub edge_threshold: S,
    pub base_sigma: S,
    pub max_keypoints: usize,
}

impl<S: Scalar> Default for DetectorConfig<S> {
    fn default() -> Self {
        Self {
            layers_per_octave: 11,
            contrast_threshold: num(0.005),
            edge_threshold: num(13.0),
            base_sigma: num(8.5),
            max_keypoints: 850,
        }
    }
}

/// A keypoint paired with its descriptor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature<S = f64, D = CompactDescriptor> {
    pub keypoint: Keypoint<S>,
    pub descriptor: D,
}

/// DoG extrema passing contrast and edge tests, response-sorted descending
/// and truncated to `cfg.max_keypoints`.
pub fn detect_keypoints<S: Scalar>(img: &Image, cfg: &DetectorConfig<S>) -> Vec<Keypoint<S>> {
    let mut kps = detector::detect_all(img, cfg);
    kps.truncate(cfg.max_keypoints);
    kps
}

/// Computes the descriptor bit string on an already-smoothed raster.
/// Returns `None` when any sample would leave the image.
fn describe_bits<S: Scalar>(
    smoothed: &GrayF<S>,
    kp: &Keypoint<S>,
    layout: &TripletLayout<S>,
) -> Option<u64> {
    let (sin, cos) = kp.orientation.sin_cos();
    let h = layout.half_size as i64;
    let side = (2 * h + 1) as usize;
    let rotate = |p: (S, S)| -> (S, S) {
        (
            cos * p.0 - sin * p.1 + kp.x,
            sin * p.0 + cos * p.1 + kp.y,
        )
    };

    // The anchor patch is shared by every triplet.
    let sample_patch = |center: (S, S), out: &mut Vec<S>| -> bool {
        out.clear();
        for dy in -h..=h {
            for dx in -h..=h {
                let p = rotate((center.0 + num(dx as f64), center.1 + num(dy as f64)));
                match smoothed.sample_bilinear(p.0, p.1) {
                    Some(v) => out.push(v),
                    None => return false,
                }
            }
        }
        true
    };

    let mut anchor = Vec::with_capacity(side * side);
    if !sample_patch((S::zero(), S::zero()), &mut anchor) {
        return None;
    }

    let mut patch = Vec::with_capacity(side * side);
    let mut bits = 0u64;
    for (i, t) in layout.triplets.iter().enumerate() {
        let mut ssd = [S::zero(); 2];
        for (slot, center) in [t.p1, t.p2].into_iter().enumerate() {
            if !sample_patch(center, &mut patch) {
                return None;
            }
            let mut acc = S::zero();
            for (a, b) in anchor.iter().zip(&patch) {
                let d = *a - *b;
                acc += d * d;
            }
            ssd[slot] = acc;
        }
        if ssd[0] < ssd[1] {
            bits |= 1 << i;
        }
    }
    Some(bits)
}

fn smooth_for_descriptor<S: Scalar>(img: &Image, sigma: S) -> GrayF<S> {
    GrayF::raw_scale(img).gaussian_blur(sigma.to_f64().unwrap())
}

/// Compact binary descriptor for one keypoint (`layout.len() <= 16`).
///
/// The image is Gaussian-smoothed with `layout.sigma`, then each triplet's
/// patches are bilinearly sampled from the window rotated by
/// `kp.orientation`.
pub fn describe<S: Scalar>(
    img: &Image,
    kp: &Keypoint<S>,
    layout: &TripletLayout<S>,
) -> Result<CompactDescriptor, FeatureError> {
    if layout.len() > 16 {
        return Err(FeatureError::TooManyTriplets {
            len: layout.len(),
            max: 16,
        });
    }
    let smoothed = smooth_for_descriptor(img, layout.sigma);
    let bits = describe_bits(&smoothed, kp, layout).ok_or(FeatureError::OutOfBounds)?;
    CompactDescriptor::new(bits as u16, layout.len() as u8)
}

/// Wide variant for the baseline matchers (`layout.len() <= 64`).
pub fn describe_wide<S: Scalar>(
    img: &Image,
    kp: &Keypoint<S>,
    layout: &TripletLayout<S>,
) -> Result<WideDescriptor, FeatureError> {
    let smoothed = smooth_for_descriptor(img, layout.sigma);
    let bits = describe_bits(&smoothed, kp, layout).ok_or(FeatureError::OutOfBounds)?;
    WideDescriptor::new(bits, layout.len() as u8)
}

fn extract_with<S: Scalar, D, F>(
    img: &Image,
    cfg: &DetectorConfig<S>,
    layout: &TripletLayout<S>,
    make: F,
) -> Vec<Feature<S, D>>
where
    F: Fn(u64, u8) -> D,
{
    let all = detector::detect_all(img, cfg);
    let margin = layout.window_radius();
    let max_x = num::<S>(img.width() as f64 - 1.0) - margin;
    let max_y = num::<S>(img.height() as f64 - 1.0) - margin;

    // Border keypoints are dropped before the max_keypoints truncation, so a
    // crowded interior can still fill the budget.
    let mut kept: Vec<Keypoint<S>> = all
        .into_iter()
        .filter(|kp| kp.x >= margin && kp.x <= max_x && kp.y >= margin && kp.y <= max_y)
        .collect();
    kept.truncate(cfg.max_keypoints);

    let smoothed = smooth_for_descriptor(img, layout.sigma);
    kept.into_iter()
        .filter_map(|kp| {
            describe_bits(&smoothed, &kp, layout).map(|bits| Feature {
                keypoint: kp,
                descriptor: make(bits, layout.len() as u8),
            })
        })
        .collect()
}

/// Detects keypoints and describes them with the compact layout.
pub fn extract_features<S: Scalar>(
    img: &Image,
    cfg: &DetectorConfig<S>,
    layout: &TripletLayout<S>,
) -> Vec<Feature<S>> {
    assert!(layout.len() <= 16, "compact descriptors hold at most 16 bits");
    extract_with(img, cfg, layout, |bits, n| {
        CompactDescriptor::new(bits as u16, n).expect("bits masked by layout length")
    })
}

/// Detects keypoints and describes them with a wide (<= 64 bit) layout.
pub fn extract_features_wide<S: Scalar>(
    img: &Image,
    cfg: &DetectorConfig<S>,
    layout: &TripletLayout<S>,
) -> Vec<Feature<S, WideDescriptor>> {
    extract_with(img, cfg, layout, |bits, n| {
        WideDescriptor::new(bits, n).expect("bits masked by layout length")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_image(w: u32, h: u32, v: u8) -> Image {
        Image::from_fn(w, h, |_, _| v)
    }

    /// A Gaussian blob centered at (cx, cy).
    fn blob_image(w: u32, h: u32, cx: f64, cy: f64, sigma: f64) -> Image {
        Image::from_fn(w, h, |x, y| {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            (230.0 * (-d2 / (2.0 * sigma * sigma)).exp()) as u8
        })
    }

    /// Fine-scale detector for the small synthetic rasters used in tests.
    /// The paper-default base sigma targets megapixel imagery; a 160 px test
    /// image only carries a handful of keypoints at that scale.
    pub(crate) fn test_detector() -> DetectorConfig<f64> {
        DetectorConfig {
            base_sigma: 2.5,
            ..DetectorConfig::default()
        }
    }

    /// Deterministic speckle texture with content at many scales.
    pub(crate) fn noise_image(w: u32, h: u32, seed: u64) -> Image {
        let tex = crate::synth::SyntheticTexture::rich(seed, w + 2, h + 2);
        tex.render_view(&crate::geometry::Pose2D::<f64>::identity(), w, h)
            .unwrap()
    }

    #[test]
    fn constant_image_has_no_keypoints() {
        let img = constant_image(64, 64, 128);
        let kps = detect_keypoints::<f64>(&img, &DetectorConfig::default());
        assert!(kps.is_empty());
    }

    #[test]
    fn tiny_image_yields_nothing() {
        let img = constant_image(8, 8, 10);
        assert!(detect_keypoints::<f64>(&img, &DetectorConfig::default()).is_empty());
    }

    #[test]
    fn single_blob_detected_near_center() {
        // Blob scale chosen inside the default detector's scale range.
        let img = blob_image(128, 128, 64.0, 64.0, 13.0);
        let kps = detect_keypoints::<f64>(&img, &DetectorConfig::default());
        assert_eq!(kps.len(), 1, "expected exactly one dominant keypoint");
        let best = &kps[0];
        assert!(
            (best.x - 64.0).abs() <= 2.0 && (best.y - 64.0).abs() <= 2.0,
            "dominant keypoint at ({}, {})",
            best.x,
            best.y
        );
    }

    #[test]
    fn keypoints_sorted_and_truncated() {
        let img = noise_image(200, 200, 3);
        let cfg = DetectorConfig {
            max_keypoints: 40,
            ..test_detector()
        };
        let kps = detect_keypoints::<f64>(&img, &cfg);
        assert!(kps.len() <= 40);
        for pair in kps.windows(2) {
            assert!(pair[0].response >= pair[1].response);
        }
    }

    /// Rotating the image by 90 degrees rotates keypoint positions and shifts
    /// orientations by pi/2 for the bulk of the detections.
    #[test]
    fn rotation_repeatability_quarter_turn() {
        let img = noise_image(160, 160, 11);
        let n = img.width();
        // (x, y) -> (n-1-y, x): counter-clockwise pixel rotation.
        let rotated = Image::from_fn(n, n, |x, y| img.get(y, n - 1 - x));

        let cfg = test_detector();
        let base = detect_keypoints::<f64>(&img, &cfg);
        let rot = detect_keypoints::<f64>(&rotated, &cfg);
        assert!(base.len() > 20, "expected a populated keypoint set");

        let mut matched = 0usize;
        let mut angle_ok = 0usize;
        for kp in &base {
            let expected = ((n - 1) as f64 - kp.y, kp.x);
            let Some(near) = rot
                .iter()
                .filter(|r| {
                    (r.x - expected.0).abs() <= 2.0 && (r.y - expected.1).abs() <= 2.0
                })
                .min_by(|a, b| {
                    let da = (a.x - expected.0).powi(2) + (a.y - expected.1).powi(2);
                    let db = (b.x - expected.0).powi(2) + (b.y - expected.1).powi(2);
                    da.partial_cmp(&db).unwrap()
                })
            else {
                continue;
            };
            matched += 1;
            let delta = crate::geometry::wrap_angle(
                near.orientation - kp.orientation - std::f64::consts::FRAC_PI_2,
            )
            .abs();
            if delta <= 0.1 {
                angle_ok += 1;
            }
        }
        let matched_frac = matched as f64 / base.len() as f64;
        let angle_frac = angle_ok as f64 / base.len() as f64;
        assert!(
            matched_frac >= 0.8,
            "only {matched_frac:.2} of keypoints re-detected"
        );
        assert!(
            angle_frac >= 0.8,
            "only {angle_frac:.2} of keypoints keep orientation under rotation"
        );
    }

    #[test]
    fn layout_generation_deterministic_and_valid() {
        let a = make_triplet_layout::<f64>(15, 0, 8, 2.2);
        let b = make_triplet_layout::<f64>(15, 0, 8, 2.2);
        assert_eq!(a, b);
        assert_eq!(a.len(), 15);

        let c = make_triplet_layout::<f64>(15, 1, 8, 2.2);
        assert_ne!(a, c);

        let r = LAYOUT_OFFSET_RADIUS as f64;
        for t in a.triplets() {
            for p in [t.p1, t.p2] {
                assert!(p.0.hypot(p.1) <= r);
            }
            assert_ne!(t.p1, t.p2);
        }
        // No two triplets share both offsets.
        for (i, t) in a.triplets().iter().enumerate() {
            for u in &a.triplets()[i + 1..] {
                assert!(t.p1 != u.p1 || t.p2 != u.p2);
            }
        }
    }

    #[test]
    fn wide_layout_has_64_distinct_triplets() {
        let layout = TripletLayout::<f64>::seeded(64, 7, 8, 2.2);
        assert_eq!(layout.len(), 64);
    }

    #[test]
    fn descriptor_construction_validates() {
        assert!(CompactDescriptor::new(0x7fff, 15).is_ok());
        assert!(matches!(
            CompactDescriptor::new(0x8000, 15),
            Err(FeatureError::BitsExceedWidth { .. })
        ));
        assert!(CompactDescriptor::new(u16::MAX, 16).is_ok());
        assert!(WideDescriptor::new(u64::MAX, 64).is_ok());
        assert!(WideDescriptor::new(1 << 20, 15).is_err());
    }

    /// A layout whose `p1` patches sit on one side of the keypoint and `p2`
    /// on the other, paired with a half-bright image: every triplet's anchor
    /// duplicates one patch exactly and differs from the other, so the
    /// descriptor takes a known extreme value.
    fn biased_descriptor_case(favor_p1: bool) {
        let triplets: Vec<Triplet<f64>> = (0..15)
            .map(|i| {
                let y = (i as f64 - 7.0) * 2.0;
                if favor_p1 {
                    // p1 in the dark left half with the anchor, p2 bright right.
                    Triplet {
                        p1: (-16.0, y),
                        p2: (16.0, y),
                    }
                } else {
                    Triplet {
                        p1: (16.0, y),
                        p2: (-16.0, y),
                    }
                }
            })
            .collect();
        let layout = TripletLayout::new(triplets, 2, 0.5);
        let kp = Keypoint {
            x: 60.0,
            y: 64.0,
            orientation: 0.0,
            response: 1.0,
            scale: 1.0,
        };
        // Dark for x < 70 (anchor and the -16 offsets), bright beyond.
        let img = Image::from_fn(128, 128, |x, _| if x < 70 { 10 } else { 200 });
        let desc = describe(&img, &kp, &layout).unwrap();
        if favor_p1 {
            assert_eq!(desc.bits(), (1 << 15) - 1, "all bits favor p1");
        } else {
            assert_eq!(desc.bits(), 0, "all bits favor p2");
        }
    }

    #[test]
    fn descriptor_all_ones_and_all_zeros() {
        biased_descriptor_case(true);
        biased_descriptor_case(false);
    }

    #[test]
    fn describe_rejects_border_keypoint() {
        let img = noise_image(128, 128, 5);
        let layout = make_triplet_layout::<f64>(15, 0, 8, 2.2);
        let kp = Keypoint {
            x: 3.0,
            y: 3.0,
            orientation: 0.7,
            response: 1.0,
            scale: 1.0,
        };
        assert_eq!(
            describe(&img, &kp, &layout),
            Err(FeatureError::OutOfBounds)
        );
    }

    #[test]
    fn descriptor_ignores_pixels_outside_window() {
        let img = noise_image(160, 160, 9);
        let layout = make_triplet_layout::<f64>(15, 0, 8, 2.2);
        let kp = Keypoint {
            x: 80.0,
            y: 80.0,
            orientation: 0.4,
            response: 1.0,
            scale: 1.0,
        };
        let before = describe(&img, &kp, &layout).unwrap();

        // Scribble far outside the window radius (~38 px).
        let mut data = img.data().to_vec();
        for x in 0..160usize {
            data[x] = 255 - data[x];
            data[159 * 160 + x] = 0;
        }
        let edited = Image::new(160, 160, data).unwrap();
        let after = describe(&edited, &kp, &layout).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn descriptor_invariant_to_constant_offset() {
        // Keep intensities in [40, 200] so adding 30 saturates nowhere.
        let base = noise_image(160, 160, 13);
        let squeezed = Image::from_fn(160, 160, |x, y| 40 + (base.get(x, y) as u32 * 160 / 255) as u8);
        let shifted = Image::from_fn(160, 160, |x, y| squeezed.get(x, y) + 30);

        let layout = make_triplet_layout::<f64>(15, 0, 8, 2.2);
        let cfg = test_detector();
        let kps = detect_keypoints(&squeezed, &cfg);
        let margin = layout.window_radius();
        let mut checked = 0;
        for kp in kps.iter().take(20) {
            if kp.x < margin || kp.y < margin || kp.x > 159.0 - margin || kp.y > 159.0 - margin {
                continue;
            }
            let a = describe(&squeezed, kp, &layout).unwrap();
            let b = describe(&shifted, kp, &layout).unwrap();
            assert_eq!(a, b);
            checked += 1;
        }
        assert!(checked > 0, "no interior keypoints to check");
    }

    #[test]
    fn extract_features_empty_on_flat_image() {
        let layout = make_triplet_layout::<f64>(15, 0, 8, 2.2);
        let img = constant_image(64, 64, 77);
        assert!(extract_features(&img, &DetectorConfig::default(), &layout).is_empty());
        assert!(extract_features(&img, &test_detector(), &layout).is_empty());
    }

    /// The same physical texture points rendered at a 37-degree rotation,
    /// with keypoint orientations updated accordingly, must yield nearly
    /// identical descriptors for most keypoints.
    #[test]
    fn descriptor_robust_to_rotated_rendering() {
        use crate::geometry::{compose, wrap_angle, Pose2D};
        use crate::synth::SyntheticTexture;

        let tex = SyntheticTexture::rich(31, 520, 520);
        let base_pose: Pose2D = Pose2D::new(130.0, 130.0, 0.0);
        let angle = 37.0_f64.to_radians();
        // Rotate the view about the image center.
        let (w, h) = (260u32, 260u32);
        let spin = compose(
            &Pose2D::new(130.0, 130.0, angle),
            &Pose2D::new(-130.0, -130.0, 0.0),
        );
        let rot_pose = compose(&base_pose, &spin);

        let img_a = tex.render_view(&base_pose, w, h).unwrap();
        let img_b = tex.render_view(&rot_pose, w, h).unwrap();

        let layout = make_triplet_layout::<f64>(15, 0, 8, 2.2);
        let cfg = test_detector();
        let margin = layout.window_radius() + 1.0;
        let kps = detect_keypoints(&img_a, &cfg);

        let mut close = 0usize;
        let mut total = 0usize;
        for kp in kps.iter().take(60) {
            // The same physical point in the rotated image frame.
            let pt_b = spin.inverse().apply((kp.x, kp.y));
            if kp.x < margin
                || kp.y < margin
                || kp.x > w as f64 - 1.0 - margin
                || kp.y > h as f64 - 1.0 - margin
                || pt_b.0 < margin
                || pt_b.1 < margin
                || pt_b.0 > w as f64 - 1.0 - margin
                || pt_b.1 > h as f64 - 1.0 - margin
            {
                continue;
            }
            let da = describe(&img_a, kp, &layout).unwrap();
            let kp_b = Keypoint {
                x: pt_b.0,
                y: pt_b.1,
                orientation: wrap_angle(kp.orientation - angle),
                ..*kp
            };
            let db = describe(&img_b, &kp_b, &layout).unwrap();
            total += 1;
            if da.hamming(&db) <= 2 {
                close += 1;
            }
        }
        assert!(total >= 20, "only {total} keypoints usable");
        assert!(
            close * 10 >= total * 7,
            "{close}/{total} descriptors within 2 bits"
        );
    }

    /// Detection repeatability across views related by a known rigid motion:
    /// over many texture pairs, at least half of the keypoints must have a
    /// counterpart within 2 px after warping.
    #[test]
    fn repeatability_across_rigid_motions() {
        use crate::geometry::Pose2D;
        use crate::synth::SyntheticTexture;

        let cfg = test_detector();
        let mut pair_count = 0;
        let mut good_pairs = 0;
        for seed in 0..20u64 {
            let tex = SyntheticTexture::rich(100 + seed, 460, 460);
            let pose_a: Pose2D = Pose2D::new(110.0, 110.0, 0.0);
            let angle = (seed as f64 * 0.31) - 3.0;
            let shift = (seed as f64 * 1.7) % 20.0;
            let spin = Pose2D::new(
                120.0 + shift,
                120.0,
                crate::geometry::wrap_angle(angle),
            );
            let rel = pose_a
                .inverse()
                .compose(&pose_a.compose(&spin.compose(&Pose2D::new(-120.0, -120.0, 0.0))));
            let pose_b = pose_a.compose(&rel);
            let (w, h) = (240u32, 240u32);
            let Ok(img_a) = tex.render_view(&pose_a, w, h) else { continue };
            let Ok(img_b) = tex.render_view(&pose_b, w, h) else { continue };

            let kps_a = detect_keypoints(&img_a, &cfg);
            let kps_b = detect_keypoints(&img_b, &cfg);
            if kps_a.len() < 10 || kps_b.len() < 10 {
                continue;
            }
            pair_count += 1;

            let mut matched = 0usize;
            let mut usable = 0usize;
            for kp in &kps_a {
                let q = rel.inverse().apply((kp.x, kp.y));
                if q.0 < 2.0 || q.1 < 2.0 || q.0 > w as f64 - 3.0 || q.1 > h as f64 - 3.0 {
                    continue;
                }
                usable += 1;
                if kps_b
                    .iter()
                    .any(|o| (o.x - q.0).abs() <= 2.0 && (o.y - q.1).abs() <= 2.0)
                {
                    matched += 1;
                }
            }
            if usable >= 10 && matched * 2 >= usable {
                good_pairs += 1;
            }
        }
        assert!(pair_count >= 15, "only {pair_count} usable pairs");
        assert!(
            good_pairs * 10 >= pair_count * 8,
            "{good_pairs}/{pair_count} pairs reach 50% repeatability"
        );
    }

    #[test]
    fn extract_features_deterministic_and_bounded() {
        let layout = make_triplet_layout::<f64>(15, 0, 8, 2.2);
        let cfg = test_detector();
        let img = noise_image(220, 180, 17);
        let a = extract_features(&img, &cfg, &layout);
        let b = extract_features(&img, &cfg, &layout);
        assert_eq!(a, b);
        assert!(a.len() <= cfg.max_keypoints);
        assert!(!a.is_empty());

        let margin = layout.window_radius();
        for f in &a {
            assert!(f.keypoint.x >= margin && f.keypoint.x <= 219.0 - margin);
            assert!(f.keypoint.y >= margin && f.keypoint.y <= 179.0 - margin);
            assert!(f.descriptor.bits() < 1 << 15);
        }
    }
}
