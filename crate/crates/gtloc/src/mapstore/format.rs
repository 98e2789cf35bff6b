//! Binary map file format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic "GTXM" | version u16 | descriptor bits u8
//! detector: layers u32 | contrast f64 | edge f64 | base_sigma f64 | max_kp u32
//! layout:   half_size u32 | sigma f64 | triplet count u16
//!           per triplet: p1x p1y p2x p2y (f32)
//! next_id u64 | record count u32
//! per record: id u64 | pose x y theta (f64) | width u32 | height u32
//!             feature count u16
//!             per feature: x f32 | y f32 | orientation f32 | descriptor u16
//! ```
//!
//! Identity tables and the k-d tree are derived data and are rebuilt on load.

use std::io::{self, Read, Write};

use crate::features::{
    CompactDescriptor, DetectorConfig, Triplet, TripletLayout,
};
use crate::geometry::Pose2D;
use crate::scalar::{num, Scalar};

use super::{MapError, StoredFeature};

pub(super) const MAGIC: &[u8; 4] = b"GTXM";
pub(super) const VERSION: u16 = 1;

pub(super) struct Header<S> {
    pub descriptor_bits: u8,
    pub detector: DetectorConfig<S>,
    pub layout: TripletLayout<S>,
    pub next_id: u64,
    pub record_count: u32,
}

pub(super) struct RawRecord<S> {
    pub id: u64,
    pub pose: Pose2D<S>,
    pub width: u32,
    pub height: u32,
    pub features: Vec<StoredFeature>,
}

fn truncated() -> MapError {
    MapError::Format("truncated file".into())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8]) -> Result<(), MapError> {
    r.read_exact(buf).map_err(|_| truncated())
}

macro_rules! readers {
    ($($name:ident -> $ty:ty),* $(,)?) => {
        $(fn $name(r: &mut impl Read) -> Result<$ty, MapError> {
            let mut buf = [0u8; std::mem::size_of::<$ty>()];
            read_exact_or(r, &mut buf)?;
            Ok(<$ty>::from_le_bytes(buf))
        })*
    };
}

readers! {
    read_u8 -> u8,
    read_u16 -> u16,
    read_u32 -> u32,
    read_u64 -> u64,
    read_f32 -> f32,
    read_f64 -> f64,
}

pub(super) fn write_header<S: Scalar>(w: &mut impl Write, h: &Header<S>) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[h.descriptor_bits])?;

    let d = &h.detector;
    w.write_all(&(d.layers_per_octave as u32).to_le_bytes())?;
    w.write_all(&d.contrast_threshold.to_f64().unwrap().to_le_bytes())?;
    w.write_all(&d.edge_threshold.to_f64().unwrap().to_le_bytes())?;
    w.write_all(&d.base_sigma.to_f64().unwrap().to_le_bytes())?;
    w.write_all(&(d.max_keypoints as u32).to_le_bytes())?;

    w.write_all(&h.layout.half_size().to_le_bytes())?;
    w.write_all(&h.layout.sigma().to_f64().unwrap().to_le_bytes())?;
    w.write_all(&(h.layout.len() as u16).to_le_bytes())?;
    for t in h.layout.triplets() {
        for v in [t.p1.0, t.p1.1, t.p2.0, t.p2.1] {
            w.write_all(&v.to_f32().unwrap().to_le_bytes())?;
        }
    }

    w.write_all(&h.next_id.to_le_bytes())?;
    w.write_all(&h.record_count.to_le_bytes())?;
    Ok(())
}

pub(super) fn read_header<S: Scalar>(r: &mut impl Read) -> Result<Header<S>, MapError> {
    let mut magic = [0u8; 4];
    read_exact_or(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(MapError::Format(format!(
            "bad magic {:02x?}, expected \"GTXM\"",
            magic
        )));
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(MapError::Format(format!(
            "unsupported format version {version}"
        )));
    }
    let descriptor_bits = read_u8(r)?;
    if descriptor_bits == 0 || descriptor_bits > 16 {
        return Err(MapError::Format(format!(
            "descriptor width {descriptor_bits} out of range"
        )));
    }

    let detector = DetectorConfig {
        layers_per_octave: read_u32(r)? as usize,
        contrast_threshold: num(read_f64(r)?),
        edge_threshold: num(read_f64(r)?),
        base_sigma: num(read_f64(r)?),
        max_keypoints: read_u32(r)? as usize,
    };

    let half_size = read_u32(r)?;
    let sigma = num::<S>(read_f64(r)?);
    let triplet_count = read_u16(r)? as usize;
    if triplet_count != descriptor_bits as usize {
        return Err(MapError::Format(format!(
            "layout holds {triplet_count} triplets but descriptors are {descriptor_bits} bits"
        )));
    }
    let mut triplets = Vec::with_capacity(triplet_count);
    for _ in 0..triplet_count {
        let p1 = (num::<S>(read_f32(r)? as f64), num::<S>(read_f32(r)? as f64));
        let p2 = (num::<S>(read_f32(r)? as f64), num::<S>(read_f32(r)? as f64));
        triplets.push(Triplet { p1, p2 });
    }
    let layout = TripletLayout::new(triplets, half_size, sigma);

    let next_id = read_u64(r)?;
    let record_count = read_u32(r)?;
    Ok(Header {
        descriptor_bits,
        detector,
        layout,
        next_id,
        record_count,
    })
}

pub(super) fn write_record<S: Scalar>(
    w: &mut impl Write,
    id: u64,
    pose: &Pose2D<S>,
    width: u32,
    height: u32,
    features: &[StoredFeature],
) -> io::Result<()> {
    w.write_all(&id.to_le_bytes())?;
    for v in [pose.x, pose.y, pose.theta] {
        w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
    }
    w.write_all(&width.to_le_bytes())?;
    w.write_all(&height.to_le_bytes())?;
    w.write_all(&(features.len() as u16).to_le_bytes())?;
    for f in features {
        w.write_all(&f.x.to_le_bytes())?;
        w.write_all(&f.y.to_le_bytes())?;
        w.write_all(&f.orientation.to_le_bytes())?;
        w.write_all(&f.descriptor.bits().to_le_bytes())?;
    }
    Ok(())
}

pub(super) fn read_record<S: Scalar>(
    r: &mut impl Read,
    descriptor_bits: u8,
) -> Result<RawRecord<S>, MapError> {
    let id = read_u64(r)?;
    let x = read_f64(r)?;
    let y = read_f64(r)?;
    let theta = read_f64(r)?;
    if !(x.is_finite() && y.is_finite() && theta.is_finite()) {
        return Err(MapError::CorruptRecord(format!(
            "record {id}: non-finite pose"
        )));
    }
    let pose = Pose2D::new(num(x), num(y), num(theta));
    let width = read_u32(r)?;
    let height = read_u32(r)?;
    if width == 0 || height == 0 {
        return Err(MapError::CorruptRecord(format!(
            "record {id}: zero image dimensions"
        )));
    }
    let count = read_u16(r)? as usize;
    let mut features = Vec::with_capacity(count);
    for i in 0..count {
        let x = read_f32(r)?;
        let y = read_f32(r)?;
        let orientation = read_f32(r)?;
        let bits = read_u16(r)?;
        let descriptor = CompactDescriptor::new(bits, descriptor_bits).map_err(|_| {
            MapError::CorruptRecord(format!(
                "record {id} feature {i}: descriptor {bits:#x} exceeds {descriptor_bits} bits"
            ))
        })?;
        features.push(StoredFeature {
            x,
            y,
            orientation,
            descriptor,
        });
    }
    Ok(RawRecord {
        id,
        pose,
        width,
        height,
        features,
    })
}
