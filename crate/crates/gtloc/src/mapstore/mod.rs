//! The persistent texture map.
//!
//! A map holds one record per reference image: its pose, its features in
//! image-frame coordinates, and an identity table over their descriptors.
//! Records can be added, removed, and updated online; nothing is ever
//! recomputed map-wide. A k-d tree over record positions serves
//! prior-bounded candidate selection, and the whole map round-trips through
//! a little-endian binary file.
//!
//! Concurrency: single writer, many readers. Mutations take `&mut self`;
//! localization reads a `&TextureMap` snapshot, so the borrow checker
//! enforces that no mutation overlaps an in-flight query.

mod format;
mod ingest;
mod kdtree;

use std::collections::BTreeMap;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::features::{
    extract_features, CompactDescriptor, DetectorConfig, Feature, TripletLayout,
};
use crate::geometry::{Extent, Pose2D};
use crate::image::{Image, ImageError};
use crate::matching::IdentityTable;
use crate::scalar::{num, Scalar};

pub use ingest::{build_map_from_csv, read_poses_csv, PoseEntry};
use kdtree::KdTree;

/// Caller-visible record identifier, assigned monotonically. A removed id is
/// never reused.
pub type RecordId = u64;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("unknown record id {0}")]
    UnknownId(RecordId),
    #[error("map format error: {0}")]
    Format(String),
    #[error("corrupt record: {0}")]
    CorruptRecord(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// The persisted form of a feature: position and orientation quantized to
/// `f32` plus the descriptor — exactly what the file format stores, so a
/// loaded map equals the in-memory one field for field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredFeature {
    pub x: f32,
    pub y: f32,
    pub orientation: f32,
    pub descriptor: CompactDescriptor,
}

impl StoredFeature {
    pub fn from_feature<S: Scalar>(f: &Feature<S>) -> Self {
        Self {
            x: f.keypoint.x.to_f32().unwrap(),
            y: f.keypoint.y.to_f32().unwrap(),
            orientation: f.keypoint.orientation.to_f32().unwrap(),
            descriptor: f.descriptor,
        }
    }

    /// Image-frame position promoted to the scalar type.
    pub fn position<S: Scalar>(&self) -> (S, S) {
        (num(self.x as f64), num(self.y as f64))
    }

    /// Position mapped into the global frame by the record pose.
    pub fn global_position<S: Scalar>(&self, pose: &Pose2D<S>) -> (S, S) {
        pose.apply(self.position())
    }
}

/// One mapped reference image.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceImageRecord<S = f64> {
    id: RecordId,
    pose: Pose2D<S>,
    width: u32,
    height: u32,
    features: Vec<StoredFeature>,
    table: IdentityTable,
}

impl<S: Scalar> ReferenceImageRecord<S> {
    pub fn id(&self) -> RecordId {
        self.id
    }

    pub fn pose(&self) -> &Pose2D<S> {
        &self.pose
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn features(&self) -> &[StoredFeature] {
        &self.features
    }

    pub fn table(&self) -> &IdentityTable {
        &self.table
    }
}

/// The persistent feature map.
#[derive(Debug, Clone)]
pub struct TextureMap<S = f64> {
    descriptor_bits: u8,
    detector: DetectorConfig<S>,
    layout: TripletLayout<S>,
    records: BTreeMap<RecordId, ReferenceImageRecord<S>>,
    index: KdTree<S>,
    extent: Option<Extent<S>>,
    next_id: u64,
}

impl<S: Scalar> PartialEq for TextureMap<S> {
    /// Compares persisted state; the k-d tree and per-record tables are
    /// derived deterministically from it (tables are still compared, cheaply
    /// guarding against construction drift).
    fn eq(&self, other: &Self) -> bool {
        self.descriptor_bits == other.descriptor_bits
            && self.detector == other.detector
            && self.layout == other.layout
            && self.next_id == other.next_id
            && self.extent == other.extent
            && self.records == other.records
    }
}

impl<S: Scalar> TextureMap<S> {
    /// An empty map. The detector configuration and triplet layout are fixed
    /// for the lifetime of the map (and persisted with it) so that mapping
    /// and localization always extract comparable descriptors.
    pub fn new(detector: DetectorConfig<S>, layout: TripletLayout<S>) -> Self {
        assert!(
            layout.len() >= 1 && layout.len() <= 16,
            "identity matching requires 1..=16 descriptor bits"
        );
        Self {
            descriptor_bits: layout.len() as u8,
            detector,
            layout,
            records: BTreeMap::new(),
            index: KdTree::new(),
            extent: None,
            next_id: 0,
        }
    }

    pub fn descriptor_bits(&self) -> u8 {
        self.descriptor_bits
    }

    pub fn detector_config(&self) -> &DetectorConfig<S> {
        &self.detector
    }

    pub fn layout(&self) -> &TripletLayout<S> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = RecordId> + '_ {
        self.records.keys().copied()
    }

    pub fn record(&self, id: RecordId) -> Option<&ReferenceImageRecord<S>> {
        self.records.get(&id)
    }

    /// Records in ascending id order.
    pub fn records(&self) -> impl Iterator<Item = &ReferenceImageRecord<S>> {
        self.records.values()
    }

    /// Bounding box of all features' global positions; `None` when the map
    /// holds no features (degenerate extent).
    pub fn extent(&self) -> Option<&Extent<S>> {
        self.extent.as_ref()
    }

    fn make_record(&self, id: RecordId, img: &Image, pose: Pose2D<S>) -> ReferenceImageRecord<S> {
        let features: Vec<StoredFeature> = extract_features(img, &self.detector, &self.layout)
            .iter()
            .map(StoredFeature::from_feature)
            .collect();
        let table =
            IdentityTable::from_descriptors(features.iter().map(|f| f.descriptor), self.descriptor_bits)
                .expect("extraction produces uniform descriptor widths");
        ReferenceImageRecord {
            id,
            pose,
            width: img.width(),
            height: img.height(),
            features,
            table,
        }
    }

    fn extend_extent(&mut self, record_id: RecordId) {
        let rec = &self.records[&record_id];
        for f in &rec.features {
            let p = f.global_position(&rec.pose);
            match &mut self.extent {
                Some(e) => e.include(p),
                None => self.extent = Some(Extent::of_point(p)),
            }
        }
    }

    fn recompute_extent(&mut self) {
        self.extent = None;
        let ids: Vec<RecordId> = self.records.keys().copied().collect();
        for id in ids {
            self.extend_extent(id);
        }
    }

    /// Extracts features from `img`, builds its identity table, and inserts
    /// the record. No other record is touched; the map is immediately
    /// queryable.
    pub fn add_reference(&mut self, img: &Image, pose: Pose2D<S>) -> RecordId {
        let id = self.next_id;
        self.next_id += 1;
        let record = self.make_record(id, img, pose);
        self.index.insert((pose.x, pose.y), id);
        self.records.insert(id, record);
        self.extend_extent(id);
        id
    }

    pub fn remove_reference(&mut self, id: RecordId) -> Result<(), MapError> {
        if self.records.remove(&id).is_none() {
            return Err(MapError::UnknownId(id));
        }
        self.index.remove(id);
        self.recompute_extent();
        Ok(())
    }

    /// Replaces a record's image and pose in place, preserving its id.
    /// Equivalent to remove + add with the id pinned.
    pub fn update_reference(
        &mut self,
        id: RecordId,
        img: &Image,
        pose: Pose2D<S>,
    ) -> Result<(), MapError> {
        if !self.records.contains_key(&id) {
            return Err(MapError::UnknownId(id));
        }
        let record = self.make_record(id, img, pose);
        self.records.insert(id, record);
        self.index.remove(id);
        self.index.insert((pose.x, pose.y), id);
        self.recompute_extent();
        Ok(())
    }

    /// The `k` records whose poses are nearest to `position`, ascending
    /// distance, ties by id. Fewer are returned when the map is smaller.
    pub fn select_near(&self, position: (S, S), k: usize) -> Vec<RecordId> {
        self.index.knn(position, k)
    }

    /// Per-record feature payload in bits: each feature stores position and
    /// orientation as three 32-bit floats plus an (n-bit value, 16-bit
    /// index) table entry. 850 features at n = 15 give 107950 bits.
    pub fn record_payload_bits(&self, record: &ReferenceImageRecord<S>) -> u64 {
        let nf = record.features.len() as u64;
        nf * 3 * 32 + nf * (self.descriptor_bits as u64 + 16)
    }

    /// Total feature payload of the map in bits.
    pub fn feature_payload_bits(&self) -> u64 {
        self.records
            .values()
            .map(|r| self.record_payload_bits(r))
            .sum()
    }

    pub fn save(&self, mut w: impl Write) -> io::Result<()> {
        format::write_header(
            &mut w,
            &format::Header {
                descriptor_bits: self.descriptor_bits,
                detector: self.detector,
                layout: self.layout.clone(),
                next_id: self.next_id,
                record_count: self.records.len() as u32,
            },
        )?;
        for rec in self.records.values() {
            format::write_record(&mut w, rec.id, &rec.pose, rec.width, rec.height, &rec.features)?;
        }
        Ok(())
    }

    pub fn save_to_path(&self, path: impl AsRef<std::path::Path>) -> io::Result<()> {
        let mut w = io::BufWriter::new(std::fs::File::create(path)?);
        self.save(&mut w)?;
        w.flush()
    }

    pub fn load(mut r: impl Read) -> Result<Self, MapError> {
        let header = format::read_header::<S>(&mut r)?;
        let mut map = Self {
            descriptor_bits: header.descriptor_bits,
            detector: header.detector,
            layout: header.layout,
            records: BTreeMap::new(),
            index: KdTree::new(),
            extent: None,
            next_id: header.next_id,
        };
        for _ in 0..header.record_count {
            let raw = format::read_record::<S>(&mut r, header.descriptor_bits)?;
            if map.records.contains_key(&raw.id) {
                return Err(MapError::CorruptRecord(format!(
                    "duplicate record id {}",
                    raw.id
                )));
            }
            if raw.id >= header.next_id {
                return Err(MapError::CorruptRecord(format!(
                    "record id {} not below next_id {}",
                    raw.id, header.next_id
                )));
            }
            let table = IdentityTable::from_descriptors(
                raw.features.iter().map(|f| f.descriptor),
                header.descriptor_bits,
            )
            .map_err(|e| MapError::CorruptRecord(e.to_string()))?;
            map.index.insert((raw.pose.x, raw.pose.y), raw.id);
            map.records.insert(
                raw.id,
                ReferenceImageRecord {
                    id: raw.id,
                    pose: raw.pose,
                    width: raw.width,
                    height: raw.height,
                    features: raw.features,
                    table,
                },
            );
        }
        map.recompute_extent();
        Ok(map)
    }

    pub fn load_from_path(path: impl AsRef<std::path::Path>) -> Result<Self, MapError> {
        Self::load(io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Audits every structural invariant; used by tests and the mutation
    /// stress suite.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.index.len() != self.records.len() {
            return Err(format!(
                "index holds {} entries for {} records",
                self.index.len(),
                self.records.len()
            ));
        }
        let mut recomputed: Option<Extent<S>> = None;
        for (&id, rec) in &self.records {
            if rec.id != id {
                return Err(format!("record keyed {id} carries id {}", rec.id));
            }
            if id >= self.next_id {
                return Err(format!("record id {id} not below next_id {}", self.next_id));
            }
            let pi = num::<S>(std::f64::consts::PI);
            if !(rec.pose.theta > -pi && rec.pose.theta <= pi) {
                return Err(format!("record {id}: pose angle not normalized"));
            }
            match self.index.point_of(id) {
                Some(p) if p == (rec.pose.x, rec.pose.y) => {}
                Some(_) => return Err(format!("record {id}: stale index position")),
                None => return Err(format!("record {id}: missing from index")),
            }
            if rec.table.num_indexed() as usize != rec.features.len() {
                return Err(format!(
                    "record {id}: table indexes {} of {} features",
                    rec.table.num_indexed(),
                    rec.features.len()
                ));
            }
            let mut seen = vec![false; rec.features.len()];
            for (value, bucket) in rec.table.buckets() {
                for &fi in bucket {
                    let f = rec
                        .features
                        .get(fi as usize)
                        .ok_or_else(|| format!("record {id}: bucket index {fi} out of range"))?;
                    if f.descriptor.bits() != value {
                        return Err(format!("record {id}: feature {fi} in wrong bucket"));
                    }
                    if std::mem::replace(&mut seen[fi as usize], true) {
                        return Err(format!("record {id}: feature {fi} indexed twice"));
                    }
                }
            }
            for f in &rec.features {
                if f.descriptor.n() != self.descriptor_bits {
                    return Err(format!("record {id}: descriptor width mismatch"));
                }
                let p = f.global_position(&rec.pose);
                match &mut recomputed {
                    Some(e) => e.include(p),
                    None => recomputed = Some(Extent::of_point(p)),
                }
            }
        }
        if recomputed != self.extent {
            return Err("cached extent does not match recomputed bounding box".into());
        }
        Ok(())
    }
}
