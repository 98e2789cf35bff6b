//! End-to-end pose estimation against a texture map.
//!
//! Global mode considers every reference image; with a prior, only the
//! nearest few are matched, scaled by the prior's expected error through a
//! conservative schedule. The pipeline is: extract query features, identity
//! match against candidate tables, vote with the implied origins, then
//! RANSAC over the winning cell's matches. The returned pose anchors the
//! query image's upper-left corner in the global frame.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::features::extract_features;
use crate::geometry::{ransac_pose, wrap_angle, Correspondence, Pose2D, RansacConfig};
use crate::image::Image;
use crate::mapstore::{RecordId, TextureMap};
use crate::scalar::{num, Scalar};
use crate::voting::VotingMap;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LocalizeError {
    /// The query image produced no usable features.
    #[error("no features extracted from the query image")]
    NoFeatures,
    /// Identity matching produced no votes inside the grid.
    #[error("no votes cast on the voting map")]
    NoVotes,
    /// The winning cell's matches did not reach consensus.
    #[error("ransac found no consensus")]
    NoConsensus,
}

/// An externally supplied position estimate with its expected error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prior<S = f64> {
    /// Estimated query-image origin position, global-frame pixels.
    pub position: (S, S),
    /// Expected magnitude of the estimate's error, millimeters.
    pub expected_error_mm: S,
}

/// Maps prior error brackets to the number of reference images to consider.
/// Entries are strictly increasing in both fields; errors beyond the last
/// bracket consider every image.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSchedule<S = f64> {
    entries: Vec<(S, usize)>,
}

impl<S: Scalar> Default for PriorSchedule<S> {
    fn default() -> Self {
        Self::new(
            [
                (0.0, 5),
                (50.0, 10),
                (100.0, 20),
                (200.0, 50),
                (350.0, 100),
                (500.0, 250),
                (750.0, 500),
                (1000.0, 750),
                (1500.0, 1000),
            ]
            .into_iter()
            .map(|(mm, n)| (num(mm), n))
            .collect(),
        )
    }
}

impl<S: Scalar> PriorSchedule<S> {
    pub fn new(entries: Vec<(S, usize)>) -> Self {
        for pair in entries.windows(2) {
            assert!(
                pair[0].0 < pair[1].0 && pair[0].1 < pair[1].1,
                "schedule must increase strictly in both fields"
            );
        }
        Self { entries }
    }

    pub fn entries(&self) -> &[(S, usize)] {
        &self.entries
    }

    /// Image budget for a given expected error: the smallest bracket at or
    /// above it (rounding up is the conservative choice). `None` means all
    /// images.
    pub fn lookup(&self, expected_error_mm: S) -> Option<usize> {
        self.entries
            .iter()
            .find(|(mm, _)| *mm >= expected_error_mm)
            .map(|&(_, n)| n)
    }
}

/// See [`PriorSchedule::lookup`].
pub fn schedule_lookup<S: Scalar>(schedule: &PriorSchedule<S>, expected_error_mm: S) -> Option<usize> {
    schedule.lookup(expected_error_mm)
}

/// Wall-clock cost of each pipeline phase (feature extraction excluded).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimings {
    pub matching: Duration,
    pub voting: Duration,
    pub ransac: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.matching + self.voting + self.ransac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult<S = f64> {
    /// Pose of the query image's upper-left corner in the global frame.
    pub pose: Pose2D<S>,
    pub inlier_count: usize,
    pub votes_in_winning_cell: usize,
    pub considered_images: usize,
    pub timings: PhaseTimings,
}

/// Converts an origin-anchored pose to the pose of the image center.
/// Both anchors share the same rotation, so angle errors are identical.
pub fn center_pose<S: Scalar>(origin: &Pose2D<S>, width: u32, height: u32) -> Pose2D<S> {
    let half = (
        num::<S>(width as f64) / num::<S>(2.0),
        num::<S>(height as f64) / num::<S>(2.0),
    );
    let (cx, cy) = origin.apply(half);
    Pose2D {
        x: cx,
        y: cy,
        theta: origin.theta,
    }
}

/// Localizes `query` against `map`.
///
/// Candidates come from `select_near` when a prior is given (budget from the
/// schedule) and are otherwise all records in id order. Deterministic given
/// `ransac.seed`.
pub fn localize<S: Scalar>(
    map: &TextureMap<S>,
    query: &Image,
    prior: Option<&Prior<S>>,
    schedule: &PriorSchedule<S>,
    ransac: &RansacConfig<S>,
) -> Result<LocalizationResult<S>, LocalizeError> {
    let outcome = localize_traced(
        map,
        query,
        prior,
        schedule,
        ransac,
        num(crate::voting::DEFAULT_CELL_SIZE),
    )?;
    Ok(outcome.result)
}

/// Localization plus the voting map it used; the CLI's votemap dump and the
/// bench harness want to look inside. `cell_size` sets the voting grid pitch.
pub struct TracedLocalization<S: Scalar> {
    pub result: LocalizationResult<S>,
    pub voting_map: VotingMap<S>,
}

pub fn localize_traced<S: Scalar>(
    map: &TextureMap<S>,
    query: &Image,
    prior: Option<&Prior<S>>,
    schedule: &PriorSchedule<S>,
    ransac: &RansacConfig<S>,
    cell_size: S,
) -> Result<TracedLocalization<S>, LocalizeError> {
    let features = extract_features(query, map.detector_config(), map.layout());
    if features.is_empty() {
        return Err(LocalizeError::NoFeatures);
    }

    let candidates: Vec<RecordId> = match prior {
        Some(p) => match schedule.lookup(p.expected_error_mm) {
            Some(k) => map.select_near(p.position, k),
            None => map.ids().collect(),
        },
        None => map.ids().collect(),
    };
    let considered_images = candidates.len();

    // Identity matching, lifted straight into global-frame correspondences.
    let t0 = Instant::now();
    let mut correspondences: Vec<Correspondence<S>> = Vec::new();
    for id in &candidates {
        let rec = map.record(*id).expect("candidate ids come from the map");
        let pose = rec.pose();
        for qf in &features {
            let bucket = rec.table().bucket(qf.descriptor.bits());
            for &ri in bucket {
                let rf = &rec.features()[ri as usize];
                correspondences.push(Correspondence {
                    query_pt: (qf.keypoint.x, qf.keypoint.y),
                    query_angle: qf.keypoint.orientation,
                    ref_pt: rf.global_position(pose),
                    ref_angle: wrap_angle(num::<S>(rf.orientation as f64) + pose.theta),
                });
            }
        }
    }
    let matching = t0.elapsed();

    if correspondences.is_empty() {
        return Err(LocalizeError::NoVotes);
    }

    let t1 = Instant::now();
    let extent = map.extent().copied().ok_or(LocalizeError::NoVotes)?;
    let diagonal = num::<S>((query.width() as f64).hypot(query.height() as f64));
    let mut vm = VotingMap::new(&extent, cell_size, diagonal);
    vm.cast_votes(&correspondences);
    let (_, winners) = vm.winning_cell().map_err(|_| LocalizeError::NoVotes)?;
    let voting = t1.elapsed();

    let t2 = Instant::now();
    let (pose, inliers) =
        ransac_pose(&winners, ransac).map_err(|_| LocalizeError::NoConsensus)?;
    let ransac_time = t2.elapsed();

    Ok(TracedLocalization {
        result: LocalizationResult {
            pose,
            inlier_count: inliers.len(),
            votes_in_winning_cell: winners.len(),
            considered_images,
            timings: PhaseTimings {
                matching,
                voting,
                ransac: ransac_time,
            },
        },
        voting_map: vm,
    })
}
