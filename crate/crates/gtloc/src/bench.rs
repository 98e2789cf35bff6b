//! Experiment harness: synthetic worlds, success-rate sweeps, and
//! machine-readable reports.
//!
//! An experiment renders a grid of overlapping reference views from a seeded
//! texture, builds a map, then localizes rendered queries at each configured
//! prior-error level (including no prior). Queries are independent and may
//! run on any number of workers; records are emitted in `(query, level)`
//! order regardless of scheduling, so a config plus seeds reproduces the
//! same report.

use std::io::{self, BufRead, Write};

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{make_triplet_layout, DetectorConfig};
use crate::geometry::{is_success, Pose2D, RansacConfig, SuccessCriteria};
use crate::localizer::{localize_traced, Prior, PriorSchedule};
use crate::mapstore::TextureMap;
use crate::synth::{SyntheticTexture, TextureProfile};

pub const REPORT_SCHEMA: &str = "gtloc-report/1";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("report parse error: {0}")]
    Parse(String),
    #[error("unsupported report schema {0:?}")]
    Schema(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Full description of one experiment. Identical configs (seeds included)
/// produce byte-identical result content.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub texture_seed: u64,
    pub profile: TextureProfile,
    pub octaves: u32,
    pub persistence: f64,
    /// Reference grid, columns x rows.
    pub grid: (usize, usize),
    /// Fraction of each reference view shared with its grid neighbor, [0, 1).
    pub overlap: f64,
    pub ref_size: (u32, u32),
    pub query_size: (u32, u32),
    pub query_count: usize,
    /// Prior-error levels in millimeters; `None` runs without a prior.
    pub prior_levels_mm: Vec<Option<f64>>,
    pub criteria: SuccessCriteria<f64>,
    pub detector: DetectorConfig<f64>,
    pub descriptor_bits: u8,
    pub layout_seed: u64,
    pub query_seed: u64,
    pub ransac: RansacConfig<f64>,
    pub schedule: PriorSchedule<f64>,
    /// Per-view additive Gaussian sensor noise (intensity levels, sigma);
    /// independently seeded per rendered image. Zero disables it.
    pub sensor_noise: f64,
    /// Voting-map cell edge length in pixels.
    pub cell_size: f64,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            texture_seed: 1,
            profile: TextureProfile::Rich,
            octaves: 6,
            persistence: 0.55,
            grid: (4, 4),
            overlap: 0.5,
            ref_size: (220, 220),
            query_size: (200, 200),
            query_count: 20,
            prior_levels_mm: vec![None],
            // The synthetic world's physical scale: 2 px/mm keeps the
            // prior-error table's candidate budgets commensurate with this
            // world's reference density, the way the paper's table was sized
            // for its mapping density. Success thresholds stay in pixels.
            criteria: SuccessCriteria {
                px_per_mm: 2.0,
                ..SuccessCriteria::default()
            },
            // Desk-scale detector: the paper-default base sigma suits
            // megapixel imagery, while bench views are a few hundred pixels
            // wide and need finer-scale keypoints to fill the budget.
            detector: DetectorConfig {
                base_sigma: 2.5,
                max_keypoints: 400,
                ..DetectorConfig::default()
            },
            descriptor_bits: 15,
            layout_seed: 0,
            query_seed: 7,
            ransac: RansacConfig::default(),
            schedule: PriorSchedule::default(),
            sensor_noise: 0.0,
            cell_size: crate::voting::DEFAULT_CELL_SIZE,
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    /// The prior-error brackets of the default schedule, preceded by a
    /// no-prior run.
    pub fn table_levels() -> Vec<Option<f64>> {
        let mut levels = vec![None];
        levels.extend(
            [0.0, 50.0, 100.0, 200.0, 350.0, 500.0, 750.0, 1000.0, 1500.0]
                .iter()
                .map(|&mm| Some(mm)),
        );
        levels
    }
}

/// One localization attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub query_id: usize,
    pub prior_mm: Option<f64>,
    pub considered: usize,
    pub success: bool,
    pub inliers: usize,
    pub t_match_us: u64,
    pub t_vote_us: u64,
    pub t_ransac_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSummary {
    pub prior_mm: Option<f64>,
    pub queries: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_t_match_us: u64,
    pub median_t_vote_us: u64,
    pub median_t_ransac_us: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    schema: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryLine {
    summary: Vec<LevelSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: Vec<QueryRecord>,
    pub summary: Vec<LevelSummary>,
}

fn median(mut values: Vec<u64>) -> u64 {
    if values.is_empty() {
        return 0;
    }
    values.sort_unstable();
    values[values.len() / 2]
}

impl Report {
    fn summarize(records: &[QueryRecord], levels: &[Option<f64>]) -> Vec<LevelSummary> {
        levels
            .iter()
            .map(|&prior_mm| {
                let at: Vec<&QueryRecord> =
                    records.iter().filter(|r| r.prior_mm == prior_mm).collect();
                let successes = at.iter().filter(|r| r.success).count();
                LevelSummary {
                    prior_mm,
                    queries: at.len(),
                    successes,
                    // Exactly successes / queries; no smoothing.
                    success_rate: if at.is_empty() {
                        0.0
                    } else {
                        successes as f64 / at.len() as f64
                    },
                    median_t_match_us: median(at.iter().map(|r| r.t_match_us).collect()),
                    median_t_vote_us: median(at.iter().map(|r| r.t_vote_us).collect()),
                    median_t_ransac_us: median(at.iter().map(|r| r.t_ransac_us).collect()),
                }
            })
            .collect()
    }

    pub fn success_rate(&self, prior_mm: Option<f64>) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.prior_mm == prior_mm)
            .map(|s| s.success_rate)
    }

    /// A copy with every timing field zeroed. Timings are wall-clock readings
    /// and the only non-reproducible content; this is the canonical form for
    /// byte comparisons.
    pub fn without_timings(&self) -> Report {
        let records = self
            .records
            .iter()
            .map(|r| QueryRecord {
                t_match_us: 0,
                t_vote_us: 0,
                t_ransac_us: 0,
                ..r.clone()
            })
            .collect();
        let summary = self
            .summary
            .iter()
            .map(|s| LevelSummary {
                median_t_match_us: 0,
                median_t_vote_us: 0,
                median_t_ransac_us: 0,
                ..s.clone()
            })
            .collect();
        Report { records, summary }
    }

    /// Line-delimited JSON: a schema header, one record per line, then a
    /// summary block.
    pub fn write(&self, mut w: impl Write) -> io::Result<()> {
        let header = serde_json::to_string(&HeaderLine {
            schema: REPORT_SCHEMA.to_string(),
        })?;
        writeln!(w, "{header}")?;
        for r in &self.records {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        let summary = serde_json::to_string(&SummaryLine {
            summary: self.summary.clone(),
        })?;
        writeln!(w, "{summary}")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("vec writes cannot fail");
        out
    }

    /// Strict reader: validates the schema line and rejects unknown fields.
    pub fn read(r: impl io::Read) -> Result<Report, BenchError> {
        let mut lines = io::BufReader::new(r).lines();
        let header = lines
            .next()
            .ok_or_else(|| BenchError::Parse("empty report".into()))?
            .map_err(BenchError::Io)?;
        let header: HeaderLine =
            serde_json::from_str(&header).map_err(|e| BenchError::Parse(e.to_string()))?;
        if header.schema != REPORT_SCHEMA {
            return Err(BenchError::Schema(header.schema));
        }

        let mut records = Vec::new();
        let mut summary: Option<Vec<LevelSummary>> = None;
        for line in lines {
            let line = line.map_err(BenchError::Io)?;
            if line.trim().is_empty() {
                continue;
            }
            if summary.is_some() {
                return Err(BenchError::Parse("content after summary block".into()));
            }
            if let Ok(s) = serde_json::from_str::<SummaryLine>(&line) {
                summary = Some(s.summary);
            } else {
                records.push(
                    serde_json::from_str::<QueryRecord>(&line)
                        .map_err(|e| BenchError::Parse(e.to_string()))?,
                );
            }
        }
        Ok(Report {
            records,
            summary: summary.ok_or_else(|| BenchError::Parse("missing summary block".into()))?,
        })
    }
}

/// Adds seeded zero-mean Gaussian noise to a rendered view, emulating
/// per-capture sensor noise; references and queries get independent streams.
fn apply_sensor_noise(img: &crate::image::Image, sigma: f64, stream: u64) -> crate::image::Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    crate::image::Image::from_fn(img.width(), img.height(), |x, y| {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let z = (-2.0 * u1.ln()).sqrt() * u2.cos();
        (img.get(x, y) as f64 + sigma * z).round().clamp(0.0, 255.0) as u8
    })
}

/// The world an experiment runs in: the texture, the built map, and the
/// query ground truths.
pub struct ExperimentWorld {
    pub texture: SyntheticTexture,
    pub map: TextureMap<f64>,
    pub query_truths: Vec<Pose2D<f64>>,
}

/// Renders the reference grid, builds the map, and samples query poses
/// uniformly inside the mapped span.
pub fn build_world(cfg: &ExperimentConfig) -> ExperimentWorld {
    assert!((0.0..1.0).contains(&cfg.overlap));
    let (rw, rh) = cfg.ref_size;
    let (qw, qh) = cfg.query_size;
    let step_x = (rw as f64 * (1.0 - cfg.overlap)).max(1.0);
    let step_y = (rh as f64 * (1.0 - cfg.overlap)).max(1.0);
    let span_x = step_x * (cfg.grid.0 - 1) as f64 + rw as f64;
    let span_y = step_y * (cfg.grid.1 - 1) as f64 + rh as f64;
    let qdiag = (qw as f64).hypot(qh as f64);
    let pad = qdiag.ceil() + 8.0;

    let texture = SyntheticTexture::generate(
        cfg.texture_seed,
        (span_x + 2.0 * pad).ceil() as u32,
        (span_y + 2.0 * pad).ceil() as u32,
        cfg.octaves,
        cfg.persistence,
        cfg.profile,
    );

    let layout = make_triplet_layout(cfg.descriptor_bits as usize, cfg.layout_seed, 8, 2.2);
    let mut map = TextureMap::new(cfg.detector, layout);
    for gy in 0..cfg.grid.1 {
        for gx in 0..cfg.grid.0 {
            let pose = Pose2D::new(pad + gx as f64 * step_x, pad + gy as f64 * step_y, 0.0);
            let img = texture
                .render_view(&pose, rw, rh)
                .expect("reference grid fits the texture by construction");
            let noisy = apply_sensor_noise(
                &img,
                cfg.sensor_noise,
                cfg.texture_seed
                    .wrapping_mul(0x2545_f491_4f6c_dd1d)
                    .wrapping_add((gy * cfg.grid.0 + gx) as u64),
            );
            map.add_reference(&noisy, pose);
        }
    }

    // Query centers stay far enough inside the mapped span that any
    // rotation keeps the footprint on the texture.
    let radius = qdiag / 2.0;
    assert!(
        span_x > 2.0 * radius && span_y > 2.0 * radius,
        "mapped span too small for the query size"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.query_seed);
    let query_truths: Vec<Pose2D<f64>> = (0..cfg.query_count)
        .map(|_| {
            let cx = rng.random_range(pad + radius..pad + span_x - radius);
            let cy = rng.random_range(pad + radius..pad + span_y - radius);
            let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            // Origin pose whose center lands at (cx, cy).
            let (sin, cos) = theta.sin_cos();
            let (hx, hy) = (qw as f64 / 2.0, qh as f64 / 2.0);
            Pose2D::new(
                cx - (cos * hx - sin * hy),
                cy - (sin * hx + cos * hy),
                theta,
            )
        })
        .collect();

    ExperimentWorld {
        texture,
        map,
        query_truths,
    }
}

/// Prior position for a query: the ground-truth camera position shifted by
/// exactly the expected error in a seeded uniform-random direction.
///
/// The camera position is the view center; candidate selection compares
/// against reference-origin positions, so the anchor subtracts half a
/// reference footprint. That keeps proximity meaningful for arbitrarily
/// rotated queries, whose own origin corner can sit far from the view.
fn make_prior(cfg: &ExperimentConfig, truth: &Pose2D<f64>, mm: f64, query_id: usize, level_idx: usize) -> Prior<f64> {
    let (qw, qh) = cfg.query_size;
    let (rw, rh) = cfg.ref_size;
    let center = truth.apply((qw as f64 / 2.0, qh as f64 / 2.0));
    let anchor = (center.0 - rw as f64 / 2.0, center.1 - rh as f64 / 2.0);

    let stream = cfg
        .query_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((query_id as u64) << 20)
        .wrapping_add(level_idx as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let dir = rng.random_range(0.0..std::f64::consts::TAU);
    let shift = cfg.criteria.mm_to_px(mm);
    Prior {
        position: (anchor.0 + shift * dir.cos(), anchor.1 + shift * dir.sin()),
        expected_error_mm: mm,
    }
}

fn run_query(
    cfg: &ExperimentConfig,
    world: &ExperimentWorld,
    query_id: usize,
) -> Vec<QueryRecord> {
    let truth = &world.query_truths[query_id];
    let query = world
        .texture
        .render_view(truth, cfg.query_size.0, cfg.query_size.1)
        .expect("query footprint sampled inside the texture");
    let query = apply_sensor_noise(
        &query,
        cfg.sensor_noise,
        cfg.query_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(query_id as u64 + 1),
    );

    cfg.prior_levels_mm
        .iter()
        .enumerate()
        .map(|(level_idx, &level)| {
            let prior = level.map(|mm| make_prior(cfg, truth, mm, query_id, level_idx));
            let outcome = localize_traced(
                &world.map,
                &query,
                prior.as_ref(),
                &cfg.schedule,
                &cfg.ransac,
                cfg.cell_size,
            );
            match outcome.map(|t| t.result) {
                Ok(res) => QueryRecord {
                    query_id,
                    prior_mm: level,
                    considered: res.considered_images,
                    success: is_success(&res.pose, truth, &cfg.criteria),
                    inliers: res.inlier_count,
                    t_match_us: res.timings.matching.as_micros() as u64,
                    t_vote_us: res.timings.voting.as_micros() as u64,
                    t_ransac_us: res.timings.ransac.as_micros() as u64,
                    failure: None,
                },
                Err(e) => QueryRecord {
                    query_id,
                    prior_mm: level,
                    considered: 0,
                    success: false,
                    inliers: 0,
                    t_match_us: 0,
                    t_vote_us: 0,
                    t_ransac_us: 0,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect()
}

/// Runs the full sweep. Per-query failures become failure records; the sweep
/// itself never aborts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Report {
    let world = build_world(cfg);
    run_experiment_on(cfg, &world)
}

/// Runs the sweep against an already-built world (lets callers reuse one
/// world across several runs).
pub fn run_experiment_on(cfg: &ExperimentConfig, world: &ExperimentWorld) -> Report {
    let queries: Vec<usize> = (0..cfg.query_count).collect();
    let run = || -> Vec<Vec<QueryRecord>> {
        queries
            .par_iter()
            .map(|&q| run_query(cfg, world, q))
            .collect()
    };
    let nested = if cfg.workers == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .expect("thread pool construction")
            .install(run)
    };
    // Canonical (query_id, level) order independent of scheduling.
    let records: Vec<QueryRecord> = nested.into_iter().flatten().collect();
    let summary = Report::summarize(&records, &cfg.prior_levels_mm);
    Report { records, summary }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            grid: (3, 3),
            ref_size: (190, 190),
            query_size: (120, 120),
            query_count: 4,
            detector: DetectorConfig {
                base_sigma: 2.5,
                max_keypoints: 250,
                ..DetectorConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_reference_self_query_succeeds() {
        let cfg = ExperimentConfig {
            grid: (1, 1),
            ref_size: (220, 220),
            query_size: (150, 150),
            query_count: 1,
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&cfg);
        assert_eq!(report.records.len(), 1);
        assert_eq!(report.success_rate(None), Some(1.0));
    }

    #[test]
    fn report_roundtrip_and_schema_enforcement() {
        let report = Report {
            records: vec![QueryRecord {
                query_id: 0,
                prior_mm: Some(100.0),
                considered: 20,
                success: true,
                inliers: 17,
                t_match_us: 120,
                t_vote_us: 40,
                t_ransac_us: 9,
                failure: None,
            }],
            summary: vec![LevelSummary {
                prior_mm: Some(100.0),
                queries: 1,
                successes: 1,
                success_rate: 1.0,
                median_t_match_us: 120,
                median_t_vote_us: 40,
                median_t_ransac_us: 9,
            }],
        };
        let bytes = report.to_bytes();
        let back = Report::read(&bytes[..]).unwrap();
        assert_eq!(back, report);

        // Unknown fields are rejected.
        let text = String::from_utf8(bytes).unwrap();
        let tampered = text.replace("\"query_id\":0", "\"query_id\":0,\"bogus\":1");
        assert!(matches!(
            Report::read(tampered.as_bytes()),
            Err(BenchError::Parse(_))
        ));

        // Wrong schema version is rejected.
        let wrong = text.replace(REPORT_SCHEMA, "gtloc-report/999");
        assert!(matches!(
            Report::read(wrong.as_bytes()),
            Err(BenchError::Schema(_))
        ));

        // A report missing its summary is rejected.
        let missing: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(Report::read(missing.as_bytes()).is_err());
    }

    #[test]
    fn reports_reproducible_across_worker_counts() {
        let mut cfg = tiny_config();
        cfg.prior_levels_mm = vec![None, Some(0.0), Some(100.0)];
        cfg.workers = 1;
        let a = run_experiment(&cfg);
        cfg.workers = 4;
        let b = run_experiment(&cfg);
        assert_eq!(
            a.without_timings().to_bytes(),
            b.without_timings().to_bytes()
        );
    }

    #[test]
    fn summary_counts_exactly() {
        let mut cfg = tiny_config();
        cfg.prior_levels_mm = vec![None, Some(50.0)];
        let report = run_experiment(&cfg);
        assert_eq!(report.records.len(), cfg.query_count * 2);
        for s in &report.summary {
            assert_eq!(s.queries, cfg.query_count);
            let recount = report
                .records
                .iter()
                .filter(|r| r.prior_mm == s.prior_mm && r.success)
                .count();
            assert_eq!(s.successes, recount);
            assert_eq!(s.success_rate, recount as f64 / s.queries as f64);
        }
    }
}
