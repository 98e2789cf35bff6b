//! Identity matching and nearest-neighbor baseline matchers.
//!
//! Identity matching accepts a feature pair iff the two binary descriptors
//! are bit-identical, implemented as a bucket lookup in a table with one row
//! per possible descriptor value. Tables are built per reference image and
//! stored sparsely: 850 features occupy under 3% of the 2^15 rows.

use std::collections::HashMap;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::{BinaryDescriptor, CompactDescriptor, Feature};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchingError {
    #[error("descriptor is {found} bits wide, table expects {expected}")]
    BitWidthMismatch { expected: u8, found: u8 },
}

/// A proposed feature pair.
///
/// `ref_image_id` is zero for matchers that see a single reference set; the
/// localizer fills in record ids when matching against a whole map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub query_index: usize,
    pub ref_image_id: u64,
    pub ref_index: usize,
}

/// Bucket table from descriptor value to the indices of features carrying
/// that value. Only non-empty buckets are materialized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdentityTable {
    n: u8,
    buckets: HashMap<u16, Vec<u32>>,
    indexed: u32,
}

impl IdentityTable {
    pub fn from_descriptors(
        descriptors: impl IntoIterator<Item = CompactDescriptor>,
        n: u8,
    ) -> Result<Self, MatchingError> {
        assert!(n >= 1 && n <= 16, "identity tables address at most 2^16 rows");
        let mut buckets: HashMap<u16, Vec<u32>> = HashMap::new();
        let mut indexed = 0u32;
        for (i, d) in descriptors.into_iter().enumerate() {
            if d.n() != n {
                return Err(MatchingError::BitWidthMismatch {
                    expected: n,
                    found: d.n(),
                });
            }
            buckets.entry(d.bits()).or_default().push(i as u32);
            indexed += 1;
        }
        Ok(Self {
            n,
            buckets,
            indexed,
        })
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    /// Indices whose descriptor equals `value`, in insertion order.
    pub fn bucket(&self, value: u16) -> &[u32] {
        self.buckets.get(&value).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_indexed(&self) -> u32 {
        self.indexed
    }

    pub fn non_empty_buckets(&self) -> usize {
        self.buckets.len()
    }

    pub fn buckets(&self) -> impl Iterator<Item = (u16, &[u32])> {
        self.buckets.iter().map(|(&v, idx)| (v, idx.as_slice()))
    }
}

/// Builds the identity table for one reference image's features.
pub fn build_table<S: Scalar>(
    features: &[Feature<S>],
    n: u8,
) -> Result<IdentityTable, MatchingError> {
    IdentityTable::from_descriptors(features.iter().map(|f| f.descriptor), n)
}

/// All pairs `(q, r)` with `desc(q) == desc(r)`, via table lookup.
pub fn identity_match<S: Scalar>(
    query: &[Feature<S>],
    table: &IdentityTable,
) -> Result<Vec<Match>, MatchingError> {
    let mut out = Vec::new();
    for (qi, f) in query.iter().enumerate() {
        if f.descriptor.n() != table.n() {
            return Err(MatchingError::BitWidthMismatch {
                expected: table.n(),
                found: f.descriptor.n(),
            });
        }
        for &ri in table.bucket(f.descriptor.bits()) {
            out.push(Match {
                query_index: qi,
                ref_image_id: 0,
                ref_index: ri as usize,
            });
        }
    }
    Ok(out)
}

/// Nearest neighbor of `d` in `set` by Hamming distance, ties broken by the
/// lowest index. `skip` excludes one index (used for second-NN searches).
fn nearest<D: BinaryDescriptor>(d: &D, set: &[D], skip: Option<usize>) -> Option<(usize, u32)> {
    let mut best: Option<(usize, u32)> = None;
    for (i, r) in set.iter().enumerate() {
        if skip == Some(i) {
            continue;
        }
        let dist = d.hamming(r);
        if best.map_or(true, |(_, bd)| dist < bd) {
            best = Some((i, dist));
        }
    }
    best
}

/// Mutual-nearest-neighbor matching: `(q, r)` survives iff `r` is the NN of
/// `q` among the references and `q` is the NN of `r` among the queries.
pub fn nn_match_crosscheck<S: Scalar, D: BinaryDescriptor>(
    query: &[Feature<S, D>],
    reference: &[Feature<S, D>],
) -> Vec<Match> {
    if reference.is_empty() || query.is_empty() {
        return Vec::new();
    }
    let qd: Vec<D> = query.iter().map(|f| f.descriptor).collect();
    let rd: Vec<D> = reference.iter().map(|f| f.descriptor).collect();

    let forward: Vec<usize> = qd
        .iter()
        .map(|d| nearest(d, &rd, None).expect("reference non-empty").0)
        .collect();
    let backward: Vec<usize> = rd
        .iter()
        .map(|d| nearest(d, &qd, None).expect("query non-empty").0)
        .collect();

    forward
        .iter()
        .enumerate()
        .filter(|&(qi, &ri)| backward[ri] == qi)
        .map(|(qi, &ri)| Match {
            query_index: qi,
            ref_image_id: 0,
            ref_index: ri,
        })
        .collect()
}

/// Lowe-style ratio test: keep `(q, NN(q))` iff the NN distance is strictly
/// below `ratio` times the second-NN distance.
pub fn nn_match_ratio<S: Scalar, D: BinaryDescriptor>(
    query: &[Feature<S, D>],
    reference: &[Feature<S, D>],
    ratio: f64,
) -> Vec<Match> {
    if reference.len() < 2 {
        return Vec::new();
    }
    let rd: Vec<D> = reference.iter().map(|f| f.descriptor).collect();
    let mut out = Vec::new();
    for (qi, f) in query.iter().enumerate() {
        let (ri, d1) = nearest(&f.descriptor, &rd, None).unwrap();
        let (_, d2) = nearest(&f.descriptor, &rd, Some(ri)).unwrap();
        if (d1 as f64) < ratio * (d2 as f64) {
            out.push(Match {
                query_index: qi,
                ref_image_id: 0,
                ref_index: ri,
            });
        }
    }
    out
}

/// Deterministic uniform sample of `k` indices out of `len`, without
/// replacement, returned ascending.
pub fn sample_indices(len: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..k {
        let j = i + (rng.next_u64() % (len - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Uniformly samples `k` features without replacement (all of them if fewer
/// exist), deterministic in `seed`.
pub fn sample_features<S: Scalar, D: Copy>(
    features: &[Feature<S, D>],
    k: usize,
    seed: u64,
) -> Vec<Feature<S, D>> {
    sample_indices(features.len(), k, seed)
        .into_iter()
        .map(|i| features[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Keypoint, WideDescriptor};
    use rand::Rng;

    fn kp(i: usize) -> Keypoint<f64> {
        Keypoint {
            x: i as f64,
            y: 0.0,
            orientation: 0.0,
            response: 1.0,
            scale: 1.0,
        }
    }

    fn compact_features(values: &[u16], n: u8) -> Vec<Feature<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| Feature {
                keypoint: kp(i),
                descriptor: CompactDescriptor::new(v, n).unwrap(),
            })
            .collect()
    }

    fn wide_features(values: &[u64], n: u8) -> Vec<Feature<f64, WideDescriptor>> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| Feature {
                keypoint: kp(i),
                descriptor: WideDescriptor::new(v, n).unwrap(),
            })
            .collect()
    }

    fn random_values(count: usize, n: u8, rng: &mut impl Rng) -> Vec<u16> {
        (0..count).map(|_| rng.random_range(0..(1u32 << n)) as u16).collect()
    }

    #[test]
    fn build_table_examples() {
        let empty = build_table::<f64>(&[], 15).unwrap();
        assert_eq!(empty.non_empty_buckets(), 0);
        assert_eq!(empty.num_indexed(), 0);

        let t = build_table(&compact_features(&[5, 5, 9], 15), 15).unwrap();
        assert_eq!(t.bucket(5), &[0, 1]);
        assert_eq!(t.bucket(9), &[2]);
        assert_eq!(t.bucket(7), &[] as &[u32]);
        assert_eq!(t.non_empty_buckets(), 2);
        assert_eq!(t.num_indexed(), 3);
    }

    #[test]
    fn build_table_rejects_mixed_widths() {
        let mut fs = compact_features(&[5], 15);
        fs.push(Feature {
            keypoint: kp(1),
            descriptor: CompactDescriptor::new(5, 12).unwrap(),
        });
        assert_eq!(
            build_table(&fs, 15),
            Err(MatchingError::BitWidthMismatch {
                expected: 15,
                found: 12
            })
        );
    }

    #[test]
    fn bucket_load_is_sparse_for_random_descriptors() {
        let mut rng = crate::test_rng(1);
        let fs = compact_features(&random_values(850, 15, &mut rng), 15);
        let t = build_table(&fs, 15).unwrap();
        assert_eq!(t.num_indexed(), 850);
        // 850 balls in 32768 bins: expected non-empty count ~ 839, and any
        // bucket above 5 would be a ~6-sigma fluke.
        assert!(t.non_empty_buckets() > 750 && t.non_empty_buckets() <= 850);
        assert!(t.buckets().all(|(_, b)| b.len() <= 5));
        let occupancy = t.non_empty_buckets() as f64 / 32768.0;
        assert!(occupancy < 0.03);
    }

    #[test]
    fn flattened_table_reproduces_index_set() {
        let mut rng = crate::test_rng(2);
        let fs = compact_features(&random_values(400, 15, &mut rng), 15);
        let t = build_table(&fs, 15).unwrap();
        let mut all: Vec<u32> = t.buckets().flat_map(|(_, b)| b.to_vec()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..400).collect::<Vec<u32>>());
        for (value, bucket) in t.buckets() {
            for &i in bucket {
                assert_eq!(fs[i as usize].descriptor.bits(), value);
            }
        }
    }

    #[test]
    fn identity_match_examples() {
        let refs = compact_features(&[3, 9, 9, 3, 12], 15);
        let t = build_table(&refs, 15).unwrap();

        let q = compact_features(&[1], 15);
        assert!(identity_match(&q, &t).unwrap().is_empty());

        let q = compact_features(&[9], 15);
        let m = identity_match(&q, &t).unwrap();
        assert_eq!(
            m.iter().map(|m| m.ref_index).collect::<Vec<_>>(),
            vec![1, 2]
        );

        let bad = compact_features(&[9], 12);
        assert!(identity_match(&bad, &t).is_err());
    }

    /// Brute-force equality scan the table lookup must reproduce exactly.
    fn brute_force_equal(q: &[Feature<f64>], r: &[Feature<f64>]) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (qi, qf) in q.iter().enumerate() {
            for (ri, rf) in r.iter().enumerate() {
                if qf.descriptor.bits() == rf.descriptor.bits() {
                    out.push((qi, ri));
                }
            }
        }
        out
    }

    #[test]
    fn identity_match_equals_brute_force() {
        let mut rng = crate::test_rng(3);
        for _ in 0..20 {
            let q = compact_features(&random_values(850, 15, &mut rng), 15);
            let r = compact_features(&random_values(850, 15, &mut rng), 15);
            let t = build_table(&r, 15).unwrap();
            let got: Vec<(usize, usize)> = identity_match(&q, &t)
                .unwrap()
                .into_iter()
                .map(|m| (m.query_index, m.ref_index))
                .collect();
            let mut want = brute_force_equal(&q, &r);
            want.sort_unstable();
            let mut got_sorted = got.clone();
            got_sorted.sort_unstable();
            assert_eq!(got_sorted, want);
        }
    }

    #[test]
    fn identity_match_symmetric() {
        let mut rng = crate::test_rng(4);
        let a = compact_features(&random_values(300, 10, &mut rng), 10);
        let b = compact_features(&random_values(300, 10, &mut rng), 10);
        let ab: Vec<(usize, usize)> = identity_match(&a, &build_table(&b, 10).unwrap())
            .unwrap()
            .into_iter()
            .map(|m| (m.query_index, m.ref_index))
            .collect();
        let mut ba: Vec<(usize, usize)> = identity_match(&b, &build_table(&a, 10).unwrap())
            .unwrap()
            .into_iter()
            .map(|m| (m.ref_index, m.query_index))
            .collect();
        let mut ab = ab;
        ab.sort_unstable();
        ba.sort_unstable();
        assert_eq!(ab, ba);
    }

    #[test]
    fn crosscheck_identity_and_tiebreak() {
        let fs = wide_features(&[0b0001, 0b0110, 0b1111, 0b1000], 4);
        let m = nn_match_crosscheck(&fs, &fs);
        assert_eq!(m.len(), 4);
        for mm in &m {
            assert_eq!(mm.query_index, mm.ref_index);
        }

        // One query equidistant from two references: lowest index wins.
        let q = wide_features(&[0b0011], 4);
        let r = wide_features(&[0b0001, 0b0010], 4);
        let m = nn_match_crosscheck(&q, &r);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].ref_index, 0);
    }

    /// Exhaustive mutual-NN oracle with the same lowest-index tie-break.
    fn brute_force_mutual(q: &[u64], r: &[u64]) -> Vec<(usize, usize)> {
        let nn = |d: u64, set: &[u64]| -> usize {
            set.iter()
                .enumerate()
                .min_by_key(|(i, &s)| ((d ^ s).count_ones(), *i))
                .unwrap()
                .0
        };
        (0..q.len())
            .filter_map(|qi| {
                let ri = nn(q[qi], r);
                (nn(r[ri], q) == qi).then_some((qi, ri))
            })
            .collect()
    }

    #[test]
    fn crosscheck_equals_oracle_and_is_partial_bijection() {
        let mut rng = crate::test_rng(5);
        for _ in 0..10 {
            let qv: Vec<u64> = (0..80).map(|_| rng.random_range(0..(1u64 << 32))).collect();
            let rv: Vec<u64> = (0..90).map(|_| rng.random_range(0..(1u64 << 32))).collect();
            let q = wide_features(&qv, 32);
            let r = wide_features(&rv, 32);
            let got: Vec<(usize, usize)> = nn_match_crosscheck(&q, &r)
                .into_iter()
                .map(|m| (m.query_index, m.ref_index))
                .collect();
            assert_eq!(got, brute_force_mutual(&qv, &rv));

            let mut seen_q = std::collections::HashSet::new();
            let mut seen_r = std::collections::HashSet::new();
            for (qi, ri) in got {
                assert!(seen_q.insert(qi));
                assert!(seen_r.insert(ri));
            }
        }
    }

    #[test]
    fn ratio_test_examples() {
        // NN distance 0, second 5: kept (0 < 4.5).
        let q = wide_features(&[0b00000], 5);
        let r = wide_features(&[0b00000, 0b11111, 0b01111], 5);
        let m = nn_match_ratio(&q, &r, 0.9);
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].ref_index, 0);

        // NN == second-NN distance: rejected by the strict inequality.
        let r = wide_features(&[0b00001, 0b00010], 5);
        assert!(nn_match_ratio(&q, &r, 0.9).is_empty());

        // Fewer than two references: nothing to test against.
        let r = wide_features(&[0b00000], 5);
        assert!(nn_match_ratio(&q, &r, 0.9).is_empty());
    }

    #[test]
    fn ratio_test_equals_oracle() {
        let mut rng = crate::test_rng(6);
        for _ in 0..10 {
            let qv: Vec<u64> = (0..60).map(|_| rng.random_range(0..(1u64 << 24))).collect();
            let rv: Vec<u64> = (0..70).map(|_| rng.random_range(0..(1u64 << 24))).collect();
            let q = wide_features(&qv, 24);
            let r = wide_features(&rv, 24);
            let got: Vec<(usize, usize)> = nn_match_ratio(&q, &r, 0.9)
                .into_iter()
                .map(|m| (m.query_index, m.ref_index))
                .collect();

            let mut want = Vec::new();
            for (qi, &d) in qv.iter().enumerate() {
                let mut dists: Vec<(u32, usize)> = rv
                    .iter()
                    .enumerate()
                    .map(|(ri, &s)| ((d ^ s).count_ones(), ri))
                    .collect();
                dists.sort_unstable();
                if (dists[0].0 as f64) < 0.9 * (dists[1].0 as f64) {
                    want.push((qi, dists[0].1));
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_complete_when_small() {
        let fs = compact_features(&(0..30).map(|i| i as u16).collect::<Vec<_>>(), 15);
        let all = sample_features(&fs, 50, 7);
        assert_eq!(all.len(), 30);

        let a = sample_indices(850, 50, 3);
        let b = sample_indices(850, 50, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        let distinct: std::collections::HashSet<_> = a.iter().collect();
        assert_eq!(distinct.len(), 50);
    }

    #[test]
    fn sampling_is_roughly_uniform_over_seeds() {
        // Each index should appear with probability 50/850 per seed.
        let mut counts = vec![0u32; 850];
        let trials = 400;
        for seed in 0..trials {
            for i in sample_indices(850, 50, seed) {
                counts[i] += 1;
            }
        }
        let expected = trials as f64 * 50.0 / 850.0; // ~23.5
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 849 dof: mean 849, sd ~41; allow a generous band.
        assert!(
            chi2 > 600.0 && chi2 < 1150.0,
            "chi-square {chi2} out of plausible range"
        );
    }
}
