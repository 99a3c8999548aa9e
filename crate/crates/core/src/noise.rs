//! Label-corruption transition matrices and label corruption.
//!
//! Three families are built here:
//!
//! * symmetric: a label flips to each other class with probability `r / (C - 1)`;
//! * pair-flip: a label flips to one designated partner class with probability `r`;
//! * realistic: flips concentrate on the most similar class pairs, where
//!   similarity is the cosine between class prototypes (the final-layer weight
//!   vectors of a classifier trained on clean data).
//!
//! The realistic construction selects the top-`K` most similar pairs, splits
//! them into three contiguous similarity levels of sizes `ceil(K/3)`,
//! `ceil(K/3)` and the remainder, and writes the level weight symmetrically at
//! `(i, j)` and `(j, i)`. Each row is then divided by its sum, off-diagonal
//! entries are multiplied by `r` and the diagonal is set to `1 - r`. Rows that
//! no selected pair touches stay at probability 1 on the diagonal.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::net::ClassifierState;

pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Row-stochastic `C x C` matrix; entry `(i, j)` is the probability that a
/// sample of true class `i` is given label `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    entries: Array2<f64>,
    noise_ratio: f64,
}

impl TransitionMatrix {
    pub fn new(entries: Array2<f64>, noise_ratio: f64) -> Result<Self> {
        let (rows, cols) = entries.dim();
        if rows != cols || rows < 2 {
            return Err(Error::Shape(format!(
                "transition matrix must be square with C >= 2, got {rows}x{cols}"
            )));
        }
        if entries.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "transition entries must be finite and nonnegative".into(),
            ));
        }
        let m = Self { entries, noise_ratio };
        let err = m.max_row_sum_error();
        if err > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidArgument(format!(
                "rows must sum to 1 (max deviation {err:e})"
            )));
        }
        Ok(m)
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn class_count(&self) -> usize {
        self.entries.nrows()
    }

    pub fn noise_ratio(&self) -> f64 {
        self.noise_ratio
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn max_row_sum_error(&self) -> f64 {
        self.row_sums()
            .into_iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `C` rows of `C` comma-separated values, no header.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        for row in self.entries.rows() {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(writer, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    /// The noise ratio of an imported matrix is taken as `max_i (1 - T_ii)`.
    pub fn read_csv<R: Read>(mut reader: R, origin: &Path) -> Result<Self> {
        let malformed = |message: String| Error::Csv {
            path: origin.to_path_buf(),
            message,
        };
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (k, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let row = line
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| malformed(format!("line {}: {e}", k + 1)))?;
            rows.push(row);
        }
        let c = rows.len();
        if c == 0 || rows.iter().any(|r| r.len() != c) {
            return Err(malformed("expected C rows of C values".into()));
        }
        let entries = Array2::from_shape_vec((c, c), rows.concat()).map_err(|e| malformed(e.to_string()))?;
        let ratio = (0..c).map(|i| 1.0 - entries[[i, i]]).fold(0.0, f64::max);
        Self::new(entries, ratio).map_err(|e| malformed(e.to_string()))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, path)
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("noise ratio {r} outside [0, 1)")))
    }
}

/// One prototype vector per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrototypes {
    vectors: Array2<f64>,
}

impl ClassPrototypes {
    /// `vectors` is `C x h`, one row per class.
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() < 2 {
            return Err(Error::InvalidArgument("need at least two prototypes".into()));
        }
        for (k, row) in vectors.rows().into_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("prototype {k} is not finite")));
            }
            if row.dot(&row) == 0.0 {
                return Err(Error::InvalidArgument(format!("prototype {k} has zero norm")));
            }
        }
        Ok(Self { vectors })
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn class_count(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.vectors.row(i), self.vectors.row(j));
        a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    }
}

/// Column `k` of the output layer's weight matrix is the prototype of class `k`.
pub fn extract_prototypes(state: &ClassifierState) -> Result<ClassPrototypes> {
    let w = state
        .layer_weights
        .last()
        .ok_or_else(|| Error::InvalidArgument("classifier has no layers".into()))?;
    ClassPrototypes::new(w.t().to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPair {
    pub first: usize,
    pub second: usize,
    pub similarity: f64,
}

/// Class pairs (`first < second`) in descending similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRanking {
    pub class_count: usize,
    pub pairs: Vec<ClassPair>,
}

impl SimilarityRanking {
    /// Validates ordering, uniqueness and class bounds. The list may be a
    /// prefix of the full ranking.
    pub fn new(class_count: usize, pairs: Vec<ClassPair>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (k, p) in pairs.iter().enumerate() {
            if p.first >= p.second || p.second >= class_count {
                return Err(Error::InvalidArgument(format!(
                    "pair {k} ({}, {}) is not an ordered pair of classes below {class_count}",
                    p.first, p.second
                )));
            }
            if !seen.insert((p.first, p.second)) {
                return Err(Error::InvalidArgument(format!(
                    "pair ({}, {}) listed twice",
                    p.first, p.second
                )));
            }
            if k > 0 && pairs[k - 1].similarity < p.similarity {
                return Err(Error::InvalidArgument(
                    "pairs must be in descending similarity".into(),
                ));
            }
        }
        Ok(Self { class_count, pairs })
    }
}

/// All `C (C - 1) / 2` pairs by descending cosine; ties in lexicographic pair order.
pub fn rank_pairs(protos: &ClassPrototypes) -> SimilarityRanking {
    let c = protos.class_count();
    let mut pairs = Vec::with_capacity(c * (c - 1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            pairs.push(ClassPair {
                first: i,
                second: j,
                similarity: protos.cosine(i, j),
            });
        }
    }
    pairs.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then(a.first.cmp(&b.first))
            .then(a.second.cmp(&b.second))
    });
    SimilarityRanking {
        class_count: c,
        pairs,
    }
}

/// Similarity level (0 = most similar) of the pair at rank `index` among the top `k`.
pub fn similarity_level(index: usize, k: usize) -> usize {
    let block = k.div_ceil(3);
    if index < block {
        0
    } else if index < 2 * block {
        1
    } else {
        2
    }
}

pub fn build_realistic(
    ranking: &SimilarityRanking,
    top_k: usize,
    level_weights: [f64; 3],
    r: f64,
) -> Result<TransitionMatrix> {
    check_ratio(r)?;
    if top_k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    if top_k > ranking.pairs.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {top_k} exceeds the {} ranked pairs",
            ranking.pairs.len()
        )));
    }
    if level_weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0))
        || level_weights.windows(2).any(|w| w[0] <= w[1])
    {
        return Err(Error::InvalidArgument(format!(
            "level weights {level_weights:?} must be strictly descending in (0, 1]"
        )));
    }
    let c = ranking.class_count;
    let mut raw = Array2::<f64>::zeros((c, c));
    for (index, pair) in ranking.pairs.iter().take(top_k).enumerate() {
        let w = level_weights[similarity_level(index, top_k)];
        raw[[pair.first, pair.second]] = w;
        raw[[pair.second, pair.first]] = w;
    }
    let mut entries = Array2::<f64>::zeros((c, c));
    for i in 0..c {
        let total: f64 = raw.row(i).sum();
        if total == 0.0 {
            entries[[i, i]] = 1.0;
            continue;
        }
        for j in 0..c {
            if j != i {
                entries[[i, j]] = r * (raw[[i, j]] / total);
            }
        }
        entries[[i, i]] = 1.0 - r;
    }
    TransitionMatrix::new(entries, r)
}

pub fn build_symmetric(classes: usize, r: f64) -> Result<TransitionMatrix> {
    check_ratio(r)?;
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    let off = r / (classes - 1) as f64;
    let entries = Array2::from_shape_fn((classes, classes), |(i, j)| if i == j { 1.0 - r } else { off });
    TransitionMatrix::new(entries, r)
}

/// Class `i` flips to `pair_map[i]` with probability `r`.
pub fn build_pairflip(classes: usize, r: f64, pair_map: &[usize]) -> Result<TransitionMatrix> {
    check_ratio(r)?;
    if r >= 0.5 {
        return Err(Error::InvalidArgument(format!(
            "pair-flip ratio {r} must stay below 0.5"
        )));
    }
    if classes < 2 || pair_map.len() != classes {
        return Err(Error::InvalidArgument(format!(
            "pair map has {} entries for {classes} classes",
            pair_map.len()
        )));
    }
    let mut entries = Array2::<f64>::zeros((classes, classes));
    for (i, &j) in pair_map.iter().enumerate() {
        if j >= classes || j == i {
            return Err(Error::InvalidArgument(format!(
                "class {i} maps to {j}, which is not another class"
            )));
        }
        entries[[i, i]] = 1.0 - r;
        entries[[i, j]] = r;
    }
    TransitionMatrix::new(entries, r)
}

/// The cyclic map `i -> (i + 1) mod C`.
pub fn next_class_map(classes: usize) -> Vec<usize> {
    (0..classes).map(|i| (i + 1) % classes).collect()
}

/// Draws each given label from the row of the sample's true label. Features,
/// true labels and ids are untouched.
pub fn corrupt_labels(
    dataset: &LabeledDataset,
    matrix: &TransitionMatrix,
    seed: u64,
) -> Result<LabeledDataset> {
    if matrix.class_count() != dataset.class_count() {
        return Err(Error::Shape(format!(
            "matrix is {0}x{0} but dataset has {1} classes",
            matrix.class_count(),
            dataset.class_count()
        )));
    }
    let rows = matrix
        .entries()
        .rows()
        .into_iter()
        .map(|row| WeightedIndex::new(row.iter().copied()))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let given = dataset
        .true_labels()
        .iter()
        .map(|&t| rows[t].sample(&mut rng))
        .collect();
    dataset.with_given_labels(given)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, BlobSpec};
    use crate::net::{init_classifier, Activation};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeMap;

    /// Literal construction: level assignment by walking blocks, a map of
    /// temporary weights, per-row normalization, then diagonal/off-diagonal fill.
    fn brute_force_realistic(
        c: usize,
        ranked: &[(usize, usize)],
        k: usize,
        weights: [f64; 3],
        r: f64,
    ) -> Vec<Vec<f64>> {
        let first = k.div_ceil(3);
        let sizes = [first, first, k.saturating_sub(2 * first)];
        let mut temp: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut cursor = 0;
        for (level, &size) in sizes.iter().enumerate() {
            for _ in 0..size {
                if cursor >= k {
                    break;
                }
                let (i, j) = ranked[cursor];
                temp.insert((i, j), weights[level]);
                temp.insert((j, i), weights[level]);
                cursor += 1;
            }
        }
        let mut m = vec![vec![0.0; c]; c];
        for i in 0..c {
            let mut row_total = 0.0;
            for j in 0..c {
                row_total += temp.get(&(i, j)).copied().unwrap_or(0.0);
            }
            for j in 0..c {
                if i == j {
                    m[i][j] = if row_total > 0.0 { 1.0 - r } else { 1.0 };
                } else if row_total > 0.0 {
                    let w_hat = temp.get(&(i, j)).copied().unwrap_or(0.0) / row_total;
                    m[i][j] = w_hat * r;
                }
            }
        }
        m
    }

    fn ranking_from(c: usize, pairs: &[(usize, usize)]) -> SimilarityRanking {
        let n = pairs.len() as f64;
        SimilarityRanking::new(
            c,
            pairs
                .iter()
                .enumerate()
                .map(|(k, &(first, second))| ClassPair {
                    first,
                    second,
                    similarity: 1.0 - k as f64 / n,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn realistic_row_arithmetic() {
        // row 0 sees {0.9, 0.3} -> normalized {0.75, 0.25}
        let ranking = ranking_from(3, &[(0, 1), (1, 2), (0, 2)]);
        let m = build_realistic(&ranking, 3, [0.9, 0.6, 0.3], 0.2).unwrap();
        let e = m.entries();
        assert_abs_diff_eq!(e[[0, 0]], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(e[[0, 1]], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(e[[0, 2]], 0.05, epsilon = 1e-15);
        assert!(m.max_row_sum_error() < 1e-12);
    }

    #[test]
    fn realistic_zero_ratio_is_identity() {
        let ranking = ranking_from(4, &[(0, 1), (2, 3), (1, 2)]);
        let m = build_realistic(&ranking, 3, [0.9, 0.6, 0.3], 0.0).unwrap();
        assert_eq!(m.entries(), &Array2::<f64>::eye(4));
    }

    #[test]
    fn realistic_untouched_row_keeps_diagonal_one() {
        let ranking = ranking_from(4, &[(0, 1), (1, 2), (0, 2)]);
        let m = build_realistic(&ranking, 2, [0.9, 0.6, 0.3], 0.4).unwrap();
        assert_eq!(m.entries()[[3, 3]], 1.0);
        assert_eq!(m.entries()[[0, 0]], 1.0 - 0.4);
    }

    #[test]
    fn realistic_matches_brute_force_c4_k3() {
        let pairs = [(0, 1), (2, 3), (1, 3), (0, 2), (0, 3), (1, 2)];
        let ranking = ranking_from(4, &pairs);
        let m = build_realistic(&ranking, 3, [0.9, 0.6, 0.3], 0.3).unwrap();
        let oracle = brute_force_realistic(4, &pairs, 3, [0.9, 0.6, 0.3], 0.3);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m.entries()[[i, j]], oracle[i][j], "({i},{j})");
            }
        }
    }

    #[test]
    fn realistic_errors() {
        let ranking = ranking_from(3, &[(0, 1), (1, 2), (0, 2)]);
        assert!(build_realistic(&ranking, 0, [0.9, 0.6, 0.3], 0.2).is_err());
        assert!(build_realistic(&ranking, 4, [0.9, 0.6, 0.3], 0.2).is_err());
        assert!(build_realistic(&ranking, 3, [0.3, 0.6, 0.9], 0.2).is_err());
        assert!(build_realistic(&ranking, 3, [0.9, 0.9, 0.3], 0.2).is_err());
        assert!(build_realistic(&ranking, 3, [0.9, 0.6, 0.3], 1.0).is_err());
    }

    #[test]
    fn level_blocks() {
        let levels: Vec<usize> = (0..10).map(|i| similarity_level(i, 10)).collect();
        assert_eq!(levels, vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2]);
        let levels: Vec<usize> = (0..60).map(|i| similarity_level(i, 60)).collect();
        assert_eq!(levels.iter().filter(|&&l| l == 0).count(), 20);
        assert_eq!(levels.iter().filter(|&&l| l == 2).count(), 20);
        assert_eq!(similarity_level(0, 1), 0);
        assert_eq!(similarity_level(1, 2), 1);
    }

    #[test]
    fn symmetric_definition() {
        let m = build_symmetric(3, 0.3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.7 } else { 0.15 };
                assert_abs_diff_eq!(m.entries()[[i, j]], expected, epsilon = 1e-15);
            }
        }
        assert_eq!(build_symmetric(5, 0.0).unwrap().entries(), &Array2::<f64>::eye(5));
        assert!(build_symmetric(1, 0.1).is_err());
    }

    #[test]
    fn pairflip_definition() {
        let m = build_pairflip(2, 0.4, &[1, 0]).unwrap();
        assert_eq!(m.entries(), &array![[0.6, 0.4], [0.4, 0.6]]);
        assert_eq!(
            build_pairflip(4, 0.0, &next_class_map(4)).unwrap().entries()[[2, 2]],
            1.0
        );
        assert!(build_pairflip(2, 0.5, &[1, 0]).is_err());
        assert!(build_pairflip(3, 0.2, &[1, 1, 1]).is_err());
        assert!(build_pairflip(3, 0.2, &[1, 2, 3]).is_err());
        assert!(build_pairflip(3, 0.2, &[1, 2]).is_err());
    }

    #[test]
    fn prototypes_from_identity_layer() {
        let mut s = init_classifier(&[2, 3, 3], Activation::Relu, 0).unwrap();
        s.layer_weights[1] = Array2::eye(3);
        let p = extract_prototypes(&s).unwrap();
        assert_eq!(p.vectors(), &Array2::<f64>::eye(3));
        assert_eq!(p.class_count(), 3);
        s.layer_weights[1].column_mut(2).fill(0.0);
        assert!(extract_prototypes(&s).is_err());
    }

    #[test]
    fn ranking_cosines() {
        let p = ClassPrototypes::new(array![[1.0, 0.0], [2.0, 0.0], [0.0, 3.0]]).unwrap();
        let r = rank_pairs(&p);
        assert_eq!(r.pairs.len(), 3);
        assert_eq!((r.pairs[0].first, r.pairs[0].second), (0, 1));
        assert_abs_diff_eq!(r.pairs[0].similarity, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.pairs[1].similarity, 0.0, epsilon = 1e-15);
        // tie between (0,2) and (1,2) resolved lexicographically
        assert_eq!((r.pairs[1].first, r.pairs[1].second), (0, 2));
        assert!(ClassPrototypes::new(array![[1.0, 0.0], [0.0, 0.0]]).is_err());
    }

    #[test]
    fn corruption_identity_and_determinism() {
        let d = gen_blobs(&BlobSpec::four_square(2.0, 0.5, 0.0, 100), 0).unwrap();
        let same = corrupt_labels(&d, &build_symmetric(4, 0.0).unwrap(), 1).unwrap();
        assert_eq!(same.given_labels(), d.true_labels());
        let m = build_symmetric(4, 0.4).unwrap();
        let a = corrupt_labels(&d, &m, 5).unwrap();
        let b = corrupt_labels(&d, &m, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.features(), d.features());
        assert_eq!(a.true_labels(), d.true_labels());
        assert!(corrupt_labels(&d, &build_symmetric(3, 0.4).unwrap(), 5).is_err());
    }

    #[test]
    fn matrix_csv_round_trip() {
        let m = build_symmetric(4, 0.3).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = TransitionMatrix::read_csv(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.entries(), m.entries());
        assert_abs_diff_eq!(back.noise_ratio(), 0.3, epsilon = 1e-15);
        let bad = "0.5,0.4\n0.5,0.5\n";
        assert!(TransitionMatrix::read_csv(bad.as_bytes(), Path::new("mem")).is_err());
        let ragged = "1,0\n0\n";
        assert!(TransitionMatrix::read_csv(ragged.as_bytes(), Path::new("mem")).is_err());
    }

    proptest! {
        #[test]
        fn builders_are_row_stochastic(c in 2usize..9, r in 0.0f64..0.49, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            prop_assert!(build_symmetric(c, r).unwrap().max_row_sum_error() < 1e-9);
            let map: Vec<usize> = (0..c).map(|i| (i + rng.random_range(1..c)) % c).collect();
            prop_assert!(build_pairflip(c, r, &map).unwrap().max_row_sum_error() < 1e-9);
        }

        #[test]
        fn ranking_is_consistent(c in 2usize..7, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = Array2::from_shape_simple_fn((c, 4), || rng.random_range(-1.0..1.0));
            let p = ClassPrototypes::new(v).unwrap();
            let r = rank_pairs(&p);
            prop_assert_eq!(r.pairs.len(), c * (c - 1) / 2);
            for w in r.pairs.windows(2) {
                prop_assert!(w[0].similarity >= w[1].similarity);
            }
            for pair in &r.pairs {
                prop_assert_eq!(pair.similarity, p.cosine(pair.first, pair.second));
            }
            prop_assert!(SimilarityRanking::new(c, r.pairs.clone()).is_ok());
        }
    }
}
