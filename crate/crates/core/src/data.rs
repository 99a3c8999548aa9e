//! Labeled datasets, synthetic generators, CSV I/O and stratified splits.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Features plus given (possibly corrupted) and hidden true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    true_labels: Vec<usize>,
    given_labels: Vec<usize>,
    sample_ids: Vec<u64>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        true_labels: Vec<usize>,
        given_labels: Vec<usize>,
        sample_ids: Vec<u64>,
        class_count: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("dataset must not be empty".into()));
        }
        if true_labels.len() != n || given_labels.len() != n || sample_ids.len() != n {
            return Err(Error::Shape(format!(
                "{n} rows but {} true labels, {} given labels, {} ids",
                true_labels.len(),
                given_labels.len(),
                sample_ids.len()
            )));
        }
        if class_count < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if let Some(&label) = true_labels
            .iter()
            .chain(&given_labels)
            .find(|&&l| l >= class_count)
        {
            return Err(Error::LabelOutOfRange {
                label,
                classes: class_count,
            });
        }
        let mut seen = HashSet::with_capacity(n);
        for &id in &sample_ids {
            if !seen.insert(id) {
                return Err(Error::DuplicateSample(id));
            }
        }
        Ok(Self {
            features,
            true_labels,
            given_labels,
            sample_ids,
            class_count,
        })
    }

    /// A clean dataset (`given == true`) with ids `0..n`.
    pub fn clean(features: Array2<f64>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::new(features, labels.clone(), labels, ids, class_count)
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn given_labels(&self) -> &[usize] {
        &self.given_labels
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn is_noisy(&self, i: usize) -> bool {
        self.given_labels[i] != self.true_labels[i]
    }

    /// Fraction of samples whose given label differs from the true label.
    pub fn noise_rate(&self) -> f64 {
        (0..self.len()).filter(|&i| self.is_noisy(i)).count() as f64 / self.len() as f64
    }

    /// Same features and true labels with replaced given labels.
    pub fn with_given_labels(&self, given: Vec<usize>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.true_labels.clone(),
            given,
            self.sample_ids.clone(),
            self.class_count,
        )
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select(Axis(0), indices),
            indices.iter().map(|&i| self.true_labels[i]).collect(),
            indices.iter().map(|&i| self.given_labels[i]).collect(),
            indices.iter().map(|&i| self.sample_ids[i]).collect(),
            self.class_count,
        )
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "given_label".into(), "true_label".into()];
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(csv_io)?;
        for i in 0..self.len() {
            let mut record = vec![
                self.sample_ids[i].to_string(),
                self.given_labels[i].to_string(),
                self.true_labels[i].to_string(),
            ];
            record.extend(self.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&record).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        crate::io::write_atomic(path, &buf)
    }

    /// Parses the `id,given_label,true_label,f0,...` schema. With
    /// `class_count = None` the class count is `max label + 1`.
    pub fn read_csv<R: Read>(reader: R, class_count: Option<usize>, origin: &Path) -> Result<Self> {
        let malformed = |message: String| Error::Csv {
            path: origin.to_path_buf(),
            message,
        };
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(|e| malformed(e.to_string()))?.clone();
        if header.len() < 4 || &header[0] != "id" || &header[1] != "given_label" || &header[2] != "true_label"
        {
            return Err(malformed(
                "expected header id,given_label,true_label,f0,...".into(),
            ));
        }
        let dim = header.len() - 3;
        let mut ids = Vec::new();
        let mut given = Vec::new();
        let mut truth = Vec::new();
        let mut flat = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record.map_err(|e| malformed(e.to_string()))?;
            let row = line + 2;
            if record.len() != dim + 3 {
                return Err(malformed(format!(
                    "row {row}: {} fields, expected {}",
                    record.len(),
                    dim + 3
                )));
            }
            let field = |k: usize| record[k].trim();
            ids.push(
                field(0)
                    .parse::<u64>()
                    .map_err(|e| malformed(format!("row {row} id: {e}")))?,
            );
            given.push(
                field(1)
                    .parse::<usize>()
                    .map_err(|e| malformed(format!("row {row} given_label: {e}")))?,
            );
            truth.push(
                field(2)
                    .parse::<usize>()
                    .map_err(|e| malformed(format!("row {row} true_label: {e}")))?,
            );
            for k in 0..dim {
                let v = field(k + 3)
                    .parse::<f64>()
                    .map_err(|e| malformed(format!("row {row} f{k}: {e}")))?;
                if !v.is_finite() {
                    return Err(malformed(format!("row {row} f{k}: non-finite value")));
                }
                flat.push(v);
            }
        }
        let n = ids.len();
        if n == 0 {
            return Err(malformed("no data rows".into()));
        }
        let classes = match class_count {
            Some(c) => c,
            None => given.iter().chain(&truth).copied().max().unwrap_or(0) + 1,
        };
        let features = Array2::from_shape_vec((n, dim), flat).map_err(|e| malformed(e.to_string()))?;
        Self::new(features, truth, given, ids, classes)
    }

    pub fn load_csv(path: &Path, class_count: Option<usize>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), class_count, path)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Gaussian blobs with tunable pairwise overlap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    /// One mean vector per class; all of equal length.
    pub means: Vec<Vec<f64>>,
    /// Isotropic standard deviation per class.
    pub std_devs: Vec<f64>,
    /// `(i, j, degree)`: both means move `degree / 2` of the way toward each
    /// other, so degree 1 makes the pair share a mean.
    #[serde(default)]
    pub overlap_pairs: Vec<(usize, usize, f64)>,
    pub samples_per_class: usize,
}

impl BlobSpec {
    pub fn class_count(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.means.len();
        if c < 2 {
            return Err(Error::config("dataset.means", "need at least two classes"));
        }
        let d = self.means[0].len();
        if d == 0
            || self
                .means
                .iter()
                .any(|m| m.len() != d || m.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::config(
                "dataset.means",
                "means must be finite vectors of one common nonzero length",
            ));
        }
        if self.std_devs.len() != c {
            return Err(Error::config("dataset.std_devs", "need one entry per class"));
        }
        if self.std_devs.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config("dataset.std_devs", "must be positive"));
        }
        for (k, &(i, j, deg)) in self.overlap_pairs.iter().enumerate() {
            if i >= c || j >= c || i == j || !(0.0..=1.0).contains(&deg) {
                return Err(Error::config(
                    format!("dataset.overlap_pairs[{k}]"),
                    "need distinct classes and degree in [0, 1]",
                ));
            }
        }
        if self.samples_per_class == 0 {
            return Err(Error::config("dataset.samples_per_class", "must be positive"));
        }
        Ok(())
    }

    /// Class means after applying the overlap pulls in order.
    pub fn effective_means(&self) -> Vec<Vec<f64>> {
        let mut means = self.means.clone();
        for &(i, j, deg) in &self.overlap_pairs {
            let (a, b) = (means[i].clone(), means[j].clone());
            for k in 0..a.len() {
                means[i][k] = a[k] + 0.5 * deg * (b[k] - a[k]);
                means[j][k] = b[k] + 0.5 * deg * (a[k] - b[k]);
            }
        }
        means
    }

    /// Four blobs in 2-D at the corners of a square with classes 0 and 1
    /// pulled together by `overlap`.
    pub fn four_square(half_side: f64, std_dev: f64, overlap: f64, samples_per_class: usize) -> Self {
        let h = half_side;
        Self {
            means: vec![vec![-h, -h], vec![h, -h], vec![-h, h], vec![h, h]],
            std_devs: vec![std_dev; 4],
            overlap_pairs: vec![(0, 1, overlap)],
            samples_per_class,
        }
    }
}

pub fn gen_blobs(spec: &BlobSpec, seed: u64) -> Result<LabeledDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = spec.effective_means();
    let (c, d, m) = (means.len(), means[0].len(), spec.samples_per_class);
    let mut features = Array2::zeros((c * m, d));
    let mut labels = Vec::with_capacity(c * m);
    for (class, mean) in means.iter().enumerate() {
        for s in 0..m {
            let row = class * m + s;
            for k in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[row, k]] = mean[k] + spec.std_devs[class] * z;
            }
            labels.push(class);
        }
    }
    LabeledDataset::clean(features, labels, c)
}

/// Two interleaved half circles; the first `n / 2` samples are class 0.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<LabeledDataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "two moons needs an even n >= 2, got {n}"
        )));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidArgument("noise must be nonnegative".into()));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let step = if half > 1 { PI / (half - 1) as f64 } else { 0.0 };
    for i in 0..half {
        let t = i as f64 * step;
        features[[i, 0]] = t.cos();
        features[[i, 1]] = t.sin();
        features[[half + i, 0]] = 1.0 - t.cos();
        features[[half + i, 1]] = 0.5 - t.sin();
    }
    labels.extend(std::iter::repeat_n(0, half));
    labels.extend(std::iter::repeat_n(1, half));
    if noise > 0.0 {
        features.mapv_inplace(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + noise * z
        });
    }
    LabeledDataset::clean(features, labels, 2)
}

/// Stratified by true label: each class contributes `round(fraction * n_c)`
/// samples to the test side.
pub fn split(
    dataset: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..dataset.class_count() {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.true_labels[i] == class)
            .collect();
        members.shuffle(&mut rng);
        let k = (test_fraction * members.len() as f64).round() as usize;
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("split leaves one side empty".into()));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}
