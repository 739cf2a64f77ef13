//! Labeled datasets: CSV ingestion, unit-ball scaling, seeded splits and
//! the synthetic generators used by the benchmarks.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed;

const IRIS_CSV: &str = include_str!("../data/iris.csv");
const BREAST_CANCER_CSV: &str = include_str!("../data/breast_cancer.csv");

/// A binary classification dataset with labels in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Array1<f64>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset, checking shapes and that every label is ±1.
    pub fn new(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                actual: labels.len(),
            });
        }
        if let Some((row, &value)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y != 1.0 && y != -1.0)
        {
            return Err(Error::InvalidLabel { row, value });
        }
        Ok(Self {
            features,
            labels,
            feature_names: None,
        })
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: names.len(),
            });
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn rows(&self) -> impl Iterator<Item = (ArrayView1<'_, f64>, f64)> {
        self.features.outer_iter().zip(self.labels.iter().copied())
    }

    /// Largest Euclidean row norm.
    pub fn max_row_norm(&self) -> f64 {
        self.features
            .outer_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max)
    }

    /// Returns the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
            feature_names: self.feature_names.clone(),
        }
    }

    pub(crate) fn with_features(&self, features: Array2<f64>) -> Self {
        debug_assert_eq!(features.dim(), self.features.dim());
        Self {
            features,
            labels: self.labels.clone(),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Iris, binarized setosa-vs-rest. Not normalized.
    pub fn iris() -> Self {
        load_csv_reader(
            IRIS_CSV.as_bytes(),
            &LabelColumn::Name("species".into()),
            "setosa",
        )
        .expect("bundled iris csv is well formed")
    }

    /// Wisconsin diagnostic breast cancer, malignant = +1. Not normalized.
    pub fn breast_cancer() -> Self {
        load_csv_reader(
            BREAST_CANCER_CSV.as_bytes(),
            &LabelColumn::Name("diagnosis".into()),
            "malignant",
        )
        .expect("bundled breast cancer csv is well formed")
    }
}

/// Selects the label column of a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        })
    }
}

impl fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelColumn::Index(i) => write!(f, "#{i}"),
            LabelColumn::Name(n) => f.write_str(n),
        }
    }
}

/// Loads a headed, comma-separated file. Rows whose label cell equals
/// `positive_label` become +1, everything else -1. Features are returned
/// as read; call [`normalize`] before training.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &LabelColumn,
    positive_label: &str,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_csv_reader(file, label_column, positive_label)
}

pub fn load_csv_reader<R: Read>(
    reader: R,
    label_column: &LabelColumn,
    positive_label: &str,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let label_idx = match label_column {
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingLabelColumn(name.clone()))?,
        other => return Err(Error::MissingLabelColumn(other.to_string())),
    };
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let d = names.len();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        // 1-based data row, header excluded
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::DimensionMismatch {
                expected: headers.len(),
                actual: record.len(),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            if j == label_idx {
                labels.push(if cell == positive_label { 1.0 } else { -1.0 });
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: headers[j].clone(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: headers[j].clone(),
                    value: cell.to_string(),
                });
            }
            values.push(v);
        }
    }
    let n = labels.len();
    if n < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            actual: n,
        });
    }
    let features = Array2::from_shape_vec((n, d), values)
        .expect("row lengths were checked against the header");
    Dataset::new(features, Array1::from(labels))?.with_feature_names(names)
}

/// Scales every row by one global factor so that the largest row norm is
/// at most 1. Datasets already inside the unit ball are returned as is.
pub fn normalize(dataset: &Dataset) -> Dataset {
    let max_norm = dataset.max_row_norm();
    if max_norm <= 1.0 {
        return dataset.clone();
    }
    let mut divisor = max_norm;
    loop {
        let scaled = dataset.features.mapv(|v| v / divisor);
        let out = dataset.with_features(scaled);
        // rounding can leave the longest row a few ulps outside the ball
        if out.max_row_norm() <= 1.0 {
            return out;
        }
        divisor = divisor.next_up();
    }
}

/// Parameters of a seeded train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// Partitions `dataset` into (train, test). The test part receives
/// `round(n * test_fraction)` rows chosen by a seeded shuffle; both parts
/// keep the original row order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(invalid("test_fraction", "must lie in (0, 1)"));
    }
    let n = dataset.len();
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let n_train = n.saturating_sub(n_test);
    if n_train < 2 {
        return Err(Error::TooFewRows {
            required: 2,
            actual: n_train,
        });
    }
    if n_test == 0 {
        return Err(invalid("test_fraction", "test split would be empty"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(spec.seed));
    let (test_idx, train_idx) = order.split_at_mut(n_test);
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((dataset.select(train_idx), dataset.select(test_idx)))
}

fn random_unit(rng: &mut impl Rng, d: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Two Gaussian blobs centred at ±0.5·u for a random unit direction u,
/// with per-coordinate spread 0.15/√d. Labels alternate, so classes are
/// balanced; the classes are linearly separable through the origin with
/// overwhelming probability.
pub fn synthetic_blobs(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    if n < 2 || d == 0 {
        return Err(invalid("synthetic_blobs", "need n >= 2 and d >= 1"));
    }
    let mut rng = seed::rng(seed);
    let direction = random_unit(&mut rng, d);
    let spread = 0.15 / (d as f64).sqrt();
    let mut features = Array2::zeros((n, d));
    let mut labels = Array1::zeros(n);
    for (i, mut row) in features.outer_iter_mut().enumerate() {
        let y = if i % 2 == 0 { 1.0 } else { -1.0 };
        labels[i] = y;
        for (j, v) in row.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v = 0.5 * y * direction[j] + spread * e;
        }
    }
    Dataset::new(features, labels)
}

/// Points uniform in the unit ball labelled by a random hyperplane through
/// the origin, each label flipped independently with probability `flip`.
pub fn synthetic_noisy_margin(n: usize, d: usize, flip: f64, seed: u64) -> Result<Dataset> {
    if n < 2 || d == 0 {
        return Err(invalid("synthetic_noisy_margin", "need n >= 2 and d >= 1"));
    }
    if !(0.0..=0.5).contains(&flip) {
        return Err(invalid("flip", "must lie in [0, 0.5]"));
    }
    let mut rng = seed::rng(seed);
    let normal = random_unit(&mut rng, d);
    let mut features = Array2::zeros((n, d));
    let mut labels = Array1::zeros(n);
    for i in 0..n {
        let dir = random_unit(&mut rng, d);
        let radius = rng.random::<f64>().powf(1.0 / d as f64);
        let x = dir * radius;
        let mut y = if normal.dot(&x) >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < flip {
            y = -y;
        }
        features.row_mut(i).assign(&x);
        labels[i] = y;
    }
    Dataset::new(features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn ds(rows: Array2<f64>) -> Dataset {
        let n = rows.nrows();
        let labels = Array1::from_iter((0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }));
        Dataset::new(rows, labels).unwrap()
    }

    #[test]
    fn maps_positive_label() {
        let csv = "a,b,label\n1,2,yes\n3,4,no\n5,6,yes\n";
        let d = load_csv_reader(csv.as_bytes(), &LabelColumn::Name("label".into()), "yes").unwrap();
        assert_eq!(d.labels(), &array![1.0, -1.0, 1.0]);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.feature_names().unwrap(), ["a", "b"]);
    }

    #[test]
    fn label_by_index() {
        let csv = "label,a\nyes,1\nno,2\n";
        let d = load_csv_reader(csv.as_bytes(), &LabelColumn::Index(0), "no").unwrap();
        assert_eq!(d.labels(), &array![-1.0, 1.0]);
        assert_eq!(d.features(), &array![[1.0], [2.0]]);
    }

    #[test]
    fn reports_bad_cell() {
        let csv = "a,b,label\n1,2,yes\n3,oops,no\n";
        let err =
            load_csv_reader(csv.as_bytes(), &LabelColumn::Name("label".into()), "yes").unwrap_err();
        match err {
            Error::Parse { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "b", "oops"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_values() {
        let csv = "a,label\n1,yes\n,no\n";
        assert!(matches!(
            load_csv_reader(csv.as_bytes(), &LabelColumn::Name("label".into()), "yes"),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn missing_label_column() {
        let csv = "a,b\n1,2\n3,4\n";
        assert!(matches!(
            load_csv_reader(csv.as_bytes(), &LabelColumn::Name("y".into()), "1"),
            Err(Error::MissingLabelColumn(_))
        ));
        assert!(matches!(
            load_csv_reader(csv.as_bytes(), &LabelColumn::Index(5), "1"),
            Err(Error::MissingLabelColumn(_))
        ));
    }

    #[test]
    fn too_few_rows() {
        let csv = "a,label\n1,yes\n";
        assert!(matches!(
            load_csv_reader(csv.as_bytes(), &LabelColumn::Name("label".into()), "yes"),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn iris_shape() {
        let iris = Dataset::iris();
        assert_eq!((iris.len(), iris.dim()), (150, 4));
        assert_eq!(iris.labels().iter().filter(|&&y| y > 0.0).count(), 50);
    }

    #[test]
    fn breast_cancer_shape() {
        let bc = Dataset::breast_cancer();
        assert_eq!((bc.len(), bc.dim()), (569, 30));
    }

    #[test]
    fn normalize_examples() {
        let out = normalize(&ds(array![[3.0, 4.0], [0.0, 0.0]]));
        assert_eq!(out.features(), &array![[0.6, 0.8], [0.0, 0.0]]);

        let inside = ds(array![[0.1, 0.2], [0.3, -0.4]]);
        assert_eq!(normalize(&inside), inside);

        let out = normalize(&ds(array![[3.0, 4.0], [0.3, 0.4]]));
        let expect = array![[0.6, 0.8], [0.06, 0.08]];
        for (a, b) in out.features().iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let d = synthetic_blobs(10, 2, 1).unwrap();
        let spec = SplitSpec {
            test_fraction: 0.2,
            seed: 7,
        };
        let (tr, te) = split(&d, &spec).unwrap();
        assert_eq!((tr.len(), te.len()), (8, 2));
        assert_eq!(split(&d, &spec).unwrap(), (tr, te));
    }

    #[test]
    fn split_rejects_tiny_train() {
        let d = synthetic_blobs(10, 2, 1).unwrap();
        let spec = SplitSpec {
            test_fraction: 0.99,
            seed: 7,
        };
        assert!(matches!(split(&d, &spec), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn seeds_change_partition() {
        // a 2-of-6 test split has 15 possible outcomes; 20 seed pairs all
        // colliding would happen with probability (1/15)^20
        let d = synthetic_blobs(6, 1, 3).unwrap();
        let test_rows = |seed| {
            let (_, te) = split(
                &d,
                &SplitSpec {
                    test_fraction: 1.0 / 3.0,
                    seed,
                },
            )
            .unwrap();
            te.features().clone()
        };
        let differing = (0..20u64)
            .filter(|&k| test_rows(2 * k + 1) != test_rows(2 * k + 2))
            .count();
        assert!(differing >= 1);
    }

    #[test]
    fn blobs_are_separable_by_construction_direction() {
        let d = synthetic_blobs(400, 10, 9).unwrap();
        assert_eq!(d.labels().sum(), 0.0);
        assert!(d.max_row_norm() < 1.5);
    }

    #[test]
    fn noisy_margin_in_ball() {
        let d = synthetic_noisy_margin(300, 5, 0.1, 2).unwrap();
        assert!(d.max_row_norm() <= 1.0 + 1e-12);
    }

    fn arb_rows() -> impl Strategy<Value = Array2<f64>> {
        (1usize..12, 1usize..5).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-50.0f64..50.0, n * d)
                .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_and_bounded(rows in arb_rows()) {
            let once = normalize(&ds(rows));
            prop_assert!(once.max_row_norm() <= 1.0);
            prop_assert_eq!(normalize(&once), once);
        }

        #[test]
        fn normalize_preserves_cosines(rows in arb_rows()) {
            let before = ds(rows);
            let after = normalize(&before);
            let cos = |d: &Dataset, i: usize, j: usize| {
                let (a, b) = (d.row(i), d.row(j));
                let den = (a.dot(&a) * b.dot(&b)).sqrt();
                if den == 0.0 { 0.0 } else { a.dot(&b) / den }
            };
            for i in 0..before.len() {
                for j in 0..before.len() {
                    prop_assert!((cos(&before, i, j) - cos(&after, i, j)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn split_partitions_rows(n in 4usize..40, frac in 0.05f64..0.5, seed: u64) {
            let d = synthetic_blobs(n, 2, 11).unwrap();
            if let Ok((tr, te)) = split(&d, &SplitSpec { test_fraction: frac, seed }) {
                prop_assert_eq!(tr.len() + te.len(), n);
                let key = |r: ArrayView1<f64>| (r[0].to_bits(), r[1].to_bits());
                let mut all: Vec<_> = d.features().outer_iter().map(key).collect();
                let mut parts: Vec<_> = tr.features().outer_iter()
                    .chain(te.features().outer_iter()).map(key).collect();
                all.sort_unstable();
                parts.sort_unstable();
                prop_assert_eq!(all, parts);
            }
        }
    }
}
