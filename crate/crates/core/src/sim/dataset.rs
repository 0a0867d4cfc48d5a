use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DIGITS_CSV: &str = include_str!("../../data/digits.csv");

/// Labelled feature vectors stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    num_classes: usize,
}

impl SimDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Dataset("no features".into()));
        }
        let mut flat = Vec::with_capacity(features.len() * dim);
        for (i, row) in features.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Dataset(format!("row {i} has {} features, expected {dim}", row.len())));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dataset(format!("row {i} has a non-finite feature")));
            }
            flat.extend_from_slice(row);
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Dataset(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(Self {
            features: flat,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows `idx` as a new dataset.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut features = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            features.extend_from_slice(self.features(i));
        }
        Self {
            features,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Shuffled split into `(rest, held_out)` with `held` rows held out.
    pub fn split<R: Rng + ?Sized>(&self, held: usize, rng: &mut R) -> Result<(Self, Self)> {
        if held >= self.len() {
            return Err(Error::Dataset(format!("cannot hold out {held} of {} rows", self.len())));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        let (out, rest) = order.split_at(held);
        Ok((self.select(rest), self.select(out)))
    }
}

/// Where examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// 1797 8×8 grayscale digits, pixels scaled to `[0, 1]`.
    #[default]
    Digits,
    /// Isotropic Gaussian clusters around random centers.
    Blobs {
        per_class: usize,
        classes: usize,
        features: usize,
        spread: f64,
    },
    /// One example per line: `label, feature, feature, ...`.
    Csv { path: String },
}

impl DatasetSource {
    pub fn load<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SimDataset> {
        match self {
            DatasetSource::Digits => digits(),
            DatasetSource::Blobs {
                per_class,
                classes,
                features,
                spread,
            } => blobs(*per_class, *classes, *features, *spread, rng),
            DatasetSource::Csv { path } => load_csv(Path::new(path)),
        }
    }
}

fn parse_rows(text: &str, origin: &str) -> Result<SimDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Dataset(format!("{origin}: {e}")))?;
        let mut fields = rec.iter();
        let label = fields
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::Dataset(format!("{origin}:{}: bad label", line + 1)))?;
        let row = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Dataset(format!("{origin}:{}: {e}", line + 1)))?;
        labels.push(label);
        features.push(row);
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    SimDataset::new(features, labels, num_classes)
}

pub fn load_csv(path: &Path) -> Result<SimDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_rows(&text, &path.display().to_string())
}

pub fn digits() -> Result<SimDataset> {
    let mut ds = parse_rows(DIGITS_CSV, "digits")?;
    for x in ds.features.iter_mut() {
        *x /= 16.0;
    }
    Ok(ds)
}

pub fn blobs<R: Rng + ?Sized>(
    per_class: usize,
    classes: usize,
    features: usize,
    spread: f64,
    rng: &mut R,
) -> Result<SimDataset> {
    if per_class == 0 || classes < 2 || features == 0 {
        return Err(Error::Dataset("blobs need rows, two classes and one feature".into()));
    }
    let noise = Normal::new(0.0, spread).map_err(|e| Error::Dataset(e.to_string()))?;
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..features).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let mut rows = Vec::with_capacity(per_class * classes);
    let mut labels = Vec::with_capacity(per_class * classes);
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            rows.push(c.iter().map(|x| x + noise.sample(rng)).collect());
            labels.push(k);
        }
    }
    SimDataset::new(rows, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    #[test]
    fn digits_shape() {
        let d = digits().unwrap();
        assert_eq!(d.len(), 1797);
        assert_eq!(d.dim(), 64);
        assert_eq!(d.num_classes(), 10);
        assert!((0..d.len()).all(|i| d.features(i).iter().all(|&x| (0.0..=1.0).contains(&x))));
    }

    #[test]
    fn csv_round_trip() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1, 0.5, 2").unwrap();
        writeln!(f, "0,-1,3.25").unwrap();
        let d = load_csv(f.path()).unwrap();
        assert_eq!(d.labels(), &[1, 0]);
        assert_eq!(d.features(1), &[-1.0, 3.25]);
        assert_eq!(d.num_classes(), 2);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "1,0.5").unwrap();
        writeln!(f, "x,0.5").unwrap();
        let e = load_csv(f.path()).unwrap_err().to_string();
        assert!(e.contains(":2:"), "{e}");
    }

    #[test]
    fn blobs_and_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = blobs(20, 3, 4, 0.5, &mut rng).unwrap();
        assert_eq!(d.len(), 60);
        let (rest, held) = d.split(15, &mut rng).unwrap();
        assert_eq!((rest.len(), held.len()), (45, 15));
        assert!(d.split(60, &mut rng).is_err());
    }
}
