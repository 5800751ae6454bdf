//! Imbalanced dataset construction and CSV import/export.
//!
//! CSV layout: header `f0,f1,...,f{d-1},label`, one sample per line, features
//! as decimal floats and the label as a base-10 class index.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::math::{DenseMatrix, SeededRng};
use crate::{Error, Result};

/// Samples `z = (x, y)` with per-class bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    class_counts: Vec<usize>,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::domain(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        let mut class_counts = vec![0; num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::domain(format!(
                    "label {y} of sample {i} outside 0..{num_classes}"
                )));
            }
            class_counts[y] += 1;
        }
        Ok(Self {
            features,
            labels,
            class_counts,
        })
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_counts.len()
    }

    /// Rows `indices`, in order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let labels: Vec<usize> = indices.iter().map(|&i| self.labels[i]).collect();
        let mut class_counts = vec![0; self.num_classes()];
        for &y in &labels {
            class_counts[y] += 1;
        }
        Self {
            features: self.features.select_rows(indices),
            labels,
            class_counts,
        }
    }

    /// Concatenates two datasets with identical width and class count.
    pub fn concat(&self, other: &Dataset) -> Result<Self> {
        if self.dim() != other.dim() || self.num_classes() != other.num_classes() {
            return Err(Error::domain("cannot concatenate datasets of different shape"));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(
            DenseMatrix::new(labels.len(), self.dim(), data)?,
            labels,
            self.num_classes(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceKind {
    /// Exponentially decaying class sizes.
    #[serde(alias = "lt")]
    LongTailed,
    /// Two levels: equal majority classes, equal minority classes.
    #[serde(alias = "st")]
    Step,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImbalanceSpec {
    pub kind: ImbalanceKind,
    /// Most-frequent over least-frequent class size.
    pub rho: f64,
    /// Size of the most frequent class.
    pub n0: usize,
    pub num_classes: usize,
}

impl ImbalanceSpec {
    pub fn counts(&self) -> Result<Vec<usize>> {
        match self.kind {
            ImbalanceKind::LongTailed => lt_counts(self.num_classes, self.n0, self.rho),
            ImbalanceKind::Step => st_counts(self.num_classes, self.n0, self.rho),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub flip_probability: f64,
}

impl NoiseSpec {
    pub fn new(flip_probability: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&flip_probability) {
            return Err(Error::domain(format!(
                "flip probability {flip_probability} outside [0, 1)"
            )));
        }
        Ok(Self { flip_probability })
    }
}

// Values that are integers in exact arithmetic may land a few ulps below.
fn floor_count(x: f64) -> usize {
    (x * (1.0 + 1e-12)).floor() as usize
}

fn check_ratio(num_classes: usize, rho: f64) -> Result<()> {
    if num_classes < 2 {
        return Err(Error::domain(format!("need at least 2 classes, got {num_classes}")));
    }
    if !(rho >= 1.0) || !rho.is_finite() {
        return Err(Error::domain(format!("imbalance ratio {rho} must be >= 1")));
    }
    Ok(())
}

/// Long-tailed class sizes `floor(n0 · rho^(−i/(C−1)))`.
///
/// The endpoints are pinned to `n0` and `round(n0 / rho)` so the realized
/// ratio is exactly `rho`; interior counts never drop below the last one.
pub fn lt_counts(num_classes: usize, n0: usize, rho: f64) -> Result<Vec<usize>> {
    check_ratio(num_classes, rho)?;
    if (n0 as f64) < rho {
        return Err(Error::domain(format!(
            "n0 = {n0} is smaller than rho = {rho}; the last class would be empty"
        )));
    }
    let last = ((n0 as f64) / rho).round() as usize;
    let span = (num_classes - 1) as f64;
    let counts = (0..num_classes)
        .map(|i| match i {
            0 => n0,
            i if i == num_classes - 1 => last,
            i => floor_count(n0 as f64 * rho.powf(-(i as f64) / span)).max(last),
        })
        .collect();
    Ok(counts)
}

/// Step imbalance: the first `ceil(C/2)` classes get `n_major`, the rest
/// `floor(n_major / rho)`.
pub fn st_counts(num_classes: usize, n_major: usize, rho: f64) -> Result<Vec<usize>> {
    check_ratio(num_classes, rho)?;
    if (n_major as f64) < rho {
        return Err(Error::domain(format!(
            "n_major = {n_major} is smaller than rho = {rho}; minority classes would be empty"
        )));
    }
    let minor = floor_count(n_major as f64 / rho);
    let n_majority_classes = num_classes.div_ceil(2);
    Ok((0..num_classes)
        .map(|i| if i < n_majority_classes { n_major } else { minor })
        .collect())
}

/// Isotropic Gaussian blobs, `counts[k]` points around `means[k]` with
/// standard deviation `stddevs[k]`. Samples are emitted class by class.
pub fn gaussian_mixture(
    counts: &[usize],
    means: &[Vec<f64>],
    stddevs: &[f64],
    rng: &mut SeededRng,
) -> Result<Dataset> {
    if counts.len() != means.len() || counts.len() != stddevs.len() {
        return Err(Error::domain(format!(
            "counts ({}), means ({}) and stddevs ({}) differ in length",
            counts.len(),
            means.len(),
            stddevs.len()
        )));
    }
    if counts.is_empty() {
        return Err(Error::domain("no classes given"));
    }
    let dim = means[0].len();
    if means.iter().any(|m| m.len() != dim) {
        return Err(Error::domain("class means differ in dimension"));
    }
    if counts.contains(&0) {
        return Err(Error::domain("every class needs at least one sample"));
    }
    if stddevs.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::domain("standard deviations must be finite and >= 0"));
    }
    let n: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (k, ((&count, mean), &sd)) in counts.iter().zip(means).zip(stddevs).enumerate() {
        for _ in 0..count {
            data.extend(mean.iter().map(|&m| m + sd * rng.next_gaussian()));
            labels.push(k);
        }
    }
    Dataset::new(DenseMatrix::new(n, dim, data)?, labels, counts.len())
}

/// Two-dimensional special case used by the toy experiments.
pub fn gaussian_mixture_2d(
    counts: &[usize],
    means: &[[f64; 2]],
    stddevs: &[f64],
    rng: &mut SeededRng,
) -> Result<Dataset> {
    let means: Vec<Vec<f64>> = means.iter().map(|m| m.to_vec()).collect();
    gaussian_mixture(counts, &means, stddevs, rng)
}

/// Class centres drawn as `separation · N(0, I_dim)`.
pub fn random_class_means(
    num_classes: usize,
    dim: usize,
    separation: f64,
    rng: &mut SeededRng,
) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|_| (0..dim).map(|_| separation * rng.next_gaussian()).collect())
        .collect()
}

/// Indices (ascending) of a per-class sample without replacement.
pub fn subsample_indices(
    dataset: &Dataset,
    target_counts: &[usize],
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if target_counts.len() != dataset.num_classes() {
        return Err(Error::domain(format!(
            "{} target counts for {} classes",
            target_counts.len(),
            dataset.num_classes()
        )));
    }
    for (k, (&want, &have)) in target_counts.iter().zip(dataset.class_counts()).enumerate() {
        if want > have {
            return Err(Error::domain(format!(
                "class {k}: requested {want} samples but only {have} available"
            )));
        }
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, &y) in dataset.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    let mut chosen = Vec::with_capacity(target_counts.iter().sum());
    for (pool, &want) in by_class.iter_mut().zip(target_counts) {
        rng.shuffle(pool);
        chosen.extend_from_slice(&pool[..want]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn subsample_to_counts(
    dataset: &Dataset,
    target_counts: &[usize],
    rng: &mut SeededRng,
) -> Result<Dataset> {
    let idx = subsample_indices(dataset, target_counts, rng)?;
    Ok(dataset.subset(&idx))
}

/// Symmetric label noise: each label is replaced, with probability
/// `flip_probability`, by a uniformly chosen *different* class. Returns the
/// noisy dataset and the flipped indices.
pub fn inject_label_noise(
    dataset: &Dataset,
    spec: NoiseSpec,
    rng: &mut SeededRng,
) -> Result<(Dataset, Vec<usize>)> {
    let spec = NoiseSpec::new(spec.flip_probability)?;
    let c = dataset.num_classes();
    let mut labels = dataset.labels().to_vec();
    let mut flipped = Vec::new();
    for (i, y) in labels.iter_mut().enumerate() {
        // draw unconditionally so the stream position depends only on i
        let u = rng.next_f64();
        if c < 2 || u >= spec.flip_probability {
            continue;
        }
        let r = rng.next_index(c - 1);
        *y = if r >= *y { r + 1 } else { r };
        flipped.push(i);
    }
    let noisy = Dataset::new(dataset.features().clone(), labels, c)?;
    Ok((noisy, flipped))
}

/// Parses CSV from any reader. `num_classes` of `None` infers `max label + 1`.
pub fn read_csv_from<R: Read>(reader: R, num_classes: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let ncols = header.len();
    if ncols < 2 || header.get(ncols - 1) != Some("label") {
        return Err(Error::Parse {
            line: 1,
            msg: "header must be f0,...,f{d-1},label".into(),
        });
    }
    for (j, name) in header.iter().take(ncols - 1).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected column f{j}, found {name:?}"),
            });
        }
    }
    let dim = ncols - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != ncols {
            return Err(Error::Parse {
                line,
                msg: format!("expected {ncols} columns, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().take(dim).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("feature f{j} is not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("feature f{j} is not finite"),
                });
            }
            data.push(v);
        }
        let cell = &rec[dim];
        let y: usize = cell.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("label is not a non-negative integer: {cell:?}"),
        })?;
        if let Some(c) = num_classes {
            if y >= c {
                return Err(Error::domain(format!(
                    "line {line}: label {y} outside 0..{c}"
                )));
            }
        }
        labels.push(y);
    }
    let c = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    Dataset::new(DenseMatrix::new(labels.len(), dim, data)?, labels, c)
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

pub fn read_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Dataset> {
    read_csv_from(File::open(path)?, num_classes)
}

/// Floats are written in shortest round-trip form, so reading back is
/// bit-exact.
pub fn write_csv_to<W: Write>(mut w: W, dataset: &Dataset) -> Result<()> {
    let header: Vec<String> = (0..dataset.dim()).map(|j| format!("f{j}")).collect();
    writeln!(w, "{},label", header.join(","))?;
    for (i, &y) in dataset.labels().iter().enumerate() {
        for v in dataset.features().row(i) {
            write!(w, "{v},")?;
        }
        writeln!(w, "{y}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    write_csv_to(BufWriter::new(File::create(path)?), dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lt_counts_covid() {
        assert_eq!(lt_counts(4, 37800, 100.0).unwrap(), vec![37800, 8143, 1754, 378]);
    }

    #[test]
    fn lt_counts_uniform_and_decade() {
        assert_eq!(lt_counts(5, 1000, 1.0).unwrap(), vec![1000; 5]);
        // floor(5000 · 10^(−i/9)) from a 50-digit oracle
        assert_eq!(
            lt_counts(10, 5000, 10.0).unwrap(),
            vec![5000, 3871, 2997, 2320, 1796, 1391, 1077, 834, 645, 500]
        );
    }

    #[test]
    fn lt_counts_rejects_bad_args() {
        assert!(lt_counts(1, 100, 10.0).is_err());
        assert!(lt_counts(3, 100, 0.5).is_err());
        assert!(lt_counts(3, 5, 10.0).is_err());
    }

    #[test]
    fn st_counts_examples() {
        assert_eq!(
            st_counts(10, 5000, 100.0).unwrap(),
            vec![5000, 5000, 5000, 5000, 5000, 50, 50, 50, 50, 50]
        );
        assert_eq!(st_counts(2, 100, 1.0).unwrap(), vec![100, 100]);
        assert_eq!(st_counts(4, 1000, 10.0).unwrap(), vec![1000, 1000, 100, 100]);
        assert!(st_counts(4, 5, 10.0).is_err());
    }

    #[test]
    fn mixture_counts_mean_and_replay() {
        let mut rng = SeededRng::new(11);
        let ds = gaussian_mixture_2d(&[1000, 10], &[[1.0, -2.0], [3.0, 3.0]], &[0.5, 0.5], &mut rng)
            .unwrap();
        assert_eq!(ds.class_counts(), &[1000, 10]);
        let mut mx = [0.0; 2];
        for i in 0..1000 {
            mx[0] += ds.features().get(i, 0) / 1000.0;
            mx[1] += ds.features().get(i, 1) / 1000.0;
        }
        let bound = 4.0 * 0.5 / 1000f64.sqrt();
        assert!((mx[0] - 1.0).abs() < bound && (mx[1] + 2.0).abs() < bound);

        let mut again = SeededRng::new(11);
        let ds2 =
            gaussian_mixture_2d(&[1000, 10], &[[1.0, -2.0], [3.0, 3.0]], &[0.5, 0.5], &mut again)
                .unwrap();
        assert_eq!(ds, ds2);
        assert!(gaussian_mixture_2d(&[1, 2], &[[0.0, 0.0]], &[1.0, 1.0], &mut rng).is_err());
    }

    fn balanced(n: usize, seed: u64) -> Dataset {
        let mut rng = SeededRng::new(seed);
        gaussian_mixture_2d(&[n, n], &[[0.0, 0.0], [2.0, 2.0]], &[1.0, 1.0], &mut rng).unwrap()
    }

    #[test]
    fn subsample_behaviour() {
        let ds = balanced(100, 1);
        let same = subsample_to_counts(&ds, &[100, 100], &mut SeededRng::new(3)).unwrap();
        assert_eq!(same.class_counts(), ds.class_counts());
        let sub = subsample_to_counts(&ds, &[100, 10], &mut SeededRng::new(3)).unwrap();
        assert_eq!(sub.class_counts(), &[100, 10]);

        let a = subsample_indices(&ds, &[100, 10], &mut SeededRng::new(1)).unwrap();
        let b = subsample_indices(&ds, &[100, 10], &mut SeededRng::new(2)).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.len(), b.len());

        let err = subsample_indices(&ds, &[100, 101], &mut SeededRng::new(1)).unwrap_err();
        assert!(err.to_string().contains("class 1"));
    }

    #[test]
    fn label_noise() {
        let ds = balanced(5000, 4);
        let (same, flipped) =
            inject_label_noise(&ds, NoiseSpec::new(0.0).unwrap(), &mut SeededRng::new(1)).unwrap();
        assert_eq!(same.labels(), ds.labels());
        assert!(flipped.is_empty());

        let (noisy, flipped) =
            inject_label_noise(&ds, NoiseSpec::new(0.4).unwrap(), &mut SeededRng::new(1)).unwrap();
        let frac = flipped.len() as f64 / ds.len() as f64;
        assert!((0.37..=0.43).contains(&frac), "flipped fraction {frac}");
        for &i in &flipped {
            assert_eq!(noisy.labels()[i], 1 - ds.labels()[i]);
        }
        let total: usize = noisy.class_counts().iter().sum();
        assert_eq!(total, ds.len());
        assert!(NoiseSpec::new(1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = Dataset::new(
            DenseMatrix::from_rows(&[vec![0.1, -2.5], vec![1e-300, 3.0], vec![7.25, 1.0 / 3.0]])
                .unwrap(),
            vec![0, 2, 1],
            3,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &ds).unwrap();
        let back = read_csv_from(buf.as_slice(), Some(3)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_errors() {
        let bad = "f0,f1,label\n1.0,2.0,0\n1.0,abc,1\n";
        match read_csv_from(bad.as_bytes(), None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let short = "f0,f1,label\n1.0,0\n";
        assert!(matches!(read_csv_from(short.as_bytes(), None), Err(Error::Parse { line: 2, .. })));
        let out_of_range = "f0,label\n1.0,5\n";
        assert!(matches!(
            read_csv_from(out_of_range.as_bytes(), Some(2)),
            Err(Error::Domain(_))
        ));
    }

    proptest! {
        #[test]
        fn lt_counts_properties(c in 2usize..20, n0 in 100usize..20000, rho in 1.0f64..100.0) {
            let counts = lt_counts(c, n0, rho).unwrap();
            prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
            let last = counts[c - 1] as f64;
            let ratio = counts[0] as f64 / last;
            prop_assert!(ratio >= rho * (1.0 - 2.0 / last) && ratio <= rho * (1.0 + 2.0 / last));
        }

        #[test]
        fn st_counts_two_levels(c in 2usize..20, n in 100usize..5000, rho in 1.01f64..50.0) {
            let counts = st_counts(c, n, rho).unwrap();
            let mut distinct = counts.clone();
            distinct.sort_unstable();
            distinct.dedup();
            prop_assert_eq!(distinct.len(), 2);
        }

        #[test]
        fn subsample_never_duplicates(seed in 0u64..1000, k0 in 0usize..50, k1 in 0usize..50) {
            let ds = balanced(50, 9);
            let idx = subsample_indices(&ds, &[k0, k1], &mut SeededRng::new(seed)).unwrap();
            let mut d = idx.clone();
            d.dedup();
            prop_assert_eq!(d.len(), idx.len());
        }
    }
}
