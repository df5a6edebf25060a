//! Tabular regression data: loading, standardization and the density-based
//! train / interpolation / extrapolation partition.

use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{fit_kde, DensityModel};
use crate::{Error, Result};

/// A loaded regression table in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// N × d feature matrix.
    pub rows: Array2<f64>,
    pub target: Array1<f64>,
}

impl RawTable {
    pub fn new(
        feature_names: Vec<String>,
        target_name: impl Into<String>,
        rows: Array2<f64>,
        target: Array1<f64>,
    ) -> Result<Self> {
        if rows.nrows() != target.len() {
            return Err(Error::LengthMismatch {
                left: rows.nrows(),
                right: target.len(),
            });
        }
        if rows.ncols() == 0 {
            return Err(Error::NoFeatures);
        }
        if feature_names.len() != rows.ncols() {
            return Err(Error::DimensionMismatch {
                expected: feature_names.len(),
                found: rows.ncols(),
            });
        }
        if rows.nrows() < 2 {
            return Err(Error::TooFewRows {
                min: 2,
                found: rows.nrows(),
            });
        }
        for ((r, c), v) in rows.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::BadCell {
                    row: r + 1,
                    column: feature_names[c].clone(),
                    value: v.to_string(),
                });
            }
        }
        let target_name = target_name.into();
        if let Some(r) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::BadCell {
                row: r + 1,
                column: target_name,
                value: target[r].to_string(),
            });
        }
        Ok(RawTable {
            feature_names,
            target_name,
            rows,
            target,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }

    pub fn select(&self, indices: &[usize]) -> (Array2<f64>, Array1<f64>) {
        (
            self.rows.select(Axis(0), indices),
            self.target.select(Axis(0), indices),
        )
    }

    /// Writes features then the target, values with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::export::csv_writer(path)?;
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        for (row, y) in self.rows.rows().into_iter().zip(&self.target) {
            let mut rec: Vec<String> = row.iter().map(|v| crate::export::fmt_f64(*v)).collect();
            rec.push(crate::export::fmt_f64(*y));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a headered CSV file; every column except `target_column` becomes a
/// feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(file, target_column)
}

/// Parses CSV text. Row numbers in errors are 1-based data rows (the header is
/// row 0).
pub fn parse_csv<R: Read>(reader: R, target_column: &str) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let d = feature_names.len();
    let mut flat = Vec::new();
    let mut target = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::BadCell {
                    row: r + 1,
                    column: header[c].clone(),
                    value: cell.to_string(),
                })?;
            if c == target_idx {
                target.push(value);
            } else {
                flat.push(value);
            }
        }
    }
    let n = target.len();
    let rows = Array2::from_shape_vec((n, d), flat).map_err(|_| Error::NoFeatures)?;
    RawTable::new(
        feature_names,
        target_column,
        rows,
        Array1::from_vec(target),
    )
}

/// Per-column affine map to zero mean and unit population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub std_devs: Vec<f64>,
}

/// Fits column means and population standard deviations. `names` labels the
/// zero-variance error and may be empty.
pub fn fit_standardizer(x: ArrayView2<f64>, names: &[String]) -> Result<Standardizer> {
    if x.nrows() == 0 {
        return Err(Error::Empty("feature matrix"));
    }
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut std_devs = Vec::with_capacity(x.ncols());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) || sd <= mean.abs() * 1e-14 {
            let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
            return Err(Error::ZeroVariance(name));
        }
        means.push(mean);
        std_devs.push(sd);
    }
    Ok(Standardizer { means, std_devs })
}

impl Standardizer {
    pub fn dims(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.std_devs[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    pub fn transform_row(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check(x.len())?;
        Ok(Array1::from_iter(
            x.iter()
                .zip(self.means.iter().zip(&self.std_devs))
                .map(|(v, (m, s))| (v - m) / s),
        ))
    }

    pub fn inverse_transform(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(z.ncols())?;
        let mut out = z.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.std_devs[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }

    fn check(&self, found: usize) -> Result<()> {
        if found != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found,
            });
        }
        Ok(())
    }
}

/// Row indices of a random train/test split. Both lists are sorted ascending.
/// The test share is `round(n * test_fraction)`, clamped so that each side
/// keeps at least one row.
pub fn random_split(n: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidRatio {
            name: "test_fraction",
            value: test_fraction,
        });
    }
    if n < 2 {
        return Err(Error::TooFewRows { min: 2, found: n });
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Rows of one partition in the standardized frame, with their original
/// table indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub indices: Vec<usize>,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Part {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Sub-partition by positions within this part.
    pub fn subset(&self, positions: &[usize]) -> Part {
        Part {
            indices: positions.iter().map(|&p| self.indices[p]).collect(),
            x: self.x.select(Axis(0), positions),
            y: self.y.select(Axis(0), positions),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub seed: u64,
    pub train: Part,
    pub test_interp: Part,
    pub test_extrap: Part,
    pub standardizer: Standardizer,
}

impl SplitDataset {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            seed: self.seed,
            train_idx: self.train.indices.clone(),
            interp_idx: self.test_interp.indices.clone(),
            extrap_idx: self.test_extrap.indices.clone(),
        }
    }
}

/// JSON record of a split: which table rows went where.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train_idx: Vec<usize>,
    pub interp_idx: Vec<usize>,
    pub extrap_idx: Vec<usize>,
}

/// Seeded train/test split followed by density classification of the test
/// rows. `density` must have been fitted on the standardized training rows of
/// the same seeded split (see [`prepare_split`]).
pub fn split_by_density(
    table: &RawTable,
    density: &DensityModel,
    test_fraction: f64,
    seed: u64,
) -> Result<SplitDataset> {
    let (train_idx, test_idx) = random_split(table.n_rows(), test_fraction, seed)?;
    if density.n_reference() != train_idx.len() {
        return Err(Error::DensityMismatch {
            fitted: density.n_reference(),
            expected: train_idx.len(),
        });
    }
    let (train_raw, train_y) = table.select(&train_idx);
    let standardizer = fit_standardizer(train_raw.view(), &table.feature_names)?;
    let train_x = standardizer.transform(train_raw.view())?;

    let (test_raw, test_y) = table.select(&test_idx);
    let test_x = standardizer.transform(test_raw.view())?;
    let scores = density.log_density_batch(test_x.view())?;
    let (mut interp, mut extrap) = (Vec::new(), Vec::new());
    for (pos, score) in scores.iter().enumerate() {
        if *score < density.log_threshold() {
            extrap.push(pos);
        } else {
            interp.push(pos);
        }
    }
    if extrap.is_empty() {
        log::warn!("split seed {seed}: no test rows fall in the extrapolation region");
    }
    let test = Part {
        indices: test_idx,
        x: test_x,
        y: test_y,
    };
    Ok(SplitDataset {
        seed,
        train: Part {
            indices: train_idx,
            x: train_x,
            y: train_y,
        },
        test_interp: test.subset(&interp),
        test_extrap: test.subset(&extrap),
        standardizer,
    })
}

/// Runs the whole data stage for one seed: split, standardize on the training
/// rows, fit the KDE there and classify the test rows.
pub fn prepare_split(
    table: &RawTable,
    bandwidth: f64,
    percentile: f64,
    test_fraction: f64,
    seed: u64,
) -> Result<(SplitDataset, DensityModel)> {
    let (train_idx, _) = random_split(table.n_rows(), test_fraction, seed)?;
    let (train_raw, _) = table.select(&train_idx);
    let standardizer = fit_standardizer(train_raw.view(), &table.feature_names)?;
    let train_x = standardizer.transform(train_raw.view())?;
    let density = fit_kde(train_x.view(), bandwidth, percentile)?;
    let split = split_by_density(table, &density, test_fraction, seed)?;
    Ok((split, density))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn parses_small_csv() {
        let t = parse_csv("a,b,y\n1,2,3\n4,5,6\n7,8,9".as_bytes(), "y").unwrap();
        assert_eq!(t.n_features(), 2);
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.target, array![3.0, 6.0, 9.0]);
        assert_eq!(t.feature_names, vec!["a", "b"]);
        assert_eq!(t.rows, array![[1.0, 2.0], [4.0, 5.0], [7.0, 8.0]]);
    }

    #[test]
    fn target_column_may_sit_anywhere() {
        let t = parse_csv("y,a\n1,10\n2,20\n".as_bytes(), "y").unwrap();
        assert_eq!(t.feature_names, vec!["a"]);
        assert_eq!(t.target, array![1.0, 2.0]);
    }

    #[test]
    fn nan_cell_names_the_row() {
        let err = parse_csv("a,y\n1,2\nNaN,3\n".as_bytes(), "y").unwrap_err();
        match err {
            Error::BadCell { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_csv("a,y\n1,2\n3,inf\n".as_bytes(), "y"),
            Err(Error::BadCell { row: 2, .. })
        ));
        assert!(matches!(
            parse_csv("a,y\n1,2\nfoo,3\n".as_bytes(), "y"),
            Err(Error::BadCell { row: 2, .. })
        ));
    }

    #[test]
    fn missing_target_and_missing_file() {
        assert!(matches!(
            parse_csv("a,b\n1,2\n3,4\n".as_bytes(), "y"),
            Err(Error::MissingColumn(_))
        ));
        assert!(matches!(
            load_csv("/nonexistent/file.csv", "y"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn standardizer_two_points() {
        let x = array![[0.0], [2.0]];
        let s = fit_standardizer(x.view(), &[]).unwrap();
        assert_eq!(s.means, vec![1.0]);
        assert_eq!(s.std_devs, vec![1.0]);
        assert_eq!(s.transform(x.view()).unwrap(), array![[-1.0], [1.0]]);
    }

    #[test]
    fn standardizer_uses_population_std() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let s = fit_standardizer(x.view(), &[]).unwrap();
        assert_abs_diff_eq!(s.means[0], 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s.std_devs[0], 1.118033988749895, epsilon = 1e-12);
        let z = s.transform(x.view()).unwrap();
        for (got, want) in z.iter().zip([-1.3416407865, -0.4472135955, 0.4472135955, 1.3416407865]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_variance_column_is_named() {
        let x = array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]];
        let err = fit_standardizer(x.view(), &["flat".into(), "ok".into()]).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(ref n) if n == "flat"));
    }

    #[test]
    fn random_split_is_seeded_and_disjoint() {
        let (a_train, a_test) = random_split(50, 0.2, 7).unwrap();
        let (b_train, b_test) = random_split(50, 0.2, 7).unwrap();
        assert_eq!((&a_train, &a_test), (&b_train, &b_test));
        assert_eq!(a_test.len(), 10);
        let mut all: Vec<_> = a_train.iter().chain(&a_test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
        let (_, c_test) = random_split(50, 0.2, 8).unwrap();
        assert_ne!(a_test, c_test);
        assert!(random_split(50, 1.0, 0).is_err());
        assert!(random_split(50, 0.0, 0).is_err());
    }

    fn cluster_table() -> RawTable {
        // A tight cluster plus one far outlier.
        let mut rows = Vec::new();
        for i in 0..40 {
            let t = i as f64 * 0.05;
            rows.push([t.sin(), t.cos()]);
        }
        rows.push([100.0, -100.0]);
        let n = rows.len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((n, 2), flat).unwrap();
        let y = x.column(0).to_owned();
        RawTable::new(vec!["a".into(), "b".into()], "y", x, y).unwrap()
    }

    #[test]
    fn split_partitions_are_disjoint_and_consistent() {
        let table = cluster_table();
        let (split, density) = prepare_split(&table, 0.3, 0.1, 0.25, 3).unwrap();
        let mut seen: Vec<usize> = split
            .train
            .indices
            .iter()
            .chain(&split.test_interp.indices)
            .chain(&split.test_extrap.indices)
            .copied()
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..table.n_rows()).collect::<Vec<_>>());
        for row in split.test_extrap.x.rows() {
            assert!(density.log_density(row).unwrap() < density.log_threshold());
        }
        for row in split.test_interp.x.rows() {
            assert!(density.log_density(row).unwrap() >= density.log_threshold());
        }
        let again = split_by_density(&table, &density, 0.25, 3).unwrap();
        assert_eq!(again.manifest(), split.manifest());
    }

    #[test]
    fn density_from_another_split_is_rejected() {
        let table = cluster_table();
        let (_, density) = prepare_split(&table, 0.3, 0.1, 0.25, 3).unwrap();
        assert!(matches!(
            split_by_density(&table, &density, 0.5, 3),
            Err(Error::DensityMismatch { .. })
        ));
    }

    #[test]
    fn manifest_json_shape() {
        let m = SplitManifest {
            seed: 4,
            train_idx: vec![0, 2],
            interp_idx: vec![1],
            extrap_idx: vec![],
        };
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"seed":4,"train_idx":[0,2],"interp_idx":[1],"extrap_idx":[]}"#
        );
    }
}
