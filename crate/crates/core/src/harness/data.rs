use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::load_idx;
use super::trace::write_atomic;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng;

/// Train and test splits with one-hot labels. The test split may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train_x: Matrix,
    pub train_t: Matrix,
    pub test_x: Matrix,
    pub test_t: Matrix,
    pub class_count: usize,
}

impl Dataset {
    pub fn new(train_x: Matrix, train_t: Matrix, test_x: Matrix, test_t: Matrix) -> Result<Self> {
        let class_count = train_t.cols();
        let d = train_x.cols();
        let check = |context, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { context, expected, got })
            }
        };
        check("train label rows", train_x.rows(), train_t.rows())?;
        check("test label rows", test_x.rows(), test_t.rows())?;
        if test_x.rows() > 0 {
            check("test feature columns", d, test_x.cols())?;
            check("test class count", class_count, test_t.cols())?;
        }
        if class_count < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 classes, got {class_count}")));
        }
        for row in train_t.iter_rows().chain(test_t.iter_rows()) {
            if !crate::nn::is_one_hot(row) {
                return Err(Error::NotOneHot);
            }
        }
        Ok(Self {
            train_x,
            train_t,
            test_x,
            test_t,
            class_count,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.train_x.cols()
    }

    pub fn has_test(&self) -> bool {
        self.test_x.rows() > 0
    }
}

pub fn labels_to_one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut t = Matrix::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!("label {l} out of range for {classes} classes")));
        }
        t.row_mut(r)[l] = 1.0;
    }
    Ok(t)
}

/// Gaussian blobs: `c` class centers at random directions on the unit
/// sphere, points drawn as `center + N(0, spread² I)`. Classes are balanced
/// (the first `n mod c` classes get one extra point) and rows are shuffled.
pub fn gen_blobs(c: usize, d: usize, n_train: usize, n_test: usize, spread: f64, seed: u64) -> Result<Dataset> {
    if c < 2 || d == 0 {
        return Err(Error::InvalidArgument(format!("need c >= 2 and d >= 1, got c={c}, d={d}")));
    }
    if !spread.is_finite() || spread <= 0.0 {
        return Err(Error::InvalidArgument(format!("spread must be > 0, got {spread}")));
    }
    let mut r = rng::seeded(seed);
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let noise = Normal::new(0.0, spread).expect("positive spread");
    let mut split = |n: usize| -> Result<(Matrix, Matrix)> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        labels.shuffle(&mut r);
        let mut x = Matrix::zeros(n, d);
        for (i, &l) in labels.iter().enumerate() {
            for (v, m) in x.row_mut(i).iter_mut().zip(&centers[l]) {
                *v = m + noise.sample(&mut r);
            }
        }
        Ok((x, labels_to_one_hot(&labels, c)?))
    };
    let (train_x, train_t) = split(n_train)?;
    let (test_x, test_t) = split(n_test)?;
    Dataset::new(train_x, train_t, test_x, test_t)
}

fn format_rows(x: &Matrix, t: &Matrix) -> String {
    let mut out = String::new();
    for (xr, tr) in x.iter_rows().zip(t.iter_rows()) {
        for v in xr {
            write!(out, "{v},").unwrap();
        }
        let label = tr.iter().position(|&v| v == 1.0).unwrap_or(0);
        writeln!(out, "{label}").unwrap();
    }
    out
}

/// Header-less CSV: `d` feature columns then an integer label column.
pub fn write_dataset_csv(path: impl AsRef<Path>, x: &Matrix, t: &Matrix) -> Result<()> {
    write_atomic(path.as_ref(), format_rows(x, t).as_bytes())
}

/// Parses a header-less dataset CSV into features and raw labels.
pub fn load_dataset_csv(path: impl AsRef<Path>) -> Result<(Matrix, Vec<usize>)> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut d = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                message: "need at least one feature and a label".into(),
            });
        }
        let width = fields.len() - 1;
        if *d.get_or_insert(width) != width {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} features, found {width}", d.unwrap()),
            });
        }
        for f in &fields[..width] {
            data.push(f.parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad feature `{f}`: {e}"),
            })?);
        }
        let label = fields[width];
        labels.push(label.parse::<usize>().map_err(|e| Error::Parse {
            line: line_no,
            message: format!("bad label `{label}`: {e}"),
        })?);
    }
    let x = Matrix::from_vec(labels.len(), d.unwrap_or(0), data)?;
    Ok((x, labels))
}

pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
const IDX_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

pub fn write_dataset_dir(dir: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_dataset_csv(dir.join(TRAIN_CSV), &data.train_x, &data.train_t)?;
    if data.has_test() {
        write_dataset_csv(dir.join(TEST_CSV), &data.test_x, &data.test_t)?;
    }
    Ok(())
}

/// Loads `train.csv` (+ optional `test.csv`) from a directory, or the four
/// MNIST-named IDX files when no `train.csv` is present.
pub fn load_dataset_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let train_csv = dir.join(TRAIN_CSV);
    if train_csv.exists() {
        let (train_x, train_labels) = load_dataset_csv(&train_csv)?;
        let test_csv = dir.join(TEST_CSV);
        let (test_x, test_labels) = if test_csv.exists() {
            load_dataset_csv(&test_csv)?
        } else {
            (Matrix::zeros(0, train_x.cols()), Vec::new())
        };
        let classes = train_labels.iter().chain(&test_labels).max().map_or(0, |m| m + 1);
        return Dataset::new(
            train_x,
            labels_to_one_hot(&train_labels, classes)?,
            test_x,
            labels_to_one_hot(&test_labels, classes)?,
        );
    }
    let [ti, tl, si, sl] = IDX_FILES.map(|f| dir.join(f));
    if ti.exists() && tl.exists() {
        let (train_x, train_t) = load_idx(&ti, &tl)?;
        let (test_x, test_t) = if si.exists() && sl.exists() {
            load_idx(&si, &sl)?
        } else {
            (Matrix::zeros(0, train_x.cols()), Matrix::zeros(0, train_t.cols()))
        };
        return Dataset::new(train_x, train_t, test_x, test_t);
    }
    Err(Error::InvalidArgument(format!(
        "{} holds neither {TRAIN_CSV} nor {} + {}",
        dir.display(),
        IDX_FILES[0],
        IDX_FILES[1]
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(t: &Matrix) -> Vec<usize> {
        let mut c = vec![0; t.cols()];
        for l in t.argmax_rows() {
            c[l] += 1;
        }
        c
    }

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let a = gen_blobs(3, 5, 300, 90, 0.3, 42).unwrap();
        assert_eq!(counts(&a.train_t), vec![100, 100, 100]);
        assert_eq!(counts(&a.test_t), vec![30, 30, 30]);
        assert_eq!(a, gen_blobs(3, 5, 300, 90, 0.3, 42).unwrap());
        assert_ne!(a, gen_blobs(3, 5, 300, 90, 0.3, 43).unwrap());
    }

    #[test]
    fn blobs_validate_arguments() {
        assert!(gen_blobs(1, 5, 10, 10, 0.3, 0).is_err());
        assert!(gen_blobs(3, 0, 10, 10, 0.3, 0).is_err());
        assert!(gen_blobs(3, 5, 10, 10, 0.0, 0).is_err());
    }

    #[test]
    fn tiny_spread_is_linearly_separable() {
        let data = gen_blobs(4, 6, 400, 400, 1e-3, 7).unwrap();
        // nearest class mean is a linear classifier
        let mut means = vec![vec![0.0; 6]; 4];
        let labels = data.train_t.argmax_rows();
        for (row, &l) in data.train_x.iter_rows().zip(&labels) {
            for (m, v) in means[l].iter_mut().zip(row) {
                *m += v / 100.0;
            }
        }
        let predict = |x: &[f64]| {
            (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(&means[a]).map(|(u, v)| (u - v).powi(2)).sum();
                    let db: f64 = x.iter().zip(&means[b]).map(|(u, v)| (u - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap()
        };
        let test_labels = data.test_t.argmax_rows();
        let correct = data.test_x.iter_rows().zip(&test_labels).filter(|(x, &l)| predict(x) == l).count();
        assert_eq!(correct, 400);
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_blobs(3, 4, 30, 12, 0.5, 1).unwrap();
        write_dataset_dir(dir.path(), &data).unwrap();
        assert_eq!(load_dataset_dir(dir.path()).unwrap(), data);
    }

    #[test]
    fn dataset_csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "0.5,1.0,0\n0.1,oops,1\n").unwrap();
        assert!(matches!(load_dataset_csv(&p), Err(Error::Parse { line: 2, .. })));
    }
}
