//! Dataset loading and window assembly.
//!
//! CSV in, chronological train/val/test ranges, per-channel standardization
//! fit on the training rows only, and sliding windows that never straddle a
//! split boundary.

use std::ops::Range;
use std::path::Path;

use crate::numkit::Tensor;
use crate::{Error, Result};

/// A multivariate series as loaded from disk: rows are time steps.
#[derive(Clone, Debug)]
pub struct RawSeries {
    pub values: Tensor,
    pub channel_names: Vec<String>,
    /// Present when the file's first column is non-numeric (e.g. dates).
    pub timestamps: Option<Vec<String>>,
}

impl RawSeries {
    pub fn rows(&self) -> usize {
        self.values.dims2().0
    }

    pub fn channels(&self) -> usize {
        self.values.dims2().1
    }
}

/// Load a headered CSV. The first column is treated as a timestamp column
/// (dropped from the values, kept as labels) when it does not parse as a
/// number; every remaining cell must be a finite number.
pub fn load_csv(path: &Path) -> Result<RawSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Load(format!("cannot open {}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Load(format!("{}: bad header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() {
        return Err(Error::Load(format!("{}: empty header", path.display())));
    }

    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Load(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Load(format!("{}: no data rows", path.display())));
    }

    let has_timestamp = records[0]
        .get(0)
        .map(|f| f.trim().parse::<f64>().is_err())
        .unwrap_or(false);
    let first_value_col = usize::from(has_timestamp);
    let n_channels = headers.len() - first_value_col;
    if n_channels == 0 {
        return Err(Error::Load(format!("{}: no value columns", path.display())));
    }

    let mut values = Tensor::zeros(&[records.len(), n_channels]);
    let mut timestamps = has_timestamp.then(|| Vec::with_capacity(records.len()));
    for (r, rec) in records.iter().enumerate() {
        if rec.len() != headers.len() {
            return Err(Error::Load(format!(
                "{}: row {}: expected {} fields, found {}",
                path.display(),
                r + 1,
                headers.len(),
                rec.len()
            )));
        }
        if let Some(ts) = &mut timestamps {
            ts.push(rec.get(0).unwrap_or("").trim().to_string());
        }
        for c in 0..n_channels {
            let field = rec.get(first_value_col + c).unwrap_or("").trim();
            let col = &headers[first_value_col + c];
            let x: f64 = field.parse().map_err(|_| {
                Error::Load(format!(
                    "{}: row {}, column '{col}': cannot parse '{field}' as a number",
                    path.display(),
                    r + 1
                ))
            })?;
            if !x.is_finite() {
                return Err(Error::Load(format!(
                    "{}: row {}, column '{col}': value '{field}' is not finite",
                    path.display(),
                    r + 1
                )));
            }
            values.set2(r, c, x);
        }
    }

    Ok(RawSeries {
        values,
        channel_names: headers[first_value_col..].to_vec(),
        timestamps,
    })
}

/// Write a series back out with a header row (and timestamps when present).
pub fn save_csv(path: &Path, series: &RawSeries) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Load(format!("cannot write {}: {e}", path.display())))?;
    let mut header = Vec::new();
    if series.timestamps.is_some() {
        header.push("timestamp".to_string());
    }
    header.extend(series.channel_names.iter().cloned());
    writer
        .write_record(&header)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    for r in 0..series.rows() {
        let mut row = Vec::new();
        if let Some(ts) = &series.timestamps {
            row.push(ts[r].clone());
        }
        for c in 0..series.channels() {
            row.push(format!("{}", series.values.at2(r, c)));
        }
        writer
            .write_record(&row)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Chronological split ratios. Must each lie in (0,1) and sum to 1.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        for (name, r) in [("train", train), ("val", val), ("test", test)] {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!(
                    "{name} split ratio {r} must lie strictly between 0 and 1"
                )));
            }
        }
        if (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must sum to 1, got {}",
                train + val + test
            )));
        }
        Ok(SplitSpec { train, val, test })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.7, val: 0.15, test: 0.15 }
    }
}

/// Row ranges for the three splits, in time order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Earliest rows train, then val, then test. Val and test get
/// `floor(ratio * rows)` rows but never fewer than one; train takes the rest.
pub fn split_chronological(rows: usize, spec: &SplitSpec) -> Result<SplitRanges> {
    let n_val = ((spec.val * rows as f64).floor() as usize).max(1);
    let n_test = ((spec.test * rows as f64).floor() as usize).max(1);
    if rows < n_val + n_test + 1 {
        return Err(Error::Load(format!(
            "{rows} rows cannot be split into non-empty train/val/test"
        )));
    }
    let n_train = rows - n_val - n_test;
    Ok(SplitRanges {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..rows,
    })
}

const STD_FLOOR: f64 = 1e-8;

/// Per-channel affine scaler fit on a row range (population statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fit on `rows` only, so later rows cannot leak into the statistics.
    pub fn fit(values: &Tensor, rows: Range<usize>) -> Result<Self> {
        let (total, n) = values.dims2();
        if rows.is_empty() || rows.end > total {
            return Err(Error::Load(format!(
                "standardizer fit range {rows:?} invalid for {total} rows"
            )));
        }
        let count = rows.len() as f64;
        let mut mean = vec![0.0; n];
        let mut std = vec![0.0; n];
        for r in rows.clone() {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += values.at2(r, c);
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        for r in rows {
            for c in 0..n {
                let d = values.at2(r, c) - mean[c];
                std[c] += d * d;
            }
        }
        for s in std.iter_mut() {
            *s = (*s / count).sqrt().max(STD_FLOOR);
        }
        Ok(Standardizer { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Standardize a full rows-by-channels matrix.
    pub fn apply(&self, values: &Tensor) -> Tensor {
        let (rows, n) = values.dims2();
        assert_eq!(n, self.channels(), "standardizer channel count mismatch");
        let mut out = values.clone();
        for r in 0..rows {
            for c in 0..n {
                out.set2(r, c, (values.at2(r, c) - self.mean[c]) / self.std[c]);
            }
        }
        out
    }

    /// Map one standardized value back to the original scale.
    pub fn invert(&self, channel: usize, x: f64) -> f64 {
        x * self.std[channel] + self.mean[channel]
    }
}

/// One training example: `start` is the absolute row where the lookback begins.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
}

/// All windows fully contained in `range`: `len - lookback - horizon + 1` of
/// them, or none (with a warning) when the range is too short.
pub fn make_windows(range: Range<usize>, lookback: usize, horizon: usize) -> Vec<Window> {
    assert!(lookback > 0 && horizon > 0, "window extents must be positive");
    let span = lookback + horizon;
    if range.len() < span {
        log::warn!(
            "range of {} rows is shorter than lookback {lookback} + horizon {horizon}; no windows",
            range.len()
        );
        return Vec::new();
    }
    (range.start..=range.end - span).map(|start| Window { start }).collect()
}

/// A standardized series with its splits and windows, ready for training.
pub struct Dataset {
    pub name: String,
    pub values: Tensor,
    pub channel_names: Vec<String>,
    pub standardizer: Standardizer,
    pub splits: SplitRanges,
    pub lookback: usize,
    pub horizon: usize,
    pub train_windows: Vec<Window>,
    pub val_windows: Vec<Window>,
    pub test_windows: Vec<Window>,
}

impl Dataset {
    /// Split chronologically, fit the standardizer on train rows, scale the
    /// whole series with those statistics, and enumerate per-split windows.
    pub fn prepare(
        series: &RawSeries,
        name: &str,
        spec: &SplitSpec,
        lookback: usize,
        horizon: usize,
    ) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::Config(
                "lookback and horizon must both be at least 1".to_string(),
            ));
        }
        let splits = split_chronological(series.rows(), spec)?;
        let standardizer = Standardizer::fit(&series.values, splits.train.clone())?;
        let values = standardizer.apply(&series.values);
        let train_windows = make_windows(splits.train.clone(), lookback, horizon);
        let val_windows = make_windows(splits.val.clone(), lookback, horizon);
        let test_windows = make_windows(splits.test.clone(), lookback, horizon);
        if train_windows.is_empty() {
            return Err(Error::Load(format!(
                "train split of {} rows yields no windows for lookback {lookback} + horizon {horizon}",
                splits.train.len()
            )));
        }
        Ok(Dataset {
            name: name.to_string(),
            values,
            channel_names: series.channel_names.clone(),
            standardizer,
            splits,
            lookback,
            horizon,
            train_windows,
            val_windows,
            test_windows,
        })
    }

    pub fn channels(&self) -> usize {
        self.values.dims2().1
    }

    /// Lookback block (lookback x N) and horizon block (horizon x N).
    pub fn sample(&self, w: Window) -> (Tensor, Tensor) {
        let n = self.channels();
        let x_start = w.start;
        let y_start = w.start + self.lookback;
        let slice = |start: usize, rows: usize| {
            Tensor::from_vec(
                self.values.data()[start * n..(start + rows) * n].to_vec(),
                &[rows, n],
            )
        };
        (slice(x_start, self.lookback), slice(y_start, self.horizon))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_plain_numeric_csv() {
        let f = write_csv("a,b\n1,2\n3,4\n5,6\n");
        let s = load_csv(f.path()).unwrap();
        assert_eq!(s.rows(), 3);
        assert_eq!(s.channels(), 2);
        assert_eq!(s.channel_names, vec!["a", "b"]);
        assert!(s.timestamps.is_none());
        assert_eq!(s.values.at2(2, 1), 6.0);
    }

    #[test]
    fn first_nonnumeric_column_becomes_timestamps() {
        let f = write_csv("date,x,y\n2016-07-01,1,2\n2016-07-02,3,4\n");
        let s = load_csv(f.path()).unwrap();
        assert_eq!(s.channels(), 2);
        assert_eq!(s.channel_names, vec!["x", "y"]);
        assert_eq!(s.timestamps.as_ref().unwrap()[1], "2016-07-02");
    }

    #[test]
    fn nan_cell_is_rejected_with_position() {
        let f = write_csv("a,b\n1,2\n3,NaN\n");
        let err = load_csv(f.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("'b'"), "{msg}");
    }

    #[test]
    fn ragged_row_is_rejected() {
        let f = write_csv("a,b\n1,2\n3\n");
        let err = load_csv(f.path()).unwrap_err();
        assert!(err.to_string().contains("expected 2 fields"), "{err}");
    }

    #[test]
    fn split_examples() {
        let spec = SplitSpec::default();
        let s = split_chronological(100, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 15, 15));
        let s = split_chronological(10, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        let s = split_chronological(3, &spec).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1, 1, 1));
        assert!(split_chronological(2, &spec).is_err());
    }

    #[test]
    fn split_ratio_validation() {
        assert!(SplitSpec::new(0.5, 0.25, 0.25).is_ok());
        assert!(SplitSpec::new(0.5, 0.5, 0.5).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0).is_err());
        assert!(SplitSpec::new(-0.2, 0.6, 0.6).is_err());
    }

    #[test]
    fn standardizer_unit_example() {
        let v = Tensor::from_vec(vec![1.0, 2.0, 3.0], &[3, 1]);
        let st = Standardizer::fit(&v, 0..3).unwrap();
        let out = st.apply(&v);
        let want = (1.5f64).sqrt(); // 1.2247...
        assert!((out.at2(0, 0) + want).abs() < 1e-4);
        assert!((out.at2(1, 0)).abs() < 1e-12);
        assert!((out.at2(2, 0) - want).abs() < 1e-4);
        assert!((st.invert(0, out.at2(0, 0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn standardizer_ignores_rows_outside_fit_range() {
        let mut v = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[4, 1]);
        let st_clean = Standardizer::fit(&v, 0..2).unwrap();
        v.set2(3, 0, 1e9); // poison a test-region row
        let st_poisoned = Standardizer::fit(&v, 0..2).unwrap();
        assert_eq!(st_clean, st_poisoned);
    }

    #[test]
    fn constant_channel_gets_floored_std() {
        let v = Tensor::from_vec(vec![5.0, 5.0, 5.0], &[3, 1]);
        let st = Standardizer::fit(&v, 0..3).unwrap();
        assert_eq!(st.std[0], STD_FLOOR);
        let out = st.apply(&v);
        assert_eq!(out.at2(1, 0), 0.0);
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(0..10, 4, 2).len(), 5);
        assert_eq!(make_windows(0..5, 4, 2).len(), 0);
        let w = make_windows(10..20, 4, 2);
        assert_eq!(w.len(), 5);
        assert_eq!(w[0].start, 10);
        assert_eq!(w[4].start, 14);
    }

    #[test]
    fn prepared_dataset_samples_contiguous_blocks() {
        let rows = 40;
        let mut vals = Vec::new();
        for r in 0..rows {
            vals.push(r as f64);
            vals.push(2.0 * r as f64);
        }
        let series = RawSeries {
            values: Tensor::from_vec(vals, &[rows, 2]),
            channel_names: vec!["a".into(), "b".into()],
            timestamps: None,
        };
        let ds = Dataset::prepare(&series, "toy", &SplitSpec::default(), 4, 2).unwrap();
        assert_eq!(ds.splits.train.len(), 28);
        assert_eq!(ds.train_windows.len(), 28 - 6 + 1);
        // windows stay inside their split
        for w in &ds.val_windows {
            assert!(w.start >= ds.splits.val.start);
            assert!(w.start + 6 <= ds.splits.val.end);
        }
        let (x, y) = ds.sample(ds.train_windows[3]);
        assert_eq!(x.dims2(), (4, 2));
        assert_eq!(y.dims2(), (2, 2));
        // y starts right after x on the time axis
        assert_eq!(ds.values.at2(3 + 4, 0), y.at2(0, 0));
    }

    #[test]
    fn save_then_load_round_trips() {
        let series = RawSeries {
            values: Tensor::from_vec(vec![1.5, -2.0, 0.25, 3.0], &[2, 2]),
            channel_names: vec!["p".into(), "q".into()],
            timestamps: Some(vec!["t0".into(), "t1".into()]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        save_csv(&path, &series).unwrap();
        let back = load_csv(&path).unwrap();
        assert_eq!(back.values, series.values);
        assert_eq!(back.channel_names, series.channel_names);
        assert_eq!(back.timestamps, series.timestamps);
    }
}
