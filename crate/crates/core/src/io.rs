//! On-disk formats: dataset CSV + meta JSON, embedding CSV, model JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::classifier::{ClassifierTrainConfig, CfrClassifier};
use crate::datagen::{Dataset, EnvironmentSpec, OutcomeForm, DEFAULT_MAX_CANDIDATES};
use crate::error::{CfrError, Result};
use crate::rectifier::RectifierWeights;
use crate::regressors::{cfr_predict, CfrModel, EpochLosses, LinearModel, Method, TrainConfig};

/// Sidecar metadata describing how a dataset was generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub n: usize,
    pub p: usize,
    pub p_s: usize,
    pub p_v: usize,
    pub outcome_form: OutcomeForm,
    pub r_bias: Option<f64>,
    pub vb_size: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub beta_s: Vec<f64>,
    pub beta_v: Vec<f64>,
    pub stable_mask: Vec<bool>,
}

impl DatasetMeta {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let spec = ds.spec();
        DatasetMeta {
            n: ds.n(),
            p: ds.p(),
            p_s: spec.p_s(),
            p_v: spec.p_v(),
            outcome_form: spec.outcome_form,
            r_bias: spec.r_bias,
            vb_size: spec.biased_count(),
            noise_std: spec.noise_std,
            seed: spec.seed,
            beta_s: ds.beta_s().to_vec(),
            beta_v: ds.beta_v().to_vec(),
            stable_mask: ds.stable_mask().to_vec(),
        }
    }

    fn to_spec(&self) -> Result<EnvironmentSpec> {
        if self.p_s + self.p_v != self.p || self.p_s != self.p_v {
            return Err(CfrError::Consistency(format!(
                "meta declares p = {} but p_s = {}, p_v = {}",
                self.p, self.p_s, self.p_v
            )));
        }
        if self.stable_mask.len() != self.p || self.stable_mask.iter().enumerate().any(|(j, &m)| m != (j < self.p_s)) {
            return Err(CfrError::Consistency(
                "stable_mask must mark exactly the leading p_s columns".into(),
            ));
        }
        let spec = EnvironmentSpec {
            n: self.n,
            p: self.p,
            outcome_form: self.outcome_form,
            r_bias: self.r_bias,
            vb_size: Some(self.vb_size),
            noise_std: self.noise_std,
            seed: self.seed,
            max_candidates: DEFAULT_MAX_CANDIDATES,
        };
        Ok(spec)
    }
}

fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CfrError::io(path, e))
}

fn write_matrix_csv(
    path: &Path,
    header: &[String],
    rows: usize,
    mut cell: impl FnMut(usize, usize) -> String,
) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| CfrError::io(path, e);
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    let mut line = String::new();
    for i in 0..rows {
        line.clear();
        for j in 0..header.len() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&cell(i, j));
        }
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Writes `x1,...,xp,y` rows plus the JSON sidecar.
pub fn write_dataset(ds: &Dataset, data_path: &Path, meta_path: &Path) -> Result<()> {
    let p = ds.p();
    let mut header: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    write_matrix_csv(data_path, &header, ds.n(), |i, j| {
        if j < p {
            format_f64(ds.x()[(i, j)])
        } else {
            format_f64(ds.y()[i])
        }
    })?;
    let meta = DatasetMeta::from_dataset(ds);
    let mut out = create(meta_path)?;
    serde_json::to_writer_pretty(&mut out, &meta)?;
    writeln!(out).map_err(|e| CfrError::io(meta_path, e))?;
    Ok(())
}

/// Reads a numeric CSV whose header must be `prefix1..prefixP,last`.
fn read_numeric_csv(path: &Path, prefix: &str, last: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let p = headers.len().saturating_sub(1);
    for (j, h) in headers.iter().enumerate() {
        let expected = if j == p { last.to_string() } else { format!("{prefix}{}", j + 1) };
        if *h != expected {
            return Err(CfrError::Parse {
                line: 1,
                field: expected,
                message: format!("expected header column '{}', found '{h}'", if j == p { last } else { prefix }),
            });
        }
    }
    if p == 0 || headers.last().map(String::as_str) != Some(last) {
        return Err(CfrError::Parse {
            line: 1,
            field: last.into(),
            message: format!("header must end with a '{last}' column"),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != headers.len() {
            return Err(CfrError::Parse {
                line,
                field: "*".into(),
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, raw) in record.iter().enumerate() {
            let v: f64 = raw.trim().parse().map_err(|_| CfrError::Parse {
                line,
                field: headers[j].clone(),
                message: format!("'{raw}' is not a number"),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok((headers, rows))
}

fn csv_error(path: &Path, e: csv::Error) -> CfrError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CfrError::io(path, io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => CfrError::Parse {
            line,
            field: "*".into(),
            message: format!("expected {expected_len} fields, found {len}"),
        },
        other => CfrError::Parse {
            line,
            field: "*".into(),
            message: format!("{other:?}"),
        },
    }
}

/// Reads `x1,...,xp,y` into a design matrix and outcome vector.
pub fn read_xy_csv(path: &Path) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (headers, rows) = read_numeric_csv(path, "x", "y")?;
    let p = headers.len() - 1;
    let n = rows.len();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    let y = DVector::from_fn(n, |i, _| rows[i][p]);
    Ok((x, y))
}

pub fn read_meta(meta_path: &Path) -> Result<DatasetMeta> {
    let file = File::open(meta_path).map_err(|e| CfrError::io(meta_path, e))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

pub fn read_dataset(data_path: &Path, meta_path: &Path) -> Result<Dataset> {
    let meta = read_meta(meta_path)?;
    let (x, y) = read_xy_csv(data_path)?;
    if x.nrows() != meta.n {
        return Err(CfrError::Consistency(format!(
            "meta declares n = {} but {} has {} rows",
            meta.n,
            data_path.display(),
            x.nrows()
        )));
    }
    if x.ncols() != meta.p {
        return Err(CfrError::Consistency(format!(
            "meta declares p = {} but {} has {} feature columns",
            meta.p,
            data_path.display(),
            x.ncols()
        )));
    }
    let spec = meta.to_spec()?;
    Dataset::from_parts(x, y, meta.beta_s.clone(), meta.beta_v.clone(), spec)
}

/// Conventional meta path next to a data file: `data.csv` -> `data.meta.json`.
pub fn default_meta_path(data_path: &Path) -> std::path::PathBuf {
    data_path.with_extension("meta.json")
}

/// Reads `f1,...,fp,label`.
pub fn read_embedding_csv(path: &Path) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let (headers, rows) = read_numeric_csv(path, "f", "label")?;
    let p = headers.len() - 1;
    let n = rows.len();
    let mut labels = Vec::with_capacity(n);
    for (i, row) in rows.iter().enumerate() {
        let l = row[p];
        if !(l >= 0.0 && l.fract() == 0.0 && l < u32::MAX as f64) {
            return Err(CfrError::Parse {
                line: i as u64 + 2,
                field: "label".into(),
                message: format!("label '{l}' is not a non-negative integer"),
            });
        }
        labels.push(l as usize);
    }
    let f = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    Ok((f, labels))
}

pub fn write_embedding_csv(path: &Path, features: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
    if features.nrows() != labels.len() {
        return Err(CfrError::dim("write_embedding_csv", features.nrows(), labels.len()));
    }
    let p = features.ncols();
    let mut header: Vec<String> = (1..=p).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    write_matrix_csv(path, &header, features.nrows(), |i, j| {
        if j < p {
            format_f64(features[(i, j)])
        } else {
            labels[i].to_string()
        }
    })
}

/// Regression model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionModelFile {
    pub method: Method,
    pub p: usize,
    pub beta: Vec<f64>,
    pub w: Option<RectifierWeights>,
    pub intercept: Option<f64>,
    pub train_config: serde_json::Value,
    pub history: Vec<EpochLosses>,
}

impl RegressionModelFile {
    pub fn from_cfr(model: &CfrModel) -> Result<Self> {
        Ok(RegressionModelFile {
            method: Method::Cfr,
            p: model.p(),
            beta: model.beta.clone(),
            w: Some(model.weights.clone()),
            intercept: model.intercept,
            train_config: serde_json::to_value(&model.config)?,
            history: model.history.clone(),
        })
    }

    pub fn from_linear(model: &LinearModel, train_config: serde_json::Value) -> Self {
        RegressionModelFile {
            method: model.method,
            p: model.beta.len(),
            beta: model.beta.clone(),
            w: None,
            intercept: model.intercept,
            train_config,
            history: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.beta.len() != self.p {
            return Err(CfrError::Consistency(format!(
                "model declares p = {} but beta has {} entries",
                self.p,
                self.beta.len()
            )));
        }
        if let Some(w) = &self.w {
            if w.p() != self.p {
                return Err(CfrError::Consistency(format!(
                    "model declares p = {} but w is {}x{}",
                    self.p,
                    w.p(),
                    w.p()
                )));
            }
        }
        Ok(())
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.validate()?;
        if x.ncols() != self.p {
            return Err(CfrError::dim("model prediction", self.p, x.ncols()));
        }
        let beta = DVector::from_column_slice(&self.beta);
        let mut out = match &self.w {
            Some(w) => cfr_predict(x, w, &beta)?,
            None => x * beta,
        };
        if let Some(b0) = self.intercept {
            out.add_scalar_mut(b0);
        }
        Ok(out)
    }

    pub fn cfr_config(&self) -> Option<TrainConfig> {
        serde_json::from_value(self.train_config.clone()).ok()
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Classifier model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierModelFile {
    pub p: usize,
    #[serde(rename = "C")]
    pub classes: usize,
    pub z_weights: Vec<Vec<f64>>,
    pub class_bias: Vec<f64>,
    pub w: RectifierWeights,
    pub train_config: ClassifierTrainConfig,
    #[serde(default)]
    pub history: Vec<f64>,
}

impl ClassifierModelFile {
    pub fn from_classifier(clf: &CfrClassifier, cfg: &ClassifierTrainConfig) -> Self {
        ClassifierModelFile {
            p: clf.p(),
            classes: clf.classes(),
            z_weights: matrix_rows(&clf.z_weights),
            class_bias: clf.class_bias.iter().copied().collect(),
            w: clf.weights.clone(),
            train_config: cfg.clone(),
            history: clf.history.clone(),
        }
    }

    pub fn to_classifier(&self) -> Result<CfrClassifier> {
        if self.z_weights.len() != self.p || self.z_weights.iter().any(|r| r.len() != self.classes) {
            return Err(CfrError::Consistency(format!(
                "z_weights must be {}x{}",
                self.p, self.classes
            )));
        }
        if self.class_bias.len() != self.classes || self.w.p() != self.p {
            return Err(CfrError::Consistency("classifier bias or rectifier size mismatch".into()));
        }
        Ok(CfrClassifier {
            z_weights: DMatrix::from_fn(self.p, self.classes, |i, j| self.z_weights[i][j]),
            class_bias: DVector::from_column_slice(&self.class_bias),
            weights: self.w.clone(),
            history: self.history.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelFile {
    Regression(RegressionModelFile),
    Classifier(ClassifierModelFile),
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| CfrError::io(path, e))?;
    out.flush().map_err(|e| CfrError::io(path, e))
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CfrError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        CfrError::Parse {
            line: e.line() as u64,
            field: "model".into(),
            message: format!("not a regression or classifier model file ({e})"),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_from_seed, rng_from_seed, EnvironmentSpec};
    use crate::regressors::{ols_fit, train_cfr};
    use proptest::prelude::*;

    fn sample(seed: u64, r: Option<f64>) -> Dataset {
        let spec = EnvironmentSpec::new(40, 6, OutcomeForm::Poly, r, seed).with_vb_size(1);
        generate_from_seed(&spec).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample(3, Some(-2.5));
        let (d, m) = (dir.path().join("d.csv"), dir.path().join("d.meta.json"));
        write_dataset(&ds, &d, &m).unwrap();
        let back = read_dataset(&d, &m).unwrap();
        assert_eq!(back, ds);
        let text = std::fs::read_to_string(&d).unwrap();
        assert!(text.starts_with("x1,x2,x3,x4,x5,x6,y\n"));
    }

    #[test]
    fn missing_header_column_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("bad.csv");
        std::fs::write(&d, "x1,x2\n1.0,2.0\n").unwrap();
        assert!(matches!(read_xy_csv(&d), Err(CfrError::Parse { line: 1, .. })));
        std::fs::write(&d, "x1,x3,y\n1.0,2.0,3.0\n").unwrap();
        assert!(matches!(read_xy_csv(&d), Err(CfrError::Parse { line: 1, .. })));
    }

    #[test]
    fn bad_field_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("bad.csv");
        std::fs::write(&d, "x1,x2,y\n1.0,2.0,3.0\n1.0,abc,3.0\n").unwrap();
        match read_xy_csv(&d) {
            Err(CfrError::Parse { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "x2");
            }
            other => panic!("{other:?}"),
        }
        std::fs::write(&d, "x1,x2,y\n1.0,2.0\n").unwrap();
        assert!(matches!(read_xy_csv(&d), Err(CfrError::Parse { line: 2, .. })));
    }

    #[test]
    fn row_count_mismatch_is_inconsistent() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample(4, None);
        let (d, m) = (dir.path().join("d.csv"), dir.path().join("d.meta.json"));
        write_dataset(&ds, &d, &m).unwrap();
        let text = std::fs::read_to_string(&d).unwrap();
        let truncated: Vec<&str> = text.lines().take(10).collect();
        std::fs::write(&d, truncated.join("\n")).unwrap();
        assert!(matches!(read_dataset(&d, &m), Err(CfrError::Consistency(_))));
    }

    #[test]
    fn meta_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample(5, None);
        let (d, m) = (dir.path().join("d.csv"), dir.path().join("d.meta.json"));
        write_dataset(&ds, &d, &m).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
        v["extra"] = serde_json::json!(1);
        std::fs::write(&m, v.to_string()).unwrap();
        assert!(read_dataset(&d, &m).is_err());
    }

    #[test]
    fn model_files_round_trip_and_predict() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample(6, Some(1.7));
        let ols = ols_fit(ds.x(), ds.y()).unwrap();
        let file = RegressionModelFile::from_linear(&ols, serde_json::json!({}));
        let path = dir.path().join("ols.json");
        write_json(&path, &file).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"w\": null"));
        match read_model(&path).unwrap() {
            ModelFile::Regression(m) => assert_eq!(m.predict(ds.x()).unwrap(), ols.predict(ds.x()).unwrap()),
            other => panic!("{other:?}"),
        }

        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let cfr = train_cfr(&ds, &cfg, &mut rng_from_seed(1)).unwrap();
        let file = RegressionModelFile::from_cfr(&cfr).unwrap();
        let path = dir.path().join("cfr.json");
        write_json(&path, &file).unwrap();
        match read_model(&path).unwrap() {
            ModelFile::Regression(m) => {
                assert_eq!(m.method, Method::Cfr);
                assert_eq!(m.history.len(), 3);
                assert_eq!(m.predict(ds.x()).unwrap(), cfr.predict(ds.x()).unwrap());
                assert_eq!(m.cfr_config().unwrap(), cfg);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn classifier_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut clf = CfrClassifier::zeros(3, 2).unwrap();
        clf.z_weights[(1, 0)] = 0.25;
        clf.class_bias[1] = -1.5;
        let file = ClassifierModelFile::from_classifier(&clf, &ClassifierTrainConfig::default());
        let path = dir.path().join("clf.json");
        write_json(&path, &file).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"C\": 2"));
        match read_model(&path).unwrap() {
            ModelFile::Classifier(m) => assert_eq!(m.to_classifier().unwrap(), clf),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn embedding_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = DMatrix::from_row_slice(3, 2, &[0.1, -2.0, 3.5, 1e-20, 0.0, 7.0]);
        let labels = vec![0, 2, 1];
        let path = dir.path().join("emb.csv");
        write_embedding_csv(&path, &f, &labels).unwrap();
        let (f2, l2) = read_embedding_csv(&path).unwrap();
        assert_eq!(f2, f);
        assert_eq!(l2, labels);
        std::fs::write(&path, "f1,label\n0.5,1.5\n").unwrap();
        assert!(matches!(read_embedding_csv(&path), Err(CfrError::Parse { field, .. }) if field == "label"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn generated_datasets_round_trip(seed in 0u64..10_000, biased in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let ds = sample(seed, biased.then_some(2.0));
            let (d, m) = (dir.path().join("d.csv"), dir.path().join("d.meta.json"));
            write_dataset(&ds, &d, &m).unwrap();
            let back = read_dataset(&d, &m).unwrap();
            prop_assert_eq!(back.x(), ds.x());
            prop_assert_eq!(back.y(), ds.y());
            prop_assert_eq!(back.spec(), ds.spec());
        }
    }
}
