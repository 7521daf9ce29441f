//! Versioned plain-text model files.
//!
//! One record per line: a keyword followed by space-separated values.
//! Matrices are written as `matrix <name> <rows> <cols>` followed by one
//! `row` line per matrix row. Floats use 17 significant digits, so a
//! load/save cycle reproduces the file byte for byte.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::bench::knn::KnnIndex;
use crate::data::MinMaxScaler;
use crate::error::{Error, Result};
use crate::kpca::{kpca_map, KernelTmlSvmModel, KpcaMap};
use crate::metric::MahalanobisMetric;
use crate::svm::{BinaryClassifier, OvoBank, SvmModel};
use crate::tml_svm::{tml_svm_predict, BinaryTmlSvm, CenteringInfo, TmlSvmModel, TmlSvmReport};
use crate::tps::{AnchorMethod, AnchorSet, KernelSpec, SideConditionMode, TpsTransform};

pub const MAGIC: &str = "tpsml-model";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum StoredModel {
    /// 1NN under a Mahalanobis metric.
    Mmc {
        metric: MahalanobisMetric,
        reference: DMatrix<f64>,
        labels: Vec<usize>,
    },
    /// 1NN after a TPS transform.
    TmlNn {
        transform: TpsTransform,
        side_conditions: SideConditionMode,
        reference: DMatrix<f64>,
        labels: Vec<usize>,
    },
    TmlSvm(TmlSvmModel),
    KernelTmlSvm(KernelTmlSvmModel),
}

impl StoredModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            StoredModel::Mmc { .. } => "MMC",
            StoredModel::TmlNn { .. } => "TML_NN",
            StoredModel::TmlSvm(_) => "TML_SVM",
            StoredModel::KernelTmlSvm(_) => "KERNEL_TML_SVM",
        }
    }
}

/// A trained model with everything needed to predict from raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    /// Original label text indexed by class id.
    pub class_names: Vec<String>,
    /// Feature scaling applied before the model.
    pub scaler: Option<MinMaxScaler>,
    pub model: StoredModel,
}

fn rows_of(x: &DMatrix<f64>) -> impl Iterator<Item = Vec<f64>> + '_ {
    x.row_iter().map(|r| r.iter().copied().collect())
}

fn nearest_distance(points: &DMatrix<f64>, q: &[f64]) -> f64 {
    points
        .row_iter()
        .map(|r| r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

impl ModelFile {
    pub fn input_dim(&self) -> usize {
        match &self.model {
            StoredModel::Mmc { reference, .. } | StoredModel::TmlNn { reference, .. } => reference.ncols(),
            StoredModel::TmlSvm(m) => m.bank.members[0].1.centering.mean.len(),
            StoredModel::KernelTmlSvm(m) => m.kpca.input_dim(),
        }
    }

    fn scaled(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "data has {} features, model expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(match &self.scaler {
            Some(s) => s.apply(x),
            None => x.clone(),
        })
    }

    /// Class ids for every row of raw features.
    pub fn predict_batch(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let z = self.scaled(x)?;
        match &self.model {
            StoredModel::Mmc {
                metric,
                reference,
                labels,
            } => {
                let f = metric.factor();
                let index = KnnIndex::new(reference * &f, labels.clone())?;
                let q = z * &f;
                rows_of(&q).map(|r| index.predict(&r, 1)).collect()
            }
            StoredModel::TmlNn {
                transform,
                reference,
                labels,
                ..
            } => {
                let index = KnnIndex::new(transform.apply_batch(reference)?, labels.clone())?;
                let q = transform.apply_batch(&z)?;
                rows_of(&q).map(|r| index.predict(&r, 1)).collect()
            }
            StoredModel::TmlSvm(m) => rows_of(&z).map(|r| tml_svm_predict(m, &r)).collect(),
            StoredModel::KernelTmlSvm(m) => rows_of(&z).map(|r| m.predict(&r)).collect(),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        let row = DMatrix::from_row_slice(1, x.len(), x);
        Ok(self.predict_batch(&row)?[0])
    }

    /// Real-valued outputs behind a prediction: every one-vs-one margin for
    /// SVM models; the mapped point followed by its nearest-reference
    /// distance for nearest-neighbour models.
    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        let row = self.scaled(&DMatrix::from_row_slice(1, x.len(), x))?;
        let z: Vec<f64> = row.iter().copied().collect();
        match &self.model {
            StoredModel::Mmc { metric, reference, .. } => {
                let f = metric.factor();
                let q: Vec<f64> = (row * &f).iter().copied().collect();
                let mut out = q.clone();
                out.push(nearest_distance(&(reference * &f), &q));
                Ok(out)
            }
            StoredModel::TmlNn {
                transform, reference, ..
            } => {
                let q: Vec<f64> = transform.apply(&z)?.iter().copied().collect();
                let mut out = q.clone();
                out.push(nearest_distance(&transform.apply_batch(reference)?, &q));
                Ok(out)
            }
            StoredModel::TmlSvm(m) => m.bank.members.iter().map(|(_, b)| b.margin(&z)).collect(),
            StoredModel::KernelTmlSvm(m) => {
                let e = kpca_map(&m.kpca, &z)?;
                m.inner.bank.members.iter().map(|(_, b)| b.margin(e.as_slice())).collect()
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut w = Writer::default();
        w.line(MAGIC, &[SCHEMA_VERSION.to_string()]);
        w.line("kind", &[self.model.kind_name().to_string()]);
        w.line("classes", &[self.class_names.len().to_string()]);
        for name in &self.class_names {
            w.line("class", &[escape(name)]);
        }
        match &self.scaler {
            None => w.line("scaler", &["none".to_string()]),
            Some(s) => {
                w.line("scaler", &["minmax".to_string()]);
                w.floats("min", &s.min);
                w.floats("range", &s.range);
            }
        }
        match &self.model {
            StoredModel::Mmc {
                metric,
                reference,
                labels,
            } => {
                w.matrix("metric", &metric.m);
                w.reference(reference, labels);
            }
            StoredModel::TmlNn {
                transform,
                side_conditions,
                reference,
                labels,
            } => {
                w.line("side_conditions", &[side_conditions.name().to_string()]);
                w.transform(transform);
                w.reference(reference, labels);
            }
            StoredModel::TmlSvm(m) => w.tml_svm(m),
            StoredModel::KernelTmlSvm(m) => {
                w.kpca(&m.kpca);
                w.tml_svm(&m.inner);
            }
        }
        w.line("end", &[]);
        w.out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut r = Reader::new(text);
        let head = r.next_line()?;
        if head.key != MAGIC {
            return Err(Error::Schema(format!("line {}: not a model file", head.no)));
        }
        let version: u32 = head.one()?;
        if version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema version {version} (this build reads version {SCHEMA_VERSION})"
            )));
        }
        let kind = r.expect("kind")?.word()?;
        let classes: usize = r.expect("classes")?.one()?;
        let mut class_names = Vec::with_capacity(classes);
        for _ in 0..classes {
            let l = r.expect("class")?;
            class_names.push(unescape(&l.rest));
        }
        let scaler = match r.expect("scaler")?.word()?.as_str() {
            "none" => None,
            "minmax" => Some(MinMaxScaler {
                min: r.expect("min")?.floats()?,
                range: r.expect("range")?.floats()?,
            }),
            other => return Err(Error::Schema(format!("unknown scaler {other:?}"))),
        };
        let model = match kind.as_str() {
            "MMC" => {
                let m = r.matrix("metric")?;
                let metric = MahalanobisMetric::new(m).map_err(|e| Error::Schema(e.to_string()))?;
                let (reference, labels) = r.reference()?;
                StoredModel::Mmc {
                    metric,
                    reference,
                    labels,
                }
            }
            "TML_NN" => {
                let side_conditions = r.side_conditions()?;
                let transform = r.transform()?;
                let (reference, labels) = r.reference()?;
                StoredModel::TmlNn {
                    transform,
                    side_conditions,
                    reference,
                    labels,
                }
            }
            "TML_SVM" => StoredModel::TmlSvm(r.tml_svm()?),
            "KERNEL_TML_SVM" => {
                let kpca = r.kpca()?;
                let inner = r.tml_svm()?;
                StoredModel::KernelTmlSvm(KernelTmlSvmModel { kpca, inner })
            }
            other => return Err(Error::Schema(format!("unknown model kind {other:?}"))),
        };
        r.expect("end")?;
        let file = ModelFile {
            class_names,
            scaler,
            model,
        };
        file.check()?;
        Ok(file)
    }

    /// Cross-field consistency of a loaded file.
    fn check(&self) -> Result<()> {
        let d = self.input_dim();
        if let Some(s) = &self.scaler {
            if s.min.len() != d || s.range.len() != d {
                return Err(Error::Schema("scaler dimension differs from model input".into()));
            }
        }
        let k = self.class_names.len();
        let labels_ok = match &self.model {
            StoredModel::Mmc { labels, .. } | StoredModel::TmlNn { labels, .. } => labels.iter().all(|&l| l < k),
            StoredModel::TmlSvm(m) => m.bank.num_classes <= k,
            StoredModel::KernelTmlSvm(m) => m.inner.bank.num_classes <= k,
        };
        if !labels_ok {
            return Err(Error::Schema("class id without a class name".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        ModelFile::from_text(&std::fs::read_to_string(path)?)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n").replace('\r', "\\r")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Default)]
struct Writer {
    out: String,
}

impl Writer {
    fn line(&mut self, key: &str, values: &[String]) {
        self.out.push_str(key);
        for v in values {
            self.out.push(' ');
            self.out.push_str(v);
        }
        self.out.push('\n');
    }

    fn floats(&mut self, key: &str, values: &[f64]) {
        let v: Vec<String> = values.iter().map(|&x| fmt_float(x)).collect();
        self.line(key, &v);
    }

    fn matrix(&mut self, name: &str, m: &DMatrix<f64>) {
        self.line("matrix", &[name.to_string(), m.nrows().to_string(), m.ncols().to_string()]);
        for r in rows_of(m) {
            self.floats("row", &r);
        }
    }

    fn reference(&mut self, x: &DMatrix<f64>, labels: &[usize]) {
        self.matrix("reference", x);
        let v: Vec<String> = labels.iter().map(usize::to_string).collect();
        self.line("labels", &v);
    }

    fn transform(&mut self, t: &TpsTransform) {
        self.line("kernel", &[t.kernel.name().to_string()]);
        self.line(
            "anchors",
            &[t.anchors.method.name().to_string(), t.anchors.seed.to_string()],
        );
        self.matrix("anchor_points", &t.anchors.points);
        self.matrix("linear", &t.linear);
        self.matrix("psi", &t.psi);
    }

    fn tml_svm(&mut self, m: &TmlSvmModel) {
        self.line("side_conditions", &[m.side_conditions.name().to_string()]);
        self.line(
            "bank",
            &[m.bank.num_classes.to_string(), m.bank.members.len().to_string()],
        );
        for ((a, b), member) in &m.bank.members {
            self.line("pair", &[a.to_string(), b.to_string()]);
            self.floats("center", &member.centering.mean);
            self.floats("scale", &[member.centering.scale]);
            self.transform(&member.transform);
            self.floats("svm_w", member.svm.w.as_slice());
            self.floats("svm_b", &[member.svm.b]);
            self.floats("svm_c", &[member.svm.c]);
            let rep = &member.report;
            self.line(
                "report",
                &[
                    rep.outer_iterations.to_string(),
                    rep.accepted_transform_steps.to_string(),
                    u8::from(rep.converged).to_string(),
                ],
            );
            self.floats("trace", &rep.objective_trace);
        }
    }

    fn kpca(&mut self, k: &KpcaMap) {
        self.floats("sigma", &[k.sigma]);
        self.floats("grand_mean", &[k.grand_mean]);
        self.floats("eigenvalues", &k.eigenvalues);
        self.floats("row_means", &k.row_means);
        self.matrix("kpca_train", &k.train);
        self.matrix("kpca_coefficients", &k.coefficients);
    }
}

struct Line {
    no: usize,
    key: String,
    rest: String,
}

impl Line {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Schema(format!("line {}: {msg}", self.no))
    }

    fn tokens(&self) -> impl Iterator<Item = &str> {
        self.rest.split(' ').filter(|t| !t.is_empty())
    }

    fn word(&self) -> Result<String> {
        let t: Vec<&str> = self.tokens().collect();
        match t.as_slice() {
            [one] => Ok(one.to_string()),
            _ => Err(self.err(format!("expected one value after {:?}", self.key))),
        }
    }

    fn one<T: std::str::FromStr>(&self) -> Result<T> {
        self.word()?
            .parse()
            .map_err(|_| self.err(format!("bad value for {:?}", self.key)))
    }

    fn parsed<T: std::str::FromStr>(&self) -> Result<Vec<T>> {
        self.tokens()
            .map(|t| t.parse().map_err(|_| self.err(format!("bad value {t:?}"))))
            .collect()
    }

    fn floats(&self) -> Result<Vec<f64>> {
        let v: Vec<f64> = self.parsed()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(self.err("non-finite value"));
        }
        Ok(v)
    }

    fn float(&self) -> Result<f64> {
        match self.floats()?.as_slice() {
            [v] => Ok(*v),
            _ => Err(self.err(format!("expected one value after {:?}", self.key))),
        }
    }
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str) -> Self {
        Reader {
            lines: text.lines().enumerate(),
        }
    }

    fn next_line(&mut self) -> Result<Line> {
        let (i, raw) = self
            .lines
            .next()
            .ok_or_else(|| Error::Schema("unexpected end of model file".into()))?;
        let (key, rest) = raw.split_once(' ').unwrap_or((raw, ""));
        Ok(Line {
            no: i + 1,
            key: key.to_string(),
            rest: rest.to_string(),
        })
    }

    fn expect(&mut self, key: &str) -> Result<Line> {
        let l = self.next_line()?;
        if l.key != key {
            return Err(l.err(format!("expected {key:?}, found {:?}", l.key)));
        }
        Ok(l)
    }

    fn matrix(&mut self, name: &str) -> Result<DMatrix<f64>> {
        let head = self.expect("matrix")?;
        let t: Vec<&str> = head.tokens().collect();
        let (rows, cols) = match t.as_slice() {
            [n, r, c] if *n == name => (
                r.parse::<usize>().map_err(|_| head.err("bad row count"))?,
                c.parse::<usize>().map_err(|_| head.err("bad column count"))?,
            ),
            _ => return Err(head.err(format!("expected matrix {name:?}"))),
        };
        let mut flat = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let l = self.expect("row")?;
            let v = l.floats()?;
            if v.len() != cols {
                return Err(l.err(format!("expected {cols} values, found {}", v.len())));
            }
            flat.extend(v);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &flat))
    }

    fn reference(&mut self) -> Result<(DMatrix<f64>, Vec<usize>)> {
        let x = self.matrix("reference")?;
        let l = self.expect("labels")?;
        let labels: Vec<usize> = l.parsed()?;
        if labels.len() != x.nrows() {
            return Err(l.err("label count differs from reference rows"));
        }
        Ok((x, labels))
    }

    fn side_conditions(&mut self) -> Result<SideConditionMode> {
        let l = self.expect("side_conditions")?;
        SideConditionMode::from_name(&l.word()?).ok_or_else(|| l.err("unknown side-condition mode"))
    }

    fn transform(&mut self) -> Result<TpsTransform> {
        let l = self.expect("kernel")?;
        let kernel = KernelSpec::from_name(&l.word()?).ok_or_else(|| l.err("unknown kernel"))?;
        let l = self.expect("anchors")?;
        let t: Vec<&str> = l.tokens().collect();
        let (method, seed) = match t.as_slice() {
            [m, s] => (
                AnchorMethod::from_name(m).ok_or_else(|| l.err("unknown anchor method"))?,
                s.parse::<u64>().map_err(|_| l.err("bad anchor seed"))?,
            ),
            _ => return Err(l.err("expected anchor method and seed")),
        };
        let points = self.matrix("anchor_points")?;
        let linear = self.matrix("linear")?;
        let psi = self.matrix("psi")?;
        TpsTransform::new(linear, psi, AnchorSet { points, seed, method }, kernel)
            .map_err(|e| Error::Schema(e.to_string()))
    }

    fn tml_svm(&mut self) -> Result<TmlSvmModel> {
        let side_conditions = self.side_conditions()?;
        let l = self.expect("bank")?;
        let counts: Vec<usize> = l.parsed()?;
        let [num_classes, members] = counts[..] else {
            return Err(l.err("expected class and member counts"));
        };
        if members != num_classes * num_classes.saturating_sub(1) / 2 || members == 0 {
            return Err(l.err("member count does not match class count"));
        }
        let mut bank = Vec::with_capacity(members);
        for _ in 0..members {
            let l = self.expect("pair")?;
            let pair: Vec<usize> = l.parsed()?;
            let [a, b] = pair[..] else {
                return Err(l.err("expected two class ids"));
            };
            let mean = self.expect("center")?.floats()?;
            let scale = self.expect("scale")?.float()?;
            let transform = self.transform()?;
            let l = self.expect("svm_w")?;
            let w = l.floats()?;
            if w.len() != transform.dim() || mean.len() != transform.dim() {
                return Err(l.err("SVM, centering and transform dimensions differ"));
            }
            let b_val = self.expect("svm_b")?.float()?;
            let c = self.expect("svm_c")?.float()?;
            let l = self.expect("report")?;
            let rep: Vec<usize> = l.parsed()?;
            let [outer, accepted, converged] = rep[..] else {
                return Err(l.err("expected three report fields"));
            };
            let trace = self.expect("trace")?.floats()?;
            bank.push((
                (a, b),
                BinaryTmlSvm {
                    centering: CenteringInfo { mean, scale },
                    transform,
                    svm: SvmModel {
                        w: DVector::from_vec(w),
                        b: b_val,
                        c,
                    },
                    report: TmlSvmReport {
                        outer_iterations: outer,
                        objective_trace: trace,
                        accepted_transform_steps: accepted,
                        converged: converged != 0,
                    },
                },
            ));
        }
        Ok(TmlSvmModel {
            bank: OvoBank {
                num_classes,
                members: bank,
            },
            side_conditions,
        })
    }

    fn kpca(&mut self) -> Result<KpcaMap> {
        let sigma = self.expect("sigma")?.float()?;
        let grand_mean = self.expect("grand_mean")?.float()?;
        let eigenvalues = self.expect("eigenvalues")?.floats()?;
        let row_means = self.expect("row_means")?.floats()?;
        let train = self.matrix("kpca_train")?;
        let coefficients = self.matrix("kpca_coefficients")?;
        if coefficients.shape() != (train.nrows(), eigenvalues.len()) || row_means.len() != train.nrows() {
            return Err(Error::Schema("kernel PCA blocks have inconsistent sizes".into()));
        }
        Ok(KpcaMap {
            train,
            sigma,
            eigenvalues,
            coefficients,
            row_means,
            grand_mean,
        })
    }
}
