//! Synthetic domain-shift datasets, key-view augmentation and CSV I/O.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{HclError, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Option<Vec<usize>>,
    pub domain: Domain,
    pub seed: u64,
}

/// Features of a dataset with the labels stripped. The adaptation path
/// only ever receives this type.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledView {
    features: Tensor,
}

impl UnlabeledView {
    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Option<Vec<usize>>,
        domain: Domain,
        seed: u64,
    ) -> Result<Self> {
        let (n, _) = features.expect_matrix("dataset features")?;
        if !features.is_finite() {
            return Err(HclError::Validation(
                "dataset has non-finite features".into(),
            ));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(HclError::Validation(format!(
                    "{} labels for {n} samples",
                    l.len()
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            domain,
            seed,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn unlabeled(&self) -> UnlabeledView {
        UnlabeledView {
            features: self.features.clone(),
        }
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.features.clone(), Some(labels), self.domain, self.seed)
    }

    /// Ensures labels exist and lie in `[0, num_classes)`.
    pub fn require_labels(&self, num_classes: usize) -> Result<&[usize]> {
        let labels = self
            .labels
            .as_deref()
            .ok_or_else(|| HclError::Validation("dataset has no labels".into()))?;
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(HclError::Validation(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        Ok(labels)
    }
}

fn rotate(features: &mut Tensor, degrees: f64) {
    let (s, c) = degrees.to_radians().sin_cos();
    for row in features.data_mut().chunks_mut(2) {
        let (x, y) = (row[0], row[1]);
        row[0] = c * x - s * y;
        row[1] = s * x + c * y;
    }
}

/// Two interleaving half circles (centered at the origin) with Gaussian
/// noise, rotated by `rotation_deg` about the origin.
pub fn gen_two_moons(
    n: usize,
    noise: f64,
    rotation_deg: f64,
    domain: Domain,
    seed: u64,
) -> Result<Dataset> {
    if n < 2 {
        return Err(HclError::Validation(format!(
            "two moons needs n >= 2, got {n}"
        )));
    }
    if !(noise >= 0.0) {
        return Err(HclError::Validation(format!(
            "noise must be >= 0, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_outer = n - n / 2;
    let n_inner = n / 2;
    let angle = |i: usize, count: usize| {
        if count > 1 {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        } else {
            std::f64::consts::FRAC_PI_2
        }
    };
    let mut rows: Vec<(f64, f64, usize)> = Vec::with_capacity(n);
    for i in 0..n_outer {
        let t = angle(i, n_outer);
        rows.push((t.cos() - 0.5, t.sin() - 0.25, 0));
    }
    for i in 0..n_inner {
        let t = angle(i, n_inner);
        rows.push((0.5 - t.cos(), 0.25 - t.sin(), 1));
    }
    for r in rows.iter_mut() {
        let (ex, ey): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        r.0 += noise * ex;
        r.1 += noise * ey;
    }
    rows.shuffle(&mut rng);
    let mut features = Tensor::new(
        vec![n, 2],
        rows.iter().flat_map(|&(x, y, _)| [x, y]).collect(),
    )?;
    rotate(&mut features, rotation_deg);
    Dataset::new(
        features,
        Some(rows.iter().map(|r| r.2).collect()),
        domain,
        seed,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobCenter {
    pub mean: Vec<f64>,
    /// Standard deviation of the isotropic cluster.
    pub cov_scale: f64,
}

/// Isotropic Gaussian clusters assigned round-robin (so class counts differ
/// by at most one), every mean translated by `shift`.
pub fn gen_blobs(
    n: usize,
    centers: &[BlobCenter],
    shift: &[f64],
    domain: Domain,
    seed: u64,
) -> Result<Dataset> {
    if centers.len() < 2 {
        return Err(HclError::Validation("blobs need at least 2 centers".into()));
    }
    let d = centers[0].mean.len();
    if d == 0 || centers.iter().any(|c| c.mean.len() != d) || shift.len() != d {
        return Err(HclError::Dimension(
            "blob means and shift must share one positive dimension".into(),
        ));
    }
    if n == 0 {
        return Err(HclError::Validation("blobs need n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for &slot in &order {
        let k = slot % centers.len();
        let c = &centers[k];
        for (m, s) in c.mean.iter().zip(shift) {
            let e: f64 = rng.sample(StandardNormal);
            data.push(m + c.cov_scale * e + s);
        }
        labels.push(k);
    }
    Dataset::new(Tensor::new(vec![n, d], data)?, Some(labels), domain, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub noise_sigma: f64,
    pub scale_jitter: f64,
}

impl AugmentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0) || !(self.scale_jitter >= 0.0) {
            return Err(HclError::Validation(format!(
                "augmentation parameters must be >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `x * (1 + u) + e`, `u ~ U(-jitter, jitter)` per sample and
/// `e ~ N(0, sigma^2)` per coordinate.
pub fn augment(x: &Tensor, spec: &AugmentSpec, seed: u64) -> Result<Tensor> {
    spec.validate()?;
    let mut out = x.clone();
    if spec.noise_sigma == 0.0 && spec.scale_jitter == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.cols();
    for row in out.data_mut().chunks_mut(d) {
        if spec.scale_jitter > 0.0 {
            let u = rng.random_range(-spec.scale_jitter..=spec.scale_jitter);
            row.iter_mut().for_each(|v| *v *= 1.0 + u);
        }
        if spec.noise_sigma > 0.0 {
            for v in row.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += spec.noise_sigma * e;
            }
        }
    }
    Ok(out)
}

/// Expected CSV layout: `x1..xd` feature columns, optionally `label`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CsvSchema {
    /// Required feature count; any count is accepted when `None`.
    pub features: Option<usize>,
    pub require_label: bool,
}

fn parse_err(line: u64, reason: impl Into<String>) -> HclError {
    HclError::Parse {
        line: line as usize,
        reason: reason.into(),
    }
}

pub fn load_csv(path: &Path, schema: CsvSchema, domain: Domain) -> Result<Dataset> {
    let file = File::open(path)?;
    read_csv(file, schema, domain)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: CsvSchema, domain: Domain) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let has_label = cols.last() == Some(&"label");
    let d = cols.len() - usize::from(has_label);
    for (i, name) in cols.iter().take(d).enumerate() {
        if *name != format!("x{}", i + 1) {
            return Err(parse_err(
                1,
                format!("expected column `x{}`, found `{name}`", i + 1),
            ));
        }
    }
    if d == 0 {
        return Err(parse_err(1, "no feature columns"));
    }
    if let Some(want) = schema.features {
        if d != want {
            return Err(parse_err(
                1,
                format!("missing column: expected {want} feature columns, found {d}"),
            ));
        }
    }
    if schema.require_label && !has_label {
        return Err(parse_err(1, "missing column `label`"));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for (j, cell) in rec.iter().take(d).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                parse_err(line, format!("non-numeric value `{cell}` in x{}", j + 1))
            })?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in x{}", j + 1)));
            }
            data.push(v);
        }
        if has_label {
            let cell = &rec[d];
            labels.push(
                cell.trim()
                    .parse::<usize>()
                    .map_err(|_| parse_err(line, format!("invalid label `{cell}`")))?,
            );
        }
    }
    let n = data.len() / d;
    if n == 0 {
        return Err(HclError::Validation("CSV contains no samples".into()));
    }
    Dataset::new(
        Tensor::new(vec![n, d], data)?,
        has_label.then_some(labels),
        domain,
        0,
    )
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv(dataset, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(dataset: &Dataset, w: &mut W) -> Result<()> {
    let d = dataset.dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for (i, row) in dataset.features.row_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(l) = &dataset.labels {
            cells.push(l[i].to_string());
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}
