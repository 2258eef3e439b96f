//! Dataset plumbing: manifest CSV handling, phenotype-label ingestion,
//! HTTP fetching of derivative volumes, and a seeded synthetic generator
//! for desk-scale verification runs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{ctx, RngStream};
use crate::volume::{write_nifti, Volume3};

/// Binary class label. Positive is the clinical group (code 1 in the
/// phenotype convention), negative the control group (code 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Positive => 1,
            Label::Negative => 2,
        }
    }

    pub fn from_code(code: i64) -> Option<Label> {
        match code {
            1 => Some(Label::Positive),
            2 => Some(Label::Negative),
            _ => None,
        }
    }

    /// Training target: 1.0 for positive, 0.0 for negative.
    pub fn y(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Positive => write!(f, "positive"),
            Label::Negative => write!(f, "negative"),
        }
    }
}

/// One subject's row in a dataset manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub file_id: String,
    pub label: Label,
    /// Local volume path; absent until the file has been fetched.
    pub path: Option<PathBuf>,
    /// Derivative name substituted into URL templates.
    pub derivative: String,
}

pub const DEFAULT_DERIVATIVE: &str = "reho";

impl ManifestEntry {
    pub fn new(file_id: impl Into<String>, label: Label, path: Option<PathBuf>) -> Self {
        ManifestEntry {
            file_id: file_id.into(),
            label,
            path,
            derivative: DEFAULT_DERIVATIVE.into(),
        }
    }
}

/// Read a manifest CSV with header `file_id,label,path`. Labels use the
/// phenotype codes (1 positive, 2 negative). Relative paths resolve
/// against the manifest's own directory, so datasets are relocatable.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let bad = |reason: String| Error::BadManifest {
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers()?.clone();
    let want = ["file_id", "label", "path"];
    let idx: Vec<usize> = want
        .iter()
        .map(|w| {
            headers
                .iter()
                .position(|h| h == *w)
                .ok_or_else(|| Error::MissingColumn((*w).to_string()))
        })
        .collect::<Result<_>>()?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(idx[i]).unwrap_or("").trim().to_string();
        let file_id = field(0);
        if file_id.is_empty() {
            return Err(bad(format!("row {}: empty file_id", line + 2)));
        }
        let code: i64 = field(1)
            .parse()
            .map_err(|_| bad(format!("row {}: label {:?} is not an integer", line + 2, field(1))))?;
        let label = Label::from_code(code)
            .ok_or_else(|| bad(format!("row {}: unknown label code {code}", line + 2)))?;
        let raw_path = field(2);
        let path = if raw_path.is_empty() {
            None
        } else {
            let p = PathBuf::from(&raw_path);
            Some(if p.is_absolute() { p } else { base.join(p) })
        };
        entries.push(ManifestEntry::new(file_id, label, path));
    }
    Ok(entries)
}

/// Write a manifest CSV (`file_id,label,path`). Paths under `base` are
/// written relative to it so the directory can be moved as a unit.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry], base: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["file_id", "label", "path"])?;
    for e in entries {
        let p = match &e.path {
            None => String::new(),
            Some(p) => p
                .strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned(),
        };
        w.write_record([e.file_id.as_str(), &e.label.code().to_string(), &p])?;
    }
    w.flush()?;
    Ok(())
}

/// How to read a phenotype CSV: which columns hold the subject id and
/// diagnostic code, and which codes mean which class.
#[derive(Debug, Clone)]
pub struct PhenotypeSpec {
    pub id_column: String,
    pub dx_column: String,
    pub positive_code: i64,
    pub negative_code: i64,
}

impl PhenotypeSpec {
    pub fn new(id_column: impl Into<String>, dx_column: impl Into<String>) -> Self {
        PhenotypeSpec {
            id_column: id_column.into(),
            dx_column: dx_column.into(),
            positive_code: 1,
            negative_code: 2,
        }
    }
}

/// Labels keyed by subject id, plus bookkeeping about skipped rows.
#[derive(Debug, Clone)]
pub struct PhenotypeLabels {
    pub labels: BTreeMap<String, Label>,
    /// Rows whose diagnostic code matched neither class.
    pub skipped: usize,
}

impl PhenotypeLabels {
    pub fn count(&self, label: Label) -> usize {
        self.labels.values().filter(|&&l| l == label).count()
    }
}

/// Map subject ids to labels from a phenotype CSV. Rows with unknown
/// diagnostic codes are skipped and counted; a duplicated id keeps the
/// last row's label.
pub fn parse_phenotype_csv(path: &Path, spec: &PhenotypeSpec) -> Result<PhenotypeLabels> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let id_idx = headers
        .iter()
        .position(|h| h == spec.id_column)
        .ok_or_else(|| Error::MissingColumn(spec.id_column.clone()))?;
    let dx_idx = headers
        .iter()
        .position(|h| h == spec.dx_column)
        .ok_or_else(|| Error::MissingColumn(spec.dx_column.clone()))?;
    let mut labels = BTreeMap::new();
    let mut skipped = 0usize;
    for record in reader.records() {
        let record = record?;
        let id = record.get(id_idx).unwrap_or("").trim();
        let dx = record.get(dx_idx).unwrap_or("").trim();
        let code: Option<i64> = dx.parse().ok();
        let label = match code {
            Some(c) if c == spec.positive_code => Some(Label::Positive),
            Some(c) if c == spec.negative_code => Some(Label::Negative),
            _ => None,
        };
        match (id.is_empty(), label) {
            (false, Some(l)) => {
                labels.insert(id.to_string(), l);
            }
            _ => skipped += 1,
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(PhenotypeLabels { labels, skipped })
}

/// Fetch behavior: the URL template with `{pipeline}`, `{strategy}`,
/// `{derivative}`, `{file_id}` placeholders, the values substituted for
/// the first two, and whether present files are re-downloaded.
#[derive(Debug, Clone)]
pub struct FetchSpec {
    pub base_url_template: String,
    pub pipeline: String,
    pub strategy: String,
    pub overwrite: bool,
}

impl FetchSpec {
    pub fn new(base_url_template: impl Into<String>) -> Self {
        FetchSpec {
            base_url_template: base_url_template.into(),
            pipeline: "ccs".into(),
            strategy: "filt_global".into(),
            overwrite: false,
        }
    }

    pub fn url_for(&self, entry: &ManifestEntry) -> String {
        self.base_url_template
            .replace("{pipeline}", &self.pipeline)
            .replace("{strategy}", &self.strategy)
            .replace("{derivative}", &entry.derivative)
            .replace("{file_id}", &entry.file_id)
    }
}

/// What happened to one manifest entry during a fetch.
#[derive(Debug, Clone, PartialEq)]
pub enum FetchOutcome {
    Fetched,
    Skipped,
    Failed(String),
}

#[derive(Debug, Clone)]
pub struct FetchRecord {
    pub file_id: String,
    pub path: PathBuf,
    pub outcome: FetchOutcome,
}

#[derive(Debug, Clone, Default)]
pub struct FetchSummary {
    pub records: Vec<FetchRecord>,
}

impl FetchSummary {
    pub fn fetched(&self) -> usize {
        self.count(|o| matches!(o, FetchOutcome::Fetched))
    }

    pub fn skipped(&self) -> usize {
        self.count(|o| matches!(o, FetchOutcome::Skipped))
    }

    pub fn failed(&self) -> usize {
        self.count(|o| matches!(o, FetchOutcome::Failed(_)))
    }

    fn count(&self, f: impl Fn(&FetchOutcome) -> bool) -> usize {
        self.records.iter().filter(|r| f(&r.outcome)).count()
    }

    /// Manifest entries for everything now present on disk.
    pub fn resolved_entries(&self, manifest: &[ManifestEntry]) -> Vec<ManifestEntry> {
        self.records
            .iter()
            .zip(manifest)
            .filter(|(r, _)| !matches!(r.outcome, FetchOutcome::Failed(_)))
            .map(|(r, e)| ManifestEntry {
                path: Some(r.path.clone()),
                ..e.clone()
            })
            .collect()
    }
}

/// Download every manifest entry that is not already present.
///
/// Each entry is handled in isolation: an HTTP or validation failure is
/// recorded in the summary and the loop continues. A file that downloads
/// but fails the integrity check (gzip decode + header parse) is
/// quarantined by renaming it with a `.bad` suffix. Only an unusable
/// output directory aborts the whole call. A second run over a complete
/// directory downloads nothing.
pub fn fetch(manifest: &[ManifestEntry], spec: &FetchSpec, out_dir: &Path) -> Result<FetchSummary> {
    std::fs::create_dir_all(out_dir)?;
    let agent = ureq::Agent::new_with_defaults();
    let mut summary = FetchSummary::default();
    for entry in manifest {
        let dest = match &entry.path {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => out_dir.join(p),
            None => out_dir.join(format!("{}_{}.nii.gz", entry.file_id, entry.derivative)),
        };
        let outcome = fetch_one(&agent, entry, spec, &dest);
        summary.records.push(FetchRecord {
            file_id: entry.file_id.clone(),
            path: dest,
            outcome,
        });
    }
    Ok(summary)
}

fn fetch_one(
    agent: &ureq::Agent,
    entry: &ManifestEntry,
    spec: &FetchSpec,
    dest: &Path,
) -> FetchOutcome {
    if dest.exists() && !spec.overwrite {
        return FetchOutcome::Skipped;
    }
    let url = spec.url_for(entry);
    let part = dest.with_extension("part");
    let download = || -> std::result::Result<(), String> {
        let mut response = agent
            .get(&url)
            .call()
            .map_err(|e| format!("http: {e}"))?;
        let mut reader = response.body_mut().as_reader();
        let mut file = File::create(&part).map_err(|e| format!("io: {e}"))?;
        std::io::copy(&mut reader, &mut file).map_err(|e| format!("io: {e}"))?;
        file.flush().map_err(|e| format!("io: {e}"))?;
        Ok(())
    };
    if let Err(reason) = download() {
        let _ = std::fs::remove_file(&part);
        return FetchOutcome::Failed(reason);
    }
    if let Err(e) = std::fs::rename(&part, dest) {
        let _ = std::fs::remove_file(&part);
        return FetchOutcome::Failed(format!("io: {e}"));
    }
    // integrity: the file must decompress and parse as a volume
    match crate::volume::read_nifti(dest) {
        Ok(_) => FetchOutcome::Fetched,
        Err(e) => {
            let quarantine = quarantine_path(dest);
            let _ = std::fs::rename(dest, &quarantine);
            FetchOutcome::Failed(format!("validation: {e} (quarantined as {})",
                quarantine.display()))
        }
    }
}

fn quarantine_path(dest: &Path) -> PathBuf {
    let mut name = dest.file_name().unwrap_or_default().to_os_string();
    name.push(".bad");
    dest.with_file_name(name)
}

/// Recipe for the synthetic labeled dataset: seeded smoothed noise with
/// a class-conditional mean shift inside a centered ellipsoid covering
/// about 10% of the voxels.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub shape: (usize, usize, usize),
    /// Class-mean shift inside the ellipsoid, in units of the volume's
    /// post-smoothing standard deviation.
    pub delta: f64,
    /// Gaussian blur sigma in voxels; 0 disables smoothing.
    pub smoothness: f64,
    /// Fraction of subjects in the positive class.
    pub balance: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_subjects: 120,
            shape: (16, 20, 16),
            delta: 1.0,
            smoothness: 0.75,
            balance: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 4 {
            return Err(Error::InvalidSpec(format!(
                "need at least 4 subjects, got {}",
                self.n_subjects
            )));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidSpec(format!("delta {} must be >= 0", self.delta)));
        }
        if !(self.smoothness >= 0.0 && self.smoothness.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "smoothness {} must be >= 0",
                self.smoothness
            )));
        }
        let (nx, ny, nz) = self.shape;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidSpec(format!("shape {:?} has a zero dim", self.shape)));
        }
        let n_pos = self.positive_count();
        if n_pos == 0 || n_pos == self.n_subjects {
            return Err(Error::InvalidSpec(format!(
                "balance {} leaves a class empty for n = {}",
                self.balance, self.n_subjects
            )));
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        let raw = (self.n_subjects as f64 * self.balance).round() as isize;
        raw.clamp(0, self.n_subjects as isize) as usize
    }
}

/// Ellipsoid semi-axis fraction occupying ~10% of a box: the ellipsoid
/// volume ratio is pi*f^3/6, so f = (0.6/pi)^(1/3).
pub fn ellipsoid_axis_fraction() -> f64 {
    (0.6 / std::f64::consts::PI).cbrt()
}

/// True if voxel (x, y, z) lies in the centered signal ellipsoid.
pub fn in_signal_ellipsoid(shape: (usize, usize, usize), x: usize, y: usize, z: usize) -> bool {
    let f = ellipsoid_axis_fraction();
    let dims = [shape.0, shape.1, shape.2];
    let p = [x as f64, y as f64, z as f64];
    let mut q = 0.0;
    for a in 0..3 {
        let c = (dims[a] as f64 - 1.0) / 2.0;
        let semi = f * (dims[a] as f64 - 1.0) / 2.0;
        let r = (p[a] - c) / semi;
        q += r * r;
    }
    q <= 1.0
}

/// Separable Gaussian blur with border renormalization (taps outside the
/// volume are dropped and the remaining weights rescaled).
fn gaussian_blur(data: &mut Vec<f64>, shape: (usize, usize, usize), sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let (nx, ny, nz) = shape;
    let dims = [nx as isize, ny as isize, nz as isize];
    let strides = [1isize, nx as isize, (nx * ny) as isize];
    let mut scratch = vec![0.0f64; data.len()];
    for axis in 0..3 {
        let n = dims[axis];
        let stride = strides[axis];
        // iterate every line along `axis`
        for z in 0..(if axis == 2 { 1 } else { nz as isize }) {
            for y in 0..(if axis == 1 { 1 } else { ny as isize }) {
                for x in 0..(if axis == 0 { 1 } else { nx as isize }) {
                    let base = x + (nx as isize) * (y + (ny as isize) * z);
                    for i in 0..n {
                        let mut acc = 0.0;
                        let mut wsum = 0.0;
                        for (wi, &w) in weights.iter().enumerate() {
                            let j = i + wi as isize - radius;
                            if j < 0 || j >= n {
                                continue;
                            }
                            acc += w * data[(base + j * stride) as usize];
                            wsum += w;
                        }
                        scratch[(base + i * stride) as usize] = acc / wsum;
                    }
                }
            }
        }
        std::mem::swap(data, &mut scratch);
    }
}

fn sample_std(data: &[f64]) -> f64 {
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    (data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Generate one subject's volume (before f32 narrowing, for tests that
/// need the exact construction).
fn synth_volume(spec: &SynthSpec, index: usize, positive: bool) -> Volume3 {
    let (nx, ny, nz) = spec.shape;
    let mut stream = RngStream::new(spec.seed).descend(&[ctx::SYNTH, index as u64]);
    let mut data: Vec<f64> = (0..nx * ny * nz).map(|_| stream.normal(1.0)).collect();
    gaussian_blur(&mut data, spec.shape, spec.smoothness);
    if positive && spec.delta > 0.0 {
        let shift = spec.delta * sample_std(&data);
        let mut i = 0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    if in_signal_ellipsoid(spec.shape, x, y, z) {
                        data[i] += shift;
                    }
                    i += 1;
                }
            }
        }
    }
    let voxels: Vec<f32> = data.into_iter().map(|v| v as f32).collect();
    Volume3::new(spec.shape, voxels).expect("shape consistent")
}

/// Write `n_subjects` labeled volumes plus `manifest.csv` into `out_dir`.
/// The first `positive_count()` subjects carry the signal. Everything is
/// a pure function of the seed: same spec, bit-identical files.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let n_pos = spec.positive_count();
    let mut entries = Vec::with_capacity(spec.n_subjects);
    for i in 0..spec.n_subjects {
        let positive = i < n_pos;
        let label = if positive { Label::Positive } else { Label::Negative };
        let vol = synth_volume(spec, i, positive);
        let file_id = format!("synth{i:04}");
        let file_name = format!("{file_id}_{DEFAULT_DERIVATIVE}.nii.gz");
        let path = out_dir.join(&file_name);
        write_nifti(&vol, &path, true)?;
        entries.push(ManifestEntry::new(file_id, label, Some(path)));
    }
    write_manifest(&out_dir.join("manifest.csv"), &entries, out_dir)?;
    Ok(entries)
}

/// A fully loaded dataset: parallel volumes/labels/ids in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub volumes: Vec<Volume3>,
    pub labels: Vec<Label>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.volumes[0].shape()
    }
}

/// Load every manifest entry, in order, verifying all volumes share one
/// shape. Entries without a local path are an error.
pub fn load_dataset(entries: &[ManifestEntry]) -> Result<Dataset> {
    if entries.is_empty() {
        return Err(Error::EmptyResult);
    }
    let mut volumes = Vec::with_capacity(entries.len());
    let mut labels = Vec::with_capacity(entries.len());
    let mut ids = Vec::with_capacity(entries.len());
    for e in entries {
        let path = e.path.as_ref().ok_or_else(|| Error::BadManifest {
            path: PathBuf::from(&e.file_id),
            reason: "entry has no local path (not fetched yet?)".into(),
        })?;
        let (vol, _) = crate::volume::read_nifti(path)?;
        volumes.push(vol);
        labels.push(e.label);
        ids.push(e.file_id.clone());
    }
    let first = volumes[0].shape();
    let offending: Vec<String> = entries
        .iter()
        .zip(&volumes)
        .filter(|(_, v)| v.shape() != first)
        .map(|(e, v)| format!("{} is {:?}", e.file_id, v.shape()))
        .collect();
    if !offending.is_empty() {
        return Err(Error::ShapeInconsistency(format!(
            "expected {first:?} everywhere, but {}",
            offending.join(", ")
        )));
    }
    Ok(Dataset {
        volumes,
        labels,
        ids,
    })
}
