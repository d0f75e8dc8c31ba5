//! On-disk formats and the synthetic feature generator.
//!
//! Feature dump (`I2FV`, all little-endian):
//!
//! ```text
//! magic        4 bytes  "I2FV"
//! version      u32      1
//! dim          u32
//! record_count u64
//! records      record_count x (label: u32, values: dim x f32)
//! ```
//!
//! Checkpoints (`I2CK`) hold the run configuration, the random stream
//! position, the class statistics, the head, and the run report. Nothing else
//! is persisted; in particular no raw training feature is ever written.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::classifier::LinearHead;
use crate::error::{Error, Result};
use crate::metrics::RunReport;
use crate::protocol::RunConfig;
use crate::rng::{substream, RngState, Stream};
use crate::stats::{ClassStatistics, StatisticsStore};
use crate::Label;

pub const DUMP_MAGIC: &[u8; 4] = b"I2FV";
pub const DUMP_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"I2CK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DumpRecord {
    pub label: Label,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub dim: u32,
    pub records: Vec<DumpRecord>,
}

impl FeatureDump {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&DUMP_VERSION.to_le_bytes())?;
        w.write_all(&self.dim.to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for (i, rec) in self.records.iter().enumerate() {
            if rec.values.len() != self.dim as usize {
                return Err(Error::DimensionMismatch {
                    expected: self.dim as usize,
                    found: rec.values.len(),
                });
            }
            if let Some(index) = rec.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteRecord {
                    record: i as u64,
                    index,
                });
            }
            w.write_all(&rec.label.to_le_bytes())?;
            for v in &rec.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = ByteReader::new(r);
        r.expect_magic(DUMP_MAGIC)?;
        r.expect_version(DUMP_VERSION)?;
        let dim = r.u32("dimension")?;
        let count = r.u64("record count")?;
        let mut records = Vec::with_capacity(count.min(1 << 20) as usize);
        for i in 0..count {
            let label = r.u32_or_truncated(|| format!("record {i} of {count} missing"))?;
            let mut values = Vec::with_capacity(dim as usize);
            for j in 0..dim as usize {
                let v = r.f32_or_truncated(|| format!("record {i} of {count} cut short"))?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteRecord {
                        record: i,
                        index: j,
                    });
                }
                values.push(v);
            }
            records.push(DumpRecord { label, values });
        }
        r.expect_eof()?;
        Ok(Self { dim, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

pub fn write_dump(path: impl AsRef<Path>, dump: &FeatureDump) -> Result<()> {
    dump.write(path)
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<FeatureDump> {
    FeatureDump::read(path)
}

/// Labeled features held in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    labels: Vec<Label>,
    features: Vec<f64>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            labels: Vec::new(),
            features: Vec::new(),
        }
    }

    pub fn push(&mut self, label: Label, feature: &[f64]) -> Result<()> {
        crate::error::check_dim(self.dim, feature.len())?;
        self.labels.push(label);
        self.features.extend_from_slice(feature);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, index: usize) -> Label {
        self.labels[index]
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn feature(&self, index: usize) -> &[f64] {
        &self.features[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], Label)> + '_ {
        self.features
            .chunks_exact(self.dim)
            .zip(self.labels.iter().copied())
    }

    /// Distinct labels, ascending.
    pub fn classes(&self) -> Vec<Label> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Sample indices grouped per class, ascending by label.
    pub fn indices_by_class(&self) -> std::collections::BTreeMap<Label, Vec<usize>> {
        let mut map = std::collections::BTreeMap::<Label, Vec<usize>>::new();
        for (i, &l) in self.labels.iter().enumerate() {
            map.entry(l).or_default().push(i);
        }
        map
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.dim);
        for &i in indices {
            out.labels.push(self.labels[i]);
            out.features.extend_from_slice(self.feature(i));
        }
        out
    }

    pub fn to_dump(&self) -> FeatureDump {
        FeatureDump {
            dim: self.dim as u32,
            records: self
                .iter()
                .map(|(f, label)| DumpRecord {
                    label,
                    values: f.iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        }
    }
}

impl From<&FeatureDump> for Dataset {
    fn from(dump: &FeatureDump) -> Self {
        let mut ds = Dataset::new(dump.dim as usize);
        for rec in &dump.records {
            ds.labels.push(rec.label);
            ds.features.extend(rec.values.iter().map(|&v| v as f64));
        }
        ds
    }
}

/// Per-dimension spread recipe for synthetic classes.
///
/// Every class draws its noise from the same shared low-rank directions plus a
/// small isotropic floor, and then scales each dimension by its own
/// permutation of a common scale profile. Deviations therefore share their
/// structure across classes up to a per-dimension rescaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdProfile {
    /// Smallest entry of the shared per-dimension scale profile.
    pub min_scale: f64,
    /// Largest entry of the shared per-dimension scale profile.
    pub max_scale: f64,
    /// Rank of the shared variation subspace.
    pub shared_directions: usize,
    /// Standard deviation of each shared latent factor.
    pub direction_strength: f64,
    /// Isotropic noise added on top of the shared directions.
    pub isotropic_noise: f64,
}

impl Default for StdProfile {
    fn default() -> Self {
        Self {
            min_scale: 0.5,
            max_scale: 2.0,
            shared_directions: 4,
            direction_strength: 1.0,
            isotropic_noise: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub mean_scale: f64,
    pub std_profile: StdProfile,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The reference benchmark: 20 classes, 64 dimensions, 200 train and 50
    /// test samples per class.
    fn default() -> Self {
        Self {
            class_count: 20,
            dim: 64,
            train_per_class: 200,
            test_per_class: 50,
            mean_scale: 0.35,
            std_profile: StdProfile::default(),
            seed: 0,
        }
    }
}

/// Sampled class parameters of a [`SyntheticSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticModel {
    pub means: Vec<Vec<f64>>,
    /// `dim x shared_directions`, row-major.
    pub loadings: Vec<f64>,
    /// Per-class per-dimension multipliers.
    pub scales: Vec<Vec<f64>>,
    pub isotropic_noise: f64,
    pub shared_directions: usize,
}

impl SyntheticModel {
    /// Analytic per-dimension standard deviation of class `c`.
    pub fn class_std(&self, c: usize) -> Vec<f64> {
        let k = self.shared_directions;
        let dim = self.means[c].len();
        (0..dim)
            .map(|i| {
                let shared: f64 = self.loadings[i * k..(i + 1) * k]
                    .iter()
                    .map(|a| a * a)
                    .sum();
                self.scales[c][i] * (shared + self.isotropic_noise.powi(2)).sqrt()
            })
            .collect()
    }

    fn sample<R: Rng + ?Sized>(&self, c: usize, rng: &mut R, out: &mut Vec<f64>) {
        let k = self.shared_directions;
        let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        out.clear();
        for (i, (m, s)) in self.means[c].iter().zip(&self.scales[c]).enumerate() {
            let shared: f64 = self.loadings[i * k..(i + 1) * k]
                .iter()
                .zip(&z)
                .map(|(a, z)| a * z)
                .sum();
            let eps: f64 = rng.sample(StandardNormal);
            out.push(m + s * (shared + self.isotropic_noise * eps));
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.dim == 0 {
            return Err(Error::invalid_argument("class_count and dim must be positive"));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::invalid_argument(
                "train_per_class and test_per_class must be positive",
            ));
        }
        let p = &self.std_profile;
        if !(p.min_scale > 0.0 && p.max_scale >= p.min_scale) {
            return Err(Error::invalid_argument(
                "std profile needs 0 < min_scale <= max_scale",
            ));
        }
        if !(p.direction_strength >= 0.0 && p.isotropic_noise >= 0.0) {
            return Err(Error::invalid_argument("std profile strengths must be non-negative"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<SyntheticModel> {
        self.validate()?;
        let p = &self.std_profile;
        let k = p.shared_directions;
        let mut rng = substream(self.seed, Stream::SyntheticParams);

        let means = (0..self.class_count)
            .map(|_| {
                (0..self.dim)
                    .map(|_| self.mean_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();

        let per_factor = if k > 0 {
            p.direction_strength / (k as f64).sqrt()
        } else {
            0.0
        };
        let loadings = (0..self.dim * k)
            .map(|_| per_factor * rng.sample::<f64, _>(StandardNormal))
            .collect();

        // Geometric profile from min_scale to max_scale, permuted per class.
        let profile: Vec<f64> = (0..self.dim)
            .map(|i| {
                let t = if self.dim > 1 {
                    i as f64 / (self.dim - 1) as f64
                } else {
                    0.0
                };
                p.min_scale * (p.max_scale / p.min_scale).powf(t)
            })
            .collect();
        let scales = (0..self.class_count)
            .map(|_| {
                let mut s = profile.clone();
                s.shuffle(&mut rng);
                s
            })
            .collect();

        Ok(SyntheticModel {
            means,
            loadings,
            scales,
            isotropic_noise: p.isotropic_noise,
            shared_directions: k,
        })
    }
}

/// Train and test dumps for `spec`. Test samples come from a separate random
/// stream, so the two never share a draw.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FeatureDump, FeatureDump)> {
    let model = spec.model()?;
    let draw = |per_class: usize, stream: Stream| {
        let mut rng = substream(spec.seed, stream);
        let mut buf = Vec::with_capacity(spec.dim);
        let mut records = Vec::with_capacity(per_class * spec.class_count);
        for c in 0..spec.class_count {
            for _ in 0..per_class {
                model.sample(c, &mut rng, &mut buf);
                records.push(DumpRecord {
                    label: c as Label,
                    values: buf.iter().map(|&v| v as f32).collect(),
                });
            }
        }
        FeatureDump {
            dim: spec.dim as u32,
            records,
        }
    };
    Ok((
        draw(spec.train_per_class, Stream::SyntheticTrain),
        draw(spec.test_per_class, Stream::SyntheticTest),
    ))
}

/// Everything a run persists.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub rng: RngState,
    pub batches_seen: u64,
    pub store: StatisticsStore,
    pub head: LinearHead,
    pub report: RunReport,
}

/// Byte accounting of a serialized checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointAudit {
    pub classes: usize,
    pub dim: usize,
    /// Per-class vectors in the statistics section.
    pub stat_vectors: usize,
    /// Per-class counters in the statistics section.
    pub stat_counters: usize,
    pub head_rows: usize,
    pub total_bytes: usize,
    /// Bytes not attributable to any known section.
    pub unaccounted_bytes: usize,
}

/// Encoded size of the statistics section for `classes` classes of `dim`.
pub fn store_section_len(classes: usize, dim: usize) -> usize {
    4 + 4 + classes * (4 + 8 + 2 * 8 * dim)
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        write_blob(&mut w, &serde_json::to_vec(&self.config)?)?;
        w.write_all(&self.rng.seed)?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;
        w.write_all(&self.batches_seen.to_le_bytes())?;
        encode_store(&mut w, &self.store, self.head.dim())?;
        encode_head(&mut w, &self.head)?;
        write_blob(&mut w, &serde_json::to_vec(&self.report)?)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Ok(decode_checkpoint(r)?.0)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Parses a serialized checkpoint and attributes every byte to a section.
    pub fn audit(bytes: &[u8]) -> Result<CheckpointAudit> {
        let (ck, sections) = decode_checkpoint(bytes)?;
        let classes = ck.store.len();
        let dim = ck.head.dim();
        let accounted = sections.header
            + sections.config
            + sections.rng
            + sections.cursor
            + sections.store
            + sections.head
            + sections.report;
        Ok(CheckpointAudit {
            classes,
            dim,
            stat_vectors: sections.stat_vectors,
            stat_counters: sections.stat_counters,
            head_rows: ck.head.num_classes(),
            total_bytes: bytes.len(),
            unaccounted_bytes: bytes.len() - accounted,
        })
    }
}

#[derive(Default)]
struct Sections {
    header: usize,
    config: usize,
    rng: usize,
    cursor: usize,
    store: usize,
    head: usize,
    report: usize,
    stat_vectors: usize,
    stat_counters: usize,
}

fn decode_checkpoint<R: Read>(r: R) -> Result<(Checkpoint, Sections)> {
    let mut r = ByteReader::new(r);
    let mut s = Sections::default();
    r.expect_magic(CHECKPOINT_MAGIC)?;
    r.expect_version(CHECKPOINT_VERSION)?;
    s.header = r.consumed();

    let mark = r.consumed();
    let config: RunConfig = serde_json::from_slice(&r.blob("config")?)?;
    s.config = r.consumed() - mark;

    let mark = r.consumed();
    let mut seed = [0u8; 32];
    r.fill(&mut seed, "rng seed")?;
    let stream = r.u64("rng stream")?;
    let word_pos = r.u128("rng position")?;
    s.rng = r.consumed() - mark;

    let mark = r.consumed();
    let batches_seen = r.u64("batch cursor")?;
    s.cursor = r.consumed() - mark;

    let mark = r.consumed();
    let dim = r.u32("store dimension")? as usize;
    let n = r.u32("store class count")? as usize;
    let mut classes = Vec::with_capacity(n);
    for _ in 0..n {
        let class_id = r.u32("class id")?;
        let count = r.u64("class count")?;
        s.stat_counters += 1;
        let prototype = r.f64_vec(dim, "prototype")?;
        let sq_expectation = r.f64_vec(dim, "squared expectation")?;
        s.stat_vectors += 2;
        classes.push(ClassStatistics {
            class_id,
            prototype,
            sq_expectation,
            count,
        });
    }
    let store = StatisticsStore::from_parts(if n == 0 { None } else { Some(dim) }, classes)?;
    s.store = r.consumed() - mark;

    let mark = r.consumed();
    let head_dim = r.u32("head dimension")? as usize;
    let rows = r.u32("head rows")? as usize;
    let mut labels = Vec::with_capacity(rows);
    for _ in 0..rows {
        labels.push(r.u32("head label")?);
    }
    let weights = r.f64_vec(rows * head_dim, "head weights")?;
    let head = LinearHead::from_parts(head_dim, labels, weights)?;
    s.head = r.consumed() - mark;

    let mark = r.consumed();
    let report: RunReport = serde_json::from_slice(&r.blob("report")?)?;
    s.report = r.consumed() - mark;
    r.expect_eof()?;

    Ok((
        Checkpoint {
            config,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            batches_seen,
            store,
            head,
            report,
        },
        s,
    ))
}

fn write_blob<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)
}

fn encode_store<W: Write>(w: &mut W, store: &StatisticsStore, fallback_dim: usize) -> io::Result<()> {
    let dim = store.dim().unwrap_or(fallback_dim);
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for c in store.iter() {
        w.write_all(&c.class_id.to_le_bytes())?;
        w.write_all(&c.count.to_le_bytes())?;
        for v in c.prototype.iter().chain(&c.sq_expectation) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Serializes only the statistics section.
pub fn encode_store_bytes(store: &StatisticsStore) -> Vec<u8> {
    let mut buf = Vec::new();
    encode_store(&mut buf, store, 0).expect("writing to a Vec cannot fail");
    buf
}

fn encode_head<W: Write>(w: &mut W, head: &LinearHead) -> io::Result<()> {
    w.write_all(&(head.dim() as u32).to_le_bytes())?;
    w.write_all(&(head.num_classes() as u32).to_le_bytes())?;
    for l in head.labels() {
        w.write_all(&l.to_le_bytes())?;
    }
    for v in head.weights() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct ByteReader<R> {
    inner: R,
    consumed: usize,
}

impl<R: Read> ByteReader<R> {
    fn new(inner: R) -> Self {
        Self { inner, consumed: 0 }
    }

    fn consumed(&self) -> usize {
        self.consumed
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.fill_with(buf, || format!("unexpected end of file reading {what}"))
    }

    fn fill_with(&mut self, buf: &mut [u8], msg: impl FnOnce() -> String) -> Result<()> {
        match self.inner.read_exact(buf) {
            Ok(()) => {
                self.consumed += buf.len();
                Ok(())
            }
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(Error::Truncated(msg())),
            Err(e) => Err(e.into()),
        }
    }

    fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let mut buf = [0u8; 4];
        self.fill(&mut buf, "magic")?;
        if &buf != magic {
            return Err(Error::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
                found: String::from_utf8_lossy(&buf).into_owned(),
            });
        }
        Ok(())
    }

    fn expect_version(&mut self, version: u32) -> Result<()> {
        let found = self.u32("version")?;
        if found != version {
            return Err(Error::UnsupportedVersion {
                expected: version,
                found,
            });
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u32_or_truncated(&mut self, msg: impl FnOnce() -> String) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill_with(&mut b, msg)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f32_or_truncated(&mut self, msg: impl FnOnce() -> String) -> Result<f32> {
        let mut b = [0u8; 4];
        self.fill_with(&mut b, msg)?;
        Ok(f32::from_le_bytes(b))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn u128(&mut self, what: &str) -> Result<u128> {
        let mut b = [0u8; 16];
        self.fill(&mut b, what)?;
        Ok(u128::from_le_bytes(b))
    }

    fn f64_vec(&mut self, len: usize, what: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(len);
        let mut b = [0u8; 8];
        for _ in 0..len {
            self.fill(&mut b, what)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }

    fn blob(&mut self, what: &str) -> Result<Vec<u8>> {
        let len = self.u64(what)? as usize;
        let mut buf = vec![0u8; len];
        self.fill(&mut buf, what)?;
        Ok(buf)
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inner.read(&mut b)? {
            0 => Ok(()),
            _ => Err(Error::Malformed("trailing bytes after final section".into())),
        }
    }
}
