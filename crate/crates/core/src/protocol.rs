//! Stream construction and the training loops.
//!
//! Within each batch the learner runs, in order:
//!
//! 1. add classifier rows for labels never seen before;
//! 2. fold every sample into the class statistics, in stream order;
//! 3. draw an old class per real sample and generate pseudo-features from the
//!    already-updated statistics;
//! 4. take exactly one SGD step on real plus pseudo features.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::classifier::{Example, LinearHead, OptimizerConfig, StepOutcome};
use crate::dataio::{Checkpoint, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::ican::{self, generator_registry, IcanConfig, PseudoGenerator};
use crate::isay::{kernel_registry, DistanceKernel, KernelName};
use crate::metrics::{self, CheckpointAccuracy, PassLoss, RunReport};
use crate::rng::{substream, RngState, Stream};
use crate::stats::StatisticsStore;
use crate::Label;

pub const DEFAULT_BATCH_SIZE: usize = 50;
pub const DEFAULT_EVAL_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleKind {
    /// Consecutive sessions of `step` classes each, ascending by label.
    Step { step: usize },
    /// Samples ordered by a position drawn around their class center; the
    /// evaluation checkpoint fires every `eval_every` batches.
    Gaussian {
        sigma: f64,
        #[serde(default = "default_eval_every")]
        eval_every: usize,
    },
}

fn default_eval_every() -> usize {
    DEFAULT_EVAL_EVERY
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::Step { step: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub ican_enabled: bool,
    pub ican: IcanConfig,
    pub isay_enabled: bool,
    pub distance_kernel: KernelName,
    pub schedule: ScheduleKind,
    pub low_data_fraction: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Online,
            epochs: 1,
            batch_size: DEFAULT_BATCH_SIZE,
            optimizer: OptimizerConfig::default(),
            ican_enabled: true,
            ican: IcanConfig::default(),
            isay_enabled: true,
            distance_kernel: KernelName::default(),
            schedule: ScheduleKind::default(),
            low_data_fraction: 1.0,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Offline defaults: smaller learning rate, 40 passes per session.
    pub fn offline() -> Self {
        Self {
            mode: Mode::Offline,
            epochs: 40,
            optimizer: OptimizerConfig {
                learning_rate: 1e-3,
                ..OptimizerConfig::default()
            },
            ..Self::default()
        }
    }

    /// Checks ranges and returns the effective configuration (online mode
    /// always runs a single epoch).
    pub fn validated(&self) -> Result<Self> {
        let mut cfg = self.clone();
        if cfg.mode == Mode::Online {
            cfg.epochs = 1;
        }
        if cfg.epochs == 0 {
            return Err(Error::invalid_argument("epochs must be positive"));
        }
        if cfg.batch_size == 0 {
            return Err(Error::invalid_argument("batch_size must be positive"));
        }
        if !(cfg.low_data_fraction > 0.0 && cfg.low_data_fraction <= 1.0) {
            return Err(Error::invalid_argument(
                "low_data_fraction must lie in (0, 1]",
            ));
        }
        match cfg.schedule {
            ScheduleKind::Step { step } if step == 0 => {
                return Err(Error::invalid_argument("step must be positive"))
            }
            ScheduleKind::Gaussian { sigma, eval_every } => {
                if !(sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::invalid_argument("sigma must be positive"));
                }
                if eval_every == 0 {
                    return Err(Error::invalid_argument("eval_every must be positive"));
                }
            }
            _ => {}
        }
        cfg.optimizer.validate()?;
        cfg.ican.validate()?;
        kernel_registry().create(&cfg.distance_kernel.0, &())?;
        Ok(cfg)
    }
}

/// Ordered, pairwise-disjoint batches of `(sample index, label)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSchedule {
    pub batches: Vec<Vec<(usize, Label)>>,
    pub batch_size: usize,
    pub seed: u64,
    /// Exclusive batch indices at which an evaluation checkpoint fires, i.e.
    /// checkpoint `k` is taken after batch `checkpoints[k] - 1`. Always ends
    /// with `batches.len()`.
    pub checkpoints: Vec<usize>,
}

impl StreamSchedule {
    /// Batch ranges between consecutive checkpoints.
    pub fn sessions(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.checkpoints
            .iter()
            .map(|&end| {
                let r = start..end;
                start = end;
                r
            })
            .collect()
    }

    pub fn sample_count(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

fn chunk(samples: &[(usize, Label)], batch_size: usize) -> impl Iterator<Item = Vec<(usize, Label)>> + '_ {
    samples.chunks(batch_size).map(<[_]>::to_vec)
}

pub fn make_step_schedule(
    dataset: &Dataset,
    step: usize,
    batch_size: usize,
    seed: u64,
) -> Result<StreamSchedule> {
    if dataset.is_empty() {
        return Err(Error::invalid_argument("empty dataset"));
    }
    if step == 0 || batch_size == 0 {
        return Err(Error::invalid_argument("step and batch_size must be positive"));
    }
    let by_class = dataset.indices_by_class();
    if step > by_class.len() {
        return Err(Error::invalid_argument(format!(
            "step {step} exceeds the {} classes present",
            by_class.len()
        )));
    }
    let mut rng = substream(seed, Stream::Schedule);
    let classes: Vec<_> = by_class.into_iter().collect();
    let mut batches = Vec::new();
    let mut checkpoints = Vec::new();
    for session in classes.chunks(step) {
        let mut samples: Vec<(usize, Label)> = session
            .iter()
            .flat_map(|(label, idx)| idx.iter().map(move |&i| (i, *label)))
            .collect();
        samples.shuffle(&mut rng);
        batches.extend(chunk(&samples, batch_size));
        checkpoints.push(batches.len());
    }
    Ok(StreamSchedule {
        batches,
        batch_size,
        seed,
        checkpoints,
    })
}

pub fn make_gaussian_schedule(
    dataset: &Dataset,
    sigma: f64,
    batch_size: usize,
    eval_every: usize,
    seed: u64,
) -> Result<StreamSchedule> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid_argument("sigma must be positive"));
    }
    if dataset.is_empty() {
        return Err(Error::invalid_argument("empty dataset"));
    }
    if batch_size == 0 || eval_every == 0 {
        return Err(Error::invalid_argument(
            "batch_size and eval_every must be positive",
        ));
    }
    let classes = dataset.classes();
    let k = classes.len();
    let center = |label: Label| -> f64 {
        let rank = classes.binary_search(&label).expect("label from dataset");
        if k > 1 {
            rank as f64 / (k - 1) as f64
        } else {
            0.5
        }
    };
    let mut rng = substream(seed, Stream::Schedule);
    let mut positioned: Vec<(f64, usize, Label)> = dataset
        .labels()
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let normal = Normal::new(center(label), sigma).expect("sigma validated");
            (normal.sample(&mut rng), i, label)
        })
        .collect();
    positioned.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let samples: Vec<(usize, Label)> = positioned.into_iter().map(|(_, i, l)| (i, l)).collect();
    let batches: Vec<_> = chunk(&samples, batch_size).collect();
    let n = batches.len();
    let mut checkpoints: Vec<usize> = (1..=n).filter(|b| b % eval_every == 0).collect();
    if checkpoints.last() != Some(&n) {
        checkpoints.push(n);
    }
    Ok(StreamSchedule {
        batches,
        batch_size,
        seed,
        checkpoints,
    })
}

pub fn make_schedule(dataset: &Dataset, config: &RunConfig) -> Result<StreamSchedule> {
    match config.schedule {
        ScheduleKind::Step { step } => {
            make_step_schedule(dataset, step, config.batch_size, config.seed)
        }
        ScheduleKind::Gaussian { sigma, eval_every } => {
            make_gaussian_schedule(dataset, sigma, config.batch_size, eval_every, config.seed)
        }
    }
}

/// Keeps `ceil(fraction * count)` samples of every class, chosen uniformly.
/// Original sample order is preserved.
pub fn subsample_low_data(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid_argument(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    if fraction == 1.0 {
        return Ok(dataset.clone());
    }
    let mut rng = substream(seed, Stream::Subsample);
    let mut keep = Vec::new();
    for (_, mut idx) in dataset.indices_by_class() {
        let n = (fraction * idx.len() as f64).ceil() as usize;
        idx.shuffle(&mut rng);
        keep.extend_from_slice(&idx[..n]);
    }
    keep.sort_unstable();
    Ok(dataset.select(&keep))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOutcome {
    pub new_classes: usize,
    pub pseudo_generated: usize,
    pub step: StepOutcome,
}

/// The whole persistent state of a run: statistics, head, and the random
/// stream used for old-class draws.
pub struct Learner {
    config: RunConfig,
    store: StatisticsStore,
    head: LinearHead,
    generator: Box<dyn PseudoGenerator>,
    kernel: Box<dyn DistanceKernel>,
    rng: ChaCha8Rng,
    batches_seen: u64,
}

impl Learner {
    pub fn new(config: &RunConfig, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid_argument("feature dimension must be positive"));
        }
        let config = config.validated()?;
        let generator = generator_registry().create(config.ican.generator.as_str(), &config.ican)?;
        let kernel = kernel_registry().create(&config.distance_kernel.0, &())?;
        Ok(Self {
            rng: substream(config.seed, Stream::Pseudo),
            store: StatisticsStore::with_dim(dim),
            head: LinearHead::new(dim),
            generator,
            kernel,
            batches_seen: 0,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn store(&self) -> &StatisticsStore {
        &self.store
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    pub fn kernel(&self) -> Option<&dyn DistanceKernel> {
        self.config.isay_enabled.then_some(self.kernel.as_ref())
    }

    /// Runs one stream batch. `observe` is false only on repeated offline
    /// passes, whose samples were already counted.
    pub fn train_batch(&mut self, batch: &[Example<'_>], observe: bool) -> Result<BatchOutcome> {
        for (f, _) in batch {
            check_dim(self.dim(), f.len())?;
        }

        let mut fresh: Vec<Label> = batch
            .iter()
            .map(|&(_, l)| l)
            .filter(|&l| self.head.index_of(l).is_none())
            .collect();
        fresh.sort_unstable();
        fresh.dedup();
        if !observe {
            if let Some(l) = fresh.first() {
                return Err(Error::invalid_state(format!(
                    "class {l} reached a repeated pass without being observed"
                )));
            }
        }
        self.head.expand_classes(&fresh)?;

        if observe {
            for &(f, l) in batch {
                self.store.observe(l, f)?;
            }
        }

        let mut pseudo = Vec::new();
        if self.config.ican_enabled && !batch.is_empty() {
            for k in 0..self.config.ican.pseudo_count(batch.len()) {
                let (f, y) = batch[k % batch.len()];
                let Some(target) = ican::sample_old_class(&self.store, y, &mut self.rng) else {
                    continue;
                };
                pseudo.push(self.generator.generate(&self.store, f, y, target, &mut self.rng)?);
            }
        }
        let pseudo_examples: Vec<Example<'_>> =
            pseudo.iter().map(|p| (p.vector.as_slice(), p.label)).collect();

        let step = self
            .head
            .sgd_batch_step(batch, &pseudo_examples, &self.config.optimizer)?;
        self.batches_seen += 1;
        Ok(BatchOutcome {
            new_classes: fresh.len(),
            pseudo_generated: pseudo.len(),
            step,
        })
    }

    /// Accuracy over the test samples of classes seen so far.
    pub fn evaluate(&self, test: &Dataset) -> Result<f64> {
        check_dim(self.dim(), test.dim())?;
        metrics::evaluate_checkpoint(
            &self.head,
            &self.store,
            test,
            &self.store.seen_classes(),
            self.kernel(),
        )
    }

    pub fn predict(&self, feature: &[f64]) -> Result<Label> {
        let tau = match self.kernel() {
            Some(k) => {
                let u = crate::isay::significance_matrix(&self.store)?;
                Some(crate::isay::importance_for(feature, &self.store, &u, k)?)
            }
            None => None,
        };
        Ok(self.head.predict(feature, tau.as_ref())?.0)
    }

    pub fn checkpoint(&self, report: &RunReport) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            rng: RngState::capture(&self.rng),
            batches_seen: self.batches_seen,
            store: self.store.clone(),
            head: self.head.clone(),
            report: report.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut learner = Learner::new(&ck.config, ck.head.dim())?;
        if ck.store.seen_classes() != ck.head.labels() {
            return Err(Error::Malformed(
                "checkpoint statistics and head disagree on classes".into(),
            ));
        }
        if let Some(d) = ck.store.dim() {
            check_dim(ck.head.dim(), d)?;
        }
        learner.store = ck.store.clone();
        learner.head = ck.head.clone();
        learner.rng = ck.rng.restore();
        learner.batches_seen = ck.batches_seen;
        Ok(learner)
    }

    pub fn into_parts(self) -> (LinearHead, StatisticsStore) {
        (self.head, self.store)
    }
}

pub struct RunOutcome {
    pub learner: Learner,
    pub report: RunReport,
}

impl RunOutcome {
    pub fn head(&self) -> &LinearHead {
        self.learner.head()
    }

    pub fn store(&self) -> &StatisticsStore {
        self.learner.store()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.learner.checkpoint(&self.report)
    }
}

fn batch_examples<'a>(dataset: &'a Dataset, batch: &[(usize, Label)]) -> Vec<Example<'a>> {
    batch.iter().map(|&(i, l)| (dataset.feature(i), l)).collect()
}

fn record_checkpoint(
    learner: &Learner,
    test: &Dataset,
    report: &mut RunReport,
    id: usize,
) -> Result<()> {
    let accuracy = learner.evaluate(test)?;
    report.push_checkpoint(CheckpointAccuracy {
        checkpoint: id,
        seen_classes: learner.store().len(),
        accuracy,
    });
    Ok(())
}

/// Online training: one pass, one SGD step per batch, checkpoints at session
/// boundaries.
pub fn train_online(
    schedule: &StreamSchedule,
    dataset: &Dataset,
    test: &Dataset,
    config: &RunConfig,
) -> Result<RunOutcome> {
    let config = config.validated()?;
    if config.mode != Mode::Online {
        return Err(Error::invalid_argument("train_online requires online mode"));
    }
    let mut learner = Learner::new(&config, dataset.dim())?;
    let mut report = RunReport::empty(config.clone());
    for (session, range) in schedule.sessions().into_iter().enumerate() {
        let mut loss = LossMeter::default();
        for batch in &schedule.batches[range] {
            let out = learner.train_batch(&batch_examples(dataset, batch), true)?;
            loss.add(out.step);
        }
        if let Some(mean_loss) = loss.mean() {
            report.training_loss.push(PassLoss {
                session,
                epoch: 0,
                mean_loss,
            });
        }
        record_checkpoint(&learner, test, &mut report, session)?;
    }
    Ok(RunOutcome { learner, report })
}

/// Offline training: every session's batches are replayed `epochs` times
/// before moving on. Statistics are updated on the first pass only.
pub fn train_offline(
    schedule: &StreamSchedule,
    dataset: &Dataset,
    test: &Dataset,
    config: &RunConfig,
) -> Result<RunOutcome> {
    let config = config.validated()?;
    if config.mode != Mode::Offline {
        return Err(Error::invalid_argument("train_offline requires offline mode"));
    }
    let mut learner = Learner::new(&config, dataset.dim())?;
    let mut report = RunReport::empty(config.clone());
    for (session, range) in schedule.sessions().into_iter().enumerate() {
        let batches: Vec<Vec<Example<'_>>> = schedule.batches[range]
            .iter()
            .map(|b| batch_examples(dataset, b))
            .collect();
        for epoch in 0..config.epochs {
            let mut loss = LossMeter::default();
            for batch in &batches {
                let out = learner.train_batch(batch, epoch == 0)?;
                loss.add(out.step);
            }
            if let Some(mean_loss) = loss.mean() {
                report.training_loss.push(PassLoss {
                    session,
                    epoch,
                    mean_loss,
                });
            }
        }
        record_checkpoint(&learner, test, &mut report, session)?;
    }
    Ok(RunOutcome { learner, report })
}

/// Subsamples, builds the schedule, and dispatches on the configured mode.
pub fn run(config: &RunConfig, train: &Dataset, test: &Dataset) -> Result<RunOutcome> {
    let config = config.validated()?;
    check_dim(train.dim(), test.dim())?;
    let train = subsample_low_data(train, config.low_data_fraction, config.seed)?;
    let schedule = make_schedule(&train, &config)?;
    match config.mode {
        Mode::Online => train_online(&schedule, &train, test, &config),
        Mode::Offline => train_offline(&schedule, &train, test, &config),
    }
}

#[derive(Default)]
struct LossMeter {
    sum: f64,
    n: usize,
}

impl LossMeter {
    fn add(&mut self, step: StepOutcome) {
        if let StepOutcome::Updated { real_loss } = step {
            self.sum += real_loss;
            self.n += 1;
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}
