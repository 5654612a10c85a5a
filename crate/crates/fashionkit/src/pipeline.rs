//! Config-driven pipeline assembly.
//!
//! One config tree resolves to loaded datasets, a model with an
//! initialized parameter vector, a task the runner can drive, and an
//! epoch plan. Config keys are validated before any file is touched, so
//! typos fail fast with a config error rather than mid-run. The
//! `schedule.workflow` list is cyclic: it repeats until
//! `schedule.max_epochs` train epochs are planned, with train entries in
//! the last pass shrinking to fit while val entries still run whole.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{expect_keys, Config};
use crate::datasets::{
    AttributeData, CompatData, Image, Landmark, LandmarkData, LandmarkFile, RetrievalData, Role,
};
use crate::error::{Error, Result};
use crate::eval;
use crate::json::Value;
use crate::metrics::MetricReport;
use crate::models::{
    argmin_tie_low, backbone_registry, head_registry, FashionModel, HeadDims, HeadSpec,
    LandmarkTarget, Pooling,
};
use crate::registry::Registry;
use crate::runner::{
    CheckpointHook, EvalHook, Event, Hook, LrStepHook, Mode, Runner, RunnerState, Task,
};
use crate::util::mix_seed;

/// Trainable task families. Instance annotations are evaluation-only
/// (there is no detector to train), so they have no entry here.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Attribute,
    Landmark,
    Retrieval,
    Compat,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Attribute => "attribute",
            TaskKind::Landmark => "landmark",
            TaskKind::Retrieval => "retrieval",
            TaskKind::Compat => "compat",
        }
    }

    pub fn parse(name: &str) -> Result<TaskKind> {
        match name {
            "attribute" => Ok(TaskKind::Attribute),
            "landmark" => Ok(TaskKind::Landmark),
            "retrieval" => Ok(TaskKind::Retrieval),
            "compat" => Ok(TaskKind::Compat),
            "instances" => Err(Error::Config(
                "task \"instances\" is evaluation-only; evaluate detection predictions directly"
                    .into(),
            )),
            other => Err(Error::Config(format!(
                "unknown task \"{other}\" (known: attribute, landmark, retrieval, compat)"
            ))),
        }
    }
}

// Epoch sampling draws from streams disjoint from parameter
// initialization, which seeds per tensor with small indices.
const SHUFFLE_STREAM: u64 = 0x53485546_464C4531;
const TRIPLET_STREAM: u64 = 0x54524950_4C455431;
const PAIR_STREAM: u64 = 0x50414952_53414D31;

fn stream_rng(seed: u64, stream: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, stream), epoch as u64))
}

fn epoch_order(len: usize, shuffle: bool, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        order.shuffle(&mut stream_rng(seed, SHUFFLE_STREAM, epoch));
    }
    order
}

fn chunked(order: Vec<usize>, batch_size: usize) -> Vec<Vec<usize>> {
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Parses `schedule.workflow`: a list of `[mode, epochs]` pairs.
fn parse_workflow(list: &[Value]) -> Result<Vec<(Mode, usize)>> {
    if list.is_empty() {
        return Err(Error::Config("schedule.workflow must not be empty".into()));
    }
    let mut flow = Vec::with_capacity(list.len());
    for entry in list {
        let pair = entry
            .as_list()
            .filter(|p| p.len() == 2)
            .ok_or_else(|| Error::Config("workflow entries must be [mode, epochs] pairs".into()))?;
        let mode = match pair[0].as_str() {
            Some("train") => Mode::Train,
            Some("val") => Mode::Val,
            _ => {
                return Err(Error::Config(
                    "workflow mode must be \"train\" or \"val\"".into(),
                ))
            }
        };
        let epochs = pair[1]
            .as_i64()
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::Config("workflow epochs must be a positive integer".into()))?;
        flow.push((mode, epochs as usize));
    }
    Ok(flow)
}

/// Expands the cyclic workflow into the literal epoch plan, starting
/// with `done` train epochs already finished. The cycle repeats until
/// `max_epochs` train epochs are planned; a train entry in the final
/// pass shrinks to fit, val entries still run whole.
pub fn expand_workflow(
    flow: &[(Mode, usize)],
    done: usize,
    max_epochs: usize,
) -> Result<Vec<(Mode, usize)>> {
    if flow.is_empty() {
        return Err(Error::Config("workflow must not be empty".into()));
    }
    if !flow.iter().any(|(mode, _)| *mode == Mode::Train) {
        return Err(Error::Config("workflow has no train phase".into()));
    }
    let mut plan = Vec::new();
    let mut done = done;
    while done < max_epochs {
        for (mode, n) in flow {
            match mode {
                Mode::Train => {
                    let take = (*n).min(max_epochs - done);
                    if take > 0 {
                        plan.push((Mode::Train, take));
                        done += take;
                    }
                }
                Mode::Val => plan.push((Mode::Val, *n)),
            }
        }
    }
    Ok(plan)
}

/// A hook entry as configured, before runner resources are bound.
#[derive(Debug, Clone, PartialEq)]
pub enum HookCfg {
    LrStep {
        milestones: Vec<usize>,
        gamma: f64,
        priority: Option<i64>,
    },
    Checkpoint {
        every_n: usize,
        priority: Option<i64>,
    },
    Eval {
        every_n: usize,
        fatal: bool,
        priority: Option<i64>,
    },
}

fn node_priority(node: &Value) -> Result<Option<i64>> {
    match node.as_map().and_then(|m| m.get("priority")) {
        None => Ok(None),
        Some(v) => v
            .as_i64()
            .map(Some)
            .ok_or_else(|| Error::Config("hook priority must be an integer".into())),
    }
}

fn node_every_n(node: &Value, what: &str) -> Result<usize> {
    match node.as_map().and_then(|m| m.get("every_n_epochs")) {
        None => Ok(1),
        Some(v) => v
            .as_i64()
            .filter(|n| *n >= 1)
            .map(|n| n as usize)
            .ok_or_else(|| Error::Config(format!("{what} every_n_epochs must be a positive integer"))),
    }
}

/// Builders for entries of the `hooks` config list.
pub fn hook_registry() -> Registry<HookCfg> {
    let mut reg = Registry::new("HOOKS");
    reg.register("lr_step", |node| {
        expect_keys(node, &["milestones", "gamma", "priority"], "lr_step hook")?;
        let map = node.as_map().expect("checked by expect_keys");
        let milestones = map
            .get("milestones")
            .and_then(|v| v.as_list())
            .ok_or_else(|| Error::Config("lr_step needs a milestones list".into()))?
            .iter()
            .map(|v| {
                v.as_i64()
                    .filter(|n| *n >= 0)
                    .map(|n| n as usize)
                    .ok_or_else(|| {
                        Error::Config("milestones must be non-negative integers".into())
                    })
            })
            .collect::<Result<Vec<usize>>>()?;
        let gamma = match map.get("gamma") {
            None => 0.1,
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::Config("gamma must be a number".into()))?,
        };
        Ok(HookCfg::LrStep {
            milestones,
            gamma,
            priority: node_priority(node)?,
        })
    })
    .expect("fresh registry");
    reg.register("checkpoint", |node| {
        expect_keys(node, &["every_n_epochs", "priority"], "checkpoint hook")?;
        Ok(HookCfg::Checkpoint {
            every_n: node_every_n(node, "checkpoint")?,
            priority: node_priority(node)?,
        })
    })
    .expect("fresh registry");
    reg.register("eval", |node| {
        expect_keys(node, &["every_n_epochs", "fatal", "priority"], "eval hook")?;
        let map = node.as_map().expect("checked by expect_keys");
        let fatal = match map.get("fatal") {
            None => false,
            Some(Value::Bool(b)) => *b,
            Some(_) => return Err(Error::Config("eval fatal must be a boolean".into())),
        };
        Ok(HookCfg::Eval {
            every_n: node_every_n(node, "eval")?,
            fatal,
            priority: node_priority(node)?,
        })
    })
    .expect("fresh registry");
    reg
}

/// Rebinds a hook's priority, leaving its behavior unchanged.
struct PriorityOverride {
    inner: Box<dyn Hook>,
    priority: i64,
}

impl Hook for PriorityOverride {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn priority(&self) -> i64 {
        self.priority
    }

    fn on_event(&mut self, event: Event, runner: &mut Runner) -> Result<()> {
        self.inner.on_event(event, runner)
    }
}

fn with_priority(hook: Box<dyn Hook>, priority: Option<i64>) -> Box<dyn Hook> {
    match priority {
        None => hook,
        Some(priority) => Box::new(PriorityOverride {
            inner: hook,
            priority,
        }),
    }
}

/// The `data` section, resolved per task kind.
#[derive(Debug, Clone)]
struct DataCfg {
    root: PathBuf,
    batch_size: usize,
    shuffle: bool,
    ann_file: Option<String>,
    landmark_file: Option<String>,
    val_ann_file: Option<String>,
    val_landmark_file: Option<String>,
    split_file: Option<String>,
}

fn parse_data_cfg(config: &Config, kind: TaskKind) -> Result<DataCfg> {
    let node = config.get("data")?;
    let allowed: &[&str] = match kind {
        TaskKind::Attribute => &[
            "root",
            "ann_file",
            "landmark_file",
            "val_ann_file",
            "val_landmark_file",
            "batch_size",
            "shuffle",
        ],
        TaskKind::Landmark => &["root", "ann_file", "val_ann_file", "batch_size", "shuffle"],
        TaskKind::Retrieval => &["root", "split_file", "batch_size"],
        TaskKind::Compat => &["root", "batch_size"],
    };
    expect_keys(node, allowed, "data")?;
    let opt_str = |path: &str| -> Result<Option<String>> {
        match config.opt(path) {
            None => Ok(None),
            Some(_) => Ok(Some(config.get_str(path)?.to_string())),
        }
    };
    let batch_size = config.usize_or("data.batch_size", 4)?;
    if batch_size == 0 {
        return Err(Error::Config("data.batch_size must be positive".into()));
    }
    let cfg = DataCfg {
        root: PathBuf::from(config.get_str("data.root")?),
        batch_size,
        shuffle: config.bool_or("data.shuffle", true)?,
        ann_file: opt_str("data.ann_file")?,
        landmark_file: opt_str("data.landmark_file")?,
        val_ann_file: opt_str("data.val_ann_file")?,
        val_landmark_file: opt_str("data.val_landmark_file")?,
        split_file: opt_str("data.split_file")?,
    };
    match kind {
        TaskKind::Attribute | TaskKind::Landmark if cfg.ann_file.is_none() => {
            Err(Error::Config("data.ann_file is required".into()))
        }
        TaskKind::Retrieval if cfg.split_file.is_none() => {
            Err(Error::Config("data.split_file is required".into()))
        }
        _ if cfg.val_landmark_file.is_some() && cfg.val_ann_file.is_none() => Err(Error::Config(
            "data.val_landmark_file without data.val_ann_file".into(),
        )),
        _ => Ok(cfg),
    }
}

struct Schedule {
    lr: f64,
    momentum: f64,
    max_epochs: usize,
    flow: Vec<(Mode, usize)>,
}

fn parse_schedule(config: &Config) -> Result<Schedule> {
    let node = config.get("schedule")?;
    expect_keys(node, &["lr", "momentum", "max_epochs", "workflow"], "schedule")?;
    let max_epochs = config.get_usize("schedule.max_epochs")?;
    if max_epochs == 0 {
        return Err(Error::Config("schedule.max_epochs must be positive".into()));
    }
    let flow = match config.opt("schedule.workflow") {
        None => vec![(Mode::Train, 1)],
        Some(_) => parse_workflow(config.get_list("schedule.workflow")?)?,
    };
    Ok(Schedule {
        lr: config.get_f64("schedule.lr")?,
        momentum: config.f64_or("schedule.momentum", 0.9)?,
        max_epochs,
        flow,
    })
}

fn parse_margin(config: &Config) -> Result<f64> {
    let margin = match config.opt("loss") {
        None => 0.3,
        Some(node) => {
            expect_keys(node, &["margin"], "loss")?;
            config.f64_or("loss.margin", 0.3)?
        }
    };
    if !(margin.is_finite() && margin > 0.0) {
        return Err(Error::Config(format!("loss.margin {margin} must be positive")));
    }
    Ok(margin)
}

fn parse_hooks(config: &Config) -> Result<Vec<HookCfg>> {
    match config.opt("hooks") {
        None => Ok(Vec::new()),
        Some(_) => {
            let reg = hook_registry();
            config
                .get_list("hooks")?
                .iter()
                .map(|node| reg.build(node))
                .collect()
        }
    }
}

fn head_spec_name(head: &HeadSpec) -> &'static str {
    match head {
        HeadSpec::Attribute { .. } => "attribute",
        HeadSpec::Landmark => "landmark",
        HeadSpec::Embed { .. } => "embed",
        HeadSpec::Compat { .. } => "compat",
    }
}

fn check_head_matches(kind: TaskKind, head: &HeadSpec) -> Result<()> {
    let ok = matches!(
        (kind, head),
        (TaskKind::Attribute, HeadSpec::Attribute { .. })
            | (TaskKind::Landmark, HeadSpec::Landmark)
            | (TaskKind::Retrieval, HeadSpec::Embed { .. })
            | (TaskKind::Compat, HeadSpec::Compat { .. })
    );
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "task \"{}\" cannot use a \"{}\" head",
            kind.as_str(),
            head_spec_name(head)
        )))
    }
}

fn landmarks_of(data: &AttributeData, i: usize) -> Option<&[Landmark]> {
    data.landmarks.as_ref().map(|l| l.per_image[i].as_slice())
}

fn targets_of(data: &LandmarkData, i: usize) -> Vec<LandmarkTarget> {
    let (w, h) = (data.width as f64, data.height as f64);
    data.records[i]
        .landmarks
        .iter()
        .map(|lm| LandmarkTarget {
            x: lm.x / w,
            y: lm.y / h,
            visible: lm.is_visible(),
        })
        .collect()
}

fn attribute_scores(
    model: &FashionModel,
    params: &[f64],
    data: &AttributeData,
) -> Result<Vec<Vec<f64>>> {
    (0..data.records.len())
        .map(|i| model.attribute_logits(params, &data.images[i], landmarks_of(data, i)))
        .collect()
}

/// Landmark predictions in pixels, one `(x, y)` row per record.
fn landmark_points_px(
    model: &FashionModel,
    params: &[f64],
    data: &LandmarkData,
) -> Result<Vec<Vec<(f64, f64)>>> {
    let (w, h) = (data.width as f64, data.height as f64);
    data.images
        .iter()
        .map(|img| {
            Ok(model
                .landmark_predict(params, img)?
                .into_iter()
                .map(|(x, y, _)| (x * w, y * h))
                .collect())
        })
        .collect()
}

/// Embeddings aligned with the split records. Train rows get an empty
/// placeholder when `skip_train` is set; only query and gallery rows
/// enter retrieval metrics.
fn retrieval_embeddings(
    model: &FashionModel,
    params: &[f64],
    data: &RetrievalData,
    skip_train: bool,
) -> Result<Vec<Vec<f64>>> {
    data.records
        .iter()
        .zip(&data.images)
        .map(|(record, image)| {
            if skip_train && record.role == Role::Train {
                Ok(Vec::new())
            } else {
                model.embedding(params, image)
            }
        })
        .collect()
}

/// FITB choices and outfit scores for every question in `data`. Items
/// are embedded once; both question families score in pair space.
fn compat_answers(
    model: &FashionModel,
    params: &[f64],
    data: &CompatData,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let embs: Vec<Vec<f64>> = data
        .items
        .iter()
        .map(|item| model.embedding(params, &item.image))
        .collect::<Result<_>>()?;
    let head = model.compat_head()?;
    let hp = model.head_params(params);
    let mut choices = Vec::with_capacity(data.fitb.len());
    for q in &data.fitb {
        let mut context = Vec::with_capacity(q.context.len());
        for id in &q.context {
            let i = data.index_of(id)?;
            context.push((embs[i].as_slice(), data.items[i].item_type.as_str()));
        }
        let mut scores = Vec::with_capacity(q.candidates.len());
        for id in &q.candidates {
            let i = data.index_of(id)?;
            scores.push(head.fitb_score(
                hp,
                (embs[i].as_slice(), data.items[i].item_type.as_str()),
                &context,
            )?);
        }
        choices.push(argmin_tie_low(&scores));
    }
    let mut outfit_scores = Vec::with_capacity(data.compat.len());
    for q in &data.compat {
        let mut items = Vec::with_capacity(q.items.len());
        for id in &q.items {
            let i = data.index_of(id)?;
            items.push((embs[i].as_slice(), data.items[i].item_type.as_str()));
        }
        outfit_scores.push(head.outfit_score(hp, &items)?);
    }
    Ok((choices, outfit_scores))
}

struct AttributeTask {
    model: FashionModel,
    train: AttributeData,
    val: Option<AttributeData>,
    batch_size: usize,
    shuffle: bool,
}

impl Task for AttributeTask {
    fn train_len(&self) -> usize {
        self.train.records.len()
    }

    fn train_batches(&mut self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        chunked(
            epoch_order(self.train.records.len(), self.shuffle, seed, epoch),
            self.batch_size,
        )
    }

    fn train_step(&mut self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> Result<f64> {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in batch {
            loss += self.model.attribute_loss(
                params,
                &self.train.images[i],
                landmarks_of(&self.train, i),
                &self.train.records[i].labels,
                scale,
                Some(grad),
            )?;
        }
        Ok(loss)
    }

    fn val_batches(&self) -> Vec<Vec<usize>> {
        match &self.val {
            None => Vec::new(),
            Some(val) => chunked((0..val.records.len()).collect(), self.batch_size),
        }
    }

    fn val_step(&self, params: &[f64], batch: &[usize]) -> Result<f64> {
        let val = self.val.as_ref().expect("val batches imply a val split");
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in batch {
            loss += self.model.attribute_loss(
                params,
                &val.images[i],
                landmarks_of(val, i),
                &val.records[i].labels,
                scale,
                None,
            )?;
        }
        Ok(loss)
    }

    fn evaluate(&self, params: &[f64]) -> Result<MetricReport> {
        let val = self
            .val
            .as_ref()
            .ok_or_else(|| Error::Config("attribute evaluation needs a validation split".into()))?;
        let scores = attribute_scores(&self.model, params, val)?;
        let gts: Vec<Vec<bool>> = val.records.iter().map(|r| r.labels.clone()).collect();
        eval::attribute_report(&scores, &gts)
    }
}

struct LandmarkTask {
    model: FashionModel,
    train: LandmarkData,
    val: Option<LandmarkData>,
    batch_size: usize,
    shuffle: bool,
}

impl Task for LandmarkTask {
    fn train_len(&self) -> usize {
        self.train.records.len()
    }

    fn train_batches(&mut self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        chunked(
            epoch_order(self.train.records.len(), self.shuffle, seed, epoch),
            self.batch_size,
        )
    }

    fn train_step(&mut self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> Result<f64> {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in batch {
            loss += self.model.landmark_loss(
                params,
                &self.train.images[i],
                &targets_of(&self.train, i),
                scale,
                Some(grad),
            )?;
        }
        Ok(loss)
    }

    fn val_batches(&self) -> Vec<Vec<usize>> {
        match &self.val {
            None => Vec::new(),
            Some(val) => chunked((0..val.records.len()).collect(), self.batch_size),
        }
    }

    fn val_step(&self, params: &[f64], batch: &[usize]) -> Result<f64> {
        let val = self.val.as_ref().expect("val batches imply a val split");
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in batch {
            loss += self.model.landmark_loss(
                params,
                &val.images[i],
                &targets_of(val, i),
                scale,
                None,
            )?;
        }
        Ok(loss)
    }

    fn evaluate(&self, params: &[f64]) -> Result<MetricReport> {
        let val = self
            .val
            .as_ref()
            .ok_or_else(|| Error::Config("landmark evaluation needs a validation split".into()))?;
        let preds = landmark_points_px(&self.model, params, val)?;
        let file = LandmarkFile {
            num_landmarks: val.num_landmarks,
            width: val.width,
            height: val.height,
            records: val.records.clone(),
        };
        eval::landmark_report(&preds, &file)
    }
}

struct RetrievalTask {
    model: FashionModel,
    data: RetrievalData,
    batch_size: usize,
    margin: f64,
    /// `(anchor, positive, negative)` rows sampled for the current epoch.
    plan: Vec<[usize; 3]>,
}

impl RetrievalTask {
    /// One triplet per trainable item: anchor and positive are distinct
    /// train images of the item, the negative comes from another item.
    fn sample_plan(&mut self, seed: u64, epoch: usize) {
        let mut rng = stream_rng(seed, TRIPLET_STREAM, epoch);
        let items = self.data.train_items();
        let train_all = self.data.indices_with_role(Role::Train);
        self.plan.clear();
        for (item_id, members) in &items {
            let a = members[rng.gen_range(0..members.len())];
            let positives: Vec<usize> = members.iter().copied().filter(|&m| m != a).collect();
            let p = positives[rng.gen_range(0..positives.len())];
            let negatives: Vec<usize> = train_all
                .iter()
                .copied()
                .filter(|&i| self.data.records[i].item_id != *item_id)
                .collect();
            let n = negatives[rng.gen_range(0..negatives.len())];
            self.plan.push([a, p, n]);
        }
        self.plan.shuffle(&mut rng);
    }
}

impl Task for RetrievalTask {
    fn train_len(&self) -> usize {
        self.data.train_items().len()
    }

    fn train_batches(&mut self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        self.sample_plan(seed, epoch);
        chunked((0..self.plan.len()).collect(), self.batch_size)
    }

    fn train_step(&mut self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> Result<f64> {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &row in batch {
            let [a, p, n] = self.plan[row];
            loss += self.model.triplet_loss(
                params,
                &self.data.images[a],
                &self.data.images[p],
                &self.data.images[n],
                self.margin,
                scale,
                Some(grad),
            )?;
        }
        Ok(loss)
    }

    fn has_val(&self) -> bool {
        !self.data.indices_with_role(Role::Query).is_empty()
            && !self.data.indices_with_role(Role::Gallery).is_empty()
    }

    fn evaluate(&self, params: &[f64]) -> Result<MetricReport> {
        let embeddings = retrieval_embeddings(&self.model, params, &self.data, true)?;
        eval::retrieval_report(&embeddings, &self.data.records)
    }
}

struct CompatTask {
    model: FashionModel,
    data: CompatData,
    batch_size: usize,
    margin: f64,
    /// `(left, right, compatible)` pairs sampled for the current epoch.
    plan: Vec<(usize, usize, bool)>,
}

/// Positive pairs drawn per outfit per epoch; each gets one negative.
const PAIRS_PER_OUTFIT: usize = 3;

impl CompatTask {
    /// Within-outfit pairs as positives, each matched by one pair that
    /// crosses into a different outfit as a negative.
    fn sample_plan(&mut self, seed: u64, epoch: usize) {
        let mut rng = stream_rng(seed, PAIR_STREAM, epoch);
        self.plan.clear();
        for (oi, (_, members)) in self.data.outfits.iter().enumerate() {
            if members.len() < 2 {
                continue;
            }
            let mut pairs = Vec::new();
            for (k, &a) in members.iter().enumerate() {
                for &b in &members[k + 1..] {
                    pairs.push((a, b));
                }
            }
            pairs.shuffle(&mut rng);
            pairs.truncate(PAIRS_PER_OUTFIT);
            let donors: Vec<usize> = (0..self.data.outfits.len())
                .filter(|&oj| oj != oi && !self.data.outfits[oj].1.is_empty())
                .collect();
            for (a, b) in pairs {
                self.plan.push((a, b, true));
                let a2 = members[rng.gen_range(0..members.len())];
                let far = &self.data.outfits[donors[rng.gen_range(0..donors.len())]].1;
                let b2 = far[rng.gen_range(0..far.len())];
                self.plan.push((a2, b2, false));
            }
        }
        self.plan.shuffle(&mut rng);
    }
}

impl Task for CompatTask {
    fn train_len(&self) -> usize {
        self.data.outfits.len()
    }

    fn train_batches(&mut self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        self.sample_plan(seed, epoch);
        chunked((0..self.plan.len()).collect(), self.batch_size)
    }

    fn train_step(&mut self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> Result<f64> {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &row in batch {
            let (a, b, compatible) = self.plan[row];
            let (a, b) = (&self.data.items[a], &self.data.items[b]);
            loss += self.model.compat_pair_loss(
                params,
                (&a.image, a.item_type.as_str()),
                (&b.image, b.item_type.as_str()),
                compatible,
                self.margin,
                scale,
                Some(grad),
            )?;
        }
        Ok(loss)
    }

    fn has_val(&self) -> bool {
        !(self.data.fitb.is_empty() && self.data.compat.is_empty())
    }

    fn evaluate(&self, params: &[f64]) -> Result<MetricReport> {
        let (choices, scores) = compat_answers(&self.model, params, &self.data)?;
        eval::compat_report(&choices, &self.data.fitb, &scores, &self.data.compat)
    }
}

/// Loaded datasets, kept beside the runner for prediction export and
/// demos.
pub enum Bundle {
    Attribute {
        train: AttributeData,
        val: Option<AttributeData>,
    },
    Landmark {
        train: LandmarkData,
        val: Option<LandmarkData>,
    },
    Retrieval {
        data: RetrievalData,
    },
    Compat {
        data: CompatData,
    },
}

fn load_bundle(kind: TaskKind, cfg: &DataCfg) -> Result<(Bundle, HeadDims)> {
    match kind {
        TaskKind::Attribute => {
            let ann = cfg.ann_file.as_deref().expect("required key");
            let train = AttributeData::load(&cfg.root, ann, cfg.landmark_file.as_deref())?;
            let val = match &cfg.val_ann_file {
                None => None,
                Some(f) => Some(AttributeData::load(
                    &cfg.root,
                    f,
                    cfg.val_landmark_file.as_deref(),
                )?),
            };
            if let Some(v) = &val {
                if v.num_attrs() != train.num_attrs() {
                    return Err(Error::Validation(format!(
                        "validation split has {} attributes, train has {}",
                        v.num_attrs(),
                        train.num_attrs()
                    )));
                }
                let (tn, vn) = (
                    train.landmarks.as_ref().map(|l| l.num),
                    v.landmarks.as_ref().map(|l| l.num),
                );
                if let (Some(tn), Some(vn)) = (tn, vn) {
                    if tn != vn {
                        return Err(Error::Validation(format!(
                            "validation split has {vn} landmarks per image, train has {tn}"
                        )));
                    }
                }
            }
            let dims = HeadDims {
                num_attrs: train.num_attrs(),
                num_landmarks: train.landmarks.as_ref().map(|l| l.num).unwrap_or(0),
                item_types: Vec::new(),
            };
            Ok((Bundle::Attribute { train, val }, dims))
        }
        TaskKind::Landmark => {
            let ann = cfg.ann_file.as_deref().expect("required key");
            let train = LandmarkData::load(&cfg.root, ann)?;
            let val = match &cfg.val_ann_file {
                None => None,
                Some(f) => Some(LandmarkData::load(&cfg.root, f)?),
            };
            if let Some(v) = &val {
                if v.num_landmarks != train.num_landmarks {
                    return Err(Error::Validation(format!(
                        "validation split has {} landmarks per image, train has {}",
                        v.num_landmarks, train.num_landmarks
                    )));
                }
            }
            let dims = HeadDims {
                num_attrs: 0,
                num_landmarks: train.num_landmarks,
                item_types: Vec::new(),
            };
            Ok((Bundle::Landmark { train, val }, dims))
        }
        TaskKind::Retrieval => {
            let split = cfg.split_file.as_deref().expect("required key");
            let data = RetrievalData::load(&cfg.root, split)?;
            Ok((Bundle::Retrieval { data }, HeadDims::default()))
        }
        TaskKind::Compat => {
            let data = CompatData::load(&cfg.root)?;
            let item_types: BTreeSet<String> =
                data.items.iter().map(|it| it.item_type.clone()).collect();
            let dims = HeadDims {
                num_attrs: 0,
                num_landmarks: 0,
                item_types: item_types.into_iter().collect(),
            };
            Ok((Bundle::Compat { data }, dims))
        }
    }
}

fn check_one_image(img: &Image, index: usize, split: &str, model: &FashionModel) -> Result<()> {
    let want = model.backbone.in_channels;
    let min = model.backbone.min_input();
    if img.channels != want {
        return Err(Error::Validation(format!(
            "{split} image {index} has {} channels, the backbone expects {want}",
            img.channels
        )));
    }
    if img.width < min || img.height < min {
        return Err(Error::Validation(format!(
            "{split} image {index} is {}x{}, the backbone needs at least {min}x{min}",
            img.width, img.height
        )));
    }
    Ok(())
}

fn check_images(model: &FashionModel, bundle: &Bundle) -> Result<()> {
    let check_all = |images: &[Image], split: &str| -> Result<()> {
        for (i, img) in images.iter().enumerate() {
            check_one_image(img, i, split, model)?;
        }
        Ok(())
    };
    match bundle {
        Bundle::Attribute { train, val } => {
            check_all(&train.images, "train")?;
            if let Some(v) = val {
                check_all(&v.images, "validation")?;
            }
        }
        Bundle::Landmark { train, val } => {
            check_all(&train.images, "train")?;
            if let Some(v) = val {
                check_all(&v.images, "validation")?;
            }
        }
        Bundle::Retrieval { data } => check_all(&data.images, "split")?,
        Bundle::Compat { data } => {
            for (i, item) in data.items.iter().enumerate() {
                check_one_image(&item.image, i, "item", model)?;
            }
        }
    }
    Ok(())
}

fn make_task(model: &FashionModel, bundle: &Bundle, cfg: &DataCfg, margin: f64) -> Box<dyn Task> {
    match bundle {
        Bundle::Attribute { train, val } => Box::new(AttributeTask {
            model: model.clone(),
            train: train.clone(),
            val: val.clone(),
            batch_size: cfg.batch_size,
            shuffle: cfg.shuffle,
        }),
        Bundle::Landmark { train, val } => Box::new(LandmarkTask {
            model: model.clone(),
            train: train.clone(),
            val: val.clone(),
            batch_size: cfg.batch_size,
            shuffle: cfg.shuffle,
        }),
        Bundle::Retrieval { data } => Box::new(RetrievalTask {
            model: model.clone(),
            data: data.clone(),
            batch_size: cfg.batch_size,
            margin,
            plan: Vec::new(),
        }),
        Bundle::Compat { data } => Box::new(CompatTask {
            model: model.clone(),
            data: data.clone(),
            batch_size: cfg.batch_size,
            margin,
            plan: Vec::new(),
        }),
    }
}

/// Everything one config resolves to: the model, a runner holding the
/// trainable task, the loaded data, and the epoch plan parameters.
pub struct Pipeline {
    pub kind: TaskKind,
    pub model: FashionModel,
    pub runner: Runner,
    pub bundle: Bundle,
    flow: Vec<(Mode, usize)>,
    max_epochs: usize,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("kind", &self.kind)
            .field("flow", &self.flow)
            .field("max_epochs", &self.max_epochs)
            .finish_non_exhaustive()
    }
}

impl Pipeline {
    /// Builds the pipeline. Config shape is validated before any data
    /// file is touched; dataset problems surface as data errors.
    pub fn build(config: &Config, work_dir: Option<&Path>) -> Result<Pipeline> {
        Pipeline::build_inner(config, work_dir, true)
    }

    /// Build for forward passes only: hooks are validated but not
    /// registered, so a checkpoint hook does not demand a work
    /// directory. The config fingerprint is unchanged.
    pub fn build_for_inference(config: &Config) -> Result<Pipeline> {
        Pipeline::build_inner(config, None, false)
    }

    fn build_inner(config: &Config, work_dir: Option<&Path>, with_hooks: bool) -> Result<Pipeline> {
        expect_keys(
            config.root(),
            &["task", "seed", "model", "data", "schedule", "loss", "hooks"],
            "config",
        )?;
        let kind = TaskKind::parse(config.get_str("task")?)?;
        let seed = config.i64_or("seed", 0)?;
        if seed < 0 {
            return Err(Error::Config("seed must be non-negative".into()));
        }
        let seed = seed as u64;
        let schedule = parse_schedule(config)?;
        let margin = parse_margin(config)?;
        let hook_cfgs = parse_hooks(config)?;
        let model_node = config.get("model")?;
        expect_keys(model_node, &["backbone", "head"], "model")?;
        let backbone = backbone_registry().build(config.get("model.backbone")?)?;
        let head_spec = head_registry().build(config.get("model.head")?)?;
        check_head_matches(kind, &head_spec)?;
        let data_cfg = parse_data_cfg(config, kind)?;
        if let HeadSpec::Attribute {
            pooling: Pooling::Landmark,
            ..
        } = head_spec
        {
            if data_cfg.landmark_file.is_none() {
                return Err(Error::Config(
                    "landmark pooling needs data.landmark_file".into(),
                ));
            }
            if data_cfg.val_ann_file.is_some() && data_cfg.val_landmark_file.is_none() {
                return Err(Error::Config(
                    "landmark pooling needs data.val_landmark_file when validating".into(),
                ));
            }
        }

        let (bundle, dims) = load_bundle(kind, &data_cfg)?;
        let head = head_spec.build(&backbone, &dims)?;
        let model = FashionModel::new(backbone, head);
        check_images(&model, &bundle)?;
        let params = model.init_params(seed);
        let task = make_task(&model, &bundle, &data_cfg, margin);
        let has_val = task.has_val();
        let mut runner = Runner::new(
            task,
            model.layout.clone(),
            params,
            seed,
            schedule.lr,
            schedule.momentum,
            config.fingerprint(),
            work_dir.map(Path::to_path_buf),
        )?;
        let hook_cfgs = if with_hooks { hook_cfgs } else { Vec::new() };
        for cfg in hook_cfgs {
            let hook: Box<dyn Hook> = match cfg {
                HookCfg::LrStep {
                    milestones,
                    gamma,
                    priority,
                } => with_priority(Box::new(LrStepHook::new(milestones, gamma)?), priority),
                HookCfg::Checkpoint { every_n, priority } => {
                    let dir = work_dir.ok_or_else(|| {
                        Error::Config("checkpoint hook needs a work directory".into())
                    })?;
                    with_priority(
                        Box::new(CheckpointHook::new(every_n, dir.join("checkpoints"))?),
                        priority,
                    )
                }
                HookCfg::Eval {
                    every_n,
                    fatal,
                    priority,
                } => {
                    if !has_val {
                        return Err(Error::Config(
                            "eval hook configured but the task has no validation data".into(),
                        ));
                    }
                    with_priority(Box::new(EvalHook::new(every_n, fatal)?), priority)
                }
            };
            runner.register_hook(hook)?;
        }
        Ok(Pipeline {
            kind,
            model,
            runner,
            bundle,
            flow: schedule.flow,
            max_epochs: schedule.max_epochs,
        })
    }

    /// Sampling feasibility for tasks whose epochs draw random plans.
    /// Checked on the train path only; demos and prediction export work
    /// on data that cannot form training pairs.
    fn check_trainable(&self) -> Result<()> {
        match &self.bundle {
            Bundle::Attribute { .. } | Bundle::Landmark { .. } => Ok(()),
            Bundle::Retrieval { data } => {
                if data.train_items().is_empty() {
                    return Err(Error::Validation(
                        "retrieval training needs an item with 2 or more train images".into(),
                    ));
                }
                let ids: BTreeSet<&str> = data
                    .records
                    .iter()
                    .filter(|r| r.role == Role::Train)
                    .map(|r| r.item_id.as_str())
                    .collect();
                if ids.len() < 2 {
                    return Err(Error::Validation(
                        "retrieval training needs train images from 2 or more items".into(),
                    ));
                }
                Ok(())
            }
            Bundle::Compat { data } => {
                let filled = data.outfits.iter().filter(|(_, m)| !m.is_empty()).count();
                if filled < 2 {
                    return Err(Error::Validation(
                        "compatibility training needs 2 or more non-empty outfits".into(),
                    ));
                }
                if !data.outfits.iter().any(|(_, m)| m.len() >= 2) {
                    return Err(Error::Validation(
                        "compatibility training needs an outfit with 2 or more items".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Trains according to the expanded workflow, resuming from the
    /// runner's current epoch. A no-op when training is already at
    /// `max_epochs`.
    pub fn run(&mut self) -> Result<RunnerState> {
        self.check_trainable()?;
        let plan = expand_workflow(&self.flow, self.runner.state.epoch, self.max_epochs)?;
        if plan.is_empty() {
            return Ok(self.runner.state);
        }
        self.runner.run(&plan)
    }

    /// Prediction document for the current parameters, in the exact
    /// shape the evaluator consumes. Attribute and landmark predictions
    /// cover the validation split when one is configured, the train
    /// split otherwise.
    pub fn predictions(&self) -> Result<Value> {
        let params = &self.runner.params;
        match &self.bundle {
            Bundle::Attribute { train, val } => {
                let data = val.as_ref().unwrap_or(train);
                let scores = attribute_scores(&self.model, params, data)?;
                let items = data
                    .records
                    .iter()
                    .zip(scores)
                    .map(|(rec, row)| {
                        Value::map_from(vec![
                            ("image", Value::from(rec.image_path.as_str())),
                            (
                                "scores",
                                Value::List(row.into_iter().map(Value::from).collect()),
                            ),
                        ])
                    })
                    .collect();
                Ok(Value::map_from(vec![
                    ("task", Value::from("attribute")),
                    ("items", Value::List(items)),
                ]))
            }
            Bundle::Landmark { train, val } => {
                let data = val.as_ref().unwrap_or(train);
                let preds = landmark_points_px(&self.model, params, data)?;
                let items = data
                    .records
                    .iter()
                    .zip(preds)
                    .map(|(rec, row)| {
                        let points = row
                            .into_iter()
                            .map(|(x, y)| Value::List(vec![Value::from(x), Value::from(y)]))
                            .collect();
                        Value::map_from(vec![
                            ("image", Value::from(rec.image_path.as_str())),
                            ("landmarks", Value::List(points)),
                        ])
                    })
                    .collect();
                Ok(Value::map_from(vec![
                    ("task", Value::from("landmark")),
                    ("items", Value::List(items)),
                ]))
            }
            Bundle::Retrieval { data } => {
                let embeddings = retrieval_embeddings(&self.model, params, data, false)?;
                let items = data
                    .records
                    .iter()
                    .zip(embeddings)
                    .map(|(rec, emb)| {
                        Value::map_from(vec![
                            ("image", Value::from(rec.image_path.as_str())),
                            (
                                "embedding",
                                Value::List(emb.into_iter().map(Value::from).collect()),
                            ),
                        ])
                    })
                    .collect();
                Ok(Value::map_from(vec![
                    ("task", Value::from("retrieval")),
                    ("items", Value::List(items)),
                ]))
            }
            Bundle::Compat { data } => {
                let (choices, scores) = compat_answers(&self.model, params, data)?;
                let fitb = data
                    .fitb
                    .iter()
                    .zip(choices)
                    .map(|(q, choice)| {
                        Value::map_from(vec![
                            ("question_id", Value::from(q.question_id.as_str())),
                            ("choice", Value::from(choice)),
                        ])
                    })
                    .collect();
                let outfit_scores = data
                    .compat
                    .iter()
                    .zip(scores)
                    .map(|(q, score)| {
                        Value::map_from(vec![
                            ("question_id", Value::from(q.question_id.as_str())),
                            ("score", Value::from(score)),
                        ])
                    })
                    .collect();
                Ok(Value::map_from(vec![
                    ("task", Value::from("compat")),
                    ("fitb", Value::List(fitb)),
                    ("outfit_scores", Value::List(outfit_scores)),
                ]))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth::{self, SynthSpec, SynthTask};
    use crate::json;
    use tempfile::TempDir;

    fn write_synth(task: SynthTask, n: usize, size: usize) -> TempDir {
        let dir = TempDir::new().unwrap();
        let mut spec = SynthSpec::new(task, n, 7);
        spec.size = size;
        let data = synth::generate(&spec).unwrap();
        synth::write_to_dir(&data, dir.path()).unwrap();
        dir
    }

    fn config_for(task: &str, root: &Path, extra: &str) -> Config {
        let text = format!(
            r#"{{
              "task": "{task}",
              "seed": 3,
              "model": {{
                "backbone": {{"type": "tinyconv", "channels": [6, 8]}},
                "head": {head}
              }},
              "data": {{"root": "{root}"{data_extra}}},
              "schedule": {{"lr": 0.05, "max_epochs": 1}}{extra}
            }}"#,
            task = task,
            head = match task {
                "attribute" => r#"{"type": "attribute"}"#,
                "landmark" => r#"{"type": "landmark"}"#,
                "retrieval" => r#"{"type": "embed", "dim": 8}"#,
                "compat" => r#"{"type": "compat", "dim": 8, "pair_dim": 4}"#,
                _ => unreachable!(),
            },
            root = root.display(),
            data_extra = match task {
                "attribute" => r#", "ann_file": "attr.txt", "batch_size": 2"#,
                "landmark" => r#", "ann_file": "landmarks.txt", "batch_size": 2"#,
                "retrieval" => r#", "split_file": "split.txt", "batch_size": 2"#,
                "compat" => r#", "batch_size": 2"#,
                _ => unreachable!(),
            },
            extra = extra,
        );
        Config::parse_str(&text, "<test>").unwrap()
    }

    #[test]
    fn workflow_expansion_matches_the_cyclic_contract() {
        let t = |n| (Mode::Train, n);
        let v = |n| (Mode::Val, n);
        assert_eq!(
            expand_workflow(&[t(1), v(1)], 0, 2).unwrap(),
            vec![t(1), v(1), t(1), v(1)]
        );
        assert_eq!(expand_workflow(&[t(3)], 0, 2).unwrap(), vec![t(2)]);
        assert_eq!(
            expand_workflow(&[t(1), v(1), t(2)], 0, 4).unwrap(),
            vec![t(1), v(1), t(2), t(1), v(1)]
        );
        // Resumed at 3 of 4: only the tail is planned.
        assert_eq!(expand_workflow(&[t(2)], 3, 4).unwrap(), vec![t(1)]);
        assert_eq!(expand_workflow(&[t(2)], 4, 4).unwrap(), vec![]);
        assert!(matches!(
            expand_workflow(&[v(1)], 0, 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn hook_registry_builds_and_rejects() {
        let reg = hook_registry();
        let cfg = reg
            .build(&json::parse(r#"{"type": "lr_step", "milestones": [2, 4], "gamma": 0.5}"#).unwrap())
            .unwrap();
        assert_eq!(
            cfg,
            HookCfg::LrStep {
                milestones: vec![2, 4],
                gamma: 0.5,
                priority: None
            }
        );
        let cfg = reg
            .build(&json::parse(r#"{"type": "eval", "fatal": true, "priority": 5}"#).unwrap())
            .unwrap();
        assert_eq!(
            cfg,
            HookCfg::Eval {
                every_n: 1,
                fatal: true,
                priority: Some(5)
            }
        );
        assert!(matches!(
            reg.build(&json::parse(r#"{"type": "warmup"}"#).unwrap()),
            Err(Error::UnknownType { .. })
        ));
        assert!(matches!(
            reg.build(&json::parse(r#"{"type": "lr_step", "gamma": 0.5}"#).unwrap()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn attribute_pipeline_trains_and_logs() {
        let data_dir = write_synth(SynthTask::Attribute, 4, 32);
        let work_dir = TempDir::new().unwrap();
        let config = config_for("attribute", data_dir.path(), "");
        let mut pipeline = Pipeline::build(&config, Some(work_dir.path())).unwrap();
        let before = pipeline.runner.params.clone();
        let state = pipeline.run().unwrap();
        assert_eq!(state.epoch, 1);
        assert_eq!(state.iter, 2);
        assert!(pipeline.runner.last_loss.is_finite());
        assert_ne!(pipeline.runner.params, before);
        let log = std::fs::read_to_string(work_dir.path().join("run_log.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 2);
    }

    #[test]
    fn eval_hook_reports_on_the_validation_split() {
        let data_dir = write_synth(SynthTask::Attribute, 4, 32);
        let config = config_for(
            "attribute",
            data_dir.path(),
            r#", "hooks": [{"type": "eval"}]"#,
        );
        // Reuse the train annotations as the validation split.
        let config = config
            .merged_with(&Config::parse_str(r#"{"data": {"val_ann_file": "attr.txt"}}"#, "<t>").unwrap())
            .unwrap();
        let mut pipeline = Pipeline::build(&config, None).unwrap();
        pipeline.run().unwrap();
        assert_eq!(pipeline.runner.reports.len(), 1);
        let (epoch, report) = &pipeline.runner.reports[0];
        assert_eq!(*epoch, 1);
        assert!(report.scalars.contains_key("recall_top3"));
    }

    #[test]
    fn eval_hook_without_val_data_is_a_config_error() {
        let data_dir = write_synth(SynthTask::Attribute, 4, 32);
        let config = config_for(
            "attribute",
            data_dir.path(),
            r#", "hooks": [{"type": "eval"}]"#,
        );
        let err = Pipeline::build(&config, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn head_and_task_must_agree() {
        let data_dir = write_synth(SynthTask::Attribute, 4, 32);
        let config = config_for("attribute", data_dir.path(), "");
        let bad = Config::parse_str(
            r#"{"model": {"head": {"type": "landmark"}}}"#,
            "<t>",
        )
        .unwrap();
        let config = config.merged_with(&bad).unwrap();
        let err = Pipeline::build(&config, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn landmark_pooling_requires_a_landmark_file() {
        let data_dir = write_synth(SynthTask::Attribute, 4, 32);
        let config = config_for("attribute", data_dir.path(), "");
        let pooled = Config::parse_str(
            r#"{"model": {"head": {"type": "attribute", "pooling": "landmark"}}}"#,
            "<t>",
        )
        .unwrap();
        let err = Pipeline::build(&config.merged_with(&pooled).unwrap(), None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let with_file = Config::parse_str(
            r#"{"data": {"landmark_file": "landmarks.txt"}}"#,
            "<t>",
        )
        .unwrap();
        let config = config.merged_with(&pooled).unwrap().merged_with(&with_file).unwrap();
        let mut pipeline = Pipeline::build(&config, None).unwrap();
        pipeline.run().unwrap();
        assert!(pipeline.runner.last_loss.is_finite());
    }

    #[test]
    fn retrieval_pipeline_trains_and_evaluates() {
        let data_dir = write_synth(SynthTask::Retrieval, 2, 32);
        let config = config_for("retrieval", data_dir.path(), "");
        let mut pipeline = Pipeline::build(&config, None).unwrap();
        pipeline.run().unwrap();
        assert!(pipeline.runner.last_loss.is_finite());
        let report = pipeline.runner.task.evaluate(&pipeline.runner.params).unwrap();
        assert!(report.scalars.contains_key("recall_at_1"));
    }

    #[test]
    fn compat_pipeline_trains_and_evaluates() {
        let data_dir = write_synth(SynthTask::Compat, 4, 32);
        let config = config_for("compat", data_dir.path(), "");
        let mut pipeline = Pipeline::build(&config, None).unwrap();
        pipeline.run().unwrap();
        assert!(pipeline.runner.last_loss.is_finite());
        let report = pipeline.runner.task.evaluate(&pipeline.runner.params).unwrap();
        assert!(report.scalars.contains_key("fitb_accuracy"));
        assert!(report.scalars.contains_key("compat_auc"));
    }

    #[test]
    fn predictions_match_the_evaluator_schema() {
        let data_dir = write_synth(SynthTask::Landmark, 3, 32);
        let config = config_for("landmark", data_dir.path(), "");
        let pipeline = Pipeline::build(&config, None).unwrap();
        let doc = pipeline.predictions().unwrap();
        let map = doc.as_map().unwrap();
        assert_eq!(map["task"].as_str(), Some("landmark"));
        let items = map["items"].as_list().unwrap();
        assert_eq!(items.len(), 3);
        let first = items[0].as_map().unwrap();
        assert!(first["image"].as_str().is_some());
        // Schema check: the evaluator accepts the document against the
        // same annotations the pipeline loaded.
        let ann = std::fs::read_to_string(data_dir.path().join("landmarks.txt")).unwrap();
        let file = crate::datasets::parse_landmark_file(&ann, "landmarks.txt").unwrap();
        let report = eval::evaluate_landmark_doc(&doc, &file).unwrap();
        assert!(report.scalars.contains_key("normalized_error"));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let data_dir = write_synth(SynthTask::Attribute, 4, 32);
        let config = config_for("attribute", data_dir.path(), r#", "extra": 1"#);
        let err = Pipeline::build(&config, None).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }
}
