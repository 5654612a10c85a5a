//! Hook-based training loop.
//!
//! The runner is a minimal epoch/iteration pump: per train iteration it
//! asks the task for a loss and gradient, applies one SGD step, and
//! fires hook events around every stage. Counters update before the
//! hooks for that event fire, so hooks always observe post-event state.
//! The event stream follows the grammar
//! `before_run (before_epoch (before_iter after_iter)* after_epoch)* after_run`
//! for every workflow.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::mem;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::json::{self, Value};
use crate::metrics::MetricReport;
use crate::models::ParamLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Val,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Val => "val",
        }
    }
}

/// Loop counters and optimizer scalars. `epoch` counts completed train
/// epochs; `iter` counts completed train iterations across the whole
/// run; `inner_iter` counts iterations inside the current epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunnerState {
    pub epoch: usize,
    pub iter: usize,
    pub inner_iter: usize,
    pub mode: Mode,
    pub lr: f64,
    pub max_epochs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    BeforeRun,
    BeforeEpoch,
    BeforeIter,
    AfterIter,
    AfterEpoch,
    AfterRun,
}

impl Event {
    pub fn name(self) -> &'static str {
        match self {
            Event::BeforeRun => "before_run",
            Event::BeforeEpoch => "before_epoch",
            Event::BeforeIter => "before_iter",
            Event::AfterIter => "after_iter",
            Event::AfterEpoch => "after_epoch",
            Event::AfterRun => "after_run",
        }
    }
}

/// The task-specific half of training: batch plans and loss/gradient
/// evaluation. Implementations must be deterministic functions of
/// `(seed, epoch)` so interrupted runs can resume bit-identically.
pub trait Task {
    fn train_len(&self) -> usize;
    /// Batches for one train epoch, as index lists into the train set.
    /// Called exactly once per train epoch, before that epoch's steps,
    /// so tasks may cache a sampling plan the indices refer to.
    fn train_batches(&mut self, seed: u64, epoch: usize) -> Vec<Vec<usize>>;
    /// Mean loss over the batch; gradients accumulate into `grad`.
    fn train_step(&mut self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> Result<f64>;
    fn val_batches(&self) -> Vec<Vec<usize>> {
        Vec::new()
    }
    fn val_step(&self, _params: &[f64], _batch: &[usize]) -> Result<f64> {
        Err(Error::Config("task has no validation step".into()))
    }
    /// Metric evaluation on the validation split.
    fn evaluate(&self, _params: &[f64]) -> Result<MetricReport> {
        Err(Error::Config("task has no evaluator".into()))
    }
    fn has_val(&self) -> bool {
        !self.val_batches().is_empty()
    }
}

/// A named observer of runner events. Lower priority fires earlier;
/// equal priorities fire in registration order.
pub trait Hook {
    fn name(&self) -> &str;
    fn priority(&self) -> i64;
    fn on_event(&mut self, event: Event, runner: &mut Runner) -> Result<()>;
}

pub struct Runner {
    pub task: Box<dyn Task>,
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    /// SGD momentum buffer, same layout as `params`.
    pub velocity: Vec<f64>,
    pub momentum: f64,
    pub state: RunnerState,
    pub seed: u64,
    pub fingerprint: String,
    pub work_dir: Option<PathBuf>,
    pub last_loss: f64,
    /// Eval reports as (epoch, report), in emission order.
    pub reports: Vec<(usize, MetricReport)>,
    /// Non-fatal problems (eval failures, fingerprint overrides),
    /// surfaced after the run.
    pub warnings: Vec<String>,
    trace: Option<Vec<String>>,
    hooks: Vec<(usize, Box<dyn Hook>)>,
    next_hook_id: usize,
    log: Option<BufWriter<fs::File>>,
}

impl Runner {
    pub fn new(
        task: Box<dyn Task>,
        layout: ParamLayout,
        params: Vec<f64>,
        seed: u64,
        lr: f64,
        momentum: f64,
        fingerprint: String,
        work_dir: Option<PathBuf>,
    ) -> Result<Runner> {
        if params.len() != layout.total_len() {
            return Err(Error::Shape(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total_len()
            )));
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate {lr} must be positive")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} must be in [0, 1)")));
        }
        let log = match &work_dir {
            None => None,
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("run_log.jsonl");
                let file = fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some(BufWriter::new(file))
            }
        };
        let velocity = vec![0.0; params.len()];
        Ok(Runner {
            task,
            layout,
            params,
            velocity,
            momentum,
            state: RunnerState {
                epoch: 0,
                iter: 0,
                inner_iter: 0,
                mode: Mode::Train,
                lr,
                max_epochs: 0,
            },
            seed,
            fingerprint,
            work_dir,
            last_loss: f64::NAN,
            reports: Vec::new(),
            warnings: Vec::new(),
            trace: None,
            hooks: Vec::new(),
            next_hook_id: 0,
            log,
        })
    }

    /// Starts recording the event trace.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    /// Registers a hook; name must be unique.
    pub fn register_hook(&mut self, hook: Box<dyn Hook>) -> Result<()> {
        if self.hooks.iter().any(|(_, h)| h.name() == hook.name()) {
            return Err(Error::DuplicateEntry {
                registry: "hooks".into(),
                key: hook.name().into(),
            });
        }
        self.hooks.push((self.next_hook_id, hook));
        self.next_hook_id += 1;
        // Stable order: priority, then registration.
        self.hooks
            .sort_by_key(|(id, h)| (h.priority(), *id));
        Ok(())
    }

    pub fn hook_names(&self) -> Vec<String> {
        self.hooks.iter().map(|(_, h)| h.name().to_string()).collect()
    }

    fn fire(&mut self, event: Event) -> Result<()> {
        if let Some(trace) = &mut self.trace {
            trace.push(event.name().to_string());
        }
        let mut hooks = mem::take(&mut self.hooks);
        let mut outcome = Ok(());
        for (_, hook) in &mut hooks {
            outcome = hook.on_event(event, self);
            if outcome.is_err() {
                break;
            }
        }
        debug_assert!(self.hooks.is_empty(), "hooks must not register hooks");
        self.hooks = hooks;
        outcome
    }

    fn log_line(&mut self, value: Value) -> Result<()> {
        if let Some(log) = &mut self.log {
            let line = json::to_string_styled(&value, false, json::FloatStyle::Shortest)
                .expect("log values are finite");
            writeln!(log, "{line}").map_err(|e| Error::io("run_log.jsonl", e))?;
        }
        Ok(())
    }

    fn flush_log(&mut self) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.flush().map_err(|e| Error::io("run_log.jsonl", e))?;
        }
        Ok(())
    }

    /// Records an eval report against the current epoch and mirrors its
    /// scalars into the run log.
    pub fn push_report(&mut self, report: MetricReport) -> Result<()> {
        let scalars: BTreeMap<String, Value> = report
            .scalars
            .iter()
            .map(|(k, v)| (k.clone(), Value::Float(*v)))
            .collect();
        self.log_line(Value::map_from(vec![
            ("kind", Value::from("eval")),
            ("epoch", Value::Int(self.state.epoch as i64)),
            ("iter", Value::Int(self.state.iter as i64)),
            ("metrics", Value::Map(scalars)),
        ]))?;
        self.reports.push((self.state.epoch, report));
        Ok(())
    }

    /// One SGD step with momentum: `v ← μ v + g`, `p ← p − lr · v`.
    fn sgd_step(&mut self, grad: &[f64]) {
        let lr = self.state.lr;
        for ((p, v), g) in self.params.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *p -= lr * *v;
        }
    }

    /// Executes the workflow once through. Train epochs update
    /// parameters; val epochs only evaluate the loss.
    pub fn run(&mut self, workflow: &[(Mode, usize)]) -> Result<RunnerState> {
        if workflow.is_empty() {
            return Err(Error::Config("workflow is empty".into()));
        }
        let planned_train: usize = workflow
            .iter()
            .filter(|(m, _)| *m == Mode::Train)
            .map(|(_, n)| n)
            .sum();
        if planned_train > 0 && self.task.train_len() == 0 {
            return Err(Error::Validation("training dataset is empty".into()));
        }
        if workflow.iter().any(|(m, _)| *m == Mode::Val) && !self.task.has_val() {
            return Err(Error::Validation(
                "workflow contains a val epoch but the dataset has no validation split".into(),
            ));
        }
        self.state.max_epochs = self.state.epoch + planned_train;
        self.fire(Event::BeforeRun)?;
        for (mode, epochs) in workflow {
            for _ in 0..*epochs {
                self.state.mode = *mode;
                self.state.inner_iter = 0;
                self.fire(Event::BeforeEpoch)?;
                match mode {
                    Mode::Train => self.train_epoch()?,
                    Mode::Val => self.val_epoch()?,
                }
                self.fire(Event::AfterEpoch)?;
                self.flush_log()?;
            }
        }
        self.fire(Event::AfterRun)?;
        self.flush_log()?;
        Ok(self.state)
    }

    fn train_epoch(&mut self) -> Result<()> {
        let batches = self.task.train_batches(self.seed, self.state.epoch);
        if batches.is_empty() || batches.iter().any(|b| b.is_empty()) {
            return Err(Error::Validation("train epoch plan contains no samples".into()));
        }
        let mut grad = vec![0.0; self.params.len()];
        for batch in batches {
            self.fire(Event::BeforeIter)?;
            grad.fill(0.0);
            let loss = self.task.train_step(&self.params, &batch, &mut grad)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iter: self.state.iter as u64,
                });
            }
            self.sgd_step(&grad);
            self.last_loss = loss;
            self.state.iter += 1;
            self.state.inner_iter += 1;
            self.log_line(Value::map_from(vec![
                ("kind", Value::from("train")),
                ("epoch", Value::Int(self.state.epoch as i64)),
                ("iter", Value::Int(self.state.iter as i64)),
                ("lr", Value::Float(self.state.lr)),
                ("loss", Value::Float(loss)),
            ]))?;
            self.fire(Event::AfterIter)?;
        }
        self.state.epoch += 1;
        Ok(())
    }

    fn val_epoch(&mut self) -> Result<()> {
        let batches = self.task.val_batches();
        for batch in batches {
            self.fire(Event::BeforeIter)?;
            let loss = self.task.val_step(&self.params, &batch)?;
            self.last_loss = loss;
            self.state.inner_iter += 1;
            self.log_line(Value::map_from(vec![
                ("kind", Value::from("val")),
                ("epoch", Value::Int(self.state.epoch as i64)),
                ("iter", Value::Int(self.state.iter as i64)),
                ("loss", Value::Float(loss)),
            ]))?;
            self.fire(Event::AfterIter)?;
        }
        Ok(())
    }
}

/// Decays the learning rate by `gamma` before each milestone train
/// epoch.
pub struct LrStepHook {
    milestones: Vec<usize>,
    gamma: f64,
}

impl LrStepHook {
    pub fn new(milestones: Vec<usize>, gamma: f64) -> Result<LrStepHook> {
        if milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("milestones must be strictly increasing".into()));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!("gamma {gamma} must be positive")));
        }
        Ok(LrStepHook { milestones, gamma })
    }
}

impl Hook for LrStepHook {
    fn name(&self) -> &str {
        "lr_step"
    }

    fn priority(&self) -> i64 {
        10
    }

    fn on_event(&mut self, event: Event, runner: &mut Runner) -> Result<()> {
        // `epoch` holds the index of the upcoming train epoch here.
        if event == Event::BeforeEpoch
            && runner.state.mode == Mode::Train
            && self.milestones.contains(&runner.state.epoch)
        {
            runner.state.lr *= self.gamma;
        }
        Ok(())
    }
}

/// Saves a checkpoint after every `every_n`-th completed train epoch.
pub struct CheckpointHook {
    every_n: usize,
    dir: PathBuf,
}

impl CheckpointHook {
    pub fn new(every_n: usize, dir: impl Into<PathBuf>) -> Result<CheckpointHook> {
        if every_n == 0 {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        Ok(CheckpointHook {
            every_n,
            dir: dir.into(),
        })
    }
}

impl Hook for CheckpointHook {
    fn name(&self) -> &str {
        "checkpoint"
    }

    fn priority(&self) -> i64 {
        50
    }

    fn on_event(&mut self, event: Event, runner: &mut Runner) -> Result<()> {
        if event == Event::AfterEpoch
            && runner.state.mode == Mode::Train
            && runner.state.epoch % self.every_n == 0
        {
            let path = self.dir.join(format!("epoch_{}.ckpt", runner.state.epoch));
            save_checkpoint(runner, &path)?;
        }
        Ok(())
    }
}

/// Runs the task evaluator after every `every_n`-th train epoch. Metric
/// failures are collected as warnings unless `fatal` is set.
pub struct EvalHook {
    every_n: usize,
    fatal: bool,
}

impl EvalHook {
    pub fn new(every_n: usize, fatal: bool) -> Result<EvalHook> {
        if every_n == 0 {
            return Err(Error::Config("eval interval must be positive".into()));
        }
        Ok(EvalHook { every_n, fatal })
    }
}

impl Hook for EvalHook {
    fn name(&self) -> &str {
        "eval"
    }

    fn priority(&self) -> i64 {
        40
    }

    fn on_event(&mut self, event: Event, runner: &mut Runner) -> Result<()> {
        if event == Event::AfterEpoch
            && runner.state.mode == Mode::Train
            && runner.state.epoch % self.every_n == 0
        {
            match runner.task.evaluate(&runner.params) {
                Ok(report) => runner.push_report(report)?,
                Err(e) if self.fatal => return Err(e),
                Err(e) => runner
                    .warnings
                    .push(format!("eval at epoch {} failed: {e}", runner.state.epoch)),
            }
        }
        Ok(())
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"FKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// A deserialized checkpoint: counters, config identity, and named
/// tensors (`model/...` parameters and `optim/...` momentum buffers).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub fingerprint: String,
    pub state: RunnerState,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&(String, Vec<usize>, Vec<f64>)> {
        self.tensors.iter().find(|(n, _, _)| n == name)
    }
}

/// Writes the runner's parameters, optimizer state, counters, and
/// config fingerprint as a little-endian binary container.
pub fn save_checkpoint(runner: &Runner, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut blob: Vec<u8> = Vec::new();
    let mut manifest: Vec<(String, Vec<usize>, u64, u64)> = Vec::new();
    for (prefix, data) in [("model", &runner.params), ("optim", &runner.velocity)] {
        for (i, spec) in runner.layout.specs().iter().enumerate() {
            let range = runner.layout.range(i);
            let offset = blob.len() as u64;
            for v in &data[range] {
                blob.extend_from_slice(&v.to_le_bytes());
            }
            manifest.push((
                format!("{prefix}/{}", spec.name),
                spec.shape.clone(),
                offset,
                (spec.len() * 8) as u64,
            ));
        }
    }

    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    write_string(&mut out, &runner.fingerprint);
    let s = &runner.state;
    out.extend_from_slice(&(s.epoch as u64).to_le_bytes());
    out.extend_from_slice(&(s.iter as u64).to_le_bytes());
    out.extend_from_slice(&(s.inner_iter as u64).to_le_bytes());
    out.push(match s.mode {
        Mode::Train => 0,
        Mode::Val => 1,
    });
    out.extend_from_slice(&s.lr.to_le_bytes());
    out.extend_from_slice(&(s.max_epochs as u64).to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    for (name, shape, offset, len) in &manifest {
        write_string(&mut out, name);
        out.push(0); // element type 0: f64
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&len.to_le_bytes());
    }
    out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
    out.extend_from_slice(&blob);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct ByteReader {
    buf: Vec<u8>,
    pos: usize,
}

impl ByteReader {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::Checkpoint("string field is not UTF-8".into()))
    }
}

/// Parses a checkpoint file, validating structure but not fingerprint.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = ByteReader { buf, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let fingerprint = r.string()?;
    let epoch = r.u64()? as usize;
    let iter = r.u64()? as usize;
    let inner_iter = r.u64()? as usize;
    let mode = match r.u8()? {
        0 => Mode::Train,
        1 => Mode::Val,
        m => return Err(Error::Checkpoint(format!("unknown mode tag {m}"))),
    };
    let lr = r.f64()?;
    let max_epochs = r.u64()? as usize;
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Checkpoint(format!("stored learning rate {lr} is invalid")));
    }
    let n_tensors = r.u32()? as usize;
    let mut manifest = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name = r.string()?;
        let dtype = r.u8()?;
        if dtype != 0 {
            return Err(Error::Checkpoint(format!("unknown element type {dtype}")));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let offset = r.u64()? as usize;
        let len = r.u64()? as usize;
        manifest.push((name, shape, offset, len));
    }
    let blob_len = r.u64()? as usize;
    let blob = r.take(blob_len)?.to_vec();
    let mut tensors = Vec::with_capacity(n_tensors);
    for (name, shape, offset, len) in manifest {
        if len % 8 != 0 || offset + len > blob.len() {
            return Err(Error::Checkpoint(format!("tensor {name} overruns the data block")));
        }
        let count = len / 8;
        if count != shape.iter().product::<usize>() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} holds {count} values but its shape says {}",
                shape.iter().product::<usize>()
            )));
        }
        let data: Vec<f64> = blob[offset..offset + len]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, shape, data));
    }
    Ok(Checkpoint {
        version,
        fingerprint,
        state: RunnerState {
            epoch,
            iter,
            inner_iter,
            mode,
            lr,
            max_epochs,
        },
        tensors,
    })
}

impl Runner {
    /// Restores parameters, optimizer state, and counters so the next
    /// `run` continues where the checkpoint left off. A fingerprint
    /// mismatch is an error unless explicitly overridden, in which case
    /// it is recorded as a warning.
    pub fn resume(&mut self, checkpoint: &Checkpoint, allow_mismatch: bool) -> Result<()> {
        if checkpoint.fingerprint != self.fingerprint {
            if !allow_mismatch {
                return Err(Error::FingerprintMismatch {
                    expected: self.fingerprint.clone(),
                    found: checkpoint.fingerprint.clone(),
                });
            }
            self.warnings.push(format!(
                "checkpoint fingerprint {} does not match the active config {}; loading anyway",
                checkpoint.fingerprint, self.fingerprint
            ));
        }
        for (i, spec) in self.layout.specs().iter().enumerate() {
            let range = self.layout.range(i);
            for (prefix, dest) in [("model", &mut self.params), ("optim", &mut self.velocity)] {
                let name = format!("{prefix}/{}", spec.name);
                let (_, shape, data) = checkpoint
                    .tensor(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is missing")))?;
                if shape != &spec.shape {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {shape:?}, model expects {:?}",
                        spec.shape
                    )));
                }
                dest[range.clone()].copy_from_slice(data);
            }
        }
        self.state = checkpoint.state;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Init, ParamSpec};

    /// Quadratic toy problem: loss = Σ (p_i − target_i)² over the batch
    /// samples, so gradients and updates are easy to reason about.
    struct ToyTask {
        targets: Vec<f64>,
    }

    impl Task for ToyTask {
        fn train_len(&self) -> usize {
            self.targets.len()
        }

        fn train_batches(&mut self, _seed: u64, _epoch: usize) -> Vec<Vec<usize>> {
            (0..self.targets.len()).map(|i| vec![i]).collect()
        }

        fn train_step(&mut self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> Result<f64> {
            let mut loss = 0.0;
            for &i in batch {
                let d = params[0] - self.targets[i];
                loss += d * d;
                grad[0] += 2.0 * d;
            }
            Ok(loss / batch.len() as f64)
        }
    }

    fn toy_runner(n: usize) -> Runner {
        let layout = ParamLayout::new(vec![ParamSpec::new("w", vec![1], Init::Zero)]);
        Runner::new(
            Box::new(ToyTask {
                targets: (0..n).map(|i| i as f64).collect(),
            }),
            layout,
            vec![0.0],
            0,
            0.1,
            0.0,
            "fp".into(),
            None,
        )
        .unwrap()
    }

    struct Recorder {
        name: String,
        priority: i64,
        seen: std::rc::Rc<std::cell::RefCell<Vec<String>>>,
    }

    impl Hook for Recorder {
        fn name(&self) -> &str {
            &self.name
        }

        fn priority(&self) -> i64 {
            self.priority
        }

        fn on_event(&mut self, event: Event, _runner: &mut Runner) -> Result<()> {
            if event == Event::BeforeRun {
                self.seen.borrow_mut().push(self.name.clone());
            }
            Ok(())
        }
    }

    #[test]
    fn trace_follows_the_grammar() {
        let mut runner = toy_runner(3);
        runner.enable_trace();
        let state = runner.run(&[(Mode::Train, 1)]).unwrap();
        let expect = [
            "before_run",
            "before_epoch",
            "before_iter",
            "after_iter",
            "before_iter",
            "after_iter",
            "before_iter",
            "after_iter",
            "after_epoch",
            "after_run",
        ];
        assert_eq!(runner.trace().unwrap(), &expect);
        assert_eq!((state.epoch, state.iter), (1, 3));
    }

    #[test]
    fn counters_accumulate_over_epochs() {
        let mut runner = toy_runner(2);
        let state = runner.run(&[(Mode::Train, 2)]).unwrap();
        assert_eq!((state.epoch, state.iter, state.max_epochs), (2, 4, 2));
    }

    #[test]
    fn hooks_fire_by_priority_then_registration() {
        let seen = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
        let mut runner = toy_runner(1);
        for (name, priority) in [("a", 10), ("b", 5), ("c", 10)] {
            runner
                .register_hook(Box::new(Recorder {
                    name: name.into(),
                    priority,
                    seen: seen.clone(),
                }))
                .unwrap();
        }
        runner.run(&[(Mode::Train, 1)]).unwrap();
        assert_eq!(*seen.borrow(), vec!["b", "a", "c"]);
    }

    #[test]
    fn duplicate_hook_names_are_rejected() {
        let seen = std::rc::Rc::new(std::cell::RefCell::new(Vec::new()));
        let mut runner = toy_runner(1);
        let hook = |seen: &std::rc::Rc<std::cell::RefCell<Vec<String>>>| {
            Box::new(Recorder {
                name: "same".into(),
                priority: 1,
                seen: seen.clone(),
            })
        };
        runner.register_hook(hook(&seen)).unwrap();
        assert!(matches!(
            runner.register_hook(hook(&seen)),
            Err(Error::DuplicateEntry { .. })
        ));
        assert_eq!(runner.hook_names(), vec!["same"]);
    }

    #[test]
    fn lr_decays_at_milestones() {
        let mut runner = toy_runner(1);
        runner.state.lr = 1.0;
        runner
            .register_hook(Box::new(LrStepHook::new(vec![1, 2], 0.5).unwrap()))
            .unwrap();
        let mut lrs = Vec::new();
        for _ in 0..3 {
            runner.run(&[(Mode::Train, 1)]).unwrap();
            lrs.push(runner.state.lr);
        }
        assert_eq!(lrs, vec![1.0, 0.5, 0.25]);
        assert!(LrStepHook::new(vec![2, 1], 0.5).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_the_iteration() {
        struct NanTask;
        impl Task for NanTask {
            fn train_len(&self) -> usize {
                1
            }
            fn train_batches(&mut self, _: u64, _: usize) -> Vec<Vec<usize>> {
                vec![vec![0]]
            }
            fn train_step(&mut self, _: &[f64], _: &[usize], _: &mut [f64]) -> Result<f64> {
                Ok(f64::NAN)
            }
        }
        let layout = ParamLayout::new(vec![ParamSpec::new("w", vec![1], Init::Zero)]);
        let mut runner = Runner::new(
            Box::new(NanTask),
            layout,
            vec![0.0],
            0,
            0.1,
            0.0,
            "fp".into(),
            None,
        )
        .unwrap();
        match runner.run(&[(Mode::Train, 1)]) {
            Err(Error::NonFiniteLoss { iter }) => assert_eq!(iter, 0),
            other => panic!("expected non-finite loss abort, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trips_state_and_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let mut runner = toy_runner(3);
        runner.run(&[(Mode::Train, 2)]).unwrap();
        let path = dir.path().join("test.ckpt");
        save_checkpoint(&runner, &path).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.state, runner.state);
        assert_eq!(ckpt.fingerprint, "fp");
        let (_, shape, data) = ckpt.tensor("model/w").unwrap();
        assert_eq!(shape, &vec![1]);
        assert_eq!(data, &runner.params);
        assert!(ckpt.tensor("optim/w").is_some());

        // A different fingerprint refuses to load without the override.
        let mut other = toy_runner(3);
        other.fingerprint = "other".into();
        assert!(matches!(
            other.resume(&ckpt, false),
            Err(Error::FingerprintMismatch { .. })
        ));
        other.resume(&ckpt, true).unwrap();
        assert_eq!(other.params, runner.params);
        assert_eq!(other.warnings.len(), 1);
    }

    #[test]
    fn resume_reproduces_an_uninterrupted_run() {
        let mut full = toy_runner(3);
        full.run(&[(Mode::Train, 4)]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mid.ckpt");
        let mut first = toy_runner(3);
        first.run(&[(Mode::Train, 2)]).unwrap();
        save_checkpoint(&first, &path).unwrap();

        let mut second = toy_runner(3);
        second.resume(&load_checkpoint(&path).unwrap(), false).unwrap();
        second.run(&[(Mode::Train, 2)]).unwrap();

        assert_eq!(second.params, full.params);
        assert_eq!(second.velocity, full.velocity);
        assert_eq!(second.state.epoch, full.state.epoch);
        assert_eq!(second.state.iter, full.state.iter);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"not a checkpoint").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
        let runner = toy_runner(1);
        let good = dir.path().join("good.ckpt");
        save_checkpoint(&runner, &good).unwrap();
        let mut bytes = fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&good, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&good), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn val_epochs_leave_parameters_untouched() {
        struct ValTask;
        impl Task for ValTask {
            fn train_len(&self) -> usize {
                1
            }
            fn train_batches(&mut self, _: u64, _: usize) -> Vec<Vec<usize>> {
                vec![vec![0]]
            }
            fn train_step(&mut self, params: &[f64], _: &[usize], grad: &mut [f64]) -> Result<f64> {
                grad[0] = params[0] - 3.0;
                Ok(1.0)
            }
            fn val_batches(&self) -> Vec<Vec<usize>> {
                vec![vec![0]]
            }
            fn val_step(&self, _: &[f64], _: &[usize]) -> Result<f64> {
                Ok(0.5)
            }
        }
        let layout = ParamLayout::new(vec![ParamSpec::new("w", vec![1], Init::Zero)]);
        let mut runner = Runner::new(
            Box::new(ValTask),
            layout,
            vec![0.0],
            0,
            0.1,
            0.0,
            "fp".into(),
            None,
        )
        .unwrap();
        runner.run(&[(Mode::Train, 1)]).unwrap();
        let params_after_train = runner.params.clone();
        let iter_after_train = runner.state.iter;
        runner.run(&[(Mode::Val, 1)]).unwrap();
        assert_eq!(runner.params, params_after_train);
        assert_eq!(runner.state.iter, iter_after_train);
        assert_eq!(runner.last_loss, 0.5);
    }
}
