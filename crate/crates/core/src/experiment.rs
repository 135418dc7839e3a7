//! The resize-epoch sweep: one pre-train run with snapshots, one
//! resize-and-continue run per snapshot, and optionally an uninterrupted
//! target baseline, summarised in a single table.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureSpec;
use crate::data::{format_g, CsvLog, Dataset, Phase, TrainLogRecord};
use crate::error::{Error, Result};
use crate::network::InitRule;
use crate::schedule::TrainingSchedule;
use crate::surgery::{derive_pretrain_architecture, Amplitude, ScalePlan};
use crate::train::{resize_and_continue, train_from_scratch, ContinueMode, LogSink, NullSink, RunOptions};

pub const SUMMARY_HEADER: &str = "run,resize_epoch,extra_epochs,best_test_acc,best_epoch,final_test_acc,total_wall_s";

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub target: ArchitectureSpec,
    pub schedule: TrainingSchedule,
    /// Pre-train epochs after which a resized run branches off.
    pub resize_epochs: Vec<usize>,
    pub mode: ContinueMode,
    pub seed: u64,
    pub init: InitRule,
    pub amplitude: Amplitude,
    /// Also train the target from scratch.
    pub baseline: bool,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.resize_epochs.is_empty() && !self.baseline {
            return Err(Error::InvalidArgument("nothing to run: no resize epochs and no baseline".into()));
        }
        if let Some(&e) = self.resize_epochs.iter().find(|&&e| e == 0 || e >= self.schedule.total_epochs) {
            return Err(Error::InvalidArgument(format!(
                "resize epoch {e} outside 1..{}",
                self.schedule.total_epochs
            )));
        }
        Ok(())
    }

    /// Pre-train architecture and the plan, carrying this experiment's amplitude rule.
    pub fn derive(&self) -> Result<(ArchitectureSpec, ScalePlan)> {
        let (pre, mut plan) = derive_pretrain_architecture(&self.target)?;
        plan.amplitude = self.amplitude;
        Ok((pre, plan))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub resize_epoch: Option<usize>,
    /// Epochs spent holding the learning rule after resize.
    pub extra_epochs: usize,
    pub best_test_acc: f64,
    pub best_epoch: usize,
    pub final_test_acc: f64,
    pub total_wall_s: f64,
}

impl SummaryRow {
    /// Row for a combined log. An empty log gives zero accuracies at epoch 0.
    pub fn from_log(run: &str, resize_epoch: Option<usize>, log: &[TrainLogRecord]) -> Self {
        let best = log
            .iter()
            .fold(None::<&TrainLogRecord>, |b, r| match b {
                Some(b) if b.test_acc >= r.test_acc => Some(b),
                _ => Some(r),
            });
        SummaryRow {
            run: run.to_string(),
            resize_epoch,
            extra_epochs: log.iter().filter(|r| r.phase == Phase::Extra).count(),
            best_test_acc: best.map_or(0.0, |r| r.test_acc),
            best_epoch: best.map_or(0, |r| r.epoch),
            final_test_acc: log.last().map_or(0.0, |r| r.test_acc),
            total_wall_s: log.last().map_or(0.0, |r| r.wall_s),
        }
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.run,
            self.resize_epoch.map(|e| e.to_string()).unwrap_or_default(),
            self.extra_epochs,
            format_g(self.best_test_acc),
            self.best_epoch,
            format_g(self.final_test_acc),
            format_g(self.total_wall_s)
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub name: String,
    pub resize_epoch: Option<usize>,
    pub log: Vec<TrainLogRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub pretrain_arch: ArchitectureSpec,
    pub plan: ScalePlan,
    /// Baseline (if any), then the pre-train run, then one run per resize epoch.
    pub runs: Vec<RunLog>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutcome {
    pub fn row(&self, run: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.run == run)
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in &self.summary {
            let _ = writeln!(s, "{}", r.to_csv_line());
        }
        s
    }
}

pub fn resized_run_name(epoch: usize) -> String {
    format!("resized-e{epoch}")
}

fn write_log(dir: Option<&Path>, name: &str, log: &[TrainLogRecord]) -> Result<()> {
    if let Some(dir) = dir {
        let mut out = CsvLog::create(dir.join(format!("{name}.csv")))?;
        for r in log {
            out.record(r)?;
        }
    }
    Ok(())
}

/// Runs the sweep on target-resolution `train`/`test` sets. With `out_dir`,
/// writes `<run>.csv` per run and `summary.csv`.
pub fn run_experiment(exp: &Experiment, train: &Dataset, test: &Dataset, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    exp.validate()?;
    let (pre_arch, plan) = exp.derive()?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    }
    let mut runs = Vec::new();
    if exp.baseline {
        let mut opts = RunOptions::new(Phase::Target);
        opts.init = exp.init;
        let out = train_from_scratch(&exp.target, &exp.schedule, train, test, exp.seed, &opts, NullSink)?;
        write_log(out_dir, "baseline", &out.log)?;
        runs.push(RunLog {
            name: "baseline".into(),
            resize_epoch: None,
            log: out.log,
        });
    }
    if let Some(&last) = exp.resize_epochs.iter().max() {
        let (h, w) = plan.pretrain_input;
        let (train_pre, test_pre) = (train.downscale(h, w)?, test.downscale(h, w)?);
        let mut opts = RunOptions::new(Phase::Pretrain);
        opts.init = exp.init;
        opts.stop_epoch = Some(last);
        opts.snapshot_epochs = exp.resize_epochs.clone();
        let pre = train_from_scratch(&pre_arch, &exp.schedule, &train_pre, &test_pre, exp.seed, &opts, NullSink)?;
        write_log(out_dir, "pretrain", &pre.log)?;
        let mut resized = Vec::new();
        for snap in &pre.snapshots {
            let e = snap.epoch;
            let cont = resize_and_continue(
                snap,
                &exp.target,
                &plan,
                &exp.schedule,
                exp.mode,
                train,
                test,
                &RunOptions::new(Phase::ResizedContinue),
                NullSink,
            )?;
            let log: Vec<TrainLogRecord> = pre.log.iter().filter(|r| r.epoch <= e).chain(&cont.log).copied().collect();
            let name = resized_run_name(e);
            write_log(out_dir, &name, &log)?;
            resized.push(RunLog {
                name,
                resize_epoch: Some(e),
                log,
            });
        }
        runs.push(RunLog {
            name: "pretrain".into(),
            resize_epoch: None,
            log: pre.log,
        });
        runs.extend(resized);
    }
    let summary: Vec<SummaryRow> = runs
        .iter()
        .map(|r| SummaryRow::from_log(&r.name, r.resize_epoch, &r.log))
        .collect();
    let outcome = ExperimentOutcome {
        pretrain_arch: pre_arch,
        plan,
        runs,
        summary,
    };
    if let Some(dir) = out_dir {
        let path = dir.join("summary.csv");
        std::fs::write(&path, outcome.summary_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_log, Split};
    use crate::tensor::Tensor;

    fn data(n: usize, seed: u64) -> Dataset {
        let mut x = Vec::new();
        let mut labels = Vec::new();
        let mut rng = crate::data::RngState::from_seed(seed).restore();
        use rand::Rng;
        for i in 0..n {
            let l = i % 2;
            for _ in 0..9 {
                x.push(rng.random::<f32>() + l as f32);
            }
            labels.push(l);
        }
        Dataset::new(Tensor::new(vec![n, 1, 3, 3], x).unwrap(), labels, Split::Train, 2).unwrap()
    }

    fn experiment(arch: &str) -> Experiment {
        Experiment {
            target: ArchitectureSpec::parse(arch).unwrap(),
            schedule: TrainingSchedule {
                milestones: vec![(1, 0.05), (3, 0.01)],
                weight_decay: 1e-4,
                decay_until: 2,
                momentum: 0.9,
                total_epochs: 4,
                batch_size: 4,
                batches_per_epoch: None,
                flip: false,
            },
            resize_epochs: vec![1, 2],
            mode: ContinueMode::Scheduled,
            seed: 3,
            init: InitRule::FanIn,
            amplitude: Amplitude::Scale,
            baseline: true,
        }
    }

    const UNIT: &str = "name unit\ninput 1 3 3\nconv 2 1 1 0\nrelu\nflatten\nfc 2\nsoftmax\n";

    #[test]
    fn unit_plan_rows_match_baseline() {
        let (train, test) = (data(16, 1), data(8, 2));
        let out = run_experiment(&experiment(UNIT), &train, &test, None).unwrap();
        assert!(out.plan.is_identity());
        let base = out.row("baseline").unwrap();
        for e in [1, 2] {
            let r = out.row(&resized_run_name(e)).unwrap();
            assert_eq!(
                (r.best_test_acc, r.best_epoch, r.final_test_acc),
                (base.best_test_acc, base.best_epoch, base.final_test_acc)
            );
        }
        let runs: Vec<_> = out.runs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(runs, ["baseline", "pretrain", "resized-e1", "resized-e2"]);
    }

    #[test]
    fn writes_logs_and_summary() {
        let (train, test) = (data(16, 1), data(8, 2));
        let dir = tempfile::tempdir().unwrap();
        let exp = experiment("name sm\ninput 1 3 3\nconv 2 3 1 1\nrelu\nflatten\nfc 2\nsoftmax\n");
        let out = run_experiment(&exp, &train, &test, Some(dir.path())).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));
        assert_eq!(summary.lines().count(), 5);
        let log = parse_log(&std::fs::read_to_string(dir.path().join("resized-e2.csv")).unwrap()).unwrap();
        let phases: Vec<_> = log.iter().map(|r| r.phase).collect();
        assert_eq!(
            phases,
            [Phase::Pretrain, Phase::Pretrain, Phase::ResizedContinue, Phase::ResizedContinue]
        );
        assert!(log.windows(2).all(|w| w[0].wall_s <= w[1].wall_s));
        assert_eq!(format_g(out.row("resized-e2").unwrap().total_wall_s), format_g(log[3].wall_s));
    }

    #[test]
    fn rejects_bad_resize_epoch() {
        let mut exp = experiment(UNIT);
        exp.resize_epochs = vec![4];
        assert!(exp.validate().is_err());
    }
}
