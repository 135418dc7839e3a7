use std::path::{Path, PathBuf};

use serde_json::json;
use spatial_pretrain::arch::ArchitectureSpec;
use spatial_pretrain::cost::network_cost;
use spatial_pretrain::data::{
    append_log, load_dataset, write_synthetic_cifar, Checkpoint, CsvLog, Dataset, Phase, Split, SyntheticConfig,
    TrainLogRecord,
};
use spatial_pretrain::experiment::{resized_run_name, run_experiment, Experiment, SummaryRow};
use spatial_pretrain::surgery::{derive_pretrain_architecture, Amplitude, ScalePlan};
use spatial_pretrain::train::{resize_and_continue, run_training, train_from_scratch, LogSink, RunOptions};
use spatial_pretrain::{Error, Result};

use crate::error::CliError;
use crate::settings::Settings;

fn io_err(what: &str, path: &Path) -> impl FnOnce(std::io::Error) -> Error {
    let context = format!("{what} {}", path.display());
    move |e| Error::Io { context, source: e }
}

fn read_arch(path: &Path) -> Result<ArchitectureSpec> {
    let text = std::fs::read_to_string(path).map_err(io_err("reading architecture", path))?;
    ArchitectureSpec::parse(&text)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err("writing", path))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err("creating", path))
}

/// Train and test sets, downscaled when `arch` takes smaller images.
fn load_data(s: &Settings, arch: &ArchitectureSpec) -> Result<(Dataset, Dataset), CliError> {
    let dir = Settings::required(&s.data, "data")?;
    let format = s.format()?;
    let train = load_dataset(dir, format, Split::Train, s.train_limit)?;
    let test = load_dataset(dir, format, Split::Test, s.test_limit)?;
    let (_, h, w) = train.image_shape();
    let (ah, aw) = (arch.input.height, arch.input.width);
    if (ah, aw) != (h, w) && ah <= h && aw <= w {
        return Ok((train.downscale(ah, aw)?, test.downscale(ah, aw)?));
    }
    Ok((train, test))
}

fn print_json(v: &serde_json::Value) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
    Ok(())
}

pub fn analyze(arch: &Path) -> Result<(), CliError> {
    let target = read_arch(arch)?;
    let (pre, plan) = derive_pretrain_architecture(&target)?;
    let cost = network_cost(&target, &plan)?;
    let mut report = serde_json::to_value(&cost).expect("serializable");
    let obj = report.as_object_mut().expect("struct");
    obj.insert("arch".into(), json!(target.name));
    obj.insert("pretrain_arch".into(), json!(pre.name));
    obj.insert("input".into(), json!(plan.target_input));
    obj.insert("pretrain_input".into(), json!(plan.pretrain_input));
    print_json(&report)
}

pub fn derive(arch: &Path, out: &Path, plan_out: Option<&Path>, amplitude: Option<Amplitude>) -> Result<(), CliError> {
    let target = read_arch(arch)?;
    let (pre, mut plan) = derive_pretrain_architecture(&target)?;
    if let Some(a) = amplitude {
        plan.amplitude = a;
    }
    let plan_path = plan_out.map_or_else(|| PathBuf::from(format!("{}.plan.json", out.display())), Path::to_path_buf);
    write_file(out, &pre.to_text())?;
    write_file(&plan_path, &serde_json::to_string_pretty(&plan).expect("serializable"))?;
    print_json(&json!({
        "pretrain_arch": out,
        "plan": plan_path,
        "pretrain_input": plan.pretrain_input,
    }))
}

/// Appends to an existing log.
struct AppendSink(PathBuf);

impl LogSink for AppendSink {
    fn record(&mut self, r: &TrainLogRecord) -> Result<()> {
        append_log(r, &self.0)
    }
}

pub fn train(s: &Settings) -> Result<(), CliError> {
    let target = read_arch(Settings::required(&s.arch, "arch")?)?;
    let out = Settings::required(&s.out, "out")?;
    let schedule = s.schedule()?;
    let pretrain = s.pretrain_network()?;
    let arch = if pretrain {
        derive_pretrain_architecture(&target)?.0
    } else {
        target
    };
    let (train, test) = load_data(s, &arch)?;
    create_dir(out)?;
    let name = if pretrain { "pretrain" } else { "target" };
    let mut opts = RunOptions::new(if pretrain { Phase::Pretrain } else { Phase::Target });
    opts.init = s.init()?;
    if let Some(k) = s.checkpoint_every.filter(|&k| k > 0) {
        opts.snapshot_epochs = (k..=schedule.total_epochs).step_by(k).collect();
    }
    let log_path = out.join(format!("{name}.csv"));
    let outcome = match &s.resume {
        Some(ckpt) => {
            let start = Checkpoint::load(ckpt)?;
            if start.network.arch() != &arch {
                return Err(Error::Architecture(format!(
                    "checkpoint holds '{}', expected '{}'",
                    start.network.arch().name,
                    arch.name
                ))
                .into());
            }
            run_training(start, &schedule, &train, &test, &opts, AppendSink(log_path))?
        }
        None => {
            let seed = *Settings::required(&s.seed, "seed")?;
            train_from_scratch(&arch, &schedule, &train, &test, seed, &opts, CsvLog::create(&log_path)?)?
        }
    };
    for snap in &outcome.snapshots {
        snap.save(out.join(format!("{name}-e{}.ckpt", snap.epoch)))?;
    }
    outcome.checkpoint.save(out.join(format!("{name}.ckpt")))?;
    let row = SummaryRow::from_log(name, None, &outcome.log);
    print_json(&serde_json::to_value(row).expect("serializable"))
}

pub fn resize_continue(s: &Settings) -> Result<(), CliError> {
    let target = read_arch(Settings::required(&s.arch, "arch")?)?;
    let ckpt = Checkpoint::load(Settings::required(&s.checkpoint, "checkpoint")?)?;
    let out = Settings::required(&s.out, "out")?;
    let schedule = s.schedule()?;
    let mode = s.mode(&schedule)?;
    let mut plan = match &s.plan {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err("reading plan", p))?;
            serde_json::from_str::<ScalePlan>(&text)
                .map_err(|e| CliError::Usage(format!("plan {}: {e}", p.display())))?
        }
        None => derive_pretrain_architecture(&target)?.1,
    };
    if let Some(a) = s.amplitude()? {
        plan.amplitude = a;
    }
    let (train, test) = load_data(s, &target)?;
    create_dir(out)?;
    let name = resized_run_name(ckpt.epoch);
    let log = CsvLog::create(out.join(format!("{name}.csv")))?;
    let outcome = resize_and_continue(
        &ckpt,
        &target,
        &plan,
        &schedule,
        mode,
        &train,
        &test,
        &RunOptions::new(Phase::ResizedContinue),
        log,
    )?;
    outcome.checkpoint.save(out.join(format!("{name}.ckpt")))?;
    let row = SummaryRow::from_log(&name, Some(ckpt.epoch), &outcome.log);
    print_json(&serde_json::to_value(row).expect("serializable"))
}

pub fn experiment(s: &Settings) -> Result<(), CliError> {
    let target = read_arch(Settings::required(&s.arch, "arch")?)?;
    let out = Settings::required(&s.out, "out")?;
    let schedule = s.schedule()?;
    let exp = Experiment {
        mode: s.mode(&schedule)?,
        resize_epochs: s.resize_epochs.clone().unwrap_or_default(),
        seed: *Settings::required(&s.seed, "seed")?,
        init: s.init()?,
        amplitude: s.amplitude()?.unwrap_or_default(),
        baseline: s.baseline.unwrap_or(true),
        target,
        schedule,
    };
    exp.validate()?;
    let (train, test) = load_data(s, &exp.target)?;
    let outcome = run_experiment(&exp, &train, &test, Some(out))?;
    print!("{}", outcome.summary_csv());
    Ok(())
}

pub fn gen_data(out: &Path, train: usize, test: usize, seed: u64) -> Result<(), CliError> {
    let cfg = SyntheticConfig {
        train,
        test,
        seed,
        ..SyntheticConfig::default()
    };
    write_synthetic_cifar(out, &cfg)?;
    print_json(&json!({ "out": out, "train": train, "test": test, "seed": seed }))
}
