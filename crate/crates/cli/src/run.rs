use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rectnet::data::{load_cifar10, load_cifar100, synth_blobs, Dataset};
use rectnet::gradcheck::{registry, GradCheck, TOLERANCE};
use rectnet::train::{evaluate, save_checkpoint, train, write_curves};
use rectnet::{ActivationConfig, Error};

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::{output_root, results, CliError};

/// File-name fragment for an activation: `relu`, `leaky_a5.5`, `rrelu_l3_u8`.
pub fn slug(act: &ActivationConfig) -> String {
    match *act {
        ActivationConfig::Relu => "relu".into(),
        ActivationConfig::Leaky { a } => format!("leaky_a{a}"),
        ActivationConfig::Prelu => "prelu".into(),
        ActivationConfig::Rrelu { l, u } => format!("rrelu_l{l}_u{u}"),
    }
}

fn check_files(files: &[PathBuf]) -> Result<(), CliError> {
    match files.iter().find(|p| !p.is_file()) {
        Some(p) => Err(CliError::Usage(format!("data file {} does not exist", p.display()))),
        None => Ok(()),
    }
}

fn load_data(config: &ExperimentConfig, example_shape: &[usize]) -> Result<(Dataset, Dataset), CliError> {
    let (train_set, eval_set) = match &config.dataset {
        DatasetSpec::Cifar10 { train_files, eval_files } => {
            check_files(train_files)?;
            check_files(eval_files)?;
            (load_cifar10(train_files)?, load_cifar10(eval_files)?)
        }
        DatasetSpec::Cifar100 { train_files, eval_files } => {
            check_files(train_files)?;
            check_files(eval_files)?;
            (load_cifar100(train_files)?, load_cifar100(eval_files)?)
        }
        DatasetSpec::Synth {
            classes,
            per_class,
            eval_per_class,
            seed,
        } => synth_blobs(*classes, per_class + eval_per_class, example_shape, *seed)?.split(classes * per_class)?,
    };
    let train_set = match config.train_subset {
        Some(n) => train_set.head(n),
        None => train_set,
    };
    Ok((train_set, eval_set))
}

fn resolve(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        dir.to_path_buf()
    } else {
        output_root().join(dir)
    }
}

/// Trains one (architecture × activation) cell.
///
/// Writes `curves_<activation>.csv`, `config_<activation>.txt` and,
/// optionally, `checkpoint_<activation>.bin` to the output directory, and
/// updates its `results.txt` table.
pub fn cmd_train(config_path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let config = ExperimentConfig::load(config_path)?;
    let spec = config.model_spec()?;
    let (train_set, eval_set) = load_data(&config, spec.input_shape.dims())?;
    let mut model = spec.build(config.train.seed)?;

    let dir = resolve(&config.output_dir);
    fs::create_dir_all(&dir)?;
    let tag = slug(&config.activation);
    let label = config.activation.label();
    writeln!(
        out,
        "training {} with {label} on {} ({} train / {} eval examples)",
        spec.name,
        config.dataset.name(),
        train_set.len(),
        eval_set.len()
    )?;

    let report = match train(&mut model, &train_set, &eval_set, &config.train) {
        Ok(r) => r,
        Err(Error::Divergence { epoch, loss }) => {
            return Err(CliError::Failure(format!("training diverged in epoch {epoch} (loss {loss})")))
        }
        Err(e) => return Err(e.into()),
    };
    for c in &report.curves {
        writeln!(out, "epoch {:>4}  train {:.6}  eval {:.6}", c.epoch, c.train_metric, c.eval_metric)?;
    }

    write_curves(&report.curves, &dir.join(format!("curves_{tag}.csv")))?;
    fs::write(dir.join(format!("config_{tag}.txt")), config.to_text())?;
    if config.checkpoint {
        save_checkpoint(&mut model, &dir.join(format!("checkpoint_{tag}.bin")))?;
    }
    let (train_metric, eval_metric) = match report.curves.last() {
        Some(c) => (c.train_metric, c.eval_metric),
        None => {
            let kind = config.train.metric;
            (
                evaluate(&mut model, &train_set)?.metric(kind),
                evaluate(&mut model, &eval_set)?.metric(kind),
            )
        }
    };
    results::record(&dir.join("results.txt"), &label, train_metric, eval_metric)?;
    writeln!(out, "{}", results::format_row(&label, train_metric, eval_metric))?;
    Ok(())
}

/// Runs `cases`, printing one line per op; fails naming every op at or
/// above the tolerance.
pub fn run_gradcheck(cases: Vec<GradCheck>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut failed = Vec::new();
    for case in cases {
        let verdict = match (case.run)() {
            Ok(err) if err < TOLERANCE => format!("{err:.3e}  ok"),
            Ok(err) => {
                failed.push(case.name.clone());
                format!("{err:.3e}  FAIL")
            }
            Err(e) => {
                failed.push(case.name.clone());
                format!("error: {e}  FAIL")
            }
        };
        writeln!(out, "{:<14} {verdict}", case.name)?;
    }
    if failed.is_empty() {
        writeln!(out, "all gradient checks below {TOLERANCE:e}")?;
        Ok(())
    } else {
        Err(CliError::Failure(format!("gradient check failed for: {}", failed.join(", "))))
    }
}

pub fn cmd_gradcheck(out: &mut dyn Write) -> Result<(), CliError> {
    run_gradcheck(registry(), out)
}
