use std::fs;
use std::path::{Path, PathBuf};

use mll_core::io::{write_json, write_labeled_embeddings};
use mll_core::trainer::{generate_toy_dataset, run_toy};
use serde::Serialize;

use crate::args::{Cli, ToyArgs};
use crate::config::{read_text, RunConfig};
use crate::error::{CliError, CliResult};
use crate::svg::scatter;

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub dir: String,
    pub loss: String,
    pub final_accuracy: f64,
    pub final_loss: Option<f64>,
    pub mean_std: f64,
    pub min_consecutive_angle_deg: f64,
}

/// Config file (or defaults) with command-line overrides applied.
pub fn resolve(cli: &Cli, args: &ToyArgs) -> CliResult<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_toml(&read_text(path)?, &path.display().to_string())?,
        None => RunConfig::default(),
    };
    if let Some(profile) = cli.profile {
        cfg.train = profile.train_config();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(n) = args.iterations {
        cfg.train.total_iterations = n;
    }
    if let Some(spec) = args.loss.spec()? {
        cfg.losses = vec![spec];
    }
    cfg.train.seed = cfg.seed;
    if cfg.losses.is_empty() {
        return Err(CliError::Usage("no losses configured".into()));
    }
    for spec in &cfg.losses {
        spec.validate()?;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

pub fn run_dir_name(index: usize, label: &str) -> String {
    let mut slug = String::new();
    for ch in label.chars() {
        if ch.is_ascii_alphanumeric() {
            slug.push(ch.to_ascii_lowercase());
        } else if ch == '+' {
            slug.push_str("-plus");
        } else if !slug.ends_with('-') {
            slug.push('-');
        }
    }
    format!("{index:02}-{}", slug.trim_matches('-'))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| mll_core::Error::io(path, e).into())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| mll_core::Error::io(path, e).into())
}

/// All losses share the dataset and the seed, so runs are paired.
pub fn execute(cli: &Cli, args: &ToyArgs) -> CliResult<Vec<RunSummary>> {
    let cfg = resolve(cli, args)?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("run_config.toml"), &cfg.to_toml()?)?;
    let dataset = generate_toy_dataset(&cfg.dataset)?;

    let mut summaries = Vec::with_capacity(cfg.losses.len());
    for (i, spec) in cfg.losses.iter().enumerate() {
        let label = spec.label();
        let name = run_dir_name(i, &label);
        let dir: PathBuf = cfg.out.join(&name);
        create_dir(&dir)?;
        let run = run_toy(&dataset, &cfg.model, spec, &cfg.train)?;
        write_file(&dir.join("training_log.csv"), &run.outcome.log.to_csv_string()?)?;
        write_labeled_embeddings(&dir.join("embeddings.bin"), &run.embeddings.features, &run.embeddings.labels)?;
        write_json(&dir.join("geometry.json"), &run.geometry)?;
        let title = format!("{label}, train acc {:.4}", run.outcome.final_accuracy);
        let svg = scatter(&title, &run.embeddings.features, &run.embeddings.labels, &run.geometry)?;
        write_file(&dir.join("scatter.svg"), &svg)?;

        let summary = RunSummary {
            dir: name,
            loss: label,
            final_accuracy: run.outcome.final_accuracy,
            final_loss: run.outcome.log.records.last().map(|r| r.loss),
            mean_std: run.geometry.mean_std,
            min_consecutive_angle_deg: run.geometry.min_consecutive_angle_deg,
        };
        say!(
            "{}: acc {:.4} mean std {:.4} min angle {:.2}",
            summary.dir, summary.final_accuracy, summary.mean_std, summary.min_consecutive_angle_deg
        );
        summaries.push(summary);
    }
    write_json(&cfg.out.join("summary.json"), &summaries)?;
    Ok(summaries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dir_names() {
        assert_eq!(run_dir_name(0, "ArcFace (m=0.5)"), "00-arcface-m-0-5");
        assert_eq!(
            run_dir_name(2, "ElasticFace-Arc+ (m=0.5, sigma=0.0175)"),
            "02-elasticface-arc-plus-m-0-5-sigma-0-0175"
        );
    }
}
