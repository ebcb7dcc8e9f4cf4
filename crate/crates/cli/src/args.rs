use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mll_core::loss::DEFAULT_SCALE;
use mll_core::MarginSpec;

use crate::config::Profile;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "mll", version, about = "Margin-penalty softmax losses: training, evaluation and checks")]
pub struct Cli {
    /// Base seed. Overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory. Overrides the config file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Training schedule preset. Overrides the config file's `[train]` table.
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy embedding network under each configured loss and write
    /// logs, embeddings, geometry reports and an SVG scatter per run.
    Toy(ToyArgs),
    /// Score an embedding file: k-fold verification, TAR@FAR, rank-1 and
    /// 2-D geometry.
    Eval(EvalArgs),
    /// Borda-count a grid of loss configurations, from given accuracies or
    /// by training each at toy scale.
    Sweep(SweepArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Draw elastic margins and report their statistics.
    SampleMargins(SampleArgs),
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override the number of training iterations.
    #[arg(long)]
    pub iterations: Option<usize>,

    /// Train only this loss instead of the configured list.
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Embedding file (labels are read from the sibling `.labels` file
    /// when a metric needs them).
    #[arg(long)]
    pub embeddings: PathBuf,

    /// Pair list for verification accuracy and TAR@FAR.
    #[arg(long)]
    pub pairs: Option<PathBuf>,

    /// FAR targets for TAR@FAR; needs `--pairs`.
    #[arg(long = "far", value_delimiter = ',')]
    pub far: Vec<f64>,

    /// Gallery embedding file for rank-1 identification; the main file
    /// provides the probes.
    #[arg(long)]
    pub gallery: Option<PathBuf>,

    /// Report the class geometry of 2-D embeddings.
    #[arg(long)]
    pub geometry: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// TOML grid: benchmarks, groups of configs, and optionally a `[toy]`
    /// table for training mode.
    #[arg(long)]
    pub grid: PathBuf,

    /// Override the training iterations in training mode.
    #[arg(long)]
    pub iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random instances per configuration.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,

    /// Check only this loss instead of the full family grid.
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub n: usize,

    #[arg(long, default_value_t = 0.5)]
    pub mean: f64,

    #[arg(long, default_value_t = 0.05)]
    pub std: f64,

    /// Exit with status 1 when the KS test rejects at the 1% level.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossName {
    Softmax,
    Modified,
    Sphereface,
    Arcface,
    Cosface,
    ElasticArc,
    ElasticCos,
}

#[derive(Debug, Clone, Args)]
pub struct LossArgs {
    #[arg(long, value_enum)]
    pub loss: Option<LossName>,

    /// m1 for SphereFace, m for ArcFace, CosFace and the elastic losses.
    #[arg(long)]
    pub margin: Option<f64>,

    /// Spread of the elastic margin.
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Proximity-sorted margin assignment (elastic losses only).
    #[arg(long)]
    pub plus: bool,

    /// Logit scale s (default 64)
    #[arg(long)]
    pub scale: Option<f64>,
}

impl LossArgs {
    /// `None` when no `--loss` was given.
    pub fn spec(&self) -> CliResult<Option<MarginSpec>> {
        let Some(name) = self.loss else {
            if self.margin.is_some() || self.sigma.is_some() || self.plus || self.scale.is_some() {
                return Err(CliError::Usage("--margin, --sigma, --plus and --scale need --loss".into()));
            }
            return Ok(None);
        };
        let s = self.scale.unwrap_or(DEFAULT_SCALE);
        let m = |default: f64| self.margin.unwrap_or(default);
        let elastic = matches!(name, LossName::ElasticArc | LossName::ElasticCos);
        if !elastic && (self.sigma.is_some() || self.plus) {
            return Err(CliError::Usage("--sigma and --plus apply to elastic losses only".into()));
        }
        if matches!(name, LossName::Softmax | LossName::Modified) && self.margin.is_some() {
            return Err(CliError::Usage("--margin does not apply to margin-free losses".into()));
        }
        let sigma = self.sigma.unwrap_or(0.05);
        let spec = match (name, self.plus) {
            (LossName::Softmax, _) => MarginSpec::plain(),
            (LossName::Modified, _) => MarginSpec::modified(s),
            (LossName::Sphereface, _) => MarginSpec::sphereface(m(2.0), s),
            (LossName::Arcface, _) => MarginSpec::arcface(m(0.5), s),
            (LossName::Cosface, _) => MarginSpec::cosface(m(0.35), s),
            (LossName::ElasticArc, false) => MarginSpec::elastic_arc(m(0.5), sigma, s),
            (LossName::ElasticArc, true) => MarginSpec::elastic_arc_plus(m(0.5), sigma, s),
            (LossName::ElasticCos, false) => MarginSpec::elastic_cos(m(0.35), sigma, s),
            (LossName::ElasticCos, true) => MarginSpec::elastic_cos_plus(m(0.35), sigma, s),
        };
        spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(Some(spec))
    }
}
