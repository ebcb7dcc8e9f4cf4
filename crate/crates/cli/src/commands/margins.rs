use mll_core::elastic::mean_std;
use mll_core::io::write_json;
use mll_core::rng::GENERATOR_ID;
use mll_core::{sample_margins, SeededStream};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::args::{Cli, SampleArgs};
use crate::error::{CliError, CliResult};

/// Asymptotic two-sided KS critical coefficient at the 1% level.
pub const KS_COEFF_1PCT: f64 = 1.628;

#[derive(Debug, Serialize)]
pub struct MarginStats {
    pub generator: &'static str,
    pub seed: u64,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub sample_mean: f64,
    pub sample_std: f64,
    pub min: f64,
    pub max: f64,
    pub stream_pos: u128,
    /// `None` when `std == 0`.
    pub ks_statistic: Option<f64>,
    pub ks_critical_1pct: f64,
    pub ks_pass: Option<bool>,
}

/// Two-sided Kolmogorov–Smirnov statistic against `cdf`.
pub fn ks_statistic(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max(f - i as f64 / n).max((i + 1) as f64 / n - f)
    })
}

pub fn execute(cli: &Cli, args: &SampleArgs) -> CliResult<MarginStats> {
    let seed = cli.seed.unwrap_or(0);
    let mut rng = SeededStream::new(seed);
    let draw = sample_margins(args.n, args.mean, args.std, &mut rng)?;
    let (sample_mean, sample_std) = mean_std(&draw.values);
    let ks_critical_1pct = KS_COEFF_1PCT / (args.n as f64).sqrt();
    let ks_statistic = if args.std > 0.0 {
        let normal = Normal::new(args.mean, args.std).map_err(|e| CliError::Usage(e.to_string()))?;
        Some(ks_statistic(&draw.values, |x| normal.cdf(x)))
    } else {
        None
    };
    let stats = MarginStats {
        generator: GENERATOR_ID,
        seed,
        n: args.n,
        mean: args.mean,
        std: args.std,
        sample_mean,
        sample_std,
        min: draw.values.iter().copied().fold(f64::INFINITY, f64::min),
        max: draw.values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        stream_pos: draw.stream_pos,
        ks_statistic,
        ks_critical_1pct,
        ks_pass: ks_statistic.map(|d| d <= ks_critical_1pct),
    };
    say!("{}", serde_json::to_string_pretty(&stats).map_err(mll_core::Error::from)?);
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out).map_err(|e| mll_core::Error::io(out, e))?;
        write_json(&out.join("margins.json"), &stats)?;
    }
    if args.check && stats.ks_pass == Some(false) {
        return Err(CliError::Tolerance(format!(
            "KS statistic {:.3e} exceeds the 1% critical value {ks_critical_1pct:.3e}",
            stats.ks_statistic.unwrap()
        )));
    }
    Ok(stats)
}
