use mll_core::gradcheck::{family_grid, random_instance, run_suite, FamilyResult, GradCheckConfig};
use mll_core::io::write_json;
use mll_core::loss::{MarginFamily, DEFAULT_SCALE};
use mll_core::{margin_softmax_loss, MarginSpec, SeededStream};
use serde::Serialize;

use crate::args::{Cli, GradcheckArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct SigmaZeroCheck {
    pub elastic: String,
    pub fixed: String,
    pub max_abs_loss_diff: f64,
    pub max_abs_grad_diff: f64,
}

#[derive(Debug, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub config: GradCheckConfig,
    pub families: Vec<FamilyResult>,
    pub sigma_zero: Vec<SigmaZeroCheck>,
    pub passed: bool,
}

/// Elastic spec at σ = 0 (plain and plus) paired with its fixed-margin loss.
fn sigma_zero_pairs(specs: &[MarginSpec]) -> Vec<(MarginSpec, MarginSpec)> {
    let mut margins: Vec<MarginFamily> = Vec::new();
    for s in specs.iter().filter(|s| s.elastic.is_some()) {
        if !margins.contains(&s.family) {
            margins.push(s.family);
        }
    }
    if margins.is_empty() {
        margins = vec![MarginFamily::AdditiveAngular { m2: 0.5 }, MarginFamily::AdditiveCosine { m3: 0.35 }];
    }
    let mut out = Vec::new();
    for family in margins {
        let (arc, m) = match family {
            MarginFamily::AdditiveAngular { m2 } => (true, m2),
            MarginFamily::AdditiveCosine { m3 } => (false, m3),
            _ => continue,
        };
        let s = DEFAULT_SCALE;
        let fixed = if arc { MarginSpec::arcface(m, s) } else { MarginSpec::cosface(m, s) };
        for plus in [false, true] {
            let elastic = match (arc, plus) {
                (true, false) => MarginSpec::elastic_arc(m, 0.0, s),
                (true, true) => MarginSpec::elastic_arc_plus(m, 0.0, s),
                (false, false) => MarginSpec::elastic_cos(m, 0.0, s),
                (false, true) => MarginSpec::elastic_cos_plus(m, 0.0, s),
            };
            out.push((elastic, fixed));
        }
    }
    out
}

fn sigma_zero(elastic: &MarginSpec, fixed: &MarginSpec, trials: usize, seed: u64) -> mll_core::Result<SigmaZeroCheck> {
    let mut rng = SeededStream::split(seed, u64::MAX);
    let (mut dl, mut dg) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let (batch, weights) = random_instance(&mut rng, 8, 8, 4);
        let mut r = rng.clone();
        let a = margin_softmax_loss(&batch, &weights, elastic, &mut r)?;
        let b = margin_softmax_loss(&batch, &weights, fixed, &mut rng)?;
        dl = a
            .per_sample_loss
            .iter()
            .zip(&b.per_sample_loss)
            .fold(dl.max((a.mean_loss - b.mean_loss).abs()), |m, (x, y)| m.max((x - y).abs()));
        dg = dg
            .max(a.grad_features.max_abs_diff(&b.grad_features))
            .max(a.grad_weights.max_abs_diff(&b.grad_weights));
    }
    Ok(SigmaZeroCheck {
        elastic: elastic.label(),
        fixed: fixed.label(),
        max_abs_loss_diff: dl,
        max_abs_grad_diff: dg,
    })
}

pub fn execute(cli: &Cli, args: &GradcheckArgs) -> CliResult<GradcheckReport> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be >= 1".into()));
    }
    let specs = match args.loss.spec()? {
        Some(spec) => vec![spec],
        None => family_grid(DEFAULT_SCALE),
    };
    let seed = cli.seed.unwrap_or(0);
    let config = GradCheckConfig::default();
    let families = run_suite(&specs, args.trials, seed, &config)?;
    let sigma_zero = sigma_zero_pairs(&specs)
        .iter()
        .map(|(e, f)| sigma_zero(e, f, args.trials, seed))
        .collect::<mll_core::Result<Vec<_>>>()?;

    for f in &families {
        say!(
            "{} {}: {} entries, {} failures, max rel err {:.3e}",
            if f.report.passed() { "PASS" } else { "FAIL" },
            f.label,
            f.report.entries,
            f.report.failures,
            f.report.max_rel_error
        );
    }
    for z in &sigma_zero {
        let ok = z.max_abs_loss_diff == 0.0 && z.max_abs_grad_diff == 0.0;
        say!(
            "{} {} vs {}: max |dloss| {:e}, max |dgrad| {:e}",
            if ok { "PASS" } else { "FAIL" },
            z.elastic,
            z.fixed,
            z.max_abs_loss_diff,
            z.max_abs_grad_diff
        );
    }

    let passed = families.iter().all(|f| f.report.passed())
        && sigma_zero.iter().all(|z| z.max_abs_loss_diff == 0.0 && z.max_abs_grad_diff == 0.0);
    let report = GradcheckReport {
        seed,
        config,
        families,
        sigma_zero,
        passed,
    };
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out).map_err(|e| mll_core::Error::io(out, e))?;
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    if !passed {
        let failing: Vec<&str> = report
            .families
            .iter()
            .filter(|f| !f.report.passed())
            .map(|f| f.label.as_str())
            .collect();
        return Err(CliError::Tolerance(format!(
            "gradient check failed: families {failing:?}, sigma = 0 mismatches {}",
            report.sigma_zero.iter().filter(|z| z.max_abs_loss_diff != 0.0 || z.max_abs_grad_diff != 0.0).count()
        )));
    }
    Ok(report)
}
