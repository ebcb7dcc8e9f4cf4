use mll_core::io::{read_embeddings, read_labeled_embeddings, read_pairs, write_json};
use mll_core::metrics::{
    cosine_scores, geometry_report, rank1, tar_at_far, verification_accuracy_kfold, GeometryReport, TarResult,
    VerificationResult,
};
use serde::Serialize;

use crate::args::{Cli, EvalArgs};
use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct Rank1Report {
    pub gallery: String,
    pub probes: usize,
    pub gallery_size: usize,
    pub accuracy: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub embeddings: String,
    pub count: usize,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationResult>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tar_at_far: Vec<TarResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank1: Option<Rank1Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryReport>,
}

pub fn execute(cli: &Cli, args: &EvalArgs) -> CliResult<EvalReport> {
    if args.pairs.is_none() && args.gallery.is_none() && !args.geometry {
        return Err(CliError::Usage("nothing to evaluate: pass --pairs, --gallery or --geometry".into()));
    }
    if !args.far.is_empty() && args.pairs.is_none() {
        return Err(CliError::Usage("--far needs --pairs".into()));
    }
    let needs_labels = args.gallery.is_some() || args.geometry;
    let (features, labels) = if needs_labels {
        let (m, l) = read_labeled_embeddings(&args.embeddings)?;
        (m, Some(l))
    } else {
        (read_embeddings(&args.embeddings)?, None)
    };

    let mut report = EvalReport {
        embeddings: args.embeddings.display().to_string(),
        count: features.rows(),
        dim: features.cols(),
        pairs: None,
        verification: None,
        tar_at_far: Vec::new(),
        rank1: None,
        geometry: None,
    };

    if let Some(path) = &args.pairs {
        let protocol = read_pairs(path)?;
        let scores = cosine_scores(&features, &protocol)?;
        report.pairs = Some(path.display().to_string());
        report.verification = Some(verification_accuracy_kfold(&scores, protocol.num_folds)?);
        let (genuine, impostor) = (scores.genuine_scores(), scores.impostor_scores());
        for &far in &args.far {
            report.tar_at_far.push(tar_at_far(&genuine, &impostor, far)?);
        }
    }

    if let Some(path) = &args.gallery {
        let (gallery, gallery_labels) = read_labeled_embeddings(path)?;
        let probe_labels = labels.as_deref().unwrap_or_default();
        report.rank1 = Some(Rank1Report {
            gallery: path.display().to_string(),
            probes: features.rows(),
            gallery_size: gallery.rows(),
            accuracy: rank1(&features, probe_labels, &gallery, &gallery_labels)?,
        });
    }

    if args.geometry {
        report.geometry = Some(geometry_report(&features, labels.as_deref().unwrap_or_default())?);
    }

    say!("{}", serde_json::to_string_pretty(&report).map_err(mll_core::Error::from)?);
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out).map_err(|e| mll_core::Error::io(out, e))?;
        write_json(&out.join("eval.json"), &report)?;
    }
    Ok(report)
}
