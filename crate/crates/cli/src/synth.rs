use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use wmscore::io::{write_annotation, write_likelihood_png, write_mask_png, TrainingRecord};
use wmscore::{generate_dataset, ScoringParams, SynthSpec};

use crate::config::{CommonArgs, PipelineConfig};
use crate::error::{CliError, CliResult};

pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.9), seed_from_u64(seed), stream = image index";

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON dataset recipe; may carry a "params" object
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Deserialize)]
struct SpecFile {
    #[serde(flatten)]
    spec: SynthSpec,
    params: Option<ScoringParams>,
}

#[derive(Debug, Serialize)]
struct ManifestImage {
    image_id: String,
    positive: bool,
    annotation: String,
    likelihood: String,
    truth: String,
    oracle_score: f64,
    responses: Vec<u8>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    generator: &'static str,
    spec: &'a SynthSpec,
    params: ScoringParams,
    images: Vec<ManifestImage>,
}

fn write(path: &std::path::Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn run(common: &CommonArgs, args: &SynthArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.spec)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.spec.display())))?;
    let file: SpecFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.spec.display())))?;
    let cfg = PipelineConfig::resolve(common, file.params)?;
    file.spec.validate().map_err(CliError::config)?;
    let images = generate_dataset(&file.spec, &cfg.params).map_err(CliError::config)?;

    for sub in ["annotations", "likelihood", "truth"] {
        let d = args.out.join(sub);
        fs::create_dir_all(&d).map_err(|e| CliError::Input(format!("{}: {e}", d.display())))?;
    }
    let mut manifest = Vec::with_capacity(images.len());
    let mut training = String::new();
    let mut oracle = String::new();
    for img in &images {
        let id = &img.annotation.image_id;
        let annotation = format!("annotations/{id}.json");
        let likelihood = format!("likelihood/{id}.png");
        let truth = format!("truth/{id}.png");
        write_annotation(&args.out.join(&annotation), &img.annotation).map_err(CliError::input)?;
        write_likelihood_png(&args.out.join(&likelihood), &img.likelihood).map_err(CliError::input)?;
        write_mask_png(&args.out.join(&truth), &img.truth).map_err(CliError::input)?;

        let rated = TrainingRecord {
            image_id: id.clone(),
            mask_path: truth.clone(),
            responses: Some(img.responses.to_vec()),
            human_score: None,
        };
        let exact = TrainingRecord {
            responses: None,
            human_score: Some(img.oracle_score),
            ..rated.clone()
        };
        training.push_str(&serde_json::to_string(&rated).map_err(CliError::input)?);
        training.push('\n');
        oracle.push_str(&serde_json::to_string(&exact).map_err(CliError::input)?);
        oracle.push('\n');

        manifest.push(ManifestImage {
            image_id: id.clone(),
            positive: img.is_positive(),
            annotation,
            likelihood,
            truth,
            oracle_score: img.oracle_score,
            responses: img.responses.to_vec(),
        });
    }
    write(&args.out.join("training.jsonl"), &training)?;
    write(&args.out.join("oracle.jsonl"), &oracle)?;
    let m = Manifest {
        generator: GENERATOR,
        spec: &file.spec,
        params: cfg.params,
        images: manifest,
    };
    let mut text = serde_json::to_string_pretty(&m).map_err(CliError::input)?;
    text.push('\n');
    write(&args.out.join("manifest.json"), &text)?;
    eprintln!("synth: wrote {} images to {}", images.len(), args.out.display());
    Ok(())
}
