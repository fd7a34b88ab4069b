//! The `pobf` command line.
//!
//! Stages read and write `runs/<run_id>/`; each prints a one-line JSON
//! summary on success. Failures print `{"error": kind, "message": ..}` on
//! stderr and exit 1, or 2 when an earlier stage has not been run, or 3 when
//! a backend fails its health check.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use pobf_core::baseline::FilterMethod;
use pobf_core::FilterWeights;
use serde_json::json;

use crate::backends::Role;
use crate::config::{
    build_backends, missing_role, parse_backend_url, parse_weights, Overrides, RunConfig, BACKEND_URL_ENV,
};
use crate::error::{Error, Result};
use crate::evalkit::{load_predictions, run_report, top1_accuracy};
use crate::filter::{
    benchmark_filters, load_scores, run_selection, score_run, write_scores, FilterInputs, SelectionFile,
};
use crate::genpipe::{load_candidates, run_generation, GenBackends, GenerateOptions};
use crate::manifest::{load_manifest, sample_manifest, LoadedManifest, SampleUnit, Split};
use crate::mixer::{build_mix, summarize_mix};
use crate::run::{write_json, write_jsonl, RunDir};

#[derive(Debug, Parser)]
#[command(name = "pobf", version, about = "Paint-outside-the-box synthetic data engine")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    /// Candidates per real sample.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Score weights `λ1,λ2,λP`.
    #[arg(long, global = true, value_parser = parse_weights, allow_hyphen_values = true)]
    pub weights: Option<FilterWeights>,
    #[arg(long, global = true)]
    pub filter: Option<FilterMethod>,
    /// Caption replacement probability.
    #[arg(long, global = true)]
    pub q: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    /// `ROLE=URL`, repeatable.
    #[arg(long = "backend-url", global = true, value_parser = parse_backend_url)]
    pub backend_url: Vec<(Role, String)>,
    /// Continue an interrupted generation.
    #[arg(long, global = true)]
    pub resume: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate K candidates per training sample.
    Generate,
    /// Score every candidate with the teacher grounder.
    Score,
    /// Select candidates with the configured filter.
    Select,
    /// Build the real + synthetic training mix.
    Mix,
    /// Top-1 accuracy of a predictions file against the manifest.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Run every filter method and the negative-score ablations.
    BenchmarkFilters,
    /// Write report.md, report.json and s1_s2.csv.
    Report,
    /// Convert a COCO instances file plus referring expressions to a manifest.
    ConvertCoco {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        refs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Deterministic fractional subsample of a manifest.
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value = "images")]
        unit: SampleUnit,
        #[arg(long)]
        out: PathBuf,
    },
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            run_id: self.run_id.clone(),
            k: self.k,
            weights: self.weights,
            filter: self.filter,
            q: self.q,
            seed: self.seed,
            parallelism: self.parallelism,
            backend_urls: self.backend_url.clone(),
        }
    }

    fn resolve(&self) -> Result<RunConfig> {
        let env = std::env::var(BACKEND_URL_ENV).ok();
        RunConfig::resolve(self.config.as_deref(), &self.overrides(), env.as_deref())
    }
}

fn manifest(cfg: &RunConfig) -> Result<LoadedManifest> {
    load_manifest(cfg.manifest_path()?)
}

fn snapshot(cfg: &RunConfig, run: &RunDir) -> Result<()> {
    write_json(&run.config_resolved(), cfg)
}

fn generate(cfg: &RunConfig, resume: bool) -> Result<serde_json::Value> {
    let m = manifest(cfg)?;
    let resolved = build_backends(cfg, &[Role::Caption, Role::Inpaint], Some(&m.manifest))?;
    let captioner = resolved.backends.captioner.clone().ok_or_else(|| missing_role(Role::Caption))?;
    let inpainter = resolved.backends.inpainter.clone().ok_or_else(|| missing_role(Role::Inpaint))?;
    resolved.check_health()?;
    let run = cfg.run_dir();
    let opts = GenerateOptions {
        k: cfg.k,
        params: cfg.gen.params(),
        run_seed: cfg.seed,
        parallelism: cfg.parallelism,
        resume,
    };
    let summary = run_generation(
        &m,
        &cfg.image_root,
        &run,
        &opts,
        GenBackends { captioner: captioner.as_ref(), inpainter: inpainter.as_ref() },
    )?;
    snapshot(cfg, &run)?;
    Ok(serde_json::to_value(summary).expect("summary serializes"))
}

fn score(cfg: &RunConfig) -> Result<serde_json::Value> {
    let run = cfg.run_dir();
    let candidates = load_candidates(&run)?;
    let m = manifest(cfg)?;
    let resolved = build_backends(cfg, &[Role::Ground], Some(&m.manifest))?;
    let grounder = resolved.backends.grounder.clone().ok_or_else(|| missing_role(Role::Ground))?;
    resolved.check_health()?;
    let scored = score_run(&run, &m.manifest, &candidates, grounder.as_ref(), &cfg.weights(), cfg.parallelism)?;
    let selection = write_scores(&run, &scored.records, cfg.k)?;
    snapshot(cfg, &run)?;
    Ok(json!({
        "scored": scored.records.len(),
        "unscored_samples": scored.unscored.keys().collect::<Vec<_>>(),
        "selected": selection.selected_count(),
    }))
}

/// Load what `method` needs and run it.
fn with_filter_inputs<T>(
    cfg: &RunConfig,
    methods: &[FilterMethod],
    f: impl FnOnce(&FilterInputs<'_>) -> Result<T>,
) -> Result<T> {
    let run = cfg.run_dir();
    let candidates = load_candidates(&run)?;
    let need_scores = methods.iter().any(|m| m.needs_scores());
    let scores = if need_scores { Some(load_scores(&run)?) } else { None };
    let m = manifest(cfg)?;
    let need_embedder = methods.iter().any(|m| m.needs_embedder());
    let resolved = if need_embedder {
        build_backends(cfg, &[Role::Embed], Some(&m.manifest))?
    } else {
        build_backends(cfg, &[], None)?
    };
    resolved.check_health()?;
    let embedder = resolved.backends.embedder.clone();
    let inputs = FilterInputs {
        run: &run,
        manifest: &m.manifest,
        candidates: &candidates,
        scores: scores.as_deref(),
        embedder: embedder.as_deref(),
        k: cfg.k,
        seed: cfg.seed,
        parallelism: cfg.parallelism,
    };
    f(&inputs)
}

fn select(cfg: &RunConfig) -> Result<serde_json::Value> {
    let method = cfg.method()?;
    let weights = cfg.weights();
    if method.needs_embedder() && !cfg.backends.contains_key(&Role::Embed) {
        return Err(missing_role(Role::Embed));
    }
    let selection = with_filter_inputs(cfg, &[method], |inputs| run_selection(method, &weights, inputs))?;
    let run = cfg.run_dir();
    write_json(&run.selection_json(), &SelectionFile::new(method, &weights, &selection))?;
    snapshot(cfg, &run)?;
    Ok(json!({
        "method": method.name(),
        "selected": selection.selected_count(),
        "excluded": selection.excluded,
    }))
}

fn mix(cfg: &RunConfig) -> Result<serde_json::Value> {
    let run = cfg.run_dir();
    let selection = crate::filter::load_selection(&run)?;
    let candidates = load_candidates(&run)?;
    let m = manifest(cfg)?;
    let records = build_mix(&m.manifest, &selection, &candidates, &cfg.mix)?;
    let summary = summarize_mix(&records);
    write_jsonl(&run.mix_jsonl(), &records)?;
    write_json(&run.mix_summary_json(), &summary)?;
    snapshot(cfg, &run)?;
    Ok(serde_json::to_value(summary).expect("summary serializes"))
}

fn benchmark(cfg: &RunConfig) -> Result<serde_json::Value> {
    let has_embedder = cfg.backends.contains_key(&Role::Embed);
    let methods: Vec<FilterMethod> =
        FilterMethod::ALL.into_iter().filter(|m| has_embedder || !m.needs_embedder()).collect();
    let entries = with_filter_inputs(cfg, &methods, |inputs| benchmark_filters(&cfg.weights(), inputs))?;
    snapshot(cfg, &cfg.run_dir())?;
    Ok(serde_json::to_value(entries).expect("entries serialize"))
}

fn execute(cli: &Cli) -> Result<serde_json::Value> {
    match &cli.command {
        Command::ConvertCoco { annotations, refs, out } => {
            let m = crate::coco::convert_coco_refexp(annotations, refs)?;
            m.manifest.write(out)?;
            return Ok(json!({ "records": m.manifest.len(), "clamped": m.warnings.len() }));
        }
        Command::Sample { manifest, fraction, unit, out } => {
            let m = load_manifest(manifest)?;
            let sampled = sample_manifest(&m.manifest, *fraction, *unit, cli.global.seed.unwrap_or(0))?;
            sampled.write(out)?;
            return Ok(json!({ "records": sampled.len(), "of": m.manifest.len() }));
        }
        _ => {}
    }
    let cfg = cli.global.resolve()?;
    info!("run {} under {}", cfg.run_id, cfg.runs_dir.display());
    match &cli.command {
        Command::Generate => generate(&cfg, cli.global.resume),
        Command::Score => score(&cfg),
        Command::Select => select(&cfg),
        Command::Mix => mix(&cfg),
        Command::Eval { predictions, split } => {
            let m = manifest(&cfg)?;
            let preds = load_predictions(predictions)?;
            let acc = top1_accuracy(&preds, &m.manifest, *split)?;
            Ok(serde_json::to_value(acc).expect("accuracy serializes"))
        }
        Command::BenchmarkFilters => benchmark(&cfg),
        Command::Report => {
            let report = run_report(&cfg.run_dir())?;
            Ok(serde_json::to_value(report).expect("report serializes"))
        }
        Command::ConvertCoco { .. } | Command::Sample { .. } => unreachable!("handled above"),
    }
}

/// Machine-readable error line for stderr.
pub fn error_json(e: &Error) -> serde_json::Value {
    let mut v = json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::MissingPrerequisite { stage, .. } = e {
        v["stage"] = json!(stage);
    }
    v
}

pub fn run(cli: Cli) -> ExitCode {
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.exit_code())
        }
    }
}
