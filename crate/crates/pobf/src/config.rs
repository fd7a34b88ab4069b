//! Run configuration: a TOML file, command-line overrides and the
//! environment, resolved into one [`RunConfig`] that is snapshotted to
//! `config.resolved.json`.
//!
//! ```toml
//! manifest = "data/refcoco.jsonl"   # relative paths resolve against this file
//! image_root = "data/images"
//! runs_dir = "runs"
//! run_id = "demo"
//! k = 4
//! seed = 0
//! parallelism = 4
//! filter_method = "pobf"
//! weights = [1.0, 1.0, 0.5]
//!
//! [gen]
//! strength = 0.9
//! steps = 45
//! guidance_scale = 7.5
//! top_p = 0.9
//!
//! [mix]
//! q = 0.3
//! mode = "dual_text"                # or "materialized"
//! seed = 0                          # defaults to the run seed
//!
//! [backends.ground]
//! url = "http://localhost:8000"
//! timeout_secs = 120
//! max_retries = 3
//! parallelism = 4
//! ```
//!
//! A file ending in `.json` is read as the JSON equivalent: the same keys,
//! tables as objects, e.g. `{"k": 4, "backends": {"ground": {"url": "mock:"}}}`.
//!
//! Backend URLs starting with `mock:` select the in-process mocks:
//! `mock:` (for `ground`, same as `mock:oracle`), `mock:oracle`,
//! `mock:noisy:<sigma>` and `mock:fixed:<cx>,<cy>,<w>,<h>`. Oracle and noisy
//! grounders look boxes up by real text in the manifest, with a prior of
//! `[0.5, 0.5, 0.5, 0.5]` for the empty query. `POBF_BACKEND_URL` fills every
//! role without an explicit URL.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use pobf_core::baseline::FilterMethod;
use pobf_core::{FilterWeights, NormBox};
use serde::{Deserialize, Serialize};

use crate::backends::http::{check_health, BackendEndpoint, HttpBackend};
use crate::backends::mock::{MockCaptioner, MockEmbedder, MockGrounder, MockInpainter, OracleTable};
use crate::backends::{Backends, GenerationParams, Role};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::mixer::{MixMode, MixPolicy};
use crate::run::{read_text, RunDir};

pub const BACKEND_URL_ENV: &str = "POBF_BACKEND_URL";
pub const MOCK_PRIOR: [f64; 4] = [0.5, 0.5, 0.5, 0.5];

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileGen {
    strength: Option<f64>,
    steps: Option<u32>,
    guidance_scale: Option<f64>,
    top_p: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileMix {
    q: Option<f64>,
    mode: Option<MixMode>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileBackend {
    url: Option<String>,
    timeout_secs: Option<f64>,
    max_retries: Option<u32>,
    parallelism: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    manifest: Option<PathBuf>,
    image_root: Option<PathBuf>,
    runs_dir: Option<PathBuf>,
    run_id: Option<String>,
    k: Option<usize>,
    seed: Option<u64>,
    parallelism: Option<usize>,
    filter_method: Option<String>,
    weights: Option<[f64; 3]>,
    #[serde(default)]
    gen: FileGen,
    #[serde(default)]
    mix: FileMix,
    #[serde(default)]
    backends: BTreeMap<Role, FileBackend>,
}

/// Command-line values that beat the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub run_id: Option<String>,
    pub k: Option<usize>,
    pub weights: Option<FilterWeights>,
    pub filter: Option<FilterMethod>,
    pub q: Option<f64>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub backend_urls: Vec<(Role, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSettings {
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub top_p: f64,
}

impl GenSettings {
    pub fn params(&self) -> GenerationParams {
        GenerationParams {
            strength: self.strength,
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            top_p: self.top_p,
            seed: 0,
        }
    }
}

/// Fully resolved configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub image_root: PathBuf,
    pub runs_dir: PathBuf,
    pub run_id: String,
    pub k: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub filter_method: String,
    pub weights: [f64; 3],
    pub gen: GenSettings,
    pub mix: MixPolicy,
    pub backends: BTreeMap<Role, BackendEndpoint>,
}

fn parse_method(name: &str) -> Result<FilterMethod> {
    name.parse().map_err(|e: pobf_core::baseline::UnknownMethod| Error::Config(e.to_string()))
}

impl RunConfig {
    /// Resolve from an optional TOML (or `.json`) file, overrides and the value of
    /// `POBF_BACKEND_URL`.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides, env_url: Option<&str>) -> Result<Self> {
        let (file, base) = match path {
            Some(p) => {
                let text = read_text(p)?;
                let file: FileConfig = if p.extension().is_some_and(|e| e == "json") {
                    serde_json::from_str(&text).map_err(|e| Error::Parse {
                        path: p.to_path_buf(),
                        line: e.line(),
                        message: e.to_string(),
                    })?
                } else {
                    toml::from_str(&text).map_err(|e| Error::Parse {
                        path: p.to_path_buf(),
                        line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
                        message: e.message().to_string(),
                    })?
                };
                (file, p.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let seed = overrides.seed.or(file.seed).unwrap_or(0);
        let parallelism = overrides.parallelism.or(file.parallelism).unwrap_or(4);
        let filter_method = match overrides.filter {
            Some(m) => m,
            None => parse_method(file.filter_method.as_deref().unwrap_or("pobf"))?,
        };
        let weights = overrides.weights.map(FilterWeights::to_array).or(file.weights).unwrap_or([1.0, 1.0, 0.5]);
        let defaults = GenerationParams::default();
        let gen = GenSettings {
            strength: file.gen.strength.unwrap_or(defaults.strength),
            steps: file.gen.steps.unwrap_or(defaults.steps),
            guidance_scale: file.gen.guidance_scale.unwrap_or(defaults.guidance_scale),
            top_p: file.gen.top_p.unwrap_or(defaults.top_p),
        };
        let mix = MixPolicy {
            q: overrides.q.or(file.mix.q).unwrap_or(0.3),
            mode: file.mix.mode.unwrap_or_default(),
            seed: file.mix.seed.unwrap_or(seed),
        };

        let mut backends = BTreeMap::new();
        for role in Role::ALL {
            let entry = file.backends.get(&role).cloned().unwrap_or_default();
            let url = overrides
                .backend_urls
                .iter()
                .rev()
                .find(|(r, _)| *r == role)
                .map(|(_, u)| u.clone())
                .or(entry.url)
                .or_else(|| env_url.filter(|u| !u.is_empty()).map(str::to_string));
            let Some(url) = url else { continue };
            let mut ep = BackendEndpoint::new(url);
            ep.parallelism = entry.parallelism.unwrap_or(parallelism);
            if let Some(t) = entry.timeout_secs {
                ep.timeout_secs = t;
            }
            if let Some(r) = entry.max_retries {
                ep.max_retries = r;
            }
            backends.insert(role, ep);
        }

        let cfg = RunConfig {
            manifest: file.manifest.map(rel),
            image_root: rel(file.image_root.unwrap_or_default()),
            runs_dir: rel(file.runs_dir.unwrap_or_else(|| PathBuf::from("runs"))),
            run_id: overrides.run_id.clone().or(file.run_id).unwrap_or_else(|| "default".to_string()),
            k: overrides.k.or(file.k).unwrap_or(4),
            seed,
            parallelism,
            filter_method: filter_method.name().to_string(),
            weights,
            gen,
            mix,
            backends,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if !self.weights.iter().all(|w| w.is_finite()) {
            return Err(Error::Config("weights must be finite".into()));
        }
        crate::run::check_path_component(&self.run_id)
            .map_err(|_| Error::Config(format!("bad run id `{}`", self.run_id)))?;
        self.gen.params().validate().map_err(Error::Config)?;
        self.mix.validate()?;
        for ep in self.backends.values() {
            if !ep.base_url.starts_with("mock:") {
                ep.validate().map_err(Error::Config)?;
            }
        }
        Ok(())
    }

    pub fn run_dir(&self) -> RunDir {
        RunDir::new(&self.runs_dir, &self.run_id)
    }

    pub fn weights(&self) -> FilterWeights {
        FilterWeights::new(self.weights[0], self.weights[1], self.weights[2])
    }

    pub fn method(&self) -> Result<FilterMethod> {
        parse_method(&self.filter_method)
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest.as_deref().ok_or_else(|| Error::Config("no manifest configured".into()))
    }
}

/// Weights from `λ1,λ2,λP`.
pub fn parse_weights(s: &str) -> std::result::Result<FilterWeights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("bad weight `{p}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a.is_finite() && b.is_finite() && c.is_finite() => Ok(FilterWeights::new(a, b, c)),
        [_, _, _] => Err("weights must be finite".into()),
        _ => Err(format!("expected three comma-separated weights, got {}", parts.len())),
    }
}

/// `ROLE=URL`.
pub fn parse_backend_url(s: &str) -> std::result::Result<(Role, String), String> {
    let (role, url) = s.split_once('=').ok_or_else(|| format!("expected ROLE=URL, got `{s}`"))?;
    Ok((role.parse()?, url.to_string()))
}

fn oracle_table(manifest: &Manifest) -> OracleTable {
    let mut table = OracleTable::with_prior(NormBox(MOCK_PRIOR));
    for r in &manifest.records {
        table.insert_text(&r.text, r.bbox.normalize(r.image_size));
    }
    table
}

fn mock_grounder(spec: &str, manifest: Option<&Manifest>, seed: u64) -> Result<MockGrounder> {
    let need_manifest = || manifest.ok_or_else(|| Error::Config(format!("`mock:{spec}` needs the run manifest")));
    if spec.is_empty() || spec == "oracle" {
        return Ok(MockGrounder { seed, ..MockGrounder::oracle(oracle_table(need_manifest()?)) });
    }
    if let Some(sigma) = spec.strip_prefix("noisy:") {
        let sigma: f64 = sigma.parse().map_err(|_| Error::Config(format!("bad noise level `{sigma}`")))?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Config(format!("noise level {sigma} must be non-negative")));
        }
        return Ok(MockGrounder::noisy(oracle_table(need_manifest()?), sigma, seed));
    }
    if let Some(values) = spec.strip_prefix("fixed:") {
        let v: Vec<f64> = values
            .split(',')
            .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad fixed box `{values}`"))))
            .collect::<Result<_>>()?;
        let arr: [f64; 4] = v.try_into().map_err(|_| Error::Config(format!("fixed box needs 4 values: `{values}`")))?;
        let nb = NormBox::new(arr).map_err(|e| Error::Config(e.to_string()))?;
        return Ok(MockGrounder { seed, ..MockGrounder::fixed(nb) });
    }
    Err(Error::Config(format!("unknown mock grounder `mock:{spec}`")))
}

/// Backends for `roles`, plus the HTTP ones that must pass a health check.
pub struct ResolvedBackends {
    pub backends: Backends,
    pub http: Vec<(Role, Arc<HttpBackend>)>,
}

impl ResolvedBackends {
    /// Probe `/healthz` of every HTTP backend.
    pub fn check_health(&self) -> Result<()> {
        for (role, backend) in &self.http {
            let h = check_health(backend, *role);
            if !h.ok {
                return Err(Error::Health {
                    role: role.name().to_string(),
                    message: format!("{}: {}", h.url, h.message),
                });
            }
        }
        Ok(())
    }
}

/// Build the configured backends for `roles`. A role without a URL is
/// left unset; callers decide whether it is required.
pub fn build_backends(cfg: &RunConfig, roles: &[Role], manifest: Option<&Manifest>) -> Result<ResolvedBackends> {
    let mut out = ResolvedBackends { backends: Backends::default(), http: Vec::new() };
    for &role in roles {
        let Some(ep) = cfg.backends.get(&role) else { continue };
        let b = &mut out.backends;
        if let Some(spec) = ep.base_url.strip_prefix("mock:") {
            let seed = cfg.seed;
            match role {
                Role::Caption => b.captioner = Some(Arc::new(MockCaptioner { seed })),
                Role::Inpaint => b.inpainter = Some(Arc::new(MockInpainter { seed })),
                Role::Embed => b.embedder = Some(Arc::new(MockEmbedder { seed })),
                Role::Ground => b.grounder = Some(Arc::new(mock_grounder(spec, manifest, seed)?)),
            }
            continue;
        }
        let http = Arc::new(HttpBackend::new(ep.clone()).map_err(Error::Config)?);
        match role {
            Role::Caption => b.captioner = Some(http.clone()),
            Role::Inpaint => b.inpainter = Some(http.clone()),
            Role::Ground => b.grounder = Some(http.clone()),
            Role::Embed => b.embedder = Some(http.clone()),
        }
        out.http.push((role, http));
    }
    Ok(out)
}

pub fn missing_role(role: Role) -> Error {
    Error::Config(format!(
        "no `{role}` backend configured (set [backends.{role}] url, --backend-url {role}=URL or {BACKEND_URL_ENV})"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, text: &str) -> PathBuf {
        let p = dir.join("run.toml");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn defaults_follow_the_method() {
        let cfg = RunConfig::resolve(None, &Overrides::default(), None).unwrap();
        assert_eq!(cfg.k, 4);
        assert_eq!(cfg.weights, [1.0, 1.0, 0.5]);
        assert_eq!((cfg.gen.strength, cfg.gen.steps, cfg.gen.guidance_scale, cfg.gen.top_p), (0.9, 45, 7.5, 0.9));
        assert_eq!((cfg.mix.q, cfg.mix.mode), (0.3, MixMode::DualText));
        assert_eq!(cfg.filter_method, "pobf");
    }

    #[test]
    fn flags_beat_file_and_paths_are_relative_to_it() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "manifest = \"m.jsonl\"\nk = 2\nseed = 5\n[backends.ground]\nurl = \"http://a\"\n");
        let o = Overrides { k: Some(3), backend_urls: vec![(Role::Ground, "http://b".into())], ..Default::default() };
        let cfg = RunConfig::resolve(Some(&p), &o, Some("http://env")).unwrap();
        assert_eq!(cfg.k, 3);
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.mix.seed, 5);
        assert_eq!(cfg.manifest.unwrap(), dir.path().join("m.jsonl"));
        assert_eq!(cfg.backends[&Role::Ground].base_url, "http://b");
        assert_eq!(cfg.backends[&Role::Caption].base_url, "http://env");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(RunConfig::resolve(Some(&write(dir.path(), "kk = 2\n")), &Overrides::default(), None).is_err());
        assert!(RunConfig::resolve(Some(&write(dir.path(), "k = 0\n")), &Overrides::default(), None).is_err());
        assert!(RunConfig::resolve(Some(&write(dir.path(), "[mix]\nq = 1.5\n")), &Overrides::default(), None).is_err());
    }

    #[test]
    fn json_config_matches_toml() {
        let dir = tempfile::tempdir().unwrap();
        let toml = write(dir.path(), "k = 2\nweights = [1.0, 0.0, -0.5]\n[mix]\nmode = \"materialized\"\n");
        let json = dir.path().join("run.json");
        std::fs::write(&json, r#"{"k": 2, "weights": [1.0, 0.0, -0.5], "mix": {"mode": "materialized"}}"#).unwrap();
        let a = RunConfig::resolve(Some(&toml), &Overrides::default(), None).unwrap();
        let b = RunConfig::resolve(Some(&json), &Overrides::default(), None).unwrap();
        assert_eq!((a.k, a.weights, a.mix.mode), (b.k, b.weights, b.mix.mode));
        std::fs::write(&json, r#"{"kk": 2}"#).unwrap();
        assert!(RunConfig::resolve(Some(&json), &Overrides::default(), None).is_err());
    }

    #[test]
    fn weight_and_url_flags_parse() {
        assert_eq!(parse_weights("-1,0,0").unwrap(), FilterWeights::new(-1.0, 0.0, 0.0));
        assert!(parse_weights("1,2").is_err());
        assert_eq!(parse_backend_url("embed=mock:").unwrap(), (Role::Embed, "mock:".to_string()));
        assert!(parse_backend_url("paint=http://x").is_err());
    }

    #[test]
    fn mock_grounder_specs() {
        let m = Manifest::default();
        assert!(mock_grounder("noisy:0.05", Some(&m), 1).is_ok());
        assert!(mock_grounder("fixed:0.5,0.5,0.2,0.2", None, 1).is_ok());
        assert!(mock_grounder("oracle", None, 1).is_err());
        assert!(mock_grounder("fixed:0.5,0.5", None, 1).is_err());
    }
}
