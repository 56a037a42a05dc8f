use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::manifest::{CaseSpec, DatasetManifest};
use super::synth::synth_blur;
use crate::error::{Error, Result};
use crate::fft_conv::{load_kernel, Psf};
use crate::image::{load_image, psnr, save_image, ssim, Image};
use crate::model::{train, TrainConfig, TrainHistory};
use crate::solvers::{landweber, richardson_lucy, SolverConfig};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Environment variable holding the default number of parallel cases.
pub const WORKERS_ENV: &str = "DELAD_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Landweber,
    Rl,
    Delad,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Landweber, Method::Rl, Method::Delad];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Landweber => "landweber",
            Method::Rl => "rl",
            Method::Delad => "delad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown method {s:?} (expected landweber, rl or delad)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub landweber: SolverConfig,
    pub rl_iterations: usize,
    pub delad: TrainConfig,
    /// Seeds noise synthesis and network initialization.
    pub seed: u64,
    /// Parallel cases; falls back to `DELAD_WORKERS`, then to all cores.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            landweber: SolverConfig::default(),
            rl_iterations: 1000,
            delad: TrainConfig::default(),
            seed: 0,
            workers: None,
        }
    }
}

impl BenchConfig {
    /// SHA-256 over the method and every setting that affects results.
    pub fn hash(&self, method: Method) -> String {
        let json = serde_json::to_string(&(method, self)).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn worker_count(&self) -> usize {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse().ok()))
            .filter(|&n| n > 0)
            .unwrap_or_else(rayon::current_num_threads)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub index: usize,
    pub name: String,
    pub method: Method,
    pub status: CaseStatus,
    pub error: Option<String>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// Metrics of the observation itself, for reference.
    pub blurred_psnr: Option<f64>,
    pub blurred_ssim: Option<f64>,
    pub final_loss: Option<f64>,
    /// Restored image path relative to the output directory.
    pub restored: Option<String>,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub cases: usize,
    pub failed: usize,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_blurred_psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub method: Method,
    pub config_hash: String,
    pub seed: u64,
    pub cases: Vec<CaseRecord>,
    pub aggregate: Aggregate,
    pub wall_time_s: f64,
}

impl BenchReport {
    pub fn failed(&self) -> usize {
        self.aggregate.failed
    }

    /// Copy with every wall-time field zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_time_s = 0.0;
        for c in &mut r.cases {
            c.wall_time_s = 0.0;
        }
        r
    }
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn aggregate(method: Method, cases: &[CaseRecord]) -> Aggregate {
    let ok = || cases.iter().filter(|c| c.status == CaseStatus::Ok);
    Aggregate {
        method,
        cases: cases.len(),
        failed: cases.len() - ok().count(),
        mean_psnr: mean_of(ok().map(|c| c.psnr)),
        mean_ssim: mean_of(ok().map(|c| c.ssim)),
        mean_blurred_psnr: mean_of(ok().map(|c| c.blurred_psnr)),
    }
}

/// Loads a case's inputs, synthesizing the observation when needed.
pub fn prepare_case(
    manifest: &DatasetManifest,
    case: &CaseSpec,
    index: usize,
    seed: u64,
) -> Result<(Option<Image>, Image, Psf)> {
    let psf = load_kernel(manifest.resolve(&case.kernel))?;
    let gt = case
        .ground_truth
        .as_ref()
        .map(|p| load_image(manifest.resolve(p)).map(|l| l.to_gray()))
        .transpose()?;
    let blurred = match (&case.blurred, &gt) {
        (Some(p), _) => load_image(manifest.resolve(p))?.to_gray(),
        (None, Some(gt)) => synth_blur(gt, &psf, case.noise, seed.wrapping_add(index as u64))?,
        (None, None) => unreachable!("validated manifest"),
    };
    if let Some(g) = &gt {
        g.check_same_shape(&blurred)?;
    }
    Ok((gt, blurred, psf))
}

/// Runs one restoration method on a single observation.
pub fn restore(
    method: Method,
    y: &Image,
    psf: &Psf,
    cfg: &BenchConfig,
) -> Result<(Image, Option<TrainHistory>)> {
    match method {
        Method::Landweber => Ok((landweber(y, psf, &cfg.landweber)?, None)),
        Method::Rl => Ok((richardson_lucy(y, psf, cfg.rl_iterations)?, None)),
        Method::Delad => {
            let tc = TrainConfig {
                seed: cfg.seed,
                ..cfg.delad.clone()
            };
            let out = train(y, psf, &tc, None)?;
            Ok((out.estimate, Some(out.history)))
        }
    }
}

struct CaseOutcome {
    psnr: Option<f64>,
    ssim: Option<f64>,
    blurred_psnr: Option<f64>,
    blurred_ssim: Option<f64>,
    final_loss: Option<f64>,
    restored: String,
}

fn run_case(
    manifest: &DatasetManifest,
    index: usize,
    label: &str,
    method: Method,
    cfg: &BenchConfig,
    out_dir: &Path,
) -> Result<CaseOutcome> {
    let case = &manifest.cases[index];
    let (gt, y, psf) = prepare_case(manifest, case, index, cfg.seed)?;
    let (x, history) = restore(method, &y, &psf, cfg)?;
    let restored = format!("restored/{label}.png");
    save_image(&x, out_dir.join(&restored))?;
    if let Some(h) = &history {
        let path = out_dir.join(format!("cases/{label}.train.jsonl"));
        let mut lines = String::new();
        for e in &h.epochs {
            lines += &serde_json::to_string(e)?;
            lines.push('\n');
        }
        fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
    }
    let metric = |a: &Image| -> Result<(Option<f64>, Option<f64>)> {
        match &gt {
            Some(g) => Ok((Some(psnr(a, g)?), Some(ssim(a, g)?))),
            None => Ok((None, None)),
        }
    };
    let (p, s) = metric(&x)?;
    let (bp, bs) = metric(&y)?;
    Ok(CaseOutcome {
        psnr: p,
        ssim: s,
        blurred_psnr: bp,
        blurred_ssim: bs,
        final_loss: history.and_then(|h| h.last().map(|e| e.loss)),
        restored,
    })
}

/// Runs `method` over every case and writes all outputs under `out_dir`.
///
/// A failing case is logged and recorded with its error; the remaining
/// cases still run. Results are independent of the worker count.
pub fn run_benchmark(
    manifest: &DatasetManifest,
    method: Method,
    cfg: &BenchConfig,
    out_dir: impl AsRef<Path>,
) -> Result<BenchReport> {
    manifest.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["restored", "cases"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let hash = cfg.hash(method);
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.worker_count())
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;

    let records: Vec<CaseRecord> = pool.install(|| {
        (0..manifest.cases.len())
            .into_par_iter()
            .map(|index| {
                let label = manifest.cases[index].label(index);
                let t = Instant::now();
                let result = run_case(manifest, index, &label, method, cfg, out_dir);
                let wall_time_s = t.elapsed().as_secs_f64();
                let mut rec = CaseRecord {
                    index,
                    name: label.clone(),
                    method,
                    status: CaseStatus::Ok,
                    error: None,
                    psnr: None,
                    ssim: None,
                    blurred_psnr: None,
                    blurred_ssim: None,
                    final_loss: None,
                    restored: None,
                    config_hash: hash.clone(),
                    seed: cfg.seed,
                    wall_time_s,
                };
                match result {
                    Ok(o) => {
                        info!(
                            "{method} {label}: psnr {:?} ssim {:?} ({wall_time_s:.1}s)",
                            o.psnr, o.ssim
                        );
                        rec.psnr = o.psnr;
                        rec.ssim = o.ssim;
                        rec.blurred_psnr = o.blurred_psnr;
                        rec.blurred_ssim = o.blurred_ssim;
                        rec.final_loss = o.final_loss;
                        rec.restored = Some(o.restored);
                    }
                    Err(e) => {
                        warn!("{method} {label} failed: {e}");
                        rec.status = CaseStatus::Failed;
                        rec.error = Some(e.to_string());
                    }
                }
                rec
            })
            .collect()
    });

    for rec in &records {
        let path = out_dir.join(format!("cases/{}.json", rec.name));
        fs::write(&path, serde_json::to_string_pretty(rec)? + "\n")
            .map_err(|e| Error::io(&path, e))?;
    }
    let report = BenchReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method,
        config_hash: hash,
        seed: cfg.seed,
        aggregate: aggregate(method, &records),
        cases: records,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    write_outputs(&report, out_dir)?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn write_outputs(report: &BenchReport, out_dir: &Path) -> Result<()> {
    let write = |name: &str, text: String| {
        let path = out_dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    };
    write("report.json", serde_json::to_string_pretty(report)? + "\n")?;

    let a = &report.aggregate;
    write(
        "aggregate.csv",
        format!(
            "method,cases,failed,mean_psnr,mean_ssim,mean_blurred_psnr\n{},{},{},{},{},{}\n",
            a.method,
            a.cases,
            a.failed,
            fmt_opt(a.mean_psnr),
            fmt_opt(a.mean_ssim),
            fmt_opt(a.mean_blurred_psnr)
        ),
    )?;

    let mut metrics =
        String::from("index,name,method,status,psnr,ssim,blurred_psnr,blurred_ssim\n");
    for c in &report.cases {
        metrics += &format!(
            "{},{},{},{},{},{},{},{}\n",
            c.index,
            c.name,
            c.method,
            if c.status == CaseStatus::Ok {
                "ok"
            } else {
                "failed"
            },
            fmt_opt(c.psnr),
            fmt_opt(c.ssim),
            fmt_opt(c.blurred_psnr),
            fmt_opt(c.blurred_ssim)
        );
    }
    write("metrics.csv", metrics)
}

const REPORT_KEYS: [&str; 7] = [
    "schema_version",
    "method",
    "config_hash",
    "seed",
    "cases",
    "aggregate",
    "wall_time_s",
];
const CASE_KEYS: [&str; 14] = [
    "index",
    "name",
    "method",
    "status",
    "error",
    "psnr",
    "ssim",
    "blurred_psnr",
    "blurred_ssim",
    "final_loss",
    "restored",
    "config_hash",
    "seed",
    "wall_time_s",
];
const AGGREGATE_KEYS: [&str; 6] = [
    "method",
    "cases",
    "failed",
    "mean_psnr",
    "mean_ssim",
    "mean_blurred_psnr",
];

fn require(obj: &Value, keys: &[&str], what: &str) -> Result<()> {
    let map = obj
        .as_object()
        .ok_or_else(|| Error::InvalidInput(format!("{what} is not an object")))?;
    match keys.iter().find(|k| !map.contains_key(**k)) {
        Some(k) => Err(Error::InvalidInput(format!(
            "{what} is missing field {k:?}"
        ))),
        None => Ok(()),
    }
}

/// Checks a parsed `report.json` against the current schema.
pub fn validate_report(value: &Value) -> Result<BenchReport> {
    require(value, &REPORT_KEYS, "report")?;
    if value["schema_version"] != REPORT_SCHEMA_VERSION {
        return Err(Error::InvalidInput(format!(
            "report schema_version {} is not {REPORT_SCHEMA_VERSION}",
            value["schema_version"]
        )));
    }
    let cases = value["cases"]
        .as_array()
        .ok_or_else(|| Error::InvalidInput("report cases is not an array".into()))?;
    for (i, c) in cases.iter().enumerate() {
        require(c, &CASE_KEYS, &format!("case {i}"))?;
    }
    require(&value["aggregate"], &AGGREGATE_KEYS, "aggregate")?;
    let report: BenchReport = serde_json::from_value(value.clone())?;
    let expected = aggregate(report.method, &report.cases);
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9,
        (None, None) => true,
        _ => false,
    };
    let a = &report.aggregate;
    if a.cases != expected.cases
        || a.failed != expected.failed
        || !close(a.mean_psnr, expected.mean_psnr)
        || !close(a.mean_ssim, expected.mean_ssim)
        || !close(a.mean_blurred_psnr, expected.mean_blurred_psnr)
    {
        return Err(Error::InvalidInput(
            "aggregate does not match the case records".into(),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("wiener".parse::<Method>().is_err());
    }

    #[test]
    fn hash_tracks_settings() {
        let a = BenchConfig::default();
        let b = BenchConfig {
            seed: 1,
            ..a.clone()
        };
        let c = BenchConfig {
            workers: Some(3),
            ..a.clone()
        };
        assert_eq!(a.hash(Method::Rl).len(), 64);
        assert_ne!(a.hash(Method::Rl), b.hash(Method::Rl));
        assert_ne!(a.hash(Method::Rl), a.hash(Method::Delad));
        assert_eq!(a.hash(Method::Rl), c.hash(Method::Rl));
    }

    fn record(psnr: Option<f64>, status: CaseStatus) -> CaseRecord {
        CaseRecord {
            index: 0,
            name: "x".into(),
            method: Method::Rl,
            status,
            error: None,
            psnr,
            ssim: psnr.map(|p| p / 100.0),
            blurred_psnr: None,
            blurred_ssim: None,
            final_loss: None,
            restored: None,
            config_hash: String::new(),
            seed: 0,
            wall_time_s: 1.0,
        }
    }

    #[test]
    fn aggregate_skips_failures() {
        let recs = [
            record(Some(20.0), CaseStatus::Ok),
            record(Some(23.0), CaseStatus::Ok),
            record(None, CaseStatus::Failed),
        ];
        let a = aggregate(Method::Rl, &recs);
        assert_eq!((a.cases, a.failed), (3, 1));
        assert_eq!(a.mean_psnr, Some(21.5));
        assert_eq!(a.mean_blurred_psnr, None);
    }

    #[test]
    fn schema_check() {
        let cases = vec![record(Some(20.0), CaseStatus::Ok)];
        let report = BenchReport {
            schema_version: REPORT_SCHEMA_VERSION,
            method: Method::Rl,
            config_hash: "h".into(),
            seed: 0,
            aggregate: aggregate(Method::Rl, &cases),
            cases,
            wall_time_s: 2.0,
        };
        let v = serde_json::to_value(&report).unwrap();
        assert_eq!(validate_report(&v).unwrap(), report);

        let mut missing = v.clone();
        missing["cases"][0].as_object_mut().unwrap().remove("ssim");
        assert!(validate_report(&missing)
            .unwrap_err()
            .to_string()
            .contains("ssim"));

        let mut top = v.clone();
        top.as_object_mut().unwrap().remove("config_hash");
        assert!(validate_report(&top).is_err());

        let mut wrong = v.clone();
        wrong["aggregate"]["mean_psnr"] = 30.0.into();
        assert!(validate_report(&wrong).is_err());

        let mut version = v;
        version["schema_version"] = 99.into();
        assert!(validate_report(&version).is_err());
    }
}
