//! Command-line interface: learn, generalize, endpose, extract and
//! benchmark, with machine-readable errors and atomic file output.

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data;
use crate::error::{Error, Result};
use crate::lfekmp::{
    kmp_baseline_generalize, kmp_baseline_learn, lfekmp_generalize, lfekmp_learn, Demonstration,
    GeneralizedTrajectory, KmpBaselineModel, LfeKmpModel, TaskParameters,
};
use crate::metrics;
use crate::plot::{svg_overlay, PlotSeries};
use crate::tpgmm::{tpgmm_generalize, tpgmm_learn, TpGmmModel};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "LFEKMP_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "lfekmp", version, about = "Learning-from-demonstration toolkit")]
pub struct Cli {
    /// Path to a JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (falls back to $LFEKMP_OUT_DIR, then the config,
    /// then the working directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a model from demonstrations (CSV or demo bundle JSON).
    Learn {
        /// Demonstration file: handwriting CSV or a demo bundle JSON.
        #[arg(long)]
        demos: PathBuf,
        /// One of: lfe-kmp, tp-gmm, kmp.
        #[arg(long, default_value = "lfe-kmp")]
        method: String,
    },
    /// Generalize a fitted model to new task parameters.
    Generalize {
        #[arg(long)]
        model: PathBuf,
        /// Task parameters JSON (the frames of the new situation).
        #[arg(long)]
        params: PathBuf,
    },
    /// Estimate a skill termination pose from a scenario file.
    Endpose {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Extract an object's pose trajectory from a keypoint stream.
    Extract {
        #[arg(long)]
        keypoints: PathBuf,
        #[arg(long)]
        object: String,
    },
    /// Compare the methods over seeded task perturbations.
    Benchmark {
        /// Optional demonstration file; defaults to the built-in letter
        /// drawing set.
        #[arg(long)]
        demos: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::InvalidConfig(_) => 3,
        Error::Io { .. } => 4,
        Error::Parse { .. }
        | Error::Degenerate(_)
        | Error::DimensionMismatch(_)
        | Error::Singular(_) => 5,
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    error: String,
    kind: &'a str,
    exit_code: i32,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::DimensionMismatch(_) => "dimension_mismatch",
        Error::Singular(_) => "singular",
        Error::Degenerate(_) => "degenerate",
        Error::InvalidArgument(_) => "invalid_argument",
        Error::InvalidConfig(_) => "invalid_config",
        Error::Io { .. } => "io",
        Error::Parse { .. } => "parse",
    }
}

/// Prints a machine-readable error to stderr and returns the exit code.
pub fn report_error(e: &Error) -> i32 {
    let code = exit_code(e);
    let report = ErrorReport {
        error: e.to_string(),
        kind: error_kind(e),
        exit_code: code,
    };
    eprintln!("{}", serde_json::to_string(&report).expect("serializes"));
    code
}

/// Writes through a temp file in the same directory, then renames, so
/// readers never observe partial output.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into()),
        std::process::id()
    ));
    std::fs::write(&tmp, content).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let content = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
            RunConfig::from_json(&content)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    if let Some(out) = &cli.out {
        return out.clone();
    }
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    if let Some(dir) = &cfg.out_dir {
        return PathBuf::from(dir);
    }
    PathBuf::from(".")
}

fn load_demos(path: &Path) -> Result<Vec<Demonstration>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => data::with_endpoint_frames(&data::load_handwriting(path)?),
        _ => Ok(data::DemoBundle::load(path)?.demos),
    }
}

/// Per-seed benchmark sample for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub c_s: f64,
    pub kappa_s: f64,
    pub endpoint_error: f64,
}

/// Aggregate over all benchmark seeds for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub c_s_mean: f64,
    pub kappa_s_mean: f64,
    pub endpoint_error_mean: f64,
    pub per_seed: Vec<SeedMetrics>,
}

/// Full benchmark result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub format_version: u32,
    pub n_seeds: u64,
    /// Span between the demo frame anchors, a scale for endpoint errors.
    pub workspace_diameter: f64,
    pub methods: BTreeMap<String, MethodSummary>,
}

fn summarize(samples: Vec<SeedMetrics>) -> MethodSummary {
    let n = samples.len() as f64;
    MethodSummary {
        c_s_mean: samples.iter().map(|s| s.c_s).sum::<f64>() / n,
        kappa_s_mean: samples.iter().map(|s| s.kappa_s).sum::<f64>() / n,
        endpoint_error_mean: samples.iter().map(|s| s.endpoint_error).sum::<f64>() / n,
        per_seed: samples,
    }
}

/// Learns all three methods once and evaluates them over `n_seeds` seeded
/// perturbations of the first demo's frames. Shape scores compare against
/// the first demonstration; endpoint errors compare against the perturbed
/// anchors.
pub fn run_benchmark(
    demos: &[Demonstration],
    cfg: &RunConfig,
    n_seeds: u64,
) -> Result<(BenchmarkReport, Vec<(String, GeneralizedTrajectory)>)> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("benchmark needs >= 1 seed".into()));
    }
    let reference = demos
        .first()
        .ok_or_else(|| Error::InvalidArgument("benchmark needs demonstrations".into()))?;
    if reference.frames.len() != 2 {
        return Err(Error::InvalidArgument(
            "benchmark expects start/end task frames".into(),
        ));
    }

    let lfe = lfekmp_learn(demos, cfg)?;
    let tp = tpgmm_learn(demos, cfg)?;
    let kmp = kmp_baseline_learn(demos, cfg)?;

    let mut samples: BTreeMap<&str, Vec<SeedMetrics>> = BTreeMap::new();
    let mut last: Vec<(String, GeneralizedTrajectory)> = Vec::new();
    for seed in 0..n_seeds {
        let params = data::perturb_task(&reference.frames, cfg.seed.wrapping_add(seed), cfg)?;
        let outputs = [
            ("lfe-kmp", lfekmp_generalize(&lfe, &params, cfg)?),
            ("tp-gmm", tpgmm_generalize(&tp, &params, cfg)?),
            ("kmp", kmp_baseline_generalize(&kmp, &params, cfg)?),
        ];
        if seed == n_seeds - 1 {
            last = outputs
                .iter()
                .map(|(name, out)| (name.to_string(), out.clone()))
                .collect();
        }
        for (name, out) in outputs {
            samples.entry(name).or_default().push(SeedMetrics {
                seed,
                c_s: metrics::topological_similarity(&out.traj, &reference.traj)?,
                kappa_s: metrics::smoothness(&out.traj)?,
                endpoint_error: metrics::endpoint_error(&out.traj, &params)?,
            });
        }
    }

    let workspace_diameter =
        (reference.frames.frames[1].anchor() - reference.frames.frames[0].anchor()).norm();
    Ok((
        BenchmarkReport {
            format_version: crate::lfekmp::MODEL_FORMAT_VERSION,
            n_seeds,
            workspace_diameter,
            methods: samples
                .into_iter()
                .map(|(k, v)| (k.to_string(), summarize(v)))
                .collect(),
        },
        last,
    ))
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Model kind dispatch on the serialized `kind` tag.
fn detect_kind(json: &str, path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct Tag {
        kind: String,
    }
    let tag: Tag = serde_json::from_str(json)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    Ok(tag.kind)
}

fn run_command(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli, &cfg);

    match &cli.command {
        Command::Learn { demos, method } => {
            let demos = load_demos(demos)?;
            let (name, json) = match method.as_str() {
                "lfe-kmp" => ("model.json", lfekmp_learn(&demos, &cfg)?.to_json()),
                "tp-gmm" => ("model.json", tpgmm_learn(&demos, &cfg)?.to_json()),
                "kmp" => ("model.json", kmp_baseline_learn(&demos, &cfg)?.to_json()),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown method {other:?}; expected lfe-kmp, tp-gmm or kmp"
                    )))
                }
            };
            let path = out.join(name);
            write_atomic(&path, &json)?;
            println!("{}", path.display());
        }
        Command::Generalize { model, params } => {
            let model_json = read_to_string(model)?;
            let params: TaskParameters = serde_json::from_str(&read_to_string(params)?)
                .map_err(|e| Error::parse(params.display().to_string(), e.to_string()))?;
            let generalized = match detect_kind(&model_json, model)?.as_str() {
                "lfe-kmp" => lfekmp_generalize(&LfeKmpModel::from_json(&model_json)?, &params, &cfg)?,
                "tp-gmm" => tpgmm_generalize(&TpGmmModel::from_json(&model_json)?, &params, &cfg)?,
                "kmp-baseline" => {
                    kmp_baseline_generalize(&KmpBaselineModel::from_json(&model_json)?, &params, &cfg)?
                }
                other => {
                    return Err(Error::Parse {
                        path: model.display().to_string(),
                        message: format!("unknown model kind {other:?}"),
                    })
                }
            };
            let path = out.join("trajectory.json");
            write_atomic(
                &path,
                &serde_json::to_string_pretty(&generalized).expect("serializes"),
            )?;
            if generalized.traj.dim() >= 2 {
                let svg = svg_overlay(&[PlotSeries {
                    label: "generalized",
                    color: "crimson",
                    traj: &generalized.traj,
                }])?;
                write_atomic(&out.join("trajectory.svg"), &svg)?;
            }
            println!("{}", path.display());
        }
        Command::Endpose { scenario } => {
            let sc = crate::bridge::Scenario::from_json(
                &read_to_string(scenario)?,
                &scenario.display().to_string(),
            )?;
            let stats = sc.resolve_stats()?;
            let master = sc.master.resolve(sc.camera.as_ref())?;
            let pose = crate::bridge::endpose_estimate(
                &master,
                &stats,
                &sc.start_pose(),
                cfg.seed,
                cfg.n_pos_samples,
                cfg.angle_step,
                cfg.w_rot,
            )?;
            let path = out.join("endpose.json");
            write_atomic(&path, &serde_json::to_string_pretty(&pose).expect("serializes"))?;
            println!("{}", path.display());
        }
        Command::Extract { keypoints, object } => {
            let seq = data::KeypointFrameSequence::load(keypoints)?;
            let traj = data::extract_demo_trajectory(&seq, object)?;
            let path = out.join("extracted.json");
            write_atomic(&path, &serde_json::to_string_pretty(&traj).expect("serializes"))?;
            println!("{}", path.display());
        }
        Command::Benchmark { demos, seeds } => {
            let demos = match demos {
                Some(path) => load_demos(path)?,
                None => data::with_endpoint_frames(&data::gshape_demos(6, 200, cfg.seed))?,
            };
            let (report, outputs) = run_benchmark(&demos, &cfg, *seeds)?;
            let path = out.join("benchmark.json");
            write_atomic(&path, &serde_json::to_string_pretty(&report).expect("serializes"))?;
            let mut series = vec![PlotSeries {
                label: "demonstration",
                color: "gray",
                traj: &demos[0].traj,
            }];
            let colors = ["crimson", "steelblue", "seagreen"];
            for ((name, out), color) in outputs.iter().zip(colors) {
                series.push(PlotSeries {
                    label: name,
                    color,
                    traj: &out.traj,
                });
            }
            write_atomic(&out.join("benchmark.svg"), &svg_overlay(&series)?)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Full CLI entry point; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are not errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let _ = report_error(&Error::InvalidArgument(e.to_string()));
            return 2;
        }
    };
    match run_command(&cli) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_match_error_classes() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
        assert_eq!(exit_code(&Error::InvalidConfig("x".into())), 3);
        assert_eq!(
            exit_code(&Error::io(
                "p",
                std::io::Error::new(std::io::ErrorKind::NotFound, "gone")
            )),
            4
        );
        assert_eq!(exit_code(&Error::parse("p", "bad")), 5);
        assert_eq!(exit_code(&Error::Degenerate("x".into())), 5);
    }

    #[test]
    fn atomic_write_creates_parents_and_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/dir/file.json");
        write_atomic(&path, "{\"ok\":true}").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "{\"ok\":true}");
        // No temp files left behind.
        let entries: Vec<_> = std::fs::read_dir(path.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(entries.len(), 1);
    }

    #[test]
    fn unknown_method_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("demos.csv");
        std::fs::write(&csv, data::handwriting_csv(&data::gshape_demos(2, 20, 0))).unwrap();
        let code = run_from([
            "lfekmp",
            "--out",
            dir.path().to_str().unwrap(),
            "learn",
            "--demos",
            csv.to_str().unwrap(),
            "--method",
            "nope",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let code = run_from(["lfekmp", "learn", "--demos", "/nonexistent/demos.csv"]);
        assert_eq!(code, 4);
    }

    #[test]
    fn invalid_config_exit_code() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg.json");
        std::fs::write(&cfg, r#"{"k": 0}"#).unwrap();
        let csv = dir.path().join("demos.csv");
        std::fs::write(&csv, data::handwriting_csv(&data::gshape_demos(2, 20, 0))).unwrap();
        let code = run_from([
            "lfekmp",
            "--config",
            cfg.to_str().unwrap(),
            "learn",
            "--demos",
            csv.to_str().unwrap(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn benchmark_report_has_all_methods() {
        let demos =
            data::with_endpoint_frames(&data::gshape_demos(4, 60, 0)).unwrap();
        let cfg = RunConfig {
            k: 4,
            n_ref: 50,
            n_out: 60,
            lengthscale_grid: vec![0.05, 0.1],
            ..RunConfig::default()
        };
        let (report, last) = run_benchmark(&demos, &cfg, 2).unwrap();
        assert_eq!(report.n_seeds, 2);
        for name in ["lfe-kmp", "tp-gmm", "kmp"] {
            let m = report.methods.get(name).unwrap();
            assert_eq!(m.per_seed.len(), 2);
            assert!(m.c_s_mean.is_finite());
            assert!(m.kappa_s_mean.is_finite());
            assert!(m.endpoint_error_mean.is_finite());
        }
        assert_eq!(last.len(), 3);
        assert!(report.workspace_diameter > 0.0);
    }
}
