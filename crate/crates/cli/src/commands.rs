use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use styledyn::denoiser::FitSpace;
use styledyn::duration::sweep::{sigma_sweep, SigmaSweepConfig};
use styledyn::duration::{grad_check, KernelParams};
use styledyn::longform::trajectory_table;
use styledyn::metrics::{mode_spread_cv, MetricReport};
use styledyn::rng::{normal_vec, stream};
use styledyn::sampler::sample_styles;
use styledyn::table::{fmt_real, Table};
use styledyn::{
    energy_distance, fit_linear_denoiser, karras_schedule, longform_styles, moment_report,
    ConditioningVector, DenoiserSpec, SamplerConfig, StyleVector,
};

use crate::config::{ExperimentConfig, SigmaUSpec, TargetKind};
use crate::error::CliError;
use crate::sweep::{emit_svg, AxesSpec, SweepResult};

pub const STEP_SWEEP: [usize; 6] = [4, 8, 16, 32, 64, 128];
pub const DEFAULT_SIGMA_GRID: SigmaUSpec = SigmaUSpec::LogGrid { lo: 0.01, hi: 10.0, n: 25 };
pub const GRAD_TOLERANCE: f64 = 1e-4;

const ORACLE_SALT_A: u64 = 0x9e37_79b9_7f4a_7c15;
const ORACLE_SALT_B: u64 = 0xc2b2_ae3d_27d4_eb4f;
const FIT_SALT: u64 = 0x1656_67b1_9e37_79f9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Schedule,
    Sample,
    SweepSteps,
    SweepSigma,
    GradCheck,
    Longform,
    FitDenoiser,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Schedule,
        Command::Sample,
        Command::SweepSteps,
        Command::SweepSigma,
        Command::GradCheck,
        Command::Longform,
        Command::FitDenoiser,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Schedule => "schedule",
            Command::Sample => "sample",
            Command::SweepSteps => "sweep-steps",
            Command::SweepSigma => "sweep-sigma",
            Command::GradCheck => "gradcheck",
            Command::Longform => "longform",
            Command::FitDenoiser => "fit-denoiser",
        }
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| CliError::config("subcommand", format!("unknown subcommand {s:?}")))
    }
}

/// Runs one subcommand and returns the files it wrote.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    let out = Output::new(&cfg.output_dir)?;
    match cmd {
        Command::Schedule => schedule(cfg, out),
        Command::Sample => sample(cfg, out),
        Command::SweepSteps => sweep_steps(cfg, out),
        Command::SweepSigma => sweep_sigma(cfg, out),
        Command::GradCheck => gradcheck(cfg, out),
        Command::Longform => longform(cfg, out),
        Command::FitDenoiser => fit_denoiser(cfg, out),
    }
}

struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &str) -> Result<Self, CliError> {
        let dir = PathBuf::from(dir);
        fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self { dir, written: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.written.push(path);
        Ok(())
    }

    fn finish(self) -> Vec<PathBuf> {
        self.written
    }
}

fn with_config(mut table: Table, cfg: &ExperimentConfig) -> Table {
    let mut comments: Vec<String> = cfg
        .snapshot_lines()
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}"))
        .collect();
    comments.append(&mut table.comments);
    table.comments = comments;
    table
}

fn json_text(value: &serde_json::Value) -> Result<String, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(styledyn::Error::from)?;
    text.push('\n');
    Ok(text)
}

fn single_steps(cfg: &ExperimentConfig) -> Result<usize, CliError> {
    match cfg.steps.as_deref() {
        None => Ok(styledyn::ScheduleParams::default().n_steps),
        Some([n]) => Ok(*n),
        Some(_) => Err(CliError::config("steps", "this subcommand takes a single step count")),
    }
}

fn single_sigma_u(cfg: &ExperimentConfig) -> Result<f64, CliError> {
    match cfg.sigma_u {
        None => Ok(KernelParams::default().sigma_u),
        Some(SigmaUSpec::Value(v)) => Ok(v),
        Some(_) => Err(CliError::config("sigma_u", "this subcommand takes a single value")),
    }
}

fn sampler_config(cfg: &ExperimentConfig, steps: usize) -> Result<SamplerConfig, CliError> {
    let schedule = karras_schedule(cfg.schedule_params(steps))?;
    Ok(SamplerConfig::new(cfg.method, schedule)
        .with_eta(cfg.eta)
        .with_seed(cfg.seed))
}

/// Independent draws from the analytic target.
pub fn direct_samples(cfg: &ExperimentConfig, n: usize, seed: u64) -> Vec<StyleVector> {
    let total: f64 = cfg.mixture.iter().map(|c| c.weight).sum();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64, 0);
            let (mean, scale) = match cfg.target {
                TargetKind::Gaussian => (&cfg.gaussian.mean, cfg.gaussian.scale),
                TargetKind::Mixture => {
                    let u = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = cfg.mixture.last().expect("validated");
                    for c in &cfg.mixture {
                        acc += c.weight;
                        if u < acc {
                            pick = c;
                            break;
                        }
                    }
                    (&pick.mean, pick.scale)
                }
            };
            let mean = mean.resolve(cfg.dim).expect("validated");
            let noise = normal_vec(&mut rng, cfg.dim);
            StyleVector::new(mean.iter().zip(noise).map(|(m, z)| m + scale * z).collect())
        })
        .collect()
}

/// Per-coordinate mean and std of the target.
pub fn target_moments(cfg: &ExperimentConfig) -> (Vec<f64>, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>, f64)> = match cfg.target {
        TargetKind::Gaussian => vec![(1.0, cfg.gaussian.mean.resolve(cfg.dim).expect("validated"), cfg.gaussian.scale)],
        TargetKind::Mixture => cfg
            .mixture
            .iter()
            .map(|c| (c.weight, c.mean.resolve(cfg.dim).expect("validated"), c.scale))
            .collect(),
    };
    let mean: Vec<f64> = (0..cfg.dim)
        .map(|k| parts.iter().map(|(w, m, _)| w * m[k]).sum())
        .collect();
    let std = (0..cfg.dim)
        .map(|k| {
            let second: f64 = parts.iter().map(|(w, m, s)| w * (s * s + m[k] * m[k])).sum();
            (second - mean[k] * mean[k]).max(0.0).sqrt()
        })
        .collect();
    (mean, std)
}

fn target_modes(cfg: &ExperimentConfig) -> Vec<StyleVector> {
    match cfg.target {
        TargetKind::Gaussian => vec![StyleVector::new(cfg.gaussian.mean.resolve(cfg.dim).expect("validated"))],
        TargetKind::Mixture => cfg
            .mixture
            .iter()
            .map(|c| StyleVector::new(c.mean.resolve(cfg.dim).expect("validated")))
            .collect(),
    }
}

fn schedule(cfg: &ExperimentConfig, mut out: Output) -> Result<Vec<PathBuf>, CliError> {
    let sched = karras_schedule(cfg.schedule_params(single_steps(cfg)?))?;
    let mut table = Table::new(["i", "sigma"]);
    for (i, s) in sched.sigmas().iter().enumerate() {
        table.push(vec![i.to_string(), fmt_real(*s)]);
    }
    out.write("schedule.csv", &with_config(table, cfg).render())?;
    Ok(out.finish())
}

#[derive(Serialize)]
struct SampleSummary<'a> {
    n: usize,
    method: &'a str,
    steps: usize,
    nfe: usize,
    mean: &'a [f64],
    std: &'a [f64],
    seed: u64,
}

fn timing_table(cfg: &ExperimentConfig, rows: &[(usize, f64)]) -> String {
    let mut table = Table::new(["steps", "wall_time_s"]);
    table.comment("wall-clock timings; not reproducible byte-for-byte");
    for (steps, t) in rows {
        table.push(vec![steps.to_string(), fmt_real(*t)]);
    }
    with_config(table, cfg).render()
}

fn sample(cfg: &ExperimentConfig, mut out: Output) -> Result<Vec<PathBuf>, CliError> {
    let steps = single_steps(cfg)?;
    let spec = cfg.target_spec()?;
    let sc = sampler_config(cfg, steps)?;
    let batch = sample_styles(&spec, &sc, cfg.n_samples, cfg.dim, &ConditioningVector::none())?;
    let (mean, std) = batch.moments();
    let (target_mean, target_std) = target_moments(cfg);
    let moments = moment_report(&batch.samples, &target_mean, &target_std)?;
    let oracle = direct_samples(cfg, cfg.n_samples, cfg.seed ^ ORACLE_SALT_A);
    let oracle_b = direct_samples(cfg, cfg.n_samples, cfg.seed ^ ORACLE_SALT_B);
    let ed = energy_distance(&batch.samples, &oracle)?;
    let self_ed = energy_distance(&oracle_b, &oracle)?;
    let ed_report = MetricReport::new("energy_distance", ed, cfg.n_samples)?
        .with_detail("oracle_self_distance", self_ed);

    let csv = batch.to_csv();
    let header_comments: String = cfg
        .snapshot_lines()
        .into_iter()
        .map(|(k, v)| format!("# {k} = {v}\n"))
        .collect();
    out.write("samples.csv", &format!("{header_comments}{csv}"))?;

    let summary = SampleSummary {
        n: batch.samples.len(),
        method: cfg.method.as_str(),
        steps,
        nfe: sc.evaluations(),
        mean: &mean,
        std: &std,
        seed: cfg.seed,
    };
    let doc = json!({
        "config": cfg.snapshot(),
        "seed": cfg.seed,
        "summary": summary,
        "target": { "mean": target_mean, "std": target_std },
        "moments": moments,
        "energy_distance": ed_report,
    });
    out.write("sample.json", &json_text(&doc)?)?;
    out.write("sample_timing.csv", &timing_table(cfg, &[(steps, batch.wall_time)]))?;
    Ok(out.finish())
}

/// Runs the step sweep; returns the result table and the timing rows.
pub fn step_sweep(cfg: &ExperimentConfig) -> Result<(SweepResult, Vec<(usize, f64)>), CliError> {
    let steps_list = cfg.steps.clone().unwrap_or_else(|| STEP_SWEEP.to_vec());
    let spec = cfg.target_spec()?;
    let modes = target_modes(cfg);
    let oracle = direct_samples(cfg, cfg.n_samples, cfg.seed ^ ORACLE_SALT_A);
    let oracle_b = direct_samples(cfg, cfg.n_samples, cfg.seed ^ ORACLE_SALT_B);
    let self_ed = energy_distance(&oracle_b, &oracle)?;

    let mut columns: Vec<String> = vec!["nfe".into(), "energy_distance".into(), "oracle_self_distance".into()];
    columns.extend((0..modes.len()).map(|j| format!("cv_mode{j}")));
    let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut result = SweepResult::new("steps", &column_refs, cfg.snapshot_lines());
    let mut timings = Vec::new();
    let mut sorted = steps_list;
    sorted.sort_unstable();
    sorted.dedup();
    for steps in sorted {
        let sc = sampler_config(cfg, steps)?;
        let mut best = f64::INFINITY;
        let mut samples = None;
        for _ in 0..cfg.timing_repeats {
            let batch = sample_styles(&spec, &sc, cfg.n_samples, cfg.dim, &ConditioningVector::none())?;
            best = best.min(batch.wall_time);
            samples = Some(batch.samples);
        }
        let samples = samples.expect("timing_repeats >= 1");
        let ed = energy_distance(&samples, &oracle)?;
        let mut row = vec![sc.evaluations() as f64, ed, self_ed];
        row.extend(mode_spread_cv(&samples, &modes).into_iter().map(|c| c.unwrap_or(f64::NAN)));
        result.push(steps as f64, row);
        timings.push((steps, best));
    }
    result.sort();
    Ok((result, timings))
}

fn sweep_steps(cfg: &ExperimentConfig, mut out: Output) -> Result<Vec<PathBuf>, CliError> {
    let (result, timings) = step_sweep(cfg)?;
    out.write("sweep_steps.csv", &result.to_csv())?;
    out.write("sweep_steps_timing.csv", &timing_table(cfg, &timings))?;
    let axes = AxesSpec {
        y_column: "energy_distance".into(),
        log_x: true,
        log_y: true,
        title: format!("energy distance to target, {}", cfg.method),
    };
    out.write("sweep_steps.svg", &emit_svg(&result, &axes)?)?;
    Ok(out.finish())
}

pub fn sigma_grid(cfg: &ExperimentConfig) -> Result<Vec<f64>, CliError> {
    match cfg.sigma_u.unwrap_or(DEFAULT_SIGMA_GRID) {
        SigmaUSpec::Value(_) => Err(CliError::config("sigma_u", "sweep-sigma needs a grid log:lo:hi:n")),
        grid => grid.values().map_err(|e| CliError::config("sigma_u", e)),
    }
}

pub fn sigma_sweep_result(cfg: &ExperimentConfig) -> Result<SweepResult, CliError> {
    let grid = sigma_grid(cfg)?;
    let sweep_cfg = SigmaSweepConfig {
        n_instances: cfg.n_instances.unwrap_or(100),
        seed: cfg.seed,
        max_phonemes: cfg.max_phonemes,
        max_frames: cfg.max_frames,
        max_duration: cfg.max_len,
    };
    let rows = sigma_sweep(&grid, &sweep_cfg)?;
    let mut result = SweepResult::new("sigma_u", &["mean_distortion", "max_grad_norm"], cfg.snapshot_lines());
    for r in rows {
        result.push(r.sigma_u, vec![r.mean_distortion, r.max_grad_norm]);
    }
    result.sort();
    Ok(result)
}

fn sweep_sigma(cfg: &ExperimentConfig, mut out: Output) -> Result<Vec<PathBuf>, CliError> {
    let result = sigma_sweep_result(cfg)?;
    out.write("sweep_sigma.csv", &result.to_csv())?;
    let axes = AxesSpec {
        y_column: "mean_distortion".into(),
        log_x: true,
        log_y: false,
        title: "alignment distortion vs kernel width".into(),
    };
    out.write("sweep_sigma.svg", &emit_svg(&result, &axes)?)?;
    Ok(out.finish())
}

fn gradcheck(cfg: &ExperimentConfig, mut out: Output) -> Result<Vec<PathBuf>, CliError> {
    let kp = KernelParams::new(single_sigma_u(cfg)?).map_err(|e| CliError::config("sigma_u", e.to_string()))?;
    let n = cfg.n_instances.unwrap_or(50);
    let report = grad_check(n, cfg.seed, cfg.max_phonemes, cfg.max_len, &kp)?;
    let passed = report.max_rel_error < GRAD_TOLERANCE;
    let doc = json!({
        "config": cfg.snapshot(),
        "seed": cfg.seed,
        "report": report,
        "tolerance": GRAD_TOLERANCE,
        "passed": passed,
    });
    out.write("gradcheck.json", &json_text(&doc)?)?;
    if !passed {
        return Err(CliError::Invariant(format!(
            "max relative gradient error {} exceeds {GRAD_TOLERANCE}",
            report.max_rel_error
        )));
    }
    Ok(out.finish())
}

fn longform(cfg: &ExperimentConfig, mut out: Output) -> Result<Vec<PathBuf>, CliError> {
    let spec = cfg.target_spec()?;
    let sc = sampler_config(cfg, single_steps(cfg)?)?;
    let raw = sample_styles(&spec, &sc, cfg.sentences, cfg.dim, &ConditioningVector::none())?;
    let styles = longform_styles(&raw.samples, cfg.alpha)?;
    out.write("longform.csv", &with_config(trajectory_table(&styles), cfg).render())?;
    Ok(out.finish())
}

fn fit_denoiser(cfg: &ExperimentConfig, mut out: Output) -> Result<Vec<PathBuf>, CliError> {
    let data = direct_samples(cfg, cfg.n_samples, cfg.seed ^ FIT_SALT);
    let mut rng = stream(cfg.seed ^ FIT_SALT, u64::MAX, 0);
    let spec = fit_linear_denoiser(
        &data,
        &cfg.sigma_buckets,
        cfg.n_draws,
        cfg.sigma_data,
        FitSpace::Denoiser,
        &mut rng,
    )?;
    let DenoiserSpec::LinearFit(fit) = spec else {
        unreachable!("fit_linear_denoiser returns a LinearFit");
    };
    let mut doc = serde_json::to_value(&fit).map_err(styledyn::Error::from)?;
    let obj = doc.as_object_mut().expect("LinearFit serializes to an object");
    obj.insert("config".into(), json!(cfg.snapshot()));
    obj.insert("seed".into(), json!(cfg.seed));
    out.write("fit.json", &json_text(&doc)?)?;
    Ok(out.finish())
}

pub fn output_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    Path::new(&cfg.output_dir).join(name)
}
