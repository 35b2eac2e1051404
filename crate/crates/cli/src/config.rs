//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use styledyn::duration::sweep::log_grid;
use styledyn::{DenoiserSpec, MixtureComponent, SamplerMethod, ScheduleParams, StyleVector};

use crate::error::CliError;

/// Keys accepted in a config file or via `--set`, in snapshot order.
pub const KEYS: &[&str] = &[
    "target",
    "gaussian",
    "mixture",
    "dim",
    "method",
    "steps",
    "n_samples",
    "seed",
    "sigma_min",
    "sigma_max",
    "rho",
    "eta",
    "sigma_data",
    "sigma_u",
    "alpha",
    "sentences",
    "n_instances",
    "max_phonemes",
    "max_frames",
    "max_len",
    "n_draws",
    "sigma_buckets",
    "timing_repeats",
    "output_dir",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    Gaussian,
    Mixture,
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetKind::Gaussian => "gaussian",
            TargetKind::Mixture => "mixture",
        })
    }
}

/// Mean given as a scalar on the first axis or as a full vector.
#[derive(Debug, Clone, PartialEq)]
pub enum MeanSpec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl MeanSpec {
    pub fn resolve(&self, dim: usize) -> Result<Vec<f64>, String> {
        match self {
            MeanSpec::Scalar(m) => {
                let mut v = vec![0.0; dim];
                v[0] = *m;
                Ok(v)
            }
            MeanSpec::Vector(v) if v.len() == dim => Ok(v.clone()),
            MeanSpec::Vector(v) => Err(format!("mean has {} entries, dim is {dim}", v.len())),
        }
    }

    fn parse(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let values = parts.iter().map(|p| parse_real(p)).collect::<Result<Vec<_>, _>>()?;
        Ok(if values.len() == 1 {
            MeanSpec::Scalar(values[0])
        } else {
            MeanSpec::Vector(values)
        })
    }
}

impl fmt::Display for MeanSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeanSpec::Scalar(m) => write!(f, "{m:?}"),
            MeanSpec::Vector(v) => {
                let parts: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: MeanSpec,
    pub scale: f64,
}

/// `sigma_u` is either one width or a log-spaced grid `log:lo:hi:n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaUSpec {
    Value(f64),
    LogGrid { lo: f64, hi: f64, n: usize },
}

impl SigmaUSpec {
    pub fn values(&self) -> Result<Vec<f64>, String> {
        match *self {
            SigmaUSpec::Value(v) => Ok(vec![v]),
            SigmaUSpec::LogGrid { lo, hi, n } => log_grid(lo, hi, n).map_err(|e| e.to_string()),
        }
    }
}

impl fmt::Display for SigmaUSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaUSpec::Value(v) => write!(f, "{v:?}"),
            SigmaUSpec::LogGrid { lo, hi, n } => write!(f, "log:{lo:?}:{hi:?}:{n}"),
        }
    }
}

impl FromStr for SigmaUSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(rest) = s.strip_prefix("log:") {
            let parts: Vec<&str> = rest.split(':').collect();
            let [lo, hi, n] = parts[..] else {
                return Err(format!("expected log:lo:hi:n, got {s:?}"));
            };
            let spec = SigmaUSpec::LogGrid {
                lo: parse_real(lo)?,
                hi: parse_real(hi)?,
                n: parse_count(n)?,
            };
            spec.values()?;
            Ok(spec)
        } else {
            let v = parse_real(s)?;
            if v > 0.0 {
                Ok(SigmaUSpec::Value(v))
            } else {
                Err(format!("sigma_u must be positive, got {v}"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub target: TargetKind,
    pub gaussian: ComponentSpec,
    pub mixture: Vec<ComponentSpec>,
    pub dim: usize,
    pub method: SamplerMethod,
    /// `None` means the subcommand default.
    pub steps: Option<Vec<usize>>,
    pub n_samples: usize,
    pub seed: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub eta: f64,
    pub sigma_data: f64,
    pub sigma_u: Option<SigmaUSpec>,
    pub alpha: f64,
    pub sentences: usize,
    pub n_instances: Option<usize>,
    pub max_phonemes: usize,
    pub max_frames: usize,
    pub max_len: usize,
    pub n_draws: usize,
    pub sigma_buckets: Vec<(f64, f64)>,
    pub timing_repeats: usize,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            target: TargetKind::Gaussian,
            gaussian: ComponentSpec {
                weight: 1.0,
                mean: MeanSpec::Scalar(0.0),
                scale: 0.2,
            },
            mixture: vec![
                ComponentSpec { weight: 0.3, mean: MeanSpec::Scalar(-1.0), scale: 0.1 },
                ComponentSpec { weight: 0.7, mean: MeanSpec::Scalar(1.0), scale: 0.1 },
            ],
            dim: 2,
            method: SamplerMethod::Dpm2Ancestral,
            steps: None,
            n_samples: 10_000,
            seed: 0,
            sigma_min: 1e-4,
            sigma_max: 3.0,
            rho: 9.0,
            eta: 1.0,
            sigma_data: 0.2,
            sigma_u: None,
            alpha: 0.7,
            sentences: 10,
            n_instances: None,
            max_phonemes: 8,
            max_frames: 6,
            max_len: 16,
            n_draws: 100_000,
            sigma_buckets: vec![(0.002, 0.02), (0.02, 0.2), (0.2, 2.0)],
            timing_repeats: 3,
            output_dir: ".".into(),
        }
    }
}

fn parse_real(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a real number: {s:?}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("not finite: {s:?}"))
    }
}

fn parse_count(s: &str) -> Result<usize, String> {
    s.trim().parse().map_err(|_| format!("not a non-negative integer: {s:?}"))
}

fn parse_positive_count(s: &str) -> Result<usize, String> {
    match parse_count(s)? {
        0 => Err("must be positive".into()),
        n => Ok(n),
    }
}

fn parse_component(text: &str, with_weight: bool) -> Result<ComponentSpec, String> {
    let parts: Vec<&str> = text.split(':').map(str::trim).collect();
    let (weight, mean, scale) = match (with_weight, &parts[..]) {
        (true, [w, m, s]) => (parse_real(w)?, *m, *s),
        (false, [m, s]) => (1.0, *m, *s),
        _ => {
            let form = if with_weight { "w:mu:s" } else { "mu:s" };
            return Err(format!("expected {form}, got {text:?}"));
        }
    };
    Ok(ComponentSpec {
        weight,
        mean: MeanSpec::parse(mean)?,
        scale: parse_real(scale)?,
    })
}

fn fmt_real(v: f64) -> String {
    format!("{v:?}")
}

impl ExperimentConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got {line:?}"),
                ));
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Recovers the config embedded in a CSV (`# key = value` lines) or JSON
    /// (`"config"` object) output.
    pub fn from_output(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        if text.trim_start().starts_with('{') {
            let doc: serde_json::Value = serde_json::from_str(text)
                .map_err(|e| CliError::config("config", format!("invalid JSON: {e}")))?;
            let map = doc
                .get("config")
                .and_then(|c| c.as_object())
                .ok_or_else(|| CliError::config("config", "JSON has no config object"))?;
            for (k, v) in map {
                let v = v
                    .as_str()
                    .ok_or_else(|| CliError::config(k.clone(), "expected a string value"))?;
                cfg.set(k, v)?;
            }
        } else {
            for line in text.lines() {
                let Some(body) = line.strip_prefix("# ") else { break };
                if let Some((k, v)) = body.split_once('=') {
                    cfg.set(k.trim(), v.trim())?;
                }
            }
        }
        Ok(cfg)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let err = |msg: String| CliError::config(key, msg);
        match key {
            "target" => {
                self.target = match value {
                    "gaussian" => TargetKind::Gaussian,
                    "mixture" => TargetKind::Mixture,
                    _ => return Err(err(format!("expected gaussian or mixture, got {value:?}"))),
                }
            }
            "gaussian" => self.gaussian = parse_component(value, false).map_err(err)?,
            "mixture" => {
                self.mixture = value
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|c| parse_component(c, true))
                    .collect::<Result<_, _>>()
                    .map_err(err)?
            }
            "dim" => self.dim = parse_positive_count(value).map_err(err)?,
            "method" => self.method = value.parse().map_err(|e: styledyn::Error| err(e.to_string()))?,
            "steps" => {
                let steps = value
                    .split(',')
                    .map(parse_count)
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(err)?;
                if steps.iter().any(|&n| n < 2) {
                    return Err(err("step counts must be at least 2".into()));
                }
                self.steps = Some(steps);
            }
            "n_samples" => self.n_samples = parse_positive_count(value).map_err(err)?,
            "seed" => self.seed = value.parse().map_err(|_| err(format!("not a u64: {value:?}")))?,
            "sigma_min" => self.sigma_min = parse_real(value).map_err(err)?,
            "sigma_max" => self.sigma_max = parse_real(value).map_err(err)?,
            "rho" => self.rho = parse_real(value).map_err(err)?,
            "eta" => self.eta = parse_real(value).map_err(err)?,
            "sigma_data" => self.sigma_data = parse_real(value).map_err(err)?,
            "sigma_u" => self.sigma_u = Some(value.parse().map_err(err)?),
            "alpha" => self.alpha = parse_real(value).map_err(err)?,
            "sentences" => self.sentences = parse_positive_count(value).map_err(err)?,
            "n_instances" => self.n_instances = Some(parse_positive_count(value).map_err(err)?),
            "max_phonemes" => self.max_phonemes = parse_positive_count(value).map_err(err)?,
            "max_frames" => self.max_frames = parse_positive_count(value).map_err(err)?,
            "max_len" => self.max_len = parse_positive_count(value).map_err(err)?,
            "n_draws" => self.n_draws = parse_positive_count(value).map_err(err)?,
            "sigma_buckets" => {
                self.sigma_buckets = value
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|b| {
                        let (lo, hi) = b
                            .split_once(':')
                            .ok_or_else(|| format!("expected lo:hi, got {b:?}"))?;
                        Ok((parse_real(lo)?, parse_real(hi)?))
                    })
                    .collect::<Result<_, String>>()
                    .map_err(err)?
            }
            "timing_repeats" => self.timing_repeats = parse_positive_count(value).map_err(err)?,
            "output_dir" => self.output_dir = value.to_string(),
            _ => return Err(CliError::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Text form of one key, inverse of [`set`](Self::set). `None` for unset
    /// optional keys.
    pub fn get(&self, key: &str) -> Option<String> {
        let component = |c: &ComponentSpec| format!("{}:{}", c.mean, fmt_real(c.scale));
        Some(match key {
            "target" => self.target.to_string(),
            "gaussian" => component(&self.gaussian),
            "mixture" => self
                .mixture
                .iter()
                .map(|c| format!("{}:{}", fmt_real(c.weight), component(c)))
                .collect::<Vec<_>>()
                .join("; "),
            "dim" => self.dim.to_string(),
            "method" => self.method.to_string(),
            "steps" => self
                .steps
                .as_ref()?
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "n_samples" => self.n_samples.to_string(),
            "seed" => self.seed.to_string(),
            "sigma_min" => fmt_real(self.sigma_min),
            "sigma_max" => fmt_real(self.sigma_max),
            "rho" => fmt_real(self.rho),
            "eta" => fmt_real(self.eta),
            "sigma_data" => fmt_real(self.sigma_data),
            "sigma_u" => self.sigma_u?.to_string(),
            "alpha" => fmt_real(self.alpha),
            "sentences" => self.sentences.to_string(),
            "n_instances" => self.n_instances?.to_string(),
            "max_phonemes" => self.max_phonemes.to_string(),
            "max_frames" => self.max_frames.to_string(),
            "max_len" => self.max_len.to_string(),
            "n_draws" => self.n_draws.to_string(),
            "sigma_buckets" => self
                .sigma_buckets
                .iter()
                .map(|(lo, hi)| format!("{}:{}", fmt_real(*lo), fmt_real(*hi)))
                .collect::<Vec<_>>()
                .join("; "),
            "timing_repeats" => self.timing_repeats.to_string(),
            "output_dir" => self.output_dir.clone(),
            _ => return None,
        })
    }

    /// Every set key except `output_dir`, in [`KEYS`] order.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.snapshot_lines().into_iter().collect()
    }

    pub fn snapshot_lines(&self) -> Vec<(String, String)> {
        KEYS.iter()
            .filter(|k| **k != "output_dir")
            .filter_map(|k| self.get(k).map(|v| (k.to_string(), v)))
            .collect()
    }

    /// The snapshot as config-file text.
    pub fn to_text(&self) -> String {
        self.snapshot_lines()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn schedule_params(&self, n_steps: usize) -> ScheduleParams {
        ScheduleParams {
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            rho: self.rho,
            n_steps,
        }
    }

    /// Checks every key against the consuming module's domain.
    pub fn validate(&self) -> Result<(), CliError> {
        let check = |key: &str, ok: bool, msg: String| {
            if ok {
                Ok(())
            } else {
                Err(CliError::config(key, msg))
            }
        };
        self.schedule_params(2)
            .validate()
            .map_err(|e| CliError::config("sigma_min/sigma_max/rho", e.to_string()))?;
        check("eta", (0.0..=1.0).contains(&self.eta), format!("must lie in [0, 1], got {}", self.eta))?;
        check("sigma_data", self.sigma_data > 0.0, format!("must be positive, got {}", self.sigma_data))?;
        check("alpha", (0.0..=1.0).contains(&self.alpha), format!("must lie in [0, 1], got {}", self.alpha))?;
        check(
            "max_frames",
            self.max_frames <= self.max_len,
            format!("must not exceed max_len = {}", self.max_len),
        )?;
        check("max_phonemes", self.max_phonemes >= 2, "must be at least 2".into())?;
        check("max_len", self.max_len >= 2, "must be at least 2".into())?;
        self.target_spec().map(|_| ())?;
        for (i, &(lo, hi)) in self.sigma_buckets.iter().enumerate() {
            check(
                "sigma_buckets",
                lo > 0.0 && hi > lo,
                format!("bucket {i} ({lo}, {hi}) must satisfy 0 < lo < hi"),
            )?;
        }
        check("sigma_buckets", !self.sigma_buckets.is_empty(), "no buckets".into())?;
        Ok(())
    }

    /// The analytic target denoiser.
    pub fn target_spec(&self) -> Result<DenoiserSpec, CliError> {
        match self.target {
            TargetKind::Gaussian => {
                let mean = self.gaussian.mean.resolve(self.dim).map_err(|e| CliError::config("gaussian", e))?;
                DenoiserSpec::gaussian(StyleVector::new(mean), self.gaussian.scale)
                    .map_err(|e| CliError::config("gaussian", e.to_string()))
            }
            TargetKind::Mixture => {
                let components = self
                    .mixture
                    .iter()
                    .map(|c| {
                        Ok(MixtureComponent {
                            weight: c.weight,
                            mean: StyleVector::new(c.mean.resolve(self.dim)?),
                            scale: c.scale,
                        })
                    })
                    .collect::<Result<Vec<_>, String>>()
                    .map_err(|e| CliError::config("mixture", e))?;
                DenoiserSpec::mixture(components).map_err(|e| CliError::config("mixture", e.to_string()))
            }
        }
    }
}
