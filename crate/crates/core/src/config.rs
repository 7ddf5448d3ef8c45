//! Experiment configuration: a flat sectioned key = value file, typed
//! overrides, JSON round-trip for the report sidecar, and a content hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{KreinError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshConfig {
    pub half_length: f64,
    pub k_per_side: usize,
    pub grading_exponent: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            half_length: 10.0,
            k_per_side: 2000,
            grading_exponent: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    pub kappa: f64,
    pub beta: f64,
    /// The zero potential (kappa -> infinity limit).
    pub zero: bool,
    /// Cap V permanently at this height: the cutoff family saturates and
    /// the admissibility supremum becomes finite.
    pub permanent_cap: Option<f64>,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            kappa: 1.0,
            beta: 1.5,
            zero: false,
            permanent_cap: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    /// Absolute coupling; mutually exclusive with `alpha_fraction`.
    pub alpha: Option<f64>,
    /// Coupling as a fraction of the estimated 1/a.
    pub alpha_fraction: Option<f64>,
    pub eta: f64,
    /// Resolvent shift; default `eta - alpha * b - 2`.
    pub z: Option<f64>,
    pub schedule: Vec<f64>,
    pub seed: u64,
    /// Extension specs to run: `friedrichs`, `krein`, or `general:<t>`
    /// (full deficiency subspace with q = t * identity).
    pub specs: Vec<String>,
    pub k_eigs: usize,
    pub b_grid: Vec<f64>,
    pub norm_iterations: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            alpha: None,
            alpha_fraction: None,
            eta: -1.0,
            z: None,
            schedule: (1..=6).map(|e| 10.0f64.powi(e)).collect(),
            seed: 1,
            specs: vec!["friedrichs".into(), "krein".into()],
            k_eigs: 3,
            b_grid: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            norm_iterations: 120,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mesh: MeshConfig,
    pub potential: PotentialConfig,
    pub experiment: ExperimentSection,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| {
        KreinError::Validation(format!("cannot parse value `{value}` for key `{key}`"))
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|tok| parse::<f64>(key, tok))
        .collect()
}

impl ExperimentConfig {
    /// Apply one `key = value` pair; `key` may be bare or `section.key`.
    /// Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bare = key.rsplit('.').next().unwrap();
        if let Some(section) = key.strip_suffix(bare).map(|s| s.trim_end_matches('.')) {
            if !section.is_empty()
                && !matches!(section, "mesh" | "potential" | "experiment")
            {
                return Err(KreinError::Validation(format!(
                    "unknown config section `{section}`"
                )));
            }
        }
        match bare {
            "half_length" => self.mesh.half_length = parse(key, value)?,
            "k_per_side" => self.mesh.k_per_side = parse(key, value)?,
            "grading_exponent" => self.mesh.grading_exponent = parse(key, value)?,
            "kappa" => self.potential.kappa = parse(key, value)?,
            "beta" => self.potential.beta = parse(key, value)?,
            "zero" => self.potential.zero = parse(key, value)?,
            "permanent_cap" => self.potential.permanent_cap = Some(parse(key, value)?),
            "alpha" => self.experiment.alpha = Some(parse(key, value)?),
            "alpha_fraction" => self.experiment.alpha_fraction = Some(parse(key, value)?),
            "eta" => self.experiment.eta = parse(key, value)?,
            "z" => self.experiment.z = Some(parse(key, value)?),
            "schedule" => self.experiment.schedule = parse_list(key, value)?,
            "seed" => self.experiment.seed = parse(key, value)?,
            "specs" => {
                self.experiment.specs =
                    value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "k_eigs" => self.experiment.k_eigs = parse(key, value)?,
            "b_grid" => self.experiment.b_grid = parse_list(key, value)?,
            "norm_iterations" => self.experiment.norm_iterations = parse(key, value)?,
            other => {
                return Err(KreinError::Validation(format!(
                    "unknown config key `{other}`"
                )))
            }
        }
        Ok(())
    }

    /// Parse the sectioned text format.  `#` and `;` start comments.
    pub fn from_ini(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "mesh" | "potential" | "experiment") {
                    return Err(KreinError::Validation(format!(
                        "unknown config section `{section}` (line {})",
                        lineno + 1
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                KreinError::Validation(format!("expected key = value on line {}", lineno + 1))
            })?;
            let full = if section.is_empty() {
                key.trim().to_string()
            } else {
                format!("{section}.{}", key.trim())
            };
            cfg.set(&full, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Accepts either the sectioned text format or the JSON sidecar echo.
    pub fn from_str_any(text: &str) -> Result<ExperimentConfig> {
        if text.trim_start().starts_with('{') {
            let cfg: ExperimentConfig = serde_json::from_str(text)?;
            cfg.validate()?;
            Ok(cfg)
        } else {
            Self::from_ini(text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.eta >= 0.0 {
            return Err(KreinError::EtaNotNegative(self.experiment.eta));
        }
        if self.experiment.alpha.is_some() && self.experiment.alpha_fraction.is_some() {
            return Err(KreinError::Validation(
                "alpha and alpha_fraction are mutually exclusive".into(),
            ));
        }
        if let Some(a) = self.experiment.alpha {
            if a < 0.0 {
                return Err(KreinError::Validation(format!(
                    "alpha must be >= 0, got {a}"
                )));
            }
        }
        if self.experiment.k_eigs == 0 || self.experiment.k_eigs > 5 {
            return Err(KreinError::Validation(format!(
                "k_eigs must lie in 1..=5, got {}",
                self.experiment.k_eigs
            )));
        }
        if self.experiment.schedule.is_empty() {
            return Err(KreinError::Validation("empty cutoff schedule".into()));
        }
        let mut prev = 0.0;
        for &n in &self.experiment.schedule {
            if n <= prev {
                return Err(KreinError::Validation(
                    "cutoff schedule must be strictly increasing and positive".into(),
                ));
            }
            prev = n;
        }
        if self.experiment.specs.is_empty() {
            return Err(KreinError::Validation("no extension specs requested".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }

    /// Content hash over the canonical JSON form.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_string(self).unwrap().as_bytes());
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
