//! Machine-readable experiment reports: a CSV data file (17 significant
//! digits, deterministic modulo the timestamp comment) plus a JSON sidecar
//! with the config echo, warnings, and content hash.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;

pub const CSV_HEADER: &str = "n,spec,vector_id,sre_error,norm_resolvent_est,admissibility_plus,admissibility_minus,eig1,eig2,eig3";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub n: f64,
    pub spec: String,
    pub vector_id: String,
    pub sre_error: f64,
    pub norm_resolvent_est: f64,
    pub admissibility_plus: f64,
    pub admissibility_minus: f64,
    pub eig1: f64,
    pub eig2: f64,
    pub eig3: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    pub warnings: Vec<String>,
    pub config: ExperimentConfig,
    pub config_hash: String,
    /// Extra scalar findings (fitted slopes, verdicts, resolved parameters).
    pub notes: Vec<(String, String)>,
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v:.16e}")
    }
}

impl ConvergenceReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        ConvergenceReport {
            rows: Vec::new(),
            warnings: Vec::new(),
            config: config.clone(),
            config_hash: config.hash(),
            notes: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.notes.push((key.to_string(), value.to_string()));
    }

    pub fn find_note(&self, key: &str) -> Option<&str> {
        self.notes
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// The deterministic data section: header plus one line per row.
    pub fn csv_data(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                fmt(r.n),
                r.spec,
                r.vector_id,
                fmt(r.sre_error),
                fmt(r.norm_resolvent_est),
                fmt(r.admissibility_plus),
                fmt(r.admissibility_minus),
                fmt(r.eig1),
                fmt(r.eig2),
                fmt(r.eig3),
            ));
        }
        out
    }

    /// Atomic write: the file appears complete or not at all.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let body = format!("# generated at unix time {stamp}\n{}", self.csv_data());
        write_atomic(path, body.as_bytes())
    }

    pub fn sidecar_json(&self) -> String {
        let meta = serde_json::json!({
            "config": self.config,
            "config_hash": self.config_hash,
            "warnings": self.warnings,
            "notes": self.notes,
            "library_version": env!("CARGO_PKG_VERSION"),
        });
        serde_json::to_string_pretty(&meta).unwrap()
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.sidecar_json().as_bytes())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> ConvergenceReport {
        let cfg = ExperimentConfig::default();
        let mut rep = ConvergenceReport::new(&cfg);
        rep.rows.push(ReportRow {
            n: 10.0,
            spec: "krein".into(),
            vector_id: "gauss0".into(),
            sre_error: 1.25e-3,
            norm_resolvent_est: 2.0e-2,
            admissibility_plus: 3.5,
            admissibility_minus: 3.5,
            eig1: -1.0,
            eig2: -1.0,
            eig3: 0.09,
        });
        rep
    }

    #[test]
    fn csv_has_the_mandated_header_and_precision() {
        let rep = sample_report();
        let csv = rep.csv_data();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        assert!(row.contains("1.2500000000000000e-3"), "{row}");
        assert!(row.contains(",krein,gauss0,"));
    }

    #[test]
    fn data_section_is_deterministic_and_file_write_is_atomic() {
        let rep = sample_report();
        assert_eq!(rep.csv_data(), rep.csv_data());
        let dir = std::env::temp_dir().join(format!("kreinlab-report-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.csv");
        rep.write_csv(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# generated at unix time "));
        assert!(text.contains(CSV_HEADER));
        assert!(!dir.join("run.tmp").exists());
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn sidecar_embeds_config_echo_and_hash() {
        let rep = sample_report();
        let json = rep.sidecar_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["config_hash"].as_str().unwrap(), rep.config_hash);
        let cfg2 = crate::config::ExperimentConfig::from_str_any(
            &serde_json::to_string(&v["config"]).unwrap(),
        )
        .unwrap();
        assert_eq!(cfg2, rep.config);
    }
}
