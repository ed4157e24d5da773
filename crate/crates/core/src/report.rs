//! Report documents and their derived text and CSV views.
//!
//! JSON is the only stored format. Floats are written with 17 significant
//! digits so every value parses back to the same bits.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::episodes::{ExperimentReport, RunConfig};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// One experiment inside a document, with the exact config that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub label: String,
    pub config: RunConfig,
    pub results: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub format_version: u32,
    pub artifact_version: String,
    /// `run`, `ablate-r` or `ablate-sampling`.
    pub command: String,
    pub master_seed: u64,
    pub arms: Vec<Arm>,
    pub wall_clock_seconds: f64,
}

impl ReportDocument {
    pub fn new(command: &str, master_seed: u64, arms: Vec<Arm>, wall_clock_seconds: f64) -> Self {
        ReportDocument {
            format_version: FORMAT_VERSION,
            artifact_version: ARTIFACT_VERSION.to_string(),
            command: command.to_string(),
            master_seed,
            arms,
            wall_clock_seconds,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ReportDocument = serde_json::from_str(text)?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: doc.format_version,
                supported: FORMAT_VERSION,
            });
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::file(path, e))
    }

    pub fn episode_count(&self) -> usize {
        self.arms.iter().map(|a| a.results.episode_count()).sum()
    }
}

/// Pretty printer that writes floats as `d.dddddddddddddddde±x`.
struct ExactFloats<'a>(PrettyFormatter<'a>);

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Pretty JSON with 17-significant-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, ExactFloats(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn pct_pm(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                let pad = widths[c] - cell.chars().count();
                if c == 0 {
                    format!("{cell}{}", " ".repeat(pad))
                } else {
                    format!("{}{cell}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Aligned summary table, one row per arm and shot; accuracies in percent.
pub fn render_text(doc: &ReportDocument) -> String {
    let mut rows = vec![[
        "arm", "shot", "runs", "episodes", "accuracy", "baseline", "gain", "ACC_m", "sigma", "ACC_1",
        "ACC_10", "ACC_100", "CI95", "eps_hat",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect::<Vec<_>>()];
    for arm in &doc.arms {
        for shot in &arm.results.shots {
            let s = &shot.summary;
            let episodes: usize = shot.runs.iter().map(|r| r.episodes.len()).sum();
            let eps: Vec<f64> = shot
                .runs
                .iter()
                .flat_map(|r| &r.episodes)
                .filter_map(|e| e.eps_hat)
                .collect();
            let eps_hat = if eps.is_empty() {
                "-".to_string()
            } else {
                format!("{:.4}", eps.iter().sum::<f64>() / eps.len() as f64)
            };
            rows.push(vec![
                arm.label.clone(),
                shot.shot.to_string(),
                shot.runs.len().to_string(),
                episodes.to_string(),
                pct_pm(s.accuracy_mean, s.accuracy_std),
                pct_pm(s.baseline_mean, s.baseline_std),
                format!("{:+.2}", 100.0 * s.gain_mean),
                pct(s.metrics.acc_m),
                pct(s.metrics.sigma),
                pct(s.metrics.acc_1),
                pct(s.metrics.acc_10),
                pct(s.metrics.acc_100),
                pct(s.metrics.ci95),
                eps_hat,
            ]);
        }
    }
    let mut out = format!(
        "{} (format {}, artifact {}, seed {})\n",
        doc.command, doc.format_version, doc.artifact_version, doc.master_seed
    );
    out.push_str(&aligned(&rows));
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const CSV_HEADER: &str =
    "arm,shot,run,episode,seed,accuracy,baseline_accuracy,eps_hat,acc_up,baseline_lr,ibm2_lr";

/// Header plus one row per evaluated episode.
pub fn render_csv(doc: &ReportDocument) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for arm in &doc.arms {
        let label = csv_field(&arm.label);
        for shot in &arm.results.shots {
            for run in &shot.runs {
                for e in &run.episodes {
                    let _ = writeln!(
                        out,
                        "{label},{},{},{},{},{:.16e},{:.16e},{},{},{:.16e},{}",
                        shot.shot,
                        run.run,
                        e.index,
                        e.seed,
                        e.accuracy,
                        e.baseline_accuracy,
                        opt(e.eps_hat),
                        opt(e.acc_up),
                        e.baseline_lr,
                        opt(e.ibm2_lr),
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Wrap {
        v: Vec<f64>,
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_json_string(&Wrap { v: vec![0.1, 1.0, -2.5e-300] }).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("1.0000000000000000e0"), "{s}");
        assert!(s.ends_with('\n'));
    }

    #[test]
    fn text_aligns_columns() {
        let rows = vec![
            vec!["a".to_string(), "1".to_string()],
            vec!["long".to_string(), "100".to_string()],
        ];
        assert_eq!(aligned(&rows), "a       1\nlong  100\n");
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    proptest! {
        #[test]
        fn floats_round_trip(v in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..50)) {
            let w = Wrap { v };
            let back: Wrap = serde_json::from_str(&to_json_string(&w).unwrap()).unwrap();
            for (a, b) in w.v.iter().zip(&back.v) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
