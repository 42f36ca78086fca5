use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::metrics::MetricsReport;

pub const REPORT_FILE: &str = "report.json";
pub const CELLS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.md";
pub const PLOT_FILE: &str = "rmse_vs_horizon.svg";

/// One cell of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub method: String,
    /// A seed, or `None` for the across-seed aggregate.
    pub seed: Option<u64>,
    /// Horizon `1..=tau`, or `None` for the average over horizons.
    pub horizon: Option<usize>,
    pub rmse: f64,
    pub std: Option<f64>,
}

pub fn cells(report: &MetricsReport) -> Vec<MetricCell> {
    let mut out = Vec::new();
    for m in &report.methods {
        for s in &m.per_seed {
            for (i, v) in s.rmse.iter().enumerate() {
                out.push(MetricCell {
                    method: m.method.clone(),
                    seed: Some(s.seed),
                    horizon: Some(i + 1),
                    rmse: *v,
                    std: None,
                });
            }
            out.push(MetricCell {
                method: m.method.clone(),
                seed: Some(s.seed),
                horizon: None,
                rmse: s.average,
                std: None,
            });
        }
        for (i, v) in m.mean.iter().enumerate() {
            out.push(MetricCell {
                method: m.method.clone(),
                seed: None,
                horizon: Some(i + 1),
                rmse: *v,
                std: m.std.as_ref().map(|s| s[i]),
            });
        }
        out.push(MetricCell {
            method: m.method.clone(),
            seed: None,
            horizon: None,
            rmse: m.mean_average,
            std: m.std_average,
        });
    }
    out
}

fn cell_text(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{mean:.3} ± {s:.3}"),
        None => format!("{mean:.3} ± n/a"),
    }
}

/// Markdown table with one row per method and columns `tau=1..tau`, `Avg`.
pub fn summary_table(report: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# Counterfactual RMSE ({}, {} seed(s))\n",
        report.setting,
        report.seeds.len()
    );
    s.push_str("| Method |");
    for i in 1..=report.tau {
        let _ = write!(s, " τ={i} |");
    }
    s.push_str(" Avg |\n|---|");
    s.push_str(&"---|".repeat(report.tau + 1));
    s.push('\n');
    for m in &report.methods {
        let _ = write!(s, "| {} |", m.method);
        for i in 0..report.tau {
            let _ = write!(s, " {} |", cell_text(m.mean[i], m.std.as_ref().map(|v| v[i])));
        }
        let _ = writeln!(s, " {} |", cell_text(m.mean_average, m.std_average));
    }
    let _ = writeln!(
        s,
        "\nMean ± sample standard deviation over seeds {:?}. Wall clock {:.1} s. Config {}. {}.",
        report.seeds,
        report.wall_clock_secs,
        &report.config_hash[..report.config_hash.len().min(12)],
        report.provenance
    );
    s
}

/// Line plot of mean RMSE against horizon, one polyline per method.
pub fn rmse_plot_svg(report: &MetricsReport) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const PAD: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let y_max = report
        .methods
        .iter()
        .flat_map(|m| m.mean.iter().copied())
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.1;
    let x = |i: usize| PAD + (W - 2.0 * PAD) * if report.tau > 1 { i as f64 / (report.tau - 1) as f64 } else { 0.5 };
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v / y_max;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    for i in 0..report.tau {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x(i), H - PAD + 18.0, i + 1);
    }
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, PAD - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">horizon</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(s, r#"<text x="15" y="{:.1}" transform="rotate(-90 15 {:.1})" text-anchor="middle">RMSE</text>"#, H / 2.0, H / 2.0);
    for (k, m) in report.methods.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = m.mean.iter().enumerate().map(|(i, v)| format!("{:.1},{:.1}", x(i), y(*v))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, points.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            W - PAD - 150.0,
            PAD + 16.0 * k as f64,
            xml_escape(&m.method)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write the full report, one JSON record per table cell, the markdown
/// summary and (optionally) the plot into `dir`.
pub fn emit_report(report: &MetricsReport, dir: &Path, plots: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let path = dir.join(REPORT_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.flush()?;
    written.push(path);

    let path = dir.join(CELLS_FILE);
    let mut w = BufWriter::new(File::create(&path)?);
    for cell in cells(report) {
        serde_json::to_writer(&mut w, &cell)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join(SUMMARY_FILE);
    fs::write(&path, summary_table(report))?;
    written.push(path);

    if plots {
        let path = dir.join(PLOT_FILE);
        fs::write(&path, rmse_plot_svg(report))?;
        written.push(path);
    }
    Ok(written)
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Setting;
    use crate::harness::metrics::{MethodMetrics, RunRecord, SeedMetrics};

    fn report() -> MetricsReport {
        let tau = 6;
        let method = |name: &str, base: f64| {
            MethodMetrics::from_seeds(
                name,
                (0..2)
                    .map(|s| SeedMetrics::new(s, (0..tau).map(|i| base + 0.1 * i as f64 + 0.01 * s as f64 + 1.0 / 3.0).collect(), 54))
                    .collect(),
            )
            .unwrap()
        };
        MetricsReport {
            setting: Setting::ZeroShot,
            tau,
            seeds: vec![0, 1],
            methods: vec![method("COSTAR", 1.0), method("Last value", 2.0)],
            runs: vec![RunRecord {
                seed: 0,
                pretrain_best_epoch: Some(3),
                pretrain_best_val_loss: Some(0.123456789),
                finetune: vec![("COSTAR".into(), 2, 0.7)],
                eval_split_reads_before_eval: 0,
                wall_clock_secs: 1.5,
            }],
            wall_clock_secs: 3.25,
            config_hash: "ab".repeat(32),
            provenance: "costar-core 0.1.0 (rev unknown)".into(),
        }
    }

    #[test]
    fn emitted_report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let files = emit_report(&r, dir.path(), true).unwrap();
        assert_eq!(files.len(), 4);
        assert_eq!(load_report(&dir.path().join(REPORT_FILE)).unwrap(), r);
        let lines = fs::read_to_string(dir.path().join(CELLS_FILE)).unwrap();
        let parsed: Vec<MetricCell> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed, cells(&r));
    }

    #[test]
    fn summary_has_one_row_per_method_and_avg_column() {
        let s = summary_table(&report());
        let header = s.lines().find(|l| l.starts_with("| Method")).unwrap();
        for i in 1..=6 {
            assert!(header.contains(&format!("τ={i}")));
        }
        assert!(header.ends_with("Avg |"));
        assert_eq!(s.lines().filter(|l| l.starts_with("| COSTAR") || l.starts_with("| Last value")).count(), 2);
    }

    #[test]
    fn plots_can_be_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&report(), dir.path(), false).unwrap();
        assert!(!dir.path().join(PLOT_FILE).exists());
        assert_eq!(files.len(), 3);
    }

    #[test]
    fn unwritable_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(emit_report(&report(), &blocker.join("sub"), false).is_err());
    }
}
