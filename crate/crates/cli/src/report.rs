//! CSV and markdown renderings of evaluation rows.
//!
//! CSV schema, one row per (δ, d, sort, method):
//! `delta_thresh,d_thresh,sort_mode,method,hits_open,hits_closed,auroc,fpr95,aupr_e,aupr_s`.
//! Rates and metrics are fractions in [0, 1] with six decimals.

use std::fmt::Write as _;
use std::path::Path;

use ood3d::io::SortMode;
use ood3d::matcher::HitRates;
use ood3d::metrics::MetricReport;

use crate::CliError;

pub const CSV_HEADER: &str = "delta_thresh,d_thresh,sort_mode,method,hits_open,hits_closed,auroc,fpr95,aupr_e,aupr_s";

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub delta_thresh: f64,
    pub d_thresh: f64,
    pub sort_mode: SortMode,
    pub method: String,
    pub hits: HitRates,
    pub metrics: MetricReport,
}

impl ReportRow {
    pub fn to_csv(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.delta_thresh,
            self.d_thresh,
            self.sort_mode.name(),
            self.method,
            self.hits.hits_open,
            self.hits.hits_closed,
            m.auroc,
            m.fpr95,
            m.aupr_e,
            m.aupr_s
        )
    }

    pub fn from_csv(line: &str) -> Result<Self, CliError> {
        let bad = |what: &str| CliError::Data(format!("report row {line:?}: {what}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad("expected 10 columns"));
        }
        let num = |i: usize| f[i].trim().parse::<f64>().map_err(|_| bad("non-numeric field"));
        Ok(Self {
            delta_thresh: num(0)?,
            d_thresh: num(1)?,
            sort_mode: SortMode::parse(f[2]).ok_or_else(|| bad("unknown sort mode"))?,
            method: f[3].to_string(),
            hits: HitRates { hits_open: num(4)?, hits_closed: num(5)? },
            metrics: MetricReport { auroc: num(6)?, fpr95: num(7)?, aupr_e: num(8)?, aupr_s: num(9)?, n_open: 0, n_closed: 0 },
        })
    }
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>, CliError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(CliError::Data("report CSV header mismatch".into())),
    }
    lines.map(ReportRow::from_csv).collect()
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

/// Methods × metrics tables, one per matching setting, in percent.
pub fn render_markdown(title: &str, rows: &[ReportRow]) -> String {
    let mut s = format!("# {title}\n");
    let mut settings: Vec<(f64, f64, SortMode)> = Vec::new();
    for r in rows {
        let key = (r.delta_thresh, r.d_thresh, r.sort_mode);
        if !settings.contains(&key) {
            settings.push(key);
        }
    }
    for (delta, d, sort) in settings {
        let group: Vec<&ReportRow> = rows.iter().filter(|r| (r.delta_thresh, r.d_thresh, r.sort_mode) == (delta, d, sort)).collect();
        let h = group[0].hits;
        let _ = writeln!(s, "\n## δ_thresh = {delta}, d_thresh = {d} m, sort = {}\n", sort.name());
        let _ = writeln!(s, "Hits (O) {}% · Hits (C) {}%\n", pct(h.hits_open), pct(h.hits_closed));
        s.push_str("| Method | AUROC ↑ | FPR-95 ↓ | AUPR-E ↑ | AUPR-S ↑ |\n|---|---|---|---|---|\n");
        for r in group {
            let m = &r.metrics;
            let _ = writeln!(s, "| {} | {} | {} | {} | {} |", r.method, pct(m.auroc), pct(m.fpr95), pct(m.aupr_e), pct(m.aupr_s));
        }
    }
    s
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str) -> ReportRow {
        ReportRow {
            delta_thresh: 0.3,
            d_thresh: 2.0,
            sort_mode: SortMode::DetectorScore,
            method: method.into(),
            hits: HitRates { hits_open: 0.25, hits_closed: 0.5 },
            metrics: MetricReport { auroc: 0.9, fpr95: 0.4, aupr_e: 0.3, aupr_s: 0.99, n_open: 3, n_closed: 9 },
        }
    }

    #[test]
    fn csv_has_ten_columns_and_parses_back() {
        let text = render_csv(&[row("energy"), row("odin")]);
        for line in text.lines() {
            assert_eq!(line.split(',').count(), 10);
        }
        let back = parse_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(render_csv(&back), text);
    }

    #[test]
    fn markdown_groups_settings() {
        let md = render_markdown("t", &[row("energy"), row("odin")]);
        assert_eq!(md.matches("## δ_thresh").count(), 1);
        assert!(md.contains("| odin | 90.0 | 40.0 | 30.0 | 99.0 |"));
    }
}
