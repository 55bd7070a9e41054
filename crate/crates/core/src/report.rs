//! Evaluation report: JSON document, per-variant metric tables and per-window
//! F1 bar charts (SVG plus aligned text).

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifiers::{Family, ModelSpec};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

/// Outcome for one family on one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub family: Family,
    pub spec: ModelSpec,
    /// Mean CV macro-F1 of the chosen spec, when it was tuned.
    pub cv_f1: Option<f64>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl ModelResult {
    pub fn new(spec: ModelSpec, cv_f1: Option<f64>, metrics: MetricsReport) -> Self {
        ModelResult {
            family: spec.family,
            spec,
            cv_f1,
            accuracy: metrics.accuracy,
            precision: metrics.precision,
            recall: metrics.recall,
            f1: metrics.f1,
            confusion: metrics.confusion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub rpm: u32,
    pub multiplier: u32,
    pub n_rows: usize,
    pub labels: Vec<String>,
    pub models: Vec<ModelResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Resolved run configuration, echoed for provenance.
    pub config: serde_json::Value,
    pub variants: Vec<VariantResult>,
}

/// Checks that `variants` covers exactly `families × grid`, then orders
/// variants rpm-major and models by `Family::ALL`.
pub fn build_report(
    config: serde_json::Value,
    families: &[Family],
    grid: &[(u32, u32)],
    mut variants: Vec<VariantResult>,
) -> Result<EvaluationReport> {
    let mut missing = Vec::new();
    for &(rpm, m) in grid {
        let cell = variants.iter().find(|v| v.rpm == rpm && v.multiplier == m);
        for f in families {
            if !cell.is_some_and(|v| v.models.iter().any(|r| r.family == *f)) {
                missing.push(format!("{} @ {rpm} rpm, multiplier {m}", f.label()));
            }
        }
    }
    let requested: BTreeSet<(u32, u32)> = grid.iter().copied().collect();
    for v in &variants {
        if !requested.contains(&(v.rpm, v.multiplier)) {
            return Err(Error::Input(format!("unrequested variant {} rpm, multiplier {}", v.rpm, v.multiplier)));
        }
        if let Some(extra) = v.models.iter().find(|r| !families.contains(&r.family)) {
            return Err(Error::Input(format!("unrequested family {}", extra.family.label())));
        }
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteGrid(missing));
    }
    variants.sort_by_key(|v| (v.rpm, v.multiplier));
    for v in &mut variants {
        v.models.sort_by_key(|r| Family::ALL.iter().position(|f| *f == r.family));
    }
    Ok(EvaluationReport { config, variants })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Four-column metric table for one variant, values in percent.
pub fn render_table(v: &VariantResult) -> String {
    let mut s = String::new();
    let unit = if v.multiplier == 1 { "tempo" } else { "tempos" };
    let _ = writeln!(s, "{} rpm, window {} {unit}, {} rows", v.rpm, v.multiplier, v.n_rows);
    let _ = writeln!(s, "{:<8}{:>10}{:>11}{:>9}{:>9}", "Model", "Accuracy", "Precision", "Recall", "F1");
    for r in &v.models {
        let _ = writeln!(
            s,
            "{:<8}{:>10}{:>11}{:>9}{:>9}",
            r.family.label(),
            pct(r.accuracy),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1)
        );
    }
    s
}

/// Every variant table, separated by blank lines.
pub fn render_tables(report: &EvaluationReport) -> String {
    report.variants.iter().map(render_table).collect::<Vec<_>>().join("\n")
}

impl EvaluationReport {
    pub fn multipliers(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.variants.iter().map(|v| v.multiplier).collect();
        set.into_iter().collect()
    }

    fn chart_cells(&self, multiplier: u32) -> (Vec<u32>, Vec<Family>, Vec<Vec<f64>>) {
        let vs: Vec<&VariantResult> = self.variants.iter().filter(|v| v.multiplier == multiplier).collect();
        let rpms: Vec<u32> = vs.iter().map(|v| v.rpm).collect();
        let families: Vec<Family> = vs
            .first()
            .map(|v| v.models.iter().map(|r| r.family).collect())
            .unwrap_or_default();
        // f1[family][rpm]
        let f1 = families
            .iter()
            .map(|f| {
                vs.iter()
                    .map(|v| v.models.iter().find(|r| r.family == *f).map_or(0.0, |r| r.f1))
                    .collect()
            })
            .collect();
        (rpms, families, f1)
    }
}

/// F1 per model with one column per rpm, in percent.
pub fn render_chart_text(report: &EvaluationReport, multiplier: u32) -> String {
    let (rpms, families, f1) = report.chart_cells(multiplier);
    let mut s = String::new();
    let _ = writeln!(s, "F1 (%), window {multiplier}");
    let _ = write!(s, "{:<8}", "Model");
    for r in &rpms {
        let _ = write!(s, "{:>10}", format!("{r} rpm"));
    }
    s.push('\n');
    for (f, row) in families.iter().zip(&f1) {
        let _ = write!(s, "{:<8}", f.label());
        for v in row {
            let _ = write!(s, "{:>10}", pct(*v));
        }
        s.push('\n');
    }
    s
}

const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

/// Grouped bar chart: one group per model, one bar per rpm, bar height
/// proportional to F1 on a 0..1 axis.
pub fn render_chart_svg(report: &EvaluationReport, multiplier: u32) -> String {
    let (rpms, families, f1) = report.chart_cells(multiplier);
    let (left, top, plot_h, bar_w, gap) = (50.0, 30.0, 300.0, 14.0, 18.0);
    let group_w = bar_w * rpms.len() as f64 + gap;
    let width = left + group_w * families.len() as f64 + 120.0;
    let height = top + plot_h + 50.0;
    let base = top + plot_h;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="18" font-size="13">F1-score by model, window of {multiplier} tempo{}</text>"#,
        if multiplier == 1 { "" } else { "s" }
    );
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = base - v * plot_h;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            width - 120.0,
            left - 4.0,
            y + 4.0
        );
    }
    for (g, (f, row)) in families.iter().zip(&f1).enumerate() {
        let gx = left + gap / 2.0 + g as f64 * group_w;
        for (b, (&v, rpm)) in row.iter().zip(&rpms).enumerate() {
            let h = v * plot_h;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{}" width="{bar_w}" height="{h}" fill="{}" data-model="{}" data-rpm="{rpm}" data-f1="{v}"/>"#,
                gx + b as f64 * bar_w,
                base - h,
                PALETTE[b % PALETTE.len()],
                f.label()
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            gx + bar_w * rpms.len() as f64 / 2.0,
            base + 16.0,
            f.label()
        );
    }
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{base}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        width - 120.0
    );
    for (b, rpm) in rpms.iter().enumerate() {
        let ly = top + 14.0 * b as f64;
        let lx = width - 110.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{rpm} rpm</text>"#,
            PALETTE[b % PALETTE.len()],
            lx + 14.0,
            ly + 9.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.json`, `tables.txt` and, per window multiplier,
/// `f1_m{m}.svg` and `f1_m{m}.txt`. Returns the written paths.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = vec![
        (dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n"),
        (dir.join("tables.txt"), render_tables(report)),
    ];
    for m in report.multipliers() {
        files.push((dir.join(format!("f1_m{m}.svg")), render_chart_svg(report, m)));
        files.push((dir.join(format!("f1_m{m}.txt")), render_chart_text(report, m)));
    }
    for (path, text) in &files {
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|f| f.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::compute_metrics;

    fn result(family: Family, f1_hint: i64) -> ModelResult {
        let m = compute_metrics(&[vec![f1_hint, 10 - f1_hint], vec![0, 10]]).unwrap();
        ModelResult::new(ModelSpec::default_for(family, 1), Some(0.5), m)
    }

    fn full_grid() -> (Vec<(u32, u32)>, Vec<VariantResult>) {
        let grid: Vec<(u32, u32)> = [1000, 1500, 2000]
            .iter()
            .flat_map(|&r| [1, 2, 5].map(|m| (r, m)))
            .collect();
        let variants = grid
            .iter()
            .rev()
            .map(|&(rpm, m)| VariantResult {
                rpm,
                multiplier: m,
                n_rows: 600 / m as usize,
                labels: vec!["A".into(), "B".into()],
                models: Family::ALL.iter().rev().enumerate().map(|(i, &f)| result(f, i as i64 + 1)).collect(),
            })
            .collect();
        (grid, variants)
    }

    #[test]
    fn full_grid_gives_nine_tables_and_three_charts() {
        let (grid, variants) = full_grid();
        let r = build_report(serde_json::json!({"seed": 1}), &Family::ALL, &grid, variants).unwrap();
        assert_eq!(r.variants.len(), 9);
        assert_eq!((r.variants[0].rpm, r.variants[0].multiplier), (1000, 1));
        assert_eq!(r.variants[0].models[0].family, Family::ALL[0]);
        assert_eq!(render_tables(&r).matches("Accuracy").count(), 9);
        assert_eq!(r.multipliers(), [1, 2, 5]);
        let dir = tempfile::tempdir().unwrap();
        let files = write_report(&r, dir.path()).unwrap();
        assert_eq!(files.len(), 2 + 3 * 2);
        assert_eq!(files.iter().filter(|p| p.extension().unwrap() == "svg").count(), 3);
        let back: EvaluationReport =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn missing_cells_are_listed() {
        let (grid, mut variants) = full_grid();
        variants.retain(|v| !(v.rpm == 1500 && v.multiplier == 2));
        variants[0].models.retain(|m| m.family != Family::Knn);
        match build_report(serde_json::Value::Null, &Family::ALL, &grid, variants) {
            Err(Error::IncompleteGrid(cells)) => {
                assert_eq!(cells.len(), 9 + 1);
                assert!(cells.iter().any(|c| c == "KNN @ 2000 rpm, multiplier 5"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_row_layout() {
        let m = MetricsReport {
            confusion: vec![vec![1]],
            accuracy: 0.985,
            precision: 0.9845,
            recall: 0.9844,
            f1: 0.98445,
            per_class: vec![],
        };
        let v = VariantResult {
            rpm: 2000,
            multiplier: 1,
            n_rows: 10,
            labels: vec!["A".into()],
            models: vec![ModelResult::new(ModelSpec::default_for(Family::Mlp, 0), None, m)],
        };
        let t = render_table(&v);
        let row = t.lines().nth(2).unwrap();
        assert_eq!(row.split_whitespace().collect::<Vec<_>>(), ["MLP", "98.50", "98.45", "98.44", "98.45"]);
    }

    #[test]
    fn bar_heights_equal_reported_f1() {
        let (grid, variants) = full_grid();
        let r = build_report(serde_json::Value::Null, &Family::ALL, &grid, variants).unwrap();
        for m in [1, 2, 5] {
            let svg = render_chart_svg(&r, m);
            let bars: Vec<&str> = svg.lines().filter(|l| l.contains("data-f1")).collect();
            assert_eq!(bars.len(), 9 * 3);
            for bar in bars {
                let attr = |name: &str| {
                    let start = bar.find(&format!(" {name}=\"")).unwrap() + name.len() + 3;
                    bar[start..start + bar[start..].find('"').unwrap()].to_string()
                };
                let f1: f64 = attr("data-f1").parse().unwrap();
                let h: f64 = attr("height").parse().unwrap();
                assert!((h - 300.0 * f1).abs() < 1e-9);
                let rpm: u32 = attr("data-rpm").parse().unwrap();
                let model = attr("data-model");
                let v = r.variants.iter().find(|v| v.rpm == rpm && v.multiplier == m).unwrap();
                assert_eq!(v.models.iter().find(|x| x.family.label() == model).unwrap().f1, f1);
            }
        }
    }

    #[test]
    fn rendering_is_byte_stable() {
        let (grid, variants) = full_grid();
        let a = build_report(serde_json::json!({"x": 1}), &Family::ALL, &grid, variants.clone()).unwrap();
        let b = build_report(serde_json::json!({"x": 1}), &Family::ALL, &grid, variants).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        for (pa, pb) in write_report(&a, da.path()).unwrap().iter().zip(write_report(&b, db.path()).unwrap()) {
            assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        }
        let text = render_chart_text(&a, 1);
        assert_eq!(text.lines().count(), 2 + 9);
    }
}
