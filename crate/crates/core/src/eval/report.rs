//! Report files: metric tables, score summaries, test statistics, profit
//! curves, robustness table and simple SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{score_runs, stat_report, RobustnessTable, RunScore, ScoreWeights, StatReport};
use crate::engine::RunResult;
use crate::stats;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub seed: u64,
    pub layer: usize,
    pub cumulative_profit: f64,
    pub inventory_turnover: f64,
    pub service_level: f64,
    pub total_cost: f64,
    pub prediction_mae: f64,
    pub order_volatility: f64,
    pub mean_efficiency: f64,
    pub layer_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub model: String,
    pub scheme: String,
    pub runs: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub model: String,
    pub layer: usize,
    pub day: usize,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCsvRow {
    pub model: String,
    pub level: f64,
    pub seed: u64,
    pub retailer: f64,
    pub distributor: f64,
    pub manufacturer: f64,
    pub total: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_error(e).context(path.display().to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Schema(format!("csv: {e}"))
}

fn models_in(runs: &[RunResult]) -> Vec<String> {
    let mut models: Vec<String> = runs.iter().map(|r| r.model.name().to_string()).collect();
    models.sort();
    models.dedup();
    models
}

fn group_by_model(scores: &[RunScore], models: &[String]) -> Vec<(String, Vec<f64>)> {
    models
        .iter()
        .map(|m| (m.clone(), scores.iter().filter(|s| &s.model == m).map(|s| s.total).collect()))
        .collect()
}

/// Profit curves of every model and layer: mean and population sd of the
/// cumulative profit across runs, per validation day.
pub fn profit_curves(runs: &[RunResult]) -> Result<Vec<CurveRow>> {
    let mut rows = Vec::new();
    for model in models_in(runs) {
        let of_model: Vec<&RunResult> = runs.iter().filter(|r| r.model.name() == model).collect();
        for layer in 1..=3 {
            let series = of_model
                .iter()
                .map(|r| r.layer(layer)?.get("cumulative_profit"))
                .collect::<Result<Vec<_>>>()?;
            let days = series.iter().map(|s| s.len()).min().unwrap_or(0);
            for day in 0..days {
                let v: Vec<f64> = series.iter().map(|s| s[day]).collect();
                rows.push(CurveRow {
                    model: model.clone(),
                    layer,
                    day,
                    mean: stats::mean(&v),
                    sd: stats::pop_sd(&v),
                });
            }
        }
    }
    Ok(rows)
}

/// Everything `evaluate` produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub weights: ScoreWeights,
    pub scores: Vec<RunScore>,
    pub score_stats: StatReport,
    pub profit_stats: StatReport,
}

pub fn evaluate_runs(runs: &[RunResult], weights: &ScoreWeights) -> Result<Evaluation> {
    if runs.is_empty() {
        return Err(Error::domain("no runs to evaluate"));
    }
    let models = models_in(runs);
    let scores = score_runs(runs, weights)?;
    let score_stats = stat_report("total_score", &group_by_model(&scores, &models))?;
    let profits = models
        .iter()
        .map(|m| {
            let v = runs
                .iter()
                .filter(|r| r.model.name() == m)
                .map(|r| r.total_profit())
                .collect::<Result<Vec<_>>>()?;
            Ok((m.clone(), v))
        })
        .collect::<Result<Vec<_>>>()?;
    let profit_stats = stat_report("total_profit", &profits)?;
    Ok(Evaluation {
        weights: *weights,
        scores,
        score_stats,
        profit_stats,
    })
}

/// Writes report.csv, scores.csv, stats.json and profit_curves.csv.
pub fn write_evaluation(dir: &Path, runs: &[RunResult], weights: &ScoreWeights) -> Result<Evaluation> {
    fs::create_dir_all(dir)?;
    let eval = evaluate_runs(runs, weights)?;

    let mut metric_rows = Vec::new();
    for s in &eval.scores {
        for (i, m) in s.metrics.iter().enumerate() {
            metric_rows.push(MetricRow {
                model: s.model.clone(),
                seed: s.seed,
                layer: i + 1,
                cumulative_profit: m.cumulative_profit,
                inventory_turnover: m.inventory_turnover,
                service_level: m.service_level,
                total_cost: m.total_cost,
                prediction_mae: m.prediction_mae,
                order_volatility: m.order_volatility,
                mean_efficiency: stats::mean(&m.efficiency),
                layer_score: s.layer_scores[i],
            });
        }
    }
    write_csv(&dir.join("report.csv"), &metric_rows)?;

    let models = models_in(runs);
    let mut score_rows = Vec::new();
    for (scheme, w) in [("default", ScoreWeights::DEFAULT), ("custom", ScoreWeights::CUSTOM)] {
        let scores = score_runs(runs, &w)?;
        for (model, totals) in group_by_model(&scores, &models) {
            score_rows.push(ScoreRow {
                model,
                scheme: scheme.to_string(),
                runs: totals.len(),
                mean: stats::mean(&totals),
                sd: if totals.len() > 1 { stats::sample_sd(&totals) } else { 0.0 },
            });
        }
    }
    write_csv(&dir.join("scores.csv"), &score_rows)?;

    let stats_json = serde_json::json!({
        "weights": eval.weights,
        "score": eval.score_stats,
        "profit": eval.profit_stats,
    });
    fs::write(dir.join("stats.json"), serde_json::to_vec_pretty(&stats_json)?)?;
    write_csv(&dir.join("profit_curves.csv"), &profit_curves(runs)?)?;
    Ok(eval)
}

pub fn write_robustness(dir: &Path, tables: &[RobustnessTable]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rows: Vec<RobustnessCsvRow> = tables
        .iter()
        .flat_map(|t| {
            t.rows.iter().map(|r| RobustnessCsvRow {
                model: t.model.clone(),
                level: r.level,
                seed: r.seed,
                retailer: r.layer_profits[0],
                distributor: r.layer_profits[1],
                manufacturer: r.layer_profits[2],
                total: r.total,
            })
        })
        .collect();
    write_csv(&dir.join("robustness.csv"), &rows)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let span = if self.x1 > self.x0 { self.x1 - self.x0 } else { 1.0 };
        MARGIN + (x - self.x0) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        let span = if self.y1 > self.y0 { self.y1 - self.y0 } else { 1.0 };
        HEIGHT - MARGIN - (y - self.y0) / span * (HEIGHT - 2.0 * MARGIN)
    }
}

fn svg_open(title: &str, frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let y = frame.y0 + (frame.y1 - frame.y0) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 6.0,
            frame.py(y) + 4.0,
            short_number(y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    s
}

fn short_number(v: f64) -> String {
    let a = v.abs();
    if a >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if a >= 1e3 {
        format!("{:.1}k", v / 1e3)
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(s: &mut String, names: &[String]) {
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 16.0 * i as f64;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            MARGIN + 10.0,
            y,
            MARGIN + 26.0,
            y + 9.0,
            escape(name)
        );
    }
}

/// Mean cumulative profit per model for one layer, with a ±1 sd band.
pub fn render_profit_svg(curves: &[CurveRow], layer: usize) -> String {
    let rows: Vec<&CurveRow> = curves.iter().filter(|c| c.layer == layer).collect();
    let mut models: Vec<String> = rows.iter().map(|c| c.model.clone()).collect();
    models.sort();
    models.dedup();
    let frame = Frame {
        x0: 0.0,
        x1: rows.iter().map(|c| c.day as f64).fold(0.0, f64::max),
        y0: rows.iter().map(|c| c.mean - c.sd).fold(f64::INFINITY, f64::min).min(0.0),
        y1: rows.iter().map(|c| c.mean + c.sd).fold(f64::NEG_INFINITY, f64::max).max(1.0),
    };
    let mut s = svg_open(
        &format!("Cumulative profit, layer {layer}"),
        &frame,
        "validation day",
        "cumulative profit",
    );
    for (i, model) in models.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let series: Vec<&&CurveRow> = rows.iter().filter(|c| &c.model == model).collect();
        let upper: Vec<String> = series
            .iter()
            .map(|c| format!("{:.1},{:.1}", frame.px(c.day as f64), frame.py(c.mean + c.sd)))
            .collect();
        let lower: Vec<String> = series
            .iter()
            .rev()
            .map(|c| format!("{:.1},{:.1}", frame.px(c.day as f64), frame.py(c.mean - c.sd)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = series
            .iter()
            .map(|c| format!("{:.1},{:.1}", frame.px(c.day as f64), frame.py(c.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
    }
    legend(&mut s, &models);
    s.push_str("</svg>\n");
    s
}

/// Mean total profit per model and noise level as grouped bars.
pub fn render_robustness_svg(rows: &[RobustnessCsvRow]) -> String {
    let mut models: Vec<String> = rows.iter().map(|r| r.model.clone()).collect();
    models.sort();
    models.dedup();
    let mut levels: Vec<f64> = rows.iter().map(|r| r.level).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mean = |m: &str, l: f64| {
        let v: Vec<f64> = rows.iter().filter(|r| r.model == m && r.level == l).map(|r| r.total).collect();
        stats::mean(&v)
    };
    let values: Vec<f64> = models.iter().flat_map(|m| levels.iter().map(move |&l| (m, l))).map(|(m, l)| mean(m, l)).collect();
    let frame = Frame {
        x0: 0.0,
        x1: 1.0,
        y0: values.iter().copied().fold(0.0, f64::min),
        y1: values.iter().copied().fold(1.0, f64::max),
    };
    let mut s = svg_open("Total profit under demand noise", &frame, "noise level", "mean total profit");
    let groups = levels.len().max(1) as f64;
    let group_w = (WIDTH - 2.0 * MARGIN) / groups;
    let bar_w = group_w * 0.8 / models.len().max(1) as f64;
    for (g, &level) in levels.iter().enumerate() {
        let gx = MARGIN + g as f64 * group_w + group_w * 0.1;
        for (i, m) in models.iter().enumerate() {
            let v = mean(m, level);
            let (top, bottom) = (frame.py(v.max(0.0)), frame.py(v.min(0.0)));
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                gx + i as f64 * bar_w,
                top,
                bar_w * 0.95,
                (bottom - top).max(0.5),
                PALETTE[i % PALETTE.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{level}</text>"#,
            gx + group_w * 0.4,
            HEIGHT - MARGIN + 16.0
        );
    }
    legend(&mut s, &models);
    s.push_str("</svg>\n");
    s
}

/// Renders SVGs for whichever of profit_curves.csv and robustness.csv exist
/// in `dir`. Returns the files written.
pub fn render_plots(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let curves_path = dir.join("profit_curves.csv");
    if curves_path.exists() {
        let curves: Vec<CurveRow> = read_csv(&curves_path)?;
        for layer in 1..=3 {
            let path = dir.join(format!("profit_layer{layer}.svg"));
            fs::write(&path, render_profit_svg(&curves, layer))?;
            written.push(path);
        }
    }
    let robust_path = dir.join("robustness.csv");
    if robust_path.exists() {
        let rows: Vec<RobustnessCsvRow> = read_csv(&robust_path)?;
        let path = dir.join("robustness.svg");
        fs::write(&path, render_robustness_svg(&rows))?;
        written.push(path);
    }
    if written.is_empty() {
        return Err(Error::config(format!(
            "{} has neither profit_curves.csv nor robustness.csv",
            dir.display()
        )));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::tests::fixture_run;
    use crate::forecast::ForecasterKind;

    fn runs() -> Vec<RunResult> {
        let mut out = Vec::new();
        for (i, model) in [ForecasterKind::Sma, ForecasterKind::Gbt].into_iter().enumerate() {
            for seed in 0..3u64 {
                let p = 10.0 * (i as f64 + 1.0) + seed as f64;
                let mut r = fixture_run(&[
                    ("demand", vec![5.0, 6.0]),
                    ("sales", vec![5.0, 5.0 + i as f64]),
                    ("inventory_start", vec![10.0, 10.0]),
                    ("inventory", vec![5.0, 4.0]),
                    ("profit", vec![p, p]),
                    ("cumulative_profit", vec![p, 2.0 * p]),
                ]);
                r.model = model;
                r.seed = seed;
                out.push(r);
            }
        }
        out
    }

    #[test]
    fn writes_all_report_files() {
        let dir = tempfile::tempdir().unwrap();
        let eval = write_evaluation(dir.path(), &runs(), &ScoreWeights::DEFAULT).unwrap();
        for f in ["report.csv", "scores.csv", "stats.json", "profit_curves.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert_eq!(eval.scores.len(), 6);
        assert_eq!(eval.profit_stats.ranking[0].0, "gbt");
        let metrics: Vec<MetricRow> = read_csv(&dir.path().join("report.csv")).unwrap();
        assert_eq!(metrics.len(), 18);
        let curves: Vec<CurveRow> = read_csv(&dir.path().join("profit_curves.csv")).unwrap();
        assert_eq!(curves.len(), 2 * 3 * 2);
        let sma_day1 = curves.iter().find(|c| c.model == "sma" && c.layer == 1 && c.day == 1).unwrap();
        assert_eq!(sma_day1.mean, 22.0);
        let files = render_plots(dir.path()).unwrap();
        assert_eq!(files.len(), 3);
        let svg = fs::read_to_string(&files[0]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }

    #[test]
    fn robustness_csv_and_bars() {
        let dir = tempfile::tempdir().unwrap();
        let table = RobustnessTable {
            model: "hybrid".into(),
            rows: vec![
                super::super::RobustnessRow {
                    level: 0.0,
                    seed: 42,
                    layer_profits: [1.0, 2.0, 3.0],
                    total: 6.0,
                },
                super::super::RobustnessRow {
                    level: 1.0,
                    seed: 42,
                    layer_profits: [1.0, 1.0, 1.0],
                    total: 3.0,
                },
            ],
        };
        write_robustness(dir.path(), &[table]).unwrap();
        let files = render_plots(dir.path()).unwrap();
        assert_eq!(files.len(), 1);
        let svg = fs::read_to_string(&files[0]).unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 2 + 1);
    }

    #[test]
    fn render_without_inputs_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(render_plots(dir.path()).is_err());
    }
}
