//! Markdown, CSV, JSON and SVG renderings of metric results.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::corpus::BiasCategory;
use crate::metrics::{CategoryStats, CrossEvalReport, DeltaReport, DeltaRow, Outcome, StatsMap};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("nothing to plot: the statistics are empty")]
    EmptyPlot,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Markdown => "md",
            Self::Csv => "csv",
            Self::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

/// Anything [`render_table`] knows how to lay out.
#[derive(Debug, Clone, Copy)]
pub enum Table<'a> {
    Stats(&'a StatsMap),
    Delta(&'a DeltaReport),
}

impl<'a> From<&'a StatsMap> for Table<'a> {
    fn from(stats: &'a StatsMap) -> Self {
        Self::Stats(stats)
    }
}

impl<'a> From<&'a DeltaReport> for Table<'a> {
    fn from(delta: &'a DeltaReport) -> Self {
        Self::Delta(delta)
    }
}

/// Two decimals, as in the published tables.
pub fn ratio_cell(x: f64) -> String {
    format!("{x:.2}")
}

/// Two decimals with an explicit sign; a value that rounds to zero is "+0.00".
pub fn delta_cell(x: f64) -> String {
    let s = format!("{x:+.2}");
    if s == "-0.00" {
        "+0.00".to_string()
    } else {
        s
    }
}

/// Rows in canonical category order, unknown categories alphabetically last.
pub fn ordered<'a, V>(
    rows: impl IntoIterator<Item = (&'a BiasCategory, V)>,
) -> Vec<(&'a BiasCategory, V)> {
    let mut rows: Vec<_> = rows.into_iter().collect();
    rows.sort_by(|a, b| a.0.canonical_rank().cmp(&b.0.canonical_rank()));
    rows
}

pub fn render_table<'a>(
    table: impl Into<Table<'a>>,
    format: Format,
) -> Result<String, RenderError> {
    match (table.into(), format) {
        (Table::Stats(s), Format::Markdown) => Ok(stats_markdown(s)),
        (Table::Stats(s), Format::Csv) => stats_csv(s),
        (Table::Stats(s), Format::Json) => Ok(stats_json(s)),
        (Table::Delta(d), Format::Markdown) => Ok(delta_markdown(d)),
        (Table::Delta(d), Format::Csv) => delta_csv(d),
        (Table::Delta(d), Format::Json) => Ok(delta_json(d)),
    }
}

fn stats_markdown(stats: &StatsMap) -> String {
    let mut out = String::from("| Category | n |");
    for o in Outcome::ALL {
        let _ = write!(out, " {} |", o.label());
    }
    out.push_str("\n|---|---:|");
    out.push_str(&"---:|".repeat(Outcome::ALL.len()));
    out.push('\n');
    for (category, s) in ordered(stats) {
        let _ = write!(out, "| {} | {} |", category.display_name(), s.n);
        for o in Outcome::ALL {
            let _ = write!(out, " {} |", ratio_cell(s.ratio(o)));
        }
        out.push('\n');
    }
    out
}

fn stats_csv(stats: &StatsMap) -> Result<String, RenderError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["category".to_string(), "n".to_string()];
    header.extend(Outcome::ALL.iter().map(|o| format!("{o}_count")));
    header.extend(Outcome::ALL.iter().map(|o| format!("{o}_ratio")));
    for o in Outcome::ALL {
        header.push(format!("{o}_ci_low"));
        header.push(format!("{o}_ci_high"));
    }
    w.write_record(&header)?;
    for (category, s) in ordered(stats) {
        let mut row = vec![category.to_string(), s.n.to_string()];
        row.extend(Outcome::ALL.iter().map(|o| s.counts.get(*o).to_string()));
        row.extend(Outcome::ALL.iter().map(|o| s.ratio(*o).to_string()));
        for o in Outcome::ALL {
            let (lo, hi) = s.ci.get(o);
            row.push(lo.to_string());
            row.push(hi.to_string());
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(
        w.into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))?,
    )
    .expect("csv is utf-8"))
}

fn stats_json(stats: &StatsMap) -> String {
    let rows: Vec<&CategoryStats> = ordered(stats).into_iter().map(|(_, s)| s).collect();
    pretty(&json!({ "categories": rows }))
}

fn delta_markdown(delta: &DeltaReport) -> String {
    let mut out = format!(
        "| Category | Baseline {0} | Variant {0} | Delta |\n|---|---:|---:|---:|\n",
        delta.key.label()
    );
    for (category, row) in ordered(&delta.rows) {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            category.display_name(),
            ratio_cell(row.baseline),
            ratio_cell(row.variant),
            delta_cell(row.delta)
        );
    }
    out
}

fn delta_csv(delta: &DeltaReport) -> Result<String, RenderError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "key", "baseline", "variant", "delta"])?;
    for (category, row) in ordered(&delta.rows) {
        w.write_record([
            category.to_string(),
            delta.key.to_string(),
            row.baseline.to_string(),
            row.variant.to_string(),
            row.delta.to_string(),
        ])?;
    }
    Ok(String::from_utf8(
        w.into_inner()
            .map_err(|e| csv::Error::from(e.into_error()))?,
    )
    .expect("csv is utf-8"))
}

fn delta_json(delta: &DeltaReport) -> String {
    #[derive(Serialize)]
    struct Row<'a> {
        category: &'a BiasCategory,
        #[serde(flatten)]
        row: &'a DeltaRow,
    }
    let rows: Vec<Row> = ordered(&delta.rows)
        .into_iter()
        .map(|(category, row)| Row { category, row })
        .collect();
    pretty(&json!({ "key": delta.key, "rows": rows }))
}

/// One Markdown block per (train, eval, variant) cell.
pub fn render_cross_markdown(report: &CrossEvalReport) -> String {
    let mut out = String::new();
    for cell in &report.cells {
        let _ = writeln!(
            out,
            "### Trained on {}, evaluated on {} ({})\n",
            cell.train_corpus, cell.eval_corpus, cell.variant
        );
        out.push_str(&stats_markdown(&cell.stats));
        out.push('\n');
    }
    out
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report values serialize");
    s.push('\n');
    s
}

const PLOT_COLORS: [&str; 4] = ["#c0392b", "#2471a3", "#7f8c8d", "#d4ac0d"];

/// Grouped bar chart of outcome ratios, one group per category.
pub fn render_plot(stats: &StatsMap) -> Result<String, RenderError> {
    if stats.is_empty() {
        return Err(RenderError::EmptyPlot);
    }
    let rows = ordered(stats);
    let (bar_w, gap, left, top, plot_h) = (18.0, 24.0, 60.0, 30.0, 240.0);
    let group_w = bar_w * Outcome::ALL.len() as f64 + gap;
    let width = left + group_w * rows.len() as f64 + 20.0;
    let height = top + plot_h + 90.0;
    let baseline = top + plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for tick in 0..=4 {
        let v = tick as f64 / 4.0;
        let y = baseline - v * plot_h;
        let _ = writeln!(
            svg,
            r##"<line x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            width - 20.0,
            left - 6.0,
            y + 4.0
        );
    }
    for (g, (category, s)) in rows.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        for (i, o) in Outcome::ALL.iter().enumerate() {
            let h = s.ratio(*o).clamp(0.0, 1.0) * plot_h;
            let _ = writeln!(
                svg,
                r#"<rect class="bar" data-category="{}" data-outcome="{}" x="{:.1}" y="{:.1}" width="{bar_w:.1}" height="{h:.1}" fill="{}"/>"#,
                category,
                o,
                x0 + i as f64 * bar_w,
                baseline - h,
                PLOT_COLORS[i]
            );
        }
        let _ = writeln!(
            svg,
            r#"<text class="group-label" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + bar_w * Outcome::ALL.len() as f64 / 2.0,
            baseline + 16.0,
            xml_escape(&category.display_name())
        );
    }
    for (i, o) in Outcome::ALL.iter().enumerate() {
        let x = left + i as f64 * 110.0;
        let y = baseline + 44.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{y:.1}">{}</text>"#,
            y - 9.0,
            PLOT_COLORS[i],
            x + 14.0,
            o.label()
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
