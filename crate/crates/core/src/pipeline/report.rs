//! Static SVG and markdown summaries of evaluation CSVs.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write;

use super::{RegressionCsvRow, SummaryRow};

pub struct ReportInputs {
    pub manifest_hash: String,
    pub summaries: Vec<SummaryRow>,
    pub regressions: Vec<RegressionCsvRow>,
}

const LABEL_W: f64 = 230.0;
const CELL_W: f64 = 130.0;
const CELL_H: f64 = 20.0;
const HEADER_H: f64 = 40.0;
const PANEL_GAP: f64 = 30.0;

impl ReportInputs {
    fn get(&self, family: &str, measure: &str) -> Option<&SummaryRow> {
        self.summaries
            .iter()
            .find(|r| r.family == family && r.measure == measure)
    }

    /// Measures by ascending mean over the `all` family; measures without
    /// data go last.
    pub fn measure_order(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for r in &self.summaries {
            if !names.contains(&r.measure) {
                names.push(r.measure.clone());
            }
        }
        let key = |m: &str| self.get("all", m).and_then(|r| r.mean);
        names.sort_by(|a, b| match (key(a), key(b)) {
            (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.cmp(b)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => a.cmp(b),
        });
        names
    }

    /// Families without a value pair (`all` and single axes), in file order.
    fn main_families(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.summaries {
            if !r.family.contains(':') && !out.contains(&r.family) {
                out.push(r.family.clone());
            }
        }
        out
    }

    /// Value-pair families grouped by axis.
    fn pair_families(&self) -> BTreeMap<String, Vec<String>> {
        let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &self.summaries {
            if let Some((axis, _)) = r.family.split_once(':') {
                let list = out.entry(axis.to_string()).or_default();
                if !list.contains(&r.family) {
                    list.push(r.family.clone());
                }
            }
        }
        out
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn cell(svg: &mut String, x: f64, y: f64, row: Option<&SummaryRow>) {
    let (x0, x1) = (x + 8.0, x + CELL_W - 8.0);
    let px = |v: f64| x0 + (x1 - x0) * v.clamp(0.0, 1.0);
    let mid = y + CELL_H / 2.0;
    match row.filter(|r| r.n_retained > 0) {
        Some(r) => {
            let _ = writeln!(
                svg,
                r##"<line x1="{x0:.2}" y1="{mid:.2}" x2="{x1:.2}" y2="{mid:.2}" stroke="#bbbbbb" stroke-width="1"/>"##
            );
            if let (Some(med), Some(max)) = (r.median, r.max) {
                let _ = writeln!(
                    svg,
                    r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1"/>"##,
                    px(med),
                    y + 4.0,
                    (px(max) - px(med)).max(0.5),
                    CELL_H - 8.0
                );
            }
            for (v, color) in [(r.mean, "#ff8c00"), (r.p90, "#d000d0"), (r.max, "#00a000")] {
                if let Some(v) = v {
                    let _ = writeln!(
                        svg,
                        r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="{color}" stroke-width="2"/>"##,
                        px(v),
                        y + 2.0,
                        y + CELL_H - 2.0
                    );
                }
            }
        }
        None => {
            let cx = x + CELL_W / 2.0;
            let _ = writeln!(
                svg,
                r##"<path d="M{:.2} {:.2} L{:.2} {:.2} M{:.2} {:.2} L{:.2} {:.2}" stroke="#e00000" stroke-width="2"/>"##,
                cx - 6.0,
                y + 4.0,
                cx + 6.0,
                y + CELL_H - 4.0,
                cx - 6.0,
                y + CELL_H - 4.0,
                cx + 6.0,
                y + 4.0
            );
        }
    }
}

fn panel(svg: &mut String, inputs: &ReportInputs, title: &str, families: &[String], measures: &[String], top: f64) -> f64 {
    let _ = writeln!(
        svg,
        r#"<text x="8" y="{:.2}" font-size="14" font-weight="bold">{}</text>"#,
        top + 16.0,
        esc(title)
    );
    for (j, f) in families.iter().enumerate() {
        let x = LABEL_W + j as f64 * CELL_W;
        let label = f.split_once(':').map_or(f.as_str(), |(_, p)| p);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            x + CELL_W / 2.0,
            top + HEADER_H - 6.0,
            esc(label)
        );
    }
    for (i, m) in measures.iter().enumerate() {
        let y = top + HEADER_H + i as f64 * CELL_H;
        let _ = writeln!(
            svg,
            r#"<text x="8" y="{:.2}" font-size="11">{}</text>"#,
            y + CELL_H - 6.0,
            esc(m)
        );
        for (j, f) in families.iter().enumerate() {
            cell(svg, LABEL_W + j as f64 * CELL_W, y, inputs.get(f, m));
        }
    }
    top + HEADER_H + measures.len() as f64 * CELL_H + PANEL_GAP
}

/// CDF-bar summary: for each measure and family a [0, 1] track with the
/// median-to-max range shaded and mean (orange), p90 (magenta) and max
/// (green) markers. Families with no retained environment show a red X.
pub fn render_svg(inputs: &ReportInputs) -> String {
    let measures = inputs.measure_order();
    let main = inputs.main_families();
    let pairs = inputs.pair_families();
    let widest = pairs.values().map(Vec::len).chain([main.len()]).max().unwrap_or(1);
    let panel_h = HEADER_H + measures.len() as f64 * CELL_H + PANEL_GAP;
    let width = LABEL_W + widest as f64 * CELL_W + 10.0;
    let height = 40.0 + panel_h * (1 + pairs.len()) as f64;

    let mut body = String::new();
    let mut top = panel(&mut body, inputs, "sign-error by family", &main, &measures, 30.0);
    for (axis, fams) in &pairs {
        top = panel(&mut body, inputs, &format!("{axis}: value pairs"), fams, &measures, top);
    }
    debug_assert!(top <= height + 1.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<text x="8" y="16" font-size="10" fill="#666666">manifest {}</text>"##,
        esc(&inputs.manifest_hash)
    );
    svg.push_str(&body);
    svg.push_str("</svg>\n");
    svg
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

pub fn render_markdown(inputs: &ReportInputs) -> String {
    let measures = inputs.measure_order();
    let main = inputs.main_families();
    let mut md = String::new();
    let _ = writeln!(md, "# Sign-error summary\n");
    let _ = writeln!(md, "Manifest hash: `{}`\n", inputs.manifest_hash);
    if let Some(r) = inputs.summaries.iter().find(|r| r.family == "all") {
        let _ = writeln!(md, "Environments in `all`: {} ({} retained for `{}`).\n", r.n_envs, r.n_retained, r.measure);
    }

    let _ = write!(md, "| measure | all mean | all p90 | all max |");
    for f in main.iter().filter(|f| *f != "all") {
        let _ = write!(md, " {f} max |");
    }
    let _ = write!(md, "\n|---|---|---|---|");
    for _ in main.iter().filter(|f| *f != "all") {
        md.push_str("---|");
    }
    md.push('\n');
    for m in &measures {
        let all = inputs.get("all", m);
        let _ = write!(
            md,
            "| {m} | {} | {} | {} |",
            num(all.and_then(|r| r.mean)),
            num(all.and_then(|r| r.p90)),
            num(all.and_then(|r| r.max))
        );
        for f in main.iter().filter(|f| *f != "all") {
            let _ = write!(md, " {} |", num(inputs.get(f, m).and_then(|r| r.max)));
        }
        md.push('\n');
    }

    let at_one: Vec<&str> = measures
        .iter()
        .filter(|m| inputs.get("all", m).and_then(|r| r.max) == Some(1.0))
        .map(String::as_str)
        .collect();
    md.push('\n');
    if at_one.is_empty() {
        let _ = writeln!(md, "No measure reaches robust sign-error 1.0 in the `all` family at this scale.");
    } else {
        let _ = writeln!(md, "Measures reaching robust sign-error 1.0 in the `all` family: {}.", at_one.join(", "));
    }

    let mut kinds: Vec<&str> = Vec::new();
    for r in &inputs.regressions {
        if !kinds.contains(&r.family_kind.as_str()) {
            kinds.push(&r.family_kind);
        }
    }
    for kind in kinds {
        let _ = writeln!(md, "\n## Robust regression: {kind}\n");
        let _ = writeln!(md, "| measure | a | b | robust RMSE | mean RMSE | baseline robust RMSE | envs |");
        let _ = writeln!(md, "|---|---|---|---|---|---|---|");
        let mut rows: Vec<&RegressionCsvRow> = inputs.regressions.iter().filter(|r| r.family_kind == kind).collect();
        rows.sort_by(|a, b| a.robust_rmse.total_cmp(&b.robust_rmse).then_with(|| a.measure.cmp(&b.measure)));
        for r in rows {
            let _ = writeln!(
                md,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {} |",
                r.measure, r.a, r.b, r.robust_rmse, r.mean_rmse, r.baseline_robust_rmse, r.n_envs
            );
        }
    }
    md
}
