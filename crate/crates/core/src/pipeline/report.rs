use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::bundle::ModelBundle;
use super::ledger::{Ledger, LedgerEntry};
use super::plan::{PlanSummary, PLAN_SUMMARY_FILE};
use super::{read_json, write_json, PipelineError, RunConfig};
use crate::planner::{PlanResult, StepSign};

pub const REPORT_DIR: &str = "report";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub step: usize,
    pub feature: String,
    pub sign: StepSign,
    pub value: f64,
    pub prediction: f64,
    pub log_density: f64,
}

/// Order of feature changes along a path with the prediction trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub id: String,
    pub score: f64,
    pub start_prediction: f64,
    pub rows: Vec<LadderRow>,
}

impl Ladder {
    pub fn from_result(id: &str, r: &PlanResult) -> Self {
        let names = &r.config.intervention;
        let rows = r
            .optimal
            .steps
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, s)| {
                let c = s.change.as_ref().expect("non-initial steps record a change");
                let j = names.iter().position(|n| *n == c.feature).expect("intervention feature");
                LadderRow {
                    step: i,
                    feature: c.feature.clone(),
                    sign: c.sign,
                    value: s.values[j],
                    prediction: s.prediction,
                    log_density: s.log_density,
                }
            })
            .collect();
        Self {
            id: id.to_string(),
            score: r.score,
            start_prediction: r.optimal.steps[0].prediction,
            rows,
        }
    }
}

/// Path and training scatter on two axes, in real units. When fewer than
/// two features can move, the vertical axis is the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub id: String,
    pub x_axis: String,
    pub y_axis: String,
    pub path: Vec<[f64; 2]>,
    pub training: Vec<[f64; 2]>,
}

pub const PREDICTION_AXIS: &str = "prediction";

/// Picks the two most frequently changed features (ties by feature order).
pub fn projection_axes(r: &PlanResult) -> (usize, Option<usize>) {
    let names = &r.config.intervention;
    let mut counts = vec![0usize; names.len()];
    for s in &r.optimal.steps {
        if let Some(c) = &s.change {
            counts[names.iter().position(|n| *n == c.feature).expect("intervention feature")] += 1;
        }
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut pair = (order[0], order.get(1).copied());
    if let Some(second) = pair.1 {
        if second < pair.0 {
            pair = (second, Some(pair.0));
        }
    }
    pair
}

pub fn projection(bundle: &ModelBundle, id: &str, r: &PlanResult) -> Projection {
    let (a, b) = projection_axes(r);
    let names = &r.config.intervention;
    let layout = bundle.layout();
    let col = |name: &str| layout.continuous_index(name).expect("continuous feature");
    let ca = col(&names[a]);
    let path = r
        .optimal
        .steps
        .iter()
        .map(|s| [s.values[a], b.map_or(s.prediction, |b| s.values[b])])
        .collect();
    let training = bundle
        .meta
        .training
        .iter()
        .filter_map(|t| {
            let x = t.continuous[ca]?;
            let y = match b {
                Some(b) => t.continuous[col(&names[b])]?,
                None => t.prediction,
            };
            Some([x, y])
        })
        .collect();
    Projection {
        id: id.to_string(),
        x_axis: names[a].clone(),
        y_axis: b.map_or(PREDICTION_AXIS.to_string(), |b| names[b].clone()),
        path,
        training,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const W: f64 = 480.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for [x, y] in points {
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !(f.x1 > f.x0) {
            f.x0 -= 1.0;
            f.x1 += 1.0;
        }
        if !(f.y1 > f.y0) {
            f.y0 -= 1.0;
            f.y1 += 1.0;
        }
        f
    }

    fn map(&self, [x, y]: [f64; 2]) -> (f64, f64) {
        (
            PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD),
            H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD),
        )
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axis_labels(out: &mut String, x: &str, y: &str, f: &Frame) {
    let _ = writeln!(
        out,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(out, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#, H - PAD);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{} [{:.3}, {:.3}]</text>"#,
        W / 2.0,
        H - 15.0,
        escape(x),
        f.x0,
        f.x1
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">{} [{:.3}, {:.3}]</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y),
        f.y0,
        f.y1
    );
}

/// Training scatter with the planned path drawn over it.
pub fn projection_svg(p: &Projection) -> String {
    let frame = Frame::fit(p.training.iter().chain(&p.path).copied());
    let mut out = String::new();
    svg_open(&mut out, &format!("instance {}", p.id));
    axis_labels(&mut out, &p.x_axis, &p.y_axis, &frame);
    for &pt in &p.training {
        let (x, y) = frame.map(pt);
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="#9aa5b1" fill-opacity="0.6"/>"##);
    }
    let pts: Vec<String> = p
        .path
        .iter()
        .map(|&pt| {
            let (x, y) = frame.map(pt);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
        pts.join(" ")
    );
    if let (Some(&s), Some(&e)) = (p.path.first(), p.path.last()) {
        let (sx, sy) = frame.map(s);
        let (ex, ey) = frame.map(e);
        let _ = writeln!(out, r##"<circle cx="{sx:.2}" cy="{sy:.2}" r="5" fill="#2c3e50"/>"##);
        let _ = writeln!(out, r##"<circle cx="{ex:.2}" cy="{ey:.2}" r="5" fill="#c0392b"/>"##);
    }
    out.push_str("</svg>\n");
    out
}

pub fn histogram_svg(summary: &PlanSummary) -> String {
    let h = &summary.histogram;
    let mut out = String::new();
    svg_open(&mut out, "actionability scores");
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let n = h.counts.len().max(1) as f64;
    let bw = (W - 2.0 * PAD) / n;
    for (i, &c) in h.counts.iter().enumerate() {
        let bh = c as f64 / max * (H - 2.0 * PAD);
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{bh:.2}" fill="#5d8aa8" stroke="white"/>"##,
            PAD + i as f64 * bw,
            H - PAD - bh,
            bw
        );
    }
    let frame = Frame {
        x0: h.edges.first().copied().unwrap_or(0.0),
        x1: h.edges.last().copied().unwrap_or(1.0),
        y0: 0.0,
        y1: max,
    };
    axis_labels(&mut out, "score", "instances", &frame);
    out.push_str("</svg>\n");
    out
}

fn ladder_text(l: &Ladder) -> String {
    if l.rows.is_empty() {
        return "(no move)".into();
    }
    l.rows
        .iter()
        .map(|r| {
            format!(
                "{}{}",
                r.feature,
                match r.sign {
                    StepSign::Up => "+",
                    StepSign::Down => "-",
                }
            )
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Writes step ladders, projection data and SVG figures for the last plan.
pub fn cmd_report(config: &RunConfig) -> Result<Vec<String>, PipelineError> {
    let started = Instant::now();
    let dir = config.output_dir()?;
    let bundle = ModelBundle::load(&dir)?;
    let summary: PlanSummary = read_json(&dir.join(PLAN_SUMMARY_FILE))?;
    let out = dir.join(REPORT_DIR);
    if out.exists() {
        std::fs::remove_dir_all(&out)?;
    }
    std::fs::create_dir_all(out.join("svg"))?;

    let mut ladders = Vec::new();
    let mut projections = Vec::new();
    let mut artifacts = Vec::new();
    let mut md = String::new();
    let _ = writeln!(md, "# Plan report\n");
    let _ = writeln!(
        md,
        "{} instances planned, {} skipped. Median score {}, {:.1}% positive.\n",
        summary.count,
        summary.skipped.len(),
        summary.median.map_or("n/a".into(), |m| format!("{m:.4}")),
        100.0 * summary.positive_fraction
    );
    let _ = writeln!(md, "| instance | score | moves | start | end | steps |");
    let _ = writeln!(md, "|---|---:|---:|---:|---:|---|");
    for row in &summary.planned {
        let r: PlanResult = read_json(&dir.join(&row.file))?;
        let ladder = Ladder::from_result(&row.id, &r);
        let proj = projection(&bundle, &row.id, &r);
        let svg = format!("{REPORT_DIR}/svg/{}", super::plan::plan_file_name(&row.id).replace(".json", ".svg"));
        write_text(&dir.join(&svg), &projection_svg(&proj))?;
        artifacts.push(svg);
        let _ = writeln!(
            md,
            "| {} | {:.4} | {} | {:.3} | {:.3} | {} |",
            row.id,
            row.score,
            row.moves,
            row.start_prediction,
            row.end_prediction,
            ladder_text(&ladder)
        );
        ladders.push(ladder);
        projections.push(proj);
    }
    for s in &summary.skipped {
        let _ = writeln!(md, "\nSkipped {}: {}", s.id, s.reason);
    }
    let hist = format!("{REPORT_DIR}/scores.svg");
    write_text(&dir.join(&hist), &histogram_svg(&summary))?;
    let ladders_file = format!("{REPORT_DIR}/ladders.json");
    let proj_file = format!("{REPORT_DIR}/projections.json");
    let md_file = format!("{REPORT_DIR}/summary.md");
    write_json(&dir.join(&ladders_file), &ladders)?;
    write_json(&dir.join(&proj_file), &projections)?;
    write_text(&dir.join(&md_file), &md)?;
    artifacts.extend([hist, ladders_file, proj_file, md_file]);
    Ledger::new(&dir).append(&LedgerEntry::new(
        "report",
        started,
        config.seed,
        artifacts.clone(),
        serde_json::json!({ "instances": summary.count }),
    ))?;
    Ok(artifacts)
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text)?;
    Ok(())
}
