//! CSV and SVG renderings of results, plus atomic file output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{TradeoffCurve, TradeoffPoint, Variant};
use crate::pipeline::{MethodAuc, RunResult};

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Serialization(e.to_string())
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_err)?).map_err(csv_err)
}

pub const CURVE_COLUMNS: [&str; 8] = [
    "method",
    "param_label",
    "variant",
    "raw_accuracy",
    "balanced_accuracy",
    "privacy",
    "raw_utility",
    "utility",
];

/// One row per trade-off point, in curve order.
pub fn curve_csv<'a>(curves: impl IntoIterator<Item = &'a TradeoffCurve>) -> Result<String> {
    to_csv(curves.into_iter().flat_map(|c| c.points.iter()), &CURVE_COLUMNS)
}

pub fn read_curve_csv(text: &str) -> Result<Vec<TradeoffPoint>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

pub fn auc_csv(aucs: &[MethodAuc]) -> Result<String> {
    to_csv(
        aucs.iter()
            .map(|a| (&a.method, a.auc_without_deanon, a.auc_with_deanon, a.worst_case)),
        &["method", "auc_without_deanon", "auc_with_deanon", "worst_case"],
    )
}

#[derive(Serialize)]
struct ResultRow<'a> {
    row_type: &'static str,
    variant: &'static str,
    classifier: &'a str,
    identity: &'a str,
    instance: &'a str,
    predicted: &'a str,
    correct: Option<bool>,
    accuracy: Option<f64>,
    balanced_accuracy: Option<f64>,
    best: Option<bool>,
    privacy: Option<f64>,
    utility: Option<f64>,
}

/// Per-probe rows for every recognizer, then one summary row per recognizer.
pub fn result_csv(result: &RunResult) -> Result<String> {
    let mut rows = Vec::new();
    for v in &result.variants {
        for r in &v.reports {
            for p in &r.predictions {
                rows.push(ResultRow {
                    row_type: "probe",
                    variant: v.variant.name(),
                    classifier: &r.classifier,
                    identity: &p.identity,
                    instance: &p.instance,
                    predicted: &p.predicted,
                    correct: Some(p.correct),
                    accuracy: None,
                    balanced_accuracy: None,
                    best: None,
                    privacy: None,
                    utility: None,
                });
            }
        }
    }
    for v in &result.variants {
        for r in &v.reports {
            let best = r.classifier == v.best.classifier;
            rows.push(ResultRow {
                row_type: "summary",
                variant: v.variant.name(),
                classifier: &r.classifier,
                identity: "",
                instance: "",
                predicted: "",
                correct: None,
                accuracy: Some(r.accuracy),
                balanced_accuracy: Some(r.balanced_accuracy),
                best: Some(best),
                privacy: best.then_some(v.point.privacy),
                utility: best.then_some(v.point.utility),
            });
        }
    }
    to_csv(
        rows,
        &[
            "row_type",
            "variant",
            "classifier",
            "identity",
            "instance",
            "predicted",
            "correct",
            "accuracy",
            "balanced_accuracy",
            "best",
            "privacy",
            "utility",
        ],
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Privacy (x) against utility (y), one polyline plus circle markers per
/// curve. Dotted guides mark chance-level privacy and clear utility.
pub fn tradeoff_svg(curves: &[TradeoffCurve]) -> String {
    let (w, h) = (640.0, 480.0);
    let (left, right, top, bottom) = (60.0, 180.0, 20.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let sx = |p: f64| left + p.clamp(0.0, 1.0) * pw;
    let sy = |u: f64| top + (1.0 - u.clamp(0.0, 1.0)) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t:.1}</text>"#,
            sx(t),
            top + ph + 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{t:.1}</text>"#,
            left - 5.0,
            sy(t) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">privacy</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" text-anchor="middle" transform="rotate(-90 15 {:.1})">utility</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );

    // Privacy is normalized so chance level sits at 1 for every curve.
    let clear = curves.iter().map(|c| c.clear_utility).fold(f64::NAN, f64::max);
    let clear = if clear.is_nan() { 1.0 } else { clear };
    let _ = writeln!(
        s,
        r#"<line class="guide chance" x1="{x:.1}" y1="{top:.1}" x2="{x:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="2,3"/>"#,
        top + ph,
        x = sx(1.0)
    );
    let _ = writeln!(
        s,
        r#"<line class="guide clear" x1="{left:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="gray" stroke-dasharray="2,3"/>"#,
        left + pw,
        y = sy(clear)
    );

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = match c.variant {
            Variant::WithoutDeanon => "",
            Variant::WithDeanon => r#" stroke-dasharray="6,3""#,
        };
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.privacy), sy(p.utility)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" points="{}" fill="none" stroke="{color}"{dash}/>"#,
            pts.join(" ")
        );
        for p in &c.points {
            let _ = writeln!(
                s,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"><title>{}</title></circle>"#,
                sx(p.privacy),
                sy(p.utility),
                xml_escape(&format!(
                    "{} {}: privacy {:.3}, utility {:.3}",
                    p.param_label, p.variant, p.privacy, p.utility
                ))
            );
        }
        let ly = top + 10.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}"{dash}/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{} (AUC {:.3})</text>"#,
            lx + 25.0,
            ly + 4.0,
            xml_escape(&format!("{} {}", c.method, c.variant)),
            c.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
