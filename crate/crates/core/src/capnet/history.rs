//! `history.csv` plus accuracy and loss plots as standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::train::History;
use crate::error::{Error, Result};

pub const HISTORY_CSV: &str = "history.csv";
pub const ACCURACY_SVG: &str = "accuracy.svg";
pub const LOSS_SVG: &str = "loss.svg";
pub const HISTORY_HEADER: [&str; 8] = [
    "epoch",
    "train_loss",
    "test_loss",
    "train_char_acc",
    "test_char_acc",
    "train_full_acc",
    "test_full_acc",
    "ms",
];

pub fn history_csv(history: &History) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(HISTORY_HEADER).expect("in-memory write");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in &history.records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.test_loss),
            r.train_char_acc.to_string(),
            opt(r.test_char_acc),
            r.train_full_acc.to_string(),
            opt(r.test_full_acc),
            r.ms.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii")
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn line_chart(title: &str, y_label: &str, series: &[Series<'_>], y_range: Option<(f64, f64)>) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let x_max = all().map(|p| p.0).fold(1.0, f64::max);
    let (y_lo, y_hi) = y_range.unwrap_or_else(|| {
        let hi = all().map(|p| p.1).fold(f64::MIN, f64::max);
        let lo = all().map(|p| p.1).fold(f64::MAX, f64::min).min(0.0);
        if hi > lo { (lo, hi) } else { (lo, lo + 1.0) }
    });
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + if x_max > 1.0 { (x - 1.0) / (x_max - 1.0) * pw } else { pw / 2.0 };
    let sy = |y: f64| TOP + ph - (y - y_lo) / (y_hi - y_lo) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, esc(title));
    for i in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y:.3}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/><line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        TOP + ph,
        TOP + ph,
        W - RIGHT,
        TOP + ph
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text><text x="10" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        esc(y_label)
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{}" text-anchor="middle">1</text>"#, TOP + ph + 18.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{x_max}</text>"#, W - RIGHT, TOP + ph + 18.0);
    for (i, ser) in series.iter().enumerate() {
        if ser.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let lx = W - RIGHT - 150.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            ser.color,
            lx + 26.0,
            ly + 4.0,
            esc(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn points(history: &History, f: impl Fn(&super::train::EpochRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    history
        .records
        .iter()
        .filter_map(|r| f(r).map(|v| (r.epoch as f64, v)))
        .collect()
}

pub fn accuracy_svg(history: &History) -> String {
    let series = [
        Series { label: "train char", color: "#1f77b4", points: points(history, |r| Some(r.train_char_acc)) },
        Series { label: "test char", color: "#ff7f0e", points: points(history, |r| r.test_char_acc) },
        Series { label: "train full", color: "#2ca02c", points: points(history, |r| Some(r.train_full_acc)) },
        Series { label: "test full", color: "#d62728", points: points(history, |r| r.test_full_acc) },
    ];
    line_chart("Accuracy vs epochs", "accuracy", &series, Some((0.0, 1.0)))
}

pub fn loss_svg(history: &History) -> String {
    let series = [
        Series { label: "train loss", color: "#1f77b4", points: points(history, |r| Some(r.train_loss)) },
        Series { label: "test loss", color: "#ff7f0e", points: points(history, |r| r.test_loss) },
    ];
    line_chart("Loss vs epochs", "binary cross-entropy", &series, None)
}

/// Writes the CSV and both plots into `dir`.
pub fn emit_history(history: &History, dir: impl AsRef<Path>) -> Result<()> {
    if history.is_empty() {
        return Err(Error::Validation("history has no epochs".into()));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, body) in [
        (HISTORY_CSV, history_csv(history)),
        (ACCURACY_SVG, accuracy_svg(history)),
        (LOSS_SVG, loss_svg(history)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
