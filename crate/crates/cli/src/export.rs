//! Standalone SVG figures and per-frame CSV for motion files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use motion_energy::data::{MotionSequence, CHANNELS, LIMBS};

const PANEL: f64 = 300.0;
const MARGIN: f64 = 20.0;
const LIMB_COLORS: [&str; 4] = ["#1f77b4", "#aec7e8", "#d62728", "#ff9896"];
const HEADER: [&str; 7] = ["frame", "root_x", "root_y", "left_0", "left_1", "right_0", "right_1"];

fn polyline(points: impl Iterator<Item = (f64, f64)>, color: &str) -> String {
    let pts: Vec<String> = points.map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    format!("<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n", pts.join(" "))
}

/// Root trajectory on the left panel (equal axes, start marked), limb
/// channels over time on the right.
pub fn motion_svg(m: &MotionSequence, title: &str) -> String {
    let w = 2.0 * PANEL + 3.0 * MARGIN;
    let h = PANEL + 2.0 * MARGIN + 16.0;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{MARGIN}\" y=\"14\" font-family=\"monospace\" font-size=\"12\">{}</text>\n",
        escape(title)
    );
    let top = MARGIN + 16.0;

    let xs: Vec<f64> = m.channel(0).collect();
    let ys: Vec<f64> = m.channel(1).collect();
    let (cx, cy) = (mid(&xs), mid(&ys));
    let half = xs.iter().map(|x| (x - cx).abs()).chain(ys.iter().map(|y| (y - cy).abs())).fold(0.5, f64::max);
    let k = 0.5 * PANEL / (half * 1.1);
    let to_px = |x: f64, y: f64| (MARGIN + 0.5 * PANEL + (x - cx) * k, top + 0.5 * PANEL - (y - cy) * k);
    let _ = writeln!(s, "<rect x=\"{MARGIN}\" y=\"{top}\" width=\"{PANEL}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#999\"/>");
    s.push_str(&polyline(xs.iter().zip(&ys).map(|(&x, &y)| to_px(x, y)), "black"));
    let (sx, sy) = to_px(xs[0], ys[0]);
    let _ = writeln!(s, "<circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"3\" fill=\"green\"/>");

    let left = 2.0 * MARGIN + PANEL;
    let amp = LIMBS.flat_map(|c| m.channel(c)).map(f64::abs).fold(1.0, f64::max) * 1.1;
    let n = m.len().max(2) as f64 - 1.0;
    let _ = writeln!(s, "<rect x=\"{left}\" y=\"{top}\" width=\"{PANEL}\" height=\"{PANEL}\" fill=\"none\" stroke=\"#999\"/>");
    let zero = top + 0.5 * PANEL;
    let _ = writeln!(s, "<line x1=\"{left}\" y1=\"{zero}\" x2=\"{}\" y2=\"{zero}\" stroke=\"#ddd\"/>", left + PANEL);
    for (i, ch) in LIMBS.enumerate() {
        let pts = m.channel(ch).enumerate().map(|(t, v)| (left + t as f64 / n * PANEL, zero - v / amp * 0.5 * PANEL));
        s.push_str(&polyline(pts, LIMB_COLORS[i]));
    }
    s.push_str("</svg>\n");
    s
}

fn mid(v: &[f64]) -> f64 {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    0.5 * (lo + hi)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_csv(m: &MotionSequence, path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for t in 0..m.len() {
        let mut row = vec![t.to_string()];
        row.extend((0..CHANNELS).map(|c| m.get(t, c).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `{stem}-{i}.csv` (and `.svg` when asked) per motion; returns the paths.
pub fn export(motions: &[MotionSequence], stem: &str, dir: &Path, svg: bool) -> Result<Vec<PathBuf>, String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut written = Vec::new();
    for (i, m) in motions.iter().enumerate() {
        let csv_path = dir.join(format!("{stem}-{i}.csv"));
        write_csv(m, &csv_path).map_err(|e| format!("{}: {e}", csv_path.display()))?;
        written.push(csv_path);
        if svg {
            let label = motion_energy::data::oracle_classify(m);
            let p = dir.join(format!("{stem}-{i}.svg"));
            std::fs::write(&p, motion_svg(m, &format!("{stem} #{i}  oracle: {label}"))).map_err(|e| format!("{}: {e}", p.display()))?;
            written.push(p);
        }
    }
    Ok(written)
}
