//! Minimal static SVG emitters. Every plot is also written as CSV by its
//! caller, so these only need to be legible.

use std::fmt::Write as _;

use nalgebra::DMatrix;

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 56.0;

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

fn close(mut s: String) -> String {
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Axes { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn draw(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        self.draw_with(s, xlabel, ylabel, true);
    }

    fn draw_with(&self, s: &mut String, xlabel: &str, ylabel: &str, x_ticks: bool) {
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        for t in 0..=4 {
            let f = t as f64 / 4.0;
            let xv = self.x0 + f * (self.x1 - self.x0);
            let yv = self.y0 + f * (self.y1 - self.y0);
            if x_ticks {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    self.px(xv),
                    H - PAD + 16.0,
                    tick(xv)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                PAD - 6.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            W / 2.0,
            H - 12.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Blue–white–red scale symmetric about zero.
fn diverging(v: f64, vmax: f64) -> String {
    let t = if vmax > 0.0 { (v / vmax).clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Heatmap with optional cluster boundaries drawn after the given row and column counts.
pub fn heatmap_svg(matrix: &DMatrix<f64>, row_breaks: &[usize], col_breaks: &[usize], title: &str) -> String {
    let mut s = open(title);
    let (m, d) = matrix.shape();
    let vmax = matrix.amax();
    let cw = (W - 2.0 * PAD) / d.max(1) as f64;
    let ch = (H - 2.0 * PAD) / m.max(1) as f64;
    for i in 0..m {
        for j in 0..d {
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                PAD + j as f64 * cw,
                PAD + i as f64 * ch,
                cw + 0.01,
                ch + 0.01,
                diverging(matrix[(i, j)], vmax)
            );
        }
    }
    for &r in row_breaks {
        let y = PAD + r as f64 * ch;
        let _ = writeln!(s, r#"<line x1="{PAD}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black"/>"#, W - PAD);
    }
    for &c in col_breaks {
        let x = PAD + c as f64 * cw;
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{PAD}" x2="{x:.2}" y2="{}" stroke="black"/>"#, H - PAD);
    }
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}">scale ±{}</text>"#,
        H - PAD + 18.0,
        tick(vmax)
    );
    close(s)
}

/// One polyline per series over categorical x positions.
pub fn line_plot_svg(categories: &[String], series: &[(String, Vec<f64>)], title: &str, ylabel: &str) -> String {
    let mut s = open(title);
    let n = categories.len();
    let all = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi.max(0.0)) } else { (0.0, 1.0) };
    let axes = Axes::new(0.0, (n.max(2) - 1) as f64, lo, hi);
    axes.draw_with(&mut s, "", ylabel, false);
    let _ = writeln!(
        s,
        r##"<line x1="{PAD}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#999" stroke-dasharray="4"/>"##,
        axes.py(0.0),
        W - PAD,
        axes.py(0.0)
    );
    for (k, name) in categories.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            axes.px(k as f64),
            H - PAD + 16.0,
            escape(name)
        );
    }
    for (idx, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(k, v)| format!("{:.2},{:.2}", axes.px(k as f64), axes.py(*v)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
            W - PAD - 100.0,
            PAD + 16.0 + 14.0 * idx as f64,
            escape(name)
        );
    }
    close(s)
}

/// Histogram bars `(lo, hi, height)` with an overlaid curve and optional vertical marker.
pub fn histogram_svg(bars: &[(f64, f64, f64)], curve: &[(f64, f64)], marker: Option<f64>, title: &str, xlabel: &str) -> String {
    let mut s = open(title);
    let x0 = bars.first().map_or(0.0, |b| b.0);
    let x1 = bars.last().map_or(1.0, |b| b.1).max(marker.unwrap_or(f64::NEG_INFINITY));
    let ymax = bars
        .iter()
        .map(|b| b.2)
        .chain(curve.iter().map(|c| c.1))
        .fold(0.0, f64::max);
    let axes = Axes::new(x0, x1, 0.0, ymax);
    axes.draw(&mut s, xlabel, "density");
    for &(lo, hi, h) in bars {
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="#3182bd"/>"##,
            axes.px(lo),
            axes.py(h),
            axes.px(hi) - axes.px(lo),
            axes.py(0.0) - axes.py(h)
        );
    }
    if !curve.is_empty() {
        let pts: Vec<String> = curve.iter().map(|(x, y)| format!("{:.2},{:.2}", axes.px(*x), axes.py(*y))).collect();
        let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##, pts.join(" "));
    }
    if let Some(x) = marker {
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{PAD}" x2="{:.2}" y2="{}" stroke="black" stroke-dasharray="5"/>"#,
            axes.px(x),
            axes.px(x),
            H - PAD
        );
    }
    close(s)
}

/// Labeled points, colored by group index.
pub fn scatter_svg(points: &[(f64, f64, usize)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let mut s = open(title);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, _) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let axes = Axes::new(x0, x1, y0, y1);
    axes.draw(&mut s, xlabel, ylabel);
    for &(x, y, g) in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}" fill-opacity="0.8"/>"#,
            axes.px(x),
            axes.py(y),
            PALETTE[g % PALETTE.len()]
        );
    }
    close(s)
}

/// ROC curve from `(fpr, tpr)` points.
pub fn roc_svg(points: &[(f64, f64)], auc: Option<f64>) -> String {
    let title = match auc {
        Some(a) => format!("ROC (AUC = {a:.3})"),
        None => "ROC".to_string(),
    };
    let mut s = open(&title);
    let axes = Axes::new(0.0, 1.0, 0.0, 1.0);
    axes.draw(&mut s, "false positive rate", "true positive rate");
    let _ = writeln!(
        s,
        r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="4"/>"##,
        axes.px(0.0),
        axes.py(0.0),
        axes.px(1.0),
        axes.py(1.0)
    );
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{:.2},{:.2}", axes.px(*x), axes.py(*y))).collect();
    let _ = writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##, pts.join(" "));
    close(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documents_are_well_formed() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 0.0]);
        for svg in [
            heatmap_svg(&m, &[1], &[1], "w <&>"),
            line_plot_svg(&["a".into(), "b".into()], &[("g".into(), vec![1.0, -1.0])], "t", "Z"),
            histogram_svg(&[(0.0, 1.0, 0.5), (1.0, 2.0, 0.2)], &[(0.5, 0.4)], Some(1.5), "h", "λ"),
            scatter_svg(&[(0.0, 1.0, 0), (2.0, 3.0, 1)], "s", "x", "y"),
            roc_svg(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)], Some(1.0)),
            scatter_svg(&[], "empty", "x", "y"),
        ] {
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert!(!svg.contains("NaN") && !svg.contains("inf"));
        }
        assert!(heatmap_svg(&m, &[], &[], "w <&>").contains("w &lt;&amp;&gt;"));
    }

    #[test]
    fn diverging_endpoints() {
        assert_eq!(diverging(1.0, 1.0), "#ff0000");
        assert_eq!(diverging(-1.0, 1.0), "#0000ff");
        assert_eq!(diverging(0.0, 1.0), "#ffffff");
        assert_eq!(diverging(3.0, 0.0), "#ffffff");
    }
}
