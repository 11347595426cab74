use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Dashed vertical marker drawn in the series colour.
    pub marker: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw points only, no connecting lines.
    pub scatter: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

impl Plot {
    pub fn render(&self) -> Result<String> {
        let pts: Vec<(f64, f64)> = self.series.iter().flat_map(|s| s.points.iter().copied()).filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        if pts.is_empty() {
            return Err(Error::Analysis(format!("nothing to plot for `{}`", self.title)));
        }
        let (w, h, ml, mr, mt, mb) = (720.0, 440.0, 70.0, 160.0, 40.0, 50.0);
        let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| pts.iter().map(sel).fold(init, f);
        let (mut x0, mut x1) = (fold(f64::min, f64::INFINITY, |p| p.0), fold(f64::max, f64::NEG_INFINITY, |p| p.0));
        let (mut y0, mut y1) = (fold(f64::min, f64::INFINITY, |p| p.1), fold(f64::max, f64::NEG_INFINITY, |p| p.1));
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 < 1e-12 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.05 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
        let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, (w - mr + ml) / 2.0, esc(&self.title));
        let _ = writeln!(s, r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - mb, w - mr, h - mb);
        let _ = writeln!(s, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#, h - mb);
        for t in ticks(x0, x1) {
            let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1}" x2="{0:.2}" y2="{2}" stroke="black"/><text x="{0:.2}" y="{3}" text-anchor="middle">{4}</text>"#, px(t), h - mb, h - mb + 5.0, h - mb + 18.0, fmt_tick(t));
        }
        for t in ticks(y0, y1) {
            let _ = writeln!(s, r#"<line x1="{0}" y1="{1:.2}" x2="{2}" y2="{1:.2}" stroke="black"/><text x="{3}" y="{4:.2}" text-anchor="end">{5}</text>"#, ml - 5.0, py(t), ml, ml - 8.0, py(t) + 4.0, fmt_tick(t));
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (w - mr + ml) / 2.0, h - 12.0, esc(&self.x_label));
        let _ = writeln!(s, r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#, (h - mb + mt) / 2.0, esc(&self.y_label));
        for (i, ser) in self.series.iter().enumerate() {
            let c = PALETTE[i % PALETTE.len()];
            let good: Vec<(f64, f64)> = ser.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
            if self.scatter {
                for (x, y) in &good {
                    let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{c}" fill-opacity="0.5"/>"#, px(*x), py(*y));
                }
            } else if !good.is_empty() {
                let path: Vec<String> = good.iter().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
                let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.8" points="{}"/>"#, path.join(" "));
            }
            if let Some(m) = ser.marker.filter(|m| m.is_finite()) {
                let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{mt}" x2="{0:.2}" y2="{1}" stroke="{c}" stroke-dasharray="5,4"/>"#, px(m.clamp(x0, x1)), h - mb);
            }
            let ly = mt + 10.0 + 18.0 * i as f64;
            let _ = writeln!(s, r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{c}" stroke-width="2"/><text x="{3}" y="{4}">{5}</text>"#, w - mr + 12.0, ly, w - mr + 34.0, w - mr + 40.0, ly + 4.0, esc(&ser.name));
        }
        s.push_str("</svg>\n");
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()?).map_err(|e| Error::io(path, e))
    }
}

fn fmt_tick(t: f64) -> String {
    let r = (t * 1000.0).round() / 1000.0;
    if r == r.trunc() {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_lines_and_dashed_markers() {
        let p = Plot {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![Series { name: "tnd".into(), points: vec![(0.0, 3.0), (1.0, 2.0), (2.0, 1.0)], marker: Some(1.2) }],
            scatter: false,
        };
        let svg = p.render().unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline") && svg.contains("stroke-dasharray") && svg.contains("a &lt; b"));
    }

    #[test]
    fn empty_plot_is_an_error() {
        let p = Plot { title: "t".into(), x_label: String::new(), y_label: String::new(), series: vec![], scatter: true };
        assert!(matches!(p.render(), Err(Error::Analysis(_))));
    }
}
