//! Minimal static SVG line charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Tick labels for integer x positions, when x is categorical.
    pub x_ticks: Option<Vec<String>>,
    pub series: Vec<Series>,
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let pts = || self.series.iter().flat_map(|s| s.points.iter());
        let (x0, x1) = bounds(pts().map(|p| p.0));
        let (y0, y1) = bounds(pts().map(|p| p.1));
        let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(&self.title));
        let _ = writeln!(
            s,
            r#"<path d="M{PAD} {PAD} V{b} H{r}" fill="none" stroke="black"/>"#,
            b = H - PAD,
            r = W - PAD
        );
        for k in 0..=4 {
            let y = y0 + (y1 - y0) * k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.3}</text>"#, PAD - 4.0, sy(y) + 4.0);
        }
        match &self.x_ticks {
            Some(ticks) => {
                for (i, t) in ticks.iter().enumerate() {
                    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, sx(i as f64), H - PAD + 16.0, esc(t));
                }
            }
            None => {
                for k in 0..=4 {
                    let x = x0 + (x1 - x0) * k as f64 / 4.0;
                    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x:.1}</text>"#, sx(x), H - PAD + 16.0);
                }
            }
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        for (i, ser) in self.series.iter().enumerate() {
            let c = COLORS[i % COLORS.len()];
            let d: Vec<String> = ser
                .points
                .iter()
                .filter(|p| p.1.is_finite())
                .enumerate()
                .map(|(j, p)| format!("{}{:.1} {:.1}", if j == 0 { "M" } else { "L" }, sx(p.0), sy(p.1)))
                .collect();
            let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, d.join(" "));
            let ly = PAD + 14.0 * i as f64;
            let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{c}">{}</text>"#, W - PAD + 4.0, esc(&ser.name));
        }
        s.push_str("</svg>\n");
        s
    }
}
