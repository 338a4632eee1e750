//! Minimal SVG line plots.

use std::fmt::Write;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub values: &'a [Option<f64>],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart over step index; `bands` shades labelled runs, `hline` draws a threshold.
pub fn line_chart(title: &str, series: &[Series], bands: Option<&[u8]>, hline: Option<f64>) -> String {
    let len = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    let finite = series.iter().flat_map(|s| s.values.iter().flatten()).copied().chain(hline);
    let (mut lo, mut hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let x = |t: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * t as f64 / (len - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#, escape(title));
    if let Some(labels) = bands {
        let mut t = 0;
        while t < labels.len() {
            if labels[t] == 0 {
                t += 1;
                continue;
            }
            let start = t;
            while t < labels.len() && labels[t] != 0 {
                t += 1;
            }
            let (x0, x1) = (x(start), x(t.min(len - 1)));
            let _ = writeln!(
                out,
                r##"<rect x="{x0:.1}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="#f4b6b6" opacity="0.6"/>"##,
                (x1 - x0).max(1.0),
                HEIGHT - 2.0 * MARGIN
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<path d="M{MARGIN},{MARGIN} V{b} H{r}" fill="none" stroke="black"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    let _ = writeln!(out, r#"<text x="4" y="{:.1}">{hi:.3e}</text>"#, MARGIN + 4.0);
    let _ = writeln!(out, r#"<text x="4" y="{:.1}">{lo:.3e}</text>"#, HEIGHT - MARGIN);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, WIDTH - MARGIN - 30.0, HEIGHT - MARGIN + 16.0, len - 1);
    for (k, s) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for (t, v) in s.values.iter().enumerate() {
            match v {
                Some(v) => {
                    let _ = write!(d, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, x(t), y(*v));
                    pen_down = true;
                }
                None => pen_down = false,
            }
        }
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{}" stroke-width="1"/>"#, d.trim_end(), s.color);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            20.0 + 14.0 * k as f64,
            s.color,
            escape(s.name)
        );
    }
    if let Some(h) = hline {
        let _ = writeln!(
            out,
            r##"<line x1="{MARGIN}" x2="{:.1}" y1="{yy:.1}" y2="{yy:.1}" stroke="#555" stroke-dasharray="4 3"/>"##,
            WIDTH - MARGIN,
            yy = y(h)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaps_break_the_line() {
        let values = [Some(0.0), Some(1.0), None, Some(0.5)];
        let svg = line_chart("t", &[Series { name: "a", color: "red", values: &values }], Some(&[0, 1, 1, 0]), Some(0.7));
        let path = svg.lines().find(|l| l.contains("stroke=\"red\"")).unwrap();
        assert_eq!(path.matches('M').count(), 2);
        assert!(svg.contains("#f4b6b6"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn constant_and_empty_inputs_render() {
        let flat = [Some(2.0); 3];
        assert!(line_chart("flat", &[Series { name: "f", color: "blue", values: &flat }], None, None).contains("<path"));
        assert!(line_chart("empty", &[], None, None).ends_with("</svg>\n"));
    }
}
