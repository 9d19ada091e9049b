//! Minimal fixed-style SVG line charts. Output depends only on the data.

use std::io::Write;

use crate::error::Result;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Axes {
    pub log_x: bool,
    pub log_y: bool,
}

fn ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, String)> {
    if log {
        ((lo as i32)..=(hi as i32)).map(|e| (e as f64, format!("1e{e}"))).collect()
    } else {
        (0..=4)
            .map(|i| {
                let v = lo + (hi - lo) * i as f64 / 4.0;
                (v, format!("{v:.3}"))
            })
            .collect()
    }
}

fn range(vals: impl Iterator<Item = f64>, log: bool) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if log {
        (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
    } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// Draws each named series; on log axes nonpositive points are skipped.
pub fn line_chart<Wr: Write>(
    mut w: Wr,
    title: &str,
    x_label: &str,
    series: &[(&str, Vec<(f64, f64)>)],
    axes: Axes,
) -> Result<()> {
    let tf = |v: f64, log: bool| if log { (v > 0.0).then(|| v.log10()) } else { Some(v) };
    let pts: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(n, s)| {
            (
                *n,
                s.iter()
                    .filter_map(|(x, y)| Some((tf(*x, axes.log_x)?, tf(*y, axes.log_y)?)))
                    .filter(|(x, y)| x.is_finite() && y.is_finite())
                    .collect(),
            )
        })
        .collect();
    let (x0, x1) = range(pts.iter().flat_map(|s| s.1.iter().map(|p| p.0)), axes.log_x);
    let (y0, y1) = range(pts.iter().flat_map(|s| s.1.iter().map(|p| p.1)), axes.log_y);
    let sx = |v: f64| PAD + (v - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - y0) / (y1 - y0) * (H - 2.0 * PAD);

    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(
        w,
        r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{title}</text>"#,
        W / 2.0
    )?;
    writeln!(
        w,
        r#"<path d="M{:.2},{:.2} L{:.2},{:.2} L{:.2},{:.2}" fill="none" stroke="black"/>"#,
        sx(x0),
        sy(y1),
        sx(x0),
        sy(y0),
        sx(x1),
        sy(y0)
    )?;
    for (v, label) in ticks(x0, x1, axes.log_x) {
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{label}</text>"#,
            sx(v),
            H - PAD + 18.0
        )?;
    }
    for (v, label) in ticks(y0, y1, axes.log_y) {
        let y = sy(v);
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{label}</text>"#,
            PAD - 6.0,
            y + 4.0
        )?;
        writeln!(
            w,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/>"##,
            sx(x0),
            sx(x1)
        )?;
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{x_label}</text>"#,
        W / 2.0,
        H - 16.0
    )?;
    for (k, (name, p)) in pts.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        if !p.is_empty() {
            let d: Vec<String> = p
                .iter()
                .enumerate()
                .map(|(j, (a, b))| format!("{}{:.2},{:.2}", if j == 0 { "M" } else { "L" }, sx(*a), sy(*b)))
                .collect();
            writeln!(
                w,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                d.join(" ")
            )?;
            for (a, b) in p {
                writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(*a), sy(*b))?;
            }
        }
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>"#,
            W - PAD - 70.0,
            PAD + 16.0 * k as f64
        )?;
    }
    writeln!(w, "</svg>")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_skips_nonpositive_on_log_axes() {
        let s = vec![("a", vec![(0.1, 1e-2), (0.05, 0.0), (0.025, 3e-3)])];
        let axes = Axes {
            log_x: true,
            log_y: true,
        };
        let mut a = Vec::new();
        let mut b = Vec::new();
        line_chart(&mut a, "t", "eps", &s, axes).unwrap();
        line_chart(&mut b, "t", "eps", &s, axes).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.matches("<circle").count(), 2);
        assert!(text.contains("1e-2"));
    }

    #[test]
    fn empty_and_flat_series() {
        let mut out = Vec::new();
        line_chart(
            &mut out,
            "t",
            "x",
            &[("flat", vec![(0.0, 1.0), (1.0, 1.0)])],
            Axes {
                log_x: false,
                log_y: false,
            },
        )
        .unwrap();
        line_chart(
            &mut out,
            "t",
            "x",
            &[("none", vec![])],
            Axes {
                log_x: true,
                log_y: true,
            },
        )
        .unwrap();
        assert!(String::from_utf8(out).unwrap().matches("</svg>").count() == 2);
    }
}
