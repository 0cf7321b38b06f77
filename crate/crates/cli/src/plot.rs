//! Static renderings: hand-written SVG charts and PGM component mosaics.
//! The CSV/JSON next to each plot is the real output.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use overica::theorylab::PhaseGrid;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, W / 2.0);
    s
}

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x1 - self.x0).max(f64::EPSILON);
        MARGIN + (v - self.x0) / span * (W - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y1 - self.y0).max(f64::EPSILON);
        H - MARGIN - (v - self.y0) / span * (H - 2.0 * MARGIN)
    }

    fn frame(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * MARGIN,
            H - 2.0 * MARGIN
        );
        for (v, anchor) in [(self.x0, "start"), (self.x1, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{}</text>"#,
                self.x(v),
                H - MARGIN + 16.0,
                fmt_tick(v)
            );
        }
        for v in [self.y0, self.y1] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN - 6.0,
                self.y(v) + 4.0,
                fmt_tick(v)
            );
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 20.0);
        let _ = writeln!(
            s,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{ylabel}</text>"#,
            H / 2.0,
            H / 2.0
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}

/// Success fraction as gray cells (white = 1) over (p, k), with the curves
/// `k = p²/4` (red) and `k = p(p+1)/2` (blue).
pub fn phase_svg(grid: &PhaseGrid) -> String {
    let mut s = header("success fraction");
    let ps = &grid.p_values;
    let ks = &grid.k_values;
    if ps.is_empty() || ks.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let (pmin, pmax) = (ps[0] as f64 - 0.5, *ps.last().unwrap() as f64 + 0.5);
    let kstep = if ks.len() > 1 { (ks[1] - ks[0]) as f64 } else { 1.0 };
    let (kmin, kmax) = (ks[0] as f64 - kstep / 2.0, *ks.last().unwrap() as f64 + kstep / 2.0);
    let ax = Axes {
        x0: pmin,
        x1: pmax,
        y0: kmin,
        y1: kmax,
    };
    for (i, &p) in ps.iter().enumerate() {
        let pl = if i > 0 { (ps[i - 1] + p) as f64 / 2.0 } else { pmin };
        let pr = if i + 1 < ps.len() { (ps[i + 1] + p) as f64 / 2.0 } else { pmax };
        for (j, &k) in ks.iter().enumerate() {
            let kl = if j > 0 { (ks[j - 1] + k) as f64 / 2.0 } else { kmin };
            let kh = if j + 1 < ks.len() { (ks[j + 1] + k) as f64 / 2.0 } else { kmax };
            let level = grid.cell(p, k).map_or(0.0, |c| c.success_fraction);
            let g = (level.clamp(0.0, 1.0) * 255.0).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="rgb({g},{g},{g})"/>"#,
                ax.x(pl),
                ax.y(kh),
                ax.x(pr) - ax.x(pl),
                ax.y(kl) - ax.y(kh)
            );
        }
    }
    for (color, f) in [
        ("red", (|p: f64| p * p / 4.0) as fn(f64) -> f64),
        ("blue", |p: f64| p * (p + 1.0) / 2.0),
    ] {
        let pts: Vec<String> = (0..=50)
            .map(|i| pmin + (pmax - pmin) * f64::from(i) / 50.0)
            .map(|p| format!("{:.1},{:.1}", ax.x(p), ax.y(f(p).clamp(kmin, kmax))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        );
    }
    ax.frame(&mut s, "p", "k");
    s.push_str("</svg>\n");
    s
}

/// Line chart of `(x, y)` series, one color per series.
pub fn line_svg(title: &str, xlabel: &str, ylabel: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let mut s = header(title);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    if all.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, sel: fn(&(f64, f64)) -> f64| all.iter().map(sel).fold(init, f);
    let ax = Axes {
        x0: fold(f64::min, f64::INFINITY, |v| v.0),
        x1: fold(f64::max, f64::NEG_INFINITY, |v| v.0),
        y0: fold(f64::min, f64::INFINITY, |v| v.1).min(0.0),
        y1: fold(f64::max, f64::NEG_INFINITY, |v| v.1),
    };
    const COLORS: [&str; 4] = ["black", "red", "blue", "green"];
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", ax.x(x), ax.y(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            MARGIN + 8.0,
            MARGIN + 16.0 * (i as f64 + 1.0)
        );
    }
    ax.frame(&mut s, xlabel, ylabel);
    s.push_str("</svg>\n");
    s
}

/// Binary PGM mosaic of square components (one per column), each scaled to
/// its own max |value| with mid-gray at zero, separated by a 1-pixel border.
pub fn component_mosaic(components: &DMatrix<f64>, side: usize, per_row: usize) -> Vec<u8> {
    let k = components.ncols();
    let per_row = per_row.max(1).min(k.max(1));
    let rows = k.div_ceil(per_row);
    let cell = side + 1;
    let (w, h) = (per_row * cell + 1, rows * cell + 1);
    let mut px = vec![255u8; w * h];
    for c in 0..k {
        let col = components.column(c);
        let scale = col.amax().max(f64::MIN_POSITIVE);
        let (oy, ox) = ((c / per_row) * cell + 1, (c % per_row) * cell + 1);
        for i in 0..side {
            for j in 0..side {
                let v = col[i * side + j] / scale;
                px[(oy + i) * w + ox + j] = (127.5 + 127.5 * v).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    out
}
