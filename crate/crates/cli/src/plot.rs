//! Hand-written SVG charts. Every data point is exactly one `<circle>`;
//! nothing else in the documents uses that element.

use std::fmt::Write;

use iglu_core::evaluation::{CegResult, PairedReadings, Zone};

const PANEL: f64 = 420.0;
const MARGIN: f64 = 60.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn zone_color(z: Zone) -> &'static str {
    match z {
        Zone::A => "#2b8a3e",
        Zone::B => "#1971c2",
        Zone::C => "#f08c00",
        Zone::D => "#c92a2a",
        Zone::E => "#862e9c",
    }
}

/// Axis limit: at least `floor`, rounded up to a multiple of 50.
fn axis_max(values: impl Iterator<Item = f64>, floor: f64) -> f64 {
    let m = values.fold(floor, f64::max);
    (m / 50.0).ceil() * 50.0
}

/// Square plotting area at a pixel offset, mapping `[0, max]²`.
struct Frame {
    left: f64,
    top: f64,
    max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.left + v.clamp(0.0, self.max) / self.max * PANEL
    }

    fn y(&self, v: f64) -> f64 {
        self.top + PANEL - v.clamp(0.0, self.max) / self.max * PANEL
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (l, t) = (self.left, self.top);
        let _ = writeln!(
            out,
            r##"<rect x="{l}" y="{t}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#333"/>"##
        );
        let step = if self.max > 400.0 { 100.0 } else { 50.0 };
        let mut v = 0.0;
        while v <= self.max + 1e-9 {
            let (x, y) = (self.x(v), self.y(v));
            let _ = writeln!(
                out,
                r##"<line x1="{x:.1}" y1="{b:.1}" x2="{x:.1}" y2="{b2:.1}" stroke="#333"/><text x="{x:.1}" y="{ty:.1}" font-size="10" text-anchor="middle">{v}</text>"##,
                b = t + PANEL,
                b2 = t + PANEL + 4.0,
                ty = t + PANEL + 16.0,
            );
            let _ = writeln!(
                out,
                r##"<line x1="{l:.1}" y1="{y:.1}" x2="{l4:.1}" y2="{y:.1}" stroke="#333"/><text x="{tx:.1}" y="{ty:.1}" font-size="10" text-anchor="end">{v}</text>"##,
                l4 = l - 4.0,
                tx = l - 6.0,
                ty = y + 3.0,
            );
            v += step;
        }
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{ty:.1}" font-size="13" text-anchor="middle">{}</text>"#,
            esc(title),
            cx = l + PANEL / 2.0,
            ty = t - 12.0,
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx:.1}" y="{ty:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            esc(xlabel),
            cx = l + PANEL / 2.0,
            ty = t + PANEL + 34.0,
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate({tx:.1},{cy:.1}) rotate(-90)" font-size="11" text-anchor="middle">{}</text>"#,
            esc(ylabel),
            tx = l - 40.0,
            cy = t + PANEL / 2.0,
        );
    }

    fn polyline(&self, out: &mut String, pts: &[(f64, f64)], style: &str) {
        let coords: Vec<String> = pts
            .iter()
            .map(|&(a, b)| format!("{:.1},{:.1}", self.x(a), self.y(b)))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" {style}/>"#, coords.join(" "));
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn least_squares_line(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Reference vs predicted scatter with the identity and fitted lines.
pub fn correlation_svg(p: &PairedReadings, title: &str) -> String {
    let max = axis_max(p.refs().iter().chain(p.preds()).copied(), 100.0);
    let f = Frame {
        left: MARGIN,
        top: MARGIN,
        max,
    };
    let mut b = String::new();
    f.axes(&mut b, title, "reference glucose (mg/dl)", "predicted glucose (mg/dl)");
    f.polyline(&mut b, &[(0.0, 0.0), (max, max)], r##"stroke="#868e96" stroke-dasharray="4 3""##);
    if let Some((slope, icpt)) = least_squares_line(p.refs(), p.preds()) {
        let lo = p.refs().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.refs().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        f.polyline(
            &mut b,
            &[(lo, slope * lo + icpt), (hi, slope * hi + icpt)],
            r##"stroke="#c92a2a""##,
        );
    }
    for (r, y) in p.refs().iter().zip(p.preds()) {
        let _ = writeln!(
            b,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1971c2" fill-opacity="0.7"/>"##,
            f.x(*r),
            f.y(*y)
        );
    }
    document(PANEL + 2.0 * MARGIN, PANEL + 2.0 * MARGIN, &b)
}

/// Standard Clarke grid boundary segments on `[0, 400]²`.
fn ceg_boundaries() -> Vec<Vec<(f64, f64)>> {
    let r = 175.0 / 3.0;
    vec![
        vec![(0.0, 70.0), (r, 70.0), (400.0 / 1.2, 400.0)],
        vec![(70.0, 84.0), (70.0, 400.0)],
        vec![(0.0, 180.0), (70.0, 180.0), (290.0, 400.0)],
        vec![(70.0, 0.0), (70.0, 56.0), (400.0, 320.0)],
        vec![(180.0, 0.0), (180.0, 70.0), (400.0, 70.0)],
        vec![(240.0, 70.0), (240.0, 180.0), (400.0, 180.0)],
        vec![(130.0, 0.0), (180.0, 70.0)],
    ]
}

const ZONE_LABELS: [(&str, f64, f64); 9] = [
    ("A", 30.0, 15.0),
    ("A", 370.0, 340.0),
    ("B", 370.0, 260.0),
    ("B", 280.0, 370.0),
    ("C", 160.0, 370.0),
    ("C", 160.0, 15.0),
    ("D", 30.0, 140.0),
    ("D", 370.0, 120.0),
    ("E", 30.0, 370.0),
];

/// One error-grid panel per entry, side by side.
pub fn ceg_svg(panels: &[(String, &PairedReadings, &CegResult)]) -> String {
    let mut b = String::new();
    let step = PANEL + 2.0 * MARGIN;
    for (k, (name, p, ceg)) in panels.iter().enumerate() {
        let max = axis_max(p.refs().iter().chain(p.preds()).copied(), 400.0);
        let f = Frame {
            left: MARGIN + k as f64 * step,
            top: MARGIN,
            max,
        };
        let _ = writeln!(b, r#"<g class="panel" data-group="{}">"#, esc(name));
        let title = format!("{name}: A {:.1}%, A+B {:.1}%", ceg.percent(Zone::A), ceg.percent(Zone::A) + ceg.percent(Zone::B));
        f.axes(&mut b, &title, "reference glucose (mg/dl)", "predicted glucose (mg/dl)");
        f.polyline(&mut b, &[(0.0, 0.0), (400.0, 400.0)], r##"stroke="#adb5bd" stroke-dasharray="2 3""##);
        for line in ceg_boundaries() {
            f.polyline(&mut b, &line, r##"class="zone-boundary" stroke="#212529""##);
        }
        for (label, x, y) in ZONE_LABELS {
            let _ = writeln!(
                b,
                r##"<text x="{:.1}" y="{:.1}" font-size="14" fill="#495057">{label}</text>"##,
                f.x(x),
                f.y(y)
            );
        }
        for ((r, y), z) in p.refs().iter().zip(p.preds()).zip(&ceg.zones) {
            let _ = writeln!(
                b,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" data-zone="{z}"/>"#,
                f.x(*r),
                f.y(*y),
                zone_color(*z)
            );
        }
        b.push_str("</g>\n");
    }
    document(step * panels.len().max(1) as f64, PANEL + 2.0 * MARGIN, &b)
}

/// Bar chart of zone percentages.
pub fn zones_svg(ceg: &CegResult) -> String {
    let mut b = String::new();
    let (w, h) = (360.0, 240.0);
    let bar = w / 5.0;
    let _ = writeln!(
        b,
        r#"<text x="{}" y="24" font-size="13" text-anchor="middle">Clarke zones (n = {})</text>"#,
        MARGIN + w / 2.0,
        ceg.n()
    );
    for (i, z) in Zone::ALL.iter().enumerate() {
        let pct = ceg.percent(*z);
        let bh = pct / 100.0 * h;
        let x = MARGIN + i as f64 * bar;
        let y = 40.0 + h - bh;
        let _ = writeln!(
            b,
            r#"<rect class="bar" x="{:.1}" y="{y:.1}" width="{:.1}" height="{bh:.1}" fill="{}"/>"#,
            x + 6.0,
            bar - 12.0,
            zone_color(*z)
        );
        let _ = writeln!(
            b,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{z}: {pct:.1}% ({})</text>"#,
            x + bar / 2.0,
            40.0 + h + 16.0,
            ceg.count(*z)
        );
    }
    document(w + 2.0 * MARGIN, h + 80.0, &b)
}
