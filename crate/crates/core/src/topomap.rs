//! Self-contained SVG scalp maps.
//!
//! Electrodes are placed at their top-down planar position divided by the
//! head radius (the same projection as the polar point clouds). Scores are
//! interpolated onto a 64×64 grid by inverse-distance weighting and coloured
//! with a blue-white-red ramp symmetric around zero.

use std::fmt::Write;

use crate::explain::ContributionMap;

pub const GRID: usize = 64;
const SIZE: f64 = 320.0;
const RADIUS: f64 = 130.0;
const IDW_POWER: f64 = 2.0;

/// Inverse-distance-weighted value at `(x, y)`; exact at a sample point.
pub fn idw(points: &[[f64; 2]], values: &[f64], x: f64, y: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, v) in points.iter().zip(values) {
        let d2 = (p[0] - x).powi(2) + (p[1] - y).powi(2);
        if d2 < 1e-24 {
            return *v;
        }
        let w = d2.powf(-IDW_POWER / 2.0);
        num += w * v;
        den += w;
    }
    num / den
}

/// `t ∈ [-1, 1]` to blue (−1), white (0), red (+1).
pub fn diverging(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(-1.0, 1.0);
    let lerp = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    let (blue, white, red) = ((33.0, 102.0, 172.0), (247.0, 247.0, 247.0), (178.0, 24.0, 43.0));
    let (from, to, s) = if t < 0.0 { (white, blue, -t) } else { (white, red, t) };
    (lerp(from.0, to.0, s), lerp(from.1, to.1, s), lerp(from.2, to.2, s))
}

/// Renders `map` as an SVG document.
pub fn render_svg(map: &ContributionMap, title: &str) -> String {
    let r = map.layout.head_radius();
    let pts: Vec<[f64; 2]> = map.layout.channels().iter().map(|c| [c.pos[0] / r, c.pos[1] / r]).collect();
    let vmax = map.scores.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if vmax > 0.0 { vmax } else { 1.0 };
    let (cx, cy) = (SIZE / 2.0, SIZE / 2.0 + 10.0);
    let to_px = |x: f64, y: f64| (cx + x * RADIUS, cy - y * RADIUS);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{h}" viewBox="0 0 {SIZE} {h}">"#,
        h = SIZE + 20.0
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{cx}" y="16" font-family="sans-serif" font-size="13" text-anchor="middle">{}</text>"#, escape(title));
    let cell = 2.0 / GRID as f64;
    let px = cell * RADIUS;
    for i in 0..GRID {
        for j in 0..GRID {
            let x = -1.0 + (j as f64 + 0.5) * cell;
            let y = 1.0 - (i as f64 + 0.5) * cell;
            if x * x + y * y > 1.0 {
                continue;
            }
            let (rr, gg, bb) = diverging(idw(&pts, &map.scores, x, y) / scale);
            let (sx, sy) = to_px(x - cell / 2.0, y + cell / 2.0);
            let _ = writeln!(
                s,
                r##"<rect x="{sx:.2}" y="{sy:.2}" width="{w:.2}" height="{w:.2}" fill="#{rr:02x}{gg:02x}{bb:02x}"/>"##,
                w = px + 0.05
            );
        }
    }
    let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="{RADIUS}" fill="none" stroke="black" stroke-width="2"/>"#);
    let (nx, ny) = (cx, cy - RADIUS);
    let _ = writeln!(
        s,
        r#"<polyline points="{:.1},{:.1} {nx:.1},{:.1} {:.1},{:.1}" fill="none" stroke="black" stroke-width="2"/>"#,
        nx - 10.0,
        ny + 1.0,
        ny - 12.0,
        nx + 10.0,
        ny + 1.0
    );
    for (ch, p) in map.layout.channels().iter().zip(&pts) {
        let (x, y) = to_px(p[0], p[1]);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="black"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="9" text-anchor="middle">{}</text>"#,
            y - 5.0,
            escape(&ch.name)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{cx}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">blue -{scale:.2} / red +{scale:.2}</text>"#,
        SIZE + 14.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ChannelLayout;

    #[test]
    fn idw_exact_at_samples_and_bounded() {
        let pts = [[0.0, 0.0], [1.0, 0.0]];
        assert_eq!(idw(&pts, &[2.0, -1.0], 1.0, 0.0), -1.0);
        let mid = idw(&pts, &[2.0, -1.0], 0.5, 0.0);
        assert!((mid - 0.5).abs() < 1e-12);
        let far = idw(&pts, &[2.0, -1.0], 0.3, 0.7);
        assert!((-1.0..=2.0).contains(&far));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(diverging(0.0), (247, 247, 247));
        assert_eq!(diverging(-1.0), (33, 102, 172));
        assert_eq!(diverging(3.0), (178, 24, 43));
    }

    #[test]
    fn svg_is_self_contained() {
        let layout = ChannelLayout::standard_12();
        let scores = (0..12).map(|i| i as f64 - 5.5).collect();
        let map = ContributionMap { layout, scores, edge_scores: None, edges: vec![] };
        let svg = render_svg(&map, "a <b>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(!svg.contains("href"));
        assert!(svg.contains("a &lt;b&gt;"));
        let cells = svg.matches("<rect x=").count();
        assert!(cells > 3000 && cells < GRID * GRID);
        for name in map.layout.names() {
            assert!(svg.contains(&format!(">{name}</text>")));
        }
    }
}
