//! Scatter of normalized 2-D embeddings on the unit circle.

use std::fmt::Write;

use mll_core::metrics::GeometryReport;
use mll_core::{l2_normalize_rows, Matrix, Result};

const SIZE: f64 = 640.0;
const RADIUS: f64 = 240.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

fn color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

fn xy(v: [f64; 2], r: f64) -> (f64, f64) {
    let c = SIZE / 2.0;
    (c + r * v[0], c - r * v[1])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Points colored by class, a ray to each class center, the angle between
/// neighbouring centers at the middle of each gap and a per-class std legend.
pub fn scatter(title: &str, embeddings: &Matrix, labels: &[usize], geometry: &GeometryReport) -> Result<String> {
    let unit = l2_normalize_rows(embeddings)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<circle cx="{c}" cy="{c}" r="{RADIUS}" fill="none" stroke="#cccccc"/>"##,
        c = SIZE / 2.0
    );
    let _ = writeln!(s, r#"<text x="10" y="18" font-size="13">{}</text>"#, escape(title));

    let _ = writeln!(s, r#"<g fill-opacity="0.35">"#);
    for (row, &y) in unit.iter_rows().zip(labels) {
        let (x, yy) = xy([row[0], row[1]], RADIUS);
        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{yy:.2}" r="2" fill="{}"/>"#, color(y));
    }
    let _ = writeln!(s, "</g>");

    let (cx, cy) = xy([0.0, 0.0], 0.0);
    for (k, center) in geometry.class_centers.iter().enumerate() {
        let (x, y) = xy(*center, RADIUS * 1.08);
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{cy:.2}" x2="{x:.2}" y2="{y:.2}" stroke="{}" stroke-width="1.5"/>"#,
            color(k)
        );
        let (lx, ly) = xy(*center, RADIUS * 1.14);
        let _ = writeln!(
            s,
            r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" fill="{}">{k}</text>"#,
            color(k)
        );
    }

    for &k in &geometry.ccw_order {
        let gap = geometry.consecutive_angles_deg[k];
        let mid = (geometry.center_angles_deg[k] + gap / 2.0).to_radians();
        let (x, y) = xy([mid.cos(), mid.sin()], RADIUS * 0.72);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{y:.2}" text-anchor="middle">{gap:.1}°</text>"#);
    }

    for (k, std) in geometry.per_class_std.iter().enumerate() {
        let y = 36.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="10" y="{y:.0}" fill="{}">class {k}: std {std:.4}</text>"#,
            color(k)
        );
    }
    let y = 36.0 + 14.0 * geometry.per_class_std.len() as f64;
    let _ = writeln!(s, r#"<text x="10" y="{y:.0}">mean std {:.4}</text>"#, geometry.mean_std);
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mll_core::metrics::geometry_report;

    #[test]
    fn one_marker_per_point_and_center() {
        let m = Matrix::from_rows(&[[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [-1.0, 0.2]]).unwrap();
        let labels = [0, 0, 1, 2];
        let g = geometry_report(&m, &labels).unwrap();
        let svg = scatter("a < b", &m, &labels, &g).unwrap();
        assert_eq!(svg.matches(r#"r="2""#).count(), 4);
        assert_eq!(svg.matches("<line").count(), 3);
        assert_eq!(svg.matches('°').count(), 3);
        assert!(svg.contains("a &lt; b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
