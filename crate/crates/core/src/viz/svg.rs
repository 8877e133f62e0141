//! SVG rendering of a labelled Voronoi diagram.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::families::{family_color, PhoneFamilies};
use super::voronoi::{polygon_centroid, VoronoiDiagram};
use crate::error::{Error, Result};
use crate::types::Unit;

const CANVAS: f64 = 800.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One filled polygon and one centred label per cell, in unit order.
pub fn svg_string(d: &VoronoiDiagram, labels: &BTreeMap<Unit, String>, families: &PhoneFamilies) -> Result<String> {
    let (w, h) = (d.bbox.max[0] - d.bbox.min[0], d.bbox.max[1] - d.bbox.min[1]);
    let scale = CANVAS / w.max(h);
    let (cw, ch) = (w * scale, h * scale);
    let map = |p: [f64; 2]| ((p[0] - d.bbox.min[0]) * scale, (d.bbox.max[1] - p[1]) * scale);
    let font = (CANVAS / (d.cells.len() as f64).sqrt() / 4.0).clamp(4.0, 16.0);

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{cw:.2}" height="{ch:.2}" viewBox="0 0 {cw:.2} {ch:.2}">"#
    )
    .unwrap();
    writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    for (u, cell) in d.cells.iter().enumerate() {
        let label = labels
            .get(&(u as Unit))
            .ok_or_else(|| Error::invalid(format!("unit {u} has no label")))?;
        let points: Vec<String> = cell
            .iter()
            .map(|&p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            out,
            r##"<polygon points="{}" fill="{}" stroke="#333333" stroke-width="0.5"/>"##,
            points.join(" "),
            family_color(families.family(label))
        )
        .unwrap();
    }
    for (u, cell) in d.cells.iter().enumerate() {
        let (x, y) = map(polygon_centroid(cell));
        writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{font:.1}" font-family="sans-serif" text-anchor="middle" dominant-baseline="middle">{}</text>"#,
            escape(&labels[&(u as Unit)])
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_svg(d: &VoronoiDiagram, labels: &BTreeMap<Unit, String>, families: &PhoneFamilies, path: &Path) -> Result<()> {
    let text = svg_string(d, labels, families)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
