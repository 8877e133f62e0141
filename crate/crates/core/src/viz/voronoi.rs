//! Bounded Voronoi cells from the dual of a Delaunay triangulation.

use rand::Rng as _;
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::rng::{self, purpose};

pub type Polygon = Vec<[f64; 2]>;

/// Axis-aligned box `[min_x, max_x] x [min_y, max_y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    pub fn polygon(&self) -> Polygon {
        vec![
            [self.min[0], self.min[1]],
            [self.max[0], self.min[1]],
            [self.max[0], self.max[1]],
            [self.min[0], self.max[1]],
        ]
    }

    /// Bounding box of the points grown by `margin` times its extent per side.
    /// A degenerate axis borrows the other axis' extent (or 1).
    pub fn around(points: &[[f64; 2]], margin: f64) -> Self {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in points {
            for a in 0..2 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let ext = [max[0] - min[0], max[1] - min[1]];
        let fallback = if ext[0].max(ext[1]) > 0.0 { ext[0].max(ext[1]) } else { 1.0 };
        for a in 0..2 {
            let e = if ext[a] > 0.0 { ext[a] } else { fallback };
            let pad = if ext[a] > 0.0 { margin * e } else { margin.max(0.5) * e };
            min[a] -= pad;
            max[a] += pad;
        }
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoronoiDiagram {
    pub sites: Vec<[f64; 2]>,
    /// Counter-clockwise vertex list per site.
    pub cells: Vec<Polygon>,
    pub bbox: BBox,
}

impl VoronoiDiagram {
    /// Index of the cell containing `p` (boundary points belong to the first
    /// cell that contains them).
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        self.cells.iter().position(|c| contains(c, p))
    }
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * s
}

pub fn polygon_centroid(poly: &[[f64; 2]]) -> [f64; 2] {
    let n = poly.len();
    let a = polygon_area(poly);
    if n == 0 {
        return [0.0, 0.0];
    }
    if a.abs() < 1e-300 {
        let sx: f64 = poly.iter().map(|p| p[0]).sum();
        let sy: f64 = poly.iter().map(|p| p[1]).sum();
        return [sx / n as f64, sy / n as f64];
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let cross = p[0] * q[1] - q[0] * p[1];
        cx += (p[0] + q[0]) * cross;
        cy += (p[1] + q[1]) * cross;
    }
    [cx / (6.0 * a), cy / (6.0 * a)]
}

/// Point-in-convex-polygon test (counter-clockwise), boundary inclusive.
pub fn contains(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    (0..n).all(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-12
    })
}

/// Keeps the part of `poly` closer to `s` than to `t`.
fn clip_bisector(poly: &[[f64; 2]], s: [f64; 2], t: [f64; 2]) -> Polygon {
    // Inside iff n.x <= c with n = t - s, c = (|t|^2 - |s|^2) / 2.
    let n = [t[0] - s[0], t[1] - s[1]];
    let c = 0.5 * ((t[0] * t[0] + t[1] * t[1]) - (s[0] * s[0] + s[1] * s[1]));
    let f = |p: [f64; 2]| n[0] * p[0] + n[1] * p[1] - c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (fa, fb) = (f(a), f(b));
        if fa <= 0.0 {
            out.push(a);
        }
        if (fa < 0.0 && fb > 0.0) || (fa > 0.0 && fb < 0.0) {
            let t = fa / (fa - fb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Nudges exactly coincident points apart by about `1e-9` of the data scale.
fn separate(points: &[[f64; 2]], seed: u64) -> Vec<[f64; 2]> {
    let scale = points
        .iter()
        .flatten()
        .fold(1.0f64, |m, v| m.max(v.abs()));
    let mut rng = rng::stream(seed, purpose::VORONOI_JITTER);
    let mut out = points.to_vec();
    loop {
        let mut order: Vec<usize> = (0..out.len()).collect();
        order.sort_by(|&a, &b| out[a][0].total_cmp(&out[b][0]).then(out[a][1].total_cmp(&out[b][1])));
        let dups: Vec<usize> = order.windows(2).filter(|w| out[w[0]] == out[w[1]]).map(|w| w[1].max(w[0])).collect();
        if dups.is_empty() {
            return out;
        }
        for i in dups {
            out[i][0] += 1e-9 * scale * rng.random_range(-1.0..1.0);
            out[i][1] += 1e-9 * scale * rng.random_range(-1.0..1.0);
        }
    }
}

/// Voronoi cells of `points` clipped to `bbox`. Coincident points are
/// separated by a seeded jitter first; the returned sites are the jittered ones.
pub fn voronoi_in_bbox(points: &[[f64; 2]], bbox: BBox, seed: u64) -> Result<VoronoiDiagram> {
    if points.len() < 2 {
        return Err(Error::invalid("Voronoi diagram needs at least 2 sites"));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite site coordinate"));
    }
    let sites = separate(points, seed);
    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut handles = Vec::with_capacity(sites.len());
    for s in &sites {
        let h = tri
            .insert(Point2::new(s[0], s[1]))
            .map_err(|e| Error::invalid(format!("triangulation failed: {e:?}")))?;
        handles.push(h);
    }
    let mut site_of = vec![usize::MAX; tri.num_vertices()];
    for (i, h) in handles.iter().enumerate() {
        site_of[h.index()] = i;
    }
    let cells = handles
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            let mut neighbours: Vec<usize> = tri.vertex(h).out_edges().map(|e| site_of[e.to().fix().index()]).collect();
            neighbours.sort_unstable();
            neighbours.dedup();
            let mut cell = bbox.polygon();
            for j in neighbours {
                cell = clip_bisector(&cell, sites[i], sites[j]);
                if cell.is_empty() {
                    break;
                }
            }
            cell
        })
        .collect();
    Ok(VoronoiDiagram { sites, cells, bbox })
}

/// Voronoi cells clipped to the sites' bounding box grown by `bbox_margin`.
pub fn voronoi(points: &[[f64; 2]], bbox_margin: f64, seed: u64) -> Result<VoronoiDiagram> {
    if !(bbox_margin >= 0.0) {
        return Err(Error::invalid("bbox margin must be non-negative"));
    }
    voronoi_in_bbox(points, BBox::around(points, bbox_margin), seed)
}
