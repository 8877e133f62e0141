//! Unit-space visualization: t-SNE of centroids, bounded Voronoi cells and
//! family-coloured SVG output.

pub mod families;
pub mod svg;
pub mod tsne;
pub mod voronoi;

pub use families::{family_color, PhoneFamilies};
pub use svg::{render_svg, svg_string};
pub use tsne::{tsne_embed, Embedding2D, TsneConfig, TsneMetric};
pub use voronoi::{voronoi, voronoi_in_bbox, BBox, VoronoiDiagram};
