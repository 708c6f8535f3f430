//! Imaging geometries, scatterer fields and the random shape generators.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{invalid, Error, Result};

/// Sensor/domain arrangement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Geometry {
    /// Unit square centred at the origin, plane-wave probes from the unit circle.
    FarField,
    /// 1 × 3 rectangle with all sensors on a line above its top edge.
    Seismic,
}

impl Geometry {
    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::FarField => "farfield",
            Geometry::Seismic => "seismic",
        }
    }
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "farfield" | "far-field" => Ok(Geometry::FarField),
            "seismic" => Ok(Geometry::Seismic),
            other => Err(invalid(format!("unknown geometry '{other}'"))),
        }
    }
}

/// A uniform Cartesian grid over a rectangular extent.
///
/// Cells are stored row-major with row 0 at the top (largest y), so a field
/// reshaped to `rows × cols` reads like an image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub geometry: Geometry,
    pub rows: usize,
    pub cols: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
}

pub const MIN_GRID: usize = 4;

/// Builds the grid for `geometry` with `n` rows.
pub fn make_domain(geometry: Geometry, n: usize) -> Result<DomainSpec> {
    if n < MIN_GRID {
        return Err(invalid(format!(
            "grid size must be at least {MIN_GRID}, got {n}"
        )));
    }
    Ok(match geometry {
        Geometry::FarField => DomainSpec {
            geometry,
            rows: n,
            cols: n,
            x_range: (-0.5, 0.5),
            y_range: (-0.5, 0.5),
        },
        Geometry::Seismic => DomainSpec {
            geometry,
            rows: n,
            cols: 3 * n,
            x_range: (-1.5, 1.5),
            y_range: (-0.5, 0.5),
        },
    })
}

impl DomainSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Grid spacing (identical in both directions).
    pub fn cell_size(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / self.rows as f64
    }

    pub fn width(&self) -> f64 {
        self.x_range.1 - self.x_range.0
    }

    pub fn height(&self) -> f64 {
        self.y_range.1 - self.y_range.0
    }

    pub fn cell_center(&self, idx: usize) -> [f64; 2] {
        let (r, c) = (idx / self.cols, idx % self.cols);
        // (2c+1)/(2n) keeps the centre column/row exactly on the axis for odd n.
        let x = self.x_range.0 + self.width() * (2 * c + 1) as f64 / (2 * self.cols) as f64;
        let y = self.y_range.1 - self.height() * (2 * r + 1) as f64 / (2 * self.rows) as f64;
        [x, y]
    }

    pub fn cell_centers(&self) -> Vec<[f64; 2]> {
        (0..self.len()).map(|i| self.cell_center(i)).collect()
    }

    pub fn on_boundary(&self, idx: usize) -> bool {
        let (r, c) = (idx / self.cols, idx % self.cols);
        r == 0 || c == 0 || r + 1 == self.rows || c + 1 == self.cols
    }
}

/// Real scatterer values at the cell centres of a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererField {
    pub domain: DomainSpec,
    pub values: Vec<f64>,
}

impl ScattererField {
    pub fn zeros(domain: DomainSpec) -> Self {
        ScattererField {
            domain,
            values: vec![0.0; domain.len()],
        }
    }

    pub fn new(domain: DomainSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::DimensionMismatch {
                what: "field values",
                expected: domain.len(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("field values must be finite"));
        }
        Ok(ScattererField { domain, values })
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        ScattererField {
            domain: self.domain,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    fn clear_boundary(&mut self) {
        for i in 0..self.values.len() {
            if self.domain.on_boundary(i) {
                self.values[i] = 0.0;
            }
        }
    }
}

/// Size ranges for the random shapes, as fractions of the shorter domain side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeRanges {
    pub ellipse_semi_axis: (f64, f64),
    pub triangle_radius: (f64, f64),
    /// Maximum angular perturbation (radians) of each triangle vertex.
    pub triangle_jitter: f64,
    pub disk_radius: (f64, f64),
    /// Fraction of the extent (centred) in which shape centres are drawn.
    pub center_fraction: f64,
}

impl Default for ShapeRanges {
    fn default() -> Self {
        ShapeRanges {
            ellipse_semi_axis: (0.05, 0.2),
            triangle_radius: (0.05, 0.2),
            triangle_jitter: 0.5,
            disk_radius: (0.05, 0.15),
            center_fraction: 0.8,
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn random_center<R: Rng + ?Sized>(rng: &mut R, d: &DomainSpec, frac: f64) -> [f64; 2] {
    let cx = 0.5 * (d.x_range.0 + d.x_range.1);
    let cy = 0.5 * (d.y_range.0 + d.y_range.1);
    let hx = 0.5 * frac * d.width();
    let hy = 0.5 * frac * d.height();
    [
        uniform(rng, (cx - hx, cx + hx)),
        uniform(rng, (cy - hy, cy + hy)),
    ]
}

fn inside_triangle(p: [f64; 2], v: &[[f64; 2]; 3]) -> bool {
    let cross = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let area = cross(v[0], v[1], v[2]);
    if area == 0.0 {
        return false;
    }
    let s = area.signum();
    let d0 = cross(v[0], v[1], p) * s;
    let d1 = cross(v[1], v[2], p) * s;
    let d2 = cross(v[2], v[0], p) * s;
    d0 >= 0.0 && d1 >= 0.0 && d2 >= 0.0
}

/// Three random triangles and three random axis-aligned ellipses at unit intensity.
pub fn gen_triangles_ovals<R: Rng + ?Sized>(domain: &DomainSpec, rng: &mut R) -> ScattererField {
    gen_triangles_ovals_with(domain, &ShapeRanges::default(), rng)
}

pub fn gen_triangles_ovals_with<R: Rng + ?Sized>(
    domain: &DomainSpec,
    ranges: &ShapeRanges,
    rng: &mut R,
) -> ScattererField {
    let scale = domain.width().min(domain.height());
    let centers = domain.cell_centers();
    let mut field = ScattererField::zeros(*domain);

    for _ in 0..3 {
        let c = random_center(rng, domain, ranges.center_fraction);
        let radius = scale * uniform(rng, ranges.triangle_radius);
        let theta0 = rng.gen_range(0.0..2.0 * PI);
        let mut verts = [[0.0; 2]; 3];
        for (k, v) in verts.iter_mut().enumerate() {
            let jitter = if ranges.triangle_jitter > 0.0 {
                rng.gen_range(-ranges.triangle_jitter..ranges.triangle_jitter)
            } else {
                0.0
            };
            let a = theta0 + 2.0 * PI * k as f64 / 3.0 + jitter;
            *v = [c[0] + radius * a.cos(), c[1] + radius * a.sin()];
        }
        for (val, &p) in field.values.iter_mut().zip(&centers) {
            if inside_triangle(p, &verts) {
                *val = 1.0;
            }
        }
    }

    for _ in 0..3 {
        let c = random_center(rng, domain, ranges.center_fraction);
        let a = scale * uniform(rng, ranges.ellipse_semi_axis);
        let b = scale * uniform(rng, ranges.ellipse_semi_axis);
        if a <= 0.0 || b <= 0.0 {
            continue;
        }
        for (val, &p) in field.values.iter_mut().zip(&centers) {
            let (dx, dy) = ((p[0] - c[0]) / a, (p[1] - c[1]) / b);
            if dx * dx + dy * dy <= 1.0 {
                *val = 1.0;
            }
        }
    }

    field.clear_boundary();
    field
}

/// Three random disks with intensities drawn from [0.5, 1]; overlaps take the maximum.
pub fn gen_circles<R: Rng + ?Sized>(domain: &DomainSpec, rng: &mut R) -> ScattererField {
    gen_circles_with(domain, &ShapeRanges::default(), rng)
}

pub fn gen_circles_with<R: Rng + ?Sized>(
    domain: &DomainSpec,
    ranges: &ShapeRanges,
    rng: &mut R,
) -> ScattererField {
    let scale = domain.width().min(domain.height());
    let centers = domain.cell_centers();
    let mut field = ScattererField::zeros(*domain);
    for _ in 0..3 {
        let c = random_center(rng, domain, ranges.center_fraction);
        let r = scale * uniform(rng, ranges.disk_radius);
        let intensity = rng.gen_range(0.5..=1.0);
        if r <= 0.0 {
            continue;
        }
        for (val, &p) in field.values.iter_mut().zip(&centers) {
            let (dx, dy) = (p[0] - c[0], p[1] - c[1]);
            if dx * dx + dy * dy <= r * r {
                *val = val.max(intensity);
            }
        }
    }
    field.clear_boundary();
    field
}
