//! Domain descriptions and the planar geometry the rest of the pipeline
//! leans on: membership tests with a boundary tolerance band, distance to
//! the boundary, evenly spaced boundary sampling, and the ring-ordered
//! boundary segments the triangulation constrains.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Relative tolerance (times the domain half-width) of the boundary band:
/// points this close to a ring are classified as boundary, not interior.
pub const BOUNDARY_TOL_REL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GeometryError {
    pub fn kind(&self) -> &'static str {
        match self {
            GeometryError::ParseError { .. } => "ParseError",
            GeometryError::InvalidDomain(_) => "InvalidDomain",
            GeometryError::Io(_) => "IoError",
        }
    }
}

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    #[inline]
    pub fn dist_sq(&self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: Point) -> f64 {
        self.dist_sq(other).sqrt()
    }
}

/// Distance from `p` to the closed segment `ab`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let abx = b.x - a.x;
    let aby = b.y - a.y;
    let len_sq = abx * abx + aby * aby;
    if len_sq == 0.0 {
        return p.dist(a);
    }
    let t = ((p.x - a.x) * abx + (p.y - a.y) * aby) / len_sq;
    let t = t.clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * abx, a.y + t * aby))
}

/// Twice the signed area of triangle `abc` (positive when counterclockwise).
#[inline]
pub fn cross(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn ring_signed_area(ring: &[Point]) -> f64 {
    let mut acc = 0.0;
    for i in 0..ring.len() {
        let a = ring[i];
        let b = ring[(i + 1) % ring.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

fn segments_properly_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    false
}

/// Bounded domain: a disk or a polygon with polygonal holes.
///
/// Polygon rings are stored outer-first; the constructor normalizes
/// orientation (outer counterclockwise, holes clockwise) and rejects
/// degenerate or self-intersecting input.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    Disk {
        center: Point,
        radius: f64,
    },
    PolygonWithHoles {
        outer: Vec<Point>,
        holes: Vec<Vec<Point>>,
    },
}

impl DomainSpec {
    pub fn disk(center: Point, radius: f64) -> Result<Self, GeometryError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(GeometryError::InvalidDomain(format!(
                "disk radius must be positive and finite, got {radius}"
            )));
        }
        Ok(DomainSpec::Disk { center, radius })
    }

    /// Unit disk centered at the origin.
    pub fn unit_disk() -> Self {
        DomainSpec::Disk {
            center: Point::new(0.0, 0.0),
            radius: 1.0,
        }
    }

    pub fn polygon_with_holes(
        outer: Vec<Point>,
        holes: Vec<Vec<Point>>,
    ) -> Result<Self, GeometryError> {
        let mut outer = outer;
        let mut holes = holes;
        for (idx, ring) in std::iter::once(&mut outer).chain(holes.iter_mut()).enumerate() {
            if ring.len() < 3 {
                return Err(GeometryError::InvalidDomain(format!(
                    "ring {idx} has {} vertices, need at least 3",
                    ring.len()
                )));
            }
            for i in 0..ring.len() {
                let a = ring[i];
                let b = ring[(i + 1) % ring.len()];
                if a == b {
                    return Err(GeometryError::InvalidDomain(format!(
                        "ring {idx} repeats vertex ({}, {})",
                        a.x, a.y
                    )));
                }
            }
            let area = ring_signed_area(ring);
            if area == 0.0 {
                return Err(GeometryError::InvalidDomain(format!(
                    "ring {idx} has zero area"
                )));
            }
            // Outer ring counterclockwise, holes clockwise.
            let want_ccw = idx == 0;
            if (area > 0.0) != want_ccw {
                ring.reverse();
            }
        }
        let domain = DomainSpec::PolygonWithHoles { outer, holes };
        domain.check_simple()?;
        Ok(domain)
    }

    /// The L-shaped domain (-1,1)^2 minus the closed quadrant [0,1]x[-1,0].
    pub fn lshape() -> Self {
        let outer = vec![
            Point::new(-1.0, -1.0),
            Point::new(0.0, -1.0),
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(-1.0, 1.0),
        ];
        DomainSpec::polygon_with_holes(outer, Vec::new()).expect("fixed vertices form a valid ring")
    }

    /// Wavy ring r(t) = 1 + 0.2 sin(6t) sampled at 256 vertices, with two
    /// circular holes of radius 0.15 centered at (±0.4, 0), 64 vertices each.
    pub fn wavy_with_holes() -> Self {
        let outer: Vec<Point> = (0..256)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 / 256.0;
                let r = 1.0 + 0.2 * (6.0 * t).sin();
                Point::new(r * t.cos(), r * t.sin())
            })
            .collect();
        let hole = |cx: f64| -> Vec<Point> {
            (0..64)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / 64.0;
                    Point::new(cx + 0.15 * t.cos(), 0.15 * t.sin())
                })
                .collect()
        };
        DomainSpec::polygon_with_holes(outer, vec![hole(0.4), hole(-0.4)])
            .expect("fixed rings form a valid domain")
    }

    fn check_simple(&self) -> Result<(), GeometryError> {
        let rings = self.rings();
        let seg_list: Vec<(usize, Point, Point)> = rings
            .iter()
            .enumerate()
            .flat_map(|(ri, ring)| {
                (0..ring.len()).map(move |i| (ri, ring[i], ring[(i + 1) % ring.len()]))
            })
            .collect();
        for i in 0..seg_list.len() {
            for j in (i + 1)..seg_list.len() {
                let (ra, a1, a2) = seg_list[i];
                let (rb, b1, b2) = seg_list[j];
                // Segments sharing an endpoint within one ring are adjacent.
                if ra == rb && (a1 == b1 || a1 == b2 || a2 == b1 || a2 == b2) {
                    continue;
                }
                if segments_properly_intersect(a1, a2, b1, b2) {
                    return Err(GeometryError::InvalidDomain(format!(
                        "rings {ra} and {rb} intersect near ({}, {})",
                        a1.x, a1.y
                    )));
                }
            }
        }
        Ok(())
    }

    /// All rings as vertex lists; a disk yields nothing here (its single
    /// ring is parametric, not polygonal).
    fn rings(&self) -> Vec<&[Point]> {
        match self {
            DomainSpec::Disk { .. } => Vec::new(),
            DomainSpec::PolygonWithHoles { outer, holes } => {
                let mut v: Vec<&[Point]> = vec![outer.as_slice()];
                v.extend(holes.iter().map(|h| h.as_slice()));
                v
            }
        }
    }

    /// Smallest R such that the domain fits in the square [-R, R]^2.
    pub fn half_width(&self) -> f64 {
        match self {
            DomainSpec::Disk { center, radius } => {
                (center.x.abs() + radius).max(center.y.abs() + radius)
            }
            DomainSpec::PolygonWithHoles { outer, .. } => outer
                .iter()
                .map(|p| p.x.abs().max(p.y.abs()))
                .fold(0.0, f64::max),
        }
    }

    /// Half-width of the overlay box the uniform grid lives on.
    pub fn fd_box(&self) -> f64 {
        1.2 * self.half_width()
    }

    /// Area of the domain: exact for polygons (shoelace, holes
    /// subtracted), analytic for disks.
    pub fn area(&self) -> f64 {
        fn shoelace(ring: &[Point]) -> f64 {
            let mut acc = 0.0;
            for i in 0..ring.len() {
                let a = ring[i];
                let b = ring[(i + 1) % ring.len()];
                acc += a.x * b.y - b.x * a.y;
            }
            acc.abs() / 2.0
        }
        match self {
            DomainSpec::Disk { radius, .. } => std::f64::consts::PI * radius * radius,
            DomainSpec::PolygonWithHoles { outer, holes } => {
                shoelace(outer) - holes.iter().map(|h| shoelace(h)).sum::<f64>()
            }
        }
    }

    fn boundary_tol(&self) -> f64 {
        BOUNDARY_TOL_REL * self.half_width()
    }

    /// Strict interior membership. Points within the boundary tolerance
    /// band of any ring count as boundary and return false.
    pub fn contains(&self, p: Point) -> bool {
        let tol = self.boundary_tol();
        match self {
            DomainSpec::Disk { center, radius } => {
                let r = p.dist(*center);
                (r - radius).abs() > tol && r < *radius
            }
            DomainSpec::PolygonWithHoles { .. } => {
                if self.distance_to_boundary(p) <= tol {
                    return false;
                }
                self.even_odd_inside(p)
            }
        }
    }

    fn even_odd_inside(&self, p: Point) -> bool {
        let mut inside = false;
        for ring in self.rings() {
            for i in 0..ring.len() {
                let a = ring[i];
                let b = ring[(i + 1) % ring.len()];
                if (a.y > p.y) != (b.y > p.y) {
                    let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                    if p.x < x_cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    /// Unsigned distance from `p` to the nearest ring.
    pub fn distance_to_boundary(&self, p: Point) -> f64 {
        match self {
            DomainSpec::Disk { center, radius } => (radius - p.dist(*center)).abs(),
            DomainSpec::PolygonWithHoles { .. } => self
                .rings()
                .iter()
                .flat_map(|ring| {
                    (0..ring.len())
                        .map(move |i| point_segment_distance(p, ring[i], ring[(i + 1) % ring.len()]))
                })
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Points along each ring with arc spacing as close to `target_spacing`
    /// as divides the ring (per side, for polygons, so every polygon vertex
    /// is kept and no corner is cut). No duplicates; ring order per ring.
    pub fn boundary_points(&self, target_spacing: f64) -> Vec<Vec<Point>> {
        assert!(target_spacing > 0.0, "spacing must be positive");
        match self {
            DomainSpec::Disk { center, radius } => {
                let n = ((2.0 * std::f64::consts::PI * radius / target_spacing).round() as usize)
                    .max(3);
                let ring = (0..n)
                    .map(|k| {
                        let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                        Point::new(center.x + radius * t.cos(), center.y + radius * t.sin())
                    })
                    .collect();
                vec![ring]
            }
            DomainSpec::PolygonWithHoles { .. } => self
                .rings()
                .iter()
                .map(|ring| {
                    let mut pts = Vec::new();
                    for i in 0..ring.len() {
                        let a = ring[i];
                        let b = ring[(i + 1) % ring.len()];
                        let len = a.dist(b);
                        let steps = ((len / target_spacing).round() as usize).max(1);
                        for k in 0..steps {
                            let t = k as f64 / steps as f64;
                            pts.push(Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
                        }
                    }
                    pts
                })
                .collect(),
        }
    }

    /// Arc-length (or angle) parameter of `p` along its nearest ring,
    /// together with the ring index. Used to order boundary points.
    fn boundary_parameter(&self, p: Point) -> (usize, f64) {
        match self {
            DomainSpec::Disk { center, .. } => {
                let t = (p.y - center.y).atan2(p.x - center.x);
                let t = if t < 0.0 {
                    t + 2.0 * std::f64::consts::PI
                } else {
                    t
                };
                (0, t)
            }
            DomainSpec::PolygonWithHoles { .. } => {
                let mut best = (0usize, 0.0f64, f64::INFINITY);
                for (ri, ring) in self.rings().iter().enumerate() {
                    let mut arc = 0.0;
                    for i in 0..ring.len() {
                        let a = ring[i];
                        let b = ring[(i + 1) % ring.len()];
                        let d = point_segment_distance(p, a, b);
                        if d < best.2 {
                            let len_sq = a.dist_sq(b);
                            let t = if len_sq == 0.0 {
                                0.0
                            } else {
                                (((p.x - a.x) * (b.x - a.x) + (p.y - a.y) * (b.y - a.y)) / len_sq)
                                    .clamp(0.0, 1.0)
                            };
                            best = (ri, arc + t * len_sq.sqrt(), d);
                        }
                        arc += a.dist(b);
                    }
                }
                (best.0, best.1)
            }
        }
    }

    /// Orders boundary cloud points along their rings and pairs consecutive
    /// points into the closed segment chains the triangulation constrains.
    /// Returned segments are index pairs into `boundary_pts`.
    pub fn boundary_segments(&self, boundary_pts: &[Point]) -> Vec<(usize, usize)> {
        let n_rings = match self {
            DomainSpec::Disk { .. } => 1,
            DomainSpec::PolygonWithHoles { holes, .. } => 1 + holes.len(),
        };
        let mut by_ring: Vec<Vec<(f64, usize)>> = vec![Vec::new(); n_rings];
        for (i, &p) in boundary_pts.iter().enumerate() {
            let (ring, t) = self.boundary_parameter(p);
            by_ring[ring].push((t, i));
        }
        let mut segments = Vec::with_capacity(boundary_pts.len());
        for ring in &mut by_ring {
            ring.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            if ring.len() < 2 {
                continue;
            }
            for w in 0..ring.len() {
                segments.push((ring[w].1, ring[(w + 1) % ring.len()].1));
            }
        }
        segments
    }

    /// Writes the polygon file format: one `ring <n>` header per ring
    /// followed by `x y` lines, outer ring first.
    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        let rings = match self {
            DomainSpec::Disk { .. } => {
                return Err(GeometryError::InvalidDomain(
                    "disk domains have no polygon file form; sample a ring first".into(),
                ))
            }
            DomainSpec::PolygonWithHoles { .. } => self.rings(),
        };
        let mut out = String::new();
        for ring in rings {
            writeln!(out, "ring {}", ring.len()).unwrap();
            for p in ring {
                writeln!(out, "{:.17e} {:.17e}", p.x, p.y).unwrap();
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads the polygon file format written by [`DomainSpec::save`].
    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path)?;
        let mut rings: Vec<Vec<Point>> = Vec::new();
        let mut expect = 0usize;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = lineno + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("ring ") {
                if expect > 0 {
                    return Err(GeometryError::ParseError {
                        line: lineno,
                        msg: format!("ring header before previous ring finished ({expect} vertices missing)"),
                    });
                }
                expect = rest.trim().parse().map_err(|e| GeometryError::ParseError {
                    line: lineno,
                    msg: format!("bad ring vertex count: {e}"),
                })?;
                rings.push(Vec::with_capacity(expect));
                continue;
            }
            if expect == 0 {
                return Err(GeometryError::ParseError {
                    line: lineno,
                    msg: format!("expected 'ring <n>' header, got '{line}'"),
                });
            }
            let mut it = line.split_whitespace();
            let x: f64 = it
                .next()
                .ok_or(())
                .and_then(|t| t.parse().map_err(|_| ()))
                .map_err(|_| GeometryError::ParseError {
                    line: lineno,
                    msg: "expected two floats".into(),
                })?;
            let y: f64 = it
                .next()
                .ok_or(())
                .and_then(|t| t.parse().map_err(|_| ()))
                .map_err(|_| GeometryError::ParseError {
                    line: lineno,
                    msg: "expected two floats".into(),
                })?;
            if it.next().is_some() {
                return Err(GeometryError::ParseError {
                    line: lineno,
                    msg: "trailing tokens after coordinates".into(),
                });
            }
            rings.last_mut().unwrap().push(Point::new(x, y));
            expect -= 1;
        }
        if expect > 0 {
            return Err(GeometryError::ParseError {
                line: text.lines().count(),
                msg: format!("file ended with {expect} vertices missing"),
            });
        }
        if rings.is_empty() {
            return Err(GeometryError::ParseError {
                line: 1,
                msg: "no rings in file".into(),
            });
        }
        let outer = rings.remove(0);
        DomainSpec::polygon_with_holes(outer, rings)
    }
}
