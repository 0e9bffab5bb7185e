//! Point clouds: the solver's only discretization of the domain itself.
//!
//! Clouds store interior points first, then boundary points, and carry the
//! two scalars the rest of the pipeline needs: the minimum pairwise
//! distance (sets the overlay grid spacing) and the nominal spacing
//! h_bar = 1/sqrt(N_v) (the convergence variable). Generators cover
//! concentric rings on the unit disk, lattice fill of arbitrary domains,
//! boundary-graded random fill, and mesh-file import; a seeded uniform
//! perturbation stresses robustness studies.
//!
//! Randomness comes from SplitMix64 (Steele, Lea & Flood 2014): 64-bit
//! state, splittable-free sequential form, identical output on every
//! platform. Seeds are plain u64 values.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{DomainSpec, Point};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("vertex {index} at ({x}, {y}) is neither interior nor on the boundary")]
    TagError { index: usize, x: f64, y: f64 },
    #[error("generator produced no interior points (spacing too coarse for the domain)")]
    EmptyCloud,
    #[error("point {index} could not be re-placed inside the domain after {attempts} draws")]
    PerturbationStuck { index: usize, attempts: usize },
    #[error("k = {k} neighbors requested from {available} points")]
    KTooLarge { k: usize, available: usize },
    #[error("points {i} and {j} coincide")]
    DuplicatePoint { i: usize, j: usize },
    #[error("graded generator landed at {got} points, outside 10% of the {target} target")]
    GradingFailed { got: usize, target: usize },
    #[error("{0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CloudError {
    pub fn kind(&self) -> &'static str {
        match self {
            CloudError::ParseError { .. } => "ParseError",
            CloudError::TagError { .. } => "TagError",
            CloudError::EmptyCloud => "EmptyCloud",
            CloudError::PerturbationStuck { .. } => "PerturbationStuck",
            CloudError::KTooLarge { .. } => "KTooLarge",
            CloudError::DuplicatePoint { .. } => "DuplicatePoint",
            CloudError::GradingFailed { .. } => "GradingFailed",
            CloudError::InvalidParameter(_) => "InvalidParameter",
            CloudError::Io(_) => "IoError",
        }
    }
}

/// SplitMix64: the documented project RNG. 64-bit state, one add and two
/// xor-multiply mixes per number; output is identical everywhere.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1) with 53 mantissa bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform(&mut self, a: f64, b: f64) -> f64 {
        a + (b - a) * self.next_f64()
    }
}

/// A point cloud over a domain: interior points first, then boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    n_interior: usize,
    min_pairwise: f64,
    h_bar: f64,
}

impl PointCloud {
    pub fn new(interior: Vec<Point>, boundary: Vec<Point>) -> Result<Self, CloudError> {
        let n_interior = interior.len();
        let mut points = interior;
        points.extend(boundary);
        if points.len() < 2 {
            return Err(CloudError::InvalidParameter(format!(
                "a cloud needs at least 2 points, got {}",
                points.len()
            )));
        }
        let (min_pairwise, pair) = min_pairwise_distance(&points);
        if min_pairwise == 0.0 {
            return Err(CloudError::DuplicatePoint {
                i: pair.0,
                j: pair.1,
            });
        }
        let h_bar = 1.0 / (points.len() as f64).sqrt();
        Ok(PointCloud {
            points,
            n_interior,
            min_pairwise,
            h_bar,
        })
    }

    #[inline]
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    #[inline]
    pub fn interior(&self) -> &[Point] {
        &self.points[..self.n_interior]
    }

    #[inline]
    pub fn boundary(&self) -> &[Point] {
        &self.points[self.n_interior..]
    }

    #[inline]
    pub fn n_total(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn n_interior(&self) -> usize {
        self.n_interior
    }

    #[inline]
    pub fn n_boundary(&self) -> usize {
        self.points.len() - self.n_interior
    }

    #[inline]
    pub fn is_interior(&self, index: usize) -> bool {
        index < self.n_interior
    }

    #[inline]
    pub fn min_pairwise_distance(&self) -> f64 {
        self.min_pairwise
    }

    /// Nominal spacing 1/sqrt(N_v); the x-axis of every convergence study.
    #[inline]
    pub fn h_bar(&self) -> f64 {
        self.h_bar
    }

    /// Writes `cloud <N_v> <N_vi>` then one `x y` line per point,
    /// interior first.
    pub fn save(&self, path: &Path) -> Result<(), CloudError> {
        let mut out = String::new();
        writeln!(out, "cloud {} {}", self.n_total(), self.n_interior).unwrap();
        for p in &self.points {
            writeln!(out, "{:.17e} {:.17e}", p.x, p.y).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CloudError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = numbered_lines(&text);
        let (lineno, header) = lines.next().ok_or(CloudError::ParseError {
            line: 1,
            msg: "empty file".into(),
        })?;
        let mut it = header.split_whitespace();
        if it.next() != Some("cloud") {
            return Err(CloudError::ParseError {
                line: lineno,
                msg: "expected 'cloud <N_v> <N_vi>' header".into(),
            });
        }
        let n_total: usize = parse_token(it.next(), lineno, "N_v")?;
        let n_interior: usize = parse_token(it.next(), lineno, "N_vi")?;
        if n_interior > n_total {
            return Err(CloudError::ParseError {
                line: lineno,
                msg: format!("N_vi = {n_interior} exceeds N_v = {n_total}"),
            });
        }
        let mut pts = Vec::with_capacity(n_total);
        for _ in 0..n_total {
            let (lineno, line) = lines.next().ok_or(CloudError::ParseError {
                line: text.lines().count(),
                msg: "file ended before all points were read".into(),
            })?;
            pts.push(parse_point(line, lineno)?);
        }
        let boundary = pts.split_off(n_interior);
        PointCloud::new(pts, boundary)
    }
}

fn numbered_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_token<T: std::str::FromStr>(
    tok: Option<&str>,
    line: usize,
    what: &str,
) -> Result<T, CloudError> {
    tok.ok_or_else(|| CloudError::ParseError {
        line,
        msg: format!("missing {what}"),
    })?
    .parse()
    .map_err(|_| CloudError::ParseError {
        line,
        msg: format!("bad {what}"),
    })
}

fn parse_point(line: &str, lineno: usize) -> Result<Point, CloudError> {
    let mut it = line.split_whitespace();
    let x: f64 = parse_token(it.next(), lineno, "x coordinate")?;
    let y: f64 = parse_token(it.next(), lineno, "y coordinate")?;
    if it.next().is_some() {
        return Err(CloudError::ParseError {
            line: lineno,
            msg: "trailing tokens after coordinates".into(),
        });
    }
    Ok(Point::new(x, y))
}

// ---------------------------------------------------------------------------
// Pairwise distances and neighbor queries.

struct BucketGrid {
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl BucketGrid {
    fn build(points: &[Point], cell: f64) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        // Cap the cell count so degenerate spacings cannot blow memory;
        // a larger effective cell only weakens pruning, not correctness.
        let cap = ((4 * points.len().max(1)) as f64).sqrt().ceil() as usize + 1;
        let nx = (((hi.x - lo.x) / cell).floor() as usize + 1).clamp(1, cap);
        let ny = (((hi.y - lo.y) / cell).floor() as usize + 1).clamp(1, cap);
        let cell = cell
            .max((hi.x - lo.x) / nx as f64)
            .max((hi.y - lo.y) / ny as f64);
        let mut grid = BucketGrid {
            lo,
            cell,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        };
        for (i, p) in points.iter().enumerate() {
            let c = grid.cell_of(*p);
            grid.cells[c].push(i as u32);
        }
        grid
    }

    #[inline]
    fn coords_of(&self, p: Point) -> (usize, usize) {
        let cx = (((p.x - self.lo.x) / self.cell).floor() as i64).clamp(0, self.nx as i64 - 1);
        let cy = (((p.y - self.lo.y) / self.cell).floor() as i64).clamp(0, self.ny as i64 - 1);
        (cx as usize, cy as usize)
    }

    #[inline]
    fn cell_of(&self, p: Point) -> usize {
        let (cx, cy) = self.coords_of(p);
        cx * self.ny + cy
    }
}

/// Minimum pairwise distance and the realizing pair. Expected O(N) via
/// bucket sweeps; falls back to wider cells when the first guess finds
/// no adjacent pair.
pub fn min_pairwise_distance(points: &[Point]) -> (f64, (usize, usize)) {
    assert!(points.len() >= 2);
    let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
    let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    let extent = (hi.x - lo.x).max(hi.y - lo.y);
    if extent == 0.0 {
        return (0.0, (0, 1));
    }
    let mut cell = extent / (points.len() as f64).sqrt().ceil();
    loop {
        let grid = BucketGrid::build(points, cell);
        let mut best = f64::INFINITY;
        let mut pair = (0usize, 0usize);
        for (i, p) in points.iter().enumerate() {
            let (cx, cy) = grid.coords_of(*p);
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    let nx = cx as i64 + dx;
                    let ny = cy as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= grid.nx as i64 || ny >= grid.ny as i64 {
                        continue;
                    }
                    for &j in &grid.cells[nx as usize * grid.ny + ny as usize] {
                        let j = j as usize;
                        if j <= i {
                            continue;
                        }
                        let d = p.dist_sq(points[j]);
                        if d < best {
                            best = d;
                            pair = (i, j);
                        }
                    }
                }
            }
        }
        let best = best.sqrt();
        // Any pair closer than the cell width shares adjacent cells, so a
        // candidate within one cell width is the true minimum.
        if best <= grid.cell {
            return (best, pair);
        }
        if best.is_finite() {
            cell = best * 1.000001;
        } else {
            cell *= 4.0;
        }
    }
}

/// Brute-force O(N^2) oracle for [`min_pairwise_distance`]; test use only.
pub fn min_pairwise_distance_brute(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.min(points[i].dist_sq(points[j]));
        }
    }
    best.sqrt()
}

/// Bucket-accelerated k-nearest-neighbor queries over a fixed point set.
pub struct NeighborIndex {
    points: Vec<Point>,
    grid: BucketGrid,
}

impl NeighborIndex {
    pub fn build(points: &[Point]) -> Self {
        assert!(!points.is_empty());
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y).max(1e-300);
        let cell = extent / (points.len() as f64).sqrt().ceil();
        NeighborIndex {
            points: points.to_vec(),
            grid: BucketGrid::build(points, cell),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    /// Indices of the k nearest points to `p`, sorted by distance with
    /// exact ties broken by lower index.
    pub fn query(&self, p: Point, k: usize) -> Result<Vec<usize>, CloudError> {
        if k > self.points.len() {
            return Err(CloudError::KTooLarge {
                k,
                available: self.points.len(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let (cx, cy) = self.grid.coords_of(p);
        let max_ring = self.grid.nx.max(self.grid.ny);
        let mut found: Vec<(f64, usize)> = Vec::with_capacity(4 * k);
        for ring in 0..=max_ring {
            let r = ring as i64;
            for dx in -r..=r {
                for dy in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue; // interior of the ring was already scanned
                    }
                    let nx = cx as i64 + dx;
                    let ny = cy as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= self.grid.nx as i64 || ny >= self.grid.ny as i64 {
                        continue;
                    }
                    for &j in &self.grid.cells[nx as usize * self.grid.ny + ny as usize] {
                        let j = j as usize;
                        found.push((p.dist_sq(self.points[j]), j));
                    }
                }
            }
            if found.len() >= k {
                found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                let kth = found[k - 1].0.sqrt();
                // Everything not yet scanned is at least `ring` cells away.
                if kth <= ring as f64 * self.grid.cell {
                    break;
                }
            }
        }
        found.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        found.truncate(k);
        Ok(found.into_iter().map(|(_, j)| j).collect())
    }
}

// ---------------------------------------------------------------------------
// Generators.

/// Concentric-ring cloud on the unit disk: the origin, then ring j of
/// J-1 rings at radius j/(J-1) carrying floor(j*pi)+1 evenly spaced
/// points. The outermost ring is the boundary.
pub fn cloud_rings(j_rings: usize) -> Result<PointCloud, CloudError> {
    if j_rings < 2 {
        return Err(CloudError::InvalidParameter(format!(
            "ring cloud needs at least 2 rings, got {j_rings}"
        )));
    }
    let mut interior = vec![Point::new(0.0, 0.0)];
    let mut boundary = Vec::new();
    for j in 1..j_rings {
        let r = j as f64 / (j_rings - 1) as f64;
        let count = (j as f64 * std::f64::consts::PI).floor() as usize + 1;
        let target = if j == j_rings - 1 {
            &mut boundary
        } else {
            &mut interior
        };
        for k in 0..count {
            let t = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
            target.push(Point::new(r * t.cos(), r * t.sin()));
        }
    }
    PointCloud::new(interior, boundary)
}

/// Loads a mesh file (`mesh <N_v> <N_tri>`, vertex lines, then 1-based
/// triangle lines which are validated and discarded) and tags vertices
/// against `domain`.
pub fn cloud_from_mesh_file(path: &Path, domain: &DomainSpec) -> Result<PointCloud, CloudError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = numbered_lines(&text);
    let (lineno, header) = lines.next().ok_or(CloudError::ParseError {
        line: 1,
        msg: "empty file".into(),
    })?;
    let mut it = header.split_whitespace();
    if it.next() != Some("mesh") && {
        // the triangulation dump uses "tri" with the same layout
        let mut it2 = header.split_whitespace();
        it2.next() != Some("tri")
    } {
        return Err(CloudError::ParseError {
            line: lineno,
            msg: "expected 'mesh <N_v> <N_tri>' header".into(),
        });
    }
    let n_v: usize = parse_token(it.next(), lineno, "N_v")?;
    let n_tri: usize = parse_token(it.next(), lineno, "N_tri")?;
    let mut pts = Vec::with_capacity(n_v);
    for _ in 0..n_v {
        let (lineno, line) = lines.next().ok_or(CloudError::ParseError {
            line: text.lines().count(),
            msg: "file ended before all vertices were read".into(),
        })?;
        pts.push(parse_point(line, lineno)?);
    }
    for _ in 0..n_tri {
        let (lineno, line) = lines.next().ok_or(CloudError::ParseError {
            line: text.lines().count(),
            msg: "file ended before all triangles were read".into(),
        })?;
        let mut it = line.split_whitespace();
        for _ in 0..3 {
            let v: usize = parse_token(it.next(), lineno, "vertex index")?;
            if v == 0 || v > n_v {
                return Err(CloudError::ParseError {
                    line: lineno,
                    msg: format!("vertex index {v} outside 1..={n_v}"),
                });
            }
        }
        // Connectivity is discarded; only the vertex set matters here.
    }
    let tol = crate::geometry::BOUNDARY_TOL_REL * domain.half_width();
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for (i, &p) in pts.iter().enumerate() {
        if domain.contains(p) {
            interior.push(p);
        } else if domain.distance_to_boundary(p) <= tol {
            boundary.push(p);
        } else {
            return Err(CloudError::TagError {
                index: i,
                x: p.x,
                y: p.y,
            });
        }
    }
    PointCloud::new(interior, boundary)
}

/// Lattice-fill cloud: boundary sampled at the target spacing, interior
/// nodes of a spacing-`h_bar_target` lattice kept when strictly inside
/// with margin at least half a spacing from the boundary.
pub fn cloud_grid_interior(
    domain: &DomainSpec,
    h_bar_target: f64,
) -> Result<PointCloud, CloudError> {
    if !(h_bar_target > 0.0) {
        return Err(CloudError::InvalidParameter(format!(
            "lattice spacing must be positive, got {h_bar_target}"
        )));
    }
    let r = domain.half_width();
    let h = h_bar_target;
    let imax = (r / h).floor() as i64;
    let mut interior = Vec::new();
    for i in -imax..=imax {
        for j in -imax..=imax {
            let p = Point::new(i as f64 * h, j as f64 * h);
            if domain.contains(p) && domain.distance_to_boundary(p) >= 0.5 * h {
                interior.push(p);
            }
        }
    }
    if interior.is_empty() {
        return Err(CloudError::EmptyCloud);
    }
    let boundary: Vec<Point> = domain.boundary_points(h).into_iter().flatten().collect();
    PointCloud::new(interior, boundary)
}

/// Boundary-graded cloud: variable-radius dart throwing against a density
/// field concentrated near the boundary, calibrated to land within 10% of
/// `n_target` points. Deterministic for a fixed seed.
pub fn cloud_graded(
    domain: &DomainSpec,
    n_target: usize,
    s: crate::spectral::FractionalOrder,
    seed: u64,
) -> Result<PointCloud, CloudError> {
    // Hessian-magnitude density for a dist^s boundary layer:
    // |D^2 u| ~ dist^(s-2), capped near the boundary by the generator.
    let beta = s.value() - 2.0;
    cloud_graded_with_exponent(domain, n_target, beta, seed)
}

/// Same generator with the grading exponent exposed; exponent 0 reduces
/// to uniform dart throwing.
pub fn cloud_graded_with_exponent(
    domain: &DomainSpec,
    n_target: usize,
    beta: f64,
    seed: u64,
) -> Result<PointCloud, CloudError> {
    if n_target < 16 {
        return Err(CloudError::InvalidParameter(format!(
            "graded generator needs n_target >= 16, got {n_target}"
        )));
    }
    let r_dom = domain.half_width();
    let h_bar = 1.0 / (n_target as f64).sqrt();
    let delta = 0.5 * h_bar;
    // Unnormalized density, capped below distance h_bar from the boundary.
    let density = |p: Point| -> f64 {
        let d = domain.distance_to_boundary(p).max(h_bar);
        (d + delta).powf(beta)
    };

    // Deterministic midpoint estimate of the density integral, for the
    // initial normalization.
    let cells = 160usize;
    let step = 2.0 * r_dom / cells as f64;
    let mut integral = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            let p = Point::new(
                -r_dom + (i as f64 + 0.5) * step,
                -r_dom + (j as f64 + 0.5) * step,
            );
            if domain.contains(p) {
                integral += density(p) * step * step;
            }
        }
    }
    if integral <= 0.0 {
        return Err(CloudError::EmptyCloud);
    }

    let mut gamma = 0.82f64;
    let mut last_got = 0usize;
    for _ in 0..8 {
        let scale = n_target as f64 / integral;
        let radius = |p: Point| -> f64 { gamma / (scale * density(p)).sqrt() };
        let rho_cap = scale * (h_bar + delta).powf(beta);
        let boundary_spacing = gamma / rho_cap.sqrt();
        let boundary: Vec<Point> = domain
            .boundary_points(boundary_spacing)
            .into_iter()
            .flatten()
            .collect();

        let mut accepted: Vec<Point> = boundary.clone();
        let mut rng = SplitMix64::new(seed);
        let cell = boundary_spacing.max(1e-12);
        let nx = ((2.0 * r_dom / cell).ceil() as usize).clamp(1, 2048);
        let cell = (2.0 * r_dom / nx as f64).max(cell);
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); nx * nx];
        let bucket_of = |p: Point| -> (usize, usize) {
            let cx = (((p.x + r_dom) / cell).floor() as i64).clamp(0, nx as i64 - 1) as usize;
            let cy = (((p.y + r_dom) / cell).floor() as i64).clamp(0, nx as i64 - 1) as usize;
            (cx, cy)
        };
        for (i, &p) in accepted.iter().enumerate() {
            let (cx, cy) = bucket_of(p);
            buckets[cx * nx + cy].push(i as u32);
        }
        let n_boundary = boundary.len();
        let budget = 60 * n_target;
        for _ in 0..budget {
            let p = Point::new(rng.uniform(-r_dom, r_dom), rng.uniform(-r_dom, r_dom));
            if !domain.contains(p) {
                continue;
            }
            let rad = radius(p);
            let reach = (rad / cell).ceil() as i64;
            let (cx, cy) = bucket_of(p);
            let mut clear = true;
            'scan: for dx in -reach..=reach {
                for dy in -reach..=reach {
                    let bx = cx as i64 + dx;
                    let by = cy as i64 + dy;
                    if bx < 0 || by < 0 || bx >= nx as i64 || by >= nx as i64 {
                        continue;
                    }
                    for &q in &buckets[bx as usize * nx + by as usize] {
                        if accepted[q as usize].dist_sq(p) < rad * rad {
                            clear = false;
                            break 'scan;
                        }
                    }
                }
            }
            if clear {
                let (cx, cy) = bucket_of(p);
                buckets[cx * nx + cy].push(accepted.len() as u32);
                accepted.push(p);
            }
        }
        let got = accepted.len();
        last_got = got;
        if got.abs_diff(n_target) * 10 <= n_target {
            let interior = accepted.split_off(n_boundary);
            return PointCloud::new(interior, accepted);
        }
        // Shrink or grow the exclusion radii toward the target count.
        gamma = (gamma * (got as f64 / n_target as f64).sqrt()).clamp(0.25, 2.0);
    }
    Err(CloudError::GradingFailed {
        got: last_got,
        target: n_target,
    })
}

/// Moves every interior point by a fresh uniform draw in
/// [-level, level]^2, redrawing (up to 100 times per point) until the
/// moved point is strictly inside the domain. Boundary points stay put.
pub fn perturb(
    cloud: &PointCloud,
    domain: &DomainSpec,
    level: f64,
    seed: u64,
) -> Result<PointCloud, CloudError> {
    assert!(level >= 0.0, "perturbation level must be nonnegative");
    let mut rng = SplitMix64::new(seed);
    let mut interior = Vec::with_capacity(cloud.n_interior());
    const ATTEMPTS: usize = 100;
    for (i, &p) in cloud.interior().iter().enumerate() {
        let mut placed = None;
        for _ in 0..ATTEMPTS {
            let q = Point::new(
                p.x + rng.uniform(-level, level),
                p.y + rng.uniform(-level, level),
            );
            if domain.contains(q) {
                placed = Some(q);
                break;
            }
        }
        match placed {
            Some(q) => interior.push(q),
            None => {
                return Err(CloudError::PerturbationStuck {
                    index: i,
                    attempts: ATTEMPTS,
                })
            }
        }
    }
    PointCloud::new(interior, cloud.boundary().to_vec())
}
