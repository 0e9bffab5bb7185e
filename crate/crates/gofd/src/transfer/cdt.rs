//! Constrained Delaunay triangulation by incremental insertion.
//!
//! Points are inserted in lexicographic order into a triangulated super
//! square, each insertion carving the cavity of triangles whose
//! circumcircle contains the new point and fanning it back (Bowyer and
//! Watson). Boundary segments are then forced in by flipping the edges
//! they cross, a full flip pass restores the empty-circumcircle property
//! away from constrained edges, and finally super-square and exterior
//! triangles are dropped. All orientation and circle decisions go through
//! the exact-sign predicates, so the construction is deterministic and
//! never produces inverted triangles.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::Path;

use crate::geometry::{cross, point_segment_distance, DomainSpec, Point};

use super::predicates::{incircle, orient2d};
use super::TransferError;

const NO_TRI: i32 = -1;
/// Degenerate-triangle floor: area must exceed this times h_bar^2.
pub const MIN_AREA_REL: f64 = 1e-14;
/// Relative slack allowed in the empty-circumcircle check.
pub const CIRCUMCIRCLE_TOL_REL: f64 = 1e-12;
/// Points closer than this (times h_bar) to the open interior of a
/// constrained segment make the constraint unsatisfiable.
pub const SEGMENT_HIT_TOL_REL: f64 = 1e-12;

/// A triangulation of the cloud points with boundary segments forced in
/// and exterior triangles removed. Triangle vertices index the cloud's
/// own ordering and are counterclockwise.
#[derive(Debug, Clone)]
pub struct Triangulation {
    points: Vec<Point>,
    h_bar: f64,
    tris: Vec<[u32; 3]>,
    adj: Vec<[i32; 3]>,
    constrained: Vec<[bool; 3]>,
}

impl Triangulation {
    pub fn vertices(&self) -> &[Point] {
        &self.points
    }

    pub fn n_triangles(&self) -> usize {
        self.tris.len()
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.tris
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let v = self.tris[t];
        [
            self.points[v[0] as usize],
            self.points[v[1] as usize],
            self.points[v[2] as usize],
        ]
    }

    /// Neighbor triangle opposite each vertex, -1 where none.
    pub fn adjacent(&self, t: usize) -> [i32; 3] {
        self.adj[t]
    }

    pub fn is_constrained(&self, t: usize, slot: usize) -> bool {
        self.constrained[t][slot]
    }

    /// Smallest triangle altitude: twice the area over the longest edge,
    /// minimized over triangles. The mesh-quality length scale for
    /// solvability checks.
    pub fn min_height(&self) -> f64 {
        let mut h = f64::INFINITY;
        for t in 0..self.tris.len() {
            let [a, b, c] = self.triangle_points(t);
            let area2 = cross(a, b, c).abs();
            let longest = a.dist(b).max(b.dist(c)).max(c.dist(a));
            if longest > 0.0 {
                h = h.min(area2 / longest);
            }
        }
        h
    }

    /// Walks toward `p` from the triangle `*hint`, falling back to a full
    /// scan when the walk leaves the triangulated region. Returns the
    /// containing triangle (boundary inclusive) and updates the hint.
    pub fn locate(&self, p: Point, hint: &mut usize) -> Option<usize> {
        if self.tris.is_empty() {
            return None;
        }
        let mut t = (*hint).min(self.tris.len() - 1);
        let cap = 2 * self.tris.len() + 16;
        let mut walked = false;
        for _ in 0..cap {
            let v = self.tris[t];
            let mut advanced = false;
            for i in 0..3 {
                let a = self.points[v[(i + 1) % 3] as usize];
                let b = self.points[v[(i + 2) % 3] as usize];
                if orient2d(a, b, p) < 0 {
                    let n = self.adj[t][i];
                    if n == NO_TRI {
                        walked = true; // left the region; p may still be in
                        break; // another component (concavity), so scan
                    }
                    t = n as usize;
                    advanced = true;
                    break;
                }
            }
            if walked {
                break;
            }
            if !advanced {
                *hint = t;
                return Some(t);
            }
        }
        // Brute scan keeps the zero-row fallback honest near concavities.
        for (i, v) in self.tris.iter().enumerate() {
            let a = self.points[v[0] as usize];
            let b = self.points[v[1] as usize];
            let c = self.points[v[2] as usize];
            if orient2d(a, b, p) >= 0 && orient2d(b, c, p) >= 0 && orient2d(c, a, p) >= 0 {
                *hint = i;
                return Some(i);
            }
        }
        None
    }

    /// Barycentric coordinates of `p` in triangle `t`, clamped to [0, 1]
    /// and renormalized so they sum to 1 exactly up to rounding.
    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangle_points(t);
        let total = cross(a, b, c);
        let l0 = (cross(p, b, c) / total).max(0.0);
        let l1 = (cross(a, p, c) / total).max(0.0);
        let l2 = (cross(a, b, p) / total).max(0.0);
        let sum = l0 + l1 + l2;
        [l0 / sum, l1 / sum, l2 / sum]
    }

    /// Sparse interpolation row at `p`: up to three (vertex, weight)
    /// pairs, empty when no triangle contains `p`.
    pub fn linear_interp_weights(&self, p: Point, hint: &mut usize) -> Vec<(u32, f64)> {
        match self.locate(p, hint) {
            None => Vec::new(),
            Some(t) => {
                let l = self.barycentric(t, p);
                let v = self.tris[t];
                (0..3)
                    .filter(|&i| l[i] != 0.0)
                    .map(|i| (v[i], l[i]))
                    .collect()
            }
        }
    }

    /// Full invariant check: positive orientation, non-degenerate area,
    /// symmetric adjacency, and the empty-circumcircle property across
    /// every non-constrained shared edge.
    pub fn validate(&self) -> Result<(), TransferError> {
        let area_floor = MIN_AREA_REL * self.h_bar * self.h_bar;
        for t in 0..self.tris.len() {
            let [a, b, c] = self.triangle_points(t);
            if orient2d(a, b, c) <= 0 {
                return Err(TransferError::InvalidTriangulation(format!(
                    "triangle {t} is not counterclockwise"
                )));
            }
            if 0.5 * cross(a, b, c) <= area_floor {
                return Err(TransferError::InvalidTriangulation(format!(
                    "triangle {t} is degenerate (area {})",
                    0.5 * cross(a, b, c)
                )));
            }
            for slot in 0..3 {
                let n = self.adj[t][slot];
                if n == NO_TRI {
                    continue;
                }
                let n = n as usize;
                if !self.adj[n].contains(&(t as i32)) {
                    return Err(TransferError::InvalidTriangulation(format!(
                        "adjacency between {t} and {n} is one-sided"
                    )));
                }
                if n < t || self.constrained[t][slot] {
                    continue;
                }
                let v = self.tris[t];
                let opp = self.opposite_vertex(n, v[(slot + 2) % 3], v[(slot + 1) % 3]);
                let d = self.points[opp as usize];
                if !circumcircle_respects(a, b, c, d) {
                    return Err(TransferError::InvalidTriangulation(format!(
                        "edge between triangles {t} and {n} violates the circle test"
                    )));
                }
            }
        }
        Ok(())
    }

    fn opposite_vertex(&self, t: usize, ea: u32, eb: u32) -> u32 {
        *self.tris[t]
            .iter()
            .find(|&&v| v != ea && v != eb)
            .expect("shared edge must leave one vertex over")
    }

    pub fn constrained_edge_count(&self) -> usize {
        let mut count = 0;
        for t in 0..self.tris.len() {
            for slot in 0..3 {
                if self.constrained[t][slot] {
                    let n = self.adj[t][slot];
                    if n == NO_TRI || (n as usize) < t {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    /// Sum of triangle areas: the area of the triangulated region.
    pub fn covered_area(&self) -> f64 {
        (0..self.tris.len())
            .map(|t| {
                let [a, b, c] = self.triangle_points(t);
                0.5 * cross(a, b, c)
            })
            .sum()
    }

    /// Writes `tri <N_v> <N_tri>`, vertex lines, then 1-based triangle
    /// lines; the layout doubles as a loadable mesh file.
    pub fn dump(&self, path: &Path) -> Result<(), TransferError> {
        let mut out = String::new();
        writeln!(out, "tri {} {}", self.points.len(), self.tris.len()).unwrap();
        for p in &self.points {
            writeln!(out, "{:.17e} {:.17e}", p.x, p.y).unwrap();
        }
        for v in &self.tris {
            writeln!(out, "{} {} {}", v[0] + 1, v[1] + 1, v[2] + 1).unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Empty-circumcircle test with relative slack: `d` may not lie inside
/// the circle through `a b c` by more than the tolerance.
fn circumcircle_respects(a: Point, b: Point, c: Point, d: Point) -> bool {
    let adx = a.x - d.x;
    let ady = a.y - d.y;
    let bdx = b.x - d.x;
    let bdy = b.y - d.y;
    let cdx = c.x - d.x;
    let cdy = c.y - d.y;
    let ad2 = adx * adx + ady * ady;
    let bd2 = bdx * bdx + bdy * bdy;
    let cd2 = cdx * cdx + cdy * cdy;
    let det = ad2 * (bdx * cdy - cdx * bdy) + bd2 * (cdx * ady - adx * cdy)
        + cd2 * (adx * bdy - bdx * ady);
    let scale = ad2 * (bdx.abs() * cdy.abs() + cdx.abs() * bdy.abs())
        + bd2 * (cdx.abs() * ady.abs() + adx.abs() * cdy.abs())
        + cd2 * (adx.abs() * bdy.abs() + bdx.abs() * ady.abs());
    det <= CIRCUMCIRCLE_TOL_REL * scale
}

/// Builds the constrained Delaunay triangulation of `points` with the
/// given segments (index pairs) forced in as edges. Exterior triangles
/// are removed by centroid membership in `domain`.
pub fn triangulate(
    points: &[Point],
    h_bar: f64,
    segments: &[(u32, u32)],
    domain: &DomainSpec,
) -> Result<Triangulation, TransferError> {
    if points.len() < 3 {
        return Err(TransferError::DegenerateInput);
    }
    if all_collinear(points) {
        return Err(TransferError::DegenerateInput);
    }
    let tol = SEGMENT_HIT_TOL_REL * h_bar;
    for &(a, b) in segments {
        let pa = points[a as usize];
        let pb = points[b as usize];
        for (i, &p) in points.iter().enumerate() {
            if i == a as usize || i == b as usize {
                continue;
            }
            if point_segment_distance(p, pa, pb) < tol && p.dist(pa) > tol && p.dist(pb) > tol {
                return Err(TransferError::ConstraintUnsatisfiable {
                    a: a as usize,
                    b: b as usize,
                    point: i,
                });
            }
        }
    }

    let mut builder = Builder::new(points);
    let mut order: Vec<u32> = (0..points.len() as u32).collect();
    order.sort_by(|&i, &j| {
        let p = points[i as usize];
        let q = points[j as usize];
        p.x.partial_cmp(&q.x)
            .unwrap()
            .then(p.y.partial_cmp(&q.y).unwrap())
            .then(i.cmp(&j))
    });
    let mut hint = 0usize;
    for &pi in &order {
        hint = builder.insert(pi, hint);
    }

    let mut constrained: HashSet<(u32, u32)> = HashSet::new();
    for &(a, b) in segments {
        builder.force_edge(a, b)?;
        constrained.insert(norm_edge(a, b));
    }
    builder.restore_delaunay(&constrained)?;
    builder.finalize(points, h_bar, domain, &constrained)
}

fn norm_edge(a: u32, b: u32) -> (u32, u32) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn all_collinear(points: &[Point]) -> bool {
    let p0 = points[0];
    let Some(&p1) = points.iter().find(|&&p| p != p0) else {
        return true;
    };
    points.iter().all(|&p| orient2d(p0, p1, p) == 0)
}

struct BTri {
    v: [u32; 3],
    adj: [i32; 3],
    alive: bool,
}

struct Builder {
    pts: Vec<Point>,
    n_real: usize,
    tri: Vec<BTri>,
    vert_tri: Vec<i32>,
    stamp: Vec<u32>,
    epoch: u32,
}

impl Builder {
    fn new(points: &[Point]) -> Builder {
        let mut max_abs: f64 = 0.0;
        for p in points {
            max_abs = max_abs.max(p.x.abs()).max(p.y.abs());
        }
        let s = 16.0 * (max_abs + 1.0);
        let n = points.len();
        let mut pts = points.to_vec();
        pts.push(Point::new(-s, -s));
        pts.push(Point::new(s, -s));
        pts.push(Point::new(s, s));
        pts.push(Point::new(-s, s));
        let c = n as u32;
        let tri = vec![
            BTri {
                v: [c, c + 1, c + 2],
                adj: [NO_TRI, 1, NO_TRI],
                alive: true,
            },
            BTri {
                v: [c, c + 2, c + 3],
                adj: [NO_TRI, NO_TRI, 0],
                alive: true,
            },
        ];
        let mut vert_tri = vec![NO_TRI; n + 4];
        vert_tri[n] = 0;
        vert_tri[n + 1] = 0;
        vert_tri[n + 2] = 0;
        vert_tri[n + 3] = 1;
        Builder {
            pts,
            n_real: n,
            tri,
            vert_tri,
            stamp: vec![0, 0],
            epoch: 0,
        }
    }

    fn point(&self, v: u32) -> Point {
        self.pts[v as usize]
    }

    fn locate(&self, p: Point, hint: usize) -> usize {
        let mut t = hint;
        if !self.tri[t].alive {
            t = self.tri.iter().position(|tr| tr.alive).expect("no tris");
        }
        let cap = 4 * self.tri.len() + 16;
        for _ in 0..cap {
            let v = self.tri[t].v;
            let mut advanced = false;
            for i in 0..3 {
                let a = self.point(v[(i + 1) % 3]);
                let b = self.point(v[(i + 2) % 3]);
                if orient2d(a, b, p) < 0 {
                    let n = self.tri[t].adj[i];
                    if n == NO_TRI {
                        advanced = false;
                        break;
                    }
                    t = n as usize;
                    advanced = true;
                    break;
                }
            }
            if !advanced {
                if self.tri_contains(t, p) {
                    return t;
                }
                break;
            }
        }
        for i in 0..self.tri.len() {
            if self.tri[i].alive && self.tri_contains(i, p) {
                return i;
            }
        }
        unreachable!("insertion point escaped the super square")
    }

    fn tri_contains(&self, t: usize, p: Point) -> bool {
        let v = self.tri[t].v;
        orient2d(self.point(v[0]), self.point(v[1]), p) >= 0
            && orient2d(self.point(v[1]), self.point(v[2]), p) >= 0
            && orient2d(self.point(v[2]), self.point(v[0]), p) >= 0
    }

    fn in_circumcircle(&self, t: usize, p: Point) -> bool {
        let v = self.tri[t].v;
        incircle(self.point(v[0]), self.point(v[1]), self.point(v[2]), p) > 0
    }

    /// Bowyer-Watson insertion; returns one of the new triangles as the
    /// walk hint for the next insertion.
    fn insert(&mut self, pi: u32, hint: usize) -> usize {
        let p = self.point(pi);
        let t0 = self.locate(p, hint);
        self.epoch += 1;
        let epoch = self.epoch;
        self.stamp.resize(self.tri.len(), 0);
        let mut cavity = vec![t0];
        self.stamp[t0] = epoch;
        let mut qi = 0;
        while qi < cavity.len() {
            let t = cavity[qi];
            qi += 1;
            for i in 0..3 {
                let n = self.tri[t].adj[i];
                if n != NO_TRI && self.stamp[n as usize] != epoch && self.in_circumcircle(n as usize, p)
                {
                    self.stamp[n as usize] = epoch;
                    cavity.push(n as usize);
                }
            }
        }
        // Directed rim edges of the cavity, with the surviving outer
        // neighbor across each.
        let mut rim: Vec<(u32, u32, i32)> = Vec::with_capacity(cavity.len() + 2);
        for &t in &cavity {
            for i in 0..3 {
                let n = self.tri[t].adj[i];
                if n == NO_TRI || self.stamp[n as usize] != epoch {
                    let v = self.tri[t].v;
                    rim.push((v[(i + 1) % 3], v[(i + 2) % 3], n));
                }
            }
        }
        for &t in &cavity {
            self.tri[t].alive = false;
        }
        let base = self.tri.len();
        let mut start_of: HashMap<u32, usize> = HashMap::with_capacity(rim.len());
        let mut end_of: HashMap<u32, usize> = HashMap::with_capacity(rim.len());
        for (k, &(a, b, _)) in rim.iter().enumerate() {
            start_of.insert(a, base + k);
            end_of.insert(b, base + k);
        }
        for &(a, b, outer) in &rim {
            let idx = self.tri.len();
            self.tri.push(BTri {
                v: [a, b, pi],
                adj: [
                    start_of[&b] as i32, // across (b, pi)
                    end_of[&a] as i32,   // across (pi, a)
                    outer,
                ],
                alive: true,
            });
            if outer != NO_TRI {
                let o = outer as usize;
                for k in 0..3 {
                    let ov = self.tri[o].v;
                    if ov[(k + 1) % 3] == b && ov[(k + 2) % 3] == a {
                        self.tri[o].adj[k] = idx as i32;
                    }
                }
            }
            self.vert_tri[a as usize] = idx as i32;
            self.vert_tri[b as usize] = idx as i32;
            self.vert_tri[pi as usize] = idx as i32;
        }
        self.stamp.resize(self.tri.len(), 0);
        self.tri.len() - 1
    }

    /// Finds the triangle holding the directed edge (a, b); returns
    /// (triangle, slot of the opposite vertex).
    fn find_edge(&self, a: u32, b: u32) -> Option<(usize, usize)> {
        let mut found = None;
        self.orbit(a, |builder, t| {
            let v = builder.tri[t].v;
            for i in 0..3 {
                if v[(i + 1) % 3] == a && v[(i + 2) % 3] == b {
                    found = Some((t, i));
                    return false;
                }
                if v[(i + 1) % 3] == b && v[(i + 2) % 3] == a {
                    // directed (a, b) lives in the neighbor, if any
                    let n = builder.tri[t].adj[i];
                    if n != NO_TRI {
                        let nv = builder.tri[n as usize].v;
                        for k in 0..3 {
                            if nv[(k + 1) % 3] == a && nv[(k + 2) % 3] == b {
                                found = Some((n as usize, k));
                                return false;
                            }
                        }
                    }
                }
            }
            true
        });
        found
    }

    /// Visits each alive triangle incident to `a`; the callback returns
    /// false to stop early.
    fn orbit<F: FnMut(&Builder, usize) -> bool>(&self, a: u32, mut visit: F) {
        let start = self.vert_tri[a as usize];
        debug_assert!(start != NO_TRI);
        let start = start as usize;
        debug_assert!(self.tri[start].alive);
        let mut t = start;
        // counterclockwise sweep
        loop {
            if !visit(self, t) {
                return;
            }
            let ia = self.tri[t].v.iter().position(|&v| v == a).expect("orbit");
            let next = self.tri[t].adj[(ia + 2) % 3];
            if next == NO_TRI {
                break;
            }
            t = next as usize;
            if t == start {
                return;
            }
        }
        // hit a border: sweep clockwise from the start as well
        let mut t = start;
        loop {
            let ia = self.tri[t].v.iter().position(|&v| v == a).expect("orbit");
            let next = self.tri[t].adj[(ia + 1) % 3];
            if next == NO_TRI {
                return;
            }
            t = next as usize;
            if t == start || !visit(self, t) {
                return;
            }
        }
    }

    /// Diagonal flip of the edge opposite `slot` in triangle `t`.
    fn flip(&mut self, t: usize, slot: usize) {
        let u_idx = self.tri[t].adj[slot];
        debug_assert!(u_idx != NO_TRI, "cannot flip a border edge");
        let u_idx = u_idx as usize;
        let p = self.tri[t].v[slot];
        let q = self.tri[t].v[(slot + 1) % 3];
        let r = self.tri[t].v[(slot + 2) % 3];
        let ju = (0..3)
            .find(|&j| {
                let v = self.tri[u_idx].v;
                v[(j + 1) % 3] == r && v[(j + 2) % 3] == q
            })
            .expect("adjacency out of sync");
        let s = self.tri[u_idx].v[ju];

        let n1 = self.tri[t].adj[(slot + 2) % 3]; // across (p, q)
        let n2 = self.tri[t].adj[(slot + 1) % 3]; // across (r, p)
        let n3 = self.tri[u_idx].adj[(ju + 1) % 3]; // across (q, s)
        let n4 = self.tri[u_idx].adj[(ju + 2) % 3]; // across (s, r)

        debug_assert!(orient2d(self.point(p), self.point(q), self.point(s)) > 0);
        debug_assert!(orient2d(self.point(p), self.point(s), self.point(r)) > 0);

        self.tri[t].v = [p, q, s];
        self.tri[t].adj = [n3, u_idx as i32, n1];
        self.tri[u_idx].v = [p, s, r];
        self.tri[u_idx].adj = [n4, n2, t as i32];

        self.redirect(n3, u_idx, t);
        self.redirect(n2, t, u_idx);

        self.vert_tri[p as usize] = t as i32;
        self.vert_tri[q as usize] = t as i32;
        self.vert_tri[s as usize] = u_idx as i32;
        self.vert_tri[r as usize] = u_idx as i32;
    }

    fn redirect(&mut self, n: i32, from: usize, to: usize) {
        if n == NO_TRI {
            return;
        }
        for k in 0..3 {
            if self.tri[n as usize].adj[k] == from as i32 {
                self.tri[n as usize].adj[k] = to as i32;
            }
        }
    }

    /// Forces segment (a, b) to be a triangulation edge by flipping the
    /// edges that cross it.
    fn force_edge(&mut self, a: u32, b: u32) -> Result<(), TransferError> {
        if self.find_edge(a, b).is_some() {
            return Ok(());
        }
        let pa = self.point(a);
        let pb = self.point(b);
        let fail = || TransferError::ConstraintUnsatisfiable {
            a: a as usize,
            b: b as usize,
            point: usize::MAX,
        };

        // March from a to b collecting the crossed edges in order.
        let mut entry = None;
        self.orbit(a, |builder, t| {
            let v = builder.tri[t].v;
            let ia = v.iter().position(|&x| x == a).expect("march");
            let nxt = v[(ia + 1) % 3];
            let prv = v[(ia + 2) % 3];
            let o_n = orient2d(pa, pb, builder.point(nxt));
            let o_p = orient2d(pa, pb, builder.point(prv));
            if o_n < 0 && o_p > 0 {
                entry = Some((t, ia, prv, nxt)); // (left, right) = (prv, nxt)
                return false;
            }
            true
        });
        let Some((t, ia, mut left, mut right)) = entry else {
            return Err(fail());
        };
        let mut crossed: VecDeque<(u32, u32)> = VecDeque::new();
        crossed.push_back(norm_edge(left, right));
        let mut cur = self.tri[t].adj[ia];
        loop {
            if cur == NO_TRI {
                return Err(fail());
            }
            let v = self.tri[cur as usize].v;
            let w = *v
                .iter()
                .find(|&&x| x != left && x != right)
                .expect("march third vertex");
            if w == b {
                break;
            }
            let o = orient2d(pa, pb, self.point(w));
            if o == 0 {
                return Err(fail()); // vertex exactly on the segment line
            }
            if o > 0 {
                left = w;
            } else {
                right = w;
            }
            crossed.push_back(norm_edge(left, right));
            let slot = v.iter().position(|&x| x != left && x != right).expect("slot");
            cur = self.tri[cur as usize].adj[slot];
        }

        // Flip crossed edges until the corridor contains (a, b).
        let mut guard = 0usize;
        let cap = 100 * (crossed.len() + 10);
        while let Some((u, v)) = crossed.pop_front() {
            guard += 1;
            if guard > cap {
                return Err(fail());
            }
            let Some((t, slot)) = self.find_edge(u, v) else {
                continue; // a previous flip already removed this edge
            };
            let p = self.tri[t].v[slot];
            let u2 = self.tri[t].adj[slot];
            if u2 == NO_TRI {
                return Err(fail());
            }
            let ju = (0..3)
                .find(|&j| {
                    let w = self.tri[u2 as usize].v;
                    w[(j + 1) % 3] == v && w[(j + 2) % 3] == u
                })
                .expect("corridor adjacency");
            let s = self.tri[u2 as usize].v[ju];
            let op_u = orient2d(self.point(p), self.point(s), self.point(u));
            let op_v = orient2d(self.point(p), self.point(s), self.point(v));
            if op_u == 0 || op_v == 0 || op_u.signum() == op_v.signum() {
                crossed.push_back((u, v)); // not flippable yet
                continue;
            }
            self.flip(t, slot);
            // The new diagonal is (p, s); requeue it if it still crosses.
            if p != a && p != b && s != a && s != b {
                let crosses = orient2d(pa, pb, self.point(p)).signum()
                    * orient2d(pa, pb, self.point(s)).signum()
                    < 0
                    && orient2d(self.point(p), self.point(s), pa).signum()
                        * orient2d(self.point(p), self.point(s), pb).signum()
                        < 0;
                if crosses {
                    crossed.push_back(norm_edge(p, s));
                }
            }
        }
        if self.find_edge(a, b).is_none() {
            return Err(fail());
        }
        Ok(())
    }

    /// Flip pass restoring the empty-circumcircle property on every
    /// non-constrained edge.
    fn restore_delaunay(&mut self, constrained: &HashSet<(u32, u32)>) -> Result<(), TransferError> {
        for _ in 0..500 {
            let mut flips = 0usize;
            for t in 0..self.tri.len() {
                if !self.tri[t].alive {
                    continue;
                }
                for slot in 0..3 {
                    let n = self.tri[t].adj[slot];
                    if n == NO_TRI {
                        continue;
                    }
                    let v = self.tri[t].v;
                    let q = v[(slot + 1) % 3];
                    let r = v[(slot + 2) % 3];
                    if constrained.contains(&norm_edge(q, r)) {
                        continue;
                    }
                    let n = n as usize;
                    let s = *self.tri[n]
                        .v
                        .iter()
                        .find(|&&x| x != q && x != r)
                        .expect("neighbor vertex");
                    if incircle(
                        self.point(v[0]),
                        self.point(v[1]),
                        self.point(v[2]),
                        self.point(s),
                    ) > 0
                    {
                        self.flip(t, slot);
                        flips += 1;
                    }
                }
            }
            if flips == 0 {
                return Ok(());
            }
        }
        Err(TransferError::InvalidTriangulation(
            "flip pass failed to settle".into(),
        ))
    }

    fn finalize(
        self,
        points: &[Point],
        h_bar: f64,
        domain: &DomainSpec,
        constrained: &HashSet<(u32, u32)>,
    ) -> Result<Triangulation, TransferError> {
        let n_real = self.n_real as u32;
        let mut keep: Vec<usize> = Vec::new();
        for (i, t) in self.tri.iter().enumerate() {
            if !t.alive || t.v.iter().any(|&v| v >= n_real) {
                continue;
            }
            let a = self.point(t.v[0]);
            let b = self.point(t.v[1]);
            let c = self.point(t.v[2]);
            let centroid = Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0);
            if domain.contains(centroid) {
                keep.push(i);
            }
        }
        let mut tris = Vec::with_capacity(keep.len());
        let mut flags = Vec::with_capacity(keep.len());
        let mut edge_map: HashMap<(u32, u32), (usize, usize)> = HashMap::new();
        for (new_idx, &old) in keep.iter().enumerate() {
            let v = self.tri[old].v;
            tris.push(v);
            let mut f = [false; 3];
            for slot in 0..3 {
                let e = norm_edge(v[(slot + 1) % 3], v[(slot + 2) % 3]);
                f[slot] = constrained.contains(&e);
                edge_map.insert((v[(slot + 1) % 3], v[(slot + 2) % 3]), (new_idx, slot));
            }
            flags.push(f);
        }
        let mut adj = vec![[NO_TRI; 3]; tris.len()];
        for (idx, v) in tris.iter().enumerate() {
            for slot in 0..3 {
                let a = v[(slot + 1) % 3];
                let b = v[(slot + 2) % 3];
                if let Some(&(other, _)) = edge_map.get(&(b, a)) {
                    adj[idx][slot] = other as i32;
                }
            }
        }
        // Every forced segment must survive exterior removal.
        let mut present: HashSet<(u32, u32)> = HashSet::with_capacity(3 * tris.len());
        for v in &tris {
            for slot in 0..3 {
                present.insert(norm_edge(v[(slot + 1) % 3], v[(slot + 2) % 3]));
            }
        }
        for e in constrained {
            if !present.contains(e) {
                return Err(TransferError::InvalidTriangulation(format!(
                    "constrained edge ({}, {}) missing from the final triangulation",
                    e.0, e.1
                )));
            }
        }
        Ok(Triangulation {
            points: points.to_vec(),
            h_bar,
            tris,
            adj,
            constrained: flags,
        })
    }
}
