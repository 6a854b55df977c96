//! Billiard tables: piecewise boundaries made of segments and dispersing
//! circular arcs, with a global arc-length coordinate `r`.
//!
//! Every component is traversed with the table interior on its left, so the
//! inward normal is the left perpendicular of the unit tangent. Arcs are
//! always convex toward the interior, which forces a clockwise traversal of
//! their circle. Global `r` offsets follow authoring order; on a torus the
//! four transparent walls of the fundamental rectangle are appended after the
//! material components (bottom, right, top, left).

mod description;

use std::f64::consts::{PI, TAU};

use thiserror::Error;

pub use description::{AmbientKind, ComponentDescription, TableDescription};

use crate::vec2::Vec2;

/// Endpoints closer than this are the same point.
pub const ENDPOINT_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("table description could not be parsed: {0}")]
    Parse(String),
    #[error("components {0} and {1} overlap away from a shared endpoint")]
    OverlappingComponents(usize, usize),
    #[error("arc component {0} is focusing (its center lies on the table side)")]
    NonConvexArc(usize),
    #[error("boundary chain is open at the end of component {0}")]
    OpenBoundaryChain(usize),
    #[error("invalid component {0}: {1}")]
    InvalidComponent(usize, String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("r = {0} is a corner; two normals exist")]
    CornerPoint(f64),
    #[error("r = {0} lies on a transparent wall")]
    TransparentWall(f64),
    #[error("r = {0} is outside the boundary parameter range")]
    OutOfRange(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Segment {
        a: Vec2,
        b: Vec2,
    },
    /// Clockwise arc: the point at local parameter `s` sits at angle
    /// `start_angle - s / radius`.
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentKind {
    Segment,
    Arc,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryComponent {
    pub id: usize,
    pub shape: Shape,
    /// Start of this component's range in the global `r` coordinate.
    pub offset: f64,
    pub length: f64,
    pub material: bool,
    /// For transparent walls, the id of the opposite (identified) wall.
    pub paired_wall: Option<usize>,
}

impl BoundaryComponent {
    fn new(id: usize, shape: Shape, material: bool) -> Self {
        let length = match shape {
            Shape::Segment { a, b } => a.dist(b),
            Shape::Arc { radius, sweep, .. } => radius * sweep,
        };
        Self {
            id,
            shape,
            offset: 0.0,
            length,
            material,
            paired_wall: None,
        }
    }

    pub fn kind(&self) -> ComponentKind {
        match self.shape {
            Shape::Segment { .. } => ComponentKind::Segment,
            Shape::Arc { .. } => ComponentKind::Arc,
        }
    }

    /// Curvature of the boundary; positive on dispersing arcs.
    pub fn curvature(&self) -> f64 {
        match self.shape {
            Shape::Segment { .. } => 0.0,
            Shape::Arc { radius, .. } => 1.0 / radius,
        }
    }

    pub fn is_full_circle(&self) -> bool {
        matches!(self.shape, Shape::Arc { sweep, .. } if (sweep - TAU).abs() < 1e-12)
    }

    pub fn point_local(&self, s: f64) -> Vec2 {
        match self.shape {
            Shape::Segment { a, b } => a + (b - a) * (s / self.length),
            Shape::Arc {
                center,
                radius,
                start_angle,
                ..
            } => center + Vec2::from_angle(start_angle - s / radius) * radius,
        }
    }

    /// Unit tangent in the direction of increasing `s`.
    pub fn tangent_local(&self, s: f64) -> Vec2 {
        match self.shape {
            Shape::Segment { a, b } => (b - a) / self.length,
            Shape::Arc {
                radius,
                start_angle,
                ..
            } => {
                let th = start_angle - s / radius;
                Vec2::new(th.sin(), -th.cos())
            }
        }
    }

    /// Unit normal pointing into the table.
    pub fn normal_local(&self, s: f64) -> Vec2 {
        match self.shape {
            Shape::Segment { .. } => self.tangent_local(s).perp(),
            Shape::Arc {
                radius,
                start_angle,
                ..
            } => Vec2::from_angle(start_angle - s / radius),
        }
    }

    pub fn start(&self) -> Vec2 {
        self.point_local(0.0)
    }

    pub fn end(&self) -> Vec2 {
        self.point_local(self.length)
    }

    /// Local parameter of the point of this component nearest to `p`.
    pub fn project(&self, p: Vec2) -> f64 {
        match self.shape {
            Shape::Segment { a, b } => {
                let t = (b - a) / self.length;
                (p - a).dot(t).clamp(0.0, self.length)
            }
            Shape::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let ang = (p - center).angle();
                let delta = (start_angle - ang).rem_euclid(TAU);
                if delta <= sweep {
                    delta * radius
                } else {
                    // outside the span: snap to the nearer endpoint
                    let d_end = delta - sweep;
                    let d_start = TAU - delta;
                    if d_end < d_start {
                        self.length
                    } else {
                        0.0
                    }
                }
            }
        }
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        match self.shape {
            Shape::Segment { a, b } => (
                Vec2::new(a.x.min(b.x), a.y.min(b.y)),
                Vec2::new(a.x.max(b.x), a.y.max(b.y)),
            ),
            Shape::Arc { center, radius, .. } => {
                let r = Vec2::new(radius, radius);
                (center - r, center + r)
            }
        }
    }

    pub fn extent(&self) -> f64 {
        let (lo, hi) = self.bounds();
        lo.dist(hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ambient {
    Plane,
    Torus { width: f64, height: f64 },
}

/// A corner of the material boundary: the shared endpoint where component
/// `incoming` ends and component `outgoing` starts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Corner {
    pub point: Vec2,
    pub incoming: usize,
    pub outgoing: usize,
}

impl Corner {
    /// The two inward normals at the corner (incoming side first).
    pub fn normals(&self, table: &Table) -> [Vec2; 2] {
        let a = &table.components[self.incoming];
        let b = &table.components[self.outgoing];
        [a.normal_local(a.length), b.normal_local(0.0)]
    }

    /// Angular sector `(start, width)` of directions pointing into the table.
    pub fn sector(&self, table: &Table) -> (f64, f64) {
        let a = &table.components[self.incoming];
        let b = &table.components[self.outgoing];
        let from = b.tangent_local(0.0);
        let to = -a.tangent_local(a.length);
        let width = from.angle_to(to).rem_euclid(TAU);
        (from.angle(), width)
    }
}

/// An immutable, validated billiard table.
#[derive(Clone, Debug)]
pub struct Table {
    pub components: Vec<BoundaryComponent>,
    pub corners: Vec<Corner>,
    pub ambient: Ambient,
    pub material_length: f64,
    pub total_length: f64,
    description: TableDescription,
}

impl Table {
    pub fn description(&self) -> &TableDescription {
        &self.description
    }

    pub fn component(&self, id: usize) -> &BoundaryComponent {
        &self.components[id]
    }

    pub fn material_components(&self) -> impl Iterator<Item = &BoundaryComponent> {
        self.components.iter().filter(|c| c.material)
    }

    pub fn transparent_walls(&self) -> impl Iterator<Item = &BoundaryComponent> {
        self.components.iter().filter(|c| !c.material)
    }

    pub fn has_curved_sides(&self) -> bool {
        self.material_components()
            .any(|c| c.kind() == ComponentKind::Arc)
    }

    pub fn is_torus(&self) -> bool {
        matches!(self.ambient, Ambient::Torus { .. })
    }

    /// Maps a global `r` to `(component id, local s)`.
    pub fn locate(&self, r: f64) -> Result<(usize, f64), GeometryError> {
        if !(0.0..self.total_length).contains(&r) {
            return Err(GeometryError::OutOfRange(r));
        }
        let idx = self
            .components
            .partition_point(|c| c.offset <= r)
            .saturating_sub(1);
        let c = &self.components[idx];
        Ok((idx, (r - c.offset).min(c.length)))
    }

    pub fn point_at(&self, r: f64) -> Result<Vec2, GeometryError> {
        let (id, s) = self.locate(r)?;
        Ok(self.components[id].point_local(s))
    }

    fn corner_check(&self, r: f64, id: usize, s: f64) -> Result<(), GeometryError> {
        let c = &self.components[id];
        if !c.material || c.is_full_circle() {
            return Ok(());
        }
        if s < ENDPOINT_TOL.max(1e-12 * c.length) || c.length - s < ENDPOINT_TOL.max(1e-12 * c.length)
        {
            return Err(GeometryError::CornerPoint(r));
        }
        Ok(())
    }

    /// Inward unit normal at a material, non-corner boundary point.
    pub fn normal_at(&self, r: f64) -> Result<Vec2, GeometryError> {
        let (id, s) = self.locate(r)?;
        if !self.components[id].material {
            return Err(GeometryError::TransparentWall(r));
        }
        self.corner_check(r, id, s)?;
        Ok(self.components[id].normal_local(s))
    }

    pub fn curvature_at(&self, r: f64) -> Result<f64, GeometryError> {
        let (id, s) = self.locate(r)?;
        if !self.components[id].material {
            return Err(GeometryError::TransparentWall(r));
        }
        self.corner_check(r, id, s)?;
        Ok(self.components[id].curvature())
    }

    /// Global `r` of the boundary point nearest to `p` (material and
    /// transparent components alike).
    pub fn nearest_r(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for c in &self.components {
            let s = c.project(p);
            let d = c.point_local(s).dist(p);
            if d < best.0 {
                best = (d, c.offset + s);
            }
        }
        best.1
    }

    /// Whether `p` lies in the open table interior.
    pub fn contains(&self, p: Vec2) -> bool {
        let dir = Vec2::from_angle(0.618_033_988_749_894_9);
        let crossings: usize = self
            .material_components()
            .map(|c| ray_crossings(c, p, dir))
            .sum();
        match self.ambient {
            Ambient::Plane => crossings % 2 == 1,
            Ambient::Torus { width, height } => {
                p.x > 0.0 && p.x < width && p.y > 0.0 && p.y < height && crossings % 2 == 0
            }
        }
    }

    /// Smallest material feature: shortest component or smallest radius.
    pub fn min_feature(&self) -> f64 {
        self.material_components()
            .map(|c| match c.shape {
                Shape::Segment { .. } => c.length,
                Shape::Arc { radius, .. } => radius.min(c.length),
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Corner at which component `id` ends (`at_end`) or starts.
    pub fn corner_of(&self, id: usize, at_end: bool) -> Option<usize> {
        self.corners.iter().position(|k| {
            if at_end {
                k.incoming == id
            } else {
                k.outgoing == id
            }
        })
    }

    /// Builds and validates a table.
    pub fn build(desc: &TableDescription) -> Result<Table, GeometryError> {
        build_table(desc)
    }
}

/// Number of proper crossings of the half-line `p + t dir` with a component.
fn ray_crossings(c: &BoundaryComponent, p: Vec2, dir: Vec2) -> usize {
    match c.shape {
        Shape::Segment { a, b } => {
            let e = b - a;
            let den = dir.cross(e);
            if den.abs() < 1e-300 {
                return 0;
            }
            let t = (a - p).cross(e) / den;
            let u = (a - p).cross(dir) / den;
            usize::from(t > 0.0 && (0.0..1.0).contains(&u))
        }
        Shape::Arc {
            center,
            radius,
            start_angle,
            sweep,
        } => {
            let oc = p - center;
            let b = oc.dot(dir);
            let cc = oc.norm_sq() - radius * radius;
            let disc = b * b - cc;
            if disc <= 0.0 {
                return 0;
            }
            let sq = disc.sqrt();
            [-b - sq, -b + sq]
                .into_iter()
                .filter(|&t| t > 0.0)
                .filter(|&t| {
                    let ang = (oc + dir * t).angle();
                    let delta = (start_angle - ang).rem_euclid(TAU);
                    delta < sweep || (sweep - TAU).abs() < 1e-12
                })
                .count()
        }
    }
}

fn shape_from_description(
    id: usize,
    d: &ComponentDescription,
) -> Result<Shape, GeometryError> {
    match *d {
        ComponentDescription::Segment { a, b } => {
            let (a, b) = (Vec2::from(a), Vec2::from(b));
            if a.dist(b) <= ENDPOINT_TOL || !(a.x.is_finite() && a.y.is_finite() && b.x.is_finite() && b.y.is_finite()) {
                return Err(GeometryError::InvalidComponent(id, "degenerate segment".into()));
            }
            Ok(Shape::Segment { a, b })
        }
        ComponentDescription::Arc {
            center,
            radius,
            from_angle,
            to_angle,
            convex_inward,
        } => {
            if !(radius > 0.0 && radius.is_finite()) {
                return Err(GeometryError::InvalidComponent(id, "radius must be positive".into()));
            }
            if !convex_inward {
                return Err(GeometryError::NonConvexArc(id));
            }
            let (lo, hi) = (from_angle.min(to_angle), from_angle.max(to_angle));
            let mut sweep = hi - lo;
            if sweep <= 0.0 || sweep > TAU + 1e-12 {
                return Err(GeometryError::InvalidComponent(
                    id,
                    "arc angular span must lie in (0, 2π]".into(),
                ));
            }
            if (sweep - TAU).abs() < 1e-12 {
                sweep = TAU;
            }
            Ok(Shape::Arc {
                center: Vec2::from(center),
                radius,
                start_angle: hi,
                sweep,
            })
        }
    }
}

fn close(a: Vec2, b: Vec2) -> bool {
    a.dist(b) <= ENDPOINT_TOL * (1.0 + a.norm().max(b.norm()))
}

/// Signed area enclosed by a closed chain (arcs sampled densely).
fn chain_area(comps: &[BoundaryComponent]) -> f64 {
    let mut pts = Vec::new();
    for c in comps {
        let n = match c.shape {
            Shape::Segment { .. } => 1,
            Shape::Arc { .. } => 256,
        };
        for k in 0..n {
            pts.push(c.point_local(c.length * k as f64 / n as f64));
        }
    }
    let m = pts.len();
    (0..m).map(|i| pts[i].cross(pts[(i + 1) % m])).sum::<f64>() * 0.5
}

/// Interior intersection points of two components (shared endpoints excluded).
fn components_overlap(a: &BoundaryComponent, b: &BoundaryComponent) -> bool {
    let endpoints = [a.start(), a.end(), b.start(), b.end()];
    let near_endpoint = |p: Vec2| endpoints.iter().any(|&e| p.dist(e) < 1e-9);
    let on_arc = |c: &BoundaryComponent, p: Vec2| -> bool {
        match c.shape {
            Shape::Arc {
                center,
                start_angle,
                sweep,
                ..
            } => {
                let delta = (start_angle - (p - center).angle()).rem_euclid(TAU);
                delta <= sweep + 1e-12
            }
            _ => unreachable!(),
        }
    };
    match (a.shape, b.shape) {
        (Shape::Segment { a: p0, b: p1 }, Shape::Segment { a: q0, b: q1 }) => {
            let d1 = p1 - p0;
            let d2 = q1 - q0;
            let den = d1.cross(d2);
            if den.abs() < 1e-14 {
                // parallel: overlap only if collinear with shared interior
                if (q0 - p0).cross(d1).abs() > 1e-12 {
                    return false;
                }
                let l = d1.norm_sq();
                let t0 = (q0 - p0).dot(d1) / l;
                let t1 = (q1 - p0).dot(d1) / l;
                let (lo, hi) = (t0.min(t1), t0.max(t1));
                return hi.min(1.0) - lo.max(0.0) > 1e-9;
            }
            let t = (q0 - p0).cross(d2) / den;
            let u = (q0 - p0).cross(d1) / den;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                return !near_endpoint(p0 + d1 * t);
            }
            false
        }
        (Shape::Segment { a: p0, b: p1 }, Shape::Arc { center, radius, .. })
        | (Shape::Arc { center, radius, .. }, Shape::Segment { a: p0, b: p1 }) => {
            let arc = if a.kind() == ComponentKind::Arc { a } else { b };
            let d = p1 - p0;
            let l = d.norm();
            let dir = d / l;
            let oc = p0 - center;
            let bb = oc.dot(dir);
            let disc = bb * bb - (oc.norm_sq() - radius * radius);
            if disc < 0.0 {
                return false;
            }
            let sq = disc.sqrt();
            [-bb - sq, -bb + sq].into_iter().any(|t| {
                let p = p0 + dir * t;
                (-1e-12..=l + 1e-12).contains(&t) && on_arc(arc, p) && !near_endpoint(p)
            })
        }
        (
            Shape::Arc {
                center: c1,
                radius: r1,
                ..
            },
            Shape::Arc {
                center: c2,
                radius: r2,
                ..
            },
        ) => {
            let dv = c2 - c1;
            let d = dv.norm();
            if d < 1e-14 {
                return (r1 - r2).abs() < 1e-12;
            }
            if d > r1 + r2 || d < (r1 - r2).abs() {
                return false;
            }
            let x = (d * d + r1 * r1 - r2 * r2) / (2.0 * d);
            let h = (r1 * r1 - x * x).max(0.0).sqrt();
            let base = c1 + dv * (x / d);
            let off = dv.perp() * (h / d);
            [base + off, base - off]
                .into_iter()
                .any(|p| on_arc(a, p) && on_arc(b, p) && !near_endpoint(p))
        }
    }
}

/// Validates a description and assembles the table.
pub fn build_table(desc: &TableDescription) -> Result<Table, GeometryError> {
    if desc.components.is_empty() {
        return Err(GeometryError::InvalidTable("no components".into()));
    }
    let mut comps = Vec::with_capacity(desc.components.len() + 4);
    for (i, d) in desc.components.iter().enumerate() {
        comps.push(BoundaryComponent::new(i, shape_from_description(i, d)?, true));
    }

    // chains of consecutive components; a chain closes when it returns to its start
    let mut corners = Vec::new();
    let mut chains: Vec<(usize, usize)> = Vec::new();
    let mut chain_start = 0;
    for i in 0..comps.len() {
        let end = comps[i].end();
        if close(end, comps[chain_start].start()) {
            if !(i == chain_start && comps[i].is_full_circle()) {
                corners.push(Corner {
                    point: comps[chain_start].start(),
                    incoming: i,
                    outgoing: chain_start,
                });
            }
            chains.push((chain_start, i + 1));
            chain_start = i + 1;
        } else if i + 1 < comps.len() && close(end, comps[i + 1].start()) {
            corners.push(Corner {
                point: comps[i + 1].start(),
                incoming: i,
                outgoing: i + 1,
            });
        } else {
            return Err(GeometryError::OpenBoundaryChain(i));
        }
    }

    for i in 0..comps.len() {
        for j in i + 1..comps.len() {
            if components_overlap(&comps[i], &comps[j]) {
                return Err(GeometryError::OverlappingComponents(i, j));
            }
        }
    }

    let ambient = match desc.ambient {
        AmbientKind::Plane => Ambient::Plane,
        AmbientKind::Torus => {
            let [w, h] = desc.rectangle.ok_or_else(|| {
                GeometryError::InvalidTable("torus tables need a rectangle".into())
            })?;
            if !(w > 0.0 && h > 0.0) {
                return Err(GeometryError::InvalidTable("rectangle must be positive".into()));
            }
            Ambient::Torus {
                width: w,
                height: h,
            }
        }
    };

    // orientation: plane tables have exactly one counterclockwise outer chain
    let areas: Vec<f64> = chains.iter().map(|&(a, b)| chain_area(&comps[a..b])).collect();
    match ambient {
        Ambient::Plane => {
            let outer = areas.iter().filter(|&&a| a > 0.0).count();
            if outer != 1 {
                return Err(GeometryError::InvalidTable(format!(
                    "plane table needs exactly one counterclockwise outer chain, found {outer}"
                )));
            }
        }
        Ambient::Torus { width, height } => {
            if areas.iter().any(|&a| a > 0.0) {
                return Err(GeometryError::InvalidTable(
                    "torus obstacles must be traversed clockwise".into(),
                ));
            }
            for c in &comps {
                let (lo, hi) = c.bounds();
                if lo.x <= 0.0 || lo.y <= 0.0 || hi.x >= width || hi.y >= height {
                    return Err(GeometryError::InvalidTable(format!(
                        "component {} does not fit inside the fundamental rectangle",
                        c.id
                    )));
                }
            }
        }
    }

    let n_material = comps.len();
    if let Ambient::Torus { width, height } = ambient {
        let p = [
            Vec2::new(0.0, 0.0),
            Vec2::new(width, 0.0),
            Vec2::new(width, height),
            Vec2::new(0.0, height),
        ];
        for k in 0..4 {
            let mut wall = BoundaryComponent::new(
                n_material + k,
                Shape::Segment {
                    a: p[k],
                    b: p[(k + 1) % 4],
                },
                false,
            );
            wall.paired_wall = Some(n_material + (k + 2) % 4);
            comps.push(wall);
        }
    }

    let mut offset = 0.0;
    let mut material_length = 0.0;
    for c in comps.iter_mut() {
        c.offset = offset;
        offset += c.length;
        if c.material {
            material_length += c.length;
        }
    }

    let table = Table {
        components: comps,
        corners,
        ambient,
        material_length,
        total_length: offset,
        description: desc.clone(),
    };

    // dispersing check: just off each arc, the normal side is inside Q and
    // the center side is not
    for c in table.material_components() {
        if let Shape::Arc { radius, .. } = c.shape {
            let s = c.length * 0.5;
            let p = c.point_local(s);
            let n = c.normal_local(s);
            let eps = 1e-7 * radius.min(1.0);
            if !table.contains(p + n * eps) || table.contains(p - n * eps) {
                return Err(GeometryError::NonConvexArc(c.id));
            }
        }
    }
    Ok(table)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables;

    #[test]
    fn unit_square_has_four_corners_and_perimeter_four() {
        let t = tables::square();
        assert_eq!(t.corners.len(), 4);
        assert!((t.total_length - 4.0).abs() < 1e-15);
        assert!((t.material_length - 4.0).abs() < 1e-15);
    }

    #[test]
    fn sinai_torus_has_transparent_walls_and_no_corners() {
        let t = tables::sinai();
        assert_eq!(t.corners.len(), 0);
        assert!((t.material_length - TAU * 0.4).abs() < 1e-14);
        assert_eq!(t.transparent_walls().count(), 4);
        assert!((t.total_length - TAU * 0.4 - 4.0).abs() < 1e-14);
    }

    #[test]
    fn pocket_corner_count_matches_pairwise_endpoint_scan() {
        let t = tables::pocket();
        // brute force: count (end of i, start of j) coincidences over all pairs
        let mut count = 0;
        for a in t.material_components() {
            for b in t.material_components() {
                if a.end().dist(b.start()) < 1e-12 {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 5);
        assert_eq!(t.corners.len(), count);
    }

    #[test]
    fn normals_point_into_the_table() {
        let t = tables::sinai();
        let r = t.nearest_r(Vec2::new(0.1, 0.5));
        let n = t.normal_at(r).unwrap();
        assert!((n - Vec2::new(-1.0, 0.0)).norm() < 1e-12);

        let sq = tables::square();
        let n = sq.normal_at(0.5).unwrap();
        assert!((n - Vec2::new(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(sq.normal_at(1.0), Err(GeometryError::CornerPoint(1.0)));
        assert!(matches!(
            t.normal_at(t.components[1].offset + 0.5),
            Err(GeometryError::TransparentWall(_))
        ));
    }

    #[test]
    fn curvature_values() {
        let sq = tables::square();
        assert_eq!(sq.curvature_at(0.3).unwrap(), 0.0);
        let t = tables::sinai();
        assert!((t.curvature_at(0.1).unwrap() - 2.5).abs() < 1e-15);
        let unit = tables::torus_disk(1.0, 1.0, Vec2::new(1.5, 1.5), 1.0);
        let unit = match unit {
            Ok(t) => t,
            Err(_) => {
                // radius 1 needs a larger cell
                tables::torus_disk(3.0, 3.0, Vec2::new(1.5, 1.5), 1.0).unwrap()
            }
        };
        assert!((unit.curvature_at(0.2).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn focusing_arc_is_rejected() {
        let desc = TableDescription {
            ambient: AmbientKind::Plane,
            rectangle: None,
            components: vec![
                ComponentDescription::Segment { a: [0.0, 0.0], b: [1.0, 0.0] },
                ComponentDescription::Segment { a: [1.0, 0.0], b: [1.0, 1.0] },
                ComponentDescription::Segment { a: [1.0, 1.0], b: [0.0, 1.0] },
                ComponentDescription::Segment { a: [0.0, 1.0], b: [0.0, 0.0] },
                ComponentDescription::Arc {
                    center: [0.5, 0.5],
                    radius: 0.2,
                    from_angle: 0.0,
                    to_angle: TAU,
                    convex_inward: false,
                },
            ],
        };
        assert_eq!(build_table(&desc).unwrap_err(), GeometryError::NonConvexArc(4));
    }

    #[test]
    fn open_chain_is_rejected() {
        let desc = TableDescription {
            ambient: AmbientKind::Plane,
            rectangle: None,
            components: vec![
                ComponentDescription::Segment { a: [0.0, 0.0], b: [1.0, 0.0] },
                ComponentDescription::Segment { a: [1.0, 0.0], b: [1.0, 1.0] },
                ComponentDescription::Segment { a: [1.0, 1.0], b: [0.0, 1.0] },
            ],
        };
        assert_eq!(build_table(&desc).unwrap_err(), GeometryError::OpenBoundaryChain(2));
    }

    #[test]
    fn overlapping_obstacles_are_rejected() {
        let desc = TableDescription {
            ambient: AmbientKind::Torus,
            rectangle: Some([2.0, 1.0]),
            components: vec![
                ComponentDescription::Arc {
                    center: [0.7, 0.5],
                    radius: 0.3,
                    from_angle: 0.0,
                    to_angle: TAU,
                    convex_inward: true,
                },
                ComponentDescription::Arc {
                    center: [1.1, 0.5],
                    radius: 0.3,
                    from_angle: 0.0,
                    to_angle: TAU,
                    convex_inward: true,
                },
            ],
        };
        assert_eq!(
            build_table(&desc).unwrap_err(),
            GeometryError::OverlappingComponents(0, 1)
        );
    }

    #[test]
    fn pocket_corner_sector_points_inward() {
        let t = tables::pocket();
        for k in &t.corners {
            let (start, width) = k.sector(&t);
            assert!(width > 0.0 && width < PI + 1e-12);
            let mid = Vec2::from_angle(start + 0.5 * width);
            assert!(t.contains(k.point + mid * 1e-6));
        }
    }

    #[test]
    fn description_round_trips_through_json() {
        let t = tables::pocket();
        let text = t.description().to_json();
        let back = TableDescription::from_json(&text).unwrap();
        assert_eq!(&back, t.description());
    }
}
