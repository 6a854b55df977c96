//! Billiard flow, collision map and the time-reversal involution.
//!
//! A phase point on the collision space is stored as `(component, r, φ)`
//! with the post-collisional velocity `v = n.rotate(φ)`, `n` the inward
//! normal. Transparent torus walls are part of the collision space: a
//! crossing is recorded on the wall the particle emerges from, velocity
//! unchanged.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Ambient, GeometryError, Shape, Table};
use crate::vec2::Vec2;

/// Collisions with `|cos φ|` below this are tangential.
pub const TANGENCY_TOL: f64 = 1e-10;
/// Hits within this distance of a corner are corner hits.
pub const CORNER_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowPoint {
    pub q: Vec2,
    pub v: Vec2,
}

impl FlowPoint {
    pub fn new(q: Vec2, v: Vec2) -> Self {
        Self { q, v }
    }

    /// Same position, reversed velocity.
    pub fn reversed(self) -> Self {
        Self::new(self.q, -self.v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionCoord {
    pub component: usize,
    pub r: f64,
    pub phi: f64,
    pub material: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Regular,
    Tangential,
    Corner,
    Transparent,
}

impl EventClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::Regular => "regular",
            EventClass::Tangential => "tangential",
            EventClass::Corner => "corner",
            EventClass::Transparent => "transparent",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollisionEvent {
    pub time: f64,
    /// Post-collisional coordinate.
    pub coord: CollisionCoord,
    pub class: EventClass,
    /// Hit point before any wall identification.
    pub point: Vec2,
    pub v_in: Vec2,
    pub v_out: Vec2,
    /// Boundary curvature at the hit (0 on segments and walls).
    pub curvature: f64,
}

impl CollisionEvent {
    pub fn cos_phi(&self) -> f64 {
        self.coord.phi.cos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    Tangency,
    Corner,
    /// Crossing through a corner of the fundamental rectangle.
    WallCorner,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("trajectory hits corner {corner} at t = {time}")]
    CornerHit {
        time: f64,
        point: Vec2,
        corner: usize,
        normals: [Vec2; 2],
    },
    #[error("singular {kind:?} encounter at t = {time} on component {component}")]
    SingularEncounter {
        kind: SingularKind,
        time: f64,
        point: Vec2,
        component: usize,
    },
    #[error("ray escaped the table from {0:?}")]
    Escaped(FlowPoint),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DynamicsError {
    pub fn is_singular(&self) -> bool {
        matches!(
            self,
            DynamicsError::CornerHit { .. } | DynamicsError::SingularEncounter { .. }
        )
    }

    pub fn time(&self) -> Option<f64> {
        match *self {
            DynamicsError::CornerHit { time, .. } | DynamicsError::SingularEncounter { time, .. } => {
                Some(time)
            }
            _ => None,
        }
    }

    fn with_time(mut self, t0: f64) -> Self {
        match &mut self {
            DynamicsError::CornerHit { time, .. } | DynamicsError::SingularEncounter { time, .. } => {
                *time += t0
            }
            _ => {}
        }
        self
    }
}

/// Specular reflection `v - 2<n,v> n`.
#[inline]
pub fn reflect(v: Vec2, n: Vec2) -> Vec2 {
    v - n * (2.0 * n.dot(v))
}

/// Raw intersection of a ray with the boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    pub component: usize,
    pub t: f64,
    pub s: f64,
    pub point: Vec2,
}

/// First boundary component hit by `q + t d`, `t > 0`, approached from the
/// table side. `skip` excludes the components the ray starts on.
pub fn cast(table: &Table, q: Vec2, d: Vec2, skip: &[usize]) -> Option<RayHit> {
    let mut best: Option<RayHit> = None;
    for c in &table.components {
        if skip.contains(&c.id) {
            continue;
        }
        let bound = best.map_or(f64::INFINITY, |b| b.t);
        let hit = match c.shape {
            Shape::Segment { a, b } => {
                let e = b - a;
                let n = (e / c.length).perp();
                if d.dot(n) >= 0.0 {
                    continue;
                }
                let den = d.cross(e);
                let t = (a - q).cross(e) / den;
                if !(t > 0.0 && t < bound) {
                    continue;
                }
                let u = (a - q).cross(d) / den;
                if !(-1e-12..=1.0 + 1e-12).contains(&u) {
                    continue;
                }
                let s = (u * c.length).clamp(0.0, c.length);
                Some(RayHit {
                    component: c.id,
                    t,
                    s,
                    point: q + d * t,
                })
            }
            Shape::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let oc = q - center;
                let b = oc.dot(d);
                if b >= 0.0 {
                    continue;
                }
                let dist = oc.norm();
                let cc = (dist - radius) * (dist + radius);
                let disc = b * b - cc;
                if disc < 0.0 {
                    continue;
                }
                let t = cc / (-b + disc.sqrt());
                if !(t > 0.0 && t < bound) {
                    continue;
                }
                let p = q + d * t;
                let mut delta =
                    (start_angle - (p - center).angle()).rem_euclid(std::f64::consts::TAU);
                let full = c.is_full_circle();
                if !full && delta > sweep + 1e-12 {
                    if std::f64::consts::TAU - delta > 1e-12 {
                        continue;
                    }
                    delta = 0.0;
                }
                let mut s = (delta * radius).min(c.length);
                if full && s >= c.length {
                    s = 0.0;
                }
                Some(RayHit {
                    component: c.id,
                    t,
                    s,
                    point: p,
                })
            }
        };
        if hit.is_some() {
            best = hit;
        }
    }
    best
}

/// Phase point of a collision-space coordinate (post-collisional velocity).
pub fn to_flow(table: &Table, m: &CollisionCoord) -> Result<FlowPoint, DynamicsError> {
    let (id, s) = table.locate(m.r)?;
    let c = &table.components[id];
    let n = c.normal_local(s);
    Ok(FlowPoint::new(c.point_local(s), n.rotate(m.phi)))
}

/// Collision-space coordinate of a boundary point with outgoing velocity `v`.
pub fn coord_of(table: &Table, component: usize, s: f64, v: Vec2) -> CollisionCoord {
    let c = &table.components[component];
    let n = c.normal_local(s);
    CollisionCoord {
        component,
        r: c.offset + s,
        phi: n.angle_to(v),
        material: c.material,
    }
}

/// First collision of the flow from `x`, classified.
pub fn first_collision(table: &Table, x: &FlowPoint) -> Result<CollisionEvent, DynamicsError> {
    first_collision_from(table, x, None)
}

/// Like [`first_collision`], ignoring the component the point sits on.
pub fn first_collision_from(
    table: &Table,
    x: &FlowPoint,
    source: Option<usize>,
) -> Result<CollisionEvent, DynamicsError> {
    first_collision_skipping(table, x, source.as_slice())
}

/// Like [`first_collision`], ignoring the listed components.
pub fn first_collision_skipping(
    table: &Table,
    x: &FlowPoint,
    skip: &[usize],
) -> Result<CollisionEvent, DynamicsError> {
    let hit = cast(table, x.q, x.v, skip).ok_or(DynamicsError::Escaped(*x))?;
    let c = &table.components[hit.component];
    let near_start = hit.s < CORNER_TOL;
    let near_end = c.length - hit.s < CORNER_TOL;
    if c.material {
        if (near_start || near_end) && !c.is_full_circle() {
            if let Some(k) = table.corner_of(c.id, near_end) {
                let corner = table.corners[k];
                return Err(DynamicsError::CornerHit {
                    time: hit.t,
                    point: corner.point,
                    corner: k,
                    normals: corner.normals(table),
                });
            }
        }
        let n = c.normal_local(hit.s);
        let v_out = reflect(x.v, n);
        let coord = coord_of(table, c.id, hit.s, v_out);
        let class = if (-x.v.dot(n)) < TANGENCY_TOL {
            EventClass::Tangential
        } else {
            EventClass::Regular
        };
        Ok(CollisionEvent {
            time: hit.t,
            coord,
            class,
            point: hit.point,
            v_in: x.v,
            v_out,
            curvature: c.curvature(),
        })
    } else {
        if near_start || near_end {
            return Err(DynamicsError::SingularEncounter {
                kind: SingularKind::WallCorner,
                time: hit.t,
                point: hit.point,
                component: c.id,
            });
        }
        let pair = c.paired_wall.expect("walls are paired");
        let s = table.components[pair].length - hit.s;
        Ok(CollisionEvent {
            time: hit.t,
            coord: coord_of(table, pair, s, x.v),
            class: EventClass::Transparent,
            point: hit.point,
            v_in: x.v,
            v_out: x.v,
            curvature: 0.0,
        })
    }
}

/// One step of the collision map with full event data. Tangential events
/// are reported as singular.
pub fn step(table: &Table, m: &CollisionCoord) -> Result<CollisionEvent, DynamicsError> {
    let x = to_flow(table, m)?;
    if m.material && m.phi.cos() < TANGENCY_TOL {
        return Err(DynamicsError::SingularEncounter {
            kind: SingularKind::Tangency,
            time: 0.0,
            point: x.q,
            component: m.component,
        });
    }
    let ev = first_collision_from(table, &x, Some(m.component))?;
    if ev.class == EventClass::Tangential {
        return Err(DynamicsError::SingularEncounter {
            kind: SingularKind::Tangency,
            time: ev.time,
            point: ev.point,
            component: ev.coord.component,
        });
    }
    Ok(ev)
}

/// The collision map `T`.
pub fn collision_map(table: &Table, m: &CollisionCoord) -> Result<CollisionCoord, DynamicsError> {
    step(table, m).map(|e| e.coord)
}

/// Iterates `T` until the next material collision; returns the event and the
/// total flight time.
pub fn material_step(table: &Table, m: &CollisionCoord) -> Result<(CollisionEvent, f64), DynamicsError> {
    let mut cur = *m;
    let mut elapsed = 0.0;
    // a straight line in a bounded cell crosses at most a few walls before
    // hitting material unless it runs along a corridor
    for _ in 0..100_000 {
        let ev = step(table, &cur).map_err(|e| e.with_time(elapsed))?;
        elapsed += ev.time;
        if ev.coord.material {
            return Ok((ev, elapsed));
        }
        cur = ev.coord;
    }
    Err(DynamicsError::Escaped(to_flow(table, m)?))
}

/// The map between consecutive material collisions.
pub fn material_map(table: &Table, m: &CollisionCoord) -> Result<CollisionCoord, DynamicsError> {
    material_step(table, m).map(|(e, _)| e.coord)
}

/// `-x` on the collision space. Material points map `(r, φ)` to `(r, -φ)`;
/// a wall point maps to the identified point of the opposite wall with the
/// same `φ`, which is where the reversed trajectory is recorded.
pub fn involution(table: &Table, m: &CollisionCoord) -> CollisionCoord {
    if m.material {
        return CollisionCoord { phi: -m.phi, ..*m };
    }
    let c = &table.components[m.component];
    let pair = &table.components[c.paired_wall.expect("walls are paired")];
    let s = (c.length - (m.r - c.offset)).clamp(0.0, pair.length);
    CollisionCoord {
        component: pair.id,
        r: pair.offset + s,
        phi: m.phi,
        material: false,
    }
}

/// `T^{-1} = I T I`.
pub fn inverse_map(table: &Table, m: &CollisionCoord) -> Result<CollisionCoord, DynamicsError> {
    let y = collision_map(table, &involution(table, m))?;
    Ok(involution(table, &y))
}

/// The billiard flow `Φ^t` for `t >= 0`. On a torus positions stay in the
/// fundamental rectangle. Tangential grazes pass straight through.
pub fn flow(table: &Table, x: &FlowPoint, t: f64) -> Result<FlowPoint, DynamicsError> {
    let mut cur = *x;
    let mut source = None;
    let mut elapsed = 0.0;
    loop {
        let ev = first_collision_from(table, &cur, source).map_err(|e| e.with_time(elapsed))?;
        if elapsed + ev.time > t {
            return Ok(FlowPoint::new(cur.q + cur.v * (t - elapsed), cur.v));
        }
        elapsed += ev.time;
        let (id, s) = table.locate(ev.coord.r)?;
        let q = if ev.class == EventClass::Transparent {
            table.components[id].point_local(s)
        } else {
            ev.point
        };
        cur = FlowPoint::new(q, ev.v_out);
        source = Some(id);
    }
}

/// Distance between two collision-space points measured through their
/// phase points; walls are compared in the torus metric.
pub fn phase_distance(table: &Table, a: &CollisionCoord, b: &CollisionCoord) -> f64 {
    let (Ok(x), Ok(y)) = (to_flow(table, a), to_flow(table, b)) else {
        return f64::INFINITY;
    };
    let mut dq = x.q - y.q;
    if let Ambient::Torus { width, height } = table.ambient {
        dq.x -= width * (dq.x / width).round();
        dq.y -= height * (dq.y / height).round();
    }
    dq.norm() + (x.v - y.v).norm()
}

/// Draws a material point from `cos φ dr dφ`, normalized.
pub fn sample_nu<R: Rng + ?Sized>(table: &Table, rng: &mut R) -> CollisionCoord {
    loop {
        let u: f64 = rng.random::<f64>() * table.material_length;
        let mut acc = 0.0;
        for c in table.material_components() {
            if u < acc + c.length {
                let s = u - acc;
                let phi = (2.0 * rng.random::<f64>() - 1.0).asin();
                return CollisionCoord {
                    component: c.id,
                    r: c.offset + s,
                    phi,
                    material: true,
                };
            }
            acc += c.length;
        }
    }
}

/// Whether a material coordinate is safely away from corners and tangency.
pub fn is_regular_coord(table: &Table, m: &CollisionCoord, margin: f64) -> bool {
    let Ok((id, s)) = table.locate(m.r) else {
        return false;
    };
    let c = &table.components[id];
    let corner_ok = c.is_full_circle() || !c.material || (s > margin && c.length - s > margin);
    corner_ok && m.phi.cos() > margin
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRow {
    pub index: usize,
    pub t: f64,
    pub coord: CollisionCoord,
    pub q: Vec2,
    pub v: Vec2,
    pub class: EventClass,
}

/// Iterates `T` up to `n` times from `start`, stopping at the first
/// singular encounter (reported as the last row's class).
pub fn trajectory(table: &Table, start: &CollisionCoord, n: usize) -> Vec<TrajectoryRow> {
    let mut rows = Vec::with_capacity(n + 1);
    let Ok(x) = to_flow(table, start) else {
        return rows;
    };
    rows.push(TrajectoryRow {
        index: 0,
        t: 0.0,
        coord: *start,
        q: x.q,
        v: x.v,
        class: if start.material {
            EventClass::Regular
        } else {
            EventClass::Transparent
        },
    });
    let mut cur = *start;
    let mut t = 0.0;
    for i in 1..=n {
        match step(table, &cur) {
            Ok(ev) => {
                t += ev.time;
                let x = to_flow(table, &ev.coord).expect("event coordinates are valid");
                rows.push(TrajectoryRow {
                    index: i,
                    t,
                    coord: ev.coord,
                    q: x.q,
                    v: x.v,
                    class: ev.class,
                });
                cur = ev.coord;
            }
            Err(e) => {
                if let (Some(dt), DynamicsError::CornerHit { point, .. } | DynamicsError::SingularEncounter { point, .. }) =
                    (e.time(), &e)
                {
                    let class = match e {
                        DynamicsError::CornerHit { .. } => EventClass::Corner,
                        _ => EventClass::Tangential,
                    };
                    let r = table.nearest_r(*point);
                    rows.push(TrajectoryRow {
                        index: i,
                        t: t + dt,
                        coord: CollisionCoord {
                            component: table.locate(r).map(|p| p.0).unwrap_or(0),
                            r,
                            phi: f64::NAN,
                            material: true,
                        },
                        q: *point,
                        v: rows.last().map_or(Vec2::ZERO, |r| r.v),
                        class,
                    });
                }
                break;
            }
        }
    }
    rows
}

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "event_index,t,component_id,r,phi,qx,qy,vx,vy,class")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{}",
            r.index,
            r.t,
            r.coord.component,
            r.coord.r,
            r.coord.phi,
            r.q.x,
            r.q.y,
            r.v.x,
            r.v.y,
            r.class.as_str()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI, TAU};

    fn coord(table: &Table, p: Vec2, phi: f64) -> CollisionCoord {
        let r = table.nearest_r(p);
        let (id, _) = table.locate(r).unwrap();
        CollisionCoord {
            component: id,
            r,
            phi,
            material: table.components[id].material,
        }
    }

    #[test]
    fn reflect_examples() {
        let n = Vec2::new(0.0, 1.0);
        assert_eq!(reflect(Vec2::new(0.0, -1.0), n), Vec2::new(0.0, 1.0));
        let v = reflect(Vec2::new(FRAC_1_SQRT_2, -FRAC_1_SQRT_2), n);
        assert!((v - Vec2::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2)).norm() < 1e-16);
        assert_eq!(reflect(Vec2::new(1.0, 0.0), n), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn sinai_first_collision_through_wall() {
        let t = tables::sinai();
        let x = FlowPoint::new(Vec2::new(0.9, 0.5), Vec2::new(1.0, 0.0));
        let e1 = first_collision(&t, &x).unwrap();
        assert_eq!(e1.class, EventClass::Transparent);
        assert!((e1.time - 0.1).abs() < 1e-15);
        let e2 = step(&t, &e1.coord).unwrap();
        assert!(e2.coord.material);
        assert!((e2.point - Vec2::new(0.1, 0.5)).norm() < 1e-15);
        assert!((e1.time + e2.time - 0.2).abs() < 1e-15);
        assert!(e2.coord.phi.abs() < 1e-15);
    }

    #[test]
    fn square_first_collisions() {
        let t = tables::square();
        let e = first_collision(&t, &FlowPoint::new(Vec2::new(0.5, 0.5), Vec2::new(0.0, 1.0))).unwrap();
        assert!((e.time - 0.5).abs() < 1e-15);
        assert_eq!(e.coord.component, 2);
        assert!(e.coord.phi.abs() < 1e-15);

        let d = Vec2::new(1.0, 1.0).normalized();
        match first_collision(&t, &FlowPoint::new(Vec2::new(0.5, 0.5), d)) {
            Err(DynamicsError::CornerHit { time, point, .. }) => {
                assert!((time - FRAC_1_SQRT_2).abs() < 1e-12);
                assert!((point - Vec2::new(1.0, 1.0)).norm() < 1e-15);
            }
            other => panic!("expected corner hit, got {other:?}"),
        }
    }

    #[test]
    fn sinai_period_two_collision_map() {
        let t = tables::sinai();
        let m = coord(&t, Vec2::new(0.9, 0.5), 0.0);
        let w = collision_map(&t, &m).unwrap();
        assert!(!w.material);
        let back = collision_map(&t, &w).unwrap();
        let p = to_flow(&t, &back).unwrap();
        assert!((p.q - Vec2::new(0.1, 0.5)).norm() < 1e-15);
        assert!(back.phi.abs() < 1e-15);
        assert!((back.r - 0.4 * PI).abs() < 1e-14);
    }

    #[test]
    fn square_bottom_midpoint_maps() {
        let t = tables::square();
        let m = CollisionCoord { component: 0, r: 0.5, phi: 0.0, material: true };
        let y = collision_map(&t, &m).unwrap();
        assert_eq!(y.component, 2);
        assert!((y.r - 2.5).abs() < 1e-15 && y.phi.abs() < 1e-15);

        // positive φ tilts the velocity counterclockwise from the normal,
        // i.e. toward the left side
        let y = collision_map(&t, &CollisionCoord { phi: FRAC_PI_4, ..m }).unwrap();
        assert_eq!(y.component, 3);
        assert!((y.r - 3.5).abs() < 1e-14);
        assert!((y.phi - FRAC_PI_4).abs() < 1e-14);

        let y = collision_map(&t, &CollisionCoord { phi: -FRAC_PI_4, ..m }).unwrap();
        assert_eq!(y.component, 1);
        assert!((y.r - 1.5).abs() < 1e-14);
        assert!((y.phi + FRAC_PI_4).abs() < 1e-14);
    }

    #[test]
    fn involution_examples() {
        let t = tables::square();
        let x = FlowPoint::new(Vec2::new(0.5, 0.5), Vec2::new(1.0, 0.0));
        assert_eq!(x.reversed().v, Vec2::new(-1.0, 0.0));
        let m = CollisionCoord { component: 0, r: 0.3, phi: 0.3, material: true };
        assert_eq!(involution(&t, &m).phi, -0.3);
        assert_eq!(involution(&t, &m).r, 0.3);
    }

    #[test]
    fn flow_examples() {
        let sq = tables::square();
        let x = FlowPoint::new(Vec2::new(0.5, 0.5), Vec2::new(0.0, 1.0));
        let y = flow(&sq, &x, 1.0).unwrap();
        assert!((y.q - x.q).norm() < 1e-15);
        assert!((y.v - Vec2::new(0.0, -1.0)).norm() < 1e-15);
        assert_eq!(flow(&sq, &x, 0.0).unwrap(), x);

        let t = tables::sinai();
        let x = FlowPoint::new(Vec2::new(0.95, 0.5), Vec2::new(1.0, 0.0));
        let y = flow(&t, &x, 0.4).unwrap();
        assert!((y.q - x.q).norm() < 1e-14);
        assert!((y.v - x.v).norm() < 1e-14);
    }

    #[test]
    fn time_reversal_on_reference_tables() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for t in [tables::square(), tables::sinai(), tables::pocket()] {
            let mut checked = 0;
            while checked < 500 {
                let m = sample_nu(&t, &mut rng);
                let Ok(y) = collision_map(&t, &m) else { continue };
                let Ok(z) = collision_map(&t, &involution(&t, &y)) else { continue };
                let target = involution(&t, &m);
                assert!(phase_distance(&t, &z, &target) < 1e-9, "{m:?}");
                checked += 1;
            }
        }
    }

    #[test]
    fn wall_involution_pairs_walls() {
        let t = tables::sinai();
        let w = &t.components[1];
        let m = CollisionCoord { component: 1, r: w.offset + 0.3, phi: 0.2, material: false };
        let im = involution(&t, &m);
        assert_eq!(im.component, 3);
        assert!((im.r - (t.components[3].offset + 0.7)).abs() < 1e-14);
        assert!(phase_distance(&t, &involution(&t, &im), &m) < 1e-14);
        let _ = TAU;
    }

    #[test]
    fn trajectory_csv_has_header_and_rows() {
        let t = tables::sinai();
        let m = coord(&t, Vec2::new(0.9, 0.5), 0.1);
        let rows = trajectory(&t, &m, 5);
        let mut buf = Vec::new();
        write_trajectory_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("event_index,t,component_id"));
        assert_eq!(text.lines().count(), rows.len() + 1);
    }
}
