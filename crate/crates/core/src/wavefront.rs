//! Wave fronts (local orthogonal manifolds) and their expansion.
//!
//! A front is carried by a curve orthogonal to the velocity field; `B` is
//! the signed curvature of that curve (positive = divergent). Between
//! collisions `B -> B / (1 + t B)` and arc length grows by `|1 + t B|`; at a
//! boundary of curvature `K` hit at angle `φ` the mirror law adds
//! `2 K / cos φ`. Expansion is measured in carrier arc length, so only
//! flight legs contribute factors.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, first_collision_from, involution, CollisionCoord, DynamicsError, EventClass, FlowPoint,
    TANGENCY_TOL,
};
use crate::geometry::Table;
use crate::singularity;
use crate::vec2::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WavefrontError {
    #[error("front focuses after t = {0}")]
    FocalPoint(f64),
    #[error("grazing collision, cos φ = {0}")]
    GrazingCollision(f64),
    #[error("singular encounter at step {step}: {source}")]
    SingularEncounter {
        step: usize,
        #[source]
        source: DynamicsError,
    },
    #[error("the point itself lies on a singularity of the inverse map")]
    ImmediateSingularity,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrontKind {
    Divergent,
    Flat,
    Convergent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveFront {
    pub base: FlowPoint,
    /// Signed carrier curvature.
    pub curvature: f64,
    pub half_extent: f64,
    /// +1 selects the normal family along `base.v`, -1 the reversed one.
    pub orientation: i8,
}

impl WaveFront {
    pub fn new(base: FlowPoint, curvature: f64, half_extent: f64) -> Self {
        Self {
            base,
            curvature,
            half_extent,
            orientation: 1,
        }
    }

    pub fn flat(base: FlowPoint) -> Self {
        Self::new(base, 0.0, 0.0)
    }

    pub fn kind(&self) -> FrontKind {
        if self.curvature > 0.0 {
            FrontKind::Divergent
        } else if self.curvature < 0.0 {
            FrontKind::Convergent
        } else {
            FrontKind::Flat
        }
    }

    /// Phase point at signed arc length `s` along the carrier, measured
    /// toward `v.perp()`.
    pub fn point_at(&self, s: f64) -> FlowPoint {
        let v = self.base.v;
        let b = self.curvature;
        if b.abs() * s.abs() < 1e-12 {
            return FlowPoint::new(self.base.q + v.perp() * s, v);
        }
        let center = self.base.q - v / b;
        let w = v.rotate(s * b);
        FlowPoint::new(center + w / b, w)
    }
}

/// Free flight of duration `t`; returns the new front and its expansion
/// factor `|1 + t B|`.
pub fn propagate_free(front: &WaveFront, t: f64) -> Result<(WaveFront, f64), WavefrontError> {
    let g = 1.0 + t * front.curvature;
    if g.abs() < 1e-14 {
        return Err(WavefrontError::FocalPoint(t));
    }
    let base = FlowPoint::new(front.base.q + front.base.v * t, front.base.v);
    Ok((
        WaveFront {
            base,
            curvature: front.curvature / g,
            half_extent: front.half_extent * g.abs(),
            orientation: front.orientation,
        },
        g.abs(),
    ))
}

/// Post-collision curvature `B + 2K / cos φ`.
pub fn kick(curvature: f64, boundary_curvature: f64, phi: f64) -> Result<f64, WavefrontError> {
    let c = phi.cos();
    if c < TANGENCY_TOL {
        return Err(WavefrontError::GrazingCollision(c));
    }
    Ok(curvature + 2.0 * boundary_curvature / c)
}

/// Mirror law applied at a collision with boundary curvature `k` and angle
/// `phi`. The base velocity is left untouched; callers reposition the front.
pub fn propagate_collision(front: &WaveFront, k: f64, phi: f64) -> Result<WaveFront, WavefrontError> {
    Ok(WaveFront {
        curvature: kick(front.curvature, k, phi)?,
        ..*front
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub t: f64,
    /// Curvature at the start of the flight.
    pub b_before: f64,
    /// Curvature right after the collision that ends the flight.
    pub b_after: f64,
    pub factor: f64,
    pub component: usize,
    pub material: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub n: usize,
    pub jacobian: f64,
    pub legs: Vec<Leg>,
    /// Curvature after the last collision.
    pub final_curvature: f64,
    pub end: Option<CollisionCoord>,
}

impl ExpansionRecord {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "leg,t,B_before,B_after,factor")?;
        for (i, l) in self.legs.iter().enumerate() {
            writeln!(
                w,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                i + 1,
                l.t,
                l.b_before,
                l.b_after,
                l.factor
            )?;
        }
        Ok(())
    }
}

/// Propagates a front from a phase point (on the boundary when `source` is
/// set) through `n` boundary events, counting transparent crossings.
pub fn expansion_from_flow(
    table: &Table,
    start: &FlowPoint,
    source: Option<usize>,
    b0: f64,
    n: usize,
) -> Result<ExpansionRecord, WavefrontError> {
    let mut legs = Vec::with_capacity(n);
    let mut b = b0;
    let mut jac = 1.0;
    let mut cur = *start;
    let mut src = source;
    let mut end = None;
    for i in 0..n {
        let ev = first_collision_from(table, &cur, src)
            .map_err(|e| WavefrontError::SingularEncounter { step: i + 1, source: e })?;
        if ev.class == EventClass::Tangential {
            return Err(WavefrontError::SingularEncounter {
                step: i + 1,
                source: DynamicsError::SingularEncounter {
                    kind: dynamics::SingularKind::Tangency,
                    time: ev.time,
                    point: ev.point,
                    component: ev.coord.component,
                },
            });
        }
        let g = 1.0 + ev.time * b;
        if g.abs() < 1e-14 {
            return Err(WavefrontError::FocalPoint(ev.time));
        }
        let b_flight = b / g;
        let b_next = if ev.coord.material {
            kick(b_flight, ev.curvature, ev.coord.phi)?
        } else {
            b_flight
        };
        jac *= g.abs();
        legs.push(Leg {
            t: ev.time,
            b_before: b,
            b_after: b_next,
            factor: g.abs(),
            component: ev.coord.component,
            material: ev.coord.material,
        });
        b = b_next;
        cur = dynamics::to_flow(table, &ev.coord)?;
        src = Some(ev.coord.component);
        end = Some(ev.coord);
    }
    Ok(ExpansionRecord {
        n,
        jacobian: jac,
        legs,
        final_curvature: b,
        end,
    })
}

/// `D^n` of the front of curvature `b0` through the post-collisional point `x`.
pub fn expansion(
    table: &Table,
    x: &CollisionCoord,
    n: usize,
    b0: f64,
) -> Result<ExpansionRecord, WavefrontError> {
    let start = dynamics::to_flow(table, x)?;
    expansion_from_flow(table, &start, Some(x.component), b0, n)
}

/// Two-ray finite-difference check of one step: returns the measured
/// expansion factor and post-collision curvature for the front of
/// curvature `b0` through `x`, using neighbours at arc length `±h`.
pub fn two_ray_step(
    table: &Table,
    x: &CollisionCoord,
    b0: f64,
    h: f64,
) -> Result<(f64, f64), WavefrontError> {
    let base = dynamics::to_flow(table, x)?;
    let front = WaveFront::new(base, b0, h);
    let ev0 = first_collision_from(table, &base, Some(x.component))?;
    let mut synced = [Vec2::ZERO; 2];
    let mut vel = [Vec2::ZERO; 2];
    for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
        let y = front.point_at(sign * h);
        let ev = first_collision_from(table, &y, Some(x.component))?;
        if ev.coord.component != ev0.coord.component {
            return Err(WavefrontError::SingularEncounter {
                step: 1,
                source: DynamicsError::SingularEncounter {
                    kind: dynamics::SingularKind::Corner,
                    time: ev.time,
                    point: ev.point,
                    component: ev.coord.component,
                },
            });
        }
        synced[k] = ev.point + ev.v_out * (ev0.time - ev.time);
        vel[k] = ev.v_out;
    }
    let sep = synced[0].dist(synced[1]);
    let d = sep / (2.0 * h);
    // signed separation across the reflected beam fixes the sign of B
    let across = (synced[1] - synced[0]).dot(ev0.v_out.perp());
    let b_plus = vel[0].angle_to(vel[1]) / across;
    Ok((d, b_plus))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaGrid {
    /// Initial curvatures searched besides the flat front.
    pub curvatures: Vec<f64>,
    /// Image-window offsets as fractions of `δ`.
    pub offsets: Vec<f64>,
}

impl Default for KappaGrid {
    fn default() -> Self {
        let curvatures = (0..12).map(|i| 1e-2 * 10f64.powf(4.0 * i as f64 / 11.0)).collect();
        Self {
            curvatures,
            offsets: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
        }
    }
}

impl KappaGrid {
    /// Flat fronts only.
    pub fn flat() -> Self {
        Self {
            curvatures: Vec::new(),
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub zero: f64,
    pub delta: f64,
}

/// Orbit `x, T x, …, T^n x`.
pub fn forward_orbit(
    table: &Table,
    x: &CollisionCoord,
    n: usize,
) -> Result<Vec<CollisionCoord>, WavefrontError> {
    let mut orbit = Vec::with_capacity(n + 1);
    orbit.push(*x);
    for i in 0..n {
        let y = dynamics::collision_map(table, &orbit[i])
            .map_err(|e| WavefrontError::SingularEncounter { step: i + 1, source: e })?;
        orbit.push(y);
    }
    Ok(orbit)
}

/// `κ_{n,0}`: flat-front expansion from `-T^n x` over `n` steps.
pub fn kappa_zero_at(table: &Table, tnx: &CollisionCoord, n: usize) -> Result<f64, WavefrontError> {
    if n == 0 {
        return Ok(1.0);
    }
    Ok(expansion(table, &involution(table, tnx), n, 0.0)?.jacobian)
}

/// `(κ_{n,0}, κ_{n,δ})` for `x`, the latter minimized over the grid of
/// initial curvatures and over base points whose images fall in the
/// `δ`-window around `-x`. Points whose orbit changes combinatorics are
/// discarded, since `T^n` must be smooth on the front.
pub fn kappa(
    table: &Table,
    x: &CollisionCoord,
    n: usize,
    delta: f64,
    grid: &KappaGrid,
) -> Result<Kappa, WavefrontError> {
    if n == 0 {
        return Ok(Kappa { zero: 1.0, delta: 1.0 });
    }
    let orbit = forward_orbit(table, x, n)?;
    kappa_on_orbit(table, &orbit, n, delta, grid)
}

/// As [`kappa`], reusing an orbit `orbit[k] = T^k x` of length at least `n + 1`.
pub fn kappa_on_orbit(
    table: &Table,
    orbit: &[CollisionCoord],
    n: usize,
    delta: f64,
    grid: &KappaGrid,
) -> Result<Kappa, WavefrontError> {
    if n == 0 {
        return Ok(Kappa { zero: 1.0, delta: 1.0 });
    }
    let start = involution(table, &orbit[n]);
    let base = expansion(table, &start, n, 0.0)?;
    let zero = base.jacobian;
    let components: Vec<usize> = base.legs.iter().map(|l| l.component).collect();
    let flow = dynamics::to_flow(table, &start)?;
    let mut best = zero;
    for &b in std::iter::once(&0.0).chain(grid.curvatures.iter()) {
        for &u in &grid.offsets {
            let s = u * delta / zero;
            let y = WaveFront::new(flow, b, s.abs()).point_at(s);
            let Ok(rec) = expansion_from_flow(table, &y, Some(start.component), b, n) else {
                continue;
            };
            if rec.legs.iter().map(|l| l.component).ne(components.iter().copied()) {
                continue;
            }
            best = best.min(rec.jacobian);
        }
    }
    Ok(Kappa {
        zero,
        delta: best.max(1.0).min(zero),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableEstimate {
    /// Convergent front through `x` approximating the local stable manifold.
    pub front: WaveFront,
    pub r_s: f64,
    /// Pullback depth at which the estimate was last reduced.
    pub limiting_step: usize,
}

/// Finite-pullback stable-manifold estimate at `x`. A slightly divergent
/// front launched from `-T^n x` is pushed to `-x`; reversing it gives a
/// strictly convex (convergent) front through `x`. Its size is bounded by
/// the tubular radius of every intermediate link rescaled by the expansion
/// accumulated on the way, so the estimate can only shrink as `n` grows.
pub fn approx_stable_manifold(
    table: &Table,
    x: &CollisionCoord,
    n_pullback: usize,
    delta_target: f64,
) -> Result<StableEstimate, WavefrontError> {
    let mx = involution(table, x);
    if dynamics::collision_map(table, &mx).is_err() {
        return Err(WavefrontError::ImmediateSingularity);
    }
    let orbit = forward_orbit(table, x, n_pullback)?;
    let mut r_s = delta_target;
    let mut limiting_step = 0;
    for k in 1..=n_pullback {
        let z = singularity::z_tub(table, &involution(table, &orbit[k]))
            .map(|t| t.value)
            .unwrap_or(0.0);
        let kap = kappa_zero_at(table, &orbit[k], k)?;
        if z * kap < r_s {
            r_s = z * kap;
            limiting_step = k;
        }
    }
    let curvature = if n_pullback == 0 {
        -1e-6
    } else {
        let rec = expansion(table, &involution(table, &orbit[n_pullback]), n_pullback, 1e-6)?;
        -rec.final_curvature
    };
    let base = dynamics::to_flow(table, x)?;
    Ok(StableEstimate {
        front: WaveFront::new(base, curvature, r_s),
        r_s,
        limiting_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables;

    fn sinai_period_two() -> (Table, CollisionCoord) {
        let t = tables::sinai();
        let r = t.nearest_r(Vec2::new(0.9, 0.5));
        (t, CollisionCoord { component: 0, r, phi: 0.0, material: true })
    }

    #[test]
    fn free_flight_examples() {
        let f = WaveFront::flat(FlowPoint::new(Vec2::ZERO, Vec2::new(1.0, 0.0)));
        let (g, k) = propagate_free(&f, 3.0).unwrap();
        assert_eq!((g.curvature, k), (0.0, 1.0));
        let (g, k) = propagate_free(&WaveFront { curvature: 5.0, ..f }, 0.2).unwrap();
        assert!((g.curvature - 2.5).abs() < 1e-15 && (k - 2.0).abs() < 1e-15);
        let (g, k) = propagate_free(&WaveFront { curvature: 1.0, ..f }, 1.0).unwrap();
        assert!((g.curvature - 0.5).abs() < 1e-15 && (k - 2.0).abs() < 1e-15);
        assert!(matches!(
            propagate_free(&WaveFront { curvature: -2.0, ..f }, 0.5),
            Err(WavefrontError::FocalPoint(_))
        ));
    }

    #[test]
    fn collision_examples() {
        assert_eq!(kick(0.0, 2.5, 0.0).unwrap(), 5.0);
        assert_eq!(kick(0.0, 0.0, 0.7).unwrap(), 0.0);
        assert!((kick(1.0, 1.0, std::f64::consts::FRAC_PI_3).unwrap() - 5.0).abs() < 1e-14);
        assert!(matches!(
            kick(0.0, 1.0, std::f64::consts::FRAC_PI_2),
            Err(WavefrontError::GrazingCollision(_))
        ));
    }

    #[test]
    fn period_two_expansion() {
        let (t, x) = sinai_period_two();
        // wall crossing then disk: flat front, no expansion yet
        let rec = expansion(&t, &x, 2, 0.0).unwrap();
        assert!((rec.jacobian - 1.0).abs() < 1e-15);
        assert!((rec.final_curvature - 5.0).abs() < 1e-12);
        // next disk-to-disk leg doubles the front
        let rec = expansion(&t, &x, 4, 0.0).unwrap();
        assert!((rec.jacobian - 2.0).abs() < 1e-12);
        assert_eq!(expansion(&t, &x, 0, 0.0).unwrap().jacobian, 1.0);
    }

    #[test]
    fn square_never_expands_flat_fronts() {
        let t = tables::square();
        let x = CollisionCoord { component: 0, r: 0.3, phi: 0.4, material: true };
        let rec = expansion(&t, &x, 15, 0.0).unwrap();
        assert!((rec.jacobian - 1.0).abs() < 1e-15);
        let k = kappa(&t, &x, 7, 1e-3, &KappaGrid::default()).unwrap();
        assert_eq!((k.zero, k.delta), (1.0, 1.0));
    }

    #[test]
    fn two_ray_matches_kick_on_period_two() {
        let (t, x) = sinai_period_two();
        let wall = dynamics::collision_map(&t, &x).unwrap();
        // flat front arriving at the disk through the wall
        let (d, b) = two_ray_step(&t, &wall, 0.0, 1e-7).unwrap();
        assert!((d - 1.0).abs() < 1e-6);
        assert!((b - 5.0).abs() < 1e-5, "{b}");
    }

    #[test]
    fn two_ray_matches_free_flight_factor() {
        let (t, x) = sinai_period_two();
        let rec = expansion(&t, &x, 1, 3.0).unwrap();
        let (d, _) = two_ray_step(&t, &x, 3.0, 1e-7).unwrap();
        assert!((d - rec.jacobian).abs() < 1e-6 * rec.jacobian);
    }

    #[test]
    fn kappa_bounds_on_period_two() {
        let (t, x) = sinai_period_two();
        let k = kappa(&t, &x, 2, 1e-3, &KappaGrid::default()).unwrap();
        assert!(1.0 <= k.delta && k.delta <= k.zero);
        let k4 = kappa(&t, &x, 4, 1e-3, &KappaGrid::default()).unwrap();
        assert!((k4.zero - 2.0).abs() < 1e-12);
        assert!(k4.zero >= k.zero);
    }

    #[test]
    fn expansion_csv() {
        let (t, x) = sinai_period_two();
        let rec = expansion(&t, &x, 4, 0.0).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("leg,t,B_before,B_after,factor"));
    }
}
