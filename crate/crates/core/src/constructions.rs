//! Geometric constructions behind the tail bound, made executable: the
//! divergent-front embedding of two nearby phase points, the synchronized
//! frame around a bad point, the strip swept by a synchronized front, and
//! the constant-velocity foliation around a singularity curve.
//!
//! Positions in frames and strips live in the universal cover of the table
//! (the plane itself for planar tables), so that paths stay continuous
//! across transparent walls.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, coord_of, reflect, CollisionCoord, DynamicsError, FlowPoint, TANGENCY_TOL};
use crate::geometry::{Ambient, Shape, Table};
use crate::singularity::SingularityCurve;
use crate::vec2::Vec2;
use crate::wavefront::WaveFront;

/// Multiple of `ε0` used as the embedding radius in the short-range case.
pub const EMBED_SCALE: f64 = 5000.0;
/// Bound on the embedding time shifts, as a multiple of `ε0`.
pub const EMBED_BOUND: f64 = 10000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructionError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("no singular endpoint within distance {0}")]
    NoSingularEndpoint(f64),
    #[error("front sample {sample} breaks at collision {step}")]
    SmoothnessBroken { sample: usize, step: usize },
    #[error("footpoint starts outside the strip")]
    StartOutside,
    #[error("orbit crosses the {edge:?} edge at t = {time}")]
    EdgeCrossing { time: f64, edge: Edge },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edge {
    /// The edge trajectory through the synchronized base point.
    Base,
    /// The edge trajectory through the singular endpoint.
    Endpoint,
}

// ---------------------------------------------------------------------------
// Embedding of two phase points in one divergent front

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingCase {
    /// Lines meet far behind the points; the first point stays put.
    Far,
    /// Lines meet close behind; both points move out to a fixed radius.
    Near,
    /// Equal velocities: the common front is a straight line.
    DegenerateFlat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Carrier {
    Circle { center: Vec2, radius: f64 },
    Line { point: Vec2, normal: Vec2 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub tau1: f64,
    pub tau2: f64,
    pub carrier: Carrier,
    pub case: EmbeddingCase,
    /// Shifted positions `q_i + τ_i v_i`.
    pub p1: Vec2,
    pub p2: Vec2,
}

impl Embedding {
    /// Largest deviation of the shifted points from the carrier, and of
    /// their velocities from its outward normal.
    pub fn residuals(&self, v1: Vec2, v2: Vec2) -> (f64, f64) {
        match self.carrier {
            Carrier::Circle { center, radius } => {
                let on = |p: Vec2| ((p - center).norm() - radius).abs();
                let align = |p: Vec2, v: Vec2| ((p - center) / (p - center).norm() - v).norm();
                (
                    on(self.p1).max(on(self.p2)),
                    align(self.p1, v1).max(align(self.p2, v2)),
                )
            }
            Carrier::Line { point, normal } => {
                let on = |p: Vec2| (p - point).dot(normal).abs();
                (
                    on(self.p1).max(on(self.p2)),
                    (v1 - normal).norm().max((v2 - normal).norm()),
                )
            }
        }
    }

    /// Curvature of the common front; positive means divergent.
    pub fn curvature(&self) -> f64 {
        match self.carrier {
            Carrier::Circle { radius, .. } => 1.0 / radius,
            Carrier::Line { .. } => 0.0,
        }
    }
}

/// Time shifts placing `(q1, v1)` and `(q2, v2)` on a common divergent front.
///
/// With the lines `q_i + t v_i` meeting at `O` and `q_i = O + t_i v_i`, the
/// front is the circle about `O` through the farther point when the lines
/// meet at least `5000 ε0` behind it, and the circle of radius `5000 ε0`
/// otherwise. Parallel velocities give a flat front.
pub fn embed_pair(q1: Vec2, v1: Vec2, q2: Vec2, v2: Vec2, eps0: f64) -> Result<Embedding, ConstructionError> {
    let dq = q1 - q2;
    let dv = v1 - v2;
    if !(eps0 > 0.0) {
        return Err(ConstructionError::PreconditionViolated(format!("ε0 = {eps0}")));
    }
    if dq.norm() >= eps0 || dv.norm() >= eps0 {
        return Err(ConstructionError::PreconditionViolated(format!(
            "points not ε0-close: |Δq| = {}, |Δv| = {}",
            dq.norm(),
            dv.norm()
        )));
    }
    let sp = dq.dot(dv);
    // rounding in the product is of order eps * |Δq| |Δv|
    if sp < -1e-15 * eps0 * eps0 {
        return Err(ConstructionError::PreconditionViolated(format!(
            "<Δq, Δv> = {sp} is negative"
        )));
    }
    let c = v1.cross(v2);
    if c.abs() < 1e-14 {
        // equal velocities in the limit: both points on the line orthogonal to v1
        let tau2 = dq.dot(v1);
        return Ok(Embedding {
            tau1: 0.0,
            tau2,
            carrier: Carrier::Line { point: q1, normal: v1 },
            case: EmbeddingCase::DegenerateFlat,
            p1: q1,
            p2: q2 + v2 * tau2,
        });
    }
    let t1 = dq.cross(v2) / c;
    let t2 = dq.cross(v1) / c;
    let origin = q1 - v1 * t1;
    // relabel so that the first point lies ahead of O
    let swap = t1 < 0.0;
    let (ta, tb) = if swap { (t2, t1) } else { (t1, t2) };
    let a = EMBED_SCALE * eps0;
    let (tau_a, tau_b, radius, case) = if ta >= a {
        (0.0, ta - tb, ta, EmbeddingCase::Far)
    } else {
        (a - ta, a - tb, a, EmbeddingCase::Near)
    };
    let (tau1, tau2) = if swap { (tau_b, tau_a) } else { (tau_a, tau_b) };
    Ok(Embedding {
        tau1,
        tau2,
        carrier: Carrier::Circle { center: origin, radius },
        case,
        p1: q1 + v1 * tau1,
        p2: q2 + v2 * tau2,
    })
}

// ---------------------------------------------------------------------------
// Material collisions traced in the universal cover

/// Hits with `cos φ` below this are treated as grazing touches when the
/// tracer is asked to let tangencies through.
const GRAZE_COS: f64 = 1e-6;
/// Distance by which a grazing line is pushed into an obstacle so the touch
/// registers as a (vanishingly deflecting) collision.
const GRAZE_NUDGE: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq)]
struct CoverHit {
    /// Flight time since the start of the trace.
    time: f64,
    point: Vec2,
    component: usize,
    cell: [i64; 2],
    coord: CollisionCoord,
    v_out: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum BreakKind {
    Tangency { center: Vec2, radius: f64 },
    Corner,
    Outside,
}

/// Where and how a traced ray stopped being regular.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Break {
    step: usize,
    kind: BreakKind,
    point: Vec2,
    component: usize,
    time: f64,
}

fn cell_size(table: &Table) -> Option<Vec2> {
    match table.ambient {
        Ambient::Torus { width, height } => Some(Vec2::new(width, height)),
        Ambient::Plane => None,
    }
}

fn cell_of(table: &Table, p: Vec2) -> [i64; 2] {
    match cell_size(table) {
        Some(c) => [(p.x / c.x).floor() as i64, (p.y / c.y).floor() as i64],
        None => [0, 0],
    }
}

fn cell_origin(table: &Table, cell: [i64; 2]) -> Vec2 {
    match cell_size(table) {
        Some(c) => Vec2::new(cell[0] as f64 * c.x, cell[1] as f64 * c.y),
        None => Vec2::ZERO,
    }
}

/// Whether a cover position lies in the open table.
fn inside(table: &Table, p: Vec2) -> bool {
    table.contains(p - cell_origin(table, cell_of(table, p)))
}

/// First material hit of the ray `p + t d` in the cover. `skip` lists
/// components ignored inside the starting cell.
fn cast_cover(table: &Table, p: Vec2, d: Vec2, skip: &[usize]) -> Option<(dynamics::RayHit, [i64; 2])> {
    let mut ignore: Vec<usize> = table.transparent_walls().map(|c| c.id).collect();
    let Some(size) = cell_size(table) else {
        ignore.extend_from_slice(skip);
        return dynamics::cast(table, p, d, &ignore).map(|h| (h, [0, 0]));
    };
    let walls = ignore.len();
    ignore.extend_from_slice(skip);
    let mut cell = cell_of(table, p);
    let mut t0 = 0.0;
    // a ray in a bounded cell pattern meets an obstacle after finitely many
    // cells unless it runs along an open corridor
    for _ in 0..10_000 {
        let origin = cell_origin(table, cell);
        let local = p + d * t0 - origin;
        let exit_x = if d.x > 0.0 {
            (size.x - local.x) / d.x
        } else if d.x < 0.0 {
            -local.x / d.x
        } else {
            f64::INFINITY
        };
        let exit_y = if d.y > 0.0 {
            (size.y - local.y) / d.y
        } else if d.y < 0.0 {
            -local.y / d.y
        } else {
            f64::INFINITY
        };
        let exit = exit_x.min(exit_y).max(0.0);
        if let Some(mut hit) = dynamics::cast(table, local, d, &ignore) {
            if hit.t <= exit + 1e-15 {
                hit.t += t0;
                hit.point = hit.point + origin;
                return Some((hit, cell));
            }
        }
        // leaving the starting cell: obstacles there are other images now
        ignore.truncate(walls);
        let tol = 1e-12 * exit.max(1.0);
        if (exit_x - exit).abs() <= tol {
            cell[0] += d.x.signum() as i64;
        }
        if (exit_y - exit).abs() <= tol {
            cell[1] += d.y.signum() as i64;
        }
        t0 += exit;
    }
    None
}

/// Traces `steps` material collisions of the flow from a cover point.
/// Tangential hits either stop the trace or, with `pass_grazing`, count as
/// collisions without deflection.
fn trace_cover(
    table: &Table,
    start: &FlowPoint,
    skip: &[usize],
    steps: usize,
    pass_grazing: bool,
) -> Result<Vec<CoverHit>, Break> {
    let mut hits = Vec::with_capacity(steps);
    let mut q = start.q;
    let mut v = start.v;
    let mut time = 0.0;
    let mut skip_now: Vec<usize> = skip.to_vec();
    for step in 1..=steps {
        let Some((hit, cell)) = cast_cover(table, q, v, &skip_now) else {
            return Err(Break { step, kind: BreakKind::Outside, point: q, component: usize::MAX, time });
        };
        time += hit.t;
        let c = &table.components[hit.component];
        let origin = cell_origin(table, cell);
        let at_end = c.length - hit.s < dynamics::CORNER_TOL;
        if (at_end || hit.s < dynamics::CORNER_TOL)
            && !c.is_full_circle()
            && table.corner_of(c.id, at_end).is_some()
        {
            return Err(Break { step, kind: BreakKind::Corner, point: hit.point, component: c.id, time });
        }
        let n = c.normal_local(hit.s);
        let cos = -v.dot(n);
        let grazing = if pass_grazing { cos < GRAZE_COS } else { cos < TANGENCY_TOL };
        let v_out = if grazing {
            if !pass_grazing {
                let Shape::Arc { center, radius, .. } = c.shape else {
                    unreachable!("segments are never hit tangentially")
                };
                return Err(Break {
                    step,
                    kind: BreakKind::Tangency { center: center + origin, radius },
                    point: hit.point,
                    component: c.id,
                    time,
                });
            }
            v
        } else {
            reflect(v, n)
        };
        hits.push(CoverHit {
            time,
            point: hit.point,
            component: c.id,
            cell,
            coord: coord_of(table, c.id, hit.s, v_out),
            v_out,
        });
        q = hit.point;
        v = v_out;
        skip_now = vec![c.id];
    }
    Ok(hits)
}

fn signature(hits: &[CoverHit]) -> Vec<(usize, [i64; 2])> {
    hits.iter().map(|h| (h.component, h.cell)).collect()
}

/// Singular point separating a regular trace from a neighbouring one that
/// broke or changed combinatorics at `step`.
fn separating_singularity(
    table: &Table,
    regular: &[CoverHit],
    beyond: &Result<Vec<CoverHit>, Break>,
    step: usize,
) -> Break {
    let beyond_hit = match beyond {
        Err(b) => return *b,
        Ok(h) => h[step - 1],
    };
    let reg_hit = regular[step - 1];
    // the nearly tangential one of the two hits marks a tangency
    for h in [reg_hit, beyond_hit] {
        let c = &table.components[h.component];
        if let Shape::Arc { center, radius, .. } = c.shape {
            if h.coord.phi.cos() < 1e-4 {
                return Break {
                    step,
                    kind: BreakKind::Tangency { center: center + cell_origin(table, h.cell), radius },
                    point: h.point,
                    component: c.id,
                    time: h.time,
                };
            }
        }
    }
    // otherwise the rays straddle a corner
    let mut best = (f64::INFINITY, reg_hit.point);
    for h in [reg_hit, beyond_hit] {
        let origin = cell_origin(table, h.cell);
        for k in &table.corners {
            let d = (k.point + origin).dist(h.point);
            if d < best.0 {
                best = (d, k.point + origin);
            }
        }
    }
    Break {
        step,
        kind: BreakKind::Corner,
        point: best.1,
        component: reg_hit.component,
        time: reg_hit.time,
    }
}

// ---------------------------------------------------------------------------
// Synchronized frame around a bad point

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMode {
    /// The endpoint's backward link ends on a singularity.
    PostSingular,
    /// No synchronization works; the endpoint's forward link grazes.
    PreTangency,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineSegment {
    pub a: Vec2,
    pub b: Vec2,
}

impl LineSegment {
    pub fn direction(&self) -> Vec2 {
        (self.b - self.a).normalized()
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    /// Largest admissible distance from the base point to the singular
    /// endpoint along the front.
    pub z_max: f64,
    /// Curvature of the synchronized front; defaults to half the inverse
    /// free flight of the link.
    pub front_curvature: Option<f64>,
    /// Smallest synchronization time tried, relative to the free flight.
    pub min_fraction: f64,
    /// Probes per side before bisecting for the endpoint.
    pub probes: usize,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            z_max: 1e-2,
            front_curvature: None,
            min_fraction: 1e-9,
            probes: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncFrame {
    pub n: usize,
    pub mode: FrameMode,
    pub epsilon1: f64,
    /// Free flight of the link `T^n x -> T^{n+1} x`.
    pub flight: f64,
    pub x_eps1: FlowPoint,
    pub x1: FlowPoint,
    pub front_curvature: f64,
    /// Signed arc length from `x_eps1` to `x1` along the front.
    pub z: f64,
    /// Singular point on `h`: the tangency or corner the line emanates from.
    pub anchor: Vec2,
    pub h: LineSegment,
    pub q3: Vec2,
    pub x3: FlowPoint,
    pub q3_tilde: Option<Vec2>,
    pub v3: Option<Vec2>,
    pub eta: Option<f64>,
    /// `-x`, around which the strip must land.
    pub target: CollisionCoord,
}

impl SyncFrame {
    /// Completes a frame from the front, its endpoint and the line `h`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_geometry(
        n: usize,
        mode: FrameMode,
        epsilon1: f64,
        flight: f64,
        x_eps1: FlowPoint,
        front_curvature: f64,
        z: f64,
        anchor: Vec2,
        h: LineSegment,
        target: CollisionCoord,
    ) -> Self {
        let front = WaveFront::new(x_eps1, front_curvature, z.abs());
        let x1 = front.point_at(z);
        let v = x_eps1.v;
        let q3 = anchor + v * (x_eps1.q - anchor).dot(v);
        let rho = 1.0 / front_curvature;
        let center = x_eps1.q - v * rho;
        let b = (anchor - center).dot(v);
        let cc = (anchor - center).norm_sq() - rho * rho;
        let disc = b * b - cc;
        let (q3_tilde, v3, eta) = if disc >= 0.0 && front_curvature > 0.0 {
            let qt = anchor + v * (-b + disc.sqrt());
            (Some(qt), Some((qt - center) / rho), Some((q3 - qt).dot(v)))
        } else {
            (None, None, None)
        };
        Self {
            n,
            mode,
            epsilon1,
            flight,
            x_eps1,
            x1,
            front_curvature,
            z,
            anchor,
            h,
            q3,
            x3: FlowPoint::new(q3, v),
            q3_tilde,
            v3,
            eta,
            target,
        }
    }

    pub fn front(&self) -> WaveFront {
        WaveFront::new(self.x_eps1, self.front_curvature, self.z.abs())
    }

    /// Cosine between the segment `q_eps1 - q3` and `h`; zero when the
    /// projection is orthogonal.
    pub fn perpendicularity_residual(&self) -> f64 {
        let w = self.x_eps1.q - self.q3;
        let len = w.norm();
        if len == 0.0 {
            return 0.0;
        }
        (w.dot(self.h.direction()) / len).abs()
    }
}

/// How a probe of the front failed.
struct Failure {
    /// The reversed point (the `T^{-1}` side) broke.
    back: bool,
    brk: Break,
}

struct FrameProbe<'a> {
    table: &'a Table,
    steps: usize,
    fwd_sig: Vec<(usize, [i64; 2])>,
    back_sig: Vec<(usize, [i64; 2])>,
}

type Traces = (Vec<CoverHit>, Vec<CoverHit>);

impl FrameProbe<'_> {
    fn traces(&self, w: &FlowPoint) -> (Result<Vec<CoverHit>, Break>, Result<Vec<CoverHit>, Break>) {
        (
            trace_cover(self.table, &w.reversed(), &[], 1, false),
            trace_cover(self.table, w, &[], self.steps, false),
        )
    }

    fn regular(&self, w: &FlowPoint) -> Option<Traces> {
        if !inside(self.table, w.q) {
            return None;
        }
        let (back, fwd) = self.traces(w);
        match (back, fwd) {
            (Ok(b), Ok(f)) if signature(&b) == self.back_sig && signature(&f) == self.fwd_sig => Some((b, f)),
            _ => None,
        }
    }

    /// Failure at `w` given the traces of a nearby regular point.
    fn failure(&self, w: &FlowPoint, reg: &Traces) -> Failure {
        if !inside(self.table, w.q) {
            return Failure {
                back: false,
                brk: Break { step: 0, kind: BreakKind::Outside, point: w.q, component: usize::MAX, time: 0.0 },
            };
        }
        let (back, fwd) = self.traces(w);
        let first_diff = |res: &Result<Vec<CoverHit>, Break>, sig: &[(usize, [i64; 2])]| match res {
            Err(b) => Some(b.step),
            Ok(h) => signature(h).iter().zip(sig).position(|(a, b)| a != b).map(|i| i + 1),
        };
        if let Some(step) = first_diff(&back, &self.back_sig) {
            return Failure { back: true, brk: separating_singularity(self.table, &reg.0, &back, step) };
        }
        let step = first_diff(&fwd, &self.fwd_sig).unwrap_or(1);
        Failure { back: false, brk: separating_singularity(self.table, &reg.1, &fwd, step) }
    }
}

/// Nearest failure along one side of the front: arc length of the last
/// regular point and the failure just beyond it.
fn endpoint_search(probe: &FrameProbe, front: &WaveFront, side: f64, cfg: &SyncConfig) -> Option<(f64, Failure)> {
    let mut lo = 0.0;
    let mut hi = None;
    for k in 1..=cfg.probes {
        let s = cfg.z_max * k as f64 / cfg.probes as f64;
        if probe.regular(&front.point_at(side * s)).is_none() {
            hi = Some(s);
            break;
        }
        lo = s;
    }
    let mut hi = hi?;
    for _ in 0..80 {
        if hi - lo <= 1e-15 * hi.max(1e-300) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if probe.regular(&front.point_at(side * mid)).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // keep the endpoint strictly on the regular side
    let s = lo * (1.0 - 1e-9);
    let reg = probe.regular(&front.point_at(side * s))?;
    Some((s, probe.failure(&front.point_at(side * hi), &reg)))
}

/// Builds the synchronized frame for `x` at depth `n`.
///
/// The synchronization time `ε1` is scanned over `τ/2, τ/4, …` down to
/// `cfg.min_fraction · τ`; the first front whose nearest non-smooth endpoint
/// is a singularity of the backward link wins. If none exists but an
/// endpoint grazes on its forward link, the frame is built in the
/// pre-tangency mode from the largest such `ε1`.
pub fn build_sync_frame(
    table: &Table,
    x: &CollisionCoord,
    n: usize,
    cfg: &SyncConfig,
) -> Result<SyncFrame, ConstructionError> {
    let mut y = *x;
    for _ in 0..n {
        y = dynamics::material_map(table, &y)?;
    }
    let start = dynamics::to_flow(table, &y)?;
    let (_, flight) = dynamics::material_step(table, &y)?;
    let curvature = cfg.front_curvature.unwrap_or(0.5 / flight);
    let target = dynamics::involution(table, x);
    let mut fallback: Option<(f64, FlowPoint, f64, Break)> = None;
    let mut eps1 = 0.5 * flight;
    while eps1 >= cfg.min_fraction * flight {
        let base = FlowPoint::new(start.q + start.v * eps1, -start.v);
        let front = WaveFront::new(base, curvature, cfg.z_max);
        let (Ok(back), Ok(fwd)) = (
            trace_cover(table, &base.reversed(), &[], 1, false),
            trace_cover(table, &base, &[], n + 1, false),
        ) else {
            eps1 *= 0.5;
            continue;
        };
        let probe = FrameProbe { table, steps: n + 1, fwd_sig: signature(&fwd), back_sig: signature(&back) };
        let sides: Vec<(f64, f64, Failure)> = [1.0, -1.0]
            .into_iter()
            .filter_map(|side| endpoint_search(&probe, &front, side, cfg).map(|(s, f)| (side, s, f)))
            .collect();
        let post = sides
            .iter()
            .filter(|(_, _, f)| f.back && !matches!(f.brk.kind, BreakKind::Outside))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some(&(side, s, ref f)) = post {
            let v = base.v;
            let (anchor, skip) = match f.brk.kind {
                BreakKind::Tangency { center, radius } => {
                    let m = v.perp() * (f.brk.point - center).dot(v.perp()).signum();
                    (center + m * radius, vec![f.brk.component])
                }
                _ => (f.brk.point, corner_components(table, f.brk.point)),
            };
            let len = cast_cover(table, anchor, v, &skip).map_or(1e3, |(h, _)| h.t);
            let h = LineSegment { a: anchor, b: anchor + v * len };
            return Ok(SyncFrame::from_geometry(
                n,
                FrameMode::PostSingular,
                eps1,
                flight,
                base,
                curvature,
                side * s,
                anchor,
                h,
                target,
            ));
        }
        if fallback.is_none() {
            let pre = sides.iter().find(|(_, _, f)| {
                !f.back && f.brk.step == 1 && matches!(f.brk.kind, BreakKind::Tangency { .. })
            });
            if let Some(&(side, s, ref f)) = pre {
                fallback = Some((eps1, base, side * s, f.brk));
            }
        }
        eps1 *= 0.5;
    }
    let Some((eps1, base, z, brk)) = fallback else {
        return Err(ConstructionError::NoSingularEndpoint(cfg.z_max));
    };
    let BreakKind::Tangency { center, radius } = brk.kind else {
        unreachable!("fallback is only recorded for tangencies")
    };
    let v = base.v;
    let m = v.perp() * (brk.point - center).dot(v.perp()).signum();
    let anchor = center + m * radius;
    let skip = [brk.component];
    let ahead = cast_cover(table, anchor, v, &skip).map_or(1e3, |(h, _)| h.t);
    let behind = cast_cover(table, anchor, -v, &skip).map_or(1e3, |(h, _)| h.t);
    let h = LineSegment { a: anchor - v * behind, b: anchor + v * ahead };
    let mut frame = SyncFrame::from_geometry(
        n,
        FrameMode::PreTangency,
        eps1,
        flight,
        base,
        curvature,
        z,
        anchor,
        h,
        target,
    );
    // x3 runs along a tangent line; push it onto the obstacle so the touch
    // is traced as the grazing limit of reflections
    frame.x3.q = frame.x3.q - m * GRAZE_NUDGE;
    Ok(frame)
}

/// Material components meeting at the corner closest to a cover point.
fn corner_components(table: &Table, p: Vec2) -> Vec<usize> {
    let local = p - cell_origin(table, cell_of(table, p));
    table
        .corners
        .iter()
        .min_by(|a, b| a.point.dist(local).total_cmp(&b.point.dist(local)))
        .map(|k| vec![k.incoming, k.outgoing])
        .unwrap_or_default()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmfReport {
    /// `<q1 - q3, v1 - v_eps1>`.
    pub endpoint: f64,
    /// `<q_eps1 - q3, v_eps1 - v_eps1>`, zero by construction.
    pub base: f64,
    /// `<q1 - q̃3, v3 - v_eps1>`.
    pub chain_outer: f64,
    /// `<q1 - q̃3, v1 - v3>`.
    pub chain_inner: f64,
    pub holds: bool,
}

/// Evaluates the scalar-product conditions on a frame, including the
/// intermediate inequalities through `q̃3` and `v3` when available.
pub fn lmf_check(frame: &SyncFrame) -> LmfReport {
    let q1 = frame.x1.q;
    let v1 = frame.x1.v;
    let qe = frame.x_eps1.q;
    let ve = frame.x_eps1.v;
    let endpoint = (q1 - frame.q3).dot(v1 - ve);
    let base = (qe - frame.q3).dot(ve - ve);
    let (chain_outer, chain_inner) = match (frame.q3_tilde, frame.v3) {
        (Some(qt), Some(v3)) => ((q1 - qt).dot(v3 - ve), (q1 - qt).dot(v1 - v3)),
        _ => (0.0, 0.0),
    };
    let tol = -1e-12;
    LmfReport {
        endpoint,
        base,
        chain_outer,
        chain_inner,
        holds: endpoint >= tol && base >= tol && chain_outer >= tol && chain_inner >= tol,
    }
}

// ---------------------------------------------------------------------------
// The strip swept by the synchronized front

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripConfig {
    /// Front samples; the strip is the ribbon of their footpoint paths.
    pub samples: usize,
    /// Radius of the landing neighbourhood around the frame target.
    pub u0_radius: f64,
}

impl Default for StripConfig {
    fn default() -> Self {
        Self { samples: 200, u0_radius: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripSample {
    /// Arc length along the front.
    pub s: f64,
    /// Footpoint path in the cover: start, then every collision.
    pub path: Vec<Vec2>,
    pub times: Vec<f64>,
    pub landing: CollisionCoord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StripRegion {
    pub n: usize,
    pub mode: FrameMode,
    /// Ordered from the base edge (`x_eps1`) to the endpoint edge (`x1`).
    pub samples: Vec<StripSample>,
    pub landing_monotone: bool,
    pub landings_in_u0: bool,
    pub target: CollisionCoord,
    pub u0_radius: f64,
    /// Area of the ribbon, leg by leg.
    pub area: f64,
}

impl StripRegion {
    pub fn edge(&self, e: Edge) -> &StripSample {
        match e {
            Edge::Base => &self.samples[0],
            Edge::Endpoint => &self.samples[self.samples.len() - 1],
        }
    }

    /// Whether a cover point lies in the first leg of the strip, between the
    /// front and the first collisions.
    pub fn first_leg_contains(&self, p: Vec2) -> bool {
        let mut poly: Vec<Vec2> = self.samples.iter().map(|s| s.path[0]).collect();
        poly.extend(self.samples.iter().rev().map(|s| s.path[1]));
        point_in_polygon(p, &poly)
    }
}

fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x) {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn quad_area(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> f64 {
    0.5 * ((c - a).cross(d - b)).abs()
}

fn monotone(values: &[f64]) -> bool {
    let tol = 1e-12;
    let up = values.windows(2).all(|w| w[1] >= w[0] - tol);
    let down = values.windows(2).all(|w| w[1] <= w[0] + tol);
    up || down
}

/// Discretizes the front of `frame` into `cfg.samples` intervals and flows
/// every sample to its `(n+1)`-st collision.
pub fn build_strip(table: &Table, frame: &SyncFrame, cfg: &StripConfig) -> Result<StripRegion, ConstructionError> {
    let front = frame.front();
    let steps = frame.n + 1;
    let count = cfg.samples.max(1);
    let mut samples = Vec::with_capacity(count + 1);
    let mut reference = None;
    for i in 0..=count {
        let s = frame.z * i as f64 / count as f64;
        let w = if i == count { frame.x1 } else { front.point_at(s) };
        let hits = trace_cover(table, &w, &[], steps, false)
            .map_err(|b| ConstructionError::SmoothnessBroken { sample: i, step: b.step })?;
        let sig = signature(&hits);
        match &reference {
            None => reference = Some(sig),
            Some(r) => {
                if let Some(k) = sig.iter().zip(r).position(|(a, b)| a != b) {
                    return Err(ConstructionError::SmoothnessBroken { sample: i, step: k + 1 });
                }
            }
        }
        let mut path = vec![w.q];
        path.extend(hits.iter().map(|h| h.point));
        let mut times = vec![0.0];
        times.extend(hits.iter().map(|h| h.time));
        samples.push(StripSample { s, path, times, landing: hits[steps - 1].coord });
    }
    let first = samples[0].landing;
    let len = table.components[first.component].length;
    let full = table.components[first.component].is_full_circle();
    let dr: Vec<f64> = samples
        .iter()
        .map(|s| {
            let d = s.landing.r - first.r;
            if full {
                d - len * (d / len).round()
            } else {
                d
            }
        })
        .collect();
    let phi: Vec<f64> = samples.iter().map(|s| s.landing.phi).collect();
    let landings_in_u0 = samples
        .iter()
        .all(|s| dynamics::phase_distance(table, &s.landing, &frame.target) <= cfg.u0_radius);
    let mut area = 0.0;
    for pair in samples.windows(2) {
        for k in 0..steps {
            area += quad_area(pair[0].path[k], pair[1].path[k], pair[1].path[k + 1], pair[0].path[k + 1]);
        }
    }
    Ok(StripRegion {
        n: frame.n,
        mode: frame.mode,
        samples,
        landing_monotone: monotone(&dr) && monotone(&phi),
        landings_in_u0,
        target: frame.target,
        u0_radius: cfg.u0_radius,
        area,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Containment {
    pub start_inside: bool,
    /// Time at which an orbit starting outside enters the strip.
    pub entered_at: Option<f64>,
    /// Smallest distance between the orbit and the edge paths, leg by leg.
    pub min_edge_distance: f64,
    pub landing: CollisionCoord,
    /// The landing lies between the landings of the two edges.
    pub landing_between: bool,
    pub landed_in_u0: bool,
}

impl Containment {
    pub fn contained(&self) -> bool {
        (self.start_inside || self.entered_at.is_some()) && self.landing_between && self.landed_in_u0
    }
}

/// Parameter along `p0 -> p1` where it properly crosses `q0 -> q1`.
fn crossing(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> Option<f64> {
    let r = p1 - p0;
    let s = q1 - q0;
    let den = r.cross(s);
    if den == 0.0 {
        return None;
    }
    let t = (q0 - p0).cross(s) / den;
    let u = (q0 - p0).cross(r) / den;
    (t > 0.0 && t < 1.0 && u > 0.0 && u < 1.0).then_some(t)
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let e = b - a;
    let l = e.norm_sq();
    if l == 0.0 {
        return p.dist(a);
    }
    let t = ((p - a).dot(e) / l).clamp(0.0, 1.0);
    p.dist(a + e * t)
}

fn segment_distance(p0: Vec2, p1: Vec2, q0: Vec2, q1: Vec2) -> f64 {
    if crossing(p0, p1, q0, q1).is_some() {
        return 0.0;
    }
    point_segment_distance(p0, q0, q1)
        .min(point_segment_distance(p1, q0, q1))
        .min(point_segment_distance(q0, p0, p1))
        .min(point_segment_distance(q1, p0, p1))
}

/// Follows `x3` to its `(n+1)`-st collision and checks that its footpoint
/// path never crosses the edge paths of the strip (leg by leg, since legs
/// of neighbouring paths cross near reflections without meeting in phase
/// space). In the pre-tangency mode the orbit may start outside and enter
/// through the first leg.
pub fn strip_contains_orbit(
    table: &Table,
    strip: &StripRegion,
    x3: &FlowPoint,
) -> Result<Containment, ConstructionError> {
    let fallback = strip.mode == FrameMode::PreTangency;
    let start_inside = strip.first_leg_contains(x3.q);
    if !start_inside && !fallback {
        return Err(ConstructionError::StartOutside);
    }
    let steps = strip.n + 1;
    let hits = trace_cover(table, x3, &[], steps, true).map_err(|b| ConstructionError::EdgeCrossing {
        time: b.time,
        edge: Edge::Endpoint,
    })?;
    let mut path = vec![x3.q];
    path.extend(hits.iter().map(|h| h.point));
    let mut times = vec![0.0];
    times.extend(hits.iter().map(|h| h.time));
    let mut entered_at = None;
    let mut min_edge_distance = f64::INFINITY;
    for k in 0..steps {
        for e in [Edge::Base, Edge::Endpoint] {
            let edge = strip.edge(e);
            let (a, b) = (edge.path[k], edge.path[k + 1]);
            if let Some(t) = crossing(path[k], path[k + 1], a, b) {
                let time = times[k] + t * (times[k + 1] - times[k]);
                if k == 0 && fallback && entered_at.is_none() {
                    entered_at = Some(time);
                    continue;
                }
                return Err(ConstructionError::EdgeCrossing { time, edge: e });
            }
            if !(k == 0 && fallback) {
                min_edge_distance = min_edge_distance.min(segment_distance(path[k], path[k + 1], a, b));
            }
        }
    }
    let landing = hits[steps - 1].coord;
    let (lo, hi) = (strip.edge(Edge::Base).landing, strip.edge(Edge::Endpoint).landing);
    let landing_between = landing.component == lo.component && {
        let len = table.components[lo.component].length;
        let rel = |r: f64| {
            let d = r - lo.r;
            if table.components[lo.component].is_full_circle() {
                d - len * (d / len).round()
            } else {
                d
            }
        };
        let (a, b) = (0.0f64, rel(hi.r));
        let r = rel(landing.r);
        r >= a.min(b) - 1e-12 && r <= a.max(b) + 1e-12
    };
    Ok(Containment {
        start_inside,
        entered_at,
        min_edge_distance,
        landing,
        landing_between,
        landed_in_u0: dynamics::phase_distance(table, &landing, &strip.target) <= strip.u0_radius,
    })
}

// ---------------------------------------------------------------------------
// Constant-velocity foliation around a singularity curve

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fiber {
    pub base: CollisionCoord,
    pub velocity: Vec2,
    /// Carrier point at `s = 0`, a fixed time along the link of `base`.
    pub origin: Vec2,
    pub sync_time: f64,
    /// Reached transversal extent on the negative and positive sides.
    pub extent: [f64; 2],
    pub truncated: bool,
    pub points: Vec<(f64, CollisionCoord)>,
}

impl Fiber {
    /// Carrier point `q(γ0(s))`.
    pub fn carrier(&self, s: f64) -> Vec2 {
        self.origin + self.velocity.perp() * s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoliationChart {
    pub curve_id: usize,
    pub eps0: f64,
    pub fibers: Vec<Fiber>,
}

/// `Ψ(y0, s)`: the collision-space point on the flow line through the
/// carrier point at `s`, or `None` once the fiber leaves the chart.
pub fn psi(table: &Table, fiber: &Fiber, s: f64) -> Option<CollisionCoord> {
    if s == 0.0 {
        return Some(fiber.base);
    }
    let p = fiber.carrier(s);
    if !inside(table, p) {
        return None;
    }
    let (hit, cell) = cast_cover(table, p, -fiber.velocity, &[])?;
    let c = &table.components[hit.component];
    let n = c.normal_local(hit.s);
    let clear_of_corners = c.is_full_circle()
        || (hit.s > dynamics::CORNER_TOL && c.length - hit.s > dynamics::CORNER_TOL);
    (hit.component == fiber.base.component
        && cell == [0, 0]
        && fiber.velocity.dot(n) > TANGENCY_TOL
        && clear_of_corners)
        .then(|| coord_of(table, c.id, hit.s, fiber.velocity))
}

/// Builds constant-velocity fibers of half-width `eps0` through the points
/// of a singularity curve, using at most `max_fibers` of them and `steps`
/// samples per side.
pub fn foliation_chart(
    table: &Table,
    curve: &SingularityCurve,
    eps0: f64,
    max_fibers: usize,
    steps: usize,
) -> Result<FoliationChart, ConstructionError> {
    if curve.points.is_empty() || max_fibers == 0 {
        return Err(ConstructionError::PreconditionViolated("empty curve".into()));
    }
    let stride = curve.points.len().div_ceil(max_fibers).max(1);
    let mut fibers = Vec::new();
    for p in curve.points.iter().step_by(stride) {
        let (component, _) = table.locate(p[0]).map_err(DynamicsError::from)?;
        let base = CollisionCoord { component, r: p[0], phi: p[1], material: table.components[component].material };
        if !base.material || base.phi.cos() <= 1e-9 {
            continue;
        }
        let flow = dynamics::to_flow(table, &base)?;
        let flight = cast_cover(table, flow.q, flow.v, &[component]).map_or(1.0, |(h, _)| h.t);
        let sync_time = 0.5 * flight;
        let mut fiber = Fiber {
            base,
            velocity: flow.v,
            origin: flow.q + flow.v * sync_time,
            sync_time,
            extent: [0.0, 0.0],
            truncated: false,
            points: vec![(0.0, base)],
        };
        for (side, sign) in [(0usize, -1.0), (1, 1.0)] {
            for j in 1..=steps {
                let s = sign * eps0 * j as f64 / steps as f64;
                match psi(table, &fiber, s) {
                    Some(c) => {
                        fiber.points.push((s, c));
                        fiber.extent[side] = s;
                    }
                    None => {
                        fiber.truncated = true;
                        break;
                    }
                }
            }
        }
        fiber.points.sort_by(|a, b| a.0.total_cmp(&b.0));
        fibers.push(fiber);
    }
    Ok(FoliationChart { curve_id: curve.id, eps0, fibers })
}

impl FoliationChart {
    /// Largest deviation of a fiber point's velocity from the fiber velocity.
    pub fn velocity_residual(&self, table: &Table) -> f64 {
        let mut worst = 0.0f64;
        for f in &self.fibers {
            for (_, c) in &f.points {
                if let Ok(x) = dynamics::to_flow(table, c) {
                    worst = worst.max((x.v - f.velocity).norm());
                }
            }
        }
        worst
    }

    /// Largest deviation of the carrier speed from one, by central
    /// differences with step `h`.
    pub fn speed_residual(&self, h: f64) -> f64 {
        let mut worst = 0.0f64;
        for f in &self.fibers {
            for (s, _) in &f.points {
                let d = f.carrier(s + h).dist(f.carrier(s - h)) / (2.0 * h);
                worst = worst.max((d - 1.0).abs());
            }
        }
        worst
    }

    /// Fibers through distinct points share no point: a shared point would
    /// force equal velocities and overlapping boundary ranges.
    pub fn fibers_disjoint(&self) -> bool {
        for (i, a) in self.fibers.iter().enumerate() {
            for b in &self.fibers[i + 1..] {
                if (a.velocity - b.velocity).norm() > 1e-12 || a.base.component != b.base.component {
                    continue;
                }
                let range = |f: &Fiber| {
                    f.points
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, c)| (lo.min(c.r), hi.max(c.r)))
                };
                let (alo, ahi) = range(a);
                let (blo, bhi) = range(b);
                if alo <= bhi && blo <= ahi && a.base != b.base {
                    return false;
                }
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Constructed bad-point fixtures

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadPointFixture {
    /// Reference table name, see [`crate::tables::by_name`].
    pub table: String,
    pub x: CollisionCoord,
    pub n: usize,
    pub sync: SyncConfig,
    pub strip: StripConfig,
}

/// `x` with `T^n x = y` under the material map.
fn pull_back(table: &Table, y: &CollisionCoord, n: usize) -> Result<CollisionCoord, DynamicsError> {
    let mut z = dynamics::involution(table, y);
    for _ in 0..n {
        z = dynamics::material_map(table, &z)?;
    }
    Ok(dynamics::involution(table, &z))
}

/// Sinai-table point whose `n`-th link leaves the disk at angle `beta` and
/// passes `gap` outside the tangency with the neighbouring disk image.
pub fn sinai_tangency_fixture(beta: f64, gap: f64, n: usize) -> Result<BadPointFixture, ConstructionError> {
    let table = crate::tables::sinai();
    let center = Vec2::new(0.5, 0.5);
    let radius = 0.4;
    let v = Vec2::from_angle(beta);
    let p0 = center + Vec2::new(1.0, 0.0) + v.perp() * (radius + gap);
    let oc = p0 - center;
    let b = oc.dot(v);
    let disc = b * b - (oc.norm_sq() - radius * radius);
    if disc <= 0.0 {
        return Err(ConstructionError::PreconditionViolated("link misses the disk".into()));
    }
    let q = p0 + v * (-b + disc.sqrt());
    let r = table.nearest_r(q);
    let phi = table.normal_at(r).map_err(DynamicsError::from)?.angle_to(v);
    let y = CollisionCoord { component: 0, r, phi, material: true };
    Ok(BadPointFixture {
        table: "sinai".into(),
        x: pull_back(&table, &y, n)?,
        n,
        sync: SyncConfig { z_max: 4.0 * gap, ..SyncConfig::default() },
        strip: StripConfig { u0_radius: 0.25, ..StripConfig::default() },
    })
}

/// Pocket-table point whose `n`-th collision sits on the pocket arc at
/// angle `a` from the corner with the right side, leaving at angle `gamma`
/// off the tangent, so nearby trajectories aimed back at it graze the arc
/// and then run into the corner region.
pub fn pocket_corner_fixture(a: f64, gamma: f64, n: usize) -> Result<BadPointFixture, ConstructionError> {
    if !(gamma > 0.0 && a > gamma) {
        return Err(ConstructionError::PreconditionViolated("need 0 < gamma < a".into()));
    }
    let table = crate::tables::pocket();
    let arc = table
        .material_components()
        .find(|c| matches!(c.shape, Shape::Arc { .. }))
        .expect("pocket has an arc");
    let Shape::Arc { radius, .. } = arc.shape else { unreachable!() };
    let s = a * radius;
    let normal = arc.normal_local(s);
    let tangent = arc.tangent_local(s);
    let v = normal * gamma.sin() + tangent * gamma.cos();
    let y = coord_of(&table, arc.id, s, v);
    Ok(BadPointFixture {
        table: "pocket".into(),
        x: pull_back(&table, &y, n)?,
        n,
        sync: SyncConfig { z_max: 1e-3, ..SyncConfig::default() },
        strip: StripConfig::default(),
    })
}

/// The standard fixture set: post-singular frames on the Sinai table and
/// pre-tangency frames in the pocket table.
pub fn bad_point_fixtures() -> Vec<BadPointFixture> {
    let mut out = Vec::new();
    for beta in [0.2, 0.25, 0.3, 0.35] {
        for gap in [2e-4, 5e-4, 1e-3] {
            if let Ok(f) = sinai_tangency_fixture(beta, gap, 1 + out.len() % 2) {
                out.push(f);
            }
        }
    }
    for a in [0.08, 0.1, 0.12, 0.15] {
        for gamma in [0.015, 0.025] {
            if let Ok(f) = pocket_corner_fixture(a, gamma, 1) {
                out.push(f);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Randomized check of the embedding

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FuzzReport {
    pub pairs: usize,
    /// Pairs breaking the shift bound or the residual tolerances.
    pub violations: usize,
    pub far: usize,
    pub near: usize,
    pub flat: usize,
    pub max_tau: f64,
    /// Largest distance to the carrier, relative to its radius.
    pub max_carrier_residual: f64,
    pub max_alignment_residual: f64,
}

/// Embeds `n` random pairs of phase points within `ε0` of each other,
/// drawn so that their lines meet anywhere from on top of the points to
/// 10 units behind them, which exercises both radius regimes.
pub fn embedding_fuzz(n: usize, eps0: f64, seed: u64) -> Result<FuzzReport, ConstructionError> {
    if !(eps0 > 0.0) {
        return Err(ConstructionError::PreconditionViolated(format!("ε0 = {eps0}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = FuzzReport::default();
    while rep.pairs < n {
        let o = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let a = rng.random_range(0.0..std::f64::consts::TAU);
        let t1: f64 = rng.random_range(0.0..10.0);
        let t2 = t1 + rng.random_range(-0.45..0.45) * eps0;
        let theta = rng.random_range(-0.45..0.45) * eps0 / t1.max(1.0);
        let (v1, v2) = (Vec2::from_angle(a), Vec2::from_angle(a + theta));
        let Ok(e) = embed_pair(o + v1 * t1, v1, o + v2 * t2, v2, eps0) else { continue };
        rep.pairs += 1;
        let radius = match e.carrier {
            Carrier::Circle { radius, .. } => radius,
            Carrier::Line { .. } => 1.0,
        };
        let (on, align) = e.residuals(v1, v2);
        let tau = e.tau1.abs().max(e.tau2.abs());
        rep.max_tau = rep.max_tau.max(tau);
        rep.max_carrier_residual = rep.max_carrier_residual.max(on / radius);
        rep.max_alignment_residual = rep.max_alignment_residual.max(align);
        if tau >= EMBED_BOUND * eps0 || on >= 1e-9 * radius || align >= 1e-9 {
            rep.violations += 1;
        }
        match e.case {
            EmbeddingCase::Far => rep.far += 1,
            EmbeddingCase::Near => rep.near += 1,
            EmbeddingCase::DegenerateFlat => rep.flat += 1,
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::singularity::{trace_sn, TraceConfig};
    use crate::tables;

    #[test]
    fn embedding_far_case() {
        let v1 = Vec2::new(1.0, 0.0);
        let v2 = Vec2::from_angle(1e-4);
        let e = embed_pair(v1 * 60.0, v1, v2 * 60.0, v2, 0.01).unwrap();
        assert_eq!(e.case, EmbeddingCase::Far);
        assert!(e.tau1.abs() < 1e-9 && e.tau2.abs() < 1e-9);
        let Carrier::Circle { radius, .. } = e.carrier else { panic!("flat") };
        assert!((radius - 60.0).abs() < 1e-9);
        let (on, align) = e.residuals(v1, v2);
        assert!(on < 1e-9 && align < 1e-9, "{on} {align}");
    }

    #[test]
    fn embedding_near_case() {
        let v1 = Vec2::new(1.0, 0.0);
        let v2 = Vec2::from_angle(1e-4);
        let e = embed_pair(v1, v1, v2, v2, 0.01).unwrap();
        assert_eq!(e.case, EmbeddingCase::Near);
        assert!((e.tau1 - 49.0).abs() < 1e-9 && (e.tau2 - 49.0).abs() < 1e-9);
        let Carrier::Circle { radius, .. } = e.carrier else { panic!("flat") };
        assert!((radius - 50.0).abs() < 1e-12);
        let (on, align) = e.residuals(v1, v2);
        assert!(on < 50.0 * 1e-9 && align < 1e-9);
    }

    #[test]
    fn embedding_identical_points_are_flat() {
        let q = Vec2::new(0.3, 0.2);
        let v = Vec2::from_angle(0.7);
        let e = embed_pair(q, v, q, v, 1e-3).unwrap();
        assert_eq!(e.case, EmbeddingCase::DegenerateFlat);
        assert_eq!((e.tau1, e.tau2), (0.0, 0.0));
        assert_eq!(e.curvature(), 0.0);
    }

    #[test]
    fn embedding_rejects_convergent_pairs() {
        let v1 = Vec2::new(1.0, 0.0);
        let v2 = Vec2::from_angle(1e-4);
        // Lines meeting ahead of the points: negative scalar product.
        let r = embed_pair(-v1 * 1.0, v1, -v2 * 1.0, v2, 0.01);
        assert!(matches!(r, Err(ConstructionError::PreconditionViolated(_))));
        let r = embed_pair(v1, v1, v1 * 2.0, v1, 0.01);
        assert!(matches!(r, Err(ConstructionError::PreconditionViolated(_))));
    }

    fn sinai_frame() -> (Table, SyncFrame, BadPointFixture) {
        let f = sinai_tangency_fixture(0.25, 5e-4, 1).unwrap();
        let t = tables::by_name(&f.table).unwrap();
        let frame = build_sync_frame(&t, &f.x, f.n, &f.sync).unwrap();
        (t, frame, f)
    }

    #[test]
    fn sinai_fixture_gives_post_singular_frame() {
        let (t, frame, f) = sinai_frame();
        assert_eq!(frame.mode, FrameMode::PostSingular);
        assert!(frame.perpendicularity_residual() < 1e-9);
        assert_eq!(frame.x3.v, frame.x_eps1.v);
        let lmf = lmf_check(&frame);
        assert!(lmf.holds, "{lmf:?}");
        assert_eq!(lmf.base, 0.0);
        let strip = build_strip(&t, &frame, &f.strip).unwrap();
        assert!(strip.landing_monotone && strip.landings_in_u0);
        let c = strip_contains_orbit(&t, &strip, &frame.x3).unwrap();
        assert!(c.contained(), "{c:?}");
    }

    #[test]
    fn regular_point_has_no_singular_endpoint() {
        let t = tables::sinai();
        let r = t.nearest_r(Vec2::new(0.9, 0.5));
        let x = CollisionCoord { component: 0, r, phi: 0.0, material: true };
        let cfg = SyncConfig { z_max: 1e-3, ..SyncConfig::default() };
        assert!(matches!(
            build_sync_frame(&t, &x, 1, &cfg),
            Err(ConstructionError::NoSingularEndpoint(_))
        ));
    }

    #[test]
    fn pocket_fixture_uses_fallback() {
        let f = pocket_corner_fixture(0.1, 0.015, 1).unwrap();
        let t = tables::by_name(&f.table).unwrap();
        let frame = build_sync_frame(&t, &f.x, f.n, &f.sync).unwrap();
        assert_eq!(frame.mode, FrameMode::PreTangency);
        assert!(frame.perpendicularity_residual() < 1e-9);
    }

    #[test]
    fn zero_width_strip_is_one_trajectory() {
        let (t, frame, f) = sinai_frame();
        let thin = SyncFrame::from_geometry(
            frame.n,
            frame.mode,
            frame.epsilon1,
            frame.flight,
            frame.x_eps1,
            frame.front_curvature,
            0.0,
            frame.anchor,
            frame.h,
            frame.target,
        );
        let strip = build_strip(&t, &thin, &f.strip).unwrap();
        assert_eq!(strip.area, 0.0);
        let first = &strip.samples[0];
        assert!(strip.samples.iter().all(|s| s.path == first.path));
    }

    #[test]
    fn strip_area_converges() {
        let (t, frame, f) = sinai_frame();
        let coarse = build_strip(&t, &frame, &StripConfig { samples: 200, ..f.strip }).unwrap();
        let fine = build_strip(&t, &frame, &StripConfig { samples: 400, ..f.strip }).unwrap();
        assert!(coarse.area > 0.0);
        assert!((coarse.area - fine.area).abs() < 0.01 * fine.area);
        let a = strip_contains_orbit(&t, &coarse, &frame.x3).unwrap();
        let b = strip_contains_orbit(&t, &fine, &frame.x3).unwrap();
        assert_eq!(a.contained(), b.contained());
    }

    #[test]
    fn start_outside_strip_is_rejected() {
        let (t, frame, f) = sinai_frame();
        let strip = build_strip(&t, &frame, &f.strip).unwrap();
        let out = frame.x1.q + (frame.x1.q - frame.x_eps1.q);
        let x = FlowPoint::new(out, frame.x_eps1.v);
        assert!(matches!(
            strip_contains_orbit(&t, &strip, &x),
            Err(ConstructionError::StartOutside)
        ));
    }

    #[test]
    fn random_convex_fronts_satisfy_lmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let v = Vec2::from_angle(rng.random_range(0.0..std::f64::consts::TAU));
            let q = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let b = rng.random_range(0.1..10.0);
            let z = rng.random_range(-0.5..0.5) / b;
            let x = FlowPoint::new(q, v);
            let x1 = WaveFront::new(x, b, z.abs()).point_at(z);
            // Singular point behind x1 but short of the front's focus.
            let anchor = x1.q - x1.v * rng.random_range(0.0..1.0) / b;
            let h = LineSegment { a: anchor, b: anchor + v };
            let frame = SyncFrame::from_geometry(
                1,
                FrameMode::PostSingular,
                0.1,
                1.0,
                x,
                b,
                z,
                anchor,
                h,
                CollisionCoord { component: 0, r: 0.0, phi: 0.0, material: true },
            );
            let lmf = lmf_check(&frame);
            assert!(lmf.holds, "{lmf:?}");
            assert!(frame.perpendicularity_residual() < 1e-9);
        }
    }

    #[test]
    fn foliation_chart_on_sinai_s1() {
        let t = tables::sinai();
        let curves = trace_sn(&t, 1, &TraceConfig::with_resolution(1e-2)).unwrap();
        let curve = curves.iter().max_by(|a, b| a.length().total_cmp(&b.length())).unwrap();
        let chart = foliation_chart(&t, curve, 1e-3, 20, 8).unwrap();
        assert!(!chart.fibers.is_empty());
        for f in &chart.fibers {
            assert_eq!(psi(&t, f, 0.0), Some(f.base));
        }
        assert!(chart.velocity_residual(&t) < 1e-12);
        assert!(chart.speed_residual(1e-4) < 1e-9);
        assert!(chart.fibers_disjoint());
    }
}
