//! Singularity sets and tubular radii.
//!
//! `S_0` is made of tangential collisions on arcs and of corner fibers. Its
//! preimages `S_n = T^{-n} S_0` are traced as polylines in `(r, φ)`: every
//! seed family is a one-parameter set of rays leaving a singular point, and
//! the tracer refines the parameter adaptively until consecutive images are
//! within the requested resolution, splitting wherever the image jumps.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, cast, collision_map, first_collision_skipping, inverse_map, involution, step,
    CollisionCoord, DynamicsError, FlowPoint, CORNER_TOL, TANGENCY_TOL,
};
use crate::geometry::{Ambient, Shape, Table};
use crate::vec2::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SingularityError {
    #[error("continuation exceeded its budget of {0} evaluations; use a coarser resolution")]
    ResolutionTooCoarse(usize),
    #[error("order must be nonzero with |n| <= {max}, got {n}")]
    InvalidOrder { n: i32, max: i32 },
    #[error("the base point is itself singular")]
    SingularBase,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularSource {
    Tangency,
    Corner,
    TransparentEdge,
}

impl SingularSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SingularSource::Tangency => "tangency",
            SingularSource::Corner => "corner",
            SingularSource::TransparentEdge => "transparent-edge",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangencyLine {
    pub component: usize,
    pub r_start: f64,
    pub r_end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CornerFiber {
    pub corner: usize,
    pub point: Vec2,
    /// `r` at the end of the incoming component (= start of the outgoing one
    /// unless the chain wraps).
    pub r: f64,
}

/// Description of `S_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct S0Set {
    /// Each arc contributes the two lines `φ = ±π/2` over its `r` range.
    pub tangency: Vec<TangencyLine>,
    pub corners: Vec<CornerFiber>,
    /// Corners of the fundamental rectangle on torus tables; crossings
    /// through them change the wall of emergence.
    pub wall_corners: Vec<Vec2>,
}

pub fn s0_set(table: &Table) -> S0Set {
    let tangency = table
        .material_components()
        .filter(|c| matches!(c.shape, Shape::Arc { .. }))
        .map(|c| TangencyLine {
            component: c.id,
            r_start: c.offset,
            r_end: c.offset + c.length,
        })
        .collect();
    let corners = table
        .corners
        .iter()
        .enumerate()
        .map(|(k, c)| CornerFiber {
            corner: k,
            point: c.point,
            r: table.components[c.outgoing].offset,
        })
        .collect();
    let wall_corners = match table.ambient {
        Ambient::Torus { width, height } => vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(width, 0.0),
            Vec2::new(width, height),
            Vec2::new(0.0, height),
        ],
        Ambient::Plane => Vec::new(),
    };
    S0Set {
        tangency,
        corners,
        wall_corners,
    }
}

/// A one-parameter family of rays leaving a singular point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SeedFamily {
    /// Tangent rays along an arc, `direction` = +1 along increasing `s`.
    Tangency { component: usize, direction: f64 },
    /// Rays from a material corner into the table.
    Corner { corner: usize },
    /// Rays from one corner of the fundamental rectangle into the cell.
    WallCorner { index: usize },
}

impl SeedFamily {
    pub fn source(&self) -> SingularSource {
        match self {
            SeedFamily::Tangency { .. } => SingularSource::Tangency,
            SeedFamily::Corner { .. } => SingularSource::Corner,
            SeedFamily::WallCorner { .. } => SingularSource::TransparentEdge,
        }
    }

    /// Parameter range and whether the family closes up.
    pub fn range(&self, table: &Table) -> (f64, f64, bool) {
        match *self {
            SeedFamily::Tangency { component, .. } => {
                let c = &table.components[component];
                (0.0, c.length, c.is_full_circle())
            }
            SeedFamily::Corner { corner } => {
                let (start, width) = table.corners[corner].sector(table);
                (start, start + width, false)
            }
            SeedFamily::WallCorner { index } => {
                let a = index as f64 * FRAC_PI_2;
                (a, a + FRAC_PI_2, false)
            }
        }
    }

    /// Singular point, ray direction and components to ignore.
    pub fn ray(&self, table: &Table, p: f64) -> (Vec2, Vec2, [Option<usize>; 2]) {
        match *self {
            SeedFamily::Tangency {
                component,
                direction,
            } => {
                let c = &table.components[component];
                (
                    c.point_local(p),
                    c.tangent_local(p) * direction,
                    [Some(component), None],
                )
            }
            SeedFamily::Corner { corner } => {
                let k = &table.corners[corner];
                (k.point, Vec2::from_angle(p), [Some(k.incoming), Some(k.outgoing)])
            }
            SeedFamily::WallCorner { index } => {
                let Ambient::Torus { width, height } = table.ambient else {
                    unreachable!("wall corners only exist on tori")
                };
                let corner = [
                    Vec2::new(0.0, 0.0),
                    Vec2::new(width, 0.0),
                    Vec2::new(width, height),
                    Vec2::new(0.0, height),
                ][index];
                (corner, Vec2::from_angle(p), [None, None])
            }
        }
    }
}

/// All seed families of `S_0` on a table.
pub fn seed_families(table: &Table) -> Vec<SeedFamily> {
    let mut out = Vec::new();
    for c in table.material_components() {
        if matches!(c.shape, Shape::Arc { .. }) {
            out.push(SeedFamily::Tangency {
                component: c.id,
                direction: 1.0,
            });
            out.push(SeedFamily::Tangency {
                component: c.id,
                direction: -1.0,
            });
        }
    }
    out.extend((0..table.corners.len()).map(|corner| SeedFamily::Corner { corner }));
    if table.is_torus() {
        out.extend((0..4).map(|index| SeedFamily::WallCorner { index }));
    }
    out
}

/// Point of `S_1` on the ray `p`: the phase point whose next event is the
/// singular point itself.
fn s1_point(table: &Table, family: &SeedFamily, p: f64) -> Option<CollisionCoord> {
    let (q, d, skip) = family.ray(table, p);
    let skip: Vec<usize> = skip.into_iter().flatten().collect();
    let hit = cast(table, q, d, &skip)?;
    let c = &table.components[hit.component];
    if hit.s < CORNER_TOL || c.length - hit.s < CORNER_TOL {
        if !(c.material && c.is_full_circle()) {
            return None;
        }
    }
    let m = dynamics::coord_of(table, hit.component, hit.s, -d);
    if m.phi.cos() < TANGENCY_TOL {
        return None;
    }
    Some(m)
}

/// Point of `S_{-1}` on the ray `p`: the first event after leaving the
/// singular point.
fn s_minus1_point(table: &Table, family: &SeedFamily, p: f64) -> Option<CollisionCoord> {
    let (q, d, skip) = family.ray(table, p);
    let skip: Vec<usize> = skip.into_iter().flatten().collect();
    let ev = first_collision_skipping(table, &FlowPoint::new(q, d), &skip).ok()?;
    if ev.class == dynamics::EventClass::Tangential {
        return None;
    }
    Some(ev.coord)
}

/// `S_n` point for the ray `p`, `n != 0`.
pub fn sn_point(table: &Table, family: &SeedFamily, n: i32, p: f64) -> Option<CollisionCoord> {
    if n > 0 {
        let mut m = s1_point(table, family, p)?;
        for _ in 1..n {
            m = inverse_map(table, &m).ok()?;
        }
        Some(m)
    } else {
        let mut m = s_minus1_point(table, family, p)?;
        for _ in 1..(-n) {
            m = collision_map(table, &m).ok()?;
        }
        Some(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularityCurve {
    pub id: usize,
    pub order: i32,
    pub source: SingularSource,
    pub component: usize,
    /// `(r, φ)` samples in continuation order.
    pub points: Vec<[f64; 2]>,
    pub resolution: f64,
    pub closed: bool,
}

impl SingularityCurve {
    /// Length of the polyline in the `(r, φ)` plane.
    pub fn length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    /// Sign of `dφ/dr` if it is the same on every resolved segment.
    pub fn slope_sign(&self) -> Option<i8> {
        let mut sign = 0i8;
        for w in self.points.windows(2) {
            let dr = w[1][0] - w[0][0];
            let dp = w[1][1] - w[0][1];
            // segments shorter than the noise floor carry no sign information
            if dr.abs() < 1e-9 || dp.abs() < 1e-9 {
                continue;
            }
            let s = if dr * dp > 0.0 { 1 } else { -1 };
            if sign == 0 {
                sign = s;
            } else if sign != s {
                return None;
            }
        }
        Some(sign)
    }

    /// Point at fraction `u` of the arc length.
    pub fn point_at_fraction(&self, u: f64) -> [f64; 2] {
        let total = self.length();
        let mut target = u.clamp(0.0, 1.0) * total;
        for w in self.points.windows(2) {
            let l = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            if target <= l && l > 0.0 {
                let f = target / l;
                return [
                    w[0][0] + f * (w[1][0] - w[0][0]),
                    w[0][1] + f * (w[1][1] - w[0][1]),
                ];
            }
            target -= l;
        }
        *self.points.last().expect("curves are nonempty")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceConfig {
    pub resolution: f64,
    pub initial_samples: usize,
    pub max_evaluations: usize,
    pub max_order: i32,
}

impl TraceConfig {
    pub fn with_resolution(resolution: f64) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            resolution: 1e-3,
            initial_samples: 256,
            max_evaluations: 4_000_000,
            max_order: 6,
        }
    }
}

struct Tracer<'a> {
    table: &'a Table,
    family: SeedFamily,
    n: i32,
    cfg: TraceConfig,
    evals: usize,
    p_tol: f64,
}

type Sample = (f64, Option<CollisionCoord>);

impl Tracer<'_> {
    fn eval(&mut self, p: f64) -> Result<Sample, SingularityError> {
        self.evals += 1;
        if self.evals > self.cfg.max_evaluations {
            return Err(SingularityError::ResolutionTooCoarse(self.cfg.max_evaluations));
        }
        Ok((p, sn_point(self.table, &self.family, self.n, p)))
    }

    fn joined(&self, a: &CollisionCoord, b: &CollisionCoord) -> bool {
        a.component == b.component
            && (a.r - b.r).hypot(a.phi - b.phi) <= self.cfg.resolution
    }

    /// Refines between two samples, appending to `pieces`.
    fn refine(
        &mut self,
        a: Sample,
        b: Sample,
        pieces: &mut Vec<Vec<Sample>>,
    ) -> Result<(), SingularityError> {
        let mut stack = vec![(a, b)];
        while let Some((a, b)) = stack.pop() {
            let ok = matches!((&a.1, &b.1), (Some(x), Some(y)) if self.joined(x, y));
            if ok {
                push_sample(pieces, b, false);
                continue;
            }
            if b.0 - a.0 < self.p_tol {
                // unresolvable jump: the curve breaks here
                push_sample(pieces, b, true);
                continue;
            }
            let mid = self.eval(0.5 * (a.0 + b.0))?;
            // right half is processed after the left one
            stack.push((mid, b));
            stack.push((a, mid));
        }
        Ok(())
    }
}

fn push_sample(pieces: &mut Vec<Vec<Sample>>, s: Sample, break_before: bool) {
    if s.1.is_none() {
        if !pieces.last().is_some_and(|p| p.is_empty()) {
            pieces.push(Vec::new());
        }
        return;
    }
    if break_before && !pieces.last().is_some_and(|p| p.is_empty()) {
        pieces.push(Vec::new());
    }
    if pieces.is_empty() {
        pieces.push(Vec::new());
    }
    pieces.last_mut().expect("nonempty").push(s);
}

/// Traces one seed family; returns polylines (unnumbered).
pub fn trace_family(
    table: &Table,
    family: SeedFamily,
    n: i32,
    cfg: &TraceConfig,
) -> Result<Vec<SingularityCurve>, SingularityError> {
    let (p0, p1, periodic) = family.range(table);
    let span = p1 - p0;
    let mut tr = Tracer {
        table,
        family,
        n,
        cfg: *cfg,
        evals: 0,
        p_tol: span * 1e-13,
    };
    let m = cfg.initial_samples.max(2);
    let mut pieces: Vec<Vec<Sample>> = vec![Vec::new()];
    let first = tr.eval(p0)?;
    push_sample(&mut pieces, first, false);
    let mut prev = first;
    for i in 1..=m {
        let p = if i == m { p1 } else { p0 + span * i as f64 / m as f64 };
        let cur = tr.eval(p)?;
        tr.refine(prev, cur, &mut pieces)?;
        prev = cur;
    }
    pieces.retain(|p| p.len() >= 2);
    let mut closed = false;
    if periodic && pieces.len() >= 1 {
        let starts_at_p0 = pieces[0][0].0 == p0;
        let ends_at_p1 = pieces.last().and_then(|p| p.last()).is_some_and(|s| s.0 == p1);
        if starts_at_p0 && ends_at_p1 {
            if pieces.len() == 1 {
                closed = true;
            } else {
                let head = pieces.remove(0);
                pieces.last_mut().expect("nonempty").extend(head.into_iter().skip(1));
            }
        }
    }
    Ok(pieces
        .into_iter()
        .map(|p| {
            let component = p[0].1.expect("retained samples are valid").component;
            SingularityCurve {
                id: 0,
                order: n,
                source: family.source(),
                component,
                points: p
                    .iter()
                    .map(|s| {
                        let m = s.1.expect("retained samples are valid");
                        [m.r, m.phi]
                    })
                    .collect(),
                resolution: cfg.resolution,
                closed,
            }
        })
        .collect())
}

/// Traces `S_n` for `n != 0` over all seed families.
pub fn trace_sn(
    table: &Table,
    n: i32,
    cfg: &TraceConfig,
) -> Result<Vec<SingularityCurve>, SingularityError> {
    if n == 0 || n.abs() > cfg.max_order {
        return Err(SingularityError::InvalidOrder {
            n,
            max: cfg.max_order,
        });
    }
    let families = seed_families(table);
    let traced: Vec<Result<Vec<SingularityCurve>, SingularityError>> =
        crate::par::map(&families, |f| trace_family(table, *f, n, cfg));
    let mut out = Vec::new();
    for r in traced {
        out.extend(r?);
    }
    for (i, c) in out.iter_mut().enumerate() {
        c.id = i;
    }
    Ok(out)
}

pub fn write_curves_csv<W: Write>(curves: &[SingularityCurve], mut w: W) -> std::io::Result<()> {
    writeln!(w, "curve_id,order_n,source,r,phi")?;
    for c in curves {
        for p in &c.points {
            writeln!(
                w,
                "{},{},{},{:.17e},{:.17e}",
                c.id,
                c.order,
                c.source.as_str(),
                p[0],
                p[1]
            )?;
        }
    }
    Ok(())
}

/// Symmetric Hausdorff distance between two polyline sets in `(r, φ)`,
/// measured vertex-to-segment.
pub fn hausdorff(a: &[SingularityCurve], b: &[SingularityCurve]) -> f64 {
    directed_hausdorff(a, b).max(directed_hausdorff(b, a))
}

fn directed_hausdorff(a: &[SingularityCurve], b: &[SingularityCurve]) -> f64 {
    // bucket the segments of `b` on a coarse grid to keep this near linear
    let cell = 0.02;
    let mut grid: std::collections::HashMap<(i64, i64), Vec<([f64; 2], [f64; 2])>> =
        std::collections::HashMap::new();
    for c in b {
        for w in c.points.windows(2) {
            let (lo0, hi0) = (w[0][0].min(w[1][0]), w[0][0].max(w[1][0]));
            let (lo1, hi1) = (w[0][1].min(w[1][1]), w[0][1].max(w[1][1]));
            for i in (lo0 / cell).floor() as i64..=(hi0 / cell).floor() as i64 {
                for j in (lo1 / cell).floor() as i64..=(hi1 / cell).floor() as i64 {
                    grid.entry((i, j)).or_default().push((w[0], w[1]));
                }
            }
        }
    }
    let mut worst: f64 = 0.0;
    for c in a {
        for p in &c.points {
            let (ci, cj) = ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
            let mut best = f64::INFINITY;
            let mut radius = 1;
            loop {
                for i in ci - radius..=ci + radius {
                    for j in cj - radius..=cj + radius {
                        if let Some(segs) = grid.get(&(i, j)) {
                            for (s0, s1) in segs {
                                best = best.min(point_segment(*p, *s0, *s1));
                            }
                        }
                    }
                }
                if best <= radius as f64 * cell || radius > 400 {
                    break;
                }
                radius *= 2;
            }
            worst = worst.max(best);
        }
    }
    worst
}

fn point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (p, a, b) = (Vec2::from(p), Vec2::from(a), Vec2::from(b));
    let d = b - a;
    let l = d.norm_sq();
    let t = if l > 0.0 { ((p - a).dot(d) / l).clamp(0.0, 1.0) } else { 0.0 };
    p.dist(a + d * t)
}

/// Involution image of traced curves.
pub fn reflect_curves(table: &Table, curves: &[SingularityCurve]) -> Vec<SingularityCurve> {
    curves
        .iter()
        .map(|c| {
            let points = c
                .points
                .iter()
                .map(|p| {
                    let m = CollisionCoord {
                        component: c.component,
                        r: p[0],
                        phi: p[1],
                        material: table.components[c.component].material,
                    };
                    let im = involution(table, &m);
                    [im.r, im.phi]
                })
                .collect();
            SingularityCurve {
                points,
                order: -c.order,
                component: involution(
                    table,
                    &CollisionCoord {
                        component: c.component,
                        r: c.points[0][0],
                        phi: c.points[0][1],
                        material: table.components[c.component].material,
                    },
                )
                .component,
                ..c.clone()
            }
        })
        .collect()
}

/// Draws a point uniformly with respect to `(r, φ)` arc length on the curves.
pub fn sample_on_curves<R: Rng + ?Sized>(
    table: &Table,
    curves: &[SingularityCurve],
    rng: &mut R,
) -> Option<(usize, CollisionCoord)> {
    let lengths: Vec<f64> = curves.iter().map(|c| c.length()).collect();
    let total: f64 = lengths.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    for (i, c) in curves.iter().enumerate() {
        if u <= lengths[i] || i + 1 == curves.len() {
            let p = c.point_at_fraction(if lengths[i] > 0.0 { u / lengths[i] } else { 0.0 });
            return Some((
                i,
                CollisionCoord {
                    component: c.component,
                    r: p[0],
                    phi: p[1],
                    material: table.components[c.component].material,
                },
            ));
        }
        u -= lengths[i];
    }
    None
}

// ---------------------------------------------------------------------------
// tubular radius

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Obstruction {
    SingularityHit,
    BoundaryOfM,
    Corner,
    /// Nothing found within the search cap.
    SearchLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubularRadius {
    pub value: f64,
    pub obstruction: Obstruction,
    /// Reach toward `-v.perp()` and toward `v.perp()`.
    pub sides: [f64; 2],
}

/// A material link `x -> (next material collision)` unfolded in the cover.
struct Link {
    source: usize,
    q: Vec2,
    v: Vec2,
    e: Vec2,
    landing: (usize, i64, i64),
    far: Vec2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Feature {
    offset: f64,
    kind: Obstruction,
}

fn lattice_step(table: &Table, ev: &dynamics::CollisionEvent) -> (i64, i64) {
    let Ambient::Torus { width, height } = table.ambient else {
        return (0, 0);
    };
    let emerge = dynamics::to_flow(table, &ev.coord).map(|x| x.q).unwrap_or(ev.point);
    let d = ev.point - emerge;
    ((d.x / width).round() as i64, (d.y / height).round() as i64)
}

/// Next material landing of `m` as (component, lattice shift), with the
/// final event.
fn landing_of(
    table: &Table,
    m: &CollisionCoord,
) -> Result<((usize, i64, i64), dynamics::CollisionEvent), DynamicsError> {
    let mut cur = *m;
    let (mut i, mut j) = (0, 0);
    for _ in 0..10_000 {
        let ev = step(table, &cur)?;
        if ev.coord.material {
            return Ok(((ev.coord.component, i, j), ev));
        }
        let (di, dj) = lattice_step(table, &ev);
        i += di;
        j += dj;
        cur = ev.coord;
    }
    Err(DynamicsError::Escaped(dynamics::to_flow(table, m)?))
}

/// Last material point at or before `m` (walls are stepped back through).
fn material_base(table: &Table, m: &CollisionCoord) -> Result<CollisionCoord, DynamicsError> {
    let mut cur = *m;
    for _ in 0..10_000 {
        if cur.material {
            return Ok(cur);
        }
        cur = inverse_map(table, &cur)?;
    }
    Err(DynamicsError::Escaped(dynamics::to_flow(table, m)?))
}

fn search_cap(table: &Table) -> f64 {
    match table.ambient {
        Ambient::Torus { width, height } => width.max(height),
        Ambient::Plane => {
            let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
            for c in table.material_components() {
                let (a, b) = c.bounds();
                lo = Vec2::new(lo.x.min(a.x), lo.y.min(a.y));
                hi = Vec2::new(hi.x.max(b.x), hi.y.max(b.y));
            }
            lo.dist(hi)
        }
    }
}

impl Link {
    fn new(table: &Table, x: &CollisionCoord) -> Result<Self, SingularityError> {
        let flow = dynamics::to_flow(table, x)?;
        let (landing, ev) = landing_of(table, x)?;
        let shift = match table.ambient {
            Ambient::Torus { width, height } => {
                Vec2::new(landing.1 as f64 * width, landing.2 as f64 * height)
            }
            Ambient::Plane => Vec2::ZERO,
        };
        Ok(Link {
            source: x.component,
            q: flow.q,
            v: flow.v,
            e: flow.v.perp(),
            landing,
            far: ev.point + shift,
        })
    }

    /// Offsets along `e` where the combinatorics of the parallel family can
    /// change, within `(-limit, limit)`.
    fn features(&self, table: &Table, limit: f64) -> Vec<Feature> {
        let mut out = Vec::new();
        let mut add = |p: Vec2, kind: Obstruction| {
            let o = (p - self.q).dot(self.e);
            if o.abs() < limit && o != 0.0 {
                out.push(Feature { offset: o, kind });
            }
        };
        let margin = limit + table.material_components().map(|c| c.extent()).fold(0.0, f64::max);
        let lo = Vec2::new(self.q.x.min(self.far.x) - margin, self.q.y.min(self.far.y) - margin);
        let hi = Vec2::new(self.q.x.max(self.far.x) + margin, self.q.y.max(self.far.y) + margin);
        let (irange, jrange, w, h) = match table.ambient {
            Ambient::Torus { width, height } => (
                ((lo.x / width).floor() as i64 - 1, (hi.x / width).ceil() as i64 + 1),
                ((lo.y / height).floor() as i64 - 1, (hi.y / height).ceil() as i64 + 1),
                width,
                height,
            ),
            Ambient::Plane => ((0, 0), (0, 0), 0.0, 0.0),
        };
        for i in irange.0..=irange.1 {
            for j in jrange.0..=jrange.1 {
                let shift = Vec2::new(i as f64 * w, j as f64 * h);
                for c in table.material_components() {
                    let (blo, bhi) = c.bounds();
                    if bhi.x + shift.x < lo.x
                        || blo.x + shift.x > hi.x
                        || bhi.y + shift.y < lo.y
                        || blo.y + shift.y > hi.y
                    {
                        continue;
                    }
                    let own = c.id == self.source && i == 0 && j == 0;
                    match c.shape {
                        Shape::Segment { a, b } => {
                            add(a + shift, Obstruction::Corner);
                            add(b + shift, Obstruction::Corner);
                        }
                        Shape::Arc { center, radius, .. } => {
                            for sign in [-1.0, 1.0] {
                                let p = center + shift + self.e * (sign * radius);
                                let s = c.project(p - shift);
                                if c.point_local(s).dist(p - shift) < 1e-12 * (1.0 + radius) {
                                    let kind = if own {
                                        Obstruction::BoundaryOfM
                                    } else {
                                        Obstruction::SingularityHit
                                    };
                                    add(p, kind);
                                }
                            }
                            if !c.is_full_circle() {
                                add(c.start() + shift, Obstruction::Corner);
                                add(c.end() + shift, Obstruction::Corner);
                            }
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.offset.total_cmp(&b.offset));
        out
    }

    /// Whether `T` is smooth on the flat front up to offset `s`, tested at
    /// a single offset: the parallel ray must start on the source component
    /// and land regularly on the same copy of the same component.
    fn regular_at(&self, table: &Table, s: f64) -> bool {
        let p = self.q + self.e * s;
        let c = &table.components[self.source];
        let base_s = match c.shape {
            Shape::Segment { a, b } => {
                let d = b - a;
                let den = self.v.cross(d);
                if den.abs() < 1e-300 {
                    return false;
                }
                let u = (a - p).cross(self.v) / den;
                if !(0.0..=1.0).contains(&u) {
                    return false;
                }
                u * c.length
            }
            Shape::Arc { center, radius, .. } => {
                let oc = p - center;
                let b = oc.dot(self.v);
                let disc = b * b - (oc.norm_sq() - radius * radius);
                if disc <= 0.0 {
                    return false;
                }
                let t = -b + disc.sqrt();
                let point = p + self.v * t;
                let ls = c.project(point);
                if c.point_local(ls).dist(point) > 1e-9 {
                    return false;
                }
                ls
            }
        };
        if !c.is_full_circle() && (base_s < CORNER_TOL || c.length - base_s < CORNER_TOL) {
            return false;
        }
        let base = dynamics::coord_of(table, self.source, base_s, self.v);
        if base.phi.cos() < TANGENCY_TOL {
            return false;
        }
        matches!(landing_of(table, &base), Ok((l, _)) if l == self.landing)
    }

    /// One-sided reach toward `sign * e`, stopping at `limit`.
    fn reach(&self, table: &Table, features: &[Feature], sign: f64, limit: f64) -> (f64, Obstruction) {
        let mut cuts: Vec<&Feature> = features.iter().filter(|f| f.offset * sign > 0.0).collect();
        if sign < 0.0 {
            cuts.reverse();
        }
        // probe off-centre: lattice symmetry puts exact midpoints through
        // corners of the fundamental cell
        let probe = |a: f64, b: f64| a + (b - a) * (std::f64::consts::SQRT_2 - 1.0);
        let mut prev = 0.0;
        let mut prev_kind = Obstruction::SingularityHit;
        for f in cuts {
            let d = f.offset.abs();
            if d - prev > 1e-15 && !self.regular_at(table, sign * probe(prev, d)) {
                return (prev, prev_kind);
            }
            prev = d;
            prev_kind = f.kind;
        }
        if limit - prev > 1e-15 && !self.regular_at(table, sign * probe(prev, limit)) {
            return (prev, prev_kind);
        }
        (limit, Obstruction::SearchLimit)
    }
}

fn checked_link(table: &Table, x: &CollisionCoord) -> Result<Link, SingularityError> {
    let base = material_base(table, x)?;
    let c = &table.components[base.component];
    let (_, s) = table.locate(base.r).map_err(DynamicsError::from)?;
    if base.phi.cos() < TANGENCY_TOL
        || (!c.is_full_circle() && (s < CORNER_TOL || c.length - s < CORNER_TOL))
    {
        return Err(SingularityError::SingularBase);
    }
    Link::new(table, &base)
}

/// Radius of the largest flat front through `x` on which the map to the
/// next material collision is smooth. Wall points are measured on the
/// material link that contains them; wall crossings never obstruct.
pub fn z_tub(table: &Table, x: &CollisionCoord) -> Result<TubularRadius, SingularityError> {
    let link = match checked_link(table, x) {
        Ok(l) => l,
        Err(SingularityError::Dynamics(e)) if e.is_singular() => {
            return Ok(TubularRadius {
                value: 0.0,
                obstruction: Obstruction::SingularityHit,
                sides: [0.0, 0.0],
            })
        }
        Err(e) => return Err(e),
    };
    let cap = search_cap(table);
    let features = link.features(table, cap);
    let (lo, klo) = link.reach(table, &features, -1.0, cap);
    let (hi, khi) = link.reach(table, &features, 1.0, cap);
    Ok(TubularRadius {
        value: lo.min(hi),
        obstruction: if lo <= hi { klo } else { khi },
        sides: [lo, hi],
    })
}

/// Whether `z_tub(x) >= zeta`, skipping the full search when no feature
/// lies within `zeta` of the link.
pub fn z_tub_at_least(table: &Table, x: &CollisionCoord, zeta: f64) -> Result<bool, SingularityError> {
    let link = match checked_link(table, x) {
        Ok(l) => l,
        Err(SingularityError::Dynamics(e)) if e.is_singular() => return Ok(false),
        Err(e) => return Err(e),
    };
    let features = link.features(table, zeta);
    if features.is_empty() {
        return Ok(true);
    }
    let (lo, _) = link.reach(table, &features, -1.0, zeta);
    if lo < zeta {
        return Ok(false);
    }
    let (hi, _) = link.reach(table, &features, 1.0, zeta);
    Ok(hi >= zeta)
}

/// Brute-force reach along the flat front by bisection on the smoothness
/// predicate, for cross-checks.
pub fn z_tub_scan(table: &Table, x: &CollisionCoord, step: f64) -> Result<f64, SingularityError> {
    let link = checked_link(table, x)?;
    let cap = search_cap(table);
    let mut sides = [0.0; 2];
    for (k, sign) in [-1.0, 1.0].into_iter().enumerate() {
        let mut good = 0.0;
        let mut bad = None;
        let mut s = step;
        while s < cap {
            if link.regular_at(table, sign * s) {
                good = s;
                s += step;
            } else {
                bad = Some(s);
                break;
            }
        }
        let Some(mut b) = bad else {
            sides[k] = cap;
            continue;
        };
        for _ in 0..80 {
            let m = 0.5 * (good + b);
            if link.regular_at(table, sign * m) {
                good = m;
            } else {
                b = m;
            }
        }
        sides[k] = good;
    }
    Ok(sides[0].min(sides[1]))
}

/// `φ` rows of a grid over the collision space, clamped away from `±π/2`.
pub fn phi_grid(rows: usize) -> Vec<f64> {
    let lim = FRAC_PI_2 - 1e-9;
    (0..rows)
        .map(|i| -lim + 2.0 * lim * i as f64 / (rows - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tables;

    fn period_two(t: &Table) -> CollisionCoord {
        CollisionCoord {
            component: 0,
            r: t.nearest_r(Vec2::new(0.9, 0.5)),
            phi: 0.0,
            material: true,
        }
    }

    #[test]
    fn s0_examples() {
        let s = s0_set(&tables::sinai());
        assert_eq!(s.tangency.len(), 1);
        assert!(s.corners.is_empty());
        let s = s0_set(&tables::square());
        assert!(s.tangency.is_empty());
        assert_eq!(s.corners.len(), 4);
        let s = s0_set(&tables::pocket());
        assert_eq!(s.tangency.len(), 1);
        assert_eq!(s.corners.len(), 5);
    }

    #[test]
    fn s1_points_map_into_s0() {
        let t = tables::sinai();
        for fam in seed_families(&t) {
            let (p0, p1, _) = fam.range(&t);
            for k in 1..10 {
                let p = p0 + (p1 - p0) * k as f64 / 10.0;
                if let Some(m) = sn_point(&t, &fam, 1, p) {
                    let err = dynamics::collision_map(&t, &m);
                    // the image is singular or lands within rounding of S_0
                    if let Ok(y) = err {
                        assert!(y.phi.cos() < 1e-6 || !y.material, "{fam:?} {p} {y:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn sinai_s1_curves_are_monotone() {
        let t = tables::sinai();
        let curves = trace_sn(&t, 1, &TraceConfig::with_resolution(5e-3)).unwrap();
        assert!(!curves.is_empty());
        for c in &curves {
            assert!(c.slope_sign().is_some(), "curve {} not monotone", c.id);
        }
    }

    #[test]
    fn square_s1_comes_from_corners_only() {
        let t = tables::square();
        let curves = trace_sn(&t, 1, &TraceConfig::with_resolution(1e-2)).unwrap();
        assert!(curves.iter().all(|c| c.source == SingularSource::Corner));
        // corner (1,1) seen from the bottom side: φ = atan((1 - x)/1) rotated
        for c in curves.iter().filter(|c| c.component == 0) {
            for p in &c.points {
                let x = p[0];
                let to_corner = [Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)]
                    .map(|k| Vec2::new(0.0, 1.0).angle_to(k - Vec2::new(x, 0.0)));
                assert!(to_corner.iter().any(|a| (a - p[1]).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn ztub_period_two_matches_scan() {
        let t = tables::sinai();
        let x = period_two(&t);
        let z = z_tub(&t, &x).unwrap();
        assert!(z.value > 0.0);
        let scan = z_tub_scan(&t, &x, 1e-3).unwrap();
        assert!((z.value - scan).abs() < 1e-6, "{z:?} vs {scan}");
    }

    #[test]
    fn ztub_symmetry_under_reversal() {
        use rand::SeedableRng;
        let t = tables::sinai();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut n = 0;
        while n < 100 {
            let x = dynamics::sample_nu(&t, &mut rng);
            let Ok((y, _)) = dynamics::material_step(&t, &x) else { continue };
            let (Ok(a), Ok(b)) = (z_tub(&t, &x), z_tub(&t, &involution(&t, &y.coord))) else {
                continue;
            };
            assert!((a.value - b.value).abs() < 1e-6, "{x:?}: {a:?} {b:?}");
            n += 1;
        }
    }

    #[test]
    fn ztub_shrinks_near_grazing() {
        // the link from (0.9, 0.5) clips the copy of the disk centred at
        // (1.5, 0.5) at distance 0.4 - eps from its centre
        let t = tables::sinai();
        let r = t.nearest_r(Vec2::new(0.9, 0.5));
        let mut last = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4, 1e-5] {
            let phi = ((0.4 - eps) / 0.6f64).asin();
            let x = CollisionCoord { component: 0, r, phi, material: true };
            let z = z_tub(&t, &x).unwrap();
            assert!(z.value <= eps * (1.0 + 1e-9), "{eps}: {z:?}");
            assert!(z.value < last);
            last = z.value;
        }
    }

    #[test]
    fn ztub_fast_path_agrees() {
        use rand::SeedableRng;
        let t = tables::sinai();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = dynamics::sample_nu(&t, &mut rng);
            let Ok(z) = z_tub(&t, &x) else { continue };
            for zeta in [1e-3, 1e-2, 5e-2] {
                assert_eq!(z_tub_at_least(&t, &x, zeta).unwrap(), z.value >= zeta, "{x:?} {z:?} {zeta}");
            }
        }
    }

    #[test]
    fn curves_csv_header() {
        let t = tables::square();
        let curves = trace_sn(&t, 1, &TraceConfig::with_resolution(5e-2)).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&curves, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("curve_id,order_n,source,r,phi"));
    }
}
