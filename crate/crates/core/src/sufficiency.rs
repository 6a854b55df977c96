//! Sufficiency of trajectory segments.
//!
//! A segment is sufficient when every continuation of it, branching at
//! corners, collides regularly with a curved side. Infinite semitrajectories
//! are truncated at a horizon, so the answer for them is three-valued: a
//! witness proves sufficiency, while running out of horizon only says that
//! nothing was found.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, first_collision_skipping, involution, reflect, CollisionCoord, DynamicsError,
    EventClass, FlowPoint,
};
use crate::geometry::{ComponentKind, Table};
use crate::singularity::{self, SingularityCurve, TraceConfig};
use crate::vec2::Vec2;

pub const DEFAULT_BRANCH_BUDGET: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SufficiencyError {
    #[error("more than {0} branches would be needed")]
    BranchBudgetExceeded(usize),
    #[error("no singularity curves to sample from")]
    NoSingularityCurves,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Singularity(#[from] singularity::SingularityError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Sufficient,
    InsufficientByHorizon,
    Undetermined,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub time: f64,
    pub component: usize,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Time(f64),
    Collisions(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SufficiencyVerdict {
    pub status: Status,
    /// First curved-side collision of each witnessed branch.
    pub witnesses: Vec<Witness>,
    pub branches_explored: usize,
    pub horizon: Horizon,
    /// Some branch grazed an arc tangentially (not counted as a witness).
    pub grazed: bool,
}

#[derive(Clone, Copy, Debug)]
struct Branch {
    x: FlowPoint,
    skip: [Option<usize>; 2],
    time: f64,
    events: usize,
}

enum Limit {
    Time { from: f64, to: f64 },
    Events(usize),
}

/// Velocities leaving a corner: reflect in one side's normal, then keep
/// alternating until the velocity points into the table.
fn corner_continuations(table: &Table, corner: usize, v: Vec2) -> [Vec2; 2] {
    let k = table.corners[corner];
    let normals = k.normals(table);
    let (start, width) = k.sector(table);
    let inside = |w: Vec2| (w.angle() - start).rem_euclid(TAU) <= width;
    let mut out = [v; 2];
    for (b, first) in [0usize, 1].into_iter().enumerate() {
        let mut w = v;
        let mut which = first;
        for _ in 0..1000 {
            w = reflect(w, normals[which]);
            if inside(w) {
                break;
            }
            which = 1 - which;
        }
        out[b] = w;
    }
    out
}

/// Explores all corner branches from `start` until each finds a witness
/// or reaches the limit.
fn explore(
    table: &Table,
    start: FlowPoint,
    source: Option<usize>,
    limit: Limit,
    budget: usize,
) -> Result<(bool, Vec<Witness>, usize, bool), SufficiencyError> {
    let mut stack = vec![Branch {
        x: start,
        skip: [source, None],
        time: 0.0,
        events: 0,
    }];
    let mut branches = 1;
    let mut witnesses = Vec::new();
    let mut all = true;
    let mut grazed = false;
    while let Some(mut b) = stack.pop() {
        let found = loop {
            if let Limit::Events(n) = limit {
                if b.events >= n {
                    break false;
                }
            }
            let skip: Vec<usize> = b.skip.iter().flatten().copied().collect();
            match first_collision_skipping(table, &b.x, &skip) {
                Ok(ev) => {
                    let t = b.time + ev.time;
                    if let Limit::Time { to, .. } = limit {
                        if t >= to {
                            break false;
                        }
                    }
                    let c = &table.components[ev.coord.component];
                    let in_window = match limit {
                        Limit::Time { from, .. } => t > from,
                        Limit::Events(_) => true,
                    };
                    if c.material && c.kind() == ComponentKind::Arc && in_window {
                        if ev.class == EventClass::Regular {
                            witnesses.push(Witness {
                                time: t,
                                component: c.id,
                                r: ev.coord.r,
                            });
                            break true;
                        }
                        grazed = true;
                    }
                    let (id, s) = table.locate(ev.coord.r).map_err(DynamicsError::from)?;
                    let q = if ev.class == EventClass::Transparent {
                        table.components[id].point_local(s)
                    } else {
                        ev.point
                    };
                    b = Branch {
                        x: FlowPoint::new(q, ev.v_out),
                        skip: [Some(id), None],
                        time: t,
                        events: b.events + 1,
                    };
                }
                Err(DynamicsError::CornerHit {
                    time, point, corner, ..
                }) => {
                    let t = b.time + time;
                    if let Limit::Time { to, .. } = limit {
                        if t >= to {
                            break false;
                        }
                    }
                    branches += 1;
                    if branches > budget {
                        return Err(SufficiencyError::BranchBudgetExceeded(budget));
                    }
                    let k = table.corners[corner];
                    let skip = [Some(k.incoming), Some(k.outgoing)];
                    let [v1, v2] = corner_continuations(table, corner, b.x.v);
                    stack.push(Branch {
                        x: FlowPoint::new(point, v2),
                        skip,
                        time: t,
                        events: b.events + 1,
                    });
                    b = Branch {
                        x: FlowPoint::new(point, v1),
                        skip,
                        time: t,
                        events: b.events + 1,
                    };
                }
                Err(DynamicsError::SingularEncounter { time, point, .. }) => {
                    // a crossing through a cell corner: the torus has no
                    // corner there, so continue straight into the opposite one
                    let v = b.x.v;
                    let q = match table.ambient {
                        crate::geometry::Ambient::Torus { width, height } => {
                            let wrap = |c: f64, len: f64, dir: f64| {
                                if dir > 0.0 && c > 0.5 * len {
                                    c - len
                                } else if dir < 0.0 && c < 0.5 * len {
                                    c + len
                                } else {
                                    c
                                }
                            };
                            Vec2::new(wrap(point.x, width, v.x), wrap(point.y, height, v.y))
                        }
                        crate::geometry::Ambient::Plane => point,
                    };
                    b = Branch {
                        x: FlowPoint::new(q + v * 1e-12, v),
                        skip: [None, None],
                        time: b.time + time,
                        events: b.events + 1,
                    };
                }
                Err(e) => return Err(e.into()),
            }
        };
        all &= found;
    }
    Ok((all, witnesses, branches, grazed))
}

/// Sufficiency of the segment `Φ^{[a, b]}(x)`.
pub fn is_sufficient_segment(
    table: &Table,
    x: &FlowPoint,
    span: (f64, f64),
) -> Result<SufficiencyVerdict, SufficiencyError> {
    is_sufficient_segment_with_budget(table, x, span, DEFAULT_BRANCH_BUDGET)
}

pub fn is_sufficient_segment_with_budget(
    table: &Table,
    x: &FlowPoint,
    span: (f64, f64),
    budget: usize,
) -> Result<SufficiencyVerdict, SufficiencyError> {
    let (all, witnesses, branches, grazed) = explore(
        table,
        *x,
        None,
        Limit::Time {
            from: span.0,
            to: span.1,
        },
        budget,
    )?;
    Ok(SufficiencyVerdict {
        status: if all {
            Status::Sufficient
        } else {
            Status::InsufficientByHorizon
        },
        witnesses,
        branches_explored: branches,
        horizon: Horizon::Time(span.1),
        grazed,
    })
}

/// Future sufficiency of a collision-space point, truncated after
/// `horizon` boundary events (wall crossings included).
pub fn is_future_sufficient(
    table: &Table,
    x: &CollisionCoord,
    horizon: usize,
) -> Result<SufficiencyVerdict, SufficiencyError> {
    let start = dynamics::to_flow(table, x)?;
    let verdict = match explore(
        table,
        start,
        Some(x.component),
        Limit::Events(horizon),
        DEFAULT_BRANCH_BUDGET,
    ) {
        Ok((all, witnesses, branches, grazed)) => SufficiencyVerdict {
            status: if all {
                Status::Sufficient
            } else {
                Status::Undetermined
            },
            witnesses,
            branches_explored: branches,
            horizon: Horizon::Collisions(horizon),
            grazed,
        },
        Err(SufficiencyError::BranchBudgetExceeded(n)) => SufficiencyVerdict {
            status: Status::Undetermined,
            witnesses: Vec::new(),
            branches_explored: n,
            horizon: Horizon::Collisions(horizon),
            grazed: false,
        },
        Err(e) => return Err(e),
    };
    Ok(verdict)
}

/// Past sufficiency of `x`, i.e. future sufficiency of `-x`.
pub fn is_past_sufficient(
    table: &Table,
    x: &CollisionCoord,
    horizon: usize,
) -> Result<SufficiencyVerdict, SufficiencyError> {
    is_future_sufficient(table, &involution(table, x), horizon)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBreakdown {
    pub curve_id: usize,
    pub source: singularity::SingularSource,
    pub samples: usize,
    pub sufficient: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzReport {
    pub sufficient_fraction: f64,
    pub undetermined_fraction: f64,
    /// Binomial standard error of the sufficient fraction.
    pub standard_error: f64,
    pub horizon: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Samples whose past grazed an arc.
    pub grazing_samples: usize,
    /// Total `(r, φ)` length of the sampled curves.
    pub curve_length: f64,
    pub per_curve: Vec<CurveBreakdown>,
}

/// Samples points uniformly along traced `S_1` and checks past sufficiency.
pub fn ansatz_sampler(
    table: &Table,
    n_samples: usize,
    horizon: usize,
    seed: u64,
    trace: &TraceConfig,
) -> Result<AnsatzReport, SufficiencyError> {
    let curves = singularity::trace_sn(table, 1, trace)?;
    ansatz_on_curves(table, &curves, n_samples, horizon, seed)
}

pub fn ansatz_on_curves(
    table: &Table,
    curves: &[SingularityCurve],
    n_samples: usize,
    horizon: usize,
    seed: u64,
) -> Result<AnsatzReport, SufficiencyError> {
    if curves.iter().all(|c| c.length() <= 0.0) {
        return Err(SufficiencyError::NoSingularityCurves);
    }
    let results = crate::par::map_batches(n_samples, 256, seed, |range, rng| {
        range
            .map(|_| {
                let (ci, m) = singularity::sample_on_curves(table, curves, rng)
                    .expect("curves have positive length");
                let v = is_past_sufficient(table, &m, horizon).ok();
                (ci, v.as_ref().map(|v| v.status), v.is_some_and(|v| v.grazed))
            })
            .collect()
    });
    let mut per_curve: Vec<CurveBreakdown> = curves
        .iter()
        .map(|c| CurveBreakdown {
            curve_id: c.id,
            source: c.source,
            samples: 0,
            sufficient: 0,
        })
        .collect();
    let mut sufficient = 0;
    let mut grazing = 0;
    for (ci, status, grazed) in &results {
        per_curve[*ci].samples += 1;
        if *status == Some(Status::Sufficient) {
            sufficient += 1;
            per_curve[*ci].sufficient += 1;
        }
        grazing += usize::from(*grazed);
    }
    let n = n_samples.max(1) as f64;
    let p = sufficient as f64 / n;
    Ok(AnsatzReport {
        sufficient_fraction: p,
        undetermined_fraction: 1.0 - p,
        standard_error: (p * (1.0 - p) / n).sqrt(),
        horizon,
        n_samples,
        seed,
        grazing_samples: grazing,
        curve_length: curves.iter().map(|c| c.length()).sum(),
        per_curve,
    })
}
