//! Monte-Carlo measurements: good/bad classification of phase points and
//! the tail of the bad set, Lyapunov exponents, Birkhoff averages and
//! statistical checks that the collision map preserves `ν`.
//!
//! All masses are relative to the normalized measure `cos φ dr dφ / (2|∂Q|)`
//! on the material collision space.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::dynamics::{
    self, first_collision, first_collision_from, involution, CollisionCoord, DynamicsError, EventClass, FlowPoint,
};
use crate::geometry::{Ambient, Shape, Table};
use crate::par;
use crate::singularity::{self, TubularRadius};
use crate::sufficiency::{self, Status};
use crate::vec2::Vec2;
use crate::wavefront::{self, KappaGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no sample accepted in U0 after {0} draws")]
    EmptyNeighbourhood(usize),
    #[error("gave up after {0} restarts from singular encounters")]
    TooManyRestarts(usize),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// The base neighbourhood: a ball in [`dynamics::phase_distance`] around
/// `center`, or the whole collision space.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct U0 {
    pub center: Option<CollisionCoord>,
    pub radius: f64,
}

impl U0 {
    pub fn whole() -> Self {
        Self { center: None, radius: f64::INFINITY }
    }

    pub fn ball(center: CollisionCoord, radius: f64) -> Self {
        Self { center: Some(center), radius }
    }

    pub fn contains(&self, table: &Table, x: &CollisionCoord) -> bool {
        match self.center {
            None => true,
            Some(c) => dynamics::phase_distance(table, &c, x) <= self.radius,
        }
    }
}

const MAX_REJECTIONS: usize = 10_000_000;

/// Rejection sample from `ν` restricted to `u0`; also returns the number
/// of draws used.
pub fn sample_u0<R: Rng + ?Sized>(
    table: &Table,
    u0: &U0,
    rng: &mut R,
) -> Result<(CollisionCoord, usize), DiagnosticsError> {
    for draws in 1..=MAX_REJECTIONS {
        let x = dynamics::sample_nu(table, rng);
        if u0.contains(table, &x) {
            return Ok((x, draws));
        }
    }
    Err(DiagnosticsError::EmptyNeighbourhood(MAX_REJECTIONS))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub deltas: Vec<f64>,
    pub c3: f64,
    /// Base of the dyadic split of `κ` values.
    pub lambda: f64,
    /// `F(δ) = f_scale · log₂(1/δ)`.
    pub f_scale: f64,
    /// Collision horizon; `None` picks `⌈F(δ_min)⌉ + 10`.
    pub horizon: Option<usize>,
    pub samples: usize,
    pub seed: u64,
    pub u0: U0,
    pub kappa_grid: KappaGrid,
    /// Event horizon for the past-sufficiency test of witnesses.
    pub sufficiency_horizon: usize,
    pub batch: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            deltas: vec![1e-2, 5e-3, 2.5e-3, 1.25e-3],
            c3: 0.1,
            lambda: 2.0,
            f_scale: 1.0,
            horizon: None,
            samples: 100_000,
            seed: 0,
            u0: U0::whole(),
            kappa_grid: KappaGrid::default(),
            sufficiency_horizon: 50,
            batch: 2048,
        }
    }
}

impl DiagnosticsConfig {
    pub fn threshold(&self, delta: f64) -> f64 {
        self.f_scale * (1.0 / delta).log2()
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or_else(|| {
            let dmin = self.deltas.iter().copied().fold(f64::INFINITY, f64::min);
            self.threshold(dmin).max(0.0).ceil() as usize + 10
        })
    }

    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        let bad = |m: &str| Err(DiagnosticsError::InvalidConfig(m.into()));
        if self.deltas.is_empty() || self.deltas.iter().any(|d| !(*d > 0.0)) {
            return bad("δ grid must be nonempty and positive");
        }
        if !(self.c3 > 0.0) {
            return bad("c3 must be positive");
        }
        if !(self.lambda > 1.0) {
            return bad("Λ must exceed 1");
        }
        if !(self.f_scale > 0.0) {
            return bad("F must grow as δ shrinks");
        }
        if self.horizon() == 0 {
            return bad("horizon must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Good,
    /// First step violating the good-set inequality.
    Bad { n: usize },
    /// Singular encounter at step `n` before any violation.
    Undetermined { n: usize },
}

/// Classification of one point at one `δ`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub verdict: Option<Verdict>,
    /// Every step `n` with `z_tub(-T^n y) < c3 δ / κ_{n,c3δ}(y)`.
    pub bad_steps: Vec<usize>,
    /// Steps `n` with a witness, and the dyadic index `m` of `κ`.
    pub tilde_steps: Vec<(usize, i32)>,
    /// Last step checked.
    pub checked: usize,
}

impl Profile {
    pub fn verdict(&self) -> Verdict {
        self.verdict.unwrap_or(Verdict::Good)
    }
}

/// The orbit of `y` as boundary events, with the index of each material
/// collision among them.
struct EventOrbit {
    events: Vec<CollisionCoord>,
    material: Vec<usize>,
    /// Material steps that could be computed.
    len: usize,
}

fn event_orbit(table: &Table, y: &CollisionCoord, n: usize) -> EventOrbit {
    let mut events = vec![*y];
    let mut material = vec![0];
    while material.len() <= n {
        let cur = events[events.len() - 1];
        let Ok(next) = dynamics::collision_map(table, &cur) else { break };
        events.push(next);
        if next.material {
            material.push(events.len() - 1);
        }
        if events.len() > 1000 * (n + 1) {
            break;
        }
    }
    let len = material.len() - 1;
    EventOrbit { events, material, len }
}

fn wrap(table: &Table, q: Vec2) -> Vec2 {
    match table.ambient {
        Ambient::Torus { width, height } => Vec2::new(q.x.rem_euclid(width), q.y.rem_euclid(height)),
        Ambient::Plane => q,
    }
}

/// Past sufficiency of an interior phase point.
fn past_sufficient_flow(table: &Table, y: &FlowPoint, horizon: usize) -> bool {
    let back = FlowPoint::new(wrap(table, y.q), -y.v);
    let Ok(mut ev) = first_collision(table, &back) else { return false };
    for _ in 0..1000 {
        match ev.class {
            EventClass::Tangential | EventClass::Corner => return false,
            EventClass::Transparent => match dynamics::step(table, &ev.coord) {
                Ok(e) => ev = e,
                Err(_) => return false,
            },
            EventClass::Regular => break,
        }
    }
    if ev.curvature > 0.0 {
        return true;
    }
    matches!(
        sufficiency::is_future_sufficient(table, &ev.coord, horizon),
        Ok(v) if v.status == Status::Sufficient
    )
}

/// Whether a point `y` with `T y ∈ S_0` and `v(y) = v(T^n x)` sits within
/// `rho` of the link after `x_n = T^n x` and is past sufficient.
fn has_witness(table: &Table, xn: &CollisionCoord, rho: f64, horizon: usize) -> bool {
    let Ok(tr) = singularity::z_tub(table, xn) else { return false };
    let Ok(flow) = dynamics::to_flow(table, xn) else { return false };
    let Ok((_, tau)) = dynamics::material_step(table, xn) else { return false };
    let mid = flow.q + flow.v * (0.5 * tau);
    let e = flow.v.perp();
    for (side, sign) in [(0usize, -1.0), (1, 1.0)] {
        let s = tr.sides[side];
        if s <= rho && tr.obstruction != singularity::Obstruction::SearchLimit {
            let y = FlowPoint::new(mid + e * (sign * s), flow.v);
            if past_sufficient_flow(table, &y, horizon) {
                return true;
            }
        }
    }
    false
}

fn dyadic_index(kappa: f64, lambda: f64) -> i32 {
    (kappa.ln() / lambda.ln()).floor() as i32
}

/// Classifies `y` for every `δ` of `deltas` with the same orbit.
pub fn classify_profiles(
    table: &Table,
    y: &CollisionCoord,
    deltas: &[f64],
    cfg: &DiagnosticsConfig,
) -> Vec<Profile> {
    let horizon = cfg.horizon();
    let mut out = vec![Profile::default(); deltas.len()];
    let orbit = event_orbit(table, y, horizon + 1);
    let zeta_max = cfg.c3 * deltas.iter().copied().fold(0.0, f64::max);
    let mut kappas: BTreeMap<(usize, usize), Option<f64>> = BTreeMap::new();
    let mut kappa = |n: usize, k: usize| -> Option<f64> {
        *kappas.entry((n, k)).or_insert_with(|| {
            wavefront::kappa_on_orbit(table, &orbit.events, orbit.material[n], cfg.c3 * deltas[k], &cfg.kappa_grid)
                .ok()
                .map(|kp| kp.delta)
        })
    };
    let mut done = vec![false; deltas.len()];
    for n in 1..=horizon {
        if n > orbit.len {
            for (p, d) in out.iter_mut().zip(&mut done) {
                if !*d {
                    p.verdict.get_or_insert(Verdict::Undetermined { n });
                    *d = true;
                }
            }
            break;
        }
        let tn = orbit.events[orbit.material[n]];
        let back = involution(table, &tn);
        let near = match singularity::z_tub_at_least(table, &back, zeta_max) {
            Ok(true) => None,
            Ok(false) => singularity::z_tub(table, &back).ok(),
            Err(_) => Some(TubularRadius {
                value: -1.0,
                obstruction: singularity::Obstruction::SingularityHit,
                sides: [0.0; 2],
            }),
        };
        // forward link for the witness sets
        let fwd_near = n < orbit.len
            && !matches!(
                singularity::z_tub_at_least(table, &orbit.events[orbit.material[n + 1]], zeta_max),
                Ok(true)
            );
        for k in 0..deltas.len() {
            if done[k] {
                continue;
            }
            let p = &mut out[k];
            p.checked = n;
            let zeta = cfg.c3 * deltas[k];
            if let Some(tr) = near {
                if tr.value < 0.0 {
                    p.verdict.get_or_insert(Verdict::Undetermined { n });
                    done[k] = true;
                    continue;
                }
                if tr.value < zeta {
                    match kappa(n, k) {
                        Some(kp) if tr.value < zeta / kp => {
                            p.bad_steps.push(n);
                            p.verdict.get_or_insert(Verdict::Bad { n });
                        }
                        Some(_) => {}
                        None => {
                            p.verdict.get_or_insert(Verdict::Undetermined { n });
                            done[k] = true;
                            continue;
                        }
                    }
                }
            }
            if fwd_near {
                if let Some(kp) = kappa(n, k) {
                    if has_witness(table, &tn, zeta / kp, cfg.sufficiency_horizon) {
                        p.tilde_steps.push((n, dyadic_index(kp, cfg.lambda)));
                    }
                }
            }
        }
    }
    out
}

/// Verdict of `y` at a single `δ`.
pub fn classify_point(table: &Table, y: &CollisionCoord, delta: f64, cfg: &DiagnosticsConfig) -> Verdict {
    classify_profiles(table, y, &[delta], cfg)[0].verdict()
}

/// Smallest feature of the table: component lengths and arc radii.
pub fn feature_size(table: &Table) -> f64 {
    table
        .material_components()
        .map(|c| match c.shape {
            Shape::Arc { radius, .. } => radius.min(c.length),
            _ => c.length,
        })
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub delta: f64,
    /// `F(δ)`.
    pub threshold: f64,
    pub good: u64,
    pub bad: u64,
    pub undetermined: u64,
    /// Estimated `ν(U_ω^b)` and its standard error.
    pub nu_tail: f64,
    pub nu_tail_se: f64,
    pub ratio: f64,
    pub ratio_se: f64,
    /// Same for the witness variant.
    pub nu_tilde_tail: f64,
    pub nu_tilde_tail_se: f64,
    /// Samples in `U_n^b`, indexed by `n`.
    pub bad_by_n: Vec<u64>,
    /// Samples in `Ũ_n^b`, indexed by `n`.
    pub tilde_by_n: Vec<u64>,
    /// Samples in `Ũ_{n,m}^b` as `(n, m, count)`.
    pub tilde_by_nm: Vec<(usize, i32, u64)>,
    /// Relative standard error above 25%, or no tail samples at all.
    pub insufficient: bool,
    /// `δ` exceeds the smallest table feature.
    pub saturated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BadSetReport {
    pub samples: usize,
    pub draws: u64,
    pub horizon: usize,
    pub c3: f64,
    pub lambda: f64,
    pub seed: u64,
    pub u0: U0,
    /// `ν(U0)`, estimated from the acceptance rate unless `U0` is everything.
    pub nu_u0: f64,
    pub deltas: Vec<DeltaReport>,
}

#[derive(Clone, Debug, Default)]
struct Tally {
    draws: u64,
    samples: u64,
    good: Vec<u64>,
    bad: Vec<u64>,
    undetermined: Vec<u64>,
    tail: Vec<u64>,
    tilde_tail: Vec<u64>,
    bad_by_n: Vec<Vec<u64>>,
    tilde_by_n: Vec<Vec<u64>>,
    tilde_by_nm: Vec<BTreeMap<(usize, i32), u64>>,
}

impl Tally {
    fn new(k: usize, horizon: usize) -> Self {
        Self {
            good: vec![0; k],
            bad: vec![0; k],
            undetermined: vec![0; k],
            tail: vec![0; k],
            tilde_tail: vec![0; k],
            bad_by_n: vec![vec![0; horizon + 1]; k],
            tilde_by_n: vec![vec![0; horizon + 1]; k],
            tilde_by_nm: vec![BTreeMap::new(); k],
            ..Self::default()
        }
    }

    fn add(&mut self, profiles: &[Profile], thresholds: &[f64]) {
        self.samples += 1;
        for (k, p) in profiles.iter().enumerate() {
            match p.verdict() {
                Verdict::Good => self.good[k] += 1,
                Verdict::Bad { .. } => self.bad[k] += 1,
                Verdict::Undetermined { .. } => self.undetermined[k] += 1,
            }
            if p.bad_steps.iter().any(|&n| n as f64 > thresholds[k]) {
                self.tail[k] += 1;
            }
            if p.tilde_steps.iter().any(|&(n, _)| n as f64 > thresholds[k]) {
                self.tilde_tail[k] += 1;
            }
            for &n in &p.bad_steps {
                self.bad_by_n[k][n] += 1;
            }
            for &(n, m) in &p.tilde_steps {
                self.tilde_by_n[k][n] += 1;
                *self.tilde_by_nm[k].entry((n, m)).or_insert(0) += 1;
            }
        }
    }

    fn merge(&mut self, o: Tally) {
        self.draws += o.draws;
        self.samples += o.samples;
        let add = |a: &mut Vec<u64>, b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.good, &o.good);
        add(&mut self.bad, &o.bad);
        add(&mut self.undetermined, &o.undetermined);
        add(&mut self.tail, &o.tail);
        add(&mut self.tilde_tail, &o.tilde_tail);
        for (a, b) in self.bad_by_n.iter_mut().zip(&o.bad_by_n) {
            add(a, b);
        }
        for (a, b) in self.tilde_by_n.iter_mut().zip(&o.tilde_by_n) {
            add(a, b);
        }
        for (a, b) in self.tilde_by_nm.iter_mut().zip(o.tilde_by_nm) {
            for (key, c) in b {
                *a.entry(key).or_insert(0) += c;
            }
        }
    }
}

/// Binomial estimate of a mass `scale · count / n` and its standard error.
fn mass(count: u64, n: u64, scale: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 0.0);
    }
    let p = count as f64 / n as f64;
    (scale * p, scale * (p * (1.0 - p) / n as f64).sqrt())
}

/// Monte-Carlo estimate of the bad-set tail over the `δ` grid. Every `δ`
/// is evaluated on the same samples.
pub fn tail_estimate(table: &Table, cfg: &DiagnosticsConfig) -> Result<BadSetReport, DiagnosticsError> {
    cfg.validate()?;
    let horizon = cfg.horizon();
    let k = cfg.deltas.len();
    let thresholds: Vec<f64> = cfg.deltas.iter().map(|&d| cfg.threshold(d)).collect();
    let batches = par::map_batches(cfg.samples, cfg.batch, cfg.seed, |range, rng| {
        let mut t = Tally::new(k, horizon);
        for _ in range {
            match sample_u0(table, &cfg.u0, rng) {
                Ok((y, draws)) => {
                    t.draws += draws as u64;
                    t.add(&classify_profiles(table, &y, &cfg.deltas, cfg), &thresholds);
                }
                Err(e) => return vec![Err(e)],
            }
        }
        vec![Ok(t)]
    });
    let mut total = Tally::new(k, horizon);
    for b in batches {
        total.merge(b?);
    }
    let nu_u0 = if cfg.u0.center.is_none() {
        1.0
    } else {
        total.samples as f64 / total.draws.max(1) as f64
    };
    let feature = feature_size(table);
    let deltas = (0..k)
        .map(|i| {
            let delta = cfg.deltas[i];
            let (nu_tail, nu_tail_se) = mass(total.tail[i], total.samples, nu_u0);
            let (nu_tilde_tail, nu_tilde_tail_se) = mass(total.tilde_tail[i], total.samples, nu_u0);
            DeltaReport {
                delta,
                threshold: thresholds[i],
                good: total.good[i],
                bad: total.bad[i],
                undetermined: total.undetermined[i],
                nu_tail,
                nu_tail_se,
                ratio: nu_tail / delta,
                ratio_se: nu_tail_se / delta,
                nu_tilde_tail,
                nu_tilde_tail_se,
                bad_by_n: total.bad_by_n[i].clone(),
                tilde_by_n: total.tilde_by_n[i].clone(),
                tilde_by_nm: total.tilde_by_nm[i].iter().map(|(&(n, m), &c)| (n, m, c)).collect(),
                insufficient: total.tail[i] == 0 || nu_tail_se > 0.25 * nu_tail,
                saturated: delta > feature,
            }
        })
        .collect();
    Ok(BadSetReport {
        samples: total.samples as usize,
        draws: total.draws,
        horizon,
        c3: cfg.c3,
        lambda: cfg.lambda,
        seed: cfg.seed,
        u0: cfg.u0,
        nu_u0,
        deltas,
    })
}

impl BadSetReport {
    /// Whether consecutive ratios drop by more than twice their combined
    /// standard error, in order of decreasing `δ`.
    pub fn strictly_decreasing(&self) -> bool {
        let mut rows: Vec<&DeltaReport> = self.deltas.iter().collect();
        rows.sort_by(|a, b| b.delta.total_cmp(&a.delta));
        rows.windows(2).all(|w| {
            let (a, b) = (w[0], w[1]);
            a.ratio - b.ratio > 2.0 * (a.ratio_se.powi(2) + b.ratio_se.powi(2)).sqrt()
        })
    }

    pub fn write_ratio_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "delta,nu_tail_hat,stderr,ratio")?;
        for d in &self.deltas {
            writeln!(w, "{:e},{:e},{:e},{:e}", d.delta, d.nu_tail, d.nu_tail_se, d.ratio)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub c3: f64,
    pub delta: f64,
    pub good: f64,
    pub bad: f64,
    pub undetermined: f64,
    pub nu_tail: f64,
    pub ratio: f64,
}

/// Sweeps `c3` on common samples.
pub fn calibrate_c3(
    table: &Table,
    c3_values: &[f64],
    cfg: &DiagnosticsConfig,
) -> Result<Vec<CalibrationRow>, DiagnosticsError> {
    let mut rows = Vec::new();
    for &c3 in c3_values {
        let report = tail_estimate(table, &DiagnosticsConfig { c3, ..cfg.clone() })?;
        let n = report.samples.max(1) as f64;
        for d in &report.deltas {
            rows.push(CalibrationRow {
                c3,
                delta: d.delta,
                good: d.good as f64 / n,
                bad: d.bad as f64 / n,
                undetermined: d.undetermined as f64 / n,
                nu_tail: d.nu_tail,
                ratio: d.ratio,
            });
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Lyapunov exponents

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovReport {
    /// Mean `log D` per material collision.
    pub exponent: f64,
    pub collisions: usize,
    /// Collision counts at which the orbit was restarted.
    pub restarts: Vec<usize>,
    /// `(collisions, running exponent)`.
    pub trace: Vec<(usize, f64)>,
}

const MAX_RESTARTS: usize = 1000;

/// Mean logarithmic expansion of a flat front started at `x`, over `n`
/// material collisions. A singular encounter restarts the orbit from a
/// point perturbed by `1e-9`, keeping the accumulated expansion.
pub fn lyapunov_estimate<R: Rng + ?Sized>(
    table: &Table,
    x: &CollisionCoord,
    n: usize,
    rng: &mut R,
) -> Result<LyapunovReport, DiagnosticsError> {
    let mut last = *x;
    let mut cur = dynamics::to_flow(table, x)?;
    let mut src = Some(x.component);
    let mut b = 0.0;
    let mut log_sum = 0.0;
    let mut count = 0;
    let mut restarts = Vec::new();
    let mut trace = Vec::new();
    let every = (n / 100).max(1);
    while count < n {
        let ev = match first_collision_from(table, &cur, src) {
            Ok(ev) if ev.class != EventClass::Tangential && ev.class != EventClass::Corner => ev,
            Ok(_) | Err(_) => {
                if restarts.len() >= MAX_RESTARTS {
                    return Err(DiagnosticsError::TooManyRestarts(restarts.len()));
                }
                restarts.push(count);
                let mut y = last;
                y.r += 1e-9 * (2.0 * rng.random::<f64>() - 1.0);
                y.phi += 1e-9 * (2.0 * rng.random::<f64>() - 1.0);
                cur = dynamics::to_flow(table, &y)?;
                last = y;
                src = Some(y.component);
                continue;
            }
        };
        let g = 1.0 + ev.time * b;
        log_sum += g.ln();
        let flight = b / g;
        b = if ev.coord.material {
            wavefront::kick(flight, ev.curvature, ev.coord.phi).unwrap_or(flight)
        } else {
            flight
        };
        if ev.coord.material {
            count += 1;
            last = ev.coord;
            if count % every == 0 {
                trace.push((count, log_sum / count as f64));
            }
        }
        cur = dynamics::to_flow(table, &ev.coord)?;
        src = Some(ev.coord.component);
    }
    Ok(LyapunovReport {
        exponent: if n == 0 { 0.0 } else { log_sum / n as f64 },
        collisions: n,
        restarts,
        trace,
    })
}

/// Exponent of a periodic orbit of `period` material collisions through
/// `x`: the front curvature is iterated around the orbit to its fixed
/// point, and the per-period expansion divided by the period.
pub fn periodic_exponent(table: &Table, x: &CollisionCoord, period: usize) -> Result<f64, DiagnosticsError> {
    let orbit = event_orbit(table, x, period);
    if orbit.len < period {
        return Err(DiagnosticsError::InvalidConfig("orbit is singular within one period".into()));
    }
    let events = orbit.material[period];
    let mut b = 0.0;
    let mut jac = 1.0;
    for _ in 0..500 {
        let rec = wavefront::expansion(table, x, events, b).map_err(|e| match e {
            wavefront::WavefrontError::Dynamics(d) => DiagnosticsError::Dynamics(d),
            other => DiagnosticsError::InvalidConfig(other.to_string()),
        })?;
        jac = rec.jacobian;
        let settled = (rec.final_curvature - b).abs() <= 1e-15 * b.abs().max(1.0);
        b = rec.final_curvature;
        if settled {
            break;
        }
    }
    Ok(jac.ln() / period as f64)
}

// ---------------------------------------------------------------------------
// Birkhoff averages

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Observable {
    One,
    CosPhi,
    /// Indicator of `lo <= r < hi`.
    Arc { lo: f64, hi: f64 },
}

impl Observable {
    pub fn eval(&self, x: &CollisionCoord) -> f64 {
        match *self {
            Observable::One => 1.0,
            Observable::CosPhi => x.phi.cos(),
            Observable::Arc { lo, hi } => f64::from(u8::from(lo <= x.r && x.r < hi)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffReport {
    pub observables: Vec<Observable>,
    /// `averages[start][observable]`.
    pub averages: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Standard deviation across starts.
    pub dispersion: Vec<f64>,
    pub restarts: usize,
    /// Sufficiency of the centre of `U0` both ways, when decidable.
    pub center_sufficient: Option<bool>,
}

/// Birkhoff averages over `n` material collisions from `starts` points
/// drawn from `ν` in `u0`.
pub fn birkhoff_probe(
    table: &Table,
    u0: &U0,
    observables: &[Observable],
    n: usize,
    starts: usize,
    seed: u64,
) -> Result<BirkhoffReport, DiagnosticsError> {
    let runs = par::map_batches(starts, 1, seed, |range, rng| {
        range
            .map(|_| -> Result<(Vec<f64>, usize), DiagnosticsError> {
                let (mut x, _) = sample_u0(table, u0, rng)?;
                let mut sums = vec![0.0; observables.len()];
                let mut restarts = 0;
                let mut k = 0;
                while k < n {
                    match dynamics::material_map(table, &x) {
                        Ok(y) => {
                            x = y;
                            k += 1;
                            for (s, f) in sums.iter_mut().zip(observables) {
                                *s += f.eval(&x);
                            }
                        }
                        Err(_) => {
                            restarts += 1;
                            if restarts > MAX_RESTARTS {
                                return Err(DiagnosticsError::TooManyRestarts(restarts));
                            }
                            x.phi = (x.phi + 1e-9 * (2.0 * rng.random::<f64>() - 1.0)).clamp(-1.5, 1.5);
                            x.r += 1e-9 * (2.0 * rng.random::<f64>() - 1.0);
                        }
                    }
                }
                Ok((sums.into_iter().map(|s| s / n.max(1) as f64).collect(), restarts))
            })
            .collect()
    });
    let mut averages = Vec::with_capacity(starts);
    let mut restarts = 0;
    for r in runs {
        let (a, rs) = r?;
        averages.push(a);
        restarts += rs;
    }
    let m = averages.len().max(1) as f64;
    let mean: Vec<f64> = (0..observables.len())
        .map(|j| averages.iter().map(|a| a[j]).sum::<f64>() / m)
        .collect();
    let dispersion = (0..observables.len())
        .map(|j| {
            if averages.len() < 2 {
                return 0.0;
            }
            let var = averages.iter().map(|a| (a[j] - mean[j]).powi(2)).sum::<f64>() / (m - 1.0);
            var.sqrt()
        })
        .collect();
    let center_sufficient = u0.center.and_then(|c| {
        let f = sufficiency::is_future_sufficient(table, &c, 50).ok()?;
        let p = sufficiency::is_past_sufficient(table, &c, 50).ok()?;
        match (f.status, p.status) {
            (Status::Sufficient, Status::Sufficient) => Some(true),
            (Status::Undetermined, _) | (_, Status::Undetermined) => None,
            _ => Some(false),
        }
    });
    Ok(BirkhoffReport {
        observables: observables.to_vec(),
        averages,
        mean,
        dispersion,
        restarts,
        center_sufficient,
    })
}

// ---------------------------------------------------------------------------
// Invariance of ν

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampler {
    Nu,
    /// Uniform in `φ`: not invariant, for negative controls.
    UniformPhi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapChoice {
    Collision,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestStatistic {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub samples: usize,
    /// Samples dropped because their image was singular.
    pub skipped: usize,
    pub ks_r: TestStatistic,
    pub ks_phi: TestStatistic,
    pub chi2: TestStatistic,
    pub chi2_dof: usize,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^{k-1} exp(-2k²λ²)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestStatistic {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return TestStatistic { statistic: 0.0, p_value: 1.0 };
    }
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    TestStatistic { statistic: d, p_value: kolmogorov_q(lambda) }
}

/// Chi-square homogeneity test of two equal-size samples binned alike.
fn chi2_two_sample(a: &[usize], b: &[usize]) -> (TestStatistic, usize) {
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&x, &y) in a.iter().zip(b) {
        if x + y > 0 {
            stat += (x as f64 - y as f64).powi(2) / (x + y) as f64;
            cells += 1;
        }
    }
    let dof = cells.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).map_or(f64::NAN, |c| c.sf(stat))
    };
    (TestStatistic { statistic: stat, p_value }, dof)
}

const GRID: usize = 50;

/// Compares a sample with its image under `map`: KS on the `r` and `φ`
/// marginals, and chi-square on a 50×50 grid.
pub fn invariance_check(
    table: &Table,
    n: usize,
    seed: u64,
    sampler: Sampler,
    map: MapChoice,
) -> InvarianceReport {
    let pairs: Vec<Option<(CollisionCoord, CollisionCoord)>> = par::map_batches(n, 8192, seed, |range, rng| {
        range
            .map(|_| {
                let mut x = dynamics::sample_nu(table, rng);
                if sampler == Sampler::UniformPhi {
                    x.phi = (2.0 * rng.random::<f64>() - 1.0) * std::f64::consts::FRAC_PI_2;
                }
                let y = match map {
                    MapChoice::Identity => Some(x),
                    MapChoice::Collision => dynamics::material_map(table, &x).ok(),
                };
                y.map(|y| (x, y))
            })
            .collect()
    });
    let kept: Vec<(CollisionCoord, CollisionCoord)> = pairs.iter().flatten().copied().collect();
    let skipped = n - kept.len();
    let (xr, yr): (Vec<f64>, Vec<f64>) = kept.iter().map(|(x, y)| (x.r, y.r)).unzip();
    let (xp, yp): (Vec<f64>, Vec<f64>) = kept.iter().map(|(x, y)| (x.phi, y.phi)).unzip();
    let lo = table.material_components().map(|c| c.offset).fold(f64::INFINITY, f64::min);
    let hi = table.material_components().map(|c| c.offset + c.length).fold(f64::NEG_INFINITY, f64::max);
    let cell = |c: &CollisionCoord| {
        let i = (((c.r - lo) / (hi - lo)) * GRID as f64).floor().clamp(0.0, (GRID - 1) as f64) as usize;
        let u = (c.phi + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI;
        let j = (u * GRID as f64).floor().clamp(0.0, (GRID - 1) as f64) as usize;
        i * GRID + j
    };
    let mut ha = vec![0usize; GRID * GRID];
    let mut hb = vec![0usize; GRID * GRID];
    for (x, y) in &kept {
        ha[cell(x)] += 1;
        hb[cell(y)] += 1;
    }
    let (chi2, chi2_dof) = chi2_two_sample(&ha, &hb);
    InvarianceReport {
        samples: kept.len(),
        skipped,
        ks_r: ks_two_sample(&xr, &yr),
        ks_phi: ks_two_sample(&xp, &yp),
        chi2,
        chi2_dof,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constructions::sinai_tangency_fixture;
    use crate::tables;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn period_two(table: &Table) -> CollisionCoord {
        CollisionCoord { component: 0, r: table.nearest_r(Vec2::new(0.9, 0.5)), phi: 0.0, material: true }
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Q(1) and Q(1.36) from the series
        assert!((kolmogorov_q(1.0) - 0.26999967).abs() < 1e-7);
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert_eq!(kolmogorov_q(0.0), 1.0);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.2).collect();
        assert!(ks_two_sample(&a, &a).statistic == 0.0);
        let t = ks_two_sample(&a, &b);
        assert!((t.statistic - 0.2).abs() < 2e-3 && t.p_value < 1e-10);
    }

    #[test]
    fn period_two_orbit_is_good() {
        let t = tables::sinai();
        let cfg = DiagnosticsConfig { horizon: Some(20), ..DiagnosticsConfig::default() };
        assert_eq!(classify_point(&t, &period_two(&t), 1e-3, &cfg), Verdict::Good);
    }

    #[test]
    fn near_tangency_is_bad_at_that_step() {
        let t = tables::sinai();
        let f = sinai_tangency_fixture(0.3, 1e-7, 2).unwrap();
        let y = f.x;
        let orbit = wavefront::forward_orbit(&t, &y, 12).unwrap();
        let material: Vec<usize> = (0..orbit.len()).filter(|&i| orbit[i].material).collect();
        let kappa = wavefront::kappa_on_orbit(&t, &orbit, material[3], 0.0, &KappaGrid::default()).unwrap();
        let cfg = DiagnosticsConfig { horizon: Some(5), ..DiagnosticsConfig::default() };
        let delta = 4.0 * 1e-7 * kappa.zero / cfg.c3;
        assert_eq!(classify_point(&t, &y, delta, &cfg), Verdict::Bad { n: 3 });
    }

    #[test]
    fn square_corner_distance_oracle() {
        // In the unit square z_tub of a link is the distance from its line
        // to the nearest end of the two sides it joins, and κ = 1.
        let t = tables::square();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corners = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)];
        let ends = |q: Vec2| -> Vec<Vec2> {
            let on = |a: f64, b: f64| (a - b).abs() < 1e-12;
            corners
                .iter()
                .copied()
                .filter(|c| (on(q.x, 0.0) || on(q.x, 1.0)) && c.x == q.x.round() || (on(q.y, 0.0) || on(q.y, 1.0)) && c.y == q.y.round())
                .collect()
        };
        let cfg = DiagnosticsConfig { horizon: Some(8), deltas: vec![0.05], ..DiagnosticsConfig::default() };
        for _ in 0..200 {
            let y = dynamics::sample_nu(&t, &mut rng);
            let orbit = wavefront::forward_orbit(&t, &y, 9).unwrap();
            let mut expected = Verdict::Good;
            for n in 1..=8 {
                let a = dynamics::to_flow(&t, &orbit[n - 1]).unwrap();
                let b = dynamics::to_flow(&t, &orbit[n]).unwrap();
                let e = a.v.perp();
                let z = ends(a.q)
                    .into_iter()
                    .chain(ends(b.q))
                    .map(|c| (c - a.q).dot(e).abs())
                    .fold(f64::INFINITY, f64::min);
                let measured = singularity::z_tub(&t, &involution(&t, &orbit[n])).unwrap().value;
                assert!((measured - z).abs() < 1e-9, "{measured} vs {z}");
                if z < cfg.c3 * 0.05 && expected == Verdict::Good {
                    expected = Verdict::Bad { n };
                }
            }
            assert_eq!(classify_point(&t, &y, 0.05, &cfg), expected);
        }
    }

    #[test]
    fn partition_and_dyadic_counts() {
        let t = tables::sinai();
        let cfg = DiagnosticsConfig {
            samples: 400,
            deltas: vec![0.05, 0.02],
            horizon: Some(8),
            seed: 5,
            ..DiagnosticsConfig::default()
        };
        let r = tail_estimate(&t, &cfg).unwrap();
        for d in &r.deltas {
            assert_eq!(d.good + d.bad + d.undetermined, r.samples as u64);
            for n in 0..d.tilde_by_n.len() {
                let sum: u64 = d.tilde_by_nm.iter().filter(|e| e.0 == n).map(|e| e.2).sum();
                assert_eq!(sum, d.tilde_by_n[n]);
            }
        }
        assert!(r.deltas[0].bad > 0);
        let again = tail_estimate(&t, &cfg).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn smaller_c3_never_creates_bad_points() {
        let t = tables::sinai();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let big = DiagnosticsConfig { horizon: Some(6), c3: 0.2, ..DiagnosticsConfig::default() };
        let small = DiagnosticsConfig { c3: 0.05, ..big.clone() };
        for _ in 0..300 {
            let y = dynamics::sample_nu(&t, &mut rng);
            let a = classify_point(&t, &y, 0.05, &big);
            let b = classify_point(&t, &y, 0.05, &small);
            assert!(!(a == Verdict::Good && matches!(b, Verdict::Bad { .. })), "{y:?}");
        }
    }

    #[test]
    fn period_two_exponent_is_golden() {
        let t = tables::sinai();
        let x = period_two(&t);
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let lam = periodic_exponent(&t, &x, 1).unwrap();
        assert!((lam - 2.0 * golden.ln()).abs() < 1e-9, "{lam}");
        // two-ray oracle across both legs at the fixed curvature
        let b_star = (1.0 + 5f64.sqrt()) / 0.4;
        let (d1, b1) = wavefront::two_ray_step(&t, &x, b_star, 1e-7).unwrap();
        let wall = dynamics::collision_map(&t, &x).unwrap();
        let (d2, _) = wavefront::two_ray_step(&t, &wall, b1, 1e-7).unwrap();
        assert!(((d1 * d2).ln() - lam).abs() < 1e-6);
    }

    #[test]
    fn square_has_zero_exponent() {
        let t = tables::square();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = dynamics::sample_nu(&t, &mut rng);
        let r = lyapunov_estimate(&t, &x, 10_000, &mut rng).unwrap();
        assert!(r.exponent.abs() < 10.0 * (1e4f64).ln() / 1e4);
    }

    #[test]
    fn sinai_exponent_is_positive() {
        let t = tables::sinai();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = dynamics::sample_nu(&t, &mut rng);
        let r = lyapunov_estimate(&t, &x, 20_000, &mut rng).unwrap();
        assert!(r.exponent > 0.1, "{r:?}");
    }

    #[test]
    fn constant_observable_averages_to_one() {
        let t = tables::sinai();
        let r = birkhoff_probe(&t, &U0::whole(), &[Observable::One], 500, 4, 1).unwrap();
        assert!(r.averages.iter().all(|a| a[0] == 1.0));
        assert_eq!(r.dispersion[0], 0.0);
    }

    #[test]
    fn identity_map_gives_zero_statistics() {
        let t = tables::sinai();
        let r = invariance_check(&t, 2000, 4, Sampler::Nu, MapChoice::Identity);
        assert_eq!(r.ks_r.statistic, 0.0);
        assert_eq!(r.ks_phi.statistic, 0.0);
        assert_eq!(r.chi2.statistic, 0.0);
    }

    #[test]
    fn biased_sampler_is_rejected() {
        let t = tables::sinai();
        let r = invariance_check(&t, 100_000, 4, Sampler::UniformPhi, MapChoice::Collision);
        assert!(r.ks_phi.p_value < 1e-6 || r.chi2.p_value < 1e-6, "{r:?}");
    }
}
