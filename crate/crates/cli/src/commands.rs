use anyhow::anyhow;
use clap::{Args, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use semidisperse::constructions::{self, BadPointFixture, StripConfig, SyncConfig};
use semidisperse::diagnostics::{self, DiagnosticsConfig, DiagnosticsError, MapChoice, Observable, Sampler, U0};
use semidisperse::dynamics::{self, CollisionCoord};
use semidisperse::geometry::Ambient;
use semidisperse::singularity::{self, TraceConfig};
use semidisperse::sufficiency;
use semidisperse::wavefront::{self, KappaGrid};
use semidisperse::{tables, Table};

use crate::output::Run;
use crate::{Cli, Command, Failure, TableArg};

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let seed = cli.common.seed;
    let out = cli.common.out_dir();
    macro_rules! start {
        ($name:literal, $args:expr) => {
            Run::new(out.clone(), $name, seed, serde_json::to_value($args).map_err(Failure::config)?)?
        };
    }
    match &cli.command {
        Command::Validate(a) => validate(a, start!("validate", a)),
        Command::Simulate(a) => simulate(a, seed, start!("simulate", a)),
        Command::TraceSing(a) => trace_sing(a, start!("trace-sing", a)),
        Command::ZtubMap(a) => ztub_map(a, start!("ztub-map", a)),
        Command::Kappa(a) => kappa(a, seed, start!("kappa", a)),
        Command::EmbeddingFuzz(a) => fuzz(a, seed, start!("lemma21-fuzz", a)),
        Command::SyncFrame(a) => sync_frame(a, start!("sync-frame", a)),
        Command::StripCheck(a) => strip_check(a, start!("strip-check", a)),
        Command::Tail(a) => tail(a, seed, start!("tail", a)),
        Command::Ansatz(a) => ansatz(a, seed, start!("ansatz", a)),
        Command::Lyapunov(a) => lyapunov(a, seed, start!("lyapunov", a)),
        Command::Birkhoff(a) => birkhoff(a, seed, start!("birkhoff", a)),
        Command::Invariance(a) => invariance(a, seed, start!("invariance", a)),
        Command::CalibrateC3(a) => calibrate(a, seed, start!("calibrate-c3", a)),
    }
}

/// Phase point from `(r, φ)`, checked against the table.
fn point(table: &Table, r: f64, phi: f64) -> Result<CollisionCoord, Failure> {
    let (component, _) = table.locate(r).map_err(Failure::config)?;
    if !(phi.abs() < std::f64::consts::FRAC_PI_2) {
        return Err(Failure::config(anyhow!("φ = {phi} is outside (-π/2, π/2)")));
    }
    Ok(CollisionCoord { component, r, phi, material: table.components[component].material })
}

fn optional_point(table: &Table, r: Option<f64>, phi: Option<f64>) -> Result<Option<CollisionCoord>, Failure> {
    match (r, phi) {
        (Some(r), Some(phi)) => point(table, r, phi).map(Some),
        (None, None) => Ok(None),
        _ => Err(Failure::config(anyhow!("--r and --phi must be given together"))),
    }
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize)]
pub struct ValidateArgs {
    #[command(flatten)]
    table: TableArg,
}

fn validate(a: &ValidateArgs, mut run: Run) -> Result<(), Failure> {
    let (name, t) = a.table.load()?;
    match t.ambient {
        Ambient::Plane => println!("{name}: planar table"),
        Ambient::Torus { width, height } => println!("{name}: torus {width} x {height}"),
    }
    println!(
        "{} components ({} material, {} transparent walls), {} corners",
        t.components.len(),
        t.material_components().count(),
        t.transparent_walls().count(),
        t.corners.len()
    );
    println!("material boundary length {:.12}", t.material_length);
    for c in &t.components {
        println!(
            "  component {}: {:?}, r in [{:.6}, {:.6}), curvature {}{}",
            c.id,
            c.kind(),
            c.offset,
            c.offset + c.length,
            c.curvature(),
            if c.material { "" } else { ", transparent" }
        );
    }
    for (i, k) in t.corners.iter().enumerate() {
        println!("  corner {i}: ({:.6}, {:.6}) between {} and {}", k.point.x, k.point.y, k.incoming, k.outgoing);
    }
    run.csv(
        "components.csv",
        &["one row per boundary component; r_start and length in arc-length units, curvature in 1/length (positive = dispersing)"],
        |w| {
            writeln!(w, "component_id,kind,r_start,length,curvature,material")?;
            for c in &t.components {
                writeln!(w, "{},{:?},{:.17e},{:.17e},{:.17e},{}", c.id, c.kind(), c.offset, c.length, c.curvature(), c.material)?;
            }
            Ok(())
        },
    )?;
    run.json("table.json", t.description())?;
    run.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    table: TableArg,
    /// Number of collisions, transparent crossings included.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Starting arc-length coordinate; sampled from ν when omitted.
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<f64>,
}

fn simulate(a: &SimulateArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    let x = match optional_point(&t, a.r, a.phi)? {
        Some(x) => x,
        None => dynamics::sample_nu(&t, &mut ChaCha8Rng::seed_from_u64(seed)),
    };
    let rows = dynamics::trajectory(&t, &x, a.n);
    run.csv(
        "trajectory.csv",
        &[
            "t: cumulative flight time; r: arc length on the boundary; phi: angle from the inward normal (radians)",
            "q, v: position in the fundamental domain and unit velocity after the event; class: regular|tangential|corner|transparent",
        ],
        |w| dynamics::write_trajectory_csv(&rows, w),
    )?;
    let last = rows.last().map(|r| r.class.as_str()).unwrap_or("none");
    println!("{} events written, last event {last}", rows.len().saturating_sub(1));
    run.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize)]
pub struct TraceArgs {
    #[command(flatten)]
    table: TableArg,
    /// Order n of S_n (nonzero, negative for the past).
    #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
    order: i32,
    /// Largest gap between consecutive traced points in (r, φ).
    #[arg(long, default_value_t = 1e-3)]
    resolution: f64,
    #[arg(long, default_value_t = 256)]
    initial_samples: usize,
    #[arg(long, default_value_t = 4_000_000)]
    max_evaluations: usize,
}

fn trace_sing(a: &TraceArgs, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    if !(a.resolution > 0.0) {
        return Err(Failure::config(anyhow!("--resolution must be positive")));
    }
    let cfg = TraceConfig {
        resolution: a.resolution,
        initial_samples: a.initial_samples,
        max_evaluations: a.max_evaluations,
        ..TraceConfig::default()
    };
    let curves = match singularity::trace_sn(&t, a.order, &cfg) {
        Err(e @ singularity::SingularityError::InvalidOrder { .. }) => return Err(Failure::config(e)),
        r => r.map_err(Failure::numerical)?,
    };
    run.csv(
        "curves.csv",
        &["polyline vertices of S_n in (r, phi): r arc length, phi radians; source: tangency|corner|wall-corner family"],
        |w| singularity::write_curves_csv(&curves, w),
    )?;
    let total: f64 = curves.iter().map(|c| c.length()).sum();
    println!("{} curves, total (r, φ) length {total:.6}", curves.len());
    run.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize)]
pub struct ZtubArgs {
    #[command(flatten)]
    table: TableArg,
    /// Grid points along the material boundary.
    #[arg(long, default_value_t = 200)]
    cols: usize,
    /// Grid rows in φ.
    #[arg(long, default_value_t = 200)]
    rows: usize,
}

fn ztub_map(a: &ZtubArgs, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    if a.cols == 0 || a.rows < 2 {
        return Err(Failure::config(anyhow!("need --cols >= 1 and --rows >= 2")));
    }
    let phis = singularity::phi_grid(a.rows);
    let mut nodes = Vec::new();
    for c in t.material_components() {
        let k = ((a.cols as f64 * c.length / t.material_length).ceil() as usize).max(1);
        for i in 0..k {
            let r = c.offset + c.length * (i as f64 + 0.5) / k as f64;
            for &phi in &phis {
                nodes.push(CollisionCoord { component: c.id, r, phi, material: true });
            }
        }
    }
    let values = semidisperse::par::map(&nodes, |x| singularity::z_tub(&t, x));
    run.csv(
        "ztub.csv",
        &["z_tub: tubular radius of the free-flight link (length units), NaN where the point itself is singular"],
        |w| {
            writeln!(w, "r,phi,z_tub,obstruction")?;
            for (x, v) in nodes.iter().zip(&values) {
                match v {
                    Ok(z) => writeln!(w, "{:.17e},{:.17e},{:.17e},{}", x.r, x.phi, z.value, serde_json::to_value(z.obstruction).unwrap_or_default().as_str().unwrap_or(""))?,
                    Err(_) => writeln!(w, "{:.17e},{:.17e},NaN,singular", x.r, x.phi)?,
                }
            }
            Ok(())
        },
    )?;
    println!("{} grid points", nodes.len());
    run.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize)]
pub struct KappaArgs {
    #[command(flatten)]
    table: TableArg,
    /// Largest n, counted in boundary events.
    #[arg(long, default_value_t = 20)]
    n: usize,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    /// Orbits sampled from ν (ignored when --r/--phi are given).
    #[arg(long, default_value_t = 10)]
    samples: usize,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<f64>,
}

fn kappa(a: &KappaArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    if !(a.delta > 0.0) {
        return Err(Failure::config(anyhow!("--delta must be positive")));
    }
    let starts = match optional_point(&t, a.r, a.phi)? {
        Some(x) => vec![x],
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..a.samples).map(|_| dynamics::sample_nu(&t, &mut rng)).collect()
        }
    };
    let grid = KappaGrid::default();
    let rows: Vec<Vec<(usize, f64, f64)>> = semidisperse::par::map(&starts, |x| {
        let mut rows = Vec::new();
        let Ok(orbit) = wavefront::forward_orbit(&t, x, a.n) else { return rows };
        for n in 0..=a.n {
            match wavefront::kappa_on_orbit(&t, &orbit, n, a.delta, &grid) {
                Ok(k) => rows.push((n, k.zero, k.delta)),
                Err(_) => break,
            }
        }
        rows
    });
    run.csv(
        "kappa.csv",
        &[
            "kappa_zero: flat-front expansion from -T^n x back to -x; kappa_delta: minimum over divergent fronts ending within delta of -x",
            "n counts boundary events including transparent crossings; rows stop at the first singular encounter",
        ],
        |w| {
            writeln!(w, "orbit,r0,phi0,n,kappa_zero,kappa_delta")?;
            for (i, (x, rs)) in starts.iter().zip(&rows).enumerate() {
                for (n, k0, kd) in rs {
                    writeln!(w, "{i},{:.17e},{:.17e},{n},{k0:.17e},{kd:.17e}", x.r, x.phi)?;
                }
            }
            Ok(())
        },
    )?;
    println!("{} orbits", starts.len());
    run.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize)]
pub struct FuzzArgs {
    #[arg(long, default_value_t = 1e-3)]
    eps0: f64,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
}

fn fuzz(a: &FuzzArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let rep = match constructions::embedding_fuzz(a.n, a.eps0, seed) {
        Err(e @ constructions::ConstructionError::PreconditionViolated(_)) => return Err(Failure::config(e)),
        r => r.map_err(Failure::numerical)?,
    };
    run.json("fuzz.json", &rep)?;
    println!(
        "{} pairs, {} violations (far {}, near {}, flat {}); max |tau| = {:.1} eps0",
        rep.pairs,
        rep.violations,
        rep.far,
        rep.near,
        rep.flat,
        rep.max_tau / a.eps0
    );
    run.finish()?;
    if rep.violations > 0 {
        return Err(Failure::numerical(anyhow!("{} embeddings violate the bounds", rep.violations)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

/// Where the frame comes from: a built-in fixture, or a point on a table.
#[derive(Args, Debug, Serialize)]
pub struct FrameSource {
    /// Table, only needed with --r/--phi.
    #[arg(long, value_name = "PATH")]
    table: Option<String>,
    /// Index into the built-in bad-point fixtures.
    #[arg(long, default_value_t = 0, conflicts_with_all = ["r", "phi"])]
    fixture: usize,
    #[arg(long, allow_hyphen_values = true, requires = "phi")]
    r: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "r")]
    phi: Option<f64>,
    /// Index of the link T^n x -> T^{n+1} x carrying the frame.
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// Largest distance from the base point to the singular endpoint.
    #[arg(long, default_value_t = 1e-2)]
    z_max: f64,
    #[arg(long)]
    front_curvature: Option<f64>,
    #[arg(long, default_value_t = 1e-9)]
    min_fraction: f64,
    #[arg(long, default_value_t = 64)]
    probes: usize,
}

impl FrameSource {
    fn resolve(&self) -> Result<(Table, BadPointFixture), Failure> {
        let sync = SyncConfig {
            z_max: self.z_max,
            front_curvature: self.front_curvature,
            min_fraction: self.min_fraction,
            probes: self.probes,
        };
        if let (Some(r), Some(phi)) = (self.r, self.phi) {
            let arg = TableArg { path: None, table: self.table.clone() };
            let (name, t) = arg.load()?;
            let x = point(&t, r, phi)?;
            let f = BadPointFixture { table: name, x, n: self.n, sync, strip: StripConfig::default() };
            return Ok((t, f));
        }
        let fixtures = constructions::bad_point_fixtures();
        let f = fixtures
            .get(self.fixture)
            .cloned()
            .ok_or_else(|| Failure::config(anyhow!("fixture {} out of range (0..{})", self.fixture, fixtures.len())))?;
        let t = tables::by_name(&f.table).ok_or_else(|| Failure::config(anyhow!("unknown table {}", f.table)))?;
        Ok((t, f))
    }
}

fn sync_frame(a: &FrameSource, mut run: Run) -> Result<(), Failure> {
    let (t, f) = a.resolve()?;
    let frame = constructions::build_sync_frame(&t, &f.x, f.n, &f.sync).map_err(Failure::numerical)?;
    let lmf = constructions::lmf_check(&frame);
    run.json("frame.json", &frame)?;
    run.json("lmf.json", &lmf)?;
    println!(
        "{:?} frame, eps1 = {:.3e}, z = {:.3e}; scalar products {:.3e} {:.3e} {:.3e} {:.3e} -> {}",
        frame.mode,
        frame.epsilon1,
        frame.z,
        lmf.endpoint,
        lmf.base,
        lmf.chain_outer,
        lmf.chain_inner,
        if lmf.holds { "hold" } else { "violated" }
    );
    run.finish()?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct StripArgs {
    #[command(flatten)]
    source: FrameSource,
    /// Front samples spanning the strip.
    #[arg(long, default_value_t = 200)]
    samples: usize,
    /// Radius of the landing neighbourhood; the fixture's own when omitted.
    #[arg(long)]
    u0_radius: Option<f64>,
}

fn strip_check(a: &StripArgs, mut run: Run) -> Result<(), Failure> {
    let (t, f) = a.source.resolve()?;
    let frame = constructions::build_sync_frame(&t, &f.x, f.n, &f.sync).map_err(Failure::numerical)?;
    let cfg = StripConfig { samples: a.samples, u0_radius: a.u0_radius.unwrap_or(f.strip.u0_radius) };
    let strip = constructions::build_strip(&t, &frame, &cfg).map_err(Failure::numerical)?;
    let contain = constructions::strip_contains_orbit(&t, &strip, &frame.x3).map_err(Failure::numerical)?;
    run.csv(
        "strip.csv",
        &[
            "footpoint paths of the front samples in the universal cover: s is arc length along the front, vertex 0 the start, then each collision",
            "landing_r, landing_phi: collision coordinates after n+1 collisions",
        ],
        |w| {
            writeln!(w, "sample,s,vertex,x,y,landing_r,landing_phi")?;
            for (i, s) in strip.samples.iter().enumerate() {
                for (k, p) in s.path.iter().enumerate() {
                    writeln!(w, "{i},{:.17e},{k},{:.17e},{:.17e},{:.17e},{:.17e}", s.s, p.x, p.y, s.landing.r, s.landing.phi)?;
                }
            }
            Ok(())
        },
    )?;
    run.json("containment.json", &contain)?;
    println!(
        "{:?} strip, area {:.3e}; x3 {} the strip, landing {} the edges, {} U0 -> {}",
        strip.mode,
        strip.area,
        if contain.start_inside { "starts in" } else if contain.entered_at.is_some() { "enters" } else { "misses" },
        if contain.landing_between { "between" } else { "outside" },
        if contain.landed_in_u0 { "in" } else { "outside" },
        if contain.contained() { "contained" } else { "escapes" }
    );
    run.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------

/// Base neighbourhood U0: a ball around (r, φ), or the whole space.
#[derive(Args, Debug, Serialize)]
pub struct U0Args {
    #[arg(long, allow_hyphen_values = true, requires = "u0_phi")]
    u0_r: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "u0_r")]
    u0_phi: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    u0_radius: f64,
}

impl U0Args {
    fn build(&self, t: &Table) -> Result<U0, Failure> {
        Ok(match optional_point(t, self.u0_r, self.u0_phi)? {
            Some(c) => U0::ball(c, self.u0_radius),
            None => U0::whole(),
        })
    }
}

#[derive(Args, Debug, Serialize)]
pub struct DiagArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [1e-2, 5e-3, 2.5e-3, 1.25e-3])]
    deltas: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    c3: f64,
    /// Base of the dyadic split of κ.
    #[arg(long, default_value_t = 2.0)]
    lambda: f64,
    /// F(δ) = f_scale · log2(1/δ).
    #[arg(long, default_value_t = 1.0)]
    f_scale: f64,
    /// Collision horizon; ⌈F(δ_min)⌉ + 10 when omitted.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[command(flatten)]
    u0: U0Args,
    /// Initial curvatures searched for κ_{n,δ}.
    #[arg(long, value_delimiter = ',')]
    kappa_curvatures: Option<Vec<f64>>,
    /// Endpoint offsets for κ_{n,δ}, as fractions of δ.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    kappa_offsets: Option<Vec<f64>>,
    #[arg(long, default_value_t = 50)]
    sufficiency_horizon: usize,
    #[arg(long, default_value_t = 2048)]
    batch: usize,
}

impl DiagArgs {
    fn config(&self, t: &Table, seed: u64) -> Result<DiagnosticsConfig, Failure> {
        let mut grid = KappaGrid::default();
        if let Some(c) = &self.kappa_curvatures {
            grid.curvatures = c.clone();
        }
        if let Some(o) = &self.kappa_offsets {
            grid.offsets = o.clone();
        }
        let cfg = DiagnosticsConfig {
            deltas: self.deltas.clone(),
            c3: self.c3,
            lambda: self.lambda,
            f_scale: self.f_scale,
            horizon: self.horizon,
            samples: self.samples,
            seed,
            u0: self.u0.build(t)?,
            kappa_grid: grid,
            sufficiency_horizon: self.sufficiency_horizon,
            batch: self.batch,
        };
        cfg.validate().map_err(Failure::config)?;
        Ok(cfg)
    }
}

fn diag_failure(e: DiagnosticsError) -> Failure {
    match e {
        DiagnosticsError::InvalidConfig(_) => Failure::config(e),
        _ => Failure::numerical(e),
    }
}

#[derive(Args, Debug, Serialize)]
pub struct TailArgs {
    #[command(flatten)]
    table: TableArg,
    #[command(flatten)]
    diag: DiagArgs,
}

fn tail(a: &TailArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    let cfg = a.diag.config(&t, seed)?;
    let report = diagnostics::tail_estimate(&t, &cfg).map_err(diag_failure)?;
    run.csv(
        "tail.csv",
        &[
            "delta: scale; nu_tail_hat: estimated nu(U_omega^b) relative to the normalized measure nu; stderr: its binomial standard error",
            "ratio: nu_tail_hat / delta",
        ],
        |w| report.write_ratio_csv(w),
    )?;
    run.json("tail.json", &report)?;
    println!("horizon {}, {} samples ({} draws)", report.horizon, report.samples, report.draws);
    for d in &report.deltas {
        println!(
            "delta {:.4e}: F = {:.2}, tail {:.3e} ± {:.1e}, ratio {:.4e}{}{}",
            d.delta,
            d.threshold,
            d.nu_tail,
            d.nu_tail_se,
            d.ratio,
            if d.insufficient { " (insufficient samples)" } else { "" },
            if d.saturated { " (delta exceeds table features)" } else { "" }
        );
    }
    println!("ratio strictly decreasing within 2 sigma: {}", report.strictly_decreasing());
    run.finish()?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct CalibrateArgs {
    #[command(flatten)]
    table: TableArg,
    #[arg(long, value_delimiter = ',', default_values_t = [0.025, 0.05, 0.1, 0.2, 0.4])]
    c3_values: Vec<f64>,
    #[command(flatten)]
    diag: DiagArgs,
}

fn calibrate(a: &CalibrateArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    let cfg = a.diag.config(&t, seed)?;
    if a.c3_values.iter().any(|c| !(*c > 0.0)) {
        return Err(Failure::config(anyhow!("c3 values must be positive")));
    }
    let rows = diagnostics::calibrate_c3(&t, &a.c3_values, &cfg).map_err(diag_failure)?;
    run.csv(
        "calibration.csv",
        &["fractions of samples per verdict at each (c3, delta); nu_tail relative to normalized nu; ratio = nu_tail / delta"],
        |w| {
            writeln!(w, "c3,delta,good,bad,undetermined,nu_tail,ratio")?;
            for r in &rows {
                writeln!(w, "{:e},{:e},{:e},{:e},{:e},{:e},{:e}", r.c3, r.delta, r.good, r.bad, r.undetermined, r.nu_tail, r.ratio)?;
            }
            Ok(())
        },
    )?;
    for r in &rows {
        println!("c3 {:.3e} delta {:.3e}: bad {:.4e}, ratio {:.4e}", r.c3, r.delta, r.bad, r.ratio);
    }
    run.finish()?;
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Serialize)]
pub struct AnsatzArgs {
    #[command(flatten)]
    table: TableArg,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Event horizon for past sufficiency.
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    /// Trace resolution of S_1.
    #[arg(long, default_value_t = 1e-3)]
    resolution: f64,
}

fn ansatz(a: &AnsatzArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    let trace = TraceConfig::with_resolution(a.resolution);
    let report = sufficiency::ansatz_sampler(&t, a.samples, a.horizon, seed, &trace).map_err(Failure::numerical)?;
    run.json("ansatz.json", &report)?;
    run.csv(
        "ansatz_curves.csv",
        &["per traced S_1 curve: samples drawn uniformly in (r, phi) length and how many were past sufficient"],
        |w| {
            writeln!(w, "curve_id,source,samples,sufficient")?;
            for c in &report.per_curve {
                writeln!(w, "{},{},{},{}", c.curve_id, c.source.as_str(), c.samples, c.sufficient)?;
            }
            Ok(())
        },
    )?;
    println!(
        "sufficient {:.4} ± {:.4}, undetermined {:.4}, insufficient {:.4} ({} samples, horizon {})",
        report.sufficient_fraction,
        report.standard_error,
        report.undetermined_fraction,
        1.0 - report.sufficient_fraction - report.undetermined_fraction,
        report.n_samples,
        report.horizon
    );
    run.finish()?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct LyapunovArgs {
    #[command(flatten)]
    table: TableArg,
    /// Material collisions per start.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    starts: usize,
}

fn lyapunov(a: &LyapunovArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    if a.n == 0 || a.starts == 0 {
        return Err(Failure::config(anyhow!("--n and --starts must be positive")));
    }
    let reports = semidisperse::par::map_batches(a.starts, 1, seed, |range, rng| {
        range
            .map(|_| {
                let x = dynamics::sample_nu(&t, rng);
                diagnostics::lyapunov_estimate(&t, &x, a.n, rng).map(|r| (x, r))
            })
            .collect()
    });
    let reports: Vec<_> = reports.into_iter().collect::<Result<_, _>>().map_err(Failure::numerical)?;
    run.csv(
        "lyapunov.csv",
        &["exponent: mean log expansion of a flat front per material collision; restarts: singular encounters skipped by a 1e-9 perturbation"],
        |w| {
            writeln!(w, "start,r0,phi0,exponent,collisions,restarts")?;
            for (i, (x, r)) in reports.iter().enumerate() {
                writeln!(w, "{i},{:.17e},{:.17e},{:.17e},{},{}", x.r, x.phi, r.exponent, r.collisions, r.restarts.len())?;
            }
            Ok(())
        },
    )?;
    let e: Vec<f64> = reports.iter().map(|(_, r)| r.exponent).collect();
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let sd = if e.len() > 1 {
        (e.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (e.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    println!("lambda = {mean:.6} ± {sd:.2e} over {} starts of {} collisions", e.len(), a.n);
    run.finish()?;
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct BirkhoffArgs {
    #[command(flatten)]
    table: TableArg,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    starts: usize,
    /// Observables: `one`, `cos-phi`, or `arc:LO:HI` (indicator of LO <= r < HI).
    #[arg(long, value_delimiter = ',', default_values_t = ["one".to_string(), "cos-phi".to_string()])]
    observables: Vec<String>,
    #[command(flatten)]
    u0: U0Args,
}

fn parse_observable(s: &str) -> Result<Observable, Failure> {
    let bad = || Failure::config(anyhow!("unknown observable {s:?}"));
    match s {
        "one" => Ok(Observable::One),
        "cos-phi" => Ok(Observable::CosPhi),
        _ => {
            let parts: Vec<&str> = s.split(':').collect();
            match parts.as_slice() {
                ["arc", lo, hi] => Ok(Observable::Arc {
                    lo: lo.parse().map_err(|_| bad())?,
                    hi: hi.parse().map_err(|_| bad())?,
                }),
                _ => Err(bad()),
            }
        }
    }
}

fn birkhoff(a: &BirkhoffArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    let obs: Vec<Observable> = a.observables.iter().map(|s| parse_observable(s)).collect::<Result<_, _>>()?;
    let u0 = a.u0.build(&t)?;
    let report = diagnostics::birkhoff_probe(&t, &u0, &obs, a.n, a.starts, seed).map_err(diag_failure)?;
    run.csv(
        "birkhoff.csv",
        &["time averages over n material collisions, one row per start drawn from nu restricted to U0; one column per observable"],
        |w| {
            writeln!(w, "start,{}", a.observables.join(","))?;
            for (i, row) in report.averages.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(w, "{i},{}", cells.join(","))?;
            }
            Ok(())
        },
    )?;
    run.json("birkhoff.json", &report)?;
    for (name, (m, d)) in a.observables.iter().zip(report.mean.iter().zip(&report.dispersion)) {
        println!("{name}: mean {m:.6}, dispersion {d:.2e}");
    }
    run.finish()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerArg {
    Nu,
    UniformPhi,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MapArg {
    Collision,
    Identity,
}

#[derive(Args, Debug, Serialize)]
pub struct InvarianceArgs {
    #[command(flatten)]
    table: TableArg,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, value_enum, default_value_t = SamplerArg::Nu)]
    sampler: SamplerArg,
    #[arg(long, value_enum, default_value_t = MapArg::Collision)]
    map: MapArg,
}

fn invariance(a: &InvarianceArgs, seed: u64, mut run: Run) -> Result<(), Failure> {
    let (_, t) = a.table.load()?;
    if a.samples < 2 {
        return Err(Failure::config(anyhow!("--samples must be at least 2")));
    }
    let sampler = match a.sampler {
        SamplerArg::Nu => Sampler::Nu,
        SamplerArg::UniformPhi => Sampler::UniformPhi,
    };
    let map = match a.map {
        MapArg::Collision => MapChoice::Collision,
        MapArg::Identity => MapChoice::Identity,
    };
    let r = diagnostics::invariance_check(&t, a.samples, seed, sampler, map);
    run.json("invariance.json", &r)?;
    println!(
        "KS r: D = {:.3e}, p = {:.4}; KS phi: D = {:.3e}, p = {:.4}; chi2 = {:.1} (dof {}), p = {:.4}; {} skipped",
        r.ks_r.statistic, r.ks_r.p_value, r.ks_phi.statistic, r.ks_phi.p_value, r.chi2.statistic, r.chi2_dof, r.chi2.p_value, r.skipped
    );
    run.finish()?;
    Ok(())
}
