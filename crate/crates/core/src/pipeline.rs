//! Run configuration and the end-to-end pipeline: grid, advection, transfer
//! matrix, singular vectors, coherent pair.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boxgrid::BoxGrid;
use crate::dataio::{self, PartitionSummary, RunMetadata, RunOutputs, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::flowfield::{
    BickleyField, BickleyParams, ConstantField, FlowMapSpec, GriddedField, GriddedManifest, LinearField, Units, VelocityField,
};
use crate::ftle::{ftle_field, Direction, FtleField, PointLattice};
use crate::partition::{coherence_ratio_pointwise, extract_coherent_pair, CoherentPartition, PartitionOptions};
use crate::spectral::{check_leading_pair, second_singular_triplet, CoherenceVectors, LeadingPairReport, SolverOptions, WeightedOperator};
use crate::ulam::{build_transition_system, MeasureSpec, SampleScheme, TransitionSystem, UlamOptions, Weights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Analytic jet in Mm and days.
    Bickley {
        #[serde(default)]
        params: BickleyParams,
    },
    /// Directory holding `manifest.json` and snapshot files.
    Gridded { path: PathBuf },
    /// Autonomous `f(z) = M z`.
    Linear { matrix: Vec<Vec<f64>> },
    Constant { velocity: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Box edge lengths; must tile `hi − lo`. Exclusive with `counts`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_size: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<usize>>,
    /// Defaults to the axes on which the field is periodic with period `hi − lo`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitsSpec {
    pub axes: Vec<String>,
    pub time: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointwiseSpec {
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Also write raw landing counts.
    #[serde(default = "yes")]
    pub counts: bool,
    /// Write PGM rasters next to FTLE CSVs.
    #[serde(default = "yes")]
    pub raster: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { counts: true, raster: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FtleSpec {
    /// Points per axis.
    pub counts: Vec<usize>,
    /// Defaults to the domain bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    /// Defaults to `1e-5` of the smallest box edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Defaults to the run's `step`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Defaults to the run's `tau`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "both_directions")]
    pub directions: Vec<Direction>,
    /// Known exact exponent; the driver reports the largest deviation from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

fn both_directions() -> Vec<Direction> {
    vec![Direction::Forward, Direction::Backward]
}

fn uniform() -> MeasureSpec {
    MeasureSpec::Uniform
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub field: FieldSpec,
    pub domain: DomainSpec,
    /// Initial time.
    pub t: f64,
    /// Flow duration; negative for backward flow.
    pub tau: f64,
    /// RK4 step.
    pub step: f64,
    pub samples_per_box: usize,
    #[serde(default)]
    pub sampling: SampleScheme,
    #[serde(default = "uniform")]
    pub measure: MeasureSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub partition: PartitionOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pointwise: Option<PointwiseSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ftle: Option<FtleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Checked against the units the field declares.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<UnitsSpec>,
}

impl RunConfig {
    /// Parse a config file; relative paths inside it resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Checks that need no field data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg).in_stage("config"));
        if self.domain.lo.len() != self.domain.hi.len() {
            return bad("`domain.lo` and `domain.hi` differ in length".into());
        }
        if self.tau == 0.0 || !self.tau.is_finite() {
            return bad(format!("`tau` must be finite and nonzero, got {}", self.tau));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("`step` must be positive, got {}", self.step));
        }
        if self.samples_per_box == 0 {
            return bad("`samples_per_box` must be positive".into());
        }
        if self.threads == Some(0) {
            return bad("`threads` must be positive".into());
        }
        if let Some(f) = &self.ftle {
            if f.tau == Some(0.0) {
                return bad("`ftle.tau` must be nonzero".into());
            }
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let FieldSpec::Gridded { path } = &mut self.field {
            fix(path);
        }
        match &mut self.measure {
            MeasureSpec::FromFile { path } => fix(path),
            MeasureSpec::PressureWeighted { pressures: Weights::File(path), .. } => fix(path),
            _ => {}
        }
    }

    pub fn dim(&self) -> usize {
        self.domain.lo.len()
    }
}

/// Run `f` on a dedicated pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub ts: TransitionSystem,
    pub cv: CoherenceVectors,
    pub partition: CoherentPartition,
    pub leading_pair: LeadingPairReport,
    pub summary: PartitionSummary,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl RunResult {
    /// Write the run directory; the metadata echoes `config`.
    pub fn write(&self, dir: &Path, config: &RunConfig) -> Result<Vec<PathBuf>> {
        let metadata = RunMetadata {
            format_version: FORMAT_VERSION,
            config: serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))?,
            m: self.ts.m(),
            n: self.ts.n(),
            nnz: self.ts.matrix.nnz(),
            samples_per_box: self.ts.samples_per_box,
            lost_mass: self.ts.lost_mass,
            pruned_mass: self.ts.pruned_mass,
            sigma2: self.cv.sigma2,
            residual: self.cv.residual,
            iterations: self.cv.iterations,
            components: self.cv.components,
            source_grid: self.ts.geometry.as_ref().map(|g| g.source.clone()),
            image_grid: self.ts.geometry.as_ref().map(|g| g.image.clone()),
            leading_pair: self.leading_pair,
            partition: self.summary.clone(),
            timings: self.timings.clone(),
            files: Vec::new(),
        };
        dataio::write_outputs(
            dir,
            RunOutputs {
                ts: &self.ts,
                cv: &self.cv,
                partition: &self.partition,
                metadata,
                write_counts: config.outputs.counts,
            },
        )
    }
}

fn units_check(expected: Option<&UnitsSpec>, axes: &[String], time: &str) -> Result<()> {
    if let Some(u) = expected {
        if u.axes != axes || u.time != time {
            return Err(Error::Config(format!(
                "config units {:?}/{} do not match field units {axes:?}/{time}",
                u.axes, u.time
            )));
        }
    }
    Ok(())
}

/// Gridded fields come in two or three dimensions.
enum Gridded {
    Two(GriddedField<2>),
    Three(GriddedField<3>),
}

fn load_gridded(path: &Path) -> Result<Gridded> {
    let manifest: GriddedManifest = dataio::read_json(&path.join(dataio::MANIFEST))
        .map_err(|e| Error::ManifestInvalid(e.to_string()))?;
    match manifest.axes.len() {
        2 => Ok(Gridded::Two(dataio::read_gridded_field(path)?)),
        3 => Ok(Gridded::Three(dataio::read_gridded_field(path)?)),
        d => Err(Error::ManifestInvalid(format!("{d}-dimensional fields are not supported"))),
    }
}

fn to_array<const D: usize>(v: &[f64], what: &str) -> Result<[f64; D]> {
    v.try_into().map_err(|_| Error::Config(format!("{what} needs {D} entries, got {}", v.len())))
}

fn linear<const D: usize>(matrix: &[Vec<f64>]) -> Result<LinearField<D>> {
    if matrix.len() != D {
        return Err(Error::Config(format!("linear field needs a {D}×{D} matrix")));
    }
    let mut m = [[0.0; D]; D];
    for (r, row) in matrix.iter().enumerate() {
        m[r] = to_array(row, "linear field row")?;
    }
    Ok(LinearField::new(m))
}

/// Apply `body` to the configured field with its static dimension.
macro_rules! dispatch_field {
    ($cfg:expr, |$f:ident| $body:expr) => {{
        let cfg: &RunConfig = $cfg;
        match (&cfg.field, cfg.dim()) {
            (FieldSpec::Bickley { params }, 2) => {
                units_check(cfg.units.as_ref(), &["Mm".to_string(), "Mm".to_string()], "day")?;
                let $f = BickleyField::new(params.clone())?;
                $body
            }
            (FieldSpec::Bickley { .. }, d) => Err(Error::Config(format!("bickley field is 2-D, domain is {d}-D"))),
            (FieldSpec::Gridded { path }, d) => match load_gridded(path)? {
                Gridded::Two($f) if d == 2 => {
                    let u = &$f.manifest().units;
                    units_check(cfg.units.as_ref(), &u.axes, &u.time)?;
                    $body
                }
                Gridded::Three($f) if d == 3 => {
                    let u = &$f.manifest().units;
                    units_check(cfg.units.as_ref(), &u.axes, &u.time)?;
                    $body
                }
                _ => Err(Error::Config(format!("gridded field dimension does not match {d}-D domain"))),
            },
            (FieldSpec::Linear { matrix }, 2) => {
                let $f = linear::<2>(matrix)?;
                $body
            }
            (FieldSpec::Linear { matrix }, 3) => {
                let $f = linear::<3>(matrix)?;
                $body
            }
            (FieldSpec::Constant { velocity }, 2) => {
                let $f = ConstantField { velocity: to_array::<2>(velocity, "velocity")?, periods: [None; 2] };
                $body
            }
            (FieldSpec::Constant { velocity }, 3) => {
                let $f = ConstantField { velocity: to_array::<3>(velocity, "velocity")?, periods: [None; 3] };
                $body
            }
            (_, d) => Err(Error::Config(format!("unsupported domain dimension {d}"))),
        }
    }};
}

/// Source grid of the run, with periodic flags inferred from the field.
pub fn build_grid<F: VelocityField<D>, const D: usize>(domain: &DomainSpec, field: &F) -> Result<BoxGrid> {
    if domain.lo.len() != D || domain.hi.len() != D {
        return Err(Error::Config(format!("domain bounds need {D} entries")));
    }
    let periodic = match &domain.periodic {
        Some(p) => p.clone(),
        None => field
            .periods()
            .iter()
            .enumerate()
            .map(|(a, p)| {
                p.is_some_and(|(_, period)| {
                    let extent = domain.hi[a] - domain.lo[a];
                    (extent - period).abs() <= 1e-9 * period
                })
            })
            .collect(),
    };
    match (&domain.box_size, &domain.counts) {
        (Some(b), None) => BoxGrid::build(&domain.lo, &domain.hi, b, &periodic),
        (None, Some(c)) => BoxGrid::from_counts(&domain.lo, &domain.hi, c, &periodic),
        _ => Err(Error::Config("domain needs exactly one of `box_size` or `counts`".into())),
    }
}

fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Grid, transfer matrix, singular vectors and coherent pair for one field.
pub fn run_field<F: VelocityField<D>, const D: usize>(cfg: &RunConfig, field: &F) -> Result<RunResult> {
    let mut timings = BTreeMap::new();
    let grid = build_grid(&cfg.domain, field).map_err(|e| e.in_stage("grid"))?;
    let flow = FlowMapSpec::new(field, cfg.t, cfg.tau, cfg.step).map_err(|e| e.in_stage("flow"))?;
    let opts = UlamOptions { samples_per_box: cfg.samples_per_box, scheme: cfg.sampling };

    let clock = Instant::now();
    let ts = build_transition_system(&flow, &grid, &cfg.measure, &opts).map_err(|e| e.in_stage("ulam"))?;
    timings.insert("ulam".into(), elapsed(clock));
    log::info!("transition matrix: m = {}, n = {}, nnz = {}", ts.m(), ts.n(), ts.matrix.nnz());

    let RunResult { ts, cv, partition, leading_pair, mut summary, timings: solve_times } = analyze(ts, cfg)?;
    timings.extend(solve_times);

    if let (Some(pw), Some(geom)) = (cfg.pointwise, ts.geometry.as_ref()) {
        let clock = Instant::now();
        let pointwise = |xs, ys, seed| {
            coherence_ratio_pointwise(&flow, geom, &ts.p, xs, ys, pw.samples, seed).map_err(|e| e.in_stage("pointwise"))
        };
        let r1 = pointwise(&partition.x1, &partition.y1, pw.seed)?;
        let r2 = pointwise(&partition.x2, &partition.y2, pw.seed ^ 1)?;
        summary.rho1_pointwise = Some(r1);
        summary.rho2_pointwise = Some(r2);
        timings.insert("pointwise".into(), elapsed(clock));
    }
    Ok(RunResult { ts, cv, partition, leading_pair, summary, timings })
}

/// Singular vectors and coherent pair of an assembled system.
pub fn analyze(ts: TransitionSystem, cfg: &RunConfig) -> Result<RunResult> {
    let mut timings = BTreeMap::new();
    let clock = Instant::now();
    let leading_pair = check_leading_pair(&WeightedOperator::new(&ts).map_err(|e| e.in_stage("spectral"))?);
    let cv = second_singular_triplet(&ts, &cfg.solver).map_err(|e| e.in_stage("spectral"))?;
    timings.insert("spectral".into(), elapsed(clock));

    let clock = Instant::now();
    let partition = extract_coherent_pair(&ts, &cv.x, &cv.y, &cfg.partition).map_err(|e| e.in_stage("partition"))?;
    timings.insert("partition".into(), elapsed(clock));
    let summary = PartitionSummary::new(&partition);
    Ok(RunResult { ts, cv, partition, leading_pair, summary, timings })
}

/// The full pipeline for a config.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let out: Result<RunResult> = dispatch_field!(cfg, |f| run_field(cfg, &f));
    out.map_err(|e| e.in_stage("field"))
}

/// Transition system alone, for callers that only need `P`.
pub fn transition_system(cfg: &RunConfig) -> Result<TransitionSystem> {
    dispatch_field!(cfg, |f| {
        let grid = build_grid(&cfg.domain, &f)?;
        let flow = FlowMapSpec::new(&f, cfg.t, cfg.tau, cfg.step)?;
        let opts = UlamOptions { samples_per_box: cfg.samples_per_box, scheme: cfg.sampling };
        build_transition_system(&flow, &grid, &cfg.measure, &opts)
    })
}

fn ftle_for<F: VelocityField<D>, const D: usize>(cfg: &RunConfig, field: &F) -> Result<Vec<FtleField>> {
    let spec = cfg.ftle.as_ref().ok_or_else(|| Error::Config("config has no `ftle` section".into()))?;
    let grid = build_grid(&cfg.domain, field)?;
    let lo = spec.lo.clone().unwrap_or_else(|| cfg.domain.lo.clone());
    let hi = spec.hi.clone().unwrap_or_else(|| cfg.domain.hi.clone());
    let lattice = PointLattice::spanning(&lo, &hi, &spec.counts)?;
    let min_edge = grid.lattice.box_size.iter().copied().fold(f64::INFINITY, f64::min);
    let delta = spec.delta.unwrap_or(1e-5 * min_edge);
    let tau = spec.tau.unwrap_or(cfg.tau);
    let step = spec.step.unwrap_or(cfg.step);
    spec.directions
        .iter()
        .map(|&dir| ftle_field(field, &lattice, cfg.t, tau, dir, delta, step).map_err(|e| e.in_stage("ftle")))
        .collect()
}

/// FTLE fields for every configured direction.
pub fn run_ftle(cfg: &RunConfig) -> Result<Vec<FtleField>> {
    cfg.validate()?;
    let out: Result<Vec<FtleField>> = dispatch_field!(cfg, |f| ftle_for(cfg, &f));
    out.map_err(|e| e.in_stage("field"))
}

/// Velocity of the configured field on a lattice at time `t`, one row per point.
pub fn sample_field(cfg: &RunConfig, lattice: &PointLattice, t: f64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    fn eval<F: VelocityField<D>, const D: usize>(f: &F, lattice: &PointLattice, t: f64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        (0..lattice.len())
            .map(|k| {
                let p = lattice.point(k);
                let z = to_array::<D>(&p, "lattice point")?;
                Ok((p, f.velocity(&z, t)?.to_vec()))
            })
            .collect()
    }
    dispatch_field!(cfg, |f| eval(&f, lattice, t))
}

/// Source grid of a config.
pub fn source_grid(cfg: &RunConfig) -> Result<BoxGrid> {
    dispatch_field!(cfg, |f| build_grid(&cfg.domain, &f))
}

/// Node coordinates per axis: `counts[a]` nodes spanning `[lo, hi]`, or, on
/// periodic axes, `[lo, hi)` with `hi − lo` the period.
pub fn node_axes(lo: &[f64], hi: &[f64], counts: &[usize], periodic: &[bool]) -> Result<Vec<Vec<f64>>> {
    if lo.len() != hi.len() || lo.len() != counts.len() || lo.len() != periodic.len() {
        return Err(Error::Config("node axis bounds, counts and periodic flags differ in length".into()));
    }
    (0..lo.len())
        .map(|a| {
            let n = counts[a];
            if n < 2 {
                return Err(Error::Config(format!("axis {a} needs at least two nodes")));
            }
            let h = (hi[a] - lo[a]) / if periodic[a] { n } else { n - 1 } as f64;
            Ok((0..n).map(|k| lo[a] + k as f64 * h).collect())
        })
        .collect()
}

/// Tabulate the configured field on `manifest`'s nodes and times, and write
/// it as a gridded field directory.
pub fn write_sampled_field(cfg: &RunConfig, mut manifest: GriddedManifest, dir: &Path) -> Result<()> {
    if let FieldSpec::Bickley { .. } = cfg.field {
        manifest.units = Units { axes: vec!["Mm".into(); 2], time: "day".into(), velocity: "Mm/day".into() };
    }
    dispatch_field!(cfg, |f| {
        let sampled = GriddedField::sample_from(manifest, &f)?;
        dataio::write_gridded_field(dir, &sampled)
    })
}
