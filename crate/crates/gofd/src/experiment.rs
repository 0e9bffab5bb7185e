//! Config-driven experiment harness behind the `gofd` binary: stencil
//! dumps, single solves, convergence ladders (optionally as perturbation
//! ensembles), and plot-script emission.
//!
//! Configuration is resolved in three layers: built-in defaults, then an
//! optional `key = value` config file, then command-line flags. The fully
//! resolved configuration is echoed into the output directory so every
//! result set is reproducible from its own artifacts; identical configs
//! produce byte-identical CSVs.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::cloud::{
    cloud_from_mesh_file, cloud_graded, cloud_grid_interior, cloud_rings, perturb, CloudError,
    PointCloud,
};
use crate::geometry::DomainSpec;
use crate::metrics::{
    exact_disk_solution, l2_error, read_levels_csv, reference_error, ConvergenceLevel,
    ConvergenceReport,
};
use crate::solver::{solve, FractionalProblem, SolveReport, DEFAULT_CG_TOL};
use crate::spectral::{compute_stencil, default_resolution, FractionalOrder};
use crate::transfer::{build_cdt, TransferMethod, Triangulation};
use crate::Error;

/// Where the domain comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainChoice {
    Disk,
    Lshape,
    Wavy,
    File(PathBuf),
}

impl DomainChoice {
    fn parse(text: &str) -> Result<Self, Error> {
        match text {
            "disk" => Ok(DomainChoice::Disk),
            "lshape" => Ok(DomainChoice::Lshape),
            "wavy" => Ok(DomainChoice::Wavy),
            other => {
                if let Some(path) = other.strip_prefix("file:") {
                    Ok(DomainChoice::File(PathBuf::from(path)))
                } else {
                    Err(Error::Config(format!(
                        "unknown domain {other:?}; expected disk, lshape, wavy, or file:PATH"
                    )))
                }
            }
        }
    }

    fn label(&self) -> String {
        match self {
            DomainChoice::Disk => "disk".into(),
            DomainChoice::Lshape => "lshape".into(),
            DomainChoice::Wavy => "wavy".into(),
            DomainChoice::File(p) => format!("file:{}", p.display()),
        }
    }

    fn resolve(&self) -> Result<DomainSpec, Error> {
        match self {
            DomainChoice::Disk => Ok(DomainSpec::unit_disk()),
            DomainChoice::Lshape => Ok(DomainSpec::lshape()),
            DomainChoice::Wavy => Ok(DomainSpec::wavy_with_holes()),
            DomainChoice::File(p) => Ok(DomainSpec::load(p)?),
        }
    }
}

/// One ladder of clouds, from coarse to fine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CloudFamily {
    /// Concentric rings on the unit disk, by ring count J.
    Rings(Vec<usize>),
    /// Lattice interiors, by target point count.
    GridInterior(Vec<usize>),
    /// Boundary-graded dart throwing, by target point count.
    Graded(Vec<usize>),
    /// Mesh files on disk.
    Files(Vec<PathBuf>),
}

impl CloudFamily {
    pub fn tag(&self) -> &'static str {
        match self {
            CloudFamily::Rings(_) => "rings",
            CloudFamily::GridInterior(_) => "grid",
            CloudFamily::Graded(_) => "graded",
            CloudFamily::Files(_) => "files",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            CloudFamily::Rings(v) => v.len(),
            CloudFamily::GridInterior(v) => v.len(),
            CloudFamily::Graded(v) => v.len(),
            CloudFamily::Files(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn echo_value(&self) -> String {
        match self {
            CloudFamily::Rings(v) | CloudFamily::GridInterior(v) | CloudFamily::Graded(v) => v
                .iter()
                .map(|n| n.to_string())
                .collect::<Vec<_>>()
                .join(","),
            CloudFamily::Files(v) => v
                .iter()
                .map(|p| p.display().to_string())
                .collect::<Vec<_>>()
                .join(","),
        }
    }
}

/// Source term selector; the study protocol solves with f = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsChoice {
    One,
    Zero,
}

impl RhsChoice {
    fn value(self) -> f64 {
        match self {
            RhsChoice::One => 1.0,
            RhsChoice::Zero => 0.0,
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub domain: DomainChoice,
    pub s_values: Vec<f64>,
    /// "mls", "delaunay", or "both".
    pub method: String,
    pub mls_neighbors: usize,
    pub families: Vec<CloudFamily>,
    /// Perturbation level as a fraction of h_bar; 0 disables ensembles.
    pub perturb_factor: f64,
    pub seeds: usize,
    pub base_seed: u64,
    pub cg_tol: f64,
    pub out_dir: PathBuf,
    pub rhs: RhsChoice,
    pub ref_scale: usize,
    pub ref_file: Option<PathBuf>,
    pub kernel_half_extent: usize,
    pub kernel_resolution: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            domain: DomainChoice::Disk,
            s_values: vec![0.5],
            method: "both".into(),
            mls_neighbors: 5,
            families: Vec::new(),
            perturb_factor: 0.0,
            seeds: 5,
            base_seed: 1,
            cg_tol: DEFAULT_CG_TOL,
            out_dir: PathBuf::from("gofd-out"),
            rhs: RhsChoice::One,
            ref_scale: 16,
            ref_file: None,
            kernel_half_extent: 4,
            kernel_resolution: None,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str, what: &str) -> Result<Vec<T>, Error> {
    value
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} entry {t:?}")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Applies a paper-protocol preset: 1 = disk ladders (quasi-uniform
    /// and graded), 2 = L-shape self-convergence, 3 = wavy domain with
    /// holes, self-convergence.
    pub fn apply_example(&mut self, example: u8) -> Result<(), Error> {
        match example {
            1 => {
                self.domain = DomainChoice::Disk;
                self.s_values = vec![0.25, 0.5, 0.75];
                self.families = vec![
                    CloudFamily::Rings(vec![10, 20, 40, 80]),
                    CloudFamily::Graded(vec![400, 800, 1600, 3200]),
                ];
            }
            2 => {
                self.domain = DomainChoice::Lshape;
                self.s_values = vec![0.5];
                self.families = vec![CloudFamily::GridInterior(vec![400, 800, 1600])];
            }
            3 => {
                self.domain = DomainChoice::Wavy;
                self.s_values = vec![0.5];
                self.families = vec![CloudFamily::GridInterior(vec![400, 800, 1600])];
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown example {other}; expected 1, 2, or 3"
                )))
            }
        }
        Ok(())
    }

    /// Applies one `key = value` entry. `families_set` tracks whether a
    /// family key has already replaced the defaults in this layer.
    fn apply_key(&mut self, key: &str, value: &str, families_set: &mut bool) -> Result<(), Error> {
        let mut push_family = |cfg: &mut Self, fam: CloudFamily| {
            if !*families_set {
                cfg.families.clear();
                *families_set = true;
            }
            cfg.families.push(fam);
        };
        match key {
            "domain" => self.domain = DomainChoice::parse(value)?,
            "s" => self.s_values = parse_list(value, "s")?,
            "method" => {
                if !matches!(value, "mls" | "delaunay" | "both") {
                    return Err(Error::Config(format!(
                        "unknown method {value:?}; expected mls, delaunay, or both"
                    )));
                }
                self.method = value.into();
            }
            "n" => {
                self.mls_neighbors = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad n {value:?}")))?
            }
            "rings" => push_family(self, CloudFamily::Rings(parse_list(value, "rings")?)),
            "grid" => push_family(self, CloudFamily::GridInterior(parse_list(value, "grid")?)),
            "graded" => push_family(self, CloudFamily::Graded(parse_list(value, "graded")?)),
            "files" => push_family(
                self,
                CloudFamily::Files(
                    value
                        .split(',')
                        .map(str::trim)
                        .filter(|t| !t.is_empty())
                        .map(PathBuf::from)
                        .collect(),
                ),
            ),
            "ref_file" => self.ref_file = Some(PathBuf::from(value)),
            "perturb" => {
                self.perturb_factor = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad perturb {value:?}")))?
            }
            "seeds" => {
                self.seeds = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seeds {value:?}")))?
            }
            "seed" => {
                self.base_seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed {value:?}")))?
            }
            "cg_tol" => {
                self.cg_tol = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad cg_tol {value:?}")))?
            }
            "out" => self.out_dir = PathBuf::from(value),
            "rhs" => {
                self.rhs = match value {
                    "one" => RhsChoice::One,
                    "zero" => RhsChoice::Zero,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown rhs {other:?}; expected one or zero"
                        )))
                    }
                }
            }
            "ref_scale" => {
                self.ref_scale = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad ref_scale {value:?}")))?
            }
            "half_extent" => {
                self.kernel_half_extent = value
                    .parse()
                    .map_err(|_| Error::Config(format!("bad half_extent {value:?}")))?
            }
            "resolution" => {
                self.kernel_resolution = Some(
                    value
                        .parse()
                        .map_err(|_| Error::Config(format!("bad resolution {value:?}")))?,
                )
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a config file's text into this config.
    pub fn apply_text(&mut self, text: &str) -> Result<(), Error> {
        let mut families_set = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "config line {}: expected key = value, got {raw:?}",
                    idx + 1
                )));
            };
            self.apply_key(key.trim(), value.trim(), &mut families_set)?;
        }
        Ok(())
    }

    /// Fills in the family defaults once the domain is known.
    fn default_families(&mut self) {
        if self.families.is_empty() {
            self.families = match self.domain {
                DomainChoice::Disk => vec![CloudFamily::Rings(vec![10, 20, 40, 80])],
                _ => vec![CloudFamily::GridInterior(vec![400, 800, 1600])],
            };
        }
    }

    /// The resolved config as config-file text; parsing it back yields
    /// the same configuration.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        out.push_str("# resolved configuration (defaults included)\n");
        out.push_str(&format!("domain = {}\n", self.domain.label()));
        out.push_str(&format!(
            "s = {}\n",
            self.s_values
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!("method = {}\n", self.method));
        out.push_str(&format!("n = {}\n", self.mls_neighbors));
        for family in &self.families {
            out.push_str(&format!("{} = {}\n", family.tag(), family.echo_value()));
        }
        if let Some(rf) = &self.ref_file {
            out.push_str(&format!("ref_file = {}\n", rf.display()));
        }
        out.push_str(&format!("perturb = {}\n", self.perturb_factor));
        out.push_str(&format!("seeds = {}\n", self.seeds));
        out.push_str(&format!("seed = {}\n", self.base_seed));
        out.push_str(&format!("cg_tol = {}\n", self.cg_tol));
        out.push_str(&format!("rhs = {}\n", match self.rhs {
            RhsChoice::One => "one",
            RhsChoice::Zero => "zero",
        }));
        out.push_str(&format!("ref_scale = {}\n", self.ref_scale));
        out.push_str(&format!("half_extent = {}\n", self.kernel_half_extent));
        if let Some(m) = self.kernel_resolution {
            out.push_str(&format!("resolution = {m}\n"));
        }
        out.push_str(&format!("out = {}\n", self.out_dir.display()));
        out
    }

    /// Transfer methods to run, in a fixed order.
    pub fn methods(&self) -> Vec<TransferMethod> {
        match self.method.as_str() {
            "mls" => vec![TransferMethod::Mls {
                n: self.mls_neighbors,
            }],
            "delaunay" => vec![TransferMethod::Delaunay],
            _ => vec![
                TransferMethod::Mls {
                    n: self.mls_neighbors,
                },
                TransferMethod::Delaunay,
            ],
        }
    }

    fn problem(&self, domain: &DomainSpec, s: f64, tol: f64) -> Result<FractionalProblem, Error> {
        let c = self.rhs.value();
        Ok(
            FractionalProblem::new(domain.clone(), FractionalOrder::new(s)?, move |_| c)
                .with_cg_tolerance(tol),
        )
    }

    /// Whether errors can be measured against the closed-form solution.
    fn has_exact_solution(&self) -> bool {
        self.domain == DomainChoice::Disk && self.rhs == RhsChoice::One
    }
}

/// Builds the `idx`-th cloud of a family.
fn build_cloud(
    family: &CloudFamily,
    idx: usize,
    domain: &DomainSpec,
    domain_choice: &DomainChoice,
    s: f64,
    base_seed: u64,
) -> Result<PointCloud, Error> {
    match family {
        CloudFamily::Rings(js) => {
            if *domain_choice != DomainChoice::Disk {
                return Err(Error::Config(
                    "rings ladders are defined on the unit disk only".into(),
                ));
            }
            Ok(cloud_rings(js[idx])?)
        }
        CloudFamily::GridInterior(ns) => {
            let h = (domain.area() / ns[idx] as f64).sqrt();
            Ok(cloud_grid_interior(domain, h)?)
        }
        CloudFamily::Graded(ns) => Ok(cloud_graded(
            domain,
            ns[idx],
            FractionalOrder::new(s)?,
            base_seed.wrapping_add(idx as u64),
        )?),
        CloudFamily::Files(paths) => {
            let path = &paths[idx];
            if !path.exists() {
                return Err(Error::Cloud(CloudError::ParseError {
                    line: 0,
                    msg: format!("no such cloud file: {}", path.display()),
                }));
            }
            Ok(cloud_from_mesh_file(path, domain)?)
        }
    }
}

/// The reference cloud for self-convergence studies: the finest ladder
/// entry scaled by `ref_scale` in point count.
fn build_reference_cloud(
    cfg: &ExperimentConfig,
    family: &CloudFamily,
    domain: &DomainSpec,
    s: f64,
) -> Result<PointCloud, Error> {
    let scale = cfg.ref_scale.max(1);
    let ring_scale = (scale as f64).sqrt().ceil() as usize;
    match family {
        CloudFamily::Rings(js) => {
            let j = js.iter().copied().max().unwrap_or(10) * ring_scale;
            Ok(cloud_rings(j)?)
        }
        CloudFamily::GridInterior(ns) => {
            let n = ns.iter().copied().max().unwrap_or(400) * scale;
            let h = (domain.area() / n as f64).sqrt();
            Ok(cloud_grid_interior(domain, h)?)
        }
        CloudFamily::Graded(ns) => {
            let n = ns.iter().copied().max().unwrap_or(400) * scale;
            Ok(cloud_graded(
                domain,
                n,
                FractionalOrder::new(s)?,
                cfg.base_seed.wrapping_add(0x5eed),
            )?)
        }
        CloudFamily::Files(_) => {
            let path = cfg.ref_file.as_ref().ok_or_else(|| {
                Error::Config(
                    "mesh-file ladders need ref_file for reference-based error measurement".into(),
                )
            })?;
            if !path.exists() {
                return Err(Error::Cloud(CloudError::ParseError {
                    line: 0,
                    msg: format!("no such cloud file: {}", path.display()),
                }));
            }
            Ok(cloud_from_mesh_file(path, domain)?)
        }
    }
}

fn prepare_out_dir(cfg: &ExperimentConfig) -> Result<(), Error> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.echo())?;
    Ok(())
}

fn format_s(s: f64) -> String {
    s.to_string()
}

/// One solve per configured method: JSON report plus "x y u" dump.
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<Vec<SolveReport>, Error> {
    let domain = cfg.domain.resolve()?;
    let mut cfg = cfg.clone();
    cfg.default_families();
    prepare_out_dir(&cfg)?;
    let family = cfg
        .families
        .first()
        .ok_or_else(|| Error::Config("no cloud family configured".into()))?;
    if family.is_empty() {
        return Err(Error::Config("cloud family has no levels".into()));
    }
    let s = *cfg
        .s_values
        .first()
        .ok_or_else(|| Error::Config("no fractional order configured".into()))?;
    let cloud = build_cloud(family, 0, &domain, &cfg.domain, s, cfg.base_seed)?;
    let problem = cfg.problem(&domain, s, cfg.cg_tol)?;
    let mut reports = Vec::new();
    for method in cfg.methods() {
        let report = solve(&problem, &cloud, method)?;
        let report_path = cfg.out_dir.join(format!("solve_report_{method}.json"));
        let dump_path = cfg.out_dir.join(format!("solution_{method}.txt"));
        report.save_json(&report_path)?;
        report.dump_solution(&cloud, &dump_path)?;
        println!(
            "solve method={method} N_v={} N_FD={} iters={} rel_res={:.3e} t={:.2}s -> {}",
            cloud.n_total(),
            report.n_fd,
            report.iterations,
            report.final_relative_residual,
            report.wall_time,
            report_path.display()
        );
        reports.push(report);
    }
    Ok(reports)
}

struct LevelOutcome {
    level: ConvergenceLevel,
    omitted_area_fraction: f64,
}

/// Solves one ladder level and measures its error, against the exact
/// disk solution or a reference interpolant.
fn run_level(
    cfg: &ExperimentConfig,
    domain: &DomainSpec,
    s: f64,
    method: TransferMethod,
    cloud: &PointCloud,
    reference: Option<&(Triangulation, Vec<f64>)>,
) -> Result<LevelOutcome, Error> {
    let tri = build_cdt(cloud, domain)?;
    let problem = cfg.problem(domain, s, cfg.cg_tol)?;
    let report = solve(&problem, cloud, method)?;
    let values = report.nodal_values(cloud);
    let err = match reference {
        None => {
            let order = FractionalOrder::new(s)?;
            l2_error(cloud, &tri, &values, |p| exact_disk_solution(order, p))?
        }
        Some((ref_tri, ref_values)) => {
            reference_error(cloud, &tri, &values, ref_tri, ref_values)?
        }
    };
    let omitted = 1.0 - tri.covered_area() / domain.area();
    Ok(LevelOutcome {
        level: ConvergenceLevel {
            n_v: cloud.n_total(),
            h_bar: cloud.h_bar(),
            l2_error: err,
        },
        omitted_area_fraction: omitted,
    })
}

/// Writes whatever levels completed before an abort, with the abort kind
/// recorded in a trailing comment.
fn flush_partial(path: &Path, levels: &[ConvergenceLevel], abort_kind: &str) -> Result<(), Error> {
    let mut w = fs::File::create(path)?;
    writeln!(w, "N_v,h_bar,l2_error")?;
    for lv in levels {
        writeln!(w, "{},{:.16e},{:.16e}", lv.n_v, lv.h_bar, lv.l2_error)?;
    }
    writeln!(w, "# aborted={abort_kind}")?;
    Ok(())
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Convergence ladders for every (family, s, method) combination. With a
/// positive perturbation factor and seed count, each combination becomes
/// an ensemble: per-seed CSVs plus a min/median/max envelope.
pub fn cmd_convergence(cfg: &ExperimentConfig) -> Result<(), Error> {
    let domain = cfg.domain.resolve()?;
    let mut cfg = cfg.clone();
    cfg.default_families();
    prepare_out_dir(&cfg)?;
    for family in &cfg.families {
        if family.len() < 3 {
            return Err(Error::Config(format!(
                "{} ladder has {} levels; order fits need at least 3",
                family.tag(),
                family.len()
            )));
        }
        for &s in &cfg.s_values {
            // ladder clouds are shared across methods and seeds
            let mut clouds = Vec::with_capacity(family.len());
            for idx in 0..family.len() {
                clouds.push(build_cloud(family, idx, &domain, &cfg.domain, s, cfg.base_seed)?);
            }
            let reference: Option<(Triangulation, Vec<f64>)> = if cfg.has_exact_solution() {
                None
            } else {
                let ref_cloud = build_reference_cloud(&cfg, family, &domain, s)?;
                let ref_tri = build_cdt(&ref_cloud, &domain)?;
                let problem = cfg.problem(&domain, s, cfg.cg_tol.min(1e-12))?;
                let report = solve(&problem, &ref_cloud, TransferMethod::Delaunay)?;
                println!(
                    "reference family={} s={} N_v={} iters={} t={:.2}s",
                    family.tag(),
                    format_s(s),
                    ref_cloud.n_total(),
                    report.iterations,
                    report.wall_time
                );
                Some((ref_tri, report.nodal_values(&ref_cloud)))
            };
            for method in cfg.methods() {
                let base = format!(
                    "convergence_{}_{}_s{}",
                    family.tag(),
                    method,
                    format_s(s)
                );
                if cfg.perturb_factor > 0.0 && cfg.seeds > 0 {
                    run_ensemble(&cfg, &domain, s, method, &clouds, reference.as_ref(), &base)?;
                } else {
                    run_plain_ladder(&cfg, &domain, s, method, &clouds, reference.as_ref(), &base)?;
                }
            }
        }
    }
    Ok(())
}

fn run_plain_ladder(
    cfg: &ExperimentConfig,
    domain: &DomainSpec,
    s: f64,
    method: TransferMethod,
    clouds: &[PointCloud],
    reference: Option<&(Triangulation, Vec<f64>)>,
    base: &str,
) -> Result<(), Error> {
    let path = cfg.out_dir.join(format!("{base}.csv"));
    let mut levels = Vec::new();
    for cloud in clouds {
        match run_level(cfg, domain, s, method, cloud, reference) {
            Ok(out) => {
                println!(
                    "ladder {base} N_v={} h_bar={:.4e} error={:.6e} omitted_area={:.2e}",
                    out.level.n_v, out.level.h_bar, out.level.l2_error, out.omitted_area_fraction
                );
                levels.push(out.level);
            }
            Err(e) => {
                flush_partial(&path, &levels, e.kind())?;
                return Err(e);
            }
        }
    }
    let report = ConvergenceReport::new(s, method.to_string(), levels)?;
    report.write_csv(&path)?;
    println!(
        "ladder {base} fitted_order={:.4} -> {}",
        report.fitted_order_in_hbar,
        path.display()
    );
    Ok(())
}

fn run_ensemble(
    cfg: &ExperimentConfig,
    domain: &DomainSpec,
    s: f64,
    method: TransferMethod,
    clouds: &[PointCloud],
    reference: Option<&(Triangulation, Vec<f64>)>,
    base: &str,
) -> Result<(), Error> {
    // errors[level][seed]
    let mut errors = vec![Vec::with_capacity(cfg.seeds); clouds.len()];
    let mut h_bars = Vec::with_capacity(clouds.len());
    let mut n_vs = Vec::with_capacity(clouds.len());
    for seed_idx in 0..cfg.seeds {
        let path = cfg.out_dir.join(format!("{base}_seed{seed_idx}.csv"));
        let mut levels = Vec::new();
        for (level_idx, cloud) in clouds.iter().enumerate() {
            let seed = cfg
                .base_seed
                .wrapping_add(10_000 * seed_idx as u64)
                .wrapping_add(level_idx as u64);
            let level = cloud.h_bar() * cfg.perturb_factor;
            let shaken = perturb(cloud, domain, level, seed).map_err(Error::from);
            let outcome =
                shaken.and_then(|c| run_level(cfg, domain, s, method, &c, reference));
            match outcome {
                Ok(out) => {
                    println!(
                        "ensemble {base} seed={seed_idx} N_v={} error={:.6e}",
                        out.level.n_v, out.level.l2_error
                    );
                    levels.push(out.level);
                }
                Err(e) => {
                    flush_partial(&path, &levels, e.kind())?;
                    return Err(e);
                }
            }
        }
        for (level_idx, lv) in levels.iter().enumerate() {
            errors[level_idx].push(lv.l2_error);
            if seed_idx == 0 {
                h_bars.push(lv.h_bar);
                n_vs.push(lv.n_v);
            }
        }
        let report = ConvergenceReport::new(s, method.to_string(), levels)?;
        report.write_csv(&path)?;
    }
    // envelope: min / median / max per level, order fitted on medians
    let path = cfg.out_dir.join(format!("{base}_envelope.csv"));
    let mut medians = Vec::with_capacity(clouds.len());
    {
        let mut w = fs::File::create(&path)?;
        writeln!(w, "N_v,h_bar,min_error,median_error,max_error")?;
        for level_idx in 0..clouds.len() {
            let mut sorted = errors[level_idx].clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let med = median(&sorted);
            medians.push(ConvergenceLevel {
                n_v: n_vs[level_idx],
                h_bar: h_bars[level_idx],
                l2_error: med,
            });
            writeln!(
                w,
                "{},{:.16e},{:.16e},{:.16e},{:.16e}",
                n_vs[level_idx],
                h_bars[level_idx],
                sorted[0],
                med,
                sorted[sorted.len() - 1]
            )?;
        }
        let fitted = crate::metrics::fit_order(&medians)?;
        writeln!(w, "# fitted_order={fitted:.16e}")?;
        println!(
            "ensemble {base} envelope fitted_order={fitted:.4} -> {}",
            path.display()
        );
    }
    Ok(())
}

/// Computes a stencil table, writes its cache file and a readable CSV.
pub fn cmd_kernel(cfg: &ExperimentConfig) -> Result<PathBuf, Error> {
    prepare_out_dir(cfg)?;
    let s = *cfg
        .s_values
        .first()
        .ok_or_else(|| Error::Config("no fractional order configured".into()))?;
    let p = cfg.kernel_half_extent;
    let m = cfg
        .kernel_resolution
        .unwrap_or_else(|| default_resolution(p));
    let order = FractionalOrder::new(s)?;
    let table = compute_stencil(order, p, m)?;
    let stem = format!("kernel_s{}_P{}", format_s(s), p);
    let cache_path = cfg.out_dir.join(format!("{stem}.stencil"));
    table.save(&cache_path)?;
    let csv_path = cfg.out_dir.join(format!("{stem}.csv"));
    let mut w = fs::File::create(&csv_path)?;
    let pi = p as i64;
    let header: Vec<String> = (-pi..=pi).map(|q| q.to_string()).collect();
    writeln!(w, "p\\q,{}", header.join(","))?;
    for row in -pi..=pi {
        let cells: Vec<String> = (-pi..=pi)
            .map(|col| format!("{:.16e}", table.get(row, col)))
            .collect();
        writeln!(w, "{row},{}", cells.join(","))?;
    }
    println!(
        "kernel s={} P={p} M={m} T00={:.12e} -> {}",
        format_s(s),
        table.get(0, 0),
        cache_path.display()
    );
    Ok(cache_path)
}

fn parse_s_from_name(name: &str) -> Option<f64> {
    // last "_s" that is immediately followed by a digit, so that e.g.
    // "_seed3" does not match
    let mut best = None;
    for (idx, _) in name.match_indices("_s") {
        let tail = &name[idx + 2..];
        if tail.chars().next().is_some_and(|c| c.is_ascii_digit()) {
            best = Some(tail);
        }
    }
    let tail = best?;
    let end = tail
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .unwrap_or(tail.len());
    tail[..end].parse().ok()
}

/// Emits a self-contained plot script drawing log-log error curves from
/// the given convergence CSVs, with slope triangles anchored at each
/// series' first and last points. Missing files are skipped with a
/// warning; an empty list yields a script that is only a comment header.
pub fn cmd_plot(cfg: &ExperimentConfig, csvs: &[PathBuf]) -> Result<PathBuf, Error> {
    prepare_out_dir(cfg)?;
    let script_path = cfg.out_dir.join("plot_convergence.py");
    let mut series = Vec::new();
    for path in csvs {
        if !path.exists() {
            eprintln!("warning: skipping missing series {}", path.display());
            continue;
        }
        let (levels, _fitted) = read_levels_csv(path)?;
        if levels.is_empty() {
            eprintln!("warning: skipping empty series {}", path.display());
            continue;
        }
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "series".into());
        // reference the CSV relative to the script when possible
        let rel = path
            .canonicalize()
            .ok()
            .and_then(|abs| {
                cfg.out_dir
                    .canonicalize()
                    .ok()
                    .and_then(|base| abs.strip_prefix(&base).map(Path::to_path_buf).ok())
            })
            .unwrap_or_else(|| path.clone());
        series.push((rel, name, levels));
    }

    let mut py = String::new();
    py.push_str("#!/usr/bin/env python3\n");
    py.push_str("# log-log convergence plot; regenerate with the plot subcommand\n");
    if series.is_empty() {
        py.push_str("# no series supplied\n");
        fs::write(&script_path, py)?;
        println!("plot (empty) -> {}", script_path.display());
        return Ok(script_path);
    }
    py.push_str("import os\n");
    py.push_str("import matplotlib\n");
    py.push_str("matplotlib.use(\"Agg\")\n");
    py.push_str("import matplotlib.pyplot as plt\n\n");
    py.push_str("os.chdir(os.path.dirname(os.path.abspath(__file__)) or \".\")\n\n");
    py.push_str("def read_series(path):\n");
    py.push_str("    ns, errs = [], []\n");
    py.push_str("    with open(path) as f:\n");
    py.push_str("        next(f)\n");
    py.push_str("        for line in f:\n");
    py.push_str("            line = line.strip()\n");
    py.push_str("            if not line or line.startswith(\"#\"):\n");
    py.push_str("                continue\n");
    py.push_str("            n, _h, e = line.split(\",\")\n");
    py.push_str("            ns.append(int(n))\n");
    py.push_str("            errs.append(float(e))\n");
    py.push_str("    return ns, errs\n\n");
    py.push_str("fig, ax = plt.subplots(figsize=(6.4, 4.8))\n");
    for (rel, name, _) in &series {
        py.push_str(&format!(
            "ns, errs = read_series({:?})\nax.loglog(ns, errs, marker=\"o\", label={:?})\n",
            rel.display().to_string(),
            name
        ));
    }
    py.push_str("\n# reference slopes (error ~ N^(-order/2))\n");
    for (_, name, levels) in &series {
        let first = levels.first().unwrap();
        let last = levels.last().unwrap();
        let s = parse_s_from_name(name);
        let order_a = s.map(|s| (s + 0.5).min(1.0)).unwrap_or(1.0);
        for (order, style) in [(order_a, "k--"), (2.0, "k:")] {
            let n0 = first.n_v as f64;
            let n1 = last.n_v as f64;
            let e0 = first.l2_error;
            let e1 = e0 * (n1 / n0).powf(-order / 2.0);
            py.push_str(&format!(
                "ax.loglog([{n0}, {n1}], [{e0:.16e}, {e1:.16e}], {style:?}, linewidth=0.8, label=\"order {order}\")\n",
            ));
        }
    }
    py.push_str("\nax.set_xlabel(\"$N_v$\")\n");
    py.push_str("ax.set_ylabel(\"$L^2$ error\")\n");
    py.push_str("ax.grid(True, which=\"both\", alpha=0.3)\n");
    py.push_str("ax.legend(fontsize=7)\n");
    py.push_str("fig.tight_layout()\n");
    py.push_str("fig.savefig(\"convergence.png\", dpi=160)\n");
    py.push_str("print(\"wrote convergence.png\")\n");
    fs::write(&script_path, py)?;
    println!("plot ({} series) -> {}", series.len(), script_path.display());
    Ok(script_path)
}

#[derive(Parser, Debug)]
#[command(
    name = "gofd",
    version,
    about = "Meshfree fractional Laplacian solver: stencil dumps, solves, convergence studies, plot scripts"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// key = value config file; flags override its entries
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// disk | lshape | wavy | file:PATH
    #[arg(long)]
    domain: Option<String>,
    /// comma-separated fractional orders, e.g. 0.25,0.5,0.75
    #[arg(long = "s", value_name = "LIST")]
    s: Option<String>,
    /// mls | delaunay | both
    #[arg(long)]
    method: Option<String>,
    /// MLS neighbor count
    #[arg(long)]
    n: Option<usize>,
    /// perturbation level as a fraction of h_bar (bare flag: 0.4)
    #[arg(long, value_name = "LEVEL", num_args = 0..=1, default_missing_value = "0.4")]
    perturb: Option<f64>,
    /// perturbation ensemble size
    #[arg(long)]
    seeds: Option<usize>,
    /// output directory
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// study preset: 1 disk ladders, 2 L-shape, 3 wavy with holes
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    paper_example: Option<u8>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Compute a stencil table; write its cache file and a readable CSV
    Kernel {
        #[command(flatten)]
        common: CommonArgs,
        /// stencil half-extent P
        #[arg(long, value_name = "P")]
        half_extent: Option<usize>,
        /// symbol quadrature resolution M
        #[arg(long, value_name = "M")]
        resolution: Option<usize>,
    },
    /// Solve once on the first ladder level; write report and solution
    Solve {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run convergence ladders; write one CSV per combination
    Convergence {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Generate a python plot script from convergence CSVs
    Plot {
        #[command(flatten)]
        common: CommonArgs,
        /// convergence CSV files to draw
        #[arg(value_name = "CSV")]
        csvs: Vec<PathBuf>,
    },
}

/// Resolves layered configuration: defaults, then preset, then config
/// file, then flags.
fn config_from(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::default();
    if let Some(example) = common.paper_example {
        cfg.apply_example(example)?;
    }
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    let mut families_set = true; // flags never reset families
    if let Some(d) = &common.domain {
        cfg.apply_key("domain", d, &mut families_set)?;
    }
    if let Some(s) = &common.s {
        cfg.apply_key("s", s, &mut families_set)?;
    }
    if let Some(m) = &common.method {
        cfg.apply_key("method", m, &mut families_set)?;
    }
    if let Some(n) = common.n {
        cfg.apply_key("n", &n.to_string(), &mut families_set)?;
    }
    if let Some(p) = common.perturb {
        cfg.apply_key("perturb", &p.to_string(), &mut families_set)?;
    }
    if let Some(k) = common.seeds {
        cfg.apply_key("seeds", &k.to_string(), &mut families_set)?;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Cmd::Kernel {
            common,
            half_extent,
            resolution,
        } => {
            let mut cfg = config_from(&common)?;
            if let Some(p) = half_extent {
                cfg.kernel_half_extent = p;
            }
            if let Some(m) = resolution {
                cfg.kernel_resolution = Some(m);
            }
            cmd_kernel(&cfg).map(|_| ())
        }
        Cmd::Solve { common } => cmd_solve(&config_from(&common)?).map(|_| ()),
        Cmd::Convergence { common } => cmd_convergence(&config_from(&common)?),
        Cmd::Plot { common, csvs } => cmd_plot(&config_from(&common)?, &csvs).map(|_| ()),
    }
}

fn error_json(e: &Error) -> String {
    serde_json::json!({
        "kind": e.kind(),
        "message": e.to_string(),
    })
    .to_string()
}

/// CLI entry point. Exit codes: 0 success, 1 any pipeline error (with a
/// one-line error JSON on stderr), 2 usage errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.exit_code() == 0 { 0 } else { 2 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            1
        }
    }
}
