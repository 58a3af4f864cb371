//! Division benchmark over the noise/deformation grid, plus the fixture
//! scenes pushed through the whole pipeline.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;

use primitect_core::model::{append_mesh, loft_contours, mesh_accuracy, CompactModel};
use primitect_core::pipeline::cluster_chains;
use primitect_core::primitives::Mesh;
use primitect_core::procrustes::DivisionSettings;
use primitect_core::synth::{
    building_from_units, compose_scene, cone_sphere_cone, cone_stack, dome_on_drum, mix_seed,
    polygon_tower, run_trial, CellResult, DeformationLevel, Scene, SynthConfig, SyntheticUnit,
    TrialConfig, SIGMA_STEPS,
};
use primitect_core::Point2;

use crate::compact::parse_model;
use crate::config::PipelineConfig;
use crate::error::{Failure, Result};
use crate::stagefiles::read_clusters;
use crate::stages::{
    format_report, parse_report, reconstruct, write_atomic, ReportRow, Run, CLUSTERS,
};
use crate::xyz::format_xyz;

pub const GRID: &str = "grid.csv";
pub const FIXTURES: &str = "fixtures.csv";
pub const FREEFORM: &str = "freeform.csv";

/// Cells of the grid, row-major in noise.
pub fn grid_cells(cfg: &PipelineConfig, trials: usize, seed: u64) -> Vec<TrialConfig> {
    let mut out = Vec::new();
    for k in SIGMA_STEPS {
        for deformation in DeformationLevel::SWEPT {
            out.push(TrialConfig {
                sigma: k as f64 * cfg.benchmark.noise_unit,
                deformation,
                trials,
                seed,
            });
        }
    }
    out
}

/// Every (cell, trial) pair runs independently; results do not depend on
/// the thread count.
pub fn run_grid(cfg: &PipelineConfig, trials: usize, seed: u64) -> Result<Vec<CellResult>> {
    if trials == 0 {
        return Err(Failure::format("at least one trial is required"));
    }
    let cells = grid_cells(cfg, trials, seed);
    let division = DivisionSettings {
        n_resample: cfg.division.n_resample,
        max_distance: cfg.benchmark.max_distance,
        ..DivisionSettings::default()
    };
    let base = SynthConfig::default();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(c, t)| {
            let tc = &cells[c];
            Ok(run_trial(&tc.synth(&base), &division, tc.trial_seed(t))?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cells
        .iter()
        .zip(outcomes.chunks(trials))
        .map(|(tc, o)| CellResult::from_outcomes(tc, o))
        .collect())
}

pub fn format_grid(cells: &[CellResult], hash: &str) -> String {
    let mut s = format!("# config_hash {hash}\nsigma_m");
    for d in DeformationLevel::SWEPT {
        let _ = write!(s, ",{0}_pa,{0}_mpa", d.name());
    }
    s.push('\n');
    for row in cells.chunks(DeformationLevel::SWEPT.len()) {
        let _ = write!(s, "{:.4}", row[0].sigma);
        for c in row {
            let _ = write!(s, ",{:.2},{:.2}", c.pa_percent(), c.mpa_percent());
        }
        s.push('\n');
    }
    s
}

/// A fixed building used for the storage and accuracy tables.
#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub units: fn() -> primitect_core::Result<Vec<SyntheticUnit>>,
    pub deformation: DeformationLevel,
    /// Whether the building is made of curved surfaces.
    pub curved: bool,
}

pub const FIXTURE_SET: [Fixture; 4] = [
    Fixture {
        name: "cone_sphere_cone",
        units: cone_sphere_cone,
        deformation: DeformationLevel::None,
        curved: true,
    },
    Fixture {
        name: "dome_on_drum",
        units: dome_on_drum,
        deformation: DeformationLevel::None,
        curved: true,
    },
    Fixture {
        name: "cone_stack",
        units: cone_stack,
        deformation: DeformationLevel::None,
        curved: true,
    },
    Fixture {
        name: "polygon_tower",
        units: polygon_tower,
        deformation: DeformationLevel::Medium,
        curved: false,
    },
];

/// The fixture alone on a ground patch.
pub fn fixture_scene(f: &Fixture, density: f64, seed: u64) -> Result<Scene> {
    let synth = SynthConfig {
        deformation: f.deformation,
        ..SynthConfig::default()
    };
    let b = building_from_units((f.units)()?, &synth, mix_seed(seed, &[1]))?;
    Ok(compose_scene(vec![b], vec![Point2::ZERO], density, 8.0, mix_seed(seed, &[2]))?)
}

/// Primitive model versus a tube lofted through the same contours.
#[derive(Debug, Clone, PartialEq)]
pub struct FreeformRow {
    pub id: String,
    pub curved: bool,
    pub primitive_m: f64,
    pub freeform_m: f64,
}

impl FreeformRow {
    /// How many times further the primitive model is from the points than
    /// the loft; below 1 when the primitives fit better.
    pub fn gap(&self) -> f64 {
        self.primitive_m / self.freeform_m.max(f64::MIN_POSITIVE)
    }
}

pub fn format_freeform(rows: &[FreeformRow], hash: &str) -> String {
    let mut s = format!("# config_hash {hash}\nid,curved,primitive_m,freeform_m,gap\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.4},{:.4}",
            r.id,
            r.curved,
            r.primitive_m,
            r.freeform_m,
            r.gap()
        );
    }
    s
}

/// Loft accuracy of every building of a finished run.
fn freeform_distances(run: &Run) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(run.path(CLUSTERS)).map_err(|e| Failure::Input {
        path: run.path(CLUSTERS),
        msg: e.to_string(),
    })?;
    let (c, _) = read_clusters(&text)?;
    let n = run.cfg.export.segments;
    c.buildings
        .par_iter()
        .map(|b| {
            let mut mesh = Mesh::default();
            for ch in cluster_chains(b, c.ground_z) {
                append_mesh(&mut mesh, &loft_contours(&ch.contours, ch.base_z, n)?);
            }
            Ok(mesh_accuracy(&mesh, &b.points, run.cfg.evaluate.density)?)
        })
        .collect()
}

/// Outcome of one fixture run.
#[derive(Debug, Clone)]
pub struct FixtureResult {
    pub fixture: Fixture,
    pub dir: PathBuf,
    pub report: Vec<ReportRow>,
    pub model: CompactModel,
    pub freeform: Vec<FreeformRow>,
    pub unconverged: usize,
}

/// Writes the fixture scene under `dir` and reconstructs it there.
pub fn run_fixture(cfg: &PipelineConfig, f: &Fixture, dir: &Path) -> Result<FixtureResult> {
    let scene = fixture_scene(f, cfg.benchmark.fixture_density, cfg.seed)?;
    let input = dir.join("scene.xyz");
    write_atomic(&input, format_xyz(&scene.points).as_bytes())?;
    let run = Run::new(&input, dir, cfg.clone());
    let outcome = reconstruct(&run)?;
    let read = |name: &str| {
        let path = run.path(name);
        std::fs::read_to_string(&path).map_err(|e| Failure::Input {
            path,
            msg: e.to_string(),
        })
    };
    let mut report = parse_report(&read(&cfg.output.report)?)?;
    let model = parse_model(&read(&cfg.output.model)?)?;
    let free = freeform_distances(&run)?;
    let many = report.len() > 1;
    let mut freeform = Vec::new();
    for (r, fd) in report.iter_mut().zip(free) {
        r.id = if many { format!("{}#{}", f.name, r.id) } else { f.name.to_string() };
        freeform.push(FreeformRow {
            id: r.id.clone(),
            curved: f.curved,
            primitive_m: r.mean_dist_m,
            freeform_m: fd,
        });
    }
    Ok(FixtureResult {
        fixture: *f,
        dir: dir.to_path_buf(),
        report,
        model,
        freeform,
        unconverged: outcome.unconverged,
    })
}

#[derive(Debug, Clone)]
pub struct BenchmarkSummary {
    pub grid: Vec<CellResult>,
    pub fixtures: Vec<FixtureResult>,
}

/// The grid and all fixtures; writes `grid.csv`, `fixtures.csv` and
/// `freeform.csv` into `out_dir`, each fixture's run into its own folder.
pub fn benchmark(cfg: &PipelineConfig, out_dir: &Path) -> Result<BenchmarkSummary> {
    let hash = cfg.hash();
    let trials = cfg.benchmark.trials;
    info!("division grid, {trials} trial(s) per cell");
    let grid = run_grid(cfg, trials, cfg.seed)?;
    write_atomic(&out_dir.join(GRID), format_grid(&grid, &hash).as_bytes())?;
    let fixtures = FIXTURE_SET
        .iter()
        .map(|f| {
            info!("fixture {}", f.name);
            run_fixture(cfg, f, &out_dir.join("fixtures").join(f.name))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<ReportRow> = fixtures.iter().flat_map(|f| f.report.clone()).collect();
    let free: Vec<FreeformRow> = fixtures.iter().flat_map(|f| f.freeform.clone()).collect();
    write_atomic(&out_dir.join(FIXTURES), format_report(&rows, &hash).as_bytes())?;
    write_atomic(&out_dir.join(FREEFORM), format_freeform(&free, &hash).as_bytes())?;
    Ok(BenchmarkSummary { grid, fixtures })
}
