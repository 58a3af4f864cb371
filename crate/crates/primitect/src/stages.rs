//! The reconstruction pipeline as a sequence of file-to-file stages.
//!
//! Every stage reads its inputs from the output directory (the first two
//! also read the input cloud) and writes its result there. A full run is
//! the stages in order, so running any stage on its own reproduces the
//! corresponding end-to-end output byte for byte.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rayon::prelude::*;

use primitect_core::contour::{morphological_ground_filter, rasterize_dsm, trace_contours};
use primitect_core::kdtree::KdTree;
use primitect_core::model::{evaluate_accuracy, BuildingModel, CompactModel, ModelMeta};
use primitect_core::pipeline::{cluster_chains, divide_chain, fit_units, refine_model, UnitFit, UnitRefine};
use primitect_core::primitives::MeshResolution;
use primitect_core::procrustes::PrimitiveDivision;
use primitect_core::topology::{build_nesting_forest, extract_buildings, segment_all};
use primitect_core::{Point3, PointCloud};

use crate::compact::{building_bytes, parse_model, serialize_model};
use crate::config::PipelineConfig;
use crate::error::{Failure, Result};
use crate::stagefiles::{
    read_clusters, read_contours, read_divisions, write_clusters, write_contours, write_divisions,
    ChainGroups, Clusters,
};
use crate::stl::{export_building, export_mesh};
use crate::xyz::{format_xyz, parse_xyz, read_xyz};

pub const ABOVE_GROUND: &str = "above_ground.xyz";
pub const CONTOURS: &str = "contours.txt";
pub const CLUSTERS: &str = "clusters.txt";
pub const DIVISION: &str = "division.txt";
pub const RIGID: &str = "rigid.pcm";
pub const FITS: &str = "fits.csv";
pub const REFINE: &str = "refine.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Filter,
    Contour,
    Cluster,
    Divide,
    Fit,
    Deform,
    Export,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Filter,
        Stage::Contour,
        Stage::Cluster,
        Stage::Divide,
        Stage::Fit,
        Stage::Deform,
        Stage::Export,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::Contour => "contour",
            Stage::Cluster => "cluster",
            Stage::Divide => "divide",
            Stage::Fit => "fit",
            Stage::Deform => "deform",
            Stage::Export => "export",
            Stage::Evaluate => "evaluate",
        }
    }
}

/// One reconstruction job.
#[derive(Debug, Clone)]
pub struct Run {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub cfg: PipelineConfig,
    pub hash: String,
}

impl Run {
    pub fn new(input: impl Into<PathBuf>, out_dir: impl Into<PathBuf>, cfg: PipelineConfig) -> Self {
        let hash = cfg.hash();
        Self {
            input: input.into(),
            out_dir: out_dir.into(),
            cfg,
            hash,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn read(&self, name: &str, made_by: Stage) -> Result<String> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Failure::MissingStage {
                path,
                stage: made_by.name(),
            });
        }
        std::fs::read_to_string(&path).map_err(|e| Failure::Input {
            path,
            msg: e.to_string(),
        })
    }

    fn check_hash(&self, name: &str, made_by: Stage, hash: &str) -> Result<()> {
        if hash == self.hash {
            Ok(())
        } else {
            Err(Failure::Stale {
                path: self.path(name),
                stage: made_by.name(),
            })
        }
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        write_atomic(&self.path(name), text.as_bytes())
    }

    fn above_ground(&self) -> Result<PointCloud> {
        let text = self.read(ABOVE_GROUND, Stage::Filter)?;
        let hash = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# config_hash "))
            .unwrap_or_default();
        self.check_hash(ABOVE_GROUND, Stage::Filter, hash)?;
        parse_xyz(&text).map_err(|msg| Failure::Format(format!("{ABOVE_GROUND}: {msg}")))
    }

    fn clusters(&self) -> Result<Clusters> {
        let (c, hash) = read_clusters(&self.read(CLUSTERS, Stage::Cluster)?)?;
        self.check_hash(CLUSTERS, Stage::Cluster, &hash)?;
        Ok(c)
    }

    fn model(&self, name: &str, made_by: Stage) -> Result<CompactModel> {
        let m = parse_model(&self.read(name, made_by)?)?;
        self.check_hash(name, made_by, &m.meta.config_hash)?;
        Ok(m)
    }

    fn meta(&self, interval: f64) -> ModelMeta {
        ModelMeta {
            units: String::from("m"),
            contour_interval: interval,
            config_hash: self.hash.clone(),
        }
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let werr = |source: std::io::Error| Failure::Write {
        path: path.to_path_buf(),
        source,
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(werr)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(werr)?;
    tmp.write_all(bytes).map_err(werr)?;
    tmp.as_file().sync_all().map_err(werr)?;
    tmp.persist(path).map_err(|e| werr(e.error))?;
    Ok(())
}

/// What a stage reports back.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StageOutcome {
    pub buildings: usize,
    /// Units whose fit or refinement stopped before converging.
    pub unconverged: usize,
}

pub fn run_stage(run: &Run, stage: Stage) -> Result<StageOutcome> {
    info!("stage {}", stage.name());
    match stage {
        Stage::Filter => filter(run),
        Stage::Contour => contour(run),
        Stage::Cluster => cluster(run),
        Stage::Divide => divide(run),
        Stage::Fit => fit(run),
        Stage::Deform => deform(run),
        Stage::Export => export(run),
        Stage::Evaluate => evaluate(run),
    }
}

/// All stages in order.
pub fn reconstruct(run: &Run) -> Result<StageOutcome> {
    let mut total = StageOutcome::default();
    for s in Stage::ALL {
        let o = run_stage(run, s)?;
        total.buildings = total.buildings.max(o.buildings);
        total.unconverged += o.unconverged;
    }
    Ok(total)
}

fn filter(run: &Run) -> Result<StageOutcome> {
    let pc = read_xyz(&run.input)?;
    let f = &run.cfg.filter;
    let above = if f.enabled {
        morphological_ground_filter(&pc, f.cell, f.window, f.slope_tol)?
    } else {
        pc.clone()
    };
    info!("{} of {} points above ground", above.len(), pc.len());
    let text = format!("# config_hash {}\n{}", run.hash, format_xyz(&above));
    run.write(ABOVE_GROUND, &text)?;
    Ok(StageOutcome::default())
}

fn contour(run: &Run) -> Result<StageOutcome> {
    let pc = read_xyz(&run.input)?;
    let c = &run.cfg.contour;
    let base = c.base.unwrap_or_else(|| {
        let lo = pc.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        (lo / c.interval).floor() * c.interval
    });
    let dsm = rasterize_dsm(&pc, c.cell)?;
    let cs = trace_contours(&dsm, c.interval, base)?;
    info!("{} contours above {base} m", cs.len());
    run.write(CONTOURS, &write_contours(&cs, &run.hash))?;
    Ok(StageOutcome::default())
}

fn cluster(run: &Run) -> Result<StageOutcome> {
    let (cs, hash) = read_contours(&run.read(CONTOURS, Stage::Contour)?)?;
    run.check_hash(CONTOURS, Stage::Contour, &hash)?;
    let above = run.above_ground()?;
    let forest = build_nesting_forest(&cs)?;
    let mut buildings = extract_buildings(&forest, &run.cfg.thresholds());
    if buildings.is_empty() {
        return Err(Failure::NoBuildings(run.input.clone()));
    }
    let segments = segment_all(&above, &buildings);
    for (i, (b, pts)) in buildings.iter_mut().zip(segments).enumerate() {
        if !b.flagged.is_empty() {
            warn!("building {i}: {} contour(s) with centroid outside", b.flagged.len());
        }
        debug!("building {i}: {} contours, {} points", b.contours.len(), pts.len());
        b.points = pts;
    }
    info!("{} building(s)", buildings.len());
    let n = buildings.len();
    let c = Clusters {
        ground_z: cs.base,
        interval: cs.interval,
        buildings,
    };
    run.write(CLUSTERS, &write_clusters(&c, &run.hash))?;
    Ok(StageOutcome {
        buildings: n,
        unconverged: 0,
    })
}

fn divide(run: &Run) -> Result<StageOutcome> {
    let c = run.clusters()?;
    let s = run.cfg.reconstruct_settings().map_err(Failure::Format)?;
    let divisions = c
        .buildings
        .par_iter()
        .map(|b| {
            cluster_chains(b, c.ground_z)
                .iter()
                .map(|ch| {
                    let d = divide_chain(&ch.contours, &s.division)?;
                    Ok(ChainGroups {
                        groups: d.groups,
                        distances: d.distances,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    for (i, d) in divisions.iter().enumerate() {
        let units: usize = d.iter().map(|c| c.groups.len()).sum();
        debug!("building {i}: {} chain(s), {units} unit(s)", d.len());
    }
    run.write(DIVISION, &write_divisions(&divisions, &run.hash))?;
    Ok(StageOutcome {
        buildings: divisions.len(),
        unconverged: 0,
    })
}

fn fit(run: &Run) -> Result<StageOutcome> {
    let c = run.clusters()?;
    let (divisions, hash) = read_divisions(&run.read(DIVISION, Stage::Divide)?)?;
    run.check_hash(DIVISION, Stage::Divide, &hash)?;
    if divisions.len() != c.buildings.len() {
        return Err(Failure::format("division and clusters disagree on the building count"));
    }
    let s = run.cfg.reconstruct_settings().map_err(Failure::Format)?;
    let results = c
        .buildings
        .par_iter()
        .zip(&divisions)
        .enumerate()
        .map(|(id, (b, groups))| {
            let chains = cluster_chains(b, c.ground_z);
            if chains.len() != groups.len() {
                return Err(Failure::format(format!("building {id}: chain count changed")));
            }
            let pairs: Vec<_> = chains
                .into_iter()
                .zip(groups)
                .map(|(ch, g)| {
                    let d = PrimitiveDivision {
                        groups: g.groups.clone(),
                        distances: g.distances.clone(),
                        elevations: ch.contours.iter().map(|p| p.elevation).collect(),
                    };
                    (ch, d)
                })
                .collect();
            Ok(fit_units(id, &pairs, &s.field, &s.select)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut csv = format!(
        "# config_hash {}\nbuilding,unit,kind,band_lo,band_hi,contours,points,rms,accept_rms,fallback,converged,candidates,note\n",
        run.hash
    );
    let mut unconverged = 0;
    let mut model = CompactModel {
        meta: run.meta(c.interval),
        buildings: Vec::new(),
    };
    for (b, (m, fits)) in results.into_iter().enumerate() {
        for (u, f) in fits.iter().enumerate() {
            unconverged += usize::from(!f.converged);
            fit_row(&mut csv, b, u, f);
        }
        model.buildings.push(m);
    }
    run.write(RIGID, &serialize_model(&model)?)?;
    run.write(FITS, &csv)?;
    Ok(StageOutcome {
        buildings: model.buildings.len(),
        unconverged,
    })
}

fn fit_row(csv: &mut String, b: usize, u: usize, f: &UnitFit) {
    let note = f.note.as_deref().unwrap_or("").replace(',', ";");
    let candidates: Vec<String> = f
        .candidates
        .iter()
        .map(|(k, rms)| format!("{}:{rms:.4}", k.name()))
        .collect();
    let _ = writeln!(
        csv,
        "{b},{u},{},{:.4},{:.4},{},{},{:.4},{:.4},{},{},{},{note}",
        f.kind.name(),
        f.band.0,
        f.band.1,
        f.contours,
        f.points,
        f.rms,
        f.accept_rms,
        f.fallback,
        f.converged,
        candidates.join(" ")
    );
}

fn deform(run: &Run) -> Result<StageOutcome> {
    let c = run.clusters()?;
    let rigid = run.model(RIGID, Stage::Fit)?;
    if rigid.buildings.len() != c.buildings.len() {
        return Err(Failure::format("rigid model and clusters disagree on the building count"));
    }
    let s = run.cfg.reconstruct_settings().map_err(Failure::Format)?;
    let results = rigid
        .buildings
        .par_iter()
        .zip(&c.buildings)
        .map(|(m, b)| Ok(refine_model(m, &b.points, &s.field, &s.refine)?))
        .collect::<Result<Vec<(BuildingModel, Vec<UnitRefine>)>>>()?;
    let mut csv = format!(
        "# config_hash {}\nbuilding,unit,nodes,rms_before,rms_after,iterations,converged\n",
        run.hash
    );
    let mut unconverged = 0;
    let mut model = CompactModel {
        meta: rigid.meta.clone(),
        buildings: Vec::new(),
    };
    for (b, (m, reps)) in results.into_iter().enumerate() {
        for (u, r) in reps.iter().enumerate() {
            unconverged += usize::from(!r.converged);
            let _ = writeln!(
                csv,
                "{b},{u},{},{:.4},{:.4},{},{}",
                r.nodes, r.rms_before, r.rms_after, r.iterations, r.converged
            );
        }
        model.buildings.push(m);
    }
    run.write(&run.cfg.output.model, &serialize_model(&model)?)?;
    run.write(REFINE, &csv)?;
    Ok(StageOutcome {
        buildings: model.buildings.len(),
        unconverged,
    })
}

fn export(run: &Run) -> Result<StageOutcome> {
    let m = run.model(&run.cfg.output.model, Stage::Deform)?;
    let e = export_mesh(&m, run.cfg.export_res())?;
    if e.skipped > 0 {
        info!("{} degenerate triangle(s) skipped", e.skipped);
    }
    info!("{} facets written", e.facets);
    run.write(&run.cfg.output.mesh, &e.text)?;
    Ok(StageOutcome {
        buildings: m.buildings.len(),
        unconverged: 0,
    })
}

/// One line of the accuracy and storage report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id: String,
    pub n_points: usize,
    pub mean_dist_m: f64,
    pub compact_bytes: usize,
    pub mesh_bytes: usize,
}

impl ReportRow {
    pub fn ratio(&self) -> f64 {
        self.compact_bytes as f64 / self.mesh_bytes.max(1) as f64
    }
}

pub const REPORT_COLUMNS: &str = "id,n_points,mean_dist_m,compact_bytes,mesh_bytes,ratio";

pub fn format_report(rows: &[ReportRow], hash: &str) -> String {
    let mut s = format!("# config_hash {hash}\n{REPORT_COLUMNS}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.4},{},{},{:.4}",
            r.id,
            r.n_points,
            r.mean_dist_m,
            r.compact_bytes,
            r.mesh_bytes,
            r.ratio()
        );
    }
    s
}

/// Reads a report back (the benchmark collects fixture reports this way).
pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut rows = Vec::new();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some(REPORT_COLUMNS) {
        return Err(Failure::format("report: unexpected columns"));
    }
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let bad = || Failure::format(format!("report: bad row {l:?}"));
        if f.len() != 6 {
            return Err(bad());
        }
        rows.push(ReportRow {
            id: f[0].to_string(),
            n_points: f[1].parse().map_err(|_| bad())?,
            mean_dist_m: f[2].parse().map_err(|_| bad())?,
            compact_bytes: f[3].parse().map_err(|_| bad())?,
            mesh_bytes: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

fn storage(b: &BuildingModel, res: MeshResolution, hash: &str) -> Result<(usize, usize)> {
    Ok((building_bytes(b)?, export_building(b, res, hash)?.text.len()))
}

fn evaluate(run: &Run) -> Result<StageOutcome> {
    let c = run.clusters()?;
    let m = run.model(&run.cfg.output.model, Stage::Deform)?;
    if m.buildings.len() != c.buildings.len() {
        return Err(Failure::format("model and clusters disagree on the building count"));
    }
    let res = run.cfg.export_res();
    let density = run.cfg.evaluate.density;
    let rows = m
        .buildings
        .par_iter()
        .zip(&c.buildings)
        .map(|(b, cl)| {
            let mean_dist_m = evaluate_accuracy(b, &cl.points, res, density)?;
            let (compact_bytes, mesh_bytes) = storage(b, res, &run.hash)?;
            Ok(ReportRow {
                id: b.id.to_string(),
                n_points: cl.points.len(),
                mean_dist_m,
                compact_bytes,
                mesh_bytes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    for r in &rows {
        info!("building {}: mean distance {:.4} m, storage ratio {:.4}", r.id, r.mean_dist_m, r.ratio());
    }
    run.write(&run.cfg.output.report, &format_report(&rows, &run.hash))?;
    Ok(StageOutcome {
        buildings: rows.len(),
        unconverged: 0,
    })
}

/// Scores a model against an arbitrary cloud: each point counts towards
/// the building whose surface is nearest to it.
pub fn evaluate_cloud(
    m: &CompactModel,
    pc: &[Point3],
    res: MeshResolution,
    density: f64,
    hash: &str,
) -> Result<Vec<ReportRow>> {
    if m.buildings.is_empty() {
        return Err(Failure::format("model has no buildings"));
    }
    if !(density > 0.0) {
        return Err(Failure::format("sampling density must be positive"));
    }
    let trees = m
        .buildings
        .par_iter()
        .map(|b| {
            let mesh = b.mesh(res)?;
            let mut s = mesh.sample_surface(density);
            s.extend_from_slice(&mesh.vertices);
            Ok(KdTree::new(s))
        })
        .collect::<Result<Vec<_>>>()?;
    let nearest: Vec<(usize, f64)> = pc
        .par_iter()
        .map(|p| {
            trees
                .iter()
                .enumerate()
                .filter_map(|(i, t)| t.nearest(*p).map(|n| (i, n.distance())))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap_or((0, f64::INFINITY))
        })
        .collect();
    let mut sums = vec![(0usize, 0.0f64); m.buildings.len()];
    for (i, d) in nearest {
        sums[i].0 += 1;
        sums[i].1 += d;
    }
    m.buildings
        .iter()
        .zip(sums)
        .map(|(b, (n, total))| {
            let (compact_bytes, mesh_bytes) = storage(b, res, hash)?;
            Ok(ReportRow {
                id: b.id.to_string(),
                n_points: n,
                mean_dist_m: if n == 0 { 0.0 } else { total / n as f64 },
                compact_bytes,
                mesh_bytes,
            })
        })
        .collect()
}

/// Thread pool honouring `PRIMITECT_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let n = match std::env::var("PRIMITECT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Failure::format(format!("PRIMITECT_THREADS must be a count, got {v:?}")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Failure::format(e.to_string()))
}
