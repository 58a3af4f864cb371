//! Pipeline configuration: a TOML file with one table per stage. Every key
//! has a default, so an empty file is a valid config; unknown keys are
//! errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use primitect_core::deform::EnergyWeights;
use primitect_core::lm::LmSettings;
use primitect_core::pipeline::{FieldSettings, ReconstructSettings, RefineSettings};
use primitect_core::primitives::{FitSettings, MeshResolution, SelectSettings};
use primitect_core::procrustes::{DivisionSettings, Metric, ProfileSplit};
use primitect_core::topology::AttributeThresholds;

use crate::error::{Failure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub enabled: bool,
    /// Grid cell of the minimum-z surface, m.
    pub cell: f64,
    /// Opening window, cells (odd).
    pub window: usize,
    pub slope_tol: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            cell: 1.0,
            window: 31,
            slope_tol: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourConfig {
    /// DSM cell, m.
    pub cell: f64,
    pub interval: f64,
    /// Elevation of level zero; defaults to the lowest point rounded down
    /// to a whole interval.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base: Option<f64>,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            cell: 0.5,
            interval: 1.0,
            base: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub min_area: f64,
    pub max_area: f64,
    pub min_height: f64,
    pub min_circularity: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        let t = AttributeThresholds::default();
        Self {
            min_area: t.min_area,
            max_area: t.max_area,
            min_height: t.min_height,
            min_circularity: t.min_circularity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivisionConfig {
    pub n_resample: usize,
    pub max_distance: f64,
    /// `mpa` or `pa`.
    pub metric: String,
    pub profile_split: bool,
    pub profile_tolerance: f64,
    pub profile_min_circularity: f64,
    pub profile_min_run: usize,
    pub min_cut_area: f64,
}

impl Default for DivisionConfig {
    fn default() -> Self {
        let d = ReconstructSettings::default().division;
        let p = d.profile.unwrap_or_default();
        Self {
            n_resample: d.n_resample,
            max_distance: d.max_distance,
            metric: String::from("mpa"),
            profile_split: d.profile.is_some(),
            profile_tolerance: p.tolerance,
            profile_min_circularity: p.min_circularity,
            profile_min_run: p.min_run,
            min_cut_area: d.min_cut_area,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub voxel: f64,
    pub pad: f64,
    /// Largest accepted fit rms, m; unset means twice the point spacing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accept_rms: Option<f64>,
    pub simple_slack: f64,
    pub parsimony: f64,
    pub max_corners: usize,
    pub segments: usize,
    pub levels: usize,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        let s = ReconstructSettings::default();
        Self {
            voxel: s.field.voxel,
            pad: s.field.pad,
            accept_rms: s.select.accept_rms,
            simple_slack: s.select.simple_slack,
            parsimony: s.select.parsimony,
            max_corners: s.select.max_corners,
            segments: s.select.fit.res.segments,
            levels: s.select.fit.res.levels,
            max_iter: s.select.fit.lm.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeformConfig {
    pub enabled: bool,
    pub node_count: usize,
    pub k: usize,
    pub w_rot: f64,
    pub w_reg: f64,
    pub w_data: f64,
    pub max_iter: usize,
    /// Stops once an iteration lowers the energy by less than this fraction.
    pub rel_tol: f64,
    pub segments: usize,
    pub levels: usize,
}

impl Default for DeformConfig {
    fn default() -> Self {
        let r = RefineSettings::default();
        Self {
            enabled: r.enabled,
            node_count: r.node_count,
            k: r.k,
            w_rot: r.weights.rot,
            w_reg: r.weights.reg,
            w_data: r.weights.data,
            max_iter: r.lm.max_iter,
            rel_tol: r.lm.rel_tol,
            segments: r.res.segments,
            levels: r.res.levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExportConfig {
    pub segments: usize,
    pub levels: usize,
}

impl Default for ExportConfig {
    fn default() -> Self {
        let r = MeshResolution::default();
        Self {
            segments: r.segments,
            levels: r.levels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Model surface samples per m².
    pub density: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            density: primitect_core::model::DEFAULT_EVAL_DENSITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    pub trials: usize,
    /// Per-vertex noise of one grid step, m.
    pub noise_unit: f64,
    /// Cut threshold for the clean synthetic outlines, 1/m.
    pub max_distance: f64,
    /// Points per m² on the fixture buildings.
    pub fixture_density: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            trials: 30,
            noise_unit: primitect_core::synth::SIGMA_UNIT,
            max_distance: primitect_core::procrustes::DEFAULT_MAX_DISTANCE,
            fixture_density: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub model: String,
    pub mesh: String,
    pub report: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            model: String::from("model.pcm"),
            mesh: String::from("model.stl"),
            report: String::from("report.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Drives all randomness (benchmark scenes and trials).
    pub seed: u64,
    pub filter: FilterConfig,
    pub contour: ContourConfig,
    pub topology: TopologyConfig,
    pub division: DivisionConfig,
    pub fit: FitConfig,
    pub deform: DeformConfig,
    pub export: ExportConfig,
    pub evaluate: EvaluateConfig,
    pub benchmark: BenchmarkConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            filter: FilterConfig::default(),
            contour: ContourConfig::default(),
            topology: TopologyConfig::default(),
            division: DivisionConfig::default(),
            fit: FitConfig::default(),
            deform: DeformConfig::default(),
            export: ExportConfig::default(),
            evaluate: EvaluateConfig::default(),
            benchmark: BenchmarkConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn positive(name: &str, v: f64) -> std::result::Result<(), String> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} must be positive, got {v}"))
    }
}

fn file_name(name: &str, v: &str) -> std::result::Result<(), String> {
    let p = Path::new(v);
    if v.is_empty() || p.components().count() != 1 || p.file_name().is_none() {
        return Err(format!("output.{name} must be a plain file name, got {v:?}"));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let c: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        c.validate()?;
        Ok(c)
    }

    /// Reads `path`, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let err = |msg: String| Failure::Config {
            path: path.to_path_buf(),
            msg,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::parse(&text).map_err(err)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let f = &self.filter;
        positive("filter.cell", f.cell)?;
        if f.window < 3 || f.window % 2 == 0 {
            return Err(format!("filter.window must be odd and >= 3, got {}", f.window));
        }
        if !(f.slope_tol >= 0.0 && f.slope_tol.is_finite()) {
            return Err(String::from("filter.slope_tol must be non-negative"));
        }
        positive("contour.cell", self.contour.cell)?;
        positive("contour.interval", self.contour.interval)?;
        if self.contour.base.is_some_and(|b| !b.is_finite()) {
            return Err(String::from("contour.base must be finite"));
        }
        let t = &self.topology;
        positive("topology.max_area", t.max_area)?;
        if !(t.min_area >= 0.0 && t.min_area < t.max_area) {
            return Err(String::from("topology.min_area must lie in [0, max_area)"));
        }
        self.reconstruct_settings()?;
        positive("evaluate.density", self.evaluate.density)?;
        if self.export.segments < 3 || self.export.levels < 1 {
            return Err(String::from("export needs segments >= 3 and levels >= 1"));
        }
        let b = &self.benchmark;
        if b.trials == 0 {
            return Err(String::from("benchmark.trials must be at least 1"));
        }
        positive("benchmark.noise_unit", b.noise_unit)?;
        positive("benchmark.max_distance", b.max_distance)?;
        positive("benchmark.fixture_density", b.fixture_density)?;
        let o = &self.output;
        file_name("model", &o.model)?;
        file_name("mesh", &o.mesh)?;
        file_name("report", &o.report)?;
        Ok(())
    }

    pub fn thresholds(&self) -> AttributeThresholds {
        let t = &self.topology;
        AttributeThresholds {
            min_area: t.min_area,
            max_area: t.max_area,
            min_height: t.min_height,
            min_circularity: t.min_circularity,
        }
    }

    pub fn reconstruct_settings(&self) -> std::result::Result<ReconstructSettings, String> {
        let d = &self.division;
        let metric = match d.metric.as_str() {
            "mpa" => Metric::Mpa,
            "pa" => Metric::Pa,
            m => return Err(format!("division.metric must be \"mpa\" or \"pa\", got {m:?}")),
        };
        if d.n_resample < 3 {
            return Err(String::from("division.n_resample must be at least 3"));
        }
        positive("division.max_distance", d.max_distance)?;
        positive("division.profile_tolerance", d.profile_tolerance)?;
        if d.profile_min_run == 0 {
            return Err(String::from("division.profile_min_run must be at least 1"));
        }
        if !(d.min_cut_area >= 0.0) {
            return Err(String::from("division.min_cut_area must be non-negative"));
        }
        let f = &self.fit;
        positive("fit.voxel", f.voxel)?;
        if !(f.pad >= 0.0 && f.pad.is_finite()) {
            return Err(String::from("fit.pad must be non-negative"));
        }
        if let Some(a) = f.accept_rms {
            positive("fit.accept_rms", a)?;
        }
        if !(f.simple_slack >= 0.0) {
            return Err(String::from("fit.simple_slack must be non-negative"));
        }
        if !(f.parsimony >= 0.0) {
            return Err(String::from("fit.parsimony must be non-negative"));
        }
        let e = &self.deform;
        let weights = EnergyWeights {
            rot: e.w_rot,
            reg: e.w_reg,
            data: e.w_data,
        };
        weights.validate().map_err(|e| e.to_string())?;
        if e.k == 0 {
            return Err(String::from("deform.k must be positive"));
        }
        if !(self.deform.rel_tol >= 0.0 && self.deform.rel_tol.is_finite()) {
            return Err(String::from("deform.rel_tol must be non-negative"));
        }
        for (name, s, l) in [("fit", f.segments, f.levels), ("deform", e.segments, e.levels)] {
            if s < 3 || l < 1 {
                return Err(format!("{name} needs segments >= 3 and levels >= 1"));
            }
        }
        let base = ReconstructSettings::default();
        Ok(ReconstructSettings {
            division: DivisionSettings {
                n_resample: d.n_resample,
                max_distance: d.max_distance,
                metric,
                profile: d.profile_split.then_some(ProfileSplit {
                    min_circularity: d.profile_min_circularity,
                    tolerance: d.profile_tolerance,
                    min_run: d.profile_min_run,
                }),
                min_cut_area: d.min_cut_area,
            },
            field: FieldSettings {
                voxel: f.voxel,
                pad: f.pad,
            },
            select: SelectSettings {
                fit: FitSettings {
                    res: MeshResolution::new(f.segments, f.levels),
                    lm: LmSettings {
                        max_iter: f.max_iter,
                        ..base.select.fit.lm
                    },
                    ..base.select.fit
                },
                accept_rms: f.accept_rms,
                simple_slack: f.simple_slack,
                parsimony: f.parsimony,
                max_corners: f.max_corners,
            },
            refine: RefineSettings {
                enabled: e.enabled,
                node_count: e.node_count,
                k: e.k,
                res: MeshResolution::new(e.segments, e.levels),
                weights,
                lm: LmSettings {
                    max_iter: e.max_iter,
                    rel_tol: e.rel_tol,
                    ..base.refine.lm
                },
            },
        })
    }

    pub fn export_res(&self) -> MeshResolution {
        MeshResolution::new(self.export.segments, self.export.levels)
    }

    /// The fully defaulted config in canonical TOML.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// SHA-256 of the canonical TOML, hex.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.canonical().as_bytes()))
    }
}
