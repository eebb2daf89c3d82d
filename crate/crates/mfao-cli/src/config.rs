//! Experiment configuration: a TOML tree that fully determines a run.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use mfao::coefficients::{phantom_library, Phantom, PhantomParams, PHANTOM_NAMES};
use mfao::error::Component;
use mfao::functional::QLattice;
use mfao::geometry::{norm, AngularGrid, BoundaryMesh, Discretization, Domain, Shape, SpatialGrid, Vec3};
use mfao::reconstruct::{OscillatoryDesign, PointDesign};
use mfao::sources::{single_node_delta, AuditConfig};
use mfao::transport::{BoundaryField, SolveOptions, SpatialProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSpec,
    pub angles: AngleSpec,
    pub phantom: PhantomSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub lattice: LatticeSpec,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub reconstruct: ReconstructSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default)]
    pub audit: AuditSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub dim: usize,
    #[serde(default = "unit_box")]
    pub shape: Shape,
    /// Spatial nodes per axis; the third entry is ignored in 2D.
    pub counts: [usize; 3],
    /// Optical-distance step; defaults to `diam / 256`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    /// Lift march step; defaults to half the grid spacing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift_step: Option<f64>,
}

fn unit_box() -> Shape {
    Shape::Box { lo: [0.0; 3], hi: [1.0; 3] }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AngleSpec {
    Circle { m: usize },
    Product { n_mu: usize, n_phi: usize },
    Polar { axis: Vec3, reference: Vec3, n_mu: usize, n_psi: usize },
    PolarUniform { axis: Vec3, reference: Vec3, rings: usize, meridians: usize },
}

impl AngleSpec {
    fn dim(&self) -> usize {
        match self {
            AngleSpec::Circle { .. } => 2,
            _ => 3,
        }
    }

    pub fn build(&self) -> mfao::Result<AngularGrid> {
        match *self {
            AngleSpec::Circle { m } => AngularGrid::circle(m),
            AngleSpec::Product { n_mu, n_phi } => AngularGrid::product(n_mu, n_phi),
            AngleSpec::Polar { axis, reference, n_mu, n_psi } => AngularGrid::polar(axis, reference, n_mu, n_psi),
            AngleSpec::PolarUniform { axis, reference, rings, meridians } => {
                AngularGrid::polar_uniform(axis, reference, rings, meridians)
            }
        }
    }
}

/// Either a library phantom with parameter overrides or a fully custom one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library: Option<String>,
    #[serde(default)]
    pub params: PhantomParams,
    /// Overrides the phantom's required absorption margin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<Phantom>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub tol: f64,
    pub max_terms: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let o = SolveOptions::default();
        SolverSpec { tol: o.tol, max_terms: o.max_terms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeSpec {
    /// False gives an empty probe set.
    pub enabled: bool,
    /// Half-widths of the wavevector lattice; defaults to half the Nyquist index.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extent: Option<[usize; 3]>,
    pub a: f64,
    pub b: f64,
    pub mesh_refine: usize,
}

impl Default for LatticeSpec {
    fn default() -> Self {
        LatticeSpec { enabled: true, extent: None, a: 0.5, b: 0.0, mesh_refine: 2 }
    }
}

/// Boundary data: a spatial profile times either a uniform angular factor or
/// a single-node angular delta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    pub profile: SpatialProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSpec {
    pub f: BoundarySpec,
    pub g: BoundarySpec,
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec {
            f: BoundarySpec { profile: SpatialProfile::Gaussian { center: [0.0, 0.3, 0.0], width: 0.5 }, direction: None },
            g: BoundarySpec { profile: SpatialProfile::Gaussian { center: [1.0, 0.7, 0.0], width: 0.5 }, direction: None },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Point,
    Oscillatory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Oracle,
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSpec {
    pub pipeline: Pipeline,
    pub provider: ProviderKind,
    pub point: PointDesign,
    pub oscillatory: OscillatoryDesign,
}

impl Default for ReconstructSpec {
    fn default() -> Self {
        ReconstructSpec {
            pipeline: Pipeline::Point,
            provider: ProviderKind::Oracle,
            point: PointDesign::default(),
            oscillatory: OscillatoryDesign::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    /// Probes drawn for the boundary identity.
    pub identity_probes: usize,
    /// Half-widths of the sub-lattice the identity probes are drawn from.
    pub identity_extent: [usize; 3],
    pub identity_tol: f64,
    pub adjoint_tol: f64,
    /// Allowed excess of the Neumann term ratios over `sup rho / inf sigma`.
    pub contraction_slack: f64,
    pub recovery_tol: f64,
    pub interior_layer: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            identity_probes: 8,
            identity_extent: [2, 2, 2],
            identity_tol: 0.02,
            adjoint_tol: 1e-10,
            contraction_slack: 0.05,
            recovery_tol: 0.05,
            interior_layer: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditSpec {
    pub enabled: bool,
    pub hs: Vec<f64>,
    pub geometry: AuditConfig,
}

impl Default for AuditSpec {
    fn default() -> Self {
        AuditSpec { enabled: false, hs: vec![0.2, 0.1, 0.05], geometry: AuditConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: String,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { dir: "out".into() }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg = Self::parse(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn emit(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Cross-reference and parameter checks.
    pub fn check(&self) -> Result<()> {
        let d = &self.domain;
        ensure!(d.dim == 2 || d.dim == 3, "domain.dim must be 2 or 3");
        ensure!(self.angles.dim() == d.dim, "angles are {}D but the domain is {}D", self.angles.dim(), d.dim);
        let ph = &self.phantom;
        match (&ph.library, &ph.custom) {
            (Some(name), None) => {
                ensure!(PHANTOM_NAMES.contains(&name.as_str()), "unknown library phantom `{name}`")
            }
            (None, Some(_)) => {}
            _ => bail!("phantom needs exactly one of `library` and `custom`"),
        }
        ensure!(self.solver.tol > 0.0 && self.solver.max_terms > 0, "solver tolerances must be positive");
        ensure!(self.lattice.mesh_refine > 0, "lattice.mesh_refine must be positive");
        if let Some(e) = self.lattice.extent {
            for a in 0..d.dim {
                // the synthesis needs at least two nodes per half period
                ensure!(e[a] < d.counts[a], "lattice extent {} on axis {a} exceeds the grid Nyquist index", e[a]);
            }
        }
        for (name, b) in [("f", &self.source.f), ("g", &self.source.g)] {
            if let Some(t) = b.direction {
                ensure!((norm(t) - 1.0).abs() < 1e-9, "source.{name}.direction must be a unit vector");
            }
        }
        let r = &self.reconstruct;
        match r.pipeline {
            Pipeline::Point => {
                ensure!(r.point.s_nodes > 0 && r.point.s_nodes % 2 == 0, "point.s_nodes must be even and positive")
            }
            Pipeline::Oscillatory => {
                ensure!(d.dim == 3, "the oscillatory pipeline needs a 3D domain");
                let o = &r.oscillatory;
                ensure!(o.s_nodes > 0 && o.s_nodes % 2 == 0, "oscillatory.s_nodes must be even and positive");
                ensure!(!o.rotations.is_empty(), "oscillatory.rotations must be nonempty");
                if let Some(h) = o.h {
                    let dom = self.build_domain()?;
                    let grid = SpatialGrid::new(&dom, d.counts)?;
                    let floor = 4.0 * grid.max_spacing() / (2.0 * std::f64::consts::PI);
                    ensure!(h >= floor, "oscillatory.h = {h} is below the resolvable width {floor:.4}");
                }
            }
        }
        if self.audit.enabled {
            ensure!(self.audit.hs.len() >= 2, "audit.hs needs at least two widths");
        }
        Ok(())
    }

    pub fn build_domain(&self) -> Result<Domain> {
        Ok(Domain::new(self.domain.shape, self.domain.dim)?)
    }

    pub fn discretization(&self) -> Result<Arc<Discretization>> {
        let domain = self.build_domain()?;
        let grid = SpatialGrid::new(&domain, self.domain.counts)?;
        let mut disc = Discretization::new(domain, grid, self.angles.build()?)?;
        if self.domain.step.is_some() || self.domain.lift_step.is_some() {
            let step = self.domain.step.unwrap_or(disc.step);
            let lift = self.domain.lift_step.unwrap_or(disc.lift_step);
            disc = disc.with_steps(step, lift)?;
        }
        Ok(Arc::new(disc))
    }

    pub fn phantom(&self, domain: &Domain) -> Result<Phantom> {
        let mut p = match (&self.phantom.library, &self.phantom.custom) {
            (Some(name), _) => phantom_library(name, &self.phantom.params, domain)?,
            (None, Some(c)) => c.clone(),
            (None, None) => bail!("no phantom given"),
        };
        if let Some(m) = self.phantom.margin {
            p.margin = m;
        }
        Ok(p)
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { tol: self.solver.tol, max_terms: self.solver.max_terms }
    }

    pub fn lattice(&self, grid: &SpatialGrid) -> Option<QLattice> {
        if !self.lattice.enabled {
            return None;
        }
        Some(match self.lattice.extent {
            Some(e) => QLattice::with_extent(grid, e),
            None => QLattice::for_grid(grid),
        })
    }

    pub fn mesh(&self, disc: &Discretization) -> Arc<BoundaryMesh> {
        Arc::new(BoundaryMesh::new(&disc.domain, &disc.grid, self.lattice.mesh_refine))
    }

    pub fn source_f(&self, disc: &Discretization) -> Result<BoundaryField<f64>> {
        boundary(&self.source.f, disc, Component::Incoming)
    }

    pub fn source_g(&self, disc: &Discretization) -> Result<BoundaryField<f64>> {
        boundary(&self.source.g, disc, Component::Outgoing)
    }
}

fn boundary(spec: &BoundarySpec, disc: &Discretization, component: Component) -> Result<BoundaryField<f64>> {
    let angular = match spec.direction {
        None => vec![1.0; disc.directions()],
        Some(theta) => {
            let delta = single_node_delta(&disc.angles, theta)?;
            let mut a = vec![0.0; disc.directions()];
            for &j in &delta.support {
                a[j] = delta.values[j];
            }
            a
        }
    };
    Ok(BoundaryField::Separable { component, angular, spatial: spec.profile.clone() })
}
