//! JSON run configurations for the batch driver.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::homogenize::{Model, CB_GAP_THRESHOLD};
use crate::lattice::LatticeSpec;
use crate::mat::Mat;
use crate::models::{
    ConstantDensity, FrobeniusSquared, HarmonicShell, HarmonicSpring, LennardJones, MatrixDensity,
    MultilatticeHarmonic, PairPotential, PairPotentialModel, QuadraticForm, QuadraticFormModel, QuasiconvexWrapper,
    ZeroPotential,
};
use crate::solver::SolveOptions;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "CELLHOM_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Homogenize,
    CbScan,
    Elastic,
    TilingCheck,
    Validate,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Homogenize => "homogenize",
            Task::CbScan => "cb_scan",
            Task::Elastic => "elastic",
            Task::TilingCheck => "tiling_check",
            Task::Validate => "validate",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub d: usize,
    /// Basis rows; the columns are the lattice vectors.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    /// Super-cell site offsets beyond the unit-cell corners.
    #[serde(default)]
    pub stencil: Vec<Vec<i64>>,
    /// Internal atoms per cell.
    #[serde(default)]
    pub m: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// Either `sigma` or the well position `r_min` must be given.
    LennardJones {
        epsilon: f64,
        #[serde(default)]
        sigma: Option<f64>,
        #[serde(default)]
        r_min: Option<f64>,
        #[serde(default)]
        shift: f64,
    },
    HarmonicShell {
        stiffness: f64,
    },
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    FrobeniusSquared,
    Constant { value: f64 },
}

fn one() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    HarmonicSpring {
        #[serde(default = "one")]
        stiffness: f64,
        #[serde(default = "one")]
        rest_length: f64,
    },
    PairPotential {
        potential: PotentialConfig,
        cutoff: f64,
    },
    QuasiconvexWrapper {
        density: DensityConfig,
    },
    /// Isotropic `lambda`/`mu` or a full 4×4 `q` acting on row-major 2×2 matrices.
    QuadraticForm {
        #[serde(default)]
        lambda: Option<f64>,
        #[serde(default)]
        mu: Option<f64>,
        #[serde(default)]
        q: Option<Vec<Vec<f64>>>,
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    MultilatticeHarmonic {
        #[serde(default = "one")]
        stiffness: f64,
    },
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::HarmonicSpring { .. } => "harmonic_spring",
            ModelConfig::PairPotential { .. } => "pair_potential",
            ModelConfig::QuasiconvexWrapper { .. } => "quasiconvex_wrapper",
            ModelConfig::QuadraticForm { .. } => "quadratic_form",
            ModelConfig::MultilatticeHarmonic { .. } => "multilattice_harmonic",
        }
    }
}

/// Solver settings; the seed lives at the top level of the config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub grad_tol: f64,
    pub max_iter: usize,
    pub history: usize,
    pub n_random_starts: usize,
    pub perturb_amp: f64,
    pub use_buckling_starts: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self {
            grad_tol: o.grad_tol,
            max_iter: o.max_iter,
            history: o.history,
            n_random_starts: o.n_random_starts,
            perturb_amp: o.perturb_amp,
            use_buckling_starts: o.use_buckling_starts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

fn default_tiling() -> Vec<[usize; 2]> {
    vec![[8, 16], [8, 32]]
}

fn default_elastic_h() -> f64 {
    1e-3
}

fn default_cb_threshold() -> f64 {
    CB_GAP_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lattice: LatticeConfig,
    pub model: ModelConfig,
    pub task: Task,
    /// Boundary matrices, each given as `d` rows.
    #[serde(rename = "M", default)]
    pub m: Vec<Vec<Vec<f64>>>,
    /// Internal mean targets, each given as `d` rows of `m` entries.
    #[serde(default)]
    pub s0: Option<Vec<Vec<Vec<f64>>>>,
    /// Defaults to {8, 16, 32, 64} in 2D and {4, 6, 8, 12} in 3D.
    #[serde(default)]
    pub schedule: Option<Vec<usize>>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    /// `(n, k)` box pairs for the tiling check.
    #[serde(default = "default_tiling")]
    pub tiling: Vec<[usize; 2]>,
    /// Finite-difference step of the elastic task.
    #[serde(default = "default_elastic_h")]
    pub elastic_h: f64,
    #[serde(default = "default_cb_threshold")]
    pub cb_threshold: f64,
    /// Reduced sizes for the validate task.
    #[serde(default)]
    pub quick: bool,
}

fn matrix(rows: &[Vec<f64>], r: usize, c: usize, what: &str) -> Result<Mat<f64>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("dimension mismatch: {what} must be {r}x{c}")));
    }
    let m = Mat::from_rows(rows).ok_or_else(|| Error::Config(format!("dimension mismatch: {what}")))?;
    if !m.is_finite() {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    Ok(m)
}

impl RunConfig {
    /// Fills defaults, checks shapes and builds the model once to validate it.
    pub fn validate(mut self) -> Result<Self> {
        let d = self.lattice.d;
        if d != 2 && d != 3 {
            return Err(Error::Config(format!("lattice.d = {d}: only 2 and 3 are supported")));
        }
        matrix(&self.lattice.a, d, d, "lattice.A")?;
        for (i, m) in self.m.iter().enumerate() {
            matrix(m, d, d, &format!("M[{i}]"))?;
        }
        if let Some(s0) = &self.s0 {
            if self.lattice.m == 0 {
                return Err(Error::Config("internal variables undefined for Bravais model".into()));
            }
            if s0.is_empty() {
                return Err(Error::Config("s0 list is empty".into()));
            }
            for (i, s) in s0.iter().enumerate() {
                matrix(s, d, self.lattice.m, &format!("s0[{i}]"))?;
            }
        }
        if matches!(self.task, Task::Homogenize | Task::CbScan | Task::TilingCheck) && self.m.is_empty() {
            return Err(Error::Config(format!("missing field `M`: task {} needs at least one matrix", self.task.as_str())));
        }
        if self.task != Task::Homogenize && self.s0.is_some() {
            return Err(Error::Config(format!("s0 is only used by the homogenize task, not {}", self.task.as_str())));
        }
        if !(self.elastic_h > 0.0) || !(self.cb_threshold >= 0.0) {
            return Err(Error::Config("elastic_h must be positive and cb_threshold nonnegative".into()));
        }
        self.solve_options().validate().map_err(|e| Error::Config(e.to_string()))?;
        let schedule = self
            .schedule
            .take()
            .unwrap_or_else(|| if d == 2 { vec![8, 16, 32, 64] } else { vec![4, 6, 8, 12] });
        let model = self.build_model()?;
        let r = model.lattice().radius();
        if schedule.len() < 3 || schedule.windows(2).any(|w| w[1] <= w[0]) || schedule[0] <= 2 * r {
            return Err(Error::Config(format!(
                "schedule {schedule:?} must hold at least 3 increasing box sizes above 2r = {}",
                2 * r
            )));
        }
        self.schedule = Some(schedule);
        for &[n, k] in &self.tiling {
            if n <= 2 * r || k < n {
                return Err(Error::Config(format!("tiling pair ({n}, {k}) needs 2r < n <= k")));
            }
        }
        Ok(self)
    }

    pub fn schedule(&self) -> &[usize] {
        self.schedule.as_deref().unwrap_or(&[])
    }

    pub fn solve_options(&self) -> SolveOptions {
        let s = &self.solver;
        SolveOptions {
            grad_tol: s.grad_tol,
            max_iter: s.max_iter,
            history: s.history,
            n_random_starts: s.n_random_starts,
            perturb_amp: s.perturb_amp,
            seed: self.seed,
            use_buckling_starts: s.use_buckling_starts,
        }
    }

    pub fn boundary_matrices(&self) -> Vec<Mat<f64>> {
        self.m.iter().map(|rows| Mat::from_rows(rows).expect("validated")).collect()
    }

    pub fn internal_targets(&self) -> Option<Vec<Mat<f64>>> {
        self.s0
            .as_ref()
            .map(|v| v.iter().map(|rows| Mat::from_rows(rows).expect("validated")).collect())
    }

    pub fn lattice_spec(&self) -> Result<LatticeSpec<f64>> {
        let l = &self.lattice;
        let a = matrix(&l.a, l.d, l.d, "lattice.A")?;
        let extra = (!l.stencil.is_empty()).then_some(l.stencil.as_slice());
        LatticeSpec::new(l.d, a, extra, l.m)
    }

    pub fn build_model(&self) -> Result<Model<f64>> {
        let spec = self.lattice_spec()?;
        let bad = |msg: String| Error::Config(format!("model {}: {msg}", self.model.name()));
        let model: Model<f64> = match &self.model {
            ModelConfig::HarmonicSpring { stiffness, rest_length } => {
                Arc::new(HarmonicSpring::new(spec, *stiffness, *rest_length)?)
            }
            ModelConfig::PairPotential { potential, cutoff } => {
                Arc::new(PairPotentialModel::new(&spec, build_potential(potential).map_err(bad)?, *cutoff)?)
            }
            ModelConfig::QuasiconvexWrapper { density } => {
                let v: Arc<dyn MatrixDensity<f64>> = match density {
                    DensityConfig::FrobeniusSquared => Arc::new(FrobeniusSquared),
                    DensityConfig::Constant { value } => Arc::new(ConstantDensity(*value)),
                };
                Arc::new(QuasiconvexWrapper::kuhn(spec, v)?)
            }
            ModelConfig::QuadraticForm { lambda, mu, q, kappa, delta } => {
                let form = self.quadratic_form(*lambda, *mu, q.as_deref()).map_err(bad)?;
                Arc::new(QuadraticFormModel::new(spec, form, *kappa, *delta)?)
            }
            ModelConfig::MultilatticeHarmonic { stiffness } => Arc::new(MultilatticeHarmonic::new(spec, *stiffness)?),
        };
        Ok(model)
    }

    fn quadratic_form(
        &self,
        lambda: Option<f64>,
        mu: Option<f64>,
        q: Option<&[Vec<f64>]>,
    ) -> std::result::Result<QuadraticForm<f64>, String> {
        match (lambda, mu, q) {
            (Some(l), Some(m), None) => QuadraticForm::isotropic(l, m).map_err(|e| e.to_string()),
            (None, None, Some(rows)) => {
                let k = matrix(rows, 4, 4, "q").map_err(|e| e.to_string())?;
                QuadraticForm::from_matrix(k).map_err(|e| e.to_string())
            }
            _ => Err("give either lambda and mu, or q".into()),
        }
    }

    /// The configured quadratic form, for quadratic-form models.
    pub fn model_quadratic_form(&self) -> Option<(QuadraticForm<f64>, f64, f64)> {
        match &self.model {
            ModelConfig::QuadraticForm { lambda, mu, q, kappa, delta } => self
                .quadratic_form(*lambda, *mu, q.as_deref())
                .ok()
                .map(|f| (f, *kappa, *delta)),
            _ => None,
        }
    }

    /// The pair potential and cutoff, for pair models.
    pub fn model_potential(&self) -> Option<(Arc<dyn PairPotential<f64>>, f64)> {
        match &self.model {
            ModelConfig::PairPotential { potential, cutoff } => build_potential(potential).ok().map(|p| (p, *cutoff)),
            _ => None,
        }
    }

    /// Applies the seed from [`SEED_ENV`], if set.
    pub fn apply_env_seed(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }
}

fn build_potential(p: &PotentialConfig) -> std::result::Result<Arc<dyn PairPotential<f64>>, String> {
    Ok(match p {
        PotentialConfig::LennardJones { epsilon, sigma, r_min, shift } => match (sigma, r_min) {
            (Some(s), None) => Arc::new(LennardJones { epsilon: *epsilon, sigma: *s, shift: *shift }),
            (None, Some(r)) => Arc::new(LennardJones::with_minimum_at(*r, *epsilon, *shift)),
            _ => return Err("lennard_jones needs exactly one of sigma and r_min".into()),
        },
        PotentialConfig::HarmonicShell { stiffness } => Arc::new(HarmonicShell { stiffness: *stiffness }),
        PotentialConfig::Zero => Arc::new(ZeroPotential),
    })
}

/// Parses and validates a config from JSON text.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let raw: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    raw.validate()
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
