//! JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use kp_core::kernel::DiscreteDocument;
use kp_core::perturbation::semi::{uniform_slices, Engine, SliceSampler};
use kp_core::perturbation::{Density, Interval, MeasureSpec, PerturbingMeasure, SolverSpec};
use kp_core::quadrature::QuadratureSpec;
use kp_core::spacetime::{kernel_by_name, SharedKernel};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub name: String,
    #[serde(default = "one")]
    pub dim: usize,
}

fn one() -> usize {
    1
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            name: "gaussian".into(),
            dim: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub t: f64,
    pub y: f64,
}

impl Default for Target {
    fn default() -> Self {
        Target { t: 1.0, y: 0.0 }
    }
}

/// `x` values `lo, ..., hi` (`n` points) at every listed `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub s: Vec<f64>,
    pub x: [f64; 2],
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Slicing {
    /// `[t - h, t), [t - 2h, t - h), ...` down to `r`.
    TimeUniform { r: f64, h: f64 },
    /// Bands of `u + z` of width `h`, or of the width that gives `eta`. κ only.
    DiagonalLevel {
        #[serde(default)]
        h: Option<f64>,
        #[serde(default)]
        eta: Option<f64>,
    },
    /// Left-closed intervals `[lo, hi)`, latest first.
    Intervals { intervals: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default = "ten")]
    pub per_slice: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "unit_range")]
    pub x_range: (f64, f64),
}

fn ten() -> usize {
    10
}

fn unit_range() -> (f64, f64) {
    (-1.0, 1.0)
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            per_slice: 10,
            seed: None,
            x_range: unit_range(),
        }
    }
}

/// Overrides of the series solver defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub max_terms: Option<usize>,
    pub tail_tol: Option<f64>,
    pub time_panels: Option<usize>,
    pub space_panels: Option<usize>,
    pub order: Option<usize>,
    pub reduce_space: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiscreteSource {
    File(PathBuf),
    Inline(DiscreteDocument),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KatoConfig {
    #[serde(default = "kato_h")]
    pub h: Vec<f64>,
    #[serde(default)]
    pub dt_fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub offsets: Option<Vec<f64>>,
    /// Certifies the bound on `slices` intervals below the target when set.
    #[serde(default)]
    pub slices: Option<usize>,
    /// 3P constant; sampled from the kernel when absent.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "three_p_samples")]
    pub three_p_samples: usize,
}

fn kato_h() -> Vec<f64> {
    vec![1.0, 0.5, 0.25, 0.125]
}

fn three_p_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub measure: Option<MeasureSpec>,
    #[serde(default)]
    pub target: Target,
    #[serde(default)]
    pub points: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub slicing: Option<Slicing>,
    #[serde(default)]
    pub engine: Engine,
    /// Local smallness used by the certificates; measured when absent.
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub sampler: SamplerSpec,
    #[serde(default)]
    pub quad_rel_tol: Option<f64>,
    #[serde(default)]
    pub quad_abs_tol: Option<f64>,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub discrete: Option<DiscreteSource>,
    #[serde(default)]
    pub kato: Option<KatoConfig>,
    /// Relative tolerance of `oracle-check`; `10 quad_rel_tol` when absent.
    #[serde(default)]
    pub oracle_tol: Option<f64>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn kernel(&self) -> Result<SharedKernel, CliError> {
        kernel_by_name(&self.kernel.name, self.kernel.dim).map_err(config_err)
    }

    pub fn measure(&self) -> Result<PerturbingMeasure, CliError> {
        match &self.measure {
            Some(m) => m.build().map_err(config_err),
            None => Ok(PerturbingMeasure::zero()),
        }
    }

    pub fn quad(&self) -> QuadratureSpec {
        let base = SolverSpec::default().quad;
        base.with_tol(
            self.quad_rel_tol.unwrap_or(base.rel_tol),
            self.quad_abs_tol.unwrap_or(base.abs_tol),
        )
    }

    pub fn solver(&self) -> SolverSpec {
        let d = SolverSpec::default();
        let o = &self.solver;
        SolverSpec {
            quad: self.quad(),
            max_terms: o.max_terms.unwrap_or(d.max_terms),
            tail_tol: o.tail_tol.unwrap_or(d.tail_tol),
            time_panels: o.time_panels.unwrap_or(d.time_panels),
            space_panels: o.space_panels.unwrap_or(d.space_panels),
            order: o.order.unwrap_or(d.order),
            reduce_space: o.reduce_space.unwrap_or(d.reduce_space),
            ..d
        }
    }

    pub fn slice_sampler(&self, seed: u64) -> SliceSampler {
        SliceSampler {
            per_slice: self.sampler.per_slice,
            x_range: self.sampler.x_range,
            seed: self.sampler.seed.unwrap_or(seed),
            ..SliceSampler::default()
        }
    }

    /// Query points `(s, x)`: explicit points, then the grid, else
    /// `s = t - 1` and eleven `x` values in `[-1, 1]` around `y`.
    pub fn points(&self) -> Result<Vec<(f64, f64)>, CliError> {
        if let Some(p) = &self.points {
            return Ok(p.iter().map(|v| (v[0], v[1])).collect());
        }
        let (s, x, n) = match &self.grid {
            Some(g) => (g.s.clone(), g.x, g.n),
            None => (vec![self.target.t - 1.0], [self.target.y - 1.0, self.target.y + 1.0], 11),
        };
        if n == 0 || s.is_empty() {
            return Err(config_err("the grid needs at least one point"));
        }
        let step = if n > 1 { (x[1] - x[0]) / (n - 1) as f64 } else { 0.0 };
        Ok(s.iter()
            .flat_map(|&s| (0..n).map(move |i| (s, x[0] + step * i as f64)))
            .collect())
    }

    /// Time intervals of a uniform or explicit slicing.
    pub fn intervals(&self) -> Result<Vec<Interval>, CliError> {
        match &self.slicing {
            Some(Slicing::TimeUniform { r, h }) => uniform_slices(*r, self.target.t, *h).map_err(config_err),
            Some(Slicing::Intervals { intervals }) => {
                if intervals.is_empty() {
                    return Err(config_err("the slicing needs at least one interval"));
                }
                Ok(intervals.iter().map(|v| Interval::left_closed(v[0], v[1])).collect())
            }
            Some(Slicing::DiagonalLevel { .. }) => Err(config_err("diagonal-level slicing is not a time slicing")),
            None => Err(config_err("this command needs a slicing")),
        }
    }

    pub fn discrete(&self) -> Result<Option<DiscreteDocument>, CliError> {
        match &self.discrete {
            None => Ok(None),
            Some(DiscreteSource::Inline(doc)) => Ok(Some(doc.clone())),
            Some(DiscreteSource::File(p)) => {
                let path = match &self.base_dir {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                let text =
                    std::fs::read_to_string(&path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text).map(Some).map_err(config_err)
            }
        }
    }

    /// `(c, p)` of a pure `q_0` measure.
    pub fn q0(&self) -> Result<(f64, f64), CliError> {
        match &self.measure {
            Some(MeasureSpec {
                density: Density::Q0 { c, p },
                atoms,
                support: None,
            }) if atoms.is_empty() => Ok((*c, *p)),
            _ => Err(config_err("diagonal-level slicing needs a q0 measure without atoms or support")),
        }
    }
}
