//! Run configuration: defaults, a flat dotted-key TOML file, environment
//! and flag overrides, validation and the configuration hash.
//!
//! Every key is listed in [`KEYS`]; a file key outside that list is a
//! configuration error naming the key. Precedence, lowest first: defaults,
//! the file, `MILNE_OUTPUT_DIR`, command-line flags.

use crate::error::{MilneError, Result};
use crate::geometry_force::{ForceField, ForceMode};
use crate::milne_solver::SolverMethod;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Environment variable overriding `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "MILNE_OUTPUT_DIR";

/// Inflow data selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    /// `h = 0`.
    Zero,
    /// `h = Σ b_i ψ_i` with `data.basis`.
    Basis,
    /// The grazing counterexample with concentration `data.m`.
    Counterexample,
    /// Nodal values read from `data.file`.
    File,
}

impl std::str::FromStr for DataKind {
    type Err = MilneError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "basis" => Ok(Self::Basis),
            "counterexample" => Ok(Self::Counterexample),
            "file" => Ok(Self::File),
            _ => Err(MilneError::Config(format!(
                "data.kind must be one of zero, basis, counterexample, file; got `{s}`"
            ))),
        }
    }
}

/// Velocity grid parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Truncation radius.
    pub v_max: f64,
    /// Number of rings.
    pub n_rings: usize,
    /// Angles per ring (a multiple of 4).
    pub n_theta: usize,
}

/// Force field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    /// Curvature parameter ε ∈ (0, ¼].
    pub epsilon: f64,
    /// `classical` or `geometric`.
    pub mode: ForceMode,
}

/// Inflow data and mass flux.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Data selector.
    pub kind: DataKind,
    /// Coefficients for `kind = basis`.
    pub basis: [f64; 4],
    /// Concentration `M` of the counterexample data.
    pub m: f64,
    /// CSV file for `kind = file`.
    pub file: Option<String>,
    /// Mass flux `m_f`.
    pub mass_flux: f64,
    /// Target `C₀` of the mass-flux adjustment (`correct` only).
    pub target_c0: Option<f64>,
}

/// Slab controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabConfig {
    /// Initial slab length (`None`: the problem's default).
    pub length: Option<f64>,
    /// Maximum number of slab doublings.
    pub max_doublings: usize,
    /// Tolerance on the change of the fluid limit between doublings.
    pub d_tol: f64,
    /// Tail fraction over which the fluid limit is averaged.
    pub tail_fraction: f64,
}

/// Iteration controls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Acceptance tolerance of the final sweep.
    pub tol: f64,
    /// Maximum number of sweeps.
    pub max_iters: usize,
    /// `gmres` or `richardson`.
    pub method: SolverMethod,
}

/// `compare` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    /// ε values.
    pub epsilons: Vec<f64>,
    /// Probe multipliers.
    pub ns: Vec<f64>,
    /// Select the smallest certifying `M ≥ data.m` before the sweep.
    pub calibrate: bool,
    /// Number of concentrations tried by the calibration.
    pub max_steps: usize,
}

/// `grazing` probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrazingConfig {
    /// Strictly decreasing normal velocities.
    pub ladder: Vec<f64>,
}

/// `validate` options.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidateConfig {
    /// Random trials of the Rayleigh-quotient check.
    pub trials: usize,
}

/// Operator cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Cache file to load instead of assembling.
    pub cache: Option<String>,
}

/// Output location.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    /// Artifact directory.
    pub dir: String,
}

/// Run-level settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    /// Seed of every randomized check.
    pub seed: u64,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Velocity grid.
    pub grid: GridConfig,
    /// Force field.
    pub problem: ProblemConfig,
    /// Inflow data.
    pub data: DataConfig,
    /// Slab controls.
    pub slab: SlabConfig,
    /// Iteration controls.
    pub solver: SolverConfig,
    /// `compare` sweep.
    pub compare: CompareConfig,
    /// `grazing` probes.
    pub grazing: GrazingConfig,
    /// `validate` options.
    pub validate: ValidateConfig,
    /// Operator cache.
    pub kernel: KernelConfig,
    /// Output location.
    pub output: OutputConfig,
    /// Run-level settings.
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridConfig { v_max: 8.0, n_rings: 16, n_theta: 32 },
            problem: ProblemConfig { epsilon: 0.01, mode: ForceMode::Geometric },
            data: DataConfig {
                kind: DataKind::Counterexample,
                basis: [0.0; 4],
                m: 50.0,
                file: None,
                mass_flux: 0.0,
                target_c0: None,
            },
            slab: SlabConfig { length: None, max_doublings: 3, d_tol: 1e-6, tail_fraction: 0.1 },
            solver: SolverConfig { tol: 1e-8, max_iters: 3000, method: SolverMethod::Gmres },
            compare: CompareConfig { epsilons: vec![0.05, 0.02, 0.01], ns: vec![1.0, 2.0], calibrate: true, max_steps: 8 },
            grazing: GrazingConfig { ladder: vec![0.04, 0.02, 0.01, 0.005, 0.0025] },
            validate: ValidateConfig { trials: 200 },
            kernel: KernelConfig { cache: None },
            output: OutputConfig { dir: "milne_output".into() },
            run: RunSection { seed: 20_240_917 },
        }
    }
}

/// Every accepted key, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("grid.v_max", "velocity truncation radius"),
    ("grid.n_rings", "number of velocity rings"),
    ("grid.n_theta", "angles per ring (multiple of 4)"),
    ("problem.epsilon", "curvature parameter in (0, 1/4]"),
    ("problem.mode", "classical | geometric"),
    ("data.kind", "zero | basis | counterexample | file"),
    ("data.basis", "four fluid-mode coefficients"),
    ("data.m", "counterexample concentration M"),
    ("data.file", "CSV of nodal inflow values (ring,angle_index,h)"),
    ("data.mass_flux", "imposed mass flux"),
    ("data.target_c0", "target of the mass-flux adjustment"),
    ("slab.length", "initial slab length"),
    ("slab.max_doublings", "maximum slab doublings"),
    ("slab.d_tol", "fluid-limit change tolerance between doublings"),
    ("slab.tail_fraction", "tail fraction for the fluid limit"),
    ("solver.tol", "final-sweep tolerance"),
    ("solver.max_iters", "maximum sweeps"),
    ("solver.method", "gmres | richardson"),
    ("compare.epsilons", "epsilon values of the gap sweep"),
    ("compare.ns", "probe multipliers of the gap sweep"),
    ("compare.calibrate", "select the smallest certifying M first"),
    ("compare.max_steps", "concentrations tried by the calibration"),
    ("grazing.ladder", "decreasing probe normal velocities"),
    ("validate.trials", "random trials of the Rayleigh check"),
    ("kernel.cache", "operator cache file to load"),
    ("output.dir", "artifact directory"),
    ("run.seed", "seed of randomized checks"),
];

fn type_error(key: &str, expected: &str, value: &toml::Value) -> MilneError {
    MilneError::Config(format!("key `{key}` expects {expected}, got {value}"))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(type_error(key, "a number", v)),
    }
}

fn as_usize(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(type_error(key, "a non-negative integer", v)),
    }
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str().ok_or_else(|| type_error(key, "a string", v))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| type_error(key, "a boolean", v))
}

fn as_list(key: &str, v: &toml::Value) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| type_error(key, "an array of numbers", v))?;
    arr.iter().map(|x| as_f64(key, x)).collect()
}

/// Parses a comma-separated list of numbers (flag syntax).
pub fn parse_list(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| MilneError::Config(format!("`{key}`: `{t}` is not a number")))
        })
        .collect()
}

impl RunConfig {
    /// Sets one dotted key from a TOML value.
    pub fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        match key {
            "grid.v_max" => self.grid.v_max = as_f64(key, v)?,
            "grid.n_rings" => self.grid.n_rings = as_usize(key, v)?,
            "grid.n_theta" => self.grid.n_theta = as_usize(key, v)?,
            "problem.epsilon" => self.problem.epsilon = as_f64(key, v)?,
            "problem.mode" => {
                self.problem.mode = as_str(key, v)?.parse().map_err(|e: MilneError| MilneError::Config(e.to_string()))?
            }
            "data.kind" => self.data.kind = as_str(key, v)?.parse()?,
            "data.basis" => {
                let l = as_list(key, v)?;
                if l.len() != 4 {
                    return Err(MilneError::Config(format!("key `{key}` expects 4 numbers, got {}", l.len())));
                }
                self.data.basis = [l[0], l[1], l[2], l[3]];
            }
            "data.m" => self.data.m = as_f64(key, v)?,
            "data.file" => self.data.file = Some(as_str(key, v)?.to_string()),
            "data.mass_flux" => self.data.mass_flux = as_f64(key, v)?,
            "data.target_c0" => self.data.target_c0 = Some(as_f64(key, v)?),
            "slab.length" => self.slab.length = Some(as_f64(key, v)?),
            "slab.max_doublings" => self.slab.max_doublings = as_usize(key, v)?,
            "slab.d_tol" => self.slab.d_tol = as_f64(key, v)?,
            "slab.tail_fraction" => self.slab.tail_fraction = as_f64(key, v)?,
            "solver.tol" => self.solver.tol = as_f64(key, v)?,
            "solver.max_iters" => self.solver.max_iters = as_usize(key, v)?,
            "solver.method" => {
                self.solver.method = match as_str(key, v)? {
                    "gmres" => SolverMethod::Gmres,
                    "richardson" => SolverMethod::Richardson,
                    s => return Err(MilneError::Config(format!("key `{key}`: unknown method `{s}`"))),
                }
            }
            "compare.epsilons" => self.compare.epsilons = as_list(key, v)?,
            "compare.ns" => self.compare.ns = as_list(key, v)?,
            "compare.calibrate" => self.compare.calibrate = as_bool(key, v)?,
            "compare.max_steps" => self.compare.max_steps = as_usize(key, v)?,
            "grazing.ladder" => self.grazing.ladder = as_list(key, v)?,
            "validate.trials" => self.validate.trials = as_usize(key, v)?,
            "kernel.cache" => self.kernel.cache = Some(as_str(key, v)?.to_string()),
            "output.dir" => self.output.dir = as_str(key, v)?.to_string(),
            "run.seed" => {
                self.run.seed = match v {
                    toml::Value::Integer(i) if *i >= 0 => *i as u64,
                    _ => return Err(type_error(key, "a non-negative integer", v)),
                }
            }
            _ => return Err(MilneError::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a TOML document (flat dotted keys or the equivalent tables).
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text.parse().map_err(|e| MilneError::Config(format!("invalid TOML: {e}")))?;
        let mut flat = Vec::new();
        flatten("", &toml::Value::Table(table), &mut flat);
        for (key, value) in &flat {
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Reads and applies a configuration file.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MilneError::Config(format!("cannot read config file {}: {e}", path.display())))?;
        self.apply_toml(&text)
    }

    /// Serializes to flat dotted-key TOML (round-trips through
    /// [`RunConfig::apply_toml`]).
    pub fn to_toml(&self) -> String {
        let value = toml::Value::try_from(self).expect("configuration serializes");
        let mut flat = Vec::new();
        flatten("", &value, &mut flat);
        let mut out = String::new();
        for (k, v) in flat {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Range checks of every field.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MilneError::Config(m));
        let g = &self.grid;
        if !(g.v_max > 0.0 && g.v_max.is_finite()) {
            return bad(format!("grid.v_max must be positive, got {}", g.v_max));
        }
        if g.n_rings < 4 {
            return bad(format!("grid.n_rings must be at least 4, got {}", g.n_rings));
        }
        if g.n_theta < 8 || g.n_theta % 4 != 0 {
            return bad(format!("grid.n_theta must be a multiple of 4 and at least 8, got {}", g.n_theta));
        }
        ForceField::new(self.problem.epsilon, self.problem.mode)
            .map_err(|e| MilneError::Config(format!("problem.epsilon: {e}")))?;
        let d = &self.data;
        if !(d.m > 0.0 && d.m.is_finite()) {
            return bad(format!("data.m must be positive, got {}", d.m));
        }
        if d.kind == DataKind::File && d.file.is_none() {
            return bad("data.kind = file needs data.file".into());
        }
        if !d.mass_flux.is_finite() || d.basis.iter().any(|b| !b.is_finite()) {
            return bad("data.mass_flux and data.basis must be finite".into());
        }
        let s = &self.slab;
        if let Some(l) = s.length {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("slab.length must be positive, got {l}"));
            }
        }
        if !(s.d_tol > 0.0) || !(s.tail_fraction > 0.0 && s.tail_fraction < 1.0) {
            return bad("slab.d_tol must be positive and slab.tail_fraction in (0, 1)".into());
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iters == 0 {
            return bad("solver.tol must be positive and solver.max_iters at least 1".into());
        }
        let c = &self.compare;
        if c.epsilons.is_empty() || c.ns.is_empty() {
            return bad("compare.epsilons and compare.ns must be non-empty".into());
        }
        for &e in &c.epsilons {
            if !(e > 0.0 && e <= 0.25) {
                return bad(format!("compare.epsilons: {e} outside (0, 1/4]"));
            }
        }
        if c.ns.iter().any(|&n| !(n > 0.0)) {
            return bad("compare.ns must be positive".into());
        }
        if c.max_steps == 0 {
            return bad("compare.max_steps must be at least 1".into());
        }
        let l = &self.grazing.ladder;
        if l.len() < 2 || !l.windows(2).all(|w| w[1] < w[0]) || !(l[0] < 1.0) || !(l[l.len() - 1] > 0.0) {
            return bad(format!("grazing.ladder must decrease strictly inside (0, 1): {l:?}"));
        }
        if self.validate.trials < 10 {
            return bad(format!("validate.trials must be at least 10, got {}", self.validate.trials));
        }
        if self.output.dir.is_empty() {
            return bad("output.dir must not be empty".into());
        }
        Ok(())
    }

    /// Hash of every setting that affects results (the output directory and
    /// the cache path are excluded): the first 16 hex digits of the SHA-256
    /// of the canonical JSON form.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output.dir.clear();
        c.kernel.cache = None;
        let json = serde_json::to_string(&c).expect("configuration serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Artifact directory.
    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.output.dir)
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, toml::Value)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, x) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        _ => out.push((prefix.to_string(), v.clone())),
    }
}
