//! Run configuration: a small sectioned key = value format.
//!
//! Sections: [domain] (nx, ny, lx, ly), [physics] (epsilon, delta, beta,
//! kappa0, kappa1, nu0, nu1, lambda, M, gamma, p_reg), [scheme] (dt, t_end,
//! linear_tol, div_tol, snapshot_every, seed, isothermal), [ic] (kind plus
//! kind-specific keys). Unknown sections or keys are hard errors so typos
//! cannot silently fall back to defaults. `#` starts a comment.

use crate::grid::Grid;
use crate::thermo::Params;
use crate::Error;
use std::path::PathBuf;

/// Time-stepping and tolerance controls.
#[derive(Clone, Debug)]
pub struct SchemeControls {
    pub dt: f64,
    pub t_end: f64,
    /// Relative residual target for every linear solve.
    pub linear_tol: f64,
    /// Hard ceiling on the post-projection divergence norm.
    pub div_tol: f64,
    /// Snapshot cadence in steps; 0 writes only the initial and final state.
    pub snapshot_every: usize,
    pub seed: u64,
    /// Freeze the temperature and run only phase + momentum (the free
    /// energy is then non-increasing step by step).
    pub isothermal: bool,
}

impl Default for SchemeControls {
    fn default() -> Self {
        SchemeControls {
            dt: 1e-3,
            t_end: 0.5,
            linear_tol: 1e-10,
            div_tol: 1e-8,
            snapshot_every: 100,
            seed: 42,
            isothermal: false,
        }
    }
}

/// Initial condition recipes.
#[derive(Clone, Debug)]
pub enum IcSpec {
    /// Constant phase and temperature, zero velocity.
    Uniform { phi0: f64, theta0: f64 },
    /// Band-limited random perturbation of size about `amp` on the phase
    /// around `phi0` (spinodal start), constant temperature, zero velocity.
    RandomPhi { phi0: f64, amp: f64, theta0: f64 },
    /// Smooth cosine-mode scalars (wall-flat, matching the Neumann walls)
    /// and a sine-mode velocity that is projected at startup.
    Manufactured {
        phi0: f64,
        amp: f64,
        theta0: f64,
        theta_amp: f64,
        u_amp: f64,
    },
    /// Resume from snapshot files `<field>_<step>.dat` in a directory.
    File { path: PathBuf, step: usize },
}

impl Default for IcSpec {
    fn default() -> Self {
        IcSpec::RandomPhi {
            phi0: 0.0,
            amp: 0.05,
            theta0: 1.0,
        }
    }
}

/// Complete run description.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub params: Params,
    pub scheme: SchemeControls,
    pub ic: IcSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            nx: 64,
            ny: 64,
            lx: 1.0,
            ly: 1.0,
            params: Params::default(),
            scheme: SchemeControls::default(),
            ic: IcSpec::default(),
        }
    }
}

#[derive(Default)]
struct IcDraft {
    kind: Option<String>,
    phi0: f64,
    amp: f64,
    theta0: f64,
    theta_amp: f64,
    u_amp: f64,
    path: Option<PathBuf>,
    step: usize,
}

impl SimConfig {
    pub fn from_file(path: &std::path::Path) -> Result<SimConfig, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        SimConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<SimConfig, Error> {
        let mut cfg = SimConfig::default();
        let mut ic = IcDraft {
            phi0: 0.0,
            amp: 0.05,
            theta0: 1.0,
            theta_amp: 0.1,
            u_amp: 1.0,
            ..IcDraft::default()
        };
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config(format!("line {}: {msg}", lineno + 1));
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("malformed section header `{line}`")))?;
                match name {
                    "domain" | "physics" | "scheme" | "ic" => section = name.to_string(),
                    other => return Err(err(format!("unknown section `[{other}]`"))),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            let f = || -> Result<f64, Error> {
                value
                    .parse::<f64>()
                    .map_err(|_| err(format!("`{key}` needs a number, got `{value}`")))
            };
            let u = || -> Result<usize, Error> {
                value
                    .parse::<usize>()
                    .map_err(|_| err(format!("`{key}` needs a nonnegative integer, got `{value}`")))
            };
            match (section.as_str(), key) {
                ("domain", "nx") => cfg.nx = u()?,
                ("domain", "ny") => cfg.ny = u()?,
                ("domain", "lx") => cfg.lx = f()?,
                ("domain", "ly") => cfg.ly = f()?,
                ("physics", "epsilon") => cfg.params.epsilon = f()?,
                ("physics", "delta") => cfg.params.delta = f()?,
                ("physics", "beta") => cfg.params.beta = f()?,
                ("physics", "kappa0") => cfg.params.kappa0 = f()?,
                ("physics", "kappa1") => cfg.params.kappa1 = f()?,
                ("physics", "nu0") => cfg.params.nu0 = f()?,
                ("physics", "nu1") => cfg.params.nu1 = f()?,
                ("physics", "lambda") => cfg.params.lambda = f()?,
                ("physics", "M") => {
                    cfg.params.m_dual = if value == "auto" { None } else { Some(f()?) }
                }
                ("physics", "gamma") => cfg.params.gamma = f()?,
                ("physics", "p_reg") => cfg.params.p_reg = f()?,
                ("scheme", "dt") => cfg.scheme.dt = f()?,
                ("scheme", "t_end") => cfg.scheme.t_end = f()?,
                ("scheme", "linear_tol") => cfg.scheme.linear_tol = f()?,
                ("scheme", "div_tol") => cfg.scheme.div_tol = f()?,
                ("scheme", "snapshot_every") => cfg.scheme.snapshot_every = u()?,
                ("scheme", "seed") => {
                    cfg.scheme.seed = value
                        .parse::<u64>()
                        .map_err(|_| err(format!("`seed` needs an integer, got `{value}`")))?
                }
                ("scheme", "isothermal") => {
                    cfg.scheme.isothermal = match value {
                        "true" => true,
                        "false" => false,
                        _ => {
                            return Err(err(format!(
                                "`isothermal` needs true or false, got `{value}`"
                            )))
                        }
                    }
                }
                ("ic", "kind") => ic.kind = Some(value.to_string()),
                ("ic", "phi0") => ic.phi0 = f()?,
                ("ic", "amp") => ic.amp = f()?,
                ("ic", "theta0") => ic.theta0 = f()?,
                ("ic", "theta_amp") => ic.theta_amp = f()?,
                ("ic", "u_amp") => ic.u_amp = f()?,
                ("ic", "path") => ic.path = Some(PathBuf::from(value)),
                ("ic", "step") => ic.step = u()?,
                ("", k) => return Err(err(format!("key `{k}` before any [section]"))),
                (s, k) => return Err(err(format!("unknown key `{k}` in section [{s}]"))),
            }
        }
        cfg.ic = match ic.kind.as_deref().unwrap_or("random_phi") {
            "uniform" => IcSpec::Uniform {
                phi0: ic.phi0,
                theta0: ic.theta0,
            },
            "random_phi" => IcSpec::RandomPhi {
                phi0: ic.phi0,
                amp: ic.amp,
                theta0: ic.theta0,
            },
            "manufactured" => IcSpec::Manufactured {
                phi0: ic.phi0,
                amp: ic.amp,
                theta0: ic.theta0,
                theta_amp: ic.theta_amp,
                u_amp: ic.u_amp,
            },
            "file" => IcSpec::File {
                path: ic.path.ok_or_else(|| {
                    Error::Config("ic kind `file` needs a `path` key".to_string())
                })?,
                step: ic.step,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown ic kind `{other}` (expected uniform, random_phi, manufactured, file)"
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Grid, Error> {
        Grid::new(self.nx, self.ny, self.lx, self.ly)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.grid()?;
        self.params.validate()?;
        let s = &self.scheme;
        if !(s.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", s.dt)));
        }
        if !(s.t_end >= 0.0) {
            return Err(Error::Config(format!(
                "t_end must be nonnegative, got {}",
                s.t_end
            )));
        }
        if !(s.linear_tol > 0.0) || !(s.div_tol > 0.0) {
            return Err(Error::Config(format!(
                "tolerances must be positive, got linear_tol = {}, div_tol = {}",
                s.linear_tol, s.div_tol
            )));
        }
        match &self.ic {
            IcSpec::Uniform { theta0, .. } | IcSpec::RandomPhi { theta0, .. } => {
                if !(*theta0 > 0.0) {
                    return Err(Error::Config(format!(
                        "initial temperature must be positive, got {theta0}"
                    )));
                }
            }
            IcSpec::Manufactured {
                theta0, theta_amp, ..
            } => {
                if !(*theta0 - theta_amp.abs() > 0.0) {
                    return Err(Error::Config(format!(
                        "manufactured temperature can reach {}, must stay positive",
                        theta0 - theta_amp.abs()
                    )));
                }
            }
            IcSpec::File { .. } => {}
        }
        Ok(())
    }

    /// The same run at `factor` times the resolution: cell counts scaled up,
    /// the step size scaled down, everything else (including the seed)
    /// unchanged.
    pub fn refined(&self, factor: usize) -> SimConfig {
        let mut c = self.clone();
        c.nx *= factor;
        c.ny *= factor;
        c.scheme.dt /= factor as f64;
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_full_config() {
        let text = "
# comment
[domain]
nx = 32
ny = 16
lx = 2.0
[physics]
epsilon = 0.1
delta = 0.25
beta = 0.8
M = 3.5
[scheme]
dt = 5e-4
t_end = 0.1
seed = 7
isothermal = true
[ic]
kind = manufactured
theta0 = 2.0
theta_amp = 0.5
u_amp = 0.3
";
        let cfg = SimConfig::parse(text).unwrap();
        assert_eq!(cfg.nx, 32);
        assert_eq!(cfg.ny, 16);
        assert_eq!(cfg.lx, 2.0);
        assert_eq!(cfg.ly, 1.0);
        assert_eq!(cfg.params.delta, 0.25);
        assert_eq!(cfg.params.m_dual, Some(3.5));
        assert_eq!(cfg.scheme.seed, 7);
        assert!(cfg.scheme.isothermal);
        match cfg.ic {
            IcSpec::Manufactured {
                theta0, theta_amp, ..
            } => {
                assert_eq!(theta0, 2.0);
                assert_eq!(theta_amp, 0.5);
            }
            other => panic!("wrong ic: {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_key_and_section() {
        assert!(SimConfig::parse("[domain]\nnz = 3\n").is_err());
        assert!(SimConfig::parse("[fluid]\nnu = 3\n").is_err());
        assert!(SimConfig::parse("nx = 3\n").is_err());
    }

    #[test]
    fn rejects_invalid_windows_via_params() {
        let text = "[physics]\ndelta = 0.6\nbeta = 1.5\n";
        assert!(SimConfig::parse(text).is_err());
    }

    #[test]
    fn refinement_scales_counts_and_dt() {
        let c = SimConfig::default().refined(4);
        assert_eq!(c.nx, 256);
        assert!((c.scheme.dt - 2.5e-4).abs() < 1e-18);
    }
}
