use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use qtorus::chart::ChartOptions;
use qtorus::expr::{parse, ParamEnv};
use qtorus::spectra::System;
use serde::Deserialize;

/// Run configuration, read from TOML.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// `V(q)`; the Hamiltonian is `p^2/2 + V`.
    pub potential: Option<String>,
    /// Full `H(q, p)`, instead of `potential`.
    pub hamiltonian: Option<String>,
    /// Optional ℏ² term of the Hamiltonian.
    pub m: Option<String>,
    #[serde(default)]
    pub params: std::collections::BTreeMap<String, f64>,
    #[serde(default = "default_hbar")]
    pub hbar: Vec<f64>,
    pub n_range: Option<[usize; 2]>,
    /// Period of the potential; reference levels are then computed on the circle.
    pub period: Option<f64>,
    /// Energy window `[E_min, E_max]`.
    pub window: [f64; 2],
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub mu: MuChoice,
    /// Compare with grid eigenvalues (M must depend on q only).
    #[serde(default = "yes")]
    pub oracle: bool,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub dynamics: DynamicsConfig,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum MuChoice {
    #[default]
    Maslov,
    /// ℏ² offset fitted to the lowest reference level.
    Calibrated,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_tau: Option<usize>,
    pub n_levels: Option<usize>,
    pub jet_order: Option<usize>,
    pub substeps: Option<usize>,
    pub q_center: Option<f64>,
    pub contour_points: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    #[serde(default = "default_torus")]
    pub n: usize,
    /// Modes compared against reference levels.
    #[serde(default = "default_kcmp")]
    pub kmax: usize,
    /// Mode cutoff K of the state.
    #[serde(default = "default_modes")]
    pub modes: usize,
    pub times: Option<Vec<f64>>,
    /// Last time of the log-spaced schedule; defaults to 10/ℏ.
    pub horizon: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_theta")]
    pub theta_points: usize,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig { n: default_torus(), kmax: default_kcmp(), modes: default_modes(), times: None, horizon: None, samples: default_samples(), theta_points: default_theta() }
    }
}

fn default_hbar() -> Vec<f64> {
    vec![0.1]
}
fn default_order() -> usize {
    2
}
fn yes() -> bool {
    true
}
fn default_torus() -> usize {
    8
}
fn default_kcmp() -> usize {
    4
}
fn default_modes() -> usize {
    32
}
fn default_samples() -> usize {
    21
}
fn default_theta() -> usize {
    256
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.potential.is_some() == self.hamiltonian.is_some() {
            bail!("give exactly one of `potential` and `hamiltonian`");
        }
        if !matches!(self.order, 0 | 2 | 4) {
            bail!("order must be 0, 2 or 4, got {}", self.order);
        }
        if self.hbar.is_empty() || self.hbar.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            bail!("hbar values must be positive");
        }
        if !(self.window[1] > self.window[0]) {
            bail!("window must satisfy E_min < E_max");
        }
        if let Some([a, b]) = self.n_range {
            if a > b {
                bail!("n_range [{a}, {b}] is empty");
            }
        }
        Ok(())
    }

    pub fn env(&self) -> ParamEnv {
        let mut env = ParamEnv::new();
        for (k, v) in &self.params {
            env.set(k, *v);
        }
        env
    }

    pub fn hamiltonian_text(&self) -> String {
        match (&self.hamiltonian, &self.potential) {
            (Some(h), _) => h.clone(),
            (None, Some(v)) => format!("p^2/2 + ({v})"),
            (None, None) => unreachable!("validated"),
        }
    }

    /// Chart options; order 4 runs default to a 64 × 24 grid with jets of order 6.
    pub fn chart_options(&self) -> ChartOptions {
        let mut o = ChartOptions::default();
        if self.order >= 4 {
            o.n_tau = 64;
            o.n_levels = 24;
            o.jet_order = 6;
        }
        let g = &self.grid;
        o.n_tau = g.n_tau.unwrap_or(o.n_tau);
        o.n_levels = g.n_levels.unwrap_or(o.n_levels);
        o.jet_order = g.jet_order.unwrap_or(o.jet_order);
        o.substeps = g.substeps.unwrap_or(o.substeps);
        o.q_center = g.q_center.unwrap_or(o.q_center);
        o.contour_points = g.contour_points.unwrap_or(o.contour_points);
        o
    }

    pub fn system(&self) -> Result<System> {
        let h0 = parse(&self.hamiltonian_text()).context("hamiltonian")?;
        let m = self.m.as_deref().map(parse).transpose().context("m")?;
        Ok(System { name: self.name.clone(), h0, m, env: self.env(), window: (self.window[0], self.window[1]), chart: self.chart_options(), period: self.period })
    }
}

/// Built-in quartic oscillator used when `verify` runs without a config.
pub fn default_quartic() -> RunConfig {
    toml::from_str(
        r#"
name = "quartic"
potential = "q^2/2 + lambda*q^4"
params = { lambda = 0.1 }
window = [0.0, 2.0]
hbar = [0.1]
order = 4
"#,
    )
    .expect("built-in config parses")
}
