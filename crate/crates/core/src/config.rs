//! Run configuration: a flat `key = value` text file with dotted keys.
//!
//! Numbers accept `a^b` powers (`2^-20`), lists are comma separated, `#`
//! starts a comment. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{Grid, Node};
use crate::multiindex::Grading;

/// Environment variable overriding `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "MIRS_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub uv: f64,
    pub counterterm: f64,
    pub cw01: f64,
    pub cw02: f64,
    pub dual: f64,
    pub mt94: f64,
    pub ks93: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            uv: 0.05,
            counterterm: 0.1,
            cw01: 0.15,
            cw02: 0.05,
            dual: 0.05,
            mt94: 0.1,
            ks93: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Config {
    pub alpha: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub grid: Grid,
    /// Mollification scale for model builds.
    pub model_tau: f64,
    /// Dyadic τ scan for the UV and counterterm series.
    pub tau: Vec<f64>,
    pub cutoff: f64,
    pub samples: usize,
    /// Sample count for fourth moments.
    pub samples_fourth: usize,
    pub seed: u64,
    pub p: Vec<u32>,
    /// Semigroup times for the small-scale series at `y = x`.
    pub t: Vec<f64>,
    /// Carnot distances for the spatial series.
    pub scales: Vec<f64>,
    pub base_points: Vec<Node>,
    /// Validity window radius (Carnot); clips re-expansion fits.
    pub window: f64,
    pub fit_radius_factor: f64,
    pub fit_threshold: f64,
    /// BPHZ smoothing time; `None` means `t_max / 4`.
    pub t_bphz: Option<f64>,
    pub tol: Tolerances,
    pub output_dir: PathBuf,
}

fn pow2(e: i32) -> f64 {
    2f64.powi(e)
}

impl Default for Config {
    fn default() -> Self {
        let grid = Grid::default();
        Config {
            alpha: 0.5,
            epsilon: Grading::DEFAULT_EPSILON,
            lambda: 0.25,
            grid,
            model_tau: pow2(-21),
            tau: vec![pow2(-22), pow2(-21), pow2(-20), pow2(-19)],
            cutoff: 1.6,
            samples: 1024,
            samples_fourth: 4096,
            seed: 1,
            p: vec![2],
            t: vec![pow2(-16), pow2(-14), pow2(-12), pow2(-10), pow2(-8)],
            scales: vec![pow2(-5), pow2(-4), pow2(-3), pow2(-2)],
            base_points: default_base_points(&grid),
            window: grid.l1.min(grid.l2.sqrt()) / 8.0,
            fit_radius_factor: 2.0,
            fit_threshold: 0.25,
            t_bphz: None,
            tol: Tolerances::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Four nodes spread over the torus.
pub fn default_base_points(g: &Grid) -> Vec<Node> {
    vec![
        Node::new(0, 0),
        Node::new(g.n1 / 2, g.n2 / 4),
        Node::new(g.n1 / 4, g.n2 / 2),
        Node::new(3 * g.n1 / 4, 3 * g.n2 / 4),
    ]
}

/// Parses `2^-20`, `1e-3`, `0.5`.
pub fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a number: {s:?}"));
    if let Some((b, e)) = s.split_once('^') {
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        let e: f64 = e.trim().parse().map_err(|_| bad())?;
        return Ok(b.powf(e));
    }
    s.parse().map_err(|_| bad())
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').filter(|x| !x.trim().is_empty()).map(parse_number).collect()
}

fn parse_uint(s: &str) -> Result<u64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("not a nonnegative integer: {s:?}")))
}

fn parse_node(s: &str) -> Result<Node> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Parse(format!("base point must be i1:i2, got {s:?}")))?;
    Ok(Node::new(parse_uint(a)? as usize, parse_uint(b)? as usize))
}

impl Config {
    pub fn grading(&self) -> Grading {
        Grading {
            alpha: self.alpha,
            epsilon: self.epsilon,
            lambda: self.lambda,
        }
    }

    pub fn t_bphz(&self) -> f64 {
        self.t_bphz
            .unwrap_or_else(|| crate::model::CalibrationOptions::default_t_bphz(&self.grid))
    }

    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Config> {
        let mut c = Config::default();
        let mut base_points_set = false;
        let mut lambda_set = false;
        let mut window_set = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = |e: Error| Error::Config(format!("line {} ({key}): {e}", lineno + 1));
            match key {
                "alpha" => c.alpha = parse_number(value).map_err(ctx)?,
                "epsilon" => c.epsilon = parse_number(value).map_err(ctx)?,
                "lambda" => {
                    c.lambda = parse_number(value).map_err(ctx)?;
                    lambda_set = true;
                }
                "grid.n1" => c.grid.n1 = parse_uint(value).map_err(ctx)? as usize,
                "grid.n2" => c.grid.n2 = parse_uint(value).map_err(ctx)? as usize,
                "grid.l1" => c.grid.l1 = parse_number(value).map_err(ctx)?,
                "grid.l2" => c.grid.l2 = parse_number(value).map_err(ctx)?,
                "model.tau" => c.model_tau = parse_number(value).map_err(ctx)?,
                "tau" => c.tau = parse_list(value).map_err(ctx)?,
                "truncation.cutoff" => c.cutoff = parse_number(value).map_err(ctx)?,
                "samples" => c.samples = parse_uint(value).map_err(ctx)? as usize,
                "samples.fourth" => c.samples_fourth = parse_uint(value).map_err(ctx)? as usize,
                "seed" => c.seed = parse_uint(value).map_err(ctx)?,
                "p" => {
                    c.p = value
                        .split(',')
                        .map(|v| parse_uint(v).map(|x| x as u32))
                        .collect::<Result<_>>()
                        .map_err(ctx)?
                }
                "t" => c.t = parse_list(value).map_err(ctx)?,
                "scales" => c.scales = parse_list(value).map_err(ctx)?,
                "base_points" => {
                    c.base_points = value.split(',').map(parse_node).collect::<Result<_>>().map_err(ctx)?;
                    base_points_set = true;
                }
                "window" => {
                    c.window = parse_number(value).map_err(ctx)?;
                    window_set = true;
                }
                "fit.radius_factor" => c.fit_radius_factor = parse_number(value).map_err(ctx)?,
                "fit.threshold" => c.fit_threshold = parse_number(value).map_err(ctx)?,
                "bphz.t" => c.t_bphz = Some(parse_number(value).map_err(ctx)?),
                "tol.uv" => c.tol.uv = parse_number(value).map_err(ctx)?,
                "tol.counterterm" => c.tol.counterterm = parse_number(value).map_err(ctx)?,
                "tol.cw01" => c.tol.cw01 = parse_number(value).map_err(ctx)?,
                "tol.cw02" => c.tol.cw02 = parse_number(value).map_err(ctx)?,
                "tol.dual" => c.tol.dual = parse_number(value).map_err(ctx)?,
                "tol.mt94" => c.tol.mt94 = parse_number(value).map_err(ctx)?,
                "tol.ks93" => c.tol.ks93 = parse_number(value).map_err(ctx)?,
                "output.dir" => c.output_dir = PathBuf::from(value),
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", lineno + 1))),
            }
        }
        if !lambda_set {
            c.lambda = c.alpha / 2.0;
        }
        if !base_points_set {
            c.base_points = default_base_points(&c.grid);
        }
        if !window_set {
            c.window = c.grid.l1.min(c.grid.l2.sqrt()) / 8.0;
        }
        c.validate()?;
        Ok(c)
    }

    /// Applies the output directory override from the environment.
    pub fn with_env_overrides(mut self) -> Config {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.alpha > 0.25 && self.alpha < 1.0) {
            return cfg(format!("alpha = {} outside (0.25, 1)", self.alpha));
        }
        if !(self.lambda > 0.0 && self.lambda < self.alpha) {
            return cfg(format!("lambda = {} outside (0, alpha)", self.lambda));
        }
        self.grading().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.grid.validate().map_err(|e| Error::Config(e.to_string()))?;
        let max_window = self.grid.l1.min(self.grid.l2.sqrt()) / 8.0;
        if !(self.window > 0.0 && self.window <= max_window * (1.0 + 1e-12)) {
            return cfg(format!("window = {} outside (0, L/8 = {max_window}]", self.window));
        }
        let floor = self.grid.resolved_tau_floor();
        for &t in self.tau.iter().chain(std::iter::once(&self.model_tau)) {
            if t < floor {
                return cfg(format!("tau = {t:e} below the resolved floor {floor:e}"));
            }
        }
        if self.p.iter().any(|p| *p != 2 && *p != 4) {
            return cfg("p must be 2 or 4".into());
        }
        if self.cutoff <= 0.0 {
            return cfg("truncation.cutoff must be positive".into());
        }
        if self.samples == 0 || self.samples_fourth == 0 {
            return cfg("sample counts must be positive".into());
        }
        for b in &self.base_points {
            if b.i1 >= self.grid.n1 || b.i2 >= self.grid.n2 {
                return cfg(format!("base point {}:{} outside the grid", b.i1, b.i2));
            }
        }
        if self.base_points.is_empty() {
            return cfg("at least one base point is required".into());
        }
        if self.scales.iter().chain(&self.t).chain(&self.tau).any(|v| !(*v > 0.0)) {
            return cfg("scales, t and tau must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_powers_and_lists() {
        let c = Config::parse("alpha = 0.6\ntau = 2^-21, 2^-20 # comment\ngrid.n1=32\ngrid.n2=1024\nbase_points = 1:2, 3:4\n").unwrap();
        assert_eq!(c.alpha, 0.6);
        assert_eq!(c.lambda, 0.3);
        assert_eq!(c.tau, vec![2f64.powi(-21), 2f64.powi(-20)]);
        assert_eq!(c.base_points, vec![Node::new(1, 2), Node::new(3, 4)]);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(Config::parse("colour = red"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("alpha = 0.2"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("lambda = 0.7"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("window = 0.5"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("tau = 1e-12"), Err(Error::Config(_))));
        assert!(matches!(Config::parse("alpha"), Err(Error::Config(_))));
    }
}
