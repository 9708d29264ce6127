//! Run configuration as flat `key=value` text.

use std::path::PathBuf;
use std::str::FromStr;

use crate::acquisition::AcqMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Bljes,
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bljes => "bljes",
            Method::Random => "random",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bljes" => Ok(Method::Bljes),
            "random" => Ok(Method::Random),
            other => Err(Error::Usage(format!("unknown method `{other}` (bljes|random)"))),
        }
    }
}

pub fn mode_name(mode: AcqMode) -> &'static str {
    match mode {
        AcqMode::Coupled => "coupled",
        AcqMode::Decoupled => "decoupled",
        AcqMode::Constrained => "constrained",
    }
}

pub fn parse_mode(s: &str) -> Result<AcqMode> {
    match s.to_ascii_lowercase().as_str() {
        "coupled" => Ok(AcqMode::Coupled),
        "decoupled" => Ok(AcqMode::Decoupled),
        "constrained" => Ok(AcqMode::Constrained),
        other => Err(Error::Usage(format!(
            "unknown mode `{other}` (coupled|decoupled|constrained)"
        ))),
    }
}

/// Where queries live: the problem's finite pool or the whole unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainMode {
    Pool,
    Continuous,
}

impl DomainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainMode::Pool => "pool",
            DomainMode::Continuous => "continuous",
        }
    }
}

impl FromStr for DomainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pool" => Ok(DomainMode::Pool),
            "continuous" => Ok(DomainMode::Continuous),
            other => Err(Error::Usage(format!("unknown domain `{other}` (pool|continuous)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Problem name with optional parameters, `gp-prior:lU=0.25,lL=0.25`.
    pub problem: String,
    pub method: Method,
    pub mode: AcqMode,
    pub iterations: usize,
    pub n0: usize,
    pub k_samples: usize,
    pub rff_dim: usize,
    pub noise_std_f: f64,
    pub noise_std_g: f64,
    pub seeds: Vec<u64>,
    pub domain: DomainMode,
    /// Pool points per dimension, overriding the problem's default.
    pub grid: Option<usize>,
    pub shared_map: bool,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            problem: "gp-prior:lU=0.25,lL=0.25".into(),
            method: Method::Bljes,
            mode: AcqMode::Coupled,
            iterations: 100,
            n0: 5,
            k_samples: 30,
            rff_dim: 1000,
            noise_std_f: 1e-3,
            noise_std_g: 1e-3,
            seeds: (0..10).collect(),
            domain: DomainMode::Pool,
            grid: None,
            shared_map: false,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Usage(format!("cannot parse `{key}` value `{value}`")))
}

/// Seeds as a count (`10` means 0..10), a half-open range (`3..7`) or a
/// comma list (`1,4,9`).
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (num("seeds", a.trim())?, num("seeds", b.trim())?);
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| num("seeds", p))
            .collect();
    }
    let n: u64 = num("seeds", s)?;
    Ok((0..n).collect())
}

fn format_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Usage(format!("`{key}` expects true or false, got `{v}`"))),
    }
}

impl RunConfig {
    /// Sets one key. Dashes and underscores are interchangeable, and CLI
    /// flag spellings (`iters`, `k-samples`, `out`) are accepted.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "problem" => self.problem = v.to_string(),
            "method" => self.method = v.parse()?,
            "mode" => self.mode = parse_mode(v)?,
            "iters" | "iterations" => self.iterations = num(&key, v)?,
            "n0" => self.n0 = num(&key, v)?,
            "k_samples" | "k" => self.k_samples = num(&key, v)?,
            "rff_dim" => self.rff_dim = num(&key, v)?,
            "noise_std" => {
                self.noise_std_f = num(&key, v)?;
                self.noise_std_g = self.noise_std_f;
            }
            "noise_std_f" => self.noise_std_f = num(&key, v)?,
            "noise_std_g" => self.noise_std_g = num(&key, v)?,
            "seeds" => self.seeds = parse_seeds(v)?,
            "domain" | "domain_mode" => self.domain = v.parse()?,
            "grid" => self.grid = Some(num(&key, v)?),
            "shared_map" => self.shared_map = parse_bool(&key, v)?,
            "out" | "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(Error::Usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a config file body on top of `self`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("line {}: expected key=value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Usage(m.to_string()));
        if self.iterations < 1 {
            return bad("iterations must be at least 1");
        }
        if self.n0 < 1 {
            return bad("n0 must be at least 1");
        }
        if self.k_samples < 1 {
            return bad("k_samples must be at least 1");
        }
        if self.rff_dim < 1 {
            return bad("rff_dim must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if !(self.noise_std_f >= 0.0 && self.noise_std_g >= 0.0)
            || !(self.noise_std_f.is_finite() && self.noise_std_g.is_finite())
        {
            return bad("noise standard deviations must be finite and non-negative");
        }
        if self.grid == Some(0) {
            return bad("grid must be at least 1");
        }
        if self.domain == DomainMode::Continuous && self.mode == AcqMode::Constrained {
            return bad("constrained mode is pool-only");
        }
        Ok(())
    }

    /// Every setting as `key=value` lines, in a fixed order, readable back
    /// by [`RunConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            s.push_str(&k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e = vec![
            ("problem", self.problem.clone()),
            ("method", self.method.as_str().to_string()),
            ("mode", mode_name(self.mode).to_string()),
            ("iterations", self.iterations.to_string()),
            ("n0", self.n0.to_string()),
            ("k_samples", self.k_samples.to_string()),
            ("rff_dim", self.rff_dim.to_string()),
            ("noise_std_f", self.noise_std_f.to_string()),
            ("noise_std_g", self.noise_std_g.to_string()),
            ("seeds", format_seeds(&self.seeds)),
            ("domain", self.domain.as_str().to_string()),
            ("shared_map", self.shared_map.to_string()),
            ("out", self.output_dir.display().to_string()),
        ];
        if let Some(g) = self.grid {
            e.push(("grid", g.to_string()));
        }
        e.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_experimental_protocol() {
        let c = RunConfig::default();
        assert_eq!((c.n0, c.k_samples, c.iterations, c.rff_dim), (5, 30, 100, 1000));
        assert_eq!((c.noise_std_f, c.noise_std_g), (1e-3, 1e-3));
        c.validate().unwrap();
    }

    #[test]
    fn parses_file_and_round_trips() {
        let text = "# a comment\nproblem = bg\nmethod=random\nmode=decoupled\niters=7\n\nseeds=2..5\nk-samples=12\nnoise_std=0.01\ngrid=20\nshared_map=yes\n";
        let c = RunConfig::from_text(text).unwrap();
        assert_eq!(c.problem, "bg");
        assert_eq!(c.method, Method::Random);
        assert_eq!(c.mode, AcqMode::Decoupled);
        assert_eq!(c.seeds, vec![2, 3, 4]);
        assert_eq!((c.iterations, c.k_samples, c.grid), (7, 12, Some(20)));
        assert_eq!((c.noise_std_f, c.noise_std_g), (0.01, 0.01));
        assert!(c.shared_map);
        assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn problem_value_keeps_its_parameters() {
        let c = RunConfig::from_text("problem=gp-prior:lU=0.1,lL=0.5,seed=3").unwrap();
        assert_eq!(c.problem, "gp-prior:lU=0.1,lL=0.5,seed=3");
    }

    #[test]
    fn seeds_forms() {
        assert_eq!(parse_seeds("3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("4,1").unwrap(), vec![4, 1]);
        assert_eq!(parse_seeds("7..8").unwrap(), vec![7]);
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_text("iters=0").is_err());
        assert!(RunConfig::from_text("colour=blue").is_err());
        assert!(RunConfig::from_text("just words").is_err());
        assert!(RunConfig::from_text("seeds=0").is_err());
        assert!(RunConfig::from_text("mode=constrained\ndomain=continuous").is_err());
        assert!(RunConfig::from_text("noise_std=-1").is_err());
    }
}
