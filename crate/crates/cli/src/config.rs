//! INI configuration: `[scenario]`, `[params]`, `[diag]` and `[pipeline]`
//! sections of flat `key = value` pairs.

use crate::error::{CliError, CliResult};
use cmanifold::scenario::{AmbientSpec, Generator, ScenarioSpec};
use cmanifold::whitney::Params;
use ini::Ini;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Debug, Serialize)]
pub struct DiagConfig {
    pub seed: u64,
    pub harmonic_samples: usize,
    pub harmonic_degree: u32,
    pub harmonic_dims: Vec<usize>,
    pub interp_samples: usize,
    pub interp_dims: Vec<usize>,
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig {
            seed: 0,
            harmonic_samples: 100,
            harmonic_degree: 5,
            harmonic_dims: vec![2, 3],
            interp_samples: 12,
            interp_dims: vec![1, 2],
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineConfig {
    /// Worker threads; zero lets the pool decide.
    pub threads: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Config {
    pub scenario: ScenarioSpec,
    pub params: Params,
    pub diag: DiagConfig,
    pub pipeline: PipelineConfig,
    /// SHA-256 of the config text as read.
    pub sha256: String,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub grid: Option<usize>,
    pub max_level: Option<u32>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

const SECTIONS: [&str; 4] = ["scenario", "params", "diag", "pipeline"];

struct Section {
    name: &'static str,
    values: BTreeMap<String, String>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Config(format!("[{}] {key} = {v:?} is not a valid value", self.name))),
        }
    }

    fn f64_or(&mut self, key: &str, default: f64) -> CliResult<f64> {
        Ok(self.parse(key)?.unwrap_or(default))
    }

    fn list(&mut self, key: &str) -> CliResult<Option<Vec<usize>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| CliError::Config(format!("[{}] {key} = {v:?} is not a comma-separated list", self.name))),
        }
    }

    fn finish(self) -> CliResult<()> {
        if let Some(k) = self.values.keys().next() {
            return Err(CliError::Config(format!("unknown key [{}] {k}", self.name)));
        }
        Ok(())
    }
}

fn generator(s: &mut Section) -> CliResult<Generator> {
    let name = s.take("generator").ok_or_else(|| CliError::Config("[scenario] generator is required".into()))?;
    Ok(match name.as_str() {
        "flat_q" => Generator::FlatQ { c: s.f64_or("c", 0.0)? },
        "parallel_sheets" => Generator::ParallelSheets {
            d: s.f64_or("d", 0.1)?,
            amplitude: s.f64_or("amplitude", 0.0)?,
            frequency: s.f64_or("frequency", 1.0)?,
        },
        "linear_tilt" => Generator::LinearTilt { eps: s.f64_or("eps", 0.1)? },
        "sinusoid" => {
            Generator::Sinusoid { amplitude: s.f64_or("amplitude", 0.05)?, frequency: s.f64_or("frequency", 1.0)? }
        }
        "tilted_pair" => Generator::TiltedPair { eps: s.f64_or("eps", 0.1)? },
        "branch32" => Generator::Branch32 { c: s.f64_or("c", 0.01)? },
        "paper_curve" => Generator::PaperCurve {
            cut: s.f64_or("cut", std::f64::consts::PI)?,
            zoom: s.f64_or("zoom", 0.05)?,
            saturate: s.f64_or("saturate", 4.0)?,
        },
        other => return Err(CliError::Config(format!("unknown generator {other:?}"))),
    })
}

fn ambient(s: &mut Section) -> CliResult<AmbientSpec> {
    let kind = s.take("ambient").unwrap_or_else(|| "flat".into());
    Ok(match kind.as_str() {
        "flat" => AmbientSpec::Flat,
        "linear" => AmbientSpec::Linear { slope: s.f64_or("ambient_slope", 0.1)? },
        "quadratic" => AmbientSpec::Quadratic { curvature: s.f64_or("ambient_curvature", 0.1)? },
        other => return Err(CliError::Config(format!("unknown ambient mode {other:?}"))),
    })
}

fn params(s: &mut Section, m: usize, max_level: Option<u32>) -> CliResult<Params> {
    let mut p = Params::for_dim(m);
    p.gamma1 = s.f64_or("gamma1", p.gamma1)?;
    p.epsilon0 = s.f64_or("epsilon0", p.epsilon0)?;
    p.m0_cube = s.f64_or("m0_cube", p.m0_cube)?;
    p.n0 = s.parse("n0")?.unwrap_or(p.n0);
    p.c_e = s.f64_or("c_e", p.c_e)?;
    p.c_h = s.f64_or("c_h", p.c_h)?;
    p.j_max = max_level.or(s.parse("j_max")?).unwrap_or(p.j_max);
    p.tie_tol = s.f64_or("tie_tol", p.tie_tol)?;
    p.c0 = s.f64_or("c0", p.c0)?;
    p.c_flat = s.f64_or("c_flat", p.c_flat)?;
    p.c_stripe = s.f64_or("c_stripe", p.c_stripe)?;
    p.ball_factor = match s.parse("ball_factor")? {
        Some(v) => v,
        None => (100.0 / (p.m0_cube * (m as f64).sqrt() * 2f64.powi(1 - p.n0 as i32))).floor() / 100.0,
    };
    p.derive(m);
    // Explicit derived constants are kept as given and must satisfy the
    // defining relations.
    if let Some(v) = s.parse("beta2")? {
        p.beta2 = v;
    }
    if let Some(v) = s.parse("delta2")? {
        p.delta2 = v;
    }
    if let Some(v) = s.parse("kappa")? {
        p.kappa = v;
    }
    if let Some(v) = s.parse("gamma2")? {
        p.gamma2 = v;
    }
    p.validate(m)?;
    Ok(p)
}

impl Config {
    pub fn load(path: &Path, ov: &Overrides) -> CliResult<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::parse(&text, ov)
    }

    pub fn parse(text: &str, ov: &Overrides) -> CliResult<Config> {
        let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(format!("malformed config: {e}")))?;
        let mut sections: BTreeMap<&'static str, Section> =
            SECTIONS.iter().map(|&n| (n, Section { name: n, values: BTreeMap::new() })).collect();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if props.iter().next().is_some() {
                    return Err(CliError::Config("keys outside a section".into()));
                }
                continue;
            };
            let sec = sections
                .get_mut(name)
                .ok_or_else(|| CliError::Config(format!("unknown section [{name}]")))?;
            for (k, v) in props.iter() {
                sec.values.insert(k.to_string(), v.to_string());
            }
        }
        let mut sc = sections.remove("scenario").expect("known section");
        let gen = generator(&mut sc)?;
        let m = sc.parse("m")?.unwrap_or(2);
        let default_q = match gen {
            Generator::LinearTilt { .. } | Generator::Sinusoid { .. } => 1,
            _ => 2,
        };
        let default_nbar = match gen {
            Generator::Branch32 { .. } | Generator::PaperCurve { .. } => 2,
            _ => 1,
        };
        let scenario = ScenarioSpec {
            m,
            n_bar: sc.parse("n_bar")?.unwrap_or(default_nbar),
            q: sc.parse("q")?.unwrap_or(default_q),
            cells: { let g = sc.parse("grid")?; ov.grid.or(g).unwrap_or(256) },
            ambient: ambient(&mut sc)?,
            generator: gen,
        };
        sc.finish()?;
        scenario.validate()?;

        let mut ps = sections.remove("params").expect("known section");
        let params = params(&mut ps, m, ov.max_level)?;
        ps.finish()?;

        let mut ds = sections.remove("diag").expect("known section");
        let d0 = DiagConfig::default();
        let diag = DiagConfig {
            seed: { let s = ds.parse("seed")?; ov.seed.or(s).unwrap_or(d0.seed) },
            harmonic_samples: ds.parse("harmonic_samples")?.unwrap_or(d0.harmonic_samples),
            harmonic_degree: ds.parse("harmonic_degree")?.unwrap_or(d0.harmonic_degree),
            harmonic_dims: ds.list("harmonic_dims")?.unwrap_or(d0.harmonic_dims),
            interp_samples: ds.parse("interp_samples")?.unwrap_or(d0.interp_samples),
            interp_dims: ds.list("interp_dims")?.unwrap_or(d0.interp_dims),
        };
        ds.finish()?;

        let mut pl = sections.remove("pipeline").expect("known section");
        let pipeline =
            { let t = pl.parse("threads")?; PipelineConfig { threads: ov.threads.or(t).unwrap_or(0) } };
        pl.finish()?;

        let sha256 = format!("{:x}", Sha256::digest(text.as_bytes()));
        Ok(Config { scenario, params, diag, pipeline, sha256 })
    }
}
