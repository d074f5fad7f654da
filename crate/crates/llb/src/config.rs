//! Batch-run configuration: a small sectioned key-value format.
//!
//! ```text
//! # lines starting with # are comments
//! [domain]
//! dimension = 1
//! n_modes = 32
//!
//! [params]
//! temperature = 2.0
//! curie_temperature = 1.0
//! chi_parallel = 0.5
//! ```
//!
//! Parsing fills every default and produces a canonical text form with all
//! values explicit; the canonical form re-parses to an identical config, and
//! its FNV-1a hash is the run fingerprint embedded in every artifact.
//! Unknown sections or keys are rejected by name.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::integrator::Scheme;
use crate::model::{ModelParams, NoiseBasis, System};
use crate::spectral::{Domain, DomainSpec, SpectralField};

/// Explicit noise field of the form `amplitude * e_mode * ê_component`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseFieldSpec {
    pub mode: usize,
    pub component: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitPreset {
    Zero,
    /// Spatially constant vector.
    Constant([f64; 3]),
    /// `amplitude * e_mode * ê_component`.
    SingleMode {
        mode: usize,
        component: usize,
        amplitude: f64,
    },
    /// Band-limited random coefficients, rescaled to the given H1 norm.
    Random {
        seed: u64,
        h1_radius: f64,
        /// 0 means all modes of the truncation.
        max_mode: usize,
    },
    /// External coefficient file: text lines `component mode value`.
    File(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [domain]
    pub dimension: usize,
    pub lengths: Vec<f64>,
    pub n_modes: Vec<usize>,
    pub quad_points: Vec<usize>,
    // [params] (effective values; raw temperature inputs are consumed here)
    pub kappa1: f64,
    pub kappa2: f64,
    pub gamma: f64,
    pub mu: f64,
    pub strat_gamma: bool,
    // [noise]
    pub noise_count: usize,
    pub noise_amplitude: f64,
    pub noise_decay: f64,
    pub noise_fields: Vec<NoiseFieldSpec>,
    // [time]
    pub t_end: f64,
    pub n_steps: usize,
    // [run]
    pub scheme: Scheme,
    pub master_seed: u64,
    pub n_paths: usize,
    pub out_dir: String,
    pub stride: usize,
    pub energy: bool,
    // [init]
    pub init: InitPreset,
    // [uniqueness]
    pub deltas: Vec<f64>,
    pub direction_seed: u64,
    // [converge]
    pub converge_n_list: Vec<usize>,
    pub converge_n_ref: usize,
    pub converge_paths: usize,
    // [invariant]
    pub horizons: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub invariant_dt: f64,
    pub invariant_paths: usize,
    pub burn_in: f64,
    // [moments]
    pub moment_p: Vec<f64>,
    pub moment_r: f64,
    pub moment_n_list: Vec<usize>,
    pub moment_paths: usize,
    // [regularity]
    pub regularity_norm: String,
    pub regularity_paths: usize,
}

struct RawEntry {
    values: Vec<String>,
    line: usize,
    used: bool,
}

struct RawConfig {
    // (section, key) -> entries; `field` in [noise] may repeat
    map: BTreeMap<(String, String), Vec<RawEntry>>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<(String, String), Vec<RawEntry>> = BTreeMap::new();
        let mut section = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw_line.find('#') {
                Some(p) => &raw_line[..p],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or(Error::Parse {
                    line: line_no,
                    msg: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                if section.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "empty section name".into(),
                    });
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::Parse {
                line: line_no,
                msg: "expected `key = value`".into(),
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty key".into(),
                });
            }
            if section.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("key `{key}` outside any [section]"),
                });
            }
            let values: Vec<String> = value.split_whitespace().map(str::to_string).collect();
            map.entry((section.clone(), key)).or_default().push(RawEntry {
                values,
                line: line_no,
                used: false,
            });
        }
        Ok(RawConfig { map })
    }

    fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec.split_once('=').ok_or_else(|| Error::Validation {
            key: spec.to_string(),
            msg: "override must look like section.key=value".into(),
        })?;
        let (section, key) = path.trim().split_once('.').ok_or_else(|| Error::Validation {
            key: path.to_string(),
            msg: "override key must be section.key".into(),
        })?;
        let values: Vec<String> = value.split_whitespace().map(str::to_string).collect();
        self.map
            .insert((section.trim().to_string(), key.trim().to_string()), vec![RawEntry {
                values,
                line: 0,
                used: false,
            }]);
        Ok(())
    }

    fn take(&mut self, section: &str, key: &str) -> Result<Option<Vec<String>>> {
        match self.map.get_mut(&(section.to_string(), key.to_string())) {
            None => Ok(None),
            Some(entries) => {
                if entries.len() > 1 {
                    return Err(Error::Validation {
                        key: format!("{section}.{key}"),
                        msg: format!("given {} times", entries.len()),
                    });
                }
                entries[0].used = true;
                Ok(Some(entries[0].values.clone()))
            }
        }
    }

    fn take_all(&mut self, section: &str, key: &str) -> Vec<Vec<String>> {
        match self.map.get_mut(&(section.to_string(), key.to_string())) {
            None => Vec::new(),
            Some(entries) => entries
                .iter_mut()
                .map(|e| {
                    e.used = true;
                    e.values.clone()
                })
                .collect(),
        }
    }

    fn reject_unused(&self) -> Result<()> {
        for ((section, key), entries) in &self.map {
            for e in entries {
                if !e.used {
                    return Err(Error::Validation {
                        key: format!("{section}.{key}"),
                        msg: format!("unknown key (line {})", e.line),
                    });
                }
            }
        }
        Ok(())
    }
}

fn one<T: std::str::FromStr>(section: &str, key: &str, vals: &[String]) -> Result<T> {
    if vals.len() != 1 {
        return Err(Error::Validation {
            key: format!("{section}.{key}"),
            msg: format!("expected one value, got {}", vals.len()),
        });
    }
    vals[0].parse().map_err(|_| Error::Validation {
        key: format!("{section}.{key}"),
        msg: format!("cannot parse `{}`", vals[0]),
    })
}

fn many<T: std::str::FromStr>(section: &str, key: &str, vals: &[String]) -> Result<Vec<T>> {
    vals.iter()
        .map(|v| {
            v.parse().map_err(|_| Error::Validation {
                key: format!("{section}.{key}"),
                msg: format!("cannot parse `{v}`"),
            })
        })
        .collect()
}

fn one_bool(section: &str, key: &str, vals: &[String]) -> Result<bool> {
    match vals {
        [v] if v == "true" => Ok(true),
        [v] if v == "false" => Ok(false),
        _ => Err(Error::Validation {
            key: format!("{section}.{key}"),
            msg: "expected true or false".into(),
        }),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with_overrides(text, &[])
    }

    /// Parse, apply `section.key=value` overrides, validate, fill defaults.
    pub fn parse_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.apply_override(o)?;
        }

        // [domain]
        let dimension: usize = match raw.take("domain", "dimension")? {
            Some(v) => one("domain", "dimension", &v)?,
            None => 1,
        };
        if dimension == 0 || dimension > 2 {
            return Err(Error::Unsupported(format!(
                "domain.dimension must be 1 or 2, got {dimension}"
            )));
        }
        let per_axis_f = |raw: &mut RawConfig, key: &str, default: f64| -> Result<Vec<f64>> {
            match raw.take("domain", key)? {
                None => Ok(vec![default; dimension]),
                Some(v) => {
                    let vals: Vec<f64> = many("domain", key, &v)?;
                    broadcast(vals, dimension, "domain", key)
                }
            }
        };
        let per_axis_u = |raw: &mut RawConfig, key: &str| -> Result<Option<Vec<usize>>> {
            match raw.take("domain", key)? {
                None => Ok(None),
                Some(v) => {
                    let vals: Vec<usize> = many("domain", key, &v)?;
                    broadcast(vals, dimension, "domain", key).map(Some)
                }
            }
        };
        let lengths = per_axis_f(&mut raw, "lengths", 1.0)?;
        let n_modes = per_axis_u(&mut raw, "n_modes")?.unwrap_or(vec![32; dimension]);
        let quad_points = per_axis_u(&mut raw, "quad_points")?
            .unwrap_or_else(|| n_modes.iter().map(|&n| 2 * n + 1).collect());
        // validate geometry early so errors name the key
        DomainSpec::with_quad(&lengths, &n_modes, &quad_points)?;

        // [params]
        let kappa1: f64 = match raw.take("params", "kappa1")? {
            Some(v) => one("params", "kappa1", &v)?,
            None => 1.0,
        };
        let gamma: f64 = match raw.take("params", "gamma")? {
            Some(v) => one("params", "gamma", &v)?,
            None => 1.0,
        };
        let temperature = raw.take("params", "temperature")?;
        let curie = raw.take("params", "curie_temperature")?;
        let chi = raw.take("params", "chi_parallel")?;
        let kappa2_raw = raw.take("params", "kappa2")?;
        let mu_raw = raw.take("params", "mu")?;
        let (kappa2, mu) = if temperature.is_some() || curie.is_some() || chi.is_some() {
            let (t, tc, chi) = match (&temperature, &curie, &chi) {
                (Some(t), Some(tc), Some(c)) => (
                    one::<f64>("params", "temperature", t)?,
                    one::<f64>("params", "curie_temperature", tc)?,
                    one::<f64>("params", "chi_parallel", c)?,
                ),
                _ => {
                    return Err(Error::Validation {
                        key: "params.temperature".into(),
                        msg: "raw inputs need all of temperature, curie_temperature, chi_parallel"
                            .into(),
                    })
                }
            };
            if kappa2_raw.is_some() || mu_raw.is_some() {
                return Err(Error::Validation {
                    key: "params.kappa2".into(),
                    msg: "give either raw temperature inputs or kappa2/mu, not both".into(),
                });
            }
            let p = ModelParams::from_temperature(kappa1, gamma, t, tc, chi)?;
            (p.kappa2, p.mu)
        } else {
            (
                match kappa2_raw {
                    Some(v) => one("params", "kappa2", &v)?,
                    None => 1.0,
                },
                match mu_raw {
                    Some(v) => one("params", "mu", &v)?,
                    None => 1.0,
                },
            )
        };
        let strat_gamma = match raw.take("params", "strat_gamma")? {
            Some(v) => one_bool("params", "strat_gamma", &v)?,
            None => true,
        };
        // positivity contract
        ModelParams::new(kappa1, kappa2, gamma, mu)?;

        // [noise]: either the spectral recipe (k, amplitude, decay) or an
        // explicit field list, not both
        let noise_k_raw = raw.take("noise", "k")?;
        let noise_amp_raw = raw.take("noise", "amplitude")?;
        let noise_decay_raw = raw.take("noise", "decay")?;
        let mut noise_fields = Vec::new();
        for vals in raw.take_all("noise", "field") {
            if vals.len() != 3 {
                return Err(Error::Validation {
                    key: "noise.field".into(),
                    msg: "expected `mode component amplitude`".into(),
                });
            }
            noise_fields.push(NoiseFieldSpec {
                mode: one("noise", "field", &vals[0..1])?,
                component: one("noise", "field", &vals[1..2])?,
                amplitude: one("noise", "field", &vals[2..3])?,
            });
        }
        if !noise_fields.is_empty()
            && (noise_k_raw.is_some() || noise_amp_raw.is_some() || noise_decay_raw.is_some())
        {
            return Err(Error::Validation {
                key: "noise.field".into(),
                msg: "give either an explicit field list or the k/amplitude/decay recipe, not both"
                    .into(),
            });
        }
        let noise_count: usize = match noise_k_raw {
            Some(v) => one("noise", "k", &v)?,
            None => 8,
        };
        let noise_amplitude: f64 = match noise_amp_raw {
            Some(v) => one("noise", "amplitude", &v)?,
            None => 0.1,
        };
        let noise_decay: f64 = match noise_decay_raw {
            Some(v) => one("noise", "decay", &v)?,
            None => 2.0,
        };
        for f in &noise_fields {
            if f.component < 1 || f.component > 3 {
                return Err(Error::Validation {
                    key: "noise.field".into(),
                    msg: format!("component must be 1..3, got {}", f.component),
                });
            }
        }
        if noise_fields.is_empty() && noise_count > 0 && noise_decay <= 1.5 {
            return Err(Error::Summability(format!(
                "noise.decay = {noise_decay}: the W^(1,inf) ledger sum_k |h_k|^2 diverges unless decay > 1.5"
            )));
        }

        // [time]
        let t_end: f64 = match raw.take("time", "t_end")? {
            Some(v) => one("time", "t_end", &v)?,
            None => 1.0,
        };
        let n_steps: usize = match raw.take("time", "n_steps")? {
            Some(v) => one("time", "n_steps", &v)?,
            None => 1000,
        };
        crate::wiener::TimeGrid::new(t_end, n_steps)?;

        // [run]
        let scheme = match raw.take("run", "scheme")? {
            Some(v) => Scheme::parse(&one::<String>("run", "scheme", &v)?)?,
            None => Scheme::Heun,
        };
        let master_seed: u64 = match raw.take("run", "seed")? {
            Some(v) => one("run", "seed", &v)?,
            None => 42,
        };
        let n_paths: usize = match raw.take("run", "paths")? {
            Some(v) => one("run", "paths", &v)?,
            None => 1,
        };
        let out_dir: String = match raw.take("run", "out_dir")? {
            Some(v) => one("run", "out_dir", &v)?,
            None => "out".into(),
        };
        let stride: usize = match raw.take("run", "stride")? {
            Some(v) => one("run", "stride", &v)?,
            None => 1,
        };
        let energy = match raw.take("run", "energy")? {
            Some(v) => one_bool("run", "energy", &v)?,
            None => false,
        };
        if n_paths == 0 || stride == 0 {
            return Err(Error::Validation {
                key: "run.paths".into(),
                msg: "paths and stride must be >= 1".into(),
            });
        }

        // [init]
        let preset: String = match raw.take("init", "preset")? {
            Some(v) => one("init", "preset", &v)?,
            None => "zero".into(),
        };
        let init = match preset.as_str() {
            "zero" => InitPreset::Zero,
            "constant" => {
                let value = match raw.take("init", "value")? {
                    Some(v) => {
                        let vals: Vec<f64> = many("init", "value", &v)?;
                        if vals.len() != 3 {
                            return Err(Error::Validation {
                                key: "init.value".into(),
                                msg: "constant preset needs three components".into(),
                            });
                        }
                        [vals[0], vals[1], vals[2]]
                    }
                    None => [1.0, 0.0, 0.0],
                };
                InitPreset::Constant(value)
            }
            "single_mode" => InitPreset::SingleMode {
                mode: match raw.take("init", "mode")? {
                    Some(v) => one("init", "mode", &v)?,
                    None => 1,
                },
                component: match raw.take("init", "component")? {
                    Some(v) => one("init", "component", &v)?,
                    None => 1,
                },
                amplitude: match raw.take("init", "amplitude")? {
                    Some(v) => one("init", "amplitude", &v)?,
                    None => 1.0,
                },
            },
            "random" => InitPreset::Random {
                seed: match raw.take("init", "seed")? {
                    Some(v) => one("init", "seed", &v)?,
                    None => 7,
                },
                h1_radius: match raw.take("init", "h1_radius")? {
                    Some(v) => one("init", "h1_radius", &v)?,
                    None => 1.0,
                },
                max_mode: match raw.take("init", "max_mode")? {
                    Some(v) => one("init", "max_mode", &v)?,
                    None => 0,
                },
            },
            "file" => InitPreset::File(match raw.take("init", "file")? {
                Some(v) => one("init", "file", &v)?,
                None => {
                    return Err(Error::Validation {
                        key: "init.file".into(),
                        msg: "file preset needs a path".into(),
                    })
                }
            }),
            other => {
                return Err(Error::Validation {
                    key: "init.preset".into(),
                    msg: format!("unknown preset `{other}`"),
                })
            }
        };

        // [uniqueness]
        let deltas: Vec<f64> = match raw.take("uniqueness", "deltas")? {
            Some(v) => many("uniqueness", "deltas", &v)?,
            None => vec![1e-4, 1e-5, 1e-6],
        };
        let direction_seed: u64 = match raw.take("uniqueness", "direction_seed")? {
            Some(v) => one("uniqueness", "direction_seed", &v)?,
            None => 11,
        };

        // [converge]
        let converge_n_list: Vec<usize> = match raw.take("converge", "n_list")? {
            Some(v) => many("converge", "n_list", &v)?,
            None => vec![16, 32, 64],
        };
        let converge_n_ref: usize = match raw.take("converge", "n_ref")? {
            Some(v) => one("converge", "n_ref", &v)?,
            None => 128,
        };
        let converge_paths: usize = match raw.take("converge", "paths")? {
            Some(v) => one("converge", "paths", &v)?,
            None => 20,
        };

        // [invariant]
        let horizons: Vec<f64> = match raw.take("invariant", "horizons")? {
            Some(v) => many("invariant", "horizons", &v)?,
            None => vec![50.0, 100.0, 200.0],
        };
        let r_grid: Vec<f64> = match raw.take("invariant", "r_grid")? {
            Some(v) => many("invariant", "r_grid", &v)?,
            None => vec![0.25, 0.5, 1.0, 2.0, 4.0],
        };
        let invariant_dt: f64 = match raw.take("invariant", "dt")? {
            Some(v) => one("invariant", "dt", &v)?,
            None => 5e-3,
        };
        let invariant_paths: usize = match raw.take("invariant", "paths")? {
            Some(v) => one("invariant", "paths", &v)?,
            None => 1,
        };
        let burn_in: f64 = match raw.take("invariant", "burn_in")? {
            Some(v) => one("invariant", "burn_in", &v)?,
            None => 0.1,
        };
        if !(0.0..0.5).contains(&burn_in) {
            return Err(Error::Validation {
                key: "invariant.burn_in".into(),
                msg: "burn-in fraction must be in [0, 0.5)".into(),
            });
        }

        // [moments]
        let moment_p: Vec<f64> = match raw.take("moments", "p")? {
            Some(v) => many("moments", "p", &v)?,
            None => vec![1.0, 2.0],
        };
        let moment_r: f64 = match raw.take("moments", "r")? {
            Some(v) => one("moments", "r", &v)?,
            None => 1.2,
        };
        if !(1.0..4.0 / 3.0).contains(&moment_r) {
            return Err(Error::Validation {
                key: "moments.r".into(),
                msg: format!("cross-term exponent must lie in [1, 4/3), got {moment_r}"),
            });
        }
        let moment_n_list: Vec<usize> = match raw.take("moments", "n_list")? {
            Some(v) => many("moments", "n_list", &v)?,
            None => vec![16, 32, 64],
        };
        let moment_paths: usize = match raw.take("moments", "paths")? {
            Some(v) => one("moments", "paths", &v)?,
            None => 100,
        };

        // [regularity]
        let regularity_norm: String = match raw.take("regularity", "norm")? {
            Some(v) => one("regularity", "norm", &v)?,
            None => "l32".into(),
        };
        crate::diagnostics::StructureNorm::parse(&regularity_norm)?;
        let regularity_paths: usize = match raw.take("regularity", "paths")? {
            Some(v) => one("regularity", "paths", &v)?,
            None => 100,
        };

        raw.reject_unused()?;

        Ok(RunConfig {
            dimension,
            lengths,
            n_modes,
            quad_points,
            kappa1,
            kappa2,
            gamma,
            mu,
            strat_gamma,
            noise_count,
            noise_amplitude,
            noise_decay,
            noise_fields,
            t_end,
            n_steps,
            scheme,
            master_seed,
            n_paths,
            out_dir,
            stride,
            energy,
            init,
            deltas,
            direction_seed,
            converge_n_list,
            converge_n_ref,
            converge_paths,
            horizons,
            r_grid,
            invariant_dt,
            invariant_paths,
            burn_in,
            moment_p,
            moment_r,
            moment_n_list,
            moment_paths,
            regularity_norm,
            regularity_paths,
        })
    }

    /// Canonical text with every value explicit, in a fixed order.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let fl = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let ul = |v: &[usize]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(s, "[domain]").unwrap();
        writeln!(s, "dimension = {}", self.dimension).unwrap();
        writeln!(s, "lengths = {}", fl(&self.lengths)).unwrap();
        writeln!(s, "n_modes = {}", ul(&self.n_modes)).unwrap();
        writeln!(s, "quad_points = {}", ul(&self.quad_points)).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[params]").unwrap();
        writeln!(s, "kappa1 = {}", self.kappa1).unwrap();
        writeln!(s, "kappa2 = {}", self.kappa2).unwrap();
        writeln!(s, "gamma = {}", self.gamma).unwrap();
        writeln!(s, "mu = {}", self.mu).unwrap();
        writeln!(s, "strat_gamma = {}", self.strat_gamma).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[noise]").unwrap();
        if self.noise_fields.is_empty() {
            writeln!(s, "k = {}", self.noise_count).unwrap();
            writeln!(s, "amplitude = {}", self.noise_amplitude).unwrap();
            writeln!(s, "decay = {}", self.noise_decay).unwrap();
        } else {
            for f in &self.noise_fields {
                writeln!(s, "field = {} {} {}", f.mode, f.component, f.amplitude).unwrap();
            }
        }
        writeln!(s).unwrap();
        writeln!(s, "[time]").unwrap();
        writeln!(s, "t_end = {}", self.t_end).unwrap();
        writeln!(s, "n_steps = {}", self.n_steps).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[run]").unwrap();
        writeln!(s, "scheme = {}", self.scheme.name()).unwrap();
        writeln!(s, "seed = {}", self.master_seed).unwrap();
        writeln!(s, "paths = {}", self.n_paths).unwrap();
        writeln!(s, "out_dir = {}", self.out_dir).unwrap();
        writeln!(s, "stride = {}", self.stride).unwrap();
        writeln!(s, "energy = {}", self.energy).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[init]").unwrap();
        match &self.init {
            InitPreset::Zero => writeln!(s, "preset = zero").unwrap(),
            InitPreset::Constant(v) => {
                writeln!(s, "preset = constant").unwrap();
                writeln!(s, "value = {}", fl(v)).unwrap();
            }
            InitPreset::SingleMode {
                mode,
                component,
                amplitude,
            } => {
                writeln!(s, "preset = single_mode").unwrap();
                writeln!(s, "mode = {mode}").unwrap();
                writeln!(s, "component = {component}").unwrap();
                writeln!(s, "amplitude = {amplitude}").unwrap();
            }
            InitPreset::Random {
                seed,
                h1_radius,
                max_mode,
            } => {
                writeln!(s, "preset = random").unwrap();
                writeln!(s, "seed = {seed}").unwrap();
                writeln!(s, "h1_radius = {h1_radius}").unwrap();
                writeln!(s, "max_mode = {max_mode}").unwrap();
            }
            InitPreset::File(path) => {
                writeln!(s, "preset = file").unwrap();
                writeln!(s, "file = {path}").unwrap();
            }
        }
        writeln!(s).unwrap();
        writeln!(s, "[uniqueness]").unwrap();
        writeln!(s, "deltas = {}", fl(&self.deltas)).unwrap();
        writeln!(s, "direction_seed = {}", self.direction_seed).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[converge]").unwrap();
        writeln!(s, "n_list = {}", ul(&self.converge_n_list)).unwrap();
        writeln!(s, "n_ref = {}", self.converge_n_ref).unwrap();
        writeln!(s, "paths = {}", self.converge_paths).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[invariant]").unwrap();
        writeln!(s, "horizons = {}", fl(&self.horizons)).unwrap();
        writeln!(s, "r_grid = {}", fl(&self.r_grid)).unwrap();
        writeln!(s, "dt = {}", self.invariant_dt).unwrap();
        writeln!(s, "paths = {}", self.invariant_paths).unwrap();
        writeln!(s, "burn_in = {}", self.burn_in).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[moments]").unwrap();
        writeln!(s, "p = {}", fl(&self.moment_p)).unwrap();
        writeln!(s, "r = {}", self.moment_r).unwrap();
        writeln!(s, "n_list = {}", ul(&self.moment_n_list)).unwrap();
        writeln!(s, "paths = {}", self.moment_paths).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "[regularity]").unwrap();
        writeln!(s, "norm = {}", self.regularity_norm).unwrap();
        writeln!(s, "paths = {}", self.regularity_paths).unwrap();
        s
    }

    /// FNV-1a hash of the canonical text, the run identity in every artifact.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical().as_bytes()))
    }

    pub fn domain_spec(&self) -> Result<DomainSpec> {
        DomainSpec::with_quad(&self.lengths, &self.n_modes, &self.quad_points)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        let mut p = ModelParams::new(self.kappa1, self.kappa2, self.gamma, self.mu)?;
        p.strat_gamma = self.strat_gamma;
        Ok(p)
    }

    pub fn build_noise(&self, domain: &Domain) -> Result<NoiseBasis> {
        if self.noise_fields.is_empty() {
            NoiseBasis::default_family(domain, self.noise_count, self.noise_amplitude, self.noise_decay)
        } else {
            let mut fields = Vec::with_capacity(self.noise_fields.len());
            for f in &self.noise_fields {
                if f.mode >= domain.n_modes() {
                    return Err(Error::Config(format!(
                        "noise field mode {} beyond the truncation ({} modes)",
                        f.mode,
                        domain.n_modes()
                    )));
                }
                let mut h = domain.zero_field();
                h.set(f.component - 1, f.mode, f.amplitude);
                fields.push(h);
            }
            NoiseBasis::from_fields(domain, fields)
        }
    }

    pub fn build_system(&self) -> Result<System> {
        let domain = Domain::new(self.domain_spec()?)?;
        let noise = self.build_noise(&domain)?;
        Ok(System::new(domain, noise, self.model_params()?))
    }

    pub fn initial_state(&self, domain: &Domain) -> Result<SpectralField> {
        build_initial(&self.init, domain)
    }

    pub fn time_grid(&self) -> Result<crate::wiener::TimeGrid> {
        crate::wiener::TimeGrid::new(self.t_end, self.n_steps)
    }
}

fn broadcast<T: Clone>(vals: Vec<T>, dim: usize, section: &str, key: &str) -> Result<Vec<T>> {
    if vals.len() == dim {
        Ok(vals)
    } else if vals.len() == 1 {
        Ok(vec![vals[0].clone(); dim])
    } else {
        Err(Error::Validation {
            key: format!("{section}.{key}"),
            msg: format!("expected 1 or {dim} values, got {}", vals.len()),
        })
    }
}

pub fn build_initial(init: &InitPreset, domain: &Domain) -> Result<SpectralField> {
    use rand::{Rng, SeedableRng};
    Ok(match init {
        InitPreset::Zero => domain.zero_field(),
        InitPreset::Constant(v) => {
            // e_0 = 1/sqrt(volume), so the constant c has coefficient c*sqrt(volume)
            let volume: f64 = domain.spec().lengths().iter().product();
            let mut u = domain.zero_field();
            for (c, &x) in v.iter().enumerate() {
                u.set(c, 0, x * volume.sqrt());
            }
            u
        }
        InitPreset::SingleMode {
            mode,
            component,
            amplitude,
        } => {
            if *mode >= domain.n_modes() {
                return Err(Error::Config(format!(
                    "init mode {mode} beyond the truncation ({} modes)",
                    domain.n_modes()
                )));
            }
            if *component < 1 || *component > 3 {
                return Err(Error::Validation {
                    key: "init.component".into(),
                    msg: format!("component must be 1..3, got {component}"),
                });
            }
            let mut u = domain.zero_field();
            u.set(component - 1, *mode, *amplitude);
            u
        }
        InitPreset::Random {
            seed,
            h1_radius,
            max_mode,
        } => {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(*seed);
            let cap = if *max_mode == 0 {
                domain.n_modes()
            } else {
                (*max_mode + 1).min(domain.n_modes())
            };
            let mut u = domain.zero_field();
            for comp in 0..3 {
                for i in 0..cap {
                    let lam = domain.eigenvalue(i);
                    u.set(comp, i, rng.gen_range(-1.0..1.0) / (1.0 + lam));
                }
            }
            let h1 = domain.h1_norm_sq(&u).sqrt();
            if h1 > 0.0 {
                u.scale(h1_radius / h1);
            }
            u
        }
        InitPreset::File(path) => {
            let text = std::fs::read_to_string(path)?;
            let mut u = domain.zero_field();
            for (idx, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let parts: Vec<&str> = line.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(Error::Parse {
                        line: idx + 1,
                        msg: "coefficient file lines are `component mode value`".into(),
                    });
                }
                let comp: usize = parts[0].parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: "bad component".into(),
                })?;
                let mode: usize = parts[1].parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: "bad mode index".into(),
                })?;
                let value: f64 = parts[2].parse().map_err(|_| Error::Parse {
                    line: idx + 1,
                    msg: "bad value".into(),
                })?;
                if !(1..=3).contains(&comp) || mode >= domain.n_modes() {
                    return Err(Error::Config(format!(
                        "coefficient ({comp}, {mode}) outside the field shape"
                    )));
                }
                u.set(comp - 1, mode, value);
            }
            u
        }
    })
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
