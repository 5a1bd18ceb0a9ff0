//! Deployment configuration file: flat `key = value` lines grouped under
//! optional `[section]` headers, `#` comments.
//!
//! ```text
//! p = 2305843009213693951
//! n = 5
//! t = 4
//! seed = demo
//! store = ./store
//!
//! [tables]
//! Product = ProdNo:pk, CategoryID:key, Price:real(2)
//!
//! [type2]
//! Product = Price
//!
//! [type3]
//! Product = Price^2
//!
//! [pricing]
//! preset = public-cloud-2014
//! ```

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::cost::{CspPrice, PricingPolicy, Scenario, PUBLIC_CLOUD_2014};
use crate::error::{Error, Result};
use crate::field::MERSENNE_61;
use crate::schema::{Derived, TableSchema};
use crate::warehouse::WarehouseParams;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "FVSS_SEED";

/// Price overrides applied on top of a preset, one entry per CSP.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PricingOverrides {
    pub preset: Option<String>,
    pub storage: Option<Vec<f64>>,
    pub svm: Option<Vec<f64>>,
    pub mvm: Option<Vec<f64>>,
    pub lvm: Option<Vec<f64>>,
}

/// Cost-report scenario overrides; unset keys keep the defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScenarioOverrides {
    pub volume_gb: Option<f64>,
    pub shared_records: Option<u64>,
    pub matched_records: Option<u64>,
    pub rg: Option<Vec<usize>>,
    pub split: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    pub p: u64,
    pub n: usize,
    pub t: usize,
    pub seed: String,
    pub w: usize,
    pub bias: Option<u64>,
    pub store: Option<PathBuf>,
    pub weights: Option<Vec<f64>>,
    pub rg_cost: Option<Vec<f64>>,
    /// Table name and `name:type, ...` column list, in creation order.
    pub tables: Vec<(String, String)>,
    /// Table and column carrying a Type II index.
    pub type2: Vec<(String, String)>,
    /// Table and derived column (`x^2`, `x*y`, `x/y`).
    pub type3: Vec<(String, String)>,
    pub pricing: PricingOverrides,
    pub scenario: ScenarioOverrides,
}

fn bad(line: usize, msg: impl fmt::Display) -> Error {
    Error::InvalidConfig(format!("line {line}: {msg}"))
}

fn num<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(line, format!("`{key}` expects a number, got `{v}`")))
}

fn list<T: FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| num(line, key, x.trim())).collect()
}

fn names(v: &str) -> impl Iterator<Item = String> + '_ {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string)
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ConfigFile {
            p: MERSENNE_61,
            n: 0,
            t: 0,
            seed: String::new(),
            w: 3,
            bias: None,
            store: None,
            weights: None,
            rg_cost: None,
            tables: Vec::new(),
            type2: Vec::new(),
            type3: Vec::new(),
            pricing: PricingOverrides::default(),
            scenario: ScenarioOverrides::default(),
        };
        let (mut have_n, mut have_t) = (false, false);
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                section = name.trim().to_ascii_lowercase();
                if !matches!(section.as_str(), "tables" | "type2" | "type3" | "pricing" | "scenario") {
                    return Err(bad(line, format!("unknown section [{section}]")));
                }
                continue;
            }
            let (k, v) = s.split_once('=').ok_or_else(|| bad(line, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            match section.as_str() {
                "" => match k {
                    "p" => cfg.p = num(line, k, v)?,
                    "n" => (cfg.n, have_n) = (num(line, k, v)?, true),
                    "t" => (cfg.t, have_t) = (num(line, k, v)?, true),
                    "seed" => cfg.seed = v.to_string(),
                    "w" => cfg.w = num(line, k, v)?,
                    "bias" => cfg.bias = Some(num(line, k, v)?),
                    "store" => cfg.store = Some(PathBuf::from(v)),
                    "weights" => cfg.weights = Some(list(line, k, v)?),
                    "rg_cost" => cfg.rg_cost = Some(list(line, k, v)?),
                    _ => return Err(bad(line, format!("unknown key `{k}`"))),
                },
                "tables" => {
                    if cfg.tables.iter().any(|(t, _)| t == k) {
                        return Err(bad(line, format!("table {k} declared twice")));
                    }
                    TableSchema::parse(k, v).map_err(|e| bad(line, e))?;
                    cfg.tables.push((k.to_string(), v.to_string()));
                }
                "type2" => cfg.type2.extend(names(v).map(|c| (k.to_string(), c))),
                "type3" => {
                    for d in names(v) {
                        Derived::parse(&d).map_err(|e| bad(line, e))?;
                        cfg.type3.push((k.to_string(), d));
                    }
                }
                "pricing" => match k {
                    "preset" => cfg.pricing.preset = Some(v.to_string()),
                    "storage" => cfg.pricing.storage = Some(list(line, k, v)?),
                    "svm" => cfg.pricing.svm = Some(list(line, k, v)?),
                    "mvm" => cfg.pricing.mvm = Some(list(line, k, v)?),
                    "lvm" => cfg.pricing.lvm = Some(list(line, k, v)?),
                    _ => return Err(bad(line, format!("unknown pricing key `{k}`"))),
                },
                _ => match k {
                    "volume_gb" => cfg.scenario.volume_gb = Some(num(line, k, v)?),
                    "shared_records" => cfg.scenario.shared_records = Some(num(line, k, v)?),
                    "matched_records" => cfg.scenario.matched_records = Some(num(line, k, v)?),
                    "rg" => cfg.scenario.rg = Some(list(line, k, v)?),
                    "split" => cfg.scenario.split = Some(list(line, k, v)?),
                    _ => return Err(bad(line, format!("unknown scenario key `{k}`"))),
                },
            }
        }
        if !have_n || !have_t {
            return Err(Error::InvalidConfig("`n` and `t` are required".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks `n >= t >= 2` and list lengths.
    pub fn validate(&self) -> Result<()> {
        if self.t < 2 || self.t > self.n {
            return Err(Error::InvalidThreshold { n: self.n, t: self.t });
        }
        for (key, v) in [("weights", &self.weights), ("rg_cost", &self.rg_cost)] {
            if v.as_ref().is_some_and(|v| v.len() != self.n) {
                return Err(Error::InvalidConfig(format!("`{key}` needs {} entries", self.n)));
            }
        }
        for (table, _) in self.type2.iter().chain(&self.type3) {
            if !self.tables.iter().any(|(t, _)| t == table) {
                return Err(Error::UnknownTable(table.clone()));
            }
        }
        Ok(())
    }

    /// Privacy warning when the storage group alone reaches `t`.
    pub fn warning(&self) -> Option<String> {
        (self.n + 2 >= 2 * self.t).then(|| {
            format!(
                "warning: n = {} >= 2t - 2 = {}: the {} CSPs storing a record can reconstruct it without the index server",
                self.n,
                2 * self.t - 2,
                self.n - self.t + 2
            )
        })
    }

    /// Replaces the seed with `value` when present.
    pub fn override_seed(&mut self, value: Option<String>) {
        if let Some(v) = value {
            self.seed = v;
        }
    }

    pub fn params(&self) -> WarehouseParams {
        WarehouseParams {
            w: self.w,
            bias: self.bias,
            weights: self.weights.clone(),
            rg_cost: self.rg_cost.clone(),
            ..WarehouseParams::new(self.p, self.n, self.t, self.seed.as_bytes())
        }
    }

    pub fn schemas(&self) -> Result<Vec<TableSchema>> {
        self.tables.iter().map(|(name, cols)| TableSchema::parse(name, cols)).collect()
    }

    /// The preset (default `public-cloud-2014`) with per-CSP overrides.
    pub fn pricing_policy(&self) -> Result<PricingPolicy> {
        let o = &self.pricing;
        let base = PricingPolicy::preset(o.preset.as_deref().unwrap_or(PUBLIC_CLOUD_2014))?;
        let mut csps = base.csps.clone();
        let set = |csps: &mut Vec<CspPrice>, v: &Option<Vec<f64>>, f: fn(&mut CspPrice, f64)| -> Result<()> {
            if let Some(v) = v {
                if v.len() != csps.len() {
                    return Err(Error::InvalidConfig(format!("price list needs {} entries", csps.len())));
                }
                csps.iter_mut().zip(v).for_each(|(c, &x)| f(c, x));
            }
            Ok(())
        };
        set(&mut csps, &o.storage, |c, x| c.storage = x)?;
        set(&mut csps, &o.svm, |c, x| c.svm = x)?;
        set(&mut csps, &o.mvm, |c, x| c.mvm = x)?;
        set(&mut csps, &o.lvm, |c, x| c.lvm = x)?;
        PricingPolicy::new(&base.name, csps)
    }

    pub fn scenario(&self) -> Scenario {
        let d = Scenario::default();
        let o = &self.scenario;
        Scenario {
            volume_gb: o.volume_gb.unwrap_or(d.volume_gb),
            shared_records: o.shared_records.unwrap_or(d.shared_records),
            matched_records: o.matched_records.unwrap_or(d.matched_records),
            rg: o.rg.clone().unwrap_or(d.rg),
            unbalanced_split_gb: o.split.clone().unwrap_or(d.unbalanced_split_gb),
            ..d
        }
    }
}

impl FromStr for ConfigFile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Canonical rendering; parsing it yields an equal value.
impl fmt::Display for ConfigFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "p = {}\nn = {}\nt = {}\nseed = {}\nw = {}", self.p, self.n, self.t, self.seed, self.w)?;
        if let Some(b) = self.bias {
            writeln!(f, "bias = {b}")?;
        }
        if let Some(s) = &self.store {
            writeln!(f, "store = {}", s.display())?;
        }
        if let Some(w) = &self.weights {
            writeln!(f, "weights = {}", join(w))?;
        }
        if let Some(c) = &self.rg_cost {
            writeln!(f, "rg_cost = {}", join(c))?;
        }
        if !self.tables.is_empty() {
            writeln!(f, "\n[tables]")?;
            for (t, cols) in &self.tables {
                writeln!(f, "{t} = {cols}")?;
            }
        }
        for (title, entries) in [("type2", &self.type2), ("type3", &self.type3)] {
            if entries.is_empty() {
                continue;
            }
            writeln!(f, "\n[{title}]")?;
            let mut seen: Vec<&str> = Vec::new();
            for (t, _) in entries.iter() {
                if !seen.contains(&t.as_str()) {
                    seen.push(t);
                    let cols: Vec<&str> = entries.iter().filter(|(u, _)| u == t).map(|(_, c)| c.as_str()).collect();
                    writeln!(f, "{t} = {}", cols.join(", "))?;
                }
            }
        }
        let o = &self.pricing;
        if *o != PricingOverrides::default() {
            writeln!(f, "\n[pricing]")?;
            if let Some(p) = &o.preset {
                writeln!(f, "preset = {p}")?;
            }
            for (k, v) in [("storage", &o.storage), ("svm", &o.svm), ("mvm", &o.mvm), ("lvm", &o.lvm)] {
                if let Some(v) = v {
                    writeln!(f, "{k} = {}", join(v))?;
                }
            }
        }
        let s = &self.scenario;
        if *s != ScenarioOverrides::default() {
            writeln!(f, "\n[scenario]")?;
            if let Some(v) = s.volume_gb {
                writeln!(f, "volume_gb = {v}")?;
            }
            if let Some(v) = s.shared_records {
                writeln!(f, "shared_records = {v}")?;
            }
            if let Some(v) = s.matched_records {
                writeln!(f, "matched_records = {v}")?;
            }
            if let Some(v) = &s.rg {
                writeln!(f, "rg = {}", join(v))?;
            }
            if let Some(v) = &s.split {
                writeln!(f, "split = {}", join(v))?;
            }
        }
        Ok(())
    }
}
