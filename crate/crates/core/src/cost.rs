//! Pay-as-you-go cost model: share volumes per storage family, storage
//! bills, VM-tier assignment and CPU time/cost of sharing and access.

use std::fmt;

use crate::error::{Error, Result};

/// Storage growth of a sharing scheme w.r.t. the original volume `V`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VolumeFamily {
    /// `2nV`: value and key/verification shares at every CSP.
    TwoN,
    /// `nV`: one share per CSP.
    N,
    /// `nV/(t-1)`: several secrets packed per polynomial.
    NOverTMinusOne,
    /// `nV/t`: packing of `t` secrets per polynomial.
    NOverT,
    /// `(n-t+2)V`: shares only at the storage group.
    Fvss,
}

impl VolumeFamily {
    pub const ALL: [VolumeFamily; 5] =
        [VolumeFamily::TwoN, VolumeFamily::N, VolumeFamily::NOverTMinusOne, VolumeFamily::NOverT, VolumeFamily::Fvss];

    /// Multiple of `V` stored in total.
    pub fn factor(self, n: usize, t: usize) -> Result<f64> {
        if t < 2 || t > n {
            return Err(Error::InvalidThreshold { n, t });
        }
        let (n, t) = (n as f64, t as f64);
        Ok(match self {
            VolumeFamily::TwoN => 2.0 * n,
            VolumeFamily::N => n,
            VolumeFamily::NOverTMinusOne => n / (t - 1.0),
            VolumeFamily::NOverT => n / t,
            VolumeFamily::Fvss => n - t + 2.0,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            VolumeFamily::TwoN => "2nV",
            VolumeFamily::N => "nV",
            VolumeFamily::NOverTMinusOne => "nV/(t-1)",
            VolumeFamily::NOverT => "nV/t",
            VolumeFamily::Fvss => "(n-t+2)V",
        }
    }
}

impl fmt::Display for VolumeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShareVolume {
    pub total_gb: f64,
    pub per_csp_gb: Vec<f64>,
}

/// Total and per-CSP volume. Symmetric families split evenly; fVSS splits
/// by `weights` (uniform when `None`), capped at `V` per CSP since a CSP
/// holds at most one share of each value.
pub fn share_volume(family: VolumeFamily, n: usize, t: usize, v_gb: f64, weights: Option<&[f64]>) -> Result<ShareVolume> {
    if !(v_gb.is_finite() && v_gb >= 0.0) {
        return Err(Error::InvalidConfig(format!("data volume {v_gb} GB")));
    }
    let total_gb = family.factor(n, t)? * v_gb;
    let per_csp_gb = match (family, weights) {
        (VolumeFamily::Fvss, Some(w)) => {
            if w.len() != n || w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidConfig(format!("volume split needs {n} nonnegative weights")));
            }
            let sum: f64 = w.iter().sum();
            let split: Vec<f64> = w.iter().map(|x| total_gb * x / sum).collect();
            if split.iter().any(|&x| x > v_gb * (1.0 + 1e-12)) {
                return Err(Error::InvalidConfig(format!("a CSP cannot hold more than {v_gb} GB of shares")));
            }
            split
        }
        _ => vec![total_gb / n as f64; n],
    };
    Ok(ShareVolume { total_gb, per_csp_gb })
}

/// Prices of one CSP.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CspPrice {
    /// $/GB/month.
    pub storage: f64,
    /// $/hour for small, medium and large VMs.
    pub svm: f64,
    pub mvm: f64,
    pub lvm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PricingPolicy {
    pub name: String,
    pub csps: Vec<CspPrice>,
}

pub const PUBLIC_CLOUD_2014: &str = "public-cloud-2014";

impl PricingPolicy {
    pub fn new(name: &str, csps: Vec<CspPrice>) -> Result<Self> {
        for (i, c) in csps.iter().enumerate() {
            if [c.storage, c.svm, c.mvm, c.lvm].iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidConfig(format!("CSP{} has a negative or non-finite price", i + 1)));
            }
        }
        if csps.is_empty() {
            return Err(Error::InvalidConfig("pricing lists no CSP".into()));
        }
        Ok(Self { name: name.to_string(), csps })
    }

    /// Five public CSPs with 2014 list prices.
    pub fn public_cloud_2014() -> Self {
        let grid = [
            (0.030, 0.013, 0.026, 0.053),
            (0.040, 0.059, 0.079, 0.120),
            (0.053, 0.058, 0.115, 0.230),
            (0.120, 0.060, 0.120, 0.240),
            (0.325, 0.070, 0.140, 0.280),
        ];
        let csps = grid.iter().map(|&(storage, svm, mvm, lvm)| CspPrice { storage, svm, mvm, lvm }).collect();
        Self::new(PUBLIC_CLOUD_2014, csps).expect("preset prices are valid")
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            PUBLIC_CLOUD_2014 => Ok(Self::public_cloud_2014()),
            other => Err(Error::InvalidConfig(format!("unknown pricing preset `{other}`"))),
        }
    }

    pub fn n(&self) -> usize {
        self.csps.len()
    }

    fn vm_price(&self, csp: usize, tier: VmTier) -> f64 {
        let c = &self.csps[csp];
        match tier {
            VmTier::Small => c.svm,
            VmTier::Medium => c.mvm,
            VmTier::Large => c.lvm,
        }
    }
}

/// Monthly storage bill `Σ v_i · price_i`.
pub fn storage_cost(per_csp_gb: &[f64], pricing: &PricingPolicy) -> Result<f64> {
    if per_csp_gb.len() > pricing.n() {
        return Err(Error::InvalidConfig(format!("{} volumes for {} priced CSPs", per_csp_gb.len(), pricing.n())));
    }
    Ok(per_csp_gb.iter().zip(&pricing.csps).map(|(v, p)| v * p.storage).sum())
}

/// Rounds a dollar amount to cents, half away from zero.
pub fn cents(x: f64) -> f64 {
    (x * 100.0 + 1e-9_f64.copysign(x)).round() / 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VmTier {
    Small,
    Medium,
    Large,
}

impl VmTier {
    /// Records processed per second.
    pub fn power(self) -> f64 {
        match self {
            VmTier::Small => 1e10,
            VmTier::Medium => 2e10,
            VmTier::Large => 4e10,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VmTier::Small => "sVM",
            VmTier::Medium => "mVM",
            VmTier::Large => "lVM",
        }
    }
}

impl fmt::Display for VmTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Workload fractions at or above these get a large / medium VM.
pub const LARGE_VM_FRACTION: f64 = 0.8;
pub const MEDIUM_VM_FRACTION: f64 = 0.4;

/// VM tier per CSP from its share of the workload; CSPs with no records
/// get no VM.
pub fn vm_assign(per_csp: &[u64], total: u64) -> Result<Vec<Option<VmTier>>> {
    if total == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(per_csp
        .iter()
        .map(|&c| {
            let frac = c as f64 / total as f64;
            match c {
                0 => None,
                _ if frac >= LARGE_VM_FRACTION => Some(VmTier::Large),
                _ if frac >= MEDIUM_VM_FRACTION => Some(VmTier::Medium),
                _ => Some(VmTier::Small),
            }
        })
        .collect())
}

/// Records processed at each CSP; `base` is σ (records shared) or γ
/// (records matched by a query).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WorkloadProfile {
    pub base: u64,
    pub per_csp: Vec<u64>,
}

impl WorkloadProfile {
    /// Fails unless the per-CSP counts add up to `expected`.
    pub fn with_total(base: u64, per_csp: Vec<u64>, expected: u64) -> Result<Self> {
        let sum: u64 = per_csp.iter().sum();
        if sum != expected {
            return Err(Error::InvalidConfig(format!("per-CSP records add up to {sum}, expected {expected}")));
        }
        Ok(Self { base, per_csp })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CspCompute {
    pub records: u64,
    pub tier: Option<VmTier>,
    pub hours: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComputeCost {
    pub per_csp: Vec<CspCompute>,
    /// CSPs work in parallel: the slowest one sets the wall time.
    pub wall_hours: f64,
    pub dollars: f64,
}

pub fn compute_cost(profile: &WorkloadProfile, pricing: &PricingPolicy) -> Result<ComputeCost> {
    if profile.per_csp.len() > pricing.n() {
        return Err(Error::InvalidConfig(format!("{} CSP workloads for {} priced CSPs", profile.per_csp.len(), pricing.n())));
    }
    let tiers = vm_assign(&profile.per_csp, profile.base)?;
    let mut per_csp = Vec::with_capacity(tiers.len());
    let mut dollars = 0.0;
    for (i, (&records, tier)) in profile.per_csp.iter().zip(tiers).enumerate() {
        let hours = tier.map_or(0.0, |t| records as f64 / t.power() / 3600.0);
        if let Some(t) = tier {
            dollars += hours * pricing.vm_price(i, t);
        }
        per_csp.push(CspCompute { records, tier, hours });
    }
    let wall_hours = per_csp.iter().map(|c| c.hours).fold(0.0, f64::max);
    Ok(ComputeCost { per_csp, wall_hours, dollars })
}

/// `h:mm`, minutes rounded up so that any started minute shows.
pub fn hmm(hours: f64) -> String {
    let minutes = (hours * 60.0 - 1e-9).ceil().max(0.0) as u64;
    format!("{}:{:02}", minutes / 60, minutes % 60)
}

// ---- comparison reports --------------------------------------------------

/// A storage strategy: a volume family plus how volume lands on CSPs.
#[derive(Clone, Debug, PartialEq)]
pub struct Strategy {
    pub name: String,
    pub family: VolumeFamily,
    /// Explicit per-CSP GB; `None` splits evenly.
    pub split_gb: Option<Vec<f64>>,
}

/// Inputs of the comparison reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub t: usize,
    pub volume_gb: f64,
    /// Records shared (σ).
    pub shared_records: u64,
    /// Records matched by the sample query (γ).
    pub matched_records: u64,
    /// Reconstruction group of the sample query.
    pub rg: Vec<usize>,
    /// Per-CSP volume of the unbalanced fVSS strategy.
    pub unbalanced_split_gb: Vec<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n: 5,
            t: 4,
            volume_gb: 100.0,
            shared_records: 1_000_000_000_000_000,
            matched_records: 100_000_000_000_000,
            rg: vec![1, 2, 4, 5],
            unbalanced_split_gb: vec![99.8, 99.8, 99.8, 0.4, 0.2],
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        VolumeFamily::Fvss.factor(self.n, self.t)?;
        if self.unbalanced_split_gb.len() != self.n {
            return Err(Error::InvalidConfig(format!("unbalanced split needs {} volumes", self.n)));
        }
        let total: f64 = self.unbalanced_split_gb.iter().sum();
        let want = VolumeFamily::Fvss.factor(self.n, self.t)? * self.volume_gb;
        if (total - want).abs() > 1e-6 * want.max(1.0) {
            return Err(Error::InvalidConfig(format!("unbalanced split holds {total} GB, fVSS stores {want} GB")));
        }
        if self.rg.len() != self.t || self.rg.iter().any(|&c| c == 0 || c > self.n) {
            return Err(Error::InvalidConfig(format!("sample reconstruction group needs {} CSPs in 1..={}", self.t, self.n)));
        }
        Ok(())
    }

    pub fn strategies(&self) -> Vec<Strategy> {
        let plain = |family: VolumeFamily| Strategy { name: format!("{family} family"), family, split_gb: None };
        vec![
            plain(VolumeFamily::TwoN),
            plain(VolumeFamily::N),
            plain(VolumeFamily::NOverTMinusOne),
            plain(VolumeFamily::NOverT),
            Strategy { name: "fVSS-I".into(), family: VolumeFamily::Fvss, split_gb: None },
            Strategy { name: "fVSS-II".into(), family: VolumeFamily::Fvss, split_gb: Some(self.unbalanced_split_gb.clone()) },
        ]
    }

    /// Per-CSP GB a strategy bills. Even splits are billed in whole GB,
    /// rounded up.
    pub fn billed_split(&self, s: &Strategy) -> Result<Vec<f64>> {
        if let Some(split) = &s.split_gb {
            return Ok(split.clone());
        }
        let v = share_volume(s.family, self.n, self.t, self.volume_gb, None)?;
        Ok(v.per_csp_gb.iter().map(|x| (x - 1e-9).ceil()).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StorageRow {
    pub approach: String,
    pub total_gb: f64,
    pub per_csp_gb: Vec<f64>,
    pub dollars: f64,
}

pub fn storage_rows(scenario: &Scenario, pricing: &PricingPolicy) -> Result<Vec<StorageRow>> {
    scenario.validate()?;
    scenario
        .strategies()
        .iter()
        .map(|s| {
            let split = scenario.billed_split(s)?;
            Ok(StorageRow {
                approach: s.name.clone(),
                total_gb: s.family.factor(scenario.n, scenario.t)? * scenario.volume_gb,
                dollars: storage_cost(&split, pricing)?,
                per_csp_gb: split,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComputeRow {
    pub approach: String,
    pub profile: WorkloadProfile,
    pub cost: ComputeCost,
}

/// Workloads compared for sharing (`access == false`) or for answering
/// the sample query (`access == true`). Approaches store a share of every
/// record at every CSP, except fVSS whose CSPs hold the fraction of `V`
/// given by their split. Access only involves the reconstruction group.
pub fn compute_rows(scenario: &Scenario, pricing: &PricingPolicy, access: bool) -> Result<Vec<ComputeRow>> {
    scenario.validate()?;
    let n = scenario.n;
    let base = if access { scenario.matched_records } else { scenario.shared_records };
    let involved = |i: usize| !access || scenario.rg.contains(&(i + 1));
    let even = vec![scenario.volume_gb; n];
    let fvss_i = share_volume(VolumeFamily::Fvss, n, scenario.t, scenario.volume_gb, None)?.per_csp_gb;
    let rows = [
        ("share-everywhere families", even),
        ("fVSS-I", fvss_i),
        ("fVSS-II", scenario.unbalanced_split_gb.clone()),
    ];
    rows.into_iter()
        .map(|(name, split)| {
            let per_csp: Vec<u64> = split
                .iter()
                .enumerate()
                .map(|(i, gb)| if involved(i) { (base as f64 * gb / scenario.volume_gb).round() as u64 } else { 0 })
                .collect();
            let profile = WorkloadProfile { base, per_csp };
            let cost = compute_cost(&profile, pricing)?;
            Ok(ComputeRow { approach: name.to_string(), profile, cost })
        })
        .collect()
}

/// Volume multiples of `V` for `n` in `ns`, with `t` given per `n`.
pub fn volume_curve(ns: impl IntoIterator<Item = usize>, t_of: impl Fn(usize) -> usize) -> Result<Vec<(usize, Vec<f64>)>> {
    ns.into_iter()
        .map(|n| {
            let t = t_of(n);
            Ok((n, VolumeFamily::ALL.iter().map(|f| f.factor(n, t)).collect::<Result<_>>()?))
        })
        .collect()
}

/// A small table that renders as aligned text or CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextTable {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl TextTable {
    pub fn render_text(&self) -> String {
        let cols = self.header.len();
        let width: Vec<usize> = (0..cols)
            .map(|c| self.rows.iter().map(|r| r[c].len()).chain([self.header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells.iter().enumerate().map(|(c, s)| format!("{s:<w$}", w = width[c])).collect::<Vec<_>>().join("  ").trim_end().to_string()
        };
        let mut out = format!("{}\n{}\n", self.title, line(&self.header));
        out.push_str(&width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn render_csv(&self) -> String {
        let esc = |s: &String| if s.contains([',', '"', '\n']) { format!("\"{}\"", s.replace('"', "\"\"")) } else { s.clone() };
        let mut out = String::new();
        for r in std::iter::once(&self.header).chain(&self.rows) {
            out.push_str(&r.iter().map(esc).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

fn gb(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round())
    } else {
        format!("{x:.1}")
    }
}

pub fn storage_table(scenario: &Scenario, pricing: &PricingPolicy) -> Result<TextTable> {
    let mut rows = Vec::new();
    let prices: Vec<f64> = pricing.csps.iter().map(|c| c.storage * scenario.volume_gb).collect();
    let (lo, hi) = (prices.iter().copied().fold(f64::INFINITY, f64::min), prices.iter().copied().fold(0.0, f64::max));
    rows.push(vec!["unencrypted, one CSP".into(), gb(scenario.volume_gb), gb(scenario.volume_gb), format!("{lo:.2} to {hi:.2}")]);
    for r in storage_rows(scenario, pricing)? {
        let even = r.per_csp_gb.windows(2).all(|w| w[0] == w[1]);
        let per = if even { gb(r.per_csp_gb[0]) } else { r.per_csp_gb.iter().map(|&x| gb(x)).collect::<Vec<_>>().join(" + ") };
        rows.push(vec![r.approach, gb(r.total_gb.round()), per, format!("{:.2}", cents(r.dollars))]);
    }
    Ok(TextTable {
        title: format!("Storage cost, n={}, t={}, V={} GB ({})", scenario.n, scenario.t, gb(scenario.volume_gb), pricing.name),
        header: ["approach", "global GB", "GB per CSP", "$/month"].map(String::from).to_vec(),
        rows,
    })
}

pub fn compute_table(scenario: &Scenario, pricing: &PricingPolicy, access: bool) -> Result<TextTable> {
    let mut rows = Vec::new();
    for r in compute_rows(scenario, pricing, access)? {
        for (i, c) in r.cost.per_csp.iter().enumerate() {
            let wall = if c.hours == r.cost.wall_hours { " (wall)" } else { "" };
            rows.push(vec![
                if i == 0 { r.approach.clone() } else { String::new() },
                format!("CSP{}", i + 1),
                format!("{:e}", c.records as f64),
                c.tier.map_or("---".to_string(), |t| t.to_string()),
                format!("{}{wall}", hmm(c.hours)),
                if i == 0 { format!("{:.2}", cents(r.cost.dollars)) } else { String::new() },
            ]);
        }
    }
    let what = if access { "Data access" } else { "Sharing" };
    Ok(TextTable {
        title: format!("{what} CPU cost, n={}, t={} ({})", scenario.n, scenario.t, pricing.name),
        header: ["approach", "CSP", "records", "VM", "time (h:mm)", "CPU $"].map(String::from).to_vec(),
        rows,
    })
}

/// Share volume multiples for `n = 3..=7`, with `t = n` and `t = 3`.
pub fn volume_table() -> Result<TextTable> {
    let mut rows = Vec::new();
    for (label, curve) in [("t=n", volume_curve(3..=7, |n| n)?), ("t=3", volume_curve(3..=7, |_| 3)?)] {
        for (n, factors) in curve {
            let mut row = vec![label.to_string(), n.to_string()];
            row.extend(factors.iter().map(|f| format!("{f:.2}")));
            rows.push(row);
        }
    }
    let mut header = vec!["t".to_string(), "n".to_string()];
    header.extend(VolumeFamily::ALL.iter().map(|f| f.label().to_string()));
    Ok(TextTable { title: "Share volume as a multiple of V".into(), header, rows })
}
