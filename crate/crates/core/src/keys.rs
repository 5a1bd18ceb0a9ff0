//! Keyed function family used by sharing and signatures.
//!
//! * `HF1` maps the data key, the signature key and each CSP identifier to a
//!   small, unique abscissa in `[1, 2^20)`.
//! * `HE1`, `HE2(·, ID_i)` and `HE*_i` are secret-scalar multiplications mod
//!   `p`; they are additive homomorphisms, which is all the sharing and
//!   aggregation algebra relies on.
//! * `HF*_i` is a per-CSP keyed SHA-256 reduced mod `p`.
//!
//! Everything is derived deterministically from a seed, so a client can
//! re-create its key material from configuration alone.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{Fe, PrimeField};

/// Upper bound (exclusive) of `HF1` images.
pub const HF1_RANGE: u64 = 1 << 20;

/// Public system parameters. CSP `i` (1-based) has identifier `ids[i - 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SystemConfig {
    pub p: u64,
    pub n: usize,
    pub t: usize,
    pub ids: Vec<u64>,
}

impl SystemConfig {
    /// Number of CSPs holding each record: `n - t + 2`.
    pub fn group_size(&self) -> usize {
        self.n - self.t + 2
    }

    /// `Some(message)` when `n >= 2t - 2`, i.e. the storage group alone
    /// reaches the reconstruction threshold.
    pub fn privacy_warning(&self) -> Option<String> {
        (self.n + 2 >= 2 * self.t).then(|| {
            format!(
                "n = {} >= 2t - 2 = {}: the {} CSPs storing a record can reconstruct it without the index server",
                self.n,
                (2 * self.t).saturating_sub(2),
                self.group_size()
            )
        })
    }
}

/// Client-side secrets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyMaterial {
    pub master_seed: [u8; 32],
    pub k_d: u64,
    pub k_s: u64,
    pub he1_scalar: Fe,
    /// Keyed by CSP identifier.
    pub he2_multipliers: BTreeMap<u64, Fe>,
    /// Indexed by CSP index - 1.
    pub he_star_scalars: Vec<Fe>,
    /// Indexed by CSP index - 1.
    pub hf_star_keys: Vec<[u8; 32]>,
}

/// `HF1` images of every registered participant, plus the abscissas reserved
/// for cube filler points.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvaluationPointTable {
    pub points: BTreeMap<u64, u64>,
    pub fillers: Vec<u64>,
}

impl EvaluationPointTable {
    /// Asserts every image (including fillers) is distinct and nonzero.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &x in self.points.values().chain(&self.fillers) {
            if x == 0 || !seen.insert(x) {
                return Err(Error::InvalidConfig(format!("HF1 image {x} is zero or repeated")));
            }
        }
        Ok(())
    }
}

fn keyed_digest(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((key.len() as u64).to_be_bytes());
    h.update(key);
    for part in parts {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    h.finalize().into()
}

fn draw_distinct(rng: &mut ChaCha20Rng, lo: u64, hi: u64, taken: &mut BTreeSet<u64>) -> u64 {
    loop {
        let v = rng.random_range(lo..hi);
        if taken.insert(v) {
            return v;
        }
    }
}

fn draw_nonzero(rng: &mut ChaCha20Rng, field: &PrimeField) -> Fe {
    field.elem(rng.random_range(1..field.modulus()))
}

/// Sets up identifiers, keys and evaluation points for `n` CSPs with
/// threshold `t`. Deterministic in `(p, n, t, seed)`.
pub fn init_participants(
    p: u64,
    n: usize,
    t: usize,
    seed: &[u8],
) -> Result<(SystemConfig, KeyMaterial, EvaluationPointTable)> {
    if t < 2 || t > n {
        return Err(Error::InvalidThreshold { n, t });
    }
    if n > 64 {
        return Err(Error::InvalidConfig(format!("at most 64 CSPs supported, got {n}")));
    }
    let field = PrimeField::new(p)?;
    let hf1_hi = HF1_RANGE.min(p);
    // IDs, K_d, K_s in (1, p); HF1 images (with fillers) in [1, hf1_hi).
    if (p as u128) < n as u128 + 4 || hf1_hi <= (n + t) as u64 {
        return Err(Error::InvalidConfig(format!("p = {p} too small for n = {n}")));
    }

    let mut master_seed = keyed_digest(b"fvss/init", &[seed]);
    master_seed = keyed_digest(
        &master_seed,
        &[&p.to_be_bytes(), &(n as u64).to_be_bytes(), &(t as u64).to_be_bytes()],
    );
    let mut rng = ChaCha20Rng::from_seed(master_seed);

    let mut taken = BTreeSet::new();
    let ids: Vec<u64> = (0..n).map(|_| draw_distinct(&mut rng, 2, p, &mut taken)).collect();
    let k_d = draw_distinct(&mut rng, 2, p, &mut taken);
    let k_s = draw_distinct(&mut rng, 2, p, &mut taken);

    let he1_scalar = draw_nonzero(&mut rng, &field);
    let he2_multipliers = ids.iter().map(|&id| (id, draw_nonzero(&mut rng, &field))).collect();
    let he_star_scalars = (0..n).map(|_| draw_nonzero(&mut rng, &field)).collect();
    let hf_star_keys = (0..n)
        .map(|_| {
            let mut k = [0u8; 32];
            rng.fill_bytes(&mut k);
            k
        })
        .collect();

    // HF1 by keyed hashing, resampling on collision.
    let mut images = BTreeSet::new();
    let mut hf1 = |label: &[u8], a: u64| -> u64 {
        let mut counter = 0u64;
        loop {
            let d = keyed_digest(&master_seed, &[label, &a.to_be_bytes(), &counter.to_be_bytes()]);
            let v = 1 + u64::from_be_bytes(d[..8].try_into().unwrap()) % (hf1_hi - 1);
            if images.insert(v) {
                return v;
            }
            counter += 1;
        }
    };
    let mut points = BTreeMap::new();
    for &a in ids.iter().chain([&k_d, &k_s]) {
        points.insert(a, hf1(b"hf1", a));
    }
    let fillers = (0..t.saturating_sub(2) as u64).map(|j| hf1(b"filler", j)).collect();
    let table = EvaluationPointTable { points, fillers };
    table.validate()?;

    Ok((
        SystemConfig { p, n, t, ids },
        KeyMaterial { master_seed, k_d, k_s, he1_scalar, he2_multipliers, he_star_scalars, hf_star_keys },
        table,
    ))
}

/// The assembled scheme: field, public parameters, secrets and abscissas.
#[derive(Clone, Debug)]
pub struct Scheme {
    field: PrimeField,
    config: SystemConfig,
    keys: KeyMaterial,
    points: EvaluationPointTable,
}

impl Scheme {
    pub fn init(p: u64, n: usize, t: usize, seed: &[u8]) -> Result<Self> {
        let (config, keys, points) = init_participants(p, n, t, seed)?;
        Self::from_parts(config, keys, points)
    }

    /// Assembles a scheme from explicit parts, re-checking every invariant.
    pub fn from_parts(config: SystemConfig, keys: KeyMaterial, points: EvaluationPointTable) -> Result<Self> {
        let field = PrimeField::new(config.p)?;
        if config.t < 2 || config.t > config.n {
            return Err(Error::InvalidThreshold { n: config.n, t: config.t });
        }
        if config.ids.len() != config.n
            || keys.he_star_scalars.len() != config.n
            || keys.hf_star_keys.len() != config.n
            || points.fillers.len() != config.t - 2
        {
            return Err(Error::InvalidConfig("key material does not match n / t".into()));
        }
        for &v in config.ids.iter().chain([&keys.k_d, &keys.k_s]) {
            if v <= 1 || v >= config.p {
                return Err(Error::InvalidConfig(format!("identifier {v} outside (1, p)")));
            }
            if !points.points.contains_key(&v) {
                return Err(Error::UnknownParticipant(v));
            }
        }
        let zero = |f: &Fe| f.value() == 0 || f.value() >= config.p;
        if zero(&keys.he1_scalar)
            || keys.he_star_scalars.iter().any(zero)
            || config.ids.iter().any(|id| keys.he2_multipliers.get(id).is_none_or(zero))
        {
            return Err(Error::InvalidConfig("homomorphic scalars must be nonzero mod p".into()));
        }
        points.validate()?;
        Ok(Self { field, config, keys, points })
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }
    pub fn config(&self) -> &SystemConfig {
        &self.config
    }
    pub fn keys(&self) -> &KeyMaterial {
        &self.keys
    }
    pub fn points(&self) -> &EvaluationPointTable {
        &self.points
    }
    pub fn n(&self) -> usize {
        self.config.n
    }
    pub fn t(&self) -> usize {
        self.config.t
    }

    /// Identifier `ID_i` of 1-based CSP `i`.
    pub fn csp_id(&self, csp: usize) -> u64 {
        self.config.ids[csp - 1]
    }

    pub fn hf1(&self, a: u64) -> Result<u64> {
        self.points.points.get(&a).copied().ok_or(Error::UnknownParticipant(a))
    }

    /// Abscissa `HF1(ID_i)` of CSP `i`.
    pub fn x_csp(&self, csp: usize) -> Fe {
        self.field.elem(self.points.points[&self.csp_id(csp)])
    }
    /// Abscissa `HF1(K_d)` carrying the secret.
    pub fn x_data(&self) -> Fe {
        self.field.elem(self.points.points[&self.keys.k_d])
    }
    /// Abscissa `HF1(K_s)` carrying the inner signature.
    pub fn x_sig(&self) -> Fe {
        self.field.elem(self.points.points[&self.keys.k_s])
    }
    pub fn filler_xs(&self) -> impl Iterator<Item = Fe> + '_ {
        self.points.fillers.iter().map(|&x| self.field.elem(x))
    }

    pub fn he1(&self, h: Fe) -> Fe {
        self.field.mul(self.keys.he1_scalar, h)
    }

    /// `HE2(a, b)` for a registered CSP identifier `b`.
    pub fn he2(&self, a: Fe, b: u64) -> Result<Fe> {
        let m = self.keys.he2_multipliers.get(&b).ok_or(Error::UnknownParticipant(b))?;
        Ok(self.field.mul(a, *m))
    }

    /// Pseudo share `HE2(pk, ID_i)` of CSP `i`.
    pub fn pseudo_share(&self, pk: u64, csp: usize) -> Fe {
        let m = self.keys.he2_multipliers[&self.csp_id(csp)];
        self.field.mul(self.field.elem(pk), m)
    }

    /// Pseudo share for an aggregated key value already reduced mod p.
    pub fn pseudo_share_fe(&self, pk_sum: Fe, csp: usize) -> Fe {
        let m = self.keys.he2_multipliers[&self.csp_id(csp)];
        self.field.mul(pk_sum, m)
    }

    /// One-way record signature `HF*_i(bytes)`.
    pub fn hf_star(&self, csp: usize, bytes: &[u8]) -> Fe {
        let d = keyed_digest(&self.keys.hf_star_keys[csp - 1], &[bytes]);
        let v = u128::from_be_bytes(d[..16].try_into().unwrap());
        self.field.elem((v % self.field.modulus() as u128) as u64)
    }

    /// Table marker `HF*_i(0)` for an empty table.
    pub fn empty_table_marker(&self, csp: usize) -> Fe {
        self.hf_star(csp, &0u64.to_be_bytes())
    }

    pub fn he_star(&self, csp: usize, h: Fe) -> Fe {
        self.field.mul(self.keys.he_star_scalars[csp - 1], h)
    }

    /// Deterministic per-purpose keyed digest, used for placement and cube
    /// filler values.
    pub fn keyed_hash(&self, label: &[u8], parts: &[&[u8]]) -> [u8; 32] {
        let mut all: Vec<&[u8]> = vec![label];
        all.extend_from_slice(parts);
        keyed_digest(&self.keys.master_seed, &all)
    }

    /// Human-readable dump of the key material (client-side only).
    pub fn describe(&self) -> String {
        let mut s = String::new();
        let c = &self.config;
        let k = &self.keys;
        let _ = writeln!(s, "p\t{}\nn\t{}\nt\t{}", c.p, c.n, c.t);
        for (i, id) in c.ids.iter().enumerate() {
            let _ = writeln!(
                s,
                "csp{}\tid={}\thf1={}\the2={}\the_star={}",
                i + 1,
                id,
                self.points.points[id],
                k.he2_multipliers[id],
                k.he_star_scalars[i]
            );
        }
        let _ = writeln!(s, "k_d\t{}\thf1={}", k.k_d, self.points.points[&k.k_d]);
        let _ = writeln!(s, "k_s\t{}\thf1={}", k.k_s, self.points.points[&k.k_s]);
        let _ = writeln!(s, "he1\t{}", k.he1_scalar);
        let fillers: Vec<String> = self.points.fillers.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "fillers\t{}", fillers.join(","));
        s
    }
}
