//! Share generation, storage-group placement and checked reconstruction.
//!
//! For a secret `d` owned by a record with key `pk`, the sharing polynomial
//! passes through `t` points:
//!
//! * `(HF1(K_d), d)` and `(HF1(K_s), HE1(d))`,
//! * `(HF1(ID_i), HE2(pk, ID_i))` for every CSP `i` outside the storage group.
//!
//! Only the `n - t + 2` storage-group members receive a real share. Any other
//! CSP's share is the pseudo share anyone with the plaintext key can compute.

use std::fmt;

use crate::error::{Error, Result};
use crate::field::{lagrange_eval, lagrange_interpolate, Fe, Polynomial};
use crate::keys::Scheme;
use crate::schema::{Codec, ColumnType, StoredValue, TableSchema, Value};

/// A set of 1-based CSP indices, also used as the Type I location bitmap.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CspSet {
    bits: u64,
    n: usize,
}

impl CspSet {
    pub fn empty(n: usize) -> Self {
        Self { bits: 0, n }
    }

    pub fn full(n: usize) -> Self {
        let bits = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Self { bits, n }
    }

    pub fn from_members(n: usize, members: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut s = Self::empty(n);
        for m in members {
            if m == 0 || m > n {
                return Err(Error::OutOfRange(format!("CSP index {m} outside 1..={n}")));
            }
            s.insert(m);
        }
        Ok(s)
    }

    /// Parses the `10101` form, CSP 1 leftmost.
    pub fn parse(s: &str) -> Result<Self> {
        let mut set = Self::empty(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' => set.insert(i + 1),
                '0' => {}
                _ => return Err(Error::StoreFormat(format!("bad bitmap `{s}`"))),
            }
        }
        Ok(set)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn contains(&self, csp: usize) -> bool {
        csp >= 1 && csp <= self.n && self.bits >> (csp - 1) & 1 == 1
    }

    pub fn insert(&mut self, csp: usize) {
        self.bits |= 1 << (csp - 1);
    }

    pub fn remove(&mut self, csp: usize) {
        self.bits &= !(1 << (csp - 1));
    }

    pub fn len(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (1..=self.n).filter(|&i| self.contains(i))
    }

    pub fn complement(&self) -> Self {
        Self { bits: !self.bits & Self::full(self.n).bits, n: self.n }
    }
}

impl fmt::Display for CspSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 1..=self.n {
            f.write_str(if self.contains(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for CspSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CspSet({self})")
    }
}

/// CSPs holding a record (`sg`) and the ones answering with pseudo shares (`ug`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StorageGroup {
    pub sg: CspSet,
    pub ug: CspSet,
}

impl StorageGroup {
    pub fn new(scheme: &Scheme, sg: CspSet) -> Result<Self> {
        if sg.n() != scheme.n() || sg.len() != scheme.config().group_size() {
            return Err(Error::InvalidConfig(format!(
                "storage group {sg} must hold {} of {} CSPs",
                scheme.config().group_size(),
                scheme.n()
            )));
        }
        Ok(Self { sg, ug: sg.complement() })
    }
}

/// Relative share of records each CSP should receive. Zero excludes a CSP
/// unless too few positive-weight CSPs are alive.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementPolicy {
    pub weights: Vec<f64>,
}

impl PlacementPolicy {
    pub fn uniform(n: usize) -> Self {
        Self { weights: vec![1.0; n] }
    }
}

/// Weighted rendezvous placement on a keyed hash of `(table, pk)`.
pub fn select_storage_group(
    scheme: &Scheme,
    table: &str,
    pk: u64,
    policy: &PlacementPolicy,
    alive: CspSet,
) -> Result<StorageGroup> {
    let need = scheme.config().group_size();
    if alive.len() < need {
        return Err(Error::NotEnoughAliveCsps { alive: alive.len(), needed: need });
    }
    let mut scored: Vec<(bool, f64, usize)> = alive
        .members()
        .map(|csp| {
            let w = policy.weights.get(csp - 1).copied().unwrap_or(0.0);
            let h = scheme.keyed_hash(b"placement", &[table.as_bytes(), &pk.to_be_bytes(), &(csp as u64).to_be_bytes()]);
            let u = (u64::from_be_bytes(h[..8].try_into().unwrap()) >> 11) as f64 / (1u64 << 53) as f64;
            let u = u.max(f64::MIN_POSITIVE);
            if w > 0.0 {
                (false, -u.ln() / w, csp)
            } else {
                (true, -u.ln(), csp)
            }
        })
        .collect();
    scored.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let sg = CspSet::from_members(scheme.n(), scored.iter().take(need).map(|s| s.2))?;
    StorageGroup::new(scheme, sg)
}

/// Builds the sharing polynomial of `d` for a record keyed `pk`.
pub fn sharing_polynomial(scheme: &Scheme, d: Fe, pk: u64, group: &StorageGroup) -> Result<Polynomial> {
    let mut pts = Vec::with_capacity(scheme.t());
    pts.push((scheme.x_data(), d));
    pts.push((scheme.x_sig(), scheme.he1(d)));
    pts.extend(group.ug.members().map(|i| (scheme.x_csp(i), scheme.pseudo_share(pk, i))));
    lagrange_interpolate(scheme.field(), &pts)
}

/// Shares `d` and returns `(csp, share)` for every storage-group member.
pub fn share_value(scheme: &Scheme, d: Fe, pk: u64, group: &StorageGroup) -> Result<Vec<(usize, Fe)>> {
    let f = sharing_polynomial(scheme, d, pk, group)?;
    Ok(group.sg.members().map(|i| (i, f.eval(scheme.field(), scheme.x_csp(i)))).collect())
}

/// Shares `d` at all `n` CSPs, with the reserved filler abscissas taking the
/// place of pseudo shares. `seed` labels the value so fillers are reproducible.
pub fn share_value_everywhere(scheme: &Scheme, d: Fe, seed: &[u8]) -> Result<Vec<Fe>> {
    let field = scheme.field();
    let mut pts = vec![(scheme.x_data(), d), (scheme.x_sig(), scheme.he1(d))];
    for (j, x) in scheme.filler_xs().enumerate() {
        let h = scheme.keyed_hash(b"filler-y", &[seed, &(j as u64).to_be_bytes()]);
        let y = u128::from_be_bytes(h[..16].try_into().unwrap()) % field.modulus() as u128;
        pts.push((x, field.elem(y as u64)));
    }
    let f = lagrange_interpolate(field, &pts)?;
    Ok((1..=scheme.n()).map(|i| f.eval(field, scheme.x_csp(i))).collect())
}

/// Interpolates `(HF1(ID_i), y_i)` for the members of `rg`, checks the
/// inner signature and returns the secret.
pub fn recombine(scheme: &Scheme, rg: &[usize], ys: &[Fe]) -> Result<Fe> {
    let poly = recombine_polynomial(scheme, rg, ys)?;
    Ok(poly.eval(scheme.field(), scheme.x_data()))
}

/// As [`recombine`] but returns the whole checked polynomial.
pub fn recombine_polynomial(scheme: &Scheme, rg: &[usize], ys: &[Fe]) -> Result<Polynomial> {
    if rg.len() != scheme.t() || ys.len() != rg.len() {
        return Err(Error::InvalidConfig(format!("reconstruction needs {} points, got {}", scheme.t(), rg.len())));
    }
    let pts: Vec<(Fe, Fe)> = rg.iter().zip(ys).map(|(&i, &y)| (scheme.x_csp(i), y)).collect();
    let f = lagrange_interpolate(scheme.field(), &pts)?;
    let field = scheme.field();
    if f.eval(field, scheme.x_sig()) != scheme.he1(f.eval(field, scheme.x_data())) {
        return Err(Error::InnerSignatureMismatch { rg: rg.to_vec(), context: None });
    }
    Ok(f)
}

/// Evaluates only the two reconstruction coordinates; cheaper than a full
/// interpolation when the polynomial itself is not needed.
pub fn recombine_fast(scheme: &Scheme, rg: &[usize], ys: &[Fe]) -> Result<Fe> {
    if rg.len() != scheme.t() || ys.len() != rg.len() {
        return Err(Error::InvalidConfig(format!("reconstruction needs {} points, got {}", scheme.t(), rg.len())));
    }
    let pts: Vec<(Fe, Fe)> = rg.iter().zip(ys).map(|(&i, &y)| (scheme.x_csp(i), y)).collect();
    let d = lagrange_eval(scheme.field(), &pts, scheme.x_data())?;
    let s = lagrange_eval(scheme.field(), &pts, scheme.x_sig())?;
    if s != scheme.he1(d) {
        return Err(Error::InnerSignatureMismatch { rg: rg.to_vec(), context: None });
    }
    Ok(d)
}

/// Lagrange basis weights of a fixed reconstruction group, evaluated at the
/// data and signature abscissas (and optionally more points). Recombining a
/// chunk then costs `O(t)`.
#[derive(Clone, Debug)]
pub struct Recombiner {
    rg: Vec<usize>,
    at_data: Vec<Fe>,
    at_sig: Vec<Fe>,
    at_extra: Vec<Vec<Fe>>,
}

impl Recombiner {
    pub fn new(scheme: &Scheme, rg: &[usize], extra: &[Fe]) -> Result<Self> {
        if rg.len() != scheme.t() {
            return Err(Error::InvalidConfig(format!("reconstruction needs {} CSPs, got {}", scheme.t(), rg.len())));
        }
        let f = scheme.field();
        let xs: Vec<Fe> = rg.iter().map(|&i| scheme.x_csp(i)).collect();
        for (i, x) in xs.iter().enumerate() {
            if xs[..i].contains(x) {
                return Err(Error::DuplicateAbscissa(x.value()));
            }
        }
        let basis = |at: Fe| -> Vec<Fe> {
            (0..xs.len())
                .map(|i| {
                    let (mut num, mut den) = (f.elem(1), f.elem(1));
                    for (j, &xj) in xs.iter().enumerate() {
                        if i != j {
                            num = f.mul(num, f.sub(at, xj));
                            den = f.mul(den, f.sub(xs[i], xj));
                        }
                    }
                    f.mul(num, f.inv(den).expect("distinct abscissas"))
                })
                .collect()
        };
        Ok(Self {
            rg: rg.to_vec(),
            at_data: basis(scheme.x_data()),
            at_sig: basis(scheme.x_sig()),
            at_extra: extra.iter().map(|&x| basis(x)).collect(),
        })
    }

    pub fn rg(&self) -> &[usize] {
        &self.rg
    }

    fn dot(scheme: &Scheme, w: &[Fe], ys: &[Fe]) -> Fe {
        let f = scheme.field();
        f.sum(w.iter().zip(ys).map(|(&a, &b)| f.mul(a, b)))
    }

    /// Secret behind `ys` (ordered like `rg`), after the inner-signature check.
    pub fn combine(&self, scheme: &Scheme, ys: &[Fe]) -> Result<Fe> {
        let d = Self::dot(scheme, &self.at_data, ys);
        if Self::dot(scheme, &self.at_sig, ys) != scheme.he1(d) {
            return Err(Error::InnerSignatureMismatch { rg: self.rg.clone(), context: None });
        }
        Ok(d)
    }

    /// Value of the interpolated polynomial at the `k`-th extra abscissa.
    pub fn extra(&self, scheme: &Scheme, k: usize, ys: &[Fe]) -> Fe {
        Self::dot(scheme, &self.at_extra[k], ys)
    }
}

/// Reconstructs one chunk of record `pk`. `fetched(i)` returns CSP `i`'s
/// stored share, consulted only for members of `bitmap`.
pub fn reconstruct_value(
    scheme: &Scheme,
    pk: u64,
    bitmap: CspSet,
    rg: &[usize],
    mut fetched: impl FnMut(usize) -> Option<Fe>,
) -> Result<Fe> {
    let ys = rg
        .iter()
        .map(|&i| {
            if bitmap.contains(i) {
                fetched(i).ok_or(Error::MissingShare { csp: i, table: String::new(), pk })
            } else {
                Ok(scheme.pseudo_share(pk, i))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    recombine_fast(scheme, rg, &ys)
}

/// One stored attribute of a shared record at one CSP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StoredAttr {
    Null,
    Key(u64),
    Shares(Vec<Fe>),
}

/// The per-CSP pieces of one shared record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareBundle {
    pub pk: u64,
    pub bitmap: CspSet,
    /// `(csp, attributes in stored-column order)` for each storage-group member.
    pub parts: Vec<(usize, Vec<StoredAttr>)>,
}

impl ShareBundle {
    pub fn part(&self, csp: usize) -> Option<&[StoredAttr]> {
        self.parts.iter().find(|(c, _)| *c == csp).map(|(_, a)| a.as_slice())
    }
}

/// Shares every stored column of `row` with the same storage group.
pub fn share_record(
    scheme: &Scheme,
    codec: &Codec,
    schema: &TableSchema,
    row: &[Value],
    group: &StorageGroup,
) -> Result<ShareBundle> {
    let pk = schema.pk_of(row)?;
    let cols = schema.stored_columns();
    let values = schema.stored_values(row)?;
    let members: Vec<usize> = group.sg.members().collect();
    let mut parts: Vec<(usize, Vec<StoredAttr>)> =
        members.iter().map(|&c| (c, Vec::with_capacity(cols.len()))).collect();
    for (col, value) in cols.iter().zip(&values) {
        match (col.ty, value) {
            (_, StoredValue::Plain(Value::Null)) => parts.iter_mut().for_each(|p| p.1.push(StoredAttr::Null)),
            (ColumnType::ForeignKey, StoredValue::Plain(Value::Key(k))) => {
                parts.iter_mut().for_each(|p| p.1.push(StoredAttr::Key(*k)))
            }
            _ => {
                let enc = codec.encode_stored(value, col.ty)?;
                let mut per_csp: Vec<Vec<Fe>> = vec![Vec::with_capacity(enc.chunks.len()); members.len()];
                for &chunk in &enc.chunks {
                    for (slot, (_, s)) in per_csp.iter_mut().zip(share_value(scheme, chunk, pk, group)?) {
                        slot.push(s);
                    }
                }
                for (p, shares) in parts.iter_mut().zip(per_csp) {
                    p.1.push(StoredAttr::Shares(shares));
                }
            }
        }
    }
    Ok(ShareBundle { pk, bitmap: group.sg, parts })
}

/// Canonical bytes of a stored record, input to `HF*_i`.
pub fn record_bytes(pk: u64, attrs: &[StoredAttr]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + attrs.len() * 8);
    out.extend_from_slice(&pk.to_be_bytes());
    for a in attrs {
        match a {
            StoredAttr::Null => out.push(0xFF),
            StoredAttr::Key(k) => out.extend_from_slice(&k.to_be_bytes()),
            StoredAttr::Shares(s) => s.iter().for_each(|v| out.extend_from_slice(&v.value().to_be_bytes())),
        }
    }
    out
}
