//! Name resolution and rewriting of a parsed query into index-server work,
//! per-CSP partial aggregates and client-side reconstruction rules.

use std::fmt;

use super::ast::*;
use crate::error::{Error, Result};
use crate::schema::{ColumnType, Derived, IndexKey, TableSchema, Value};
use crate::store::index::Predicate;
use crate::warehouse::Warehouse;

/// One table occurrence in FROM / JOIN.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Source {
    pub alias: String,
    pub table: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColKind {
    PrimaryKey,
    /// Plaintext foreign key at this stored position.
    ForeignKey(usize),
    /// Shared column at this stored position.
    Shared(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundColumn {
    pub source: usize,
    pub name: String,
    pub ty: ColumnType,
    pub kind: ColKind,
}

impl BoundColumn {
    pub fn is_key(&self) -> bool {
        !matches!(self.kind, ColKind::Shared(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinEdge {
    /// Column of an earlier source.
    pub existing: BoundColumn,
    /// Column of the source this join introduces.
    pub incoming: BoundColumn,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundFilter {
    pub column: BoundColumn,
    pub predicate: Predicate,
    pub text: String,
}

/// One shared column with a coefficient in a homomorphic sum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Term {
    pub stored: usize,
    pub coef: i64,
    pub ty: ColumnType,
}

/// `Σ coef·column` over one source, at a common decimal scale.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    pub source: usize,
    pub terms: Vec<Term>,
    pub scale: u32,
    pub text: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderFn {
    Min,
    Max,
    Median,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Measure {
    CountRows,
    Count(BoundColumn),
    Sum(Linear),
    Avg(Linear),
    Var { x: Linear, square: usize },
    Stddev { x: Linear, square: usize },
    Order(OrderFn, BoundColumn),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Output {
    /// A column value of each joined row (queries without grouping).
    Plain(BoundColumn),
    /// The value of the `i`-th GROUP BY column.
    Label(usize),
    Measure(Measure),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutputColumn {
    pub name: String,
    pub expr: Output,
}

/// Who performs a step: client, index server or the CSPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Actor {
    User,
    IndexServer,
    Csp,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Actor::User => "U",
            Actor::IndexServer => "IS",
            Actor::Csp => "CSP",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepKind {
    TypeTwoLookup,
    KeyFilter,
    KeyJoin,
    CspSubquery,
    PseudoSums,
    GroupLabels,
    TypeTwoAggregate,
    Reconstruct,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub actor: Actor,
    pub kind: StepKind,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryPlan {
    pub query: Query,
    pub sources: Vec<Source>,
    pub joins: Vec<JoinEdge>,
    pub filters: Vec<BoundFilter>,
    pub group_by: Vec<BoundColumn>,
    pub outputs: Vec<OutputColumn>,
    /// True when rows are groups rather than joined records.
    pub grouped: bool,
    pub steps: Vec<Step>,
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(f, "{}. ({}) {}", i + 1, s.actor, s.text)?;
        }
        Ok(())
    }
}

struct Resolver<'a> {
    wh: &'a Warehouse,
    sources: Vec<Source>,
    schemas: Vec<&'a TableSchema>,
}

impl<'a> Resolver<'a> {
    fn add_source(&mut self, t: &TableRef) -> Result<usize> {
        let catalog = &self.wh.index().catalog;
        let table = if catalog.contains_key(&t.name) {
            t.name.clone()
        } else {
            catalog
                .keys()
                .find(|k| k.eq_ignore_ascii_case(&t.name))
                .cloned()
                .ok_or_else(|| Error::UnknownTable(t.name.clone()))?
        };
        let alias = t.visible_name().to_string();
        if self.sources.iter().any(|s| s.alias.eq_ignore_ascii_case(&alias)) {
            return Err(Error::UnsupportedFeature(format!("`{alias}` appears twice in FROM; give it another alias")));
        }
        self.schemas.push(self.wh.schema(&table)?);
        self.sources.push(Source { alias, table });
        Ok(self.sources.len() - 1)
    }

    fn bind_in(&self, source: usize, name: &str) -> Option<BoundColumn> {
        let schema = self.schemas[source];
        let c = schema.column(name).ok()?;
        let kind = match c.ty {
            ColumnType::PrimaryKey => ColKind::PrimaryKey,
            ColumnType::ForeignKey => ColKind::ForeignKey(schema.stored_index(&c.name).expect("stored")),
            _ => ColKind::Shared(schema.stored_index(&c.name).expect("stored")),
        };
        Some(BoundColumn { source, name: c.name.clone(), ty: c.ty, kind })
    }

    fn bind(&self, c: &ColumnRef) -> Result<BoundColumn> {
        match &c.qualifier {
            Some(q) => {
                let s = self
                    .sources
                    .iter()
                    .position(|s| s.alias.eq_ignore_ascii_case(q))
                    .ok_or_else(|| Error::UnknownTable(q.clone()))?;
                self.bind_in(s, &c.name).ok_or_else(|| Error::UnknownColumn(format!("{q}.{}", c.name)))
            }
            None => {
                let hits: Vec<BoundColumn> = (0..self.sources.len()).filter_map(|s| self.bind_in(s, &c.name)).collect();
                match hits.len() {
                    1 => Ok(hits.into_iter().next().expect("one hit")),
                    0 => Err(Error::UnknownColumn(c.name.clone())),
                    _ => Err(Error::UnknownColumn(format!("{} is ambiguous; qualify it", c.name))),
                }
            }
        }
    }

    fn label(&self, c: &BoundColumn) -> String {
        format!("{}.{}", self.sources[c.source].alias, c.name)
    }

    fn shared_numeric(&self, c: &BoundColumn, what: &str) -> Result<usize> {
        match (c.kind, c.ty) {
            (ColKind::Shared(i), ColumnType::Int | ColumnType::Real { .. } | ColumnType::Bool) => Ok(i),
            _ => Err(Error::SchemaMismatch(format!("{what} needs a numeric shared column, {} is {}", self.label(c), c.ty))),
        }
    }

    fn derived(&self, source: usize, kinds: &[Derived]) -> Result<(usize, ColumnType)> {
        let schema = self.schemas[source];
        for k in kinds {
            if let Some(i) = schema.stored_index(&k.name()) {
                return Ok((i, schema.stored_columns()[i].ty));
            }
        }
        Err(Error::MissingTypeThreeColumn(format!("{}.{}", schema.name, kinds[0].name())))
    }

    fn linear(&self, arg: &AggArg, func: AggFunc) -> Result<Linear> {
        let what = func.name();
        match arg {
            AggArg::Star => Err(Error::SchemaMismatch(format!("{what}(*) is not defined"))),
            AggArg::Column(c) => {
                let b = self.bind(c)?;
                let stored = self.shared_numeric(&b, what)?;
                Ok(Linear {
                    source: b.source,
                    terms: vec![Term { stored, coef: 1, ty: b.ty }],
                    scale: b.ty.scale(),
                    text: self.label(&b),
                })
            }
            AggArg::Binary(x, op, y) => {
                let (bx, by) = (self.bind(x)?, self.bind(y)?);
                if bx.source != by.source {
                    return Err(Error::UnsupportedFeature(format!(
                        "{what}({arg}) combines columns of different tables"
                    )));
                }
                let sx = self.shared_numeric(&bx, what)?;
                let sy = self.shared_numeric(&by, what)?;
                let text = format!("{} {} {}", self.label(&bx), op.symbol(), self.label(&by));
                match op {
                    BinOp::Add | BinOp::Sub => {
                        let scale = bx.ty.scale().max(by.ty.scale());
                        let up = |ty: ColumnType| 10i64.pow(scale - ty.scale());
                        let sign = if *op == BinOp::Add { 1 } else { -1 };
                        Ok(Linear {
                            source: bx.source,
                            terms: vec![
                                Term { stored: sx, coef: up(bx.ty), ty: bx.ty },
                                Term { stored: sy, coef: sign * up(by.ty), ty: by.ty },
                            ],
                            scale,
                            text,
                        })
                    }
                    BinOp::Mul | BinOp::Div => {
                        let (nx, ny) = (bx.name.clone(), by.name.clone());
                        let kinds = if *op == BinOp::Mul {
                            vec![Derived::Product(nx.clone(), ny.clone()), Derived::Product(ny, nx)]
                        } else {
                            vec![Derived::Quotient(nx, ny)]
                        };
                        let (stored, ty) = self.derived(bx.source, &kinds)?;
                        Ok(Linear { source: bx.source, terms: vec![Term { stored, coef: 1, ty }], scale: ty.scale(), text })
                    }
                }
            }
        }
    }

    fn measure(&self, func: AggFunc, arg: &AggArg) -> Result<Measure> {
        Ok(match func {
            AggFunc::Count => match arg {
                AggArg::Star => Measure::CountRows,
                AggArg::Column(c) => Measure::Count(self.bind(c)?),
                AggArg::Binary(..) => return Err(Error::UnsupportedFeature(format!("COUNT({arg})"))),
            },
            AggFunc::Sum => Measure::Sum(self.linear(arg, func)?),
            AggFunc::Avg => Measure::Avg(self.linear(arg, func)?),
            AggFunc::Var | AggFunc::Stddev => {
                let AggArg::Column(c) = arg else {
                    return Err(Error::UnsupportedFeature(format!("{}({arg}); use a single column", func.name())));
                };
                let x = self.linear(arg, func)?;
                let b = self.bind(c)?;
                let (square, _) = self.derived(b.source, &[Derived::Square(b.name.clone())])?;
                if func == AggFunc::Var {
                    Measure::Var { x, square }
                } else {
                    Measure::Stddev { x, square }
                }
            }
            AggFunc::Min | AggFunc::Max | AggFunc::Median => {
                let AggArg::Column(c) = arg else {
                    return Err(Error::UnsupportedFeature(format!("{}({arg}); use a single column", func.name())));
                };
                let b = self.bind(c)?;
                if !b.is_key() {
                    let table = &self.sources[b.source].table;
                    if !self.wh.index().is_ordered(table, &b.name) {
                        return Err(Error::NotIndexed { table: table.clone(), column: b.name.clone() });
                    }
                }
                let f = match func {
                    AggFunc::Min => OrderFn::Min,
                    AggFunc::Max => OrderFn::Max,
                    _ => OrderFn::Median,
                };
                Measure::Order(f, b)
            }
        })
    }

    fn predicate(&self, b: &BoundColumn, op: &CondOp) -> Result<Predicate> {
        let ty = if b.is_key() { ColumnType::ForeignKey } else { b.ty };
        let key = |l: &Literal| -> Result<IndexKey> {
            let v = Value::parse(&l.text, ty)?;
            v.index_key(ty).ok_or_else(|| {
                Error::UnsupportedFeature(format!("comparison with NULL on {}; use IS NULL", self.label(b)))
            })
        };
        Ok(match op {
            CondOp::Cmp(op, l) => {
                let k = key(l)?;
                match op {
                    CmpOp::Eq => Predicate::Eq(k),
                    CmpOp::Ne => Predicate::Ne(k),
                    CmpOp::Lt => Predicate::Lt(k),
                    CmpOp::Le => Predicate::Le(k),
                    CmpOp::Gt => Predicate::Gt(k),
                    CmpOp::Ge => Predicate::Ge(k),
                }
            }
            CondOp::Between(a, c) => Predicate::Between(key(a)?, key(c)?),
            CondOp::In(vs) => Predicate::In(vs.iter().map(key).collect::<Result<_>>()?),
            CondOp::IsNull => Predicate::IsNull,
            CondOp::IsNotNull => Predicate::IsNotNull,
        })
    }
}

/// Resolves names against the catalog and rewrites the query.
pub fn plan(query: &Query, wh: &Warehouse) -> Result<QueryPlan> {
    let mut r = Resolver { wh, sources: Vec::new(), schemas: Vec::new() };
    r.add_source(&query.from)?;
    let mut joins = Vec::new();
    for j in &query.joins {
        let s = r.add_source(&j.table)?;
        let (l, rt) = (r.bind(&j.left)?, r.bind(&j.right)?);
        let (existing, incoming) = match (l.source == s, rt.source == s) {
            (false, true) => (l, rt),
            (true, false) => (rt, l),
            _ => {
                return Err(Error::UnsupportedFeature(format!(
                    "join condition {} = {} must link {} to an earlier table",
                    j.left, j.right, j.table
                )))
            }
        };
        if !existing.is_key() || !incoming.is_key() {
            return Err(Error::UnsupportedFeature(format!(
                "joins run on plaintext keys only; {} = {} involves a shared column",
                j.left, j.right
            )));
        }
        joins.push(JoinEdge { existing, incoming });
    }

    let mut filters = Vec::new();
    for c in &query.filters {
        let b = r.bind(&c.column)?;
        if !b.is_key() {
            let table = &r.sources[b.source].table;
            if !wh.index().is_ordered(table, &b.name) {
                return Err(Error::NotIndexed { table: table.clone(), column: b.name.clone() });
            }
        }
        let predicate = r.predicate(&b, &c.op)?;
        filters.push(BoundFilter { text: format!("{} {}", r.label(&b), c.op), column: b, predicate });
    }

    let mut group_by = Vec::new();
    for c in &query.group_by {
        let b = r.bind(c)?;
        if !b.is_key() {
            let table = &r.sources[b.source].table;
            if !wh.index().is_ordered(table, &b.name) {
                return Err(Error::NotIndexed { table: table.clone(), column: b.name.clone() });
            }
        }
        if !group_by.contains(&b) {
            group_by.push(b);
        }
    }

    let grouped = !query.group_by.is_empty() || query.aggregates().next().is_some();
    let mut outputs = Vec::new();
    match &query.select {
        SelectList::Star => {
            if grouped {
                return Err(Error::UnsupportedFeature("SELECT * with GROUP BY".into()));
            }
            let qualify = r.sources.len() > 1;
            for (s, schema) in r.schemas.iter().enumerate() {
                for c in &schema.columns {
                    let b = r.bind_in(s, &c.name).expect("own column");
                    let name = if qualify { r.label(&b) } else { c.name.clone() };
                    outputs.push(OutputColumn { name, expr: Output::Plain(b) });
                }
            }
        }
        SelectList::Items(items) => {
            for it in items {
                let name = it.alias.clone().unwrap_or_else(|| it.expr.to_string());
                let expr = match &it.expr {
                    SelectExpr::Column(c) => {
                        let b = r.bind(c)?;
                        if grouped {
                            let i = group_by.iter().position(|g| *g == b).ok_or_else(|| {
                                Error::UnsupportedFeature(format!("{c} must appear in GROUP BY"))
                            })?;
                            Output::Label(i)
                        } else {
                            Output::Plain(b)
                        }
                    }
                    SelectExpr::Aggregate { func, arg } => Output::Measure(r.measure(*func, arg)?),
                };
                outputs.push(OutputColumn { name, expr });
            }
        }
    }

    let mut plan = QueryPlan {
        query: query.clone(),
        sources: r.sources.clone(),
        joins,
        filters,
        group_by,
        outputs,
        grouped,
        steps: Vec::new(),
    };
    plan.steps = describe(&plan, &r);
    Ok(plan)
}

fn set_name(alias: &str) -> String {
    format!("{alias}K")
}

fn describe(plan: &QueryPlan, r: &Resolver<'_>) -> Vec<Step> {
    let mut steps = Vec::new();
    let label = |c: &BoundColumn| r.label(c);
    let alias = |s: usize| plan.sources[s].alias.as_str();
    let pk_label = |s: usize| format!("{}.{}", alias(s), r.schemas[s].pk_name());

    // 1. index lookups
    let mut filtered = vec![false; plan.sources.len()];
    for f in &plan.filters {
        filtered[f.column.source] = true;
        let (actor, kind, how) = if f.column.is_key() {
            (Actor::IndexServer, StepKind::KeyFilter, "Filter plaintext keys in Type I index")
        } else {
            (Actor::IndexServer, StepKind::TypeTwoLookup, "Match in Type II index")
        };
        let set = set_name(alias(f.column.source));
        steps.push(Step { actor, kind, text: format!("{how} {}: {} -> {set}", plan.sources[f.column.source].table, f.text) });
    }

    // sources whose columns reach the CSPs or the output
    let mut used = vec![false; plan.sources.len()];
    used[0] = true;
    for c in &plan.group_by {
        used[c.source] = true;
    }
    for o in &plan.outputs {
        match &o.expr {
            Output::Plain(c) | Output::Measure(Measure::Count(c)) | Output::Measure(Measure::Order(_, c)) => used[c.source] = true,
            Output::Measure(Measure::Sum(l) | Measure::Avg(l) | Measure::Var { x: l, .. } | Measure::Stddev { x: l, .. }) => {
                used[l.source] = true
            }
            Output::Label(_) | Output::Measure(Measure::CountRows) => {}
        }
    }
    let mut kept_joins = Vec::new();
    let mut where_parts = Vec::new();
    for (s, f) in filtered.iter().enumerate() {
        if *f && (used[s] || s == 0) {
            where_parts.push(format!("{} IN ({})", pk_label(s), set_name(alias(s))));
        }
    }
    for j in &plan.joins {
        let s = j.incoming.source;
        let leaf = !used[s] && !plan.joins.iter().any(|o| o.existing.source == s);
        steps.push(Step {
            actor: Actor::IndexServer,
            kind: StepKind::KeyJoin,
            text: format!("Join on plaintext keys in Type I index: {} = {}", label(&j.existing), label(&j.incoming)),
        });
        if leaf && j.incoming.kind == ColKind::PrimaryKey {
            if filtered[s] {
                where_parts.push(format!("{} IN ({})", label(&j.existing), set_name(alias(s))));
            }
        } else {
            kept_joins.push(j);
        }
    }

    // 2. per-CSP subquery
    let mut csp_keys: Vec<String> = Vec::new();
    for c in &plan.group_by {
        let k = if c.is_key() { label(c) } else { pk_label(c.source) };
        if !csp_keys.contains(&k) {
            csp_keys.push(k);
        }
    }
    let mut partials: Vec<String> = Vec::new();
    let mut fetched: Vec<String> = Vec::new();
    for o in &plan.outputs {
        match &o.expr {
            Output::Measure(Measure::Sum(l) | Measure::Avg(l)) => partials.push(format!("SUM({})", l.text)),
            Output::Measure(Measure::Var { x, .. } | Measure::Stddev { x, .. }) => {
                partials.push(format!("SUM({})", x.text));
                partials.push(format!("SUM({}^2)", x.text));
            }
            Output::Plain(c) if !c.is_key() => fetched.push(label(c)),
            _ => {}
        }
    }
    if !partials.is_empty() || !fetched.is_empty() {
        let mut q = String::from("SELECT ");
        let cols: Vec<String> = if partials.is_empty() {
            plan.sources.iter().enumerate().filter(|(s, _)| used[*s]).map(|(s, _)| pk_label(s)).chain(fetched).collect()
        } else {
            csp_keys.iter().cloned().chain(partials.iter().cloned()).collect()
        };
        q.push_str(&cols.join(", "));
        q.push_str(&format!(" FROM {} AS {}", plan.sources[0].table, alias(0)));
        for j in &kept_joins {
            let s = j.incoming.source;
            q.push_str(&format!(
                " JOIN {} AS {} ON {} = {}",
                plan.sources[s].table,
                alias(s),
                label(&j.existing),
                label(&j.incoming)
            ));
        }
        if !where_parts.is_empty() {
            q.push_str(" WHERE ");
            q.push_str(&where_parts.join(" AND "));
        }
        if !partials.is_empty() && !csp_keys.is_empty() {
            q.push_str(" GROUP BY ");
            q.push_str(&csp_keys.join(", "));
        }
        steps.push(Step { actor: Actor::Csp, kind: StepKind::CspSubquery, text: format!("Run at t CSPs: {q}") });
    }

    // 3. pseudo-share key sums and other index-server aggregates
    let mut sum_sources: Vec<usize> = Vec::new();
    for o in &plan.outputs {
        if let Output::Measure(Measure::Sum(l) | Measure::Avg(l) | Measure::Var { x: l, .. } | Measure::Stddev { x: l, .. }) = &o.expr {
            if !sum_sources.contains(&l.source) {
                sum_sources.push(l.source);
            }
        }
    }
    for s in sum_sources {
        let by = if csp_keys.is_empty() { String::new() } else { format!(" GROUP BY {}", csp_keys.join(", ")) };
        steps.push(Step {
            actor: Actor::IndexServer,
            kind: StepKind::PseudoSums,
            text: format!(
                "Sum keys of {} rows missing at each CSP from Type I index: SELECT SUM({}) AS sumPK{by}",
                plan.sources[s].table,
                pk_label(s)
            ),
        });
    }
    let labels: Vec<String> = plan.group_by.iter().filter(|c| !c.is_key()).map(label).collect();
    if !labels.is_empty() {
        steps.push(Step {
            actor: Actor::IndexServer,
            kind: StepKind::GroupLabels,
            text: format!("Read group labels {} from Type II index and merge key groups", labels.join(", ")),
        });
    }
    for o in &plan.outputs {
        match &o.expr {
            Output::Measure(Measure::Order(f, c)) if !c.is_key() => {
                let name = match f {
                    OrderFn::Min => "MIN",
                    OrderFn::Max => "MAX",
                    OrderFn::Median => "MEDIAN",
                };
                steps.push(Step {
                    actor: Actor::IndexServer,
                    kind: StepKind::TypeTwoAggregate,
                    text: format!("Find the {name} record of {} in Type II index", label(c)),
                });
            }
            Output::Measure(Measure::Count(_) | Measure::CountRows) => steps.push(Step {
                actor: Actor::IndexServer,
                kind: StepKind::TypeTwoAggregate,
                text: format!("Count {} from Type I index", o.name),
            }),
            _ => {}
        }
    }

    // 4. reconstruction rules
    for o in &plan.outputs {
        let rule = match &o.expr {
            Output::Measure(Measure::Sum(l)) => Some(sum_rule(l)),
            Output::Measure(Measure::Avg(l)) => Some(format!("{} / COUNT", sum_rule(l))),
            Output::Measure(Measure::Var { x, .. } | Measure::Stddev { x, .. }) => Some(format!(
                "{} and SUM({}^2) likewise, then SUM(x^2)/COUNT - (SUM(x)/COUNT)^2",
                sum_rule(x),
                x.text
            )),
            Output::Measure(Measure::Order(_, c)) if !c.is_key() => {
                Some(format!("fetch and interpolate the chosen record's {} shares", label(c)))
            }
            Output::Plain(c) if !c.is_key() => Some(format!("interpolate {} from shares and pseudo shares", label(c))),
            _ => None,
        };
        if let Some(rule) = rule {
            steps.push(Step { actor: Actor::User, kind: StepKind::Reconstruct, text: format!("Reconstruct {}: {rule}", o.name) });
        }
    }
    steps
}

fn sum_rule(l: &Linear) -> String {
    let k: i64 = l.terms.iter().map(|t| t.coef).sum();
    let corr = match k {
        0 => String::new(),
        1 => " + HE2(sumPK_i, ID_i)".to_string(),
        k => format!(" + {k} x HE2(sumPK_i, ID_i)"),
    };
    format!("interpolate a_i = SUM_i({}){corr} over t CSPs", l.text)
}

/// Binds one aggregate over a single table, for callers that bypass SQL.
pub(crate) fn bind_measure(wh: &Warehouse, table: &str, func: AggFunc, arg: &AggArg) -> Result<Measure> {
    let mut r = Resolver { wh, sources: Vec::new(), schemas: Vec::new() };
    r.add_source(&TableRef { name: table.to_string(), alias: None })?;
    r.measure(func, arg)
}
