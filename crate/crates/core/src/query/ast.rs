use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub select: SelectList,
    pub from: TableRef,
    pub joins: Vec<Join>,
    pub filters: Vec<Condition>,
    pub group_by: Vec<ColumnRef>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SelectList {
    Star,
    Items(Vec<SelectItem>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectItem {
    pub expr: SelectExpr,
    pub alias: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SelectExpr {
    Column(ColumnRef),
    Aggregate { func: AggFunc, arg: AggArg },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AggFunc {
    Sum,
    Avg,
    Var,
    Stddev,
    Min,
    Max,
    Median,
    Count,
}

impl AggFunc {
    pub fn parse(word: &str) -> Option<Self> {
        Some(match word.to_ascii_uppercase().as_str() {
            "SUM" => AggFunc::Sum,
            "AVG" => AggFunc::Avg,
            "VAR" | "VARIANCE" | "VAR_POP" => AggFunc::Var,
            "STDDEV" | "STDEV" | "STDDEV_POP" => AggFunc::Stddev,
            "MIN" => AggFunc::Min,
            "MAX" => AggFunc::Max,
            "MEDIAN" => AggFunc::Median,
            "COUNT" => AggFunc::Count,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            AggFunc::Sum => "SUM",
            AggFunc::Avg => "AVG",
            AggFunc::Var => "VAR",
            AggFunc::Stddev => "STDDEV",
            AggFunc::Min => "MIN",
            AggFunc::Max => "MAX",
            AggFunc::Median => "MEDIAN",
            AggFunc::Count => "COUNT",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AggArg {
    Star,
    Column(ColumnRef),
    Binary(ColumnRef, BinOp, ColumnRef),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ColumnRef {
    pub qualifier: Option<String>,
    pub name: String,
}

impl ColumnRef {
    pub fn new(qualifier: Option<&str>, name: &str) -> Self {
        Self { qualifier: qualifier.map(str::to_string), name: name.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableRef {
    pub name: String,
    pub alias: Option<String>,
}

impl TableRef {
    /// Name other clauses use to refer to this table.
    pub fn visible_name(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Join {
    pub table: TableRef,
    pub left: ColumnRef,
    pub right: ColumnRef,
}

/// A literal as written; typed once the column it is compared with is known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Literal {
    pub text: String,
    pub quoted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CondOp {
    Cmp(CmpOp, Literal),
    Between(Literal, Literal),
    In(Vec<Literal>),
    IsNull,
    IsNotNull,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Condition {
    pub column: ColumnRef,
    pub op: CondOp,
}

impl Query {
    pub fn aggregates(&self) -> impl Iterator<Item = (AggFunc, &AggArg)> {
        let items: &[SelectItem] = match &self.select {
            SelectList::Star => &[],
            SelectList::Items(items) => items,
        };
        items.iter().filter_map(|i| match &i.expr {
            SelectExpr::Aggregate { func, arg } => Some((*func, arg)),
            SelectExpr::Column(_) => None,
        })
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.qualifier {
            Some(q) => write!(f, "{q}.{}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

impl fmt::Display for TableRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.alias {
            Some(a) => write!(f, "{} AS {a}", self.name),
            None => f.write_str(&self.name),
        }
    }
}

impl fmt::Display for AggArg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AggArg::Star => f.write_str("*"),
            AggArg::Column(c) => write!(f, "{c}"),
            AggArg::Binary(a, op, b) => write!(f, "{a} {} {b}", op.symbol()),
        }
    }
}

impl fmt::Display for SelectExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectExpr::Column(c) => write!(f, "{c}"),
            SelectExpr::Aggregate { func, arg } => write!(f, "{}({arg})", func.name()),
        }
    }
}

impl fmt::Display for SelectItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.expr)?;
        if let Some(a) = &self.alias {
            write!(f, " AS {a}")?;
        }
        Ok(())
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.quoted {
            write!(f, "'{}'", self.text.replace('\'', "''"))
        } else {
            f.write_str(&self.text)
        }
    }
}

impl fmt::Display for CondOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CondOp::Cmp(op, v) => write!(f, "{} {v}", op.symbol()),
            CondOp::Between(a, b) => write!(f, "BETWEEN {a} AND {b}"),
            CondOp::In(vs) => {
                f.write_str("IN (")?;
                for (i, v) in vs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str(")")
            }
            CondOp::IsNull => f.write_str("IS NULL"),
            CondOp::IsNotNull => f.write_str("IS NOT NULL"),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.column, self.op)
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SELECT ")?;
        match &self.select {
            SelectList::Star => f.write_str("*")?,
            SelectList::Items(items) => {
                for (i, it) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{it}")?;
                }
            }
        }
        write!(f, " FROM {}", self.from)?;
        for j in &self.joins {
            write!(f, " JOIN {} ON {} = {}", j.table, j.left, j.right)?;
        }
        for (i, c) in self.filters.iter().enumerate() {
            f.write_str(if i == 0 { " WHERE " } else { " AND " })?;
            write!(f, "{c}")?;
        }
        for (i, c) in self.group_by.iter().enumerate() {
            f.write_str(if i == 0 { " GROUP BY " } else { ", " })?;
            write!(f, "{c}")?;
        }
        Ok(())
    }
}
