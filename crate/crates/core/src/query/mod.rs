//! A small SELECT dialect evaluated over shares: joins and filters on
//! plaintext keys and Type II indices, sums recombined from per-CSP
//! aggregates plus pseudo-share corrections.

pub mod ast;
pub mod exec;
pub mod parser;
pub mod plan;

pub use ast::Query;
pub use exec::{
    exec_avg, exec_minmax_count, exec_stddev, exec_sum, exec_sum_combined, exec_var, execute, run, QueryResult,
};
pub use parser::parse;
pub use plan::{plan, QueryPlan};
