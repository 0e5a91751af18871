//! Problem-group partitioned few-shot text-to-SQL.
//!
//! Gold queries are partitioned into four problem groups by their SQL
//! keywords. Each group gets a drill bank of execution-verified worked
//! examples, and test questions are answered with a single completion whose
//! shots come from the bank of their predicted group.

pub mod bank;
pub mod cli;
pub mod corpus;
pub mod evaluator;
pub mod fixtures;
pub mod gateway;
pub mod inference;
pub mod partitioner;
pub mod retriever;
