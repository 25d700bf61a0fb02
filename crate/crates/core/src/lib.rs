//! Query-conditioned chunk ordering for sequential summarization chains.
//!
//! Chunks are linked by a maximum spanning tree over their pairwise
//! similarity and visited breadth-first from the chunk closest to the query.
//! The [`pipeline`] module runs worker/manager chains over such orders and
//! [`eval`] scores the answers.

// matrix code reads best with explicit (i, j) loops
#![allow(clippy::needless_range_loop)]

pub mod chowliu;
pub mod corpus;
pub mod eval;
pub mod ordering;
pub mod pipeline;
pub mod similarity;
pub mod throttle;
pub mod workflow;
