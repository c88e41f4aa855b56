//! Federated-learning round simulator with selfish update crafting and the
//! RFL-Self robust aggregation rule.

// `!(x > y)` forms are kept where they must also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregation;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod scalar_min;
pub mod selfish;
pub mod training;
pub mod vector;
pub mod verify;

pub use aggregation::{aggregate, AggregationOutcome, AggregationStrategy, ClientId};
pub use error::{Error, Result};
pub use selfish::{craft_selfish_update, estimate_avg_normal_update, estimate_k, KMode, SelfishState};
pub use vector::UpdateVector;
