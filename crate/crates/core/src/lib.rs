// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod domain;
pub mod error;
pub mod expansion;
pub mod frame;
pub mod harness;
pub mod manifold;
pub mod network;
pub mod quadrature;
