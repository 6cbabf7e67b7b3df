//! Extraction and analysis of a topic-focused subcommunity of a social graph.
//!
//! The pipeline starts from search-engine query logs: a seed keyword set is
//! expanded until the set of blogs it reaches stops growing ([`expansion`]).
//! Those blogs seed a snowball sample of the follow and reblog networks
//! ([`graph`]), which is then studied from several angles: community
//! structure ([`community`]), connectivity against a degree-preserving null
//! model ([`connectivity`]), diffusion reach by consumer class
//! ([`diffusion`]), local perception biases ([`perception`]), node-removal
//! interventions ([`intervention`]) and demographics ([`demographics`]).

pub mod cli;
pub mod community;
pub mod connectivity;
pub mod demographics;
pub mod diffusion;
pub mod error;
pub mod expansion;
pub mod graph;
pub mod ingest;
pub mod intervention;
pub mod perception;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use graph::{GroupLabel, Layer, LayeredGraph, NodeId};
