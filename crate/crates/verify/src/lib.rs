//! Independent oracles, random fixtures and the acceptance suite for
//! `bundlecalc`.

pub mod fixtures;
pub mod oracles;
pub mod pratt;
pub mod suite;
