//! Exact lifting of zero-tension tropical curves of genus 0 and 1.
//!
//! Curves are read as embedded metric graphs (`ztcurve`). Genus 0 curves lift
//! to rational maps built from a realized tree (`liftzero`), and genus 1 curves
//! to theta quotients on a Tate curve (`liftone`). Both use truncated Puiseux
//! series over Q(2^{1/d}) (`puiseux`) and the Bruhat-Tits tree (`btree`).

pub mod btree;
pub mod cli;
pub mod embed;
pub mod error;
pub mod liftone;
pub mod liftzero;
pub mod linalg;
pub mod puiseux;
pub mod ztcurve;
