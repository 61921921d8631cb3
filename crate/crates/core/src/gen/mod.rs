//! Instance generators.

pub mod airport;
pub mod qsat;

pub use airport::{gen_airport, AirportGenConfig};
pub use qsat::{gen_qsat2, qsat2_bruteforce, Dnf, GValueRule, Literal, QsatReduction, ReductionConstants};
