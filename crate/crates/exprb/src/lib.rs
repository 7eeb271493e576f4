//! Netlists, file formats, benchmark generators and the command line for the
//! `exprb-core` simulator.

pub mod bench;
pub mod cli;
pub mod generate;
pub mod matstats;
pub mod netlist;
pub mod output;

pub use netlist::{build_mna, parse_netlist, NetlistDoc, ParseError};
