//! Static and dynamic tooling for reaching Android activities that GUI
//! exploration leaves unvisited.

pub mod agent;
pub mod coverage;
pub mod ctg;
pub mod harness;
pub mod mcp;
pub mod names;
pub mod package;
pub mod pipeline;
pub mod plan;
pub mod smali;
pub mod widgets;
