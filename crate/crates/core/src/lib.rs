//! Outer automorphisms of free groups: reduced words and morphisms, graph
//! maps with train-track data, Stallings graphs, electric (coned-off)
//! lengths with flaring experiments, and lamination certificates.

pub mod electric;
pub mod graphs;
pub mod laminations;
pub mod subgroups;
pub mod words;
