//! Multi-objective reassignment of virtual machines onto physical hosts.
//!
//! The crate models a data centre (machines with per-resource capacities,
//! VMs grouped into services, locations and neighbourhoods), checks the
//! full constraint set (capacity with transient resources, conflict,
//! dependency, spread), evaluates three cost objectives (reliability,
//! electricity, migration), minimizes weighted sums exactly by branch and
//! bound with an optimality-gap stop and solution pooling, and refines the
//! resulting Pareto archive with a GRASP + NSGA-II + Pareto-local-search
//! pipeline. The `harness` module and the `vmreassign` binary drive the
//! experiment protocols (gap sweeps, vector sweeps, three-way comparisons).

pub mod feasibility;
pub mod genepi;
pub mod harness;
pub mod instance;
pub mod objectives;
pub mod pareto;
pub mod solver;

pub use instance::{Assignment, Instance, Machine, Resource, Service, Vm};
pub use objectives::{ObjectiveVector, WeightVector};
pub use pareto::{ParetoArchive, ReferencePoint};

#[cfg(test)]
pub(crate) mod testfix;
