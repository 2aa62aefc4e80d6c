//! Constraint checking: capacity (with transient resources), conflict,
//! dependency and spread, plus an incremental single-move check for local
//! search.

use std::fmt;

use crate::instance::{Assignment, Instance};

/// Per-machine per-resource utilisation.
///
/// Non-transient resources count the demand of the VMs currently hosted.
/// Transient resources additionally keep the demand of every VM whose
/// initial host is the machine, whether it moved away or not: migrating
/// VMs hold their transient resources on both ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageTable {
    n_machines: usize,
    n_resources: usize,
    usage: Vec<u64>,
}

impl UsageTable {
    pub fn zero(n_machines: usize, n_resources: usize) -> Self {
        UsageTable {
            n_machines,
            n_resources,
            usage: vec![0; n_machines * n_resources],
        }
    }

    #[inline]
    pub fn get(&self, machine: usize, resource: usize) -> u64 {
        self.usage[machine * self.n_resources + resource]
    }

    #[inline]
    pub fn add(&mut self, machine: usize, resource: usize, amount: u64) {
        self.usage[machine * self.n_resources + resource] += amount;
    }

    #[inline]
    pub fn sub(&mut self, machine: usize, resource: usize, amount: u64) {
        self.usage[machine * self.n_resources + resource] -= amount;
    }

    pub fn n_machines(&self) -> usize {
        self.n_machines
    }

    pub fn n_resources(&self) -> usize {
        self.n_resources
    }
}

/// One violated constraint, with enough magnitude information for a search
/// heuristic to rank near-feasible candidates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Violation {
    /// Usage exceeds capacity by `excess` units.
    Capacity { machine: usize, resource: usize, excess: u64 },
    /// `count` VMs of one service share a machine.
    Conflict { service: usize, machine: usize, count: usize },
    /// `service` occupies `neighborhood` but its dependency does not.
    Dependency { service: usize, dependency: usize, neighborhood: usize },
    /// `service` spans `occupied` locations, fewer than `required`.
    Spread { service: usize, required: usize, occupied: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Capacity { machine, resource, excess } => write!(
                f,
                "capacity exceeded on machine {machine}, resource {resource} by {excess}"
            ),
            Violation::Conflict { service, machine, count } => write!(
                f,
                "conflict: {count} VMs of service {service} on machine {machine}"
            ),
            Violation::Dependency { service, dependency, neighborhood } => write!(
                f,
                "dependency: service {service} occupies neighbourhood {neighborhood} without service {dependency}"
            ),
            Violation::Spread { service, required, occupied } => write!(
                f,
                "spread: service {service} spans {occupied} locations, needs {required}"
            ),
        }
    }
}

/// Outcome of a feasibility check; violations are kept in a canonical
/// order so reports compare with `==`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityReport {
    violations: Vec<Violation>,
}

impl FeasibilityReport {
    fn new(mut violations: Vec<Violation>) -> Self {
        violations.sort();
        FeasibilityReport { violations }
    }

    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }
}

/// Resource utilisation of every machine under `a`.
pub fn compute_usage(inst: &Instance, a: &Assignment) -> UsageTable {
    let mut u = UsageTable::zero(inst.n_machines(), inst.n_resources());
    for (v, vm) in inst.vms.iter().enumerate() {
        let dst = a.target[v];
        for (r, res) in inst.resources.iter().enumerate() {
            if res.transient {
                u.add(vm.initial_machine, r, vm.demand[r]);
                if dst != vm.initial_machine {
                    u.add(dst, r, vm.demand[r]);
                }
            } else {
                u.add(dst, r, vm.demand[r]);
            }
        }
    }
    u
}

/// Check every constraint of `inst` against `a` and report all violations.
pub fn check(inst: &Instance, a: &Assignment) -> FeasibilityReport {
    let usage = compute_usage(inst, a);
    let mut violations = Vec::new();

    for m in 0..inst.n_machines() {
        for r in 0..inst.n_resources() {
            let q = inst.machines[m].capacity[r];
            let u = usage.get(m, r);
            if u > q {
                violations.push(Violation::Capacity { machine: m, resource: r, excess: u - q });
            }
        }
    }

    let mut per_machine = vec![0usize; inst.n_machines()];
    let mut occupied_neigh = vec![false; inst.n_neighborhoods];
    let mut occupied_loc = vec![false; inst.n_locations];
    let mut service_neigh = vec![Vec::new(); inst.n_services()];
    for s in &inst.services {
        for &v in &s.members {
            per_machine[a.target[v]] += 1;
        }
        for &v in &s.members {
            let m = a.target[v];
            if per_machine[m] > 1 {
                violations.push(Violation::Conflict { service: s.id, machine: m, count: per_machine[m] });
                per_machine[m] = 0; // report each (service, machine) once
            }
        }
        for &v in &s.members {
            per_machine[a.target[v]] = 0;
        }

        for &v in &s.members {
            occupied_neigh[inst.machines[a.target[v]].neighborhood] = true;
            occupied_loc[inst.machines[a.target[v]].location] = true;
        }
        let spread = occupied_loc.iter().filter(|&&b| b).count();
        if spread < s.spread_min {
            violations.push(Violation::Spread { service: s.id, required: s.spread_min, occupied: spread });
        }
        service_neigh[s.id] = occupied_neigh
            .iter()
            .enumerate()
            .filter_map(|(n, &b)| b.then_some(n))
            .collect();
        occupied_neigh.fill(false);
        occupied_loc.fill(false);
    }

    for s in &inst.services {
        for &dep in &s.depends_on {
            for &n in &service_neigh[s.id] {
                if !service_neigh[dep].contains(&n) {
                    violations.push(Violation::Dependency { service: s.id, dependency: dep, neighborhood: n });
                }
            }
        }
    }

    FeasibilityReport::new(violations)
}

/// Feasibility of `a` with VM `vm` moved to `machine`, computed from the
/// affected scope only.
///
/// `usage` must be `compute_usage(inst, a)`. When `a` itself is feasible
/// the result equals `check` on the mutated assignment; the work is
/// bounded by the moved VM's service, its dependency edges and the two
/// machines involved rather than the whole instance.
pub fn check_move(
    inst: &Instance,
    a: &Assignment,
    usage: &UsageTable,
    vm: usize,
    machine: usize,
) -> FeasibilityReport {
    let src = a.target[vm];
    let dst = machine;
    let v = &inst.vms[vm];
    let mut violations = Vec::new();

    // Capacity deltas touch only the source and destination machines.
    for (r, res) in inst.resources.iter().enumerate() {
        let mut at_src = usage.get(src, r);
        let mut at_dst = usage.get(dst, r);
        if dst != src {
            if res.transient {
                // The initial-host share never leaves; only the away-copy moves.
                if src != v.initial_machine {
                    at_src -= v.demand[r];
                }
                if dst != v.initial_machine {
                    at_dst += v.demand[r];
                }
            } else {
                at_src -= v.demand[r];
                at_dst += v.demand[r];
            }
        }
        for (m, u) in [(src, at_src), (dst, at_dst)] {
            let q = inst.machines[m].capacity[r];
            if u > q {
                violations.push(Violation::Capacity { machine: m, resource: r, excess: u - q });
            }
        }
    }
    if src == dst {
        // Degenerate move: dedupe the capacity entries recorded twice above.
        violations.dedup();
    }

    let service = &inst.services[v.service];

    // Conflict can only appear where the VM lands.
    let landed = service
        .members
        .iter()
        .filter(|&&w| w == vm || a.target[w] == dst)
        .count();
    if landed > 1 {
        violations.push(Violation::Conflict { service: service.id, machine: dst, count: landed });
    }

    // Spread of the moved VM's service.
    let mut locs = vec![false; inst.n_locations];
    for &w in &service.members {
        let m = if w == vm { dst } else { a.target[w] };
        locs[inst.machines[m].location] = true;
    }
    let occupied = locs.iter().filter(|&&b| b).count();
    if occupied < service.spread_min {
        violations.push(Violation::Spread {
            service: service.id,
            required: service.spread_min,
            occupied,
        });
    }

    // Dependency edges touching the moved service, restricted to the
    // neighbourhoods whose occupancy can change.
    let occupies = |s: &crate::instance::Service, n: usize| {
        s.members.iter().any(|&w| {
            let m = if w == vm { dst } else { a.target[w] };
            inst.machines[m].neighborhood == n
        })
    };
    let n_src = inst.machines[src].neighborhood;
    let n_dst = inst.machines[dst].neighborhood;
    if n_dst != n_src || src == dst {
        // Newly occupied neighbourhood: every dependency must be there.
        if occupies(service, n_dst) {
            for &dep in &service.depends_on {
                if !occupies(&inst.services[dep], n_dst) {
                    violations.push(Violation::Dependency {
                        service: service.id,
                        dependency: dep,
                        neighborhood: n_dst,
                    });
                }
            }
        }
        // Possibly abandoned neighbourhood: dependants stranded there break.
        if !occupies(service, n_src) {
            for &dependant in inst.dependents_of(service.id) {
                if occupies(&inst.services[dependant], n_src) {
                    violations.push(Violation::Dependency {
                        service: dependant,
                        dependency: service.id,
                        neighborhood: n_src,
                    });
                }
            }
        }
    }

    FeasibilityReport::new(violations)
}
