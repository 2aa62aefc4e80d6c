//! Three-stage hybrid metaheuristic: GRASP construction seeds a
//! population, NSGA-II evolves it, and a single Pareto-local-search pass
//! refines the archive. The pipeline optionally bootstraps its population
//! from an exact solver's solution pool.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::feasibility::{self, check, check_move, compute_usage};
use crate::instance::{Assignment, Instance};
use crate::objectives::{evaluate, scalarize, ObjectiveVector, WeightVector};
use crate::pareto::{crowding_distances, non_dominated_sort, ParetoArchive};

/// One evaluated, feasible candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub assignment: Assignment,
    pub objectives: ObjectiveVector,
}

/// A bounded set of feasible candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub members: Vec<Individual>,
    pub capacity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaConfig {
    pub population_size: usize,
    pub generations: usize,
    /// Archive members explored by the final Pareto local search.
    pub pls_targets: usize,
    pub seed: u64,
    /// Per-VM reassignment probability during mutation.
    pub mutation_rate: f64,
    pub crossover_rate: f64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            population_size: 20,
            generations: 10,
            pls_targets: 10,
            seed: 0,
            mutation_rate: 0.1,
            crossover_rate: 0.9,
        }
    }
}

impl MetaConfig {
    /// Default pipeline constants with the mutation rate scaled to two
    /// expected reassignments per offspring.
    pub fn for_instance(inst: &Instance, seed: u64) -> Self {
        MetaConfig {
            seed,
            mutation_rate: (2.0 / inst.n_vms().max(1) as f64).clamp(0.01, 0.5),
            ..MetaConfig::default()
        }
    }
}

/// Width of the restricted candidate list during greedy construction.
const RCL_WIDTH: usize = 3;
/// Construction attempts per population slot before falling back to the
/// initial assignment.
const GRASP_RESTARTS: usize = 20;
/// Repair passes before an infeasible offspring is discarded.
const REPAIR_PASSES: usize = 2;

// ---------------------------------------------------------------------------
// GRASP construction
// ---------------------------------------------------------------------------

/// Incremental capacity/conflict state for greedy construction.
struct Builder<'a> {
    inst: &'a Instance,
    usage: Vec<u64>,
    service_on: Vec<bool>,
    host_count: Vec<u32>,
}

impl<'a> Builder<'a> {
    fn new(inst: &'a Instance) -> Self {
        let nr = inst.n_resources();
        let mut usage = vec![0u64; inst.n_machines() * nr];
        for vm in &inst.vms {
            for r in 0..nr {
                if inst.resources[r].transient {
                    usage[vm.initial_machine * nr + r] += vm.demand[r];
                }
            }
        }
        Builder {
            inst,
            usage,
            service_on: vec![false; inst.n_services() * inst.n_machines()],
            host_count: vec![0; inst.n_machines()],
        }
    }

    fn delta(&self, vm: usize, machine: usize, r: usize) -> u64 {
        let v = &self.inst.vms[vm];
        if self.inst.resources[r].transient && machine == v.initial_machine {
            0
        } else {
            v.demand[r]
        }
    }

    fn allowed(&self, vm: usize, machine: usize) -> bool {
        let inst = self.inst;
        if self.service_on[inst.vms[vm].service * inst.n_machines() + machine] {
            return false;
        }
        let nr = inst.n_resources();
        (0..nr).all(|r| {
            self.usage[machine * nr + r] + self.delta(vm, machine, r)
                <= inst.machines[machine].capacity[r]
        })
    }

    fn marginal(&self, vm: usize, machine: usize, w: &[f64; 3]) -> f64 {
        let inst = self.inst;
        let mach = &inst.machines[machine];
        let nr = inst.n_resources();
        let mut rel = 0.0;
        for r in 0..nr {
            let delta = self.delta(vm, machine, r);
            if delta > 0 {
                let before = self.usage[machine * nr + r];
                let sc = mach.safety_capacity[r];
                rel += (before + delta).saturating_sub(sc) as f64 - before.saturating_sub(sc) as f64;
            }
        }
        let idle = if self.host_count[machine] == 0 { mach.elec_idle } else { 0.0 };
        let cpu = self.delta(vm, machine, inst.cpu_resource);
        let elec = mach.elec_price * (idle + mach.elec_per_cpu * cpu as f64);
        let v = &inst.vms[vm];
        let mig = if machine == v.initial_machine {
            0.0
        } else {
            v.prep_cost + v.deploy_cost + v.transfer_size * inst.transfer_cost[v.initial_machine][machine]
        };
        w[0] * rel + w[1] * elec + w[2] * mig
    }

    fn place(&mut self, vm: usize, machine: usize) {
        let inst = self.inst;
        let nr = inst.n_resources();
        for r in 0..nr {
            self.usage[machine * nr + r] += self.delta(vm, machine, r);
        }
        self.service_on[inst.vms[vm].service * inst.n_machines() + machine] = true;
        self.host_count[machine] += 1;
    }
}

fn random_weights(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut w = [0.0; 3];
    for x in &mut w {
        *x = rng.gen_range(0.05..=1.0);
    }
    let sum: f64 = w.iter().sum();
    w.map(|x| x / sum)
}

fn greedy_construct(inst: &Instance, rng: &mut ChaCha8Rng) -> Option<Assignment> {
    let w = random_weights(rng);
    let mut order: Vec<usize> = (0..inst.n_vms()).collect();
    order.shuffle(rng);
    let mut builder = Builder::new(inst);
    let mut target = vec![0usize; inst.n_vms()];
    for &vm in &order {
        let mut candidates: Vec<(f64, usize)> = (0..inst.n_machines())
            .filter(|&m| builder.allowed(vm, m))
            .map(|m| (builder.marginal(vm, m, &w), m))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let pick = rng.gen_range(0..candidates.len().min(RCL_WIDTH));
        let machine = candidates[pick].1;
        builder.place(vm, machine);
        target[vm] = machine;
    }
    let a = Assignment::new(target);
    check(inst, &a).is_feasible().then_some(a)
}

/// Build `count` feasible assignments by randomized greedy construction:
/// a fresh random weight vector and VM order per restart, machines chosen
/// from a restricted candidate list by marginal scalarized cost. The
/// initial assignment always fills the first slot, and any slot whose
/// restarts are exhausted.
pub fn grasp_seed(inst: &Instance, count: usize, rng_seed: u64) -> Population {
    assert!(count >= 1, "need at least one population slot");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let initial = Individual {
        objectives: evaluate(inst, &inst.initial_assignment()),
        assignment: inst.initial_assignment(),
    };
    let mut members = vec![initial.clone()];
    for _ in 1..count {
        let mut built = None;
        for _ in 0..GRASP_RESTARTS {
            if let Some(a) = greedy_construct(inst, &mut rng) {
                built = Some(Individual { objectives: evaluate(inst, &a), assignment: a });
                break;
            }
        }
        members.push(built.unwrap_or_else(|| initial.clone()));
    }
    Population { members, capacity: count }
}

// ---------------------------------------------------------------------------
// NSGA-II phase
// ---------------------------------------------------------------------------

fn rank_and_crowd(objectives: &[ObjectiveVector]) -> (Vec<usize>, Vec<f64>) {
    let fronts = non_dominated_sort(objectives);
    let mut rank = vec![0usize; objectives.len()];
    let mut crowd = vec![0.0f64; objectives.len()];
    for (fi, front) in fronts.iter().enumerate() {
        let d = crowding_distances(objectives, front);
        for (slot, &i) in front.iter().enumerate() {
            rank[i] = fi;
            crowd[i] = d[slot];
        }
    }
    (rank, crowd)
}

fn tournament(rng: &mut ChaCha8Rng, n: usize, rank: &[usize], crowd: &[f64]) -> usize {
    let i = rng.gen_range(0..n);
    let j = rng.gen_range(0..n);
    if rank[i] != rank[j] {
        return if rank[i] < rank[j] { i } else { j };
    }
    if crowd[i] != crowd[j] {
        return if crowd[i] > crowd[j] { i } else { j };
    }
    i.min(j)
}

/// Cheapest single move of an implicated VM that strictly reduces the
/// violation count, under identity weights.
fn repair_step(inst: &Instance, a: &Assignment, candidates: &[usize]) -> Option<Assignment> {
    let current = check(inst, a).violations().len();
    let identity = WeightVector::identity();
    let mut best: Option<(f64, Assignment)> = None;
    for &v in candidates {
        for m in 0..inst.n_machines() {
            if m == a.target[v] {
                continue;
            }
            let moved = a.with_move(v, m);
            if check(inst, &moved).violations().len() >= current {
                continue;
            }
            let cost = scalarize(&evaluate(inst, &moved), &identity);
            if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                best = Some((cost, moved));
            }
        }
    }
    best.map(|(_, a)| a)
}

fn violating_vms(inst: &Instance, a: &Assignment) -> Vec<usize> {
    let report = check(inst, a);
    let mut vms = Vec::new();
    for violation in report.violations() {
        match violation {
            feasibility::Violation::Capacity { machine, .. } => {
                vms.extend((0..inst.n_vms()).filter(|&v| a.target[v] == *machine));
            }
            feasibility::Violation::Conflict { service, machine, .. } => {
                vms.extend(
                    inst.services[*service]
                        .members
                        .iter()
                        .copied()
                        .filter(|&v| a.target[v] == *machine),
                );
            }
            feasibility::Violation::Spread { service, .. } => {
                vms.extend(inst.services[*service].members.iter().copied());
            }
            feasibility::Violation::Dependency { service, dependency, .. } => {
                vms.extend(inst.services[*service].members.iter().copied());
                vms.extend(inst.services[*dependency].members.iter().copied());
            }
        }
    }
    vms.sort_unstable();
    vms.dedup();
    vms
}

fn repair(inst: &Instance, mut a: Assignment) -> Option<Individual> {
    for _ in 0..=REPAIR_PASSES {
        if check(inst, &a).is_feasible() {
            return Some(Individual { objectives: evaluate(inst, &a), assignment: a });
        }
        let candidates = violating_vms(inst, &a);
        match repair_step(inst, &a, &candidates) {
            Some(fixed) => a = fixed,
            None => return None,
        }
    }
    if check(inst, &a).is_feasible() {
        Some(Individual { objectives: evaluate(inst, &a), assignment: a })
    } else {
        None
    }
}

/// Rank-then-crowding truncation. The first front survives whole even when
/// it overflows the capacity, so no Pareto point is ever lost.
fn select_survivors(members: Vec<Individual>, capacity: usize) -> Vec<Individual> {
    if members.len() <= capacity {
        return members;
    }
    let objectives: Vec<ObjectiveVector> = members.iter().map(|m| m.objectives).collect();
    let fronts = non_dominated_sort(&objectives);
    let mut keep: Vec<usize> = Vec::with_capacity(capacity);
    for (fi, front) in fronts.iter().enumerate() {
        let remaining = capacity.saturating_sub(keep.len());
        if remaining == 0 && fi > 0 {
            break;
        }
        if fi == 0 || front.len() <= remaining {
            keep.extend(front.iter().copied());
        } else {
            let crowd = crowding_distances(&objectives, front);
            let mut order: Vec<usize> = (0..front.len()).collect();
            order.sort_by(|&x, &y| {
                crowd[y].partial_cmp(&crowd[x]).unwrap().then(front[x].cmp(&front[y]))
            });
            keep.extend(order.into_iter().take(remaining).map(|slot| front[slot]));
            break;
        }
    }
    keep.sort_unstable();
    let mut out = Vec::with_capacity(keep.len());
    let mut members = members;
    for idx in keep.into_iter().rev() {
        out.push(members.swap_remove(idx));
    }
    out.reverse();
    out
}

fn evolve_members(
    inst: &Instance,
    mut pop: Vec<Individual>,
    cfg: &MetaConfig,
    mut archive: Option<&mut ParetoArchive>,
    deadline: Option<std::time::Instant>,
) -> Vec<Individual> {
    if pop.is_empty() {
        return pop;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    for _ in 0..cfg.generations {
        if deadline.is_some_and(|d| std::time::Instant::now() >= d) {
            break;
        }
        let objectives: Vec<ObjectiveVector> = pop.iter().map(|m| m.objectives).collect();
        let (rank, crowd) = rank_and_crowd(&objectives);
        let mut offspring = Vec::with_capacity(cfg.population_size);
        for _ in 0..cfg.population_size {
            let p1 = &pop[tournament(&mut rng, pop.len(), &rank, &crowd)];
            let p2 = &pop[tournament(&mut rng, pop.len(), &rank, &crowd)];
            let mut genes = p1.assignment.target.clone();
            if rng.gen::<f64>() < cfg.crossover_rate {
                for (g, other) in genes.iter_mut().zip(&p2.assignment.target) {
                    if rng.gen::<bool>() {
                        *g = *other;
                    }
                }
            }
            for g in genes.iter_mut() {
                if rng.gen::<f64>() < cfg.mutation_rate {
                    *g = rng.gen_range(0..inst.n_machines());
                }
            }
            if let Some(child) = repair(inst, Assignment::new(genes)) {
                if let Some(arch) = archive.as_deref_mut() {
                    arch.insert(child.assignment.clone(), child.objectives);
                }
                offspring.push(child);
            }
        }
        pop.extend(offspring);
        pop = select_survivors(pop, cfg.population_size);
    }
    select_survivors(pop, cfg.population_size)
}

/// Evolve the population for `cfg.generations` NSGA-II iterations:
/// binary-tournament selection on (rank, crowding), uniform per-VM
/// crossover, per-VM reassignment mutation, repair-or-discard of
/// infeasible offspring, elitist survivor truncation.
pub fn evolve(inst: &Instance, pop: Population, cfg: &MetaConfig) -> Population {
    assert!(!pop.members.is_empty(), "evolve needs a non-empty population");
    debug_assert!(pop.members.iter().all(|m| check(inst, &m.assignment).is_feasible()));
    let capacity = pop.capacity.max(cfg.population_size);
    let members = evolve_members(inst, pop.members, cfg, None, None);
    Population { members, capacity }
}

// ---------------------------------------------------------------------------
// Pareto local search
// ---------------------------------------------------------------------------

/// Single-pass Pareto local search: explore the one-move neighbourhood of
/// the `targets` most isolated archive members (largest crowding distance,
/// boundary points first) and insert every feasible non-dominated
/// neighbour. Newly inserted points are not re-explored.
pub fn pls_refine(inst: &Instance, archive: &ParetoArchive, targets: usize, rng_seed: u64) -> ParetoArchive {
    let mut result = archive.clone();
    if archive.is_empty() || targets == 0 {
        return result;
    }
    let objectives = archive.objective_vectors();
    let front: Vec<usize> = (0..objectives.len()).collect();
    let crowd = crowding_distances(&objectives, &front);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let salt: Vec<u64> = (0..objectives.len()).map(|_| rng.gen()).collect();
    let mut order = front;
    order.sort_by(|&x, &y| {
        crowd[y]
            .partial_cmp(&crowd[x])
            .unwrap()
            .then(salt[x].cmp(&salt[y]))
            .then(x.cmp(&y))
    });
    for &idx in order.iter().take(targets) {
        let base = &archive.entries()[idx].assignment;
        let usage = compute_usage(inst, base);
        for v in 0..inst.n_vms() {
            for m in 0..inst.n_machines() {
                if m == base.target[v] {
                    continue;
                }
                if check_move(inst, base, &usage, v, m).is_feasible() {
                    let neighbour = base.with_move(v, m);
                    let objectives = evaluate(inst, &neighbour);
                    result.insert(neighbour, objectives);
                }
            }
        }
    }
    result
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

/// Full pipeline: bootstrap the population from an archive (an exact
/// solver's pool, or empty for the pure metaheuristic), top up with GRASP,
/// evolve, then refine with Pareto local search. Returns the
/// dominance-filtered union of every feasible point evaluated.
pub fn hybrid_pipeline(inst: &Instance, bootstrap: &ParetoArchive, cfg: &MetaConfig) -> ParetoArchive {
    hybrid_pipeline_with_deadline(inst, bootstrap, cfg, None)
}

/// [`hybrid_pipeline`] with an optional wall-clock deadline checked
/// between phases and generations.
pub fn hybrid_pipeline_with_deadline(
    inst: &Instance,
    bootstrap: &ParetoArchive,
    cfg: &MetaConfig,
    deadline: Option<std::time::Instant>,
) -> ParetoArchive {
    debug_assert!(bootstrap
        .entries()
        .iter()
        .all(|e| check(inst, &e.assignment).is_feasible()));
    let mut archive = bootstrap.clone();
    let mut pop: Vec<Individual> = bootstrap
        .entries()
        .iter()
        .map(|e| Individual { assignment: e.assignment.clone(), objectives: e.objectives })
        .collect();
    if pop.len() < cfg.population_size {
        let seeded = grasp_seed(inst, cfg.population_size - pop.len(), cfg.seed);
        for member in seeded.members {
            archive.insert(member.assignment.clone(), member.objectives);
            pop.push(member);
        }
    }
    pop = evolve_members(inst, pop, cfg, Some(&mut archive), deadline);
    for member in &pop {
        archive.insert(member.assignment.clone(), member.objectives);
    }
    if deadline.is_some_and(|d| std::time::Instant::now() >= d) {
        return archive;
    }
    pls_refine(inst, &archive, cfg.pls_targets, cfg.seed.wrapping_add(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_synthetic, GeneratorParams};
    use crate::pareto::{hypervolume, reference_point};
    use crate::solver::{multi_vector_run, SolverConfig};
    use crate::testfix::tiny1;

    fn medium(seed: u64) -> Instance {
        generate_synthetic(&GeneratorParams {
            n_machines: 4,
            n_vms: 20,
            n_services: 8,
            n_resources: 2,
            n_locations: 2,
            n_neighborhoods: 2,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn grasp_builds_feasible_members_including_initial() {
        let inst = tiny1();
        let pop = grasp_seed(&inst, 5, 3);
        assert_eq!(pop.members.len(), 5);
        assert!(pop.members.iter().all(|m| check(&inst, &m.assignment).is_feasible()));
        assert!(pop.members.iter().any(|m| m.assignment == inst.initial_assignment()));
    }

    #[test]
    fn grasp_single_slot_is_feasible() {
        let inst = tiny1();
        let pop = grasp_seed(&inst, 1, 9);
        assert_eq!(pop.members.len(), 1);
        assert!(check(&inst, &pop.members[0].assignment).is_feasible());
    }

    #[test]
    fn grasp_is_deterministic() {
        let inst = medium(5);
        assert_eq!(grasp_seed(&inst, 8, 42), grasp_seed(&inst, 8, 42));
    }

    #[test]
    fn evolve_keeps_the_tiny_front() {
        let inst = tiny1();
        let pop = grasp_seed(&inst, 6, 1);
        let cfg = MetaConfig { seed: 1, mutation_rate: 0.3, ..MetaConfig::default() };
        let out = evolve(&inst, pop, &cfg);
        assert!(!out.members.is_empty());
        for m in &out.members {
            assert!(check(&inst, &m.assignment).is_feasible());
        }
        let objs: Vec<ObjectiveVector> = out.members.iter().map(|m| m.objectives).collect();
        let fronts = non_dominated_sort(&objs);
        for &i in &fronts[0] {
            assert_eq!(objs[i], ObjectiveVector::new(0.0, 31.0, 0.0));
        }
    }

    #[test]
    fn evolve_never_shrinks_front_hypervolume() {
        for seed in 0..5 {
            let inst = medium(100 + seed);
            let pop = grasp_seed(&inst, 10, seed);
            let cfg = MetaConfig { seed, generations: 4, ..MetaConfig::for_instance(&inst, seed) };
            let before: Vec<Individual> = pop.members.clone();
            let after = evolve(&inst, pop, &cfg);

            let front_archive = |members: &[Individual]| {
                let mut arch = ParetoArchive::new();
                for m in members {
                    arch.insert(m.assignment.clone(), m.objectives);
                }
                arch
            };
            let a = front_archive(&before);
            let b = front_archive(&after.members);
            let r = reference_point(&[&a, &b]).unwrap();
            let hv_before = hypervolume(&a, &r).unwrap();
            let hv_after = hypervolume(&b, &r).unwrap();
            assert!(hv_after >= hv_before - 1e-9, "seed {seed}: {hv_after} < {hv_before}");
        }
    }

    #[test]
    fn zero_generations_only_truncates() {
        let inst = medium(7);
        let pop = grasp_seed(&inst, 25, 7);
        let cfg = MetaConfig { seed: 7, generations: 0, ..MetaConfig::default() };
        let out = evolve(&inst, pop.clone(), &cfg);
        assert!(out.members.len() <= 25);
        for m in &out.members {
            assert!(pop.members.contains(m));
        }
    }

    #[test]
    fn pls_cannot_improve_the_tiny_optimum() {
        let inst = tiny1();
        let mut archive = ParetoArchive::new();
        archive.insert(inst.initial_assignment(), evaluate(&inst, &inst.initial_assignment()));
        let refined = pls_refine(&inst, &archive, 10, 3);
        assert_eq!(refined, archive);
    }

    #[test]
    fn pls_handles_fewer_members_than_targets() {
        let inst = medium(9);
        let mut archive = ParetoArchive::new();
        archive.insert(inst.initial_assignment(), evaluate(&inst, &inst.initial_assignment()));
        let refined = pls_refine(&inst, &archive, 10, 1);
        assert!(!refined.is_empty());
        for e in refined.entries() {
            assert!(check(&inst, &e.assignment).is_feasible());
        }
    }

    #[test]
    fn pls_never_decreases_hypervolume() {
        for seed in 0..5 {
            let inst = medium(200 + seed);
            let pop = grasp_seed(&inst, 8, seed);
            let mut archive = ParetoArchive::new();
            for m in &pop.members {
                archive.insert(m.assignment.clone(), m.objectives);
            }
            let refined = pls_refine(&inst, &archive, 10, seed);
            let r = reference_point(&[&archive, &refined]).unwrap();
            let before = hypervolume(&archive, &r).unwrap();
            let after = hypervolume(&refined, &r).unwrap();
            assert!(after >= before - 1e-9);
            assert!(refined.len() >= archive.len());
        }
    }

    #[test]
    fn hybrid_with_exact_pool_lands_on_the_tiny_front() {
        let inst = tiny1();
        let (bootstrap, _) = multi_vector_run(&inst, 3, &SolverConfig::default(), 10.0);
        let cfg = MetaConfig::for_instance(&inst, 11);
        let archive = hybrid_pipeline(&inst, &bootstrap, &cfg);
        assert_eq!(archive.len(), 1);
        assert_eq!(archive.entries()[0].objectives, ObjectiveVector::new(0.0, 31.0, 0.0));
    }

    #[test]
    fn empty_bootstrap_runs_the_pure_metaheuristic() {
        let inst = medium(31);
        let cfg = MetaConfig::for_instance(&inst, 31);
        let archive = hybrid_pipeline(&inst, &ParetoArchive::new(), &cfg);
        assert!(!archive.is_empty());
        for e in archive.entries() {
            assert!(check(&inst, &e.assignment).is_feasible());
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let inst = medium(55);
        let cfg = MetaConfig::for_instance(&inst, 55);
        let a = hybrid_pipeline(&inst, &ParetoArchive::new(), &cfg);
        let b = hybrid_pipeline(&inst, &ParetoArchive::new(), &cfg);
        assert_eq!(a, b);
    }
}
