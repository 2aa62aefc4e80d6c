//! Exact minimization of a weighted-sum scalarization by depth-first
//! branch and bound over VM placements, with an optimality-gap stopping
//! rule and harvesting of feasible solutions into a pool; plus an LP-format
//! export of the full MILP for external solvers.

use std::time::Instant;

use crate::feasibility;
use crate::instance::{Assignment, Instance};
use crate::objectives::{self, ObjectiveVector, WeightVector};
use crate::pareto::ParetoArchive;

/// Guard for the relative-gap denominator; with a zero lower bound the
/// criterion degenerates to an absolute one.
pub const GAP_EPSILON: f64 = 1e-9;

/// `(incumbent - lower_bound) / max(|lower_bound|, epsilon)`, clamped to 0.
pub fn relative_gap(incumbent: f64, lower_bound: f64) -> f64 {
    if !lower_bound.is_finite() {
        return 0.0;
    }
    ((incumbent - lower_bound) / lower_bound.abs().max(GAP_EPSILON)).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Relative optimality tolerance in [0, 1]; the search stops once the
    /// incumbent is proven within this factor of the lower bound.
    pub gap: f64,
    pub time_limit_s: f64,
    /// Harvest every feasible assignment evaluated, not only incumbent
    /// improvements.
    pub pool_all_feasible: bool,
    /// Deterministic alternative to the wall clock, mainly for tests.
    pub node_limit: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gap: 0.0,
            time_limit_s: f64::INFINITY,
            pool_all_feasible: true,
            node_limit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    OptimalWithinGap,
    TimeLimit,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Incumbent {
    pub assignment: Assignment,
    pub objectives: ObjectiveVector,
    pub value: f64,
}

/// Outcome of one weighted-sum run.
///
/// The pool holds the mutually non-dominated subset of the harvested
/// feasible solutions, and always contains the incumbent when one exists.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub incumbent: Option<Incumbent>,
    pub lower_bound: f64,
    pub achieved_gap: f64,
    pub pool: Vec<(Assignment, ObjectiveVector)>,
    pub status: SolveStatus,
    pub elapsed_s: f64,
    pub nodes_explored: u64,
}

// ---------------------------------------------------------------------------
// admissible bound pieces
// ---------------------------------------------------------------------------

/// Usage delta of placing `vm` on `machine` for resource `r`: zero for a
/// transient resource on the initial host (its share is already held
/// there), the demand otherwise.
#[inline]
fn usage_delta(inst: &Instance, vm: usize, machine: usize, r: usize) -> u64 {
    let v = &inst.vms[vm];
    if inst.resources[r].transient && machine == v.initial_machine {
        0
    } else {
        v.demand[r]
    }
}

fn migration_of(inst: &Instance, vm: usize, machine: usize) -> f64 {
    let v = &inst.vms[vm];
    if machine == v.initial_machine {
        0.0
    } else {
        v.prep_cost + v.deploy_cost + v.transfer_size * inst.transfer_cost[v.initial_machine][machine]
    }
}

/// Usage-independent floor of the scalarized marginal cost of placing `vm`
/// on `machine`: standalone safety-capacity excess, CPU electricity draw
/// (idle draw excluded; it may be shared with other VMs) and migration.
fn placement_floor(inst: &Instance, w: [f64; 3], vm: usize, machine: usize) -> f64 {
    let mach = &inst.machines[machine];
    let mut rel = 0.0;
    for r in 0..inst.n_resources() {
        let delta = usage_delta(inst, vm, machine, r);
        if delta > mach.safety_capacity[r] {
            rel += (delta - mach.safety_capacity[r]) as f64;
        }
    }
    let cpu = usage_delta(inst, vm, machine, inst.cpu_resource);
    let elec = mach.elec_price * mach.elec_per_cpu * cpu as f64;
    w[0] * rel + w[1] * elec + w[2] * migration_of(inst, vm, machine)
}

fn static_floor(inst: &Instance, w: [f64; 3], vm: usize) -> f64 {
    (0..inst.n_machines())
        .map(|m| placement_floor(inst, w, vm, m))
        .fold(f64::INFINITY, f64::min)
}

/// Admissible lower bound on the scalarized cost of every feasible
/// completion of `partial` (machines for the first `partial.len()` VMs, in
/// id order): the committed cost of the assigned prefix plus, for each
/// unassigned VM, its cheapest usage-independent placement floor. Returns
/// infinity when the prefix already violates capacity or conflict.
pub fn lower_bound(inst: &Instance, w: &WeightVector, partial: &[usize]) -> f64 {
    let weights = w.components();
    let k = partial.len();
    assert!(k <= inst.n_vms(), "partial assignment longer than the VM list");

    // Usage of the prefix, mirroring the usage-table rules: transient
    // initial shares are held whether or not a VM is assigned yet.
    let mut usage = vec![0u64; inst.n_machines() * inst.n_resources()];
    let nr = inst.n_resources();
    for (v, vm) in inst.vms.iter().enumerate() {
        for r in 0..nr {
            if inst.resources[r].transient {
                usage[vm.initial_machine * nr + r] += vm.demand[r];
                if v < k && partial[v] != vm.initial_machine {
                    usage[partial[v] * nr + r] += vm.demand[r];
                }
            } else if v < k {
                usage[partial[v] * nr + r] += vm.demand[r];
            }
        }
    }

    for m in 0..inst.n_machines() {
        for r in 0..nr {
            if usage[m * nr + r] > inst.machines[m].capacity[r] {
                return f64::INFINITY;
            }
        }
    }
    for s in &inst.services {
        let mut seen = vec![false; inst.n_machines()];
        for &v in &s.members {
            if v >= k {
                continue;
            }
            if seen[partial[v]] {
                return f64::INFINITY;
            }
            seen[partial[v]] = true;
        }
    }

    let mut hosts = vec![false; inst.n_machines()];
    for &m in partial {
        hosts[m] = true;
    }
    let mut rel = 0.0;
    let mut elec = 0.0;
    for (m, mach) in inst.machines.iter().enumerate() {
        for r in 0..nr {
            let u = usage[m * nr + r];
            if u > mach.safety_capacity[r] {
                rel += (u - mach.safety_capacity[r]) as f64;
            }
        }
        let idle = if hosts[m] { mach.elec_idle } else { 0.0 };
        elec += mach.elec_price * (idle + mach.elec_per_cpu * usage[m * nr + inst.cpu_resource] as f64);
    }
    let mut mig = 0.0;
    for v in 0..k {
        mig += migration_of(inst, v, partial[v]);
    }

    let mut bound = weights[0] * rel + weights[1] * elec + weights[2] * mig;
    for v in k..inst.n_vms() {
        bound += static_floor(inst, weights, v);
    }
    bound
}

// ---------------------------------------------------------------------------
// branch and bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StopReason {
    GapReached,
    Limit,
}

struct Frame {
    /// Suffix minima of the child bounds in visit order.
    suffix_min: Vec<f64>,
    /// Children before this index are fully explored.
    pos: usize,
}

struct Search<'a> {
    inst: &'a Instance,
    weights: [f64; 3],
    cfg: SolverConfig,
    order: Vec<usize>,
    /// `floor_suffix[d]`: summed static floors of the VMs at depth >= d.
    floor_suffix: Vec<f64>,

    usage: Vec<u64>,
    service_on: Vec<bool>,
    host_count: Vec<u32>,
    loc_count: Vec<u32>,
    neigh_count: Vec<u32>,
    distinct_locs: Vec<u32>,
    unassigned: Vec<u32>,
    target: Vec<usize>,
    committed: [f64; 3],

    frames: Vec<Frame>,
    best: Option<Incumbent>,
    last_best_value: f64,
    pool: ParetoArchive,
    nodes: u64,
    start: Instant,
    stop: Option<StopReason>,
    reported_lb: f64,
}

enum Flow {
    Continue,
    Stop,
}

const UNASSIGNED: usize = usize::MAX;

impl<'a> Search<'a> {
    fn new(inst: &'a Instance, w: &WeightVector, cfg: SolverConfig) -> Self {
        let weights = w.components();
        // Most-constrained VMs first: decreasing peak demand, ties by id.
        let mut order: Vec<usize> = (0..inst.n_vms()).collect();
        let peak = |v: usize| inst.vms[v].demand.iter().copied().max().unwrap_or(0);
        order.sort_by(|&a, &b| peak(b).cmp(&peak(a)).then(a.cmp(&b)));

        let mut floor_suffix = vec![0.0; order.len() + 1];
        for d in (0..order.len()).rev() {
            floor_suffix[d] = floor_suffix[d + 1] + static_floor(inst, weights, order[d]);
        }

        let nr = inst.n_resources();
        let mut usage = vec![0u64; inst.n_machines() * nr];
        for vm in &inst.vms {
            for r in 0..nr {
                if inst.resources[r].transient {
                    usage[vm.initial_machine * nr + r] += vm.demand[r];
                }
            }
        }
        // Transient shares contribute CPU electricity and safety excess
        // before any placement.
        let mut elec0 = 0.0;
        let mut rel0 = 0.0;
        for (m, mach) in inst.machines.iter().enumerate() {
            elec0 += mach.elec_price * mach.elec_per_cpu * usage[m * nr + inst.cpu_resource] as f64;
            for r in 0..nr {
                rel0 += usage[m * nr + r].saturating_sub(mach.safety_capacity[r]) as f64;
            }
        }

        Search {
            inst,
            weights,
            cfg,
            floor_suffix,
            usage,
            service_on: vec![false; inst.n_services() * inst.n_machines()],
            host_count: vec![0; inst.n_machines()],
            loc_count: vec![0; inst.n_services() * inst.n_locations],
            neigh_count: vec![0; inst.n_services() * inst.n_neighborhoods],
            distinct_locs: vec![0; inst.n_services()],
            unassigned: inst.services.iter().map(|s| s.members.len() as u32).collect(),
            target: vec![UNASSIGNED; inst.n_vms()],
            committed: [rel0, elec0, 0.0],
            frames: Vec::new(),
            best: None,
            last_best_value: f64::INFINITY,
            pool: ParetoArchive::new(),
            nodes: 0,
            start: Instant::now(),
            stop: None,
            order,
            reported_lb: f64::NEG_INFINITY,
        }
    }

    fn committed_value(&self) -> f64 {
        self.weights[0] * self.committed[0]
            + self.weights[1] * self.committed[1]
            + self.weights[2] * self.committed[2]
    }

    /// Proven lower bound on the optimum: best unexplored node bound, or
    /// the incumbent when nothing better can remain.
    fn global_lower_bound(&self) -> f64 {
        let mut open = f64::INFINITY;
        for f in &self.frames {
            if f.pos < f.suffix_min.len() {
                open = open.min(f.suffix_min[f.pos]);
            }
        }
        match &self.best {
            Some(b) => open.min(b.value),
            None => open,
        }
    }

    fn gap_reached(&mut self) -> bool {
        let Some(best) = &self.best else { return false };
        let lb = self.global_lower_bound();
        debug_assert!(lb >= self.reported_lb - 1e-9, "lower bound must not decrease");
        self.reported_lb = self.reported_lb.max(lb);
        relative_gap(best.value, lb) <= self.cfg.gap
    }

    fn limits_hit(&self) -> bool {
        if let Some(limit) = self.cfg.node_limit {
            if self.nodes >= limit {
                return true;
            }
        }
        self.nodes % 256 == 0 && self.start.elapsed().as_secs_f64() >= self.cfg.time_limit_s
    }

    /// Capacity, conflict and the spread necessary condition for placing
    /// `vm` on `machine` given the current partial assignment.
    fn placement_allowed(&self, vm: usize, machine: usize) -> bool {
        let inst = self.inst;
        let s = inst.vms[vm].service;
        if self.service_on[s * inst.n_machines() + machine] {
            return false;
        }
        let nr = inst.n_resources();
        for r in 0..nr {
            let delta = usage_delta(inst, vm, machine, r);
            if self.usage[machine * nr + r] + delta > inst.machines[machine].capacity[r] {
                return false;
            }
        }
        // Each still-unassigned member can add at most one location.
        let loc = inst.machines[machine].location;
        let gain = u32::from(self.loc_count[s * inst.n_locations + loc] == 0);
        let reachable = self.distinct_locs[s] + gain + (self.unassigned[s] - 1);
        reachable as usize >= inst.services[s].spread_min
    }

    fn marginal_cost(&self, vm: usize, machine: usize) -> f64 {
        let inst = self.inst;
        let mach = &inst.machines[machine];
        let nr = inst.n_resources();
        let mut rel = 0.0;
        for r in 0..nr {
            let delta = usage_delta(inst, vm, machine, r);
            if delta == 0 {
                continue;
            }
            let before = self.usage[machine * nr + r];
            let sc = mach.safety_capacity[r];
            let excess = |u: u64| u.saturating_sub(sc) as f64;
            rel += excess(before + delta) - excess(before);
        }
        let idle = if self.host_count[machine] == 0 { mach.elec_idle } else { 0.0 };
        let cpu = usage_delta(inst, vm, machine, inst.cpu_resource);
        let elec = mach.elec_price * (idle + mach.elec_per_cpu * cpu as f64);
        self.weights[0] * rel + self.weights[1] * elec + self.weights[2] * migration_of(inst, vm, machine)
    }

    fn place(&mut self, vm: usize, machine: usize) {
        let inst = self.inst;
        let s = inst.vms[vm].service;
        let nr = inst.n_resources();
        let mut rel = 0.0;
        for r in 0..nr {
            let delta = usage_delta(inst, vm, machine, r);
            if delta > 0 {
                let before = self.usage[machine * nr + r];
                let sc = inst.machines[machine].safety_capacity[r];
                let excess = |u: u64| u.saturating_sub(sc) as f64;
                rel += excess(before + delta) - excess(before);
                self.usage[machine * nr + r] = before + delta;
            }
        }
        let mach = &inst.machines[machine];
        let idle = if self.host_count[machine] == 0 { mach.elec_idle } else { 0.0 };
        let cpu = usage_delta(inst, vm, machine, inst.cpu_resource);
        self.committed[0] += rel;
        self.committed[1] += mach.elec_price * (idle + mach.elec_per_cpu * cpu as f64);
        self.committed[2] += migration_of(inst, vm, machine);

        self.host_count[machine] += 1;
        self.service_on[s * inst.n_machines() + machine] = true;
        let loc = mach.location;
        let lc = &mut self.loc_count[s * inst.n_locations + loc];
        if *lc == 0 {
            self.distinct_locs[s] += 1;
        }
        *lc += 1;
        self.neigh_count[s * inst.n_neighborhoods + mach.neighborhood] += 1;
        self.unassigned[s] -= 1;
        self.target[vm] = machine;
    }

    fn unplace(&mut self, vm: usize, machine: usize) {
        let inst = self.inst;
        let s = inst.vms[vm].service;
        let nr = inst.n_resources();
        let mut rel = 0.0;
        for r in 0..nr {
            let delta = usage_delta(inst, vm, machine, r);
            if delta > 0 {
                let after = self.usage[machine * nr + r];
                let sc = inst.machines[machine].safety_capacity[r];
                let excess = |u: u64| u.saturating_sub(sc) as f64;
                rel += excess(after) - excess(after - delta);
                self.usage[machine * nr + r] = after - delta;
            }
        }
        let mach = &inst.machines[machine];
        self.host_count[machine] -= 1;
        let idle = if self.host_count[machine] == 0 { mach.elec_idle } else { 0.0 };
        let cpu = usage_delta(inst, vm, machine, inst.cpu_resource);
        self.committed[0] -= rel;
        self.committed[1] -= mach.elec_price * (idle + mach.elec_per_cpu * cpu as f64);
        self.committed[2] -= migration_of(inst, vm, machine);

        self.service_on[s * inst.n_machines() + machine] = false;
        let loc = mach.location;
        let lc = &mut self.loc_count[s * inst.n_locations + loc];
        *lc -= 1;
        if *lc == 0 {
            self.distinct_locs[s] -= 1;
        }
        self.neigh_count[s * inst.n_neighborhoods + mach.neighborhood] -= 1;
        self.unassigned[s] += 1;
        self.target[vm] = UNASSIGNED;
    }

    /// Dependency occupancy on a complete assignment; the other constraint
    /// families hold by construction during the descent.
    fn dependencies_satisfied(&self) -> bool {
        let inst = self.inst;
        let nn = inst.n_neighborhoods;
        for s in &inst.services {
            for &dep in &s.depends_on {
                for n in 0..nn {
                    if self.neigh_count[s.id * nn + n] > 0 && self.neigh_count[dep * nn + n] == 0 {
                        return false;
                    }
                }
            }
        }
        true
    }

    fn handle_leaf(&mut self) -> Flow {
        if !self.dependencies_satisfied() {
            return Flow::Continue;
        }
        let assignment = Assignment::new(self.target.clone());
        // Canonical evaluation keeps leaf values bit-compatible with the
        // rest of the system; the incremental tally only steers the search.
        let objectives = objectives::evaluate(self.inst, &assignment);
        let w = WeightVector::new(self.weights).expect("weights validated upstream");
        let value = objectives::scalarize(&objectives, &w);
        debug_assert!((value - self.committed_value()).abs() <= 1e-6 * value.abs().max(1.0));

        if self.cfg.pool_all_feasible {
            self.pool.insert(assignment.clone(), objectives);
        }
        let improved = match &self.best {
            Some(b) => value < b.value,
            None => true,
        };
        if improved {
            debug_assert!(value <= self.last_best_value, "incumbent must not worsen");
            self.last_best_value = value;
            if !self.cfg.pool_all_feasible {
                self.pool.insert(assignment.clone(), objectives);
            }
            self.best = Some(Incumbent { assignment, objectives, value });
            if self.gap_reached() {
                self.stop = Some(StopReason::GapReached);
                return Flow::Stop;
            }
        }
        Flow::Continue
    }

    fn dfs(&mut self, depth: usize) -> Flow {
        self.nodes += 1;
        if self.limits_hit() {
            self.stop = Some(StopReason::Limit);
            return Flow::Stop;
        }
        if depth == self.order.len() {
            return self.handle_leaf();
        }

        let vm = self.order[depth];
        let mut children: Vec<(f64, f64, usize)> = Vec::with_capacity(self.inst.n_machines());
        let base = self.committed_value();
        for m in 0..self.inst.n_machines() {
            if !self.placement_allowed(vm, m) {
                continue;
            }
            let marginal = self.marginal_cost(vm, m);
            let bound = base + marginal + self.floor_suffix[depth + 1];
            children.push((marginal, bound, m));
        }
        // Cheapest marginal first, machine id as the deterministic tie-break.
        children.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.2.cmp(&b.2)));

        let mut suffix_min = vec![f64::INFINITY; children.len() + 1];
        for i in (0..children.len()).rev() {
            suffix_min[i] = suffix_min[i + 1].min(children[i].1);
        }
        self.frames.push(Frame { suffix_min, pos: 0 });

        for i in 0..children.len() {
            let (_, bound, m) = children[i];
            let prune = match &self.best {
                Some(b) => bound >= b.value,
                None => false,
            };
            if !prune {
                self.place(vm, m);
                let flow = self.dfs(depth + 1);
                self.unplace(vm, m);
                if matches!(flow, Flow::Stop) {
                    self.frames.pop();
                    return Flow::Stop;
                }
            }
            self.frames.last_mut().expect("frame pushed above").pos = i + 1;
            if self.gap_reached() {
                self.stop = Some(StopReason::GapReached);
                self.frames.pop();
                return Flow::Stop;
            }
        }
        self.frames.pop();
        Flow::Continue
    }

    fn finish(self) -> SolveReport {
        let lower_bound = self.global_lower_bound();
        let status = match (&self.best, self.stop) {
            (_, Some(StopReason::Limit)) => SolveStatus::TimeLimit,
            (Some(_), _) => SolveStatus::OptimalWithinGap,
            (None, None) => SolveStatus::Infeasible,
            (None, Some(StopReason::GapReached)) => unreachable!("gap needs an incumbent"),
        };
        let achieved_gap = match &self.best {
            Some(b) => relative_gap(b.value, lower_bound),
            None => 0.0,
        };
        let mut pool: Vec<(Assignment, ObjectiveVector)> = self
            .pool
            .entries()
            .iter()
            .map(|e| (e.assignment.clone(), e.objectives))
            .collect();
        if let Some(b) = &self.best {
            if !pool.iter().any(|(a, _)| *a == b.assignment) {
                pool.push((b.assignment.clone(), b.objectives));
            }
        }
        SolveReport {
            incumbent: self.best,
            lower_bound,
            achieved_gap,
            pool,
            status,
            elapsed_s: self.start.elapsed().as_secs_f64(),
            nodes_explored: self.nodes,
        }
    }
}

/// Minimize `scalarize(evaluate(a), w)` over feasible assignments.
///
/// Deterministic for a given instance, weight vector and config (node
/// limits make even the stopping point reproducible). With `gap` 0 and no
/// limits the incumbent is a true optimum.
pub fn solve_weighted(inst: &Instance, w: &WeightVector, cfg: &SolverConfig) -> SolveReport {
    let mut search = Search::new(inst, w, *cfg);
    match search.dfs(0) {
        Flow::Continue | Flow::Stop => {}
    }
    search.finish()
}

/// Per-vector outcome of [`multi_vector_run`]; `report` is `None` when the
/// budget ran out before the vector was attempted.
#[derive(Debug, Clone)]
pub struct VectorRun {
    pub weights: WeightVector,
    pub report: Option<SolveReport>,
}

/// Run [`solve_weighted`] over the first `k_vectors` probing vectors
/// sequentially under a global wall-clock budget, merging every pool into
/// one dominance-filtered archive.
pub fn multi_vector_run(
    inst: &Instance,
    k_vectors: usize,
    cfg: &SolverConfig,
    budget_s: f64,
) -> (ParetoArchive, Vec<VectorRun>) {
    let start = Instant::now();
    let mut archive = ParetoArchive::new();
    let mut runs = Vec::with_capacity(k_vectors);
    for w in objectives::weight_vectors(k_vectors) {
        let remaining = budget_s - start.elapsed().as_secs_f64();
        if remaining <= 0.0 {
            runs.push(VectorRun { weights: w, report: None });
            continue;
        }
        let vector_cfg = SolverConfig {
            time_limit_s: cfg.time_limit_s.min(remaining),
            ..*cfg
        };
        let report = solve_weighted(inst, &w, &vector_cfg);
        for (a, o) in &report.pool {
            archive.insert(a.clone(), *o);
        }
        runs.push(VectorRun { weights: w, report: Some(report) });
    }
    (archive, runs)
}

// ---------------------------------------------------------------------------
// LP export
// ---------------------------------------------------------------------------

fn push_term(expr: &mut String, coef: f64, var: &str) {
    if coef == 0.0 {
        return;
    }
    if expr.is_empty() {
        if coef < 0.0 {
            expr.push_str("- ");
        }
    } else if coef < 0.0 {
        expr.push_str(" - ");
    } else {
        expr.push_str(" + ");
    }
    let mag = coef.abs();
    if mag == 1.0 && !var.is_empty() {
        expr.push_str(var);
    } else if var.is_empty() {
        expr.push_str(&mag.to_string());
    } else {
        expr.push_str(&format!("{mag} {var}"));
    }
}

/// Emit the weighted-sum MILP in LP format: binary placement, occupancy,
/// neighbourhood/location indicator and migration variables, continuous
/// safety-excess variables, and the full constraint set with equation
/// numbers carried in comment lines.
pub fn export_lp(inst: &Instance, w: &WeightVector) -> String {
    use std::fmt::Write as _;
    let [wr, we, wm] = w.components();
    let nv = inst.n_vms();
    let nm = inst.n_machines();
    let ns = inst.n_services();
    let nn = inst.n_neighborhoods;
    let nl = inst.n_locations;
    let nr = inst.n_resources();
    let big_m = (nn * ns) as f64;

    let x = |v: usize, m: usize| format!("x_v{v}_m{m}");
    let y = |s: usize, n: usize| format!("y_s{s}_n{n}");
    let z = |s: usize, l: usize| format!("z_s{s}_l{l}");
    let o = |m: usize| format!("o_m{m}");
    let mig = |v: usize| format!("mig_v{v}");
    let rvar = |m: usize, r: usize| format!("r_m{m}_r{r}");

    let mut out = String::new();
    writeln!(out, "\\ weighted-sum VM reassignment model").unwrap();
    writeln!(out, "\\ {nv} vms, {nm} machines, {ns} services, {nr} resources").unwrap();
    writeln!(out, "\\ weights: reliability={wr} electricity={we} migration={wm}").unwrap();
    writeln!(out, "Minimize").unwrap();

    let mut obj = String::new();
    for m in 0..nm {
        for r in 0..nr {
            push_term(&mut obj, wr, &rvar(m, r));
        }
    }
    let mut constant = 0.0;
    for (m, mach) in inst.machines.iter().enumerate() {
        push_term(&mut obj, we * mach.elec_price * mach.elec_idle, &o(m));
        for v in 0..nv {
            // CPU electricity plus image transfer, both attached to x.
            let cpu = usage_delta(inst, v, m, inst.cpu_resource);
            let coef = we * mach.elec_price * mach.elec_per_cpu * cpu as f64
                + wm * inst.vms[v].transfer_size
                    * inst.transfer_cost[inst.vms[v].initial_machine][m];
            push_term(&mut obj, coef, &x(v, m));
        }
        if inst.resources[inst.cpu_resource].transient {
            let base: u64 = inst
                .vms
                .iter()
                .filter(|vm| vm.initial_machine == m)
                .map(|vm| vm.demand[inst.cpu_resource])
                .sum();
            constant += we * mach.elec_price * mach.elec_per_cpu * base as f64;
        }
    }
    for (v, vm) in inst.vms.iter().enumerate() {
        push_term(&mut obj, wm * (vm.prep_cost + vm.deploy_cost), &mig(v));
    }
    if constant != 0.0 {
        push_term(&mut obj, constant, "");
    }
    writeln!(out, " obj: {obj}").unwrap();

    writeln!(out, "Subject To").unwrap();
    for v in 0..nv {
        writeln!(out, "\\ Eq.(1) assignment v={v}").unwrap();
        let mut e = String::new();
        for m in 0..nm {
            push_term(&mut e, 1.0, &x(v, m));
        }
        writeln!(out, " eq1_v{v}: {e} = 1").unwrap();
    }
    for m in 0..nm {
        for r in 0..nr {
            writeln!(out, "\\ Eq.(4) capacity m={m} r={r}").unwrap();
            let mut e = String::new();
            let mut base = 0u64;
            for (v, vm) in inst.vms.iter().enumerate() {
                let delta = usage_delta(inst, v, m, r);
                push_term(&mut e, delta as f64, &x(v, m));
                if inst.resources[r].transient && vm.initial_machine == m {
                    base += vm.demand[r];
                }
            }
            let rhs = inst.machines[m].capacity[r] as f64 - base as f64;
            if e.is_empty() {
                e.push('0');
            }
            writeln!(out, " eq4_m{m}_r{r}: {e} <= {rhs}").unwrap();
        }
    }
    for s in 0..ns {
        for m in 0..nm {
            writeln!(out, "\\ Eq.(5) conflict s={s} m={m}").unwrap();
            let mut e = String::new();
            for &v in &inst.services[s].members {
                push_term(&mut e, 1.0, &x(v, m));
            }
            if e.is_empty() {
                e.push('0');
            }
            writeln!(out, " eq5_s{s}_m{m}: {e} <= 1").unwrap();
        }
    }
    for s in 0..ns {
        for n in 0..nn {
            let mut members = String::new();
            for &v in &inst.services[s].members {
                for m in 0..nm {
                    if inst.machines[m].neighborhood == n {
                        push_term(&mut members, 1.0, &x(v, m));
                    }
                }
            }
            if members.is_empty() {
                members.push('0');
            }
            writeln!(out, "\\ Eq.(7) neighbourhood-indicator upper s={s} n={n}").unwrap();
            writeln!(out, " eq7_s{s}_n{n}: {members} - {big_m} {} <= 0", y(s, n)).unwrap();
            writeln!(out, "\\ Eq.(8) neighbourhood-indicator lower s={s} n={n}").unwrap();
            writeln!(out, " eq8_s{s}_n{n}: {members} - {} >= 0", y(s, n)).unwrap();
        }
    }
    for s in 0..ns {
        for &dep in &inst.services[s].depends_on {
            for n in 0..nn {
                writeln!(out, "\\ Eq.(9) dependency s={s} dep={dep} n={n}").unwrap();
                writeln!(out, " eq9_s{s}_s{dep}_n{n}: {} - {} <= 0", y(s, n), y(dep, n)).unwrap();
            }
        }
    }
    for s in 0..ns {
        for l in 0..nl {
            let mut members = String::new();
            for &v in &inst.services[s].members {
                for m in 0..nm {
                    if inst.machines[m].location == l {
                        push_term(&mut members, 1.0, &x(v, m));
                    }
                }
            }
            if members.is_empty() {
                members.push('0');
            }
            writeln!(out, "\\ Eq.(10) location-indicator upper s={s} l={l}").unwrap();
            writeln!(out, " eq10_s{s}_l{l}: {members} - {big_m} {} <= 0", z(s, l)).unwrap();
            writeln!(out, "\\ Eq.(11) location-indicator lower s={s} l={l}").unwrap();
            writeln!(out, " eq11_s{s}_l{l}: {members} - {} >= 0", z(s, l)).unwrap();
        }
    }
    for s in 0..ns {
        writeln!(out, "\\ Eq.(12) spread s={s}").unwrap();
        let mut e = String::new();
        for l in 0..nl {
            push_term(&mut e, 1.0, &z(s, l));
        }
        writeln!(out, " eq12_s{s}: {e} >= {}", inst.services[s].spread_min).unwrap();
    }
    for m in 0..nm {
        for r in 0..nr {
            writeln!(out, "\\ Eq.(13) safety excess m={m} r={r}").unwrap();
            let mut e = String::new();
            push_term(&mut e, 1.0, &rvar(m, r));
            let mut base = 0u64;
            for (v, vm) in inst.vms.iter().enumerate() {
                let delta = usage_delta(inst, v, m, r);
                push_term(&mut e, -(delta as f64), &x(v, m));
                if inst.resources[r].transient && vm.initial_machine == m {
                    base += vm.demand[r];
                }
            }
            let rhs = base as f64 - inst.machines[m].safety_capacity[r] as f64;
            writeln!(out, " eq13_m{m}_r{r}: {e} >= {rhs}").unwrap();
        }
    }
    for m in 0..nm {
        let mut e = String::new();
        for v in 0..nv {
            push_term(&mut e, 1.0, &x(v, m));
        }
        writeln!(out, "\\ Eq.(15) switch-on lower m={m}").unwrap();
        writeln!(out, " eq15a_m{m}: {e} - {} >= 0", o(m)).unwrap();
        writeln!(out, "\\ Eq.(15) switch-on upper m={m}").unwrap();
        writeln!(out, " eq15b_m{m}: {e} - {nv} {} <= 0", o(m)).unwrap();
    }
    for (v, vm) in inst.vms.iter().enumerate() {
        writeln!(out, "\\ Eq.(17) migration v={v}").unwrap();
        let mut e = String::new();
        for m in 0..nm {
            if m != vm.initial_machine {
                push_term(&mut e, 1.0, &x(v, m));
            }
        }
        push_term(&mut e, -1.0, &mig(v));
        writeln!(out, " eq17_v{v}: {e} = 0").unwrap();
    }

    writeln!(out, "Bounds").unwrap();
    for m in 0..nm {
        for r in 0..nr {
            writeln!(out, " 0 <= {}", rvar(m, r)).unwrap();
        }
    }
    writeln!(out, "Binaries").unwrap();
    let mut names = Vec::new();
    for v in 0..nv {
        for m in 0..nm {
            names.push(x(v, m));
        }
    }
    for s in 0..ns {
        for n in 0..nn {
            names.push(y(s, n));
        }
    }
    for s in 0..ns {
        for l in 0..nl {
            names.push(z(s, l));
        }
    }
    for m in 0..nm {
        names.push(o(m));
    }
    for v in 0..nv {
        names.push(mig(v));
    }
    for chunk in names.chunks(8) {
        writeln!(out, " {}", chunk.join(" ")).unwrap();
    }
    writeln!(out, "End").unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{generate_synthetic, GeneratorParams};
    use crate::objectives::{evaluate, scalarize};
    use crate::testfix::tiny1;

    /// Exhaustive oracle: best scalarized value over all feasible total
    /// assignments, found by odometer enumeration and the full checker.
    fn enumerate_best(inst: &Instance, w: &WeightVector) -> Option<f64> {
        let nm = inst.n_machines();
        let nv = inst.n_vms();
        let mut digits = vec![0usize; nv];
        let mut best: Option<f64> = None;
        loop {
            let a = Assignment::new(digits.clone());
            if feasibility::check(inst, &a).is_feasible() {
                let value = scalarize(&evaluate(inst, &a), w);
                best = Some(match best {
                    Some(b) if b <= value => b,
                    _ => value,
                });
            }
            let mut i = 0;
            loop {
                if i == nv {
                    return best;
                }
                digits[i] += 1;
                if digits[i] < nm {
                    break;
                }
                digits[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn tiny1_identity_gap0_finds_initial() {
        let inst = tiny1();
        let report = solve_weighted(&inst, &WeightVector::identity(), &SolverConfig::default());
        let inc = report.incumbent.expect("feasible instance");
        assert_eq!(inc.value, 31.0);
        assert_eq!(inc.assignment, inst.initial_assignment());
        assert_eq!(report.status, SolveStatus::OptimalWithinGap);
        assert_eq!(report.achieved_gap, 0.0);
        assert_eq!(report.lower_bound, 31.0);
    }

    #[test]
    fn tiny1_loose_gap_keeps_the_contract() {
        let inst = tiny1();
        let cfg = SolverConfig { gap: 0.5, ..SolverConfig::default() };
        let report = solve_weighted(&inst, &WeightVector::identity(), &cfg);
        let inc = report.incumbent.expect("feasible instance");
        assert_eq!(report.status, SolveStatus::OptimalWithinGap);
        assert!(report.achieved_gap <= 0.5);
        assert!(inc.value <= 1.5 * report.lower_bound.max(GAP_EPSILON) + 1e-9);
    }

    #[test]
    fn tiny1_migration_only_is_trivially_bounded() {
        let inst = tiny1();
        let w = WeightVector::new([0.0, 0.0, 1.0]).unwrap();
        let report = solve_weighted(&inst, &w, &SolverConfig::default());
        let inc = report.incumbent.expect("feasible instance");
        assert_eq!(inc.value, 0.0);
        assert_eq!(report.lower_bound, 0.0);
        assert_eq!(inc.assignment, inst.initial_assignment());
    }

    #[test]
    fn pool_entries_are_feasible_and_contain_incumbent() {
        let inst = tiny1();
        let report = solve_weighted(&inst, &WeightVector::identity(), &SolverConfig::default());
        assert!(!report.pool.is_empty());
        for (a, o) in &report.pool {
            assert!(feasibility::check(&inst, a).is_feasible());
            assert_eq!(*o, evaluate(&inst, a));
        }
        let inc = report.incumbent.unwrap();
        assert!(report.pool.iter().any(|(a, _)| *a == inc.assignment));
    }

    #[test]
    fn lower_bound_of_empty_partial_migration_axis_is_zero() {
        let inst = tiny1();
        let w = WeightVector::new([0.0, 0.0, 1.0]).unwrap();
        assert_eq!(lower_bound(&inst, &w, &[]), 0.0);
    }

    #[test]
    fn lower_bound_of_full_assignment_is_exact() {
        let inst = tiny1();
        let w = WeightVector::new([0.3, 0.5, 0.2]).unwrap();
        for bits in 0..8usize {
            let a = Assignment::new(vec![bits & 1, (bits >> 1) & 1, (bits >> 2) & 1]);
            if !feasibility::check(&inst, &a).is_feasible() {
                continue;
            }
            let got = lower_bound(&inst, &w, &a.target);
            assert_eq!(got, scalarize(&evaluate(&inst, &a), &w));
        }
    }

    #[test]
    fn lower_bound_is_admissible_on_random_instances() {
        let mut checked = 0;
        for seed in 0..250 {
            let inst = generate_synthetic(&GeneratorParams {
                n_machines: 3,
                n_vms: 5,
                n_services: 2,
                n_resources: 2,
                n_locations: 2,
                n_neighborhoods: 2,
                seed,
            })
            .unwrap();
            for w in crate::objectives::spread_vectors(3).unwrap() {
                let Some(best) = enumerate_best(&inst, &w) else { continue };
                let root = lower_bound(&inst, &w, &[]);
                assert!(root <= best + 1e-9, "seed {seed}: root bound {root} > optimum {best}");
                let prefix = &inst.initial_assignment().target[..2];
                let partial = lower_bound(&inst, &w, prefix);
                if partial.is_finite() {
                    checked += 1;
                }
            }
        }
        assert!(checked >= 200);
    }

    #[test]
    fn gap0_matches_enumeration_on_random_instances() {
        for seed in 0..40 {
            let inst = generate_synthetic(&GeneratorParams {
                n_machines: 4,
                n_vms: 6,
                n_services: 3,
                n_resources: 2,
                n_locations: 2,
                n_neighborhoods: 2,
                seed: 1000 + seed,
            })
            .unwrap();
            let w = WeightVector::identity();
            let report = solve_weighted(&inst, &w, &SolverConfig::default());
            let best = enumerate_best(&inst, &w).expect("initial assignment is feasible");
            let inc = report.incumbent.expect("feasible instance");
            assert!(
                (inc.value - best).abs() <= 1e-9 * best.abs().max(1.0),
                "seed {seed}: got {}, enumeration {best}",
                inc.value
            );
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let inst = generate_synthetic(&GeneratorParams {
            n_machines: 4,
            n_vms: 10,
            n_services: 4,
            n_resources: 2,
            n_locations: 2,
            n_neighborhoods: 2,
            seed: 77,
        })
        .unwrap();
        let cfg = SolverConfig { node_limit: Some(5_000), ..SolverConfig::default() };
        let a = solve_weighted(&inst, &WeightVector::identity(), &cfg);
        let b = solve_weighted(&inst, &WeightVector::identity(), &cfg);
        assert_eq!(a.nodes_explored, b.nodes_explored);
        assert_eq!(a.incumbent, b.incumbent);
        assert_eq!(a.pool, b.pool);
        assert_eq!(a.lower_bound, b.lower_bound);
    }

    #[test]
    fn multi_vector_run_covers_the_tiny_front() {
        let inst = tiny1();
        let cfg = SolverConfig::default();
        let (archive, runs) = multi_vector_run(&inst, 1, &cfg, 10.0);
        assert!(archive
            .entries()
            .iter()
            .any(|e| e.objectives == ObjectiveVector::new(0.0, 31.0, 0.0)));
        assert_eq!(runs.len(), 1);

        let (archive, runs) = multi_vector_run(&inst, 7, &cfg, 10.0);
        assert_eq!(runs.len(), 7);
        assert!(runs.iter().all(|r| r.report.is_some()));
        // The exact Pareto front of tiny1 is the single initial point.
        assert_eq!(archive.len(), 1);
        assert_eq!(archive.entries()[0].objectives, ObjectiveVector::new(0.0, 31.0, 0.0));
    }

    #[test]
    fn zero_budget_skips_all_vectors() {
        let inst = tiny1();
        let (archive, runs) = multi_vector_run(&inst, 3, &SolverConfig::default(), 0.0);
        assert!(archive.is_empty());
        assert_eq!(runs.len(), 3);
        assert!(runs.iter().all(|r| r.report.is_none()));
    }

    #[test]
    fn pool_all_feasible_never_hurts_hypervolume() {
        for seed in [3u64, 14, 59] {
            let inst = generate_synthetic(&GeneratorParams {
                n_machines: 4,
                n_vms: 12,
                n_services: 5,
                n_resources: 2,
                n_locations: 2,
                n_neighborhoods: 2,
                seed,
            })
            .unwrap();
            let on = SolverConfig { node_limit: Some(20_000), gap: 0.05, ..SolverConfig::default() };
            let off = SolverConfig { pool_all_feasible: false, ..on };
            let (arch_on, _) = multi_vector_run(&inst, 3, &on, f64::INFINITY);
            let (arch_off, _) = multi_vector_run(&inst, 3, &off, f64::INFINITY);
            let r = crate::pareto::reference_point(&[&arch_on, &arch_off]).unwrap();
            let hv_on = crate::pareto::hypervolume(&arch_on, &r).unwrap();
            let hv_off = crate::pareto::hypervolume(&arch_off, &r).unwrap();
            assert!(hv_on >= hv_off - 1e-9, "seed {seed}: {hv_on} < {hv_off}");
        }
    }

    #[test]
    fn looser_gap_never_explores_more_nodes() {
        let inst = generate_synthetic(&GeneratorParams {
            n_machines: 4,
            n_vms: 11,
            n_services: 4,
            n_resources: 2,
            n_locations: 2,
            n_neighborhoods: 2,
            seed: 4242,
        })
        .unwrap();
        let mut previous = None;
        for gap in [0.5, 0.2, 0.1, 0.05, 0.01, 0.0] {
            let cfg = SolverConfig { gap, ..SolverConfig::default() };
            let report = solve_weighted(&inst, &WeightVector::identity(), &cfg);
            if let Some(prev) = previous {
                assert!(
                    report.nodes_explored >= prev,
                    "gap {gap} explored {} nodes, looser sibling {prev}",
                    report.nodes_explored
                );
            }
            previous = Some(report.nodes_explored);
        }
    }

    #[test]
    fn export_lp_tiny1_shape() {
        let inst = tiny1();
        let text = export_lp(&inst, &WeightVector::identity());
        let count = |needle: &str| text.lines().filter(|l| l.trim_start().starts_with(needle)).count();
        let binaries: Vec<&str> = text
            .lines()
            .skip_while(|l| !l.starts_with("Binaries"))
            .skip(1)
            .take_while(|l| !l.starts_with("End"))
            .flat_map(|l| l.split_whitespace())
            .collect();
        assert_eq!(binaries.iter().filter(|n| n.starts_with("x_")).count(), 6);
        assert_eq!(binaries.iter().filter(|n| n.starts_with("o_")).count(), 2);
        assert_eq!(binaries.iter().filter(|n| n.starts_with("mig_")).count(), 3);
        assert_eq!(binaries.iter().filter(|n| n.starts_with("y_")).count(), 4);
        assert_eq!(binaries.iter().filter(|n| n.starts_with("z_")).count(), 4);

        assert_eq!(count("eq1_"), 3);
        assert_eq!(count("eq4_"), 2);
        assert_eq!(count("eq5_"), 4);
        assert_eq!(count("eq7_"), 4);
        assert_eq!(count("eq8_"), 4);
        assert_eq!(count("eq9_"), 0);
        assert_eq!(count("eq10_"), 4);
        assert_eq!(count("eq11_"), 4);
        assert_eq!(count("eq12_"), 2);
        assert_eq!(count("eq13_"), 2);
        assert_eq!(count("eq15a_"), 2);
        assert_eq!(count("eq15b_"), 2);
        assert_eq!(count("eq17_"), 3);
        assert!(text.contains("\\ Eq.(5) conflict s=0 m=1"));
        assert!(text.lines().next().unwrap().starts_with('\\'));
        assert!(text.trim_end().ends_with("End"));
    }

    #[test]
    fn export_lp_is_deterministic() {
        let inst = tiny1();
        let a = export_lp(&inst, &WeightVector::identity());
        let b = export_lp(&inst, &WeightVector::identity());
        assert_eq!(a, b);
    }
}
