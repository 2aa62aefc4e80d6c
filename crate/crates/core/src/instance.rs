//! Data-centre model, the `vmr` text format, validation and a seeded
//! synthetic-instance generator.
//!
//! An [`Instance`] is immutable once built; everything downstream
//! (feasibility checks, objectives, solvers) reads it concurrently without
//! locking.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::feasibility;

/// A consumable machine resource (CPU, RAM, disk, ...).
///
/// Transient resources are held on both the source and the destination
/// machine while a VM migrates, so a reassignment pays for them twice.
#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    pub id: usize,
    pub transient: bool,
}

/// A physical machine with per-resource capacities and an electricity model
/// (idle draw `elec_idle`, per-CPU-unit draw `elec_per_cpu`, unit price
/// `elec_price`).
#[derive(Debug, Clone, PartialEq)]
pub struct Machine {
    pub id: usize,
    pub neighborhood: usize,
    pub location: usize,
    pub capacity: Vec<u64>,
    pub safety_capacity: Vec<u64>,
    pub elec_idle: f64,
    pub elec_per_cpu: f64,
    pub elec_price: f64,
}

/// A virtual machine: per-resource demand, initial host and migration cost
/// parameters (preparation, deployment, image transfer size).
#[derive(Debug, Clone, PartialEq)]
pub struct Vm {
    pub id: usize,
    pub service: usize,
    pub demand: Vec<u64>,
    pub initial_machine: usize,
    pub prep_cost: f64,
    pub deploy_cost: f64,
    pub transfer_size: f64,
}

/// A group of VMs forming one application tier.
#[derive(Debug, Clone, PartialEq)]
pub struct Service {
    pub id: usize,
    pub members: Vec<usize>,
    /// Minimum number of distinct locations the service must span.
    pub spread_min: usize,
    /// Services this one depends on: wherever this service runs, each
    /// dependency must run in the same neighbourhood.
    pub depends_on: Vec<usize>,
}

/// A complete data-centre instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub resources: Vec<Resource>,
    pub machines: Vec<Machine>,
    pub vms: Vec<Vm>,
    pub services: Vec<Service>,
    pub n_neighborhoods: usize,
    pub n_locations: usize,
    /// Pairwise transfer-cost factor between machines; diagonal is zero.
    pub transfer_cost: Vec<Vec<f64>>,
    /// Resource whose utilisation drives the electricity cost.
    pub cpu_resource: usize,
    pub time_budget_s: f64,
    /// Reverse dependency adjacency, derived in [`Instance::new`].
    dependents: Vec<Vec<usize>>,
}

impl Instance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        resources: Vec<Resource>,
        machines: Vec<Machine>,
        vms: Vec<Vm>,
        services: Vec<Service>,
        n_neighborhoods: usize,
        n_locations: usize,
        transfer_cost: Vec<Vec<f64>>,
        cpu_resource: usize,
        time_budget_s: f64,
    ) -> Self {
        let mut dependents = vec![Vec::new(); services.len()];
        for s in &services {
            for &d in &s.depends_on {
                if d < dependents.len() {
                    dependents[d].push(s.id);
                }
            }
        }
        Instance {
            resources,
            machines,
            vms,
            services,
            n_neighborhoods,
            n_locations,
            transfer_cost,
            cpu_resource,
            time_budget_s,
            dependents,
        }
    }

    pub fn n_resources(&self) -> usize {
        self.resources.len()
    }

    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn n_vms(&self) -> usize {
        self.vms.len()
    }

    pub fn n_services(&self) -> usize {
        self.services.len()
    }

    /// Services that depend on `service`.
    pub fn dependents_of(&self, service: usize) -> &[usize] {
        &self.dependents[service]
    }

    /// The assignment placing every VM on its initial machine.
    pub fn initial_assignment(&self) -> Assignment {
        Assignment {
            target: self.vms.iter().map(|v| v.initial_machine).collect(),
        }
    }
}

/// A total mapping VM -> machine; `target[v]` is the host of VM `v`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    pub target: Vec<usize>,
}

impl Assignment {
    pub fn new(target: Vec<usize>) -> Self {
        Assignment { target }
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Copy of `self` with VM `vm` moved to `machine`.
    pub fn with_move(&self, vm: usize, machine: usize) -> Assignment {
        let mut target = self.target.clone();
        target[vm] = machine;
        Assignment { target }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid instance: {0}")]
    Semantic(String),
    #[error("initial assignment infeasible: {0}")]
    InfeasibleInitial(String),
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("first-fit packing failed at VM {vm}: raise capacities or reduce the VM load")]
    Packing { vm: usize },
}

// ---------------------------------------------------------------------------
// vmr text format
// ---------------------------------------------------------------------------

struct TokenLines<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> TokenLines<'a> {
    fn new(text: &'a str) -> Self {
        TokenLines {
            lines: text.lines().enumerate(),
        }
    }

    /// Next non-empty line as (1-based line number, tokens); strips `#`
    /// comments.
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, raw) in self.lines.by_ref() {
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let toks: Vec<&str> = content.split_whitespace().collect();
            if !toks.is_empty() {
                return Some((i + 1, toks));
            }
        }
        None
    }
}

fn syntax(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_tok<T: std::str::FromStr>(line: usize, tok: &str, what: &str) -> Result<T, ParseError> {
    tok.parse()
        .map_err(|_| syntax(line, format!("expected {what}, found `{tok}`")))
}

fn expect_section(
    reader: &mut TokenLines,
    keyword: &str,
    n_args: usize,
) -> Result<(usize, Vec<usize>), ParseError> {
    let (line, toks) = reader
        .next_tokens()
        .ok_or_else(|| syntax(0, format!("unexpected end of input, expected `{keyword}`")))?;
    if toks[0] != keyword {
        return Err(syntax(line, format!("expected `{keyword}`, found `{}`", toks[0])));
    }
    if toks.len() != n_args + 1 {
        return Err(syntax(
            line,
            format!("`{keyword}` takes {n_args} argument(s), found {}", toks.len() - 1),
        ));
    }
    let mut args = Vec::with_capacity(n_args);
    for t in &toks[1..] {
        args.push(parse_tok(line, t, "a count")?);
    }
    Ok((line, args))
}

/// Parse the `vmr` text format.
///
/// Rejects anything that is not a structurally valid instance with a
/// feasible initial assignment.
pub fn parse_instance(text: &str) -> Result<Instance, ParseError> {
    let mut reader = TokenLines::new(text);

    let (_, args) = expect_section(&mut reader, "RESOURCES", 1)?;
    let n_resources = args[0];
    let mut resources = Vec::with_capacity(n_resources);
    for i in 0..n_resources {
        let (line, toks) = reader
            .next_tokens()
            .ok_or_else(|| syntax(0, "unexpected end of input in RESOURCES"))?;
        if toks.len() != 2 {
            return Err(syntax(line, "resource record needs `id transient`"));
        }
        let id: usize = parse_tok(line, toks[0], "a resource id")?;
        if id != i {
            return Err(syntax(line, format!("expected resource id {i}, found {id}")));
        }
        let transient = match toks[1] {
            "0" => false,
            "1" => true,
            other => return Err(syntax(line, format!("transient flag must be 0 or 1, found `{other}`"))),
        };
        resources.push(Resource { id, transient });
    }

    let (_, args) = expect_section(&mut reader, "TOPOLOGY", 2)?;
    let (n_neighborhoods, n_locations) = (args[0], args[1]);

    let (_, args) = expect_section(&mut reader, "MACHINES", 1)?;
    let n_machines = args[0];
    let mut machines = Vec::with_capacity(n_machines);
    for i in 0..n_machines {
        let (line, toks) = reader
            .next_tokens()
            .ok_or_else(|| syntax(0, "unexpected end of input in MACHINES"))?;
        let expect = 3 + 2 * n_resources + 3;
        if toks.len() != expect {
            return Err(syntax(
                line,
                format!("machine record needs {expect} fields (id neigh loc Q.. SC.. alpha beta gamma)"),
            ));
        }
        let id: usize = parse_tok(line, toks[0], "a machine id")?;
        if id != i {
            return Err(syntax(line, format!("expected machine id {i}, found {id}")));
        }
        let neighborhood = parse_tok(line, toks[1], "a neighbourhood index")?;
        let location = parse_tok(line, toks[2], "a location index")?;
        let mut capacity = Vec::with_capacity(n_resources);
        let mut safety_capacity = Vec::with_capacity(n_resources);
        for r in 0..n_resources {
            capacity.push(parse_tok(line, toks[3 + r], "a capacity")?);
        }
        for r in 0..n_resources {
            safety_capacity.push(parse_tok(line, toks[3 + n_resources + r], "a safety capacity")?);
        }
        let base = 3 + 2 * n_resources;
        machines.push(Machine {
            id,
            neighborhood,
            location,
            capacity,
            safety_capacity,
            elec_idle: parse_tok(line, toks[base], "a real")?,
            elec_per_cpu: parse_tok(line, toks[base + 1], "a real")?,
            elec_price: parse_tok(line, toks[base + 2], "a real")?,
        });
    }

    let (_, args) = expect_section(&mut reader, "SERVICES", 1)?;
    let n_services = args[0];
    let mut services = Vec::with_capacity(n_services);
    for i in 0..n_services {
        let (line, toks) = reader
            .next_tokens()
            .ok_or_else(|| syntax(0, "unexpected end of input in SERVICES"))?;
        if toks.len() < 3 {
            return Err(syntax(line, "service record needs `id spread_min k dep_1..dep_k`"));
        }
        let id: usize = parse_tok(line, toks[0], "a service id")?;
        if id != i {
            return Err(syntax(line, format!("expected service id {i}, found {id}")));
        }
        let spread_min = parse_tok(line, toks[1], "a spread minimum")?;
        let k: usize = parse_tok(line, toks[2], "a dependency count")?;
        if toks.len() != 3 + k {
            return Err(syntax(line, format!("service record declares {k} dependencies but lists {}", toks.len() - 3)));
        }
        let mut depends_on = Vec::with_capacity(k);
        for t in &toks[3..] {
            depends_on.push(parse_tok(line, t, "a service index")?);
        }
        services.push(Service {
            id,
            members: Vec::new(),
            spread_min,
            depends_on,
        });
    }

    let (_, args) = expect_section(&mut reader, "VMS", 1)?;
    let n_vms = args[0];
    let mut vms = Vec::with_capacity(n_vms);
    for i in 0..n_vms {
        let (line, toks) = reader
            .next_tokens()
            .ok_or_else(|| syntax(0, "unexpected end of input in VMS"))?;
        let expect = 2 + n_resources + 4;
        if toks.len() != expect {
            return Err(syntax(
                line,
                format!("vm record needs {expect} fields (id service d.. m0 mu1 mu3 transfer_size)"),
            ));
        }
        let id: usize = parse_tok(line, toks[0], "a vm id")?;
        if id != i {
            return Err(syntax(line, format!("expected vm id {i}, found {id}")));
        }
        let service = parse_tok(line, toks[1], "a service index")?;
        let mut demand = Vec::with_capacity(n_resources);
        for r in 0..n_resources {
            demand.push(parse_tok(line, toks[2 + r], "a demand")?);
        }
        let base = 2 + n_resources;
        vms.push(Vm {
            id,
            service,
            demand,
            initial_machine: parse_tok(line, toks[base], "a machine index")?,
            prep_cost: parse_tok(line, toks[base + 1], "a real")?,
            deploy_cost: parse_tok(line, toks[base + 2], "a real")?,
            transfer_size: parse_tok(line, toks[base + 3], "a real")?,
        });
    }

    let (_, _) = expect_section(&mut reader, "TRANSFER", 0)?;
    let mut transfer_cost = Vec::with_capacity(n_machines);
    for _ in 0..n_machines {
        let (line, toks) = reader
            .next_tokens()
            .ok_or_else(|| syntax(0, "unexpected end of input in TRANSFER"))?;
        if toks.len() != n_machines {
            return Err(syntax(line, format!("transfer row needs {n_machines} entries, found {}", toks.len())));
        }
        let mut row = Vec::with_capacity(n_machines);
        for t in toks {
            row.push(parse_tok(line, t, "a real")?);
        }
        transfer_cost.push(row);
    }

    let (_, args) = expect_section(&mut reader, "CPU_RESOURCE", 1)?;
    let cpu_resource = args[0];

    let (budget_line, toks) = reader
        .next_tokens()
        .ok_or_else(|| syntax(0, "unexpected end of input, expected `TIME_BUDGET`"))?;
    if toks[0] != "TIME_BUDGET" || toks.len() != 2 {
        return Err(syntax(budget_line, "expected `TIME_BUDGET seconds`"));
    }
    let time_budget_s: f64 = parse_tok(budget_line, toks[1], "a real")?;

    if let Some((line, toks)) = reader.next_tokens() {
        return Err(syntax(line, format!("trailing content `{}`", toks.join(" "))));
    }

    // Attach service membership from the VM records.
    for (v, vm) in vms.iter().enumerate() {
        if vm.service >= services.len() {
            return Err(ParseError::Semantic(format!(
                "vm {v} references unknown service {}",
                vm.service
            )));
        }
        services[vm.service].members.push(v);
    }

    let inst = Instance::new(
        resources,
        machines,
        vms,
        services,
        n_neighborhoods,
        n_locations,
        transfer_cost,
        cpu_resource,
        time_budget_s,
    );

    let structural = validate_structure(&inst);
    if let Some(first) = structural.first() {
        return Err(ParseError::Semantic(first.clone()));
    }
    let report = feasibility::check(&inst, &inst.initial_assignment());
    if let Some(first) = report.violations().first() {
        return Err(ParseError::InfeasibleInitial(first.to_string()));
    }
    Ok(inst)
}

/// Render an instance in the `vmr` text format.
///
/// `parse_instance(&write_instance(inst))` reproduces `inst` field for
/// field; floats are printed with enough digits to round-trip exactly.
pub fn write_instance(inst: &Instance) -> String {
    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "# vmr instance: {} machines, {} vms, {} services, {} resources",
        inst.n_machines(), inst.n_vms(), inst.n_services(), inst.n_resources()).unwrap();
    writeln!(w, "RESOURCES {}", inst.n_resources()).unwrap();
    for r in &inst.resources {
        writeln!(w, "{} {}", r.id, u8::from(r.transient)).unwrap();
    }
    writeln!(w, "TOPOLOGY {} {}", inst.n_neighborhoods, inst.n_locations).unwrap();
    writeln!(w, "MACHINES {}", inst.n_machines()).unwrap();
    for m in &inst.machines {
        write!(w, "{} {} {}", m.id, m.neighborhood, m.location).unwrap();
        for q in &m.capacity {
            write!(w, " {q}").unwrap();
        }
        for sc in &m.safety_capacity {
            write!(w, " {sc}").unwrap();
        }
        writeln!(w, " {} {} {}", m.elec_idle, m.elec_per_cpu, m.elec_price).unwrap();
    }
    writeln!(w, "SERVICES {}", inst.n_services()).unwrap();
    for s in &inst.services {
        write!(w, "{} {} {}", s.id, s.spread_min, s.depends_on.len()).unwrap();
        for d in &s.depends_on {
            write!(w, " {d}").unwrap();
        }
        writeln!(w).unwrap();
    }
    writeln!(w, "VMS {}", inst.n_vms()).unwrap();
    for v in &inst.vms {
        write!(w, "{} {}", v.id, v.service).unwrap();
        for d in &v.demand {
            write!(w, " {d}").unwrap();
        }
        writeln!(w, " {} {} {} {}", v.initial_machine, v.prep_cost, v.deploy_cost, v.transfer_size).unwrap();
    }
    writeln!(w, "TRANSFER").unwrap();
    for row in &inst.transfer_cost {
        let line: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        writeln!(w, "{}", line.join(" ")).unwrap();
    }
    writeln!(w, "CPU_RESOURCE {}", inst.cpu_resource).unwrap();
    writeln!(w, "TIME_BUDGET {}", inst.time_budget_s).unwrap();
    out
}

// ---------------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------------

fn validate_structure(inst: &Instance) -> Vec<String> {
    let mut out = Vec::new();
    let nr = inst.n_resources();
    let nm = inst.n_machines();
    let ns = inst.n_services();

    for (i, r) in inst.resources.iter().enumerate() {
        if r.id != i {
            out.push(format!("resource ids not dense: slot {i} holds id {}", r.id));
        }
    }
    if inst.cpu_resource >= nr {
        out.push(format!("cpu resource {} out of range", inst.cpu_resource));
    }
    if !(inst.time_budget_s > 0.0) {
        out.push("time budget must be positive".to_string());
    }

    for (i, m) in inst.machines.iter().enumerate() {
        if m.id != i {
            out.push(format!("machine ids not dense: slot {i} holds id {}", m.id));
        }
        if m.neighborhood >= inst.n_neighborhoods {
            out.push(format!("machine {i}: neighbourhood {} out of range", m.neighborhood));
        }
        if m.location >= inst.n_locations {
            out.push(format!("machine {i}: location {} out of range", m.location));
        }
        if m.capacity.len() != nr || m.safety_capacity.len() != nr {
            out.push(format!("machine {i}: capacity vectors must have length {nr}"));
            continue;
        }
        for r in 0..nr {
            if m.safety_capacity[r] > m.capacity[r] {
                out.push(format!(
                    "machine {i}, resource {r}: safety capacity exceeds capacity ({} > {})",
                    m.safety_capacity[r], m.capacity[r]
                ));
            }
        }
        for (name, v) in [("alpha", m.elec_idle), ("beta", m.elec_per_cpu), ("gamma", m.elec_price)] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("machine {i}: {name} must be a nonnegative finite real"));
            }
        }
    }

    let mut service_of = vec![Vec::new(); inst.n_vms()];
    for (i, s) in inst.services.iter().enumerate() {
        if s.id != i {
            out.push(format!("service ids not dense: slot {i} holds id {}", s.id));
        }
        if s.spread_min > inst.n_locations {
            out.push(format!("service {i}: spread_min {} exceeds location count {}", s.spread_min, inst.n_locations));
        }
        for &d in &s.depends_on {
            if d == i {
                out.push(format!("service {i}: self-dependency"));
            } else if d >= ns {
                out.push(format!("service {i}: dependency {d} out of range"));
            }
        }
        for &v in &s.members {
            if v >= inst.n_vms() {
                out.push(format!("service {i}: member vm {v} out of range"));
            } else {
                service_of[v].push(i);
            }
        }
    }

    for (i, v) in inst.vms.iter().enumerate() {
        if v.id != i {
            out.push(format!("vm ids not dense: slot {i} holds id {}", v.id));
        }
        if v.demand.len() != nr {
            out.push(format!("vm {i}: demand vector must have length {nr}"));
        }
        if v.initial_machine >= nm {
            out.push(format!("vm {i}: initial machine {} out of range", v.initial_machine));
        }
        match (v.service >= ns, service_of.get(i)) {
            (true, _) => out.push(format!("vm {i}: service {} out of range", v.service)),
            (false, Some(owners)) if owners.as_slice() != [v.service] => out.push(format!(
                "vm {i}: must belong to exactly one service (declared {}, member of {owners:?})",
                v.service
            )),
            _ => {}
        }
        for (name, x) in [("mu1", v.prep_cost), ("mu3", v.deploy_cost), ("transfer_size", v.transfer_size)] {
            if !(x >= 0.0 && x.is_finite()) {
                out.push(format!("vm {i}: {name} must be a nonnegative finite real"));
            }
        }
    }

    if inst.transfer_cost.len() != nm {
        out.push(format!("transfer-cost matrix must have {nm} rows"));
    } else {
        for (i, row) in inst.transfer_cost.iter().enumerate() {
            if row.len() != nm {
                out.push(format!("transfer-cost row {i} must have {nm} entries"));
                continue;
            }
            if row[i] != 0.0 {
                out.push(format!("nonzero transfer-cost diagonal at machine {i}"));
            }
            for (j, c) in row.iter().enumerate() {
                if !(*c >= 0.0 && c.is_finite()) {
                    out.push(format!("transfer cost [{i}][{j}] must be a nonnegative finite real"));
                }
            }
        }
    }

    out
}

/// Every invariant violation in `inst`, as human-readable messages.
///
/// Structural problems are reported first; when the structure is sound the
/// initial assignment is also checked for feasibility.
pub fn validate(inst: &Instance) -> Vec<String> {
    let mut out = validate_structure(inst);
    if out.is_empty() {
        let report = feasibility::check(inst, &inst.initial_assignment());
        out.extend(
            report
                .violations()
                .iter()
                .map(|v| format!("initial assignment infeasible: {v}")),
        );
    }
    out
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

/// Shape parameters for [`generate_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeneratorParams {
    pub n_machines: usize,
    pub n_vms: usize,
    pub n_services: usize,
    pub n_resources: usize,
    pub n_locations: usize,
    pub n_neighborhoods: usize,
    pub seed: u64,
}

/// Deterministic synthetic instance with a feasible initial assignment.
///
/// Resource 0 is the (non-transient) CPU resource; further resources are
/// transient with probability 1/2. Demands are uniform integers in [1,10],
/// capacities roughly twice the mean per-machine load, safety capacities
/// 80% of capacity. Electricity constants: alpha in [50,200] and beta in
/// [1,10] per machine, gamma in [0.5,2] per location (copied to its
/// machines). VMs are assigned to services round-robin and packed first fit
/// under capacity and conflict; spread minima and dependencies are drawn so
/// the initial placement satisfies them.
pub fn generate_synthetic(params: &GeneratorParams) -> Result<Instance, GenerateError> {
    let p = *params;
    if p.n_services == 0 || p.n_vms < p.n_services {
        return Err(GenerateError::InvalidParams(
            "need n_vms >= n_services >= 1".to_string(),
        ));
    }
    if p.n_locations == 0 || p.n_machines < p.n_locations {
        return Err(GenerateError::InvalidParams(
            "need n_machines >= n_locations >= 1".to_string(),
        ));
    }
    if p.n_neighborhoods == 0 || p.n_machines < p.n_neighborhoods {
        return Err(GenerateError::InvalidParams(
            "need n_machines >= n_neighborhoods >= 1".to_string(),
        ));
    }
    if p.n_resources == 0 {
        return Err(GenerateError::InvalidParams("need at least one resource".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    let resources: Vec<Resource> = (0..p.n_resources)
        .map(|id| Resource {
            id,
            transient: id != 0 && rng.gen_bool(0.5),
        })
        .collect();

    let gamma_per_location: Vec<f64> = (0..p.n_locations).map(|_| rng.gen_range(0.5..=2.0)).collect();

    // Per-VM draws, in id order: demand vector, then migration parameters.
    let mut demand = Vec::with_capacity(p.n_vms);
    let mut mu = Vec::with_capacity(p.n_vms);
    for _ in 0..p.n_vms {
        let d: Vec<u64> = (0..p.n_resources).map(|_| rng.gen_range(1..=10u64)).collect();
        demand.push(d);
        mu.push((
            rng.gen_range(1.0..=5.0),
            rng.gen_range(1.0..=5.0),
            rng.gen_range(1.0..=3.0),
        ));
    }

    let mut total_demand = vec![0u64; p.n_resources];
    let mut max_demand = vec![0u64; p.n_resources];
    for d in &demand {
        for r in 0..p.n_resources {
            total_demand[r] += d[r];
            max_demand[r] = max_demand[r].max(d[r]);
        }
    }

    let mut machines = Vec::with_capacity(p.n_machines);
    for id in 0..p.n_machines {
        let location = id % p.n_locations;
        let mut capacity = Vec::with_capacity(p.n_resources);
        let mut safety_capacity = Vec::with_capacity(p.n_resources);
        for r in 0..p.n_resources {
            let base = 2.0 * total_demand[r] as f64 / p.n_machines as f64;
            let q = ((base * rng.gen_range(1.0..=1.4)).ceil() as u64).max(max_demand[r]);
            capacity.push(q);
            safety_capacity.push((q as f64 * 0.8).floor() as u64);
        }
        machines.push(Machine {
            id,
            neighborhood: id % p.n_neighborhoods,
            location,
            capacity,
            safety_capacity,
            elec_idle: rng.gen_range(50.0..=200.0),
            elec_per_cpu: rng.gen_range(1.0..=10.0),
            elec_price: gamma_per_location[location],
        });
    }

    // Round-robin service membership, first-fit packing under capacity and
    // conflict.
    let service_of: Vec<usize> = (0..p.n_vms).map(|v| v % p.n_services).collect();
    let mut usage = vec![vec![0u64; p.n_resources]; p.n_machines];
    let mut service_on = vec![vec![false; p.n_machines]; p.n_services];
    let mut initial = Vec::with_capacity(p.n_vms);
    'vm: for v in 0..p.n_vms {
        let s = service_of[v];
        for m in 0..p.n_machines {
            if service_on[s][m] {
                continue;
            }
            let fits = (0..p.n_resources).all(|r| usage[m][r] + demand[v][r] <= machines[m].capacity[r]);
            if fits {
                for r in 0..p.n_resources {
                    usage[m][r] += demand[v][r];
                }
                service_on[s][m] = true;
                initial.push(m);
                continue 'vm;
            }
        }
        return Err(GenerateError::Packing { vm: v });
    }

    let vms: Vec<Vm> = (0..p.n_vms)
        .map(|id| Vm {
            id,
            service: service_of[id],
            demand: demand[id].clone(),
            initial_machine: initial[id],
            prep_cost: mu[id].0,
            deploy_cost: mu[id].1,
            transfer_size: mu[id].2,
        })
        .collect();

    let mut transfer_cost = vec![vec![0.0; p.n_machines]; p.n_machines];
    for i in 0..p.n_machines {
        for j in (i + 1)..p.n_machines {
            let c = rng.gen_range(1.0..=5.0);
            transfer_cost[i][j] = c;
            transfer_cost[j][i] = c;
        }
    }

    // Spread minima the initial placement already satisfies.
    let mut services = Vec::with_capacity(p.n_services);
    let mut occupied_neigh = vec![vec![false; p.n_neighborhoods]; p.n_services];
    for s in 0..p.n_services {
        let members: Vec<usize> = (0..p.n_vms).filter(|&v| service_of[v] == s).collect();
        let mut locs = vec![false; p.n_locations];
        for &v in &members {
            locs[machines[initial[v]].location] = true;
            occupied_neigh[s][machines[initial[v]].neighborhood] = true;
        }
        let occupied = locs.iter().filter(|&&b| b).count();
        let spread_min = rng.gen_range(1..=occupied);
        services.push(Service {
            id: s,
            members,
            spread_min,
            depends_on: Vec::new(),
        });
    }

    // Dependency edges only where the initial placement satisfies them.
    for _ in 0..p.n_services / 2 {
        let si = rng.gen_range(0..p.n_services);
        let sj = rng.gen_range(0..p.n_services);
        if si == sj || services[si].depends_on.contains(&sj) {
            continue;
        }
        let satisfied = (0..p.n_neighborhoods)
            .all(|n| !occupied_neigh[si][n] || occupied_neigh[sj][n]);
        if satisfied {
            services[si].depends_on.push(sj);
        }
    }

    let inst = Instance::new(
        resources,
        machines,
        vms,
        services,
        p.n_neighborhoods,
        p.n_locations,
        transfer_cost,
        0,
        60.0,
    );
    debug_assert!(validate(&inst).is_empty());
    Ok(inst)
}
