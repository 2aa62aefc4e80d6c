//! Shared unit-test fixtures.

use crate::instance::{Instance, Machine, Resource, Service, Vm};

/// Two machines in separate locations/neighbourhoods, three VMs, one
/// conflicting two-member service. Small enough to enumerate all 2^3
/// assignments by hand.
pub fn tiny1() -> Instance {
    let resources = vec![Resource { id: 0, transient: false }];
    let machine = |id, neighborhood, location| Machine {
        id,
        neighborhood,
        location,
        capacity: vec![10],
        safety_capacity: vec![8],
        elec_idle: 10.0,
        elec_per_cpu: 1.0,
        elec_price: 1.0,
    };
    let vm = |id, service, d, m0| Vm {
        id,
        service,
        demand: vec![d],
        initial_machine: m0,
        prep_cost: 1.0,
        deploy_cost: 1.0,
        transfer_size: 1.0,
    };
    let services = vec![
        Service { id: 0, members: vec![0, 1], spread_min: 1, depends_on: vec![] },
        Service { id: 1, members: vec![2], spread_min: 1, depends_on: vec![] },
    ];
    Instance::new(
        resources,
        vec![machine(0, 0, 0), machine(1, 1, 1)],
        vec![vm(0, 0, 4, 0), vm(1, 0, 4, 1), vm(2, 1, 3, 1)],
        services,
        2,
        2,
        vec![vec![0.0, 2.0], vec![2.0, 0.0]],
        0,
        30.0,
    )
}
