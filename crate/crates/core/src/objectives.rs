//! The three cost objectives (reliability, electricity, migration), their
//! weighted-sum scalarization, and the weight-vector sets used to probe the
//! objective space.

use thiserror::Error;

use crate::feasibility::{self, UsageTable};
use crate::instance::{Assignment, Instance};

/// Cost triple of one assignment, in the fixed order
/// (reliability, electricity, migration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveVector {
    pub reliability: f64,
    pub electricity: f64,
    pub migration: f64,
}

impl ObjectiveVector {
    pub fn new(reliability: f64, electricity: f64, migration: f64) -> Self {
        ObjectiveVector { reliability, electricity, migration }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.reliability, self.electricity, self.migration]
    }
}

/// Nonnegative objective weights, same order as [`ObjectiveVector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightVector {
    w: [f64; 3],
}

impl WeightVector {
    /// Rejects negative components and the all-zero vector.
    pub fn new(w: [f64; 3]) -> Result<Self, ObjectiveError> {
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(ObjectiveError::NegativeWeight);
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(ObjectiveError::ZeroWeights);
        }
        Ok(WeightVector { w })
    }

    /// (1, 1, 1): every objective weighted equally.
    pub fn identity() -> Self {
        WeightVector { w: [1.0, 1.0, 1.0] }
    }

    pub fn components(&self) -> [f64; 3] {
        self.w
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ObjectiveError {
    #[error("weight vector must not be all zero")]
    ZeroWeights,
    #[error("weights must be nonnegative finite reals")]
    NegativeWeight,
    #[error("spread vector count must be between 1 and 7, got {0}")]
    VectorCountOutOfRange(usize),
}

/// Total usage above the safety capacities: sum over machines and
/// resources of `max(0, U - SC)`.
pub fn reliability_cost(inst: &Instance, usage: &UsageTable) -> f64 {
    let mut cost = 0.0;
    for m in 0..inst.n_machines() {
        for r in 0..inst.n_resources() {
            let u = usage.get(m, r);
            let sc = inst.machines[m].safety_capacity[r];
            if u > sc {
                cost += (u - sc) as f64;
            }
        }
    }
    cost
}

/// Electricity bill: per machine, price times (idle draw if the machine
/// hosts at least one VM, plus per-CPU draw times CPU usage).
///
/// Whether a machine is "on" depends on hosting under `a`, not on the
/// usage table, which for transient resources can be nonzero on an
/// otherwise empty machine.
pub fn electricity_cost(inst: &Instance, a: &Assignment, usage: &UsageTable) -> f64 {
    let mut hosts = vec![false; inst.n_machines()];
    for &m in &a.target {
        hosts[m] = true;
    }
    let mut cost = 0.0;
    for (m, machine) in inst.machines.iter().enumerate() {
        let idle = if hosts[m] { machine.elec_idle } else { 0.0 };
        cost += machine.elec_price
            * (idle + machine.elec_per_cpu * usage.get(m, inst.cpu_resource) as f64);
    }
    cost
}

/// Total cost of every VM that leaves its initial machine: preparation and
/// deployment plus the image transfer (size times the machine-pair
/// transfer factor).
pub fn migration_cost(inst: &Instance, a: &Assignment) -> f64 {
    let mut cost = 0.0;
    for (v, vm) in inst.vms.iter().enumerate() {
        let dst = a.target[v];
        if dst != vm.initial_machine {
            cost += vm.prep_cost
                + vm.deploy_cost
                + vm.transfer_size * inst.transfer_cost[vm.initial_machine][dst];
        }
    }
    cost
}

/// All three objective costs of `a`.
pub fn evaluate(inst: &Instance, a: &Assignment) -> ObjectiveVector {
    let usage = feasibility::compute_usage(inst, a);
    ObjectiveVector {
        reliability: reliability_cost(inst, &usage),
        electricity: electricity_cost(inst, a, &usage),
        migration: migration_cost(inst, a),
    }
}

/// Plain dot product; the objectives are deliberately left in their native
/// units and scales.
pub fn scalarize(o: &ObjectiveVector, w: &WeightVector) -> f64 {
    let [wr, we, wm] = w.components();
    wr * o.reliability + we * o.electricity + wm * o.migration
}

const SPREAD_VECTORS: [[f64; 3]; 7] = [
    [1.0, 1.0, 1.0],
    [0.6, 0.3, 0.1],
    [0.3, 0.1, 0.6],
    [0.1, 0.6, 0.3],
    [0.45, 0.45, 0.1],
    [0.45, 0.1, 0.45],
    [0.1, 0.45, 0.45],
];

/// The first `k` of the seven maximally spread weight vectors, in their
/// fixed probing order starting with the identity vector.
pub fn spread_vectors(k: usize) -> Result<Vec<WeightVector>, ObjectiveError> {
    if k == 0 || k > SPREAD_VECTORS.len() {
        return Err(ObjectiveError::VectorCountOutOfRange(k));
    }
    Ok(SPREAD_VECTORS[..k].iter().map(|w| WeightVector { w: *w }).collect())
}

/// All weight vectors of the unit-simplex lattice with `divisions`
/// subdivisions per axis, lexicographically ordered.
pub fn simplex_lattice(divisions: usize) -> Vec<WeightVector> {
    let h = divisions.max(1);
    let mut out = Vec::new();
    for i in (0..=h).rev() {
        for j in (0..=h - i).rev() {
            let k = h - i - j;
            out.push(WeightVector {
                w: [i as f64 / h as f64, j as f64 / h as f64, k as f64 / h as f64],
            });
        }
    }
    out
}

/// `k` probing vectors: the spread list for `k <= 7`, otherwise the first
/// `k` points of the smallest simplex lattice that holds them.
pub fn weight_vectors(k: usize) -> Vec<WeightVector> {
    assert!(k >= 1, "need at least one weight vector");
    if k <= SPREAD_VECTORS.len() {
        return spread_vectors(k).unwrap();
    }
    let mut h = 1;
    while (h + 1) * (h + 2) / 2 < k {
        h += 1;
    }
    let mut vectors = simplex_lattice(h);
    vectors.truncate(k);
    vectors
}

/// Optional min-max rescaling of objective vectors onto [0,1]^3, fitted on
/// an observed point set. Off in every default pipeline; exposed for
/// experimentation with scale-free scalarization.
#[derive(Debug, Clone, Copy)]
pub struct MinMaxNormalizer {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl MinMaxNormalizer {
    pub fn fit(points: &[ObjectiveVector]) -> Option<Self> {
        let first = points.first()?.as_array();
        let mut lo = first;
        let mut hi = first;
        for p in points {
            for (i, x) in p.as_array().iter().enumerate() {
                lo[i] = lo[i].min(*x);
                hi[i] = hi[i].max(*x);
            }
        }
        Some(MinMaxNormalizer { lo, hi })
    }

    pub fn apply(&self, o: &ObjectiveVector) -> ObjectiveVector {
        let a = o.as_array();
        let mut n = [0.0; 3];
        for i in 0..3 {
            let span = self.hi[i] - self.lo[i];
            n[i] = if span > 0.0 { (a[i] - self.lo[i]) / span } else { 0.0 };
        }
        ObjectiveVector::new(n[0], n[1], n[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feasibility::compute_usage;
    use crate::instance::{generate_synthetic, GeneratorParams};
    use crate::testfix::tiny1;

    #[test]
    fn reliability_zero_below_safety() {
        let inst = tiny1();
        let u = compute_usage(&inst, &inst.initial_assignment());
        assert_eq!(reliability_cost(&inst, &u), 0.0);
    }

    #[test]
    fn reliability_counts_excess() {
        let mut inst = tiny1();
        inst.machines[0].safety_capacity[0] = 5;
        let a = inst.initial_assignment().with_move(2, 0);
        let u = compute_usage(&inst, &a);
        assert_eq!(reliability_cost(&inst, &u), 2.0);
    }

    #[test]
    fn reliability_zero_exactly_at_safety() {
        let mut inst = tiny1();
        // Safety capacities equal to the initial usage (4 and 7).
        inst.machines[0].safety_capacity[0] = 4;
        inst.machines[1].safety_capacity[0] = 7;
        let u = compute_usage(&inst, &inst.initial_assignment());
        assert_eq!(reliability_cost(&inst, &u), 0.0);
    }

    #[test]
    fn electricity_initial_and_moved() {
        let inst = tiny1();
        let a0 = inst.initial_assignment();
        let u0 = compute_usage(&inst, &a0);
        assert_eq!(electricity_cost(&inst, &a0, &u0), 31.0);
        let a1 = a0.with_move(2, 0);
        let u1 = compute_usage(&inst, &a1);
        assert_eq!(electricity_cost(&inst, &a1, &u1), 31.0);
    }

    #[test]
    fn empty_machine_contributes_nothing() {
        let inst = tiny1();
        // Leave machine 0 empty: v0 joins machine 1? That conflicts, but
        // electricity is defined for any total mapping.
        let a = crate::instance::Assignment::new(vec![1, 1, 1]);
        let u = compute_usage(&inst, &a);
        assert_eq!(electricity_cost(&inst, &a, &u), 10.0 + 11.0);
    }

    #[test]
    fn migration_examples() {
        let inst = tiny1();
        let a0 = inst.initial_assignment();
        assert_eq!(migration_cost(&inst, &a0), 0.0);
        assert_eq!(migration_cost(&inst, &a0.with_move(2, 0)), 4.0);
        let swap = crate::instance::Assignment::new(vec![1, 0, 1]);
        assert_eq!(migration_cost(&inst, &swap), 8.0);
    }

    #[test]
    fn evaluate_composes_the_three() {
        let inst = tiny1();
        let o = evaluate(&inst, &inst.initial_assignment());
        assert_eq!(o, ObjectiveVector::new(0.0, 31.0, 0.0));
        let o = evaluate(&inst, &inst.initial_assignment().with_move(2, 0));
        assert_eq!(o, ObjectiveVector::new(0.0, 31.0, 4.0));
        let mut varied = tiny1();
        varied.machines[0].safety_capacity[0] = 5;
        let o = evaluate(&varied, &varied.initial_assignment().with_move(2, 0));
        assert_eq!(o, ObjectiveVector::new(2.0, 31.0, 4.0));
    }

    #[test]
    fn scalarize_examples() {
        let w111 = WeightVector::identity();
        assert_eq!(scalarize(&ObjectiveVector::new(0.0, 31.0, 0.0), &w111), 31.0);
        let axis = WeightVector::new([1.0, 0.0, 0.0]).unwrap();
        assert_eq!(scalarize(&ObjectiveVector::new(2.0, 31.0, 4.0), &axis), 2.0);
        let w = WeightVector::new([0.6, 0.3, 0.1]).unwrap();
        let got = scalarize(&ObjectiveVector::new(2.0, 31.0, 4.0), &w);
        assert!((got - 10.9).abs() < 1e-12);
    }

    #[test]
    fn scalarize_is_linear_in_weights() {
        let o = ObjectiveVector::new(3.0, 17.0, 5.0);
        let w1 = WeightVector::new([0.2, 0.5, 0.1]).unwrap();
        let w2 = WeightVector::new([0.4, 0.1, 0.9]).unwrap();
        let sum = WeightVector::new([0.6, 0.6, 1.0]).unwrap();
        assert!((scalarize(&o, &sum) - (scalarize(&o, &w1) + scalarize(&o, &w2))).abs() < 1e-12);
    }

    #[test]
    fn scaling_weights_keeps_the_argmin_set() {
        let inst = tiny1();
        let argmin_set = |w: &WeightVector| {
            let mut best = Vec::new();
            let mut min = f64::INFINITY;
            for bits in 0..8usize {
                let a =
                    crate::instance::Assignment::new(vec![bits & 1, (bits >> 1) & 1, (bits >> 2) & 1]);
                let value = scalarize(&evaluate(&inst, &a), w);
                if value < min - 1e-9 {
                    min = value;
                    best = vec![bits];
                } else if (value - min).abs() <= 1e-9 {
                    best.push(bits);
                }
            }
            best
        };
        let w = WeightVector::new([0.3, 0.2, 0.5]).unwrap();
        let scaled = WeightVector::new([0.9, 0.6, 1.5]).unwrap();
        assert_eq!(argmin_set(&w), argmin_set(&scaled));
    }

    #[test]
    fn reliability_monotone_in_safety_capacity() {
        for seed in 0..20 {
            let inst = generate_synthetic(&GeneratorParams {
                n_machines: 3,
                n_vms: 10,
                n_services: 4,
                n_resources: 2,
                n_locations: 2,
                n_neighborhoods: 2,
                seed,
            })
            .unwrap();
            let a = inst.initial_assignment();
            let u = compute_usage(&inst, &a);
            let base = reliability_cost(&inst, &u);
            let mut raised = inst.clone();
            raised.machines[(seed as usize) % 3].safety_capacity[0] += 3;
            assert!(reliability_cost(&raised, &u) <= base);
        }
    }

    #[test]
    fn initial_assignment_has_no_migration() {
        for seed in 0..20 {
            let inst = generate_synthetic(&GeneratorParams {
                n_machines: 4,
                n_vms: 16,
                n_services: 6,
                n_resources: 2,
                n_locations: 2,
                n_neighborhoods: 2,
                seed,
            })
            .unwrap();
            assert_eq!(evaluate(&inst, &inst.initial_assignment()).migration, 0.0);
        }
    }

    #[test]
    fn spread_vector_list_is_exact() {
        assert_eq!(spread_vectors(1).unwrap(), vec![WeightVector::identity()]);
        let all = spread_vectors(7).unwrap();
        let expected = [
            [1.0, 1.0, 1.0],
            [0.6, 0.3, 0.1],
            [0.3, 0.1, 0.6],
            [0.1, 0.6, 0.3],
            [0.45, 0.45, 0.1],
            [0.45, 0.1, 0.45],
            [0.1, 0.45, 0.45],
        ];
        assert_eq!(all.len(), 7);
        for (v, e) in all.iter().zip(expected.iter()) {
            assert_eq!(v.components(), *e);
        }
        assert_eq!(spread_vectors(3).unwrap(), all[..3].to_vec());
        assert_eq!(spread_vectors(0), Err(ObjectiveError::VectorCountOutOfRange(0)));
        assert_eq!(spread_vectors(8), Err(ObjectiveError::VectorCountOutOfRange(8)));
    }

    #[test]
    fn lattice_covers_larger_counts() {
        let vs = weight_vectors(12);
        assert_eq!(vs.len(), 12);
        for v in &vs {
            let [a, b, c] = v.components();
            assert!((a + b + c - 1.0).abs() < 1e-12);
        }
        // No duplicates.
        for i in 0..vs.len() {
            for j in (i + 1)..vs.len() {
                assert_ne!(vs[i].components(), vs[j].components());
            }
        }
    }

    #[test]
    fn weight_vector_invariants() {
        assert_eq!(WeightVector::new([0.0, 0.0, 0.0]), Err(ObjectiveError::ZeroWeights));
        assert_eq!(WeightVector::new([-1.0, 0.0, 0.0]), Err(ObjectiveError::NegativeWeight));
    }
}
