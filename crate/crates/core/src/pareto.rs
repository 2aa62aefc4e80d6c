//! Non-dominance bookkeeping and the two evaluation metrics: number of
//! efficient solutions and hypervolume against a common reference point.

use std::fmt::Write as _;

use thiserror::Error;

use crate::instance::Assignment;
use crate::objectives::ObjectiveVector;

/// `a` dominates `b`: no worse in every objective, strictly better in at
/// least one (minimization).
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    let a = a.as_array();
    let b = b.as_array();
    let mut strictly = false;
    for i in 0..3 {
        if a[i] > b[i] {
            return false;
        }
        if a[i] < b[i] {
            strictly = true;
        }
    }
    strictly
}

/// One archived solution: the reassignment plan and its cost triple.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub assignment: Assignment,
    pub objectives: ObjectiveVector,
}

/// A mutually non-dominated set of solutions with distinct objective
/// vectors. Duplicated objective vectors keep the first-seen assignment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParetoArchive {
    entries: Vec<ArchiveEntry>,
}

impl ParetoArchive {
    pub fn new() -> Self {
        ParetoArchive::default()
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert unless dominated by or duplicating a member; evicts members
    /// the entry dominates. Returns whether the entry was accepted.
    pub fn insert(&mut self, assignment: Assignment, objectives: ObjectiveVector) -> bool {
        for e in &self.entries {
            if e.objectives == objectives || dominates(&e.objectives, &objectives) {
                return false;
            }
        }
        self.entries.retain(|e| !dominates(&objectives, &e.objectives));
        self.entries.push(ArchiveEntry { assignment, objectives });
        true
    }

    /// Fold `other` into `self`. Merging is associative, commutative and
    /// idempotent up to entry order: the resulting set of objective vectors
    /// does not depend on the merge schedule (duplicate vectors may keep
    /// either side's assignment).
    pub fn merge(&mut self, other: &ParetoArchive) {
        for e in &other.entries {
            self.insert(e.assignment.clone(), e.objectives);
        }
    }

    pub fn objective_vectors(&self) -> Vec<ObjectiveVector> {
        self.entries.iter().map(|e| e.objectives).collect()
    }
}

/// Number of efficient solutions in the archive.
pub fn count_solutions(arch: &ParetoArchive) -> usize {
    arch.len()
}

/// A point strictly worse than every compared solution, shared by all
/// algorithms of one experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub point: [f64; 3],
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("cannot build a reference point from empty archives")]
    EmptyUnion,
    #[error("point ({0}, {1}, {2}) is not dominated by the reference point")]
    BeyondReference(f64, f64, f64),
}

/// Component-wise worst objective values over all sets, pushed out by a
/// 10% margin (or to 1.0 where the worst value is 0, so boundary points
/// still enclose volume).
pub fn reference_point(sets: &[&ParetoArchive]) -> Result<ReferencePoint, MetricsError> {
    let mut worst: Option<[f64; 3]> = None;
    for set in sets {
        for e in set.entries() {
            let p = e.objectives.as_array();
            worst = Some(match worst {
                None => p,
                Some(w) => [w[0].max(p[0]), w[1].max(p[1]), w[2].max(p[2])],
            });
        }
    }
    let worst = worst.ok_or(MetricsError::EmptyUnion)?;
    let mut point = [0.0; 3];
    for i in 0..3 {
        point[i] = if worst[i] > 0.0 { worst[i] * 1.1 } else { 1.0 };
    }
    Ok(ReferencePoint { point })
}

/// Exact hypervolume of a 3-objective front against `ref_point`.
///
/// Every front point must be component-wise at most the reference point.
pub fn hypervolume(front: &ParetoArchive, ref_point: &ReferencePoint) -> Result<f64, MetricsError> {
    let points: Vec<[f64; 3]> = front.entries().iter().map(|e| e.objectives.as_array()).collect();
    hypervolume_3d(&points, ref_point.point)
}

/// Exact 2-D hypervolume of minimization points (staircase area).
pub fn hypervolume_2d(points: &[[f64; 2]], ref_point: [f64; 2]) -> Result<f64, MetricsError> {
    for p in points {
        if p[0] > ref_point[0] || p[1] > ref_point[1] {
            return Err(MetricsError::BeyondReference(p[0], p[1], 0.0));
        }
    }
    let mut staircase = Vec::new();
    for p in points {
        insert_staircase(&mut staircase, *p);
    }
    Ok(staircase_area(&staircase, ref_point))
}

/// Exact 3-D hypervolume of minimization points: a dimension sweep along
/// the third objective, accumulating slab volumes over the 2-D staircase
/// of the points seen so far.
pub fn hypervolume_3d(points: &[[f64; 3]], ref_point: [f64; 3]) -> Result<f64, MetricsError> {
    for p in points {
        if (0..3).any(|i| p[i] > ref_point[i]) {
            return Err(MetricsError::BeyondReference(p[0], p[1], p[2]));
        }
    }
    if points.is_empty() {
        return Ok(0.0);
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.sort_by(|a, b| a[2].partial_cmp(&b[2]).unwrap());

    let mut staircase: Vec<[f64; 2]> = Vec::new();
    let mut volume = 0.0;
    for i in 0..sorted.len() {
        insert_staircase(&mut staircase, [sorted[i][0], sorted[i][1]]);
        let z = sorted[i][2];
        let z_next = if i + 1 < sorted.len() { sorted[i + 1][2] } else { ref_point[2] };
        if z_next > z {
            volume += staircase_area(&staircase, [ref_point[0], ref_point[1]]) * (z_next - z);
        }
    }
    Ok(volume)
}

/// Keep `stairs` a mutually 2-D-non-dominated set sorted by x ascending.
fn insert_staircase(stairs: &mut Vec<[f64; 2]>, p: [f64; 2]) {
    if stairs.iter().any(|q| q[0] <= p[0] && q[1] <= p[1]) {
        return;
    }
    stairs.retain(|q| !(p[0] <= q[0] && p[1] <= q[1]));
    let pos = stairs.partition_point(|q| q[0] < p[0]);
    stairs.insert(pos, p);
}

/// Area dominated by a 2-D staircase (sorted by x ascending, y strictly
/// descending) up to the reference corner.
fn staircase_area(stairs: &[[f64; 2]], ref_xy: [f64; 2]) -> f64 {
    let mut area = 0.0;
    for (i, p) in stairs.iter().enumerate() {
        let x_next = if i + 1 < stairs.len() { stairs[i + 1][0] } else { ref_xy[0] };
        area += (x_next - p[0]) * (ref_xy[1] - p[1]);
    }
    area
}

// ---------------------------------------------------------------------------
// NSGA-style ranking helpers shared by the metaheuristic
// ---------------------------------------------------------------------------

/// Indices grouped into non-dominated fronts, best first.
pub fn non_dominated_sort(objectives: &[ObjectiveVector]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&objectives[i], &objectives[j]) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if dominates(&objectives[j], &objectives[i]) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::take(&mut current));
        current = next;
    }
    fronts
}

/// NSGA-II crowding distance of each member of one front; boundary points
/// get infinity.
pub fn crowding_distances(objectives: &[ObjectiveVector], front: &[usize]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0f64; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    for obj in 0..3 {
        let key = |i: usize| objectives[front[i]].as_array()[obj];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap());
        let span = key(order[n - 1]) - key(order[0]);
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        if span > 0.0 {
            for w in 1..n - 1 {
                distance[order[w]] += (key(order[w + 1]) - key(order[w - 1])) / span;
            }
        }
    }
    distance
}

// ---------------------------------------------------------------------------
// archive serialization
// ---------------------------------------------------------------------------

/// Serialize an archive: a commented header carrying the instance name and
/// reference point, then one tab-separated line per entry (objective triple
/// followed by the assignment).
pub fn write_archive(arch: &ParetoArchive, instance_name: &str, ref_point: Option<&ReferencePoint>) -> String {
    let mut out = String::new();
    writeln!(out, "# front instance={instance_name} entries={}", arch.len()).unwrap();
    match ref_point {
        Some(r) => writeln!(out, "# reference {} {} {}", r.point[0], r.point[1], r.point[2]).unwrap(),
        None => writeln!(out, "# reference none").unwrap(),
    }
    writeln!(out, "# columns: reliability electricity migration machine-per-vm...").unwrap();
    for e in arch.entries() {
        let mut fields: Vec<String> = vec![
            e.objectives.reliability.to_string(),
            e.objectives.electricity.to_string(),
            e.objectives.migration.to_string(),
        ];
        fields.extend(e.assignment.target.iter().map(|m| m.to_string()));
        writeln!(out, "{}", fields.join("\t")).unwrap();
    }
    out
}

/// Parse the output of [`write_archive`]: instance name, reference point
/// and entries, in file order.
pub fn read_archive(text: &str) -> Result<(String, Option<ReferencePoint>, Vec<ArchiveEntry>), String> {
    let mut name = String::new();
    let mut ref_point = None;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            match toks.first() {
                Some(&"front") => {
                    if let Some(n) = toks.iter().find_map(|t| t.strip_prefix("instance=")) {
                        name = n.to_string();
                    }
                }
                Some(&"reference") if toks.len() == 4 => {
                    let mut p = [0.0; 3];
                    for (slot, tok) in p.iter_mut().zip(&toks[1..]) {
                        *slot = tok.parse().map_err(|_| format!("line {}: bad reference", i + 1))?;
                    }
                    ref_point = Some(ReferencePoint { point: p });
                }
                _ => {}
            }
            continue;
        }
        let toks: Vec<&str> = line.split('\t').collect();
        if toks.len() < 3 {
            return Err(format!("line {}: expected objectives and assignment", i + 1));
        }
        let parse = |t: &str| t.parse::<f64>().map_err(|_| format!("line {}: bad number", i + 1));
        let objectives = ObjectiveVector::new(parse(toks[0])?, parse(toks[1])?, parse(toks[2])?);
        let target = toks[3..]
            .iter()
            .map(|t| t.parse::<usize>().map_err(|_| format!("line {}: bad machine index", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        entries.push(ArchiveEntry { assignment: Assignment::new(target), objectives });
    }
    Ok((name, ref_point, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ov(r: f64, e: f64, m: f64) -> ObjectiveVector {
        ObjectiveVector::new(r, e, m)
    }

    fn entry(o: ObjectiveVector) -> (Assignment, ObjectiveVector) {
        (Assignment::new(vec![0]), o)
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&ov(0.0, 31.0, 0.0), &ov(0.0, 31.0, 4.0)));
        assert!(!dominates(&ov(1.0, 2.0, 3.0), &ov(1.0, 2.0, 3.0)));
        assert!(!dominates(&ov(1.0, 5.0, 0.0), &ov(2.0, 4.0, 0.0)));
        assert!(!dominates(&ov(2.0, 4.0, 0.0), &ov(1.0, 5.0, 0.0)));
    }

    #[test]
    fn insert_rules() {
        let mut arch = ParetoArchive::new();
        let (a, o) = entry(ov(0.0, 31.0, 0.0));
        assert!(arch.insert(a, o));

        let (a, o) = entry(ov(0.0, 31.0, 4.0));
        assert!(!arch.insert(a, o), "dominated point must be rejected");
        assert_eq!(arch.len(), 1);

        let (a, o) = entry(ov(0.0, 30.0, 5.0));
        assert!(arch.insert(a, o), "incomparable point joins the archive");
        assert_eq!(arch.len(), 2);

        let (a, o) = entry(ov(0.0, 30.0, 0.0));
        assert!(arch.insert(a, o), "dominating point evicts the dominated");
        assert_eq!(arch.len(), 1);
        assert_eq!(arch.entries()[0].objectives, ov(0.0, 30.0, 0.0));
    }

    #[test]
    fn duplicate_objectives_keep_first_assignment() {
        let mut arch = ParetoArchive::new();
        assert!(arch.insert(Assignment::new(vec![0, 1]), ov(1.0, 2.0, 3.0)));
        assert!(!arch.insert(Assignment::new(vec![1, 0]), ov(1.0, 2.0, 3.0)));
        assert_eq!(arch.entries()[0].assignment, Assignment::new(vec![0, 1]));
    }

    #[test]
    fn reference_point_examples() {
        let mut a = ParetoArchive::new();
        let (x, o) = entry(ov(0.0, 31.0, 0.0));
        a.insert(x, o);
        let mut b = ParetoArchive::new();
        let (x, o) = entry(ov(2.0, 31.0, 4.0));
        b.insert(x, o);
        let r = reference_point(&[&a, &b]).unwrap();
        assert!((r.point[0] - 2.2).abs() < 1e-12);
        assert!((r.point[1] - 34.1).abs() < 1e-12);
        assert!((r.point[2] - 4.4).abs() < 1e-12);

        let mut single = ParetoArchive::new();
        let (x, o) = entry(ov(1.0, 1.0, 1.0));
        single.insert(x, o);
        let r = reference_point(&[&single]).unwrap();
        assert_eq!(r.point, [1.1, 1.1, 1.1]);

        assert_eq!(reference_point(&[]), Err(MetricsError::EmptyUnion));
    }

    #[test]
    fn reference_point_strictly_encloses_nonzero_components() {
        let mut a = ParetoArchive::new();
        let (x, o) = entry(ov(0.0, 31.0, 4.0));
        a.insert(x, o);
        let r = reference_point(&[&a]).unwrap();
        for e in a.entries() {
            for (p, q) in e.objectives.as_array().iter().zip(r.point.iter()) {
                assert!(q > p || (*p == 0.0 && *q == 1.0));
            }
        }
    }

    #[test]
    fn hypervolume_closed_forms() {
        // Single box, 2-D.
        assert_eq!(hypervolume_2d(&[[1.0, 1.0]], [2.0, 2.0]).unwrap(), 1.0);
        // Two overlapping boxes, 2-D: 3 + 3 - 1.
        assert_eq!(
            hypervolume_2d(&[[1.0, 3.0], [3.0, 1.0]], [4.0, 4.0]).unwrap(),
            5.0
        );
        // Single box, 3-D.
        let got = hypervolume_3d(&[[0.0, 31.0, 0.0]], [2.2, 34.1, 4.4]).unwrap();
        assert!((got - 30.008).abs() < 1e-9, "{got}");
    }

    #[test]
    fn hypervolume_rejects_points_beyond_reference() {
        let err = hypervolume_2d(&[[3.0, 1.0]], [2.0, 2.0]).unwrap_err();
        assert_eq!(err, MetricsError::BeyondReference(3.0, 1.0, 0.0));
    }

    #[test]
    fn count_solutions_ignores_rejected_inserts() {
        let mut arch = ParetoArchive::new();
        assert_eq!(count_solutions(&arch), 0);
        let (a, o) = entry(ov(0.0, 31.0, 0.0));
        arch.insert(a, o);
        assert_eq!(count_solutions(&arch), 1);
        let (a, o) = entry(ov(0.0, 31.0, 4.0));
        arch.insert(a, o);
        assert_eq!(count_solutions(&arch), 1);
    }

    #[test]
    fn crowding_prefers_boundaries() {
        let objs = vec![ov(0.0, 4.0, 0.0), ov(1.0, 3.0, 0.0), ov(2.0, 1.0, 0.0), ov(4.0, 0.0, 0.0)];
        let front: Vec<usize> = (0..4).collect();
        let d = crowding_distances(&objs, &front);
        assert!(d[0].is_infinite());
        assert!(d[3].is_infinite());
        assert!(d[1].is_finite() && d[2].is_finite());
    }

    #[test]
    fn archive_round_trips_through_text() {
        let mut arch = ParetoArchive::new();
        arch.insert(Assignment::new(vec![0, 1, 1]), ov(0.0, 31.0, 0.0));
        arch.insert(Assignment::new(vec![0, 1, 0]), ov(0.5, 30.0, 4.0));
        let r = reference_point(&[&arch]).unwrap();
        let text = write_archive(&arch, "tiny1", Some(&r));
        let (name, ref_back, entries) = read_archive(&text).unwrap();
        assert_eq!(name, "tiny1");
        assert_eq!(ref_back, Some(r));
        assert_eq!(entries.len(), arch.len());
        for (e, f) in entries.iter().zip(arch.entries()) {
            assert_eq!(e, f);
        }
    }

    // Brute-force dominance filter: keep exactly the points not dominated
    // by any other and not duplicating an earlier point.
    fn brute_front(points: &[ObjectiveVector]) -> Vec<ObjectiveVector> {
        let mut out: Vec<ObjectiveVector> = Vec::new();
        'outer: for (i, p) in points.iter().enumerate() {
            for (j, q) in points.iter().enumerate() {
                if i != j && dominates(q, p) {
                    continue 'outer;
                }
                if j < i && q == p {
                    continue 'outer;
                }
            }
            out.push(*p);
        }
        out
    }

    fn sorted_arrays(mut v: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    proptest! {
        #[test]
        fn archive_matches_brute_force_filter(points in prop::collection::vec((0u32..6, 0u32..6, 0u32..6), 0..40)) {
            let objs: Vec<ObjectiveVector> =
                points.iter().map(|&(r, e, m)| ov(r as f64, e as f64, m as f64)).collect();
            let mut arch = ParetoArchive::new();
            for o in &objs {
                arch.insert(Assignment::new(vec![0]), *o);
            }
            let got = sorted_arrays(arch.objective_vectors().iter().map(|o| o.as_array()).collect());
            let want = sorted_arrays(brute_front(&objs).iter().map(|o| o.as_array()).collect());
            prop_assert_eq!(got, want);
        }

        #[test]
        fn insert_order_is_irrelevant(points in prop::collection::vec((0u32..6, 0u32..6, 0u32..6), 1..25), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let objs: Vec<ObjectiveVector> =
                points.iter().map(|&(r, e, m)| ov(r as f64, e as f64, m as f64)).collect();
            let mut shuffled = objs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let build = |v: &[ObjectiveVector]| {
                let mut arch = ParetoArchive::new();
                for o in v {
                    arch.insert(Assignment::new(vec![0]), *o);
                }
                sorted_arrays(arch.objective_vectors().iter().map(|o| o.as_array()).collect::<Vec<_>>())
            };
            prop_assert_eq!(build(&objs), build(&shuffled));
        }

        #[test]
        fn accepted_inserts_never_shrink_hypervolume(points in prop::collection::vec((0u32..8, 0u32..8, 0u32..8), 1..20)) {
            let objs: Vec<ObjectiveVector> =
                points.iter().map(|&(r, e, m)| ov(r as f64, e as f64, m as f64)).collect();
            let ref_point = [9.0, 9.0, 9.0];
            let mut arch = ParetoArchive::new();
            let mut last = 0.0;
            for o in &objs {
                let accepted = arch.insert(Assignment::new(vec![0]), *o);
                let pts: Vec<[f64; 3]> = arch.objective_vectors().iter().map(|x| x.as_array()).collect();
                let hv = hypervolume_3d(&pts, ref_point).unwrap();
                if accepted {
                    prop_assert!(hv >= last - 1e-9);
                } else {
                    prop_assert!((hv - last).abs() < 1e-9);
                }
                last = hv;
            }
        }

        #[test]
        fn merge_is_commutative_and_idempotent(
            xs in prop::collection::vec((0u32..6, 0u32..6, 0u32..6), 0..15),
            ys in prop::collection::vec((0u32..6, 0u32..6, 0u32..6), 0..15),
        ) {
            let build = |v: &[(u32, u32, u32)]| {
                let mut arch = ParetoArchive::new();
                for &(r, e, m) in v {
                    arch.insert(Assignment::new(vec![0]), ov(r as f64, e as f64, m as f64));
                }
                arch
            };
            let a = build(&xs);
            let b = build(&ys);
            let vectors = |arch: &ParetoArchive| {
                sorted_arrays(arch.objective_vectors().iter().map(|o| o.as_array()).collect::<Vec<_>>())
            };
            let mut ab = a.clone();
            ab.merge(&b);
            let mut ba = b.clone();
            ba.merge(&a);
            prop_assert_eq!(vectors(&ab), vectors(&ba));
            let mut abb = ab.clone();
            abb.merge(&b);
            prop_assert_eq!(vectors(&abb), vectors(&ab));
        }
    }
}
