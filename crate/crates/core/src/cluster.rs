//! Entity clustering: two-sample Kolmogorov–Smirnov distances between
//! training distributions, then agglomerative Ward clustering.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-sample KS statistic: the largest gap between the empirical CDFs.
/// The supremum is attained at a sample point, so a sorted merge is exact.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample("ks_distance"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = 0.0f64;
    while i < a.len() || j < b.len() {
        let z = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= z {
            i += 1;
        }
        while j < b.len() && b[j] <= z {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Self { n, d }
    }

    /// Pairwise KS distances between per-entity samples.
    pub fn ks(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = ks_distance(&samples[i], &samples[j])?;
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// `⌊2√n⌋`, capped at `n`.
pub fn default_cluster_count(n: usize) -> usize {
    ((2.0 * (n as f64).sqrt()).floor() as usize).min(n).max(1)
}

/// Lance–Williams convention for Ward linkage on a precomputed matrix.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WardVariant {
    /// Recurrence on squared distances (R's `ward.D2`).
    #[default]
    D2,
    /// Recurrence on the distances as given (R's `ward.D`).
    D,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub entities: Vec<String>,
    /// Cluster id in `1..=k` per entity, numbered by smallest member.
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl ClusterAssignment {
    pub fn cluster_of(&self, entity: &str) -> Option<usize> {
        self.entities
            .iter()
            .position(|e| e == entity)
            .map(|i| self.assignment[i])
    }

    /// Indicator unit vector of length `k` for the entity at `index`.
    pub fn onehot(&self, index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.k];
        v[self.assignment[index] - 1] = 1.0;
        v
    }

    /// Members of each cluster, as entity indices.
    pub fn partition(&self) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            parts[c - 1].push(i);
        }
        parts
    }

    pub fn write_table<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "entity\tcluster")?;
        for (e, c) in self.entities.iter().zip(&self.assignment) {
            writeln!(w, "{e}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_table<R: std::io::BufRead>(r: R) -> Result<Self> {
        let mut entities = Vec::new();
        let mut assignment = Vec::new();
        for (n, line) in r.lines().enumerate().skip(1) {
            let line = line?;
            let (e, c) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected entity<TAB>cluster".into(),
            })?;
            entities.push(e.to_string());
            assignment.push(c.trim().parse().map_err(|_| Error::Parse {
                line: n + 1,
                message: format!("bad cluster id `{c}`"),
            })?);
        }
        let k = assignment.iter().copied().max().unwrap_or(0);
        Ok(Self { entities, assignment, k })
    }
}

/// Agglomerative Ward clustering cut at `k` clusters.
///
/// Each step merges the closest pair under the Lance–Williams update; exact
/// ties go to the pair whose smallest members are lexicographically first.
pub fn ward_cluster(
    dist: &DistanceMatrix,
    k: usize,
    variant: WardVariant,
) -> Result<Vec<Vec<usize>>> {
    let n = dist.len();
    if k == 0 || k > n {
        return Err(Error::TooManyClusters { k, n });
    }
    let mut w: Vec<f64> = (0..n * n)
        .map(|x| {
            let v = dist.d[x];
            match variant {
                WardVariant::D2 => v * v,
                WardVariant::D => v,
            }
        })
        .collect();
    // clusters are kept ordered by smallest member
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    // each cluster is represented by the matrix row of its smallest member
    while clusters.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let v = w[clusters[a][0] * n + clusters[b][0]];
                if best.is_none_or(|(bv, _, _)| v < bv) {
                    best = Some((v, a, b));
                }
            }
        }
        let (dab, a, b) = best.expect("at least two clusters");
        let (ra, rb) = (clusters[a][0], clusters[b][0]);
        let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
        for (x, cx) in clusters.iter().enumerate() {
            if x == a || x == b {
                continue;
            }
            let rx = cx[0];
            let nx = cx.len() as f64;
            let updated = ((na + nx) * w[ra * n + rx] + (nb + nx) * w[rb * n + rx] - nx * dab)
                / (na + nb + nx);
            w[ra * n + rx] = updated;
            w[rx * n + ra] = updated;
        }
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters[a].sort_unstable();
    }
    Ok(clusters)
}

/// Cluster entities from their training samples: KS distances, Ward
/// linkage, `⌊2√n⌋` clusters unless `k` is given.
pub fn cluster_entities(
    entities: &[String],
    samples: &[Vec<f64>],
    k: Option<usize>,
    variant: WardVariant,
) -> Result<ClusterAssignment> {
    let dist = DistanceMatrix::ks(samples)?;
    let k = k.unwrap_or_else(|| default_cluster_count(entities.len()));
    let parts = ward_cluster(&dist, k, variant)?;
    Ok(assignment_from_partition(entities, &parts))
}

pub fn assignment_from_partition(entities: &[String], parts: &[Vec<usize>]) -> ClusterAssignment {
    let mut parts: Vec<Vec<usize>> = parts.to_vec();
    for p in &mut parts {
        p.sort_unstable();
    }
    parts.sort_by_key(|p| p[0]);
    let mut assignment = vec![0; entities.len()];
    for (id, p) in parts.iter().enumerate() {
        for &i in p {
            assignment[i] = id + 1;
        }
    }
    ClusterAssignment {
        entities: entities.to_vec(),
        assignment,
        k: parts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[0.0, 2.0]).unwrap(), 0.5);
        assert!(ks_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn cluster_counts() {
        assert_eq!(default_cluster_count(18), 8);
        assert_eq!(default_cluster_count(37), 12);
        assert_eq!(default_cluster_count(1), 1);
    }

    #[test]
    fn three_points_two_clusters() {
        let pts: [f64; 3] = [0.0, 0.1, 10.0];
        let d = DistanceMatrix::from_fn(3, |i, j| (pts[i] - pts[j]).abs());
        let parts = ward_cluster(&d, 2, WardVariant::D2).unwrap();
        assert_eq!(parts, vec![vec![0, 1], vec![2]]);
        assert!(ward_cluster(&d, 4, WardVariant::D2).is_err());
    }

    #[test]
    fn onehot_has_a_single_one() {
        let ents: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let asg = assignment_from_partition(&ents, &[vec![3], vec![0, 2], vec![1]]);
        assert_eq!(asg.assignment, vec![1, 2, 1, 3]);
        assert_eq!(asg.onehot(1), vec![0.0, 1.0, 0.0]);
        assert_eq!(asg.onehot(0), asg.onehot(2));
        for i in 0..4 {
            assert_eq!(asg.onehot(i).iter().sum::<f64>(), 1.0);
        }
        let mut buf = Vec::new();
        asg.write_table(&mut buf).unwrap();
        assert_eq!(ClusterAssignment::read_table(&buf[..]).unwrap(), asg);
    }

    #[test]
    fn ward_variants_agree_on_well_separated_groups() {
        let pts: [f64; 7] = [0.0, 0.2, 0.1, 5.0, 5.3, 9.0, 9.1];
        let d = DistanceMatrix::from_fn(pts.len(), |i, j| (pts[i] - pts[j]).abs());
        let a = ward_cluster(&d, 3, WardVariant::D2).unwrap();
        let b = ward_cluster(&d, 3, WardVariant::D).unwrap();
        assert_eq!(a, vec![vec![0, 1, 2], vec![3, 4], vec![5, 6]]);
        assert_eq!(a, b);
    }

    fn canonical(parts: &[Vec<usize>]) -> Vec<Vec<usize>> {
        let mut p: Vec<Vec<usize>> = parts
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                c
            })
            .collect();
        p.sort();
        p
    }

    proptest! {
        #[test]
        fn ks_is_a_bounded_symmetric_metric(
            a in prop::collection::vec(0.0f64..5.0, 1..30),
            b in prop::collection::vec(0.0f64..5.0, 1..30),
            c in prop::collection::vec(0.0f64..5.0, 1..30),
        ) {
            let ab = ks_distance(&a, &b).unwrap();
            let bc = ks_distance(&b, &c).unwrap();
            let ac = ks_distance(&a, &c).unwrap();
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, ks_distance(&b, &a).unwrap());
            prop_assert!(ac <= ab + bc + 1e-12);
        }

        #[test]
        fn ward_is_deterministic_and_permutation_consistent(
            pts in prop::collection::vec(-10.0f64..10.0, 2..10),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = pts.len();
            let k = default_cluster_count(n);
            let d = DistanceMatrix::from_fn(n, |i, j| (pts[i] - pts[j]).abs());
            let first = ward_cluster(&d, k, WardVariant::D2).unwrap();
            prop_assert_eq!(&first, &ward_cluster(&d, k, WardVariant::D2).unwrap());

            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            // distinct distances keep tie-breaking out of the comparison
            let mut all: Vec<f64> = Vec::new();
            for i in 0..n { for j in i+1..n { all.push(d.get(i, j)); } }
            all.sort_by(f64::total_cmp);
            prop_assume!(all.windows(2).all(|w| w[1] - w[0] > 1e-9));
            let dp = DistanceMatrix::from_fn(n, |i, j| d.get(perm[i], perm[j]));
            let permuted = ward_cluster(&dp, k, WardVariant::D2).unwrap();
            let mapped: Vec<Vec<usize>> = permuted.iter().map(|c| c.iter().map(|&i| perm[i]).collect()).collect();
            prop_assert_eq!(canonical(&first), canonical(&mapped));
        }
    }
}
