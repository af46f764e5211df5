//! Discretized simplex of untagged-player counts and the joint state space.
//!
//! A population state is a count vector `(n_1, .., n_d)` with `sum = N`.
//! Count vectors are mapped to the strictly increasing sequence
//! `c_i = n_1 + .. + n_i + i - 1` (`i = 1..d-1`, stars and bars) and ranked
//! with the combinatorial number system, `rank = sum_i C(c_i, i)`. The
//! enumeration order is therefore colexicographic on those combinations;
//! for `d = 2` it reduces to `rank((n_1, n_2)) = n_1`.

use crate::error::{Error, Result};

/// Sentinel in the shift table for moves that would leave the simplex.
const NO_SHIFT: u32 = u32::MAX;

/// `C(n, k)`, or `None` on overflow.
pub fn binomial(n: u64, k: u64) -> Option<u64> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    match k {
        0 => return Some(1),
        1 => return Some(n),
        _ => {}
    }
    let mut acc: u128 = 1;
    for i in 1..=k as u128 {
        acc = acc * (n as u128 - k as u128 + i) / i;
        if acc > u64::MAX as u128 {
            return None;
        }
    }
    Some(acc as u64)
}

/// Applies `e_{y,z}` to a count vector: one player moves from `z` to `y`.
pub fn shift(counts: &[u32], y: usize, z: usize) -> Result<Vec<u32>> {
    let d = counts.len();
    if y >= d || z >= d {
        return Err(Error::InvalidArgument(format!(
            "state out of range in shift: y={y}, z={z}, d={d}"
        )));
    }
    let mut out = counts.to_vec();
    if y == z {
        return Ok(out);
    }
    if out[z] == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot remove a player from empty state {z} in {counts:?}"
        )));
    }
    out[z] -= 1;
    out[y] += 1;
    Ok(out)
}

/// Every count vector of `N` players over `d` states, in rank order.
#[derive(Debug, Clone)]
pub struct SimplexTable {
    d: usize,
    n: u32,
    counts: Vec<u32>,
    // shift[(mu * d + y) * d + z] = rank of mu + e_{y,z}
    shifts: Vec<u32>,
}

impl SimplexTable {
    pub fn new(d: usize, n: u32) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument(format!("need d >= 2, got {d}")));
        }
        if n < 1 {
            return Err(Error::InvalidArgument("need N >= 1".into()));
        }
        let len = binomial(n as u64 + d as u64 - 1, d as u64 - 1)
            .filter(|&l| l.saturating_mul((d * d) as u64) < u32::MAX as u64)
            .ok_or(Error::TooLarge { d, n })? as usize;

        let mut counts = vec![0u32; len * d];
        for (i, row) in counts.chunks_exact_mut(d).enumerate() {
            unrank_into(n, i, row);
        }
        let mut table = SimplexTable {
            d,
            n,
            counts,
            shifts: Vec::new(),
        };

        let mut shifts = vec![NO_SHIFT; len * d * d];
        let mut buf = vec![0u32; d];
        for mu in 0..len {
            for z in 0..d {
                if table.count(mu, z) == 0 {
                    continue;
                }
                for y in 0..d {
                    buf.copy_from_slice(table.counts(mu));
                    buf[z] -= 1;
                    buf[y] += 1;
                    shifts[(mu * d + y) * d + z] = rank_counts(&buf) as u32;
                }
            }
        }
        table.shifts = shifts;
        Ok(table)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Number of count vectors, `C(N+d-1, d-1)`.
    pub fn len(&self) -> usize {
        self.counts.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Size of the joint space `{1..d} x simplex`.
    pub fn num_states(&self) -> usize {
        self.d * self.len()
    }

    pub fn counts(&self, mu: usize) -> &[u32] {
        &self.counts[mu * self.d..(mu + 1) * self.d]
    }

    #[inline]
    pub fn count(&self, mu: usize, x: usize) -> u32 {
        self.counts[mu * self.d + x]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> {
        self.counts.chunks_exact(self.d)
    }

    /// Rank of a count vector, validated against this table's `(d, N)`.
    pub fn rank(&self, counts: &[u32]) -> Result<usize> {
        let on_simplex = counts.len() == self.d
            && counts.iter().map(|&c| c as u64).sum::<u64>() == self.n as u64;
        if !on_simplex {
            return Err(Error::NotOnSimplex {
                counts: counts.to_vec(),
                d: self.d,
                n: self.n,
            });
        }
        Ok(rank_counts(counts))
    }

    /// Inverse of [`rank`](Self::rank), computed directly (no table lookup).
    pub fn unrank(&self, index: usize) -> Result<Vec<u32>> {
        if index >= self.len() {
            return Err(Error::IndexOutOfRange {
                index,
                size: self.len(),
            });
        }
        Ok(unrank_counts(self.d, self.n, index))
    }

    /// Rank of `mu + e_{y,z}`; `None` when state `z` is empty and `y != z`.
    #[inline]
    pub fn shift_index(&self, mu: usize, y: usize, z: usize) -> Option<usize> {
        if y == z {
            return Some(mu);
        }
        let s = self.shifts[(mu * self.d + y) * self.d + z];
        (s != NO_SHIFT).then_some(s as usize)
    }

    /// Flat index of `(x, mu)` in the joint space.
    #[inline]
    pub fn joint(&self, x: usize, mu: usize) -> usize {
        x * self.len() + mu
    }

    /// Inverse of [`joint`](Self::joint).
    #[inline]
    pub fn split(&self, flat: usize) -> (usize, usize) {
        (flat / self.len(), flat % self.len())
    }

    /// Fractions `counts / N`.
    pub fn distribution(&self, mu: usize) -> Vec<f64> {
        let n = self.n as f64;
        self.counts(mu).iter().map(|&c| c as f64 / n).collect()
    }
}

fn rank_counts(counts: &[u32]) -> usize {
    let mut prefix = 0u64;
    let mut rank = 0u64;
    for (i, &c) in counts[..counts.len() - 1].iter().enumerate() {
        prefix += c as u64;
        let i = i as u64 + 1;
        rank += binomial(prefix + i - 1, i).expect("rank fits: table size was checked");
    }
    rank as usize
}

fn unrank_counts(d: usize, n: u32, index: usize) -> Vec<u32> {
    let mut out = vec![0u32; d];
    unrank_into(n, index, &mut out);
    out
}

fn unrank_into(n: u32, index: usize, out: &mut [u32]) {
    let d = out.len();
    let mut rest = index as u64;
    // out[i - 1] holds c_i until the prefix sums are recovered below
    for i in (1..d as u64).rev() {
        let c = if i == 1 {
            rest
        } else {
            // largest c in [i-1, N+i-1] with C(c, i) <= rest
            let (mut lo, mut hi) = (i - 1, n as u64 + i - 1);
            while lo < hi {
                let mid = (lo + hi + 1) / 2;
                if binomial(mid, i).unwrap_or(u64::MAX) <= rest {
                    lo = mid;
                } else {
                    hi = mid - 1;
                }
            }
            lo
        };
        out[i as usize - 1] = c as u32;
        rest -= binomial(c, i).unwrap();
    }
    let mut prev = 0u32;
    for (i, o) in out[..d - 1].iter_mut().enumerate() {
        let prefix = *o - i as u32;
        *o = prefix - prev;
        prev = prefix;
    }
    out[d - 1] = n - prev;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_tables_have_expected_sizes() {
        let t = SimplexTable::new(2, 3).unwrap();
        assert_eq!(t.len(), 4);
        let all: Vec<Vec<u32>> = t.iter().map(|c| c.to_vec()).collect();
        assert_eq!(all, vec![vec![0, 3], vec![1, 2], vec![2, 1], vec![3, 0]]);
        assert_eq!(SimplexTable::new(3, 2).unwrap().len(), 6);
        assert_eq!(SimplexTable::new(4, 24).unwrap().len(), 2925);
    }

    #[test]
    fn rejects_degenerate_dimensions() {
        assert!(SimplexTable::new(1, 3).is_err());
        assert!(SimplexTable::new(3, 0).is_err());
    }

    #[test]
    fn two_state_ranks() {
        let t = SimplexTable::new(2, 3).unwrap();
        assert_eq!(t.rank(&[0, 3]).unwrap(), 0);
        assert_eq!(t.rank(&[3, 0]).unwrap(), 3);
        assert!(t.rank(&[1, 1]).is_err());
        assert!(t.rank(&[1, 1, 1]).is_err());
        assert!(t.unrank(4).is_err());
    }

    #[test]
    fn rank_follows_colex_order_of_combinations() {
        // brute force: all 6 vectors for d=3, N=2, sorted colexicographically
        // on their stars-and-bars combination (compare largest element first)
        let mut all = Vec::new();
        for a in 0..=2u32 {
            for b in 0..=(2 - a) {
                all.push(vec![a, b, 2 - a - b]);
            }
        }
        let key = |v: &Vec<u32>| {
            let c1 = v[0];
            let c2 = v[0] + v[1] + 1;
            (c2, c1)
        };
        all.sort_by_key(key);
        let t = SimplexTable::new(3, 2).unwrap();
        for (pos, v) in all.iter().enumerate() {
            assert_eq!(t.rank(v).unwrap(), pos, "{v:?}");
        }
    }

    #[test]
    fn shift_examples() {
        assert_eq!(shift(&[1, 2], 0, 1).unwrap(), vec![2, 1]);
        assert_eq!(shift(&[1, 2], 1, 1).unwrap(), vec![1, 2]);
        assert_eq!(shift(&[0, 3], 0, 0).unwrap(), vec![0, 3]);
        assert!(shift(&[0, 3], 1, 0).is_err());
    }

    #[test]
    fn shift_table_matches_shift() {
        let t = SimplexTable::new(3, 4).unwrap();
        for mu in 0..t.len() {
            for y in 0..3 {
                for z in 0..3 {
                    match shift(t.counts(mu), y, z) {
                        Ok(v) => assert_eq!(t.shift_index(mu, y, z), Some(t.rank(&v).unwrap())),
                        Err(_) => assert_eq!(t.shift_index(mu, y, z), None),
                    }
                }
            }
        }
    }

    #[test]
    fn joint_index_is_bijective() {
        let t = SimplexTable::new(3, 4).unwrap();
        let mut seen = vec![false; t.num_states()];
        for x in 0..3 {
            for mu in 0..t.len() {
                let f = t.joint(x, mu);
                assert!(!seen[f]);
                seen[f] = true;
                assert_eq!(t.split(f), (x, mu));
            }
        }
        assert!(seen.into_iter().all(|s| s));
    }

    proptest! {
        #[test]
        fn shift_there_and_back(d in 2usize..5, n in 1u32..8, seed in any::<u64>(), y in 0usize..5, z in 0usize..5) {
            let t = SimplexTable::new(d, n).unwrap();
            let m = t.counts(seed as usize % t.len()).to_vec();
            let (y, z) = (y % d, z % d);
            if let Ok(s) = shift(&m, y, z) {
                prop_assert_eq!(shift(&s, z, y).unwrap(), m);
            }
        }
    }
}
