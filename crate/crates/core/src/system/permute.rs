use super::{FeatureTensors, HybridSolution, Result, SystemError};
use crate::channel::ChannelTensor;

/// Which index set a permutation acts on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// The `M` resource blocks.
    Rb,
    /// User groups: `N_R` rows of one user move together.
    UserGroup,
    /// Antennas inside a user group; `None` applies the same permutation to
    /// every group.
    Antenna { group: Option<usize> },
    /// The `N_T` BS antennas.
    BsAntenna,
}

/// Bijection of `0..n`; position `i` of the result takes element `map[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &i in &map {
            if i >= map.len() || seen[i] {
                return Err(SystemError::Permutation(format!("{map:?}")));
            }
            seen[i] = true;
        }
        Ok(Self(map))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn swap(n: usize, a: usize, b: usize) -> Self {
        let mut p = Self::identity(n);
        p.0.swap(a, b);
        p
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &j) in self.0.iter().enumerate() {
            inv[j] = i;
        }
        Self(inv)
    }

    /// Reorders `items` (length `len() * block`) in blocks of `block`.
    pub fn apply_blocks<T: Clone>(&self, items: &[T], block: usize) -> Vec<T> {
        debug_assert_eq!(items.len(), self.0.len() * block);
        self.0.iter().flat_map(|&j| items[j * block..(j + 1) * block].iter().cloned()).collect()
    }

    fn check(&self, n: usize, what: &str) -> Result<()> {
        if self.0.len() != n {
            return Err(SystemError::Permutation(format!("length {} for {what} of size {n}", self.0.len())));
        }
        Ok(())
    }
}

/// Reindexing along one of the problem's symmetry axes.
pub trait Permute: Sized {
    fn permute(&self, axis: Axis, p: &Permutation) -> Result<Self>;
}

/// Index map of an `N_R`-row group permutation (`None` group = all groups).
fn antenna_map(k: usize, n_r: usize, group: Option<usize>, p: &Permutation) -> Result<Vec<usize>> {
    p.check(n_r, "antennas in a group")?;
    if let Some(g) = group {
        if g >= k {
            return Err(SystemError::Permutation(format!("group {g} of {k}")));
        }
    }
    Ok((0..k * n_r)
        .map(|row| {
            let (u, r) = (row / n_r, row % n_r);
            if group.is_none_or(|g| g == u) {
                u * n_r + p.0[r]
            } else {
                row
            }
        })
        .collect())
}

impl Permute for ChannelTensor {
    fn permute(&self, axis: Axis, p: &Permutation) -> Result<Self> {
        let (m, k, n_r, n_t) = self.dims();
        let (mut mi, mut ri, mut ni): (Vec<usize>, Vec<usize>, Vec<usize>) =
            ((0..m).collect(), (0..k * n_r).collect(), (0..n_t).collect());
        match axis {
            Axis::Rb => {
                p.check(m, "RBs")?;
                mi = p.0.clone();
            }
            Axis::UserGroup => {
                p.check(k, "user groups")?;
                ri = p.apply_blocks(&ri, n_r);
            }
            Axis::Antenna { group } => ri = antenna_map(k, n_r, group, p)?,
            Axis::BsAntenna => {
                p.check(n_t, "BS antennas")?;
                ni = p.0.clone();
            }
        }
        Ok(ChannelTensor::from_fn(m, k, n_r, n_t, |a, u, r, n| {
            let row = ri[u * n_r + r];
            self.get(mi[a], row / n_r, row % n_r, ni[n])
        }))
    }
}

impl Permute for HybridSolution {
    fn permute(&self, axis: Axis, p: &Permutation) -> Result<Self> {
        let mut out = self.clone();
        match axis {
            Axis::Rb => {
                p.check(self.m, "RBs")?;
                out.w_bb = p.apply_blocks(&self.w_bb, self.n_rf * self.k_prime);
            }
            Axis::UserGroup => {
                p.check(self.k_prime, "streams")?;
                for mf in 0..self.m * self.n_rf {
                    let s = mf * self.k_prime;
                    let row = p.apply_blocks(&self.w_bb[s..s + self.k_prime], 1);
                    out.w_bb[s..s + self.k_prime].copy_from_slice(&row);
                }
                out.v_rf = p.apply_blocks(&self.v_rf, self.n_r);
            }
            Axis::Antenna { group } => {
                let map = antenna_map(self.k_prime, self.n_r, group, p)?;
                out.v_rf = map.iter().map(|&i| self.v_rf[i]).collect();
            }
            Axis::BsAntenna => {
                p.check(self.n_t, "BS antennas")?;
                out.w_rf = p.apply_blocks(&self.w_rf, self.n_rf);
            }
        }
        Ok(out)
    }
}

impl Permute for FeatureTensors {
    fn permute(&self, axis: Axis, p: &Permutation) -> Result<Self> {
        let mut out = self.clone();
        let rows = self.k * self.n_r;
        match axis {
            Axis::Rb => {
                p.check(self.m, "RBs")?;
                out.f_s = p.apply_blocks(&self.f_s, self.k);
                out.f_o = p.apply_blocks(&self.f_o, rows);
            }
            Axis::UserGroup => {
                p.check(self.k, "user groups")?;
                for m in 0..self.m {
                    let s = p.apply_blocks(&self.f_s[m * self.k..(m + 1) * self.k], 1);
                    out.f_s[m * self.k..(m + 1) * self.k].copy_from_slice(&s);
                    let o = p.apply_blocks(&self.f_o[m * rows..(m + 1) * rows], self.n_r);
                    out.f_o[m * rows..(m + 1) * rows].copy_from_slice(&o);
                }
            }
            Axis::Antenna { group } => {
                let map = antenna_map(self.k, self.n_r, group, p)?;
                for m in 0..self.m {
                    for (i, &j) in map.iter().enumerate() {
                        out.f_o[m * rows + i] = self.f_o[m * rows + j];
                    }
                }
            }
            Axis::BsAntenna => {}
        }
        Ok(out)
    }
}

/// Permutes an `M × K` row-major matrix (scores, activity) along `Rb` or `UserGroup`.
pub fn permute_matrix(values: &[f64], m: usize, k: usize, axis: Axis, p: &Permutation) -> Result<Vec<f64>> {
    match axis {
        Axis::Rb => {
            p.check(m, "RBs")?;
            Ok(p.apply_blocks(values, k))
        }
        Axis::UserGroup => {
            p.check(k, "users")?;
            Ok(values.chunks(k).flat_map(|row| p.apply_blocks(row, 1)).collect())
        }
        _ => Ok(values.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn sample() -> ChannelTensor {
        ChannelTensor::from_fn(3, 2, 2, 2, |m, k, r, n| Complex64::new((m * 8 + k * 4 + r * 2 + n) as f64, -(n as f64)))
    }

    #[test]
    fn rejects_non_bijections() {
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
        assert!(sample().permute(Axis::Rb, &Permutation::identity(2)).is_err());
    }

    #[test]
    fn identity_and_involution() {
        let h = sample();
        assert_eq!(h.permute(Axis::Rb, &Permutation::identity(3)).unwrap(), h);
        let s = Permutation::swap(3, 0, 2);
        let twice = h.permute(Axis::Rb, &s).unwrap().permute(Axis::Rb, &s).unwrap();
        assert_eq!(twice, h);
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        let back = h.permute(Axis::Rb, &p).unwrap().permute(Axis::Rb, &p.inverse()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn user_groups_move_as_blocks() {
        let h = sample();
        let g = h.permute(Axis::UserGroup, &Permutation::swap(2, 0, 1)).unwrap();
        for m in 0..3 {
            assert_eq!(g.row(m, 0, 0), h.row(m, 1, 0));
            assert_eq!(g.row(m, 0, 1), h.row(m, 1, 1));
            assert_eq!(g.row(m, 1, 0), h.row(m, 0, 0));
            assert_eq!(g.row(m, 1, 1), h.row(m, 0, 1));
        }
        let a = h.permute(Axis::Antenna { group: Some(1) }, &Permutation::swap(2, 0, 1)).unwrap();
        assert_eq!(a.row(0, 0, 0), h.row(0, 0, 0));
        assert_eq!(a.row(0, 1, 0), h.row(0, 1, 1));
    }
}
