//! SINR, per-link rate and the weighted sum-rate objective.
//!
//! Channel indicators may be soft (rows of a probability simplex): they scale
//! both the desired signal and the interference a pair causes, which keeps the
//! objective differentiable in the relaxed channel matrix.

use crate::error::{Error, Result};
use crate::netgen::NetworkInstance;

/// Tolerance on channel-row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Channel matrix (D×M, row-major) and transmit powers (D).
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub d_pairs: usize,
    pub m_channels: usize,
    pub channel: Vec<f64>,
    pub power: Vec<f64>,
    pub hard: bool,
}

impl Allocation {
    /// Hard allocation from a channel index per pair.
    pub fn from_assignment(assignment: &[usize], m_channels: usize, power: Vec<f64>) -> Self {
        let d = assignment.len();
        let mut channel = vec![0.0; d * m_channels];
        for (i, &m) in assignment.iter().enumerate() {
            channel[i * m_channels + m] = 1.0;
        }
        Self {
            d_pairs: d,
            m_channels,
            channel,
            power,
            hard: true,
        }
    }

    #[inline]
    pub fn c(&self, i: usize, m: usize) -> f64 {
        self.channel[i * self.m_channels + m]
    }

    pub fn channel_row(&self, i: usize) -> &[f64] {
        &self.channel[i * self.m_channels..(i + 1) * self.m_channels]
    }

    /// Channel index per pair (argmax, ties to the lowest index).
    pub fn assignment(&self) -> Vec<usize> {
        (0..self.d_pairs)
            .map(|i| argmax_lowest(self.channel_row(i)))
            .collect()
    }

    /// Check the constraint set: row sums, one-hot rows when hard, power bounds.
    pub fn validate(&self, p_max: f64) -> Result<()> {
        let (d, m) = (self.d_pairs, self.m_channels);
        if self.channel.len() != d * m || self.power.len() != d {
            return Err(Error::Validation(format!(
                "allocation arrays do not match D={d}, M={m}"
            )));
        }
        for i in 0..d {
            let row = self.channel_row(i);
            if row.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Validation(format!("channel row {i} outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Validation(format!(
                    "channel row {i} sums to {s}, expected 1"
                )));
            }
            if self.hard && row.iter().any(|&c| c != 0.0 && c != 1.0) {
                return Err(Error::Validation(format!("channel row {i} is not one-hot")));
            }
            let p = self.power[i];
            if !(0.0..=p_max).contains(&p) {
                return Err(Error::Validation(format!(
                    "power[{i}] = {p} outside [0, {p_max}]"
                )));
            }
        }
        Ok(())
    }
}

/// Channel index per pair of a D×M matrix whose rows must be exactly one-hot.
pub fn one_hot_assignment(channel: &[f64], d_pairs: usize, m_channels: usize) -> Result<Vec<usize>> {
    if channel.len() != d_pairs * m_channels {
        return Err(Error::Validation(format!(
            "channel matrix has {} entries, expected {d_pairs}x{m_channels}",
            channel.len()
        )));
    }
    (0..d_pairs)
        .map(|i| {
            let row = &channel[i * m_channels..(i + 1) * m_channels];
            let ones = row.iter().filter(|&&c| c == 1.0).count();
            let zeros = row.iter().filter(|&&c| c == 0.0).count();
            if ones == 1 && zeros == m_channels - 1 {
                Ok(argmax_lowest(row))
            } else {
                Err(Error::Validation(format!("channel row {i} is not one-hot")))
            }
        })
        .collect()
}

pub(crate) fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

fn check_dims(inst: &NetworkInstance, alloc: &Allocation) -> Result<()> {
    if inst.d_pairs != alloc.d_pairs || inst.m_channels != alloc.m_channels {
        return Err(Error::Dimension(format!(
            "instance is D={} M={}, allocation is D={} M={}",
            inst.d_pairs, inst.m_channels, alloc.d_pairs, alloc.m_channels
        )));
    }
    Ok(())
}

/// SINR of receiver `i` on channel `m`.
pub fn sinr(inst: &NetworkInstance, alloc: &Allocation, i: usize, m: usize) -> f64 {
    let signal = inst.gain(i, i, m) * alloc.power[i] * alloc.c(i, m);
    let mut interference = 0.0;
    for j in 0..inst.d_pairs {
        if j != i {
            interference += inst.gain(i, j, m) * alloc.power[j] * alloc.c(j, m);
        }
    }
    signal / (interference + inst.noise_power)
}

/// Rate of receiver `i` on channel `m` in bits/s/Hz.
pub fn rate(inst: &NetworkInstance, alloc: &Allocation, i: usize, m: usize) -> f64 {
    (1.0 + sinr(inst, alloc, i, m)).log2()
}

/// Weighted sum rate without constraint checks; soft channel rows are used as-is.
pub fn weighted_sum_rate(inst: &NetworkInstance, channel: &[f64], power: &[f64]) -> f64 {
    let (d, m_ch) = (inst.d_pairs, inst.m_channels);
    let mut total = 0.0;
    for m in 0..m_ch {
        for i in 0..d {
            let signal = inst.gain(i, i, m) * power[i] * channel[i * m_ch + m];
            if signal == 0.0 {
                continue;
            }
            let mut interference = inst.noise_power;
            for j in 0..d {
                if j != i {
                    interference += inst.gain(i, j, m) * power[j] * channel[j * m_ch + m];
                }
            }
            total += inst.weights[i] * (1.0 + signal / interference).log2();
        }
    }
    total
}

/// The weighted sum-rate objective, after validating the allocation.
pub fn objective(inst: &NetworkInstance, alloc: &Allocation) -> Result<f64> {
    check_dims(inst, alloc)?;
    alloc.validate(inst.p_max)?;
    Ok(weighted_sum_rate(inst, &alloc.channel, &alloc.power))
}

/// Weighted sum rate of the pairs in `members`, all on channel `m`.
pub(crate) fn channel_sum_rate(
    inst: &NetworkInstance,
    members: &[usize],
    m: usize,
    power: &[f64],
) -> f64 {
    let mut total = 0.0;
    for &i in members {
        let mut interference = inst.noise_power;
        for &j in members {
            if j != i {
                interference += inst.gain(i, j, m) * power[j];
            }
        }
        total += inst.weights[i] * (1.0 + inst.gain(i, i, m) * power[i] / interference).log2();
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::{sample_instance, FadingConfig, GeometryConfig};
    use proptest::prelude::*;

    fn inst2(g_ii: f64, g_ij: f64, sigma2: f64, m: usize) -> NetworkInstance {
        let cell = |v: f64| vec![v; m];
        NetworkInstance::from_gains(
            &[
                vec![cell(g_ii), cell(g_ij)],
                vec![cell(g_ij), cell(g_ii)],
            ],
            vec![1.0, 1.0],
            sigma2,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn single_link_sinr_is_one() {
        let inst = NetworkInstance::from_gains(&[vec![vec![1.0]]], vec![1.0], 1.0, 1.0).unwrap();
        let a = Allocation::from_assignment(&[0], 1, vec![1.0]);
        assert_eq!(sinr(&inst, &a, 0, 0), 1.0);
        assert_eq!(rate(&inst, &a, 0, 0), 1.0);
    }

    #[test]
    fn co_channel_pair_halves_sinr() {
        let inst = inst2(1.0, 1.0, 1.0, 1);
        let a = Allocation::from_assignment(&[0, 0], 1, vec![1.0, 1.0]);
        assert_eq!(sinr(&inst, &a, 0, 0), 0.5);
        assert!((rate(&inst, &a, 0, 0) - 0.584_962_500_721_156_2).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_channels_remove_interference() {
        let inst = inst2(1.0, 1.0, 1.0, 2);
        let a = Allocation::from_assignment(&[0, 1], 2, vec![1.0, 1.0]);
        assert_eq!(sinr(&inst, &a, 0, 0), 1.0);
        assert_eq!(rate(&inst, &a, 0, 1), 0.0);
        assert_eq!(rate(&inst, &a, 1, 0), 0.0);
    }

    #[test]
    fn single_pair_objective_and_zero_power() {
        let inst = NetworkInstance::from_gains(&[vec![vec![1.0, 1.0]]], vec![1.0], 1.0, 1.0)
            .unwrap();
        let a = Allocation::from_assignment(&[1], 2, vec![1.0]);
        assert_eq!(objective(&inst, &a).unwrap(), 1.0);
        let z = Allocation::from_assignment(&[1], 2, vec![0.0]);
        assert_eq!(objective(&inst, &z).unwrap(), 0.0);
    }

    #[test]
    fn constraint_violations_are_rejected() {
        let inst = inst2(1.0, 1.0, 1.0, 2);
        let mut a = Allocation::from_assignment(&[0, 1], 2, vec![1.0, 1.0]);
        a.power[0] = 1.5;
        assert!(matches!(objective(&inst, &a), Err(Error::Validation(_))));
        let mut b = Allocation::from_assignment(&[0, 1], 2, vec![1.0, 1.0]);
        b.channel[0] = 0.7;
        assert!(objective(&inst, &b).is_err());
        let mut c = Allocation::from_assignment(&[0, 1], 2, vec![1.0, 1.0]);
        c.channel[0] = 0.5;
        c.channel[1] = 0.5;
        assert!(objective(&inst, &c).is_err(), "hard allocation must be one-hot");
        c.hard = false;
        assert!(objective(&inst, &c).is_ok());
        let wrong_d = Allocation::from_assignment(&[0], 2, vec![1.0]);
        assert!(matches!(objective(&inst, &wrong_d), Err(Error::Dimension(_))));
    }

    /// Direct scalar re-evaluation, written independently of `weighted_sum_rate`.
    fn scalar_rate(g: &[Vec<Vec<f64>>], c: &[Vec<f64>], p: &[f64], s2: f64, i: usize, m: usize) -> f64 {
        let num = g[i][i][m] * p[i] * c[i][m];
        let den: f64 = (0..p.len())
            .filter(|&j| j != i)
            .map(|j| g[i][j][m] * p[j] * c[j][m])
            .sum::<f64>()
            + s2;
        (1.0 + num / den).ln() / std::f64::consts::LN_2
    }

    #[test]
    fn rates_match_scalar_recomputation() {
        let g: Vec<Vec<Vec<f64>>> = vec![
            vec![vec![0.9, 0.4], vec![0.05, 0.2], vec![0.11, 0.01]],
            vec![vec![0.3, 0.07], vec![1.3, 0.8], vec![0.02, 0.6]],
            vec![vec![0.01, 0.09], vec![0.4, 0.33], vec![0.7, 1.1]],
        ];
        let inst = NetworkInstance::from_gains(&g, vec![1.0, 2.0, 0.5], 0.1, 1.0).unwrap();
        let c = vec![vec![0.2, 0.8], vec![1.0, 0.0], vec![0.55, 0.45]];
        let p = vec![0.3, 1.0, 0.75];
        let alloc = Allocation {
            d_pairs: 3,
            m_channels: 2,
            channel: c.concat(),
            power: p.clone(),
            hard: false,
        };
        let mut total = 0.0;
        for i in 0..3 {
            for m in 0..2 {
                let r = scalar_rate(&g, &c, &p, 0.1, i, m);
                assert!((rate(&inst, &alloc, i, m) - r).abs() < 1e-13);
                total += inst.weights[i] * r;
            }
        }
        assert!((objective(&inst, &alloc).unwrap() - total).abs() < 1e-12);
    }

    #[test]
    fn two_pair_optimum_matches_grid_brute_force() {
        let g: Vec<Vec<Vec<f64>>> = vec![
            vec![vec![1.0, 0.6], vec![0.8, 0.3]],
            vec![vec![0.5, 0.9], vec![0.7, 1.2]],
        ];
        let inst = NetworkInstance::from_gains(&g, vec![1.0, 1.0], 0.05, 1.0).unwrap();
        let levels: Vec<f64> = (0..=40).map(|k| k as f64 / 40.0).collect();
        // Enumerate the four hard channel matrices and a power grid.
        let mut best_obj = f64::MIN;
        let mut best_by_scalar = f64::MIN;
        for a0 in 0..2 {
            for a1 in 0..2 {
                let c = [[(a0 == 0) as u8 as f64, (a0 == 1) as u8 as f64],
                         [(a1 == 0) as u8 as f64, (a1 == 1) as u8 as f64]];
                for &p0 in &levels {
                    for &p1 in &levels {
                        let alloc = Allocation::from_assignment(&[a0, a1], 2, vec![p0, p1]);
                        best_obj = best_obj.max(objective(&inst, &alloc).unwrap());
                        let cv: Vec<Vec<f64>> = c.iter().map(|r| r.to_vec()).collect();
                        let s: f64 = (0..2)
                            .flat_map(|i| (0..2).map(move |m| (i, m)))
                            .map(|(i, m)| scalar_rate(&g, &cv, &[p0, p1], 0.05, i, m))
                            .sum();
                        best_by_scalar = best_by_scalar.max(s);
                    }
                }
            }
        }
        assert!((best_obj - best_by_scalar).abs() < 1e-12);
        // Separate channels at full power is optimal here.
        let sep = Allocation::from_assignment(&[0, 1], 2, vec![1.0, 1.0]);
        assert!((objective(&inst, &sep).unwrap() - best_obj).abs() < 1e-12);
    }

    fn random_instance(seed: u64, d: usize, m: usize) -> NetworkInstance {
        sample_instance(&GeometryConfig::new(d, m), &FadingConfig::default(), seed).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn objective_invariant_under_pair_permutation(
            seed in any::<u64>(),
            perm in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle(),
            assign in proptest::collection::vec(0..3usize, 5),
            power in proptest::collection::vec(0.0..=1.0f64, 5),
        ) {
            let inst = random_instance(seed, 5, 3);
            let alloc = Allocation::from_assignment(&assign, 3, power.clone());
            let pinst = inst.permuted(&perm);
            let passign: Vec<usize> = perm.iter().map(|&k| assign[k]).collect();
            let ppower: Vec<f64> = perm.iter().map(|&k| power[k]).collect();
            let palloc = Allocation::from_assignment(&passign, 3, ppower);
            let a = objective(&inst, &alloc).unwrap();
            let b = objective(&pinst, &palloc).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn rate_monotone_in_own_and_other_power(
            seed in any::<u64>(),
            p in proptest::collection::vec(0.0..=1.0f64, 4),
            bump in 0.0..=1.0f64,
        ) {
            let inst = random_instance(seed, 4, 1);
            let base = Allocation::from_assignment(&[0; 4], 1, p.clone());
            let mut own = base.clone();
            own.power[0] = (p[0] + bump).min(1.0);
            let mut other = base.clone();
            other.power[1] = (p[1] + bump).min(1.0);
            prop_assert!(rate(&inst, &own, 0, 0) >= rate(&inst, &base, 0, 0));
            prop_assert!(rate(&inst, &other, 0, 0) <= rate(&inst, &base, 0, 0));
        }

        #[test]
        fn soft_and_hard_agree_on_one_hot(
            seed in any::<u64>(),
            assign in proptest::collection::vec(0..2usize, 4),
            power in proptest::collection::vec(0.0..=1.0f64, 4),
        ) {
            let inst = random_instance(seed, 4, 2);
            let hard = Allocation::from_assignment(&assign, 2, power);
            let soft = Allocation { hard: false, ..hard.clone() };
            prop_assert_eq!(objective(&inst, &hard).unwrap(), objective(&inst, &soft).unwrap());
        }
    }
}
