//! Layer state spaces and the efficiency metrics built on them.
//!
//! A neuron *fires* when its output is strictly greater than zero. The
//! firing pattern of a layer for one input (dense) or one spatial location
//! of one input (convolution) is that layer's state. Histograms only hold
//! states that were actually observed.

mod profile;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub use profile::{
    profile_network, DatasetTag, EfficiencyReport, LayerEfficiency, Profile, ProfileConfig,
    DEFAULT_BETA, DEFAULT_CONV_STATE_CAP,
};

/// Bit-packed words; neuron `i` is bit `i % 64` of word `i / 64`.
pub type StateKey = SmallVec<[u64; 2]>;

fn words_for(neurons: usize) -> usize {
    neurons.div_ceil(64).max(1)
}

/// Firing pattern of one layer for one observation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LayerState {
    bits: StateKey,
    len: usize,
}

impl LayerState {
    pub fn from_activations<T: Scalar>(outputs: &[T]) -> Self {
        Self {
            bits: pack(outputs),
            len: outputs.len(),
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut words: StateKey = SmallVec::from_elem(0, words_for(bits.len()));
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            words[i / 64] |= 1 << (i % 64);
        }
        Self {
            bits: words,
            len: bits.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fires(&self, neuron: usize) -> bool {
        neuron < self.len && self.bits[neuron / 64] >> (neuron % 64) & 1 == 1
    }

    pub fn key(&self) -> &StateKey {
        &self.bits
    }

    /// Neuron 1 first, e.g. `"001"` when only the third neuron fires.
    pub fn to_bit_string(&self) -> String {
        (0..self.len)
            .map(|i| if self.fires(i) { '1' } else { '0' })
            .collect()
    }
}

#[inline]
fn pack<T: Scalar>(outputs: &[T]) -> StateKey {
    let mut words: StateKey = SmallVec::from_elem(0, words_for(outputs.len()));
    for (i, &v) in outputs.iter().enumerate() {
        if v > T::zero() {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

/// Quantizes post-activation outputs into layer states.
///
/// The last axis indexes neurons (or channels); every other axis indexes
/// observations, so a `(B, N)` dense output yields `B` states and a
/// `(B, H, W, C)` convolutional output yields `B·H·W` states of `C` bits.
pub fn quantize<T: Scalar>(activations: &Tensor<T>) -> Vec<LayerState> {
    let neurons = *activations.shape().last().unwrap_or(&0);
    if neurons == 0 {
        return Vec::new();
    }
    activations
        .data()
        .chunks_exact(neurons)
        .map(LayerState::from_activations)
        .collect()
}

/// Observed-frequency map of one layer's states.
#[derive(Debug, Clone, PartialEq)]
pub struct StateHistogram {
    pub layer_id: usize,
    neurons: usize,
    counts: HashMap<StateKey, u64>,
    total: u64,
}

impl StateHistogram {
    pub fn new(layer_id: usize, neurons: usize) -> Self {
        Self {
            layer_id,
            neurons,
            counts: HashMap::new(),
            total: 0,
        }
    }

    /// Builds a histogram directly from per-state counts (zero counts are
    /// skipped).
    pub fn from_counts(
        layer_id: usize,
        neurons: usize,
        counts: impl IntoIterator<Item = (LayerState, u64)>,
    ) -> Result<Self> {
        let mut h = Self::new(layer_id, neurons);
        for (state, c) in counts {
            h.check_len(state.len)?;
            if c > 0 {
                *h.counts.entry(state.bits).or_insert(0) += c;
                h.total += c;
            }
        }
        Ok(h)
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn total_observations(&self) -> u64 {
        self.total
    }

    pub fn distinct_states(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, state: &LayerState) -> u64 {
        self.counts.get(&state.bits).copied().unwrap_or(0)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.neurons {
            return Err(Error::Instrumentation(format!(
                "state of {len} bits recorded into layer {} of {} neurons",
                self.layer_id, self.neurons
            )));
        }
        Ok(())
    }

    pub fn record(&mut self, states: &[LayerState]) -> Result<()> {
        for s in states {
            self.check_len(s.len)?;
        }
        for s in states {
            *self.counts.entry(s.bits.clone()).or_insert(0) += 1;
        }
        self.total += states.len() as u64;
        Ok(())
    }

    /// Quantizes and records a block of activations without materializing
    /// intermediate [`LayerState`]s.
    pub fn record_activations<T: Scalar>(&mut self, activations: &Tensor<T>) -> Result<()> {
        let neurons = *activations.shape().last().unwrap_or(&0);
        self.check_len(neurons)?;
        for row in activations.data().chunks_exact(neurons) {
            *self.counts.entry(pack(row)).or_insert(0) += 1;
            self.total += 1;
        }
        Ok(())
    }

    /// Adds another histogram's counts (associative and commutative).
    pub fn merge(&mut self, other: &StateHistogram) -> Result<()> {
        self.check_len(other.neurons)?;
        for (k, &c) in &other.counts {
            *self.counts.entry(k.clone()).or_insert(0) += c;
        }
        self.total += other.total;
        Ok(())
    }

    /// Occurrence counts in ascending order.
    pub fn sorted_counts(&self) -> Vec<u64> {
        let mut c: Vec<u64> = self.counts.values().copied().collect();
        c.sort_unstable();
        c
    }

    /// `(state, count)` pairs ordered by state.
    pub fn sorted_states(&self) -> Vec<(LayerState, u64)> {
        let mut v: Vec<_> = self
            .counts
            .iter()
            .map(|(k, &c)| {
                (
                    LayerState {
                        bits: k.clone(),
                        len: self.neurons,
                    },
                    c,
                )
            })
            .collect();
        v.sort_by(|a, b| a.0.bits.iter().rev().cmp(b.0.bits.iter().rev()));
        v
    }

    /// Writes `state_hex,count` lines sorted by state. The hex string is the
    /// packed state with neuron 1 as the least significant bit.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "state_hex,count")?;
        let digits = self.neurons.div_ceil(4).max(1);
        for (state, count) in self.sorted_states() {
            writeln!(out, "{},{count}", state_hex(&state.bits, digits))?;
        }
        Ok(())
    }
}

fn state_hex(words: &[u64], digits: usize) -> String {
    let mut s = String::new();
    for w in words.iter().rev() {
        let _ = write!(s, "{w:016x}");
    }
    s[s.len() - digits.min(s.len())..].to_string()
}

/// Shannon entropy in bits of a histogram's state distribution.
pub fn entropy(histogram: &StateHistogram) -> Result<f64> {
    entropy_from_counts(&histogram.sorted_counts())
}

/// Shannon entropy in bits of a count vector; summed in the given order.
pub fn entropy_from_counts(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::UndefinedEntropy);
    }
    let t = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.log2()
        })
        .sum();
    Ok(h.max(0.0))
}

/// Layer efficiency: entropy divided by the layer's neuron count.
pub fn layer_efficiency(histogram: &StateHistogram) -> Result<f64> {
    if histogram.neurons == 0 {
        return Err(Error::Argument("layer has no neurons".into()));
    }
    Ok((entropy(histogram)? / histogram.neurons as f64).clamp(0.0, 1.0))
}

/// Geometric mean of layer efficiencies.
pub fn network_efficiency(layer_efficiencies: &[f64]) -> Result<f64> {
    if layer_efficiencies.is_empty() {
        return Err(Error::Config("no layer efficiencies to combine".into()));
    }
    if let Some(bad) = layer_efficiencies
        .iter()
        .find(|e| !(0.0..=1.0).contains(*e))
    {
        return Err(Error::Argument(format!("layer efficiency {bad} outside [0,1]")));
    }
    let product: f64 = layer_efficiencies.iter().product();
    if product == 0.0 {
        return Ok(0.0);
    }
    Ok(product.powf(1.0 / layer_efficiencies.len() as f64))
}

/// `(P^β · η_N)^(1/(β+1))`.
pub fn aiq(performance: f64, network_efficiency: f64, beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&performance) {
        return Err(Error::Argument(format!("performance {performance} outside [0,1]")));
    }
    if !(0.0..=1.0).contains(&network_efficiency) {
        return Err(Error::Argument(format!(
            "network efficiency {network_efficiency} outside [0,1]"
        )));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Argument(format!("beta must be positive, got {beta}")));
    }
    Ok((performance.powf(beta) * network_efficiency).powf(1.0 / (beta + 1.0)))
}

/// Neurons sufficient to give every one of `example_count` inputs its own
/// dense-layer state: `ceil(log2(example_count))`.
pub fn sizing_bound(example_count: u64) -> u32 {
    if example_count <= 1 {
        0
    } else {
        64 - (example_count - 1).leading_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hist(neurons: usize, counts: &[(&str, u64)]) -> StateHistogram {
        let states = counts.iter().map(|(s, c)| {
            let bits: Vec<bool> = s.chars().map(|ch| ch == '1').collect();
            (LayerState::from_bools(&bits), *c)
        });
        StateHistogram::from_counts(0, neurons, states).unwrap()
    }

    #[test]
    fn quantize_threshold_is_strict() {
        let t = Tensor::from_vec(&[1, 3], vec![-0.5f32, 0.0, 0.3]).unwrap();
        let s = quantize(&t);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].to_bit_string(), "001");
        let t = Tensor::from_vec(&[1, 4], vec![0.1f32, 2.0, 1e-30, 7.0]).unwrap();
        assert_eq!(quantize(&t)[0].to_bit_string(), "1111");
    }

    #[test]
    fn conv_map_yields_one_state_per_location() {
        let t = Tensor::<f32>::filled(&[1, 24, 24, 3], 1.0);
        let s = quantize(&t);
        assert_eq!(s.len(), 576);
        assert!(s.iter().all(|x| x.len() == 3));
    }

    #[test]
    fn record_counts() {
        let mut h = StateHistogram::new(0, 3);
        let a = LayerState::from_bools(&[false, false, true]);
        let b = LayerState::from_bools(&[true, true, false]);
        h.record(&[a.clone(), a.clone(), b.clone()]).unwrap();
        assert_eq!(h.count(&a), 2);
        assert_eq!(h.count(&b), 1);
        assert_eq!(h.total_observations(), 3);
        assert_eq!(h.distinct_states(), 2);

        let before = h.clone();
        h.record(&[a.clone(), a.clone(), b.clone()]).unwrap();
        assert_eq!(h.count(&a), 2 * before.count(&a));
        assert_eq!(h.count(&b), 2 * before.count(&b));

        let wrong = LayerState::from_bools(&[true]);
        assert!(matches!(h.record(&[wrong]), Err(Error::Instrumentation(_))));
    }

    #[test]
    fn record_activations_matches_record() {
        let t = Tensor::from_vec(&[2, 2, 2], vec![1.0f32, -1.0, 0.0, 2.0, 3.0, 3.0, -1.0, -2.0])
            .unwrap();
        let mut a = StateHistogram::new(0, 2);
        a.record_activations(&t).unwrap();
        let mut b = StateHistogram::new(0, 2);
        b.record(&quantize(&t)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&hist(1, &[("1", 5)])).unwrap(), 0.0);
        let uniform = hist(2, &[("00", 1), ("01", 1), ("10", 1), ("11", 1)]);
        assert!((entropy(&uniform).unwrap() - 2.0).abs() < 1e-15);
        // -(3/4·log2(3/4) + 1/4·log2(1/4)) = 2 - (3/4)·log2(3)
        let skew = hist(1, &[("0", 3), ("1", 1)]);
        assert!((entropy(&skew).unwrap() - 0.811_278_124_459_132_8).abs() < 1e-12);
        assert!(matches!(
            entropy(&StateHistogram::new(0, 2)),
            Err(Error::UndefinedEntropy)
        ));
    }

    #[test]
    fn efficiency_examples() {
        let all: Vec<(String, u64)> = (0..8).map(|i| (format!("{:03b}", i), 3)).collect();
        let all: Vec<(&str, u64)> = all.iter().map(|(s, c)| (s.as_str(), *c)).collect();
        assert!((layer_efficiency(&hist(3, &all)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(layer_efficiency(&hist(3, &[("010", 9)])).unwrap(), 0.0);
        let half = hist(2, &[("00", 1), ("11", 1)]);
        assert_eq!(entropy(&half).unwrap(), 1.0);
        assert_eq!(layer_efficiency(&half).unwrap(), 0.5);
    }

    #[test]
    fn network_efficiency_examples() {
        assert_eq!(network_efficiency(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(network_efficiency(&[0.5, 0.5]).unwrap(), 0.5);
        assert_eq!(network_efficiency(&[0.25, 1.0]).unwrap(), 0.5);
        assert_eq!(network_efficiency(&[0.0, 0.9]).unwrap(), 0.0);
        assert!(matches!(network_efficiency(&[]), Err(Error::Config(_))));
        assert!(network_efficiency(&[1.2]).is_err());
    }

    #[test]
    fn aiq_examples() {
        assert_eq!(aiq(1.0, 1.0, 2.0).unwrap(), 1.0);
        assert_eq!(aiq(1.0, 1.0, 0.3).unwrap(), 1.0);
        assert_eq!(aiq(0.0, 0.7, 2.0).unwrap(), 0.0);
        // (0.9291² · 0.7477)^(1/3)
        let v = aiq(0.9291, 0.7477, 2.0).unwrap();
        assert!((v - 0.864_206_311).abs() < 1e-8, "{v}");
        assert!((v * 100.0 - 86.41).abs() < 0.5);
        assert!(aiq(1.1, 0.5, 2.0).is_err());
        assert!(aiq(0.5, -0.1, 2.0).is_err());
        assert!(aiq(0.5, 0.5, 0.0).is_err());
    }

    #[test]
    fn sizing_bound_examples() {
        assert_eq!(sizing_bound(60_000), 16);
        assert_eq!(sizing_bound(1), 0);
        assert_eq!(sizing_bound(2), 1);
        assert_eq!(sizing_bound(65_536), 16);
        assert_eq!(sizing_bound(65_537), 17);
        assert_eq!(sizing_bound(14_000_000), 24);
    }

    #[test]
    fn csv_dump_is_sorted_hex() {
        let h = hist(5, &[("00001", 2), ("10000", 4), ("11000", 1)]);
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "state_hex,count\n01,4\n03,1\n10,2\n");
    }

    #[test]
    fn wide_states_pack_across_words() {
        let mut bits = vec![false; 130];
        bits[0] = true;
        bits[129] = true;
        let s = LayerState::from_bools(&bits);
        assert_eq!(s.key().len(), 3);
        assert!(s.fires(129) && s.fires(0) && !s.fires(64));
    }

    fn arb_counts() -> impl Strategy<Value = (usize, Vec<(u32, u64)>)> {
        (1usize..=8).prop_flat_map(|n| {
            (
                Just(n),
                proptest::collection::vec((0u32..(1 << n), 1u64..50), 1..40),
            )
        })
    }

    fn build(n: usize, entries: &[(u32, u64)], perm: Option<&[usize]>) -> StateHistogram {
        let states = entries.iter().map(|&(code, c)| {
            let bits: Vec<bool> = (0..n)
                .map(|i| {
                    let src = perm.map_or(i, |p| p[i]);
                    code >> src & 1 == 1
                })
                .collect();
            (LayerState::from_bools(&bits), c)
        });
        StateHistogram::from_counts(0, n, states).unwrap()
    }

    proptest! {
        #[test]
        fn entropy_bounds((n, entries) in arb_counts()) {
            let h = build(n, &entries, None);
            let e = entropy(&h).unwrap();
            prop_assert!(e >= 0.0);
            prop_assert!(e <= (h.distinct_states() as f64).log2() + 1e-12);
            prop_assert!(e <= n as f64 + 1e-12);
            prop_assert_eq!(h.sorted_counts().iter().sum::<u64>(), h.total_observations());
            let eta = layer_efficiency(&h).unwrap();
            prop_assert!((0.0..=1.0).contains(&eta));
        }

        #[test]
        fn entropy_invariant_to_scaling_and_bit_relabeling(
            (n, entries) in arb_counts(),
            k in 1u64..20,
            seed in any::<u64>(),
        ) {
            let base = entropy(&build(n, &entries, None)).unwrap();
            let scaled: Vec<_> = entries.iter().map(|&(s, c)| (s, c * k)).collect();
            prop_assert!((entropy(&build(n, &scaled, None)).unwrap() - base).abs() < 1e-12);

            let mut perm: Vec<usize> = (0..n).collect();
            let mut x = seed;
            for i in (1..n).rev() {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                perm.swap(i, (x >> 33) as usize % (i + 1));
            }
            let relabeled = entropy(&build(n, &entries, Some(&perm))).unwrap();
            prop_assert!((relabeled - base).abs() < 1e-12);

            let mut reversed = entries.clone();
            reversed.reverse();
            prop_assert!((entropy(&build(n, &reversed, None)).unwrap() - base).abs() < 1e-12);
        }

        #[test]
        fn merge_equals_joint_recording((n, a) in arb_counts(), b in proptest::collection::vec((0u32..2, 1u64..5), 1..10)) {
            let ha = build(n, &a, None);
            let hb = build(n, &b, None);
            let mut ab = ha.clone();
            ab.merge(&hb).unwrap();
            let mut ba = hb.clone();
            ba.merge(&ha).unwrap();
            prop_assert_eq!(&ab, &ba);
            let joint: Vec<_> = a.iter().chain(&b).copied().collect();
            prop_assert_eq!(ab, build(n, &joint, None));
        }

        #[test]
        fn aiq_monotone_and_bounded(p in 0.0f64..=1.0, q in 0.0f64..=1.0, e in 0.0f64..=1.0, f in 0.0f64..=1.0, beta in 0.1f64..8.0) {
            let a = aiq(p, e, beta).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let (lo_p, hi_p) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(aiq(lo_p, e, beta).unwrap() <= aiq(hi_p, e, beta).unwrap() + 1e-15);
            let (lo_e, hi_e) = if e <= f { (e, f) } else { (f, e) };
            prop_assert!(aiq(p, lo_e, beta).unwrap() <= aiq(p, hi_e, beta).unwrap() + 1e-15);
            prop_assert!((aiq(p, 1.0, beta).unwrap() - p.powf(beta / (beta + 1.0))).abs() < 1e-12);
        }

        #[test]
        fn network_efficiency_bounded(effs in proptest::collection::vec(0.0f64..=1.0, 1..5)) {
            let g = network_efficiency(&effs).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            let min = effs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = effs.iter().cloned().fold(0.0, f64::max);
            prop_assert!(g >= min - 1e-12 && g <= max + 1e-12);
        }
    }
}
