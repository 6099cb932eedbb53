//! Independent reference computations used by the acceptance suite.
#![allow(dead_code)]

use std::collections::HashMap;

use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive, Zero};

/// Fractional bits kept by the fixed-point logarithm.
pub const FRACTION_BITS: usize = 96;
/// Working precision of the mantissa during repeated squaring.
const MANTISSA_BITS: usize = 256;

/// `log2(n)` as an integer scaled by `2^FRACTION_BITS`, by repeated squaring
/// of the mantissa. Truncation error is below one unit in the last place.
pub fn log2_fixed(n: u64) -> BigInt {
    assert!(n > 0);
    let int_part = 63 - n.leading_zeros() as usize;
    let mut result = BigUint::from(int_part) << FRACTION_BITS;
    let two = BigUint::one() << (MANTISSA_BITS + 1);
    let mut x = (BigUint::from(n) << MANTISSA_BITS) >> int_part;
    for i in 1..=FRACTION_BITS {
        x = (&x * &x) >> MANTISSA_BITS;
        if x >= two {
            x >>= 1;
            result += BigUint::one() << (FRACTION_BITS - i);
        }
    }
    BigInt::from(result)
}

/// Exact-summation entropy oracle: `log2 T − (1/T) Σ c·log2 c` with every
/// product and sum carried out on big integers.
pub struct EntropyOracle {
    logs: HashMap<u64, BigInt>,
}

impl EntropyOracle {
    pub fn new() -> Self {
        Self {
            logs: HashMap::new(),
        }
    }

    fn log2(&mut self, n: u64) -> BigInt {
        self.logs.entry(n).or_insert_with(|| log2_fixed(n)).clone()
    }

    pub fn entropy(&mut self, counts: &[u64]) -> f64 {
        let total: u64 = counts.iter().sum();
        assert!(total > 0);
        let mut acc = BigInt::from(total) * self.log2(total);
        for &c in counts.iter().filter(|&&c| c > 0) {
            acc -= BigInt::from(c) * self.log2(c);
        }
        if acc <= BigInt::zero() {
            return 0.0;
        }
        // acc / (T · 2^F), reduced to f64 only at the end.
        let scaled: BigInt = (acc << 64u32) / BigInt::from(total);
        scaled.to_f64().unwrap() / 2f64.powi((FRACTION_BITS + 64) as i32)
    }
}

/// Two-sided 95% Student-t critical values t(0.975, df), as printed in
/// standard statistical tables.
pub const T_TABLE_975: [(u64, f64); 2] = [(2, 4.302652729911275), (10, 2.228138851986274)];
