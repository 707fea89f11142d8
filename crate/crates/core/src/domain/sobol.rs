//! Scrambled Sobol sequences in base 2 with 32-bit resolution.
//!
//! Direction numbers are built from primitive polynomials over GF(2),
//! enumerated by increasing degree (up to degree 14) and increasing value
//! within a degree. The first dimension is the van der Corput sequence. The
//! free initial direction numbers `m_1..m_s` of each polynomial are fixed odd
//! integers `m_k < 2^k` drawn once from a constant-seeded generator, so the
//! base sequence never depends on the caller's seed.
//!
//! Scrambling is a random lower-triangular linear matrix scramble followed by
//! a random digital shift, both drawn per dimension from the caller's seed.
//! Both operations are bijective on the digit space, so the (t, s)-net
//! structure of each dyadic block survives.
//!
//! Indexing skips the origin: the `i`-th returned point (0-based) is sequence
//! element `i + 1`. In one unscrambled dimension the first points are the
//! radical inverses 0.5, 0.25, 0.75, 0.125, ...

use std::sync::OnceLock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

const BITS: usize = 32;
const MAX_DEGREE: u32 = 14;
const DIRECTION_SEED: u64 = 0x536f_626f_6c44_4e31;

/// A point of the intrinsic space, every coordinate in `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntrinsicPoint(pub Vec<f64>);

impl IntrinsicPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

struct DirectionTable {
    /// `v[j][k]` is direction number `k + 1` of dimension `j`, left-aligned.
    v: Vec<[u32; BITS]>,
}

fn table() -> &'static DirectionTable {
    static TABLE: OnceLock<DirectionTable> = OnceLock::new();
    TABLE.get_or_init(build_table)
}

/// Largest supported intrinsic dimension.
pub fn max_dimension() -> usize {
    table().v.len()
}

fn build_table() -> DirectionTable {
    let mut rng = seed::rng(DIRECTION_SEED);
    let mut v = Vec::new();

    let mut first = [0u32; BITS];
    for (k, slot) in first.iter_mut().enumerate() {
        *slot = 1u32 << (BITS - 1 - k);
    }
    v.push(first);

    for degree in 1..=MAX_DEGREE {
        for poly in primitive_polynomials(degree) {
            let s = degree as usize;
            let mut m = [0u64; BITS];
            m[0] = 1;
            for (k, mk) in m.iter_mut().enumerate().take(s).skip(1) {
                // odd, below 2^(k+1)
                *mk = (rng.random_range(0..(1u64 << k)) << 1) | 1;
            }
            for k in s..BITS {
                let mut next = m[k - s] ^ (m[k - s] << s);
                for i in 1..s {
                    // coefficient a_i sits at bit (s - i)
                    if (poly >> (s - i)) & 1 == 1 {
                        next ^= m[k - i] << i;
                    }
                }
                m[k] = next;
            }
            let mut dir = [0u32; BITS];
            for k in 0..BITS {
                dir[k] = (m[k] << (BITS - 1 - k)) as u32;
            }
            v.push(dir);
        }
    }
    DirectionTable { v }
}

/// Multiplies two polynomials over GF(2) modulo `modulus` of the given degree.
fn mulmod(a: u64, b: u64, modulus: u64, degree: u32) -> u64 {
    let mut result = 0u64;
    let mut a = a;
    let mut b = b;
    while b != 0 {
        if b & 1 == 1 {
            result ^= a;
        }
        b >>= 1;
        a <<= 1;
        if (a >> degree) & 1 == 1 {
            a ^= modulus;
        }
    }
    result
}

/// `x^exp mod modulus`, for `degree >= 2`.
fn powmod_x(exp: u64, modulus: u64, degree: u32) -> u64 {
    let mut result = 1u64;
    let mut base = 2u64;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result = mulmod(result, base, modulus, degree);
        }
        base = mulmod(base, base, modulus, degree);
        e >>= 1;
    }
    result
}

fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2;
    while p * p <= n {
        if n.is_multiple_of(p) {
            out.push(p);
            while n.is_multiple_of(p) {
                n /= p;
            }
        }
        p += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// All primitive polynomials of `degree`, encoded with bit `i` holding the
/// coefficient of `x^i`, in increasing numeric order.
pub(crate) fn primitive_polynomials(degree: u32) -> Vec<u64> {
    let order = (1u64 << degree) - 1;
    let factors = prime_factors(order);
    let lead = 1u64 << degree;
    (0..(1u64 << degree.saturating_sub(1)))
        .map(|inner| lead | (inner << 1) | 1)
        .filter(|&poly| {
            if degree == 1 {
                return true;
            }
            powmod_x(order, poly, degree) == 1 && factors.iter().all(|&q| powmod_x(order / q, poly, degree) != 1)
        })
        .collect()
}

/// A base-2 Sobol generator, optionally scrambled.
#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
}

impl Sobol {
    pub fn unscrambled(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Sobol { directions: table().v[..dim].to_vec(), shift: vec![0; dim] })
    }

    /// Linear matrix scramble plus digital shift, seeded per dimension.
    pub fn scrambled(dim: usize, seed: u64) -> Result<Self> {
        check_dim(dim)?;
        let mut rng = seed::rng(seed);
        let mut directions = Vec::with_capacity(dim);
        let mut shift = Vec::with_capacity(dim);
        for base in &table().v[..dim] {
            // Row i of the lower-triangular scramble, as a mask over digits
            // 1..=i (digit 1 is the most significant bit).
            let mut rows = [0u32; BITS];
            for (i, row) in rows.iter_mut().enumerate() {
                let diag = 1u32 << (BITS - 1 - i);
                let above = if i == 0 { 0 } else { rng.random::<u32>() & !((1u32 << (BITS - i)) - 1) };
                *row = diag | above;
            }
            let mut scrambled = [0u32; BITS];
            for (k, v) in base.iter().enumerate() {
                scrambled[k] = apply_rows(&rows, *v);
            }
            directions.push(scrambled);
            shift.push(rng.random::<u32>());
        }
        Ok(Sobol { directions, shift })
    }

    pub fn dim(&self) -> usize {
        self.directions.len()
    }

    /// Coordinates of sequence element `n` (element 0 is the unshifted origin).
    pub fn element(&self, n: u32) -> Vec<f64> {
        self.directions
            .iter()
            .zip(&self.shift)
            .map(|(dir, &shift)| {
                let mut x = shift;
                let mut bits = n;
                let mut k = 0;
                while bits != 0 {
                    if bits & 1 == 1 {
                        x ^= dir[k];
                    }
                    bits >>= 1;
                    k += 1;
                }
                x as f64 / 4_294_967_296.0
            })
            .collect()
    }

    /// The first `count` points, skipping the origin.
    pub fn points(&self, count: usize) -> Result<Vec<IntrinsicPoint>> {
        if count as u64 >= u32::MAX as u64 {
            return Err(Error::Config(format!("sequence length {count} exceeds the 32-bit Sobol limit")));
        }
        Ok((1..=count as u32).map(|n| IntrinsicPoint(self.element(n))).collect())
    }
}

fn apply_rows(rows: &[u32; BITS], x: u32) -> u32 {
    let mut out = 0u32;
    for (i, row) in rows.iter().enumerate() {
        if (row & x).count_ones() & 1 == 1 {
            out |= 1u32 << (BITS - 1 - i);
        }
    }
    out
}

fn check_dim(dim: usize) -> Result<()> {
    let max = max_dimension();
    if dim == 0 || dim > max {
        return Err(Error::Config(format!("unsupported Sobol dimension {dim}; supported range is 1..={max}")));
    }
    Ok(())
}

/// The first `count` points of a scrambled Sobol sequence in `[0,1)^dim`.
pub fn sobol_sequence(dim: usize, count: usize, seed: u64) -> Result<Vec<IntrinsicPoint>> {
    if count == 0 {
        return Err(Error::Config("Sobol sample size must be at least 1".into()));
    }
    Sobol::scrambled(dim, seed)?.points(count)
}
