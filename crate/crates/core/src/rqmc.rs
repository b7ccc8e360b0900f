//! Randomized quasi-Monte Carlo point sets.
//!
//! Sobol sequences in up to [`MAX_DIMENSION`] dimensions, randomized by a
//! per-dimension digital (XOR) shift. The shift makes every point marginally
//! U(0,1)^d, so estimators driven by the point set stay unbiased, while the
//! low-discrepancy structure of the underlying net is preserved: XOR-ing the
//! shift back out recovers the deterministic Sobol set exactly.
//!
//! Direction numbers come from the degree-ordered primitive-polynomial
//! construction. Initial values for the low dimensions follow the classic
//! published tables; the remaining dimensions use fixed odd initial values
//! drawn once from a deterministic generator (any odd `m_j < 2^j` yields a
//! valid digital net). All arithmetic is 32-bit integer, so point sets are
//! bit-reproducible across platforms.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::error::{Result, VbilError};
use crate::rng::{mix, seed_stream};

/// Largest supported dimension of a point set.
pub const MAX_DIMENSION: usize = 32;

const BITS: u32 = 32;
const SCALE: f64 = 1.0 / 4_294_967_296.0; // 2^-32

/// Clamp bound keeping every coordinate strictly inside (0,1).
const EPS: f64 = f64::EPSILON / 2.0; // 2^-53

/// How the point set is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointGenerator {
    /// Sobol net with a random digital shift per dimension.
    SobolDigitalShift,
    /// Plain pseudo-random uniforms (same interface, for comparisons and for
    /// running the optimizer without QMC).
    PlainMonteCarlo,
}

/// An `n x d` matrix of points in (0,1), row-major.
#[derive(Debug, Clone)]
pub struct RqmcPointSet {
    points: Vec<f64>,
    n: usize,
    d: usize,
    pub generator: PointGenerator,
    pub seed: u64,
    /// Integer lattice before the shift (Sobol only), for structure tests.
    ints: Option<Vec<u32>>,
    shifts: Vec<u32>,
}

impl RqmcPointSet {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.d)
    }

    /// The digital shift applied to each dimension (empty for plain MC).
    pub fn digital_shifts(&self) -> &[u32] {
        &self.shifts
    }

    /// Pre-shift Sobol integers, row-major (None for plain MC).
    pub fn lattice_ints(&self) -> Option<&[u32]> {
        self.ints.as_deref()
    }
}

struct DirectionRow {
    degree: u32,
    poly: u32,      // encoded inner coefficients, Joe-Kuo convention
    m_init: Vec<u32>,
}

/// Initial direction numbers for dimensions 2..=13 from the standard
/// degree-ordered tables (dimension 1 is the van der Corput sequence and
/// needs no row).
const LOW_DIM_M: [(u32, u32, &[u32]); 12] = [
    (1, 0, &[1]),
    (2, 1, &[1, 3]),
    (3, 1, &[1, 3, 1]),
    (3, 2, &[1, 1, 1]),
    (4, 1, &[1, 1, 3, 3]),
    (4, 4, &[1, 3, 5, 13]),
    (5, 2, &[1, 1, 5, 5, 17]),
    (5, 4, &[1, 1, 5, 5, 5]),
    (5, 7, &[1, 1, 7, 11, 19]),
    (5, 11, &[1, 1, 5, 1, 1]),
    (5, 13, &[1, 1, 1, 3, 11]),
    (5, 14, &[1, 3, 5, 5, 31]),
];

/// Tests primitivity of `x^s + (bits of a) + 1` over GF(2) by checking that
/// the associated LFSR has full period `2^s - 1`.
fn is_primitive(degree: u32, a: u32) -> bool {
    // Full polynomial bit mask including leading and trailing 1.
    let poly: u32 = (1 << degree) | (a << 1) | 1;
    let full_period = (1u64 << degree) - 1;
    let mut state: u32 = 1;
    for step in 1..=full_period {
        // multiply state by x modulo poly
        state <<= 1;
        if state & (1 << degree) != 0 {
            state ^= poly;
        }
        if state == 1 {
            return step == full_period;
        }
    }
    false
}

/// Degree-ordered primitive polynomials paired with initial direction
/// numbers, covering dimensions 2..=MAX_DIMENSION.
fn direction_table() -> &'static Vec<DirectionRow> {
    static TABLE: OnceLock<Vec<DirectionRow>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rows = Vec::with_capacity(MAX_DIMENSION - 1);
        for &(degree, poly, m) in &LOW_DIM_M {
            debug_assert!(is_primitive(degree, poly));
            rows.push(DirectionRow { degree, poly, m_init: m.to_vec() });
        }
        // Continue the polynomial enumeration for the remaining dimensions;
        // initial values are fixed odd numbers from a deterministic stream.
        let mut seed_state = 0x5eed_50b0_1u64;
        let mut degree = LOW_DIM_M.last().unwrap().0;
        let mut a = LOW_DIM_M.last().unwrap().1 + 1;
        while rows.len() < MAX_DIMENSION - 1 {
            if a >= (1 << degree.saturating_sub(1)) {
                degree += 1;
                a = 0;
                continue;
            }
            if is_primitive(degree, a) {
                let m_init = (1..=degree)
                    .map(|j| {
                        seed_state = mix(seed_state);
                        let span = 1u32 << (j - 1); // number of odd values < 2^j
                        2 * ((seed_state as u32) % span) + 1
                    })
                    .collect();
                rows.push(DirectionRow { degree, poly: a, m_init });
            }
            a += 1;
        }
        rows
    })
}

/// Direction integers `v_1..v_{bits}` (already shifted to the top bits) for
/// one dimension. Dimension 0 is the van der Corput sequence.
fn direction_integers(dim: usize) -> Vec<u32> {
    let mut v = vec![0u32; BITS as usize + 1]; // 1-indexed
    if dim == 0 {
        for j in 1..=BITS as usize {
            v[j] = 1 << (BITS as usize - j);
        }
        return v;
    }
    let row = &direction_table()[dim - 1];
    let s = row.degree as usize;
    for j in 1..=s.min(BITS as usize) {
        debug_assert!(row.m_init[j - 1] % 2 == 1 && row.m_init[j - 1] < (1 << j));
        v[j] = row.m_init[j - 1] << (BITS as usize - j);
    }
    for j in (s + 1)..=BITS as usize {
        let mut val = v[j - s] ^ (v[j - s] >> s);
        for k in 1..s {
            if (row.poly >> (s - 1 - k)) & 1 == 1 {
                val ^= v[j - k];
            }
        }
        v[j] = val;
    }
    v
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(EPS, 1.0 - EPS)
}

/// Generates an `n x d` point set.
///
/// With [`PointGenerator::SobolDigitalShift`], the first `n` Gray-code Sobol
/// points are XOR-ed with a per-dimension 32-bit shift derived from `seed`.
/// When `n` is not a power of two the net is built at the next power of two
/// and truncated, avoiding the quality loss of partial Sobol blocks.
pub fn generate(n: usize, d: usize, generator: PointGenerator, seed: u64) -> Result<RqmcPointSet> {
    if n == 0 {
        return Err(VbilError::Contract("point set needs n >= 1".to_string()));
    }
    if d == 0 || d > MAX_DIMENSION {
        return Err(VbilError::Capability(format!(
            "dimension {d} outside the direction-number table (1..={MAX_DIMENSION})"
        )));
    }
    match generator {
        PointGenerator::PlainMonteCarlo => {
            let mut rng = seed_stream(seed, 0x706c61696e, 0);
            let points = (0..n * d).map(|_| clamp_unit(rng.random::<f64>())).collect();
            Ok(RqmcPointSet {
                points,
                n,
                d,
                generator,
                seed,
                ints: None,
                shifts: Vec::new(),
            })
        }
        PointGenerator::SobolDigitalShift => {
            let mut rng = seed_stream(seed, 0x736f626f6c, 0);
            let shifts: Vec<u32> = (0..d).map(|_| rng.random::<u32>()).collect();
            let dirs: Vec<Vec<u32>> = (0..d).map(direction_integers).collect();
            let mut state = vec![0u32; d];
            let mut ints = Vec::with_capacity(n * d);
            let mut points = Vec::with_capacity(n * d);
            for i in 0..n {
                if i > 0 {
                    // Gray-code step: flip by the direction of the lowest
                    // zero bit of i-1.
                    let c = (i as u32 - 1).trailing_ones() as usize + 1;
                    for (dim, s) in state.iter_mut().enumerate() {
                        *s ^= dirs[dim][c];
                    }
                }
                for dim in 0..d {
                    ints.push(state[dim]);
                    points.push(clamp_unit(f64::from(state[dim] ^ shifts[dim]) * SCALE));
                }
            }
            Ok(RqmcPointSet {
                points,
                n,
                d,
                generator,
                seed,
                ints: Some(ints),
                shifts,
            })
        }
    }
}

/// Next power of two at or above `n` (point-set sizing rule).
pub fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Ratio `Var_RQMC / Var_MC` of the sample-mean estimator of
/// `int f(u) du` over independently randomized replications.
///
/// Degenerate 0/0 cases (constant integrands) are defined as 1.
pub fn variance_ratio<F>(estimand: F, n: usize, d: usize, replications: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut means_rqmc = Vec::with_capacity(replications);
    let mut means_mc = Vec::with_capacity(replications);
    for r in 0..replications {
        let rep_seed = mix(seed.wrapping_add(r as u64));
        let qmc = generate(n, d, PointGenerator::SobolDigitalShift, rep_seed)?;
        means_rqmc.push(qmc.rows().map(&estimand).sum::<f64>() / n as f64);
        let mc = generate(n, d, PointGenerator::PlainMonteCarlo, rep_seed)?;
        means_mc.push(mc.rows().map(&estimand).sum::<f64>() / n as f64);
    }
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (vq, vm) = (var(&means_rqmc), var(&means_mc));
    if vq == 0.0 && vm == 0.0 {
        return Ok(1.0);
    }
    Ok(vq / vm)
}
