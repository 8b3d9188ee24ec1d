//! Target equations over Z_q and their inversion.
//!
//! Each subchannel delivers one modulo-q linear combination
//! u = sum_k a_k w_k of the participating streams' messages. A layer is
//! useful only if the stacked combinations determine every message, so this
//! module assembles the rows into an [`EquationSystem`], certifies
//! invertibility (full column rank over Z_q), extracts the successive-
//! cancellation order where one exists, and solves for the messages.
//!
//! Two recovery styles cover the two constructions. The two-user chain is
//! solvable by peeling: receiver 1's singleton row yields the last stream
//! directly, after which the receivers' rows alternate in handing over
//! exactly one new stream each. The general construction has no such
//! triangular structure, so rank and solving go through plain Gaussian
//! elimination; invertibility is asserted per instance rather than proved.
//!
//! The modulus is a runtime choice: the smallest prime exceeding twice the
//! largest integer coefficient, which keeps every reduced coefficient
//! nonzero (a policy, not a value dictated by the construction).

use crate::aligner::SubchannelSpec;
use crate::error::Error;
use crate::Result;

/// One decoded combination: the coefficient vector is indexed by the
/// system's stream list.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct EquationRow {
    pub receiver: usize,
    /// Subchannel id (the filter's Fourier power).
    pub subchannel: u64,
    pub coefficients: Vec<u64>,
}

/// Stacked target equations over Z_q.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct EquationSystem {
    pub q: u64,
    /// Column labels: (transmitter, vector id), sorted.
    pub streams: Vec<(usize, usize)>,
    pub rows: Vec<EquationRow>,
}

/// Outcome of the rank check.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct InvertibilityReport {
    pub invertible: bool,
    /// Streams in the order they become known (indices into `streams`).
    /// For the two-user chain this is the alternating successive-
    /// cancellation order; otherwise it is the elimination pivot order.
    pub recovery_order: Vec<usize>,
    /// Whether peeling alone (rows with a single unknown) solved the
    /// system, i.e. the chain structure is present.
    pub by_successive_cancellation: bool,
}

pub fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((u128::from(a) * u128::from(b)) % u128::from(q)) as u64
}

pub fn pow_mod(mut b: u64, mut e: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    b %= q;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, b, q);
        }
        b = mul_mod(b, b, q);
        e >>= 1;
    }
    acc
}

/// Inverse mod prime q by Fermat.
pub fn inv_mod(a: u64, q: u64) -> u64 {
    debug_assert!(a % q != 0);
    pow_mod(a, q - 2, q)
}

/// Deterministic Miller-Rabin for u64.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0u32;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in [2u64, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37] {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime strictly greater than x.
pub fn smallest_prime_above(x: u64) -> u64 {
    let mut n = x.max(1) + 1;
    while !is_prime(n) {
        n += 1;
    }
    n
}

/// The runtime modulus policy: smallest prime exceeding 2 max |a_k|.
pub fn modulus_for(subchannels: &[SubchannelSpec]) -> u64 {
    let max_a = subchannels
        .iter()
        .flat_map(|s| s.coefficients.iter().map(|c| c.a))
        .max()
        .unwrap_or(1);
    smallest_prime_above(2 * max_a)
}

/// Stacks one row per subchannel, reducing the integer coefficients mod q.
pub fn target_equations(subchannels: &[SubchannelSpec], q: u64) -> Result<EquationSystem> {
    if !is_prime(q) {
        return Err(Error::InvalidConfig(format!("modulus {q} is not prime")));
    }
    let mut streams: Vec<(usize, usize)> = subchannels
        .iter()
        .flat_map(|s| s.coefficients.iter().map(|c| (c.owner, c.vector)))
        .collect();
    streams.sort_unstable();
    streams.dedup();
    let col_of = |key: (usize, usize)| streams.binary_search(&key).expect("stream present");

    let mut rows = Vec::with_capacity(subchannels.len());
    for s in subchannels {
        let mut coefficients = vec![0u64; streams.len()];
        for c in &s.coefficients {
            if c.a % q == 0 {
                return Err(Error::ModulusTooSmall { q, needed: 2 * c.a });
            }
            coefficients[col_of((c.owner, c.vector))] = c.a % q;
        }
        rows.push(EquationRow { receiver: s.receiver, subchannel: s.filter_power, coefficients });
    }
    Ok(EquationSystem { q, streams, rows })
}

/// Peels rows that contain exactly one unresolved stream, in rounds.
/// Returns the order in which streams were resolved.
fn peel_order(sys: &EquationSystem) -> Vec<usize> {
    let n = sys.streams.len();
    let mut known = vec![false; n];
    let mut used = vec![false; sys.rows.len()];
    let mut order = Vec::new();
    loop {
        let mut progressed = false;
        for (ridx, row) in sys.rows.iter().enumerate() {
            if used[ridx] {
                continue;
            }
            let unknowns: Vec<usize> = (0..n)
                .filter(|&c| row.coefficients[c] != 0 && !known[c])
                .collect();
            if unknowns.len() == 1 {
                known[unknowns[0]] = true;
                used[ridx] = true;
                order.push(unknowns[0]);
                progressed = true;
            }
        }
        if !progressed {
            return order;
        }
    }
}

/// Column rank over Z_q by Gaussian elimination; also returns the pivot
/// columns in elimination order.
fn rank_and_pivots(sys: &EquationSystem) -> (usize, Vec<usize>) {
    let q = sys.q;
    let n = sys.streams.len();
    let mut m: Vec<Vec<u64>> = sys.rows.iter().map(|r| r.coefficients.clone()).collect();
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        let Some(p) = (row..m.len()).find(|&r| m[r][col] != 0) else {
            continue;
        };
        m.swap(row, p);
        let inv = inv_mod(m[row][col], q);
        for c in col..n {
            m[row][c] = mul_mod(m[row][c], inv, q);
        }
        for r in 0..m.len() {
            if r != row && m[r][col] != 0 {
                let f = m[r][col];
                for c in col..n {
                    let sub = mul_mod(f, m[row][c], q);
                    m[r][c] = (m[r][c] + q - sub) % q;
                }
            }
        }
        pivots.push(col);
        row += 1;
        if row == m.len() {
            break;
        }
    }
    (pivots.len(), pivots)
}

/// Full-column-rank check plus an explicit recovery order: the successive-
/// cancellation (peeling) order when the system peels completely, the
/// elimination pivot order otherwise.
pub fn check_invertible(sys: &EquationSystem) -> InvertibilityReport {
    let n = sys.streams.len();
    let peeled = peel_order(sys);
    if peeled.len() == n {
        return InvertibilityReport {
            invertible: true,
            recovery_order: peeled,
            by_successive_cancellation: true,
        };
    }
    let (rank, pivots) = rank_and_pivots(sys);
    InvertibilityReport {
        invertible: rank == n,
        recovery_order: if rank == n { pivots } else { Vec::new() },
        by_successive_cancellation: false,
    }
}

/// Solves for all message vectors given the decoded value of every row.
/// `decoded[r]` is the length-kappa value vector of row r over Z_q.
/// Inconsistent (over-determined) values signal a decode-integrity error.
pub fn recover_messages(sys: &EquationSystem, decoded: &[Vec<u64>]) -> Result<Vec<Vec<u64>>> {
    let q = sys.q;
    let n = sys.streams.len();
    if decoded.len() != sys.rows.len() {
        return Err(Error::InvalidConfig(format!(
            "{} decoded values for {} rows",
            decoded.len(),
            sys.rows.len()
        )));
    }
    let kappa = decoded.first().map_or(0, Vec::len);
    if decoded.iter().any(|d| d.len() != kappa) {
        return Err(Error::InvalidConfig("ragged decoded value lengths".into()));
    }
    if decoded
        .iter()
        .flat_map(|d| d.iter())
        .any(|&v| v >= q)
    {
        return Err(Error::InvalidConfig("decoded value outside Z_q".into()));
    }

    // Augmented elimination on [A | decoded] across all kappa positions.
    let mut a: Vec<Vec<u64>> = sys.rows.iter().map(|r| r.coefficients.clone()).collect();
    let mut b: Vec<Vec<u64>> = decoded.to_vec();
    let mut pivot_of_col: Vec<Option<usize>> = vec![None; n];
    let mut row = 0;
    for col in 0..n {
        let Some(p) = (row..a.len()).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(row, p);
        b.swap(row, p);
        let inv = inv_mod(a[row][col], q);
        for c in 0..n {
            a[row][c] = mul_mod(a[row][c], inv, q);
        }
        for v in &mut b[row] {
            *v = mul_mod(*v, inv, q);
        }
        for r in 0..a.len() {
            if r != row && a[r][col] != 0 {
                let f = a[r][col];
                for c in 0..n {
                    let sub = mul_mod(f, a[row][c], q);
                    a[r][c] = (a[r][c] + q - sub) % q;
                }
                let row_b = b[row].clone();
                for (dst, src) in b[r].iter_mut().zip(row_b) {
                    let sub = mul_mod(f, src, q);
                    *dst = (*dst + q - sub) % q;
                }
            }
        }
        pivot_of_col[col] = Some(row);
        row += 1;
        if row == a.len() {
            break;
        }
    }

    if pivot_of_col.iter().any(Option::is_none) {
        return Err(Error::Domain("system is not invertible".into()));
    }
    // Every remaining row must have reduced to 0 = 0.
    for r in row..a.len() {
        if a[r].iter().any(|&x| x != 0) || b[r].iter().any(|&x| x != 0) {
            return Err(Error::DecodeIntegrity(format!(
                "row {r} is inconsistent with the recovered messages"
            )));
        }
    }
    Ok((0..n)
        .map(|col| b[pivot_of_col[col].unwrap()].clone())
        .collect())
}

/// Evaluates every row on the given messages (test/support helper; also the
/// relay-side definition of the function values).
pub fn evaluate_rows(sys: &EquationSystem, messages: &[Vec<u64>]) -> Result<Vec<Vec<u64>>> {
    let q = sys.q;
    if messages.len() != sys.streams.len() {
        return Err(Error::InvalidConfig(format!(
            "{} messages for {} streams",
            messages.len(),
            sys.streams.len()
        )));
    }
    let kappa = messages.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(sys.rows.len());
    for row in &sys.rows {
        let mut val = vec![0u64; kappa];
        for (col, &coef) in row.coefficients.iter().enumerate() {
            if coef != 0 {
                for (acc, &w) in val.iter_mut().zip(&messages[col]) {
                    *acc = (*acc + mul_mod(coef, w % q, q)) % q;
                }
            }
        }
        out.push(val);
    }
    Ok(out)
}
