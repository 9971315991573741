//! Empirical injectivity of `x -> |A^* x|^2` over small finite signal spaces.
//!
//! Signals are enumerated up to the trivial ambiguity (global sign for real
//! frames, a unit phase for complex ones) and their intensity vectors are
//! compared pairwise in the sup norm.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use speckle_core::medium::gen_transmission_matrix;
use speckle_core::{rng, Complex64};

use crate::error::{HarnessError, Result};

/// Enumeration stops above this many classes.
pub const MAX_CLASSES: u128 = 1_000_000;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Real,
    Complex,
}

impl FromStr for Field {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "real" => Ok(Field::Real),
            "complex" => Ok(Field::Complex),
            other => Err(format!("unknown field `{other}` (real or complex)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalSpace {
    /// `{0,1}^n`, amplitude-modulator images.
    Binary,
    /// `{-1,1}^n`, phase-modulator images.
    Signs,
    /// `{1,i,-1,-i}^n`; complex field only.
    Qpsk,
    /// The single signal `0`.
    Zero,
}

impl FromStr for SignalSpace {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary" => Ok(SignalSpace::Binary),
            "signs" => Ok(SignalSpace::Signs),
            "qpsk" => Ok(SignalSpace::Qpsk),
            "zero" => Ok(SignalSpace::Zero),
            other => Err(format!("unknown signal space `{other}` (binary, signs, qpsk or zero)")),
        }
    }
}

impl fmt::Display for SignalSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalSpace::Binary => "{0,1}^n",
            SignalSpace::Signs => "{-1,1}^n",
            SignalSpace::Qpsk => "{1,i,-1,-i}^n",
            SignalSpace::Zero => "{0}",
        })
    }
}

impl SignalSpace {
    fn alphabet(self) -> Vec<Complex64> {
        let c = Complex64::new;
        match self {
            SignalSpace::Binary => vec![c(0.0, 0.0), c(1.0, 0.0)],
            SignalSpace::Signs => vec![c(-1.0, 0.0), c(1.0, 0.0)],
            SignalSpace::Qpsk => vec![c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)],
            SignalSpace::Zero => vec![c(0.0, 0.0)],
        }
    }

    /// Number of classes after the quotient by the trivial ambiguity.
    pub fn class_count(self, n: usize) -> u128 {
        let pow = |base: u128, e: usize| base.checked_pow(e as u32).unwrap_or(u128::MAX);
        match self {
            SignalSpace::Binary => pow(2, n),
            SignalSpace::Signs => pow(2, n.saturating_sub(1)),
            SignalSpace::Qpsk => pow(4, n.saturating_sub(1)),
            SignalSpace::Zero => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectivityReport {
    pub n: usize,
    pub m: usize,
    pub field: Field,
    pub space: String,
    pub seed: u64,
    pub tolerance: f64,
    pub classes: usize,
    pub colliding_pairs: u64,
    /// Smallest sup-norm distance between two classes' intensities; `None`
    /// with a single class.
    pub min_gap: Option<f64>,
}

impl InjectivityReport {
    pub fn injective(&self) -> bool {
        self.colliding_pairs == 0
    }
}

/// Generic frame, `n x m`, stored column by column. Frames sharing a seed
/// are nested: the first `m` columns do not depend on the total width.
pub fn generic_frame(n: usize, m: usize, field: Field, seed: u64) -> Result<Vec<Vec<Complex64>>> {
    match field {
        Field::Real => {
            let mut r = rng::seeded(seed);
            Ok((0..m)
                .map(|_| (0..n).map(|_| Complex64::new(rng::normal(&mut r), 0.0)).collect())
                .collect())
        }
        Field::Complex => {
            let a = gen_transmission_matrix(n, m, seed)?;
            Ok((0..m).map(|j| a.column(j).iter().copied().collect()).collect())
        }
    }
}

/// Representative of `x`'s class: the first nonzero coordinate is made
/// positive (real) or real positive (complex).
pub fn canonicalize(x: &[Complex64], field: Field) -> Vec<Complex64> {
    let Some(first) = x.iter().find(|z| z.norm_sqr() > 0.0) else {
        return x.to_vec();
    };
    let unit = match field {
        Field::Real => Complex64::new(first.re.signum(), 0.0),
        Field::Complex => first / first.norm(),
    };
    let fix = unit.conj();
    x.iter()
        .map(|z| {
            let w = z * fix;
            // keep exact alphabet values exact
            Complex64::new(round_tiny(w.re), round_tiny(w.im))
        })
        .collect()
}

fn round_tiny(v: f64) -> f64 {
    if v.abs() < 1e-15 {
        0.0
    } else {
        v
    }
}

/// All class representatives of `space` in dimension `n`.
pub fn enumerate_classes(n: usize, field: Field, space: SignalSpace) -> Result<Vec<Vec<Complex64>>> {
    if n == 0 {
        return Err(HarnessError::Invalid("n must be positive".into()));
    }
    if field == Field::Real && space == SignalSpace::Qpsk {
        return Err(HarnessError::Invalid("the qpsk space needs the complex field".into()));
    }
    let count = space.class_count(n);
    if count > MAX_CLASSES {
        return Err(HarnessError::SpaceTooLarge(count));
    }
    let alphabet = space.alphabet();
    let s = alphabet.len();
    let raw = (s as u128).pow(n as u32);
    let mut classes = Vec::with_capacity(count as usize);
    let mut digits = vec![0usize; n];
    for _ in 0..raw {
        let x: Vec<Complex64> = digits.iter().map(|&d| alphabet[d]).collect();
        if canonicalize(&x, field) == x {
            classes.push(x);
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < s {
                break;
            }
            *d = 0;
        }
    }
    debug_assert_eq!(classes.len() as u128, count);
    Ok(classes)
}

fn intensities(frame: &[Vec<Complex64>], x: &[Complex64]) -> Vec<f64> {
    frame
        .iter()
        .map(|a| a.iter().zip(x).map(|(ai, xi)| ai.conj() * xi).sum::<Complex64>().norm_sqr())
        .collect()
}

fn sup_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Colliding pairs (sup distance at most `tol`) and the minimum sup distance.
///
/// Rows are sorted by their first coordinate; a pair can only be within `d`
/// in sup norm if it is within `d` there, which bounds each scan.
pub fn collisions(rows: &[Vec<f64>], tol: f64) -> (u64, Option<f64>) {
    if rows.len() < 2 {
        return (0, None);
    }
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| rows[i][0].total_cmp(&rows[j][0]));
    let mut pairs = 0u64;
    let mut best = f64::INFINITY;
    for (p, &i) in order.iter().enumerate() {
        for &j in &order[p + 1..] {
            let lead = rows[j][0] - rows[i][0];
            if lead > tol && lead >= best {
                break;
            }
            let d = sup_dist(&rows[i], &rows[j]);
            if d <= tol {
                pairs += 1;
            }
            best = best.min(d);
        }
    }
    (pairs, Some(best))
}

/// Draws a generic frame and checks every pair of signal classes.
pub fn empirical_injectivity(
    n: usize,
    m: usize,
    field: Field,
    space: SignalSpace,
    seed: u64,
    tolerance: f64,
) -> Result<InjectivityReport> {
    if m == 0 {
        return Err(HarnessError::Invalid("m must be positive".into()));
    }
    if !(tolerance >= 0.0) {
        return Err(HarnessError::Invalid(format!("tolerance {tolerance} must be non-negative")));
    }
    let classes = enumerate_classes(n, field, space)?;
    let frame = generic_frame(n, m, field, seed)?;
    let rows: Vec<Vec<f64>> = classes.par_iter().map(|x| intensities(&frame, x)).collect();
    let (colliding_pairs, min_gap) = collisions(&rows, tolerance);
    Ok(InjectivityReport {
        n,
        m,
        field,
        space: space.to_string(),
        seed,
        tolerance,
        classes: classes.len(),
        colliding_pairs,
        min_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(rows: &[Vec<f64>], tol: f64) -> (u64, Option<f64>) {
        let mut pairs = 0;
        let mut best: Option<f64> = None;
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let d = sup_dist(&rows[i], &rows[j]);
                pairs += (d <= tol) as u64;
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        (pairs, best)
    }

    #[test]
    fn sorted_sweep_matches_brute_force() {
        let mut r = rng::seeded(3);
        for m in 1..4 {
            // coarse grid so exact and near collisions both occur
            let rows: Vec<Vec<f64>> = (0..60)
                .map(|_| (0..m).map(|_| (rng::normal(&mut r) * 3.0).round() / 4.0).collect())
                .collect();
            for tol in [0.0, 0.1, 0.3] {
                assert_eq!(collisions(&rows, tol), brute(&rows, tol));
            }
        }
    }

    #[test]
    fn class_counts() {
        assert_eq!(enumerate_classes(3, Field::Real, SignalSpace::Binary).unwrap().len(), 8);
        assert_eq!(enumerate_classes(4, Field::Real, SignalSpace::Signs).unwrap().len(), 8);
        assert_eq!(enumerate_classes(3, Field::Complex, SignalSpace::Signs).unwrap().len(), 4);
        assert_eq!(enumerate_classes(3, Field::Complex, SignalSpace::Qpsk).unwrap().len(), 16);
        assert_eq!(enumerate_classes(5, Field::Complex, SignalSpace::Zero).unwrap().len(), 1);
        assert!(enumerate_classes(2, Field::Real, SignalSpace::Qpsk).is_err());
        assert!(matches!(
            enumerate_classes(25, Field::Real, SignalSpace::Binary),
            Err(HarnessError::SpaceTooLarge(c)) if c == 1 << 25
        ));
    }

    #[test]
    fn canonical_forms_are_phase_free() {
        let x = vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, -2.0), Complex64::new(1.0, 1.0)];
        let c = canonicalize(&x, Field::Complex);
        assert_eq!(c[0], Complex64::new(0.0, 0.0));
        assert_eq!(c[1], Complex64::new(2.0, 0.0));
        let rot = Complex64::from_polar(1.0, 0.7);
        let y: Vec<_> = x.iter().map(|z| z * rot).collect();
        for (a, b) in canonicalize(&y, Field::Complex).iter().zip(&c) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn frames_are_nested() {
        for field in [Field::Real, Field::Complex] {
            let small = generic_frame(3, 4, field, 11).unwrap();
            let big = generic_frame(3, 9, field, 11).unwrap();
            assert_eq!(&big[..4], &small[..]);
        }
    }

    #[test]
    fn zero_space_is_trivially_injective() {
        for (n, m) in [(1, 1), (4, 2), (6, 11)] {
            let r = empirical_injectivity(n, m, Field::Complex, SignalSpace::Zero, 1, DEFAULT_TOLERANCE).unwrap();
            assert_eq!((r.classes, r.colliding_pairs, r.min_gap), (1, 0, None));
        }
    }

    #[test]
    fn binary_three_by_five_is_injective() {
        for seed in 0..10 {
            let r = empirical_injectivity(3, 5, Field::Real, SignalSpace::Binary, seed, DEFAULT_TOLERANCE).unwrap();
            assert_eq!(r.classes, 8);
            assert_eq!(r.colliding_pairs, 0);
            assert!(r.min_gap.unwrap() > DEFAULT_TOLERANCE);
        }
    }

    #[test]
    fn collision_count_agrees_with_gap() {
        for (n, m, space) in [(2, 1, SignalSpace::Signs), (4, 2, SignalSpace::Binary), (12, 1, SignalSpace::Signs)] {
            for tol in [0.0, 1e-6, 1e-2] {
                let r = empirical_injectivity(n, m, Field::Real, space, 5, tol).unwrap();
                assert_eq!(r.injective(), r.min_gap.unwrap() > tol, "{r:?}");
            }
        }
    }
}
