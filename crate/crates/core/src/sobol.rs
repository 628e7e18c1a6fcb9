//! Unscrambled Sobol sequence with Joe-Kuo direction numbers, optionally
//! randomized by a per-dimension digital shift.
//!
//! The all-zero first point is skipped, so a 1-D sequence starts
//! 0.5, 0.75, 0.25, ...

use rand::Rng;
use thiserror::Error;

const BITS: usize = 32;

/// Primitive polynomial (with leading and trailing terms) and initial
/// direction numbers for dimensions 2.. (dimension 1 is van der Corput).
const DIRECTIONS: &[(u32, &[u32])] = &[
    (3, &[1]),
    (7, &[1, 3]),
    (11, &[1, 3, 1]),
    (13, &[1, 1, 1]),
    (19, &[1, 1, 3, 3]),
    (25, &[1, 3, 5, 13]),
    (37, &[1, 1, 5, 5, 17]),
    (41, &[1, 1, 5, 5, 5]),
    (47, &[1, 1, 7, 11, 19]),
    (55, &[1, 1, 5, 1, 1]),
    (59, &[1, 1, 1, 3, 11]),
    (61, &[1, 3, 5, 5, 31]),
    (67, &[1, 3, 3, 9, 7, 49]),
    (91, &[1, 1, 1, 15, 21, 21]),
    (97, &[1, 3, 1, 13, 27, 49]),
    (103, &[1, 1, 1, 15, 7, 5]),
    (109, &[1, 3, 1, 15, 13, 25]),
    (115, &[1, 1, 5, 5, 19, 61]),
    (131, &[1, 3, 7, 11, 23, 15, 103]),
    (137, &[1, 3, 7, 13, 13, 15, 69]),
    (143, &[1, 1, 3, 13, 7, 35, 63]),
    (145, &[1, 3, 5, 9, 1, 25, 53]),
    (157, &[1, 3, 1, 13, 9, 35, 107]),
    (167, &[1, 3, 1, 5, 27, 61, 31]),
    (171, &[1, 1, 5, 11, 19, 41, 61]),
    (185, &[1, 3, 5, 3, 3, 13, 69]),
    (191, &[1, 1, 7, 13, 1, 19, 1]),
    (193, &[1, 3, 7, 5, 13, 19, 59]),
    (203, &[1, 1, 3, 9, 25, 29, 41]),
    (211, &[1, 3, 5, 13, 23, 1, 55]),
    (213, &[1, 3, 7, 3, 13, 59, 17]),
    (229, &[1, 3, 1, 3, 5, 53, 69]),
    (239, &[1, 1, 5, 5, 23, 33, 13]),
    (241, &[1, 1, 7, 7, 1, 61, 123]),
    (247, &[1, 1, 7, 9, 13, 61, 49]),
    (253, &[1, 3, 3, 5, 3, 55, 33]),
    (285, &[1, 3, 1, 15, 31, 13, 49, 245]),
    (299, &[1, 3, 5, 15, 31, 59, 63, 97]),
    (301, &[1, 3, 1, 11, 11, 11, 77, 249]),
];

/// Largest supported dimensionality.
pub const MAX_DIMS: usize = DIRECTIONS.len() + 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SobolError {
    #[error("{requested} dimensions requested but the direction table holds {max}")]
    TooManyDimensions { requested: usize, max: usize },
    #[error("a Sobol sequence needs at least one dimension")]
    ZeroDimensions,
}

#[derive(Debug, Clone)]
pub struct Sobol {
    directions: Vec<[u32; BITS]>,
    shift: Vec<u32>,
    state: Vec<u32>,
    index: u64,
}

impl Sobol {
    pub fn new(dims: usize) -> Result<Self, SobolError> {
        if dims == 0 {
            return Err(SobolError::ZeroDimensions);
        }
        if dims > MAX_DIMS {
            return Err(SobolError::TooManyDimensions { requested: dims, max: MAX_DIMS });
        }
        let mut directions = Vec::with_capacity(dims);
        let mut first = [0u32; BITS];
        for (k, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - k);
        }
        directions.push(first);
        for &(poly, init) in DIRECTIONS.iter().take(dims - 1) {
            directions.push(direction_numbers(poly, init));
        }
        Ok(Sobol { directions, shift: vec![0; dims], state: vec![0; dims], index: 0 })
    }

    /// Same sequence XORed with one random 32-bit word per dimension.
    /// Keeps the net structure while decorrelating independent runs.
    pub fn shifted<R: Rng + ?Sized>(dims: usize, rng: &mut R) -> Result<Self, SobolError> {
        let mut s = Sobol::new(dims)?;
        for w in &mut s.shift {
            *w = rng.random();
        }
        Ok(s)
    }

    pub fn dims(&self) -> usize {
        self.directions.len()
    }

    /// Next point in `[0, 1)^dims`.
    pub fn next_point(&mut self) -> Vec<f64> {
        // Gray-code order: flip the direction number of the lowest zero bit
        let c = self.index.trailing_ones() as usize;
        self.index += 1;
        let scale = 1.0 / (1u64 << BITS) as f64;
        self.state
            .iter_mut()
            .zip(&self.directions)
            .zip(&self.shift)
            .map(|((x, v), s)| {
                *x ^= v[c.min(BITS - 1)];
                f64::from(*x ^ s) * scale
            })
            .collect()
    }

    pub fn take_points(&mut self, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| self.next_point()).collect()
    }
}

fn direction_numbers(poly: u32, init: &[u32]) -> [u32; BITS] {
    let degree = (31 - poly.leading_zeros()) as usize;
    let mut m = [0u32; BITS];
    m[..degree].copy_from_slice(&init[..degree]);
    for k in degree..BITS {
        let mut value = m[k - degree] ^ (m[k - degree] << degree);
        for i in 1..degree {
            if (poly >> (degree - i)) & 1 == 1 {
                value ^= m[k - i] << i;
            }
        }
        m[k] = value;
    }
    let mut v = [0u32; BITS];
    for k in 0..BITS {
        v[k] = m[k] << (BITS - 1 - k);
    }
    v
}
