//! Small procedural classification sets held fully in memory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{InputShape, ProblemShape};

/// Row-major features with integer labels, split into train and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub input: InputShape,
    pub classes: u32,
    pub train_x: Vec<f32>,
    pub train_y: Vec<u32>,
    pub val_x: Vec<f32>,
    pub val_y: Vec<u32>,
}

impl Dataset {
    pub fn features(&self) -> usize {
        self.input.flat_len() as usize
    }

    pub fn shape(&self) -> ProblemShape {
        ProblemShape { input: self.input, classes: self.classes }
    }

    pub fn train_len(&self) -> usize {
        self.train_y.len()
    }

    pub fn val_len(&self) -> usize {
        self.val_y.len()
    }

    pub fn by_name(name: &str, seed: u64) -> Option<Dataset> {
        match name {
            "digits" => Some(digits(1500, 500, seed)),
            "blobs" => Some(blobs(3, 8, 600, 300, seed)),
            _ => None,
        }
    }
}

/// 5x7 bitmap glyphs for the digits 0-9, one row per byte (low 5 bits).
const GLYPHS: [[u8; 7]; 10] = [
    [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110],
    [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110],
    [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111],
    [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110],
    [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010],
    [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110],
    [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110],
    [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000],
    [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110],
    [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100],
];

fn render_digit(label: usize, rng: &mut ChaCha8Rng, noise: &Normal<f32>) -> [f32; 64] {
    let mut img = [0f32; 64];
    let dx = rng.random_range(0..=3usize);
    let dy = rng.random_range(0..=1usize);
    let ink = rng.random_range(0.6f32..1.0);
    let bleed = rng.random_range(0.0f32..0.4);
    for (r, row) in GLYPHS[label].iter().enumerate() {
        for c in 0..5 {
            if row >> (4 - c) & 1 == 1 && rng.random::<f32>() > 0.08 {
                let (y, x) = (r + dy, c + dx);
                img[y * 8 + x] = img[y * 8 + x].max(ink);
                if x + 1 < 8 {
                    img[y * 8 + x + 1] = img[y * 8 + x + 1].max(ink * bleed);
                }
            }
        }
    }
    for p in &mut img {
        *p += noise.sample(rng);
    }
    img
}

/// 8x8 grey-level digits: shifted, thickened and noisy renderings of ten
/// glyphs, balanced across classes.
pub fn digits(train: usize, val: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0f32, 0.25).expect("valid normal");
    let sample = |n: usize, rng: &mut ChaCha8Rng| {
        let mut x = Vec::with_capacity(n * 64);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % 10;
            x.extend_from_slice(&render_digit(label, rng, &noise));
            y.push(label as u32);
        }
        (x, y)
    };
    let (train_x, train_y) = sample(train, &mut rng);
    let (val_x, val_y) = sample(val, &mut rng);
    Dataset {
        name: "digits".into(),
        input: InputShape::Image { height: 8, width: 8, channels: 1 },
        classes: 10,
        train_x,
        train_y,
        val_x,
        val_y,
    }
}

/// Isotropic unit-variance Gaussian clusters with well separated centres.
pub fn blobs(classes: u32, features: u32, train: usize, val: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = features as usize;
    let centres: Vec<Vec<f32>> =
        (0..classes).map(|_| (0..d).map(|_| rng.random_range(-4.0f32..4.0)).collect()).collect();
    let unit = Normal::new(0.0f32, 1.0).expect("valid normal");
    let sample = |n: usize, rng: &mut ChaCha8Rng| {
        let mut x = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = i % classes as usize;
            x.extend(centres[label].iter().map(|c| c + unit.sample(rng)));
            y.push(label as u32);
        }
        (x, y)
    };
    let (train_x, train_y) = sample(train, &mut rng);
    let (val_x, val_y) = sample(val, &mut rng);
    Dataset { name: "blobs".into(), input: InputShape::Flat { features }, classes, train_x, train_y, val_x, val_y }
}
