//! Fundus-like grayscale rendering.
//!
//! A bright disc on a dark background with a darker concentric cup. Edges are
//! soft so every pixel responds strictly to radius changes, which keeps mean
//! intensity strictly monotone in the cup-to-disc ratio.

use super::sample::{DiscSize, GlaucomaSample};

const BACKGROUND: f64 = 0.15;
const RIM: f64 = 0.85;
const PALE_RIM: f64 = 0.7;
const CUP: f64 = 0.45;
const EDGE: f64 = 0.5;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fraction of a disc of radius `r` covering a pixel at distance `d`:
/// 0 when `r = 0`, tends to 1 as `r` grows, strictly increasing in `r`.
fn coverage(r: f64, d: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let base = sigmoid(-d / EDGE);
    (sigmoid((r - d) / EDGE) - base) / (1.0 - base)
}

pub fn disc_radius(size: DiscSize, side: usize) -> f64 {
    let frac = match size {
        DiscSize::Small => 0.2,
        DiscSize::Medium => 0.28,
        DiscSize::Large => 0.36,
    };
    frac * side as f64
}

/// Row-major `side x side` grid in `[0, 1]`.
pub fn render_fundus(s: &GlaucomaSample, side: usize) -> Vec<f64> {
    let rd = disc_radius(s.optic_disc_size, side);
    let rc = rd * s.cup_to_disc_ratio;
    let rim = if s.rim_pallor { PALE_RIM } else { RIM };
    let c = side as f64 / 2.0;
    let mut img = Vec::with_capacity(side * side);
    for y in 0..side {
        for x in 0..side {
            let d = ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt();
            let disc = coverage(rd, d);
            let cup = coverage(rc, d);
            img.push(BACKGROUND + disc * (rim - BACKGROUND) + cup * (CUP - rim));
        }
    }
    img
}
