#![allow(dead_code)]

use mgspde::geometry::*;
use mgspde::metric_graph::{GraphSpace, GraphWeight};
use mgspde::noise::*;
use mgspde::spde::*;

pub fn rect() -> NarrowShape {
    NarrowShape::Rectangle { a: 0.0, b: 1.0, half_width: 0.5 }
}

pub fn narrow(shape: &NarrowShape, cells: usize) -> Geometry {
    Geometry::Narrow(narrow_shape_geometry(shape, cells).unwrap())
}

pub fn basis(shape: &NarrowShape, geo: &Geometry, modes: usize) -> NoiseBasis {
    let mut b = build_spectral_basis_narrow(shape, modes, 1.0).unwrap();
    project_basis(&mut b, geo).unwrap();
    b
}

/// Basis with one mode equal to `q` on the whole graph.
pub fn constant_basis(space: &GraphSpace<f64>, q: f64) -> NoiseBasis {
    let mut b = NoiseBasis::new(vec![NoiseMode::new("one", q, |_| 1.0)]).unwrap();
    b.projected = vec![space.constant(q)];
    b
}

pub fn model(shape: &NarrowShape, cells: usize, modes: usize, reaction: ReactionSpec, dt: f64, horizon: f64) -> SpdeModel<f64> {
    let geo = narrow(shape, cells);
    let b = basis(shape, &geo, modes);
    SpdeModel::new(geo.space(), reaction, &b, GraphWeight::unit(), dt, 0.5, horizon).unwrap()
}

pub fn rect_model(reaction: ReactionSpec, dt: f64, horizon: f64) -> SpdeModel<f64> {
    model(&rect(), 32, 4, reaction, dt, horizon)
}

pub fn bump(space: &GraphSpace<f64>) -> Vec<f64> {
    space.function(|z, _| (-(z - 0.4).powi(2) / 0.05).exp()).values
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}
