use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

type Field = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Grad = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
type Hess = Arc<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>;

/// Stream function `𝓗` on the plane with derivatives and a search box.
#[derive(Clone)]
pub struct Hamiltonian {
    pub name: String,
    pub params: BTreeMap<String, f64>,
    value: Field,
    grad: Grad,
    hess: Hess,
    /// `[x_min, x_max, y_min, y_max]`.
    pub search_box: [f64; 4],
    /// Growth constants `(𝔞₁, 𝔞₂, 𝔞₃)` when known.
    pub growth: Option<[f64; 3]>,
}

impl fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Hamiltonian").field("name", &self.name).field("params", &self.params).field("search_box", &self.search_box).finish()
    }
}

impl Hamiltonian {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        grad: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
        hess: impl Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
        search_box: [f64; 4],
    ) -> Self {
        Self {
            name: name.into(),
            params: BTreeMap::new(),
            value: Arc::new(value),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            search_box,
            growth: None,
        }
    }

    #[inline]
    pub fn value(&self, x: [f64; 2]) -> f64 {
        (self.value)(x[0], x[1])
    }

    #[inline]
    pub fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        (self.grad)(x[0], x[1])
    }

    #[inline]
    pub fn hess(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        (self.hess)(x[0], x[1])
    }

    /// `𝓗(x) = ‖x‖²`.
    pub fn radial() -> Self {
        let mut h = Self::new("radial", |x, y| x * x + y * y, |x, y| [2.0 * x, 2.0 * y], |_, _| [[2.0, 0.0], [0.0, 2.0]], [-4.0, 4.0, -4.0, 4.0]);
        h.growth = Some([1.0, 1.0, 2.0]);
        h
    }

    /// `𝓗(x) = ‖x‖² + √(1+‖x‖²) − 1`.
    pub fn example2() -> Self {
        Self::new(
            "example2",
            |x, y| {
                let s = x * x + y * y;
                s + (1.0 + s).sqrt() - 1.0
            },
            |x, y| {
                let s = x * x + y * y;
                let f = 2.0 + 1.0 / (1.0 + s).sqrt();
                [f * x, f * y]
            },
            |x, y| {
                let s = x * x + y * y;
                let r = (1.0 + s).sqrt();
                let f = 2.0 + 1.0 / r;
                let d = -1.0 / (r * r * r);
                [[f + d * x * x, d * x * y], [d * x * y, f + d * y * y]]
            },
            [-4.0, 4.0, -4.0, 4.0],
        )
    }

    /// `𝓗(x) = (x₁² − 1)² + t·x₁ + c₀ + x₂²`, `c₀` normalizing the minimum to 0.
    pub fn double_well(tilt: f64) -> Self {
        let p = |x: f64| (x * x - 1.0).powi(2) + tilt * x;
        // global minimum of p: root of 4x³ − 4x + t near x = −1 (t > 0) or +1
        let mut x = if tilt >= 0.0 { -1.0 } else { 1.0 };
        for _ in 0..100 {
            let f = 4.0 * x * x * x - 4.0 * x + tilt;
            let df = 12.0 * x * x - 4.0;
            x -= f / df;
        }
        let c0 = -p(x);
        let mut h = Self::new(
            "double_well",
            move |x, y| (x * x - 1.0).powi(2) + tilt * x + c0 + y * y,
            move |x, y| [4.0 * x * (x * x - 1.0) + tilt, 2.0 * y],
            |x, _| [[12.0 * x * x - 4.0, 0.0], [0.0, 2.0]],
            [-2.5, 2.5, -2.5, 2.5],
        );
        h.params.insert("tilt".into(), tilt);
        h.params.insert("c0".into(), c0);
        h
    }

    /// Registry lookup by name with a parameter map.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let mut h = match name {
            "radial" => Self::radial(),
            "example2" => Self::example2(),
            "double_well" => Self::double_well(params.get("tilt").copied().unwrap_or(0.2)),
            other => return Err(Error::Config(format!("unknown hamiltonian '{other}' (known: {})", Self::registry().join(", ")))),
        };
        if let Some(&b) = params.get("box") {
            h.search_box = [-b, b, -b, b];
        }
        Ok(h)
    }

    pub fn registry() -> Vec<&'static str> {
        vec!["radial", "example2", "double_well"]
    }
}
