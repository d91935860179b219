use ndarray::{Array2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// Named, ordered parameter matrices of one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }
}

/// Xavier-uniform initialization.
pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-a..a))
}

pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-scale..scale))
}

/// Gradient buffers shaped like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(Vec<Matrix>);

impl Grads {
    pub fn zeros(store: &ParamStore) -> Self {
        Self(store.values.iter().map(|m| Matrix::zeros(m.raw_dim())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.0[id.0]
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for a in &mut self.0 {
            a.mapv_inplace(|x| x * c);
        }
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|m| m.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales to global L2 norm `max_norm` when larger. Returns the
    /// pre-clipping norm.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let n = self.norm();
        if n > max_norm {
            self.scale(max_norm / n);
        }
        n
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|m| m.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Minimizes: parameters move against `grads`.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub(crate) t: u64,
    pub(crate) m: Vec<Matrix>,
    pub(crate) v: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store.values.iter().map(|m| Matrix::zeros(m.raw_dim())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in store
            .values
            .iter_mut()
            .zip(&grads.0)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut s = ParamStore::new();
        s.add("w", array![[3.0, 4.0]]);
        let mut g = Grads::zeros(&s);
        *g.get_mut(ParamId(0)) = array![[3.0, 4.0]];
        assert_eq!(g.clip_norm(1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
        assert_eq!(g.clip_norm(2.0), g.norm());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut s = ParamStore::new();
        let id = s.add("x", array![[5.0, -3.0]]);
        let mut opt = Adam::new(AdamConfig::with_lr(0.1), &s);
        for _ in 0..500 {
            let mut g = Grads::zeros(&s);
            *g.get_mut(id) = s.get(id).mapv(|x| 2.0 * x);
            opt.step(&mut s, &g);
        }
        assert!(s.get(id).iter().all(|x| x.abs() < 1e-2));
    }
}
