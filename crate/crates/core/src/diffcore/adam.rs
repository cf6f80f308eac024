use std::collections::HashMap;

use ndarray::{Array2, Zip};

use super::{DiffError, NamedGradients, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam. Moment buffers are keyed by parameter name and
/// created lazily as zeros.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    moments: HashMap<String, (Array2<f64>, Array2<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Array2<f64>> {
        self.moments.get(name).map(|m| &m.0)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Array2<f64>> {
        self.moments.get(name).map(|m| &m.1)
    }

    /// One Adam step over every parameter of `params` that has a gradient.
    /// Nothing is modified if any gradient is non-finite.
    pub fn update(
        &mut self,
        params: &mut dyn Parameterized,
        grads: &NamedGradients,
    ) -> Result<(), DiffError> {
        for (name, g) in &grads.0 {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(DiffError::NonFiniteGradient(name.clone()));
            }
        }
        self.step_count += 1;
        let AdamConfig {
            alpha,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let moments = &mut self.moments;
        params.visit_params_mut(&mut |name, p| {
            let Some(g) = grads.get(name) else { return };
            let (m, v) = moments
                .entry(name.to_string())
                .or_insert_with(|| (Array2::zeros(p.raw_dim()), Array2::zeros(p.raw_dim())));
            Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= alpha * mh / (vh.sqrt() + epsilon);
                });
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    struct One(Array2<f64>);

    impl Parameterized for One {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Array2<f64>)) {
            f("x", &self.0)
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array2<f64>)) {
            f("x", &mut self.0)
        }
    }

    fn grads(g: Array2<f64>) -> NamedGradients {
        NamedGradients([("x".to_string(), g)].into_iter().collect())
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = One(array![[1.5, -2.0]]);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.update(&mut p, &grads(array![[0.0, 0.0]])).unwrap();
        assert_eq!(p.0, array![[1.5, -2.0]]);
        assert!(adam.first_moment("x").unwrap().iter().all(|&m| m == 0.0));
        assert!(adam.second_moment("x").unwrap().iter().all(|&m| m == 0.0));
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_alpha_against_sign() {
        for g in [3.0, -0.2, 1e-3] {
            let mut p = One(array![[0.0]]);
            let mut adam = AdamState::new(AdamConfig::default());
            adam.update(&mut p, &grads(array![[g]])).unwrap();
            let expected = -1e-2 * g.signum();
            assert!((p.0[[0, 0]] - expected).abs() < 1e-6, "g={g}: {}", p.0[[0, 0]]);
        }
    }

    #[test]
    fn two_unit_steps() {
        let mut p = One(array![[0.0]]);
        let mut adam = AdamState::new(AdamConfig::with_alpha(0.01));
        adam.update(&mut p, &grads(array![[1.0]])).unwrap();
        adam.update(&mut p, &grads(array![[1.0]])).unwrap();
        let moved = p.0[[0, 0]];
        assert!((-0.021..=-0.019).contains(&moved), "{moved}");
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = One(array![[0.3, 7.0]]);
        let mut adam = AdamState::new(AdamConfig::with_alpha(0.0));
        for _ in 0..5 {
            adam.update(&mut p, &grads(array![[1.0, -4.0]])).unwrap();
        }
        assert_eq!(p.0, array![[0.3, 7.0]]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut p = One(array![[0.3]]);
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.update(&mut p, &grads(array![[f64::NAN]])).unwrap_err();
        assert!(matches!(err, DiffError::NonFiniteGradient(_)));
        assert_eq!(adam.step_count, 0);
        assert_eq!(p.0, array![[0.3]]);
    }
}
