use super::cartpole::check_control;
use super::{check_state, solve_small, Dynamics, EnvError, EnvKind, GRAVITY};

/// Cart carrying a freely swinging double pendulum with point masses.
///
/// State is `[x, θ1, θ2, ẋ, θ̇1, θ̇2]` with both angles absolute and measured
/// from hanging down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartDoublePoleParams {
    pub length1: f64,
    pub length2: f64,
    pub mass1: f64,
    pub mass2: f64,
    pub cart_mass: f64,
    pub gravity: f64,
}

impl CartDoublePoleParams {
    pub fn new(length1: f64, length2: f64) -> Self {
        CartDoublePoleParams {
            length1,
            length2,
            mass1: 1.0,
            mass2: 1.0,
            cart_mass: 1.0,
            gravity: GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = [
            self.length1,
            self.length2,
            self.mass1,
            self.mass2,
            self.cart_mass,
            self.gravity,
        ]
        .iter()
        .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(EnvError::InvalidParams(format!("{self:?}")))
        }
    }

    fn mass_matrix(&self, t1: f64, t2: f64) -> [[f64; 3]; 3] {
        let (l1, l2, m1, m2, mc) = (self.length1, self.length2, self.mass1, self.mass2, self.cart_mass);
        let m01 = (m1 + m2) * l1 * t1.cos();
        let m02 = m2 * l2 * t2.cos();
        let m12 = m2 * l1 * l2 * (t1 - t2).cos();
        [
            [mc + m1 + m2, m01, m02],
            [m01, (m1 + m2) * l1 * l1, m12],
            [m02, m12, m2 * l2 * l2],
        ]
    }
}

impl Dynamics for CartDoublePoleParams {
    fn state_dim(&self) -> usize {
        6
    }

    fn derivative(&self, s: &[f64], u: f64) -> Result<Vec<f64>, EnvError> {
        check_state(s, 6)?;
        check_control(u, EnvKind::CartDoublePole)?;
        let (l1, l2, m1, m2, g) = (self.length1, self.length2, self.mass1, self.mass2, self.gravity);
        let (t1, t2, xd, w1, w2) = (s[1], s[2], s[3], s[4], s[5]);
        let d = (t1 - t2).sin();
        let b = [
            u + (m1 + m2) * l1 * t1.sin() * w1 * w1 + m2 * l2 * t2.sin() * w2 * w2,
            -m2 * l1 * l2 * d * w2 * w2 - (m1 + m2) * g * l1 * t1.sin(),
            m2 * l1 * l2 * d * w1 * w1 - m2 * g * l2 * t2.sin(),
        ];
        let [xdd, a1, a2] = solve_small(self.mass_matrix(t1, t2), b);
        Ok(vec![xd, w1, w2, xdd, a1, a2])
    }

    fn energy(&self, s: &[f64]) -> f64 {
        let (l1, l2, m1, m2, g) = (self.length1, self.length2, self.mass1, self.mass2, self.gravity);
        let (t1, t2) = (s[1], s[2]);
        let v = [s[3], s[4], s[5]];
        let m = self.mass_matrix(t1, t2);
        let mut kinetic = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                kinetic += 0.5 * v[i] * m[i][j] * v[j];
            }
        }
        kinetic - (m1 + m2) * g * l1 * t1.cos() - m2 * g * l2 * t2.cos()
    }
}
