use super::cartpole::check_control;
use super::{check_state, solve_small, Dynamics, EnvError, EnvKind, GRAVITY};

/// Two-link arm with point masses at the link ends, actuated at the
/// shoulder only.
///
/// State is `[q1, q2, q̇1, q̇2]`: q1 is the first link's angle from hanging
/// down, q2 the elbow angle relative to the first link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendubotParams {
    pub length1: f64,
    pub length2: f64,
    pub mass1: f64,
    pub mass2: f64,
    pub gravity: f64,
}

impl PendubotParams {
    pub fn new(length1: f64, length2: f64) -> Self {
        PendubotParams {
            length1,
            length2,
            mass1: 1.0,
            mass2: 1.0,
            gravity: GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = [self.length1, self.length2, self.mass1, self.mass2, self.gravity]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(EnvError::InvalidParams(format!("{self:?}")))
        }
    }
}

impl Dynamics for PendubotParams {
    fn state_dim(&self) -> usize {
        4
    }

    fn derivative(&self, s: &[f64], u: f64) -> Result<Vec<f64>, EnvError> {
        check_state(s, 4)?;
        check_control(u, EnvKind::Pendubot)?;
        let (l1, l2, m1, m2, g) = (self.length1, self.length2, self.mass1, self.mass2, self.gravity);
        let (q1, q2, qd1, qd2) = (s[0], s[1], s[2], s[3]);
        let (s2, c2) = q2.sin_cos();
        let m11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2);
        let m12 = m2 * (l2 * l2 + l1 * l2 * c2);
        let m22 = m2 * l2 * l2;
        let h = m2 * l1 * l2 * s2;
        let c = [-h * (2.0 * qd1 * qd2 + qd2 * qd2), h * qd1 * qd1];
        let g1 = (m1 + m2) * g * l1 * q1.sin() + m2 * g * l2 * (q1 + q2).sin();
        let g2 = m2 * g * l2 * (q1 + q2).sin();
        let [a1, a2] = solve_small([[m11, m12], [m12, m22]], [u - c[0] - g1, -c[1] - g2]);
        Ok(vec![qd1, qd2, a1, a2])
    }

    fn energy(&self, s: &[f64]) -> f64 {
        let (l1, l2, m1, m2, g) = (self.length1, self.length2, self.mass1, self.mass2, self.gravity);
        let (q1, q2, qd1, qd2) = (s[0], s[1], s[2], s[3]);
        let c2 = q2.cos();
        let m11 = m1 * l1 * l1 + m2 * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * c2);
        let m12 = m2 * (l2 * l2 + l1 * l2 * c2);
        let m22 = m2 * l2 * l2;
        let kinetic = 0.5 * (m11 * qd1 * qd1 + 2.0 * m12 * qd1 * qd2 + m22 * qd2 * qd2);
        let potential = -(m1 + m2) * g * l1 * q1.cos() - m2 * g * l2 * (q1 + q2).cos();
        kinetic + potential
    }
}
