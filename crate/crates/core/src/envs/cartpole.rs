use super::{check_state, solve_small, Dynamics, EnvError, EnvKind, GRAVITY};

/// Cart on a frictionless rail with a point-mass pendulum.
///
/// State is `[x, θ, ẋ, θ̇]` with θ = 0 hanging down; the control is a
/// horizontal force on the cart.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleParams {
    pub pole_mass: f64,
    pub pole_length: f64,
    pub cart_mass: f64,
    pub gravity: f64,
}

impl CartPoleParams {
    pub fn new(pole_mass: f64, pole_length: f64) -> Self {
        CartPoleParams {
            pole_mass,
            pole_length,
            cart_mass: 1.0,
            gravity: GRAVITY,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let ok = [self.pole_mass, self.pole_length, self.cart_mass, self.gravity]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(EnvError::InvalidParams(format!("{self:?}")))
        }
    }
}

pub(crate) fn check_control(u: f64, kind: EnvKind) -> Result<(), EnvError> {
    let c = kind.control_bound();
    if !u.is_finite() {
        return Err(EnvError::NonFinite);
    }
    if u.abs() > c * (1.0 + 1e-12) {
        return Err(EnvError::InvalidParams(format!("control {u} outside [-{c}, {c}]")));
    }
    Ok(())
}

impl Dynamics for CartPoleParams {
    fn state_dim(&self) -> usize {
        4
    }

    fn derivative(&self, s: &[f64], u: f64) -> Result<Vec<f64>, EnvError> {
        check_state(s, 4)?;
        check_control(u, EnvKind::CartPole)?;
        let (m, l, mc, g) = (self.pole_mass, self.pole_length, self.cart_mass, self.gravity);
        let (th, xd, thd) = (s[1], s[2], s[3]);
        let (sn, cs) = th.sin_cos();
        let a = [[mc + m, m * l * cs], [m * l * cs, m * l * l]];
        let b = [u + m * l * sn * thd * thd, -m * g * l * sn];
        let [xdd, thdd] = solve_small(a, b);
        Ok(vec![xd, thd, xdd, thdd])
    }

    fn energy(&self, s: &[f64]) -> f64 {
        let (m, l, mc, g) = (self.pole_mass, self.pole_length, self.cart_mass, self.gravity);
        let (th, xd, thd) = (s[1], s[2], s[3]);
        0.5 * (mc + m) * xd * xd + m * l * xd * thd * th.cos() + 0.5 * m * l * l * thd * thd
            - m * g * l * th.cos()
    }
}
