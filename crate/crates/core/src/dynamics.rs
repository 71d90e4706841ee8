//! Frictionless cart-pole and planar quadrotor models with a fixed-step RK4
//! integrator.
//!
//! Cart-pole: the pole is a uniform rod of full length `pole_length` hinged on
//! the cart, `theta` measured from upright (positive tips the pole towards
//! +x). An external force applied at the pole tip enters the equations as
//! generalized forces through the tip Jacobian:
//!
//! ```text
//! tip   = (x + l sin(theta), l cos(theta))
//! Q_x   = F_cart + f_x
//! Q_th  = l (f_x cos(theta) - f_z sin(theta))
//! ```
//!
//! Quadrotor: planar (x-z) rigid body with two rotors at `+-arm_length`,
//! pitch positive when the thrust vector tilts towards +x. Rotor 1 sits on
//! the -x side, rotor 2 on the +x side, so `T2 > T1` pitches up.

use crate::error::{domain, Result};

/// Control period (50 Hz).
pub const DT: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct CartPoleState {
    /// Cart position (m).
    pub x: f64,
    /// Pole angle from upright (rad), never wrapped.
    pub theta: f64,
    pub x_dot: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn new(x: f64, theta: f64, x_dot: f64, theta_dot: f64) -> Self {
        Self { x, theta, x_dot, theta_dot }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.theta, self.x_dot, self.theta_dot]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleParams {
    /// Full pole length (m).
    pub pole_length: f64,
    pub pole_mass: f64,
    pub cart_mass: f64,
    pub gravity: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        Self {
            pole_length: 0.5,
            pole_mass: 0.1,
            cart_mass: 1.0,
            gravity: 9.81,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.pole_length, self.pole_mass, self.cart_mass, self.gravity];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(domain(format!("cart-pole parameters must be positive: {self:?}")))
        }
    }

    /// Kinetic plus potential energy (zero potential at the hinge height).
    pub fn energy(&self, s: &CartPoleState) -> f64 {
        let (m, mc) = (self.pole_mass, self.cart_mass);
        let lh = 0.5 * self.pole_length;
        let cos = s.theta.cos();
        0.5 * (mc + m) * s.x_dot * s.x_dot
            + m * lh * cos * s.x_dot * s.theta_dot
            + 0.5 * (4.0 / 3.0) * m * lh * lh * s.theta_dot * s.theta_dot
            + m * self.gravity * lh * cos
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct QuadrotorState {
    pub x: f64,
    pub z: f64,
    pub pitch: f64,
    pub x_dot: f64,
    pub z_dot: f64,
    pub pitch_rate: f64,
}

impl QuadrotorState {
    pub fn to_array(self) -> [f64; 6] {
        [self.x, self.z, self.pitch, self.x_dot, self.z_dot, self.pitch_rate]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self {
            x: a[0],
            z: a[1],
            pitch: a[2],
            x_dot: a[3],
            z_dot: a[4],
            pitch_rate: a[5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub inertia_yy: f64,
    pub arm_length: f64,
    pub gravity: f64,
    /// Per-motor thrust ceiling (N).
    pub thrust_max: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            mass: 0.027,
            inertia_yy: 1.4e-5,
            arm_length: 0.0397,
            gravity: 9.81,
            thrust_max: 0.15,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.mass, self.inertia_yy, self.arm_length, self.gravity, self.thrust_max];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(domain(format!("quadrotor parameters must be positive: {self:?}")))
        }
    }

    pub fn hover_thrust(&self) -> f64 {
        0.5 * self.mass * self.gravity
    }
}

/// Planar external force (N): pole-tip tap for the cart-pole, wind at the
/// centre of mass for the quadrotor.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ExternalForce {
    pub fx: f64,
    pub fz: f64,
}

impl ExternalForce {
    pub const ZERO: Self = Self { fx: 0.0, fz: 0.0 };

    pub fn new(fx: f64, fz: f64) -> Self {
        Self { fx, fz }
    }

    pub fn is_finite(&self) -> bool {
        self.fx.is_finite() && self.fz.is_finite()
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(domain(format!("non-finite {what}: {values:?}")))
    }
}

/// Time derivative `(x_dot, theta_dot, x_ddot, theta_ddot)`.
pub fn cartpole_derivatives(
    state: &CartPoleState,
    cart_force: f64,
    tip_force: ExternalForce,
    params: &CartPoleParams,
) -> Result<[f64; 4]> {
    check_finite(&state.to_array(), "cart-pole state")?;
    check_finite(&[cart_force, tip_force.fx, tip_force.fz], "cart-pole input")?;
    params.validate()?;

    let l = params.pole_length;
    let lh = 0.5 * l;
    let m = params.pole_mass;
    let total = params.cart_mass + m;
    let (sin, cos) = state.theta.sin_cos();

    let q_x = cart_force + tip_force.fx;
    let q_theta = l * (tip_force.fx * cos - tip_force.fz * sin);

    let temp = (q_x + m * lh * state.theta_dot * state.theta_dot * sin) / total;
    let theta_acc = (params.gravity * sin - cos * temp + q_theta / (m * lh))
        / (lh * (4.0 / 3.0 - m * cos * cos / total));
    let x_acc = temp - m * lh * theta_acc * cos / total;
    Ok([state.x_dot, state.theta_dot, x_acc, theta_acc])
}

/// Time derivative of the planar quadrotor state for rotor thrusts
/// `(t1, t2)` and a wind force at the centre of mass.
pub fn quadrotor_derivatives(
    state: &QuadrotorState,
    thrusts: (f64, f64),
    wind: ExternalForce,
    params: &QuadrotorParams,
) -> Result<[f64; 6]> {
    check_finite(&state.to_array(), "quadrotor state")?;
    check_finite(&[thrusts.0, thrusts.1, wind.fx, wind.fz], "quadrotor input")?;
    params.validate()?;
    for t in [thrusts.0, thrusts.1] {
        if t < 0.0 || t > params.thrust_max {
            return Err(domain(format!(
                "thrust {t} outside [0, {}]",
                params.thrust_max
            )));
        }
    }
    let total = thrusts.0 + thrusts.1;
    let (sin, cos) = state.pitch.sin_cos();
    let x_acc = (total * sin + wind.fx) / params.mass;
    let z_acc = (total * cos + wind.fz) / params.mass - params.gravity;
    let pitch_acc = (thrusts.1 - thrusts.0) * params.arm_length / params.inertia_yy;
    Ok([state.x_dot, state.z_dot, state.pitch_rate, x_acc, z_acc, pitch_acc])
}

/// One classical fourth-order Runge-Kutta step.
pub fn integrate_step<const N: usize, F>(deriv: F, state: [f64; N], dt: f64) -> Result<[f64; N]>
where
    F: Fn(&[f64; N]) -> Result<[f64; N]>,
{
    if !(dt > 0.0) {
        return Err(domain(format!("dt must be positive, got {dt}")));
    }
    let shift = |s: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] {
        let mut out = *s;
        for i in 0..N {
            out[i] += h * k[i];
        }
        out
    };
    let k1 = deriv(&state)?;
    let k2 = deriv(&shift(&state, &k1, 0.5 * dt))?;
    let k3 = deriv(&shift(&state, &k2, 0.5 * dt))?;
    let k4 = deriv(&shift(&state, &k3, dt))?;
    let mut next = state;
    for i in 0..N {
        next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    check_finite(&next, "integrated state")?;
    Ok(next)
}

pub fn step_cartpole(
    state: &CartPoleState,
    cart_force: f64,
    tip_force: ExternalForce,
    params: &CartPoleParams,
    dt: f64,
) -> Result<CartPoleState> {
    let f = |s: &[f64; 4]| cartpole_derivatives(&CartPoleState::from_array(*s), cart_force, tip_force, params);
    integrate_step(f, state.to_array(), dt).map(CartPoleState::from_array)
}

pub fn step_quadrotor(
    state: &QuadrotorState,
    thrusts: (f64, f64),
    wind: ExternalForce,
    params: &QuadrotorParams,
    dt: f64,
) -> Result<QuadrotorState> {
    let f = |s: &[f64; 6]| quadrotor_derivatives(&QuadrotorState::from_array(*s), thrusts, wind, params);
    integrate_step(f, state.to_array(), dt).map(QuadrotorState::from_array)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleLimits {
    pub x_limit: f64,
    pub theta_limit: f64,
}

impl Default for CartPoleLimits {
    fn default() -> Self {
        Self {
            x_limit: 2.4,
            theta_limit: 1.5,
        }
    }
}

impl CartPoleLimits {
    /// Strict inequality: a state exactly on a limit is not terminal.
    pub fn is_terminal(&self, s: &CartPoleState) -> bool {
        s.x.abs() > self.x_limit || s.theta.abs() > self.theta_limit
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrotorLimits {
    pub x_limit: f64,
    pub z_center: f64,
    pub z_limit: f64,
    pub pitch_limit: f64,
}

impl Default for QuadrotorLimits {
    fn default() -> Self {
        Self {
            x_limit: 2.0,
            z_center: 0.5,
            z_limit: 2.0,
            pitch_limit: 1.5,
        }
    }
}

impl QuadrotorLimits {
    pub fn is_terminal(&self, s: &QuadrotorState) -> bool {
        s.x.abs() > self.x_limit
            || (s.z - self.z_center).abs() > self.z_limit
            || s.pitch.abs() > self.pitch_limit
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook cart-pole with half-length `lh`, no tip force.
    fn textbook(s: &CartPoleState, f: f64, p: &CartPoleParams) -> [f64; 4] {
        let lh = p.pole_length / 2.0;
        let total = p.cart_mass + p.pole_mass;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (f + p.pole_mass * lh * s.theta_dot.powi(2) * sin) / total;
        let th = (p.gravity * sin - cos * temp) / (lh * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
        let xa = temp - p.pole_mass * lh * th * cos / total;
        [s.x_dot, s.theta_dot, xa, th]
    }

    /// Independent route: assemble the Lagrangian mass matrix and solve it.
    fn lagrangian(s: &CartPoleState, f: f64, tip: ExternalForce, p: &CartPoleParams) -> [f64; 4] {
        let (m, mc, l, g) = (p.pole_mass, p.cart_mass, p.pole_length, p.gravity);
        let (sin, cos) = s.theta.sin_cos();
        // [ (mc+m)        m l/2 cos ] [xdd ]   [ f + fx + m l/2 sin thd^2        ]
        // [ m l/2 cos     m l^2/3   ] [thdd] = [ m g l/2 sin + l (fx cos - fz sin)]
        let a11 = mc + m;
        let a12 = m * l / 2.0 * cos;
        let a22 = m * l * l / 3.0;
        let b1 = f + tip.fx + m * l / 2.0 * sin * s.theta_dot.powi(2);
        let b2 = m * g * l / 2.0 * sin + l * (tip.fx * cos - tip.fz * sin);
        let det = a11 * a22 - a12 * a12;
        let xdd = (b1 * a22 - a12 * b2) / det;
        let thdd = (a11 * b2 - a12 * b1) / det;
        [s.x_dot, s.theta_dot, xdd, thdd]
    }

    #[test]
    fn upright_is_fixed_point() {
        let d = cartpole_derivatives(&CartPoleState::default(), 0.0, ExternalForce::ZERO, &CartPoleParams::default()).unwrap();
        assert!(d.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn tilted_pole_falls_further() {
        let s = CartPoleState::new(0.0, 0.01, 0.0, 0.0);
        let d = cartpole_derivatives(&s, 0.0, ExternalForce::ZERO, &CartPoleParams::default()).unwrap();
        assert!(d[3] > 0.0);
    }

    #[test]
    fn unit_cart_force_matches_lagrangian() {
        let p = CartPoleParams::default();
        let d = cartpole_derivatives(&CartPoleState::default(), 1.0, ExternalForce::ZERO, &p).unwrap();
        // uniform rod at theta = 0: x_ddot = F / (m_c + m/4), theta_ddot = -3 x_ddot / (2 l)
        let xdd = 1.0 / (p.cart_mass + p.pole_mass / 4.0);
        assert!((d[2] - xdd).abs() < 1e-12);
        assert!((d[3] + 1.5 * xdd / p.pole_length).abs() < 1e-12);
    }

    #[test]
    fn zero_tip_force_equals_textbook_model() {
        let p = CartPoleParams::default();
        for &(th, thd, f) in &[(0.3, -1.0, 2.0), (-1.2, 4.0, -7.5), (0.0, 0.0, 0.0), (2.5, 0.3, 1.0)] {
            let s = CartPoleState::new(0.4, th, -0.2, thd);
            let d = cartpole_derivatives(&s, f, ExternalForce::ZERO, &p).unwrap();
            assert_eq!(d, textbook(&s, f, &p));
        }
    }

    #[test]
    fn tip_force_matches_mass_matrix_solution() {
        let p = CartPoleParams { pole_length: 0.7, pole_mass: 0.3, cart_mass: 1.4, gravity: 9.81 };
        for &(th, thd, f, fx, fz) in &[(0.3, -1.0, 2.0, 0.5, -0.4), (-1.2, 4.0, -7.5, -2.0, 3.0), (0.1, 0.0, 0.0, 0.0, 1.0)] {
            let s = CartPoleState::new(0.1, th, 0.3, thd);
            let tip = ExternalForce::new(fx, fz);
            let d = cartpole_derivatives(&s, f, tip, &p).unwrap();
            let o = lagrangian(&s, f, tip, &p);
            for i in 0..4 {
                assert!((d[i] - o[i]).abs() < 1e-10 * (1.0 + o[i].abs()), "{d:?} vs {o:?}");
            }
        }
    }

    #[test]
    fn vertical_tip_force_on_upright_pole_does_nothing() {
        let d = cartpole_derivatives(&CartPoleState::default(), 0.0, ExternalForce::new(0.0, 5.0), &CartPoleParams::default()).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_non_finite_input() {
        let p = CartPoleParams::default();
        assert!(cartpole_derivatives(&CartPoleState::new(f64::NAN, 0.0, 0.0, 0.0), 0.0, ExternalForce::ZERO, &p).is_err());
        assert!(cartpole_derivatives(&CartPoleState::default(), f64::INFINITY, ExternalForce::ZERO, &p).is_err());
    }

    #[test]
    fn hover_is_fixed_point() {
        let p = QuadrotorParams::default();
        let s = QuadrotorState { x: 0.5, z: 0.5, ..Default::default() };
        let h = p.hover_thrust();
        let d = quadrotor_derivatives(&s, (h, h), ExternalForce::ZERO, &p).unwrap();
        assert!(d.iter().all(|v| v.abs() <= 1e-12), "{d:?}");
    }

    #[test]
    fn free_fall() {
        let p = QuadrotorParams::default();
        let d = quadrotor_derivatives(&QuadrotorState::default(), (0.0, 0.0), ExternalForce::ZERO, &p).unwrap();
        assert_eq!(d[4], -p.gravity);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn differential_thrust_torque() {
        let p = QuadrotorParams::default();
        let (t, delta) = (0.1, 0.01);
        let d = quadrotor_derivatives(&QuadrotorState::default(), (t, t + delta), ExternalForce::ZERO, &p).unwrap();
        let expected = delta * p.arm_length / p.inertia_yy;
        assert!((d[5] - expected).abs() < 1e-9 * expected);
    }

    #[test]
    fn negative_thrust_rejected() {
        let p = QuadrotorParams::default();
        assert!(quadrotor_derivatives(&QuadrotorState::default(), (-0.01, 0.1), ExternalForce::ZERO, &p).is_err());
    }

    #[test]
    fn rk4_zero_field_is_identity() {
        let s = [1.0, -2.0, 3.0];
        assert_eq!(integrate_step(|_| Ok([0.0; 3]), s, 0.02).unwrap(), s);
    }

    #[test]
    fn rk4_exponential_decay() {
        let next = integrate_step(|s: &[f64; 1]| Ok([-s[0]]), [1.0], 0.02).unwrap();
        assert!((next[0] - (-0.02f64).exp()).abs() <= 1e-8);
    }

    #[test]
    fn rk4_rejects_bad_dt() {
        assert!(integrate_step(|s: &[f64; 1]| Ok(*s), [1.0], 0.0).is_err());
    }

    fn swing(dt: f64, t_end: f64) -> [f64; 4] {
        let p = CartPoleParams::default();
        let mut s = CartPoleState::new(0.0, 2.0, 0.0, 0.0);
        let n = (t_end / dt).round() as usize;
        for _ in 0..n {
            s = step_cartpole(&s, 0.0, ExternalForce::ZERO, &p, dt).unwrap();
        }
        s.to_array()
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        let t = 1.0;
        let oracle = swing(0.02 / 100.0, t);
        let err = |dt: f64| {
            let s = swing(dt, t);
            (0..4).map(|i| (s[i] - oracle[i]).powi(2)).sum::<f64>().sqrt()
        };
        let (e1, e2, e3) = (err(0.02), err(0.01), err(0.005));
        for ratio in [e1 / e2, e2 / e3] {
            assert!((10.0..24.0).contains(&ratio), "ratios {} {}", e1 / e2, e2 / e3);
        }
    }

    #[test]
    fn energy_drift_is_small() {
        let p = CartPoleParams::default();
        let mut s = CartPoleState::new(0.0, 0.1, 0.0, 0.0);
        let e0 = p.energy(&s);
        let mut worst: f64 = 0.0;
        for _ in 0..250 {
            s = step_cartpole(&s, 0.0, ExternalForce::ZERO, &p, DT).unwrap();
            worst = worst.max(((p.energy(&s) - e0) / e0).abs());
        }
        assert!(worst <= 1e-4, "relative drift {worst}");
    }

    #[test]
    fn determinism() {
        let p = CartPoleParams::default();
        let s = CartPoleState::new(0.1, 0.2, -0.3, 0.4);
        let a = step_cartpole(&s, 1.5, ExternalForce::new(0.2, 0.1), &p, DT).unwrap();
        let b = step_cartpole(&s, 1.5, ExternalForce::new(0.2, 0.1), &p, DT).unwrap();
        assert_eq!(a.to_array().map(f64::to_bits), b.to_array().map(f64::to_bits));
    }

    #[test]
    fn termination_thresholds() {
        let lim = CartPoleLimits::default();
        assert!(!lim.is_terminal(&CartPoleState::default()));
        assert!(lim.is_terminal(&CartPoleState::new(3.0, 0.0, 0.0, 0.0)));
        assert!(!lim.is_terminal(&CartPoleState::new(0.0, lim.theta_limit, 0.0, 0.0)));
        assert!(!lim.is_terminal(&CartPoleState::new(lim.x_limit, 0.0, 0.0, 0.0)));
        let q = QuadrotorLimits::default();
        assert!(!q.is_terminal(&QuadrotorState { x: 0.5, z: 0.5, ..Default::default() }));
        assert!(q.is_terminal(&QuadrotorState { z: 2.6, ..Default::default() }));
        assert!(q.is_terminal(&QuadrotorState { pitch: -1.6, ..Default::default() }));
    }
}
