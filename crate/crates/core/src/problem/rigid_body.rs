use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4};

use serde::{Deserialize, Serialize};

use super::{BoxDomain, ControlProblem};
use crate::error::{HjbError, Result};
use crate::scalar::{cst, val, Real};

pub type Mat3<T> = [[T; 3]; 3];

const GIMBAL_GUARD: f64 = 1e-6;

/// Euler-angle kinematics `E(v)` with `v = (φ, θ, ψ)`, so that `v̇ = E(v) ω`.
pub fn euler_kinematics<T: Real>(v: &[T]) -> Result<Mat3<T>> {
    let theta = val(v[1]);
    if theta.abs() >= FRAC_PI_2 - GIMBAL_GUARD || !theta.is_finite() {
        return Err(HjbError::GimbalSingularity { pitch: theta });
    }
    let (sp, cp) = v[0].sin_cos();
    let ct = v[1].cos();
    let tt = v[1].tan();
    let (z, o) = (T::zero(), T::one());
    Ok([
        [o, sp * tt, cp * tt],
        [z, cp, -sp],
        [z, sp / ct, cp / ct],
    ])
}

/// Cross-product matrix with the sign convention `S₁₂ = ω₃`.
pub fn skew<T: Real>(w: &[T]) -> Mat3<T> {
    let z = T::zero();
    [[z, w[2], -w[1]], [-w[2], z, w[0]], [w[1], -w[0], z]]
}

/// Rotation matrix of the roll-pitch-yaw sequence.
pub fn rotation<T: Real>(v: &[T]) -> Mat3<T> {
    let (sp, cp) = v[0].sin_cos();
    let (st, ct) = v[1].sin_cos();
    let (ss, cs) = v[2].sin_cos();
    [
        [ct * cs, ct * ss, -st],
        [sp * st * cs - cp * ss, sp * st * ss + cp * cs, ct * sp],
        [cp * st * cs + sp * ss, cp * st * ss - sp * cs, ct * cp],
    ]
}

fn mat_vec<T: Real>(m: &Mat3<T>, v: &[T]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
    }
    out
}

fn lift<T: Real>(m: &Mat3<f64>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = cst(m[i][j]);
        }
    }
    out
}

/// Physical constants and cost weights of the attitude-control benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyParams {
    pub inertia: Mat3<f64>,
    pub actuator: Mat3<f64>,
    pub momentum: [f64; 3],
    /// `W1..W5`: attitude, rate, control, terminal attitude, terminal rate.
    pub weights: [f64; 5],
    pub final_time: f64,
}

impl Default for RigidBodyParams {
    fn default() -> Self {
        RigidBodyParams {
            inertia: [[2.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 4.0]],
            actuator: [
                [1.0, 1.0 / 20.0, 1.0 / 10.0],
                [1.0 / 15.0, 1.0, 1.0 / 10.0],
                [1.0 / 10.0, 1.0 / 15.0, 1.0],
            ],
            momentum: [1.0, 1.0, 1.0],
            weights: [1.0, 10.0, 0.5, 1.0, 1.0],
            final_time: 20.0,
        }
    }
}

fn parse_list(key: &str, value: &str, expected: usize) -> Result<Vec<f64>> {
    let parsed: std::result::Result<Vec<f64>, _> =
        value.split(',').map(|s| s.trim().parse::<f64>()).collect();
    match parsed {
        Ok(v) if v.len() == expected => Ok(v),
        _ => Err(HjbError::InvalidInput(format!(
            "{key}: expected {expected} comma-separated numbers, got '{value}'"
        ))),
    }
}

impl RigidBodyParams {
    /// Overrides one constant from a `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mat = |v: Vec<f64>| [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]];
        match key {
            "inertia" => self.inertia = mat(parse_list(key, value, 9)?),
            "actuator" => self.actuator = mat(parse_list(key, value, 9)?),
            "momentum" => {
                let v = parse_list(key, value, 3)?;
                self.momentum = [v[0], v[1], v[2]];
            }
            "w1" | "w2" | "w3" | "w4" | "w5" => {
                let idx = key[1..].parse::<usize>().unwrap() - 1;
                self.weights[idx] = parse_list(key, value, 1)?[0];
            }
            "tf" | "final_time" => self.final_time = parse_list(key, value, 1)?[0],
            other => {
                return Err(HjbError::InvalidInput(format!(
                    "unknown rigid_body key '{other}'"
                )))
            }
        }
        Ok(())
    }
}

/// Rigid body actuated by three pairs of momentum wheels; state
/// `x = (φ, θ, ψ, ω₁, ω₂, ω₃)`.
#[derive(Debug, Clone)]
pub struct RigidBody {
    pub params: RigidBodyParams,
    inertia_inv: Mat3<f64>,
    domain: BoxDomain,
}

fn invert_spd(m: &Mat3<f64>) -> Result<Mat3<f64>> {
    let sym = (0..3).all(|i| (0..3).all(|j| (m[i][j] - m[j][i]).abs() <= 1e-12 * (1.0 + m[i][j].abs())));
    let d1 = m[0][0];
    let d2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if !sym || d1 <= 0.0 || d2 <= 0.0 || det <= 0.0 {
        return Err(HjbError::InvalidInput("inertia must be symmetric positive definite".into()));
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    Ok(inv)
}

impl RigidBody {
    pub fn new(params: RigidBodyParams) -> Result<Self> {
        let inertia_inv = invert_spd(&params.inertia)?;
        if !(params.final_time > 0.0) || params.weights[2] <= 0.0 {
            return Err(HjbError::InvalidInput("rigid_body: tf and W3 must be positive".into()));
        }
        let a = FRAC_PI_3;
        let w = FRAC_PI_4;
        Ok(RigidBody {
            params,
            inertia_inv,
            domain: BoxDomain::symmetric(&[a, a, a, w, w, w]),
        })
    }

    pub fn inertia_inverse(&self) -> &Mat3<f64> {
        &self.inertia_inv
    }

    /// `(E(v) ω, J⁻¹(S(ω) R(v) h + B u))`.
    pub fn rhs<T: Real>(&self, x: &[T], u: &[T], dx: &mut [T]) -> Result<()> {
        let (v, w) = x.split_at(3);
        let e = euler_kinematics(v)?;
        let vdot = mat_vec(&e, w);
        let h: Vec<T> = self.params.momentum.iter().map(|&c| cst(c)).collect();
        let rh = mat_vec(&rotation(v), &h);
        let srh = mat_vec(&skew(w), &rh);
        let bu = mat_vec(&lift::<T>(&self.params.actuator), u);
        let torque = [srh[0] + bu[0], srh[1] + bu[1], srh[2] + bu[2]];
        let wdot = mat_vec(&lift::<T>(&self.inertia_inv), &torque);
        dx[..3].copy_from_slice(&vdot);
        dx[3..6].copy_from_slice(&wdot);
        Ok(())
    }

    /// `u* = −(1/W3) Bᵀ J⁻¹ λ_ω`, the stationary point of the Hamiltonian.
    pub fn control_from_costate<T: Real>(&self, lambda: &[T]) -> [T; 3] {
        let jl = mat_vec(&lift::<T>(&self.inertia_inv), &lambda[3..6]);
        let b = &self.params.actuator;
        let scale = cst::<T>(-1.0 / self.params.weights[2]);
        let mut u = [T::zero(); 3];
        for (k, uk) in u.iter_mut().enumerate() {
            *uk = scale * (cst::<T>(b[0][k]) * jl[0] + cst::<T>(b[1][k]) * jl[1] + cst::<T>(b[2][k]) * jl[2]);
        }
        u
    }
}

fn half_sq<T: Real>(w: f64, v: &[T]) -> T {
    let mut s = T::zero();
    for &x in v {
        s += x * x;
    }
    cst::<T>(0.5 * w) * s
}

impl ControlProblem for RigidBody {
    fn name(&self) -> &str {
        "rigid_body"
    }
    fn state_dim(&self) -> usize {
        6
    }
    fn control_dim(&self) -> usize {
        3
    }
    fn initial_time(&self) -> f64 {
        0.0
    }
    fn final_time(&self) -> f64 {
        self.params.final_time
    }
    fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    fn dynamics<T: Real>(&self, _t: T, x: &[T], u: &[T], dx: &mut [T]) -> Result<()> {
        self.rhs(x, u, dx)
    }

    fn running_cost<T: Real>(&self, _t: T, x: &[T], u: &[T]) -> T {
        let w = &self.params.weights;
        half_sq(w[0], &x[..3]) + half_sq(w[1], &x[3..6]) + half_sq(w[2], u)
    }

    fn terminal_cost<T: Real>(&self, x: &[T]) -> T {
        let w = &self.params.weights;
        half_sq(w[3], &x[..3]) + half_sq(w[4], &x[3..6])
    }

    fn optimal_control<T: Real>(&self, _t: T, _x: &[T], lambda: &[T], u: &mut [T]) {
        u.copy_from_slice(&self.control_from_costate(lambda));
    }
}
