//! Levenberg-Marquardt estimation of the LiDAR-to-board pose.

use nalgebra::{DMatrix, DVector, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::correspondence::Correspondence;
use crate::error::{Error, Result};
use crate::geometry::{kabsch, matrix_to_pose, polar_to_cartesian, rotation_zyx_partials, Frame, Pose6DOF};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Step scale applied to every LM update.
    pub eta: f64,
    pub lambda0: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub jacobian_mode: JacobianMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            lambda0: 0.3,
            max_iters: 200,
            grad_tol: 1e-10,
            step_tol: 1e-12,
            jacobian_mode: JacobianMode::Analytic,
        }
    }
}

impl SolverConfig {
    /// Small fixed step scale (0.02) with enough iterations to converge.
    pub fn paper_faithful() -> Self {
        Self {
            eta: 0.02,
            max_iters: 5000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.eta, self.lambda0, self.grad_tol, self.step_tol];
        if v.iter().all(|x| x.is_finite() && *x > 0.0) && self.max_iters > 0 {
            Ok(())
        } else {
            Err(Error::Config("solver eta, lambda0, tolerances and max_iters must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub beta: Pose6DOF,
    /// Sum of squared residuals, m^2.
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Vec<Vector3<f64>>,
    /// `s^2 (J^T J)^-1` at the solution.
    pub covariance: Matrix6<f64>,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Set when exactly three correspondences were available.
    pub low_confidence: bool,
}

fn lidar_point(c: &Correspondence) -> Result<Vector3<f64>> {
    Ok(polar_to_cartesian(&c.beam)?.coords)
}

/// `O_p - (R L_p + T)` for one correspondence.
pub fn residual(beta: &Pose6DOF, c: &Correspondence) -> Result<Vector3<f64>> {
    if c.p_o.frame != Frame::Board {
        return Err(Error::FrameMismatch {
            expected: Frame::Board,
            actual: c.p_o.frame,
        });
    }
    Ok(c.p_o.coords - (beta.rotation() * lidar_point(c)? + beta.translation()))
}

fn stacked_residuals(beta: &Pose6DOF, pts: &[(Vector3<f64>, Vector3<f64>)]) -> DVector<f64> {
    let r = beta.rotation();
    let t = beta.translation();
    let mut f = DVector::zeros(3 * pts.len());
    for (i, (l, o)) in pts.iter().enumerate() {
        f.fixed_rows_mut::<3>(3 * i).copy_from(&(o - (r * l + t)));
    }
    f
}

fn analytic_jacobian(beta: &Pose6DOF, pts: &[(Vector3<f64>, Vector3<f64>)]) -> DMatrix<f64> {
    let d = rotation_zyx_partials(beta.yaw, beta.tilt, beta.roll);
    let mut j = DMatrix::zeros(3 * pts.len(), 6);
    for (i, (l, _)) in pts.iter().enumerate() {
        for (k, dr) in d.iter().enumerate() {
            j.fixed_view_mut::<3, 1>(3 * i, k).copy_from(&(-(dr * l)));
        }
        for a in 0..3 {
            j[(3 * i + a, 3 + a)] = -1.0;
        }
    }
    j
}

fn fd_jacobian(beta: &Pose6DOF, pts: &[(Vector3<f64>, Vector3<f64>)]) -> DMatrix<f64> {
    let p = beta.params();
    let mut j = DMatrix::zeros(3 * pts.len(), 6);
    for k in 0..6 {
        let (mut hi, mut lo) = (p, p);
        hi[k] += FD_STEP;
        lo[k] -= FD_STEP;
        let col = (stacked_residuals(&raw_pose(&hi), pts) - stacked_residuals(&raw_pose(&lo), pts)) / (2.0 * FD_STEP);
        j.set_column(k, &col);
    }
    j
}

/// Pose from parameters without angle wrapping, so differences stay local.
fn raw_pose(p: &[f64; 6]) -> Pose6DOF {
    Pose6DOF {
        yaw: p[0],
        tilt: p[1],
        roll: p[2],
        x: p[3],
        y: p[4],
        z: p[5],
    }
}

fn pairs(cs: &[Correspondence]) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    cs.iter()
        .map(|c| {
            if c.p_o.frame != Frame::Board {
                return Err(Error::FrameMismatch {
                    expected: Frame::Board,
                    actual: c.p_o.frame,
                });
            }
            Ok((lidar_point(c)?, c.p_o.coords))
        })
        .collect()
}

/// Stacked `3N x 6` Jacobian of the residuals with respect to
/// `(yaw, tilt, roll, x, y, z)`.
pub fn jacobian(beta: &Pose6DOF, cs: &[Correspondence], mode: JacobianMode) -> Result<DMatrix<f64>> {
    let pts = pairs(cs)?;
    Ok(match mode {
        JacobianMode::Analytic => analytic_jacobian(beta, &pts),
        JacobianMode::FiniteDifference => fd_jacobian(beta, &pts),
    })
}

/// Closed-form rigid fit of the correspondences, or the zero pose if that fails.
pub fn initial_guess(cs: &[Correspondence]) -> Pose6DOF {
    let Ok(pts) = pairs(cs) else {
        return Pose6DOF::identity();
    };
    let (l, o): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
    match kabsch(&l, &o) {
        Ok((r, t)) => matrix_to_pose(&r, &t),
        Err(_) => Pose6DOF::identity(),
    }
}

fn check_geometry(pts: &[(Vector3<f64>, Vector3<f64>)]) -> Result<()> {
    if pts.len() < 3 {
        return Err(Error::Input(format!("need at least 3 correspondences, got {}", pts.len())));
    }
    let c = pts.iter().map(|p| p.1).sum::<Vector3<f64>>() / pts.len() as f64;
    let mut cov = nalgebra::Matrix3::zeros();
    for (_, o) in pts {
        cov += (o - c) * (o - c).transpose();
    }
    let mut ev: Vec<f64> = cov.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if ev[1] <= 1e-12 * ev[2].max(1e-300) {
        return Err(Error::Rank("correspondences are collinear".into()));
    }
    Ok(())
}

/// Minimize the summed squared residuals starting from `beta0`.
///
/// Each iteration solves `(J^T J + lambda diag(J^T J)) delta = -J^T F` and
/// tries `beta + eta delta`; the damping halves on success and doubles on
/// failure.
pub fn solve(cs: &[Correspondence], cfg: &SolverConfig, beta0: Pose6DOF) -> Result<SolveReport> {
    cfg.validate()?;
    let pts = pairs(cs)?;
    check_geometry(&pts)?;
    if !beta0.is_finite() {
        return Err(Error::Input("non-finite initial pose".into()));
    }

    let jac = |b: &Pose6DOF| match cfg.jacobian_mode {
        JacobianMode::Analytic => analytic_jacobian(b, &pts),
        JacobianMode::FiniteDifference => fd_jacobian(b, &pts),
    };
    let mut beta = beta0.params();
    let mut f = stacked_residuals(&raw_pose(&beta), &pts);
    let mut cost = f.norm_squared();
    let mut history = vec![cost];
    let mut lambda = cfg.lambda0;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let j = jac(&raw_pose(&beta));
        let jtj: Matrix6<f64> = (j.transpose() * &j).fixed_view::<6, 6>(0, 0).into_owned();
        let g: Vector6<f64> = (j.transpose() * &f).fixed_rows::<6>(0).into_owned();
        if g.norm() < cfg.grad_tol || cost == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        let mut singular_everywhere = true;
        while lambda <= 1e8 {
            let mut a = jtj;
            for k in 0..6 {
                a[(k, k)] += lambda * jtj[(k, k)];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 2.0;
                continue;
            };
            singular_everywhere = false;
            let step = -cfg.eta * chol.solve(&g);
            let mut trial = beta;
            for k in 0..6 {
                trial[k] += step[k];
            }
            let f_trial = stacked_residuals(&raw_pose(&trial), &pts);
            let c_trial = f_trial.norm_squared();
            if step.norm() < cfg.step_tol {
                if c_trial <= cost {
                    beta = trial;
                    f = f_trial;
                    cost = c_trial;
                    history.push(cost);
                }
                converged = true;
                break;
            }
            if c_trial < cost {
                beta = trial;
                f = f_trial;
                cost = c_trial;
                history.push(cost);
                lambda *= 0.5;
                accepted = true;
                break;
            }
            lambda *= 2.0;
        }
        if converged {
            break;
        }
        if singular_everywhere {
            return Err(Error::Solver("damped normal matrix is singular for every damping value".into()));
        }
        if !accepted {
            // No decrease is possible at any damping: the cost sits at its floating-point minimum.
            converged = true;
            break;
        }
    }

    let j = jac(&raw_pose(&beta));
    let jtj: Matrix6<f64> = (j.transpose() * &j).fixed_view::<6, 6>(0, 0).into_owned();
    let dof = (3 * pts.len()).saturating_sub(6).max(1) as f64;
    let covariance = jtj.try_inverse().map(|m| m * (cost / dof)).unwrap_or_else(|| Matrix6::from_element(f64::NAN));
    let residuals = (0..pts.len()).map(|i| f.fixed_rows::<3>(3 * i).into_owned()).collect();
    Ok(SolveReport {
        beta: Pose6DOF::from_params(&beta),
        final_cost: cost,
        iterations,
        converged,
        residuals,
        covariance,
        cost_history: history,
        low_confidence: pts.len() == 3,
    })
}

/// [`solve`] started from [`initial_guess`].
pub fn solve_from_guess(cs: &[Correspondence], cfg: &SolverConfig) -> Result<SolveReport> {
    solve(cs, cfg, initial_guess(cs))
}
