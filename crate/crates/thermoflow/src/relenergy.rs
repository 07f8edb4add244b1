//! Relative-energy verifier: the distance functional R between a candidate
//! trajectory and a smoother reference, the relative dissipation W, the
//! reference-regularity weight K, the residual operator A, and a per-step
//! Gronwall check of
//!
//!   R(t) + int_0^t W e^{int_s^t K} ds
//!     <= R(0) e^{int_0^t K}
//!      + int_0^t ( <A, (u~-u, th~-th, mu~-mu)> + M |phi-phi~|_* |A_3|_* ) e^{int_s^t K} ds.
//!
//! The starred norm is a computable Poisson surrogate for the dual Lipschitz
//! norm: solve -lap(Phi) = f with zero-flux walls and take the L1 norm of
//! grad Phi. All quadrature is the plain cell sum of the underlying grid.

use crate::config::{IcSpec, SimConfig};
use crate::grid::{self, cg, poisson_neumann, project_div_free, Ghost, Grid, VectorField};
use crate::solver::{chemical_potential, initial_state, run_collect, State, Trajectory};
use crate::thermo::Params;
use crate::Error;

/// Seed for the automatic calibration of the dual-norm constant M; fixed so
/// that reports are reproducible run to run.
const M_SEED: u64 = 0x9e3779b97f4a7c15;

/// Upper exponent clamp for the displayed Gronwall weights; keeps the
/// reported inequality sides finite in regimes where the weights are
/// astronomically large. The weight-scale search is immune to this: it
/// evaluates the slack sign in a rescaled form with nonpositive exponents.
const EXP_CLAMP: f64 = 650.0;

// ---------------------------------------------------------------------------
// dual norm surrogate
// ---------------------------------------------------------------------------

fn grad_l1(grid: &Grid, potential: &[f64]) -> f64 {
    let g = grid.grad(potential, Ghost::Mirror);
    let mut s = 0.0;
    for k in 0..grid.n() {
        s += g.x[k].hypot(g.y[k]);
    }
    s * grid.cell_volume()
}

/// Computable stand-in for the dual Lipschitz norm of a mean-zero field:
/// the L1 norm of grad Phi where -lap(Phi) = f with zero-flux walls.
/// Fails with IncompatibleRhs when f carries mass (the Neumann problem is
/// then unsolvable, and the norm is not defined).
pub fn dual_norm_surrogate(grid: &Grid, f: &[f64], tol: f64) -> Result<f64, Error> {
    let (potential, _) = poisson_neumann(grid, f, tol, 10 * grid.n())?;
    Ok(grad_l1(grid, &potential))
}

/// Same surrogate with the exact cell mean removed first. Intended for
/// fields that are mean-zero analytically but carry rounding-level mass
/// (conserved differences, flux-form residuals).
pub fn dual_norm_zero_mean(grid: &Grid, f: &[f64], tol: f64) -> Result<f64, Error> {
    let m = grid::mean(f);
    let shifted: Vec<f64> = f.iter().map(|v| v - m).collect();
    let (potential, _) = poisson_neumann(grid, &shifted, tol, 10 * grid.n())?;
    Ok(grad_l1(grid, &potential))
}

/// Calibrate the dual-norm constant M: scan random mean-zero fields
/// (alternating rough per-cell noise and smooth low-mode combinations) for
/// the interpolation inequality
///
///   lambda |f|_2^2 <= 1/4 |grad f|_2^2 + (M/2) |f|_*^2
///
/// and return twice the largest M any sample required, floored at 1. The
/// floor covers domains where the gradient term alone dominates and any
/// positive M works.
pub fn calibrate_m(grid: &Grid, params: &Params, tol: f64, seed: u64) -> Result<f64, Error> {
    let mut rng = crate::rng::SplitMix64::new(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let f = if trial % 2 == 0 {
            let mut f = grid.zeros();
            for v in f.iter_mut() {
                *v = rng.uniform(-1.0, 1.0);
            }
            let m = grid::mean(&f);
            for v in f.iter_mut() {
                *v -= m;
            }
            f
        } else {
            let mut coef = [[0.0; 5]; 5];
            for (p, row) in coef.iter_mut().enumerate() {
                for (q, c) in row.iter_mut().enumerate() {
                    if p + q > 0 {
                        *c = rng.uniform(-1.0, 1.0);
                    }
                }
            }
            let (lx, ly) = (grid.lx, grid.ly);
            grid.sample(|x, y| {
                let mut s = 0.0;
                for (p, row) in coef.iter().enumerate() {
                    for (q, c) in row.iter().enumerate() {
                        s += c
                            * (p as f64 * std::f64::consts::PI * x / lx).cos()
                            * (q as f64 * std::f64::consts::PI * y / ly).cos();
                    }
                }
                s
            })
        };
        let l2 = grid.norm_l2(&f);
        if l2 == 0.0 {
            continue;
        }
        let g2 = grid.norm_l2_vec(&grid.grad(&f, Ghost::Mirror));
        let dual = dual_norm_zero_mean(grid, &f, tol)?;
        let need = params.lambda * l2 * l2 - 0.25 * g2 * g2;
        if need > 0.0 && dual > 0.0 {
            worst = worst.max(2.0 * need / (dual * dual));
        }
    }
    Ok((2.0 * worst).max(1.0))
}

/// Resolve the dual-norm constant: the configured value if set, otherwise a
/// deterministic calibration on this grid.
pub fn resolve_m(grid: &Grid, params: &Params, tol: f64) -> Result<f64, Error> {
    match params.m_dual {
        Some(m) => Ok(m),
        None => calibrate_m(grid, params, tol, M_SEED),
    }
}

// ---------------------------------------------------------------------------
// relative energy R
// ---------------------------------------------------------------------------

struct RelParts {
    total: f64,
    dual_norm: f64,
}

fn relative_energy_parts(
    grid: &Grid,
    params: &Params,
    q: &State,
    qt: &State,
    m_dual: f64,
    tol: f64,
) -> Result<RelParts, Error> {
    let n = grid.n();
    if [
        q.phi.len(),
        q.theta.len(),
        q.u.x.len(),
        qt.phi.len(),
        qt.theta.len(),
        qt.u.x.len(),
    ]
    .iter()
    .any(|&l| l != n)
    {
        return Err(Error::GridMismatch);
    }
    let gp = grid.grad(&q.phi, Ghost::Mirror);
    let gpt = grid.grad(&qt.phi, Ghost::Mirror);
    let mut dens = grid.zeros();
    for k in 0..n {
        let dx = gp.x[k] - gpt.x[k];
        let dy = gp.y[k] - gpt.y[k];
        let grad_term = 0.5 * params.epsilon * (dx * dx + dy * dy);
        let breg = params.g_bregman(q.phi[k], qt.phi[k]) / params.epsilon;
        let du = q.u.x[k] - qt.u.x[k];
        let dv = q.u.y[k] - qt.u.y[k];
        let kin = 0.5 * (du * du + dv * dv);
        let thermal = params.lambda_rel(q.theta[k], qt.theta[k]);
        dens[k] = grad_term + breg + kin + thermal;
    }
    let diff: Vec<f64> = (0..n).map(|k| q.phi[k] - qt.phi[k]).collect();
    let dual_norm = dual_norm_zero_mean(grid, &diff, tol)?;
    Ok(RelParts {
        total: grid.integrate(&dens) + 0.5 * m_dual * dual_norm * dual_norm,
        dual_norm,
    })
}

/// The relative energy R(q|q~): interface-gradient distance, Bregman gap of
/// the convexified well, kinetic distance, caloric Bregman gap, and the
/// squared dual-norm term (M/2)|phi - phi~|_*^2. Nonnegative, zero iff the
/// states agree.
pub fn relative_energy(
    grid: &Grid,
    params: &Params,
    q: &State,
    qt: &State,
    m_dual: f64,
    tol: f64,
) -> Result<f64, Error> {
    Ok(relative_energy_parts(grid, params, q, qt, m_dual, tol)?.total)
}

// ---------------------------------------------------------------------------
// relative dissipation W
// ---------------------------------------------------------------------------

/// One step of the relative dissipation between a candidate q and a
/// reference q~ (dt times the quadrature of the four nonnegative terms):
/// log-temperature diffusion distance, weighted velocity-gradient distance,
/// the growing-conductivity analogue, and the chemical-potential flux
/// distance. The gradient distance uses the full velocity gradient, the same
/// form the momentum operator and the viscous heat source use.
/// `kappa1_factor_two` doubles the third term; the derivation of
/// the inequality carries twice the displayed coefficient at the comparable
/// stage, and the switch lets both variants be compared.
pub fn relative_dissipation_increment(
    grid: &Grid,
    params: &Params,
    q: &State,
    qt: &State,
    dt: f64,
    kappa1_factor_two: bool,
) -> f64 {
    let n = grid.n();
    let lt: Vec<f64> = q.theta.iter().map(|t| t.ln()).collect();
    let ltt: Vec<f64> = qt.theta.iter().map(|t| t.ln()).collect();
    let glt = grid.grad(&lt, Ghost::Mirror);
    let gltt = grid.grad(&ltt, Ghost::Mirror);
    let gux = grid.grad(&q.u.x, Ghost::Negate);
    let guy = grid.grad(&q.u.y, Ghost::Negate);
    let gtx = grid.grad(&qt.u.x, Ghost::Negate);
    let gty = grid.grad(&qt.u.y, Ghost::Negate);
    let gm = grid.grad(&q.mu, Ghost::Mirror);
    let gmt = grid.grad(&qt.mu, Ghost::Mirror);
    let beta = params.beta;
    let (ga, gat) = if beta > 0.0 {
        let a: Vec<f64> = q.theta.iter().map(|t| t.powf(0.5 * beta)).collect();
        let at: Vec<f64> = qt.theta.iter().map(|t| t.powf(0.5 * beta)).collect();
        (
            grid.grad(&a, Ghost::Mirror),
            grid.grad(&at, Ghost::Mirror),
        )
    } else {
        (VectorField::zeros(0), VectorField::zeros(0))
    };
    let k1_scale = if kappa1_factor_two { 2.0 } else { 1.0 };
    let mut dens = grid.zeros();
    for k in 0..n {
        let th = q.theta[k];
        let tht = qt.theta[k];
        let dlx = glt.x[k] - gltt.x[k];
        let dly = glt.y[k] - gltt.y[k];
        let t1 = params.kappa0 * tht * (dlx * dlx + dly * dly);

        let w1 = (tht / th).sqrt();
        let w2 = (th / tht).sqrt();
        let dxx = w1 * gux.x[k] - w2 * gtx.x[k];
        let dxy = w1 * gux.y[k] - w2 * gtx.y[k];
        let dyx = w1 * guy.x[k] - w2 * gty.x[k];
        let dyy = w1 * guy.y[k] - w2 * gty.y[k];
        let t2 = params.nu(th) * 0.5 * (dxx * dxx + dxy * dxy + dyx * dyx + dyy * dyy);

        let t3 = if params.kappa1 == 0.0 {
            0.0
        } else if beta > 0.0 {
            let dax = ga.x[k] - gat.x[k];
            let day = ga.y[k] - gat.y[k];
            k1_scale * params.kappa1 / (beta * beta) * tht * (dax * dax + day * day)
        } else {
            k1_scale * 0.25 * params.kappa1 * tht * (dlx * dlx + dly * dly)
        };

        let dmx = w1 * gm.x[k] - w2 * gmt.x[k];
        let dmy = w1 * gm.y[k] - w2 * gmt.y[k];
        let t4 = dmx * dmx + dmy * dmy;

        dens[k] = t1 + t2 + t3 + t4;
    }
    dt * grid.integrate(&dens)
}

// ---------------------------------------------------------------------------
// regularity weight K
// ---------------------------------------------------------------------------

/// Regularity weight K(q~) of the reference at one step: sup norms of the
/// transport residual of phi~, of the transported log temperature, of the
/// flux fields and the symmetric gradient (squared where the estimate uses
/// them quadratically), the Sobolev norm of eps*lap(phi~) - F'(phi~)/eps,
/// and the L2 norm of grad(mu~). Time derivatives are backward differences
/// of two consecutive snapshots. The overall constant of the estimate is
/// existential; the verifier scales the whole weight by a measured k_scale.
pub fn regularity_weight(grid: &Grid, params: &Params, prev: &State, cur: &State, dt: f64) -> f64 {
    let n = grid.n();
    let gphi = grid.grad(&cur.phi, Ghost::Mirror);
    let mut work = grid.zeros();

    // transport residual of the phase field
    for k in 0..n {
        work[k] = (cur.phi[k] - prev.phi[k]) / dt
            + cur.u.x[k] * gphi.x[k]
            + cur.u.y[k] * gphi.y[k];
    }
    let term_phase = grid.norm_linf(&work);

    // Sobolev norm of eps lap(phi) - F'(phi)/eps
    let lap_phi = grid.laplace(&cur.phi);
    let g: Vec<f64> = (0..n)
        .map(|k| params.epsilon * lap_phi[k] - params.f_well_prime(cur.phi[k]) / params.epsilon)
        .collect();
    let gg = grid.grad(&g, Ghost::Mirror);
    let term_sobolev = (grid.norm_l2(&g).powi(2) + grid.norm_l2_vec(&gg).powi(2)).sqrt();

    // transported log temperature
    let lt: Vec<f64> = cur.theta.iter().map(|t| t.ln()).collect();
    let ltp: Vec<f64> = prev.theta.iter().map(|t| t.ln()).collect();
    let glt = grid.grad(&lt, Ghost::Mirror);
    for k in 0..n {
        work[k] = (lt[k] - ltp[k]) / dt + cur.u.x[k] * glt.x[k] + cur.u.y[k] * glt.y[k];
    }
    let term_logtheta = grid.norm_linf(&work);

    // chemical-potential flux, sup squared and L2
    let mu = chemical_potential(grid, params, &cur.phi, &cur.theta);
    let gmu = grid.grad(&mu, Ghost::Mirror);
    for k in 0..n {
        work[k] = gmu.x[k].hypot(gmu.y[k]);
    }
    let sup_gmu = grid.norm_linf(&work);
    let term_gmu_sq = sup_gmu * sup_gmu;
    let term_gmu_l2 = grid.norm_l2_vec(&gmu);

    // velocity gradient, sup squared (full gradient, as in the viscous terms)
    let gux = grid.grad(&cur.u.x, Ghost::Negate);
    let guy = grid.grad(&cur.u.y, Ghost::Negate);
    for k in 0..n {
        work[k] = (gux.x[k] * gux.x[k]
            + gux.y[k] * gux.y[k]
            + guy.x[k] * guy.x[k]
            + guy.y[k] * guy.y[k])
            .sqrt();
    }
    let sup_sym = grid.norm_linf(&work);
    let term_sym_sq = sup_sym * sup_sym;

    // temperature curvature
    let term_lap_theta = params.kappa0 * grid.norm_linf(&grid.laplace(&cur.theta));

    // growing-conductivity terms (vanish identically when beta = 0)
    let term_kappa1 = if params.kappa1 == 0.0 || params.beta == 0.0 {
        0.0
    } else {
        let a: Vec<f64> = cur
            .theta
            .iter()
            .map(|t| t.powf(0.5 * params.beta))
            .collect();
        let ga = grid.grad(&a, Ghost::Mirror);
        for k in 0..n {
            work[k] = ga.x[k].hypot(ga.y[k]);
        }
        let sup_ga = grid.norm_linf(&work);
        params.kappa1 * (sup_ga * sup_ga + grid.norm_linf(&grid.laplace(&a)))
    };

    term_phase
        + term_sobolev
        + term_logtheta
        + term_gmu_sq
        + term_sym_sq
        + term_lap_theta
        + term_kappa1
        + term_gmu_l2
}

// ---------------------------------------------------------------------------
// residual operator A
// ---------------------------------------------------------------------------

/// The three residual fields of the reference trajectory at one step, with
/// time derivatives taken as backward differences:
/// - `momentum`: velocity-equation residual, projected onto the discretely
///   divergence-free complement (the pairing partner is divergence free, so
///   only that component can register; the projection removes the pressure
///   ambiguity);
/// - `entropy`: residual of the transported entropy -log(theta~) - phi~ with
///   its diffusion and production terms;
/// - `phase`: phase-equation residual in flux form.
///
/// `mu_tilde` is the chemical potential -eps lap(phi~) + F'(phi~)/eps -
/// theta~ the residuals are built from.
pub struct OperatorA {
    pub momentum: VectorField,
    pub entropy: Vec<f64>,
    pub phase: Vec<f64>,
    pub mu_tilde: Vec<f64>,
}

/// Dual Sobolev norm sqrt(<f, w>) with (-lap + id) w = f under the natural
/// boundary condition. The residual rows only enter the inequality paired
/// against first-order-bounded differences, so this is the size that
/// matters; it is also blind to the mesh-frequency wall artifacts that a
/// plain quadrature norm picks up from restriction.
pub fn h1_dual_norm(grid: &Grid, f: &[f64], tol: f64) -> Result<f64, Error> {
    if f.len() != grid.n() {
        return Err(Error::GridMismatch);
    }
    let mut scratch = grid.zeros();
    let apply = |x: &[f64], out: &mut [f64]| {
        grid.laplace_into(x, &mut scratch);
        for k in 0..out.len() {
            out[k] = x[k] - scratch[k];
        }
    };
    let (w, _) = cg(
        apply,
        f,
        &grid.zeros(),
        None,
        false,
        tol,
        10 * grid.n(),
        "sobolev dual norm",
    )?;
    Ok(grid.inner(f, &w).max(0.0).sqrt())
}

/// The three residual row sizes in the dual norm (momentum as the root sum
/// of squares of its components).
pub fn operator_a_dual_norms(
    grid: &Grid,
    a: &OperatorA,
    tol: f64,
) -> Result<(f64, f64, f64), Error> {
    let mx = h1_dual_norm(grid, &a.momentum.x, tol)?;
    let my = h1_dual_norm(grid, &a.momentum.y, tol)?;
    let momentum = mx.hypot(my);
    let entropy = h1_dual_norm(grid, &a.entropy, tol)?;
    let phase = h1_dual_norm(grid, &a.phase, tol)?;
    Ok((momentum, entropy, phase))
}

pub fn operator_a_residual(
    grid: &Grid,
    params: &Params,
    prev: &State,
    cur: &State,
    dt: f64,
    tol: f64,
) -> Result<OperatorA, Error> {
    let n = grid.n();
    let mu_tilde = chemical_potential(grid, params, &cur.phi, &cur.theta);
    let nu: Vec<f64> = cur.theta.iter().map(|&t| params.nu(t)).collect();

    // momentum row: du/dt + (u.grad)u - div(nu grad u) + eps div(grad phi x grad phi)
    let gphi = grid.grad(&cur.phi, Ghost::Mirror);
    let mut a1 = VectorField::zeros(n);
    for (comp, prev_c, cur_c, grow) in [
        (&mut a1.x, &prev.u.x, &cur.u.x, &gphi.x),
        (&mut a1.y, &prev.u.y, &cur.u.y, &gphi.y),
    ] {
        let gx = grid.ddx(cur_c, Ghost::Negate);
        let gy = grid.ddy(cur_c, Ghost::Negate);
        let gr = grid.grad(cur_c, Ghost::Negate);
        let flux = VectorField {
            x: gr.x.iter().zip(&nu).map(|(a, b)| a * b).collect(),
            y: gr.y.iter().zip(&nu).map(|(a, b)| a * b).collect(),
        };
        let visc = grid.div(&flux, Ghost::Mirror);
        let cap_flux = VectorField {
            x: (0..n).map(|k| grow[k] * gphi.x[k]).collect(),
            y: (0..n).map(|k| grow[k] * gphi.y[k]).collect(),
        };
        let cap = grid.div(&cap_flux, Ghost::Negate);
        for k in 0..n {
            comp[k] = (cur_c[k] - prev_c[k]) / dt
                + cur.u.x[k] * gx[k]
                + cur.u.y[k] * gy[k]
                - visc[k]
                + params.epsilon * cap[k];
        }
    }
    let (momentum, _, _) = project_div_free(grid, &a1, &grid.zeros(), tol, 10 * n)?;

    // entropy row: (d/dt + u.grad)(-log theta - phi) + div(kappa grad theta)/theta
    //              + nu |grad u|^2 / theta + |grad mu|^2 / theta
    // (full gradient: the same dissipation form the heat update produces)
    let w: Vec<f64> = (0..n).map(|k| -cur.theta[k].ln() - cur.phi[k]).collect();
    let wp: Vec<f64> = (0..n).map(|k| -prev.theta[k].ln() - prev.phi[k]).collect();
    let gw = grid.grad(&w, Ghost::Mirror);
    let gth = grid.grad(&cur.theta, Ghost::Mirror);
    let kflux = VectorField {
        x: (0..n)
            .map(|k| params.kappa(cur.theta[k]) * gth.x[k])
            .collect(),
        y: (0..n)
            .map(|k| params.kappa(cur.theta[k]) * gth.y[k])
            .collect(),
    };
    let kdiv = grid.div(&kflux, Ghost::Negate);
    let gux = grid.grad(&cur.u.x, Ghost::Negate);
    let guy = grid.grad(&cur.u.y, Ghost::Negate);
    let gmu = grid.grad(&mu_tilde, Ghost::Mirror);
    let mut entropy = grid.zeros();
    for k in 0..n {
        let th = cur.theta[k];
        let sym2 = gux.x[k] * gux.x[k]
            + gux.y[k] * gux.y[k]
            + guy.x[k] * guy.x[k]
            + guy.y[k] * guy.y[k];
        let gmu2 = gmu.x[k] * gmu.x[k] + gmu.y[k] * gmu.y[k];
        entropy[k] = (w[k] - wp[k]) / dt
            + cur.u.x[k] * gw.x[k]
            + cur.u.y[k] * gw.y[k]
            + kdiv[k] / th
            + nu[k] * sym2 / th
            + gmu2 / th;
    }

    // phase row: dphi/dt + div(u phi) - lap(mu)
    let adv = grid.advect_flux(&cur.u, &cur.phi);
    let lap_mu = grid.laplace(&mu_tilde);
    let phase: Vec<f64> = (0..n)
        .map(|k| (cur.phi[k] - prev.phi[k]) / dt + adv[k] - lap_mu[k])
        .collect();

    Ok(OperatorA {
        momentum,
        entropy,
        phase,
        mu_tilde,
    })
}

// ---------------------------------------------------------------------------
// Gronwall verification
// ---------------------------------------------------------------------------

/// Per-step record of the verified inequality. `a_pairing` is the full
/// right-hand-side rate at that step: the inner product of the residual
/// operator with (u~-u, theta~-theta, mu~-mu) plus the dual-norm product
/// M |phi-phi~|_* |A_3|_*. `lhs`/`rhs`/`slack` are evaluated at `k_scale`.
#[derive(Clone, Debug)]
pub struct RelativeEnergyReport {
    pub time: Vec<f64>,
    pub r_value: Vec<f64>,
    pub w_increment: Vec<f64>,
    pub k_weight: Vec<f64>,
    pub a_pairing: Vec<f64>,
    pub dual_norm: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub slack: Vec<f64>,
    pub m_dual: f64,
    pub k_scale: f64,
    /// Smallest scaling of the regularity weight that makes every slack
    /// nonnegative; None when no scaling up to 1e6 does.
    pub k_scale_min: Option<f64>,
    pub max_r: f64,
}

pub const REL_CSV_HEADER: &str =
    "step,time,r_value,w_increment,k_weight,a_pairing,dual_norm,lhs,rhs,slack";

impl RelativeEnergyReport {
    pub fn min_slack(&self) -> f64 {
        self.slack.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REL_CSV_HEADER);
        out.push('\n');
        for i in 0..self.time.len() {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                i,
                self.time[i],
                self.r_value[i],
                self.w_increment[i],
                self.k_weight[i],
                self.a_pairing[i],
                self.dual_norm[i],
                self.lhs[i],
                self.rhs[i],
                self.slack[i]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), Error> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Trapezoidal cumulative integral of the regularity weight.
fn cumulative_k(k_weight: &[f64], dt: f64) -> Vec<f64> {
    let mut c = vec![0.0; k_weight.len()];
    for i in 1..k_weight.len() {
        c[i] = c[i - 1] + 0.5 * dt * (k_weight[i - 1] + k_weight[i]);
    }
    c
}

/// Minimum over horizons of the slack sign indicator for a given weight
/// scale. Both sides are multiplied by exp(-k int_0^t K), which makes every
/// exponent nonpositive, so the evaluation cannot overflow no matter how
/// large k or the weights get; the sign of the slack is unchanged. `w_inc`
/// and `rhs_rate` are the per-step increments (dt included in w_inc, not in
/// rhs_rate); sums are right-endpoint.
fn min_scaled_slack_at(
    k: f64,
    r: &[f64],
    w_inc: &[f64],
    rhs_rate: &[f64],
    cum_k: &[f64],
    dt: f64,
) -> f64 {
    let n = r.len();
    let mut worst = f64::INFINITY;
    for hor in 0..n {
        let mut slack = r[0] - r[hor] * (-k * cum_k[hor]).exp();
        for m in 1..=hor {
            let e = (-k * cum_k[m]).exp();
            slack += (dt * rhs_rate[m] - w_inc[m]) * e;
        }
        worst = worst.min(slack);
    }
    worst
}

/// Verify the relative energy inequality between a candidate trajectory `q`
/// and a reference trajectory `qt` on the same grid and time levels. The
/// report carries the raw per-step quantities, the inequality sides at
/// `k_scale`, and the measured minimal weight scale that closes the
/// inequality at every horizon.
pub fn gronwall_verify(
    grid: &Grid,
    params: &Params,
    q: &Trajectory,
    qt: &Trajectory,
    k_scale: f64,
    tol: f64,
) -> Result<RelativeEnergyReport, Error> {
    if q.states.len() != qt.states.len() {
        return Err(Error::TimeMismatch);
    }
    if (q.dt - qt.dt).abs() > 1e-12 * q.dt.abs().max(qt.dt.abs()) {
        return Err(Error::TimeMismatch);
    }
    for (a, b) in q.states.iter().zip(&qt.states) {
        if (a.time - b.time).abs() > 1e-9 * (1.0 + a.time.abs()) {
            return Err(Error::TimeMismatch);
        }
    }
    let steps = q.states.len();
    let dt = q.dt;
    let m_dual = resolve_m(grid, params, tol)?;

    let mut time = Vec::with_capacity(steps);
    let mut r_value = Vec::with_capacity(steps);
    let mut dual_norm = Vec::with_capacity(steps);
    let mut w_increment = vec![0.0; steps];
    let mut k_weight = vec![0.0; steps];
    let mut a_pairing = vec![0.0; steps];

    for i in 0..steps {
        let parts = relative_energy_parts(grid, params, &q.states[i], &qt.states[i], m_dual, tol)?;
        time.push(q.states[i].time);
        r_value.push(parts.total);
        dual_norm.push(parts.dual_norm);
        if i == 0 {
            continue;
        }
        let (qp, qc) = (&q.states[i], &qt.states[i]);
        w_increment[i] = relative_dissipation_increment(grid, params, qp, qc, dt, false);
        k_weight[i] = regularity_weight(grid, params, &qt.states[i - 1], qc, dt);
        let a = operator_a_residual(grid, params, &qt.states[i - 1], qc, dt, tol)?;
        let n = grid.n();
        let du = VectorField {
            x: (0..n).map(|k| qc.u.x[k] - qp.u.x[k]).collect(),
            y: (0..n).map(|k| qc.u.y[k] - qp.u.y[k]).collect(),
        };
        let dth: Vec<f64> = (0..n).map(|k| qc.theta[k] - qp.theta[k]).collect();
        let dmu: Vec<f64> = (0..n).map(|k| qc.mu[k] - qp.mu[k]).collect();
        let pair = grid.inner_vec(&a.momentum, &du)
            + grid.inner(&a.entropy, &dth)
            + grid.inner(&a.phase, &dmu);
        let a3_dual = dual_norm_zero_mean(grid, &a.phase, tol)?;
        a_pairing[i] = pair + m_dual * dual_norm[i] * a3_dual;
    }
    if steps > 1 {
        k_weight[0] = k_weight[1];
    }
    let cum_k = cumulative_k(&k_weight, dt);

    // sides of the inequality at the requested scale
    let mut lhs = vec![0.0; steps];
    let mut rhs = vec![0.0; steps];
    let mut slack = vec![0.0; steps];
    for hor in 0..steps {
        let mut l = r_value[hor];
        let mut rr = r_value[0] * (k_scale * cum_k[hor]).min(EXP_CLAMP).exp();
        for m in 1..=hor {
            let e = (k_scale * (cum_k[hor] - cum_k[m])).min(EXP_CLAMP).exp();
            l += w_increment[m] * e;
            rr += dt * a_pairing[m] * e;
        }
        lhs[hor] = l;
        rhs[hor] = rr;
        slack[hor] = rr - l;
    }

    // minimal scale closing the inequality at every horizon
    let probe = |k: f64| min_scaled_slack_at(k, &r_value, &w_increment, &a_pairing, &cum_k, dt);
    let k_scale_min = if probe(0.0) >= 0.0 {
        Some(0.0)
    } else {
        let mut hi = 1e-3;
        let mut lo = 0.0;
        loop {
            if probe(hi) >= 0.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if hi > 1e6 {
                break;
            }
        }
        if hi > 1e6 {
            None
        } else {
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if probe(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            Some(hi)
        }
    };

    let max_r = r_value.iter().cloned().fold(0.0, f64::max);
    Ok(RelativeEnergyReport {
        time,
        r_value,
        w_increment,
        k_weight,
        a_pairing,
        dual_norm,
        lhs,
        rhs,
        slack,
        m_dual,
        k_scale,
        k_scale_min,
        max_r,
    })
}

// ---------------------------------------------------------------------------
// weak-strong experiment
// ---------------------------------------------------------------------------

/// Block-restrict a state to a coarser grid. The velocity is re-projected so
/// the restricted field is divergence free in the coarse discrete sense; all
/// scalar fields (including the reported chemical potential) are restricted
/// as they stand.
pub fn restrict_state(
    fine: &Grid,
    coarse: &Grid,
    state: &State,
    tol: f64,
) -> Result<State, Error> {
    let phi = fine.restrict_to(coarse, &state.phi)?;
    let theta = fine.restrict_to(coarse, &state.theta)?;
    let mu = fine.restrict_to(coarse, &state.mu)?;
    let raw = VectorField {
        x: fine.restrict_to(coarse, &state.u.x)?,
        y: fine.restrict_to(coarse, &state.u.y)?,
    };
    let (u, _, _) = project_div_free(coarse, &raw, &coarse.zeros(), tol, 10 * coarse.n())?;
    Ok(State {
        time: state.time,
        phi,
        theta,
        mu,
        u,
        p: coarse.zeros(),
    })
}

/// A candidate trajectory and the restriction of a finer reference run onto
/// its grid, time-aligned and ready for `gronwall_verify` or residual
/// consistency measurements.
pub struct WeakStrongPair {
    pub grid: Grid,
    pub params: Params,
    pub linear_tol: f64,
    pub weak: Trajectory,
    pub reference: Trajectory,
}

/// Run a pair of simulations of the same analytic initial data, one serving
/// as candidate and a finer one as reference, and restrict the reference to
/// the candidate grid at matching times. The candidate runs at
/// max(1, refine_factor/2) times the base resolution (for odd factors, at
/// the base itself), the reference at refine_factor times; both refine
/// together, so the measured distance shrinks as the factor grows. Factor 1
/// pits a run against itself.
pub fn weak_strong_pair(config: &SimConfig, refine_factor: usize) -> Result<WeakStrongPair, Error> {
    if refine_factor == 0 {
        return Err(Error::Config("refine factor must be at least 1".into()));
    }
    if matches!(config.ic, IcSpec::File { .. }) {
        return Err(Error::Config(
            "the weak-strong experiment needs an analytic initial condition \
             that can be sampled on both grids"
                .into(),
        ));
    }
    config.validate()?;
    let weak_scale = if refine_factor > 1 && refine_factor % 2 == 0 {
        refine_factor / 2
    } else {
        1
    };
    let weak_cfg = config.refined(weak_scale);
    let ref_cfg = config.refined(refine_factor);
    let ratio = refine_factor / weak_scale;

    let weak_grid = weak_cfg.grid()?;
    let ref_grid = ref_cfg.grid()?;
    let weak_init = initial_state(&weak_grid, &weak_cfg.params, &weak_cfg.ic, &weak_cfg.scheme)?;
    let ref_init = initial_state(&ref_grid, &ref_cfg.params, &ref_cfg.ic, &ref_cfg.scheme)?;
    let weak_traj = run_collect(&weak_grid, &weak_cfg.params, &weak_cfg.scheme, weak_init)?;
    let ref_traj = run_collect(&ref_grid, &ref_cfg.params, &ref_cfg.scheme, ref_init)?;

    let tol = weak_cfg.scheme.linear_tol;
    let mut states = Vec::with_capacity(weak_traj.states.len());
    for i in 0..weak_traj.states.len() {
        let fine_state = &ref_traj.states[i * ratio];
        let mut s = restrict_state(&ref_grid, &weak_grid, fine_state, tol)?;
        s.time = weak_traj.states[i].time;
        states.push(s);
    }
    let restricted = Trajectory {
        dt: weak_traj.dt,
        states,
    };
    Ok(WeakStrongPair {
        grid: weak_grid,
        params: weak_cfg.params,
        linear_tol: tol,
        weak: weak_traj,
        reference: restricted,
    })
}

/// `weak_strong_pair` followed by the Gronwall verification at unit weight
/// scale. Headline quantities: `max_r` and `k_scale_min`.
pub fn weak_strong_experiment(
    config: &SimConfig,
    refine_factor: usize,
) -> Result<RelativeEnergyReport, Error> {
    let pair = weak_strong_pair(config, refine_factor)?;
    gronwall_verify(
        &pair.grid,
        &pair.params,
        &pair.weak,
        &pair.reference,
        1.0,
        pair.linear_tol,
    )
}

/// Stability experiment: run two configurations that share grid, physics,
/// and time stepping but may differ in initial data, and verify the
/// inequality with the first run as candidate and the second as reference.
/// With distinct initial data R(0) is order one, which conditions the
/// minimal weight scale far better than the near-zero R(0) of the
/// identical-data experiment.
pub fn paired_experiment(
    config_q: &SimConfig,
    config_ref: &SimConfig,
) -> Result<RelativeEnergyReport, Error> {
    config_q.validate()?;
    config_ref.validate()?;
    if (config_q.nx, config_q.ny) != (config_ref.nx, config_ref.ny)
        || config_q.lx != config_ref.lx
        || config_q.ly != config_ref.ly
    {
        return Err(Error::GridMismatch);
    }
    if config_q.scheme.dt != config_ref.scheme.dt
        || config_q.scheme.t_end != config_ref.scheme.t_end
    {
        return Err(Error::TimeMismatch);
    }
    let grid = config_q.grid()?;
    let init_q = initial_state(&grid, &config_q.params, &config_q.ic, &config_q.scheme)?;
    let init_r = initial_state(&grid, &config_ref.params, &config_ref.ic, &config_ref.scheme)?;
    let traj_q = run_collect(&grid, &config_q.params, &config_q.scheme, init_q)?;
    let traj_r = run_collect(&grid, &config_ref.params, &config_ref.scheme, init_r)?;
    gronwall_verify(
        &grid,
        &config_q.params,
        &traj_q,
        &traj_r,
        1.0,
        config_q.scheme.linear_tol,
    )
}

// ---------------------------------------------------------------------------
