//! Semi-implicit splitting scheme for the coupled flow / phase / heat
//! system.
//!
//! Step layout (one step of size dt):
//!
//! 1. linearized convex-splitting phase solve, transported by the
//!    force-corrected velocity u* = u_old - dt phi grad(psi) where psi is
//!    the implicit linearized potential (temperature part excluded; it
//!    re-enters the chemical potential separately),
//! 2. implicit momentum solve started from u* with implicit skew
//!    convection and no explicit force (the capillary and thermal forcing
//!    already live in u*), followed by a Leray projection,
//! 3. implicit heat solve whose matrix is an M-matrix whenever the
//!    positivity precheck passes; its sources reuse the exact gradient
//!    quadratures of the other two solves.
//!
//! The force correction in u* makes the kinetic/capillary exchange cancel
//! exactly: with frozen temperature the discrete free energy
//! kinetic + interface + well is non-increasing at every step, up to the
//! linear-solver residuals. Phase mass is constant (flux-form transport
//! integrates to exactly zero and the mean is restored after the solve),
//! and the projected velocity is discretely divergence-free. Positivity
//! failures of the heat solve trigger two recursive half steps.

use crate::config::{IcSpec, SchemeControls};
use crate::grid::{
    self, bicgstab, probe_diagonal, project_div_free, upwind_advect, upwind_advect_diag,
    upwind_div, upwind_div_diag, FaceVelocities, Ghost, Grid, VectorField,
};
use crate::rng::SplitMix64;
use crate::thermo::Params;
use crate::Error;

/// Complete discrete state at one time level.
#[derive(Clone, Debug)]
pub struct State {
    pub time: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    /// Chemical potential consistent with (phi, theta) of this state.
    pub mu: Vec<f64>,
    pub u: VectorField,
    /// Pressure from the last projection (zero at t = 0).
    pub p: Vec<f64>,
}

/// Per-step diagnostics.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepRecord {
    /// Number of sub-steps actually taken (1 unless positivity retries).
    pub substeps: usize,
    /// Smallest sub-step size used.
    pub min_dt: f64,
    /// How many times a sub-step had to be halved.
    pub positivity_retries: u32,
    /// Total Krylov iterations across all solves.
    pub linear_iters: usize,
    /// Largest post-projection divergence norm seen.
    pub max_div: f64,
}

impl StepRecord {
    fn fresh() -> Self {
        StepRecord {
            min_dt: f64::INFINITY,
            ..StepRecord::default()
        }
    }
}

/// mu = -eps laplace(phi) + (1/eps) F'(phi) - theta.
pub fn chemical_potential(grid: &Grid, params: &Params, phi: &[f64], theta: &[f64]) -> Vec<f64> {
    let lap = grid.laplace(phi);
    (0..grid.n())
        .map(|k| -params.epsilon * lap[k] + params.f_well_prime(phi[k]) / params.epsilon - theta[k])
        .collect()
}

/// Chemical potential as the phase solve sees it: well linearized around the
/// previous phase, temperature still at the previous level. This is the
/// potential whose gradient squared feeds the heat source and whose
/// Laplacian multiplies theta in the heat matrix; the ledger reconstructs it
/// from consecutive states when certifying.
pub fn mu_hat(
    grid: &Grid,
    params: &Params,
    phi_old: &[f64],
    phi_new: &[f64],
    theta_old: &[f64],
) -> Vec<f64> {
    let lap = grid.laplace(phi_new);
    (0..grid.n())
        .map(|k| {
            let lin = params.g_convex_prime(phi_old[k])
                + params.g_convex_second(phi_old[k]) * (phi_new[k] - phi_old[k])
                - 2.0 * params.lambda * phi_old[k];
            -params.epsilon * lap[k] + lin / params.epsilon - theta_old[k]
        })
        .collect()
}

/// Output of the phase solve: new phase, linearized chemical potential, and
/// the force-corrected velocity for the momentum solve.
struct PhaseOutput {
    phi: Vec<f64>,
    mu_hat: Vec<f64>,
    u_star: VectorField,
}

/// Reusable stepping context: one-time stencil-diagonal probes plus the
/// pressure warm start.
pub struct Stepper<'a> {
    pub grid: &'a Grid,
    pub params: &'a Params,
    pub scheme: &'a SchemeControls,
    diag_lap: Vec<f64>,
    diag_bilap: Vec<f64>,
    chi_prev: Vec<f64>,
    max_iter: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(grid: &'a Grid, params: &'a Params, scheme: &'a SchemeControls) -> Stepper<'a> {
        let mut scratch = grid.zeros();
        let diag_lap = probe_diagonal(grid, |x, out| grid.laplace_into(x, out), 2);
        let diag_bilap = probe_diagonal(
            grid,
            |x, out| {
                grid.laplace_into(x, &mut scratch);
                grid.laplace_into(&scratch, out);
            },
            4,
        );
        Stepper {
            grid,
            params,
            scheme,
            diag_lap,
            diag_bilap,
            chi_prev: grid.zeros(),
            max_iter: 10 * grid.n(),
        }
    }

    /// One full step of size scheme.dt (internally subdivided on positivity
    /// failures).
    pub fn step(&mut self, state: &State) -> Result<(State, StepRecord), Error> {
        let mut rec = StepRecord::fresh();
        let new = self.step_dt(state, self.scheme.dt, 0, &mut rec)?;
        Ok((new, rec))
    }

    /// One step with the temperature frozen (phase and momentum only). The
    /// discrete free energy is non-increasing along these steps.
    pub fn step_isothermal(&mut self, state: &State) -> Result<(State, StepRecord), Error> {
        let mut rec = StepRecord::fresh();
        let dt = self.scheme.dt;
        let ph = self.phase_step(state, dt, &mut rec)?;
        let (u_new, p_new) = self.momentum_step(state, &ph.u_star, dt, &mut rec)?;
        let mu_new = chemical_potential(self.grid, self.params, &ph.phi, &state.theta);
        rec.substeps = 1;
        rec.min_dt = dt;
        Ok((
            State {
                time: state.time + dt,
                phi: ph.phi,
                theta: state.theta.clone(),
                mu: mu_new,
                u: u_new,
                p: p_new,
            },
            rec,
        ))
    }

    fn step_dt(
        &mut self,
        state: &State,
        dt: f64,
        depth: u32,
        rec: &mut StepRecord,
    ) -> Result<State, Error> {
        match self.try_single_step(state, dt, rec) {
            Ok(new) => {
                rec.substeps += 1;
                rec.min_dt = rec.min_dt.min(dt);
                Ok(new)
            }
            Err(Error::PositivityLoss { min_theta, step }) => {
                if depth >= 8 {
                    return Err(Error::PositivityLoss { min_theta, step });
                }
                rec.positivity_retries += 1;
                let half = self.step_dt(state, 0.5 * dt, depth + 1, rec)?;
                self.step_dt(&half, 0.5 * dt, depth + 1, rec)
            }
            Err(e) => Err(e),
        }
    }

    fn try_single_step(
        &mut self,
        state: &State,
        dt: f64,
        rec: &mut StepRecord,
    ) -> Result<State, Error> {
        let ph = self.phase_step(state, dt, rec)?;
        let (u_new, p_new) = self.momentum_step(state, &ph.u_star, dt, rec)?;
        let theta_new = self.heat_step(state, &u_new, &ph.mu_hat, dt, rec)?;
        let mu_new = chemical_potential(self.grid, self.params, &ph.phi, &theta_new);
        Ok(State {
            time: state.time + dt,
            phi: ph.phi,
            theta: theta_new,
            mu: mu_new,
            u: u_new,
            p: p_new,
        })
    }

    /// Linearized convex-splitting phase solve, transported by the
    /// force-corrected velocity. Mass is restored to the old mean exactly
    /// after the solve (the correction is of the size of the linear
    /// residual).
    fn phase_step(
        &mut self,
        state: &State,
        dt: f64,
        rec: &mut StepRecord,
    ) -> Result<PhaseOutput, Error> {
        let g = self.grid;
        let n = g.n();
        let p = self.params;
        let eps = p.epsilon;
        let phi_old = &state.phi;
        let gsec: Vec<f64> = phi_old.iter().map(|&y| p.g_convex_second(y)).collect();
        let phi_sq: Vec<f64> = phi_old.iter().map(|&y| y * y).collect();
        // psi = mu_hat + theta_old splits into a part linear in the unknown
        // and a known field r; the force potential is psi + theta_old taken
        // together again below.
        let r_psi: Vec<f64> = (0..n)
            .map(|k| {
                (p.g_convex_prime(phi_old[k])
                    - gsec[k] * phi_old[k]
                    - 2.0 * p.lambda * phi_old[k])
                    / eps
            })
            .collect();
        // Linear-in-x part of psi, shared by the operator and its transport
        // coupling.
        let mut s1 = g.zeros();
        let mut s2 = g.zeros();
        let psi_of = |x: &[f64], psi: &mut Vec<f64>, s: &mut Vec<f64>| {
            g.laplace_into(x, s);
            psi.clear();
            psi.extend((0..x.len()).map(|k| -eps * s[k] + gsec[k] * x[k] / eps));
        };
        let mut psi_buf = Vec::with_capacity(n);
        let apply = |x: &[f64], out: &mut [f64]| {
            psi_of(x, &mut psi_buf, &mut s1);
            g.laplace_into(&psi_buf, &mut s2);
            let gp = g.grad(&psi_buf, Ghost::Mirror);
            let coupled = VectorField {
                x: (0..x.len()).map(|k| phi_sq[k] * gp.x[k]).collect(),
                y: (0..x.len()).map(|k| phi_sq[k] * gp.y[k]).collect(),
            };
            let dcp = g.div(&coupled, Ghost::Negate);
            for k in 0..x.len() {
                out[k] = x[k] / dt - s2[k] - dt * dcp[k];
            }
        };
        // Known pieces: transport by u_old, the r part of psi (diffusion and
        // transport coupling), and the temperature contribution to mu.
        let advect = g.advect_flux(&state.u, phi_old);
        let lap_r = g.laplace(&r_psi);
        let gr = g.grad(&r_psi, Ghost::Mirror);
        let coupled_r = VectorField {
            x: (0..n).map(|k| phi_sq[k] * gr.x[k]).collect(),
            y: (0..n).map(|k| phi_sq[k] * gr.y[k]).collect(),
        };
        let dcr = g.div(&coupled_r, Ghost::Negate);
        let lap_th = g.laplace(&state.theta);
        let b: Vec<f64> = (0..n)
            .map(|k| phi_old[k] / dt - advect[k] + lap_r[k] - lap_th[k] + dt * dcr[k])
            .collect();
        let diag: Vec<f64> = (0..n)
            .map(|k| 1.0 / dt + eps * self.diag_bilap[k] - self.diag_lap[k] * gsec[k] / eps)
            .collect();
        let (mut phi_new, stats) = bicgstab(
            apply,
            &b,
            phi_old,
            Some(&diag),
            self.scheme.linear_tol,
            self.max_iter,
            "phase solve",
        )?;
        rec.linear_iters += stats.iters;
        let shift = grid::mean(phi_old) - grid::mean(&phi_new);
        for v in phi_new.iter_mut() {
            *v += shift;
        }
        // Final potentials and the force-corrected velocity
        // u* = u_old - dt phi grad(psi + theta) = u_old - dt phi grad(mu_hat
        // + 2 theta - theta) ... i.e. the full force -phi grad(mu + theta)
        // folded into the transport velocity.
        let muh = mu_hat(g, p, phi_old, &phi_new, &state.theta);
        let psi_tot: Vec<f64> = (0..n).map(|k| muh[k] + state.theta[k]).collect();
        let gpsi = g.grad(&psi_tot, Ghost::Mirror);
        let u_star = VectorField {
            x: (0..n)
                .map(|k| state.u.x[k] - dt * phi_old[k] * gpsi.x[k])
                .collect(),
            y: (0..n)
                .map(|k| state.u.y[k] - dt * phi_old[k] * gpsi.y[k])
                .collect(),
        };
        Ok(PhaseOutput {
            phi: phi_new,
            mu_hat: muh,
            u_star,
        })
    }

    /// Implicit momentum solve from the force-corrected velocity (implicit
    /// skew convection by u_old, implicit diffusion), then Leray projection.
    /// Returns (velocity, pressure).
    fn momentum_step(
        &mut self,
        state: &State,
        u_star: &VectorField,
        dt: f64,
        rec: &mut StepRecord,
    ) -> Result<(VectorField, Vec<f64>), Error> {
        let g = self.grid;
        let n = g.n();
        let p = self.params;
        let nu: Vec<f64> = state.theta.iter().map(|&t| p.nu(t)).collect();
        let apply = |x: &[f64], out: &mut [f64]| {
            let conv = g.convect_skew(&state.u, x);
            let gr = g.grad(x, Ghost::Negate);
            let w = VectorField {
                x: gr.x.iter().zip(&nu).map(|(a, b)| a * b).collect(),
                y: gr.y.iter().zip(&nu).map(|(a, b)| a * b).collect(),
            };
            let d = g.div(&w, Ghost::Mirror);
            for k in 0..out.len() {
                out[k] = x[k] / dt + conv[k] - d[k];
            }
        };
        let diag = probe_diagonal(g, apply, 2);
        let mut u_tilde = VectorField::zeros(n);
        for (us, x0, dst) in [
            (&u_star.x, &state.u.x, &mut u_tilde.x),
            (&u_star.y, &state.u.y, &mut u_tilde.y),
        ] {
            let b: Vec<f64> = us.iter().map(|v| v / dt).collect();
            let (v, stats) = bicgstab(
                apply,
                &b,
                x0,
                Some(&diag),
                self.scheme.linear_tol,
                self.max_iter,
                "viscous momentum",
            )?;
            rec.linear_iters += stats.iters;
            *dst = v;
        }
        let (u_new, chi, stats) = project_div_free(
            g,
            &u_tilde,
            &self.chi_prev,
            self.scheme.linear_tol,
            self.max_iter,
        )?;
        rec.linear_iters += stats.iters;
        self.chi_prev = chi.clone();
        let div_norm = g.norm_l2(&g.div(&u_new, Ghost::Negate));
        rec.max_div = rec.max_div.max(div_norm);
        let u_scale = g.norm_l2_vec(&u_new).max(1.0);
        if div_norm > self.scheme.div_tol * u_scale {
            return Err(Error::NoConvergence {
                context: "pressure projection (divergence above div_tol)",
                relres: div_norm,
                iters: stats.iters,
            });
        }
        let p_new: Vec<f64> = chi.iter().map(|c| c / dt).collect();
        Ok((u_new, p_new))
    }

    /// Implicit heat solve. The matrix
    /// c(theta_old)/dt + upwind transport + diag(laplace mu_hat) + diffusion
    /// is an M-matrix whenever its diagonal contribution
    /// c/dt + laplace(mu_hat) stays positive; otherwise the step reports a
    /// positivity loss and is retried at half the step size by the caller.
    fn heat_step(
        &mut self,
        state: &State,
        u_new: &VectorField,
        muh: &[f64],
        dt: f64,
        rec: &mut StepRecord,
    ) -> Result<Vec<f64>, Error> {
        let g = self.grid;
        let n = g.n();
        let p = self.params;
        let theta_old = &state.theta;
        let lap_mu = g.laplace(muh);
        let c_h: Vec<f64> = theta_old.iter().map(|&t| p.c_heat(t)).collect();
        let kap: Vec<f64> = theta_old.iter().map(|&t| p.kappa(t)).collect();
        // Positivity precheck: these are the only diagonal entries that can
        // go negative.
        let mut worst = f64::INFINITY;
        for k in 0..n {
            worst = worst.min(c_h[k] / dt + lap_mu[k]);
        }
        if worst <= 0.0 {
            return Err(Error::PositivityLoss {
                min_theta: worst,
                step: 0,
            });
        }
        // Sources: viscous heating with the same gradient quadrature as the
        // momentum operator, |grad mu_hat|^2 matching the phase dissipation,
        // and the optional gamma/theta^3 regularizer (a source near
        // vanishing temperature).
        let gux = g.grad(&u_new.x, Ghost::Negate);
        let guy = g.grad(&u_new.y, Ghost::Negate);
        let gmu = g.grad(muh, Ghost::Mirror);
        let nu: Vec<f64> = theta_old.iter().map(|&t| p.nu(t)).collect();
        let mut rhs = vec![0.0; n];
        for k in 0..n {
            let visc = nu[k]
                * (gux.x[k] * gux.x[k]
                    + gux.y[k] * gux.y[k]
                    + guy.x[k] * guy.x[k]
                    + guy.y[k] * guy.y[k]);
            let chem = gmu.x[k] * gmu.x[k] + gmu.y[k] * gmu.y[k];
            let reg = if p.gamma > 0.0 {
                p.gamma / (theta_old[k] * theta_old[k] * theta_old[k])
            } else {
                0.0
            };
            rhs[k] = c_h[k] * theta_old[k] / dt + visc + chem + reg;
        }
        let faces = FaceVelocities::from_centered(g, u_new);
        let conservative = p.delta == 0.0;
        let mut scratch = g.zeros();
        let apply = |x: &[f64], out: &mut [f64]| {
            if conservative {
                upwind_div(g, &faces, x, &mut scratch);
            } else {
                upwind_advect(g, u_new, x, &mut scratch);
                for k in 0..x.len() {
                    scratch[k] *= c_h[k];
                }
            }
            let gr = g.grad(x, Ghost::Mirror);
            let w = VectorField {
                x: gr.x.iter().zip(&kap).map(|(a, b)| a * b).collect(),
                y: gr.y.iter().zip(&kap).map(|(a, b)| a * b).collect(),
            };
            let dif = g.div(&w, Ghost::Negate);
            for k in 0..x.len() {
                out[k] = c_h[k] * x[k] / dt + scratch[k] + lap_mu[k] * x[k] - dif[k];
            }
        };
        let transport_diag = if conservative {
            upwind_div_diag(g, &faces)
        } else {
            let mut d = upwind_advect_diag(g, u_new);
            for k in 0..n {
                d[k] *= c_h[k];
            }
            d
        };
        let dif_diag = probe_diagonal(
            g,
            |x, out| {
                let gr = g.grad(x, Ghost::Mirror);
                let w = VectorField {
                    x: gr.x.iter().zip(&kap).map(|(a, b)| a * b).collect(),
                    y: gr.y.iter().zip(&kap).map(|(a, b)| a * b).collect(),
                };
                let dif = g.div(&w, Ghost::Negate);
                for k in 0..x.len() {
                    out[k] = -dif[k];
                }
            },
            2,
        );
        let diag: Vec<f64> = (0..n)
            .map(|k| c_h[k] / dt + transport_diag[k] + lap_mu[k] + dif_diag[k])
            .collect();
        let (theta_new, stats) = bicgstab(
            apply,
            &rhs,
            theta_old,
            Some(&diag),
            self.scheme.linear_tol,
            self.max_iter,
            "heat solve",
        )?;
        rec.linear_iters += stats.iters;
        let min_theta = theta_new.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_theta < p.theta_floor {
            return Err(Error::PositivityLoss { min_theta, step: 0 });
        }
        Ok(theta_new)
    }
}

/// Build the initial state for a recipe. Velocities are always projected so
/// every run starts discretely divergence-free.
pub fn initial_state(
    grid: &Grid,
    params: &Params,
    ic: &IcSpec,
    scheme: &SchemeControls,
) -> Result<State, Error> {
    let n = grid.n();
    let (phi, theta, u) = match ic {
        IcSpec::Uniform { phi0, theta0 } => (
            grid.constant(*phi0),
            grid.constant(*theta0),
            VectorField::zeros(n),
        ),
        IcSpec::RandomPhi { phi0, amp, theta0 } => {
            // Band-limited noise: random wall-compatible cosine modes up to
            // wavenumber 4. Grid-scale white noise would dump most of its
            // interface energy into the first implicit solve and ruin every
            // drift diagnostic; resolved noise keeps the start honest and
            // the field refinement-independent.
            let mut r = SplitMix64::new(scheme.seed);
            let pi = std::f64::consts::PI;
            let mut phi = grid.constant(*phi0);
            let kmax = 4usize;
            for p in 0..=kmax {
                for q in 0..=kmax {
                    if p == 0 && q == 0 {
                        continue;
                    }
                    let weight = 1.0 / ((p * p + q * q) as f64).sqrt();
                    let a = amp * weight * (2.0 * r.next_f64() - 1.0);
                    let (kx, ky) = (pi * p as f64 / grid.lx, pi * q as f64 / grid.ly);
                    let mode = grid.sample(|x, y| a * (kx * x).cos() * (ky * y).cos());
                    for k in 0..n {
                        phi[k] += mode[k];
                    }
                }
            }
            (phi, grid.constant(*theta0), VectorField::zeros(n))
        }
        IcSpec::Manufactured {
            phi0,
            amp,
            theta0,
            theta_amp,
            u_amp,
        } => {
            let pi = std::f64::consts::PI;
            let (lx, ly) = (grid.lx, grid.ly);
            let phi = grid.sample(|x, y| phi0 + amp * (pi * x / lx).cos() * (pi * y / ly).cos());
            let theta = grid
                .sample(|x, y| theta0 + theta_amp * (pi * x / lx).cos() * (pi * y / ly).cos());
            // Curl of psi = (u_amp/pi) sin^2(pi x/lx) sin^2(pi y/ly):
            // divergence-free in the continuum and flat at the walls, so the
            // discrete projection only sees a smooth O(h^2) correction.
            let ux = grid.sample(|x, y| {
                u_amp / ly * (pi * x / lx).sin().powi(2) * (2.0 * pi * y / ly).sin()
            });
            let uy = grid.sample(|x, y| {
                -u_amp / lx * (2.0 * pi * x / lx).sin() * (pi * y / ly).sin().powi(2)
            });
            (phi, theta, VectorField { x: ux, y: uy })
        }
        IcSpec::File { path, step } => {
            let load = |name: &str| -> Result<Vec<f64>, Error> {
                let file = path.join(format!("{name}_{step:06}.dat"));
                let (g, _, f) = grid::read_field(&file)?;
                if g != *grid {
                    return Err(Error::GridMismatch);
                }
                Ok(f)
            };
            let phi = load("phi")?;
            let theta = load("theta")?;
            let u = VectorField {
                x: load("ux")?,
                y: load("uy")?,
            };
            (phi, theta, u)
        }
    };
    let min_theta = theta.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_theta <= 0.0 {
        return Err(Error::Config(format!(
            "initial temperature must be positive everywhere (min {min_theta})"
        )));
    }
    let (u, _, _) = project_div_free(grid, &u, &grid.zeros(), scheme.linear_tol, 10 * n)?;
    let mu = chemical_potential(grid, params, &phi, &theta);
    Ok(State {
        time: 0.0,
        phi,
        theta,
        mu,
        u,
        p: grid.zeros(),
    })
}

/// Number of whole steps to reach t_end (dt is authoritative; t_end is
/// rounded to the nearest step count).
pub fn step_count(scheme: &SchemeControls) -> usize {
    (scheme.t_end / scheme.dt).round() as usize
}

/// Drive a run, invoking the observer after every step. The observer sees
/// the 1-based step index, the new state, and the step record.
pub fn run_with<F>(
    grid: &Grid,
    params: &Params,
    scheme: &SchemeControls,
    init: State,
    mut observer: F,
) -> Result<State, Error>
where
    F: FnMut(usize, &State, &StepRecord) -> Result<(), Error>,
{
    let mut stepper = Stepper::new(grid, params, scheme);
    let mut state = init;
    let steps = step_count(scheme);
    for i in 1..=steps {
        let (mut new, rec) = if scheme.isothermal {
            stepper.step_isothermal(&state)?
        } else {
            stepper.step(&state)?
        };
        // Pin the clock to multiples of dt; sub-stepping must not drift it.
        new.time = i as f64 * scheme.dt;
        observer(i, &new, &rec)?;
        state = new;
    }
    Ok(state)
}

/// A stored trajectory at uniform step spacing, index 0 = initial state.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<State>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }
}

/// Run and keep every state (intended for verification-sized runs).
pub fn run_collect(
    grid: &Grid,
    params: &Params,
    scheme: &SchemeControls,
    init: State,
) -> Result<Trajectory, Error> {
    let mut states = vec![init.clone()];
    run_with(grid, params, scheme, init, |_, s, _| {
        states.push(s.clone());
        Ok(())
    })?;
    Ok(Trajectory {
        dt: scheme.dt,
        states,
    })
}
