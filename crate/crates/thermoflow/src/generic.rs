//! Dense assembly of the reversible/irreversible bracket pair on small grids.
//!
//! The evolution splits as q_t = J(q) DE(q) + K(q) DS(q) with q = (s, phi, u):
//! a Poisson operator J that should be antisymmetric and annihilate the
//! entropy gradient, and a dissipative operator K that should be symmetric,
//! positive semidefinite, and annihilate the energy gradient. This module
//! materializes both as dense matrices (capped at 16x16 grids), checks the
//! structural identities, and measures how the discrete residuals behave
//! under refinement.
//!
//! Two assembly routes exist for K on purpose. The operator used everywhere
//! is a weighted Gram product of three difference factors, which makes
//! symmetry and positivity hold by construction while its action on the
//! entropy gradient reproduces the heat/phase/stress target rows through the
//! exact summation-by-parts adjoints. The coupling-term expansion of the same
//! bilinear form (`literal_form`) carries gradient-weighted pieces that are
//! antisymmetric between the two test slots: transcribed term by term it
//! reproduces the same entropy action but breaks operator symmetry whenever
//! the temperature varies. `check_transcription` measures both facts and
//! reports them instead of repairing the expansion silently.

use crate::grid::{project_div_free, Ghost, Grid, VectorField};
use crate::rng::SplitMix64;
use crate::solver::{chemical_potential, State};
use crate::thermo::Params;
use crate::Error;

/// Dense assembly refuses grids beyond this edge length; the checks are
/// structural identities and gain nothing from scale.
pub const BRACKET_GRID_LIMIT: usize = 16;

fn check_budget(grid: &Grid) -> Result<(), Error> {
    if grid.nx > BRACKET_GRID_LIMIT || grid.ny > BRACKET_GRID_LIMIT {
        return Err(Error::BudgetExceeded {
            nx: grid.nx,
            ny: grid.ny,
        });
    }
    Ok(())
}

// ----- state ----------------------------------------------------------------

/// State in entropic variables. Temperature is derived pointwise from
/// (s, phi) and stays positive: the exponential branch by construction, the
/// power-law branch through the `theta_floor` guard. The velocity is kept in
/// the discrete divergence-free subspace.
#[derive(Clone, Debug)]
pub struct GenericState {
    pub s: Vec<f64>,
    pub phi: Vec<f64>,
    pub u: VectorField,
    /// theta(s, phi) pointwise.
    pub theta: Vec<f64>,
    /// Chemical potential of (phi, theta); cached because both brackets and
    /// the energy gradient need it.
    pub mu: Vec<f64>,
}

impl GenericState {
    pub fn new(
        grid: &Grid,
        params: &Params,
        s: Vec<f64>,
        phi: Vec<f64>,
        u: VectorField,
    ) -> Result<Self, Error> {
        let n = grid.n();
        if s.len() != n || phi.len() != n || u.x.len() != n || u.y.len() != n {
            return Err(Error::GridMismatch);
        }
        let mut theta = vec![0.0; n];
        for k in 0..n {
            let t = if params.delta == 0.0 {
                (s[k] - phi[k]).exp()
            } else {
                let arg = params.delta * (s[k] - phi[k]);
                if arg > 0.0 {
                    arg.powf(1.0 / params.delta).max(params.theta_floor)
                } else {
                    params.theta_floor
                }
            };
            if !t.is_finite() || t <= 0.0 {
                return Err(Error::PositivityLoss {
                    min_theta: t,
                    step: 0,
                });
            }
            theta[k] = t;
        }
        let (u, _, _) = project_div_free(grid, &u, &grid.zeros(), 1e-12, 40 * n, )?;
        let mu = chemical_potential(grid, params, &phi, &theta);
        Ok(GenericState { s, phi, u, theta, mu })
    }

    /// Entropic-variable view of a solver state: s = -f'(theta) + phi.
    pub fn from_primitive(grid: &Grid, params: &Params, state: &State) -> Result<Self, Error> {
        let s: Vec<f64> = state
            .theta
            .iter()
            .zip(&state.phi)
            .map(|(&t, &p)| params.entropy_density(t, p))
            .collect();
        GenericState::new(grid, params, s, state.phi.clone(), state.u.clone())
    }

    pub fn dim(&self) -> usize {
        4 * self.s.len()
    }
}

/// Deterministic smooth probe state. The scalar fields are low-mode cosine
/// sums (zero normal derivative at the walls), the velocity is the curl of a
/// squared-sine stream function (divergence-free and flat at the walls), and
/// the coefficients depend only on the seed, so the same seed yields the same
/// continuum fields on every grid; refinement scans stay coherent.
pub fn probe_state(
    grid: &Grid,
    params: &Params,
    seed: u64,
    amp: f64,
) -> Result<GenericState, Error> {
    let mut r = SplitMix64::new(seed);
    let mut scalar_coefs = || {
        let mut c = Vec::new();
        for p in 0..=3usize {
            for q in 0..=3usize {
                if p == 0 && q == 0 {
                    continue;
                }
                c.push((p as f64, q as f64, r.uniform(-1.0, 1.0) / (1 + p * p + q * q) as f64));
            }
        }
        c
    };
    let cs = scalar_coefs();
    let cp = scalar_coefs();
    let mut cpsi = Vec::new();
    for p in 1..=2usize {
        for q in 1..=2usize {
            cpsi.push((p as f64, q as f64, r.uniform(-1.0, 1.0)));
        }
    }
    let pi = std::f64::consts::PI;
    let (lx, ly) = (grid.lx, grid.ly);
    let eval = |c: &[(f64, f64, f64)], x: f64, y: f64| {
        c.iter()
            .map(|&(p, q, a)| a * (p * pi * x / lx).cos() * (q * pi * y / ly).cos())
            .sum::<f64>()
    };
    let s = grid.sample(|x, y| amp * eval(&cs, x, y));
    let phi = grid.sample(|x, y| amp * eval(&cp, x, y));
    let ux = grid.sample(|x, y| {
        amp * cpsi
            .iter()
            .map(|&(p, q, a)| {
                a * (p * pi * x / lx).sin().powi(2) * (q * pi / ly) * (2.0 * q * pi * y / ly).sin()
            })
            .sum::<f64>()
    });
    let uy = grid.sample(|x, y| {
        -amp * cpsi
            .iter()
            .map(|&(p, q, a)| {
                a * (p * pi / lx) * (2.0 * p * pi * x / lx).sin() * (q * pi * y / ly).sin().powi(2)
            })
            .sum::<f64>()
    });
    GenericState::new(grid, params, s, phi, VectorField { x: ux, y: uy })
}

// ----- gradients -------------------------------------------------------------

/// Energy gradient blocks (theta, mu, u). The duality pairing carries the
/// cell measure, so entries are plain pointwise values.
pub fn gradient_e(q: &GenericState) -> Vec<f64> {
    let n = q.s.len();
    let mut out = Vec::with_capacity(4 * n);
    out.extend_from_slice(&q.theta);
    out.extend_from_slice(&q.mu);
    out.extend_from_slice(&q.u.x);
    out.extend_from_slice(&q.u.y);
    out
}

/// Entropy gradient blocks (1, 0, 0); the pairing carries the cell measure,
/// so the s-block stays identically one.
pub fn gradient_s(q: &GenericState) -> Vec<f64> {
    let n = q.s.len();
    let mut out = vec![1.0; n];
    out.extend(std::iter::repeat(0.0).take(3 * n));
    out
}

// ----- dense operators -------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BracketKind {
    Poisson,
    Dissipative,
}

/// Dense bracket matrix acting on flat [s | phi | ux | uy] vectors. The
/// bilinear form pairs through the cell measure: <eta, A zeta> =
/// h^2 eta' A zeta.
#[derive(Clone, Debug)]
pub struct BracketOperator {
    pub kind: BracketKind,
    pub dim: usize,
    /// Row-major dense entries.
    pub a: Vec<f64>,
}

impl BracketOperator {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; d];
        for i in 0..d {
            let row = &self.a[i * d..(i + 1) * d];
            out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// ||A + A'|| for Poisson, ||A - A'|| for dissipative, relative to ||A||.
    /// Zero up to rounding by construction; a nonzero value means the
    /// assembly itself is broken.
    pub fn structure_defect(&self) -> f64 {
        let d = self.dim;
        let sign = match self.kind {
            BracketKind::Poisson => 1.0,
            BracketKind::Dissipative => -1.0,
        };
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let v = self.a[i * d + j] + sign * self.a[j * d + i];
                acc += v * v;
            }
        }
        let norm = self.frobenius();
        if norm == 0.0 {
            0.0
        } else {
            acc.sqrt() / norm
        }
    }
}

// ----- dense Leray projector -------------------------------------------------

/// In-place lower Cholesky factor of a symmetric positive definite matrix.
fn cholesky(a: &mut [f64], n: usize) {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        assert!(d > 0.0, "projector normal matrix lost definiteness");
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / d;
        }
    }
}

fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Dense discrete Leray projector P = I + G (-L + ones/n)^{-1} D on stacked
/// (ux, uy) vectors, with G the Mirror gradient, D the Negate divergence and
/// L = D G the compact Laplacian. The rank-one shift pins the mean, which is
/// exact because D maps into mean-zero fields. Symmetric because G and -D are
/// exact adjoints; the final averaging removes only rounding noise.
pub fn leray_matrix(grid: &Grid) -> Result<Vec<f64>, Error> {
    check_budget(grid)?;
    let n = grid.n();
    let m = 2 * n;
    // A = -L + ones/n, factored once.
    let mut a = vec![0.0; n * n];
    let mut e = grid.zeros();
    for j in 0..n {
        e[j] = 1.0;
        let col = grid.laplace(&e);
        e[j] = 0.0;
        for i in 0..n {
            a[i * n + j] = -col[i] + 1.0 / n as f64;
        }
    }
    cholesky(&mut a, n);
    let mut p = vec![0.0; m * m];
    let mut rhs = vec![0.0; n];
    for j in 0..m {
        let basis = VectorField {
            x: (0..n).map(|k| if j < n && k == j { 1.0 } else { 0.0 }).collect(),
            y: (0..n).map(|k| if j >= n && k == j - n { 1.0 } else { 0.0 }).collect(),
        };
        let d = grid.div(&basis, Ghost::Negate);
        rhs.copy_from_slice(&d);
        chol_solve(&a, n, &mut rhs);
        let g = grid.grad(&rhs, Ghost::Mirror);
        for i in 0..n {
            p[i * m + j] = g.x[i] + if i == j { 1.0 } else { 0.0 };
            p[(n + i) * m + j] = g.y[i] + if n + i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (p[i * m + j] + p[j * m + i]);
            p[i * m + j] = v;
            p[j * m + i] = v;
        }
    }
    Ok(p)
}

// ----- J assembly ------------------------------------------------------------

/// Poisson bracket. Off-diagonal blocks are pointwise multiplications by the
/// state gradients (antisymmetric in exact pairs by layout), the velocity
/// block is the skew-symmetrized convection, and the whole operator is
/// conjugated with the Leray projector so that gradient fields in the
/// velocity rows are annihilated; that conjugation is what makes J DS vanish.
/// The final explicit skew pass removes rounding noise only.
pub fn assemble_j(grid: &Grid, q: &GenericState) -> Result<BracketOperator, Error> {
    check_budget(grid)?;
    let n = grid.n();
    let dim = 4 * n;
    let gs = grid.grad(&q.s, Ghost::Mirror);
    let gp = grid.grad(&q.phi, Ghost::Mirror);
    let mut a = vec![0.0; dim * dim];
    // Multiplication blocks: rows s and phi against velocity columns, and
    // their exact negatives transposed.
    for k in 0..n {
        a[k * dim + 2 * n + k] = -gs.x[k];
        a[k * dim + 3 * n + k] = -gs.y[k];
        a[(n + k) * dim + 2 * n + k] = -gp.x[k];
        a[(n + k) * dim + 3 * n + k] = -gp.y[k];
        a[(2 * n + k) * dim + k] = gs.x[k];
        a[(3 * n + k) * dim + k] = gs.y[k];
        a[(2 * n + k) * dim + n + k] = gp.x[k];
        a[(3 * n + k) * dim + n + k] = gp.y[k];
    }
    // Convection block, one scalar copy per velocity component.
    let mut e = grid.zeros();
    for j in 0..n {
        e[j] = 1.0;
        let c = grid.convect_skew(&q.u, &e);
        e[j] = 0.0;
        for i in 0..n {
            a[(2 * n + i) * dim + 2 * n + j] = c[i];
            a[(3 * n + i) * dim + 3 * n + j] = c[i];
        }
    }
    // Conjugate the velocity rows and columns with the projector.
    let p = leray_matrix(grid)?;
    let m = 2 * n;
    // Columns: A[:, u] <- A[:, u] P.
    let mut row = vec![0.0; m];
    for i in 0..dim {
        for (jj, r) in row.iter_mut().enumerate() {
            *r = a[i * dim + 2 * n + jj];
        }
        for j in 0..m {
            let mut v = 0.0;
            for k in 0..m {
                v += row[k] * p[k * m + j];
            }
            a[i * dim + 2 * n + j] = v;
        }
    }
    // Rows: A[u, :] <- P A[u, :].
    let mut col = vec![0.0; m];
    for j in 0..dim {
        for (ii, c) in col.iter_mut().enumerate() {
            *c = a[(2 * n + ii) * dim + j];
        }
        for i in 0..m {
            let mut v = 0.0;
            for k in 0..m {
                v += p[i * m + k] * col[k];
            }
            a[(2 * n + i) * dim + j] = v;
        }
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let v = 0.5 * (a[i * dim + j] - a[j * dim + i]);
            a[i * dim + j] = v;
            a[j * dim + i] = -v;
        }
        a[i * dim + i] = 0.0;
    }
    Ok(BracketOperator {
        kind: BracketKind::Poisson,
        dim,
        a,
    })
}

// ----- K assembly ------------------------------------------------------------

/// State-dependent fields shared by the Gram assembly, the literal form and
/// the target vector.
struct KContext {
    glt: VectorField,
    gmu: VectorField,
    gth: VectorField,
    /// Symmetric velocity gradient (xx, xy, yy).
    sxx: Vec<f64>,
    sxy: Vec<f64>,
    syy: Vec<f64>,
    kappa: Vec<f64>,
    nu: Vec<f64>,
}

impl KContext {
    fn new(grid: &Grid, params: &Params, q: &GenericState) -> Self {
        let lt: Vec<f64> = q.theta.iter().map(|t| t.ln()).collect();
        let glt = grid.grad(&lt, Ghost::Mirror);
        let gmu = grid.grad(&q.mu, Ghost::Mirror);
        let gth = grid.grad(&q.theta, Ghost::Mirror);
        let (sxx, sxy, syy) = grid.sym_grad(&q.u);
        let kappa = q.theta.iter().map(|&t| params.kappa(t)).collect();
        let nu = q.theta.iter().map(|&t| params.nu(t)).collect();
        KContext {
            glt,
            gmu,
            gth,
            sxx,
            sxy,
            syy,
            kappa,
            nu,
        }
    }
}

/// Apply the dissipative operator to one flat vector through its Gram
/// factors: R1 z = grad z1 - z1 grad(log theta), R2 z = theta grad z2 -
/// z1 grad(mu), R3 z = theta sym(grad z3) - z1 sym(grad u), with weights
/// kappa, 1/theta, nu/theta. Adjoints are taken through the exact
/// summation-by-parts pairs, so the assembled matrix is symmetric up to
/// rounding and its quadratic form is a sum of weighted squares.
fn apply_k(grid: &Grid, ctx: &KContext, q: &GenericState, z: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let sqrt2 = std::f64::consts::SQRT_2;
    let (z1, rest) = z.split_at(n);
    let (z2, zu) = rest.split_at(n);
    let zu = VectorField {
        x: zu[..n].to_vec(),
        y: zu[n..].to_vec(),
    };
    let mut out = vec![0.0; 4 * n];

    // R1 with weight kappa.
    let g1 = grid.grad(z1, Ghost::Mirror);
    let mut w = VectorField {
        x: (0..n).map(|k| ctx.kappa[k] * (g1.x[k] - z1[k] * ctx.glt.x[k])).collect(),
        y: (0..n).map(|k| ctx.kappa[k] * (g1.y[k] - z1[k] * ctx.glt.y[k])).collect(),
    };
    let dv = grid.div(&w, Ghost::Negate);
    for k in 0..n {
        out[k] += -dv[k] - (ctx.glt.x[k] * w.x[k] + ctx.glt.y[k] * w.y[k]);
    }

    // R2 with weight 1/theta.
    let g2 = grid.grad(z2, Ghost::Mirror);
    w = VectorField {
        x: (0..n)
            .map(|k| (q.theta[k] * g2.x[k] - z1[k] * ctx.gmu.x[k]) / q.theta[k])
            .collect(),
        y: (0..n)
            .map(|k| (q.theta[k] * g2.y[k] - z1[k] * ctx.gmu.y[k]) / q.theta[k])
            .collect(),
    };
    let tw = VectorField {
        x: (0..n).map(|k| q.theta[k] * w.x[k]).collect(),
        y: (0..n).map(|k| q.theta[k] * w.y[k]).collect(),
    };
    let dv = grid.div(&tw, Ghost::Negate);
    for k in 0..n {
        out[k] += -(ctx.gmu.x[k] * w.x[k] + ctx.gmu.y[k] * w.y[k]);
        out[n + k] += -dv[k];
    }

    // R3 with weight nu/theta, Voigt components (xx, yy, sqrt2 * xy).
    let (zxx, zxy, zyy) = grid.sym_grad(&zu);
    let w1: Vec<f64> = (0..n)
        .map(|k| ctx.nu[k] / q.theta[k] * (q.theta[k] * zxx[k] - z1[k] * ctx.sxx[k]))
        .collect();
    let w2: Vec<f64> = (0..n)
        .map(|k| ctx.nu[k] / q.theta[k] * (q.theta[k] * zyy[k] - z1[k] * ctx.syy[k]))
        .collect();
    let w3: Vec<f64> = (0..n)
        .map(|k| ctx.nu[k] / q.theta[k] * sqrt2 * (q.theta[k] * zxy[k] - z1[k] * ctx.sxy[k]))
        .collect();
    for k in 0..n {
        out[k] -= ctx.sxx[k] * w1[k] + ctx.syy[k] * w2[k] + sqrt2 * ctx.sxy[k] * w3[k];
    }
    let tw1: Vec<f64> = (0..n).map(|k| q.theta[k] * w1[k]).collect();
    let tw2: Vec<f64> = (0..n).map(|k| q.theta[k] * w2[k]).collect();
    let tw3: Vec<f64> = (0..n).map(|k| q.theta[k] * w3[k] / sqrt2).collect();
    let dxx = grid.ddx(&tw1, Ghost::Mirror);
    let dyy = grid.ddy(&tw2, Ghost::Mirror);
    let dxy_y = grid.ddy(&tw3, Ghost::Mirror);
    let dxy_x = grid.ddx(&tw3, Ghost::Mirror);
    for k in 0..n {
        out[2 * n + k] += -dxx[k] - dxy_y[k];
        out[3 * n + k] += -dyy[k] - dxy_x[k];
    }
    out
}

/// Dissipative bracket, assembled column by column from the Gram factors.
/// The explicit symmetrization removes rounding noise only; the structure is
/// in the factors.
pub fn assemble_k(grid: &Grid, params: &Params, q: &GenericState) -> Result<BracketOperator, Error> {
    check_budget(grid)?;
    let n = grid.n();
    let dim = 4 * n;
    let ctx = KContext::new(grid, params, q);
    let mut a = vec![0.0; dim * dim];
    let mut e = vec![0.0; dim];
    for j in 0..dim {
        e[j] = 1.0;
        let col = apply_k(grid, &ctx, q, &e);
        e[j] = 0.0;
        for i in 0..dim {
            a[i * dim + j] = col[i];
        }
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let v = 0.5 * (a[i * dim + j] + a[j * dim + i]);
            a[i * dim + j] = v;
            a[j * dim + i] = v;
        }
    }
    Ok(BracketOperator {
        kind: BracketKind::Dissipative,
        dim,
        a,
    })
}

// ----- displayed action target and literal form ------------------------------

/// The displayed action of the dissipative bracket on the entropy gradient:
/// (kappa |grad log theta|^2 + nu |sym grad u|^2 / theta + |grad mu|^2 / theta
/// + div(kappa grad log theta); lap mu; div(nu sym grad u)). Divergences of
/// flux fields use the Negate ghost (the exact adjoint of the Mirror
/// gradient); the stress divergence uses the Mirror ghost on the stress
/// components (the exact adjoint of the Negate velocity gradient).
pub fn entropy_action_target(grid: &Grid, params: &Params, q: &GenericState) -> Vec<f64> {
    let n = grid.n();
    let ctx = KContext::new(grid, params, q);
    let mut out = vec![0.0; 4 * n];
    let flux = VectorField {
        x: (0..n).map(|k| ctx.kappa[k] * ctx.glt.x[k]).collect(),
        y: (0..n).map(|k| ctx.kappa[k] * ctx.glt.y[k]).collect(),
    };
    let dflux = grid.div(&flux, Ghost::Negate);
    for k in 0..n {
        let s2 = ctx.sxx[k] * ctx.sxx[k] + 2.0 * ctx.sxy[k] * ctx.sxy[k] + ctx.syy[k] * ctx.syy[k];
        let glt2 = ctx.glt.x[k] * ctx.glt.x[k] + ctx.glt.y[k] * ctx.glt.y[k];
        let gmu2 = ctx.gmu.x[k] * ctx.gmu.x[k] + ctx.gmu.y[k] * ctx.gmu.y[k];
        out[k] = ctx.kappa[k] * glt2 + (ctx.nu[k] * s2 + gmu2) / q.theta[k] + dflux[k];
    }
    let lap_mu = grid.laplace(&q.mu);
    out[n..2 * n].copy_from_slice(&lap_mu);
    let txx: Vec<f64> = (0..n).map(|k| ctx.nu[k] * ctx.sxx[k]).collect();
    let txy: Vec<f64> = (0..n).map(|k| ctx.nu[k] * ctx.sxy[k]).collect();
    let tyy: Vec<f64> = (0..n).map(|k| ctx.nu[k] * ctx.syy[k]).collect();
    let ax = grid.ddx(&txx, Ghost::Mirror);
    let ay = grid.ddy(&txy, Ghost::Mirror);
    let bx = grid.ddx(&txy, Ghost::Mirror);
    let by = grid.ddy(&tyy, Ghost::Mirror);
    for k in 0..n {
        out[2 * n + k] = ax[k] + ay[k];
        out[3 * n + k] = bx[k] + by[k];
    }
    out
}

/// Quadrature of the displayed coupling-term expansion of the dissipative
/// form, transcribed term by term. Kept as a diagnostic: its action on the
/// entropy gradient matches `entropy_action_target`, but the
/// temperature-gradient terms in the phase-phase and velocity-velocity
/// groups are antisymmetric between the slots, so the expansion is not a
/// symmetric form; `check_transcription` reports the defect.
pub fn literal_form(
    grid: &Grid,
    params: &Params,
    q: &GenericState,
    eta: &[f64],
    zeta: &[f64],
) -> f64 {
    let ctx = KContext::new(grid, params, q);
    literal_form_ctx(grid, &ctx, q, eta, zeta)
}

fn literal_form_ctx(grid: &Grid, ctx: &KContext, q: &GenericState, eta: &[f64], zeta: &[f64]) -> f64 {
    let n = grid.n();
    let (e1, erest) = eta.split_at(n);
    let (e2, eu) = erest.split_at(n);
    let eu = VectorField {
        x: eu[..n].to_vec(),
        y: eu[n..].to_vec(),
    };
    let (z1, zrest) = zeta.split_at(n);
    let (z2, zu) = zrest.split_at(n);
    let zu = VectorField {
        x: zu[..n].to_vec(),
        y: zu[n..].to_vec(),
    };
    let ge1 = grid.grad(e1, Ghost::Mirror);
    let ge2 = grid.grad(e2, Ghost::Mirror);
    let gz1 = grid.grad(z1, Ghost::Mirror);
    let gz2 = grid.grad(z2, Ghost::Mirror);
    let (sexx, sexy, seyy) = grid.sym_grad(&eu);
    let (szxx, szxy, szyy) = grid.sym_grad(&zu);
    // S : (a tensor b) for the symmetric S stored as (xx, xy, yy).
    let sdot = |sxx: f64, sxy: f64, syy: f64, ax: f64, ay: f64, bx: f64, by: f64| {
        sxx * ax * bx + sxy * (ax * by + ay * bx) + syy * ay * by
    };
    let frob = |axx: f64, axy: f64, ayy: f64, bxx: f64, bxy: f64, byy: f64| {
        axx * bxx + 2.0 * axy * bxy + ayy * byy
    };
    let mut acc = 0.0;
    for k in 0..n {
        let th = q.theta[k];
        let (kap, nu) = (ctx.kappa[k], ctx.nu[k]);
        let (ltx, lty) = (ctx.glt.x[k], ctx.glt.y[k]);
        let (mux, muy) = (ctx.gmu.x[k], ctx.gmu.y[k]);
        let (thx, thy) = (ctx.gth.x[k], ctx.gth.y[k]);
        let (sxx, sxy, syy) = (ctx.sxx[k], ctx.sxy[k], ctx.syy[k]);
        let s2 = sxx * sxx + 2.0 * sxy * sxy + syy * syy;
        let glt2 = ltx * ltx + lty * lty;
        let gmu2 = mux * mux + muy * muy;
        let mu = q.mu[k];
        let (ux, uy) = (q.u.x[k], q.u.y[k]);
        let (e1k, e2k, z1k, z2k) = (e1[k], e2[k], z1[k], z2[k]);
        let (ge1x, ge1y) = (ge1.x[k], ge1.y[k]);
        let (ge2x, ge2y) = (ge2.x[k], ge2.y[k]);
        let (gz1x, gz1y) = (gz1.x[k], gz1.y[k]);
        let (gz2x, gz2y) = (gz2.x[k], gz2.y[k]);
        let (eux, euy) = (eu.x[k], eu.y[k]);
        let (zux, zuy) = (zu.x[k], zu.y[k]);

        // Diagonal production density.
        acc += e1k * z1k * (kap * glt2 + (nu * s2 + gmu2) / th);
        // Temperature block.
        acc += kap * (ge1x * gz1x + ge1y * gz1y
            - (ge1x * ltx + ge1y * lty) * z1k
            - e1k * (ltx * gz1x + lty * gz1y));
        // Temperature-phase coupling and its mirror.
        acc += -(ge1x * mux + ge1y * muy) * z2k - e1k * (mux * gz2x + muy * gz2y)
            + mu * (ge1x * gz2x + ge1y * gz2y);
        acc += -(ge2x * mux + ge2y * muy) * z1k - e2k * (mux * gz1x + muy * gz1y)
            + mu * (ge2x * gz1x + ge2y * gz1y);
        // Temperature-velocity coupling and its mirror.
        acc += -nu
            * (sdot(sxx, sxy, syy, ge1x, ge1y, zux, zuy)
                + e1k * frob(sxx, sxy, syy, szxx[k], szxy[k], szyy[k])
                - sdot(szxx[k], szxy[k], szyy[k], ge1x, ge1y, ux, uy));
        acc += -nu
            * (frob(sexx[k], sexy[k], seyy[k], sxx, sxy, syy) * z1k
                + sdot(sxx, sxy, syy, gz1x, gz1y, eux, euy)
                - sdot(sexx[k], sexy[k], seyy[k], gz1x, gz1y, ux, uy));
        // Phase block.
        acc += -(ge2x * thx + ge2y * thy) * z2k
            + e2k * (thx * gz2x + thy * gz2y)
            + th * (ge2x * gz2x + ge2y * gz2y);
        // Velocity block.
        acc += -nu
            * (sdot(sexx[k], sexy[k], seyy[k], thx, thy, zux, zuy)
                - sdot(szxx[k], szxy[k], szyy[k], thx, thy, eux, euy)
                - th * frob(sexx[k], sexy[k], seyy[k], szxx[k], szxy[k], szyy[k]));
    }
    acc * grid.cell_volume()
}

/// Agreement between the assembled operator, the literal expansion, and the
/// displayed entropy action, plus the symmetry defect of the literal
/// expansion. All residuals are relative.
#[derive(Clone, Debug)]
pub struct TranscriptionReport {
    /// ||K DS - target|| / ||target|| for the Gram-assembled operator.
    pub target_residual: f64,
    /// Same for the action computed from the literal expansion.
    pub literal_target_residual: f64,
    /// max |B(eta, zeta) - B(zeta, eta)| / max(|B|, |B'|) over probe pairs for
    /// the literal expansion. Proportional to the temperature gradient; zero
    /// only on isothermal states.
    pub literal_symmetry_defect: f64,
    /// ||K - K'|| / ||K|| for the assembled operator (rounding-level).
    pub operator_symmetry_defect: f64,
}

pub fn check_transcription(
    grid: &Grid,
    params: &Params,
    q: &GenericState,
) -> Result<TranscriptionReport, Error> {
    let n = grid.n();
    let dim = 4 * n;
    let k_op = assemble_k(grid, params, q)?;
    let ds = gradient_s(q);
    let target = entropy_action_target(grid, params, q);
    let applied = k_op.apply(&ds);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = applied.iter().zip(&target).map(|(a, b)| a - b).collect();
    let target_residual = norm(&diff) / norm(&target);

    let ctx = KContext::new(grid, params, q);
    let h2 = grid.cell_volume();
    let mut literal_rows = vec![0.0; dim];
    let mut e = vec![0.0; dim];
    for (i, row) in literal_rows.iter_mut().enumerate() {
        e[i] = 1.0;
        *row = literal_form_ctx(grid, &ctx, q, &e, &ds) / h2;
        e[i] = 0.0;
    }
    let ldiff: Vec<f64> = literal_rows.iter().zip(&target).map(|(a, b)| a - b).collect();
    let literal_target_residual = norm(&ldiff) / norm(&target);

    let mut r = SplitMix64::new(0x6272616b);
    let mut defect: f64 = 0.0;
    for _ in 0..8 {
        let eta: Vec<f64> = (0..dim).map(|_| r.uniform(-1.0, 1.0)).collect();
        let zeta: Vec<f64> = (0..dim).map(|_| r.uniform(-1.0, 1.0)).collect();
        let fwd = literal_form_ctx(grid, &ctx, q, &eta, &zeta);
        let bwd = literal_form_ctx(grid, &ctx, q, &zeta, &eta);
        let scale = fwd.abs().max(bwd.abs()).max(1e-300);
        defect = defect.max((fwd - bwd).abs() / scale);
    }
    Ok(TranscriptionReport {
        target_residual,
        literal_target_residual,
        literal_symmetry_defect: defect,
        operator_symmetry_defect: k_op.structure_defect(),
    })
}

// ----- degeneracy and rate checks ---------------------------------------------

/// Relative degeneracy residuals (||J DS|| / ||J||, ||K DE|| / (||K|| ||DE||)).
/// The first is exact up to the projector solve; the second is a
/// discretization commutator that shrinks under refinement (the continuum
/// value vanishes pointwise), so only uniform states reach rounding level.
pub fn check_noninteraction(
    grid: &Grid,
    params: &Params,
    q: &GenericState,
) -> Result<(f64, f64), Error> {
    let j = assemble_j(grid, q)?;
    let k = assemble_k(grid, params, q)?;
    let ds = gradient_s(q);
    let de = gradient_e(q);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let jds = norm(&j.apply(&ds)) / j.frobenius().max(1e-300);
    let kde = norm(&k.apply(&de)) / (k.frobenius() * norm(&de)).max(1e-300);
    Ok((jds, kde))
}

/// Energy and entropy production of the bracket flow q_t = J DE + K DS:
/// dE = <DE, q_t> (zero up to the degeneracy residuals) and dS = <DS, q_t>
/// (nonnegative up to rounding, because <DS, J DE> = -<J DS, DE> and
/// <DS, K DS> is the Gram quadratic form).
pub fn check_rates(grid: &Grid, params: &Params, q: &GenericState) -> Result<(f64, f64), Error> {
    let j = assemble_j(grid, q)?;
    let k = assemble_k(grid, params, q)?;
    let ds = gradient_s(q);
    let de = gradient_e(q);
    let mut flow = j.apply(&de);
    for (f, kv) in flow.iter_mut().zip(k.apply(&ds)) {
        *f += kv;
    }
    let h2 = grid.cell_volume();
    let de_rate = h2 * de.iter().zip(&flow).map(|(a, b)| a * b).sum::<f64>();
    let ds_rate = h2 * ds.iter().zip(&flow).map(|(a, b)| a * b).sum::<f64>();
    Ok((de_rate, ds_rate))
}

// ----- aggregate report -------------------------------------------------------

/// Everything the structure gate looks at, on one grid plus a half-resolution
/// companion for the refinement rate of the K-degeneracy residual.
#[derive(Clone, Debug)]
pub struct BracketReport {
    pub nx: usize,
    pub ny: usize,
    pub seed: u64,
    pub probes: usize,
    pub j_norm: f64,
    pub k_norm: f64,
    /// ||J + J'|| / ||J||.
    pub j_antisymmetry: f64,
    /// ||K - K'|| / ||K||.
    pub k_symmetry: f64,
    /// ||J DS|| / ||J||.
    pub j_ds_residual: f64,
    /// ||K DE|| / (||K|| ||DE||) on this grid and at half resolution.
    pub k_de_residual: f64,
    pub k_de_residual_coarse: f64,
    /// log2(coarse / fine); at least 1 for a first-order commutator.
    pub k_de_rate: f64,
    /// min over probes of <xi, K xi> / (||K|| ||xi||^2).
    pub psd_min: f64,
    /// <DE, J DE + K DS> normalized by ||DE|| ||J DE + K DS|| h^2.
    pub de_rate_rel: f64,
    /// <DS, J DE + K DS> normalized by ||K|| ||DS||^2 h^2.
    pub ds_rate_rel: f64,
    /// <DS, J DS> normalized by ||J|| ||DS||^2 h^2.
    pub ds_j_quad_rel: f64,
    pub transcription: TranscriptionReport,
}

/// Structure tolerances used by the report gate and by the acceptance tests.
pub mod tolerance {
    /// Antisymmetry of J and symmetry of K, relative.
    pub const STRUCTURE: f64 = 1e-12;
    /// J DS degeneracy, relative to ||J||.
    pub const J_DS: f64 = 1e-12;
    /// Smallest admissible normalized quadratic-form value.
    pub const PSD_MIN: f64 = -1e-10;
    /// Required refinement rate of the K DE residual.
    pub const K_DE_RATE: f64 = 1.0;
    /// Normalized entropy production floor.
    pub const DS_MIN: f64 = -1e-10;
    /// Gram operator action vs the displayed target, relative.
    pub const TARGET: f64 = 1e-10;
}

impl BracketReport {
    pub fn pass(&self) -> bool {
        self.j_antisymmetry <= tolerance::STRUCTURE
            && self.k_symmetry <= tolerance::STRUCTURE
            && self.j_ds_residual <= tolerance::J_DS
            && self.psd_min >= tolerance::PSD_MIN
            && self.k_de_rate >= tolerance::K_DE_RATE
            && self.ds_rate_rel >= tolerance::DS_MIN
            && self.transcription.target_residual <= tolerance::TARGET
    }

    pub fn summary_text(&self) -> String {
        let gate = |ok: bool| if ok { "pass" } else { "FAIL" };
        let t = &self.transcription;
        let mut s = String::new();
        s.push_str(&format!(
            "bracket structure report  grid {}x{}  seed {}  probes {}\n",
            self.nx, self.ny, self.seed, self.probes
        ));
        s.push_str(&format!(
            "  J frobenius {:.6e}   K frobenius {:.6e}\n",
            self.j_norm, self.k_norm
        ));
        s.push_str(&format!(
            "  J antisymmetry      {:.3e}  (<= {:.0e})  {}\n",
            self.j_antisymmetry,
            tolerance::STRUCTURE,
            gate(self.j_antisymmetry <= tolerance::STRUCTURE)
        ));
        s.push_str(&format!(
            "  K symmetry          {:.3e}  (<= {:.0e})  {}\n",
            self.k_symmetry,
            tolerance::STRUCTURE,
            gate(self.k_symmetry <= tolerance::STRUCTURE)
        ));
        s.push_str(&format!(
            "  J DS degeneracy     {:.3e}  (<= {:.0e})  {}\n",
            self.j_ds_residual,
            tolerance::J_DS,
            gate(self.j_ds_residual <= tolerance::J_DS)
        ));
        s.push_str(&format!(
            "  K DE degeneracy     {:.3e}  (coarse {:.3e}, rate {:.2}, >= {:.1})  {}\n",
            self.k_de_residual,
            self.k_de_residual_coarse,
            self.k_de_rate,
            tolerance::K_DE_RATE,
            gate(self.k_de_rate >= tolerance::K_DE_RATE)
        ));
        s.push_str(&format!(
            "  PSD probe minimum   {:.3e}  (>= {:.0e})  {}\n",
            self.psd_min,
            tolerance::PSD_MIN,
            gate(self.psd_min >= tolerance::PSD_MIN)
        ));
        s.push_str(&format!(
            "  energy rate (rel)   {:.3e}\n",
            self.de_rate_rel
        ));
        s.push_str(&format!(
            "  entropy rate (rel)  {:.3e}  (>= {:.0e})  {}\n",
            self.ds_rate_rel,
            tolerance::DS_MIN,
            gate(self.ds_rate_rel >= tolerance::DS_MIN)
        ));
        s.push_str(&format!(
            "  <DS, J DS> (rel)    {:.3e}\n",
            self.ds_j_quad_rel
        ));
        s.push_str(&format!(
            "  entropy action vs displayed target: operator {:.3e}, literal {:.3e}  (<= {:.0e})  {}\n",
            t.target_residual,
            t.literal_target_residual,
            tolerance::TARGET,
            gate(t.target_residual <= tolerance::TARGET)
        ));
        s.push_str(&format!(
            "  literal expansion symmetry defect   {:.3e}  (reported, not gated)\n",
            t.literal_symmetry_defect
        ));
        s.push_str(&format!(
            "  assembled operator symmetry defect  {:.3e}\n",
            t.operator_symmetry_defect
        ));
        s.push_str(&format!("  overall: {}\n", gate(self.pass())));
        s
    }
}

/// Assemble both brackets on the given grid and a half-resolution companion,
/// run all structure checks, and collect them into one report. The probe
/// state is seeded, so reports are deterministic.
pub fn bracket_report(
    grid: &Grid,
    params: &Params,
    seed: u64,
    probes: usize,
) -> Result<BracketReport, Error> {
    check_budget(grid)?;
    let q = probe_state(grid, params, seed, 0.3)?;
    let j = assemble_j(grid, &q)?;
    let k = assemble_k(grid, params, &q)?;
    let ds = gradient_s(&q);
    let de = gradient_e(&q);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let h2 = grid.cell_volume();

    let j_ds = norm(&j.apply(&ds)) / j.frobenius().max(1e-300);
    let k_de = norm(&k.apply(&de)) / (k.frobenius() * norm(&de)).max(1e-300);
    let coarse_grid = Grid::new(grid.nx / 2, grid.ny / 2, grid.lx, grid.ly)?;
    let qc = probe_state(&coarse_grid, params, seed, 0.3)?;
    let (_, k_de_coarse) = check_noninteraction(&coarse_grid, params, &qc)?;
    let k_de_rate = (k_de_coarse / k_de).log2();

    let rng = SplitMix64::new(seed ^ 0x70726f62);
    let dim = 4 * grid.n();
    let mut psd_min = f64::INFINITY;
    for p in 0..probes {
        let mut rp = rng.fork(p as u64);
        let xi: Vec<f64> = (0..dim).map(|_| rp.uniform(-1.0, 1.0)).collect();
        let quad: f64 = xi.iter().zip(k.apply(&xi)).map(|(a, b)| a * b).sum();
        let denom = k.frobenius() * xi.iter().map(|v| v * v).sum::<f64>();
        psd_min = psd_min.min(quad / denom.max(1e-300));
    }

    let mut flow = j.apply(&de);
    for (f, kv) in flow.iter_mut().zip(k.apply(&ds)) {
        *f += kv;
    }
    let de_rate = h2 * de.iter().zip(&flow).map(|(a, b)| a * b).sum::<f64>();
    let ds_rate = h2 * ds.iter().zip(&flow).map(|(a, b)| a * b).sum::<f64>();
    let de_rate_rel = de_rate / (h2 * norm(&de) * norm(&flow)).max(1e-300);
    let ds_rate_rel = ds_rate / (h2 * k.frobenius() * norm(&ds) * norm(&ds)).max(1e-300);
    let jds_quad = h2 * ds.iter().zip(j.apply(&ds)).map(|(a, b)| a * b).sum::<f64>();
    let ds_j_quad_rel = jds_quad / (h2 * j.frobenius() * norm(&ds) * norm(&ds)).max(1e-300);

    let transcription = check_transcription(grid, params, &q)?;
    Ok(BracketReport {
        nx: grid.nx,
        ny: grid.ny,
        seed,
        probes,
        j_norm: j.frobenius(),
        k_norm: k.frobenius(),
        j_antisymmetry: j.structure_defect(),
        k_symmetry: k.structure_defect(),
        j_ds_residual: j_ds,
        k_de_residual: k_de,
        k_de_residual_coarse: k_de_coarse,
        k_de_rate,
        psd_min,
        de_rate_rel,
        ds_rate_rel,
        ds_j_quad_rel,
        transcription,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{IcSpec, SimConfig};
    use crate::solver::{initial_state, Stepper};

    fn grid8() -> Grid {
        Grid::new(8, 8, 1.0, 1.0).unwrap()
    }

    #[test]
    fn adjoint_pairs_are_exact() {
        // grad(. , Mirror) and -div(. , Negate) must be exact adjoints; the
        // target discretization and the Gram adjoints all stand on this.
        let grid = Grid::new(6, 5, 1.3, 0.9).unwrap();
        let n = grid.n();
        let mut r = SplitMix64::new(3);
        let f: Vec<f64> = (0..n).map(|_| r.uniform(-1.0, 1.0)).collect();
        let v = VectorField {
            x: (0..n).map(|_| r.uniform(-1.0, 1.0)).collect(),
            y: (0..n).map(|_| r.uniform(-1.0, 1.0)).collect(),
        };
        let g = grid.grad(&f, Ghost::Mirror);
        let lhs = grid.inner(&g.x, &v.x) + grid.inner(&g.y, &v.y);
        let rhs = -grid.inner(&f, &grid.div(&v, Ghost::Negate));
        assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
        // Componentwise pair used by the stress divergence.
        let w: Vec<f64> = (0..n).map(|_| r.uniform(-1.0, 1.0)).collect();
        let lhs = grid.inner(&grid.ddx(&f, Ghost::Negate), &w);
        let rhs = -grid.inner(&f, &grid.ddx(&w, Ghost::Mirror));
        assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
    }

    #[test]
    fn leray_matrix_is_symmetric_idempotent_and_kills_gradients() {
        let grid = grid8();
        let n = grid.n();
        let m = 2 * n;
        let p = leray_matrix(&grid).unwrap();
        let mut asym: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                asym = asym.max((p[i * m + j] - p[j * m + i]).abs());
            }
        }
        assert!(asym == 0.0, "projector not symmetric after averaging");
        let mut r = SplitMix64::new(11);
        let chi: Vec<f64> = (0..n).map(|_| r.uniform(-1.0, 1.0)).collect();
        let g = grid.grad(&chi, Ghost::Mirror);
        let mut v = vec![0.0; m];
        v[..n].copy_from_slice(&g.x);
        v[n..].copy_from_slice(&g.y);
        let pv: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| p[i * m + j] * v[j]).sum())
            .collect();
        let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let res = pv.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(res <= 1e-11 * scale, "projector left a gradient: {res:.3e}");
        // Idempotence and divergence-free range on a random vector.
        let w: Vec<f64> = (0..m).map(|_| r.uniform(-1.0, 1.0)).collect();
        let pw: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| p[i * m + j] * w[j]).sum())
            .collect();
        let ppw: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| p[i * m + j] * pw[j]).sum())
            .collect();
        let idem = pw
            .iter()
            .zip(&ppw)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(idem <= 1e-11, "projector not idempotent: {idem:.3e}");
        let field = VectorField {
            x: pw[..n].to_vec(),
            y: pw[n..].to_vec(),
        };
        let d = grid.div(&field, Ghost::Negate);
        assert!(grid.norm_l2(&d) <= 1e-11);
    }

    #[test]
    fn uniform_well_minimum_gradients() {
        // phi at a well bottom, theta = 1: energy gradient blocks are
        // (theta, -theta, 0) because the chemical potential reduces to
        // -theta there; entropy gradient is (1, 0, 0) identically.
        let grid = grid8();
        let params = Params::default();
        let n = grid.n();
        let q = GenericState::new(
            &grid,
            &params,
            grid.constant(1.0),
            grid.constant(1.0),
            VectorField::zeros(n),
        )
        .unwrap();
        let de = gradient_e(&q);
        let ds = gradient_s(&q);
        for k in 0..n {
            assert!((de[k] - 1.0).abs() <= 1e-12);
            assert!((de[n + k] + 1.0).abs() <= 1e-12);
            assert_eq!(de[2 * n + k], 0.0);
            assert_eq!(de[3 * n + k], 0.0);
            assert_eq!(ds[k], 1.0);
            assert_eq!(ds[n + k], 0.0);
            assert_eq!(ds[2 * n + k], 0.0);
            assert_eq!(ds[3 * n + k], 0.0);
        }
    }

    #[test]
    fn entropy_pairing_matches_discrete_entropy_rate() {
        // <DS, (q_new - q_old)/dt> is the discrete d/dt of the entropy
        // integral by construction of the pairing.
        let mut cfg = SimConfig::default();
        cfg.nx = 16;
        cfg.ny = 16;
        cfg.scheme.dt = 1e-3;
        cfg.scheme.t_end = 1e-3;
        cfg.ic = IcSpec::Manufactured {
            phi0: 0.3,
            amp: 0.1,
            theta0: 1.0,
            theta_amp: 0.1,
            u_amp: 0.1,
        };
        let grid = Grid::new(cfg.nx, cfg.ny, cfg.lx, cfg.ly).unwrap();
        let params = &cfg.params;
        let s0 = initial_state(&grid, params, &cfg.ic, &cfg.scheme).unwrap();
        let mut stepper = Stepper::new(&grid, params, &cfg.scheme);
        let (s1, _) = stepper.step(&s0).unwrap();
        let q0 = GenericState::from_primitive(&grid, params, &s0).unwrap();
        let q1 = GenericState::from_primitive(&grid, params, &s1).unwrap();
        let dt = cfg.scheme.dt;
        let n = grid.n();
        let qdot: Vec<f64> = (0..4 * n)
            .map(|i| {
                let (a, b) = match i / n {
                    0 => (q1.s[i], q0.s[i]),
                    1 => (q1.phi[i - n], q0.phi[i - n]),
                    2 => (q1.u.x[i - 2 * n], q0.u.x[i - 2 * n]),
                    _ => (q1.u.y[i - 3 * n], q0.u.y[i - 3 * n]),
                };
                (a - b) / dt
            })
            .collect();
        let ds = gradient_s(&q0);
        let h2 = grid.cell_volume();
        let paired = h2 * ds.iter().zip(&qdot).map(|(a, b)| a * b).sum::<f64>();
        let rate = (grid.integrate(&q1.s) - grid.integrate(&q0.s)) / dt;
        assert!(
            (paired - rate).abs() <= 1e-10 * rate.abs().max(1.0),
            "pairing {paired:.6e} vs rate {rate:.6e}"
        );
    }

    #[test]
    fn j_constant_fields_leave_only_convection() {
        let grid = grid8();
        let params = Params::default();
        let n = grid.n();
        let base = probe_state(&grid, &params, 5, 0.3).unwrap();
        let q = GenericState::new(
            &grid,
            &params,
            grid.constant(0.7),
            grid.constant(0.2),
            base.u.clone(),
        )
        .unwrap();
        let j = assemble_j(&grid, &q).unwrap();
        let dim = j.dim;
        for i in 0..2 * n {
            for jj in 0..dim {
                assert_eq!(j.a[i * dim + jj], 0.0, "scalar row {i} not empty");
                assert_eq!(j.a[jj * dim + i], 0.0, "scalar column {i} not empty");
            }
        }
        let conv: f64 = j.a.iter().map(|v| v * v).sum::<f64>();
        assert!(conv > 0.0, "convection block vanished");
    }

    #[test]
    fn j_is_antisymmetric_with_degenerate_entropy_direction() {
        let grid = grid8();
        let params = Params::default();
        for seed in [1u64, 2, 3] {
            let q = probe_state(&grid, &params, seed, 0.4).unwrap();
            let j = assemble_j(&grid, &q).unwrap();
            assert!(j.structure_defect() <= 1e-12);
            let ds = gradient_s(&q);
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let res = norm(&j.apply(&ds)) / j.frobenius();
            assert!(res <= 1e-12, "J DS residual {res:.3e} (seed {seed})");
            let quad: f64 = ds.iter().zip(j.apply(&ds)).map(|(a, b)| a * b).sum();
            assert!(
                quad.abs() * grid.cell_volume() <= 1e-12 * j.frobenius(),
                "antisymmetric quadratic form leaked: {quad:.3e}"
            );
        }
    }

    #[test]
    fn k_uniform_state_has_no_couplings_and_kills_de() {
        let grid = grid8();
        let params = Params::default();
        let n = grid.n();
        let q = GenericState::new(
            &grid,
            &params,
            grid.constant(1.0),
            grid.constant(1.0),
            VectorField::zeros(n),
        )
        .unwrap();
        let k = assemble_k(&grid, &params, &q).unwrap();
        let dim = k.dim;
        // Velocity-temperature couplings need a velocity gradient; the
        // phase-temperature coupling needs a chemical-potential gradient.
        for i in 0..n {
            for jj in 2 * n..dim {
                assert_eq!(k.a[i * dim + jj], 0.0);
                assert_eq!(k.a[jj * dim + i], 0.0);
            }
            for jj in n..2 * n {
                assert_eq!(k.a[i * dim + jj], 0.0);
                assert_eq!(k.a[jj * dim + i], 0.0);
            }
        }
        let de = gradient_e(&q);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let res = norm(&k.apply(&de)) / (k.frobenius() * norm(&de));
        assert!(res <= 1e-12, "uniform K DE residual {res:.3e}");
        // The continuum rates vanish identically; the assembled rows cancel
        // only to machine precision once summed entrywise.
        let (de_rate, ds_rate) = check_rates(&grid, &params, &q).unwrap();
        assert!(de_rate.abs() <= 1e-13, "uniform energy rate {de_rate:.3e}");
        assert!(ds_rate.abs() <= 1e-13, "uniform entropy rate {ds_rate:.3e}");
    }

    #[test]
    fn k_is_symmetric_and_psd_on_probes() {
        let grid = grid8();
        let params = Params::default();
        let q = probe_state(&grid, &params, 9, 0.4).unwrap();
        let k = assemble_k(&grid, &params, &q).unwrap();
        assert!(k.structure_defect() <= 1e-12);
        let dim = k.dim;
        let mut r = SplitMix64::new(77);
        for _ in 0..200 {
            let xi: Vec<f64> = (0..dim).map(|_| r.uniform(-1.0, 1.0)).collect();
            let quad: f64 = xi.iter().zip(k.apply(&xi)).map(|(a, b)| a * b).sum();
            let denom = k.frobenius() * xi.iter().map(|v| v * v).sum::<f64>();
            assert!(
                quad / denom >= -1e-10,
                "negative direction: {:.3e}",
                quad / denom
            );
        }
    }

    #[test]
    fn noninteraction_j_exact_k_first_order() {
        let params = Params::default();
        let coarse = grid8();
        let fine = Grid::new(16, 16, 1.0, 1.0).unwrap();
        let qc = probe_state(&coarse, &params, 21, 0.3).unwrap();
        let qf = probe_state(&fine, &params, 21, 0.3).unwrap();
        let (jc, kc) = check_noninteraction(&coarse, &params, &qc).unwrap();
        let (jf, kf) = check_noninteraction(&fine, &params, &qf).unwrap();
        assert!(jc <= 1e-12 && jf <= 1e-12, "J DS: {jc:.3e}, {jf:.3e}");
        let rate = (kc / kf).log2();
        assert!(
            rate >= 1.0,
            "K DE residual rate {rate:.2} (coarse {kc:.3e}, fine {kf:.3e})"
        );
    }

    #[test]
    fn production_rates_have_the_right_signs() {
        let grid = grid8();
        let params = Params::default();
        for seed in [4u64, 14, 24] {
            let q = probe_state(&grid, &params, seed, 0.4).unwrap();
            let (de_rate, ds_rate) = check_rates(&grid, &params, &q).unwrap();
            let k = assemble_k(&grid, &params, &q).unwrap();
            let scale = k.frobenius() * grid.cell_volume() * grid.n() as f64;
            assert!(
                ds_rate >= -1e-10 * scale,
                "entropy production negative: {ds_rate:.3e}"
            );
            // Energy rate is bounded by the degeneracy commutator, which is
            // grid-level small but not rounding-level.
            assert!(
                de_rate.abs() <= 1e-2 * scale,
                "energy rate {de_rate:.3e} vs scale {scale:.3e}"
            );
            assert!(ds_rate > 0.0, "probe state produced no entropy");
        }
    }

    #[test]
    fn transcription_matches_target_and_reports_literal_defect() {
        let grid = grid8();
        let params = Params::default();
        let q = probe_state(&grid, &params, 31, 0.4).unwrap();
        let rep = check_transcription(&grid, &params, &q).unwrap();
        assert!(
            rep.target_residual <= 1e-10,
            "operator action off target: {:.3e}",
            rep.target_residual
        );
        assert!(
            rep.literal_target_residual <= 1e-10,
            "literal action off target: {:.3e}",
            rep.literal_target_residual
        );
        assert!(rep.operator_symmetry_defect <= 1e-12);
        // The literal expansion is not symmetric off isothermal states; the
        // defect is the reported finding, not a bug in the quadrature.
        assert!(
            rep.literal_symmetry_defect > 1e-4,
            "expected a visible literal defect, got {:.3e}",
            rep.literal_symmetry_defect
        );
        // Isothermal state: the defect terms all carry the temperature
        // gradient, so the expansion becomes symmetric.
        let n = grid.n();
        let iso = GenericState::new(
            &grid,
            &params,
            q.phi.clone(),
            q.phi.clone(),
            VectorField::zeros(n),
        )
        .unwrap();
        let rep_iso = check_transcription(&grid, &params, &iso).unwrap();
        assert!(
            rep_iso.literal_symmetry_defect <= 1e-12,
            "isothermal literal defect {:.3e}",
            rep_iso.literal_symmetry_defect
        );
    }

    #[test]
    fn budget_is_enforced() {
        let params = Params::default();
        let grid = Grid::new(32, 8, 1.0, 1.0).unwrap();
        let q = probe_state(&grid, &params, 1, 0.2).unwrap();
        match assemble_j(&grid, &q) {
            Err(Error::BudgetExceeded { nx: 32, ny: 8 }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
        match assemble_k(&grid, &params, &q) {
            Err(Error::BudgetExceeded { .. }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
    }

    #[test]
    fn power_law_branch_keeps_theta_positive() {
        let grid = grid8();
        let mut params = Params::default();
        params.delta = 0.5;
        params.theta_floor = 1e-6;
        let n = grid.n();
        // s - phi dips negative: the power-law inverse is undefined there and
        // the guard must clamp instead of producing NaN.
        let s = grid.sample(|x, _| -0.5 + x);
        let q = GenericState::new(&grid, &params, s, grid.constant(0.3), VectorField::zeros(n))
            .unwrap();
        let min = q.theta.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= params.theta_floor);
        assert!(q.theta.iter().all(|t| t.is_finite()));
    }
}
