//! Posterior over latent noise given a treatment value and observations.
//!
//! Only the latent noise `U_L` is inferred. The noise of the treatment and of
//! each observed variable is a deterministic function of `U_L` and the data,
//! found by inverting the structural equation in its own noise.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::autodiff::{gradient_vec, hessian_vec, Differentiable, HessianMatrix, Real, VectorFn};
use crate::error::{Error, Result};
use crate::expr::VariableId;
use crate::parallel;
use crate::scm::{Assignment, Scm};

/// A treatment value and observed values for a set of endogenous variables.
///
/// Every endogenous variable that is neither the treatment, the outcome nor
/// listed here is latent for this query.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub x: f64,
    pub observed: Assignment,
}

impl Query {
    pub fn new(x: f64) -> Self {
        Query {
            x,
            observed: Assignment::new(),
        }
    }

    pub fn observe(mut self, name: &str, value: f64) -> Self {
        self.observed.insert(name.into(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Role {
    Treatment,
    Observed(f64),
    Free,
}

/// Resolved roles of one query.
#[derive(Debug, Clone)]
pub(crate) struct Plan<'a> {
    pub scm: &'a Scm,
    pub x: f64,
    pub x_idx: usize,
    pub y_idx: usize,
    pub roles: Vec<Role>,
    /// X and O, as an endogenous mask (equations severed in clamped passes).
    pub fixed: Vec<bool>,
    /// Exogenous indices of latent noise, ascending.
    pub latent: Vec<usize>,
    /// Endogenous indices of X and O, topological order.
    pub sources: Vec<usize>,
    pub x_desc: Vec<bool>,
}

impl<'a> Plan<'a> {
    pub fn new(scm: &'a Scm, q: &Query) -> Result<Self> {
        let nv = scm.n_endogenous();
        let x_idx = scm.treatment_index();
        let y_idx = scm.outcome_index();
        if !q.x.is_finite() {
            return Err(Error::InvalidArgument("treatment value is not finite".into()));
        }
        let mut roles = vec![Role::Free; nv];
        roles[x_idx] = Role::Treatment;
        for (name, v) in &q.observed {
            let j = scm.endogenous_index(name.as_str())?;
            if j == x_idx || j == y_idx {
                return Err(Error::RoleConflict(format!(
                    "`{name}` is the treatment or the outcome and cannot be observed"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("observed value of `{name}` is not finite")));
            }
            if scm.noise_of(j).is_none() {
                return Err(Error::MissingNoiseTerm(name.0.clone()));
            }
            roles[j] = Role::Observed(*v);
        }
        let fixed: Vec<bool> = roles.iter().map(|r| *r != Role::Free).collect();
        let mut latent: Vec<usize> = (0..nv)
            .filter(|&j| !fixed[j])
            .filter_map(|j| scm.noise_of(j))
            .collect();
        latent.sort_unstable();
        let sources = (0..nv).filter(|&j| fixed[j]).collect();
        Ok(Plan {
            scm,
            x: q.x,
            x_idx,
            y_idx,
            roles,
            fixed,
            latent,
            sources,
            x_desc: scm.descendants(x_idx),
        })
    }

    pub fn latent_names(&self) -> Vec<VariableId> {
        self.latent
            .iter()
            .map(|&i| self.scm.exogenous()[i].name.clone())
            .collect()
    }

    /// Fills every slot from a latent draw: latent endogenous values by the
    /// forward pass, treatment and observed values from the data, and their
    /// noise by inversion. `jac[k]` receives `∂f/∂u` of source `k` at `u*`.
    ///
    /// `x` is passed separately so that it can carry a derivative seed.
    #[inline]
    pub fn compose<T: Real>(
        &self,
        u_latent: &[T],
        x: T,
        slots: &mut [T],
        jac: &mut [T],
        regs: &mut Vec<T>,
    ) -> Result<()> {
        let scm = self.scm;
        let ne = scm.n_exogenous();
        for (k, &i) in self.latent.iter().enumerate() {
            slots[i] = u_latent[k];
        }
        let mut s = 0;
        for (j, role) in self.roles.iter().enumerate() {
            let target = match *role {
                Role::Free => {
                    let prog = scm.program(j);
                    let v = prog.run(|k| slots[k], regs).map_err(|_| scm.domain_error(j))?;
                    slots[ne + j] = v;
                    continue;
                }
                Role::Treatment => x,
                Role::Observed(v) => T::cst(v),
            };
            let noise = scm.noise_of(j).expect("sources have noise");
            let (u, d) = {
                let view = &*slots;
                scm.program(j)
                    .invert(|k| view[k], target, regs)
                    .map_err(|f| scm.invert_error(j, target.value(), f))?
            };
            slots[noise] = u;
            slots[ne + j] = target;
            jac[s] = d;
            s += 1;
        }
        Ok(())
    }

    /// `log p(x, o | u_L)` from composed slots: densities of the inverted
    /// noise times the inverse Jacobians of the equations.
    #[inline]
    pub fn log_likelihood<T: Real>(&self, slots: &[T], jac: &[T]) -> T {
        let scm = self.scm;
        let mut acc = T::cst(0.0);
        for (k, &j) in self.sources.iter().enumerate() {
            let i = scm.noise_of(j).unwrap();
            acc = acc + scm.exogenous()[i].dist.log_pdf(slots[i]) - jac[k].abs().ln();
        }
        acc
    }

    pub fn log_prior<T: Real>(&self, u_latent: &[T]) -> T {
        let ex = self.scm.exogenous();
        self.latent
            .iter()
            .zip(u_latent)
            .fold(T::cst(0.0), |acc, (&i, &u)| acc + ex[i].dist.log_pdf(u))
    }
}

/// `log p(u_L, x, o)` as a function of the latent noise.
pub(crate) struct LogJoint<'p, 'a> {
    pub plan: &'p Plan<'a>,
}

impl VectorFn for LogJoint<'_, '_> {
    fn call<T: Real>(&self, u: &[T]) -> Result<T> {
        let plan = self.plan;
        let mut slots = vec![T::cst(0.0); plan.scm.n_slots()];
        let mut jac = vec![T::cst(0.0); plan.sources.len()];
        let mut regs = Vec::new();
        plan.compose(u, T::cst(plan.x), &mut slots, &mut jac, &mut regs)?;
        let v = plan.log_prior(u) + plan.log_likelihood(&slots, &jac);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::DomainError("log p(u_L, x, o)".into()))
        }
    }
}

/// The same log joint addressed by latent noise names, for the generic
/// [`gradient`](crate::autodiff::gradient) and [`hessian`](crate::autodiff::hessian).
pub struct LogJointDensity<'a> {
    plan: Plan<'a>,
}

impl<'a> LogJointDensity<'a> {
    pub fn new(scm: &'a Scm, q: &Query) -> Result<Self> {
        Ok(LogJointDensity {
            plan: Plan::new(scm, q)?,
        })
    }

    pub fn latent(&self) -> Vec<VariableId> {
        self.plan.latent_names()
    }
}

impl Differentiable for LogJointDensity<'_> {
    fn eval_at<T: Real>(&self, env: &BTreeMap<VariableId, T>) -> Result<T> {
        let u: Vec<T> = self
            .latent()
            .iter()
            .map(|n| env.get(n).copied().ok_or_else(|| Error::UnknownVariable(n.0.clone())))
            .collect::<Result<_>>()?;
        LogJoint { plan: &self.plan }.call(&u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapOptions {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Convergence threshold on `‖∇ log p‖∞`.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Switch from ADAM to Newton steps once `‖∇‖∞` falls below this.
    /// `f64::INFINITY` means Newton from the start; `0` disables it.
    pub newton_below: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            step: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            tolerance: 1e-8,
            max_iterations: 10_000,
            newton_below: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapResult {
    pub latent: Vec<VariableId>,
    pub u: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn inf_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub(crate) fn map_plan(plan: &Plan<'_>, opts: &MapOptions) -> Result<MapResult> {
    let f = LogJoint { plan };
    let d = plan.latent.len();
    let mut u = vec![0.0; d];
    let (mut m, mut v) = (vec![0.0; d], vec![0.0; d]);
    let (mut val, mut g) = gradient_vec(&f, &u)?;
    let mut it = 0;
    let mut adam_t = 0;
    while inf_norm(&g) > opts.tolerance {
        if it >= opts.max_iterations {
            return Err(Error::NonConvergence {
                iterations: it,
                grad_norm: inf_norm(&g),
            });
        }
        it += 1;
        if inf_norm(&g) <= opts.newton_below {
            if let Some((nu, nval, ng)) = newton_step(&f, &u, val, &g)? {
                u = nu;
                val = nval;
                g = ng;
                continue;
            }
        }
        adam_t += 1;
        for k in 0..d {
            // ascent on log p
            m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * g[k];
            v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * g[k] * g[k];
            let mh = m[k] / (1.0 - opts.beta1.powi(adam_t));
            let vh = v[k] / (1.0 - opts.beta2.powi(adam_t));
            u[k] += opts.step * mh / (vh.sqrt() + opts.epsilon);
        }
        (val, g) = gradient_vec(&f, &u)?;
    }
    Ok(MapResult {
        latent: plan.latent_names(),
        u,
        iterations: it,
        grad_norm: inf_norm(&g),
    })
}

/// Damped Newton step on `log p`; `None` if the Hessian is not negative
/// definite or no step length improves the objective.
fn newton_step(
    f: &LogJoint<'_, '_>,
    u: &[f64],
    val: f64,
    g: &[f64],
) -> Result<Option<(Vec<f64>, f64, Vec<f64>)>> {
    let h = hessian_vec(f, u)?;
    let neg = -(&h + h.transpose()) * 0.5;
    let Some(chol) = neg.cholesky() else {
        return Ok(None);
    };
    let dir = chol.solve(&DVector::from_column_slice(g));
    let g0 = inf_norm(g);
    let mut t = 1.0;
    for _ in 0..30 {
        let cand: Vec<f64> = u.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
        if let Ok((cv, cg)) = gradient_vec(f, &cand) {
            if cv >= val - 1e-12 * val.abs().max(1.0) || inf_norm(&cg) < g0 {
                return Ok(Some((cand, cv, cg)));
            }
        }
        t *= 0.5;
    }
    Ok(None)
}

/// MAP estimate of the latent noise.
pub fn map_estimate(scm: &Scm, q: &Query, opts: &MapOptions) -> Result<MapResult> {
    map_plan(&Plan::new(scm, q)?, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    #[serde(rename = "laplace")]
    Laplace,
    #[serde(rename = "is")]
    ImportanceSampling,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Laplace => "laplace",
            Method::ImportanceSampling => "is",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(Method::Laplace),
            "is" | "importance" | "importance-sampling" => Ok(Method::ImportanceSampling),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Per-query diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub method: Method,
    pub iterations: Option<usize>,
    pub grad_norm: Option<f64>,
    pub n: usize,
    pub n_eff: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorKind {
    Laplace {
        mean: DVector<f64>,
        covariance: DMatrix<f64>,
    },
    /// `points` is `N × d`; weights sum to `N`.
    Particles {
        points: DMatrix<f64>,
        weights: DVector<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorApprox {
    pub kind: PosteriorKind,
    pub latent: Vec<VariableId>,
    pub diagnostics: Diagnostics,
}

/// Latent draws with non-negative weights summing to their count.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDraws {
    pub points: DMatrix<f64>,
    pub weights: DVector<f64>,
}

impl WeightedDraws {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn n_eff(&self) -> f64 {
        effective_sample_size(self.weights.as_slice())
    }
}

pub fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

impl PosteriorApprox {
    pub fn method(&self) -> Method {
        self.diagnostics.method
    }

    /// Draws for Monte Carlo estimation. Laplace posteriors are sampled with
    /// `n` moment-matched Gaussian draws (exact sample mean and covariance);
    /// particle sets are returned as they are and `n`, `seed` are ignored.
    pub fn draws(&self, n: usize, seed: u64) -> Result<WeightedDraws> {
        match &self.kind {
            PosteriorKind::Particles { points, weights } => Ok(WeightedDraws {
                points: points.clone(),
                weights: weights.clone(),
            }),
            PosteriorKind::Laplace { mean, covariance } => {
                if n == 0 {
                    return Err(Error::InvalidArgument("need at least one draw".into()));
                }
                let d = mean.len();
                let z = matched_normals(n, d, seed);
                let l = if d == 0 {
                    DMatrix::zeros(0, 0)
                } else {
                    covariance
                        .clone()
                        .cholesky()
                        .ok_or(Error::NotPositiveDefinite)?
                        .l()
                };
                let mut points = &z * l.transpose();
                for mut row in points.row_iter_mut() {
                    row += mean.transpose();
                }
                Ok(WeightedDraws {
                    points,
                    weights: DVector::from_element(n, 1.0),
                })
            }
        }
    }
}

/// `n × d` standard normals whitened to sample mean 0 and sample covariance
/// `I` (with `1/n` normalisation), when `n > d`.
fn matched_normals(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let chunks = parallel::map_chunks(n, seed, |range, rng| {
        let mut v = Vec::with_capacity(range.len() * d);
        for _ in range.clone() {
            for _ in 0..d {
                v.push(StandardNormal.sample(rng));
            }
        }
        v
    });
    let flat: Vec<f64> = chunks.into_iter().flatten().collect();
    let mut z = DMatrix::from_row_slice(n, d, &flat);
    if n <= d || d == 0 {
        return z;
    }
    let mean = z.row_mean();
    for mut row in z.row_iter_mut() {
        row -= &mean;
    }
    let cov = (z.transpose() * &z) / n as f64;
    if let Some(ch) = cov.cholesky() {
        // z L^{-T}
        let linv_t = ch
            .l()
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("Cholesky factor is invertible")
            .transpose();
        z *= linv_t;
    }
    z
}

/// Gaussian approximation at the MAP with covariance `-H⁻¹`.
pub fn laplace_posterior(scm: &Scm, q: &Query, opts: &MapOptions, seed: u64) -> Result<PosteriorApprox> {
    let plan = Plan::new(scm, q)?;
    laplace_plan(&plan, opts, seed)
}

pub(crate) fn laplace_plan(plan: &Plan<'_>, opts: &MapOptions, seed: u64) -> Result<PosteriorApprox> {
    let map = map_plan(plan, opts)?;
    let d = map.u.len();
    let h = HessianMatrix::from_raw(map.latent.clone(), hessian_vec(&LogJoint { plan }, &map.u)?)?;
    let covariance = if d == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let neg = -h.matrix;
        let ch = neg.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let inv = ch.inverse();
        (&inv + inv.transpose()) * 0.5
    };
    Ok(PosteriorApprox {
        kind: PosteriorKind::Laplace {
            mean: DVector::from_vec(map.u),
            covariance,
        },
        latent: map.latent,
        diagnostics: Diagnostics {
            method: Method::Laplace,
            iterations: Some(map.iterations),
            grad_norm: Some(map.grad_norm),
            n: 0,
            n_eff: 0.0,
            seed,
            warnings: vec![],
        },
    })
}

/// Prior draws of the latent noise reweighted by `p(x, o | u_L)`.
pub fn importance_posterior(scm: &Scm, q: &Query, n: usize, seed: u64) -> Result<PosteriorApprox> {
    importance_plan(&Plan::new(scm, q)?, n, seed)
}

pub(crate) fn importance_plan(plan: &Plan<'_>, n: usize, seed: u64) -> Result<PosteriorApprox> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    let d = plan.latent.len();
    let ex = plan.scm.exogenous();
    let chunks = parallel::map_chunks(n, seed, |range, rng| -> Result<(Vec<f64>, Vec<f64>, Option<Error>)> {
        let mut pts = Vec::with_capacity(range.len() * d);
        let mut lw = Vec::with_capacity(range.len());
        let mut first_fail = None;
        let mut slots = vec![0.0; plan.scm.n_slots()];
        let mut jac = vec![0.0; plan.sources.len()];
        let mut regs = Vec::new();
        let mut u = vec![0.0; d];
        for _ in range {
            for (k, &i) in plan.latent.iter().enumerate() {
                u[k] = ex[i].dist.sample(rng);
            }
            pts.extend_from_slice(&u);
            match plan.compose(&u, plan.x, &mut slots, &mut jac, &mut regs) {
                Ok(()) => lw.push(plan.log_likelihood(&slots, &jac)),
                Err(e @ Error::NoRoot { .. }) => {
                    first_fail.get_or_insert(e);
                    lw.push(f64::NEG_INFINITY);
                }
                Err(e) => return Err(e),
            }
        }
        Ok((pts, lw, first_fail))
    });
    let mut points = Vec::with_capacity(n * d);
    let mut logw = Vec::with_capacity(n);
    let mut fail = None;
    for c in chunks {
        let (p, l, f) = c?;
        points.extend(p);
        logw.extend(l);
        if fail.is_none() {
            fail = f;
        }
    }
    let weights = normalise_log_weights(&logw).ok_or_else(|| {
        fail.unwrap_or(Error::DegenerateWeights { n_eff: 0.0 })
    })?;
    let n_eff = effective_sample_size(&weights);
    let mut warnings = vec![];
    if n_eff < 10.0 {
        warnings.push(Error::DegenerateWeights { n_eff }.to_string());
    }
    Ok(PosteriorApprox {
        kind: PosteriorKind::Particles {
            points: DMatrix::from_row_slice(n, d, &points),
            weights: DVector::from_vec(weights),
        },
        latent: plan.latent_names(),
        diagnostics: Diagnostics {
            method: Method::ImportanceSampling,
            iterations: None,
            grad_norm: None,
            n,
            n_eff,
            seed,
            warnings,
        },
    })
}

/// Weights proportional to `exp(logw)`, scaled to sum to their count. `None`
/// when every weight vanishes.
pub fn normalise_log_weights(logw: &[f64]) -> Option<Vec<f64>> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let mut w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    let k = w.len() as f64 / s;
    for v in &mut w {
        *v *= k;
    }
    Some(w)
}

/// One draw of the full exogenous posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct FullPosteriorSample {
    pub u: Assignment,
    pub weight: f64,
}

/// Augments latent draws with the noise of the treatment and the observed
/// variables, which the data determine.
pub fn compose_full_posterior(scm: &Scm, draws: &WeightedDraws, q: &Query) -> Result<Vec<FullPosteriorSample>> {
    let plan = Plan::new(scm, q)?;
    if draws.points.ncols() != plan.latent.len() {
        return Err(Error::InvalidArgument(format!(
            "draws have {} columns, the query has {} latent noise variables",
            draws.points.ncols(),
            plan.latent.len()
        )));
    }
    let mut slots = vec![0.0; scm.n_slots()];
    let mut jac = vec![0.0; plan.sources.len()];
    let mut regs = Vec::new();
    let mut out = Vec::with_capacity(draws.len());
    for (r, row) in draws.points.row_iter().enumerate() {
        let u: Vec<f64> = row.iter().copied().collect();
        plan.compose(&u, plan.x, &mut slots, &mut jac, &mut regs)?;
        let assignment = scm
            .exogenous()
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), slots[i]))
            .collect();
        out.push(FullPosteriorSample {
            u: assignment,
            weight: draws.weights[r],
        });
    }
    Ok(out)
}

/// Convenience for callers holding only an assignment of latent noise.
pub fn latent_draws_from(points: Vec<Vec<f64>>) -> WeightedDraws {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    let flat: Vec<f64> = points.into_iter().flatten().collect();
    WeightedDraws {
        points: DMatrix::from_row_slice(n, d, &flat),
        weights: DVector::from_element(n, 1.0),
    }
}
