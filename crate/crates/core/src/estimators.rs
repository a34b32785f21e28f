//! Monte Carlo estimates of the association `A`, the average partial effect on
//! the treated `C`, the causal bias `B = A - C`, and the split of `B` over the
//! treatment and the observed variables.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::autodiff::Dual;
use crate::error::{Error, Result};
use crate::expr::VariableId;
use crate::inference::{
    effective_sample_size, importance_plan, laplace_plan, MapOptions, Method, Plan, PosteriorApprox, Query,
    WeightedDraws,
};
use crate::parallel;
use crate::scm::Scm;

/// A point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

type D = Dual<f64>;

/// Per-particle quantities, flat over particles (`s` entries per particle for
/// per-source arrays).
struct Particles {
    n: usize,
    s: usize,
    /// Normalised to sum to one.
    w: Vec<f64>,
    f: Vec<f64>,
    fx: Vec<f64>,
    /// `∂f_Y^x/∂u_i` in the do-model.
    a: Vec<f64>,
    /// `∂ log p(u_i)` at `u*_i`.
    score: Vec<f64>,
    /// `∂x(f_i^{x,o} - v_i) / (∂f_i/∂u_i)`; zero for non-descendants of X.
    ratio: Vec<f64>,
    /// `∂x log p(x, o | u_L)`, when requested.
    cov_score: Vec<f64>,
}

struct Buffers {
    slots: Vec<f64>,
    jac: Vec<f64>,
    regs: Vec<f64>,
    dslots: Vec<D>,
    djac: Vec<D>,
    dregs: Vec<D>,
    du: Vec<D>,
}

/// Which sources can carry bias: the treatment and observed descendants of it.
fn active_sources(plan: &Plan<'_>) -> Vec<bool> {
    plan.sources
        .iter()
        .map(|&j| j == plan.x_idx || plan.x_desc[j])
        .collect()
}

fn collect(plan: &Plan<'_>, draws: &WeightedDraws, want_cov: bool) -> Result<Particles> {
    let n = draws.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no posterior draws".into()));
    }
    let d = plan.latent.len();
    if draws.points.ncols() != d {
        return Err(Error::InvalidArgument(format!(
            "draws have {} columns, the query has {d} latent noise variables",
            draws.points.ncols()
        )));
    }
    let total: f64 = draws.weights.iter().sum();
    if !(total > 0.0) || draws.weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be non-negative with a positive sum".into()));
    }
    let scm = plan.scm;
    let ne = scm.n_exogenous();
    let nv = scm.n_endogenous();
    let s = plan.sources.len();
    let active = active_sources(plan);
    let desc: Vec<Vec<bool>> = plan.sources.iter().map(|&j| scm.descendants(j)).collect();
    let (x_idx, y_idx) = (plan.x_idx, plan.y_idx);
    let y_moves = plan.x_desc[y_idx];

    let chunks = parallel::map_chunks(n, 0, |range, _| -> Result<Vec<(f64, f64, Vec<f64>, Vec<f64>, Vec<f64>, f64)>> {
        let mut b = Buffers {
            slots: vec![0.0; scm.n_slots()],
            jac: vec![0.0; s],
            regs: Vec::new(),
            dslots: vec![D::constant(0.0); scm.n_slots()],
            djac: vec![D::constant(0.0); s],
            dregs: Vec::new(),
            du: vec![D::constant(0.0); d],
        };
        let mut out = Vec::with_capacity(range.len());
        let mut u = vec![0.0; d];
        for r in range {
            if draws.weights[r] == 0.0 {
                out.push((0.0, 0.0, vec![0.0; s], vec![0.0; s], vec![0.0; s], 0.0));
                continue;
            }
            for k in 0..d {
                u[k] = draws.points[(r, k)];
            }
            plan.compose(&u, plan.x, &mut b.slots, &mut b.jac, &mut b.regs)?;

            let reset = |ds: &mut [D], sl: &[f64]| {
                for (t, v) in ds.iter_mut().zip(sl) {
                    *t = D::constant(*v);
                }
            };

            // do-model, seeded on x
            let (f, fx) = if y_moves {
                reset(&mut b.dslots, &b.slots);
                b.dslots[ne + x_idx] = D::variable(plan.x);
                for m in x_idx + 1..nv {
                    if plan.x_desc[m] {
                        let v = scm
                            .program(m)
                            .run(|q| b.dslots[q], &mut b.dregs)
                            .map_err(|_| scm.domain_error(m))?;
                        b.dslots[ne + m] = v;
                    }
                }
                (b.dslots[ne + y_idx].re, b.dslots[ne + y_idx].eps)
            } else {
                (b.slots[ne + y_idx], 0.0)
            };

            let mut a = vec![0.0; s];
            let mut score = vec![0.0; s];
            let mut ratio = vec![0.0; s];

            // do-model, seeded on each observed descendant's noise
            for k in 0..s {
                let j = plan.sources[k];
                if !active[k] || j == x_idx || !(j == y_idx || desc[k][y_idx]) {
                    continue;
                }
                reset(&mut b.dslots, &b.slots);
                let i = scm.noise_of(j).unwrap();
                b.dslots[i] = D::variable(b.slots[i]);
                for m in j..nv {
                    if m == j || desc[k][m] {
                        let v = scm
                            .program(m)
                            .run(|q| b.dslots[q], &mut b.dregs)
                            .map_err(|_| scm.domain_error(m))?;
                        b.dslots[ne + m] = v;
                    }
                }
                a[k] = b.dslots[ne + y_idx].eps;
            }

            // clamped model f^{x,o}, seeded on x
            let any_obs_desc = (0..s).any(|k| active[k] && plan.sources[k] != x_idx);
            if any_obs_desc {
                reset(&mut b.dslots, &b.slots);
                b.dslots[ne + x_idx] = D::variable(plan.x);
            }
            let mut k = 0;
            for m in 0..nv {
                let is_source = plan.fixed[m];
                if any_obs_desc && plan.x_desc[m] {
                    let v = scm
                        .program(m)
                        .run(|q| b.dslots[q], &mut b.dregs)
                        .map_err(|_| scm.domain_error(m))?;
                    if is_source {
                        ratio[k] = v.eps / b.jac[k];
                    } else {
                        b.dslots[ne + m] = v;
                    }
                }
                if is_source {
                    if m == x_idx {
                        ratio[k] = -1.0 / b.jac[k];
                    }
                    if active[k] {
                        let i = scm.noise_of(m).unwrap();
                        score[k] = scm.exogenous()[i].dist.d_log_pdf(b.slots[i]);
                    }
                    k += 1;
                }
            }

            let cs = if want_cov {
                for (t, v) in b.du.iter_mut().zip(&u) {
                    *t = D::constant(*v);
                }
                plan.compose(&b.du, D::variable(plan.x), &mut b.dslots, &mut b.djac, &mut b.dregs)?;
                plan.log_likelihood(&b.dslots, &b.djac).eps
            } else {
                0.0
            };
            out.push((f, fx, a, score, ratio, cs));
        }
        Ok(out)
    });

    let mut p = Particles {
        n,
        s,
        w: draws.weights.iter().map(|w| w / total).collect(),
        f: Vec::with_capacity(n),
        fx: Vec::with_capacity(n),
        a: Vec::with_capacity(n * s),
        score: Vec::with_capacity(n * s),
        ratio: Vec::with_capacity(n * s),
        cov_score: Vec::with_capacity(if want_cov { n } else { 0 }),
    };
    for c in chunks {
        for (f, fx, a, sc, r, cs) in c? {
            p.f.push(f);
            p.fx.push(fx);
            p.a.extend(a);
            p.score.extend(sc);
            p.ratio.extend(r);
            if want_cov {
                p.cov_score.push(cs);
            }
        }
    }
    Ok(p)
}

/// All three quantities, with per-source bias terms in source order.
struct Summary {
    c: Estimate,
    b: Estimate,
    a: Estimate,
    per_source: Vec<Estimate>,
    n_eff: f64,
}

fn summarise(p: &Particles) -> Summary {
    let (n, s, w) = (p.n, p.s, &p.w);
    let ybar: f64 = (0..n).map(|r| w[r] * p.f[r]).sum();
    let c: f64 = (0..n).map(|r| w[r] * p.fx[r]).sum();
    let term = |r: usize, k: usize| {
        let q = r * s + k;
        -(p.a[q] + (p.f[r] - ybar) * p.score[q]) * p.ratio[q]
    };
    let mut bk = vec![0.0; s];
    let mut kappa = vec![0.0; s];
    for r in 0..n {
        for k in 0..s {
            bk[k] += w[r] * term(r, k);
            kappa[k] += w[r] * p.score[r * s + k] * p.ratio[r * s + k];
        }
    }
    let b: f64 = bk.iter().sum();
    let (mut vc, mut vb, mut va) = (0.0, 0.0, 0.0);
    let mut vk = vec![0.0; s];
    for r in 0..n {
        let w2 = w[r] * w[r];
        let psi_c = p.fx[r] - c;
        let mut psi_b = 0.0;
        for k in 0..s {
            let psi = term(r, k) - bk[k] + kappa[k] * (p.f[r] - ybar);
            vk[k] += w2 * psi * psi;
            psi_b += psi;
        }
        vc += w2 * psi_c * psi_c;
        vb += w2 * psi_b * psi_b;
        va += w2 * (psi_c + psi_b) * (psi_c + psi_b);
    }
    Summary {
        c: Estimate { value: c, std_error: vc.sqrt() },
        b: Estimate { value: b, std_error: vb.sqrt() },
        a: Estimate { value: c + b, std_error: va.sqrt() },
        per_source: bk
            .iter()
            .zip(&vk)
            .map(|(&value, &v)| Estimate { value, std_error: v.sqrt() })
            .collect(),
        n_eff: effective_sample_size(w),
    }
}

fn covariance_estimate(p: &Particles) -> Estimate {
    let (n, w) = (p.n, &p.w);
    let ybar: f64 = (0..n).map(|r| w[r] * p.f[r]).sum();
    let sbar: f64 = (0..n).map(|r| w[r] * p.cov_score[r]).sum();
    let b: f64 = (0..n).map(|r| w[r] * (p.f[r] - ybar) * (p.cov_score[r] - sbar)).sum();
    let v: f64 = (0..n)
        .map(|r| {
            let psi = (p.f[r] - ybar) * (p.cov_score[r] - sbar) - b;
            w[r] * w[r] * psi * psi
        })
        .sum();
    Estimate {
        value: b,
        std_error: v.sqrt(),
    }
}

/// `C(x, o)`: posterior mean of `∂x f_Y^x`.
pub fn average_partial_effect(scm: &Scm, q: &Query, draws: &WeightedDraws) -> Result<Estimate> {
    let plan = Plan::new(scm, q)?;
    Ok(summarise(&collect(&plan, draws, false)?).c)
}

/// `B(x, o)` and its contributions from the treatment and each observed variable.
pub fn causal_bias(
    scm: &Scm,
    q: &Query,
    draws: &WeightedDraws,
) -> Result<(Estimate, BTreeMap<VariableId, Estimate>)> {
    let plan = Plan::new(scm, q)?;
    let sm = summarise(&collect(&plan, draws, false)?);
    Ok((sm.b, source_map(&plan, &sm.per_source)))
}

/// `A(x, o) = C + B`.
pub fn association(scm: &Scm, q: &Query, draws: &WeightedDraws) -> Result<Estimate> {
    let plan = Plan::new(scm, q)?;
    Ok(summarise(&collect(&plan, draws, false)?).a)
}

fn source_map(plan: &Plan<'_>, v: &[Estimate]) -> BTreeMap<VariableId, Estimate> {
    plan.sources
        .iter()
        .zip(v)
        .map(|(&j, e)| (plan.scm.endogenous()[j].name.clone(), *e))
        .collect()
}

/// Observed variables that lie on a directed path from the treatment to the outcome.
pub fn observed_mediators(scm: &Scm, q: &Query) -> Result<Vec<VariableId>> {
    let plan = Plan::new(scm, q)?;
    Ok(mediators(&plan))
}

fn mediators(plan: &Plan<'_>) -> Vec<VariableId> {
    let scm = plan.scm;
    let nv = scm.n_endogenous();
    let mut an = vec![false; nv];
    an[plan.y_idx] = true;
    for j in (0..nv).rev() {
        if an[j] {
            for &p in scm.parents(j) {
                an[p] = true;
            }
        }
    }
    plan.sources
        .iter()
        .filter(|&&j| j != plan.x_idx && plan.x_desc[j] && an[j])
        .map(|&j| scm.endogenous()[j].name.clone())
        .collect()
}

/// `B(x, o)` as the posterior covariance of the outcome with the score
/// `∂x log p(U_L, x, o)`. Undefined when an observed variable mediates the
/// effect of the treatment.
pub fn bias_covariance_form(scm: &Scm, q: &Query, draws: &WeightedDraws) -> Result<Estimate> {
    let plan = Plan::new(scm, q)?;
    let med = mediators(&plan);
    if !med.is_empty() {
        return Err(Error::MediatorPresent(med.into_iter().map(|v| v.0).collect()));
    }
    Ok(covariance_estimate(&collect(&plan, draws, true)?))
}

/// Central finite difference of `E[Y | x, o]` over importance-sampled
/// posteriors at `x ± h`, sharing the prior draws.
pub fn association_fd(scm: &Scm, q: &Query, n: usize, seed: u64, h: f64) -> Result<Estimate> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument("step must be positive".into()));
    }
    let side = |x: f64| -> Result<(Vec<f64>, Vec<f64>)> {
        let q = Query {
            x,
            observed: q.observed.clone(),
        };
        let plan = Plan::new(scm, &q)?;
        let post = importance_plan(&plan, n, seed)?;
        let draws = post.draws(n, seed)?;
        let mut slots = vec![0.0; scm.n_slots()];
        let mut jac = vec![0.0; plan.sources.len()];
        let mut regs = Vec::new();
        let ne = scm.n_exogenous();
        let mut y = Vec::with_capacity(n);
        for (r, row) in draws.points.row_iter().enumerate() {
            if draws.weights[r] == 0.0 {
                y.push(0.0);
                continue;
            }
            let u: Vec<f64> = row.iter().copied().collect();
            plan.compose(&u, x, &mut slots, &mut jac, &mut regs)?;
            y.push(slots[ne + plan.y_idx]);
        }
        let w = draws.weights.iter().map(|w| w / n as f64).collect();
        Ok((w, y))
    };
    let (wp, yp) = side(q.x + h)?;
    let (wm, ym) = side(q.x - h)?;
    let mean = |w: &[f64], y: &[f64]| w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let (mp, mm) = (mean(&wp, &yp), mean(&wm, &ym));
    let v: f64 = (0..n)
        .map(|r| {
            let psi = wp[r] * (yp[r] - mp) - wm[r] * (ym[r] - mm);
            psi * psi
        })
        .sum();
    Ok(Estimate {
        value: (mp - mm) / (2.0 * h),
        std_error: v.sqrt() / (2.0 * h),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub method: Method,
    /// Posterior draws for Laplace, particles for importance sampling.
    pub samples: usize,
    pub seed: u64,
    pub map: MapOptions,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            method: Method::Laplace,
            samples: 10_000,
            seed: 0,
            map: MapOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StdErrors {
    pub association_a: f64,
    pub effect_c: f64,
    pub bias_b: f64,
    pub per_source: BTreeMap<VariableId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasReport {
    pub x: f64,
    pub observed: BTreeMap<VariableId, f64>,
    pub association_a: f64,
    pub effect_c: f64,
    pub bias_b: f64,
    pub per_source: BTreeMap<VariableId, f64>,
    pub std_errors: StdErrors,
    pub n_used: usize,
    pub n_eff: f64,
    pub method: Method,
    pub seed: u64,
    pub diagnostics: crate::inference::Diagnostics,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

impl BiasReport {
    pub fn estimate_c(&self) -> Estimate {
        Estimate {
            value: self.effect_c,
            std_error: self.std_errors.effect_c,
        }
    }

    pub fn estimate_b(&self) -> Estimate {
        Estimate {
            value: self.bias_b,
            std_error: self.std_errors.bias_b,
        }
    }

    pub fn estimate_a(&self) -> Estimate {
        Estimate {
            value: self.association_a,
            std_error: self.std_errors.association_a,
        }
    }

    pub fn csv_header(&self) -> String {
        let mut cols = vec!["x".to_string(), "A".into(), "C".into(), "B".into()];
        cols.extend(self.per_source.keys().map(|k| format!("src:{k}")));
        cols.extend(["se_A", "se_C", "se_B", "n", "n_eff", "method", "seed"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![fmt(self.x), fmt(self.association_a), fmt(self.effect_c), fmt(self.bias_b)];
        cols.extend(self.per_source.values().map(|v| fmt(*v)));
        cols.extend([
            fmt(self.std_errors.association_a),
            fmt(self.std_errors.effect_c),
            fmt(self.std_errors.bias_b),
            self.n_used.to_string(),
            fmt(self.n_eff),
            self.method.as_str().to_string(),
            self.seed.to_string(),
        ]);
        cols.join(",")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }
}

/// Posterior for a query by the chosen method.
pub fn posterior(scm: &Scm, q: &Query, opts: &ReportOptions) -> Result<PosteriorApprox> {
    let plan = Plan::new(scm, q)?;
    match opts.method {
        Method::Laplace => laplace_plan(&plan, &opts.map, opts.seed),
        Method::ImportanceSampling => importance_plan(&plan, opts.samples, opts.seed),
    }
}

/// Posterior, draws and all estimates for one query.
pub fn bias_report(scm: &Scm, q: &Query, opts: &ReportOptions) -> Result<BiasReport> {
    let post = posterior(scm, q, opts)?;
    let draws = post.draws(opts.samples, opts.seed)?;
    report_from(scm, q, &post, &draws)
}

/// Estimates from an existing posterior and its draws.
pub fn report_from(scm: &Scm, q: &Query, post: &PosteriorApprox, draws: &WeightedDraws) -> Result<BiasReport> {
    let plan = Plan::new(scm, q)?;
    let sm = summarise(&collect(&plan, draws, false)?);
    let per = source_map(&plan, &sm.per_source);
    let mut diagnostics = post.diagnostics.clone();
    diagnostics.n = draws.len();
    diagnostics.n_eff = sm.n_eff;
    let mut warnings = diagnostics.warnings.clone();
    if sm.n_eff < 10.0 && warnings.is_empty() {
        warnings.push(Error::DegenerateWeights { n_eff: sm.n_eff }.to_string());
    }
    Ok(BiasReport {
        x: q.x,
        observed: q.observed.clone(),
        association_a: sm.a.value,
        effect_c: sm.c.value,
        bias_b: sm.b.value,
        per_source: per.iter().map(|(k, e)| (k.clone(), e.value)).collect(),
        std_errors: StdErrors {
            association_a: sm.a.std_error,
            effect_c: sm.c.std_error,
            bias_b: sm.b.std_error,
            per_source: per.iter().map(|(k, e)| (k.clone(), e.std_error)).collect(),
        },
        n_used: draws.len(),
        n_eff: sm.n_eff,
        method: post.method(),
        seed: post.diagnostics.seed,
        diagnostics,
        warnings,
    })
}
