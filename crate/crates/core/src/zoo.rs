//! Built-in models, closed-form answers for the linear ones, and summary
//! statistics of the statin study.

use serde::{Deserialize, Serialize};

use crate::dist::NoiseDistribution;
use crate::error::{Error, Result};
use crate::expr::Expression as E;
use crate::scm::{build_scm, Dataset, EndogenousDef, ExogenousDecl, Roles, Scm};

pub const BUILTINS: [&str; 5] = ["confounding", "overcontrol", "selection", "lesser-evil", "ascvd"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModelParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    #[serde(default = "one")]
    pub delta: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for LinearModelParams {
    fn default() -> Self {
        LinearModelParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            delta: 1.0,
        }
    }
}

impl LinearModelParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        LinearModelParams {
            alpha,
            beta,
            gamma,
            delta: 1.0,
        }
    }

    fn check(&self) -> Result<()> {
        if [self.alpha, self.beta, self.gamma, self.delta].iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::BadParams("parameters must be finite".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AscvdParams {
    pub theta_l: Vec<f64>,
    pub theta_f: Vec<f64>,
    pub theta_d: Vec<f64>,
    pub theta_r: Vec<f64>,
    pub theta_x: Vec<f64>,
    pub theta_m: Vec<f64>,
    pub theta_y: Vec<f64>,
    pub theta_h: Vec<f64>,
}

impl Default for AscvdParams {
    fn default() -> Self {
        let ln = f64::ln;
        AscvdParams {
            theta_l: vec![0.005, ln(100.0), ln(0.18)],
            theta_f: vec![-5.5, 0.05, -20.0, 0.001, ln(1.1)],
            theta_d: vec![-4.23, 0.03, -0.02, 0.0009, ln(1.6)],
            theta_r: vec![4.3, 3.5, -2.07, 0.05, 4.09, -1.04, 0.01],
            theta_x: vec![-30.0, 0.273, 1.592, 2.461, -3.471, 1.39, 0.112, 0.973, -0.046, 0.003, ln(1.7)],
            theta_m: vec![0.1, -3.5, 5.0, 0.0],
            theta_y: vec![-39.0, 1.4, -ln(110.0), -6.25, -0.75, -0.1, 0.45, 1.75, 0.29, 0.1, ln(0.9)],
            theta_h: vec![-1.7, 0.8, 1.5, ln(0.5)],
        }
    }
}

impl AscvdParams {
    fn check(&self) -> Result<()> {
        let groups: [(&str, &Vec<f64>, usize); 8] = [
            ("theta_l", &self.theta_l, 3),
            ("theta_f", &self.theta_f, 5),
            ("theta_d", &self.theta_d, 5),
            ("theta_r", &self.theta_r, 7),
            ("theta_x", &self.theta_x, 11),
            ("theta_m", &self.theta_m, 4),
            ("theta_y", &self.theta_y, 11),
            ("theta_h", &self.theta_h, 4),
        ];
        for (name, v, len) in groups {
            if v.len() != len {
                return Err(Error::BadParams(format!("{name} needs {len} values, got {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::BadParams(format!("{name} has a non-finite value")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelParams {
    Linear(LinearModelParams),
    Ascvd(AscvdParams),
}

fn gauss(names: &[&str]) -> Vec<ExogenousDecl> {
    names
        .iter()
        .map(|n| ExogenousDecl {
            name: (*n).into(),
            dist: NoiseDistribution::StandardGaussian,
        })
        .collect()
}

fn def(name: &str, expr: E) -> EndogenousDef {
    EndogenousDef {
        name: name.into(),
        expr,
    }
}

fn v(name: &str) -> E {
    E::var(name)
}

/// A built-in model with its default observed set. `params` must be
/// [`ModelParams::Linear`] for the four small models and
/// [`ModelParams::Ascvd`] for `ascvd`; `None` selects the defaults.
pub fn builtin(name: &str, params: Option<&ModelParams>) -> Result<Scm> {
    let name = name.strip_prefix("builtin:").unwrap_or(name);
    match name {
        "confounding" | "overcontrol" | "selection" | "lesser-evil" => {
            let p = match params {
                None => LinearModelParams::default(),
                Some(ModelParams::Linear(p)) => *p,
                Some(ModelParams::Ascvd(_)) => {
                    return Err(Error::BadParams(format!("`{name}` takes alpha, beta, gamma, delta")))
                }
            };
            linear(name, &p)
        }
        "ascvd" => {
            let p = match params {
                None => AscvdParams::default(),
                Some(ModelParams::Ascvd(p)) => p.clone(),
                Some(ModelParams::Linear(_)) => return Err(Error::BadParams("`ascvd` takes theta vectors".into())),
            };
            ascvd(&p)
        }
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

pub fn linear(name: &str, p: &LinearModelParams) -> Result<Scm> {
    p.check()?;
    let (a, b, g, d) = (p.alpha, p.beta, p.gamma, p.delta);
    match name {
        "confounding" => build_scm(
            gauss(&["U_V1", "U_X", "U_Y"]),
            vec![
                def("V1", v("U_V1")),
                def("X", a * v("V1") + v("U_X")),
                def("Y", b * v("X") + g * v("V1") + v("U_Y")),
            ],
            Roles::new("X", "Y"),
        ),
        "overcontrol" => build_scm(
            gauss(&["U_X", "U_V1", "U_Y"]),
            vec![
                def("X", v("U_X")),
                def("V1", a * v("X") + v("U_V1")),
                def("Y", b * v("X") + g * v("V1") + v("U_Y")),
            ],
            Roles::new("X", "Y").observe(["V1"]),
        ),
        "selection" => build_scm(
            gauss(&["U_X", "U_Y", "U_V1"]),
            vec![
                def("X", v("U_X")),
                def("Y", a * v("X") + v("U_Y")),
                def("V1", b * v("X") + g * v("Y") + v("U_V1")),
            ],
            Roles::new("X", "Y").observe(["V1"]),
        ),
        "lesser-evil" => build_scm(
            gauss(&["U_V1", "U_X", "U_V2", "U_Y"]),
            vec![
                def("V1", v("U_V1")),
                def("X", a * v("V1").exp() + v("U_X")),
                def("V2", b * v("X") + g * v("V1").powf(2.0) + v("U_V2")),
                def("Y", d * v("V2") + v("U_Y")),
            ],
            Roles::new("X", "Y"),
        ),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

pub fn ascvd(p: &AscvdParams) -> Result<Scm> {
    p.check()?;
    let (tl, tf, td, tr, tx, tm, ty, th) = (
        &p.theta_l, &p.theta_f, &p.theta_d, &p.theta_r, &p.theta_x, &p.theta_m, &p.theta_y, &p.theta_h,
    );
    let mut ex = vec![ExogenousDecl {
        name: "U_A".into(),
        dist: NoiseDistribution::trapezoidal(40.0, 40.0, 60.0, 75.0)?,
    }];
    ex.extend(gauss(&["U_L", "U_F", "U_D", "U_X", "U_M", "U_Y", "U_H"]));
    let a = || v("A");
    let l = || v("L");
    let log_a = || v("A").ln();
    let scale = |t: f64, u: &str| t.exp() * v(u);
    let endo = vec![
        def("A", v("U_A")),
        def("L", tl[0] * a() + tl[1] + scale(tl[2], "U_L")),
        def(
            "F",
            (tf[0] + tf[1] * (a() + tf[2]) + tf[3] * a().powf(2.0) + scale(tf[4], "U_F")).sigmoid(),
        ),
        def(
            "D",
            (td[0] + td[1] * l() + td[2] * a() + td[3] * a().powf(2.0) + scale(td[4], "U_D")).sigmoid(),
        ),
        def(
            "R",
            (tr[0]
                + tr[1] * v("D")
                + tr[2] * log_a()
                + tr[3] * log_a().powf(2.0)
                + tr[4] * l()
                + tr[5] * log_a() * l()
                + tr[6] * v("F"))
            .sigmoid(),
        ),
        def(
            "X",
            (tx[1] * v("R").in_range(0.05, 0.075)
                + tx[2] * v("R").in_range(0.075, 0.2)
                + tx[3] * v("R").ge(0.2)
                + tx[4]
                + tx[5] * v("D").ge(0.5)
                + tx[6] * l()
                + tx[7] * l().ge(160f64.ln())
                + tx[8] * (a() + tx[0])
                + tx[9] * (a() + tx[0]).powf(2.0)
                + scale(tx[10], "U_X"))
            .sigmoid(),
        ),
        def(
            "M",
            l() + tm[0] + tm[1] * v("X") * (tm[2] - l()) * l().lt(130f64.ln()) + scale(tm[3], "U_M"),
        ),
        def(
            "Y",
            (ty[3]
                + ty[4] * v("X")
                + ty[5] * v("M")
                + ty[6] * (a() + ty[0]).sqrt()
                + ty[7] * v("D")
                + ty[8] * (1.0 + v("R")).exp()
                + ty[9] * (l() + ty[1] * (10.0 * (l() + ty[2])).sigmoid() * l().powf(2.0))
                + scale(ty[10], "U_Y"))
            .sigmoid(),
        ),
        def("H", (th[0] + th[1] * v("X") + th[2] * v("Y") + scale(th[3], "U_H")).sigmoid()),
    ];
    build_scm(ex, endo, Roles::new("X", "Y").observe(["A", "L", "F", "D"]))
}

/// `(A, C, B)` for the three linear models.
pub fn closed_form(name: &str, p: &LinearModelParams) -> Result<(f64, f64, f64)> {
    let (a, b, g) = (p.alpha, p.beta, p.gamma);
    let name = name.strip_prefix("builtin:").unwrap_or(name);
    match name {
        "confounding" => {
            let bias = g * a / (1.0 + a * a);
            Ok((b + bias, b, bias))
        }
        "overcontrol" => Ok((b, b + g * a, -g * a)),
        "selection" => Ok(((a - g * b) / (1.0 + g * g), a, -g * (b + g * a) / (1.0 + g * g))),
        other => Err(Error::UnknownModel(other.to_string())),
    }
}

/// Means of one group of the statin study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub size: usize,
    pub age: f64,
    /// Share of rows with `D ≥ 0.5`.
    pub diabetes: f64,
    /// Share of rows with `H ≥ 0.5`.
    pub headache: f64,
    pub log_pre_ldl: f64,
    pub log_post_ldl: f64,
    pub risk_score: f64,
    pub ascvd: f64,
    pub mean_d: f64,
    pub mean_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AscvdSummary {
    pub threshold: f64,
    pub statin: GroupSummary,
    pub no_statin: GroupSummary,
}

impl AscvdSummary {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "group,size,age,diabetes,headache,log_pre_ldl,log_post_ldl,risk_score,ascvd,mean_d,mean_h\n",
        );
        for (name, g) in [("statin", &self.statin), ("no_statin", &self.no_statin)] {
            s.push_str(&format!(
                "{name},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                g.size, g.age, g.diabetes, g.headache, g.log_pre_ldl, g.log_post_ldl, g.risk_score, g.ascvd,
                g.mean_d, g.mean_h
            ));
        }
        s
    }
}

/// Splits rows by `X ≥ threshold` and averages the reported columns.
pub fn ascvd_summary(data: &Dataset, threshold: f64) -> Result<AscvdSummary> {
    let col = |n: &str| data.column_index(n);
    let [x, a, d, h, l, m, r, y] = ["X", "A", "D", "H", "L", "M", "R", "Y"].map(col);
    let (x, a, d, h, l, m, r, y) = (x?, a?, d?, h?, l?, m?, r?, y?);
    let group = |treated: bool| -> Result<GroupSummary> {
        let rows: Vec<&[f64]> = data.rows().filter(|row| (row[x] >= threshold) == treated).collect();
        if rows.is_empty() {
            return Err(Error::EmptyGroup(if treated { "statin" } else { "no statin" }.into()));
        }
        let k = rows.len() as f64;
        let mean = |c: usize| rows.iter().map(|row| row[c]).sum::<f64>() / k;
        let share = |c: usize| rows.iter().filter(|row| row[c] >= 0.5).count() as f64 / k;
        Ok(GroupSummary {
            size: rows.len(),
            age: mean(a),
            diabetes: share(d),
            headache: share(h),
            log_pre_ldl: mean(l),
            log_post_ldl: mean(m),
            risk_score: mean(r),
            ascvd: mean(y),
            mean_d: mean(d),
            mean_h: mean(h),
        })
    };
    Ok(AscvdSummary {
        threshold,
        statin: group(true)?,
        no_statin: group(false)?,
    })
}

/// Treatment grid of the lesser-evil experiment: `n` midpoints on `(lo, hi)`.
pub fn treatment_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::ScmSpec;

    #[test]
    fn builtin_shapes() {
        let c = builtin("confounding", None).unwrap();
        assert_eq!(c.n_endogenous(), 3);
        assert!(c.roles().latent.contains("V1"));
        let a = builtin("builtin:ascvd", None).unwrap();
        assert_eq!(a.n_endogenous(), 9);
        assert_eq!(a.n_exogenous(), 8);
        let le = builtin(
            "lesser-evil",
            Some(&ModelParams::Linear(LinearModelParams { alpha: 5.0, ..Default::default() })),
        )
        .unwrap();
        let x = &le.endogenous()[le.treatment_index()];
        assert_eq!(x.expr, 5.0 * E::var("V1").exp() + E::var("U_X"));
    }

    #[test]
    fn errors() {
        assert!(matches!(builtin("nope", None), Err(Error::UnknownModel(_))));
        let mut p = AscvdParams::default();
        p.theta_h.pop();
        assert!(matches!(builtin("ascvd", Some(&ModelParams::Ascvd(p))), Err(Error::BadParams(_))));
        let nan = LinearModelParams::new(f64::NAN, 1.0, 1.0);
        assert!(matches!(builtin("selection", Some(&ModelParams::Linear(nan))), Err(Error::BadParams(_))));
        assert!(matches!(closed_form("lesser-evil", &LinearModelParams::default()), Err(Error::UnknownModel(_))));
    }

    #[test]
    fn closed_forms() {
        let p = LinearModelParams::default();
        assert_eq!(closed_form("confounding", &p).unwrap(), (1.5, 1.0, 0.5));
        assert_eq!(closed_form("selection", &p).unwrap(), (0.0, 1.0, -1.0));
        let z = LinearModelParams::new(2.0, -1.0, 0.0);
        for m in ["confounding", "overcontrol", "selection"] {
            assert_eq!(closed_form(m, &z).unwrap().2, 0.0);
        }
    }

    #[test]
    fn ascvd_is_finite_at_noise_means() {
        let scm = builtin("ascvd", None).unwrap();
        let u: Vec<f64> = scm.exogenous().iter().map(|e| e.dist.mean()).collect();
        let v = scm.evaluate_noise(&u).unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn builtins_round_trip_through_json() {
        for name in BUILTINS {
            let scm = builtin(name, None).unwrap();
            let back = ScmSpec::from_json(&scm.to_spec().to_json()).unwrap().build().unwrap();
            assert_eq!(back.to_spec(), scm.to_spec(), "{name}");
        }
    }

    #[test]
    fn summary_groups() {
        let scm = builtin("ascvd", None).unwrap();
        let data = scm.sample_observational(500, 1).unwrap();
        let s = ascvd_summary(&data, 0.5).unwrap();
        assert_eq!(s.statin.size + s.no_statin.size, 500);
        assert!(matches!(ascvd_summary(&data, 0.0), Err(Error::EmptyGroup(_))));
    }

    #[test]
    fn grid_midpoints() {
        let g = treatment_grid(-20.0, 20.0, 200);
        assert_eq!(g.len(), 200);
        assert!((g[0] + 19.9).abs() < 1e-12 && (g[199] - 19.9).abs() < 1e-12);
    }
}
