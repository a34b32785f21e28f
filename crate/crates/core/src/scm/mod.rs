//! Structural causal models.

mod program;
mod sample;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub(crate) use program::{InvertFailure, Program};
pub use sample::Dataset;

use crate::autodiff::Real;
use crate::dist::NoiseDistribution;
use crate::error::{Error, Result};
use crate::expr::{Expression, VariableId};

/// Values for a set of variables.
pub type Assignment = BTreeMap<VariableId, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExogenousDecl {
    pub name: VariableId,
    pub dist: NoiseDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndogenousDef {
    pub name: VariableId,
    pub expr: Expression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub treatment: VariableId,
    pub outcome: VariableId,
    #[serde(default)]
    pub observed: BTreeSet<VariableId>,
    /// Filled in at build time with every endogenous variable that has no other role.
    #[serde(default)]
    pub latent: BTreeSet<VariableId>,
}

impl Roles {
    pub fn new(treatment: &str, outcome: &str) -> Self {
        Roles {
            treatment: treatment.into(),
            outcome: outcome.into(),
            observed: BTreeSet::new(),
            latent: BTreeSet::new(),
        }
    }

    pub fn observe<I, S>(mut self, names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<VariableId>,
    {
        self.observed.extend(names.into_iter().map(Into::into));
        self
    }
}

/// On-disk model description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmSpec {
    pub exogenous: Vec<ExogenousDecl>,
    pub endogenous: Vec<EndogenousDef>,
    pub roles: Roles,
}

impl ScmSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("specs always serialize")
    }

    pub fn build(self) -> Result<Scm> {
        build_scm(self.exogenous, self.endogenous, self.roles)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarRef {
    Exogenous(usize),
    Endogenous(usize),
}

/// A validated structural causal model.
///
/// Endogenous variables are stored in topological order. Internally every
/// variable owns a slot: exogenous `i` is slot `i`, endogenous `j` is slot
/// `n_exogenous + j`.
#[derive(Debug, Clone)]
pub struct Scm {
    exogenous: Vec<ExogenousDecl>,
    endogenous: Vec<EndogenousDef>,
    roles: Roles,
    noise_of: Vec<Option<usize>>,
    owner_of: Vec<usize>,
    parents: Vec<Vec<usize>>,
    programs: Vec<Program>,
    index: HashMap<String, VarRef>,
}

/// Validates and compiles a model.
pub fn build_scm(
    exogenous: Vec<ExogenousDecl>,
    endogenous: Vec<EndogenousDef>,
    mut roles: Roles,
) -> Result<Scm> {
    let mut index = HashMap::new();
    for (i, e) in exogenous.iter().enumerate() {
        e.dist.validate()?;
        if index
            .insert(e.name.0.clone(), VarRef::Exogenous(i))
            .is_some()
        {
            return Err(Error::DuplicateVariable(e.name.0.clone()));
        }
    }
    for (j, d) in endogenous.iter().enumerate() {
        if index
            .insert(d.name.0.clone(), VarRef::Endogenous(j))
            .is_some()
        {
            return Err(Error::DuplicateVariable(d.name.0.clone()));
        }
    }

    // references, parents and noise ownership in declaration order
    let mut owner: Vec<Option<usize>> = vec![None; exogenous.len()];
    let mut decl_noise = vec![None; endogenous.len()];
    let mut decl_parents = vec![Vec::new(); endogenous.len()];
    for (j, d) in endogenous.iter().enumerate() {
        let mut noises = Vec::new();
        for v in d.expr.variables() {
            match index.get(v.as_str()) {
                None => return Err(Error::UnknownVariable(v.0.clone())),
                Some(VarRef::Endogenous(p)) => decl_parents[j].push(*p),
                Some(VarRef::Exogenous(i)) => noises.push(*i),
            }
        }
        if noises.len() > 1 {
            let names: Vec<_> = noises.iter().map(|&i| exogenous[i].name.0.clone()).collect();
            return Err(Error::NoiseReuse {
                noise: names[1].clone(),
                detail: format!("equation of `{}` uses {}", d.name, names.join(", ")),
            });
        }
        if let Some(&i) = noises.first() {
            let name = &exogenous[i].name.0;
            let count = d.expr.occurrences(name);
            if count != 1 {
                return Err(Error::NoiseReuse {
                    noise: name.clone(),
                    detail: format!("it appears {count} times in the equation of `{}`", d.name),
                });
            }
            if let Some(prev) = owner[i] {
                return Err(Error::NoiseReuse {
                    noise: name.clone(),
                    detail: format!(
                        "it is used by both `{}` and `{}`",
                        endogenous[prev].name, d.name
                    ),
                });
            }
            owner[i] = Some(j);
            decl_noise[j] = Some(i);
        }
    }
    if let Some(i) = owner.iter().position(Option::is_none) {
        return Err(Error::NoiseReuse {
            noise: exogenous[i].name.0.clone(),
            detail: "it is not used by any equation".into(),
        });
    }

    let order = topological_order(&endogenous, &decl_parents)?;
    let mut rank = vec![0; endogenous.len()];
    for (pos, &j) in order.iter().enumerate() {
        rank[j] = pos;
    }
    let mut endo_sorted = Vec::with_capacity(endogenous.len());
    let mut noise_of = Vec::with_capacity(endogenous.len());
    let mut parents = Vec::with_capacity(endogenous.len());
    for &j in &order {
        endo_sorted.push(endogenous[j].clone());
        noise_of.push(decl_noise[j]);
        let mut ps: Vec<usize> = decl_parents[j].iter().map(|&p| rank[p]).collect();
        ps.sort_unstable();
        parents.push(ps);
    }
    let owner_of: Vec<usize> = owner.iter().map(|o| rank[o.unwrap()]).collect();
    for (pos, d) in endo_sorted.iter().enumerate() {
        index.insert(d.name.0.clone(), VarRef::Endogenous(pos));
    }

    let ne = exogenous.len();
    let slot_of: HashMap<String, usize> = index
        .iter()
        .map(|(k, v)| {
            let s = match *v {
                VarRef::Exogenous(i) => i,
                VarRef::Endogenous(j) => ne + j,
            };
            (k.clone(), s)
        })
        .collect();
    let programs = endo_sorted
        .iter()
        .zip(&noise_of)
        .map(|(d, n)| Program::compile(&d.expr, &slot_of, *n))
        .collect();

    let mut scm = Scm {
        exogenous,
        endogenous: endo_sorted,
        roles: roles.clone(),
        noise_of,
        owner_of,
        parents,
        programs,
        index,
    };
    scm.validate_roles(&mut roles)?;
    scm.roles = roles;
    Ok(scm)
}

/// Kahn's algorithm, ties broken by declaration order.
fn topological_order(defs: &[EndogenousDef], parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = defs.len();
    let mut indeg: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (j, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(j);
        }
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(j) = ready.pop_first() {
        order.push(j);
        for &c in &children[j] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    // walk parent links among the unresolved nodes until one repeats
    let stuck: BTreeSet<usize> = (0..n).filter(|&j| indeg[j] > 0).collect();
    let mut seen = Vec::new();
    let mut cur = *stuck.first().unwrap();
    while !seen.contains(&cur) {
        seen.push(cur);
        cur = *parents[cur].iter().find(|p| stuck.contains(p)).unwrap();
    }
    let start = seen.iter().position(|&j| j == cur).unwrap();
    let mut cycle: Vec<String> = seen[start..]
        .iter()
        .rev()
        .map(|&j| defs[j].name.0.clone())
        .collect();
    cycle.push(defs[cur].name.0.clone());
    Err(Error::CycleDetected(cycle))
}

impl Scm {
    fn validate_roles(&self, roles: &mut Roles) -> Result<()> {
        let endo = |v: &VariableId, what: &str| -> Result<usize> {
            match self.index.get(v.as_str()) {
                None => Err(Error::UnknownVariable(v.0.clone())),
                Some(VarRef::Exogenous(_)) => Err(Error::RoleConflict(format!(
                    "{what} `{v}` is exogenous; roles apply to endogenous variables"
                ))),
                Some(VarRef::Endogenous(j)) => Ok(*j),
            }
        };
        let x = endo(&roles.treatment, "treatment")?;
        endo(&roles.outcome, "outcome")?;
        if roles.treatment == roles.outcome {
            return Err(Error::RoleConflict(format!(
                "`{}` cannot be both treatment and outcome",
                roles.treatment
            )));
        }
        for o in &roles.observed {
            endo(o, "observed variable")?;
            if *o == roles.outcome || *o == roles.treatment {
                return Err(Error::RoleConflict(format!(
                    "`{o}` is treatment or outcome and cannot be observed"
                )));
            }
        }
        for l in &roles.latent {
            endo(l, "latent variable")?;
            if roles.observed.contains(l) || *l == roles.outcome || *l == roles.treatment {
                return Err(Error::RoleConflict(format!("`{l}` has more than one role")));
            }
        }
        if self.noise_of[x].is_none() {
            return Err(Error::MissingNoiseTerm(roles.treatment.0.clone()));
        }
        for o in &roles.observed {
            if self.noise_of[endo(o, "")?].is_none() {
                return Err(Error::MissingNoiseTerm(o.0.clone()));
            }
        }
        for d in &self.endogenous {
            if d.name != roles.treatment && d.name != roles.outcome && !roles.observed.contains(&d.name) {
                roles.latent.insert(d.name.clone());
            }
        }
        Ok(())
    }

    pub fn exogenous(&self) -> &[ExogenousDecl] {
        &self.exogenous
    }

    /// Endogenous definitions in topological order.
    pub fn endogenous(&self) -> &[EndogenousDef] {
        &self.endogenous
    }

    pub fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn n_exogenous(&self) -> usize {
        self.exogenous.len()
    }

    pub fn n_endogenous(&self) -> usize {
        self.endogenous.len()
    }

    pub fn lookup(&self, name: &str) -> Option<VarRef> {
        self.index.get(name).copied()
    }

    pub fn endogenous_index(&self, name: &str) -> Result<usize> {
        match self.index.get(name) {
            Some(VarRef::Endogenous(j)) => Ok(*j),
            Some(VarRef::Exogenous(_)) => Err(Error::InvalidArgument(format!(
                "`{name}` is exogenous, expected an endogenous variable"
            ))),
            None => Err(Error::UnknownVariable(name.to_string())),
        }
    }

    pub fn exogenous_index(&self, name: &str) -> Result<usize> {
        match self.index.get(name) {
            Some(VarRef::Exogenous(i)) => Ok(*i),
            Some(VarRef::Endogenous(_)) => Err(Error::InvalidArgument(format!(
                "`{name}` is endogenous, expected an exogenous variable"
            ))),
            None => Err(Error::UnknownVariable(name.to_string())),
        }
    }

    pub fn treatment_index(&self) -> usize {
        self.endogenous_index(self.roles.treatment.as_str()).unwrap()
    }

    pub fn outcome_index(&self) -> usize {
        self.endogenous_index(self.roles.outcome.as_str()).unwrap()
    }

    /// Exogenous index of the noise of endogenous `j`, if it has one.
    pub fn noise_of(&self, j: usize) -> Option<usize> {
        self.noise_of[j]
    }

    /// Endogenous index whose equation uses exogenous `i`.
    pub fn owner_of(&self, i: usize) -> usize {
        self.owner_of[i]
    }

    /// Endogenous parents of endogenous `j`, ascending.
    pub fn parents(&self, j: usize) -> &[usize] {
        &self.parents[j]
    }

    pub(crate) fn program(&self, j: usize) -> &Program {
        &self.programs[j]
    }

    pub(crate) fn n_slots(&self) -> usize {
        self.exogenous.len() + self.endogenous.len()
    }

    pub fn to_spec(&self) -> ScmSpec {
        let mut roles = self.roles.clone();
        roles.latent.clear();
        ScmSpec {
            exogenous: self.exogenous.clone(),
            endogenous: self.endogenous.clone(),
            roles,
        }
    }

    /// Same structure with a different declared observed set.
    pub fn with_observed<I, S>(&self, observed: I) -> Result<Scm>
    where
        I: IntoIterator<Item = S>,
        S: Into<VariableId>,
    {
        let mut roles = Roles::new(self.roles.treatment.as_str(), self.roles.outcome.as_str());
        roles.observed = observed.into_iter().map(Into::into).collect();
        let mut scm = self.clone();
        scm.validate_roles(&mut roles)?;
        scm.roles = roles;
        Ok(scm)
    }

    pub(crate) fn domain_error(&self, j: usize) -> Error {
        Error::DomainError(self.endogenous[j].name.0.clone())
    }

    /// Forward pass over slots. Endogenous slots with `fixed[j] = true` keep
    /// their current value and their equation is skipped.
    #[inline]
    pub(crate) fn forward_slots<T: Real>(
        &self,
        slots: &mut [T],
        fixed: Option<&[bool]>,
        regs: &mut Vec<T>,
    ) -> Result<()> {
        let ne = self.exogenous.len();
        for (j, p) in self.programs.iter().enumerate() {
            if fixed.is_some_and(|f| f[j]) {
                continue;
            }
            let v = p
                .run(|s| slots[s], regs)
                .map_err(|_| self.domain_error(j))?;
            slots[ne + j] = v;
        }
        Ok(())
    }

    /// Endogenous values for a full exogenous assignment.
    pub fn evaluate_endogenous(&self, u: &Assignment) -> Result<Assignment> {
        self.partial_evaluate(&Assignment::new())?.evaluate(u)
    }

    /// Exogenous values given positionally, endogenous values returned positionally.
    pub fn evaluate_noise(&self, u: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(u.len(), self.exogenous.len());
        let mut slots = vec![0.0; self.n_slots()];
        slots[..u.len()].copy_from_slice(u);
        let mut regs = Vec::new();
        self.forward_slots(&mut slots, None, &mut regs)?;
        Ok(slots.split_off(u.len()))
    }

    /// Residual evaluator with the given endogenous variables held fixed.
    pub fn partial_evaluate(&self, fixed: &Assignment) -> Result<PartialEvaluator<'_>> {
        let mut values = vec![None; self.endogenous.len()];
        for (k, v) in fixed {
            let j = self.endogenous_index(k.as_str())?;
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("value of `{k}` is not finite")));
            }
            values[j] = Some(*v);
        }
        Ok(PartialEvaluator { scm: self, values })
    }

    /// Solves the equation of `variable` for its noise so that it equals `target`.
    pub fn invert_in_noise(
        &self,
        variable: &str,
        target: f64,
        parent_values: &Assignment,
    ) -> Result<f64> {
        let j = self.endogenous_index(variable)?;
        let ne = self.exogenous.len();
        let mut slots = vec![f64::NAN; self.n_slots()];
        for &p in &self.parents[j] {
            let name = &self.endogenous[p].name;
            slots[ne + p] = *parent_values
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("missing parent value `{name}`")))?;
        }
        let mut regs = Vec::new();
        self.programs[j]
            .invert(|s| slots[s], target, &mut regs)
            .map(|(u, _)| u)
            .map_err(|f| self.invert_error(j, target, f))
    }

    pub(crate) fn invert_error(&self, j: usize, target: f64, f: InvertFailure) -> Error {
        let variable = self.endogenous[j].name.0.clone();
        match f {
            InvertFailure::NoRoot => Error::NoRoot { variable, target },
            InvertFailure::NotInvertible(reason) => Error::NotInvertible { variable, reason },
            InvertFailure::Domain => Error::DomainError(variable),
        }
    }

    /// Endogenous descendants of `j` (excluding `j`), as a mask.
    pub fn descendants(&self, j: usize) -> Vec<bool> {
        let mut de = vec![false; self.endogenous.len()];
        for k in j + 1..self.endogenous.len() {
            de[k] = self.parents[k].iter().any(|&p| p == j || de[p]);
        }
        de
    }
}

/// `f^{B←b}`: the model with the variables in `B` fixed and their equations severed.
#[derive(Debug, Clone)]
pub struct PartialEvaluator<'a> {
    scm: &'a Scm,
    values: Vec<Option<f64>>,
}

impl<'a> PartialEvaluator<'a> {
    pub fn scm(&self) -> &'a Scm {
        self.scm
    }

    /// Evaluates every endogenous variable that is not fixed. Only the noise
    /// of those variables needs to be supplied.
    pub fn evaluate(&self, u: &Assignment) -> Result<Assignment> {
        let generic: BTreeMap<VariableId, f64> = u.clone();
        self.evaluate_generic(&generic)
    }

    pub fn evaluate_generic<T: Real>(
        &self,
        u: &BTreeMap<VariableId, T>,
    ) -> Result<BTreeMap<VariableId, T>> {
        let scm = self.scm;
        let ne = scm.exogenous.len();
        let mut slots = vec![T::cst(f64::NAN); scm.n_slots()];
        let mut fixed = vec![false; scm.endogenous.len()];
        for (j, v) in self.values.iter().enumerate() {
            if let Some(v) = v {
                slots[ne + j] = T::cst(*v);
                fixed[j] = true;
            }
        }
        for (k, v) in u {
            match scm.lookup(k.as_str()) {
                Some(VarRef::Exogenous(i)) => slots[i] = *v,
                Some(VarRef::Endogenous(_)) => {
                    return Err(Error::InvalidArgument(format!(
                        "`{k}` is endogenous; fix it through the partial evaluation instead"
                    )))
                }
                None => return Err(Error::UnknownVariable(k.0.clone())),
            }
        }
        for (j, d) in scm.endogenous.iter().enumerate() {
            if fixed[j] {
                continue;
            }
            if let Some(i) = scm.noise_of[j] {
                if !u.contains_key(&scm.exogenous[i].name) {
                    return Err(Error::InvalidArgument(format!(
                        "missing value for noise `{}` of `{}`",
                        scm.exogenous[i].name, d.name
                    )));
                }
            }
        }
        let mut regs = Vec::new();
        scm.forward_slots(&mut slots, Some(&fixed), &mut regs)?;
        Ok(scm
            .endogenous
            .iter()
            .enumerate()
            .filter(|(j, _)| !fixed[*j])
            .map(|(j, d)| (d.name.clone(), slots[ne + j]))
            .collect())
    }

    /// Partial evaluation of one variable as a differentiable function of the noise.
    pub fn output(&self, variable: &str) -> Result<PartialOutput<'_, 'a>> {
        let j = self.scm.endogenous_index(variable)?;
        if self.values[j].is_some() {
            return Err(Error::InvalidArgument(format!("`{variable}` is fixed")));
        }
        Ok(PartialOutput { eval: self, j })
    }
}

/// One endogenous output of a [`PartialEvaluator`].
#[derive(Debug, Clone)]
pub struct PartialOutput<'p, 'a> {
    eval: &'p PartialEvaluator<'a>,
    j: usize,
}

impl crate::autodiff::Differentiable for PartialOutput<'_, '_> {
    fn eval_at<T: Real>(&self, env: &BTreeMap<VariableId, T>) -> Result<T> {
        let name = &self.eval.scm.endogenous[self.j].name;
        self.eval
            .evaluate_generic(env)?
            .remove(name)
            .ok_or_else(|| Error::UnknownVariable(name.0.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expression as E;

    fn gauss(name: &str) -> ExogenousDecl {
        ExogenousDecl {
            name: name.into(),
            dist: NoiseDistribution::StandardGaussian,
        }
    }

    fn def(name: &str, expr: E) -> EndogenousDef {
        EndogenousDef {
            name: name.into(),
            expr,
        }
    }

    fn confounding_defs() -> Vec<EndogenousDef> {
        vec![
            def("Y", E::var("X") + E::var("V1") + E::var("U_Y")),
            def("X", E::var("V1") + E::var("U_X")),
            def("V1", E::var("U_V1")),
        ]
    }

    fn confounding() -> Scm {
        build_scm(
            vec![gauss("U_V1"), gauss("U_X"), gauss("U_Y")],
            confounding_defs(),
            Roles::new("X", "Y"),
        )
        .unwrap()
    }

    #[test]
    fn topological_order_is_computed() {
        let scm = confounding();
        let names: Vec<_> = scm.endogenous().iter().map(|d| d.name.0.as_str()).collect();
        assert_eq!(names, ["V1", "X", "Y"]);
        assert_eq!(scm.roles().latent, BTreeSet::from(["V1".into()]));
        assert_eq!(scm.parents(2), &[0, 1]);
    }

    #[test]
    fn evaluates_by_hand_values() {
        let scm = confounding();
        let u = Assignment::from([
            ("U_V1".into(), 1.0),
            ("U_X".into(), 0.5),
            ("U_Y".into(), 0.0),
        ]);
        let v = scm.evaluate_endogenous(&u).unwrap();
        assert_eq!(v[&VariableId::new("X")], 1.5);
        assert_eq!(v[&VariableId::new("Y")], 2.5);
    }

    #[test]
    fn rejects_self_loop_and_cycles() {
        let err = build_scm(
            vec![gauss("U_Y")],
            vec![def("Y", E::var("Y") + E::var("U_Y"))],
            Roles::new("Y", "Y"),
        )
        .unwrap_err();
        assert_eq!(err, Error::CycleDetected(vec!["Y".into(), "Y".into()]));

        let err = build_scm(
            vec![gauss("U_A"), gauss("U_B")],
            vec![
                def("A", E::var("B") + E::var("U_A")),
                def("B", E::var("A") + E::var("U_B")),
            ],
            Roles::new("A", "B"),
        )
        .unwrap_err();
        assert!(matches!(err, Error::CycleDetected(c) if c.len() == 3));
    }

    #[test]
    fn validation_errors() {
        let unknown = build_scm(
            vec![gauss("U_X")],
            vec![def("X", E::var("Z") + E::var("U_X"))],
            Roles::new("X", "X"),
        );
        assert_eq!(unknown.unwrap_err(), Error::UnknownVariable("Z".into()));

        let missing = build_scm(
            vec![gauss("U_Y")],
            vec![def("X", E::constant(1.0)), def("Y", E::var("X") + E::var("U_Y"))],
            Roles::new("X", "Y"),
        );
        assert_eq!(missing.unwrap_err(), Error::MissingNoiseTerm("X".into()));

        let reuse = build_scm(
            vec![gauss("U_X"), gauss("U_Y")],
            vec![
                def("X", E::var("U_X") * E::var("U_X")),
                def("Y", E::var("X") + E::var("U_Y")),
            ],
            Roles::new("X", "Y"),
        );
        assert!(matches!(reuse.unwrap_err(), Error::NoiseReuse { .. }));

        let conflict = build_scm(
            vec![gauss("U_V1"), gauss("U_X"), gauss("U_Y")],
            confounding_defs(),
            Roles::new("X", "Y").observe(["Y"]),
        );
        assert!(matches!(conflict.unwrap_err(), Error::RoleConflict(_)));

        let dup = build_scm(
            vec![gauss("U_X"), gauss("U_X")],
            vec![],
            Roles::new("X", "Y"),
        );
        assert_eq!(dup.unwrap_err(), Error::DuplicateVariable("U_X".into()));
    }

    #[test]
    fn partial_evaluation_severs_equations() {
        let scm = confounding();
        let fixed = Assignment::from([("X".into(), 3.0)]);
        let pe = scm.partial_evaluate(&fixed).unwrap();
        let u = Assignment::from([("U_V1".into(), 1.0), ("U_Y".into(), 0.25)]);
        let v = pe.evaluate(&u).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[&VariableId::new("Y")], 4.25);
    }

    #[test]
    fn partial_output_is_differentiable() {
        let scm = confounding();
        let fixed = Assignment::from([("X".into(), 3.0)]);
        let pe = scm.partial_evaluate(&fixed).unwrap();
        let f = pe.output("Y").unwrap();
        let u = Assignment::from([("U_V1".into(), 1.0), ("U_Y".into(), 0.25)]);
        let g = crate::autodiff::gradient(&f, &u, &["U_V1".into(), "U_Y".into()]).unwrap();
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn invert_in_noise_affine() {
        let scm = confounding();
        let parents = Assignment::from([("V1".into(), 1.0)]);
        assert_eq!(scm.invert_in_noise("X", 1.5, &parents).unwrap(), 0.5);
    }

    #[test]
    fn spec_roundtrip() {
        let scm = confounding();
        let text = scm.to_spec().to_json();
        let back = ScmSpec::from_json(&text).unwrap().build().unwrap();
        assert_eq!(back.to_spec(), scm.to_spec());
    }

    #[test]
    fn descendants_mask() {
        let scm = confounding();
        assert_eq!(scm.descendants(0), vec![false, true, true]);
        assert_eq!(scm.descendants(1), vec![false, false, true]);
    }
}
