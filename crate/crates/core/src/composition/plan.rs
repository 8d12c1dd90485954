//! Compilation of composition expressions into weighted score-term plans.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use super::expr::CompositionExpr;
use crate::attribute_space::AttributeSpace;
use crate::diffusion::{ConditionVector, Conditioning};
use crate::error::{CoindError, Result};

/// Weighted list of conditional score terms whose coefficients sum to one,
/// the null-condition term included.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidancePlan {
    n_attributes: usize,
    terms: Vec<(ConditionVector, BigRational)>,
}

#[derive(Serialize, Deserialize)]
struct TermJson {
    cond: ConditionVector,
    coeff: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exact: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PlanJson {
    terms: Vec<TermJson>,
}

fn rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x).ok_or_else(|| CoindError::InvalidParam(format!("{x} is not finite")))
}

fn int(k: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(k))
}

impl GuidancePlan {
    /// Builds a plan from explicit terms; duplicates are merged and the null
    /// coefficient is whatever makes the total exactly one.
    pub fn from_terms(n_attributes: usize, terms: Vec<(ConditionVector, BigRational)>) -> Result<Self> {
        let mut merged: BTreeMap<Vec<Option<usize>>, BigRational> = BTreeMap::new();
        for (cond, coeff) in terms {
            if cond.len() != n_attributes {
                return Err(CoindError::Shape(format!(
                    "condition {cond} has {} slots, expected {n_attributes}",
                    cond.len()
                )));
            }
            if cond.is_null() {
                continue;
            }
            *merged.entry(cond.0).or_insert_with(BigRational::zero) += coeff;
        }
        Ok(Self::finish(n_attributes, merged))
    }

    /// Like [`GuidancePlan::from_terms`] but insists the given null
    /// coefficient already balances the sum.
    pub fn from_terms_checked(n_attributes: usize, terms: Vec<(ConditionVector, BigRational)>) -> Result<Self> {
        let sum: BigRational = terms.iter().map(|t| t.1.clone()).sum();
        if sum != BigRational::one() {
            return Err(CoindError::Unnormalized {
                sum: sum.to_f64().unwrap_or(f64::NAN),
            });
        }
        Self::from_terms(n_attributes, terms)
    }

    fn finish(n_attributes: usize, merged: BTreeMap<Vec<Option<usize>>, BigRational>) -> Self {
        let conditional: BigRational = merged.values().cloned().sum();
        let mut merged: Vec<_> = merged.into_iter().collect();
        // set slots before null slots, so (4,∅) precedes (∅,2)
        merged.sort_by_key(|(cond, _)| cond.iter().map(|v| v.unwrap_or(usize::MAX)).collect::<Vec<_>>());
        let mut terms: Vec<(ConditionVector, BigRational)> = merged
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(cond, c)| (ConditionVector(cond), c))
            .collect();
        terms.push((ConditionVector::null(n_attributes), BigRational::one() - conditional));
        Self { n_attributes, terms }
    }

    /// `gamma * s(x | cond) + (1 - gamma) * s(x)`.
    pub fn cfg(cond: &ConditionVector, gamma: f64) -> Result<Self> {
        Self::from_terms(cond.len(), vec![(cond.clone(), rational(gamma)?)])
    }

    /// The single conditional term `s(x | cond)`.
    pub fn single(cond: &ConditionVector) -> Self {
        Self::cfg(cond, 1.0).expect("finite")
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    /// Terms with the null term last.
    pub fn terms(&self) -> &[(ConditionVector, BigRational)] {
        &self.terms
    }

    pub fn coefficient_sum(&self) -> BigRational {
        self.terms.iter().map(|t| t.1.clone()).sum()
    }

    pub fn coefficient(&self, cond: &ConditionVector) -> BigRational {
        self.terms
            .iter()
            .find(|t| &t.0 == cond)
            .map_or_else(BigRational::zero, |t| t.1.clone())
    }

    pub fn null_coefficient(&self) -> BigRational {
        self.terms.last().expect("null term").1.clone()
    }

    /// Float terms, dropping a zero null term.
    pub fn float_terms(&self) -> Vec<(ConditionVector, f64)> {
        self.terms
            .iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(cond, c)| (cond.clone(), c.to_f64().expect("finite rational")))
            .collect()
    }

    pub fn conditioning_terms(&self) -> Vec<(Conditioning, f64)> {
        self.float_terms()
            .into_iter()
            .map(|(c, w)| (c.to_conditioning(), w))
            .collect()
    }

    pub fn validate(&self, space: &AttributeSpace) -> Result<()> {
        for (cond, _) in &self.terms {
            cond.validate(space)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let terms = self
            .terms
            .iter()
            .map(|(cond, c)| TermJson {
                cond: cond.clone(),
                coeff: c.to_f64().unwrap_or(f64::NAN),
                exact: (!c.is_integer()).then(|| c.to_string()),
            })
            .collect();
        Ok(serde_json::to_string_pretty(&PlanJson { terms })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: PlanJson = serde_json::from_str(text)?;
        let n = parsed
            .terms
            .first()
            .map(|t| t.cond.len())
            .ok_or_else(|| CoindError::Config("plan has no terms".into()))?;
        let terms = parsed
            .terms
            .into_iter()
            .map(|t| {
                let c = match t.exact {
                    Some(s) => s
                        .parse::<BigRational>()
                        .map_err(|e| CoindError::Config(format!("bad coefficient '{s}': {e}")))?,
                    None => rational(t.coeff)?,
                };
                Ok((t.cond, c))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_terms_checked(n, terms)
    }
}

type Terms = BTreeMap<Vec<Option<usize>>, BigRational>;

fn add_into(acc: &mut Terms, other: &Terms, scale: &BigRational) {
    for (k, v) in other {
        *acc.entry(k.clone()).or_insert_with(BigRational::zero) += v * scale;
    }
}

struct Compiler<'a> {
    space: &'a AttributeSpace,
}

impl Compiler<'_> {
    fn unsupported(node: &CompositionExpr, reason: &str) -> CoindError {
        CoindError::UnsupportedFragment {
            node: node.to_string(),
            reason: reason.to_string(),
        }
    }

    fn literal_term(&self, node: &CompositionExpr, attribute: usize, value: usize) -> Result<Vec<Option<usize>>> {
        if attribute >= self.space.n_attributes() || value >= self.space.cardinality(attribute) {
            return Err(CoindError::Constraint(format!(
                "literal {node} outside attribute space {:?}",
                self.space.cardinalities()
            )));
        }
        Ok(ConditionVector::only(self.space.n_attributes(), attribute, value).0)
    }

    /// Literals of a negated node: one for `!l`, several for `!(l1 | l2 ...)`
    /// over a single attribute.
    fn negated_literals(&self, node: &CompositionExpr, inner: &CompositionExpr) -> Result<Vec<Vec<Option<usize>>>> {
        match inner {
            CompositionExpr::Literal { attribute, value } => Ok(vec![self.literal_term(inner, *attribute, *value)?]),
            CompositionExpr::Or { exprs } => {
                if exprs.is_empty() {
                    return Err(Self::unsupported(node, "empty disjunction"));
                }
                let mut attr = None;
                let mut out = Vec::with_capacity(exprs.len());
                for e in exprs {
                    let CompositionExpr::Literal { attribute, value } = e else {
                        return Err(Self::unsupported(node, "negation only covers a disjunction of literals"));
                    };
                    if attr.is_some_and(|a| a != *attribute) {
                        return Err(Self::unsupported(
                            node,
                            "negated disjunction must range over a single attribute",
                        ));
                    }
                    attr = Some(*attribute);
                    out.push(self.literal_term(e, *attribute, *value)?);
                }
                Ok(out)
            }
            _ => Err(Self::unsupported(
                node,
                "negation only applies to a literal or a same-attribute disjunction",
            )),
        }
    }

    fn flatten<'e>(exprs: &'e [CompositionExpr], out: &mut Vec<&'e CompositionExpr>) {
        for e in exprs {
            match e {
                CompositionExpr::And { exprs } => Self::flatten(exprs, out),
                other => out.push(other),
            }
        }
    }

    /// Conditional terms of `node`; the null coefficient is implied.
    fn terms(&self, node: &CompositionExpr) -> Result<Terms> {
        match node {
            CompositionExpr::Literal { attribute, value } => {
                let mut t = Terms::new();
                t.insert(self.literal_term(node, *attribute, *value)?, BigRational::one());
                Ok(t)
            }
            CompositionExpr::Weighted { gamma, expr } => {
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    return Err(Self::unsupported(node, "weight must be positive and finite"));
                }
                let g = rational(*gamma)?;
                let mut t = Terms::new();
                add_into(&mut t, &self.terms(expr)?, &g);
                Ok(t)
            }
            CompositionExpr::Not { .. } | CompositionExpr::And { .. } => {
                let parts = match node {
                    CompositionExpr::And { exprs } => {
                        if exprs.is_empty() {
                            return Err(Self::unsupported(node, "empty conjunction"));
                        }
                        let mut flat = Vec::new();
                        Self::flatten(exprs, &mut flat);
                        flat
                    }
                    _ => vec![node],
                };
                self.conjunction(&parts)
            }
            CompositionExpr::Or { .. } => Err(Self::unsupported(
                node,
                "disjunction is only supported under negation",
            )),
        }
    }

    /// A conjunction distributes over each negated disjunction: with
    /// `!(l_1 | ... | l_k)` among the conjuncts, the plan is the conjunction of
    /// the `k` branches `rest & !l_j`. Positive conjuncts therefore scale by
    /// the product of all branch counts, and each negated literal by the
    /// product of the other negations' branch counts.
    fn conjunction(&self, parts: &[&CompositionExpr]) -> Result<Terms> {
        let mut positive = Terms::new();
        let mut negations: Vec<Vec<Vec<Option<usize>>>> = Vec::new();
        for part in parts {
            match part {
                CompositionExpr::Not { expr } => negations.push(self.negated_literals(part, expr)?),
                other => add_into(&mut positive, &self.terms(other)?, &BigRational::one()),
            }
        }
        let branches: Vec<BigRational> = negations.iter().map(|n| int(n.len() as i64)).collect();
        let all: BigRational = branches.iter().cloned().fold(BigRational::one(), |a, b| a * b);
        let mut out = Terms::new();
        add_into(&mut out, &positive, &all);
        for (k, lits) in negations.iter().enumerate() {
            let others = &all / &branches[k];
            for lit in lits {
                *out.entry(lit.clone()).or_insert_with(BigRational::zero) -= &others;
            }
        }
        Ok(out)
    }
}

/// Compiles an expression in the supported fragment into a guidance plan.
pub fn compile(expr: &CompositionExpr, space: &AttributeSpace) -> Result<GuidancePlan> {
    let terms = Compiler { space }.terms(expr)?;
    Ok(GuidancePlan::finish(space.n_attributes(), terms))
}

/// Human-readable coefficient, e.g. `2` or `-3/4`.
pub fn format_coeff(c: &BigRational) -> String {
    if c.is_integer() {
        c.to_integer().to_string()
    } else if c.is_negative() {
        format!("-{}", -c)
    } else {
        c.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use CompositionExpr as E;

    fn space() -> AttributeSpace {
        AttributeSpace::new(vec![10, 4]).unwrap()
    }

    fn coeffs(plan: &GuidancePlan) -> Vec<(String, i64)> {
        plan.terms()
            .iter()
            .map(|(c, k)| (c.to_string(), k.to_integer().to_string().parse().unwrap()))
            .collect()
    }

    #[test]
    fn negated_disjunction_example() {
        let e = E::parse("c1=4 & !(c2=2 | c2=3)").unwrap();
        let plan = compile(&e, &space()).unwrap();
        assert_eq!(
            coeffs(&plan),
            vec![
                ("(4,∅)".into(), 2),
                ("(∅,2)".into(), -1),
                ("(∅,3)".into(), -1),
                ("(∅,∅)".into(), 1)
            ]
        );
        assert_eq!(plan.coefficient_sum(), BigRational::one());
    }

    #[test]
    fn conjunction_and_weight_examples() {
        let plan = compile(&E::parse("c1=1 & c2=3").unwrap(), &space()).unwrap();
        assert_eq!(
            coeffs(&plan),
            vec![("(1,∅)".into(), 1), ("(∅,3)".into(), 1), ("(∅,∅)".into(), -1)]
        );
        let plan = compile(&E::parse("c1=1 & 6*(c2=3)").unwrap(), &space()).unwrap();
        assert_eq!(
            coeffs(&plan),
            vec![("(1,∅)".into(), 1), ("(∅,3)".into(), 6), ("(∅,∅)".into(), -6)]
        );
        let plan = compile(&E::lit(0, 2), &space()).unwrap();
        assert_eq!(coeffs(&plan), vec![("(2,∅)".into(), 1), ("(∅,∅)".into(), 0)]);
        let plan = compile(&E::parse("c1=1 & !c2=0").unwrap(), &space()).unwrap();
        assert_eq!(
            coeffs(&plan),
            vec![("(1,∅)".into(), 1), ("(∅,0)".into(), -1), ("(∅,∅)".into(), 1)]
        );
    }

    #[test]
    fn unsupported_shapes_are_named() {
        let s = space();
        for bad in ["!(c1=1 & c2=2)", "c1=1 | c2=2", "!(c1=1 | c2=2)", "!!c1=1", "!(c1=1 | !c1=2)"] {
            match compile(&E::parse(bad).unwrap(), &s) {
                Err(CoindError::UnsupportedFragment { node, .. }) => assert!(!node.is_empty()),
                other => panic!("{bad}: {other:?}"),
            }
        }
        assert!(matches!(
            compile(&E::lit(2, 0), &s),
            Err(CoindError::Constraint(_))
        ));
        assert!(compile(&E::weighted(0.0, E::lit(0, 0)), &s).is_err());
        assert!(compile(&E::weighted(-1.0, E::lit(0, 0)), &s).is_err());
    }

    #[test]
    fn nested_conjunctions_flatten() {
        let s = AttributeSpace::new(vec![3, 3, 3]).unwrap();
        let a = compile(&E::parse("(c1=1 & c2=2) & !(c3=0 | c3=1)").unwrap(), &s).unwrap();
        let b = compile(&E::parse("c1=1 & (c2=2 & !(c3=0 | c3=1))").unwrap(), &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coefficient(&ConditionVector::only(3, 0, 1)), int(2));
    }

    #[test]
    fn fractional_weights_stay_exact() {
        let plan = compile(&E::parse("c1=1 & 0.1*c2=2").unwrap(), &space()).unwrap();
        assert_eq!(plan.coefficient_sum(), BigRational::one());
        let back = GuidancePlan::from_json(&plan.to_json().unwrap()).unwrap();
        assert_eq!(back, plan);
    }

    #[test]
    fn cfg_plan_matches_mix() {
        let c = ConditionVector::full(&[1, 2]);
        let plan = GuidancePlan::cfg(&c, 3.0).unwrap();
        assert_eq!(plan.coefficient(&c), int(3));
        assert_eq!(plan.null_coefficient(), int(-2));
    }

    #[test]
    fn json_shape() {
        let plan = compile(&E::parse("c1=4 & !(c2=2 | c2=3)").unwrap(), &space()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        assert_eq!(v["terms"][0]["cond"], serde_json::json!([4, null]));
        assert_eq!(v["terms"][0]["coeff"], serde_json::json!(2.0));
        let bad = r#"{"terms":[{"cond":[1,null],"coeff":1.0},{"cond":[null,null],"coeff":0.5}]}"#;
        assert!(matches!(GuidancePlan::from_json(bad), Err(CoindError::Unnormalized { .. })));
    }

    #[test]
    fn coefficient_formatting() {
        assert_eq!(format_coeff(&int(-2)), "-2");
        assert_eq!(format_coeff(&BigRational::new(BigInt::from(-3), BigInt::from(4))), "-3/4");
    }
}
