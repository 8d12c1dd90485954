//! Attribute spaces and training-support distributions over attribute
//! compositions.
//!
//! A composition is a tuple `(c_1, ..., c_n)` with `c_i < m_i`. Compositions
//! are indexed row-major, the last attribute varying fastest.

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{CoindError, Result};

pub type Composition = Vec<usize>;

/// Compositions above this count are stored sparsely.
pub const DENSE_LIMIT: usize = 1_000_000;

const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct AttributeSpace {
    cardinalities: Vec<usize>,
}

impl TryFrom<Vec<usize>> for AttributeSpace {
    type Error = CoindError;

    fn try_from(cardinalities: Vec<usize>) -> Result<Self> {
        AttributeSpace::new(cardinalities)
    }
}

impl From<AttributeSpace> for Vec<usize> {
    fn from(space: AttributeSpace) -> Self {
        space.cardinalities
    }
}

impl AttributeSpace {
    pub fn new(cardinalities: Vec<usize>) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(CoindError::Constraint(
                "attribute space needs n >= 1 attributes".into(),
            ));
        }
        if let Some((i, &m)) = cardinalities.iter().enumerate().find(|(_, &m)| m < 2) {
            return Err(CoindError::Constraint(format!(
                "attribute {i} has cardinality {m}, need m_i >= 2"
            )));
        }
        cardinalities
            .iter()
            .try_fold(1usize, |acc, &m| acc.checked_mul(m))
            .ok_or_else(|| CoindError::Constraint("composition count overflows".into()))?;
        Ok(Self { cardinalities })
    }

    pub fn n_attributes(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn cardinality(&self, attribute: usize) -> usize {
        self.cardinalities[attribute]
    }

    /// Total number of compositions, `prod m_i`.
    pub fn total(&self) -> usize {
        self.cardinalities.iter().product()
    }

    pub fn contains(&self, c: &[usize]) -> bool {
        c.len() == self.n_attributes() && c.iter().zip(&self.cardinalities).all(|(&v, &m)| v < m)
    }

    pub fn index_of(&self, c: &[usize]) -> usize {
        debug_assert!(self.contains(c));
        c.iter()
            .zip(&self.cardinalities)
            .fold(0, |acc, (&v, &m)| acc * m + v)
    }

    pub fn composition_at(&self, mut index: usize) -> Composition {
        let mut out = vec![0; self.n_attributes()];
        for (slot, &m) in out.iter_mut().zip(&self.cardinalities).rev() {
            *slot = index % m;
            index /= m;
        }
        out
    }

    pub fn compositions(&self) -> impl Iterator<Item = Composition> + '_ {
        (0..self.total()).map(move |i| self.composition_at(i))
    }

    fn check_composition(&self, c: &[usize]) -> Result<()> {
        if self.contains(c) {
            Ok(())
        } else {
            Err(CoindError::Shape(format!(
                "composition {c:?} outside space {:?}",
                self.cardinalities
            )))
        }
    }
}

/// Which analytic family a support belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params")]
pub enum SupportKind {
    Uniform,
    /// Band cells `c2 <= c1 <= c2 + 1` carry `a`, all other cells `b`.
    NonUniform { a: f64, b: f64 },
    DiagonalPartial,
    OrthogonalPartial,
    /// Product of per-attribute discretized Gaussians centred at `means[i]`.
    GaussianLike { means: Vec<f64>, spread: f64 },
    Custom,
}

impl SupportKind {
    pub fn name(&self) -> &'static str {
        match self {
            SupportKind::Uniform => "Uniform",
            SupportKind::NonUniform { .. } => "NonUniform",
            SupportKind::DiagonalPartial => "DiagonalPartial",
            SupportKind::OrthogonalPartial => "OrthogonalPartial",
            SupportKind::GaussianLike { .. } => "GaussianLike",
            SupportKind::Custom => "Custom",
        }
    }

    fn params_json(&self) -> Value {
        match self {
            SupportKind::NonUniform { a, b } => json!({ "a": a, "b": b }),
            SupportKind::GaussianLike { means, spread } => {
                json!({ "means": means, "spread": spread })
            }
            _ => Value::Object(Map::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum PmfStorage {
    Dense(Vec<f64>),
    Sparse(BTreeMap<usize, f64>),
}

impl PmfStorage {
    fn get(&self, index: usize) -> f64 {
        match self {
            PmfStorage::Dense(v) => v[index],
            PmfStorage::Sparse(m) => m.get(&index).copied().unwrap_or(0.0),
        }
    }
}

/// A normalized pmf over the compositions of an [`AttributeSpace`].
#[derive(Debug, Clone)]
pub struct SupportPattern {
    space: AttributeSpace,
    kind: SupportKind,
    pmf: PmfStorage,
    nonzero: Vec<(usize, f64)>,
    sampler: WeightedIndex<f64>,
}

impl PartialEq for SupportPattern {
    fn eq(&self, other: &Self) -> bool {
        self.space == other.space && self.kind == other.kind && self.nonzero == other.nonzero
    }
}

impl SupportPattern {
    fn from_entries(
        space: AttributeSpace,
        kind: SupportKind,
        entries: impl IntoIterator<Item = (usize, f64)>,
    ) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (idx, p) in entries {
            if !p.is_finite() || p < 0.0 {
                return Err(CoindError::Constraint(format!(
                    "probability {p} at {:?} must be finite and >= 0",
                    space.composition_at(idx)
                )));
            }
            if p > 0.0 {
                *map.entry(idx).or_insert(0.0) += p;
            }
        }
        let sum: f64 = map.values().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(CoindError::Unnormalized { sum });
        }
        let nonzero: Vec<(usize, f64)> = map.iter().map(|(&i, &p)| (i, p)).collect();
        let sampler = WeightedIndex::new(nonzero.iter().map(|&(_, p)| p))
            .map_err(|e| CoindError::Constraint(format!("empty support: {e}")))?;
        let pmf = if space.total() <= DENSE_LIMIT {
            let mut dense = vec![0.0; space.total()];
            for &(i, p) in &nonzero {
                dense[i] = p;
            }
            PmfStorage::Dense(dense)
        } else {
            PmfStorage::Sparse(map)
        };
        Ok(Self {
            space,
            kind,
            pmf,
            nonzero,
            sampler,
        })
    }

    /// Arbitrary support from `(composition, probability)` entries.
    pub fn custom(space: AttributeSpace, entries: Vec<(Composition, f64)>) -> Result<Self> {
        let mut indexed = Vec::with_capacity(entries.len());
        for (c, p) in entries {
            space.check_composition(&c)?;
            indexed.push((space.index_of(&c), p));
        }
        Self::from_entries(space, SupportKind::Custom, indexed)
    }

    /// Point mass on one composition.
    pub fn point_mass(space: AttributeSpace, c: Composition) -> Result<Self> {
        Self::custom(space, vec![(c, 1.0)])
    }

    pub fn space(&self) -> &AttributeSpace {
        &self.space
    }

    pub fn kind(&self) -> &SupportKind {
        &self.kind
    }

    pub fn prob(&self, c: &[usize]) -> f64 {
        if !self.space.contains(c) {
            return 0.0;
        }
        self.pmf.get(self.space.index_of(c))
    }

    /// Compositions with positive mass, in index order.
    pub fn support(&self) -> impl Iterator<Item = (Composition, f64)> + '_ {
        self.nonzero
            .iter()
            .map(move |&(i, p)| (self.space.composition_at(i), p))
    }

    pub fn support_len(&self) -> usize {
        self.nonzero.len()
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.pmf, PmfStorage::Dense(_))
    }

    /// Per-attribute marginal pmf `p(C_i = v)`.
    pub fn attribute_marginal(&self, attribute: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.space.cardinality(attribute)];
        for (c, p) in self.support() {
            out[c[attribute]] += p;
        }
        out
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Composition {
        sample_composition(self, rng)
    }

    pub fn to_json(&self) -> Value {
        let pmf: Vec<Value> = self.support().map(|(c, p)| json!([c, p])).collect();
        json!({
            "cardinalities": self.space.cardinalities(),
            "kind": self.kind.name(),
            "params": self.kind.params_json(),
            "pmf": pmf,
        })
    }

    pub fn from_json(value: &Value) -> Result<Self> {
        let wire: SupportWire = serde_json::from_value(value.clone())?;
        let space = AttributeSpace::new(wire.cardinalities)?;
        let kind = match wire.kind.as_str() {
            "Uniform" => SupportKind::Uniform,
            "DiagonalPartial" => SupportKind::DiagonalPartial,
            "OrthogonalPartial" => SupportKind::OrthogonalPartial,
            "Custom" => SupportKind::Custom,
            "NonUniform" | "GaussianLike" => serde_json::from_value(json!({
                "kind": wire.kind,
                "params": wire.params,
            }))?,
            other => {
                return Err(CoindError::Config(format!("unknown support kind {other:?}")))
            }
        };
        let mut entries = Vec::with_capacity(wire.pmf.len());
        for (c, p) in wire.pmf {
            space.check_composition(&c)?;
            entries.push((space.index_of(&c), p));
        }
        Self::from_entries(space, kind, entries)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SupportWire {
    cardinalities: Vec<usize>,
    kind: String,
    #[serde(default)]
    params: Value,
    pmf: Vec<(Composition, f64)>,
}

impl Serialize for SupportPattern {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SupportPattern {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        SupportPattern::from_json(&value).map_err(serde::de::Error::custom)
    }
}

fn require_square_pair(space: &AttributeSpace, kind: &str) -> Result<usize> {
    match space.cardinalities() {
        [a, b] if a == b => Ok(*a),
        other => Err(CoindError::Shape(format!(
            "{kind} support needs exactly 2 attributes of equal cardinality, got {other:?}"
        ))),
    }
}

/// Band rule shared by the diagonal and non-uniform supports.
fn in_band(c1: usize, c2: usize) -> bool {
    c2 <= c1 && c1 <= c2 + 1
}

/// Builds one of the analytic training supports.
pub fn build_support(space: AttributeSpace, kind: SupportKind) -> Result<SupportPattern> {
    let total = space.total();
    match &kind {
        SupportKind::Uniform => {
            let p = 1.0 / total as f64;
            SupportPattern::from_entries(space, kind, (0..total).map(|i| (i, p)))
        }
        SupportKind::OrthogonalPartial => {
            let reduced: usize = space.cardinalities().iter().map(|m| m - 1).product();
            let count = total - reduced;
            let p = 1.0 / count as f64;
            let entries: Vec<(usize, f64)> = (0..total)
                .filter(|&i| space.composition_at(i).contains(&0))
                .map(|i| (i, p))
                .collect();
            SupportPattern::from_entries(space, kind, entries)
        }
        SupportKind::DiagonalPartial => {
            let n = require_square_pair(&space, "DiagonalPartial")?;
            let p = 1.0 / (2 * n - 1) as f64;
            let entries: Vec<(usize, f64)> = (0..total)
                .filter_map(|i| {
                    let c = space.composition_at(i);
                    in_band(c[0], c[1]).then_some((i, p))
                })
                .collect();
            SupportPattern::from_entries(space, kind, entries)
        }
        SupportKind::NonUniform { a, b } => {
            let n = require_square_pair(&space, "NonUniform")?;
            let (a, b) = (*a, *b);
            check_non_uniform(n, a, b)?;
            let entries: Vec<(usize, f64)> = (0..total)
                .map(|i| {
                    let c = space.composition_at(i);
                    (i, if in_band(c[0], c[1]) { a } else { b })
                })
                .collect();
            SupportPattern::from_entries(space, kind, entries)
        }
        SupportKind::GaussianLike { means, spread } => {
            if means.len() != space.n_attributes() {
                return Err(CoindError::Shape(format!(
                    "GaussianLike needs one mean per attribute ({}), got {}",
                    space.n_attributes(),
                    means.len()
                )));
            }
            if !(*spread > 0.0 && spread.is_finite()) {
                return Err(CoindError::Constraint(format!(
                    "GaussianLike spread must satisfy s > 0, got {spread}"
                )));
            }
            let per_attr: Vec<Vec<f64>> = means
                .iter()
                .zip(space.cardinalities())
                .map(|(&mu, &m)| {
                    let w: Vec<f64> = (0..m)
                        .map(|v| (-(v as f64 - mu).powi(2) / (2.0 * spread * spread)).exp())
                        .collect();
                    let z: f64 = w.iter().sum();
                    w.into_iter().map(|x| x / z).collect()
                })
                .collect();
            let entries: Vec<(usize, f64)> = (0..total)
                .map(|i| {
                    let c = space.composition_at(i);
                    let p = c.iter().enumerate().map(|(k, &v)| per_attr[k][v]).product();
                    (i, p)
                })
                .collect();
            // Products of normalized factors can drift from 1 by a few ulps.
            let sum: f64 = entries.iter().map(|e| e.1).sum();
            SupportPattern::from_entries(space, kind, entries.into_iter().map(|(i, p)| (i, p / sum)))
        }
        SupportKind::Custom => Err(CoindError::InvalidParam(
            "Custom supports are built with SupportPattern::custom".into(),
        )),
    }
}

/// Accepted non-uniform parameters: `0 <= b <= 1/n^2 <= a <= 1/(2n-1)` with
/// `(2n-1) a + (n-1)^2 b = 1`.
pub fn check_non_uniform(n: usize, a: f64, b: f64) -> Result<()> {
    let nf = n as f64;
    let band = (2 * n - 1) as f64;
    let off = ((n - 1) * (n - 1)) as f64;
    let uniform = 1.0 / (nf * nf);
    if !(a.is_finite() && b.is_finite()) {
        return Err(CoindError::Constraint("a and b must be finite".into()));
    }
    if b < 0.0 {
        return Err(CoindError::Constraint(format!("0 <= b violated (b = {b})")));
    }
    if b > uniform + NORMALIZATION_TOL {
        return Err(CoindError::Constraint(format!(
            "b <= 1/n^2 violated (b = {b}, 1/n^2 = {uniform})"
        )));
    }
    if a < uniform - NORMALIZATION_TOL {
        return Err(CoindError::Constraint(format!(
            "1/n^2 <= a violated (a = {a}, 1/n^2 = {uniform})"
        )));
    }
    if a > 1.0 / band + NORMALIZATION_TOL {
        return Err(CoindError::Constraint(format!(
            "a <= 1/(2n-1) violated (a = {a}, 1/(2n-1) = {})",
            1.0 / band
        )));
    }
    let identity = band * a + off * b;
    if (identity - 1.0).abs() > NORMALIZATION_TOL {
        return Err(CoindError::Constraint(format!(
            "(2n-1)a + (n-1)^2 b = 1 violated (got {identity})"
        )));
    }
    Ok(())
}

/// `b` completing the counting identity for a given band mass `a`.
pub fn non_uniform_b(n: usize, a: f64) -> f64 {
    let band = (2 * n - 1) as f64;
    let off = ((n - 1) * (n - 1)) as f64;
    (1.0 - band * a) / off
}

/// True iff every value of every attribute occurs in some composition with
/// positive mass.
pub fn check_support_cover(support: &SupportPattern) -> bool {
    let space = support.space();
    let mut seen: Vec<Vec<bool>> = space.cardinalities().iter().map(|&m| vec![false; m]).collect();
    for (c, _) in support.support() {
        for (i, &v) in c.iter().enumerate() {
            seen[i][v] = true;
        }
    }
    seen.iter().all(|row| row.iter().all(|&s| s))
}

pub fn sample_composition<R: Rng + ?Sized>(support: &SupportPattern, rng: &mut R) -> Composition {
    let k = support.sampler.sample(rng);
    support.space.composition_at(support.nonzero[k].0)
}

/// Compositions with zero training mass.
pub fn unseen_compositions(support: &SupportPattern) -> BTreeSet<Composition> {
    let seen: BTreeSet<usize> = support.nonzero.iter().map(|&(i, _)| i).collect();
    (0..support.space.total())
        .filter(|i| !seen.contains(i))
        .map(|i| support.space.composition_at(i))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn space(c: &[usize]) -> AttributeSpace {
        AttributeSpace::new(c.to_vec()).unwrap()
    }

    #[test]
    fn space_rejects_degenerate_shapes() {
        assert!(AttributeSpace::new(vec![]).is_err());
        assert!(AttributeSpace::new(vec![3, 1]).is_err());
        assert_eq!(space(&[2, 3, 4]).total(), 24);
    }

    #[test]
    fn index_round_trip() {
        let s = space(&[3, 4, 2]);
        for i in 0..s.total() {
            assert_eq!(s.index_of(&s.composition_at(i)), i);
        }
        assert_eq!(s.composition_at(1), vec![0, 0, 1]);
    }

    #[test]
    fn uniform_cells() {
        let sup = build_support(space(&[10, 10]), SupportKind::Uniform).unwrap();
        for c in sup.space().compositions() {
            assert_eq!(sup.prob(&c), 0.01);
        }
        assert!(unseen_compositions(&sup).is_empty());
    }

    #[test]
    fn orthogonal_two_by_two() {
        let sup = build_support(space(&[2, 2]), SupportKind::OrthogonalPartial).unwrap();
        for c in [[0, 0], [0, 1], [1, 0]] {
            assert_eq!(sup.prob(&c), 1.0 / 3.0);
        }
        assert_eq!(sup.prob(&[1, 1]), 0.0);
        assert_eq!(
            unseen_compositions(&sup).into_iter().collect::<Vec<_>>(),
            vec![vec![1, 1]]
        );
        assert!(check_support_cover(&sup));
    }

    #[test]
    fn orthogonal_three_attributes_count() {
        let sup = build_support(space(&[4, 4, 4]), SupportKind::OrthogonalPartial).unwrap();
        assert_eq!(sup.support_len(), 64 - 27);
        assert!(check_support_cover(&sup));
    }

    #[test]
    fn non_uniform_band_and_sum() {
        let a = 0.9 / 19.0;
        let b = non_uniform_b(10, a);
        assert!((b - 0.1 / 81.0).abs() < 1e-15);
        let sup = build_support(space(&[10, 10]), SupportKind::NonUniform { a, b }).unwrap();
        let mut band = 0;
        let mut off = 0;
        let mut total = 0.0;
        for c in sup.space().compositions() {
            let p = sup.prob(&c);
            total += p;
            if in_band(c[0], c[1]) {
                assert_eq!(p, a);
                band += 1;
            } else {
                assert_eq!(p, b);
                off += 1;
            }
        }
        assert_eq!((band, off), (19, 81));
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_uniform_rejects_bad_params() {
        let err = build_support(space(&[10, 10]), SupportKind::NonUniform { a: 0.1, b: 0.0 })
            .unwrap_err()
            .to_string();
        assert!(err.contains("a <= 1/(2n-1)"), "{err}");
        let err = build_support(space(&[10, 10]), SupportKind::NonUniform { a: 0.05, b: 0.001 })
            .unwrap_err()
            .to_string();
        assert!(err.contains("(2n-1)a + (n-1)^2 b = 1"), "{err}");
        let err = build_support(space(&[10, 10]), SupportKind::NonUniform { a: 0.005, b: non_uniform_b(10, 0.005) })
            .unwrap_err()
            .to_string();
        assert!(err.contains("b <= 1/n^2"), "{err}");
        assert!(matches!(
            build_support(space(&[3, 4]), SupportKind::NonUniform { a: 0.2, b: 0.0 }),
            Err(CoindError::Shape(_))
        ));
    }

    #[test]
    fn diagonal_unseen_matches_band_rule() {
        let sup = build_support(space(&[3, 3]), SupportKind::DiagonalPartial).unwrap();
        let unseen = unseen_compositions(&sup);
        let expected: BTreeSet<Composition> = space(&[3, 3])
            .compositions()
            .filter(|c| !(c[1] <= c[0] && c[0] <= c[1] + 1))
            .collect();
        assert_eq!(unseen, expected);
        assert!(unseen.contains(&vec![0, 2]) && unseen.contains(&vec![2, 0]));
        assert!(unseen.contains(&vec![0, 1]));
        assert_eq!(sup.support_len(), 5);
        let big = build_support(space(&[10, 10]), SupportKind::DiagonalPartial).unwrap();
        assert!(check_support_cover(&big));
        assert_eq!(big.support_len(), 19);
        assert!(matches!(
            build_support(space(&[3, 3, 3]), SupportKind::DiagonalPartial),
            Err(CoindError::Shape(_))
        ));
    }

    #[test]
    fn cover_fails_for_corner_point() {
        let sup = SupportPattern::point_mass(space(&[2, 2]), vec![0, 0]).unwrap();
        assert!(!check_support_cover(&sup));
    }

    #[test]
    fn custom_rejects_unnormalized() {
        let err = SupportPattern::custom(space(&[2, 2]), vec![(vec![0, 0], 0.5)]).unwrap_err();
        assert!(matches!(err, CoindError::Unnormalized { .. }));
        let err = SupportPattern::custom(space(&[2, 2]), vec![(vec![0, 0], 1.5), (vec![1, 1], -0.5)])
            .unwrap_err();
        assert!(matches!(err, CoindError::Constraint(_)));
    }

    #[test]
    fn gaussian_like_is_product_and_normalized() {
        let sup = build_support(
            space(&[10, 10]),
            SupportKind::GaussianLike { means: vec![4.5, 4.5], spread: 2.0 },
        )
        .unwrap();
        let total: f64 = sup.support().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let m0 = sup.attribute_marginal(0);
        let m1 = sup.attribute_marginal(1);
        for (c, p) in sup.support() {
            assert!((p - m0[c[0]] * m1[c[1]]).abs() < 1e-15);
        }
        assert!(check_support_cover(&sup));
    }

    #[test]
    fn sampling_frequencies_and_zero_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sup = build_support(space(&[2, 2]), SupportKind::Uniform).unwrap();
        let draws = 1_000_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[sup.space().index_of(&sample_composition(&sup, &mut rng))] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.004);
        }
        let orth = build_support(space(&[2, 2]), SupportKind::OrthogonalPartial).unwrap();
        for _ in 0..10_000 {
            assert_ne!(orth.sample(&mut rng), vec![1, 1]);
        }
        let point = SupportPattern::point_mass(space(&[3, 2]), vec![2, 1]).unwrap();
        for _ in 0..100 {
            assert_eq!(point.sample(&mut rng), vec![2, 1]);
        }
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let a = 0.9 / 19.0;
        let sup = build_support(
            space(&[10, 10]),
            SupportKind::NonUniform { a, b: non_uniform_b(10, a) },
        )
        .unwrap();
        let text = serde_json::to_string(&sup).unwrap();
        let back: SupportPattern = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sup);
        for c in sup.space().compositions() {
            assert_eq!(back.prob(&c).to_bits(), sup.prob(&c).to_bits());
        }
    }
}
