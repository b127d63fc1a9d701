//! Medical-code vocabulary, the shared embedding table, and the two visit
//! reductions: a rectified-normalized sum over a bag of codes, and the
//! disease-minus-treatment interaction that turns the two bag vectors of a
//! visit into the recurrent model's input.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, NodeId, ParamId, ParamSet, Tape, Tensor};
use crate::rng;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("vocabulary index {index} out of range (table has {rows} rows)")]
    IndexOutOfRange { index: usize, rows: usize },

    #[error("cosine similarity undefined: embedding row {index} has zero norm")]
    ZeroNorm { index: usize },

    #[error("vocabulary codes must be unique and sorted within each namespace (offender: {code:?})")]
    UnsortedVocabulary { code: String },

    #[error(transparent)]
    Diff(#[from] DiffError),
}

/// Which code namespace an identifier belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Disease,
    Treatment,
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Namespace::Disease => "disease",
            Namespace::Treatment => "treatment",
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyData {
    disease_codes: Vec<String>,
    treatment_codes: Vec<String>,
}

/// The code universe of one trained model.
///
/// Codes are unique and lexicographically sorted within each namespace, and
/// the two namespaces occupy disjoint global index ranges: diseases take
/// `0..disease_count()` and treatments the following `treatment_count()`
/// indices. Global indices identify embedding-table rows, so the ordering is
/// part of the serialized model contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyData", into = "VocabularyData")]
pub struct Vocabulary {
    disease_codes: Vec<String>,
    treatment_codes: Vec<String>,
    disease_index: HashMap<String, usize>,
    treatment_index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build a vocabulary from raw code lists; sorts and deduplicates.
    pub fn new(
        diseases: impl IntoIterator<Item = impl Into<String>>,
        treatments: impl IntoIterator<Item = impl Into<String>>,
    ) -> Self {
        let normalize = |codes: Vec<String>| -> Vec<String> {
            let mut codes = codes;
            codes.sort_unstable();
            codes.dedup();
            codes
        };
        let disease_codes = normalize(diseases.into_iter().map(Into::into).collect());
        let treatment_codes = normalize(treatments.into_iter().map(Into::into).collect());
        Self::from_sorted(disease_codes, treatment_codes)
    }

    fn from_sorted(disease_codes: Vec<String>, treatment_codes: Vec<String>) -> Self {
        let index = |codes: &[String]| {
            codes
                .iter()
                .enumerate()
                .map(|(i, c)| (c.clone(), i))
                .collect::<HashMap<_, _>>()
        };
        Self {
            disease_index: index(&disease_codes),
            treatment_index: index(&treatment_codes),
            disease_codes,
            treatment_codes,
        }
    }

    pub fn disease_count(&self) -> usize {
        self.disease_codes.len()
    }

    pub fn treatment_count(&self) -> usize {
        self.treatment_codes.len()
    }

    /// Total number of embedding rows the vocabulary requires.
    pub fn total(&self) -> usize {
        self.disease_codes.len() + self.treatment_codes.len()
    }

    pub fn codes(&self, ns: Namespace) -> &[String] {
        match ns {
            Namespace::Disease => &self.disease_codes,
            Namespace::Treatment => &self.treatment_codes,
        }
    }

    /// Global embedding-row index of a code, if present.
    pub fn index_of(&self, ns: Namespace, code: &str) -> Option<usize> {
        match ns {
            Namespace::Disease => self.disease_index.get(code).copied(),
            Namespace::Treatment => self
                .treatment_index
                .get(code)
                .map(|i| i + self.disease_codes.len()),
        }
    }

    /// Reverse lookup of a global index.
    pub fn entry(&self, index: usize) -> Option<(Namespace, &str)> {
        if index < self.disease_codes.len() {
            Some((Namespace::Disease, &self.disease_codes[index]))
        } else {
            self.treatment_codes
                .get(index - self.disease_codes.len())
                .map(|c| (Namespace::Treatment, c.as_str()))
        }
    }

    /// All (namespace, code, global index) entries in index order.
    pub fn iter(&self) -> impl Iterator<Item = (Namespace, &str, usize)> {
        let d = self
            .disease_codes
            .iter()
            .enumerate()
            .map(|(i, c)| (Namespace::Disease, c.as_str(), i));
        let off = self.disease_codes.len();
        let t = self
            .treatment_codes
            .iter()
            .enumerate()
            .map(move |(i, c)| (Namespace::Treatment, c.as_str(), off + i));
        d.chain(t)
    }
}

impl TryFrom<VocabularyData> for Vocabulary {
    type Error = EmbedError;

    /// Deserialization does not re-sort: global indices must survive a save /
    /// load round trip exactly, so a file whose lists are out of order or
    /// contain duplicates is rejected instead of silently reindexed.
    fn try_from(data: VocabularyData) -> Result<Self, Self::Error> {
        for codes in [&data.disease_codes, &data.treatment_codes] {
            for pair in codes.windows(2) {
                if pair[0] >= pair[1] {
                    return Err(EmbedError::UnsortedVocabulary { code: pair[1].clone() });
                }
            }
        }
        Ok(Self::from_sorted(data.disease_codes, data.treatment_codes))
    }
}

impl From<Vocabulary> for VocabularyData {
    fn from(v: Vocabulary) -> Self {
        VocabularyData {
            disease_codes: v.disease_codes,
            treatment_codes: v.treatment_codes,
        }
    }
}

/// One learned vector per vocabulary entry; diseases and treatments share
/// the space so their difference is meaningful.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<ParamId>,
}

impl EmbeddingTable {
    /// Create one parameter row per vocabulary entry, initialized uniformly
    /// in [-0.1, 0.1] from a stream derived from `seed`.
    pub fn init(params: &mut ParamSet, vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        use rand::Rng;
        assert!(dim > 0, "embedding dimension must be positive");
        let mut r = rng::derive_rng(seed, rng::purpose::PARAM_INIT, 0);
        let rows = (0..vocab.total())
            .map(|i| {
                let data: Vec<f64> = (0..dim).map(|_| r.random_range(-0.1..=0.1)).collect();
                params.add(
                    &format!("embedding.row{i}"),
                    Tensor::vector(data).expect("finite init"),
                )
            })
            .collect();
        Self { dim, rows }
    }

    /// Rebind to already-registered parameter rows (model loading).
    pub fn from_rows(dim: usize, rows: Vec<ParamId>) -> Self {
        Self { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, index: usize) -> Result<ParamId, EmbedError> {
        self.rows
            .get(index)
            .copied()
            .ok_or(EmbedError::IndexOutOfRange { index, rows: self.rows.len() })
    }

    /// Current numeric values of a row (read-only convenience for export).
    pub fn row_values<'p>(&self, params: &'p ParamSet, index: usize) -> Result<&'p [f64], EmbedError> {
        Ok(params.get(self.row(index)?).value.data())
    }
}

/// A bag (multiset) of global vocabulary indices from one namespace, e.g.
/// the diseases recorded at a single visit. Duplicates are kept: recorded
/// data may legitimately list a code twice and the set function sums
/// whatever it is given. Indices are stored sorted so downstream float
/// summation is independent of input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodeBag {
    indices: Vec<usize>,
}

impl CodeBag {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        Self { indices }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Reduce a bag of codes to one vector: rectify the summed embeddings, then
/// soft-normalize, giving `r / (epsilon + ‖r‖₂)` with `r = max(0, Σᵢ eᵢ)`.
///
/// The empty bag yields the zero vector (and zero gradient), so visits with
/// no recorded treatments are representable. Rectification precedes
/// normalization, hence every output component is nonnegative and the output
/// norm is strictly below 1 for any `epsilon > 0`.
pub fn embed_bag(
    tape: &mut Tape,
    params: &ParamSet,
    table: &EmbeddingTable,
    bag: &CodeBag,
    epsilon: f64,
) -> Result<NodeId, EmbedError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    if bag.is_empty() {
        return Ok(tape.constant(Tensor::zeros(vec![table.dim()]))?);
    }
    let mut terms = Vec::with_capacity(bag.len());
    for &index in bag.indices() {
        terms.push(tape.param(params, table.row(index)?)?);
    }
    let summed = tape.sum(&terms)?;
    let rectified = tape.apply(crate::diffcore::Activation::Rectifier, summed)?;
    let norm = tape.norm2(rectified)?;
    let denom = tape.offset(norm, epsilon)?;
    let inv = tape.recip(denom)?;
    Ok(tape.scale_by(rectified, inv)?)
}

/// Componentwise transform applied to the disease-minus-treatment gap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// (1 + Δ)²: zero when treatments overshoot the disease load by one
    /// unit, growing quadratically as diseases dominate.
    #[default]
    SquareShift,
    Identity,
    Tanh,
}

/// Combine a visit's disease vector and treatment vector into the recurrent
/// input: Δ = d − p transformed componentwise by the chosen interaction.
pub fn visit_vector(
    tape: &mut Tape,
    d_vec: NodeId,
    p_vec: NodeId,
    rho: Interaction,
) -> Result<NodeId, DiffError> {
    let delta = tape.sub(d_vec, p_vec)?;
    match rho {
        Interaction::SquareShift => tape.apply(crate::diffcore::Activation::SquareShift, delta),
        Interaction::Identity => Ok(delta),
        Interaction::Tanh => tape.apply(crate::diffcore::Activation::Tanh, delta),
    }
}

/// Cosine similarity between two embedding rows, by global index.
pub fn code_similarity(
    params: &ParamSet,
    table: &EmbeddingTable,
    a: usize,
    b: usize,
) -> Result<f64, EmbedError> {
    let av = table.row_values(params, a)?;
    let bv = table.row_values(params, b)?;
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(av), norm(bv));
    if na == 0.0 {
        return Err(EmbedError::ZeroNorm { index: a });
    }
    if nb == 0.0 {
        return Err(EmbedError::ZeroNorm { index: b });
    }
    let dot: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheckConfig};
    use proptest::prelude::*;

    /// Table with explicitly chosen row values.
    fn fixture(params: &mut ParamSet, rows: &[Vec<f64>]) -> EmbeddingTable {
        let dim = rows[0].len();
        let ids = rows
            .iter()
            .enumerate()
            .map(|(i, r)| params.add(&format!("embedding.row{i}"), Tensor::vector(r.clone()).unwrap()))
            .collect();
        EmbeddingTable::from_rows(dim, ids)
    }

    fn embed_values(rows: &[Vec<f64>], bag: Vec<usize>, epsilon: f64) -> Vec<f64> {
        let mut params = ParamSet::new();
        let table = fixture(&mut params, rows);
        let mut tape = Tape::new();
        let out = embed_bag(&mut tape, &params, &table, &CodeBag::new(bag), epsilon).unwrap();
        tape.value(out).data().to_vec()
    }

    #[test]
    fn vocabulary_sorts_dedups_and_splits_ranges() {
        let v = Vocabulary::new(["J18", "E11", "J18"], ["P01", "A99"]);
        assert_eq!(v.codes(Namespace::Disease), &["E11", "J18"]);
        assert_eq!(v.codes(Namespace::Treatment), &["A99", "P01"]);
        assert_eq!(v.index_of(Namespace::Disease, "E11"), Some(0));
        assert_eq!(v.index_of(Namespace::Treatment, "A99"), Some(2));
        assert_eq!(v.index_of(Namespace::Treatment, "E11"), None);
        assert_eq!(v.entry(3), Some((Namespace::Treatment, "P01")));
        assert_eq!(v.entry(4), None);
        assert_eq!(v.total(), 4);
    }

    #[test]
    fn vocabulary_round_trips_but_rejects_disorder() {
        let v = Vocabulary::new(["B", "A"], ["X"]);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        let bad = r#"{"disease_codes":["B","A"],"treatment_codes":[]}"#;
        assert!(serde_json::from_str::<Vocabulary>(bad).is_err());
        let dup = r#"{"disease_codes":["A","A"],"treatment_codes":[]}"#;
        assert!(serde_json::from_str::<Vocabulary>(dup).is_err());
    }

    #[test]
    fn empty_bag_is_zero_vector() {
        let out = embed_values(&[vec![1.0, 2.0]], vec![], 0.001);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_code_soft_normalizes() {
        // Row (3,4): norm 5, denominator 6 → (0.5, 2/3).
        let out = embed_values(&[vec![3.0, 4.0]], vec![0], 1.0);
        assert!((out[0] - 0.5).abs() < 1e-15);
        assert!((out[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rectification_precedes_normalization() {
        // (1,-2) + (-3,1) = (-2,-1) → rectified (0,0) → exactly zero.
        let out = embed_values(&[vec![1.0, -2.0], vec![-3.0, 1.0]], vec![0, 1], 0.001);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn duplicate_codes_sum_as_a_bag() {
        // {a, a} must equal Eq. 1 evaluated on the doubled row, bit-exactly
        // (x + x is exact in IEEE arithmetic).
        let row = vec![0.07, -0.02, 0.11];
        let doubled: Vec<f64> = row.iter().map(|x| 2.0 * x).collect();
        let from_bag = embed_values(&[row], vec![0, 0], 0.001);
        let from_double = embed_values(&[doubled], vec![0], 0.001);
        assert_eq!(from_bag, from_double);
    }

    #[test]
    fn out_of_range_index_is_a_vocabulary_error() {
        let mut params = ParamSet::new();
        let table = fixture(&mut params, &[vec![1.0]]);
        let mut tape = Tape::new();
        let err = embed_bag(&mut tape, &params, &table, &CodeBag::new(vec![5]), 0.001).unwrap_err();
        assert!(matches!(err, EmbedError::IndexOutOfRange { index: 5, rows: 1 }));
    }

    #[test]
    fn norm_tends_to_one_for_huge_rows() {
        let out = embed_values(&[vec![1e6, 0.0]], vec![0], 0.001);
        let norm = (out[0] * out[0] + out[1] * out[1]).sqrt();
        assert!(norm < 1.0);
        assert!(norm > 0.9999);
    }

    #[test]
    fn visit_vector_known_points() {
        let mut tape = Tape::new();
        let d = tape.constant(Tensor::vector(vec![0.6, 0.0]).unwrap()).unwrap();
        let p = tape.constant(Tensor::vector(vec![0.1, 0.3]).unwrap()).unwrap();
        let v = visit_vector(&mut tape, d, p, Interaction::SquareShift).unwrap();
        let out = tape.value(v).data();
        assert!((out[0] - 2.25).abs() < 1e-15);
        assert!((out[1] - 0.49).abs() < 1e-15);

        // d == p → Δ = 0 → all ones; a component with Δ = -1 → 0.
        let mut tape = Tape::new();
        let d = tape.constant(Tensor::vector(vec![0.25, 0.0]).unwrap()).unwrap();
        let p = tape.constant(Tensor::vector(vec![0.25, 1.0]).unwrap()).unwrap();
        let v = visit_vector(&mut tape, d, p, Interaction::SquareShift).unwrap();
        assert_eq!(tape.value(v).data(), &[1.0, 0.0]);
    }

    #[test]
    fn identity_and_tanh_interactions() {
        let mut tape = Tape::new();
        let d = tape.constant(Tensor::vector(vec![0.5]).unwrap()).unwrap();
        let p = tape.constant(Tensor::vector(vec![0.2]).unwrap()).unwrap();
        let id = visit_vector(&mut tape, d, p, Interaction::Identity).unwrap();
        assert!((tape.value(id).data()[0] - 0.3).abs() < 1e-15);
        let th = visit_vector(&mut tape, d, p, Interaction::Tanh).unwrap();
        assert!((tape.value(th).data()[0] - 0.3f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn cosine_similarity_cases() {
        let mut params = ParamSet::new();
        let table = fixture(
            &mut params,
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, 2.0], vec![1.0, 1.0], vec![0.0, 0.0]],
        );
        assert!((code_similarity(&params, &table, 0, 0).unwrap() - 1.0).abs() < 1e-15);
        assert!(code_similarity(&params, &table, 0, 1).unwrap().abs() < 1e-15);
        assert!((code_similarity(&params, &table, 2, 3).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            code_similarity(&params, &table, 0, 4),
            Err(EmbedError::ZeroNorm { index: 4 })
        ));
    }

    #[test]
    fn table_init_is_seeded_and_bounded() {
        let vocab = Vocabulary::new(["a", "b", "c"], ["x", "y"]);
        let build = |seed| {
            let mut params = ParamSet::new();
            let table = EmbeddingTable::init(&mut params, &vocab, 4, seed);
            (0..table.row_count())
                .flat_map(|i| table.row_values(&params, i).unwrap().to_vec())
                .collect::<Vec<f64>>()
        };
        let a = build(7);
        assert_eq!(a, build(7));
        assert_ne!(a, build(8));
        assert!(a.iter().all(|x| (-0.1..=0.1).contains(x)));
        assert_eq!(a.len(), 5 * 4);
    }

    #[test]
    fn composite_gradient_matches_finite_differences() {
        let mut params = ParamSet::new();
        let rows: Vec<Vec<f64>> = vec![
            vec![0.09, -0.04, 0.02],
            vec![-0.06, 0.08, 0.01],
            vec![0.03, 0.05, -0.07],
            vec![-0.02, -0.01, 0.06],
        ];
        let table = fixture(&mut params, &rows);
        let diseases = CodeBag::new(vec![0, 1]);
        let treatments = CodeBag::new(vec![2, 3]);
        let cfg = GradCheckConfig { step: 1e-5, tolerance: 1e-5 };
        let report = grad_check(&mut params, &cfg, |ps| {
            let mut tape = Tape::new();
            let d = embed_bag(&mut tape, ps, &table, &diseases, 0.001).map_err(diff)?;
            let p = embed_bag(&mut tape, ps, &table, &treatments, 0.001).map_err(diff)?;
            let v = visit_vector(&mut tape, d, p, Interaction::SquareShift)?;
            let root = tape.dot(v, v)?;
            Ok((tape, root))
        })
        .unwrap();
        assert!(report.passed(), "worst: {:?}", report.worst);
    }

    fn diff(e: EmbedError) -> DiffError {
        match e {
            EmbedError::Diff(d) => d,
            other => DiffError::Protocol(other.to_string()),
        }
    }

    proptest! {
        #[test]
        fn embedding_is_permutation_invariant(
            bag in proptest::collection::vec(0usize..6, 1..10),
            rot in 0usize..10,
        ) {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|i| vec![0.1 * i as f64 - 0.25, 0.03 * i as f64, -0.07 * i as f64 + 0.1])
                .collect();
            let mut shuffled = bag.clone();
            shuffled.rotate_left(rot % bag.len().max(1));
            shuffled.reverse();
            let a = embed_values(&rows, bag, 0.001);
            let b = embed_values(&rows, shuffled, 0.001);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a), bits(&b));
        }

        #[test]
        fn outputs_are_nonnegative_with_norm_below_one(
            bag in proptest::collection::vec(0usize..6, 0..10),
            scale in 0.001f64..100.0,
        ) {
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|i| vec![scale * (i as f64 - 2.5), scale * (0.3 - 0.1 * i as f64)])
                .collect();
            let out = embed_values(&rows, bag, 0.001);
            prop_assert!(out.iter().all(|&x| x >= 0.0));
            let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm < 1.0);
        }

        #[test]
        fn default_interaction_stays_in_zero_four(
            d_bag in proptest::collection::vec(0usize..6, 0..8),
            p_bag in proptest::collection::vec(0usize..6, 0..8),
        ) {
            // ‖d‖,‖p‖ < 1 ⇒ every Δ component in (−1,1) ⇒ (1+Δ)² ∈ [0,4).
            let rows: Vec<Vec<f64>> = (0..6)
                .map(|i| vec![1.5 * (i as f64 - 2.0), 0.8 - 0.4 * i as f64])
                .collect();
            let mut params = ParamSet::new();
            let table = fixture(&mut params, &rows);
            let mut tape = Tape::new();
            let d = embed_bag(&mut tape, &params, &table, &CodeBag::new(d_bag), 0.001).unwrap();
            let p = embed_bag(&mut tape, &params, &table, &CodeBag::new(p_bag), 0.001).unwrap();
            let v = visit_vector(&mut tape, d, p, Interaction::SquareShift).unwrap();
            for &c in tape.value(v).data() {
                prop_assert!((0.0..4.0).contains(&c));
            }
        }
    }
}
