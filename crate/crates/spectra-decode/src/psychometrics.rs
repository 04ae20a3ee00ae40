//! Big Five inventory administration and scoring: Likert keying, facet
//! partitioning, level descriptors, response parsing, and rank statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PsychError {
    #[error("response {response} does not match item {item}")]
    ItemMismatch { response: String, item: String },
    #[error("no items for trait {0}")]
    NoItems(String),
    #[error("no Likert value found in {0:?}")]
    Unparseable(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("invalid inventory: {0}")]
    InvalidInventory(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The five factors; each has six facets numbered 1..=6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitId {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
}

impl TraitId {
    pub fn all() -> [TraitId; 5] {
        [
            TraitId::Openness,
            TraitId::Conscientiousness,
            TraitId::Extraversion,
            TraitId::Agreeableness,
            TraitId::Neuroticism,
        ]
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TraitId::Openness => "openness",
            TraitId::Conscientiousness => "conscientiousness",
            TraitId::Extraversion => "extraversion",
            TraitId::Agreeableness => "agreeableness",
            TraitId::Neuroticism => "neuroticism",
        }
    }

    pub fn parse(text: &str) -> Option<TraitId> {
        match text.to_ascii_lowercase().as_str() {
            "openness" => Some(TraitId::Openness),
            "conscientiousness" => Some(TraitId::Conscientiousness),
            "extraversion" => Some(TraitId::Extraversion),
            "agreeableness" => Some(TraitId::Agreeableness),
            "neuroticism" => Some(TraitId::Neuroticism),
            _ => None,
        }
    }
}

/// Whether agreement with the item raises (ascending) or lowers (descending)
/// the trait score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Keying {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InventoryItem {
    pub id: String,
    pub text: String,
    pub trait_id: TraitId,
    pub facet: u8,
    pub keying: Keying,
}

impl InventoryItem {
    pub fn validate(&self) -> Result<(), PsychError> {
        if !(1..=6).contains(&self.facet) {
            return Err(PsychError::InvalidInventory(format!(
                "item {:?} facet {} out of range 1..=6",
                self.id, self.facet
            )));
        }
        if self.text.is_empty() {
            return Err(PsychError::InvalidInventory(format!(
                "item {:?} has empty text",
                self.id
            )));
        }
        Ok(())
    }
}

/// A 1..=5 agreement response to a single item.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LikertResponse {
    pub item_id: String,
    pub value: u8,
}

impl LikertResponse {
    pub fn new(item_id: impl Into<String>, value: u8) -> Result<Self, PsychError> {
        if !(1..=5).contains(&value) {
            return Err(PsychError::DegenerateInput(format!(
                "Likert value {value} out of range 1..=5"
            )));
        }
        Ok(Self {
            item_id: item_id.into(),
            value,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraitScoreReport {
    pub trait_id: TraitId,
    pub mean_score: f64,
    pub n_items: usize,
}

/// An inventory loaded from CSV with header `id,text,trait,facet,keying`.
#[derive(Debug, Clone)]
pub struct Inventory {
    items: Vec<InventoryItem>,
}

impl Inventory {
    pub fn new(items: Vec<InventoryItem>) -> Result<Self, PsychError> {
        for item in &items {
            item.validate()?;
        }
        Ok(Self { items })
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, PsychError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PsychError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_csv(&text)
    }

    pub fn from_csv(text: &str) -> Result<Self, PsychError> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut items = Vec::new();
        for record in reader.records() {
            let record =
                record.map_err(|e| PsychError::InvalidInventory(format!("bad CSV row: {e}")))?;
            if record.len() != 5 {
                return Err(PsychError::InvalidInventory(format!(
                    "expected 5 columns, got {}",
                    record.len()
                )));
            }
            let trait_id = TraitId::parse(&record[2]).ok_or_else(|| {
                PsychError::InvalidInventory(format!("unknown trait {:?}", &record[2]))
            })?;
            let facet: u8 = record[3].parse().map_err(|_| {
                PsychError::InvalidInventory(format!("bad facet {:?}", &record[3]))
            })?;
            let keying = match record[4].to_ascii_lowercase().as_str() {
                "ascending" => Keying::Ascending,
                "descending" => Keying::Descending,
                other => {
                    return Err(PsychError::InvalidInventory(format!(
                        "unknown keying {other:?}"
                    )))
                }
            };
            items.push(InventoryItem {
                id: record[0].to_string(),
                text: record[1].to_string(),
                trait_id,
                facet,
                keying,
            });
        }
        Self::new(items)
    }

    pub fn items(&self) -> &[InventoryItem] {
        &self.items
    }

    pub fn items_for(&self, trait_id: TraitId) -> Vec<&InventoryItem> {
        self.items.iter().filter(|i| i.trait_id == trait_id).collect()
    }

    pub fn by_id(&self, id: &str) -> Option<&InventoryItem> {
        self.items.iter().find(|i| i.id == id)
    }
}

/// Applies Likert keying: ascending items score the raw value, descending
/// items score `6 - value`.
pub fn keyed_score(response: &LikertResponse, item: &InventoryItem) -> Result<u8, PsychError> {
    if response.item_id != item.id {
        return Err(PsychError::ItemMismatch {
            response: response.item_id.clone(),
            item: item.id.clone(),
        });
    }
    Ok(match item.keying {
        Keying::Ascending => response.value,
        Keying::Descending => 6 - response.value,
    })
}

/// Mean keyed score for one trait. Every response must match an item of the
/// given trait in `items`.
pub fn trait_score(
    responses: &[LikertResponse],
    items: &[&InventoryItem],
    trait_id: TraitId,
) -> Result<TraitScoreReport, PsychError> {
    if responses.is_empty() {
        return Err(PsychError::NoItems(trait_id.as_str().to_string()));
    }
    let mut total = 0u32;
    for response in responses {
        let item = items
            .iter()
            .find(|i| i.id == response.item_id && i.trait_id == trait_id)
            .ok_or_else(|| PsychError::ItemMismatch {
                response: response.item_id.clone(),
                item: format!("<{} items>", trait_id.as_str()),
            })?;
        total += keyed_score(response, item)? as u32;
    }
    Ok(TraitScoreReport {
        trait_id,
        mean_score: total as f64 / responses.len() as f64,
        n_items: responses.len(),
    })
}

/// A disjoint split of facets into a few-shot half and an assessment half.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetPartition {
    pub fewshot: Vec<u8>,
    pub test: Vec<u8>,
}

/// All C(n, k) ways to pick `k` few-shot facets out of `1..=n_facets`, in
/// lexicographic order; the assessment half is the complement.
pub fn facet_partitions(n_facets: u8, k: u8) -> Vec<FacetPartition> {
    assert!(k <= n_facets, "k must not exceed n_facets");
    let mut out = Vec::new();
    let mut combo: Vec<u8> = (1..=k).collect();
    loop {
        let test: Vec<u8> = (1..=n_facets).filter(|f| !combo.contains(f)).collect();
        out.push(FacetPartition {
            fewshot: combo.clone(),
            test,
        });
        // Advance to the next lexicographic combination.
        let mut i = k as isize - 1;
        while i >= 0 && combo[i as usize] == n_facets - k + 1 + i as u8 {
            i -= 1;
        }
        if i < 0 {
            break;
        }
        combo[i as usize] += 1;
        for j in (i as usize + 1)..k as usize {
            combo[j] = combo[j - 1] + 1;
        }
    }
    out
}

/// Thirds of the score range [1, 5].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    Middle,
    High,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::Middle => "middle",
            Level::High => "high",
        }
    }
}

/// Low covers [1, 7/3), middle [7/3, 11/3), high [11/3, 5].
pub fn level_descriptor(target_mean: f64) -> Level {
    if target_mean < 7.0 / 3.0 {
        Level::Low
    } else if target_mean < 11.0 / 3.0 {
        Level::Middle
    } else {
        Level::High
    }
}

const LIKERT_PHRASES: [(&str, u8); 6] = [
    ("strongly disagree", 1),
    ("strongly agree", 5),
    ("disagree", 2),
    ("neutral", 3),
    ("neither", 3),
    ("agree", 4),
];

/// Extracts a Likert value from free text: the last occurrence of an
/// agreement phrase (case-insensitive, "strongly X" before bare "X") or of a
/// standalone digit 1-5 wins.
pub fn parse_likert(text: &str) -> Result<u8, PsychError> {
    let lower = text.to_lowercase();
    let bytes = lower.as_bytes();
    let mut best: Option<(usize, u8)> = None;

    let mut pos = 0;
    while pos < lower.len() {
        let rest = &lower[pos..];
        // Longest phrase first so "strongly agree" absorbs its bare suffix
        // and "disagree" is never read as "agree".
        let hit = LIKERT_PHRASES
            .iter()
            .filter(|(phrase, _)| rest.starts_with(phrase))
            .max_by_key(|(phrase, _)| phrase.len());
        if let Some((phrase, value)) = hit {
            best = Some((pos, *value));
            pos += phrase.len();
        } else {
            let digit = bytes[pos];
            if (b'1'..=b'5').contains(&digit) {
                let before_ok = pos == 0 || !bytes[pos - 1].is_ascii_digit();
                let after_ok = pos + 1 >= bytes.len() || !bytes[pos + 1].is_ascii_digit();
                if before_ok && after_ok {
                    best = Some((pos, digit - b'0'));
                }
            }
            pos += 1;
            while pos < lower.len() && !lower.is_char_boundary(pos) {
                pos += 1;
            }
        }
    }

    best.map(|(_, value)| value)
        .ok_or_else(|| PsychError::Unparseable(text.to_string()))
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<(), PsychError> {
    if xs.len() != ys.len() {
        return Err(PsychError::DegenerateInput(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(PsychError::DegenerateInput(format!(
            "need at least 2 observations, got {}",
            xs.len()
        )));
    }
    Ok(())
}

/// Standard product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, PsychError> {
    check_pair(xs, ys)?;
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(PsychError::DegenerateInput(
            "zero variance in correlation input".into(),
        ));
    }
    Ok((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Fractional ranks, averaging over ties.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions are 1-based; tied entries share the mean position.
        let rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of fractional ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, PsychError> {
    check_pair(xs, ys)?;
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(id: &str, trait_id: TraitId, facet: u8, keying: Keying) -> InventoryItem {
        InventoryItem {
            id: id.into(),
            text: format!("statement {id}"),
            trait_id,
            facet,
            keying,
        }
    }

    #[test]
    fn keyed_score_ascending_and_descending() {
        let asc = item("a1", TraitId::Conscientiousness, 2, Keying::Ascending);
        let desc = item("d1", TraitId::Conscientiousness, 6, Keying::Descending);
        let r5 = LikertResponse::new("a1", 5).unwrap();
        assert_eq!(keyed_score(&r5, &asc).unwrap(), 5);
        let r5 = LikertResponse::new("d1", 5).unwrap();
        assert_eq!(keyed_score(&r5, &desc).unwrap(), 1);
        let r3 = LikertResponse::new("d1", 3).unwrap();
        assert_eq!(keyed_score(&r3, &desc).unwrap(), 3);
    }

    #[test]
    fn keyed_score_rejects_mismatched_item() {
        let asc = item("a1", TraitId::Openness, 1, Keying::Ascending);
        let r = LikertResponse::new("zz", 4).unwrap();
        assert!(matches!(
            keyed_score(&r, &asc),
            Err(PsychError::ItemMismatch { .. })
        ));
    }

    #[test]
    fn double_reversal_is_identity() {
        for value in 1..=5u8 {
            assert_eq!(6 - (6 - value), value);
        }
    }

    #[test]
    fn trait_score_means() {
        let items = [
            item("x1", TraitId::Extraversion, 1, Keying::Ascending),
            item("x2", TraitId::Extraversion, 2, Keying::Descending),
        ];
        let refs: Vec<&InventoryItem> = items.iter().collect();
        let responses = vec![
            LikertResponse::new("x1", 5).unwrap(),
            LikertResponse::new("x2", 5).unwrap(),
        ];
        let report = trait_score(&responses, &refs, TraitId::Extraversion).unwrap();
        assert!((report.mean_score - 3.0).abs() < 1e-12);
        assert_eq!(report.n_items, 2);
    }

    #[test]
    fn trait_score_constant_and_max() {
        let items: Vec<InventoryItem> = (0..12)
            .map(|i| {
                item(
                    &format!("o{i}"),
                    TraitId::Openness,
                    (i % 6 + 1) as u8,
                    Keying::Ascending,
                )
            })
            .collect();
        let refs: Vec<&InventoryItem> = items.iter().collect();
        let all3: Vec<LikertResponse> = (0..12)
            .map(|i| LikertResponse::new(format!("o{i}"), 3).unwrap())
            .collect();
        assert!(
            (trait_score(&all3, &refs, TraitId::Openness).unwrap().mean_score - 3.0).abs() < 1e-12
        );
        let all5: Vec<LikertResponse> = (0..12)
            .map(|i| LikertResponse::new(format!("o{i}"), 5).unwrap())
            .collect();
        let report = trait_score(&all5, &refs, TraitId::Openness).unwrap();
        assert!((report.mean_score - 5.0).abs() < 1e-12);
        assert_eq!(report.n_items, 12);
    }

    #[test]
    fn trait_score_requires_responses() {
        assert!(matches!(
            trait_score(&[], &[], TraitId::Openness),
            Err(PsychError::NoItems(_))
        ));
    }

    #[test]
    fn trait_score_invariant_to_order() {
        let items = [
            item("x1", TraitId::Extraversion, 1, Keying::Ascending),
            item("x2", TraitId::Extraversion, 2, Keying::Ascending),
            item("x3", TraitId::Extraversion, 3, Keying::Descending),
        ];
        let refs: Vec<&InventoryItem> = items.iter().collect();
        let mut responses = vec![
            LikertResponse::new("x1", 2).unwrap(),
            LikertResponse::new("x2", 4).unwrap(),
            LikertResponse::new("x3", 1).unwrap(),
        ];
        let forward = trait_score(&responses, &refs, TraitId::Extraversion).unwrap();
        responses.reverse();
        let reversed = trait_score(&responses, &refs, TraitId::Extraversion).unwrap();
        assert_eq!(forward.mean_score, reversed.mean_score);
    }

    #[test]
    fn twenty_partitions_in_lexicographic_order() {
        let partitions = facet_partitions(6, 3);
        assert_eq!(partitions.len(), 20);
        assert_eq!(partitions[0].fewshot, vec![1, 2, 3]);
        assert_eq!(partitions[0].test, vec![4, 5, 6]);
        assert_eq!(partitions[19].fewshot, vec![4, 5, 6]);
    }

    #[test]
    fn partitions_are_a_disjoint_covering_family() {
        let partitions = facet_partitions(6, 3);
        let mut seen = std::collections::BTreeSet::new();
        for p in &partitions {
            assert_eq!(p.fewshot.len(), 3);
            let mut all: Vec<u8> = p.fewshot.iter().chain(&p.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, vec![1, 2, 3, 4, 5, 6]);
            assert!(seen.insert(p.fewshot.clone()), "duplicate {:?}", p.fewshot);
        }
        // Enumerating all C(6,3) subsets: each facet sits in the few-shot
        // half of exactly 10 partitions.
        for facet in 1..=6u8 {
            let count = partitions.iter().filter(|p| p.fewshot.contains(&facet)).count();
            assert_eq!(count, 10, "facet {facet}");
        }
    }

    #[test]
    fn level_descriptor_thirds() {
        assert_eq!(level_descriptor(1.0), Level::Low);
        assert_eq!(level_descriptor(3.0), Level::Middle);
        assert_eq!(level_descriptor(5.0), Level::High);
        assert_eq!(level_descriptor(7.0 / 3.0), Level::Middle);
        assert_eq!(level_descriptor(11.0 / 3.0), Level::High);
    }

    #[test]
    fn parse_likert_phrases_and_digits() {
        assert_eq!(parse_likert("I strongly agree with this.").unwrap(), 5);
        assert_eq!(parse_likert("Answer: 2").unwrap(), 2);
        assert_eq!(parse_likert("I agree. No wait - strongly agree.").unwrap(), 5);
        assert_eq!(parse_likert("I disagree.").unwrap(), 2);
        assert_eq!(parse_likert("Neither, really.").unwrap(), 3);
        assert_eq!(parse_likert("STRONGLY DISAGREE").unwrap(), 1);
    }

    #[test]
    fn parse_likert_last_occurrence_wins() {
        assert_eq!(parse_likert("strongly agree... no, disagree").unwrap(), 2);
        assert_eq!(parse_likert("2, actually 4").unwrap(), 4);
    }

    #[test]
    fn parse_likert_ignores_digit_runs() {
        assert_eq!(parse_likert("item 15 gets a 3").unwrap(), 3);
        assert!(parse_likert("the year 2024").is_err());
        assert!(parse_likert("nothing to see").is_err());
    }

    #[test]
    fn pearson_known_values() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-12);
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!((r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pearson_degenerate_inputs() {
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[3.0]).is_err());
        assert!(pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn spearman_known_values() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[9.0, 5.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        // Hand-ranked: ranks (1,2,3) vs (1.5,1.5,3) correlate at 0.866.
        let rho = spearman(&[1.0, 2.0, 3.0], &[10.0, 10.0, 20.0]).unwrap();
        assert!((rho - 0.866).abs() < 1e-3);
    }

    #[test]
    fn inventory_csv_round_trip() {
        let csv = "id,text,trait,facet,keying\n\
                   o1,\"I enjoy new, unusual ideas\",openness,1,ascending\n\
                   c9,I leave things lying around,conscientiousness,2,descending\n";
        let inv = Inventory::from_csv(csv).unwrap();
        assert_eq!(inv.items().len(), 2);
        assert_eq!(inv.by_id("o1").unwrap().text, "I enjoy new, unusual ideas");
        assert_eq!(inv.by_id("c9").unwrap().keying, Keying::Descending);
        assert_eq!(inv.items_for(TraitId::Openness).len(), 1);
    }

    proptest! {
        #[test]
        fn correlations_invariant_under_positive_affine_maps(
            xs in proptest::collection::vec(-50.0f64..50.0, 5..20),
            scale in 0.1f64..10.0,
            shift in -20.0f64..20.0,
        ) {
            let ys: Vec<f64> = xs.iter().map(|x| x * 2.0 + 1.0).collect();
            let xs2: Vec<f64> = xs.iter().map(|x| x * scale + shift).collect();
            if let (Ok(r1), Ok(r2)) = (pearson(&xs, &ys), pearson(&xs2, &ys)) {
                prop_assert!((r1 - r2).abs() < 1e-9);
            }
            if let (Ok(s1), Ok(s2)) = (spearman(&xs, &ys), spearman(&xs2, &ys)) {
                prop_assert!((s1 - s2).abs() < 1e-9);
            }
        }

        #[test]
        fn spearman_invariant_under_monotone_transforms(
            pairs in proptest::collection::vec((-20.0f64..20.0, -20.0f64..20.0), 5..20),
        ) {
            let xs: Vec<f64> = pairs.iter().map(|(x, _)| *x).collect();
            let ys: Vec<f64> = pairs.iter().map(|(_, y)| *y).collect();
            let ys_cubed: Vec<f64> = ys.iter().map(|y| y.powi(3) + y).collect();
            if let (Ok(s1), Ok(s2)) = (spearman(&xs, &ys), spearman(&xs, &ys_cubed)) {
                prop_assert!((s1 - s2).abs() < 1e-9);
            }
        }
    }
}
