//! Sentence-selection metrics, thematic drift and the entailment label map.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::{PrivacyQAInstance, ThemeCode};
use crate::response::NliLabel;
use crate::scalar::Scalar;

/// Set precision and recall of `predicted` against the gold sentence ids.
/// An empty prediction scores (0, 0).
pub fn selection_prf<S: Scalar>(
    predicted: &[String],
    gold: &PrivacyQAInstance,
) -> Result<(S, S), MetricError> {
    if !gold.gold_answerable || gold.gold_sids.is_empty() {
        return Err(MetricError::NotAnswerable(gold.id.clone()));
    }
    for sid in predicted {
        if gold.sentence(sid).is_none() {
            return Err(MetricError::UnknownSentenceId(sid.clone()));
        }
    }
    let predicted: BTreeSet<&str> = predicted.iter().map(String::as_str).collect();
    if predicted.is_empty() {
        return Ok((S::zero(), S::zero()));
    }
    let gold_set: BTreeSet<&str> = gold.gold_sids.iter().map(String::as_str).collect();
    let hits = predicted.intersection(&gold_set).count() as u64;
    Ok((
        S::from_ratio(hits, predicted.len() as u64),
        S::from_ratio(hits, gold_set.len() as u64),
    ))
}

/// Theme code to type-value ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldMap {
    pub ordering: Vec<(ThemeCode, u8)>,
}

impl ScaffoldMap {
    /// IG=0, FPCU=1, ... OTH=10.
    pub fn linear() -> Self {
        ScaffoldMap {
            ordering: ThemeCode::ALL
                .iter()
                .enumerate()
                .map(|(ix, &code)| (code, ix as u8))
                .collect(),
        }
    }

    pub fn value(&self, code: ThemeCode) -> u8 {
        self.ordering
            .iter()
            .find(|(c, _)| *c == code)
            .map(|(_, v)| *v)
            .expect("scaffold covers every theme code")
    }
}

impl Default for ScaffoldMap {
    fn default() -> Self {
        Self::linear()
    }
}

/// How a question with several themes is compared to a sentence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionThemeMode {
    /// Closest question theme per sentence.
    #[default]
    Minimum,
    /// First listed question theme only.
    Primary,
}

/// Question type-values X and selected-sentence type-values Z_1..Z_m.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftInput {
    pub question_values: Vec<u8>,
    pub sentence_values: Vec<u8>,
}

impl DriftInput {
    pub fn single(question: u8, sentences: Vec<u8>) -> Self {
        DriftInput {
            question_values: vec![question],
            sentence_values: sentences,
        }
    }
}

/// Mean over sentences of the distance to the nearest question value.
/// `None` when there is no sentence or no question value.
pub fn thematic_drift<S: Scalar>(input: &DriftInput) -> Option<S> {
    if input.sentence_values.is_empty() || input.question_values.is_empty() {
        return None;
    }
    let total: u64 = input
        .sentence_values
        .iter()
        .map(|&z| {
            input
                .question_values
                .iter()
                .map(|&x| u64::from(z.abs_diff(x)))
                .min()
                .expect("non-empty")
        })
        .sum();
    Some(S::from_ratio(total, input.sentence_values.len() as u64))
}

/// Builds the drift input for a selection from the instance theme labels.
pub fn drift_input(
    instance: &PrivacyQAInstance,
    selected: &[String],
    scaffold: &ScaffoldMap,
    mode: QuestionThemeMode,
) -> Result<DriftInput, MetricError> {
    let themes: Vec<ThemeCode> = match mode {
        QuestionThemeMode::Minimum => instance.question_themes.clone(),
        QuestionThemeMode::Primary => instance.question_themes.iter().take(1).copied().collect(),
    };
    let mut sentence_values = Vec::with_capacity(selected.len());
    for sid in selected {
        let sentence = instance
            .sentence(sid)
            .ok_or_else(|| MetricError::UnknownSentenceId(sid.clone()))?;
        let theme = sentence
            .theme
            .ok_or_else(|| MetricError::MissingTheme(sid.clone()))?;
        sentence_values.push(scaffold.value(theme));
    }
    Ok(DriftInput {
        question_values: themes.into_iter().map(|t| scaffold.value(t)).collect(),
        sentence_values,
    })
}

/// 0-1 entailment, 9-10 contradiction, otherwise neutral.
pub fn score_to_label(score: u8) -> Result<NliLabel, MetricError> {
    match score {
        0..=1 => Ok(NliLabel::Entailment),
        2..=8 => Ok(NliLabel::Neutral),
        9..=10 => Ok(NliLabel::Contradiction),
        _ => Err(MetricError::ScoreOutOfRange(score)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PolicySentence;
    use crate::Rational;

    fn policy() -> PrivacyQAInstance {
        let s = |sid: &str, theme| PolicySentence {
            sid: sid.into(),
            text: format!("sentence {sid}"),
            theme: Some(theme),
        };
        PrivacyQAInstance {
            id: "p".into(),
            question: "q".into(),
            question_themes: vec![ThemeCode::FPCU],
            policy_sentences: vec![
                s("id_1", ThemeCode::FPCU),
                s("id_2", ThemeCode::FPCU),
                s("id_3", ThemeCode::IG),
                s("id_4", ThemeCode::TPSC),
            ],
            gold_answerable: true,
            gold_sids: vec!["id_1".into(), "id_2".into()],
        }
    }

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn prf_cases() {
        let p = policy();
        assert_eq!(selection_prf::<f64>(&ids(&["id_1", "id_2"]), &p).unwrap(), (1.0, 1.0));
        assert_eq!(
            selection_prf::<f64>(&ids(&["id_1", "id_2", "id_3", "id_4"]), &p).unwrap(),
            (0.5, 1.0)
        );
        assert_eq!(selection_prf::<f64>(&[], &p).unwrap(), (0.0, 0.0));
        assert!(selection_prf::<f64>(&ids(&["id_9"]), &p).is_err());
    }

    #[test]
    fn scaffold_is_contiguous() {
        let s = ScaffoldMap::linear();
        let mut values: Vec<u8> = ThemeCode::ALL.iter().map(|&c| s.value(c)).collect();
        values.sort();
        assert_eq!(values, (0..=10).collect::<Vec<u8>>());
        assert_eq!(s.value(ThemeCode::IG), 0);
        assert_eq!(s.value(ThemeCode::OTH), 10);
    }

    #[test]
    fn drift_examples() {
        assert_eq!(thematic_drift::<f64>(&DriftInput::single(2, vec![2, 2])), Some(0.0));
        assert_eq!(thematic_drift::<f64>(&DriftInput::single(1, vec![0, 2])), Some(1.0));
        assert_eq!(thematic_drift::<f64>(&DriftInput::single(6, vec![1])), Some(5.0));
        assert_eq!(thematic_drift::<f64>(&DriftInput::single(6, vec![])), None);
        let multi = DriftInput {
            question_values: vec![0, 10],
            sentence_values: vec![1, 9, 5],
        };
        assert_eq!(thematic_drift::<Rational>(&multi), Some(Rational::new(7, 3)));
    }

    #[test]
    fn drift_from_instance() {
        let p = policy();
        let input = drift_input(
            &p,
            &ids(&["id_3", "id_4"]),
            &ScaffoldMap::linear(),
            QuestionThemeMode::Minimum,
        )
        .unwrap();
        assert_eq!(thematic_drift::<f64>(&input), Some(1.0));
    }

    #[test]
    fn label_partition() {
        assert_eq!(score_to_label(0).unwrap(), NliLabel::Entailment);
        assert_eq!(score_to_label(1).unwrap(), NliLabel::Entailment);
        assert_eq!(score_to_label(5).unwrap(), NliLabel::Neutral);
        assert_eq!(score_to_label(9).unwrap(), NliLabel::Contradiction);
        assert_eq!(score_to_label(10).unwrap(), NliLabel::Contradiction);
        assert!(score_to_label(11).is_err());
    }
}
