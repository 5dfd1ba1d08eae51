//! Task instances and their gold annotations, loaded from JSON Lines files.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::response::{Decision, NliLabel};
use crate::task::TaskKind;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: schema violation: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: gold sentence id `{sid}` is not among the policy sentences")]
    DanglingSid { line: usize, sid: String },
    #[error("line {line}: duplicate instance id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("theme classifier failed: {0}")]
    Classifier(String),
}

/// Privacy-policy theme codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ThemeCode {
    IG,
    FPCU,
    TPSC,
    UCC,
    UAED,
    DS,
    DR,
    ISA,
    PC,
    PCI,
    OTH,
}

impl ThemeCode {
    pub const ALL: [ThemeCode; 11] = [
        ThemeCode::IG,
        ThemeCode::FPCU,
        ThemeCode::TPSC,
        ThemeCode::UCC,
        ThemeCode::UAED,
        ThemeCode::DS,
        ThemeCode::DR,
        ThemeCode::ISA,
        ThemeCode::PC,
        ThemeCode::PCI,
        ThemeCode::OTH,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ThemeCode::IG => "IG",
            ThemeCode::FPCU => "FPCU",
            ThemeCode::TPSC => "TPSC",
            ThemeCode::UCC => "UCC",
            ThemeCode::UAED => "UAED",
            ThemeCode::DS => "DS",
            ThemeCode::DR => "DR",
            ThemeCode::ISA => "ISA",
            ThemeCode::PC => "PC",
            ThemeCode::PCI => "PCI",
            ThemeCode::OTH => "OTH",
        }
    }
}

impl fmt::Display for ThemeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThemeCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ThemeCode::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| format!("unknown theme code `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScifactInstance {
    pub id: String,
    pub abstract_sentences: Vec<String>,
    pub claim: String,
    pub gold_decision: Decision,
    pub gold_evidence_sets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySentence {
    pub sid: String,
    pub text: String,
    /// Absent until backfilled by a theme classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theme: Option<ThemeCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyQAInstance {
    pub id: String,
    pub question: String,
    pub question_themes: Vec<ThemeCode>,
    pub policy_sentences: Vec<PolicySentence>,
    pub gold_answerable: bool,
    pub gold_sids: Vec<String>,
}

impl PrivacyQAInstance {
    pub fn sentence(&self, sid: &str) -> Option<&PolicySentence> {
        self.policy_sentences.iter().find(|s| s.sid == sid)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EsnliInstance {
    pub id: String,
    pub context: String,
    pub statement: String,
    pub gold_label: NliLabel,
    pub human_rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TaskInstance {
    Scifact(ScifactInstance),
    Privacyqa(PrivacyQAInstance),
    Esnli(EsnliInstance),
}

impl TaskInstance {
    pub fn id(&self) -> &str {
        match self {
            TaskInstance::Scifact(i) => &i.id,
            TaskInstance::Privacyqa(i) => &i.id,
            TaskInstance::Esnli(i) => &i.id,
        }
    }

    pub fn task(&self) -> TaskKind {
        match self {
            TaskInstance::Scifact(_) => TaskKind::Scifact,
            TaskInstance::Privacyqa(_) => TaskKind::Privacyqa,
            TaskInstance::Esnli(_) => TaskKind::Esnli,
        }
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        let invalid = |message: String| CorpusError::Invalid { line, message };
        if self.id().trim().is_empty() {
            return Err(invalid("empty instance id".into()));
        }
        match self {
            TaskInstance::Scifact(i) => {
                if i.abstract_sentences.is_empty() {
                    return Err(invalid("abstract has no sentences".into()));
                }
                for set in &i.gold_evidence_sets {
                    if set.is_empty() {
                        return Err(invalid("empty gold evidence set".into()));
                    }
                    if let Some(bad) = set.iter().find(|&&ix| ix >= i.abstract_sentences.len()) {
                        return Err(invalid(format!(
                            "evidence index {bad} out of range for {} abstract sentences",
                            i.abstract_sentences.len()
                        )));
                    }
                }
            }
            TaskInstance::Privacyqa(i) => {
                if i.question_themes.is_empty() {
                    return Err(invalid("question has no themes".into()));
                }
                let mut sids = HashSet::new();
                for s in &i.policy_sentences {
                    if !sids.insert(s.sid.as_str()) {
                        return Err(invalid(format!("duplicate policy sentence id `{}`", s.sid)));
                    }
                }
                for sid in &i.gold_sids {
                    if !sids.contains(sid.as_str()) {
                        return Err(CorpusError::DanglingSid {
                            line,
                            sid: sid.clone(),
                        });
                    }
                }
                if i.gold_answerable == i.gold_sids.is_empty() {
                    return Err(invalid(
                        "gold_sids must be empty exactly when the question is unanswerable".into(),
                    ));
                }
            }
            TaskInstance::Esnli(i) => {
                for (field, value) in [
                    ("context", &i.context),
                    ("statement", &i.statement),
                    ("human_rationale", &i.human_rationale),
                ] {
                    if value.trim().is_empty() {
                        return Err(invalid(format!("empty {field}")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_line(task: TaskKind, line: &str) -> Result<TaskInstance, serde_json::Error> {
    Ok(match task {
        TaskKind::Scifact => TaskInstance::Scifact(serde_json::from_str(line)?),
        TaskKind::Privacyqa => TaskInstance::Privacyqa(serde_json::from_str(line)?),
        TaskKind::Esnli => TaskInstance::Esnli(serde_json::from_str(line)?),
    })
}

/// Parses JSON Lines text; blank lines are skipped. Line numbers in errors
/// are 1-based.
pub fn parse_corpus(text: &str, task: TaskKind) -> Result<Vec<TaskInstance>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (ix, raw) in text.lines().enumerate() {
        let line = ix + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let instance = parse_line(task, raw).map_err(|e| CorpusError::Schema {
            line,
            message: e.to_string(),
        })?;
        instance.validate(line)?;
        if !ids.insert(instance.id().to_string()) {
            return Err(CorpusError::DuplicateId {
                line,
                id: instance.id().to_string(),
            });
        }
        out.push(instance);
    }
    if out.is_empty() {
        log::warn!("corpus for {task} contains no instances");
    }
    Ok(out)
}

pub fn load_corpus(path: &Path, task: TaskKind) -> Result<Vec<TaskInstance>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, task)
}

/// One instance per line, in order.
pub fn to_jsonl(instances: &[TaskInstance]) -> String {
    let mut out = String::new();
    for instance in instances {
        out.push_str(&serde_json::to_string(instance).expect("instance serializes"));
        out.push('\n');
    }
    out
}

/// Assigns a theme code to each policy sentence.
pub trait ThemeClassifier {
    fn classify(&self, sentences: &[&str]) -> Result<Vec<ThemeCode>, CorpusError>;
}

/// Client for an external sentence classifier.
///
/// Wire contract: `POST {endpoint}` with `{"sentences": [...]}`, answered by
/// `{"themes": ["IG", ...]}` in the same order.
pub struct HttpThemeClassifier {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpThemeClassifier {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpThemeClassifier {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    sentences: &'a [&'a str],
}

#[derive(Deserialize)]
struct ClassifyResponse {
    themes: Vec<String>,
}

impl ThemeClassifier for HttpThemeClassifier {
    fn classify(&self, sentences: &[&str]) -> Result<Vec<ThemeCode>, CorpusError> {
        let resp: ClassifyResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(ClassifyRequest { sentences })
            .map_err(|e| CorpusError::Classifier(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| CorpusError::Classifier(e.to_string()))?;
        if resp.themes.len() != sentences.len() {
            return Err(CorpusError::Classifier(format!(
                "expected {} themes, got {}",
                sentences.len(),
                resp.themes.len()
            )));
        }
        resp.themes
            .iter()
            .map(|t| t.parse().map_err(CorpusError::Classifier))
            .collect()
    }
}

/// Fills in missing sentence themes. Returns the number of sentences updated.
pub fn backfill_themes(
    instances: &mut [TaskInstance],
    classifier: &dyn ThemeClassifier,
) -> Result<usize, CorpusError> {
    let mut updated = 0;
    for instance in instances.iter_mut() {
        let TaskInstance::Privacyqa(pqa) = instance else {
            continue;
        };
        let missing: Vec<usize> = pqa
            .policy_sentences
            .iter()
            .enumerate()
            .filter(|(_, s)| s.theme.is_none())
            .map(|(ix, _)| ix)
            .collect();
        if missing.is_empty() {
            continue;
        }
        let texts: Vec<&str> = missing
            .iter()
            .map(|&ix| pqa.policy_sentences[ix].text.as_str())
            .collect();
        let themes = classifier.classify(&texts)?;
        for (ix, theme) in missing.into_iter().zip(themes) {
            pqa.policy_sentences[ix].theme = Some(theme);
            updated += 1;
        }
    }
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCIFACT_LINE: &str = r#"{"id":"s1","abstract_sentences":["A.","B."],"claim":"C","gold_decision":"refute","gold_evidence_sets":[[0],[1]]}"#;

    fn pqa_line(gold: &str) -> String {
        format!(
            r#"{{"id":"p1","question":"Q?","question_themes":["DR"],"policy_sentences":[{{"sid":"id_1","text":"We keep data.","theme":"DR"}}],"gold_answerable":true,"gold_sids":["{gold}"]}}"#
        )
    }

    #[test]
    fn loads_scifact() {
        let v = parse_corpus(SCIFACT_LINE, TaskKind::Scifact).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].id(), "s1");
    }

    #[test]
    fn empty_file_is_empty() {
        assert!(parse_corpus("", TaskKind::Esnli).unwrap().is_empty());
        assert!(parse_corpus("\n\n", TaskKind::Esnli).unwrap().is_empty());
    }

    #[test]
    fn dangling_sid_reports_line() {
        let text = format!("{}\n{}", pqa_line("id_1").replace("p1", "p0"), pqa_line("id_9"));
        match parse_corpus(&text, TaskKind::Privacyqa) {
            Err(CorpusError::DanglingSid { line, sid }) => {
                assert_eq!(line, 2);
                assert_eq!(sid, "id_9");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let text = format!("{SCIFACT_LINE}\n{SCIFACT_LINE}");
        assert!(matches!(
            parse_corpus(&text, TaskKind::Scifact),
            Err(CorpusError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn schema_violation_reports_line() {
        let text = format!("{SCIFACT_LINE}\n{{\"id\":\"x\"}}");
        assert!(matches!(
            parse_corpus(&text, TaskKind::Scifact),
            Err(CorpusError::Schema { line: 2, .. })
        ));
        let extra = SCIFACT_LINE.replace("\"claim\"", "\"bogus\":1,\"claim\"");
        assert!(matches!(
            parse_corpus(&extra, TaskKind::Scifact),
            Err(CorpusError::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn evidence_index_out_of_range() {
        let text = SCIFACT_LINE.replace("[[0],[1]]", "[[0],[2]]");
        assert!(matches!(
            parse_corpus(&text, TaskKind::Scifact),
            Err(CorpusError::Invalid { line: 1, .. })
        ));
        let empty_set = SCIFACT_LINE.replace("[[0],[1]]", "[[0],[]]");
        assert!(parse_corpus(&empty_set, TaskKind::Scifact).is_err());
    }

    #[test]
    fn unknown_theme_rejected() {
        let text = pqa_line("id_1").replace("\"DR\"]", "\"XX\"]");
        assert!(matches!(
            parse_corpus(&text, TaskKind::Privacyqa),
            Err(CorpusError::Schema { .. })
        ));
    }

    #[test]
    fn answerability_consistency() {
        let text = pqa_line("id_1").replace("\"gold_answerable\":true", "\"gold_answerable\":false");
        assert!(matches!(
            parse_corpus(&text, TaskKind::Privacyqa),
            Err(CorpusError::Invalid { .. })
        ));
    }

    #[test]
    fn esnli_requires_text() {
        let line = r#"{"id":"e1","context":"A boy runs.","statement":"A kid runs.","gold_label":"entailment","human_rationale":" "}"#;
        assert!(parse_corpus(line, TaskKind::Esnli).is_err());
    }

    struct Fixed;
    impl ThemeClassifier for Fixed {
        fn classify(&self, sentences: &[&str]) -> Result<Vec<ThemeCode>, CorpusError> {
            Ok(vec![ThemeCode::DS; sentences.len()])
        }
    }

    #[test]
    fn backfill_only_missing() {
        let line = r#"{"id":"p","question":"Q","question_themes":["DS"],"policy_sentences":[{"sid":"a","text":"x","theme":"DR"},{"sid":"b","text":"y"}],"gold_answerable":false,"gold_sids":[]}"#;
        let mut v = parse_corpus(line, TaskKind::Privacyqa).unwrap();
        assert_eq!(backfill_themes(&mut v, &Fixed).unwrap(), 1);
        let TaskInstance::Privacyqa(p) = &v[0] else { unreachable!() };
        assert_eq!(p.policy_sentences[0].theme, Some(ThemeCode::DR));
        assert_eq!(p.policy_sentences[1].theme, Some(ThemeCode::DS));
    }
}
