//! Prompt templates for the three projection stages.
//!
//! Bodies are built per language pair: language names are baked in at
//! construction, so the only `{placeholders}` left are the declared ones.
//! The English/Chinese few-shot exemplars are included for en→zh and, with
//! sides swapped, for zh→en. Other pairs get the same instructions without
//! exemplars.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PLACEHOLDERS: [&str; 5] = [
    "src_sentence",
    "src_spans",
    "src_span",
    "tgt_sentence",
    "tgt_lang_spans",
];

/// Reply the sentence-rephrase prompt asks for when it cannot comply.
pub const REFUSAL_MARKER: &str = "modification failure";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template uses undeclared placeholder `{{{0}}}`")]
    UndeclaredPlaceholder(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    JointTranslation,
    SpanRephrase,
    SentenceRephrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LangPair {
    pub src: String,
    pub tgt: String,
}

impl LangPair {
    pub fn new(src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            tgt: tgt.into(),
        }
    }

    pub fn reversed(&self) -> Self {
        Self::new(self.tgt.clone(), self.src.clone())
    }
}

/// English name for a language code; unknown codes are returned unchanged.
pub fn language_name(code: &str) -> &str {
    match code {
        "en" => "English",
        "zh" => "Chinese",
        "ar" => "Arabic",
        "bn" => "Bengali",
        "de" => "German",
        "es" => "Spanish",
        "fa" => "Persian",
        "fr" => "French",
        "hi" => "Hindi",
        "it" => "Italian",
        "ja" => "Japanese",
        "ko" => "Korean",
        "nl" => "Dutch",
        "pt" => "Portuguese",
        "ru" => "Russian",
        "tr" => "Turkish",
        "vi" => "Vietnamese",
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    body: String,
}

fn placeholders(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                let name = &after[..close];
                if !name.is_empty() && name.chars().all(|c| c.is_ascii_lowercase() || c == '_') {
                    out.push(name);
                }
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        if let Some(bad) = placeholders(&body)
            .into_iter()
            .find(|p| !PLACEHOLDERS.contains(p))
        {
            return Err(TemplateError::UndeclaredPlaceholder(bad.to_string()));
        }
        Ok(Self { name, body })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitutes placeholders in one pass; substituted text is never
    /// re-expanded. Placeholders without a value are left as is.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = String::with_capacity(self.body.len() + 64);
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let value = after.find('}').and_then(|close| {
                vars.iter()
                    .find(|(k, _)| *k == &after[..close])
                    .map(|(_, v)| (close, *v))
            });
            match value {
                Some((close, v)) => {
                    out.push_str(v);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }
}

/// JSON string escaping without the surrounding quotes.
pub fn escape_inner(text: &str) -> String {
    let quoted = serde_json::to_string(text).expect("strings always serialize");
    quoted[1..quoted.len() - 1].to_string()
}

/// `"a", "b"`: the inside of a JSON string array.
pub fn format_span_list<S: AsRef<str>>(spans: &[S]) -> String {
    spans
        .iter()
        .map(|s| serde_json::to_string(s.as_ref()).expect("strings always serialize"))
        .collect::<Vec<_>>()
        .join(", ")
}

struct Exemplar {
    en: (&'static str, &'static [&'static str]),
    zh: (&'static str, &'static [&'static str]),
}

const JOINT_EXEMPLARS: [Exemplar; 3] = [
    Exemplar {
        en: (
            "The EU rejected Germany's call for a boycott of British lamb.",
            &["EU"],
        ),
        zh: ("欧盟拒绝德国呼吁抵制英国羊肉。", &["欧盟"]),
    },
    Exemplar {
        en: ("FM involves 2 - 4.7% of the general population.", &[]),
        zh: ("FM 影响了2 - 4.7% 的普通人群。", &[]),
    },
    Exemplar {
        en: (
            "4000 guests from home and abroad attended the opening ceremony.",
            &["home", "abroad"],
        ),
        zh: (
            "4000名来自国内和国外的嘉宾出席了开幕式。",
            &["国内", "国外"],
        ),
    },
];

const SPAN_EXEMPLAR: Exemplar = Exemplar {
    en: (
        "Siemens invested 800 million US dollars to complete the electric power plant project.",
        &["US"],
    ),
    zh: ("西门子投资了8亿美元完成了电力厂项目。", &["美"]),
};

fn side(lang: &str, sentence: &str, spans: &[&str]) -> String {
    format!(
        "[{}]\n\"sentence\": \"{}\"\n\"spans\": [{}]\n",
        language_name(lang),
        escape_inner(sentence),
        format_span_list(spans)
    )
}

/// A sentence with its spans.
type Side<'a> = (&'a str, &'a [&'a str]);

/// Source/target sides of an exemplar for this pair, if it has exemplars.
fn oriented<'a>(pair: &LangPair, ex: &'a Exemplar) -> Option<(Side<'a>, Side<'a>)> {
    match (pair.src.as_str(), pair.tgt.as_str()) {
        ("en", "zh") => Some((ex.en, ex.zh)),
        ("zh", "en") => Some((ex.zh, ex.en)),
        _ => None,
    }
}

/// The three templates for one language pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub pair: LangPair,
    pub joint_translation: PromptTemplate,
    pub span_rephrase: PromptTemplate,
    pub sentence_rephrase: PromptTemplate,
}

impl TemplateSet {
    pub fn for_pair(pair: &LangPair) -> Self {
        let src = language_name(&pair.src);
        let tgt = language_name(&pair.tgt);

        let mut joint = format!(
            "Translate the sentence and spans from {src} to {tgt}.\n\n\
             Please follow these guidelines:\n\
             1. Translate each span considering the context of the sentence.\n\
             2. Ensure the number of spans after translation matches the original number of spans.\n\
             3. When outputting spans, ensure only to output the translation of each span.\n\n"
        );
        let shots: Vec<String> = JOINT_EXEMPLARS
            .iter()
            .filter_map(|ex| oriented(pair, ex))
            .map(|(s, t)| format!("{}{}", side(&pair.src, s.0, s.1), side(&pair.tgt, t.0, t.1)))
            .collect();
        if !shots.is_empty() {
            joint.push_str("The following is a few examples:\n\n");
            joint.push_str(&shots.join("\n"));
            joint.push('\n');
        }
        joint.push_str(&format!(
            "Please translate the following sentence and spans:\n\
             [{src}]\n\"sentence\": \"{{src_sentence}}\"\n\"spans\": [{{src_spans}}]\n\
             [{tgt}]\n"
        ));

        let mut span = format!(
            "Please find the {tgt} span corresponding to the {src} span in the {tgt} sentence.\n\n\
             Please follow these guidelines:\n\
             1. Only find the span in the {tgt} sentence that corresponds to the {src} span.\n\
             2. Ensure that the {tgt} span must be semantically consistent with the {src} span.\n\n"
        );
        if let Some((s, t)) = oriented(pair, &SPAN_EXEMPLAR) {
            span.push_str("The following is an example:\n\n");
            span.push_str(&side(&pair.src, s.0, s.1));
            span.push_str(&side(&pair.tgt, t.0, t.1));
            span.push('\n');
        }
        span.push_str(&format!(
            "Please find the corresponding span in the {tgt} sentence:\n\
             [{src}]\n\"sentence\": \"{{src_sentence}}\"\n\"spans\": [{{src_span}}]\n\
             [{tgt}]\n\"sentence\": \"{{tgt_sentence}}\"\n\"spans\": "
        ));

        let sentence = format!(
            "Please translate the following sentence from {src} to {tgt}.\n\n\
             Please follow these guidelines:\n\
             1. Ensure that the translation includes the following spans: [{{tgt_lang_spans}}].\n\
             2. If the target sentence is semantically inconsistent with the source sentence, return \"{REFUSAL_MARKER}\".\n\n\
             [{src}]\n\"sentence\": \"{{src_sentence}}\"\n\
             [{tgt}]\n\"sentence\": "
        );

        let build = |name, body: String| {
            PromptTemplate::new(name, body).expect("built-in templates are valid")
        };
        Self {
            pair: pair.clone(),
            joint_translation: build(TemplateName::JointTranslation, joint),
            span_rephrase: build(TemplateName::SpanRephrase, span),
            sentence_rephrase: build(TemplateName::SentenceRephrase, sentence),
        }
    }

    pub fn joint_prompt<S: AsRef<str>>(&self, src_sentence: &str, src_spans: &[S]) -> String {
        self.joint_translation.render(&[
            ("src_sentence", &escape_inner(src_sentence)),
            ("src_spans", &format_span_list(src_spans)),
        ])
    }

    pub fn span_prompt(&self, src_sentence: &str, src_span: &str, tgt_sentence: &str) -> String {
        self.span_rephrase.render(&[
            ("src_sentence", &escape_inner(src_sentence)),
            ("src_span", &format_span_list(&[src_span])),
            ("tgt_sentence", &escape_inner(tgt_sentence)),
        ])
    }

    pub fn sentence_prompt<S: AsRef<str>>(&self, tgt_spans: &[S], src_sentence: &str) -> String {
        self.sentence_rephrase.render(&[
            ("tgt_lang_spans", &format_span_list(tgt_spans)),
            ("src_sentence", &escape_inner(src_sentence)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholder_validation() {
        assert!(PromptTemplate::new(TemplateName::SpanRephrase, "x {src_span} y").is_ok());
        assert_eq!(
            PromptTemplate::new(TemplateName::SpanRephrase, "x {src_lang} y"),
            Err(TemplateError::UndeclaredPlaceholder("src_lang".into()))
        );
        // braces around non-identifiers are literal text
        assert!(PromptTemplate::new(TemplateName::SpanRephrase, "json {\"a\": 1}").is_ok());
    }

    #[test]
    fn substitution_is_single_pass() {
        let t =
            PromptTemplate::new(TemplateName::SpanRephrase, "[{src_span}] {tgt_sentence}").unwrap();
        assert_eq!(
            t.render(&[("src_span", "{tgt_sentence}"), ("tgt_sentence", "ok")]),
            "[{tgt_sentence}] ok"
        );
    }

    #[test]
    fn en_zh_joint_prompt_carries_exemplars() {
        let set = TemplateSet::for_pair(&LangPair::new("en", "zh"));
        let p = set.joint_prompt("Steve joined Apple.", &["Steve", "Apple"]);
        assert!(p.starts_with("Translate the sentence and spans from English to Chinese.\n"));
        assert!(p.contains(
            "[Chinese]\n\"sentence\": \"欧盟拒绝德国呼吁抵制英国羊肉。\"\n\"spans\": [\"欧盟\"]\n"
        ));
        assert!(p.contains("\"spans\": [\"国内\", \"国外\"]"));
        assert!(p.ends_with("[English]\n\"sentence\": \"Steve joined Apple.\"\n\"spans\": [\"Steve\", \"Apple\"]\n[Chinese]\n"));
    }

    #[test]
    fn zh_en_swaps_exemplar_sides() {
        let set = TemplateSet::for_pair(&LangPair::new("zh", "en"));
        let p = set.joint_prompt("x", &[] as &[&str]);
        assert!(p.contains("[Chinese]\n\"sentence\": \"欧盟拒绝德国呼吁抵制英国羊肉。\"\n\"spans\": [\"欧盟\"]\n[English]\n\"sentence\": \"The EU rejected"));
    }

    #[test]
    fn other_pairs_have_no_exemplars() {
        let set = TemplateSet::for_pair(&LangPair::new("en", "ru"));
        let p = set.joint_prompt("x", &["y"]);
        assert!(p.contains("from English to Russian"));
        assert!(!p.contains("欧盟"));
        assert!(!set.span_rephrase.body().contains("Siemens"));
    }

    #[test]
    fn span_and_sentence_prompts() {
        let set = TemplateSet::for_pair(&LangPair::new("en", "zh"));
        let p = set.span_prompt("He paid in US \"dollars\".", "US", "他用美元支付。");
        assert!(p.contains("\"sentence\": \"He paid in US \\\"dollars\\\".\"\n\"spans\": [\"US\"]\n[Chinese]\n\"sentence\": \"他用美元支付。\"\n\"spans\": "));
        assert!(p.contains("\"spans\": [\"美\"]"));
        let s = set.sentence_prompt(&["欧盟"], "The EU rejected it.");
        assert!(s.contains("includes the following spans: [\"欧盟\"]."));
        assert!(s.contains("return \"modification failure\""));
        assert!(s.ends_with("[Chinese]\n\"sentence\": "));
    }
}
