use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ChatTurn;
use crate::error::{Error, Result};

/// Which parser runs over the reply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedForm {
    SingleObject,
    YesNo,
    Caption,
}

/// Binding name that carries the attached image path for image templates.
pub const IMAGE_BINDING: &str = "image";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub system: String,
    pub user_pattern: String,
    pub expected_form: ExpectedForm,
    #[serde(default)]
    pub attach_image: bool,
}

const ONE_WORD_SYSTEM: &str = "You are a helpful chatbot that answers with only one word.";
const CAPTION_SYSTEM: &str = "You are a helpful chatbot that generates concise caption.";
const ASSISTANT_SYSTEM: &str = "A chat between a curious human and an artificial intelligence assistant. The assistant gives helpful, detailed, and polite answers to the human's questions.";

impl PromptTemplate {
    /// Plausible-object extraction from a caption.
    pub fn pipeline1_step1() -> Self {
        Self {
            name: "pipeline1.step1".into(),
            system: ONE_WORD_SYSTEM.into(),
            user_pattern: "Name an object that is not mentioned in the caption, but is likely to be in the image corresponding to the caption '{caption}'.".into(),
            expected_form: ExpectedForm::SingleObject,
            attach_image: false,
        }
    }

    /// Image-conditioned presence check.
    pub fn pipeline1_step2() -> Self {
        Self {
            name: "pipeline1.step2".into(),
            system: ASSISTANT_SYSTEM.into(),
            user_pattern: "Is there {object} in this image? Answer either yes or no.".into(),
            expected_form: ExpectedForm::YesNo,
            attach_image: true,
        }
    }

    /// Caption rewrite stating the object's absence.
    pub fn pipeline1_step3() -> Self {
        Self {
            name: "pipeline1.step3".into(),
            system: CAPTION_SYSTEM.into(),
            user_pattern: "Add the absence of the {object} to the caption '{caption}'.".into(),
            expected_form: ExpectedForm::Caption,
            attach_image: false,
        }
    }

    /// Caption rewrite from a question answered "no".
    pub fn pipeline2_step2() -> Self {
        Self {
            name: "pipeline2.step2".into(),
            system: CAPTION_SYSTEM.into(),
            user_pattern:
                "When the answer to the question {question} is 'no', reconstruct the caption '{caption}'."
                    .into(),
            expected_form: ExpectedForm::Caption,
            attach_image: false,
        }
    }

    /// Yes/no question about a generated image, used when scoring generators.
    pub fn vqa_judge() -> Self {
        Self {
            name: "eval.vqa".into(),
            system: ASSISTANT_SYSTEM.into(),
            user_pattern: "{question} Answer either yes or no.".into(),
            expected_form: ExpectedForm::YesNo,
            attach_image: true,
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "pipeline1.step1" => Some(Self::pipeline1_step1()),
            "pipeline1.step2" => Some(Self::pipeline1_step2()),
            "pipeline1.step3" => Some(Self::pipeline1_step3()),
            "pipeline2.step2" => Some(Self::pipeline2_step2()),
            "eval.vqa" => Some(Self::vqa_judge()),
            _ => None,
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for segment in split_pattern(&self.user_pattern) {
            if let Segment::Slot(name) = segment {
                if !out.iter().any(|n| n == name) {
                    out.push(name.to_owned());
                }
            }
        }
        out
    }

    pub fn render(&self, bindings: &BTreeMap<String, String>) -> Result<Vec<ChatTurn>> {
        let mut user = String::with_capacity(self.user_pattern.len() + 64);
        for segment in split_pattern(&self.user_pattern) {
            match segment {
                Segment::Literal(text) => user.push_str(text),
                Segment::Slot(name) => {
                    let value = bindings
                        .get(name)
                        .ok_or_else(|| Error::UnboundPlaceholder(name.to_owned()))?;
                    user.push_str(value);
                }
            }
        }
        let mut user_turn = ChatTurn::user(user);
        if self.attach_image {
            let image = bindings
                .get(IMAGE_BINDING)
                .ok_or_else(|| Error::UnboundPlaceholder(IMAGE_BINDING.to_owned()))?;
            user_turn = user_turn.with_image(PathBuf::from(image));
        }
        Ok(vec![ChatTurn::system(self.system.clone()), user_turn])
    }
}

enum Segment<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

/// Splits `a {x} b` into literal and slot segments. A brace pair only counts
/// as a slot when it encloses an identifier; anything else is literal text.
fn split_pattern(pattern: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close)
                if close > 0
                    && after[..close]
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_') =>
            {
                if open > 0 {
                    out.push(Segment::Literal(&rest[..open]));
                }
                out.push(Segment::Slot(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                out.push(Segment::Literal(&rest[..open + 1]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    out
}

/// Convenience for building bindings in call sites and tests.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v.to_owned()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_clients::Role;

    #[test]
    fn step1_renders_verbatim() {
        let turns = PromptTemplate::pipeline1_step1()
            .render(&bindings([("caption", "a man riding a horse")]))
            .unwrap();
        assert_eq!(turns.len(), 2);
        assert_eq!(turns[0].role, Role::System);
        assert_eq!(
            turns[0].text,
            "You are a helpful chatbot that answers with only one word."
        );
        assert_eq!(
            turns[1].text,
            "Name an object that is not mentioned in the caption, but is likely to be in the image corresponding to the caption 'a man riding a horse'."
        );
        assert!(turns[1].image_ref.is_none());
    }

    #[test]
    fn step2_attaches_image() {
        let turns = PromptTemplate::pipeline1_step2()
            .render(&bindings([("object", "saddle"), ("image", "img/1.png")]))
            .unwrap();
        assert_eq!(
            turns[1].text,
            "Is there saddle in this image? Answer either yes or no."
        );
        assert_eq!(turns[1].image_ref.as_deref(), Some(std::path::Path::new("img/1.png")));
    }

    #[test]
    fn step2_requires_image_binding() {
        let err = PromptTemplate::pipeline1_step2()
            .render(&bindings([("object", "saddle")]))
            .unwrap_err();
        assert!(matches!(err, Error::UnboundPlaceholder(ref n) if n == "image"));
    }

    #[test]
    fn step3_and_pipeline2_render_verbatim() {
        let t = PromptTemplate::pipeline1_step3()
            .render(&bindings([("object", "saddle"), ("caption", "a man riding a horse")]))
            .unwrap();
        assert_eq!(
            t[1].text,
            "Add the absence of the saddle to the caption 'a man riding a horse'."
        );
        assert_eq!(t[0].text, "You are a helpful chatbot that generates concise caption.");

        let t = PromptTemplate::pipeline2_step2()
            .render(&bindings([
                ("question", "Is the dog swimming?"),
                ("caption", "a dog near a pool"),
            ]))
            .unwrap();
        assert_eq!(
            t[1].text,
            "When the answer to the question Is the dog swimming? is 'no', reconstruct the caption 'a dog near a pool'."
        );
    }

    #[test]
    fn unbound_placeholder_is_named() {
        let err = PromptTemplate::pipeline1_step3()
            .render(&bindings([("object", "saddle")]))
            .unwrap_err();
        assert!(matches!(err, Error::UnboundPlaceholder(ref n) if n == "caption"));
        assert!(err.to_string().contains("caption"));
    }

    #[test]
    fn render_is_pure() {
        let t = PromptTemplate::pipeline1_step1();
        let b = bindings([("caption", "x {caption} y")]);
        assert_eq!(t.render(&b).unwrap(), t.render(&b).unwrap());
        // Substituted values are never re-expanded.
        assert!(t.render(&b).unwrap()[1].text.contains("'x {caption} y'"));
    }

    #[test]
    fn placeholder_scan() {
        assert_eq!(
            PromptTemplate::pipeline2_step2().placeholders(),
            vec!["question", "caption"]
        );
        let odd = PromptTemplate {
            name: "odd".into(),
            system: String::new(),
            user_pattern: "json {\"k\": 1} and {slot} and {".into(),
            expected_form: ExpectedForm::Caption,
            attach_image: false,
        };
        assert_eq!(odd.placeholders(), vec!["slot"]);
        let out = odd.render(&bindings([("slot", "v")])).unwrap();
        assert_eq!(out[1].text, "json {\"k\": 1} and v and {");
    }
}
