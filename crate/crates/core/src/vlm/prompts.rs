//! Prompt texts sent to the vision-language model.

use serde::{Deserialize, Serialize};

use crate::cache::sha256_hex;

pub const PATCH_PROMPT: &str = "Describe what you see in this image patch in 1-2 sentences. \
Focus on any objects, faces, text, or salient visual content. If the patch appears blurry or \
shows only texture/background, describe the dominant colour, texture, or any partial object visible.";

pub const MARKER_PROMPT: &str = "You are analyzing where a viewer looked at an image. The red \
circle marks the region they fixated on (the circle center is the exact gaze point). Describe \
what is inside the circled region in 1-2 sentences. Focus on objects or elements within the \
circle, the visual content at the fixation location, and how this region relates to the broader \
image context. Be specific about what the viewer was looking at in that circled area.";

/// Contains the `{fixation_list}` placeholder.
pub const SUMMARY_PROMPT_TEMPLATE: &str = "You are analysing where a human viewer looked at an \
image. Below are sequential descriptions of the image regions they fixated on (in temporal \
order): {fixation_list}. Given the full image provided and these fixation descriptions, write a \
single coherent paragraph summarizing what this viewer attended to and what cognitive strategy \
they might have used.";

pub const FIXATION_LIST_PLACEHOLDER: &str = "{fixation_list}";

/// How the ordered descriptions are rendered into `{fixation_list}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixationListStyle {
    /// `[1. first; 2. second; 3. third]`
    #[default]
    Numbered,
    /// `[first; second; third]`
    Plain,
}

impl std::str::FromStr for FixationListStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "numbered" => Ok(Self::Numbered),
            "plain" => Ok(Self::Plain),
            other => Err(format!("unknown fixation list style {other:?}")),
        }
    }
}

pub fn format_fixation_list<S: AsRef<str>>(descriptions: &[S], style: FixationListStyle) -> String {
    let items: Vec<String> = descriptions
        .iter()
        .enumerate()
        .map(|(i, d)| match style {
            FixationListStyle::Numbered => format!("{}. {}", i + 1, d.as_ref()),
            FixationListStyle::Plain => d.as_ref().to_string(),
        })
        .collect();
    format!("[{}]", items.join("; "))
}

pub fn render_summary_prompt<S: AsRef<str>>(descriptions: &[S], style: FixationListStyle) -> String {
    SUMMARY_PROMPT_TEMPLATE.replace(
        FIXATION_LIST_PLACEHOLDER,
        &format_fixation_list(descriptions, style),
    )
}

pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}
