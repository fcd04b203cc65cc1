//! Prompt templates with `{field}` placeholders and `{?field}...{/field}`
//! conditional sections.
//!
//! Fields are `instruction`, `input` and `answer`. A conditional section is
//! emitted only when its field is present and non-blank. `{{` and `}}` are
//! literal braces.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetError, InstructionExample};
use crate::Fingerprint;

const DEFAULT_PREAMBLE: &str = "Below is an instruction that describes a task. \
Write a response that appropriately completes the request.\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Query,
    Demonstration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Field {
    Instruction,
    Input,
    Answer,
}

impl Field {
    fn parse(name: &str) -> Option<Field> {
        match name {
            "instruction" => Some(Field::Instruction),
            "input" => Some(Field::Input),
            "answer" => Some(Field::Answer),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Field::Instruction => "instruction",
            Field::Input => "input",
            Field::Answer => "answer",
        }
    }

    fn value(self, ex: &InstructionExample) -> Option<&str> {
        match self {
            Field::Instruction => Some(&ex.instruction),
            Field::Input => ex.input.as_deref(),
            Field::Answer => Some(&ex.answer),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Field(Field),
    Section(Field, Vec<Segment>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
struct TemplateSpec {
    query_pattern: String,
    demonstration_pattern: String,
    separator: String,
}

/// A validated prompt template.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    spec: TemplateSpec,
    query: Vec<Segment>,
    demonstration: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(
        query_pattern: impl Into<String>,
        demonstration_pattern: impl Into<String>,
        separator: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        Self::from_spec(TemplateSpec {
            query_pattern: query_pattern.into(),
            demonstration_pattern: demonstration_pattern.into(),
            separator: separator.into(),
        })
    }

    fn from_spec(spec: TemplateSpec) -> Result<Self, DatasetError> {
        let query = parse_pattern(&spec.query_pattern)
            .map_err(|reason| DatasetError::Template(format!("query_pattern: {reason}")))?;
        let demonstration = parse_pattern(&spec.demonstration_pattern)
            .map_err(|reason| DatasetError::Template(format!("demonstration_pattern: {reason}")))?;
        if uses(&query, Field::Answer) {
            return Err(DatasetError::Template(
                "query_pattern must not reference {answer}".into(),
            ));
        }
        if !uses(&demonstration, Field::Answer) {
            return Err(DatasetError::Template(
                "demonstration_pattern must reference {answer}".into(),
            ));
        }
        Ok(PromptTemplate { spec, query, demonstration })
    }

    /// Alpaca-style layout with instruction, optional input and response sections.
    pub fn alpaca() -> Self {
        let query = format!(
            "{DEFAULT_PREAMBLE}### Instruction:\n{{instruction}}\n\n\
             {{?input}}### Input:\n{{input}}\n\n{{/input}}### Response:\n"
        );
        let demonstration = format!("{query}{{answer}}");
        Self::new(query, demonstration, "\n\n").expect("built-in template is valid")
    }

    /// Load from a JSON object with `query_pattern`, `demonstration_pattern`
    /// and `separator`.
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let spec: TemplateSpec = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Template(format!("{}: {e}", path.display())))?;
        Self::from_spec(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.spec).expect("template serializes")
    }

    pub fn separator(&self) -> &str {
        &self.spec.separator
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(&self.spec)
    }

    pub fn render(&self, example: &InstructionExample, role: Role) -> Result<String, DatasetError> {
        let segments = match role {
            Role::Query => &self.query,
            Role::Demonstration => &self.demonstration,
        };
        let mut out = String::new();
        render_into(&mut out, segments, example)?;
        Ok(out)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::alpaca()
    }
}

fn uses(segments: &[Segment], field: Field) -> bool {
    segments.iter().any(|s| match s {
        Segment::Literal(_) => false,
        Segment::Field(f) => *f == field,
        Segment::Section(f, inner) => *f == field || uses(inner, field),
    })
}

fn render_into(
    out: &mut String,
    segments: &[Segment],
    example: &InstructionExample,
) -> Result<(), DatasetError> {
    for seg in segments {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Field(f) => match f.value(example) {
                Some(v) => out.push_str(v),
                None => {
                    return Err(DatasetError::MissingPlaceholder {
                        id: example.id.to_string(),
                        field: f.name(),
                    })
                }
            },
            Segment::Section(f, inner) => {
                if f.value(example).is_some_and(|v| !v.trim().is_empty()) {
                    render_into(out, inner, example)?;
                }
            }
        }
    }
    Ok(())
}

fn parse_pattern(pattern: &str) -> Result<Vec<Segment>, String> {
    // Stack of (open section field, segments collected so far).
    let mut stack: Vec<(Option<Field>, Vec<Segment>)> = vec![(None, Vec::new())];
    let mut literal = String::new();
    let mut chars = pattern.char_indices().peekable();

    fn flush(literal: &mut String, segs: &mut Vec<Segment>) {
        if !literal.is_empty() {
            segs.push(Segment::Literal(std::mem::take(literal)));
        }
    }

    while let Some((pos, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                chars.next();
                literal.push('{');
            }
            '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                chars.next();
                literal.push('}');
            }
            '}' => return Err(format!("unmatched '}}' at byte {pos}")),
            '{' => {
                let rest = &pattern[pos + 1..];
                let end = rest
                    .find('}')
                    .ok_or_else(|| format!("unterminated placeholder at byte {pos}"))?;
                let tag = &rest[..end];
                for _ in 0..tag.chars().count() + 1 {
                    chars.next();
                }
                let top = &mut stack.last_mut().expect("stack never empty").1;
                flush(&mut literal, top);
                if let Some(name) = tag.strip_prefix('?') {
                    let f = Field::parse(name).ok_or_else(|| format!("unknown field '{name}'"))?;
                    stack.push((Some(f), Vec::new()));
                } else if let Some(name) = tag.strip_prefix('/') {
                    let f = Field::parse(name).ok_or_else(|| format!("unknown field '{name}'"))?;
                    let (open, segs) = stack.pop().expect("stack never empty");
                    if open != Some(f) {
                        return Err(format!("unexpected closing tag '{{/{name}}}'"));
                    }
                    stack
                        .last_mut()
                        .expect("root frame remains")
                        .1
                        .push(Segment::Section(f, segs));
                } else {
                    let f = Field::parse(tag).ok_or_else(|| format!("unknown field '{tag}'"))?;
                    top.push(Segment::Field(f));
                }
            }
            c => literal.push(c),
        }
    }
    let top = &mut stack.last_mut().expect("stack never empty").1;
    flush(&mut literal, top);
    if stack.len() != 1 {
        let open = stack.last().and_then(|(f, _)| *f).map(Field::name).unwrap_or("?");
        return Err(format!("section '{{?{open}}}' is never closed"));
    }
    Ok(stack.pop().expect("root frame").1)
}
