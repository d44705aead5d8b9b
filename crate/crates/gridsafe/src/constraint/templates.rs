//! Natural-language surface templates for constraints.
//!
//! A template bank holds, per constraint variant, a list of English surface
//! templates with slot markers. Rendering a constraint through a template
//! produces the instruction text the interpreter must learn to read. Each
//! variant's list is partitioned into a train split and a held-out split;
//! held-out templates never appear in interpreter training data and measure
//! generalization to unseen phrasings.
//!
//! Bank file format: a `[budgetary]` / `[relational]` / `[sequential]` header
//! opens each section; templates follow one per line; a single `---` line
//! inside the section separates train templates (above) from held-out ones
//! (below). Slots: `{entity}`, `{n}`, `{n_word}` (the count spelled as an
//! English word), `{trigger}`, `{forbidden}`. For budgetary and sequential
//! templates the count slot carries the violation threshold; for relational
//! templates it carries the distance.

use std::fmt;

use thiserror::Error;

use crate::constraint::ConstraintSpec;

/// Constraint family, used to pick the matching template list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    Budgetary,
    Relational,
    Sequential,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Budgetary, Variant::Relational, Variant::Sequential];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Budgetary => "budgetary",
            Variant::Relational => "relational",
            Variant::Sequential => "sequential",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One surface template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub text: String,
    /// Held-out templates are excluded from interpreter training data.
    pub heldout: bool,
}

impl Template {
    /// Whether the template carries a numeric slot.
    pub fn has_count_slot(&self) -> bool {
        self.text.contains("{n}") || self.text.contains("{n_word}")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("no {variant} template with id {id} (bank has {len})")]
    UnknownTemplate {
        variant: Variant,
        id: usize,
        len: usize,
    },
    #[error("template bank line {line}: {message}")]
    BankFormat { line: usize, message: String },
    #[error("{variant} templates: {message}")]
    Coverage { variant: Variant, message: String },
}

/// Per-variant template lists with train/held-out partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateBank {
    budgetary: Vec<Template>,
    relational: Vec<Template>,
    sequential: Vec<Template>,
}

/// English words for small numbers, used by the `{n_word}` slot.
const NUMBER_WORDS: [&str; 10] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
];

/// Renders `n` as an English number word (falls back to digits past nine).
pub fn number_word(n: u32) -> String {
    NUMBER_WORDS
        .get(n as usize)
        .map(|s| s.to_string())
        .unwrap_or_else(|| n.to_string())
}

impl TemplateBank {
    /// The built-in bank: 12 templates per variant, 9 train + 3 held out.
    /// Held-out templates reuse the training vocabulary (different phrasings,
    /// no new words), so generalization is about composition, not coverage.
    pub fn default_bank() -> TemplateBank {
        TemplateBank::parse(DEFAULT_BANK_TEXT).expect("built-in template bank is well-formed")
    }

    pub fn templates(&self, variant: Variant) -> &[Template] {
        match variant {
            Variant::Budgetary => &self.budgetary,
            Variant::Relational => &self.relational,
            Variant::Sequential => &self.sequential,
        }
    }

    /// Ids of train (or held-out) templates for a variant.
    pub fn split_ids(&self, variant: Variant, heldout: bool) -> Vec<usize> {
        self.templates(variant)
            .iter()
            .enumerate()
            .filter(|(_, t)| t.heldout == heldout)
            .map(|(i, _)| i)
            .collect()
    }

    /// Renders the constraint through the identified template.
    pub fn render(&self, spec: &ConstraintSpec, template_id: usize) -> Result<String, TemplateError> {
        let variant = spec.variant();
        let list = self.templates(variant);
        let template = list.get(template_id).ok_or(TemplateError::UnknownTemplate {
            variant,
            id: template_id,
            len: list.len(),
        })?;
        let mut text = template.text.clone();
        match *spec {
            ConstraintSpec::Budgetary { entity, threshold } => {
                text = text.replace("{entity}", entity.name());
                text = fill_count(&text, threshold);
            }
            ConstraintSpec::Relational {
                entity, distance, ..
            } => {
                text = text.replace("{entity}", entity.name());
                text = fill_count(&text, distance);
            }
            ConstraintSpec::Sequential {
                trigger,
                forbidden,
                threshold,
            } => {
                text = text.replace("{trigger}", trigger.name());
                text = text.replace("{forbidden}", forbidden.name());
                text = fill_count(&text, threshold);
            }
        }
        Ok(text)
    }

    /// Checks minimum bank size and held-out coverage: at least 10 templates
    /// per variant, at least 20% of them held out, and at least one train
    /// template per variant.
    pub fn validate_coverage(&self) -> Result<(), TemplateError> {
        for variant in Variant::ALL {
            let list = self.templates(variant);
            if list.len() < 10 {
                return Err(TemplateError::Coverage {
                    variant,
                    message: format!("need at least 10 templates, found {}", list.len()),
                });
            }
            let heldout = list.iter().filter(|t| t.heldout).count();
            if (heldout as f64) < 0.2 * list.len() as f64 {
                return Err(TemplateError::Coverage {
                    variant,
                    message: format!(
                        "need at least 20% held out, found {heldout} of {}",
                        list.len()
                    ),
                });
            }
            if heldout == list.len() {
                return Err(TemplateError::Coverage {
                    variant,
                    message: "every template is held out; none left for training".into(),
                });
            }
        }
        Ok(())
    }

    /// Serializes the bank in the file format described in the module docs.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for variant in Variant::ALL {
            out.push('[');
            out.push_str(variant.name());
            out.push_str("]\n");
            let list = self.templates(variant);
            for t in list.iter().filter(|t| !t.heldout) {
                out.push_str(&t.text);
                out.push('\n');
            }
            out.push_str("---\n");
            for t in list.iter().filter(|t| t.heldout) {
                out.push_str(&t.text);
                out.push('\n');
            }
        }
        out
    }

    /// Parses the bank file format. All three sections must be present, each
    /// with exactly one `---` split marker; templates must carry the slots
    /// their variant requires.
    pub fn parse(text: &str) -> Result<TemplateBank, TemplateError> {
        let mut sections: [Option<Vec<Template>>; 3] = [None, None, None];
        let mut current: Option<(Variant, Vec<Template>, bool)> = None;

        let close =
            |sections: &mut [Option<Vec<Template>>; 3],
             current: Option<(Variant, Vec<Template>, bool)>,
             line: usize|
             -> Result<(), TemplateError> {
                if let Some((variant, list, saw_marker)) = current {
                    if !saw_marker {
                        return Err(TemplateError::BankFormat {
                            line,
                            message: format!("[{variant}] section has no '---' split marker"),
                        });
                    }
                    let idx = variant as usize;
                    if sections[idx].is_some() {
                        return Err(TemplateError::BankFormat {
                            line,
                            message: format!("duplicate [{variant}] section"),
                        });
                    }
                    sections[idx] = Some(list);
                }
                Ok(())
            };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let variant = match name {
                    "budgetary" => Variant::Budgetary,
                    "relational" => Variant::Relational,
                    "sequential" => Variant::Sequential,
                    _ => {
                        return Err(TemplateError::BankFormat {
                            line: lineno + 1,
                            message: format!("unknown section '{name}'"),
                        })
                    }
                };
                close(&mut sections, current.take(), lineno + 1)?;
                current = Some((variant, Vec::new(), false));
            } else if line == "---" {
                match current.as_mut() {
                    Some((variant, _, saw_marker)) => {
                        if *saw_marker {
                            return Err(TemplateError::BankFormat {
                                line: lineno + 1,
                                message: format!("[{variant}] section has two '---' markers"),
                            });
                        }
                        *saw_marker = true;
                    }
                    None => {
                        return Err(TemplateError::BankFormat {
                            line: lineno + 1,
                            message: "'---' before any section header".into(),
                        })
                    }
                }
            } else {
                match current.as_mut() {
                    Some((variant, list, saw_marker)) => {
                        validate_slots(*variant, line, lineno + 1)?;
                        list.push(Template {
                            text: line.to_string(),
                            heldout: *saw_marker,
                        });
                    }
                    None => {
                        return Err(TemplateError::BankFormat {
                            line: lineno + 1,
                            message: "template before any section header".into(),
                        })
                    }
                }
            }
        }
        close(&mut sections, current.take(), text.lines().count())?;

        let [b, r, s] = sections;
        let missing = |variant: Variant| TemplateError::BankFormat {
            line: 0,
            message: format!("missing [{variant}] section"),
        };
        Ok(TemplateBank {
            budgetary: b.ok_or_else(|| missing(Variant::Budgetary))?,
            relational: r.ok_or_else(|| missing(Variant::Relational))?,
            sequential: s.ok_or_else(|| missing(Variant::Sequential))?,
        })
    }
}

fn fill_count(text: &str, n: u32) -> String {
    text.replace("{n}", &n.to_string())
        .replace("{n_word}", &number_word(n))
}

fn validate_slots(variant: Variant, text: &str, line: usize) -> Result<(), TemplateError> {
    let has = |slot: &str| text.contains(slot);
    let bad = |message: String| TemplateError::BankFormat { line, message };
    match variant {
        Variant::Budgetary | Variant::Relational => {
            if !has("{entity}") {
                return Err(bad(format!("{variant} template must contain {{entity}}")));
            }
            if !(has("{n}") || has("{n_word}")) {
                return Err(bad(format!(
                    "{variant} template must contain {{n}} or {{n_word}}"
                )));
            }
            if has("{trigger}") || has("{forbidden}") {
                return Err(bad(format!(
                    "{variant} template cannot contain {{trigger}}/{{forbidden}}"
                )));
            }
        }
        Variant::Sequential => {
            if !has("{trigger}") || !has("{forbidden}") {
                return Err(bad(
                    "sequential template must contain {trigger} and {forbidden}".into(),
                ));
            }
            if has("{entity}") {
                return Err(bad("sequential template cannot contain {entity}".into()));
            }
        }
    }
    Ok(())
}

const DEFAULT_BANK_TEXT: &str = "\
[budgetary]
Do not step on {entity} more than {n} times.
Avoid stepping on {entity} more than {n} times.
You may enter {entity} at most {n} times.
Entering {entity} is fine at most {n} times.
Walking on {entity} is allowed at most {n_word} times.
Step on {entity} {n_word} times at most.
You can walk on {entity} at most {n} times.
Touch {entity} no more than {n_word} times.
Do not walk on {entity} more than {n} times.
---
You may step on {entity} no more than {n} times.
Do not touch {entity} more than {n_word} times.
Entering {entity} is allowed at most {n} times.
[relational]
Keep a distance of {n} from {entity}.
Do not come within {n} steps of {entity}.
Stay {n_word} steps away from {entity}.
Stay at least {n} steps away from {entity}.
Never get closer than {n} steps to {entity}.
Keep at least {n_word} steps between you and {entity}.
Remain at least {n} steps from {entity}.
Avoid coming within {n_word} steps of {entity}.
Do not go near {entity} and keep {n} steps of distance.
---
Keep {n} steps away from {entity}.
Stay at least {n_word} steps from {entity}.
Do not come closer than {n} steps to {entity}.
[sequential]
Once you have touched {trigger}, do not step on {forbidden}.
After touching {trigger}, {forbidden} becomes unsafe.
Do not walk on {forbidden} after walking on {trigger}.
After stepping on {trigger}, avoid {forbidden}.
Once you touch {trigger}, you may enter {forbidden} at most {n} times.
Do not enter {forbidden} once you have stepped on {trigger}.
After you walk on {trigger}, stay off {forbidden}.
Touching {trigger} makes {forbidden} unsafe.
Once you have walked on {trigger}, {forbidden} is unsafe.
---
After walking on {trigger}, do not touch {forbidden}.
Once you step on {trigger}, {forbidden} becomes unsafe.
After you touch {trigger}, avoid stepping on {forbidden}.
";
