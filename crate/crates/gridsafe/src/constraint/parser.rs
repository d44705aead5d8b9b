//! Parser for the textual constraint expression form.
//!
//! Grammar (keywords case-insensitive, whitespace ignored between tokens):
//!
//! ```text
//! expr     := budget | relation | sequence
//! budget   := "budget"   "(" "entity" "=" entity "," "max" "=" int ")"
//! relation := "relation" "(" "entity" "=" entity "," "distance" "=" int
//!                            [ "," "max" "=" int ] ")"
//! sequence := "sequence" "(" "trigger" "=" entity "," "forbidden" "=" entity
//!                            [ "," "max" "=" int ] ")"
//! entity   := "lava" | "water" | "grass"
//! ```

use thiserror::Error;

use crate::grid::EntityKind;
use crate::constraint::{ConstraintSpec, MAX_THRESHOLD};

/// Parse failure with the byte offset where it was detected.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

/// Parses a constraint expression such as `budget(entity=lava, max=5)`.
pub fn parse_dsl(input: &str) -> Result<ConstraintSpec, ParseError> {
    let mut p = Parser { input, pos: 0 };
    let spec = p.parse_expr()?;
    p.skip_ws();
    if p.pos < p.input.len() {
        return Err(p.error("unexpected trailing input"));
    }
    spec.validate().map_err(|e| ParseError {
        offset: 0,
        message: e.to_string(),
    })?;
    Ok(spec)
}

struct Parser<'a> {
    input: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn error(&self, message: impl Into<String>) -> ParseError {
        ParseError {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        let bytes = self.input.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect_char(&mut self, c: char) -> Result<(), ParseError> {
        self.skip_ws();
        let bytes = self.input.as_bytes();
        if self.pos < bytes.len() && bytes[self.pos] == c as u8 {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{c}'")))
        }
    }

    /// Reads an identifier (ASCII letters) and returns it lowercased.
    fn read_ident(&mut self) -> Result<(usize, String), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.input.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error("expected an identifier"));
        }
        Ok((start, self.input[start..self.pos].to_ascii_lowercase()))
    }

    fn read_int(&mut self) -> Result<(usize, u32), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.input.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error("expected an integer"));
        }
        self.input[start..self.pos]
            .parse::<u32>()
            .map(|v| (start, v))
            .map_err(|_| ParseError {
                offset: start,
                message: "integer out of range".into(),
            })
    }

    /// Reads `key = <ident>` with the given key keyword.
    fn read_keyed_ident(&mut self, key: &str) -> Result<(usize, String), ParseError> {
        let (off, ident) = self.read_ident()?;
        if ident != key {
            return Err(ParseError {
                offset: off,
                message: format!("expected '{key}'"),
            });
        }
        self.expect_char('=')?;
        self.read_ident()
    }

    fn read_keyed_int(&mut self, key: &str) -> Result<(usize, u32), ParseError> {
        let (off, ident) = self.read_ident()?;
        if ident != key {
            return Err(ParseError {
                offset: off,
                message: format!("expected '{key}'"),
            });
        }
        self.expect_char('=')?;
        self.read_int()
    }

    fn cost_entity(&self, offset: usize, name: &str) -> Result<EntityKind, ParseError> {
        let kind = match name {
            "lava" => EntityKind::Lava,
            "water" => EntityKind::Water,
            "grass" => EntityKind::Grass,
            _ => {
                return Err(ParseError {
                    offset,
                    message: format!("'{name}' is not a cost entity (expected lava, water, or grass)"),
                })
            }
        };
        Ok(kind)
    }

    fn checked_threshold(&self, offset: usize, value: u32) -> Result<u32, ParseError> {
        if value > MAX_THRESHOLD {
            return Err(ParseError {
                offset,
                message: format!("max {value} exceeds the limit of {MAX_THRESHOLD}"),
            });
        }
        Ok(value)
    }

    /// Parses an optional `, max = int` just before the closing paren.
    fn read_optional_max(&mut self) -> Result<u32, ParseError> {
        self.skip_ws();
        if self.pos < self.input.len() && self.input.as_bytes()[self.pos] == b',' {
            self.pos += 1;
            let (off, value) = self.read_keyed_int("max")?;
            self.checked_threshold(off, value)
        } else {
            Ok(0)
        }
    }

    fn parse_expr(&mut self) -> Result<ConstraintSpec, ParseError> {
        let (off, head) = self.read_ident()?;
        match head.as_str() {
            "budget" => {
                self.expect_char('(')?;
                let (eoff, entity) = self.read_keyed_ident("entity")?;
                let entity = self.cost_entity(eoff, &entity)?;
                self.expect_char(',')?;
                let (moff, max) = self.read_keyed_int("max")?;
                let threshold = self.checked_threshold(moff, max)?;
                self.expect_char(')')?;
                Ok(ConstraintSpec::Budgetary { entity, threshold })
            }
            "relation" => {
                self.expect_char('(')?;
                let (eoff, entity) = self.read_keyed_ident("entity")?;
                let entity = self.cost_entity(eoff, &entity)?;
                self.expect_char(',')?;
                let (doff, distance) = self.read_keyed_int("distance")?;
                if distance == 0 {
                    return Err(ParseError {
                        offset: doff,
                        message: "distance must be at least 1".into(),
                    });
                }
                let threshold = self.read_optional_max()?;
                self.expect_char(')')?;
                Ok(ConstraintSpec::Relational {
                    entity,
                    distance,
                    threshold,
                })
            }
            "sequence" => {
                self.expect_char('(')?;
                let (toff, trigger) = self.read_keyed_ident("trigger")?;
                let trigger = self.cost_entity(toff, &trigger)?;
                self.expect_char(',')?;
                let (foff, forbidden) = self.read_keyed_ident("forbidden")?;
                let forbidden = self.cost_entity(foff, &forbidden)?;
                let threshold = self.read_optional_max()?;
                self.expect_char(')')?;
                Ok(ConstraintSpec::Sequential {
                    trigger,
                    forbidden,
                    threshold,
                })
            }
            _ => Err(ParseError {
                offset: off,
                message: format!("unknown constraint form '{head}' (expected budget, relation, or sequence)"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_three_forms() {
        assert_eq!(
            parse_dsl("budget(entity=lava, max=5)").unwrap(),
            ConstraintSpec::Budgetary {
                entity: EntityKind::Lava,
                threshold: 5
            }
        );
        assert_eq!(
            parse_dsl("relation(entity=water, distance=2)").unwrap(),
            ConstraintSpec::Relational {
                entity: EntityKind::Water,
                distance: 2,
                threshold: 0
            }
        );
        assert_eq!(
            parse_dsl("relation(entity=water, distance=2, max=3)").unwrap(),
            ConstraintSpec::Relational {
                entity: EntityKind::Water,
                distance: 2,
                threshold: 3
            }
        );
        assert_eq!(
            parse_dsl("sequence(trigger=grass, forbidden=water)").unwrap(),
            ConstraintSpec::Sequential {
                trigger: EntityKind::Grass,
                forbidden: EntityKind::Water,
                threshold: 0
            }
        );
    }

    #[test]
    fn whitespace_and_case_are_ignored() {
        assert_eq!(
            parse_dsl("  BUDGET ( Entity = LAVA ,  Max = 3 )  ").unwrap(),
            ConstraintSpec::Budgetary {
                entity: EntityKind::Lava,
                threshold: 3
            }
        );
    }

    #[test]
    fn round_trips_canonical_form() {
        let mut pool = ConstraintSpec::default_pool();
        pool.push(ConstraintSpec::Relational {
            entity: EntityKind::Grass,
            distance: 4,
            threshold: 5,
        });
        pool.push(ConstraintSpec::Sequential {
            trigger: EntityKind::Water,
            forbidden: EntityKind::Lava,
            threshold: 4,
        });
        for spec in pool {
            assert_eq!(parse_dsl(&spec.to_dsl()).unwrap(), spec, "{spec}");
        }
    }

    #[test]
    fn reports_byte_offsets() {
        // Non-cost entity: offset of "ball".
        let err = parse_dsl("budget(entity=ball, max=1)").unwrap_err();
        assert_eq!(err.offset, 14);
        assert!(err.message.contains("not a cost entity"), "{err}");

        // Missing comma before max.
        let err = parse_dsl("budget(entity=lava max=5)").unwrap_err();
        assert_eq!(err.offset, 19);
        assert!(err.message.contains("','"), "{err}");

        // Threshold over the limit: offset of the digit.
        let err = parse_dsl("budget(entity=lava, max=7)").unwrap_err();
        assert_eq!(err.offset, 24);
        assert!(err.message.contains("exceeds"), "{err}");

        // Zero relational distance.
        let err = parse_dsl("relation(entity=lava, distance=0)").unwrap_err();
        assert_eq!(err.offset, 31);

        // Missing distance argument entirely.
        let err = parse_dsl("relation(entity=lava)").unwrap_err();
        assert_eq!(err.offset, 20);

        // Trailing garbage.
        let err = parse_dsl("budget(entity=lava, max=2) extra").unwrap_err();
        assert_eq!(err.offset, 27);
        assert!(err.message.contains("trailing"), "{err}");

        // Empty input.
        let err = parse_dsl("").unwrap_err();
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn unknown_head_is_rejected() {
        let err = parse_dsl("forbid(entity=lava, max=1)").unwrap_err();
        assert_eq!(err.offset, 0);
        assert!(err.message.contains("unknown constraint form"), "{err}");
    }
}
