//! Content filter expressions over flat field/value records.
//!
//! Grammar (whitespace-insensitive, keywords uppercase and case-sensitive):
//!
//! ```text
//! expr    := or
//! or      := and ("OR" and)*
//! and     := not ("AND" not)*
//! not     := "NOT" not | primary
//! primary := "(" expr ")" | fieldpath op literal
//! op      := "=" | "<>" | "<" | "<=" | ">" | ">="
//! literal := integer | decimal | single-quoted string
//! ```
//!
//! Evaluation is strict two-valued logic: both operands of AND/OR are
//! inspected, a referenced field that is absent from the record is an error
//! rather than "false", and ordering comparisons on strings are errors.
//! Integer operands promote to decimal when compared against decimals.

mod lex;
mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// A field value: one of the three kinds a topic schema can declare.
#[derive(Clone, Debug, PartialEq, PartialOrd)]
pub enum Value {
    Int(i64),
    Dec(f64),
    Str(String),
}

impl Value {
    pub fn kind(&self) -> &'static str {
        match self {
            Value::Int(_) => "integer",
            Value::Dec(_) => "decimal",
            Value::Str(_) => "string",
        }
    }

    fn num(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Dec(d) => Some(*d),
            Value::Str(_) => None,
        }
    }

    /// Equality with integer-to-decimal promotion; mismatched kinds compare
    /// unequal instead of erroring. Used by packet keyword matching.
    pub fn loose_eq(&self, other: &Value) -> bool {
        match (self.num(), other.num()) {
            (Some(a), Some(b)) => a == b,
            _ => match (self, other) {
                (Value::Str(a), Value::Str(b)) => a == b,
                _ => false,
            },
        }
    }
}

impl Serialize for Value {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Value::Int(i) => s.serialize_i64(*i),
            Value::Dec(d) => s.serialize_f64(*d),
            Value::Str(v) => s.serialize_str(v),
        }
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Value::Int(i))
                } else if let Some(f) = n.as_f64() {
                    Ok(Value::Dec(f))
                } else {
                    Err(D::Error::custom("number out of range"))
                }
            }
            serde_json::Value::String(s) => Ok(Value::Str(s)),
            other => Err(D::Error::custom(format!(
                "expected integer, decimal or string, got {other}"
            ))),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Dec(d) => write!(f, "{}", fmt_dec(*d)),
            Value::Str(s) => write!(f, "'{s}'"),
        }
    }
}

/// Always prints a decimal point so the literal re-parses as a decimal.
fn fmt_dec(d: f64) -> String {
    if d.is_finite() && d.fract() == 0.0 {
        format!("{d:.1}")
    } else {
        format!("{d}")
    }
}

/// Dot-separated path into a record, e.g. `engine.rpm`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldPath(Vec<String>);

impl FieldPath {
    pub fn new(segments: Vec<String>) -> Self {
        FieldPath(segments)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        if text.is_empty() {
            return Err("empty field path".into());
        }
        let mut segments = Vec::new();
        for seg in text.split('.') {
            let mut chars = seg.chars();
            let ok = match chars.next() {
                Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
                }
                _ => false,
            };
            if !ok {
                return Err(format!("invalid field path segment `{seg}`"));
            }
            segments.push(seg.to_string());
        }
        Ok(FieldPath(segments))
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join("."))
    }
}

impl Serialize for FieldPath {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FieldPath {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FieldPath::parse(&s).map_err(D::Error::custom)
    }
}

/// A flat record: field path to value. BTreeMap keeps field order
/// deterministic (lexicographic by path) wherever records are serialized.
pub type FieldMap = BTreeMap<FieldPath, Value>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn as_str(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Cmp {
        field: FieldPath,
        op: CmpOp,
        literal: Value,
    },
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
}

#[derive(Clone, Debug, Error, PartialEq)]
pub struct ParseError {
    pub offset: usize,
    pub expected: Vec<&'static str>,
    pub found: Option<String>,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "parse error at byte {}: expected {}",
            self.offset,
            self.expected.join(" or ")
        )?;
        if let Some(found) = &self.found {
            write!(f, ", found {found}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("field `{0}` is missing from the record")]
    MissingField(FieldPath),
    #[error("cannot apply `{op}` to {value_kind} field `{field}` and {literal_kind} literal")]
    TypeMismatch {
        field: FieldPath,
        op: &'static str,
        value_kind: &'static str,
        literal_kind: &'static str,
    },
}

/// A parsed filter. Keeps the original source text for display and
/// serialization; equality is structural over the parse tree.
#[derive(Clone, Debug)]
pub struct FilterExpression {
    root: Expr,
    source: String,
}

impl PartialEq for FilterExpression {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl FilterExpression {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let root = parse::parse_expr(text)?;
        Ok(FilterExpression {
            root,
            source: text.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    /// Evaluates against a record. Strict: every referenced operand is
    /// inspected, so errors surface even when the other side of an AND/OR
    /// would already decide the result.
    pub fn evaluate(&self, fields: &FieldMap) -> Result<bool, EvalError> {
        eval(&self.root, fields)
    }

    /// Every field path the expression mentions, deduplicated and ordered.
    pub fn referenced_fields(&self) -> BTreeSet<FieldPath> {
        let mut out = BTreeSet::new();
        collect_fields(&self.root, &mut out);
        out
    }

    /// Fully parenthesized form; re-parsing it yields a structurally equal
    /// tree.
    pub fn print_canonical(&self) -> String {
        print(&self.root)
    }
}

impl fmt::Display for FilterExpression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.source)
    }
}

impl Serialize for FilterExpression {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for FilterExpression {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        FilterExpression::parse(&s).map_err(D::Error::custom)
    }
}

fn eval(expr: &Expr, fields: &FieldMap) -> Result<bool, EvalError> {
    match expr {
        Expr::Cmp { field, op, literal } => {
            let value = fields
                .get(field)
                .ok_or_else(|| EvalError::MissingField(field.clone()))?;
            compare(field, *op, value, literal)
        }
        Expr::And(a, b) => {
            let (ra, rb) = (eval(a, fields)?, eval(b, fields)?);
            Ok(ra && rb)
        }
        Expr::Or(a, b) => {
            let (ra, rb) = (eval(a, fields)?, eval(b, fields)?);
            Ok(ra || rb)
        }
        Expr::Not(inner) => Ok(!eval(inner, fields)?),
    }
}

fn compare(
    field: &FieldPath,
    op: CmpOp,
    value: &Value,
    literal: &Value,
) -> Result<bool, EvalError> {
    let mismatch = || EvalError::TypeMismatch {
        field: field.clone(),
        op: op.as_str(),
        value_kind: value.kind(),
        literal_kind: literal.kind(),
    };
    match (value.num(), literal.num()) {
        (Some(a), Some(b)) => Ok(match op {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }),
        _ => match (value, literal) {
            (Value::Str(a), Value::Str(b)) => match op {
                CmpOp::Eq => Ok(a == b),
                CmpOp::Ne => Ok(a != b),
                // Ordering on strings is deliberately unsupported.
                _ => Err(mismatch()),
            },
            _ => Err(mismatch()),
        },
    }
}

fn collect_fields(expr: &Expr, out: &mut BTreeSet<FieldPath>) {
    match expr {
        Expr::Cmp { field, .. } => {
            out.insert(field.clone());
        }
        Expr::And(a, b) | Expr::Or(a, b) => {
            collect_fields(a, out);
            collect_fields(b, out);
        }
        Expr::Not(inner) => collect_fields(inner, out),
    }
}

fn print(expr: &Expr) -> String {
    match expr {
        Expr::Cmp { field, op, literal } => format!("({field} {} {literal})", op.as_str()),
        Expr::And(a, b) => format!("({} AND {})", print(a), print(b)),
        Expr::Or(a, b) => format!("({} OR {})", print(a), print(b)),
        Expr::Not(inner) => format!("(NOT {})", print(inner)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fields(pairs: &[(&str, Value)]) -> FieldMap {
        pairs
            .iter()
            .map(|(k, v)| (FieldPath::parse(k).unwrap(), v.clone()))
            .collect()
    }

    #[test]
    fn parses_simple_comparison() {
        let f = FilterExpression::parse("temperature > 70").unwrap();
        assert_eq!(f.print_canonical(), "(temperature > 70)");
    }

    #[test]
    fn parses_nested_expression() {
        let f = FilterExpression::parse("status = 'on' AND (speed >= 10.5 OR speed < 2)").unwrap();
        assert_eq!(
            f.print_canonical(),
            "((status = 'on') AND ((speed >= 10.5) OR (speed < 2)))"
        );
    }

    #[test]
    fn not_binds_tighter_than_and_than_or() {
        let f = FilterExpression::parse("a = 1 OR b = 2 AND NOT c = 3").unwrap();
        assert_eq!(
            f.print_canonical(),
            "((a = 1) OR ((b = 2) AND (NOT (c = 3))))"
        );
    }

    #[test]
    fn and_chain_associates_left() {
        let f = FilterExpression::parse("a = 1 AND b = 2 AND c = 3").unwrap();
        assert_eq!(f.print_canonical(), "(((a = 1) AND (b = 2)) AND (c = 3))");
    }

    #[test]
    fn missing_literal_reports_offset_and_expected_set() {
        let err = FilterExpression::parse("temperature >").unwrap_err();
        assert_eq!(err.offset, "temperature >".len());
        assert!(err.expected.contains(&"integer literal"));
        assert!(err.expected.contains(&"decimal literal"));
        assert!(err.expected.contains(&"string literal"));
        assert!(err.found.is_none());
    }

    #[test]
    fn lowercase_keywords_are_identifiers() {
        let err = FilterExpression::parse("a = 1 and b = 2").unwrap_err();
        assert_eq!(err.offset, 6);
        assert!(err.expected.contains(&"`AND`"));
    }

    #[test]
    fn empty_input_is_an_error_at_offset_zero() {
        let err = FilterExpression::parse("").unwrap_err();
        assert_eq!(err.offset, 0);
    }

    #[test]
    fn unterminated_string_is_an_error() {
        let err = FilterExpression::parse("status = 'on").unwrap_err();
        assert_eq!(err.offset, 9);
    }

    #[test]
    fn unbalanced_paren_is_an_error() {
        let err = FilterExpression::parse("(a = 1 OR b = 2").unwrap_err();
        assert_eq!(err.offset, 15);
        assert!(err.expected.contains(&"`)`"));
    }

    #[test]
    fn evaluates_numeric_comparison() {
        let f = FilterExpression::parse("temperature > 70").unwrap();
        assert!(f
            .evaluate(&fields(&[("temperature", Value::Int(72))]))
            .unwrap());
        assert!(!f
            .evaluate(&fields(&[("temperature", Value::Int(70))]))
            .unwrap());
    }

    #[test]
    fn missing_field_is_an_error_not_false() {
        let f = FilterExpression::parse("temperature > 70").unwrap();
        let err = f
            .evaluate(&fields(&[("pressure", Value::Int(3))]))
            .unwrap_err();
        assert_eq!(
            err,
            EvalError::MissingField(FieldPath::parse("temperature").unwrap())
        );
    }

    #[test]
    fn strict_or_still_surfaces_missing_field() {
        let f = FilterExpression::parse("a = 1 OR b = 2").unwrap();
        let err = f.evaluate(&fields(&[("a", Value::Int(1))])).unwrap_err();
        assert!(matches!(err, EvalError::MissingField(_)));
    }

    #[test]
    fn integer_promotes_to_decimal() {
        let f = FilterExpression::parse("speed > 10").unwrap();
        assert!(f.evaluate(&fields(&[("speed", Value::Dec(10.5))])).unwrap());
        let g = FilterExpression::parse("speed >= 50.0").unwrap();
        assert!(g.evaluate(&fields(&[("speed", Value::Int(50))])).unwrap());
    }

    #[test]
    fn string_equality_works_and_ordering_is_rejected() {
        let eq = FilterExpression::parse("status = 'on'").unwrap();
        assert!(eq
            .evaluate(&fields(&[("status", Value::Str("on".into()))]))
            .unwrap());
        let ne = FilterExpression::parse("status <> 'off'").unwrap();
        assert!(ne
            .evaluate(&fields(&[("status", Value::Str("on".into()))]))
            .unwrap());
        let lt = FilterExpression::parse("status < 'z'").unwrap();
        let err = lt
            .evaluate(&fields(&[("status", Value::Str("on".into()))]))
            .unwrap_err();
        assert!(matches!(err, EvalError::TypeMismatch { .. }));
    }

    #[test]
    fn comparing_string_field_to_integer_is_a_type_mismatch() {
        let f = FilterExpression::parse("status = 3").unwrap();
        let err = f
            .evaluate(&fields(&[("status", Value::Str("on".into()))]))
            .unwrap_err();
        assert!(matches!(err, EvalError::TypeMismatch { .. }));
    }

    #[test]
    fn referenced_fields_deduplicates() {
        let f = FilterExpression::parse("a.b = 1 OR (c > 2 AND a.b < 5)").unwrap();
        let got: Vec<String> = f
            .referenced_fields()
            .iter()
            .map(|p| p.to_string())
            .collect();
        assert_eq!(got, vec!["a.b".to_string(), "c".to_string()]);
    }

    #[test]
    fn canonical_decimal_keeps_its_point() {
        let f = FilterExpression::parse("x = 50.0").unwrap();
        assert_eq!(f.print_canonical(), "(x = 50.0)");
        let re = FilterExpression::parse(&f.print_canonical()).unwrap();
        assert_eq!(re, f);
    }

    #[test]
    fn negative_literals_round_trip() {
        let f = FilterExpression::parse("x >= -3").unwrap();
        assert!(f.evaluate(&fields(&[("x", Value::Int(-2))])).unwrap());
        let re = FilterExpression::parse(&f.print_canonical()).unwrap();
        assert_eq!(re, f);
    }

    #[test]
    fn loose_eq_promotes_and_never_errors() {
        assert!(Value::Int(5).loose_eq(&Value::Dec(5.0)));
        assert!(Value::Str("a".into()).loose_eq(&Value::Str("a".into())));
        assert!(!Value::Str("5".into()).loose_eq(&Value::Int(5)));
    }

    // Randomized structural round-trip: print canonically, re-parse, compare
    // trees. Printing the re-parse must also be a fixed point.
    #[test]
    fn canonical_print_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..300 {
            let expr = gen_expr(&mut rng, 0);
            let filter = FilterExpression {
                root: expr,
                source: String::new(),
            };
            let printed = filter.print_canonical();
            let reparsed = FilterExpression::parse(&printed)
                .unwrap_or_else(|e| panic!("reparse of `{printed}` failed: {e}"));
            assert_eq!(reparsed, filter, "round trip changed `{printed}`");
            assert_eq!(reparsed.print_canonical(), printed);
        }
    }

    fn gen_expr(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
        let leaf = depth >= 4 || rng.gen_range(0..10) < 4;
        if leaf {
            let field = ["a", "b", "x.y", "sensor.temp"][rng.gen_range(0..4)];
            let op = [
                CmpOp::Eq,
                CmpOp::Ne,
                CmpOp::Lt,
                CmpOp::Le,
                CmpOp::Gt,
                CmpOp::Ge,
            ][rng.gen_range(0..6)];
            let literal = match rng.gen_range(0..3) {
                0 => Value::Int(rng.gen_range(-50..50)),
                1 => Value::Dec(rng.gen_range(-40..40) as f64 * 0.5),
                _ => Value::Str(["on", "off", "alert"][rng.gen_range(0..3)].to_string()),
            };
            Expr::Cmp {
                field: FieldPath::parse(field).unwrap(),
                op,
                literal,
            }
        } else {
            match rng.gen_range(0..3) {
                0 => Expr::And(
                    Box::new(gen_expr(rng, depth + 1)),
                    Box::new(gen_expr(rng, depth + 1)),
                ),
                1 => Expr::Or(
                    Box::new(gen_expr(rng, depth + 1)),
                    Box::new(gen_expr(rng, depth + 1)),
                ),
                _ => Expr::Not(Box::new(gen_expr(rng, depth + 1))),
            }
        }
    }

    // Randomized truth-table check against a naive reference evaluator over
    // three integer fields taking values 0/1.
    #[test]
    fn matches_reference_evaluator_on_boolean_records() {
        fn reference(expr: &Expr, m: &FieldMap) -> bool {
            match expr {
                Expr::Cmp { field, op, literal } => {
                    let v = match m.get(field).unwrap() {
                        Value::Int(i) => *i,
                        _ => unreachable!(),
                    };
                    let l = match literal {
                        Value::Int(i) => *i,
                        _ => unreachable!(),
                    };
                    match op {
                        CmpOp::Eq => v == l,
                        CmpOp::Ne => v != l,
                        CmpOp::Lt => v < l,
                        CmpOp::Le => v <= l,
                        CmpOp::Gt => v > l,
                        CmpOp::Ge => v >= l,
                    }
                }
                Expr::And(a, b) => reference(a, m) && reference(b, m),
                Expr::Or(a, b) => reference(a, m) || reference(b, m),
                Expr::Not(i) => !reference(i, m),
            }
        }

        fn gen_bool_expr(rng: &mut ChaCha8Rng, depth: u32) -> Expr {
            if depth >= 3 || rng.gen_range(0..10) < 4 {
                Expr::Cmp {
                    field: FieldPath::parse(["a", "b", "c"][rng.gen_range(0..3)]).unwrap(),
                    op: [
                        CmpOp::Eq,
                        CmpOp::Ne,
                        CmpOp::Lt,
                        CmpOp::Le,
                        CmpOp::Gt,
                        CmpOp::Ge,
                    ][rng.gen_range(0..6)],
                    literal: Value::Int(rng.gen_range(0..2)),
                }
            } else {
                match rng.gen_range(0..3) {
                    0 => Expr::And(
                        Box::new(gen_bool_expr(rng, depth + 1)),
                        Box::new(gen_bool_expr(rng, depth + 1)),
                    ),
                    1 => Expr::Or(
                        Box::new(gen_bool_expr(rng, depth + 1)),
                        Box::new(gen_bool_expr(rng, depth + 1)),
                    ),
                    _ => Expr::Not(Box::new(gen_bool_expr(rng, depth + 1))),
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0xb007);
        for _ in 0..200 {
            let expr = gen_bool_expr(&mut rng, 0);
            let filter = FilterExpression {
                root: expr.clone(),
                source: String::new(),
            };
            for bits in 0..8u8 {
                let m = fields(&[
                    ("a", Value::Int((bits & 1) as i64)),
                    ("b", Value::Int(((bits >> 1) & 1) as i64)),
                    ("c", Value::Int(((bits >> 2) & 1) as i64)),
                ]);
                assert_eq!(filter.evaluate(&m).unwrap(), reference(&expr, &m));
            }
        }
    }

    // A threshold filter selects exactly the values above the threshold.
    #[test]
    fn threshold_filter_is_monotone() {
        for threshold in [0i64, 33, 50, 99] {
            let f = FilterExpression::parse(&format!("t > {threshold}")).unwrap();
            for v in 0..=100 {
                let got = f.evaluate(&fields(&[("t", Value::Int(v))])).unwrap();
                assert_eq!(got, v > threshold);
            }
        }
    }

    #[test]
    fn serde_round_trips_source_text() {
        let f = FilterExpression::parse("a = 1 OR b = 2").unwrap();
        let json = serde_json::to_string(&f).unwrap();
        assert_eq!(json, "\"a = 1 OR b = 2\"");
        let back: FilterExpression = serde_json::from_str(&json).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn value_serde_distinguishes_int_and_decimal() {
        let i: Value = serde_json::from_str("5").unwrap();
        let d: Value = serde_json::from_str("5.0").unwrap();
        assert_eq!(i, Value::Int(5));
        assert_eq!(d, Value::Dec(5.0));
        assert_eq!(serde_json::to_string(&Value::Dec(5.0)).unwrap(), "5.0");
        assert_eq!(serde_json::to_string(&Value::Int(5)).unwrap(), "5");
    }
}
