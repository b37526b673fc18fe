//! Boxed-answer extraction and exact answer equivalence.
//!
//! The reward signal for curation, RL, and evaluation is binary: a response
//! earns 1.0 iff the content of its final `\boxed{...}` is equivalent to the
//! gold answer, and 0.0 in every other case. Comparison is exact: numeric
//! answers compare as arbitrary-precision rationals, everything else falls
//! back to a normalized string match. There is deliberately no epsilon and no
//! symbolic algebra, so `\frac{2}{4}` equals `0.5` but `x(x+1)` does not
//! equal `x^2+x`.
//!
//! All functions here are pure and total; a response that cannot be checked
//! is data (reward 0.0 with a [`FailureReason`]), not an error.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

/// A parsed final answer.
///
/// Rationals are kept in lowest terms with a positive denominator; decimals
/// are a significand/exponent pair (value = significand * 10^exponent) with
/// exponent <= 0 and no trailing zeros in the fractional digits. Symbolic
/// answers are stored fully normalized (wrappers stripped, whitespace
/// removed), so structural equality on `Symbolic` is the equivalence test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerValue {
    Integer(BigInt),
    Rational { num: BigInt, den: BigInt },
    Decimal { significand: BigInt, exponent: i32 },
    Symbolic(String),
}

/// Why a response earned reward 0.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    /// No well-formed `\boxed{...}` anywhere in the response.
    NoBoxedFound,
    /// The boxed content (or the gold answer) failed to parse, which in
    /// this grammar means a fraction with a zero denominator.
    Unparseable,
    /// Both sides parsed but are not equivalent.
    Mismatch,
}

impl FailureReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            FailureReason::NoBoxedFound => "no-boxed-found",
            FailureReason::Unparseable => "unparseable",
            FailureReason::Mismatch => "mismatch",
        }
    }
}

/// Outcome of checking one response against one gold answer.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifierOutcome {
    /// Raw content of the final well-formed `\boxed{...}`, if any.
    pub extracted: Option<String>,
    /// The parsed boxed content, if it parsed.
    pub parsed: Option<AnswerValue>,
    /// Exactly 0.0 or 1.0.
    pub reward: f64,
    /// Present iff reward is 0.0.
    pub failure_reason: Option<FailureReason>,
}

/// Returns the brace-balanced content of the last well-formed `\boxed{...}`
/// in `text`, or `None` if no well-formed occurrence exists.
///
/// Nested braces are matched by depth counting. A trailing `\boxed{` whose
/// braces never balance (a truncated response) does not count as an
/// occurrence.
pub fn extract_boxed(text: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let bytes = text.as_bytes();
    let mut last = None;
    for (start, _) in text.match_indices(MARKER) {
        let open = start + MARKER.len() - 1; // index of the opening '{'
        let mut depth = 1usize;
        let mut i = open + 1;
        while i < bytes.len() && depth > 0 {
            match bytes[i] {
                b'{' => depth += 1,
                b'}' => depth -= 1,
                _ => {}
            }
            if depth == 0 {
                break;
            }
            i += 1;
        }
        if depth == 0 {
            last = Some(text[open + 1..i].to_string());
        }
    }
    last
}

/// Parse failure: the only rejected input is a fraction with denominator 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroDenominator;

/// Parses a raw answer string (boxed content or a gold-answer field).
///
/// Recognized, in order: optional sign; integers; decimals; `\frac{A}{B}`,
/// `\dfrac{A}{B}`, and `A/B` with integer A and B; a percent suffix `X%`
/// with X an integer or decimal (value X/100). Anything else becomes
/// symbolic text after stripping outer braces, `\left`/`\right`, `\,`, `$`,
/// and trailing periods, and removing whitespace.
pub fn parse_answer(raw: &str) -> Result<AnswerValue, ZeroDenominator> {
    let stripped = strip_wrappers(raw);
    let compact: String = stripped.chars().filter(|c| !c.is_whitespace()).collect();

    if is_integer(&compact) {
        return Ok(AnswerValue::Integer(compact.parse().expect("digit-checked")));
    }
    if let Some((sig, exp)) = parse_decimal(&compact) {
        return Ok(canonical_decimal(sig, exp));
    }
    if let Some((num, den)) = parse_latex_frac(&compact) {
        return make_rational(num, den);
    }
    if let Some((num, den)) = parse_slash_frac(&compact) {
        return make_rational(num, den);
    }
    if let Some(body) = compact.strip_suffix('%') {
        if is_integer(body) {
            let num: BigInt = body.parse().expect("digit-checked");
            return make_rational(num, BigInt::from(100));
        }
        if let Some((sig, exp)) = parse_decimal(body) {
            // X/100 where X = sig * 10^exp, exp <= 0 after parsing
            let den = BigInt::from(10).pow(exp.unsigned_abs()) * BigInt::from(100);
            return make_rational(sig, den);
        }
    }
    Ok(AnswerValue::Symbolic(compact))
}

/// Exact equivalence: numeric kinds compare by rational value, symbolic by
/// normalized string, numeric vs symbolic is always false.
pub fn equivalent(a: &AnswerValue, b: &AnswerValue) -> bool {
    match (a.as_rational(), b.as_rational()) {
        (Some((an, ad)), Some((bn, bd))) => an * bd == bn * ad,
        (None, None) => match (a, b) {
            (AnswerValue::Symbolic(x), AnswerValue::Symbolic(y)) => x == y,
            _ => unreachable!("only Symbolic lacks a rational value"),
        },
        _ => false,
    }
}

/// Checks one response against one gold answer.
///
/// reward = 1.0 iff extraction succeeds, both sides parse, and the values are
/// equivalent; otherwise 0.0 with the matching failure reason. Pure,
/// deterministic, and total: an unparseable gold is reported as
/// [`FailureReason::Unparseable`] rather than an error, though dataset
/// loaders are expected to reject such golds up front.
pub fn reward(response: &str, gold: &str) -> VerifierOutcome {
    let Some(extracted) = extract_boxed(response) else {
        return VerifierOutcome {
            extracted: None,
            parsed: None,
            reward: 0.0,
            failure_reason: Some(FailureReason::NoBoxedFound),
        };
    };
    let Ok(parsed) = parse_answer(&extracted) else {
        return VerifierOutcome {
            extracted: Some(extracted),
            parsed: None,
            reward: 0.0,
            failure_reason: Some(FailureReason::Unparseable),
        };
    };
    let Ok(gold_value) = parse_answer(gold) else {
        return VerifierOutcome {
            extracted: Some(extracted),
            parsed: Some(parsed),
            reward: 0.0,
            failure_reason: Some(FailureReason::Unparseable),
        };
    };
    if equivalent(&parsed, &gold_value) {
        VerifierOutcome {
            extracted: Some(extracted),
            parsed: Some(parsed),
            reward: 1.0,
            failure_reason: None,
        }
    } else {
        VerifierOutcome {
            extracted: Some(extracted),
            parsed: Some(parsed),
            reward: 0.0,
            failure_reason: Some(FailureReason::Mismatch),
        }
    }
}

impl AnswerValue {
    /// The value as an exact rational (num, den), or `None` for symbolic text.
    pub fn as_rational(&self) -> Option<(BigInt, BigInt)> {
        match self {
            AnswerValue::Integer(n) => Some((n.clone(), BigInt::one())),
            AnswerValue::Rational { num, den } => Some((num.clone(), den.clone())),
            AnswerValue::Decimal { significand, exponent } => {
                debug_assert!(*exponent <= 0);
                Some((significand.clone(), BigInt::from(10).pow(exponent.unsigned_abs())))
            }
            AnswerValue::Symbolic(_) => None,
        }
    }

    /// Canonical rendering. Parsing the rendering yields a structurally equal
    /// `AnswerValue` (round-trip stability).
    pub fn render(&self) -> String {
        match self {
            AnswerValue::Integer(n) => n.to_string(),
            AnswerValue::Rational { num, den } => format!("{num}/{den}"),
            AnswerValue::Decimal { significand, exponent } => {
                if *exponent == 0 {
                    format!("{significand}.0")
                } else {
                    let digits = significand.abs().to_string();
                    let frac_len = exponent.unsigned_abs() as usize;
                    let padded = if digits.len() <= frac_len {
                        format!("{}{digits}", "0".repeat(frac_len + 1 - digits.len()))
                    } else {
                        digits
                    };
                    let split = padded.len() - frac_len;
                    let sign = if significand.is_negative() { "-" } else { "" };
                    format!("{sign}{}.{}", &padded[..split], &padded[split..])
                }
            }
            AnswerValue::Symbolic(s) => s.clone(),
        }
    }
}

fn make_rational(num: BigInt, den: BigInt) -> Result<AnswerValue, ZeroDenominator> {
    if den.is_zero() {
        return Err(ZeroDenominator);
    }
    let (num, den) = if den.is_negative() { (-num, -den) } else { (num, den) };
    let g = num.gcd(&den);
    Ok(AnswerValue::Rational { num: num / &g, den: den / g })
}

fn is_integer(s: &str) -> bool {
    let body = s.strip_prefix(['+', '-']).unwrap_or(s);
    !body.is_empty() && body.bytes().all(|b| b.is_ascii_digit())
}

/// `[+-]? (digits '.' digits? | '.' digits)` with at least one digit overall.
/// Returns the raw (significand, exponent) before canonicalization.
fn parse_decimal(s: &str) -> Option<(BigInt, i32)> {
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int_part, frac_part) = body.split_once('.')?;
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if frac_part.len() > 4096 {
        return None; // implausible as a numeric answer; fall through to symbolic
    }
    let digits = format!("{int_part}{frac_part}");
    let sig: BigInt = if digits.is_empty() { BigInt::zero() } else { digits.parse().ok()? };
    Some((sig * sign, -(frac_part.len() as i32)))
}

fn canonical_decimal(mut sig: BigInt, mut exp: i32) -> AnswerValue {
    let ten = BigInt::from(10);
    if sig.is_zero() {
        return AnswerValue::Decimal { significand: sig, exponent: 0 };
    }
    while exp < 0 && (&sig % &ten).is_zero() {
        sig /= &ten;
        exp += 1;
    }
    AnswerValue::Decimal { significand: sig, exponent: exp }
}

/// `[+-]? \frac{A}{B}` or `\dfrac{A}{B}` with integer A, B.
fn parse_latex_frac(s: &str) -> Option<(BigInt, BigInt)> {
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, s.strip_prefix('+').unwrap_or(s)),
    };
    let args = body
        .strip_prefix("\\frac")
        .or_else(|| body.strip_prefix("\\dfrac"))?;
    let rest = args.strip_prefix('{')?;
    let close = rest.find('}')?;
    let a = &rest[..close];
    let rest = rest[close + 1..].strip_prefix('{')?;
    let close = rest.find('}')?;
    let b = &rest[..close];
    if !rest[close + 1..].is_empty() || !is_integer(a) || !is_integer(b) {
        return None;
    }
    let num: BigInt = a.parse().ok()?;
    let den: BigInt = b.parse().ok()?;
    Some((num * sign, den))
}

/// `A/B` with integer A, B.
fn parse_slash_frac(s: &str) -> Option<(BigInt, BigInt)> {
    let (a, b) = s.split_once('/')?;
    if !is_integer(a) || !is_integer(b) {
        return None;
    }
    Some((a.parse().ok()?, b.parse().ok()?))
}

/// Strips `$`, `\left`, `\right`, `\,`, outer matched brace pairs, and
/// trailing periods; trims the ends. Internal whitespace is left for the
/// caller to remove.
fn strip_wrappers(raw: &str) -> String {
    let mut s: String = raw.replace('$', "");
    for pat in ["\\left", "\\right", "\\,"] {
        s = s.replace(pat, "");
    }
    let mut s = s.trim();
    loop {
        let t = s.trim();
        let stripped = strip_outer_braces(t);
        let stripped = stripped.trim_end_matches('.');
        if stripped == s {
            break;
        }
        s = stripped;
    }
    s.trim().to_string()
}

/// Removes one outer `{...}` pair when the opening brace at position 0
/// matches the closing brace at the end (depth counting).
fn strip_outer_braces(s: &str) -> &str {
    let bytes = s.as_bytes();
    if bytes.len() < 2 || bytes[0] != b'{' || bytes[bytes.len() - 1] != b'}' {
        return s;
    }
    let mut depth = 0usize;
    for (i, &b) in bytes.iter().enumerate() {
        match b {
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return if i == bytes.len() - 1 { &s[1..bytes.len() - 1] } else { s };
                }
            }
            _ => {}
        }
    }
    s
}
