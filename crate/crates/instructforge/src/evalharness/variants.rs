//! Accepted writing variants for reference dates and numbers.
//!
//! Reference facts arrive in the constrained generation formats (dates as
//! DD/MM/YYYY, MM/YYYY or YYYY; numbers as plain integers or decimals) and
//! fan out into the spellings accepted by the matchers. Every variant is
//! normalized through [`super::normalize_text`] before use.

use std::collections::BTreeSet;

use super::{normalize_text, EvalError};

/// A parsed reference date. Granularity is day, month or year, depending on
/// which fields the reference carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefDate {
    pub day: Option<u32>,
    pub month: Option<u32>,
    pub year: u32,
}

const MONTH_NAMES: [&str; 12] = [
    "janvier",
    "février",
    "mars",
    "avril",
    "mai",
    "juin",
    "juillet",
    "août",
    "septembre",
    "octobre",
    "novembre",
    "décembre",
];

const MONTH_ABBREVIATIONS: [&str; 12] = [
    "janv", "févr", "mars", "avr", "mai", "juin", "juil", "août", "sept", "oct", "nov", "déc",
];

/// Parse "DD/MM/YYYY", "MM/YYYY" or "YYYY".
pub fn parse_date(s: &str) -> Result<RefDate, EvalError> {
    let fail = || EvalError::UnparseableDate(s.to_string());
    let parts: Vec<&str> = s.trim().split('/').collect();
    let num = |p: &str, max: u32| -> Result<u32, EvalError> {
        if p.is_empty() || p.len() > 4 || !p.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail());
        }
        let v: u32 = p.parse().map_err(|_| fail())?;
        if v == 0 || v > max {
            return Err(fail());
        }
        Ok(v)
    };
    match parts.as_slice() {
        [y] => Ok(RefDate {
            day: None,
            month: None,
            year: num(y, 9999)?,
        }),
        [m, y] => Ok(RefDate {
            day: None,
            month: Some(num(m, 12)?),
            year: num(y, 9999)?,
        }),
        [d, m, y] => Ok(RefDate {
            day: Some(num(d, 31)?),
            month: Some(num(m, 12)?),
            year: num(y, 9999)?,
        }),
        _ => Err(fail()),
    }
}

/// All accepted spellings of a reference date, normalized: numeric forms with
/// and without zero padding over slash and hyphen separators, French month
/// names and abbreviations, "1er" for the first of the month, and the year
/// alone.
pub fn date_variants(s: &str) -> Result<BTreeSet<String>, EvalError> {
    let date = parse_date(s)?;
    let mut raw: Vec<String> = Vec::new();
    let year = date.year;

    match (date.day, date.month) {
        (Some(day), Some(month)) => {
            for sep in ['/', '-'] {
                raw.push(format!("{day:02}{sep}{month:02}{sep}{year}"));
                raw.push(format!("{day}{sep}{month}{sep}{year}"));
            }
            let name = MONTH_NAMES[(month - 1) as usize];
            let abbr = MONTH_ABBREVIATIONS[(month - 1) as usize];
            for month_text in [name, abbr] {
                raw.push(format!("{day} {month_text} {year}"));
                raw.push(format!("{day:02} {month_text} {year}"));
                if day == 1 {
                    raw.push(format!("1er {month_text} {year}"));
                }
            }
            raw.push(year.to_string());
        }
        (None, Some(month)) => {
            for sep in ['/', '-'] {
                raw.push(format!("{month:02}{sep}{year}"));
                raw.push(format!("{month}{sep}{year}"));
            }
            let name = MONTH_NAMES[(month - 1) as usize];
            let abbr = MONTH_ABBREVIATIONS[(month - 1) as usize];
            raw.push(format!("{name} {year}"));
            raw.push(format!("{abbr} {year}"));
            raw.push(year.to_string());
        }
        (None, None) => raw.push(year.to_string()),
        (Some(_), None) => unreachable!("parser never yields a day without a month"),
    }

    Ok(raw
        .into_iter()
        .map(|v| normalize_text(&v))
        .filter(|v| !v.is_empty())
        .collect())
}

struct ParsedNumber {
    int_digits: String,
    frac_digits: Option<String>,
}

fn parse_number(s: &str) -> Result<ParsedNumber, EvalError> {
    let fail = || EvalError::UnparseableNumber(s.to_string());
    let mut body = s.trim();
    body = body.strip_prefix('+').or_else(|| body.strip_prefix('-')).unwrap_or(body);
    if body.is_empty() {
        return Err(fail());
    }
    let (int_part, frac_part) = match body.split_once(['.', ',']) {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(fail());
    }
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return Err(fail());
        }
    }
    Ok(ParsedNumber {
        int_digits: int_part.to_string(),
        frac_digits: frac_part.map(str::to_string),
    })
}

fn group_thousands(digits: &str, sep: &str) -> String {
    let mut out = String::new();
    let chars: Vec<char> = digits.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        if i > 0 && (chars.len() - i) % 3 == 0 {
            out.push_str(sep);
        }
        out.push(*c);
    }
    out
}

/// All accepted spellings of a reference number, normalized: thousands
/// separators (none, space, narrow space, dot), decimal comma and point, an
/// optional plus sign, and k/M/Md-style suffixes plus "millions"/"milliards"
/// words for exact multiples.
pub fn number_variants(s: &str) -> Result<BTreeSet<String>, EvalError> {
    let n = parse_number(s)?;
    let mut raw: Vec<String> = Vec::new();

    let int_forms: Vec<String> = if n.int_digits.len() >= 4 {
        vec![
            n.int_digits.clone(),
            group_thousands(&n.int_digits, " "),
            group_thousands(&n.int_digits, "\u{202F}"),
            group_thousands(&n.int_digits, "."),
        ]
    } else {
        vec![n.int_digits.clone()]
    };

    for int_form in &int_forms {
        match &n.frac_digits {
            None => {
                raw.push(int_form.clone());
                raw.push(format!("+{int_form}"));
            }
            Some(frac) => {
                raw.push(format!("{int_form}.{frac}"));
                raw.push(format!("{int_form},{frac}"));
            }
        }
    }

    if n.frac_digits.is_none() && n.int_digits.len() <= 30 {
        if let Ok(value) = n.int_digits.parse::<u128>() {
            if value > 0 && value % 1_000 == 0 {
                raw.push(format!("{}k", value / 1_000));
            }
            if value > 0 && value % 1_000_000 == 0 {
                let q = value / 1_000_000;
                raw.push(format!("{q}M"));
                raw.push(if q == 1 {
                    format!("{q} million")
                } else {
                    format!("{q} millions")
                });
            }
            if value > 0 && value % 1_000_000_000 == 0 {
                let q = value / 1_000_000_000;
                raw.push(format!("{q}Md"));
                raw.push(if q == 1 {
                    format!("{q} milliard")
                } else {
                    format!("{q} milliards")
                });
            }
        }
    }

    Ok(raw
        .into_iter()
        .map(|v| normalize_text(&v))
        .filter(|v| !v.is_empty())
        .collect())
}
