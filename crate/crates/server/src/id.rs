//! Structured session identifiers, e.g. `30217A88P21`: date digits
//! (last digit of the year, month, day), period letter, two-digit server
//! code, parameter symbol, intensity digit, repetition digit.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use equisel_core::agents::Treatment;

use crate::error::ServerError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SessionId {
    pub year_digit: u8,
    pub month: u8,
    pub day: u8,
    pub period: char,
    pub server: u8,
    /// `N`, `o` or `P`.
    pub symbol: char,
    pub intensity: u8,
    pub repetition: u8,
}

/// Symbol and intensity digit for `b`. The neutral treatment is written
/// `o1`; values outside the treatment set get intensity 0.
pub fn parameter_code(b: f64) -> (char, u8) {
    match Treatment::from_b(b) {
        Some(Treatment::O) => ('o', 1),
        Some(t) => (t.symbol(), t.intensity()),
        None if b < 0.0 => ('N', 0),
        None if b > 0.0 => ('P', 0),
        None => ('o', 0),
    }
}

impl SessionId {
    /// `index` counts earlier sessions of the same treatment: it selects the
    /// repetition digit (1..=9) and then the period letter.
    pub fn new(date: NaiveDate, server: u8, b: f64, index: u32) -> Self {
        let (symbol, intensity) = parameter_code(b);
        SessionId {
            year_digit: (date.year().rem_euclid(10)) as u8,
            month: date.month() as u8,
            day: date.day() as u8,
            period: (b'A' + ((index / 9) % 26) as u8) as char,
            server: server % 100,
            symbol,
            intensity,
            repetition: (index % 9) as u8 + 1,
        }
    }
}

impl SessionId {
    pub fn treatment(&self) -> Option<Treatment> {
        Treatment::ALL
            .into_iter()
            .find(|t| parameter_code(t.b()) == (self.symbol, self.intensity))
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{:02}{:02}{}{:02}{}{}{}",
            self.year_digit,
            self.month,
            self.day,
            self.period,
            self.server,
            self.symbol,
            self.intensity,
            self.repetition
        )
    }
}

impl FromStr for SessionId {
    type Err = ServerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ServerError::UnknownSession(s.to_owned());
        let c: Vec<char> = s.chars().collect();
        if c.len() != 11 {
            return Err(bad());
        }
        let digit = |i: usize| c[i].to_digit(10).map(|d| d as u8).ok_or_else(bad);
        let period = c[5];
        if !period.is_ascii_uppercase() {
            return Err(bad());
        }
        let symbol = c[8];
        let intensity = digit(9)?;
        if !matches!(symbol, 'N' | 'o' | 'P') || intensity > 2 {
            return Err(bad());
        }
        Ok(SessionId {
            year_digit: digit(0)?,
            month: digit(1)? * 10 + digit(2)?,
            day: digit(3)? * 10 + digit(4)?,
            period,
            server: digit(6)? * 10 + digit(7)?,
            symbol,
            intensity,
            repetition: digit(10)?,
        })
    }
}
