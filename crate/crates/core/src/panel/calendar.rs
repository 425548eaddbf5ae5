//! Proleptic Gregorian dates and ISO 8601 week arithmetic.
//!
//! ISO week 1 of a year is the week (Monday to Sunday) containing the first
//! Thursday of that year, equivalently the week containing January 4.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A calendar date stored as days since 1970-01-01.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CivilDate(i64);

impl CivilDate {
    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        if !(1..=12).contains(&month) || day == 0 || day > days_in_month(year, month) {
            return Err(Error::validation(format!(
                "invalid calendar date {year:04}-{month:02}-{day:02}"
            )));
        }
        Ok(CivilDate(days_from_civil(year, month, day)))
    }

    pub fn from_days(days: i64) -> Self {
        CivilDate(days)
    }

    pub fn days(self) -> i64 {
        self.0
    }

    pub fn ymd(self) -> (i32, u32, u32) {
        civil_from_days(self.0)
    }

    pub fn year(self) -> i32 {
        self.ymd().0
    }

    /// ISO weekday, Monday = 1 ... Sunday = 7.
    pub fn weekday(self) -> u32 {
        ((self.0 + 3).rem_euclid(7) + 1) as u32
    }

    /// 1-based ordinal day within the calendar year (1..=366).
    pub fn day_of_year(self) -> u32 {
        let (y, _, _) = self.ymd();
        (self.0 - days_from_civil(y, 1, 1) + 1) as u32
    }

    pub fn add_days(self, n: i64) -> Self {
        CivilDate(self.0 + n)
    }

    pub fn iso_week(self) -> IsoWeek {
        let (y, _, _) = self.ymd();
        let mut year = y;
        if self.0 >= iso_week1_monday(y + 1) {
            year = y + 1;
        } else if self.0 < iso_week1_monday(y) {
            year = y - 1;
        }
        let week = ((self.0 - iso_week1_monday(year)) / 7 + 1) as u32;
        IsoWeek { year, week }
    }
}

impl fmt::Display for CivilDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (y, m, d) = self.ymd();
        write!(f, "{y:04}-{m:02}-{d:02}")
    }
}

impl FromStr for CivilDate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        if parts.len() != 3 {
            return Err(Error::validation(format!("expected YYYY-MM-DD, got '{s}'")));
        }
        let parse = |p: &str| {
            p.parse::<i64>()
                .map_err(|_| Error::validation(format!("expected YYYY-MM-DD, got '{s}'")))
        };
        CivilDate::from_ymd(parse(parts[0])? as i32, parse(parts[1])? as u32, parse(parts[2])? as u32)
    }
}

/// An ISO 8601 week-numbering (year, week) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IsoWeek {
    pub year: i32,
    pub week: u32,
}

impl IsoWeek {
    pub fn new(year: i32, week: u32) -> Result<Self> {
        let n = weeks_in_iso_year(year);
        if week == 0 || week > n {
            return Err(Error::validation(format!(
                "ISO week {week} does not exist in {year} (the year has {n} weeks)"
            )));
        }
        Ok(IsoWeek { year, week })
    }

    pub fn monday(self) -> CivilDate {
        CivilDate(iso_week1_monday(self.year) + 7 * (i64::from(self.week) - 1))
    }

    pub fn succ(self) -> IsoWeek {
        self.monday().add_days(7).iso_week()
    }
}

impl fmt::Display for IsoWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-W{:02}", self.year, self.week)
    }
}

/// Parses `2020-W12` (also `2020W12`, `2020-12`), validating the week.
impl FromStr for IsoWeek {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::validation(format!("expected an ISO week like 2020-W12, got '{s}'"));
        let t = s.trim();
        let (y, w) = t.split_once("-W").or_else(|| t.split_once('W')).or_else(|| t.split_once('-')).ok_or_else(bad)?;
        IsoWeek::new(y.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?)
    }
}

pub fn is_leap_year(y: i32) -> bool {
    (y % 4 == 0 && y % 100 != 0) || y % 400 == 0
}

pub fn days_in_month(y: i32, m: u32) -> u32 {
    match m {
        1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
        4 | 6 | 9 | 11 => 30,
        2 if is_leap_year(y) => 29,
        2 => 28,
        _ => 0,
    }
}

/// Number of ISO weeks (52 or 53) in an ISO week-numbering year.
pub fn weeks_in_iso_year(year: i32) -> u32 {
    ((iso_week1_monday(year + 1) - iso_week1_monday(year)) / 7) as u32
}

fn iso_week1_monday(year: i32) -> i64 {
    let jan4 = CivilDate(days_from_civil(year, 1, 4));
    jan4.0 - i64::from(jan4.weekday() - 1)
}

// Howard Hinnant's days_from_civil / civil_from_days.
fn days_from_civil(y: i32, m: u32, d: u32) -> i64 {
    let y = i64::from(y) - i64::from(m <= 2);
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let m = i64::from(m);
    let doy = (153 * (if m > 2 { m - 3 } else { m + 9 }) + 2) / 5 + i64::from(d) - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146_097 + doe - 719_468
}

fn civil_from_days(z: i64) -> (i32, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z - era * 146_097;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    ((y + i64::from(m <= 2)) as i32, m, d)
}

/// Bijective index between week ordinals `t = 1..=T` and ISO weeks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekIndex {
    weeks: Vec<IsoWeek>,
}

impl WeekIndex {
    pub fn build(start: (i32, u32), end: (i32, u32)) -> Result<Self> {
        let start = IsoWeek::new(start.0, start.1)?;
        let end = IsoWeek::new(end.0, end.1)?;
        if end < start {
            return Err(Error::validation(format!(
                "week window end {end} precedes start {start}"
            )));
        }
        let n = ((end.monday().days() - start.monday().days()) / 7 + 1) as usize;
        Ok(Self::from_start(start, n))
    }

    /// `len` consecutive weeks beginning at `start`.
    pub fn from_start(start: IsoWeek, len: usize) -> Self {
        let base = start.monday();
        let weeks = (0..len)
            .map(|k| base.add_days(7 * k as i64).iso_week())
            .collect();
        WeekIndex { weeks }
    }

    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    pub fn first(&self) -> IsoWeek {
        self.weeks[0]
    }

    pub fn last(&self) -> IsoWeek {
        self.weeks[self.weeks.len() - 1]
    }

    /// ISO week of ordinal `t` (1-based).
    pub fn iso(&self, t: usize) -> IsoWeek {
        self.weeks[t - 1]
    }

    /// ISO week number `w(t)`.
    pub fn w(&self, t: usize) -> u32 {
        self.weeks[t - 1].week
    }

    /// ISO year `y(t)`.
    pub fn y(&self, t: usize) -> i32 {
        self.weeks[t - 1].year
    }

    /// Ordinal of an ISO week, if it lies inside the window.
    pub fn t_of(&self, week: IsoWeek) -> Option<usize> {
        let offset = (week.monday().days() - self.first().monday().days()).div_euclid(7);
        let k = usize::try_from(offset).ok()?;
        (k < self.weeks.len() && self.weeks[k] == week).then_some(k + 1)
    }

    /// Signed week offset of `week` relative to the first week (first week = 0).
    pub fn offset_of(&self, week: IsoWeek) -> i64 {
        (week.monday().days() - self.first().monday().days()) / 7
    }

    pub fn iter(&self) -> impl Iterator<Item = IsoWeek> + '_ {
        self.weeks.iter().copied()
    }

    /// Distinct ISO years spanned by the window, ascending.
    pub fn years(&self) -> Vec<i32> {
        let mut ys: Vec<i32> = self.weeks.iter().map(|w| w.year).collect();
        ys.dedup();
        ys
    }

    /// The `len` weeks immediately following this window.
    pub fn continuation(&self, len: usize) -> WeekIndex {
        WeekIndex::from_start(self.last().succ(), len)
    }
}
