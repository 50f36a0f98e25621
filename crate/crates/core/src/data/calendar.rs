use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use super::{DataError, Result};

/// Service opens at 05:00.
pub const SERVICE_START_MINUTE: u32 = 5 * 60;
/// 05:00 to 23:00.
pub const SERVICE_MINUTES: u32 = 18 * 60;
pub const TG_CHOICES: [u32; 3] = [10, 15, 30];

pub fn slots_per_day(tg_minutes: u32) -> Result<usize> {
    if !TG_CHOICES.contains(&tg_minutes) {
        return Err(DataError::Config(format!("time granularity must be 10, 15 or 30 minutes, got {tg_minutes}")));
    }
    Ok((SERVICE_MINUTES / tg_minutes) as usize)
}

/// Ordered list of service days (workdays only).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceCalendar {
    days: Vec<NaiveDate>,
}

impl ServiceCalendar {
    pub fn new(days: Vec<NaiveDate>) -> Result<Self> {
        if days.is_empty() {
            return Err(DataError::Config("calendar needs at least one day".into()));
        }
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::Config("calendar days must strictly increase".into()));
        }
        Ok(ServiceCalendar { days })
    }

    /// `count` consecutive Monday–Friday dates starting at or after `start`.
    pub fn workdays(start: NaiveDate, count: usize) -> Result<Self> {
        let mut days = Vec::with_capacity(count);
        let mut d = start;
        while days.len() < count {
            if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
                days.push(d);
            }
            d += Duration::days(1);
        }
        Self::new(days)
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.days.binary_search(&date).ok()
    }

    /// Start of `slot` on day `day`.
    pub fn slot_start(&self, day: usize, slot: usize, tg_minutes: u32) -> NaiveDateTime {
        let minute = SERVICE_START_MINUTE + slot as u32 * tg_minutes;
        self.days[day].and_time(NaiveTime::from_hms_opt(minute / 60, minute % 60, 0).expect("slot within a day"))
    }

    /// Day index and minutes after 05:00, or `None` outside the service window
    /// or on a non-service day.
    pub fn locate(&self, t: NaiveDateTime) -> Option<(usize, u32)> {
        let day = self.day_index(t.date())?;
        let minute = t.time().num_seconds_from_midnight() / 60;
        let offset = minute.checked_sub(SERVICE_START_MINUTE)?;
        (offset < SERVICE_MINUTES).then_some((day, offset))
    }
}
