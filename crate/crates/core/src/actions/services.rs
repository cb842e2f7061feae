//! External lookups used by the custom actions: prayer times and weather.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const PRAYER_NAMES: [&str; 5] = ["subuh", "dzuhur", "ashar", "maghrib", "isya"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ServiceError {
    #[error("no data for `{0}`")]
    NotFound(String),
    #[error("service unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrayerTimes {
    pub city: String,
    pub date: NaiveDate,
    /// `HH:MM` local times in `PRAYER_NAMES` order.
    pub times: [String; 5],
}

fn minutes(hhmm: &str) -> Option<u32> {
    let (h, m) = hhmm.split_once(':')?;
    let (h, m): (u32, u32) = (h.parse().ok()?, m.parse().ok()?);
    (h < 24 && m < 60).then_some(h * 60 + m)
}

impl PrayerTimes {
    /// Builds a record from a name → time map, checking all five are present
    /// and strictly increasing through the day.
    pub fn from_map(city: &str, date: NaiveDate, map: &BTreeMap<String, String>) -> Result<Self, ServiceError> {
        let mut times: [String; 5] = Default::default();
        let mut prev = None;
        for (slot, name) in times.iter_mut().zip(PRAYER_NAMES) {
            let t = map
                .get(name)
                .ok_or_else(|| ServiceError::Unavailable(format!("prayer time `{name}` missing")))?;
            let m = minutes(t).ok_or_else(|| ServiceError::Unavailable(format!("bad time `{t}` for {name}")))?;
            if prev.is_some_and(|p| m <= p) {
                return Err(ServiceError::Unavailable(format!(
                    "{name} at {t} is not after the previous prayer"
                )));
            }
            prev = Some(m);
            *slot = t.clone();
        }
        Ok(PrayerTimes {
            city: city.to_string(),
            date,
            times,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherReport {
    pub city: String,
    pub description: String,
    /// Degrees Celsius.
    pub temp: f64,
}

pub trait PrayerClient: Send + Sync {
    fn prayer_times(&self, city: &str, date: NaiveDate) -> Result<PrayerTimes, ServiceError>;
}

pub trait WeatherClient: Send + Sync {
    fn current_weather(&self, city: &str) -> Result<WeatherReport, ServiceError>;
}

pub trait Clock: Send + Sync {
    fn today(&self) -> NaiveDate;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn today(&self) -> NaiveDate {
        chrono::Local::now().date_naive()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub NaiveDate);

impl Clock for FixedClock {
    fn today(&self) -> NaiveDate {
        self.0
    }
}

#[derive(Deserialize)]
struct PrayerFixture {
    city: String,
    times: BTreeMap<String, String>,
}

/// Prayer times served from a bundled file, the same for every date.
#[derive(Debug, Clone, Default)]
pub struct FixturePrayerClient {
    by_city: BTreeMap<String, BTreeMap<String, String>>,
}

impl FixturePrayerClient {
    pub fn parse(doc: &str) -> Result<Self> {
        let rows: Vec<PrayerFixture> = serde_json::from_str(doc)?;
        let mut by_city = BTreeMap::new();
        for row in rows {
            let date = NaiveDate::default();
            PrayerTimes::from_map(&row.city, date, &row.times)
                .map_err(|e| Error::InvalidArgument(format!("prayer fixture for {}: {e}", row.city)))?;
            by_city.insert(row.city.to_lowercase(), row.times);
        }
        Ok(FixturePrayerClient { by_city })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

impl PrayerClient for FixturePrayerClient {
    fn prayer_times(&self, city: &str, date: NaiveDate) -> Result<PrayerTimes, ServiceError> {
        let key = city.trim().to_lowercase();
        let map = self
            .by_city
            .get(&key)
            .ok_or_else(|| ServiceError::NotFound(city.to_string()))?;
        PrayerTimes::from_map(&key, date, map)
    }
}

/// Weather served from a bundled file.
#[derive(Debug, Clone, Default)]
pub struct FixtureWeatherClient {
    by_city: BTreeMap<String, WeatherReport>,
}

impl FixtureWeatherClient {
    pub fn parse(doc: &str) -> Result<Self> {
        let rows: Vec<WeatherReport> = serde_json::from_str(doc)?;
        Ok(FixtureWeatherClient {
            by_city: rows.into_iter().map(|r| (r.city.to_lowercase(), r)).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

impl WeatherClient for FixtureWeatherClient {
    fn current_weather(&self, city: &str) -> Result<WeatherReport, ServiceError> {
        self.by_city
            .get(&city.trim().to_lowercase())
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(city.to_string()))
    }
}

fn http_agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(5)))
        .build()
        .into()
}

fn get_json(agent: &ureq::Agent, url: &str) -> Result<Value, ServiceError> {
    let mut resp = agent.get(url).call().map_err(|e| match e {
        ureq::Error::StatusCode(404) => ServiceError::NotFound(url.to_string()),
        other => ServiceError::Unavailable(other.to_string()),
    })?;
    resp.body_mut()
        .read_json::<Value>()
        .map_err(|e| ServiceError::Unavailable(e.to_string()))
}

fn path_segment(s: &str) -> String {
    s.trim()
        .to_lowercase()
        .bytes()
        .map(|b| match b {
            b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

/// Prayer times over HTTP at
/// `{base}/sholat/format/json/jadwal/kota/{city}/tanggal/{yyyy-mm-dd}`.
pub struct HttpPrayerClient {
    base: String,
    agent: ureq::Agent,
}

impl HttpPrayerClient {
    pub fn new(base: impl Into<String>) -> Self {
        HttpPrayerClient {
            base: base.into().trim_end_matches('/').to_string(),
            agent: http_agent(),
        }
    }

    pub fn url(&self, city: &str, date: NaiveDate) -> String {
        format!(
            "{}/sholat/format/json/jadwal/kota/{}/tanggal/{}",
            self.base,
            path_segment(city),
            date.format("%Y-%m-%d")
        )
    }
}

/// Finds the first object in the payload that carries all five prayer names.
fn find_prayer_map(v: &Value) -> Option<BTreeMap<String, String>> {
    match v {
        Value::Object(map) => {
            let lowered: BTreeMap<String, &Value> = map.iter().map(|(k, v)| (k.to_lowercase(), v)).collect();
            if PRAYER_NAMES
                .iter()
                .all(|n| lowered.get(*n).is_some_and(|v| v.is_string()))
            {
                return Some(
                    PRAYER_NAMES
                        .iter()
                        .map(|n| (n.to_string(), lowered[*n].as_str().unwrap_or_default().to_string()))
                        .collect(),
                );
            }
            map.values().find_map(find_prayer_map)
        }
        Value::Array(items) => items.iter().find_map(find_prayer_map),
        _ => None,
    }
}

impl PrayerClient for HttpPrayerClient {
    fn prayer_times(&self, city: &str, date: NaiveDate) -> Result<PrayerTimes, ServiceError> {
        let body = get_json(&self.agent, &self.url(city, date))?;
        let map = find_prayer_map(&body).ok_or_else(|| ServiceError::NotFound(city.to_string()))?;
        PrayerTimes::from_map(city, date, &map)
    }
}

/// Current weather from the OpenWeatherMap API in metric units.
pub struct HttpWeatherClient {
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpWeatherClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpWeatherClient")
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl HttpWeatherClient {
    pub fn new(api_key: impl Into<String>) -> Self {
        HttpWeatherClient {
            api_key: api_key.into(),
            agent: http_agent(),
        }
    }

    pub fn url(&self, city: &str) -> String {
        format!(
            "https://api.openweathermap.org/data/2.5/weather?q={}&APPID={}&units=metric",
            path_segment(city),
            self.api_key
        )
    }
}

impl WeatherClient for HttpWeatherClient {
    fn current_weather(&self, city: &str) -> Result<WeatherReport, ServiceError> {
        let body = get_json(&self.agent, &self.url(city))?;
        let description = body["weather"][0]["description"]
            .as_str()
            .ok_or_else(|| ServiceError::Unavailable("weather payload lacks a description".into()))?;
        let temp = body["main"]["temp"]
            .as_f64()
            .ok_or_else(|| ServiceError::Unavailable("weather payload lacks a temperature".into()))?;
        Ok(WeatherReport {
            city: city.to_string(),
            description: description.to_string(),
            temp,
        })
    }
}

const WEATHER_TRANSLATIONS: &[(&str, &str)] = &[
    ("clear sky", "langit cerah"),
    ("sky is clear", "langit cerah"),
    ("few clouds", "sedikit berawan"),
    ("scattered clouds", "awan tersebar"),
    ("broken clouds", "berawan sebagian"),
    ("overcast clouds", "mendung"),
    ("mist", "berkabut tipis"),
    ("smoke", "berasap"),
    ("haze", "udara berkabut"),
    ("sand/dust whirls", "pusaran pasir/debu"),
    ("fog", "kabut"),
    ("sand", "pasir"),
    ("dust", "debu"),
    ("volcanic ash", "abu vulkanik"),
    ("squalls", "angin kencang"),
    ("tornado", "tornado"),
    ("light rain", "hujan ringan"),
    ("moderate rain", "hujan sedang"),
    ("heavy intensity rain", "hujan lebat"),
    ("very heavy rain", "hujan sangat lebat"),
    ("extreme rain", "hujan ekstrem"),
    ("freezing rain", "hujan beku"),
    ("light intensity shower rain", "hujan rintik-rintik"),
    ("shower rain", "hujan sesaat"),
    ("heavy intensity shower rain", "hujan deras sesaat"),
    ("ragged shower rain", "hujan sesaat tidak merata"),
    ("light intensity drizzle", "gerimis ringan"),
    ("drizzle", "gerimis"),
    ("heavy intensity drizzle", "gerimis lebat"),
    ("light intensity drizzle rain", "gerimis hujan ringan"),
    ("drizzle rain", "gerimis hujan"),
    ("heavy intensity drizzle rain", "gerimis hujan lebat"),
    ("shower rain and drizzle", "hujan sesaat dan gerimis"),
    ("heavy shower rain and drizzle", "hujan lebat sesaat dan gerimis"),
    ("shower drizzle", "gerimis sesaat"),
    ("thunderstorm with light rain", "badai petir dengan hujan ringan"),
    ("thunderstorm with rain", "badai petir dengan hujan"),
    ("thunderstorm with heavy rain", "badai petir dengan hujan lebat"),
    ("light thunderstorm", "badai petir ringan"),
    ("thunderstorm", "badai petir"),
    ("heavy thunderstorm", "badai petir hebat"),
    ("ragged thunderstorm", "badai petir tidak merata"),
    ("thunderstorm with light drizzle", "badai petir dengan gerimis ringan"),
    ("thunderstorm with drizzle", "badai petir dengan gerimis"),
    ("thunderstorm with heavy drizzle", "badai petir dengan gerimis lebat"),
    ("light snow", "salju ringan"),
    ("snow", "salju"),
    ("heavy snow", "salju lebat"),
    ("sleet", "hujan es"),
    ("light shower sleet", "hujan es ringan sesaat"),
    ("shower sleet", "hujan es sesaat"),
    ("light rain and snow", "hujan ringan dan salju"),
    ("rain and snow", "hujan dan salju"),
    ("light shower snow", "salju ringan sesaat"),
    ("shower snow", "salju sesaat"),
    ("heavy shower snow", "salju lebat sesaat"),
];

/// Indonesian rendering of a standard weather description; anything not in
/// the table is returned unchanged.
pub fn translate_weather_description(en: &str) -> String {
    let key = en.trim().to_lowercase();
    WEATHER_TRANSLATIONS
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.to_string())
        .unwrap_or_else(|| en.to_string())
}
