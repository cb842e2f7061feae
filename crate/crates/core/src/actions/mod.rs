//! Bot actions: templated utterances and the custom lookups.

mod services;
mod store;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::corpus::{placeholders, Domain, ACTION_LISTEN};
use crate::dialogue::{DialogueEvent, DialogueTracker};
use crate::error::{Error, Result};

pub use services::{
    translate_weather_description, Clock, FixedClock, FixturePrayerClient, FixtureWeatherClient, HttpPrayerClient,
    HttpWeatherClient, PrayerClient, PrayerTimes, ServiceError, SystemClock, WeatherClient, WeatherReport,
    PRAYER_NAMES,
};
pub use store::{GradeRow, RecordStore, ScheduleRow};

pub const ACTION_SCHEDULE_LIST: &str = "action_schedule_list";
pub const ACTION_GRADE_LIST: &str = "action_grade_list";
pub const ACTION_WORSHIP_SCHEDULE: &str = "action_worship_schedule";
pub const ACTION_WEATHER: &str = "action_weather";

pub const UTTER_ASK_CONCENTRATION: &str = "utter_asked_concentration_study_program";
pub const UTTER_ASK_NIM: &str = "utter_ask_nim";
pub const UTTER_ASK_CITY: &str = "utter_ask_city";

pub const UNAVAILABLE_MESSAGE: &str = "Maaf, layanan tidak tersedia saat ini. Silakan coba lagi nanti.";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ActionResult {
    pub messages: Vec<String>,
    pub events: Vec<DialogueEvent>,
}

impl ActionResult {
    pub fn message(text: impl Into<String>) -> Self {
        ActionResult {
            messages: vec![text.into()],
            events: Vec::new(),
        }
    }
}

/// Replaces every `{slot}` placeholder with the slot's value.
pub fn render_utterance(template: &str, slots: &BTreeMap<String, String>) -> Result<String> {
    let mut out = template.to_string();
    for name in placeholders(template) {
        let value = slots.get(name).ok_or_else(|| Error::MissingSlot(name.to_string()))?;
        out = out.replace(&format!("{{{name}}}"), value);
    }
    Ok(out)
}

/// Renders the first variant of an utter action's template.
pub fn utter(domain: &Domain, action: &str, slots: &BTreeMap<String, String>) -> Result<ActionResult> {
    let template = domain
        .templates
        .get(action)
        .and_then(|t| t.first())
        .ok_or_else(|| Error::unknown("template", action))?;
    Ok(ActionResult::message(render_utterance(template, slots)?))
}

fn ask(domain: &Domain, action: &str, tracker: &DialogueTracker) -> ActionResult {
    utter(domain, action, tracker.slots()).unwrap_or_else(|e| {
        tracing::warn!(error = %e, action, "prompt template unusable");
        ActionResult::message(fallback_prompt(action))
    })
}

fn fallback_prompt(action: &str) -> &'static str {
    match action {
        UTTER_ASK_CONCENTRATION => "Konsentrasi program studi kamu apa?",
        UTTER_ASK_NIM => "Boleh sebutkan NIM kamu?",
        _ => "Kota mana yang kamu maksud?",
    }
}

pub fn action_schedule_list(tracker: &DialogueTracker, store: &RecordStore, domain: &Domain) -> ActionResult {
    let Some(concentration) = tracker.slot("concentration") else {
        return ask(domain, UTTER_ASK_CONCENTRATION, tracker);
    };
    let rows = store.schedules_for(concentration);
    if rows.is_empty() {
        return ActionResult::message(format!(
            "Maaf, jadwal kuliah untuk konsentrasi {concentration} tidak ditemukan."
        ));
    }
    let lines: Vec<String> = rows
        .iter()
        .map(|r| format!("{} {} - {} ({})", r.day, r.time, r.course, r.room))
        .collect();
    ActionResult::message(lines.join("\n"))
}

pub fn action_grade_list(tracker: &DialogueTracker, store: &RecordStore, domain: &Domain) -> ActionResult {
    let Some(nim) = tracker.slot("nim") else {
        return ask(domain, UTTER_ASK_NIM, tracker);
    };
    let rows = store.grades_for(nim);
    if rows.is_empty() {
        return ActionResult::message(format!("Maaf, nilai untuk NIM {nim} tidak ditemukan."));
    }
    let lines: Vec<String> = rows.iter().map(|r| format!("{}: {}", r.course, r.grade)).collect();
    ActionResult::message(lines.join("\n"))
}

pub fn action_worship_schedule(
    tracker: &DialogueTracker,
    client: &dyn PrayerClient,
    clock: &dyn Clock,
    domain: &Domain,
) -> ActionResult {
    let Some(city) = tracker.slot("city") else {
        return ask(domain, UTTER_ASK_CITY, tracker);
    };
    let date = clock.today();
    match client.prayer_times(city, date) {
        Ok(t) => {
            let mut lines = vec![format!("Jadwal sholat {} tanggal {}:", city, date.format("%Y-%m-%d"))];
            lines.extend(
                PRAYER_NAMES
                    .iter()
                    .zip(&t.times)
                    .map(|(n, time)| format!("{n}: {time}")),
            );
            ActionResult::message(lines.join("\n"))
        }
        Err(ServiceError::NotFound(_)) => {
            ActionResult::message(format!("Maaf, jadwal sholat untuk kota {city} tidak ditemukan."))
        }
        Err(e) => {
            tracing::warn!(error = %e, city, "prayer time lookup failed");
            ActionResult::message(UNAVAILABLE_MESSAGE)
        }
    }
}

pub fn action_weather(tracker: &DialogueTracker, client: &dyn WeatherClient, domain: &Domain) -> ActionResult {
    let Some(city) = tracker.slot("city") else {
        return ask(domain, UTTER_ASK_CITY, tracker);
    };
    match client.current_weather(city) {
        Ok(w) => ActionResult::message(format!(
            "Cuaca di {} saat ini: {}, suhu {:.1}°C",
            city,
            translate_weather_description(&w.description),
            w.temp
        )),
        Err(ServiceError::NotFound(_)) => {
            ActionResult::message(format!("Maaf, data cuaca untuk kota {city} tidak ditemukan."))
        }
        Err(e) => {
            tracing::warn!(error = %e, city, "weather lookup failed");
            ActionResult::message(UNAVAILABLE_MESSAGE)
        }
    }
}

/// Everything the actions need, shared read-only between conversations.
#[derive(Clone)]
pub struct ActionRegistry {
    pub store: Arc<RecordStore>,
    pub prayer: Arc<dyn PrayerClient>,
    pub weather: Arc<dyn WeatherClient>,
    pub clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for ActionRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ActionRegistry")
            .field("store", &self.store)
            .finish_non_exhaustive()
    }
}

impl ActionRegistry {
    pub fn new(
        store: RecordStore,
        prayer: Arc<dyn PrayerClient>,
        weather: Arc<dyn WeatherClient>,
        clock: Arc<dyn Clock>,
    ) -> Self {
        ActionRegistry {
            store: Arc::new(store),
            prayer,
            weather,
            clock,
        }
    }

    /// Runs `name`. Custom actions report their own failures as messages;
    /// an `Err` means the action does not exist or its template is unusable.
    pub fn execute(&self, name: &str, tracker: &DialogueTracker, domain: &Domain) -> Result<ActionResult> {
        match name {
            ACTION_LISTEN => Ok(ActionResult::default()),
            ACTION_SCHEDULE_LIST => Ok(action_schedule_list(tracker, &self.store, domain)),
            ACTION_GRADE_LIST => Ok(action_grade_list(tracker, &self.store, domain)),
            ACTION_WORSHIP_SCHEDULE => Ok(action_worship_schedule(
                tracker,
                self.prayer.as_ref(),
                self.clock.as_ref(),
                domain,
            )),
            ACTION_WEATHER => Ok(action_weather(tracker, self.weather.as_ref(), domain)),
            _ if name.starts_with("utter_") => utter(domain, name, tracker.slots()),
            _ => Err(Error::unknown("action", name)),
        }
    }
}
