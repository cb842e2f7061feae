//! Loading data, training, and assembling an engine.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use dialogforge::actions::{
    ActionRegistry, FixturePrayerClient, FixtureWeatherClient, HttpPrayerClient, HttpWeatherClient, PrayerClient,
    RecordStore, SystemClock, WeatherClient,
};
use dialogforge::corpus::{parse_domain, parse_nlu_corpus, parse_stories, validate, Domain, Story, UtteranceExample};
use dialogforge::dialogue::{Engine, Models};

pub const DOMAIN_FILE: &str = "domain.json";
pub const NLU_FILE: &str = "nlu.json";
pub const STORIES_FILE: &str = "stories.json";
pub const PRAYER_FIXTURES: &str = "prayer_fixtures.json";
pub const WEATHER_FIXTURES: &str = "weather_fixtures.json";
pub const DEFAULT_PRAYER_API: &str = "https://api.banghasan.com";

#[derive(Debug, Clone)]
pub struct Corpus {
    pub domain: Domain,
    pub examples: Vec<UtteranceExample>,
    pub stories: Vec<Story>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_domain(data_dir: &Path) -> Result<Domain> {
    let p = data_dir.join(DOMAIN_FILE);
    parse_domain(&read(&p)?).with_context(|| p.display().to_string())
}

pub fn load_examples(path: &Path) -> Result<Vec<UtteranceExample>> {
    parse_nlu_corpus(&read(path)?).with_context(|| path.display().to_string())
}

/// Reads and validates domain, NLU examples and stories.
pub fn load_corpus(data_dir: &Path) -> Result<Corpus> {
    let domain = load_domain(data_dir)?;
    let examples = load_examples(&data_dir.join(NLU_FILE))?;
    let sp = data_dir.join(STORIES_FILE);
    let stories = parse_stories(&read(&sp)?).with_context(|| sp.display().to_string())?;
    let report = validate(&domain, &stories, &examples);
    for w in &report.warnings {
        tracing::warn!("{w}");
    }
    if !report.is_trainable() {
        let lines: Vec<String> = report.errors.iter().map(ToString::to_string).collect();
        bail!("training data is invalid:\n{}", lines.join("\n"));
    }
    Ok(Corpus {
        domain,
        examples,
        stories,
    })
}

/// Trains all models and writes them to `model_dir`.
pub fn train(data_dir: &Path, model_dir: &Path, seed: u64) -> Result<Models> {
    let c = load_corpus(data_dir)?;
    let models = Models::train(&c.examples, &c.stories, &c.domain, seed)?;
    std::fs::create_dir_all(model_dir).with_context(|| format!("creating {}", model_dir.display()))?;
    models.save(model_dir)?;
    Ok(models)
}

pub fn load_models(model_dir: &Path) -> Result<Models> {
    Models::load(model_dir).with_context(|| format!("loading models from {} (run `train` first)", model_dir.display()))
}

/// Fixture services read from `data_dir`, or live HTTP clients.
pub fn build_actions(data_dir: &Path, offline: bool, env: impl Fn(&str) -> Option<String>) -> Result<ActionRegistry> {
    let store = RecordStore::load(data_dir)?;
    let (prayer, weather): (Arc<dyn PrayerClient>, Arc<dyn WeatherClient>) = if offline {
        (
            Arc::new(FixturePrayerClient::load(&data_dir.join(PRAYER_FIXTURES))?),
            Arc::new(FixtureWeatherClient::load(&data_dir.join(WEATHER_FIXTURES))?),
        )
    } else {
        let key = env("WEATHER_API_KEY").unwrap_or_default();
        if key.is_empty() {
            tracing::warn!("WEATHER_API_KEY is not set; weather requests will report the service as unavailable");
        }
        let base = env("PRAYER_API_BASE").unwrap_or_else(|| DEFAULT_PRAYER_API.to_string());
        (
            Arc::new(HttpPrayerClient::new(base)),
            Arc::new(HttpWeatherClient::new(key)),
        )
    };
    Ok(ActionRegistry::new(store, prayer, weather, Arc::new(SystemClock)))
}

pub fn load_engine(data_dir: &Path, model_dir: &Path, offline: bool) -> Result<Engine> {
    let domain = load_domain(data_dir)?;
    let models = load_models(model_dir)?;
    let actions = build_actions(data_dir, offline, |k| std::env::var(k).ok())?;
    Ok(Engine::new(domain, models, actions))
}
