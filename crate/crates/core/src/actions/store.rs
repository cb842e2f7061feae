use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleRow {
    pub concentration: String,
    pub course: String,
    pub day: String,
    pub time: String,
    pub room: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GradeRow {
    pub nim: String,
    pub course: String,
    pub grade: String,
}

/// In-memory copy of the schedule and grade tables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordStore {
    schedules: Vec<ScheduleRow>,
    grades: Vec<GradeRow>,
}

const WEEKDAYS: [&str; 7] = ["senin", "selasa", "rabu", "kamis", "jumat", "sabtu", "minggu"];

/// Position of an Indonesian day name in the week; unknown names sort last.
fn day_rank(day: &str) -> usize {
    let lower = day.to_lowercase();
    WEEKDAYS
        .iter()
        .position(|d| *d == lower || (*d == "jumat" && lower == "jum'at"))
        .unwrap_or(WEEKDAYS.len())
}

fn parse_tsv<const N: usize>(doc: &str, header: [&str; N]) -> Result<Vec<[String; N]>> {
    let mut lines = doc.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or_else(|| Error::parse(1, "missing header row"))?;
    let found: Vec<&str> = head.split('\t').map(str::trim).collect();
    if found != header {
        return Err(Error::parse(
            1,
            format!("expected header {:?}, found {:?}", header, found),
        ));
    }
    lines
        .map(|(i, line)| {
            let cells: Vec<String> = line.split('\t').map(|c| c.trim().to_string()).collect();
            <[String; N]>::try_from(cells)
                .map_err(|c| Error::parse(i + 1, format!("expected {N} tab-separated fields, found {}", c.len())))
        })
        .collect()
}

impl RecordStore {
    pub fn new(schedules: Vec<ScheduleRow>, grades: Vec<GradeRow>) -> Self {
        RecordStore { schedules, grades }
    }

    pub fn parse(schedules_tsv: &str, grades_tsv: &str) -> Result<Self> {
        let schedules = parse_tsv(schedules_tsv, ["concentration", "course", "day", "time", "room"])?
            .into_iter()
            .map(|[concentration, course, day, time, room]| ScheduleRow {
                concentration,
                course,
                day,
                time,
                room,
            })
            .collect();
        let grades = parse_tsv(grades_tsv, ["nim", "course", "grade"])?
            .into_iter()
            .map(|[nim, course, grade]| GradeRow { nim, course, grade })
            .collect();
        Ok(RecordStore { schedules, grades })
    }

    /// Reads `schedules.tsv` and `grades.tsv` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let s = fs::read_to_string(dir.join("schedules.tsv"))?;
        let g = fs::read_to_string(dir.join("grades.tsv"))?;
        Self::parse(&s, &g)
    }

    /// Rows for a concentration, ordered by day of week then time.
    pub fn schedules_for(&self, concentration: &str) -> Vec<&ScheduleRow> {
        let key = concentration.trim().to_lowercase();
        let mut rows: Vec<&ScheduleRow> = self
            .schedules
            .iter()
            .filter(|r| r.concentration.to_lowercase() == key)
            .collect();
        rows.sort_by(|a, b| (day_rank(&a.day), &a.time).cmp(&(day_rank(&b.day), &b.time)));
        rows
    }

    pub fn grades_for(&self, nim: &str) -> Vec<&GradeRow> {
        let key = nim.trim();
        self.grades.iter().filter(|r| r.nim == key).collect()
    }
}
