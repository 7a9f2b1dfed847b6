use serde::{Deserialize, Serialize};

use super::comparison_set_bits;
use crate::model::{LabelKind, LabelRecord};

/// Per-task labeling time, in minutes unless stated otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeModel {
    /// Reading one leaf passage.
    pub read_minutes_per_leaf: f64,
    pub demo_minutes: f64,
    pub comparison_minutes: f64,
    /// Reading time charged to each comparison when several share a passage.
    pub amortized_comparison_minutes: f64,
    pub full_book_read_hours: f64,
}

impl Default for TimeModel {
    fn default() -> Self {
        Self {
            read_minutes_per_leaf: 2.5,
            demo_minutes: 4.0,
            comparison_minutes: 1.5,
            amortized_comparison_minutes: 0.8,
            full_book_read_hours: 12.0,
        }
    }
}

impl TimeModel {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("read_minutes_per_leaf", self.read_minutes_per_leaf),
            ("demo_minutes", self.demo_minutes),
            ("comparison_minutes", self.comparison_minutes),
            ("amortized_comparison_minutes", self.amortized_comparison_minutes),
            ("full_book_read_hours", self.full_book_read_hours),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Reading plus writing one demonstration.
    pub fn demonstration_total(&self) -> f64 {
        self.read_minutes_per_leaf + self.demo_minutes
    }

    /// One comparison with its share of the reading time.
    pub fn comparison_total(&self) -> f64 {
        self.comparison_minutes + self.amortized_comparison_minutes
    }

    /// How many times faster a comparison is than a demonstration.
    pub fn comparison_speedup(&self) -> f64 {
        self.demonstration_total() / self.comparison_total()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KindTime {
    pub count: usize,
    /// Labels whose own duration was used instead of the model.
    pub measured: usize,
    pub minutes: f64,
}

impl KindTime {
    fn add(&mut self, duration_seconds: f64, modeled_minutes: f64) {
        self.count += 1;
        // a zero duration means the client did not time the task
        if duration_seconds > 0.0 {
            self.measured += 1;
            self.minutes += duration_seconds / 60.0;
        } else {
            self.minutes += modeled_minutes;
        }
    }

    pub fn mean_minutes(&self) -> Option<f64> {
        (self.count > 0).then(|| self.minutes / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanTimeReport {
    pub demonstrations: KindTime,
    pub comparisons: KindTime,
    /// Ratings are collected alongside comparisons and cost nothing extra
    /// unless measured.
    pub likert: KindTime,
    pub total_minutes: f64,
    pub total_hours: f64,
    /// Demonstrations plus comparisons converted at the modeled speedup.
    pub demonstration_equivalents: f64,
    pub demonstration_equivalent_hours: f64,
    pub modeled_demonstration_minutes: f64,
    pub modeled_comparison_minutes: f64,
    pub comparison_speedup: f64,
    /// Ratio of measured mean times, when both kinds have measurements.
    pub measured_speedup: Option<f64>,
    pub bits_per_full_comparison_set: f64,
    pub full_book_read_hours: f64,
}

pub fn human_time_report<'a>(
    labels: impl IntoIterator<Item = &'a LabelRecord>,
    model: &TimeModel,
) -> HumanTimeReport {
    let mut demos = KindTime::default();
    let mut comps = KindTime::default();
    let mut likert = KindTime::default();
    let (mut demo_measured, mut comp_measured) = (0.0, 0.0);
    for r in labels {
        match r.kind {
            LabelKind::Demonstration { .. } => {
                demos.add(r.duration_seconds, model.demonstration_total());
                if r.duration_seconds > 0.0 {
                    demo_measured += r.duration_seconds / 60.0;
                }
            }
            LabelKind::Comparison { .. } => {
                comps.add(r.duration_seconds, model.comparison_total());
                if r.duration_seconds > 0.0 {
                    comp_measured += r.duration_seconds / 60.0;
                }
            }
            LabelKind::Likert { .. } => likert.add(r.duration_seconds, 0.0),
        }
    }
    let total_minutes = demos.minutes + comps.minutes + likert.minutes;
    let speedup = model.comparison_speedup();
    let equivalents = demos.count as f64 + comps.count as f64 / speedup;
    let measured_speedup = (demos.measured > 0 && comps.measured > 0).then(|| {
        (demo_measured / demos.measured as f64) / (comp_measured / comps.measured as f64)
    });
    HumanTimeReport {
        demonstrations: demos,
        comparisons: comps,
        likert,
        total_minutes,
        total_hours: total_minutes / 60.0,
        demonstration_equivalents: equivalents,
        demonstration_equivalent_hours: equivalents * model.demonstration_total() / 60.0,
        modeled_demonstration_minutes: model.demonstration_total(),
        modeled_comparison_minutes: model.comparison_total(),
        comparison_speedup: speedup,
        measured_speedup,
        bits_per_full_comparison_set: comparison_set_bits(3),
        full_book_read_hours: model.full_book_read_hours,
    }
}
