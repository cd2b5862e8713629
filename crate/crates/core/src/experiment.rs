//! Evaluation protocol: a context-free baseline arm, threshold sweeps over
//! the sentence and question indexes, averaged report tables, relative
//! deltas and radar chart data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::Embedder;
use crate::generate::GenerationClient;
use crate::index::IndexedDataset;
use crate::metrics::{score_row, ScoreRow};
use crate::par::map_bounded;
use crate::retrieve::{context_free_prompt, generation_request, Budgets, PromptTemplate, RagPipeline};
use crate::scalar::Scalar;
use crate::testgen::TestPair;
use crate::tokenize::TokenCounter;

pub const DEFAULT_FAILURE_BUDGET: f64 = 0.20;
pub const BASELINE_ARM: &str = "baseline";
pub const METRIC_NAMES: [&str; 4] = ["ROUGE", "METEOR", "BLEU", "CS"];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("arm {arm} aborted: {failures} of {total} questions failed")]
    Aborted {
        arm: String,
        failures: usize,
        total: usize,
    },
    #[error("report I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("report CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("report JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed report: {0}")]
    Malformed(String),
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn validate_thresholds(thresholds: &[f64]) -> Result<(), ExperimentError> {
    if thresholds.is_empty() {
        return Err(ExperimentError::InvalidThresholds("empty list".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(ExperimentError::InvalidThresholds(format!("{t} outside [0, 1]")));
    }
    if thresholds.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::InvalidThresholds("not strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub testset: PathBuf,
    pub index_sentences: Option<PathBuf>,
    pub index_questions: Option<PathBuf>,
    pub thresholds: Vec<f64>,
    pub budgets: Budgets,
    pub max_inflight: usize,
    pub failure_budget: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(testset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            testset: testset.into(),
            index_sentences: None,
            index_questions: None,
            thresholds: default_thresholds(),
            budgets: Budgets::default(),
            max_inflight: crate::generate::DEFAULT_GEN_INFLIGHT,
            failure_budget: DEFAULT_FAILURE_BUDGET,
            seed: 0,
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        validate_thresholds(&self.thresholds)?;
        if !(0.0..=1.0).contains(&self.failure_budget) {
            return Err(ExperimentError::InvalidThresholds(format!(
                "failure budget {} outside [0, 1]",
                self.failure_budget
            )));
        }
        Ok(())
    }
}

/// Scores for one arm, optionally at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmScores {
    pub arm: String,
    pub threshold: Option<f64>,
    pub rows: Vec<ScoreRow>,
    pub failures: usize,
}

pub fn question_id(position: usize) -> String {
    format!("q{position:05}")
}

/// Runs test questions through one generation setup and scores them.
pub struct Evaluator<'a, T> {
    pub test: &'a [TestPair],
    /// Embeds questions for retrieval and sentences for the CS metric.
    pub embedder: &'a dyn Embedder<T>,
    pub generator: &'a dyn GenerationClient,
    pub counter: &'a dyn TokenCounter,
    pub budgets: Budgets,
    pub template: PromptTemplate,
    pub max_inflight: usize,
    pub failure_budget: f64,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    fn score_all<F>(&self, arm: &str, threshold: Option<f64>, answer: F) -> Result<ArmScores, ExperimentError>
    where
        F: Fn(&TestPair) -> Result<String, String> + Sync,
    {
        if self.test.is_empty() {
            return Err(ExperimentError::EmptyTestSet);
        }
        let indexed: Vec<(usize, &TestPair)> = self.test.iter().enumerate().collect();
        let results = map_bounded(&indexed, self.max_inflight, |(i, pair)| {
            let id = question_id(*i);
            match answer(pair) {
                Ok(text) => (score_row(&id, &text, &pair.answer_text, self.embedder), false),
                Err(e) => {
                    log::warn!("{arm} {id}: {e}; scoring as zero");
                    (ScoreRow::zero(id), true)
                }
            }
        });
        let failures = results.iter().filter(|(_, failed)| *failed).count();
        let total = results.len();
        if failures as f64 > self.failure_budget * total as f64 {
            return Err(ExperimentError::Aborted {
                arm: arm.to_owned(),
                failures,
                total,
            });
        }
        let mut rows: Vec<ScoreRow> = results.into_iter().map(|(r, _)| r).collect();
        rows.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        Ok(ArmScores {
            arm: arm.to_owned(),
            threshold,
            rows,
            failures,
        })
    }

    /// Every question prompted without a context block.
    pub fn run_baseline(&self, arm: &str) -> Result<ArmScores, ExperimentError> {
        self.score_all(arm, None, |pair| {
            let prompt = context_free_prompt(&pair.question, &self.template, self.counter, self.budgets)
                .map_err(|e| e.to_string())?;
            self.generator
                .generate(&generation_request(prompt, self.budgets))
                .map_err(|e| e.to_string())
        })
    }

    /// One arm per threshold, answering through retrieval from `index`.
    pub fn run_sweep(
        &self,
        arm: &str,
        index: &IndexedDataset<T>,
        thresholds: &[f64],
    ) -> Result<Vec<ArmScores>, ExperimentError> {
        validate_thresholds(thresholds)?;
        let pipeline = RagPipeline {
            index,
            embedder: self.embedder,
            generator: self.generator,
            counter: self.counter,
            budgets: self.budgets,
            template: self.template.clone(),
        };
        thresholds
            .iter()
            .map(|&tau| {
                self.score_all(arm, Some(tau), |pair| {
                    pipeline
                        .answer(&pair.question, T::of(tau))
                        .map(|a| a.generated_text)
                        .map_err(|e| e.to_string())
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub rouge: f64,
    pub meteor: f64,
    pub bleu: f64,
    pub cs: f64,
}

impl Means {
    /// Sums in question-id order, then divides.
    pub fn of(rows: &[ScoreRow]) -> Self {
        let mut sorted: Vec<&ScoreRow> = rows.iter().collect();
        sorted.sort_by(|a, b| a.question_id.cmp(&b.question_id));
        let mut m = Means {
            rouge: 0.0,
            meteor: 0.0,
            bleu: 0.0,
            cs: 0.0,
        };
        for r in &sorted {
            m.rouge += r.rouge;
            m.meteor += r.meteor;
            m.bleu += r.bleu;
            m.cs += r.cs;
        }
        let n = sorted.len().max(1) as f64;
        m.rouge /= n;
        m.meteor /= n;
        m.bleu /= n;
        m.cs /= n;
        m
    }

    pub fn values(&self) -> [f64; 4] {
        [self.rouge, self.meteor, self.bleu, self.cs]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub arm: String,
    /// For swept arms, the threshold the row reports.
    pub threshold: Option<f64>,
    pub n: usize,
    pub means: Means,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub arm: String,
    pub over: String,
    pub metric: String,
    /// `(a - b) / b`, `None` when `b` is zero.
    pub relative_to_other: Option<f64>,
    /// `(a - b) / a`, `None` when `a` is zero.
    pub relative_to_self: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    /// One row per arm; swept arms report their best threshold.
    pub rows: Vec<ReportRow>,
    /// Every threshold of every swept arm.
    pub sweep: Vec<ReportRow>,
    pub best_threshold: BTreeMap<String, f64>,
    pub deltas: Vec<Delta>,
}

impl ReportTable {
    pub fn row(&self, arm: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    pub fn delta(&self, arm: &str, over: &str, metric: &str) -> Option<&Delta> {
        self.deltas
            .iter()
            .find(|d| d.arm == arm && d.over == over && d.metric == metric)
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den != 0.0).then(|| num / den)
}

/// Relative deltas for every ordered pair of rows and every metric.
pub fn deltas(rows: &[ReportRow]) -> Vec<Delta> {
    let mut out = Vec::new();
    for a in rows {
        for b in rows {
            if a.arm == b.arm {
                continue;
            }
            for (k, metric) in METRIC_NAMES.iter().enumerate() {
                let (va, vb) = (a.means.values()[k], b.means.values()[k]);
                out.push(Delta {
                    arm: a.arm.clone(),
                    over: b.arm.clone(),
                    metric: (*metric).to_owned(),
                    relative_to_other: ratio(va - vb, vb),
                    relative_to_self: ratio(va - vb, va),
                });
            }
        }
    }
    out
}

/// Averages each arm. Arms sharing a name with thresholds form a sweep
/// whose headline row is the threshold with the highest mean CS, the lower
/// threshold winning ties. Rows keep first-appearance order.
pub fn summarize(arms: &[ArmScores]) -> ReportTable {
    let mut order: Vec<&str> = Vec::new();
    for a in arms {
        if !order.contains(&a.arm.as_str()) {
            order.push(&a.arm);
        }
    }
    let mut rows = Vec::new();
    let mut sweep = Vec::new();
    let mut best_threshold = BTreeMap::new();
    for name in order {
        let members: Vec<&ArmScores> = arms.iter().filter(|a| a.arm == name).collect();
        let mut swept: Vec<ReportRow> = members
            .iter()
            .filter_map(|a| {
                a.threshold.map(|t| ReportRow {
                    arm: name.to_owned(),
                    threshold: Some(t),
                    n: a.rows.len(),
                    means: Means::of(&a.rows),
                })
            })
            .collect();
        if swept.is_empty() {
            let all: Vec<ScoreRow> = members.iter().flat_map(|a| a.rows.iter().cloned()).collect();
            rows.push(ReportRow {
                arm: name.to_owned(),
                threshold: None,
                n: all.len(),
                means: Means::of(&all),
            });
            continue;
        }
        swept.sort_by(|a, b| a.threshold.partial_cmp(&b.threshold).unwrap_or(std::cmp::Ordering::Equal));
        let mut best = &swept[0];
        for r in &swept[1..] {
            if r.means.cs > best.means.cs {
                best = r;
            }
        }
        best_threshold.insert(name.to_owned(), best.threshold.unwrap_or_default());
        rows.push(best.clone());
        sweep.extend(swept);
    }
    let deltas = deltas(&rows);
    ReportTable {
        rows,
        sweep,
        best_threshold,
        deltas,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRecord {
    section: String,
    arm: String,
    threshold: Option<f64>,
    n: usize,
    rouge: f64,
    meteor: f64,
    bleu: f64,
    cs: f64,
}

fn csv_record(section: &str, row: &ReportRow) -> CsvRecord {
    CsvRecord {
        section: section.to_owned(),
        arm: row.arm.clone(),
        threshold: row.threshold,
        n: row.n,
        rouge: row.means.rouge,
        meteor: row.means.meteor,
        bleu: row.means.bleu,
        cs: row.means.cs,
    }
}

pub fn write_report_csv(path: &Path, table: &ReportTable) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in &table.rows {
        w.serialize(csv_record("arm", row))?;
    }
    for row in &table.sweep {
        w.serialize(csv_record("sweep", row))?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds a table from its CSV form; deltas and best thresholds are
/// recomputed from the arm rows.
pub fn read_report_csv(path: &Path) -> Result<ReportTable, ExperimentError> {
    let mut rows = Vec::new();
    let mut sweep = Vec::new();
    for rec in csv::Reader::from_path(path)?.deserialize::<CsvRecord>() {
        let rec = rec?;
        let row = ReportRow {
            arm: rec.arm,
            threshold: rec.threshold,
            n: rec.n,
            means: Means {
                rouge: rec.rouge,
                meteor: rec.meteor,
                bleu: rec.bleu,
                cs: rec.cs,
            },
        };
        match rec.section.as_str() {
            "arm" => rows.push(row),
            "sweep" => sweep.push(row),
            other => return Err(ExperimentError::Malformed(format!("unknown section {other:?}"))),
        }
    }
    let best_threshold = rows
        .iter()
        .filter_map(|r| r.threshold.map(|t| (r.arm.clone(), t)))
        .collect();
    let deltas = deltas(&rows);
    Ok(ReportTable {
        rows,
        sweep,
        best_threshold,
        deltas,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub arm: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarData {
    pub axes: Vec<String>,
    pub series: Vec<RadarSeries>,
}

pub fn radar_data(table: &ReportTable) -> RadarData {
    RadarData {
        axes: METRIC_NAMES.iter().map(|s| (*s).to_owned()).collect(),
        series: table
            .rows
            .iter()
            .map(|r| RadarSeries {
                arm: r.arm.clone(),
                values: r.means.values().to_vec(),
            })
            .collect(),
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Self-contained SVG radar chart; axes run from 0 at the centre to 1.
pub fn radar_svg(data: &RadarData) -> String {
    let (cx, cy, r) = (200.0f64, 200.0f64, 150.0f64);
    let k = data.axes.len().max(1);
    let point = |axis: usize, value: f64| {
        let angle = -std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * axis as f64 / k as f64;
        let v = value.clamp(0.0, 1.0);
        (cx + r * v * angle.cos(), cy + r * v * angle.sin())
    };
    let height = 420 + 20 * data.series.len();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="400" height="{height}" viewBox="0 0 400 {height}">"#
    );
    for ring in 1..=4 {
        let pts: Vec<String> = (0..k)
            .map(|a| {
                let (x, y) = point(a, ring as f64 / 4.0);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r##"  <polygon points="{}" fill="none" stroke="#cccccc"/>"##,
            pts.join(" ")
        );
    }
    for (a, name) in data.axes.iter().enumerate() {
        let (x, y) = point(a, 1.0);
        let (lx, ly) = point(a, 1.12);
        let _ = writeln!(
            svg,
            r##"  <line x1="{cx:.2}" y1="{cy:.2}" x2="{x:.2}" y2="{y:.2}" stroke="#999999"/>"##
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" font-size="12">{}</text>"#,
            xml_escape(name)
        );
    }
    for (i, s) in data.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(a, &v)| {
                let (x, y) = point(a, v);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            svg,
            r#"  <polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="{color}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"  <text x="10" y="{}" fill="{color}" font-size="12">{}</text>"#,
            410 + 20 * i,
            xml_escape(&s.arm)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Serialize, Deserialize)]
struct ScoreRecord {
    arm: String,
    threshold: Option<f64>,
    question_id: String,
    rouge: f64,
    meteor: f64,
    bleu: f64,
    cs: f64,
}

pub fn write_scores(path: &Path, arms: &[ArmScores]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    for a in arms {
        for r in &a.rows {
            w.serialize(ScoreRecord {
                arm: a.arm.clone(),
                threshold: a.threshold,
                question_id: r.question_id.clone(),
                rouge: r.rouge,
                meteor: r.meteor,
                bleu: r.bleu,
                cs: r.cs,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads per-question scores back, one [`ArmScores`] per consecutive run
/// of (arm, threshold). Failure counts are not persisted and read as zero.
pub fn read_scores(path: &Path) -> Result<Vec<ArmScores>, ExperimentError> {
    let mut arms: Vec<ArmScores> = Vec::new();
    for rec in csv::Reader::from_path(path)?.deserialize::<ScoreRecord>() {
        let rec = rec?;
        let row = ScoreRow {
            question_id: rec.question_id,
            rouge: rec.rouge,
            meteor: rec.meteor,
            bleu: rec.bleu,
            cs: rec.cs,
        };
        match arms.last_mut() {
            Some(last) if last.arm == rec.arm && last.threshold == rec.threshold => last.rows.push(row),
            _ => arms.push(ArmScores {
                arm: rec.arm,
                threshold: rec.threshold,
                rows: vec![row],
                failures: 0,
            }),
        }
    }
    Ok(arms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub radar_json: PathBuf,
    pub radar_svg: Option<PathBuf>,
}

/// Writes `report.csv`, `report.json`, `radar.json` and optionally
/// `radar.svg` into `dir`, creating it if needed.
pub fn emit_report(table: &ReportTable, dir: &Path, svg: bool) -> Result<ReportFiles, ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let files = ReportFiles {
        csv: dir.join("report.csv"),
        json: dir.join("report.json"),
        radar_json: dir.join("radar.json"),
        radar_svg: svg.then(|| dir.join("radar.svg")),
    };
    write_report_csv(&files.csv, table)?;
    std::fs::write(&files.json, serde_json::to_string_pretty(table)? + "\n")?;
    let radar = radar_data(table);
    std::fs::write(&files.radar_json, serde_json::to_string_pretty(&radar)? + "\n")?;
    if let Some(path) = &files.radar_svg {
        std::fs::write(path, radar_svg(&radar))?;
    }
    Ok(files)
}
