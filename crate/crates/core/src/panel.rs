//! Gap acquisition: the provider capability, order symmetrisation, and the
//! JSONL replay format.
//!
//! A record file is one JSON object per line:
//!
//! ```text
//! {"scenario_id":"s1","country":"USA","attribute":"Age","base":{"ab":0.8,"ba":-0.2},"personas":[{"id":"p1","ab":1.0,"ba":-1.0}]}
//! ```
//!
//! Gap values may be written as JSON numbers or as strings (`"NaN"`, `"inf"`);
//! strings are parsed so that non-finite values surface as validation errors
//! naming the scenario rather than as opaque parse failures.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::model::{Attribute, PanelGapRecord, PersonaGap, RecordError};
use crate::rng;
use crate::simulate::SyntheticPopulation;

/// Which of the two answer-token orderings a gap was read under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenOrder {
    AB,
    BA,
}

/// Whose gap is being queried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapSource<'a> {
    Base,
    Persona(&'a str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("scenario `{scenario_id}` has no persona `{persona_id}`")]
    UnknownPersona {
        scenario_id: String,
        persona_id: String,
    },
}

/// A deterministic source of decision-logit gaps.
///
/// Identical queries must return identical values for the lifetime of the
/// provider, and implementations must tolerate concurrent queries.
pub trait GapProvider: Send + Sync {
    fn gap(
        &self,
        scenario_id: &str,
        source: GapSource<'_>,
        order: TokenOrder,
    ) -> Result<f64, ProviderError>;
}

/// Order-symmetrised gap `½(ab − ba)`, or `ab` unchanged when debiasing is off.
pub fn symmetrise_gap(ab: f64, ba: f64, debias_enabled: bool) -> f64 {
    if debias_enabled {
        0.5 * (ab - ba)
    } else {
        ab
    }
}

/// Symmetrises a record's base gap and every persona gap, in panel order.
pub fn symmetrise(record: &PanelGapRecord, debias_enabled: bool) -> (f64, Vec<f64>) {
    let base = symmetrise_gap(record.delta_base_ab, record.delta_base_ba, debias_enabled);
    let personas = record
        .persona_gaps
        .iter()
        .map(|p| symmetrise_gap(p.delta_ab, p.delta_ba, debias_enabled))
        .collect();
    (base, personas)
}

/// Queries `provider` for both orderings of the base and each persona.
pub fn acquire_record(
    provider: &dyn GapProvider,
    scenario_id: &str,
    country: &str,
    attribute: Attribute,
    persona_ids: &[String],
) -> Result<PanelGapRecord, ProviderError> {
    let q = |src, ord| provider.gap(scenario_id, src, ord);
    let persona_gaps = persona_ids
        .iter()
        .map(|id| {
            Ok(PersonaGap {
                persona_id: id.clone(),
                delta_ab: q(GapSource::Persona(id), TokenOrder::AB)?,
                delta_ba: q(GapSource::Persona(id), TokenOrder::BA)?,
            })
        })
        .collect::<Result<Vec<_>, ProviderError>>()?;
    Ok(PanelGapRecord {
        scenario_id: scenario_id.to_string(),
        country: country.to_string(),
        attribute,
        delta_base_ab: q(GapSource::Base, TokenOrder::AB)?,
        delta_base_ba: q(GapSource::Base, TokenOrder::BA)?,
        persona_gaps,
    })
}

/// Serves gaps from previously recorded panels.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    records: HashMap<String, PanelGapRecord>,
}

impl ReplayProvider {
    pub fn new(records: impl IntoIterator<Item = PanelGapRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| (r.scenario_id.clone(), r))
                .collect(),
        }
    }
}

impl GapProvider for ReplayProvider {
    fn gap(
        &self,
        scenario_id: &str,
        source: GapSource<'_>,
        order: TokenOrder,
    ) -> Result<f64, ProviderError> {
        let rec = self
            .records
            .get(scenario_id)
            .ok_or_else(|| ProviderError::UnknownScenario(scenario_id.to_string()))?;
        let (ab, ba) = match source {
            GapSource::Base => (rec.delta_base_ab, rec.delta_base_ba),
            GapSource::Persona(id) => {
                let p = rec
                    .persona_gaps
                    .iter()
                    .find(|p| p.persona_id == id)
                    .ok_or_else(|| ProviderError::UnknownPersona {
                        scenario_id: scenario_id.to_string(),
                        persona_id: id.to_string(),
                    })?;
                (p.delta_ab, p.delta_ba)
            }
        };
        Ok(match order {
            TokenOrder::AB => ab,
            TokenOrder::BA => ba,
        })
    }
}

/// Synthetic provider following the hierarchical Gaussian agent model.
///
/// For a scenario with population gap `δ_h`, base bias `β`, persona bias
/// `π` and positional offset `b`:
///
/// * base: `AB = δ_h + β + b`, `BA = −(δ_h + β) + b`
/// * persona `i`: `AB = δ_h + π + o_i + η_i + b`, `BA = −(δ_h + π + o_i + η_i) + b`
///
/// `η_i ~ N(0, τ²)` comes from the stream keyed by `(seed, scenario, persona)`,
/// `o_i` is the population's contested offset (`±g`, alternating by persona
/// number) and `b` is drawn once per scenario, so symmetrisation removes it.
#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    tau: f64,
    positional_bias_scale: f64,
    contested_offset: f64,
    base_bias: [f64; 6],
    persona_bias: [f64; 6],
    scenarios: HashMap<String, (Attribute, f64)>,
}

impl MockProvider {
    pub fn new(seed: u64, population: &SyntheticPopulation) -> Self {
        let mut base_bias = [0.0; 6];
        let mut persona_bias = [0.0; 6];
        for a in Attribute::ALL {
            base_bias[a.index()] = population.bias(a);
            persona_bias[a.index()] = population.persona_bias(a);
        }
        Self {
            seed,
            tau: population.tau,
            positional_bias_scale: population.positional_bias_scale,
            contested_offset: population.contested_offset,
            base_bias,
            persona_bias,
            scenarios: population
                .scenarios
                .iter()
                .map(|s| (s.id.clone(), (s.attribute, s.delta_h)))
                .collect(),
        }
    }

    fn positional_offset(&self, scenario_id: &str) -> f64 {
        if self.positional_bias_scale == 0.0 {
            return 0.0;
        }
        let z: f64 = StandardNormal.sample(&mut rng::stream(
            self.seed,
            &["positional", scenario_id],
        ));
        self.positional_bias_scale * (1.0 + 0.5 * z)
    }

    /// Persona noise `η_i` for this scenario, before scaling by `τ`.
    fn persona_noise(&self, scenario_id: &str, persona_id: &str) -> f64 {
        StandardNormal.sample(&mut rng::stream(
            self.seed,
            &["persona", scenario_id, persona_id],
        ))
    }

    fn contested(&self, persona_id: &str) -> f64 {
        if self.contested_offset == 0.0 {
            return 0.0;
        }
        let digits: String = persona_id
            .chars()
            .rev()
            .take_while(char::is_ascii_digit)
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        match digits.parse::<u64>() {
            Ok(k) if k % 2 == 1 => self.contested_offset,
            Ok(_) => -self.contested_offset,
            Err(_) => 0.0,
        }
    }
}

impl GapProvider for MockProvider {
    fn gap(
        &self,
        scenario_id: &str,
        source: GapSource<'_>,
        order: TokenOrder,
    ) -> Result<f64, ProviderError> {
        let &(attribute, delta_h) = self
            .scenarios
            .get(scenario_id)
            .ok_or_else(|| ProviderError::UnknownScenario(scenario_id.to_string()))?;
        let preference = match source {
            GapSource::Base => delta_h + self.base_bias[attribute.index()],
            GapSource::Persona(id) => {
                let eta = if self.tau == 0.0 {
                    0.0
                } else {
                    self.tau * self.persona_noise(scenario_id, id)
                };
                delta_h + self.persona_bias[attribute.index()] + self.contested(id) + eta
            }
        };
        let b = self.positional_offset(scenario_id);
        Ok(match order {
            TokenOrder::AB => preference + b,
            TokenOrder::BA => -preference + b,
        })
    }
}

/// Failure while reading or writing a record file.
#[derive(Debug, Error)]
pub enum PanelFileError {
    #[error("panel io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    Validation {
        line: usize,
        #[source]
        source: RecordError,
    },
}

impl PanelFileError {
    /// The offending scenario id, for validation failures.
    pub fn scenario_id(&self) -> Option<&str> {
        match self {
            PanelFileError::Validation { source, .. } => Some(match source {
                RecordError::EmptyPanel(id) => id,
                RecordError::NonFinite { scenario_id, .. } => scenario_id,
                RecordError::DuplicatePersona { scenario_id, .. } => scenario_id,
            }),
            _ => None,
        }
    }
}

fn gap_value<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Num {
        F(f64),
        S(String),
    }
    match Num::deserialize(d)? {
        Num::F(v) => Ok(v),
        Num::S(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| serde::de::Error::custom(format!("`{s}` is not a number"))),
    }
}

#[derive(Serialize, Deserialize)]
struct WirePair {
    #[serde(deserialize_with = "gap_value")]
    ab: f64,
    #[serde(deserialize_with = "gap_value")]
    ba: f64,
}

#[derive(Serialize, Deserialize)]
struct WirePersona {
    id: String,
    #[serde(deserialize_with = "gap_value")]
    ab: f64,
    #[serde(deserialize_with = "gap_value")]
    ba: f64,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    scenario_id: String,
    country: String,
    attribute: Attribute,
    base: WirePair,
    personas: Vec<WirePersona>,
}

impl From<WireRecord> for PanelGapRecord {
    fn from(w: WireRecord) -> Self {
        PanelGapRecord {
            scenario_id: w.scenario_id,
            country: w.country,
            attribute: w.attribute,
            delta_base_ab: w.base.ab,
            delta_base_ba: w.base.ba,
            persona_gaps: w
                .personas
                .into_iter()
                .map(|p| PersonaGap {
                    persona_id: p.id,
                    delta_ab: p.ab,
                    delta_ba: p.ba,
                })
                .collect(),
        }
    }
}

impl From<&PanelGapRecord> for WireRecord {
    fn from(r: &PanelGapRecord) -> Self {
        WireRecord {
            scenario_id: r.scenario_id.clone(),
            country: r.country.clone(),
            attribute: r.attribute,
            base: WirePair {
                ab: r.delta_base_ab,
                ba: r.delta_base_ba,
            },
            personas: r
                .persona_gaps
                .iter()
                .map(|p| WirePersona {
                    id: p.persona_id.clone(),
                    ab: p.delta_ab,
                    ba: p.delta_ba,
                })
                .collect(),
        }
    }
}

/// Parses and validates JSONL records. Blank lines are skipped.
pub fn read_panel(reader: impl Read) -> Result<Vec<PanelGapRecord>, PanelFileError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(&line).map_err(|e| PanelFileError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let record = PanelGapRecord::from(wire);
        record
            .validate()
            .map_err(|source| PanelFileError::Validation {
                line: lineno,
                source,
            })?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_panel_file(path: impl AsRef<Path>) -> Result<Vec<PanelGapRecord>, PanelFileError> {
    read_panel(File::open(path)?)
}

/// Writes records as compact JSONL. Values round-trip bit-exactly.
pub fn write_panel(mut writer: impl Write, records: &[PanelGapRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, &WireRecord::from(r))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_panel_file(path: impl AsRef<Path>, records: &[PanelGapRecord]) -> std::io::Result<()> {
    write_panel(BufWriter::new(File::create(path)?), records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(base: (f64, f64), personas: &[(f64, f64)]) -> PanelGapRecord {
        PanelGapRecord {
            scenario_id: "s".into(),
            country: "USA".into(),
            attribute: Attribute::Fitness,
            delta_base_ab: base.0,
            delta_base_ba: base.1,
            persona_gaps: personas
                .iter()
                .enumerate()
                .map(|(i, &(ab, ba))| PersonaGap {
                    persona_id: format!("p{i}"),
                    delta_ab: ab,
                    delta_ba: ba,
                })
                .collect(),
        }
    }

    #[test]
    fn symmetrise_examples() {
        assert_eq!(symmetrise_gap(1.0, -1.0, true), 1.0);
        assert_eq!(symmetrise_gap(1.0, 1.0, true), 0.0);
        assert_eq!(symmetrise_gap(0.8, -0.2, true), 0.5);
        assert_eq!(symmetrise_gap(0.8, -0.2, false), 0.8);
    }

    #[test]
    fn symmetrise_record() {
        let rec = record((0.8, -0.2), &[(1.0, -1.0), (1.0, 1.0)]);
        assert_eq!(symmetrise(&rec, true), (0.5, vec![1.0, 0.0]));
        assert_eq!(symmetrise(&rec, false), (0.8, vec![1.0, 1.0]));
    }

    #[test]
    fn empty_input_gives_no_records() {
        assert!(read_panel("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn non_finite_gap_is_validation_error() {
        let line = r#"{"scenario_id":"x9","country":"USA","attribute":"Age","base":{"ab":"NaN","ba":0.0},"personas":[{"id":"p1","ab":1.0,"ba":0.0}]}"#;
        let err = read_panel(line.as_bytes()).unwrap_err();
        assert!(matches!(err, PanelFileError::Validation { line: 1, .. }), "{err}");
        assert_eq!(err.scenario_id(), Some("x9"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "\n{\"scenario_id\": 3}\n";
        let err = read_panel(text.as_bytes()).unwrap_err();
        assert!(matches!(err, PanelFileError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn replay_answers_recorded_values() {
        let rec = record((0.8, -0.2), &[(1.0, -1.0)]);
        let p = ReplayProvider::new([rec.clone()]);
        let back = acquire_record(&p, "s", "USA", Attribute::Fitness, &["p0".into()]).unwrap();
        assert_eq!(back, rec);
        assert!(p.gap("nope", GapSource::Base, TokenOrder::AB).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn odd_under_ordering_swap(a in -50.0f64..50.0, b in -50.0f64..50.0) {
                prop_assert_eq!(symmetrise_gap(a, b, true), -symmetrise_gap(b, a, true));
            }

            #[test]
            fn no_debias_ignores_ba(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0) {
                prop_assert_eq!(symmetrise_gap(a, b, false), symmetrise_gap(a, c, false));
            }
        }
    }
}
