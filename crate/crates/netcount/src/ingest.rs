//! Flat-file ingestion: event, presence, and covariate tables.
//!
//! All inputs are UTF-8 comma-separated text with a header row:
//!
//! * events: `period,sender,receiver,count[,value]`
//! * presence: `actor,first_period,last_period` or long form `actor,period`
//! * covariates: `name,actor,period,value` (node level) or
//!   `name,sender,receiver,period,value` (dyad level)
//!
//! Period columns hold calendar labels (e.g. years). They are mapped to the
//! 1-based internal index via [`FormatConfig::first_period`]; the label of
//! period 1 is retained on the panel as metadata.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::covariates::{CovariatePolicies, CovariateError, CovariateTable};
use crate::network::{ActorRegistry, EventPanel, EventRecord, Period};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{path} row {row}: {message}")]
    Row {
        path: String,
        row: usize,
        message: String,
    },
    #[error("{path}: missing column `{column}` (header must be `{expected}`)")]
    Header {
        path: String,
        column: String,
        expected: String,
    },
    #[error("cannot determine the number of periods: no rows and no declared period count")]
    NoPeriods,
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
    #[error(transparent)]
    Covariate(#[from] CovariateError),
}

/// Ingestion options shared by every file of one data set.
#[derive(Debug, Clone, Default)]
pub struct FormatConfig {
    /// Declared number of periods `T`; inferred from the data when absent.
    pub periods: Option<usize>,
    /// Calendar label of period 1 (default 1, i.e. periods are already 1-based).
    pub first_period: Option<i64>,
    /// Declared actor roster; actors found in rows are appended after these.
    pub actors: Option<Vec<String>>,
}

impl FormatConfig {
    fn base(&self) -> i64 {
        self.first_period.unwrap_or(1)
    }

    /// Maps a calendar label to the internal period index, rejecting labels
    /// before the base and (when `T` is declared) beyond it.
    fn map_period(&self, raw: i64, path: &str, row: usize) -> Result<Period, IngestError> {
        let t = raw - self.base() + 1;
        if t < 1 {
            return Err(IngestError::Row {
                path: path.into(),
                row,
                message: format!("period {raw} precedes the first period {}", self.base()),
            });
        }
        let t = t as usize;
        if let Some(max) = self.periods {
            if t > max {
                return Err(IngestError::Row {
                    path: path.into(),
                    row,
                    message: format!("period {raw} is outside the declared range of {max} periods"),
                });
            }
        }
        Ok(t)
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

struct Table {
    path: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    fn read<R: Read>(reader: R, path: &str) -> Result<Self, IngestError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|source| IngestError::Csv {
                path: path.into(),
                source,
            })?
            .iter()
            .map(|h| h.to_ascii_lowercase())
            .collect();
        let mut rows = Vec::new();
        for (k, record) in rdr.records().enumerate() {
            let record = record.map_err(|source| IngestError::Csv {
                path: path.into(),
                source,
            })?;
            let fields: Vec<String> = record.iter().map(|f| f.to_owned()).collect();
            if fields.iter().all(|f| f.is_empty()) {
                continue;
            }
            // Data row numbers are 1-based and exclude the header.
            rows.push((k + 1, fields));
        }
        Ok(Self {
            path: path.into(),
            header,
            rows,
        })
    }

    fn column(&self, name: &str, expected: &str) -> Result<usize, IngestError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::Header {
                path: self.path.clone(),
                column: name.into(),
                expected: expected.into(),
            })
    }

    fn field<'a>(&self, row: usize, fields: &'a [String], ix: usize) -> Result<&'a str, IngestError> {
        fields.get(ix).map(|s| s.as_str()).ok_or_else(|| IngestError::Row {
            path: self.path.clone(),
            row,
            message: "row has fewer fields than the header".into(),
        })
    }

    fn parse<T: std::str::FromStr>(
        &self,
        row: usize,
        raw: &str,
        what: &str,
    ) -> Result<T, IngestError> {
        raw.parse().map_err(|_| IngestError::Row {
            path: self.path.clone(),
            row,
            message: format!("cannot parse {what} from `{raw}`"),
        })
    }
}

/// Parses an event file into records, validating each row.
pub fn parse_event_records<R: Read>(
    reader: R,
    path: &str,
    config: &FormatConfig,
) -> Result<Vec<EventRecord>, IngestError> {
    let table = Table::read(reader, path)?;
    let expected = "period,sender,receiver,count[,value]";
    let c_period = table.column("period", expected)?;
    let c_sender = table.column("sender", expected)?;
    let c_receiver = table.column("receiver", expected)?;
    let c_count = table.column("count", expected)?;
    let c_value = table.header.iter().position(|h| h == "value");

    let mut records = Vec::with_capacity(table.rows.len());
    for (row, fields) in &table.rows {
        let row = *row;
        let raw_period: i64 = table.parse(row, table.field(row, fields, c_period)?, "period")?;
        let period = config.map_period(raw_period, &table.path, row)?;
        let sender = table.field(row, fields, c_sender)?.to_owned();
        let receiver = table.field(row, fields, c_receiver)?.to_owned();
        if sender.is_empty() || receiver.is_empty() {
            return Err(IngestError::Row {
                path: table.path.clone(),
                row,
                message: "empty actor id".into(),
            });
        }
        if sender == receiver {
            return Err(IngestError::Row {
                path: table.path.clone(),
                row,
                message: format!("sender and receiver are both `{sender}`"),
            });
        }
        let count: i64 = table.parse(row, table.field(row, fields, c_count)?, "count")?;
        if count < 1 {
            return Err(IngestError::Row {
                path: table.path.clone(),
                row,
                message: format!("count must be a positive integer, got {count}"),
            });
        }
        let value = match c_value {
            Some(ix) => {
                let raw = fields.get(ix).map(|s| s.as_str()).unwrap_or("");
                if raw.is_empty() {
                    None
                } else {
                    let v: f64 = table.parse(row, raw, "value")?;
                    if !v.is_finite() || v < 0.0 {
                        return Err(IngestError::Row {
                            path: table.path.clone(),
                            row,
                            message: format!("value must be a finite nonnegative number, got {raw}"),
                        });
                    }
                    Some(v)
                }
            }
            None => None,
        };
        records.push(EventRecord {
            period,
            sender,
            receiver,
            count: count as u64,
            value,
        });
    }
    Ok(records)
}

/// One presence-file row, already expanded to a set of periods.
#[derive(Debug, Clone)]
pub struct PresenceEntry {
    pub actor: String,
    pub periods: BTreeSet<Period>,
}

/// Parses a presence file in either the range form
/// (`actor,first_period,last_period`) or the long form (`actor,period`).
pub fn parse_presence<R: Read>(
    reader: R,
    path: &str,
    config: &FormatConfig,
) -> Result<Vec<PresenceEntry>, IngestError> {
    let table = Table::read(reader, path)?;
    let expected = "actor,first_period,last_period  or  actor,period";
    let c_actor = table.column("actor", expected)?;
    let range_form = table.header.iter().any(|h| h == "first_period");
    let mut entries = Vec::new();
    for (row, fields) in &table.rows {
        let row = *row;
        let actor = table.field(row, fields, c_actor)?.to_owned();
        let mut periods = BTreeSet::new();
        if range_form {
            let c_first = table.column("first_period", expected)?;
            let c_last = table.column("last_period", expected)?;
            let first: i64 = table.parse(row, table.field(row, fields, c_first)?, "first_period")?;
            let last: i64 = table.parse(row, table.field(row, fields, c_last)?, "last_period")?;
            if last < first {
                return Err(IngestError::Row {
                    path: table.path.clone(),
                    row,
                    message: format!("last_period {last} precedes first_period {first}"),
                });
            }
            for raw in first..=last {
                periods.insert(config.map_period(raw, &table.path, row)?);
            }
        } else {
            let c_period = table.column("period", expected)?;
            let raw: i64 = table.parse(row, table.field(row, fields, c_period)?, "period")?;
            periods.insert(config.map_period(raw, &table.path, row)?);
        }
        entries.push(PresenceEntry { actor, periods });
    }
    Ok(entries)
}

/// Assembles an [`EventPanel`] from parsed records and optional presence
/// entries.
///
/// Presence resolution, per actor:
/// * with presence-file entries: the file's period set, plus every period the
///   actor has events in (events force presence);
/// * without file entries but with events: every period between the first and
///   last appearance;
/// * declared-roster actors with neither: all periods.
pub fn build_panel(
    records: &[EventRecord],
    presence: Option<&[PresenceEntry]>,
    config: &FormatConfig,
) -> Result<EventPanel, IngestError> {
    let mut registry = ActorRegistry::new();
    if let Some(roster) = &config.actors {
        for id in roster {
            registry.insert(id);
        }
    }
    for rec in records {
        registry.insert(&rec.sender);
        registry.insert(&rec.receiver);
    }
    if let Some(entries) = presence {
        for e in entries {
            registry.insert(&e.actor);
        }
    }

    let max_event_period = records.iter().map(|r| r.period).max();
    let max_presence_period = presence
        .and_then(|es| es.iter().flat_map(|e| e.periods.iter().copied()).max());
    let periods = match (config.periods, max_event_period, max_presence_period) {
        (Some(t), _, _) => t,
        (None, ev, pr) => ev.into_iter().chain(pr).max().ok_or(IngestError::NoPeriods)?,
    };

    // Periods in which each actor has events.
    let n = registry.len();
    let mut event_periods: Vec<BTreeSet<Period>> = vec![BTreeSet::new(); n];
    for rec in records {
        let i = registry.index_of(&rec.sender).unwrap();
        let j = registry.index_of(&rec.receiver).unwrap();
        event_periods[i].insert(rec.period);
        event_periods[j].insert(rec.period);
    }
    let mut file_periods: Vec<Option<BTreeSet<Period>>> = vec![None; n];
    if let Some(entries) = presence {
        for e in entries {
            let ix = registry.index_of(&e.actor).unwrap();
            file_periods[ix]
                .get_or_insert_with(BTreeSet::new)
                .extend(e.periods.iter().copied());
        }
    }

    for a in 0..n {
        let resolved: BTreeSet<Period> = match (&file_periods[a], event_periods[a].is_empty()) {
            (Some(file), _) => file.union(&event_periods[a]).copied().collect(),
            (None, false) => {
                let first = *event_periods[a].iter().next().unwrap();
                let last = *event_periods[a].iter().next_back().unwrap();
                (first..=last).collect()
            }
            (None, true) => (1..=periods).collect(),
        };
        for t in resolved {
            if t <= periods {
                registry.add_presence(a, t);
            }
        }
    }

    Ok(EventPanel::from_records(
        registry,
        periods,
        config.base(),
        records,
    )?)
}

/// Reads an event file and builds the panel in one step.
pub fn load_events(path: &Path, config: &FormatConfig) -> Result<EventPanel, IngestError> {
    let records = parse_event_records(open(path)?, &path.display().to_string(), config)?;
    build_panel(&records, None, config)
}

/// Reads event and (optionally) presence files and builds the panel.
pub fn load_events_with_presence(
    events: &Path,
    presence: Option<&Path>,
    config: &FormatConfig,
) -> Result<EventPanel, IngestError> {
    let records = parse_event_records(open(events)?, &events.display().to_string(), config)?;
    let entries = match presence {
        Some(p) => Some(parse_presence(open(p)?, &p.display().to_string(), config)?),
        None => None,
    };
    build_panel(&records, entries.as_deref(), config)
}

/// Parses one covariate file (node or dyad level, detected from the header)
/// into `table`.
pub fn parse_covariates<R: Read>(
    reader: R,
    path: &str,
    config: &FormatConfig,
    table: &mut CovariateTable,
) -> Result<(), IngestError> {
    let t = Table::read(reader, path)?;
    let node_expected = "name,actor,period,value";
    let dyad_expected = "name,sender,receiver,period,value";
    let c_name = t.column("name", node_expected)?;
    let c_period = t.column("period", node_expected)?;
    let c_value = t.column("value", node_expected)?;
    let dyad = t.header.iter().any(|h| h == "sender");

    for (row, fields) in &t.rows {
        let row = *row;
        let name = t.field(row, fields, c_name)?.to_owned();
        let raw_period: i64 = t.parse(row, t.field(row, fields, c_period)?, "period")?;
        let period = config.map_period(raw_period, &t.path, row)?;
        let value: f64 = t.parse(row, t.field(row, fields, c_value)?, "value")?;
        if !value.is_finite() {
            return Err(IngestError::Row {
                path: t.path.clone(),
                row,
                message: format!("covariate `{name}` has a non-finite value"),
            });
        }
        if dyad {
            let c_sender = t.column("sender", dyad_expected)?;
            let c_receiver = t.column("receiver", dyad_expected)?;
            let sender = t.field(row, fields, c_sender)?.to_owned();
            let receiver = t.field(row, fields, c_receiver)?.to_owned();
            table.insert_dyad(&name, &sender, &receiver, period, value)?;
        } else {
            let c_actor = t.column("actor", node_expected)?;
            let actor = t.field(row, fields, c_actor)?.to_owned();
            table.insert_node(&name, &actor, period, value)?;
        }
    }
    Ok(())
}

/// Loads any number of covariate files into a single table.
pub fn load_covariates(
    paths: &[std::path::PathBuf],
    config: &FormatConfig,
    policies: CovariatePolicies,
) -> Result<CovariateTable, IngestError> {
    let mut table = CovariateTable::new(policies);
    for path in paths {
        parse_covariates(open(path)?, &path.display().to_string(), config, &mut table)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_round_trip_through_records() {
        let csv = "period,sender,receiver,count\n1,A,B,2\n1,A,B,1\n3,B,A,4\n";
        let config = FormatConfig::default();
        let records = parse_event_records(csv.as_bytes(), "events.csv", &config).unwrap();
        let panel = build_panel(&records, None, &config).unwrap();
        assert_eq!(panel.periods(), 3);
        assert_eq!(panel.count(1, 0, 1), 3);
        assert_eq!(panel.count(3, 1, 0), 4);

        // Rebuilding from the panel's own records yields the same panel.
        let records2 = panel.to_records();
        let config2 = FormatConfig {
            periods: Some(panel.periods()),
            ..FormatConfig::default()
        };
        let rebuilt = build_panel(&records2, None, &config2).unwrap();
        for t in 1..=3 {
            for i in 0..2 {
                for j in 0..2 {
                    if i != j {
                        assert_eq!(panel.count(t, i, j), rebuilt.count(t, i, j));
                    }
                }
            }
        }
    }

    #[test]
    fn self_loop_row_is_rejected_with_row_number() {
        let csv = "period,sender,receiver,count\n1,A,A,1\n";
        let err =
            parse_event_records(csv.as_bytes(), "events.csv", &FormatConfig::default()).unwrap_err();
        match err {
            IngestError::Row { row, .. } => assert_eq!(row, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn negative_and_zero_counts_are_rejected() {
        for bad in ["-1", "0"] {
            let csv = format!("period,sender,receiver,count\n1,A,B,{bad}\n");
            assert!(parse_event_records(csv.as_bytes(), "e.csv", &FormatConfig::default()).is_err());
        }
    }

    #[test]
    fn period_outside_declared_range_is_rejected() {
        let csv = "period,sender,receiver,count\n7,A,B,1\n";
        let config = FormatConfig {
            periods: Some(5),
            ..FormatConfig::default()
        };
        assert!(parse_event_records(csv.as_bytes(), "e.csv", &config).is_err());
    }

    #[test]
    fn calendar_labels_map_to_internal_periods() {
        let csv = "period,sender,receiver,count\n1952,A,B,1\n";
        let config = FormatConfig {
            periods: Some(5),
            first_period: Some(1950),
            actors: None,
        };
        let records = parse_event_records(csv.as_bytes(), "e.csv", &config).unwrap();
        assert_eq!(records[0].period, 3);
        let panel = build_panel(&records, None, &config).unwrap();
        assert_eq!(panel.period_label(3), 1952);
    }

    #[test]
    fn declared_roster_without_events_is_present_everywhere() {
        let config = FormatConfig {
            periods: Some(4),
            first_period: None,
            actors: Some(vec!["A".into(), "B".into()]),
        };
        let panel = build_panel(&[], None, &config).unwrap();
        assert_eq!(panel.risk_set(1).unwrap().len(), 2);
        assert_eq!(panel.risk_set(4).unwrap().len(), 2);
    }

    #[test]
    fn event_appearance_fallback_spans_first_to_last() {
        let csv = "period,sender,receiver,count\n2,A,B,1\n5,A,B,1\n";
        let config = FormatConfig {
            periods: Some(6),
            ..FormatConfig::default()
        };
        let records = parse_event_records(csv.as_bytes(), "e.csv", &config).unwrap();
        let panel = build_panel(&records, None, &config).unwrap();
        let a = panel.registry().index_of("A").unwrap();
        let spans: Vec<Period> = panel.registry().presence(a).iter().copied().collect();
        assert_eq!(spans, vec![2, 3, 4, 5]);
    }

    #[test]
    fn presence_file_overrides_span_but_events_force_presence() {
        let events = "period,sender,receiver,count\n2,A,B,1\n5,A,B,1\n";
        let presence = "actor,period\nA,2\nA,5\nB,1\nB,2\nB,5\n";
        let config = FormatConfig {
            periods: Some(6),
            ..FormatConfig::default()
        };
        let records = parse_event_records(events.as_bytes(), "e.csv", &config).unwrap();
        let entries = parse_presence(presence.as_bytes(), "p.csv", &config).unwrap();
        let panel = build_panel(&records, Some(&entries), &config).unwrap();
        let a = panel.registry().index_of("A").unwrap();
        let got: Vec<Period> = panel.registry().presence(a).iter().copied().collect();
        assert_eq!(got, vec![2, 5], "no span filling when a file entry exists");
    }

    #[test]
    fn presence_range_form_expands() {
        let presence = "actor,first_period,last_period\nA,2,4\n";
        let config = FormatConfig {
            periods: Some(5),
            ..FormatConfig::default()
        };
        let entries = parse_presence(presence.as_bytes(), "p.csv", &config).unwrap();
        assert_eq!(
            entries[0].periods.iter().copied().collect::<Vec<_>>(),
            vec![2, 3, 4]
        );
    }
}
