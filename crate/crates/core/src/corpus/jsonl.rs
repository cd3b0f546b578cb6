//! Corpus file formats.
//!
//! Three files make up a dataset on disk:
//!
//! * `instances.jsonl` — one instance per line:
//!   `{"id": "...", "tokens": [...], "head": [s,e], "tail": [s,e], "relation": "name"}`
//! * `relations.json` — array of `{"name": ..., "symmetric": bool, "analog_of": "name"?}`;
//!   array order defines the dense `rel_id`s.
//! * `splits.json` — map of instance id to `"train" | "validation" | "test"`.
//!
//! `splits.json` is optional on load; a missing file gets a deterministic
//! 3:1:1 stratified assignment (seed 0).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    assign_splits, validate_instance, CorpusError, Dataset, Instance, RelId, Relation, Span,
    Split, DEFAULT_TOKEN_LIMIT,
};

#[derive(Serialize, Deserialize)]
struct InstanceLine {
    id: String,
    tokens: Vec<String>,
    head: [usize; 2],
    tail: [usize; 2],
    relation: String,
}

#[derive(Serialize, Deserialize)]
struct RelationEntry {
    name: String,
    symmetric: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    analog_of: Option<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Load the instance file against a known relation registry. Instance order
/// equals file order; every line is fully validated.
pub fn load_jsonl(path: &Path, relations: &[Relation]) -> Result<Vec<Instance>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let by_name: BTreeMap<&str, RelId> = relations
        .iter()
        .map(|r| (r.name.as_str(), r.rel_id))
        .collect();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: InstanceLine =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
                path: path.display().to_string(),
                line: line_no,
                message: e.to_string(),
            })?;
        let rel_id = *by_name
            .get(parsed.relation.as_str())
            .ok_or(CorpusError::UnknownRelation {
                name: parsed.relation.clone(),
                line: line_no,
            })?;
        let inst = Instance {
            instance_id: parsed.id,
            tokens: parsed.tokens,
            head_span: Span::new(parsed.head[0], parsed.head[1]),
            tail_span: Span::new(parsed.tail[0], parsed.tail[1]),
            relation: rel_id,
        };
        let violations = validate_instance(&inst, DEFAULT_TOKEN_LIMIT);
        if !violations.is_empty() {
            return Err(CorpusError::InvalidInstance {
                instance_id: inst.instance_id,
                violations,
            });
        }
        out.push(inst);
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    Ok(out)
}

fn load_relations(path: &Path) -> Result<Vec<Relation>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let entries: Vec<RelationEntry> =
        serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: 0,
            message: e.to_string(),
        })?;
    let by_name: BTreeMap<&str, RelId> = entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.name.as_str(), i as RelId))
        .collect();
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let analog_of = match &e.analog_of {
                Some(name) => Some(*by_name.get(name.as_str()).ok_or_else(|| {
                    CorpusError::Inconsistent(format!(
                        "relation {} names unknown analog {:?}",
                        e.name, name
                    ))
                })?),
                None => None,
            };
            Ok(Relation {
                rel_id: i as RelId,
                name: e.name.clone(),
                symmetric: e.symmetric,
                analog_of,
            })
        })
        .collect()
}

/// Load a full dataset from a directory holding `instances.jsonl`,
/// `relations.json`, and optionally `splits.json`.
pub fn load_dataset(dir: &Path) -> Result<Dataset, CorpusError> {
    let relations = load_relations(&dir.join("relations.json"))?;
    let instances = load_jsonl(&dir.join("instances.jsonl"), &relations)?;
    let splits_path = dir.join("splits.json");
    let ds = Dataset {
        relations,
        instances,
        splits: BTreeMap::new(),
    };
    let ds = if splits_path.exists() {
        let text = fs::read_to_string(&splits_path).map_err(|e| io_err(&splits_path, e))?;
        let splits: BTreeMap<String, Split> =
            serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
                path: splits_path.display().to_string(),
                line: 0,
                message: e.to_string(),
            })?;
        let ds = Dataset { splits, ..ds };
        ds.validate()?;
        ds
    } else {
        assign_splits(ds, (3, 1, 1), 0)?
    };
    Ok(ds)
}

/// Write the three corpus files into `dir`. Byte-stable for a fixed dataset.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), CorpusError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;

    let entries: Vec<RelationEntry> = ds
        .relations
        .iter()
        .map(|r| RelationEntry {
            name: r.name.clone(),
            symmetric: r.symmetric,
            analog_of: r.analog_of.map(|id| ds.relations[id as usize].name.clone()),
        })
        .collect();
    let rel_path = dir.join("relations.json");
    let rel_json = serde_json::to_string_pretty(&entries).expect("serialize relations");
    fs::write(&rel_path, rel_json + "\n").map_err(|e| io_err(&rel_path, e))?;

    let inst_path = dir.join("instances.jsonl");
    let mut file = File::create(&inst_path).map_err(|e| io_err(&inst_path, e))?;
    for inst in &ds.instances {
        let line = InstanceLine {
            id: inst.instance_id.clone(),
            tokens: inst.tokens.clone(),
            head: [inst.head_span.start, inst.head_span.end],
            tail: [inst.tail_span.start, inst.tail_span.end],
            relation: ds.relations[inst.relation as usize].name.clone(),
        };
        let json = serde_json::to_string(&line).expect("serialize instance");
        writeln!(file, "{json}").map_err(|e| io_err(&inst_path, e))?;
    }

    let split_path = dir.join("splits.json");
    let split_json = serde_json::to_string_pretty(&ds.splits).expect("serialize splits");
    fs::write(&split_path, split_json + "\n").map_err(|e| io_err(&split_path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};

    fn registry() -> Vec<Relation> {
        vec![
            Relation {
                rel_id: 0,
                name: "spouse".into(),
                symmetric: true,
                analog_of: None,
            },
            Relation {
                rel_id: 1,
                name: "employer".into(),
                symmetric: false,
                analog_of: None,
            },
        ]
    }

    fn write_lines(dir: &Path, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.join("instances.jsonl");
        fs::write(&path, lines.join("\n")).unwrap();
        path
    }

    #[test]
    fn loads_a_well_formed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[r#"{"id":"a","tokens":["x","loves","y"],"head":[0,1],"tail":[2,3],"relation":"spouse"}"#],
        );
        let insts = load_jsonl(&path, &registry()).unwrap();
        assert_eq!(insts.len(), 1);
        assert_eq!(insts[0].head_span, Span::new(0, 1));
        assert_eq!(insts[0].relation, 0);
    }

    #[test]
    fn rejects_overlapping_spans() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[r#"{"id":"a","tokens":["x","y","z"],"head":[0,2],"tail":[1,3],"relation":"spouse"}"#],
        );
        let err = load_jsonl(&path, &registry()).unwrap_err();
        assert!(matches!(err, CorpusError::InvalidInstance { .. }));
    }

    #[test]
    fn rejects_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), &[]);
        assert!(matches!(
            load_jsonl(&path, &registry()),
            Err(CorpusError::EmptyDataset)
        ));
    }

    #[test]
    fn reports_parse_error_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[
                r#"{"id":"a","tokens":["x","loves","y"],"head":[0,1],"tail":[2,3],"relation":"spouse"}"#,
                r#"{"id":"b", nope}"#,
            ],
        );
        match load_jsonl(&path, &registry()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_relation() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(
            dir.path(),
            &[r#"{"id":"a","tokens":["x","loves","y"],"head":[0,1],"tail":[2,3],"relation":"nope"}"#],
        );
        match load_jsonl(&path, &registry()) {
            Err(CorpusError::UnknownRelation { name, line }) => {
                assert_eq!(name, "nope");
                assert_eq!(line, 1);
            }
            other => panic!("expected unknown relation, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trips_exactly() {
        let ds = generate_synthetic(&SynthConfig {
            n_relations: 6,
            n_analog_pairs: 2,
            instances_per_relation: 8,
            shortcut_strength: 0.9,
            entity_type_vocab_size: 4,
            template_length: (4, 7),
            symmetric_fraction: 0.3,
            seed: 21,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn save_is_byte_stable() {
        let ds = generate_synthetic(&SynthConfig::default_small(5)).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_dataset(&ds, d1.path()).unwrap();
        save_dataset(&ds, d2.path()).unwrap();
        for name in ["instances.jsonl", "relations.json", "splits.json"] {
            let a = fs::read(d1.path().join(name)).unwrap();
            let b = fs::read(d2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between saves");
        }
    }
}
