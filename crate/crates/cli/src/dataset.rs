//! On-disk dataset: one JSON file with split samples, plus PGM maps next to
//! it for every non-empty environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use socialcircle::segmap::{load_environment, save_environment, Environment};
use socialcircle::trajdata::{Case, SampleSpec, TrajectorySample};

use crate::{CliError, Result};

pub const DATASET_FILE: &str = "dataset.json";
const MAP_DIR: &str = "maps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    /// Environment name; `None` is the open, everywhere-walkable map.
    pub env: Option<String>,
    pub sample: TrajectorySample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub spec: SampleSpec,
    /// Environment name to map stem, relative to the dataset file.
    pub maps: BTreeMap<String, String>,
    pub train: Vec<Entry>,
    pub val: Vec<Entry>,
    pub test: Vec<Entry>,
}

/// Loaded dataset with environments attached.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: SampleSpec,
    pub train: Vec<Case>,
    pub val: Vec<Case>,
    pub test: Vec<Case>,
}

impl Dataset {
    pub fn all(&self) -> impl Iterator<Item = &Case> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

/// Split of named cases before writing.
#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<(Option<String>, Case)>,
    pub val: Vec<(Option<String>, Case)>,
    pub test: Vec<(Option<String>, Case)>,
}

/// Writes `dataset.json` and the maps into `dir`; returns written paths.
pub fn write(dir: &Path, spec: SampleSpec, splits: &Splits) -> Result<Vec<PathBuf>> {
    let mut envs: BTreeMap<String, Arc<Environment>> = BTreeMap::new();
    let mut entries = |cases: &[(Option<String>, Case)]| -> Vec<Entry> {
        cases
            .iter()
            .map(|(name, case)| {
                if let Some(n) = name {
                    envs.entry(n.clone()).or_insert_with(|| Arc::clone(&case.env));
                }
                Entry {
                    env: name.clone(),
                    sample: case.sample.clone(),
                }
            })
            .collect()
    };
    let train = entries(&splits.train);
    let val = entries(&splits.val);
    let test = entries(&splits.test);

    let mut written = Vec::new();
    let mut maps = BTreeMap::new();
    if !envs.is_empty() {
        let map_dir = dir.join(MAP_DIR);
        std::fs::create_dir_all(&map_dir).map_err(|e| CliError::io(&map_dir, e))?;
        for (name, env) in &envs {
            let stem = sanitize(name);
            save_environment(env, &map_dir, &stem).map_err(|e| CliError::io(&map_dir, e))?;
            written.push(map_dir.join(format!("{stem}.pgm")));
            written.push(map_dir.join(format!("{stem}.map.json")));
            maps.insert(name.clone(), format!("{MAP_DIR}/{stem}"));
        }
    }
    let file = DatasetFile {
        spec,
        maps,
        train,
        val,
        test,
    };
    let path = dir.join(DATASET_FILE);
    crate::manifest::write_json(&path, &file)?;
    written.push(path);
    Ok(written)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn read(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| CliError::format(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut envs: BTreeMap<&str, Arc<Environment>> = BTreeMap::new();
    for (name, stem) in &file.maps {
        let stem_path = base.join(stem);
        let dir = stem_path.parent().unwrap_or(base);
        let file_stem = stem_path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::format(path, format!("bad map stem {stem:?}")))?;
        let env = load_environment(dir, file_stem).map_err(|e| CliError::io(&stem_path, e))?;
        envs.insert(name, Arc::new(env));
    }
    let open = Arc::new(Environment::open());
    let cases = |entries: &[Entry]| -> Result<Vec<Case>> {
        entries
            .iter()
            .map(|e| {
                let env = match &e.env {
                    Some(n) => Arc::clone(envs.get(n.as_str()).ok_or_else(|| {
                        CliError::format(path, format!("sample {} names unknown map {n:?}", e.sample.id))
                    })?),
                    None => Arc::clone(&open),
                };
                Ok(Case::new(e.sample.clone(), env))
            })
            .collect()
    };
    Ok(Dataset {
        spec: file.spec,
        train: cases(&file.train)?,
        val: cases(&file.val)?,
        test: cases(&file.test)?,
    })
}

/// Round-robin split: index `i` goes to test when `(i + 1) % test_every == 0`,
/// otherwise to validation on the same rule over the remainder.
pub fn split_round_robin<T>(items: Vec<T>, test_every: usize, val_every: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let mut rest = 0usize;
    for (i, item) in items.into_iter().enumerate() {
        if test_every > 0 && (i + 1) % test_every == 0 {
            test.push(item);
            continue;
        }
        rest += 1;
        if val_every > 0 && rest % val_every == 0 {
            val.push(item);
        } else {
            train.push(item);
        }
    }
    (train, val, test)
}
