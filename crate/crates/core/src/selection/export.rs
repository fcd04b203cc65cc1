use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SelectionError, SubsetManifest};
use crate::dataset::{write_records, Dataset, Format};
use crate::Fingerprint;

/// Metadata written next to an exported subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSidecar {
    pub description: String,
    pub dataset_fingerprint: Fingerprint,
    pub format: Format,
    #[serde(flatten)]
    pub manifest: SubsetManifest,
}

/// `subset.jsonl` → `subset.jsonl.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Write the manifest's records, unchanged from the source file, in manifest
/// order, plus a metadata sidecar.
pub fn export_subset(
    manifest: &SubsetManifest,
    dataset: &Dataset,
    path: &Path,
    format: Format,
) -> Result<ExportSidecar, SelectionError> {
    let records = manifest
        .candidate_ids
        .iter()
        .map(|id| dataset.get(id).ok_or_else(|| SelectionError::UnknownId(id.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    write_records(path, format, records)?;
    let sidecar = ExportSidecar {
        description: manifest.predicate.to_string(),
        dataset_fingerprint: dataset.fingerprint(),
        format,
        manifest: manifest.clone(),
    };
    let meta = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&meta, text + "\n").map_err(|source| SelectionError::Io { path: meta, source })?;
    log::info!("exported {} records to {}", manifest.count, path.display());
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{load_dataset, ExampleId, InstructionExample, LoadOptions};
    use crate::selection::Predicate;

    fn manifest(ids: &[usize]) -> SubsetManifest {
        SubsetManifest {
            predicate: Predicate::TopK { k: ids.len() },
            source_table_fingerprint: Fingerprint::of("t"),
            count: ids.len(),
            candidate_ids: ids.iter().map(|&i| ExampleId::from(i)).collect(),
        }
    }

    fn dataset(n: usize) -> Dataset {
        Dataset::from_examples(
            (0..n)
                .map(|i| InstructionExample::new(ExampleId::from(i), format!("i{i}"), None, format!("o{i}")))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn exports_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subset.jsonl");
        export_subset(&manifest(&[4, 0, 2]), &dataset(5), &path, Format::Jsonl).unwrap();
        let back = load_dataset(&path, Format::Jsonl, &LoadOptions::default()).unwrap();
        let instr: Vec<_> = back.examples().iter().map(|e| e.instruction.as_str()).collect();
        assert_eq!(instr, ["i4", "i0", "i2"]);
        let meta: ExportSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.manifest.count, 3);
    }

    #[test]
    fn empty_manifest_and_array_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        export_subset(&manifest(&[]), &dataset(5), &path, Format::JsonArray).unwrap();
        assert!(load_dataset(&path, Format::JsonArray, &LoadOptions::default()).unwrap().is_empty());
        let meta: ExportSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.manifest.count, 0);
    }

    #[test]
    fn unknown_id_and_unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = export_subset(&manifest(&[9]), &dataset(5), &dir.path().join("x.jsonl"), Format::Jsonl).unwrap_err();
        assert!(matches!(err, SelectionError::UnknownId(ref id) if id == "9"));
        let err = export_subset(&manifest(&[1]), &dataset(5), Path::new("/nonexistent/dir/x.jsonl"), Format::Jsonl)
            .unwrap_err();
        assert!(matches!(err, SelectionError::Dataset(_)));
    }
}
