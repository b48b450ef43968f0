//! Small file helpers shared by the subcommands.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gmot_core::io::MotRow;
use gmot_core::scenesim::SceneData;

/// Temp-file-then-rename write for text outputs (config echoes, reports),
/// matching the atomicity of the track writer.
pub fn write_text_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// `<path>.suffix` without replacing the existing extension.
pub fn with_appended_extension(path: &Path, suffix: &str) -> PathBuf {
    let mut os = path.to_path_buf().into_os_string();
    os.push(".");
    os.push(suffix);
    PathBuf::from(os)
}

/// Ground-truth rows: full confidence, real visibility flags.
pub fn gt_rows(scene: &SceneData) -> Vec<MotRow> {
    scene
        .gt
        .iter()
        .map(|&(frame, id, bbox, visibility)| MotRow {
            frame,
            id: id as i64,
            bbox,
            score: 1.0,
            class_id: 1,
            visibility,
        })
        .collect()
}

/// Detection rows: anonymous ids, detector confidence.
pub fn det_rows(scene: &SceneData) -> Vec<MotRow> {
    scene
        .dets
        .iter()
        .map(|d| MotRow {
            frame: d.frame,
            id: -1,
            bbox: d.bbox,
            score: d.score,
            class_id: d.class_id,
            visibility: 1.0,
        })
        .collect()
}
