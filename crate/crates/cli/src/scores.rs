use std::fmt::Write as _;
use std::path::Path;

use maxgain::Error;
use serde::Deserialize;

/// One row of a fold score file (`fold,accuracy,loss`).
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub accuracy: f64,
    pub loss: f64,
}

impl FoldScore {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "loss" => Some(self.loss),
            _ => None,
        }
    }
}

pub fn write_scores(scores: &[FoldScore]) -> String {
    let mut out = String::from("fold,accuracy,loss\n");
    for s in scores {
        let _ = writeln!(out, "{},{},{}", s.fold, s.accuracy, s.loss);
    }
    out
}

pub fn read_scores(path: &Path) -> Result<Vec<FoldScore>, Error> {
    let format = |msg: String| Error::Format { path: path.into(), msg };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io { path: path.into(), source },
            other => format(format!("{other:?}")),
        })?;
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<FoldScore>, _>>()
        .map_err(|e| format(e.to_string()))?;
    if rows.is_empty() {
        return Err(Error::EmptySample(format!("{} lists no folds", path.display())));
    }
    Ok(rows)
}
