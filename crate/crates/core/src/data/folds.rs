use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{Error, Result, Rng};

const FORMAT: &str = "maxgain-folds";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    pub fn split(&self, data: &Dataset) -> Result<(Dataset, Dataset)> {
        Ok((data.subset(&self.train)?, data.subset(&self.test)?))
    }
}

/// Predefined folds: every index belongs to at most one train or test list
/// anywhere in the protocol, so no two folds share training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldProtocol {
    format: String,
    version: u32,
    /// Size of the dataset the indices refer to.
    pub n: usize,
    pub folds: Vec<Fold>,
}

/// One seeded shuffle of `0..n`, cut into `k` consecutive folds, each split
/// into a leading train and trailing test segment. Leftover indices are unused.
pub fn make_folds(
    n: usize,
    k: usize,
    train_per_fold: usize,
    test_per_fold: usize,
    rng: &mut Rng,
) -> Result<FoldProtocol> {
    let per = train_per_fold + test_per_fold;
    if k == 0 || train_per_fold == 0 || test_per_fold == 0 {
        return Err(Error::Config("fold count and segment sizes must be positive".into()));
    }
    if k.checked_mul(per).is_none_or(|need| need > n) {
        return Err(Error::Size(format!(
            "{k} folds of {train_per_fold}+{test_per_fold} need more than {n} instances"
        )));
    }
    let order = rng.permutation(n);
    let folds = order
        .chunks(per)
        .take(k)
        .map(|c| Fold {
            train: c[..train_per_fold].to_vec(),
            test: c[train_per_fold..].to_vec(),
        })
        .collect();
    let protocol = FoldProtocol {
        format: FORMAT.into(),
        version: VERSION,
        n,
        folds,
    };
    protocol.validate()?;
    Ok(protocol)
}

impl FoldProtocol {
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    /// Checks every index is in range and used at most once.
    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Consistency(format!(
                "unsupported fold file {} v{}",
                self.format, self.version
            )));
        }
        let mut owner = vec![false; self.n];
        for (f, fold) in self.folds.iter().enumerate() {
            if fold.train.is_empty() || fold.test.is_empty() {
                return Err(Error::Consistency(format!("fold {f} has an empty segment")));
            }
            for &i in fold.train.iter().chain(&fold.test) {
                match owner.get_mut(i) {
                    None => return Err(Error::Consistency(format!("fold {f}: index {i} >= n={}", self.n))),
                    Some(seen) if *seen => {
                        return Err(Error::Consistency(format!("fold {f}: index {i} used twice")))
                    }
                    Some(seen) => *seen = true,
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let p: FoldProtocol =
            serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}
