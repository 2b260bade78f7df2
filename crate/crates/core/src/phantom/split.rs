//! Subject-level partitioning into train/validation/test sets or k folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    Control,
    Patient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitScheme {
    /// Train/validation/test in proportion 12:2:8.
    PaperSplit,
    KFold(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    TrainValTest {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    Folds(Vec<Vec<usize>>),
}

/// Splits subjects (never voxels) so each part is as class-balanced as the counts allow.
pub fn split_subjects(kinds: &[SubjectKind], scheme: SplitScheme, seed: u64) -> Result<Partition> {
    let n = kinds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut controls: Vec<usize> = (0..n).filter(|&i| kinds[i] == SubjectKind::Control).collect();
    let mut patients: Vec<usize> = (0..n).filter(|&i| kinds[i] == SubjectKind::Patient).collect();
    controls.shuffle(&mut rng);
    patients.shuffle(&mut rng);

    match scheme {
        SplitScheme::PaperSplit => {
            if n < 3 {
                return Err(Error::param(format!("paper split needs >= 3 subjects, got {n}")));
            }
            let train_n = ((n as f64 * 12.0 / 22.0).round() as usize).clamp(1, n - 2);
            let val_n = ((n as f64 * 2.0 / 22.0).round() as usize).clamp(1, n - train_n - 1);
            let mut take = |count: usize| -> Result<Vec<usize>> {
                let want_controls = count / 2;
                let want_patients = count - want_controls;
                // Odd sizes favour whichever class has more subjects left.
                let (c, p) = if count % 2 == 1 && controls.len() > patients.len() {
                    (want_patients, want_controls)
                } else {
                    (want_controls, want_patients)
                };
                if c > controls.len() || p > patients.len() {
                    return Err(Error::param(format!(
                        "cannot draw a balanced group of {count} from {} controls and {} patients",
                        controls.len(),
                        patients.len()
                    )));
                }
                let mut group: Vec<usize> = controls.drain(..c).chain(patients.drain(..p)).collect();
                group.sort_unstable();
                Ok(group)
            };
            let train = take(train_n)?;
            let val = take(val_n)?;
            let mut test: Vec<usize> = controls.drain(..).chain(patients.drain(..)).collect();
            test.sort_unstable();
            if test.is_empty() {
                return Err(Error::param("paper split left no test subjects"));
            }
            Ok(Partition::TrainValTest { train, val, test })
        }
        SplitScheme::KFold(k) => {
            if k < 2 || n < k {
                return Err(Error::param(format!("k-fold needs 2 <= k <= n, got k={k}, n={n}")));
            }
            let mut folds = vec![Vec::new(); k];
            for (i, s) in controls.iter().chain(&patients).enumerate() {
                folds[i % k].push(*s);
            }
            for f in &mut folds {
                f.sort_unstable();
            }
            Ok(Partition::Folds(folds))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_cohort() -> Vec<SubjectKind> {
        let mut v = vec![SubjectKind::Control; 10];
        v.extend(vec![SubjectKind::Patient; 12]);
        v
    }

    fn count(kinds: &[SubjectKind], idx: &[usize], kind: SubjectKind) -> usize {
        idx.iter().filter(|&&i| kinds[i] == kind).count()
    }

    #[test]
    fn paper_split_counts() {
        let kinds = paper_cohort();
        let Partition::TrainValTest { train, val, test } = split_subjects(&kinds, SplitScheme::PaperSplit, 1).unwrap()
        else {
            panic!("expected train/val/test");
        };
        assert_eq!((train.len(), val.len(), test.len()), (12, 2, 8));
        assert_eq!(count(&kinds, &train, SubjectKind::Control), 6);
        assert_eq!(count(&kinds, &val, SubjectKind::Control), 1);
        assert_eq!(count(&kinds, &test, SubjectKind::Control), 3);
        let mut all: Vec<usize> = train.iter().chain(&val).chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..22).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_six_of_twelve() {
        let kinds: Vec<SubjectKind> = (0..12)
            .map(|i| if i % 2 == 0 { SubjectKind::Control } else { SubjectKind::Patient })
            .collect();
        let Partition::Folds(folds) = split_subjects(&kinds, SplitScheme::KFold(6), 3).unwrap() else {
            panic!("expected folds");
        };
        assert_eq!(folds.len(), 6);
        assert!(folds.iter().all(|f| f.len() == 2));
        assert!(folds
            .iter()
            .all(|f| count(&kinds, f, SubjectKind::Control) == 1));
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_partition() {
        let kinds = paper_cohort();
        assert_eq!(
            split_subjects(&kinds, SplitScheme::PaperSplit, 5).unwrap(),
            split_subjects(&kinds, SplitScheme::PaperSplit, 5).unwrap()
        );
    }

    #[test]
    fn infeasible_requests() {
        assert!(split_subjects(&[SubjectKind::Control; 2], SplitScheme::PaperSplit, 0).is_err());
        assert!(split_subjects(&[SubjectKind::Control; 3], SplitScheme::KFold(4), 0).is_err());
        // All controls: a balanced training group of 12 cannot be drawn.
        assert!(split_subjects(&[SubjectKind::Control; 22], SplitScheme::PaperSplit, 0).is_err());
    }
}
