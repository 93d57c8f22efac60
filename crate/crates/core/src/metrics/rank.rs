use super::pd::PdScore;
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// One quality tier. Index 1 holds the highest PD values.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub index: usize,
    pub members: Vec<PdScore>,
}

impl Split {
    pub fn mean_pd(&self) -> f64 {
        self.members.iter().map(|s| s.value).sum::<f64>() / self.members.len() as f64
    }
}

fn worst_first(a: &PdScore, b: &PdScore) -> std::cmp::Ordering {
    b.value.total_cmp(&a.value).then_with(|| a.id.cmp(&b.id))
}

fn check_divisible(n: usize, k: usize, what: &str) -> Result<()> {
    if !n.is_multiple_of(k) || n == 0 {
        let lower = n / k * k;
        let upper = lower + k;
        let suggestion = if lower == 0 {
            format!("{upper}")
        } else {
            format!("{lower} or {upper}")
        };
        return Err(Error::Data(format!(
            "{what} has {n} samples, not divisible into {k} splits; use {suggestion}"
        )));
    }
    Ok(())
}

/// Sort by descending PD (ties by id) and cut into `k` equal splits.
///
/// With `per_class`, every class is sorted and cut on its own and split `r`
/// gathers the `r`-th cut of every class, so each split holds the same number
/// of samples per class. Scores without a class form one group.
pub fn rank_and_split(scores: &[PdScore], k: usize, per_class: bool) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 splits, got {k}")));
    }
    let mut groups: BTreeMap<Option<String>, Vec<PdScore>> = BTreeMap::new();
    if per_class {
        for s in scores {
            groups.entry(s.class.clone()).or_default().push(s.clone());
        }
    } else {
        groups.insert(None, scores.to_vec());
    }
    let mut splits: Vec<Split> = (1..=k)
        .map(|index| Split {
            index,
            members: Vec::new(),
        })
        .collect();
    for (class, mut members) in groups {
        let what = match &class {
            Some(c) if per_class => format!("class `{c}`"),
            _ => "the score set".to_string(),
        };
        check_divisible(members.len(), k, &what)?;
        members.sort_by(worst_first);
        let size = members.len() / k;
        for (split, chunk) in splits.iter_mut().zip(members.chunks(size)) {
            split.members.extend_from_slice(chunk);
        }
    }
    for s in &mut splits {
        s.members.sort_by(worst_first);
    }
    Ok(splits)
}
