use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Whole-sequence 8:1:1 partition of a corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn assignment(&self, id: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|&s| self.get(s).iter().any(|x| x == id))
    }
}

/// Shuffles ids with a seeded ChaCha stream and cuts them 8:1:1.
///
/// Validation and test each get `round(n / 10)` ids and train gets the rest,
/// so corpora with fewer than five items go entirely to train.
pub fn split_corpus<S: AsRef<str>>(ids: &[S], seed: u64) -> Result<CorpusSplit, DataError> {
    if ids.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    let mut shuffled: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let tenth = (n as f64 / 10.0).round() as usize;
    let test = shuffled.split_off(n - tenth);
    let validation = shuffled.split_off(n - 2 * tenth);
    Ok(CorpusSplit {
        train: shuffled,
        validation,
        test,
    })
}

/// `<split>\t<relative path>` per line.
pub fn write_manifest(split: &CorpusSplit) -> String {
    let mut out = String::new();
    for s in Split::ALL {
        for id in split.get(s) {
            out.push_str(s.as_str());
            out.push('\t');
            out.push_str(id);
            out.push('\n');
        }
    }
    out
}

pub fn read_manifest(text: &str) -> Result<CorpusSplit, DataError> {
    let mut split = CorpusSplit::default();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (tag, path) = line.split_once('\t').ok_or_else(|| DataError::Manifest {
            line: i + 1,
            reason: "expected `<split>\\t<path>`".into(),
        })?;
        let target = match tag.parse::<Split>().map_err(|reason| DataError::Manifest { line: i + 1, reason })? {
            Split::Train => &mut split.train,
            Split::Validation => &mut split.validation,
            Split::Test => &mut split.test,
        };
        target.push(path.to_string());
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("piece_{i:04}.mid")).collect()
    }

    #[test]
    fn ten_sequences_split_8_1_1() {
        let s = split_corpus(&ids(10), 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn full_corpus_sizes() {
        let s = split_corpus(&ids(1400), 0).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (1120, 140, 140));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = split_corpus(&ids(50), 3).unwrap();
        assert_eq!(a, split_corpus(&ids(50), 3).unwrap());
        assert_ne!(a, split_corpus(&ids(50), 4).unwrap());
    }

    #[test]
    fn disjoint_and_covering() {
        let all = ids(37);
        let s = split_corpus(&all, 1).unwrap();
        let mut joined: Vec<String> = Split::ALL.iter().flat_map(|&p| s.get(p).to_vec()).collect();
        joined.sort();
        assert_eq!(joined, all);
    }

    #[test]
    fn tiny_and_empty_corpora() {
        let s = split_corpus(&ids(3), 0).unwrap();
        assert_eq!(s.train.len(), 3);
        assert!(matches!(split_corpus::<String>(&[], 0), Err(DataError::EmptyCorpus)));
    }

    #[test]
    fn manifest_round_trip() {
        let s = split_corpus(&ids(20), 9).unwrap();
        assert_eq!(read_manifest(&write_manifest(&s)).unwrap(), s);
        assert!(read_manifest("train no-tab").is_err());
        assert!(read_manifest("dev\tx.mid").is_err());
    }
}
