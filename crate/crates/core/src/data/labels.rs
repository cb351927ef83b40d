use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Behavioral state of an individual at one timestep.
///
/// The fine alphabet has seven motor states plus `Unknown`; the coarse
/// alphabet has four states and is only produced by [`map_labels`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateLabel {
    Forward,
    ForwardSlowing,
    Reverse1,
    Reverse2,
    SustainedReverse,
    DorsalTurn,
    VentralTurn,
    Unknown,
    Forward4,
    Reverse4,
    DorsalTurn4,
    VentralTurn4,
}

use StateLabel::*;

impl StateLabel {
    pub const FINE: [StateLabel; 7] = [
        Forward,
        ForwardSlowing,
        Reverse1,
        Reverse2,
        SustainedReverse,
        DorsalTurn,
        VentralTurn,
    ];
    pub const COARSE: [StateLabel; 4] = [Forward4, Reverse4, DorsalTurn4, VentralTurn4];

    pub fn is_unknown(self) -> bool {
        self == Unknown
    }

    pub fn is_coarse(self) -> bool {
        Self::COARSE.contains(&self)
    }

    pub fn is_fine(self) -> bool {
        !self.is_coarse()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Forward => "forward",
            ForwardSlowing => "forward_slowing",
            Reverse1 => "reverse_1",
            Reverse2 => "reverse_2",
            SustainedReverse => "sustained_reverse",
            DorsalTurn => "dorsal_turn",
            VentralTurn => "ventral_turn",
            Unknown => "unknown",
            Forward4 => "forward_4",
            Reverse4 => "reverse_4",
            DorsalTurn4 => "dorsal_turn_4",
            VentralTurn4 => "ventral_turn_4",
        }
    }
}

impl fmt::Display for StateLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let all = Self::FINE
            .iter()
            .chain(Self::COARSE.iter())
            .chain(std::iter::once(&Unknown));
        all.copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown state label `{s}`"))
    }
}

/// Collapses the seven fine states onto the four coarse ones.
/// Reversals merge into `Reverse4`, forward crawling and slowing into
/// `Forward4`; `Unknown` passes through.
pub fn map_label(label: StateLabel) -> Result<StateLabel> {
    Ok(match label {
        Forward | ForwardSlowing => Forward4,
        Reverse1 | Reverse2 | SustainedReverse => Reverse4,
        DorsalTurn => DorsalTurn4,
        VentralTurn => VentralTurn4,
        Unknown => Unknown,
        coarse => {
            return Err(Error::InvalidRecording(format!(
                "label `{coarse}` is already coarse"
            )))
        }
    })
}

pub fn map_labels(labels: &[StateLabel]) -> Result<Vec<StateLabel>> {
    labels.iter().map(|&l| map_label(l)).collect()
}

/// Which label alphabet a classification task predicts over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScheme {
    /// Forward vs reverse crawling; turns are masked out.
    Binary,
    /// The seven fine states.
    Fine7,
    /// The four coarse states.
    Coarse4,
}

impl LabelScheme {
    pub fn n_states(self) -> usize {
        match self {
            LabelScheme::Binary => 2,
            LabelScheme::Fine7 => 7,
            LabelScheme::Coarse4 => 4,
        }
    }

    /// Class index of a label under this scheme; `None` means the timestep
    /// is masked (unknown, or outside the scheme).
    pub fn class_of(self, label: StateLabel) -> Option<usize> {
        match self {
            LabelScheme::Fine7 => StateLabel::FINE.iter().position(|&l| l == label),
            LabelScheme::Coarse4 => {
                let coarse = if label.is_coarse() {
                    label
                } else {
                    map_label(label).ok()?
                };
                StateLabel::COARSE.iter().position(|&l| l == coarse)
            }
            LabelScheme::Binary => {
                let coarse = if label.is_coarse() {
                    label
                } else {
                    map_label(label).ok()?
                };
                match coarse {
                    Forward4 => Some(0),
                    Reverse4 => Some(1),
                    _ => None,
                }
            }
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            LabelScheme::Binary => vec!["forward", "reverse"],
            LabelScheme::Fine7 => StateLabel::FINE.iter().map(|l| l.as_str()).collect(),
            LabelScheme::Coarse4 => StateLabel::COARSE.iter().map(|l| l.as_str()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_mapping_table() {
        let expect = [
            (Forward, Forward4),
            (ForwardSlowing, Forward4),
            (Reverse1, Reverse4),
            (Reverse2, Reverse4),
            (SustainedReverse, Reverse4),
            (DorsalTurn, DorsalTurn4),
            (VentralTurn, VentralTurn4),
            (Unknown, Unknown),
        ];
        for (fine, coarse) in expect {
            assert_eq!(map_label(fine).unwrap(), coarse, "{fine}");
        }
    }

    #[test]
    fn coarse_input_rejected() {
        assert!(map_label(Reverse4).is_err());
        assert!(map_labels(&[Forward, Forward4]).is_err());
    }

    #[test]
    fn mapping_is_surjective() {
        let mut image: Vec<_> = StateLabel::FINE
            .iter()
            .chain(std::iter::once(&Unknown))
            .map(|&l| map_label(l).unwrap())
            .collect();
        image.sort();
        image.dedup();
        assert_eq!(image.len(), 5);
    }

    #[test]
    fn label_strings_round_trip() {
        for l in StateLabel::FINE.iter().chain(StateLabel::COARSE.iter()) {
            assert_eq!(l.as_str().parse::<StateLabel>().unwrap(), *l);
        }
        assert!("crawl".parse::<StateLabel>().is_err());
    }

    #[test]
    fn binary_scheme_masks_turns() {
        assert_eq!(LabelScheme::Binary.class_of(Reverse2), Some(1));
        assert_eq!(LabelScheme::Binary.class_of(ForwardSlowing), Some(0));
        assert_eq!(LabelScheme::Binary.class_of(DorsalTurn), None);
        assert_eq!(LabelScheme::Binary.class_of(Unknown), None);
    }
}
