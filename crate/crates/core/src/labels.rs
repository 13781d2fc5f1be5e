//! The closed set of vehicle classes and label-text normalization.
//!
//! Twelve canonical classes cover eleven truck body configurations plus
//! passenger vehicles. Generative backends return free text, so
//! normalization folds case, trims clutter, and consults an alias table
//! before giving up and marking the text unparseable.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::HashMap;
use thiserror::Error;

/// Canonical vehicle classes, declared in canonical order. The derived
/// `Ord` therefore *is* the canonical order, which doubles as the
/// deterministic tie-break for score argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    AutoTransporter,
    Bobtail,
    PlatformSu,
    TankTank,
    Container,
    DumpTankSemi,
    EnclosedVanSemi,
    EnclosedVanSu,
    LowBoyPlatform,
    PassengerVehicle,
    PickupUtilityService,
    PlatformSemi,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 12] = [
        ClassLabel::AutoTransporter,
        ClassLabel::Bobtail,
        ClassLabel::PlatformSu,
        ClassLabel::TankTank,
        ClassLabel::Container,
        ClassLabel::DumpTankSemi,
        ClassLabel::EnclosedVanSemi,
        ClassLabel::EnclosedVanSu,
        ClassLabel::LowBoyPlatform,
        ClassLabel::PassengerVehicle,
        ClassLabel::PickupUtilityService,
        ClassLabel::PlatformSemi,
    ];

    /// Canonical spelling.
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassLabel::AutoTransporter => "Auto Transporter",
            ClassLabel::Bobtail => "Bobtail",
            ClassLabel::PlatformSu => "Platform (SU)",
            ClassLabel::TankTank => "Tank Tank",
            ClassLabel::Container => "Container",
            ClassLabel::DumpTankSemi => "Dump Tank (Semi)",
            ClassLabel::EnclosedVanSemi => "Enclosed Van (Semi)",
            ClassLabel::EnclosedVanSu => "Enclosed Van (SU)",
            ClassLabel::LowBoyPlatform => "Low Boy Platform",
            ClassLabel::PassengerVehicle => "Passenger Vehicle",
            ClassLabel::PickupUtilityService => "Pickup/Utility/Service",
            ClassLabel::PlatformSemi => "Platform (Semi)",
        }
    }

    /// Position in canonical order.
    pub fn canonical_index(&self) -> usize {
        Self::ALL.iter().position(|l| l == self).expect("closed set")
    }

    /// One-phrase gloss for prompt instructions.
    pub fn gloss(&self) -> &'static str {
        match self {
            ClassLabel::AutoTransporter => "a truck carrying automobiles on open racks",
            ClassLabel::Bobtail => "a tractor unit traveling without any trailer",
            ClassLabel::PlatformSu => "a single-unit truck with a flat open platform bed",
            ClassLabel::TankTank => "a tank truck pulling an additional tank trailer",
            ClassLabel::Container => "a truck carrying an intermodal shipping container",
            ClassLabel::DumpTankSemi => "a semi-trailer dump or tank-bodied hauler",
            ClassLabel::EnclosedVanSemi => "a tractor pulling an enclosed van semi-trailer",
            ClassLabel::EnclosedVanSu => "a single-unit truck with an enclosed van body",
            ClassLabel::LowBoyPlatform => "a low-deck platform trailer for tall equipment",
            ClassLabel::PassengerVehicle => "a passenger car, SUV, or light van",
            ClassLabel::PickupUtilityService => "a pickup, utility, or service truck, with or without a small trailer",
            ClassLabel::PlatformSemi => "a semi-trailer with a flat open platform bed",
        }
    }
}

impl std::fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        normalize_label(&text)
            .ok_or_else(|| D::Error::custom(format!("unknown class label: {text:?}")))
    }
}

/// Lowercases and collapses runs of whitespace so cosmetic differences
/// cannot defeat a match.
fn fold(text: &str) -> String {
    text.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Strips leading/trailing whitespace, quotes, and sentence punctuation.
/// Parentheses survive because canonical labels contain them.
fn trim_clutter(text: &str) -> &str {
    text.trim_matches(|c: char| {
        c.is_whitespace() || matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '"' | '\'' | '`' | '*')
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum AliasError {
    #[error("alias line {line} is missing the '->' separator: {text:?}")]
    MissingSeparator { line: usize, text: String },
    #[error("alias line {line} maps to unknown canonical label {text:?}")]
    UnknownCanonical { line: usize, text: String },
}

/// Case-folded alias strings mapped onto canonical labels. The canonical
/// spellings themselves always match, table or no table.
#[derive(Debug, Clone)]
pub struct AliasTable {
    entries: HashMap<String, ClassLabel>,
}

impl AliasTable {
    pub fn empty() -> Self {
        Self {
            entries: HashMap::new(),
        }
    }

    /// Built-in aliases for phrasings backends actually produce.
    pub fn builtin() -> Self {
        let mut table = Self::empty();
        let pairs: &[(&str, ClassLabel)] = &[
            ("car carrier", ClassLabel::AutoTransporter),
            ("auto carrier", ClassLabel::AutoTransporter),
            ("vehicle transporter", ClassLabel::AutoTransporter),
            ("tractor only", ClassLabel::Bobtail),
            ("bobtail tractor", ClassLabel::Bobtail),
            ("single-unit platform", ClassLabel::PlatformSu),
            ("platform su", ClassLabel::PlatformSu),
            ("flatbed (su)", ClassLabel::PlatformSu),
            ("tanker with tank trailer", ClassLabel::TankTank),
            ("tank truck with tank trailer", ClassLabel::TankTank),
            ("container truck", ClassLabel::Container),
            ("container chassis", ClassLabel::Container),
            ("dump tank semi", ClassLabel::DumpTankSemi),
            ("semi dump", ClassLabel::DumpTankSemi),
            ("semi-trailer enclosed van", ClassLabel::EnclosedVanSemi),
            ("enclosed van semi", ClassLabel::EnclosedVanSemi),
            ("single-unit enclosed van", ClassLabel::EnclosedVanSu),
            ("enclosed van su", ClassLabel::EnclosedVanSu),
            ("box truck", ClassLabel::EnclosedVanSu),
            ("lowboy", ClassLabel::LowBoyPlatform),
            ("low boy", ClassLabel::LowBoyPlatform),
            ("lowboy platform", ClassLabel::LowBoyPlatform),
            ("passenger car", ClassLabel::PassengerVehicle),
            ("car", ClassLabel::PassengerVehicle),
            ("sedan", ClassLabel::PassengerVehicle),
            ("pickup", ClassLabel::PickupUtilityService),
            ("pickup truck", ClassLabel::PickupUtilityService),
            ("utility truck", ClassLabel::PickupUtilityService),
            ("service truck", ClassLabel::PickupUtilityService),
            ("semi-trailer platform", ClassLabel::PlatformSemi),
            ("platform semi", ClassLabel::PlatformSemi),
            ("flatbed (semi)", ClassLabel::PlatformSemi),
        ];
        for (alias, label) in pairs {
            table.entries.insert(fold(alias), *label);
        }
        table
    }

    /// Parses "alias -> canonical" lines; '#' comments and blank lines
    /// are skipped. Later lines override earlier ones.
    pub fn parse(text: &str) -> Result<Self, AliasError> {
        let mut table = Self::builtin();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (alias, canonical) = line
                .split_once("->")
                .or_else(|| line.split_once('\u{2192}'))
                .ok_or_else(|| AliasError::MissingSeparator {
                    line: idx + 1,
                    text: line.to_string(),
                })?;
            let canonical = canonical.trim();
            let label = canonical_match(canonical).ok_or_else(|| AliasError::UnknownCanonical {
                line: idx + 1,
                text: canonical.to_string(),
            })?;
            table.entries.insert(fold(alias.trim()), label);
        }
        Ok(table)
    }

    /// Total normalization: canonical spellings first, then aliases.
    pub fn normalize(&self, raw: &str) -> Option<ClassLabel> {
        let cleaned = trim_clutter(raw);
        if cleaned.is_empty() {
            return None;
        }
        if let Some(label) = canonical_match(cleaned) {
            return Some(label);
        }
        self.entries.get(&fold(cleaned)).copied()
    }
}

fn canonical_match(text: &str) -> Option<ClassLabel> {
    let folded = fold(text);
    ClassLabel::ALL
        .iter()
        .find(|l| fold(l.as_str()) == folded)
        .copied()
}

/// Normalizes raw model text against the canonical set and the built-in
/// aliases; None marks the text unparseable.
pub fn normalize_label(raw: &str) -> Option<ClassLabel> {
    AliasTable::builtin().normalize(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_labels_in_canonical_order() {
        assert_eq!(ClassLabel::ALL.len(), 12);
        assert_eq!(ClassLabel::ALL[0].as_str(), "Auto Transporter");
        assert_eq!(ClassLabel::ALL[11].as_str(), "Platform (Semi)");
        for (i, label) in ClassLabel::ALL.iter().enumerate() {
            assert_eq!(label.canonical_index(), i);
        }
        // Derived Ord must agree with canonical order.
        let mut sorted = ClassLabel::ALL;
        sorted.sort();
        assert_eq!(sorted, ClassLabel::ALL);
    }

    #[test]
    fn every_canonical_spelling_round_trips() {
        for label in ClassLabel::ALL {
            assert_eq!(normalize_label(label.as_str()), Some(label));
        }
    }

    #[test]
    fn clutter_and_case_are_forgiven() {
        assert_eq!(normalize_label(" bobtail.\n"), Some(ClassLabel::Bobtail));
        assert_eq!(
            normalize_label("Enclosed van (semi)"),
            Some(ClassLabel::EnclosedVanSemi)
        );
        assert_eq!(
            normalize_label("\"Passenger  Vehicle\""),
            Some(ClassLabel::PassengerVehicle)
        );
        assert_eq!(
            normalize_label("PICKUP/UTILITY/SERVICE"),
            Some(ClassLabel::PickupUtilityService)
        );
    }

    #[test]
    fn gibberish_is_unparseable() {
        assert_eq!(normalize_label("a large truck"), None);
        assert_eq!(normalize_label(""), None);
        assert_eq!(normalize_label("   ...   "), None);
    }

    #[test]
    fn builtin_aliases_resolve() {
        assert_eq!(
            normalize_label("semi-trailer enclosed van"),
            Some(ClassLabel::EnclosedVanSemi)
        );
        assert_eq!(normalize_label("box truck"), Some(ClassLabel::EnclosedVanSu));
        assert_eq!(normalize_label("Lowboy"), Some(ClassLabel::LowBoyPlatform));
    }

    #[test]
    fn alias_files_extend_the_table() {
        let table = AliasTable::parse(
            "# project-specific aliases\n\
             eighteen wheeler -> Enclosed Van (Semi)\n\
             \n\
             work van -> Enclosed Van (SU)\n",
        )
        .unwrap();
        assert_eq!(
            table.normalize("Eighteen Wheeler"),
            Some(ClassLabel::EnclosedVanSemi)
        );
        assert_eq!(table.normalize("work van"), Some(ClassLabel::EnclosedVanSu));
        // Built-ins still present.
        assert_eq!(table.normalize("car"), Some(ClassLabel::PassengerVehicle));
    }

    #[test]
    fn alias_parse_errors_name_the_line() {
        assert_eq!(
            AliasTable::parse("no separator here").unwrap_err(),
            AliasError::MissingSeparator {
                line: 1,
                text: "no separator here".to_string()
            }
        );
        assert_eq!(
            AliasTable::parse("thing -> Not A Class").unwrap_err(),
            AliasError::UnknownCanonical {
                line: 1,
                text: "Not A Class".to_string()
            }
        );
    }

    #[test]
    fn serde_round_trip_uses_canonical_strings() {
        for label in ClassLabel::ALL {
            let json = serde_json::to_string(&label).unwrap();
            assert_eq!(json, format!("\"{}\"", label.as_str()));
            let back: ClassLabel = serde_json::from_str(&json).unwrap();
            assert_eq!(back, label);
        }
        assert!(serde_json::from_str::<ClassLabel>("\"mystery\"").is_err());
    }
}
