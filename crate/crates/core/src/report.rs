use serde::Serialize;

/// How a check reached its verdict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckKind {
    /// Decided exactly (up to floating-point tolerance).
    Exact,
    /// True by the form of the object.
    Structural,
    /// Tested on a finite random sample only.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub passed: bool,
    pub kind: CheckKind,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub entries: Vec<CheckEntry>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, passed: bool, kind: CheckKind, detail: impl Into<String>) {
        self.entries.push(CheckEntry {
            name: name.into(),
            passed,
            kind,
            detail: detail.into(),
        });
    }

    /// Appends `other`'s entries with `prefix` prepended to their names.
    pub fn absorb(&mut self, prefix: &str, other: ValidationReport) {
        for mut e in other.entries {
            e.name = format!("{prefix}{}", e.name);
            self.entries.push(e);
        }
    }

    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}
