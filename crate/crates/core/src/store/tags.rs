use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_file};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TaskAssignment {
    pub task: String,
    pub group: String,
}

/// Task and group (domain) of every query and document id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskTag {
    assignment: BTreeMap<String, TaskAssignment>,
}

impl TaskTag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn assign(&mut self, id: impl Into<String>, task: impl Into<String>, group: impl Into<String>) -> Result<()> {
        let id = id.into();
        if self.assignment.contains_key(&id) {
            return Err(Error::invalid(format!("id {id} already has a task assignment")));
        }
        self.assignment.insert(
            id,
            TaskAssignment {
                task: task.into(),
                group: group.into(),
            },
        );
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&TaskAssignment> {
        self.assignment.get(id)
    }

    pub fn require(&self, id: &str) -> Result<&TaskAssignment> {
        self.get(id).ok_or_else(|| Error::MissingId {
            kind: "task tag",
            id: id.to_string(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TaskAssignment)> + '_ {
        self.assignment.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

/// Parses `id task group` lines.
pub fn load_tags(path: &Path) -> Result<TaskTag> {
    let text = read_text(path)?;
    let mut tags = TaskTag::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        let parse = |message: String| Error::Parse {
            context: path.display().to_string(),
            line: i + 1,
            message,
        };
        if cols.len() != 3 {
            return Err(parse(format!("expected 3 columns, found {}", cols.len())));
        }
        tags.assign(cols[0], cols[1], cols[2])
            .map_err(|e| parse(e.to_string()))?;
    }
    Ok(tags)
}

pub fn write_tags(tags: &TaskTag, path: &Path) -> Result<()> {
    write_file(path, |w| {
        for (id, a) in tags.iter() {
            writeln!(w, "{id} {} {}", a.task, a.group)?;
        }
        Ok(())
    })
}
