//! Bearer-token credentials.
//!
//! The credential file has one `token,operator_id,role` line per token.
//! Blank lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type OperatorId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Admin,
    Operator,
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ADMIN" => Ok(Role::Admin),
            "OPERATOR" => Ok(Role::Operator),
            other => Err(format!("unknown role {other:?}")),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Admin => "ADMIN",
            Role::Operator => "OPERATOR",
        })
    }
}

/// An authenticated caller.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Actor {
    pub operator_id: OperatorId,
    pub role: Role,
}

impl Actor {
    pub fn admin(id: &str) -> Self {
        Actor {
            operator_id: id.to_string(),
            role: Role::Admin,
        }
    }

    pub fn operator(id: &str) -> Self {
        Actor {
            operator_id: id.to_string(),
            role: Role::Operator,
        }
    }

    pub fn is_admin(&self) -> bool {
        self.role == Role::Admin
    }
}

#[derive(Debug, Error)]
pub enum CredentialError {
    #[error("credential line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("reading credentials: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default)]
pub struct Credentials {
    tokens: HashMap<String, Actor>,
}

impl Credentials {
    pub fn parse(text: &str) -> Result<Self, CredentialError> {
        let mut tokens = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let invalid = |reason: String| CredentialError::Invalid {
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [token, operator_id, role] = fields[..] else {
                return Err(invalid(format!("expected 3 fields, found {}", fields.len())));
            };
            if token.is_empty() || operator_id.is_empty() {
                return Err(invalid("empty token or operator id".into()));
            }
            let role = role.parse::<Role>().map_err(invalid)?;
            let actor = Actor {
                operator_id: operator_id.to_string(),
                role,
            };
            if tokens.insert(token.to_string(), actor).is_some() {
                return Err(invalid(format!("duplicate token {token:?}")));
            }
        }
        Ok(Credentials { tokens })
    }

    pub fn load(path: &Path) -> Result<Self, CredentialError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, token: &str, actor: Actor) {
        self.tokens.insert(token.to_string(), actor);
    }

    pub fn resolve(&self, token: &str) -> Option<&Actor> {
        self.tokens.get(token)
    }
}
