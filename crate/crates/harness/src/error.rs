use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] gridid::Error),

    #[error("PCC {pcc}: {source}")]
    Pcc {
        pcc: usize,
        #[source]
        source: gridid::Error,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code: 2 configuration, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        let core = |e: &gridid::Error| match e {
            gridid::Error::Config(_) | gridid::Error::Argument(_) => 2,
            gridid::Error::Io(_) | gridid::Error::Parse { .. } => 4,
            _ => 3,
        };
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(e) | HarnessError::Pcc { source: e, .. } => core(e),
            HarnessError::Io(_) | HarnessError::Json(_) => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Core(gridid::Error::Argument("x".into())).exit_code(), 2);
        assert_eq!(
            HarnessError::Core(gridid::Error::IllConditioned { condition: 1e20 }).exit_code(),
            3
        );
        assert_eq!(
            HarnessError::Pcc {
                pcc: 1,
                source: gridid::Error::EstimationImpossible("x".into())
            }
            .exit_code(),
            3
        );
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        assert_eq!(HarnessError::Io(io).exit_code(), 4);
    }
}
