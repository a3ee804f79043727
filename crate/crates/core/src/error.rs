use std::io;

use crate::aggregate::AggregateError;
use crate::eventfmt::FormatError;
use crate::executor::ExecError;
use crate::pipeline::ExprError;
use crate::remotefs::RemoteError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Remote(#[from] RemoteError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    /// Bad flags, config files or generator parameters.
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

/// Coarse classes of failure, one per process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Io,
    UserInput,
    Corruption,
    Remote,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Io => 1,
            ErrorCategory::UserInput => 2,
            ErrorCategory::Corruption => 3,
            ErrorCategory::Remote => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Io => "io",
            ErrorCategory::UserInput => "input",
            ErrorCategory::Corruption => "corrupt",
            ErrorCategory::Remote => "remote",
        }
    }
}

fn io_category(e: &io::Error) -> ErrorCategory {
    if e.get_ref().is_some_and(|inner| inner.is::<RemoteError>()) {
        ErrorCategory::Remote
    } else {
        ErrorCategory::Io
    }
}

fn format_category(e: &FormatError) -> ErrorCategory {
    match e {
        FormatError::Io { error, .. } => io_category(error),
        FormatError::Expr(_)
        | FormatError::EmptyBranchName
        | FormatError::DuplicateBranch(_)
        | FormatError::UnknownBranch(_)
        | FormatError::EmptyKeepList
        | FormatError::RowArity { .. }
        | FormatError::RowType { .. } => ErrorCategory::UserInput,
        e if e.is_corruption() => ErrorCategory::Corruption,
        _ => ErrorCategory::Io,
    }
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Format(e) => format_category(e),
            Error::Expr(_) | Error::Aggregate(_) | Error::Usage(_) => ErrorCategory::UserInput,
            Error::Remote(RemoteError::InvalidUrl(_)) => ErrorCategory::UserInput,
            Error::Remote(_) => ErrorCategory::Remote,
            Error::Exec(ExecError::TaskFailed { source, .. }) => source.category(),
            Error::Exec(_) => ErrorCategory::UserInput,
            Error::Io { source, .. } => io_category(source),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::remotefs::Status;

    #[test]
    fn categories() {
        assert_eq!(Error::from(FormatError::BadMagic).category(), ErrorCategory::Corruption);
        assert_eq!(Error::from(FormatError::UnknownBranch("x".into())).category(), ErrorCategory::UserInput);
        assert_eq!(Error::from(ExprError::UnknownField("x".into())).category().exit_code(), 2);
        let remote = RemoteError::Status {
            status: Status::NotFound,
            message: String::new(),
        };
        let wrapped = FormatError::io("ntx://h:1/a", remote.into_io());
        assert_eq!(Error::from(wrapped).category().exit_code(), 4);
        let plain = FormatError::io("a.ntf", io::Error::from(io::ErrorKind::NotFound));
        assert_eq!(Error::from(plain).category().exit_code(), 1);
    }
}
