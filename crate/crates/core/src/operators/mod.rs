//! Operators that consume arrangements: join, reduce and its specializations.

mod join;
mod reduce;
