//! Building blocks of the `ranp` binary: run records, the comparison report,
//! the self-describing slim network file and plain-text tables.

pub mod record;
pub mod report;
pub mod slim;
pub mod table;
